use std::collections::HashMap;

use nalgebra::{Isometry3, Point3, Rotation3, Translation3, Unit, UnitQuaternion, Vector3};

use super::{Embodiment, JointKind, Shape};
use crate::error::{Error, Result};

pub fn rpy_rotation(rpy: [f64; 3]) -> UnitQuaternion<f64> {
    UnitQuaternion::from_euler_angles(rpy[0], rpy[1], rpy[2])
}

/// Axis-aligned bounding box in the root frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    fn empty() -> Self {
        Aabb { min: [f64::INFINITY; 3], max: [f64::NEG_INFINITY; 3] }
    }

    fn include(&mut self, center: &Point3<f64>, half: [f64; 3]) {
        for i in 0..3 {
            self.min[i] = self.min[i].min(center[i] - half[i]);
            self.max[i] = self.max[i].max(center[i] + half[i]);
        }
    }

    pub fn extents(&self) -> [f64; 3] {
        [self.max[0] - self.min[0], self.max[1] - self.min[1], self.max[2] - self.min[2]]
    }
}

/// Precomputed kinematic tree of an embodiment.
#[derive(Debug, Clone)]
pub struct Kinematics {
    /// Link indices in parent-before-child order.
    order: Vec<usize>,
    /// For each link, the joint (index into `joints`) connecting it to its parent.
    parent_joint: Vec<Option<usize>>,
    parent_link: Vec<Option<usize>>,
    /// For each joint, its index in actuated order.
    actuated_index: Vec<Option<usize>>,
    joint_origin: Vec<Isometry3<f64>>,
    joint_axis: Vec<Unit<Vector3<f64>>>,
    geometry: Vec<(Isometry3<f64>, Shape)>,
    masses: Vec<f64>,
}

impl Kinematics {
    pub fn new(e: &Embodiment) -> Result<Self> {
        let n = e.links.len();
        let index: HashMap<&str, usize> =
            e.links.iter().enumerate().map(|(i, l)| (l.name.as_str(), i)).collect();
        let mut parent_joint = vec![None; n];
        let mut parent_link = vec![None; n];
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (ji, j) in e.joints.iter().enumerate() {
            let (Some(&p), Some(&c)) = (index.get(j.parent_link.as_str()), index.get(j.child_link.as_str())) else {
                return Err(Error::InvalidEmbodiment(format!("joint {} references unknown link", j.name)));
            };
            if parent_joint[c].is_some() {
                return Err(Error::InvalidEmbodiment(format!("link {} has two parents", j.child_link)));
            }
            parent_joint[c] = Some(ji);
            parent_link[c] = Some(p);
            children[p].push(c);
        }
        let roots: Vec<usize> = (0..n).filter(|&i| parent_joint[i].is_none()).collect();
        if roots.len() != 1 {
            return Err(Error::InvalidEmbodiment(format!("expected one root link, found {}", roots.len())));
        }
        let mut order = Vec::with_capacity(n);
        let mut stack = vec![roots[0]];
        while let Some(l) = stack.pop() {
            order.push(l);
            for &c in children[l].iter().rev() {
                stack.push(c);
            }
        }
        if order.len() != n {
            return Err(Error::InvalidEmbodiment("kinematic graph contains a cycle".into()));
        }
        let mut actuated_index = vec![None; e.joints.len()];
        let mut k = 0;
        for (ji, j) in e.joints.iter().enumerate() {
            if j.kind == JointKind::Revolute {
                actuated_index[ji] = Some(k);
                k += 1;
            }
        }
        let joint_origin = e
            .joints
            .iter()
            .map(|j| {
                Isometry3::from_parts(
                    Translation3::new(j.origin[0], j.origin[1], j.origin[2]),
                    rpy_rotation(j.origin_rpy),
                )
            })
            .collect();
        let joint_axis = e
            .joints
            .iter()
            .map(|j| Unit::new_normalize(Vector3::new(j.axis[0], j.axis[1], j.axis[2])))
            .collect();
        let geometry = e
            .links
            .iter()
            .map(|l| {
                let o = l.parent_frame_offset;
                (
                    Isometry3::from_parts(Translation3::new(o[0], o[1], o[2]), rpy_rotation(l.geometry_rpy)),
                    l.shape,
                )
            })
            .collect();
        Ok(Kinematics {
            order,
            parent_joint,
            parent_link,
            actuated_index,
            joint_origin,
            joint_axis,
            geometry,
            masses: e.links.iter().map(|l| l.mass).collect(),
        })
    }

    pub fn root(&self) -> usize {
        self.order[0]
    }

    pub fn parent_link(&self, link: usize) -> Option<usize> {
        self.parent_link[link]
    }

    /// Link frames in the root frame for the given actuated joint angles.
    pub fn link_poses(&self, q: &[f64]) -> Vec<Isometry3<f64>> {
        let mut poses = vec![Isometry3::identity(); self.order.len()];
        for &l in &self.order[1..] {
            let j = self.parent_joint[l].expect("non-root link has a parent joint");
            let p = self.parent_link[l].expect("non-root link has a parent link");
            let angle = self.actuated_index[j].map_or(0.0, |k| q[k]);
            let rot = UnitQuaternion::from_axis_angle(&self.joint_axis[j], angle);
            poses[l] = poses[p] * self.joint_origin[j] * Isometry3::from_parts(Translation3::identity(), rot);
        }
        poses
    }

    /// Position and axis of every joint in the root frame, indexed like `joints`.
    pub fn joint_frames(&self, poses: &[Isometry3<f64>], e: &Embodiment) -> Vec<([f64; 3], [f64; 3])> {
        let index: HashMap<&str, usize> =
            e.links.iter().enumerate().map(|(i, l)| (l.name.as_str(), i)).collect();
        e.joints
            .iter()
            .enumerate()
            .map(|(ji, j)| {
                let frame = poses[index[j.parent_link.as_str()]] * self.joint_origin[ji];
                let p = frame.translation.vector;
                let a = frame.rotation * self.joint_axis[ji].into_inner();
                ([p.x, p.y, p.z], [a.x, a.y, a.z])
            })
            .collect()
    }

    /// Geometry center of a link in the root frame.
    pub fn geometry_center(&self, poses: &[Isometry3<f64>], link: usize) -> Point3<f64> {
        (poses[link] * self.geometry[link].0) * Point3::origin()
    }

    pub fn geometry_aabb(&self, poses: &[Isometry3<f64>]) -> Aabb {
        let mut aabb = Aabb::empty();
        for (l, (local, shape)) in self.geometry.iter().enumerate() {
            let pose = poses[l] * local;
            let center = pose * Point3::origin();
            let r: Rotation3<f64> = pose.rotation.to_rotation_matrix();
            let m = r.matrix();
            let half = match *shape {
                Shape::Sphere { radius } => [radius; 3],
                Shape::Cylinder { length, radius } => {
                    let mut h = [0.0; 3];
                    for (i, hi) in h.iter_mut().enumerate() {
                        let u = m[(i, 2)];
                        *hi = 0.5 * length * u.abs() + radius * (1.0 - u * u).max(0.0).sqrt();
                    }
                    h
                }
                Shape::Box { length, width, height } => {
                    let e = [0.5 * length, 0.5 * width, 0.5 * height];
                    let mut h = [0.0; 3];
                    for (i, hi) in h.iter_mut().enumerate() {
                        *hi = (0..3).map(|j| m[(i, j)].abs() * e[j]).sum();
                    }
                    h
                }
            };
            aabb.include(&center, half);
        }
        aabb
    }

    /// Lowest point (most negative z in the root frame) of a link's geometry.
    pub fn geometry_bottom(&self, poses: &[Isometry3<f64>], link: usize) -> Point3<f64> {
        let pose = poses[link] * self.geometry[link].0;
        let c = pose * Point3::origin();
        let m = pose.rotation.to_rotation_matrix();
        let m = m.matrix();
        let dz = match self.geometry[link].1 {
            Shape::Sphere { radius } => radius,
            Shape::Cylinder { length, radius } => {
                let u = m[(2, 2)];
                0.5 * length * u.abs() + radius * (1.0 - u * u).max(0.0).sqrt()
            }
            Shape::Box { length, width, height } => {
                let e = [0.5 * length, 0.5 * width, 0.5 * height];
                (0..3).map(|j| m[(2, j)].abs() * e[j]).sum()
            }
        };
        Point3::new(c.x, c.y, c.z - dz)
    }

    pub fn mass(&self, link: usize) -> f64 {
        self.masses[link]
    }

    /// Links in the subtree rooted at `link`, including it.
    pub fn subtree(&self, link: usize) -> Vec<usize> {
        let mut out = vec![link];
        let mut i = 0;
        while i < out.len() {
            let cur = out[i];
            for &l in &self.order {
                if self.parent_link[l] == Some(cur) {
                    out.push(l);
                }
            }
            i += 1;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::super::fixtures;
    use super::*;

    #[test]
    fn straight_chain_positions() {
        let e = fixtures::chain(0.3);
        let kin = Kinematics::new(&e).unwrap();
        let poses = kin.link_poses(&[0.0, 0.0, 0.0]);
        let frames = kin.joint_frames(&poses, &e);
        assert_eq!(frames[0].0, [0.0, 0.0, 0.0]);
        assert!((frames[1].0[2] + 0.2).abs() < 1e-12);
        assert!((frames[2].0[2] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn bent_hip_rotates_children() {
        let e = fixtures::chain(0.3);
        let kin = Kinematics::new(&e).unwrap();
        let poses = kin.link_poses(&[std::f64::consts::FRAC_PI_2, 0.0, 0.0]);
        let frames = kin.joint_frames(&poses, &e);
        // rotating -z by +90 deg about y gives -x
        assert!((frames[1].0[0] + 0.2).abs() < 1e-12);
        assert!(frames[1].0[2].abs() < 1e-12);
    }

    #[test]
    fn cylinder_aabb_follows_orientation() {
        let e = fixtures::chain(0.3);
        let kin = Kinematics::new(&e).unwrap();
        let poses = kin.link_poses(&[0.0; 3]);
        let aabb = kin.geometry_aabb(&poses);
        let ext = aabb.extents();
        assert!((ext[0] - 0.4).abs() < 1e-12);
        assert!((ext[1] - 0.2).abs() < 1e-12);
        // trunk top at +0.05, foot bottom at -0.52
        assert!((ext[2] - 0.57).abs() < 1e-12);
    }
}
