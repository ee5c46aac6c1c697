use std::collections::{HashMap, HashSet};
use std::fmt;

use super::{Embodiment, JointKind};

/// One broken invariant, naming the offending link or joint.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Empty,
    DuplicateName(String),
    NonPositiveDimension(String),
    NonPositiveMass(String),
    NonFinite(String),
    UnknownLink { joint: String, link: String },
    NonTreeTopology(String),
    RootCount(usize),
    Cycle,
    DegenerateLimits(String),
    NominalOutsideLimits(String),
    AxisNotUnit(String),
    NonPositiveRating(String),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Empty => write!(f, "embodiment has no links"),
            Violation::DuplicateName(n) => write!(f, "duplicate name `{n}`"),
            Violation::NonPositiveDimension(n) => write!(f, "link `{n}`: non-positive dimension"),
            Violation::NonPositiveMass(n) => write!(f, "link `{n}`: non-positive mass"),
            Violation::NonFinite(n) => write!(f, "`{n}`: non-finite value"),
            Violation::UnknownLink { joint, link } => write!(f, "joint `{joint}`: unknown link `{link}`"),
            Violation::NonTreeTopology(n) => write!(f, "link `{n}`: non-tree topology (multiple parents)"),
            Violation::RootCount(c) => write!(f, "expected exactly one root link, found {c}"),
            Violation::Cycle => write!(f, "non-tree topology: cycle"),
            Violation::DegenerateLimits(n) => write!(f, "joint `{n}`: degenerate limits"),
            Violation::NominalOutsideLimits(n) => write!(f, "joint `{n}`: nominal angle outside limits"),
            Violation::AxisNotUnit(n) => write!(f, "joint `{n}`: axis not unit length"),
            Violation::NonPositiveRating(n) => write!(f, "joint `{n}`: non-positive torque or velocity rating"),
        }
    }
}

/// Checks every structural invariant; an empty report means valid.
pub fn validate(e: &Embodiment) -> Vec<Violation> {
    let mut out = Vec::new();
    if e.links.is_empty() {
        out.push(Violation::Empty);
        return out;
    }

    let mut seen = HashSet::new();
    for l in &e.links {
        if !seen.insert(l.name.as_str()) {
            out.push(Violation::DuplicateName(l.name.clone()));
        }
        let dims = l.shape.dims();
        if dims.iter().any(|d| !d.is_finite()) || !l.mass.is_finite() {
            out.push(Violation::NonFinite(l.name.clone()));
        }
        if dims.iter().any(|&d| d <= 0.0) {
            out.push(Violation::NonPositiveDimension(l.name.clone()));
        }
        if l.mass <= 0.0 {
            out.push(Violation::NonPositiveMass(l.name.clone()));
        }
    }
    let mut seen = HashSet::new();
    for j in &e.joints {
        if !seen.insert(j.name.as_str()) {
            out.push(Violation::DuplicateName(j.name.clone()));
        }
    }

    let links: HashSet<&str> = e.links.iter().map(|l| l.name.as_str()).collect();
    let mut child_count: HashMap<&str, usize> = HashMap::new();
    for j in &e.joints {
        for link in [&j.parent_link, &j.child_link] {
            if !links.contains(link.as_str()) {
                out.push(Violation::UnknownLink { joint: j.name.clone(), link: link.clone() });
            }
        }
        *child_count.entry(j.child_link.as_str()).or_default() += 1;

        let values = [j.limits.0, j.limits.1, j.max_torque, j.max_velocity, j.nominal_angle]
            .into_iter()
            .chain(j.axis)
            .chain(j.origin)
            .chain(j.origin_rpy);
        if values.into_iter().any(|v| !v.is_finite()) {
            out.push(Violation::NonFinite(j.name.clone()));
            continue;
        }
        let norm = j.axis.iter().map(|a| a * a).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-9 {
            out.push(Violation::AxisNotUnit(j.name.clone()));
        }
        if j.kind == JointKind::Revolute {
            if j.limits.0 >= j.limits.1 {
                out.push(Violation::DegenerateLimits(j.name.clone()));
            } else if j.nominal_angle < j.limits.0 || j.nominal_angle > j.limits.1 {
                out.push(Violation::NominalOutsideLimits(j.name.clone()));
            }
            if j.max_torque <= 0.0 || j.max_velocity <= 0.0 {
                out.push(Violation::NonPositiveRating(j.name.clone()));
            }
        }
    }
    let mut multi: Vec<&str> = child_count.iter().filter(|(_, &c)| c > 1).map(|(n, _)| *n).collect();
    multi.sort_unstable();
    for n in multi {
        out.push(Violation::NonTreeTopology(n.to_string()));
    }

    let roots = e.links.iter().filter(|l| !child_count.contains_key(l.name.as_str())).count();
    if roots != 1 {
        out.push(Violation::RootCount(roots));
    }

    // Reachability from the root; unreachable links with a parent imply a cycle.
    if roots >= 1 && out.iter().all(|v| !matches!(v, Violation::UnknownLink { .. })) {
        let mut children: HashMap<&str, Vec<&str>> = HashMap::new();
        for j in &e.joints {
            children.entry(j.parent_link.as_str()).or_default().push(j.child_link.as_str());
        }
        let mut reached: HashSet<&str> = HashSet::new();
        let mut stack: Vec<&str> = e
            .links
            .iter()
            .filter(|l| !child_count.contains_key(l.name.as_str()))
            .map(|l| l.name.as_str())
            .collect();
        while let Some(l) = stack.pop() {
            if reached.insert(l) {
                if let Some(cs) = children.get(l) {
                    stack.extend(cs.iter().copied());
                }
            }
        }
        if reached.len() < e.links.len() {
            out.push(Violation::Cycle);
        }
    }
    out
}
