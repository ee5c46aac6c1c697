use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xembody::embodiment::JOINT_DESCRIPTOR_LEN;
use xembody::urma::{Batch, SoftmaxAxis, Urma, UrmaConfig, GENERAL_OBS_LEN, JOINT_OBS_LEN};

fn random_batch(rng: &mut impl Rng, b: usize, j: usize) -> Batch {
    let mut batch = Batch {
        joints: j,
        desc: (0..j * JOINT_DESCRIPTOR_LEN).map(|_| rng.random_range(-1.5..1.5)).collect(),
        general: Vec::new(),
        joint_obs: Vec::new(),
        targets: Vec::new(),
    };
    for _ in 0..b {
        batch.general.extend((0..GENERAL_OBS_LEN).map(|_| rng.random_range(-1.0..1.0)));
        batch.joint_obs.extend((0..j * JOINT_OBS_LEN).map(|_| rng.random_range(-1.0..1.0)));
        batch.targets.extend((0..j).map(|_| rng.random_range(-1.0..1.0)));
    }
    batch
}

fn permute(batch: &Batch, perm: &[usize]) -> Batch {
    let j = batch.joints;
    let mut out = batch.clone();
    for (new, &old) in perm.iter().enumerate() {
        out.desc[new * JOINT_DESCRIPTOR_LEN..(new + 1) * JOINT_DESCRIPTOR_LEN]
            .copy_from_slice(&batch.desc[old * JOINT_DESCRIPTOR_LEN..(old + 1) * JOINT_DESCRIPTOR_LEN]);
        for b in 0..batch.len() {
            let (n, o) = ((b * j + new) * JOINT_OBS_LEN, (b * j + old) * JOINT_OBS_LEN);
            out.joint_obs[n..n + JOINT_OBS_LEN].copy_from_slice(&batch.joint_obs[o..o + JOINT_OBS_LEN]);
            out.targets[b * j + new] = batch.targets[b * j + old];
        }
    }
    out
}

#[test]
fn permutation_equivariance_on_random_fixtures() {
    let net = Urma::new(UrmaConfig::desk()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..100 {
        let p = net.init(case);
        let j = rng.random_range(2..9);
        let batch = random_batch(&mut rng, 2, j);
        let mut perm: Vec<usize> = (0..j).collect();
        for i in (1..j).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let a = net.forward(&p, &batch).unwrap();
        let b = net.forward(&p, &permute(&batch, &perm)).unwrap();
        for s in 0..2 {
            for (new, &old) in perm.iter().enumerate() {
                assert!((b.actions()[s * j + new] - a.actions()[s * j + old]).abs() < 1e-9);
            }
        }
        for (x, y) in a.z_action().iter().zip(b.z_action()) {
            assert!((x - y).abs() < 1e-9);
        }
    }
}

#[test]
fn any_joint_count_up_to_64() {
    let net = Urma::new(UrmaConfig::desk()).unwrap();
    let p = net.init(0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for j in [1, 2, 7, 19, 33, 64] {
        let f = net.forward(&p, &random_batch(&mut rng, 1, j)).unwrap();
        assert_eq!(f.actions().len(), j);
        assert!(f.actions().iter().all(|a| a.is_finite()));
    }
}

fn gradient_check(axis: SoftmaxAxis) {
    let mut cfg = UrmaConfig::tiny();
    cfg.softmax_axis = axis;
    let net = Urma::new(cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for point in 0..3 {
        let mut p = net.init(100 + point);
        // move temperatures away from 1 so their gradient path is exercised
        for t in 0..2 {
            p[net.layout.tensors.iter().find(|t| t.name == "temperature").unwrap().range.start + t] =
                rng.random_range(0.5..2.0);
        }
        let batch = random_batch(&mut rng, 3, 4);
        let (_, g) = net.loss_and_grad(&p, &batch).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for i in 0..p.len() {
            let mut q = p.clone();
            q[i] = p[i] + h;
            let up = net.bc_loss(&q, &batch).unwrap();
            q[i] = p[i] - h;
            let dn = net.bc_loss(&q, &batch).unwrap();
            let fd = (up - dn) / (2.0 * h);
            // the floor keeps components that are zero up to rounding from
            // dividing noise by noise
            let rel = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-6);
            worst = worst.max(rel);
        }
        assert!(worst < 1e-4, "point {point}: worst relative error {worst}");
    }
}

#[test]
fn gradients_match_central_differences() {
    gradient_check(SoftmaxAxis::Joints);
}

#[test]
fn gradients_match_central_differences_latent_axis() {
    gradient_check(SoftmaxAxis::Latent);
}

#[test]
fn doubling_the_loss_doubles_gradients() {
    let net = Urma::new(UrmaConfig::tiny()).unwrap();
    let p = net.init(5);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let batch = random_batch(&mut rng, 2, 3);
    let f = net.forward(&p, &batch).unwrap();
    let n = batch.targets.len() as f64;
    let d: Vec<f64> = f.actions().iter().zip(&batch.targets).map(|(a, t)| 2.0 * (a - t) / n).collect();
    let d2: Vec<f64> = d.iter().map(|v| 2.0 * v).collect();
    let g = net.backward(&p, &f, &d);
    let g2 = net.backward(&p, &f, &d2);
    for (a, b) in g.iter().zip(&g2) {
        assert!((2.0 * a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }
}
