use criterion::{black_box, criterion_group, criterion_main, Criterion};

use xembody::embodiment::MorphologyClass;
use xembody::procgen::reference_embodiment;
use xembody::urma::{init_params, Batch, UrmaConfig};
use xembody::{gae, EnvConfig, SurrogateEnv};

fn urma(c: &mut Criterion) {
    let e = reference_embodiment(MorphologyClass::Quadruped);
    let mut env = SurrogateEnv::new(&e, EnvConfig::default(), 0).unwrap();
    let obs = env.reset();
    let p = init_params(&UrmaConfig::desk(), 0).unwrap();
    let net = p.network().unwrap();
    let desc = env.model.descriptor.clone();
    let mut batch = Batch::new(&desc);
    let target = vec![0.1; desc.joint_count()];
    for _ in 0..64 {
        batch.push(&obs, Some(&target)).unwrap();
    }
    c.bench_function("urma_forward_b64", |b| b.iter(|| net.forward(black_box(&p.values), &batch).unwrap()));
    c.bench_function("urma_loss_and_grad_b64", |b| b.iter(|| net.loss_and_grad(black_box(&p.values), &batch).unwrap()));
}

fn env_step(c: &mut Criterion) {
    let e = reference_embodiment(MorphologyClass::Hexapod);
    let mut env = SurrogateEnv::new(&e, EnvConfig::default(), 0).unwrap();
    env.reset();
    let action = vec![0.0; env.model.descriptor.joint_count()];
    c.bench_function("env_step_hexapod", |b| {
        b.iter(|| {
            if env.step(black_box(&action)).unwrap().done {
                env.reset();
            }
        })
    });
}

fn advantages(c: &mut Criterion) {
    let n = 64 * 128;
    let rewards: Vec<f64> = (0..n).map(|i| (i % 7) as f64 * 0.1).collect();
    let values: Vec<f64> = (0..n).map(|i| (i % 5) as f64 * 0.2).collect();
    let dones: Vec<bool> = (0..n).map(|i| i % 97 == 0).collect();
    c.bench_function("gae_8192", |b| b.iter(|| gae(black_box(&rewards), &values, &dones, 0.0, 0.99, 0.95).unwrap()));
}

criterion_group!(benches, urma, env_step, advantages);
criterion_main!(benches);
