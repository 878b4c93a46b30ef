mod common;

use edd_core::data::SyntheticConfig;
use edd_core::models::{Architecture, ArchitectureConfig, Head, Network};
use edd_core::numerics::{digamma, seeded_rng, Adam, AdamConfig, Param, Tape, Tensor};
use edd_core::training::{train_supervised, TrainConfig};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn every_primitive_passes_gradcheck() {
    let mut failures = Vec::new();
    for case in common::primitive_cases() {
        let err = common::check(&case, common::CASES).unwrap();
        if err >= common::GRAD_TOL {
            failures.push(format!("{}: {err:e}", case.name));
        }
    }
    assert!(failures.is_empty(), "{failures:?}");
}

#[test]
fn composite_loss_passes_gradcheck() {
    // a small conv net with a Dirichlet-style loss exercises every backward rule together
    let case = common::GradCase {
        name: "composite",
        inputs: vec![
            (vec![2, 2, 8], common::Dist::Uniform(-1.0, 1.0)),
            (vec![3, 2, 3], common::Dist::Uniform(-0.5, 0.5)),
            (vec![3], common::Dist::Uniform(-0.1, 0.1)),
        ],
        build: |t, v| {
            let h = t.conv1d(v[0], v[1], v[2], 1)?;
            let h = t.softplus(h);
            let h = t.max_pool_time(h)?;
            let a = t.exp(h);
            let s = t.sum_rows(a)?;
            let lg = t.lgamma(s)?;
            let la = t.lgamma(a)?;
            let la = t.sum_rows(la)?;
            t.sub(la, lg)
        },
    };
    let err = common::check(&case, common::CASES).unwrap();
    assert!(err < common::GRAD_TOL, "{err:e}");
}

#[test]
fn digamma_recurrence_at_listed_points() {
    for x in [0.5, 1.0, 2.0, 10.0, 100.0] {
        let d = digamma(x + 1.0).unwrap() - digamma(x).unwrap();
        assert!((d - 1.0 / x).abs() < 1e-9, "x = {x}: {d}");
    }
}

fn tiny_training_run() -> Network {
    let d = SyntheticConfig {
        length: 16,
        windows_per_class: 20,
        participants: 4,
        validation_participants: 1,
        ..SyntheticConfig::default()
    }
    .generate()
    .unwrap();
    let arch = ArchitectureConfig {
        filters: vec![4, 4],
        kernels: vec![3, 3],
        head_hidden: 8,
        ..ArchitectureConfig::default()
    };
    let base = Network::new(Architecture::base(&arch, 6, 16, 1.0).unwrap().with_head(Head::Features), 3).unwrap();
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 8,
        seed: 9,
        ..TrainConfig::default()
    };
    train_supervised(&base, &d.train, 0, &cfg).unwrap().network
}

#[test]
fn identical_seeds_give_bit_identical_training() {
    let a = tiny_training_run();
    let b = tiny_training_run();
    for (p, q) in a.params.iter().zip(&b.params) {
        let same = p.value.data().iter().zip(q.value.data()).all(|(x, y)| x.to_bits() == y.to_bits());
        assert!(same, "{} differs", p.name);
    }
}

proptest! {
    #[test]
    fn softmax_normalizes_and_ignores_shifts(
        logits in prop::collection::vec(-30.0f64..30.0, 2..12),
        shift in -100.0f64..100.0,
        temperature in 0.5f64..20.0,
    ) {
        let k = logits.len();
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::new(vec![1, k], logits.clone()).unwrap());
        let p = tape.softmax(z, temperature).unwrap();
        let zs = tape.constant(Tensor::new(vec![1, k], logits.iter().map(|v| v + shift).collect()).unwrap());
        let ps = tape.softmax(zs, temperature).unwrap();
        let (p, ps) = (tape.value(p).data(), tape.value(ps).data());
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        for (a, b) in p.iter().zip(ps) {
            prop_assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn frozen_tensors_survive_optimizer_steps(steps in 1usize..20, seed in 0u64..1000) {
        let mut rng = seeded_rng(seed);
        let mut random = |n: usize| Tensor::new(vec![n], (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let mut params = vec![Param::new("free", random(5)), Param::new("frozen", random(4))];
        params[1].frozen = true;
        let (free_before, before) = (params[0].value.clone(), params[1].value.clone());
        let grads = [random(5), random(4)];
        let mut opt = Adam::new(AdamConfig::with_learning_rate(0.1)).unwrap();
        for _ in 0..steps {
            opt.step(&mut params, &[Some(&grads[0]), Some(&grads[1])]).unwrap();
        }
        prop_assert_eq!(&params[1].value, &before);
        prop_assert_ne!(&params[0].value, &free_before);
    }
}
