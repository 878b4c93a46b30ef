use edd_core::data::{normalize, sample_labeled_subset, SplitDataset, SyntheticConfig};
use edd_core::eval::accuracy;
use edd_core::models::{Architecture, ArchitectureConfig, Head, Mode, Network};
use edd_core::numerics::{Tape, Tensor};
use edd_core::training::{ensemble_predict, train_member, EnsembleConfig, MemberRecipe, TrainConfig};
use edd_core::transforms::TransformParams;

fn arch() -> ArchitectureConfig {
    ArchitectureConfig {
        filters: vec![6, 8],
        kernels: vec![5, 3],
        head_hidden: 12,
        dropout: 0.1,
        ..ArchitectureConfig::default()
    }
}

fn split(seed: u64) -> SplitDataset {
    let mut d = SyntheticConfig {
        length: 32,
        windows_per_class: 90,
        participants: 5,
        validation_participants: 1,
        seed,
        ..SyntheticConfig::default()
    }
    .generate()
    .unwrap();
    normalize(&mut d.train, &mut [&mut d.validation]).unwrap();
    d
}

#[test]
fn labeled_budget_is_exact() {
    let d = split(0);
    for per_class in [1, 5, 20] {
        let s = sample_labeled_subset(&d.train, per_class, 3).unwrap();
        assert_eq!(s.len(), per_class * d.train.num_classes());
        assert!(s.class_counts().iter().all(|&c| c == per_class));
    }
    assert!(sample_labeled_subset(&d.train, 10_000, 3).is_err());
}

#[test]
fn pretext_heads_do_not_share_gradients() {
    let base = Architecture::base(&arch(), 6, 32, 1.0).unwrap();
    let net = Network::new(base.with_head(Head::Pretext { tasks: 8 }), 4).unwrap();
    let d = split(1);
    let refs: Vec<_> = d.train.windows.iter().take(4).collect();
    for task in 0..8 {
        let mut tape = Tape::new();
        let vars = net.bind(&mut tape);
        let x = tape.constant(edd_core::models::windows_to_tensor(&refs).unwrap());
        let feats = net.features(&mut tape, &vars, x, &mut Mode::Eval).unwrap();
        let z = net.pretext_logit(&mut tape, &vars, feats, task, &mut Mode::Eval).unwrap();
        let loss = tape.sum(z);
        let grads = tape.backward(loss).unwrap();
        for (p, v) in net.params.iter().zip(&vars) {
            let Some(rest) = p.name.strip_prefix("pretext") else { continue };
            let owner: usize = rest.split('.').next().unwrap().parse().unwrap();
            let g = grads.get(*v);
            if owner == task {
                assert!(g.is_some_and(|g| g.data().iter().any(|v| *v != 0.0)), "{} has no gradient", p.name);
            } else {
                assert!(g.is_none_or(|g| g.data().iter().all(|v| *v == 0.0)), "{} leaks into task {task}", p.name);
            }
        }
    }
}

/// Point accuracy of the ensemble and of each member on validation.
fn ensemble_vs_members(seed: u64) -> (f64, Vec<f64>) {
    let d = split(seed);
    let labeled = sample_labeled_subset(&d.train, 15, seed).unwrap();
    let recipe = MemberRecipe {
        arch: arch(),
        transforms: TransformParams::default(),
        pretext: TrainConfig {
            epochs: 1,
            batch_size: 16,
            max_windows: Some(60),
            ..TrainConfig::default()
        },
        supervised: TrainConfig {
            epochs: 12,
            batch_size: 8,
            learning_rate: 0.003,
            ..TrainConfig::default()
        },
    };
    let cfg = EnsembleConfig {
        members: 5,
        seed,
        ..EnsembleConfig::default()
    };
    let d_u = d.train.unlabeled();
    let members: Vec<Network> = (0..cfg.members)
        .map(|m| train_member(&d_u, &labeled, &cfg, &recipe, m).unwrap().classifier.network)
        .collect();
    let member_acc = members
        .iter()
        .map(|n| {
            let p: Vec<Vec<f64>> = n.forward_classifier(&d.validation.windows).unwrap().into_iter().map(|c| c.probs).collect();
            accuracy(&p, &d.validation.labels).unwrap()
        })
        .collect();
    let means: Vec<Vec<f64>> = ensemble_predict(&members, &d.validation.windows).unwrap().iter().map(|p| p.mean()).collect();
    (accuracy(&means, &d.validation.labels).unwrap(), member_acc)
}

#[test]
fn ensemble_is_at_least_as_accurate_as_its_median_member() {
    let mut violations = Vec::new();
    for seed in 0..5 {
        let (ens, mut members) = ensemble_vs_members(seed);
        members.sort_by(f64::total_cmp);
        let median = members[members.len() / 2];
        if ens < median {
            violations.push((seed, ens, median));
        }
    }
    assert!(violations.len() <= 1, "{violations:?}");
}

#[test]
fn windows_to_tensor_keeps_layout() {
    let d = split(2);
    let refs: Vec<_> = d.train.windows.iter().take(2).collect();
    let t: Tensor = edd_core::models::windows_to_tensor(&refs).unwrap();
    assert_eq!(t.shape(), &[2, 6, 32]);
    assert_eq!(&t.data()[6 * 32..], d.train.windows[1].values());
}

#[test]
fn frozen_pretext_features_beat_chance_at_desk_scale() {
    use edd_core::config::Config;
    use edd_core::pipeline::{labeled_seed, prepare_dataset, pretext_base, seeded_config};
    use edd_core::training::{pretext_evaluate, train_supervised};
    use edd_core::transforms::build_pretext_dataset;

    let desk = include_str!("../../../configs/desk.toml");
    let cfg = seeded_config(&Config::parse(desk).unwrap(), 0);
    let d = prepare_dataset(&cfg).unwrap();
    let pretext = pretext_base(&cfg, &d).unwrap().network;
    let held_out = build_pretext_dataset(&d.validation.unlabeled(), &cfg.transforms, 11).unwrap();
    let (_, pretext_acc) = pretext_evaluate(&pretext, &held_out).unwrap();
    eprintln!("held-out pretext accuracy {pretext_acc:.3}");
    assert!(pretext_acc > 0.55, "{pretext_acc}");

    let labeled = sample_labeled_subset(&d.train, cfg.supervised.per_class, labeled_seed(0)).unwrap();
    let frozen = train_supervised(&pretext, &labeled, cfg.model.filters.len(), &cfg.supervised).unwrap().network;
    let p: Vec<Vec<f64>> = frozen.forward_classifier(&d.validation.windows).unwrap().into_iter().map(|c| c.probs).collect();
    let acc = accuracy(&p, &d.validation.labels).unwrap();
    eprintln!("frozen-feature accuracy {acc:.3}");
    assert!(acc > 1.0 / 3.0 + 0.15, "{acc}");
}
