//! Pretext, supervised and ensemble training.
//!
//! Every member is a self-contained recipe: draw a width multiplier, build a
//! base, train it on the eight transformation-recognition tasks, transfer the
//! base into a classifier and fine-tune on the labeled budget. Members share
//! no state, so their weights depend only on their own seed.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::{LabeledDataset, SensorWindow, UnlabeledDataset};
use crate::error::{Error, Result};
use crate::models::{
    transfer_base, windows_to_tensor, Architecture, ArchitectureConfig, EnsemblePrediction, Head, Mode, Network,
};
use crate::numerics::{derive_seed, seeded_rng, Adam, AdamConfig, Rng, Tape, Tensor, Var};
use crate::transforms::{build_pretext_dataset, PretextDataset, TransformKind, TransformParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Epochs without held-out improvement before stopping (pretext only).
    pub patience: usize,
    /// Labeled windows drawn per class.
    pub per_class: usize,
    /// Fraction of pretext windows held out for early stopping.
    pub holdout: f64,
    /// Caps the number of unlabeled windows used for pretext training.
    pub max_windows: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 64,
            learning_rate: 1e-3,
            seed: 0,
            patience: 5,
            per_class: 50,
            holdout: 0.1,
            max_windows: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.patience == 0 || self.per_class == 0 {
            return Err(Error::InvalidParameter(
                "batch_size, patience and per_class must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidParameter("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.holdout) {
            return Err(Error::InvalidParameter("holdout must be in [0, 1)".into()));
        }
        if self.max_windows == Some(0) {
            return Err(Error::InvalidParameter("max_windows must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    pub members: usize,
    pub width_min: f64,
    pub width_max: f64,
    pub seed: u64,
    /// Convolution layers frozen after transfer from the pretext base.
    pub freeze_layers: usize,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            members: 10,
            width_min: 0.75,
            width_max: 1.25,
            seed: 0,
            freeze_layers: 0,
        }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.members == 0 {
            return Err(Error::InvalidParameter("an ensemble needs at least one member".into()));
        }
        if !(self.width_min > 0.0 && self.width_min <= self.width_max) {
            return Err(Error::InvalidParameter(format!(
                "width range [{}, {}] is invalid",
                self.width_min, self.width_max
            )));
        }
        Ok(())
    }

    pub fn member_seed(&self, m: usize) -> u64 {
        derive_seed(self.seed, 0x4d45_4d00 + m as u64)
    }

    /// Width multiplier of member `m`, a pure function of its seed.
    pub fn member_width(&self, m: usize) -> f64 {
        if self.width_min == self.width_max {
            return self.width_min;
        }
        seeded_rng(derive_seed(self.member_seed(m), 1)).random_range(self.width_min..self.width_max)
    }
}

/// Everything a member needs besides the data.
#[derive(Debug, Clone, PartialEq)]
pub struct MemberRecipe {
    pub arch: ArchitectureConfig,
    pub transforms: TransformParams,
    pub pretext: TrainConfig,
    pub supervised: TrainConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Held-out loss and accuracy, when a held-out slice exists.
    pub holdout_loss: Option<f64>,
    pub holdout_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: Network,
    pub history: Vec<EpochRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemberInfo {
    pub index: usize,
    pub seed: u64,
    pub width: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedMember {
    pub info: MemberInfo,
    pub pretext: TrainOutcome,
    pub classifier: TrainOutcome,
}

fn adam(cfg: &TrainConfig) -> Result<Adam> {
    Adam::new(AdamConfig::with_learning_rate(cfg.learning_rate))
}

/// One optimizer step on the loss built by `loss`.
fn step(
    net: &mut Network,
    opt: &mut Adam,
    loss: impl FnOnce(&Network, &mut Tape, &[Var]) -> Result<Var>,
) -> Result<f64> {
    let mut tape = Tape::new();
    let vars = net.bind(&mut tape);
    let l = loss(net, &mut tape, &vars)?;
    let value = tape.value(l).data()[0];
    if !value.is_finite() {
        return Err(Error::non_finite("training loss"));
    }
    let grads = tape.backward(l)?;
    let refs: Vec<Option<&Tensor>> = vars.iter().map(|&v| grads.get(v)).collect();
    opt.step(&mut net.params, &refs)?;
    Ok(value)
}

fn diverged(stage: &str, epoch: usize, loss: f64) -> Error {
    Error::Divergence {
        stage: stage.to_string(),
        epoch,
        loss,
    }
}

/// Joint binary cross-entropy of the eight pretext heads on a batch of
/// windows: originals are negatives for every head, each head's own
/// transformed copies its positives. The base runs once on the stacked batch.
fn pretext_loss(
    net: &Network,
    tape: &mut Tape,
    vars: &[Var],
    data: &PretextDataset,
    batch: &[usize],
    mode: &mut Mode<'_>,
) -> Result<(Var, Vec<f64>)> {
    let b = batch.len();
    let mut windows: Vec<&SensorWindow> = batch.iter().map(|&i| &data.originals[i]).collect();
    for k in TransformKind::ALL {
        windows.extend(batch.iter().map(|&i| &data.transformed[k.index()][i]));
    }
    let x = tape.constant(windows_to_tensor(&windows)?);
    let feats = net.features(tape, vars, x, mode)?;
    let labels = tape.constant(Tensor::new(
        vec![2 * b, 1],
        (0..2 * b).map(|i| if i < b { 0.0 } else { 1.0 }).collect(),
    )?);
    let mut total: Option<Var> = None;
    let mut correct = Vec::with_capacity(8);
    for k in TransformKind::ALL {
        let rows: Vec<usize> = (0..b).chain((k.index() + 1) * b..(k.index() + 2) * b).collect();
        let f = tape.select_rows(feats, &rows)?;
        let z = net.pretext_logit(tape, vars, f, k.index(), mode)?;
        let hits = tape
            .value(z)
            .data()
            .iter()
            .enumerate()
            .filter(|&(i, &v)| (v > 0.0) == (i >= b))
            .count();
        correct.push(hits as f64 / (2 * b) as f64);
        // softplus(z) - y z is the logistic loss written without overflow
        let sp = tape.softplus(z);
        let yz = tape.mul(labels, z)?;
        let bce = tape.sub(sp, yz)?;
        let m = tape.mean(bce)?;
        total = Some(match total {
            Some(t) => tape.add(t, m)?,
            None => m,
        });
    }
    let loss = tape.scale(total.expect("eight heads"), 1.0 / 8.0);
    Ok((loss, correct))
}

fn shuffled(n: usize, rng: &mut Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx
}

/// Multi-task pretext training with early stopping on a held-out slice.
/// Returns the weights with the best held-out loss.
pub fn train_pretext(
    d: &UnlabeledDataset,
    base: Architecture,
    transforms: &TransformParams,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if d.is_empty() {
        return Err(Error::Empty("pretext training set".into()));
    }
    let mut net = Network::new(base.with_head(Head::Pretext { tasks: 8 }), derive_seed(cfg.seed, 10))?;
    if cfg.epochs == 0 {
        return Ok(TrainOutcome {
            network: net,
            history: Vec::new(),
        });
    }
    let mut rng = seeded_rng(derive_seed(cfg.seed, 11));
    let mut order = shuffled(d.len(), &mut rng);
    if let Some(cap) = cfg.max_windows {
        order.truncate(cap);
    }
    let held = ((order.len() as f64 * cfg.holdout).round() as usize).min(order.len() - 1);
    let subset = |idx: &[usize]| UnlabeledDataset {
        windows: idx.iter().map(|&i| d.windows[i].clone()).collect(),
        participants: idx.iter().map(|&i| d.participants[i]).collect(),
        sample_rate: d.sample_rate,
    };
    let all = build_pretext_dataset(&subset(&order), transforms, derive_seed(cfg.seed, 12))?;
    let idx: Vec<usize> = (0..all.len()).collect();
    let (held_idx, train_idx) = idx.split_at(held);
    let (holdout, train) = (all.subset(held_idx), all.subset(train_idx));

    let mut opt = adam(cfg)?;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, Network)> = None;
    let mut stale = 0;
    for epoch in 0..cfg.epochs {
        let order = shuffled(train.len(), &mut rng);
        let mut sum = 0.0;
        let mut batches = 0;
        for batch in order.chunks(cfg.batch_size) {
            let loss = step(&mut net, &mut opt, |n, tape, vars| {
                Ok(pretext_loss(n, tape, vars, &train, batch, &mut Mode::Train(&mut rng))?.0)
            })
            .map_err(|e| match e {
                Error::NonFinite { .. } => diverged("pretext", epoch, f64::NAN),
                e => e,
            })?;
            sum += loss;
            batches += 1;
        }
        let train_loss = sum / batches as f64;
        let (holdout_loss, holdout_accuracy) = if holdout.is_empty() {
            (None, None)
        } else {
            let (l, a) = pretext_evaluate(&net, &holdout)?;
            (Some(l), Some(a))
        };
        history.push(EpochRecord {
            epoch,
            train_loss,
            holdout_loss,
            holdout_accuracy,
        });
        let score = holdout_loss.unwrap_or(train_loss);
        if !score.is_finite() {
            return Err(diverged("pretext", epoch, score));
        }
        match &best {
            Some((b, _)) if score >= *b => {
                stale += 1;
                if stale >= cfg.patience {
                    break;
                }
            }
            _ => {
                best = Some((score, net.clone()));
                stale = 0;
            }
        }
    }
    Ok(TrainOutcome {
        network: best.map_or(net, |(_, n)| n),
        history,
    })
}

/// Mean pretext loss and mean per-head accuracy in evaluation mode.
pub fn pretext_evaluate(net: &Network, data: &PretextDataset) -> Result<(f64, f64)> {
    let mut loss = 0.0;
    let mut acc = 0.0;
    let mut seen = 0usize;
    let idx: Vec<usize> = (0..data.len()).collect();
    for batch in idx.chunks(64) {
        let mut tape = Tape::new();
        let vars = net.bind_constant(&mut tape);
        let (l, correct) = pretext_loss(net, &mut tape, &vars, data, batch, &mut Mode::Eval)?;
        let w = batch.len() as f64;
        loss += tape.value(l).data()[0] * w;
        acc += correct.iter().sum::<f64>() / 8.0 * w;
        seen += batch.len();
    }
    Ok((loss / seen as f64, acc / seen as f64))
}

fn one_hot(labels: &[usize], classes: usize) -> Result<Tensor> {
    let mut data = vec![0.0; labels.len() * classes];
    for (i, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::InvalidParameter(format!("label {y} with {classes} classes")));
        }
        data[i * classes + y] = 1.0;
    }
    Tensor::new(vec![labels.len(), classes], data)
}

/// Fine-tunes a classifier whose base is copied from `base`, with the first
/// `freeze_layers` convolution layers frozen.
pub fn train_supervised(
    base: &Network,
    d: &LabeledDataset,
    freeze_layers: usize,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if d.is_empty() {
        return Err(Error::Empty("labeled training set".into()));
    }
    let classes = d.num_classes();
    let arch = base.arch.clone().with_head(Head::Classifier { classes });
    let mut net = Network::new(arch, derive_seed(cfg.seed, 20))?;
    transfer_base(base, &mut net, freeze_layers)?;
    let mut rng = seeded_rng(derive_seed(cfg.seed, 21));
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut opt = adam(cfg)?;
    for epoch in 0..cfg.epochs {
        let order = shuffled(d.len(), &mut rng);
        let mut sum = 0.0;
        let mut batches = 0;
        for batch in order.chunks(cfg.batch_size) {
            let windows: Vec<&SensorWindow> = batch.iter().map(|&i| &d.windows[i]).collect();
            let labels: Vec<usize> = batch.iter().map(|&i| d.labels[i]).collect();
            let loss = step(&mut net, &mut opt, |n, tape, vars| {
                let x = tape.constant(windows_to_tensor(&windows)?);
                let z = n.logits(tape, vars, x, &mut Mode::Train(&mut rng))?;
                cross_entropy(tape, z, &labels, classes)
            })
            .map_err(|e| match e {
                Error::NonFinite { .. } => diverged("supervised", epoch, f64::NAN),
                e => e,
            })?;
            sum += loss;
            batches += 1;
        }
        history.push(EpochRecord {
            epoch,
            train_loss: sum / batches as f64,
            holdout_loss: None,
            holdout_accuracy: None,
        });
    }
    Ok(TrainOutcome { network: net, history })
}

/// Mean categorical cross-entropy of logits `z` against integer labels.
pub fn cross_entropy(tape: &mut Tape, z: Var, labels: &[usize], classes: usize) -> Result<Var> {
    let lp = tape.log_softmax(z, 1.0)?;
    let y = tape.constant(one_hot(labels, classes)?);
    let picked = tape.mul(lp, y)?;
    let total = tape.sum(picked);
    Ok(tape.scale(total, -1.0 / labels.len() as f64))
}

/// Trains member `m` of the ensemble from scratch.
pub fn train_member(
    d_u: &UnlabeledDataset,
    d_l: &LabeledDataset,
    cfg: &EnsembleConfig,
    recipe: &MemberRecipe,
    m: usize,
) -> Result<TrainedMember> {
    let seed = cfg.member_seed(m);
    let width = cfg.member_width(m);
    let [channels, timesteps] = d_l
        .window_shape()
        .ok_or_else(|| Error::Empty("labeled training set".into()))?;
    let arch = Architecture::base(&recipe.arch, channels, timesteps, width)?;
    let pretext_cfg = TrainConfig {
        seed: derive_seed(seed, 2),
        ..recipe.pretext.clone()
    };
    let supervised_cfg = TrainConfig {
        seed: derive_seed(seed, 3),
        ..recipe.supervised.clone()
    };
    let name = |e: Error| match e {
        Error::Divergence { stage, epoch, loss } => Error::Divergence {
            stage: format!("member {m} {stage}"),
            epoch,
            loss,
        },
        e => e,
    };
    let pretext = train_pretext(d_u, arch, &recipe.transforms, &pretext_cfg).map_err(name)?;
    let classifier = train_supervised(&pretext.network, d_l, cfg.freeze_layers, &supervised_cfg).map_err(name)?;
    Ok(TrainedMember {
        info: MemberInfo { index: m, seed, width },
        pretext,
        classifier,
    })
}

/// Trains all members independently, in index order.
pub fn train_ensemble(
    d_u: &UnlabeledDataset,
    d_l: &LabeledDataset,
    cfg: &EnsembleConfig,
    recipe: &MemberRecipe,
) -> Result<Vec<TrainedMember>> {
    cfg.validate()?;
    (0..cfg.members).map(|m| train_member(d_u, d_l, cfg, recipe, m)).collect()
}

/// Per-window member distributions, one row per member, not averaged.
pub fn ensemble_predict(members: &[Network], windows: &[SensorWindow]) -> Result<Vec<EnsemblePrediction>> {
    let refs: Vec<&SensorWindow> = windows.iter().collect();
    ensemble_predict_refs(members, &refs)
}

pub fn ensemble_predict_refs(members: &[Network], windows: &[&SensorWindow]) -> Result<Vec<EnsemblePrediction>> {
    let first = members.first().ok_or_else(|| Error::Empty("ensemble".into()))?;
    let classes = first.classes();
    if classes.is_none() {
        return Err(Error::ArchitectureMismatch("ensemble members must be classifiers".into()));
    }
    if let Some(m) = members.iter().position(|m| m.classes() != classes) {
        return Err(Error::ArchitectureMismatch(format!(
            "member {m} predicts {:?} classes, member 0 predicts {:?}",
            members[m].classes(),
            classes
        )));
    }
    let mut per_member = Vec::with_capacity(members.len());
    for m in members {
        let mut rows = m.predict_logits_refs(windows)?;
        for z in &mut rows {
            crate::numerics::tape::softmax_in_place(z, 1.0);
        }
        per_member.push(rows);
    }
    (0..windows.len())
        .map(|i| EnsemblePrediction::new(per_member.iter().map(|rows| rows[i].clone()).collect()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SyntheticConfig;
    use crate::models::argmax;

    fn tiny_arch() -> ArchitectureConfig {
        ArchitectureConfig {
            filters: vec![4, 6],
            kernels: vec![5, 3],
            head_hidden: 8,
            ..ArchitectureConfig::default()
        }
    }

    fn data() -> crate::data::SplitDataset {
        SyntheticConfig {
            windows_per_class: 30,
            length: 32,
            ..SyntheticConfig::default()
        }
        .generate()
        .unwrap()
    }

    fn quick(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 16,
            per_class: 5,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let d = data();
        let arch = Architecture::base(&tiny_arch(), 6, 32, 1.0).unwrap();
        let out = train_pretext(&d.train.unlabeled(), arch.clone(), &TransformParams::default(), &quick(0)).unwrap();
        let init = Network::new(arch.with_head(Head::Pretext { tasks: 8 }), derive_seed(0, 10)).unwrap();
        assert_eq!(out.network, init);
        assert!(out.history.is_empty());
    }

    #[test]
    fn pretext_is_deterministic_and_learns() {
        let d = data();
        let arch = Architecture::base(&tiny_arch(), 6, 32, 1.0).unwrap();
        let cfg = quick(3);
        let a = train_pretext(&d.train.unlabeled(), arch.clone(), &TransformParams::default(), &cfg).unwrap();
        let b = train_pretext(&d.train.unlabeled(), arch, &TransformParams::default(), &cfg).unwrap();
        assert_eq!(a.network, b.network);
        assert_eq!(a.history.len(), 3);
        assert!(a.history.iter().all(|h| h.holdout_loss.is_some()));
    }

    #[test]
    fn frozen_layers_stay_put() {
        let d = data();
        let base = Network::new(Architecture::base(&tiny_arch(), 6, 32, 1.0).unwrap(), 5).unwrap();
        let out = train_supervised(&base, &d.train, 1, &quick(2)).unwrap();
        assert_eq!(out.network.params[0].value, base.params[0].value);
        assert_eq!(out.network.params[1].value, base.params[1].value);
        assert_ne!(out.network.params[2].value, base.params[2].value);
    }

    #[test]
    fn supervised_fits_separable_data() {
        let d = SyntheticConfig {
            windows_per_class: 30,
            length: 32,
            mixing: 0.0,
            noise: 0.2,
            ..SyntheticConfig::default()
        }
        .generate()
        .unwrap();
        let base = Network::new(Architecture::base(&tiny_arch(), 6, 32, 1.0).unwrap(), 5).unwrap();
        let cfg = TrainConfig {
            learning_rate: 3e-3,
            ..quick(40)
        };
        let out = train_supervised(&base, &d.train, 0, &cfg).unwrap();
        let preds = out.network.forward_classifier(&d.train.windows).unwrap();
        let correct = preds.iter().zip(&d.train.labels).filter(|(p, &y)| argmax(&p.probs) == y).count();
        assert!(correct as f64 / d.train.len() as f64 > 0.95, "{correct}/{}", d.train.len());
        assert!(out.history.last().unwrap().train_loss < out.history[0].train_loss);
    }

    #[test]
    fn empty_labels_rejected() {
        let d = data();
        let base = Network::new(Architecture::base(&tiny_arch(), 6, 32, 1.0).unwrap(), 5).unwrap();
        let empty = d.train.subset(&[]);
        assert!(train_supervised(&base, &empty, 0, &quick(1)).is_err());
    }

    #[test]
    fn member_widths_are_reproducible_and_in_range() {
        let cfg = EnsembleConfig {
            members: 5,
            seed: 3,
            ..EnsembleConfig::default()
        };
        let w: Vec<f64> = (0..5).map(|m| cfg.member_width(m)).collect();
        assert_eq!(w, (0..5).map(|m| cfg.member_width(m)).collect::<Vec<_>>());
        assert!(w.iter().all(|r| (0.75..1.25).contains(r)));
        let seeds: std::collections::HashSet<u64> = (0..5).map(|m| cfg.member_seed(m)).collect();
        assert_eq!(seeds.len(), 5);
    }

    #[test]
    fn members_are_independent_of_training_order() {
        let d = data();
        let cfg = EnsembleConfig {
            members: 2,
            ..EnsembleConfig::default()
        };
        let recipe = MemberRecipe {
            arch: tiny_arch(),
            transforms: TransformParams::default(),
            pretext: quick(1),
            supervised: quick(1),
        };
        let d_u = d.train.unlabeled();
        let later = train_member(&d_u, &d.train, &cfg, &recipe, 1).unwrap();
        let all = train_ensemble(&d_u, &d.train, &cfg, &recipe).unwrap();
        assert_eq!(all[1].classifier.network, later.classifier.network);
        assert_eq!(all[1].info, later.info);
    }

    #[test]
    fn identical_members_give_identical_rows() {
        let d = data();
        let arch = Architecture::base(&tiny_arch(), 6, 32, 1.0).unwrap().with_head(Head::Classifier { classes: 3 });
        let net = Network::new(arch, 1).unwrap();
        let preds = ensemble_predict(&[net.clone(), net.clone(), net], &d.validation.windows[..4]).unwrap();
        for p in preds {
            assert_eq!(p.members(), 3);
            assert_eq!(p.row(0), p.row(2));
            assert!((p.row(1).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn class_count_mismatch_rejected() {
        let d = data();
        let base = Architecture::base(&tiny_arch(), 6, 32, 1.0).unwrap();
        let a = Network::new(base.clone().with_head(Head::Classifier { classes: 3 }), 1).unwrap();
        let b = Network::new(base.with_head(Head::Classifier { classes: 4 }), 1).unwrap();
        assert!(ensemble_predict(&[a, b], &d.validation.windows[..2]).is_err());
    }
}
