//! Ensemble distribution distillation into a Dirichlet prior network.
//!
//! The training set is every unlabeled window plus its eight transformed
//! copies. Each epoch fixes a temperature, applied to both the network's
//! concentrations and the ensemble targets, and a maximum combination depth.
//! Each sample may be replaced by a geometric-weight average of itself and up
//! to that many random partners, with targets recomputed by the ensemble.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::{SensorWindow, UnlabeledDataset};
use crate::error::{Error, Result};
use crate::models::{
    transfer_base, windows_to_tensor, Architecture, ArchitectureConfig, DirichletParameters, EnsemblePrediction,
    Head, Mode, Network, ALPHA_MAX, ALPHA_MIN,
};
use crate::numerics::special::lgamma_unchecked;
use crate::numerics::{derive_seed, seeded_rng, Adam, AdamConfig, Tape, Tensor, Var};
use crate::training::ensemble_predict_refs;
use crate::transforms::{apply, transform_seed, TransformKind, TransformParams};

/// Member probabilities are floored here before taking logarithms.
pub const TARGET_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnealSchedule {
    pub t0: f64,
    pub rate: f64,
    pub t_max: f64,
}

impl Default for AnnealSchedule {
    fn default() -> Self {
        Self {
            t0: 10.0,
            rate: 0.25,
            t_max: 10.0,
        }
    }
}

impl AnnealSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.t0 >= 1.0 && self.rate >= 0.0 && self.t_max >= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "anneal schedule needs t0 >= 1, rate >= 0, t_max >= 1 (got {self:?})"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComboConfig {
    /// Geometric weight ratio `r`.
    pub weight: f64,
    pub max_combos: usize,
    pub rate: f64,
}

impl Default for ComboConfig {
    fn default() -> Self {
        Self {
            weight: 0.5,
            max_combos: 4,
            rate: 0.05,
        }
    }
}

impl ComboConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.weight > 0.0 && self.weight <= 1.0) || self.max_combos == 0 || !(self.rate >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "combos need r in (0, 1], max_combos >= 1, rate >= 0 (got {self:?})"
            )));
        }
        Ok(())
    }
}

/// `clamp(t0 − rate·e, 1, t_max)`.
pub fn temperature_at(s: &AnnealSchedule, epoch: usize) -> f64 {
    (s.t0 - s.rate * epoch as f64).max(1.0).min(s.t_max.max(1.0))
}

/// `min(⌊rate·e⌋, max_combos)`.
pub fn combo_depth_at(c: &ComboConfig, epoch: usize) -> usize {
    let depth = (c.rate * epoch as f64).floor();
    if depth >= c.max_combos as f64 {
        c.max_combos
    } else {
        depth as usize
    }
}

/// `Σ rⁱ xᵢ / Σ rⁱ` over `i = 0..N`.
pub fn weighted_combo(samples: &[&SensorWindow], r: f64) -> Result<SensorWindow> {
    let first = samples.first().ok_or_else(|| Error::Empty("combination".into()))?;
    if !(r > 0.0) {
        return Err(Error::InvalidParameter(format!("combo weight {r} must be positive")));
    }
    if samples.len() == 1 {
        return Ok((*first).clone());
    }
    let mut acc = vec![0.0; first.values().len()];
    let mut norm = 0.0;
    let mut w = 1.0;
    for s in samples {
        if s.shape() != first.shape() {
            return Err(Error::shape("weighted_combo", &first.shape(), &s.shape()));
        }
        for (a, v) in acc.iter_mut().zip(s.values()) {
            *a += w * v;
        }
        norm += w;
        w *= r;
    }
    for a in &mut acc {
        *a /= norm;
    }
    let [c, t] = first.shape();
    SensorWindow::new(c, t, acc)
}

/// `p^(1/t)` renormalized.
pub fn temper(p: &[f64], t: f64) -> Vec<f64> {
    let powered: Vec<f64> = if t == 1.0 {
        p.to_vec()
    } else {
        p.iter().map(|v| v.powf(1.0 / t)).collect()
    };
    let total: f64 = powered.iter().sum();
    powered.into_iter().map(|v| v / total).collect()
}

/// Floors at [`TARGET_FLOOR`] and renormalizes.
pub fn floor_probabilities(p: &[f64]) -> Vec<f64> {
    let floored: Vec<f64> = p.iter().map(|v| v.max(TARGET_FLOOR)).collect();
    let total: f64 = floored.iter().sum();
    floored.into_iter().map(|v| v / total).collect()
}

/// Mean over members of `ln π_m` after tempering and flooring; the only
/// statistic of the targets the loss depends on.
pub fn mean_log_targets(targets: &EnsemblePrediction, t: f64) -> Vec<f64> {
    let mut acc = vec![0.0; targets.classes()];
    for row in targets.rows() {
        for (a, p) in acc.iter_mut().zip(floor_probabilities(&temper(row, t))) {
            *a += p.ln();
        }
    }
    let m = targets.members() as f64;
    acc.into_iter().map(|v| v / m).collect()
}

/// Mean negative log Dirichlet density of the tempered member distributions.
pub fn dirichlet_nll(alpha: &DirichletParameters, targets: &EnsemblePrediction, t: f64) -> Result<f64> {
    if alpha.alpha.len() != targets.classes() {
        return Err(Error::shape("dirichlet_nll", &[alpha.alpha.len()], &[targets.classes()]));
    }
    if !(t >= 1.0) {
        return Err(Error::InvalidParameter(format!("target temperature {t} must be at least 1")));
    }
    let s = alpha.concentration();
    let log_pi = mean_log_targets(targets, t);
    let mut nll = -lgamma_unchecked(s);
    for (&a, lp) in alpha.alpha.iter().zip(&log_pi) {
        nll += lgamma_unchecked(a) - (a - 1.0) * lp;
    }
    if !nll.is_finite() {
        return Err(Error::non_finite("Dirichlet NLL"));
    }
    Ok(nll)
}

/// Batch-mean Dirichlet NLL on the tape. `logits` is `[B, K]`,
/// `mean_log_pi` a `[B, K]` constant from [`mean_log_targets`].
pub fn dirichlet_nll_tape(tape: &mut Tape, logits: Var, mean_log_pi: Var, temperature: f64) -> Result<Var> {
    let z = tape.scale(logits, 1.0 / temperature);
    let z = tape.clamp(z, ALPHA_MIN.ln(), ALPHA_MAX.ln());
    let alpha = tape.exp(z);
    let s = tape.sum_rows(alpha)?;
    let lg_s = tape.lgamma(s)?;
    let lg_a = tape.lgamma(alpha)?;
    let lg_a = tape.sum_rows(lg_a)?;
    let am1 = tape.add_scalar(alpha, -1.0);
    let cross = tape.mul(am1, mean_log_pi)?;
    let cross = tape.sum_rows(cross)?;
    let a = tape.sub(lg_a, lg_s)?;
    let per_sample = tape.sub(a, cross)?;
    tape.mean(per_sample)
}

/// The augmented set: every window followed by its eight transformed copies.
#[derive(Debug, Clone)]
pub struct DistillationDataset {
    pub windows: Vec<SensorWindow>,
    /// Ensemble predictions for `windows`, computed once.
    pub targets: Vec<EnsemblePrediction>,
}

impl DistillationDataset {
    pub fn build(
        members: &[Network],
        d_u: &UnlabeledDataset,
        transforms: Option<&TransformParams>,
        seed: u64,
    ) -> Result<Self> {
        if d_u.is_empty() {
            return Err(Error::Empty("distillation input".into()));
        }
        let per = if transforms.is_some() { 9 } else { 1 };
        let mut windows = Vec::with_capacity(per * d_u.len());
        for (i, x) in d_u.windows.iter().enumerate() {
            windows.push(x.clone());
            if let Some(p) = transforms {
                for kind in TransformKind::ALL {
                    windows.push(apply(kind, x, p, transform_seed(seed, i, kind))?);
                }
            }
        }
        let refs: Vec<&SensorWindow> = windows.iter().collect();
        let targets = ensemble_predict_refs(members, &refs)?;
        Ok(Self { windows, targets })
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Caps the batches drawn per epoch; `None` makes each epoch a full pass.
    pub batches_per_epoch: Option<usize>,
    pub learning_rate: f64,
    pub seed: u64,
    /// Convolution layers frozen after copying the pretext base.
    pub freeze_layers: usize,
    pub use_transforms: bool,
    pub use_combos: bool,
    pub use_pretrained: bool,
    /// Dropout rate of the prior network; `None` keeps the architecture's.
    pub dropout: Option<f64>,
    pub schedule: AnnealSchedule,
    pub combos: ComboConfig,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 64,
            batches_per_epoch: None,
            learning_rate: 1e-3,
            seed: 0,
            freeze_layers: 0,
            use_transforms: true,
            use_combos: true,
            use_pretrained: true,
            dropout: None,
            schedule: AnnealSchedule::default(),
            combos: ComboConfig::default(),
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        self.combos.validate()?;
        if self.dropout.is_some_and(|p| !(0.0..1.0).contains(&p)) {
            return Err(Error::InvalidParameter("distill dropout must be in [0, 1)".into()));
        }
        if self.batch_size == 0 || self.batches_per_epoch == Some(0) || !(self.learning_rate > 0.0) {
            return Err(Error::InvalidParameter(
                "distillation needs positive batch_size, batches_per_epoch and learning_rate".into(),
            ));
        }
        Ok(())
    }

    pub fn depth_at(&self, epoch: usize) -> usize {
        if self.use_combos {
            combo_depth_at(&self.combos, epoch)
        } else {
            0
        }
    }
}

/// One row of the distillation log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistillEpoch {
    pub epoch: usize,
    pub temperature: f64,
    pub combo_depth: usize,
    pub mean_nll: f64,
    /// Samples in this epoch that were replaced by a combination.
    pub combos: usize,
}

/// Draws the batch inputs for one step: for each index, `n ~ U{0..depth}`
/// random partners are mixed in. Returns the windows, the positions that
/// need fresh targets, and the number of combinations.
pub fn draw_batch(
    data: &DistillationDataset,
    batch: &[usize],
    depth: usize,
    r: f64,
    rng: &mut crate::numerics::Rng,
) -> Result<(Vec<SensorWindow>, Vec<bool>)> {
    let mut windows = Vec::with_capacity(batch.len());
    let mut fresh = Vec::with_capacity(batch.len());
    for &i in batch {
        let n = if depth == 0 { 0 } else { rng.random_range(0..=depth) };
        if n == 0 {
            windows.push(data.windows[i].clone());
            fresh.push(false);
        } else {
            let mut parts = vec![&data.windows[i]];
            for _ in 0..n {
                parts.push(&data.windows[rng.random_range(0..data.len())]);
            }
            windows.push(weighted_combo(&parts, r)?);
            fresh.push(true);
        }
    }
    Ok((windows, fresh))
}

/// Builds the prior network that distillation starts from: a width-1 base,
/// optionally copied from pretext weights.
pub fn initial_network(
    arch: &ArchitectureConfig,
    shape: [usize; 2],
    classes: usize,
    pretrained: Option<&Network>,
    cfg: &DistillConfig,
) -> Result<Network> {
    let mut base = match pretrained {
        Some(p) if cfg.use_pretrained => p.arch.clone(),
        _ => Architecture::base(arch, shape[0], shape[1], 1.0)?,
    };
    if let Some(p) = cfg.dropout {
        base.dropout = p;
    }
    let mut net = Network::new(base.with_head(Head::Dirichlet { classes }), derive_seed(cfg.seed, 30))?;
    if let Some(p) = pretrained.filter(|_| cfg.use_pretrained) {
        transfer_base(p, &mut net, cfg.freeze_layers)?;
    }
    Ok(net)
}

/// Runs the distillation loop. `on_epoch` sees every log row as soon as the
/// epoch ends, so logs survive a later divergence.
pub fn distill(
    members: &[Network],
    data: &DistillationDataset,
    mut net: Network,
    cfg: &DistillConfig,
    mut on_epoch: impl FnMut(&DistillEpoch) -> Result<()>,
) -> Result<Network> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("distillation dataset".into()));
    }
    let classes = net
        .classes()
        .ok_or_else(|| Error::ArchitectureMismatch("distillation needs a Dirichlet head".into()))?;
    if data.targets[0].classes() != classes {
        return Err(Error::ArchitectureMismatch(format!(
            "ensemble predicts {} classes, prior network {classes}",
            data.targets[0].classes()
        )));
    }
    let mut rng = seeded_rng(derive_seed(cfg.seed, 31));
    let mut opt = Adam::new(AdamConfig::with_learning_rate(cfg.learning_rate))?;
    for epoch in 0..cfg.epochs {
        let t = temperature_at(&cfg.schedule, epoch);
        let depth = cfg.depth_at(epoch);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng);
        let mut batches: Vec<&[usize]> = order.chunks(cfg.batch_size).collect();
        if let Some(cap) = cfg.batches_per_epoch {
            batches.truncate(cap);
        }
        let (mut total, mut seen, mut combos) = (0.0, 0usize, 0usize);
        for batch in batches {
            let (windows, fresh) = draw_batch(data, batch, depth, cfg.combos.weight, &mut rng)?;
            let needing: Vec<&SensorWindow> = windows.iter().zip(&fresh).filter(|(_, f)| **f).map(|(w, _)| w).collect();
            let mut fresh_targets = ensemble_predict_refs(members, &needing)?.into_iter();
            let mut log_pi = Vec::with_capacity(batch.len() * classes);
            for (&i, &f) in batch.iter().zip(&fresh) {
                let row = if f {
                    mean_log_targets(&fresh_targets.next().expect("one per combo"), t)
                } else {
                    mean_log_targets(&data.targets[i], t)
                };
                log_pi.extend(row);
            }
            combos += fresh.iter().filter(|f| **f).count();

            let mut tape = Tape::new();
            let vars = net.bind(&mut tape);
            let refs: Vec<&SensorWindow> = windows.iter().collect();
            let x = tape.constant(windows_to_tensor(&refs)?);
            let z = net.logits(&mut tape, &vars, x, &mut Mode::Train(&mut rng))?;
            let lp = tape.constant(Tensor::new(vec![batch.len(), classes], log_pi)?);
            let loss = dirichlet_nll_tape(&mut tape, z, lp, t)?;
            let value = tape.value(loss).data()[0];
            if !value.is_finite() {
                return Err(Error::Divergence {
                    stage: "distill".into(),
                    epoch,
                    loss: value,
                });
            }
            let grads = tape.backward(loss)?;
            let g: Vec<Option<&Tensor>> = vars.iter().map(|&v| grads.get(v)).collect();
            opt.step(&mut net.params, &g)?;
            total += value * batch.len() as f64;
            seen += batch.len();
        }
        on_epoch(&DistillEpoch {
            epoch,
            temperature: t,
            combo_depth: depth,
            mean_nll: total / seen as f64,
            combos,
        })?;
    }
    Ok(net)
}
