//! Temporal-convolution networks: a shared convolutional base with a
//! classification/Dirichlet head or eight binary pretext heads.

pub mod checkpoint;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::SensorWindow;
use crate::error::{Error, Result};
use crate::numerics::tape::{log_softmax_in_place, sigmoid, softmax_in_place};
use crate::numerics::{derive_seed, seeded_rng, Param, Rng, Tape, Tensor, Var};

/// Smallest and largest Dirichlet concentration a prior network may emit.
pub const ALPHA_MIN: f64 = 1e-6;
pub const ALPHA_MAX: f64 = 1e6;

/// Inference batch size.
const EVAL_CHUNK: usize = 128;

/// Declared default layer sizes for the base and the heads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchitectureConfig {
    pub filters: Vec<usize>,
    pub kernels: Vec<usize>,
    pub stride: usize,
    pub dropout: f64,
    pub head_hidden: usize,
}

impl Default for ArchitectureConfig {
    fn default() -> Self {
        Self {
            filters: vec![32, 64, 96],
            kernels: vec![24, 16, 8],
            stride: 1,
            dropout: 0.1,
            head_hidden: 256,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Head {
    /// Base only; the output is the pooled feature vector.
    Features,
    Classifier { classes: usize },
    Dirichlet { classes: usize },
    Pretext { tasks: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub in_channels: usize,
    pub timesteps: usize,
    pub width: f64,
    pub conv: Vec<ConvLayer>,
    pub dropout: f64,
    pub head_hidden: usize,
    pub head: Head,
}

impl Architecture {
    /// Base layout for inputs of `[channels, timesteps]` with every filter
    /// and hidden count scaled by `width` and rounded up.
    pub fn base(cfg: &ArchitectureConfig, channels: usize, timesteps: usize, width: f64) -> Result<Self> {
        if !(width > 0.0) {
            return Err(Error::InvalidParameter(format!("width multiplier {width} must be positive")));
        }
        if cfg.filters.len() != cfg.kernels.len() || cfg.filters.is_empty() {
            return Err(Error::InvalidParameter("filters and kernels must be non-empty and equally long".into()));
        }
        if !(0.0..1.0).contains(&cfg.dropout) || cfg.stride == 0 || cfg.head_hidden == 0 {
            return Err(Error::InvalidParameter("dropout in [0, 1), positive stride and head_hidden required".into()));
        }
        let scaled = |n: usize| ((n as f64 * width).ceil() as usize).max(1);
        let conv: Vec<ConvLayer> = cfg
            .filters
            .iter()
            .zip(&cfg.kernels)
            .map(|(&f, &k)| ConvLayer {
                filters: scaled(f),
                kernel: k,
                stride: cfg.stride,
            })
            .collect();
        let arch = Self {
            in_channels: channels,
            timesteps,
            width,
            conv,
            dropout: cfg.dropout,
            head_hidden: scaled(cfg.head_hidden),
            head: Head::Features,
        };
        arch.output_length()?;
        Ok(arch)
    }

    pub fn with_head(mut self, head: Head) -> Self {
        self.head = head;
        self
    }

    /// Time steps left after the last convolution.
    pub fn output_length(&self) -> Result<usize> {
        let mut t = self.timesteps;
        for layer in &self.conv {
            if t < layer.kernel {
                return Err(Error::InvalidParameter(format!(
                    "input of {} timesteps is shorter than the receptive field",
                    self.timesteps
                )));
            }
            t = (t - layer.kernel) / layer.stride + 1;
        }
        Ok(t)
    }

    pub fn features(&self) -> usize {
        self.conv.last().map_or(self.in_channels, |l| l.filters)
    }

    pub fn filters(&self) -> Vec<usize> {
        self.conv.iter().map(|l| l.filters).collect()
    }

    pub fn same_base(&self, other: &Architecture) -> bool {
        self.in_channels == other.in_channels && self.timesteps == other.timesteps && self.conv == other.conv
    }
}

/// Network weights in a fixed order: conv weight/bias pairs, then the head.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub arch: Architecture,
    pub params: Vec<Param>,
}

/// Forward-pass mode; dropout is active only in training.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut Rng),
}

/// Probabilities over `K` classes.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalDistribution {
    pub probs: Vec<f64>,
}

impl CategoricalDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        let total: f64 = probs.iter().sum();
        if probs.iter().any(|p| !(*p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!("not a distribution (sum {total})")));
        }
        Ok(Self { probs })
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.probs)
    }
}

/// Concentration parameters of a Dirichlet over the class simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct DirichletParameters {
    pub alpha: Vec<f64>,
}

impl DirichletParameters {
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if alpha.is_empty() {
            return Err(Error::Empty("Dirichlet parameters".into()));
        }
        if let Some(&bad) = alpha.iter().find(|a| !(**a > 0.0) || !a.is_finite()) {
            return Err(Error::Domain {
                function: "Dirichlet concentration",
                value: bad,
            });
        }
        Ok(Self { alpha })
    }

    /// `S = Σ αᵢ`.
    pub fn concentration(&self) -> f64 {
        self.alpha.iter().sum()
    }

    /// `μᵢ = αᵢ / S`.
    pub fn mean(&self) -> Vec<f64> {
        let s = self.concentration();
        self.alpha.iter().map(|a| a / s).collect()
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.alpha)
    }
}

/// Per-sample member distributions, kept separate (not averaged) so their
/// diversity survives into distillation. Row `m` is member `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsemblePrediction {
    members: usize,
    classes: usize,
    probs: Vec<f64>,
}

impl EnsemblePrediction {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let members = rows.len();
        let classes = rows.first().map_or(0, Vec::len);
        if members == 0 || classes == 0 {
            return Err(Error::Empty("ensemble prediction".into()));
        }
        let mut probs = Vec::with_capacity(members * classes);
        for row in rows {
            if row.len() != classes {
                return Err(Error::shape("ensemble prediction", &[classes], &[row.len()]));
            }
            CategoricalDistribution::new(row.clone())?;
            probs.extend(row);
        }
        Ok(Self {
            members,
            classes,
            probs,
        })
    }

    pub fn members(&self) -> usize {
        self.members
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.probs[m * self.classes..(m + 1) * self.classes]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.probs.chunks_exact(self.classes)
    }

    /// Member-mean distribution, the ensemble's point prediction.
    pub fn mean(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.classes];
        for row in self.rows() {
            for (m, p) in mean.iter_mut().zip(row) {
                *m += p;
            }
        }
        for m in &mut mean {
            *m /= self.members as f64;
        }
        mean
    }
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

/// `α = exp(logits / T)` clamped to `[ALPHA_MIN, ALPHA_MAX]`.
pub fn alpha_from_logits(logits: &[f64], temperature: f64) -> Result<DirichletParameters> {
    if !(temperature >= 1.0) {
        return Err(Error::InvalidParameter(format!("temperature {temperature} must be at least 1")));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::non_finite("prior network logits"));
    }
    let (lo, hi) = (ALPHA_MIN.ln(), ALPHA_MAX.ln());
    DirichletParameters::new(logits.iter().map(|z| (z / temperature).clamp(lo, hi).exp()).collect())
}

fn truncated_normal(rng: &mut Rng, std: f64) -> f64 {
    loop {
        let z: f64 = StandardNormal.sample(rng);
        if z.abs() <= 2.0 {
            return z * std;
        }
    }
}

fn init_tensor(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Tensor {
    let std = (2.0 / fan_in as f64).sqrt();
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| truncated_normal(rng, std)).collect()).expect("shape matches")
}

pub fn windows_to_tensor(windows: &[&SensorWindow]) -> Result<Tensor> {
    let first = windows.first().ok_or_else(|| Error::Empty("input batch".into()))?;
    let [c, t] = first.shape();
    let mut data = Vec::with_capacity(windows.len() * c * t);
    for w in windows {
        if w.shape() != [c, t] {
            return Err(Error::shape("input batch", &[c, t], &w.shape()));
        }
        data.extend_from_slice(w.values());
    }
    Tensor::new(vec![windows.len(), c, t], data)
}

impl Network {
    /// Initializes every parameter with seeded truncated-normal fan-in
    /// scaling; biases start at zero.
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        arch.output_length()?;
        let mut rng = seeded_rng(derive_seed(seed, 0x1417));
        let mut params = Vec::new();
        let mut chans = arch.in_channels;
        for (i, layer) in arch.conv.iter().enumerate() {
            let fan_in = chans * layer.kernel;
            params.push(Param::new(
                format!("conv{i}.weight"),
                init_tensor(&[layer.filters, chans, layer.kernel], fan_in, &mut rng),
            ));
            params.push(Param::new(format!("conv{i}.bias"), Tensor::zeros(&[layer.filters])));
            chans = layer.filters;
        }
        let feats = arch.features();
        let hidden = arch.head_hidden;
        let mut dense = |prefix: &str, inputs: usize, outputs: usize, rng: &mut Rng| {
            params.push(Param::new(format!("{prefix}.weight"), init_tensor(&[outputs, inputs], inputs, rng)));
            params.push(Param::new(format!("{prefix}.bias"), Tensor::zeros(&[outputs])));
        };
        match arch.head {
            Head::Features => {}
            Head::Classifier { classes } | Head::Dirichlet { classes } => {
                if classes < 2 {
                    return Err(Error::InvalidParameter(format!("{classes} classes")));
                }
                dense("head.hidden", feats, hidden, &mut rng);
                dense("head.out", hidden, classes, &mut rng);
            }
            Head::Pretext { tasks } => {
                for j in 0..tasks {
                    dense(&format!("pretext{j}.hidden"), feats, hidden, &mut rng);
                    dense(&format!("pretext{j}.out"), hidden, 1, &mut rng);
                }
            }
        }
        Ok(Self { arch, params })
    }

    pub fn conv_layers(&self) -> usize {
        self.arch.conv.len()
    }

    pub fn classes(&self) -> Option<usize> {
        match self.arch.head {
            Head::Classifier { classes } | Head::Dirichlet { classes } => Some(classes),
            _ => None,
        }
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    /// Sets the output layer of the head to zero (uniform predictions).
    pub fn zero_output_layer(&mut self) {
        for p in &mut self.params {
            if p.name.ends_with(".out.weight") || p.name.ends_with(".out.bias") {
                p.value.data_mut().fill(0.0);
            }
        }
    }

    /// Places every parameter on the tape; frozen ones as constants.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| {
                if p.frozen {
                    tape.constant(p.value.clone())
                } else {
                    tape.leaf(p.value.clone())
                }
            })
            .collect()
    }

    /// Places every parameter on the tape as a constant.
    pub fn bind_constant(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|p| tape.constant(p.value.clone())).collect()
    }

    fn head_vars<'v>(&self, vars: &'v [Var], prefix: &str) -> Result<&'v [Var]> {
        let i = self
            .params
            .iter()
            .position(|p| p.name == format!("{prefix}.hidden.weight"))
            .ok_or_else(|| Error::ArchitectureMismatch(format!("network has no `{prefix}` head")))?;
        Ok(&vars[i..i + 4])
    }

    /// Convolution blocks followed by global max pooling: `[B, C, T] -> [B, F]`.
    pub fn features(&self, tape: &mut Tape, vars: &[Var], x: Var, mode: &mut Mode<'_>) -> Result<Var> {
        let xs = tape.value(x).shape();
        if xs.len() != 3 || xs[1] != self.arch.in_channels || xs[2] != self.arch.timesteps {
            return Err(Error::shape(
                "network input",
                xs,
                &[0, self.arch.in_channels, self.arch.timesteps],
            ));
        }
        let mut h = x;
        for (i, layer) in self.arch.conv.iter().enumerate() {
            h = tape.conv1d(h, vars[2 * i], vars[2 * i + 1], layer.stride)?;
            h = tape.relu(h);
            if let Mode::Train(rng) = mode {
                h = tape.dropout(h, self.arch.dropout, rng)?;
            }
        }
        tape.max_pool_time(h)
    }

    fn mlp(&self, tape: &mut Tape, head: &[Var], feats: Var, mode: &mut Mode<'_>) -> Result<Var> {
        let mut h = tape.linear(feats, head[0], head[1])?;
        h = tape.relu(h);
        if let Mode::Train(rng) = mode {
            h = tape.dropout(h, self.arch.dropout, rng)?;
        }
        tape.linear(h, head[2], head[3])
    }

    /// Class logits `[B, K]` of a classifier or prior network.
    pub fn logits(&self, tape: &mut Tape, vars: &[Var], x: Var, mode: &mut Mode<'_>) -> Result<Var> {
        if self.classes().is_none() {
            return Err(Error::ArchitectureMismatch("network has no class head".into()));
        }
        let head = self.head_vars(vars, "head")?;
        let feats = self.features(tape, vars, x, mode)?;
        self.mlp(tape, head, feats, mode)
    }

    /// Logit `[n, 1]` of pretext head `task` applied to feature rows.
    pub fn pretext_logit(&self, tape: &mut Tape, vars: &[Var], feats: Var, task: usize, mode: &mut Mode<'_>) -> Result<Var> {
        let head = self.head_vars(vars, &format!("pretext{task}"))?;
        self.mlp(tape, head, feats, mode)
    }

    fn pretext_tasks(&self) -> Result<usize> {
        match self.arch.head {
            Head::Pretext { tasks } => Ok(tasks),
            _ => Err(Error::ArchitectureMismatch("network has no pretext heads".into())),
        }
    }

    /// Evaluation-mode logits for a set of windows, batched internally.
    pub fn predict_logits(&self, windows: &[SensorWindow]) -> Result<Vec<Vec<f64>>> {
        let refs: Vec<&SensorWindow> = windows.iter().collect();
        self.predict_logits_refs(&refs)
    }

    pub fn predict_logits_refs(&self, windows: &[&SensorWindow]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(windows.len());
        for chunk in windows.chunks(EVAL_CHUNK) {
            let mut tape = Tape::new();
            let vars = self.bind_constant(&mut tape);
            let x = tape.constant(windows_to_tensor(chunk)?);
            let z = self.logits(&mut tape, &vars, x, &mut Mode::Eval)?;
            let t = tape.value(z);
            out.extend((0..t.rows()).map(|i| t.row(i).to_vec()));
        }
        Ok(out)
    }

    /// Softmax class distributions.
    pub fn forward_classifier(&self, windows: &[SensorWindow]) -> Result<Vec<CategoricalDistribution>> {
        Ok(self
            .predict_logits(windows)?
            .into_iter()
            .map(|mut z| {
                softmax_in_place(&mut z, 1.0);
                CategoricalDistribution { probs: z }
            })
            .collect())
    }

    /// Log-softmax of the logits.
    pub fn log_probs(&self, windows: &[SensorWindow]) -> Result<Vec<Vec<f64>>> {
        Ok(self
            .predict_logits(windows)?
            .into_iter()
            .map(|mut z| {
                log_softmax_in_place(&mut z, 1.0);
                z
            })
            .collect())
    }

    /// Dirichlet parameters `α = exp(logits / T)`.
    pub fn forward_dirichlet(&self, windows: &[SensorWindow], temperature: f64) -> Result<Vec<DirichletParameters>> {
        if !(temperature >= 1.0) {
            return Err(Error::InvalidParameter(format!("temperature {temperature} must be at least 1")));
        }
        self.predict_logits(windows)?
            .iter()
            .map(|z| alpha_from_logits(z, temperature))
            .collect()
    }

    /// Probability that each transformation was applied, per window.
    pub fn forward_pretext(&self, windows: &[SensorWindow]) -> Result<Vec<Vec<f64>>> {
        let tasks = self.pretext_tasks()?;
        let mut out = Vec::with_capacity(windows.len());
        let refs: Vec<&SensorWindow> = windows.iter().collect();
        for chunk in refs.chunks(EVAL_CHUNK) {
            let mut tape = Tape::new();
            let vars = self.bind_constant(&mut tape);
            let x = tape.constant(windows_to_tensor(chunk)?);
            let feats = self.features(&mut tape, &vars, x, &mut Mode::Eval)?;
            let mut cols = Vec::with_capacity(tasks);
            for j in 0..tasks {
                let z = self.pretext_logit(&mut tape, &vars, feats, j, &mut Mode::Eval)?;
                cols.push(tape.value(z).data().to_vec());
            }
            for i in 0..chunk.len() {
                out.push(cols.iter().map(|c| sigmoid(c[i])).collect());
            }
        }
        Ok(out)
    }
}

/// Builds a base network (no head) for `[channels, timesteps]` inputs.
pub fn build_base(cfg: &ArchitectureConfig, channels: usize, timesteps: usize, width: f64, seed: u64) -> Result<Network> {
    Network::new(Architecture::base(cfg, channels, timesteps, width)?, seed)
}

/// Copies the convolutional weights of `src` into `dst` and freezes the
/// first `freeze_layers` convolution layers; head weights are untouched.
pub fn transfer_base(src: &Network, dst: &mut Network, freeze_layers: usize) -> Result<()> {
    if !src.arch.same_base(&dst.arch) {
        return Err(Error::ArchitectureMismatch(format!(
            "source base {:?} vs destination base {:?}",
            src.arch.filters(),
            dst.arch.filters()
        )));
    }
    let layers = src.conv_layers();
    if freeze_layers > layers {
        return Err(Error::InvalidParameter(format!(
            "cannot freeze {freeze_layers} of {layers} convolution layers"
        )));
    }
    for (i, (s, d)) in src.params.iter().zip(dst.params.iter_mut()).take(2 * layers).enumerate() {
        debug_assert_eq!(s.name, d.name);
        d.value = s.value.clone();
        d.frozen = i / 2 < freeze_layers;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    fn small_cfg() -> ArchitectureConfig {
        ArchitectureConfig {
            filters: vec![4, 6, 8],
            kernels: vec![5, 4, 3],
            stride: 1,
            dropout: 0.1,
            head_hidden: 10,
        }
    }

    fn windows(n: usize, seed: u64) -> Vec<SensorWindow> {
        let mut rng = seeded_rng(seed);
        (0..n)
            .map(|_| SensorWindow::new(6, 24, (0..6 * 24).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap())
            .collect()
    }

    #[test]
    fn width_scaling_uses_ceiling() {
        let cfg = ArchitectureConfig::default();
        assert_eq!(Architecture::base(&cfg, 6, 128, 1.0).unwrap().filters(), vec![32, 64, 96]);
        assert_eq!(Architecture::base(&cfg, 6, 128, 0.75).unwrap().filters(), vec![24, 48, 72]);
        assert_eq!(Architecture::base(&cfg, 6, 128, 1.01).unwrap().filters(), vec![33, 65, 97]);
    }

    #[test]
    fn receptive_field_check() {
        let cfg = ArchitectureConfig::default();
        assert!(Architecture::base(&cfg, 6, 45, 1.0).is_err());
        assert!(Architecture::base(&cfg, 6, 46, 1.0).is_ok());
    }

    #[test]
    fn same_seed_same_weights() {
        let a = build_base(&small_cfg(), 6, 24, 1.0, 3).unwrap();
        let b = build_base(&small_cfg(), 6, 24, 1.0, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, build_base(&small_cfg(), 6, 24, 1.0, 4).unwrap());
    }

    #[test]
    fn zeroed_head_is_uniform() {
        let arch = Architecture::base(&small_cfg(), 6, 24, 1.0).unwrap().with_head(Head::Classifier { classes: 4 });
        let mut net = Network::new(arch, 1).unwrap();
        net.zero_output_layer();
        let out = net.forward_classifier(&windows(5, 1)).unwrap();
        assert_eq!(out.len(), 5);
        for d in out {
            assert_eq!(d.probs, vec![0.25; 4]);
        }
    }

    #[test]
    fn log_of_output_matches_log_softmax() {
        let arch = Architecture::base(&small_cfg(), 6, 24, 1.0).unwrap().with_head(Head::Classifier { classes: 3 });
        let net = Network::new(arch, 2).unwrap();
        let xs = windows(7, 2);
        let probs = net.forward_classifier(&xs).unwrap();
        let logp = net.log_probs(&xs).unwrap();
        for (p, l) in probs.iter().zip(&logp) {
            assert!((p.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (a, b) in p.probs.iter().zip(l) {
                assert!((a.ln() - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn dirichlet_head_temperature() {
        let d = alpha_from_logits(&[0.0, 0.0, 0.0], 4.0).unwrap();
        assert_eq!(d.alpha, vec![1.0; 3]);
        let z = [0.7, -1.3, 2.0];
        let a1 = alpha_from_logits(&z, 1.0).unwrap();
        for (a, v) in a1.alpha.iter().zip(z) {
            assert!((a - v.exp()).abs() < 1e-15);
        }
        let a2 = alpha_from_logits(&z, 2.0).unwrap();
        for (a, b) in a1.alpha.iter().zip(&a2.alpha) {
            assert!((a.ln() / 2.0 - b.ln()).abs() < 1e-12);
        }
        let extreme = alpha_from_logits(&[1e4, -1e4], 1.0).unwrap();
        assert!((extreme.alpha[0] - ALPHA_MAX).abs() / ALPHA_MAX < 1e-12);
        assert!((extreme.alpha[1] - ALPHA_MIN).abs() / ALPHA_MIN < 1e-12);
        assert!(alpha_from_logits(&[f64::NAN, 0.0], 1.0).is_err());
        assert!(alpha_from_logits(&[0.0, 0.0], 0.5).is_err());
        let mu: f64 = a1.mean().iter().sum();
        assert!((mu - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pretext_heads() {
        let arch = Architecture::base(&small_cfg(), 6, 24, 1.0).unwrap().with_head(Head::Pretext { tasks: 8 });
        let mut net = Network::new(arch, 5).unwrap();
        net.zero_output_layer();
        let out = net.forward_pretext(&windows(3, 5)).unwrap();
        assert_eq!(out.len(), 3);
        for row in out {
            assert_eq!(row, vec![0.5; 8]);
        }
    }

    #[test]
    fn transfer_copies_and_freezes() {
        let base = Architecture::base(&small_cfg(), 6, 24, 1.0).unwrap();
        let src = Network::new(base.clone().with_head(Head::Pretext { tasks: 8 }), 1).unwrap();
        let mut dst = Network::new(base.with_head(Head::Classifier { classes: 3 }), 2).unwrap();
        transfer_base(&src, &mut dst, 2).unwrap();
        for i in 0..6 {
            assert_eq!(dst.params[i].value, src.params[i].value);
            assert_eq!(dst.params[i].frozen, i < 4);
        }
        assert!(dst.params[6..].iter().all(|p| !p.frozen));
        assert!(transfer_base(&src, &mut dst, 4).is_err());
        let other = Network::new(
            Architecture::base(&small_cfg(), 6, 24, 1.2).unwrap().with_head(Head::Classifier { classes: 3 }),
            2,
        )
        .unwrap();
        let mut other = other;
        assert!(matches!(transfer_base(&src, &mut other, 0), Err(Error::ArchitectureMismatch(_))));
    }

    #[test]
    fn transfer_then_features_match() {
        let base = Architecture::base(&small_cfg(), 6, 24, 1.0).unwrap();
        let src = Network::new(base.clone().with_head(Head::Pretext { tasks: 8 }), 1).unwrap();
        let mut dst = Network::new(base.with_head(Head::Dirichlet { classes: 3 }), 2).unwrap();
        transfer_base(&src, &mut dst, 0).unwrap();
        let xs = windows(4, 9);
        let feats = |net: &Network| {
            let mut tape = Tape::new();
            let vars = net.bind_constant(&mut tape);
            let refs: Vec<&SensorWindow> = xs.iter().collect();
            let x = tape.constant(windows_to_tensor(&refs).unwrap());
            let f = net.features(&mut tape, &vars, x, &mut Mode::Eval).unwrap();
            tape.value(f).clone()
        };
        assert_eq!(feats(&src), feats(&dst));
    }

    #[test]
    fn input_shape_mismatch() {
        let arch = Architecture::base(&small_cfg(), 6, 24, 1.0).unwrap().with_head(Head::Classifier { classes: 3 });
        let net = Network::new(arch, 1).unwrap();
        let bad = vec![SensorWindow::zeros(5, 24)];
        assert!(matches!(net.predict_logits(&bad), Err(Error::Shape { .. })));
    }
}
