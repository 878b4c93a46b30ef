//! Signal transformations used both as pretext-task targets and as
//! distillation-time augmentation.

use std::f64::consts::TAU;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{modality_blocks, SensorWindow, UnlabeledDataset};
use crate::error::{Error, Result};
use crate::numerics::{derive_seed, seeded_rng, Rng};

/// The eight transformations. The discriminant is the pretext head index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    Noising = 0,
    Scaling = 1,
    Rotation = 2,
    Negation = 3,
    TimeReversal = 4,
    WindowPermutation = 5,
    TimeWarping = 6,
    ChannelShuffling = 7,
}

impl TransformKind {
    pub const ALL: [TransformKind; 8] = [
        TransformKind::Noising,
        TransformKind::Scaling,
        TransformKind::Rotation,
        TransformKind::Negation,
        TransformKind::TimeReversal,
        TransformKind::WindowPermutation,
        TransformKind::TimeWarping,
        TransformKind::ChannelShuffling,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Noising => "noising",
            Self::Scaling => "scaling",
            Self::Rotation => "rotation",
            Self::Negation => "negation",
            Self::TimeReversal => "time_reversal",
            Self::WindowPermutation => "window_permutation",
            Self::TimeWarping => "time_warping",
            Self::ChannelShuffling => "channel_shuffling",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformParams {
    /// Standard deviation of additive noise, in standardized units.
    pub noise_sigma: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    pub permutation_segments: usize,
    pub warp_knots: usize,
    pub warp_strength: f64,
}

impl Default for TransformParams {
    fn default() -> Self {
        Self {
            noise_sigma: 0.05,
            scale_min: 0.7,
            scale_max: 1.1,
            permutation_segments: 4,
            warp_knots: 4,
            warp_strength: 0.2,
        }
    }
}

impl TransformParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.noise_sigma > 0.0) {
            return bad(format!("noise_sigma {} must be positive", self.noise_sigma));
        }
        if !(self.scale_min > 0.0 && self.scale_min < self.scale_max) {
            return bad(format!("scale range [{}, {}] invalid", self.scale_min, self.scale_max));
        }
        if self.permutation_segments < 2 {
            return bad(format!("permutation_segments {} must be at least 2", self.permutation_segments));
        }
        if self.warp_knots == 0 || !(self.warp_strength > 0.0) {
            return bad("warp_knots and warp_strength must be positive".into());
        }
        Ok(())
    }
}

/// Applies `kind` to `x` with randomness drawn from `seed`.
pub fn apply(kind: TransformKind, x: &SensorWindow, params: &TransformParams, seed: u64) -> Result<SensorWindow> {
    apply_with_rng(kind, x, params, &mut seeded_rng(seed))
}

pub fn apply_with_rng(
    kind: TransformKind,
    x: &SensorWindow,
    params: &TransformParams,
    rng: &mut Rng,
) -> Result<SensorWindow> {
    params.validate()?;
    if x.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::non_finite("transform input"));
    }
    match kind {
        TransformKind::Noising => {
            let normal = Normal::new(0.0, params.noise_sigma).map_err(|e| Error::InvalidParameter(e.to_string()))?;
            let mut out = x.clone();
            for v in out.values_mut() {
                *v += normal.sample(rng);
            }
            Ok(out)
        }
        TransformKind::Scaling => {
            let mut s = 1.0;
            while s == 1.0 {
                s = rng.random_range(params.scale_min..=params.scale_max);
            }
            Ok(scale(x, s))
        }
        TransformKind::Rotation => rotate(x, &random_rotation(rng)),
        TransformKind::Negation => Ok(scale(x, -1.0)),
        TransformKind::TimeReversal => Ok(reverse_time(x)),
        TransformKind::WindowPermutation => Ok(permute_segments(x, params.permutation_segments, rng)),
        TransformKind::TimeWarping => Ok(time_warp(x, params.warp_knots, params.warp_strength, rng)),
        TransformKind::ChannelShuffling => Ok(shuffle_channels(x, rng)),
    }
}

pub fn scale(x: &SensorWindow, s: f64) -> SensorWindow {
    let mut out = x.clone();
    for v in out.values_mut() {
        *v *= s;
    }
    out
}

pub fn reverse_time(x: &SensorWindow) -> SensorWindow {
    let mut out = x.clone();
    for c in 0..out.channels() {
        out.channel_mut(c).reverse();
    }
    out
}

/// Uniformly distributed rotation matrix (from a random unit quaternion).
pub fn random_rotation(rng: &mut Rng) -> [[f64; 3]; 3] {
    let (u1, u2, u3): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    let (w, x, y, z) = (a * (TAU * u2).sin(), a * (TAU * u2).cos(), b * (TAU * u3).sin(), b * (TAU * u3).cos());
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - z * w), 2.0 * (x * z + y * w)],
        [2.0 * (x * y + z * w), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - x * w)],
        [2.0 * (x * z - y * w), 2.0 * (y * z + x * w), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

/// Applies the same rotation to every 3-axis block.
pub fn rotate(x: &SensorWindow, r: &[[f64; 3]; 3]) -> Result<SensorWindow> {
    if x.channels() % 3 != 0 {
        return Err(Error::InvalidParameter(format!(
            "rotation needs 3-axis channel blocks, window has {} channels",
            x.channels()
        )));
    }
    let mut out = x.clone();
    for block in modality_blocks(x.channels()) {
        let c0 = block.start;
        for t in 0..x.timesteps() {
            let v = [x.at(c0, t), x.at(c0 + 1, t), x.at(c0 + 2, t)];
            for (i, row) in r.iter().enumerate() {
                out.channel_mut(c0 + i)[t] = row[0] * v[0] + row[1] * v[1] + row[2] * v[2];
            }
        }
    }
    Ok(out)
}

fn non_identity_permutation(n: usize, rng: &mut Rng) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    if n < 2 {
        return p;
    }
    loop {
        p.shuffle(rng);
        if p.iter().enumerate().any(|(i, &v)| i != v) {
            return p;
        }
    }
}

/// Splits time into `segments` near-equal pieces and reorders them.
pub fn permute_segments(x: &SensorWindow, segments: usize, rng: &mut Rng) -> SensorWindow {
    let t = x.timesteps();
    let segments = segments.min(t);
    let bounds: Vec<usize> = (0..=segments).map(|i| i * t / segments).collect();
    let order = non_identity_permutation(segments, rng);
    let mut out = x.clone();
    for c in 0..x.channels() {
        let src = x.channel(c);
        let dst = out.channel_mut(c);
        let mut pos = 0;
        for &s in &order {
            let piece = &src[bounds[s]..bounds[s + 1]];
            dst[pos..pos + piece.len()].copy_from_slice(piece);
            pos += piece.len();
        }
    }
    out
}

pub fn shuffle_channels(x: &SensorWindow, rng: &mut Rng) -> SensorWindow {
    let order = non_identity_permutation(x.channels(), rng);
    let mut out = x.clone();
    for (dst, &src) in order.iter().enumerate() {
        out.channel_mut(dst).copy_from_slice(x.channel(src));
    }
    out
}

/// Smoothly varying playback speed: random speeds at `knots + 2` evenly
/// spaced points, Catmull-Rom interpolated, integrated into a monotone time
/// map spanning the window, then linear resampling.
pub fn time_warp(x: &SensorWindow, knots: usize, strength: f64, rng: &mut Rng) -> SensorWindow {
    let t = x.timesteps();
    if t < 2 {
        return x.clone();
    }
    let n = knots + 2;
    let normal = Normal::new(1.0, strength).expect("strength validated positive");
    let speeds: Vec<f64> = (0..n).map(|_| normal.sample(rng).max(0.1)).collect();
    let speed_at = |pos: f64| -> f64 {
        // pos in [0, n - 1]
        let i = (pos.floor() as usize).min(n - 2);
        let u = pos - i as f64;
        let p = |k: isize| speeds[k.clamp(0, n as isize - 1) as usize];
        let (p0, p1, p2, p3) = (p(i as isize - 1), p(i as isize), p(i as isize + 1), p(i as isize + 2));
        let v = 0.5
            * (2.0 * p1
                + (-p0 + p2) * u
                + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * u * u
                + (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * u * u * u);
        v.max(0.05)
    };
    let mut cum = vec![0.0; t];
    for k in 1..t {
        let pos = (k as f64 - 0.5) / (t - 1) as f64 * (n - 1) as f64;
        cum[k] = cum[k - 1] + speed_at(pos);
    }
    let total = cum[t - 1];
    let mut out = x.clone();
    for c in 0..x.channels() {
        let src = x.channel(c);
        let dst = out.channel_mut(c);
        for (k, d) in dst.iter_mut().enumerate() {
            let s = cum[k] / total * (t - 1) as f64;
            let i = (s.floor() as usize).min(t - 2);
            let a = s - i as f64;
            *d = src[i] + a * (src[i + 1] - src[i]);
        }
    }
    out
}

/// Binary pretext data for one transformation: `(T(x), 1)` and `(x, 0)` for
/// every window.
#[derive(Debug, Clone)]
pub struct PretextTask {
    pub kind: TransformKind,
    pub windows: Vec<SensorWindow>,
    pub labels: Vec<u8>,
}

/// Originals with all eight transformed copies, stored once and viewed as
/// eight balanced binary tasks.
#[derive(Debug, Clone)]
pub struct PretextDataset {
    pub originals: Vec<SensorWindow>,
    /// `transformed[kind][i]` is `kind` applied to `originals[i]`.
    pub transformed: Vec<Vec<SensorWindow>>,
}

impl PretextDataset {
    pub fn len(&self) -> usize {
        self.originals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.originals.is_empty()
    }

    pub fn task(&self, kind: TransformKind) -> PretextTask {
        let n = self.len();
        let mut windows = Vec::with_capacity(2 * n);
        let mut labels = Vec::with_capacity(2 * n);
        for (x, tx) in self.originals.iter().zip(&self.transformed[kind.index()]) {
            windows.push(tx.clone());
            labels.push(1);
            windows.push(x.clone());
            labels.push(0);
        }
        PretextTask { kind, windows, labels }
    }

    pub fn tasks(&self) -> Vec<PretextTask> {
        TransformKind::ALL.iter().map(|&k| self.task(k)).collect()
    }

    /// Restricts to the given window indices.
    pub fn subset(&self, idx: &[usize]) -> PretextDataset {
        PretextDataset {
            originals: idx.iter().map(|&i| self.originals[i].clone()).collect(),
            transformed: self
                .transformed
                .iter()
                .map(|ws| idx.iter().map(|&i| ws[i].clone()).collect())
                .collect(),
        }
    }
}

/// Seed used for transform `kind` of window `index`; independent of
/// iteration order.
pub fn transform_seed(seed: u64, index: usize, kind: TransformKind) -> u64 {
    derive_seed(derive_seed(seed, index as u64), kind.index() as u64)
}

pub fn build_pretext_dataset(d: &UnlabeledDataset, params: &TransformParams, seed: u64) -> Result<PretextDataset> {
    if d.is_empty() {
        return Err(Error::Empty("pretext input".into()));
    }
    params.validate()?;
    let mut transformed = Vec::with_capacity(8);
    for kind in TransformKind::ALL {
        let ws = d
            .windows
            .iter()
            .enumerate()
            .map(|(i, x)| apply(kind, x, params, transform_seed(seed, i, kind)))
            .collect::<Result<Vec<_>>>()?;
        transformed.push(ws);
    }
    Ok(PretextDataset {
        originals: d.windows.clone(),
        transformed,
    })
}
