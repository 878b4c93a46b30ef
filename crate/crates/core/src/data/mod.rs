//! Windowed multichannel sensor datasets.

pub mod cache;
pub mod loaders;
pub mod synthetic;

use std::ops::Range;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::seeded_rng;

pub use loaders::{load_dataset, DatasetSource, WindowingConfig};
pub use synthetic::SyntheticConfig;

/// Fixed-length multichannel segment stored channel-major
/// (`values[c * timesteps + t]`).
#[derive(Debug, Clone, PartialEq)]
pub struct SensorWindow {
    channels: usize,
    timesteps: usize,
    values: Vec<f64>,
}

impl SensorWindow {
    pub fn new(channels: usize, timesteps: usize, values: Vec<f64>) -> Result<Self> {
        if channels * timesteps != values.len() {
            return Err(Error::shape("sensor window", &[channels, timesteps], &[values.len()]));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::non_finite("sensor window values"));
        }
        Ok(Self {
            channels,
            timesteps,
            values,
        })
    }

    pub fn zeros(channels: usize, timesteps: usize) -> Self {
        Self {
            channels,
            timesteps,
            values: vec![0.0; channels * timesteps],
        }
    }

    /// Builds a window from per-channel rows of equal length.
    pub fn from_channels(rows: &[Vec<f64>]) -> Result<Self> {
        let timesteps = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(rows.len() * timesteps);
        for row in rows {
            if row.len() != timesteps {
                return Err(Error::shape("sensor window", &[timesteps], &[row.len()]));
            }
            values.extend_from_slice(row);
        }
        Self::new(rows.len(), timesteps, values)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn timesteps(&self) -> usize {
        self.timesteps
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.channels, self.timesteps]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.values[c * self.timesteps..(c + 1) * self.timesteps]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.values[c * self.timesteps..(c + 1) * self.timesteps]
    }

    pub fn at(&self, c: usize, t: usize) -> f64 {
        self.values[c * self.timesteps + t]
    }

    /// Population standard deviation of one channel.
    pub fn channel_std(&self, c: usize) -> f64 {
        let row = self.channel(c);
        let n = row.len() as f64;
        let mean = row.iter().sum::<f64>() / n;
        (row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
    }
}

/// Windows with class labels and participant ids.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub windows: Vec<SensorWindow>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
    pub participants: Vec<u32>,
    pub sample_rate: f64,
}

impl LabeledDataset {
    pub fn new(
        windows: Vec<SensorWindow>,
        labels: Vec<usize>,
        class_names: Vec<String>,
        participants: Vec<u32>,
        sample_rate: f64,
    ) -> Result<Self> {
        if windows.len() != labels.len() || windows.len() != participants.len() {
            return Err(Error::shape(
                "labeled dataset",
                &[windows.len()],
                &[labels.len(), participants.len()],
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(Error::InvalidParameter(format!(
                "label {bad} outside {} classes",
                class_names.len()
            )));
        }
        check_uniform_shape(&windows)?;
        Ok(Self {
            windows,
            labels,
            class_names,
            participants,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn window_shape(&self) -> Option<[usize; 2]> {
        self.windows.first().map(SensorWindow::shape)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Drops the labels.
    pub fn unlabeled(&self) -> UnlabeledDataset {
        UnlabeledDataset {
            windows: self.windows.clone(),
            participants: self.participants.clone(),
            sample_rate: self.sample_rate,
        }
    }

    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            windows: indices.iter().map(|&i| self.windows[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_names: self.class_names.clone(),
            participants: indices.iter().map(|&i| self.participants[i]).collect(),
            sample_rate: self.sample_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledDataset {
    pub windows: Vec<SensorWindow>,
    pub participants: Vec<u32>,
    pub sample_rate: f64,
}

impl UnlabeledDataset {
    pub fn new(windows: Vec<SensorWindow>, participants: Vec<u32>, sample_rate: f64) -> Result<Self> {
        if windows.is_empty() {
            return Err(Error::Empty("unlabeled dataset".into()));
        }
        if windows.len() != participants.len() {
            return Err(Error::shape("unlabeled dataset", &[windows.len()], &[participants.len()]));
        }
        check_uniform_shape(&windows)?;
        Ok(Self {
            windows,
            participants,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }
}

fn check_uniform_shape(windows: &[SensorWindow]) -> Result<()> {
    if let Some(first) = windows.first() {
        if let Some(w) = windows.iter().find(|w| w.shape() != first.shape()) {
            return Err(Error::shape("dataset windows", &first.shape(), &w.shape()));
        }
    }
    Ok(())
}

/// Subject-wise train/validation split with provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub train: LabeledDataset,
    pub validation: LabeledDataset,
    pub metadata: DatasetMetadata,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetadata {
    pub name: String,
    pub window_length: usize,
    pub overlap: f64,
    pub sample_rate: f64,
    pub train_participants: Vec<u32>,
    pub validation_participants: Vec<u32>,
    pub normalization: Option<NormalizationStats>,
}

/// Cuts a channel-major stream into windows of `length` timesteps whose
/// starts advance by `⌊length · (1 − overlap)⌋` (at least 1). The tail that
/// does not fill a window is dropped.
pub fn window(stream: &[Vec<f64>], length: usize, overlap: f64) -> Result<Vec<SensorWindow>> {
    if length < 2 {
        return Err(Error::InvalidParameter(format!("window length {length} must be at least 2")));
    }
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::InvalidParameter(format!("overlap {overlap} outside [0, 1)")));
    }
    let total = stream.first().map_or(0, Vec::len);
    if let Some(row) = stream.iter().find(|r| r.len() != total) {
        return Err(Error::shape("window", &[total], &[row.len()]));
    }
    let step = window_step(length, overlap);
    let mut out = Vec::new();
    let mut start = 0;
    while start + length <= total {
        let rows: Vec<Vec<f64>> = stream.iter().map(|r| r[start..start + length].to_vec()).collect();
        out.push(SensorWindow::from_channels(&rows)?);
        start += step;
    }
    Ok(out)
}

pub(crate) fn window_step(length: usize, overlap: f64) -> usize {
    ((length as f64 * (1.0 - overlap)).floor() as usize).max(1)
}

/// Channel ranges treated as one sensor modality (3-axis blocks when the
/// channel count allows it: accelerometer 0..3, gyroscope 3..6).
pub fn modality_blocks(channels: usize) -> Vec<Range<usize>> {
    if channels >= 3 && channels % 3 == 0 {
        (0..channels / 3).map(|b| 3 * b..3 * b + 3).collect()
    } else {
        vec![0..channels]
    }
}

/// One divisor per modality block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub blocks: Vec<ModalityScale>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalityScale {
    pub start: usize,
    pub end: usize,
    pub scale: f64,
}

impl NormalizationStats {
    /// Mean over windows and channels of the per-window, per-channel
    /// standard deviation, computed for each modality block.
    pub fn compute(windows: &[SensorWindow]) -> Result<Self> {
        let first = windows.first().ok_or_else(|| Error::Empty("normalization input".into()))?;
        let mut blocks = Vec::new();
        for range in modality_blocks(first.channels()) {
            let mut total = 0.0;
            let mut count = 0usize;
            for w in windows {
                for c in range.clone() {
                    total += w.channel_std(c);
                    count += 1;
                }
            }
            let scale = total / count as f64;
            if !(scale > 0.0) || !scale.is_finite() {
                return Err(Error::Degenerate(format!(
                    "channels {}..{} have zero mean standard deviation",
                    range.start, range.end
                )));
            }
            blocks.push(ModalityScale {
                start: range.start,
                end: range.end,
                scale,
            });
        }
        Ok(Self { blocks })
    }

    pub fn apply(&self, windows: &mut [SensorWindow]) {
        for w in windows {
            for b in &self.blocks {
                for c in b.start..b.end {
                    for v in w.channel_mut(c) {
                        *v /= b.scale;
                    }
                }
            }
        }
    }
}

/// Rescales `train` so every modality has unit mean channel standard
/// deviation and applies the same divisors to `others`.
pub fn normalize(train: &mut LabeledDataset, others: &mut [&mut LabeledDataset]) -> Result<NormalizationStats> {
    let stats = NormalizationStats::compute(&train.windows)?;
    stats.apply(&mut train.windows);
    for d in others.iter_mut() {
        stats.apply(&mut d.windows);
    }
    Ok(stats)
}

/// Draws exactly `per_class` windows of every class without replacement.
pub fn sample_labeled_subset(d: &LabeledDataset, per_class: usize, seed: u64) -> Result<LabeledDataset> {
    let mut rng = seeded_rng(seed);
    let mut chosen = Vec::with_capacity(per_class * d.num_classes());
    for (class, name) in d.class_names.iter().enumerate() {
        let mut idx: Vec<usize> = (0..d.len()).filter(|&i| d.labels[i] == class).collect();
        if idx.len() < per_class {
            return Err(Error::InsufficientInstances {
                class: name.clone(),
                available: idx.len(),
                requested: per_class,
            });
        }
        idx.shuffle(&mut rng);
        idx.truncate(per_class);
        idx.sort_unstable();
        chosen.extend(idx);
    }
    Ok(d.subset(&chosen))
}
