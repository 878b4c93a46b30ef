//! Class-dependent multi-sinusoid generator.
//!
//! Each class owns a prototype: per channel, a DC offset plus two sinusoids.
//! A window of class `c` blends its prototype with a randomly chosen other
//! class by a weight drawn from `[0, mixing)`, then adds participant gain,
//! random phases, frequency jitter and white noise. Blending makes some
//! windows genuinely ambiguous, so no classifier reaches perfect accuracy.

use std::f64::consts::TAU;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{DatasetMetadata, LabeledDataset, SensorWindow, SplitDataset};
use crate::error::{Error, Result};
use crate::numerics::{derive_seed, seeded_rng, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub classes: usize,
    pub channels: usize,
    pub length: usize,
    /// Windows generated per class, spread over all participants.
    pub windows_per_class: usize,
    pub participants: u32,
    /// The highest-numbered participants form the validation split.
    pub validation_participants: u32,
    pub noise: f64,
    pub mixing: f64,
    pub frequency_jitter: f64,
    pub sample_rate: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            classes: 3,
            channels: 6,
            length: 64,
            windows_per_class: 1000,
            participants: 10,
            validation_participants: 3,
            noise: 0.5,
            mixing: 0.6,
            frequency_jitter: 0.15,
            sample_rate: 50.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
struct Component {
    frequency: f64,
    amplitude: f64,
}

#[derive(Debug, Clone)]
struct ChannelProfile {
    offset: f64,
    components: [Component; 2],
}

impl SyntheticConfig {
    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(format!("synthetic: {m}")));
        if self.classes < 2 {
            return bad("classes must be at least 2");
        }
        if self.channels == 0 || self.length < 2 || self.windows_per_class == 0 {
            return bad("channels, length and windows_per_class must be positive");
        }
        if self.validation_participants == 0 || self.validation_participants >= self.participants {
            return bad("validation_participants must be in [1, participants)");
        }
        if !(self.noise >= 0.0) || !(0.0..1.0).contains(&self.mixing) || !(self.sample_rate > 0.0) {
            return bad("noise >= 0, mixing in [0, 1) and sample_rate > 0 required");
        }
        if !(0.0..1.0).contains(&self.frequency_jitter) {
            return bad("frequency_jitter must be in [0, 1)");
        }
        Ok(())
    }

    pub fn class_names(&self) -> Vec<String> {
        (0..self.classes).map(|c| format!("class_{c}")).collect()
    }

    /// Generates the dataset, split by participant id.
    pub fn generate(&self) -> Result<SplitDataset> {
        self.validate()?;
        let mut proto_rng = seeded_rng(derive_seed(self.seed, 0));
        let nyquist = self.sample_rate / 2.0;
        let prototypes: Vec<Vec<ChannelProfile>> = (0..self.classes)
            .map(|_| {
                (0..self.channels)
                    .map(|_| ChannelProfile {
                        offset: proto_rng.random_range(-0.5..0.5),
                        components: [0, 1].map(|_| Component {
                            frequency: proto_rng.random_range(0.5..(8.0f64).min(nyquist * 0.8)),
                            amplitude: proto_rng.random_range(0.5..1.5),
                        }),
                    })
                    .collect()
            })
            .collect();
        let gains: Vec<(f64, f64)> = (0..self.participants)
            .map(|_| (proto_rng.random_range(0.85..1.15), proto_rng.random_range(0.92..1.08)))
            .collect();

        let mut rng = seeded_rng(derive_seed(self.seed, 1));
        let first_validation = self.participants - self.validation_participants + 1;
        let names = self.class_names();
        let (mut train, mut validation) = (Parts::default(), Parts::default());
        for i in 0..self.windows_per_class * self.classes {
            let class = i % self.classes;
            let participant = ((i / self.classes) as u32 % self.participants) + 1;
            let window = self.render(&prototypes, class, gains[participant as usize - 1], &mut rng)?;
            let parts = if participant >= first_validation {
                &mut validation
            } else {
                &mut train
            };
            parts.windows.push(window);
            parts.labels.push(class);
            parts.participants.push(participant);
        }

        let metadata = DatasetMetadata {
            name: "synthetic".into(),
            window_length: self.length,
            overlap: 0.0,
            sample_rate: self.sample_rate,
            train_participants: (1..first_validation).collect(),
            validation_participants: (first_validation..=self.participants).collect(),
            normalization: None,
        };
        Ok(SplitDataset {
            train: train.finish(names.clone(), self.sample_rate)?,
            validation: validation.finish(names, self.sample_rate)?,
            metadata,
        })
    }

    fn render(
        &self,
        prototypes: &[Vec<ChannelProfile>],
        class: usize,
        (gain, speed): (f64, f64),
        rng: &mut Rng,
    ) -> Result<SensorWindow> {
        let other = (class + rng.random_range(1..self.classes)) % self.classes;
        let blend = if self.mixing > 0.0 {
            rng.random_range(0.0..self.mixing)
        } else {
            0.0
        };
        let dt = 1.0 / self.sample_rate;
        let mut values = Vec::with_capacity(self.channels * self.length);
        for ch in 0..self.channels {
            let mut row = vec![0.0; self.length];
            for (source, weight) in [(class, 1.0 - blend), (other, blend)] {
                let profile = &prototypes[source][ch];
                for v in row.iter_mut() {
                    *v += weight * profile.offset;
                }
                for comp in &profile.components {
                    let jitter = 1.0 + rng.random_range(-self.frequency_jitter..=self.frequency_jitter);
                    let omega = TAU * comp.frequency * speed * jitter;
                    let phase = rng.random_range(0.0..TAU);
                    for (t, v) in row.iter_mut().enumerate() {
                        *v += weight * comp.amplitude * (omega * t as f64 * dt + phase).sin();
                    }
                }
            }
            for v in row.iter_mut() {
                let n: f64 = StandardNormal.sample(rng);
                *v = gain * *v + self.noise * n;
            }
            values.extend(row);
        }
        SensorWindow::new(self.channels, self.length, values)
    }
}

#[derive(Default)]
struct Parts {
    windows: Vec<SensorWindow>,
    labels: Vec<usize>,
    participants: Vec<u32>,
}

impl Parts {
    fn finish(self, names: Vec<String>, rate: f64) -> Result<LabeledDataset> {
        LabeledDataset::new(self.windows, self.labels, names, self.participants, rate)
    }
}
