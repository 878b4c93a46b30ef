//! Readers for the public HAR corpora in their published layouts.
//!
//! Every reader produces accelerometer xyz followed by gyroscope xyz, resampled
//! to a common rate by linear interpolation, cut into windows inside runs of a
//! single activity, and split by participant.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{window, DatasetMetadata, LabeledDataset, SensorWindow, SplitDataset, SyntheticConfig};
use crate::error::{Error, Result};
use crate::numerics::{derive_seed, seeded_rng};

/// Samples further apart than this split a recording into separate runs.
const MAX_GAP_SECONDS: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowingConfig {
    pub length: usize,
    pub overlap: f64,
    /// Every corpus is resampled to this rate before windowing.
    pub target_rate: f64,
    /// Training windows kept per HHAR user (0 keeps all).
    pub hhar_samples_per_user: usize,
    pub seed: u64,
}

impl Default for WindowingConfig {
    fn default() -> Self {
        Self {
            length: 128,
            overlap: 0.5,
            target_rate: 50.0,
            hhar_samples_per_user: 1000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    Synthetic(SyntheticConfig),
    Hhar(PathBuf),
    UciHar(PathBuf),
    MotionSense(PathBuf),
    Pamap2(PathBuf),
}

impl DatasetSource {
    /// Resolves a dataset name (`synthetic`, `hhar`, `uci`, `motionsense`,
    /// `pamap2`) and root directory.
    pub fn from_name(name: &str, root: Option<&Path>, synthetic: &SyntheticConfig) -> Result<Self> {
        let key = name.to_ascii_lowercase().replace(['-', '_'], "");
        if key == "synthetic" {
            return Ok(Self::Synthetic(synthetic.clone()));
        }
        let root = root
            .ok_or_else(|| Error::Config {
                key: "data.root".into(),
                message: format!("dataset `{name}` needs a root directory"),
            })?
            .to_path_buf();
        match key.as_str() {
            "hhar" => Ok(Self::Hhar(root)),
            "uci" | "ucihar" => Ok(Self::UciHar(root)),
            "motionsense" => Ok(Self::MotionSense(root)),
            "pamap2" => Ok(Self::Pamap2(root)),
            _ => Err(Error::Config {
                key: "data.dataset".into(),
                message: format!("unknown dataset `{name}`"),
            }),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Synthetic(_) => "synthetic",
            Self::Hhar(_) => "hhar",
            Self::UciHar(_) => "uci",
            Self::MotionSense(_) => "motionsense",
            Self::Pamap2(_) => "pamap2",
        }
    }
}

/// Loads a dataset and splits it into the subject-wise train/validation sets.
pub fn load_dataset(source: &DatasetSource, cfg: &WindowingConfig) -> Result<SplitDataset> {
    match source {
        DatasetSource::Synthetic(s) => s.generate(),
        DatasetSource::Hhar(root) => load_hhar(root, cfg),
        DatasetSource::UciHar(root) => load_uci(root),
        DatasetSource::MotionSense(root) => load_motionsense(root, cfg),
        DatasetSource::Pamap2(root) => load_pamap2(root, cfg),
    }
}

pub const HHAR_CLASSES: [&str; 6] = ["bike", "sit", "stand", "walk", "stairsup", "stairsdown"];
pub const UCI_CLASSES: [&str; 6] = [
    "walking",
    "walking_upstairs",
    "walking_downstairs",
    "sitting",
    "standing",
    "laying",
];
pub const MOTIONSENSE_CLASSES: [&str; 6] = ["dws", "ups", "wlk", "jog", "sit", "std"];
/// PAMAP2 protocol activity ids and names.
pub const PAMAP2_CLASSES: [(u32, &str); 12] = [
    (1, "lying"),
    (2, "sitting"),
    (3, "standing"),
    (4, "walking"),
    (5, "running"),
    (6, "cycling"),
    (7, "nordic_walking"),
    (12, "ascending_stairs"),
    (13, "descending_stairs"),
    (16, "vacuum_cleaning"),
    (17, "ironing"),
    (24, "rope_jumping"),
];

/// Six-channel samples with timestamps in seconds and optional labels.
#[derive(Debug, Default)]
struct Recording {
    times: Vec<f64>,
    samples: Vec<[f64; 6]>,
    labels: Vec<Option<usize>>,
}

impl Recording {
    fn push(&mut self, t: f64, sample: [f64; 6], label: Option<usize>) {
        self.times.push(t);
        self.samples.push(sample);
        self.labels.push(label);
    }

    fn sort(&mut self) {
        let mut order: Vec<usize> = (0..self.times.len()).collect();
        order.sort_by(|&a, &b| self.times[a].total_cmp(&self.times[b]));
        self.times = order.iter().map(|&i| self.times[i]).collect();
        self.samples = order.iter().map(|&i| self.samples[i]).collect();
        self.labels = order.iter().map(|&i| self.labels[i]).collect();
    }

    /// Resamples each single-label run onto a uniform grid and windows it.
    fn windows(&self, cfg: &WindowingConfig) -> Result<Vec<(SensorWindow, usize)>> {
        let mut out = Vec::new();
        let mut start = 0;
        while start < self.times.len() {
            let mut end = start + 1;
            while end < self.times.len()
                && self.labels[end] == self.labels[start]
                && self.times[end] - self.times[end - 1] <= MAX_GAP_SECONDS
                && self.times[end] > self.times[end - 1]
            {
                end += 1;
            }
            if let Some(label) = self.labels[start] {
                let stream = resample(&self.times[start..end], &self.samples[start..end], cfg.target_rate);
                for w in window(&stream, cfg.length, cfg.overlap)? {
                    out.push((w, label));
                }
            }
            start = end;
        }
        Ok(out)
    }
}

/// Linear interpolation of a strictly increasing series onto a grid with
/// spacing `1 / rate` starting at the first timestamp.
fn resample(times: &[f64], samples: &[[f64; 6]], rate: f64) -> Vec<Vec<f64>> {
    let mut rows = vec![Vec::new(); 6];
    if times.len() < 2 {
        return rows;
    }
    let step = 1.0 / rate;
    let (first, last) = (times[0], times[times.len() - 1]);
    let mut j = 0;
    let mut k = 0usize;
    loop {
        let t = first + k as f64 * step;
        if t > last {
            break;
        }
        while j + 1 < times.len() - 1 && times[j + 1] <= t {
            j += 1;
        }
        let (t0, t1) = (times[j], times[j + 1]);
        let a = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
        for (c, row) in rows.iter_mut().enumerate() {
            row.push(samples[j][c] + a * (samples[j + 1][c] - samples[j][c]));
        }
        k += 1;
    }
    rows
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::Parse {
        file: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    })
}

fn parse_err(file: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        file: file.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn parse_f64(s: &str, file: &Path, line: usize) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| parse_err(file, line, format!("expected a number, found `{s}`")))
}

/// Collects `(window, label, participant)` triples into the two splits.
fn assemble(
    name: &str,
    classes: Vec<String>,
    items: Vec<(SensorWindow, usize, u32)>,
    is_train: impl Fn(u32) -> bool,
    cfg: &WindowingConfig,
    rate: f64,
) -> Result<SplitDataset> {
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for item in items {
        if is_train(item.2) {
            train.push(item);
        } else {
            val.push(item);
        }
    }
    let build = |parts: Vec<(SensorWindow, usize, u32)>| {
        let mut ws = Vec::with_capacity(parts.len());
        let mut ls = Vec::with_capacity(parts.len());
        let mut ps = Vec::with_capacity(parts.len());
        for (w, l, p) in parts {
            ws.push(w);
            ls.push(l);
            ps.push(p);
        }
        LabeledDataset::new(ws, ls, classes.clone(), ps, rate)
    };
    let participants = |d: &LabeledDataset| {
        let mut p = d.participants.clone();
        p.sort_unstable();
        p.dedup();
        p
    };
    let train = build(train)?;
    let validation = build(val)?;
    if train.is_empty() {
        return Err(Error::Empty(format!("{name}: no training windows")));
    }
    Ok(SplitDataset {
        metadata: DatasetMetadata {
            name: name.into(),
            window_length: train.window_shape().map_or(cfg.length, |s| s[1]),
            overlap: cfg.overlap,
            sample_rate: rate,
            train_participants: participants(&train),
            validation_participants: participants(&validation),
            normalization: None,
        },
        train,
        validation,
    })
}

/// HHAR phone recordings (`Phones_accelerometer.csv`, `Phones_gyroscope.csv`).
/// Users `a`..`i` map to participants 1..9; 1–6 train, 7–9 validate.
pub fn load_hhar(root: &Path, cfg: &WindowingConfig) -> Result<SplitDataset> {
    type Key = (u32, String);
    struct Row {
        t: f64,
        xyz: [f64; 3],
        label: Option<usize>,
    }
    let read = |file: &Path| -> Result<BTreeMap<Key, Vec<Row>>> {
        let mut groups: BTreeMap<Key, Vec<Row>> = BTreeMap::new();
        let mut lines = open(file)?.lines();
        let header = lines.next().ok_or_else(|| parse_err(file, 1, "empty file"))??;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        let find = |name: &str| {
            cols.iter().position(|c| c.eq_ignore_ascii_case(name)).ok_or_else(|| Error::MissingChannel {
                file: file.to_path_buf(),
                channel: name.into(),
            })
        };
        let (ct, cx, cy, cz, cu, cd, cg) = (
            find("Creation_Time")?,
            find("x")?,
            find("y")?,
            find("z")?,
            find("User")?,
            find("Device")?,
            find("gt")?,
        );
        for (i, line) in lines.enumerate() {
            let line = line?;
            let lineno = i + 2;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() < cols.len() {
                return Err(parse_err(file, lineno, format!("expected {} fields, found {}", cols.len(), f.len())));
            }
            let user = f[cu].trim();
            let participant = match user.as_bytes() {
                [c @ b'a'..=b'z'] => u32::from(c - b'a') + 1,
                _ => return Err(parse_err(file, lineno, format!("unexpected user `{user}`"))),
            };
            let label = HHAR_CLASSES.iter().position(|c| *c == f[cg].trim());
            groups.entry((participant, f[cd].trim().to_string())).or_default().push(Row {
                t: parse_f64(f[ct], file, lineno)? * 1e-9,
                xyz: [
                    parse_f64(f[cx], file, lineno)?,
                    parse_f64(f[cy], file, lineno)?,
                    parse_f64(f[cz], file, lineno)?,
                ],
                label,
            });
        }
        for rows in groups.values_mut() {
            rows.sort_by(|a, b| a.t.total_cmp(&b.t));
            rows.dedup_by(|b, a| a.t == b.t);
        }
        Ok(groups)
    };
    let acc = read(&root.join("Phones_accelerometer.csv"))?;
    let gyro = read(&root.join("Phones_gyroscope.csv"))?;

    let mut items = Vec::new();
    for (key, arows) in &acc {
        let Some(grows) = gyro.get(key) else { continue };
        if grows.len() < 2 {
            continue;
        }
        // gyroscope interpolated at accelerometer timestamps
        let mut rec = Recording::default();
        let mut j = 0;
        for a in arows {
            if a.t < grows[0].t || a.t > grows[grows.len() - 1].t {
                continue;
            }
            while j + 2 < grows.len() && grows[j + 1].t <= a.t {
                j += 1;
            }
            let (g0, g1) = (&grows[j], &grows[j + 1]);
            if g1.t - g0.t > MAX_GAP_SECONDS {
                continue;
            }
            let w = ((a.t - g0.t) / (g1.t - g0.t)).clamp(0.0, 1.0);
            let g = [0, 1, 2].map(|c| g0.xyz[c] + w * (g1.xyz[c] - g0.xyz[c]));
            rec.push(a.t, [a.xyz[0], a.xyz[1], a.xyz[2], g[0], g[1], g[2]], a.label);
        }
        for (w, label) in rec.windows(cfg)? {
            items.push((w, label, key.0));
        }
    }

    // subsample training users
    if cfg.hhar_samples_per_user > 0 {
        let mut rng = seeded_rng(derive_seed(cfg.seed, 0x4848));
        let mut by_user: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, item) in items.iter().enumerate() {
            if item.2 <= 6 {
                by_user.entry(item.2).or_default().push(i);
            }
        }
        let mut drop = vec![false; items.len()];
        for idx in by_user.values_mut() {
            if idx.len() > cfg.hhar_samples_per_user {
                idx.shuffle(&mut rng);
                for &i in &idx[cfg.hhar_samples_per_user..] {
                    drop[i] = true;
                }
            }
        }
        let mut keep = drop.iter().map(|d| !d);
        items.retain(|_| keep.next().unwrap_or(true));
    }
    let classes = HHAR_CLASSES.iter().map(|s| s.to_string()).collect();
    assemble("hhar", classes, items, |p| p <= 6, cfg, cfg.target_rate)
}

/// UCI HAR inertial signals. The corpus ships pre-windowed (128 samples at
/// 50 Hz); its own train/test subject split is kept.
pub fn load_uci(root: &Path) -> Result<SplitDataset> {
    let root = if root.join("UCI HAR Dataset").is_dir() {
        root.join("UCI HAR Dataset")
    } else {
        root.to_path_buf()
    };
    const SIGNALS: [&str; 6] = [
        "total_acc_x",
        "total_acc_y",
        "total_acc_z",
        "body_gyro_x",
        "body_gyro_y",
        "body_gyro_z",
    ];
    let read_split = |split: &str| -> Result<Vec<(SensorWindow, usize, u32)>> {
        let dir = root.join(split);
        let read_ints = |name: String| -> Result<Vec<u32>> {
            let path = dir.join(name);
            open(&path)?
                .lines()
                .enumerate()
                .filter(|(_, l)| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
                .map(|(i, l)| {
                    let l = l?;
                    l.trim().parse::<u32>().map_err(|_| parse_err(&path, i + 1, format!("expected an integer, found `{l}`")))
                })
                .collect()
        };
        let labels = read_ints(format!("y_{split}.txt"))?;
        let subjects = read_ints(format!("subject_{split}.txt"))?;
        let mut signals: Vec<Vec<Vec<f64>>> = Vec::new();
        for s in SIGNALS {
            let path = dir.join("Inertial Signals").join(format!("{s}_{split}.txt"));
            let file = File::open(&path).map_err(|_| Error::MissingChannel {
                file: path.clone(),
                channel: s.into(),
            })?;
            let mut rows = Vec::new();
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let row = line
                    .split_whitespace()
                    .map(|v| parse_f64(v, &path, i + 1))
                    .collect::<Result<Vec<_>>>()?;
                rows.push(row);
            }
            signals.push(rows);
        }
        let n = labels.len();
        if subjects.len() != n || signals.iter().any(|s| s.len() != n) {
            return Err(Error::Format(format!("UCI HAR {split}: label, subject and signal row counts differ")));
        }
        (0..n)
            .map(|i| {
                let rows: Vec<Vec<f64>> = signals.iter().map(|s| s[i].clone()).collect();
                let label = labels[i] as usize;
                if !(1..=6).contains(&label) {
                    return Err(Error::Format(format!("UCI HAR {split}: activity id {label} outside 1..6")));
                }
                Ok((SensorWindow::from_channels(&rows)?, label - 1, subjects[i]))
            })
            .collect()
    };
    let train = read_split("train")?;
    let train_subjects: Vec<u32> = train.iter().map(|t| t.2).collect();
    let mut items = train;
    items.extend(read_split("test")?);
    let classes = UCI_CLASSES.iter().map(|s| s.to_string()).collect();
    let cfg = WindowingConfig {
        length: 128,
        overlap: 0.5,
        target_rate: 50.0,
        ..WindowingConfig::default()
    };
    assemble("uci", classes, items, |p| train_subjects.contains(&p), &cfg, 50.0)
}

/// MotionSense device-motion CSVs (`A_DeviceMotion_data/<act>_<trial>/sub_<n>.csv`).
/// Accelerometer is user acceleration plus gravity; participants 1–16 train,
/// 17–24 validate.
pub fn load_motionsense(root: &Path, cfg: &WindowingConfig) -> Result<SplitDataset> {
    let base = if root.join("A_DeviceMotion_data").is_dir() {
        root.join("A_DeviceMotion_data")
    } else {
        root.to_path_buf()
    };
    let mut trials: Vec<PathBuf> = std::fs::read_dir(&base)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    trials.sort();
    let mut items = Vec::new();
    for trial in trials {
        let dir_name = trial.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        let activity = dir_name.split('_').next().unwrap_or_default();
        let Some(label) = MOTIONSENSE_CLASSES.iter().position(|c| *c == activity) else {
            continue;
        };
        let mut files: Vec<PathBuf> = std::fs::read_dir(&trial)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "csv"))
            .collect();
        files.sort();
        for file in files {
            let stem = file.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
            let Some(participant) = stem.strip_prefix("sub_").and_then(|s| s.parse::<u32>().ok()) else {
                continue;
            };
            let mut lines = open(&file)?.lines();
            let header = lines.next().ok_or_else(|| parse_err(&file, 1, "empty file"))??;
            let cols: Vec<&str> = header.split(',').map(|c| c.trim().trim_matches('"')).collect();
            let find = |name: &str| {
                cols.iter().position(|c| *c == name).ok_or_else(|| Error::MissingChannel {
                    file: file.clone(),
                    channel: name.into(),
                })
            };
            let idx = [
                (find("userAcceleration.x")?, find("gravity.x")?),
                (find("userAcceleration.y")?, find("gravity.y")?),
                (find("userAcceleration.z")?, find("gravity.z")?),
            ];
            let gyro = [find("rotationRate.x")?, find("rotationRate.y")?, find("rotationRate.z")?];
            let mut rec = Recording::default();
            for (i, line) in lines.enumerate() {
                let line = line?;
                let lineno = i + 2;
                if line.trim().is_empty() {
                    continue;
                }
                let f: Vec<&str> = line.split(',').collect();
                if f.len() < cols.len() {
                    return Err(parse_err(&file, lineno, format!("expected {} fields, found {}", cols.len(), f.len())));
                }
                let mut s = [0.0; 6];
                for (c, (u, g)) in idx.iter().enumerate() {
                    s[c] = parse_f64(f[*u], &file, lineno)? + parse_f64(f[*g], &file, lineno)?;
                }
                for (c, g) in gyro.iter().enumerate() {
                    s[3 + c] = parse_f64(f[*g], &file, lineno)?;
                }
                rec.push(i as f64 / 50.0, s, Some(label));
            }
            for (w, l) in rec.windows(cfg)? {
                items.push((w, l, participant));
            }
        }
    }
    let classes = MOTIONSENSE_CLASSES.iter().map(|s| s.to_string()).collect();
    assemble("motionsense", classes, items, |p| p <= 16, cfg, cfg.target_rate)
}

/// PAMAP2 protocol files (`Protocol/subject1NN.dat`), wrist IMU only:
/// ±16 g accelerometer (columns 4–6) and gyroscope (10–12). Rows with missing
/// values are skipped; transient activity 0 is dropped. Subjects 101–106
/// train, 107–109 validate.
pub fn load_pamap2(root: &Path, cfg: &WindowingConfig) -> Result<SplitDataset> {
    let base = if root.join("Protocol").is_dir() {
        root.join("Protocol")
    } else {
        root.to_path_buf()
    };
    let mut files: Vec<PathBuf> = std::fs::read_dir(&base)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "dat"))
        .collect();
    files.sort();
    let mut items = Vec::new();
    for file in files {
        let stem = file.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let Some(subject) = stem.strip_prefix("subject").and_then(|s| s.parse::<u32>().ok()) else {
            continue;
        };
        let participant = subject.saturating_sub(100);
        let mut rec = Recording::default();
        for (i, line) in open(&file)?.lines().enumerate() {
            let line = line?;
            let lineno = i + 1;
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.is_empty() {
                continue;
            }
            if f.len() < 13 {
                return Err(parse_err(&file, lineno, format!("expected at least 13 columns, found {}", f.len())));
            }
            let t = parse_f64(f[0], &file, lineno)?;
            let activity = parse_f64(f[1], &file, lineno)? as u32;
            let mut s = [0.0; 6];
            for (c, col) in [4, 5, 6, 10, 11, 12].into_iter().enumerate() {
                s[c] = parse_f64(f[col], &file, lineno)?;
            }
            if s.iter().any(|v| v.is_nan()) {
                continue;
            }
            let label = PAMAP2_CLASSES.iter().position(|(id, _)| *id == activity);
            rec.push(t, s, label);
        }
        rec.sort();
        for (w, l) in rec.windows(cfg)? {
            items.push((w, l, participant));
        }
    }
    let classes = PAMAP2_CLASSES.iter().map(|(_, s)| s.to_string()).collect();
    assemble("pamap2", classes, items, |p| p <= 6, cfg, cfg.target_rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resample_halves_rate() {
        let times: Vec<f64> = (0..11).map(|i| i as f64 * 0.01).collect();
        let samples: Vec<[f64; 6]> = (0..11).map(|i| [i as f64; 6]).collect();
        let rows = resample(&times, &samples, 50.0);
        assert_eq!(rows[0].len(), 6);
        for (k, v) in rows[3].iter().enumerate() {
            assert!((v - 2.0 * k as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn recording_splits_on_label_change() {
        let mut rec = Recording::default();
        for i in 0..40 {
            let label = if i < 20 { Some(0) } else { Some(1) };
            rec.push(i as f64 / 50.0, [i as f64; 6], label);
        }
        let cfg = WindowingConfig {
            length: 10,
            overlap: 0.0,
            ..WindowingConfig::default()
        };
        let ws = rec.windows(&cfg).unwrap();
        // each 20-sample run yields one 10-sample window after resampling (19 intervals → 20 points)
        let labels: Vec<usize> = ws.iter().map(|w| w.1).collect();
        assert_eq!(labels, vec![0, 0, 1, 1]);
    }

    #[test]
    fn unknown_dataset_name() {
        let s = SyntheticConfig::default();
        assert!(DatasetSource::from_name("mnist", Some(Path::new("/tmp")), &s).is_err());
        assert!(DatasetSource::from_name("hhar", None, &s).is_err());
        assert_eq!(DatasetSource::from_name("UCI-HAR", Some(Path::new("/x")), &s).unwrap().name(), "uci");
    }
}
