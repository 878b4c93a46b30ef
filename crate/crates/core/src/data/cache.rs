//! Binary dataset container: magic, version, JSON metadata, then per split a
//! shape header followed by labels, participants and little-endian `f64`
//! window values.

use std::path::Path;

use super::{DatasetMetadata, LabeledDataset, SensorWindow, SplitDataset};
use crate::binio::{write_atomic, Reader, Writer};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"EDDDATA\0";
const VERSION: u32 = 1;

pub fn encode(d: &SplitDataset) -> Result<Vec<u8>> {
    let mut w = Writer::new(Vec::new());
    w.bytes(MAGIC)?;
    w.u32(VERSION)?;
    w.str(&serde_json::to_string(&d.metadata)?)?;
    let names = serde_json::to_string(&d.train.class_names)?;
    w.str(&names)?;
    for split in [&d.train, &d.validation] {
        let [c, t] = split.window_shape().unwrap_or([0, 0]);
        w.usize(split.len())?;
        w.usize(c)?;
        w.usize(t)?;
        w.f64(split.sample_rate)?;
        for &l in &split.labels {
            w.usize(l)?;
        }
        for &p in &split.participants {
            w.u32(p)?;
        }
        for win in &split.windows {
            w.f64s(win.values())?;
        }
    }
    Ok(w.into_inner())
}

pub fn decode(bytes: &[u8]) -> Result<SplitDataset> {
    let mut r = Reader::new(bytes);
    r.expect_magic(MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("dataset cache version {version}, expected {VERSION}")));
    }
    let metadata: DatasetMetadata = serde_json::from_str(&r.str()?)?;
    let class_names: Vec<String> = serde_json::from_str(&r.str()?)?;
    let mut read_split = || -> Result<LabeledDataset> {
        let n = r.usize()?;
        let c = r.usize()?;
        let t = r.usize()?;
        let rate = r.f64()?;
        let labels = (0..n).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
        let participants = (0..n).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let windows = (0..n)
            .map(|_| SensorWindow::new(c, t, r.f64s(c * t)?))
            .collect::<Result<Vec<_>>>()?;
        LabeledDataset::new(windows, labels, class_names.clone(), participants, rate)
    };
    let train = read_split()?;
    let validation = read_split()?;
    Ok(SplitDataset {
        train,
        validation,
        metadata,
    })
}

pub fn save(d: &SplitDataset, path: &Path) -> Result<()> {
    write_atomic(path, &encode(d)?)
}

pub fn load(path: &Path) -> Result<SplitDataset> {
    decode(&std::fs::read(path)?)
}
