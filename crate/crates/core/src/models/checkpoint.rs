//! Model checkpoint container.
//!
//! Layout (little-endian): magic `EDDMODEL`, `u32` version, architecture as a
//! length-prefixed JSON string, an RNG-state flag with the ChaCha seed, stream
//! and word position, then the named tensors (name, freeze flag, rank, dims,
//! values). Round trips are bit-exact.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Architecture, Network};
use crate::binio::{write_atomic, Reader, Writer};
use crate::error::{Error, Result};
use crate::numerics::{Param, Rng, Tensor};

const MAGIC: &[u8; 8] = b"EDDMODEL";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: Network,
    pub rng: Option<Rng>,
}

pub fn encode(network: &Network, rng: Option<&Rng>) -> Result<Vec<u8>> {
    let mut w = Writer::new(Vec::new());
    w.bytes(MAGIC)?;
    w.u32(VERSION)?;
    w.str(&serde_json::to_string(&network.arch)?)?;
    match rng {
        Some(r) => {
            w.u32(1)?;
            w.bytes(&r.get_seed())?;
            w.u64(r.get_stream())?;
            w.u128(r.get_word_pos())?;
        }
        None => w.u32(0)?,
    }
    w.usize(network.params.len())?;
    for p in &network.params {
        w.str(&p.name)?;
        w.u32(u32::from(p.frozen))?;
        w.usize(p.value.shape().len())?;
        for &d in p.value.shape() {
            w.usize(d)?;
        }
        w.f64s(p.value.data())?;
    }
    Ok(w.into_inner())
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader::new(bytes);
    r.expect_magic(MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("checkpoint version {version}, expected {VERSION}")));
    }
    let arch: Architecture = serde_json::from_str(&r.str()?)?;
    let rng = match r.u32()? {
        0 => None,
        1 => {
            let seed: [u8; 32] = r.exact()?;
            let mut rng = ChaCha8Rng::from_seed(seed);
            rng.set_stream(r.u64()?);
            rng.set_word_pos(r.u128()?);
            Some(rng)
        }
        f => return Err(Error::Format(format!("bad rng flag {f}"))),
    };
    let n = r.usize()?;
    let mut params = Vec::with_capacity(n);
    for _ in 0..n {
        let name = r.str()?;
        let frozen = match r.u32()? {
            0 => false,
            1 => true,
            f => return Err(Error::Format(format!("bad freeze flag {f}"))),
        };
        let rank = r.usize()?;
        let shape = (0..rank).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        let value = Tensor::new(shape, r.f64s(len)?)?;
        params.push(Param { name, value, frozen });
    }
    // the stored tensors must match what the architecture would build
    let expected = Network::new(arch.clone(), 0)?;
    if expected.params.len() != params.len()
        || expected
            .params
            .iter()
            .zip(&params)
            .any(|(e, p)| e.name != p.name || e.value.shape() != p.value.shape())
    {
        return Err(Error::Format("tensors do not match the stored architecture".into()));
    }
    Ok(Checkpoint {
        network: Network { arch, params },
        rng,
    })
}

pub fn save(path: &Path, network: &Network, rng: Option<&Rng>) -> Result<()> {
    write_atomic(path, &encode(network, rng)?)
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    decode(&std::fs::read(path)?)
}
