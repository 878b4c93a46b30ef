//! Shared oracles for the integration tests and the acceptance gate.
#![allow(dead_code)]

use edd_core::numerics::{seeded_rng, Tape, Tensor, Var};
use edd_core::Result;
use rand::Rng;

pub const DESK_CONFIG: &str = include_str!("../../../../configs/desk.toml");

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;
pub const CASES: usize = 20;

/// How to draw the entries of one input tensor.
#[derive(Clone, Copy)]
pub enum Dist {
    Uniform(f64, f64),
    /// Uniform magnitude in `[lo, hi]` with a random sign; keeps inputs away
    /// from kinks at zero.
    AwayFromZero(f64, f64),
}

impl Dist {
    fn sample(self, rng: &mut impl Rng) -> f64 {
        match self {
            Dist::Uniform(lo, hi) => rng.random_range(lo..hi),
            Dist::AwayFromZero(lo, hi) => {
                let m = rng.random_range(lo..hi);
                if rng.random::<bool>() {
                    m
                } else {
                    -m
                }
            }
        }
    }
}

pub struct GradCase {
    pub name: &'static str,
    pub inputs: Vec<(Vec<usize>, Dist)>,
    pub build: fn(&mut Tape, &[Var]) -> Result<Var>,
}

/// Largest relative error `|analytic − fd| / max(1, |fd|)` over every input
/// entry of one random instance.
fn check_once(case: &GradCase, seed: u64) -> Result<f64> {
    let mut rng = seeded_rng(seed);
    let values: Vec<Tensor> = case
        .inputs
        .iter()
        .map(|(shape, dist)| {
            let n = shape.iter().product();
            Tensor::new(shape.clone(), (0..n).map(|_| dist.sample(&mut rng)).collect())
        })
        .collect::<Result<_>>()?;

    // weighting the output by fixed random coefficients makes every output
    // entry matter to the scalar being differentiated
    let forward = |vals: &[Tensor], weights: Option<&Tensor>, leaves: bool| -> Result<(Tape, Vec<Var>, Var, Tensor)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals
            .iter()
            .map(|v| if leaves { tape.leaf(v.clone()) } else { tape.constant(v.clone()) })
            .collect();
        let out = (case.build)(&mut tape, &vars)?;
        let shape = tape.value(out).shape().to_vec();
        let w = match weights {
            Some(w) => w.clone(),
            None => {
                let mut wrng = seeded_rng(seed ^ 0xabcdef);
                let n = shape.iter().product::<usize>().max(1);
                Tensor::new(shape.clone(), (0..n).map(|_| wrng.random_range(-1.0..1.0)).collect())?
            }
        };
        let wv = tape.constant(w.clone());
        let prod = tape.mul(out, wv)?;
        let loss = tape.sum(prod);
        Ok((tape, vars, loss, w))
    };

    let (tape, vars, loss, weights) = forward(&values, None, true)?;
    let grads = tape.backward(loss)?;
    let mut worst: f64 = 0.0;
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(values[k].shape()));
        for j in 0..values[k].len() {
            let eval = |delta: f64| -> Result<f64> {
                let mut vals = values.clone();
                vals[k].data_mut()[j] += delta;
                let (t, _, l, _) = forward(&vals, Some(&weights), false)?;
                Ok(t.value(l).data()[0])
            };
            let fd = (eval(FD_STEP)? - eval(-FD_STEP)?) / (2.0 * FD_STEP);
            let err = (analytic.data()[j] - fd).abs() / fd.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

/// Runs `cases` random instances and returns the worst relative error.
pub fn check(case: &GradCase, cases: usize) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for i in 0..cases {
        worst = worst.max(check_once(case, 1000 + i as u64)?);
    }
    Ok(worst)
}

fn u(lo: f64, hi: f64) -> Dist {
    Dist::Uniform(lo, hi)
}

/// One case per differentiable primitive of the tape.
pub fn primitive_cases() -> Vec<GradCase> {
    vec![
        GradCase {
            name: "conv1d",
            inputs: vec![(vec![2, 3, 9], u(-1.0, 1.0)), (vec![4, 3, 3], u(-1.0, 1.0)), (vec![4], u(-1.0, 1.0))],
            build: |t, v| t.conv1d(v[0], v[1], v[2], 1),
        },
        GradCase {
            name: "conv1d_stride2",
            inputs: vec![(vec![2, 2, 11], u(-1.0, 1.0)), (vec![3, 2, 4], u(-1.0, 1.0)), (vec![3], u(-1.0, 1.0))],
            build: |t, v| t.conv1d(v[0], v[1], v[2], 2),
        },
        GradCase {
            name: "linear",
            inputs: vec![(vec![3, 5], u(-1.0, 1.0)), (vec![4, 5], u(-1.0, 1.0)), (vec![4], u(-1.0, 1.0))],
            build: |t, v| t.linear(v[0], v[1], v[2]),
        },
        GradCase {
            name: "relu",
            inputs: vec![(vec![3, 4], Dist::AwayFromZero(0.01, 2.0))],
            build: |t, v| Ok(t.relu(v[0])),
        },
        GradCase {
            name: "dropout",
            inputs: vec![(vec![4, 6], u(-2.0, 2.0))],
            // a fixed seed gives the same mask in every evaluation
            build: |t, v| t.dropout(v[0], 0.3, &mut seeded_rng(7)),
        },
        GradCase {
            name: "max_pool_time",
            inputs: vec![(vec![2, 3, 7], u(-3.0, 3.0))],
            build: |t, v| t.max_pool_time(v[0]),
        },
        GradCase {
            name: "softmax",
            inputs: vec![(vec![3, 4], u(-3.0, 3.0))],
            build: |t, v| t.softmax(v[0], 1.0),
        },
        GradCase {
            name: "softmax_tempered",
            inputs: vec![(vec![3, 4], u(-3.0, 3.0))],
            build: |t, v| t.softmax(v[0], 2.5),
        },
        GradCase {
            name: "log_softmax",
            inputs: vec![(vec![3, 5], u(-3.0, 3.0))],
            build: |t, v| t.log_softmax(v[0], 1.0),
        },
        GradCase {
            name: "log_softmax_tempered",
            inputs: vec![(vec![3, 5], u(-3.0, 3.0))],
            build: |t, v| t.log_softmax(v[0], 4.0),
        },
        GradCase {
            name: "exp",
            inputs: vec![(vec![3, 3], u(-2.0, 2.0))],
            build: |t, v| Ok(t.exp(v[0])),
        },
        GradCase {
            name: "log",
            inputs: vec![(vec![3, 3], u(0.2, 5.0))],
            build: |t, v| t.log(v[0]),
        },
        GradCase {
            name: "neg",
            inputs: vec![(vec![5], u(-2.0, 2.0))],
            build: |t, v| Ok(t.neg(v[0])),
        },
        GradCase {
            name: "add",
            inputs: vec![(vec![2, 3], u(-2.0, 2.0)), (vec![2, 3], u(-2.0, 2.0))],
            build: |t, v| t.add(v[0], v[1]),
        },
        GradCase {
            name: "sub",
            inputs: vec![(vec![2, 3], u(-2.0, 2.0)), (vec![2, 3], u(-2.0, 2.0))],
            build: |t, v| t.sub(v[0], v[1]),
        },
        GradCase {
            name: "mul",
            inputs: vec![(vec![2, 3], u(-2.0, 2.0)), (vec![2, 3], u(-2.0, 2.0))],
            build: |t, v| t.mul(v[0], v[1]),
        },
        GradCase {
            name: "mul_shared_operand",
            inputs: vec![(vec![4], u(-2.0, 2.0))],
            build: |t, v| t.mul(v[0], v[0]),
        },
        GradCase {
            name: "scale",
            inputs: vec![(vec![2, 3], u(-2.0, 2.0))],
            build: |t, v| Ok(t.scale(v[0], -1.7)),
        },
        GradCase {
            name: "add_scalar",
            inputs: vec![(vec![2, 3], u(-2.0, 2.0))],
            build: |t, v| Ok(t.add_scalar(v[0], 0.4)),
        },
        GradCase {
            name: "sum",
            inputs: vec![(vec![2, 3, 2], u(-2.0, 2.0))],
            build: |t, v| Ok(t.sum(v[0])),
        },
        GradCase {
            name: "mean",
            inputs: vec![(vec![2, 5], u(-2.0, 2.0))],
            build: |t, v| t.mean(v[0]),
        },
        GradCase {
            name: "sum_rows",
            inputs: vec![(vec![3, 2, 2], u(-2.0, 2.0))],
            build: |t, v| t.sum_rows(v[0]),
        },
        GradCase {
            name: "select_rows",
            inputs: vec![(vec![4, 3], u(-2.0, 2.0))],
            build: |t, v| t.select_rows(v[0], &[2, 0, 2, 3]),
        },
        GradCase {
            name: "clamp",
            // entries stay clear of the bounds so finite differences do not straddle a kink
            inputs: vec![(vec![12], Dist::AwayFromZero(0.01, 0.49))],
            build: |t, v| {
                let shifted = t.scale(v[0], 4.0);
                Ok(t.clamp(shifted, -1.0, 1.0))
            },
        },
        GradCase {
            name: "lgamma",
            inputs: vec![(vec![12], u(0.05, 25.0))],
            build: |t, v| t.lgamma(v[0]),
        },
        GradCase {
            name: "softplus",
            inputs: vec![(vec![8], u(-30.0, 30.0))],
            build: |t, v| Ok(t.softplus(v[0])),
        },
    ]
}
