//! Fast gradient sign attacks.
//!
//! Every model is attacked through the cross-entropy of its own point
//! prediction: the softmax for a single classifier, the member mean for an
//! ensemble, and the Dirichlet mean for a prior network.

use serde::{Deserialize, Serialize};

use crate::data::{LabeledDataset, SensorWindow};
use crate::error::{Error, Result};
use crate::models::{windows_to_tensor, Mode, Network, ALPHA_MAX, ALPHA_MIN};
use crate::numerics::{Tape, Tensor, Var};

const ATTACK_CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FgsmConfig {
    pub epsilon: f64,
}

impl FgsmConfig {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon >= 0.0) || !epsilon.is_finite() {
            return Err(Error::InvalidParameter(format!("epsilon {epsilon} must be a finite non-negative number")));
        }
        Ok(Self { epsilon })
    }
}

/// A model whose point-prediction loss can be built on a tape.
pub trait AttackTarget {
    /// Summed cross-entropy of the point prediction for the `[B, C, T]`
    /// input `x` against `labels`. Summing keeps per-sample gradients
    /// independent of the batch.
    fn point_loss(&self, tape: &mut Tape, x: Var, labels: &[usize]) -> Result<Var>;
}

fn one_hot(tape: &mut Tape, labels: &[usize], classes: usize) -> Result<Var> {
    let mut data = vec![0.0; labels.len() * classes];
    for (i, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::InvalidParameter(format!("label {y} with {classes} classes")));
        }
        data[i * classes + y] = 1.0;
    }
    Ok(tape.constant(Tensor::new(vec![labels.len(), classes], data)?))
}

fn classes_of(net: &Network) -> Result<usize> {
    net.classes()
        .ok_or_else(|| Error::ArchitectureMismatch("attacked network has no class head".into()))
}

/// A softmax classifier.
pub struct Single<'a>(pub &'a Network);

/// Members attacked jointly through their mean distribution.
pub struct Ensemble<'a>(pub &'a [Network]);

/// A prior network attacked through its expected distribution `α / S`.
pub struct Distilled<'a>(pub &'a Network);

impl AttackTarget for Single<'_> {
    fn point_loss(&self, tape: &mut Tape, x: Var, labels: &[usize]) -> Result<Var> {
        let vars = self.0.bind_constant(tape);
        let z = self.0.logits(tape, &vars, x, &mut Mode::Eval)?;
        let lp = tape.log_softmax(z, 1.0)?;
        let y = one_hot(tape, labels, classes_of(self.0)?)?;
        let picked = tape.mul(lp, y)?;
        let s = tape.sum(picked);
        Ok(tape.neg(s))
    }
}

impl AttackTarget for Ensemble<'_> {
    fn point_loss(&self, tape: &mut Tape, x: Var, labels: &[usize]) -> Result<Var> {
        let first = self.0.first().ok_or_else(|| Error::Empty("ensemble".into()))?;
        let classes = classes_of(first)?;
        let mut total: Option<Var> = None;
        for m in self.0 {
            if classes_of(m)? != classes {
                return Err(Error::ArchitectureMismatch("ensemble members disagree on classes".into()));
            }
            let vars = m.bind_constant(tape);
            let z = m.logits(tape, &vars, x, &mut Mode::Eval)?;
            let p = tape.softmax(z, 1.0)?;
            total = Some(match total {
                Some(t) => tape.add(t, p)?,
                None => p,
            });
        }
        let mean = tape.scale(total.expect("nonempty"), 1.0 / self.0.len() as f64);
        let y = one_hot(tape, labels, classes)?;
        let picked = tape.mul(mean, y)?;
        let p_true = tape.sum_rows(picked)?;
        // a true-class probability that underflowed leaves no usable gradient
        let p_true = tape.clamp(p_true, f64::MIN_POSITIVE, 1.0);
        let lp = tape.log(p_true)?;
        let s = tape.sum(lp);
        Ok(tape.neg(s))
    }
}

impl AttackTarget for Distilled<'_> {
    fn point_loss(&self, tape: &mut Tape, x: Var, labels: &[usize]) -> Result<Var> {
        let vars = self.0.bind_constant(tape);
        let z = self.0.logits(tape, &vars, x, &mut Mode::Eval)?;
        // −ln(α_y / S) = ln S − ln α_y, with ln α the clamped logit
        let z = tape.clamp(z, ALPHA_MIN.ln(), ALPHA_MAX.ln());
        let alpha = tape.exp(z);
        let s = tape.sum_rows(alpha)?;
        let ln_s = tape.log(s)?;
        let y = one_hot(tape, labels, classes_of(self.0)?)?;
        let picked = tape.mul(z, y)?;
        let ln_ay = tape.sum_rows(picked)?;
        let per = tape.sub(ln_s, ln_ay)?;
        Ok(tape.sum(per))
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `x + ε·sign(∇ₓ L)` for a batch of windows. `ε = 0` returns the inputs
/// unchanged without evaluating the model.
pub fn fgsm_batch(
    model: &dyn AttackTarget,
    windows: &[&SensorWindow],
    labels: &[usize],
    cfg: &FgsmConfig,
) -> Result<Vec<SensorWindow>> {
    if windows.len() != labels.len() {
        return Err(Error::shape("fgsm", &[windows.len()], &[labels.len()]));
    }
    if cfg.epsilon == 0.0 {
        return Ok(windows.iter().map(|w| (*w).clone()).collect());
    }
    let mut out = Vec::with_capacity(windows.len());
    for (chunk, ys) in windows.chunks(ATTACK_CHUNK).zip(labels.chunks(ATTACK_CHUNK)) {
        let mut tape = Tape::new();
        let x = tape.leaf(windows_to_tensor(chunk)?);
        let loss = model.point_loss(&mut tape, x, ys)?;
        let grads = tape.backward(loss)?;
        let g = grads
            .get(x)
            .ok_or_else(|| Error::non_finite("input gradient (none recorded)"))?;
        if !g.all_finite() {
            return Err(Error::non_finite("input gradient"));
        }
        let per = g.row_len();
        for (i, w) in chunk.iter().enumerate() {
            let [c, t] = w.shape();
            let values = w
                .values()
                .iter()
                .zip(&g.data()[i * per..(i + 1) * per])
                .map(|(v, d)| v + cfg.epsilon * sign(*d))
                .collect();
            out.push(SensorWindow::new(c, t, values)?);
        }
    }
    Ok(out)
}

pub fn fgsm(model: &dyn AttackTarget, x: &SensorWindow, label: usize, cfg: &FgsmConfig) -> Result<SensorWindow> {
    Ok(fgsm_batch(model, &[x], &[label], cfg)?.remove(0))
}

/// White-box perturbation of a whole labeled set against `model`.
pub fn perturb_dataset(model: &dyn AttackTarget, d: &LabeledDataset, cfg: &FgsmConfig) -> Result<LabeledDataset> {
    let refs: Vec<&SensorWindow> = d.windows.iter().collect();
    let windows = fgsm_batch(model, &refs, &d.labels, cfg)?;
    Ok(LabeledDataset {
        windows,
        ..d.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Loss whose input gradient is a fixed vector `g`: `L = Σ g·x`.
    struct FixedGradient(Vec<f64>);

    impl AttackTarget for FixedGradient {
        fn point_loss(&self, tape: &mut Tape, x: Var, _: &[usize]) -> Result<Var> {
            let shape = tape.value(x).shape().to_vec();
            let g = tape.constant(Tensor::new(shape, self.0.clone())?);
            let p = tape.mul(x, g)?;
            Ok(tape.sum(p))
        }
    }

    #[test]
    fn sign_definition() {
        let x = SensorWindow::new(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        let m = FixedGradient(vec![0.3, -0.2, 0.0]);
        let adv = fgsm(&m, &x, 0, &FgsmConfig::new(0.1).unwrap()).unwrap();
        let d: Vec<f64> = adv.values().iter().zip(x.values()).map(|(a, b)| a - b).collect();
        assert!((d[0] - 0.1).abs() < 1e-15 && (d[1] + 0.1).abs() < 1e-15 && d[2] == 0.0);
    }

    #[test]
    fn zero_epsilon_is_identity() {
        let x = SensorWindow::new(1, 3, vec![0.1, -7.25, 3.0]).unwrap();
        let m = FixedGradient(vec![1.0, 1.0, 1.0]);
        let adv = fgsm(&m, &x, 0, &FgsmConfig::new(0.0).unwrap()).unwrap();
        assert_eq!(adv, x);
    }

    #[test]
    fn negative_epsilon_rejected() {
        assert!(FgsmConfig::new(-0.1).is_err());
        assert!(FgsmConfig::new(f64::NAN).is_err());
    }
}
