//! Entropy-based uncertainty decomposition, in nats.
//!
//! For an ensemble the total is the entropy of the member mean, the aleatoric
//! part the mean member entropy, and the epistemic part their difference (the
//! mutual information between prediction and member). For a Dirichlet the same
//! quantities have closed forms in terms of the digamma function.

use crate::error::{Error, Result};
use crate::models::{DirichletParameters, EnsemblePrediction};
use crate::numerics::special::digamma_unchecked;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UncertaintyTriple {
    pub total: f64,
    pub aleatoric: f64,
    pub epistemic: f64,
}

impl UncertaintyTriple {
    /// Epistemic uncertainty is defined as the difference, so the triple
    /// is additive exactly.
    pub fn from_total_and_aleatoric(total: f64, aleatoric: f64) -> Self {
        Self {
            total,
            aleatoric,
            epistemic: total - aleatoric,
        }
    }
}

/// Shannon entropy with `0 · ln 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>()
}

pub fn ensemble_uncertainty(p: &EnsemblePrediction) -> UncertaintyTriple {
    let total = entropy(&p.mean());
    let aleatoric = p.rows().map(entropy).sum::<f64>() / p.members() as f64;
    UncertaintyTriple::from_total_and_aleatoric(total, aleatoric)
}

/// Which expected-entropy expression to use for the Dirichlet aleatoric term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AleatoricForm {
    /// `−Σ μᵢ (ψ(αᵢ + 1) − ψ(S + 1))`, the expected categorical entropy.
    #[default]
    ExpectedEntropy,
    /// `−Σ μᵢ (ψ(αᵢ) − ψ(S))`; kept for comparison only. It exceeds the
    /// total for small concentrations, giving negative epistemic values.
    Unshifted,
}

pub fn dirichlet_uncertainty(a: &DirichletParameters) -> Result<UncertaintyTriple> {
    dirichlet_uncertainty_with(a, AleatoricForm::ExpectedEntropy)
}

pub fn dirichlet_uncertainty_with(a: &DirichletParameters, form: AleatoricForm) -> Result<UncertaintyTriple> {
    if let Some(&bad) = a.alpha.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
        return Err(Error::Domain {
            function: "Dirichlet uncertainty",
            value: bad,
        });
    }
    let s = a.concentration();
    let mu = a.mean();
    let shift = match form {
        AleatoricForm::ExpectedEntropy => 1.0,
        AleatoricForm::Unshifted => 0.0,
    };
    let psi_s = digamma_unchecked(s + shift);
    let aleatoric = -a
        .alpha
        .iter()
        .zip(&mu)
        .map(|(&ai, &m)| m * (digamma_unchecked(ai + shift) - psi_s))
        .sum::<f64>();
    Ok(UncertaintyTriple::from_total_and_aleatoric(entropy(&mu), aleatoric))
}

/// Output of any of the three model kinds, for uniform scoring.
#[derive(Debug, Clone, Copy)]
pub enum ModelOutput<'a> {
    Categorical(&'a [f64]),
    Ensemble(&'a EnsemblePrediction),
    Dirichlet(&'a DirichletParameters),
}

/// Total predictive uncertainty used to rank samples.
pub fn total_uncertainty_score(out: ModelOutput<'_>) -> Result<f64> {
    Ok(match out {
        ModelOutput::Categorical(p) => entropy(p),
        ModelOutput::Ensemble(e) => ensemble_uncertainty(e).total,
        ModelOutput::Dirichlet(d) => dirichlet_uncertainty(d)?.total,
    })
}
