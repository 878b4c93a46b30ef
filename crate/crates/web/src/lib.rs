//! wasm-bindgen exports behind `www/index.html`.
//!
//! Each export is a thin wrapper over a plain function so the logic can be
//! tested natively.

use edd_core::data::{SensorWindow, SyntheticConfig};
use edd_core::distill::{combo_depth_at, temperature_at, AnnealSchedule, ComboConfig};
use edd_core::models::DirichletParameters;
use edd_core::transforms::{apply, TransformKind, TransformParams};
use edd_core::uncertainty::{dirichlet_uncertainty_with, AleatoricForm};
use wasm_bindgen::prelude::*;

pub const PREVIEW_CHANNELS: usize = 6;
pub const PREVIEW_LENGTH: usize = 64;

/// `[total, aleatoric, epistemic]` for a Dirichlet with concentration `alpha`,
/// followed by the same three under the unshifted aleatoric form.
pub fn decompose(alpha: &[f64]) -> edd_core::Result<Vec<f64>> {
    let a = DirichletParameters::new(alpha.to_vec())?;
    let mut out = Vec::with_capacity(6);
    for form in [AleatoricForm::ExpectedEntropy, AleatoricForm::Unshifted] {
        let u = dirichlet_uncertainty_with(&a, form)?;
        out.extend([u.total, u.aleatoric, u.epistemic]);
    }
    Ok(out)
}

/// A synthetic window of `class`, channel-major.
pub fn sample_window(class: usize, seed: u64) -> edd_core::Result<SensorWindow> {
    let d = SyntheticConfig {
        classes: 3,
        channels: PREVIEW_CHANNELS,
        length: PREVIEW_LENGTH,
        windows_per_class: 1,
        participants: 2,
        validation_participants: 1,
        noise: 0.1,
        seed,
        ..SyntheticConfig::default()
    }
    .generate()?;
    let i = class % 3;
    Ok(d.train.windows[i].clone())
}

/// The source window followed by its transformed copy.
pub fn transform_preview(kind: usize, class: usize, seed: u64) -> edd_core::Result<Vec<f64>> {
    let kind = TransformKind::from_index(kind)
        .ok_or_else(|| edd_core::Error::InvalidParameter(format!("no transformation {kind}")))?;
    let x = sample_window(class, seed)?;
    let y = apply(kind, &x, &TransformParams::default(), seed.wrapping_add(1))?;
    Ok([x.values(), y.values()].concat())
}

/// Temperatures for epochs `0..epochs`, then combination depths.
pub fn schedule_curves(
    t0: f64,
    rate: f64,
    t_max: f64,
    combo_rate: f64,
    max_combos: usize,
    epochs: usize,
) -> edd_core::Result<Vec<f64>> {
    let s = AnnealSchedule { t0, rate, t_max };
    s.validate()?;
    let c = ComboConfig {
        rate: combo_rate,
        max_combos,
        ..ComboConfig::default()
    };
    c.validate()?;
    let temps = (0..epochs).map(|e| temperature_at(&s, e));
    let depths = (0..epochs).map(|e| combo_depth_at(&c, e) as f64);
    Ok(temps.chain(depths).collect())
}

fn js(e: edd_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen(js_name = decompose)]
pub fn decompose_js(alpha: &[f64]) -> Result<Vec<f64>, JsError> {
    decompose(alpha).map_err(js)
}

#[wasm_bindgen(js_name = transformPreview)]
pub fn transform_preview_js(kind: usize, class: usize, seed: u32) -> Result<Vec<f64>, JsError> {
    transform_preview(kind, class, u64::from(seed)).map_err(js)
}

#[wasm_bindgen(js_name = scheduleCurves)]
pub fn schedule_curves_js(
    t0: f64,
    rate: f64,
    t_max: f64,
    combo_rate: f64,
    max_combos: usize,
    epochs: usize,
) -> Result<Vec<f64>, JsError> {
    schedule_curves(t0, rate, t_max, combo_rate, max_combos, epochs).map_err(js)
}

#[wasm_bindgen(js_name = transformNames)]
pub fn transform_names() -> Vec<String> {
    TransformKind::ALL.iter().map(|k| k.name().to_string()).collect()
}

#[wasm_bindgen(js_name = previewShape)]
pub fn preview_shape() -> Vec<usize> {
    vec![PREVIEW_CHANNELS, PREVIEW_LENGTH]
}
