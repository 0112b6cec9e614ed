//! Training objectives with end-to-end analytic gradients.

use crate::coder::rate::RateModel;
use crate::coder::{class_delta, pyramid_classes, surrogate_factor, surrogate_value, Band, ClassKey, Quantizer};
use crate::error::{Error, Result};
use crate::lifting::{
    analyze_backward, analyze_traced, synthesize_backward, synthesize_traced, LiftingStructure,
    OracleSource, SubbandPyramid,
};
use crate::store::{GradStore, WeightStore};
use crate::tensor::Tensor;

/// Weight-store key of the trainable log-scale of one subband class.
pub fn rate_param_name(class: ClassKey) -> String {
    format!("rate.{}", class.name())
}

pub fn is_rate_param(name: &str) -> bool {
    name.starts_with("rate.")
}

/// Add missing rate-model log-scales (initialised to 0, i.e. unit scale).
pub fn ensure_rate_params(weights: &mut WeightStore, levels: usize) {
    for class in pyramid_classes(levels) {
        let name = rate_param_name(class);
        if !weights.contains(&name) {
            weights.insert(name, Tensor::from_vec(&[1], vec![0.0]).unwrap());
        }
    }
}

/// Set each class's Laplacian scale to the mean coefficient magnitude over
/// the dataset (the maximum-likelihood fit).  Gradient descent on the
/// log-scales only has to track drift afterwards; starting them at unit
/// scale would let a wildly mis-calibrated rate term distort the transform
/// for thousands of steps.
pub fn calibrate_rate_scales(
    dataset: &[Tensor],
    structure: &LiftingStructure,
    weights: &mut WeightStore,
    levels: usize,
) -> Result<()> {
    let classes = pyramid_classes(levels);
    let mut sums = vec![0.0f64; classes.len()];
    let mut counts = vec![0usize; classes.len()];
    for x in dataset {
        let (pyramid, _) = analyze_traced(x, structure, weights, levels, None)?;
        for (i, &class) in classes.iter().enumerate() {
            let plane = band_plane(&pyramid, class);
            sums[i] += plane.data().iter().map(|v| v.abs()).sum::<f64>();
            counts[i] += plane.len();
        }
    }
    for (i, &class) in classes.iter().enumerate() {
        let mean = sums[i] / counts[i].max(1) as f64;
        let theta = mean.max(1e-3).ln();
        weights.insert(rate_param_name(class), Tensor::from_vec(&[1], vec![theta]).unwrap());
    }
    Ok(())
}

/// How the non-differentiable quantizer enters the forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantMode {
    /// Real objective: hard indices forward, annealed surrogate backward.
    Hard,
    /// Fully smooth surrogate forward and backward; for gradient checks.
    Soft,
}

#[derive(Debug, Clone, Copy)]
pub struct RdSettings {
    pub levels: usize,
    pub base_delta: f64,
    pub lambda1: f64,
    pub temperature: f64,
    pub mode: QuantMode,
}

#[derive(Debug, Clone, Copy)]
pub struct RdEval {
    pub j: f64,
    pub distortion: f64,
    pub rate_bits: f64,
}

fn band_plane<'a>(p: &'a SubbandPyramid, class: ClassKey) -> &'a Tensor {
    let d = class.level as usize - 1;
    match class.band {
        Band::Ll => &p.ll,
        Band::Hl => &p.details[d].hl,
        Band::Lh => &p.details[d].lh,
        Band::Hh => &p.details[d].hh,
    }
}

fn band_plane_mut<'a>(p: &'a mut SubbandPyramid, class: ClassKey) -> &'a mut Tensor {
    let d = class.level as usize - 1;
    match class.band {
        Band::Ll => &mut p.ll,
        Band::Hl => &mut p.details[d].hl,
        Band::Lh => &mut p.details[d].lh,
        Band::Hh => &mut p.details[d].hh,
    }
}

/// Rate-distortion objective `J = ||x - xhat||^2 + lambda1 * L` where
/// `xhat` synthesizes the (surrogate-)quantized pyramid and `L` is the
/// modelled coded length in bits.  Gradients flow into every transform
/// parameter (analysis and synthesis share weights) and into the rate-model
/// log-scales.
pub fn rd_objective(
    x: &Tensor,
    structure: &LiftingStructure,
    weights: &WeightStore,
    settings: &RdSettings,
    oracle: Option<&dyn OracleSource>,
    mut grads: Option<&mut GradStore>,
) -> Result<RdEval> {
    let (pyramid, atrace) = analyze_traced(x, structure, weights, settings.levels, oracle)?;
    if !pyramid.all_finite() {
        return Err(Error::Numeric("analysis produced non-finite coefficients".into()));
    }
    let classes = pyramid_classes(settings.levels);
    let mut recon = pyramid.zeros_like();
    let mut rate_bits = 0.0f64;
    let mut models = Vec::with_capacity(classes.len());
    for &class in &classes {
        let theta = weights.require(&rate_param_name(class))?.data()[0];
        let delta = class_delta(settings.base_delta, class, settings.levels);
        let quant = Quantizer::new(delta)?;
        let model = RateModel::new(delta, theta.exp())?;
        let src = band_plane(&pyramid, class);
        let dst = band_plane_mut(&mut recon, class);
        match settings.mode {
            QuantMode::Hard => {
                for (o, &y) in dst.data_mut().iter_mut().zip(src.data()) {
                    let q = quant.quantize(y);
                    *o = quant.dequantize(q);
                    rate_bits += model.bits_for_index(q);
                }
            }
            QuantMode::Soft => {
                for (o, &y) in dst.data_mut().iter_mut().zip(src.data()) {
                    *o = surrogate_value(&quant, settings.temperature, y);
                    rate_bits += model.smooth_bits(y);
                }
            }
        }
        models.push((class, quant, model));
    }
    let (xhat, strace) = synthesize_traced(&recon, structure, weights, oracle)?;
    let distortion: f64 = x
        .data()
        .iter()
        .zip(xhat.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let j = distortion + settings.lambda1 * rate_bits;
    if !j.is_finite() {
        return Err(Error::Numeric(format!(
            "objective is not finite (D={distortion}, L={rate_bits})"
        )));
    }
    if let Some(gr) = grads.as_deref_mut() {
        let g_xhat = {
            let mut g = xhat.clone();
            for (gv, (&xv, &rv)) in g
                .data_mut()
                .iter_mut()
                .zip(x.data().iter().zip(xhat.data()))
            {
                *gv = 2.0 * (rv - xv);
            }
            g
        };
        let g_recon = synthesize_backward(&strace, structure, weights, &g_xhat, Some(gr))?;
        // Chain through the quantizer surrogate and add the rate term.
        let mut g_pyr = pyramid.zeros_like();
        for (class, quant, model) in &models {
            let src = band_plane(&pyramid, *class);
            let g_in = band_plane(&g_recon, *class);
            let dst = band_plane_mut(&mut g_pyr, *class);
            let mut scale_grad = 0.0f64;
            for ((gv, &y), &gq) in dst
                .data_mut()
                .iter_mut()
                .zip(src.data())
                .zip(g_in.data())
            {
                let factor = surrogate_factor(quant, settings.temperature, y);
                *gv = gq * factor + settings.lambda1 * model.smooth_bits_grad_value(y);
                scale_grad += match settings.mode {
                    QuantMode::Hard => model.bits_grad_scale(quant.quantize(y)),
                    QuantMode::Soft => model.smooth_bits_grad_scale(y),
                };
            }
            // d theta = d scale * b (log parametrisation keeps b positive).
            gr.accumulate_scalar(
                &rate_param_name(*class),
                settings.lambda1 * scale_grad * model.scale,
            );
        }
        analyze_backward(&atrace, structure, weights, &g_pyr, Some(gr))?;
    }
    Ok(RdEval {
        j,
        distortion,
        rate_bits,
    })
}

/// Subband prefix order for the progressive-selection objective: the
/// deepest LL first, then details coarse to fine (HL, LH, HH within each
/// level), `3 levels + 1` entries in total.
pub fn selection_order(levels: usize) -> Vec<ClassKey> {
    pyramid_classes(levels)
}

/// Progressive-selection objective: the sum over subband prefixes of the
/// unquantized reconstruction error using only the first `i` subbands.
/// Encourages compacting the image into as few subbands as possible.
pub fn progressive_selection_objective(
    x: &Tensor,
    structure: &LiftingStructure,
    weights: &WeightStore,
    levels: usize,
    oracle: Option<&dyn OracleSource>,
    mut grads: Option<&mut GradStore>,
) -> Result<f64> {
    let (pyramid, atrace) = analyze_traced(x, structure, weights, levels, oracle)?;
    let order = selection_order(levels);
    let mut total = 0.0f64;
    let mut g_pyr = pyramid.zeros_like();
    for i in 1..=order.len() {
        let mut masked = pyramid.zeros_like();
        for &class in &order[..i] {
            *band_plane_mut(&mut masked, class) = band_plane(&pyramid, class).clone();
        }
        let (xhat, strace) = synthesize_traced(&masked, structure, weights, oracle)?;
        let term: f64 = x
            .data()
            .iter()
            .zip(xhat.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        total += term;
        if let Some(gr) = grads.as_deref_mut() {
            let mut g_xhat = xhat.clone();
            for (gv, (&xv, &rv)) in g_xhat
                .data_mut()
                .iter_mut()
                .zip(x.data().iter().zip(xhat.data()))
            {
                *gv = 2.0 * (rv - xv);
            }
            let g_masked = synthesize_backward(&strace, structure, weights, &g_xhat, Some(gr))?;
            // Only included subbands feed back; the zeroed ones are
            // constants.
            for &class in &order[..i] {
                band_plane_mut(&mut g_pyr, class).add_assign(band_plane(&g_masked, class));
            }
        }
    }
    if !total.is_finite() {
        return Err(Error::Numeric("progressive-selection objective is not finite".into()));
    }
    if let Some(gr) = grads.as_deref_mut() {
        analyze_backward(&atrace, structure, weights, &g_pyr, Some(gr))?;
    }
    Ok(total)
}

/// Per-prefix reconstruction errors (diagnostics and tests).
pub fn selection_terms(
    x: &Tensor,
    structure: &LiftingStructure,
    weights: &WeightStore,
    levels: usize,
) -> Result<Vec<f64>> {
    let (pyramid, _) = analyze_traced(x, structure, weights, levels, None)?;
    let order = selection_order(levels);
    let mut terms = Vec::with_capacity(order.len());
    for i in 1..=order.len() {
        let mut masked = pyramid.zeros_like();
        for &class in &order[..i] {
            *band_plane_mut(&mut masked, class) = band_plane(&pyramid, class).clone();
        }
        let (xhat, _) = synthesize_traced(&masked, structure, weights, None)?;
        terms.push(
            x.data()
                .iter()
                .zip(xhat.data())
                .map(|(a, b)| (a - b) * (a - b))
                .sum(),
        );
    }
    Ok(terms)
}
