//! Depth limits of normalized kernels.

use statrs::function::gamma::gamma;

use crate::activations::{ActivationKind, ActivationModel, CorrelationMap};
use crate::error::{NtkError, Result};
use crate::phase::{classify, InitParams, Phase};

use super::{ArchKind, Architecture, FirstLayer, InputPair};

const COLINEAR_TOL: f64 = 1e-15;

/// Limit of the architecture's normalized kernel as depth grows.
///
/// On the edge of chaos and for residual networks this is the limit of
/// `K^L / alpha_L` under the architecture's default scheme. In the ordered
/// phase (and for the off-diagonal chaotic Tanh case) `K^L` itself converges
/// and that constant is returned. Conv architectures use the dense limit of
/// their translation-invariant reduction.
pub fn limiting_kernel(
    arch: Architecture,
    model: &ActivationModel,
    params: InitParams,
    pair: &InputPair,
) -> Result<f64> {
    limiting_kernel_first(arch, model, params, pair.first_layer(params))
}

pub(crate) fn limiting_kernel_first(
    arch: Architecture,
    model: &ActivationModel,
    params: InitParams,
    first: FirstLayer,
) -> Result<f64> {
    if !(first.qx > 0.0 && first.qxp > 0.0) {
        return Err(NtkError::InvalidArgument("first-layer variances must be positive".into()));
    }
    let (sb2, _) = params.squares();
    let relu = model.kind() == ActivationKind::Relu;
    let same = first.diagonal || (relu && sb2 == 0.0 && first.correlation() >= 1.0 - COLINEAR_TOL);
    match arch.kind.dense() {
        ArchKind::Ffnn => ffnn_limit(model, params, first, same),
        ArchKind::ResnetDense | ArchKind::ScaledResnetDense if !relu => Err(NtkError::Unsupported(
            "residual limits are available for relu only".into(),
        )),
        ArchKind::ResnetDense => {
            let a = params.half_gain();
            let d = |q1: f64| (a * q1 + sb2) / (1.0 + a);
            Ok(residual_combine(d(first.qx), d(first.qxp), same, 0.25))
        }
        _ => {
            let a = params.half_gain();
            let g = gamma(2.0 + a);
            let d = |q1: f64| (a * q1 + sb2) / g;
            Ok(residual_combine(d(first.qx), d(first.qxp), same, 1.0))
        }
    }
}

fn residual_combine(dx: f64, dxp: f64, same: bool, lambda: f64) -> f64 {
    let base = (dx * dxp).sqrt();
    if same {
        base
    } else {
        lambda * base
    }
}

fn ffnn_limit(model: &ActivationModel, params: InitParams, first: FirstLayer, same: bool) -> Result<f64> {
    let (sb2, _) = params.squares();
    match model.kind() {
        ActivationKind::Relu => {
            let a = params.half_gain();
            if a > 1.0 {
                return Err(NtkError::Divergence(format!(
                    "relu with sigma_w = {} is chaotic; the kernel grows geometrically",
                    params.sigma_w
                )));
            }
            if a == 1.0 {
                if sb2 > 0.0 {
                    return Err(NtkError::Divergence(
                        "relu with sigma_w = sqrt(2) and sigma_b > 0 has unbounded variance".into(),
                    ));
                }
                let base = (first.qx * first.qxp).sqrt();
                return Ok(if same { base } else { 0.25 * base });
            }
            // c = 1 is attracting, so both entries share q*/(1 - a)
            let q = sb2 / (1.0 - a);
            Ok(q / (1.0 - a))
        }
        ActivationKind::Tanh => {
            let report = classify(model, params)?;
            let q = report.q_fixed;
            match report.phase {
                Phase::Eoc => {
                    if q == 0.0 {
                        return Ok(0.0);
                    }
                    Ok(if same { q } else { q / 3.0 })
                }
                Phase::Ordered => {
                    if q == 0.0 {
                        return Ok(0.0);
                    }
                    Ok(q / (1.0 - report.chi))
                }
                Phase::Chaotic => {
                    if same {
                        return Err(NtkError::Divergence(
                            "diagonal kernel grows geometrically in the chaotic phase".into(),
                        ));
                    }
                    let map = CorrelationMap::new(model.clone(), q, params)?;
                    let c = stable_correlation(&map)?;
                    let slope = map.deriv(c, 1)?;
                    if slope >= 1.0 {
                        return Err(NtkError::Divergence(format!(
                            "correlation fixed point {c} is not attracting (f' = {slope})"
                        )));
                    }
                    Ok(q * c / (1.0 - slope))
                }
            }
        }
    }
}

/// Attracting fixed point of the correlation map below 1.
fn stable_correlation(map: &CorrelationMap) -> Result<f64> {
    let mut c = 0.0;
    for _ in 0..100_000 {
        let next = map.f(c)?.clamp(-1.0, 1.0);
        if (next - c).abs() < 1e-15 {
            return Ok(next);
        }
        c = next;
    }
    Err(NtkError::Convergence("correlation iteration did not settle".into()))
}
