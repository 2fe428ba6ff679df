//! Variance fixed points, phase classification and the edge-of-chaos curve.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::activations::{ActivationKind, ActivationModel};
use crate::error::{NtkError, Result};

/// Tolerance on `|chi - 1|` for the edge-of-chaos label.
pub const PHASE_TOL: f64 = 1e-8;

const MAX_ITER: usize = 100_000;
const STEP_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitParams {
    pub sigma_b: f64,
    pub sigma_w: f64,
}

impl InitParams {
    pub fn new(sigma_b: f64, sigma_w: f64) -> Result<Self> {
        if !(sigma_w > 0.0) || !sigma_w.is_finite() {
            return Err(NtkError::InvalidArgument(format!("sigma_w must be positive, got {sigma_w}")));
        }
        if !(sigma_b >= 0.0) || !sigma_b.is_finite() {
            return Err(NtkError::InvalidArgument(format!(
                "sigma_b must be nonnegative, got {sigma_b}"
            )));
        }
        Ok(Self { sigma_b, sigma_w })
    }

    /// ReLU edge of chaos `(0, sqrt 2)`.
    pub fn relu_eoc() -> Self {
        Self { sigma_b: 0.0, sigma_w: std::f64::consts::SQRT_2 }
    }

    /// `(sigma_b^2, sigma_w^2)`, with `sigma_w^2` snapped to 2 when it is
    /// within rounding of the ReLU edge of chaos.
    pub fn squares(&self) -> (f64, f64) {
        let sw2 = self.sigma_w * self.sigma_w;
        let sw2 = if (sw2 - 2.0).abs() <= 8.0 * f64::EPSILON { 2.0 } else { sw2 };
        (self.sigma_b * self.sigma_b, sw2)
    }

    /// `sigma_w^2 / 2`, the per-layer ReLU variance gain.
    pub fn half_gain(&self) -> f64 {
        0.5 * self.squares().1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Ordered,
    Chaotic,
    Eoc,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Ordered => "ordered",
            Phase::Chaotic => "chaotic",
            Phase::Eoc => "eoc",
        })
    }
}

impl Phase {
    pub fn from_chi(chi: f64) -> Self {
        if chi < 1.0 - PHASE_TOL {
            Phase::Ordered
        } else if chi > 1.0 + PHASE_TOL {
            Phase::Chaotic
        } else {
            Phase::Eoc
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhaseReport {
    pub params: InitParams,
    /// Limiting variance; `+inf` when the variance diverges.
    pub q_fixed: f64,
    pub chi: f64,
    pub phase: Phase,
    /// The fixed point is zero (no bias), so `chi` is the `q -> 0` limit.
    pub degenerate: bool,
    /// ReLU on the edge of chaos keeps every variance; `q_fixed` is then
    /// the supplied input variance (1 when none is given).
    pub input_dependent: bool,
}

fn is_relu_eoc_gain(params: InitParams) -> bool {
    params.half_gain() == 1.0
}

/// Fixed point of the layerwise variance map.
///
/// For ReLU on the edge of chaos every variance is fixed and the caller's
/// `input_variance` is returned.
pub fn variance_fixed_point(
    model: &ActivationModel,
    params: InitParams,
    input_variance: Option<f64>,
) -> Result<f64> {
    let (sb2, _) = params.squares();
    match model.kind() {
        ActivationKind::Relu => {
            let a = params.half_gain();
            if a > 1.0 {
                return Err(NtkError::Divergence(format!(
                    "relu variance grows like ({a})^l for sigma_w = {}",
                    params.sigma_w
                )));
            }
            if is_relu_eoc_gain(params) {
                if sb2 > 0.0 {
                    return Err(NtkError::Divergence(
                        "relu variance grows linearly for sigma_w = sqrt(2), sigma_b > 0".into(),
                    ));
                }
                return input_variance.ok_or_else(|| {
                    NtkError::InvalidArgument(
                        "relu on the edge of chaos needs the input variance".into(),
                    )
                });
            }
            Ok(sb2 / (1.0 - a))
        }
        ActivationKind::Tanh => {
            if sb2 == 0.0 && params.sigma_w <= 1.0 {
                return Ok(0.0);
            }
            tanh_fixed_point(model, params)
        }
    }
}

fn tanh_fixed_point(model: &ActivationModel, params: InitParams) -> Result<f64> {
    const DAMPING: f64 = 0.9;
    let residual = |q: f64| -> Result<f64> { Ok(model.variance_map(params, q)? - q) };
    let mut q = 1.0;
    let mut converged = false;
    for it in 1..=MAX_ITER {
        let next = (1.0 - DAMPING) * q + DAMPING * model.variance_map(params, q)?;
        let step = (next - q).abs();
        q = next;
        if step < STEP_TOL {
            converged = true;
            break;
        }
        // slow contraction near a vanishing fixed point: try a Newton jump
        if it % 50 == 0 {
            let g = residual(q)?;
            let slope = model.variance_map_slope(params, q)? - 1.0;
            if slope < 0.0 {
                let cand = q - g / slope;
                if cand > 0.0 && residual(cand)?.abs() < g.abs() {
                    q = cand;
                }
            }
        }
    }
    if !converged {
        return Err(NtkError::Convergence(format!(
            "variance iteration did not settle within {MAX_ITER} steps"
        )));
    }
    // polish so that f(1) = 1 to rounding
    for _ in 0..3 {
        let g = residual(q)?;
        let slope = model.variance_map_slope(params, q)? - 1.0;
        if g == 0.0 || slope >= 0.0 {
            break;
        }
        let cand = q - g / slope;
        if cand > 0.0 && residual(cand)?.abs() <= g.abs() {
            q = cand;
        } else {
            break;
        }
    }
    Ok(q)
}

/// `sigma_w^2 E[phi'(sqrt(q) Z)^2]` at the variance fixed point.
pub fn chi(model: &ActivationModel, params: InitParams, q: f64) -> Result<f64> {
    match model.kind() {
        ActivationKind::Relu => Ok(params.half_gain()),
        ActivationKind::Tanh => model.chi(params.sigma_w, q),
    }
}

/// Phase report; ReLU on the edge of chaos uses unit input variance.
pub fn classify(model: &ActivationModel, params: InitParams) -> Result<PhaseReport> {
    classify_with_input(model, params, None)
}

pub fn classify_with_input(
    model: &ActivationModel,
    params: InitParams,
    input_variance: Option<f64>,
) -> Result<PhaseReport> {
    let relu_eoc = model.kind() == ActivationKind::Relu && is_relu_eoc_gain(params);
    let q = if relu_eoc && params.sigma_b == 0.0 {
        variance_fixed_point(model, params, Some(input_variance.unwrap_or(1.0)))?
    } else {
        variance_fixed_point(model, params, input_variance)?
    };
    let chi = chi(model, params, q)?;
    Ok(PhaseReport {
        params,
        q_fixed: q,
        chi,
        phase: Phase::from_chi(chi),
        degenerate: q == 0.0,
        input_dependent: relu_eoc,
    })
}

/// Total version of [`classify`] for phase diagrams: divergent ReLU
/// variances are reported with `q_fixed = inf` instead of an error.
pub fn phase_point(model: &ActivationModel, params: InitParams) -> Result<PhaseReport> {
    match classify(model, params) {
        Err(NtkError::Divergence(_)) if model.kind() == ActivationKind::Relu => {
            let chi = params.half_gain();
            Ok(PhaseReport {
                params,
                q_fixed: f64::INFINITY,
                chi,
                phase: Phase::from_chi(chi),
                degenerate: false,
                input_dependent: false,
            })
        }
        other => other,
    }
}

/// `sigma_w` on the Tanh edge of chaos for a given `sigma_b`.
pub fn eoc_curve(model: &ActivationModel, sigma_b: f64) -> Result<f64> {
    if model.kind() != ActivationKind::Tanh {
        return Err(NtkError::Unsupported(
            "the edge-of-chaos curve is solved for tanh; relu has the single point (0, sqrt 2)".into(),
        ));
    }
    let chi_at = |sw: f64| -> Result<f64> {
        let p = InitParams::new(sigma_b, sw)?;
        let q = variance_fixed_point(model, p, None)?;
        chi(model, p, q)
    };
    let (mut lo, mut hi) = (1e-3, 10.0);
    let (clo, chi_hi) = (chi_at(lo)? - 1.0, chi_at(hi)? - 1.0);
    if clo.signum() == chi_hi.signum() {
        return Err(NtkError::NoSolution(format!(
            "chi - 1 has no sign change on [1e-3, 10] for sigma_b = {sigma_b}"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if chi_at(mid)? < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 * hi {
            break;
        }
    }
    let (dlo, dhi) = ((chi_at(lo)? - 1.0).abs(), (chi_at(hi)? - 1.0).abs());
    let (best, err) = if dlo <= dhi { (lo, dlo) } else { (hi, dhi) };
    if err >= 1e-10 {
        return Err(NtkError::Convergence(format!(
            "bisection ended with |chi - 1| = {err:e} at sigma_w = {best}"
        )));
    }
    Ok(best)
}
