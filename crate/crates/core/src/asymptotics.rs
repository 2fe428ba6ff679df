//! Depth expansions of the correlation and rate fits of kernel residuals.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activations::{relu_lift, ActivationKind, ActivationModel, CorrelationMap};
use crate::error::{NtkError, Result};
use crate::kernels::{dense_recursion, limiting_kernel, normalize, ArchKind, Architecture, FirstLayer, InputPair};
use crate::phase::{classify, InitParams, Phase};

/// Residuals are floored here before taking logs.
pub const RESIDUAL_FLOOR: f64 = 1e-300;

/// Minimum number of depths accepted by [`fit_rate`].
pub const MIN_FIT_POINTS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateModel {
    /// `A L^p`; `exponent` is `p` (negative for decay).
    Power,
    /// `A log(L) L^p`; `exponent` is `p`.
    PowerLog,
    /// `A exp(-gamma L)`; `exponent` is `gamma`.
    Exp,
    /// `A / log(L)^p`; `exponent` is `p`.
    InvLog,
}

impl fmt::Display for RateModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RateModel::Power => "power",
            RateModel::PowerLog => "power_log",
            RateModel::Exp => "exp",
            RateModel::InvLog => "inv_log",
        })
    }
}

impl FromStr for RateModel {
    type Err = NtkError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "power" => Ok(RateModel::Power),
            "power_log" => Ok(RateModel::PowerLog),
            "exp" => Ok(RateModel::Exp),
            "inv_log" => Ok(RateModel::InvLog),
            other => Err(NtkError::InvalidArgument(format!("unknown rate model '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateFit {
    pub model: RateModel,
    pub exponent: f64,
    pub prefactor: f64,
    /// Coefficient of determination in the transformed coordinates.
    pub r_squared: f64,
    pub fit_range: (usize, usize),
}

impl RateFit {
    /// Fitted residual at depth `l`.
    pub fn predict(&self, l: usize) -> f64 {
        let lf = l as f64;
        match self.model {
            RateModel::Power => self.prefactor * lf.powf(self.exponent),
            RateModel::PowerLog => self.prefactor * lf.ln() * lf.powf(self.exponent),
            RateModel::Exp => self.prefactor * (-self.exponent * lf).exp(),
            RateModel::InvLog => self.prefactor * lf.ln().powf(-self.exponent),
        }
    }
}

/// `start * 2^j` for `j` in `0..count`.
pub fn geometric_depths(start: usize, count: usize) -> Vec<usize> {
    (0..count).map(|j| start << j).collect()
}

/// Least squares of `y = c0 + c1 x`; returns `(c0, c1, r^2)`.
fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(u, v)| (u - mx) * (v - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let slope = sxy / sxx;
    let icept = my - slope * mx;
    let sse: f64 = x.iter().zip(y).map(|(u, v)| (v - icept - slope * u).powi(2)).sum();
    let r2 = if syy == 0.0 { if sse == 0.0 { 1.0 } else { 0.0 } } else { (1.0 - sse / syy).clamp(0.0, 1.0) };
    (icept, slope, r2)
}

/// Fits `residuals` against `depths` with one rate model.
pub fn fit_rate(depths: &[usize], residuals: &[f64], model: RateModel) -> Result<RateFit> {
    if depths.len() != residuals.len() {
        return Err(NtkError::InvalidArgument("depths and residuals differ in length".into()));
    }
    if depths.len() < MIN_FIT_POINTS {
        return Err(NtkError::InvalidArgument(format!(
            "rate fits need at least {MIN_FIT_POINTS} depths, got {}",
            depths.len()
        )));
    }
    if let Some(r) = residuals.iter().find(|r| !(**r > 0.0) || !r.is_finite()) {
        return Err(NtkError::InvalidArgument(format!("residuals must be positive and finite, got {r}")));
    }
    let min_depth = match model {
        RateModel::InvLog => 2,
        _ => 1,
    };
    if depths.iter().any(|&l| l < min_depth) {
        return Err(NtkError::InvalidArgument(format!("{model} fits need depths >= {min_depth}")));
    }
    let lf: Vec<f64> = depths.iter().map(|&l| l as f64).collect();
    let logr: Vec<f64> = residuals.iter().map(|r| r.max(RESIDUAL_FLOOR).ln()).collect();
    let (x, y): (Vec<f64>, Vec<f64>) = match model {
        RateModel::Power => (lf.iter().map(|l| l.ln()).collect(), logr),
        RateModel::PowerLog => (
            lf.iter().map(|l| l.ln()).collect(),
            logr.iter().zip(&lf).map(|(r, l)| r - l.ln().ln()).collect(),
        ),
        RateModel::Exp => (lf.clone(), logr),
        RateModel::InvLog => (lf.iter().map(|l| l.ln().ln()).collect(), logr),
    };
    let (c0, c1, r2) = linear_fit(&x, &y);
    let exponent = match model {
        RateModel::Power | RateModel::PowerLog => c1,
        RateModel::Exp | RateModel::InvLog => -c1,
    };
    Ok(RateFit {
        model,
        exponent,
        prefactor: c0.exp(),
        r_squared: r2,
        fit_range: (*depths.iter().min().unwrap(), *depths.iter().max().unwrap()),
    })
}

/// `s` in `f(1 - g) = 1 - g + s g^{3/2} + b g^{5/2} + ...` for the ReLU map.
pub const RELU_S: f64 = 2.0 * std::f64::consts::SQRT_2 / (3.0 * PI);
pub const RELU_B: f64 = std::f64::consts::SQRT_2 / (30.0 * PI);

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExpansionConstants {
    pub kappa_relu: f64,
    /// `2 / f''(1)`, present for Tanh on a positive variance.
    pub kappa_tanh: Option<f64>,
    /// `f'''(1) / 6`, present with `kappa_tanh`.
    pub zeta_tanh: Option<f64>,
    pub kappa_resnet: f64,
    pub s: f64,
    pub b: f64,
    pub zeta_scaled: f64,
}

impl ExpansionConstants {
    pub fn new(model: &ActivationModel, params: InitParams) -> Result<Self> {
        let (_, sw2) = params.squares();
        let (kappa_tanh, zeta_tanh) = match model.kind() {
            ActivationKind::Tanh => {
                let q = classify(model, params)?.q_fixed;
                if q > 0.0 {
                    let map = CorrelationMap::new(model.clone(), q, params)?;
                    (Some(2.0 / map.deriv(1.0, 2)?), Some(map.deriv(1.0, 3)? / 6.0))
                } else {
                    (None, None)
                }
            }
            ActivationKind::Relu => (None, None),
        };
        let kappa_relu = 4.5 * PI * PI;
        Ok(Self {
            kappa_relu,
            kappa_tanh,
            zeta_tanh,
            kappa_resnet: kappa_relu * (1.0 + 2.0 / sw2).powi(2),
            s: RELU_S,
            b: RELU_B,
            zeta_scaled: 16.0 / (RELU_S * RELU_S * sw2 * sw2),
        })
    }
}

/// How `1 - c^l` decays for an architecture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpansionLaw {
    /// `kappa / l^2`
    InvSquare,
    /// `kappa / l`
    Inv,
    /// `zeta / log(l)^2`
    InvLogSquare,
}

impl ExpansionLaw {
    /// Factor that turns `1 - c^l` into an estimate of the constant.
    pub fn scale(self, l: usize) -> f64 {
        let lf = l as f64;
        match self {
            ExpansionLaw::InvSquare => lf * lf,
            ExpansionLaw::Inv => lf,
            ExpansionLaw::InvLogSquare => lf.ln().powi(2),
        }
    }
}

fn law_and_constant(arch: ArchKind, model: &ActivationModel, params: InitParams) -> Result<(ExpansionLaw, f64)> {
    let consts = ExpansionConstants::new(model, params)?;
    match (arch.dense(), model.kind()) {
        (ArchKind::Ffnn, ActivationKind::Relu) => {
            if params.half_gain() != 1.0 || params.sigma_b != 0.0 {
                return Err(NtkError::Unsupported(
                    "the relu expansion holds on the edge of chaos (0, sqrt 2)".into(),
                ));
            }
            Ok((ExpansionLaw::InvSquare, consts.kappa_relu))
        }
        (ArchKind::Ffnn, ActivationKind::Tanh) => {
            if classify(model, params)?.phase != Phase::Eoc {
                return Err(NtkError::Unsupported("the tanh expansion holds on the edge of chaos".into()));
            }
            let k = consts.kappa_tanh.ok_or_else(|| {
                NtkError::Unsupported("the tanh expansion needs a positive variance fixed point".into())
            })?;
            Ok((ExpansionLaw::Inv, k))
        }
        (ArchKind::ResnetDense, ActivationKind::Relu) => Ok((ExpansionLaw::InvSquare, consts.kappa_resnet)),
        (ArchKind::ScaledResnetDense, ActivationKind::Relu) => Ok((ExpansionLaw::InvLogSquare, consts.zeta_scaled)),
        _ => Err(NtkError::Unsupported("residual expansions are available for relu only".into())),
    }
}

/// Leading-order prediction of `c^l` for large `l`.
pub fn theoretical_correlation(arch: ArchKind, model: &ActivationModel, params: InitParams, l: usize) -> Result<f64> {
    if l < 2 {
        return Err(NtkError::InvalidArgument("expansions start at l = 2".into()));
    }
    let (law, k) = law_and_constant(arch, model, params)?;
    let lf = l as f64;
    Ok(match (law, arch.dense()) {
        (ExpansionLaw::InvSquare, ArchKind::Ffnn) => 1.0 - k / (lf * lf) + 3.0 * k.sqrt() * lf.ln() / lf.powi(3),
        _ => 1.0 - k / law.scale(l),
    })
}

/// Gap `1 - f(1 - g)` of the Tanh correlation map, assuming `f(1) = 1`.
///
/// Evaluated as one quadrature of `tanh(a) - tanh(b)` so the small gap does
/// not cancel.
fn tanh_gap_map(map: &CorrelationMap, gap: f64) -> f64 {
    let rule = map.activation.rule_for(map.q);
    let (_, sw2) = map.params.squares();
    let r = map.q.sqrt();
    let s = (gap * (2.0 - gap)).max(0.0).sqrt();
    let mut acc = 0.0;
    for (&zi, &wi) in rule.nodes().iter().zip(rule.weights()) {
        let a = r * zi;
        let ta = a.tanh();
        let ca = a.cosh();
        let mut inner = 0.0;
        for (&zj, &wj) in rule.nodes().iter().zip(rule.weights()) {
            let b = r * ((1.0 - gap) * zi + s * zj);
            // tanh a - tanh b = sinh(a - b) / (cosh a cosh b)
            inner += wj * (a - b).sinh() / (ca * b.cosh());
        }
        acc += wi * ta * inner;
    }
    sw2 * acc / map.q
}

/// `1 - c^l` for `l = 1..=depth`, from first-layer correlation `c1`.
///
/// Correlation-only recursion on inputs of equal norm: FFNN traces run at
/// the variance fixed point, residual traces carry the exact variance.
pub fn correlation_gaps(
    arch: ArchKind,
    model: &ActivationModel,
    params: InitParams,
    c1: f64,
    q1: f64,
    depth: usize,
) -> Result<Vec<f64>> {
    if !(-1.0..=1.0).contains(&c1) || depth == 0 {
        return Err(NtkError::InvalidArgument(format!("need c1 in [-1, 1] and depth >= 1, got {c1}, {depth}")));
    }
    let (sb2, _) = params.squares();
    let a = params.half_gain();
    let mut gaps = Vec::with_capacity(depth);
    let mut g = 1.0 - c1;
    gaps.push(g);
    match (arch.dense(), model.kind()) {
        (ArchKind::Ffnn, ActivationKind::Relu) => {
            let q = classify(model, params)?.q_fixed;
            let q = if q.is_finite() && q > 0.0 { q } else { q1 };
            // f(c) = (sb2 + a q relu_f(c)) / q, with f(1) = 1 at the fixed point
            let w = a * q / (sb2 + a * q);
            for _ in 2..=depth {
                g = w * (g - relu_lift(g));
                gaps.push(g);
            }
        }
        (ArchKind::Ffnn, ActivationKind::Tanh) => {
            let q = classify(model, params)?.q_fixed;
            let map = CorrelationMap::new(model.clone(), q, params)?;
            for _ in 2..=depth {
                g = tanh_gap_map(&map, g);
                gaps.push(g);
            }
        }
        (ArchKind::ResnetDense | ArchKind::ScaledResnetDense, ActivationKind::Relu) => {
            let scaled = arch.dense() == ArchKind::ScaledResnetDense;
            let mut v = q1;
            // keep v bounded; the bias shrinks with the same factor
            let mut bias = sb2;
            for l in 2..=depth {
                let h = if scaled { 1.0 / l as f64 } else { 1.0 };
                let block_v = bias + a * v;
                let next_v = v + h * block_v;
                // block covariance gap: block_v - (bias + a v relu_f(c)) = a v (g - lift)
                g = (v * g + h * a * v * (g - relu_lift(g))) / next_v;
                v = next_v;
                if v > 1e150 {
                    bias /= v;
                    v = 1.0;
                }
                gaps.push(g);
            }
        }
        _ => return Err(NtkError::Unsupported("residual expansions are available for relu only".into())),
    }
    Ok(gaps)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExpansionPoint {
    pub l: usize,
    /// `1 - c^l` from the recursion.
    pub gap: f64,
    /// `gap * scale(l)`.
    pub empirical: f64,
    /// `|empirical / constant - 1|`.
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpansionReport {
    pub law: ExpansionLaw,
    pub constant: f64,
    pub points: Vec<ExpansionPoint>,
}

/// Compares `scale(l) (1 - c^l)` with the theoretical constant at `depths`.
pub fn check_expansion(
    arch: ArchKind,
    model: &ActivationModel,
    params: InitParams,
    c1: f64,
    depths: &[usize],
) -> Result<ExpansionReport> {
    let (law, constant) = law_and_constant(arch, model, params)?;
    let max = depths.iter().copied().max().unwrap_or(1);
    let q1 = params.squares().1 + params.squares().0;
    let gaps = correlation_gaps(arch, model, params, c1, q1, max)?;
    let points = depths
        .iter()
        .map(|&l| {
            let gap = gaps[l - 1];
            let empirical = gap * law.scale(l);
            ExpansionPoint { l, gap, empirical, rel_err: (empirical / constant - 1.0).abs() }
        })
        .collect();
    Ok(ExpansionReport { law, constant, points })
}

/// Offsets of one layer from the ordered-phase fixed point.
#[derive(Debug, Clone, Copy)]
struct Deviation {
    vx: f64,
    vxp: f64,
    /// `q^l(x, x') - q*`
    dcov: f64,
    /// `qdot^l - chi`
    dqdot: f64,
}

/// `tanh(q + d) - tanh(q)` without forming `(q + d) - q`.
fn tanh_diff(q: f64, d: f64) -> f64 {
    d.sinh() / ((q + d).cosh() * q.cosh())
}

/// `sech^2(q + d) - sech^2(q)`.
fn sech2_diff(q: f64, d: f64) -> f64 {
    let (cp, cq) = ((q + d).cosh(), q.cosh());
    -(2.0 * q + d).sinh() * d.sinh() / (cp * cp * cq * cq)
}

fn sqrt_offset(q: f64, v: f64) -> f64 {
    // sqrt(q + v) - sqrt(q)
    v / ((q + v).sqrt() + q.sqrt())
}

fn deviation_step(model: &ActivationModel, params: InitParams, qs: f64, vx: f64, vxp: f64, gap: f64) -> Deviation {
    let (_, sw2) = params.squares();
    match model.kind() {
        ActivationKind::Relu => {
            let a = 0.5 * sw2;
            let geo = ((qs + vx) * (qs + vxp)).sqrt();
            let geo_off = (qs * (vx + vxp) + vx * vxp) / (geo + qs);
            let drop = gap - relu_lift(gap);
            Deviation {
                vx: a * vx,
                vxp: a * vxp,
                dcov: a * (geo_off * (1.0 - drop) - qs * drop),
                dqdot: -a * crate::activations::gap_angle(gap) / PI,
            }
        }
        ActivationKind::Tanh => {
            let rule = model.rule_for((qs + vx).max(qs + vxp).max(qs));
            let rs = qs.sqrt();
            let (rx, rxp) = ((qs + vx).sqrt(), (qs + vxp).sqrt());
            let (dx, dxp) = (sqrt_offset(qs, vx), sqrt_offset(qs, vxp));
            let s = (gap * (2.0 - gap)).max(0.0).sqrt();
            let lead = dxp - rxp * gap; // rxp c - rs
            let (mut ex, mut exp_, mut ecov, mut edot) = (0.0, 0.0, 0.0, 0.0);
            for (&z1, &w1) in rule.nodes().iter().zip(rule.weights()) {
                let b = rs * z1;
                let a1 = rx * z1;
                let tb = b.tanh();
                let ta1 = a1.tanh();
                let d1 = tanh_diff(b, z1 * dx);
                let sb = 1.0 - tb * tb;
                let sa1 = 1.0 - ta1 * ta1;
                let e1 = sech2_diff(b, z1 * dx);
                let ap = rxp * z1;
                ex += w1 * d1 * (ta1 + tb);
                exp_ += w1 * tanh_diff(b, z1 * dxp) * (ap.tanh() + tb);
                let mut in_cov = 0.0;
                let mut in_dot = 0.0;
                for (&z2, &w2) in rule.nodes().iter().zip(rule.weights()) {
                    let d2 = z1 * lead + rxp * s * z2;
                    in_cov += w2 * (ta1 * tanh_diff(b, d2) + tb * d1);
                    in_dot += w2 * (sa1 * sech2_diff(b, d2) + sb * e1);
                }
                ecov += w1 * in_cov;
                edot += w1 * in_dot;
            }
            Deviation { vx: sw2 * ex, vxp: sw2 * exp_, dcov: sw2 * ecov, dqdot: sw2 * edot }
        }
    }
}

/// `K^l - lambda` for `l = 1..=depth` in the ordered phase of a FFNN.
///
/// The recursion is run on offsets from the fixed point (variance offset,
/// correlation gap, kernel residual), with the fixed point taken as exact,
/// so residuals stay resolved far below the rounding level of `K^l`.
pub fn ordered_residuals(
    model: &ActivationModel,
    params: InitParams,
    first: FirstLayer,
    depth: usize,
) -> Result<Vec<f64>> {
    let report = classify(model, params)?;
    if report.phase != Phase::Ordered || report.q_fixed == 0.0 {
        return Err(NtkError::InvalidArgument(
            "ordered residuals need the ordered phase with a positive fixed point".into(),
        ));
    }
    if depth == 0 {
        return Err(NtkError::InvalidArgument("depth must be at least 1".into()));
    }
    let qs = report.q_fixed;
    let chi = report.chi;
    let lambda = qs / (1.0 - chi);
    let (mut vx, mut vxp) = (first.qx - qs, first.qxp - qs);
    let mut gap = if first.diagonal { 0.0 } else { 1.0 - first.correlation() };
    let mut r = first.qcov - lambda;
    let mut out = Vec::with_capacity(depth);
    out.push(r);
    for _ in 2..=depth {
        let d = deviation_step(model, params, qs, vx, vxp, gap);
        let qdot = chi + d.dqdot;
        r = qdot * r + d.dqdot * lambda + d.dcov;
        vx = d.vx;
        vxp = d.vxp;
        let geo = ((qs + vx) * (qs + vxp)).sqrt();
        let geo_off = (qs * (vx + vxp) + vx * vxp) / (geo + qs);
        gap = if first.diagonal { 0.0 } else { ((geo_off - d.dcov) / geo).max(0.0) };
        out.push(r);
    }
    Ok(out)
}

/// Max-over-pairs kernel residuals against the depth limit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualSweep {
    pub depths: Vec<usize>,
    /// `max_pairs |K_norm^L - K^inf|`, floored at [`RESIDUAL_FLOOR`].
    pub residuals: Vec<f64>,
    pub limits: Vec<f64>,
    /// The raw kernel is compared (ordered phase) rather than `K^L / alpha_L`.
    pub unnormalized: bool,
}

/// Residual of each pair's kernel against [`limiting_kernel`] at `depths`.
///
/// Ordered FFNN kernels converge without normalization; their residuals come
/// from [`ordered_residuals`]. All others use the architecture's default
/// normalization.
pub fn residual_sweep(
    arch: Architecture,
    model: &ActivationModel,
    params: InitParams,
    pairs: &[InputPair],
    depths: &[usize],
) -> Result<ResidualSweep> {
    if pairs.is_empty() || depths.is_empty() || depths.contains(&0) {
        return Err(NtkError::InvalidArgument("need at least one pair and positive depths".into()));
    }
    let unnormalized = arch.kind.dense() == ArchKind::Ffnn && {
        let r = classify(model, params);
        matches!(r, Ok(ref rep) if rep.phase == Phase::Ordered && rep.q_fixed > 0.0)
    };
    let max = *depths.iter().max().unwrap();
    let per_pair: Vec<(f64, Vec<f64>)> = pairs
        .par_iter()
        .map(|pair| -> Result<(f64, Vec<f64>)> {
            let limit = limiting_kernel(arch, model, params, pair)?;
            if unnormalized {
                let r = ordered_residuals(model, params, pair.first_layer(params), max)?;
                return Ok((limit, depths.iter().map(|&l| r[l - 1].abs()).collect()));
            }
            let trace = dense_recursion(arch, model, params, pair.first_layer(params), max)?;
            let values = normalize(&trace, arch.kind.default_scheme())?;
            Ok((limit, depths.iter().map(|&l| (values[l - 1] - limit).abs()).collect()))
        })
        .collect::<Result<_>>()?;
    let residuals = (0..depths.len())
        .map(|j| per_pair.iter().map(|(_, r)| r[j]).fold(0.0f64, f64::max).max(RESIDUAL_FLOOR))
        .collect();
    Ok(ResidualSweep {
        depths: depths.to_vec(),
        residuals,
        limits: per_pair.iter().map(|(l, _)| *l).collect(),
        unnormalized,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn power_fit_of_exact_inverse() {
        let d = geometric_depths(32, 9);
        let r: Vec<f64> = d.iter().map(|&l| 3.0 / l as f64).collect();
        let f = fit_rate(&d, &r, RateModel::Power).unwrap();
        assert_abs_diff_eq!(f.exponent, -1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(f.prefactor, 3.0, epsilon = 1e-9);
        assert_abs_diff_eq!(f.r_squared, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn exp_fit_recovers_gamma() {
        let d: Vec<usize> = (1..=10).map(|j| 5 * j).collect();
        let r: Vec<f64> = d.iter().map(|&l| 2.0 * (-0.3 * l as f64).exp()).collect();
        let f = fit_rate(&d, &r, RateModel::Exp).unwrap();
        assert_abs_diff_eq!(f.exponent, 0.3, epsilon = 1e-8);
    }

    #[test]
    fn predict_inverts_each_model() {
        let d = geometric_depths(32, 9);
        let laws: [(RateModel, fn(f64) -> f64); 4] = [
            (RateModel::Power, |l| 2.0 * l.powf(-0.7)),
            (RateModel::PowerLog, |l| 0.5 * l.ln() / l),
            (RateModel::Exp, |l| (-1e-3 * l).exp()),
            (RateModel::InvLog, |l| 4.0 / l.ln().powi(2)),
        ];
        for (model, law) in laws {
            let r: Vec<f64> = d.iter().map(|&l| law(l as f64)).collect();
            let f = fit_rate(&d, &r, model).unwrap();
            for (&l, &v) in d.iter().zip(&r) {
                assert_abs_diff_eq!(f.predict(l) / v, 1.0, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn fit_rejects_bad_input() {
        let d = geometric_depths(32, 9);
        let mut r = vec![1.0; 9];
        r[3] = 0.0;
        assert!(fit_rate(&d, &r, RateModel::Power).is_err());
        assert!(fit_rate(&d[..7], &r[..7], RateModel::Power).is_err());
    }

    #[test]
    fn constants_are_positive() {
        let c = ExpansionConstants::new(&ActivationModel::relu(), InitParams::relu_eoc()).unwrap();
        assert_abs_diff_eq!(c.kappa_resnet, 4.0 * c.kappa_relu, epsilon = 1e-12);
        assert_abs_diff_eq!(c.zeta_scaled, 4.0 / (c.s * c.s), epsilon = 1e-12);
        assert!(c.kappa_relu > 0.0 && c.b > 0.0);
    }

    #[test]
    fn ordered_expansion_unsupported() {
        let p = InitParams::new(1.0, 0.1).unwrap();
        assert!(matches!(
            theoretical_correlation(ArchKind::Ffnn, &ActivationModel::relu(), p, 10),
            Err(NtkError::Unsupported(_))
        ));
    }
}
