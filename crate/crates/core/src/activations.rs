//! Activation models and their Gaussian covariance maps.
//!
//! ReLU maps are closed forms. Tanh maps are evaluated on a tensor
//! Gauss-Hermite grid.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{NtkError, Result};
use crate::gaussmath::{self, QuadratureRule};
use crate::phase::InitParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    Relu,
    Tanh,
}

impl ActivationKind {
    pub fn phi(&self, x: f64) -> f64 {
        match self {
            ActivationKind::Relu => x.max(0.0),
            ActivationKind::Tanh => x.tanh(),
        }
    }

    /// First derivative; the ReLU derivative at zero is 0.
    pub fn dphi(&self, x: f64) -> f64 {
        match self {
            ActivationKind::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ActivationKind::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
        }
    }
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActivationKind::Relu => f.write_str("relu"),
            ActivationKind::Tanh => f.write_str("tanh"),
        }
    }
}

impl FromStr for ActivationKind {
    type Err = NtkError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(ActivationKind::Relu),
            "tanh" => Ok(ActivationKind::Tanh),
            other => Err(NtkError::InvalidArgument(format!("unknown activation '{other}'"))),
        }
    }
}

/// An activation together with the quadrature used for its Gaussian maps.
#[derive(Debug, Clone)]
pub struct ActivationModel {
    kind: ActivationKind,
    rule: Arc<QuadratureRule>,
    wide: Arc<Vec<OnceLock<QuadratureRule>>>,
}

/// Largest variance handled by the Gauss-Hermite rule. Tanh has poles at
/// distance `pi / (2 sqrt q)` from the real axis in `z`, so larger variances
/// switch to composite rules with panels of width `0.5 / sqrt q`.
pub const HERMITE_MAX_VARIANCE: f64 = 0.6;

const WIDE_BUCKETS: usize = 16;
const WIDE_HALF_RANGE: f64 = 9.0;
const WIDE_PER_PANEL: usize = 8;

impl ActivationModel {
    pub fn new(kind: ActivationKind, order: usize) -> Result<Self> {
        Ok(Self {
            kind,
            rule: Arc::new(gaussmath::gauss_hermite(order)?),
            wide: Arc::new((0..WIDE_BUCKETS).map(|_| OnceLock::new()).collect()),
        })
    }

    pub fn relu() -> Self {
        Self::new(ActivationKind::Relu, gaussmath::DEFAULT_ORDER).expect("default rule")
    }

    pub fn tanh() -> Self {
        Self::new(ActivationKind::Tanh, gaussmath::DEFAULT_ORDER).expect("default rule")
    }

    pub fn from_kind(kind: ActivationKind) -> Self {
        match kind {
            ActivationKind::Relu => Self::relu(),
            ActivationKind::Tanh => Self::tanh(),
        }
    }

    pub fn kind(&self) -> ActivationKind {
        self.kind
    }

    /// The Gauss-Hermite rule used for variances up to [`HERMITE_MAX_VARIANCE`].
    pub fn rule(&self) -> &QuadratureRule {
        &self.rule
    }

    /// Rule resolving `tanh(sqrt(q) z)` for variance `q`.
    pub fn rule_for(&self, q: f64) -> &QuadratureRule {
        if !(q > HERMITE_MAX_VARIANCE) {
            return &self.rule;
        }
        // bucket k covers variances up to HERMITE_MAX_VARIANCE * 4^k
        let k = ((q / HERMITE_MAX_VARIANCE).log2() / 2.0).ceil().clamp(1.0, WIDE_BUCKETS as f64) as usize;
        self.wide[k - 1].get_or_init(|| {
            let top = HERMITE_MAX_VARIANCE * 4f64.powi(k as i32);
            gaussmath::normal_composite(0.5 / top.sqrt(), WIDE_HALF_RANGE, WIDE_PER_PANEL)
                .expect("valid composite rule")
        })
    }

    pub fn phi(&self, x: f64) -> f64 {
        self.kind.phi(x)
    }

    /// First derivative; the ReLU derivative at zero is 0.
    pub fn dphi(&self, x: f64) -> f64 {
        self.kind.dphi(x)
    }

    /// `sigma_b^2 + sigma_w^2 E[phi(sqrt(q) Z)^2]`.
    pub fn variance_map(&self, params: InitParams, q: f64) -> Result<f64> {
        let (sb2, sw2) = params.squares();
        match self.kind {
            ActivationKind::Relu => {
                if !(q >= 0.0) {
                    return Err(NtkError::InvalidArgument(format!("negative variance {q}")));
                }
                Ok(sb2 + 0.5 * sw2 * q)
            }
            ActivationKind::Tanh => {
                Ok(sb2 + sw2 * gaussmath::expect1(|x| x.tanh().powi(2), q, self.rule_for(q))?)
            }
        }
    }

    /// Derivative of the variance map with respect to `q`.
    pub fn variance_map_slope(&self, params: InitParams, q: f64) -> Result<f64> {
        let sw2 = params.sigma_w * params.sigma_w;
        match self.kind {
            ActivationKind::Relu => Ok(0.5 * sw2),
            // d/dq E[h(sqrt(q) Z)] = E[h''] / 2 with h = tanh^2
            ActivationKind::Tanh => {
                let v = gaussmath::expect1(
                    |x| {
                        let t = x.tanh();
                        let d1 = 1.0 - t * t;
                        d1 * d1 - 2.0 * t * t * d1
                    },
                    q,
                    self.rule_for(q),
                )?;
                Ok(sw2 * v)
            }
        }
    }

    /// `sigma_w^2 E[phi'(sqrt(q) Z)^2]`.
    pub fn chi(&self, sigma_w: f64, q: f64) -> Result<f64> {
        let sw2 = sigma_w * sigma_w;
        match self.kind {
            ActivationKind::Relu => Ok(0.5 * sw2),
            ActivationKind::Tanh => Ok(sw2 * gaussmath::expect1(|x| self.dphi(x).powi(2), q, self.rule_for(q))?),
        }
    }

    /// `(E[phi(u1) phi(u2)], E[phi'(u1) phi'(u2)])` for a Gaussian pair.
    pub fn pair_moments(&self, qx: f64, qxp: f64, c: f64) -> Result<(f64, f64)> {
        let c = gaussmath::clamp_correlation(c)?;
        match self.kind {
            ActivationKind::Relu => {
                if !(qx >= 0.0 && qxp >= 0.0) {
                    return Err(NtkError::InvalidArgument("negative variance".into()));
                }
                Ok((0.5 * (qx * qxp).sqrt() * relu_f(c), 0.5 * relu_f_prime(c)))
            }
            // fixed argument order keeps kernels exactly symmetric under input swap
            ActivationKind::Tanh => tanh_pair_moments(qx.min(qxp), qx.max(qxp), c, self.rule_for(qx.max(qxp))),
        }
    }
}

fn tanh_pair_moments(qx: f64, qxp: f64, c: f64, rule: &QuadratureRule) -> Result<(f64, f64)> {
    if !(qx >= 0.0 && qxp >= 0.0) || !qx.is_finite() || !qxp.is_finite() {
        return Err(NtkError::InvalidArgument(format!(
            "variances must be finite and nonnegative, got ({qx}, {qxp})"
        )));
    }
    let s = (1.0 - c * c).max(0.0).sqrt();
    let (r1, r2) = (qx.sqrt(), qxp.sqrt());
    let z = rule.nodes();
    let w = rule.weights();
    let mut e_phi = 0.0;
    let mut e_dphi = 0.0;
    for (&zi, &wi) in z.iter().zip(w) {
        let t1 = (r1 * zi).tanh();
        let d1 = 1.0 - t1 * t1;
        let base = c * zi;
        let mut in_phi = 0.0;
        let mut in_dphi = 0.0;
        for (&zj, &wj) in z.iter().zip(w) {
            let t2 = (r2 * (base + s * zj)).tanh();
            in_phi += wj * t2;
            in_dphi += wj * (1.0 - t2 * t2);
        }
        e_phi += wi * t1 * in_phi;
        e_dphi += wi * d1 * in_dphi;
    }
    if !(e_phi.is_finite() && e_dphi.is_finite()) {
        return Err(NtkError::Numeric("tanh pair moments not finite".into()));
    }
    Ok((e_phi, e_dphi))
}

/// Angle `acos(c)`, accurate near both endpoints.
pub fn correlation_angle(c: f64) -> f64 {
    let c = c.clamp(-1.0, 1.0);
    if c >= 0.0 {
        2.0 * (0.5 * (1.0 - c)).sqrt().asin()
    } else {
        PI - 2.0 * (0.5 * (1.0 + c)).sqrt().asin()
    }
}

/// Angle from the gap `1 - c`, with no rounding of `c` itself.
pub fn gap_angle(gap: f64) -> f64 {
    if gap <= 1.0 {
        2.0 * (0.5 * gap.max(0.0)).sqrt().asin()
    } else {
        correlation_angle(1.0 - gap)
    }
}

/// `(sin t - t cos t) / pi`, the amount by which the ReLU map lifts a correlation.
fn lift_from_angle(theta: f64) -> f64 {
    if theta < 0.1 {
        // alternating series sum_{n>=1} (-1)^{n+1} 2n t^{2n+1} / (2n+1)!
        let t2 = theta * theta;
        let mut term = theta * t2 / 6.0; // t^3 / 3!
        let mut sum = 0.0;
        for n in 1..=10 {
            let nf = n as f64;
            sum += 2.0 * nf * term;
            term *= -t2 / ((2.0 * nf + 2.0) * (2.0 * nf + 3.0));
        }
        sum / PI
    } else {
        (theta.sin() - theta * theta.cos()) / PI
    }
}

/// `f(c) - c` for the ReLU correlation map, given the gap `1 - c`.
pub fn relu_lift(gap: f64) -> f64 {
    lift_from_angle(gap_angle(gap))
}

/// ReLU correlation map `(c asin c + sqrt(1 - c^2)) / pi + c / 2`.
pub fn relu_f(c: f64) -> f64 {
    let c = c.clamp(-1.0, 1.0);
    c + lift_from_angle(correlation_angle(c))
}

/// `asin(c) / pi + 1 / 2`.
pub fn relu_f_prime(c: f64) -> f64 {
    1.0 - correlation_angle(c) / PI
}

/// Correlation map `f` at a fixed-point variance `q`, with its derivatives.
#[derive(Debug, Clone)]
pub struct CorrelationMap {
    pub activation: ActivationModel,
    pub q: f64,
    pub params: InitParams,
}

impl CorrelationMap {
    pub fn new(activation: ActivationModel, q: f64, params: InitParams) -> Result<Self> {
        if !(q > 0.0) || !q.is_finite() {
            return Err(NtkError::InvalidArgument(format!(
                "correlation map needs a positive variance, got {q}"
            )));
        }
        Ok(Self { activation, q, params })
    }

    pub fn f(&self, c: f64) -> Result<f64> {
        match self.activation.kind() {
            ActivationKind::Relu => {
                let (sb2, sw2) = self.params.squares();
                Ok((sb2 + 0.5 * sw2 * self.q * relu_f(c)) / self.q)
            }
            ActivationKind::Tanh => tanh_f(self, c),
        }
    }

    pub fn deriv(&self, c: f64, order: u8) -> Result<f64> {
        match self.activation.kind() {
            ActivationKind::Relu => {
                let sw2 = self.params.sigma_w * self.params.sigma_w;
                let c = gaussmath::clamp_correlation(c)?;
                let r = (1.0 - c * c).sqrt();
                match order {
                    1 => Ok(0.5 * sw2 * relu_f_prime(c)),
                    2 => Ok(0.5 * sw2 / (PI * r)),
                    3 => Ok(0.5 * sw2 * c / (PI * r * r * r)),
                    _ => Err(NtkError::InvalidArgument(format!("derivative order {order}"))),
                }
            }
            ActivationKind::Tanh => tanh_f_deriv(self, c, order),
        }
    }
}

/// Tanh correlation map evaluated with the tensor rule.
pub fn tanh_f(map: &CorrelationMap, c: f64) -> Result<f64> {
    let (sb2, sw2) = map.params.squares();
    let e = gaussmath::expect2(|x| x.tanh(), map.q, map.q, c, map.activation.rule_for(map.q))?;
    Ok((sb2 + sw2 * e) / map.q)
}

fn tanh_derivative(order: u8, x: f64) -> f64 {
    let t = x.tanh();
    let d1 = 1.0 - t * t;
    match order {
        0 => t,
        1 => d1,
        2 => -2.0 * t * d1,
        _ => {
            let d2 = -2.0 * t * d1;
            -2.0 * d1 * d1 - 2.0 * t * d2
        }
    }
}

/// `f^(j)(c) = sigma_w^2 q^{j-1} E[phi^(j)(u1) phi^(j)(u2)]` for `j` in 1..=3.
pub fn tanh_f_deriv(map: &CorrelationMap, c: f64, order: u8) -> Result<f64> {
    if !(1..=3).contains(&order) {
        return Err(NtkError::InvalidArgument(format!("derivative order {order} not in 1..=3")));
    }
    let sw2 = map.params.sigma_w * map.params.sigma_w;
    let e = gaussmath::expect2(
        |x| tanh_derivative(order, x),
        map.q,
        map.q,
        c,
        map.activation.rule_for(map.q),
    )?;
    Ok(sw2 * map.q.powi(order as i32 - 1) * e)
}

/// One layer of variance and covariance propagation.
pub fn covariance_step(
    model: &ActivationModel,
    params: InitParams,
    qx: f64,
    qxp: f64,
    qcov: f64,
) -> Result<(f64, f64, f64)> {
    let step = layer_step(model, params, qx, qxp, qcov)?;
    Ok((step.qx, step.qxp, step.qcov))
}

/// Next-layer second moments plus the derivative covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerStep {
    pub qx: f64,
    pub qxp: f64,
    pub qcov: f64,
    /// `sigma_w^2 E[phi'(u1) phi'(u2)]`
    pub qdot: f64,
}

/// Correlation of a covariance triple, clamped to `[-1, 1]`.
pub fn correlation(qx: f64, qxp: f64, qcov: f64) -> Result<f64> {
    if !(qx > 0.0 && qxp > 0.0) {
        return Err(NtkError::InvalidArgument(format!(
            "variances must be positive, got ({qx}, {qxp})"
        )));
    }
    let c = qcov / (qx * qxp).sqrt();
    if !c.is_finite() || c.abs() > 1.0 + 1e-10 {
        return Err(NtkError::InvalidArgument(format!(
            "covariance {qcov} violates Cauchy-Schwarz for variances ({qx}, {qxp})"
        )));
    }
    Ok(c.clamp(-1.0, 1.0))
}

pub fn layer_step(
    model: &ActivationModel,
    params: InitParams,
    qx: f64,
    qxp: f64,
    qcov: f64,
) -> Result<LayerStep> {
    let c = correlation(qx, qxp, qcov)?;
    let (sb2, sw2) = params.squares();
    let (e_phi, e_dphi) = model.pair_moments(qx, qxp, c)?;
    let (nx, nxp) = if qx == qxp {
        let v = model.variance_map(params, qx)?;
        (v, v)
    } else {
        (model.variance_map(params, qx)?, model.variance_map(params, qxp)?)
    };
    Ok(LayerStep {
        qx: nx,
        qxp: nxp,
        qcov: sb2 + sw2 * e_phi,
        qdot: sw2 * e_dphi,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn relu_f_values() {
        assert_abs_diff_eq!(relu_f(1.0), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(relu_f(0.0), 1.0 / PI, epsilon = 1e-15);
        assert_abs_diff_eq!(relu_f(-1.0), 0.0, epsilon = 1e-15);
        for c in [-0.95, -0.3, 0.2, 0.77, 0.999] {
            let direct = (c * f64::asin(c) + (1.0 - c * c).sqrt()) / PI + c / 2.0;
            assert_abs_diff_eq!(relu_f(c), direct, epsilon = 1e-14);
        }
    }

    #[test]
    fn relu_f_prime_values() {
        assert_abs_diff_eq!(relu_f_prime(1.0), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(relu_f_prime(0.0), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(relu_f_prime(-1.0), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn relu_lift_near_one_matches_expansion() {
        let s = 2.0 * 2f64.sqrt() / (3.0 * PI);
        let b = 2f64.sqrt() / (30.0 * PI);
        for gap in [1e-12f64, 1e-9, 1e-7, 1e-5] {
            let expansion = s * gap.powf(1.5) + b * gap.powf(2.5);
            let rel = (relu_lift(gap) - expansion).abs() / expansion;
            assert!(rel < 10.0 * gap, "gap {gap}: rel {rel}");
        }
    }

    #[test]
    fn relu_on_eoc_keeps_variance() {
        let m = ActivationModel::relu();
        let p = InitParams::new(0.0, 2f64.sqrt()).unwrap();
        let (a, b, c) = covariance_step(&m, p, 1.7, 1.7, 1.7).unwrap();
        assert_abs_diff_eq!(a, 1.7, epsilon = 1e-14);
        assert_abs_diff_eq!(b, 1.7, epsilon = 1e-14);
        assert_abs_diff_eq!(c, 1.7, epsilon = 1e-14);
    }

    #[test]
    fn relu_ordered_variance_converges() {
        let m = ActivationModel::relu();
        let p = InitParams::new(1.0, 0.1).unwrap();
        let (mut a, mut b, mut c) = (3.0, 0.2, 0.1);
        for _ in 0..200 {
            (a, b, c) = covariance_step(&m, p, a, b, c).unwrap();
        }
        assert_abs_diff_eq!(a, 1.0 / 0.995, epsilon = 1e-12);
        assert_abs_diff_eq!(b, 1.0 / 0.995, epsilon = 1e-12);
        assert!(c <= (a * b).sqrt() + 1e-12);
    }

    #[test]
    fn covariance_step_rejects_bad_input() {
        let m = ActivationModel::tanh();
        let p = InitParams::new(0.2, 1.3).unwrap();
        assert!(covariance_step(&m, p, 0.0, 1.0, 0.0).is_err());
        assert!(covariance_step(&m, p, 1.0, 1.0, 1.5).is_err());
    }

    #[test]
    fn tanh_f_is_zero_at_zero_without_bias() {
        let p = InitParams::new(0.0, 1.5).unwrap();
        let map = CorrelationMap::new(ActivationModel::tanh(), 0.7, p).unwrap();
        assert_abs_diff_eq!(map.f(0.0).unwrap(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn tanh_derivative_orders() {
        for x in [-1.3, 0.0, 0.4, 2.0] {
            let h = 1e-5;
            for order in 1..=3u8 {
                let fd = (tanh_derivative(order - 1, x + h) - tanh_derivative(order - 1, x - h)) / (2.0 * h);
                assert_abs_diff_eq!(tanh_derivative(order, x), fd, epsilon = 1e-8);
            }
        }
    }
}
