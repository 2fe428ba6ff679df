//! Gaussian quadrature rules and Gaussian expectations.
//!
//! Rules are built with the Golub-Welsch eigenvalue method and then polished
//! with a few Newton steps on the orthonormal three-term recurrence. Weights
//! come from the Christoffel function, which stays accurate for the tiny
//! weights at the far nodes where eigenvector components lose precision.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use statrs::function::gamma::ln_gamma;

use crate::error::{NtkError, Result};

/// Default number of nodes for one-dimensional Gaussian expectations.
pub const DEFAULT_ORDER: usize = 64;

/// Tolerance for correlations that drift past +-1.
pub const CORR_CLAMP_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RuleKind {
    /// Standard normal density on the real line.
    Hermite,
    /// Weight `(1 - t^2)^alpha` on `[-1, 1]`.
    Jacobi { alpha: f64 },
    /// Weight `e^{-s}` on `[0, inf)`.
    Laguerre,
    /// Standard normal density, composite Gauss-Legendre on a truncated range.
    NormalComposite,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    kind: RuleKind,
}

impl QuadratureRule {
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn kind(&self) -> RuleKind {
        self.kind
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    /// Sum of `w_i f(x_i)`.
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

/// Monic three-term recurrence `p_{k+1} = (x - a_k) p_k - b_k p_{k-1}`.
struct Recurrence {
    a: Vec<f64>,
    b: Vec<f64>,
    mu0: f64,
}

impl Recurrence {
    /// Orthonormal `p_n(x)` and `p_n'(x)`, plus `sum_{k<n} p_k(x)^2`.
    fn eval(&self, n: usize, x: f64) -> (f64, f64, f64) {
        let mut p_prev = 0.0;
        let mut p = 1.0 / self.mu0.sqrt();
        let mut d_prev = 0.0;
        let mut d = 0.0;
        let mut christoffel = 0.0;
        for k in 0..n {
            christoffel += p * p;
            let sb_next = self.b[k + 1].sqrt();
            let sb = if k == 0 { 0.0 } else { self.b[k].sqrt() };
            let p_next = ((x - self.a[k]) * p - sb * p_prev) / sb_next;
            let d_next = (p + (x - self.a[k]) * d - sb * d_prev) / sb_next;
            p_prev = p;
            p = p_next;
            d_prev = d;
            d = d_next;
        }
        (p, d, christoffel)
    }
}

fn golub_welsch(n: usize, rec: &Recurrence, kind: RuleKind) -> Result<QuadratureRule> {
    let mut jac = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        jac[(i, i)] = rec.a[i];
        if i + 1 < n {
            let off = rec.b[i + 1].sqrt();
            jac[(i, i + 1)] = off;
            jac[(i + 1, i)] = off;
        }
    }
    let eig = SymmetricEigen::new(jac);
    let mut nodes: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut weights = Vec::with_capacity(n);
    for x in nodes.iter_mut() {
        for _ in 0..3 {
            let (p, d, _) = rec.eval(n, *x);
            if d == 0.0 || !d.is_finite() {
                break;
            }
            let step = p / d;
            *x -= step;
            if step.abs() <= 1e-16 * x.abs().max(1.0) {
                break;
            }
        }
        let (_, _, christoffel) = rec.eval(n, *x);
        weights.push(1.0 / christoffel);
    }

    if let RuleKind::Hermite | RuleKind::Jacobi { .. } = kind {
        symmetrize(&mut nodes, &mut weights);
    }
    if nodes.windows(2).any(|w| w[1] <= w[0]) || weights.iter().any(|&w| !(w > 0.0)) {
        return Err(NtkError::Numeric(format!(
            "quadrature construction of order {n} produced an invalid rule"
        )));
    }
    Ok(QuadratureRule {
        nodes,
        weights,
        kind,
    })
}

fn symmetrize(nodes: &mut [f64], weights: &mut [f64]) {
    let n = nodes.len();
    for i in 0..n / 2 {
        let j = n - 1 - i;
        let x = 0.5 * (nodes[j] - nodes[i]);
        let w = 0.5 * (weights[i] + weights[j]);
        nodes[i] = -x;
        nodes[j] = x;
        weights[i] = w;
        weights[j] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
}

/// Gauss-Hermite rule for expectations under `N(0, 1)`.
pub fn gauss_hermite(order: usize) -> Result<QuadratureRule> {
    if order < 2 {
        return Err(NtkError::InvalidArgument(format!(
            "quadrature order must be at least 2, got {order}"
        )));
    }
    let rec = Recurrence {
        a: vec![0.0; order + 1],
        b: (0..=order).map(|k| k as f64).collect(),
        mu0: 1.0,
    };
    golub_welsch(order, &rec, RuleKind::Hermite)
}

/// Gauss-Jacobi rule for the symmetric weight `(1 - t^2)^alpha` on `[-1, 1]`.
pub fn gauss_jacobi(order: usize, alpha: f64) -> Result<QuadratureRule> {
    if order < 2 {
        return Err(NtkError::InvalidArgument(format!(
            "quadrature order must be at least 2, got {order}"
        )));
    }
    if !(alpha > -1.0) || !alpha.is_finite() {
        return Err(NtkError::InvalidArgument(format!(
            "jacobi exponent must exceed -1, got {alpha}"
        )));
    }
    let mut b = vec![0.0; order + 1];
    for (k, bk) in b.iter_mut().enumerate().skip(1) {
        let kf = k as f64;
        *bk = if k == 1 {
            1.0 / (2.0 * alpha + 3.0)
        } else {
            kf * (kf + 2.0 * alpha) / ((2.0 * kf + 2.0 * alpha + 1.0) * (2.0 * kf + 2.0 * alpha - 1.0))
        };
    }
    let rec = Recurrence {
        a: vec![0.0; order + 1],
        b,
        mu0: jacobi_mass(alpha),
    };
    golub_welsch(order, &rec, RuleKind::Jacobi { alpha })
}

/// Gauss-Laguerre rule for the weight `e^{-s}` on `[0, inf)`.
pub fn gauss_laguerre(order: usize) -> Result<QuadratureRule> {
    if order < 2 {
        return Err(NtkError::InvalidArgument(format!(
            "quadrature order must be at least 2, got {order}"
        )));
    }
    let rec = Recurrence {
        a: (0..=order).map(|k| 2.0 * k as f64 + 1.0).collect(),
        b: (0..=order).map(|k| (k * k) as f64).collect(),
        mu0: 1.0,
    };
    golub_welsch(order, &rec, RuleKind::Laguerre)
}

/// Rule for `N(0, 1)` expectations of integrands that vary on the scale
/// `panel_width`: Gauss-Legendre panels of `per_panel` nodes on
/// `[-half_range, half_range]`, weighted by the normal density.
pub fn normal_composite(panel_width: f64, half_range: f64, per_panel: usize) -> Result<QuadratureRule> {
    if !(panel_width > 0.0 && half_range > 0.0) {
        return Err(NtkError::InvalidArgument("panel width and range must be positive".into()));
    }
    let base = gauss_jacobi(per_panel, 0.0)?;
    let panels = (2.0 * half_range / panel_width).ceil() as usize;
    let h = 2.0 * half_range / panels as f64;
    let norm = 1.0 / (2.0 * PI).sqrt();
    let mut nodes = Vec::with_capacity(panels * per_panel);
    let mut weights = Vec::with_capacity(panels * per_panel);
    for k in 0..panels {
        let mid = -half_range + h * (k as f64 + 0.5);
        for (&t, &w) in base.nodes().iter().zip(base.weights()) {
            let z = mid + 0.5 * h * t;
            nodes.push(z);
            weights.push(0.5 * h * w * norm * (-0.5 * z * z).exp());
        }
    }
    Ok(QuadratureRule { nodes, weights, kind: RuleKind::NormalComposite })
}

/// `int_{-1}^{1} (1 - t^2)^alpha dt`.
pub fn jacobi_mass(alpha: f64) -> f64 {
    (0.5 * PI.ln() + ln_gamma(alpha + 1.0) - ln_gamma(alpha + 1.5)).exp()
}

/// Clamp a correlation drifting past +-1 by at most `CORR_CLAMP_TOL`.
pub fn clamp_correlation(c: f64) -> Result<f64> {
    if !c.is_finite() {
        return Err(NtkError::Numeric(format!("non-finite correlation {c}")));
    }
    if c.abs() > 1.0 + CORR_CLAMP_TOL {
        return Err(NtkError::InvalidArgument(format!(
            "correlation {c} outside [-1, 1]"
        )));
    }
    Ok(c.clamp(-1.0, 1.0))
}

fn check_variance(q: f64) -> Result<()> {
    if !(q >= 0.0) || !q.is_finite() {
        return Err(NtkError::InvalidArgument(format!(
            "variance must be finite and nonnegative, got {q}"
        )));
    }
    Ok(())
}

fn finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(NtkError::Numeric(format!("{what} evaluated to {v}")))
    }
}

/// `E[g(sqrt(q) Z)]` for `Z ~ N(0, 1)`.
pub fn expect1<G: Fn(f64) -> f64>(g: G, q: f64, rule: &QuadratureRule) -> Result<f64> {
    check_variance(q)?;
    let s = q.sqrt();
    finite(rule.integrate(|z| g(s * z)), "expect1")
}

/// `E[g(u1) g(u2)]` for a centred Gaussian pair with variances `q1`, `q2`
/// and correlation `c`.
pub fn expect2<G: Fn(f64) -> f64>(
    g: G,
    q1: f64,
    q2: f64,
    c: f64,
    rule: &QuadratureRule,
) -> Result<f64> {
    expect2_pair(&g, &g, q1, q2, c, rule)
}

/// `E[g(u1) h(u2)]` on the tensor-product grid.
pub fn expect2_pair<G, H>(g: G, h: H, q1: f64, q2: f64, c: f64, rule: &QuadratureRule) -> Result<f64>
where
    G: Fn(f64) -> f64,
    H: Fn(f64) -> f64,
{
    check_variance(q1)?;
    check_variance(q2)?;
    let c = clamp_correlation(c)?;
    let s = (1.0 - c * c).max(0.0).sqrt();
    let (r1, r2) = (q1.sqrt(), q2.sqrt());
    let z = rule.nodes();
    let w = rule.weights();
    let mut total = 0.0;
    for (&zi, &wi) in z.iter().zip(w) {
        let outer = g(r1 * zi);
        if outer == 0.0 {
            continue;
        }
        let base = c * zi;
        let mut inner = 0.0;
        for (&zj, &wj) in z.iter().zip(w) {
            inner += wj * h(r2 * (base + s * zj));
        }
        total += wi * outer * inner;
    }
    finite(total, "expect2")
}

/// Polar rule for bivariate expectations of functions with a kink at zero.
///
/// The angle integral is split at the four rays where `u1` or `u2` vanishes,
/// each sector carrying its own Gauss-Legendre rule, and the radial integral
/// uses Gauss-Laguerre in `s = r^2 / 2`.
#[derive(Debug, Clone)]
pub struct SectorRule {
    angular: QuadratureRule,
    radial: QuadratureRule,
}

impl SectorRule {
    pub fn new(angular_order: usize, radial_order: usize) -> Result<Self> {
        Ok(Self {
            angular: gauss_jacobi(angular_order, 0.0)?,
            radial: gauss_laguerre(radial_order)?,
        })
    }

    /// `E[g(u1) h(u2)]`, same contract as [`expect2_pair`].
    pub fn expect2_pair<G, H>(&self, g: G, h: H, q1: f64, q2: f64, c: f64) -> Result<f64>
    where
        G: Fn(f64) -> f64,
        H: Fn(f64) -> f64,
    {
        check_variance(q1)?;
        check_variance(q2)?;
        let c = clamp_correlation(c)?;
        let phi = c.acos();
        let (r1, r2) = (q1.sqrt(), q2.sqrt());
        let tau = 2.0 * PI;
        let mut cuts: Vec<f64> = [0.5 * PI, 1.5 * PI, phi + 0.5 * PI, phi + 1.5 * PI]
            .iter()
            .map(|t| t.rem_euclid(tau))
            .collect();
        cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
        let radii: Vec<(f64, f64)> = self
            .radial
            .nodes()
            .iter()
            .zip(self.radial.weights())
            .map(|(&s, &w)| ((2.0 * s).sqrt(), w))
            .collect();

        let mut total = 0.0;
        for i in 0..cuts.len() {
            let lo = cuts[i];
            let hi = if i + 1 < cuts.len() { cuts[i + 1] } else { cuts[0] + tau };
            let half = 0.5 * (hi - lo);
            if half <= 0.0 {
                continue;
            }
            let mid = 0.5 * (hi + lo);
            for (&t, &wt) in self.angular.nodes().iter().zip(self.angular.weights()) {
                let theta = mid + half * t;
                let (a1, a2) = (theta.cos(), (theta - phi).cos());
                let mut radial = 0.0;
                for &(r, wr) in &radii {
                    radial += wr * g(r1 * r * a1) * h(r2 * r * a2);
                }
                total += wt * half * radial;
            }
        }
        finite(total / tau, "sector expectation")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn two_point_hermite() {
        let r = gauss_hermite(2).unwrap();
        assert_abs_diff_eq!(r.nodes()[0], -1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(r.nodes()[1], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(r.weights()[0], 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(r.weights()[1], 0.5, epsilon = 1e-14);
    }

    #[test]
    fn hermite_moments() {
        for order in [8, 32, 64, 128] {
            let r = gauss_hermite(order).unwrap();
            let w: f64 = r.weights().iter().sum();
            assert_abs_diff_eq!(w, 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(r.integrate(|z| z * z), 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(r.integrate(|z| z.powi(4)), 3.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn order_below_two_rejected() {
        assert!(matches!(gauss_hermite(1), Err(NtkError::InvalidArgument(_))));
        assert!(matches!(gauss_jacobi(0, 0.0), Err(NtkError::InvalidArgument(_))));
    }

    #[test]
    fn legendre_rule_matches_known_nodes() {
        // three-point Gauss-Legendre: 0, +-sqrt(3/5), weights 8/9, 5/9
        let r = gauss_jacobi(3, 0.0).unwrap();
        assert_abs_diff_eq!(r.nodes()[2], (0.6f64).sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(r.nodes()[1], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r.weights()[1], 8.0 / 9.0, epsilon = 1e-14);
        assert_abs_diff_eq!(r.weights()[0], 5.0 / 9.0, epsilon = 1e-14);
    }

    #[test]
    fn jacobi_mass_and_moments() {
        // d = 4: weight sqrt(1 - t^2), mass pi/2, second moment pi/8
        let r = gauss_jacobi(40, 0.5).unwrap();
        assert_abs_diff_eq!(r.integrate(|_| 1.0), PI / 2.0, epsilon = 1e-13);
        assert_abs_diff_eq!(r.integrate(|t| t * t), PI / 8.0, epsilon = 1e-13);
    }

    #[test]
    fn laguerre_moments() {
        let r = gauss_laguerre(32).unwrap();
        // int s^k e^{-s} = k!
        assert_abs_diff_eq!(r.integrate(|s| s.powi(5)), 120.0, epsilon = 1e-9);
    }

    #[test]
    fn expect1_examples() {
        let r = gauss_hermite(64).unwrap();
        assert_abs_diff_eq!(expect1(|z| z, 4.0, &r).unwrap(), 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(expect1(|z| z * z, 4.0, &r).unwrap(), 4.0, epsilon = 1e-12);
        assert!(expect1(|_| f64::NAN, 1.0, &r).is_err());
        assert!(expect1(|z| z, -1.0, &r).is_err());
    }

    #[test]
    fn expect2_examples() {
        let r = gauss_hermite(64).unwrap();
        assert_abs_diff_eq!(expect2(|z| z, 1.0, 1.0, 0.5, &r).unwrap(), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(expect2(|z| z, 1.0, 1.0, 1.0, &r).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn correlation_clamping() {
        let r = gauss_hermite(16).unwrap();
        assert!(expect2(|z| z, 1.0, 1.0, 1.0 + 5e-13, &r).is_ok());
        assert!(matches!(
            expect2(|z| z, 1.0, 1.0, 1.0 + 1e-9, &r),
            Err(NtkError::InvalidArgument(_))
        ));
    }

    #[test]
    fn sector_rule_is_exact_for_relu() {
        let rule = SectorRule::new(32, 32).unwrap();
        let relu = |x: f64| x.max(0.0);
        for c in [-1.0, -0.6, 0.0, 0.3, 0.99, 1.0] {
            let v = rule.expect2_pair(relu, relu, 1.0, 1.0, c).unwrap();
            let theta = f64::acos(c);
            let exact = (theta.sin() + (PI - theta) * c) / (2.0 * PI);
            assert_abs_diff_eq!(v, exact, epsilon = 1e-13);
        }
    }
}
