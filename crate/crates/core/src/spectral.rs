//! Spherical-harmonic (Hecke-Funk) decomposition of zonal kernels on the sphere.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::activations::{ActivationKind, ActivationModel};
use crate::error::{NtkError, Result};
use crate::gaussmath::{gauss_jacobi, QuadratureRule};
use crate::kernels::{dense_recursion, log_normalizer, ArchKind, Architecture, FirstLayer, KernelTrace, NormScheme};
use crate::phase::{phase_point, InitParams, Phase};

pub const DEFAULT_NODES: usize = 256;
pub const DEFAULT_K_MAX: usize = 64;

/// Multiplier on `mu_k N(d, k) P_k(t)` in the reconstruction sum.
///
/// With `mu_k = (Omega_{d-1} / Omega_d) int g P_k w dt` the addition theorem
/// gives exactly 1; `calibrate_reconstruction` recovers it from `g = 1`.
pub const RECONSTRUCTION_FACTOR: f64 = 1.0;

fn check_dim(d: usize) -> Result<()> {
    if d < 3 {
        return Err(NtkError::InvalidArgument(format!("sphere dimension d must be at least 3, got {d}")));
    }
    Ok(())
}

/// Number of degree-`k` spherical harmonics on `S^{d-1}`.
pub fn harmonic_count(d: usize, k: usize) -> Result<u64> {
    check_dim(d)?;
    if k == 0 {
        return Ok(1);
    }
    // C(k + d - 3, d - 2), built so every partial product is an integer
    let n = (k + d - 3) as u128;
    let r = (d - 2) as u128;
    let mut c: u128 = 1;
    for i in 1..=r {
        c = c
            .checked_mul(n - r + i)
            .ok_or_else(|| NtkError::Numeric(format!("N({d}, {k}) overflows")))?
            / i;
    }
    let total = c
        .checked_mul((2 * k + d - 2) as u128)
        .ok_or_else(|| NtkError::Numeric(format!("N({d}, {k}) overflows")))?
        / k as u128;
    u64::try_from(total).map_err(|_| NtkError::Numeric(format!("N({d}, {k}) overflows")))
}

/// `P^d_0(t), ..., P^d_{k_max}(t)`, normalized so `P^d_k(1) = 1`.
pub fn legendre_all(d: usize, k_max: usize, t: f64) -> Result<Vec<f64>> {
    check_dim(d)?;
    if !(t.abs() <= 1.0) {
        return Err(NtkError::InvalidArgument(format!("legendre argument {t} outside [-1, 1]")));
    }
    let df = d as f64;
    let mut p = Vec::with_capacity(k_max + 1);
    p.push(1.0);
    if k_max >= 1 {
        p.push(t);
    }
    for k in 1..k_max {
        let kf = k as f64;
        let next = ((2.0 * kf + df - 2.0) * t * p[k] - kf * p[k - 1]) / (kf + df - 2.0);
        p.push(next);
    }
    Ok(p)
}

/// `d`-dimensional Legendre polynomial of degree `k`.
pub fn legendre_poly(d: usize, k: usize, t: f64) -> Result<f64> {
    Ok(legendre_all(d, k, t)?[k])
}

/// Surface area of `S^{m-1}`, `2 pi^{m/2} / Gamma(m/2)`.
pub fn sphere_area(m: usize) -> f64 {
    let h = m as f64 / 2.0;
    2.0 * (h * PI.ln() - ln_gamma(h)).exp()
}

/// Gauss-Jacobi rule for the weight `(1 - t^2)^{(d-3)/2}`.
pub fn sphere_rule(d: usize, nodes: usize) -> Result<QuadratureRule> {
    check_dim(d)?;
    gauss_jacobi(nodes, (d as f64 - 3.0) / 2.0)
}

/// How the depth-`L` kernel is normalized before decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    /// `K^L` itself (ordered and chaotic FFNN).
    Raw,
    Average,
    Resnet,
    Scaled,
}

impl Normalization {
    fn scheme(self) -> Option<NormScheme> {
        match self {
            Normalization::Raw => None,
            Normalization::Average => Some(NormScheme::Average),
            Normalization::Resnet => Some(NormScheme::Resnet),
            Normalization::Scaled => Some(NormScheme::Scaled),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelConfig {
    pub architecture: ArchKind,
    pub activation: ActivationKind,
    pub params: InitParams,
    pub normalization: Normalization,
}

impl KernelConfig {
    /// Normalization by phase: raw kernel off the edge of chaos, the average
    /// kernel on it, and the architecture's scheme for residual networks.
    pub fn new(architecture: ArchKind, activation: ActivationKind, params: InitParams) -> Result<Self> {
        if architecture.is_conv() {
            return Err(NtkError::Unsupported(
                "spectra are computed for dense kernels; conv kernels reduce to them for translation-invariant first layers".into(),
            ));
        }
        let normalization = match architecture {
            ArchKind::Ffnn => {
                let model = ActivationModel::from_kind(activation);
                if phase_point(&model, params)?.phase == Phase::Eoc {
                    Normalization::Average
                } else {
                    Normalization::Raw
                }
            }
            ArchKind::ResnetDense => Normalization::Resnet,
            _ => Normalization::Scaled,
        };
        Ok(Self { architecture, activation, params, normalization })
    }

    /// Same phase point with the unnormalized kernel.
    pub fn raw(self) -> Self {
        Self { normalization: Normalization::Raw, ..self }
    }

    /// Depth-`l` entry of `trace` under this configuration's normalization.
    pub fn value(&self, trace: &KernelTrace, l: usize) -> f64 {
        let v = trace.ntk[l - 1];
        match self.normalization.scheme() {
            None => trace.ntk_at(l),
            Some(_) if v == 0.0 || !v.is_finite() => v,
            Some(s) => {
                let (log_abs, sign) = trace.log_ntk_at(l);
                sign * (log_abs - log_normalizer(s, self.params, l)).exp()
            }
        }
    }

    pub fn id(&self) -> String {
        format!(
            "{}/{}/sb={}/sw={}/{:?}",
            self.architecture, self.activation, self.params.sigma_b, self.params.sigma_w, self.normalization
        )
        .to_lowercase()
    }
}

/// `g_L(t)` at each `depth` for every `t`; result is indexed `[depth][t]`.
pub fn zonal_profiles(config: &KernelConfig, d: usize, depths: &[usize], grid: &[f64]) -> Result<Vec<Vec<f64>>> {
    check_dim(d)?;
    if depths.is_empty() || depths.contains(&0) {
        return Err(NtkError::InvalidArgument("depths must be positive".into()));
    }
    if let Some(t) = grid.iter().find(|t| !(t.abs() <= 1.0)) {
        return Err(NtkError::InvalidArgument(format!("grid point {t} outside [-1, 1]")));
    }
    let model = ActivationModel::from_kind(config.activation);
    let arch = Architecture::dense(config.architecture)?;
    let max = *depths.iter().max().unwrap();
    let (sb2, sw2) = config.params.squares();
    let df = d as f64;
    let columns: Vec<Vec<f64>> = grid
        .par_iter()
        .map(|&t| -> Result<Vec<f64>> {
            let first = FirstLayer {
                qx: sb2 + sw2 / df,
                qxp: sb2 + sw2 / df,
                qcov: sb2 + sw2 * t / df,
                diagonal: t == 1.0,
            };
            let trace = dense_recursion(arch, &model, config.params, first, max)?;
            Ok(depths.iter().map(|&l| config.value(&trace, l)).collect())
        })
        .collect::<Result<_>>()?;
    Ok((0..depths.len()).map(|j| columns.iter().map(|c| c[j]).collect()).collect())
}

/// `g_L(t)` on `grid`.
pub fn zonal_profile(config: &KernelConfig, d: usize, depth: usize, grid: &[f64]) -> Result<Vec<f64>> {
    Ok(zonal_profiles(config, d, &[depth], grid)?.remove(0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralDecomposition {
    pub d: usize,
    pub depth: usize,
    /// `mu_k` for `k = 0..=k_max`.
    pub mu: Vec<f64>,
    pub multiplicities: Vec<u64>,
    pub kernel_id: String,
}

impl SpectralDecomposition {
    pub fn k_max(&self) -> usize {
        self.mu.len() - 1
    }

    /// `mu_k N(d, k) / sum_j mu_j N(d, j)`.
    pub fn normalized(&self) -> Vec<f64> {
        let total: f64 = self.mu.iter().zip(&self.multiplicities).map(|(m, n)| m * *n as f64).sum();
        self.mu.iter().zip(&self.multiplicities).map(|(m, n)| m * *n as f64 / total).collect()
    }

    /// Normalized mass carried by degrees `k >= 1`.
    pub fn nonconstant_mass(&self) -> f64 {
        self.normalized().iter().skip(1).sum()
    }

    /// Truncated addition-theorem sum at `t`.
    pub fn reconstruct(&self, t: f64) -> Result<f64> {
        let p = legendre_all(self.d, self.k_max(), t)?;
        Ok(RECONSTRUCTION_FACTOR
            * self.mu.iter().zip(&self.multiplicities).zip(&p).map(|((m, n), pk)| m * *n as f64 * pk).sum::<f64>())
    }
}

/// Hecke-Funk coefficients of a profile sampled on the nodes of `rule`.
pub fn decompose(profile: &[f64], rule: &QuadratureRule, d: usize, k_max: usize) -> Result<SpectralDecomposition> {
    check_dim(d)?;
    if profile.len() != rule.order() {
        return Err(NtkError::InvalidArgument(format!(
            "profile has {} values for {} quadrature nodes",
            profile.len(),
            rule.order()
        )));
    }
    // g P_k is integrated exactly only when both have degree below the rule order
    if k_max >= rule.order() {
        return Err(NtkError::Resolution(format!(
            "k_max = {k_max} needs more than {} quadrature nodes",
            rule.order()
        )));
    }
    let ratio = sphere_area(d - 1) / sphere_area(d);
    let mut mu = vec![0.0; k_max + 1];
    for ((&t, &w), &g) in rule.nodes().iter().zip(rule.weights()).zip(profile) {
        let p = legendre_all(d, k_max, t)?;
        for (m, pk) in mu.iter_mut().zip(&p) {
            *m += w * g * pk;
        }
    }
    for m in &mut mu {
        *m *= ratio;
    }
    let multiplicities = (0..=k_max).map(|k| harmonic_count(d, k)).collect::<Result<_>>()?;
    Ok(SpectralDecomposition { d, depth: 0, mu, multiplicities, kernel_id: String::from("profile") })
}

/// Reconstruction factor implied by decomposing `g = 1`.
pub fn calibrate_reconstruction(d: usize, nodes: usize) -> Result<f64> {
    let rule = sphere_rule(d, nodes)?;
    let dec = decompose(&vec![1.0; nodes], &rule, d, 0)?;
    Ok(1.0 / dec.mu[0])
}

/// Spectra of a kernel at several depths.
pub fn eigen_trend(
    config: &KernelConfig,
    d: usize,
    depths: &[usize],
    k_max: usize,
    nodes: usize,
) -> Result<Vec<SpectralDecomposition>> {
    let rule = sphere_rule(d, nodes)?;
    let profiles = zonal_profiles(config, d, depths, rule.nodes())?;
    depths
        .iter()
        .zip(profiles)
        .map(|(&l, g)| {
            let mut dec = decompose(&g, &rule, d, k_max)?;
            dec.depth = l;
            dec.kernel_id = config.id();
            Ok(dec)
        })
        .collect()
}

/// Largest `|g(t) - reconstruct(t)|` over `grid`.
pub fn reconstruction_error(dec: &SpectralDecomposition, grid: &[f64], profile: &[f64]) -> Result<f64> {
    let mut worst = 0.0f64;
    for (&t, &g) in grid.iter().zip(profile) {
        worst = worst.max((dec.reconstruct(t)? - g).abs());
    }
    Ok(worst)
}

/// `n` evenly spaced points on `[-bound, bound]`.
pub fn uniform_grid(bound: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| -bound + 2.0 * bound * i as f64 / (n - 1).max(1) as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn counts() {
        assert_eq!(harmonic_count(3, 5).unwrap(), 11);
        assert_eq!(harmonic_count(3, 0).unwrap(), 1);
        assert_eq!(harmonic_count(4, 2).unwrap(), 9);
        assert!(harmonic_count(2, 1).is_err());
    }

    #[test]
    fn low_degree_values() {
        assert_eq!(legendre_poly(5, 0, 0.3).unwrap(), 1.0);
        assert_eq!(legendre_poly(5, 1, 0.3).unwrap(), 0.3);
        assert_abs_diff_eq!(legendre_poly(3, 2, 0.0).unwrap(), -0.5, epsilon = 1e-15);
        for d in 3..8 {
            assert_abs_diff_eq!(legendre_poly(d, 17, 1.0).unwrap(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn areas() {
        assert_abs_diff_eq!(sphere_area(2), 2.0 * PI, epsilon = 1e-12);
        assert_abs_diff_eq!(sphere_area(3), 4.0 * PI, epsilon = 1e-12);
    }

    #[test]
    fn calibration_is_one() {
        for d in [3, 4, 7] {
            assert_abs_diff_eq!(calibrate_reconstruction(d, 64).unwrap(), RECONSTRUCTION_FACTOR, epsilon = 1e-12);
        }
    }

    #[test]
    fn k_max_beyond_rule_rejected() {
        let rule = sphere_rule(3, 16).unwrap();
        assert!(matches!(decompose(&[1.0; 16], &rule, 3, 16), Err(NtkError::Resolution(_))));
    }
}
