//! Infinite-width NTK recursions over depth.
//!
//! Every recursion runs on exact per-layer variances. Residual traces with
//! ReLU are kept in scaled form: the stored second moments and kernel values
//! times `exp(log_scale[l])` give the true values, which keeps
//! `(1 + sigma_w^2/2)^L` growth representable at any depth.

mod conv;
mod limit;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use conv::{conv_first_layer, ntk_cnn, ntk_conv, ntk_resnet_conv, ConvGrid, ConvInput, ConvPair, GridLayer};
pub use limit::limiting_kernel;

use crate::activations::{self, ActivationKind, ActivationModel};
use crate::error::{NtkError, Result};
use crate::phase::{classify, InitParams, Phase};

/// Variances above this are reported as overflow in unscaled traces.
pub const OVERFLOW_LIMIT: f64 = 1e300;

/// Pairs with first-layer correlation above `1 - B_EPS` sit outside the
/// region where chaotic-phase statements apply.
pub const B_EPS: f64 = 1e-3;

pub(crate) const RESCALE_ABOVE: f64 = 1e150;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchKind {
    Ffnn,
    Cnn,
    ResnetDense,
    ResnetConv,
    ScaledResnetDense,
    ScaledResnetConv,
}

impl ArchKind {
    pub fn is_conv(self) -> bool {
        matches!(self, ArchKind::Cnn | ArchKind::ResnetConv | ArchKind::ScaledResnetConv)
    }

    pub fn is_residual(self) -> bool {
        !matches!(self, ArchKind::Ffnn | ArchKind::Cnn)
    }

    pub fn is_scaled(self) -> bool {
        matches!(self, ArchKind::ScaledResnetDense | ArchKind::ScaledResnetConv)
    }

    /// Dense architecture with the same layer rule.
    pub fn dense(self) -> ArchKind {
        match self {
            ArchKind::Ffnn | ArchKind::Cnn => ArchKind::Ffnn,
            ArchKind::ResnetDense | ArchKind::ResnetConv => ArchKind::ResnetDense,
            ArchKind::ScaledResnetDense | ArchKind::ScaledResnetConv => ArchKind::ScaledResnetDense,
        }
    }

    pub fn default_scheme(self) -> NormScheme {
        match self.dense() {
            ArchKind::ResnetDense => NormScheme::Resnet,
            ArchKind::ScaledResnetDense => NormScheme::Scaled,
            _ => NormScheme::Average,
        }
    }
}

impl fmt::Display for ArchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ArchKind::Ffnn => "ffnn",
            ArchKind::Cnn => "cnn",
            ArchKind::ResnetDense => "resnet_dense",
            ArchKind::ResnetConv => "resnet_conv",
            ArchKind::ScaledResnetDense => "scaled_resnet_dense",
            ArchKind::ScaledResnetConv => "scaled_resnet_conv",
        })
    }
}

impl FromStr for ArchKind {
    type Err = NtkError;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "ffnn" => ArchKind::Ffnn,
            "cnn" => ArchKind::Cnn,
            "resnet" | "resnet_dense" => ArchKind::ResnetDense,
            "resnet_conv" => ArchKind::ResnetConv,
            "scaled_resnet" | "scaled_resnet_dense" => ArchKind::ScaledResnetDense,
            "scaled_resnet_conv" => ArchKind::ScaledResnetConv,
            other => return Err(NtkError::InvalidArgument(format!("unknown architecture '{other}'"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvParams {
    /// Spatial size `M` of the circular grid.
    pub size: usize,
    /// Filter half width `k`; filters cover offsets `-k..=k`.
    pub half_width: usize,
    pub assumption1: bool,
}

impl ConvParams {
    pub fn new(size: usize, half_width: usize, assumption1: bool) -> Result<Self> {
        if size == 0 || half_width == 0 || 2 * half_width + 1 > size {
            return Err(NtkError::InvalidArgument(format!(
                "conv needs 2k+1 <= M with k >= 1, got M = {size}, k = {half_width}"
            )));
        }
        Ok(Self { size, half_width, assumption1 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub kind: ArchKind,
    pub conv: Option<ConvParams>,
}

impl Architecture {
    pub fn dense(kind: ArchKind) -> Result<Self> {
        if kind.is_conv() {
            return Err(NtkError::InvalidArgument(format!("{kind} needs conv parameters")));
        }
        Ok(Self { kind, conv: None })
    }

    pub fn conv(kind: ArchKind, conv: ConvParams) -> Result<Self> {
        if !kind.is_conv() {
            return Err(NtkError::InvalidArgument(format!("{kind} is not convolutional")));
        }
        Ok(Self { kind, conv: Some(conv) })
    }
}

/// Two dense inputs of equal dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct InputPair {
    pub x: Vec<f64>,
    pub xp: Vec<f64>,
}

impl InputPair {
    pub fn new(x: Vec<f64>, xp: Vec<f64>) -> Result<Self> {
        if x.is_empty() || x.len() != xp.len() {
            return Err(NtkError::InvalidArgument(format!(
                "inputs need equal positive dimension, got {} and {}",
                x.len(),
                xp.len()
            )));
        }
        if x.iter().chain(&xp).any(|v| !v.is_finite()) {
            return Err(NtkError::InvalidArgument("inputs must be finite".into()));
        }
        Ok(Self { x, xp })
    }

    pub fn diagonal(x: Vec<f64>) -> Result<Self> {
        Self::new(x.clone(), x)
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn is_diagonal(&self) -> bool {
        self.x == self.xp
    }

    pub fn swapped(&self) -> Self {
        Self { x: self.xp.clone(), xp: self.x.clone() }
    }

    /// First-layer second moments `sigma_b^2 + sigma_w^2 <x, x'> / d`.
    pub fn first_layer(&self, params: InitParams) -> FirstLayer {
        let d = self.dim() as f64;
        let (sb2, sw2) = params.squares();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| u * v).sum::<f64>();
        FirstLayer {
            qx: sb2 + sw2 * dot(&self.x, &self.x) / d,
            qxp: sb2 + sw2 * dot(&self.xp, &self.xp) / d,
            qcov: sb2 + sw2 * dot(&self.x, &self.xp) / d,
            diagonal: self.is_diagonal(),
        }
    }
}

/// First-layer variances and covariance of a pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FirstLayer {
    pub qx: f64,
    pub qxp: f64,
    pub qcov: f64,
    /// The two inputs are identical.
    pub diagonal: bool,
}

impl FirstLayer {
    pub fn correlation(&self) -> f64 {
        if self.qx > 0.0 && self.qxp > 0.0 {
            (self.qcov / (self.qx * self.qxp).sqrt()).clamp(-1.0, 1.0)
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct TraceFlags {
    /// A variance passed `OVERFLOW_LIMIT`; later layers hold `inf`.
    pub variance_overflow: bool,
    /// Chaotic-phase pair with first-layer correlation above `1 - B_EPS`.
    pub outside_b_eps: bool,
}

/// Per-depth record of one input pair. Entry `l - 1` holds layer `l`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelTrace {
    pub architecture: Architecture,
    pub activation: ActivationKind,
    pub params: InitParams,
    pub qx: Vec<f64>,
    pub qxp: Vec<f64>,
    pub qcov: Vec<f64>,
    pub corr: Vec<f64>,
    /// Derivative covariance feeding layer `l`; zero for the first layer.
    /// Scaled residual traces store the `1/l`-scaled value.
    pub qdot: Vec<f64>,
    pub ntk: Vec<f64>,
    /// Natural log of the factor multiplying `qx`, `qxp`, `qcov` and `ntk`.
    pub log_scale: Vec<f64>,
    /// Full neuron-offset grid for convolutional traces.
    pub grid: Option<ConvGrid>,
    pub flags: TraceFlags,
}

impl KernelTrace {
    pub fn depth(&self) -> usize {
        self.ntk.len()
    }

    /// `K^l` in natural units (may overflow to `inf` for deep residual traces).
    pub fn ntk_at(&self, l: usize) -> f64 {
        self.ntk[l - 1] * self.log_scale[l - 1].exp()
    }

    /// `ln |K^l|` and the sign of `K^l`.
    pub fn log_ntk_at(&self, l: usize) -> (f64, f64) {
        let v = self.ntk[l - 1];
        (v.abs().ln() + self.log_scale[l - 1], v.signum())
    }

    pub fn last_ntk(&self) -> f64 {
        self.ntk_at(self.depth())
    }

    fn with_capacity(architecture: Architecture, activation: ActivationKind, params: InitParams, depth: usize) -> Self {
        Self {
            architecture,
            activation,
            params,
            qx: Vec::with_capacity(depth),
            qxp: Vec::with_capacity(depth),
            qcov: Vec::with_capacity(depth),
            corr: Vec::with_capacity(depth),
            qdot: Vec::with_capacity(depth),
            ntk: Vec::with_capacity(depth),
            log_scale: Vec::with_capacity(depth),
            grid: None,
            flags: TraceFlags::default(),
        }
    }
}

/// Block second moments and derivative covariance for scaled state.
///
/// For ReLU the state may be stored divided by `exp(log_scale)`; positive
/// homogeneity lets the bias enter as `sigma_b^2 * exp(-log_scale)`.
pub(crate) fn block_step(
    model: &ActivationModel,
    params: InitParams,
    log_scale: f64,
    qx: f64,
    qxp: f64,
    qcov: f64,
) -> Result<activations::LayerStep> {
    if log_scale == 0.0 {
        return activations::layer_step(model, params, qx, qxp, qcov);
    }
    debug_assert_eq!(model.kind(), ActivationKind::Relu);
    let c = activations::correlation(qx, qxp, qcov)?;
    let (sb2, sw2) = params.squares();
    let bias = sb2 * (-log_scale).exp();
    let a = 0.5 * sw2;
    Ok(activations::LayerStep {
        qx: bias + a * qx,
        qxp: bias + a * qxp,
        qcov: bias + a * (qx * qxp).sqrt() * activations::relu_f(c),
        qdot: a * activations::relu_f_prime(c),
    })
}

fn check_depth(depth: usize) -> Result<()> {
    if depth == 0 {
        return Err(NtkError::InvalidArgument("depth must be at least 1".into()));
    }
    Ok(())
}

/// Scalar recursion shared by dense architectures and the translation-invariant conv path.
pub fn dense_recursion(
    arch: Architecture,
    model: &ActivationModel,
    params: InitParams,
    first: FirstLayer,
    depth: usize,
) -> Result<KernelTrace> {
    check_depth(depth)?;
    let kind = arch.kind.dense();
    if kind == ArchKind::ScaledResnetDense && model.kind() != ActivationKind::Relu {
        return Err(NtkError::Unsupported("scaled residual kernels are defined for relu".into()));
    }
    if !(first.qx > 0.0 && first.qxp > 0.0) {
        return Err(NtkError::InvalidArgument(format!(
            "first-layer variances must be positive, got ({}, {})",
            first.qx, first.qxp
        )));
    }
    let rescale = kind.is_residual() && model.kind() == ActivationKind::Relu;
    let mut trace = KernelTrace::with_capacity(arch, model.kind(), params, depth);
    let (mut qx, mut qxp, mut qcov) = (first.qx, first.qxp, first.qcov);
    let mut k = first.qcov;
    let mut log_scale = 0.0;
    let c1 = activations::correlation(qx, qxp, qcov)?;

    if !first.diagonal && c1 > 1.0 - B_EPS {
        if let Ok(report) = classify(model, params) {
            trace.flags.outside_b_eps = report.phase == Phase::Chaotic;
        }
    }

    let mut overflow = false;
    for l in 1..=depth {
        let mut qdot = 0.0;
        if l > 1 && !overflow {
            let step = block_step(model, params, log_scale, qx, qxp, qcov)?;
            match kind {
                ArchKind::Ffnn => {
                    k = step.qdot * k + step.qcov;
                    qdot = step.qdot;
                    (qx, qxp, qcov) = (step.qx, step.qxp, step.qcov);
                }
                ArchKind::ResnetDense => {
                    k = k * (1.0 + step.qdot) + step.qcov;
                    qdot = step.qdot;
                    qx += step.qx;
                    qxp += step.qxp;
                    qcov += step.qcov;
                }
                _ => {
                    let inv = 1.0 / l as f64;
                    qdot = step.qdot * inv;
                    k = k * (1.0 + qdot) + step.qcov;
                    qx += step.qx * inv;
                    qxp += step.qxp * inv;
                    qcov += step.qcov * inv;
                }
            }
            if rescale {
                let m = qx.max(qxp).max(k.abs());
                if m > RESCALE_ABOVE {
                    qx /= m;
                    qxp /= m;
                    qcov /= m;
                    k /= m;
                    log_scale += m.ln();
                }
            } else if qx.max(qxp) > OVERFLOW_LIMIT || !k.is_finite() {
                overflow = true;
                trace.flags.variance_overflow = true;
            }
        }
        if overflow {
            trace.qx.push(f64::INFINITY);
            trace.qxp.push(f64::INFINITY);
            trace.qcov.push(f64::NAN);
            trace.corr.push(f64::NAN);
            trace.qdot.push(f64::NAN);
            trace.ntk.push(f64::INFINITY);
            trace.log_scale.push(0.0);
            continue;
        }
        trace.qx.push(qx);
        trace.qxp.push(qxp);
        trace.qcov.push(qcov);
        trace.corr.push(activations::correlation(qx, qxp, qcov)?);
        trace.qdot.push(qdot);
        trace.ntk.push(k);
        trace.log_scale.push(log_scale);
    }
    Ok(trace)
}

/// NTK of a fully connected network.
pub fn ntk_ffnn(pair: &InputPair, model: &ActivationModel, params: InitParams, depth: usize) -> Result<KernelTrace> {
    dense_recursion(Architecture::dense(ArchKind::Ffnn)?, model, params, pair.first_layer(params), depth)
}

/// NTK of a dense residual network; the first layer has no skip connection.
pub fn ntk_resnet_dense(
    pair: &InputPair,
    model: &ActivationModel,
    params: InitParams,
    depth: usize,
) -> Result<KernelTrace> {
    dense_recursion(Architecture::dense(ArchKind::ResnetDense)?, model, params, pair.first_layer(params), depth)
}

/// NTK of a residual network whose block `l` is scaled by `1/sqrt(l)` (ReLU).
pub fn ntk_scaled_resnet(pair: &InputPair, params: InitParams, depth: usize) -> Result<KernelTrace> {
    dense_recursion(
        Architecture::dense(ArchKind::ScaledResnetDense)?,
        &ActivationModel::relu(),
        params,
        pair.first_layer(params),
        depth,
    )
}

/// Depth normalization of a trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormScheme {
    /// `K^l / l`
    Average,
    /// `K^l / (l (1 + sigma_w^2/2)^{l-1})`
    Resnet,
    /// `K^l / l^{1 + sigma_w^2/2}`
    Scaled,
}

impl FromStr for NormScheme {
    type Err = NtkError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "average" => Ok(NormScheme::Average),
            "resnet" => Ok(NormScheme::Resnet),
            "scaled" => Ok(NormScheme::Scaled),
            other => Err(NtkError::InvalidArgument(format!("unknown normalization '{other}'"))),
        }
    }
}

/// `ln alpha_l` for a scheme.
pub fn log_normalizer(scheme: NormScheme, params: InitParams, l: usize) -> f64 {
    let lf = l as f64;
    let a = params.half_gain();
    match scheme {
        NormScheme::Average => lf.ln(),
        NormScheme::Resnet => lf.ln() + (lf - 1.0) * a.ln_1p(),
        NormScheme::Scaled => (1.0 + a) * lf.ln(),
    }
}

/// `K^l / alpha_l` for every layer, computed in log space.
pub fn normalize(trace: &KernelTrace, scheme: NormScheme) -> Result<Vec<f64>> {
    if trace.architecture.kind.default_scheme() != scheme {
        return Err(NtkError::InvalidArgument(format!(
            "normalization {scheme:?} does not match architecture {}",
            trace.architecture.kind
        )));
    }
    Ok((1..=trace.depth())
        .map(|l| {
            let v = trace.ntk[l - 1];
            if v == 0.0 || !v.is_finite() {
                return v;
            }
            let (log_abs, sign) = trace.log_ntk_at(l);
            sign * (log_abs - log_normalizer(scheme, trace.params, l)).exp()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn unit_pair(d: usize) -> InputPair {
        let mut x = vec![0.0; d];
        let mut xp = vec![0.0; d];
        x[0] = (d as f64).sqrt();
        xp[0] = 0.6 * (d as f64).sqrt();
        xp[1] = 0.8 * (d as f64).sqrt();
        InputPair::new(x, xp).unwrap()
    }

    #[test]
    fn relu_eoc_diagonal_grows_linearly() {
        let x = vec![1.0; 4];
        let pair = InputPair::diagonal(x).unwrap();
        let t = ntk_ffnn(&pair, &ActivationModel::relu(), InitParams::relu_eoc(), 10).unwrap();
        for l in 1..=10 {
            assert_abs_diff_eq!(t.ntk_at(l), 2.0 * l as f64, epsilon = 1e-12);
        }
    }

    #[test]
    fn first_layer_of_orthogonal_inputs() {
        let pair = InputPair::new(vec![1.0, 0.0], vec![0.0, 1.0]).unwrap();
        let t = ntk_ffnn(&pair, &ActivationModel::relu(), InitParams::new(0.0, 1.0).unwrap(), 1).unwrap();
        assert_eq!(t.ntk, vec![0.0]);
    }

    #[test]
    fn resnet_diagonal_variance_grows_geometrically() {
        let pair = InputPair::diagonal(vec![1.0, 2.0, 2.0]).unwrap();
        let p = InitParams::new(0.0, 1.1).unwrap();
        let t = ntk_resnet_dense(&pair, &ActivationModel::relu(), p, 30).unwrap();
        let q1 = 1.21 * 9.0 / 3.0;
        for l in 1..=30 {
            let q = t.qx[l - 1] * t.log_scale[l - 1].exp();
            let want = (1.0 + 0.605f64).powi(l as i32 - 1) * q1;
            assert!((q - want).abs() < 1e-12 * want);
        }
    }

    #[test]
    fn resnet_survives_deep_growth() {
        let pair = unit_pair(3);
        let t = ntk_resnet_dense(&pair, &ActivationModel::relu(), InitParams::relu_eoc(), 3000).unwrap();
        let n = normalize(&t, NormScheme::Resnet).unwrap();
        assert!(n.iter().all(|v| v.is_finite() && *v > 0.0));
        assert!(t.log_scale[2999] > 1000.0);
    }

    #[test]
    fn scheme_mismatch_rejected() {
        let pair = unit_pair(3);
        let t = ntk_ffnn(&pair, &ActivationModel::relu(), InitParams::relu_eoc(), 3).unwrap();
        assert!(matches!(normalize(&t, NormScheme::Resnet), Err(NtkError::InvalidArgument(_))));
        let n = normalize(&t, NormScheme::Average).unwrap();
        assert_eq!(n[0], t.ntk[0]);
    }

    #[test]
    fn chaotic_relu_flags_overflow() {
        let pair = unit_pair(3);
        let t = ntk_ffnn(&pair, &ActivationModel::relu(), InitParams::new(0.0, 3.0).unwrap(), 2000).unwrap();
        assert!(t.flags.variance_overflow);
        assert!(t.ntk.last().unwrap().is_infinite());
    }

    #[test]
    fn scaled_resnet_rejects_tanh() {
        let pair = unit_pair(3);
        let arch = Architecture::dense(ArchKind::ScaledResnetDense).unwrap();
        let p = InitParams::new(0.1, 1.0).unwrap();
        assert!(matches!(
            dense_recursion(arch, &ActivationModel::tanh(), p, pair.first_layer(p), 3),
            Err(NtkError::Unsupported(_))
        ));
    }
}
