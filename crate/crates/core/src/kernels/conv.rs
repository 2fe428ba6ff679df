//! Convolutional kernels on a circular grid of neuron offsets.

use crate::activations::{ActivationKind, ActivationModel};
use crate::error::{NtkError, Result};
use crate::phase::InitParams;

use super::{block_step, check_depth, RESCALE_ABOVE, dense_recursion, ArchKind, Architecture, ConvParams, FirstLayer, KernelTrace};

const ASSUMPTION1_TOL: f64 = 1e-9;

/// Input with `channels` rows of `size` spatial positions, row major.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvInput {
    pub channels: usize,
    pub size: usize,
    pub data: Vec<f64>,
}

impl ConvInput {
    pub fn new(channels: usize, size: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || size == 0 || data.len() != channels * size {
            return Err(NtkError::InvalidArgument(format!(
                "conv input needs {channels} x {size} values, got {}",
                data.len()
            )));
        }
        Ok(Self { channels, size, data })
    }

    /// Every position of channel `j` carries `values[j]`.
    pub fn constant(values: &[f64], size: usize) -> Result<Self> {
        let data = values.iter().flat_map(|&v| std::iter::repeat_n(v, size)).collect();
        Self::new(values.len(), size, data)
    }

    fn at(&self, channel: usize, pos: usize) -> f64 {
        self.data[channel * self.size + pos]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvPair {
    pub x: ConvInput,
    pub xp: ConvInput,
}

impl ConvPair {
    pub fn new(x: ConvInput, xp: ConvInput) -> Result<Self> {
        if x.channels != xp.channels || x.size != xp.size {
            return Err(NtkError::InvalidArgument("conv inputs differ in shape".into()));
        }
        Ok(Self { x, xp })
    }
}

/// One layer of the `M x M` grid. Matrices are row major in `(alpha, alpha')`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridLayer {
    pub varx: Vec<f64>,
    pub varxp: Vec<f64>,
    pub cov: Vec<f64>,
    pub corr: Vec<f64>,
    pub qdot: Vec<f64>,
    pub ntk: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrid {
    pub size: usize,
    pub layers: Vec<GridLayer>,
}

impl ConvGrid {
    /// `K^l_{alpha, alpha'}` in the trace's scaled units.
    pub fn ntk(&self, l: usize, a: usize, ap: usize) -> f64 {
        self.layers[l - 1].ntk[a * self.size + ap]
    }
}

fn wrap(i: isize, m: usize) -> usize {
    let m = m as isize;
    (((i % m) + m) % m) as usize
}

fn bracket(x: &ConvInput, xp: &ConvInput, a: usize, ap: usize, k: usize) -> f64 {
    let m = x.size;
    let mut s = 0.0;
    for j in 0..x.channels {
        for beta in -(k as isize)..=(k as isize) {
            s += x.at(j, wrap(a as isize + beta, m)) * xp.at(j, wrap(ap as isize + beta, m));
        }
    }
    s
}

/// First-layer grids `(q(x,x), q(x',x'), q(x,x'))`, each `M x M`.
pub fn conv_first_layer(pair: &ConvPair, params: InitParams, half_width: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let m = pair.x.size;
    let (sb2, sw2) = params.squares();
    let scale = sw2 / (pair.x.channels as f64 * (2 * half_width + 1) as f64);
    let grid = |u: &ConvInput, v: &ConvInput| {
        let mut g = vec![0.0; m * m];
        for a in 0..m {
            for ap in 0..m {
                g[a * m + ap] = sb2 + scale * bracket(u, v, a, ap, half_width);
            }
        }
        g
    };
    (grid(&pair.x, &pair.x), grid(&pair.xp, &pair.xp), grid(&pair.x, &pair.xp))
}

fn spread(g: &[f64]) -> f64 {
    let lo = g.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = g.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    hi - lo
}

/// Conv NTK of any convolutional architecture.
pub fn ntk_conv(
    arch: Architecture,
    pair: &ConvPair,
    model: &ActivationModel,
    params: InitParams,
    depth: usize,
) -> Result<KernelTrace> {
    check_depth(depth)?;
    let conv = arch
        .conv
        .ok_or_else(|| NtkError::InvalidArgument(format!("{} needs conv parameters", arch.kind)))?;
    if pair.x.size != conv.size {
        return Err(NtkError::InvalidArgument(format!(
            "input size {} does not match M = {}",
            pair.x.size, conv.size
        )));
    }
    let m = conv.size;
    let k = conv.half_width;
    let (gxx, gpp, gxp) = conv_first_layer(pair, params, k);

    if conv.assumption1 {
        for (name, g) in [("q(x,x)", &gxx), ("q(x',x')", &gpp), ("q(x,x')", &gxp)] {
            let s = spread(g);
            if s > ASSUMPTION1_TOL {
                return Err(NtkError::AssumptionViolated(format!(
                    "first-layer {name} varies by {s:e} across neuron offsets"
                )));
            }
        }
        let first = FirstLayer { qx: gxx[0], qxp: gpp[0], qcov: gxp[0], diagonal: pair.x == pair.xp };
        return dense_recursion(arch, model, params, first, depth);
    }

    if arch.kind == ArchKind::ScaledResnetConv && model.kind() != ActivationKind::Relu {
        return Err(NtkError::Unsupported("scaled residual kernels are defined for relu".into()));
    }
    let rescale = arch.kind.is_residual() && model.kind() == ActivationKind::Relu;
    let width = (2 * k + 1) as f64;
    let diag = |g: &[f64]| (0..m).map(|a| g[a * m + a]).collect::<Vec<f64>>();

    let mut varx = diag(&gxx);
    let mut varxp = diag(&gpp);
    let mut cov = gxp.clone();
    let mut ntk = gxp;
    let mut log_scale = 0.0;

    let mut trace = KernelTrace::with_capacity(arch, model.kind(), params, depth);
    let mut layers = Vec::with_capacity(depth);
    let push = |trace: &mut KernelTrace,
                    layers: &mut Vec<GridLayer>,
                    varx: &[f64],
                    varxp: &[f64],
                    cov: &[f64],
                    qdot: Vec<f64>,
                    ntk: &[f64],
                    log_scale: f64|
     -> Result<()> {
        let mut corr = vec![0.0; m * m];
        for a in 0..m {
            for ap in 0..m {
                corr[a * m + ap] = crate::activations::correlation(varx[a], varxp[ap], cov[a * m + ap])?;
            }
        }
        trace.qx.push(varx[0]);
        trace.qxp.push(varxp[0]);
        trace.qcov.push(cov[0]);
        trace.corr.push(corr[0]);
        trace.qdot.push(qdot[0]);
        trace.ntk.push(ntk[0]);
        trace.log_scale.push(log_scale);
        layers.push(GridLayer {
            varx: varx.to_vec(),
            varxp: varxp.to_vec(),
            cov: cov.to_vec(),
            corr,
            qdot,
            ntk: ntk.to_vec(),
        });
        Ok(())
    };
    push(&mut trace, &mut layers, &varx, &varxp, &cov, vec![0.0; m * m], &ntk, log_scale)?;

    for l in 2..=depth {
        let inv_l = if arch.kind.is_scaled() { 1.0 / l as f64 } else { 1.0 };
        let mut block_cov = vec![0.0; m * m];
        let mut psi = vec![0.0; m * m];
        let mut qdot = vec![0.0; m * m];
        let mut block_varx = vec![0.0; m];
        let mut block_varxp = vec![0.0; m];
        for a in 0..m {
            for ap in 0..m {
                let idx = a * m + ap;
                let s = block_step(model, params, log_scale, varx[a], varxp[ap], cov[idx])?;
                block_cov[idx] = s.qcov;
                qdot[idx] = s.qdot * inv_l;
                psi[idx] = qdot[idx] * ntk[idx] + s.qcov;
                if ap == 0 {
                    block_varx[a] = s.qx;
                }
                if a == 0 {
                    block_varxp[ap] = s.qxp;
                }
            }
        }
        let avg_grid = |g: &[f64], a: usize, ap: usize| {
            let mut s = 0.0;
            for beta in -(k as isize)..=(k as isize) {
                s += g[wrap(a as isize + beta, m) * m + wrap(ap as isize + beta, m)];
            }
            s / width
        };
        let avg_vec = |v: &[f64], a: usize| {
            let mut s = 0.0;
            for beta in -(k as isize)..=(k as isize) {
                s += v[wrap(a as isize + beta, m)];
            }
            s / width
        };
        let residual = arch.kind.is_residual();
        let mut next_cov = vec![0.0; m * m];
        let mut next_ntk = vec![0.0; m * m];
        for a in 0..m {
            for ap in 0..m {
                let idx = a * m + ap;
                let c = avg_grid(&block_cov, a, ap);
                let p = avg_grid(&psi, a, ap);
                if residual {
                    next_cov[idx] = cov[idx] + c * inv_l;
                    next_ntk[idx] = ntk[idx] + p;
                } else {
                    next_cov[idx] = c;
                    next_ntk[idx] = p;
                }
            }
        }
        let mut next_varx = vec![0.0; m];
        let mut next_varxp = vec![0.0; m];
        for a in 0..m {
            let vx = avg_vec(&block_varx, a);
            let vxp = avg_vec(&block_varxp, a);
            if residual {
                next_varx[a] = varx[a] + vx * inv_l;
                next_varxp[a] = varxp[a] + vxp * inv_l;
            } else {
                next_varx[a] = vx;
                next_varxp[a] = vxp;
            }
        }
        varx = next_varx;
        varxp = next_varxp;
        cov = next_cov;
        ntk = next_ntk;
        if rescale {
            let big = varx
                .iter()
                .chain(&varxp)
                .chain(ntk.iter())
                .fold(0.0f64, |acc, v| acc.max(v.abs()));
            if big > RESCALE_ABOVE {
                for v in varx.iter_mut().chain(varxp.iter_mut()).chain(cov.iter_mut()).chain(ntk.iter_mut()) {
                    *v /= big;
                }
                log_scale += big.ln();
            }
        }
        push(&mut trace, &mut layers, &varx, &varxp, &cov, qdot, &ntk, log_scale)?;
    }
    trace.grid = Some(ConvGrid { size: m, layers });
    Ok(trace)
}

/// Vanilla CNN kernel.
pub fn ntk_cnn(
    pair: &ConvPair,
    model: &ActivationModel,
    params: InitParams,
    conv: ConvParams,
    depth: usize,
) -> Result<KernelTrace> {
    ntk_conv(Architecture::conv(ArchKind::Cnn, conv)?, pair, model, params, depth)
}

/// Residual CNN kernel; the first layer has no skip connection.
pub fn ntk_resnet_conv(
    pair: &ConvPair,
    model: &ActivationModel,
    params: InitParams,
    conv: ConvParams,
    depth: usize,
) -> Result<KernelTrace> {
    ntk_conv(Architecture::conv(ArchKind::ResnetConv, conv)?, pair, model, params, depth)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_is_circular() {
        assert_eq!(wrap(-1, 5), 4);
        assert_eq!(wrap(5, 5), 0);
        assert_eq!(wrap(-6, 5), 4);
    }

    #[test]
    fn assumption1_rejects_varying_inputs() {
        let x = ConvInput::new(1, 5, vec![1.0, 0.0, 2.0, 0.0, 1.0]).unwrap();
        let pair = ConvPair::new(x.clone(), x).unwrap();
        let conv = ConvParams::new(5, 1, true).unwrap();
        let p = InitParams::relu_eoc();
        assert!(matches!(
            ntk_cnn(&pair, &ActivationModel::relu(), p, conv, 3),
            Err(NtkError::AssumptionViolated(_))
        ));
    }

    #[test]
    fn filter_wider_than_grid_rejected() {
        assert!(ConvParams::new(4, 2, false).is_err());
    }
}
