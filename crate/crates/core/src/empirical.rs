//! Finite-width networks sampled under the NTK parameterization and their
//! exact tangent kernels.
//!
//! Layer `l` computes `y^l = s_l W^l h^{l-1} + sigma_b b^l` with
//! `s_l = sigma_w / sqrt(n_{l-1})`, `h^0 = x` and `h^l = phi(y^l)`. Residual
//! networks add `y^{l-1}` for `l >= 2`. The network output is `y^L_1`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::activations::{ActivationKind, ActivationModel};
use crate::asymptotics::{fit_rate, RateModel};
use crate::error::{NtkError, Result};
use crate::kernels::{dense_recursion, ArchKind, Architecture, InputPair};
use crate::phase::InitParams;

pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
struct Layer {
    /// Row-major `n_out x n_in`.
    w: Vec<f64>,
    b: Vec<f64>,
    n_in: usize,
    n_out: usize,
}

impl Layer {
    fn n_params(&self) -> usize {
        self.w.len() + self.b.len()
    }
}

/// A sampled network with scalar readout.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteNet {
    pub arch: ArchKind,
    pub activation: ActivationKind,
    pub params: InitParams,
    pub seed: u64,
    layers: Vec<Layer>,
}

/// Per-input forward quantities needed by the backward pass.
struct Pass {
    /// `h^{l-1}` for each layer `l`.
    inputs: Vec<Vec<f64>>,
    /// `y^l` for each layer.
    pre: Vec<Vec<f64>>,
}

/// Widths `[width; depth - 1]` followed by a single output unit.
pub fn uniform_widths(width: usize, depth: usize) -> Vec<usize> {
    let mut w = vec![width; depth.saturating_sub(1)];
    w.push(1);
    w
}

/// Draws every weight and bias i.i.d. standard normal from a ChaCha8 stream.
pub fn sample_net(
    arch: ArchKind,
    activation: ActivationKind,
    params: InitParams,
    d: usize,
    widths: &[usize],
    seed: u64,
) -> Result<FiniteNet> {
    if !matches!(arch, ArchKind::Ffnn | ArchKind::ResnetDense) {
        return Err(NtkError::Unsupported(format!("finite networks are dense ffnn or resnet only, got {arch}")));
    }
    if d == 0 || widths.is_empty() || widths.contains(&0) {
        return Err(NtkError::InvalidArgument("input dimension and widths must be positive".into()));
    }
    if arch == ArchKind::ResnetDense && widths.windows(2).any(|w| w[1] != w[0]) {
        return Err(NtkError::InvalidArgument("residual layers need equal widths".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut n_in = d;
    let mut layers = Vec::with_capacity(widths.len());
    for &n_out in widths {
        let w = (0..n_out * n_in).map(|_| StandardNormal.sample(&mut rng)).collect();
        let b = (0..n_out).map(|_| StandardNormal.sample(&mut rng)).collect();
        layers.push(Layer { w, b, n_in, n_out });
        n_in = n_out;
    }
    Ok(FiniteNet { arch, activation, params, seed, layers })
}

impl FiniteNet {
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(Layer::n_params).sum()
    }

    fn scale(&self, layer: &Layer) -> f64 {
        self.params.sigma_w / (layer.n_in as f64).sqrt()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(NtkError::InvalidArgument(format!(
                "input has dimension {}, network expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Pre-activations `y^l` of every layer.
    pub fn preactivations(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_input(x)?;
        Ok(self.forward(x).pre)
    }

    pub fn output(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        Ok(self.forward(x).pre.last().unwrap()[0])
    }

    fn forward(&self, x: &[f64]) -> Pass {
        let model = self.activation;
        let residual = self.arch == ArchKind::ResnetDense;
        let mut inputs = Vec::with_capacity(self.depth());
        let mut pre: Vec<Vec<f64>> = Vec::with_capacity(self.depth());
        let mut h = x.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let s = self.scale(layer);
            let y: Vec<f64> = (0..layer.n_out)
                .map(|i| {
                    let row = &layer.w[i * layer.n_in..(i + 1) * layer.n_in];
                    let dot: f64 = row.iter().zip(&h).map(|(w, v)| w * v).sum();
                    let skip = if residual && l > 0 { pre[l - 1][i] } else { 0.0 };
                    skip + s * dot + self.params.sigma_b * layer.b[i]
                })
                .collect();
            let next = y.iter().map(|&v| model.phi(v)).collect();
            inputs.push(std::mem::replace(&mut h, next));
            pre.push(y);
        }
        Pass { inputs, pre }
    }

    /// `df / dy^l` for each layer.
    fn backward(&self, pass: &Pass) -> Vec<Vec<f64>> {
        let model = self.activation;
        let residual = self.arch == ArchKind::ResnetDense;
        let depth = self.depth();
        let mut deltas = vec![Vec::new(); depth];
        let mut delta = vec![0.0; self.layers[depth - 1].n_out];
        delta[0] = 1.0;
        for l in (0..depth).rev() {
            let layer = &self.layers[l];
            if l > 0 {
                let s = self.scale(layer);
                let mut prev = vec![0.0; layer.n_in];
                for (row, &di) in layer.w.chunks_exact(layer.n_in).zip(&delta) {
                    if di != 0.0 {
                        prev.iter_mut().zip(row).for_each(|(p, w)| *p += w * di);
                    }
                }
                prev.iter_mut().zip(&pass.pre[l - 1]).for_each(|(p, &y)| *p *= s * model.dphi(y));
                if residual {
                    prev.iter_mut().zip(&delta).for_each(|(p, d)| *p += d);
                }
                deltas[l] = std::mem::replace(&mut delta, prev);
            } else {
                deltas[0] = std::mem::take(&mut delta);
            }
        }
        deltas
    }

    /// Gradient of the output in `parameters()` order.
    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let pass = self.forward(x);
        let deltas = self.backward(&pass);
        let mut g = Vec::with_capacity(self.n_params());
        for (l, layer) in self.layers.iter().enumerate() {
            let s = self.scale(layer);
            for &di in &deltas[l] {
                g.extend(pass.inputs[l].iter().map(|h| s * di * h));
            }
            g.extend(deltas[l].iter().map(|di| self.params.sigma_b * di));
        }
        Ok(g)
    }

    /// Weights then biases of each layer, first layer first.
    pub fn parameters(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.w.iter().chain(&l.b).copied()).collect()
    }

    pub fn set_parameters(&mut self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.n_params() {
            return Err(NtkError::InvalidArgument(format!(
                "expected {} parameters, got {}",
                self.n_params(),
                theta.len()
            )));
        }
        let mut it = theta.iter().copied();
        for layer in &mut self.layers {
            layer.w.iter_mut().chain(layer.b.iter_mut()).for_each(|v| *v = it.next().unwrap());
        }
        Ok(())
    }
}

/// Tangent kernel `grad f(x) . grad f(x')` via layerwise factorization.
pub fn empirical_ntk(net: &FiniteNet, x: &[f64], xp: &[f64]) -> Result<f64> {
    net.check_input(x)?;
    net.check_input(xp)?;
    let (pa, pb) = (net.forward(x), net.forward(xp));
    let (da, db) = (net.backward(&pa), net.backward(&pb));
    let dot = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    let sb2 = net.params.sigma_b * net.params.sigma_b;
    Ok(net
        .layers
        .iter()
        .enumerate()
        .map(|(l, layer)| {
            let s = net.scale(layer);
            let dd = dot(&da[l], &db[l]);
            s * s * dd * dot(&pa.inputs[l], &pb.inputs[l]) + sb2 * dd
        })
        .sum())
}

/// Central-difference gradient with step `h`.
pub fn finite_difference_gradient(net: &FiniteNet, x: &[f64], h: f64) -> Result<Vec<f64>> {
    let theta = net.parameters();
    let mut probe = net.clone();
    let mut g = Vec::with_capacity(theta.len());
    let mut work = theta.clone();
    for i in 0..theta.len() {
        work[i] = theta[i] + h;
        probe.set_parameters(&work)?;
        let up = probe.output(x)?;
        work[i] = theta[i] - h;
        probe.set_parameters(&work)?;
        let down = probe.output(x)?;
        work[i] = theta[i];
        g.push((up - down) / (2.0 * h));
    }
    Ok(g)
}

/// `||g_fd - g|| / ||g||` for backprop against central differences.
pub fn gradient_check(net: &FiniteNet, x: &[f64]) -> Result<f64> {
    let g = net.gradient(x)?;
    let fd = finite_difference_gradient(net, x, FD_STEP)?;
    let num: f64 = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let den: f64 = g.iter().map(|a| a * a).sum::<f64>().sqrt();
    Ok(if den == 0.0 { num } else { num / den })
}

/// Infinite-width kernel of the same architecture at the net's depth.
pub fn mean_field_ntk(
    arch: ArchKind,
    activation: ActivationKind,
    params: InitParams,
    pair: &InputPair,
    depth: usize,
) -> Result<f64> {
    let model = ActivationModel::from_kind(activation);
    let trace = dense_recursion(Architecture::dense(arch)?, &model, params, pair.first_layer(params), depth)?;
    Ok(trace.ntk_at(depth))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WidthRow {
    pub width: usize,
    pub mean_k: f64,
    pub std_k: f64,
    pub meanfield_k: f64,
    /// `|mean_k - meanfield_k| / meanfield_k`.
    pub rel_err: f64,
    /// Seed-average of `|K - meanfield_k|`.
    pub mean_abs_dev: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WidthStudy {
    pub rows: Vec<WidthRow>,
    /// Slope of log mean absolute deviation against log width.
    pub slope: Option<f64>,
}

/// Empirical kernels of `seeds` nets per width; seed `s` of width `n` uses
/// stream `seed_base + s`. Hidden layers have width `n`, the readout width 1
/// (all of width `n` for residual networks).
#[allow(clippy::too_many_arguments)]
pub fn width_convergence_study(
    arch: ArchKind,
    activation: ActivationKind,
    params: InitParams,
    pair: &InputPair,
    depth: usize,
    widths: &[usize],
    seeds: usize,
    seed_base: u64,
) -> Result<WidthStudy> {
    if widths.is_empty() || seeds == 0 || depth == 0 {
        return Err(NtkError::InvalidArgument("need widths, seeds and a positive depth".into()));
    }
    let meanfield = mean_field_ntk(arch, activation, params, pair, depth)?;
    let mut rows = Vec::with_capacity(widths.len());
    for &n in widths {
        let layout = match arch {
            ArchKind::ResnetDense => vec![n; depth],
            _ => uniform_widths(n, depth),
        };
        let ks: Vec<f64> = (0..seeds as u64)
            .into_par_iter()
            .map(|s| {
                let net = sample_net(arch, activation, params, pair.dim(), &layout, seed_base + s)?;
                empirical_ntk(&net, &pair.x, &pair.xp)
            })
            .collect::<Result<_>>()?;
        let m = seeds as f64;
        let mean = ks.iter().sum::<f64>() / m;
        let var = if seeds > 1 { ks.iter().map(|k| (k - mean).powi(2)).sum::<f64>() / (m - 1.0) } else { 0.0 };
        rows.push(WidthRow {
            width: n,
            mean_k: mean,
            std_k: var.sqrt(),
            meanfield_k: meanfield,
            rel_err: (mean - meanfield).abs() / meanfield.abs(),
            mean_abs_dev: ks.iter().map(|k| (k - meanfield).abs()).sum::<f64>() / m,
        });
    }
    let slope = if rows.len() >= 2 {
        let ns: Vec<usize> = rows.iter().map(|r| r.width).collect();
        let devs: Vec<f64> = rows.iter().map(|r| r.mean_abs_dev).collect();
        slope_fit(&ns, &devs)
    } else {
        None
    };
    Ok(WidthStudy { rows, slope })
}

fn slope_fit(widths: &[usize], devs: &[f64]) -> Option<f64> {
    if widths.len() >= crate::asymptotics::MIN_FIT_POINTS {
        return fit_rate(widths, devs, RateModel::Power).ok().map(|f| f.exponent);
    }
    // short width lists: plain least squares on the logs
    let xs: Vec<f64> = widths.iter().map(|&w| (w as f64).ln()).collect();
    let ys: Vec<f64> = devs.iter().map(|d| d.max(f64::MIN_POSITIVE).ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn single_unit_is_linear() {
        let p = InitParams::new(0.3, 1.7).unwrap();
        let net = sample_net(ArchKind::Ffnn, ActivationKind::Tanh, p, 3, &[1], 5).unwrap();
        let x = [0.2, -1.0, 0.7];
        let theta = net.parameters();
        let expect = 1.7 * (theta[0] * x[0] + theta[1] * x[1] + theta[2] * x[2]) / 3f64.sqrt() + 0.3 * theta[3];
        assert_relative_eq!(net.output(&x).unwrap(), expect, max_relative = 1e-14);
    }

    #[test]
    fn one_layer_kernel_exact() {
        let p = InitParams::new(0.4, 1.3).unwrap();
        let x = [1.0, 2.0, -0.5];
        let xp = [0.3, -0.1, 0.8];
        let net = sample_net(ArchKind::Ffnn, ActivationKind::Relu, p, 3, &[1], 11).unwrap();
        let dot: f64 = x.iter().zip(&xp).map(|(a, b)| a * b).sum();
        let expect = 1.3 * 1.3 * dot / 3.0 + 0.16;
        assert_relative_eq!(empirical_ntk(&net, &x, &xp).unwrap(), expect, max_relative = 1e-14);
    }

    #[test]
    fn deterministic_under_seed() {
        let p = InitParams::relu_eoc();
        let a = sample_net(ArchKind::Ffnn, ActivationKind::Relu, p, 4, &[8, 8, 1], 42).unwrap();
        let b = sample_net(ArchKind::Ffnn, ActivationKind::Relu, p, 4, &[8, 8, 1], 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gradients_match_differences() {
        let x = [0.5, -0.3, 0.9];
        for arch in [ArchKind::Ffnn, ArchKind::ResnetDense] {
            for act in [ActivationKind::Relu, ActivationKind::Tanh] {
                let p = InitParams::new(0.2, 1.4).unwrap();
                let widths = if arch == ArchKind::Ffnn { vec![5, 4, 1] } else { vec![5, 5, 5] };
                let net = sample_net(arch, act, p, 3, &widths, 3).unwrap();
                assert!(net.n_params() <= 100);
                let err = gradient_check(&net, &x).unwrap();
                assert!(err < 1e-5, "{arch} {act}: {err}");
            }
        }
    }

    #[test]
    fn kernel_equals_gradient_product() {
        let p = InitParams::new(0.1, 1.2).unwrap();
        let net = sample_net(ArchKind::ResnetDense, ActivationKind::Tanh, p, 3, &[6, 6, 6], 9).unwrap();
        let x = [0.1, 0.4, -0.2];
        let xp = [-0.7, 0.2, 0.3];
        let ga = net.gradient(&x).unwrap();
        let gb = net.gradient(&xp).unwrap();
        let direct: f64 = ga.iter().zip(&gb).map(|(a, b)| a * b).sum();
        assert_relative_eq!(empirical_ntk(&net, &x, &xp).unwrap(), direct, max_relative = 1e-12);
    }
}
