//! Runtime invariant checks for every module, used by `ntk selftest`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::activations::{covariance_step, relu_f, ActivationKind, ActivationModel, CorrelationMap};
use crate::asymptotics::{fit_rate, geometric_depths, ordered_residuals, residual_sweep, RateModel};
use crate::dataset::{sphere_pairs, two_class_sphere};
use crate::empirical::{gradient_check, sample_net};
use crate::error::{NtkError, Result};
use crate::gaussmath::{expect1, expect2, gauss_hermite, SectorRule};
use crate::kernels::{
    dense_recursion, limiting_kernel, ntk_cnn, ntk_ffnn, ntk_resnet_dense, ArchKind, Architecture, ConvInput,
    ConvPair, ConvParams, FirstLayer, InputPair,
};
use crate::phase::{classify, eoc_curve, InitParams};
use crate::regression::{build_gram, evolve, predict_row, targets_matrix, GramKernel, TrainingState};
use crate::spectral::{
    eigen_trend, legendre_all, reconstruction_error, sphere_rule, uniform_grid, zonal_profile, KernelConfig,
    DEFAULT_K_MAX, DEFAULT_NODES,
};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub module: &'static str,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

type Outcome = Result<(bool, String)>;

fn check(module: &'static str, name: &'static str, f: fn() -> Outcome) -> Check {
    let (passed, detail) = match f() {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e}")),
    };
    Check { module, name, passed, detail }
}

/// Every invariant check, in module order.
pub fn run_all() -> Vec<Check> {
    let suite: [(&'static str, &'static str, fn() -> Outcome); 27] = [
        ("gaussmath", "diagonal_reduces_to_1d", gm_diagonal),
        ("gaussmath", "monotone_in_correlation", gm_monotone),
        ("gaussmath", "symmetric_in_variances", gm_symmetry),
        ("activations", "cauchy_schwarz", act_cauchy_schwarz),
        ("activations", "map_monotone_convex", act_map_shape),
        ("activations", "relu_map_matches_quadrature", act_relu_quadrature),
        ("phase", "chi_increasing_in_sigma_w", phase_chi_monotone),
        ("phase", "ordered_relu_variance_converges", phase_relu_variance),
        ("phase", "relu_eoc_chi_exact", phase_relu_eoc),
        ("kernels", "relu_eoc_average_constant", kern_relu_average),
        ("kernels", "tanh_eoc_average_rate", kern_tanh_average),
        ("kernels", "ordered_geometric_decay", kern_ordered_ratio),
        ("kernels", "pair_swap_symmetry", kern_symmetry),
        ("kernels", "conv_dense_consistency", kern_conv_dense),
        ("kernels", "gram_psd", kern_psd),
        ("asymptotics", "ordered_fits_exponential", asy_ordered),
        ("asymptotics", "eoc_fits_power", asy_eoc),
        ("asymptotics", "scaled_resnet_slower_than_power", asy_scaled),
        ("spectral", "reconstruction_identity", spec_reconstruction),
        ("spectral", "coefficients_nonnegative", spec_nonnegative),
        ("spectral", "legendre_orthogonal", spec_orthogonal),
        ("regression", "eigen_coordinates_contract", reg_contraction),
        ("regression", "predict_matches_evolve", reg_predict_evolve),
        ("regression", "ordered_degeneracy", reg_degeneracy),
        ("empirical", "gradient_finite_differences", emp_gradients),
        ("empirical", "variance_matches_mean_field", emp_variance),
        ("empirical", "one_layer_kernel_exact", emp_one_layer),
    ];
    suite.iter().map(|&(m, n, f)| check(m, n, f)).collect()
}

fn verdict(passed: bool, detail: String) -> Outcome {
    Ok((passed, detail))
}

fn gm_diagonal() -> Outcome {
    let rule = gauss_hermite(64)?;
    let mut worst = 0.0f64;
    for q in [0.1, 0.3, 0.6] {
        let a = expect2(|x: f64| x.tanh(), q, q, 1.0, &rule)?;
        let b = expect1(|x: f64| x.tanh().powi(2), q, &rule)?;
        worst = worst.max((a - b).abs());
    }
    verdict(worst < 1e-10, format!("max diff {worst:e}"))
}

fn gm_monotone() -> Outcome {
    let rule = gauss_hermite(64)?;
    let relu = |x: f64| x.max(0.0);
    let tanh = |x: f64| x.tanh();
    let mut worst = f64::INFINITY;
    for g in [&relu as &dyn Fn(f64) -> f64, &tanh] {
        let vals: Vec<f64> =
            (0..=20).map(|i| expect2(g, 0.5, 0.5, -1.0 + 0.1 * i as f64, &rule)).collect::<Result<_>>()?;
        worst = vals.windows(2).map(|w| w[1] - w[0]).fold(worst, f64::min);
    }
    verdict(worst >= -1e-12, format!("smallest increment {worst:e}"))
}

fn gm_symmetry() -> Outcome {
    let rule = gauss_hermite(64)?;
    let mut worst = 0.0f64;
    for c in [-0.7, 0.1, 0.95] {
        let a = expect2(|x: f64| x.tanh(), 0.3, 0.55, c, &rule)?;
        let b = expect2(|x: f64| x.tanh(), 0.55, 0.3, c, &rule)?;
        let r1 = expect2(|x: f64| x.max(0.0), 0.3, 1.7, c, &rule)?;
        let r2 = expect2(|x: f64| x.max(0.0), 1.7, 0.3, c, &rule)?;
        worst = worst.max((a - b).abs()).max((r1 - r2).abs());
    }
    verdict(worst < 1e-12, format!("max asymmetry {worst:e}"))
}

fn act_cauchy_schwarz() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let params = InitParams::new(0.3, 1.5)?;
    let mut worst = f64::NEG_INFINITY;
    for model in [ActivationModel::relu(), ActivationModel::tanh()] {
        for _ in 0..200 {
            let qx: f64 = rng.random_range(0.01..5.0);
            let qxp: f64 = rng.random_range(0.01..5.0);
            let c: f64 = rng.random_range(-1.0..=1.0);
            let (nx, nxp, ncov) = covariance_step(&model, params, qx, qxp, c * (qx * qxp).sqrt())?;
            worst = worst.max(ncov * ncov - nx * nxp);
        }
    }
    verdict(worst <= 1e-10, format!("max qcov^2 - qx qxp = {worst:e}"))
}

fn map_shape(f: impl Fn(f64) -> Result<f64>) -> Result<(f64, f64)> {
    let vals: Vec<f64> = (0..=100).map(|i| f(i as f64 / 100.0)).collect::<Result<_>>()?;
    let inc = vals.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    let curv = vals.windows(3).map(|w| w[2] - 2.0 * w[1] + w[0]).fold(f64::INFINITY, f64::min);
    Ok((inc, curv))
}

fn act_map_shape() -> Outcome {
    let (ri, rc) = map_shape(|c| Ok(relu_f(c)))?;
    let tanh = ActivationModel::tanh();
    let params = InitParams::new(0.2, eoc_curve(&tanh, 0.2)?)?;
    let q = classify(&tanh, params)?.q_fixed;
    let map = CorrelationMap::new(tanh, q, params)?;
    let (ti, tc) = map_shape(|c| map.f(c))?;
    let ok = ri >= 0.0 && ti >= 0.0 && rc >= -1e-12 && tc >= -1e-12;
    verdict(ok, format!("relu (min step {ri:e}, min curvature {rc:e}); tanh ({ti:e}, {tc:e})"))
}

fn act_relu_quadrature() -> Outcome {
    let rule = SectorRule::new(64, 64)?;
    let relu = |x: f64| x.max(0.0);
    let mut worst = 0.0f64;
    for i in 0..=20 {
        let c = -1.0 + 0.1 * i as f64;
        let quad = 2.0 * rule.expect2_pair(relu, relu, 1.0, 1.0, c)?;
        worst = worst.max((quad - relu_f(c)).abs());
    }
    verdict(worst < 1e-8, format!("max diff {worst:e}"))
}

fn phase_chi_monotone() -> Outcome {
    let mut detail = String::new();
    let mut ok = true;
    for (model, sb) in [(ActivationModel::relu(), 0.3), (ActivationModel::tanh(), 0.2)] {
        let chis: Vec<f64> = (0..15)
            .map(|i| classify(&model, InitParams::new(sb, 0.5 + 0.25 * i as f64)?).map(|r| r.chi))
            .collect::<Result<_>>()
            .or_else(|e| match e {
                // chaotic relu has no variance fixed point; chi is sigma_w^2 / 2 there
                NtkError::Divergence(_) => Ok((0..15).map(|i| (0.5 + 0.25 * i as f64).powi(2) / 2.0).collect()),
                e => Err(e),
            })?;
        let step = chis.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
        ok &= step > 0.0;
        detail += &format!("{}: min step {step:e}; ", model.kind());
    }
    verdict(ok, detail)
}

fn phase_relu_variance() -> Outcome {
    let model = ActivationModel::relu();
    let params = InitParams::new(0.5, 1.8f64.sqrt())?;
    let target = classify(&model, params)?.q_fixed;
    let mut worst_err = 0.0f64;
    let mut worst_ratio = 0.0f64;
    for q0 in [1e-3, 1.0, 1e3] {
        let mut q = q0;
        let mut prev = (q - target).abs();
        for _ in 0..5000 {
            q = model.variance_map(params, q)?;
            let err = (q - target).abs();
            if prev > 1e-12 {
                worst_ratio = worst_ratio.max(err / prev);
            }
            prev = err;
        }
        worst_err = worst_err.max(prev);
    }
    verdict(worst_err < 1e-9 && worst_ratio < 1.0, format!("final error {worst_err:e}, max ratio {worst_ratio}"))
}

fn phase_relu_eoc() -> Outcome {
    let chi = classify(&ActivationModel::relu(), InitParams::new(0.0, 2f64.sqrt())?)?.chi;
    verdict(chi == 1.0, format!("chi = {chi}"))
}

fn kern_relu_average() -> Outcome {
    let pair = InputPair::diagonal(vec![0.3, -1.2, 0.8])?;
    let t = ntk_ffnn(&pair, &ActivationModel::relu(), InitParams::relu_eoc(), 1000)?;
    let avg: Vec<f64> = (1..=1000).map(|l| t.ntk_at(l) / l as f64).collect();
    let spread = avg.iter().map(|a| (a - avg[0]).abs()).fold(0.0, f64::max) / avg[0];
    verdict(spread < 1e-12, format!("relative spread {spread:e}"))
}

fn kern_tanh_average() -> Outcome {
    let model = ActivationModel::tanh();
    let params = InitParams::new(0.2, eoc_curve(&model, 0.2)?)?;
    let pair = InputPair::diagonal(vec![1.0, -0.5, 0.7])?;
    let depths = log_spaced(32, 2048, 8);
    let t = ntk_ffnn(&pair, &model, params, 2048)?;
    let limit = limiting_kernel(Architecture::dense(ArchKind::Ffnn)?, &model, params, &pair)?;
    let res: Vec<f64> = depths.iter().map(|&l| (t.ntk_at(l) / l as f64 - limit).abs()).collect();
    let fit = fit_rate(&depths, &res, RateModel::Power)?;
    let p = -fit.exponent;
    verdict((0.8..=1.2).contains(&p), format!("exponent {p}, r2 {}", fit.r_squared))
}

/// `count` integer depths spaced geometrically on `[lo, hi]`.
pub fn log_spaced(lo: usize, hi: usize, count: usize) -> Vec<usize> {
    let (a, b) = ((lo as f64).ln(), (hi as f64).ln());
    (0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp().round() as usize)
        .collect()
}

fn kern_ordered_ratio() -> Outcome {
    let model = ActivationModel::relu();
    let params = InitParams::new(0.5, 1.8f64.sqrt())?;
    let pair = &sphere_pairs(5, 1, 1)?[0];
    let r = ordered_residuals(&model, params, pair.first_layer(params), 1000)?;
    let ratios: Vec<f64> = r[899..].windows(2).map(|w| w[1].abs() / w[0].abs()).collect();
    let hi = ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    verdict(hi < 1.0 && hi - lo < 1e-3, format!("ratios in [{lo}, {hi}]"))
}

fn kern_symmetry() -> Outcome {
    let pair = InputPair::new(vec![0.4, -1.0, 0.3], vec![1.1, 0.2, -0.6])?;
    let params = InitParams::new(0.3, 1.4)?;
    let mut ok = true;
    for model in [ActivationModel::relu(), ActivationModel::tanh()] {
        let a = ntk_ffnn(&pair, &model, params, 50)?;
        let b = ntk_ffnn(&pair.swapped(), &model, params, 50)?;
        ok &= a.ntk == b.ntk;
        let a = ntk_resnet_dense(&pair, &model, params, 50)?;
        let b = ntk_resnet_dense(&pair.swapped(), &model, params, 50)?;
        ok &= a.ntk == b.ntk && a.log_scale == b.log_scale;
    }
    verdict(ok, format!("bitwise equal: {ok}"))
}

/// Largest `|K_cnn(l; a, a') - K_ffnn(l)|` over the full grid and all layers
/// for translation-invariant inputs evaluated without the `assumption1` shortcut.
pub fn conv_dense_gap(model: &ActivationModel, params: InitParams, size: usize, half_width: usize, depth: usize) -> Result<f64> {
    let x = ConvInput::constant(&[0.9, -0.4, 1.3], size)?;
    let xp = ConvInput::constant(&[0.2, 1.1, -0.7], size)?;
    let pair = ConvPair::new(x, xp)?;
    let conv = ConvParams::new(size, half_width, false)?;
    let trace = ntk_cnn(&pair, model, params, conv, depth)?;
    let grid = trace
        .grid
        .as_ref()
        .ok_or_else(|| NtkError::Numeric("full-grid trace carries no grid".into()))?;
    let (gxx, gpp, gxp) = crate::kernels::conv_first_layer(&pair, params, half_width);
    let first = FirstLayer { qx: gxx[0], qxp: gpp[0], qcov: gxp[0], diagonal: false };
    let dense = dense_recursion(Architecture::dense(ArchKind::Ffnn)?, model, params, first, depth)?;
    let mut worst = 0.0f64;
    for l in 1..=depth {
        let k = dense.ntk_at(l);
        for a in 0..size {
            for ap in 0..size {
                worst = worst.max((grid.ntk(l, a, ap) - k).abs());
            }
        }
    }
    Ok(worst)
}

fn kern_conv_dense() -> Outcome {
    let relu = conv_dense_gap(&ActivationModel::relu(), InitParams::relu_eoc(), 5, 1, 50)?;
    let tanh = ActivationModel::tanh();
    let p = InitParams::new(0.2, eoc_curve(&tanh, 0.2)?)?;
    let t = conv_dense_gap(&tanh, p, 5, 1, 50)?;
    verdict(relu.max(t) < 1e-10, format!("relu {relu:e}, tanh {t:e}"))
}

fn kern_psd() -> Outcome {
    let ds = two_class_sphere(5, 10, 4)?;
    let mut worst = f64::INFINITY;
    for (act, p) in [
        (ActivationKind::Relu, InitParams::relu_eoc()),
        (ActivationKind::Relu, InitParams::new(0.5, 1.8f64.sqrt())?),
        (ActivationKind::Tanh, InitParams::new(0.3, 1.6)?),
    ] {
        let cfg = KernelConfig::new(ArchKind::Ffnn, act, p)?.raw();
        let st = build_gram(&ds, &GramKernel::new(cfg, 10)?)?;
        worst = worst.min(st.min_eig / st.max_eig);
    }
    verdict(worst >= -1e-8, format!("min eig / max eig >= {worst:e}"))
}

fn relu_ordered() -> Result<InitParams> {
    InitParams::new(0.5, 1.8f64.sqrt())
}

fn asy_ordered() -> Outcome {
    let pairs = sphere_pairs(5, 10, 1)?;
    let depths = geometric_depths(32, 9);
    let sweep = residual_sweep(Architecture::dense(ArchKind::Ffnn)?, &ActivationModel::relu(), relu_ordered()?, &pairs, &depths)?;
    let exp = fit_rate(&depths, &sweep.residuals, RateModel::Exp)?;
    let pow = fit_rate(&depths, &sweep.residuals, RateModel::Power)?;
    verdict(
        exp.r_squared > 0.99 && pow.r_squared < exp.r_squared,
        format!("exp r2 {}, power r2 {}", exp.r_squared, pow.r_squared),
    )
}

fn asy_eoc() -> Outcome {
    let pairs = sphere_pairs(5, 10, 1)?;
    let arch = Architecture::dense(ArchKind::Ffnn)?;
    let model = ActivationModel::relu();
    let long = geometric_depths(32, 9);
    let short = log_spaced(32, 1024, 8);
    let sl = residual_sweep(arch, &model, InitParams::relu_eoc(), &pairs, &long)?;
    let ss = residual_sweep(arch, &model, InitParams::relu_eoc(), &pairs, &short)?;
    let pow = fit_rate(&long, &sl.residuals, RateModel::Power)?;
    let g_long = fit_rate(&long, &sl.residuals, RateModel::Exp)?.exponent;
    let g_short = fit_rate(&short, &ss.residuals, RateModel::Exp)?.exponent;
    verdict(
        pow.r_squared > 0.99 && g_long < g_short,
        format!("power r2 {}, gamma(8192) {g_long:e}, gamma(1024) {g_short:e}", pow.r_squared),
    )
}

fn asy_scaled() -> Outcome {
    let pairs = sphere_pairs(5, 10, 1)?;
    let depths = log_spaced(100, 10_000, 8);
    let sweep = residual_sweep(
        Architecture::dense(ArchKind::ScaledResnetDense)?,
        &ActivationModel::relu(),
        InitParams::relu_eoc(),
        &pairs,
        &depths,
    )?;
    let fit = fit_rate(&depths, &sweep.residuals, RateModel::Power)?;
    verdict(fit.exponent > -0.2, format!("fitted exponent {}", fit.exponent))
}

/// Phase points and depths whose profiles the spectral checks decompose.
fn spectral_panel() -> Result<Vec<(KernelConfig, usize)>> {
    let tanh = ActivationModel::tanh();
    let tanh_eoc = InitParams::new(0.2, eoc_curve(&tanh, 0.2)?)?;
    let relu_o = KernelConfig::new(ArchKind::Ffnn, ActivationKind::Relu, relu_ordered()?)?;
    let relu_e = KernelConfig::new(ArchKind::Ffnn, ActivationKind::Relu, InitParams::relu_eoc())?;
    let tanh_e = KernelConfig::new(ArchKind::Ffnn, ActivationKind::Tanh, tanh_eoc)?;
    let mut panel = Vec::new();
    for cfg in [relu_o, relu_e, tanh_e] {
        for l in [3, 30, 300] {
            panel.push((cfg.clone(), l));
        }
    }
    Ok(panel)
}

fn spec_reconstruction() -> Outcome {
    let grid = uniform_grid(0.99, 397);
    let mut ok = true;
    let mut detail = String::new();
    for (cfg, l) in spectral_panel()? {
        let dec = eigen_trend(&cfg, 3, &[l], DEFAULT_K_MAX, DEFAULT_NODES)?.remove(0);
        let err = reconstruction_error(&dec, &grid, &zonal_profile(&cfg, 3, l, &grid)?)?;
        if err >= 1e-6 {
            ok = false;
            detail += &format!("{} L={l}: {err:e}; ", cfg.id());
        }
    }
    if ok {
        detail = "all profiles within 1e-6".into();
    }
    verdict(ok, detail)
}

fn spec_nonnegative() -> Outcome {
    let mut worst = f64::INFINITY;
    for (cfg, l) in spectral_panel()? {
        let dec = eigen_trend(&cfg, 3, &[l], DEFAULT_K_MAX, DEFAULT_NODES)?.remove(0);
        let m = dec.mu.iter().cloned().fold(f64::INFINITY, f64::min) / dec.mu[0];
        worst = worst.min(m);
    }
    verdict(worst >= -1e-8, format!("min mu_k / mu_0 = {worst:e}"))
}

fn spec_orthogonal() -> Outcome {
    let mut worst = 0.0f64;
    for d in [3, 5, 10] {
        let rule = sphere_rule(d, DEFAULT_NODES)?;
        let polys: Vec<Vec<f64>> = rule.nodes().iter().map(|&t| legendre_all(d, 20, t)).collect::<Result<_>>()?;
        let gram = |j: usize, k: usize| -> f64 { rule.weights().iter().zip(&polys).map(|(w, p)| w * p[j] * p[k]).sum() };
        for j in 0..=20 {
            for k in 0..j {
                worst = worst.max(gram(j, k).abs() / (gram(j, j) * gram(k, k)).sqrt());
            }
        }
    }
    verdict(worst < 1e-10, format!("max normalized off-diagonal {worst:e}"))
}

fn small_problem() -> Result<(TrainingState, DMatrix<f64>, crate::dataset::Dataset, GramKernel)> {
    let ds = two_class_sphere(6, 24, 2)?;
    let cfg = KernelConfig::new(ArchKind::Ffnn, ActivationKind::Relu, InitParams::relu_eoc())?.raw();
    let kernel = GramKernel::new(cfg, 3)?;
    let st = build_gram(&ds, &kernel)?;
    let z = targets_matrix(&ds);
    Ok((st, z, ds, kernel))
}

fn reg_contraction() -> Outcome {
    let (st, z, _, _) = small_problem()?;
    let mut prev: Option<DMatrix<f64>> = None;
    let mut ok = true;
    for t in [0.0, 0.1, 1.0, 10.0, 100.0, f64::INFINITY] {
        let coords = st.eigenvectors.transpose() * (evolve(&st, &z, t)? - &z);
        if let Some(p) = &prev {
            ok &= coords.iter().zip(p.iter()).all(|(c, q)| c.abs() <= q.abs() + 1e-12);
        }
        prev = Some(coords);
    }
    verdict(ok, format!("monotone eigen-coordinate errors: {ok}"))
}

fn reg_predict_evolve() -> Outcome {
    let (st, z, ds, kernel) = small_problem()?;
    let mut worst = 0.0f64;
    for t in [0.5, 5.0, f64::INFINITY] {
        let f = evolve(&st, &z, t)?;
        for (i, x) in ds.inputs().iter().enumerate() {
            let row = kernel.row(ds.inputs(), x)?;
            let p = predict_row(&st, &z, &row, t, None, false)?;
            for (k, v) in p.iter().enumerate() {
                worst = worst.max((v - f[(i, k)]).abs());
            }
        }
    }
    verdict(worst < 1e-8, format!("max diff {worst:e}"))
}

fn reg_degeneracy() -> Outcome {
    let ds = two_class_sphere(10, 30, 5)?;
    // chi = 1/2, so the decay length sits below the first decade
    let cfg = KernelConfig::new(ArchKind::Ffnn, ActivationKind::Relu, InitParams::new(1.0, 1.0)?)?.raw();
    let ratios: Vec<f64> = [3, 30, 300]
        .iter()
        .map(|&l| Ok(build_gram(&ds, &GramKernel::new(cfg.clone(), l)?)?.condition_ratio()))
        .collect::<Result<_>>()?;
    let ok = ratios.windows(2).all(|w| w[1] <= w[0] / 10.0);
    verdict(ok, format!("min/max eig at L=3,30,300: {ratios:?}"))
}

fn emp_gradients() -> Outcome {
    let x = [0.7, -0.2, 0.4];
    let p = InitParams::new(0.2, 1.4)?;
    let mut worst = 0.0f64;
    for arch in [ArchKind::Ffnn, ArchKind::ResnetDense] {
        for act in [ActivationKind::Relu, ActivationKind::Tanh] {
            let widths = if arch == ArchKind::Ffnn { vec![5, 4, 1] } else { vec![5, 5, 5] };
            let net = sample_net(arch, act, p, 3, &widths, 17)?;
            worst = worst.max(gradient_check(&net, &x)?);
        }
    }
    verdict(worst < 1e-5, format!("max relative error {worst:e}"))
}

fn emp_variance() -> Outcome {
    let x = [0.8, -0.3, 0.5, 1.0];
    let seeds = 30;
    let width = 1024;
    let mut ok = true;
    let mut detail = String::new();
    for (act, p) in [(ActivationKind::Relu, InitParams::relu_eoc()), (ActivationKind::Tanh, InitParams::new(0.2, 1.3)?)] {
        let model = ActivationModel::from_kind(act);
        let trace = ntk_ffnn(&InputPair::diagonal(x.to_vec())?, &model, p, 3)?;
        let per_seed: Vec<Vec<f64>> = (0..seeds)
            .map(|s| {
                let net = sample_net(ArchKind::Ffnn, act, p, x.len(), &[width; 3], 1000 + s)?;
                Ok(net
                    .preactivations(&x)?
                    .iter()
                    .map(|y| y.iter().map(|v| v * v).sum::<f64>() / y.len() as f64)
                    .collect())
            })
            .collect::<Result<_>>()?;
        for l in 0..3 {
            let v: Vec<f64> = per_seed.iter().map(|s| s[l]).collect();
            let m = v.iter().sum::<f64>() / seeds as f64;
            let sd = (v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (seeds as f64 - 1.0)).sqrt();
            let se = sd / (seeds as f64).sqrt();
            let z = (m - trace.qx[l]).abs() / se;
            ok &= z <= 3.0;
            detail += &format!("{act} l={}: {z:.2} SE; ", l + 1);
        }
    }
    verdict(ok, detail)
}

fn emp_one_layer() -> Outcome {
    let p = InitParams::new(0.4, 1.3)?;
    let x = [1.0, 2.0, -0.5];
    let xp = [0.3, -0.1, 0.8];
    let dot: f64 = x.iter().zip(&xp).map(|(a, b)| a * b).sum();
    let expect = 1.69 * dot / 3.0 + 0.16;
    let mut worst = 0.0f64;
    for w in [1, 7, 64] {
        let net = sample_net(ArchKind::Ffnn, ActivationKind::Tanh, p, 3, &[w], 3)?;
        let k = crate::empirical::empirical_ntk(&net, &x, &xp)?;
        worst = worst.max((k - expect).abs());
    }
    verdict(worst < 1e-13, format!("max diff {worst:e}"))
}
