//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs every criterion even when an earlier one fails, then exits nonzero if
//! any failed. Arguments filter by criterion id (`c1`, `c5`, ...).

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use ntk_core::activations::{ActivationKind, ActivationModel, CorrelationMap};
use ntk_core::asymptotics::{check_expansion, fit_rate, geometric_depths, residual_sweep, RateModel, RELU_S};
use ntk_core::dataset::{sphere_pairs, two_class_sphere};
use ntk_core::empirical::{gradient_check, sample_net, width_convergence_study};
use ntk_core::kernels::{dense_recursion, ArchKind, Architecture, InputPair};
use ntk_core::phase::{classify, eoc_curve, InitParams};
use ntk_core::regression::{accuracy, build_gram, evolve, targets_matrix, GramKernel};
use ntk_core::selftest::{conv_dense_gap, log_spaced, run_all};
use ntk_core::spectral::{eigen_trend, reconstruction_error, uniform_grid, zonal_profile, KernelConfig};
use ntk_core::Result;

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: String) -> Result<Verdict> {
    Ok(Verdict { passed, detail })
}

fn tanh_eoc() -> Result<InitParams> {
    InitParams::new(0.2, eoc_curve(&ActivationModel::tanh(), 0.2)?)
}

fn relu_ordered() -> Result<InitParams> {
    InitParams::new(0.5, 1.8f64.sqrt())
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

fn c1() -> Result<Verdict> {
    let t0 = Instant::now();
    let r = check_expansion(ArchKind::Ffnn, &ActivationModel::relu(), InitParams::relu_eoc(), 0.5, &[20_000])?;
    let el = t0.elapsed();
    let err = (r.points[0].empirical / (9.0 * PI * PI / 2.0) - 1.0).abs();
    verdict(err < 0.05 && within(el, 1.0), format!("l^2(1-c^l)/kappa - 1 = {err:.4e} at l=2e4, {el:.2?}"))
}

fn c2() -> Result<Verdict> {
    let t0 = Instant::now();
    let model = ActivationModel::tanh();
    let p = tanh_eoc()?;
    let q = classify(&model, p)?.q_fixed;
    let f2 = CorrelationMap::new(model.clone(), q, p)?.deriv(1.0, 2)?;
    let r = check_expansion(ArchKind::Ffnn, &model, p, 0.5, &[100_000])?;
    let el = t0.elapsed();
    let err = (r.points[0].empirical * f2 / 2.0 - 1.0).abs();
    verdict(
        err < 0.05 && within(el, 120.0),
        format!("sigma_w={:.6}, f''(1)={f2:.6}, rel err {err:.4e} at l=1e5, {el:.2?}", p.sigma_w),
    )
}

fn c3() -> Result<Verdict> {
    let sw = 2f64.sqrt();
    let r = check_expansion(ArchKind::ResnetDense, &ActivationModel::relu(), InitParams::new(0.0, sw)?, 0.5, &[20_000])?;
    let kappa = 9.0 * PI * PI / 2.0 * (1.0 + 2.0 / (sw * sw)).powi(2);
    let err = (r.points[0].empirical / kappa - 1.0).abs();
    verdict(err < 0.05, format!("rel err {err:.4e} at l=2e4"))
}

fn c4() -> Result<Verdict> {
    let t0 = Instant::now();
    let sw = 2f64.sqrt();
    let r = check_expansion(ArchKind::ScaledResnetDense, &ActivationModel::relu(), InitParams::new(0.0, sw)?, 0.5, &[1_000_000])?;
    let el = t0.elapsed();
    let zeta = 16.0 / (RELU_S * RELU_S * sw.powi(4));
    let err = (r.points[0].empirical / zeta - 1.0).abs();
    verdict(err < 0.15 && within(el, 60.0), format!("log(l)^2(1-c^l)/zeta - 1 = {err:.4e} at l=1e6, {el:.2?}"))
}

/// Exp and power fits for one phase point; returns (passed, detail).
fn rate_point(model: &ActivationModel, params: InitParams, ordered: bool, pairs: &[InputPair]) -> Result<(bool, String)> {
    let arch = Architecture::dense(ArchKind::Ffnn)?;
    let long = geometric_depths(32, 9);
    let sweep = residual_sweep(arch, model, params, pairs, &long)?;
    let exp = fit_rate(&long, &sweep.residuals, RateModel::Exp)?;
    let pow = fit_rate(&long, &sweep.residuals, RateModel::Power)?;
    let tag = format!("{} ({}, {:.6})", model.kind(), params.sigma_b, params.sigma_w);
    if ordered {
        let ok = exp.r_squared > 0.99 && exp.r_squared > pow.r_squared;
        return Ok((ok, format!("{tag} ordered: exp r2 {:.5}, power r2 {:.5}", exp.r_squared, pow.r_squared)));
    }
    let short = log_spaced(32, 1024, 8);
    let ss = residual_sweep(arch, model, params, pairs, &short)?;
    let g_short = fit_rate(&short, &ss.residuals, RateModel::Exp)?.exponent;
    let ok = (-1.15..=-0.85).contains(&pow.exponent) && exp.exponent < g_short;
    // diagnostic only: log-log slope between L=512 and L=8192
    let tail = (sweep.residuals[8] / sweep.residuals[4]).ln() / 16f64.ln();
    Ok((
        ok,
        format!(
            "{tag} eoc: power exponent {:.4} (r2 {:.5}, slope 512..8192 {tail:.4}), gamma(1024) {g_short:.3e} -> gamma(8192) {:.3e}",
            pow.exponent, pow.r_squared, exp.exponent
        ),
    ))
}

fn c5() -> Result<Verdict> {
    let pairs = sphere_pairs(5, 10, 1)?;
    let relu = ActivationModel::relu();
    let tanh = ActivationModel::tanh();
    let t0 = Instant::now();
    let a = rate_point(&relu, relu_ordered()?, true, &pairs)?;
    let b = rate_point(&relu, InitParams::relu_eoc(), false, &pairs)?;
    let t_relu = t0.elapsed();
    let t1 = Instant::now();
    let c = rate_point(&tanh, InitParams::new(0.2, 1.25)?, true, &pairs)?;
    let d = rate_point(&tanh, tanh_eoc()?, false, &pairs)?;
    let t_tanh = t1.elapsed();
    let ok = a.0 && b.0 && c.0 && d.0 && within(t_relu, 300.0) && within(t_tanh, 1800.0);
    verdict(ok, format!("{}; {}; {}; {}; relu {t_relu:.1?}, tanh {t_tanh:.1?}", a.1, b.1, c.1, d.1))
}

fn c6() -> Result<Verdict> {
    let sw = 2f64.sqrt();
    let p = InitParams::new(0.0, sw)?;
    let arch = Architecture::dense(ArchKind::ResnetDense)?;
    let model = ActivationModel::relu();
    let diag: Vec<InputPair> = sphere_pairs(5, 10, 1)?.into_iter().map(|p| InputPair::diagonal(p.x)).collect::<Result<_>>()?;
    let depths = geometric_depths(32, 9);
    let sweep = residual_sweep(arch, &model, p, &diag, &depths)?;
    let fit = fit_rate(&depths, &sweep.residuals, RateModel::Power)?;
    let trace = dense_recursion(arch, &model, p, diag[0].first_layer(p), 100)?;
    let growth = 1.0 + sw * sw / 2.0;
    let ratio = (trace.log_ntk_at(100).0 - trace.log_ntk_at(99).0).exp();
    let dev = (ratio - growth).abs();
    verdict(
        (-1.1..=-0.9).contains(&fit.exponent) && dev < 1e-6,
        format!("normalized residual exponent {:.4}; K^100/K^99 = {ratio:.8} vs {growth} (|diff| {dev:.3e})", fit.exponent),
    )
}

fn c7() -> Result<Verdict> {
    let t0 = Instant::now();
    let pair = sphere_pairs(5, 1, 7)?.remove(0);
    let widths: Vec<usize> = (6..=12).map(|k| 1usize << k).collect();
    let study = width_convergence_study(
        ArchKind::Ffnn,
        ActivationKind::Relu,
        InitParams::relu_eoc(),
        &pair,
        3,
        &widths,
        30,
        0,
    )?;
    let el = t0.elapsed();
    let row = study.rows.iter().find(|r| r.width == 1024).unwrap();
    let slope = study.slope.unwrap_or(f64::NAN);
    let ok = row.rel_err < 0.05 && (-0.65..=-0.35).contains(&slope) && within(el, 300.0);
    verdict(
        ok,
        format!(
            "width 1024: mean {:.5} vs mean-field {:.5} (rel {:.4}); slope {slope:.4}; {el:.1?}",
            row.mean_k, row.meanfield_k, row.rel_err
        ),
    )
}

fn c8() -> Result<Verdict> {
    let t0 = Instant::now();
    let grid = uniform_grid(0.99, 397);
    let ordered = KernelConfig::new(ArchKind::Ffnn, ActivationKind::Relu, relu_ordered()?)?;
    let eoc = KernelConfig::new(ArchKind::Ffnn, ActivationKind::Relu, InitParams::relu_eoc())?;
    let mut recon = Vec::new();
    let mut masses = Vec::new();
    let mut mu0_share = 0.0;
    for cfg in [&ordered, &eoc] {
        let dec = eigen_trend(cfg, 3, &[300], 64, 256)?.remove(0);
        recon.push(reconstruction_error(&dec, &grid, &zonal_profile(cfg, 3, 300, &grid)?)?);
        masses.push(dec.nonconstant_mass());
        if cfg == &ordered {
            mu0_share = dec.normalized()[0];
        }
    }
    let el = t0.elapsed();
    let worst = recon.iter().cloned().fold(0.0, f64::max);
    let ok = worst < 1e-6 && mu0_share > 0.99 && masses[1] > masses[0] && within(el, 600.0);
    verdict(
        ok,
        format!(
            "reconstruction sup-error ordered {:.3e}, eoc {:.3e}; ordered mu_0 share {mu0_share:.8}; k>=1 mass eoc {:.4} vs ordered {:.3e}; {el:.1?}",
            recon[0], recon[1], masses[1], masses[0]
        ),
    )
}

/// Explicit Euler for `df/dt = -(1/N) K (f - Z)` from `f = 0`.
fn euler(gram: &[Vec<f64>], z: &[Vec<f64>], t: f64, h: f64) -> Vec<Vec<f64>> {
    let n = gram.len();
    let o = z[0].len();
    let mut f = vec![vec![0.0; o]; n];
    let steps = (t / h).round() as usize;
    let mut r = vec![vec![0.0; o]; n];
    for _ in 0..steps {
        for i in 0..n {
            for k in 0..o {
                r[i][k] = f[i][k] - z[i][k];
            }
        }
        for i in 0..n {
            for k in 0..o {
                let mut s = 0.0;
                for j in 0..n {
                    s += gram[i][j] * r[j][k];
                }
                f[i][k] -= h * s / n as f64;
            }
        }
    }
    f
}

fn c9() -> Result<Verdict> {
    let ds = two_class_sphere(10, 200, 3)?;
    let labels = ds.labels().unwrap().to_vec();
    let z = targets_matrix(&ds);
    let eoc = KernelConfig::new(ArchKind::Ffnn, ActivationKind::Relu, InitParams::relu_eoc())?.raw();
    let st = build_gram(&ds, &GramKernel::new(eoc, 3)?)?;
    let cond = st.condition_ratio();
    let acc = accuracy(&evolve(&st, &z, f64::INFINITY)?, &labels);
    let train_ok = cond <= 1e-10 || acc == 1.0;

    let gram: Vec<Vec<f64>> = (0..ds.len()).map(|i| st.gram.row(i).iter().copied().collect()).collect();
    let zz: Vec<Vec<f64>> = ds.targets().to_vec();
    let mut ode_err = 0.0f64;
    for t in [0.5, 2.0] {
        let exact = evolve(&st, &z, t)?;
        let approx = euler(&gram, &zz, t, 1e-4);
        for (i, row) in approx.iter().enumerate() {
            for (k, v) in row.iter().enumerate() {
                ode_err = ode_err.max((v - exact[(i, k)]).abs());
            }
        }
    }

    let ord = KernelConfig::new(ArchKind::Ffnn, ActivationKind::Relu, relu_ordered()?)?.raw();
    let r3 = build_gram(&ds, &GramKernel::new(ord.clone(), 3)?)?.condition_ratio();
    let r300 = build_gram(&ds, &GramKernel::new(ord, 300)?)?.condition_ratio();
    let ok = train_ok && ode_err < 1e-5 && r300 <= r3 / 1e3;
    verdict(
        ok,
        format!(
            "eoc L=3 min/max {cond:.3e}, train acc {acc}; Euler max diff {ode_err:.3e}; ordered min/max L=3 {r3:.3e}, L=300 {r300:.3e}"
        ),
    )
}

fn c10() -> Result<Verdict> {
    let tanh = ActivationModel::tanh();
    let a = conv_dense_gap(&ActivationModel::relu(), InitParams::relu_eoc(), 5, 1, 50)?;
    let b = conv_dense_gap(&ActivationModel::relu(), relu_ordered()?, 5, 2, 50)?;
    let c = conv_dense_gap(&tanh, tanh_eoc()?, 5, 1, 50)?;
    let d = conv_dense_gap(&tanh, InitParams::new(0.3, 1.1)?, 7, 2, 50)?;
    let worst = a.max(b).max(c).max(d);
    verdict(worst < 1e-10, format!("max |K_cnn - K_ffnn| over grid and L<=50: {worst:.3e}"))
}

fn c11() -> Result<Verdict> {
    let checks = run_all();
    let failed: Vec<String> = checks
        .iter()
        .filter(|c| !c.passed)
        .map(|c| format!("{}::{} ({})", c.module, c.name, c.detail))
        .collect();
    let x = [0.4, -0.9, 0.2, 0.6];
    let mut fd = 0.0f64;
    for arch in [ArchKind::Ffnn, ArchKind::ResnetDense] {
        for act in [ActivationKind::Relu, ActivationKind::Tanh] {
            for seed in 0..3 {
                let widths = if arch == ArchKind::Ffnn { vec![6, 5, 1] } else { vec![5, 5, 5] };
                let net = sample_net(arch, act, InitParams::new(0.3, 1.5)?, 4, &widths, seed)?;
                fd = fd.max(gradient_check(&net, &x)?);
            }
        }
    }
    let ok = failed.is_empty() && fd < 1e-5;
    let summary = if failed.is_empty() { "all invariant checks pass".to_string() } else { failed.join("; ") };
    verdict(ok, format!("{}/{} checks; gradient check max rel err {fd:.3e}; {summary}", checks.len() - failed.len(), checks.len()))
}

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [(&str, &str, fn() -> Result<Verdict>); 11] = [
        ("c1", "relu eoc constant", c1),
        ("c2", "tanh eoc constant", c2),
        ("c3", "resnet constant", c3),
        ("c4", "scaled resnet constant", c4),
        ("c5", "rate discrimination", c5),
        ("c6", "resnet normalization", c6),
        ("c7", "finite-width oracle", c7),
        ("c8", "spectral structure", c8),
        ("c9", "closed-form training", c9),
        ("c10", "conv reduction", c10),
        ("c11", "invariant suites", c11),
    ];
    let mut failures = 0;
    for (id, name, f) in criteria {
        if !filters.is_empty() && !filters.iter().any(|x| x == id || format!("c{x}") == id) {
            continue;
        }
        let (passed, detail) = match f() {
            Ok(v) => (v.passed, v.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !passed {
            failures += 1;
        }
        println!("criterion {:>3} {:<24} {}  {detail}", &id[1..], name, if passed { "PASS" } else { "FAIL" });
    }
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
}
