//! `ntk`: command-line front end for the kernel engine.

mod output;
mod settings;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use ntk_core::activations::ActivationModel;
use ntk_core::asymptotics::{fit_rate, residual_sweep, RateModel};
use ntk_core::dataset::{load_csv, sphere_pairs, two_class_sphere, Dataset};
use ntk_core::empirical::width_convergence_study;
use ntk_core::error::ErrorClass;
use ntk_core::kernels::{
    dense_recursion, normalize, ntk_conv, ArchKind, Architecture, ConvInput, ConvPair, ConvParams, InputPair,
};
use ntk_core::phase::{phase_point, Phase};
use ntk_core::regression::{accuracy, build_gram, evolve, rkhs_residual_coeffs, targets_matrix, GramKernel};
use ntk_core::selftest::run_all;
use ntk_core::spectral::{eigen_trend, KernelConfig};
use ntk_core::{NtkError, Result};

use output::{fmt_f64, Column, CsvTable, Meta};
use settings::Settings;

#[derive(Debug, Parser)]
#[command(name = "ntk", version, about = "Infinite-width NTK recursions, phase diagrams, rates and spectra")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Phase diagram over a (sigma_b, sigma_w) grid.
    Phase(Settings),
    /// Layer-by-layer kernel of one input pair.
    Kernel(Settings),
    /// Depth residuals and rate fits.
    Rates(Settings),
    /// Spherical-harmonic coefficients of zonal kernels.
    Spectrum(Settings),
    /// Closed-form NTK-regime training on a dataset.
    Train(Settings),
    /// Finite-width Monte-Carlo kernels against the mean-field value.
    Empirical(Settings),
    /// Invariant checks of every module.
    Selftest(Settings),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Phase(_) => "phase",
            Command::Kernel(_) => "kernel",
            Command::Rates(_) => "rates",
            Command::Spectrum(_) => "spectrum",
            Command::Train(_) => "train",
            Command::Empirical(_) => "empirical",
            Command::Selftest(_) => "selftest",
        }
    }

    fn module(&self) -> &'static str {
        match self {
            Command::Phase(_) => "phase",
            Command::Kernel(_) => "kernels",
            Command::Rates(_) => "asymptotics",
            Command::Spectrum(_) => "spectral",
            Command::Train(_) => "regression",
            Command::Empirical(_) => "empirical",
            Command::Selftest(_) => "selftest",
        }
    }

    fn settings(&self) -> &Settings {
        match self {
            Command::Phase(s)
            | Command::Kernel(s)
            | Command::Rates(s)
            | Command::Spectrum(s)
            | Command::Train(s)
            | Command::Empirical(s)
            | Command::Selftest(s) => s,
        }
    }
}

fn exit_code(e: &NtkError) -> u8 {
    match e.class() {
        ErrorClass::Config => 2,
        ErrorClass::Numeric => 3,
        ErrorClass::Io => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let name = cli.command.name();
    let resolved = match cli.command.settings().resolve(name) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("ntk {name}: configuration error: {e}");
            return ExitCode::from(exit_code(&e));
        }
    };
    if let Err(e) = init_threads() {
        eprintln!("ntk {name}: {e}");
        return ExitCode::from(exit_code(&e));
    }
    let result = match &cli.command {
        Command::Phase(_) => run_phase(&resolved),
        Command::Kernel(_) => run_kernel(&resolved),
        Command::Rates(_) => run_rates(&resolved),
        Command::Spectrum(_) => run_spectrum(&resolved),
        Command::Train(_) => run_train(&resolved),
        Command::Empirical(_) => run_empirical(&resolved),
        Command::Selftest(_) => run_selftest(&resolved),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("ntk {name}: error in module {}: {e}", cli.command.module());
            eprintln!("config: {}", resolved.echo());
            ExitCode::from(exit_code(&e))
        }
    }
}

/// Thread count from `NTK_THREADS`, if set.
fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var("NTK_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| NtkError::InvalidArgument(format!("NTK_THREADS must be a positive integer, got '{v}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| NtkError::InvalidArgument(format!("thread pool: {e}")))
}

use settings::Resolved;

fn meta(cfg: &Resolved, command: &str) -> Meta {
    Meta::new(command, cfg.echo(), cfg.seed)
}

fn model(cfg: &Resolved) -> Result<ActivationModel> {
    match cfg.quad_order {
        Some(order) => ActivationModel::new(cfg.activation, order),
        None => Ok(ActivationModel::from_kind(cfg.activation)),
    }
}

fn run_phase(cfg: &Resolved) -> Result<bool> {
    let m = model(cfg)?;
    let columns = vec![
        Column::new("sigma_b", "bias standard deviation"),
        Column::new("sigma_w", "weight standard deviation"),
        Column::new("q", "variance fixed point (inf when the variance diverges)"),
        Column::new("chi", "slope of the correlation map at c = 1"),
        Column::new("phase", "ordered, eoc or chaotic"),
    ];
    let mut table = CsvTable::new(columns);
    for sb in cfg.grid_b() {
        for sw in cfg.grid_w() {
            let p = ntk_core::phase::InitParams::new(sb, sw)?;
            let r = phase_point(&m, p)?;
            table.push(vec![fmt_f64(sb), fmt_f64(sw), fmt_f64(r.q_fixed), fmt_f64(r.chi), r.phase.to_string()]);
        }
    }
    table.write(&cfg.out_path("phase", "csv"), &meta(cfg, "phase"))?;
    Ok(true)
}

fn load_inputs(cfg: &Resolved) -> Result<Vec<Vec<f64>>> {
    match &cfg.input {
        Some(path) => Ok(load_csv(path, cfg.normalize)?.inputs().to_vec()),
        None => Ok(ntk_core::dataset::sphere_points(cfg.d, cfg.n.max(2), cfg.seed)?
            .into_iter()
            .map(|x| x.iter().map(|v| v * (cfg.d as f64).sqrt()).collect())
            .collect()),
    }
}

fn run_kernel(cfg: &Resolved) -> Result<bool> {
    let m = model(cfg)?;
    let rows = load_inputs(cfg)?;
    let (i, j) = cfg.pair;
    let pick = |k: usize| {
        rows.get(k)
            .cloned()
            .ok_or_else(|| NtkError::InvalidArgument(format!("input row {k} does not exist ({} rows)", rows.len())))
    };
    let (x, xp) = (pick(i)?, pick(j)?);
    let trace = if cfg.arch.is_conv() {
        let conv = ConvParams::new(cfg.size, cfg.half_width, cfg.assumption1)?;
        if x.len() % cfg.size != 0 {
            return Err(NtkError::InvalidArgument(format!(
                "conv rows hold channels x size values; {} is not a multiple of size {}",
                x.len(),
                cfg.size
            )));
        }
        let ch = x.len() / cfg.size;
        let pair = ConvPair::new(ConvInput::new(ch, cfg.size, x)?, ConvInput::new(ch, cfg.size, xp)?)?;
        ntk_conv(Architecture::conv(cfg.arch, conv)?, &pair, &m, cfg.params, cfg.depth)?
    } else {
        let pair = InputPair::new(x, xp)?;
        dense_recursion(Architecture::dense(cfg.arch)?, &m, cfg.params, pair.first_layer(cfg.params), cfg.depth)?
    };
    let normed = normalize(&trace, cfg.arch.default_scheme())?;
    let mut table = CsvTable::new(vec![
        Column::new("l", "layer"),
        Column::new("qx", "variance of x"),
        Column::new("qxp", "variance of x'"),
        Column::new("c", "correlation"),
        Column::new("qdot", "derivative covariance feeding layer l"),
        Column::new("K", "neural tangent kernel K^l(x, x')"),
        Column::new("K_normalized", "K^l divided by the architecture's depth normalizer"),
    ]);
    for l in 1..=trace.depth() {
        let scale = trace.log_scale[l - 1].exp();
        table.push(vec![
            l.to_string(),
            fmt_f64(trace.qx[l - 1] * scale),
            fmt_f64(trace.qxp[l - 1] * scale),
            fmt_f64(trace.corr[l - 1]),
            fmt_f64(trace.qdot[l - 1]),
            fmt_f64(trace.ntk_at(l)),
            fmt_f64(normed[l - 1]),
        ]);
    }
    table.write(&cfg.out_path("kernel", "csv"), &meta(cfg, "kernel"))?;
    Ok(true)
}

#[derive(Debug, Serialize)]
struct FitSummary {
    artifact_version: &'static str,
    config: String,
    model: String,
    exponent: f64,
    prefactor: f64,
    r_squared: f64,
    fit_lo: usize,
    fit_hi: usize,
    r_squared_power: f64,
    r_squared_exp: f64,
    unnormalized: bool,
}

fn run_rates(cfg: &Resolved) -> Result<bool> {
    let m = model(cfg)?;
    let arch = Architecture::dense(cfg.arch)?;
    let pairs = sphere_pairs(cfg.d, cfg.n, cfg.seed)?;
    let depths = cfg.depths.clone();
    let sweep = residual_sweep(arch, &m, cfg.params, &pairs, &depths)?;
    let theory = match (cfg.arch, phase_point(&m, cfg.params)?.phase) {
        (ArchKind::ScaledResnetDense, _) => RateModel::InvLog,
        (ArchKind::Ffnn, Phase::Ordered) => RateModel::Exp,
        _ => RateModel::Power,
    };
    let fit = fit_rate(&depths, &sweep.residuals, theory)?;
    let power = fit_rate(&depths, &sweep.residuals, RateModel::Power)?;
    let exp = fit_rate(&depths, &sweep.residuals, RateModel::Exp)?;
    let mut table = CsvTable::new(vec![
        Column::new("L", "depth"),
        Column::new("residual", "max over input pairs of |K_normalized^L - limit| (|K^L - limit| in the ordered phase)"),
        Column::new("theory_residual", "fitted theoretical law for the phase evaluated at L"),
    ]);
    for (&l, &r) in depths.iter().zip(&sweep.residuals) {
        table.push(vec![l.to_string(), fmt_f64(r), fmt_f64(fit.predict(l))]);
    }
    let out = cfg.out_path("rates", "csv");
    table.write(&out, &meta(cfg, "rates"))?;
    let summary = FitSummary {
        artifact_version: env!("CARGO_PKG_VERSION"),
        config: cfg.echo(),
        model: fit.model.to_string(),
        exponent: fit.exponent,
        prefactor: fit.prefactor,
        r_squared: fit.r_squared,
        fit_lo: fit.fit_range.0,
        fit_hi: fit.fit_range.1,
        r_squared_power: power.r_squared,
        r_squared_exp: exp.r_squared,
        unnormalized: sweep.unnormalized,
    };
    output::write_json(&sibling(&out, "fit.json"), &summary)?;
    Ok(true)
}

/// `dir/stem.suffix` next to `path`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "ntk".into());
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn run_spectrum(cfg: &Resolved) -> Result<bool> {
    let kc = KernelConfig::new(cfg.arch, cfg.activation, cfg.params)?;
    let decs = eigen_trend(&kc, cfg.d, &cfg.depths, cfg.k_max, cfg.nodes)?;
    let mut table = CsvTable::new(vec![
        Column::new("L", "depth"),
        Column::new("k", "spherical harmonic degree"),
        Column::new("mu_k", "coefficient of the degree-k zonal harmonic"),
        Column::new("mu_k_normalized", "mu_k N(d,k) as a share of the total over k <= k_max"),
    ]);
    for dec in &decs {
        for (k, (mu, share)) in dec.mu.iter().zip(dec.normalized()).enumerate() {
            table.push(vec![dec.depth.to_string(), k.to_string(), fmt_f64(*mu), fmt_f64(share)]);
        }
    }
    table.write(&cfg.out_path("spectrum", "csv"), &meta(cfg, "spectrum"))?;
    Ok(true)
}

#[derive(Debug, Serialize)]
struct TrainSummary {
    artifact_version: &'static str,
    config: String,
    seed: u64,
    min_eig: f64,
    max_eig: f64,
    train_acc: f64,
    test_acc: Option<f64>,
    pseudo_inverse_used: bool,
}

fn run_train(cfg: &Resolved) -> Result<bool> {
    let data: Dataset = match &cfg.input {
        Some(path) => load_csv(path, cfg.normalize)?,
        None => two_class_sphere(cfg.d, cfg.n, cfg.seed)?,
    };
    let (train, test) = data.split(cfg.test_fraction, cfg.seed)?;
    let kc = KernelConfig::new(cfg.arch, cfg.activation, cfg.params)?.raw();
    let kernel = GramKernel::new(kc, cfg.depth)?;
    let state = build_gram(&train, &kernel)?;
    let z = targets_matrix(&train);
    let fitted = evolve(&state, &z, cfg.time)?;
    let train_labels = train.labels().unwrap_or(&[]).to_vec();
    let train_acc = accuracy(&fitted, &train_labels);
    let mut pinv_used = false;
    let mut test_acc = None;
    let mut pred_rows = Vec::new();
    if let Some(test) = &test {
        let (a, flagged) = rkhs_residual_coeffs(&state, &z, cfg.time, cfg.pseudo_inverse)?;
        pinv_used = flagged;
        let labels = test.labels().unwrap_or(&[]);
        let mut hits = 0;
        for (x, &label) in test.inputs().iter().zip(labels) {
            let row = kernel.row(train.inputs(), x)?;
            let out = ntk_core::regression::predict_with_coeffs(&a, &row, None)?;
            let cls = ntk_core::regression::argmax(&out);
            hits += usize::from(cls == label);
            pred_rows.push(("test", label, cls, out));
        }
        test_acc = Some(hits as f64 / labels.len() as f64);
    }
    if let Some(path) = &cfg.predictions {
        for (i, &label) in train_labels.iter().enumerate() {
            let out: Vec<f64> = fitted.row(i).iter().copied().collect();
            pred_rows.insert(i, ("train", label, ntk_core::regression::argmax(&out), out));
        }
        let o = train.outputs();
        let mut cols = vec![
            Column::new("split", "train or test"),
            Column::new("label", "true class"),
            Column::new("predicted", "argmax of the outputs"),
        ];
        for k in 0..o {
            cols.push(Column::owned(format!("f_{k}"), format!("output {k} at the requested time")));
        }
        let mut table = CsvTable::new(cols);
        for (split, label, cls, out) in pred_rows {
            let mut row = vec![split.to_string(), label.to_string(), cls.to_string()];
            row.extend(out.iter().map(|v| fmt_f64(*v)));
            table.push(row);
        }
        table.write(path, &meta(cfg, "train"))?;
    }
    let summary = TrainSummary {
        artifact_version: env!("CARGO_PKG_VERSION"),
        config: cfg.echo(),
        seed: cfg.seed,
        min_eig: state.min_eig,
        max_eig: state.max_eig,
        train_acc,
        test_acc,
        pseudo_inverse_used: pinv_used,
    };
    output::write_json(&cfg.out_path("train", "json"), &summary)?;
    println!("{}", serde_json::to_string(&summary).map_err(|e| NtkError::Io(e.to_string()))?);
    Ok(true)
}

fn run_empirical(cfg: &Resolved) -> Result<bool> {
    let pair = sphere_pairs(cfg.d, 1, cfg.seed)?.remove(0);
    let study =
        width_convergence_study(cfg.arch, cfg.activation, cfg.params, &pair, cfg.depth, &cfg.widths, cfg.seeds, cfg.seed)?;
    let mut table = CsvTable::new(vec![
        Column::new("width", "hidden width"),
        Column::new("mean_K", "seed mean of the empirical NTK"),
        Column::new("std_K", "seed standard deviation of the empirical NTK"),
        Column::new("meanfield_K", "infinite-width NTK"),
        Column::new("rel_err", "|mean_K - meanfield_K| / meanfield_K"),
    ]);
    for r in &study.rows {
        table.push(vec![
            r.width.to_string(),
            fmt_f64(r.mean_k),
            fmt_f64(r.std_k),
            fmt_f64(r.meanfield_k),
            fmt_f64(r.rel_err),
        ]);
    }
    table.write(&cfg.out_path("empirical", "csv"), &meta(cfg, "empirical"))?;
    if let Some(s) = study.slope {
        eprintln!("width slope of mean absolute deviation: {s:.4}");
    }
    Ok(true)
}

fn run_selftest(cfg: &Resolved) -> Result<bool> {
    let checks = run_all();
    let mut table = CsvTable::new(vec![
        Column::new("module", "module under test"),
        Column::new("check", "invariant name"),
        Column::new("passed", "true or false"),
        Column::new("detail", "measured values"),
    ]);
    for c in &checks {
        println!("{:<5} {}::{}  {}", if c.passed { "PASS" } else { "FAIL" }, c.module, c.name, c.detail);
        table.push(vec![c.module.to_string(), c.name.to_string(), c.passed.to_string(), c.detail.clone()]);
    }
    if let Some(out) = &cfg.out {
        table.write(out, &meta(cfg, "selftest"))?;
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    println!("{} of {} checks passed", checks.len() - failed, checks.len());
    Ok(failed == 0)
}
