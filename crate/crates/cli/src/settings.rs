//! Command settings: flags override the TOML `--config` file, which
//! overrides per-command defaults.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use ntk_core::activations::{ActivationKind, ActivationModel};
use ntk_core::asymptotics::geometric_depths;
use ntk_core::dataset::Normalize;
use ntk_core::kernels::ArchKind;
use ntk_core::phase::{eoc_curve, InitParams};
use ntk_core::{NtkError, Result};

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    /// TOML file with any of the options below (flags win).
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,

    /// relu or tanh.
    #[arg(long)]
    pub activation: Option<String>,
    /// ffnn, cnn, resnet, resnet_conv, scaled_resnet, scaled_resnet_conv.
    #[arg(long)]
    pub arch: Option<String>,
    /// Preset initialization: ordered, eoc or chaotic.
    #[arg(long)]
    pub phase: Option<String>,
    #[arg(long)]
    pub sigma_b: Option<f64>,
    #[arg(long)]
    pub sigma_w: Option<f64>,
    /// Gauss-Hermite order for Gaussian expectations.
    #[arg(long)]
    pub quad_order: Option<usize>,

    #[arg(long)]
    pub depth: Option<usize>,
    /// Comma-separated depths.
    #[arg(long, value_delimiter = ',')]
    pub depths: Option<Vec<usize>>,
    /// Input dimension of synthetic data.
    #[arg(long)]
    pub d: Option<usize>,
    /// Number of synthetic points or pairs.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,

    /// CSV dataset: header row, features, integer label last.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// none or unit_sphere.
    #[arg(long)]
    pub normalize: Option<String>,
    /// Row indices of the kernel pair, e.g. `0,1`.
    #[arg(long, value_delimiter = ',')]
    pub pair: Option<Vec<usize>>,

    /// Conv spatial size M.
    #[arg(long)]
    pub size: Option<usize>,
    /// Conv filter half width k.
    #[arg(long)]
    pub half_width: Option<usize>,
    /// Require translation-invariant first-layer grids.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub assumption1: Option<bool>,

    #[arg(long)]
    pub test_fraction: Option<f64>,
    /// Training time, or `infinity`.
    #[arg(long)]
    pub time: Option<String>,
    /// Allow the pseudo-inverse on singular Gram matrices.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub pseudo_inverse: Option<bool>,
    /// Optional CSV of per-point outputs.
    #[arg(long)]
    pub predictions: Option<PathBuf>,

    /// Comma-separated hidden widths.
    #[arg(long, value_delimiter = ',')]
    pub widths: Option<Vec<usize>>,
    /// Networks sampled per width.
    #[arg(long)]
    pub seeds: Option<usize>,

    #[arg(long)]
    pub k_max: Option<usize>,
    /// Quadrature nodes for spectral coefficients.
    #[arg(long)]
    pub nodes: Option<usize>,

    /// Phase grid: sigma_b range and step count.
    #[arg(long)]
    pub sb_min: Option<f64>,
    #[arg(long)]
    pub sb_max: Option<f64>,
    #[arg(long)]
    pub sb_steps: Option<usize>,
    #[arg(long)]
    pub sw_min: Option<f64>,
    #[arg(long)]
    pub sw_max: Option<f64>,
    #[arg(long)]
    pub sw_steps: Option<usize>,

    /// Output file (default `ntk-<command>.<ext>`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

macro_rules! overlay {
    ($dst:ident, $src:ident; $($f:ident),*) => {
        $( if $dst.$f.is_none() { $dst.$f = $src.$f.clone(); } )*
    };
}

impl Settings {
    fn merged(&self) -> Result<Settings> {
        let mut s = self.clone();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)
                .map_err(|e| NtkError::Io(format!("{}: {e}", path.display())))?;
            let file: Settings = toml::from_str(&text)
                .map_err(|e| NtkError::InvalidArgument(format!("{}: {e}", path.display())))?;
            overlay!(s, file; activation, arch, phase, sigma_b, sigma_w, quad_order, depth, depths, d, n, seed,
                input, normalize, pair, size, half_width, assumption1, test_fraction, time, pseudo_inverse,
                predictions, widths, seeds, k_max, nodes, sb_min, sb_max, sb_steps, sw_min, sw_max, sw_steps, out);
        }
        Ok(s)
    }

    /// Fills defaults for `command` and validates.
    pub fn resolve(&self, command: &str) -> Result<Resolved> {
        let s = self.merged()?;
        let activation: ActivationKind = s.activation.as_deref().unwrap_or("relu").parse()?;
        let arch: ArchKind = s.arch.as_deref().unwrap_or("ffnn").parse()?;
        let phase = s.phase.clone().unwrap_or_else(|| "eoc".into());
        let params = preset(activation, &phase, s.sigma_b, s.sigma_w)?;
        let normalize: Normalize = s.normalize.as_deref().unwrap_or("none").parse()?;
        let time = parse_time(s.time.as_deref().unwrap_or("infinity"))?;
        let depths = s.depths.clone().unwrap_or_else(|| match command {
            "spectrum" => vec![3, 30, 300],
            _ => geometric_depths(32, 9),
        });
        if depths.is_empty() || depths.contains(&0) {
            return Err(NtkError::InvalidArgument("depths must be positive".into()));
        }
        let pair = match s.pair.as_deref() {
            None => (0, 1),
            Some([i, j]) => (*i, *j),
            Some(other) => {
                return Err(NtkError::InvalidArgument(format!("pair takes two indices, got {}", other.len())))
            }
        };
        let quad_order = s.quad_order;
        if let Some(order) = quad_order {
            ActivationModel::new(activation, order)?;
        }
        let r = Resolved {
            activation,
            arch,
            phase,
            params,
            quad_order,
            depth: s.depth.unwrap_or(if command == "kernel" { 10 } else { 3 }),
            depths,
            d: s.d.unwrap_or(match command {
                "spectrum" => 3,
                "train" => 10,
                _ => 5,
            }),
            n: s.n.unwrap_or(match command {
                "train" => 200,
                "kernel" => 2,
                _ => 10,
            }),
            seed: s.seed.unwrap_or(0),
            input: s.input.clone(),
            normalize,
            pair,
            size: s.size.unwrap_or(5),
            half_width: s.half_width.unwrap_or(1),
            assumption1: s.assumption1.unwrap_or(false),
            test_fraction: s.test_fraction.unwrap_or(if command == "train" { 0.25 } else { 0.0 }),
            time,
            pseudo_inverse: s.pseudo_inverse.unwrap_or(false),
            predictions: s.predictions.clone(),
            widths: s.widths.clone().unwrap_or_else(|| vec![64, 128, 256, 512, 1024]),
            seeds: s.seeds.unwrap_or(10),
            k_max: s.k_max.unwrap_or(ntk_core::spectral::DEFAULT_K_MAX),
            nodes: s.nodes.unwrap_or(ntk_core::spectral::DEFAULT_NODES),
            sb: (s.sb_min.unwrap_or(0.0), s.sb_max.unwrap_or(1.0), s.sb_steps.unwrap_or(11)),
            sw: (s.sw_min.unwrap_or(0.5), s.sw_max.unwrap_or(3.0), s.sw_steps.unwrap_or(11)),
            out: s.out.clone(),
        };
        r.validate()?;
        Ok(r)
    }
}

fn parse_time(s: &str) -> Result<f64> {
    match s.to_ascii_lowercase().as_str() {
        "inf" | "infinity" => Ok(f64::INFINITY),
        other => other
            .parse::<f64>()
            .ok()
            .filter(|t| *t >= 0.0)
            .ok_or_else(|| NtkError::InvalidArgument(format!("time must be a nonnegative number or 'infinity', got '{s}'"))),
    }
}

/// Named initialization; explicit sigmas override the preset's values.
fn preset(activation: ActivationKind, phase: &str, sigma_b: Option<f64>, sigma_w: Option<f64>) -> Result<InitParams> {
    let (sb, sw) = match (activation, phase) {
        (ActivationKind::Relu, "ordered") => (0.5, 1.8f64.sqrt()),
        (ActivationKind::Relu, "eoc") => (0.0, 2f64.sqrt()),
        (ActivationKind::Relu, "chaotic") => (0.0, 2.0),
        (ActivationKind::Tanh, "ordered") => (0.2, 1.25),
        (ActivationKind::Tanh, "eoc") => {
            let sb = sigma_b.unwrap_or(0.2);
            (sb, if sigma_w.is_some() { 0.0 } else { eoc_curve(&ActivationModel::tanh(), sb)? })
        }
        (ActivationKind::Tanh, "chaotic") => (0.2, 2.5),
        (_, other) => {
            return Err(NtkError::InvalidArgument(format!("unknown phase preset '{other}' (ordered, eoc, chaotic)")))
        }
    };
    InitParams::new(sigma_b.unwrap_or(sb), sigma_w.unwrap_or(sw))
}

#[derive(Debug, Clone, Serialize)]
pub struct Resolved {
    pub activation: ActivationKind,
    pub arch: ArchKind,
    pub phase: String,
    pub params: InitParams,
    pub quad_order: Option<usize>,
    pub depth: usize,
    pub depths: Vec<usize>,
    pub d: usize,
    pub n: usize,
    pub seed: u64,
    pub input: Option<PathBuf>,
    pub normalize: Normalize,
    pub pair: (usize, usize),
    pub size: usize,
    pub half_width: usize,
    pub assumption1: bool,
    pub test_fraction: f64,
    #[serde(serialize_with = "time_str")]
    pub time: f64,
    pub pseudo_inverse: bool,
    pub predictions: Option<PathBuf>,
    pub widths: Vec<usize>,
    pub seeds: usize,
    pub k_max: usize,
    pub nodes: usize,
    pub sb: (f64, f64, usize),
    pub sw: (f64, f64, usize),
    pub out: Option<PathBuf>,
}

fn time_str<S: serde::Serializer>(t: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if t.is_infinite() {
        s.serialize_str("infinity")
    } else {
        s.serialize_f64(*t)
    }
}

fn linspace((lo, hi, steps): (f64, f64, usize)) -> Vec<f64> {
    if steps == 1 {
        return vec![lo];
    }
    (0..steps).map(|i| lo + (hi - lo) * i as f64 / (steps - 1) as f64).collect()
}

impl Resolved {
    fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.d == 0 || self.n == 0 {
            return Err(NtkError::InvalidArgument("depth, d and n must be positive".into()));
        }
        for (name, (lo, hi, steps)) in [("sigma_b", self.sb), ("sigma_w", self.sw)] {
            if steps == 0 || !(lo <= hi) || lo < 0.0 {
                return Err(NtkError::InvalidArgument(format!("{name} grid needs 0 <= min <= max and steps >= 1")));
            }
        }
        if self.widths.is_empty() || self.widths.contains(&0) || self.seeds == 0 {
            return Err(NtkError::InvalidArgument("widths and seeds must be positive".into()));
        }
        Ok(())
    }

    pub fn grid_b(&self) -> Vec<f64> {
        linspace(self.sb)
    }

    pub fn grid_w(&self) -> Vec<f64> {
        linspace(self.sw)
    }

    /// The `--out` path, or `ntk-<command>.<ext>` in the working directory.
    pub fn out_path(&self, command: &str, ext: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| Path::new(&format!("ntk-{command}.{ext}")).to_path_buf())
    }

    /// One-line JSON of the resolved settings.
    pub fn echo(&self) -> String {
        serde_json::to_string(self).unwrap_or_else(|e| format!("<unserializable: {e}>"))
    }
}
