//! Plain-text configuration: `[section]` headers over `key = value` lines.
//!
//! Parsing is strict: every key must belong to the known schema, and a
//! config error lists every offender at once. Emission is canonical
//! (sections and keys sorted), so parse -> emit is idempotent and the
//! `config_used.txt` each command drops next to its outputs is a complete,
//! rerunnable record of the resolved settings.

use elder::gradcheck::GradCheckConfig;
use elder::network::ArchConfig;
use elder::regularizer::RegKind;
use elder::solver::{GammaReset, SolverConfig};
use elder::trainer::GradMode;
use elder::{Error, Result};
use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

// ---- raw key/value layer -----------------------------------------------------

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig {
    pub sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<RawConfig> {
        let mut sections: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        let mut current: Option<String> = None;
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
                let name = name.trim().to_string();
                if name.is_empty() {
                    return Err(Error::config(format!("config line {}: empty section name", ln + 1)));
                }
                sections.entry(name.clone()).or_default();
                current = Some(name);
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::config(format!(
                    "config line {}: expected `key = value` or `[section]`, got {line:?}",
                    ln + 1
                )));
            };
            let Some(section) = &current else {
                return Err(Error::config(format!(
                    "config line {}: key {:?} appears before any [section] header",
                    ln + 1,
                    key.trim()
                )));
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() {
                return Err(Error::config(format!("config line {}: empty key", ln + 1)));
            }
            let entry = sections.get_mut(section).expect("section inserted above");
            if entry.insert(key.clone(), value).is_some() {
                return Err(Error::config(format!(
                    "config line {}: duplicate key [{section}] {key}",
                    ln + 1
                )));
            }
        }
        Ok(RawConfig { sections })
    }

    pub fn from_file(path: &Path) -> Result<RawConfig> {
        let text = std::fs::read_to_string(path)?;
        RawConfig::parse(&text)
    }

    /// Canonical form: sections sorted, keys sorted, one blank line between
    /// sections. `parse(emit(c)) == c` for every parsed config.
    pub fn emit(&self) -> String {
        let mut out = String::new();
        for (i, (name, keys)) in self.sections.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            out.push_str(&format!("[{name}]\n"));
            for (k, v) in keys {
                out.push_str(&format!("{k} = {v}\n"));
            }
        }
        out
    }

    fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections.get(section).and_then(|s| s.get(key)).map(|v| v.as_str())
    }

    fn set(&mut self, section: &str, key: &str, value: impl Display) {
        self.sections
            .entry(section.to_string())
            .or_default()
            .insert(key.to_string(), value.to_string());
    }
}

/// Known sections and keys; anything else is rejected with a full list of
/// offenders.
const SCHEMA: &[(&str, &[&str])] = &[
    ("experiment", &["task", "seed", "out"]),
    ("data", &["count", "image_size", "dir"]),
    (
        "model",
        &[
            "kernel", "kernel_size", "kernel_sigma", "factor", "ratio", "ratio_lo", "ratio_hi",
            "mask", "keep_prob", "noise_sigma",
        ],
    ),
    ("regularizer", &["kind", "tau", "weights"]),
    ("network", &["num_scales", "blocks_per_scale", "base_channels", "kernel_size"]),
    (
        "solver",
        &[
            "gamma0", "beta", "rho", "epsilon", "max_iters", "line_search", "max_backtracks",
            "gamma_reset",
        ],
    ),
    (
        "train",
        &[
            "epochs", "samples_per_epoch", "batch_size", "lr", "grad_mode", "gamma",
            "forward_iters", "val_count", "sigma_max", "init", "neumann_tol", "neumann_max",
        ],
    ),
    (
        "gradcheck",
        &["instances", "directions", "tolerance", "fd_step", "equilibrium_instances"],
    ),
    ("bench", &["size", "measurements", "tau", "epsilon", "max_iters"]),
];

fn validate_schema(raw: &RawConfig) -> Result<()> {
    let mut offenders = Vec::new();
    for (section, keys) in &raw.sections {
        match SCHEMA.iter().find(|(s, _)| s == section) {
            None => offenders.push(format!("[{section}] (unknown section)")),
            Some((_, known)) => {
                for key in keys.keys() {
                    if !known.contains(&key.as_str()) {
                        offenders.push(format!("[{section}] {key}"));
                    }
                }
            }
        }
    }
    if offenders.is_empty() {
        Ok(())
    } else {
        Err(Error::config(format!("unknown config keys: {}", offenders.join(", "))))
    }
}

// ---- typed settings ----------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Sisr,
    Csmri,
    Inpaint,
    Denoise,
}

impl Task {
    pub fn parse(s: &str) -> Result<Task> {
        match s {
            "sisr" => Ok(Task::Sisr),
            "csmri" => Ok(Task::Csmri),
            "inpaint" => Ok(Task::Inpaint),
            "denoise" => Ok(Task::Denoise),
            other => Err(Error::config(format!(
                "unknown task {other:?} (expected sisr, csmri, inpaint, or denoise)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Task::Sisr => "sisr",
            Task::Csmri => "csmri",
            Task::Inpaint => "inpaint",
            Task::Denoise => "denoise",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskStyle {
    Radial,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    /// Start from the weights file named in `[regularizer] weights`.
    Weights,
    /// Start from seeded random initialization.
    Random,
}

#[derive(Debug, Clone)]
pub struct ModelSettings {
    pub kernel_path: Option<PathBuf>,
    pub kernel_size: usize,
    pub kernel_sigma: f64,
    pub factor: usize,
    pub ratio: f64,
    pub ratio_lo: Option<f64>,
    pub ratio_hi: Option<f64>,
    pub mask: MaskStyle,
    /// Probability that a pixel is observed (one minus the missing-pixel
    /// probability).
    pub keep_prob: f64,
    pub noise_sigma: f64,
}

#[derive(Debug, Clone)]
pub struct TrainSettings {
    pub epochs: usize,
    pub samples_per_epoch: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub grad_mode: GradMode,
    pub gamma: f64,
    pub forward_iters: usize,
    pub val_count: usize,
    pub sigma_max: f64,
    pub init: InitMode,
    pub neumann_tol: f64,
    pub neumann_max: usize,
}

#[derive(Debug, Clone)]
pub struct BenchSettings {
    pub size: usize,
    pub measurements: usize,
    pub tau: f64,
    pub epsilon: f64,
    pub max_iters: usize,
}

#[derive(Debug, Clone)]
pub struct Settings {
    pub task: Task,
    pub seed: u64,
    pub out: PathBuf,
    pub data_count: usize,
    pub image_size: usize,
    pub data_dir: Option<PathBuf>,
    pub model: ModelSettings,
    pub reg_kind: RegKind,
    pub tau: f64,
    pub weights: Option<PathBuf>,
    pub arch: ArchConfig,
    pub solver: SolverConfig,
    pub train: TrainSettings,
    pub gradcheck: GradCheckConfig,
    pub bench: BenchSettings,
}

fn parse_key<T: FromStr>(raw: &RawConfig, section: &str, key: &str, default: T) -> Result<T> {
    match raw.get(section, key) {
        None => Ok(default),
        Some(text) => text.parse::<T>().map_err(|_| {
            Error::config(format!("[{section}] {key}: cannot parse {text:?}"))
        }),
    }
}

fn parse_bool(raw: &RawConfig, section: &str, key: &str, default: bool) -> Result<bool> {
    match raw.get(section, key) {
        None => Ok(default),
        Some("true") => Ok(true),
        Some("false") => Ok(false),
        Some(other) => Err(Error::config(format!(
            "[{section}] {key}: expected true or false, got {other:?}"
        ))),
    }
}

fn parse_path(raw: &RawConfig, section: &str, key: &str) -> Option<PathBuf> {
    raw.get(section, key).map(PathBuf::from)
}

/// Resolve a full `Settings` from an optional config file plus command-line
/// overrides. Every value has a default, so all commands run without a
/// config file.
pub fn load(
    config_path: Option<&Path>,
    seed_override: Option<u64>,
    out_override: Option<PathBuf>,
) -> Result<Settings> {
    let raw = match config_path {
        Some(p) => RawConfig::from_file(p)?,
        None => RawConfig::default(),
    };
    validate_schema(&raw)?;

    let task = match raw.get("experiment", "task") {
        Some(t) => Task::parse(t)?,
        None => Task::Inpaint,
    };
    let seed = seed_override
        .map(Ok)
        .unwrap_or_else(|| parse_key(&raw, "experiment", "seed", 0u64))?;
    let out = out_override
        .or_else(|| parse_path(&raw, "experiment", "out"))
        .unwrap_or_else(|| PathBuf::from("out"));

    let model = ModelSettings {
        kernel_path: parse_path(&raw, "model", "kernel"),
        kernel_size: parse_key(&raw, "model", "kernel_size", 5usize)?,
        kernel_sigma: parse_key(&raw, "model", "kernel_sigma", 1.6f64)?,
        factor: parse_key(&raw, "model", "factor", 2usize)?,
        ratio: parse_key(&raw, "model", "ratio", 0.15f64)?,
        ratio_lo: match raw.get("model", "ratio_lo") {
            Some(_) => Some(parse_key(&raw, "model", "ratio_lo", 0.0)?),
            None => None,
        },
        ratio_hi: match raw.get("model", "ratio_hi") {
            Some(_) => Some(parse_key(&raw, "model", "ratio_hi", 0.0)?),
            None => None,
        },
        mask: match raw.get("model", "mask") {
            None | Some("radial") => MaskStyle::Radial,
            Some("random") => MaskStyle::Random,
            Some(other) => {
                return Err(Error::config(format!(
                    "[model] mask: expected radial or random, got {other:?}"
                )))
            }
        },
        keep_prob: parse_key(&raw, "model", "keep_prob", 0.5f64)?,
        noise_sigma: parse_key(&raw, "model", "noise_sigma", 0.0f64)?,
    };

    let reg_kind = match raw.get("regularizer", "kind") {
        Some(k) => RegKind::parse(k)?,
        None => RegKind::Lsr,
    };

    let arch = ArchConfig {
        num_scales: parse_key(&raw, "network", "num_scales", 2usize)?,
        blocks_per_scale: parse_key(&raw, "network", "blocks_per_scale", 1usize)?,
        base_channels: parse_key(&raw, "network", "base_channels", 8usize)?,
        kernel_size: parse_key(&raw, "network", "kernel_size", 3usize)?,
    };

    let solver = SolverConfig {
        gamma0: parse_key(&raw, "solver", "gamma0", 1.0f64)?,
        beta: parse_key(&raw, "solver", "beta", 0.5f64)?,
        rho: parse_key(&raw, "solver", "rho", 0.1f64)?,
        epsilon: parse_key(&raw, "solver", "epsilon", 1e-2f64)?,
        max_iters: parse_key(&raw, "solver", "max_iters", 100usize)?,
        line_search: parse_bool(&raw, "solver", "line_search", true)?,
        max_backtracks: parse_key(&raw, "solver", "max_backtracks", 60usize)?,
        gamma_reset: match raw.get("solver", "gamma_reset") {
            None | Some("expand") => GammaReset::Expand,
            Some("monotone") => GammaReset::Monotone,
            Some(other) => {
                return Err(Error::config(format!(
                    "[solver] gamma_reset: expected expand or monotone, got {other:?}"
                )))
            }
        },
    };

    let train = TrainSettings {
        epochs: parse_key(&raw, "train", "epochs", 10usize)?,
        samples_per_epoch: parse_key(&raw, "train", "samples_per_epoch", 32usize)?,
        batch_size: parse_key(&raw, "train", "batch_size", 4usize)?,
        lr: parse_key(&raw, "train", "lr", 1e-3f64)?,
        grad_mode: match raw.get("train", "grad_mode") {
            Some(m) => GradMode::parse(m)?,
            None => GradMode::Jfb,
        },
        gamma: parse_key(&raw, "train", "gamma", 1.0f64)?,
        forward_iters: parse_key(&raw, "train", "forward_iters", 100usize)?,
        val_count: parse_key(&raw, "train", "val_count", 8usize)?,
        sigma_max: parse_key(&raw, "train", "sigma_max", 55.0 / 255.0)?,
        init: match raw.get("train", "init") {
            None | Some("weights") => InitMode::Weights,
            Some("random") => InitMode::Random,
            Some(other) => {
                return Err(Error::config(format!(
                    "[train] init: expected weights or random, got {other:?}"
                )))
            }
        },
        neumann_tol: parse_key(&raw, "train", "neumann_tol", 1e-8f64)?,
        neumann_max: parse_key(&raw, "train", "neumann_max", 200usize)?,
    };

    let gradcheck_defaults = GradCheckConfig::default();
    let gradcheck = GradCheckConfig {
        instances: parse_key(&raw, "gradcheck", "instances", gradcheck_defaults.instances)?,
        directions: parse_key(&raw, "gradcheck", "directions", gradcheck_defaults.directions)?,
        tolerance: parse_key(&raw, "gradcheck", "tolerance", gradcheck_defaults.tolerance)?,
        fd_step: parse_key(&raw, "gradcheck", "fd_step", gradcheck_defaults.fd_step)?,
        equilibrium_instances: parse_key(
            &raw,
            "gradcheck",
            "equilibrium_instances",
            gradcheck_defaults.equilibrium_instances,
        )?,
        seed,
        ..gradcheck_defaults
    };

    let bench = BenchSettings {
        size: parse_key(&raw, "bench", "size", 64usize)?,
        measurements: parse_key(&raw, "bench", "measurements", 96usize)?,
        tau: parse_key(&raw, "bench", "tau", 1.0f64)?,
        epsilon: parse_key(&raw, "bench", "epsilon", 1e-6f64)?,
        max_iters: parse_key(&raw, "bench", "max_iters", 2000usize)?,
    };

    let settings = Settings {
        task,
        seed,
        out,
        data_count: parse_key(&raw, "data", "count", 8usize)?,
        image_size: parse_key(&raw, "data", "image_size", 16usize)?,
        data_dir: parse_path(&raw, "data", "dir"),
        model,
        reg_kind,
        tau: parse_key(&raw, "regularizer", "tau", 0.2f64)?,
        weights: parse_path(&raw, "regularizer", "weights"),
        arch,
        solver,
        train,
        gradcheck,
        bench,
    };
    settings.validate()?;
    Ok(settings)
}

impl Settings {
    fn validate(&self) -> Result<()> {
        if self.model.factor == 0 {
            return Err(Error::config("[model] factor must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.model.keep_prob) {
            return Err(Error::config(format!(
                "[model] keep_prob {} outside [0,1]",
                self.model.keep_prob
            )));
        }
        if !(self.model.noise_sigma >= 0.0) || !self.model.noise_sigma.is_finite() {
            return Err(Error::config(format!(
                "[model] noise_sigma must be finite and >= 0, got {}",
                self.model.noise_sigma
            )));
        }
        if !(self.tau >= 0.0) || !self.tau.is_finite() {
            return Err(Error::config(format!(
                "[regularizer] tau must be finite and >= 0, got {}",
                self.tau
            )));
        }
        if self.image_size == 0 {
            return Err(Error::config("[data] image_size must be positive"));
        }
        self.arch.validate()?;
        self.solver.validate()?;
        Ok(())
    }

    /// The fully resolved configuration, for `config_used.txt`.
    pub fn to_raw(&self) -> RawConfig {
        let mut raw = RawConfig::default();
        raw.set("experiment", "task", self.task.name());
        raw.set("experiment", "seed", self.seed);
        raw.set("experiment", "out", self.out.display());

        raw.set("data", "count", self.data_count);
        raw.set("data", "image_size", self.image_size);
        if let Some(dir) = &self.data_dir {
            raw.set("data", "dir", dir.display());
        }

        if let Some(k) = &self.model.kernel_path {
            raw.set("model", "kernel", k.display());
        }
        raw.set("model", "kernel_size", self.model.kernel_size);
        raw.set("model", "kernel_sigma", self.model.kernel_sigma);
        raw.set("model", "factor", self.model.factor);
        raw.set("model", "ratio", self.model.ratio);
        if let Some(v) = self.model.ratio_lo {
            raw.set("model", "ratio_lo", v);
        }
        if let Some(v) = self.model.ratio_hi {
            raw.set("model", "ratio_hi", v);
        }
        raw.set(
            "model",
            "mask",
            match self.model.mask {
                MaskStyle::Radial => "radial",
                MaskStyle::Random => "random",
            },
        );
        raw.set("model", "keep_prob", self.model.keep_prob);
        raw.set("model", "noise_sigma", self.model.noise_sigma);

        raw.set("regularizer", "kind", self.reg_kind.name());
        raw.set("regularizer", "tau", self.tau);
        if let Some(w) = &self.weights {
            raw.set("regularizer", "weights", w.display());
        }

        raw.set("network", "num_scales", self.arch.num_scales);
        raw.set("network", "blocks_per_scale", self.arch.blocks_per_scale);
        raw.set("network", "base_channels", self.arch.base_channels);
        raw.set("network", "kernel_size", self.arch.kernel_size);

        raw.set("solver", "gamma0", self.solver.gamma0);
        raw.set("solver", "beta", self.solver.beta);
        raw.set("solver", "rho", self.solver.rho);
        raw.set("solver", "epsilon", self.solver.epsilon);
        raw.set("solver", "max_iters", self.solver.max_iters);
        raw.set("solver", "line_search", self.solver.line_search);
        raw.set("solver", "max_backtracks", self.solver.max_backtracks);
        raw.set(
            "solver",
            "gamma_reset",
            match self.solver.gamma_reset {
                GammaReset::Expand => "expand",
                GammaReset::Monotone => "monotone",
            },
        );

        raw.set("train", "epochs", self.train.epochs);
        raw.set("train", "samples_per_epoch", self.train.samples_per_epoch);
        raw.set("train", "batch_size", self.train.batch_size);
        raw.set("train", "lr", self.train.lr);
        raw.set(
            "train",
            "grad_mode",
            match self.train.grad_mode {
                GradMode::Jfb => "jfb",
                GradMode::Implicit => "implicit",
            },
        );
        raw.set("train", "gamma", self.train.gamma);
        raw.set("train", "forward_iters", self.train.forward_iters);
        raw.set("train", "val_count", self.train.val_count);
        raw.set("train", "sigma_max", self.train.sigma_max);
        raw.set(
            "train",
            "init",
            match self.train.init {
                InitMode::Weights => "weights",
                InitMode::Random => "random",
            },
        );
        raw.set("train", "neumann_tol", self.train.neumann_tol);
        raw.set("train", "neumann_max", self.train.neumann_max);

        raw.set("gradcheck", "instances", self.gradcheck.instances);
        raw.set("gradcheck", "directions", self.gradcheck.directions);
        raw.set("gradcheck", "tolerance", self.gradcheck.tolerance);
        raw.set("gradcheck", "fd_step", self.gradcheck.fd_step);
        raw.set("gradcheck", "equilibrium_instances", self.gradcheck.equilibrium_instances);

        raw.set("bench", "size", self.bench.size);
        raw.set("bench", "measurements", self.bench.measurements);
        raw.set("bench", "tau", self.bench.tau);
        raw.set("bench", "epsilon", self.bench.epsilon);
        raw.set("bench", "max_iters", self.bench.max_iters);
        raw
    }
}
