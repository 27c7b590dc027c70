//! Experiment configuration: a flat, typed `section.key=value` document.
//!
//! The format is deliberately minimal — one assignment per line, `#`
//! comments, no nesting — so that experiment provenance diffs cleanly.
//! Every key is known ahead of time and revalidated on load; unknown keys
//! are rejected rather than ignored. Environment variables of the form
//! `IPI_<SECTION>_<KEY>` override file values (the section is the token up
//! to the first underscore; the remainder is the key, so
//! `IPI_EXCITATION_EPISODE_LEN` targets `excitation.episode_len`).
//!
//! [`Config::canonical`] re-serializes the resolved document with sorted
//! keys and shortest-roundtrip floats; its SHA-256 ([`Config::hash`]) is the
//! stable identity recorded in run manifests.

use nalgebra::{DMatrix, DVector};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::online::OnlineConfig;
use crate::policy::InputBox;
use crate::rls::RlsConfig;
use crate::sysmodels::{LinearDiscrete, ModelA, ModelB, Plant};
use crate::train::{CollectConfig, TrainConfig};
use crate::valuefn::CostSpec;

/// Which benchmark plant an experiment drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlantKind {
    /// Nominal nonlinear plant.
    ModelA,
    /// Structurally different disturbed plant.
    ModelB,
    /// Reference linear plant (the nominal plant without its sine term).
    Linear,
}

impl PlantKind {
    fn parse(s: &str) -> Result<Self> {
        match s {
            "model_a" => Ok(Self::ModelA),
            "model_b" => Ok(Self::ModelB),
            "linear" => Ok(Self::Linear),
            other => Err(Error::Config(format!(
                "unknown plant model `{other}` (expected model_a, model_b, or linear)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::ModelA => "model_a",
            Self::ModelB => "model_b",
            Self::Linear => "linear",
        }
    }

    /// Instantiates the plant.
    pub fn build(&self) -> Box<dyn Plant> {
        match self {
            Self::ModelA => Box::new(ModelA),
            Self::ModelB => Box::new(ModelB),
            Self::Linear => Box::new(LinearDiscrete::reference()),
        }
    }
}

/// Fully resolved experiment configuration. Field groups mirror the config
/// sections one-to-one; see the shipped documents under `configs/`.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    // [experiment]
    pub name: String,
    pub seed: u64,
    // [plant]
    pub plant: PlantKind,
    // [cost]
    pub q: Vec<f64>,
    pub r: Vec<f64>,
    pub gamma: f64,
    // [rls]
    pub rls_kappa: f64,
    pub rls_lambda0: f64,
    // [kernel]
    pub kernel_kappa: f64,
    pub kernel_lambda0: f64,
    // [policy]
    pub base_gain: Vec<f64>,
    pub tau_p: f64,
    pub max_iterations: usize,
    pub probe_radius: f64,
    pub u_min: Option<f64>,
    pub u_max: Option<f64>,
    // [excitation]
    pub episodes: usize,
    pub episode_len: usize,
    pub x0_box: f64,
    pub amplitudes: Vec<f64>,
    pub frequencies: Vec<f64>,
    // [sim]
    pub x0: Vec<f64>,
    pub horizon: u64,
    pub blowup_radius: f64,
    // [online]
    pub settle_step: u64,
    pub settle_radius: f64,
    pub envelope_factor: f64,
    // [output]
    pub out_dir: Option<String>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            name: "default".into(),
            seed: 0,
            plant: PlantKind::ModelA,
            q: vec![1.0, 0.0, 0.0, 1.0],
            r: vec![1.0],
            gamma: 0.7,
            rls_kappa: 0.98,
            rls_lambda0: 10.0,
            kernel_kappa: 0.995,
            kernel_lambda0: 1.0,
            base_gain: vec![-2.5, -1.0],
            tau_p: 1e-6,
            max_iterations: 200,
            probe_radius: 1.0,
            u_min: None,
            u_max: None,
            episodes: 60,
            episode_len: 3,
            x0_box: 0.25,
            amplitudes: vec![0.4, 0.2],
            frequencies: vec![0.7, 1.3],
            x0: vec![0.5, 0.0],
            horizon: 1000,
            blowup_radius: 1e6,
            settle_step: 300,
            settle_radius: 0.3,
            envelope_factor: 5.0,
            out_dir: None,
        }
    }
}

fn parse_f64(section: &str, key: &str, v: &str) -> Result<f64> {
    v.parse().map_err(|_| {
        Error::Config(format!("{section}.{key}: `{v}` is not a number"))
    })
}

fn parse_list(section: &str, key: &str, v: &str) -> Result<Vec<f64>> {
    v.split(',')
        .map(|t| {
            t.trim().parse().map_err(|_| {
                Error::Config(format!("{section}.{key}: `{t}` is not a number"))
            })
        })
        .collect()
}

fn parse_int<T: std::str::FromStr>(section: &str, key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| {
        Error::Config(format!("{section}.{key}: `{v}` is not a nonnegative integer"))
    })
}

fn join(xs: &[f64]) -> String {
    xs.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

impl Config {
    /// Applies one `section.key = value` assignment.
    pub fn set(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match (section, key) {
            ("experiment", "name") => self.name = v.to_string(),
            ("experiment", "seed") => self.seed = parse_int(section, key, v)?,
            ("plant", "model") => self.plant = PlantKind::parse(v)?,
            ("cost", "q") => self.q = parse_list(section, key, v)?,
            ("cost", "r") => self.r = parse_list(section, key, v)?,
            ("cost", "gamma") => self.gamma = parse_f64(section, key, v)?,
            ("rls", "kappa") => self.rls_kappa = parse_f64(section, key, v)?,
            ("rls", "lambda0") => self.rls_lambda0 = parse_f64(section, key, v)?,
            ("kernel", "kappa") => self.kernel_kappa = parse_f64(section, key, v)?,
            ("kernel", "lambda0") => self.kernel_lambda0 = parse_f64(section, key, v)?,
            ("policy", "base_gain") => self.base_gain = parse_list(section, key, v)?,
            ("policy", "tau_p") => self.tau_p = parse_f64(section, key, v)?,
            ("policy", "max_iterations") => {
                self.max_iterations = parse_int(section, key, v)?
            }
            ("policy", "probe_radius") => self.probe_radius = parse_f64(section, key, v)?,
            ("policy", "u_min") => self.u_min = Some(parse_f64(section, key, v)?),
            ("policy", "u_max") => self.u_max = Some(parse_f64(section, key, v)?),
            ("excitation", "episodes") => self.episodes = parse_int(section, key, v)?,
            ("excitation", "episode_len") => {
                self.episode_len = parse_int(section, key, v)?
            }
            ("excitation", "x0_box") => self.x0_box = parse_f64(section, key, v)?,
            ("excitation", "amplitudes") => self.amplitudes = parse_list(section, key, v)?,
            ("excitation", "frequencies") => {
                self.frequencies = parse_list(section, key, v)?
            }
            ("sim", "x0") => self.x0 = parse_list(section, key, v)?,
            ("sim", "horizon") => self.horizon = parse_int(section, key, v)?,
            ("sim", "blowup_radius") => self.blowup_radius = parse_f64(section, key, v)?,
            ("online", "settle_step") => self.settle_step = parse_int(section, key, v)?,
            ("online", "settle_radius") => {
                self.settle_radius = parse_f64(section, key, v)?
            }
            ("online", "envelope_factor") => {
                self.envelope_factor = parse_f64(section, key, v)?
            }
            ("output", "dir") => self.out_dir = Some(v.to_string()),
            _ => {
                return Err(Error::Config(format!(
                    "unknown configuration key `{section}.{key}`"
                )))
            }
        }
        Ok(())
    }

    /// Parses a config document on top of the defaults. Duplicate keys are
    /// rejected — a file assigning the same key twice is almost certainly a
    /// botched edit.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let lineno = idx + 1;
            let (key_part, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {lineno}: expected `section.key = value`"))
            })?;
            let (section, key) = key_part.trim().split_once('.').ok_or_else(|| {
                Error::Config(format!("line {lineno}: key must be of the form section.key"))
            })?;
            let (section, key) = (section.trim(), key.trim());
            if !seen.insert((section.to_string(), key.to_string())) {
                return Err(Error::Config(format!(
                    "line {lineno}: duplicate key `{section}.{key}`"
                )));
            }
            cfg.set(section, key, value)
                .map_err(|e| match e {
                    Error::Config(msg) => Error::Config(format!("line {lineno}: {msg}")),
                    other => other,
                })?;
        }
        Ok(cfg)
    }

    /// Reads, parses, applies process-environment overrides, and validates.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::parse(&text)?;
        cfg.apply_env(std::env::vars())?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies `IPI_<SECTION>_<KEY>` overrides from an explicit variable
    /// list. The section is the token before the first underscore after the
    /// prefix (sections are single words by construction); the rest is the
    /// key, lowercased.
    pub fn apply_env(
        &mut self,
        vars: impl Iterator<Item = (String, String)>,
    ) -> Result<()> {
        for (name, value) in vars {
            let Some(rest) = name.strip_prefix("IPI_") else {
                continue;
            };
            let Some((section, key)) = rest.split_once('_') else {
                return Err(Error::Config(format!(
                    "environment override {name} is missing a key part"
                )));
            };
            let (section, key) = (section.to_lowercase(), key.to_lowercase());
            self.set(&section, &key, &value).map_err(|e| match e {
                Error::Config(msg) => {
                    Error::Config(format!("environment override {name}: {msg}"))
                }
                other => other,
            })?;
        }
        Ok(())
    }

    /// Revalidates every cross-field invariant; called on load and before
    /// any run.
    // Negated comparisons are intentional: `!(x > 0.0)` rejects NaN, where
    // `x <= 0.0` would let it through.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        self.cost_spec()?;
        self.rls_config().validate()?;
        self.kernel_config().validate()?;
        let n = self.plant.build().state_dim();
        let m = self.plant.build().input_dim();
        if self.base_gain.len() != n * m {
            return Err(Error::Config(format!(
                "policy.base_gain has {} entries, expected {}",
                self.base_gain.len(),
                n * m
            )));
        }
        if self.x0.len() != n {
            return Err(Error::Config(format!(
                "sim.x0 has {} entries but the plant has {n} states",
                self.x0.len()
            )));
        }
        if !(self.tau_p > 0.0) {
            return Err(Error::Config("policy.tau_p must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config(
                "policy.max_iterations must be at least 1".into(),
            ));
        }
        if !(self.probe_radius > 0.0) {
            return Err(Error::Config("policy.probe_radius must be positive".into()));
        }
        self.input_box()?;
        if self.amplitudes.len() != self.frequencies.len() {
            return Err(Error::Config(
                "excitation.amplitudes and excitation.frequencies must pair up".into(),
            ));
        }
        if self.horizon == 0 {
            return Err(Error::Config("sim.horizon must be at least 1".into()));
        }
        if !(self.blowup_radius > 0.0) {
            return Err(Error::Config("sim.blowup_radius must be positive".into()));
        }
        if !(self.settle_radius > 0.0 && self.envelope_factor > 0.0) {
            return Err(Error::Config(
                "online.settle_radius and online.envelope_factor must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Canonical re-serialization: every key, fixed order, shortest-
    /// roundtrip floats. Optional keys appear only when set.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        let mut line = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        line("cost.gamma", self.gamma.to_string());
        line("cost.q", join(&self.q));
        line("cost.r", join(&self.r));
        line("excitation.amplitudes", join(&self.amplitudes));
        line("excitation.episode_len", self.episode_len.to_string());
        line("excitation.episodes", self.episodes.to_string());
        line("excitation.frequencies", join(&self.frequencies));
        line("excitation.x0_box", self.x0_box.to_string());
        line("experiment.name", self.name.clone());
        line("experiment.seed", self.seed.to_string());
        line("kernel.kappa", self.kernel_kappa.to_string());
        line("kernel.lambda0", self.kernel_lambda0.to_string());
        line("online.envelope_factor", self.envelope_factor.to_string());
        line("online.settle_radius", self.settle_radius.to_string());
        line("online.settle_step", self.settle_step.to_string());
        if let Some(dir) = &self.out_dir {
            line("output.dir", dir.clone());
        }
        line("plant.model", self.plant.name().to_string());
        line("policy.base_gain", join(&self.base_gain));
        line("policy.max_iterations", self.max_iterations.to_string());
        line("policy.probe_radius", self.probe_radius.to_string());
        line("policy.tau_p", self.tau_p.to_string());
        if let Some(u) = self.u_min {
            line("policy.u_min", u.to_string());
        }
        if let Some(u) = self.u_max {
            line("policy.u_max", u.to_string());
        }
        line("rls.kappa", self.rls_kappa.to_string());
        line("rls.lambda0", self.rls_lambda0.to_string());
        line("sim.blowup_radius", self.blowup_radius.to_string());
        line("sim.horizon", self.horizon.to_string());
        line("sim.x0", join(&self.x0));
        s
    }

    /// SHA-256 of the canonical serialization, as lowercase hex.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().fold(String::new(), |mut acc, b| {
            let _ = write!(acc, "{b:02x}");
            acc
        })
    }

    // ---- typed views -------------------------------------------------

    pub fn cost_spec(&self) -> Result<CostSpec> {
        let n = (self.q.len() as f64).sqrt() as usize;
        if n * n != self.q.len() {
            return Err(Error::Config(format!(
                "cost.q has {} entries, which is not a square matrix",
                self.q.len()
            )));
        }
        let m = (self.r.len() as f64).sqrt() as usize;
        if m * m != self.r.len() {
            return Err(Error::Config(format!(
                "cost.r has {} entries, which is not a square matrix",
                self.r.len()
            )));
        }
        CostSpec::new(
            DMatrix::from_row_slice(n, n, &self.q),
            DMatrix::from_row_slice(m, m, &self.r),
            self.gamma,
        )
    }

    pub fn rls_config(&self) -> RlsConfig {
        RlsConfig {
            kappa: self.rls_kappa,
            lambda0: self.rls_lambda0,
        }
    }

    pub fn kernel_config(&self) -> RlsConfig {
        RlsConfig {
            kappa: self.kernel_kappa,
            lambda0: self.kernel_lambda0,
        }
    }

    pub fn online_config(&self) -> Result<OnlineConfig> {
        Ok(OnlineConfig {
            model_rls: self.rls_config(),
            kernel_rls: self.kernel_config(),
            input_box: self.input_box()?,
        })
    }

    pub fn input_box(&self) -> Result<Option<InputBox>> {
        match (self.u_min, self.u_max) {
            (None, None) => Ok(None),
            (Some(lo), Some(hi)) => Ok(Some(InputBox::new(lo, hi)?)),
            _ => Err(Error::Config(
                "policy.u_min and policy.u_max must be set together".into(),
            )),
        }
    }

    pub fn collect_config(&self) -> CollectConfig {
        CollectConfig {
            episodes: self.episodes,
            episode_len: self.episode_len,
            x0_box: self.x0_box,
            amplitudes: self.amplitudes.clone(),
            frequencies: self.frequencies.clone(),
            seed: self.seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            tau_p: self.tau_p,
            max_iterations: self.max_iterations,
        }
    }

    /// Startup policy as a gain matrix (direct convention u = Gx).
    pub fn base_gain_matrix(&self) -> DMatrix<f64> {
        let n = self.x0.len();
        let m = self.base_gain.len() / n.max(1);
        DMatrix::from_row_slice(m, n, &self.base_gain)
    }

    pub fn x0_vector(&self) -> DVector<f64> {
        DVector::from_vec(self.x0.clone())
    }
}
