//! Experiment orchestration: configs, artifact management, and the
//! accuracy-vs-SNR evaluation harness.
//!
//! Everything an experiment produces is a pure function of its
//! `ExperimentConfig`: datasets, checkpoints, calibrations, and noise draws
//! all derive from the seeds block. Rerunning with an equal config yields
//! byte-identical CSV output.

mod emit;
mod eval;

pub use emit::{emit_outputs, parse_records_csv, render_accuracy_plot};

use crate::covnet::{covnet_train, load_covnet, save_covnet, CovNetConfig, CovNetReport};
use crate::decision::{save_calibration, FeatureMode};
use crate::error::{Error, Result};
use crate::sim::{build_dataset, read_dataset, write_dataset, Dataset, ScenarioConfig};
use crate::vae::{
    load_model, save_model, train, ModelParameters, TrainConfig, TrainReport, VaeArch, VaeVariant,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "aic")]
    Aic,
    #[serde(rename = "mdl")]
    Mdl,
    #[serde(rename = "vae-c")]
    VaeC,
    #[serde(rename = "vae-e")]
    VaeE,
    #[serde(rename = "vae-c-sigma2")]
    VaeCSigma2,
    #[serde(rename = "vae-e-sigma2")]
    VaeESigma2,
    #[serde(rename = "covnet")]
    CovNet,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Aic,
        Method::Mdl,
        Method::VaeC,
        Method::VaeE,
        Method::VaeCSigma2,
        Method::VaeESigma2,
        Method::CovNet,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Aic => "aic",
            Method::Mdl => "mdl",
            Method::VaeC => "vae-c",
            Method::VaeE => "vae-e",
            Method::VaeCSigma2 => "vae-c-sigma2",
            Method::VaeESigma2 => "vae-e-sigma2",
            Method::CovNet => "covnet",
        }
    }

    pub fn is_ic(self) -> bool {
        matches!(self, Method::Aic | Method::Mdl)
    }

    /// Model variant and feature mode behind a VAE method; None otherwise.
    pub fn vae_parts(self) -> Option<(VaeVariant, FeatureMode)> {
        match self {
            Method::VaeC => Some((VaeVariant::KnownNoise, FeatureMode::Spectrum)),
            Method::VaeE => Some((VaeVariant::KnownNoise, FeatureMode::Eigen)),
            Method::VaeCSigma2 => Some((VaeVariant::LearnedNoise, FeatureMode::Spectrum)),
            Method::VaeESigma2 => Some((VaeVariant::LearnedNoise, FeatureMode::Eigen)),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let known: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
                Error::Config(format!(
                    "unknown method {s:?}; known methods: {}",
                    known.join(", ")
                ))
            })
    }
}

pub fn variant_name(v: VaeVariant) -> &'static str {
    match v {
        VaeVariant::KnownNoise => "known-noise",
        VaeVariant::LearnedNoise => "learned-noise",
    }
}

pub fn parse_variant(s: &str) -> Result<VaeVariant> {
    match s {
        "known-noise" => Ok(VaeVariant::KnownNoise),
        "learned-noise" => Ok(VaeVariant::LearnedNoise),
        _ => Err(Error::invalid(format!(
            "unknown variant {s:?}; expected known-noise or learned-noise"
        ))),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub n_antennas: usize,
    pub oversampling: usize,
    pub max_order: usize,
    /// Evaluation grid, strictly ascending dB values.
    pub snr_grid_db: Vec<f64>,
    /// Snapshots per evaluation sample; 1 or 5.
    pub eval_snapshots: usize,
    /// Range the per-sample training SNRs are drawn from.
    pub train_snr_range_db: (f64, f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataSpec {
    pub train_per_mo: usize,
    pub eval_per_mo: usize,
    pub calib_per_mo: usize,
    /// Snapshots per sample in the VAE training set (snapshots are
    /// flattened into independent items during training).
    pub train_snapshots: usize,
    /// Snapshots per sample in the classifier training set.
    pub covnet_snapshots: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub train_data: u64,
    pub covnet_data: u64,
    pub calib_data: u64,
    pub eval_data: u64,
    pub vae_train: u64,
    pub covnet_train: u64,
}

impl Seeds {
    /// Spread one master seed over the six roles. RNG substreams already
    /// separate draw domains, so plain offsets keep the roles independent.
    pub fn from_master(seed: u64) -> Self {
        Self {
            train_data: seed.wrapping_add(1),
            covnet_data: seed.wrapping_add(2),
            calib_data: seed.wrapping_add(3),
            eval_data: seed.wrapping_add(4),
            vae_train: seed.wrapping_add(5),
            covnet_train: seed.wrapping_add(6),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VaeSpec {
    pub latent_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovNetSpec {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputSpec {
    /// The entropy histogram is taken at the grid point nearest this SNR.
    pub histogram_snr_db: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathSpec {
    pub data_dir: PathBuf,
    pub model_dir: PathBuf,
    pub out_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub methods: Vec<Method>,
    pub scenario: ScenarioSpec,
    pub data: DataSpec,
    pub seeds: Seeds,
    pub vae: VaeSpec,
    pub covnet: CovNetSpec,
    pub outputs: OutputSpec,
    pub paths: PathSpec,
    /// Config file this was loaded from, if any; used to phrase exact
    /// build commands in missing-artifact errors. Not part of the config
    /// identity.
    #[serde(skip)]
    pub source: Option<PathBuf>,
}

/// Which stored dataset an operation needs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataRole {
    VaeTrain,
    CovnetTrain,
    Calib,
    Eval,
}

impl ExperimentConfig {
    /// CI-scale defaults: small array, reduced sample counts, minutes of
    /// training instead of hours.
    pub fn desk() -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            scenario: ScenarioSpec {
                n_antennas: 16,
                oversampling: 4,
                max_order: 4,
                snr_grid_db: vec![-10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0],
                eval_snapshots: 5,
                train_snr_range_db: (-16.0, 26.0),
            },
            data: DataSpec {
                train_per_mo: 2000,
                eval_per_mo: 500,
                calib_per_mo: 500,
                train_snapshots: 1,
                covnet_snapshots: 10,
            },
            seeds: Seeds {
                train_data: 11,
                covnet_data: 12,
                calib_data: 13,
                eval_data: 14,
                vae_train: 21,
                covnet_train: 22,
            },
            vae: VaeSpec {
                latent_dim: 8,
                epochs: 200,
                batch_size: 128,
                learning_rate: 1e-4,
            },
            covnet: CovNetSpec {
                epochs: 30,
                batch_size: 64,
                learning_rate: 1e-3,
            },
            outputs: OutputSpec {
                histogram_snr_db: 10.0,
            },
            paths: PathSpec {
                data_dir: PathBuf::from("bench/data"),
                model_dir: PathBuf::from("bench/models"),
                out_dir: PathBuf::from("bench/out"),
            },
            source: None,
        }
    }

    /// Full-scale reproduction settings. Expect hours of compute.
    pub fn paper() -> Self {
        let mut cfg = Self::desk();
        cfg.scenario.n_antennas = 64;
        cfg.vae.latent_dim = 16;
        cfg.data.train_per_mo = 10_000;
        cfg.data.eval_per_mo = 1_000;
        cfg.data.calib_per_mo = 500;
        cfg.data.train_snapshots = 10;
        cfg.vae.epochs = 200;
        cfg.covnet.epochs = 60;
        cfg
    }

    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "paper" => Ok(Self::paper()),
            other => Err(Error::Config(format!(
                "unknown profile {other:?}; known profiles: desk, paper"
            ))),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: ExperimentConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.source = Some(path.to_path_buf());
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::Config("method list must not be empty".into()));
        }
        for (i, m) in self.methods.iter().enumerate() {
            if self.methods[..i].contains(m) {
                return Err(Error::Config(format!("method {m} listed twice")));
            }
        }
        let grid = &self.scenario.snr_grid_db;
        if grid.is_empty() {
            return Err(Error::Config("SNR grid must not be empty".into()));
        }
        if grid.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("SNR grid must be finite".into()));
        }
        if grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("SNR grid must be strictly ascending".into()));
        }
        if !matches!(self.scenario.eval_snapshots, 1 | 5) {
            return Err(Error::Config("eval_snapshots must be 1 or 5".into()));
        }
        let (lo, hi) = self.scenario.train_snr_range_db;
        if !lo.is_finite() || !hi.is_finite() || lo > hi {
            return Err(Error::Config("train_snr_range_db must be finite lo <= hi".into()));
        }
        if self.data.train_per_mo < 1
            || self.data.eval_per_mo < 1
            || self.data.calib_per_mo < 1
            || self.data.train_snapshots < 1
            || self.data.covnet_snapshots < 1
        {
            return Err(Error::Config("sample and snapshot counts must be >= 1".into()));
        }
        if self.vae.latent_dim < 1 || self.vae.epochs < 1 || self.vae.batch_size < 1 {
            return Err(Error::Config("vae settings must be >= 1".into()));
        }
        if !(self.vae.learning_rate > 0.0) || !(self.covnet.learning_rate > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.covnet.epochs < 1 || self.covnet.batch_size < 1 {
            return Err(Error::Config("covnet settings must be >= 1".into()));
        }
        if !self.outputs.histogram_snr_db.is_finite() {
            return Err(Error::Config("histogram_snr_db must be finite".into()));
        }
        // Scenario-level constraints (array geometry, max_order vs N).
        self.scenario_config(DataRole::Eval)
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    /// Identity of this configuration; embedded in every output file.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn scenario_config(&self, role: DataRole) -> ScenarioConfig {
        let t = match role {
            DataRole::VaeTrain => self.data.train_snapshots,
            DataRole::CovnetTrain => self.data.covnet_snapshots,
            DataRole::Calib | DataRole::Eval => self.scenario.eval_snapshots,
        };
        ScenarioConfig {
            n_antennas: self.scenario.n_antennas,
            oversampling: self.scenario.oversampling,
            max_order: self.scenario.max_order,
            snr_range_db: self.scenario.train_snr_range_db,
            t_snapshots: t,
        }
    }

    pub fn dataset_path(&self, role: DataRole) -> PathBuf {
        let t = self.scenario.eval_snapshots;
        let name = match role {
            DataRole::VaeTrain => "vae-train.mosdat".to_string(),
            DataRole::CovnetTrain => "covnet-train.mosdat".to_string(),
            DataRole::Calib => format!("calib-t{t}.mosdat"),
            DataRole::Eval => format!("eval-t{t}.mosdat"),
        };
        self.paths.data_dir.join(name)
    }

    fn dataset_spec(&self, role: DataRole) -> (usize, u64) {
        match role {
            DataRole::VaeTrain => (self.data.train_per_mo, self.seeds.train_data),
            DataRole::CovnetTrain => (self.data.train_per_mo, self.seeds.covnet_data),
            DataRole::Calib => (self.data.calib_per_mo, self.seeds.calib_data),
            DataRole::Eval => (self.data.eval_per_mo, self.seeds.eval_data),
        }
    }

    pub fn vae_ckpt_path(&self, variant: VaeVariant) -> PathBuf {
        self.paths
            .model_dir
            .join(format!("vae-{}.ckpt", variant_name(variant)))
    }

    pub fn covnet_ckpt_path(&self) -> PathBuf {
        self.paths.model_dir.join("covnet.ckpt")
    }

    pub fn calibration_path(&self, method: Method, grid_index: usize) -> PathBuf {
        self.paths.model_dir.join(format!(
            "calib-{}-t{}-g{}.json",
            method.name(),
            self.scenario.eval_snapshots,
            grid_index
        ))
    }

    pub fn csv_path(&self) -> PathBuf {
        self.paths
            .out_dir
            .join(format!("results-t{}.csv", self.scenario.eval_snapshots))
    }

    pub fn accuracy_plot_path(&self) -> PathBuf {
        self.paths
            .out_dir
            .join(format!("accuracy-t{}.svg", self.scenario.eval_snapshots))
    }

    pub fn entropy_plot_path(&self) -> PathBuf {
        self.paths
            .out_dir
            .join(format!("entropy-hist-t{}.svg", self.scenario.eval_snapshots))
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.paths
            .out_dir
            .join(format!("manifest-t{}.json", self.scenario.eval_snapshots))
    }

    pub fn vae_arch(&self, variant: VaeVariant) -> VaeArch {
        VaeArch {
            n_antennas: self.scenario.n_antennas,
            oversampling: self.scenario.oversampling,
            latent_dim: self.vae.latent_dim,
            variant,
        }
    }

    /// The methods an evaluation at this config actually runs: information
    /// criteria need a sample covariance of usable rank, so they are
    /// dropped at T = 1.
    pub fn effective_methods(&self) -> Vec<Method> {
        self.methods
            .iter()
            .copied()
            .filter(|m| !(m.is_ic() && self.scenario.eval_snapshots == 1))
            .collect()
    }

    pub fn source_name(&self) -> String {
        self.source
            .as_ref()
            .map(|p| p.display().to_string())
            .unwrap_or_else(|| "<config.toml>".to_string())
    }
}

/// One evaluation cell: a method's confusion over the eval set at one SNR.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub method: Method,
    pub snr_db: f64,
    pub accuracy: f64,
    /// Counts indexed [true MO][predicted MO], (L_max+1)².
    pub confusion: Vec<Vec<u64>>,
    pub total: u64,
}

impl EvalRecord {
    pub fn from_confusion(method: Method, snr_db: f64, confusion: Vec<Vec<u64>>) -> Result<Self> {
        let n = confusion.len();
        if n == 0 || confusion.iter().any(|row| row.len() != n) {
            return Err(Error::dims("confusion matrix must be square"));
        }
        let total: u64 = confusion.iter().flatten().sum();
        if total == 0 {
            return Err(Error::invalid("confusion matrix holds no samples"));
        }
        let trace: u64 = (0..n).map(|i| confusion[i][i]).sum();
        let accuracy = trace as f64 / total as f64;
        Ok(Self {
            method,
            snr_db,
            accuracy,
            confusion,
            total,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.confusion.len();
        if n == 0 || self.confusion.iter().any(|row| row.len() != n) {
            return Err(Error::Format("confusion matrix must be square".into()));
        }
        let total: u64 = self.confusion.iter().flatten().sum();
        let trace: u64 = (0..n).map(|i| self.confusion[i][i]).sum();
        if total != self.total {
            return Err(Error::Format(format!(
                "total {} does not match confusion sum {total}",
                self.total
            )));
        }
        if self.accuracy != trace as f64 / total as f64 {
            return Err(Error::Format("accuracy does not match confusion trace".into()));
        }
        Ok(())
    }
}

/// Entropy values of the histogram method's feature at one SNR, grouped by
/// true model order 1..=L_max (order zero is excluded).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyHistogram {
    pub method: Method,
    pub snr_db: f64,
    pub per_mo: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunArtifacts {
    pub records: Vec<EvalRecord>,
    pub entropy_histogram: Option<EntropyHistogram>,
}

/// Load a stored dataset for `role`, or build and store it. A present file
/// that disagrees with the config is an error, never silently regenerated.
pub fn ensure_dataset(config: &ExperimentConfig, role: DataRole) -> Result<Dataset> {
    let path = config.dataset_path(role);
    let scen = config.scenario_config(role);
    let (per_mo, seed) = config.dataset_spec(role);
    if path.exists() {
        let ds = read_dataset(&path)?;
        if ds.config != scen || ds.seed != seed || ds.len() != per_mo * (scen.max_order + 1) {
            return Err(Error::Config(format!(
                "dataset {} was generated under a different config; delete it to regenerate",
                path.display()
            )));
        }
        return Ok(ds);
    }
    let ds = build_dataset(&scen, per_mo, seed)?;
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    write_dataset(&ds, &path)?;
    Ok(ds)
}

/// Train the VAE for `variant` on the experiment's training data and store
/// the checkpoint. Always retrains; callers decide whether to skip.
pub fn train_vae_artifact(
    config: &ExperimentConfig,
    variant: VaeVariant,
) -> Result<(PathBuf, TrainReport)> {
    let ds = ensure_dataset(config, DataRole::VaeTrain)?;
    let mut tc = TrainConfig::new(
        variant,
        config.vae.latent_dim,
        config.vae.epochs,
        config.seeds.vae_train,
    );
    tc.learning_rate = config.vae.learning_rate;
    tc.batch_size = config.vae.batch_size;
    tc.snr_range_db = config.scenario.train_snr_range_db;
    let outcome = train(&ds, &tc)?;
    let path = config.vae_ckpt_path(variant);
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    save_model(&outcome.params, &path)?;
    Ok((path, outcome.report))
}

pub fn train_covnet_artifact(config: &ExperimentConfig) -> Result<(PathBuf, CovNetReport)> {
    let ds = ensure_dataset(config, DataRole::CovnetTrain)?;
    let cc = CovNetConfig {
        learning_rate: config.covnet.learning_rate,
        batch_size: config.covnet.batch_size,
        epochs: config.covnet.epochs,
        seed: config.seeds.covnet_train,
    };
    let outcome = covnet_train(&ds, &cc)?;
    let path = config.covnet_ckpt_path();
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    save_covnet(&path, &outcome.params)?;
    Ok((path, outcome.report))
}

fn load_vae_checkpoint(config: &ExperimentConfig, variant: VaeVariant) -> Result<ModelParameters> {
    let path = config.vae_ckpt_path(variant);
    if !path.exists() {
        return Err(Error::MissingArtifact {
            path: path.display().to_string(),
            build_command: format!(
                "moselect train-vae --config {} --variant {}",
                config.source_name(),
                variant_name(variant)
            ),
        });
    }
    let params = load_model(&path)?;
    let expected = config.vae_arch(variant);
    if params.arch != expected {
        return Err(Error::Config(format!(
            "checkpoint {} was trained for a different architecture",
            path.display()
        )));
    }
    Ok(params)
}

fn load_covnet_checkpoint(config: &ExperimentConfig) -> Result<crate::covnet::CovNetParameters> {
    let path = config.covnet_ckpt_path();
    if !path.exists() {
        return Err(Error::MissingArtifact {
            path: path.display().to_string(),
            build_command: format!("moselect train-covnet --config {}", config.source_name()),
        });
    }
    let params = load_covnet(&path)?;
    if params.n_antennas != config.scenario.n_antennas
        || params.n_classes != config.scenario.max_order + 1
    {
        return Err(Error::Config(format!(
            "checkpoint {} was trained for a different scenario",
            path.display()
        )));
    }
    Ok(params)
}

/// Evaluate every requested method over every grid SNR. Datasets are built
/// on demand; trained checkpoints must already exist. Calibrations are
/// computed in memory, per SNR, from the calibration set.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunArtifacts> {
    config.validate()?;
    let effective = config.effective_methods();
    if effective.is_empty() {
        return Err(Error::Config(
            "no methods remain after dropping information criteria at T = 1".into(),
        ));
    }

    let eval_ds = ensure_dataset(config, DataRole::Eval)?;
    if eval_ds.is_empty() {
        return Err(Error::Config("evaluation dataset is empty".into()));
    }

    let mut vaes = Vec::new();
    for variant in [VaeVariant::KnownNoise, VaeVariant::LearnedNoise] {
        let methods: Vec<(Method, FeatureMode)> = effective
            .iter()
            .filter_map(|m| m.vae_parts().map(|(v, mode)| (v, (*m, mode))))
            .filter(|(v, _)| *v == variant)
            .map(|(_, pair)| pair)
            .collect();
        if methods.is_empty() {
            continue;
        }
        let params = load_vae_checkpoint(config, variant)?;
        vaes.push(eval::VaeEval::new(params, methods));
    }
    if !vaes.is_empty() {
        let calib_ds = ensure_dataset(config, DataRole::Calib)?;
        for ve in &mut vaes {
            ve.build_calibrations(&calib_ds, &config.scenario.snr_grid_db)?;
        }
    }

    let covnet = if effective.contains(&Method::CovNet) {
        Some(load_covnet_checkpoint(config)?)
    } else {
        None
    };

    eval::evaluate_grid(config, &eval_ds, &vaes, covnet.as_ref(), &effective)
}

/// Calibrate entropy thresholds for every selected VAE method at every grid
/// SNR and store them beside the checkpoints. `run_experiment` recomputes
/// calibrations in memory; these files exist for inspection and reuse.
pub fn write_calibrations(config: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    config.validate()?;
    let effective = config.effective_methods();
    let mut vaes = Vec::new();
    for variant in [VaeVariant::KnownNoise, VaeVariant::LearnedNoise] {
        let methods: Vec<(Method, FeatureMode)> = effective
            .iter()
            .filter_map(|m| m.vae_parts().map(|(v, mode)| (v, (*m, mode))))
            .filter(|(v, _)| *v == variant)
            .map(|(_, pair)| pair)
            .collect();
        if methods.is_empty() {
            continue;
        }
        let params = load_vae_checkpoint(config, variant)?;
        vaes.push(eval::VaeEval::new(params, methods));
    }
    if vaes.is_empty() {
        return Err(Error::Config(
            "no VAE methods selected; nothing to calibrate".into(),
        ));
    }
    let calib_ds = ensure_dataset(config, DataRole::Calib)?;
    std::fs::create_dir_all(&config.paths.model_dir)?;
    let mut paths = Vec::new();
    for ve in &mut vaes {
        ve.build_calibrations(&calib_ds, &config.scenario.snr_grid_db)?;
        for (mi, (method, _)) in ve.methods.iter().enumerate() {
            for (gi, cal) in ve.cals[mi].iter().enumerate() {
                let path = config.calibration_path(*method, gi);
                save_calibration(cal, &path)?;
                paths.push(path);
            }
        }
    }
    Ok(paths)
}
