//! The optimization loop: per-request Adam updates on the composite loss,
//! Self-Evolving weights against a periodic snapshot, ablation-variant
//! switches, and the training trace.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::domain::{ObjectiveId, Request};
use crate::evolve::{self, MetricKind, ObjectiveWeights, SnapshotPolicy};
use crate::features;
use crate::losses::{self, LossConfig};
use crate::ranknet::{self, ModelConfig, ModelParams};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid train config: {0}")]
    InvalidConfig(String),
    #[error("unknown variant `{0}`")]
    UnknownVariant(String),
    #[error("config file line {line}: {message}")]
    MalformedConfig { line: usize, message: String },
    #[error("non-finite loss at step {step} on request {request_id}")]
    NonFiniteLoss { step: usize, request_id: String },
    #[error("training log is empty")]
    EmptyLog,
    #[error("model error: {0}")]
    Model(#[from] ranknet::RankNetError),
    #[error("loss error: {0}")]
    Loss(#[from] losses::LossError),
    #[error("evolve error: {0}")]
    Evolve(#[from] evolve::EvolveError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Ablation variants from the experiment section.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Full,
    Nocomp,
    Nopost,
    Noprior,
    Noevolve,
    Noiput,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Full,
        Variant::Nocomp,
        Variant::Nopost,
        Variant::Noprior,
        Variant::Noevolve,
        Variant::Noiput,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::Nocomp => "nocomp",
            Variant::Nopost => "nopost",
            Variant::Noprior => "noprior",
            Variant::Noevolve => "noevolve",
            Variant::Noiput => "noiput",
        }
    }

    pub fn from_name(name: &str) -> Result<Variant, TrainError> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == name)
            .ok_or_else(|| TrainError::UnknownVariant(name.to_string()))
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// The pipeline toggles a variant controls.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PipelineSwitches {
    pub attention: bool,
    pub zero_ranks: bool,
    pub use_posterior: bool,
    pub use_prior: bool,
    pub evolve: bool,
    pub use_iput: bool,
}

/// Maps a variant onto its pipeline switches: nocomp drops the comparative
/// machinery (attention and normalized ranks), nopost/noprior drop one loss
/// term, noevolve pins unit weights, noiput uses raw interaction pxtrs.
pub fn apply_variant(variant: Variant) -> PipelineSwitches {
    let full = PipelineSwitches {
        attention: true,
        zero_ranks: false,
        use_posterior: true,
        use_prior: true,
        evolve: true,
        use_iput: true,
    };
    match variant {
        Variant::Full => full,
        Variant::Nocomp => PipelineSwitches { attention: false, zero_ranks: true, ..full },
        Variant::Nopost => PipelineSwitches { use_posterior: false, ..full },
        Variant::Noprior => PipelineSwitches { use_prior: false, ..full },
        Variant::Noevolve => PipelineSwitches { evolve: false, ..full },
        Variant::Noiput => PipelineSwitches { use_iput: false, ..full },
    }
}

/// Full training configuration. `paper_learning_rate` records the production
/// value (5e-6) for reference; the desk-scale default is 1e-3.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Optimizer steps; the log is consumed in order, cycling when steps
    /// exceed its length. 0 performs no updates.
    pub steps: usize,
    /// Learning-rate floor as a fraction of `learning_rate`; the rate decays
    /// linearly from `learning_rate` to `learning_rate * final_lr_fraction`
    /// over the run. 1.0 keeps the rate constant.
    pub final_lr_fraction: f64,
    pub snapshot_interval: usize,
    pub max_pairs: usize,
    pub metric_kind: MetricKind,
    pub k: usize,
    pub variant: Variant,
    pub seed: u64,
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            steps: 0,
            final_lr_fraction: 1.0,
            snapshot_interval: 100,
            max_pairs: 256,
            metric_kind: MetricKind::Dcg,
            k: 6,
            variant: Variant::Full,
            seed: 0,
            d_model: 32,
            layers: 2,
            heads: 4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate > 0.0) {
            return Err(TrainError::InvalidConfig("learning_rate must be positive".into()));
        }
        if !(self.final_lr_fraction > 0.0 && self.final_lr_fraction <= 1.0) {
            return Err(TrainError::InvalidConfig("final_lr_fraction must be in (0, 1]".into()));
        }
        if self.snapshot_interval == 0 {
            return Err(TrainError::InvalidConfig("snapshot_interval must be positive".into()));
        }
        if self.max_pairs == 0 {
            return Err(TrainError::InvalidConfig("max_pairs must be positive".into()));
        }
        if self.k == 0 {
            return Err(TrainError::InvalidConfig("k must be positive".into()));
        }
        if self.d_model == 0 || self.layers == 0 || self.heads == 0 {
            return Err(TrainError::InvalidConfig("model dimensions must be positive".into()));
        }
        if self.d_model % self.heads != 0 {
            return Err(TrainError::InvalidConfig(format!(
                "d_model {} not divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        Ok(())
    }

    /// Applies `key = value` lines from a flat config file over `self`.
    /// Unknown keys are errors.
    pub fn apply_file(&mut self, path: &Path) -> Result<(), TrainError> {
        let text = fs::read_to_string(path)?;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (key, value) = trimmed.split_once('=').ok_or_else(|| {
                TrainError::MalformedConfig { line, message: format!("`{trimmed}` is not key = value") }
            })?;
            self.apply_kv(key.trim(), value.trim())
                .map_err(|message| TrainError::MalformedConfig { line, message })?;
        }
        self.validate()
    }

    fn apply_kv(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String>
        where
            T::Err: std::fmt::Display,
        {
            value.parse().map_err(|e| format!("bad value `{value}` for {key}: {e}"))
        }
        match key {
            "learning_rate" => self.learning_rate = num(key, value)?,
            "beta1" => self.beta1 = num(key, value)?,
            "beta2" => self.beta2 = num(key, value)?,
            "epsilon" => self.epsilon = num(key, value)?,
            "steps" => self.steps = num(key, value)?,
            "final_lr_fraction" => self.final_lr_fraction = num(key, value)?,
            "snapshot_interval" => self.snapshot_interval = num(key, value)?,
            "max_pairs" => self.max_pairs = num(key, value)?,
            "k" => self.k = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "d_model" => self.d_model = num(key, value)?,
            "layers" => self.layers = num(key, value)?,
            "heads" => self.heads = num(key, value)?,
            "metric_kind" => {
                self.metric_kind = MetricKind::from_name(value)
                    .ok_or_else(|| format!("unknown metric_kind `{value}`"))?
            }
            "variant" => {
                self.variant = Variant::from_name(value).map_err(|e| e.to_string())?
            }
            other => return Err(format!("unknown config key `{other}`")),
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        let switches = apply_variant(self.variant);
        ModelConfig {
            d_model: self.d_model,
            layers: self.layers,
            heads: self.heads,
            attention: switches.attention,
        }
    }
}

/// One trace row per optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub total: f64,
    pub posterior: f64,
    pub per_objective: [f64; ObjectiveId::COUNT],
    pub weights: [f64; ObjectiveId::COUNT],
}

pub const TRACE_HEADER: &str = "step,total,posterior,l_pvtr,l_pctr,l_plvtr,l_pcpr,l_pltr,l_pwtr,l_pcmtr,l_pftr,w_pvtr,w_pctr,w_plvtr,w_pcpr,w_pltr,w_pwtr,w_pcmtr,w_pftr";

pub fn write_trace(path: &Path, rows: &[TraceRow]) -> Result<(), TrainError> {
    let mut text = String::from(TRACE_HEADER);
    text.push('\n');
    for r in rows {
        text.push_str(&format!("{},{},{}", r.step, r.total, r.posterior));
        for v in r.per_objective {
            text.push_str(&format!(",{v}"));
        }
        for w in r.weights {
            text.push_str(&format!(",{w}"));
        }
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

pub struct TrainOutput {
    pub params: ModelParams,
    pub trace: Vec<TraceRow>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: usize,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, cfg: &TrainConfig, lr: f64, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * grads[i];
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
}

/// Distinct pair-sampling stream per step, derived from the run seed.
fn step_seed(seed: u64, step: usize) -> u64 {
    seed.wrapping_add((step as u64).wrapping_mul(0x9E3779B97F4A7C15))
}

/// Trains for `cfg.steps` optimizer steps, one request per step in log
/// order (cycling). Fully deterministic for a fixed (config, log).
pub fn train(cfg: &TrainConfig, log: &[Request]) -> Result<TrainOutput, TrainError> {
    cfg.validate()?;
    if log.is_empty() {
        return Err(TrainError::EmptyLog);
    }
    let switches = apply_variant(cfg.variant);
    let mut params = ranknet::init(cfg.seed, cfg.model_config())?;
    let mut adam = Adam::new(params.param_count());
    let mut snapshot = SnapshotPolicy::new(cfg.snapshot_interval, params.clone());
    let mut trace = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let request = &log[step % log.len()];
        snapshot.maybe_snapshot(step, &params);
        debug_assert!(snapshot.staleness(step) <= cfg.snapshot_interval);

        let feats = features::encode_with(request, switches.zero_ranks);
        let view = feats.view();
        let (scores, cache) = ranknet::forward_cached(&params, &view)?;

        let weights = if switches.evolve {
            let prev_scores = ranknet::forward(&snapshot.previous_params, &view)?;
            let k = cfg.k.min(request.candidates.len());
            evolve::compute_weights_from_scores(
                request,
                &scores.0,
                &prev_scores.0,
                cfg.metric_kind,
                k,
                switches.use_iput,
            )?
        } else {
            ObjectiveWeights::ones()
        };

        let loss_cfg = LossConfig {
            max_pairs: cfg.max_pairs,
            use_iput: switches.use_iput,
            use_posterior: switches.use_posterior,
            use_prior: switches.use_prior,
            zero_ranks: switches.zero_ranks,
            seed: step_seed(cfg.seed, step),
        };
        let (breakdown, grads) =
            losses::total_loss_with_forward(&params, request, &weights, &loss_cfg, &scores.0, &cache)?;
        if !breakdown.total.is_finite() {
            return Err(TrainError::NonFiniteLoss { step, request_id: request.request_id.clone() });
        }

        let progress = if cfg.steps > 1 { step as f64 / (cfg.steps - 1) as f64 } else { 0.0 };
        let lr = cfg.learning_rate * (1.0 - (1.0 - cfg.final_lr_fraction) * progress);
        adam.step(cfg, lr, params.as_mut_slice(), &grads);
        trace.push(TraceRow {
            step,
            total: breakdown.total,
            posterior: breakdown.posterior_loss,
            per_objective: breakdown.per_objective,
            weights: weights.w,
        });
    }
    Ok(TrainOutput { params, trace })
}
