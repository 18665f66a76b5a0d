//! Run configuration: flat TOML keys, overridden by command-line flags.
//!
//! Resolution order is defaults, then the `--config` file, then flags.
//! Every key of [`RunConfig`] has a flag of the same name with `_` spelled
//! `-`.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use pacer_core::lm::LmTrainConfig;
use pacer_core::pacer::PositionEncoding;
use pacer_core::train::PvTrainConfig;
use pacer_core::{CostModel, Criterion, DecodeConfig, DecodeMode, HaltConfig, ModelSpec, Scope};
use serde::{Deserialize, Serialize};

use crate::checkpoint::sha256_hex;
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    Fixed,
    Pacer,
    Prob,
    Entropy,
    Oracle,
}

impl PolicyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::Fixed => "fixed",
            PolicyKind::Pacer => "pacer",
            PolicyKind::Prob => "prob",
            PolicyKind::Entropy => "entropy",
            PolicyKind::Oracle => "oracle",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ModeArg {
    Greedy,
    Stochastic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum CriterionArg {
    Mean,
    Any,
    Last,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ScopeArg {
    Full,
    LocalDraft,
    LocalBlock,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum EncodingArg {
    Learned,
    Sinusoidal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SourceArg {
    /// Recompute draft hidden states through the frozen draft model.
    Recompute,
    /// Use the hidden states stored in the dataset.
    Stored,
}

/// Fully resolved configuration of one command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub command: String,
    pub target: Option<PathBuf>,
    pub draft: Option<PathBuf>,
    pub preverifier: Option<PathBuf>,
    /// Corpus file; the bundled corpus when unset.
    pub corpus: Option<PathBuf>,
    /// Prompt file; prompts are sampled from the corpus tail when unset.
    pub prompts: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,

    pub policy: PolicyKind,
    pub mode: ModeArg,
    pub gamma: usize,
    pub max_len: usize,
    pub block_size: usize,
    pub threshold: f64,
    pub growth: f64,
    pub max_rounds: usize,
    pub criterion: CriterionArg,
    pub scope: ScopeArg,
    pub prob_threshold: f64,
    pub entropy_threshold: f64,
    pub oracle_horizon: usize,
    pub gamma_min: usize,
    pub gamma_max: usize,

    pub cost_draft: f64,
    pub cost_target: f64,
    pub cost_pv: f64,

    pub context_len: usize,
    pub target_layers: usize,
    pub target_d_model: usize,
    pub target_heads: usize,
    pub target_steps: usize,
    pub draft_layers: usize,
    pub draft_d_model: usize,
    pub draft_heads: usize,
    pub draft_steps: usize,
    pub lm_batch: usize,
    pub lm_window: usize,
    pub lm_lr: f64,
    pub lm_warmup: usize,
    pub heldout_frac: f64,

    pub num_prompts: usize,
    pub bench_prompts: usize,
    pub prompt_len: usize,
    pub response_len: usize,
    pub gamma_train: usize,

    pub pv_heads: usize,
    pub pv_max_positions: usize,
    pub pv_encoding: EncodingArg,
    pub pv_source: SourceArg,
    pub pv_lr: f64,
    pub pv_epochs: usize,
    pub pv_batch: usize,
    pub pv_weight_decay: f64,
    pub pv_balance: bool,
    pub pv_max_rows: usize,
    pub pv_heldout_frac: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let halt = HaltConfig::default();
        let cm = CostModel::default();
        let lm = LmTrainConfig::default();
        let pv = PvTrainConfig::default();
        Self {
            command: String::new(),
            target: None,
            draft: None,
            preverifier: None,
            corpus: None,
            prompts: None,
            dataset: None,
            out: PathBuf::from("runs"),
            seed: 0,
            policy: PolicyKind::Pacer,
            mode: ModeArg::Greedy,
            gamma: 4,
            max_len: 64,
            block_size: halt.block,
            threshold: halt.threshold,
            growth: halt.growth,
            max_rounds: halt.max_rounds,
            criterion: CriterionArg::Mean,
            scope: ScopeArg::Full,
            prob_threshold: pacer_core::pacer::HeuristicPolicy::DEFAULT_PROB,
            entropy_threshold: pacer_core::pacer::HeuristicPolicy::DEFAULT_ENTROPY_BITS,
            oracle_horizon: pacer_core::metrics::ORACLE_HORIZON,
            gamma_min: 1,
            gamma_max: 16,
            cost_draft: cm.c_draft,
            cost_target: cm.c_target,
            cost_pv: cm.c_preverify,
            context_len: 160,
            target_layers: 2,
            target_d_model: 48,
            target_heads: 4,
            target_steps: 1000,
            draft_layers: 1,
            draft_d_model: 32,
            draft_heads: 4,
            draft_steps: 600,
            lm_batch: lm.batch,
            lm_window: lm.window,
            lm_lr: widen(lm.lr),
            lm_warmup: lm.warmup,
            heldout_frac: lm.heldout_frac,
            num_prompts: 60,
            bench_prompts: 40,
            prompt_len: 32,
            response_len: 96,
            gamma_train: pacer_core::train::GAMMA_TRAIN,
            pv_heads: 2,
            pv_max_positions: 64,
            pv_encoding: EncodingArg::Learned,
            pv_source: SourceArg::Recompute,
            pv_lr: widen(pv.lr),
            pv_epochs: pv.epochs,
            pv_batch: pv.batch,
            pv_weight_decay: widen(pv.weight_decay),
            pv_balance: pv.balance,
            pv_max_rows: 320,
            pv_heldout_frac: 0.2,
        }
    }
}

/// Command-line overrides; unset flags leave the file or default value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Args)]
pub struct Overrides {
    /// TOML file with `key = value` lines using the flag names.
    #[arg(long, global = true)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Print the resolved configuration as TOML and exit.
    #[arg(long, global = true)]
    #[serde(skip)]
    pub dump_config: bool,

    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target: Option<PathBuf>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub draft: Option<PathBuf>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preverifier: Option<PathBuf>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corpus: Option<PathBuf>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prompts: Option<PathBuf>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,

    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub policy: Option<PolicyKind>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<ModeArg>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<usize>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_len: Option<usize>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub block_size: Option<usize>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub growth: Option<f64>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_rounds: Option<usize>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub criterion: Option<CriterionArg>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scope: Option<ScopeArg>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prob_threshold: Option<f64>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub entropy_threshold: Option<f64>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_horizon: Option<usize>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_min: Option<usize>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_max: Option<usize>,

    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cost_draft: Option<f64>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cost_target: Option<f64>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cost_pv: Option<f64>,

    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub context_len: Option<usize>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_layers: Option<usize>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_d_model: Option<usize>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_heads: Option<usize>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_steps: Option<usize>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub draft_layers: Option<usize>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub draft_d_model: Option<usize>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub draft_heads: Option<usize>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub draft_steps: Option<usize>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lm_batch: Option<usize>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lm_window: Option<usize>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lm_lr: Option<f64>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lm_warmup: Option<usize>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub heldout_frac: Option<f64>,

    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub num_prompts: Option<usize>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bench_prompts: Option<usize>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prompt_len: Option<usize>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub response_len: Option<usize>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_train: Option<usize>,

    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pv_heads: Option<usize>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pv_max_positions: Option<usize>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pv_encoding: Option<EncodingArg>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pv_source: Option<SourceArg>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pv_lr: Option<f64>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pv_epochs: Option<usize>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pv_batch: Option<usize>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pv_weight_decay: Option<f64>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pv_balance: Option<bool>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pv_max_rows: Option<usize>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pv_heldout_frac: Option<f64>,
}

fn toml_table<T: Serialize>(v: &T) -> CliResult<toml::Table> {
    toml::Table::try_from(v).map_err(|e| CliError::runtime(format!("serializing config: {e}")))
}

impl RunConfig {
    /// Defaults, then `overrides.config`, then the set flags.
    pub fn resolve(command: &str, overrides: &Overrides) -> CliResult<Self> {
        let mut table = toml_table(&RunConfig::default())?;
        if let Some(path) = &overrides.config {
            for (k, v) in read_table(path)? {
                table.insert(k, v);
            }
        }
        for (k, v) in toml_table(overrides)? {
            table.insert(k, v);
        }
        table.insert("command".into(), toml::Value::String(command.into()));
        let cfg: RunConfig = table.try_into().map_err(|e| CliError::config(format!("invalid configuration: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::config(format!("invalid configuration: {e}")))
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| CliError::runtime(format!("serializing config: {e}")))
    }

    /// SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> CliResult<String> {
        Ok(sha256_hex(self.to_toml()?.as_bytes()))
    }

    pub fn validate(&self) -> CliResult<()> {
        self.halt().validate()?;
        self.cost_model().validate()?;
        self.decode().validate()?;
        self.lm_train(0).validate()?;
        self.pv_train().validate()?;
        self.target_spec(2).validate()?;
        self.draft_spec(2).validate()?;
        let checks = [
            (self.max_len >= 1, "max_len must be at least 1"),
            (self.gamma_min >= 1 && self.gamma_min <= self.gamma_max, "need 1 <= gamma_min <= gamma_max"),
            (self.oracle_horizon >= 1, "oracle_horizon must be at least 1"),
            (self.num_prompts >= 1 && self.bench_prompts >= 1, "prompt counts must be at least 1"),
            (self.prompt_len >= 1 && self.prompt_len < self.context_len, "prompt_len must lie in [1, context_len)"),
            (self.response_len >= 1 && self.gamma_train >= 1, "response_len and gamma_train must be at least 1"),
            (self.pv_max_positions >= 1 && self.pv_max_rows >= 2, "pv_max_positions >= 1 and pv_max_rows >= 2 are required"),
            ((0.0..1.0).contains(&self.pv_heldout_frac), "pv_heldout_frac must lie in [0, 1)"),
            (self.prob_threshold > 0.0 && self.prob_threshold < 1.0, "prob_threshold must lie in (0, 1)"),
            (self.entropy_threshold > 0.0, "entropy_threshold must be positive"),
            (self.pv_heads >= 1 && self.draft_d_model.is_multiple_of(self.pv_heads), "pv_heads must divide draft_d_model"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(CliError::config(*msg)),
            None => Ok(()),
        }
    }

    pub fn halt(&self) -> HaltConfig {
        HaltConfig {
            block: self.block_size,
            threshold: self.threshold,
            growth: self.growth,
            max_rounds: self.max_rounds,
            criterion: match self.criterion {
                CriterionArg::Mean => Criterion::Mean,
                CriterionArg::Any => Criterion::Any,
                CriterionArg::Last => Criterion::Last,
            },
            scope: self.scope_kind(),
        }
    }

    pub fn scope_kind(&self) -> Scope {
        match self.scope {
            ScopeArg::Full => Scope::Full,
            ScopeArg::LocalDraft => Scope::LocalDraft,
            ScopeArg::LocalBlock => Scope::LocalBlock,
        }
    }

    pub fn cost_model(&self) -> CostModel {
        CostModel { c_draft: self.cost_draft, c_target: self.cost_target, c_preverify: self.cost_pv }
    }

    pub fn decode(&self) -> DecodeConfig {
        DecodeConfig {
            mode: match self.mode {
                ModeArg::Greedy => DecodeMode::Greedy,
                ModeArg::Stochastic => DecodeMode::Stochastic,
            },
            gamma: self.gamma,
            max_len: self.max_len,
            stop: Vec::new(),
            seed: self.seed,
        }
    }

    /// Training settings; `which` offsets the seed so the two models differ.
    pub fn lm_train(&self, which: u64) -> LmTrainConfig {
        LmTrainConfig {
            steps: if which == 1 { self.draft_steps } else { self.target_steps },
            batch: self.lm_batch,
            window: self.lm_window,
            lr: self.lm_lr as f32,
            warmup: self.lm_warmup,
            heldout_frac: self.heldout_frac,
            eval_windows: LmTrainConfig::default().eval_windows,
            seed: pacer_core::rng::derive_seed(self.seed, which),
        }
    }

    pub fn target_spec(&self, vocab: usize) -> ModelSpec {
        let seed = pacer_core::rng::derive_seed(self.seed, 10);
        ModelSpec::transformer(vocab, self.target_layers, self.target_d_model, self.target_heads, self.context_len, seed)
    }

    pub fn draft_spec(&self, vocab: usize) -> ModelSpec {
        let seed = pacer_core::rng::derive_seed(self.seed, 11);
        ModelSpec::transformer(vocab, self.draft_layers, self.draft_d_model, self.draft_heads, self.context_len, seed)
    }

    pub fn pv_train(&self) -> PvTrainConfig {
        PvTrainConfig {
            lr: self.pv_lr as f32,
            weight_decay: self.pv_weight_decay as f32,
            epochs: self.pv_epochs,
            batch: self.pv_batch,
            seed: pacer_core::rng::derive_seed(self.seed, 12),
            balance: self.pv_balance,
            ..PvTrainConfig::default()
        }
    }

    pub fn encoding(&self) -> PositionEncoding {
        match self.pv_encoding {
            EncodingArg::Learned => PositionEncoding::Learned,
            EncodingArg::Sinusoidal => PositionEncoding::Sinusoidal,
        }
    }

    pub fn gammas(&self) -> Vec<usize> {
        (self.gamma_min..=self.gamma_max).collect()
    }

    /// Path from the config, or a config error naming the missing key.
    pub fn require<'a>(&self, value: &'a Option<PathBuf>, key: &str) -> CliResult<&'a Path> {
        let p = value.as_deref().ok_or_else(|| CliError::config(format!("--{key} is required")))?;
        if !p.exists() {
            return Err(CliError::missing(key, p));
        }
        Ok(p)
    }
}

fn read_table(path: &Path) -> CliResult<toml::Table> {
    if !path.exists() {
        return Err(CliError::missing("config file", path));
    }
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    text.parse::<toml::Table>().map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

/// `f32` default as the `f64` with the same shortest decimal form, so dumped
/// configs read `0.003` and not `0.003000000026077032`.
fn widen(x: f32) -> f64 {
    x.to_string().parse().expect("f32 display parses as f64")
}
