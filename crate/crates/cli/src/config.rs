//! Run configuration. Precedence: flags > environment > config file > defaults.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use care::eval::DEFAULT_KS;
use care::grounding::MatcherConfig;
use care::llm_client::{MockMode, ProviderConfig};
use care::pipeline::Method;
use care::prompting::{Adaptation, Engagement, InputMode, StrategyConfig, DEFAULT_N};
use care::seqrec::RecConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub dialogues: Option<PathBuf>,
    pub catalog: Option<PathBuf>,
    pub kg: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    /// Not serialized, so a report does not depend on where it is written.
    #[serde(skip_serializing)]
    pub report: Option<PathBuf>,
    pub templates: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrategySettings {
    pub adaptation: Option<Adaptation>,
    pub engagement: Option<Engagement>,
    pub k: Option<usize>,
    pub n: Option<usize>,
    pub input_mode: Option<InputMode>,
    pub method: Option<Method>,
}

impl StrategySettings {
    fn overlay(&mut self, top: &StrategySettings) {
        macro_rules! take {
            ($($f:ident),*) => { $( if top.$f.is_some() { self.$f = top.$f; } )* };
        }
        take!(adaptation, engagement, k, n, input_mode, method);
    }

    pub fn resolve(&self) -> StrategyConfig {
        let n = self.n.unwrap_or(DEFAULT_N);
        let base = StrategyConfig::new(
            self.adaptation.unwrap_or(Adaptation::Description),
            self.engagement.unwrap_or(Engagement::SelectRerank),
        )
        .with_n(n);
        let k = self.k.unwrap_or(base.engagement.default_k(n));
        base.with_k(k).with_input_mode(self.input_mode.unwrap_or_default())
    }
}

/// Layout of the optional TOML config file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub split: Option<[u32; 3]>,
    pub ks: Option<Vec<usize>>,
    pub paths: Paths,
    pub recommender: Option<RecConfig>,
    pub strategy: StrategySettings,
    pub matcher: Option<MatcherConfig>,
    pub provider: Option<ProviderConfig>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config file {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("invalid config file {}", path.display()))
    }
}

/// Fully resolved settings; serialized into every report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub seed: u64,
    pub split: [u32; 3],
    pub ks: Vec<usize>,
    pub paths: Paths,
    pub recommender: RecConfig,
    pub strategy: StrategyConfig,
    pub method: Method,
    pub matcher: MatcherConfig,
    pub provider: ProviderConfig,
    pub mock: Option<MockMode>,
    pub mock_replies: Vec<String>,
}

pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_SPLIT: [u32; 3] = [8, 1, 1];

/// Values supplied on the command line; `None` defers to lower layers.
#[derive(Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub paths: Paths,
    pub strategy: StrategySettings,
    pub theta: Option<f64>,
    pub rec: RecOverrides,
    pub mock: Option<MockMode>,
    pub mock_replies: Vec<String>,
}

#[derive(Debug, Default, Clone)]
pub struct RecOverrides {
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub embed_dim: Option<usize>,
    pub layers: Option<usize>,
    pub heads: Option<usize>,
    pub batch_size: Option<usize>,
    pub dropout: Option<f64>,
    pub max_sequence_length: Option<usize>,
}

fn overlay_path(slot: &mut Option<PathBuf>, top: &Option<PathBuf>) {
    if top.is_some() {
        slot.clone_from(top);
    }
}

impl RunConfig {
    pub fn resolve(file: FileConfig, flags: Overrides) -> Result<Self> {
        let mut paths = file.paths;
        overlay_path(&mut paths.dialogues, &flags.paths.dialogues);
        overlay_path(&mut paths.catalog, &flags.paths.catalog);
        overlay_path(&mut paths.kg, &flags.paths.kg);
        overlay_path(&mut paths.checkpoint, &flags.paths.checkpoint);
        overlay_path(&mut paths.cache_dir, &flags.paths.cache_dir);
        overlay_path(&mut paths.report, &flags.paths.report);
        overlay_path(&mut paths.templates, &flags.paths.templates);

        let mut strategy = file.strategy;
        strategy.overlay(&flags.strategy);
        let method = strategy.method.unwrap_or_default();

        let seed = flags.seed.or(file.seed).unwrap_or(DEFAULT_SEED);
        let mut rec = file.recommender.unwrap_or_default();
        rec.seed = seed;
        let r = flags.rec;
        rec.epochs = r.epochs.unwrap_or(rec.epochs);
        rec.learning_rate = r.learning_rate.unwrap_or(rec.learning_rate);
        rec.embed_dim = r.embed_dim.unwrap_or(rec.embed_dim);
        rec.layers = r.layers.unwrap_or(rec.layers);
        rec.heads = r.heads.unwrap_or(rec.heads);
        rec.batch_size = r.batch_size.unwrap_or(rec.batch_size);
        rec.dropout = r.dropout.unwrap_or(rec.dropout);
        rec.max_sequence_length = r.max_sequence_length.unwrap_or(rec.max_sequence_length);

        let mut matcher = file.matcher.unwrap_or_default();
        matcher.theta = flags.theta.unwrap_or(matcher.theta);
        if matcher.validate().is_err() {
            bail!("theta must lie in [0, 1], got {}", matcher.theta);
        }

        let ks = file.ks.unwrap_or_else(|| DEFAULT_KS.to_vec());
        if ks.is_empty() || ks.contains(&0) {
            bail!("ks must be a non-empty list of positive cutoffs");
        }
        let split = file.split.unwrap_or(DEFAULT_SPLIT);

        Ok(Self {
            seed,
            split,
            ks,
            paths,
            recommender: rec,
            strategy: strategy.resolve(),
            method,
            matcher,
            provider: file.provider.unwrap_or_default().apply_env(),
            mock: flags.mock,
            mock_replies: flags.mock_replies,
        })
    }

    pub fn require(&self, slot: &Option<PathBuf>, what: &str, flag: &str) -> Result<PathBuf> {
        match slot {
            Some(p) if p.exists() => Ok(p.clone()),
            Some(p) => bail!("{what} not found: {}", p.display()),
            None => bail!("no {what} given (use {flag} or set it in the config file)"),
        }
    }
}
