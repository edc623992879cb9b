//! Run configuration: a flat `key = value` text format.
//!
//! Every key has a default, unknown keys are errors, and the canonical form
//! (all keys, sorted, one per line) is what gets hashed and embedded in every
//! artifact. Paths are excluded from the hash so the same experiment run from
//! two directories shares its identity.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::data::{Gauss, SynthConfig, Task};
use crate::encoders::{TextEncoderConfig, VisionConfig};
use crate::error::{Error, Result};
use crate::fusion::{AggregatorConfig, AggregatorKind, Pooling};
use crate::model::{ModelConfig, MODEL_VERSION};
use crate::tokenizer::{TokenizerConfig, TokenizerVariant};
use crate::training::TrainConfig;

/// Keys that locate files rather than define the experiment.
const PATH_KEYS: [&str; 2] = ["data.dir", "out.dir"];

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSettings {
    pub channels: Vec<usize>,
    pub d_text: usize,
    pub l_max: usize,
    pub embed_std: f64,
    pub pos_scale: f64,
    pub tokenizer: TokenizerVariant,
    pub n_tokens: usize,
    /// `None` = 4× the token width.
    pub tokenizer_hidden: Option<usize>,
    pub aggregator: AggregatorKind,
    /// `None` = the aggregator's default.
    pub depth: Option<usize>,
    pub heads: Option<usize>,
    pub pooling: Pooling,
    pub head_hidden: usize,
    pub head_out: usize,
}

impl Default for ModelSettings {
    fn default() -> Self {
        Self {
            channels: VisionConfig::default().channels,
            d_text: 64,
            l_max: 64,
            embed_std: 1.0,
            pos_scale: 0.1,
            tokenizer: TokenizerVariant::FeatureMap,
            n_tokens: 256,
            tokenizer_hidden: None,
            aggregator: AggregatorKind::Co,
            depth: None,
            heads: None,
            pooling: Pooling::Max,
            head_hidden: 1024,
            head_out: 512,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub task: Task,
    /// Seed of initialization, shuffling and augmentation (the dataset has its own).
    pub seed: u64,
    pub data: SynthConfig,
    pub model: ModelSettings,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("runs"),
            task: Task::Malignancy,
            seed: 0,
            data: SynthConfig::default(),
            model: ModelSettings::default(),
            train: TrainConfig::default(),
        }
    }
}

// ── Value codecs ────────────────────────────────────────────────────────────

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: Display,
{
    v.parse().map_err(|e| Error::Config(format!("{key} = `{v}`: {e}")))
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    v.split(',').map(|p| parse(key, p.trim())).collect()
}

fn parse_gauss(key: &str, v: &str) -> Result<Gauss> {
    match parse_list::<f64>(key, v)?.as_slice() {
        &[mean, sd] => Ok(Gauss::new(mean, sd)),
        _ => Err(Error::Config(format!("{key} = `{v}`: expected `mean,sd`"))),
    }
}

fn parse_dist(key: &str, v: &str) -> Result<[f64; 4]> {
    parse_list::<f64>(key, v)?
        .try_into()
        .map_err(|_| Error::Config(format!("{key} = `{v}`: expected four probabilities")))
}

fn parse_auto(key: &str, v: &str) -> Result<Option<usize>> {
    if v == "auto" {
        Ok(None)
    } else {
        parse(key, v).map(Some)
    }
}

fn join<T: Display>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn auto(v: Option<usize>) -> String {
    v.map_or_else(|| "auto".to_string(), |n| n.to_string())
}

fn gauss(g: Gauss) -> String {
    format!("{},{}", g.mean, g.sd)
}

impl RunConfig {
    /// Sets one key from its text value.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let (d, m, t) = (&mut self.data, &mut self.model, &mut self.train);
        match key {
            "data.dir" => self.data_dir = PathBuf::from(v),
            "out.dir" => self.out_dir = PathBuf::from(v),
            "task" => self.task = v.parse()?,
            "seed" => self.seed = parse(key, v)?,

            "data.seed" => d.seed = parse(key, v)?,
            "data.n_train" => d.n_train = parse(key, v)?,
            "data.n_test" => d.n_test = parse(key, v)?,
            "data.height" => d.height = parse(key, v)?,
            "data.width" => d.width = parse(key, v)?,
            "data.p_pos" => d.p_pos = parse(key, v)?,
            "data.strong_prob" => d.strong_prob = parse(key, v)?,
            "data.strong_amp" => d.strong_amp = parse_gauss(key, v)?,
            "data.faint_amp" => d.faint_amp = parse_gauss(key, v)?,
            "data.distractor_prob" => d.distractor_prob = parse(key, v)?,
            "data.distractor_amp" => d.distractor_amp = parse_gauss(key, v)?,
            "data.blob_sigma" => d.blob_sigma = parse(key, v)?,
            "data.dots" => match parse_list::<usize>(key, v)?.as_slice() {
                &[lo, hi] => (d.dots_min, d.dots_max) = (lo, hi),
                _ => return Err(Error::Config(format!("{key} = `{v}`: expected `min,max`"))),
            },
            "data.dot_sigma" => d.dot_sigma = parse(key, v)?,
            "data.density_pos" => d.density_pos = parse_dist(key, v)?,
            "data.density_neg" => d.density_neg = parse_dist(key, v)?,
            "data.age_pos" => d.age_pos = parse_gauss(key, v)?,
            "data.age_neg" => d.age_neg = parse_gauss(key, v)?,
            "data.age_range" => match parse_list::<u32>(key, v)?.as_slice() {
                &[lo, hi] => (d.age_min, d.age_max) = (lo, hi),
                _ => return Err(Error::Config(format!("{key} = `{v}`: expected `min,max`"))),
            },
            "data.background" => d.background = parse_gauss(key, v)?,
            "data.texture_amp" => d.texture_amp = parse(key, v)?,
            "data.missing_rate" => d.missing_rate = parse(key, v)?,
            "data.include_birads" => d.include_birads = parse(key, v)?,
            "data.val_fraction" => d.val_fraction = parse(key, v)?,
            "data.oracle_mc" => d.oracle_mc = parse(key, v)?,

            "model.channels" => m.channels = parse_list(key, v)?,
            "model.d_text" => m.d_text = parse(key, v)?,
            "model.l_max" => m.l_max = parse(key, v)?,
            "model.embed_std" => m.embed_std = parse(key, v)?,
            "model.pos_scale" => m.pos_scale = parse(key, v)?,
            "tokenizer.variant" => m.tokenizer = v.parse()?,
            "tokenizer.n_tokens" => m.n_tokens = parse(key, v)?,
            "tokenizer.hidden" => m.tokenizer_hidden = parse_auto(key, v)?,
            "aggregator.kind" => m.aggregator = v.parse()?,
            "aggregator.depth" => m.depth = parse_auto(key, v)?,
            "aggregator.heads" => m.heads = parse_auto(key, v)?,
            "aggregator.pooling" => m.pooling = v.parse()?,
            "head.hidden" => m.head_hidden = parse(key, v)?,
            "head.out" => m.head_out = parse(key, v)?,

            "train.lr" => t.lr_peak = parse(key, v)?,
            "train.weight_decay" => t.weight_decay = parse(key, v)?,
            "train.beta1" => t.beta1 = parse(key, v)?,
            "train.beta2" => t.beta2 = parse(key, v)?,
            "train.eps" => t.eps = parse(key, v)?,
            "train.batch_size" => t.batch_size = parse(key, v)?,
            "train.epochs" => t.epochs = parse(key, v)?,
            "train.warmup_epochs" => t.warmup_epochs = parse(key, v)?,
            "train.augment" => t.augment = parse(key, v)?,
            "train.preprocess" => t.preprocess = parse(key, v)?,
            "train.text_dropout" => t.text_dropout = parse(key, v)?,
            _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Every key with its current value, in declaration order.
    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        let (d, m, t) = (&self.data, &self.model, &self.train);
        vec![
            ("data.dir", self.data_dir.display().to_string()),
            ("out.dir", self.out_dir.display().to_string()),
            ("task", self.task.name().to_string()),
            ("seed", self.seed.to_string()),
            ("data.seed", d.seed.to_string()),
            ("data.n_train", d.n_train.to_string()),
            ("data.n_test", d.n_test.to_string()),
            ("data.height", d.height.to_string()),
            ("data.width", d.width.to_string()),
            ("data.p_pos", d.p_pos.to_string()),
            ("data.strong_prob", d.strong_prob.to_string()),
            ("data.strong_amp", gauss(d.strong_amp)),
            ("data.faint_amp", gauss(d.faint_amp)),
            ("data.distractor_prob", d.distractor_prob.to_string()),
            ("data.distractor_amp", gauss(d.distractor_amp)),
            ("data.blob_sigma", d.blob_sigma.to_string()),
            ("data.dots", format!("{},{}", d.dots_min, d.dots_max)),
            ("data.dot_sigma", d.dot_sigma.to_string()),
            ("data.density_pos", join(&d.density_pos)),
            ("data.density_neg", join(&d.density_neg)),
            ("data.age_pos", gauss(d.age_pos)),
            ("data.age_neg", gauss(d.age_neg)),
            ("data.age_range", format!("{},{}", d.age_min, d.age_max)),
            ("data.background", gauss(d.background)),
            ("data.texture_amp", d.texture_amp.to_string()),
            ("data.missing_rate", d.missing_rate.to_string()),
            ("data.include_birads", d.include_birads.to_string()),
            ("data.val_fraction", d.val_fraction.to_string()),
            ("data.oracle_mc", d.oracle_mc.to_string()),
            ("model.channels", join(&m.channels)),
            ("model.d_text", m.d_text.to_string()),
            ("model.l_max", m.l_max.to_string()),
            ("model.embed_std", m.embed_std.to_string()),
            ("model.pos_scale", m.pos_scale.to_string()),
            ("tokenizer.variant", m.tokenizer.name().to_string()),
            ("tokenizer.n_tokens", m.n_tokens.to_string()),
            ("tokenizer.hidden", auto(m.tokenizer_hidden)),
            ("aggregator.kind", m.aggregator.name().to_string()),
            ("aggregator.depth", auto(m.depth)),
            ("aggregator.heads", auto(m.heads)),
            ("aggregator.pooling", m.pooling.name().to_string()),
            ("head.hidden", m.head_hidden.to_string()),
            ("head.out", m.head_out.to_string()),
            ("train.lr", t.lr_peak.to_string()),
            ("train.weight_decay", t.weight_decay.to_string()),
            ("train.beta1", t.beta1.to_string()),
            ("train.beta2", t.beta2.to_string()),
            ("train.eps", t.eps.to_string()),
            ("train.batch_size", t.batch_size.to_string()),
            ("train.epochs", t.epochs.to_string()),
            ("train.warmup_epochs", t.warmup_epochs.to_string()),
            ("train.augment", t.augment.to_string()),
            ("train.preprocess", t.preprocess.to_string()),
            ("train.text_dropout", t.text_dropout.to_string()),
        ]
    }

    /// Parses config text on top of the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{line}`", no + 1)))?;
            cfg.set(k.trim(), v.trim()).map_err(|e| Error::Config(format!("line {}: {e}", no + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// All keys sorted, one `key = value` per line.
    pub fn canonical(&self) -> String {
        let mut pairs = self.pairs();
        pairs.sort_by_key(|(k, _)| *k);
        pairs.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// SHA-256 over the model version and the canonical config, paths excluded.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(MODEL_VERSION.as_bytes());
        h.update(b"\n");
        for line in self.canonical().lines() {
            let key = line.split(" = ").next().unwrap_or("");
            if !PATH_KEYS.contains(&key) {
                h.update(line.as_bytes());
                h.update(b"\n");
            }
        }
        hex::encode(h.finalize())
    }

    /// Dataset location for the configured task.
    pub fn task_dir(&self) -> PathBuf {
        self.data_dir.join(self.task.name())
    }

    /// Generator settings with the run's task applied.
    pub fn synth(&self) -> SynthConfig {
        SynthConfig { task: self.task, ..self.data.clone() }
    }

    pub fn aggregator(&self) -> AggregatorConfig {
        let m = &self.model;
        let base = AggregatorConfig::for_kind(m.aggregator);
        AggregatorConfig {
            depth: m.depth.unwrap_or(base.depth),
            heads: m.heads.unwrap_or(base.heads),
            pooling: m.pooling,
            ..base
        }
    }

    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        let m = &self.model;
        let c = m.channels.last().copied().unwrap_or(0);
        ModelConfig {
            image_h: self.data.height,
            image_w: self.data.width,
            vision: VisionConfig { channels: m.channels.clone(), rgb_input: false },
            text: TextEncoderConfig {
                vocab_size,
                d_text: m.d_text,
                l_max: m.l_max,
                embed_std: m.embed_std,
                pos_scale: m.pos_scale,
            },
            tokenizer: TokenizerConfig {
                n_tokens: m.n_tokens,
                channels: c,
                variant: m.tokenizer,
                mlp_hidden: m.tokenizer_hidden.unwrap_or(4 * c),
            },
            aggregator: self.aggregator(),
            head_hidden: m.head_hidden,
            head_out: m.head_out,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.train.validate()?;
        let m = &self.model;
        if m.channels.is_empty() || m.channels.contains(&0) {
            return Err(Error::Config("model.channels must be a non-empty list of positive widths".into()));
        }
        let c = m.channels[m.channels.len() - 1];
        let agg = self.aggregator();
        if agg.heads == 0 || c % agg.heads != 0 {
            return Err(Error::Config(format!("token width {c} is not divisible by aggregator.heads = {}", agg.heads)));
        }
        for (k, v) in [
            ("model.d_text", m.d_text),
            ("model.l_max", m.l_max),
            ("tokenizer.n_tokens", m.n_tokens),
            ("head.hidden", m.head_hidden),
            ("head.out", m.head_out),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{k} must be positive")));
            }
        }
        if !(m.embed_std > 0.0 && m.pos_scale >= 0.0) {
            return Err(Error::Config("model.embed_std must be positive and model.pos_scale non-negative".into()));
        }
        let stride = 1usize << m.channels.len();
        if self.data.height % stride != 0 || self.data.width % stride != 0 {
            return Err(Error::Config(format!(
                "image {}×{} is not divisible by the encoder stride {stride}",
                self.data.height, self.data.width
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.set("aggregator.kind", "vision_self").unwrap();
        cfg.set("data.density_pos", "0.1,0.2,0.3,0.4").unwrap();
        cfg.set("aggregator.heads", "8").unwrap();
        let back = RunConfig::parse(&cfg.canonical()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn every_key_is_settable() {
        let cfg = RunConfig::default();
        let mut other = RunConfig::default();
        for (k, v) in cfg.pairs() {
            other.set(k, &v).unwrap();
        }
        assert_eq!(other, cfg);
    }

    #[test]
    fn unknown_and_malformed_keys_are_rejected() {
        assert!(RunConfig::parse("train.learning_rate = 1").is_err());
        assert!(RunConfig::parse("train.lr").is_err());
        assert!(RunConfig::parse("aggregator.kind = attention").is_err());
        assert!(RunConfig::parse("data.age_pos = 60").is_err());
        assert!(RunConfig::parse("aggregator.heads = 3").is_err());
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let cfg = RunConfig::parse("# acceptance\n\nseed = 4  # trailing\n").unwrap();
        assert_eq!(cfg.seed, 4);
    }

    #[test]
    fn hash_ignores_paths_but_not_settings() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.set("out.dir", "/elsewhere").unwrap();
        b.set("data.dir", "/data2").unwrap();
        assert_eq!(a.hash(), b.hash());
        b.set("seed", "1").unwrap();
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn auto_resolves_to_aggregator_defaults() {
        let mut cfg = RunConfig::default();
        cfg.set("aggregator.kind", "vision_self").unwrap();
        assert_eq!(cfg.aggregator().heads, 8);
        assert_eq!(cfg.aggregator().depth, 4);
        cfg.set("aggregator.depth", "2").unwrap();
        assert_eq!(cfg.aggregator().depth, 2);
    }
}
