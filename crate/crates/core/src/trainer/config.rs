//! Run configuration: a flat `key = value` file whose keys are grouped by
//! the module that consumes them.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::augment::{AugmentSet, RandAugmentPolicy};
use crate::error::{Error, Result};
use crate::losses::{Alignment, LossConfig, Ratio, SourceVariant};
use crate::metrics::{AccuracyMode, Crop, EvalConfig, SqRelMode};
use crate::model::ModelSpec;

/// One accepted configuration key.
#[derive(Clone, Copy, Debug)]
pub struct KeySpec {
    pub key: &'static str,
    pub default: &'static str,
    pub module: &'static str,
    pub help: &'static str,
}

const fn k(
    key: &'static str,
    default: &'static str,
    module: &'static str,
    help: &'static str,
) -> KeySpec {
    KeySpec {
        key,
        default,
        module,
        help,
    }
}

/// Every accepted key with its default under the `desk` profile.
pub const KEYS: &[KeySpec] = &[
    k(
        "model.height",
        "64",
        "model",
        "input height, divisible by 2^depth",
    ),
    k(
        "model.width",
        "96",
        "model",
        "input width, divisible by 2^depth",
    ),
    k(
        "model.depth",
        "4",
        "model",
        "number of down-sampling stages",
    ),
    k(
        "model.base_channels",
        "16",
        "model",
        "channels of the first encoder block",
    ),
    k("model.max_depth", "80", "model", "output scale in meters"),
    k(
        "aug.set",
        "s_fm",
        "augment",
        "RandAugment operator set: s_fm or s_geo",
    ),
    k("aug.n", "1", "augment", "operators per perturbation chain"),
    k("aug.m", "7", "augment", "severity level in [0, 10]"),
    k(
        "aug.static_cutout",
        "true",
        "augment",
        "erase one 10% rectangle before the chain",
    ),
    k(
        "aug.naive_alignment",
        "false",
        "augment",
        "compare perturbed predictions without realignment",
    ),
    k(
        "loss.source_variant",
        "pairwise_sum",
        "losses",
        "pairwise_sum, per_sample, pairwise_separate or none",
    ),
    k(
        "loss.streams",
        "3",
        "losses",
        "perturbation streams per target image, original included (2-4)",
    ),
    k(
        "loss.stop_grad_ref",
        "true",
        "losses",
        "treat the unperturbed prediction as a constant pseudo-label",
    ),
    k("loss.alignment", "realign", "losses", "realign or naive"),
    k(
        "batch.N",
        "12",
        "losses",
        "source pairs per adaptation step",
    ),
    k(
        "batch.r",
        "2",
        "losses",
        "supervised/unsupervised ratio, a or a/b",
    ),
    k(
        "metrics.cap",
        "80",
        "metrics",
        "evaluation depth cap in meters",
    ),
    k("metrics.crop", "none", "metrics", "garg or none"),
    k(
        "metrics.min_depth",
        "0.001",
        "metrics",
        "floor applied to prediction and ground truth",
    ),
    k(
        "metrics.accuracy",
        "ratio",
        "metrics",
        "ratio or abs_margin threshold test",
    ),
    k(
        "metrics.sqrel",
        "linear",
        "metrics",
        "linear (/d) or squared_denominator (/d^2)",
    ),
    k(
        "train.profile",
        "desk",
        "trainer",
        "desk or paper-scale; sets the defaults marked (profile)",
    ),
    k(
        "train.name",
        "run",
        "trainer",
        "run directory name below the runs root",
    ),
    k(
        "train.pretrain_lr",
        "0.004",
        "trainer",
        "pretraining learning rate",
    ),
    k(
        "train.pretrain_epochs",
        "50",
        "trainer",
        "pretraining epochs (profile)",
    ),
    k(
        "train.pretrain_decay_start_epoch",
        "none",
        "trainer",
        "epoch where pretraining lr starts to decay, or none",
    ),
    k(
        "train.pretrain_batch",
        "8",
        "trainer",
        "pretraining batch size",
    ),
    k(
        "train.cutmix_alpha",
        "0.5",
        "trainer",
        "CutMix patch area fraction",
    ),
    k(
        "train.adapt_lr",
        "1e-5",
        "trainer",
        "adaptation learning rate (profile)",
    ),
    k("train.adapt_epochs", "10", "trainer", "adaptation epochs"),
    k(
        "train.decay_start_epoch",
        "4",
        "trainer",
        "epoch where adaptation lr starts its linear decay",
    ),
    k(
        "train.grad_clip",
        "10",
        "trainer",
        "global gradient-norm clip, 0 disables (profile)",
    ),
    k(
        "train.model_seed",
        "0",
        "trainer",
        "model initialisation seed",
    ),
    k("train.data_seed", "0", "trainer", "batch sampling seed"),
    k("train.augment_seed", "0", "trainer", "augmentation seed"),
    k(
        "train.checkpoint_every",
        "1",
        "trainer",
        "checkpoint cadence in epochs; the last epoch is always saved",
    ),
];

/// Defaults that `train.profile` changes.
fn profile_defaults(profile: Profile) -> &'static [(&'static str, &'static str)] {
    match profile {
        Profile::Desk => &[
            ("train.pretrain_epochs", "50"),
            ("train.adapt_lr", "1e-5"),
            ("train.grad_clip", "10"),
        ],
        Profile::PaperScale => &[
            ("train.pretrain_epochs", "250"),
            ("train.adapt_lr", "4e-8"),
            ("train.grad_clip", "0"),
        ],
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Profile {
    Desk,
    PaperScale,
}

impl Profile {
    fn parse(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper-scale" => Ok(Profile::PaperScale),
            _ => Err(Error::config(format!(
                "unknown profile {s:?}; expected desk or paper-scale"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Profile::Desk => "desk",
            Profile::PaperScale => "paper-scale",
        }
    }
}

/// Trainer-owned settings.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSettings {
    pub profile: Profile,
    pub name: String,
    pub pretrain_lr: f64,
    pub pretrain_epochs: usize,
    pub pretrain_decay_start_epoch: Option<usize>,
    pub pretrain_batch: usize,
    pub cutmix_alpha: f64,
    pub adapt_lr: f64,
    pub adapt_epochs: usize,
    pub decay_start_epoch: usize,
    pub grad_clip: f64,
    pub model_seed: u64,
    pub data_seed: u64,
    pub augment_seed: u64,
    pub checkpoint_every: usize,
}

/// Fully parsed run configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelSpec,
    pub aug_set: AugmentSet,
    pub aug_n: usize,
    pub aug_m: f32,
    pub aug_static_cutout: bool,
    pub aug_naive_alignment: bool,
    pub source_variant: SourceVariant,
    pub streams: usize,
    pub stop_grad_ref: bool,
    pub alignment: Alignment,
    pub batch_n: usize,
    pub ratio: Ratio,
    pub eval: EvalConfig,
    pub train: TrainSettings,
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::config(format!(
            "{key}: expected true or false, got {value:?}"
        ))),
    }
}

pub fn key_spec(key: &str) -> Option<&'static KeySpec> {
    KEYS.iter().find(|k| k.key == key)
}

/// Splits a config file into `(key, value)` pairs; `#` starts a comment.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    text.lines()
        .enumerate()
        .filter_map(|(i, line)| {
            let line = line.split('#').next().unwrap_or("").trim();
            (!line.is_empty()).then_some((i, line))
        })
        .map(|(i, line)| {
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected key = value", i + 1)))?;
            Ok((key.trim().to_string(), value.trim().to_string()))
        })
        .collect()
}

/// Parses one `key=value` command-line override.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::config(format!("override {s:?} is not key=value")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::from_pairs(std::iter::empty::<(String, String)>()).expect("defaults are valid")
    }
}

impl RunConfig {
    /// Builds a configuration from pairs applied in order (last writer
    /// wins). Profile defaults apply before any explicit key.
    pub fn from_pairs<I, K, V>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let mut values: Vec<(&'static str, String)> = KEYS
            .iter()
            .map(|k| (k.key, k.default.to_string()))
            .collect();
        let mut explicit = Vec::new();
        for (key, value) in pairs {
            let key = key.as_ref();
            let spec =
                key_spec(key).ok_or_else(|| Error::config(format!("unknown key {key:?}")))?;
            explicit.push((spec.key, value.as_ref().to_string()));
        }
        let profile = explicit
            .iter()
            .rev()
            .find(|(k, _)| *k == "train.profile")
            .map(|(_, v)| Profile::parse(v))
            .transpose()?
            .unwrap_or(Profile::Desk);
        let mut set = |key: &str, value: String| {
            if let Some(slot) = values.iter_mut().find(|(k, _)| *k == key) {
                slot.1 = value;
            }
        };
        for (key, value) in profile_defaults(profile) {
            set(key, value.to_string());
        }
        for (key, value) in explicit {
            set(key, value);
        }
        let get = |key: &str| -> &str {
            values
                .iter()
                .find(|(k, _)| *k == key)
                .map(|(_, v)| v.as_str())
                .expect("registered key")
        };
        let cfg = RunConfig {
            model: ModelSpec {
                height: parse_value("model.height", get("model.height"))?,
                width: parse_value("model.width", get("model.width"))?,
                depth: parse_value("model.depth", get("model.depth"))?,
                base_channels: parse_value("model.base_channels", get("model.base_channels"))?,
                max_depth: parse_value("model.max_depth", get("model.max_depth"))?,
            },
            aug_set: get("aug.set").parse()?,
            aug_n: parse_value("aug.n", get("aug.n"))?,
            aug_m: parse_value("aug.m", get("aug.m"))?,
            aug_static_cutout: parse_bool("aug.static_cutout", get("aug.static_cutout"))?,
            aug_naive_alignment: parse_bool("aug.naive_alignment", get("aug.naive_alignment"))?,
            source_variant: get("loss.source_variant").parse()?,
            streams: parse_value("loss.streams", get("loss.streams"))?,
            stop_grad_ref: parse_bool("loss.stop_grad_ref", get("loss.stop_grad_ref"))?,
            alignment: get("loss.alignment").parse()?,
            batch_n: parse_value("batch.N", get("batch.N"))?,
            ratio: get("batch.r").parse()?,
            eval: EvalConfig {
                cap: parse_value("metrics.cap", get("metrics.cap"))?,
                crop: get("metrics.crop").parse::<Crop>()?,
                min_depth: parse_value("metrics.min_depth", get("metrics.min_depth"))?,
                accuracy: get("metrics.accuracy").parse::<AccuracyMode>()?,
                sqrel: get("metrics.sqrel").parse::<SqRelMode>()?,
            },
            train: TrainSettings {
                profile,
                name: get("train.name").to_string(),
                pretrain_lr: parse_value("train.pretrain_lr", get("train.pretrain_lr"))?,
                pretrain_epochs: parse_value(
                    "train.pretrain_epochs",
                    get("train.pretrain_epochs"),
                )?,
                pretrain_decay_start_epoch: match get("train.pretrain_decay_start_epoch") {
                    "none" => None,
                    v => Some(parse_value("train.pretrain_decay_start_epoch", v)?),
                },
                pretrain_batch: parse_value("train.pretrain_batch", get("train.pretrain_batch"))?,
                cutmix_alpha: parse_value("train.cutmix_alpha", get("train.cutmix_alpha"))?,
                adapt_lr: parse_value("train.adapt_lr", get("train.adapt_lr"))?,
                adapt_epochs: parse_value("train.adapt_epochs", get("train.adapt_epochs"))?,
                decay_start_epoch: parse_value(
                    "train.decay_start_epoch",
                    get("train.decay_start_epoch"),
                )?,
                grad_clip: parse_value("train.grad_clip", get("train.grad_clip"))?,
                model_seed: parse_value("train.model_seed", get("train.model_seed"))?,
                data_seed: parse_value("train.data_seed", get("train.data_seed"))?,
                augment_seed: parse_value("train.augment_seed", get("train.augment_seed"))?,
                checkpoint_every: parse_value(
                    "train.checkpoint_every",
                    get("train.checkpoint_every"),
                )?,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file, then applies `overrides` on top.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut pairs = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                parse_pairs(&text)?
            }
            None => Vec::new(),
        };
        pairs.extend(overrides.iter().cloned());
        Self::from_pairs(pairs)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.policy().validate()?;
        self.loss().validate()?;
        self.eval.validate()?;
        crate::losses::compose_batch(self.batch_n, self.ratio, self.streams)?;
        let t = &self.train;
        for (key, lr) in [
            ("train.pretrain_lr", t.pretrain_lr),
            ("train.adapt_lr", t.adapt_lr),
        ] {
            if !(lr.is_finite() && lr >= 0.0) {
                return Err(Error::config(format!("{key} must be finite and >= 0")));
            }
        }
        if !(0.0..=1.0).contains(&t.cutmix_alpha) {
            return Err(Error::config("train.cutmix_alpha must lie in [0, 1]"));
        }
        if !(t.grad_clip.is_finite() && t.grad_clip >= 0.0) {
            return Err(Error::config("train.grad_clip must be finite and >= 0"));
        }
        if t.pretrain_batch == 0 {
            return Err(Error::config("train.pretrain_batch must be >= 1"));
        }
        if t.checkpoint_every == 0 {
            return Err(Error::config("train.checkpoint_every must be >= 1"));
        }
        if t.name.is_empty() || t.name.contains(['/', '\\']) || t.name == "." || t.name == ".." {
            return Err(Error::config(format!(
                "train.name {:?} is not a plain directory name",
                t.name
            )));
        }
        Ok(())
    }

    pub fn policy(&self) -> RandAugmentPolicy {
        RandAugmentPolicy {
            set: self.aug_set,
            n: self.aug_n,
            m: self.aug_m,
            static_cutout: self.aug_static_cutout,
        }
    }

    /// Loss settings; either alignment key can select naive comparison.
    pub fn loss(&self) -> LossConfig {
        LossConfig {
            source_variant: self.source_variant,
            streams: self.streams,
            stop_gradient_on_reference: self.stop_grad_ref,
            alignment: if self.aug_naive_alignment {
                Alignment::Naive
            } else {
                self.alignment
            },
        }
    }

    /// Current value of every key, rendered as it would be written.
    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        let t = &self.train;
        let m = &self.model;
        let e = &self.eval;
        vec![
            ("model.height", m.height.to_string()),
            ("model.width", m.width.to_string()),
            ("model.depth", m.depth.to_string()),
            ("model.base_channels", m.base_channels.to_string()),
            ("model.max_depth", m.max_depth.to_string()),
            ("aug.set", self.aug_set.to_string()),
            ("aug.n", self.aug_n.to_string()),
            ("aug.m", self.aug_m.to_string()),
            ("aug.static_cutout", self.aug_static_cutout.to_string()),
            ("aug.naive_alignment", self.aug_naive_alignment.to_string()),
            ("loss.source_variant", self.source_variant.to_string()),
            ("loss.streams", self.streams.to_string()),
            ("loss.stop_grad_ref", self.stop_grad_ref.to_string()),
            ("loss.alignment", self.alignment.to_string()),
            ("batch.N", self.batch_n.to_string()),
            ("batch.r", self.ratio.to_string()),
            ("metrics.cap", e.cap.to_string()),
            ("metrics.crop", e.crop.to_string()),
            ("metrics.min_depth", e.min_depth.to_string()),
            ("metrics.accuracy", e.accuracy.to_string()),
            ("metrics.sqrel", e.sqrel.to_string()),
            ("train.profile", t.profile.name().to_string()),
            ("train.name", t.name.clone()),
            ("train.pretrain_lr", t.pretrain_lr.to_string()),
            ("train.pretrain_epochs", t.pretrain_epochs.to_string()),
            (
                "train.pretrain_decay_start_epoch",
                t.pretrain_decay_start_epoch
                    .map_or_else(|| "none".to_string(), |d| d.to_string()),
            ),
            ("train.pretrain_batch", t.pretrain_batch.to_string()),
            ("train.cutmix_alpha", t.cutmix_alpha.to_string()),
            ("train.adapt_lr", t.adapt_lr.to_string()),
            ("train.adapt_epochs", t.adapt_epochs.to_string()),
            ("train.decay_start_epoch", t.decay_start_epoch.to_string()),
            ("train.grad_clip", t.grad_clip.to_string()),
            ("train.model_seed", t.model_seed.to_string()),
            ("train.data_seed", t.data_seed.to_string()),
            ("train.augment_seed", t.augment_seed.to_string()),
            ("train.checkpoint_every", t.checkpoint_every.to_string()),
        ]
    }

    /// Canonical file text; parsing it reproduces `self`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.pairs() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Hex SHA-256 of the canonical text.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}

/// Human-readable key table for `--help`.
pub fn key_table() -> String {
    let mut out = String::from("Config keys (key = default  [module]  description):\n");
    for k in KEYS {
        let _ = writeln!(
            out,
            "  {} = {}  [{}]  {}",
            k.key, k.default, k.module, k.help
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_key_round_trips_through_text() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.pairs().len(), KEYS.len());
        for ((a, _), spec) in cfg.pairs().iter().zip(KEYS) {
            assert_eq!(*a, spec.key);
        }
        let back = RunConfig::from_pairs(parse_pairs(&cfg.to_text()).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(
            RunConfig::from_pairs([("loss.stream", "3")]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn profile_sets_defaults_but_explicit_keys_win() {
        let c =
            RunConfig::from_pairs([("train.adapt_lr", "3e-6"), ("train.profile", "paper-scale")])
                .unwrap();
        assert_eq!(c.train.pretrain_epochs, 250);
        assert_eq!(c.train.grad_clip, 0.0);
        assert_eq!(c.train.adapt_lr, 3e-6);
    }

    #[test]
    fn either_alignment_key_selects_naive() {
        let c = RunConfig::from_pairs([("aug.naive_alignment", "true")]).unwrap();
        assert_eq!(c.loss().alignment, Alignment::Naive);
        let c = RunConfig::from_pairs([("loss.alignment", "naive")]).unwrap();
        assert_eq!(c.loss().alignment, Alignment::Naive);
    }

    #[test]
    fn indivisible_batch_is_rejected() {
        assert!(RunConfig::from_pairs([("batch.r", "5")]).is_err());
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let p = parse_pairs("# c\n\nbatch.N = 4 # inline\n").unwrap();
        assert_eq!(p, vec![("batch.N".to_string(), "4".to_string())]);
    }
}
