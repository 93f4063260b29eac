//! Experiment configuration: TOML schema, overrides and validation.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dsp::{BandSpec, ProbeKind};
use crate::error::{Error, Result};
use crate::objectives::{AsrConfig, CfmConfig};
use crate::tokenizer::TokenizerConfig;
use crate::tts::{LmConfig, MelFlowConfig};

/// Version of the configuration schema; bumped on incompatible changes.
pub const SCHEMA_VERSION: u32 = 1;
/// Version of the default probe set.
pub const PROBE_SET_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusKind {
    Synthetic,
    WavDir,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    pub kind: CorpusKind,
    /// Directory of `.wav` files (for `wav_dir`).
    pub wav_dir: String,
    /// Transcript file inside `wav_dir`: one `stem<TAB>text` per line.
    pub transcripts: String,
    pub num_clips: usize,
    /// Characters the synthetic recipe draws from.
    pub vocabulary: String,
    pub min_chars: usize,
    pub max_chars: usize,
    pub char_duration_s: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            kind: CorpusKind::Synthetic,
            wav_dir: String::new(),
            transcripts: "transcripts.tsv".into(),
            num_clips: 24,
            vocabulary: "abcdefghijklmnop".into(),
            min_chars: 2,
            max_chars: 4,
            char_duration_s: 0.08,
            val_fraction: 0.15,
            test_fraction: 0.15,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage1Config {
    pub steps: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub grad_clip: f64,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Self {
            steps: 500,
            lr: 2e-3,
            batch_size: 4,
            grad_clip: 5.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage2Config {
    pub steps: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub grad_clip: f64,
    /// Tokenizer learning rate as a fraction of the LM learning rate.
    pub tokenizer_lr_ratio: f64,
    pub stop_weight: f64,
    /// Flow-matching steps for the mel generator after LM training.
    pub mel_flow_steps: usize,
    pub mel_flow_lr: f64,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Self {
            steps: 500,
            lr: 1e-3,
            batch_size: 4,
            grad_clip: 5.0,
            tokenizer_lr_ratio: 0.05,
            stop_weight: 0.1,
            mel_flow_steps: 0,
            mel_flow_lr: 1e-3,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationConfig {
    pub skip_stage1: bool,
    pub freeze_tokenizer_stage2: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    pub bands: Vec<BandSpec>,
    pub probes: Vec<ProbeKind>,
    pub probe_set_version: u32,
    pub probe_duration_s: f64,
    pub probe_seed: u64,
    pub ratios: Vec<f64>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            bands: [2000.0, 5000.0, 8000.0].iter().map(|&c| BandSpec::new(c, 500.0)).collect(),
            probes: default_probes(),
            probe_set_version: PROBE_SET_VERSION,
            probe_duration_s: 0.5,
            probe_seed: 7,
            ratios: vec![0.5, 0.75, 1.0, 1.25, 1.5],
        }
    }
}

/// Multitone at the band centres plus three harmonic tones.
pub fn default_probes() -> Vec<ProbeKind> {
    vec![
        ProbeKind::Multitone {
            freqs_hz: vec![2000.0, 5000.0, 8000.0],
        },
        ProbeKind::HarmonicTone {
            f0_hz: 110.0,
            max_hz: 11_000.0,
            tilt_db_per_octave: 3.0,
        },
        ProbeKind::HarmonicTone {
            f0_hz: 170.0,
            max_hz: 11_000.0,
            tilt_db_per_octave: 3.0,
        },
        ProbeKind::HarmonicTone {
            f0_hz: 230.0,
            max_hz: 11_000.0,
            tilt_db_per_octave: 3.0,
        },
    ]
}

/// Everything one experiment needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub corpus: CorpusConfig,
    pub tokenizer: TokenizerConfig,
    pub asr: AsrConfig,
    pub lm: LmConfig,
    pub mel_flow: MelFlowConfig,
    pub cfm: CfmConfig,
    pub stage1: Stage1Config,
    pub stage2: Stage2Config,
    pub ablation: AblationConfig,
    pub analysis: AnalysisConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: 1234,
            corpus: CorpusConfig::default(),
            tokenizer: TokenizerConfig::default(),
            asr: AsrConfig::default(),
            lm: LmConfig::default(),
            mel_flow: MelFlowConfig::default(),
            cfm: CfmConfig::default(),
            stage1: Stage1Config::default(),
            stage2: Stage2Config::default(),
            ablation: AblationConfig::default(),
            analysis: AnalysisConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Very small models and corpus for smoke tests; every code path runs
    /// in seconds.
    pub fn smoke() -> Self {
        let mut c = Self::default();
        c.corpus.num_clips = 8;
        c.corpus.max_chars = 2;
        c.corpus.char_duration_s = 0.05;
        c.tokenizer.encoder.channels = vec![4, 6];
        c.tokenizer.encoder.strides = vec![4, 5];
        c.tokenizer.encoder.token_dim = 6;
        c.tokenizer.rvq.num_quantizers = 2;
        c.tokenizer.rvq.codebook_size = 8;
        c.asr.hidden = 8;
        c.lm = LmConfig {
            layers: 1,
            heads: 2,
            model_dim: 8,
            ff_dim: 16,
            max_seq_len: 256,
            token_dim: 6,
            stop_threshold: 0.0,
        };
        c.mel_flow.mel_bins = 8;
        c.mel_flow.hidden = 8;
        c.stage1.steps = 6;
        c.stage1.batch_size = 2;
        c.stage2.steps = 4;
        c.stage2.batch_size = 2;
        c
    }
}

fn type_name(v: &toml::Value) -> &'static str {
    v.type_str()
}

/// Records every key of `given` that is absent from `schema` or has a
/// different type. Arrays are checked element-wise against the schema's
/// first element when it has one.
fn check_tree(prefix: &str, schema: &toml::Value, given: &toml::Value, errs: &mut Vec<String>) {
    use toml::Value as V;
    match (schema, given) {
        (V::Table(s), V::Table(g)) => {
            for (k, gv) in g {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                match s.get(k) {
                    Some(sv) => check_tree(&key, sv, gv, errs),
                    None => errs.push(format!("unknown key '{key}'")),
                }
            }
        }
        (V::Array(s), V::Array(g)) => {
            if let Some(s0) = s.first() {
                // tagged tables (probes) vary in shape; only the outer type is fixed
                let tagged = s0.as_table().is_some_and(|t| t.contains_key("kind"));
                for (i, gv) in g.iter().enumerate() {
                    if tagged {
                        if !gv.is_table() {
                            errs.push(format!("'{prefix}[{i}]' must be a table"));
                        }
                    } else {
                        check_tree(&format!("{prefix}[{i}]"), s0, gv, errs);
                    }
                }
            }
        }
        (V::Float(_), V::Integer(_)) => {}
        (s, g) if std::mem::discriminant(s) == std::mem::discriminant(g) => {}
        (s, g) => errs.push(format!(
            "'{prefix}' expects {}, got {}",
            type_name(s),
            type_name(g)
        )),
    }
}

/// Integer literals where the schema wants a float become floats.
fn coerce_numbers(schema: &toml::Value, given: &mut toml::Value) {
    use toml::Value as V;
    match (schema, given) {
        (V::Table(s), V::Table(g)) => {
            for (k, gv) in g.iter_mut() {
                if let Some(sv) = s.get(k) {
                    coerce_numbers(sv, gv);
                }
            }
        }
        (V::Array(s), V::Array(g)) => {
            if let Some(s0) = s.first() {
                g.iter_mut().for_each(|gv| coerce_numbers(s0, gv));
            }
        }
        (V::Float(_), g @ V::Integer(_)) => {
            let i = g.as_integer().expect("integer");
            *g = V::Float(i as f64);
        }
        _ => {}
    }
}

fn schema_value() -> toml::Value {
    toml::Value::try_from(ExperimentConfig::default()).expect("default config serializes")
}

/// Parses a dotted-key override value; bare words become strings.
fn parse_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// A one-key tree `{a = {b = value}}` for the dotted key `a.b`.
fn dotted_tree(key: &str, value: toml::Value) -> toml::Value {
    key.rsplit('.').fold(value, |inner, part| {
        let mut t = toml::Table::new();
        t.insert(part.to_string(), inner);
        toml::Value::Table(t)
    })
}

fn merge(base: &mut toml::Value, over: &toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(bv) if bv.is_table() && v.is_table() => merge(bv, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, o) => *b = o.clone(),
    }
}

impl ExperimentConfig {
    /// Parses TOML text, applies `key=value` overrides and validates.
    /// Missing keys take their defaults. Every violation is reported.
    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let schema = schema_value();
        let mut errs = Vec::new();
        let given: toml::Value = match toml::from_str::<toml::Table>(text) {
            Ok(t) => toml::Value::Table(t),
            Err(e) => return Err(Error::Schema(vec![format!("TOML parse error: {}", e.message())])),
        };
        check_tree("", &schema, &given, &mut errs);
        let mut tree = schema.clone();
        merge(&mut tree, &given);
        for ov in overrides {
            match ov.split_once('=') {
                Some((k, v)) if !k.trim().is_empty() && !k.split('.').any(str::is_empty) => {
                    let single = dotted_tree(k.trim(), parse_value(v.trim()));
                    let before = errs.len();
                    check_tree("", &schema, &single, &mut errs);
                    if errs.len() == before {
                        merge(&mut tree, &single);
                    } else {
                        for e in &mut errs[before..] {
                            e.push_str(&format!(" (override '{ov}')"));
                        }
                    }
                }
                _ => errs.push(format!("override '{ov}' is not key=value")),
            }
        }
        if !errs.is_empty() {
            return Err(Error::Schema(errs));
        }
        coerce_numbers(&schema, &mut tree);
        let cfg: ExperimentConfig = tree
            .try_into()
            .map_err(|e: toml::de::Error| Error::Schema(vec![e.message().to_string()]))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Self::from_toml_with_overrides(text, &[])
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_with_overrides(&text, overrides)
    }

    /// Default config with overrides applied.
    pub fn with_overrides(overrides: &[String]) -> Result<Self> {
        Self::from_toml_with_overrides("", overrides)
    }

    /// Canonical TOML of the fully resolved config.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// First 16 hex digits of the SHA-256 of [`ExperimentConfig::to_toml`].
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        hex::encode(&digest[..8])
    }

    pub fn write_snapshot(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }

    /// Semantic checks that the type system cannot express.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.schema_version != SCHEMA_VERSION {
            errs.push(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        let r = self.stage2.tokenizer_lr_ratio;
        if !(r > 0.0 && r <= 1.0) {
            errs.push(format!("stage2.tokenizer_lr_ratio must be in (0, 1], got {r}"));
        }
        for (name, v) in [("stage1.lr", self.stage1.lr), ("stage2.lr", self.stage2.lr)] {
            if !(v > 0.0 && v.is_finite()) {
                errs.push(format!("{name} must be positive, got {v}"));
            }
        }
        if self.stage1.batch_size == 0 || self.stage2.batch_size == 0 {
            errs.push("batch sizes must be positive".into());
        }
        let c = &self.corpus;
        if c.kind == CorpusKind::Synthetic {
            if c.num_clips < 3 {
                errs.push("corpus.num_clips must be at least 3".into());
            }
            if c.min_chars == 0 || c.min_chars > c.max_chars {
                errs.push("corpus needs 0 < min_chars ≤ max_chars".into());
            }
            if c.vocabulary.chars().any(|ch| crate::objectives::char_to_id(ch).is_none()) || c.vocabulary.is_empty() {
                errs.push("corpus.vocabulary must be non-empty and inside the alphabet".into());
            }
            if !(c.char_duration_s > 0.0) {
                errs.push("corpus.char_duration_s must be positive".into());
            }
        } else if c.wav_dir.is_empty() {
            errs.push("corpus.wav_dir is required for kind = \"wav_dir\"".into());
        }
        if !(c.val_fraction > 0.0 && c.test_fraction > 0.0 && c.val_fraction + c.test_fraction < 1.0) {
            errs.push("corpus split fractions must be positive and sum below 1".into());
        }
        if self.lm.token_dim != self.tokenizer.encoder.token_dim {
            errs.push(format!(
                "lm.token_dim ({}) must equal tokenizer.encoder.token_dim ({})",
                self.lm.token_dim, self.tokenizer.encoder.token_dim
            ));
        }
        if !self.analysis.ratios.contains(&1.0) {
            errs.push("analysis.ratios must include 1.0".into());
        }
        let sr = self.tokenizer.encoder.sample_rate;
        for b in &self.analysis.bands {
            if b.validate(sr).is_err() {
                errs.push(format!("band {} ± {} Hz does not fit under Nyquist", b.center_hz, b.half_width_hz));
            }
        }
        for (part, res) in [
            ("tokenizer.encoder", self.tokenizer.encoder.validate()),
            ("lm", self.lm.validate()),
            ("cfm", self.cfm.validate()),
        ] {
            match res {
                Ok(()) => {}
                Err(Error::Schema(v)) => errs.extend(v),
                Err(e) => errs.push(format!("{part}: {e}")),
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Schema(errs))
        }
    }
}
