//! Checkpoints: a tensor container plus a JSON sidecar.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::objectives::AsrHead;
use crate::rng::Rng;
use crate::tensor::{read_container, write_container, Adam, AdamState, Params, Tensor};
use crate::tokenizer::Tokenizer;
use crate::tts::{Lm, MelFlow};

/// Sidecar format identifier.
pub const SIDECAR_FORMAT: &str = "tokenlab-checkpoint";
pub const SIDECAR_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageTag {
    Stage1,
    /// Random initialization standing in for stage 1.
    Stage1Skipped,
    Stage2,
}

impl StageTag {
    pub fn as_str(self) -> &'static str {
        match self {
            StageTag::Stage1 => "stage1",
            StageTag::Stage1Skipped => "stage1-skipped",
            StageTag::Stage2 => "stage2",
        }
    }
}

/// A named set of parameter slots sharing one learning rate
/// `base_lr × scale`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrGroup {
    pub name: String,
    pub base_lr: f64,
    pub scale: f64,
    pub members: Vec<String>,
}

impl LrGroup {
    pub fn lr(&self) -> f64 {
        self.base_lr * self.scale
    }
}

/// Adam over several parameter slots grouped by learning rate.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer {
    pub adam: Adam,
    pub groups: Vec<LrGroup>,
    pub states: BTreeMap<String, AdamState>,
}

impl Optimizer {
    pub fn new(groups: Vec<LrGroup>) -> Self {
        Self {
            adam: Adam::default(),
            groups,
            states: BTreeMap::new(),
        }
    }

    pub fn group(&self, name: &str) -> Option<&LrGroup> {
        self.groups.iter().find(|g| g.name == name)
    }

    /// Applies one step to every slot in `slots`. Groups with a zero
    /// learning rate are left untouched, moments included.
    pub fn step(&mut self, slots: &mut [(&str, &mut Params)]) -> Result<()> {
        let names: Vec<String> = self.groups.iter().map(|g| g.name.clone()).collect();
        for n in &names {
            self.step_group(n, slots)?;
        }
        Ok(())
    }

    /// Steps one group only.
    pub fn step_group(&mut self, name: &str, slots: &mut [(&str, &mut Params)]) -> Result<()> {
        let Some(g) = self.groups.iter().find(|g| g.name == name) else {
            return Err(Error::Config(format!("no optimizer group '{name}'")));
        };
        let lr = g.lr();
        if lr == 0.0 {
            return Ok(());
        }
        for m in &g.members {
            let Some((_, p)) = slots.iter_mut().find(|(n, _)| *n == m.as_str()) else {
                return Err(Error::Config(format!("optimizer slot '{m}' was not supplied")));
            };
            let st = self.states.entry(m.clone()).or_insert_with(|| AdamState::new(p));
            self.adam.step(st, p, lr)?;
        }
        Ok(())
    }
}

/// Everything needed to resume or evaluate a run.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub stage: StageTag,
    pub step: usize,
    pub config: ExperimentConfig,
    pub tokenizer: Tokenizer,
    pub asr: AsrHead,
    pub lm: Option<Lm>,
    pub mel_flow: Option<MelFlow>,
    pub optimizer: Optimizer,
    pub rng: Rng,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    format: String,
    version: u32,
    id: String,
    stage: StageTag,
    step: usize,
    seed: u64,
    config_hash: String,
    rng: Rng,
    lr_groups: Vec<LrGroup>,
    optimizer_steps: BTreeMap<String, u64>,
    arch: Arch,
    config: ExperimentConfig,
}

#[derive(Serialize, Deserialize)]
struct Arch {
    tokenizer_mode: String,
    token_dim: usize,
    downsample_factor: usize,
    tokenizer_weights: usize,
    lm_weights: Option<usize>,
    mel_flow_weights: Option<usize>,
}

fn stem_paths(path: &Path) -> (PathBuf, PathBuf) {
    (path.with_extension("ckpt"), path.with_extension("json"))
}

fn prefixed<'a>(prefix: &'a str, p: &'a Params) -> impl Iterator<Item = (String, Tensor)> + 'a {
    let prefix = prefix.to_string();
    p.iter().map(move |(n, t)| (format!("{prefix}{n}"), t.clone()))
}

impl Checkpoint {
    /// `<stage>-<config hash>-<step>`.
    pub fn id(&self) -> String {
        format!("{}-{}-{}", self.stage.as_str(), self.config.hash(), self.step)
    }

    fn slot(&self, name: &str) -> Option<&Params> {
        match name {
            "encoder" => Some(&self.tokenizer.encoder),
            "decoder" => Some(&self.tokenizer.decoder),
            "asr" => Some(&self.asr.params),
            "lm" => self.lm.as_ref().map(|l| &l.params),
            "mel_flow" => self.mel_flow.as_ref().map(|m| &m.net.params),
            _ => None,
        }
    }

    /// All tensors in container order.
    pub fn tensors(&self) -> Vec<(String, Tensor)> {
        let mut out: Vec<(String, Tensor)> = self
            .tokenizer
            .to_tensors()
            .into_iter()
            .map(|(n, t)| (format!("tokenizer.{n}"), t))
            .collect();
        out.extend(prefixed("asr.", &self.asr.params));
        if let Some(lm) = &self.lm {
            out.extend(prefixed("lm.", &lm.params));
        }
        if let Some(mf) = &self.mel_flow {
            out.extend(prefixed("mel_flow.", &mf.net.params));
        }
        for (slot, st) in &self.optimizer.states {
            let p = self.slot(slot).expect("optimizer slot exists");
            out.extend(st.to_tensors(p, &format!("optim.{slot}.")));
        }
        out.into_iter().map(|(n, t)| (n, t.with_requires_grad(false))).collect()
    }

    fn sidecar(&self) -> Sidecar {
        Sidecar {
            format: SIDECAR_FORMAT.into(),
            version: SIDECAR_VERSION,
            id: self.id(),
            stage: self.stage,
            step: self.step,
            seed: self.config.seed,
            config_hash: self.config.hash(),
            rng: self.rng.clone(),
            lr_groups: self.optimizer.groups.clone(),
            optimizer_steps: self.optimizer.states.iter().map(|(k, s)| (k.clone(), s.step)).collect(),
            arch: Arch {
                tokenizer_mode: self.tokenizer.mode().as_str().into(),
                token_dim: self.tokenizer.token_dim(),
                downsample_factor: self.tokenizer.downsample_factor(),
                tokenizer_weights: self.tokenizer.num_weights(),
                lm_weights: self.lm.as_ref().map(|l| l.params.num_scalars()),
                mel_flow_weights: self.mel_flow.as_ref().map(|m| m.net.params.num_scalars()),
            },
            config: self.config.clone(),
        }
    }

    /// Writes `<path>.ckpt` and `<path>.json`; `path`'s own extension is
    /// replaced. Returns the container path.
    pub fn save(&self, path: &Path) -> Result<PathBuf> {
        let (ckpt, json) = stem_paths(path);
        if let Some(dir) = ckpt.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        write_container(&ckpt, &self.tensors())?;
        let text = serde_json::to_string_pretty(&self.sidecar()).expect("sidecar serializes");
        std::fs::write(&json, text + "\n").map_err(|e| Error::io(&json, e))?;
        Ok(ckpt)
    }

    /// Reads a checkpoint given either file of the pair or their stem.
    pub fn load(path: &Path) -> Result<Self> {
        let (ckpt, json) = stem_paths(path);
        let text = std::fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
        let side: Sidecar = serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", json.display())))?;
        if side.format != SIDECAR_FORMAT || side.version != SIDECAR_VERSION {
            return Err(Error::Checkpoint(format!(
                "{}: unsupported sidecar {} v{}",
                json.display(),
                side.format,
                side.version
            )));
        }
        side.config.validate()?;
        let tensors = read_container(&ckpt)?;
        let all: Params = {
            let mut p = Params::new();
            for (n, t) in tensors {
                p.insert(n, t);
            }
            p
        };
        let cfg = side.config;
        let tok_tensors: Vec<(String, Tensor)> = all
            .extract_prefixed("tokenizer.")
            .iter()
            .map(|(n, t)| (n.to_string(), t.clone()))
            .collect();
        let tokenizer = Tokenizer::from_tensors(cfg.tokenizer.clone(), &tok_tensors)?;
        let mut rng0 = Rng::new(0);
        let mut asr = AsrHead::new(tokenizer.feature_dim(), cfg.asr.clone(), &mut rng0);
        asr.params.load_from(&all.extract_prefixed("asr."))?;
        let lm = if side.arch.lm_weights.is_some() {
            let mut lm = Lm::new(cfg.lm.clone(), &mut rng0)?;
            lm.params.load_from(&all.extract_prefixed("lm."))?;
            Some(lm)
        } else {
            None
        };
        let mel_flow = if side.arch.mel_flow_weights.is_some() {
            let mut mf = MelFlow::new(cfg.mel_flow.clone(), tokenizer.token_dim(), tokenizer.downsample_factor(), &mut rng0);
            mf.net.params.load_from(&all.extract_prefixed("mel_flow."))?;
            Some(mf)
        } else {
            None
        };
        let mut ck = Checkpoint {
            stage: side.stage,
            step: side.step,
            config: cfg,
            tokenizer,
            asr,
            lm,
            mel_flow,
            optimizer: Optimizer::new(side.lr_groups),
            rng: side.rng,
        };
        let mut states = BTreeMap::new();
        for (slot, step) in &side.optimizer_steps {
            let p = ck
                .slot(slot)
                .ok_or_else(|| Error::Checkpoint(format!("optimizer slot '{slot}' has no parameters")))?;
            let st = AdamState::from_tensors(p, &format!("optim.{slot}."), *step, |n| all.get(n).cloned())?;
            states.insert(slot.clone(), st);
        }
        ck.optimizer.states = states;
        if ck.id() != side.id {
            log::warn!("checkpoint id {} does not match recomputed {}", side.id, ck.id());
        }
        Ok(ck)
    }
}
