//! Stage-1 tokenizer pre-training and stage-2 joint LM training.

use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, LrGroup, Optimizer, StageTag};
use super::config::ExperimentConfig;
use super::corpus::{load_corpus, Clip, Corpus};
use crate::dsp::snr_db;
use crate::error::{Error, Result};
use crate::objectives::{lm_loss, stage1_loss, AsrHead, Stage1Bindings};
use crate::rng::Rng;
use crate::tensor::{clip_grad_norm, Params, Tape, Tensor};
use crate::tokenizer::{Assignments, Codebooks, Tokenizer, TokenizerMode};
use crate::tts::{stop_targets, text_tokenize, Lm, MelFlow};

/// SNR cap for validation round trips.
pub const SNR_CAP_DB: f64 = 120.0;

/// One line of the training log. Empty fields are left blank in the CSV.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub stage: String,
    pub step: usize,
    /// `train`, `val` or `mel_flow`.
    pub kind: String,
    pub total: Option<f64>,
    pub rec: Option<f64>,
    pub ctc: Option<f64>,
    pub commit: Option<f64>,
    pub lm: Option<f64>,
    pub stop: Option<f64>,
    pub cfm: Option<f64>,
    pub lr_main: Option<f64>,
    pub lr_tokenizer: Option<f64>,
    pub grad_norm: Option<f64>,
    pub val_snr_db: Option<f64>,
    pub codebook_usage: Option<f64>,
    pub reseeded: Option<usize>,
}

/// A checkpoint together with the log rows its run produced.
#[derive(Clone, Debug)]
pub struct StageRun {
    pub checkpoint: Checkpoint,
    pub log: Vec<LogRow>,
}

impl StageRun {
    pub fn train_losses(&self) -> Vec<f64> {
        self.log.iter().filter(|r| r.kind == "train").filter_map(|r| r.total).collect()
    }

    pub fn last_val(&self) -> Option<&LogRow> {
        self.log.iter().rev().find(|r| r.kind == "val")
    }
}

pub fn write_log(path: &std::path::Path, rows: &[LogRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_log(path: &std::path::Path) -> Result<Vec<LogRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::io(path, std::io::Error::other(e))))
        .collect()
}

/// Clip indices for one step. The epoch permutation depends only on the
/// seed and epoch number, so a resumed run sees the same batches.
pub fn batch_indices(seed: u64, label: &str, step: usize, batch: usize, n: usize) -> Vec<usize> {
    (0..batch)
        .map(|b| {
            let g = step * batch + b;
            let (epoch, pos) = (g / n, g % n);
            let mut perm: Vec<usize> = (0..n).collect();
            Rng::derive(seed, &format!("{label}-epoch-{epoch}")).shuffle(&mut perm);
            perm[pos]
        })
        .collect()
}

fn epoch_ends_after(step: usize, batch: usize, n: usize) -> bool {
    (step + 1) * batch / n > step * batch / n
}

fn check_finite(step: usize, parts: &[(&str, f64)]) -> Result<()> {
    if parts.iter().all(|(_, v)| v.is_finite()) {
        return Ok(());
    }
    let dump = parts.iter().map(|(n, v)| format!("{n}={v}")).collect::<Vec<_>>().join(" ");
    Err(Error::NonFiniteLoss { step, dump })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// Random initialization for stage 1.
pub fn init_stage1(cfg: &ExperimentConfig) -> Result<Checkpoint> {
    cfg.validate()?;
    let mut rng = Rng::derive(cfg.seed, "init");
    let tokenizer = Tokenizer::new(cfg.tokenizer.clone(), &mut rng)?;
    let asr = AsrHead::new(tokenizer.feature_dim(), cfg.asr.clone(), &mut rng);
    let optimizer = Optimizer::new(vec![LrGroup {
        name: "stage1".into(),
        base_lr: cfg.stage1.lr,
        scale: 1.0,
        members: vec!["encoder".into(), "decoder".into(), "asr".into()],
    }]);
    Ok(Checkpoint {
        stage: StageTag::Stage1,
        step: 0,
        config: cfg.clone(),
        tokenizer,
        asr,
        lm: None,
        mel_flow: None,
        optimizer,
        rng: Rng::derive(cfg.seed, "train"),
    })
}

/// The checkpoint used in place of stage 1 by the `skip_stage1` ablation.
pub fn skip_stage1(cfg: &ExperimentConfig) -> Result<Checkpoint> {
    let mut ck = init_stage1(cfg)?;
    ck.stage = StageTag::Stage1Skipped;
    Ok(ck)
}

fn codebooks_from_encoder(tok: &Tokenizer, clips: &[Clip], seed: u64) -> Result<Codebooks> {
    let mut samples = Vec::new();
    for c in clips {
        let z = tok.encode_continuous(&c.audio)?;
        samples.extend((0..z.tokens.rows()).map(|r| z.tokens.row(r).to_vec()));
    }
    let r = &tok.config.rvq;
    Codebooks::init_from_samples(r.num_quantizers, r.codebook_size, &samples, &mut Rng::derive(seed, "codebook-init"))
}

/// Validation stage-1 loss and mean round-trip SNR.
pub fn stage1_validation(ck: &Checkpoint, clips: &[Clip]) -> Result<(f64, f64)> {
    let tok = &ck.tokenizer;
    let (mut losses, mut snrs) = (Vec::new(), Vec::new());
    for c in clips {
        let mut tape = Tape::new();
        let enc = tok.encoder.bind(&mut tape, false);
        let dec = tok.decoder.bind(&mut tape, false);
        let asr = ck.asr.params.bind(&mut tape, false);
        let b = Stage1Bindings {
            tokenizer: tok,
            encoder: &enc,
            decoder: &dec,
            asr: &ck.asr,
            asr_params: &asr,
        };
        let l = stage1_loss(&mut tape, &b, &c.audio, &c.transcript)?;
        losses.push(tape.value(l.total).item());
        let y = tok.roundtrip(&c.audio, tok.mode())?;
        snrs.push(snr_db(&c.audio.samples, &y.samples, SNR_CAP_DB));
    }
    Ok((mean(&losses), mean(&snrs)))
}

/// Continues stage 1 from `ck` up to step `until`.
pub fn train_stage1(corpus: &Corpus, mut ck: Checkpoint, until: usize) -> Result<StageRun> {
    if !matches!(ck.stage, StageTag::Stage1) {
        return Err(Error::Config(format!("cannot continue stage 1 from a {} checkpoint", ck.stage.as_str())));
    }
    let cfg = ck.config.clone();
    let s1 = &cfg.stage1;
    let train = &corpus.train;
    if train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let discrete = ck.tokenizer.mode() == TokenizerMode::Discrete;
    if discrete && ck.step == 0 {
        ck.tokenizer.codebooks = Some(codebooks_from_encoder(&ck.tokenizer, train, cfg.seed)?);
    }
    let mut log = Vec::new();
    for step in ck.step..until {
        let idx = batch_indices(cfg.seed, "stage1", step, s1.batch_size, train.len());
        let mut assign = Assignments::default();
        let (mut tot, mut rec, mut ctc, mut com) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for &i in &idx {
            let clip = &train[i];
            let mut tape = Tape::new();
            let tok = &ck.tokenizer;
            let enc = tok.encoder.bind(&mut tape, true);
            let dec = tok.decoder.bind(&mut tape, true);
            let asr = ck.asr.params.bind(&mut tape, true);
            let b = Stage1Bindings {
                tokenizer: tok,
                encoder: &enc,
                decoder: &dec,
                asr: &ck.asr,
                asr_params: &asr,
            };
            let l = stage1_loss(&mut tape, &b, &clip.audio, &clip.transcript)?;
            let total = tape.value(l.total).item();
            check_finite(step, &[("total", total), ("rec", l.rec), ("ctc", l.ctc), ("commit", l.commit)])?;
            tape.backward(l.total)?;
            ck.tokenizer.encoder.accumulate_grads(&tape, &enc);
            ck.tokenizer.decoder.accumulate_grads(&tape, &dec);
            ck.asr.params.accumulate_grads(&tape, &asr);
            if let Some(q) = l.quantized {
                assign.extend(q.assignments);
            }
            tot.push(total);
            rec.push(l.rec);
            ctc.push(l.ctc);
            com.push(l.commit);
        }
        let inv = 1.0 / idx.len() as f64;
        let tok = &mut ck.tokenizer;
        for p in [&mut tok.encoder, &mut tok.decoder, &mut ck.asr.params] {
            p.scale_grads(inv);
        }
        let gnorm = clip_grad_norm(&mut [&mut tok.encoder, &mut tok.decoder, &mut ck.asr.params], s1.grad_clip);
        check_finite(step, &[("grad_norm", gnorm)])?;
        ck.optimizer.step(&mut [
            ("encoder", &mut tok.encoder),
            ("decoder", &mut tok.decoder),
            ("asr", &mut ck.asr.params),
        ])?;
        for p in [&mut tok.encoder, &mut tok.decoder, &mut ck.asr.params] {
            p.zero_grads();
        }
        let rcfg = &cfg.tokenizer.rvq;
        if let Some(cb) = tok.codebooks.as_mut() {
            cb.update_ema(&assign, rcfg.ema_decay, rcfg.eps);
        }
        let mut step_rng = ck.rng.split();
        log.push(LogRow {
            stage: "stage1".into(),
            step: step + 1,
            kind: "train".into(),
            total: Some(mean(&tot)),
            rec: Some(mean(&rec)),
            ctc: Some(mean(&ctc)),
            commit: discrete.then(|| mean(&com)),
            lr_main: Some(ck.optimizer.groups[0].lr()),
            grad_norm: Some(gnorm),
            ..LogRow::default()
        });
        ck.step = step + 1;
        if epoch_ends_after(step, s1.batch_size, train.len()) || step + 1 == until {
            let mut row = LogRow {
                stage: "stage1".into(),
                step: step + 1,
                kind: "val".into(),
                ..LogRow::default()
            };
            if let Some(cb) = ck.tokenizer.codebooks.as_mut() {
                let usage = cb.usage();
                row.codebook_usage = Some(mean(&usage));
                let n = cb.reseed_dead(&assign, rcfg.dead_threshold, &mut step_rng);
                row.reseeded = Some(n.iter().sum());
            }
            if !corpus.val.is_empty() {
                let (vl, snr) = stage1_validation(&ck, &corpus.val)?;
                row.total = Some(vl);
                row.val_snr_db = Some(snr);
                log::info!("stage1 step {}: val loss {vl:.4}, val snr {snr:.2} dB", step + 1);
            }
            log.push(row);
        }
    }
    Ok(StageRun { checkpoint: ck, log })
}

/// Stage 1 from scratch, or the skipped placeholder when the ablation asks
/// for it.
pub fn run_stage1_on(cfg: &ExperimentConfig, corpus: &Corpus) -> Result<StageRun> {
    if cfg.ablation.skip_stage1 {
        return Ok(StageRun {
            checkpoint: skip_stage1(cfg)?,
            log: Vec::new(),
        });
    }
    train_stage1(corpus, init_stage1(cfg)?, cfg.stage1.steps)
}

pub fn run_stage1(cfg: &ExperimentConfig) -> Result<Checkpoint> {
    Ok(run_stage1_on(cfg, &load_corpus(cfg)?)?.checkpoint)
}

/// Fresh LM and optimizer on top of a stage-1 (or skipped) checkpoint.
pub fn init_stage2(cfg: &ExperimentConfig, stage1: &Checkpoint) -> Result<Checkpoint> {
    cfg.validate()?;
    if !matches!(stage1.stage, StageTag::Stage1 | StageTag::Stage1Skipped) {
        return Err(Error::Config(format!("stage 2 needs a stage-1 checkpoint, got {}", stage1.stage.as_str())));
    }
    if cfg.tokenizer != stage1.config.tokenizer {
        return Err(Error::Config("tokenizer config differs from the stage-1 checkpoint".into()));
    }
    if stage1.tokenizer.mode() != TokenizerMode::Continuous {
        return Err(Error::Config("stage 2 trains the LM on continuous tokens; use tokenizer.mode = \"continuous\"".into()));
    }
    let ratio = if cfg.ablation.freeze_tokenizer_stage2 {
        0.0
    } else {
        cfg.stage2.tokenizer_lr_ratio
    };
    let lm = Lm::new(cfg.lm.clone(), &mut Rng::derive(cfg.seed, "lm-init"))?;
    let mut groups = vec![
        LrGroup {
            name: "lm".into(),
            base_lr: cfg.stage2.lr,
            scale: 1.0,
            members: vec!["lm".into()],
        },
        LrGroup {
            name: "tokenizer".into(),
            base_lr: cfg.stage2.lr,
            scale: ratio,
            members: vec!["encoder".into()],
        },
    ];
    let tok = &stage1.tokenizer;
    let mel_flow = (cfg.stage2.mel_flow_steps > 0).then(|| {
        groups.push(LrGroup {
            name: "mel_flow".into(),
            base_lr: cfg.stage2.mel_flow_lr,
            scale: 1.0,
            members: vec!["mel_flow".into()],
        });
        MelFlow::new(cfg.mel_flow.clone(), tok.token_dim(), tok.downsample_factor(), &mut Rng::derive(cfg.seed, "mel-init"))
    });
    Ok(Checkpoint {
        stage: StageTag::Stage2,
        step: 0,
        config: cfg.clone(),
        tokenizer: stage1.tokenizer.clone(),
        asr: stage1.asr.clone(),
        lm: Some(lm),
        mel_flow,
        optimizer: Optimizer::new(groups),
        rng: Rng::derive(cfg.seed, "train2"),
    })
}

/// Teacher-forced LM loss terms for one clip. Gradients reach the encoder
/// only when `train_encoder` is set.
struct LmTerms {
    lm: f64,
    stop: f64,
    total: f64,
}

fn lm_clip_loss(
    ck: &Checkpoint,
    tape: &mut Tape,
    clip: &Clip,
    train: Option<bool>,
) -> Result<(LmTerms, crate::tensor::Var, crate::tensor::Bound, crate::tensor::Bound)> {
    let lm = ck.lm.as_ref().ok_or_else(|| Error::Config("checkpoint has no LM".into()))?;
    let tok = &ck.tokenizer;
    let (train_lm, train_enc) = match train {
        Some(enc) => (true, enc),
        None => (false, false),
    };
    let enc = tok.encoder.bind(tape, train_enc);
    let p = lm.params.bind(tape, train_lm);
    let a = tape.constant(Tensor::matrix(1, clip.audio.len(), clip.audio.samples.clone())?);
    let z = tok.encode_graph(tape, &enc, a)?;
    let text = text_tokenize(&clip.transcript.text())?;
    let out = lm.forward_graph(tape, &p, &text, z)?;
    let l_lm = lm_loss(tape, out.predicted, z)?;
    let t = tape.shape(z)[0];
    let l_stop = tape.bce_with_logits(out.stop_logits, &stop_targets(t))?;
    let w = tape.scale(l_stop, ck.config.stage2.stop_weight)?;
    let total = tape.add(l_lm, w)?;
    let terms = LmTerms {
        lm: tape.value(l_lm).item(),
        stop: tape.value(l_stop).item(),
        total: tape.value(total).item(),
    };
    Ok((terms, total, enc, p))
}

/// Mean teacher-forced next-frame MSE over `clips`, without the stop term.
pub fn lm_validation(ck: &Checkpoint, clips: &[Clip]) -> Result<f64> {
    let mut v = Vec::new();
    for c in clips {
        let mut tape = Tape::new();
        let (terms, ..) = lm_clip_loss(ck, &mut tape, c, None)?;
        v.push(terms.lm);
    }
    Ok(mean(&v))
}

/// Continues stage-2 LM training up to step `until`. The decoder is never
/// placed on a tape.
pub fn train_stage2(corpus: &Corpus, mut ck: Checkpoint, until: usize) -> Result<StageRun> {
    if ck.stage != StageTag::Stage2 {
        return Err(Error::Config(format!("cannot continue stage 2 from a {} checkpoint", ck.stage.as_str())));
    }
    let cfg = ck.config.clone();
    let s2 = &cfg.stage2;
    let train = &corpus.train;
    if train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let tok_lr = ck.optimizer.group("tokenizer").map_or(0.0, LrGroup::lr);
    let lm_lr = ck.optimizer.group("lm").map_or(0.0, LrGroup::lr);
    let train_enc = tok_lr > 0.0;
    let mut log = Vec::new();
    for step in ck.step..until {
        let idx = batch_indices(cfg.seed, "stage2", step, s2.batch_size, train.len());
        let (mut tot, mut lmv, mut stv) = (Vec::new(), Vec::new(), Vec::new());
        let mut lm_params = ck.lm.take().expect("stage-2 checkpoint has an LM");
        let mut enc_params = ck.tokenizer.encoder.clone();
        enc_params.zero_grads();
        // the loss borrows the checkpoint immutably; gradients land in the copies
        ck.lm = Some(lm_params.clone());
        for &i in &idx {
            let mut tape = Tape::new();
            let (terms, total, enc, p) = lm_clip_loss(&ck, &mut tape, &train[i], Some(train_enc))?;
            check_finite(step, &[("total", terms.total), ("lm", terms.lm), ("stop", terms.stop)])?;
            tape.backward(total)?;
            lm_params.params.accumulate_grads(&tape, &p);
            if train_enc {
                enc_params.accumulate_grads(&tape, &enc);
            }
            tot.push(terms.total);
            lmv.push(terms.lm);
            stv.push(terms.stop);
        }
        let inv = 1.0 / idx.len() as f64;
        lm_params.params.scale_grads(inv);
        enc_params.scale_grads(inv);
        let gnorm = if train_enc {
            clip_grad_norm(&mut [&mut lm_params.params, &mut enc_params], s2.grad_clip)
        } else {
            clip_grad_norm(&mut [&mut lm_params.params], s2.grad_clip)
        };
        check_finite(step, &[("grad_norm", gnorm)])?;
        ck.optimizer.step_group("lm", &mut [("lm", &mut lm_params.params)])?;
        if train_enc {
            ck.optimizer.step_group("tokenizer", &mut [("encoder", &mut enc_params)])?;
        }
        lm_params.params.zero_grads();
        enc_params.zero_grads();
        ck.lm = Some(lm_params);
        ck.tokenizer.encoder = enc_params;
        let _ = ck.rng.split();
        log.push(LogRow {
            stage: "stage2".into(),
            step: step + 1,
            kind: "train".into(),
            total: Some(mean(&tot)),
            lm: Some(mean(&lmv)),
            stop: Some(mean(&stv)),
            lr_main: Some(lm_lr),
            lr_tokenizer: Some(tok_lr),
            grad_norm: Some(gnorm),
            ..LogRow::default()
        });
        ck.step = step + 1;
        if epoch_ends_after(step, s2.batch_size, train.len()) || step + 1 == until {
            let mut row = LogRow {
                stage: "stage2".into(),
                step: step + 1,
                kind: "val".into(),
                lr_main: Some(lm_lr),
                lr_tokenizer: Some(tok_lr),
                ..LogRow::default()
            };
            if !corpus.val.is_empty() {
                let v = lm_validation(&ck, &corpus.val)?;
                row.lm = Some(v);
                log::info!("stage2 step {}: val lm_loss {v:.5}", step + 1);
            }
            log.push(row);
        }
    }
    Ok(StageRun { checkpoint: ck, log })
}

/// Flow-matching training of the mel generator on the final tokens.
pub fn train_mel_flow(corpus: &Corpus, ck: &mut Checkpoint, steps: usize) -> Result<Vec<LogRow>> {
    let Some(mut mf) = ck.mel_flow.take() else {
        return Ok(Vec::new());
    };
    let mut pairs = Vec::new();
    for c in &corpus.train {
        let z = ck.tokenizer.encode_continuous(&c.audio)?;
        if let Ok(p) = mf.pairs(&c.audio, &z.tokens) {
            pairs.push(p);
        }
    }
    if pairs.is_empty() {
        ck.mel_flow = Some(mf);
        return Err(Error::Config("no clip is long enough for mel-flow training".into()));
    }
    let sigma = ck.config.cfm.sigma_min;
    let mut log = Vec::new();
    for k in 0..steps {
        let p = &pairs[k % pairs.len()];
        let mut tape = Tape::new();
        let mut rng = ck.rng.split();
        let (l, bound) = mf.loss(&mut tape, p, sigma, &mut rng)?;
        let v = tape.value(l).item();
        check_finite(k, &[("cfm", v)])?;
        tape.backward(l)?;
        mf.net.params.accumulate_grads(&tape, &bound);
        let gnorm = clip_grad_norm(&mut [&mut mf.net.params], ck.config.stage2.grad_clip);
        ck.optimizer.step_group("mel_flow", &mut [("mel_flow", &mut mf.net.params)])?;
        mf.net.params.zero_grads();
        log.push(LogRow {
            stage: "stage2".into(),
            step: k + 1,
            kind: "mel_flow".into(),
            cfm: Some(v),
            lr_main: ck.optimizer.group("mel_flow").map(LrGroup::lr),
            grad_norm: Some(gnorm),
            ..LogRow::default()
        });
    }
    ck.mel_flow = Some(mf);
    Ok(log)
}

/// Full stage 2, asserting afterwards that the decoder is bit-identical to
/// the stage-1 decoder.
pub fn run_stage2_on(cfg: &ExperimentConfig, corpus: &Corpus, stage1: &Checkpoint) -> Result<StageRun> {
    let init = init_stage2(cfg, stage1)?;
    let mut run = train_stage2(corpus, init, cfg.stage2.steps)?;
    let mf_log = train_mel_flow(corpus, &mut run.checkpoint, cfg.stage2.mel_flow_steps)?;
    run.log.extend(mf_log);
    if !run.checkpoint.tokenizer.decoder.bit_identical(&stage1.tokenizer.decoder) {
        return Err(Error::Config("decoder changed during stage 2".into()));
    }
    Ok(run)
}

pub fn run_stage2(cfg: &ExperimentConfig, stage1: &Checkpoint) -> Result<Checkpoint> {
    Ok(run_stage2_on(cfg, &load_corpus(cfg)?, stage1)?.checkpoint)
}

/// Bitwise comparison of every parameter set two checkpoints hold.
pub fn checkpoints_bit_identical(a: &Checkpoint, b: &Checkpoint) -> bool {
    let same = |x: &Params, y: &Params| x.bit_identical(y);
    let opt = |x: Option<&Params>, y: Option<&Params>| match (x, y) {
        (Some(x), Some(y)) => same(x, y),
        (None, None) => true,
        _ => false,
    };
    same(&a.tokenizer.encoder, &b.tokenizer.encoder)
        && same(&a.tokenizer.decoder, &b.tokenizer.decoder)
        && same(&a.asr.params, &b.asr.params)
        && opt(a.lm.as_ref().map(|l| &l.params), b.lm.as_ref().map(|l| &l.params))
        && opt(
            a.mel_flow.as_ref().map(|m| &m.net.params),
            b.mel_flow.as_ref().map(|m| &m.net.params),
        )
        && a.tensors() == b.tensors()
}
