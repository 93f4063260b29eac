use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use tokenlab::dsp::{read_wav, write_wav};
use tokenlab::error::{Error, Result};
use tokenlab::gradsuite;
use tokenlab::lab::{
    emit_report, intrinsic_eval_checkpoint, measure_robustness, measure_transfer, AudioSystem, ProbeSet, Report,
    ReportFormat, TokenizerSystem, TransferReport,
};
use tokenlab::pipeline::{
    load_corpus, run_stage1_on, run_stage2_on, write_corpus, write_log, Checkpoint, ExperimentConfig, SCHEMA_VERSION,
};
use tokenlab::tts::synthesize;

const SNAPSHOT: &str = "config.resolved.toml";

fn long_version() -> &'static str {
    Box::leak(format!("{} (config schema v{SCHEMA_VERSION})", env!("CARGO_PKG_VERSION")).into_boxed_str())
}

/// Speech tokenizer laboratory: training, synthesis and analysis.
#[derive(Parser, Debug)]
#[command(name = "tokenlab", version = long_version(), about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML experiment config; defaults apply to missing keys. When absent,
    /// the first checkpoint's embedded config is used, if any.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted-key override, e.g. `stage1.steps=200`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Directory that receives every artifact of the run.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the configured corpus as WAV files plus a transcript file.
    GenCorpus {
        #[command(flatten)]
        common: Common,
    },
    /// Stage 1: train encoder, decoder and ASR head.
    TrainTokenizer {
        #[command(flatten)]
        common: Common,
    },
    /// Stage 2: train the language model (and optionally the mel flow).
    TrainTts {
        #[command(flatten)]
        common: Common,
        /// Stage-1 checkpoint; when absent stage 1 runs first.
        #[arg(long)]
        ckpt: Option<PathBuf>,
    },
    /// Generate speech for a text with a stage-2 checkpoint.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        text: String,
        /// Optional prompt WAV whose tokens prefix the generation.
        #[arg(long)]
        prompt: Option<PathBuf>,
        /// Defaults to the LM context left after the text.
        #[arg(long)]
        max_frames: Option<usize>,
    },
    /// Band retention of each checkpoint's tokenizer.
    AnalyzeFreq {
        #[command(flatten)]
        common: Common,
        #[arg(long, required = true)]
        ckpt: Vec<PathBuf>,
        /// `delimited` or `plot-table`.
        #[arg(long, default_value = "delimited")]
        format: String,
    },
    /// Score drop under window-length (sample-rate) mismatch.
    AnalyzeRobustness {
        #[command(flatten)]
        common: Common,
        #[arg(long, required = true)]
        ckpt: Vec<PathBuf>,
        #[arg(long, default_value = "delimited")]
        format: String,
    },
    /// Reconstruction SNR, mel distance and LM token MSE on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, required = true)]
        ckpt: Vec<PathBuf>,
        #[arg(long, default_value = "delimited")]
        format: String,
    },
    /// Finite-difference check of every differentiable op and composite.
    Gradcheck {
        #[command(flatten)]
        common: Common,
    },
}

fn resolve(common: &Common, ckpt: Option<&Path>) -> Result<ExperimentConfig> {
    let cfg = match (&common.config, ckpt) {
        (Some(path), _) => ExperimentConfig::load(path, &common.overrides)?,
        (None, Some(c)) => {
            let base = Checkpoint::load(c)?.config.to_toml();
            ExperimentConfig::from_toml_with_overrides(&base, &common.overrides)?
        }
        (None, None) => ExperimentConfig::with_overrides(&common.overrides)?,
    };
    std::fs::create_dir_all(&common.out).map_err(|e| Error::Io {
        path: common.out.clone(),
        source: e,
    })?;
    cfg.write_snapshot(&common.out.join(SNAPSHOT))?;
    Ok(cfg)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn load_all(paths: &[PathBuf]) -> Result<Vec<Checkpoint>> {
    paths.iter().map(|p| Checkpoint::load(p)).collect()
}

// Distinct labels when several checkpoints share a mode.
fn labels(cks: &[Checkpoint]) -> Vec<String> {
    let modes: Vec<&str> = cks.iter().map(|c| c.tokenizer.mode().as_str()).collect();
    modes
        .iter()
        .enumerate()
        .map(|(i, m)| {
            if modes.iter().filter(|x| *x == m).count() > 1 {
                format!("{m}#{i}")
            } else {
                m.to_string()
            }
        })
        .collect()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenCorpus { common } => {
            let cfg = resolve(&common, None)?;
            let corpus = load_corpus(&cfg)?;
            let dir = common.out.join("corpus");
            write_corpus(&dir, &corpus, &cfg.corpus.transcripts)?;
            println!("wrote {} clips to {}", corpus.len(), dir.display());
        }
        Command::TrainTokenizer { common } => {
            let cfg = resolve(&common, None)?;
            let corpus = load_corpus(&cfg)?;
            let run = run_stage1_on(&cfg, &corpus)?;
            write_log(&common.out.join("stage1_log.csv"), &run.log)?;
            let path = run.checkpoint.save(&common.out.join("stage1"))?;
            println!("checkpoint {} -> {}", run.checkpoint.id(), path.display());
        }
        Command::TrainTts { common, ckpt } => {
            let cfg = resolve(&common, ckpt.as_deref())?;
            let corpus = load_corpus(&cfg)?;
            let stage1 = match ckpt {
                Some(p) => Checkpoint::load(&p)?,
                None => {
                    info!("no stage-1 checkpoint given, running stage 1");
                    let run = run_stage1_on(&cfg, &corpus)?;
                    write_log(&common.out.join("stage1_log.csv"), &run.log)?;
                    run.checkpoint.save(&common.out.join("stage1"))?;
                    run.checkpoint
                }
            };
            let run = run_stage2_on(&cfg, &corpus, &stage1)?;
            write_log(&common.out.join("stage2_log.csv"), &run.log)?;
            let path = run.checkpoint.save(&common.out.join("stage2"))?;
            println!("checkpoint {} -> {}", run.checkpoint.id(), path.display());
        }
        Command::Synth {
            common,
            ckpt,
            text,
            prompt,
            max_frames,
        } => {
            resolve(&common, Some(&ckpt))?;
            let ck = Checkpoint::load(&ckpt)?;
            let lm = ck
                .lm
                .as_ref()
                .ok_or_else(|| Error::Config(format!("{} has no language model; train-tts first", ckpt.display())))?;
            let prompt = prompt.map(|p| read_wav(&p)).transpose()?;
            let prompt_frames = prompt.as_ref().and_then(|a| ck.tokenizer.num_frames(a.len())).unwrap_or(0);
            let max = max_frames.unwrap_or_else(|| {
                lm.config.max_seq_len.saturating_sub(text.chars().count() + prompt_frames + 1)
            });
            let (audio, g) = synthesize(lm, &ck.tokenizer, &text, prompt.as_ref(), max)?;
            let wav = common.out.join("synth.wav");
            write_wav(&wav, &audio, 16)?;
            let mut trace = String::from("frame,stop_logit,token_norm\n");
            for r in &g.trace {
                trace.push_str(&format!("{},{:?},{:?}\n", r.frame, r.stop_logit, r.token_norm));
            }
            write_file(&common.out.join("synth_trace.csv"), &trace)?;
            println!(
                "{} frames ({}), {} samples at {} Hz -> {}",
                g.tokens.len(),
                if g.stopped { "stop head" } else { "frame limit" },
                audio.len(),
                audio.sample_rate,
                wav.display()
            );
        }
        Command::AnalyzeFreq { common, ckpt, format } => {
            let format: ReportFormat = format.parse()?;
            let cfg = resolve(&common, ckpt.first().map(PathBuf::as_path))?;
            let cks = load_all(&ckpt)?;
            let probes = ProbeSet::from_config(&cfg.analysis);
            let mut report: Option<TransferReport> = None;
            for (ck, label) in cks.iter().zip(labels(&cks)) {
                let sys = TokenizerSystem {
                    tokenizer: &ck.tokenizer,
                    mode: ck.tokenizer.mode(),
                };
                let r = measure_transfer(&sys, &label, &ck.id(), &cfg.analysis.bands, &probes)?;
                report = Some(match report {
                    None => r,
                    Some(acc) => acc.merge(r)?,
                });
            }
            let report = report.expect("at least one checkpoint");
            let path = common.out.join("transfer.csv");
            emit_report(&Report::Transfer(&report), &path, format, &cfg.hash())?;
            for row in &report.rows {
                println!("{} {} Hz: {:.4}", row.mode, row.center_hz, row.retention);
            }
        }
        Command::AnalyzeRobustness { common, ckpt, format } => {
            let format: ReportFormat = format.parse()?;
            let cfg = resolve(&common, ckpt.first().map(PathBuf::as_path))?;
            let cks = load_all(&ckpt)?;
            let probes = ProbeSet::from_config(&cfg.analysis);
            let names = labels(&cks);
            let ids: Vec<String> = cks.iter().map(Checkpoint::id).collect();
            let systems: Vec<TokenizerSystem> = cks
                .iter()
                .map(|ck| TokenizerSystem {
                    tokenizer: &ck.tokenizer,
                    mode: ck.tokenizer.mode(),
                })
                .collect();
            let entries: Vec<(&str, &str, &dyn AudioSystem)> = systems
                .iter()
                .zip(&names)
                .zip(&ids)
                .map(|((s, n), id)| (n.as_str(), id.as_str(), s as &dyn AudioSystem))
                .collect();
            let report = measure_robustness(&entries, &cfg.analysis.ratios, &cfg.analysis.bands, &probes)?;
            let path = common.out.join("robustness.csv");
            emit_report(&Report::Robustness(&report), &path, format, &cfg.hash())?;
            for row in &report.rows {
                println!("{} ratio {}: score {:.4} drop {:.4}", row.mode, row.ratio, row.score, row.drop);
            }
        }
        Command::Eval { common, ckpt, format } => {
            let format: ReportFormat = format.parse()?;
            let cfg = resolve(&common, ckpt.first().map(PathBuf::as_path))?;
            let corpus = load_corpus(&cfg)?;
            let cks = load_all(&ckpt)?;
            let mut reports = Vec::new();
            for ck in &cks {
                reports.push(intrinsic_eval_checkpoint(ck, ck.tokenizer.mode(), &corpus.test)?);
            }
            let path = common.out.join("intrinsic.csv");
            emit_report(&Report::Intrinsic(&reports), &path, format, &cfg.hash())?;
            for r in &reports {
                let mse = r.token_mse.map_or("-".to_string(), |m| format!("{m:.5}"));
                println!("{} snr {:.2} dB, mel {:.4}, token mse {mse}", r.mode, r.snr_db, r.mel_distance);
            }
        }
        Command::Gradcheck { common } => {
            resolve(&common, None)?;
            let results = gradsuite::run_suite()?;
            let mut csv = String::from("name,max_rel_err,max_abs_err,coords,passed\n");
            let mut failed = Vec::new();
            for r in &results {
                let ok = r.passed(gradsuite::TOLERANCE);
                println!("{} {} rel {:.3e}", if ok { "PASS" } else { "FAIL" }, r.name, r.max_rel_err);
                csv.push_str(&format!("{},{:?},{:?},{},{}\n", r.name, r.max_rel_err, r.max_abs_err, r.coords_checked, ok));
                if !ok {
                    failed.push(r.name.clone());
                }
            }
            write_file(&common.out.join("gradcheck.csv"), &csv)?;
            if !failed.is_empty() {
                return Err(Error::CheckFailed(format!("gradient check failed for {}", failed.join(", "))));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let cat = e.category();
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", cat.as_str());
            ExitCode::from(cat.exit_code() as u8)
        }
    }
}
