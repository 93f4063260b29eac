//! Toy corpora: a synthetic tone-speech recipe and WAV-directory ingestion.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::config::{CorpusConfig, CorpusKind, ExperimentConfig};
use crate::dsp::{read_wav, write_wav, AudioBuffer};
use crate::error::{Error, Result};
use crate::objectives::{char_to_id, ctc_required_frames, normalize, Transcript};
use crate::rng::Rng;
use crate::tokenizer::Tokenizer;

/// One utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct Clip {
    pub id: String,
    pub audio: AudioBuffer,
    pub transcript: Transcript,
}

/// Hash-keyed train/validation/test partition.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub train: Vec<Clip>,
    pub val: Vec<Clip>,
    pub test: Vec<Clip>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn all(&self) -> impl Iterator<Item = &Clip> {
        self.train.iter().chain(&self.val).chain(&self.test)
    }
}

const FORMANT_BW: [f64; 4] = [90.0, 140.0, 260.0, 400.0];
const FORMANT_GAIN: [f64; 4] = [1.0, 0.7, 0.5, 0.35];
const FADE_S: f64 = 0.01;
/// Per-clip pitch, uniform over an adult speaking range.
pub const F0_RANGE_HZ: (f64, f64) = (100.0, 220.0);

/// Three resonance frequencies for a character. The third spans up to
/// roughly 8.5 kHz so every analysis band sees energy in some clips.
pub fn char_formants(c: char) -> Option<[f64; 4]> {
    let i = char_to_id(c)? as f64 - 1.0;
    Some([
        260.0 + 70.0 * (i % 9.0),
        900.0 + 140.0 * ((i * 5.0) % 13.0),
        2_400.0 + 400.0 * (i % 16.0),
        3_600.0 + 450.0 * ((i * 7.0) % 16.0),
    ])
}

fn render_char(formants: [f64; 4], f0: f64, n: usize, sr: u32, rng: &mut Rng) -> Vec<f64> {
    let nyq = sr as f64 / 2.0;
    let max_h = ((0.95 * nyq) / f0).floor() as usize;
    let mut out = vec![0.0; n];
    for h in 1..=max_h {
        let f = f0 * h as f64;
        let mut amp = 0.0;
        for k in 0..4 {
            let d = (f - formants[k]) / FORMANT_BW[k];
            amp += FORMANT_GAIN[k] / (1.0 + d * d);
        }
        // gentle tilt plus a floor so high harmonics never vanish
        amp += 0.02 * (f0 / f).sqrt();
        let phase = 2.0 * PI * rng.uniform();
        let w = 2.0 * PI * f / sr as f64;
        for (i, o) in out.iter_mut().enumerate() {
            *o += amp * (w * i as f64 + phase).sin();
        }
    }
    let fade = ((FADE_S * sr as f64) as usize).min(n / 2);
    for i in 0..fade {
        let g = 0.5 - 0.5 * (PI * i as f64 / fade as f64).cos();
        out[i] *= g;
        out[n - 1 - i] *= g;
    }
    out
}

/// Renders `text` as a sequence of formant-shaped harmonic tones; spaces
/// and apostrophes become silence. Peak-normalized to 0.5.
pub fn synthesize_text(text: &str, f0: f64, char_duration_s: f64, sample_rate: u32, rng: &mut Rng) -> Vec<f64> {
    let n = (char_duration_s * sample_rate as f64).round() as usize;
    let mut out = Vec::with_capacity(n * text.len());
    for c in text.chars() {
        match char_formants(c).filter(|_| c.is_ascii_lowercase()) {
            Some(fm) => out.extend(render_char(fm, f0, n, sample_rate, rng)),
            None => out.extend(std::iter::repeat(0.0).take(n)),
        }
    }
    let peak = out.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if peak > 0.0 {
        out.iter_mut().for_each(|x| *x *= 0.5 / peak);
    }
    out
}

/// Deterministic synthetic clips from the recipe and seed.
pub fn synthetic_clips(c: &CorpusConfig, sample_rate: u32, seed: u64) -> Result<Vec<Clip>> {
    let vocab: Vec<char> = c.vocabulary.chars().collect();
    let mut rng = Rng::derive(seed, "corpus");
    let mut clips = Vec::with_capacity(c.num_clips);
    for k in 0..c.num_clips {
        let len = c.min_chars + rng.below(c.max_chars - c.min_chars + 1);
        let text: String = (0..len).map(|_| vocab[rng.below(vocab.len())]).collect();
        let f0 = F0_RANGE_HZ.0 + (F0_RANGE_HZ.1 - F0_RANGE_HZ.0) * rng.uniform();
        let samples = synthesize_text(&text, f0, c.char_duration_s, sample_rate, &mut rng);
        clips.push(Clip {
            id: format!("clip{k:04}"),
            audio: AudioBuffer::new(samples, sample_rate)?,
            transcript: Transcript::from_text(&text),
        });
    }
    Ok(clips)
}

fn id_hash(id: &str) -> [u8; 32] {
    Sha256::digest(id.as_bytes()).into()
}

/// Orders clips by the hash of their id and cuts validation, test and
/// train in that order. Each split gets at least one clip.
pub fn split_clips(mut clips: Vec<Clip>, val_fraction: f64, test_fraction: f64) -> Result<Corpus> {
    let n = clips.len();
    if n < 3 {
        return Err(Error::Config(format!("need at least 3 clips to split, got {n}")));
    }
    clips.sort_by_key(|c| id_hash(&c.id));
    let n_val = ((val_fraction * n as f64).ceil() as usize).clamp(1, n - 2);
    let n_test = ((test_fraction * n as f64).ceil() as usize).clamp(1, n - 1 - n_val);
    let mut rest = clips.split_off(n_val);
    let val = clips;
    let train = rest.split_off(n_test);
    Ok(Corpus { train, val, test: rest })
}

/// Reads `stem<TAB>text` lines; blank lines and `#` comments are skipped.
pub fn parse_transcripts(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    let mut bad = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        match line.split_once('\t') {
            Some((stem, t)) => {
                out.insert(stem.trim().to_string(), t.to_string());
            }
            None => bad.push(format!("transcripts line {}: expected stem<TAB>text", i + 1)),
        }
    }
    if bad.is_empty() {
        Ok(out)
    } else {
        Err(Error::Ingestion(bad))
    }
}

/// Loads every `.wav` in `dir` with its transcript. All problems are
/// collected and reported together.
pub fn ingest_wav_dir(dir: &Path, transcripts: &str, tokenizer: &Tokenizer) -> Result<Vec<Clip>> {
    let tpath = dir.join(transcripts);
    let ttext = std::fs::read_to_string(&tpath).map_err(|e| Error::io(&tpath, e))?;
    let table = parse_transcripts(&ttext)?;
    let mut stems = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")) {
            stems.push(p);
        }
    }
    stems.sort();
    let sr = tokenizer.sample_rate();
    let mut clips = Vec::new();
    let mut bad = Vec::new();
    for p in &stems {
        let name = p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let Some(raw) = table.get(&stem) else {
            bad.push(format!("{name}: missing transcript"));
            continue;
        };
        let audio = match read_wav(p) {
            Ok(a) => a,
            Err(e) => {
                bad.push(format!("{name}: {e}"));
                continue;
            }
        };
        if audio.sample_rate != sr {
            bad.push(format!("{name}: sample rate {} Hz, expected {sr} Hz", audio.sample_rate));
            continue;
        }
        let (norm, dropped) = normalize(raw);
        if dropped > 0 {
            log::warn!("{name}: dropped {dropped} characters outside the alphabet");
        }
        let transcript = Transcript::from_text(&norm);
        if transcript.is_empty() {
            bad.push(format!("{name}: empty transcript"));
            continue;
        }
        match tokenizer.num_frames(audio.len()) {
            Some(t) if t >= ctc_required_frames(transcript.ids()) => {}
            _ => {
                bad.push(format!("{name}: too short for its transcript"));
                continue;
            }
        }
        clips.push(Clip { id: stem, audio, transcript });
    }
    let wav_stems: std::collections::BTreeSet<String> = stems
        .iter()
        .filter_map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .collect();
    for stem in table.keys() {
        if !wav_stems.contains(stem) {
            bad.push(format!("{stem}: transcript has no audio file"));
        }
    }
    if !bad.is_empty() {
        return Err(Error::Ingestion(bad));
    }
    Ok(clips)
}

/// Builds and splits the configured corpus.
pub fn load_corpus(cfg: &ExperimentConfig) -> Result<Corpus> {
    let c = &cfg.corpus;
    let clips = match c.kind {
        CorpusKind::Synthetic => synthetic_clips(c, cfg.tokenizer.encoder.sample_rate, cfg.seed)?,
        CorpusKind::WavDir => {
            // only the frame arithmetic is needed; weights are irrelevant
            let tok = Tokenizer::new(cfg.tokenizer.clone(), &mut Rng::new(0))?;
            ingest_wav_dir(Path::new(&c.wav_dir), &c.transcripts, &tok)?
        }
    };
    split_clips(clips, c.val_fraction, c.test_fraction)
}

/// Writes every clip as `<id>.wav` plus a transcript file, in a layout
/// that `ingest_wav_dir` reads back.
pub fn write_corpus(dir: &Path, corpus: &Corpus, transcripts: &str) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut lines = String::new();
    let mut clips: Vec<&Clip> = corpus.all().collect();
    clips.sort_by(|a, b| a.id.cmp(&b.id));
    for c in clips {
        write_wav(&dir.join(format!("{}.wav", c.id)), &c.audio, 16)?;
        lines.push_str(&format!("{}\t{}\n", c.id, c.transcript.text()));
    }
    let tpath = dir.join(transcripts);
    std::fs::write(&tpath, lines).map_err(|e| Error::io(&tpath, e))
}
