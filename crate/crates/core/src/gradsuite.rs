//! The finite-difference gradient suite behind `tokenlab gradcheck`:
//! every differentiable tape op plus the tokenizer, LM, ASR head and
//! vector-field composites at tiny sizes.

use crate::dsp::AudioBuffer;
use crate::error::Result;
use crate::objectives::{cfm_loss, sim_loss_graph, AsrConfig, AsrHead, FieldNet};
use crate::rng::Rng;
use crate::tensor::gradcheck::{check, GradCheck};
use crate::tensor::{Tape, Tensor, Var};
use crate::tokenizer::{EncoderConfig, Tokenizer, TokenizerConfig};
use crate::tts::{stop_targets, text_tokenize, Lm, LmConfig};

/// Finite-difference step.
pub const STEP: f64 = 1e-5;
/// Pass threshold on the norm-relative error.
pub const TOLERANCE: f64 = 1e-4;
/// Coordinates perturbed per input tensor in the composite checks.
pub const COMPOSITE_COORDS: usize = 24;

type Case = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

fn uniform(shape: &[usize], rng: &mut Rng) -> Tensor {
    Tensor::rand_uniform(shape, -1.0, 1.0, rng)
}

/// Values in ±[0.2, 1], away from the kinks of `abs` and `relu`.
fn off_zero(shape: &[usize], rng: &mut Rng) -> Tensor {
    let mut t = Tensor::rand_uniform(shape, 0.2, 1.0, rng);
    for x in t.data_mut() {
        if rng.uniform() < 0.5 {
            *x = -*x;
        }
    }
    t
}

/// Contracts any tensor with a fixed random weight so the loss is scalar.
fn project(tape: &mut Tape, v: Var, seed: u64) -> Result<Var> {
    let shape = tape.shape(v).to_vec();
    let w = tape.constant(Tensor::rand_uniform(&shape, -1.0, 1.0, &mut Rng::new(seed)));
    let p = tape.mul(v, w)?;
    tape.sum(p)
}

fn op_cases(rng: &mut Rng) -> Vec<(&'static str, Vec<Tensor>, Case)> {
    let a = uniform(&[3, 4], rng);
    let b = uniform(&[3, 4], rng);
    let pos = Tensor::rand_uniform(&[3, 4], 0.2, 1.5, rng);
    let kink = off_zero(&[3, 4], rng);
    let v4 = uniform(&[4], rng);
    let v3 = uniform(&[3], rng);
    let m43 = uniform(&[4, 2], rng);
    let table = uniform(&[5, 3], rng);
    let x16 = uniform(&[2, 16], rng);
    let w_conv = uniform(&[3, 2, 4], rng);
    let x5 = uniform(&[3, 5], rng);
    let signal = uniform(&[1, 300], rng);
    let logits = uniform(&[6, 4], rng);
    let unary = |f: fn(&mut Tape, Var) -> Result<Var>, seed: u64| -> Case {
        Box::new(move |t: &mut Tape, v: &[Var]| {
            let y = f(t, v[0])?;
            project(t, y, seed)
        })
    };
    let binary = |f: fn(&mut Tape, Var, Var) -> Result<Var>, seed: u64| -> Case {
        Box::new(move |t: &mut Tape, v: &[Var]| {
            let y = f(t, v[0], v[1])?;
            project(t, y, seed)
        })
    };
    let target = AudioBuffer::new(uniform(&[300], rng).into_data(), 24_000).expect("rate");
    vec![
        ("add", vec![a.clone(), b.clone()], binary(Tape::add, 1)),
        ("sub", vec![a.clone(), b.clone()], binary(Tape::sub, 2)),
        ("mul", vec![a.clone(), b.clone()], binary(Tape::mul, 3)),
        ("scale", vec![a.clone()], Box::new(|t, v| { let y = t.scale(v[0], -1.7)?; project(t, y, 4) })),
        ("add_scalar", vec![a.clone()], Box::new(|t, v| { let y = t.add_scalar(v[0], 0.3)?; let y = t.mul(y, y)?; t.sum(y) })),
        ("tanh", vec![a.clone()], unary(Tape::tanh, 5)),
        ("relu", vec![kink.clone()], unary(Tape::relu, 6)),
        ("sigmoid", vec![a.clone()], unary(Tape::sigmoid, 7)),
        ("gelu", vec![a.clone()], unary(Tape::gelu, 8)),
        ("exp", vec![a.clone()], unary(Tape::exp, 9)),
        ("log", vec![pos], unary(Tape::log, 10)),
        ("abs", vec![kink], unary(Tape::abs, 11)),
        ("sum", vec![a.clone()], Box::new(|t, v| { let y = t.mul(v[0], v[0])?; t.sum(y) })),
        ("mean", vec![a.clone()], Box::new(|t, v| { let y = t.mul(v[0], v[0])?; t.mean(y) })),
        ("mse", vec![a.clone(), b.clone()], Box::new(|t, v| t.mse(v[0], v[1]))),
        ("l1", vec![a.clone(), b.clone()], Box::new(|t, v| t.l1(v[0], v[1]))),
        ("matmul", vec![a.clone(), m43.clone()], binary(Tape::matmul, 12)),
        ("transpose", vec![a.clone()], unary(Tape::transpose, 13)),
        ("reshape", vec![a.clone()], Box::new(|t, v| { let y = t.reshape(v[0], &[2, 6])?; project(t, y, 14) })),
        ("expand_rows", vec![v4.clone()], Box::new(|t, v| { let y = t.expand_rows(v[0], 3)?; project(t, y, 15) })),
        ("expand_cols", vec![v3.clone()], Box::new(|t, v| { let y = t.expand_cols(v[0], 4)?; project(t, y, 16) })),
        ("slice_rows", vec![a.clone()], Box::new(|t, v| { let y = t.slice_rows(v[0], 1, 3)?; project(t, y, 17) })),
        ("slice_cols", vec![a.clone()], Box::new(|t, v| { let y = t.slice_cols(v[0], 1, 3)?; project(t, y, 18) })),
        ("concat_rows", vec![a.clone(), b.clone()], Box::new(|t, v| { let y = t.concat_rows(&[v[0], v[1]])?; project(t, y, 19) })),
        ("concat_cols", vec![a.clone(), b.clone()], Box::new(|t, v| { let y = t.concat_cols(&[v[0], v[1]])?; project(t, y, 20) })),
        ("gather_rows", vec![table], Box::new(|t, v| { let y = t.gather_rows(v[0], &[4, 0, 4, 2])?; project(t, y, 21) })),
        ("softmax_lastdim", vec![a.clone()], unary(Tape::softmax_lastdim, 22)),
        ("masked_softmax_lastdim", vec![a.clone()], Box::new(|t, v| {
            let mask: Vec<bool> = (0..12).map(|i| i % 4 <= i / 4).collect();
            let y = t.masked_softmax_lastdim(v[0], &mask)?;
            project(t, y, 23)
        })),
        ("layernorm_lastdim", vec![a.clone()], Box::new(|t, v| { let y = t.layernorm_lastdim(v[0], 1e-5)?; project(t, y, 24) })),
        ("bce_with_logits", vec![a.clone()], Box::new(|t, v| {
            let targets: Vec<f64> = (0..12).map(|i| (i % 3) as f64 / 2.0).collect();
            t.bce_with_logits(v[0], &targets)
        })),
        ("linear", vec![a.clone(), m43, uniform(&[2], rng)], Box::new(|t, v| { let y = t.linear(v[0], v[1], v[2])?; project(t, y, 25) })),
        ("add_channel_bias", vec![a.clone(), v3], Box::new(|t, v| { let y = t.add_channel_bias(v[0], v[1])?; project(t, y, 26) })),
        ("conv1d", vec![x16, w_conv.clone()], Box::new(|t, v| { let y = t.conv1d(v[0], v[1], 2, 1)?; project(t, y, 27) })),
        ("conv_transpose1d", vec![x5, uniform(&[3, 2, 4], rng)], Box::new(|t, v| { let y = t.conv_transpose1d(v[0], v[1], 2, 1)?; project(t, y, 28) })),
        ("stft_log_magnitude", vec![signal.clone()], Box::new(|t, v| { let y = t.stft_log_magnitude(v[0], 64)?; project(t, y, 29) })),
        ("ctc_loss", vec![logits], Box::new(|t, v| Ok(t.ctc_loss(v[0], &[1, 2, 2])?.loss))),
        ("straight_through", vec![a.clone()], Box::new(|t, v| {
            // snapping to the input itself makes the forward an identity, so
            // finite differences see exactly the gradient the op passes back
            let snapped = t.value(v[0]).clone();
            let y = t.straight_through(v[0], snapped)?;
            let y = t.tanh(y)?;
            let z = t.add(y, v[0])?;
            project(t, z, 30)
        })),
        ("sim_loss", vec![signal], Box::new(move |t, v| Ok(sim_loss_graph(t, &target, v[0])?.0))),
    ]
}

fn tiny_tokenizer(rng: &mut Rng) -> Result<Tokenizer> {
    Tokenizer::new(
        TokenizerConfig {
            encoder: EncoderConfig {
                sample_rate: 24_000,
                channels: vec![3, 4],
                strides: vec![2, 4],
                token_dim: 3,
                ..EncoderConfig::default()
            },
            ..TokenizerConfig::default()
        },
        rng,
    )
}

fn tiny_lm(rng: &mut Rng) -> Result<Lm> {
    Lm::new(
        LmConfig {
            layers: 2,
            heads: 2,
            model_dim: 8,
            ff_dim: 12,
            max_seq_len: 32,
            token_dim: 3,
            stop_threshold: 0.0,
        },
        rng,
    )
}

/// Composite models: parameters plus input tensors, with a closure that
/// rebinds them in insertion order.
fn composite_cases(rng: &mut Rng) -> Result<Vec<(&'static str, Vec<Tensor>, Case)>> {
    let mut out: Vec<(&'static str, Vec<Tensor>, Case)> = Vec::new();

    let tok = tiny_tokenizer(rng)?;
    let audio = uniform(&[1, 288], rng);
    let target = AudioBuffer::new(audio.data().iter().map(|x| 0.5 * x).collect(), 24_000)?;
    let mut inputs = tok.encoder.values();
    inputs.extend(tok.decoder.values());
    inputs.push(audio);
    let (ne, nd) = (tok.encoder.len(), tok.decoder.len());
    out.push((
        "tokenizer_tiny",
        inputs,
        Box::new(move |t: &mut Tape, v: &[Var]| {
            let enc = tok.encoder.bound_from_vars(&v[..ne])?;
            let dec = tok.decoder.bound_from_vars(&v[ne..ne + nd])?;
            let rec = tok.reconstruct_graph(t, &enc, &dec, v[ne + nd])?;
            // smooth stand-in for the reconstruction loss: the L1 kinks in
            // sim_loss sit within a step of some coordinate often enough to
            // spoil differences through a whole network
            let tgt = t.constant(Tensor::matrix(1, target.len(), target.samples.clone())?);
            let n = t.shape(rec.audio)[1].min(target.len());
            let (a, b) = (t.slice_cols(rec.audio, 0, n)?, t.slice_cols(tgt, 0, n)?);
            let l = t.mse(a, b)?;
            let spec = t.stft_log_magnitude(rec.audio, 256)?;
            let s = project(t, spec, 31)?;
            t.add(l, s)
        }),
    ));

    let lm = tiny_lm(rng)?;
    let frames = uniform(&[5, 3], rng);
    let mut inputs = lm.params.values();
    inputs.push(frames);
    let n = lm.params.len();
    out.push((
        "lm_tiny",
        inputs,
        Box::new(move |t: &mut Tape, v: &[Var]| {
            let p = lm.params.bound_from_vars(&v[..n])?;
            let text = text_tokenize("ab c")?;
            let o = lm.forward_graph(t, &p, &text, v[n])?;
            let l = t.mse(o.predicted, v[n])?;
            let s = t.bce_with_logits(o.stop_logits, &stop_targets(5))?;
            t.add(l, s)
        }),
    ));

    let asr = AsrHead::with_vocab(4, 5, AsrConfig { hidden: 6, kernel: 3 }, rng);
    let feats = uniform(&[4, 7], rng);
    let mut inputs = asr.params.values();
    inputs.push(feats);
    let n = asr.params.len();
    out.push((
        "asr_head",
        inputs,
        Box::new(move |t: &mut Tape, v: &[Var]| {
            let p = asr.params.bound_from_vars(&v[..n])?;
            let logits = asr.forward_graph(t, &p, v[n])?;
            Ok(t.ctc_loss(logits, &[1, 3, 3])?.loss)
        }),
    ));

    let net = FieldNet::new(3, 2, 6, rng);
    let x1 = uniform(&[4, 3], rng);
    let cond = uniform(&[4, 2], rng);
    let inputs = net.params.values();
    out.push((
        "field_net",
        inputs,
        Box::new(move |t: &mut Tape, v: &[Var]| {
            let bound = net.params.bound_from_vars(v)?;
            let field = crate::objectives::BoundField { net: &net, bound };
            // same draws on every evaluation
            cfm_loss(t, &field, &x1, &cond, 1e-4, &mut Rng::new(99))
        }),
    ));
    Ok(out)
}

/// Runs every check; order is ops first, then composites.
pub fn run_suite() -> Result<Vec<GradCheck>> {
    let mut rng = Rng::new(2024);
    let mut results = Vec::new();
    for (name, inputs, f) in op_cases(&mut rng) {
        results.push(check(name, &inputs, STEP, None, f)?);
    }
    for (name, inputs, f) in composite_cases(&mut rng)? {
        results.push(check(name, &inputs, STEP, Some(COMPOSITE_COORDS), f)?);
    }
    Ok(results)
}

/// Names covered by [`run_suite`].
pub fn suite_names() -> Vec<&'static str> {
    let mut rng = Rng::new(0);
    let mut v: Vec<&'static str> = op_cases(&mut rng).into_iter().map(|c| c.0).collect();
    v.extend(["tokenizer_tiny", "lm_tiny", "asr_head", "field_net"]);
    v
}
