//! Training objectives.
//!
//! * [`sim_loss`]: reconstruction distance between audio and its round trip.
//! * CTC ([`Tape::ctc_loss`]) over a small [`AsrHead`] reading encoder
//!   features of the reconstruction, which pushes the tokenizer to keep the
//!   content recognisable.
//! * [`stage1_loss`]: the sum of both, plus the RVQ commitment term in
//!   discrete mode.
//! * [`lm_loss`]: MSE between predicted and encoded continuous tokens.
//! * Conditional flow matching ([`cfm_loss`], [`cfm_generate`]).

mod asr;
mod cfm;
mod ctc;
mod sim;
mod transcript;

pub use asr::{greedy_decode, AsrConfig, AsrHead};
pub use cfm::{
    cfm_generate, cfm_integrate, cfm_loss, cfm_sample_path, BoundField, CfmConfig, FieldNet, FnField, Solver,
    VectorField,
};
pub use ctc::{ctc_loss_value, ctc_required_frames, CtcLoss};
pub use sim::{log_magnitude, sim_loss, sim_loss_graph, SimTerms, SIM_LENGTH_TOLERANCE, SIM_LOG_EPS, SIM_WINDOWS};
pub use transcript::{char_to_id, id_to_char, normalize, Transcript, ALPHABET, BLANK, VOCAB_SIZE};

use crate::dsp::AudioBuffer;
use crate::error::{Error, Result};
use crate::tensor::{Bound, Tape, Tensor, Var};
use crate::tokenizer::{Quantized, Tokenizer};

/// Stage-1 loss on one clip with each component's value.
pub struct Stage1Loss {
    pub total: Var,
    pub rec: f64,
    /// CTC loss divided by the label length.
    pub ctc: f64,
    pub commit: f64,
    pub alignable: bool,
    pub quantized: Option<Quantized>,
    pub reconstruction: Var,
}

/// Trainable handles for one stage-1 forward pass.
pub struct Stage1Bindings<'a> {
    pub tokenizer: &'a Tokenizer,
    pub encoder: &'a Bound,
    pub decoder: &'a Bound,
    pub asr: &'a AsrHead,
    pub asr_params: &'a Bound,
}

/// Mean squared error between predicted and target tokens.
pub fn lm_loss(tape: &mut Tape, predicted: Var, target: Var) -> Result<Var> {
    if tape.shape(predicted) != tape.shape(target) {
        return Err(Error::shape(
            "lm_loss",
            format!("prediction {:?} vs target {:?}", tape.shape(predicted), tape.shape(target)),
        ));
    }
    tape.mse(predicted, target)
}

/// `sim_loss(A, Â) + CTC(Y | asr(enc(Â)))/|Y| (+ w·‖z − sg(ẑ)‖²)`.
///
/// The CTC term is normalised by label length so its scale does not depend
/// on the utterance length.
pub fn stage1_loss(tape: &mut Tape, b: &Stage1Bindings, audio: &AudioBuffer, label: &Transcript) -> Result<Stage1Loss> {
    let tok = b.tokenizer;
    let a = tape.constant(Tensor::matrix(1, audio.len(), audio.samples.clone())?);
    let rec = tok.reconstruct_graph(tape, b.encoder, b.decoder, a)?;
    let (l_rec, _) = sim_loss_graph(tape, audio, rec.audio)?;
    let rec_val = tape.value(l_rec).item();

    let feats = tok.features_graph(tape, b.encoder, rec.audio)?;
    let logits = b.asr.forward_graph(tape, b.asr_params, feats)?;
    let ctc = tape.ctc_loss(logits, label.ids())?;
    let l_ctc = tape.scale(ctc.loss, 1.0 / label.len().max(1) as f64)?;
    let ctc_val = tape.value(l_ctc).item();
    let mut total = tape.add(l_rec, l_ctc)?;

    let mut commit_val = 0.0;
    if let Some(q) = &rec.quantized {
        let target = tape.constant(q.zhat.clone());
        let c = tape.mse(rec.tokens, target)?;
        let c = tape.scale(c, tok.config.rvq.commitment_weight)?;
        commit_val = tape.value(c).item();
        total = tape.add(total, c)?;
    }
    Ok(Stage1Loss {
        total,
        rec: rec_val,
        ctc: ctc_val,
        commit: commit_val,
        alignable: ctc.alignable,
        quantized: rec.quantized,
        reconstruction: rec.audio,
    })
}
