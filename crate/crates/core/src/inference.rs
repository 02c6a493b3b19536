//! Forward-only evaluation of the model: encoding, attention, the three
//! output distributions, and stepwise decoding over an immutable parameter
//! snapshot. Training builds the same network on the gradient tape in
//! [`crate::network`]; the two paths are cross-checked in tests.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::lexicon::LexiconMatrix;
use crate::model::{Affine, LstmLayer, ModelParams, OutputMode};

/// Numerically stable softmax with max subtraction.
pub fn softmax(x: &Array1<f64>) -> Array1<f64> {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp = x.mapv(|v| (v - max).exp());
    let sum = exp.sum();
    exp / sum
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Dot-product attention: softmax over the similarities between the decoder
/// hidden state and each encoded source word.
pub fn attend(hidden: &Array1<f64>, reps: &Array2<f64>) -> Result<Array1<f64>> {
    if hidden.len() != reps.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "decoder hidden has {} rows, encoder representation has {}",
            hidden.len(),
            reps.nrows()
        )));
    }
    let scores = reps.t().dot(hidden);
    Ok(softmax(&scores))
}

/// The attention-output vector: an affine transform of the previous decoder
/// hidden state concatenated with the context vector.
pub fn output_state(eta: &Affine, h_prev: &Array1<f64>, context: &Array1<f64>) -> Array1<f64> {
    let mut cat = Array1::zeros(h_prev.len() + context.len());
    cat.slice_mut(ndarray::s![..h_prev.len()]).assign(h_prev);
    cat.slice_mut(ndarray::s![h_prev.len()..]).assign(context);
    eta.w.dot(&cat) + eta.b.column(0)
}

/// Base distribution: softmax of the output projection.
pub fn predict_base(out: &Affine, eta: &Array1<f64>) -> Array1<f64> {
    softmax(&(out.w.dot(eta) + out.b.column(0)))
}

/// Bias distribution: the lexicon predictive probabilities enter the softmax
/// as a log-domain additive bias, with `epsilon` guarding log(0).
pub fn predict_bias(
    out: &Affine,
    eta: &Array1<f64>,
    p_lex: &Array1<f64>,
    epsilon: f64,
) -> Array1<f64> {
    let logits = out.w.dot(eta) + out.b.column(0) + p_lex.mapv(|p| (p + epsilon).ln());
    softmax(&logits)
}

/// Linear distribution: sigmoid(x)-weighted mixture of the lexicon and model
/// distributions.
pub fn predict_linear(p_model: &Array1<f64>, p_lex: &Array1<f64>, x: f64) -> Array1<f64> {
    let lambda = sigmoid(x);
    p_lex.mapv(|p| lambda * p) + &p_model.mapv(|p| (1.0 - lambda) * p)
}

/// Inverted dropout: in training mode each component is zeroed with
/// probability `rate` and survivors are scaled by 1/(1-rate); at inference
/// the vector passes through unchanged.
pub fn apply_dropout<R: Rng>(
    v: &Array1<f64>,
    rate: f64,
    training: bool,
    rng: &mut R,
) -> Array1<f64> {
    if !training || rate == 0.0 {
        return v.clone();
    }
    let keep = 1.0 - rate;
    v.mapv(|x| {
        if rng.random_range(0.0..1.0) < rate {
            0.0
        } else {
            x / keep
        }
    })
}

/// Generates a dropout mask column vector (0 or 1/(1-rate) entries) for the
/// training graph.
pub fn dropout_mask<R: Rng>(len: usize, rate: f64, rng: &mut R) -> Array2<f64> {
    let keep = 1.0 - rate;
    Array2::from_shape_fn((len, 1), |_| {
        if rng.random_range(0.0..1.0) < rate {
            0.0
        } else {
            1.0 / keep
        }
    })
}

/// Hidden and cell vectors of one LSTM layer.
#[derive(Debug, Clone)]
pub struct LstmState {
    pub h: Array1<f64>,
    pub c: Array1<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        LstmState {
            h: Array1::zeros(hidden),
            c: Array1::zeros(hidden),
        }
    }
}

/// One LSTM cell step: input/forget/output gates with a tanh candidate.
pub fn lstm_step(layer: &LstmLayer, x: &Array1<f64>, state: &LstmState) -> LstmState {
    let hidden = state.h.len();
    let mut cat = Array1::zeros(x.len() + hidden);
    cat.slice_mut(ndarray::s![..x.len()]).assign(x);
    cat.slice_mut(ndarray::s![x.len()..]).assign(&state.h);
    let z = layer.w.dot(&cat) + layer.b.column(0);

    let gate = |r: std::ops::Range<usize>| z.slice(ndarray::s![r]).to_owned();
    let i = gate(0..hidden).mapv(sigmoid);
    let f = gate(hidden..2 * hidden).mapv(sigmoid);
    let g = gate(2 * hidden..3 * hidden).mapv(f64::tanh);
    let o = gate(3 * hidden..4 * hidden).mapv(sigmoid);

    let c = &f * &state.c + &i * &g;
    let h = &o * &c.mapv(f64::tanh);
    LstmState { h, c }
}

/// Encoded source sentence: per-word representations and the final states of
/// both directional stacks.
#[derive(Debug, Clone)]
pub struct EncoderOutput {
    /// h x |F|; column j represents source word j.
    pub reps: Array2<f64>,
    pub fwd_final: Vec<LstmState>,
    pub bwd_final: Vec<LstmState>,
}

/// Decoder stack state plus the current step index.
#[derive(Debug, Clone)]
pub struct DecoderState {
    pub layers: Vec<LstmState>,
    pub step: usize,
}

/// Per-step decoder output: attention, context, the vector entering the
/// final softmax, and the mode-appropriate distribution.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub attention: Array1<f64>,
    pub context: Array1<f64>,
    pub presoftmax: Array1<f64>,
    pub distribution: Array1<f64>,
    pub mode: OutputMode,
}

/// Runs a stack of LSTM layers over one input vector.
fn stack_step(stack: &[LstmLayer], input: &Array1<f64>, states: &mut [LstmState]) {
    let mut x = input.clone();
    for (layer, state) in stack.iter().zip(states.iter_mut()) {
        let next = lstm_step(layer, &x, state);
        x = next.h.clone();
        *state = next;
    }
}

impl ModelParams {
    fn embed_column(&self, table: &Array2<f64>, id: u32, side: &str) -> Result<Array1<f64>> {
        if (id as usize) >= table.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "{side} id {id} out of embedding range {}",
                table.ncols()
            )));
        }
        Ok(table.column(id as usize).to_owned())
    }

    /// Bidirectional encoding: the forward stack reads left to right, the
    /// backward stack right to left, and each position's concatenated top
    /// states are projected back to h dimensions.
    pub fn encode(&self, src: &[u32]) -> Result<EncoderOutput> {
        if src.is_empty() {
            return Err(Error::EmptySource);
        }
        let h = self.cfg.hidden;
        let mut fwd_states: Vec<LstmState> =
            (0..self.cfg.layers).map(|_| LstmState::zeros(h)).collect();
        let mut bwd_states = fwd_states.clone();

        let mut fwd_tops: Vec<Array1<f64>> = Vec::with_capacity(src.len());
        for &id in src {
            let x = self.embed_column(&self.src_embed, id, "source")?;
            stack_step(&self.enc_fwd, &x, &mut fwd_states);
            fwd_tops.push(fwd_states.last().unwrap().h.clone());
        }
        let mut bwd_tops: Vec<Array1<f64>> = vec![Array1::zeros(h); src.len()];
        for (j, &id) in src.iter().enumerate().rev() {
            let x = self.embed_column(&self.src_embed, id, "source")?;
            stack_step(&self.enc_bwd, &x, &mut bwd_states);
            bwd_tops[j] = bwd_states.last().unwrap().h.clone();
        }

        let mut reps = Array2::zeros((h, src.len()));
        for j in 0..src.len() {
            let mut cat = Array1::zeros(2 * h);
            cat.slice_mut(ndarray::s![..h]).assign(&bwd_tops[j]);
            cat.slice_mut(ndarray::s![h..]).assign(&fwd_tops[j]);
            let r = self.merge.w.dot(&cat) + self.merge.b.column(0);
            reps.index_axis_mut(Axis(1), j).assign(&r);
        }
        Ok(EncoderOutput {
            reps,
            fwd_final: fwd_states,
            bwd_final: bwd_states,
        })
    }

    /// The all-zero decoder start state.
    pub fn initial_decoder_state(&self) -> DecoderState {
        DecoderState {
            layers: (0..self.cfg.layers)
                .map(|_| LstmState::zeros(self.cfg.hidden))
                .collect(),
            step: 0,
        }
    }

    /// Feeds one target word into the decoder stack.
    pub fn step_decoder(&self, state: &DecoderState, token: u32) -> Result<DecoderState> {
        let x = self.embed_column(&self.trg_embed, token, "target")?;
        let mut layers = state.layers.clone();
        stack_step(&self.dec, &x, &mut layers);
        Ok(DecoderState {
            layers,
            step: state.step + 1,
        })
    }

    /// Attention, context and output distribution for the current state.
    /// Bias and linear modes require the sentence's lexicon matrix.
    pub fn predict(
        &self,
        state: &DecoderState,
        enc: &EncoderOutput,
        lex: Option<&LexiconMatrix>,
    ) -> Result<StepOutput> {
        let h_prev = &state.layers.last().unwrap().h;
        let attention = attend(h_prev, &enc.reps)?;
        let context = enc.reps.dot(&attention);
        let eta = output_state(&self.eta, h_prev, &context);
        let logits = self.out.w.dot(&eta) + self.out.b.column(0);

        let p_lex = match (self.cfg.mode, lex) {
            (OutputMode::Base, _) => None,
            (_, Some(matrix)) => {
                let weights: Vec<f64> = attention.to_vec();
                Some(Array1::from_vec(matrix.weighted_columns(&weights)))
            }
            (mode, None) => {
                return Err(Error::InvalidConfig(format!(
                    "{} mode requires a lexicon matrix",
                    mode.as_str()
                )))
            }
        };

        let (presoftmax, distribution) = match self.cfg.mode {
            OutputMode::Base => (logits.clone(), softmax(&logits)),
            OutputMode::Bias => {
                let biased = &logits + &p_lex.unwrap().mapv(|p| (p + self.cfg.epsilon).ln());
                (biased.clone(), softmax(&biased))
            }
            OutputMode::Linear => {
                let p_model = softmax(&logits);
                let mixed = predict_linear(&p_model, &p_lex.unwrap(), self.interp_x());
                (logits.clone(), mixed)
            }
        };
        Ok(StepOutput {
            attention,
            context,
            presoftmax,
            distribution,
            mode: self.cfg.mode,
        })
    }
}
