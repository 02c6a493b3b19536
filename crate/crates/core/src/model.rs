//! Model configuration, trainable parameters, and the binary model file.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::GradStore;

/// How the per-step output distribution is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputMode {
    /// Plain softmax over the output projection.
    Base,
    /// Softmax over logits plus log(p_lex + epsilon).
    Bias,
    /// Sigmoid-weighted mixture of the lexicon and model distributions.
    Linear,
}

impl OutputMode {
    pub fn as_str(self) -> &'static str {
        match self {
            OutputMode::Base => "base",
            OutputMode::Bias => "bias",
            OutputMode::Linear => "linear",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "base" => Some(OutputMode::Base),
            "bias" => Some(OutputMode::Bias),
            "linear" => Some(OutputMode::Linear),
            _ => None,
        }
    }

    /// Bias and linear modes require a lexicon matrix at every step.
    pub fn needs_lexicon(self) -> bool {
        !matches!(self, OutputMode::Base)
    }

    fn code(self) -> u8 {
        match self {
            OutputMode::Base => 0,
            OutputMode::Bias => 1,
            OutputMode::Linear => 2,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(OutputMode::Base),
            1 => Some(OutputMode::Bias),
            2 => Some(OutputMode::Linear),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub mode: OutputMode,
    /// Stacking depth of every LSTM (encoder directions and decoder).
    pub layers: usize,
    /// Hidden vector size.
    pub hidden: usize,
    /// Word embedding size.
    pub embed: usize,
    pub src_vocab: usize,
    pub trg_vocab: usize,
    /// Bias-mode epsilon added to lexicon probabilities before the log.
    pub epsilon: f64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.hidden == 0 || self.embed == 0 {
            return Err(Error::InvalidConfig(
                "layers, hidden and embed must all be positive".into(),
            ));
        }
        if self.src_vocab < 3 || self.trg_vocab < 3 {
            return Err(Error::InvalidConfig(
                "vocabularies must include the reserved symbols".into(),
            ));
        }
        if self.epsilon <= 0.0 {
            return Err(Error::InvalidConfig("epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// One LSTM layer: the four gates stacked as [input; forget; cell; output]
/// rows of a single weight matrix over [x; h_prev].
#[derive(Debug, Clone)]
pub struct LstmLayer {
    pub w: Array2<f64>,
    pub b: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct Affine {
    pub w: Array2<f64>,
    pub b: Array2<f64>,
}

/// All trainable tensors.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub cfg: ModelConfig,
    /// embed x |V_f|; one column per source word.
    pub src_embed: Array2<f64>,
    /// embed x |V_e|.
    pub trg_embed: Array2<f64>,
    pub enc_fwd: Vec<LstmLayer>,
    pub enc_bwd: Vec<LstmLayer>,
    /// Projects the concatenated bidirectional encoding (2h) back to h.
    pub merge: Affine,
    pub dec: Vec<LstmLayer>,
    /// Attention-output projection over [h_prev; context] (2h -> h).
    pub eta: Affine,
    /// Output projection (h -> |V_e|).
    pub out: Affine,
    /// Pre-sigmoid interpolation scalar for linear mode, as a 1x1 tensor.
    pub interp: Array2<f64>,
}

fn lstm_layer(rng: &mut ChaCha8Rng, input: usize, hidden: usize) -> LstmLayer {
    LstmLayer {
        w: uniform(rng, 4 * hidden, input + hidden),
        b: uniform(rng, 4 * hidden, 1),
    }
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-0.1..0.1))
}

impl ModelParams {
    /// Initializes all tensors uniformly in [-0.1, 0.1] under the given seed;
    /// the interpolation scalar starts at 0 (lambda = 0.5).
    pub fn init(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, m) = (cfg.hidden, cfg.embed);
        let layer_stack = |rng: &mut ChaCha8Rng| -> Vec<LstmLayer> {
            (0..cfg.layers)
                .map(|k| lstm_layer(rng, if k == 0 { m } else { h }, h))
                .collect()
        };
        Ok(ModelParams {
            src_embed: uniform(&mut rng, m, cfg.src_vocab),
            trg_embed: uniform(&mut rng, m, cfg.trg_vocab),
            enc_fwd: layer_stack(&mut rng),
            enc_bwd: layer_stack(&mut rng),
            merge: Affine {
                w: uniform(&mut rng, h, 2 * h),
                b: uniform(&mut rng, h, 1),
            },
            dec: layer_stack(&mut rng),
            eta: Affine {
                w: uniform(&mut rng, h, 2 * h),
                b: uniform(&mut rng, h, 1),
            },
            out: Affine {
                w: uniform(&mut rng, cfg.trg_vocab, h),
                b: uniform(&mut rng, cfg.trg_vocab, 1),
            },
            interp: Array2::zeros((1, 1)),
            cfg,
        })
    }

    /// The current pre-sigmoid interpolation scalar.
    pub fn interp_x(&self) -> f64 {
        self.interp[[0, 0]]
    }

    /// Number of tensor slots without materializing the named views.
    pub fn tensor_count(&self) -> usize {
        // 2 embeddings, 3 LSTM stacks of `layers` (w, b) pairs, 3 affine
        // (w, b) pairs, and the interpolation scalar.
        9 + 6 * self.cfg.layers
    }

    /// Named views of every tensor in a fixed slot order. Gradient stores,
    /// Adam moments and the model file all share this order.
    pub fn tensors(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out: Vec<(String, &Array2<f64>)> = vec![
            ("src_embed".into(), &self.src_embed),
            ("trg_embed".into(), &self.trg_embed),
        ];
        for (name, stack) in [("enc_fwd", &self.enc_fwd), ("enc_bwd", &self.enc_bwd)] {
            for (k, layer) in stack.iter().enumerate() {
                out.push((format!("{name}.{k}.w"), &layer.w));
                out.push((format!("{name}.{k}.b"), &layer.b));
            }
        }
        out.push(("merge.w".into(), &self.merge.w));
        out.push(("merge.b".into(), &self.merge.b));
        for (k, layer) in self.dec.iter().enumerate() {
            out.push((format!("dec.{k}.w"), &layer.w));
            out.push((format!("dec.{k}.b"), &layer.b));
        }
        out.push(("eta.w".into(), &self.eta.w));
        out.push(("eta.b".into(), &self.eta.b));
        out.push(("out.w".into(), &self.out.w));
        out.push(("out.b".into(), &self.out.b));
        out.push(("interp".into(), &self.interp));
        out
    }

    /// Mutable tensor views in the same slot order as [`ModelParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out: Vec<&mut Array2<f64>> = vec![&mut self.src_embed, &mut self.trg_embed];
        for stack in [&mut self.enc_fwd, &mut self.enc_bwd] {
            for layer in stack.iter_mut() {
                out.push(&mut layer.w);
                out.push(&mut layer.b);
            }
        }
        out.push(&mut self.merge.w);
        out.push(&mut self.merge.b);
        for layer in self.dec.iter_mut() {
            out.push(&mut layer.w);
            out.push(&mut layer.b);
        }
        out.push(&mut self.eta.w);
        out.push(&mut self.eta.b);
        out.push(&mut self.out.w);
        out.push(&mut self.out.b);
        out.push(&mut self.interp);
        out
    }

    /// A zeroed gradient store shaped like this model.
    pub fn grad_store(&self) -> GradStore {
        let shapes: Vec<(usize, usize)> = self.tensors().iter().map(|(_, t)| t.dim()).collect();
        GradStore::zeros_like(&shapes)
    }

    /// Errors if any parameter became NaN or infinite.
    pub fn check_finite(&self) -> Result<()> {
        for (name, tensor) in self.tensors() {
            if tensor.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient(format!("parameter {name}")));
            }
        }
        Ok(())
    }

    /// Writes the self-describing binary model container.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(b"LNMT");
        write_u32(&mut buf, 1); // format version
        buf.push(self.cfg.mode.code());
        write_u32(&mut buf, self.cfg.layers as u32);
        write_u32(&mut buf, self.cfg.hidden as u32);
        write_u32(&mut buf, self.cfg.embed as u32);
        write_u32(&mut buf, self.cfg.src_vocab as u32);
        write_u32(&mut buf, self.cfg.trg_vocab as u32);
        buf.extend_from_slice(&self.cfg.epsilon.to_le_bytes());
        buf.extend_from_slice(&self.interp_x().to_le_bytes());

        let tensors = self.tensors();
        write_u32(&mut buf, tensors.len() as u32);
        for (name, tensor) in tensors {
            write_u32(&mut buf, name.len() as u32);
            buf.extend_from_slice(name.as_bytes());
            write_u32(&mut buf, 2); // rank
            write_u32(&mut buf, tensor.nrows() as u32);
            write_u32(&mut buf, tensor.ncols() as u32);
            for v in tensor.iter() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        crate::files::write_atomic(path, &buf)
    }

    /// Reads a model container written by [`ModelParams::save`].
    pub fn load(path: &Path) -> Result<Self> {
        let mut reader = BufReader::new(File::open(path)?);
        let bad = |msg: &str| Error::Parse {
            path: path.display().to_string(),
            line: 0,
            msg: msg.to_string(),
        };
        let mut magic = [0u8; 4];
        reader.read_exact(&mut magic)?;
        if &magic != b"LNMT" {
            return Err(bad("not a model file (bad magic)"));
        }
        let version = read_u32(&mut reader)?;
        if version != 1 {
            return Err(bad(&format!("unsupported format version {version}")));
        }
        let mut mode_byte = [0u8; 1];
        reader.read_exact(&mut mode_byte)?;
        let mode = OutputMode::from_code(mode_byte[0]).ok_or_else(|| bad("bad mode byte"))?;
        let cfg = ModelConfig {
            mode,
            layers: read_u32(&mut reader)? as usize,
            hidden: read_u32(&mut reader)? as usize,
            embed: read_u32(&mut reader)? as usize,
            src_vocab: read_u32(&mut reader)? as usize,
            trg_vocab: read_u32(&mut reader)? as usize,
            epsilon: read_f64(&mut reader)?,
        };
        cfg.validate()?;
        let _header_x = read_f64(&mut reader)?;

        let mut model = ModelParams::init(cfg, 0)?;
        let expected: Vec<(String, (usize, usize))> = model
            .tensors()
            .iter()
            .map(|(n, t)| (n.clone(), t.dim()))
            .collect();
        let count = read_u32(&mut reader)? as usize;
        if count != expected.len() {
            return Err(bad(&format!(
                "expected {} tensors, found {count}",
                expected.len()
            )));
        }
        let mut slots = model.tensors_mut();
        for (i, (name, dim)) in expected.iter().enumerate() {
            let len = read_u32(&mut reader)? as usize;
            let mut name_buf = vec![0u8; len];
            reader.read_exact(&mut name_buf)?;
            let found = String::from_utf8(name_buf).map_err(|_| bad("tensor name is not UTF-8"))?;
            if &found != name {
                return Err(bad(&format!("tensor {i} is {found:?}, expected {name:?}")));
            }
            let rank = read_u32(&mut reader)?;
            if rank != 2 {
                return Err(bad(&format!("tensor {name} has rank {rank}")));
            }
            let rows = read_u32(&mut reader)? as usize;
            let cols = read_u32(&mut reader)? as usize;
            if (rows, cols) != *dim {
                return Err(bad(&format!(
                    "tensor {name} is {rows}x{cols}, expected {}x{}",
                    dim.0, dim.1
                )));
            }
            for value in slots[i].iter_mut() {
                *value = read_f64(&mut reader)?;
            }
        }
        Ok(model)
    }
}

fn write_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn read_u32<R: Read>(reader: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    reader.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64<R: Read>(reader: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    reader.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}
