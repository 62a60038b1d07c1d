use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::attention::{attention_backward, attention_forward, AttentionParams};
use super::gru::{cell_backward, cell_forward, GruParams, StepCache};
use super::ops::{dot, sigmoid, softplus, uniform};
use crate::error::{Error, Result};
use crate::preprocess::{WindowedSample, N_FEATURES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Gru,
    GruAttention,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Gru => "gru",
            ModelKind::GruAttention => "gru_attention",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub hidden_dim: usize,
    pub input_dim: usize,
    /// Attention score width; defaults to `hidden_dim`.
    pub attention_dim: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: ModelKind::GruAttention,
            hidden_dim: 64,
            input_dim: N_FEATURES,
            attention_dim: None,
        }
    }
}

/// Linear read-out `sigmoid(w · s + c)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Head {
    pub w: Vec<f64>,
    pub c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceModel {
    pub config: ModelConfig,
    pub gru: GruParams,
    pub attention: Option<AttentionParams>,
    pub head: Head,
}

impl SequenceModel {
    /// Uniform `±1/√fan_in` initialization from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        if config.hidden_dim == 0 || config.input_dim == 0 || config.attention_dim == Some(0) {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, i) = (config.hidden_dim, config.input_dim);
        let gru = GruParams::random(h, i, &mut rng);
        let attention = match config.kind {
            ModelKind::Gru => None,
            ModelKind::GruAttention => Some(AttentionParams::random(
                config.attention_dim.unwrap_or(h),
                h,
                i,
                &mut rng,
            )),
        };
        let w = uniform(&mut rng, h, h);
        let c = uniform(&mut rng, 1, h)[0];
        Ok(SequenceModel {
            config,
            gru,
            attention,
            head: Head { w, c },
        })
    }

    /// A model of the same shape with every entry zero, used as a gradient
    /// accumulator.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, t, _) in z.tensors_mut() {
            t.iter_mut().for_each(|v| *v = 0.0);
        }
        z
    }

    /// Every parameter tensor with its name and whether weight decay
    /// applies to it.
    pub fn tensors(&self) -> Vec<(&'static str, &[f64], bool)> {
        let mut out: Vec<(&'static str, &[f64], bool)> = self.gru.tensors().to_vec();
        if let Some(a) = &self.attention {
            out.extend(a.tensors());
        }
        out.push(("head.w", &self.head.w, true));
        out.push(("head.c", std::slice::from_ref(&self.head.c), false));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64], bool)> {
        let mut out: Vec<(&'static str, &mut [f64], bool)> = Vec::new();
        out.extend(self.gru.tensors_mut());
        if let Some(a) = &mut self.attention {
            out.extend(a.tensors_mut());
        }
        out.push(("head.w", &mut self.head.w, true));
        out.push(("head.c", std::slice::from_mut(&mut self.head.c), false));
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.1.len()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        self.gru.validate()?;
        if self.gru.hidden_dim != self.config.hidden_dim || self.gru.input_dim != self.config.input_dim {
            return Err(Error::Config("gru shape disagrees with model config".into()));
        }
        match (&self.attention, self.config.kind) {
            (Some(a), ModelKind::GruAttention) => {
                a.validate()?;
                if a.hidden_dim != self.config.hidden_dim || a.input_dim != self.config.input_dim {
                    return Err(Error::Config("attention shape disagrees with model config".into()));
                }
            }
            (None, ModelKind::Gru) => {}
            _ => return Err(Error::Config("attention tensors do not match model kind".into())),
        }
        if self.head.w.len() != self.config.hidden_dim {
            return Err(Error::Config("head width differs from hidden_dim".into()));
        }
        for (name, t, _) in self.tensors() {
            if t.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!("non-finite entry in {name}")));
            }
        }
        Ok(())
    }
}

/// Activations of one forward pass, reused across samples.
pub(crate) struct Tape {
    hidden: usize,
    score: usize,
    len: usize,
    /// `T + 1` states; the first is the zero initial state.
    hs: Vec<f64>,
    r: Vec<f64>,
    z: Vec<f64>,
    n: Vec<f64>,
    g: Vec<f64>,
    alpha: Vec<f64>,
    ctx: Vec<f64>,
    dhs: Vec<f64>,
    dh: Vec<f64>,
    dh_prev: Vec<f64>,
    scratch: Vec<f64>,
}

impl Tape {
    pub(crate) fn new(model: &SequenceModel) -> Self {
        Tape {
            hidden: model.config.hidden_dim,
            score: model.attention.as_ref().map_or(0, |a| a.score_dim),
            len: 0,
            hs: Vec::new(),
            r: Vec::new(),
            z: Vec::new(),
            n: Vec::new(),
            g: Vec::new(),
            alpha: Vec::new(),
            ctx: vec![0.0; model.config.hidden_dim],
            dhs: Vec::new(),
            dh: vec![0.0; model.config.hidden_dim],
            dh_prev: vec![0.0; model.config.hidden_dim],
            scratch: Vec::new(),
        }
    }

    fn resize(&mut self, t: usize) {
        if self.len == t {
            return;
        }
        let h = self.hidden;
        self.len = t;
        self.hs = vec![0.0; (t + 1) * h];
        self.r = vec![0.0; t * h];
        self.z = vec![0.0; t * h];
        self.n = vec![0.0; t * h];
        self.g = vec![0.0; t * self.score];
        self.alpha = vec![0.0; t];
        self.dhs = vec![0.0; t * h];
        self.scratch = vec![0.0; (5 * h).max(t + self.score)];
    }
}

/// Forward pass returning the logit.
pub(crate) fn forward_logit<S: AsRef<[f64]>>(model: &SequenceModel, seq: &[S], tape: &mut Tape) -> f64 {
    let h = tape.hidden;
    tape.resize(seq.len());
    let mut rh = std::mem::take(&mut tape.scratch);
    for (t, x) in seq.iter().enumerate() {
        let (prev, next) = tape.hs.split_at_mut((t + 1) * h);
        cell_forward(
            &model.gru,
            &prev[t * h..],
            x.as_ref(),
            &mut tape.r[t * h..(t + 1) * h],
            &mut tape.z[t * h..(t + 1) * h],
            &mut tape.n[t * h..(t + 1) * h],
            &mut next[..h],
            &mut rh[..h],
        );
    }
    tape.scratch = rh;
    match &model.attention {
        Some(a) => {
            attention_forward(a, &tape.hs[h..], seq, &mut tape.g, &mut tape.alpha, &mut tape.ctx);
            dot(&model.head.w, &tape.ctx) + model.head.c
        }
        None => dot(&model.head.w, &tape.hs[seq.len() * h..]) + model.head.c,
    }
}

/// Backward pass from `dlogit` after [`forward_logit`] on the same tape.
pub(crate) fn backward<S: AsRef<[f64]>>(
    model: &SequenceModel,
    grads: &mut SequenceModel,
    seq: &[S],
    tape: &mut Tape,
    dlogit: f64,
) {
    let h = tape.hidden;
    let t_len = seq.len();
    tape.dhs.iter_mut().for_each(|v| *v = 0.0);
    grads.head.c += dlogit;
    match &model.attention {
        Some(a) => {
            for j in 0..h {
                grads.head.w[j] += dlogit * tape.ctx[j];
                tape.dh[j] = dlogit * model.head.w[j];
            }
            let ga = grads.attention.as_mut().expect("gradient shape matches model");
            attention_backward(
                a,
                ga,
                &tape.hs[h..],
                seq,
                &tape.g,
                &tape.alpha,
                &tape.dh,
                &mut tape.dhs,
                &mut tape.scratch,
            );
        }
        None => {
            let last = &tape.hs[t_len * h..];
            for j in 0..h {
                grads.head.w[j] += dlogit * last[j];
                tape.dhs[(t_len - 1) * h + j] = dlogit * model.head.w[j];
            }
        }
    }

    tape.dh_prev.iter_mut().for_each(|v| *v = 0.0);
    for t in (0..t_len).rev() {
        for j in 0..h {
            tape.dh[j] = tape.dhs[t * h + j] + tape.dh_prev[j];
        }
        let cache = StepCache {
            h_prev: &tape.hs[t * h..(t + 1) * h],
            x: seq[t].as_ref(),
            r: &tape.r[t * h..(t + 1) * h],
            z: &tape.z[t * h..(t + 1) * h],
            n: &tape.n[t * h..(t + 1) * h],
        };
        cell_backward(&model.gru, &mut grads.gru, &cache, &tape.dh, &mut tape.dh_prev, &mut tape.scratch);
    }
}

fn bce_from_logit(logit: f64, label: u8) -> f64 {
    softplus(logit) - label as f64 * logit
}

/// Probability that the window precedes congestion. With attention the
/// head reads the attention context, otherwise the last hidden state.
pub fn model_forward<S: AsRef<[f64]>>(model: &SequenceModel, sequence: &[S]) -> f64 {
    let mut tape = Tape::new(model);
    sigmoid(forward_logit(model, sequence, &mut tape))
}

pub fn predict(model: &SequenceModel, samples: &[WindowedSample]) -> Vec<f64> {
    let mut tape = Tape::new(model);
    samples
        .iter()
        .map(|s| sigmoid(forward_logit(model, &s.sequence, &mut tape)))
        .collect()
}

/// Mean binary cross-entropy over `samples`.
pub fn batch_loss(model: &SequenceModel, samples: &[WindowedSample]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let mut tape = Tape::new(model);
    samples
        .iter()
        .map(|s| bce_from_logit(forward_logit(model, &s.sequence, &mut tape), s.label))
        .sum::<f64>()
        / samples.len() as f64
}

/// Mean loss and its gradient over the samples picked by `indices`.
pub(crate) fn loss_and_gradients_indexed(
    model: &SequenceModel,
    samples: &[WindowedSample],
    indices: &[usize],
    grads: &mut SequenceModel,
    tape: &mut Tape,
) -> f64 {
    for (_, t, _) in grads.tensors_mut() {
        t.iter_mut().for_each(|v| *v = 0.0);
    }
    let scale = 1.0 / indices.len() as f64;
    let mut loss = 0.0;
    for &i in indices {
        let s = &samples[i];
        let logit = forward_logit(model, &s.sequence, tape);
        loss += bce_from_logit(logit, s.label);
        let dlogit = (sigmoid(logit) - s.label as f64) * scale;
        backward(model, grads, &s.sequence, tape, dlogit);
    }
    loss * scale
}

/// Mean binary cross-entropy over the batch and its exact gradient with
/// respect to every parameter.
pub fn loss_and_gradients(model: &SequenceModel, batch: &[WindowedSample]) -> Result<(f64, SequenceModel)> {
    if batch.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    let mut grads = model.zeros_like();
    let mut tape = Tape::new(model);
    let idx: Vec<usize> = (0..batch.len()).collect();
    let loss = loss_and_gradients_indexed(model, batch, &idx, &mut grads, &mut tape);
    Ok((loss, grads))
}
