use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ops::{affine2, dot, outer2_acc, tmatvec_head_acc, uniform};
use crate::error::{Error, Result};

/// Additive attention `e_t = vᵀ tanh(W_h H_t + W_x x_t + b)`. `W_h` and `W_x`
/// are stored side by side as one `score_dim × (hidden_dim + input_dim)`
/// matrix `w`, so the score input is the concatenation `[H_t, x_t]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionParams {
    pub score_dim: usize,
    pub hidden_dim: usize,
    pub input_dim: usize,
    pub v: Vec<f64>,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl AttentionParams {
    pub fn zeros(score_dim: usize, hidden_dim: usize, input_dim: usize) -> Self {
        AttentionParams {
            score_dim,
            hidden_dim,
            input_dim,
            v: vec![0.0; score_dim],
            w: vec![0.0; score_dim * (hidden_dim + input_dim)],
            b: vec![0.0; score_dim],
        }
    }

    pub fn random(score_dim: usize, hidden_dim: usize, input_dim: usize, rng: &mut impl Rng) -> Self {
        let fan_in = hidden_dim + input_dim;
        AttentionParams {
            score_dim,
            hidden_dim,
            input_dim,
            v: uniform(rng, score_dim, score_dim),
            w: uniform(rng, score_dim * fan_in, fan_in),
            b: uniform(rng, score_dim, fan_in),
        }
    }

    /// Entry of `W_h` at `(row, col)`.
    pub fn w_h(&self, row: usize, col: usize) -> f64 {
        self.w[row * (self.hidden_dim + self.input_dim) + col]
    }

    /// Entry of `W_x` at `(row, col)`.
    pub fn w_x(&self, row: usize, col: usize) -> f64 {
        self.w[row * (self.hidden_dim + self.input_dim) + self.hidden_dim + col]
    }

    pub fn validate(&self) -> Result<()> {
        let cols = self.hidden_dim + self.input_dim;
        if self.v.len() != self.score_dim
            || self.b.len() != self.score_dim
            || self.w.len() != self.score_dim * cols
        {
            return Err(Error::Config(format!(
                "attention tensors inconsistent with score_dim {} and {} input columns",
                self.score_dim, cols
            )));
        }
        Ok(())
    }

    pub(crate) fn tensors(&self) -> [(&'static str, &[f64], bool); 3] {
        [
            ("attention.v", &self.v, true),
            ("attention.w", &self.w, true),
            ("attention.b", &self.b, false),
        ]
    }

    pub(crate) fn tensors_mut(&mut self) -> [(&'static str, &mut [f64], bool); 3] {
        [
            ("attention.v", &mut self.v, true),
            ("attention.w", &mut self.w, true),
            ("attention.b", &mut self.b, false),
        ]
    }
}

/// Writes `tanh` activations (`T × score_dim`) into `g`, weights into
/// `alpha`, and the context vector into `ctx`. `hs` holds `T` hidden states
/// back to back.
pub(crate) fn attention_forward<S: AsRef<[f64]>>(
    p: &AttentionParams,
    hs: &[f64],
    xs: &[S],
    g: &mut [f64],
    alpha: &mut [f64],
    ctx: &mut [f64],
) {
    let (hd, a) = (p.hidden_dim, p.score_dim);
    for (t, x) in xs.iter().enumerate() {
        let gt = &mut g[t * a..(t + 1) * a];
        affine2(gt, &p.w, &p.b, &hs[t * hd..(t + 1) * hd], x.as_ref());
        gt.iter_mut().for_each(|s| *s = s.tanh());
        alpha[t] = dot(&p.v, gt);
    }
    softmax_in_place(&mut alpha[..xs.len()]);
    ctx.iter_mut().for_each(|c| *c = 0.0);
    for t in 0..xs.len() {
        for (c, h) in ctx.iter_mut().zip(&hs[t * hd..(t + 1) * hd]) {
            *c += alpha[t] * h;
        }
    }
}

/// Backward from `dctx`. Accumulates parameter gradients into `gp` and adds
/// the gradient with respect to each hidden state into `dhs`. `scratch`
/// needs `T + score_dim` values.
pub(crate) fn attention_backward<S: AsRef<[f64]>>(
    p: &AttentionParams,
    gp: &mut AttentionParams,
    hs: &[f64],
    xs: &[S],
    g: &[f64],
    alpha: &[f64],
    dctx: &[f64],
    dhs: &mut [f64],
    scratch: &mut [f64],
) {
    let (hd, a, t_len) = (p.hidden_dim, p.score_dim, xs.len());
    let cols = hd + p.input_dim;
    let (dalpha, rest) = scratch.split_at_mut(t_len);
    let ds = &mut rest[..a];

    let mut weighted = 0.0;
    for t in 0..t_len {
        let h = &hs[t * hd..(t + 1) * hd];
        dalpha[t] = dot(dctx, h);
        weighted += alpha[t] * dalpha[t];
        for (d, c) in dhs[t * hd..(t + 1) * hd].iter_mut().zip(dctx) {
            *d += alpha[t] * c;
        }
    }
    for t in 0..t_len {
        let de = alpha[t] * (dalpha[t] - weighted);
        let gt = &g[t * a..(t + 1) * a];
        for j in 0..a {
            gp.v[j] += de * gt[j];
            ds[j] = de * p.v[j] * (1.0 - gt[j] * gt[j]);
            gp.b[j] += ds[j];
        }
        let h = &hs[t * hd..(t + 1) * hd];
        outer2_acc(&mut gp.w, ds, h, xs[t].as_ref());
        tmatvec_head_acc(&mut dhs[t * hd..(t + 1) * hd], &p.w, cols, ds);
    }
}

pub(crate) fn softmax_in_place(e: &mut [f64]) {
    let max = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in e.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in e.iter_mut() {
        *v /= sum;
    }
}

/// Attention weights and context vector over a sequence of hidden states.
pub fn attention<H: AsRef<[f64]>, S: AsRef<[f64]>>(
    hidden_states: &[H],
    inputs: &[S],
    p: &AttentionParams,
) -> Result<(Vec<f64>, Vec<f64>)> {
    p.validate()?;
    if hidden_states.is_empty() || hidden_states.len() != inputs.len() {
        return Err(Error::Data(format!(
            "attention needs matching non-empty sequences, got {} states and {} inputs",
            hidden_states.len(),
            inputs.len()
        )));
    }
    let mut hs = Vec::with_capacity(hidden_states.len() * p.hidden_dim);
    for h in hidden_states {
        if h.as_ref().len() != p.hidden_dim {
            return Err(Error::Config("hidden state width differs from attention".into()));
        }
        hs.extend_from_slice(h.as_ref());
    }
    if inputs.iter().any(|x| x.as_ref().len() != p.input_dim) {
        return Err(Error::Config("input width differs from attention".into()));
    }
    let t = inputs.len();
    let mut g = vec![0.0; t * p.score_dim];
    let mut alpha = vec![0.0; t];
    let mut ctx = vec![0.0; p.hidden_dim];
    attention_forward(p, &hs, inputs, &mut g, &mut alpha, &mut ctx);
    Ok((alpha, ctx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn states(rng: &mut ChaCha8Rng, t: usize, w: usize) -> Vec<Vec<f64>> {
        (0..t).map(|_| (0..w).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
    }

    #[test]
    fn zero_scores_are_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let hs = states(&mut rng, 5, 4);
        let xs = states(&mut rng, 5, 3);
        let (alpha, ctx) = attention(&hs, &xs, &AttentionParams::zeros(6, 4, 3)).unwrap();
        assert!(alpha.iter().all(|a| (a - 0.2).abs() < 1e-15));
        for j in 0..4 {
            let mean: f64 = hs.iter().map(|h| h[j]).sum::<f64>() / 5.0;
            assert!((ctx[j] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn random_weights_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let p = AttentionParams::random(8, 6, 3, &mut rng);
            let hs = states(&mut rng, 10, 6);
            let xs = states(&mut rng, 10, 3);
            let (alpha, _) = attention(&hs, &xs, &p).unwrap();
            assert!((alpha.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn softmax_shift_invariance() {
        let mut a = vec![0.3, -1.2, 2.5, 0.0];
        let mut b: Vec<f64> = a.iter().map(|v| v + 17.25).collect();
        softmax_in_place(&mut a);
        softmax_in_place(&mut b);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn split_accessors() {
        let mut p = AttentionParams::zeros(2, 3, 1);
        p.w = (0..8).map(|v| v as f64).collect();
        assert_eq!(p.w_h(1, 2), 6.0);
        assert_eq!(p.w_x(1, 0), 7.0);
    }
}
