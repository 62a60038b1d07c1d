use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ops::{affine2, outer2_acc, sigmoid, tmatvec_head_acc, uniform};
use crate::error::{Error, Result};

/// Gate weights act on the concatenation `[h_prev, x]`, so each matrix is
/// `hidden_dim × (hidden_dim + input_dim)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruParams {
    pub hidden_dim: usize,
    pub input_dim: usize,
    pub w_r: Vec<f64>,
    pub w_z: Vec<f64>,
    pub w: Vec<f64>,
    pub b_r: Vec<f64>,
    pub b_z: Vec<f64>,
    pub b: Vec<f64>,
}

impl GruParams {
    pub fn zeros(hidden_dim: usize, input_dim: usize) -> Self {
        let m = hidden_dim * (hidden_dim + input_dim);
        GruParams {
            hidden_dim,
            input_dim,
            w_r: vec![0.0; m],
            w_z: vec![0.0; m],
            w: vec![0.0; m],
            b_r: vec![0.0; hidden_dim],
            b_z: vec![0.0; hidden_dim],
            b: vec![0.0; hidden_dim],
        }
    }

    pub fn random(hidden_dim: usize, input_dim: usize, rng: &mut impl Rng) -> Self {
        let fan_in = hidden_dim + input_dim;
        let m = hidden_dim * fan_in;
        GruParams {
            hidden_dim,
            input_dim,
            w_r: uniform(rng, m, fan_in),
            w_z: uniform(rng, m, fan_in),
            w: uniform(rng, m, fan_in),
            b_r: uniform(rng, hidden_dim, fan_in),
            b_z: uniform(rng, hidden_dim, fan_in),
            b: uniform(rng, hidden_dim, fan_in),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.hidden_dim * (self.hidden_dim + self.input_dim);
        let shapes = [
            ("w_r", self.w_r.len(), m),
            ("w_z", self.w_z.len(), m),
            ("w", self.w.len(), m),
            ("b_r", self.b_r.len(), self.hidden_dim),
            ("b_z", self.b_z.len(), self.hidden_dim),
            ("b", self.b.len(), self.hidden_dim),
        ];
        for (name, got, want) in shapes {
            if got != want {
                return Err(Error::Config(format!(
                    "gru.{name} has {got} entries, expected {want}"
                )));
            }
        }
        Ok(())
    }

    pub(crate) fn tensors(&self) -> [(&'static str, &[f64], bool); 6] {
        [
            ("gru.w_r", &self.w_r, true),
            ("gru.w_z", &self.w_z, true),
            ("gru.w", &self.w, true),
            ("gru.b_r", &self.b_r, false),
            ("gru.b_z", &self.b_z, false),
            ("gru.b", &self.b, false),
        ]
    }

    pub(crate) fn tensors_mut(&mut self) -> [(&'static str, &mut [f64], bool); 6] {
        [
            ("gru.w_r", &mut self.w_r, true),
            ("gru.w_z", &mut self.w_z, true),
            ("gru.w", &mut self.w, true),
            ("gru.b_r", &mut self.b_r, false),
            ("gru.b_z", &mut self.b_z, false),
            ("gru.b", &mut self.b, false),
        ]
    }
}

/// Gate activations of one step, kept for the backward pass.
pub(crate) struct StepCache<'a> {
    pub h_prev: &'a [f64],
    pub x: &'a [f64],
    pub r: &'a [f64],
    pub z: &'a [f64],
    pub n: &'a [f64],
}

/// One GRU step writing gate activations and the new state into the given
/// buffers. `rh` is scratch of length `hidden_dim`.
pub(crate) fn cell_forward(
    p: &GruParams,
    h_prev: &[f64],
    x: &[f64],
    r: &mut [f64],
    z: &mut [f64],
    n: &mut [f64],
    h: &mut [f64],
    rh: &mut [f64],
) {
    affine2(r, &p.w_r, &p.b_r, h_prev, x);
    affine2(z, &p.w_z, &p.b_z, h_prev, x);
    for i in 0..r.len() {
        r[i] = sigmoid(r[i]);
        z[i] = sigmoid(z[i]);
        rh[i] = r[i] * h_prev[i];
    }
    affine2(n, &p.w, &p.b, rh, x);
    for i in 0..n.len() {
        n[i] = n[i].tanh();
        h[i] = (1.0 - z[i]) * h_prev[i] + z[i] * n[i];
    }
}

/// Backward through one step. Accumulates parameter gradients into `g` and
/// writes the gradient with respect to `h_prev` into `dh_prev`. `scratch`
/// must hold at least `5 * hidden_dim` values.
pub(crate) fn cell_backward(
    p: &GruParams,
    g: &mut GruParams,
    c: &StepCache,
    dh: &[f64],
    dh_prev: &mut [f64],
    scratch: &mut [f64],
) {
    let hd = dh.len();
    let cols = hd + p.input_dim;
    let (da_n, rest) = scratch.split_at_mut(hd);
    let (da_z, rest) = rest.split_at_mut(hd);
    let (da_r, rest) = rest.split_at_mut(hd);
    let (drh, rest) = rest.split_at_mut(hd);
    let (rh, _) = rest.split_at_mut(hd);

    for i in 0..hd {
        da_n[i] = dh[i] * c.z[i] * (1.0 - c.n[i] * c.n[i]);
        da_z[i] = dh[i] * (c.n[i] - c.h_prev[i]) * c.z[i] * (1.0 - c.z[i]);
        dh_prev[i] = dh[i] * (1.0 - c.z[i]);
        drh[i] = 0.0;
        rh[i] = c.r[i] * c.h_prev[i];
    }
    // the candidate sees [r ⊙ h_prev, x]
    outer2_acc(&mut g.w, da_n, rh, c.x);
    for i in 0..hd {
        g.b[i] += da_n[i];
    }
    tmatvec_head_acc(drh, &p.w, cols, da_n);
    for i in 0..hd {
        da_r[i] = drh[i] * c.h_prev[i] * c.r[i] * (1.0 - c.r[i]);
        dh_prev[i] += drh[i] * c.r[i];
    }

    outer2_acc(&mut g.w_z, da_z, c.h_prev, c.x);
    outer2_acc(&mut g.w_r, da_r, c.h_prev, c.x);
    for i in 0..hd {
        g.b_z[i] += da_z[i];
        g.b_r[i] += da_r[i];
    }
    tmatvec_head_acc(dh_prev, &p.w_z, cols, da_z);
    tmatvec_head_acc(dh_prev, &p.w_r, cols, da_r);
}

fn check_shapes(h_prev: &[f64], x: &[f64], p: &GruParams) -> Result<()> {
    p.validate()?;
    if h_prev.len() != p.hidden_dim || x.len() != p.input_dim {
        return Err(Error::Config(format!(
            "gru expects hidden {} / input {}, got {} / {}",
            p.hidden_dim,
            p.input_dim,
            h_prev.len(),
            x.len()
        )));
    }
    Ok(())
}

/// One GRU step:
/// `r = σ(W_r[h,x] + b_r)`, `z = σ(W_z[h,x] + b_z)`,
/// `ñ = tanh(W[r⊙h, x] + b)`, `h' = (1 - z)⊙h + z⊙ñ`.
pub fn gru_cell(h_prev: &[f64], x: &[f64], p: &GruParams) -> Result<Vec<f64>> {
    check_shapes(h_prev, x, p)?;
    let hd = p.hidden_dim;
    let mut buf = vec![0.0; 5 * hd];
    let (r, rest) = buf.split_at_mut(hd);
    let (z, rest) = rest.split_at_mut(hd);
    let (n, rest) = rest.split_at_mut(hd);
    let (h, rh) = rest.split_at_mut(hd);
    cell_forward(p, h_prev, x, r, z, n, h, rh);
    Ok(h.to_vec())
}

/// Runs the cell over a sequence from a zero initial state and returns every
/// hidden state.
pub fn gru_forward<S: AsRef<[f64]>>(sequence: &[S], p: &GruParams) -> Result<Vec<Vec<f64>>> {
    if sequence.is_empty() {
        return Err(Error::Data("gru_forward needs at least one time step".into()));
    }
    let mut h = vec![0.0; p.hidden_dim];
    let mut out = Vec::with_capacity(sequence.len());
    for x in sequence {
        h = gru_cell(&h, x.as_ref(), p)?;
        out.push(h.clone());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_params_halve_state() {
        let p = GruParams::zeros(4, 3);
        assert_eq!(gru_cell(&[0.0; 4], &[1.0, 2.0, 3.0], &p).unwrap(), vec![0.0; 4]);
        let h = [0.4, -0.2, 1.0, -1.0];
        let out = gru_cell(&h, &[1.0, 2.0, 3.0], &p).unwrap();
        assert_eq!(out, h.iter().map(|v| 0.5 * v).collect::<Vec<_>>());
    }

    #[test]
    fn random_params_stay_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = GruParams::random(16, 3, &mut rng);
        for _ in 0..50 {
            let h: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-5.0..5.0)).collect();
            let out = gru_cell(&h, &x, &p).unwrap();
            assert!(out.iter().all(|v| v.abs() < 1.0));
        }
    }

    #[test]
    fn forward_prefix_and_single_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = GruParams::random(8, 3, &mut rng);
        let seq: Vec<[f64; 3]> = (0..6).map(|i| [i as f64 * 0.1, -0.3, 0.7]).collect();
        let full = gru_forward(&seq, &p).unwrap();
        let prefix = gru_forward(&seq[..3], &p).unwrap();
        assert_eq!(&full[..3], &prefix[..]);
        let one = gru_forward(&seq[..1], &p).unwrap();
        assert_eq!(one[0], gru_cell(&[0.0; 8], &seq[0], &p).unwrap());

        let zero = gru_forward(&seq, &GruParams::zeros(8, 3)).unwrap();
        assert!(zero.iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn shape_errors() {
        let p = GruParams::zeros(4, 3);
        assert!(matches!(gru_cell(&[0.0; 3], &[0.0; 3], &p), Err(Error::Config(_))));
        assert!(matches!(gru_forward::<[f64; 3]>(&[], &p), Err(Error::Data(_))));
    }
}
