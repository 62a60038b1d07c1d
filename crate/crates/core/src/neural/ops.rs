//! Small dense kernels over row-major slices.

use rand::Rng;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `out[i] = bias[i] + row_i(w) · [a, b]` where `w` has `a.len() + b.len()`
/// columns.
#[inline]
pub fn affine2(out: &mut [f64], w: &[f64], bias: &[f64], a: &[f64], b: &[f64]) {
    let cols = a.len() + b.len();
    for (i, o) in out.iter_mut().enumerate() {
        let row = &w[i * cols..(i + 1) * cols];
        *o = bias[i] + dot(&row[..a.len()], a) + dot(&row[a.len()..], b);
    }
}

/// `g += d ⊗ [a, b]`.
#[inline]
pub fn outer2_acc(g: &mut [f64], d: &[f64], a: &[f64], b: &[f64]) {
    let cols = a.len() + b.len();
    for (i, &di) in d.iter().enumerate() {
        if di == 0.0 {
            continue;
        }
        let row = &mut g[i * cols..(i + 1) * cols];
        for (gk, ak) in row[..a.len()].iter_mut().zip(a) {
            *gk += di * ak;
        }
        for (gk, bk) in row[a.len()..].iter_mut().zip(b) {
            *gk += di * bk;
        }
    }
}

/// `out += (wᵀ d)[..out.len()]`, using only the leading columns of `w`.
#[inline]
pub fn tmatvec_head_acc(out: &mut [f64], w: &[f64], cols: usize, d: &[f64]) {
    for (i, &di) in d.iter().enumerate() {
        if di == 0.0 {
            continue;
        }
        let row = &w[i * cols..i * cols + out.len()];
        for (o, wk) in out.iter_mut().zip(row) {
            *o += di * wk;
        }
    }
}

pub fn uniform(rng: &mut impl Rng, len: usize, fan_in: usize) -> Vec<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    (0..len).map(|_| rng.random_range(-bound..=bound)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_and_softplus_are_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(800.0) == 1.0 && sigmoid(-800.0) == 0.0);
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0);
    }

    #[test]
    fn kernels_match_naive() {
        let w = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let mut out = [0.0; 2];
        affine2(&mut out, &w, &[0.5, -0.5], &[1.0, 1.0], &[2.0]);
        assert_eq!(out, [1.0 + 2.0 + 6.0 + 0.5, 4.0 + 5.0 + 12.0 - 0.5]);

        let mut g = [0.0; 6];
        outer2_acc(&mut g, &[1.0, 2.0], &[3.0, 4.0], &[5.0]);
        assert_eq!(g, [3.0, 4.0, 5.0, 6.0, 8.0, 10.0]);

        let mut t = [0.0; 2];
        tmatvec_head_acc(&mut t, &w, 3, &[1.0, 1.0]);
        assert_eq!(t, [5.0, 7.0]);
    }
}
