// Raw slice kernels shared by the tape ops. All reductions run sequentially by
// index so results are bitwise reproducible.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// `c[m×n] = a[m×k] · b[k×n]`.
pub(crate) fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        let arow = &a[i * k..(i + 1) * k];
        for (p, &aip) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (cij, &bpj) in crow.iter_mut().zip(brow) {
                *cij += aip * bpj;
            }
        }
    }
    c
}

/// `da += g[m×n] · bᵀ`, with `b` stored as `[k×n]`.
pub(crate) fn matmul_grad_lhs(g: &[f64], b: &[f64], m: usize, k: usize, n: usize, da: &mut [f64]) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut acc = 0.0;
            for (x, y) in grow.iter().zip(brow) {
                acc += x * y;
            }
            da[i * k + p] += acc;
        }
    }
}

/// `db += aᵀ · g`, with `a` stored as `[m×k]`.
pub(crate) fn matmul_grad_rhs(a: &[f64], g: &[f64], m: usize, k: usize, n: usize, db: &mut [f64]) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let dbrow = &mut db[p * n..(p + 1) * n];
            for (d, &gij) in dbrow.iter_mut().zip(grow) {
                *d += aip * gij;
            }
        }
    }
}

/// Numerically stable softmax of one slice, written into `out`.
pub fn softmax_slice(x: &[f64], out: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &v) in out.iter_mut().zip(x) {
        *o = (v - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// Exact GELU: `x·Φ(x)`.
pub fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

pub(crate) fn gelu_derivative(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
    cdf + x * pdf
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Rotates consecutive pairs `(2i, 2i+1)` of each `head_dim` chunk of `row`
/// by `sign · position · base^(−2i/head_dim)`.
pub(crate) fn rotate_pairs(
    row: &mut [f64],
    head_dim: usize,
    position: usize,
    base: f64,
    sign: f64,
) {
    if position == 0 {
        return;
    }
    let half = head_dim / 2;
    for chunk in row.chunks_exact_mut(head_dim) {
        for i in 0..half {
            let theta = base.powf(-2.0 * i as f64 / head_dim as f64);
            let angle = sign * position as f64 * theta;
            let (s, c) = angle.sin_cos();
            let x0 = chunk[2 * i];
            let x1 = chunk[2 * i + 1];
            chunk[2 * i] = x0 * c - x1 * s;
            chunk[2 * i + 1] = x0 * s + x1 * c;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_values() {
        assert_eq!(gelu_scalar(0.0), 0.0);
        assert!((gelu_scalar(10.0) - 10.0).abs() < 1e-9);
        // Φ(1) = 0.841344746068543 (erf oracle)
        assert!((gelu_scalar(1.0) - 0.841_344_746_068_543).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_saturates() {
        assert_eq!(sigmoid_scalar(0.0), 0.5);
        let lo = sigmoid_scalar(-1000.0);
        assert!(lo.is_finite() && (0.0..1e-300).contains(&lo));
        assert_eq!(sigmoid_scalar(1000.0), 1.0);
        assert!((sigmoid_scalar(3f64.ln()) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn gelu_derivative_matches_difference() {
        for &x in &[-2.0, -0.3, 0.0, 0.7, 1.9] {
            let h = 1e-6;
            let fd = (gelu_scalar(x + h) - gelu_scalar(x - h)) / (2.0 * h);
            assert!((fd - gelu_derivative(x)).abs() < 1e-8);
        }
    }
}
