//! Dense row-major kernels shared by the inference paths and the autograd tape.

use alloc::vec;
use alloc::vec::Vec;

pub const LN_EPS: f32 = 1e-5;

#[inline]
pub fn expf(x: f32) -> f32 {
    libm::expf(x)
}

#[inline]
pub fn sqrtf(x: f32) -> f32 {
    libm::sqrtf(x)
}

#[inline]
pub fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + expf(-x))
    } else {
        let e = expf(x);
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f32) -> f32 {
    let ax = if x < 0.0 { -x } else { x };
    x.max(0.0) + libm::log1pf(expf(-ax))
}

const GELU_C: f32 = 0.797_884_6; // sqrt(2 / pi)

#[inline]
pub fn gelu(x: f32) -> f32 {
    0.5 * x * (1.0 + libm::tanhf(GELU_C * (x + 0.044_715 * x * x * x)))
}

#[inline]
pub fn gelu_grad(x: f32) -> f32 {
    let inner = GELU_C * (x + 0.044_715 * x * x * x);
    let t = libm::tanhf(inner);
    let dinner = GELU_C * (1.0 + 3.0 * 0.044_715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
}

/// `out = x · w (+ bias)` for a single row; `w` is `k × m`.
pub fn row_matmul(x: &[f32], w: &[f32], bias: Option<&[f32]>, m: usize, out: &mut [f32]) {
    debug_assert_eq!(w.len(), x.len() * m);
    debug_assert_eq!(out.len(), m);
    match bias {
        Some(b) => out.copy_from_slice(b),
        None => out.iter_mut().for_each(|o| *o = 0.0),
    }
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        let wrow = &w[i * m..(i + 1) * m];
        for (o, &wv) in out.iter_mut().zip(wrow) {
            *o += xi * wv;
        }
    }
}

/// `a (n × k) · b (k × m)`.
pub fn matmul(a: &[f32], b: &[f32], n: usize, k: usize, m: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; n * m];
    for r in 0..n {
        row_matmul(&a[r * k..(r + 1) * k], b, None, m, &mut out[r * m..(r + 1) * m]);
    }
    out
}

/// Layer norm of one row; returns `(mean, rstd)`.
pub fn layer_norm_row(x: &[f32], gamma: &[f32], beta: &[f32], out: &mut [f32]) -> (f32, f32) {
    let n = x.len() as f32;
    let mean = x.iter().sum::<f32>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / n;
    let rstd = 1.0 / sqrtf(var + LN_EPS);
    for i in 0..x.len() {
        out[i] = (x[i] - mean) * rstd * gamma[i] + beta[i];
    }
    (mean, rstd)
}

/// In-place numerically stable softmax over `f32` scores.
pub fn softmax_in_place(xs: &mut [f32]) {
    let max = xs.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f32;
    for x in xs.iter_mut() {
        *x = expf(*x - max);
        sum += *x;
    }
    for x in xs.iter_mut() {
        *x /= sum;
    }
}

/// Softmax of `f32` logits computed in `f64`.
pub fn softmax_f64(logits: &[f32]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let mut out: Vec<f64> = logits.iter().map(|&l| libm::exp(l as f64 - max)).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= sum);
    out
}

/// Multi-head scaled dot-product attention for one query row.
///
/// `keys` / `values` are row-major with row width `width`; only the rows
/// listed in `allowed` participate, in the listed order.
pub fn attend_row(
    query: &[f32],
    keys: &[f32],
    values: &[f32],
    width: usize,
    heads: usize,
    allowed: &[usize],
    out: &mut [f32],
) {
    let hd = width / heads;
    let scale = 1.0 / sqrtf(hd as f32);
    let mut scores = vec![0.0f32; allowed.len()];
    out.iter_mut().for_each(|o| *o = 0.0);
    for h in 0..heads {
        let q = &query[h * hd..(h + 1) * hd];
        for (s, &j) in scores.iter_mut().zip(allowed) {
            let k = &keys[j * width + h * hd..j * width + (h + 1) * hd];
            *s = q.iter().zip(k).map(|(a, b)| a * b).sum::<f32>() * scale;
        }
        softmax_in_place(&mut scores);
        let o = &mut out[h * hd..(h + 1) * hd];
        for (&w, &j) in scores.iter().zip(allowed) {
            let v = &values[j * width + h * hd..j * width + (h + 1) * hd];
            for (oi, vi) in o.iter_mut().zip(v) {
                *oi += w * vi;
            }
        }
    }
}

/// Standard normal draw (Box–Muller).
pub fn normal<R: rand::Rng + ?Sized>(rng: &mut R) -> f32 {
    let u1: f64 = rng.gen::<f64>().max(1e-300);
    let u2: f64 = rng.gen::<f64>();
    (libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * core::f64::consts::PI * u2)) as f32
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_grad_matches_finite_difference() {
        for &x in &[-3.0f32, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-3;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-3, "x={x}");
        }
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(0.0) - core::f32::consts::LN_2).abs() < 1e-6);
        assert_eq!(softplus(100.0), 100.0);
        assert!(softplus(-100.0) >= 0.0);
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax_f64(&[1.0, 2.0, 3.0, -50.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p[2] > p[1] && p[1] > p[0]);
    }
}
