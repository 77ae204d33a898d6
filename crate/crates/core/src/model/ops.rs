//! Dense row-major kernels used by the transformer.

use crate::scalar::Scalar;

/// `out[n×m] = x[n×k] · w[k×m]`.
pub fn matmul<T: Scalar>(x: &[T], n: usize, k: usize, w: &[T], m: usize, out: &mut [T]) {
    debug_assert_eq!(x.len(), n * k);
    debug_assert_eq!(w.len(), k * m);
    debug_assert_eq!(out.len(), n * m);
    out.fill(T::zero());
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        for (kk, &xv) in x[i * k..(i + 1) * k].iter().enumerate() {
            if xv == T::zero() {
                continue;
            }
            for (o, &wv) in row.iter_mut().zip(&w[kk * m..(kk + 1) * m]) {
                *o += xv * wv;
            }
        }
    }
}

/// Adds `b[m]` to every row of `out[n×m]`.
pub fn add_bias<T: Scalar>(out: &mut [T], m: usize, b: &[T]) {
    for row in out.chunks_mut(m) {
        for (o, &bv) in row.iter_mut().zip(b) {
            *o += bv;
        }
    }
}

/// `dw[k×m] += xᵀ · g` for `x[n×k]`, `g[n×m]`.
pub fn matmul_tn_acc<T: Scalar>(x: &[T], n: usize, k: usize, g: &[T], m: usize, dw: &mut [T]) {
    for i in 0..n {
        let grow = &g[i * m..(i + 1) * m];
        if grow.iter().all(|&v| v == T::zero()) {
            continue;
        }
        for (kk, &xv) in x[i * k..(i + 1) * k].iter().enumerate() {
            for (d, &gv) in dw[kk * m..(kk + 1) * m].iter_mut().zip(grow) {
                *d += xv * gv;
            }
        }
    }
}

/// `out[n×k] = g[n×m] · wᵀ` for `w[k×m]`.
pub fn matmul_nt<T: Scalar>(g: &[T], n: usize, m: usize, w: &[T], k: usize, out: &mut [T]) {
    for i in 0..n {
        let grow = &g[i * m..(i + 1) * m];
        for kk in 0..k {
            out[i * k + kk] = dot(grow, &w[kk * m..(kk + 1) * m]);
        }
    }
}

/// `db[m] += Σ_rows g`.
pub fn sum_rows_acc<T: Scalar>(g: &[T], m: usize, db: &mut [T]) {
    for row in g.chunks(m) {
        for (d, &v) in db.iter_mut().zip(row) {
            *d += v;
        }
    }
}

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

pub const LN_EPS: f64 = 1e-5;

/// Per-row normalized input and reciprocal standard deviation.
#[derive(Debug, Clone, Default)]
pub struct LnCache<T> {
    pub xhat: Vec<T>,
    pub rstd: Vec<T>,
}

pub fn layer_norm<T: Scalar>(x: &[T], d: usize, gain: &[T], bias: &[T], out: &mut [T]) -> LnCache<T> {
    let n = x.len() / d;
    let eps = T::lit(LN_EPS);
    let inv_d = T::one() / T::from_usize_lossy(d);
    let mut cache = LnCache { xhat: vec![T::zero(); x.len()], rstd: vec![T::zero(); n] };
    for i in 0..n {
        let row = &x[i * d..(i + 1) * d];
        let mean = row.iter().copied().sum::<T>() * inv_d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
        let rstd = T::one() / (var + eps).sqrt();
        cache.rstd[i] = rstd;
        for j in 0..d {
            let xh = (row[j] - mean) * rstd;
            cache.xhat[i * d + j] = xh;
            out[i * d + j] = xh * gain[j] + bias[j];
        }
    }
    cache
}

/// Accumulates gain/bias gradients and writes the input gradient into `dx` (added).
pub fn layer_norm_backward<T: Scalar>(
    dy: &[T],
    d: usize,
    cache: &LnCache<T>,
    gain: &[T],
    dgain: &mut [T],
    dbias: &mut [T],
    dx: &mut [T],
) {
    let n = dy.len() / d;
    let inv_d = T::one() / T::from_usize_lossy(d);
    for i in 0..n {
        let dyr = &dy[i * d..(i + 1) * d];
        if dyr.iter().all(|&v| v == T::zero()) {
            continue;
        }
        let xh = &cache.xhat[i * d..(i + 1) * d];
        let mut sum_g = T::zero();
        let mut sum_gx = T::zero();
        for j in 0..d {
            let g = dyr[j] * gain[j];
            dgain[j] += dyr[j] * xh[j];
            dbias[j] += dyr[j];
            sum_g += g;
            sum_gx += g * xh[j];
        }
        let rstd = cache.rstd[i];
        for j in 0..d {
            let g = dyr[j] * gain[j];
            dx[i * d + j] += rstd * (g - inv_d * sum_g - xh[j] * inv_d * sum_gx);
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/π)
const GELU_A: f64 = 0.044_715;

/// Tanh-approximated GELU.
#[inline]
pub fn gelu<T: Scalar>(x: T) -> T {
    let half = T::lit(0.5);
    half * x * (T::one() + (T::lit(GELU_C) * (x + T::lit(GELU_A) * x * x * x)).tanh())
}

#[inline]
pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let half = T::lit(0.5);
    let c = T::lit(GELU_C);
    let a = T::lit(GELU_A);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::lit(3.0) * a * x * x)
}

/// Sinusoidal position table `[len × d]`: even dims `sin`, odd dims `cos`.
pub fn sinusoidal_table<T: Scalar>(len: usize, d: usize) -> Vec<T> {
    let mut table = vec![T::zero(); len * d];
    for pos in 0..len {
        for i in 0..d {
            let pair = (i / 2) as f64;
            let angle = pos as f64 / 10_000f64.powf(2.0 * pair / d as f64);
            table[pos * d + i] = T::lit(if i % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    table
}
