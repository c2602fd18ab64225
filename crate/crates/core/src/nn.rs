//! Dense layer kernels with hand-written backward passes.
//!
//! Weights are row-major `out × in`. Every kernel is generic over
//! [`Scalar`] so the same code serves plain gradients and dual-number
//! Hessian-vector products.

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Row-major `f64` matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn select_rows(&self, rows: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(rows.len() * self.cols);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        Matrix::from_vec(rows.len(), self.cols, data)
    }
}

/// `y = W x + b` for one sample.
pub fn linear<S: Scalar>(w: &[S], b: &[S], x: &[S], y: &mut [S]) {
    let n_in = x.len();
    debug_assert_eq!(w.len(), y.len() * n_in);
    for (o, out) in y.iter_mut().enumerate() {
        let row = &w[o * n_in..(o + 1) * n_in];
        let mut acc = b[o];
        for (wi, xi) in row.iter().zip(x) {
            acc += *wi * *xi;
        }
        *out = acc;
    }
}

/// Accumulates `dW += dy xᵀ`, `db += dy` and, when asked, writes `dx = Wᵀ dy`.
pub fn linear_backward<S: Scalar>(w: &[S], x: &[S], dy: &[S], dw: &mut [S], db: &mut [S], dx: Option<&mut [S]>) {
    let n_in = x.len();
    for (o, &g) in dy.iter().enumerate() {
        db[o] += g;
        let drow = &mut dw[o * n_in..(o + 1) * n_in];
        for (d, xi) in drow.iter_mut().zip(x) {
            *d += g * *xi;
        }
    }
    if let Some(dx) = dx {
        for v in dx.iter_mut() {
            *v = S::zero();
        }
        for (o, &g) in dy.iter().enumerate() {
            let row = &w[o * n_in..(o + 1) * n_in];
            for (d, wi) in dx.iter_mut().zip(row) {
                *d += *wi * g;
            }
        }
    }
}

/// Normalized activations and inverse standard deviation saved for backward.
#[derive(Debug, Clone)]
pub struct LayerNormCache<S> {
    pub xhat: Vec<S>,
    pub rstd: S,
}

pub fn layer_norm<S: Scalar>(x: &[S], gamma: &[S], beta: &[S], y: &mut [S]) -> LayerNormCache<S> {
    let n = x.len() as f64;
    let mut mean = S::zero();
    for &v in x {
        mean += v;
    }
    let mean = mean.scale(1.0 / n);
    let mut var = S::zero();
    for &v in x {
        let d = v - mean;
        var += d * d;
    }
    let var = var.scale(1.0 / n);
    let rstd = S::one() / (var + S::from_f64(LAYER_NORM_EPS)).sqrt();
    let xhat: Vec<S> = x.iter().map(|&v| (v - mean) * rstd).collect();
    for i in 0..x.len() {
        y[i] = gamma[i] * xhat[i] + beta[i];
    }
    LayerNormCache { xhat, rstd }
}

pub fn layer_norm_backward<S: Scalar>(
    cache: &LayerNormCache<S>,
    gamma: &[S],
    dy: &[S],
    dgamma: &mut [S],
    dbeta: &mut [S],
    dx: &mut [S],
) {
    let n = dy.len();
    let mut sum_dxhat = S::zero();
    let mut sum_dxhat_xhat = S::zero();
    let mut dxhat = Vec::with_capacity(n);
    for i in 0..n {
        dgamma[i] += dy[i] * cache.xhat[i];
        dbeta[i] += dy[i];
        let d = dy[i] * gamma[i];
        sum_dxhat += d;
        sum_dxhat_xhat += d * cache.xhat[i];
        dxhat.push(d);
    }
    let inv_n = 1.0 / n as f64;
    for i in 0..n {
        dx[i] = cache.rstd * (dxhat[i] - sum_dxhat.scale(inv_n) - cache.xhat[i] * sum_dxhat_xhat.scale(inv_n));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::Dual;

    fn fd(f: &dyn Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
        let h = 1e-6;
        (0..x.len())
            .map(|i| {
                let mut p = x.to_vec();
                let mut m = x.to_vec();
                p[i] += h;
                m[i] -= h;
                (f(&p) - f(&m)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn layer_norm_backward_matches_finite_differences() {
        let x = [0.3, -1.2, 2.0, 0.7, -0.1];
        let gamma = [1.0, 0.5, -0.3, 2.0, 1.1];
        let beta = [0.1, 0.0, 0.2, -0.4, 0.3];
        let weights = [0.2, -1.0, 0.4, 0.9, -0.6];
        let objective = |x: &[f64]| {
            let mut y = [0.0; 5];
            layer_norm(x, &gamma, &beta, &mut y);
            y.iter().zip(&weights).map(|(a, b)| a * b).sum::<f64>()
        };
        let mut y = [0.0; 5];
        let cache = layer_norm(&x, &gamma, &beta, &mut y);
        let (mut dg, mut db, mut dx) = ([0.0; 5], [0.0; 5], [0.0; 5]);
        layer_norm_backward(&cache, &gamma, &weights, &mut dg, &mut db, &mut dx);
        let num = fd(&objective, &x);
        for (a, n) in dx.iter().zip(&num) {
            assert!((a - n).abs() < 1e-7, "{a} vs {n}");
        }
    }

    #[test]
    fn linear_backward_matches_finite_differences() {
        let w = [0.5, -0.2, 0.1, 0.3, 0.9, -0.7];
        let b = [0.05, -0.1];
        let x = [1.0, -2.0, 0.5];
        let dy = [0.3, -1.1];
        let obj_x = |x: &[f64]| {
            let mut y = [0.0; 2];
            linear(&w, &b, x, &mut y);
            y[0] * dy[0] + y[1] * dy[1]
        };
        let mut dw = [0.0; 6];
        let mut db = [0.0; 2];
        let mut dx = [0.0; 3];
        linear_backward(&w, &x, &dy, &mut dw, &mut db, Some(&mut dx));
        for (a, n) in dx.iter().zip(fd(&obj_x, &x)) {
            assert!((a - n).abs() < 1e-8);
        }
        let obj_w = |w: &[f64]| {
            let mut y = [0.0; 2];
            linear(w, &b, &x, &mut y);
            y[0] * dy[0] + y[1] * dy[1]
        };
        for (a, n) in dw.iter().zip(fd(&obj_w, &w)) {
            assert!((a - n).abs() < 1e-8);
        }
        assert_eq!(db, dy);
    }

    #[test]
    fn dual_layer_norm_tangent_is_directional_derivative() {
        let x = [0.3, -1.2, 2.0, 0.7];
        let v = [1.0, 0.5, -0.5, 0.25];
        let gamma = [1.0; 4];
        let beta = [0.0; 4];
        let xd: Vec<Dual> = x.iter().zip(&v).map(|(a, b)| Dual::new(*a, *b)).collect();
        let gd: Vec<Dual> = gamma.iter().map(|g| Dual::constant(*g)).collect();
        let bd: Vec<Dual> = beta.iter().map(|g| Dual::constant(*g)).collect();
        let mut yd = vec![Dual::default(); 4];
        layer_norm(&xd, &gd, &bd, &mut yd);
        let h = 1e-6;
        let shifted = |s: f64| {
            let xs: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a + s * b).collect();
            let mut y = [0.0; 4];
            layer_norm(&xs, &gamma, &beta, &mut y);
            y
        };
        let (p, m) = (shifted(h), shifted(-h));
        for i in 0..4 {
            assert!((yd[i].d - (p[i] - m[i]) / (2.0 * h)).abs() < 1e-7);
        }
    }
}
