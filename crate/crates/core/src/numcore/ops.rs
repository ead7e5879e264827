use super::kernels;
use super::{SeededRng, Tensor};
use crate::error::{Error, Result};

/// Default layer-norm epsilon (population variance).
pub const LN_EPS: f64 = 1e-12;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
        return Err(Error::shape("matmul", a.shape(), b.shape()));
    }
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut c = vec![0.0; m * n];
    kernels::matmul_acc(a.data(), b.data(), &mut c, m, k, n);
    let c = Tensor::matrix(m, n, c)?;
    c.ensure_finite("matmul output")?;
    Ok(c)
}

/// Normalizes a single vector: `gamma * (x - mean) / sqrt(var + eps) + beta`.
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    let h = x.len();
    if x.rank() != 1 || gamma.len() != h || beta.len() != h {
        return Err(Error::shape("layer_norm", x.shape(), gamma.shape()));
    }
    if eps.is_nan() || eps < 0.0 {
        return Err(Error::InvalidArgument(format!("layer_norm eps {eps}")));
    }
    let (y, _) = layer_norm_rows(x.data(), h, gamma.data(), beta.data(), eps);
    let y = Tensor::vector(y)?;
    y.ensure_finite("layer_norm output")?;
    Ok(y)
}

/// Saved activations for the layer-norm backward pass.
#[derive(Debug, Clone)]
pub struct LayerNormCache {
    pub width: usize,
    /// Normalized pre-affine values, same layout as the input.
    pub xhat: Vec<f64>,
    /// `1 / sqrt(var + eps)` per row.
    pub inv_std: Vec<f64>,
}

/// Row-wise layer norm of a row-major `(rows × width)` buffer.
pub fn layer_norm_rows(
    x: &[f64],
    width: usize,
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
) -> (Vec<f64>, LayerNormCache) {
    let rows = x.len() / width;
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut inv_std = Vec::with_capacity(rows);
    let n = width as f64;
    for r in 0..rows {
        let xs = &x[r * width..(r + 1) * width];
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let is = 1.0 / (var + eps).sqrt();
        inv_std.push(is);
        let xh = &mut xhat[r * width..(r + 1) * width];
        let yr = &mut y[r * width..(r + 1) * width];
        for i in 0..width {
            xh[i] = (xs[i] - mean) * is;
            yr[i] = gamma[i] * xh[i] + beta[i];
        }
    }
    (
        y,
        LayerNormCache {
            width,
            xhat,
            inv_std,
        },
    )
}

/// Returns `dx` and accumulates into `dgamma`/`dbeta`.
pub fn layer_norm_rows_backward(
    dy: &[f64],
    cache: &LayerNormCache,
    gamma: &[f64],
    dgamma: &mut [f64],
    dbeta: &mut [f64],
) -> Vec<f64> {
    let w = cache.width;
    let n = w as f64;
    let mut dx = vec![0.0; dy.len()];
    let mut dxhat = vec![0.0; w];
    for (r, &is) in cache.inv_std.iter().enumerate() {
        let dyr = &dy[r * w..(r + 1) * w];
        let xh = &cache.xhat[r * w..(r + 1) * w];
        let mut mean_d = 0.0;
        let mut mean_dx = 0.0;
        for i in 0..w {
            dgamma[i] += dyr[i] * xh[i];
            dbeta[i] += dyr[i];
            dxhat[i] = dyr[i] * gamma[i];
            mean_d += dxhat[i];
            mean_dx += dxhat[i] * xh[i];
        }
        mean_d /= n;
        mean_dx /= n;
        let dxr = &mut dx[r * w..(r + 1) * w];
        for i in 0..w {
            dxr[i] = is * (dxhat[i] - mean_d - xh[i] * mean_dx);
        }
    }
    dx
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = 1.0 / sum;
    for v in row.iter_mut() {
        *v *= inv;
    }
}

pub fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    if x.rank() != 2 {
        return Err(Error::shape("softmax_rows", x.shape(), &[0, 0]));
    }
    x.ensure_finite("softmax_rows input")?;
    let mut y = x.clone();
    let c = y.cols();
    for row in y.data_mut().chunks_exact_mut(c) {
        softmax_in_place(row);
    }
    Ok(y)
}

/// Gradient of the scores given softmax output `p` and upstream `dp`, both
/// row-major with rows of `width`.
pub fn softmax_rows_backward(p: &[f64], dp: &[f64], width: usize) -> Vec<f64> {
    let mut ds = vec![0.0; p.len()];
    for ((pr, dpr), dsr) in p
        .chunks_exact(width)
        .zip(dp.chunks_exact(width))
        .zip(ds.chunks_exact_mut(width))
    {
        let inner = kernels::dot(pr, dpr);
        for i in 0..width {
            dsr[i] = pr[i] * (dpr[i] - inner);
        }
    }
    ds
}

// `1 + tanh(u)` as `2 / (1 + exp(-2u))`: one `exp` instead of libm `tanh`,
// which dominates the cost of short sequences.
#[inline]
fn one_plus_tanh(u: f64) -> f64 {
    2.0 / (1.0 + (-2.0 * u).exp())
}

#[inline]
pub(crate) fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * one_plus_tanh(GELU_C * (x + GELU_A * x * x * x))
}

/// Derivative of the tanh-form GELU.
#[inline]
pub fn gelu_grad(x: f64) -> f64 {
    let s = one_plus_tanh(GELU_C * (x + GELU_A * x * x * x));
    // 1 - tanh² = s (2 - s)
    0.5 * s + 0.5 * x * s * (2.0 - s) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Elementwise GELU, tanh approximation.
pub fn gelu(x: &Tensor) -> Tensor {
    x.map(gelu_scalar)
}

/// Inverted-dropout scale factors: each entry is `0` or `1 / (1 - rate)`.
/// `None` means dropout is a no-op (evaluation mode or zero rate).
pub fn dropout_mask(
    len: usize,
    rate: f64,
    train_mode: bool,
    rng: &mut SeededRng,
) -> Option<Vec<f64>> {
    if !train_mode || rate == 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - rate);
    Some(
        (0..len)
            .map(|_| if rng.uniform() < rate { 0.0 } else { keep })
            .collect(),
    )
}

pub fn dropout(x: &Tensor, rate: f64, train_mode: bool, rng: &mut SeededRng) -> Result<Tensor> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!(
            "dropout rate must be in [0, 1), got {rate}"
        )));
    }
    match dropout_mask(x.len(), rate, train_mode, rng) {
        None => Ok(x.clone()),
        Some(mask) => {
            let mut y = x.clone();
            for (v, m) in y.data_mut().iter_mut().zip(&mask) {
                *v *= m;
            }
            Ok(y)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    fn v(data: &[f64]) -> Tensor {
        Tensor::vector(data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_examples() {
        let id = m(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let b = m(&[vec![3.0, 4.0], vec![5.0, 6.0]]);
        assert_eq!(matmul(&id, &b).unwrap(), b);

        let a = m(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let b = m(&[vec![5.0, 6.0], vec![7.0, 8.0]]);
        assert_eq!(
            matmul(&a, &b).unwrap(),
            m(&[vec![19.0, 22.0], vec![43.0, 50.0]])
        );

        let a23 = Tensor::matrix(2, 3, vec![1.0; 6]).unwrap();
        let err = matmul(&a23, &b).unwrap_err();
        assert!(err.to_string().contains("[2, 3]") && err.to_string().contains("[2, 2]"));
    }

    #[test]
    fn layer_norm_examples() {
        let ones = v(&[1.0, 1.0]);
        let zeros = v(&[0.0, 0.0]);
        let y = layer_norm(&v(&[4.0, 4.0, 4.0]), &v(&[1.0; 3]), &v(&[0.0; 3]), LN_EPS).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 0.0]);

        let y = layer_norm(&v(&[1.0, 3.0]), &ones, &zeros, 0.0).unwrap();
        assert_eq!(y.data(), &[-1.0, 1.0]);

        let y = layer_norm(&v(&[1.0, 3.0]), &v(&[2.0, 2.0]), &v(&[5.0, 5.0]), 0.0).unwrap();
        assert_eq!(y.data(), &[3.0, 7.0]);
    }

    #[test]
    fn softmax_examples() {
        let y = softmax_rows(&m(&[vec![0.0, 0.0], vec![1000.0, 1000.0]])).unwrap();
        assert_eq!(y.data(), &[0.5, 0.5, 0.5, 0.5]);
        let y = softmax_rows(&m(&[vec![0.0, 3f64.ln()]])).unwrap();
        assert!((y.get(0, 0) - 0.25).abs() < 1e-15);
        assert!((y.get(0, 1) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn gelu_examples() {
        assert_eq!(gelu_scalar(0.0), 0.0);
        assert!((gelu_scalar(10.0) - 10.0).abs() < 1e-6);
        assert!(gelu_scalar(-10.0).abs() < 1e-6);
        // Monotone on the grid used by the encoder's typical range.
        let grid: Vec<f64> = (-300..=300).map(|i| i as f64 * 0.01).collect();
        let ys = gelu(&v(&grid));
        // tanh-GELU has a shallow minimum near -0.75; check monotone right of it.
        for w in ys.data()[230..].windows(2) {
            assert!(w[1] >= w[0]);
        }
    }

    #[test]
    fn gelu_grad_matches_central_difference() {
        for i in -40..=40 {
            let x = i as f64 * 0.1;
            let h = 1e-6;
            let num = (gelu_scalar(x + h) - gelu_scalar(x - h)) / (2.0 * h);
            assert!((num - gelu_grad(x)).abs() < 1e-8, "x={x}");
        }
    }

    #[test]
    fn dropout_examples() {
        let mut rng = SeededRng::new(3);
        let x = Tensor::full(&[10_000], 1.0);
        assert_eq!(dropout(&x, 0.5, false, &mut rng).unwrap(), x);
        assert_eq!(dropout(&x, 0.0, true, &mut rng).unwrap(), x);
        let y = dropout(&x, 0.5, true, &mut rng).unwrap();
        let mean = y.data().iter().sum::<f64>() / y.len() as f64;
        assert!((mean - 1.0).abs() < 0.05, "mean {mean}");
        assert!(y.data().iter().all(|&v| v == 0.0 || v == 2.0));
        assert!(dropout(&x, 1.0, true, &mut rng).is_err());
    }

    #[test]
    fn layer_norm_backward_matches_central_difference() {
        let x = vec![0.3, -1.2, 2.0, 0.7, 0.1, -0.4];
        let gamma = vec![1.5, 0.5, -0.7];
        let beta = vec![0.1, 0.2, 0.3];
        let weights = [0.9, -0.3, 0.4, 1.1, 0.8, -0.6];
        let loss = |x: &[f64]| {
            let (y, _) = layer_norm_rows(x, 3, &gamma, &beta, 1e-5);
            y.iter().zip(&weights).map(|(a, b)| a * b).sum::<f64>()
        };
        let (_, cache) = layer_norm_rows(&x, 3, &gamma, &beta, 1e-5);
        let (mut dg, mut db) = (vec![0.0; 3], vec![0.0; 3]);
        let dx = layer_norm_rows_backward(&weights, &cache, &gamma, &mut dg, &mut db);
        for i in 0..x.len() {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[i] += 1e-6;
            xm[i] -= 1e-6;
            let num = (loss(&xp) - loss(&xm)) / 2e-6;
            assert!((num - dx[i]).abs() < 1e-7, "i={i}: {num} vs {}", dx[i]);
        }
    }

    #[test]
    fn softmax_backward_matches_central_difference() {
        let s = vec![0.2, -0.5, 1.3, 0.0, 0.4, 0.4];
        let w = [1.0, 2.0, -1.0, 0.5, -0.2, 0.3];
        let loss = |s: &[f64]| {
            let t = softmax_rows(&Tensor::matrix(2, 3, s.to_vec()).unwrap()).unwrap();
            t.data().iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()
        };
        let p = softmax_rows(&Tensor::matrix(2, 3, s.clone()).unwrap()).unwrap();
        let ds = softmax_rows_backward(p.data(), &w, 3);
        for i in 0..s.len() {
            let (mut sp, mut sm) = (s.clone(), s.clone());
            sp[i] += 1e-6;
            sm[i] -= 1e-6;
            let num = (loss(&sp) - loss(&sm)) / 2e-6;
            assert!((num - ds[i]).abs() < 1e-8);
        }
    }
}
