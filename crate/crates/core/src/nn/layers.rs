//! Layer kinds with hand-derived forward and backward passes.
//!
//! Spatial tensors are `(height, width, channels)` row-major; in this crate
//! height is time and width is the cepstral axis. Convolutions are valid
//! (no padding) with stride 1; max pooling uses non-overlapping windows and
//! drops any remainder.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// SELU constants (Klambauer et al.).
pub const SELU_ALPHA: f64 = 1.673_263_242_354_377_3;
pub const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d { filters: usize, kernel: [usize; 2] },
    Maxpool2d { pool: [usize; 2] },
    Dense { units: usize },
    Flatten,
    Relu,
    Selu,
    Linear,
    Softmax,
}

impl LayerSpec {
    pub fn conv(filters: usize, m: usize, r: usize) -> Self {
        LayerSpec::Conv2d {
            filters,
            kernel: [m, r],
        }
    }

    pub fn pool(p: usize, q: usize) -> Self {
        LayerSpec::Maxpool2d { pool: [p, q] }
    }

    pub fn dense(units: usize) -> Self {
        LayerSpec::Dense { units }
    }

    /// Output shape for a given input shape, or a shape error.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let spatial = |what: &str| -> Result<(usize, usize, usize)> {
            match *input {
                [h, w, c] => Ok((h, w, c)),
                _ => Err(Error::Shape(format!(
                    "{what} needs a (height, width, channels) input, got {input:?}"
                ))),
            }
        };
        match self {
            LayerSpec::Conv2d { filters, kernel } => {
                let (h, w, _) = spatial("conv2d")?;
                let [m, r] = *kernel;
                if *filters == 0 || m == 0 || r == 0 {
                    return Err(Error::Shape("conv2d sizes must be at least 1".into()));
                }
                if m > h || r > w {
                    return Err(Error::Shape(format!(
                        "conv2d kernel {m}x{r} does not fit input {h}x{w}"
                    )));
                }
                Ok(vec![h - m + 1, w - r + 1, *filters])
            }
            LayerSpec::Maxpool2d { pool } => {
                let (h, w, c) = spatial("maxpool2d")?;
                let [p, q] = *pool;
                if p == 0 || q == 0 {
                    return Err(Error::Shape("pool sizes must be at least 1".into()));
                }
                if h / p == 0 || w / q == 0 {
                    return Err(Error::Shape(format!(
                        "pool {p}x{q} leaves no output on input {h}x{w}"
                    )));
                }
                Ok(vec![h / p, w / q, c])
            }
            LayerSpec::Dense { units } => {
                if input.len() != 1 {
                    return Err(Error::Shape(format!(
                        "dense needs a flat input, got {input:?}"
                    )));
                }
                if *units == 0 {
                    return Err(Error::Shape("dense units must be at least 1".into()));
                }
                Ok(vec![*units])
            }
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Relu | LayerSpec::Selu | LayerSpec::Linear | LayerSpec::Softmax => {
                if input.is_empty() {
                    return Err(Error::Shape("activation on a scalar shape".into()));
                }
                Ok(input.to_vec())
            }
        }
    }

    /// Shapes of the trainable tensors (weights then bias), empty if none.
    pub fn param_shapes(&self, input: &[usize]) -> Vec<Vec<usize>> {
        match self {
            LayerSpec::Conv2d { filters, kernel } => {
                let k = kernel[0] * kernel[1] * input[2];
                vec![vec![k, *filters], vec![*filters]]
            }
            LayerSpec::Dense { units } => vec![vec![*units, input[0]], vec![*units]],
            _ => Vec::new(),
        }
    }

    pub fn fan_in(&self, input: &[usize]) -> usize {
        match self {
            LayerSpec::Conv2d { kernel, .. } => kernel[0] * kernel[1] * input[2],
            LayerSpec::Dense { .. } => input[0],
            _ => 0,
        }
    }
}

pub fn selu(x: f64) -> f64 {
    if x > 0.0 {
        SELU_LAMBDA * x
    } else {
        SELU_LAMBDA * SELU_ALPHA * (x.exp() - 1.0)
    }
}

fn selu_grad(x: f64) -> f64 {
    if x > 0.0 {
        SELU_LAMBDA
    } else {
        SELU_LAMBDA * SELU_ALPHA * x.exp()
    }
}

/// Row-major `c[m x n] (+)= a[m x k] * b[k x n]` with arbitrary strides on a and b.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: callers pass slices whose extents cover every strided index
    // for the given (m, k, n) and strides; c is row-major m x n.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Builds the `(positions x m*r*c)` patch matrix of a valid convolution.
pub(crate) fn im2col(input: &[f64], shape: &[usize], kernel: [usize; 2]) -> Vec<f64> {
    let (h, w, c) = (shape[0], shape[1], shape[2]);
    let [m, r] = kernel;
    let (ho, wo) = (h - m + 1, w - r + 1);
    let k = m * r * c;
    let mut cols = vec![0.0; ho * wo * k];
    for i in 0..ho {
        for j in 0..wo {
            let row = &mut cols[(i * wo + j) * k..(i * wo + j + 1) * k];
            for di in 0..m {
                let src = ((i + di) * w + j) * c;
                let dst = di * r * c;
                row[dst..dst + r * c].copy_from_slice(&input[src..src + r * c]);
            }
        }
    }
    cols
}

fn col2im_add(cols: &[f64], shape: &[usize], kernel: [usize; 2], out: &mut [f64]) {
    let (h, w, c) = (shape[0], shape[1], shape[2]);
    let [m, r] = kernel;
    let (ho, wo) = (h - m + 1, w - r + 1);
    let k = m * r * c;
    for i in 0..ho {
        for j in 0..wo {
            let row = &cols[(i * wo + j) * k..(i * wo + j + 1) * k];
            for di in 0..m {
                let dst = ((i + di) * w + j) * c;
                let src = di * r * c;
                for (o, g) in out[dst..dst + r * c].iter_mut().zip(&row[src..src + r * c]) {
                    *o += g;
                }
            }
        }
    }
}

/// Per-layer values saved by the forward pass.
#[derive(Debug, Clone)]
pub(crate) enum Aux {
    None,
    Cols(Vec<f64>),
    PoolIndex(Vec<usize>),
}

pub(crate) fn forward(
    spec: &LayerSpec,
    params: &[super::Tensor],
    in_shape: &[usize],
    out_shape: &[usize],
    x: &[f64],
) -> (Vec<f64>, Aux) {
    match spec {
        LayerSpec::Conv2d { filters, kernel } => {
            let cols = im2col(x, in_shape, *kernel);
            let k = kernel[0] * kernel[1] * in_shape[2];
            let n = *filters;
            let p = out_shape[0] * out_shape[1];
            let bias = params[1].values();
            let mut y = Vec::with_capacity(p * n);
            for _ in 0..p {
                y.extend_from_slice(bias);
            }
            gemm(
                p,
                k,
                n,
                &cols,
                k as isize,
                1,
                params[0].values(),
                n as isize,
                1,
                1.0,
                &mut y,
            );
            (y, Aux::Cols(cols))
        }
        LayerSpec::Maxpool2d { pool } => {
            let (w, c) = (in_shape[1], in_shape[2]);
            let (ho, wo) = (out_shape[0], out_shape[1]);
            let [p, q] = *pool;
            let mut y = vec![f64::NEG_INFINITY; ho * wo * c];
            let mut idx = vec![0usize; ho * wo * c];
            for i in 0..ho {
                for j in 0..wo {
                    let o = (i * wo + j) * c;
                    for di in 0..p {
                        for dj in 0..q {
                            let src = ((i * p + di) * w + j * q + dj) * c;
                            for ch in 0..c {
                                if x[src + ch] > y[o + ch] {
                                    y[o + ch] = x[src + ch];
                                    idx[o + ch] = src + ch;
                                }
                            }
                        }
                    }
                }
            }
            (y, Aux::PoolIndex(idx))
        }
        LayerSpec::Dense { units } => {
            let weights = params[0].values();
            let bias = params[1].values();
            let n_in = x.len();
            let y = (0..*units)
                .map(|o| {
                    let row = &weights[o * n_in..(o + 1) * n_in];
                    bias[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
                })
                .collect();
            (y, Aux::None)
        }
        LayerSpec::Flatten | LayerSpec::Linear => (x.to_vec(), Aux::None),
        LayerSpec::Relu => (x.iter().map(|&v| v.max(0.0)).collect(), Aux::None),
        LayerSpec::Selu => (x.iter().map(|&v| selu(v)).collect(), Aux::None),
        LayerSpec::Softmax => {
            let c = *in_shape.last().unwrap();
            let mut y = x.to_vec();
            for row in y.chunks_exact_mut(c) {
                softmax_in_place(row);
            }
            (y, Aux::None)
        }
    }
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Natural log of softmax, computed without forming the probabilities.
pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}

/// Returns the gradient with respect to the layer input and, when `acc` is
/// given, adds parameter gradients into it.
#[allow(clippy::too_many_arguments)]
pub(crate) fn backward(
    spec: &LayerSpec,
    params: &[super::Tensor],
    in_shape: &[usize],
    out_shape: &[usize],
    x: &[f64],
    y: &[f64],
    aux: &Aux,
    dy: &[f64],
    acc: Option<&mut [super::Tensor]>,
) -> Vec<f64> {
    match spec {
        LayerSpec::Conv2d { filters, kernel } => {
            let cols = match aux {
                Aux::Cols(c) => c,
                _ => unreachable!("conv cache holds patches"),
            };
            let k = kernel[0] * kernel[1] * in_shape[2];
            let n = *filters;
            let p = out_shape[0] * out_shape[1];
            if let Some(acc) = acc {
                let (w_acc, b_acc) = acc.split_at_mut(1);
                // dW += cols^T * dy
                gemm(
                    k,
                    p,
                    n,
                    cols,
                    1,
                    k as isize,
                    dy,
                    n as isize,
                    1,
                    1.0,
                    w_acc[0].values_mut(),
                );
                let db = b_acc[0].values_mut();
                for row in dy.chunks_exact(n) {
                    for (b, g) in db.iter_mut().zip(row) {
                        *b += g;
                    }
                }
            }
            // dcols = dy * W^T
            let mut dcols = vec![0.0; p * k];
            gemm(
                p,
                n,
                k,
                dy,
                n as isize,
                1,
                params[0].values(),
                1,
                n as isize,
                0.0,
                &mut dcols,
            );
            let mut dx = vec![0.0; x.len()];
            col2im_add(&dcols, in_shape, *kernel, &mut dx);
            dx
        }
        LayerSpec::Maxpool2d { .. } => {
            let idx = match aux {
                Aux::PoolIndex(i) => i,
                _ => unreachable!("pool cache holds argmax indices"),
            };
            let mut dx = vec![0.0; x.len()];
            for (&i, &g) in idx.iter().zip(dy) {
                dx[i] += g;
            }
            dx
        }
        LayerSpec::Dense { units } => {
            let weights = params[0].values();
            let n_in = x.len();
            if let Some(acc) = acc {
                let (w_acc, b_acc) = acc.split_at_mut(1);
                let dw = w_acc[0].values_mut();
                for o in 0..*units {
                    let g = dy[o];
                    if g != 0.0 {
                        for (d, v) in dw[o * n_in..(o + 1) * n_in].iter_mut().zip(x) {
                            *d += g * v;
                        }
                    }
                }
                for (b, g) in b_acc[0].values_mut().iter_mut().zip(dy) {
                    *b += g;
                }
            }
            let mut dx = vec![0.0; n_in];
            for o in 0..*units {
                let g = dy[o];
                if g != 0.0 {
                    for (d, w) in dx.iter_mut().zip(&weights[o * n_in..(o + 1) * n_in]) {
                        *d += g * w;
                    }
                }
            }
            dx
        }
        LayerSpec::Flatten | LayerSpec::Linear => dy.to_vec(),
        LayerSpec::Relu => x
            .iter()
            .zip(dy)
            .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
            .collect(),
        LayerSpec::Selu => x.iter().zip(dy).map(|(&v, &g)| g * selu_grad(v)).collect(),
        LayerSpec::Softmax => {
            let c = *in_shape.last().unwrap();
            let mut dx = vec![0.0; x.len()];
            for ((out, probs), grad) in dx
                .chunks_exact_mut(c)
                .zip(y.chunks_exact(c))
                .zip(dy.chunks_exact(c))
            {
                let dot: f64 = probs.iter().zip(grad).map(|(p, g)| p * g).sum();
                for ((o, p), g) in out.iter_mut().zip(probs).zip(grad) {
                    *o = p * (g - dot);
                }
            }
            dx
        }
    }
}
