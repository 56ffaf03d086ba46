use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::FusionError;

/// `mask(query_row, key_row)` is true when the query may attend to the key.
pub type AttentionMask<'a> = &'a (dyn Fn(usize, usize) -> bool + Sync);

/// Multi-head attention weights. Inputs are row vectors of width `dim`; every projection
/// is a right-multiplied `dim x dim` matrix. Head `h` reads columns `h*dh .. (h+1)*dh`
/// of the projected rows, `dh = dim / heads`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    heads: usize,
    dim: usize,
    w_q: DMatrix<f64>,
    w_k: DMatrix<f64>,
    w_v: DMatrix<f64>,
    w_o: DMatrix<f64>,
}

impl AttentionParams {
    pub fn new(
        heads: usize,
        w_q: DMatrix<f64>,
        w_k: DMatrix<f64>,
        w_v: DMatrix<f64>,
        w_o: DMatrix<f64>,
    ) -> Result<Self, FusionError> {
        let dim = w_q.nrows();
        if dim == 0 || heads == 0 || !dim.is_multiple_of(heads) {
            return Err(FusionError::Shape(format!(
                "{heads} heads do not divide model width {dim}"
            )));
        }
        for (name, w) in [("query", &w_q), ("key", &w_k), ("value", &w_v), ("output", &w_o)] {
            if w.shape() != (dim, dim) {
                return Err(FusionError::Shape(format!(
                    "{name} projection is {:?}, expected ({dim}, {dim})",
                    w.shape()
                )));
            }
            if !w.iter().all(|v| v.is_finite()) {
                return Err(FusionError::NonFinite(format!("{name} projection")));
            }
        }
        Ok(Self {
            heads,
            dim,
            w_q,
            w_k,
            w_v,
            w_o,
        })
    }

    pub fn identity(dim: usize, heads: usize) -> Result<Self, FusionError> {
        let i = DMatrix::identity(dim, dim);
        Self::new(heads, i.clone(), i.clone(), i.clone(), i)
    }

    /// Gaussian projections with standard deviation `1 / sqrt(dim)`.
    pub fn random(dim: usize, heads: usize, seed: u64) -> Result<Self, FusionError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = || random_matrix(&mut rng, dim, dim);
        let (q, k, v, o) = (draw(), draw(), draw(), draw());
        Self::new(heads, q, k, v, o)
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }
}

pub(crate) fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    let normal = Normal::new(0.0, 1.0 / (rows.max(1) as f64).sqrt()).expect("positive std");
    DMatrix::from_fn(rows, cols, |_, _| normal.sample(rng))
}

/// Row-by-row `x * w` with a fixed summation order, so a row's result does not depend on
/// how many other rows share the call.
pub(crate) fn project_rows(x: &DMatrix<f64>, w: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(x.nrows(), w.ncols());
    for i in 0..x.nrows() {
        for j in 0..w.ncols() {
            let mut acc = 0.0;
            for k in 0..x.ncols() {
                acc += x[(i, k)] * w[(k, j)];
            }
            out[(i, j)] = acc;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput {
    pub output: DMatrix<f64>,
    /// One `queries x keys` matrix per head; masked entries hold exactly zero.
    pub weights: Vec<DMatrix<f64>>,
    /// Query rows with no admissible key; their output is zero.
    pub empty_rows: Vec<usize>,
}

/// Scaled dot-product multi-head attention.
///
/// Masked keys are skipped outright, so they carry zero weight and cannot influence the
/// row at all. Rows are computed independently and in parallel.
pub fn mha(
    queries: &DMatrix<f64>,
    keys: &DMatrix<f64>,
    values: &DMatrix<f64>,
    mask: Option<AttentionMask<'_>>,
    params: &AttentionParams,
) -> Result<AttentionOutput, FusionError> {
    let d = params.dim;
    if queries.ncols() != d || keys.ncols() != d || values.ncols() != d {
        return Err(FusionError::Shape(format!(
            "attention inputs have widths {}, {}, {}; model width is {d}",
            queries.ncols(),
            keys.ncols(),
            values.ncols()
        )));
    }
    if keys.nrows() != values.nrows() {
        return Err(FusionError::Shape(format!(
            "{} keys but {} values",
            keys.nrows(),
            values.nrows()
        )));
    }
    let q = project_rows(queries, &params.w_q);
    let k = project_rows(keys, &params.w_k);
    let v = project_rows(values, &params.w_v);
    let (nq, nk, dh) = (queries.nrows(), keys.nrows(), params.head_dim());
    let scale = 1.0 / (dh as f64).sqrt();

    let rows: Vec<(Vec<f64>, Vec<Vec<f64>>, bool)> = (0..nq)
        .into_par_iter()
        .map(|i| {
            let allowed: Vec<usize> = (0..nk).filter(|&j| mask.is_none_or(|m| m(i, j))).collect();
            let mut concat = vec![0.0; d];
            let mut head_weights = vec![vec![0.0; nk]; params.heads];
            if allowed.is_empty() {
                return (concat, head_weights, true);
            }
            let mut scores = vec![0.0; allowed.len()];
            for (h, weights) in head_weights.iter_mut().enumerate() {
                let cols = h * dh..(h + 1) * dh;
                for (s, &j) in scores.iter_mut().zip(&allowed) {
                    *s = cols.clone().map(|c| q[(i, c)] * k[(j, c)]).sum::<f64>() * scale;
                }
                let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let exp: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
                let total: f64 = exp.iter().sum();
                for (e, &j) in exp.iter().zip(&allowed) {
                    weights[j] = e / total;
                }
                for c in cols {
                    concat[c] = allowed.iter().map(|&j| weights[j] * v[(j, c)]).sum();
                }
            }
            let out = (0..d)
                .map(|j| (0..d).map(|c| concat[c] * params.w_o[(c, j)]).sum())
                .collect();
            (out, head_weights, false)
        })
        .collect();

    let mut output = DMatrix::zeros(nq, d);
    let mut weights = vec![DMatrix::zeros(nq, nk); params.heads];
    let mut empty_rows = Vec::new();
    for (i, (out, hw, empty)) in rows.into_iter().enumerate() {
        if empty {
            empty_rows.push(i);
            continue;
        }
        for c in 0..d {
            output[(i, c)] = out[c];
        }
        for (h, w) in hw.into_iter().enumerate() {
            for j in 0..nk {
                weights[h][(i, j)] = w[j];
            }
        }
    }
    Ok(AttentionOutput {
        output,
        weights,
        empty_rows,
    })
}

/// Position-wise `y + relu(y W1) W2`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedForward {
    w1: DMatrix<f64>,
    w2: DMatrix<f64>,
}

impl FeedForward {
    pub fn new(w1: DMatrix<f64>, w2: DMatrix<f64>) -> Result<Self, FusionError> {
        if w1.ncols() != w2.nrows() || w1.nrows() != w2.ncols() {
            return Err(FusionError::Shape(format!(
                "feed-forward shapes {:?} and {:?} do not chain",
                w1.shape(),
                w2.shape()
            )));
        }
        Ok(Self { w1, w2 })
    }

    pub fn random(dim: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w1 = random_matrix(&mut rng, dim, hidden);
        let w2 = random_matrix(&mut rng, hidden, dim);
        Self { w1, w2 }
    }

    pub fn apply(&self, y: &mut [f64]) {
        let hidden: Vec<f64> = (0..self.w1.ncols())
            .map(|j| {
                y.iter()
                    .enumerate()
                    .map(|(k, v)| v * self.w1[(k, j)])
                    .sum::<f64>()
                    .max(0.0)
            })
            .collect();
        for (j, out) in y.iter_mut().enumerate() {
            *out += hidden.iter().enumerate().map(|(k, h)| h * self.w2[(k, j)]).sum::<f64>();
        }
    }
}

/// Attention followed by an optional residual connection and feed-forward sublayer.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionBlock {
    pub attention: AttentionParams,
    pub residual: bool,
    pub ffn: Option<FeedForward>,
}

impl FusionBlock {
    /// Identity projections, one head, no residual, no feed-forward.
    pub fn plain(dim: usize) -> Result<Self, FusionError> {
        Ok(Self {
            attention: AttentionParams::identity(dim, 1)?,
            residual: false,
            ffn: None,
        })
    }

    /// Seeded projections with residual and a feed-forward sublayer of width `2 * dim`.
    pub fn seeded(dim: usize, heads: usize, seed: u64) -> Result<Self, FusionError> {
        Ok(Self {
            attention: AttentionParams::random(dim, heads, seed)?,
            residual: true,
            ffn: Some(FeedForward::random(dim, 2 * dim, seed.wrapping_add(1))),
        })
    }

    pub fn dim(&self) -> usize {
        self.attention.dim()
    }

    /// Runs attention for `queries`; `base` supplies the residual rows.
    pub(crate) fn forward(
        &self,
        queries: &DMatrix<f64>,
        base: &DMatrix<f64>,
        keys: &DMatrix<f64>,
        values: &DMatrix<f64>,
        mask: Option<AttentionMask<'_>>,
    ) -> Result<AttentionOutput, FusionError> {
        let mut out = mha(queries, keys, values, mask, &self.attention)?;
        for i in 0..out.output.nrows() {
            let mut row: Vec<f64> = out.output.row(i).iter().copied().collect();
            if self.residual {
                row.iter_mut().zip(base.row(i).iter()).for_each(|(y, b)| *y += b);
            }
            if let Some(ffn) = &self.ffn {
                ffn.apply(&mut row);
            }
            for (c, y) in row.into_iter().enumerate() {
                out.output[(i, c)] = y;
            }
        }
        Ok(out)
    }
}
