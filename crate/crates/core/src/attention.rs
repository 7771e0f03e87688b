//! Attention formulations over flattened `n×c` feature matrices.
//!
//! | function                        | affinity             | order            | MACs            |
//! |---------------------------------|----------------------|------------------|-----------------|
//! | [`softmax_attention`]           | `softmax(Q·Kᵀ)`      | `(QKᵀ)·V`        | `n²(c′+c)`      |
//! | [`cosine_attention_quadratic`]  | `(1/n) Q̂·K̂ᵀ`        | `(Q̂K̂ᵀ)·V`      | `n²(c′+c)`      |
//! | [`fast_attention`]              | `(1/n) Q̂·K̂ᵀ`        | `Q̂·(K̂ᵀV)`      | `2·n·c′·c`      |
//! | [`dot_attention_unnormalized`]  | `(1/n) Q·Kᵀ`         | `Q·(KᵀV)`        | `2·n·c′·c`      |
//!
//! `Q̂`, `K̂` are `Q`, `K` with each row divided by `max(‖row‖₂, eps)`. A row
//! whose norm falls below `eps` therefore never divides by zero, and an
//! all-zero row contributes zero affinity.

use crate::error::{Error, Result};
use crate::tensor::{Matrix, Real};

/// Validated `(Q, K, V)` triple: `Q`, `K` are `n×c′`, `V` is `n×c`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionInputs<T: Real = f64> {
    query: Matrix<T>,
    key: Matrix<T>,
    value: Matrix<T>,
    eps: T,
}

impl<T: Real> AttentionInputs<T> {
    pub fn new(query: Matrix<T>, key: Matrix<T>, value: Matrix<T>) -> Result<Self> {
        let n = query.rows();
        if key.rows() != n || value.rows() != n {
            return Err(Error::shape(
                "AttentionInputs",
                format!("query, key and value with {n} rows"),
                format!(
                    "query {}x{}, key {}x{}, value {}x{}",
                    query.rows(),
                    query.cols(),
                    key.rows(),
                    key.cols(),
                    value.rows(),
                    value.cols()
                ),
            ));
        }
        if key.cols() != query.cols() {
            return Err(Error::shape(
                "AttentionInputs",
                format!("key with {} columns (c′ of query)", query.cols()),
                format!("key with {} columns", key.cols()),
            ));
        }
        Ok(Self {
            query,
            key,
            value,
            eps: T::DEFAULT_EPS,
        })
    }

    /// Overrides the normalization guard (default `T::DEFAULT_EPS`).
    pub fn with_eps(mut self, eps: T) -> Self {
        assert!(eps > T::zero(), "eps must be positive");
        self.eps = eps;
        self
    }

    pub fn query(&self) -> &Matrix<T> {
        &self.query
    }

    pub fn key(&self) -> &Matrix<T> {
        &self.key
    }

    pub fn value(&self) -> &Matrix<T> {
        &self.value
    }

    pub fn eps(&self) -> T {
        self.eps
    }

    /// `n`, the number of spatial positions.
    pub fn spatial_size(&self) -> usize {
        self.query.rows()
    }

    /// `c′`.
    pub fn attention_channels(&self) -> usize {
        self.query.cols()
    }

    /// `c`.
    pub fn value_channels(&self) -> usize {
        self.value.cols()
    }

    fn inv_n(&self) -> T {
        T::one() / T::from_usize(self.spatial_size()).expect("n fits in a float")
    }

    fn normalized_query(&self) -> Matrix<T> {
        self.query.l2_normalize_rows(self.eps)
    }

    fn normalized_key(&self) -> Matrix<T> {
        self.key.l2_normalize_rows(self.eps)
    }
}

fn mm<T: Real>(a: &Matrix<T>, b: &Matrix<T>) -> Matrix<T> {
    a.matmul(b).expect("shapes validated by AttentionInputs")
}

/// `softmax(Q·Kᵀ)·V`, materializing the `n×n` affinity.
pub fn softmax_attention<T: Real>(inputs: &AttentionInputs<T>) -> Matrix<T> {
    let logits = mm(&inputs.query, &inputs.key.transpose());
    mm(&logits.softmax_rows(), &inputs.value)
}

/// The `n×n` cosine affinity `Q̂·K̂ᵀ` (without the `1/n` factor).
///
/// Only the quadratic path builds this; it is exposed so boundedness can be
/// checked directly.
pub fn cosine_affinity<T: Real>(inputs: &AttentionInputs<T>) -> Matrix<T> {
    mm(&inputs.normalized_query(), &inputs.normalized_key().transpose())
}

/// The `n×n` raw dot-product affinity `Q·Kᵀ`.
pub fn dot_affinity<T: Real>(inputs: &AttentionInputs<T>) -> Matrix<T> {
    mm(&inputs.query, &inputs.key.transpose())
}

/// `(1/n)·(Q̂·K̂ᵀ)·V` evaluated left to right.
pub fn cosine_attention_quadratic<T: Real>(inputs: &AttentionInputs<T>) -> Matrix<T> {
    mm(&cosine_affinity(inputs), &inputs.value).scale(inputs.inv_n())
}

/// `(1/n)·Q̂·(K̂ᵀ·V)`: the `c′×c` context is formed first and no `n×n`
/// matrix is ever built.
pub fn fast_attention<T: Real>(inputs: &AttentionInputs<T>) -> Matrix<T> {
    let context = mm(&inputs.normalized_key().transpose(), &inputs.value);
    mm(&inputs.normalized_query(), &context).scale(inputs.inv_n())
}

/// `(1/n)·Q·(Kᵀ·V)` with no normalization; affinities are unbounded.
pub fn dot_attention_unnormalized<T: Real>(inputs: &AttentionInputs<T>) -> Matrix<T> {
    let context = mm(&inputs.key.transpose(), &inputs.value);
    mm(&inputs.query, &context).scale(inputs.inv_n())
}

/// Gradients of a scalar loss with respect to the inputs of [`fast_attention`].
#[derive(Debug, Clone, PartialEq)]
pub struct FastAttentionGradients<T: Real = f64> {
    pub d_query: Matrix<T>,
    pub d_key: Matrix<T>,
    pub d_value: Matrix<T>,
}

/// Backward pass of [`fast_attention`] given `∂L/∂Y = upstream`.
///
/// With `G = upstream`:
///
/// ```text
/// ∂L/∂Q̂ = (1/n)·G·(K̂ᵀV)ᵀ
/// ∂L/∂K̂ = (1/n)·V·(GᵀQ̂)
/// ∂L/∂V  = (1/n)·K̂·(Q̂ᵀG)
/// ```
///
/// and each normalized row maps back through `(I − x̂x̂ᵀ)/‖x‖`. Rows with
/// `‖x‖ < eps` get a zero gradient.
pub fn fast_attention_backward<T: Real>(
    inputs: &AttentionInputs<T>,
    upstream: &Matrix<T>,
) -> Result<FastAttentionGradients<T>> {
    let (n, c) = (inputs.spatial_size(), inputs.value_channels());
    if upstream.shape() != (n, c) {
        return Err(Error::shape(
            "fast_attention_backward",
            format!("upstream {n}x{c}"),
            format!("upstream {}x{}", upstream.rows(), upstream.cols()),
        ));
    }
    let inv_n = inputs.inv_n();
    let q_hat = inputs.normalized_query();
    let k_hat = inputs.normalized_key();
    let context = mm(&k_hat.transpose(), &inputs.value);

    let d_q_hat = mm(upstream, &context.transpose()).scale(inv_n);
    let d_k_hat = mm(&inputs.value, &mm(&upstream.transpose(), &q_hat)).scale(inv_n);
    let d_value = mm(&k_hat, &mm(&q_hat.transpose(), upstream)).scale(inv_n);

    Ok(FastAttentionGradients {
        d_query: normalize_rows_backward(&inputs.query, &q_hat, &d_q_hat, inputs.eps),
        d_key: normalize_rows_backward(&inputs.key, &k_hat, &d_k_hat, inputs.eps),
        d_value,
    })
}

fn normalize_rows_backward<T: Real>(
    x: &Matrix<T>,
    x_hat: &Matrix<T>,
    d_x_hat: &Matrix<T>,
    eps: T,
) -> Matrix<T> {
    let norms = x.row_norms();
    let cols = x.cols();
    let mut out = Vec::with_capacity(x.rows() * cols);
    for (i, &norm) in norms.iter().enumerate() {
        if norm < eps {
            out.extend(std::iter::repeat(T::zero()).take(cols));
            continue;
        }
        let (u, g) = (x_hat.row(i), d_x_hat.row(i));
        let proj: T = u.iter().zip(g).map(|(&a, &b)| a * b).sum();
        out.extend(u.iter().zip(g).map(|(&ui, &gi)| (gi - ui * proj) / norm));
    }
    Matrix::from_vec(x.rows(), cols, out).expect("same shape as input")
}
