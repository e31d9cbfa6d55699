//! Gram matrices between descriptor sets under four kernel families.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Denominator guard for the chi-squared families; descriptors contain
/// exact zeros.
pub const CHI2_EPS: f64 = 1e-10;

/// The four kernel families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Linear,
    Rbf,
    Chi2,
    ExpChi2,
}

impl KernelKind {
    pub const ALL: [KernelKind; 4] = [
        KernelKind::Linear,
        KernelKind::Rbf,
        KernelKind::Chi2,
        KernelKind::ExpChi2,
    ];

    pub fn label(self) -> &'static str {
        match self {
            KernelKind::Linear => "linear",
            KernelKind::Rbf => "rbf",
            KernelKind::Chi2 => "chi2",
            KernelKind::ExpChi2 => "expchi2",
        }
    }

    /// Whether this kind uses the gamma bandwidth.
    pub fn uses_gamma(self) -> bool {
        matches!(self, KernelKind::Rbf | KernelKind::ExpChi2)
    }

    /// Whether inputs must be nonnegative.
    pub fn requires_nonnegative(self) -> bool {
        matches!(self, KernelKind::Chi2 | KernelKind::ExpChi2)
    }
}

/// Kernel parameters; only the bandwidth for now.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    /// Bandwidth for Rbf and ExpChi2; ignored for Linear and Chi2.
    pub gamma: f64,
}

impl Default for KernelParams {
    fn default() -> Self {
        KernelParams { gamma: 1.0 }
    }
}

/// A Gram matrix between two descriptor sets under one kernel kind.
#[derive(Debug, Clone)]
pub struct KernelMatrix {
    /// n x m entries, rows indexing the first set.
    pub values: DMatrix<f64>,
    pub kind: KernelKind,
    pub row_set_id: String,
    pub col_set_id: String,
}

fn check_inputs<R: AsRef<[f64]>>(rows: &[R], dim: usize, kind: KernelKind) -> Result<()> {
    for (i, row) in rows.iter().enumerate() {
        let row = row.as_ref();
        if row.len() != dim {
            return Err(Error::DimensionMismatch {
                context: "descriptor length",
                left: row.len(),
                right: dim,
            });
        }
        if kind.requires_nonnegative() {
            if let Some((j, &v)) = row.iter().enumerate().find(|(_, &v)| v < 0.0) {
                return Err(Error::NegativeInput {
                    row: i,
                    col: j,
                    value: v,
                });
            }
        }
    }
    Ok(())
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn sq_euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

/// Chi-squared distance with half-sum denominators and an epsilon guard.
#[inline]
fn chi2_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d / (0.5 * (x + y) + CHI2_EPS)
        })
        .sum()
}

/// Computes the Gram matrix between descriptor sets `x` (n rows) and `y`
/// (m rows) under `kind`.
///
/// Entry (i, j) is the kernel value between `x[i]` and `y[j]`:
/// linear dot product, `exp(-gamma * ||x - y||^2)`, `1 - chi2(x, y)`, or
/// `exp(-gamma * chi2(x, y))`. The chi-squared similarity is written as
/// one minus the distance so self-similarity is 1 and all four kernels
/// share a comparable scale.
pub fn gram<R: AsRef<[f64]>, S: AsRef<[f64]>>(
    x: &[R],
    y: &[S],
    kind: KernelKind,
    params: &KernelParams,
) -> Result<KernelMatrix> {
    let dim = x
        .first()
        .map(|r| r.as_ref().len())
        .or_else(|| y.first().map(|r| r.as_ref().len()))
        .unwrap_or(0);
    check_inputs(x, dim, kind)?;
    check_inputs(y, dim, kind)?;
    if kind.uses_gamma() && !(params.gamma > 0.0) {
        return Err(Error::Config(format!(
            "kernel {} requires gamma > 0, got {}",
            kind.label(),
            params.gamma
        )));
    }

    let (n, m) = (x.len(), y.len());
    let mut values = DMatrix::zeros(n, m);
    for i in 0..n {
        let xi = x[i].as_ref();
        for j in 0..m {
            let yj = y[j].as_ref();
            values[(i, j)] = match kind {
                KernelKind::Linear => dot(xi, yj),
                KernelKind::Rbf => (-params.gamma * sq_euclidean(xi, yj)).exp(),
                KernelKind::Chi2 => 1.0 - chi2_distance(xi, yj),
                KernelKind::ExpChi2 => (-params.gamma * chi2_distance(xi, yj)).exp(),
            };
        }
    }
    Ok(KernelMatrix {
        values,
        kind,
        row_set_id: String::new(),
        col_set_id: String::new(),
    })
}

/// Median-heuristic bandwidth: `gamma = 1 / median(base distance)` over a
/// sample of at most `max_pairs` point pairs (all pairs when the set is
/// small enough). The base distance is the squared Euclidean distance
/// for Rbf and the chi-squared distance for ExpChi2.
pub fn bandwidth_heuristic<R: AsRef<[f64]>>(
    x: &[R],
    kind: KernelKind,
    max_pairs: usize,
    seed: u64,
) -> Result<KernelParams> {
    if !kind.uses_gamma() {
        return Err(Error::Config(format!(
            "kernel {} takes no bandwidth",
            kind.label()
        )));
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::Config(format!(
            "bandwidth heuristic needs at least 2 points, got {n}"
        )));
    }
    let dim = x[0].as_ref().len();
    check_inputs(x, dim, kind)?;

    let base = |a: &[f64], b: &[f64]| match kind {
        KernelKind::Rbf => sq_euclidean(a, b),
        KernelKind::ExpChi2 => chi2_distance(a, b),
        _ => unreachable!(),
    };

    let total_pairs = n * (n - 1) / 2;
    let mut distances = Vec::with_capacity(total_pairs.min(max_pairs));
    if total_pairs <= max_pairs {
        for i in 0..n {
            for j in i + 1..n {
                distances.push(base(x[i].as_ref(), x[j].as_ref()));
            }
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..max_pairs {
            let i = rng.gen_range(0..n);
            let mut j = rng.gen_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            distances.push(base(x[i].as_ref(), x[j].as_ref()));
        }
    }

    distances.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = if distances.len() % 2 == 1 {
        distances[distances.len() / 2]
    } else {
        0.5 * (distances[distances.len() / 2 - 1] + distances[distances.len() / 2])
    };
    if median <= 0.0 {
        return Err(Error::DegenerateSet);
    }
    Ok(KernelParams { gamma: 1.0 / median })
}
