//! Regularized kernel canonical correlation projections.
//!
//! For one (channel, kernel) pair, training consumes the two camera
//! self-Grams `Kaa` and `Kbb` over row-aligned same-person pairs and
//! solves the regularized eigenproblem
//!
//! ```text
//! (Kaa + kI)^-1 Kbb (Kbb + kI)^-1 Kaa a = l^2 a
//! b = (Kbb + kI)^-1 Kaa a / l
//! ```
//!
//! The unsymmetric product is never formed. With `Ca = Kaa (Kaa + kI)^-1`
//! and `Cb = Kbb (Kbb + kI)^-1` (both symmetric, spectra in [0, 1)), the
//! product above is similar to `Cb^1/2 Ca Cb^1/2`, so one symmetric
//! eigendecomposition of that matrix yields real eigenvalues `l^2` in
//! [0, 1) and the dual weights are recovered through Cholesky solves
//! with the shifted Grams. Gram matrices are centered in feature space
//! before the solve; the centering constants are stored in the model and
//! re-applied to cross-kernel blocks at projection time.
//!
//! Projection maps a raw cross-kernel block `K^GT` (new images against
//! the training set of the matching camera) to `K^GT a` with columns
//! scaled by the canonical correlations, giving more weight to the
//! better-correlated directions. Matching uses plain cosine distances
//! between projected rows.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::descriptor::ChannelId;
use crate::error::{Error, Result};
use crate::kernels::{KernelKind, KernelParams};

/// Eigenvalues below `RANK_TOL * max_eig` count as zero for the kappa = 0
/// rank check.
const RANK_TOL: f64 = 1e-10;

/// Training options for one model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KccaOptions {
    /// Ridge added to each Gram; must be positive unless the Grams are
    /// full-rank.
    pub kappa: f64,
    /// Upper bound on the number of canonical pairs kept.
    pub max_projections: usize,
    /// Canonical correlations below this are discarded.
    pub lambda_min: f64,
}

impl Default for KccaOptions {
    fn default() -> Self {
        KccaOptions {
            kappa: 0.5,
            max_projections: 100,
            lambda_min: 1e-4,
        }
    }
}

/// Feature-space centering constants of one training Gram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelCenterer {
    /// Column means of the training self-Gram.
    pub train_means: Vec<f64>,
    /// Grand mean of the training self-Gram.
    pub grand_mean: f64,
}

impl KernelCenterer {
    /// Fits the centerer on a training self-Gram and returns the centered
    /// matrix alongside it.
    pub fn fit(k: &DMatrix<f64>) -> (DMatrix<f64>, KernelCenterer) {
        let n = k.nrows();
        let means: Vec<f64> = (0..n).map(|j| k.column(j).sum() / n as f64).collect();
        let grand = means.iter().sum::<f64>() / n as f64;
        let mut centered = k.clone();
        for i in 0..n {
            for j in 0..n {
                centered[(i, j)] = k[(i, j)] - means[i] - means[j] + grand;
            }
        }
        (
            centered,
            KernelCenterer {
                train_means: means,
                grand_mean: grand,
            },
        )
    }

    /// Centers a cross-kernel block (rows: new images, columns: the
    /// training set this centerer was fitted on).
    pub fn transform_cross(&self, k_cross: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let n = self.train_means.len();
        if k_cross.ncols() != n {
            return Err(Error::DimensionMismatch {
                context: "cross-kernel columns vs training size",
                left: k_cross.ncols(),
                right: n,
            });
        }
        let mut out = k_cross.clone();
        for i in 0..k_cross.nrows() {
            let row_mean = k_cross.row(i).sum() / n as f64;
            for j in 0..n {
                out[(i, j)] = k_cross[(i, j)] - row_mean - self.train_means[j] + self.grand_mean;
            }
        }
        Ok(out)
    }
}

/// Which projection a set of images takes: camera a trains the `alpha`
/// weights and hosts the gallery in the canonical orientation, camera b
/// trains `beta` and hosts the probe. Protocols that probe with camera a
/// still project camera-a images with `Gallery`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionSide {
    Gallery,
    Probe,
}

/// A trained projection for one (channel, kernel) pair.
#[derive(Debug, Clone)]
pub struct KccaModel {
    /// Dual weights for camera a, one column per canonical pair.
    pub alpha: DMatrix<f64>,
    /// Dual weights for camera b.
    pub beta: DMatrix<f64>,
    /// Canonical correlations, sorted non-increasing, in (0, 1 + 1e-6].
    pub lambda: DVector<f64>,
    pub kappa: f64,
    pub centerer_a: KernelCenterer,
    pub centerer_b: KernelCenterer,
    /// Channel and kernel this model was trained for; attached by the
    /// pipeline.
    pub channel: Option<ChannelId>,
    pub kind: Option<KernelKind>,
    pub params: KernelParams,
    /// Image ids of the training descriptors per camera.
    pub train_ref_a: Vec<String>,
    pub train_ref_b: Vec<String>,
    /// Hash of the training descriptor sets, validated on load.
    pub train_hash: String,
}

impl KccaModel {
    /// Number of training samples.
    pub fn train_size(&self) -> usize {
        self.alpha.nrows()
    }

    /// Number of canonical pairs kept.
    pub fn projection_count(&self) -> usize {
        self.alpha.ncols()
    }

    pub fn tagged(
        mut self,
        channel: ChannelId,
        kind: KernelKind,
        params: KernelParams,
    ) -> KccaModel {
        self.channel = Some(channel);
        self.kind = Some(kind);
        self.params = params;
        self
    }
}

/// Projected features for one image set: one row per image.
#[derive(Debug, Clone)]
pub struct ProjectedFeatures {
    pub rows: DMatrix<f64>,
    pub side: ProjectionSide,
}

/// Cosine distances between probe rows and gallery rows, all in [0, 2].
#[derive(Debug, Clone)]
pub struct DistanceMatrix {
    /// probes x gallery entries.
    pub values: DMatrix<f64>,
    pub channel: Option<ChannelId>,
    pub kind: Option<KernelKind>,
}

fn symmetric_eigen(m: DMatrix<f64>, what: &'static str) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let eig = nalgebra::SymmetricEigen::try_new(m, 1e-13, 100_000)
        .ok_or(Error::NonFinite("symmetric eigensolver did not converge"))?;
    if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(what));
    }
    Ok((eig.eigenvectors, eig.eigenvalues))
}

/// Applies a spectral function through an eigendecomposition:
/// `U f(d) U'`.
fn spectral_map(u: &DMatrix<f64>, d: &DVector<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let mut scaled = u.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= f(d[j]);
    }
    &scaled * u.transpose()
}

/// Trains one model from the two camera self-Grams.
///
/// `kaa` and `kbb` are raw n x n self-Grams over row-aligned same-person
/// training pairs. Returns the top canonical pairs with columns scaled so
/// every projected training variate has unit norm.
pub fn train_kcca(kaa: &DMatrix<f64>, kbb: &DMatrix<f64>, opts: &KccaOptions) -> Result<KccaModel> {
    let n = kaa.nrows();
    if kaa.ncols() != n || kbb.nrows() != kbb.ncols() {
        return Err(Error::ShapeMismatch("self-Grams must be square".into()));
    }
    if kbb.nrows() != n {
        return Err(Error::DimensionMismatch {
            context: "camera Gram sizes",
            left: n,
            right: kbb.nrows(),
        });
    }
    if n < 2 {
        return Err(Error::TooFewIdentities {
            required: 2,
            actual: n,
        });
    }
    if opts.kappa < 0.0 {
        return Err(Error::Config(format!(
            "kappa must be nonnegative, got {}",
            opts.kappa
        )));
    }

    let (ka, centerer_a) = KernelCenterer::fit(kaa);
    let (kb, centerer_b) = KernelCenterer::fit(kbb);

    let (ua, mut da) = symmetric_eigen(ka.clone(), "camera-a Gram eigenvalues")?;
    let (ub, mut db) = symmetric_eigen(kb.clone(), "camera-b Gram eigenvalues")?;
    da.iter_mut().for_each(|v| *v = v.max(0.0));
    db.iter_mut().for_each(|v| *v = v.max(0.0));

    let kappa = opts.kappa;
    if kappa == 0.0 {
        let deficient = |d: &DVector<f64>| {
            let max = d.max();
            max <= 0.0 || d.min() <= RANK_TOL * max
        };
        if deficient(&da) || deficient(&db) {
            return Err(Error::SingularSystem);
        }
    }

    // Shrinkage spectra: f(d) = d / (d + kappa), in [0, 1).
    let ca = spectral_map(&ua, &da, |d| d / (d + kappa));
    let cb_half = spectral_map(&ub, &db, |d| (d / (d + kappa)).sqrt());

    let mut t = &cb_half * &ca * &cb_half;
    // Symmetrize away round-off before the eigensolve.
    t = (&t + t.transpose()) * 0.5;
    let (w, s) = symmetric_eigen(t, "canonical correlation eigenvalues")?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| s[j].partial_cmp(&s[i]).unwrap());
    let m_cap = opts.max_projections.min(n);
    let selected: Vec<usize> = order
        .into_iter()
        .take(m_cap)
        .filter(|&i| s[i].max(0.0).sqrt() >= opts.lambda_min)
        .collect();
    if selected.is_empty() {
        return Err(Error::NonFinite(
            "no canonical correlation above the discard threshold",
        ));
    }

    let mut w_sel = DMatrix::zeros(n, selected.len());
    let mut lambda = DVector::zeros(selected.len());
    for (c, &i) in selected.iter().enumerate() {
        w_sel.set_column(c, &w.column(i));
        lambda[c] = s[i].max(0.0).sqrt();
    }

    let ra = &ka + DMatrix::identity(n, n) * kappa;
    let rb = &kb + DMatrix::identity(n, n) * kappa;
    let chol_a = nalgebra::Cholesky::new(ra).ok_or(Error::SingularSystem)?;
    let chol_b = nalgebra::Cholesky::new(rb).ok_or(Error::SingularSystem)?;

    // alpha = (Ka + kI)^-1 Cb^1/2 w, beta = (Kb + kI)^-1 Ka alpha / l.
    let mut alpha = chol_a.solve(&(&cb_half * &w_sel));
    let mut beta = chol_b.solve(&(&ka * &alpha));
    for (c, mut col) in beta.column_iter_mut().enumerate() {
        col /= lambda[c];
    }

    // Rescale so projected training variates have unit norm; drop any
    // numerically dead direction.
    let mut keep = Vec::new();
    let proj_a = &ka * &alpha;
    let proj_b = &kb * &beta;
    for c in 0..alpha.ncols() {
        let na = proj_a.column(c).norm();
        let nb = proj_b.column(c).norm();
        if na > 1e-12 && nb > 1e-12 {
            alpha.column_mut(c).scale_mut(1.0 / na);
            beta.column_mut(c).scale_mut(1.0 / nb);
            keep.push(c);
        }
    }
    if keep.is_empty() {
        return Err(Error::NonFinite("all canonical directions degenerate"));
    }
    let alpha = alpha.select_columns(&keep);
    let beta = beta.select_columns(&keep);
    let lambda = DVector::from_iterator(keep.len(), keep.iter().map(|&c| lambda[c]));

    if alpha.iter().chain(beta.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("non-finite projection weights"));
    }

    Ok(KccaModel {
        alpha,
        beta,
        lambda,
        kappa,
        centerer_a,
        centerer_b,
        channel: None,
        kind: None,
        params: KernelParams::default(),
        train_ref_a: Vec::new(),
        train_ref_b: Vec::new(),
        train_hash: String::new(),
    })
}

/// Projects a raw cross-kernel block (k rows of new images against the n
/// training images of the side's camera) into the canonical space, with
/// columns scaled by the canonical correlations.
pub fn project(
    model: &KccaModel,
    k_cross: &DMatrix<f64>,
    side: ProjectionSide,
) -> Result<ProjectedFeatures> {
    let (weights, centerer) = match side {
        ProjectionSide::Gallery => (&model.alpha, &model.centerer_a),
        ProjectionSide::Probe => (&model.beta, &model.centerer_b),
    };
    if k_cross.ncols() != weights.nrows() {
        return Err(Error::DimensionMismatch {
            context: "cross-kernel columns vs training size",
            left: k_cross.ncols(),
            right: weights.nrows(),
        });
    }
    let centered = centerer.transform_cross(k_cross)?;
    let mut rows = centered * weights;
    for (c, mut col) in rows.column_iter_mut().enumerate() {
        col *= model.lambda[c];
    }
    Ok(ProjectedFeatures { rows, side })
}

/// Cosine distance matrix between probe and gallery projections: entry
/// (i, j) is `1 - <p_i, g_j> / (|p_i| |g_j|)`. A zero vector is at
/// distance 1 from everything.
pub fn cosine_distances(
    gallery: &ProjectedFeatures,
    probe: &ProjectedFeatures,
) -> Result<DistanceMatrix> {
    if gallery.rows.ncols() != probe.rows.ncols() {
        return Err(Error::DimensionMismatch {
            context: "projection widths",
            left: gallery.rows.ncols(),
            right: probe.rows.ncols(),
        });
    }
    let g_norms: Vec<f64> = (0..gallery.rows.nrows())
        .map(|i| gallery.rows.row(i).norm())
        .collect();
    let p_norms: Vec<f64> = (0..probe.rows.nrows())
        .map(|i| probe.rows.row(i).norm())
        .collect();
    let mut values = DMatrix::zeros(probe.rows.nrows(), gallery.rows.nrows());
    for i in 0..probe.rows.nrows() {
        for j in 0..gallery.rows.nrows() {
            let d = if p_norms[i] == 0.0 || g_norms[j] == 0.0 {
                1.0
            } else {
                1.0 - probe.rows.row(i).dot(&gallery.rows.row(j)) / (p_norms[i] * g_norms[j])
            };
            values[(i, j)] = d.clamp(0.0, 2.0);
        }
    }
    Ok(DistanceMatrix {
        values,
        channel: None,
        kind: None,
    })
}

/// Serialized model layout; matrices are stored column-major.
#[derive(Debug, Serialize, Deserialize)]
pub struct KccaModelFile {
    pub schema: u32,
    pub channel: Option<ChannelId>,
    pub kind: Option<KernelKind>,
    pub gamma: f64,
    pub kappa: f64,
    pub train_size: usize,
    pub projections: usize,
    pub lambda: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub center_a_means: Vec<f64>,
    pub center_a_grand: f64,
    pub center_b_means: Vec<f64>,
    pub center_b_grand: f64,
    pub train_ref_a: Vec<String>,
    pub train_ref_b: Vec<String>,
    pub train_hash: String,
    pub config_hash: String,
}

pub const MODEL_SCHEMA: u32 = 1;

/// Writes a model to a JSON file, embedding the producing config hash.
pub fn save_model(path: &std::path::Path, model: &KccaModel, config_hash: &str) -> Result<()> {
    let file = KccaModelFile {
        schema: MODEL_SCHEMA,
        channel: model.channel,
        kind: model.kind,
        gamma: model.params.gamma,
        kappa: model.kappa,
        train_size: model.train_size(),
        projections: model.projection_count(),
        lambda: model.lambda.iter().copied().collect(),
        alpha: model.alpha.as_slice().to_vec(),
        beta: model.beta.as_slice().to_vec(),
        center_a_means: model.centerer_a.train_means.clone(),
        center_a_grand: model.centerer_a.grand_mean,
        center_b_means: model.centerer_b.train_means.clone(),
        center_b_grand: model.centerer_b.grand_mean,
        train_ref_a: model.train_ref_a.clone(),
        train_ref_b: model.train_ref_b.clone(),
        train_hash: model.train_hash.clone(),
        config_hash: config_hash.to_string(),
    };
    let json = serde_json::to_string(&file)
        .map_err(|e| Error::Config(format!("model serialization failed: {e}")))?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

/// Loads a model, validating the stored config hash and, when provided,
/// the training-set hash.
pub fn load_model(
    path: &std::path::Path,
    expected_config_hash: &str,
    expected_train_hash: Option<&str>,
) -> Result<KccaModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: KccaModelFile = serde_json::from_str(&text).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    if file.config_hash != expected_config_hash {
        return Err(Error::HashMismatch {
            path: path.to_path_buf(),
            expected: expected_config_hash.to_string(),
            found: file.config_hash,
        });
    }
    if let Some(expected) = expected_train_hash {
        if file.train_hash != expected {
            return Err(Error::HashMismatch {
                path: path.to_path_buf(),
                expected: expected.to_string(),
                found: file.train_hash,
            });
        }
    }
    let (n, m) = (file.train_size, file.projections);
    if file.alpha.len() != n * m || file.beta.len() != n * m || file.lambda.len() != m {
        return Err(Error::Decode {
            path: path.to_path_buf(),
            reason: "inconsistent matrix dimensions in model file".into(),
        });
    }
    Ok(KccaModel {
        alpha: DMatrix::from_column_slice(n, m, &file.alpha),
        beta: DMatrix::from_column_slice(n, m, &file.beta),
        lambda: DVector::from_vec(file.lambda),
        kappa: file.kappa,
        centerer_a: KernelCenterer {
            train_means: file.center_a_means,
            grand_mean: file.center_a_grand,
        },
        centerer_b: KernelCenterer {
            train_means: file.center_b_means,
            grand_mean: file.center_b_grand,
        },
        channel: file.channel,
        kind: file.kind,
        params: KernelParams { gamma: file.gamma },
        train_ref_a: file.train_ref_a,
        train_ref_b: file.train_ref_b,
        train_hash: file.train_hash,
    })
}
