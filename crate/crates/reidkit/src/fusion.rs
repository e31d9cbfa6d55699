//! Late fusion of per-(channel, kernel) distances.
//!
//! Every probe-gallery pair yields one distance per kernel-channel (80 at
//! the full configuration) plus a trailing bias entry fixed at 1. Fusion
//! weights `r` are learned by minimizing
//!
//! ```text
//! 0.5 r'r + C sum_ij log(1 + exp(-y_ij r'd_ij))
//! ```
//!
//! over all cross pairs of a two-fold split of the training identities,
//! with a full-batch Newton solver. The bias weight is regularized like
//! any other entry because the bias enters as a profile coordinate.
//!
//! Match probability is the logistic of `r'd`, so a positive weight on a
//! distance would make far-apart pairs look alike. Iterative filtering
//! refits while dropping every non-bias entry whose weight comes out
//! positive until only nonpositive weights remain.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::descriptor::{ChannelDescriptor, ChannelId};
use crate::error::{Error, Result};
use crate::kcca::{
    cosine_distances, project, train_kcca, DistanceMatrix, KccaModel, KccaOptions,
    ProjectedFeatures, ProjectionSide,
};
use crate::kernels::{bandwidth_heuristic, gram, KernelKind, KernelParams};

/// Iteration cap for the Newton solver.
const NEWTON_MAX_ITER: usize = 100;
/// Convergence threshold on the gradient norm.
const NEWTON_GRAD_TOL: f64 = 1e-6;
/// Hard cap on filtering rounds; each round drops at least one entry.
const FILTER_MAX_ITER: usize = 80;

/// All 20 channel descriptors of one image, in canonical order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonDescriptors {
    /// Image identifier, unique within a dataset (e.g. `cam_a/012_00`).
    pub image_id: String,
    pub person_id: String,
    pub channels: Vec<ChannelDescriptor>,
}

impl PersonDescriptors {
    /// Validates that channels follow the canonical ordering.
    pub fn validate(&self) -> Result<()> {
        let expected = ChannelId::all();
        if self.channels.len() != expected.len() {
            return Err(Error::ShapeMismatch(format!(
                "image {} carries {} channels, expected {}",
                self.image_id,
                self.channels.len(),
                expected.len()
            )));
        }
        for (desc, id) in self.channels.iter().zip(expected) {
            if desc.channel != id {
                return Err(Error::ShapeMismatch(format!(
                    "image {} channel order broken at {}",
                    self.image_id, id
                )));
            }
        }
        Ok(())
    }
}

/// Fixed ordering of profile entries: channels in canonical order, each
/// crossed with the configured kernels, plus one trailing bias slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileLayout {
    pub kernels: Vec<KernelKind>,
    pub entries: Vec<(ChannelId, KernelKind)>,
}

impl ProfileLayout {
    pub fn new(kernels: &[KernelKind]) -> Self {
        let mut entries = Vec::with_capacity(20 * kernels.len());
        for channel in ChannelId::all() {
            for &kind in kernels {
                entries.push((channel, kind));
            }
        }
        ProfileLayout {
            kernels: kernels.to_vec(),
            entries,
        }
    }

    /// Profile length including the bias entry.
    pub fn width(&self) -> usize {
        self.entries.len() + 1
    }

    /// Index of the bias entry (always last).
    pub fn bias_index(&self) -> usize {
        self.entries.len()
    }

    pub fn entry_index(&self, channel: ChannelId, kind: KernelKind) -> Option<usize> {
        let k = self.kernels.iter().position(|&x| x == kind)?;
        Some(channel.index() * self.kernels.len() + k)
    }

    pub fn entry_label(&self, index: usize) -> String {
        if index == self.bias_index() {
            "bias".to_string()
        } else {
            let (channel, kind) = self.entries[index];
            format!("{}:{}", channel.label(), kind.label())
        }
    }
}

/// Stacked distances for one probe-gallery pair plus the bias entry.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceProfile {
    /// Kernel-channel distances followed by a final 1.0.
    pub entries: Vec<f64>,
}

impl DistanceProfile {
    /// Appends the bias entry to a distance vector.
    pub fn new(mut distances: Vec<f64>) -> Self {
        distances.push(1.0);
        DistanceProfile { entries: distances }
    }
}

/// Same-person or different-person pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PairLabel {
    Same,
    Different,
}

impl PairLabel {
    /// +1 for matching pairs, -1 otherwise.
    pub fn sign(self) -> f64 {
        match self {
            PairLabel::Same => 1.0,
            PairLabel::Different => -1.0,
        }
    }
}

/// One filtering round: the entries deactivated after a refit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropEvent {
    pub iteration: usize,
    pub dropped: Vec<usize>,
}

/// Learned fusion weights with the active-entry mask.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionWeights {
    /// Weight vector aligned with the profile layout; inactive entries
    /// hold 0.
    pub r: Vec<f64>,
    /// Bias is always active.
    pub active_mask: Vec<bool>,
    pub c: f64,
    /// Filtering rounds, in order.
    pub history: Vec<DropEvent>,
    /// Newton solver reached the gradient tolerance.
    pub converged: bool,
    /// Filtering hit its round cap with positive weights remaining.
    pub filter_cap_hit: bool,
    /// Objective value after every Newton iteration of the final fit.
    pub objective_trace: Vec<f64>,
}

/// Solver options; `fit_logistic` and `fit_filtered` use the defaults.
#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub c: f64,
    /// Reweight positive pairs by the negative/positive count ratio.
    pub balance_classes: bool,
}

#[inline]
fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// log(1 + exp(u)) without overflow.
#[inline]
fn log1p_exp(u: f64) -> f64 {
    if u > 0.0 {
        u + (-u).exp().ln_1p()
    } else {
        u.exp().ln_1p()
    }
}

fn sample_weights(labels: &[PairLabel], balance: bool) -> Vec<f64> {
    if !balance {
        return vec![1.0; labels.len()];
    }
    let pos = labels.iter().filter(|l| **l == PairLabel::Same).count();
    let neg = labels.len() - pos;
    let w_pos = if pos > 0 { neg as f64 / pos as f64 } else { 1.0 };
    labels
        .iter()
        .map(|l| if *l == PairLabel::Same { w_pos } else { 1.0 })
        .collect()
}

/// Value of the regularized logistic objective at `r` (full width).
pub fn logistic_objective(
    r: &[f64],
    profiles: &[DistanceProfile],
    labels: &[PairLabel],
    opts: &FitOptions,
) -> f64 {
    let weights = sample_weights(labels, opts.balance_classes);
    let reg: f64 = 0.5 * r.iter().map(|v| v * v).sum::<f64>();
    let loss: f64 = profiles
        .iter()
        .zip(labels)
        .zip(&weights)
        .map(|((p, l), w)| {
            let z: f64 = r.iter().zip(&p.entries).map(|(a, b)| a * b).sum();
            w * log1p_exp(-l.sign() * z)
        })
        .sum();
    reg + opts.c * loss
}

/// Analytic gradient of [`logistic_objective`].
pub fn logistic_gradient(
    r: &[f64],
    profiles: &[DistanceProfile],
    labels: &[PairLabel],
    opts: &FitOptions,
) -> Vec<f64> {
    let weights = sample_weights(labels, opts.balance_classes);
    let mut g: Vec<f64> = r.to_vec();
    for ((p, l), w) in profiles.iter().zip(labels).zip(&weights) {
        let y = l.sign();
        let z: f64 = r.iter().zip(&p.entries).map(|(a, b)| a * b).sum();
        let coeff = opts.c * w * (-y) * sigmoid(-y * z);
        for (gi, di) in g.iter_mut().zip(&p.entries) {
            *gi += coeff * di;
        }
    }
    g
}

/// Newton fit over the active coordinates. Returns the full-width weight
/// vector (inactive entries zero), the convergence flag and the
/// per-iteration objective trace.
fn newton_fit(
    profiles: &[DistanceProfile],
    labels: &[PairLabel],
    opts: &FitOptions,
    active: &[bool],
) -> Result<(Vec<f64>, bool, Vec<f64>)> {
    let width = active.len();
    let cols: Vec<usize> = (0..width).filter(|&i| active[i]).collect();
    let k = cols.len();
    let n = profiles.len();
    let weights = sample_weights(labels, opts.balance_classes);

    // Reduced design matrix, one row per pair.
    let mut design = DMatrix::zeros(n, k);
    for (i, p) in profiles.iter().enumerate() {
        for (j, &c) in cols.iter().enumerate() {
            design[(i, j)] = p.entries[c];
        }
    }
    let signs: Vec<f64> = labels.iter().map(|l| l.sign()).collect();

    let objective = |r: &DVector<f64>| -> f64 {
        let z = &design * r;
        let mut loss = 0.0;
        for i in 0..n {
            loss += weights[i] * log1p_exp(-signs[i] * z[i]);
        }
        0.5 * r.dot(r) + opts.c * loss
    };

    let mut r = DVector::zeros(k);
    let mut trace = Vec::new();
    let mut converged = false;
    let mut f_cur = objective(&r);
    trace.push(f_cur);

    for _ in 0..NEWTON_MAX_ITER {
        let z = &design * &r;
        let mut grad = r.clone();
        let mut curv = vec![0.0; n];
        for i in 0..n {
            let s = sigmoid(-signs[i] * z[i]);
            let coeff = opts.c * weights[i] * (-signs[i]) * s;
            for j in 0..k {
                grad[j] += coeff * design[(i, j)];
            }
            curv[i] = opts.c * weights[i] * s * (1.0 - s);
        }
        if grad.norm() <= NEWTON_GRAD_TOL {
            converged = true;
            break;
        }

        let mut hess = DMatrix::identity(k, k);
        for i in 0..n {
            if curv[i] == 0.0 {
                continue;
            }
            for a in 0..k {
                let da = design[(i, a)];
                if da == 0.0 {
                    continue;
                }
                for b in a..k {
                    hess[(a, b)] += curv[i] * da * design[(i, b)];
                }
            }
        }
        for a in 0..k {
            for b in 0..a {
                hess[(a, b)] = hess[(b, a)];
            }
        }

        let chol = nalgebra::Cholesky::new(hess)
            .ok_or(Error::NonFinite("logistic Hessian not positive definite"))?;
        let step = chol.solve(&(-&grad));

        // Backtracking line search; the Hessian is positive definite so
        // the direction always descends.
        let slope = grad.dot(&step);
        let mut t = 1.0;
        let mut accepted = false;
        while t >= 1e-12 {
            let cand = &r + &step * t;
            let f_new = objective(&cand);
            if f_new <= f_cur + 1e-4 * t * slope {
                r = cand;
                f_cur = f_new;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        trace.push(f_cur);
        if !accepted {
            break;
        }
    }

    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("non-finite fusion weights"));
    }

    let mut full = vec![0.0; width];
    for (j, &c) in cols.iter().enumerate() {
        full[c] = r[j];
    }
    Ok((full, converged, trace))
}

fn validate_fit_inputs(
    profiles: &[DistanceProfile],
    labels: &[PairLabel],
    opts: &FitOptions,
) -> Result<usize> {
    if profiles.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} profiles vs {} labels",
            profiles.len(),
            labels.len()
        )));
    }
    let width = profiles
        .first()
        .map(|p| p.entries.len())
        .ok_or_else(|| Error::Config("no training profiles".into()))?;
    if profiles.iter().any(|p| p.entries.len() != width) {
        return Err(Error::ShapeMismatch("ragged profile widths".into()));
    }
    if !labels.contains(&PairLabel::Same) || !labels.contains(&PairLabel::Different) {
        return Err(Error::Config(
            "training profiles must contain both matching and non-matching pairs".into(),
        ));
    }
    if opts.c < 0.0 {
        return Err(Error::Config(format!("C must be nonnegative, got {}", opts.c)));
    }
    Ok(width)
}

/// Single logistic fit over all entries; no filtering.
pub fn fit_logistic(
    profiles: &[DistanceProfile],
    labels: &[PairLabel],
    c: f64,
) -> Result<FusionWeights> {
    fit_logistic_opts(profiles, labels, &FitOptions { c, balance_classes: false })
}

pub fn fit_logistic_opts(
    profiles: &[DistanceProfile],
    labels: &[PairLabel],
    opts: &FitOptions,
) -> Result<FusionWeights> {
    let width = validate_fit_inputs(profiles, labels, opts)?;
    let active = vec![true; width];
    let (r, converged, trace) = newton_fit(profiles, labels, opts, &active)?;
    Ok(FusionWeights {
        r,
        active_mask: active,
        c: opts.c,
        history: Vec::new(),
        converged,
        filter_cap_hit: false,
        objective_trace: trace,
    })
}

/// Iteratively refits, dropping every non-bias entry whose weight is
/// strictly positive, until only nonpositive weights remain (weights at
/// exactly zero survive; the bias is never dropped).
pub fn fit_filtered(
    profiles: &[DistanceProfile],
    labels: &[PairLabel],
    c: f64,
) -> Result<FusionWeights> {
    fit_filtered_opts(profiles, labels, &FitOptions { c, balance_classes: false })
}

pub fn fit_filtered_opts(
    profiles: &[DistanceProfile],
    labels: &[PairLabel],
    opts: &FitOptions,
) -> Result<FusionWeights> {
    let width = validate_fit_inputs(profiles, labels, opts)?;
    fit_filtered_masked(profiles, labels, opts, vec![true; width])
}

/// Filtering fit starting from an explicit activity mask; rerunning on a
/// converged mask is a fixed point.
pub fn fit_filtered_masked(
    profiles: &[DistanceProfile],
    labels: &[PairLabel],
    opts: &FitOptions,
    mut active: Vec<bool>,
) -> Result<FusionWeights> {
    let width = validate_fit_inputs(profiles, labels, opts)?;
    if active.len() != width {
        return Err(Error::ShapeMismatch("mask width vs profile width".into()));
    }
    let bias = width - 1;
    active[bias] = true;

    let mut history = Vec::new();
    let mut iteration = 0;
    loop {
        if !active[..bias].iter().any(|&a| a) {
            return Err(Error::AllChannelsDropped);
        }
        let (r, converged, trace) = newton_fit(profiles, labels, opts, &active)?;
        let positives: Vec<usize> = (0..bias)
            .filter(|&i| active[i] && r[i] > 0.0)
            .collect();
        if positives.is_empty() {
            return Ok(FusionWeights {
                r,
                active_mask: active,
                c: opts.c,
                history,
                converged,
                filter_cap_hit: false,
                objective_trace: trace,
            });
        }
        if iteration >= FILTER_MAX_ITER {
            return Ok(FusionWeights {
                r,
                active_mask: active,
                c: opts.c,
                history,
                converged,
                filter_cap_hit: true,
                objective_trace: trace,
            });
        }
        for &i in &positives {
            active[i] = false;
        }
        history.push(DropEvent {
            iteration,
            dropped: positives,
        });
        iteration += 1;
    }
}

/// Probability that the pair described by `d` is a match.
pub fn match_probability(weights: &FusionWeights, d: &DistanceProfile) -> f64 {
    let z: f64 = weights
        .r
        .iter()
        .zip(&weights.active_mask)
        .zip(&d.entries)
        .map(|((r, &a), v)| if a { r * v } else { 0.0 })
        .sum();
    sigmoid(z)
}

/// Gallery indices sorted by descending match probability; ties broken by
/// ascending gallery index.
pub fn rank_gallery(weights: &FusionWeights, probe_profiles: &[DistanceProfile]) -> Vec<usize> {
    let probs: Vec<f64> = probe_profiles
        .iter()
        .map(|p| match_probability(weights, p))
        .collect();
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&i, &j| {
        probs[j]
            .partial_cmp(&probs[i])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });
    order
}

/// Kernel parameters for every layout entry plus the projection options.
#[derive(Debug, Clone)]
pub struct KernelChannelConfig {
    pub layout: ProfileLayout,
    /// Aligned with `layout.entries`.
    pub params: Vec<KernelParams>,
    pub kcca: KccaOptions,
}

impl KernelChannelConfig {
    /// Resolves bandwidths with the median heuristic on the pooled
    /// training descriptors of both cameras; kernels that take no
    /// bandwidth get the default placeholder.
    pub fn with_median_bandwidths(
        train_a: &[PersonDescriptors],
        train_b: &[PersonDescriptors],
        kernels: &[KernelKind],
        kcca: KccaOptions,
        max_pairs: usize,
        seed: u64,
    ) -> Result<KernelChannelConfig> {
        let layout = ProfileLayout::new(kernels);
        let params = layout
            .entries
            .par_iter()
            .map(|&(channel, kind)| {
                if !kind.uses_gamma() {
                    return Ok(KernelParams::default());
                }
                let mut pooled = channel_rows(train_a, channel);
                pooled.extend(channel_rows(train_b, channel));
                let entry_seed = seed
                    .wrapping_mul(0x9e3779b97f4a7c15)
                    .wrapping_add((channel.index() * 8 + kind as usize) as u64);
                bandwidth_heuristic(&pooled, kind, max_pairs, entry_seed)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(KernelChannelConfig {
            layout,
            params,
            kcca,
        })
    }

    /// Fixed bandwidth for every entry.
    pub fn with_fixed_gamma(
        kernels: &[KernelKind],
        gamma: f64,
        kcca: KccaOptions,
    ) -> KernelChannelConfig {
        let layout = ProfileLayout::new(kernels);
        let params = vec![KernelParams { gamma }; layout.entries.len()];
        KernelChannelConfig {
            layout,
            params,
            kcca,
        }
    }
}

/// Borrowed descriptor rows of one channel across an image list.
pub fn channel_rows<'a>(descs: &'a [PersonDescriptors], channel: ChannelId) -> Vec<&'a [f64]> {
    descs
        .iter()
        .map(|d| d.channels[channel.index()].values.as_slice())
        .collect()
}

/// Trains the full bank of (channel, kernel) models on row-aligned
/// same-person training sets. Models come back aligned with
/// `cfg.layout.entries`.
pub fn train_models(
    train_a: &[PersonDescriptors],
    train_b: &[PersonDescriptors],
    cfg: &KernelChannelConfig,
) -> Result<Vec<KccaModel>> {
    if train_a.len() != train_b.len() {
        return Err(Error::ShapeMismatch(format!(
            "training sets must be row-aligned: {} vs {}",
            train_a.len(),
            train_b.len()
        )));
    }
    cfg.layout
        .entries
        .par_iter()
        .zip(&cfg.params)
        .map(|(&(channel, kind), params)| {
            let rows_a = channel_rows(train_a, channel);
            let rows_b = channel_rows(train_b, channel);
            let kaa = gram(&rows_a, &rows_a, kind, params)?.values;
            let kbb = gram(&rows_b, &rows_b, kind, params)?.values;
            let model = train_kcca(&kaa, &kbb, &cfg.kcca)?;
            Ok(model.tagged(channel, kind, *params))
        })
        .collect()
}

/// Projects an image set through every model of a bank. `side` picks the
/// camera-a (alpha) or camera-b (beta) projection; `train` must be the
/// matching camera's training set.
pub fn project_set(
    models: &[KccaModel],
    cfg: &KernelChannelConfig,
    images: &[PersonDescriptors],
    train: &[PersonDescriptors],
    side: ProjectionSide,
) -> Result<Vec<ProjectedFeatures>> {
    models
        .par_iter()
        .enumerate()
        .map(|(e, model)| {
            let (channel, kind) = cfg.layout.entries[e];
            let rows_new = channel_rows(images, channel);
            let rows_train = channel_rows(train, channel);
            let k_cross = gram(&rows_new, &rows_train, kind, &cfg.params[e])?.values;
            project(model, &k_cross, side)
        })
        .collect()
}

/// Cosine distance matrices per layout entry between projected sets.
pub fn distance_stack(
    gallery: &[ProjectedFeatures],
    probe: &[ProjectedFeatures],
) -> Result<Vec<DistanceMatrix>> {
    gallery
        .iter()
        .zip(probe)
        .map(|(g, p)| cosine_distances(g, p))
        .collect()
}

/// Assembles the profile of one (probe, gallery) pair from a distance
/// stack aligned with the layout.
pub fn profile_for_pair(
    stack: &[DistanceMatrix],
    probe_index: usize,
    gallery_index: usize,
) -> DistanceProfile {
    let distances: Vec<f64> = stack
        .iter()
        .map(|dm| dm.values[(probe_index, gallery_index)])
        .collect();
    DistanceProfile::new(distances)
}

/// Builds the labeled training profiles through two-fold cross
/// validation.
///
/// The aligned training identities are split in half in their given
/// order (callers shuffle beforehand when randomization is wanted). For
/// each fold, models are trained on one half and all cross pairs of the
/// held-out half are scored, labeling the aligned pairs as matches.
/// Both folds' samples are pooled.
pub fn build_training_profiles(
    train_a: &[PersonDescriptors],
    train_b: &[PersonDescriptors],
    cfg: &KernelChannelConfig,
) -> Result<(Vec<DistanceProfile>, Vec<PairLabel>)> {
    let n = train_a.len();
    if n != train_b.len() {
        return Err(Error::ShapeMismatch(format!(
            "training sets must be row-aligned: {n} vs {}",
            train_b.len()
        )));
    }
    if n < 4 {
        return Err(Error::TooFewIdentities {
            required: 4,
            actual: n,
        });
    }

    let half = n / 2;
    let folds = [(0..half, half..n), (half..n, 0..half)];
    let mut profiles = Vec::new();
    let mut labels = Vec::new();
    for (fit_range, eval_range) in folds {
        let fit_a = &train_a[fit_range.clone()];
        let fit_b = &train_b[fit_range.clone()];
        let eval_a = &train_a[eval_range.clone()];
        let eval_b = &train_b[eval_range.clone()];

        let models = train_models(fit_a, fit_b, cfg)?;
        let proj_a = project_set(&models, cfg, eval_a, fit_a, ProjectionSide::Gallery)?;
        let proj_b = project_set(&models, cfg, eval_b, fit_b, ProjectionSide::Probe)?;
        let stack = distance_stack(&proj_a, &proj_b)?;

        let m = eval_range.len();
        for i in 0..m {
            for j in 0..m {
                profiles.push(profile_for_pair(&stack, i, j));
                labels.push(if i == j {
                    PairLabel::Same
                } else {
                    PairLabel::Different
                });
            }
        }
    }
    Ok((profiles, labels))
}

/// Serialized fusion weights with the entry index map and drop history.
#[derive(Debug, Serialize, Deserialize)]
pub struct FusionWeightsFile {
    pub schema: u32,
    /// Entry labels in profile order, ending with "bias".
    pub entries: Vec<String>,
    pub weights: Vec<f64>,
    pub active_mask: Vec<bool>,
    pub c: f64,
    pub history: Vec<DropEventFile>,
    pub converged: bool,
    pub filter_cap_hit: bool,
    pub config_hash: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DropEventFile {
    pub iteration: usize,
    pub dropped: Vec<String>,
}

pub const WEIGHTS_SCHEMA: u32 = 1;

pub fn save_weights(
    path: &std::path::Path,
    weights: &FusionWeights,
    layout: &ProfileLayout,
    config_hash: &str,
) -> Result<()> {
    let file = FusionWeightsFile {
        schema: WEIGHTS_SCHEMA,
        entries: (0..layout.width()).map(|i| layout.entry_label(i)).collect(),
        weights: weights.r.clone(),
        active_mask: weights.active_mask.clone(),
        c: weights.c,
        history: weights
            .history
            .iter()
            .map(|e| DropEventFile {
                iteration: e.iteration,
                dropped: e.dropped.iter().map(|&i| layout.entry_label(i)).collect(),
            })
            .collect(),
        converged: weights.converged,
        filter_cap_hit: weights.filter_cap_hit,
        config_hash: config_hash.to_string(),
    };
    let json = serde_json::to_string_pretty(&file)
        .map_err(|e| Error::Config(format!("weights serialization failed: {e}")))?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn load_weights(
    path: &std::path::Path,
    layout: &ProfileLayout,
    expected_config_hash: &str,
) -> Result<FusionWeights> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: FusionWeightsFile = serde_json::from_str(&text).map_err(|e| Error::Decode {
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
    let expected: Vec<String> = (0..layout.width()).map(|i| layout.entry_label(i)).collect();
    if file.entries != expected {
        return Err(Error::Decode {
            path: path.to_path_buf(),
            reason: "weight file entry map does not match the configured layout".into(),
        });
    }
    let label_index = |label: &str| expected.iter().position(|l| l == label);
    let history = file
        .history
        .iter()
        .map(|e| DropEvent {
            iteration: e.iteration,
            dropped: e
                .dropped
                .iter()
                .filter_map(|l| label_index(l))
                .collect(),
        })
        .collect();
    Ok(FusionWeights {
        r: file.weights,
        active_mask: file.active_mask,
        c: file.c,
        history,
        converged: file.converged,
        filter_cap_hit: file.filter_cap_hit,
        objective_trace: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptor::ChannelDescriptor;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn opts(c: f64) -> FitOptions {
        FitOptions {
            c,
            balance_classes: false,
        }
    }

    /// Synthetic descriptors: every channel is a small random histogram
    /// perturbed per identity, so views of the same person correlate.
    fn synthetic_descriptors(
        rng: &mut ChaCha8Rng,
        n: usize,
        dim: usize,
        camera: &str,
        view_noise: f64,
    ) -> Vec<PersonDescriptors> {
        (0..n)
            .map(|i| {
                let mut id_rng = ChaCha8Rng::seed_from_u64(1000 + i as u64);
                let channels = ChannelId::all()
                    .into_iter()
                    .map(|channel| {
                        let mut values: Vec<f64> = (0..dim)
                            .map(|_| id_rng.gen_range(0.0..1.0) + view_noise * rng.gen_range(0.0..1.0))
                            .collect();
                        let sum: f64 = values.iter().sum();
                        values.iter_mut().for_each(|v| *v /= sum);
                        ChannelDescriptor { channel, values }
                    })
                    .collect();
                PersonDescriptors {
                    image_id: format!("{camera}/{i}"),
                    person_id: format!("{i}"),
                    channels,
                }
            })
            .collect()
    }

    fn toy_profiles(
        rng: &mut ChaCha8Rng,
        n_pos: usize,
        n_neg: usize,
        width: usize,
    ) -> (Vec<DistanceProfile>, Vec<PairLabel>) {
        let mut profiles = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..n_pos {
            let d: Vec<f64> = (0..width - 1)
                .map(|_| 0.2 + 0.05 * rng.gen_range(-1.0..1.0))
                .collect();
            profiles.push(DistanceProfile::new(d));
            labels.push(PairLabel::Same);
        }
        for _ in 0..n_neg {
            let d: Vec<f64> = (0..width - 1)
                .map(|_| 0.8 + 0.05 * rng.gen_range(-1.0..1.0))
                .collect();
            profiles.push(DistanceProfile::new(d));
            labels.push(PairLabel::Different);
        }
        (profiles, labels)
    }

    #[test]
    fn layout_indexing_round_trips() {
        let layout = ProfileLayout::new(&KernelKind::ALL);
        assert_eq!(layout.entries.len(), 80);
        assert_eq!(layout.width(), 81);
        for (i, &(channel, kind)) in layout.entries.iter().enumerate() {
            assert_eq!(layout.entry_index(channel, kind), Some(i));
        }
        assert_eq!(layout.entry_label(layout.bias_index()), "bias");

        let linear_only = ProfileLayout::new(&[KernelKind::Linear]);
        assert_eq!(linear_only.width(), 21);
    }

    #[test]
    fn fold_counts_match_for_small_and_large_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = KernelChannelConfig::with_fixed_gamma(
            &[KernelKind::Linear],
            1.0,
            KccaOptions {
                kappa: 0.1,
                max_projections: 10,
                lambda_min: 1e-6,
            },
        );
        let a = synthetic_descriptors(&mut rng, 4, 6, "a", 0.2);
        let b = synthetic_descriptors(&mut rng, 4, 6, "b", 0.2);
        let (profiles, labels) = build_training_profiles(&a, &b, &cfg).unwrap();
        assert_eq!(profiles.len(), 8);
        assert_eq!(labels.iter().filter(|l| **l == PairLabel::Same).count(), 4);
        assert!(profiles.iter().all(|p| p.entries.len() == 21));
        assert!(profiles.iter().all(|p| *p.entries.last().unwrap() == 1.0));

        let a = synthetic_descriptors(&mut rng, 100, 6, "a", 0.2);
        let b = synthetic_descriptors(&mut rng, 100, 6, "b", 0.2);
        let (profiles, labels) = build_training_profiles(&a, &b, &cfg).unwrap();
        assert_eq!(profiles.len(), 5000);
        assert_eq!(
            labels.iter().filter(|l| **l == PairLabel::Same).count(),
            100
        );
    }

    #[test]
    fn too_few_identities_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = KernelChannelConfig::with_fixed_gamma(
            &[KernelKind::Linear],
            1.0,
            KccaOptions::default(),
        );
        let a = synthetic_descriptors(&mut rng, 3, 5, "a", 0.2);
        let b = synthetic_descriptors(&mut rng, 3, 5, "b", 0.2);
        assert!(matches!(
            build_training_profiles(&a, &b, &cfg),
            Err(Error::TooFewIdentities { required: 4, .. })
        ));
    }

    #[test]
    fn profile_entry_order_matches_distance_stack() {
        // Distance stacks are consumed positionally; encode the entry
        // index in the value and check the assembled profile.
        let layout = ProfileLayout::new(&KernelKind::ALL);
        let stack: Vec<DistanceMatrix> = (0..layout.entries.len())
            .map(|e| DistanceMatrix {
                values: DMatrix::from_element(2, 2, e as f64 / 100.0),
                channel: Some(layout.entries[e].0),
                kind: Some(layout.entries[e].1),
            })
            .collect();
        let profile = profile_for_pair(&stack, 1, 0);
        assert_eq!(profile.entries.len(), layout.width());
        for (e, v) in profile.entries[..layout.entries.len()].iter().enumerate() {
            assert_eq!(*v, e as f64 / 100.0);
        }
        assert_eq!(*profile.entries.last().unwrap(), 1.0);
    }

    #[test]
    fn separable_toy_problem_beats_zero_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (profiles, labels) = toy_profiles(&mut rng, 20, 20, 2);
        let w = fit_logistic(&profiles, &labels, 1.0).unwrap();
        assert!(w.converged);
        assert!(w.r.iter().all(|v| v.is_finite()));
        let zero = vec![0.0; 2];
        let f0 = logistic_objective(&zero, &profiles, &labels, &opts(1.0));
        let f1 = logistic_objective(&w.r, &profiles, &labels, &opts(1.0));
        assert!(f1 < f0, "fit {f1} not below zero-weight loss {f0}");
    }

    #[test]
    fn zero_penalty_gives_zero_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (profiles, labels) = toy_profiles(&mut rng, 5, 5, 4);
        let w = fit_logistic(&profiles, &labels, 0.0).unwrap();
        assert!(w.converged);
        assert!(w.r.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_matches_central_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..5 {
            let width = 3 + trial;
            let (profiles, labels) = toy_profiles(&mut rng, 10, 15, width);
            let r: Vec<f64> = (0..width).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let o = opts(1.0);
            let grad = logistic_gradient(&r, &profiles, &labels, &o);
            let h = 1e-6;
            for j in 0..width {
                let mut rp = r.clone();
                let mut rm = r.clone();
                rp[j] += h;
                rm[j] -= h;
                let fd = (logistic_objective(&rp, &profiles, &labels, &o)
                    - logistic_objective(&rm, &profiles, &labels, &o))
                    / (2.0 * h);
                let rel = (grad[j] - fd).abs() / grad[j].abs().max(fd.abs()).max(1e-8);
                assert!(rel < 1e-5, "entry {j}: analytic {} vs fd {fd}", grad[j]);
            }
        }
    }

    #[test]
    fn objective_trace_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (profiles, labels) = toy_profiles(&mut rng, 30, 60, 10);
        let w = fit_logistic(&profiles, &labels, 1.0).unwrap();
        for pair in w.objective_trace.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12);
        }
    }

    #[test]
    fn adversarial_entry_is_filtered_out() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let width = 21;
        let bad = 7usize;
        let mut profiles = Vec::new();
        let mut labels = Vec::new();
        for k in 0..200 {
            let same = k % 4 == 0;
            let d: Vec<f64> = (0..width - 1)
                .map(|j| {
                    let noise = 0.05 * rng.gen_range(-1.0..1.0);
                    if j == bad {
                        // Larger distance for matching pairs: positively
                        // label-correlated, so its weight turns positive.
                        if same {
                            1.2 + noise
                        } else {
                            0.3 + noise
                        }
                    } else if same {
                        0.3 + noise
                    } else {
                        0.9 + noise
                    }
                })
                .collect();
            profiles.push(DistanceProfile::new(d));
            labels.push(if same { PairLabel::Same } else { PairLabel::Different });
        }

        let w = fit_filtered(&profiles, &labels, 1.0).unwrap();
        assert!(!w.active_mask[bad], "adversarial entry survived");
        assert!(w.active_mask[width - 1], "bias must never be dropped");
        assert!(!w.filter_cap_hit);
        assert!(w.history.iter().any(|e| e.dropped.contains(&bad)));
        for i in 0..width - 1 {
            if w.active_mask[i] {
                assert!(w.r[i] <= 0.0, "active entry {i} kept weight {}", w.r[i]);
            } else {
                assert_eq!(w.r[i], 0.0);
            }
        }

        // Idempotence: refitting from the surviving mask drops nothing.
        let again =
            fit_filtered_masked(&profiles, &labels, &opts(1.0), w.active_mask.clone()).unwrap();
        assert_eq!(again.active_mask, w.active_mask);
        assert!(again.history.is_empty());
    }

    #[test]
    fn well_behaved_data_drops_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (profiles, labels) = toy_profiles(&mut rng, 40, 120, 21);
        let plain = fit_logistic(&profiles, &labels, 1.0).unwrap();
        let filtered = fit_filtered(&profiles, &labels, 1.0).unwrap();
        assert!(filtered.history.is_empty());
        assert!(filtered.active_mask.iter().all(|&a| a));
        for (a, b) in plain.r.iter().zip(&filtered.r) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn all_channels_dropped_is_reported() {
        // Every non-bias entry is adversarial.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut profiles = Vec::new();
        let mut labels = Vec::new();
        for k in 0..100 {
            let same = k % 2 == 0;
            let base = if same { 1.5 } else { 0.2 };
            let d: Vec<f64> = (0..3)
                .map(|_| base + 0.02 * rng.gen_range(-1.0..1.0))
                .collect();
            profiles.push(DistanceProfile::new(d));
            labels.push(if same { PairLabel::Same } else { PairLabel::Different });
        }
        assert!(matches!(
            fit_filtered(&profiles, &labels, 1.0),
            Err(Error::AllChannelsDropped)
        ));
    }

    #[test]
    fn match_probability_closed_forms() {
        let weights = FusionWeights {
            r: vec![-2.0, 0.5, 1.0],
            active_mask: vec![true, false, true],
            c: 1.0,
            history: Vec::new(),
            converged: true,
            filter_cap_hit: false,
            objective_trace: Vec::new(),
        };
        // Masked dot: -2 * 0.5 + 1 * 1 = 0.
        let p = match_probability(&weights, &DistanceProfile::new(vec![0.5, 9.0]));
        assert_relative_eq!(p, 0.5, epsilon = 1e-15);

        let strong = FusionWeights {
            r: vec![20.0],
            active_mask: vec![true],
            c: 1.0,
            history: Vec::new(),
            converged: true,
            filter_cap_hit: false,
            objective_trace: Vec::new(),
        };
        let p = match_probability(
            &strong,
            &DistanceProfile {
                entries: vec![1.0],
            },
        );
        assert!((p - (1.0 - 2.061e-9)).abs() < 1e-10);

        // Random brute force.
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let r: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let d: Vec<f64> = (0..8).map(|_| rng.gen_range(0.0..2.0)).collect();
        let w = FusionWeights {
            r: r.clone(),
            active_mask: vec![true; 8],
            c: 1.0,
            history: Vec::new(),
            converged: true,
            filter_cap_hit: false,
            objective_trace: Vec::new(),
        };
        let z: f64 = r.iter().zip(&d).map(|(a, b)| a * b).sum();
        let p = match_probability(&w, &DistanceProfile { entries: d });
        assert!((p - 1.0 / (1.0 + (-z).exp())).abs() < 1e-15);
    }

    #[test]
    fn ranking_is_deterministic_under_ties() {
        let weights = FusionWeights {
            r: vec![-1.0, 0.0],
            active_mask: vec![true, true],
            c: 1.0,
            history: Vec::new(),
            converged: true,
            filter_cap_hit: false,
            objective_trace: Vec::new(),
        };
        let mk = |d: f64| DistanceProfile::new(vec![d]);
        assert_eq!(rank_gallery(&weights, &[mk(0.4)]), vec![0]);
        // Distances 1.5, 0.1, 0.1 give probabilities (low, high, high).
        let order = rank_gallery(&weights, &[mk(1.5), mk(0.1), mk(0.1)]);
        assert_eq!(order, vec![1, 2, 0]);
    }

    #[test]
    fn ranking_matches_naive_sort_oracle_and_ignores_bias_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let width = 6;
        let mut weights = FusionWeights {
            r: (0..width).map(|_| rng.gen_range(-1.0..0.0)).collect(),
            active_mask: vec![true; width],
            c: 1.0,
            history: Vec::new(),
            converged: true,
            filter_cap_hit: false,
            objective_trace: Vec::new(),
        };
        let profiles: Vec<DistanceProfile> = (0..30)
            .map(|_| DistanceProfile::new((0..width - 1).map(|_| rng.gen_range(0.0..2.0)).collect()))
            .collect();
        let order = rank_gallery(&weights, &profiles);

        let probs: Vec<f64> = profiles
            .iter()
            .map(|p| match_probability(&weights, p))
            .collect();
        let mut oracle: Vec<usize> = (0..30).collect();
        oracle.sort_by(|&i, &j| probs[j].partial_cmp(&probs[i]).unwrap().then(i.cmp(&j)));
        assert_eq!(order, oracle);

        // Shifting every score through the bias weight preserves order.
        weights.r[width - 1] += 3.0;
        assert_eq!(rank_gallery(&weights, &profiles), order);
    }

    #[test]
    fn weight_file_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (profiles, labels) = toy_profiles(&mut rng, 10, 20, 21);
        let w = fit_filtered(&profiles, &labels, 1.0).unwrap();
        let layout = ProfileLayout::new(&[KernelKind::Linear]);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("weights.json");
        save_weights(&path, &w, &layout, "cfg").unwrap();
        let loaded = load_weights(&path, &layout, "cfg").unwrap();
        assert_eq!(loaded.r, w.r);
        assert_eq!(loaded.active_mask, w.active_mask);
        assert_eq!(loaded.history, w.history);
        assert!(matches!(
            load_weights(&path, &layout, "nope"),
            Err(Error::HashMismatch { .. })
        ));
    }
}
