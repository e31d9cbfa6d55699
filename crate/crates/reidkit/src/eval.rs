//! Split protocols, CMC curves and the filtering-frequency report.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::descriptor::CameraId;
use crate::error::{Error, Result};
use crate::fusion::{FusionWeights, ProfileLayout};

/// Which split protocol a dataset follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ProtocolKind {
    /// Identities split 50/50; camera a is the gallery, camera b the
    /// probe.
    HalfSplit,
    /// Half the shared identities probe (camera a) against their camera-b
    /// images plus every camera-b identity that never appears in camera a.
    DistractorGallery,
    /// Identity-level split with one or two shots per identity on each
    /// side; camera b is the gallery.
    MultiShot { shots_per_id: u32 },
}

/// A split protocol with its trial plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitProtocol {
    #[serde(flatten)]
    pub kind: ProtocolKind,
    pub seed: u64,
    pub trial_count: usize,
}

impl SplitProtocol {
    pub fn validate(&self) -> Result<()> {
        if self.trial_count == 0 {
            return Err(Error::Config("trial_count must be at least 1".into()));
        }
        if let ProtocolKind::MultiShot { shots_per_id } = self.kind {
            if !(1..=2).contains(&shots_per_id) {
                return Err(Error::Config(format!(
                    "shots_per_id must be 1 or 2, got {shots_per_id}"
                )));
            }
        }
        Ok(())
    }
}

/// Identity metadata of one catalog image; splits work on indices into a
/// slice of these.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageInfo {
    pub camera: CameraId,
    pub person_id: String,
    pub shot: u32,
}

/// One trial's index sets. Training pairs are row-aligned same-person
/// (camera a, camera b) images.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrialSplit {
    pub train_pairs: Vec<(usize, usize)>,
    pub gallery: Vec<usize>,
    pub probe: Vec<usize>,
    pub gallery_camera: CameraId,
    pub probe_camera: CameraId,
}

/// Per-identity image indices in one camera, sorted by shot.
type IdentityMap = BTreeMap<String, [Vec<usize>; 2]>;

fn group_by_identity(images: &[ImageInfo]) -> IdentityMap {
    let mut map: IdentityMap = BTreeMap::new();
    let mut order: Vec<usize> = (0..images.len()).collect();
    order.sort_by(|&i, &j| {
        (images[i].person_id.as_str(), images[i].camera, images[i].shot).cmp(&(
            images[j].person_id.as_str(),
            images[j].camera,
            images[j].shot,
        ))
    });
    for i in order {
        let entry = map
            .entry(images[i].person_id.clone())
            .or_insert_with(|| [Vec::new(), Vec::new()]);
        match images[i].camera {
            CameraId::A => entry[0].push(i),
            CameraId::B => entry[1].push(i),
        }
    }
    map
}

fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    // SplitMix-style mixing so nearby trial indices decorrelate.
    let mut z = seed
        .wrapping_add(0x9e3779b97f4a7c15_u64.wrapping_mul(trial as u64 + 1));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    ChaCha8Rng::seed_from_u64(z ^ (z >> 31))
}

/// Aligned same-person training pairs for a set of identities: the k-th
/// camera-a shot pairs with the k-th camera-b shot.
fn aligned_pairs(map: &IdentityMap, ids: &[String]) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for id in ids {
        let entry = &map[id];
        for (a, b) in entry[0].iter().zip(entry[1].iter()) {
            pairs.push((*a, *b));
        }
    }
    pairs
}

/// Identity lists for one trial, either shuffled from the catalog or read
/// from an external split file.
fn trial_identities(
    shared: &[String],
    proto: &SplitProtocol,
    external: Option<&SplitFile>,
    trial: usize,
) -> Result<(Vec<String>, Vec<String>)> {
    if let Some(file) = external {
        let t = file.trials.get(trial).ok_or_else(|| {
            Error::Config(format!(
                "split file holds {} trials, trial {trial} requested",
                file.trials.len()
            ))
        })?;
        for id in t.train.iter().chain(&t.test) {
            if !shared.iter().any(|s| s == id) {
                return Err(Error::Config(format!(
                    "split file references unknown identity {id}"
                )));
            }
        }
        return Ok((t.train.clone(), t.test.clone()));
    }
    let mut ids = shared.to_vec();
    let mut rng = trial_rng(proto.seed, trial);
    ids.shuffle(&mut rng);
    let train = ids[..ids.len() / 2].to_vec();
    let test = ids[ids.len() / 2..].to_vec();
    Ok((train, test))
}

/// Generates the per-trial train/gallery/probe index sets for a catalog.
pub fn make_splits(images: &[ImageInfo], proto: &SplitProtocol) -> Result<Vec<TrialSplit>> {
    make_splits_with_file(images, proto, None)
}

/// Same as [`make_splits`] but trial identity lists may come from an
/// externally supplied split file.
pub fn make_splits_with_file(
    images: &[ImageInfo],
    proto: &SplitProtocol,
    external: Option<&SplitFile>,
) -> Result<Vec<TrialSplit>> {
    proto.validate()?;
    let map = group_by_identity(images);
    let shared: Vec<String> = map
        .iter()
        .filter(|(_, v)| !v[0].is_empty() && !v[1].is_empty())
        .map(|(k, _)| k.clone())
        .collect();
    if shared.len() < 2 {
        return Err(Error::InsufficientIdentities(format!(
            "{} identities shared across cameras, need at least 2",
            shared.len()
        )));
    }

    let mut splits = Vec::with_capacity(proto.trial_count);
    for trial in 0..proto.trial_count {
        let (train_ids, test_ids) = trial_identities(&shared, proto, external, trial)?;
        let train_pairs = aligned_pairs(&map, &train_ids);

        let split = match proto.kind {
            ProtocolKind::HalfSplit => {
                let gallery: Vec<usize> = test_ids.iter().map(|id| map[id][0][0]).collect();
                let probe: Vec<usize> = test_ids.iter().map(|id| map[id][1][0]).collect();
                TrialSplit {
                    train_pairs,
                    gallery,
                    probe,
                    gallery_camera: CameraId::A,
                    probe_camera: CameraId::B,
                }
            }
            ProtocolKind::DistractorGallery => {
                // Distractors: camera-b identities absent from camera a.
                let mut gallery: Vec<usize> =
                    test_ids.iter().map(|id| map[id][1][0]).collect();
                for entry in map.values() {
                    if entry[0].is_empty() && !entry[1].is_empty() {
                        gallery.push(entry[1][0]);
                    }
                }
                let probe: Vec<usize> = test_ids.iter().map(|id| map[id][0][0]).collect();
                TrialSplit {
                    train_pairs,
                    gallery,
                    probe,
                    gallery_camera: CameraId::B,
                    probe_camera: CameraId::A,
                }
            }
            ProtocolKind::MultiShot { shots_per_id } => {
                let mut rng = trial_rng(proto.seed.wrapping_add(0x5157), trial);
                let mut gallery = Vec::new();
                let mut probe = Vec::new();
                let pick = |pool: &[usize], rng: &mut ChaCha8Rng| -> Vec<usize> {
                    let take = (shots_per_id as usize).min(pool.len());
                    let mut chosen: Vec<usize> =
                        pool.choose_multiple(rng, take).copied().collect();
                    chosen.sort_unstable();
                    chosen
                };
                for id in &test_ids {
                    gallery.extend(pick(&map[id][1], &mut rng));
                    probe.extend(pick(&map[id][0], &mut rng));
                }
                TrialSplit {
                    train_pairs,
                    gallery,
                    probe,
                    gallery_camera: CameraId::B,
                    probe_camera: CameraId::A,
                }
            }
        };
        splits.push(split);
    }
    Ok(splits)
}

/// Externally supplied per-trial identity lists.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitFile {
    pub trials: Vec<SplitFileTrial>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitFileTrial {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

impl SplitFile {
    pub fn load(path: &Path) -> Result<SplitFile> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }
}

/// How probe ranks aggregate over gallery shots of the same identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmcAggregation {
    /// Exactly one gallery image per probe identity.
    Single,
    /// Best-ranked gallery shot of the probe identity counts.
    MinOverShots,
}

/// Cumulative matching characteristic: entry k is the fraction of probes
/// whose true match appears within rank k + 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmcCurve {
    pub values: Vec<f64>,
    pub gallery_size: usize,
}

/// Computes the CMC curve from per-probe gallery rankings.
pub fn compute_cmc(
    rankings: &[Vec<usize>],
    probe_ids: &[String],
    gallery_ids: &[String],
    aggregation: CmcAggregation,
) -> Result<CmcCurve> {
    if rankings.len() != probe_ids.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} rankings vs {} probes",
            rankings.len(),
            probe_ids.len()
        )));
    }
    let g = gallery_ids.len();
    let mut hits = vec![0usize; g];
    for (i, ranking) in rankings.iter().enumerate() {
        if ranking.len() != g {
            return Err(Error::ShapeMismatch(format!(
                "ranking {i} has {} entries for a gallery of {g}",
                ranking.len()
            )));
        }
        let matches = gallery_ids.iter().filter(|id| **id == probe_ids[i]).count();
        match aggregation {
            CmcAggregation::Single if matches == 0 => {
                return Err(Error::MissingTruth {
                    probe: i,
                    identity: probe_ids[i].clone(),
                })
            }
            CmcAggregation::Single if matches > 1 => {
                return Err(Error::ShapeMismatch(format!(
                    "probe {i}: {matches} gallery images share identity {} under single-shot aggregation",
                    probe_ids[i]
                )))
            }
            CmcAggregation::MinOverShots if matches == 0 => {
                return Err(Error::MissingTruth {
                    probe: i,
                    identity: probe_ids[i].clone(),
                })
            }
            _ => {}
        }
        let rank_pos = ranking
            .iter()
            .position(|&j| gallery_ids[j] == probe_ids[i])
            .expect("match counted above");
        hits[rank_pos] += 1;
    }

    let mut values = Vec::with_capacity(g);
    let mut acc = 0usize;
    for h in hits {
        acc += h;
        values.push(acc as f64 / rankings.len().max(1) as f64);
    }
    Ok(CmcCurve {
        values,
        gallery_size: g,
    })
}

/// Elementwise mean curve and per-rank standard deviation (population
/// convention) over trials.
#[derive(Debug, Clone, PartialEq)]
pub struct AveragedCmc {
    pub mean: CmcCurve,
    pub std: Vec<f64>,
    pub trial_count: usize,
}

pub fn average_trials(curves: &[CmcCurve]) -> Result<AveragedCmc> {
    let first = curves
        .first()
        .ok_or_else(|| Error::ShapeMismatch("no curves to average".into()))?;
    let g = first.gallery_size;
    let len = first.values.len();
    if curves
        .iter()
        .any(|c| c.gallery_size != g || c.values.len() != len)
    {
        return Err(Error::ShapeMismatch(
            "curves with different gallery sizes cannot be averaged".into(),
        ));
    }
    let n = curves.len() as f64;
    let mut mean = vec![0.0; len];
    for c in curves {
        for (m, v) in mean.iter_mut().zip(&c.values) {
            *m += v / n;
        }
    }
    let mut std = vec![0.0; len];
    for c in curves {
        for ((s, v), m) in std.iter_mut().zip(&c.values).zip(&mean) {
            *s += (v - m) * (v - m) / n;
        }
    }
    for s in std.iter_mut() {
        *s = s.sqrt();
    }
    Ok(AveragedCmc {
        mean: CmcCurve {
            values: mean,
            gallery_size: g,
        },
        std,
        trial_count: curves.len(),
    })
}

/// Drop counts per (channel, kernel) across trials, with marginals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterFrequency {
    /// counts[channel_index][kernel_position].
    pub counts: Vec<Vec<u32>>,
    pub channel_marginals: Vec<u32>,
    pub kernel_marginals: Vec<u32>,
    pub trial_count: usize,
}

/// Counts how often each kernel-channel was dropped over the per-trial
/// weight histories.
pub fn filtering_report(trials: &[FusionWeights], layout: &ProfileLayout) -> FilterFrequency {
    let n_kernels = layout.kernels.len();
    let mut counts = vec![vec![0u32; n_kernels]; 20];
    for weights in trials {
        for event in &weights.history {
            for &idx in &event.dropped {
                if idx < layout.entries.len() {
                    let (channel, _) = layout.entries[idx];
                    let k = idx % n_kernels;
                    counts[channel.index()][k] += 1;
                }
            }
        }
    }
    let channel_marginals: Vec<u32> = counts.iter().map(|row| row.iter().sum()).collect();
    let kernel_marginals: Vec<u32> = (0..n_kernels)
        .map(|k| counts.iter().map(|row| row[k]).sum())
        .collect();
    FilterFrequency {
        counts,
        channel_marginals,
        kernel_marginals,
        trial_count: trials.len(),
    }
}

/// Ranks reported in the JSON summary, clipped to the gallery size.
pub const SUMMARY_RANKS: [usize; 5] = [1, 10, 20, 50, 100];

/// CSV with one row per rank: `rank,mean,std`.
pub fn write_cmc_csv(path: &Path, averaged: &AveragedCmc) -> Result<()> {
    let mut out = String::from("rank,mean,std\n");
    for (i, (m, s)) in averaged.mean.values.iter().zip(&averaged.std).enumerate() {
        out.push_str(&format!("{},{:.6},{:.6}\n", i + 1, m, s));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CmcSummary {
    pub gallery_size: usize,
    pub trial_count: usize,
    pub ranks: Vec<CmcSummaryRow>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CmcSummaryRow {
    pub rank: usize,
    pub mean: f64,
    pub std: f64,
}

/// JSON summary at the canonical ranks {1, 10, 20, 50, 100}.
pub fn write_cmc_summary(path: &Path, averaged: &AveragedCmc) -> Result<CmcSummary> {
    let summary = CmcSummary {
        gallery_size: averaged.mean.gallery_size,
        trial_count: averaged.trial_count,
        ranks: SUMMARY_RANKS
            .iter()
            .filter(|&&r| r <= averaged.mean.values.len())
            .map(|&r| CmcSummaryRow {
                rank: r,
                mean: averaged.mean.values[r - 1],
                std: averaged.std[r - 1],
            })
            .collect(),
    };
    let json = serde_json::to_string_pretty(&summary)
        .map_err(|e| Error::Config(format!("summary serialization failed: {e}")))?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))?;
    Ok(summary)
}

/// CSV matrix of drop counts: one row per channel, one column per kernel,
/// plus marginals.
pub fn write_filter_csv(path: &Path, freq: &FilterFrequency, layout: &ProfileLayout) -> Result<()> {
    use crate::descriptor::ChannelId;
    let mut out = String::from("channel");
    for k in &layout.kernels {
        out.push_str(&format!(",{}", k.label()));
    }
    out.push_str(",total\n");
    for (ci, channel) in ChannelId::all().into_iter().enumerate() {
        out.push_str(&channel.label());
        for k in 0..layout.kernels.len() {
            out.push_str(&format!(",{}", freq.counts[ci][k]));
        }
        out.push_str(&format!(",{}\n", freq.channel_marginals[ci]));
    }
    out.push_str("total");
    let mut grand = 0;
    for k in 0..layout.kernels.len() {
        out.push_str(&format!(",{}", freq.kernel_marginals[k]));
        grand += freq.kernel_marginals[k];
    }
    out.push_str(&format!(",{grand}\n"));
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
