//! Pipeline configuration file.
//!
//! One TOML document drives every command. All constants the method
//! leaves open (histogram bins, stripe geometry, Gaussian sigma, kappa,
//! projection cap, bandwidth policy, penalty C) surface here with their
//! defaults, so experiments are reproducible from the file alone.
//!
//! ```toml
//! seed = 42
//! output_dir = "out"
//!
//! [dataset]
//! root = "data/synth"
//!
//! [protocol]
//! kind = "half_split"
//! trial_count = 5
//!
//! [kernels]
//! kinds = ["linear", "rbf", "chi2", "expchi2"]
//!
//! [fusion]
//! c = 1.0
//! filtering = true
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::hex_digest;
use crate::descriptor::DescriptorConfig;
use crate::error::{Error, Result};
use crate::eval::{ProtocolKind, SplitProtocol};
use crate::kcca::KccaOptions;
use crate::kernels::KernelKind;
use crate::synth::SyntheticSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Master seed; trial seeds and bandwidth sampling derive from it.
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Worker threads; 0 uses every core.
    pub worker_count: usize,
    pub dataset: DatasetSection,
    pub protocol: ProtocolSection,
    pub descriptor: DescriptorConfig,
    pub kernels: KernelSection,
    pub kcca: KccaOptions,
    pub fusion: FusionSection,
    pub synth: SyntheticSpec,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            output_dir: PathBuf::from("out"),
            worker_count: 0,
            dataset: DatasetSection::default(),
            protocol: ProtocolSection::default(),
            descriptor: DescriptorConfig::default(),
            kernels: KernelSection::default(),
            kcca: KccaOptions::default(),
            fusion: FusionSection::default(),
            synth: SyntheticSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct DatasetSection {
    pub root: PathBuf,
}

/// Protocol selection; the seed comes from the top-level config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtocolSection {
    pub kind: ProtocolChoice,
    pub trial_count: usize,
    /// Only read for `multi_shot`.
    pub shots_per_id: u32,
    /// Optional externally supplied per-trial identity lists (JSON).
    pub split_file: Option<PathBuf>,
}

impl Default for ProtocolSection {
    fn default() -> Self {
        ProtocolSection {
            kind: ProtocolChoice::HalfSplit,
            trial_count: 10,
            shots_per_id: 1,
            split_file: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolChoice {
    HalfSplit,
    DistractorGallery,
    MultiShot,
}

impl ProtocolSection {
    pub fn to_protocol(&self, seed: u64) -> SplitProtocol {
        let kind = match self.kind {
            ProtocolChoice::HalfSplit => ProtocolKind::HalfSplit,
            ProtocolChoice::DistractorGallery => ProtocolKind::DistractorGallery,
            ProtocolChoice::MultiShot => ProtocolKind::MultiShot {
                shots_per_id: self.shots_per_id,
            },
        };
        SplitProtocol {
            kind,
            seed,
            trial_count: self.trial_count,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KernelSection {
    pub kinds: Vec<KernelKind>,
    pub gamma_policy: GammaPolicy,
    /// Bandwidth used under the `fixed` policy.
    pub gamma: f64,
    /// Pair sample cap for the median heuristic.
    pub pair_sample: usize,
}

impl Default for KernelSection {
    fn default() -> Self {
        KernelSection {
            kinds: KernelKind::ALL.to_vec(),
            gamma_policy: GammaPolicy::Median,
            gamma: 1.0,
            pair_sample: 1000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaPolicy {
    Median,
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionSection {
    /// Logistic penalty parameter.
    pub c: f64,
    /// Iterative positive-weight filtering on or off.
    pub filtering: bool,
    /// Reweight matching pairs against the negative majority.
    pub balance_classes: bool,
}

impl Default for FusionSection {
    fn default() -> Self {
        FusionSection {
            c: 1.0,
            filtering: true,
            balance_classes: false,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<PipelineConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: PipelineConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.fusion.c <= 0.0 {
            return Err(Error::Config(format!(
                "fusion.c must be positive, got {}",
                self.fusion.c
            )));
        }
        if self.protocol.trial_count == 0 {
            return Err(Error::Config("protocol.trial_count must be at least 1".into()));
        }
        if self.kernels.kinds.is_empty() {
            return Err(Error::Config("kernels.kinds must not be empty".into()));
        }
        let mut seen = Vec::new();
        for k in &self.kernels.kinds {
            if seen.contains(k) {
                return Err(Error::Config(format!(
                    "kernel {} listed twice",
                    k.label()
                )));
            }
            seen.push(*k);
        }
        if self.kernels.gamma_policy == GammaPolicy::Fixed && self.kernels.gamma <= 0.0 {
            return Err(Error::Config("kernels.gamma must be positive".into()));
        }
        if self.kernels.pair_sample == 0 {
            return Err(Error::Config("kernels.pair_sample must be at least 1".into()));
        }
        if self.kcca.kappa < 0.0 {
            return Err(Error::Config("kcca.kappa must be nonnegative".into()));
        }
        if self.kcca.max_projections == 0 {
            return Err(Error::Config("kcca.max_projections must be at least 1".into()));
        }
        let d = &self.descriptor;
        if d.hs_bins < 2 || d.rgb_bins < 2 || d.lab_bins < 2 {
            return Err(Error::Config("histogram bin counts must be at least 2".into()));
        }
        if d.stripe_height == 0 || d.stripe_stride == 0 {
            return Err(Error::Config("stripe geometry must be positive".into()));
        }
        if d.hog_cell == 0 || d.hog_block == 0 || d.hog_bins == 0 {
            return Err(Error::Config("hog geometry must be positive".into()));
        }
        if let ProtocolChoice::MultiShot = self.protocol.kind {
            if !(1..=2).contains(&self.protocol.shots_per_id) {
                return Err(Error::Config(format!(
                    "protocol.shots_per_id must be 1 or 2, got {}",
                    self.protocol.shots_per_id
                )));
            }
        }
        self.synth.validate()?;
        Ok(())
    }

    /// Hash over everything that influences descriptor values.
    pub fn descriptor_hash(&self) -> String {
        hash_json(&self.descriptor)
    }

    /// Hash over everything that influences models, weights and rankings.
    /// Paths and worker counts are excluded so artifacts stay valid when
    /// directories move.
    pub fn config_hash(&self) -> String {
        hash_json(&(
            self.seed,
            &self.protocol,
            &self.descriptor,
            &self.kernels,
            &self.kcca,
            &self.fusion,
        ))
    }
}

fn hash_json<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_string(value).expect("config sections serialize");
    let mut hasher = Sha256::new();
    hasher.update(json.as_bytes());
    hex_digest(hasher)
}
