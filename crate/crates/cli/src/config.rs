//! Run configuration: one JSON file with a block per command family.
//!
//! Every block is optional and falls back to the paper-tuned defaults, so an
//! empty `{}` is a valid config. The top-level `seed` drives every random
//! stream; `--seed` replaces it.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use twinbeam::eprstat::{CiLevel, EprConfig};
use twinbeam::gfit::FitOptions;
use twinbeam::simgen::{SimParams, TemporalSimParams};
use twinbeam::specorr::{Normalization, PipelineConfig};
use twinbeam::sqz::{PulseProfile, SpectrumModel};
use twinbeam::{AnalysisRegion, OpticsConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub sim: SimBlock,
    pub optics: OpticsBlock,
    pub analysis: AnalysisBlock,
    pub spectral: SpectralBlock,
    pub io: IoBlock,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            sim: SimBlock::default(),
            optics: OpticsBlock::default(),
            analysis: AnalysisBlock::default(),
            spectral: SpectralBlock::default(),
            io: IoBlock::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    #[default]
    TwinBeam,
    /// Independent Poisson beams: the shot-noise calibration.
    Coherent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSim {
    #[serde(default)]
    pub source: Source,
    #[serde(flatten)]
    pub params: SimParams,
}

/// Fields left out of a given `sim` block are not simulated; the paper
/// near + far pair is used only when the whole block is absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimBlock {
    #[serde(default)]
    pub near: Option<FieldSim>,
    #[serde(default)]
    pub far: Option<FieldSim>,
}

impl Default for SimBlock {
    fn default() -> Self {
        Self {
            near: Some(FieldSim {
                source: Source::TwinBeam,
                params: SimParams::paper_near_field(0),
            }),
            far: Some(FieldSim {
                source: Source::TwinBeam,
                params: SimParams::paper_far_field(0),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OpticsBlock {
    pub near: OpticsConfig,
    pub far: OpticsConfig,
}

impl Default for OpticsBlock {
    fn default() -> Self {
        let paper = EprConfig::paper();
        Self {
            near: paper.near_optics,
            far: paper.far_optics,
        }
    }
}

/// Bin sizes: an explicit list, or `"a..b"` for the doubling ladder
/// `a, 2a, 4a, ... <= b`, or a comma list `"1,3,5"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Bins {
    List(Vec<usize>),
    Spec(String),
}

impl Default for Bins {
    fn default() -> Self {
        Bins::Spec("1..32".into())
    }
}

impl Bins {
    pub fn resolve(&self) -> Result<Vec<usize>, String> {
        let bins = match self {
            Bins::List(v) => v.clone(),
            Bins::Spec(s) => parse_bins(s)?,
        };
        if bins.is_empty() || bins.contains(&0) {
            return Err(format!(
                "bins must be a non-empty list of positive sizes, got {bins:?}"
            ));
        }
        Ok(bins)
    }
}

pub fn parse_bins(spec: &str) -> Result<Vec<usize>, String> {
    let bad = || format!("cannot parse bins {spec:?}; expected \"a..b\" or \"k1,k2,...\"");
    let spec = spec.trim();
    if let Some((a, b)) = spec.split_once("..") {
        let a: usize = a.trim().parse().map_err(|_| bad())?;
        let b: usize = b.trim().parse().map_err(|_| bad())?;
        if a == 0 || b < a {
            return Err(bad());
        }
        let mut out = Vec::new();
        let mut k = a;
        while k <= b {
            out.push(k);
            k *= 2;
        }
        Ok(out)
    } else {
        spec.split(',')
            .map(|s| s.trim().parse().map_err(|_| bad()))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisBlock {
    pub pipeline: PipelineConfig,
    pub fit: FitOptions,
    /// Overrides `pipeline.normalization` when set.
    pub normalization: Option<Normalization>,
    pub ci_level: CiLevel,
    pub group_sizes: Vec<usize>,
    /// Noise-ratio region on the raw frames; a centered `nr_region` square
    /// when absent.
    pub region: Option<AnalysisRegion>,
    pub bins: Bins,
    /// Counts-to-photoelectrons conversion applied on load.
    pub gain: f64,
}

impl Default for AnalysisBlock {
    fn default() -> Self {
        Self {
            pipeline: PipelineConfig::default(),
            fit: FitOptions::default(),
            normalization: None,
            ci_level: CiLevel::P68,
            group_sizes: vec![5, 10, 20, 40, 100, 200],
            region: None,
            bins: Bins::default(),
            gain: 1.0,
        }
    }
}

impl AnalysisBlock {
    pub fn epr_config(&self, optics: &OpticsBlock) -> EprConfig {
        let mut pipeline = self.pipeline.clone();
        if let Some(n) = self.normalization {
            pipeline.normalization = n;
        }
        EprConfig {
            pipeline,
            fit: self.fit.clone(),
            near_optics: optics.near,
            far_optics: optics.far,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectralBlock {
    pub model: SpectrumModel,
    pub pulse: PulseProfile,
    pub temporal: TemporalSimParams,
    /// Agreement threshold in Monte Carlo standard errors.
    pub tolerance_se: f64,
}

impl Default for SpectralBlock {
    fn default() -> Self {
        Self {
            model: SpectrumModel::LorentzianDiff {
                nr0: 0.3112,
                gamma: 2.0 * std::f64::consts::PI * 1e6,
            },
            pulse: PulseProfile::Rect { t: 1e-6 },
            temporal: TemporalSimParams {
                dt: 10e-9,
                duration: 1e-6,
                frame_gap: 60e-6,
                n_trials: 4000,
                seed: 0,
            },
            tolerance_se: 3.0,
        }
    }
}

/// Stack directories, relative to `--out` unless absolute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoBlock {
    pub near: PathBuf,
    pub far: PathBuf,
}

impl Default for IoBlock {
    fn default() -> Self {
        Self {
            near: "near".into(),
            far: "far".into(),
        }
    }
}

impl IoBlock {
    pub fn near_dir(&self, out: &Path) -> PathBuf {
        out.join(&self.near)
    }

    pub fn far_dir(&self, out: &Path) -> PathBuf {
        out.join(&self.far)
    }
}

/// Distinct, reproducible per-field seed.
pub fn field_seed(seed: u64, field: u64) -> u64 {
    seed ^ field.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

impl RunConfig {
    /// Parses a config, filling the per-block `seed` fields the master seed
    /// overrides anyway.
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        let mut value: Value = serde_json::from_str(text)?;
        let fill = |v: Option<&mut Value>| {
            if let Some(Value::Object(obj)) = v {
                obj.entry("seed").or_insert(Value::from(0u64));
            }
        };
        if let Some(sim) = value.get_mut("sim") {
            fill(sim.get_mut("near"));
            fill(sim.get_mut("far"));
        }
        if let Some(spec) = value.get_mut("spectral") {
            fill(spec.get_mut("temporal"));
        }
        serde_json::from_value(value)
    }

    /// Applies the master seed (after any `--seed` override) to every stream.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        if let Some(n) = &mut self.sim.near {
            n.params.seed = field_seed(seed, 0);
        }
        if let Some(f) = &mut self.sim.far {
            f.params.seed = field_seed(seed, 1);
        }
        self.spectral.temporal.seed = field_seed(seed, 2);
        self
    }

    /// Canonical bytes the config hash is taken over.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bins_ladder() {
        assert_eq!(parse_bins("1..32").unwrap(), vec![1, 2, 4, 8, 16, 32]);
        assert_eq!(parse_bins("3..20").unwrap(), vec![3, 6, 12]);
        assert_eq!(parse_bins("1, 3,5").unwrap(), vec![1, 3, 5]);
        assert!(parse_bins("0..4").is_err());
        assert!(parse_bins("8..4").is_err());
        assert!(parse_bins("x").is_err());
        assert!(Bins::List(vec![]).resolve().is_err());
    }

    #[test]
    fn empty_config_is_defaults() {
        assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn partial_sim_block() {
        let cfg = RunConfig::from_json(
            r#"{"seed": 5, "sim": {"near": {"source": "coherent", "mode": "NearField",
                "width": 32, "height": 32, "mean_profile": "Flat", "pairs_per_frame": 100,
                "jitter_sigma": [1, 1], "eta_p": 1, "eta_c": 1, "bg_rate": 0,
                "n_acquisitions": 3}}, "analysis": {"bins": [1, 2]}}"#,
        )
        .unwrap()
        .with_seed(9);
        let near = cfg.sim.near.as_ref().unwrap();
        assert_eq!(near.source, Source::Coherent);
        assert_eq!(near.params.seed, field_seed(9, 0));
        assert!(cfg.sim.far.is_none());
        assert_eq!(cfg.analysis.bins.resolve().unwrap(), vec![1, 2]);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_json(r#"{"analysys": {}}"#).is_err());
    }

    #[test]
    fn hash_tracks_seed() {
        let a = RunConfig::default().with_seed(1).canonical_bytes();
        let b = RunConfig::default().with_seed(2).canonical_bytes();
        assert_ne!(a, b);
        assert_eq!(a, RunConfig::default().with_seed(1).canonical_bytes());
    }
}
