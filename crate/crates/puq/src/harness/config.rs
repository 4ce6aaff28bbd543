//! Experiment configuration: one TOML file per run, every field explicit,
//! unknown keys rejected.

use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

use crate::fitting::ParamKind;
use crate::physics::{PhantomRanges, SequenceKind, SequencePreset};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("config serialize error: {0}")]
    Serialize(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PresetKind {
    Desk,
    Paper,
}

/// Pipeline variants: the proposed two-stage method, its ablations and the
/// classical baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "puq")]
    Puq,
    #[serde(rename = "wo-g")]
    WoG,
    #[serde(rename = "wo-dropout")]
    WoDropout,
    #[serde(rename = "nll-g")]
    NllG,
    #[serde(rename = "nll-wo-g")]
    NllWoG,
    #[serde(rename = "nll-md-g")]
    NllMdG,
    #[serde(rename = "nll-md-wo-g")]
    NllMdWoG,
    #[serde(rename = "zero-filled-lsq")]
    ZeroFilledLsq,
}

/// How stage 1 is trained and sampled for a variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage1Kind {
    /// MSE loss, dropout active, MC sampling at inference.
    MseDropout,
    /// MSE loss with p = 0, single deterministic pass, zero uncertainty.
    MseNoDropout,
    /// Gaussian NLL head, deterministic pass, aleatoric uncertainty.
    Nll,
    /// Gaussian NLL head, MC sampling, combined uncertainty.
    NllMd,
    /// No network: the zero-filled adjoint feeds the classical fitter.
    ZeroFilled,
}

impl Variant {
    /// The seven ablation rows in table order.
    pub fn ablation_rows() -> [Variant; 7] {
        [
            Variant::WoDropout,
            Variant::WoG,
            Variant::Puq,
            Variant::NllWoG,
            Variant::NllG,
            Variant::NllMdWoG,
            Variant::NllMdG,
        ]
    }

    /// Whether stage 2 consumes the uncertainty input.
    pub fn guided(self) -> bool {
        matches!(self, Variant::Puq | Variant::NllG | Variant::NllMdG)
    }

    pub fn stage1(self) -> Stage1Kind {
        match self {
            Variant::Puq | Variant::WoG => Stage1Kind::MseDropout,
            Variant::WoDropout => Stage1Kind::MseNoDropout,
            Variant::NllG | Variant::NllWoG => Stage1Kind::Nll,
            Variant::NllMdG | Variant::NllMdWoG => Stage1Kind::NllMd,
            Variant::ZeroFilledLsq => Stage1Kind::ZeroFilled,
        }
    }

    /// Key used for artifact directories and the metrics csv.
    pub fn slug(self) -> &'static str {
        match self {
            Variant::Puq => "puq",
            Variant::WoG => "wo-g",
            Variant::WoDropout => "wo-dropout",
            Variant::NllG => "nll-g",
            Variant::NllWoG => "nll-wo-g",
            Variant::NllMdG => "nll-md-g",
            Variant::NllMdWoG => "nll-md-wo-g",
            Variant::ZeroFilledLsq => "zero-filled-lsq",
        }
    }

    /// Human-readable table label.
    pub fn label(self) -> &'static str {
        match self {
            Variant::Puq => "Proposed",
            Variant::WoG => "w/o G",
            Variant::WoDropout => "w/o Dropout",
            Variant::NllG => "NLL w/ G",
            Variant::NllWoG => "NLL w/o G",
            Variant::NllMdG => "NLL+MD w/ G",
            Variant::NllMdWoG => "NLL+MD w/o G",
            Variant::ZeroFilledLsq => "zero-filled+LSQ",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomConfig {
    pub height: usize,
    pub width: usize,
    pub regions_min: usize,
    pub regions_max: usize,
    pub t1_range_ms: [f64; 2],
    pub t2_range_ms: [f64; 2],
    pub pd_range: [f64; 2],
    /// Total number of synthetic slices.
    pub count: usize,
    /// Train/val/test fractions.
    pub split: [f64; 3],
}

impl PhantomConfig {
    pub fn ranges(&self) -> PhantomRanges {
        PhantomRanges {
            regions: (self.regions_min, self.regions_max),
            t1_ms: (self.t1_range_ms[0], self.t1_range_ms[1]),
            t2_ms: (self.t2_range_ms[0], self.t2_range_ms[1]),
            pd: (self.pd_range[0], self.pd_range[1]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceConfig {
    pub kind: SequenceKind,
    pub timings_ms: Vec<f64>,
}

impl SequenceConfig {
    pub fn preset(&self) -> SequencePreset {
        SequencePreset {
            kind: self.kind,
            timings_ms: self.timings_ms.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingConfig {
    pub coils: usize,
    /// Acceleration factor R.
    pub accel: u32,
    pub acs_frac: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    /// Complex Gaussian k-space noise level; `None` disables noise.
    pub snr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconSectionConfig {
    pub iterations: usize,
    pub hidden_channels: usize,
    pub dropout: f64,
    pub mc_samples: usize,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub clip: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSectionConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: PresetKind,
    pub variant: Variant,
    pub seeds: Vec<u64>,
    pub repeats: usize,
    pub phantom: PhantomConfig,
    pub sequence: SequenceConfig,
    pub sampling: SamplingConfig,
    pub noise: NoiseConfig,
    pub recon: ReconSectionConfig,
    pub fit: FitSectionConfig,
}

impl ExperimentConfig {
    /// Desk-scale defaults: 64x64, 8 phases, 4 coils, R = 4, T = 20,
    /// 12 phantoms split 70/15/15, 50 training epochs.
    pub fn desk() -> Self {
        let seq = SequencePreset::t2prep_default();
        ExperimentConfig {
            preset: PresetKind::Desk,
            variant: Variant::Puq,
            seeds: vec![1, 2, 3],
            repeats: 3,
            phantom: PhantomConfig {
                height: 64,
                width: 64,
                regions_min: 6,
                regions_max: 10,
                t1_range_ms: [300.0, 2000.0],
                t2_range_ms: [40.0, 250.0],
                pd_range: [0.5, 1.0],
                count: 12,
                split: [0.7, 0.15, 0.15],
            },
            sequence: SequenceConfig {
                kind: seq.kind,
                timings_ms: seq.timings_ms,
            },
            sampling: SamplingConfig {
                coils: 4,
                accel: 4,
                acs_frac: 0.06,
            },
            noise: NoiseConfig { snr: Some(30.0) },
            recon: ReconSectionConfig {
                iterations: 5,
                hidden_channels: 64,
                dropout: 0.3,
                mc_samples: 20,
                epochs: 50,
                batch: 4,
                lr: 0.01,
                clip: 0.01,
            },
            fit: FitSectionConfig {
                epochs: 200,
                lr: 0.001,
                batch: 1024,
            },
        }
    }

    /// Full-scale defaults mirroring the reference protocol: 160x160,
    /// 8 coils, R = 8, T = 100, 400 slices split 280/60/60, 2000 epochs.
    pub fn paper() -> Self {
        let mut cfg = Self::desk();
        cfg.preset = PresetKind::Paper;
        cfg.phantom.height = 160;
        cfg.phantom.width = 160;
        cfg.phantom.count = 400;
        cfg.sampling.coils = 8;
        cfg.sampling.accel = 8;
        cfg.recon.mc_samples = 100;
        cfg.recon.epochs = 2000;
        cfg.recon.batch = 32;
        cfg.seeds = vec![1, 2, 3, 4, 5];
        cfg.repeats = 5;
        cfg
    }

    pub fn preset_named(kind: PresetKind) -> Self {
        match kind {
            PresetKind::Desk => Self::desk(),
            PresetKind::Paper => Self::paper(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig =
            toml::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<(), ConfigError> {
        let text = toml::to_string_pretty(self).map_err(|e| ConfigError::Serialize(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    /// Effective dropout probability: the w/o-Dropout variant forces p = 0.
    pub fn effective_dropout(&self) -> f64 {
        if self.variant == Variant::WoDropout {
            0.0
        } else {
            self.recon.dropout
        }
    }

    /// Stage-2 guidance flag implied by the variant.
    pub fn guided(&self) -> bool {
        self.variant.guided()
    }

    /// Which parameter the sequence maps to.
    pub fn param_kind(&self) -> ParamKind {
        match self.sequence.kind {
            SequenceKind::T2Prep => ParamKind::T2,
            SequenceKind::Molli => ParamKind::T1,
        }
    }

    /// (train, val, test) phantom counts from the split fractions.
    pub fn split_counts(&self) -> (usize, usize, usize) {
        let n = self.phantom.count;
        let train = (self.phantom.split[0] * n as f64).round() as usize;
        let val = (self.phantom.split[1] * n as f64).round() as usize;
        let test = n.saturating_sub(train + val);
        (train, val, test)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.seeds.is_empty() {
            return Err(ConfigError::Invalid("seeds must be non-empty".into()));
        }
        if self.repeats != self.seeds.len() {
            return Err(ConfigError::Invalid(format!(
                "repeats ({}) must equal the number of seeds ({})",
                self.repeats,
                self.seeds.len()
            )));
        }
        if !(1..=12).contains(&self.sampling.accel) {
            return Err(ConfigError::Invalid(format!(
                "acceleration must lie in 1..=12, got {}",
                self.sampling.accel
            )));
        }
        if !(self.sampling.acs_frac > 0.0 && self.sampling.acs_frac < 1.0) {
            return Err(ConfigError::Invalid(format!(
                "acs_frac must lie in (0, 1), got {}",
                self.sampling.acs_frac
            )));
        }
        if self.sampling.coils == 0 {
            return Err(ConfigError::Invalid("need at least one coil".into()));
        }
        let split_sum: f64 = self.phantom.split.iter().sum();
        if (split_sum - 1.0).abs() > 1e-9 || self.phantom.split.iter().any(|&f| f <= 0.0) {
            return Err(ConfigError::Invalid(format!(
                "split fractions must be positive and sum to 1, got {:?}",
                self.phantom.split
            )));
        }
        let (train, val, test) = self.split_counts();
        if train == 0 || val == 0 || test == 0 {
            return Err(ConfigError::Invalid(format!(
                "split {:?} of {} phantoms leaves an empty subset ({train}/{val}/{test})",
                self.phantom.split, self.phantom.count
            )));
        }
        if self.phantom.regions_min < 1 || self.phantom.regions_min > self.phantom.regions_max {
            return Err(ConfigError::Invalid("bad region count range".into()));
        }
        if !(0.0..1.0).contains(&self.recon.dropout) {
            return Err(ConfigError::Invalid(format!(
                "dropout must lie in [0, 1), got {}",
                self.recon.dropout
            )));
        }
        if self.recon.mc_samples == 0 {
            return Err(ConfigError::Invalid("mc_samples must be at least 1".into()));
        }
        if let Some(snr) = self.noise.snr {
            if snr <= 0.0 {
                return Err(ConfigError::Invalid(format!("snr must be positive, got {snr}")));
            }
        }
        self.sequence
            .preset()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_and_paper_presets_validate() {
        ExperimentConfig::desk().validate().unwrap();
        ExperimentConfig::paper().validate().unwrap();
        assert_eq!(ExperimentConfig::desk().split_counts(), (8, 2, 2));
        assert_eq!(ExperimentConfig::paper().split_counts(), (280, 60, 60));
    }

    #[test]
    fn toml_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        let cfg = ExperimentConfig::desk();
        cfg.save(&path).unwrap();
        let back = ExperimentConfig::load(&path).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        let cfg = ExperimentConfig::desk();
        cfg.save(&path).unwrap();
        let mut text = std::fs::read_to_string(&path).unwrap();
        text.push_str("\n[extra]\nkey = 1\n");
        std::fs::write(&path, &text).unwrap();
        assert!(matches!(
            ExperimentConfig::load(&path),
            Err(ConfigError::Parse(_))
        ));
        // unknown key inside a known section
        let bad = text.replace("[extra]\nkey = 1", "").replace(
            "[sampling]",
            "[sampling]\nmystery = 3",
        );
        std::fs::write(&path, bad).unwrap();
        assert!(matches!(
            ExperimentConfig::load(&path),
            Err(ConfigError::Parse(_))
        ));
    }

    #[test]
    fn missing_fields_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        let cfg = ExperimentConfig::desk();
        cfg.save(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let without: String = text
            .lines()
            .filter(|l| !l.starts_with("repeats"))
            .collect::<Vec<_>>()
            .join("\n");
        std::fs::write(&path, without).unwrap();
        assert!(ExperimentConfig::load(&path).is_err());
    }

    #[test]
    fn variant_consistency_accessors() {
        let mut cfg = ExperimentConfig::desk();
        cfg.variant = Variant::WoDropout;
        assert_eq!(cfg.effective_dropout(), 0.0);
        assert!(!cfg.guided());
        cfg.variant = Variant::Puq;
        assert_eq!(cfg.effective_dropout(), 0.3);
        assert!(cfg.guided());
        assert_eq!(Variant::ablation_rows().len(), 7);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = ExperimentConfig::desk();
        cfg.sampling.accel = 13;
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::desk();
        cfg.repeats = 2;
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::desk();
        cfg.phantom.split = [0.9, 0.05, 0.05];
        // 12 phantoms -> 11/1/0: empty test split
        assert!(cfg.validate().is_err());
    }
}
