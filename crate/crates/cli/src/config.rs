//! Experiment configuration, result rows, and config hashing.

use anyhow::{bail, Result};
use serde::{Deserialize, Serialize};

use ebsdcs_core::bpfa::{BpfaParams, MapKind};
use ebsdcs_core::map::ProbeGrid;
use ebsdcs_core::noise::NoiseKind;
use ebsdcs_core::pattern::PatternParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKindCfg {
    None,
    Gaussian,
    Poisson,
}

impl NoiseKindCfg {
    pub fn to_core(self) -> NoiseKind {
        match self {
            Self::None => NoiseKind::None,
            Self::Gaussian => NoiseKind::Gaussian,
            Self::Poisson => NoiseKind::Poisson,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Gaussian => "gaussian",
            Self::Poisson => "poisson",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "gaussian" => Ok(Self::Gaussian),
            "poisson" => Ok(Self::Poisson),
            other => bail!("unknown noise kind '{other}'"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapKindCfg {
    Bc,
    Ipf,
}

impl MapKindCfg {
    pub fn to_core(self) -> MapKind {
        match self {
            Self::Bc => MapKind::BandContrast,
            Self::Ipf => MapKind::Ipf,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::Bc => "bc",
            Self::Ipf => "ipf",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "bc" => Ok(Self::Bc),
            "ipf" => Ok(Self::Ipf),
            other => bail!("unknown map kind '{other}'"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyCfg {
    Uds,
    Linehop,
}

impl StrategyCfg {
    pub fn label(self) -> &'static str {
        match self {
            Self::Uds => "uds",
            Self::Linehop => "linehop",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "uds" => Ok(Self::Uds),
            "linehop" => Ok(Self::Linehop),
            other => bail!("unknown sampling strategy '{other}'"),
        }
    }
}

/// Everything an experiment run needs; serializable so a run is one file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub height: usize,
    pub width: usize,
    pub n_grains: usize,
    pub boundary_contrast: f64,
    pub pattern_height: usize,
    pub pattern_width: usize,
    pub n_bands: usize,
    pub band_width: f64,
    pub band_amplitude: f64,
    pub noise_kinds: Vec<NoiseKindCfg>,
    pub snrs_db: Vec<f64>,
    pub strategy: StrategyCfg,
    pub rates: Vec<f64>,
    pub seeds: Vec<u64>,
    pub map_kinds: Vec<MapKindCfg>,
    /// Merge detected ZSPs into the unsampled set before inpainting.
    pub merge_zsp_ipf: bool,
    pub merge_zsp_bc: bool,
    /// When set, the ZSP study plants this fraction of sampled pixels as
    /// failures instead of using a noise arm.
    pub plant_zsp_fraction: Option<f64>,
    pub n_atoms: usize,
    pub sparsity: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub em_iters_per_batch: usize,
    /// Independent fits per inpaint; lowest observed-pixel residual wins.
    pub restarts: usize,
    /// Copy observed pixel values over the reconstruction.
    pub reimpose_samples: bool,
    /// Patterns are synthesized and indexed in chunks of this many probes.
    pub chunk_size: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            n_grains: 8,
            boundary_contrast: 0.2,
            pattern_height: 64,
            pattern_width: 48,
            n_bands: 5,
            band_width: 3.0,
            band_amplitude: 2.0,
            noise_kinds: vec![NoiseKindCfg::None],
            snrs_db: Vec::new(),
            strategy: StrategyCfg::Uds,
            rates: vec![0.01, 0.05, 0.10, 0.15, 0.20, 0.25],
            seeds: vec![0],
            map_kinds: vec![MapKindCfg::Bc, MapKindCfg::Ipf],
            merge_zsp_ipf: true,
            merge_zsp_bc: false,
            plant_zsp_fraction: None,
            n_atoms: 25,
            sparsity: 4,
            batch_size: 1024,
            epochs: 4,
            em_iters_per_batch: 3,
            restarts: 1,
            reimpose_samples: false,
            chunk_size: 1024,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            bail!("probe grid must be non-empty");
        }
        if self.n_grains == 0 {
            bail!("phantom needs at least one grain");
        }
        if self.seeds.is_empty() {
            bail!("at least one seed is required");
        }
        if self.rates.iter().any(|&r| !(r > 0.0 && r <= 1.0)) {
            bail!("rates must lie in (0, 1]");
        }
        if let Some(f) = self.plant_zsp_fraction {
            if !(0.0..1.0).contains(&f) {
                bail!("planted ZSP fraction must lie in [0, 1)");
            }
        }
        if self.map_kinds.is_empty() {
            bail!("at least one map kind is required");
        }
        if self.chunk_size == 0 {
            bail!("chunk size must be positive");
        }
        self.bpfa_params(0).validate()?;
        self.pattern_params().validate()?;
        Ok(())
    }

    pub fn grid(&self) -> Result<ProbeGrid> {
        Ok(ProbeGrid::new(self.height, self.width)?)
    }

    pub fn pattern_params(&self) -> PatternParams<f64> {
        PatternParams {
            height: self.pattern_height,
            width: self.pattern_width,
            n_bands: self.n_bands,
            band_width: self.band_width,
            amplitude: self.band_amplitude,
        }
    }

    pub fn bpfa_params(&self, seed: u64) -> BpfaParams {
        BpfaParams {
            n_atoms: self.n_atoms,
            sparsity: self.sparsity,
            batch_size: self.batch_size,
            epochs: self.epochs,
            em_iters_per_batch: self.em_iters_per_batch,
            restarts: self.restarts,
            seed,
            ..BpfaParams::default()
        }
    }

    /// FNV-1a over the canonical JSON form; stamped into sidecars so a map
    /// file can be traced to the exact configuration that produced it.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in text.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{h:016x}")
    }
}

/// One CSV line of an experiment study.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub study: String,
    pub seed: u64,
    pub noise_kind: String,
    pub target_snr_db: Option<f64>,
    pub measured_snr_db: Option<f64>,
    pub strategy: String,
    pub rate: f64,
    pub effective_rate: f64,
    pub map_kind: String,
    /// "on"/"off" for ZSP-correction arms, empty elsewhere.
    pub zsp_correction: String,
    pub hit_rate: f64,
    pub hit_rate_sampled: f64,
    pub normalized_error: f64,
    pub ssim: f64,
    pub wall_time_s: f64,
}

impl ResultRow {
    pub fn to_csv_line(&self) -> String {
        let opt = |v: &Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{:.3}",
            self.study,
            self.seed,
            self.noise_kind,
            opt(&self.target_snr_db),
            opt(&self.measured_snr_db),
            self.strategy,
            self.rate,
            self.effective_rate,
            self.map_kind,
            self.zsp_correction,
            self.hit_rate,
            self.hit_rate_sampled,
            self.normalized_error,
            self.ssim,
            self.wall_time_s,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_and_hash_is_stable() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.hash(), cfg.hash());
        let mut other = cfg.clone();
        other.seeds = vec![1];
        assert_ne!(cfg.hash(), other.hash());
    }

    #[test]
    fn bad_configs_are_rejected() {
        let mut cfg = ExperimentConfig::default();
        cfg.rates = vec![0.0];
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.seeds.clear();
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.plant_zsp_fraction = Some(1.0);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn rows_serialize_with_empty_optionals() {
        let row = ResultRow {
            study: "sweep".into(),
            seed: 3,
            noise_kind: "none".into(),
            target_snr_db: None,
            measured_snr_db: None,
            strategy: "uds".into(),
            rate: 0.25,
            effective_rate: 0.25,
            map_kind: "bc".into(),
            zsp_correction: String::new(),
            hit_rate: 1.0,
            hit_rate_sampled: 1.0,
            normalized_error: 0.125,
            ssim: 0.99,
            wall_time_s: 1.23456,
        };
        assert_eq!(
            row.to_csv_line(),
            "sweep,3,none,,,uds,0.25,0.25,bc,,1,1,0.125,0.99,1.235"
        );
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = ExperimentConfig {
            snrs_db: vec![5.0, -5.0],
            noise_kinds: vec![NoiseKindCfg::Gaussian, NoiseKindCfg::Poisson],
            plant_zsp_fraction: Some(0.23),
            ..ExperimentConfig::default()
        };
        let text = serde_json::to_string(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back.hash(), cfg.hash());
    }
}
