//! JSON configuration of every subcommand.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use srus_core::evaluate::{FILTER_SIGMA, FINE_STEP};
use srus_core::geometry::{GeometryDescription, ImagingMode, Point};
use srus_core::simulate::{Scene, DEFAULT_NOISE_SIGMA};
use srus_core::solver::{AlphaPolicy, SolverOptions};
use srus_core::waveform::{PulseParams, TimeWindow};
use srus_core::{Error, Result};

/// Directory searched for `<command>.json` when no `--config` is given.
pub const CONFIG_DIR_ENV: &str = "SRUS_CONFIG_DIR";

/// Reads `path` into `T`, reporting the offending field on schema errors.
pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::InvalidInput(format!("cannot read config {}: {e}", path.display())))?;
    parse(&text).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))
}

pub fn parse<T: DeserializeOwned>(text: &str) -> std::result::Result<T, String> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        if path == "." {
            e.inner().to_string()
        } else {
            format!("field `{path}`: {}", e.inner())
        }
    })
}

/// Explicit path, else `$SRUS_CONFIG_DIR/<command>.json` if present, else defaults.
pub fn resolve<T: DeserializeOwned + Default>(explicit: Option<&Path>, command: &str) -> Result<(T, Option<PathBuf>)> {
    if let Some(p) = explicit {
        return Ok((load(p)?, Some(p.to_path_buf())));
    }
    if let Ok(dir) = std::env::var(CONFIG_DIR_ENV) {
        let p = Path::new(&dir).join(format!("{command}.json"));
        if p.exists() {
            return Ok((load(&p)?, Some(p)));
        }
    }
    Ok((T::default(), None))
}

fn sweep_solver() -> SolverOptions {
    SolverOptions {
        max_iters: 50_000,
        rel_tol: 1e-9,
        ..SolverOptions::default()
    }
}

fn half() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PsfConfig {
    pub geometry: GeometryDescription,
    pub pulse: PulseParams,
    pub mode: ImagingMode,
    /// Calibration source; the grid center when absent.
    pub source: Option<Point>,
    /// Acquisition window; covers the grid and the source when absent.
    pub window: Option<TimeWindow>,
}

impl Default for PsfConfig {
    fn default() -> Self {
        PsfConfig {
            geometry: GeometryDescription::default(),
            pulse: PulseParams::default(),
            mode: ImagingMode::Photoacoustic,
            source: None,
            window: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub geometry: GeometryDescription,
    pub pulse: PulseParams,
    pub mode: ImagingMode,
    pub scene: Scene,
    pub noise_sigma: f64,
    pub seed: u64,
    /// Target SNR; when set the pulse amplitude is derived from it.
    pub snr: Option<f64>,
    /// Acquisition window; covers the grid and the scene when absent.
    pub window: Option<TimeWindow>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            geometry: GeometryDescription::default(),
            pulse: PulseParams::default(),
            mode: ImagingMode::Photoacoustic,
            scene: Scene::default_five(),
            noise_sigma: DEFAULT_NOISE_SIGMA,
            seed: 0,
            snr: None,
            window: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconstructConfig {
    pub geometry: GeometryDescription,
    pub solver: SolverOptions,
    pub alpha: AlphaPolicy,
    /// Noise level for the alpha policy; estimated from the leading
    /// signal-free samples of the data when absent.
    pub noise_sigma: Option<f64>,
    /// Number of warm-started intermediate alphas (0 solves directly).
    pub continuation_steps: usize,
    /// Sources the automatic alpha search expects.
    pub expected_sources: usize,
    pub filter_sigma_m: f64,
    pub fine_step_m: f64,
    #[serde(default = "half")]
    pub peak_prominence: f64,
    /// Optional explicit-model cache file.
    pub model_cache: Option<PathBuf>,
}

impl Default for ReconstructConfig {
    fn default() -> Self {
        ReconstructConfig {
            geometry: GeometryDescription::default(),
            solver: sweep_solver(),
            alpha: AlphaPolicy::default(),
            noise_sigma: None,
            continuation_steps: 0,
            expected_sources: 5,
            filter_sigma_m: FILTER_SIGMA,
            fine_step_m: FINE_STEP,
            peak_prominence: 0.5,
            model_cache: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DasConfig {
    pub geometry: GeometryDescription,
    pub peak_prominence: f64,
}

impl Default for DasConfig {
    fn default() -> Self {
        DasConfig {
            geometry: GeometryDescription::default(),
            peak_prominence: 0.5,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_fields_are_named() {
        let err = parse::<PsfConfig>(r#"{"pulse": {"center_frequency_hz": 1e7, "bogus": 1}}"#).unwrap_err();
        assert!(err.contains("pulse"), "{err}");
        let err = parse::<ReconstructConfig>(r#"{"solver": {"max_iters": -1}}"#).unwrap_err();
        assert!(err.contains("solver.max_iters"), "{err}");
    }

    #[test]
    fn defaults_round_trip() {
        let c = ReconstructConfig::default();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(parse::<ReconstructConfig>(&text).unwrap(), c);
        let s = SimulateConfig::default();
        let text = serde_json::to_string(&s).unwrap();
        assert_eq!(parse::<SimulateConfig>(&text).unwrap(), s);
        assert_eq!(parse::<PsfConfig>("{}").unwrap(), PsfConfig::default());
    }

    #[test]
    fn alpha_policy_schema() {
        let c: ReconstructConfig = parse(r#"{"alpha": {"rule": "fixed", "alpha": 2.0}}"#).unwrap();
        assert_eq!(c.alpha, AlphaPolicy::Fixed { alpha: 2.0 });
        let c: ReconstructConfig = parse(r#"{"alpha": {"rule": "noise_scaled", "factor": 2.0}}"#).unwrap();
        assert!(matches!(c.alpha, AlphaPolicy::NoiseScaled { factor, .. } if factor == 2.0));
        assert!(parse::<ReconstructConfig>(r#"{"alpha": {"rule": "magic"}}"#).is_err());
    }
}
