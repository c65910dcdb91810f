//! Subcommand implementations. Each takes its parsed arguments and the fully
//! resolved configuration, so a manifest is enough to run it again.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use srus_core::beamform::{das, fwhm};
use srus_core::evaluate::{peak_positions, postfilter, GridImage};
use srus_core::formats::{
    read_frame, read_model_cache, read_psf, sha256_hex, write_atomic, write_frame, write_model_cache, write_psf,
    ModelFingerprint,
};
use srus_core::forward::{build_model, model_from_columns, ForwardModel};
use srus_core::geometry::{element_subset, ImagingMode, Point, SubsetStrategy};
use srus_core::simulate::{
    amplitude_for_snr, fit_power_law, measure_snr, noise_std, realization_seed, run_sweep, simulate_frame, NoiseSpec,
    SweepCell, SweepConfig,
};
use srus_core::solver::{
    alpha_max, fista, fista_continuation, lipschitz_constant, select_alpha, AlphaPolicy, SolverOptions,
};
use srus_core::waveform::{synth_psf, RFFrame, TimeWindow};
use srus_core::{Error, Result};

use crate::config::{DasConfig, PsfConfig, ReconstructConfig, SimulateConfig};

const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeArg {
    Pa,
    Us,
}

impl From<ModeArg> for ImagingMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Pa => ImagingMode::Photoacoustic,
            ModeArg::Us => ImagingMode::PlaneWave,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyArg {
    Regular,
    Random,
}

impl From<StrategyArg> for SubsetStrategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Regular => SubsetStrategy::Regular,
            StrategyArg::Random => SubsetStrategy::Random,
        }
    }
}

/// Record written next to every output; enough to rerun the command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub args: Value,
    pub config: Value,
    pub config_sha256: String,
    /// Input file path -> SHA-256.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub results: Value,
}

impl Manifest {
    fn new<A: Serialize, C: Serialize>(command: &str, args: &A, config: &C) -> Result<Self> {
        let config = serde_json::to_value(config)?;
        Ok(Manifest {
            tool: "srus".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            args: serde_json::to_value(args)?,
            config_sha256: sha256_hex(serde_json::to_string(&config)?.as_bytes()),
            config,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            results: Value::Null,
        })
    }

    fn input(&mut self, path: &Path, bytes: &[u8]) {
        self.inputs.insert(path.display().to_string(), sha256_hex(bytes));
    }

    fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, format!("{}\n", serde_json::to_string_pretty(self)?).as_bytes())
    }
}

fn manifest_beside(file: &Path) -> PathBuf {
    let mut s = file.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn write_output(dir: &Path, name: &str, bytes: &[u8], manifest: &mut Manifest) -> Result<()> {
    write_atomic(&dir.join(name), bytes)?;
    manifest.outputs.push(name.to_string());
    Ok(())
}

fn read_input(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::InvalidInput(format!("cannot read {}: {e}", path.display())))
}

fn points_json(points: &[Point]) -> Value {
    Value::Array(points.iter().map(|p| json!({"x_m": p.x, "z_m": p.z})).collect())
}

fn peak_arrival(frame: &RFFrame) -> f64 {
    let (_, j) = frame
        .samples()
        .indexed_iter()
        .fold(((0, 0), 0.0f64), |best, (ix, v)| if v.abs() > best.1 { (ix, v.abs()) } else { best })
        .0;
    frame.t0 + j as f64 / frame.fs
}

// ---------------------------------------------------------------- synth-psf

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SynthPsfArgs {
    /// JSON config (geometry, pulse, source, window)
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output SRRF file; the sidecar goes to <out>.json
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the configured imaging mode
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
}

pub fn synth_psf_cmd(args: &SynthPsfArgs, mut cfg: PsfConfig) -> Result<Manifest> {
    if let Some(m) = args.mode {
        cfg.mode = m.into();
    }
    let (geometry, grid) = cfg.geometry.to_parts()?;
    let source = cfg.source.unwrap_or_else(|| grid.center());
    let window = cfg.window.unwrap_or_else(|| {
        let mut pts: Vec<Point> = grid.points().collect();
        pts.push(source);
        TimeWindow::covering(&geometry, &pts, &cfg.pulse, cfg.mode)
    });
    cfg.source = Some(source);
    cfg.window = Some(window);
    let psf = synth_psf(&geometry, source, &cfg.pulse, window, cfg.mode)?;
    write_psf(&args.out, &psf)?;
    let arrival = peak_arrival(&psf.frame);
    println!("{}", args.out.display());
    println!("peak arrival {arrival:.6e} s");
    let mut manifest = Manifest::new("synth-psf", args, &cfg)?;
    manifest.outputs = vec![args.out.display().to_string()];
    manifest.results = json!({
        "n_elements": psf.frame.n_elements(),
        "n_samples": psf.frame.n_samples(),
        "mode": cfg.mode,
        "peak_arrival_s": arrival,
    });
    manifest.write(&manifest_beside(&args.out))?;
    Ok(manifest)
}

// ---------------------------------------------------------------- simulate

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    /// JSON config (geometry, pulse, scene, noise)
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output SRRF file
    #[arg(long)]
    pub out: PathBuf,
    /// Target SNR (frame peak over noise sigma)
    #[arg(long)]
    pub snr: Option<f64>,
    /// Noise seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the configured noise sigma
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
}

pub fn simulate_cmd(args: &SimulateArgs, mut cfg: SimulateConfig) -> Result<Manifest> {
    if let Some(m) = args.mode {
        cfg.mode = m.into();
    }
    if let Some(s) = args.snr {
        cfg.snr = Some(s);
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(s) = args.sigma {
        cfg.noise_sigma = s;
    }
    let (geometry, grid) = cfg.geometry.to_parts()?;
    cfg.scene.validate()?;
    let window = cfg.window.unwrap_or_else(|| {
        let mut pts: Vec<Point> = grid.points().collect();
        pts.extend_from_slice(&cfg.scene.sources);
        TimeWindow::covering(&geometry, &pts, &cfg.pulse, cfg.mode)
    });
    cfg.window = Some(window);
    if let Some(snr) = cfg.snr {
        let a = amplitude_for_snr(snr, cfg.noise_sigma, &cfg.scene, &geometry, cfg.mode, &cfg.pulse, window)?;
        cfg.pulse = cfg.pulse.with_amplitude(a);
    }
    let all: Vec<usize> = (0..geometry.n_elements()).collect();
    let noise = NoiseSpec {
        sigma: cfg.noise_sigma,
        seed: cfg.seed,
    };
    let frame = simulate_frame(&cfg.scene, &geometry, &all, cfg.mode, &cfg.pulse, noise, window)?;
    write_frame(&args.out, &frame)?;
    let measured = measure_snr(&frame, window.noise_region()).ok().filter(|v| v.is_finite());
    println!("{}", args.out.display());
    let mut manifest = Manifest::new("simulate", args, &cfg)?;
    manifest.outputs = vec![args.out.display().to_string()];
    manifest.results = json!({
        "pulse_amplitude": cfg.pulse.amplitude,
        "frame_peak": frame.peak_abs(),
        "measured_snr": measured,
        "n_sources": cfg.scene.len(),
    });
    manifest.write(&manifest_beside(&args.out))?;
    Ok(manifest)
}

// ---------------------------------------------------------------- reconstruct

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ReconstructArgs {
    /// PSF SRRF file (with its .json sidecar)
    #[arg(long)]
    pub psf: PathBuf,
    /// Data SRRF file
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of active elements (all when absent)
    #[arg(long)]
    pub elements: Option<usize>,
    #[arg(long, value_enum, default_value = "regular")]
    pub strategy: StrategyArg,
    /// Seed of the random subset strategy
    #[arg(long, default_value_t = 0)]
    pub subset_seed: u64,
    /// Fixed alpha, overriding the configured policy
    #[arg(long, conflicts_with = "alpha_sweep")]
    pub alpha: Option<f64>,
    /// Pick alpha from a regularization path
    #[arg(long)]
    pub alpha_sweep: bool,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

fn check_same_acquisition(psf: &RFFrame, data: &RFFrame) -> Result<()> {
    if psf.mode != data.mode {
        return Err(Error::Mismatch(format!(
            "PSF is {} but data is {}",
            psf.mode.label(),
            data.mode.label()
        )));
    }
    if (psf.fs - data.fs).abs() > 1e-9 * psf.fs {
        return Err(Error::Mismatch("PSF and data sampling rates differ".into()));
    }
    if psf.n_samples() != data.n_samples() || (psf.t0 - data.t0).abs() > 0.5 / psf.fs {
        return Err(Error::Mismatch(format!(
            "PSF window ({} samples from {:e} s) differs from the data window ({} samples from {:e} s)",
            psf.n_samples(),
            psf.t0,
            data.n_samples(),
            data.t0
        )));
    }
    Ok(())
}

pub fn reconstruct_cmd(args: &ReconstructArgs, cfg: ReconstructConfig) -> Result<Manifest> {
    let psf_bytes = read_input(&args.psf)?;
    let data_bytes = read_input(&args.data)?;
    let psf = read_psf(&args.psf)?;
    let data = read_frame(&args.data)?;
    let (geometry, grid) = cfg.geometry.to_parts()?;
    check_same_acquisition(&psf.frame, &data)?;
    let n_total = geometry.n_elements();
    let n = args.elements.unwrap_or(n_total);
    if n > n_total || n > data.n_elements() {
        return Err(Error::Mismatch(format!(
            "{n} elements requested but the array has {n_total} and the data {}",
            data.n_elements()
        )));
    }
    let subset = element_subset(n_total, n, args.strategy.into(), args.subset_seed)?;
    let frame = data.select(&subset)?;
    for (&k, &x) in frame.element_indices.iter().zip(&frame.element_x) {
        if (geometry.element_x()[k] - x).abs() > 1e-9 {
            return Err(Error::Mismatch(format!("data element {k} is not where the geometry puts it")));
        }
    }

    let mut manifest = Manifest::new("reconstruct", args, &cfg)?;
    manifest.input(&args.psf, &psf_bytes);
    manifest.input(&args.data, &data_bytes);

    let model = load_or_build_model(&cfg, &psf_bytes, &psf, &grid, &geometry, &subset)?;
    model.cache_gram();
    let s = frame.flatten();
    let lipschitz = lipschitz_constant(&model, cfg.solver.seed)?;
    let sigma = match cfg.noise_sigma {
        Some(v) => v,
        None => noise_std(&frame, frame.window().noise_region())?,
    };
    let base = SolverOptions {
        lipschitz: Some(lipschitz),
        ..cfg.solver
    };
    let top = alpha_max(&model, &s)?;
    let alpha = if let Some(a) = args.alpha {
        AlphaPolicy::Fixed { alpha: a }.resolve(sigma, 0.0, top)?
    } else if args.alpha_sweep {
        select_alpha(&model, &s, cfg.expected_sources, 20, 1e-3, &base)?.alpha
    } else {
        cfg.alpha.resolve(sigma, model.max_column_norm(), top)?
    };
    let opts = base.with_alpha(alpha);
    let estimate = if cfg.continuation_steps > 0 {
        fista_continuation(&model, &s, &opts, cfg.continuation_steps)?
    } else {
        fista(&model, &s, &opts)?
    };

    let raw = GridImage::from_vector(&grid, &estimate.image)?;
    let filtered = postfilter(&raw, cfg.filter_sigma_m, cfg.fine_step_m)?;
    let peaks = peak_positions(&filtered, cfg.peak_prominence);
    fs::create_dir_all(&args.out)?;
    write_output(&args.out, "raw.csv", raw.to_csv().as_bytes(), &mut manifest)?;
    write_output(&args.out, "filtered.csv", filtered.to_csv().as_bytes(), &mut manifest)?;
    write_output(&args.out, "filtered.pgm", &filtered.to_pgm(), &mut manifest)?;
    write_output(&args.out, "diagnostics.csv", estimate.diagnostics_csv().as_bytes(), &mut manifest)?;
    manifest.results = json!({
        "alpha": alpha,
        "noise_sigma": sigma,
        "lipschitz": lipschitz,
        "iterations": estimate.iterations_run,
        "converged": estimate.converged,
        "final_objective": estimate.final_objective,
        "subset": subset,
        "n_peaks": peaks.len(),
        "peaks": points_json(&peaks),
    });
    manifest.write(&args.out.join(MANIFEST))?;
    println!("alpha {alpha:.6e}, {} iterations, {} peaks", estimate.iterations_run, peaks.len());
    Ok(manifest)
}

fn load_or_build_model(
    cfg: &ReconstructConfig,
    psf_bytes: &[u8],
    psf: &srus_core::waveform::PSFRecord,
    grid: &srus_core::geometry::ImagingGrid,
    geometry: &srus_core::geometry::ArrayGeometry,
    subset: &[usize],
) -> Result<ForwardModel> {
    let mode = psf.frame.mode;
    let Some(cache) = &cfg.model_cache else {
        return build_model(psf, grid, geometry, subset, mode);
    };
    let fingerprint = ModelFingerprint::new(psf_bytes, grid, subset)?;
    if let Some(columns) = read_model_cache(cache, &fingerprint)? {
        return model_from_columns(psf, grid, geometry, subset, mode, columns);
    }
    let model = build_model(psf, grid, geometry, subset, mode)?;
    write_model_cache(cache, model.columns().expect("explicit model"), &fingerprint)?;
    Ok(model)
}

// ---------------------------------------------------------------- das

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct DasArgs {
    /// Data SRRF file
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

pub fn das_cmd(args: &DasArgs, cfg: DasConfig) -> Result<Manifest> {
    let data_bytes = read_input(&args.data)?;
    let data = read_frame(&args.data)?;
    let (geometry, grid) = cfg.geometry.to_parts()?;
    let image = das(&data, &geometry, &grid)?;
    let peaks = peak_positions(&image.image, cfg.peak_prominence);
    let (_, iz) = image.image.argmax();
    let profile = image.image.lateral_profile(image.image.z_at(iz));
    let width = fwhm(&profile, grid.step);

    let mut manifest = Manifest::new("das", args, &cfg)?;
    manifest.input(&args.data, &data_bytes);
    fs::create_dir_all(&args.out)?;
    write_output(&args.out, "das.csv", image.image.to_csv().as_bytes(), &mut manifest)?;
    write_output(&args.out, "das.pgm", &image.image.to_pgm(), &mut manifest)?;
    let mut prof = String::from("x_m,value\n");
    for (ix, v) in profile.iter().enumerate() {
        prof.push_str(&format!("{:e},{:e}\n", image.image.x_at(ix), v));
    }
    write_output(&args.out, "profile.csv", prof.as_bytes(), &mut manifest)?;
    manifest.results = json!({
        "n_peaks": peaks.len(),
        "peaks": points_json(&peaks),
        "fwhm_m": width.as_ref().ok(),
        "fwhm_error": width.as_ref().err().map(|e| e.to_string()),
        "fully_covered": image.fully_covered(),
    });
    manifest.write(&args.out.join(MANIFEST))?;
    match &width {
        Ok(w) => println!("{} peaks, lateral FWHM {:.1} um", peaks.len(), w * 1e6),
        Err(e) => println!("{} peaks, FWHM unavailable: {e}", peaks.len()),
    }
    Ok(manifest)
}

// ---------------------------------------------------------------- sweep

fn positive_list<T: std::str::FromStr + PartialOrd + Default>(s: &str) -> std::result::Result<Vec<T>, String> {
    let out: Vec<T> = s
        .split(',')
        .map(|v| v.trim().parse::<T>().map_err(|_| format!("'{v}' is not a number")))
        .collect::<std::result::Result<_, _>>()?;
    if out.is_empty() || out.iter().any(|v| *v <= T::default()) {
        return Err("values must be positive".into());
    }
    Ok(out)
}

// A type alias keeps clap from treating the list as a repeated flag.
type List<T> = Vec<T>;

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated element counts
    #[arg(long, value_parser = positive_list::<usize>)]
    pub n_list: List<usize>,
    /// Comma-separated SNR values
    #[arg(long, value_parser = positive_list::<f64>)]
    pub snr_list: List<f64>,
    #[arg(long, default_value_t = 100)]
    pub realizations: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    /// Write the first k reconstructions of every cell as PGM
    #[arg(long, default_value_t = 0)]
    pub dump_images: usize,
}

pub fn sweep_cmd(args: &SweepArgs, cfg: SweepConfig) -> Result<Manifest> {
    let (n_list, snr_list) = (&args.n_list, &args.snr_list);
    let result = run_sweep(n_list, snr_list, args.realizations, args.seed, &cfg)?;
    let mut manifest = Manifest::new("sweep", args, &cfg)?;
    fs::create_dir_all(&args.out)?;
    write_output(&args.out, "sweep.csv", result.to_csv().as_bytes(), &mut manifest)?;
    if args.dump_images > 0 {
        fs::create_dir_all(args.out.join("images"))?;
        for &n in n_list {
            let cell = SweepCell::new(&cfg, n)?;
            for (si, &snr) in snr_list.iter().enumerate() {
                let a = cell.amplitude(&cfg, snr)?;
                for r in 0..args.dump_images.min(args.realizations) {
                    let (_, est) = cell.realization(&cfg, a, realization_seed(args.seed, n, si, r))?;
                    let img = GridImage::from_vector(&cell.grid, &est.image)?;
                    let f = postfilter(&img, cfg.filter_sigma_m, cfg.fine_step_m)?;
                    let name = format!("images/n{n}_snr{snr}_r{r}.pgm");
                    write_output(&args.out, &name, &f.to_pgm(), &mut manifest)?;
                }
            }
        }
    }
    let iso: Vec<(usize, Option<f64>)> = n_list.iter().map(|&n| (n, result.iso_snr(n, 0.8))).collect();
    let pts: Vec<(f64, f64)> = iso
        .iter()
        .filter(|(n, _)| *n > 2)
        .filter_map(|&(n, s)| s.map(|s| (n as f64, s)))
        .collect();
    let fit = fit_power_law(&pts).ok();
    manifest.results = json!({
        "rows": result.rows.len(),
        "iso_snr_c080": iso.iter().map(|(n, s)| json!({"n": n, "snr": s})).collect::<Vec<_>>(),
        "power_law": fit,
    });
    manifest.write(&args.out.join(MANIFEST))?;
    print!("{}", result.to_csv());
    Ok(manifest)
}

// ---------------------------------------------------------------- rerun

#[derive(Debug, Clone, Args)]
pub struct RerunArgs {
    /// Manifest written by an earlier run
    pub manifest: PathBuf,
    /// Write outputs here instead of the recorded location
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn from_value<T: serde::de::DeserializeOwned>(v: &Value, what: &str) -> Result<T> {
    serde_json::from_value(v.clone()).map_err(|e| Error::InvalidInput(format!("manifest {what}: {e}")))
}

pub fn rerun_cmd(args: &RerunArgs) -> Result<Manifest> {
    let text = String::from_utf8(read_input(&args.manifest)?)
        .map_err(|_| Error::InvalidInput("manifest is not UTF-8".into()))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::InvalidInput(format!("manifest: {e}")))?;
    let mut recorded = m.args.clone();
    if let (Some(out), Some(obj)) = (&args.out, recorded.as_object_mut()) {
        obj.insert("out".into(), json!(out));
    }
    match m.command.as_str() {
        "synth-psf" => synth_psf_cmd(&from_value(&recorded, "args")?, from_value(&m.config, "config")?),
        "simulate" => simulate_cmd(&from_value(&recorded, "args")?, from_value(&m.config, "config")?),
        "reconstruct" => reconstruct_cmd(&from_value(&recorded, "args")?, from_value(&m.config, "config")?),
        "das" => das_cmd(&from_value(&recorded, "args")?, from_value(&m.config, "config")?),
        "sweep" => sweep_cmd(&from_value(&recorded, "args")?, from_value(&m.config, "config")?),
        other => Err(Error::InvalidInput(format!("manifest names unknown command '{other}'"))),
    }
}
