//! Synthetic sparse scenes, noisy acquisitions and SNR bookkeeping.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::evaluate::{correlation, postfilter, reference_object, GridImage, FILTER_SIGMA, FINE_STEP};
use crate::forward::{build_model, ForwardModel};
use crate::geometry::{
    arrival_time, element_subset, ArrayGeometry, GeometryDescription, ImagingGrid, ImagingMode, Point,
    SubsetStrategy,
};
use crate::solver::{alpha_max, fista, lipschitz_constant, AlphaPolicy, ImageEstimate, SolverOptions};
use crate::waveform::{place_pulse, synth_psf, synth_pulse, PulseParams, RFFrame, Shifter, TimeWindow};

/// Point sources with relative amplitudes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scene {
    pub sources: Vec<Point>,
    pub amplitudes: Vec<f64>,
}

impl Scene {
    pub fn new(sources: Vec<Point>, amplitudes: Vec<f64>) -> Result<Self> {
        let scene = Scene { sources, amplitudes };
        scene.validate()?;
        Ok(scene)
    }

    /// Five equal sources on a lateral line at 15 mm depth, 125 µm apart.
    pub fn default_five() -> Self {
        let sources = [-250e-6, -125e-6, 0.0, 125e-6, 250e-6]
            .iter()
            .map(|&x| Point::new(x, 15e-3))
            .collect();
        Scene {
            sources,
            amplitudes: vec![1.0; 5],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sources.len() != self.amplitudes.len() {
            return Err(invalid(format!(
                "{} sources but {} amplitudes",
                self.sources.len(),
                self.amplitudes.len()
            )));
        }
        if self.amplitudes.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
            return Err(invalid("source amplitudes must be positive and finite"));
        }
        if self.sources.iter().any(|p| !p.is_finite()) {
            return Err(invalid("source coordinates must be finite"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }
}

/// Additive white Gaussian noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub sigma: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn none() -> Self {
        NoiseSpec { sigma: 0.0, seed: 0 }
    }
}

/// RF frame of `scene` recorded on the `subset` elements. Noise is drawn in
/// element-major sample order from a generator seeded with `noise.seed`.
pub fn simulate_frame(
    scene: &Scene,
    geometry: &ArrayGeometry,
    subset: &[usize],
    mode: ImagingMode,
    pulse: &PulseParams,
    noise: NoiseSpec,
    window: TimeWindow,
) -> Result<RFFrame> {
    scene.validate()?;
    if subset.is_empty() || subset.iter().any(|&k| k >= geometry.n_elements()) {
        return Err(invalid("subset indices must be non-empty and within the array"));
    }
    let fs = geometry.sampling_frequency();
    let base = synth_pulse(pulse, fs, pulse.default_duration())?;
    let shifter = Shifter::new(window.n_samples);
    let mut samples = Array2::zeros((subset.len(), window.n_samples));
    let mut scaled = vec![0.0; base.len()];
    for (row, &k) in subset.iter().enumerate() {
        let element = geometry.element(k);
        let mut trace = samples.row_mut(row);
        let slot = trace.as_slice_mut().expect("standard layout");
        for (p, &a) in scene.sources.iter().zip(&scene.amplitudes) {
            scaled.iter_mut().zip(&base).for_each(|(s, b)| *s = a * b);
            let t = arrival_time(*p, element, mode, geometry.sound_speed());
            place_pulse(&scaled, t, window, fs, &shifter, slot)?;
        }
    }
    let mut frame = RFFrame::new(
        samples,
        window.t0,
        fs,
        subset.to_vec(),
        subset.iter().map(|&k| geometry.element_x()[k]).collect(),
        mode,
    )?;
    add_noise(&mut frame, noise)?;
    Ok(frame)
}

/// Adds white Gaussian noise in place. `sigma == 0` leaves the frame untouched.
pub fn add_noise(frame: &mut RFFrame, noise: NoiseSpec) -> Result<()> {
    if !(noise.sigma >= 0.0) || !noise.sigma.is_finite() {
        return Err(invalid("noise sigma must be >= 0 and finite"));
    }
    if noise.sigma == 0.0 {
        return Ok(());
    }
    let dist = Normal::new(0.0, noise.sigma).expect("sigma validated");
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    for v in frame.samples_mut().iter_mut() {
        *v += dist.sample(&mut rng);
    }
    Ok(())
}

/// Samples per element a noise region must hold.
pub const MIN_NOISE_SAMPLES: usize = 100;
const BLOCK: usize = 32;
/// Relative noise level below which a frame counts as noise free.
pub const NOISE_FREE_LEVEL: f64 = 1e-5;

/// Sample standard deviation of `frame` over the sample range `region` of
/// every trace.
///
/// The region is split into blocks of 32 samples per element; a block whose
/// RMS exceeds three times the median block RMS means signal leaked into the
/// region and the measurement is refused. Regions whose deviation is below
/// [`NOISE_FREE_LEVEL`] times the frame peak report 0.
pub fn noise_std(frame: &RFFrame, region: std::ops::Range<usize>) -> Result<f64> {
    if region.end > frame.n_samples() || region.start >= region.end {
        return Err(Error::InvalidRegion(format!(
            "region {region:?} outside 0..{}",
            frame.n_samples()
        )));
    }
    if region.len() < MIN_NOISE_SAMPLES {
        return Err(Error::InvalidRegion(format!(
            "region holds {} samples per element, need at least {MIN_NOISE_SAMPLES}",
            region.len()
        )));
    }
    let samples = frame.samples();
    let parts: Vec<&[f64]> = (0..frame.n_elements())
        .map(|k| &samples.row(k).to_slice().expect("standard layout")[region.clone()])
        .collect();
    let count: usize = parts.iter().map(|p| p.len()).sum();
    let mean = parts.iter().map(|p| p.iter().sum::<f64>()).sum::<f64>() / count as f64;
    let var: f64 = parts
        .iter()
        .map(|p| p.iter().map(|v| (v - mean).powi(2)).sum::<f64>())
        .sum();
    let sigma = (var / (count - 1) as f64).sqrt();
    // truncated pulses leave ringing around 1e-6 of the peak after fractional shifts
    if sigma <= NOISE_FREE_LEVEL * frame.peak_abs() {
        return Ok(0.0);
    }
    let mut block_rms: Vec<f64> = parts
        .iter()
        .flat_map(|p| p.chunks(BLOCK))
        .map(|b| (b.iter().map(|v| v * v).sum::<f64>() / b.len() as f64).sqrt())
        .collect();
    block_rms.sort_by(f64::total_cmp);
    let median = block_rms[block_rms.len() / 2];
    let worst = *block_rms.last().expect("non-empty");
    if worst > 3.0 * median {
        return Err(Error::InvalidRegion(format!(
            "region contains signal: block RMS {worst:e} against median {median:e}"
        )));
    }
    Ok(sigma)
}

/// Peak absolute sample over the noise standard deviation measured in the
/// sample range `region` (see [`noise_std`]). Noise-free frames give `+inf`.
pub fn measure_snr(frame: &RFFrame, region: std::ops::Range<usize>) -> Result<f64> {
    let sigma = noise_std(frame, region)?;
    if sigma == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(frame.peak_abs() / sigma)
}

/// Pulse amplitude that gives a full-array frame peak of `target_snr * sigma`
/// for `scene` (amplitudes act as relative weights). The full array is used
/// so the amplitude for a given SNR does not depend on the element subset.
pub fn amplitude_for_snr(
    target_snr: f64,
    sigma: f64,
    scene: &Scene,
    geometry: &ArrayGeometry,
    mode: ImagingMode,
    pulse: &PulseParams,
    window: TimeWindow,
) -> Result<f64> {
    if sigma == 0.0 {
        return Err(Error::DegenerateNoise);
    }
    if !(target_snr > 0.0) || !target_snr.is_finite() || !(sigma > 0.0) || !sigma.is_finite() {
        return Err(invalid("target SNR and noise sigma must be positive and finite"));
    }
    let all: Vec<usize> = (0..geometry.n_elements()).collect();
    let unit = simulate_frame(
        scene,
        geometry,
        &all,
        mode,
        &pulse.with_amplitude(1.0),
        NoiseSpec::none(),
        window,
    )?;
    let peak = unit.peak_abs();
    if !(peak > 0.0) {
        return Err(Error::DegenerateScene("scene produces no signal".into()));
    }
    Ok(target_snr * sigma / peak)
}

/// Window covering every source of `scene` and `extra` points on the full array.
pub fn scene_window(
    geometry: &ArrayGeometry,
    scene: &Scene,
    extra: &[Point],
    pulse: &PulseParams,
    mode: ImagingMode,
) -> TimeWindow {
    let mut pts = scene.sources.clone();
    pts.extend_from_slice(extra);
    TimeWindow::covering(geometry, &pts, pulse, mode)
}

/// Everything a correlation sweep needs besides the (N, SNR) grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub geometry: GeometryDescription,
    pub pulse: PulseParams,
    pub mode: ImagingMode,
    pub scene: Scene,
    pub noise_sigma: f64,
    /// Position of the calibration PSF; the grid center when absent.
    pub calibration_source: Option<Point>,
    pub solver: SolverOptions,
    pub alpha: AlphaPolicy,
    pub filter_sigma_m: f64,
    pub fine_step_m: f64,
}

/// Noise standard deviation used throughout the simulations.
pub const DEFAULT_NOISE_SIGMA: f64 = 30.0;

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            geometry: GeometryDescription::default(),
            pulse: PulseParams::default(),
            mode: ImagingMode::Photoacoustic,
            scene: Scene::default_five(),
            noise_sigma: DEFAULT_NOISE_SIGMA,
            calibration_source: None,
            solver: SolverOptions {
                max_iters: 50_000,
                rel_tol: 1e-9,
                ..SolverOptions::default()
            },
            alpha: AlphaPolicy::default(),
            filter_sigma_m: FILTER_SIGMA,
            fine_step_m: FINE_STEP,
        }
    }
}

/// One (N, SNR) cell of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: usize,
    pub snr: f64,
    pub mean_correlation: f64,
    pub std_correlation: f64,
    pub n_realizations: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("N,snr,mean_c,std_c,n_realizations\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.n, r.snr, r.mean_correlation, r.std_correlation, r.n_realizations
            ));
        }
        out
    }

    /// Rows for element count `n`, sorted by SNR.
    pub fn curve(&self, n: usize) -> Vec<SweepRow> {
        let mut rows: Vec<SweepRow> = self.rows.iter().copied().filter(|r| r.n == n).collect();
        rows.sort_by(|a, b| a.snr.total_cmp(&b.snr));
        rows
    }

    pub fn get(&self, n: usize, snr: f64) -> Option<SweepRow> {
        self.rows
            .iter()
            .copied()
            .find(|r| r.n == n && (r.snr - snr).abs() <= 1e-9 * snr.abs().max(1.0))
    }

    /// SNR at which the mean correlation of element count `n` first reaches
    /// `level`, interpolated linearly in `log(SNR)`.
    pub fn iso_snr(&self, n: usize, level: f64) -> Option<f64> {
        let curve = self.curve(n);
        if let Some(first) = curve.first() {
            if first.mean_correlation >= level {
                return None;
            }
        }
        curve.windows(2).find_map(|w| {
            let (a, b) = (w[0], w[1]);
            if a.mean_correlation < level && b.mean_correlation >= level {
                let f = (level - a.mean_correlation) / (b.mean_correlation - a.mean_correlation);
                Some((a.snr.ln() + f * (b.snr.ln() - a.snr.ln())).exp())
            } else {
                None
            }
        })
    }
}

/// Least-squares fit of `y = a x^b` in log-log space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub a: f64,
    pub b: f64,
    pub r_squared: f64,
}

pub fn fit_power_law(points: &[(f64, f64)]) -> Result<PowerLawFit> {
    if points.len() < 2 || points.iter().any(|&(x, y)| !(x > 0.0 && y > 0.0)) {
        return Err(invalid("power-law fit needs >= 2 strictly positive points"));
    }
    let n = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ly.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(invalid("power-law fit needs distinct x values"));
    }
    let b = sxy / sxx;
    let a = (my - b * mx).exp();
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(PowerLawFit { a, b, r_squared })
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Noise seed of one realization, derived only from its coordinates.
pub fn realization_seed(base_seed: u64, n: usize, snr_index: usize, realization: usize) -> u64 {
    [n as u64, snr_index as u64, realization as u64]
        .iter()
        .fold(splitmix(base_seed), |acc, &v| splitmix(acc ^ v))
}

/// Mean by pairwise summation, so the result does not depend on how the
/// values were produced.
pub fn pairwise_mean(values: &[f64]) -> f64 {
    fn sum(v: &[f64]) -> f64 {
        if v.len() <= 8 {
            v.iter().sum()
        } else {
            let (a, b) = v.split_at(v.len() / 2);
            sum(a) + sum(b)
        }
    }
    if values.is_empty() {
        return f64::NAN;
    }
    sum(values) / values.len() as f64
}

/// Sample standard deviation (n - 1 denominator); 0 for a single value.
pub fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = pairwise_mean(values);
    let sq: Vec<f64> = values.iter().map(|v| (v - m).powi(2)).collect();
    (pairwise_mean(&sq) * values.len() as f64 / (values.len() - 1) as f64).sqrt()
}

/// Everything shared by the realizations of one element count.
pub struct SweepCell {
    pub subset: Vec<usize>,
    pub model: ForwardModel,
    /// Noise-free scene frame on the subset at unit pulse amplitude.
    pub clean: RFFrame,
    /// Peak of the same frame recorded on the full array.
    pub full_peak: f64,
    pub reference: GridImage,
    pub grid: ImagingGrid,
    pub lipschitz: f64,
    pub column_norm: f64,
}

impl SweepCell {
    /// Builds the regular-subset model and the unit-amplitude scene frame for
    /// `n` elements.
    pub fn new(config: &SweepConfig, n: usize) -> Result<Self> {
        let (geometry, grid) = config.geometry.to_parts()?;
        let subset = element_subset(geometry.n_elements(), n, SubsetStrategy::Regular, 0)?;
        let pulse = config.pulse.with_amplitude(1.0);
        let calibration = config.calibration_source.unwrap_or_else(|| grid.center());
        let mut pts: Vec<Point> = grid.points().collect();
        pts.push(calibration);
        let window = scene_window(&geometry, &config.scene, &pts, &pulse, config.mode);
        let psf = synth_psf(&geometry, calibration, &pulse, window, config.mode)?;
        let model = build_model(&psf, &grid, &geometry, &subset, config.mode)?;
        model.cache_gram();
        let lipschitz = lipschitz_constant(&model, config.solver.seed)?;
        let column_norm = model.max_column_norm();
        let all: Vec<usize> = (0..geometry.n_elements()).collect();
        let full = simulate_frame(&config.scene, &geometry, &all, config.mode, &pulse, NoiseSpec::none(), window)?;
        let clean = full.select(&subset)?;
        let reference = reference_object(&grid, &config.scene, config.filter_sigma_m, config.fine_step_m)?;
        Ok(SweepCell {
            subset,
            model,
            full_peak: full.peak_abs(),
            clean,
            reference,
            grid,
            lipschitz,
            column_norm,
        })
    }

    /// Pulse amplitude that puts the full-array frame peak at `snr * sigma`.
    /// Without noise the frame peak is set to `snr` itself.
    pub fn amplitude(&self, config: &SweepConfig, snr: f64) -> Result<f64> {
        let peak = self.full_peak;
        if !(peak > 0.0) {
            return Err(Error::DegenerateScene("scene produces no signal".into()));
        }
        let sigma = if config.noise_sigma == 0.0 { 1.0 } else { config.noise_sigma };
        Ok(snr * sigma / peak)
    }

    /// Reconstructs one realization and returns its correlation with the
    /// reference object.
    pub fn realization(&self, config: &SweepConfig, amplitude: f64, seed: u64) -> Result<(f64, ImageEstimate)> {
        let mut frame = self.clean.scaled(amplitude);
        add_noise(
            &mut frame,
            NoiseSpec {
                sigma: config.noise_sigma,
                seed,
            },
        )?;
        let data = frame.flatten();
        let top = alpha_max(&self.model, &data)?;
        let alpha = config.alpha.resolve(config.noise_sigma, self.column_norm, top)?;
        let opts = SolverOptions {
            alpha,
            lipschitz: Some(self.lipschitz),
            ..config.solver
        };
        let estimate = fista(&self.model, &data, &opts)?;
        let image = GridImage::from_vector(&self.grid, &estimate.image)?;
        let filtered = postfilter(&image, config.filter_sigma_m, config.fine_step_m)?;
        Ok((correlation(&filtered, &self.reference)?, estimate))
    }
}

/// Mean and spread of the correlation over `realizations` noise draws for
/// every (N, SNR) pair. Realizations run in parallel; results do not depend
/// on the thread count.
pub fn run_sweep(
    n_list: &[usize],
    snr_list: &[f64],
    realizations: usize,
    base_seed: u64,
    config: &SweepConfig,
) -> Result<SweepResult> {
    if n_list.is_empty() || snr_list.is_empty() || realizations == 0 {
        return Err(invalid("sweep needs element counts, SNR values and >= 1 realization"));
    }
    if snr_list.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
        return Err(invalid("SNR values must be positive and finite"));
    }
    let mut rows = Vec::with_capacity(n_list.len() * snr_list.len());
    for &n in n_list {
        let cell = SweepCell::new(config, n)?;
        for (si, &snr) in snr_list.iter().enumerate() {
            let amplitude = cell.amplitude(config, snr)?;
            let values: Vec<f64> = (0..realizations)
                .into_par_iter()
                .map(|r| {
                    cell.realization(config, amplitude, realization_seed(base_seed, n, si, r))
                        .map(|(c, _)| c)
                })
                .collect::<Result<_>>()?;
            rows.push(SweepRow {
                n,
                snr,
                mean_correlation: pairwise_mean(&values),
                std_correlation: sample_std(&values),
                n_realizations: realizations,
            });
        }
    }
    Ok(SweepResult { rows })
}
