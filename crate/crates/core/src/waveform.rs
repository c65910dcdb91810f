//! Pulse synthesis, band-limited fractional delays and envelope detection.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{Array2, ArrayView1};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{arrival_time, ArrayGeometry, ImagingMode, Point};

/// Gaussian-windowed sine burst.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PulseParams {
    #[serde(rename = "center_frequency_hz")]
    pub center_frequency: f64,
    /// Full -6 dB bandwidth divided by the center frequency.
    pub fractional_bandwidth: f64,
    pub amplitude: f64,
}

impl Default for PulseParams {
    fn default() -> Self {
        PulseParams {
            center_frequency: 15e6,
            fractional_bandwidth: 0.6,
            amplitude: 1.0,
        }
    }
}

impl PulseParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.center_frequency > 0.0) || !self.center_frequency.is_finite() {
            return Err(invalid("pulse center frequency must be positive"));
        }
        if !(self.fractional_bandwidth > 0.0 && self.fractional_bandwidth < 2.0) {
            return Err(invalid("fractional bandwidth must lie in (0, 2)"));
        }
        if !self.amplitude.is_finite() {
            return Err(invalid("pulse amplitude must be finite"));
        }
        Ok(())
    }

    /// Standard deviation of the Gaussian time window. The spectrum of
    /// `exp(-t^2 / 2s^2)` falls to half amplitude at `sqrt(2 ln 2) / (2 pi s)`
    /// from the carrier.
    pub fn sigma_t(&self) -> f64 {
        (2.0 * 2f64.ln()).sqrt() / (PI * self.fractional_bandwidth * self.center_frequency)
    }

    /// Window length used when a caller does not pick one: +-5 sigma.
    pub fn default_duration(&self) -> f64 {
        10.0 * self.sigma_t()
    }

    pub fn with_amplitude(self, amplitude: f64) -> Self {
        PulseParams { amplitude, ..self }
    }
}

/// Samples `A exp(-t^2 / 2 sigma^2) sin(2 pi fc t)` on an odd-length grid
/// centered on `t = 0`, scaled so the largest sample magnitude equals `A`.
pub fn synth_pulse(params: &PulseParams, fs: f64, duration: f64) -> Result<Vec<f64>> {
    params.validate()?;
    if !(fs >= 4.0 * params.center_frequency) {
        return Err(Error::Aliasing {
            fs,
            fc: params.center_frequency,
        });
    }
    let sigma = params.sigma_t();
    if !(duration >= 6.0 * sigma) {
        return Err(invalid(format!(
            "pulse duration {duration:e} s is shorter than 6 sigma ({:e} s)",
            6.0 * sigma
        )));
    }
    let half = (duration * fs / 2.0).floor() as i64;
    let unit: Vec<f64> = (-half..=half)
        .map(|i| {
            let t = i as f64 / fs;
            (-t * t / (2.0 * sigma * sigma)).exp() * (2.0 * PI * params.center_frequency * t).sin()
        })
        .collect();
    let peak = unit.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(unit.into_iter().map(|v| params.amplitude * v / peak).collect())
}

/// Band-limited shifter for signals of one fixed length. Signals are
/// zero-padded to a power of two at least twice their length so that content
/// pushed past either edge lands in the padding and is discarded.
pub struct Shifter {
    len: usize,
    padded: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Shifter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Shifter")
            .field("len", &self.len)
            .field("padded", &self.padded)
            .finish()
    }
}

impl Shifter {
    pub fn new(len: usize) -> Self {
        let padded = (2 * len.max(1)).next_power_of_two();
        let mut planner = FftPlanner::new();
        Shifter {
            len,
            padded,
            forward: planner.plan_fft_forward(padded),
            inverse: planner.plan_fft_inverse(padded),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn padded_len(&self) -> usize {
        self.padded
    }

    pub fn spectrum(&self, signal: &[f64]) -> Vec<Complex64> {
        debug_assert_eq!(signal.len(), self.len);
        let mut buf = vec![Complex64::new(0.0, 0.0); self.padded];
        for (b, &s) in buf.iter_mut().zip(signal) {
            b.re = s;
        }
        self.forward.process(&mut buf);
        buf
    }

    /// Phase ramp for a delay of `delay_samples`, Hermitian so that the
    /// shifted signal stays real. The Nyquist bin gets `cos(pi d)`.
    pub fn ramp(&self, delay_samples: f64, out: &mut [Complex64]) {
        let p = self.padded;
        let half = p / 2;
        let w = -2.0 * PI * delay_samples / p as f64;
        out[0] = Complex64::new(1.0, 0.0);
        for f in 1..half {
            let (s, c) = (w * f as f64).sin_cos();
            out[f] = Complex64::new(c, s);
            out[p - f] = Complex64::new(c, -s);
        }
        if p >= 2 {
            out[half] = Complex64::new((PI * delay_samples).cos(), 0.0);
        }
    }

    /// Inverse transform of a Hermitian spectrum, cropped to the signal length.
    pub fn synthesize(&self, spec: &mut [Complex64], out: &mut [f64]) {
        self.inverse.process(spec);
        let scale = 1.0 / self.padded as f64;
        for (o, s) in out.iter_mut().zip(spec.iter()) {
            *o = s.re * scale;
        }
    }

    /// Shift a precomputed spectrum by `delay_samples` into `out`.
    pub fn shift_spectrum(
        &self,
        spectrum: &[Complex64],
        delay_samples: f64,
        out: &mut [f64],
        scratch: &mut Vec<Complex64>,
    ) {
        scratch.resize(self.padded, Complex64::new(0.0, 0.0));
        self.ramp(delay_samples, scratch);
        for (s, x) in scratch.iter_mut().zip(spectrum) {
            *s *= x;
        }
        self.synthesize(scratch, out);
    }

    pub fn shift(&self, signal: &[f64], delay_samples: f64) -> Vec<f64> {
        let spec = self.spectrum(signal);
        let mut out = vec![0.0; self.len];
        let mut scratch = Vec::new();
        self.shift_spectrum(&spec, delay_samples, &mut out, &mut scratch);
        out
    }
}

/// Delays `signal` by `delay` seconds (positive = later) on the same sample grid.
pub fn fractional_delay(signal: &[f64], delay: f64, fs: f64) -> Result<Vec<f64>> {
    if !(fs > 0.0) || !delay.is_finite() {
        return Err(invalid("fractional delay needs fs > 0 and a finite delay"));
    }
    let d = delay * fs;
    if d.abs() >= signal.len() as f64 {
        return Err(invalid(format!(
            "delay of {d:.3} samples exceeds the {}-sample window",
            signal.len()
        )));
    }
    if d == 0.0 {
        return Ok(signal.to_vec());
    }
    Ok(Shifter::new(signal.len()).shift(signal, d))
}

/// Discrete analytic signal: negative frequencies removed, positive ones doubled.
pub fn analytic_signal(signal: &[f64]) -> Result<Vec<Complex64>> {
    let n = signal.len();
    if n < 4 {
        return Err(invalid("analytic signal needs at least 4 samples"));
    }
    let mut planner = FftPlanner::new();
    let mut buf: Vec<Complex64> = signal.iter().map(|&s| Complex64::new(s, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    let half = n / 2;
    for (f, b) in buf.iter_mut().enumerate() {
        let weight = if f == 0 || (n % 2 == 0 && f == half) {
            1.0
        } else if f < n.div_ceil(2) {
            2.0
        } else {
            0.0
        };
        *b *= weight / n as f64;
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    Ok(buf)
}

/// Magnitude of the discrete analytic signal.
pub fn envelope(signal: &[f64]) -> Result<Vec<f64>> {
    Ok(analytic_signal(signal)?.iter().map(|b| b.norm()).collect())
}

/// Signal-free samples [`TimeWindow::covering`] leaves at the start of a window.
pub const MIN_PRE_ROLL: usize = 110;

/// Start time and length of an acquisition window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeWindow {
    #[serde(rename = "t0_s")]
    pub t0: f64,
    pub n_samples: usize,
}

impl TimeWindow {
    /// Window in which every arrival from `points` (plus the pulse half
    /// length) fits, with the earliest energy landing after the first 20 % of
    /// the window and after at least [`MIN_PRE_ROLL`] samples. `t0` is snapped
    /// to the sample grid.
    pub fn covering(
        geometry: &ArrayGeometry,
        points: &[Point],
        pulse: &PulseParams,
        mode: ImagingMode,
    ) -> Self {
        let fs = geometry.sampling_frequency();
        let c = geometry.sound_speed();
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for p in points {
            for k in 0..geometry.n_elements() {
                let t = arrival_time(*p, geometry.element(k), mode, c);
                lo = lo.min(t);
                hi = hi.max(t);
            }
        }
        let half_pulse = 0.5 * pulse.default_duration() + 2.0 / fs;
        let first = lo - half_pulse;
        let span = hi + half_pulse - first;
        let n_signal = (span * fs).ceil() as usize + 1;
        let pre_roll = ((n_signal as f64 / 4.0).ceil() as usize).max(MIN_PRE_ROLL);
        let n_samples = n_signal + pre_roll;
        let t0 = ((first * fs).floor() - pre_roll as f64) / fs;
        TimeWindow { t0, n_samples }
    }

    pub fn duration(&self, fs: f64) -> f64 {
        self.n_samples as f64 / fs
    }

    /// Leading samples treated as signal free: the first 15 % of the window,
    /// but never fewer than 100.
    pub fn noise_region(&self) -> std::ops::Range<usize> {
        0..((0.15 * self.n_samples as f64).ceil() as usize).max(100).min(self.n_samples)
    }
}

/// RF samples for a set of elements, stored element-major: row `k` is the
/// trace of element `element_indices[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RFFrame {
    samples: Array2<f64>,
    pub t0: f64,
    pub fs: f64,
    pub element_indices: Vec<usize>,
    pub element_x: Vec<f64>,
    pub mode: ImagingMode,
}

impl RFFrame {
    pub fn new(
        samples: Array2<f64>,
        t0: f64,
        fs: f64,
        element_indices: Vec<usize>,
        element_x: Vec<f64>,
        mode: ImagingMode,
    ) -> Result<Self> {
        let (n_el, _) = samples.dim();
        if element_indices.len() != n_el || element_x.len() != n_el {
            return Err(invalid("frame metadata does not match the sample matrix"));
        }
        if !(fs > 0.0) || !t0.is_finite() {
            return Err(invalid("frame needs fs > 0 and a finite t0"));
        }
        if element_indices.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("frame columns must be in ascending element order"));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(invalid("frame samples must be finite"));
        }
        Ok(RFFrame {
            samples: samples.as_standard_layout().into_owned(),
            t0,
            fs,
            element_indices,
            element_x,
            mode,
        })
    }

    pub fn n_elements(&self) -> usize {
        self.samples.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.samples.ncols()
    }

    pub fn samples(&self) -> &Array2<f64> {
        &self.samples
    }

    pub fn trace(&self, k: usize) -> ArrayView1<'_, f64> {
        self.samples.row(k)
    }

    pub fn window(&self) -> TimeWindow {
        TimeWindow {
            t0: self.t0,
            n_samples: self.n_samples(),
        }
    }

    /// Data vector in element-major order.
    pub fn flatten(&self) -> Vec<f64> {
        self.samples.iter().copied().collect()
    }

    pub fn peak_abs(&self) -> f64 {
        self.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Keeps only the listed physical elements, in ascending order.
    pub fn select(&self, elements: &[usize]) -> Result<RFFrame> {
        let mut rows = Vec::with_capacity(elements.len());
        for e in elements {
            let row = self
                .element_indices
                .iter()
                .position(|x| x == e)
                .ok_or_else(|| Error::Mismatch(format!("element {e} is not present in the frame")))?;
            rows.push(row);
        }
        let n = self.n_samples();
        let mut out = Array2::zeros((rows.len(), n));
        for (dst, &src) in rows.iter().enumerate() {
            out.row_mut(dst).assign(&self.samples.row(src));
        }
        RFFrame::new(
            out,
            self.t0,
            self.fs,
            rows.iter().map(|&r| self.element_indices[r]).collect(),
            rows.iter().map(|&r| self.element_x[r]).collect(),
            self.mode,
        )
    }

    pub fn scaled(&self, factor: f64) -> RFFrame {
        RFFrame {
            samples: &self.samples * factor,
            ..self.clone()
        }
    }

    pub(crate) fn samples_mut(&mut self) -> &mut Array2<f64> {
        &mut self.samples
    }
}

/// Calibration measurement: the frame recorded for a single point source.
#[derive(Debug, Clone, PartialEq)]
pub struct PSFRecord {
    pub frame: RFFrame,
    pub source: Point,
}

/// Places `pulse` (odd length, centered) so that its center lands at
/// `arrival` inside `window`, using an integer placement plus a sub-sample
/// band-limited shift.
pub(crate) fn place_pulse(
    pulse: &[f64],
    arrival: f64,
    window: TimeWindow,
    fs: f64,
    shifter: &Shifter,
    out: &mut [f64],
) -> Result<()> {
    let n = window.n_samples;
    let center = (pulse.len() / 2) as i64;
    let pos = (arrival - window.t0) * fs;
    let whole = pos.round();
    let start = whole as i64 - center;
    let end = start + pulse.len() as i64;
    if start < 0 || end > n as i64 {
        return Err(Error::WindowTooSmall(format!(
            "arrival at {arrival:e} s falls outside [{:e}, {:e}] s",
            window.t0,
            window.t0 + window.duration(fs)
        )));
    }
    let mut buf = vec![0.0; n];
    buf[start as usize..end as usize].copy_from_slice(pulse);
    let frac = pos - whole;
    if frac != 0.0 {
        buf = shifter.shift(&buf, frac);
    }
    for (o, b) in out.iter_mut().zip(&buf) {
        *o += b;
    }
    Ok(())
}

/// Simulated calibration frame for a point source at `source`, recorded on
/// every element of `geometry`.
pub fn synth_psf(
    geometry: &ArrayGeometry,
    source: Point,
    params: &PulseParams,
    window: TimeWindow,
    mode: ImagingMode,
) -> Result<PSFRecord> {
    let fs = geometry.sampling_frequency();
    let pulse = synth_pulse(params, fs, params.default_duration())?;
    let n_el = geometry.n_elements();
    let shifter = Shifter::new(window.n_samples);
    let mut samples = Array2::zeros((n_el, window.n_samples));
    for k in 0..n_el {
        let t = arrival_time(source, geometry.element(k), mode, geometry.sound_speed());
        let mut row = samples.row_mut(k);
        let slot = row.as_slice_mut().expect("standard layout");
        place_pulse(&pulse, t, window, fs, &shifter, slot)?;
    }
    let frame = RFFrame::new(
        samples,
        window.t0,
        fs,
        (0..n_el).collect(),
        geometry.element_x().to_vec(),
        mode,
    )?;
    Ok(PSFRecord { frame, source })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const FS: f64 = 62.5e6;

    fn unit_pulse() -> Vec<f64> {
        let p = PulseParams::default();
        synth_pulse(&p, FS, p.default_duration()).unwrap()
    }

    /// Pulse embedded in a longer window, centered.
    fn padded_pulse(len: usize) -> Vec<f64> {
        let p = unit_pulse();
        let mut out = vec![0.0; len];
        let start = len / 2 - p.len() / 2;
        out[start..start + p.len()].copy_from_slice(&p);
        out
    }

    #[test]
    fn zero_amplitude_pulse() {
        let p = PulseParams::default().with_amplitude(0.0);
        let w = synth_pulse(&p, FS, p.default_duration()).unwrap();
        assert!(w.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pulse_peak_and_symmetry() {
        let w = unit_pulse();
        assert_eq!(w.len() % 2, 1);
        let peak = w.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert_relative_eq!(peak, 1.0, max_relative = 1e-12);
        let n = w.len();
        for i in 0..n {
            assert_relative_eq!(w[i], -w[n - 1 - i], epsilon = 1e-15);
        }
    }

    #[test]
    fn pulse_spectrum_peaks_at_carrier() {
        let padded = padded_pulse(1024);
        let n = padded.len();
        // plain DFT, no FFT
        let mag = |f: usize| {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, &x) in padded.iter().enumerate() {
                let ph = -2.0 * PI * (f * t) as f64 / n as f64;
                re += x * ph.cos();
                im += x * ph.sin();
            }
            re.hypot(im)
        };
        let best = (0..n / 2).max_by(|&a, &b| mag(a).total_cmp(&mag(b))).unwrap();
        let expected = (15e6 / FS * n as f64).round() as usize;
        assert!(best.abs_diff(expected) <= 1, "peak bin {best}, expected {expected}");
    }

    #[test]
    fn pulse_argument_errors() {
        let p = PulseParams::default();
        assert!(matches!(synth_pulse(&p, 50e6, 1e-6), Err(Error::Aliasing { .. })));
        assert!(synth_pulse(&p, FS, 2.0 * p.sigma_t()).is_err());
        let bad = PulseParams {
            fractional_bandwidth: 2.5,
            ..p
        };
        assert!(synth_pulse(&bad, FS, 1e-6).is_err());
    }

    #[test]
    fn zero_delay_is_identity() {
        let x = padded_pulse(128);
        assert_eq!(fractional_delay(&x, 0.0, FS).unwrap(), x);
    }

    #[test]
    fn integer_delay_shifts_bins() {
        let x = padded_pulse(128);
        let y = fractional_delay(&x, 3.0 / FS, FS).unwrap();
        let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 3..128 {
            assert!((y[i] - x[i - 3]).abs() <= 1e-6 * peak, "sample {i}");
        }
    }

    #[test]
    fn half_sample_twice_matches_one_sample() {
        let x = padded_pulse(128);
        let half = fractional_delay(&x, 0.5 / FS, FS).unwrap();
        let twice = fractional_delay(&half, 0.5 / FS, FS).unwrap();
        let once = fractional_delay(&x, 1.0 / FS, FS).unwrap();
        // independent oracle: shift the continuous pulse analytically
        let p = PulseParams::default();
        let sigma = p.sigma_t();
        let peak_norm = unit_pulse_peak_norm();
        let center = 64.0;
        let analytic: Vec<f64> = (0..128)
            .map(|i| {
                let t = (i as f64 - center - 1.0) / FS;
                (-t * t / (2.0 * sigma * sigma)).exp() * (2.0 * PI * 15e6 * t).sin() / peak_norm
            })
            .collect();
        for i in 0..128 {
            assert!((twice[i] - once[i]).abs() < 1e-3, "sample {i}");
            assert!((once[i] - analytic[i]).abs() < 1e-3, "sample {i}");
        }
    }

    fn unit_pulse_peak_norm() -> f64 {
        let p = PulseParams::default();
        let sigma = p.sigma_t();
        let half = (p.default_duration() * FS / 2.0).floor() as i64;
        (-half..=half)
            .map(|i| {
                let t = i as f64 / FS;
                ((-t * t / (2.0 * sigma * sigma)).exp() * (2.0 * PI * 15e6 * t).sin()).abs()
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn shifted_energy_is_preserved() {
        let x = padded_pulse(128);
        let e0: f64 = x.iter().map(|v| v * v).sum();
        for d in [0.3, 7.25, -11.6, 20.5] {
            let y = fractional_delay(&x, d / FS, FS).unwrap();
            let e1: f64 = y.iter().map(|v| v * v).sum();
            assert_relative_eq!(e1, e0, max_relative = 5e-3);
        }
    }

    #[test]
    fn content_shifted_out_is_dropped() {
        let mut x = vec![0.0; 64];
        x[60] = 1.0;
        let y = Shifter::new(64).shift(&x, 10.0);
        assert!(y.iter().all(|v| v.abs() < 1e-12));
        assert!(fractional_delay(&x, 64.0 / FS, FS).is_err());
    }

    #[test]
    fn envelope_of_zero_and_sinusoid() {
        assert!(envelope(&[0.0; 16]).unwrap().iter().all(|&v| v == 0.0));
        let n = 512;
        let a = 2.5;
        let x: Vec<f64> = (0..n)
            .map(|i| a * (2.0 * PI * 15e6 * i as f64 / FS).sin())
            .collect();
        let e = envelope(&x).unwrap();
        for v in &e[n / 8..7 * n / 8] {
            assert!((v - a).abs() < 0.02 * a, "{v}");
        }
        assert!(envelope(&[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn envelope_recovers_gaussian_window() {
        let p = PulseParams::default();
        let sigma = p.sigma_t();
        let n = 256;
        let center = 128.0;
        let norm = unit_pulse_peak_norm();
        let x: Vec<f64> = (0..n)
            .map(|i| {
                let t = (i as f64 - center) / FS;
                (-t * t / (2.0 * sigma * sigma)).exp() * (2.0 * PI * 15e6 * t).sin() / norm
            })
            .collect();
        let e = envelope(&x).unwrap();
        let window_peak = 1.0 / norm;
        for (i, v) in e.iter().enumerate() {
            let t = (i as f64 - center) / FS;
            let w = (-t * t / (2.0 * sigma * sigma)).exp() / norm;
            if w > 0.1 * window_peak {
                assert!((v - w).abs() < 0.03 * window_peak, "sample {i}: {v} vs {w}");
            }
        }
    }

    #[test]
    fn psf_geometry() {
        let geometry = ArrayGeometry::default_linear();
        let source = Point::new(0.0, 15e-3);
        let p = PulseParams::default();
        let window = TimeWindow::covering(&geometry, &[source], &p, ImagingMode::Photoacoustic);
        let psf = synth_psf(&geometry, source, &p, window, ImagingMode::Photoacoustic).unwrap();
        let f = &psf.frame;
        assert_eq!(f.n_elements(), 128);
        let peak = f.peak_abs();
        for k in 0..64 {
            let (a, b) = (f.trace(k), f.trace(127 - k));
            for (u, v) in a.iter().zip(b.iter()) {
                assert!((u - v).abs() < 1e-9 * peak);
            }
        }
        let doubled = synth_psf(&geometry, source, &p.with_amplitude(2.0), window, ImagingMode::Photoacoustic).unwrap();
        for (a, b) in doubled.frame.samples().iter().zip(f.samples().iter()) {
            assert_relative_eq!(*a, 2.0 * b, epsilon = 1e-12);
        }
        let short = TimeWindow { t0: window.t0, n_samples: 20 };
        assert!(matches!(
            synth_psf(&geometry, source, &p, short, ImagingMode::Photoacoustic),
            Err(Error::WindowTooSmall(_))
        ));
    }

    #[test]
    fn on_axis_element_peaks_at_ten_microseconds() {
        let geometry = ArrayGeometry::new(vec![-1e-3, 0.0, 1e-3], vec![0.0; 3], 1e-3, 15e6, FS, 1500.0).unwrap();
        let source = Point::new(0.0, 15e-3);
        let p = PulseParams::default();
        let window = TimeWindow { t0: 9e-6, n_samples: 160 };
        let psf = synth_psf(&geometry, source, &p, window, ImagingMode::Photoacoustic).unwrap();
        let env = envelope(psf.frame.trace(1).as_slice().unwrap()).unwrap();
        let imax = (0..env.len()).max_by(|&a, &b| env[a].total_cmp(&env[b])).unwrap();
        let t_peak = window.t0 + imax as f64 / FS;
        assert!((t_peak - 0.015 / 1500.0).abs() <= 1.0 / FS, "{t_peak}");
    }

    proptest! {
        #[test]
        fn delay_then_undo(d in -20.0..20.0f64) {
            let x = padded_pulse(128);
            let y = fractional_delay(&x, d / FS, FS).unwrap();
            let z = fractional_delay(&y, -d / FS, FS).unwrap();
            for i in 0..128 {
                prop_assert!((z[i] - x[i]).abs() < 1e-3);
            }
        }

        #[test]
        fn delay_is_linear(d in -10.0..10.0f64, a in -5.0..5.0f64) {
            let x = padded_pulse(96);
            let ax: Vec<f64> = x.iter().map(|v| a * v).collect();
            let y = fractional_delay(&x, d / FS, FS).unwrap();
            let ay = fractional_delay(&ax, d / FS, FS).unwrap();
            for (u, v) in y.iter().zip(&ay) {
                prop_assert!((a * u - v).abs() < 1e-12);
            }
        }

        #[test]
        fn envelope_sign_invariant(seed in 0u64..1000) {
            let x: Vec<f64> = (0..64).map(|i| ((i as u64 * 2654435761 + seed) % 97) as f64 - 48.0).collect();
            let neg: Vec<f64> = x.iter().map(|v| -v).collect();
            let (a, b) = (envelope(&x).unwrap(), envelope(&neg).unwrap());
            for (u, v) in a.iter().zip(&b) {
                prop_assert!((u - v).abs() < 1e-9);
            }
        }
    }
}
