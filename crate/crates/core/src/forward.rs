//! Forward model `S = A T` assembled from one calibration PSF.
//!
//! Column `i` of `A` is the calibration frame with each element trace delayed
//! by the travel-time difference between grid point `i` and the calibration
//! source, flattened element-major. Two representations are provided: an
//! explicit dense matrix (optionally with a cached Gram matrix `A^T A`) and a
//! matrix-free operator that works on per-element PSF spectra.

use std::f64::consts::PI;
use std::sync::OnceLock;

use ndarray::{Array2, ArrayView1};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::geometry::{travel_delay, ArrayGeometry, ImagingGrid, ImagingMode, Point};
use crate::operator::{dot, norm2, LinearOperator};
use crate::waveform::{PSFRecord, RFFrame, Shifter};

/// Samples below this fraction of the frame peak do not count as PSF support
/// when checking that shifted columns stay inside the window.
const SUPPORT_THRESHOLD: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Representation {
    Explicit,
    MatrixFree,
}

enum Storage {
    /// Row `i` holds column `i` of `A` (so the buffer is `A` in column-major order).
    Explicit {
        columns: Array2<f64>,
        gram: OnceLock<Array2<f64>>,
    },
    MatrixFree {
        shifter: Shifter,
        spectra: Vec<Vec<Complex64>>,
    },
}

pub struct ForwardModel {
    elements: Vec<Point>,
    subset: Vec<usize>,
    grid: ImagingGrid,
    psf: PSFRecord,
    mode: ImagingMode,
    /// Per-column, per-element delay in samples, `delays[i * n_el + k]`.
    delays: Vec<f64>,
    storage: Storage,
}

impl std::fmt::Debug for ForwardModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ForwardModel")
            .field("rows", &self.rows())
            .field("cols", &self.cols())
            .field("subset", &self.subset)
            .field("mode", &self.mode)
            .field("representation", &self.representation())
            .finish()
    }
}

/// Builds the explicit model. See [`build_model_with`].
pub fn build_model(
    psf: &PSFRecord,
    grid: &ImagingGrid,
    geometry: &ArrayGeometry,
    subset: &[usize],
    mode: ImagingMode,
) -> Result<ForwardModel> {
    build_model_with(psf, grid, geometry, subset, mode, Representation::Explicit)
}

pub fn build_model_with(
    psf: &PSFRecord,
    grid: &ImagingGrid,
    geometry: &ArrayGeometry,
    subset: &[usize],
    mode: ImagingMode,
    representation: Representation,
) -> Result<ForwardModel> {
    assemble(psf, grid, geometry, subset, mode, representation, None)
}

/// Explicit model whose columns were computed earlier (for example loaded
/// from a model cache). The inputs are validated as in [`build_model`] and
/// `columns` must hold one column of `A` per row.
pub fn model_from_columns(
    psf: &PSFRecord,
    grid: &ImagingGrid,
    geometry: &ArrayGeometry,
    subset: &[usize],
    mode: ImagingMode,
    columns: Array2<f64>,
) -> Result<ForwardModel> {
    assemble(psf, grid, geometry, subset, mode, Representation::Explicit, Some(columns))
}

fn assemble(
    psf: &PSFRecord,
    grid: &ImagingGrid,
    geometry: &ArrayGeometry,
    subset: &[usize],
    mode: ImagingMode,
    representation: Representation,
    precomputed: Option<Array2<f64>>,
) -> Result<ForwardModel> {
    if subset.is_empty() {
        return Err(invalid("element subset is empty"));
    }
    if subset.iter().any(|&k| k >= geometry.n_elements()) {
        return Err(Error::Mismatch(format!(
            "subset references elements beyond the {}-element array",
            geometry.n_elements()
        )));
    }
    if psf.frame.mode != mode {
        return Err(Error::Mismatch(format!(
            "PSF was recorded in {} mode, model requested {}",
            psf.frame.mode.label(),
            mode.label()
        )));
    }
    let fs = geometry.sampling_frequency();
    if (psf.frame.fs - fs).abs() > 1e-9 * fs {
        return Err(Error::Mismatch("PSF and geometry sampling rates differ".into()));
    }
    let frame = psf.frame.select(subset)?;
    for (k, &e) in subset.iter().enumerate() {
        // frame positions may have been stored as f32-precision metadata
        if (frame.element_x[k] - geometry.element_x()[e]).abs() > 1e-9 {
            return Err(Error::Mismatch(format!(
                "element {e} sits at x = {} in the PSF but {} in the geometry",
                frame.element_x[k],
                geometry.element_x()[e]
            )));
        }
    }
    let elements: Vec<Point> = subset.iter().map(|&e| geometry.element(e)).collect();
    let n_el = elements.len();
    let n_cols = grid.len();
    let c = geometry.sound_speed();

    let mut delays = Vec::with_capacity(n_cols * n_el);
    for p in grid.points() {
        for e in &elements {
            delays.push(travel_delay(p, psf.source, *e, mode, c)? * fs);
        }
    }
    check_window(&frame, grid, &delays)?;

    let n_samples = frame.n_samples();
    let shifter = Shifter::new(n_samples);
    let spectra: Vec<Vec<Complex64>> = (0..n_el)
        .map(|k| shifter.spectrum(frame.trace(k).as_slice().expect("standard layout")))
        .collect();

    let storage = match representation {
        Representation::Explicit if precomputed.is_some() => {
            let columns = precomputed.expect("checked");
            if columns.dim() != (n_cols, n_samples * n_el) {
                return Err(Error::Mismatch(format!(
                    "cached model is {:?}, expected {:?}",
                    columns.dim(),
                    (n_cols, n_samples * n_el)
                )));
            }
            Storage::Explicit {
                columns: columns.as_standard_layout().into_owned(),
                gram: OnceLock::new(),
            }
        }
        Representation::Explicit => {
            let m = n_samples * n_el;
            let mut columns = Array2::<f64>::zeros((n_cols, m));
            columns
                .as_slice_mut()
                .expect("standard layout")
                .par_chunks_mut(m)
                .enumerate()
                .for_each_init(Vec::new, |scratch, (i, col)| {
                    for k in 0..n_el {
                        let seg = &mut col[k * n_samples..(k + 1) * n_samples];
                        let d = delays[i * n_el + k];
                        shifter.shift_spectrum(&spectra[k], d, seg, scratch);
                    }
                });
            Storage::Explicit {
                columns,
                gram: OnceLock::new(),
            }
        }
        Representation::MatrixFree => Storage::MatrixFree { shifter, spectra },
    };

    Ok(ForwardModel {
        elements,
        subset: subset.to_vec(),
        grid: grid.clone(),
        psf: PSFRecord {
            frame,
            source: psf.source,
        },
        mode,
        delays,
        storage,
    })
}

/// Every shifted trace must keep its support inside `[0, n_samples)`.
fn check_window(frame: &RFFrame, grid: &ImagingGrid, delays: &[f64]) -> Result<()> {
    let n_el = frame.n_elements();
    let n = frame.n_samples() as f64;
    let floor = SUPPORT_THRESHOLD * frame.peak_abs();
    let support: Vec<Option<(f64, f64)>> = (0..n_el)
        .map(|k| {
            let t = frame.trace(k);
            let first = t.iter().position(|v| v.abs() > floor)?;
            let last = t.iter().rposition(|v| v.abs() > floor)?;
            Some((first as f64, last as f64))
        })
        .collect();
    for (i, p) in grid.points().enumerate() {
        for (k, s) in support.iter().enumerate() {
            if let Some((first, last)) = s {
                let d = delays[i * n_el + k];
                if first + d < 0.0 || last + d > n - 1.0 {
                    return Err(Error::WindowTooSmall(format!(
                        "grid point {i} at ({:.4e}, {:.4e}) m shifts element {} PSF energy by {d:.2} samples, out of the {}-sample window",
                        p.x,
                        p.z,
                        frame.element_indices[k],
                        n as usize
                    )));
                }
            }
        }
    }
    Ok(())
}

impl ForwardModel {
    pub fn rows(&self) -> usize {
        self.psf.frame.n_samples() * self.elements.len()
    }

    pub fn cols(&self) -> usize {
        self.grid.len()
    }

    pub fn n_samples(&self) -> usize {
        self.psf.frame.n_samples()
    }

    pub fn subset(&self) -> &[usize] {
        &self.subset
    }

    pub fn grid(&self) -> &ImagingGrid {
        &self.grid
    }

    pub fn psf(&self) -> &PSFRecord {
        &self.psf
    }

    pub fn mode(&self) -> ImagingMode {
        self.mode
    }

    pub fn elements(&self) -> &[Point] {
        &self.elements
    }

    pub fn representation(&self) -> Representation {
        match self.storage {
            Storage::Explicit { .. } => Representation::Explicit,
            Storage::MatrixFree { .. } => Representation::MatrixFree,
        }
    }

    /// Delay of element `k` (subset position) for column `i`, in samples.
    pub fn delay_samples(&self, i: usize, k: usize) -> f64 {
        self.delays[i * self.elements.len() + k]
    }

    /// The explicit matrix with shape `(cols, rows)`: row `i` is column `i` of `A`.
    pub fn columns(&self) -> Option<&Array2<f64>> {
        match &self.storage {
            Storage::Explicit { columns, .. } => Some(columns),
            Storage::MatrixFree { .. } => None,
        }
    }

    /// Largest Euclidean column norm of `A`.
    pub fn max_column_norm(&self) -> f64 {
        let sq = match (self.gram(), self.columns()) {
            (Some(g), _) => g.diag().iter().fold(0.0f64, |m, &v| m.max(v)),
            (None, Some(c)) => c.rows().into_iter().map(|r| r.dot(&r)).fold(0.0f64, f64::max),
            (None, None) => (0..self.cols())
                .map(|i| self.column(i).iter().map(|v| v * v).sum::<f64>())
                .fold(0.0f64, f64::max),
        };
        sq.sqrt()
    }

    /// Column `i` of `A`.
    pub fn column(&self, i: usize) -> Vec<f64> {
        match &self.storage {
            Storage::Explicit { columns, .. } => columns.row(i).to_vec(),
            Storage::MatrixFree { .. } => {
                let mut e = vec![0.0; self.cols()];
                e[i] = 1.0;
                let mut out = vec![0.0; self.rows()];
                self.apply_to(&e, &mut out);
                out
            }
        }
    }

    /// Assembles `A^T A` once; later normal products reuse it. No-op for the
    /// matrix-free representation.
    pub fn cache_gram(&self) {
        if let Storage::Explicit { columns, gram } = &self.storage {
            gram.get_or_init(|| columns.dot(&columns.t()));
        }
    }

    pub fn gram(&self) -> Option<&Array2<f64>> {
        match &self.storage {
            Storage::Explicit { gram, .. } => gram.get(),
            Storage::MatrixFree { .. } => None,
        }
    }

    pub fn apply(&self, t: &[f64]) -> Result<Vec<f64>> {
        if t.len() != self.cols() {
            return Err(invalid(format!(
                "object vector has length {}, model has {} columns",
                t.len(),
                self.cols()
            )));
        }
        let mut out = vec![0.0; self.rows()];
        self.apply_to(t, &mut out);
        Ok(out)
    }

    pub fn adjoint(&self, s: &[f64]) -> Result<Vec<f64>> {
        if s.len() != self.rows() {
            return Err(invalid(format!(
                "data vector has length {}, model has {} rows",
                s.len(),
                self.rows()
            )));
        }
        let mut out = vec![0.0; self.cols()];
        self.adjoint_to(s, &mut out);
        Ok(out)
    }

    /// Singular values of `A` above `rel_tol * sigma_max`. Dense SVD: meant
    /// for reporting, not for inner loops.
    pub fn numerical_rank(&self, rel_tol: f64) -> usize {
        let (n, m) = (self.cols(), self.rows());
        let mut data = Vec::with_capacity(n * m);
        for i in 0..n {
            data.extend(self.column(i));
        }
        let a = nalgebra::DMatrix::from_column_slice(m, n, &data);
        let sv = a.singular_values();
        let smax = sv.iter().fold(0.0f64, |x, &v| x.max(v));
        sv.iter().filter(|&&v| v > rel_tol * smax).count()
    }

    /// Phase ramp for the half spectrum `0..=P/2`, by recurrence with a
    /// periodic exact restart.
    fn half_ramp(padded: usize, d: f64, out: &mut [Complex64]) {
        let half = padded / 2;
        let theta = -2.0 * PI * d / padded as f64;
        let (s, c) = theta.sin_cos();
        let w = Complex64::new(c, s);
        let mut h = Complex64::new(1.0, 0.0);
        for (f, o) in out.iter_mut().enumerate().take(half) {
            if f % 32 == 0 {
                let (s, c) = (theta * f as f64).sin_cos();
                h = Complex64::new(c, s);
            }
            *o = h;
            h *= w;
        }
        out[half] = Complex64::new((PI * d).cos(), 0.0);
    }

    fn matrix_free_apply(&self, shifter: &Shifter, spectra: &[Vec<Complex64>], t: &[f64], y: &mut [f64]) {
        let n_el = self.elements.len();
        let n = self.n_samples();
        let p = shifter.padded_len();
        let half = p / 2;
        let active: Vec<usize> = (0..t.len()).filter(|&i| t[i] != 0.0).collect();
        y.par_chunks_mut(n).enumerate().for_each(|(k, out)| {
            let mut acc = vec![Complex64::new(0.0, 0.0); half + 1];
            let mut ramp = vec![Complex64::new(0.0, 0.0); half + 1];
            for &i in &active {
                Self::half_ramp(p, self.delays[i * n_el + k], &mut ramp);
                for (a, r) in acc.iter_mut().zip(&ramp) {
                    *a += r * t[i];
                }
            }
            let mut spec = vec![Complex64::new(0.0, 0.0); p];
            for f in 0..=half {
                spec[f] = spectra[k][f] * acc[f];
            }
            for f in 1..half {
                spec[p - f] = spec[f].conj();
            }
            shifter.synthesize(&mut spec, out);
        });
    }

    fn matrix_free_adjoint(&self, shifter: &Shifter, spectra: &[Vec<Complex64>], s: &[f64], x: &mut [f64]) {
        let n_el = self.elements.len();
        let n = self.n_samples();
        let p = shifter.padded_len();
        let half = p / 2;
        // Q_k = X_k conj(S_k) on the half spectrum
        let q: Vec<Vec<Complex64>> = (0..n_el)
            .into_par_iter()
            .map(|k| {
                let sk = shifter.spectrum(&s[k * n..(k + 1) * n]);
                (0..=half).map(|f| spectra[k][f] * sk[f].conj()).collect()
            })
            .collect();
        let scale = 1.0 / p as f64;
        x.par_iter_mut().enumerate().for_each_init(
            || vec![Complex64::new(0.0, 0.0); half + 1],
            |ramp, (i, out)| {
                let mut total = 0.0;
                for (k, qk) in q.iter().enumerate() {
                    Self::half_ramp(p, self.delays[i * n_el + k], ramp);
                    let mut acc = qk[0].re + qk[half].re * ramp[half].re;
                    let mut inner = 0.0;
                    for f in 1..half {
                        inner += (qk[f] * ramp[f]).re;
                    }
                    acc += 2.0 * inner;
                    total += acc;
                }
                *out = total * scale;
            },
        );
    }
}

impl LinearOperator for ForwardModel {
    fn rows(&self) -> usize {
        ForwardModel::rows(self)
    }

    fn cols(&self) -> usize {
        ForwardModel::cols(self)
    }

    fn apply_to(&self, t: &[f64], y: &mut [f64]) {
        match &self.storage {
            Storage::Explicit { columns, .. } => {
                y.iter_mut().for_each(|v| *v = 0.0);
                for (i, &ti) in t.iter().enumerate() {
                    if ti != 0.0 {
                        let col = columns.row(i);
                        let col = col.as_slice().expect("standard layout");
                        y.iter_mut().zip(col).for_each(|(o, a)| *o += ti * a);
                    }
                }
            }
            Storage::MatrixFree { shifter, spectra } => {
                self.matrix_free_apply(shifter, spectra, t, y)
            }
        }
    }

    fn adjoint_to(&self, s: &[f64], x: &mut [f64]) {
        match &self.storage {
            Storage::Explicit { columns, .. } => {
                let m = columns.ncols();
                x.par_iter_mut()
                    .zip(columns.as_slice().expect("standard layout").par_chunks(m))
                    .for_each(|(o, col)| *o = dot(col, s));
            }
            Storage::MatrixFree { shifter, spectra } => {
                self.matrix_free_adjoint(shifter, spectra, s, x)
            }
        }
    }

    fn normal_to(&self, x: &[f64], out: &mut [f64]) {
        if let Some(g) = self.gram() {
            let n = g.ncols();
            let rows = g.as_slice().expect("standard layout");
            let nonzero = x.iter().filter(|v| **v != 0.0).count();
            if nonzero * 4 <= n {
                // sparse iterates: sum the Gram rows (= columns) of the support
                out.iter_mut().for_each(|o| *o = 0.0);
                for (i, &xi) in x.iter().enumerate() {
                    if xi != 0.0 {
                        for (o, &gv) in out.iter_mut().zip(&rows[i * n..(i + 1) * n]) {
                            *o += xi * gv;
                        }
                    }
                }
            } else {
                out.iter_mut()
                    .zip(rows.chunks(n))
                    .for_each(|(o, row)| *o = dot(row, x));
            }
            return;
        }
        let mut y = vec![0.0; self.rows()];
        self.apply_to(x, &mut y);
        self.adjoint_to(&y, out);
    }
}

/// Result of power iteration on `A^T A`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralNormEstimate {
    /// Estimate of `sigma_max(A)^2`.
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Power iteration for the largest eigenvalue of `A^T A`, started from a
/// seeded Gaussian vector. Stops when the Rayleigh quotient changes by less
/// than `tol` relative.
pub fn spectral_norm_sq<A: LinearOperator + ?Sized>(
    op: &A,
    tol: f64,
    max_iters: usize,
    seed: u64,
) -> Result<SpectralNormEstimate> {
    let n = op.cols();
    if n == 0 || op.rows() == 0 {
        return Err(invalid("operator is empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let nx = norm2(&x);
    x.iter_mut().for_each(|v| *v /= nx);
    let mut ax = vec![0.0; n];
    let mut value = 0.0f64;
    for it in 1..=max_iters.max(1) {
        op.normal_to(&x, &mut ax);
        let rayleigh = dot(&x, &ax);
        let norm = norm2(&ax);
        if norm == 0.0 {
            return Err(invalid("operator is zero"));
        }
        let done = it > 1 && (rayleigh - value).abs() <= tol * rayleigh.abs();
        value = rayleigh;
        if done || n == 1 {
            return Ok(SpectralNormEstimate {
                value,
                iterations: it,
                converged: true,
            });
        }
        for (xi, &v) in x.iter_mut().zip(&ax) {
            *xi = v / norm;
        }
    }
    Ok(SpectralNormEstimate {
        value,
        iterations: max_iters,
        converged: false,
    })
}

/// Flattened PSF frame view helper used in tests and diagnostics.
pub fn frame_vector(frame: &RFFrame) -> ArrayView1<'_, f64> {
    ArrayView1::from(frame.samples().as_slice().expect("standard layout"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::arrival_time;
    use crate::waveform::{synth_psf, PulseParams, TimeWindow};

    fn small_setup(n_el: usize) -> (ArrayGeometry, ImagingGrid, PSFRecord) {
        let geometry = ArrayGeometry::linear(n_el, 0.8e-3, 15e6, 62.5e6, 1500.0).unwrap();
        let grid = ImagingGrid::new(-0.1e-3, 0.1e-3, 14.95e-3, 15.05e-3, 25e-6).unwrap();
        let source = Point::new(0.0, 15e-3);
        let pulse = PulseParams::default();
        let corners = [
            Point::new(grid.x_min, grid.z_min),
            Point::new(grid.x_max, grid.z_max),
            Point::new(grid.x_min, grid.z_max),
            Point::new(grid.x_max, grid.z_min),
        ];
        let window = TimeWindow::covering(&geometry, &corners, &pulse, ImagingMode::Photoacoustic);
        let psf = synth_psf(&geometry, source, &pulse, window, ImagingMode::Photoacoustic).unwrap();
        (geometry, grid, psf)
    }

    fn lcg(seed: &mut u64) -> f64 {
        *seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((*seed >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    }

    #[test]
    fn single_point_grid_reproduces_psf() {
        let (geometry, _, psf) = small_setup(16);
        let grid = ImagingGrid::single_point(psf.source, 12.5e-6).unwrap();
        let subset = vec![0, 3, 9, 15];
        let model = build_model(&psf, &grid, &geometry, &subset, ImagingMode::Photoacoustic).unwrap();
        assert_eq!(model.cols(), 1);
        let expected = psf.frame.select(&subset).unwrap().flatten();
        let col = model.column(0);
        let peak = psf.frame.peak_abs();
        for (a, b) in col.iter().zip(&expected) {
            assert!((a - b).abs() <= 1e-9 * peak);
        }
    }

    #[test]
    fn shapes_follow_window_and_grid() {
        let (geometry, grid, psf) = small_setup(16);
        let subset: Vec<usize> = (0..16).collect();
        let model = build_model(&psf, &grid, &geometry, &subset, ImagingMode::Photoacoustic).unwrap();
        assert_eq!(model.rows(), psf.frame.n_samples() * 16);
        assert_eq!(model.cols(), grid.n_x() * grid.n_z());
    }

    #[test]
    fn interior_column_norms_agree() {
        let (geometry, grid, psf) = small_setup(16);
        let subset: Vec<usize> = (0..16).collect();
        let model = build_model(&psf, &grid, &geometry, &subset, ImagingMode::Photoacoustic).unwrap();
        let norms: Vec<f64> = (0..model.cols()).map(|i| norm2(&model.column(i))).collect();
        let mean = norms.iter().sum::<f64>() / norms.len() as f64;
        for n in norms {
            assert!((n - mean).abs() < 0.01 * mean);
        }
    }

    #[test]
    fn apply_and_adjoint_basics() {
        let (geometry, grid, psf) = small_setup(8);
        let subset: Vec<usize> = (0..8).collect();
        let model = build_model(&psf, &grid, &geometry, &subset, ImagingMode::Photoacoustic).unwrap();
        let n = model.cols();
        assert!(model.apply(&vec![0.0; n]).unwrap().iter().all(|&v| v == 0.0));
        assert!(model.adjoint(&vec![0.0; model.rows()]).unwrap().iter().all(|&v| v == 0.0));
        let mut two = vec![0.0; n];
        two[3] = 1.0;
        two[17] = 1.0;
        let y = model.apply(&two).unwrap();
        let (c3, c17) = (model.column(3), model.column(17));
        for i in 0..y.len() {
            assert!((y[i] - c3[i] - c17[i]).abs() < 1e-9);
        }
        let g = model.adjoint(&c3).unwrap();
        let nn = dot(&c3, &c3);
        assert!((g[3] - nn).abs() <= 1e-8 * nn);
        assert!(model.apply(&[1.0]).is_err());
        assert!(model.adjoint(&[1.0]).is_err());
    }

    #[test]
    fn adjoint_identity_holds_for_both_representations() {
        let (geometry, grid, psf) = small_setup(8);
        let subset: Vec<usize> = (0..8).collect();
        let explicit = build_model(&psf, &grid, &geometry, &subset, ImagingMode::Photoacoustic).unwrap();
        let free = build_model_with(&psf, &grid, &geometry, &subset, ImagingMode::Photoacoustic, Representation::MatrixFree).unwrap();
        let mut seed = 11u64;
        for _ in 0..20 {
            let u: Vec<f64> = (0..explicit.cols()).map(|_| lcg(&mut seed)).collect();
            let v: Vec<f64> = (0..explicit.rows()).map(|_| lcg(&mut seed)).collect();
            for (model, tol) in [(&explicit, 1e-10), (&free, 1e-6)] {
                let lhs = dot(&model.apply(&u).unwrap(), &v);
                let rhs = dot(&u, &model.adjoint(&v).unwrap());
                assert!((lhs - rhs).abs() <= tol * lhs.abs().max(rhs.abs()));
            }
            let (ye, yf) = (explicit.apply(&u).unwrap(), free.apply(&u).unwrap());
            let scale = norm2(&ye);
            let diff: Vec<f64> = ye.iter().zip(&yf).map(|(a, b)| a - b).collect();
            assert!(norm2(&diff) <= 1e-6 * scale);
            let (xe, xf) = (explicit.adjoint(&v).unwrap(), free.adjoint(&v).unwrap());
            let diff: Vec<f64> = xe.iter().zip(&xf).map(|(a, b)| a - b).collect();
            assert!(norm2(&diff) <= 1e-6 * norm2(&xe));
        }
    }

    #[test]
    fn gram_matches_normal_product() {
        let (geometry, grid, psf) = small_setup(8);
        let subset: Vec<usize> = (0..8).collect();
        let model = build_model(&psf, &grid, &geometry, &subset, ImagingMode::Photoacoustic).unwrap();
        let mut seed = 5u64;
        let x: Vec<f64> = (0..model.cols()).map(|_| lcg(&mut seed)).collect();
        let mut slow = vec![0.0; model.cols()];
        model.normal_to(&x, &mut slow);
        model.cache_gram();
        let mut fast = vec![0.0; model.cols()];
        model.normal_to(&x, &mut fast);
        for (a, b) in slow.iter().zip(&fast) {
            assert!((a - b).abs() <= 1e-9 * norm2(&slow));
        }
    }

    #[test]
    fn window_violation_is_reported() {
        let (geometry, _, psf) = small_setup(8);
        let wide = ImagingGrid::new(-0.1e-3, 0.1e-3, 14.0e-3, 16.0e-3, 0.5e-3).unwrap();
        let err = build_model(&psf, &wide, &geometry, &[0, 7], ImagingMode::Photoacoustic).unwrap_err();
        assert!(matches!(err, Error::WindowTooSmall(ref m) if m.contains("grid point")));
    }

    #[test]
    fn mode_and_subset_mismatch() {
        let (geometry, grid, psf) = small_setup(8);
        assert!(matches!(
            build_model(&psf, &grid, &geometry, &[0, 7], ImagingMode::PlaneWave),
            Err(Error::Mismatch(_))
        ));
        assert!(matches!(
            build_model(&psf, &grid, &geometry, &[0, 9], ImagingMode::Photoacoustic),
            Err(Error::Mismatch(_))
        ));
    }

    #[test]
    fn columns_are_per_element_time_shifts() {
        let (geometry, grid, psf) = small_setup(8);
        let subset: Vec<usize> = (0..8).collect();
        let model = build_model(&psf, &grid, &geometry, &subset, ImagingMode::Photoacoustic).unwrap();
        let n = model.n_samples();
        let fs = geometry.sampling_frequency();
        let c = geometry.sound_speed();
        let mut seed = 99u64;
        for _ in 0..20 {
            let i = ((lcg(&mut seed) + 1.0) / 2.0 * model.cols() as f64) as usize % model.cols();
            let j = ((lcg(&mut seed) + 1.0) / 2.0 * model.cols() as f64) as usize % model.cols();
            let (ci, cj) = (model.column(i), model.column(j));
            let (pi, pj) = (grid.point(i), grid.point(j));
            for k in 0..8 {
                let e = geometry.element(k);
                let expected = ((arrival_time(pj, e, ImagingMode::Photoacoustic, c)
                    - arrival_time(pi, e, ImagingMode::Photoacoustic, c))
                    * fs)
                    .round() as i64;
                let a = &ci[k * n..(k + 1) * n];
                let b = &cj[k * n..(k + 1) * n];
                let best = (-(n as i64) / 2..(n as i64) / 2)
                    .max_by(|&l1, &l2| xcorr(a, b, l1).total_cmp(&xcorr(a, b, l2)))
                    .unwrap();
                assert_eq!(best, expected, "pair ({i}, {j}) element {k}");
            }
        }
    }

    /// sum_t a[t] b[t + lag]
    fn xcorr(a: &[f64], b: &[f64], lag: i64) -> f64 {
        let n = a.len() as i64;
        (0..n)
            .filter(|t| t + lag >= 0 && t + lag < n)
            .map(|t| a[t as usize] * b[(t + lag) as usize])
            .sum()
    }

    #[test]
    fn build_is_deterministic() {
        let (geometry, grid, psf) = small_setup(8);
        let subset: Vec<usize> = (0..8).collect();
        let a = build_model(&psf, &grid, &geometry, &subset, ImagingMode::Photoacoustic).unwrap();
        let b = build_model(&psf, &grid, &geometry, &subset, ImagingMode::Photoacoustic).unwrap();
        assert_eq!(a.columns().unwrap(), b.columns().unwrap());
    }

    fn dense_sigma_max_sq(a: &Array2<f64>) -> f64 {
        let m = nalgebra::DMatrix::from_row_slice(a.nrows(), a.ncols(), a.as_slice().unwrap());
        m.singular_values().max().powi(2)
    }

    #[test]
    fn power_iteration_against_svd() {
        use crate::operator::DenseOperator;
        let mut seed = 3u64;
        for _ in 0..5 {
            let a = Array2::from_shape_fn((20, 10), |_| lcg(&mut seed));
            let op = DenseOperator::new(a.clone());
            let est = spectral_norm_sq(&op, 1e-9, 10_000, 0).unwrap();
            let truth = dense_sigma_max_sq(&a);
            assert!((est.value - truth).abs() <= 1e-3 * truth, "{} vs {truth}", est.value);
            let twice = spectral_norm_sq(&op.scaled(2.0), 1e-9, 10_000, 0).unwrap();
            assert!((twice.value - 4.0 * est.value).abs() <= 1e-6 * twice.value);
        }
    }

    #[test]
    fn power_iteration_on_rank_one() {
        let (geometry, _, psf) = small_setup(8);
        let grid = ImagingGrid::single_point(psf.source, 12.5e-6).unwrap();
        let model = build_model(&psf, &grid, &geometry, &[0, 4, 7], ImagingMode::Photoacoustic).unwrap();
        let col = model.column(0);
        let est = spectral_norm_sq(&model, 1e-12, 100, 1).unwrap();
        let nn = dot(&col, &col);
        assert!((est.value - nn).abs() <= 1e-12 * nn);
    }

    #[test]
    fn non_convergence_is_reported_not_fatal() {
        use crate::operator::DenseOperator;
        let mut seed = 8u64;
        let a = Array2::from_shape_fn((20, 10), |_| lcg(&mut seed));
        let est = spectral_norm_sq(&DenseOperator::new(a), 0.0, 3, 0).unwrap();
        assert!(!est.converged);
        assert_eq!(est.iterations, 3);
    }
}
