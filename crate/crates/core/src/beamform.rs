//! Delay-and-sum baseline and PSF width measurement.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::evaluate::GridImage;
use crate::geometry::{arrival_time, ArrayGeometry, ImagingGrid};
use num_complex::Complex64;

use crate::waveform::{analytic_signal, RFFrame};

/// DAS envelope image plus a mask of pixels whose delays fell inside the
/// recording window for every element.
#[derive(Debug, Clone, PartialEq)]
pub struct DasImage {
    pub image: GridImage,
    pub coverage: Array2<bool>,
}

impl DasImage {
    pub fn fully_covered(&self) -> bool {
        self.coverage.iter().all(|&c| c)
    }
}

/// Plain delay-and-sum with uniform weights. Each trace is turned into its
/// analytic signal first, so the pixel value is the envelope of the summed RF
/// however small the grid is. Delays use linear interpolation.
pub fn das(frame: &RFFrame, geometry: &ArrayGeometry, grid: &ImagingGrid) -> Result<DasImage> {
    let n_el = geometry.n_elements();
    if let Some(&k) = frame.element_indices.iter().find(|&&k| k >= n_el) {
        return Err(Error::Mismatch(format!(
            "frame element {k} does not exist in a {n_el}-element array"
        )));
    }
    for (&k, &x) in frame.element_indices.iter().zip(&frame.element_x) {
        if (geometry.element_x()[k] - x).abs() > 1e-9 {
            return Err(Error::Mismatch(format!(
                "element {k} sits at x = {x:e} m in the frame but {:e} m in the geometry",
                geometry.element_x()[k]
            )));
        }
    }
    if (frame.fs - geometry.sampling_frequency()).abs() > 1e-6 * frame.fs {
        return Err(Error::Mismatch("frame and geometry sampling rates differ".into()));
    }
    let c = geometry.sound_speed();
    let n_s = frame.n_samples();
    let (n_x, n_z) = (grid.n_x(), grid.n_z());
    let mut values = Array2::<f64>::zeros((n_z, n_x));
    let mut coverage = Array2::from_elem((n_z, n_x), true);
    let traces: Vec<Vec<Complex64>> = frame
        .samples()
        .rows()
        .into_iter()
        .map(|r| analytic_signal(&r.to_vec()))
        .collect::<Result<_>>()?;
    for (i, p) in grid.points().enumerate() {
        let (iz, ix) = (i / n_x, i % n_x);
        let mut acc = Complex64::new(0.0, 0.0);
        for (trace, &k) in traces.iter().zip(&frame.element_indices) {
            let tau = (arrival_time(p, geometry.element(k), frame.mode, c) - frame.t0) * frame.fs;
            if tau < 0.0 || tau > (n_s - 1) as f64 {
                coverage[(iz, ix)] = false;
                continue;
            }
            let j = (tau.floor() as usize).min(n_s.saturating_sub(2));
            let f = tau - j as f64;
            acc += trace[j] * (1.0 - f) + trace[(j + 1).min(n_s - 1)] * f;
        }
        values[(iz, ix)] = acc.norm();
    }
    Ok(DasImage {
        image: GridImage {
            x0: grid.x_min,
            z0: grid.z_min,
            step: grid.step,
            values,
        },
        coverage,
    })
}

/// Full width at half maximum around the global peak, with linear
/// interpolation of the two crossings.
pub fn fwhm(profile: &[f64], step: f64) -> Result<f64> {
    let (peak_i, &peak) = profile
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .ok_or(Error::OpenProfile("empty"))?;
    if !(peak > 0.0) {
        return Err(Error::InvalidInput("profile has no positive peak".into()));
    }
    let half = 0.5 * peak;
    let left = (0..peak_i)
        .rev()
        .find(|&j| profile[j] < half)
        .ok_or(Error::OpenProfile("left"))?;
    let right = (peak_i + 1..profile.len())
        .find(|&j| profile[j] < half)
        .ok_or(Error::OpenProfile("right"))?;
    let cross = |a: usize, b: usize| {
        let (va, vb) = (profile[a], profile[b]);
        a as f64 + (half - va) / (vb - va) * (b as f64 - a as f64)
    };
    let xl = cross(left, left + 1);
    let xr = cross(right - 1, right);
    Ok((xr - xl) * step)
}
