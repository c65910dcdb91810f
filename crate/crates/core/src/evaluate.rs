//! Post-filtering of reconstructions and scoring against the ideal object.

use ndarray::Array2;

use crate::error::{invalid, Error, Result};
use crate::geometry::{ImagingGrid, Point};
use crate::simulate::Scene;

/// Smoothing applied to every reconstruction and to the reference.
pub const FILTER_SIGMA: f64 = 12.5e-6;
/// Step of the interpolated display grid.
pub const FINE_STEP: f64 = 3.125e-6;

/// Scalar image on a regular grid; `values[(iz, ix)]` sits at
/// `(x0 + ix * step, z0 + iz * step)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridImage {
    pub x0: f64,
    pub z0: f64,
    pub step: f64,
    pub values: Array2<f64>,
}

impl GridImage {
    pub fn zeros(grid: &ImagingGrid) -> Self {
        GridImage {
            x0: grid.x_min,
            z0: grid.z_min,
            step: grid.step,
            values: Array2::zeros((grid.n_z(), grid.n_x())),
        }
    }

    /// Wraps an object vector enumerated in grid order.
    pub fn from_vector(grid: &ImagingGrid, t: &[f64]) -> Result<Self> {
        if t.len() != grid.len() {
            return Err(invalid(format!(
                "vector of length {} does not fit a {}x{} grid",
                t.len(),
                grid.n_x(),
                grid.n_z()
            )));
        }
        Ok(GridImage {
            x0: grid.x_min,
            z0: grid.z_min,
            step: grid.step,
            values: Array2::from_shape_vec((grid.n_z(), grid.n_x()), t.to_vec())
                .expect("shape checked"),
        })
    }

    pub fn n_x(&self) -> usize {
        self.values.ncols()
    }

    pub fn n_z(&self) -> usize {
        self.values.nrows()
    }

    pub fn x_at(&self, ix: usize) -> f64 {
        self.x0 + ix as f64 * self.step
    }

    pub fn z_at(&self, iz: usize) -> f64 {
        self.z0 + iz as f64 * self.step
    }

    pub fn max(&self) -> f64 {
        self.values.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v))
    }

    pub fn sum(&self) -> f64 {
        self.values.sum()
    }

    /// `(ix, iz)` of the largest value.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = (0, 0);
        let mut best_v = f64::NEG_INFINITY;
        for ((iz, ix), &v) in self.values.indexed_iter() {
            if v > best_v {
                best_v = v;
                best = (ix, iz);
            }
        }
        best
    }

    /// Row of values at the depth closest to `z`.
    pub fn lateral_profile(&self, z: f64) -> Vec<f64> {
        let iz = (((z - self.z0) / self.step).round().max(0.0) as usize).min(self.n_z() - 1);
        self.values.row(iz).to_vec()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        GridImage {
            values: &self.values * factor,
            ..self.clone()
        }
    }

    /// `x_m,z_m,value` rows in row-major order.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x_m,z_m,value\n");
        for ((iz, ix), v) in self.values.indexed_iter() {
            out.push_str(&format!("{:e},{:e},{:e}\n", self.x_at(ix), self.z_at(iz), v));
        }
        out
    }

    /// Binary 16-bit PGM, normalized so the maximum maps to 65535. Negative
    /// values clip to 0.
    pub fn to_pgm(&self) -> Vec<u8> {
        let (w, h) = (self.n_x(), self.n_z());
        let mut out = format!("P5\n{w} {h}\n65535\n").into_bytes();
        let peak = self.max();
        for &v in self.values.iter() {
            let q = if peak > 0.0 {
                (v.max(0.0) / peak * 65535.0).round() as u16
            } else {
                0
            };
            out.extend_from_slice(&q.to_be_bytes());
        }
        out
    }
}

fn gaussian_kernel(sigma_cells: f64) -> Vec<f64> {
    let radius = (4.0 * sigma_cells).ceil() as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i as f64).powi(2) / (2.0 * sigma_cells * sigma_cells)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

fn convolve_rows(values: &Array2<f64>, kernel: &[f64]) -> Array2<f64> {
    let r = (kernel.len() / 2) as i64;
    let (nz, nx) = values.dim();
    Array2::from_shape_fn((nz, nx), |(iz, ix)| {
        let mut acc = 0.0;
        for (q, w) in kernel.iter().enumerate() {
            let j = ix as i64 + q as i64 - r;
            if j >= 0 && j < nx as i64 {
                acc += w * values[(iz, j as usize)];
            }
        }
        acc
    })
}

/// Gaussian smoothing (truncated at 4 sigma, unit-sum kernel, zero padding)
/// followed by bilinear interpolation onto a grid `out_step` apart.
pub fn postfilter(image: &GridImage, sigma: f64, out_step: f64) -> Result<GridImage> {
    if !(sigma >= 0.0) || !(out_step > 0.0) {
        return Err(invalid("filter sigma must be >= 0 and output step > 0"));
    }
    let ratio = image.step / out_step;
    let factor = ratio.round();
    if factor < 1.0 || (ratio - factor).abs() > 1e-6 {
        return Err(invalid(format!(
            "output step {out_step:e} does not divide grid step {:e}",
            image.step
        )));
    }
    let factor = factor as usize;
    let smoothed = if sigma > 0.0 {
        let kernel = gaussian_kernel(sigma / image.step);
        let rows = convolve_rows(&image.values, &kernel);
        convolve_rows(&rows.t().to_owned(), &kernel).t().to_owned()
    } else {
        image.values.clone()
    };
    let (nz, nx) = smoothed.dim();
    let (fz, fx) = ((nz - 1) * factor + 1, (nx - 1) * factor + 1);
    let values = Array2::from_shape_fn((fz, fx), |(jz, jx)| {
        let (cz, cx) = (jz / factor, jx / factor);
        let (tz, tx) = (
            (jz % factor) as f64 / factor as f64,
            (jx % factor) as f64 / factor as f64,
        );
        let (cz1, cx1) = ((cz + 1).min(nz - 1), (cx + 1).min(nx - 1));
        let top = smoothed[(cz, cx)] * (1.0 - tx) + smoothed[(cz, cx1)] * tx;
        let bottom = smoothed[(cz1, cx)] * (1.0 - tx) + smoothed[(cz1, cx1)] * tx;
        top * (1.0 - tz) + bottom * tz
    });
    Ok(GridImage {
        x0: image.x0,
        z0: image.z0,
        step: out_step,
        values,
    })
}

/// Indicator of the scene's source cells on `grid`.
pub fn indicator(grid: &ImagingGrid, scene: &Scene) -> Result<GridImage> {
    let mut t = vec![0.0; grid.len()];
    for p in &scene.sources {
        let i = grid.nearest_index(*p).ok_or_else(|| {
            Error::DegenerateScene(format!("source ({:e}, {:e}) m lies outside the grid", p.x, p.z))
        })?;
        if t[i] != 0.0 {
            return Err(Error::DegenerateScene(format!(
                "two sources share grid cell {i}"
            )));
        }
        t[i] = 1.0;
    }
    GridImage::from_vector(grid, &t)
}

/// Ideal reconstruction: the indicator image passed through [`postfilter`].
pub fn reference_object(grid: &ImagingGrid, scene: &Scene, sigma: f64, out_step: f64) -> Result<GridImage> {
    postfilter(&indicator(grid, scene)?, sigma, out_step)
}

/// Zero-lag normalized inner product (no mean subtraction). Returns 0 when
/// `image` is identically zero.
pub fn correlation(image: &GridImage, reference: &GridImage) -> Result<f64> {
    if image.values.dim() != reference.values.dim() {
        return Err(invalid(format!(
            "image shapes differ: {:?} vs {:?}",
            image.values.dim(),
            reference.values.dim()
        )));
    }
    let rr: f64 = reference.values.iter().map(|v| v * v).sum();
    if rr == 0.0 {
        return Err(invalid("reference image is all zero"));
    }
    let ii: f64 = image.values.iter().map(|v| v * v).sum();
    if ii == 0.0 {
        return Ok(0.0);
    }
    let ir: f64 = image.values.iter().zip(reference.values.iter()).map(|(a, b)| a * b).sum();
    Ok((ir / (ii.sqrt() * rr.sqrt())).clamp(-1.0, 1.0))
}

/// Peaks whose topographic prominence exceeds `min_prominence * max`, refined
/// to sub-cell precision with a three-point parabola along each axis, sorted
/// by `x`. The prominence of a peak is its height above the highest saddle
/// (8-connected) that links it to a taller peak; the tallest peak counts its
/// full height. Equal values are ranked in raster order, so a plateau yields
/// one peak at its first cell.
pub fn peak_positions(image: &GridImage, min_prominence: f64) -> Vec<Point> {
    let (nz, nx) = image.values.dim();
    let peak = image.max();
    if !(peak > 0.0) {
        return Vec::new();
    }
    let floor = min_prominence * peak;
    let v = &image.values;
    let flat: Vec<f64> = v.iter().copied().collect();
    let mut order: Vec<usize> = (0..flat.len()).collect();
    order.sort_by(|&a, &b| flat[b].total_cmp(&flat[a]).then(a.cmp(&b)));

    // Flood from the top: each component remembers its summit; when two meet,
    // the lower summit's prominence is fixed at the current level.
    const UNSET: usize = usize::MAX;
    let mut parent = vec![UNSET; flat.len()];
    let mut summit = vec![0usize; flat.len()];
    let mut prominence = vec![f64::NAN; flat.len()];
    fn root(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for &i in &order {
        let (iz, ix) = (i / nx, i % nx);
        parent[i] = i;
        summit[i] = i;
        for dz in -1i64..=1 {
            for dx in -1i64..=1 {
                let (jz, jx) = (iz as i64 + dz, ix as i64 + dx);
                if (dz == 0 && dx == 0) || jz < 0 || jx < 0 || jz >= nz as i64 || jx >= nx as i64 {
                    continue;
                }
                let j = jz as usize * nx + jx as usize;
                if parent[j] == UNSET {
                    continue;
                }
                let (ri, rj) = (root(&mut parent, i), root(&mut parent, j));
                if ri == rj {
                    continue;
                }
                let (si, sj) = (summit[ri], summit[rj]);
                // rank summits by value, then raster order
                let i_higher = flat[si] > flat[sj] || (flat[si] == flat[sj] && si < sj);
                let (keep, lose) = if i_higher { (ri, rj) } else { (rj, ri) };
                let lost = summit[lose];
                if lost != i {
                    prominence[lost] = flat[lost] - flat[i];
                }
                parent[lose] = keep;
            }
        }
    }
    prominence[order[0]] = flat[order[0]];

    let mut out = Vec::new();
    for (i, &prom) in prominence.iter().enumerate() {
        if !(prom > floor) {
            continue;
        }
        let (iz, ix) = (i / nx, i % nx);
        let c = flat[i];
        let refine = |l: Option<f64>, r: Option<f64>| match (l, r) {
            (Some(l), Some(r)) => {
                let den = l - 2.0 * c + r;
                if den < 0.0 {
                    (0.5 * (l - r) / den).clamp(-0.5, 0.5)
                } else {
                    0.0
                }
            }
            _ => 0.0,
        };
        let left = (ix > 0).then(|| v[(iz, ix - 1)]);
        let right = (ix + 1 < nx).then(|| v[(iz, ix + 1)]);
        let up = (iz > 0).then(|| v[(iz - 1, ix)]);
        let down = (iz + 1 < nz).then(|| v[(iz + 1, ix)]);
        let ox = refine(left, right);
        let oz = refine(up, down);
        out.push(Point::new(
            image.x0 + (ix as f64 + ox) * image.step,
            image.z0 + (iz as f64 + oz) * image.step,
        ));
    }
    out.sort_by(|a, b| a.x.total_cmp(&b.x));
    out
}
