//! Transducer array layout, reconstruction grid and the single-PSF delay law.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// A position in the imaging plane, metres. `x` is lateral, `z` is depth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub z: f64,
}

impl Point {
    pub const fn new(x: f64, z: f64) -> Self {
        Point { x, z }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.z - other.z)
    }

    pub(crate) fn is_finite(&self) -> bool {
        self.x.is_finite() && self.z.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ImagingMode {
    /// Photoacoustic: one-way propagation from the source to the element.
    #[serde(rename = "PA")]
    Photoacoustic,
    /// Plane-wave ultrasound: adds the outbound plane-wave term.
    #[serde(rename = "US_planewave")]
    PlaneWave,
}

impl ImagingMode {
    pub fn delta_us(self) -> f64 {
        match self {
            ImagingMode::Photoacoustic => 0.0,
            ImagingMode::PlaneWave => 1.0,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            ImagingMode::Photoacoustic => 0,
            ImagingMode::PlaneWave => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(ImagingMode::Photoacoustic),
            1 => Some(ImagingMode::PlaneWave),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ImagingMode::Photoacoustic => "PA",
            ImagingMode::PlaneWave => "US_planewave",
        }
    }
}

/// Flat linear array. Elements sit at `z = 0` unless constructed otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayGeometry {
    element_x: Vec<f64>,
    element_z: Vec<f64>,
    pitch: f64,
    center_frequency: f64,
    sampling_frequency: f64,
    sound_speed: f64,
}

impl ArrayGeometry {
    pub fn new(
        element_x: Vec<f64>,
        element_z: Vec<f64>,
        pitch: f64,
        center_frequency: f64,
        sampling_frequency: f64,
        sound_speed: f64,
    ) -> Result<Self> {
        if element_x.len() < 2 {
            return Err(invalid("array needs at least two elements"));
        }
        if element_x.len() != element_z.len() {
            return Err(invalid("element_x and element_z lengths differ"));
        }
        if element_x.iter().chain(&element_z).any(|v| !v.is_finite()) {
            return Err(invalid("element coordinates must be finite"));
        }
        if element_x.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("element_x must be strictly increasing"));
        }
        if !(pitch > 0.0) {
            return Err(invalid("pitch must be positive"));
        }
        if !(sound_speed > 0.0) {
            return Err(invalid("sound speed must be positive"));
        }
        if !(center_frequency > 0.0) {
            return Err(invalid("center frequency must be positive"));
        }
        if !(sampling_frequency > 2.0 * center_frequency) {
            return Err(invalid(
                "sampling frequency must exceed twice the center frequency",
            ));
        }
        Ok(ArrayGeometry {
            element_x,
            element_z,
            pitch,
            center_frequency,
            sampling_frequency,
            sound_speed,
        })
    }

    /// Uniform linear array centered on `x = 0`.
    pub fn linear(
        n_elements: usize,
        pitch: f64,
        center_frequency: f64,
        sampling_frequency: f64,
        sound_speed: f64,
    ) -> Result<Self> {
        let half = (n_elements as f64 - 1.0) / 2.0;
        let x = (0..n_elements).map(|k| (k as f64 - half) * pitch).collect();
        Self::new(
            x,
            vec![0.0; n_elements],
            pitch,
            center_frequency,
            sampling_frequency,
            sound_speed,
        )
    }

    /// 128 elements, 100 µm pitch, 15 MHz carrier sampled at 62.5 MHz, water.
    pub fn default_linear() -> Self {
        Self::linear(128, 100e-6, 15e6, 62.5e6, 1500.0).expect("default geometry is valid")
    }

    pub fn n_elements(&self) -> usize {
        self.element_x.len()
    }

    pub fn element(&self, k: usize) -> Point {
        Point::new(self.element_x[k], self.element_z[k])
    }

    pub fn element_x(&self) -> &[f64] {
        &self.element_x
    }

    pub fn element_z(&self) -> &[f64] {
        &self.element_z
    }

    pub fn pitch(&self) -> f64 {
        self.pitch
    }

    pub fn center_frequency(&self) -> f64 {
        self.center_frequency
    }

    pub fn sampling_frequency(&self) -> f64 {
        self.sampling_frequency
    }

    pub fn sound_speed(&self) -> f64 {
        self.sound_speed
    }

    pub fn aperture(&self) -> f64 {
        self.element_x[self.n_elements() - 1] - self.element_x[0]
    }
}

/// Cartesian reconstruction grid. Points are enumerated z-major: index
/// `iz * n_x + ix`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImagingGrid {
    pub x_min: f64,
    pub x_max: f64,
    pub z_min: f64,
    pub z_max: f64,
    pub step: f64,
    n_x: usize,
    n_z: usize,
}

impl ImagingGrid {
    pub fn new(x_min: f64, x_max: f64, z_min: f64, z_max: f64, step: f64) -> Result<Self> {
        if ![x_min, x_max, z_min, z_max, step].iter().all(|v| v.is_finite()) {
            return Err(invalid("grid bounds must be finite"));
        }
        if !(step > 0.0) {
            return Err(invalid("grid step must be positive"));
        }
        if x_max < x_min || z_max < z_min {
            return Err(invalid("grid bounds are inverted"));
        }
        let n_x = ((x_max - x_min) / step).round() as usize + 1;
        let n_z = ((z_max - z_min) / step).round() as usize + 1;
        Ok(ImagingGrid {
            x_min,
            x_max,
            z_min,
            z_max,
            step,
            n_x,
            n_z,
        })
    }

    /// 0.8 mm x 0.15 mm at a 12.5 µm step around (0, 15 mm): 65 x 13 points.
    pub fn default_grid() -> Self {
        Self::new(-0.4e-3, 0.4e-3, 14.925e-3, 15.075e-3, 12.5e-6).expect("default grid is valid")
    }

    /// A grid holding the single point `p`.
    pub fn single_point(p: Point, step: f64) -> Result<Self> {
        Self::new(p.x, p.x, p.z, p.z, step)
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn n_z(&self) -> usize {
        self.n_z
    }

    pub fn len(&self) -> usize {
        self.n_x * self.n_z
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn x_at(&self, ix: usize) -> f64 {
        self.x_min + ix as f64 * self.step
    }

    pub fn z_at(&self, iz: usize) -> f64 {
        self.z_min + iz as f64 * self.step
    }

    pub fn point(&self, index: usize) -> Point {
        let (iz, ix) = (index / self.n_x, index % self.n_x);
        Point::new(self.x_at(ix), self.z_at(iz))
    }

    pub fn points(&self) -> impl Iterator<Item = Point> + '_ {
        (0..self.len()).map(move |i| self.point(i))
    }

    /// Nearest grid index, or `None` if `p` lies more than half a step outside.
    pub fn nearest_index(&self, p: Point) -> Option<usize> {
        let fx = (p.x - self.x_min) / self.step;
        let fz = (p.z - self.z_min) / self.step;
        let (ix, iz) = (fx.round(), fz.round());
        if ix < 0.0 || iz < 0.0 || ix >= self.n_x as f64 || iz >= self.n_z as f64 {
            return None;
        }
        Some(iz as usize * self.n_x + ix as usize)
    }

    pub fn center(&self) -> Point {
        Point::new(0.5 * (self.x_min + self.x_max), 0.5 * (self.z_min + self.z_max))
    }
}

/// Time shift that turns the response of a source at `source` into the
/// response of a source at `grid_point`, as seen by `element`. Positive values
/// mean the grid-point response arrives later.
pub fn travel_delay(
    grid_point: Point,
    source: Point,
    element: Point,
    mode: ImagingMode,
    c: f64,
) -> Result<f64> {
    if !(c > 0.0) || !c.is_finite() {
        return Err(invalid("sound speed must be a positive finite number"));
    }
    if !(grid_point.is_finite() && source.is_finite() && element.is_finite()) {
        return Err(invalid("coordinates must be finite"));
    }
    let outbound = mode.delta_us() * (source.z - grid_point.z) / c;
    let inbound = (element.distance(&grid_point) - element.distance(&source)) / c;
    Ok(outbound + inbound)
}

/// Arrival time of a point response at an element, with the same sign
/// convention as [`travel_delay`] against a zero reference:
/// `arrival(i) - arrival(j) == travel_delay(i, j)`.
pub fn arrival_time(point: Point, element: Point, mode: ImagingMode, c: f64) -> f64 {
    -mode.delta_us() * point.z / c + element.distance(&point) / c
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubsetStrategy {
    Regular,
    Random,
}

impl std::str::FromStr for SubsetStrategy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "regular" => Ok(SubsetStrategy::Regular),
            "random" => Ok(SubsetStrategy::Random),
            other => Err(format!("unknown subset strategy '{other}'")),
        }
    }
}

/// Picks `n_sub` of `n_total` elements, always keeping the first and last so
/// the aperture is unchanged. Indices are returned sorted.
pub fn element_subset(
    n_total: usize,
    n_sub: usize,
    strategy: SubsetStrategy,
    seed: u64,
) -> Result<Vec<usize>> {
    if n_sub < 2 || n_sub > n_total {
        return Err(invalid(format!(
            "subset size {n_sub} must lie in [2, {n_total}]"
        )));
    }
    let last = n_total - 1;
    let indices = match strategy {
        SubsetStrategy::Regular => {
            let span = last as f64 / (n_sub - 1) as f64;
            let mut out: Vec<usize> = Vec::with_capacity(n_sub);
            for q in 0..n_sub {
                let mut idx = (q as f64 * span).round() as usize;
                if let Some(&prev) = out.last() {
                    if idx <= prev {
                        idx = prev + 1;
                    }
                }
                out.push(idx.min(last));
            }
            out
        }
        SubsetStrategy::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut out: Vec<usize> = sample(&mut rng, n_total - 2, n_sub - 2)
                .into_iter()
                .map(|i| i + 1)
                .collect();
            out.push(0);
            out.push(last);
            out.sort_unstable();
            out
        }
    };
    Ok(indices)
}

/// JSON description of an array and its reconstruction grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryDescription {
    pub element_x_m: Vec<f64>,
    pub pitch_m: f64,
    pub fc_hz: f64,
    pub fs_hz: f64,
    pub c_mps: f64,
    pub grid: GridDescription,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridDescription {
    pub x_min_m: f64,
    pub x_max_m: f64,
    pub z_min_m: f64,
    pub z_max_m: f64,
    pub step_m: f64,
}

impl Default for GeometryDescription {
    fn default() -> Self {
        Self::from_parts(&ArrayGeometry::default_linear(), &ImagingGrid::default_grid())
    }
}

impl Default for GridDescription {
    fn default() -> Self {
        GridDescription::from(&ImagingGrid::default_grid())
    }
}

impl From<&ImagingGrid> for GridDescription {
    fn from(g: &ImagingGrid) -> Self {
        GridDescription {
            x_min_m: g.x_min,
            x_max_m: g.x_max,
            z_min_m: g.z_min,
            z_max_m: g.z_max,
            step_m: g.step,
        }
    }
}

impl GridDescription {
    pub fn to_grid(&self) -> Result<ImagingGrid> {
        ImagingGrid::new(self.x_min_m, self.x_max_m, self.z_min_m, self.z_max_m, self.step_m)
    }
}

impl GeometryDescription {
    pub fn from_parts(geometry: &ArrayGeometry, grid: &ImagingGrid) -> Self {
        GeometryDescription {
            element_x_m: geometry.element_x().to_vec(),
            pitch_m: geometry.pitch(),
            fc_hz: geometry.center_frequency(),
            fs_hz: geometry.sampling_frequency(),
            c_mps: geometry.sound_speed(),
            grid: GridDescription::from(grid),
        }
    }

    pub fn to_parts(&self) -> Result<(ArrayGeometry, ImagingGrid)> {
        let n = self.element_x_m.len();
        let geometry = ArrayGeometry::new(
            self.element_x_m.clone(),
            vec![0.0; n],
            self.pitch_m,
            self.fc_hz,
            self.fs_hz,
            self.c_mps,
        )?;
        Ok((geometry, self.grid.to_grid()?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const C: f64 = 1500.0;

    #[test]
    fn delay_vanishes_at_the_source() {
        let p = Point::new(0.3e-3, 15.1e-3);
        for mode in [ImagingMode::Photoacoustic, ImagingMode::PlaneWave] {
            let d = travel_delay(p, p, Point::new(-2e-3, 0.0), mode, C).unwrap();
            assert_eq!(d, 0.0);
        }
    }

    #[test]
    fn on_axis_delays() {
        let element = Point::new(0.0, 0.0);
        let source = Point::new(0.0, 15e-3);
        let grid_point = Point::new(0.0, 16e-3);
        let pa = travel_delay(grid_point, source, element, ImagingMode::Photoacoustic, C).unwrap();
        assert_relative_eq!(pa, 666.6667e-9, max_relative = 1e-6);
        let us = travel_delay(grid_point, source, element, ImagingMode::PlaneWave, C).unwrap();
        assert!(us.abs() < 1e-18);
    }

    #[test]
    fn delay_rejects_bad_inputs() {
        let p = Point::new(0.0, 1e-3);
        assert!(travel_delay(p, p, p, ImagingMode::Photoacoustic, 0.0).is_err());
        let nan = Point::new(f64::NAN, 0.0);
        assert!(travel_delay(nan, p, p, ImagingMode::Photoacoustic, C).is_err());
    }

    #[test]
    fn arrival_differences_reproduce_delay_law() {
        let e = Point::new(3.1e-3, 0.0);
        let i = Point::new(0.2e-3, 15.05e-3);
        let j = Point::new(-0.1e-3, 14.97e-3);
        for mode in [ImagingMode::Photoacoustic, ImagingMode::PlaneWave] {
            let lhs = arrival_time(i, e, mode, C) - arrival_time(j, e, mode, C);
            let rhs = travel_delay(i, j, e, mode, C).unwrap();
            assert_relative_eq!(lhs, rhs, epsilon = 1e-18);
        }
    }

    #[test]
    fn regular_subsets() {
        let s = |n| element_subset(128, n, SubsetStrategy::Regular, 0).unwrap();
        assert_eq!(s(2), vec![0, 127]);
        assert_eq!(s(4), vec![0, 42, 85, 127]);
        assert_eq!(s(128), (0..128).collect::<Vec<_>>());
        assert!(element_subset(128, 1, SubsetStrategy::Regular, 0).is_err());
        assert!(element_subset(128, 129, SubsetStrategy::Regular, 0).is_err());
    }

    #[test]
    fn random_subset_is_seeded_and_anchored() {
        let a = element_subset(128, 8, SubsetStrategy::Random, 7).unwrap();
        let b = element_subset(128, 8, SubsetStrategy::Random, 7).unwrap();
        let c = element_subset(128, 8, SubsetStrategy::Random, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), 8);
        assert_eq!((a[0], a[7]), (0, 127));
        assert!(a.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn grid_bookkeeping() {
        let g = ImagingGrid::default_grid();
        assert_eq!((g.n_x(), g.n_z()), (65, 13));
        let center = g.nearest_index(Point::new(0.0, 15e-3)).unwrap();
        let p = g.point(center);
        assert!(p.x.abs() < 1e-12 && (p.z - 15e-3).abs() < 1e-12);
        assert_eq!(g.nearest_index(Point::new(1e-3, 15e-3)), None);
        for i in [0, 1, 64, 65, 844] {
            assert_eq!(g.nearest_index(g.point(i)), Some(i));
        }
    }

    #[test]
    fn geometry_invariants() {
        assert!(ArrayGeometry::linear(1, 1e-4, 15e6, 62.5e6, C).is_err());
        assert!(ArrayGeometry::linear(8, 1e-4, 15e6, 25e6, C).is_err());
        assert!(ArrayGeometry::new(vec![0.0, 0.0], vec![0.0; 2], 1e-4, 15e6, 62.5e6, C).is_err());
        let g = ArrayGeometry::default_linear();
        assert_eq!(g.n_elements(), 128);
        assert_relative_eq!(g.aperture(), 12.7e-3, max_relative = 1e-12);
    }

    #[test]
    fn description_round_trip() {
        let d = GeometryDescription::default();
        let text = serde_json::to_string(&d).unwrap();
        assert!(text.contains("element_x_m") && text.contains("step_m"));
        let back: GeometryDescription = serde_json::from_str(&text).unwrap();
        let (geometry, grid) = back.to_parts().unwrap();
        assert_eq!(geometry, ArrayGeometry::default_linear());
        assert_eq!(grid, ImagingGrid::default_grid());
    }

    fn coord() -> impl Strategy<Value = f64> {
        -20e-3..20e-3f64
    }

    proptest! {
        #[test]
        fn pa_delay_is_antisymmetric(ix in coord(), iz in coord(), jx in coord(), jz in coord(), kx in coord()) {
            let (i, j, k) = (Point::new(ix, iz), Point::new(jx, jz), Point::new(kx, 0.0));
            let a = travel_delay(i, j, k, ImagingMode::Photoacoustic, C).unwrap();
            let b = travel_delay(j, i, k, ImagingMode::Photoacoustic, C).unwrap();
            prop_assert!((a + b).abs() <= 1e-12 * a.abs().max(1e-9));
        }

        #[test]
        fn pa_delay_is_mirror_symmetric(ix in coord(), iz in coord(), jx in coord(), jz in coord(), kx in coord()) {
            let m = |p: Point| Point::new(-p.x, p.z);
            let (i, j, k) = (Point::new(ix, iz), Point::new(jx, jz), Point::new(kx, 0.0));
            let a = travel_delay(i, j, k, ImagingMode::Photoacoustic, C).unwrap();
            let b = travel_delay(m(i), m(j), m(k), ImagingMode::Photoacoustic, C).unwrap();
            prop_assert!((a - b).abs() <= 1e-15);
            prop_assert!(a.is_finite());
        }

        #[test]
        fn regular_subset_keeps_endpoints(n_total in 2usize..300, frac in 0.0..1.0f64) {
            let n_sub = 2 + ((n_total - 2) as f64 * frac) as usize;
            let s = element_subset(n_total, n_sub, SubsetStrategy::Regular, 0).unwrap();
            prop_assert_eq!(s.len(), n_sub);
            prop_assert_eq!(s[0], 0);
            prop_assert_eq!(*s.last().unwrap(), n_total - 1);
            prop_assert!(s.windows(2).all(|w| w[0] < w[1]));
        }
    }
}
