//! Synthetic ground truth: 4D phantoms with sinusoidal regional fluctuation,
//! per-slice rigid motion trajectories, and slice acquisition.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::forward::{forward_project, ScatteredSlice, SliceModel};
use crate::geometry::{Grid3D, Grid4D, Point3, RigidTransform, Volume3D, Volume4D};
use crate::psf::PsfParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhantomKind {
    NestedEllipsoids,
    CheckerboardPlusEllipsoid,
}

impl PhantomKind {
    pub fn n_regions(self) -> usize {
        match self {
            Self::NestedEllipsoids => 5,
            Self::CheckerboardPlusEllipsoid => 3,
        }
    }
}

impl FromStr for PhantomKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nested-ellipsoids" => Ok(Self::NestedEllipsoids),
            "checkerboard-plus-ellipsoid" => Ok(Self::CheckerboardPlusEllipsoid),
            other => Err(Error::invalid(format!("unknown phantom kind {other:?}"))),
        }
    }
}

impl fmt::Display for PhantomKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::NestedEllipsoids => "nested-ellipsoids",
            Self::CheckerboardPlusEllipsoid => "checkerboard-plus-ellipsoid",
        })
    }
}

/// Intensity of one region: `baseline · (1 + amplitude · s(t))` where `s` is a
/// unit sinusoid made exactly zero-mean over the sampled timepoints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionSignal {
    pub baseline: f64,
    /// Fraction of baseline, e.g. 0.02 for 2 %.
    pub amplitude: f64,
    pub period_s: f64,
}

impl RegionSignal {
    pub const fn new(baseline: f64, amplitude: f64, period_s: f64) -> Self {
        Self {
            baseline,
            amplitude,
            period_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub kind: PhantomKind,
    pub grid: Grid4D,
    /// One entry per region; region 0 is the background.
    pub signals: Vec<RegionSignal>,
    pub seed: u64,
}

impl PhantomSpec {
    /// Default regional signals: 2 % fluctuation with a 20 s period.
    pub fn new(kind: PhantomKind, grid: Grid4D, seed: u64) -> Self {
        let signals = match kind {
            PhantomKind::NestedEllipsoids => vec![
                RegionSignal::new(0.0, 0.0, 20.0),
                RegionSignal::new(60.0, 0.02, 20.0),
                RegionSignal::new(100.0, 0.02, 20.0),
                RegionSignal::new(150.0, 0.02, 20.0),
                RegionSignal::new(40.0, 0.02, 20.0),
            ],
            PhantomKind::CheckerboardPlusEllipsoid => vec![
                RegionSignal::new(0.0, 0.0, 20.0),
                RegionSignal::new(80.0, 0.02, 20.0),
                RegionSignal::new(130.0, 0.02, 20.0),
            ],
        };
        Self {
            kind,
            grid,
            signals,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        let need = self.kind.n_regions();
        if self.signals.len() != need {
            return Err(Error::invalid(format!(
                "{} needs {need} region signals, got {}",
                self.kind,
                self.signals.len()
            )));
        }
        for s in &self.signals {
            if !(s.baseline.is_finite() && s.amplitude.is_finite() && s.amplitude >= 0.0) {
                return Err(Error::invalid("region baseline and amplitude must be finite, amplitude >= 0"));
            }
            if !(s.period_s > 0.0 && s.period_s.is_finite()) {
                return Err(Error::invalid("region period must be > 0"));
            }
        }
        Ok(())
    }
}

/// Default desk-scale grid: axial timepoints sit mid-volume (`t0 = TR/2`).
pub fn default_grid(dims: [usize; 4], spacing: [f64; 3], tr: f64) -> Result<Grid4D> {
    let extent = [
        dims[0] as f64 * spacing[0],
        dims[1] as f64 * spacing[1],
        dims[2] as f64 * spacing[2],
    ];
    let origin = [
        -0.5 * (extent[0] - spacing[0]),
        -0.5 * (extent[1] - spacing[1]),
        -0.5 * (extent[2] - spacing[2]),
    ];
    Grid4D::with_origin(dims, spacing, tr, origin, 0.5 * tr)
}

#[derive(Debug, Clone, Copy)]
struct Ellipsoid {
    center: Point3,
    semi: [f64; 3],
    label: u8,
}

impl Ellipsoid {
    fn contains(&self, p: Point3) -> bool {
        (0..3)
            .map(|a| ((p[a] - self.center[a]) / self.semi[a]).powi(2))
            .sum::<f64>()
            <= 1.0
    }
}

/// Continuous phantom; labels can be evaluated at any world point.
#[derive(Debug, Clone)]
pub struct Phantom {
    pub spec: PhantomSpec,
    /// Ordered outermost first; the last containing shape wins.
    shapes: Vec<Ellipsoid>,
    checker_cell: f64,
    /// Zero-mean unit fluctuation per region and timepoint.
    fluctuation: Vec<Vec<f64>>,
}

impl Phantom {
    pub fn new(spec: PhantomSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let g = &spec.grid;
        let center = g.center();
        let extent: [f64; 3] = std::array::from_fn(|a| g.dims[a] as f64 * g.spacing[a]);
        let mut jitter = |scale: f64| 1.0 + scale * rng.random_range(-1.0..1.0);
        let semi = |f: f64, j: &mut dyn FnMut(f64) -> f64| -> [f64; 3] {
            std::array::from_fn(|a| f * extent[a] * j(0.05))
        };
        let mut shapes = Vec::new();
        match spec.kind {
            PhantomKind::NestedEllipsoids => {
                shapes.push(Ellipsoid { center, semi: semi(0.36, &mut jitter), label: 1 });
                let inner = [
                    center[0] + 0.03 * extent[0] * jitter(0.5),
                    center[1] - 0.04 * extent[1] * jitter(0.5),
                    center[2] + 0.03 * extent[2] * jitter(0.5),
                ];
                shapes.push(Ellipsoid { center: inner, semi: semi(0.27, &mut jitter), label: 2 });
                // Off-center inclusions make rotations about every axis identifiable.
                for (label, side) in [(3u8, 1.0), (4u8, -1.0)] {
                    let c = [
                        inner[0] + side * 0.12 * extent[0] * jitter(0.2),
                        inner[1] + side * 0.1 * extent[1] * jitter(0.2),
                        inner[2] - side * 0.1 * extent[2] * jitter(0.2),
                    ];
                    shapes.push(Ellipsoid { center: c, semi: semi(0.07, &mut jitter), label });
                }
            }
            PhantomKind::CheckerboardPlusEllipsoid => {
                shapes.push(Ellipsoid { center, semi: semi(0.36, &mut jitter), label: 1 });
            }
        }
        let checker_cell = 4.0 * g.spacing[0].max(g.spacing[1]);

        let nt = g.dims[3];
        let fluctuation = spec
            .signals
            .iter()
            .map(|s| {
                let phase = rng.random_range(0.0..2.0 * PI);
                let raw: Vec<f64> = (0..nt)
                    .map(|l| (2.0 * PI * g.voxel_to_world([0.0, 0.0, 0.0, l as f64]).1 / s.period_s + phase).sin())
                    .collect();
                let mean = raw.iter().sum::<f64>() / nt as f64;
                raw.into_iter().map(|v| v - mean).collect()
            })
            .collect();
        Ok(Self {
            spec,
            shapes,
            checker_cell,
            fluctuation,
        })
    }

    pub fn label_at(&self, p: Point3) -> u8 {
        let mut label = 0;
        for s in &self.shapes {
            if s.contains(p) {
                label = s.label;
            }
        }
        if self.spec.kind == PhantomKind::CheckerboardPlusEllipsoid && label == 1 {
            let c = self.spec.grid.center();
            let parity: i64 = (0..3)
                .map(|a| ((p[a] - c[a]) / self.checker_cell).floor() as i64)
                .sum();
            if parity.rem_euclid(2) == 1 {
                label = 2;
            }
        }
        label
    }

    /// Intensity of region `label` at timepoint `l`.
    pub fn region_value(&self, label: u8, l: usize) -> f64 {
        let s = &self.spec.signals[label as usize];
        s.baseline * (1.0 + s.amplitude * self.fluctuation[label as usize][l])
    }

    /// Sample on `grid`, which must share the phantom's time axis.
    pub fn render(&self, grid: &Grid4D) -> Result<(Volume4D, Vec<u8>)> {
        let own = &self.spec.grid;
        if grid.dims[3] != own.dims[3] || grid.tr != own.tr || grid.t0 != own.t0 {
            return Err(Error::GeometryMismatch("render grid must share the phantom time axis".into()));
        }
        let spatial = grid.spatial();
        let [nx, ny, nz] = spatial.dims;
        let labels: Vec<u8> = (0..nz)
            .into_par_iter()
            .flat_map_iter(|k| {
                (0..ny).flat_map(move |j| (0..nx).map(move |i| (i, j, k)))
            })
            .map(|(i, j, k)| self.label_at(spatial.voxel_to_world([i as f64, j as f64, k as f64])))
            .collect();
        let frame = grid.frame_len();
        let mut data = vec![0.0; grid.len()];
        data.par_chunks_mut(frame).enumerate().for_each(|(l, chunk)| {
            let values: Vec<f64> = (0..self.spec.signals.len())
                .map(|r| self.region_value(r as u8, l))
                .collect();
            for (d, &lab) in chunk.iter_mut().zip(&labels) {
                *d = values[lab as usize];
            }
        });
        Ok((Volume4D::from_data(*grid, data)?, labels))
    }

    /// Timepoint `l` seen through `pose`: voxel `q` averages `factor³`
    /// sub-samples of the phantom at `pose(q + offset)` spread over the voxel.
    pub fn render_frame_supersampled(
        &self,
        grid: &Grid3D,
        l: usize,
        pose: &RigidTransform,
        factor: usize,
    ) -> Result<Volume3D> {
        if l >= self.spec.grid.dims[3] {
            return Err(Error::invalid(format!("timepoint {l} outside the phantom series")));
        }
        let f = factor.max(1);
        let offsets: Vec<f64> = (0..f).map(|s| (s as f64 + 0.5) / f as f64 - 0.5).collect();
        let affine = pose.to_affine();
        let [nx, ny, _] = grid.dims;
        let data = (0..grid.len())
            .into_par_iter()
            .map(|n| {
                let (i, j, k) = (n % nx, (n / nx) % ny, n / (nx * ny));
                let mut acc = 0.0;
                for oz in &offsets {
                    for oy in &offsets {
                        for ox in &offsets {
                            let q = grid.voxel_to_world([i as f64 + ox, j as f64 + oy, k as f64 + oz]);
                            acc += self.region_value(self.label_at(affine.apply(q)), l);
                        }
                    }
                }
                acc / (f * f * f) as f64
            })
            .collect();
        Volume3D::from_data(*grid, data)
    }
}

/// Phantom volume on its own grid and the region label map.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<(Volume4D, Vec<u8>)> {
    Phantom::new(spec.clone())?.render(&spec.grid)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectoryStyle {
    SmoothDrift,
    Burst,
    Mixed,
}

impl FromStr for TrajectoryStyle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "smooth-drift" => Ok(Self::SmoothDrift),
            "burst" => Ok(Self::Burst),
            "mixed" => Ok(Self::Mixed),
            other => Err(Error::invalid(format!("unknown trajectory style {other:?}"))),
        }
    }
}

impl fmt::Display for TrajectoryStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::SmoothDrift => "smooth-drift",
            Self::Burst => "burst",
            Self::Mixed => "mixed",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySpec {
    pub max_translation: [f64; 3],
    /// Roll, pitch, yaw: rotations about x, y and z in degrees.
    pub max_rotation: [f64; 3],
    pub style: TrajectoryStyle,
    /// Burst position as fractions `[start, end)` of the series.
    pub burst_window: (f64, f64),
    /// Spline knots across the series for the drift component.
    pub drift_knots: usize,
    pub seed: u64,
}

impl TrajectorySpec {
    pub fn new(max_rotation: [f64; 3], max_translation: [f64; 3], style: TrajectoryStyle, seed: u64) -> Self {
        Self {
            max_translation,
            max_rotation,
            style,
            burst_window: (0.45, 0.6),
            drift_knots: 6,
            seed,
        }
    }

    pub fn motion_free(seed: u64) -> Self {
        Self::new([0.0; 3], [0.0; 3], TrajectoryStyle::SmoothDrift, seed)
    }

    /// Subject S14 of the clinical series: 27.9° pitch and 11.9 mm x-translation.
    pub fn strong_rotation(seed: u64) -> Self {
        Self::new([4.2, 27.9, 7.7], [11.9, 3.0, 3.2], TrajectoryStyle::Mixed, seed)
    }

    pub fn maxima(&self) -> [f64; 6] {
        let r = self.max_rotation;
        let t = self.max_translation;
        [r[0], r[1], r[2], t[0], t[1], t[2]]
    }

    pub fn validate(&self) -> Result<()> {
        if self.maxima().iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(Error::invalid("trajectory maxima must be finite and >= 0"));
        }
        let (a, b) = self.burst_window;
        if !(0.0 <= a && a < b && b <= 1.0) {
            return Err(Error::invalid(format!("burst window must satisfy 0 <= start < end <= 1, got ({a}, {b})")));
        }
        if self.drift_knots < 2 {
            return Err(Error::invalid("drift_knots must be >= 2"));
        }
        Ok(())
    }
}

/// Uniform Catmull-Rom interpolation through `knots` at parameter `s ∈ [0, 1]`.
fn catmull_rom(knots: &[f64], s: f64) -> f64 {
    let n = knots.len();
    let u = s.clamp(0.0, 1.0) * (n - 1) as f64;
    let i = (u.floor() as usize).min(n - 2);
    let f = u - i as f64;
    let at = |k: isize| knots[k.clamp(0, n as isize - 1) as usize];
    let (p0, p1, p2, p3) = (at(i as isize - 1), at(i as isize), at(i as isize + 1), at(i as isize + 2));
    0.5 * (2.0 * p1
        + (p2 - p0) * f
        + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * f * f
        + (3.0 * p1 - p0 - 3.0 * p2 + p3) * f * f * f)
}

/// Per-slice poses in acquisition order, rotating about `center`.
/// Each parameter attains exactly its declared maximum magnitude.
pub fn generate_trajectory(spec: &TrajectorySpec, n_slices: usize, center: Point3) -> Result<Vec<RigidTransform>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let maxima = spec.maxima();
    let mut params = vec![[0.0; 6]; n_slices];
    let denom = (n_slices.max(2) - 1) as f64;
    let (b0, b1) = spec.burst_window;
    for (p, &max) in maxima.iter().enumerate() {
        let knots: Vec<f64> = (0..spec.drift_knots).map(|_| rng.random_range(-1.0..1.0)).collect();
        let level = rng.random_range(0.5..1.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let phase = rng.random_range(0.0..2.0 * PI);
        let drift_weight = match spec.style {
            TrajectoryStyle::SmoothDrift => 1.0,
            TrajectoryStyle::Burst => 0.0,
            TrajectoryStyle::Mixed => 0.3,
        };
        let burst_weight = if spec.style == TrajectoryStyle::SmoothDrift { 0.0 } else { 1.0 };
        let curve: Vec<f64> = (0..n_slices)
            .map(|k| {
                let s = k as f64 / denom;
                let drift = catmull_rom(&knots, s);
                let burst = if s >= b0 && s < b1 {
                    let w = (s - b0) / (b1 - b0);
                    (PI * w).sin().powi(2) * (level + 0.4 * (4.0 * PI * w + phase).sin())
                } else {
                    0.0
                };
                drift_weight * drift + burst_weight * burst
            })
            .collect();
        let peak = curve.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if peak > 0.0 && max > 0.0 {
            for (k, v) in curve.iter().enumerate() {
                params[k][p] = (v / peak * max).clamp(-max, max);
            }
        }
    }
    Ok(params.into_iter().map(|p| RigidTransform::from_params(p, center)).collect())
}

/// Slice positions in acquisition order within one volume: packets
/// `0, f, 2f, …`, then `1, 1+f, …`, and so on.
pub fn acquisition_order(nz: usize, interleave: usize) -> Vec<usize> {
    let f = interleave.max(1);
    (0..f).flat_map(|start| (start..nz).step_by(f)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcquisitionSpec {
    pub noise_sigma: f64,
    pub interleave: usize,
    pub seed: u64,
}

impl AcquisitionSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::invalid("noise_sigma must be finite and >= 0"));
        }
        if self.interleave < 1 {
            return Err(Error::invalid("interleave must be >= 1"));
        }
        Ok(())
    }
}

/// Empty slices in acquisition order for `grid`: one per z-plane and volume.
/// Slice `m` of volume `l` is acquired at `l·TR + (p + ½)·TR/nz` after the
/// series start `t0 − TR/2`, where `p` is its position in the interleave order.
pub fn slice_layout(grid: &Grid4D, trajectory: &[RigidTransform], acq: &AcquisitionSpec) -> Result<Vec<ScatteredSlice>> {
    acq.validate()?;
    let [nx, ny, nz, nt] = grid.dims;
    if trajectory.len() != nz * nt {
        return Err(Error::GeometryMismatch(format!(
            "trajectory has {} poses for {} slices",
            trajectory.len(),
            nz * nt
        )));
    }
    let order = acquisition_order(nz, acq.interleave);
    let start = grid.t0 - 0.5 * grid.tr;
    let sigma = if acq.noise_sigma > 0.0 { acq.noise_sigma } else { 1.0 };
    let mut out = Vec::with_capacity(nz * nt);
    for l in 0..nt {
        for (p, &m) in order.iter().enumerate() {
            let (origin, _) = grid.voxel_to_world([0.0, 0.0, m as f64, 0.0]);
            out.push(ScatteredSlice {
                data: vec![0.0; nx * ny],
                dims: [nx, ny],
                volume_index: l,
                slice_index: m,
                acq_time: start + l as f64 * grid.tr + (p as f64 + 0.5) * grid.tr / nz as f64,
                pose: trajectory[out.len()],
                spacing: [grid.spacing[0], grid.spacing[1]],
                thickness: grid.spacing[2],
                sigma,
                plane_origin: origin,
            });
        }
    }
    Ok(out)
}

fn project_and_corrupt(
    truth: &Volume4D,
    mut slices: Vec<ScatteredSlice>,
    psf: &PsfParams,
    acq: &AcquisitionSpec,
) -> Result<Vec<ScatteredSlice>> {
    let predictions = slices
        .par_iter()
        .map(|s| forward_project(truth, &SliceModel::new(s, &truth.grid, psf)).map(|p| p.values))
        .collect::<Result<Vec<_>>>()?;
    for (s, values) in slices.iter_mut().zip(predictions) {
        s.data = values;
    }
    if acq.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(acq.seed);
        let normal = Normal::new(0.0, acq.noise_sigma).map_err(|e| Error::invalid(e.to_string()))?;
        for s in &mut slices {
            for v in &mut s.data {
                *v += normal.sample(&mut rng);
            }
        }
    }
    Ok(slices)
}

/// Project `truth` at each pose and acquisition time, then add Gaussian noise.
/// Slices take the truth grid's in-plane sampling and z-spacing as thickness.
pub fn simulate_acquisition(
    truth: &Volume4D,
    trajectory: &[RigidTransform],
    psf: &PsfParams,
    acq: &AcquisitionSpec,
) -> Result<Vec<ScatteredSlice>> {
    psf.validate()?;
    let slices = slice_layout(&truth.grid, trajectory, acq)?;
    project_and_corrupt(truth, slices, psf, acq)
}

/// Grid with twice the spatial resolution over the same field of view.
pub fn refined_grid(grid: &Grid4D) -> Result<Grid4D> {
    let spacing = grid.spacing.map(|s| 0.5 * s);
    let origin: Point3 = std::array::from_fn(|a| grid.origin[a] - 0.5 * spacing[a]);
    Grid4D::with_origin(
        [grid.dims[0] * 2, grid.dims[1] * 2, grid.dims[2] * 2, grid.dims[3]],
        spacing,
        grid.tr,
        origin,
        grid.t0,
    )
}

/// Crime-avoidance mode: the phantom is rendered on a 2× finer grid and the
/// slices are projected from there, while their sampling follows `grid`.
pub fn simulate_acquisition_fine(
    phantom: &Phantom,
    grid: &Grid4D,
    trajectory: &[RigidTransform],
    psf: &PsfParams,
    acq: &AcquisitionSpec,
) -> Result<Vec<ScatteredSlice>> {
    psf.validate()?;
    let fine = refined_grid(grid)?;
    let (truth, _) = phantom.render(&fine)?;
    let slices = slice_layout(grid, trajectory, acq)?;
    project_and_corrupt(&truth, slices, psf, acq)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_grid() -> Grid4D {
        default_grid([16, 14, 6, 8], [1.74, 1.74, 3.0], 2.0).unwrap()
    }

    #[test]
    fn zero_amplitude_is_static() {
        let mut spec = PhantomSpec::new(PhantomKind::NestedEllipsoids, small_grid(), 3);
        for s in &mut spec.signals {
            s.amplitude = 0.0;
        }
        let (v, _) = generate_phantom(&spec).unwrap();
        for l in 1..8 {
            assert_eq!(v.frame(l), v.frame(0));
        }
    }

    #[test]
    fn region_means_equal_baselines() {
        for kind in [PhantomKind::NestedEllipsoids, PhantomKind::CheckerboardPlusEllipsoid] {
            let spec = PhantomSpec::new(kind, small_grid(), 11);
            let (v, labels) = generate_phantom(&spec).unwrap();
            let mean = v.temporal_mean();
            for (i, &lab) in labels.iter().enumerate() {
                let b = spec.signals[lab as usize].baseline;
                assert!((mean.data[i] - b).abs() < 1e-10);
            }
            let present: std::collections::BTreeSet<u8> = labels.iter().copied().collect();
            assert_eq!(present.len(), kind.n_regions(), "{kind}");
        }
    }

    #[test]
    fn fluctuation_rms_matches_amplitude() {
        // 32 timepoints at TR 2.5 s cover 4 whole 20 s periods.
        let grid = default_grid([8, 8, 4, 32], [4.0, 4.0, 4.0], 2.5).unwrap();
        let spec = PhantomSpec::new(PhantomKind::NestedEllipsoids, grid, 5);
        let p = Phantom::new(spec.clone()).unwrap();
        let b = spec.signals[2].baseline;
        let series: Vec<f64> = (0..32).map(|l| p.region_value(2, l)).collect();
        let m = series.iter().sum::<f64>() / 32.0;
        let std = (series.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 32.0).sqrt();
        let expected = b * 0.02 / 2f64.sqrt();
        assert!((std - expected).abs() < 0.01 * expected);
    }

    #[test]
    fn phantom_is_deterministic() {
        let spec = PhantomSpec::new(PhantomKind::CheckerboardPlusEllipsoid, small_grid(), 9);
        let a = generate_phantom(&spec).unwrap().0;
        let b = generate_phantom(&spec).unwrap().0;
        assert!(a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn motion_free_trajectory_is_identity() {
        let t = generate_trajectory(&TrajectorySpec::motion_free(1), 50, [0.0; 3]).unwrap();
        assert!(t.iter().all(|p| p.params() == [0.0; 6]));
    }

    #[test]
    fn strong_rotation_hits_declared_maxima() {
        for style in [TrajectoryStyle::SmoothDrift, TrajectoryStyle::Burst, TrajectoryStyle::Mixed] {
            let mut spec = TrajectorySpec::strong_rotation(4);
            spec.style = style;
            let t = generate_trajectory(&spec, 24 * 32, [1.0, 2.0, 3.0]).unwrap();
            let maxima = spec.maxima();
            for (p, &max) in maxima.iter().enumerate() {
                let peak = t.iter().map(|x| x.params()[p].abs()).fold(0.0, f64::max);
                assert!(peak <= max + 1e-9, "{style} param {p}: {peak}");
                assert!(peak >= 0.9 * max, "{style} param {p}: {peak}");
            }
        }
    }

    #[test]
    fn burst_is_confined_to_its_window() {
        let mut spec = TrajectorySpec::strong_rotation(2);
        spec.style = TrajectoryStyle::Burst;
        let t = generate_trajectory(&spec, 200, [0.0; 3]).unwrap();
        for (k, pose) in t.iter().enumerate() {
            let s = k as f64 / 199.0;
            if !(0.45..0.6).contains(&s) {
                assert_eq!(pose.params(), [0.0; 6]);
            }
        }
    }

    #[test]
    fn trajectory_is_deterministic() {
        let spec = TrajectorySpec::strong_rotation(8);
        let a = generate_trajectory(&spec, 100, [0.0; 3]).unwrap();
        let b = generate_trajectory(&spec, 100, [0.0; 3]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn interleaved_order() {
        assert_eq!(acquisition_order(7, 2), vec![0, 2, 4, 6, 1, 3, 5]);
        assert_eq!(acquisition_order(4, 1), vec![0, 1, 2, 3]);
        assert_eq!(acquisition_order(7, 3), vec![0, 3, 6, 1, 4, 2, 5]);
    }

    #[test]
    fn noiseless_identity_slices_are_grid_planes() {
        let grid = small_grid();
        let spec = PhantomSpec::new(PhantomKind::NestedEllipsoids, grid, 1);
        let (truth, _) = generate_phantom(&spec).unwrap();
        let traj = vec![RigidTransform::identity(); 6 * 8];
        let mut psf = PsfParams::default_for_grid(&grid).unwrap();
        psf.sigma_x = 0.2;
        psf.sigma_y = 0.2;
        psf.sigma_z = 0.3;
        // Own frame lies within 0.42·TR·scale, the neighbour beyond 0.58·TR·scale.
        psf.sigma_t = 0.5;
        let acq = AcquisitionSpec { noise_sigma: 0.0, interleave: 2, seed: 0 };
        let slices = simulate_acquisition(&truth, &traj, &psf, &acq).unwrap();
        crate::forward::check_acquisition_order(&slices).unwrap();
        for s in &slices {
            assert_eq!(s.sigma, 1.0);
            let plane = &truth.frame(s.volume_index)[s.slice_index * 16 * 14..(s.slice_index + 1) * 16 * 14];
            for (a, b) in s.data.iter().zip(plane) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn noise_has_nominal_std() {
        let grid = small_grid();
        let spec = PhantomSpec::new(PhantomKind::NestedEllipsoids, grid, 1);
        let (truth, _) = generate_phantom(&spec).unwrap();
        let traj = generate_trajectory(&TrajectorySpec::strong_rotation(3), 48, grid.center()).unwrap();
        let psf = PsfParams::default_for_grid(&grid).unwrap();
        let clean = simulate_acquisition(&truth, &traj, &psf, &AcquisitionSpec { noise_sigma: 0.0, interleave: 2, seed: 5 }).unwrap();
        let sigma = 0.02 * 100.0;
        let noisy = simulate_acquisition(&truth, &traj, &psf, &AcquisitionSpec { noise_sigma: sigma, interleave: 2, seed: 5 }).unwrap();
        let diffs: Vec<f64> = clean
            .iter()
            .zip(&noisy)
            .flat_map(|(a, b)| a.data.iter().zip(&b.data).map(|(x, y)| y - x))
            .collect();
        let n = diffs.len() as f64;
        let m = diffs.iter().sum::<f64>() / n;
        let std = (diffs.iter().map(|d| (d - m).powi(2)).sum::<f64>() / n).sqrt();
        assert!((std - sigma).abs() < 0.05 * sigma, "{std}");
        assert!(noisy.iter().all(|s| s.sigma == sigma));
    }

    #[test]
    fn fine_mode_differs_but_stays_close() {
        let grid = small_grid();
        let phantom = Phantom::new(PhantomSpec::new(PhantomKind::NestedEllipsoids, grid, 2)).unwrap();
        let (truth, _) = phantom.render(&grid).unwrap();
        let traj = vec![RigidTransform::identity(); 48];
        let psf = PsfParams::default_for_grid(&grid).unwrap();
        let acq = AcquisitionSpec { noise_sigma: 0.0, interleave: 2, seed: 0 };
        let coarse = simulate_acquisition(&truth, &traj, &psf, &acq).unwrap();
        let fine = simulate_acquisition_fine(&phantom, &grid, &traj, &psf, &acq).unwrap();
        let diff = coarse
            .iter()
            .zip(&fine)
            .flat_map(|(a, b)| a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max);
        assert!(diff > 0.0 && diff < 150.0);
    }

    #[test]
    fn refined_grid_shares_field_of_view() {
        let g = small_grid();
        let f = refined_grid(&g).unwrap();
        for a in 0..3 {
            let lo_c = g.origin[a] - 0.5 * g.spacing[a];
            let lo_f = f.origin[a] - 0.5 * f.spacing[a];
            assert!((lo_c - lo_f).abs() < 1e-12);
        }
        assert!((f.center()[0] - g.center()[0]).abs() < 1e-12);
    }
}
