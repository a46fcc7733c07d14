//! Slice acquisition operator and its adjoint.
//!
//! Each slice pixel is a point sample (pixel center) of the PSF-blurred 4D
//! volume, taken at the motion-transformed pixel position and the slice's
//! acquisition time. Weights are normalized per pixel, so the operator
//! reproduces constants exactly; the adjoint applies the same normalized
//! weights transposed.

use std::collections::BTreeMap;
use std::ops::Range;

use rayon::prelude::*;

use crate::error::{Error, Result, Warning};
use crate::geometry::{Grid4D, Point3, RigidTransform, Volume3D, Volume4D};
use crate::psf::{Footprint, PsfParams};

/// One acquired 2D slice.
#[derive(Debug, Clone, PartialEq)]
pub struct ScatteredSlice {
    /// Pixel intensities, u fastest (`u + nu·v`).
    pub data: Vec<f64>,
    pub dims: [usize; 2],
    pub volume_index: usize,
    pub slice_index: usize,
    /// Seconds from series start.
    pub acq_time: f64,
    /// Maps native slice coordinates into the anatomy frame.
    pub pose: RigidTransform,
    /// In-plane pixel spacing (du, dv) in mm.
    pub spacing: [f64; 2],
    pub thickness: f64,
    /// Noise standard deviation in intensity units.
    pub sigma: f64,
    /// World position of pixel (0, 0) before motion. Native slices are axial:
    /// u runs along x and v along y.
    pub plane_origin: Point3,
}

impl ScatteredSlice {
    pub fn validate(&self) -> Result<()> {
        if self.data.len() != self.dims[0] * self.dims[1] {
            return Err(Error::GeometryMismatch(format!(
                "slice data length {} != {}x{}",
                self.data.len(),
                self.dims[0],
                self.dims[1]
            )));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid(format!("slice sigma must be > 0, got {}", self.sigma)));
        }
        if self.spacing.iter().any(|s| !(*s > 0.0)) || !(self.thickness > 0.0) {
            return Err(Error::invalid("slice spacing and thickness must be > 0"));
        }
        if self.data.iter().any(|v| !v.is_finite()) || !self.acq_time.is_finite() {
            return Err(Error::invalid("slice contains non-finite values"));
        }
        Ok(())
    }

    pub fn native_point(&self, u: usize, v: usize) -> Point3 {
        [
            self.plane_origin[0] + u as f64 * self.spacing[0],
            self.plane_origin[1] + v as f64 * self.spacing[1],
            self.plane_origin[2],
        ]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Check that acquisition times strictly increase in the given order.
pub fn check_acquisition_order(slices: &[ScatteredSlice]) -> Result<()> {
    for w in slices.windows(2) {
        if !(w[1].acq_time > w[0].acq_time) {
            return Err(Error::invalid(format!(
                "acquisition times must strictly increase ({} then {})",
                w[0].acq_time, w[1].acq_time
            )));
        }
    }
    Ok(())
}

/// Precomputed sampling geometry of one slice on one grid.
#[derive(Debug, Clone)]
pub struct SliceModel {
    pub grid: Grid4D,
    pub psf: PsfParams,
    pub pose: RigidTransform,
    pub dims: [usize; 2],
    plane_origin: Point3,
    spacing: [f64; 2],
    /// Motion-transformed pixel centers (world mm).
    pub points: Vec<Point3>,
    /// Acquisition time as a fractional timepoint index.
    pub time: f64,
    /// Pixels with a non-empty footprint.
    pub valid: Vec<bool>,
}

impl SliceModel {
    pub fn new(slice: &ScatteredSlice, grid: &Grid4D, psf: &PsfParams) -> Self {
        Self::with_pose(slice, &slice.pose, grid, psf)
    }

    /// Model for `slice` sampled at an arbitrary pose.
    pub fn with_pose(
        slice: &ScatteredSlice,
        pose: &RigidTransform,
        grid: &Grid4D,
        psf: &PsfParams,
    ) -> Self {
        let affine = pose.to_affine();
        let [nu, nv] = slice.dims;
        let mut points = Vec::with_capacity(nu * nv);
        for v in 0..nv {
            for u in 0..nu {
                points.push(affine.apply(slice.native_point(u, v)));
            }
        }
        let time = (slice.acq_time - grid.t0) / grid.tr;
        let mut model = Self {
            grid: *grid,
            psf: *psf,
            pose: *pose,
            dims: slice.dims,
            plane_origin: slice.plane_origin,
            spacing: slice.spacing,
            points,
            time,
            valid: Vec::new(),
        };
        let mut fp = model.scratch();
        model.valid = (0..model.points.len())
            .map(|p| {
                model.fill_pixel(&mut fp, p);
                !fp.is_empty()
            })
            .collect();
        model
    }

    /// Pixel center before motion.
    pub fn native_point(&self, pixel: usize) -> Point3 {
        let (u, v) = (pixel % self.dims[0], pixel / self.dims[0]);
        [
            self.plane_origin[0] + u as f64 * self.spacing[0],
            self.plane_origin[1] + v as f64 * self.spacing[1],
            self.plane_origin[2],
        ]
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn n_valid(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Footprint scratch with the temporal axis already filled.
    fn scratch(&self) -> Footprint {
        let mut fp = Footprint::default();
        fp.fill_temporal(&self.psf, &self.grid, self.time);
        fp
    }

    #[inline]
    fn fill_pixel(&self, fp: &mut Footprint, pixel: usize) {
        let u = self.grid.spatial().world_to_voxel(self.points[pixel]);
        fp.fill_spatial(&self.psf, &self.grid, u);
    }

    /// Timepoints touched by this slice.
    pub fn frame_range(&self) -> Range<usize> {
        let fp = self.scratch();
        let t = &fp.axes[3];
        t.start..t.start + t.len()
    }

    /// Normalized footprint of one pixel as `(linear index, weight)` pairs.
    pub fn pixel_weights(&self, pixel: usize) -> Vec<(usize, f64)> {
        let mut fp = self.scratch();
        self.fill_pixel(&mut fp, pixel);
        let total = fp.total_weight();
        fp.entries()
            .into_iter()
            .map(|(idx, w)| (self.grid.index(idx[0], idx[1], idx[2], idx[3]), w / total))
            .collect()
    }

    fn check_grid(&self, grid: &Grid4D) -> Result<()> {
        if !self.grid.same_geometry(grid) {
            return Err(Error::GeometryMismatch(
                "volume grid differs from the slice model grid".into(),
            ));
        }
        Ok(())
    }

    /// Forward projection of `data` (full 4D buffer) into `out`.
    fn project_into(&self, data: &[f64], out: &mut [f64]) {
        let g = &self.grid;
        let nx = g.dims[0];
        let nxy = nx * g.dims[1];
        let frame = g.frame_len();
        let mut fp = self.scratch();
        for (pixel, value) in out.iter_mut().enumerate() {
            if !self.valid[pixel] {
                *value = 0.0;
                continue;
            }
            self.fill_pixel(&mut fp, pixel);
            let [ax, ay, az, at] = &fp.axes;
            let mut acc = 0.0;
            for (dl, wt) in at.weights.iter().enumerate() {
                let base_t = (at.start + dl) * frame;
                let mut acc_t = 0.0;
                for (dk, wz) in az.weights.iter().enumerate() {
                    let base_z = base_t + (az.start + dk) * nxy;
                    let mut acc_z = 0.0;
                    for (dj, wy) in ay.weights.iter().enumerate() {
                        let row = base_z + (ay.start + dj) * nx + ax.start;
                        let line = &data[row..row + ax.len()];
                        let s: f64 = line.iter().zip(&ax.weights).map(|(v, w)| v * w).sum();
                        acc_z += wy * s;
                    }
                    acc_t += wz * acc_z;
                }
                acc += wt * acc_t;
            }
            *value = acc / fp.total_weight();
        }
    }

    /// Adds `scale · Hᵀ residual` to `out`, which holds frames
    /// `frames.start..frames.end`.
    fn backproject_into(
        &self,
        residual: &[f64],
        mask: Option<&[bool]>,
        scale: f64,
        out: &mut [f64],
        frames: &Range<usize>,
    ) {
        let g = &self.grid;
        let nx = g.dims[0];
        let nxy = nx * g.dims[1];
        let frame = g.frame_len();
        let mut fp = self.scratch();
        for (pixel, &r) in residual.iter().enumerate() {
            if !self.valid[pixel] || r == 0.0 || mask.is_some_and(|m| !m[pixel]) {
                continue;
            }
            self.fill_pixel(&mut fp, pixel);
            let val = scale * r / fp.total_weight();
            let [ax, ay, az, at] = &fp.axes;
            for (dl, wt) in at.weights.iter().enumerate() {
                let base_t = (at.start + dl - frames.start) * frame;
                let vt = val * wt;
                for (dk, wz) in az.weights.iter().enumerate() {
                    let base_z = base_t + (az.start + dk) * nxy;
                    let vz = vt * wz;
                    for (dj, wy) in ay.weights.iter().enumerate() {
                        let row = base_z + (ay.start + dj) * nx + ax.start;
                        let vy = vz * wy;
                        for (o, w) in out[row..row + ax.len()].iter_mut().zip(&ax.weights) {
                            *o += vy * w;
                        }
                    }
                }
            }
        }
    }
}

/// Predicted slice with its validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
}

pub fn forward_project(x: &Volume4D, model: &SliceModel) -> Result<Prediction> {
    model.check_grid(&x.grid)?;
    let mut values = vec![0.0; model.len()];
    model.project_into(&x.data, &mut values);
    Ok(Prediction {
        values,
        valid: model.valid.clone(),
    })
}

/// Exact adjoint of [`forward_project`]. Pixels outside `mask` (or without
/// a footprint) contribute nothing.
pub fn adjoint_project(
    residual: &[f64],
    mask: Option<&[bool]>,
    model: &SliceModel,
    grid: &Grid4D,
) -> Result<Volume4D> {
    model.check_grid(grid)?;
    if residual.len() != model.len() || mask.is_some_and(|m| m.len() != model.len()) {
        return Err(Error::GeometryMismatch(format!(
            "residual has {} pixels, model has {}",
            residual.len(),
            model.len()
        )));
    }
    let mut out = Volume4D::zeros(*grid);
    let frames = 0..grid.dims[3];
    model.backproject_into(residual, mask, 1.0, &mut out.data, &frames);
    Ok(out)
}

/// Models for every slice, with geometry warnings.
pub fn build_slice_models(
    slices: &[ScatteredSlice],
    grid: &Grid4D,
    psf: &PsfParams,
) -> Result<(Vec<SliceModel>, Vec<Warning>)> {
    grid.validate()?;
    psf.validate()?;
    for s in slices {
        s.validate()?;
    }
    let models: Vec<SliceModel> = slices
        .par_iter()
        .map(|s| SliceModel::new(s, grid, psf))
        .collect();
    let mut warnings = Vec::new();
    let reach = 2.0 * psf.truncation_radius * psf.sigma_x.min(psf.sigma_y);
    for (k, (s, m)) in slices.iter().zip(&models).enumerate() {
        if m.n_valid() == 0 {
            warnings.push(Warning::SliceOutsideGrid { slice: k });
        } else if s.spacing[0].max(s.spacing[1]) > reach {
            warnings.push(Warning::SparseSampling { slice: k });
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok((models, warnings))
}

/// All slice operators stacked, with deterministic parallel evaluation.
///
/// The adjoint accumulates slices grouped by volume index into private
/// frame windows that are merged in group order, so results do not depend
/// on the thread count.
#[derive(Debug, Clone)]
pub struct SliceOperator {
    pub grid: Grid4D,
    pub models: Vec<SliceModel>,
    groups: Vec<Group>,
}

#[derive(Debug, Clone)]
struct Group {
    members: Vec<usize>,
    frames: Range<usize>,
}

impl SliceOperator {
    pub fn new(grid: Grid4D, models: Vec<SliceModel>, volume_index: &[usize]) -> Result<Self> {
        if models.len() != volume_index.len() {
            return Err(Error::GeometryMismatch("one volume index per model required".into()));
        }
        for m in &models {
            m.check_grid(&grid)?;
        }
        let mut by_volume: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (k, &v) in volume_index.iter().enumerate() {
            by_volume.entry(v).or_default().push(k);
        }
        let groups = by_volume
            .into_values()
            .filter_map(|members| {
                let (lo, hi) = members
                    .iter()
                    .map(|&k| models[k].frame_range())
                    .filter(|r| !r.is_empty())
                    .fold((usize::MAX, 0), |(lo, hi), r| (lo.min(r.start), hi.max(r.end)));
                (lo < hi).then_some(Group {
                    members,
                    frames: lo..hi,
                })
            })
            .collect();
        Ok(Self {
            grid,
            models,
            groups,
        })
    }

    pub fn from_slices(slices: &[ScatteredSlice], grid: &Grid4D, psf: &PsfParams) -> Result<Self> {
        let (models, _) = build_slice_models(slices, grid, psf)?;
        let vols: Vec<usize> = slices.iter().map(|s| s.volume_index).collect();
        Self::new(*grid, models, &vols)
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn n_valid(&self) -> usize {
        self.models.iter().map(SliceModel::n_valid).sum()
    }

    /// Forward projection of `x` into every slice.
    pub fn forward(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = self.models.iter().map(|m| vec![0.0; m.len()]).collect();
        self.forward_into(x, &mut out);
        out
    }

    pub fn forward_into(&self, x: &[f64], out: &mut [Vec<f64>]) {
        assert_eq!(x.len(), self.grid.len());
        out.par_iter_mut()
            .zip(self.models.par_iter())
            .for_each(|(o, m)| m.project_into(x, o));
    }

    /// `Σ_k scale_k · H_kᵀ r_k` (scales default to 1).
    pub fn adjoint(&self, residuals: &[Vec<f64>], scales: Option<&[f64]>) -> Vec<f64> {
        assert_eq!(residuals.len(), self.models.len());
        let frame = self.grid.frame_len();
        let partials: Vec<Vec<f64>> = self
            .groups
            .par_iter()
            .map(|g| {
                let mut buf = vec![0.0; g.frames.len() * frame];
                for &k in &g.members {
                    let s = scales.map_or(1.0, |s| s[k]);
                    self.models[k].backproject_into(&residuals[k], None, s, &mut buf, &g.frames);
                }
                buf
            })
            .collect();
        let mut out = vec![0.0; self.grid.len()];
        for (g, buf) in self.groups.iter().zip(partials) {
            let dst = &mut out[g.frames.start * frame..g.frames.end * frame];
            for (o, v) in dst.iter_mut().zip(buf) {
                *o += v;
            }
        }
        out
    }

    /// Row sums of `Σ_k w_k H_kᵀ H_k`, i.e. `Σ_k w_k H_kᵀ 1_valid`.
    pub fn weighted_column_sums(&self, weights: &[f64]) -> Vec<f64> {
        let ones: Vec<Vec<f64>> = self
            .models
            .iter()
            .map(|m| m.valid.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect())
            .collect();
        self.adjoint(&ones, Some(weights))
    }
}

/// Unnormalized PSF splatting of slice samples onto the grid, returning the
/// weighted intensity sums and weight sums per voxel.
pub fn splat(op: &SliceOperator, values: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = op.grid.len();
    let mut num = vec![0.0; n];
    let mut den = vec![0.0; n];
    let g = &op.grid;
    let nx = g.dims[0];
    let nxy = nx * g.dims[1];
    let frame = g.frame_len();
    for (m, vals) in op.models.iter().zip(values) {
        let mut fp = m.scratch();
        for (pixel, &s) in vals.iter().enumerate() {
            if !m.valid[pixel] {
                continue;
            }
            m.fill_pixel(&mut fp, pixel);
            let [ax, ay, az, at] = &fp.axes;
            for (dl, wt) in at.weights.iter().enumerate() {
                for (dk, wz) in az.weights.iter().enumerate() {
                    for (dj, wy) in ay.weights.iter().enumerate() {
                        let row =
                            (at.start + dl) * frame + (az.start + dk) * nxy + (ay.start + dj) * nx;
                        let wyzt = wt * wz * wy;
                        for (di, wx) in ax.weights.iter().enumerate() {
                            let w = wyzt * wx;
                            num[row + ax.start + di] += w * s;
                            den[row + ax.start + di] += w;
                        }
                    }
                }
            }
        }
    }
    (num, den)
}

/// Spatial PSF projection of a 3D volume onto `slice` placed at `pose`.
/// Pixels whose footprint misses the grid get `None`.
pub fn project_spatial(
    volume: &Volume3D,
    psf: &PsfParams,
    slice: &ScatteredSlice,
    pose: &RigidTransform,
) -> Vec<Option<f64>> {
    let g = &volume.grid;
    let grid = Grid4D::with_origin(
        [g.dims[0], g.dims[1], g.dims[2], 1],
        g.spacing,
        1.0,
        g.origin,
        0.0,
    )
    .expect("volume grid is valid");
    let affine = pose.to_affine();
    let nx = g.dims[0];
    let nxy = nx * g.dims[1];
    let mut fp = Footprint::default();
    let [nu, nv] = slice.dims;
    let mut out = Vec::with_capacity(nu * nv);
    for v in 0..nv {
        for u in 0..nu {
            let c = g.world_to_voxel(affine.apply(slice.native_point(u, v)));
            fp.fill_spatial(psf, &grid, c);
            let [ax, ay, az, _] = &fp.axes;
            if ax.is_empty() || ay.is_empty() || az.is_empty() {
                out.push(None);
                continue;
            }
            let mut acc = 0.0;
            for (dk, wz) in az.weights.iter().enumerate() {
                let base_z = (az.start + dk) * nxy;
                let mut acc_z = 0.0;
                for (dj, wy) in ay.weights.iter().enumerate() {
                    let row = base_z + (ay.start + dj) * nx + ax.start;
                    let line = &volume.data[row..row + ax.len()];
                    acc_z += wy * line.iter().zip(&ax.weights).map(|(a, w)| a * w).sum::<f64>();
                }
                acc += wz * acc_z;
            }
            out.push(Some(acc / (ax.sum() * ay.sum() * az.sum())));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid() -> Grid4D {
        Grid4D::with_origin([10, 9, 6, 5], [1.74, 1.74, 3.0], 2.0, [0.0; 3], 1.0).unwrap()
    }

    fn slice_on(grid: &Grid4D, k: usize, vol: usize, pose: RigidTransform) -> ScatteredSlice {
        ScatteredSlice {
            data: vec![0.0; grid.dims[0] * grid.dims[1]],
            dims: [grid.dims[0], grid.dims[1]],
            volume_index: vol,
            slice_index: k,
            acq_time: grid.t0 + vol as f64 * grid.tr + 0.1 * k as f64,
            pose,
            spacing: [grid.spacing[0], grid.spacing[1]],
            thickness: grid.spacing[2],
            sigma: 1.0,
            plane_origin: [grid.origin[0], grid.origin[1], grid.origin[2] + k as f64 * grid.spacing[2]],
        }
    }

    fn random_volume(grid: &Grid4D, rng: &mut ChaCha8Rng) -> Volume4D {
        let data = (0..grid.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        Volume4D::from_data(*grid, data).unwrap()
    }

    fn random_pose(grid: &Grid4D, rng: &mut ChaCha8Rng) -> RigidTransform {
        let mut p = [0.0; 6];
        for (i, v) in p.iter_mut().enumerate() {
            *v = if i < 3 { rng.random_range(-15.0..15.0) } else { rng.random_range(-2.0..2.0) };
        }
        RigidTransform::from_params(p, grid.center())
    }

    #[test]
    fn constant_volume_projects_to_constant() {
        let g = grid();
        let psf = PsfParams::default_for_grid(&g).unwrap();
        let x = Volume4D::filled(g, 3.7);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for k in 0..6 {
            let s = slice_on(&g, k, 2, random_pose(&g, &mut rng));
            let m = SliceModel::new(&s, &g, &psf);
            let p = forward_project(&x, &m).unwrap();
            assert!(p.valid.iter().any(|&v| v));
            for (v, ok) in p.values.iter().zip(&p.valid) {
                if *ok {
                    assert!((v - 3.7).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn narrow_psf_copies_grid_plane() {
        let g = Grid4D::with_origin([8, 7, 5, 4], [1.74, 1.74, 3.0], 2.0, [0.0; 3], 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_volume(&g, &mut rng);
        let psf = PsfParams {
            sigma_x: 1e-3,
            sigma_y: 1e-3,
            sigma_z: 1e-3,
            sigma_t: 1e-3,
            time_scale: 1.5,
            truncation_radius: 3.0,
        };
        let mut s = slice_on(&g, 3, 2, RigidTransform::identity_about(g.center()));
        s.acq_time = 4.0;
        let m = SliceModel::new(&s, &g, &psf);
        let p = forward_project(&x, &m).unwrap();
        for (pix, v) in p.values.iter().enumerate() {
            assert!(p.valid[pix]);
            assert!((v - x.data[g.index(pix % 8, pix / 8, 3, 2)]).abs() < 1e-6);
        }
    }

    #[test]
    fn matches_dense_brute_force() {
        let g = grid();
        let psf = PsfParams::default_for_grid(&g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_volume(&g, &mut rng);
        let s = slice_on(&g, 2, 1, random_pose(&g, &mut rng));
        let m = SliceModel::new(&s, &g, &psf);
        let p = forward_project(&x, &m).unwrap();
        let mut checked = 0;
        for pix in 0..m.len() {
            let q = m.points[pix];
            let t = s.acq_time;
            let (mut num, mut den) = (0.0, 0.0);
            for l in 0..g.dims[3] {
                for k in 0..g.dims[2] {
                    for j in 0..g.dims[1] {
                        for i in 0..g.dims[0] {
                            let (c, tc) =
                                g.voxel_to_world([i as f64, j as f64, k as f64, l as f64]);
                            let w = psf.weight(c[0] - q[0], c[1] - q[1], c[2] - q[2], tc - t);
                            num += w * x.data[g.index(i, j, k, l)];
                            den += w;
                        }
                    }
                }
            }
            assert_eq!(den > 0.0, p.valid[pix]);
            if den > 0.0 {
                assert!((num / den - p.values[pix]).abs() < 1e-10);
                checked += 1;
            }
        }
        assert!(checked > 20);
    }

    #[test]
    fn adjoint_dot_product() {
        let g = grid();
        let psf = PsfParams::default_for_grid(&g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let x = random_volume(&g, &mut rng);
            let s = slice_on(&g, rng.random_range(0..6), rng.random_range(0..5), random_pose(&g, &mut rng));
            let m = SliceModel::new(&s, &g, &psf);
            let y: Vec<f64> = (0..m.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let hx = forward_project(&x, &m).unwrap();
            let hty = adjoint_project(&y, None, &m, &g).unwrap();
            let lhs: f64 = hx.values.iter().zip(&y).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.data.iter().zip(&hty.data).map(|(a, b)| a * b).sum();
            let nhx = hx.values.iter().map(|v| v * v).sum::<f64>().sqrt();
            let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((lhs - rhs).abs() / (nhx * ny) < 1e-10);
        }
    }

    #[test]
    fn adjoint_zero_and_basis() {
        let g = grid();
        let psf = PsfParams::default_for_grid(&g).unwrap();
        let s = slice_on(&g, 2, 2, RigidTransform::from_params([5.0, 3.0, 0.0, 0.3, 0.0, 0.0], g.center()));
        let m = SliceModel::new(&s, &g, &psf);
        let zero = adjoint_project(&vec![0.0; m.len()], None, &m, &g).unwrap();
        assert!(zero.data.iter().all(|&v| v == 0.0));

        let pix = 4 + 10 * 4;
        let mut y = vec![0.0; m.len()];
        y[pix] = 1.0;
        let inc = adjoint_project(&y, None, &m, &g).unwrap();
        let mut want = vec![0.0; g.len()];
        for (idx, w) in m.pixel_weights(pix) {
            want[idx] += w;
        }
        for (a, b) in inc.data.iter().zip(&want) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((inc.data.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mismatched_grid_is_rejected() {
        let g = grid();
        let psf = PsfParams::default_for_grid(&g).unwrap();
        let m = SliceModel::new(&slice_on(&g, 0, 0, RigidTransform::identity()), &g, &psf);
        let other = Grid4D::new([4, 4, 4, 4], [1.0; 3], 1.0).unwrap();
        assert!(matches!(
            forward_project(&Volume4D::zeros(other), &m),
            Err(Error::GeometryMismatch(_))
        ));
        assert!(adjoint_project(&vec![0.0; m.len()], None, &m, &other).is_err());
    }

    #[test]
    fn out_of_grid_slice_is_flagged() {
        let g = grid();
        let psf = PsfParams::default_for_grid(&g).unwrap();
        let s = slice_on(&g, 0, 0, RigidTransform::from_params([0.0, 0.0, 0.0, 500.0, 0.0, 0.0], g.center()));
        let (models, warnings) = build_slice_models(&[s], &g, &psf).unwrap();
        assert_eq!(models[0].n_valid(), 0);
        assert_eq!(warnings, vec![Warning::SliceOutsideGrid { slice: 0 }]);
        let p = forward_project(&Volume4D::filled(g, 1.0), &models[0]).unwrap();
        assert!(p.valid.iter().all(|&v| !v));
    }

    #[test]
    fn models_are_planar_and_deterministic() {
        let g = grid();
        let psf = PsfParams::default_for_grid(&g).unwrap();
        let pose = RigidTransform::from_params([0.0, 27.9, 0.0, 0.0, 0.0, 0.0], g.center());
        let s = slice_on(&g, 3, 1, pose);
        let (models, _) = build_slice_models(&[s.clone(), s.clone()], &g, &psf).unwrap();
        assert_eq!(models[0].points, models[1].points);
        assert!((models[0].time - (s.acq_time - g.t0) / g.tr).abs() < 1e-15);

        let id = SliceModel::new(&slice_on(&g, 3, 1, RigidTransform::identity()), &g, &psf);
        for (pix, p) in id.points.iter().enumerate() {
            assert!((p[2] - id.points[0][2]).abs() < 1e-9);
            let (u, v) = (pix % 10, pix / 10);
            assert!((p[0] - u as f64 * 1.74).abs() < 1e-12 && (p[1] - v as f64 * 1.74).abs() < 1e-12);
        }

        // Normal of the moved plane.
        let m = &models[0];
        let a = m.points[0];
        let b = m.points[1];
        let c = m.points[10];
        let e1 = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
        let e2 = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
        let n = [
            e1[1] * e2[2] - e1[2] * e2[1],
            e1[2] * e2[0] - e1[0] * e2[2],
            e1[0] * e2[1] - e1[1] * e2[0],
        ];
        let norm = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
        let angle = (n[2] / norm).acos().to_degrees();
        assert!((angle - 27.9).abs() < 1e-9, "{angle}");
    }

    #[test]
    fn linearity() {
        let g = grid();
        let psf = PsfParams::default_for_grid(&g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_volume(&g, &mut rng);
        let y = random_volume(&g, &mut rng);
        let m = SliceModel::new(&slice_on(&g, 1, 3, random_pose(&g, &mut rng)), &g, &psf);
        let (a, b) = (1.7, -0.4);
        let mut z = x.clone();
        for (zi, yi) in z.data.iter_mut().zip(&y.data) {
            *zi = a * *zi + b * yi;
        }
        let fx = forward_project(&x, &m).unwrap().values;
        let fy = forward_project(&y, &m).unwrap().values;
        let fz = forward_project(&z, &m).unwrap().values;
        for i in 0..fz.len() {
            assert!((fz[i] - (a * fx[i] + b * fy[i])).abs() < 1e-10);
        }
    }

    #[test]
    fn grid_aligned_shift_invariance() {
        let g = Grid4D::with_origin([14, 12, 6, 3], [1.74, 1.74, 3.0], 2.0, [0.0; 3], 1.0).unwrap();
        let psf = PsfParams::default_for_grid(&g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random_volume(&g, &mut rng);
        // Content moved by +2 voxels in x.
        let mut shifted = Volume4D::zeros(g);
        for l in 0..3 {
            for k in 0..6 {
                for j in 0..12 {
                    for i in 2..14 {
                        shifted.data[g.index(i, j, k, l)] = x.data[g.index(i - 2, j, k, l)];
                    }
                }
            }
        }
        let pose = RigidTransform::from_params([2.0, -3.0, 4.0, 0.0, 0.0, 0.0], g.center());
        let mut moved = pose;
        moved.translation[0] += 2.0 * 1.74;
        let mut s = slice_on(&g, 3, 1, pose);
        s.dims = [4, 4];
        s.data = vec![0.0; 16];
        s.plane_origin = [4.0 * 1.74, 4.0 * 1.74, 9.0];
        let a = SliceModel::new(&s, &g, &psf);
        let b = SliceModel::with_pose(&s, &moved, &g, &psf);
        let pa = forward_project(&x, &a).unwrap();
        let pb = forward_project(&shifted, &b).unwrap();
        for i in 0..16 {
            assert!(pa.valid[i] && pb.valid[i]);
            assert!((pa.values[i] - pb.values[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn stacked_operator_adjoint_and_thread_independence() {
        let g = grid();
        let psf = PsfParams::default_for_grid(&g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut slices = Vec::new();
        for vol in 0..5 {
            for k in 0..6 {
                slices.push(slice_on(&g, k, vol, random_pose(&g, &mut rng)));
            }
        }
        let op = SliceOperator::from_slices(&slices, &g, &psf).unwrap();
        let x = random_volume(&g, &mut rng);
        let ys: Vec<Vec<f64>> = op
            .models
            .iter()
            .map(|m| (0..m.len()).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let hx = op.forward(&x.data);
        let hty = op.adjoint(&ys, None);
        let lhs: f64 = hx.iter().zip(&ys).flat_map(|(a, b)| a.iter().zip(b)).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data.iter().zip(&hty).map(|(a, b)| a * b).sum();
        let nhx = hx.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
        let ny = ys.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
        assert!((lhs - rhs).abs() / (nhx * ny) < 1e-10);

        let run = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| op.adjoint(&ys, None))
        };
        let a = run(1);
        let b = run(3);
        assert!(a.iter().zip(&b).all(|(u, v)| u.to_bits() == v.to_bits()));
    }
}
