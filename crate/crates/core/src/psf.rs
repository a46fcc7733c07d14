//! Separable 4D Gaussian point spread function.
//!
//! Time offsets are converted to mm-equivalents with the factor
//! `slice_thickness / TR` before being compared against `sigma_t`, so the
//! temporal width lives in the same units as the spatial ones. The kernel is
//! unnormalized (peak 1); the projection operators normalize per sample.

use crate::error::{Error, Result};
use crate::geometry::{Grid4D, Point3};

/// FWHM = 2·sqrt(2·ln 2)·σ.
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsfParams {
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub sigma_z: f64,
    /// Temporal width in scaled-time (mm-equivalent) units.
    pub sigma_t: f64,
    /// Seconds → mm-equivalents.
    pub time_scale: f64,
    /// Support cutoff per axis, in units of that axis' σ.
    pub truncation_radius: f64,
}

/// Space-time scaling `slice_thickness / tr`.
pub fn time_scale_factor(slice_thickness_mm: f64, tr_s: f64) -> Result<f64> {
    if !(slice_thickness_mm > 0.0 && slice_thickness_mm.is_finite()) {
        return Err(Error::invalid(format!(
            "slice thickness must be > 0, got {slice_thickness_mm}"
        )));
    }
    if !(tr_s > 0.0 && tr_s.is_finite()) {
        return Err(Error::invalid(format!("TR must be > 0, got {tr_s}")));
    }
    Ok(slice_thickness_mm / tr_s)
}

impl PsfParams {
    /// Defaults: in-plane FWHM of one pixel, through-plane FWHM of one slice,
    /// and a temporal σ of one scaled TR.
    pub fn default_for(in_plane: [f64; 2], slice_thickness: f64, tr: f64) -> Result<Self> {
        let time_scale = time_scale_factor(slice_thickness, tr)?;
        let p = Self {
            sigma_x: in_plane[0] / FWHM_PER_SIGMA,
            sigma_y: in_plane[1] / FWHM_PER_SIGMA,
            sigma_z: slice_thickness / FWHM_PER_SIGMA,
            sigma_t: time_scale * tr,
            time_scale,
            truncation_radius: 3.0,
        };
        p.validate()?;
        Ok(p)
    }

    /// Defaults for a grid whose z spacing equals the slice thickness.
    pub fn default_for_grid(grid: &Grid4D) -> Result<Self> {
        Self::default_for([grid.spacing[0], grid.spacing[1]], grid.spacing[2], grid.tr)
    }

    pub fn validate(&self) -> Result<()> {
        let sig = [self.sigma_x, self.sigma_y, self.sigma_z, self.sigma_t];
        if sig.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::invalid(format!("PSF widths must be > 0: {sig:?}")));
        }
        if !(self.time_scale > 0.0 && self.time_scale.is_finite()) {
            return Err(Error::invalid("PSF time scale must be > 0"));
        }
        if !(self.truncation_radius >= 1.0 && self.truncation_radius.is_finite()) {
            return Err(Error::invalid(format!(
                "truncation radius must be >= 1, got {}",
                self.truncation_radius
            )));
        }
        Ok(())
    }

    pub fn sigmas(&self) -> [f64; 4] {
        [self.sigma_x, self.sigma_y, self.sigma_z, self.sigma_t]
    }

    /// Kernel value for spatial offsets in mm and a time offset in seconds.
    pub fn weight(&self, dx: f64, dy: f64, dz: f64, dt: f64) -> f64 {
        let r = self.truncation_radius;
        let z = [
            dx / self.sigma_x,
            dy / self.sigma_y,
            dz / self.sigma_z,
            dt * self.time_scale / self.sigma_t,
        ];
        if z.iter().any(|v| !(v.abs() <= r)) {
            return 0.0;
        }
        (-0.5 * z.iter().map(|v| v * v).sum::<f64>()).exp()
    }
}

/// One-dimensional truncated Gaussian factor.
#[inline]
pub fn axis_weight(offset: f64, sigma: f64, truncation_radius: f64) -> f64 {
    let z = offset / sigma;
    if z.abs() <= truncation_radius {
        (-0.5 * z * z).exp()
    } else {
        0.0
    }
}

/// Contiguous run of grid indices along one axis with their kernel factors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AxisTaps {
    pub start: usize,
    pub weights: Vec<f64>,
}

impl AxisTaps {
    /// `u` is the fractional grid index of the kernel center, `step` the axis
    /// spacing in kernel units, `n` the number of grid points.
    pub fn fill(&mut self, u: f64, step: f64, sigma: f64, radius: f64, n: usize) {
        self.weights.clear();
        self.start = 0;
        if !u.is_finite() || n == 0 {
            return;
        }
        let reach = radius * sigma / step;
        let lo = (u - reach).ceil().max(0.0);
        let hi = (u + reach).floor().min((n - 1) as f64);
        if lo > hi {
            return;
        }
        let (lo, hi) = (lo as usize, hi as usize);
        for i in lo..=hi {
            let w = axis_weight((i as f64 - u) * step, sigma, radius);
            if w > 0.0 {
                if self.weights.is_empty() {
                    self.start = i;
                }
                self.weights.push(w);
            } else if !self.weights.is_empty() {
                break;
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }
}

/// Separable footprint of one sample on a 4D grid.
#[derive(Debug, Clone, Default)]
pub struct Footprint {
    pub axes: [AxisTaps; 4],
}

impl Footprint {
    pub fn fill(&mut self, psf: &PsfParams, grid: &Grid4D, point: Point3, time: f64) {
        let u = grid.world_to_voxel(point, time);
        self.fill_spatial(psf, grid, [u[0], u[1], u[2]]);
        self.fill_temporal(psf, grid, u[3]);
    }

    /// Spatial axes only; `u` is a fractional voxel index.
    #[inline]
    pub fn fill_spatial(&mut self, psf: &PsfParams, grid: &Grid4D, u: [f64; 3]) {
        let r = psf.truncation_radius;
        let sig = [psf.sigma_x, psf.sigma_y, psf.sigma_z];
        for a in 0..3 {
            self.axes[a].fill(u[a], grid.spacing[a], sig[a], r, grid.dims[a]);
        }
    }

    /// Temporal axis; `u` is a fractional timepoint index.
    pub fn fill_temporal(&mut self, psf: &PsfParams, grid: &Grid4D, u: f64) {
        let step = grid.tr * psf.time_scale;
        self.axes[3].fill(u, step, psf.sigma_t, psf.truncation_radius, grid.dims[3]);
    }

    pub fn is_empty(&self) -> bool {
        self.axes.iter().any(AxisTaps::is_empty)
    }

    pub fn total_weight(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.axes.iter().map(AxisTaps::sum).product()
        }
    }

    /// Expanded `(index, weight)` list.
    pub fn entries(&self) -> Vec<([usize; 4], f64)> {
        let mut out = Vec::new();
        if self.is_empty() {
            return out;
        }
        let [ax, ay, az, at] = &self.axes;
        for (dl, wt) in at.weights.iter().enumerate() {
            for (dk, wz) in az.weights.iter().enumerate() {
                for (dj, wy) in ay.weights.iter().enumerate() {
                    for (di, wx) in ax.weights.iter().enumerate() {
                        out.push((
                            [ax.start + di, ay.start + dj, az.start + dk, at.start + dl],
                            wx * wy * wz * wt,
                        ));
                    }
                }
            }
        }
        out
    }
}

/// Every grid voxel inside the truncation box around `(point, time)` with its
/// kernel weight.
pub fn kernel_footprint(
    params: &PsfParams,
    grid: &Grid4D,
    point: Point3,
    time: f64,
) -> Vec<([usize; 4], f64)> {
    let mut fp = Footprint::default();
    fp.fill(params, grid, point, time);
    fp.entries()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> PsfParams {
        PsfParams {
            sigma_x: 1.2,
            sigma_y: 0.9,
            sigma_z: 2.0,
            sigma_t: 3.0,
            time_scale: 1.5,
            truncation_radius: 3.0,
        }
    }

    #[test]
    fn time_scale_examples() {
        assert_eq!(time_scale_factor(3.0, 3.0).unwrap(), 1.0);
        assert_eq!(time_scale_factor(3.0, 2.0).unwrap(), 1.5);
        assert!(matches!(
            time_scale_factor(0.0, 2.0),
            Err(Error::InvalidParameter(_))
        ));
        assert!(time_scale_factor(3.0, -1.0).is_err());
    }

    #[test]
    fn weight_examples() {
        let p = params();
        assert_eq!(p.weight(0.0, 0.0, 0.0, 0.0), 1.0);
        assert!((p.weight(p.sigma_x, 0.0, 0.0, 0.0) - (-0.5f64).exp()).abs() < 1e-12);
        let beyond = (p.truncation_radius + 1e-9) * p.sigma_x;
        assert_eq!(p.weight(beyond, 0.0, 0.0, 0.0), 0.0);
        let dt_beyond = (p.truncation_radius + 1e-9) * p.sigma_t / p.time_scale;
        assert_eq!(p.weight(0.0, 0.0, 0.0, dt_beyond), 0.0);
    }

    #[test]
    fn validation() {
        let mut p = params();
        p.sigma_z = 0.0;
        assert!(p.validate().is_err());
        let mut p = params();
        p.truncation_radius = 0.5;
        assert!(p.validate().is_err());
        let d = PsfParams::default_for([1.74, 1.74], 3.0, 2.0).unwrap();
        assert!((d.sigma_x * FWHM_PER_SIGMA - 1.74).abs() < 1e-12);
        assert!((d.sigma_t - 3.0).abs() < 1e-12);
        assert_eq!(d.truncation_radius, 3.0);
    }

    #[test]
    fn separable_symmetric_monotone() {
        let p = params();
        let offsets = [-4.1, -2.0, -0.3, 0.0, 0.7, 1.9, 3.3];
        for &dx in &offsets {
            for &dz in &offsets {
                for &dt in &offsets {
                    let w = p.weight(dx, 0.4, dz, dt);
                    let sep = axis_weight(dx, p.sigma_x, 3.0)
                        * axis_weight(0.4, p.sigma_y, 3.0)
                        * axis_weight(dz, p.sigma_z, 3.0)
                        * axis_weight(dt * p.time_scale, p.sigma_t, 3.0);
                    assert!((w - sep).abs() < 1e-12);
                    assert_eq!(w, p.weight(-dx, -0.4, -dz, -dt));
                }
            }
        }
        let mut prev = f64::INFINITY;
        for i in 0..100 {
            let w = p.weight(0.05 * i as f64, 0.0, 0.0, 0.0);
            assert!(w <= prev);
            prev = w;
        }
    }

    #[test]
    fn footprint_single_voxel() {
        let grid = Grid4D::new([5, 5, 5, 5], [1.0; 3], 1.0).unwrap();
        let p = PsfParams {
            sigma_x: 0.3,
            sigma_y: 0.3,
            sigma_z: 0.3,
            sigma_t: 0.3,
            time_scale: 1.0,
            truncation_radius: 3.0,
        };
        let fp = kernel_footprint(&p, &grid, [2.0, 2.0, 2.0], 2.0);
        assert_eq!(fp, vec![([2, 2, 2, 2], 1.0)]);
    }

    #[test]
    fn footprint_midway_is_symmetric() {
        let grid = Grid4D::new([6, 5, 5, 5], [1.0; 3], 1.0).unwrap();
        let p = PsfParams {
            sigma_x: 0.6,
            sigma_y: 0.2,
            sigma_z: 0.2,
            sigma_t: 0.2,
            time_scale: 1.0,
            truncation_radius: 3.0,
        };
        let fp = kernel_footprint(&p, &grid, [2.5, 2.0, 2.0], 2.0);
        assert_eq!(fp.len(), 4);
        let w = |i: usize| fp.iter().find(|(idx, _)| idx[0] == i).unwrap().1;
        assert!((w(2) - w(3)).abs() < 1e-12);
        assert!((w(1) - w(4)).abs() < 1e-12);
    }

    #[test]
    fn footprint_sum_matches_brute_force() {
        let grid =
            Grid4D::with_origin([12, 11, 9, 8], [1.74, 1.74, 3.0], 2.0, [-3.0, 1.0, 0.5], 1.0)
                .unwrap();
        let p = PsfParams::default_for([1.74, 1.74], 3.0, 2.0).unwrap();
        let center = [6.1, 8.3, 12.2];
        let t = 7.3;
        let fp = kernel_footprint(&p, &grid, center, t);
        let sum: f64 = fp.iter().map(|e| e.1).sum();
        assert!(fp.iter().all(|e| e.1 > 0.0));

        let mut brute = 0.0;
        for l in 0..8 {
            for k in 0..9 {
                for j in 0..11 {
                    for i in 0..12 {
                        let (q, tq) = grid.voxel_to_world([i as f64, j as f64, k as f64, l as f64]);
                        brute += p.weight(q[0] - center[0], q[1] - center[1], q[2] - center[2], tq - t);
                    }
                }
            }
        }
        assert!((sum - brute).abs() < 1e-12 * brute.max(1.0), "{sum} vs {brute}");
    }

    #[test]
    fn footprint_outside_grid_is_empty() {
        let grid = Grid4D::new([4, 4, 4, 4], [1.0; 3], 1.0).unwrap();
        let p = params();
        assert!(kernel_footprint(&p, &grid, [100.0, 0.0, 0.0], 0.0).is_empty());
        assert!(kernel_footprint(&p, &grid, [0.0, 0.0, 0.0], 1e6).is_empty());
    }

    #[test]
    fn wide_temporal_kernel_is_time_uniform() {
        let grid = Grid4D::new([4, 4, 4, 6], [1.0; 3], 1.0).unwrap();
        let mut p = params();
        p.sigma_t = 1e6;
        let fp = kernel_footprint(&p, &grid, [1.3, 1.7, 2.2], 2.4);
        for l in 0..5 {
            let w0: f64 = fp.iter().filter(|e| e.0[3] == l).map(|e| e.1).sum();
            let w1: f64 = fp.iter().filter(|e| e.0[3] == l + 1).map(|e| e.1).sum();
            assert!((w0 - w1).abs() < 1e-6);
        }
    }
}
