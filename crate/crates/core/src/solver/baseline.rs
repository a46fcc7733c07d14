//! Per-timepoint 3D baseline: each volume's slices are splatted with
//! trilinear weights into their own timepoint, with no temporal sharing.

use rayon::prelude::*;

use crate::error::{Error, Result, Warning};
use crate::fill::fill_nearest;
use crate::forward::ScatteredSlice;
use crate::geometry::{Grid3D, Grid4D, Volume4D};

/// Minimum accumulated weight for a voxel to count as observed.
pub const COVERAGE_EPS: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct BaselineResult {
    pub volume: Volume4D,
    /// Voxels that received direct slice support, per timepoint (4D layout).
    pub coverage: Vec<bool>,
    /// Fraction of masked voxels filled from neighbours, per timepoint.
    pub hole_fraction: Vec<f64>,
    /// Timepoints without any slice, copied from the nearest populated one.
    pub empty_timepoints: Vec<usize>,
    pub warnings: Vec<Warning>,
}

fn splat_frame(grid: &Grid3D, slices: &[&ScatteredSlice]) -> (Vec<f64>, Vec<f64>) {
    let n = grid.len();
    let mut num = vec![0.0; n];
    let mut den = vec![0.0; n];
    let [nx, ny, nz] = grid.dims;
    for s in slices {
        let affine = s.pose.to_affine();
        for v in 0..s.dims[1] {
            for u in 0..s.dims[0] {
                let value = s.data[v * s.dims[0] + u];
                let c = grid.world_to_voxel(affine.apply(s.native_point(u, v)));
                let base = [c[0].floor(), c[1].floor(), c[2].floor()];
                for corner in 0..8 {
                    let mut w = 1.0;
                    let mut idx = [0usize; 3];
                    let mut inside = true;
                    for a in 0..3 {
                        let i = base[a] + ((corner >> a) & 1) as f64;
                        let n_axis = [nx, ny, nz][a];
                        if i < 0.0 || i >= n_axis as f64 {
                            inside = false;
                            break;
                        }
                        w *= 1.0 - (c[a] - i).abs();
                        idx[a] = i as usize;
                    }
                    if !inside || w <= 0.0 {
                        continue;
                    }
                    let k = grid.index(idx[0], idx[1], idx[2]);
                    num[k] += w * value;
                    den[k] += w;
                }
            }
        }
    }
    (num, den)
}

/// Reconstruct each timepoint from its own volume's slices.
pub fn interpolate_3d_baseline(
    slices: &[ScatteredSlice],
    grid: &Grid4D,
    mask: Option<&[bool]>,
) -> Result<BaselineResult> {
    grid.validate()?;
    let spatial = grid.spatial();
    let frame = grid.frame_len();
    if let Some(m) = mask {
        if m.len() != frame {
            return Err(Error::GeometryMismatch(format!(
                "mask has {} voxels, grid frame has {frame}",
                m.len()
            )));
        }
    }
    let nt = grid.dims[3];
    let mut per_time: Vec<Vec<&ScatteredSlice>> = vec![Vec::new(); nt];
    for s in slices {
        s.validate()?;
        if s.volume_index < nt {
            per_time[s.volume_index].push(s);
        }
    }

    let frames: Vec<(Vec<f64>, Vec<bool>)> = per_time
        .par_iter()
        .map(|group| {
            let (num, den) = splat_frame(&spatial, group);
            let known: Vec<bool> = den.iter().map(|&d| d > COVERAGE_EPS).collect();
            let mut data: Vec<f64> = num
                .iter()
                .zip(&den)
                .map(|(a, &d)| if d > COVERAGE_EPS { a / d } else { 0.0 })
                .collect();
            fill_nearest(&mut data, &known, &spatial.dims);
            (data, known)
        })
        .collect();

    let populated: Vec<usize> = (0..nt).filter(|&l| frames[l].1.iter().any(|&k| k)).collect();
    if populated.is_empty() {
        return Err(Error::NoValidSlices("no slice sample falls inside the grid".into()));
    }

    let mut data = vec![0.0; grid.len()];
    let mut coverage = vec![false; grid.len()];
    let mut hole_fraction = Vec::with_capacity(nt);
    let mut empty_timepoints = Vec::new();
    let mut warnings = Vec::new();
    let in_mask = |i: usize| mask.is_none_or(|m| m[i]);
    let mask_count = (0..frame).filter(|&i| in_mask(i)).count().max(1);
    for l in 0..nt {
        let dst = l * frame..(l + 1) * frame;
        let (frame_data, known) = &frames[l];
        if known.iter().any(|&k| k) {
            data[dst.clone()].copy_from_slice(frame_data);
            coverage[dst].copy_from_slice(known);
            let holes = (0..frame).filter(|&i| in_mask(i) && !known[i]).count();
            hole_fraction.push(holes as f64 / mask_count as f64);
        } else {
            // Nearest populated timepoint; ties go to the earlier one.
            let source = *populated
                .iter()
                .min_by_key(|&&p| (p.abs_diff(l), p))
                .expect("populated is non-empty");
            data[dst].copy_from_slice(&frames[source].0);
            hole_fraction.push(1.0);
            empty_timepoints.push(l);
            warnings.push(Warning::EmptyTimepoint { timepoint: l, source });
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(BaselineResult {
        volume: Volume4D::from_data(*grid, data)?,
        coverage,
        hole_fraction,
        empty_timepoints,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::RigidTransform;

    fn slice(vol: usize, z: f64, value: f64, n: usize) -> ScatteredSlice {
        ScatteredSlice {
            data: vec![value; n * n],
            dims: [n, n],
            volume_index: vol,
            slice_index: 0,
            acq_time: vol as f64,
            pose: RigidTransform::identity(),
            spacing: [1.0, 1.0],
            thickness: 1.0,
            sigma: 1.0,
            plane_origin: [0.0, 0.0, z],
        }
    }

    #[test]
    fn grid_aligned_slices_are_copied() {
        let g = Grid4D::new([4, 4, 2, 2], [1.0; 3], 1.0).unwrap();
        let s = vec![
            slice(0, 0.0, 1.0, 4),
            slice(0, 1.0, 2.0, 4),
            slice(1, 0.0, 3.0, 4),
            slice(1, 1.0, 4.0, 4),
        ];
        let r = interpolate_3d_baseline(&s, &g, None).unwrap();
        assert_eq!(r.volume.frame(0)[0], 1.0);
        assert_eq!(r.volume.frame(0)[16], 2.0);
        assert_eq!(r.volume.frame(1)[0], 3.0);
        assert_eq!(r.volume.frame(1)[31], 4.0);
        assert!(r.hole_fraction.iter().all(|&h| h == 0.0));
        assert!(r.coverage.iter().all(|&c| c));
    }

    #[test]
    fn holes_are_filled_and_counted() {
        let g = Grid4D::new([4, 4, 4, 1], [1.0; 3], 1.0).unwrap();
        let s = vec![slice(0, 0.0, 7.0, 4)];
        let r = interpolate_3d_baseline(&s, &g, None).unwrap();
        assert!(r.volume.data.iter().all(|&v| v == 7.0));
        assert!((r.hole_fraction[0] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn midway_slice_splits_weight() {
        let g = Grid4D::new([2, 2, 2, 1], [1.0; 3], 1.0).unwrap();
        let s = vec![slice(0, 0.5, 2.0, 2)];
        let r = interpolate_3d_baseline(&s, &g, None).unwrap();
        assert!(r.volume.data.iter().all(|&v| (v - 2.0).abs() < 1e-12));
        assert!(r.coverage.iter().all(|&c| c));
    }

    #[test]
    fn empty_timepoint_copies_nearest() {
        let g = Grid4D::new([2, 2, 1, 4], [1.0; 3], 1.0).unwrap();
        let s = vec![slice(0, 0.0, 1.0, 2), slice(3, 0.0, 5.0, 2)];
        let r = interpolate_3d_baseline(&s, &g, None).unwrap();
        assert_eq!(r.empty_timepoints, vec![1, 2]);
        assert_eq!(r.volume.frame(1)[0], 1.0);
        assert_eq!(r.volume.frame(2)[0], 5.0);
        assert_eq!(r.warnings.len(), 2);
    }

    #[test]
    fn nothing_inside_is_an_error() {
        let g = Grid4D::new([2, 2, 1, 1], [1.0; 3], 1.0).unwrap();
        let s = vec![slice(0, 50.0, 1.0, 2)];
        assert!(matches!(
            interpolate_3d_baseline(&s, &g, None),
            Err(Error::NoValidSlices(_))
        ));
    }
}
