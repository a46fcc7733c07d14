//! Image quality measures for comparing reconstructions.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::forward::ScatteredSlice;
use crate::geometry::{Grid4D, Volume3D, Volume4D};

/// 7-point Laplacian in voxel units with replicated borders.
pub fn laplacian(volume: &Volume3D) -> Vec<f64> {
    let [nx, ny, nz] = volume.grid.dims;
    let v = &volume.data;
    let idx = |i: usize, j: usize, k: usize| i + nx * (j + ny * k);
    (0..volume.data.len())
        .into_par_iter()
        .map(|n| {
            let (i, j, k) = (n % nx, (n / nx) % ny, n / (nx * ny));
            let c = v[n];
            let mut acc = 0.0;
            acc += v[idx(i.saturating_sub(1), j, k)] + v[idx((i + 1).min(nx - 1), j, k)] - 2.0 * c;
            acc += v[idx(i, j.saturating_sub(1), k)] + v[idx(i, (j + 1).min(ny - 1), k)] - 2.0 * c;
            acc += v[idx(i, j, k.saturating_sub(1))] + v[idx(i, j, (k + 1).min(nz - 1))] - 2.0 * c;
            acc
        })
        .collect()
}

fn check_mask(mask: &[bool], n: usize) -> Result<usize> {
    if mask.len() != n {
        return Err(Error::invalid(format!("mask has {} voxels, volume has {n}", mask.len())));
    }
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(Error::invalid("mask is empty"));
    }
    Ok(count)
}

/// Variance of the Laplacian response over masked voxels:
/// `(1/N) Σ_mask (ΔV − mean_mask ΔV)²`.
pub fn sharpness(volume: &Volume3D, mask: &[bool]) -> Result<f64> {
    let count = check_mask(mask, volume.data.len())? as f64;
    let lap = laplacian(volume);
    let masked = || lap.iter().zip(mask).filter(|(_, &m)| m).map(|(v, _)| *v);
    let mean = masked().sum::<f64>() / count;
    Ok(masked().map(|v| (v - mean) * (v - mean)).sum::<f64>() / count)
}

/// Per-voxel population standard deviation over time and its mask mean.
pub fn temporal_std(series: &Volume4D, mask: Option<&[bool]>) -> Result<(Volume3D, f64)> {
    let nt = series.grid.dims[3];
    if nt < 2 {
        return Err(Error::invalid("temporal std needs at least 2 timepoints"));
    }
    let frame = series.grid.frame_len();
    let count = match mask {
        Some(m) => check_mask(m, frame)?,
        None => frame,
    };
    let std: Vec<f64> = (0..frame)
        .into_par_iter()
        .map(|i| {
            // Welford update.
            let (mut mean, mut m2) = (0.0, 0.0);
            for l in 0..nt {
                let x = series.data[l * frame + i];
                let d = x - mean;
                mean += d / (l + 1) as f64;
                m2 += d * (x - mean);
            }
            (m2 / nt as f64).max(0.0).sqrt()
        })
        .collect();
    let total: f64 = std
        .iter()
        .enumerate()
        .filter(|(i, _)| mask.is_none_or(|m| m[*i]))
        .map(|(_, v)| v)
        .sum();
    Ok((Volume3D::from_data(series.grid.spatial(), std)?, total / count as f64))
}

/// Root mean squared difference per timepoint over the mask.
pub fn rmse_per_timepoint(a: &Volume4D, truth: &Volume4D, mask: Option<&[bool]>) -> Result<Vec<f64>> {
    if !a.grid.same_geometry(&truth.grid) {
        return Err(Error::invalid("rmse operands have different grids"));
    }
    let frame = a.grid.frame_len();
    let count = match mask {
        Some(m) => check_mask(m, frame)?,
        None => frame,
    } as f64;
    Ok((0..a.grid.dims[3])
        .map(|l| {
            let sq: f64 = a
                .frame(l)
                .iter()
                .zip(truth.frame(l))
                .enumerate()
                .filter(|(i, _)| mask.is_none_or(|m| m[*i]))
                .map(|(_, (x, y))| (x - y) * (x - y))
                .sum();
            (sq / count).sqrt()
        })
        .collect())
}

pub fn rmse(a: &Volume4D, truth: &Volume4D, mask: Option<&[bool]>) -> Result<f64> {
    let per = rmse_per_timepoint(a, truth, mask)?;
    Ok((per.iter().map(|r| r * r).sum::<f64>() / per.len() as f64).sqrt())
}

/// Uncorrected series: each slice copied into its nominal plane and volume,
/// ignoring its pose.
pub fn stack_raw(slices: &[ScatteredSlice], grid: &Grid4D) -> Result<Volume4D> {
    let [nx, ny, nz, nt] = grid.dims;
    let mut out = Volume4D::zeros(*grid);
    for s in slices {
        if s.dims != [nx, ny] {
            return Err(Error::GeometryMismatch(format!(
                "slice is {}x{}, grid planes are {nx}x{ny}",
                s.dims[0], s.dims[1]
            )));
        }
        if s.slice_index >= nz || s.volume_index >= nt {
            return Err(Error::GeometryMismatch(format!(
                "slice {} of volume {} lies outside the grid",
                s.slice_index, s.volume_index
            )));
        }
        let start = s.slice_index * nx * ny;
        out.frame_mut(s.volume_index)[start..start + nx * ny].copy_from_slice(&s.data);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MethodScores {
    pub raw: f64,
    pub linear: f64,
    pub ours: f64,
}

impl MethodScores {
    /// `(linear/raw, ours/raw)`.
    pub fn relative(&self) -> (f64, f64) {
        (self.linear / self.raw, self.ours / self.raw)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    /// Sharpness of each temporal-mean volume.
    pub sharpness: MethodScores,
    /// Mask mean of the per-voxel temporal std.
    pub temporal_std: MethodScores,
    pub rmse: Option<MethodScores>,
}

impl EvaluationReport {
    pub const CSV_HEADER: &'static str =
        "subject,sharpness_raw,sharpness_linear,sharpness_ours,std_raw,std_linear,std_ours";

    pub fn table_row(&self, subject: &str) -> String {
        format!(
            "{subject},{},{},{},{},{},{}",
            self.sharpness.raw,
            self.sharpness.linear,
            self.sharpness.ours,
            self.temporal_std.raw,
            self.temporal_std.linear,
            self.temporal_std.ours
        )
    }

    /// `key=value` lines, sorted by key.
    pub fn key_values(&self) -> String {
        let mut pairs: Vec<(String, f64)> = Vec::new();
        let mut add = |name: &str, s: &MethodScores| {
            let (rl, ro) = s.relative();
            pairs.push((format!("{name}.raw"), s.raw));
            pairs.push((format!("{name}.linear"), s.linear));
            pairs.push((format!("{name}.ours"), s.ours));
            pairs.push((format!("{name}.relative.linear"), rl));
            pairs.push((format!("{name}.relative.ours"), ro));
        };
        add("sharpness", &self.sharpness);
        add("std", &self.temporal_std);
        if let Some(r) = &self.rmse {
            add("rmse", r);
        }
        pairs.sort_by(|a, b| a.0.cmp(&b.0));
        let mut out = String::new();
        for (k, v) in pairs {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }
}

/// Compare the uncorrected series, the 3D baseline and the 4D reconstruction.
pub fn evaluate(
    raw: &Volume4D,
    linear: &Volume4D,
    ours: &Volume4D,
    mask: &[bool],
    truth: Option<&Volume4D>,
) -> Result<EvaluationReport> {
    for (name, v) in [("linear", linear), ("ours", ours)]
        .into_iter()
        .chain(truth.map(|t| ("truth", t)))
    {
        if !v.grid.same_geometry(&raw.grid) {
            return Err(Error::invalid(format!("{name} grid differs from raw grid")));
        }
    }
    let score = |f: &dyn Fn(&Volume4D) -> Result<f64>| -> Result<MethodScores> {
        Ok(MethodScores {
            raw: f(raw)?,
            linear: f(linear)?,
            ours: f(ours)?,
        })
    };
    let sharp = score(&|v| sharpness(&v.temporal_mean(), mask))?;
    let std = score(&|v| temporal_std(v, Some(mask)).map(|r| r.1))?;
    let rmse_scores = match truth {
        Some(t) => Some(score(&|v| rmse(v, t, Some(mask)))?),
        None => None,
    };
    let report = EvaluationReport {
        sharpness: sharp,
        temporal_std: std,
        rmse: rmse_scores,
    };
    let all = [report.sharpness, report.temporal_std]
        .into_iter()
        .chain(report.rmse)
        .flat_map(|s| [s.raw, s.linear, s.ours]);
    if all.into_iter().any(|v| !v.is_finite()) {
        return Err(Error::UndefinedMetric("non-finite evaluation score".into()));
    }
    Ok(report)
}

/// Mask of voxels with value above `threshold` in the temporal mean.
pub fn threshold_mask(volume: &Volume3D, threshold: f64) -> Vec<bool> {
    volume.data.iter().map(|&v| v > threshold).collect()
}
