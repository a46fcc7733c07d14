//! Rigid motion estimation: volume-to-volume alignment, quiescent target
//! selection, and interleave-aware slice-to-volume refinement.
//!
//! A pose `P` maps native (moving) coordinates to target coordinates, so a
//! well-registered moving image satisfies `M(q) ≈ T(P q)`.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result, Warning};
use crate::forward::{project_spatial, ScatteredSlice};
use crate::geometry::{Point3, RigidTransform, Volume3D, Volume4D};
use crate::psf::PsfParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Ncc,
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ncc" => Ok(Self::Ncc),
            other => Err(Error::invalid(format!("unknown metric {other:?}"))),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ncc")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegistrationConfig {
    pub pyramid_levels: usize,
    /// Similarity evaluations allowed per registration.
    pub max_eval: usize,
    pub interleave_factor: usize,
    pub quiescence_window: usize,
    pub metric: Metric,
    /// Search step at the coarsest level, in degrees and mm.
    pub initial_step: f64,
    /// Smallest search step, in degrees and mm.
    pub final_step: f64,
    /// Volume registrations scoring below this return identity with a warning.
    pub min_similarity: f64,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            pyramid_levels: 2,
            max_eval: 2000,
            interleave_factor: 2,
            quiescence_window: 4,
            metric: Metric::Ncc,
            initial_step: 2.0,
            final_step: 0.1,
            min_similarity: 0.2,
        }
    }
}

impl RegistrationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pyramid_levels < 1 {
            return Err(Error::invalid("pyramid_levels must be >= 1"));
        }
        if self.interleave_factor < 1 {
            return Err(Error::invalid("interleave_factor must be >= 1"));
        }
        if self.quiescence_window < 1 {
            return Err(Error::invalid("quiescence_window must be >= 1"));
        }
        if self.max_eval < 1 {
            return Err(Error::invalid("max_eval must be >= 1"));
        }
        if !(self.final_step > 0.0 && self.initial_step >= self.final_step) {
            return Err(Error::invalid("search steps must satisfy 0 < final_step <= initial_step"));
        }
        Ok(())
    }
}

/// Pearson correlation of the masked samples.
pub fn ncc(a: &[f64], b: &[f64], mask: Option<&[bool]>) -> Result<f64> {
    if a.len() != b.len() || mask.is_some_and(|m| m.len() != a.len()) {
        return Err(Error::invalid("ncc operands differ in length"));
    }
    let keep = |i: usize| mask.is_none_or(|m| m[i]);
    let n = (0..a.len()).filter(|&i| keep(i)).count();
    if n < 2 {
        return Err(Error::UndefinedMetric(format!("ncc needs at least 2 samples, got {n}")));
    }
    let (mut sa, mut sb) = (0.0, 0.0);
    for i in (0..a.len()).filter(|&i| keep(i)) {
        sa += a[i];
        sb += b[i];
    }
    let (ma, mb) = (sa / n as f64, sb / n as f64);
    let (mut cab, mut caa, mut cbb) = (0.0, 0.0, 0.0);
    for i in (0..a.len()).filter(|&i| keep(i)) {
        let (da, db) = (a[i] - ma, b[i] - mb);
        cab += da * db;
        caa += da * da;
        cbb += db * db;
    }
    if caa == 0.0 || cbb == 0.0 {
        return Err(Error::UndefinedMetric("zero variance".into()));
    }
    Ok((cab / (caa.sqrt() * cbb.sqrt())).clamp(-1.0, 1.0))
}

/// Running sums for a one-pass correlation score.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: f64,
    a: f64,
    b: f64,
    aa: f64,
    bb: f64,
    ab: f64,
}

impl Moments {
    #[inline]
    fn push(&mut self, x: f64, y: f64) {
        self.n += 1.0;
        self.a += x;
        self.b += y;
        self.aa += x * x;
        self.bb += y * y;
        self.ab += x * y;
    }

    fn merge(&mut self, o: &Moments) {
        self.n += o.n;
        self.a += o.a;
        self.b += o.b;
        self.aa += o.aa;
        self.bb += o.bb;
        self.ab += o.ab;
    }

    /// Correlation, or −1 when undefined.
    fn score(&self) -> f64 {
        if self.n < 2.0 {
            return -1.0;
        }
        let va = self.aa - self.a * self.a / self.n;
        let vb = self.bb - self.b * self.b / self.n;
        if !(va > 1e-12 * self.aa.max(1e-300) && vb > 1e-12 * self.bb.max(1e-300)) {
            return -1.0;
        }
        ((self.ab - self.a * self.b / self.n) / (va.sqrt() * vb.sqrt())).clamp(-1.0, 1.0)
    }
}

/// Mean absolute voxel difference between consecutive volumes.
pub fn volume_differences(series: &Volume4D) -> Vec<f64> {
    let nt = series.grid.dims[3];
    let frame = series.grid.frame_len() as f64;
    (1..nt)
        .map(|l| {
            series
                .frame(l)
                .iter()
                .zip(series.frame(l - 1))
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>()
                / frame
        })
        .collect()
}

/// Average of the `window` consecutive volumes with the least internal change,
/// and the index of its first volume. A single-volume window is scored by the
/// changes into and out of it. Ties go to the earliest window.
pub fn find_quiescent_target(series: &Volume4D, window: usize) -> Result<(Volume3D, usize)> {
    let nt = series.grid.dims[3];
    if window < 1 || window > nt {
        return Err(Error::invalid(format!("quiescence window {window} must lie in 1..={nt}")));
    }
    let diffs = volume_differences(series);
    let score = |s: usize| -> f64 {
        if window == 1 {
            let before = if s > 0 { diffs[s - 1] } else { 0.0 };
            let after = diffs.get(s).copied().unwrap_or(0.0);
            before + after
        } else {
            diffs[s..s + window - 1].iter().sum()
        }
    };
    let mut start = 0;
    let mut best = f64::INFINITY;
    for s in 0..=nt - window {
        let v = score(s);
        if v < best {
            best = v;
            start = s;
        }
    }
    let frame = series.grid.frame_len();
    let mut data = vec![0.0; frame];
    for l in start..start + window {
        for (d, v) in data.iter_mut().zip(series.frame(l)) {
            *d += v;
        }
    }
    data.iter_mut().for_each(|d| *d /= window as f64);
    Ok((Volume3D::from_data(series.grid.spatial(), data)?, start))
}

/// Compass search over `[rx, ry, rz (deg), tx, ty, tz (mm)]`, coarse to fine.
/// `score(params, level)` is maximized; level 0 is the coarsest.
fn pattern_search(
    start: [f64; 6],
    config: &RegistrationConfig,
    mut score: impl FnMut(&[f64; 6], usize) -> f64,
) -> ([f64; 6], f64) {
    let levels = config.pyramid_levels;
    let mut x = start;
    let mut evals = 0;
    let mut best = f64::NEG_INFINITY;
    for level in 0..levels {
        let mut step = config.initial_step * 0.5f64.powi(level as i32);
        let end = if level + 1 == levels {
            config.final_step
        } else {
            (step * 0.25).max(config.final_step)
        };
        best = score(&x, level);
        evals += 1;
        while step >= end - 1e-12 && evals < config.max_eval {
            let mut improved = false;
            for p in 0..6 {
                for sign in [1.0, -1.0] {
                    if evals >= config.max_eval {
                        break;
                    }
                    let mut cand = x;
                    cand[p] += sign * step;
                    let s = score(&cand, level);
                    evals += 1;
                    if s > best + 1e-12 {
                        best = s;
                        x = cand;
                        improved = true;
                        break;
                    }
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
    }
    (x, best)
}

fn volume_score(moving: &Volume3D, target: &Volume3D, pose: &RigidTransform, stride: usize) -> f64 {
    let fwd = pose.to_affine();
    let inv = pose.inverse().to_affine();
    let one_way = |src: &Volume3D, dst: &Volume3D, map: &crate::geometry::Affine| {
        let [nx, ny, nz] = src.grid.dims;
        let parts: Vec<Moments> = (0..nz)
            .into_par_iter()
            .step_by(stride)
            .map(|k| {
                let mut m = Moments::default();
                for j in (0..ny).step_by(stride) {
                    for i in (0..nx).step_by(stride) {
                        let p = src.grid.voxel_to_world([i as f64, j as f64, k as f64]);
                        if let Some(v) = dst.sample_linear(map.apply(p)) {
                            m.push(src.data[src.grid.index(i, j, k)], v);
                        }
                    }
                }
                m
            })
            .collect();
        let mut total = Moments::default();
        for p in &parts {
            total.merge(p);
        }
        total.score()
    };
    0.5 * (one_way(moving, target, &fwd) + one_way(target, moving, &inv))
}

/// Gaussian width, in voxels, applied to both volumes during the search.
/// Reported scores use the unsmoothed volumes.
pub const VOLUME_SMOOTHING: f64 = 1.5;

/// Separable Gaussian blur in voxel units, renormalized at the borders.
pub fn gaussian_smooth(volume: &Volume3D, sigma_voxels: f64) -> Volume3D {
    if sigma_voxels <= 0.0 {
        return volume.clone();
    }
    let radius = (3.0 * sigma_voxels).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|d| (-0.5 * (d as f64 / sigma_voxels).powi(2)).exp())
        .collect();
    let dims = volume.grid.dims;
    let strides = [1, dims[0], dims[0] * dims[1]];
    let mut data = volume.data.clone();
    for axis in 0..3 {
        let (n, st) = (dims[axis] as isize, strides[axis]);
        let src = data.clone();
        data.par_iter_mut().enumerate().for_each(|(i, out)| {
            let c = ((i / st) % n as usize) as isize;
            let (mut acc, mut wsum) = (0.0, 0.0);
            for (o, w) in (-radius..=radius).zip(&kernel) {
                let j = c + o;
                if j >= 0 && j < n {
                    acc += w * src[(i as isize + o * st as isize) as usize];
                    wsum += w;
                }
            }
            *out = acc / wsum;
        });
    }
    Volume3D { grid: volume.grid, data }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VolumeRegistration {
    pub transform: RigidTransform,
    /// Symmetric NCC at the returned pose.
    pub score: f64,
    pub warning: Option<Warning>,
}

/// Rigid pose aligning `moving` to `target` by symmetric NCC, about the
/// target grid center.
pub fn register_volume(moving: &Volume3D, target: &Volume3D, config: &RegistrationConfig) -> Result<VolumeRegistration> {
    register_volume_from(moving, target, &RigidTransform::identity_about(target.grid.center()), config)
}

/// As [`register_volume`], starting from `init`.
pub fn register_volume_from(
    moving: &Volume3D,
    target: &Volume3D,
    init: &RigidTransform,
    config: &RegistrationConfig,
) -> Result<VolumeRegistration> {
    config.validate()?;
    let moving_s = gaussian_smooth(moving, VOLUME_SMOOTHING);
    let target_s = gaussian_smooth(target, VOLUME_SMOOTHING);
    let center = target.grid.center();
    let init = init.recentered(center);
    let strides: Vec<usize> = (0..config.pyramid_levels)
        .map(|l| 1 << (config.pyramid_levels - 1 - l))
        .collect();
    let (params, _) = pattern_search(init.params(), config, |p, level| {
        volume_score(&moving_s, &target_s, &RigidTransform::from_params(*p, center), strides[level])
    });
    let transform = RigidTransform::from_params(params, center);
    let score = volume_score(moving, target, &transform, 1);
    if score < config.min_similarity {
        let w = Warning::RegistrationFailed { score };
        log::warn!("{w}");
        return Ok(VolumeRegistration {
            transform: RigidTransform::identity_about(center),
            score: volume_score(moving, target, &RigidTransform::identity_about(center), 1),
            warning: Some(w),
        });
    }
    Ok(VolumeRegistration {
        transform,
        score,
        warning: None,
    })
}

/// Scores slice planes against a projected target volume.
struct SliceScorer<'a> {
    target: &'a Volume3D,
    mask: Option<&'a [bool]>,
    psf: &'a PsfParams,
}

impl SliceScorer<'_> {
    fn in_mask(&self, p: Point3) -> bool {
        let Some(mask) = self.mask else { return true };
        let g = &self.target.grid;
        let v = g.world_to_voxel(p);
        let idx: Option<Vec<usize>> = (0..3)
            .map(|a| {
                let r = v[a].round();
                (r >= 0.0 && r < g.dims[a] as f64).then_some(r as usize)
            })
            .collect();
        idx.is_some_and(|i| mask[g.index(i[0], i[1], i[2])])
    }

    fn moments(&self, slice: &ScatteredSlice, pose: &RigidTransform, stride: usize) -> Moments {
        let pred = project_spatial(self.target, self.psf, slice, pose);
        let affine = pose.to_affine();
        let [nu, nv] = slice.dims;
        let mut m = Moments::default();
        for v in (0..nv).step_by(stride) {
            for u in (0..nu).step_by(stride) {
                let k = v * nu + u;
                if let Some(t) = pred[k] {
                    if self.in_mask(affine.apply(slice.native_point(u, v))) {
                        m.push(slice.data[k], t);
                    }
                }
            }
        }
        m
    }

    fn score(&self, slice: &ScatteredSlice, pose: &RigidTransform, stride: usize) -> f64 {
        self.moments(slice, pose, stride).score()
    }

    fn joint_score(&self, members: &[(&ScatteredSlice, RigidTransform)], stride: usize) -> f64 {
        let mut total = Moments::default();
        for (s, p) in members {
            total.merge(&self.moments(s, p, stride));
        }
        total.score()
    }

    /// Pixels whose plane position falls inside the mask.
    fn coverage(&self, slice: &ScatteredSlice, pose: &RigidTransform) -> usize {
        let affine = pose.to_affine();
        let [nu, nv] = slice.dims;
        (0..nv)
            .flat_map(|v| (0..nu).map(move |u| (u, v)))
            .filter(|&(u, v)| {
                let p = affine.apply(slice.native_point(u, v));
                self.in_mask(p) && self.target.sample_linear(p).is_some()
            })
            .count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SliceRegistration {
    pub poses: Vec<RigidTransform>,
    /// NCC of each slice at its returned pose.
    pub scores: Vec<f64>,
    /// In-mask pixel count at the initial pose relative to the best-covered slice.
    pub coverage: Vec<f64>,
    /// Slices that kept their packet pose.
    pub fallback: Vec<bool>,
    pub warnings: Vec<Warning>,
}

/// Slices below this relative coverage keep their packet pose.
pub const MIN_REFINE_COVERAGE: f64 = 0.1;

/// Two-stage refinement starting from each slice's current pose: packets
/// sharing `slice_index % interleave_factor` within a volume move jointly,
/// then every slice is refined on its own.
pub fn register_slices_hierarchical(
    slices: &[ScatteredSlice],
    target: &Volume3D,
    mask: Option<&[bool]>,
    psf: &PsfParams,
    config: &RegistrationConfig,
) -> Result<SliceRegistration> {
    config.validate()?;
    psf.validate()?;
    if let Some(m) = mask {
        if m.len() != target.grid.len() {
            return Err(Error::GeometryMismatch("mask does not match target grid".into()));
        }
    }
    let scorer = SliceScorer { target, mask, psf };
    let center = target.grid.center();
    let strides: Vec<usize> = (0..config.pyramid_levels)
        .map(|l| 1 << (config.pyramid_levels - 1 - l))
        .collect();
    let init: Vec<RigidTransform> = slices.iter().map(|s| s.pose.recentered(center)).collect();
    let init_scores: Vec<f64> = slices
        .par_iter()
        .zip(&init)
        .map(|(s, p)| scorer.score(s, p, 1))
        .collect();
    let counts: Vec<usize> = slices
        .par_iter()
        .zip(&init)
        .map(|(s, p)| scorer.coverage(s, p))
        .collect();
    let max_count = counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let coverage: Vec<f64> = counts.iter().map(|&c| c as f64 / max_count).collect();

    // Stage 1: joint packet offsets.
    let mut packet_pose = init.clone();
    if config.interleave_factor > 1 {
        let mut packets: std::collections::BTreeMap<(usize, usize), Vec<usize>> = Default::default();
        for (k, s) in slices.iter().enumerate() {
            packets
                .entry((s.volume_index, s.slice_index % config.interleave_factor))
                .or_default()
                .push(k);
        }
        let packets: Vec<Vec<usize>> = packets
            .into_values()
            .map(|m| m.into_iter().filter(|&k| coverage[k] >= MIN_REFINE_COVERAGE).collect::<Vec<_>>())
            .filter(|m| !m.is_empty())
            .collect();
        let offsets: Vec<(Vec<usize>, RigidTransform)> = packets
            .into_par_iter()
            .map(|members| {
                let apply = |p: &[f64; 6]| -> Vec<(&ScatteredSlice, RigidTransform)> {
                    let d = RigidTransform::from_params(*p, center);
                    members.iter().map(|&k| (&slices[k], d.compose(&init[k]))).collect()
                };
                let (params, best) = pattern_search([0.0; 6], config, |p, level| {
                    scorer.joint_score(&apply(p), strides[level])
                });
                let base = scorer.joint_score(&apply(&[0.0; 6]), 1);
                let d = if best > base {
                    RigidTransform::from_params(params, center)
                } else {
                    RigidTransform::identity_about(center)
                };
                (members, d)
            })
            .collect();
        for (members, d) in offsets {
            for k in members {
                packet_pose[k] = d.compose(&init[k]).recentered(center);
            }
        }
    }

    // Stage 2: individual refinement.
    let refined: Vec<(RigidTransform, f64, bool)> = slices
        .par_iter()
        .enumerate()
        .map(|(k, s)| {
            let start = packet_pose[k];
            if coverage[k] < MIN_REFINE_COVERAGE {
                return (start, scorer.score(s, &start, 1), true);
            }
            let (params, _) = pattern_search(start.params(), config, |p, level| {
                scorer.score(s, &RigidTransform::from_params(*p, center), strides[level])
            });
            let pose = RigidTransform::from_params(params, center);
            let score = scorer.score(s, &pose, 1);
            if score <= -1.0 {
                (start, scorer.score(s, &start, 1), true)
            } else {
                (pose, score, false)
            }
        })
        .collect();

    let mut poses = Vec::with_capacity(slices.len());
    let mut scores = Vec::with_capacity(slices.len());
    let mut fallback = Vec::with_capacity(slices.len());
    let mut warnings = Vec::new();
    for (k, (pose, score, fell_back)) in refined.into_iter().enumerate() {
        let (pose, score) = if score >= init_scores[k] {
            (pose, score)
        } else {
            (init[k], init_scores[k])
        };
        if fell_back {
            warnings.push(Warning::SliceFallback { slice: k });
        }
        poses.push(pose);
        scores.push(score);
        fallback.push(fell_back);
    }
    Ok(SliceRegistration {
        poses,
        scores,
        coverage,
        fallback,
        warnings,
    })
}

/// NCC of `slice` at `pose` against the spatially projected `target`.
pub fn slice_similarity(
    slice: &ScatteredSlice,
    pose: &RigidTransform,
    target: &Volume3D,
    mask: Option<&[bool]>,
    psf: &PsfParams,
) -> f64 {
    SliceScorer { target, mask, psf }.score(slice, pose, 1)
}

/// Full motion estimation from uncorrected slices.
#[derive(Debug, Clone)]
pub struct SeriesRegistration {
    pub target: Volume3D,
    pub target_start: usize,
    pub volume_poses: Vec<VolumeRegistration>,
    pub slices: SliceRegistration,
}

/// Quiescent target from `raw`, per-volume alignment, then slice refinement.
/// `raw` is the series of slices stacked at their nominal positions.
pub fn register_series(
    slices: &[ScatteredSlice],
    raw: &Volume4D,
    mask: Option<&[bool]>,
    psf: &PsfParams,
    config: &RegistrationConfig,
) -> Result<SeriesRegistration> {
    config.validate()?;
    let (target, target_start) = find_quiescent_target(raw, config.quiescence_window)?;
    let nt = raw.grid.dims[3];
    let volume_poses: Vec<VolumeRegistration> = (0..nt)
        .map(|l| register_volume(&raw.frame_volume(l), &target, config))
        .collect::<Result<_>>()?;
    let mut initialized = slices.to_vec();
    for s in &mut initialized {
        let v = volume_poses
            .get(s.volume_index)
            .ok_or_else(|| Error::GeometryMismatch(format!("slice volume {} outside series", s.volume_index)))?;
        s.pose = v.transform.compose(&s.pose);
    }
    let slice_reg = register_slices_hierarchical(&initialized, &target, mask, psf, config)?;
    Ok(SeriesRegistration {
        target,
        target_start,
        volume_poses,
        slices: slice_reg,
    })
}
