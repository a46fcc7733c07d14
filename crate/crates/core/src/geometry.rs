//! Rigid transforms and regular grids.
//!
//! Rotations use R = Rz(rz)·Ry(ry)·Rx(rx) (right-handed, angles in radians
//! internally, degrees at file and CLI boundaries). A transform maps a point
//! `p` to `R·(p − center) + center + t`.
//!
//! Voxel data is stored x-fastest: `i + nx·(j + ny·(k + nz·l))`. Fractional
//! voxel indices are zero-based with the origin at the voxel center.

use nalgebra::{Matrix3, Rotation3, Vector3};

use crate::error::{Error, Result};

pub type Point3 = [f64; 3];

/// 6-DOF rigid motion about a fixed rotation center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    /// Rotation about x (radians).
    pub rx: f64,
    /// Rotation about y (radians).
    pub ry: f64,
    /// Rotation about z (radians).
    pub rz: f64,
    /// Translation in mm.
    pub translation: Point3,
    /// Rotation center in world mm.
    pub center: Point3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self::identity_about([0.0; 3])
    }

    pub fn identity_about(center: Point3) -> Self {
        Self {
            rx: 0.0,
            ry: 0.0,
            rz: 0.0,
            translation: [0.0; 3],
            center,
        }
    }

    /// Build from file-style parameters: angles in degrees, translations in mm.
    pub fn from_params(params: [f64; 6], center: Point3) -> Self {
        Self {
            rx: params[0].to_radians(),
            ry: params[1].to_radians(),
            rz: params[2].to_radians(),
            translation: [params[3], params[4], params[5]],
            center,
        }
    }

    /// `(rx°, ry°, rz°, tx, ty, tz)`.
    pub fn params(&self) -> [f64; 6] {
        [
            self.rx.to_degrees(),
            self.ry.to_degrees(),
            self.rz.to_degrees(),
            self.translation[0],
            self.translation[1],
            self.translation[2],
        ]
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        *Rotation3::from_euler_angles(self.rx, self.ry, self.rz).matrix()
    }

    /// Rebuild a transform from a rotation matrix, translation and center.
    pub fn from_matrix(rotation: &Matrix3<f64>, translation: Point3, center: Point3) -> Self {
        let rot = Rotation3::from_matrix_unchecked(*rotation);
        let (rx, ry, rz) = rot.euler_angles();
        Self {
            rx,
            ry,
            rz,
            translation,
            center,
        }
    }

    /// Equivalent `p ↦ M·p + b` form for hot loops.
    pub fn to_affine(&self) -> Affine {
        let m = self.rotation_matrix();
        let c = Vector3::from(self.center);
        let b = c - m * c + Vector3::from(self.translation);
        Affine { m, b }
    }

    pub fn apply(&self, p: Point3) -> Point3 {
        self.to_affine().apply(p)
    }

    /// `self ∘ other`: applies `other` first. The result keeps `self.center`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        let a = self.to_affine();
        let b = other.to_affine();
        let m = a.m * b.m;
        let offset = a.m * b.b + a.b;
        Self::from_affine(&m, &offset, self.center)
    }

    pub fn inverse(&self) -> RigidTransform {
        let a = self.to_affine();
        let mt = a.m.transpose();
        let offset = -(mt * a.b);
        Self::from_affine(&mt, &offset, self.center)
    }

    /// Same map expressed about another rotation center.
    pub fn recentered(&self, center: Point3) -> RigidTransform {
        let a = self.to_affine();
        Self::from_affine(&a.m, &a.b, center)
    }

    fn from_affine(m: &Matrix3<f64>, offset: &Vector3<f64>, center: Point3) -> Self {
        let c = Vector3::from(center);
        // offset = c − M·c + t
        let t = offset - c + m * c;
        Self::from_matrix(m, [t.x, t.y, t.z], center)
    }

    /// Maximum deviation between the two maps' matrices and offsets.
    pub fn map_distance(&self, other: &RigidTransform) -> f64 {
        let a = self.to_affine();
        let b = other.to_affine();
        let dm = (a.m - b.m).abs().max();
        let db = (a.b - b.b).abs().max();
        dm.max(db)
    }
}

/// Rigid map in matrix form.
#[derive(Debug, Clone, Copy)]
pub struct Affine {
    pub m: Matrix3<f64>,
    pub b: Vector3<f64>,
}

impl Affine {
    #[inline]
    pub fn apply(&self, p: Point3) -> Point3 {
        let m = &self.m;
        [
            m[(0, 0)] * p[0] + m[(0, 1)] * p[1] + m[(0, 2)] * p[2] + self.b.x,
            m[(1, 0)] * p[0] + m[(1, 1)] * p[1] + m[(1, 2)] * p[2] + self.b.y,
            m[(2, 0)] * p[0] + m[(2, 1)] * p[1] + m[(2, 2)] * p[2] + self.b.z,
        ]
    }
}

/// Regular 3D grid, axis aligned with world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid3D {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: Point3,
}

impl Grid3D {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: Point3) -> Result<Self> {
        let g = Self {
            dims,
            spacing,
            origin,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&n| n == 0) {
            return Err(Error::invalid(format!("grid dims must be >= 1: {:?}", self.dims)));
        }
        if self.spacing.iter().any(|&h| !(h > 0.0 && h.is_finite())) {
            return Err(Error::invalid(format!(
                "grid spacing must be > 0: {:?}",
                self.spacing
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn voxel_to_world(&self, idx: [f64; 3]) -> Point3 {
        [
            self.origin[0] + idx[0] * self.spacing[0],
            self.origin[1] + idx[1] * self.spacing[1],
            self.origin[2] + idx[2] * self.spacing[2],
        ]
    }

    #[inline]
    pub fn world_to_voxel(&self, p: Point3) -> [f64; 3] {
        [
            (p[0] - self.origin[0]) / self.spacing[0],
            (p[1] - self.origin[1]) / self.spacing[1],
            (p[2] - self.origin[2]) / self.spacing[2],
        ]
    }

    /// World position of the geometric center of the grid.
    pub fn center(&self) -> Point3 {
        self.voxel_to_world([
            (self.dims[0] - 1) as f64 / 2.0,
            (self.dims[1] - 1) as f64 / 2.0,
            (self.dims[2] - 1) as f64 / 2.0,
        ])
    }
}

/// Regular space-time grid. Timepoint `l` sits at `t0 + l·tr` seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid4D {
    pub dims: [usize; 4],
    pub spacing: [f64; 3],
    pub tr: f64,
    pub origin: Point3,
    pub t0: f64,
}

impl Grid4D {
    pub fn new(dims: [usize; 4], spacing: [f64; 3], tr: f64) -> Result<Self> {
        Self::with_origin(dims, spacing, tr, [0.0; 3], 0.0)
    }

    pub fn with_origin(
        dims: [usize; 4],
        spacing: [f64; 3],
        tr: f64,
        origin: Point3,
        t0: f64,
    ) -> Result<Self> {
        let g = Self {
            dims,
            spacing,
            tr,
            origin,
            t0,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        self.spatial().validate()?;
        if self.dims[3] == 0 {
            return Err(Error::invalid("grid must have at least one timepoint"));
        }
        if !(self.tr > 0.0 && self.tr.is_finite()) {
            return Err(Error::invalid(format!("TR must be > 0, got {}", self.tr)));
        }
        if !self.t0.is_finite() || self.origin.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("grid origin must be finite"));
        }
        Ok(())
    }

    pub fn spatial(&self) -> Grid3D {
        Grid3D {
            dims: [self.dims[0], self.dims[1], self.dims[2]],
            spacing: self.spacing,
            origin: self.origin,
        }
    }

    /// Voxels per timepoint.
    pub fn frame_len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn len(&self) -> usize {
        self.frame_len() * self.dims[3]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize, l: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * (k + self.dims[2] * l))
    }

    pub fn voxel_to_world(&self, idx: [f64; 4]) -> (Point3, f64) {
        (
            self.spatial().voxel_to_world([idx[0], idx[1], idx[2]]),
            self.t0 + idx[3] * self.tr,
        )
    }

    pub fn world_to_voxel(&self, p: Point3, t: f64) -> [f64; 4] {
        let v = self.spatial().world_to_voxel(p);
        [v[0], v[1], v[2], (t - self.t0) / self.tr]
    }

    pub fn center(&self) -> Point3 {
        self.spatial().center()
    }

    pub fn same_geometry(&self, other: &Grid4D) -> bool {
        self.dims == other.dims
            && self.spacing == other.spacing
            && self.tr == other.tr
            && self.origin == other.origin
            && self.t0 == other.t0
    }
}

/// Scalar 3D image.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3D {
    pub grid: Grid3D,
    pub data: Vec<f64>,
}

impl Volume3D {
    pub fn zeros(grid: Grid3D) -> Self {
        Self {
            grid,
            data: vec![0.0; grid.len()],
        }
    }

    pub fn from_data(grid: Grid3D, data: Vec<f64>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::GeometryMismatch(format!(
                "data length {} != grid size {}",
                data.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, data })
    }

    /// Trilinear interpolation at a world point; `None` outside the grid.
    pub fn sample_linear(&self, p: Point3) -> Option<f64> {
        let v = self.grid.world_to_voxel(p);
        let [nx, ny, nz] = self.grid.dims;
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..3 {
            let n = [nx, ny, nz][a];
            let x = v[a];
            if !(x >= 0.0 && x <= (n - 1) as f64) {
                return None;
            }
            let b = (x.floor() as usize).min(n.saturating_sub(2));
            base[a] = b;
            frac[a] = if n == 1 { 0.0 } else { x - b as f64 };
        }
        let step = [
            usize::from(nx > 1),
            if ny > 1 { nx } else { 0 },
            if nz > 1 { nx * ny } else { 0 },
        ];
        let i0 = self.grid.index(base[0], base[1], base[2]);
        let mut acc = 0.0;
        for c in 0..8 {
            let (bx, by, bz) = (c & 1, (c >> 1) & 1, (c >> 2) & 1);
            let w = (if bx == 1 { frac[0] } else { 1.0 - frac[0] })
                * (if by == 1 { frac[1] } else { 1.0 - frac[1] })
                * (if bz == 1 { frac[2] } else { 1.0 - frac[2] });
            if w != 0.0 {
                acc += w * self.data[i0 + bx * step[0] + by * step[1] + bz * step[2]];
            }
        }
        Some(acc)
    }
}

/// Real-valued 4D image on a regular space-time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume4D {
    pub grid: Grid4D,
    pub data: Vec<f64>,
}

impl Volume4D {
    pub fn zeros(grid: Grid4D) -> Self {
        Self::filled(grid, 0.0)
    }

    pub fn filled(grid: Grid4D, value: f64) -> Self {
        Self {
            grid,
            data: vec![value; grid.len()],
        }
    }

    pub fn from_data(grid: Grid4D, data: Vec<f64>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::GeometryMismatch(format!(
                "data length {} != grid size {}",
                data.len(),
                grid.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("volume contains non-finite values"));
        }
        Ok(Self { grid, data })
    }

    pub fn frame(&self, l: usize) -> &[f64] {
        let n = self.grid.frame_len();
        &self.data[l * n..(l + 1) * n]
    }

    pub fn frame_mut(&mut self, l: usize) -> &mut [f64] {
        let n = self.grid.frame_len();
        &mut self.data[l * n..(l + 1) * n]
    }

    pub fn frame_volume(&self, l: usize) -> Volume3D {
        Volume3D {
            grid: self.grid.spatial(),
            data: self.frame(l).to_vec(),
        }
    }

    /// Per-voxel mean over time.
    pub fn temporal_mean(&self) -> Volume3D {
        let n = self.grid.frame_len();
        let nt = self.grid.dims[3];
        let mut data = vec![0.0; n];
        for l in 0..nt {
            for (acc, v) in data.iter_mut().zip(self.frame(l)) {
                *acc += v;
            }
        }
        for v in &mut data {
            *v /= nt as f64;
        }
        Volume3D {
            grid: self.grid.spatial(),
            data,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
