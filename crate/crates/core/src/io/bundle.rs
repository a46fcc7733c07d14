//! On-disk slice series: the slice stack as a 4D NIfTI (one slice per
//! 4th-axis index) with a geometry sidecar, the reconstruction grid and the
//! brain mask. Poses travel separately in a motion table.

use std::path::Path;

use crate::error::{Error, Result};
use crate::forward::ScatteredSlice;
use crate::geometry::{Grid4D, RigidTransform, Volume4D};
use crate::io::kv::{read_kv, write_kv, KeyValues};
use crate::io::nifti::{read_nifti, write_nifti, write_nifti_as, Datatype};
use crate::io::tables::{read_slice_csv, write_slice_csv, SliceRow};

pub const SLICES_NII: &str = "slices.nii";
pub const SLICES_CSV: &str = "slices.csv";
pub const GRID_TXT: &str = "grid.txt";
pub const MASK_NII: &str = "mask.nii";

fn join(values: &[impl ToString]) -> String {
    values.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

/// Parse `n` comma-separated values.
pub fn parse_list<T: std::str::FromStr>(key: &str, value: &str, n: usize) -> Result<Vec<T>> {
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    if parts.len() != n {
        return Err(Error::invalid(format!("{key} needs {n} comma-separated values, got {value:?}")));
    }
    parts
        .iter()
        .map(|p| p.parse().map_err(|_| Error::invalid(format!("{key}: cannot parse {p:?}"))))
        .collect()
}

pub fn grid_to_kv(grid: &Grid4D) -> KeyValues {
    KeyValues::from([
        ("dims".to_owned(), join(&grid.dims)),
        ("spacing_mm".to_owned(), join(&grid.spacing)),
        ("tr_s".to_owned(), grid.tr.to_string()),
        ("origin_mm".to_owned(), join(&grid.origin)),
        ("t0_s".to_owned(), grid.t0.to_string()),
    ])
}

pub fn grid_from_kv(kv: &KeyValues) -> Result<Grid4D> {
    let get = |k: &str| {
        kv.get(k)
            .map(String::as_str)
            .ok_or_else(|| Error::invalid(format!("grid description lacks {k}")))
    };
    let dims: Vec<usize> = parse_list("dims", get("dims")?, 4)?;
    let spacing: Vec<f64> = parse_list("spacing_mm", get("spacing_mm")?, 3)?;
    let origin: Vec<f64> = parse_list("origin_mm", get("origin_mm")?, 3)?;
    let num = |k: &str| -> Result<f64> {
        let v = get(k)?;
        v.parse().map_err(|_| Error::invalid(format!("{k}: cannot parse {v:?}")))
    };
    Grid4D::with_origin(
        [dims[0], dims[1], dims[2], dims[3]],
        [spacing[0], spacing[1], spacing[2]],
        num("tr_s")?,
        [origin[0], origin[1], origin[2]],
        num("t0_s")?,
    )
}

/// Slices with their nominal geometry, the target grid and the mask.
#[derive(Debug, Clone)]
pub struct SeriesBundle {
    pub grid: Grid4D,
    /// In acquisition order; poses are identity about the grid center on read.
    pub slices: Vec<ScatteredSlice>,
    /// Spatial mask over one grid frame.
    pub mask: Vec<bool>,
}

impl SeriesBundle {
    pub const FILES: [&'static str; 4] = [GRID_TXT, MASK_NII, SLICES_CSV, SLICES_NII];

    pub fn write(&self, dir: &Path) -> Result<()> {
        let Some(first) = self.slices.first() else {
            return Err(Error::NoValidSlices("cannot write an empty slice series".into()));
        };
        let [nu, nv] = first.dims;
        if self.slices.iter().any(|s| s.dims != first.dims) {
            return Err(Error::GeometryMismatch("slices differ in size and cannot be stacked".into()));
        }
        if self.mask.len() != self.grid.frame_len() {
            return Err(Error::GeometryMismatch("mask size differs from grid frame".into()));
        }
        let stack_grid = Grid4D::with_origin([nu, nv, 1, self.slices.len()], [first.spacing[0], first.spacing[1], first.thickness], self.grid.tr, [0.0; 3], 0.0)?;
        let data: Vec<f64> = self.slices.iter().flat_map(|s| s.data.iter().copied()).collect();
        write_nifti(&Volume4D::from_data(stack_grid, data)?, &dir.join(SLICES_NII))?;
        let rows: Vec<SliceRow> = self.slices.iter().map(SliceRow::from_slice).collect();
        write_slice_csv(&dir.join(SLICES_CSV), &rows)?;
        write_kv(&dir.join(GRID_TXT), &grid_to_kv(&self.grid))?;
        let spatial = self.grid.spatial();
        let mask_grid = Grid4D::with_origin(
            [spatial.dims[0], spatial.dims[1], spatial.dims[2], 1],
            spatial.spacing,
            self.grid.tr,
            spatial.origin,
            self.grid.t0,
        )?;
        let mask_data = self.mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
        write_nifti_as(&Volume4D::from_data(mask_grid, mask_data)?, &dir.join(MASK_NII), Datatype::Int16)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let grid = grid_from_kv(&read_kv(&dir.join(GRID_TXT))?)?;
        let mask_vol = read_nifti(&dir.join(MASK_NII))?;
        if mask_vol.data.len() != grid.frame_len() {
            return Err(Error::GeometryMismatch(format!(
                "{MASK_NII} has {} voxels, grid frame has {}",
                mask_vol.data.len(),
                grid.frame_len()
            )));
        }
        let mask = mask_vol.data.iter().map(|&v| v != 0.0).collect();
        let stack = read_nifti(&dir.join(SLICES_NII))?;
        let rows = read_slice_csv(&dir.join(SLICES_CSV))?;
        let [nu, nv, nw, k] = stack.grid.dims;
        if nw != 1 || k != rows.len() {
            return Err(Error::GeometryMismatch(format!(
                "{SLICES_NII} has dims {:?} but {SLICES_CSV} lists {} slices",
                stack.grid.dims,
                rows.len()
            )));
        }
        let identity = RigidTransform::identity_about(grid.center());
        let slices = rows
            .iter()
            .enumerate()
            .map(|(i, r)| ScatteredSlice {
                data: stack.frame(i).to_vec(),
                dims: [nu, nv],
                volume_index: r.volume_index,
                slice_index: r.slice_index,
                acq_time: r.acq_time_s,
                pose: identity,
                spacing: [r.du_mm, r.dv_mm],
                thickness: r.thickness_mm,
                sigma: r.sigma,
                plane_origin: [r.origin_x_mm, r.origin_y_mm, r.origin_z_mm],
            })
            .collect::<Vec<_>>();
        for s in &slices {
            s.validate()?;
        }
        Ok(Self { grid, slices, mask })
    }
}
