//! CSV tables: per-slice motion parameters and the slice-stack sidecar.

use std::fs::File;
use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::ScatteredSlice;
use crate::geometry::{Point3, RigidTransform};

pub const MOTION_HEADER: [&str; 8] = [
    "slice_index",
    "volume_index",
    "rx_deg",
    "ry_deg",
    "rz_deg",
    "tx_mm",
    "ty_mm",
    "tz_mm",
];

pub const SLICE_HEADER: [&str; 10] = [
    "slice_index",
    "volume_index",
    "acq_time_s",
    "sigma",
    "du_mm",
    "dv_mm",
    "thickness_mm",
    "origin_x_mm",
    "origin_y_mm",
    "origin_z_mm",
];

/// One row of the motion table; rows follow acquisition order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionRow {
    pub slice_index: usize,
    pub volume_index: usize,
    pub rx_deg: f64,
    pub ry_deg: f64,
    pub rz_deg: f64,
    pub tx_mm: f64,
    pub ty_mm: f64,
    pub tz_mm: f64,
}

impl MotionRow {
    pub fn from_slice(slice: &ScatteredSlice) -> Self {
        let [rx_deg, ry_deg, rz_deg, tx_mm, ty_mm, tz_mm] = slice.pose.params();
        Self {
            slice_index: slice.slice_index,
            volume_index: slice.volume_index,
            rx_deg,
            ry_deg,
            rz_deg,
            tx_mm,
            ty_mm,
            tz_mm,
        }
    }

    pub fn params(&self) -> [f64; 6] {
        [self.rx_deg, self.ry_deg, self.rz_deg, self.tx_mm, self.ty_mm, self.tz_mm]
    }

    pub fn transform(&self, center: Point3) -> RigidTransform {
        RigidTransform::from_params(self.params(), center)
    }
}

/// Slice geometry and timing; row `k` describes stack index `k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SliceRow {
    pub slice_index: usize,
    pub volume_index: usize,
    pub acq_time_s: f64,
    pub sigma: f64,
    pub du_mm: f64,
    pub dv_mm: f64,
    pub thickness_mm: f64,
    pub origin_x_mm: f64,
    pub origin_y_mm: f64,
    pub origin_z_mm: f64,
}

impl SliceRow {
    pub fn from_slice(s: &ScatteredSlice) -> Self {
        Self {
            slice_index: s.slice_index,
            volume_index: s.volume_index,
            acq_time_s: s.acq_time,
            sigma: s.sigma,
            du_mm: s.spacing[0],
            dv_mm: s.spacing[1],
            thickness_mm: s.thickness,
            origin_x_mm: s.plane_origin[0],
            origin_y_mm: s.plane_origin[1],
            origin_z_mm: s.plane_origin[2],
        }
    }
}

fn write_rows<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    let csv_err = |e| Error::Csv {
        path: path.to_path_buf(),
        source: e,
    };
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(file);
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_rows<T: DeserializeOwned>(path: &Path, header: &[&str]) -> Result<Vec<T>> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::MissingFile(path.to_path_buf()))
        }
        Err(e) => return Err(Error::io(path, e)),
    };
    let csv_err = |e| Error::Csv {
        path: path.to_path_buf(),
        source: e,
    };
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let found: Vec<String> = r.headers().map_err(csv_err)?.iter().map(str::to_owned).collect();
    if found != header {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            message: format!("header {found:?} does not match expected {header:?}"),
        });
    }
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

pub fn write_motion_csv(path: &Path, rows: &[MotionRow]) -> Result<()> {
    write_rows(path, &MOTION_HEADER, rows)
}

pub fn read_motion_csv(path: &Path) -> Result<Vec<MotionRow>> {
    read_rows(path, &MOTION_HEADER)
}

pub fn write_slice_csv(path: &Path, rows: &[SliceRow]) -> Result<()> {
    write_rows(path, &SLICE_HEADER, rows)
}

pub fn read_slice_csv(path: &Path) -> Result<Vec<SliceRow>> {
    read_rows(path, &SLICE_HEADER)
}

/// Assign poses from a motion table to `slices`, row by row. Rows must name
/// the same (slice, volume) pairs in the same order.
pub fn apply_motion(slices: &mut [ScatteredSlice], rows: &[MotionRow], center: Point3) -> Result<()> {
    if rows.len() != slices.len() {
        return Err(Error::GeometryMismatch(format!(
            "motion table has {} rows for {} slices",
            rows.len(),
            slices.len()
        )));
    }
    for (k, (s, r)) in slices.iter_mut().zip(rows).enumerate() {
        if (s.slice_index, s.volume_index) != (r.slice_index, r.volume_index) {
            return Err(Error::GeometryMismatch(format!(
                "motion row {k} names slice {} of volume {}, expected slice {} of volume {}",
                r.slice_index, r.volume_index, s.slice_index, s.volume_index
            )));
        }
        if r.params().iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid(format!("motion row {k} has non-finite parameters")));
        }
        s.pose = r.transform(center);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(k: usize) -> MotionRow {
        MotionRow {
            slice_index: k % 3,
            volume_index: k / 3,
            rx_deg: 0.1 * k as f64,
            ry_deg: -27.9,
            rz_deg: 1.0 / 3.0,
            tx_mm: 11.9,
            ty_mm: 0.0,
            tz_mm: -1e-17,
        }
    }

    #[test]
    fn motion_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("motion.csv");
        let rows: Vec<MotionRow> = (0..6).map(row).collect();
        write_motion_csv(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("slice_index,volume_index,rx_deg,ry_deg,rz_deg,tx_mm,ty_mm,tz_mm\n"));
        assert!(!text.contains('\r'));
        assert_eq!(read_motion_csv(&path).unwrap(), rows);
    }

    #[test]
    fn wrong_header_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        std::fs::write(&path, "a,b\n1,2\n").unwrap();
        assert!(matches!(read_motion_csv(&path), Err(Error::Parse { .. })));
    }

    #[test]
    fn missing_table_names_the_file() {
        let err = read_motion_csv(Path::new("/no/such/poses.csv")).unwrap_err();
        assert!(matches!(err, Error::MissingFile(_)));
        assert!(err.to_string().contains("poses.csv"));
    }

    #[test]
    fn apply_motion_checks_order() {
        let slice = |m: usize, l: usize| ScatteredSlice {
            data: vec![0.0; 4],
            dims: [2, 2],
            volume_index: l,
            slice_index: m,
            acq_time: 0.0,
            pose: RigidTransform::identity(),
            spacing: [1.0, 1.0],
            thickness: 1.0,
            sigma: 1.0,
            plane_origin: [0.0; 3],
        };
        let mut slices = vec![slice(0, 0), slice(1, 0)];
        let rows = vec![row(0), row(1)];
        apply_motion(&mut slices, &rows, [1.0, 2.0, 3.0]).unwrap();
        assert_eq!(slices[1].pose.params(), rows[1].params());
        assert_eq!(slices[1].pose.center, [1.0, 2.0, 3.0]);
        let swapped = vec![row(1), row(0)];
        assert!(apply_motion(&mut slices, &swapped, [0.0; 3]).is_err());
        assert!(apply_motion(&mut slices, &rows[..1], [0.0; 3]).is_err());
    }
}
