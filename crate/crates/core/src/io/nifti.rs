//! Single-file NIfTI-1 (`.nii`) reader and writer, little-endian only.
//!
//! Spatial origin is stored in both the qform (identity rotation) and the
//! sform; `pixdim[4]` holds TR and `toffset` holds the time of timepoint 0.

use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{Grid4D, Volume4D};

pub const HEADER_SIZE: usize = 348;
/// Header plus the 4-byte extension flag.
pub const DATA_OFFSET: usize = 352;
pub const MAGIC: [u8; 4] = *b"n+1\0";
pub const MAGIC_OFFSET: usize = 344;

const DIM_OFFSET: usize = 40;
const DATATYPE_OFFSET: usize = 70;
const BITPIX_OFFSET: usize = 72;
const PIXDIM_OFFSET: usize = 76;
const VOX_OFFSET_OFFSET: usize = 108;
const SCL_SLOPE_OFFSET: usize = 112;
const SCL_INTER_OFFSET: usize = 116;
const XYZT_UNITS_OFFSET: usize = 123;
const TOFFSET_OFFSET: usize = 136;
const DESCRIP_OFFSET: usize = 148;
const QFORM_CODE_OFFSET: usize = 252;
const SFORM_CODE_OFFSET: usize = 254;
const QOFFSET_OFFSET: usize = 268;
const SROW_OFFSET: usize = 280;

/// mm spatial units (2) plus seconds temporal units (8).
const XYZT_MM_SEC: u8 = 2 | 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Datatype {
    Int16,
    Float32,
}

impl Datatype {
    pub fn code(self) -> i16 {
        match self {
            Self::Int16 => 4,
            Self::Float32 => 16,
        }
    }

    pub fn bytes(self) -> usize {
        match self {
            Self::Int16 => 2,
            Self::Float32 => 4,
        }
    }

    fn from_code(code: i16) -> Result<Self> {
        match code {
            4 => Ok(Self::Int16),
            16 => Ok(Self::Float32),
            _ => Err(Error::UnsupportedDatatype {
                code,
                offset: DATATYPE_OFFSET,
            }),
        }
    }
}

fn put_i16(buf: &mut [u8], at: usize, v: i16) {
    buf[at..at + 2].copy_from_slice(&v.to_le_bytes());
}

fn put_i32(buf: &mut [u8], at: usize, v: i32) {
    buf[at..at + 4].copy_from_slice(&v.to_le_bytes());
}

fn put_f32(buf: &mut [u8], at: usize, v: f32) {
    buf[at..at + 4].copy_from_slice(&v.to_le_bytes());
}

fn get_i16(buf: &[u8], at: usize) -> i16 {
    i16::from_le_bytes([buf[at], buf[at + 1]])
}

fn get_i32(buf: &[u8], at: usize) -> i32 {
    i32::from_le_bytes(buf[at..at + 4].try_into().expect("4 bytes"))
}

fn get_f32(buf: &[u8], at: usize) -> f32 {
    f32::from_le_bytes(buf[at..at + 4].try_into().expect("4 bytes"))
}

/// Serialize `volume` as a NIfTI-1 byte stream. Int16 output rounds to the
/// nearest integer and rejects values outside the i16 range.
pub fn encode_nifti(volume: &Volume4D, datatype: Datatype) -> Result<Vec<u8>> {
    let g = &volume.grid;
    g.validate()?;
    if g.dims.iter().any(|&d| d > i16::MAX as usize) {
        return Err(Error::invalid(format!("dimension exceeds NIfTI-1 limit: {:?}", g.dims)));
    }
    let mut buf = vec![0u8; DATA_OFFSET + volume.data.len() * datatype.bytes()];
    put_i32(&mut buf, 0, HEADER_SIZE as i32);
    let dims = [4, g.dims[0], g.dims[1], g.dims[2], g.dims[3], 1, 1, 1];
    for (i, d) in dims.iter().enumerate() {
        put_i16(&mut buf, DIM_OFFSET + 2 * i, *d as i16);
    }
    put_i16(&mut buf, DATATYPE_OFFSET, datatype.code());
    put_i16(&mut buf, BITPIX_OFFSET, (datatype.bytes() * 8) as i16);
    let pixdim = [1.0, g.spacing[0], g.spacing[1], g.spacing[2], g.tr, 0.0, 0.0, 0.0];
    for (i, p) in pixdim.iter().enumerate() {
        put_f32(&mut buf, PIXDIM_OFFSET + 4 * i, *p as f32);
    }
    put_f32(&mut buf, VOX_OFFSET_OFFSET, DATA_OFFSET as f32);
    put_f32(&mut buf, SCL_SLOPE_OFFSET, 1.0);
    put_f32(&mut buf, SCL_INTER_OFFSET, 0.0);
    buf[XYZT_UNITS_OFFSET] = XYZT_MM_SEC;
    put_f32(&mut buf, TOFFSET_OFFSET, g.t0 as f32);
    let descrip = b"scatter4d";
    buf[DESCRIP_OFFSET..DESCRIP_OFFSET + descrip.len()].copy_from_slice(descrip);
    put_i16(&mut buf, QFORM_CODE_OFFSET, 1);
    put_i16(&mut buf, SFORM_CODE_OFFSET, 1);
    for a in 0..3 {
        put_f32(&mut buf, QOFFSET_OFFSET + 4 * a, g.origin[a] as f32);
        let row = SROW_OFFSET + 16 * a;
        put_f32(&mut buf, row + 4 * a, g.spacing[a] as f32);
        put_f32(&mut buf, row + 12, g.origin[a] as f32);
    }
    buf[MAGIC_OFFSET..MAGIC_OFFSET + 4].copy_from_slice(&MAGIC);

    let payload = &mut buf[DATA_OFFSET..];
    match datatype {
        Datatype::Float32 => {
            for (chunk, v) in payload.chunks_exact_mut(4).zip(&volume.data) {
                chunk.copy_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        Datatype::Int16 => {
            for (chunk, v) in payload.chunks_exact_mut(2).zip(&volume.data) {
                let r = v.round();
                if !(r >= i16::MIN as f64 && r <= i16::MAX as f64) {
                    return Err(Error::invalid(format!("value {v} does not fit int16")));
                }
                chunk.copy_from_slice(&(r as i16).to_le_bytes());
            }
        }
    }
    Ok(buf)
}

/// Parse a NIfTI-1 byte stream. Files with fewer than four dimensions are
/// read with the missing axes set to 1; a missing TR defaults to 1 s.
pub fn decode_nifti(bytes: &[u8]) -> Result<Volume4D> {
    if bytes.len() < HEADER_SIZE {
        return Err(Error::Truncated {
            offset: 0,
            expected: HEADER_SIZE,
            found: bytes.len(),
        });
    }
    let sizeof_hdr = get_i32(bytes, 0);
    if sizeof_hdr != HEADER_SIZE as i32 {
        if i32::from_be_bytes(bytes[0..4].try_into().expect("4 bytes")) == HEADER_SIZE as i32 {
            return Err(Error::BigEndian);
        }
        return Err(Error::BadHeader(format!("sizeof_hdr at offset 0 is {sizeof_hdr}, expected 348")));
    }
    let magic: [u8; 4] = bytes[MAGIC_OFFSET..MAGIC_OFFSET + 4].try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(Error::BadMagic {
            offset: MAGIC_OFFSET,
            found: magic,
        });
    }
    let datatype = Datatype::from_code(get_i16(bytes, DATATYPE_OFFSET))?;
    let ndim = get_i16(bytes, DIM_OFFSET);
    if !(1..=4).contains(&ndim) {
        return Err(Error::BadHeader(format!("dim[0] at offset {DIM_OFFSET} is {ndim}, expected 1..=4")));
    }
    let mut dims = [1usize; 4];
    for (a, d) in dims.iter_mut().enumerate().take(ndim as usize) {
        let v = get_i16(bytes, DIM_OFFSET + 2 * (a + 1));
        if v < 1 {
            return Err(Error::BadHeader(format!(
                "dim[{}] at offset {} is {v}",
                a + 1,
                DIM_OFFSET + 2 * (a + 1)
            )));
        }
        *d = v as usize;
    }
    let pix = |i: usize| get_f32(bytes, PIXDIM_OFFSET + 4 * i) as f64;
    let spacing = [pix(1), pix(2), pix(3)];
    let tr = if ndim >= 4 && pix(4) > 0.0 { pix(4) } else { 1.0 };
    let vox_offset = get_f32(bytes, VOX_OFFSET_OFFSET);
    if !(vox_offset >= DATA_OFFSET as f32 && vox_offset.fract() == 0.0) {
        return Err(Error::BadHeader(format!(
            "vox_offset at offset {VOX_OFFSET_OFFSET} is {vox_offset}, expected an integer >= 352"
        )));
    }
    let origin = if get_i16(bytes, QFORM_CODE_OFFSET) > 0 {
        std::array::from_fn(|a| get_f32(bytes, QOFFSET_OFFSET + 4 * a) as f64)
    } else if get_i16(bytes, SFORM_CODE_OFFSET) > 0 {
        std::array::from_fn(|a| get_f32(bytes, SROW_OFFSET + 16 * a + 12) as f64)
    } else {
        [0.0; 3]
    };
    let t0 = get_f32(bytes, TOFFSET_OFFSET) as f64;
    let grid = Grid4D::with_origin(dims, spacing, tr, origin, t0)?;

    let start = vox_offset as usize;
    let expected = grid.len() * datatype.bytes();
    let found = bytes.len().saturating_sub(start);
    if found < expected {
        return Err(Error::Truncated {
            offset: start,
            expected,
            found,
        });
    }
    let payload = &bytes[start..start + expected];
    let slope = get_f32(bytes, SCL_SLOPE_OFFSET) as f64;
    let inter = get_f32(bytes, SCL_INTER_OFFSET) as f64;
    // A zero or non-finite slope means unscaled.
    let scaled = slope != 0.0 && slope.is_finite() && !(slope == 1.0 && inter == 0.0);
    let scale = |raw: f64| if scaled { slope * raw + inter } else { raw };
    let data: Vec<f64> = match datatype {
        Datatype::Float32 => payload
            .chunks_exact(4)
            .map(|c| scale(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
            .collect(),
        Datatype::Int16 => payload
            .chunks_exact(2)
            .map(|c| scale(i16::from_le_bytes([c[0], c[1]]) as f64))
            .collect(),
    };
    Volume4D::from_data(grid, data)
}

pub fn write_nifti(volume: &Volume4D, path: &Path) -> Result<()> {
    write_nifti_as(volume, path, Datatype::Float32)
}

pub fn write_nifti_as(volume: &Volume4D, path: &Path, datatype: Datatype) -> Result<()> {
    let bytes = encode_nifti(volume, datatype)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_nifti(path: &Path) -> Result<Volume4D> {
    let bytes = match std::fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::MissingFile(path.to_path_buf()))
        }
        Err(e) => return Err(Error::io(path, e)),
    };
    decode_nifti(&bytes)
}

/// Read a volume expected to lie on `grid`. Header geometry is stored in
/// single precision, so it must match `grid` to f32 accuracy; the returned
/// volume carries `grid` exactly.
pub fn read_nifti_on(path: &Path, grid: &Grid4D) -> Result<Volume4D> {
    let v = read_nifti(path)?;
    let g = &v.grid;
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-5 * (1.0 + b.abs());
    let same = g.dims == grid.dims
        && (0..3).all(|a| close(g.spacing[a], grid.spacing[a]) && close(g.origin[a], grid.origin[a]))
        && close(g.tr, grid.tr)
        && close(g.t0, grid.t0);
    if !same {
        return Err(Error::GeometryMismatch(format!(
            "{} has dims {:?}, spacing {:?}, origin {:?}; expected dims {:?}, spacing {:?}, origin {:?}",
            path.display(),
            g.dims,
            g.spacing,
            g.origin,
            grid.dims,
            grid.spacing,
            grid.origin
        )));
    }
    Volume4D::from_data(*grid, v.data)
}
