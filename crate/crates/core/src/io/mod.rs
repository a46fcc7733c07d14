//! File formats: NIfTI-1 volumes, CSV tables, key-value configs and
//! manifests, plus mask morphology.

pub mod bundle;
pub mod kv;
pub mod mask;
pub mod nifti;
pub mod tables;

pub use bundle::SeriesBundle;
pub use kv::{parse_kv, read_kv, write_kv, KeyValues, Manifest};
pub use mask::dilate_mask;
pub use nifti::{read_nifti, read_nifti_on, write_nifti, write_nifti_as, Datatype};
pub use tables::{apply_motion, read_motion_csv, write_motion_csv, MotionRow};
