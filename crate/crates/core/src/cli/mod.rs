//! Command-line front end: `simulate`, `register`, `reconstruct`, `evaluate`.
//!
//! Exit status is 0 on success, 1 on invalid input (usage, config values,
//! missing input files) and 2 on I/O or file-format failures.

pub mod config;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::error::{Error, Result};
use crate::forward::ScatteredSlice;
use crate::geometry::{Grid4D, Volume4D};
use crate::io::bundle::SeriesBundle;
use crate::io::nifti::{read_nifti_on, write_nifti, write_nifti_as, Datatype};
use crate::io::{apply_motion, dilate_mask, read_kv, read_motion_csv, write_motion_csv, Manifest, MotionRow};
use crate::metrics::{evaluate, stack_raw, threshold_mask, EvaluationReport};
use crate::psf::PsfParams;
use crate::registration::{find_quiescent_target, register_series, register_slices_hierarchical};
use crate::simulator::{
    generate_trajectory, simulate_acquisition, simulate_acquisition_fine, AcquisitionSpec, Phantom, PhantomSpec,
    TrajectorySpec,
};
use crate::solver::{baseline::interpolate_3d_baseline, reconstruct};

pub use config::RunConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_IO: i32 = 2;

pub const TRUTH_NII: &str = "truth.nii";
pub const TRUE_MOTION_CSV: &str = "motion_true.csv";
pub const MOTION_CSV: &str = "motion.csv";
pub const TARGET_NII: &str = "target.nii";
pub const REGISTRATION_CSV: &str = "registration.csv";
pub const RECON_NII: &str = "recon.nii";
pub const BASELINE_NII: &str = "baseline.nii";
pub const COVERAGE_NII: &str = "coverage.nii";
pub const OBJECTIVE_CSV: &str = "objective.csv";
pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_TXT: &str = "report.txt";

#[derive(Debug, Parser)]
#[command(name = "scatter4d", version, about = "Motion-compensated 4D reconstruction of scattered slices")]
pub struct Cli {
    /// Key-value config file; unspecified keys keep their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 0 uses all cores.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    #[arg(long, global = true, default_value = ".")]
    pub output_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a phantom series with known motion.
    Simulate,
    /// Estimate per-slice poses for a slice series.
    Register {
        #[arg(long)]
        input_dir: PathBuf,
        /// Motion table to start slice refinement from, skipping volume alignment.
        #[arg(long)]
        initial_poses: Option<PathBuf>,
    },
    /// Reconstruct the 4D series and the 3D baseline from posed slices.
    Reconstruct {
        #[arg(long)]
        input_dir: PathBuf,
        /// Motion table giving one pose per slice.
        #[arg(long)]
        poses: PathBuf,
    },
    /// Score raw, baseline and 4D series for sharpness and temporal std.
    Evaluate {
        /// Directory holding the slice series (and truth.nii when simulated).
        #[arg(long)]
        input_dir: PathBuf,
        /// Directory holding recon.nii and baseline.nii.
        #[arg(long)]
        recon_dir: PathBuf,
        #[arg(long, default_value = "subject")]
        subject: String,
    },
}

/// Run the CLI on `args` (program name first) and return the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_io() {
                EXIT_IO
            } else {
                EXIT_INVALID
            }
        }
    }
}

/// Effective config: defaults, then the config file, then `--seed`.
pub fn effective_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        // Config syntax errors are user input errors, not I/O failures.
        let kv = read_kv(path).map_err(|e| match e {
            Error::Parse { path, message } => Error::invalid(format!("{}: {message}", path.display())),
            other => other,
        })?;
        cfg.apply(&kv)?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn execute(cli: &Cli) -> Result<()> {
    let cfg = effective_config(cli)?;
    let out = &cli.output_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| Error::invalid(format!("cannot start thread pool: {e}")))?;
    let mut manifest = Manifest::new(match &cli.command {
        Command::Simulate => "simulate",
        Command::Register { .. } => "register",
        Command::Reconstruct { .. } => "reconstruct",
        Command::Evaluate { .. } => "evaluate",
    });
    manifest.add_config(&cfg.to_kv());
    manifest.set("threads", cli.threads);
    pool.install(|| match &cli.command {
        Command::Simulate => simulate(&cfg, out, &mut manifest),
        Command::Register {
            input_dir,
            initial_poses,
        } => register(&cfg, input_dir, initial_poses.as_deref(), out, &mut manifest),
        Command::Reconstruct { input_dir, poses } => reconstruct_stage(&cfg, input_dir, poses, out, &mut manifest),
        Command::Evaluate {
            input_dir,
            recon_dir,
            subject,
        } => evaluate_stage(input_dir, recon_dir, subject, out, &mut manifest),
    })?;
    manifest.write(out)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn file_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Resolved PSF widths, since config values may be `auto`.
fn record_psf(manifest: &mut Manifest, psf: &PsfParams) {
    manifest.set("resolved.psf.sigma_x", psf.sigma_x);
    manifest.set("resolved.psf.sigma_y", psf.sigma_y);
    manifest.set("resolved.psf.sigma_z", psf.sigma_z);
    manifest.set("resolved.psf.sigma_t", psf.sigma_t);
    manifest.set("resolved.psf.time_scale", psf.time_scale);
}

fn record_bundle_inputs(manifest: &mut Manifest, dir: &Path) -> Result<()> {
    for name in SeriesBundle::FILES {
        manifest.add_input(dir, name)?;
    }
    Ok(())
}

fn simulate(cfg: &RunConfig, out: &Path, manifest: &mut Manifest) -> Result<()> {
    let grid = cfg.grid()?;
    let psf = cfg.psf_for(&grid)?;
    record_psf(manifest, &psf);
    let phantom = Phantom::new(PhantomSpec::new(cfg.phantom, grid, cfg.seed))?;
    let (truth, _) = phantom.render(&grid)?;
    let n_slices = grid.dims[2] * grid.dims[3];
    let traj_spec = TrajectorySpec::new(
        cfg.max_rotation_deg,
        cfg.max_translation_mm,
        cfg.motion_style,
        cfg.seed.wrapping_add(1),
    );
    let trajectory = generate_trajectory(&traj_spec, n_slices, grid.center())?;
    let acq = AcquisitionSpec {
        noise_sigma: cfg.noise_sigma,
        interleave: cfg.interleave,
        seed: cfg.seed.wrapping_add(2),
    };
    let slices = if cfg.fine {
        simulate_acquisition_fine(&phantom, &grid, &trajectory, &psf, &acq)?
    } else {
        simulate_acquisition(&truth, &trajectory, &psf, &acq)?
    };
    let mask = dilate_mask(
        &threshold_mask(&truth.temporal_mean(), cfg.mask_threshold),
        grid.spatial().dims,
        cfg.mask_dilation,
    );
    let true_rows: Vec<MotionRow> = slices.iter().map(MotionRow::from_slice).collect();
    let bundle = SeriesBundle { grid, slices, mask };
    bundle.write(out)?;
    write_nifti(&truth, &out.join(TRUTH_NII))?;
    write_motion_csv(&out.join(TRUE_MOTION_CSV), &true_rows)?;
    manifest.set("slices", bundle.slices.len());
    for name in SeriesBundle::FILES.into_iter().chain([TRUTH_NII, TRUE_MOTION_CSV]) {
        manifest.add_file(out, name)?;
    }
    log::info!("simulated {} slices into {}", bundle.slices.len(), out.display());
    Ok(())
}

fn register(
    cfg: &RunConfig,
    input: &Path,
    initial_poses: Option<&Path>,
    out: &Path,
    manifest: &mut Manifest,
) -> Result<()> {
    let bundle = SeriesBundle::read(input)?;
    let center = bundle.grid.center();
    let psf = cfg.psf_for(&bundle.grid)?;
    record_psf(manifest, &psf);
    let raw = stack_raw(&bundle.slices, &bundle.grid)?;
    let mask = Some(bundle.mask.as_slice());
    let (target, target_start, reg) = match initial_poses {
        Some(path) => {
            let mut init = bundle.slices.clone();
            apply_motion(&mut init, &read_motion_csv(path)?, center)?;
            manifest.add_input(path.parent().unwrap_or(Path::new(".")), &file_name(path))?;
            let (target, start) = find_quiescent_target(&raw, cfg.registration.quiescence_window)?;
            let reg = register_slices_hierarchical(&init, &target, mask, &psf, &cfg.registration)?;
            (target, start, reg)
        }
        None => {
            let series = register_series(&bundle.slices, &raw, mask, &psf, &cfg.registration)?;
            for w in series.volume_poses.iter().filter_map(|v| v.warning.as_ref()) {
                log::warn!("{w}");
            }
            (series.target, series.target_start, series.slices)
        }
    };
    for w in &reg.warnings {
        log::warn!("{w}");
    }
    let rows: Vec<MotionRow> = bundle
        .slices
        .iter()
        .zip(&reg.poses)
        .map(|(s, pose)| {
            MotionRow::from_slice(&ScatteredSlice {
                pose: pose.recentered(center),
                ..s.clone()
            })
        })
        .collect();
    write_motion_csv(&out.join(MOTION_CSV), &rows)?;
    let tg = &target.grid;
    let target_grid = Grid4D::with_origin(
        [tg.dims[0], tg.dims[1], tg.dims[2], 1],
        tg.spacing,
        bundle.grid.tr,
        tg.origin,
        bundle.grid.t0,
    )?;
    write_nifti(&Volume4D::from_data(target_grid, target.data)?, &out.join(TARGET_NII))?;
    let mut table = String::from("slice_index,volume_index,score,coverage,fallback\n");
    for (k, s) in bundle.slices.iter().enumerate() {
        table.push_str(&format!(
            "{},{},{},{},{}\n",
            s.slice_index, s.volume_index, reg.scores[k], reg.coverage[k], reg.fallback[k]
        ));
    }
    write_text(&out.join(REGISTRATION_CSV), &table)?;
    record_bundle_inputs(manifest, input)?;
    manifest.set("target_start", target_start);
    manifest.set("fallback_slices", reg.fallback.iter().filter(|&&f| f).count());
    for name in [MOTION_CSV, REGISTRATION_CSV, TARGET_NII] {
        manifest.add_file(out, name)?;
    }
    Ok(())
}

fn reconstruct_stage(cfg: &RunConfig, input: &Path, poses: &Path, out: &Path, manifest: &mut Manifest) -> Result<()> {
    let rows = read_motion_csv(poses)?;
    let mut bundle = SeriesBundle::read(input)?;
    apply_motion(&mut bundle.slices, &rows, bundle.grid.center())?;
    let grid = bundle.grid;
    let psf = cfg.psf_for(&grid)?;
    record_psf(manifest, &psf);
    let (volume, report) = reconstruct(&bundle.slices, &grid, &psf, &cfg.recon)?;
    let baseline = interpolate_3d_baseline(&bundle.slices, &grid, Some(&bundle.mask))?;
    write_nifti(&volume, &out.join(RECON_NII))?;
    write_nifti(&baseline.volume, &out.join(BASELINE_NII))?;
    let coverage = baseline.coverage.iter().map(|&c| if c { 1.0 } else { 0.0 }).collect();
    write_nifti_as(&Volume4D::from_data(grid, coverage)?, &out.join(COVERAGE_NII), Datatype::Int16)?;
    write_text(&out.join(OBJECTIVE_CSV), &report.to_csv())?;
    record_bundle_inputs(manifest, input)?;
    manifest.add_input(poses.parent().unwrap_or(Path::new(".")), &file_name(poses))?;
    manifest.set("iterations", report.iterations);
    manifest.set("converged", report.converged);
    manifest.set("final_objective", report.final_objective());
    manifest.set("empty_timepoints", format!("{:?}", baseline.empty_timepoints));
    for name in [RECON_NII, BASELINE_NII, COVERAGE_NII, OBJECTIVE_CSV] {
        manifest.add_file(out, name)?;
    }
    Ok(())
}

fn evaluate_stage(input: &Path, recon_dir: &Path, subject: &str, out: &Path, manifest: &mut Manifest) -> Result<()> {
    let bundle = SeriesBundle::read(input)?;
    let raw = stack_raw(&bundle.slices, &bundle.grid)?;
    let ours = read_nifti_on(&recon_dir.join(RECON_NII), &bundle.grid)?;
    let linear = read_nifti_on(&recon_dir.join(BASELINE_NII), &bundle.grid)?;
    let truth_path = input.join(TRUTH_NII);
    let truth = if truth_path.exists() { Some(read_nifti_on(&truth_path, &bundle.grid)?) } else { None };
    let report = evaluate(&raw, &linear, &ours, &bundle.mask, truth.as_ref())?;
    write_text(
        &out.join(REPORT_CSV),
        &format!("{}\n{}\n", EvaluationReport::CSV_HEADER, report.table_row(subject)),
    )?;
    write_text(&out.join(REPORT_TXT), &report.key_values())?;
    record_bundle_inputs(manifest, input)?;
    manifest.add_input(recon_dir, RECON_NII)?;
    manifest.add_input(recon_dir, BASELINE_NII)?;
    if truth.is_some() {
        manifest.add_input(input, TRUTH_NII)?;
    }
    manifest.set("subject", subject);
    for name in [REPORT_CSV, REPORT_TXT] {
        manifest.add_file(out, name)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_flag_is_a_usage_error() {
        assert_eq!(run(["scatter4d", "--bogus", "simulate"]), EXIT_INVALID);
        assert_eq!(run(["scatter4d"]), EXIT_INVALID);
        assert_eq!(run(["scatter4d", "--help"]), EXIT_OK);
    }

    #[test]
    fn missing_config_file_is_invalid() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_str().unwrap();
        let code = run(["scatter4d", "--config", "/no/such/cfg.txt", "--output-dir", out, "simulate"]);
        assert_eq!(code, EXIT_INVALID);
    }

    #[test]
    fn unwritable_output_is_an_io_failure() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        std::fs::write(&blocker, b"x").unwrap();
        let out = blocker.join("sub");
        let code = run(["scatter4d", "--output-dir", out.to_str().unwrap(), "simulate"]);
        assert_eq!(code, EXIT_IO);
    }
}
