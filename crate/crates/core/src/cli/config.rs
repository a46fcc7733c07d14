//! Effective run configuration and its key-value form.

use crate::error::{Error, Result};
use crate::geometry::Grid4D;
use crate::io::bundle::parse_list;
use crate::io::KeyValues;
use crate::psf::PsfParams;
use crate::registration::RegistrationConfig;
use crate::simulator::{default_grid, PhantomKind, TrajectoryStyle};
use crate::solver::ReconConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub grid_dims: [usize; 4],
    pub grid_spacing: [f64; 3],
    pub tr: f64,
    pub phantom: PhantomKind,
    pub motion_style: TrajectoryStyle,
    pub max_rotation_deg: [f64; 3],
    pub max_translation_mm: [f64; 3],
    pub noise_sigma: f64,
    pub interleave: usize,
    /// Simulate from a 2x finer phantom rendering.
    pub fine: bool,
    /// Per-axis (σx, σy, σz, σt); `None` takes the grid-derived default.
    pub psf_sigma: [Option<f64>; 4],
    pub psf_truncation: f64,
    pub mask_threshold: f64,
    pub mask_dilation: usize,
    pub recon: ReconConfig,
    pub registration: RegistrationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            grid_dims: [32, 32, 12, 8],
            grid_spacing: [1.74, 1.74, 3.0],
            tr: 2.0,
            phantom: PhantomKind::CheckerboardPlusEllipsoid,
            motion_style: TrajectoryStyle::SmoothDrift,
            max_rotation_deg: [3.0; 3],
            max_translation_mm: [2.0; 3],
            noise_sigma: 2.0,
            interleave: 2,
            fine: true,
            psf_sigma: [None; 4],
            psf_truncation: 3.0,
            mask_threshold: 1.0,
            mask_dilation: 2,
            recon: ReconConfig::default(),
            registration: RegistrationConfig::default(),
        }
    }
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::invalid(format!("{key}: cannot parse {value:?}")))
}

fn auto_or(key: &str, value: &str) -> Result<Option<f64>> {
    if value == "auto" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn array<T: std::str::FromStr + Copy + Default, const N: usize>(key: &str, value: &str) -> Result<[T; N]> {
    let v: Vec<T> = parse_list(key, value, N)?;
    let mut out = [T::default(); N];
    out.copy_from_slice(&v);
    Ok(out)
}

impl RunConfig {
    /// Every key with its effective value.
    pub fn to_kv(&self) -> KeyValues {
        let r = &self.recon;
        let g = &self.registration;
        let sigma = |i: usize| self.psf_sigma[i].map_or_else(|| "auto".to_owned(), |v| v.to_string());
        [
            ("seed", self.seed.to_string()),
            ("grid.dims", join(&self.grid_dims)),
            ("grid.spacing_mm", join(&self.grid_spacing)),
            ("grid.tr_s", self.tr.to_string()),
            ("phantom.kind", self.phantom.to_string()),
            ("motion.style", self.motion_style.to_string()),
            ("motion.max_rotation_deg", join(&self.max_rotation_deg)),
            ("motion.max_translation_mm", join(&self.max_translation_mm)),
            ("acq.noise_sigma", self.noise_sigma.to_string()),
            ("acq.interleave", self.interleave.to_string()),
            ("acq.fine", self.fine.to_string()),
            ("psf.sigma_x", sigma(0)),
            ("psf.sigma_y", sigma(1)),
            ("psf.sigma_z", sigma(2)),
            ("psf.sigma_t", sigma(3)),
            ("psf.truncation_radius", self.psf_truncation.to_string()),
            ("mask.threshold", self.mask_threshold.to_string()),
            ("mask.dilation", self.mask_dilation.to_string()),
            ("solver.alpha", r.alpha.to_string()),
            ("solver.max_iters", r.max_iters.to_string()),
            ("solver.tol", r.tol.to_string()),
            ("solver.kind", r.kind.to_string()),
            ("solver.step_size", r.step_size.to_string()),
            ("solver.init", r.init.to_string()),
            ("reg.pyramid_levels", g.pyramid_levels.to_string()),
            ("reg.max_eval", g.max_eval.to_string()),
            ("reg.interleave_factor", g.interleave_factor.to_string()),
            ("reg.quiescence_window", g.quiescence_window.to_string()),
            ("reg.metric", g.metric.to_string()),
            ("reg.initial_step", g.initial_step.to_string()),
            ("reg.final_step", g.final_step.to_string()),
            ("reg.min_similarity", g.min_similarity.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_owned(), v))
        .collect()
    }

    /// Override fields named in `kv`; unknown keys are rejected.
    pub fn apply(&mut self, kv: &KeyValues) -> Result<()> {
        for (k, v) in kv {
            let v = v.as_str();
            match k.as_str() {
                "seed" => self.seed = parse(k, v)?,
                "grid.dims" => self.grid_dims = array(k, v)?,
                "grid.spacing_mm" => self.grid_spacing = array(k, v)?,
                "grid.tr_s" => self.tr = parse(k, v)?,
                "phantom.kind" => self.phantom = v.parse()?,
                "motion.style" => self.motion_style = v.parse()?,
                "motion.max_rotation_deg" => self.max_rotation_deg = array(k, v)?,
                "motion.max_translation_mm" => self.max_translation_mm = array(k, v)?,
                "acq.noise_sigma" => self.noise_sigma = parse(k, v)?,
                "acq.interleave" => self.interleave = parse(k, v)?,
                "acq.fine" => self.fine = parse(k, v)?,
                "psf.sigma_x" => self.psf_sigma[0] = auto_or(k, v)?,
                "psf.sigma_y" => self.psf_sigma[1] = auto_or(k, v)?,
                "psf.sigma_z" => self.psf_sigma[2] = auto_or(k, v)?,
                "psf.sigma_t" => self.psf_sigma[3] = auto_or(k, v)?,
                "psf.truncation_radius" => self.psf_truncation = parse(k, v)?,
                "mask.threshold" => self.mask_threshold = parse(k, v)?,
                "mask.dilation" => self.mask_dilation = parse(k, v)?,
                "solver.alpha" => self.recon.alpha = parse(k, v)?,
                "solver.max_iters" => self.recon.max_iters = parse(k, v)?,
                "solver.tol" => self.recon.tol = parse(k, v)?,
                "solver.kind" => self.recon.kind = v.parse()?,
                "solver.step_size" => self.recon.step_size = parse(k, v)?,
                "solver.init" => self.recon.init = v.parse()?,
                "reg.pyramid_levels" => self.registration.pyramid_levels = parse(k, v)?,
                "reg.max_eval" => self.registration.max_eval = parse(k, v)?,
                "reg.interleave_factor" => self.registration.interleave_factor = parse(k, v)?,
                "reg.quiescence_window" => self.registration.quiescence_window = parse(k, v)?,
                "reg.metric" => self.registration.metric = v.parse()?,
                "reg.initial_step" => self.registration.initial_step = parse(k, v)?,
                "reg.final_step" => self.registration.final_step = parse(k, v)?,
                "reg.min_similarity" => self.registration.min_similarity = parse(k, v)?,
                other => return Err(Error::invalid(format!("unknown config key {other:?}"))),
            }
        }
        Ok(())
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let mut c = Self::default();
        c.apply(kv)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid()?;
        self.recon.validate()?;
        self.registration.validate()?;
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::invalid("acq.noise_sigma must be finite and >= 0"));
        }
        if self.interleave < 1 {
            return Err(Error::invalid("acq.interleave must be >= 1"));
        }
        if !self.mask_threshold.is_finite() {
            return Err(Error::invalid("mask.threshold must be finite"));
        }
        let motion = self.max_rotation_deg.iter().chain(&self.max_translation_mm);
        if motion.into_iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(Error::invalid("motion maxima must be finite and >= 0"));
        }
        self.psf_for(&self.grid()?)?;
        Ok(())
    }

    /// Simulation grid: centered field of view, timepoints mid-volume.
    pub fn grid(&self) -> Result<Grid4D> {
        default_grid(self.grid_dims, self.grid_spacing, self.tr)
    }

    pub fn psf_for(&self, grid: &Grid4D) -> Result<PsfParams> {
        let mut psf = PsfParams::default_for_grid(grid)?;
        let [sx, sy, sz, st] = self.psf_sigma;
        psf.sigma_x = sx.unwrap_or(psf.sigma_x);
        psf.sigma_y = sy.unwrap_or(psf.sigma_y);
        psf.sigma_z = sz.unwrap_or(psf.sigma_z);
        psf.sigma_t = st.unwrap_or(psf.sigma_t);
        psf.truncation_radius = self.psf_truncation;
        psf.validate()?;
        Ok(psf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_kv() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!(RunConfig::from_kv(&c.to_kv()).unwrap(), c);
    }

    #[test]
    fn overrides_apply() {
        let kv = KeyValues::from([
            ("solver.alpha".to_owned(), "0.5".to_owned()),
            ("psf.sigma_t".to_owned(), "3".to_owned()),
            ("motion.style".to_owned(), "burst".to_owned()),
        ]);
        let c = RunConfig::from_kv(&kv).unwrap();
        assert_eq!(c.recon.alpha, 0.5);
        assert_eq!(c.psf_sigma, [None, None, None, Some(3.0)]);
        let psf = c.psf_for(&c.grid().unwrap()).unwrap();
        assert_eq!(psf.sigma_t, 3.0);
        assert_eq!(psf.sigma_x, 1.74 / crate::psf::FWHM_PER_SIGMA);
        assert_eq!(c.motion_style, TrajectoryStyle::Burst);
        assert_eq!(RunConfig::from_kv(&c.to_kv()).unwrap(), c);
    }

    #[test]
    fn bad_values_are_rejected() {
        for (k, v) in [
            ("bogus.key", "1"),
            ("grid.dims", "1,2,3"),
            ("solver.alpha", "-1"),
            ("solver.kind", "lbfgs"),
            ("acq.fine", "yes"),
            ("psf.sigma_z", "0"),
            ("psf.truncation_radius", "0.5"),
        ] {
            let kv = KeyValues::from([(k.to_owned(), v.to_owned())]);
            assert!(RunConfig::from_kv(&kv).is_err(), "{k} = {v}");
        }
    }
}
