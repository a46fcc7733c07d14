//! MAP reconstruction of the 4D volume from scattered slices.
//!
//! Objective:
//!
//! ```text
//! f(x) = Σ_k (1/σ_k²)·‖H_k x − S_k‖²  +  (α/2)·‖L x‖²
//! ```
//!
//! where `H_k` is the normalized slice operator and `L` stacks forward
//! differences along x, y, z and scaled time. Two solvers are provided:
//! conjugate gradients on the normal equations
//! `(Σ_k w_k H_kᵀH_k + (α/2)·LᵀL) x = Σ_k w_k H_kᵀ S_k`, and the plain
//! residual-backprojection loop `x ← x − step·∇f`.

pub mod baseline;
pub mod regularizer;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

pub use baseline::{interpolate_3d_baseline, BaselineResult};
pub use regularizer::Regularizer;

use crate::error::{Error, Result, Warning};
use crate::fill::fill_nearest;
use crate::forward::{splat, ScatteredSlice, SliceOperator};
use crate::geometry::{Grid4D, Volume4D};
use crate::psf::PsfParams;

/// Coverage guard for the normalized-scatter initialization.
pub const SCATTER_EPS: f64 = 1e-12;

/// Objective values below `OBJECTIVE_FLOOR · Σ w s²` are treated as zero
/// when forming relative changes.
pub const OBJECTIVE_FLOOR: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverKind {
    ConjugateGradient,
    IterativeBackprojection,
}

impl FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cg" | "conjugate-gradient" => Ok(Self::ConjugateGradient),
            "ib" | "iterative-backprojection" => Ok(Self::IterativeBackprojection),
            other => Err(Error::invalid(format!("unknown solver kind {other:?}"))),
        }
    }
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::ConjugateGradient => "cg",
            Self::IterativeBackprojection => "ib",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitKind {
    NormalizedScatter,
    Zeros,
}

impl FromStr for InitKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scatter" | "normalized-scatter" => Ok(Self::NormalizedScatter),
            "zeros" => Ok(Self::Zeros),
            other => Err(Error::invalid(format!("unknown init kind {other:?}"))),
        }
    }
}

impl fmt::Display for InitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::NormalizedScatter => "scatter",
            Self::Zeros => "zeros",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReconConfig {
    pub alpha: f64,
    pub max_iters: usize,
    /// Relative objective change that ends the iteration.
    pub tol: f64,
    pub kind: SolverKind,
    /// Relaxation for iterative backprojection, as a fraction of 1/Lipschitz.
    pub step_size: f64,
    pub init: InitKind,
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self {
            alpha: 0.01,
            max_iters: 50,
            tol: 1e-6,
            kind: SolverKind::ConjugateGradient,
            step_size: 1.0,
            init: InitKind::NormalizedScatter,
        }
    }
}

impl ReconConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::invalid(format!("tol must be > 0, got {}", self.tol)));
        }
        if self.max_iters < 1 {
            return Err(Error::invalid("max_iters must be >= 1"));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::invalid(format!("step_size must be > 0, got {}", self.step_size)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveTerms {
    pub total: f64,
    pub data_term: f64,
    pub reg_term: f64,
}

/// Per-iteration record of a reconstruction. Entry 0 is the initial estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconReport {
    pub iterations: usize,
    pub data_terms: Vec<f64>,
    pub reg_terms: Vec<f64>,
    pub totals: Vec<f64>,
    pub converged: bool,
    /// Relative objective change of the last step taken or attempted.
    pub final_relative_change: f64,
    pub objective_floor: f64,
    pub warnings: Vec<Warning>,
}

impl ReconReport {
    fn new(floor: f64) -> Self {
        Self {
            iterations: 0,
            data_terms: Vec::new(),
            reg_terms: Vec::new(),
            totals: Vec::new(),
            converged: false,
            final_relative_change: f64::INFINITY,
            objective_floor: floor,
            warnings: Vec::new(),
        }
    }

    fn record(&mut self, t: ObjectiveTerms) {
        self.data_terms.push(t.data_term);
        self.reg_terms.push(t.reg_term);
        self.totals.push(t.total);
    }

    pub fn final_objective(&self) -> f64 {
        self.totals.last().copied().unwrap_or(f64::NAN)
    }

    /// `iter,data_term,reg_term,total` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iter,data_term,reg_term,total\n");
        for i in 0..self.totals.len() {
            s.push_str(&format!(
                "{},{:e},{:e},{:e}\n",
                i, self.data_terms[i], self.reg_terms[i], self.totals[i]
            ));
        }
        s
    }
}

const CHUNK: usize = 1 << 15;

/// Dot product with a fixed reduction order.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.par_chunks(CHUNK)
        .zip(b.par_chunks(CHUNK))
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>())
        .collect::<Vec<f64>>()
        .iter()
        .sum()
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    y.par_chunks_mut(CHUNK)
        .zip(x.par_chunks(CHUNK))
        .for_each(|(yc, xc)| {
            for (yi, xi) in yc.iter_mut().zip(xc) {
                *yi += a * xi;
            }
        });
}

/// The reconstruction problem for one set of slices on one grid.
pub struct Problem<'a> {
    op: &'a SliceOperator,
    observations: Vec<&'a [f64]>,
    weights: Vec<f64>,
    reg: Regularizer,
    floor: f64,
}

impl<'a> Problem<'a> {
    pub fn new(op: &'a SliceOperator, slices: &'a [ScatteredSlice]) -> Result<Self> {
        if slices.len() != op.len() {
            return Err(Error::GeometryMismatch(format!(
                "{} slices for {} slice models",
                slices.len(),
                op.len()
            )));
        }
        for (s, m) in slices.iter().zip(&op.models) {
            if s.len() != m.len() {
                return Err(Error::GeometryMismatch("slice size differs from its model".into()));
            }
        }
        let time_scale = op.models.first().map_or(1.0, |m| m.psf.time_scale);
        let weights: Vec<f64> = slices.iter().map(|s| 1.0 / (s.sigma * s.sigma)).collect();
        let observations: Vec<&[f64]> = slices.iter().map(|s| s.data.as_slice()).collect();
        let energy: f64 = observations
            .iter()
            .zip(&weights)
            .zip(&op.models)
            .map(|((obs, w), m)| {
                w * obs
                    .iter()
                    .zip(&m.valid)
                    .filter(|(_, &ok)| ok)
                    .map(|(v, _)| v * v)
                    .sum::<f64>()
            })
            .sum();
        Ok(Self {
            op,
            observations,
            weights,
            reg: Regularizer::new(&op.grid, time_scale),
            floor: OBJECTIVE_FLOOR * energy.max(f64::MIN_POSITIVE),
        })
    }

    pub fn grid(&self) -> &Grid4D {
        &self.op.grid
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn regularizer(&self) -> &Regularizer {
        &self.reg
    }

    /// `H x − S` on valid pixels, zero elsewhere.
    fn residuals(&self, predictions: &[Vec<f64>]) -> Vec<Vec<f64>> {
        predictions
            .par_iter()
            .zip(self.observations.par_iter())
            .zip(self.op.models.par_iter())
            .map(|((pred, obs), m)| {
                pred.iter()
                    .zip(obs.iter())
                    .zip(&m.valid)
                    .map(|((p, s), &ok)| if ok { p - s } else { 0.0 })
                    .collect()
            })
            .collect()
    }

    fn data_term(&self, predictions: &[Vec<f64>]) -> f64 {
        predictions
            .par_iter()
            .zip(self.observations.par_iter())
            .zip(self.op.models.par_iter())
            .zip(self.weights.par_iter())
            .map(|(((pred, obs), m), w)| {
                w * pred
                    .iter()
                    .zip(obs.iter())
                    .zip(&m.valid)
                    .filter(|(_, &ok)| ok)
                    .map(|((p, s), _)| (p - s) * (p - s))
                    .sum::<f64>()
            })
            .collect::<Vec<f64>>()
            .iter()
            .sum()
    }

    fn terms_from(&self, predictions: &[Vec<f64>], x: &[f64], alpha: f64) -> ObjectiveTerms {
        let data_term = self.data_term(predictions);
        let reg_term = self.reg.value(x);
        ObjectiveTerms {
            total: data_term + 0.5 * alpha * reg_term,
            data_term,
            reg_term,
        }
    }

    pub fn objective(&self, x: &[f64], alpha: f64) -> ObjectiveTerms {
        let pred = self.op.forward(x);
        self.terms_from(&pred, x, alpha)
    }

    /// `2·Σ_k w_k H_kᵀ(H_k x − S_k) + α·LᵀL x`.
    pub fn gradient(&self, x: &[f64], alpha: f64) -> Vec<f64> {
        let pred = self.op.forward(x);
        self.gradient_from(&pred, x, alpha)
    }

    fn gradient_from(&self, predictions: &[Vec<f64>], x: &[f64], alpha: f64) -> Vec<f64> {
        let res = self.residuals(predictions);
        let scales: Vec<f64> = self.weights.iter().map(|w| 2.0 * w).collect();
        let mut g = self.op.adjoint(&res, Some(&scales));
        self.reg.apply_normal(x, alpha, &mut g);
        g
    }

    pub fn initial_estimate(&self, kind: InitKind) -> Vec<f64> {
        let n = self.op.grid.len();
        match kind {
            InitKind::Zeros => vec![0.0; n],
            InitKind::NormalizedScatter => {
                let obs: Vec<Vec<f64>> = self.observations.iter().map(|o| o.to_vec()).collect();
                let (num, den) = splat(self.op, &obs);
                let known: Vec<bool> = den.iter().map(|&d| d > SCATTER_EPS).collect();
                let mut x: Vec<f64> = num
                    .iter()
                    .zip(&den)
                    .map(|(a, &d)| if d > SCATTER_EPS { a / d } else { 0.0 })
                    .collect();
                fill_nearest(&mut x, &known, &self.op.grid.dims);
                x
            }
        }
    }

    /// Run the configured solver from `x0`.
    pub fn solve(&self, x0: Vec<f64>, config: &ReconConfig) -> Result<(Volume4D, ReconReport)> {
        config.validate()?;
        if x0.len() != self.op.grid.len() {
            return Err(Error::GeometryMismatch("initial estimate has wrong size".into()));
        }
        let (x, report) = match config.kind {
            SolverKind::ConjugateGradient => self.run_cg(x0, config),
            SolverKind::IterativeBackprojection => self.run_ib(x0, config),
        };
        for w in &report.warnings {
            log::warn!("{w}");
        }
        Ok((Volume4D::from_data(self.op.grid, x)?, report))
    }

    fn relative_change(&self, before: f64, after: f64) -> f64 {
        (before - after).abs() / before.max(self.floor)
    }

    fn run_cg(&self, mut x: Vec<f64>, cfg: &ReconConfig) -> (Vec<f64>, ReconReport) {
        let half_alpha = 0.5 * cfg.alpha;
        let mut report = ReconReport::new(self.floor);

        let mut hx = self.op.forward(&x);
        // r = b − A x = Σ w Hᵀ(S − Hx) − (α/2) LᵀL x
        let res = self.residuals(&hx);
        let neg_w: Vec<f64> = self.weights.iter().map(|w| -w).collect();
        let mut r = self.op.adjoint(&res, Some(&neg_w));
        self.reg.apply_normal(&x, -half_alpha, &mut r);
        let mut p = r.clone();
        let mut rr = dot(&r, &r);
        let mut f = self.terms_from(&hx, &x, cfg.alpha);
        report.record(f);

        for it in 1..=cfg.max_iters {
            if rr == 0.0 {
                report.converged = true;
                report.final_relative_change = 0.0;
                break;
            }
            let hp = self.op.forward(&p);
            let mut ap = self.op.adjoint(&hp, Some(&self.weights));
            self.reg.apply_normal(&p, half_alpha, &mut ap);
            let pap = dot(&p, &ap);
            if !(pap > 0.0) {
                // p lies in the null space of A: the gradient is numerically zero.
                report.converged = true;
                report.final_relative_change = 0.0;
                break;
            }
            let step = rr / pap;

            let mut x_new = x.clone();
            axpy(step, &p, &mut x_new);
            let mut hx_new = hx.clone();
            hx_new
                .par_iter_mut()
                .zip(hp.par_iter())
                .for_each(|(a, b)| axpy(step, b, a));
            let f_new = self.terms_from(&hx_new, &x_new, cfg.alpha);
            let rel = self.relative_change(f.total, f_new.total);
            report.final_relative_change = rel;
            if f_new.total > f.total {
                // Round-off at the bottom of the valley; keep the previous iterate.
                report.converged = rel < cfg.tol;
                if !report.converged {
                    report.warnings.push(Warning::NonMonotone { iteration: it });
                }
                break;
            }
            x = x_new;
            hx = hx_new;
            f = f_new;
            report.record(f);
            report.iterations = it;
            if rel < cfg.tol {
                report.converged = true;
                break;
            }

            axpy(-step, &ap, &mut r);
            let rr_new = dot(&r, &r);
            let beta = rr_new / rr;
            rr = rr_new;
            p.par_chunks_mut(CHUNK)
                .zip(r.par_chunks(CHUNK))
                .for_each(|(pc, rc)| {
                    for (pi, ri) in pc.iter_mut().zip(rc) {
                        *pi = ri + beta * *pi;
                    }
                });
        }
        (x, report)
    }

    /// Upper bound of the gradient's Lipschitz constant.
    pub fn lipschitz_bound(&self, alpha: f64) -> f64 {
        let col = self.op.weighted_column_sums(&self.weights);
        let data = col.iter().cloned().fold(0.0, f64::max);
        2.0 * (data + 0.5 * alpha * self.reg.spectral_bound())
    }

    fn run_ib(&self, mut x: Vec<f64>, cfg: &ReconConfig) -> (Vec<f64>, ReconReport) {
        let mut report = ReconReport::new(self.floor);
        let lip = self.lipschitz_bound(cfg.alpha);
        let step = if lip > 0.0 { cfg.step_size / lip } else { 0.0 };

        let mut hx = self.op.forward(&x);
        let mut f = self.terms_from(&hx, &x, cfg.alpha);
        report.record(f);
        let mut rises = 0;
        for it in 1..=cfg.max_iters {
            let g = self.gradient_from(&hx, &x, cfg.alpha);
            axpy(-step, &g, &mut x);
            hx = self.op.forward(&x);
            let f_new = self.terms_from(&hx, &x, cfg.alpha);
            let rel = self.relative_change(f.total, f_new.total);
            report.final_relative_change = rel;
            report.record(f_new);
            report.iterations = it;
            let rose = f_new.total > f.total;
            f = f_new;
            if rose {
                rises += 1;
                if rises >= 3 {
                    report.warnings.push(Warning::Diverged { iteration: it });
                    break;
                }
                continue;
            }
            rises = 0;
            if rel < cfg.tol {
                report.converged = true;
                break;
            }
        }
        (x, report)
    }
}

fn stacked(slices: &[ScatteredSlice], op: &SliceOperator) -> Result<()> {
    if slices.len() != op.len() {
        return Err(Error::GeometryMismatch(format!(
            "{} slices for {} slice models",
            slices.len(),
            op.len()
        )));
    }
    Ok(())
}

/// Objective value and its two terms.
pub fn objective(
    x: &Volume4D,
    slices: &[ScatteredSlice],
    op: &SliceOperator,
    alpha: f64,
) -> Result<ObjectiveTerms> {
    stacked(slices, op)?;
    if !x.grid.same_geometry(&op.grid) {
        return Err(Error::GeometryMismatch("volume grid differs from operator grid".into()));
    }
    Ok(Problem::new(op, slices)?.objective(&x.data, alpha))
}

pub fn objective_gradient(
    x: &Volume4D,
    slices: &[ScatteredSlice],
    op: &SliceOperator,
    alpha: f64,
) -> Result<Volume4D> {
    stacked(slices, op)?;
    if !x.grid.same_geometry(&op.grid) {
        return Err(Error::GeometryMismatch("volume grid differs from operator grid".into()));
    }
    let g = Problem::new(op, slices)?.gradient(&x.data, alpha);
    Volume4D::from_data(op.grid, g)
}

pub fn initial_estimate(
    slices: &[ScatteredSlice],
    op: &SliceOperator,
    kind: InitKind,
) -> Result<Volume4D> {
    let x = Problem::new(op, slices)?.initial_estimate(kind);
    Volume4D::from_data(op.grid, x)
}

/// Full reconstruction: build the operator, initialize, solve.
pub fn reconstruct(
    slices: &[ScatteredSlice],
    grid: &Grid4D,
    psf: &PsfParams,
    config: &ReconConfig,
) -> Result<(Volume4D, ReconReport)> {
    config.validate()?;
    if slices.is_empty() {
        return Err(Error::NoValidSlices("no slices supplied".into()));
    }
    let op = SliceOperator::from_slices(slices, grid, psf)?;
    if op.n_valid() == 0 {
        return Err(Error::NoValidSlices(
            "every slice pixel falls outside the reconstruction grid".into(),
        ));
    }
    let problem = Problem::new(&op, slices)?;
    let x0 = problem.initial_estimate(config.init);
    problem.solve(x0, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::RigidTransform;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(seed: u64) -> (Grid4D, PsfParams, Vec<ScatteredSlice>) {
        let grid = Grid4D::new([6, 5, 4, 3], [1.0, 1.0, 2.0], 1.5).unwrap();
        let psf = PsfParams::default_for_grid(&grid).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut slices = Vec::new();
        for l in 0..3 {
            for m in 0..4 {
                let pose = RigidTransform::from_params(
                    [
                        rng.random_range(-3.0..3.0),
                        rng.random_range(-3.0..3.0),
                        rng.random_range(-3.0..3.0),
                        rng.random_range(-0.5..0.5),
                        rng.random_range(-0.5..0.5),
                        rng.random_range(-0.5..0.5),
                    ],
                    grid.center(),
                );
                slices.push(ScatteredSlice {
                    data: (0..30).map(|_| rng.random_range(0.0..10.0)).collect(),
                    dims: [6, 5],
                    volume_index: l,
                    slice_index: m,
                    acq_time: l as f64 * 1.5 + (m as f64 + 0.5) * 1.5 / 4.0,
                    pose,
                    spacing: [1.0, 1.0],
                    thickness: 2.0,
                    sigma: 1.0 + 0.25 * m as f64,
                    plane_origin: [0.0, 0.0, 2.0 * m as f64],
                });
            }
        }
        (grid, psf, slices)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (grid, psf, slices) = setup(1);
        let op = SliceOperator::from_slices(&slices, &grid, &psf).unwrap();
        let p = Problem::new(&op, &slices).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<f64> = (0..grid.len()).map(|_| rng.random_range(0.0..5.0)).collect();
        let alpha = 0.3;
        let g = p.gradient(&x, alpha);
        let h = 1e-4;
        for idx in [0, 17, 59, 200, grid.len() - 1] {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[idx] += h;
            xm[idx] -= h;
            let fd = (p.objective(&xp, alpha).total - p.objective(&xm, alpha).total) / (2.0 * h);
            assert!((fd - g[idx]).abs() < 1e-5 * (1.0 + fd.abs()), "{idx}: {fd} vs {}", g[idx]);
        }
    }

    #[test]
    fn cg_is_monotone_and_reports_consistently() {
        let (grid, psf, slices) = setup(3);
        let cfg = ReconConfig { alpha: 0.05, max_iters: 40, tol: 1e-9, ..Default::default() };
        let (_, rep) = reconstruct(&slices, &grid, &psf, &cfg).unwrap();
        assert_eq!(rep.totals.len(), rep.iterations + 1);
        for w in rep.totals.windows(2) {
            assert!(w[1] <= w[0]);
        }
        assert_eq!(rep.converged, rep.final_relative_change < cfg.tol);
        assert!(rep.warnings.is_empty());
    }

    #[test]
    fn cg_and_ib_reach_the_same_minimum() {
        let (grid, psf, slices) = setup(4);
        let base = ReconConfig { alpha: 0.5, tol: 1e-12, ..Default::default() };
        let cg = ReconConfig { max_iters: 200, ..base };
        let ib = ReconConfig { max_iters: 4000, kind: SolverKind::IterativeBackprojection, ..base };
        let (a, ra) = reconstruct(&slices, &grid, &psf, &cg).unwrap();
        let (b, rb) = reconstruct(&slices, &grid, &psf, &ib).unwrap();
        let fa = ra.final_objective();
        let fb = rb.final_objective();
        assert!((fa - fb).abs() <= 1e-4 * fa, "{fa} vs {fb}");
        let diff = a.data.iter().zip(&b.data).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        assert!(diff < 0.05, "{diff}");
    }

    #[test]
    fn minimizer_has_vanishing_gradient() {
        let (grid, psf, slices) = setup(5);
        let cfg = ReconConfig { alpha: 0.2, max_iters: 300, tol: 1e-14, ..Default::default() };
        let (x, _) = reconstruct(&slices, &grid, &psf, &cfg).unwrap();
        let op = SliceOperator::from_slices(&slices, &grid, &psf).unwrap();
        let g = objective_gradient(&x, &slices, &op, cfg.alpha).unwrap();
        let g0 = objective_gradient(&Volume4D::zeros(grid), &slices, &op, cfg.alpha).unwrap();
        let n = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(n(&g.data) < 1e-5 * n(&g0.data));
    }

    #[test]
    fn ib_objective_decreases() {
        let (grid, psf, slices) = setup(6);
        let cfg = ReconConfig {
            kind: SolverKind::IterativeBackprojection,
            max_iters: 30,
            tol: 1e-12,
            ..Default::default()
        };
        let (_, rep) = reconstruct(&slices, &grid, &psf, &cfg).unwrap();
        for w in rep.totals.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12));
        }
    }

    #[test]
    fn scatter_init_reproduces_constants() {
        let (grid, psf, mut slices) = setup(7);
        for s in &mut slices {
            s.data.iter_mut().for_each(|v| *v = 3.5);
        }
        let op = SliceOperator::from_slices(&slices, &grid, &psf).unwrap();
        let x = initial_estimate(&slices, &op, InitKind::NormalizedScatter).unwrap();
        assert!(x.data.iter().all(|&v| (v - 3.5).abs() < 1e-12));
        let terms = objective(&x, &slices, &op, 1.0).unwrap();
        assert!(terms.total < 1e-20);
    }

    #[test]
    fn config_validation_and_parsing() {
        assert!(ReconConfig { alpha: -1.0, ..Default::default() }.validate().is_err());
        assert!(ReconConfig { tol: 0.0, ..Default::default() }.validate().is_err());
        assert!(ReconConfig { max_iters: 0, ..Default::default() }.validate().is_err());
        assert_eq!("ib".parse::<SolverKind>().unwrap(), SolverKind::IterativeBackprojection);
        assert_eq!(SolverKind::ConjugateGradient.to_string(), "cg");
        assert!("nope".parse::<InitKind>().is_err());
    }

    #[test]
    fn report_csv_has_one_row_per_record() {
        let (grid, psf, slices) = setup(8);
        let cfg = ReconConfig { max_iters: 3, tol: 1e-15, ..Default::default() };
        let (_, rep) = reconstruct(&slices, &grid, &psf, &cfg).unwrap();
        let csv = rep.to_csv();
        assert!(csv.starts_with("iter,data_term,reg_term,total\n"));
        assert_eq!(csv.lines().count(), rep.totals.len() + 1);
    }
}
