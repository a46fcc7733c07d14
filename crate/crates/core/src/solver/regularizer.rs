//! First-order Tikhonov term: squared forward differences along x, y, z and
//! scaled time. Differences stop at the last grid point on each axis, so
//! constants are in the null space.

use crate::geometry::Grid4D;

#[derive(Debug, Clone, Copy)]
pub struct Regularizer {
    dims: [usize; 4],
    /// Axis step lengths: dx, dy, dz in mm and TR·time_scale in mm-equivalents.
    step: [f64; 4],
}

impl Regularizer {
    pub fn new(grid: &Grid4D, time_scale: f64) -> Self {
        Self {
            dims: grid.dims,
            step: [
                grid.spacing[0],
                grid.spacing[1],
                grid.spacing[2],
                grid.tr * time_scale,
            ],
        }
    }

    fn strides(&self) -> [usize; 4] {
        let [nx, ny, nz, _] = self.dims;
        [1, nx, nx * ny, nx * ny * nz]
    }

    /// ‖L x‖².
    pub fn value(&self, x: &[f64]) -> f64 {
        let strides = self.strides();
        let mut total = 0.0;
        for a in 0..4 {
            let (st, n) = (strides[a], self.dims[a]);
            if n < 2 {
                continue;
            }
            let w = 1.0 / (self.step[a] * self.step[a]);
            let mut acc = 0.0;
            for (i, &v) in x.iter().enumerate() {
                if (i / st) % n + 1 < n {
                    let d = x[i + st] - v;
                    acc += d * d;
                }
            }
            total += w * acc;
        }
        total
    }

    /// out += scale · LᵀL x.
    pub fn apply_normal(&self, x: &[f64], scale: f64, out: &mut [f64]) {
        if scale == 0.0 {
            return;
        }
        let strides = self.strides();
        for a in 0..4 {
            let (st, n) = (strides[a], self.dims[a]);
            if n < 2 {
                continue;
            }
            let w = scale / (self.step[a] * self.step[a]);
            for (i, o) in out.iter_mut().enumerate() {
                let c = (i / st) % n;
                let mut g = 0.0;
                if c > 0 {
                    g += x[i] - x[i - st];
                }
                if c + 1 < n {
                    g += x[i] - x[i + st];
                }
                *o += w * g;
            }
        }
    }

    /// Upper bound on the largest eigenvalue of LᵀL (Gershgorin).
    pub fn spectral_bound(&self) -> f64 {
        (0..4)
            .filter(|&a| self.dims[a] > 1)
            .map(|a| 4.0 / (self.step[a] * self.step[a]))
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn reg() -> Regularizer {
        let g = Grid4D::new([5, 4, 3, 6], [1.74, 1.5, 3.0], 2.0).unwrap();
        Regularizer::new(&g, 1.5)
    }

    #[test]
    fn constants_are_free() {
        let r = reg();
        let x = vec![4.2; 5 * 4 * 3 * 6];
        assert_eq!(r.value(&x), 0.0);
        let mut out = vec![0.0; x.len()];
        r.apply_normal(&x, 1.0, &mut out);
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn normal_operator_is_adjoint_of_value() {
        // xᵀ LᵀL x = ‖Lx‖² and symmetry ⟨LᵀL x, y⟩ = ⟨x, LᵀL y⟩.
        let r = reg();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 5 * 4 * 3 * 6;
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut lx = vec![0.0; n];
        let mut ly = vec![0.0; n];
        r.apply_normal(&x, 1.0, &mut lx);
        r.apply_normal(&y, 1.0, &mut ly);
        let xlx: f64 = x.iter().zip(&lx).map(|(a, b)| a * b).sum();
        assert!((xlx - r.value(&x)).abs() < 1e-10 * xlx);
        let a: f64 = lx.iter().zip(&y).map(|(a, b)| a * b).sum();
        let b: f64 = x.iter().zip(&ly).map(|(a, b)| a * b).sum();
        assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn single_difference() {
        let g = Grid4D::new([2, 1, 1, 1], [2.0, 1.0, 1.0], 1.0).unwrap();
        let r = Regularizer::new(&g, 1.0);
        assert!((r.value(&[0.0, 1.0]) - 0.25).abs() < 1e-15);
    }
}
