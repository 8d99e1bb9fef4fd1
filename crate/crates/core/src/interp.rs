//! Periodic cubic Hermite interpolation on a uniform grid over `[0, 2π)`.

use std::f64::consts::TAU;

/// Vector-valued periodic curve stored as values and exact derivatives at
/// `N` uniform nodes. Evaluation reproduces node values exactly; the
/// interpolation error is `O(h^4)` in values and `O(h^3)` in derivatives.
#[derive(Debug, Clone)]
pub struct PeriodicHermite {
    dim: usize,
    n: usize,
    values: Vec<f64>,
    derivs: Vec<f64>,
}

impl PeriodicHermite {
    /// `values`/`derivs` are row-major `n × dim`; node `i` sits at `2π i / n`.
    pub fn new(dim: usize, values: Vec<f64>, derivs: Vec<f64>) -> Self {
        assert!(dim > 0 && values.len() % dim == 0 && values.len() == derivs.len());
        let n = values.len() / dim;
        assert!(n >= 2);
        Self {
            dim,
            n,
            values,
            derivs,
        }
    }

    /// Samples `f(psi) -> (value, derivative)` at the nodes.
    pub fn sample(dim: usize, n: usize, mut f: impl FnMut(f64, &mut [f64], &mut [f64])) -> Self {
        let mut values = vec![0.0; n * dim];
        let mut derivs = vec![0.0; n * dim];
        for i in 0..n {
            let psi = TAU * i as f64 / n as f64;
            f(
                psi,
                &mut values[i * dim..(i + 1) * dim],
                &mut derivs[i * dim..(i + 1) * dim],
            );
        }
        Self::new(dim, values, derivs)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_nodes(&self) -> usize {
        self.n
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn node_derivative(&self, i: usize) -> &[f64] {
        &self.derivs[i * self.dim..(i + 1) * self.dim]
    }

    fn locate(&self, psi: f64) -> (usize, f64, f64) {
        let h = TAU / self.n as f64;
        let u = psi.rem_euclid(TAU) / h;
        let i = (u.floor() as usize).min(self.n - 1);
        (i, u - i as f64, h)
    }

    pub fn eval_into(&self, psi: f64, out: &mut [f64]) {
        let (i, s, h) = self.locate(psi);
        let j = (i + 1) % self.n;
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        let d = self.dim;
        for k in 0..d {
            out[k] = h00 * self.values[i * d + k]
                + h * h10 * self.derivs[i * d + k]
                + h01 * self.values[j * d + k]
                + h * h11 * self.derivs[j * d + k];
        }
    }

    pub fn eval(&self, psi: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.eval_into(psi, &mut out);
        out
    }

    pub fn eval_derivative_into(&self, psi: f64, out: &mut [f64]) {
        let (i, s, h) = self.locate(psi);
        let j = (i + 1) % self.n;
        let s2 = s * s;
        let d00 = (6.0 * s2 - 6.0 * s) / h;
        let d10 = 3.0 * s2 - 4.0 * s + 1.0;
        let d01 = (-6.0 * s2 + 6.0 * s) / h;
        let d11 = 3.0 * s2 - 2.0 * s;
        let d = self.dim;
        for k in 0..d {
            out[k] = d00 * self.values[i * d + k]
                + d10 * self.derivs[i * d + k]
                + d01 * self.values[j * d + k]
                + d11 * self.derivs[j * d + k];
        }
    }

    pub fn eval_derivative(&self, psi: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.eval_derivative_into(psi, &mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproduces_nodes_and_converges() {
        let make = |n| {
            PeriodicHermite::sample(2, n, |psi, v, d| {
                v[0] = psi.sin();
                v[1] = (2.0 * psi).cos();
                d[0] = psi.cos();
                d[1] = -2.0 * (2.0 * psi).sin();
            })
        };
        let coarse = make(64);
        let fine = make(128);
        assert_eq!(coarse.eval(TAU * 5.0 / 64.0)[0], (TAU * 5.0 / 64.0).sin());
        let err = |p: &PeriodicHermite| {
            (0..997)
                .map(|k| {
                    let psi = 0.0063 * k as f64;
                    (p.eval(psi)[1] - (2.0 * psi).cos()).abs()
                })
                .fold(0.0, f64::max)
        };
        let (e1, e2) = (err(&coarse), err(&fine));
        assert!(e1 < 1e-5 && e2 < e1 / 12.0, "{e1} {e2}");
        let dpsi = 1.234;
        assert!((fine.eval_derivative(dpsi)[0] - dpsi.cos()).abs() < 1e-6);
        // wraps periodically
        assert!((fine.eval(dpsi + TAU)[0] - fine.eval(dpsi)[0]).abs() < 1e-14);
        assert!((fine.eval(-0.5)[0] - (-0.5f64).sin()).abs() < 1e-7);
    }
}
