//! Piecewise-linear finite elements on a uniform 1-D reduced coordinate
//! with a weight (area element), lumped mass.
//!
//! The discrete Dirichlet energy of nodal values u is uᵀKu, the discrete
//! integral of a nodal function h is Σ M_i h_i. Both the entropy minimizer
//! and the Crank–Nicolson heat solver are built on these two matrices.

use crate::quad::GaussLegendre;

#[derive(Clone, Debug)]
pub struct FeLine {
    pub nodes: Vec<f64>,
    pub h: f64,
    /// Lumped mass Σ_cells ∫ φ_i w.
    pub mass: Vec<f64>,
    pub stiff_diag: Vec<f64>,
    /// K_{i,i+1}; length nodes.len() - 1.
    pub stiff_off: Vec<f64>,
    /// The last node of the underlying mesh was removed (u = 0 there).
    pub dirichlet_end: bool,
}

impl FeLine {
    pub fn new(length: f64, cells: usize, weight: impl Fn(f64) -> f64, dirichlet_end: bool) -> Self {
        assert!(cells >= 2, "need at least two cells");
        let h = length / cells as f64;
        let rule = GaussLegendre::new(8);
        let all_nodes: Vec<f64> = (0..=cells).map(|i| h * i as f64).collect();
        let mut mass = vec![0.0; cells + 1];
        let mut diag = vec![0.0; cells + 1];
        let mut off = vec![0.0; cells];
        for c in 0..cells {
            let (lo, hi) = (all_nodes[c], all_nodes[c + 1]);
            let w_int = rule.integrate(lo, hi, &weight);
            let left = rule.integrate(lo, hi, |x| weight(x) * (hi - x) / h);
            let right = w_int - left;
            mass[c] += left;
            mass[c + 1] += right;
            let k = w_int / (h * h);
            diag[c] += k;
            diag[c + 1] += k;
            off[c] = -k;
        }
        let mut nodes = all_nodes;
        if dirichlet_end {
            nodes.pop();
            mass.pop();
            diag.pop();
            off.pop();
        }
        Self {
            nodes,
            h,
            mass,
            stiff_diag: diag,
            stiff_off: off,
            dirichlet_end,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Total measure covered by the nodes' lumped mass.
    pub fn total_mass(&self) -> f64 {
        self.mass.iter().sum()
    }

    pub fn integrate(&self, values: &[f64]) -> f64 {
        self.mass.iter().zip(values).map(|(m, v)| m * v).sum()
    }

    pub fn apply_stiffness(&self, u: &[f64], out: &mut [f64]) {
        let n = self.len();
        for i in 0..n {
            let mut acc = self.stiff_diag[i] * u[i];
            if i > 0 {
                acc += self.stiff_off[i - 1] * u[i - 1];
            }
            if i + 1 < n {
                acc += self.stiff_off[i] * u[i + 1];
            }
            out[i] = acc;
        }
    }

    pub fn energy(&self, u: &[f64]) -> f64 {
        let mut ku = vec![0.0; u.len()];
        self.apply_stiffness(u, &mut ku);
        ku.iter().zip(u).map(|(a, b)| a * b).sum()
    }

    /// Solve (α M + β K + M·diag(shift)) x = rhs.
    pub fn solve_shifted(&self, alpha: f64, beta: f64, shift: Option<&[f64]>, rhs: &[f64]) -> Vec<f64> {
        let n = self.len();
        let diag: Vec<f64> = (0..n)
            .map(|i| {
                alpha * self.mass[i]
                    + beta * self.stiff_diag[i]
                    + shift.map_or(0.0, |s| self.mass[i] * s[i])
            })
            .collect();
        let off: Vec<f64> = self.stiff_off.iter().map(|k| beta * k).collect();
        solve_symmetric_tridiagonal(&diag, &off, rhs)
    }

    /// Piecewise-linear interpolation; zero beyond a Dirichlet end.
    pub fn interpolate(&self, u: &[f64], x: f64) -> f64 {
        if x <= 0.0 {
            return u[0];
        }
        let pos = x / self.h;
        let i = pos.floor() as usize;
        let n = self.len();
        let value_at = |j: usize| if j < n { u[j] } else { 0.0 };
        if i + 1 >= n + usize::from(self.dirichlet_end) {
            return if self.dirichlet_end { 0.0 } else { u[n - 1] };
        }
        let frac = pos - i as f64;
        value_at(i) * (1.0 - frac) + value_at(i + 1) * frac
    }
}

/// Thomas algorithm for a symmetric tridiagonal system.
pub fn solve_symmetric_tridiagonal(diag: &[f64], off: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut beta = diag[0];
    d[0] = rhs[0] / beta;
    for i in 1..n {
        c[i - 1] = off[i - 1] / beta;
        beta = diag[i] - off[i - 1] * c[i - 1];
        d[i] = (rhs[i] - off[i - 1] * d[i - 1]) / beta;
    }
    for i in (0..n - 1).rev() {
        d[i] -= c[i] * d[i + 1];
    }
    d
}
