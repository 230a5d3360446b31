//! The W̄ functional, its constrained infimum μ(g, τ), and the functional
//! inequalities (Sobolev, Bakry–Émery log-Sobolev) checked against it.
//!
//! Test functions are products u = c·u_s(θ)·u_f(x) of a sphere-factor
//! profile and a flat-factor part, integrated on the model's Gauss grids.
//! The minimizer works in the rescaled metric g/τ, where the sphere factor
//! has radius a/√τ and the flat factor is unchanged; μ(g, τ) = μ(g/τ, 1).

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::fe::FeLine;
use crate::models::{entropy_constant, ShrinkerModel};
use crate::quad::{sphere_area, GaussLegendre};

/// θ ↦ (v, ∂_θ v), or ρ ↦ (v, ∂_ρ v).
pub type Profile = Arc<dyn Fn(f64) -> (f64, f64) + Send + Sync>;
/// (x₁, |x⊥|) ↦ (v, |∇v|²).
pub type Planar = Arc<dyn Fn(f64, f64) -> (f64, f64) + Send + Sync>;

#[derive(Clone)]
pub enum FlatPart {
    Radial(Profile),
    Planar(Planar),
}

/// A product function c·u_s(θ)·u_f(x) on a catalog model. Missing parts
/// are taken to be 1.
#[derive(Clone)]
pub struct TestFunction {
    pub sphere: Option<Profile>,
    pub flat: Option<FlatPart>,
    pub scale: f64,
}

impl fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TestFunction")
            .field("sphere", &self.sphere.is_some())
            .field("flat", &self.flat.as_ref().map(|p| matches!(p, FlatPart::Radial(_))))
            .field("scale", &self.scale)
            .finish()
    }
}

impl TestFunction {
    pub fn new(sphere: Option<Profile>, flat: Option<FlatPart>) -> Self {
        Self {
            sphere,
            flat,
            scale: 1.0,
        }
    }

    pub fn constant() -> Self {
        Self::new(None, None)
    }

    pub fn radial(f: impl Fn(f64) -> (f64, f64) + Send + Sync + 'static) -> Self {
        Self::new(None, Some(FlatPart::Radial(Arc::new(f))))
    }

    pub fn on_sphere(f: impl Fn(f64) -> (f64, f64) + Send + Sync + 'static) -> Self {
        Self::new(Some(Arc::new(f)), None)
    }

    pub fn planar(f: impl Fn(f64, f64) -> (f64, f64) + Send + Sync + 'static) -> Self {
        Self::new(None, Some(FlatPart::Planar(Arc::new(f))))
    }

    /// e^{-f₀/2} with f₀ = f + μ + (n/2) log 4π.
    pub fn soliton(model: &ShrinkerModel) -> Result<Self> {
        let mu = entropy_constant(model)?;
        let n = model.n as f64;
        let mut u = Self::radial(|rho| {
            let v = (-rho * rho / 8.0).exp();
            (v, -rho / 4.0 * v)
        });
        u.scale = (4.0 * PI).powf(-n / 4.0) * (-(model.scalar_curvature() + mu) / 2.0).exp();
        Ok(u)
    }

    pub fn scaled(mut self, c: f64) -> Self {
        self.scale *= c;
        self
    }

    /// Rescale so that ∫u² dV = 1.
    pub fn normalized(&self, model: &ShrinkerModel) -> Result<Self> {
        let m = self.totals(model, 2.0, model.grid.panels * 2)?;
        if !(m.norm > 0.0 && m.norm.is_finite()) {
            return Err(Error::Precondition(format!("test function has L2 norm² {}", m.norm)));
        }
        Ok(self.clone().scaled(m.norm.sqrt().recip()))
    }

    pub fn norm_sq(&self, model: &ShrinkerModel) -> Result<f64> {
        Ok(self.checked_totals(model, 2.0)?.0.norm)
    }

    fn totals(&self, model: &ShrinkerModel, power: f64, panels: usize) -> Result<Moments> {
        let s = match (&self.sphere, model.has_sphere()) {
            (Some(p), true) => moments(&sphere_nodes(model, p, panels), power)?,
            _ => Moments::unit(model, true),
        };
        let f = match (&self.flat, model.has_flat()) {
            (Some(p), true) => moments(&flat_nodes(model, p, panels), power)?,
            _ => Moments::unit(model, false),
        };
        let c = self.scale;
        let c2 = c * c;
        Ok(Moments {
            norm: c2 * s.norm * f.norm,
            grad: c2 * (s.grad * f.norm + s.norm * f.grad),
            ent: c2 * (s.norm * f.norm * c2.ln() + s.ent * f.norm + s.norm * f.ent),
            power: c.abs().powf(power) * s.power * f.power,
        })
    }

    /// Totals at the model resolution and twice it; disagreement beyond
    /// 1e-6 means the function has features below the grid scale.
    fn checked_totals(&self, model: &ShrinkerModel, power: f64) -> Result<(Moments, Moments)> {
        let coarse = self.totals(model, power, model.grid.panels)?;
        let fine = self.totals(model, power, model.grid.panels * 2)?;
        let rel = (fine.norm - coarse.norm).abs() / fine.norm.abs().max(1e-300);
        if rel > 1e-6 {
            return Err(Error::Unresolved(format!(
                "test function changes by {rel:.2e} under grid refinement"
            )));
        }
        Ok((fine, coarse))
    }
}

#[derive(Clone, Copy, Debug, Default)]
struct Moments {
    norm: f64,
    grad: f64,
    ent: f64,
    power: f64,
}

impl Moments {
    /// Moments of the constant 1 on an absent factor (a point) or on a
    /// factor the function does not depend on.
    fn unit(model: &ShrinkerModel, sphere: bool) -> Self {
        let vol = if sphere && model.has_sphere() {
            sphere_area(model.sphere_dim()) * model.radius().powi(model.sphere_dim() as i32)
        } else if !sphere && model.has_flat() {
            f64::INFINITY
        } else {
            1.0
        };
        Self {
            norm: vol,
            grad: 0.0,
            ent: 0.0,
            power: vol,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Node {
    w: f64,
    v: f64,
    g2: f64,
    rho: f64,
}

fn gauss_nodes(a: f64, b: f64, panels: usize) -> Vec<(f64, f64)> {
    let rule = GaussLegendre::new(16);
    let h = (b - a) / panels as f64;
    let mut out = Vec::with_capacity(panels * 16);
    for p in 0..panels {
        let lo = a + h * p as f64;
        for (x, w) in rule.nodes.iter().zip(&rule.weights) {
            out.push((lo + 0.5 * h * (x + 1.0), 0.5 * h * w));
        }
    }
    out
}

fn sphere_nodes(model: &ShrinkerModel, p: &Profile, panels: usize) -> Vec<Node> {
    sphere_nodes_at(model.sphere_dim(), model.radius(), p, panels)
}

/// Nodes on a round S^k of the given radius; `rho` carries the angle.
fn sphere_nodes_at(k: usize, a: f64, p: &Profile, panels: usize) -> Vec<Node> {
    let area = sphere_area(k - 1);
    gauss_nodes(0.0, PI, panels)
        .into_iter()
        .map(|(th, w)| {
            let (v, dv) = p(th);
            Node {
                w: w * area * (a * th.sin()).powi(k as i32 - 1) * a,
                v,
                g2: dv * dv / (a * a),
                rho: th,
            }
        })
        .collect()
}

fn flat_nodes(model: &ShrinkerModel, part: &FlatPart, panels: usize) -> Vec<Node> {
    let m = model.flat_dim();
    let r = model.grid.rho_max;
    match part {
        FlatPart::Radial(p) => {
            let area = sphere_area(m - 1);
            gauss_nodes(0.0, r, panels)
                .into_iter()
                .map(|(rho, w)| {
                    let (v, dv) = p(rho);
                    Node {
                        w: w * area * rho.powi(m as i32 - 1),
                        v,
                        g2: dv * dv,
                        rho,
                    }
                })
                .collect()
        }
        FlatPart::Planar(p) => {
            let axial = gauss_nodes(-r, r, 2 * panels);
            if m == 1 {
                return axial
                    .into_iter()
                    .map(|(x, w)| {
                        let (v, g2) = p(x, 0.0);
                        Node { w, v, g2, rho: x.abs() }
                    })
                    .collect();
            }
            let area = sphere_area(m - 2);
            let radial = gauss_nodes(0.0, r, panels);
            let mut out = Vec::with_capacity(axial.len() * radial.len());
            for &(x, wx) in &axial {
                for &(q, wq) in &radial {
                    let (v, g2) = p(x, q);
                    out.push(Node {
                        w: wx * wq * area * q.powi(m as i32 - 2),
                        v,
                        g2,
                        rho: (x * x + q * q).sqrt(),
                    });
                }
            }
            out
        }
    }
}

fn xlogx2(v: f64) -> f64 {
    if v == 0.0 {
        0.0
    } else {
        let v2 = v * v;
        v2 * v2.max(1e-300).ln()
    }
}

fn moments(nodes: &[Node], power: f64) -> Result<Moments> {
    let mut m = Moments::default();
    for nd in nodes {
        if nd.v < 0.0 || !nd.v.is_finite() {
            return Err(Error::Precondition(format!(
                "test function must be finite and nonnegative, got {}",
                nd.v
            )));
        }
        m.norm += nd.w * nd.v * nd.v;
        m.grad += nd.w * nd.g2;
        m.ent += nd.w * xlogx2(nd.v);
        m.power += nd.w * nd.v.powf(power);
    }
    Ok(m)
}

/// A quadrature value with the difference between two resolutions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub value: f64,
    pub error: f64,
}

fn w_from_moments(model: &ShrinkerModel, m: &Moments, tau: f64) -> f64 {
    let n = model.n as f64;
    tau * (4.0 * m.grad + model.scalar_curvature() * m.norm) - m.ent - n - 0.5 * n * (4.0 * PI * tau).ln()
}

/// W̄(g, u, τ) = ∫ τ(4|∇u|² + Ru²) - u² log u² dV - n - (n/2) log(4πτ).
pub fn w_functional(model: &ShrinkerModel, u: &TestFunction, tau: f64) -> Result<Evaluation> {
    if !(tau > 0.0) {
        return Err(Error::Precondition(format!("tau must be positive, got {tau}")));
    }
    let (fine, coarse) = u.checked_totals(model, 2.0)?;
    if (fine.norm - 1.0).abs() > 1e-10 {
        return Err(Error::Precondition(format!(
            "test function is not normalized: ∫u² = {}",
            fine.norm
        )));
    }
    let value = w_from_moments(model, &fine, tau);
    let error = (value - w_from_moments(model, &coarse, tau)).abs();
    if error > 1e-8 {
        return Err(Error::Quadrature {
            achieved: error,
            requested: 1e-8,
        });
    }
    Ok(Evaluation { value, error })
}

/// ∫ τ(4|∇u|² + Ru²) dV for a normalized u.
pub fn scaled_energy(model: &ShrinkerModel, u: &TestFunction, tau: f64) -> Result<f64> {
    let (m, _) = u.checked_totals(model, 2.0)?;
    Ok(tau * (4.0 * m.grad + model.scalar_curvature() * m.norm))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SobolevSides {
    /// (∫u^{2n/(n-2)})^{(n-2)/n}
    pub lhs: f64,
    /// ∫ 4|∇u|² + Ru²
    pub rhs: f64,
    /// lhs / (e^{-2μ/n} rhs)
    pub ratio: f64,
}

pub fn sobolev_defect(model: &ShrinkerModel, u: &TestFunction) -> Result<SobolevSides> {
    if model.n < 3 {
        return Err(Error::Precondition("the Sobolev exponent needs n >= 3".into()));
    }
    let n = model.n as f64;
    let p = 2.0 * n / (n - 2.0);
    let (m, _) = u.checked_totals(model, p)?;
    let lhs = m.power.powf(2.0 / p);
    let rhs = 4.0 * m.grad + model.scalar_curvature() * m.norm;
    Ok(SobolevSides {
        lhs,
        rhs,
        ratio: lhs / ((-2.0 * model.mu / n).exp() * rhs),
    })
}

/// Sharp constant K_n of ‖u‖²_{2n/(n-2)} ≤ K_n ∫|∇u|² on R^n.
pub fn euclidean_sobolev_constant(n: usize) -> f64 {
    let nf = n as f64;
    (gamma(nf) / gamma(nf / 2.0)).powf(2.0 / nf) / (PI * nf * (nf - 2.0))
}

/// Sphere-factor conformal profiles × truncated flat bubbles.
pub fn sobolev_family(model: &ShrinkerModel) -> Vec<TestFunction> {
    let q = (model.n as f64 - 2.0) / 2.0;
    let mut spheres: Vec<Option<Profile>> = vec![None];
    if model.has_sphere() {
        for eps in [0.3, 0.6, 0.9] {
            spheres.push(Some(Arc::new(move |th: f64| {
                let b = 1.0 + eps * th.cos();
                (b.powf(-q), q * eps * th.sin() * b.powf(-q - 1.0))
            })));
        }
    }
    let mut flats: Vec<Option<FlatPart>> = vec![None];
    if model.has_flat() {
        let l = model.grid.rho_max;
        for lam in [0.5, 1.0, 2.0, 4.0] {
            flats.push(Some(FlatPart::Radial(Arc::new(move |rho: f64| {
                talenti_bubble(rho, lam, q, l)
            }))));
        }
    }
    let mut out = Vec::new();
    for s in &spheres {
        for f in &flats {
            if model.has_flat() && f.is_none() {
                continue;
            }
            out.push(TestFunction::new(s.clone(), f.clone()));
        }
    }
    out
}

/// (λ² + ρ²)^{-q} - (λ² + L²)^{-q} on [0, L), zero beyond.
pub fn talenti_bubble(rho: f64, lambda: f64, q: f64, cut: f64) -> (f64, f64) {
    if rho >= cut {
        return (0.0, 0.0);
    }
    let b = lambda * lambda + rho * rho;
    (
        b.powf(-q) - (lambda * lambda + cut * cut).powf(-q),
        -2.0 * q * rho * b.powf(-q - 1.0),
    )
}

/// Largest ratio lhs/(e^{-2μ/n} rhs) over [`sobolev_family`].
pub fn sobolev_constant(model: &ShrinkerModel) -> Result<f64> {
    let mut best: f64 = 0.0;
    for u in sobolev_family(model) {
        best = best.max(sobolev_defect(model, &u)?.ratio);
    }
    Ok(best)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BakryEmery {
    pub entropy: f64,
    pub fisher: f64,
    pub defect: f64,
}

/// Entropy and Fisher information of a density ρ against v₀ = e^{-f₀}dV.
pub fn bakry_emery_defect(model: &ShrinkerModel, density: &TestFunction) -> Result<BakryEmery> {
    let m = model.flat_dim() as f64;
    let vol = sphere_area(model.sphere_dim()) * model.radius().powi(model.sphere_dim() as i32);
    let c = (4.0 * PI).powf(-m / 2.0);
    entropy_fisher(
        model,
        density,
        model.has_sphere().then(|| model.radius()),
        &|_| 1.0 / vol,
        &|rho| c * (-rho * rho / 4.0).exp(),
    )
}

/// Entropy and Fisher information of a density against a product
/// probability measure: `sphere_density(θ)` on a sphere of the given radius
/// times `flat_density(|x|)` on the flat factor.
pub fn entropy_fisher(
    model: &ShrinkerModel,
    density: &TestFunction,
    sphere_radius: Option<f64>,
    sphere_density: &dyn Fn(f64) -> f64,
    flat_density: &dyn Fn(f64) -> f64,
) -> Result<BakryEmery> {
    let panels = model.grid.panels * 2;
    let mut parts = Vec::new();
    if let (Some(p), Some(a)) = (&density.sphere, sphere_radius) {
        parts.push(probability_moments(&sphere_nodes_at(model.sphere_dim(), a, p, panels), sphere_density)?);
    }
    if let (Some(p), true) = (&density.flat, model.has_flat()) {
        parts.push(probability_moments(&flat_nodes(model, p, panels), flat_density)?);
    }
    let c = density.scale;
    // mass, ∫ρ log ρ, Fisher of the product
    let (mut mass, mut plogp, mut fisher) = (1.0, 0.0, 0.0);
    for (pm, pb, pf) in parts {
        plogp = plogp * pm + mass * pb;
        fisher = fisher * pm + mass * pf;
        mass *= pm;
    }
    let (mass, plogp, fisher) = (c * mass, c * (plogp + mass * c.ln()), c * fisher);
    if !(mass > 0.0) {
        return Err(Error::Precondition("density has zero mass".into()));
    }
    let entropy = plogp - mass * mass.ln();
    Ok(BakryEmery {
        entropy,
        fisher,
        defect: fisher - entropy,
    })
}

fn probability_moments(nodes: &[Node], density: impl Fn(f64) -> f64) -> Result<(f64, f64, f64)> {
    let (mut m, mut b, mut f) = (0.0, 0.0, 0.0);
    for nd in nodes {
        if nd.v < 0.0 || !nd.v.is_finite() {
            return Err(Error::Precondition(format!("density must be nonnegative, got {}", nd.v)));
        }
        let w = nd.w * density(nd.rho);
        m += w * nd.v;
        if nd.v > 0.0 {
            b += w * nd.v * nd.v.ln();
            f += w * nd.g2 / nd.v;
        }
    }
    Ok((m, b, f))
}

/// Bounds e^{-2E/n} ≤ τ∫(4|∇u|² + Ru²) ≤ max{n², 2E} with
/// E = W̄ + n + (n/2) log(4π C).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sandwich {
    pub lower: f64,
    pub middle: f64,
    pub upper: f64,
    pub e: f64,
    pub holds: bool,
}

pub fn energy_sandwich(n: usize, w_value: f64, scaled_energy: f64, sobolev: f64) -> Sandwich {
    let nf = n as f64;
    let e = w_value + nf + 0.5 * nf * (4.0 * PI * sobolev).ln();
    let lower = (-2.0 * e / nf).exp();
    let upper = (nf * nf).max(2.0 * e);
    Sandwich {
        lower,
        middle: scaled_energy,
        upper,
        e,
        holds: lower <= scaled_energy && scaled_energy <= upper,
    }
}

// ---------------------------------------------------------------------------
// Minimizer

const EL_TOL: f64 = 1e-7;
const MAX_ITER: usize = 4000;
const STEP: f64 = 20.0;
const PLANE_STEP: f64 = 1.0;
const MAX_CELLS: usize = 1 << 17;
const LINE_H: f64 = 0.04;
const PLANE_H: f64 = 0.05;
const FLAT_TAIL: f64 = 16.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Domain {
    /// Geodesic ball B(p, r) at t = 0.
    Ball { radius: f64 },
    /// {F ≤ a} at t = 0.
    Sublevel { level: f64 },
}

/// Nodal values on a uniform grid of a rescaled coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodalFunction {
    pub h: f64,
    pub values: Vec<f64>,
}

impl NodalFunction {
    pub fn eval(&self, x: f64) -> f64 {
        let pos = x / self.h;
        let i = pos.floor() as usize;
        if i + 1 >= self.values.len() {
            return if i < self.values.len() { self.values[i] } else { 0.0 };
        }
        let frac = pos - i as f64;
        self.values[i] * (1.0 - frac) + self.values[i + 1] * frac
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaneFunction {
    pub h_s: f64,
    pub h_y: f64,
    pub cols: usize,
    /// Row-major in the sphere coordinate.
    pub values: Vec<f64>,
}

impl PlaneFunction {
    /// Bilinear interpolation at (s, y); zero outside the grid.
    pub fn eval(&self, s: f64, y: f64) -> f64 {
        let (fi, fj) = (s / self.h_s, y / self.h_y);
        let (i, j) = (fi.floor() as usize, fj.floor() as usize);
        let rows = self.values.len() / self.cols;
        if i + 1 >= rows || j + 1 >= self.cols {
            return 0.0;
        }
        let (a, b) = (fi - i as f64, fj - j as f64);
        let at = |r: usize, c: usize| self.values[r * self.cols + c];
        (1.0 - a) * ((1.0 - b) * at(i, j) + b * at(i, j + 1)) + a * ((1.0 - b) * at(i + 1, j) + b * at(i + 1, j + 1))
    }
}

/// Minimizer in the metric g/τ: sphere coordinate s = (a/√τ)θ, flat
/// coordinate y = ρ/√τ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Minimizer {
    pub tau: f64,
    pub n: usize,
    pub sphere_radius: f64,
    pub sphere: Option<NodalFunction>,
    pub flat: Option<NodalFunction>,
    pub plane: Option<PlaneFunction>,
}

impl Minimizer {
    /// u at (θ, ρ) in the original metric, normalized in L²(dV_g).
    pub fn eval(&self, theta: f64, rho: f64) -> f64 {
        let s = self.sphere_radius * theta;
        let y = rho / self.tau.sqrt();
        let v = if let Some(p) = &self.plane {
            p.eval(s, y)
        } else {
            self.sphere.as_ref().map_or(1.0, |f| f.eval(s)) * self.flat.as_ref().map_or(1.0, |f| f.eval(y))
        };
        self.tau.powf(-(self.n as f64) / 4.0) * v
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyResult {
    pub tau: f64,
    pub mu: f64,
    /// Estimated discretization error of `mu`.
    pub error_estimate: f64,
    /// Largest Euler–Lagrange residual over the solves.
    pub residual: f64,
    pub iterations: usize,
    /// τ∫(4|∇u|² + Ru²) for the minimizer.
    pub scaled_energy: f64,
    pub minimizer: Minimizer,
}

struct LineSolve {
    u: Vec<f64>,
    value: f64,
    energy: f64,
    residual: f64,
    iterations: usize,
}

fn log_potential(scalar: f64, u: &[f64]) -> Vec<f64> {
    u.iter().map(|v| scalar - 2.0 * v.max(1e-300).ln()).collect()
}

fn normalize(mass: &[f64], u: &mut [f64]) {
    let norm: f64 = mass.iter().zip(u.iter()).map(|(m, v)| m * v * v).sum::<f64>().sqrt();
    for v in u.iter_mut() {
        *v /= norm;
    }
}

/// Normalized gradient flow for -4u'' + (R - log u²)u = λu on one line.
fn solve_line(line: &FeLine, scalar: f64, dim: usize, init: &dyn Fn(f64) -> f64) -> Result<LineSolve> {
    let len = line.len();
    let mut u: Vec<f64> = line.nodes.iter().map(|&x| init(x)).collect();
    normalize(&line.mass, &mut u);
    let mut ku = vec![0.0; len];
    let mut residual = f64::INFINITY;
    for it in 0..MAX_ITER {
        let pot = log_potential(scalar, &u);
        line.apply_stiffness(&u, &mut ku);
        let hu: Vec<f64> = (0..len).map(|i| 4.0 * ku[i] / line.mass[i] + pot[i] * u[i]).collect();
        let lambda: f64 = (0..len).map(|i| line.mass[i] * u[i] * hu[i]).sum();
        residual = (0..len)
            .map(|i| line.mass[i] * (hu[i] - lambda * u[i]).powi(2))
            .sum::<f64>()
            .sqrt();
        if residual <= EL_TOL {
            let energy: f64 = 4.0 * ku.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>() + scalar;
            let ent: f64 = (0..len).map(|i| line.mass[i] * xlogx2(u[i])).sum();
            let d = dim as f64;
            return Ok(LineSolve {
                value: energy - ent - d - 0.5 * d * (4.0 * PI).ln(),
                u,
                energy,
                residual,
                iterations: it,
            });
        }
        let floor = pot.iter().cloned().fold(f64::INFINITY, f64::min);
        let shift: Vec<f64> = pot.iter().map(|p| STEP * (p - floor)).collect();
        let rhs: Vec<f64> = (0..len).map(|i| line.mass[i] * u[i]).collect();
        u = line.solve_shifted(1.0, 4.0 * STEP, Some(&shift), &rhs);
        for v in u.iter_mut() {
            *v = v.max(0.0);
        }
        normalize(&line.mass, &mut u);
    }
    Err(Error::NotConverged {
        iterations: MAX_ITER,
        residual,
    })
}

struct FactorSolve {
    value: f64,
    error: f64,
    energy: f64,
    residual: f64,
    iterations: usize,
    nodal: NodalFunction,
}

/// Solve on meshes of width h, h/2, h/4 and extrapolate in h²; the
/// difference of the two extrapolants is the error certificate.
fn richardson(
    build: &dyn Fn(f64) -> Result<FeLine>,
    h: f64,
    scalar: f64,
    dim: usize,
    inits: &[&dyn Fn(f64) -> f64],
) -> Result<FactorSolve> {
    let lines = [build(h)?, build(h / 2.0)?, build(h / 4.0)?];
    let mut best: Option<FactorSolve> = None;
    for init in inits {
        let solves = lines
            .iter()
            .map(|l| solve_line(l, scalar, dim, init))
            .collect::<Result<Vec<_>>>()?;
        let extrapolate = |f: &dyn Fn(&LineSolve) -> f64, i: usize| (4.0 * f(&solves[i + 1]) - f(&solves[i])) / 3.0;
        let value = extrapolate(&|s| s.value, 1);
        let fine = solves.last().expect("three levels");
        let cand = FactorSolve {
            value,
            error: (value - extrapolate(&|s| s.value, 0)).abs(),
            energy: extrapolate(&|s| s.energy, 1),
            residual: solves.iter().map(|s| s.residual).fold(0.0, f64::max),
            iterations: solves.iter().map(|s| s.iterations).sum(),
            nodal: NodalFunction {
                h: lines[2].h,
                values: fine.u.clone(),
            },
        };
        if best.as_ref().is_none_or(|b| cand.value < b.value) {
            best = Some(cand);
        }
    }
    Ok(best.expect("at least one initializer"))
}

fn check_cells(length: f64, h: f64) -> Result<usize> {
    let cells = (length / h - 1e-9).ceil() as usize;
    if cells > MAX_CELLS {
        return Err(Error::Unresolved(format!(
            "minimizer width is below the grid scale ({cells} cells needed)"
        )));
    }
    if length < 4.0 * h {
        return Err(Error::Precondition(format!(
            "domain of extent {length:.3e} is smaller than 4 grid cells"
        )));
    }
    Ok(cells)
}

fn sphere_weight(k: usize, b: f64) -> impl Fn(f64) -> f64 {
    let area = sphere_area(k - 1);
    move |s| area * (b * (s / b).sin()).abs().powi(k as i32 - 1)
}

fn sphere_line(k: usize, b: f64, extent: f64, cells: usize) -> FeLine {
    FeLine::new(extent, cells, sphere_weight(k, b), extent < PI * b - 1e-12)
}

fn flat_line(m: usize, extent: f64, cells: usize) -> FeLine {
    let area = sphere_area(m - 1);
    FeLine::new(extent, cells, move |y| area * y.powi(m as i32 - 1), true)
}

fn solve_sphere_factor(model: &ShrinkerModel, tau: f64, cap: Option<f64>) -> Result<FactorSolve> {
    let k = model.sphere_dim();
    let b = model.radius() / tau.sqrt();
    let extent = cap.map_or(PI * b, |c| c.min(PI * b));
    let base_cells = check_cells(extent, LINE_H)?.max(200);
    let h = extent / base_cells as f64;
    let build = move |hh: f64| -> Result<FeLine> {
        let cells = check_cells(extent, hh)?;
        Ok(sphere_line(k, b, extent, cells))
    };
    let scalar = tau * model.scalar_curvature();
    let constant = |_: f64| 1.0;
    let bump = |s: f64| (-s * s / 8.0).exp();
    if cap.is_some() && extent < PI * b {
        // Dirichlet cap: only the centered profile makes sense
        let arch = move |s: f64| (0.5 * PI * s / extent).cos().max(0.0) + 1e-3;
        return richardson(&build, h, scalar, k, &[&arch]);
    }
    richardson(&build, h, scalar, k, &[&constant, &bump])
}

fn solve_flat_factor(model: &ShrinkerModel, radius: Option<f64>) -> Result<FactorSolve> {
    let m = model.flat_dim();
    let gauss = |y: f64| (-y * y / 8.0).exp();
    let solve_to = |extent: f64| -> Result<FactorSolve> {
        check_cells(extent, LINE_H)?;
        let build = move |hh: f64| -> Result<FeLine> { Ok(flat_line(m, extent, check_cells(extent, hh)?)) };
        let h = extent / (extent / LINE_H - 1e-9).ceil();
        richardson(&build, h, 0.0, m, &[&gauss])
    };
    // grow the truncation until the value settles
    let mut extent = radius.map_or(8.0, |r| r.min(8.0));
    let mut prev = solve_to(extent)?;
    loop {
        let next_extent = match radius {
            Some(r) if extent >= r => return Ok(prev),
            Some(r) => (extent + 4.0).min(r),
            None => extent + 4.0,
        };
        let next = solve_to(next_extent)?;
        let settled = (next.value - prev.value).abs() <= EL_TOL;
        extent = next_extent;
        prev = next;
        if settled || extent > 64.0 {
            return Ok(prev);
        }
    }
}

/// μ(g, τ) = inf W̄(g, u, τ) over normalized u, optionally supported in a
/// domain.
pub fn minimize_mu(model: &ShrinkerModel, tau: f64, domain: Option<&Domain>) -> Result<EntropyResult> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::Precondition(format!("tau must be positive, got {tau}")));
    }
    let st = tau.sqrt();
    let (cap, flat_radius) = match domain {
        None => (None, None),
        Some(Domain::Sublevel { level }) => {
            let r0 = model.scalar_curvature();
            if *level <= r0 {
                return Err(Error::Precondition(format!(
                    "sublevel set {{F <= {level}}} is empty (min F = {r0})"
                )));
            }
            (None, model.has_flat().then(|| 2.0 * (level - r0).sqrt() / st))
        }
        Some(Domain::Ball { radius }) => {
            if !(*radius > 0.0) {
                return Err(Error::Precondition(format!("ball radius must be positive, got {radius}")));
            }
            if model.has_sphere() && model.has_flat() {
                return minimize_ball_plane(model, tau, radius / st);
            }
            if model.has_sphere() {
                (Some(radius / st), None)
            } else {
                (None, Some(radius / st))
            }
        }
    };
    let sphere = if model.has_sphere() {
        Some(solve_sphere_factor(model, tau, cap)?)
    } else {
        None
    };
    let flat = if model.has_flat() {
        Some(solve_flat_factor(model, flat_radius)?)
    } else {
        None
    };
    let parts: Vec<&FactorSolve> = sphere.iter().chain(flat.iter()).collect();
    Ok(EntropyResult {
        tau,
        mu: parts.iter().map(|p| p.value).sum(),
        error_estimate: parts.iter().map(|p| p.error).sum(),
        residual: parts.iter().map(|p| p.residual).fold(0.0, f64::max),
        iterations: parts.iter().map(|p| p.iterations).sum(),
        scaled_energy: parts.iter().map(|p| p.energy).sum(),
        minimizer: Minimizer {
            tau,
            n: model.n,
            sphere_radius: model.radius() / st,
            sphere: sphere.map(|s| s.nodal),
            flat: flat.map(|f| f.nodal),
            plane: None,
        },
    })
}

/// Tensor grid in (s, y) restricted to s² + y² < r².
struct Plane {
    s: FeLine,
    y: FeLine,
    active: Vec<bool>,
}

impl Plane {
    fn cols(&self) -> usize {
        self.y.len()
    }

    fn mass(&self, i: usize, j: usize) -> f64 {
        self.s.mass[i] * self.y.mass[j]
    }

    /// (K_s ⊗ M_y + M_s ⊗ K_y) u on active nodes.
    fn stiffness(&self, u: &[f64], out: &mut [f64]) {
        let (rows, cols) = (self.s.len(), self.cols());
        for i in 0..rows {
            for j in 0..cols {
                let idx = i * cols + j;
                if !self.active[idx] {
                    out[idx] = 0.0;
                    continue;
                }
                let mut ks = self.s.stiff_diag[i] * u[idx];
                if i > 0 {
                    ks += self.s.stiff_off[i - 1] * u[idx - cols];
                }
                if i + 1 < rows {
                    ks += self.s.stiff_off[i] * u[idx + cols];
                }
                let mut ky = self.y.stiff_diag[j] * u[idx];
                if j > 0 {
                    ky += self.y.stiff_off[j - 1] * u[idx - 1];
                }
                if j + 1 < cols {
                    ky += self.y.stiff_off[j] * u[idx + 1];
                }
                out[idx] = ks * self.y.mass[j] + self.s.mass[i] * ky;
            }
        }
    }

    fn diag_stiffness(&self, i: usize, j: usize) -> f64 {
        self.s.stiff_diag[i] * self.y.mass[j] + self.s.mass[i] * self.y.stiff_diag[j]
    }
}

/// Jacobi-preconditioned conjugate gradients for (M(1 + shift) + 4·PLANE_STEP·K) x = b.
fn plane_solve(plane: &Plane, shift: &[f64], b: &[f64], x0: &[f64]) -> Result<Vec<f64>> {
    let cols = plane.cols();
    let total = b.len();
    let apply = |u: &[f64], out: &mut [f64]| {
        plane.stiffness(u, out);
        for idx in 0..total {
            if plane.active[idx] {
                let (i, j) = (idx / cols, idx % cols);
                out[idx] = 4.0 * PLANE_STEP * out[idx] + plane.mass(i, j) * (1.0 + shift[idx]) * u[idx];
            }
        }
    };
    let diag: Vec<f64> = (0..total)
        .map(|idx| {
            let (i, j) = (idx / cols, idx % cols);
            if plane.active[idx] {
                4.0 * PLANE_STEP * plane.diag_stiffness(i, j) + plane.mass(i, j) * (1.0 + shift[idx])
            } else {
                1.0
            }
        })
        .collect();
    let mut x = x0.to_vec();
    let mut r = vec![0.0; total];
    apply(&x, &mut r);
    for idx in 0..total {
        r[idx] = if plane.active[idx] { b[idx] - r[idx] } else { 0.0 };
    }
    let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(a, d)| a / d).collect();
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let mut ap = vec![0.0; total];
    for _ in 0..20 * total.max(100) {
        if r.iter().map(|v| v * v).sum::<f64>().sqrt() <= 1e-11 * bnorm {
            return Ok(x);
        }
        apply(&p, &mut ap);
        let alpha = rz / p.iter().zip(&ap).map(|(a, b)| a * b).sum::<f64>();
        for idx in 0..total {
            x[idx] += alpha * p[idx];
            r[idx] -= alpha * ap[idx];
        }
        for idx in 0..total {
            z[idx] = r[idx] / diag[idx];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for idx in 0..total {
            p[idx] = z[idx] + beta * p[idx];
        }
    }
    Err(Error::NotConverged {
        iterations: 20 * total.max(100),
        residual: r.iter().map(|v| v * v).sum::<f64>().sqrt() / bnorm,
    })
}

struct PlaneSolve {
    u: Vec<f64>,
    value: f64,
    energy: f64,
    residual: f64,
    iterations: usize,
}

fn solve_plane(plane: &Plane, scalar: f64, n: usize, start: Option<&dyn Fn(f64, f64) -> f64>) -> Result<PlaneSolve> {
    let cols = plane.cols();
    let total = plane.s.len() * cols;
    let mass: Vec<f64> = (0..total)
        .map(|idx| if plane.active[idx] { plane.mass(idx / cols, idx % cols) } else { 0.0 })
        .collect();
    let r_s = plane.s.nodes.last().copied().unwrap_or(1.0);
    let r_y = plane.y.nodes.last().copied().unwrap_or(1.0);
    let mut u: Vec<f64> = (0..total)
        .map(|idx| {
            if !plane.active[idx] {
                return 0.0;
            }
            let (s, y) = (plane.s.nodes[idx / cols], plane.y.nodes[idx % cols]);
            if let Some(f) = start {
                return f(s, y).max(0.0) + 1e-12;
            }
            (-(s * s + y * y) / 8.0).exp() * (1.0 - (s / r_s).powi(2)).max(0.0) * (1.0 - (y / r_y).powi(2)).max(0.0)
                + 1e-6
        })
        .collect();
    for idx in 0..total {
        if !plane.active[idx] {
            u[idx] = 0.0;
        }
    }
    normalize(&mass, &mut u);
    let mut ku = vec![0.0; total];
    let mut residual = f64::INFINITY;
    for it in 0..MAX_ITER {
        let pot = log_potential(scalar, &u);
        plane.stiffness(&u, &mut ku);
        let mut lambda = 0.0;
        let mut hu = vec![0.0; total];
        for idx in 0..total {
            if plane.active[idx] {
                hu[idx] = 4.0 * ku[idx] / mass[idx] + pot[idx] * u[idx];
                lambda += mass[idx] * u[idx] * hu[idx];
            }
        }
        residual = (0..total)
            .filter(|&idx| plane.active[idx])
            .map(|idx| mass[idx] * (hu[idx] - lambda * u[idx]).powi(2))
            .sum::<f64>()
            .sqrt();
        if residual <= EL_TOL {
            let energy = 4.0 * ku.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>() + scalar;
            let ent: f64 = (0..total).map(|idx| mass[idx] * xlogx2(u[idx])).sum();
            let d = n as f64;
            return Ok(PlaneSolve {
                value: energy - ent - d - 0.5 * d * (4.0 * PI).ln(),
                u,
                energy,
                residual,
                iterations: it,
            });
        }
        let floor = (0..total)
            .filter(|&idx| plane.active[idx])
            .map(|idx| pot[idx])
            .fold(f64::INFINITY, f64::min);
        let shift: Vec<f64> = pot.iter().map(|p| PLANE_STEP * (p - floor)).collect();
        let rhs: Vec<f64> = (0..total).map(|idx| mass[idx] * u[idx]).collect();
        u = plane_solve(plane, &shift, &rhs, &u)?;
        for v in u.iter_mut() {
            *v = v.max(0.0);
        }
        normalize(&mass, &mut u);
    }
    Err(Error::NotConverged {
        iterations: MAX_ITER,
        residual,
    })
}

fn build_plane(model: &ShrinkerModel, b: f64, radius: f64, h: f64) -> Result<Plane> {
    let extent_s = (PI * b).min(radius);
    let extent_y = radius.min(FLAT_TAIL);
    // boundary nodes are kept; the mask imposes the Dirichlet condition
    let s = FeLine::new(extent_s, check_cells(extent_s, h)?, sphere_weight(model.sphere_dim(), b), false);
    let m = model.flat_dim();
    let area = sphere_area(m - 1);
    let y = FeLine::new(extent_y, check_cells(extent_y, h)?, move |x| area * x.powi(m as i32 - 1), false);
    let r2 = radius * radius * (1.0 - 1e-12);
    let truncated = extent_y < radius;
    let mut active = Vec::with_capacity(s.len() * y.len());
    for &si in &s.nodes {
        for &yj in &y.nodes {
            active.push(si * si + yj * yj < r2 && !(truncated && yj >= extent_y - 1e-12));
        }
    }
    Ok(Plane { s, y, active })
}

/// Ball on a cylinder: joint (s, y) problem on a masked tensor grid.
fn minimize_ball_plane(model: &ShrinkerModel, tau: f64, radius: f64) -> Result<EntropyResult> {
    let b = model.radius() / tau.sqrt();
    let scalar = tau * model.scalar_curvature();
    let h = PLANE_H.min(radius / 40.0);
    let coarse_plane = build_plane(model, b, radius, 2.0 * h)?;
    let fine_plane = build_plane(model, b, radius, h)?;
    let coarse = solve_plane(&coarse_plane, scalar, model.n, None)?;
    let snapshot = PlaneFunction {
        h_s: coarse_plane.s.h,
        h_y: coarse_plane.y.h,
        cols: coarse_plane.cols(),
        values: coarse.u.clone(),
    };
    let warm = |s: f64, y: f64| snapshot.eval(s, y);
    let fine = solve_plane(&fine_plane, scalar, model.n, Some(&warm))?;
    let mu = (4.0 * fine.value - coarse.value) / 3.0;
    Ok(EntropyResult {
        tau,
        mu,
        // the staircase boundary is only first order
        error_estimate: (fine.value - coarse.value).abs(),
        residual: fine.residual.max(coarse.residual),
        iterations: fine.iterations + coarse.iterations,
        scaled_energy: (4.0 * fine.energy - coarse.energy) / 3.0,
        minimizer: Minimizer {
            tau,
            n: model.n,
            sphere_radius: b,
            sphere: None,
            flat: None,
            plane: Some(PlaneFunction {
                h_s: fine_plane.s.h,
                h_y: fine_plane.y.h,
                cols: fine_plane.cols(),
                values: fine.u,
            }),
        },
    })
}

// ---------------------------------------------------------------------------
// Profiles and local entropy

pub fn log_spaced(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileNode {
    pub tau: f64,
    pub mu: f64,
    pub error_estimate: f64,
    pub residual: f64,
    pub iterations: usize,
    /// Minimizer value at the base point.
    pub peak: f64,
}

impl ProfileNode {
    fn from_result(r: &EntropyResult) -> Self {
        Self {
            tau: r.tau,
            mu: r.mu,
            error_estimate: r.error_estimate,
            residual: r.residual,
            iterations: r.iterations,
            peak: r.minimizer.eval(0.0, 0.0),
        }
    }

    /// Per-node certificate used as the monotonicity tolerance.
    pub fn certificate(&self) -> f64 {
        self.error_estimate.max(self.residual)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyProfile {
    pub model: String,
    pub nodes: Vec<ProfileNode>,
    pub at_one: ProfileNode,
    pub decreasing_below_one: bool,
    pub increasing_above_one: bool,
    /// μ(g, 1) is no larger than any node, up to certificates.
    pub min_at_one: bool,
    /// The lowest node is one of the two nodes bracketing τ = 1.
    pub argmin_brackets_one: bool,
    /// Largest monotonicity violation relative to its tolerance (≤ 1 passes).
    pub worst_violation: f64,
}

impl EntropyProfile {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["tau", "mu", "error_estimate", "residual", "iterations"])?;
        for nd in &self.nodes {
            w.write_record([
                format!("{:.12e}", nd.tau),
                format!("{:.12e}", nd.mu),
                format!("{:.3e}", nd.error_estimate),
                format!("{:.3e}", nd.residual),
                nd.iterations.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn mu_profile(model: &ShrinkerModel, taus: &[f64]) -> Result<EntropyProfile> {
    if let Some(t) = taus.iter().find(|t| !(1e-3..=1e3).contains(*t)) {
        return Err(Error::Precondition(format!("profile scale {t} outside [1e-3, 1e3]")));
    }
    let mut sorted = taus.to_vec();
    sorted.sort_by(f64::total_cmp);
    let results: Vec<Result<EntropyResult>> = sorted
        .par_iter()
        .map(|&tau| minimize_mu(model, tau, None))
        .collect();
    let nodes: Vec<ProfileNode> = results
        .into_iter()
        .map(|r| r.map(|r| ProfileNode::from_result(&r)))
        .collect::<Result<_>>()?;
    let at_one = ProfileNode::from_result(&minimize_mu(model, 1.0, None)?);

    let mut worst: f64 = 0.0;
    let mut dec = true;
    let mut inc = true;
    for pair in nodes.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        let tol = 2.0 * a.certificate().max(b.certificate());
        if b.tau <= 1.0 {
            let excess = b.mu - a.mu;
            worst = worst.max(excess / tol);
            dec &= excess <= tol;
        } else if a.tau >= 1.0 {
            let excess = a.mu - b.mu;
            worst = worst.max(excess / tol);
            inc &= excess <= tol;
        }
    }
    let min_at_one = nodes
        .iter()
        .all(|nd| at_one.mu <= nd.mu + 2.0 * nd.certificate().max(at_one.certificate()));
    let lowest = nodes
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.mu.total_cmp(&b.1.mu))
        .map(|(i, _)| i);
    let below = nodes.iter().rposition(|nd| nd.tau <= 1.0);
    let above = nodes.iter().position(|nd| nd.tau >= 1.0);
    let argmin_brackets_one = lowest.is_some() && (lowest == below || lowest == above);
    Ok(EntropyProfile {
        model: model.name(),
        nodes,
        at_one,
        decreasing_below_one: dec,
        increasing_above_one: inc,
        min_at_one,
        argmin_brackets_one,
        worst_violation: worst,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalNu {
    pub value: f64,
    pub argmin: f64,
    pub samples: Vec<(f64, f64)>,
}

/// ν(Ω, g, τ) = inf_{s ∈ (0, τ]} μ(Ω, g, s) over a log-spaced grid of nine
/// scales down to τ/100.
pub fn local_nu(model: &ShrinkerModel, domain: Option<&Domain>, tau: f64) -> Result<LocalNu> {
    if !(tau > 0.0) {
        return Err(Error::Precondition(format!("tau must be positive, got {tau}")));
    }
    let scales = log_spaced(tau * 1e-2, tau, 9);
    let values: Vec<Result<(f64, f64)>> = scales
        .par_iter()
        .map(|&s| minimize_mu(model, s, domain).map(|r| (s, r.mu)))
        .collect();
    let samples: Vec<(f64, f64)> = values.into_iter().collect::<Result<_>>()?;
    let (argmin, value) = samples
        .iter()
        .copied()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("nonempty scale grid");
    Ok(LocalNu { value, argmin, samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelKind;

    fn model(kind: ModelKind, n: usize, k: Option<usize>) -> ShrinkerModel {
        ShrinkerModel::new(kind, n, k).unwrap()
    }

    #[test]
    fn soliton_function_examples() {
        let g = model(ModelKind::Gaussian, 3, None);
        let u = TestFunction::soliton(&g).unwrap();
        let w = w_functional(&g, &u, 1.0).unwrap();
        assert!(w.value.abs() < 1e-10, "{w:?}");
        let s = model(ModelKind::Sphere, 2, None);
        let u = TestFunction::soliton(&s).unwrap();
        let w = w_functional(&s, &u, 1.0).unwrap();
        assert!((w.value - (2f64.ln() - 1.0)).abs() < 1e-10);
    }

    #[test]
    fn scale_identity() {
        let c = model(ModelKind::Cylinder, 4, Some(2));
        let u = TestFunction::soliton(&c).unwrap();
        let w1 = w_functional(&c, &u, 1.0).unwrap().value;
        let w2 = w_functional(&c, &u, 2.0).unwrap().value;
        let e = scaled_energy(&c, &u, 1.0).unwrap();
        assert!((w2 - w1 - (e - 2.0 * 2f64.ln())).abs() < 1e-10);
    }

    #[test]
    fn unnormalized_and_spiky_functions_are_rejected() {
        let g = model(ModelKind::Gaussian, 2, None);
        let u = TestFunction::soliton(&g).unwrap().scaled(2.0);
        assert!(matches!(w_functional(&g, &u, 1.0), Err(Error::Precondition(_))));
        let spike = TestFunction::radial(|r| {
            let v = (-(r / 1e-3).powi(2)).exp();
            (v, -2.0 * r / 1e-6 * v)
        });
        assert!(matches!(spike.normalized(&g).and_then(|u| w_functional(&g, &u, 1.0)), Err(Error::Unresolved(_))));
    }

    #[test]
    fn gaussian_minimizer() {
        for n in [2, 3, 4] {
            let g = model(ModelKind::Gaussian, n, None);
            for tau in [0.25, 1.0, 4.0] {
                let r = minimize_mu(&g, tau, None).unwrap();
                assert!(r.mu.abs() < 1e-6, "n={n} tau={tau} mu={} err={}", r.mu, r.error_estimate);
                assert!(r.residual <= EL_TOL);
            }
        }
    }

    #[test]
    fn gaussian_minimizer_profile() {
        let g = model(ModelKind::Gaussian, 3, None);
        let r = minimize_mu(&g, 1.0, None).unwrap();
        let u = TestFunction::soliton(&g).unwrap();
        let grid = g.flat_grid().unwrap();
        let FlatPart::Radial(p) = u.flat.clone().unwrap() else { unreachable!() };
        let l2 = grid.integrate(|rho| (r.minimizer.eval(0.0, rho) - u.scale * p(rho).0).powi(2));
        assert!(l2.sqrt() < 1e-4, "{}", l2.sqrt());
    }

    #[test]
    fn round_sphere_and_cylinder_at_unit_scale() {
        let target = 2f64.ln() - 1.0;
        for m in [model(ModelKind::Sphere, 2, None), model(ModelKind::Cylinder, 4, Some(2))] {
            let r = minimize_mu(&m, 1.0, None).unwrap();
            assert!((r.mu - target).abs() < 1e-6, "{} {}", m.name(), r.mu);
        }
    }

    #[test]
    fn sphere_rescaling_consistency() {
        // μ(g, τ) = μ(g/τ, 1): a sphere of radius a/√τ at unit scale
        let s = model(ModelKind::Sphere, 2, None);
        for tau in [0.25, 4.0] {
            let direct = minimize_mu(&s, tau, None).unwrap().mu;
            let mut rescaled = s.clone();
            rescaled.sphere_radius = Some(s.radius() / tau.sqrt());
            let via = minimize_mu(&rescaled, 1.0, None).unwrap().mu;
            assert!((direct - via).abs() < 1e-6, "{direct} {via}");
            assert!(direct >= minimize_mu(&s, 1.0, None).unwrap().mu - 1e-6);
        }
    }

    #[test]
    fn domain_restriction_raises_mu() {
        let g = model(ModelKind::Gaussian, 2, None);
        let full = minimize_mu(&g, 1.0, None).unwrap().mu;
        let ball = minimize_mu(&g, 1.0, Some(&Domain::Ball { radius: 3.0 })).unwrap().mu;
        let big = minimize_mu(&g, 1.0, Some(&Domain::Ball { radius: 8.0 })).unwrap().mu;
        assert!(ball > full && big >= full - 1e-7 && big < ball);
        assert!(minimize_mu(&g, 1.0, Some(&Domain::Ball { radius: 0.05 })).is_err());
        let c = model(ModelKind::Cylinder, 4, Some(2));
        let sub = minimize_mu(&c, 1.0, Some(&Domain::Sublevel { level: 3.0 })).unwrap().mu;
        assert!(sub >= minimize_mu(&c, 1.0, None).unwrap().mu);
    }

    #[test]
    fn cylinder_ball_plane_solver() {
        let c = model(ModelKind::Cylinder, 4, Some(2));
        let full = minimize_mu(&c, 1.0, None).unwrap().mu;
        let ball = minimize_mu(&c, 1.0, Some(&Domain::Ball { radius: 1.0 })).unwrap();
        assert!(ball.mu > full, "{} {}", ball.mu, full);
        assert!(ball.residual <= EL_TOL);
    }

    #[test]
    fn sobolev_on_flat_space_matches_sharp_constant() {
        let g = model(ModelKind::Gaussian, 4, None);
        let u = TestFunction::radial(|r| talenti_bubble(r, 1.0, 1.0, 24.0));
        let s = sobolev_defect(&g, &u).unwrap();
        // sharp constant via the sphere area: 4 / (n(n-2)|S^n|^{2/n})
        let k = 4.0 / (8.0 * sphere_area(4).sqrt());
        assert!((euclidean_sobolev_constant(4) - k).abs() < 1e-12);
        assert!((s.ratio / (k / 4.0) - 1.0).abs() < 1e-2, "{}", s.ratio / (k / 4.0));
        assert!(s.ratio <= k / 4.0);
        let s2 = model(ModelKind::Sphere, 2, None);
        assert!(sobolev_defect(&s2, &TestFunction::constant()).is_err());
    }

    #[test]
    fn bakry_emery_examples() {
        let g = model(ModelKind::Gaussian, 2, None);
        let one = bakry_emery_defect(&g, &TestFunction::constant()).unwrap();
        assert!(one.entropy.abs() < 1e-14 && one.fisher == 0.0);
        let tilt = TestFunction::planar(|x, _| (x.exp(), (2.0 * x).exp()));
        let be = bakry_emery_defect(&g, &tilt).unwrap();
        assert!(be.defect.abs() < 1e-6, "{be:?}");
        let c = model(ModelKind::Cylinder, 4, Some(2));
        let wave = TestFunction::on_sphere(|th| (1.0 + 0.5 * th.cos(), -0.5 * th.sin()));
        let be = bakry_emery_defect(&c, &wave).unwrap();
        assert!(be.defect > 1e-3, "{be:?}");
        assert!(bakry_emery_defect(&c, &TestFunction::constant().scaled(0.0)).is_err());
    }

    #[test]
    fn sandwich_holds_for_minimizers() {
        let g = model(ModelKind::Gaussian, 4, None);
        let c_rs = euclidean_sobolev_constant(4) / 4.0;
        for tau in [0.5, 1.0, 2.0] {
            let r = minimize_mu(&g, tau, None).unwrap();
            assert!(energy_sandwich(4, r.mu, r.scaled_energy, c_rs).holds);
            assert!((r.scaled_energy - 2.0).abs() < 1e-5);
        }
    }

    #[test]
    fn local_nu_on_full_model_is_mu() {
        let s = model(ModelKind::Sphere, 2, None);
        let nu = local_nu(&s, None, 1.0).unwrap();
        assert!((nu.value - minimize_mu(&s, 1.0, None).unwrap().mu).abs() < 1e-12);
        assert_eq!(nu.argmin, 1.0);
    }
}
