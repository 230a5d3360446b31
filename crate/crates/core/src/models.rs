//! Catalog of explicit model shrinkers: the Gaussian soliton on R^n, the
//! round sphere S^n, and the cylinders S^k × R^{n-k}.
//!
//! Every model is a product of at most one round sphere factor and at most
//! one flat factor, so all geometry reduces to a polar angle θ on the sphere
//! factor and a radius ρ on the flat factor, measured from the base point p
//! (the minimum of f).

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::{self, GaussLegendre};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Gaussian,
    Sphere,
    Cylinder,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ModelKind::Gaussian => "gaussian",
            ModelKind::Sphere => "sphere",
            ModelKind::Cylinder => "cylinder",
        };
        f.write_str(s)
    }
}

/// Truncation and panel count of the reduced quadrature grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub rho_max: f64,
    pub panels: usize,
}

impl GridSpec {
    /// `rho_max = 12 sqrt(n)` keeps e^{-f(rho_max)} far below 1e-16.
    pub fn default_for(n: usize) -> Self {
        Self {
            rho_max: 12.0 * (n as f64).sqrt(),
            panels: 32,
        }
    }
}

/// Model definition as accepted from config files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
}

impl ModelSpec {
    pub fn build(&self) -> Result<ShrinkerModel> {
        let mut m = ShrinkerModel::new(self.kind, self.n, self.k)?;
        if let Some(grid) = self.grid {
            if !(grid.rho_max > 0.0) || grid.panels == 0 {
                return Err(Error::InvalidModel(format!(
                    "grid needs rho_max > 0 and panels > 0, got {grid:?}"
                )));
            }
            m.grid = grid;
            m.mu = entropy_constant(&m)?;
        }
        Ok(m)
    }
}

/// One catalog geometry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShrinkerModel {
    pub kind: ModelKind,
    pub n: usize,
    /// Sphere-factor dimension (cylinder only).
    pub k: Option<usize>,
    /// Radius of the sphere factor at t = 0, sqrt(2(k-1)).
    pub sphere_radius: Option<f64>,
    pub mu: f64,
    pub grid: GridSpec,
}

impl ShrinkerModel {
    pub fn new(kind: ModelKind, n: usize, k: Option<usize>) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidModel(format!("dimension n = {n} must be at least 2")));
        }
        let k = match (kind, k) {
            (ModelKind::Cylinder, Some(k)) if (2..n).contains(&k) => Some(k),
            (ModelKind::Cylinder, Some(k)) => {
                return Err(Error::InvalidModel(format!(
                    "cylinder sphere factor needs 2 <= k <= n-1, got k = {k}, n = {n}"
                )))
            }
            (ModelKind::Cylinder, None) => {
                return Err(Error::InvalidModel("cylinder requires k".into()))
            }
            (_, None) => None,
            (_, Some(k)) => {
                return Err(Error::InvalidModel(format!(
                    "k = {k} is only meaningful for cylinders"
                )))
            }
        };
        let sphere_dim = match kind {
            ModelKind::Gaussian => 0,
            ModelKind::Sphere => n,
            ModelKind::Cylinder => k.unwrap_or(0),
        };
        let sphere_radius = (sphere_dim > 0).then(|| (2.0 * (sphere_dim as f64 - 1.0)).sqrt());
        let mut model = Self {
            kind,
            n,
            k,
            sphere_radius,
            mu: 0.0,
            grid: GridSpec::default_for(n),
        };
        model.mu = entropy_constant(&model)?;
        Ok(model)
    }

    pub fn name(&self) -> String {
        match self.kind {
            ModelKind::Gaussian => format!("gaussian{}", self.n),
            ModelKind::Sphere => format!("sphere{}", self.n),
            ModelKind::Cylinder => format!("cylinder{}_{}", self.n, self.sphere_dim()),
        }
    }

    pub fn spec(&self) -> ModelSpec {
        ModelSpec {
            kind: self.kind,
            n: self.n,
            k: self.k,
            grid: Some(self.grid),
        }
    }

    pub fn sphere_dim(&self) -> usize {
        match self.kind {
            ModelKind::Gaussian => 0,
            ModelKind::Sphere => self.n,
            ModelKind::Cylinder => self.k.unwrap_or(0),
        }
    }

    pub fn flat_dim(&self) -> usize {
        self.n - self.sphere_dim()
    }

    pub fn has_sphere(&self) -> bool {
        self.sphere_dim() > 0
    }

    pub fn has_flat(&self) -> bool {
        self.flat_dim() > 0
    }

    pub fn is_flat(&self) -> bool {
        !self.has_sphere()
    }

    /// Sphere-factor radius at t = 0 (0 for the Gaussian).
    pub fn radius(&self) -> f64 {
        self.sphere_radius.unwrap_or(0.0)
    }

    /// Sectional curvature of sphere-factor planes at t = 0.
    pub fn sphere_curvature(&self) -> f64 {
        if self.has_sphere() {
            1.0 / (self.radius() * self.radius())
        } else {
            0.0
        }
    }

    /// Scalar curvature at t = 0 (constant on every catalog model).
    pub fn scalar_curvature(&self) -> f64 {
        let k = self.sphere_dim() as f64;
        k * (k - 1.0) * self.sphere_curvature()
    }

    /// f at reduced coordinates; only the flat radius enters.
    pub fn potential(&self, rho: f64) -> f64 {
        rho * rho / 4.0 + self.scalar_curvature()
    }

    /// Radial derivatives (f', f'') of the flat-factor profile.
    pub fn potential_derivatives(&self, rho: f64) -> (f64, f64) {
        if self.has_flat() {
            (rho / 2.0, 0.5)
        } else {
            (0.0, 0.0)
        }
    }

    pub fn grad_potential_sq(&self, rho: f64) -> f64 {
        let (d1, _) = self.potential_derivatives(rho);
        d1 * d1
    }

    /// Δf for a radial profile on the flat factor: f'' + (m-1) f'/ρ.
    pub fn laplacian_potential(&self, rho: f64) -> f64 {
        let m = self.flat_dim();
        if m == 0 {
            return 0.0;
        }
        let (d1, d2) = self.potential_derivatives(rho);
        let tangential = if rho > 0.0 { d1 / rho } else { d2 };
        d2 + (m as f64 - 1.0) * tangential
    }

    /// Norm of Rc + Hess f - g/2 in an orthonormal frame adapted to the
    /// product.
    pub fn shrinker_residual(&self, rho: f64) -> f64 {
        let k = self.sphere_dim() as f64;
        let m = self.flat_dim() as f64;
        let sphere = if k > 0.0 {
            (k - 1.0) * self.sphere_curvature() - 0.5
        } else {
            0.0
        };
        let (d1, d2) = self.potential_derivatives(rho);
        let radial = if m > 0.0 { d2 - 0.5 } else { 0.0 };
        let tangential = if m > 1.0 {
            (if rho > 0.0 { d1 / rho } else { d2 }) - 0.5
        } else {
            0.0
        };
        (k * sphere * sphere + radial * radial + (m - 1.0).max(0.0) * tangential * tangential)
            .sqrt()
    }

    /// R + |∇f|² - f.
    pub fn normalization_residual(&self, rho: f64) -> f64 {
        self.scalar_curvature() + self.grad_potential_sq(rho) - self.potential(rho)
    }

    /// R + Δf - n/2.
    pub fn trace_residual(&self, rho: f64) -> f64 {
        self.scalar_curvature() + self.laplacian_potential(rho) - self.n as f64 / 2.0
    }

    /// Distance between reduced positions (θ, ρ) and the base point.
    pub fn distance_to_base(&self, theta: f64, rho: f64) -> f64 {
        let a = self.radius();
        (a * a * theta * theta + rho * rho).sqrt()
    }

    /// Geodesic distance at time t in the pulled-back chart: the sphere
    /// factor shrinks by (1-t), the flat factor is static.
    pub fn distance(&self, x: &Point, y: &Point, t: f64) -> f64 {
        let gamma = x.sphere_angle(y);
        let a2 = self.radius().powi(2) * (1.0 - t);
        (a2 * gamma * gamma + x.flat_distance_sq(y)).sqrt()
    }

    pub fn base_point(&self) -> Point {
        Point::reduced(self, 0.0, 0.0)
    }

    /// Reduced quadrature grid for the sphere factor (polar angle) if any.
    pub fn sphere_grid(&self) -> Option<RadialGrid> {
        self.has_sphere().then(|| {
            RadialGrid::polar(self.sphere_dim(), self.radius(), self.grid.panels)
        })
    }

    /// Reduced quadrature grid for the flat factor (radius) if any.
    pub fn flat_grid(&self) -> Option<RadialGrid> {
        self.has_flat().then(|| {
            RadialGrid::euclidean(self.flat_dim(), self.grid.rho_max, self.grid.panels)
        })
    }

    /// Full curvature tensor R_ijkl in an orthonormal frame, sphere
    /// directions first. Sign convention: R_ijij is the sectional curvature.
    pub fn curvature_tensor(&self) -> Vec<f64> {
        let n = self.n;
        let k = self.sphere_dim();
        let kappa = self.sphere_curvature();
        let mut r = vec![0.0; n * n * n * n];
        let idx = |i: usize, j: usize, a: usize, b: usize| ((i * n + j) * n + a) * n + b;
        for i in 0..k {
            for j in 0..k {
                if i == j {
                    continue;
                }
                r[idx(i, j, i, j)] = kappa;
                r[idx(i, j, j, i)] = -kappa;
            }
        }
        r
    }

    /// Squared norms (|Rm|², |Rc|²) with full index sums.
    pub fn curvature_norms(&self) -> (f64, f64) {
        let n = self.n;
        let r = self.curvature_tensor();
        let rm2: f64 = r.iter().map(|v| v * v).sum();
        let mut rc2 = 0.0;
        for i in 0..n {
            for l in 0..n {
                let rc: f64 = (0..n).map(|j| r[((i * n + j) * n + l) * n + j]).sum();
                rc2 += rc * rc;
            }
        }
        (rm2, rc2)
    }
}

/// A point on a catalog model: unit vector on the sphere factor (embedded in
/// R^{k+1}) and a vector on the flat factor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub sphere: Vec<f64>,
    pub flat: Vec<f64>,
}

impl Point {
    /// Point at polar angle θ from the base point along the first sphere
    /// axis, and at radius ρ along the first flat axis.
    pub fn reduced(model: &ShrinkerModel, theta: f64, rho: f64) -> Self {
        let k = model.sphere_dim();
        let m = model.flat_dim();
        let mut sphere = vec![0.0; if k > 0 { k + 1 } else { 0 }];
        if k > 0 {
            sphere[0] = theta.cos();
            sphere[1] = theta.sin();
        }
        let mut flat = vec![0.0; m];
        if m > 0 {
            flat[0] = rho;
        }
        Self { sphere, flat }
    }

    /// Angle on the sphere factor between two points (0 without sphere).
    pub fn sphere_angle(&self, other: &Point) -> f64 {
        if self.sphere.is_empty() {
            return 0.0;
        }
        let dot: f64 = self.sphere.iter().zip(&other.sphere).map(|(a, b)| a * b).sum();
        dot.clamp(-1.0, 1.0).acos()
    }

    pub fn flat_distance_sq(&self, other: &Point) -> f64 {
        self.flat
            .iter()
            .zip(&other.flat)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    /// (θ, ρ) relative to the base point.
    pub fn polar(&self) -> (f64, f64) {
        let theta = if self.sphere.is_empty() {
            0.0
        } else {
            self.sphere[0].clamp(-1.0, 1.0).acos()
        };
        let rho = self.flat.iter().map(|v| v * v).sum::<f64>().sqrt();
        (theta, rho)
    }

    /// Uniformly random sphere direction and a flat vector of given norm.
    pub fn random<R: Rng>(model: &ShrinkerModel, rho: f64, rng: &mut R) -> Self {
        let k = model.sphere_dim();
        let m = model.flat_dim();
        let sphere = if k > 0 {
            random_unit(k + 1, rng)
        } else {
            Vec::new()
        };
        let flat = if m > 0 {
            random_unit(m, rng).into_iter().map(|v| v * rho).collect()
        } else {
            Vec::new()
        };
        Self { sphere, flat }
    }
}

fn random_unit<R: Rng>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-3 && norm <= 1.0 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CoordKind {
    /// Euclidean radius on a flat factor of the given dimension.
    Radius { dim: usize },
    /// Polar angle on a round sphere factor of the given dimension.
    Polar { dim: usize },
}

/// Composite Gauss–Legendre grid over one reduced coordinate with the area
/// element folded into the weights.
#[derive(Clone, Debug)]
pub struct RadialGrid {
    pub kind: CoordKind,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

const GRID_ORDER: usize = 16;

impl RadialGrid {
    pub fn euclidean(dim: usize, rho_max: f64, panels: usize) -> Self {
        let area = quad::sphere_area(dim - 1);
        Self::build(CoordKind::Radius { dim }, 0.0, rho_max, panels, |r| {
            area * r.powi(dim as i32 - 1)
        })
    }

    pub fn polar(dim: usize, radius: f64, panels: usize) -> Self {
        let area = quad::sphere_area(dim - 1);
        Self::build(CoordKind::Polar { dim }, 0.0, PI, panels, |th| {
            area * (radius * th.sin()).powi(dim as i32 - 1) * radius
        })
    }

    fn build(kind: CoordKind, a: f64, b: f64, panels: usize, element: impl Fn(f64) -> f64) -> Self {
        let rule = GaussLegendre::new(GRID_ORDER);
        let h = (b - a) / panels as f64;
        let mut nodes = Vec::with_capacity(panels * GRID_ORDER);
        let mut weights = Vec::with_capacity(panels * GRID_ORDER);
        for p in 0..panels {
            let lo = a + h * p as f64;
            for (x, w) in rule.nodes.iter().zip(&rule.weights) {
                let node = lo + 0.5 * h * (x + 1.0);
                nodes.push(node);
                weights.push(0.5 * h * w * element(node));
            }
        }
        Self {
            kind,
            nodes,
            weights,
        }
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

/// Integrate a product integrand g_s(θ)·g_f(ρ) over the model with panel
/// doubling on each factor.
fn product_integral(
    model: &ShrinkerModel,
    sphere_part: impl Fn(f64) -> f64,
    flat_part: impl Fn(f64) -> f64,
    rel_tol: f64,
) -> Result<(f64, f64)> {
    let mut value = 1.0;
    let mut rel_err = 0.0;
    if model.has_sphere() {
        let k = model.sphere_dim();
        let a = model.radius();
        let area = quad::sphere_area(k - 1);
        let r = quad::adaptive_from(0.0, PI, model.grid.panels / 4, 1 << 12, rel_tol, 0.0, |th| {
            area * (a * th.sin()).powi(k as i32 - 1) * a * sphere_part(th)
        })?;
        value *= r.value;
        rel_err += r.error / r.value.abs().max(f64::MIN_POSITIVE);
    }
    if model.has_flat() {
        let m = model.flat_dim();
        let area = quad::sphere_area(m - 1);
        let r = quad::adaptive_from(
            0.0,
            model.grid.rho_max,
            model.grid.panels / 4,
            1 << 12,
            rel_tol,
            0.0,
            |rho| area * rho.powi(m as i32 - 1) * flat_part(rho),
        )?;
        value *= r.value;
        rel_err += r.error / r.value.abs().max(f64::MIN_POSITIVE);
    }
    Ok((value, rel_err))
}

/// μ = log ∫ e^{-f} (4π)^{-n/2} dV by reduced quadrature.
pub fn entropy_constant(model: &ShrinkerModel) -> Result<f64> {
    let (integral, rel_err) = product_integral(model, |_| 1.0, |rho| (-rho * rho / 4.0).exp(), 1e-13)?;
    if rel_err > 1e-8 {
        return Err(Error::Quadrature {
            achieved: rel_err,
            requested: 1e-8,
        });
    }
    let n = model.n as f64;
    Ok(integral.ln() - model.scalar_curvature() - 0.5 * n * (4.0 * PI).ln())
}

/// Integral of e^{-λ f} over the model (used by the weighted curvature
/// integrals and the Carrillo–Ni checks).
pub fn weighted_volume(model: &ShrinkerModel, lambda: f64) -> Result<f64> {
    let (integral, _) = product_integral(model, |_| 1.0, |rho| (-lambda * rho * rho / 4.0).exp(), 1e-13)?;
    Ok(integral * (-lambda * model.scalar_curvature()).exp())
}

/// Volume of the geodesic ball B(p, r) at t = 0.
pub fn volume_ball(model: &ShrinkerModel, r: f64) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::Precondition(format!("ball radius must be positive, got {r}")));
    }
    if model.has_flat() && r > model.grid.rho_max {
        return Err(Error::OutOfGrid {
            requested: r,
            required_rho_max: r,
        });
    }
    let k = model.sphere_dim();
    let m = model.flat_dim();
    let a = model.radius();
    let flat_ball = |rho: f64| quad::ball_volume(m) * rho.powi(m as i32);
    let tol = 1e-12;
    if k == 0 {
        let area = quad::sphere_area(m - 1);
        return Ok(quad::adaptive(0.0, r, tol, 0.0, |s| area * s.powi(m as i32 - 1))?.value);
    }
    let sphere_area = quad::sphere_area(k - 1);
    let cap_element = |th: f64| sphere_area * (a * th.sin()).powi(k as i32 - 1) * a;
    if m == 0 {
        let th_max = (r / a).min(PI);
        return Ok(quad::adaptive(0.0, th_max, tol, 0.0, cap_element)?.value);
    }
    if r / a >= PI {
        let v = quad::adaptive(0.0, PI, tol, 0.0, |th| {
            cap_element(th) * flat_ball((r * r - a * a * th * th).max(0.0).sqrt())
        })?;
        Ok(v.value)
    } else {
        // θ = (r/a) sin φ removes the square-root endpoint behaviour.
        let v = quad::adaptive(0.0, PI / 2.0, tol, 0.0, |phi| {
            let th = r / a * phi.sin();
            let jac = r / a * phi.cos();
            cap_element(th) * flat_ball(r * phi.cos()) * jac
        })?;
        Ok(v.value)
    }
}

/// Eigenvalues of the curvature operator on 2-forms, ascending.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvatureSpectrum {
    pub eigenvalues: Vec<f64>,
}

impl CurvatureSpectrum {
    pub fn dimension(&self) -> usize {
        // c_n = n(n-1)/2
        let c = self.eigenvalues.len() as f64;
        ((1.0 + (1.0 + 8.0 * c).sqrt()) / 2.0).round() as usize
    }

    pub fn sum(&self) -> f64 {
        self.eigenvalues.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.eigenvalues.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

pub fn curvature_spectrum(model: &ShrinkerModel, point: &Point) -> Result<CurvatureSpectrum> {
    let (theta, rho) = point.polar();
    if !(0.0..=PI).contains(&theta) || (model.has_flat() && rho > model.grid.rho_max) {
        return Err(Error::OutOfGrid {
            requested: rho,
            required_rho_max: rho,
        });
    }
    let n = model.n;
    let r = model.curvature_tensor();
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .collect();
    let c = pairs.len();
    let op = DMatrix::from_fn(c, c, |p, q| {
        let (i, j) = pairs[p];
        let (k, l) = pairs[q];
        r[((i * n + j) * n + k) * n + l]
    });
    let mut eigenvalues: Vec<f64> = SymmetricEigen::new(op).eigenvalues.iter().copied().collect();
    eigenvalues.sort_by(|a, b| a.total_cmp(b));
    Ok(CurvatureSpectrum { eigenvalues })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigidityOutcome {
    pub passes: bool,
    pub epsilon: f64,
    pub threshold: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

/// ε(n) = 1/((1+√2)(c_n - 2)).
pub fn rigidity_epsilon(n: usize) -> Result<f64> {
    let c = n * (n.saturating_sub(1)) / 2;
    if c <= 2 {
        return Err(Error::RigidityUndefined(n));
    }
    Ok(1.0 / ((1.0 + 2f64.sqrt()) * (c as f64 - 2.0)))
}

/// Evaluate λ₂ ≥ -ε λ₁²/|R - 2λ₁|. Vacuous when λ₁ ≥ 0; when R = 2λ₁ the
/// condition degenerates to λ₂ ≥ 0.
pub fn rigidity_condition(spectrum: &CurvatureSpectrum, scalar: f64) -> Result<RigidityOutcome> {
    let n = spectrum.dimension();
    let epsilon = rigidity_epsilon(n)?;
    let l1 = spectrum.eigenvalues[0];
    let l2 = spectrum.eigenvalues[1];
    if l1 >= 0.0 {
        return Ok(RigidityOutcome {
            passes: true,
            epsilon,
            threshold: 0.0,
            lambda1: l1,
            lambda2: l2,
        });
    }
    let denom = (scalar - 2.0 * l1).abs();
    let threshold = if denom == 0.0 {
        0.0
    } else {
        -epsilon * l1 * l1 / denom
    };
    Ok(RigidityOutcome {
        passes: l2 >= threshold,
        epsilon,
        threshold,
        lambda1: l1,
        lambda2: l2,
    })
}

/// P minimized over the coefficient box |C_ij| ≤ 2 for fixed eigenvalues:
/// P is linear in C_ij², so each pair with λ_iλ_j < 0 takes C² = 4.
fn quadratic_min_over_coefficients(l1: f64, rest: &[f64]) -> f64 {
    let mut p = 2.0 * l1 * l1;
    for (i, &li) in rest.iter().enumerate() {
        for (j, &lj) in rest.iter().enumerate() {
            if i != j && li * lj < 0.0 {
                p += 4.0 * li * lj;
            }
        }
    }
    p
}

/// Brute-force search for the minimum of P = 2λ₁² + Σ C_ij² λ_iλ_j over
/// completions λ₃.. ≥ λ₂ with Σλ = R/2. Returns +∞ when no completion
/// exists.
pub fn rigidity_quadratic_oracle(l1: f64, l2: f64, scalar: f64, n: usize, trials: usize, seed: u64) -> f64 {
    let c = n * (n - 1) / 2;
    if c == 1 {
        return 2.0 * l1 * l1;
    }
    let slack = scalar / 2.0 - l1 - (c as f64 - 1.0) * l2;
    if slack < -1e-14 {
        return f64::INFINITY;
    }
    let slack = slack.max(0.0);
    let free = c - 2;
    if free == 0 {
        return if slack < 1e-12 {
            quadratic_min_over_coefficients(l1, &[l2])
        } else {
            f64::INFINITY
        };
    }
    let mut best = f64::INFINITY;
    let mut rest = vec![l2; c - 1];
    // Corner completions: `pinned` free eigenvalues sit at λ₂, the others
    // share the slack equally.
    for pinned in 0..free {
        let shared = (free - pinned) as f64;
        for (i, v) in rest.iter_mut().enumerate().skip(1) {
            *v = if i <= pinned { l2 } else { l2 + slack / shared };
        }
        best = best.min(quadratic_min_over_coefficients(l1, &rest));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = vec![0.0; free];
    for _ in 0..trials {
        let active = rng.gen_range(1..=free);
        let mut total = 0.0;
        for (i, w) in weights.iter_mut().enumerate() {
            *w = if i < active {
                -(rng.gen::<f64>().max(1e-300)).ln()
            } else {
                0.0
            };
            total += *w;
        }
        for (slot, w) in rest.iter_mut().skip(1).zip(&weights) {
            *slot = l2 + slack * w / total;
        }
        best = best.min(quadratic_min_over_coefficients(l1, &rest));
    }
    best
}

/// The catalog used by the acceptance run.
pub fn full_catalog() -> Vec<ModelSpec> {
    let mut v = Vec::new();
    for n in [2, 3, 4] {
        v.push(ModelSpec {
            kind: ModelKind::Gaussian,
            n,
            k: None,
            grid: None,
        });
    }
    for n in [2, 3] {
        v.push(ModelSpec {
            kind: ModelKind::Sphere,
            n,
            k: None,
            grid: None,
        });
    }
    for (n, k) in [(3, 2), (4, 2), (4, 3)] {
        v.push(ModelSpec {
            kind: ModelKind::Cylinder,
            n,
            k: Some(k),
            grid: None,
        });
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn gaussian(n: usize) -> ShrinkerModel {
        ShrinkerModel::new(ModelKind::Gaussian, n, None).unwrap()
    }
    fn sphere(n: usize) -> ShrinkerModel {
        ShrinkerModel::new(ModelKind::Sphere, n, None).unwrap()
    }
    fn cylinder(n: usize, k: usize) -> ShrinkerModel {
        ShrinkerModel::new(ModelKind::Cylinder, n, Some(k)).unwrap()
    }

    #[test]
    fn make_model_examples() {
        let g = gaussian(4);
        assert_eq!(g.scalar_curvature(), 0.0);
        assert_eq!(g.potential(2.0), 1.0);
        let s = sphere(2);
        assert_relative_eq!(s.radius(), 2f64.sqrt(), max_relative = 1e-15);
        assert_relative_eq!(s.scalar_curvature(), 1.0, max_relative = 1e-14);
        assert_relative_eq!(s.potential(0.0), 1.0, max_relative = 1e-14);
        let c = cylinder(4, 2);
        assert_relative_eq!(c.radius(), 2f64.sqrt(), max_relative = 1e-15);
        assert_relative_eq!(c.potential(2.0), 2.0, max_relative = 1e-14);
    }

    #[test]
    fn invalid_dimensions_rejected() {
        assert!(ShrinkerModel::new(ModelKind::Gaussian, 1, None).is_err());
        assert!(ShrinkerModel::new(ModelKind::Cylinder, 4, Some(4)).is_err());
        assert!(ShrinkerModel::new(ModelKind::Cylinder, 4, Some(1)).is_err());
        assert!(ShrinkerModel::new(ModelKind::Cylinder, 4, None).is_err());
        assert!(ShrinkerModel::new(ModelKind::Sphere, 3, Some(2)).is_err());
    }

    #[test]
    fn entropy_constants() {
        for n in [2, 3, 4] {
            assert!(gaussian(n).mu.abs() < 1e-12, "{}", gaussian(n).mu);
        }
        let expected = 2f64.ln() - 1.0;
        assert!((sphere(2).mu - expected).abs() < 1e-12);
        assert!((cylinder(4, 2).mu - expected).abs() < 1e-12);
        // closed form for S^3(2): log(2π² · 8 · (4π)^{-3/2}) - 3/2
        let s3 = (2.0 * PI * PI * 8.0 * (4.0 * PI).powf(-1.5)).ln() - 1.5;
        assert!((sphere(3).mu - s3).abs() < 1e-12);
    }

    #[test]
    fn ball_volumes() {
        assert_relative_eq!(volume_ball(&gaussian(3), 1.0).unwrap(), 4.0 * PI / 3.0, max_relative = 1e-12);
        assert_relative_eq!(
            volume_ball(&sphere(2), PI * 2f64.sqrt()).unwrap(),
            8.0 * PI,
            max_relative = 1e-12
        );
        // spherical cap of S^2(a): 2π a² (1 - cos(r/a))
        let a = 2f64.sqrt();
        assert_relative_eq!(
            volume_ball(&sphere(2), 1.0).unwrap(),
            2.0 * PI * a * a * (1.0 - (1.0 / a).cos()),
            max_relative = 1e-12
        );
        assert!(matches!(
            volume_ball(&gaussian(2), 1e3),
            Err(Error::OutOfGrid { .. })
        ));
    }

    #[test]
    fn cylinder_ball_matches_direct_double_integral() {
        // independent oracle: 2D tensor quadrature of the indicator's
        // inner integral, done on the flat radius first
        let c = cylinder(4, 2);
        let a = c.radius();
        for r in [0.7, 3.0, 10.0] {
            let v = volume_ball(&c, r).unwrap();
            let rule = GaussLegendre::new(20);
            let th_max = (r / a).min(PI);
            let oracle = quad::composite(&rule, 0.0, th_max, 400, |th| {
                let rho_max = (r * r - a * a * th * th).max(0.0).sqrt();
                2.0 * PI * a * th.sin() * a * PI * rho_max * rho_max
            });
            assert_relative_eq!(v, oracle, max_relative = 1e-9);
        }
        let v10 = volume_ball(&c, 10.0).unwrap();
        assert!(v10 > 0.1 * 100.0 && v10 < 1e3 * 100.0);
    }

    #[test]
    fn radial_grid_reproduces_ball_volume() {
        for m in 1..=4 {
            let g = RadialGrid::euclidean(m, 5.0, 8);
            let vol = g.integrate(|_| 1.0);
            assert_relative_eq!(vol, quad::ball_volume(m) * 5f64.powi(m as i32), max_relative = 1e-8);
            assert!(g.nodes.windows(2).all(|w| w[1] > w[0]));
            assert!(g.weights.iter().all(|&w| w > 0.0));
        }
    }

    #[test]
    fn spectra() {
        let g = gaussian(4);
        let sp = curvature_spectrum(&g, &g.base_point()).unwrap();
        assert_eq!(sp.eigenvalues, vec![0.0; 6]);
        let s = sphere(2);
        let sp = curvature_spectrum(&s, &s.base_point()).unwrap();
        assert_eq!(sp.eigenvalues.len(), 1);
        assert!((sp.eigenvalues[0] - 0.5).abs() < 1e-12);
        let c = cylinder(4, 2);
        let sp = curvature_spectrum(&c, &Point::reduced(&c, 1.0, 3.0)).unwrap();
        let expect = [0.0, 0.0, 0.0, 0.0, 0.0, 0.5];
        for (a, b) in sp.eigenvalues.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((sp.sum() - c.scalar_curvature() / 2.0).abs() < 1e-12);
    }

    #[test]
    fn rigidity_examples() {
        let eps = rigidity_epsilon(4).unwrap();
        assert!((eps - 1.0 / (4.0 * (1.0 + 2f64.sqrt()))).abs() < 1e-15);
        assert!((eps - 0.103553).abs() < 1e-6);
        let cyl = CurvatureSpectrum {
            eigenvalues: vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.5],
        };
        assert!(rigidity_condition(&cyl, 1.0).unwrap().passes);
        // λ₁ = -1, λ₂ = -0.5, remaining four share R/2 - λ₁ - λ₂ = 2
        let synth = CurvatureSpectrum {
            eigenvalues: vec![-1.0, -0.5, 0.5, 0.5, 0.5, 0.5],
        };
        let out = rigidity_condition(&synth, 1.0).unwrap();
        assert!(!out.passes);
        assert!((out.threshold + eps / 3.0).abs() < 1e-15);
        let s2 = CurvatureSpectrum { eigenvalues: vec![0.5] };
        assert!(matches!(rigidity_condition(&s2, 1.0), Err(Error::RigidityUndefined(2))));
    }

    #[test]
    fn quadratic_oracle_examples() {
        assert_eq!(rigidity_quadratic_oracle(0.0, 0.0, 1.0, 4, 10_000, 1), 0.0);
        assert!(rigidity_quadratic_oracle(-1.0, 0.0, 1.0, 4, 10_000, 1) >= 2.0);
        assert!(rigidity_quadratic_oracle(-1.0, -0.4, 1.0, 4, 10_000, 1) < 0.0);
    }

    #[test]
    fn model_round_trips_through_json() {
        let c = cylinder(4, 3);
        let s = serde_json::to_string(&c).unwrap();
        let back: ShrinkerModel = serde_json::from_str(&s).unwrap();
        assert_eq!(back, c);
    }
}
