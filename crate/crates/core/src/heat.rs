//! Heat and conjugate heat equations on the induced flow, heat kernels and
//! the kernel bounds built on them.
//!
//! On every catalog model the kernel factorizes: a static Euclidean
//! Gaussian on the flat factor times a zonal series on the shrinking sphere
//! factor. The finite-difference backend (Crank–Nicolson on P1 elements)
//! reproduces both factors from narrow bumps and is used to cross-check the
//! series.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma_ur;

use crate::entropy::{entropy_fisher, TestFunction};
use crate::error::{Error, Result};
use crate::fe::FeLine;
use crate::models::{Point, ShrinkerModel};
use crate::quad::{self, sphere_area, GaussLegendre};

const SERIES_TOL: f64 = 1e-13;
const MAX_MODES: usize = 20_000;

// ---------------------------------------------------------------------------
// Closed-form and spectral factor kernels

/// Euclidean kernel (4πΔ)^{-m/2} e^{-r²/(4Δ)}.
pub fn flat_kernel(m: usize, r: f64, elapsed: f64) -> f64 {
    (4.0 * PI * elapsed).powf(-(m as f64) / 2.0) * (-r * r / (4.0 * elapsed)).exp()
}

/// Zonal sphere-factor kernel with γ-derivatives and Laplacian at time t.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesSample {
    pub value: f64,
    /// ∂_γ H
    pub d_gamma: f64,
    /// ∂²_γ H
    pub d2_gamma: f64,
    /// Δ_{g(t)} H in the x variable.
    pub laplacian: f64,
    /// Σ_j e_j j(j+k-1) Z_j / V; the zonal Laplacian on a sphere of radius
    /// r is -eigen_sum / r².
    pub eigen_sum: f64,
    pub error: f64,
    pub modes: usize,
}

/// H(x,t,y,s) on a round S^k of radius a at t = 0 shrinking like (1-t),
/// as a function of the angle γ between x and y.
pub fn sphere_kernel(k: usize, a: f64, gamma: f64, t: f64, s: f64) -> Result<SeriesSample> {
    if !(s < t && t < 1.0) {
        return Err(Error::Precondition(format!("need s < t < 1, got s = {s}, t = {t}")));
    }
    let alpha = (k as f64 - 1.0) / 2.0;
    let x = gamma.cos();
    let (sin_g, cos_g) = (gamma.sin(), x);
    let decay = ((1.0 - s) / (1.0 - t)).ln() / (a * a);
    let vol = sphere_area(k) * (a * a * (1.0 - s)).powf(k as f64 / 2.0);
    let at2 = a * a * (1.0 - t);
    // Gegenbauer C^α, C^{α+1}, C^{α+2} at x, and C^α at 1 for the bounds
    let mut c = [1.0, 2.0 * alpha * x];
    let mut c1 = [1.0, 2.0 * (alpha + 1.0) * x];
    let mut c2 = [1.0, 2.0 * (alpha + 2.0) * x];
    let mut one = [1.0, 2.0 * alpha];
    let (mut value, mut d1, mut d2, mut lap, mut abs_sum) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut j = 0usize;
    loop {
        let jf = j as f64;
        let eig = jf * (jf + k as f64 - 1.0);
        let e = (-eig * decay).exp();
        let norm = (jf + alpha) / alpha;
        let cj = if j == 0 { c[0] } else { c[1] };
        let dim = norm * if j == 0 { one[0] } else { one[1] };
        // C' = 2α C^{α+1}_{j-1}, C'' = 4α(α+1) C^{α+2}_{j-2}
        let dc = if j >= 1 { 2.0 * alpha * if j == 1 { c1[0] } else { c1[1] } } else { 0.0 };
        let ddc = if j >= 2 {
            4.0 * alpha * (alpha + 1.0) * if j == 2 { c2[0] } else { c2[1] }
        } else {
            0.0
        };
        let term = e * norm;
        value += term * cj;
        d1 += term * dc * (-sin_g);
        d2 += term * (ddc * sin_g * sin_g - dc * cos_g);
        lap -= term * cj * eig / at2;
        abs_sum += e * dim * (1.0 + eig);
        if j > 0 && e * dim * (1.0 + eig) < SERIES_TOL * abs_sum.max(1e-300) {
            break;
        }
        if j >= MAX_MODES {
            return Err(Error::Unresolved(format!(
                "t - s = {} too small for the mode series",
                t - s
            )));
        }
        j += 1;
        // advance recurrences to index j (and j-1 for the derivative families)
        if j >= 2 {
            let next = |arr: &mut [f64; 2], al: f64, idx: usize, xx: f64| {
                let n = idx as f64;
                let v = (2.0 * xx * (n + al - 1.0) * arr[1] - (n + 2.0 * al - 2.0) * arr[0]) / n;
                arr[0] = arr[1];
                arr[1] = v;
            };
            next(&mut c, alpha, j, x);
            next(&mut one, alpha, j, 1.0);
            if j >= 3 {
                next(&mut c1, alpha + 1.0, j - 1, x);
            }
            if j >= 4 {
                next(&mut c2, alpha + 2.0, j - 2, x);
            }
        }
    }
    let noise = 8.0 * f64::EPSILON * abs_sum * (j as f64 + 1.0).sqrt();
    Ok(SeriesSample {
        value: value / vol,
        d_gamma: d1 / vol,
        d2_gamma: d2 / vol,
        laplacian: lap / vol,
        eigen_sum: -lap * at2 / vol,
        error: noise / vol,
        modes: j + 1,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelMethod {
    Spectral,
    FiniteDifference,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSample {
    pub x: Point,
    pub t: f64,
    pub y: Point,
    pub s: f64,
    pub value: f64,
    pub method: KernelMethod,
    /// Bump widths of the delta approximation (finite differences only).
    pub delta: Option<[f64; 2]>,
    pub error: f64,
}

impl KernelSample {
    /// b = -log((4πτ)^{n/2} H).
    pub fn log_density(&self, n: usize) -> f64 {
        -(0.5 * n as f64 * (4.0 * PI * (self.t - self.s)).ln() + self.value.ln())
    }
}

/// Factor data of the kernel at reduced separation (γ on the sphere, r on
/// the flat factor), with derivatives used by the gradient checks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReducedKernel {
    pub value: f64,
    pub error: f64,
    /// |∇_x H|² at time t.
    pub grad_sq: f64,
    /// Δ_x H at time t.
    pub laplacian: f64,
}

pub fn reduced_kernel(model: &ShrinkerModel, gamma: f64, r: f64, t: f64, s: f64) -> Result<ReducedKernel> {
    if !(s < t && t < 1.0) {
        return Err(Error::Precondition(format!("need s < t < 1, got s = {s}, t = {t}")));
    }
    let dt = t - s;
    let (mut sv, mut serr, mut sg2, mut slap) = (1.0, 0.0, 0.0, 0.0);
    if model.has_sphere() {
        let sk = sphere_kernel(model.sphere_dim(), model.radius(), gamma, t, s)?;
        if sk.value <= 100.0 * sk.error {
            return Err(Error::Unresolved(format!(
                "sphere kernel {:.3e} at angle {gamma:.3} is below series noise {:.1e}; increase t - s",
                sk.value, sk.error
            )));
        }
        let at2 = model.radius().powi(2) * (1.0 - t);
        sv = sk.value;
        serr = sk.error;
        sg2 = sk.d_gamma * sk.d_gamma / at2;
        slap = sk.laplacian;
    }
    let (mut fv, mut fg2, mut flap) = (1.0, 0.0, 0.0);
    if model.has_flat() {
        let m = model.flat_dim();
        fv = flat_kernel(m, r, dt);
        fg2 = (r / (2.0 * dt) * fv).powi(2);
        flap = fv * (r * r / (4.0 * dt * dt) - m as f64 / (2.0 * dt));
    }
    Ok(ReducedKernel {
        value: sv * fv,
        error: serr * fv,
        grad_sq: sg2 * fv * fv + sv * sv * fg2,
        laplacian: slap * fv + sv * flap,
    })
}

/// H(x, t, y, s) from the closed-form flat factor and the sphere series.
pub fn heat_kernel(model: &ShrinkerModel, x: &Point, t: f64, y: &Point, s: f64) -> Result<KernelSample> {
    let k = reduced_kernel(model, x.sphere_angle(y), x.flat_distance_sq(y).sqrt(), t, s)?;
    Ok(KernelSample {
        x: x.clone(),
        t,
        y: y.clone(),
        s,
        value: k.value,
        method: KernelMethod::Spectral,
        delta: None,
        error: k.error,
    })
}

// ---------------------------------------------------------------------------
// Crank–Nicolson on one factor

/// One factor of the product: P1 line plus the rate c(t) with Δ_t = c(t)Δ₀.
struct FactorLine {
    line: FeLine,
    sphere: Option<(usize, f64)>,
}

impl FactorLine {
    fn sphere(k: usize, a: f64, cells: usize) -> Self {
        let area = sphere_area(k - 1);
        Self {
            line: FeLine::new(PI * a, cells, move |s| area * (a * (s / a).sin()).abs().powi(k as i32 - 1), false),
            sphere: Some((k, a)),
        }
    }

    fn flat(m: usize, extent: f64, cells: usize) -> Self {
        let area = sphere_area(m - 1);
        Self {
            line: FeLine::new(extent, cells, move |r| area * r.powi(m as i32 - 1), false),
            sphere: None,
        }
    }

    /// T(t) with dT = c(t) dt.
    fn heat_time(&self, t: f64) -> f64 {
        if self.sphere.is_some() {
            -(1.0 - t).ln()
        } else {
            t
        }
    }

    fn rate(&self, t: f64) -> f64 {
        if self.sphere.is_some() {
            1.0 / (1.0 - t)
        } else {
            1.0
        }
    }

    /// dV_t / dV₀ on this factor.
    fn volume_factor(&self, t: f64) -> f64 {
        self.sphere.map_or(1.0, |(k, _)| (1.0 - t).powf(k as f64 / 2.0))
    }

    /// Evolve ∂_τ u = c Δ₀ u through the time levels of `schedule`
    /// (increasing or decreasing in t). With `rannacher` the first two
    /// intervals are four backward-Euler half steps. Returns every level if
    /// `keep` is set, else only the last.
    fn evolve(&self, u0: &[f64], schedule: &[f64], rannacher: bool, keep: bool) -> Result<Vec<Vec<f64>>> {
        let line = &self.line;
        let mut out = Vec::with_capacity(if keep { schedule.len() } else { 1 });
        let mut u = u0.to_vec();
        if keep {
            out.push(u.clone());
        }
        let mut ku = vec![0.0; u.len()];
        for (n, w) in schedule.windows(2).enumerate() {
            let (t_n, t_next) = (w[0], w[1]);
            let dt = (t_next - t_n).abs();
            if rannacher && n < 2 {
                for half in 1..=2 {
                    let t_half = t_n + (t_next - t_n) * 0.5 * half as f64;
                    let rhs: Vec<f64> = line.mass.iter().zip(&u).map(|(m, v)| m * v).collect();
                    u = line.solve_shifted(1.0, 0.5 * dt * self.rate(t_half), None, &rhs);
                }
            } else {
                let c = self.rate(0.5 * (t_n + t_next));
                line.apply_stiffness(&u, &mut ku);
                let rhs: Vec<f64> = (0..u.len())
                    .map(|i| line.mass[i] * u[i] - 0.5 * dt * c * ku[i])
                    .collect();
                u = line.solve_shifted(1.0, 0.5 * dt * c, None, &rhs);
            }
            if u.iter().any(|v| !v.is_finite()) {
                return Err(Error::Step(format!("non-finite state after step {n}; reduce dt below {dt:.2e}")));
            }
            if keep {
                out.push(u.clone());
            }
        }
        if !keep {
            out.push(u);
        }
        Ok(out)
    }
}

fn uniform_schedule(start: f64, end: f64, steps: usize) -> Vec<f64> {
    (0..=steps)
        .map(|i| start + (end - start) * i as f64 / steps as f64)
        .collect()
}

/// Crank–Nicolson for M du/dT = -K u over the given step lengths, with
/// the first two steps split into backward-Euler half steps.
fn propagate(line: &FeLine, u0: &[f64], steps: &[f64]) -> Vec<f64> {
    let mut u = u0.to_vec();
    let mut ku = vec![0.0; u.len()];
    for (n, &dt) in steps.iter().enumerate() {
        if n < 2 {
            for _ in 0..2 {
                let rhs: Vec<f64> = line.mass.iter().zip(&u).map(|(m, v)| m * v).collect();
                u = line.solve_shifted(1.0, 0.5 * dt, None, &rhs);
            }
            continue;
        }
        line.apply_stiffness(&u, &mut ku);
        let rhs: Vec<f64> = (0..u.len()).map(|i| line.mass[i] * u[i] - 0.5 * dt * ku[i]).collect();
        u = line.solve_shifted(1.0, 0.5 * dt, None, &rhs);
    }
    u
}

/// Four-point Lagrange interpolation on a uniform line, even about 0.
fn cubic_eval(nodes_h: f64, u: &[f64], x: f64) -> f64 {
    let n = u.len() as isize;
    let pos = x.abs() / nodes_h;
    let i = (pos.floor() as isize).clamp(0, n - 3);
    let at = |j: isize| -> f64 { u[j.unsigned_abs().min(n as usize - 1)] };
    let f = pos - i as f64;
    -f * (f - 1.0) * (f - 2.0) / 6.0 * at(i - 1) + (f + 1.0) * (f - 1.0) * (f - 2.0) / 2.0 * at(i)
        - (f + 1.0) * f * (f - 2.0) / 2.0 * at(i + 1)
        + (f + 1.0) * f * (f - 1.0) / 6.0 * at(i + 2)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// □u = ∂_t u - Δu = 0 forward in t.
    Forward,
    /// □*w = -∂_t w - Δw + Rw = 0 backward in t.
    Backward,
}

/// Kernel factor from a normalized bump of width δ at the origin of the
/// line, evaluated at distance `at`.
///
/// In the heat time T = ∫c dt the factor equation is ∂_T u = Δ₀u, and the
/// bump already carries T-time δ². Steps grow with the elapsed T-time; the
/// step sequence and its bisection are extrapolated.
fn bump_kernel(factor: &FactorLine, delta: f64, at: f64, t: f64, s: f64, direction: Direction) -> Result<f64> {
    let line = &factor.line;
    let bump: Vec<f64> = line.nodes.iter().map(|r| (-r * r / (4.0 * delta * delta)).exp()).collect();
    let mass = line.integrate(&bump);
    let lag = delta * delta;
    let span = factor.heat_time(t) - factor.heat_time(s) - lag;
    if span <= 0.0 {
        return Err(Error::Unresolved(format!(
            "t - s = {} is below the bump scale; use the spectral kernel",
            t - s
        )));
    }
    let mut steps = Vec::new();
    let (mut done, mut elapsed) = (0.0, lag);
    while done < span {
        let dt = (0.02 * elapsed).min(span - done);
        steps.push(dt);
        done += dt;
        elapsed += dt;
    }
    let halved: Vec<f64> = steps.iter().flat_map(|&d| [0.5 * d, 0.5 * d]).collect();
    let u0: Vec<f64> = bump.iter().map(|b| b / mass).collect();
    let coarse = cubic_eval(line.h, &propagate(line, &u0, &steps), at);
    let fine = cubic_eval(line.h, &propagate(line, &u0, &halved), at);
    let value = (4.0 * fine - coarse) / 3.0;
    // forward data has unit dV_s mass; backward ŵ has unit dV₀ mass and
    // w = (dV₀/dV_s) ŵ, so both routes carry the same factor
    match direction {
        Direction::Forward | Direction::Backward => Ok(value / factor.volume_factor(s)),
    }
}

/// Bump widths δ ∈ {4h, 8h} extrapolated in δ², then meshes h and h/2
/// extrapolated in h².
fn fd_factor(build: &dyn Fn(f64) -> Result<FactorLine>, h: f64, at: f64, t: f64, s: f64, dir: Direction) -> Result<(f64, f64)> {
    let level = |hh: f64| -> Result<f64> {
        let f = build(hh)?;
        let narrow = bump_kernel(&f, 4.0 * hh, at, t, s, dir)?;
        let wide = bump_kernel(&f, 8.0 * hh, at, t, s, dir)?;
        Ok((4.0 * narrow - wide) / 3.0)
    };
    let coarse = level(h)?;
    let fine = level(h / 2.0)?;
    Ok(((4.0 * fine - coarse) / 3.0, (fine - coarse).abs() / 3.0))
}

/// Kernel by finite differences from bumps (forward from y, or backward
/// from x for the conjugate equation).
pub fn heat_kernel_fd(
    model: &ShrinkerModel,
    x: &Point,
    t: f64,
    y: &Point,
    s: f64,
    direction: Direction,
) -> Result<KernelSample> {
    if !(s < t && t < 1.0) {
        return Err(Error::Precondition(format!("need s < t < 1, got s = {s}, t = {t}")));
    }
    let elapsed = t - s;
    let h = 0.01f64.min(elapsed.sqrt() / 10.0);
    if elapsed < 1e-3 {
        return Err(Error::Unresolved(format!(
            "t - s = {elapsed} is below the finite-difference scale; use the spectral kernel"
        )));
    }
    let mut value = 1.0;
    let mut rel_err = 0.0;
    if model.has_sphere() {
        let (k, a) = (model.sphere_dim(), model.radius());
        let build = move |hh: f64| -> Result<FactorLine> {
            let cells = (PI * a / hh).ceil() as usize;
            if cells > 1 << 18 {
                return Err(Error::Unresolved("sphere mesh too fine".into()));
            }
            Ok(FactorLine::sphere(k, a, cells))
        };
        let (v, e) = fd_factor(&build, h, a * x.sphere_angle(y), t, s, direction)?;
        value *= v;
        rel_err += e / v.abs();
    }
    if model.has_flat() {
        let m = model.flat_dim();
        let r = x.flat_distance_sq(y).sqrt();
        let extent = r + 14.0 * elapsed.sqrt() + 2.0;
        let build = move |hh: f64| -> Result<FactorLine> {
            let cells = (extent / hh).ceil() as usize;
            if cells > 1 << 18 {
                return Err(Error::Unresolved("flat mesh too fine".into()));
            }
            Ok(FactorLine::flat(m, cells as f64 * hh, cells))
        };
        let (v, e) = fd_factor(&build, h, r, t, s, direction)?;
        value *= v;
        rel_err += e / v.abs();
    }
    Ok(KernelSample {
        x: x.clone(),
        t,
        y: y.clone(),
        s,
        value,
        method: KernelMethod::FiniteDifference,
        delta: Some([4.0 * h, 8.0 * h]),
        error: rel_err * value.abs(),
    })
}

// ---------------------------------------------------------------------------
// Heat fields

pub type FactorData = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Product data c·u_s(θ)·u_f(ρ); missing parts are constant 1.
#[derive(Clone)]
pub struct InitialData {
    pub sphere: Option<FactorData>,
    pub flat: Option<FactorData>,
    pub scale: f64,
}

impl InitialData {
    pub fn constant(c: f64) -> Self {
        Self {
            sphere: None,
            flat: None,
            scale: c,
        }
    }

    pub fn flat(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            sphere: None,
            flat: Some(Arc::new(f)),
            scale: 1.0,
        }
    }

    pub fn sphere(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            sphere: Some(Arc::new(f)),
            flat: None,
            scale: 1.0,
        }
    }

    pub fn with_flat(mut self, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.flat = Some(Arc::new(f));
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatOptions {
    pub h: f64,
    pub dt: f64,
}

impl Default for HeatOptions {
    fn default() -> Self {
        Self { h: 0.02, dt: 2.5e-4 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorField {
    pub h: f64,
    /// Nodal values per time level (in the t = 0 arclength coordinate).
    pub values: Vec<Vec<f64>>,
    /// Lumped mass at t = 0.
    pub mass: Vec<f64>,
    pub stiff_diag: Vec<f64>,
    pub stiff_off: Vec<f64>,
    pub is_sphere: bool,
    pub sphere_dim: usize,
}

impl FactorField {
    fn from_line(f: &FactorLine, values: Vec<Vec<f64>>) -> Self {
        Self {
            h: f.line.h,
            values,
            mass: f.line.mass.clone(),
            stiff_diag: f.line.stiff_diag.clone(),
            stiff_off: f.line.stiff_off.clone(),
            is_sphere: f.sphere.is_some(),
            sphere_dim: f.sphere.map_or(0, |(k, _)| k),
        }
    }

    fn laplacian0(&self, u: &[f64]) -> Vec<f64> {
        let n = u.len();
        (0..n)
            .map(|i| {
                let mut acc = self.stiff_diag[i] * u[i];
                if i > 0 {
                    acc += self.stiff_off[i - 1] * u[i - 1];
                }
                if i + 1 < n {
                    acc += self.stiff_off[i] * u[i + 1];
                }
                -acc / self.mass[i]
            })
            .collect()
    }
}

/// Solution of □u = 0 forward or □*w = 0 backward on product data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatField {
    pub direction: Direction,
    pub method: KernelMethod,
    pub dt: f64,
    pub times: Vec<f64>,
    pub sphere: Option<FactorField>,
    pub flat: Option<FactorField>,
    pub scale: f64,
}

impl HeatField {
    /// Value at time level `step` and reduced position (θ, ρ).
    pub fn value(&self, model: &ShrinkerModel, step: usize, theta: f64, rho: f64) -> f64 {
        let t = self.times[step];
        let mut v = self.scale * self.prefactor(model, t);
        if let Some(f) = &self.sphere {
            v *= cubic_eval(f.h, &f.values[step], model.radius() * theta);
        }
        if let Some(f) = &self.flat {
            v *= cubic_eval(f.h, &f.values[step], rho);
        }
        v
    }

    /// (1-t)^{-k/2} for conjugate solutions, 1 otherwise.
    fn prefactor(&self, model: &ShrinkerModel, t: f64) -> f64 {
        match (self.direction, model.has_sphere()) {
            (Direction::Backward, true) => (1.0 - t).powf(-(model.sphere_dim() as f64) / 2.0),
            _ => 1.0,
        }
    }

    /// sup over nodes at a time level.
    pub fn sup(&self, model: &ShrinkerModel, step: usize) -> f64 {
        let t = self.times[step];
        let part = |f: &Option<FactorField>| f.as_ref().map_or(1.0, |f| f.values[step].iter().cloned().fold(f64::MIN, f64::max));
        self.scale * self.prefactor(model, t) * part(&self.sphere) * part(&self.flat)
    }

    /// ∫ u dV_t at a time level (infinite if the flat factor is untouched).
    pub fn mass(&self, model: &ShrinkerModel, step: usize) -> f64 {
        let t = self.times[step];
        let mut total = self.scale * self.prefactor(model, t);
        if model.has_sphere() {
            let vol = (1.0 - t).powf(model.sphere_dim() as f64 / 2.0);
            total *= vol
                * match &self.sphere {
                    Some(f) => f.mass.iter().zip(&f.values[step]).map(|(m, v)| m * v).sum::<f64>(),
                    None => sphere_area(model.sphere_dim()) * model.radius().powi(model.sphere_dim() as i32),
                };
        }
        if model.has_flat() {
            total *= match &self.flat {
                Some(f) => f.mass.iter().zip(&f.values[step]).map(|(m, v)| m * v).sum::<f64>(),
                None => f64::INFINITY,
            };
        }
        total
    }

    /// Largest grid-norm residual of ∂_τ u - c(t)Δ₀u with a fourth-order
    /// time difference, at four interior sample times.
    pub fn residual(&self, model: &ShrinkerModel) -> f64 {
        let mut worst: f64 = 0.0;
        let dir = if self.direction == Direction::Forward { 1.0 } else { -1.0 };
        for (field, other) in [(&self.sphere, &self.flat), (&self.flat, &self.sphere)] {
            let Some(f) = field else { continue };
            let levels = f.values.len();
            let samples = [0.2, 0.4, 0.6, 0.8].map(|q| ((levels - 1) as f64 * q).round() as usize);
            for n in samples.into_iter().filter(|&n| n >= 6 && n + 2 < levels) {
                let t = self.times[n];
                let c = if f.is_sphere { 1.0 / (1.0 - t) } else { 1.0 };
                let v = &f.values;
                let lap = f.laplacian0(&v[n]);
                let r2: f64 = (0..v[n].len())
                    .map(|i| {
                        let d = (-v[n + 2][i] + 8.0 * v[n + 1][i] - 8.0 * v[n - 1][i] + v[n - 2][i]) / (12.0 * self.dt);
                        let r = d - c * lap[i];
                        f.mass[i] * r * r
                    })
                    .sum();
                let vol = if f.is_sphere { (1.0 - t).powf(f.sphere_dim as f64 / 2.0) } else { 1.0 };
                let sup_other = other
                    .as_ref()
                    .map_or(1.0, |o| o.values[n].iter().map(|x| x.abs()).fold(0.0, f64::max));
                worst = worst.max((r2 * vol).sqrt() * sup_other * self.scale.abs() * self.prefactor(model, t));
            }
        }
        let _ = dir;
        worst
    }
}

fn sample_factor(data: &FactorData, nodes: &[f64], scale: f64) -> Result<Vec<f64>> {
    nodes
        .iter()
        .map(|&x| {
            let v = data(x * scale);
            if !v.is_finite() || v.abs() > 1e12 {
                Err(Error::Precondition(format!("initial data is unbounded ({v} at {x})")))
            } else {
                Ok(v)
            }
        })
        .collect()
}

fn solve_product(
    model: &ShrinkerModel,
    data: &InitialData,
    start: f64,
    end: f64,
    opts: HeatOptions,
    direction: Direction,
) -> Result<HeatField> {
    let (lo, hi) = if start < end { (start, end) } else { (end, start) };
    if !(lo < hi && hi < 1.0) {
        return Err(Error::Precondition(format!("need t0 < t1 < 1, got {lo}, {hi}")));
    }
    if !(opts.dt > 0.0 && opts.h > 0.0) {
        return Err(Error::Step(format!("non-positive step sizes {opts:?}")));
    }
    let steps = ((hi - lo) / opts.dt).round().max(4.0) as usize;
    let dt = (hi - lo) / steps as f64;
    let times = uniform_schedule(start, end, steps);
    let mut sphere = None;
    if let (Some(d), true) = (&data.sphere, model.has_sphere()) {
        let a = model.radius();
        let f = FactorLine::sphere(model.sphere_dim(), a, (PI * a / opts.h).ceil() as usize);
        let mut u0 = sample_factor(d, &f.line.nodes, 1.0 / a)?;
        if direction == Direction::Backward {
            // ŵ = (1-t)^{k/2} w
            let c = (1.0 - start).powf(model.sphere_dim() as f64 / 2.0);
            u0.iter_mut().for_each(|v| *v *= c);
        }
        sphere = Some(FactorField::from_line(&f, f.evolve(&u0, &times, true, true)?));
    }
    let mut flat = None;
    if let (Some(d), true) = (&data.flat, model.has_flat()) {
        let extent = model.grid.rho_max;
        let f = FactorLine::flat(model.flat_dim(), extent, (extent / opts.h).ceil() as usize);
        let u0 = sample_factor(d, &f.line.nodes, 1.0)?;
        flat = Some(FactorField::from_line(&f, f.evolve(&u0, &times, true, true)?));
    }
    let mut scale = data.scale;
    if direction == Direction::Backward && sphere.is_none() && model.has_sphere() {
        // constant sphere factor: w = (1-t)^{-k/2}ŵ with ŵ = (1-t₁)^{k/2}
        scale *= (1.0 - start).powf(model.sphere_dim() as f64 / 2.0);
    }
    Ok(HeatField {
        direction,
        method: KernelMethod::FiniteDifference,
        dt,
        times,
        sphere,
        flat,
        scale,
    })
}

/// Forward heat equation from u₀ at t₀ to t₁.
pub fn solve_heat(model: &ShrinkerModel, data: &InitialData, t0: f64, t1: f64, opts: HeatOptions) -> Result<HeatField> {
    solve_product(model, data, t0, t1, opts, Direction::Forward)
}

/// Conjugate heat equation from w₁ at t₁ backward to t₀.
pub fn solve_conjugate(model: &ShrinkerModel, data: &InitialData, t0: f64, t1: f64, opts: HeatOptions) -> Result<HeatField> {
    solve_product(model, data, t1, t0, opts, Direction::Backward)
}

// ---------------------------------------------------------------------------
// Integral identities

fn sphere_weight(k: usize, radius: f64) -> impl Fn(f64) -> f64 {
    let area = sphere_area(k - 1);
    move |g: f64| area * (radius * g.sin()).powi(k as i32 - 1) * radius
}

/// (∫H dV_s(y), ∫H dV_t(x)) by reduced quadrature.
pub fn mass_identities(model: &ShrinkerModel, t: f64, s: f64) -> Result<(f64, f64)> {
    let elapsed = t - s;
    let mut flat_mass = 1.0;
    if model.has_flat() {
        let m = model.flat_dim();
        let area = sphere_area(m - 1);
        flat_mass = quad::adaptive(0.0, 40.0 * elapsed.sqrt(), 1e-13, 1.0, |r| {
            area * r.powi(m as i32 - 1) * flat_kernel(m, r, elapsed)
        })?
        .value;
    }
    if !model.has_sphere() {
        return Ok((flat_mass, flat_mass));
    }
    let (k, a) = (model.sphere_dim(), model.radius());
    let mut values = Vec::new();
    for radius in [a * (1.0 - s).sqrt(), a * (1.0 - t).sqrt()] {
        let w = sphere_weight(k, radius);
        let mut err = None;
        let r = quad::adaptive(0.0, PI, 1e-12, 1.0, |g| match sphere_kernel(k, a, g, t, s) {
            Ok(v) => v.value * w(g),
            Err(e) => {
                err.get_or_insert(e);
                0.0
            }
        })?;
        if let Some(e) = err {
            return Err(e);
        }
        values.push(r.value * flat_mass);
    }
    Ok((values[0], values[1]))
}

/// |H(x,t,y,s) - ∫ H(x,t,z,r) H(z,r,y,s) dV_r(z)| and its quadrature error.
pub fn semigroup_defect(model: &ShrinkerModel, x: &Point, t: f64, y: &Point, s: f64, mid: f64) -> Result<(f64, f64)> {
    if !(s < mid && mid < t && t < 1.0) {
        return Err(Error::Precondition(format!(
            "intermediate time {mid} must lie strictly between s = {s} and t = {t}"
        )));
    }
    let direct = heat_kernel(model, x, t, y, s)?;
    let mut value = 1.0;
    let mut err = 0.0;
    let rule = GaussLegendre::new(16);
    if model.has_flat() {
        let m = model.flat_dim();
        let d = x.flat_distance_sq(y).sqrt();
        let (d1, d2) = (t - mid, mid - s);
        let reach = 14.0 * d1.max(d2).sqrt();
        let integrate = |panels: usize| -> f64 {
            if m == 1 {
                quad::composite(&rule, -reach, d + reach, 2 * panels, |z| {
                    flat_kernel(1, z.abs(), d1) * flat_kernel(1, (z - d).abs(), d2)
                })
            } else {
                let area = sphere_area(m - 2);
                quad::composite_2d(&rule, (-reach, d + reach, 2 * panels), (0.0, reach, panels), |z, q| {
                    area * q.powi(m as i32 - 2)
                        * flat_kernel(m, (z * z + q * q).sqrt(), d1)
                        * flat_kernel(m, ((z - d).powi(2) + q * q).sqrt(), d2)
                })
            }
        };
        let (c, f) = (integrate(8), integrate(16));
        value *= f;
        err += (f - c).abs() / f.abs();
    }
    if model.has_sphere() {
        let (k, a) = (model.sphere_dim(), model.radius());
        let g_xy = x.sphere_angle(y);
        let rad = a * (1.0 - mid).sqrt();
        let area = if k == 2 { 2.0 } else { sphere_area(k - 2) };
        let mut failure = None;
        let mut integrate = |panels: usize| -> f64 {
            quad::composite_2d(&rule, (0.0, PI, panels), (0.0, PI, panels), |g1, psi| {
                let c2 = (g1.cos() * g_xy.cos() + g1.sin() * g_xy.sin() * psi.cos()).clamp(-1.0, 1.0);
                let h1 = sphere_kernel(k, a, g1, t, mid);
                let h2 = sphere_kernel(k, a, c2.acos(), mid, s);
                match (h1, h2) {
                    (Ok(h1), Ok(h2)) => {
                        area * psi.sin().powi(k as i32 - 2) * (rad * g1.sin()).powi(k as i32 - 1) * rad * h1.value * h2.value
                    }
                    (Err(e), _) | (_, Err(e)) => {
                        failure.get_or_insert(e);
                        0.0
                    }
                }
            })
        };
        let (c, f) = (integrate(8), integrate(16));
        if let Some(e) = failure {
            return Err(e);
        }
        value *= f;
        err += (f - c).abs() / f.abs();
    }
    Ok(((direct.value - value).abs(), err * value.abs() + direct.error))
}

/// ∫_{M∖B_s(x,R)} H(x,t,·,s) dV_s; the models are homogeneous, so x is
/// immaterial.
pub fn tail_mass(model: &ShrinkerModel, t: f64, s: f64, radius: f64) -> Result<f64> {
    let elapsed = t - s;
    let m = model.flat_dim();
    let flat_tail = |rr: f64| -> f64 {
        if m == 0 {
            if rr > 0.0 { 0.0 } else { 1.0 }
        } else if rr <= 0.0 {
            1.0
        } else {
            gamma_ur(m as f64 / 2.0, rr * rr / (4.0 * elapsed))
        }
    };
    if !model.has_sphere() {
        return Ok(flat_tail(radius));
    }
    let (k, a) = (model.sphere_dim(), model.radius());
    let a_s = a * (1.0 - s).sqrt();
    let w = sphere_weight(k, a_s);
    let edge = (radius / a_s).min(PI);
    let mut failure = None;
    let mut integrand = |g: f64| -> f64 {
        let reach2 = radius * radius - (a_s * g).powi(2);
        match sphere_kernel(k, a, g, t, s) {
            Ok(v) => v.value * w(g) * flat_tail(reach2.max(0.0).sqrt()),
            Err(e) => {
                failure.get_or_insert(e);
                0.0
            }
        }
    };
    // γ = edge·sin φ smooths the square-root edge of the flat reach
    let inner = quad::adaptive(0.0, PI / 2.0, 1e-10, 1e-300, |phi| {
        edge * phi.cos() * integrand(edge * phi.sin())
    })?
    .value;
    let outer = if edge < PI {
        quad::adaptive(edge, PI, 1e-10, 1e-300, &mut integrand)?.value
    } else {
        0.0
    };
    if let Some(e) = failure {
        return Err(e);
    }
    let inner_part = if m == 0 { 0.0 } else { inner };
    Ok(inner_part + outer)
}

// ---------------------------------------------------------------------------
// Kernel bound suite

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleWindow {
    /// t ∈ [-1/δ, 1-δ].
    pub delta: f64,
    /// d_t(p, y) + √(t-s) ≤ D.
    pub reach: f64,
    pub min_elapsed: f64,
    pub epsilon: f64,
}

impl Default for SampleWindow {
    fn default() -> Self {
        Self {
            delta: 0.2,
            reach: 6.0,
            min_elapsed: 0.1,
            epsilon: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub x: (f64, f64),
    pub t: f64,
    pub y: (f64, f64),
    pub s: f64,
    pub value: f64,
    pub bound: f64,
    pub margin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailRecord {
    pub r: f64,
    pub log_tail: f64,
    pub exponent: f64,
    /// log_tail - exponent
    pub constant: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelBoundSummary {
    pub model: String,
    pub samples: usize,
    pub skipped: usize,
    pub positivity_failures: usize,
    pub ultracontractive_failures: usize,
    /// max H(4π(t-s))^{n/2} e^{μ}
    pub worst_ultra_ratio: f64,
    /// Smallest C in H ≥ C^{4/ε} e^{μ(4/ε-1)} (4πτ)^{-n/2} e^{-d²/((4-ε)τ)}.
    pub lower_constant: f64,
    /// Smallest value of log H + (n/2)log(4πτ) + d²/((4-ε)τ) + 4τF/(3(1-t)²ε).
    pub sharpened_constant: f64,
    pub tails: Vec<TailRecord>,
    pub tails_decreasing: bool,
    pub rows: Vec<SweepRow>,
}

impl KernelBoundSummary {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["x_theta", "x_rho", "t", "y_theta", "y_rho", "s", "H", "bound", "margin"])?;
        for r in &self.rows {
            w.write_record(
                [r.x.0, r.x.1, r.t, r.y.0, r.y.1, r.s, r.value, r.bound, r.margin].map(|v| format!("{v:.12e}")),
            )?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn kernel_bound_suite(model: &ShrinkerModel, count: usize, window: SampleWindow, seed: u64) -> Result<KernelBoundSummary> {
    let n = model.n as f64;
    let mu = model.mu;
    let eps = window.epsilon;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut summary = KernelBoundSummary {
        model: model.name(),
        samples: 0,
        skipped: 0,
        positivity_failures: 0,
        ultracontractive_failures: 0,
        worst_ultra_ratio: 0.0,
        lower_constant: f64::INFINITY,
        sharpened_constant: f64::INFINITY,
        tails: Vec::new(),
        tails_decreasing: true,
        rows: Vec::with_capacity(count),
    };
    for _ in 0..count {
        let t = rng.gen_range(-1.0 / window.delta..1.0 - window.delta);
        let elapsed = rng.gen_range(window.min_elapsed..2.0);
        let s = t - elapsed;
        let x = Point::random(model, rng.gen_range(0.0..window.reach / 2.0), &mut rng);
        let y = Point::random(model, rng.gen_range(0.0..window.reach / 2.0), &mut rng);
        let p = model.base_point();
        if model.distance(&p, &y, t) + elapsed.sqrt() > window.reach {
            summary.skipped += 1;
            continue;
        }
        let sample = match heat_kernel(model, &x, t, &y, s) {
            Ok(v) => v,
            Err(Error::Unresolved(_)) => {
                summary.skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        summary.samples += 1;
        if !(sample.value > 0.0) {
            summary.positivity_failures += 1;
        }
        let bound = (-mu).exp() * (4.0 * PI * elapsed).powf(-n / 2.0);
        let ratio = sample.value / bound;
        summary.worst_ultra_ratio = summary.worst_ultra_ratio.max(ratio);
        if sample.value > bound + sample.error {
            summary.ultracontractive_failures += 1;
        }
        let d = model.distance(&x, &y, t);
        let normalized = sample.value.ln() + 0.5 * n * (4.0 * PI * elapsed).ln() + d * d / ((4.0 - eps) * elapsed);
        let c = ((normalized - mu * (4.0 / eps - 1.0)) * eps / 4.0).exp();
        summary.lower_constant = summary.lower_constant.min(c);
        let (_, rho_y) = y.polar();
        let f_yt = (1.0 - t) * model.potential(rho_y / (1.0 - t).sqrt());
        let sharpened = normalized + 4.0 * elapsed / (3.0 * (1.0 - t).powi(2) * eps) * f_yt;
        summary.sharpened_constant = summary.sharpened_constant.min(sharpened);
        summary.rows.push(SweepRow {
            x: x.polar(),
            t,
            y: y.polar(),
            s,
            value: sample.value,
            bound,
            margin: bound - sample.value,
        });
    }
    // tails at (t, s) = (0, -1)
    let mut prev = f64::INFINITY;
    for r in [2.0, 4.0, 8.0] {
        let tail = tail_mass(model, 0.0, -1.0, r)?;
        let exponent = -(r - 1.0f64).powi(2) / (4.0 * (1.0 + eps));
        let log_tail = tail.max(1e-300).ln();
        summary.tails_decreasing &= tail <= prev;
        prev = tail;
        summary.tails.push(TailRecord {
            r,
            log_tail,
            exponent,
            constant: log_tail - exponent,
        });
    }
    Ok(summary)
}

// ---------------------------------------------------------------------------
// Concentration and log-Sobolev for the kernel measure

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnulusPair {
    pub inner: f64,
    pub gap: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogSobolevRecord {
    pub density: String,
    pub entropy: f64,
    /// (t-s)∫|∇ρ|²/ρ dv_s
    pub fisher: f64,
    pub defect: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationSummary {
    pub model: String,
    pub t: f64,
    pub s: f64,
    pub sigma: f64,
    pub pairs: Vec<AnnulusPair>,
    pub log_sobolev: Vec<LogSobolevRecord>,
}

/// A = B_s(x, a), B = M∖B_s(x, a + r): v(A)v(B)^{1/σ} ≤ e^{-r²/(4(1+σ)(t-s))}.
pub fn concentration_suite(
    model: &ShrinkerModel,
    t: f64,
    s: f64,
    sigma: f64,
    inner: &[f64],
    gaps: &[f64],
) -> Result<ConcentrationSummary> {
    let elapsed = t - s;
    let mut pairs = Vec::new();
    for &a in inner {
        let va = 1.0 - tail_mass(model, t, s, a)?;
        for &r in gaps {
            let vb = tail_mass(model, t, s, a + r)?;
            if va <= 0.0 || vb <= 0.0 {
                continue;
            }
            let lhs = va * vb.powf(1.0 / sigma);
            let rhs = (-r * r / (4.0 * (1.0 + sigma) * elapsed)).exp();
            pairs.push(AnnulusPair {
                inner: a,
                gap: r,
                lhs,
                rhs,
                holds: lhs < rhs,
            });
        }
    }
    let mut log_sobolev = Vec::new();
    for (name, density) in kernel_density_battery(model) {
        let sides = kernel_log_sobolev(model, &density, t, s)?;
        log_sobolev.push(LogSobolevRecord {
            density: name.to_string(),
            entropy: sides.0,
            fisher: sides.1,
            defect: sides.1 - sides.0,
        });
    }
    Ok(ConcentrationSummary {
        model: model.name(),
        t,
        s,
        sigma,
        pairs,
        log_sobolev,
    })
}

/// Six densities: constant, flat tilt, flat bump, sphere wave, tilt × wave,
/// sphere cap.
pub fn kernel_density_battery(model: &ShrinkerModel) -> Vec<(&'static str, TestFunction)> {
    let mut out = vec![("constant", TestFunction::constant())];
    if model.has_flat() {
        out.push(("tilt", TestFunction::planar(|x, _| (x.exp(), (2.0 * x).exp()))));
        out.push((
            "bump",
            TestFunction::radial(|r| {
                let v = 1.0 + (-r * r).exp();
                (v, -2.0 * r * (-r * r).exp())
            }),
        ));
    }
    if model.has_sphere() {
        out.push(("wave", TestFunction::on_sphere(|th| (1.0 + 0.5 * th.cos(), -0.5 * th.sin()))));
        out.push(("cap", TestFunction::on_sphere(|th| (2.0f64 + th.cos().powi(3), -3.0 * th.cos().powi(2) * th.sin()))));
    }
    if model.has_flat() && model.has_sphere() {
        let mut tw = TestFunction::planar(|x, _| ((0.5 * x).exp(), 0.25 * x.exp()));
        tw.sphere = Some(Arc::new(|th: f64| (1.0 + 0.5 * th.cos(), -0.5 * th.sin())));
        out.push(("tilt-wave", tw));
    }
    if !model.has_flat() {
        out.push(("wave2", TestFunction::on_sphere(|th| (1.0 + 0.9 * th.cos(), -0.9 * th.sin()))));
        out.push(("soft", TestFunction::on_sphere(|th| (3.0 + (2.0 * th).cos(), -2.0 * (2.0 * th).sin()))));
        out.push(("band", TestFunction::on_sphere(|th| (2.0 + th.sin().powi(2), (2.0 * th).sin()))));
    }
    if !model.has_sphere() {
        out.push(("tilt2", TestFunction::planar(|x, q| ((0.5 * x - 0.1 * q * q).exp(), ((0.25 + 0.04 * q * q) * (x - 0.2 * q * q).exp())))));
        out.push(("quartic", TestFunction::radial(|r| (1.0 + r * r / (1.0 + r * r), 2.0 * r / (1.0 + r * r).powi(2)))));
        out.push(("wide", TestFunction::radial(|r| (1.0 + 0.5 * (-r * r / 4.0).exp(), -0.25 * r * (-r * r / 4.0).exp()))));
    }
    out.truncate(6);
    out
}

/// (Ent_v(ρ), (t-s)·Fisher_v(ρ)) for v = H(p,t,·,s)dV_s.
pub fn kernel_log_sobolev(model: &ShrinkerModel, density: &TestFunction, t: f64, s: f64) -> Result<(f64, f64)> {
    let elapsed = t - s;
    let a_s = model.has_sphere().then(|| model.radius() * (1.0 - s).sqrt());
    let (k, a) = (model.sphere_dim(), if model.has_sphere() { model.radius() } else { 1.0 });
    let m = model.flat_dim();
    let sphere_density = move |g: f64| -> f64 { sphere_kernel(k, a, g, t, s).map(|v| v.value).unwrap_or(f64::NAN) };
    let flat_density = move |r: f64| flat_kernel(m, r, elapsed);
    let be = entropy_fisher(model, density, a_s, &sphere_density, &flat_density)?;
    Ok((be.entropy, elapsed * be.fisher))
}

// ---------------------------------------------------------------------------
// Gradient estimates

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GradientField {
    Constant { value: f64 },
    /// Flat-factor kernel started `offset` before the field's time origin.
    RestartedKernel { offset: f64 },
    /// 1 + ε e₁(t) cos θ on the sphere factor.
    SphereMode { epsilon: f64 },
}

/// u, |∇u|, Δu at reduced (θ, ρ) and elapsed time τ since `start`.
fn field_eval(model: &ShrinkerModel, field: GradientField, start: f64, elapsed: f64, theta: f64, rho: f64) -> (f64, f64, f64) {
    match field {
        GradientField::Constant { value } => (value, 0.0, 0.0),
        GradientField::RestartedKernel { offset } => {
            let m = model.flat_dim().max(1);
            let d = elapsed + offset;
            let u = flat_kernel(m, rho, d);
            (u, u * rho / (2.0 * d), u * (rho * rho / (4.0 * d * d) - m as f64 / (2.0 * d)))
        }
        GradientField::SphereMode { epsilon } => {
            let k = model.sphere_dim() as f64;
            let a = model.radius();
            let t = start + elapsed;
            let lambda = k / (a * a);
            let e1 = ((1.0 - t) / (1.0 - start)).powf(lambda);
            let at = a * (1.0 - t).sqrt();
            (
                1.0 + epsilon * e1 * theta.cos(),
                epsilon * e1 * theta.sin().abs() / at,
                -lambda / (1.0 - t) * epsilon * e1 * theta.cos(),
            )
        }
    }
}

fn field_sup(model: &ShrinkerModel, field: GradientField) -> f64 {
    match field {
        GradientField::Constant { value } => value,
        GradientField::RestartedKernel { offset } => flat_kernel(model.flat_dim().max(1), 0.0, offset),
        GradientField::SphereMode { epsilon } => 1.0 + epsilon.abs(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientSummary {
    pub model: String,
    pub field: GradientField,
    pub nodes: usize,
    /// min over nodes of RHS - LHS in |∇u|/u ≤ √(1/t)√(log Λ/u).
    pub gradient_margin: f64,
    /// min over pairs and σ of RHS - LHS in the Harnack-type bound.
    pub harnack_margin: f64,
    /// max over nodes of t(|Δu| + |∇u|²/u - ΛR)/Λ.
    pub laplacian_constant: f64,
}

pub fn gradient_estimate_check(model: &ShrinkerModel, field: GradientField, start: f64, elapsed: f64) -> Result<GradientSummary> {
    if !(elapsed > 0.0 && start + elapsed < 1.0) {
        return Err(Error::Precondition(format!("need 0 < elapsed and start + elapsed < 1, got {start}, {elapsed}")));
    }
    if let GradientField::SphereMode { epsilon } = field {
        if epsilon.abs() >= 1.0 || !model.has_sphere() {
            return Err(Error::Precondition("sphere mode needs a sphere factor and |ε| < 1".into()));
        }
    }
    if let GradientField::Constant { value } = field {
        if value <= 0.0 {
            return Err(Error::Precondition("field must be positive".into()));
        }
    }
    let t = start + elapsed;
    let lam = field_sup(model, field);
    let scalar = model.scalar_curvature() / (1.0 - t);
    let mut pts = Vec::new();
    for i in 0..10 {
        for j in 0..10 {
            let theta = if model.has_sphere() { PI * (i as f64 + 0.5) / 10.0 } else { 0.0 };
            let rho = if model.has_flat() { 0.4 * j as f64 } else { 0.0 };
            pts.push((theta, rho));
        }
    }
    let mut grad_margin = f64::INFINITY;
    let mut lap_const: f64 = f64::NEG_INFINITY;
    let mut vals = Vec::with_capacity(pts.len());
    for &(th, rho) in &pts {
        let (u, g, l) = field_eval(model, field, start, elapsed, th, rho);
        if !(u > 0.0) {
            return Err(Error::Precondition("field has zeros; log-gradient undefined".into()));
        }
        let rhs = (1.0 / elapsed).sqrt() * (lam / u).ln().max(0.0).sqrt();
        grad_margin = grad_margin.min(rhs - g / u);
        lap_const = lap_const.max(elapsed * (l.abs() + g * g / u - lam * scalar) / lam);
        vals.push(u);
    }
    let mut harnack = f64::INFINITY;
    let a2 = if model.has_sphere() { model.radius().powi(2) * (1.0 - t) } else { 0.0 };
    for (i, &(th1, r1)) in pts.iter().enumerate().step_by(7) {
        for (j, &(th2, r2)) in pts.iter().enumerate().step_by(3) {
            let d2 = a2 * (th1 - th2).powi(2) + (r1 - r2).powi(2);
            for sigma in [0.5, 1.0, 2.0] {
                let rhs = lam.powf(sigma / (1.0 + sigma)) * vals[i].powf(1.0 / (1.0 + sigma)) * (d2 / (4.0 * sigma * elapsed)).exp();
                harnack = harnack.min(rhs - vals[j]);
            }
        }
    }
    Ok(GradientSummary {
        model: model.name(),
        field,
        nodes: pts.len(),
        gradient_margin: grad_margin,
        harnack_margin: harnack,
        laplacian_constant: lap_const,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelKind;

    fn model(kind: ModelKind, n: usize, k: Option<usize>) -> ShrinkerModel {
        ShrinkerModel::new(kind, n, k).unwrap()
    }

    #[test]
    fn s3_series_matches_image_sum() {
        // unit-rate S³ kernel: e^{T}(4πT)^{-3/2} Σ_m (γ+2πm)/sin γ e^{-(γ+2πm)²/(4T)}
        // with T = log((1-s)/(1-t)) / a² and volume scale a_s³
        let a = 2.0f64;
        let (t, s) = (0.3f64, -0.2f64);
        let big_t = ((1.0 - s) / (1.0 - t)).ln() / (a * a);
        for g in [0.3, 1.0, 2.5] {
            let images: f64 = (-5..=5)
                .map(|m| {
                    let x = g + 2.0 * PI * m as f64;
                    x / g.sin() * (-x * x / (4.0 * big_t)).exp()
                })
                .sum();
            let unit = big_t.exp() * (4.0 * PI * big_t).powf(-1.5) * images;
            let expect = unit / (a * a * (1.0 - s)).powf(1.5);
            let got = sphere_kernel(3, a, g, t, s).unwrap();
            assert!((got.value / expect - 1.0).abs() < 1e-10, "{} {}", got.value, expect);
        }
    }

    #[test]
    fn series_derivatives_match_differences() {
        let (k, a, t, s) = (2, 2f64.sqrt(), 0.2, -0.4);
        let g = 0.9;
        let h = 1e-4;
        let f = |g: f64| sphere_kernel(k, a, g, t, s).unwrap();
        let c = f(g);
        let d1 = (f(g + h).value - f(g - h).value) / (2.0 * h);
        let d2 = (f(g + h).value - 2.0 * c.value + f(g - h).value) / (h * h);
        assert!((c.d_gamma - d1).abs() < 1e-7);
        assert!((c.d2_gamma - d2).abs() < 1e-5);
        let at2 = a * a * (1.0 - t);
        let lap = (d2 + (k as f64 - 1.0) * g.cos() / g.sin() * d1) / at2;
        assert!((c.laplacian - lap).abs() < 1e-5);
        // ∂_t H = Δ H
        let dt = (sphere_kernel(k, a, g, t + h, s).unwrap().value - sphere_kernel(k, a, g, t - h, s).unwrap().value) / (2.0 * h);
        assert!((dt - c.laplacian).abs() < 1e-6);
    }

    #[test]
    fn gaussian_kernel_matches_closed_form() {
        let g = model(ModelKind::Gaussian, 3, None);
        let x = Point::reduced(&g, 0.0, 1.0);
        let y = Point::reduced(&g, 0.0, 0.0);
        let exact = flat_kernel(3, 1.0, 0.5);
        let spec = heat_kernel(&g, &x, 0.0, &y, -0.5).unwrap();
        assert!((spec.value / exact - 1.0).abs() < 1e-14);
        for dir in [Direction::Forward, Direction::Backward] {
            let fd = heat_kernel_fd(&g, &x, 0.0, &y, -0.5, dir).unwrap();
            assert!((fd.value / exact - 1.0).abs() < 1e-5, "{:?} {} {}", dir, fd.value, exact);
        }
    }

    #[test]
    fn cylinder_fd_matches_series() {
        let c = model(ModelKind::Cylinder, 3, Some(2));
        let x = Point::reduced(&c, 0.8, 0.5);
        let y = c.base_point();
        let spec = heat_kernel(&c, &x, 0.3, &y, -0.2).unwrap();
        for dir in [Direction::Forward, Direction::Backward] {
            let fd = heat_kernel_fd(&c, &x, 0.3, &y, -0.2, dir).unwrap();
            assert!((fd.value / spec.value - 1.0).abs() < 1e-5, "{dir:?} {} {}", fd.value, spec.value);
        }
    }

    #[test]
    fn mass_identities_on_cylinder() {
        let c = model(ModelKind::Cylinder, 4, Some(2));
        let (t, s) = (0.5, -0.5);
        let (ms, mt) = mass_identities(&c, t, s).unwrap();
        assert!((ms - 1.0).abs() < 1e-9);
        assert!((mt - ((1.0 - t) / (1.0 - s))).abs() < 1e-9);
    }

    #[test]
    fn semigroup_on_gaussian_and_cylinder() {
        let g = model(ModelKind::Gaussian, 2, None);
        let x = Point::reduced(&g, 0.0, 1.0);
        let (d, e) = semigroup_defect(&g, &x, 0.0, &g.base_point(), -1.0, -0.5).unwrap();
        assert!(d < 1e-10 && e < 1e-8, "{d} {e}");
        let c = model(ModelKind::Cylinder, 4, Some(3));
        let x = Point::reduced(&c, 1.2, 0.4);
        let (d, _) = semigroup_defect(&c, &x, 0.2, &c.base_point(), -0.6, -0.1).unwrap();
        assert!(d < 1e-8, "{d}");
        assert!(semigroup_defect(&c, &x, 0.2, &c.base_point(), -0.6, 0.4).is_err());
    }

    #[test]
    fn heat_solver_examples() {
        let g = model(ModelKind::Gaussian, 2, None);
        let opts = HeatOptions::default();
        let c = solve_heat(&g, &InitialData::constant(3.0), 0.0, 0.5, opts).unwrap();
        assert!((c.value(&g, c.times.len() - 1, 0.0, 1.0) - 3.0).abs() < 1e-15);
        // variance 2σ² → 2σ² + 2Δ in each coordinate
        let sig2 = 0.5;
        let field = solve_heat(&g, &InitialData::flat(move |r| (-r * r / (4.0 * sig2)).exp()), 0.0, 0.5, opts).unwrap();
        let last = field.times.len() - 1;
        for r in [0.0, 0.7, 1.5] {
            let exact = (sig2 / (sig2 + 0.5)) * (-r * r / (4.0 * (sig2 + 0.5))).exp();
            assert!((field.value(&g, last, 0.0, r) - exact).abs() < 2e-4);
        }
        assert!(field.sup(&g, last) <= field.sup(&g, 0) + 1e-8);
        assert!(field.residual(&g) < 1e-6, "{}", field.residual(&g));
    }

    #[test]
    fn sphere_mode_decays_at_the_spectral_rate() {
        let c = model(ModelKind::Cylinder, 4, Some(2));
        let (t0, t1) = (-0.5, 0.5);
        let field = solve_heat(&c, &InitialData::sphere(|th| th.cos()), t0, t1, HeatOptions { h: 0.01, dt: 2e-3 }).unwrap();
        let lambda = 2.0 / c.radius().powi(2);
        let expect = ((1.0 - t1) / (1.0 - t0)).powf(lambda);
        let got = field.value(&c, field.times.len() - 1, 0.0, 0.0);
        assert!((got - expect).abs() < 1e-4, "{got} {expect}");
    }

    #[test]
    fn conjugate_solver_preserves_mass_and_special_solution() {
        let c = model(ModelKind::Cylinder, 4, Some(2));
        let (t0, t1) = (-0.5, 0.5);
        let bump = InitialData::sphere(|th| (-4.0 * th * th).exp() + 0.1).with_flat(|r| (-r * r).exp());
        let field = solve_conjugate(&c, &bump, t0, t1, HeatOptions::default()).unwrap();
        let m0 = field.mass(&c, 0);
        for step in [0, field.times.len() / 4, field.times.len() / 2, field.times.len() - 1] {
            assert!((field.mass(&c, step) / m0 - 1.0).abs() < 1e-6);
        }
        // v̄ = (4πτ̄)^{-n/2} e^{-|x|²/(4τ̄) - k/2} is a conjugate solution
        let n = c.n as f64;
        let half_k = c.sphere_dim() as f64 / 2.0;
        let vbar = |r: f64, t: f64| (4.0 * PI * (1.0 - t)).powf(-n / 2.0) * (-r * r / (4.0 * (1.0 - t)) - half_k).exp();
        let tb1 = 1.0 - t1;
        let data = InitialData {
            scale: vbar(0.0, t1),
            ..InitialData::flat(move |r| (-r * r / (4.0 * tb1)).exp())
        };
        let back = solve_conjugate(&c, &data, t0, t1, HeatOptions { h: 0.005, dt: 5e-4 }).unwrap();
        let last = back.times.len() - 1;
        assert_eq!(back.times[last], t0);
        for r in [0.0, 1.0, 2.5] {
            let got = back.value(&c, last, 0.7, r);
            assert!((got / vbar(r, t0) - 1.0).abs() < 1e-5, "{got} {}", vbar(r, t0));
        }
    }

    #[test]
    fn time_step_order() {
        let g = model(ModelKind::Gaussian, 2, None);
        let data = InitialData::flat(|r| (-r * r / 2.0).exp());
        let r1 = solve_heat(&g, &data, 0.0, 0.4, HeatOptions { h: 0.02, dt: 4e-3 }).unwrap().residual(&g);
        let r2 = solve_heat(&g, &data, 0.0, 0.4, HeatOptions { h: 0.02, dt: 2e-3 }).unwrap().residual(&g);
        assert!(r1 / r2 >= 3.5, "{r1} {r2}");
    }

    #[test]
    fn tails_and_concentration() {
        let g = model(ModelKind::Gaussian, 3, None);
        let t = tail_mass(&g, 0.0, -1.0, 2.0).unwrap();
        // 1D-in-radius oracle
        let area = sphere_area(2);
        let direct = quad::adaptive(2.0, 40.0, 1e-12, 1.0, |r| area * r * r * flat_kernel(3, r, 1.0)).unwrap().value;
        assert!((t - direct).abs() < 1e-10);
        let c = model(ModelKind::Cylinder, 4, Some(2));
        let summary = concentration_suite(&c, 0.0, -1.0, 1.0, &[0.5, 1.0, 2.0], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(summary.pairs.len(), 12);
        assert!(summary.pairs.iter().all(|p| p.holds));
        assert!(summary.log_sobolev.iter().all(|r| r.defect >= -1e-8), "{:?}", summary.log_sobolev);
    }

    #[test]
    fn gaussian_tilt_is_log_sobolev_extremal() {
        let g = model(ModelKind::Gaussian, 2, None);
        let tilt = TestFunction::planar(|x, _| (x.exp(), (2.0 * x).exp()));
        let (ent, fis) = kernel_log_sobolev(&g, &tilt, 0.0, -1.0).unwrap();
        assert!((fis - ent).abs() < 1e-6, "{ent} {fis}");
    }

    #[test]
    fn gradient_fields() {
        let g = model(ModelKind::Gaussian, 2, None);
        let r = gradient_estimate_check(&g, GradientField::RestartedKernel { offset: 0.5 }, -0.5, 1.0).unwrap();
        assert!(r.gradient_margin >= 0.0 && r.harnack_margin >= 0.0);
        let r = gradient_estimate_check(&g, GradientField::Constant { value: 2.0 }, -0.5, 1.0).unwrap();
        assert_eq!(r.gradient_margin, 0.0);
        let c = model(ModelKind::Cylinder, 4, Some(2));
        let r = gradient_estimate_check(&c, GradientField::SphereMode { epsilon: 0.5 }, -1.0, 0.8).unwrap();
        assert!(r.gradient_margin > 0.0 && r.harnack_margin > 0.0);
        assert!(r.laplacian_constant.is_finite());
    }

    #[test]
    fn ultracontractivity_samples() {
        for m in [model(ModelKind::Gaussian, 2, None), model(ModelKind::Cylinder, 4, Some(2)), model(ModelKind::Sphere, 3, None)] {
            let s = kernel_bound_suite(&m, 50, SampleWindow::default(), 7).unwrap();
            assert_eq!(s.ultracontractive_failures, 0);
            assert_eq!(s.positivity_failures, 0);
            assert!(s.tails_decreasing);
        }
    }
}
