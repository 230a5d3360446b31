//! Reduced length and reduced distance, the kernel lower bound built from
//! them, and the differential Harnack quantity of the conjugate kernel.
//!
//! Paths are parametrized by σ = √(t - z), in which
//! L(γ) = ½∫|β'(σ)|²_{g(t-σ²)} dσ + ∫ 2σ² R(t - σ²) dσ.
//! On the catalog the scalar curvature term does not see the path and the
//! kinetic term splits into a great-circle angle and a flat segment
//! coordinate.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::F_at;
use crate::heat::{flat_kernel, heat_kernel, sphere_kernel};
use crate::models::{Point, ShrinkerModel};
use crate::quad;

const REFINE_TOL: f64 = 1e-6;
const START_INTERVALS: usize = 16;
const MAX_INTERVALS: usize = 1 << 13;

/// A discretized path from (x, t) at σ = 0 to (y, s) at σ = √(t-s).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LPath {
    pub x: Point,
    pub t: f64,
    pub y: Point,
    pub s: f64,
    pub sigma: Vec<f64>,
    /// Angle along the great circle from x toward y.
    pub angle: Vec<f64>,
    /// Position along the flat segment from x toward y.
    pub flat: Vec<f64>,
    pub kinetic: f64,
    pub curvature: f64,
    pub length: f64,
}

impl LPath {
    pub fn reduced_distance(&self) -> f64 {
        self.length / (2.0 * (self.t - self.s).sqrt())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["sigma", "angle", "flat"])?;
        for i in 0..self.sigma.len() {
            w.write_record([self.sigma[i], self.angle[i], self.flat[i]].map(|v| format!("{v:.12e}")))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// ∫_s^t √(t-z) R(z) dz = k(σ̄ - c·atan(σ̄/c)), c = √(1-t).
pub fn curvature_length(model: &ShrinkerModel, t: f64, s: f64) -> f64 {
    if !model.has_sphere() {
        return 0.0;
    }
    let (sb, c) = ((t - s).sqrt(), (1.0 - t).sqrt());
    2.0 * model.scalar_curvature() * (sb - c * (sb / c).atan())
}

/// Kinetic weights ∫ g(t-σ²) dσ per interval for the sphere (radius a at
/// t = 0) and the flat factor.
fn weights(model: &ShrinkerModel, sigma: &[f64], t: f64) -> (Vec<f64>, Vec<f64>) {
    let a2 = if model.has_sphere() { model.radius().powi(2) } else { 0.0 };
    let c2 = 1.0 - t;
    sigma
        .windows(2)
        .map(|w| {
            let ds = w[1] - w[0];
            (a2 * (c2 * ds + (w[1].powi(3) - w[0].powi(3)) / 3.0) / (ds * ds), 1.0 / ds)
        })
        .unzip()
}

/// ½Σ w_i (Δβ_i)² and its gradient in the interior nodes.
fn kinetic(w: &[f64], path: &[f64], grad: &mut [f64]) -> f64 {
    let mut value = 0.0;
    grad.iter_mut().for_each(|g| *g = 0.0);
    let n = path.len() - 1;
    for i in 0..n {
        let d = path[i + 1] - path[i];
        value += 0.5 * w[i] * d * d;
        if i >= 1 {
            grad[i - 1] -= w[i] * d;
        }
        if i + 1 < n {
            grad[i] += w[i] * d;
        }
    }
    value
}

/// Polak–Ribière conjugate gradient on the interior nodes of a path with
/// fixed endpoints, with a secant line search.
fn minimize_path(w: &[f64], start: &[f64]) -> Result<(Vec<f64>, f64)> {
    let n = start.len() - 1;
    let mut path = start.to_vec();
    if n < 2 {
        let mut g = vec![0.0; n.saturating_sub(1)];
        return Ok((path.clone(), kinetic(w, &path, &mut g)));
    }
    let m = n - 1;
    let mut g = vec![0.0; m];
    let mut value = kinetic(w, &path, &mut g);
    let scale = w.iter().cloned().fold(0.0, f64::max).max(1e-300);
    let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
    let mut g_old = g.clone();
    let mut trial = path.clone();
    let mut g_trial = vec![0.0; m];
    let max_iter = 20 * m + 100;
    for iter in 0..max_iter {
        let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if gnorm <= 1e-13 * scale {
            return Ok((path, value));
        }
        // exact for quadratics: α = -g·d / dᵀAd with Ad from a gradient difference
        let slope: f64 = g.iter().zip(&d).map(|(a, b)| a * b).sum();
        if slope >= 0.0 {
            d = g.iter().map(|v| -v).collect();
            continue;
        }
        let probe = 1.0 / scale;
        for i in 0..m {
            trial[i + 1] = path[i + 1] + probe * d[i];
        }
        kinetic(w, &trial, &mut g_trial);
        let curv: f64 = g_trial.iter().zip(&g).zip(&d).map(|((a, b), c)| (a - b) * c).sum::<f64>() / probe;
        if !(curv > 0.0) {
            return Err(Error::Stagnation { best: value, gradient: gnorm });
        }
        let alpha = -slope / curv;
        for i in 0..m {
            path[i + 1] += alpha * d[i];
        }
        g_old.copy_from_slice(&g);
        let new_value = kinetic(w, &path, &mut g);
        if new_value > value + 1e-14 * value.abs().max(1.0) {
            return Err(Error::Stagnation { best: value, gradient: gnorm });
        }
        value = new_value;
        let num: f64 = g.iter().zip(&g_old).map(|(a, b)| a * (a - b)).sum();
        let den: f64 = g_old.iter().map(|v| v * v).sum();
        let beta = if (iter + 1) % m == 0 { 0.0 } else { (num / den).max(0.0) };
        for i in 0..m {
            d[i] = -g[i] + beta * d[i];
        }
    }
    let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    Err(Error::Stagnation { best: value, gradient: gnorm })
}

/// Best of the straight, constant and (optionally) prolonged starts.
fn best_path(w: &[f64], total: f64, sigma: &[f64], prolonged: Option<&[f64]>) -> Result<(Vec<f64>, f64)> {
    let sb = *sigma.last().expect("grid");
    let n = sigma.len();
    let straight: Vec<f64> = sigma.iter().map(|s| total * s / sb).collect();
    let mut constant = vec![0.0; n];
    constant[n - 1] = total;
    let mut starts = vec![straight, constant];
    if let Some(p) = prolonged {
        starts.push(p.to_vec());
    }
    let mut best: Option<(Vec<f64>, f64)> = None;
    for st in starts {
        let r = minimize_path(w, &st)?;
        if best.as_ref().is_none_or(|b| r.1 < b.1) {
            best = Some(r);
        }
    }
    Ok(best.expect("at least one start"))
}

fn prolong(coarse: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * coarse.len() - 1);
    for w in coarse.windows(2) {
        out.push(w[0]);
        out.push(0.5 * (w[0] + w[1]));
    }
    out.push(*coarse.last().expect("non-empty"));
    out
}

fn path_at(model: &ShrinkerModel, x: &Point, t: f64, y: &Point, s: f64, intervals: usize, prev: Option<&LPath>) -> Result<LPath> {
    let sb = (t - s).sqrt();
    let sigma: Vec<f64> = (0..=intervals).map(|i| sb * i as f64 / intervals as f64).collect();
    let (ws, wf) = weights(model, &sigma, t);
    let gamma = x.sphere_angle(y);
    let dist = x.flat_distance_sq(y).sqrt();
    let (angle, ks) = if model.has_sphere() {
        let pro = prev.map(|p| prolong(&p.angle));
        best_path(&ws, gamma, &sigma, pro.as_deref())?
    } else {
        (vec![0.0; sigma.len()], 0.0)
    };
    let (flat, kf) = if model.has_flat() {
        let pro = prev.map(|p| prolong(&p.flat));
        best_path(&wf, dist, &sigma, pro.as_deref())?
    } else {
        (vec![0.0; sigma.len()], 0.0)
    };
    let curvature = curvature_length(model, t, s);
    Ok(LPath {
        x: x.clone(),
        t,
        y: y.clone(),
        s,
        sigma,
        angle,
        flat,
        kinetic: ks + kf,
        curvature,
        length: ks + kf + curvature,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReducedDistance {
    pub l: f64,
    /// |l(N) - l(N/2)| at the returned resolution.
    pub refinement: f64,
    pub path: LPath,
}

/// l = inf L / (2√(t-s)) over symmetric piecewise-linear paths, doubling
/// the resolution until two levels agree.
pub fn reduced_distance(model: &ShrinkerModel, x: &Point, t: f64, y: &Point, s: f64) -> Result<ReducedDistance> {
    if !(s < t && t < 1.0) {
        return Err(Error::Precondition(format!("need s < t < 1, got s = {s}, t = {t}")));
    }
    let mut prev = path_at(model, x, t, y, s, START_INTERVALS, None)?;
    let mut intervals = START_INTERVALS;
    while intervals < MAX_INTERVALS {
        intervals *= 2;
        let next = path_at(model, x, t, y, s, intervals, Some(&prev))?;
        let diff = (next.reduced_distance() - prev.reduced_distance()).abs();
        if diff <= REFINE_TOL {
            return Ok(ReducedDistance {
                l: next.reduced_distance(),
                refinement: diff,
                path: next,
            });
        }
        prev = next;
    }
    Err(Error::NotConverged {
        iterations: intervals,
        residual: prev.reduced_distance(),
    })
}

/// l at `levels` successive doublings of the path resolution, warm-started
/// from each coarser level.
pub fn reduced_distance_levels(model: &ShrinkerModel, x: &Point, t: f64, y: &Point, s: f64, levels: usize) -> Result<Vec<f64>> {
    if !(s < t && t < 1.0) {
        return Err(Error::Precondition(format!("need s < t < 1, got s = {s}, t = {t}")));
    }
    let mut out = Vec::with_capacity(levels);
    let mut prev: Option<LPath> = None;
    let mut intervals = START_INTERVALS;
    for _ in 0..levels {
        let p = path_at(model, x, t, y, s, intervals, prev.as_ref())?;
        out.push(p.reduced_distance());
        prev = Some(p);
        intervals *= 2;
    }
    Ok(out)
}

/// Closed form on the catalog: sphere ½a²γ²c/atan(σ̄/c), flat |Δ|²/(2σ̄).
pub fn reduced_distance_exact(model: &ShrinkerModel, gamma: f64, dist: f64, t: f64, s: f64) -> f64 {
    let (sb, c) = ((t - s).sqrt(), (1.0 - t).sqrt());
    let mut length = dist * dist / (2.0 * sb) + curvature_length(model, t, s);
    if model.has_sphere() {
        length += 0.5 * model.radius().powi(2) * gamma * gamma * c / (sb / c).atan();
    }
    length / (2.0 * sb)
}

/// Dynamic programming over a (σ, angle) lattice for two points that differ
/// only on the sphere factor.
pub fn reduced_distance_lattice(model: &ShrinkerModel, gamma: f64, t: f64, s: f64, steps: usize, per_step: usize) -> f64 {
    let sb = (t - s).sqrt();
    let sigma: Vec<f64> = (0..=steps).map(|i| sb * i as f64 / steps as f64).collect();
    let (ws, _) = weights(model, &sigma, t);
    let cells = steps * per_step;
    let unit = gamma / cells as f64;
    let band = 3 * per_step;
    let mut cost = vec![f64::INFINITY; cells + 1];
    cost[0] = 0.0;
    for w in ws {
        let mut next = vec![f64::INFINITY; cells + 1];
        for (j, &c) in cost.iter().enumerate() {
            if !c.is_finite() {
                continue;
            }
            for dj in 0..=band.min(cells - j) {
                let d = dj as f64 * unit;
                let v = c + 0.5 * w * d * d;
                if v < next[j + dj] {
                    next[j + dj] = v;
                }
            }
        }
        cost = next;
    }
    (cost[cells] + curvature_length(model, t, s)) / (2.0 * sb)
}

// ---------------------------------------------------------------------------
// Kernel lower bound

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowerBound {
    pub kernel: f64,
    pub bound: f64,
    pub margin: f64,
    /// Kernel error plus the bound's sensitivity to the refinement of l.
    pub error: f64,
    pub l: f64,
}

/// H(x,t,y,s) against e^{-l}/(4π(t-s))^{n/2}.
pub fn kernel_lower_defect(model: &ShrinkerModel, x: &Point, t: f64, y: &Point, s: f64) -> Result<LowerBound> {
    let h = heat_kernel(model, x, t, y, s)?;
    let rd = reduced_distance(model, x, t, y, s)?;
    let bound = (-rd.l).exp() * (4.0 * PI * (t - s)).powf(-(model.n as f64) / 2.0);
    Ok(LowerBound {
        kernel: h.value,
        bound,
        margin: h.value - bound,
        error: h.error + bound * rd.refinement,
        l: rd.l,
    })
}

// ---------------------------------------------------------------------------
// Harnack quantity

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HarnackSample {
    pub base: Point,
    pub base_time: f64,
    pub x: Point,
    pub t: f64,
    pub b: f64,
    pub grad_sq: f64,
    pub laplacian: f64,
    pub v: f64,
    /// Largest disagreement between difference quotients and series
    /// derivatives of b.
    pub consistency: f64,
}

/// log H(q,T,·,t) as a function of angle and flat distance, with analytic
/// |∇ log H|² and Δ log H in the time-t metric.
fn log_kernel(model: &ShrinkerModel, gamma: f64, r: f64, big_t: f64, t: f64) -> Result<(f64, f64, f64)> {
    let tau = big_t - t;
    let (mut lh, mut g2, mut lap) = (0.0, 0.0, 0.0);
    if model.has_sphere() {
        let (k, a) = (model.sphere_dim(), model.radius());
        let sk = sphere_kernel(k, a, gamma, big_t, t)?;
        if sk.value <= 1e3 * sk.error {
            return Err(Error::Unresolved(format!("kernel below series noise at angle {gamma:.3}")));
        }
        let at2 = a * a * (1.0 - t);
        let d1 = sk.d_gamma / sk.value;
        lh += sk.value.ln();
        g2 += d1 * d1 / at2;
        // Δ log H = ΔH/H - |∇ log H|²
        lap += -sk.eigen_sum / at2 / sk.value - d1 * d1 / at2;
    }
    if model.has_flat() {
        let m = model.flat_dim() as f64;
        lh += -0.5 * m * (4.0 * PI * tau).ln() - r * r / (4.0 * tau);
        g2 += (r / (2.0 * tau)).powi(2);
        lap += -m / (2.0 * tau);
    }
    Ok((lh, g2, lap))
}

/// Orthonormal tangent vectors at a unit vector in R^{k+1}.
fn tangent_frame(p: &[f64]) -> Vec<Vec<f64>> {
    let dim = p.len();
    let mut frame: Vec<Vec<f64>> = Vec::new();
    for e in 0..dim {
        let mut v = vec![0.0; dim];
        v[e] = 1.0;
        for q in std::iter::once(p).chain(frame.iter().map(|f| f.as_slice())) {
            let dot: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(q).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-6 {
            frame.push(v.into_iter().map(|a| a / norm).collect());
        }
        if frame.len() + 1 == dim {
            break;
        }
    }
    frame
}

/// b and v at x with fourth-order differences along geodesics of g(t),
/// checked against the series derivatives.
pub fn harnack_sample(model: &ShrinkerModel, q: &Point, big_t: f64, x: &Point, t: f64) -> Result<HarnackSample> {
    let tau = big_t - t;
    if !(tau > 0.0 && big_t < 1.0) {
        return Err(Error::Precondition(format!("need t < T < 1, got t = {t}, T = {big_t}")));
    }
    let n = model.n as f64;
    let norm = -0.5 * n * (4.0 * PI * tau).ln();
    let b_at = |p: &Point| -> Result<f64> {
        let (lh, _, _) = log_kernel(model, q.sphere_angle(p), q.flat_distance_sq(p).sqrt(), big_t, t)?;
        Ok(norm - lh)
    };
    let (lh, g2_exact, lap_exact) = log_kernel(model, q.sphere_angle(x), q.flat_distance_sq(x).sqrt(), big_t, t)?;
    let b = norm - lh;
    let h = 0.02 * tau.sqrt().min(1.0);
    let mut g2 = 0.0;
    let mut lap = 0.0;
    let mut directions: Vec<Box<dyn Fn(f64) -> Point + '_>> = Vec::new();
    if model.has_sphere() {
        let at = model.radius() * (1.0 - t).sqrt();
        for e in tangent_frame(&x.sphere) {
            directions.push(Box::new(move |d: f64| {
                let (c, s) = ((d / at).cos(), (d / at).sin());
                Point {
                    sphere: x.sphere.iter().zip(&e).map(|(p, v)| c * p + s * v).collect(),
                    flat: x.flat.clone(),
                }
            }));
        }
    }
    for i in 0..model.flat_dim() {
        directions.push(Box::new(move |d: f64| {
            let mut p = x.clone();
            p.flat[i] += d;
            p
        }));
    }
    for walk in &directions {
        let f = |j: f64| b_at(&walk(j * h));
        let (m2, m1, p1, p2) = (f(-2.0)?, f(-1.0)?, f(1.0)?, f(2.0)?);
        let d1 = (m2 - 8.0 * m1 + 8.0 * p1 - p2) / (12.0 * h);
        let d2 = (-m2 + 16.0 * m1 - 30.0 * b + 16.0 * p1 - p2) / (12.0 * h * h);
        g2 += d1 * d1;
        lap += d2;
    }
    let scalar = model.scalar_curvature() / (1.0 - t);
    let v = tau * (2.0 * lap - g2 + scalar) + b - n;
    let consistency = ((g2 - g2_exact).abs() / (1.0 + g2_exact.abs())).max((lap + lap_exact).abs() / (1.0 + lap_exact.abs()));
    Ok(HarnackSample {
        base: q.clone(),
        base_time: big_t,
        x: x.clone(),
        t,
        b,
        grad_sq: g2,
        laplacian: lap,
        v,
        consistency,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HarnackSummary {
    pub model: String,
    pub samples: usize,
    pub skipped: usize,
    pub max_v: f64,
    pub max_consistency: f64,
    pub records: Vec<HarnackSample>,
}

/// v at seeded samples with τ ∈ [tau_min, tau_max] and x within a few
/// heat radii of q, base point q and base time T.
pub fn harnack_check(
    model: &ShrinkerModel,
    big_t: f64,
    count: usize,
    (tau_min, tau_max): (f64, f64),
    seed: u64,
) -> Result<HarnackSummary> {
    if !(big_t < 1.0 && tau_min > 0.0 && tau_min <= tau_max) {
        return Err(Error::Precondition(format!("bad Harnack window T = {big_t}, τ ∈ [{tau_min}, {tau_max}]")));
    }
    let q = model.base_point();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jobs: Vec<(f64, Point)> = (0..count)
        .map(|_| {
            let tau = tau_min * (tau_max / tau_min).powf(rng.gen::<f64>());
            let reach = 3.0 * tau.sqrt();
            let mut x = Point::random(model, rng.gen_range(0.0..reach), &mut rng);
            if model.has_sphere() {
                let at = model.radius() * (1.0 - big_t + tau).sqrt();
                let theta = rng.gen_range(0.0..(reach / at).min(PI));
                let (_, rho) = x.polar();
                let mut p = Point::reduced(model, theta, rho);
                p.flat = x.flat.clone();
                x = p;
            }
            (tau, x)
        })
        .collect();
    let results: Vec<Result<HarnackSample>> = jobs
        .par_iter()
        .map(|(tau, x)| harnack_sample(model, &q, big_t, x, big_t - tau))
        .collect();
    let mut summary = HarnackSummary {
        model: model.name(),
        samples: 0,
        skipped: 0,
        max_v: f64::NEG_INFINITY,
        max_consistency: 0.0,
        records: Vec::new(),
    };
    for r in results {
        match r {
            Ok(s) => {
                summary.samples += 1;
                summary.max_v = summary.max_v.max(s.v);
                summary.max_consistency = summary.max_consistency.max(s.consistency);
                summary.records.push(s);
            }
            Err(Error::Unresolved(_)) => summary.skipped += 1,
            Err(e) => return Err(e),
        }
    }
    Ok(summary)
}

/// ∫ b w dV_t with w = H(p,T,·,t), τ = T - t.
pub fn b_mean(model: &ShrinkerModel, big_t: f64, tau: f64) -> Result<f64> {
    let t = big_t - tau;
    let mut total = 0.0;
    if model.has_flat() {
        // Gaussian entropy of the flat factor: -∫G log((4πτ)^{m/2} G) = m/2
        let m = model.flat_dim();
        let area = quad::sphere_area(m - 1);
        let reach = 40.0 * tau.sqrt();
        total += quad::adaptive(0.0, reach, 1e-12, 1.0, |r| {
            area * r.powi(m as i32 - 1) * flat_kernel(m, r, tau) * r * r / (4.0 * tau)
        })?
        .value;
    }
    if model.has_sphere() {
        let (k, a) = (model.sphere_dim(), model.radius());
        let at = a * (1.0 - t).sqrt();
        let area = quad::sphere_area(k - 1);
        let norm = -0.5 * k as f64 * (4.0 * PI * tau).ln();
        // the kernel is negligible beyond a few heat radii
        let edge = (14.0 * tau.sqrt() / at).min(PI);
        let mut failure = None;
        let v = quad::adaptive(0.0, edge, 1e-12, 1.0, |g| match sphere_kernel(k, a, g, big_t, t) {
            Ok(h) if h.value > 0.0 => area * (at * g.sin()).powi(k as i32 - 1) * at * h.value * (norm - h.value.ln()),
            Ok(_) => 0.0,
            Err(e) => {
                failure.get_or_insert(e);
                0.0
            }
        })?;
        if let Some(e) = failure {
            return Err(e);
        }
        total += v.value;
    }
    Ok(total)
}

/// b-mean at τ₁ > τ₂, extrapolated linearly to τ = 0.
pub fn b_mean_limit(model: &ShrinkerModel, big_t: f64, taus: (f64, f64)) -> Result<(f64, f64, f64)> {
    let (t1, t2) = taus;
    let (m1, m2) = (b_mean(model, big_t, t1)?, b_mean(model, big_t, t2)?);
    Ok((m1, m2, (t1 * m2 - t2 * m1) / (t1 - t2)))
}

/// Points on the model at (θ, ρ) grid used by the Gaussian identity check.
pub fn harnack_grid(model: &ShrinkerModel, q: &Point, big_t: f64, tau: f64) -> Result<Vec<HarnackSample>> {
    let mut out = Vec::with_capacity(100);
    for i in 0..10 {
        for j in 0..10 {
            let theta = if model.has_sphere() { PI * (i as f64 + 0.5) / 10.0 } else { 0.0 };
            let rho = if model.has_flat() { 0.3 * j as f64 } else { 0.0 };
            let mut x = Point::reduced(model, theta, rho);
            if model.flat_dim() >= 2 {
                x.flat[1] = 0.2 * i as f64;
            }
            out.push(harnack_sample(model, q, big_t, &x, big_t - tau)?);
        }
    }
    Ok(out)
}

/// (t-s)F(y,t)/(3(1-t)²), the constant-path bound at x = y.
pub fn constant_path_bound(model: &ShrinkerModel, y: &Point, t: f64, s: f64) -> Result<f64> {
    let f = F_at(model, y, t)?.f;
    Ok((t - s) * f / (3.0 * (1.0 - t).powi(2)))
}
