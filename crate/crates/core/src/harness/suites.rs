//! The verification suites. Each suite turns module computations into
//! [`CheckReport`]s for one model (or, for `gap` and part of `rigidity`,
//! for the catalog as a whole).

use std::f64::consts::PI;
use std::path::Path;
use std::sync::OnceLock;

use serde_json::json;
use statrs::function::gamma::gamma;

use super::config::RunConfig;
use super::report::CheckReport;
use super::volumes::{gap_experiment, no_local_collapsing_suite, pseudo_locality_scale, weighted_curvature_integrals};
use crate::entropy::{
    bakry_emery_defect, energy_sandwich, local_nu, log_spaced, minimize_mu, mu_profile, sobolev_constant,
    w_functional, Domain, EntropyProfile, TestFunction,
};
use crate::error::{Error, Result};
use crate::flow::{
    closed_form_trajectory, cutoff_constants, diffeo_trajectory, flowline_potential_bound, potential_growth_bounds,
    pulled_back_metric, F_at,
};
use crate::heat::{
    concentration_suite, flat_kernel, gradient_estimate_check, heat_kernel, heat_kernel_fd, kernel_bound_suite,
    mass_identities, semigroup_defect, solve_conjugate, solve_heat, Direction, GradientField, HeatOptions, InitialData,
};
use crate::lgeo::{
    b_mean_limit, constant_path_bound, harnack_check, harnack_grid, kernel_lower_defect, reduced_distance,
    reduced_distance_exact, reduced_distance_lattice,
};
use crate::models::{
    curvature_spectrum, rigidity_condition, rigidity_quadratic_oracle, volume_ball, CurvatureSpectrum, Point,
    ShrinkerModel,
};

/// A model plus lazily computed data shared between suites.
pub struct ModelContext {
    pub model: ShrinkerModel,
    profile: OnceLock<std::result::Result<EntropyProfile, String>>,
}

impl ModelContext {
    pub fn new(model: ShrinkerModel) -> Self {
        Self {
            model,
            profile: OnceLock::new(),
        }
    }

    pub fn profile(&self, cfg: &RunConfig) -> Result<&EntropyProfile> {
        let g = &cfg.tau_grid;
        self.profile
            .get_or_init(|| mu_profile(&self.model, &log_spaced(g.min, g.max, g.points)).map_err(|e| e.to_string()))
            .as_ref()
            .map_err(|e| Error::Precondition(format!("entropy profile unavailable: {e}")))
    }
}

/// Name a check; the runner prefixes suite and model.
trait Named {
    fn named(self, name: &str) -> Self;
}

impl Named for CheckReport {
    fn named(mut self, name: &str) -> Self {
        self.id = name.to_string();
        self
    }
}

fn pt(model: &ShrinkerModel, theta: f64, rho: f64) -> Point {
    Point::reduced(model, theta, rho)
}

/// Reduced sample points (θ, ρ) spread over both factors.
fn sample_points(model: &ShrinkerModel) -> Vec<(f64, f64)> {
    let thetas: &[f64] = if model.has_sphere() { &[0.0, 0.3, 1.7, PI] } else { &[0.0] };
    let rhos: &[f64] = if model.has_flat() { &[0.0, 0.5, 1.5, 3.0] } else { &[0.0] };
    thetas.iter().flat_map(|&t| rhos.iter().map(move |&r| (t, r))).collect()
}

/// Area of S^k from the Gamma function.
fn sphere_area_closed(k: usize) -> f64 {
    let h = (k as f64 + 1.0) / 2.0;
    2.0 * PI.powf(h) / gamma(h)
}

/// μ from the closed-form factor integrals.
pub fn entropy_constant_closed(model: &ShrinkerModel) -> f64 {
    if !model.has_sphere() {
        return 0.0;
    }
    let k = model.sphere_dim() as f64;
    let a = model.radius();
    (sphere_area_closed(model.sphere_dim()) * a.powf(k)).ln() - k / 2.0 - k / 2.0 * (4.0 * PI).ln()
}

/// ∫ e^{-λf} dV from the closed-form factor integrals.
pub fn weighted_volume_closed(model: &ShrinkerModel, lambda: f64) -> f64 {
    let m = model.flat_dim() as f64;
    let mut v = (4.0 * PI / lambda).powf(m / 2.0);
    if model.has_sphere() {
        let k = model.sphere_dim();
        v *= sphere_area_closed(k) * model.radius().powi(k as i32) * (-lambda * k as f64 / 2.0).exp();
    }
    v
}

/// Curvature-operator eigenvalues from the product structure: c_k copies
/// of 1/a² and zeros.
pub fn analytic_spectrum(model: &ShrinkerModel) -> Vec<f64> {
    let n = model.n;
    let k = model.sphere_dim();
    let curved = k * k.saturating_sub(1) / 2;
    let mut v = vec![0.0; n * (n - 1) / 2 - curved];
    if k > 0 {
        v.extend(std::iter::repeat_n(1.0 / model.radius().powi(2), curved));
    }
    v
}

// ---------------------------------------------------------------------------

pub fn geometry(cfg: &RunConfig, ctx: &ModelContext) -> Result<Vec<CheckReport>> {
    let m = &ctx.model;
    let tol = &cfg.tolerances;
    let rhos: Vec<f64> = m.flat_grid().map_or(vec![0.0], |g| g.nodes);
    let thetas: Vec<f64> = m.sphere_grid().map_or(vec![0.0], |g| g.nodes);
    let max_over = |f: &dyn Fn(f64) -> f64| rhos.iter().map(|&r| f(r).abs()).fold(0.0, f64::max);
    let inputs = json!({"model": m.spec(), "nodes": rhos.len()});
    let mut out = vec![
        CheckReport::identity("shrinker-equation", &inputs, max_over(&|r| m.shrinker_residual(r)), tol.identity),
        CheckReport::identity("potential-normalization", &inputs, max_over(&|r| m.normalization_residual(r)), tol.identity),
        CheckReport::identity("trace-identity", &inputs, max_over(&|r| m.trace_residual(r)), tol.identity),
        CheckReport::bound("scalar-curvature-sign", &inputs, 0.0, m.scalar_curvature(), 0.0),
    ];
    // quadratic growth of the potential at t = 0 over the product grid
    let n = m.n as f64;
    let mut worst: f64 = f64::NEG_INFINITY;
    for &th in thetas.iter().step_by(4) {
        for &rho in rhos.iter().step_by(4) {
            let d = m.distance_to_base(th, rho);
            let f = m.potential(rho);
            let lower = 0.25 * (d - 5.0 * n - 4.0).max(0.0).powi(2);
            let upper = 0.25 * (d + (2.0 * n).sqrt()).powi(2);
            worst = worst.max(lower - f).max(f - upper);
        }
    }
    out.push(CheckReport::bound("potential-growth", &inputs, worst, 0.0, 1e-12).named("potential-growth"));
    out.push(CheckReport::bound("base-potential", &inputs, m.potential(0.0), n / 2.0, 1e-12));
    let unit = volume_ball(m, 1.0)?;
    let ratio = unit / m.mu.exp();
    out.push(
        CheckReport::recorded("unit-ball-volume", &inputs, unit, m.mu.exp())
            .with("ratio", ratio)
            .with("C", ratio.max(ratio.recip())),
    );
    Ok(out)
}

pub fn flow(cfg: &RunConfig, ctx: &ModelContext) -> Result<Vec<CheckReport>> {
    let m = &ctx.model;
    let tol = &cfg.tolerances;
    let n = m.n;
    let times = [-4.0, -1.0, 0.0, 0.5, 0.9];
    let (mut ident, mut heat, mut conj, mut traj, mut metric, mut growth) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64, f64::NEG_INFINITY);
    for &t in &times {
        for &(th, rho) in &sample_points(m) {
            let x = pt(m, th, rho);
            let q = F_at(m, &x, t)?;
            ident = q.identity_residuals(n).iter().fold(ident, |a, r| a.max(r.abs()));
            heat = heat.max(q.special_heat_residual(n).abs());
            conj = conj.max(q.conjugate_residual(n).abs());
            let num = diffeo_trajectory(m, &x, t)?;
            let exact = closed_form_trajectory(&x, t);
            let scale = exact.flat.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
            traj = traj.max(num.flat_distance_sq(&exact).sqrt() / scale);
            let (sph, flat) = pulled_back_metric(m, rho, t)?;
            metric = metric.max((sph - (1.0 - t)).abs()).max((flat - 1.0).abs());
            let (lo, f, hi) = potential_growth_bounds(m, &x, t)?;
            growth = growth.max(lo - f).max(f - hi);
        }
    }
    let inputs = json!({"model": m.spec(), "times": times, "points": sample_points(m)});
    let mut out = vec![
        CheckReport::identity("flow-identities", &inputs, ident, tol.flow),
        CheckReport::identity("special-heat-solution", &inputs, heat, tol.special_solution),
        CheckReport::identity("conjugate-special-solution", &inputs, conj, tol.special_solution),
        CheckReport::identity("trajectory", &inputs, traj, tol.flow),
        CheckReport::identity("pulled-back-metric", &inputs, metric, tol.flow),
        CheckReport::bound("potential-growth-flow", &inputs, growth, 0.0, 1e-12),
    ];
    let base = F_at(m, &m.base_point(), 0.0)?;
    out.push(CheckReport::bound("base-potential-flow", &inputs, base.f, n as f64 / 2.0, 1e-12));
    let mut worst: f64 = f64::NEG_INFINITY;
    for t in [0.0, 0.5, 0.9] {
        for &(th, rho) in &sample_points(m) {
            let (lhs, rhs) = flowline_potential_bound(m, &pt(m, th, rho), t)?;
            worst = worst.max(lhs - rhs);
        }
    }
    out.push(CheckReport::bound("flowline-potential", &inputs, worst, 0.0, tol.flow));
    let scales = [1.0, 4.0, 16.0, 64.0];
    let ctimes = [-4.0, -2.0, -1.0, 0.0, 0.5, 0.9];
    let fams = scales
        .iter()
        .map(|&r| cutoff_constants(m, r, &ctimes, 200))
        .collect::<Result<Vec<_>>>()?;
    let max_of = |f: &dyn Fn(&crate::flow::CutoffFamily) -> f64| fams.iter().map(f).fold(0.0, f64::max);
    let c = max_of(&|f| f.grad_ratio).max(max_of(&|f| f.time_derivative)).max(max_of(&|f| f.heat_operator));
    out.push(
        CheckReport::recorded("cutoff-bounds", &json!({"model": m.spec(), "r": scales, "t": ctimes}), c, 0.0)
            .with("eta_ratio", fams[0].eta_ratio)
            .with("grad_ratio", max_of(&|f| f.grad_ratio))
            .with("time_derivative", max_of(&|f| f.time_derivative))
            .with("heat_operator", max_of(&|f| f.heat_operator))
            .note("quintic smoothstep profile on [1, 2]; constants are sampled suprema over r in {1, 4, 16, 64}"),
    );
    Ok(out)
}

fn spectrum_defect(model: &ShrinkerModel, s: &CurvatureSpectrum) -> f64 {
    let exact = analytic_spectrum(model);
    if exact.len() != s.eigenvalues.len() {
        return f64::MAX;
    }
    exact.iter().zip(&s.eigenvalues).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

pub fn rigidity(cfg: &RunConfig, ctx: &ModelContext) -> Result<Vec<CheckReport>> {
    let m = &ctx.model;
    let tol = &cfg.tolerances;
    let mut out = Vec::new();
    let mut defect: f64 = 0.0;
    let mut sum: f64 = 0.0;
    let mut spectrum = None;
    for &(th, rho) in &sample_points(m) {
        let s = curvature_spectrum(m, &pt(m, th, rho))?;
        defect = defect.max(spectrum_defect(m, &s));
        sum = sum.max((s.sum() - m.scalar_curvature() / 2.0).abs());
        spectrum.get_or_insert(s);
    }
    let spectrum = spectrum.expect("at least one sample point");
    let inputs = json!({"model": m.spec(), "points": sample_points(m)});
    out.push(CheckReport::identity("curvature-spectrum", &inputs, defect, tol.spectrum));
    out.push(CheckReport::identity("spectrum-trace", &inputs, sum, tol.spectrum));
    let inputs = json!({"model": m.spec(), "trials": cfg.oracle_trials, "seed": cfg.seed});
    match rigidity_condition(&spectrum, m.scalar_curvature()) {
        Ok(o) => {
            out.push(
                CheckReport::holds("rigidity-threshold", &inputs, o.passes)
                    .with("epsilon", o.epsilon)
                    .with("threshold", o.threshold)
                    .with("lambda1", o.lambda1)
                    .with("lambda2", o.lambda2),
            );
            let p = rigidity_quadratic_oracle(o.lambda1, o.lambda2, m.scalar_curvature(), m.n, cfg.oracle_trials, cfg.seed);
            if o.passes {
                out.push(CheckReport::bound("rigidity-quadratic", &inputs, -p, 0.0, tol.oracle).with("min_p", p));
            }
        }
        Err(Error::RigidityUndefined(n)) => out.push(
            CheckReport::recorded("rigidity-threshold", &inputs, 0.0, 0.0)
                .note(format!("threshold undefined in dimension {n}: c_n - 2 <= 0")),
        ),
        Err(e) => return Err(e),
    }
    Ok(out)
}

/// Catalog-level rigidity checks on synthetic spectra.
pub fn rigidity_synthetic(cfg: &RunConfig) -> Result<Vec<CheckReport>> {
    let spectrum = CurvatureSpectrum {
        eigenvalues: vec![-1.0, -0.5, 0.5, 0.5, 0.5, 0.5],
    };
    let o = rigidity_condition(&spectrum, 1.0)?;
    let p_fail = rigidity_quadratic_oracle(-1.0, -0.4, 1.0, 4, cfg.oracle_trials, cfg.seed);
    let p_pass = rigidity_quadratic_oracle(-1.0, 0.0, 1.0, 4, cfg.oracle_trials, cfg.seed);
    let inputs = json!({"spectrum": spectrum.eigenvalues, "R": 1.0, "trials": cfg.oracle_trials, "seed": cfg.seed});
    Ok(vec![
        CheckReport::holds("rigidity-threshold", &inputs, !o.passes)
            .named("synthetic-rejected")
            .with("threshold", o.threshold),
        CheckReport::recorded("rigidity-quadratic", &inputs, p_fail, 0.0)
            .named("synthetic-negative")
            .note("λ₁ = -1, λ₂ = -0.4: the quadratic form can be negative"),
        CheckReport::bound("rigidity-quadratic", &inputs, 2.0, p_pass, cfg.tolerances.oracle)
            .named("synthetic-positive")
            .with("min_p", p_pass),
    ])
}

pub fn entropy(cfg: &RunConfig, ctx: &ModelContext, out_dir: Option<&Path>) -> Result<Vec<CheckReport>> {
    let m = &ctx.model;
    let tol = &cfg.tolerances;
    let n = m.n;
    let inputs = json!({"model": m.spec()});
    let closed = entropy_constant_closed(m);
    let mut out = vec![CheckReport::identity("entropy-constant", &inputs, m.mu - closed, tol.entropy_constant)
        .with("mu", m.mu)
        .with("closed_form", closed)];
    let unit = minimize_mu(m, 1.0, None)?;
    let w = w_functional(m, &TestFunction::soliton(m)?.normalized(m)?, 1.0)?;
    out.push(
        CheckReport::identity("carrillo-ni", &inputs, unit.mu - w.value, tol.carrillo_ni)
            .with("mu_tau1", unit.mu)
            .with("w_soliton", w.value),
    );
    if m.is_flat() {
        for tau in [0.25, 4.0] {
            let r = minimize_mu(m, tau, None)?;
            out.push(
                CheckReport::identity("flat-entropy", &json!({"model": m.spec(), "tau": tau}), r.mu, tol.gaussian_entropy)
                    .named(&format!("flat-entropy-tau{tau}")),
            );
        }
    }
    let profile = ctx.profile(cfg)?;
    if let Some(dir) = out_dir {
        profile.write_csv(&dir.join(format!("profile_{}.csv", m.name())))?;
    }
    let pin = json!({"model": m.spec(), "tau_grid": cfg.tau_grid});
    out.push(
        CheckReport::bound("entropy-monotonicity", &pin, profile.worst_violation, 1.0, 0.0)
            .with("decreasing_below_one", f64::from(u8::from(profile.decreasing_below_one)))
            .with("increasing_above_one", f64::from(u8::from(profile.increasing_above_one)))
            .note("violations are measured in units of twice the per-node certificate"),
    );
    if m.is_flat() {
        // μ ≡ 0 on flat space, so the minimum is not localized; check flatness instead
        let worst = profile.nodes.iter().map(|nd| nd.mu.abs()).fold(0.0, f64::max);
        out.push(CheckReport::identity("entropy-minimum", &pin, worst, tol.gaussian_entropy).named("flat-profile"));
    } else {
        out.push(CheckReport::holds("entropy-minimum", &pin, profile.min_at_one && profile.argmin_brackets_one).with("mu_tau1", profile.at_one.mu));
    }
    let first = &profile.nodes[0];
    out.push(
        CheckReport::identity("bounded-geometry-limit", &pin, first.mu, tol.bounded_geometry)
            .with("tau", first.tau)
            .with("mu", first.mu),
    );
    if n >= 3 {
        let ratio = sobolev_constant(m)?;
        out.push(CheckReport::recorded("sobolev", &inputs, ratio, 0.0).with("C", ratio));
        let c = ratio * (-2.0 * m.mu / n as f64).exp();
        let sw = energy_sandwich(n, unit.mu, unit.scaled_energy, c);
        out.push(
            CheckReport::bound("energy-sandwich", &inputs, -(sw.middle - sw.lower).min(sw.upper - sw.middle), 0.0, 0.0)
                .with("lower", sw.lower)
                .with("middle", sw.middle)
                .with("upper", sw.upper)
                .note("Sobolev constant taken as the best ratio over the test family"),
        );
    }
    let mut battery: Vec<(&str, TestFunction)> = vec![("constant", TestFunction::constant())];
    if m.has_flat() {
        battery.push(("tilt", TestFunction::planar(|x, _| (x.exp(), (2.0 * x).exp()))));
        battery.push((
            "bump",
            TestFunction::radial(|r| (1.0 + (-r * r).exp(), -2.0 * r * (-r * r).exp())),
        ));
    }
    if m.has_sphere() {
        battery.push(("wave", TestFunction::on_sphere(|th| (1.0 + 0.5 * th.cos(), -0.5 * th.sin()))));
    }
    let mut worst = f64::MAX;
    let mut tilt_defect = None;
    for (name, rho) in &battery {
        let be = bakry_emery_defect(m, rho)?;
        worst = worst.min(be.defect);
        if *name == "tilt" {
            tilt_defect = Some(be.defect);
        }
    }
    let bin = json!({"model": m.spec(), "densities": battery.iter().map(|b| b.0).collect::<Vec<_>>()});
    out.push(CheckReport::bound("bakry-emery", &bin, -worst, 0.0, tol.log_sobolev).with("min_defect", worst));
    if let (true, Some(d)) = (m.is_flat(), tilt_defect) {
        out.push(CheckReport::identity("bakry-emery-equality", &bin, d, tol.equality));
    }
    let nu = local_nu(m, Some(&Domain::Ball { radius: 1.0 }), 1.0)?;
    out.push(
        CheckReport::bound("local-entropy", &json!({"model": m.spec(), "ball": 1.0, "tau": 1.0}), m.mu, nu.value, 1e-6)
            .with("nu", nu.value)
            .with("argmin", nu.argmin),
    );
    Ok(out)
}

pub fn heat(cfg: &RunConfig, ctx: &ModelContext) -> Result<Vec<CheckReport>> {
    let m = &ctx.model;
    let tol = &cfg.tolerances;
    let opts = HeatOptions::default();
    let mut out = Vec::new();
    let (t0, t1) = (-0.5, 0.5);
    let inputs = json!({"model": m.spec(), "t0": t0, "t1": t1, "h": opts.h, "dt": opts.dt});
    let c = solve_heat(m, &InitialData::constant(3.0), t0, t1, opts)?;
    let last = c.times.len() - 1;
    out.push(CheckReport::identity("heat-constant", &inputs, c.value(m, last, 0.4, 1.0) - 3.0, 1e-12));
    let data = match (m.has_sphere(), m.has_flat()) {
        (true, true) => InitialData::sphere(|th| 1.0 + 0.5 * th.cos()).with_flat(|r| (-r * r / 2.0).exp()),
        (true, false) => InitialData::sphere(|th| 1.0 + 0.5 * th.cos()),
        _ => InitialData::flat(|r| (-r * r / 2.0).exp()),
    };
    let field = solve_heat(m, &data, t0, t1, opts)?;
    let last = field.times.len() - 1;
    out.push(CheckReport::bound("heat-residual", &inputs, field.residual(m), 0.0, tol.heat_residual));
    out.push(CheckReport::bound("maximum-principle", &inputs, field.sup(m, last), field.sup(m, 0), tol.maximum_principle));
    if m.is_flat() {
        // e^{-r²/4σ²} with σ² = 1/2 spreads to σ² + (t1 - t0)
        let sig2 = 0.5;
        let el = t1 - t0;
        let worst = [0.0, 0.7, 1.5, 3.0]
            .iter()
            .map(|&r| {
                let exact = (sig2 / (sig2 + el)).powf(m.n as f64 / 2.0) * (-r * r / (4.0 * (sig2 + el))).exp();
                (field.value(m, last, 0.0, r) - exact).abs()
            })
            .fold(0.0, f64::max);
        out.push(CheckReport::identity("heat-closed-form", &inputs, worst, tol.heat_mode));
    }
    if m.has_sphere() {
        let fine = HeatOptions { h: 0.01, dt: 2e-3 };
        let mode = solve_heat(m, &InitialData::sphere(|th| th.cos()), t0, t1, fine)?;
        let lambda = m.sphere_dim() as f64 / m.radius().powi(2);
        let expect = ((1.0 - t1) / (1.0 - t0)).powf(lambda);
        let got = mode.value(m, mode.times.len() - 1, 0.0, 0.0);
        out.push(
            CheckReport::identity("spectral-decay", &json!({"model": m.spec(), "h": fine.h, "dt": fine.dt}), got - expect, tol.heat_mode)
                .with("expected", expect),
        );
    }
    let bump = match (m.has_sphere(), m.has_flat()) {
        (true, true) => InitialData::sphere(|th| (-4.0 * th * th).exp() + 0.1).with_flat(|r| (-r * r).exp()),
        (true, false) => InitialData::sphere(|th| (-4.0 * th * th).exp() + 0.1),
        _ => InitialData::flat(|r| (-r * r).exp()),
    };
    let back = solve_conjugate(m, &bump, t0, t1, opts)?;
    let m0 = back.mass(m, 0);
    let steps = back.times.len();
    let drift = (0..5)
        .map(|i| (back.mass(m, i * (steps - 1) / 4) / m0 - 1.0).abs())
        .fold(0.0, f64::max);
    out.push(CheckReport::identity("conjugate-mass", &inputs, drift, tol.conjugate_mass));
    out.push(CheckReport::bound("conjugate-residual", &inputs, back.residual(m), 0.0, tol.heat_residual));
    let order = {
        let coarse = solve_heat(m, &data, 0.0, 0.4, HeatOptions { h: 0.02, dt: 4e-3 })?.residual(m);
        let fine = solve_heat(m, &data, 0.0, 0.4, HeatOptions { h: 0.02, dt: 2e-3 })?.residual(m);
        coarse / fine
    };
    out.push(CheckReport::bound("time-step-order", &inputs, 3.5, order, 0.0).with("ratio", order));
    Ok(out)
}

pub fn kernel(cfg: &RunConfig, ctx: &ModelContext, out_dir: Option<&Path>) -> Result<Vec<CheckReport>> {
    let m = &ctx.model;
    let tol = &cfg.tolerances;
    let mut out = Vec::new();
    let s = kernel_bound_suite(m, cfg.kernel_samples, cfg.window, cfg.seed)?;
    if let Some(dir) = out_dir {
        s.write_csv(&dir.join(format!("kernel_{}.csv", m.name())))?;
    }
    let inputs = json!({"model": m.spec(), "samples": cfg.kernel_samples, "window": cfg.window, "seed": cfg.seed});
    out.push(
        CheckReport::bound("ultracontractivity", &inputs, s.worst_ultra_ratio, 1.0, tol.ultracontractivity)
            .with("samples", s.samples as f64)
            .with("skipped", s.skipped as f64)
            .with("failures", s.ultracontractive_failures as f64),
    );
    out.push(CheckReport::holds("kernel-positivity", &inputs, s.positivity_failures == 0 && s.samples > 0));
    out.push(
        CheckReport::recorded("kernel-lower-bound", &inputs, s.lower_constant, 0.0)
            .with("C", s.lower_constant)
            .with("sharpened", s.sharpened_constant),
    );
    let mut tail = CheckReport::holds("kernel-tail", &inputs, s.tails_decreasing);
    for t in &s.tails {
        tail = tail.with(&format!("constant_r{}", t.r), t.constant);
    }
    out.push(tail);

    let (x, y, t, s0) = (pt(m, 0.8, 0.5), m.base_point(), 0.3, -0.2);
    let exact = heat_kernel(m, &x, t, &y, s0)?;
    let reference = if m.is_flat() {
        flat_kernel(m.n, x.flat_distance_sq(&y).sqrt(), t - s0)
    } else {
        exact.value
    };
    let fin = json!({"model": m.spec(), "x": x, "t": t, "y": y, "s": s0});
    let mut fd = Vec::new();
    for dir in [Direction::Forward, Direction::Backward] {
        let k = heat_kernel_fd(m, &x, t, &y, s0, dir)?;
        fd.push(k.value);
        out.push(
            CheckReport::identity("kernel-reference", &fin, k.value / reference - 1.0, tol.kernel_relative)
                .named(&format!("kernel-fd-{dir:?}").to_lowercase())
                .with("fd", k.value)
                .with("reference", reference),
        );
    }
    out.push(
        CheckReport::identity("kernel-duality", &fin, fd[0] / fd[1] - 1.0, tol.kernel_relative),
    );
    let (t, s1) = (0.5, -0.5);
    let (ms, mt) = mass_identities(m, t, s1)?;
    let k = m.sphere_dim() as f64;
    let min = json!({"model": m.spec(), "t": t, "s": s1});
    out.push(CheckReport::identity("mass-identity", &min, ms - 1.0, tol.mass).named("mass-earlier"));
    let expect = ((1.0 - t) / (1.0 - s1)).powf(k / 2.0);
    out.push(
        CheckReport::identity("mass-identity", &min, mt - expect, tol.mass)
            .named("mass-later")
            .with("expected", expect),
    );
    let (x, t, y, s2, mid) = (pt(m, 1.2, 0.4), 0.2, m.base_point(), -0.6, -0.1);
    let (d, e) = semigroup_defect(m, &x, t, &y, s2, mid)?;
    out.push(
        CheckReport::bound("semigroup", &json!({"model": m.spec(), "x": x, "t": t, "y": y, "s": s2, "mid": mid}), d, 0.0, tol.semigroup)
            .with("quadrature_error", e),
    );
    let mut fields = vec![GradientField::Constant { value: 1.0 }];
    if m.has_flat() {
        fields.push(GradientField::RestartedKernel { offset: 0.5 });
    }
    if m.has_sphere() {
        fields.push(GradientField::SphereMode { epsilon: 0.5 });
    }
    for f in fields {
        let g = gradient_estimate_check(m, f, -0.5, 1.0)?;
        let gin = json!({"model": m.spec(), "field": f, "start": -0.5, "elapsed": 1.0});
        let tag = serde_json::to_value(f)?["kind"].as_str().unwrap_or("field").to_string();
        out.push(CheckReport::bound("gradient-estimate", &gin, -g.gradient_margin, 0.0, 1e-12).named(&format!("gradient-{tag}")));
        out.push(CheckReport::bound("harnack-inequality", &gin, -g.harnack_margin, 0.0, 1e-12).named(&format!("harnack-{tag}")));
        out.push(
            CheckReport::recorded("laplacian-estimate", &gin, g.laplacian_constant, 0.0)
                .named(&format!("laplacian-{tag}"))
                .with("C", g.laplacian_constant),
        );
    }
    Ok(out)
}

pub fn concentration(cfg: &RunConfig, ctx: &ModelContext) -> Result<Vec<CheckReport>> {
    let m = &ctx.model;
    let tol = &cfg.tolerances;
    let (t, s, sigma) = (0.0, -1.0, 1.0);
    let inner = [0.5, 1.0, 2.0];
    let gaps = [0.5, 1.0, 2.0, 4.0];
    let c = concentration_suite(m, t, s, sigma, &inner, &gaps)?;
    let inputs = json!({"model": m.spec(), "t": t, "s": s, "sigma": sigma, "inner": inner, "gaps": gaps});
    let all = c.pairs.len() == inner.len() * gaps.len() && c.pairs.iter().all(|p| p.holds);
    let worst = c.pairs.iter().map(|p| p.lhs / p.rhs).fold(0.0, f64::max);
    let mut out = vec![CheckReport::holds("gaussian-concentration", &inputs, all)
        .with("pairs", c.pairs.len() as f64)
        .with("max_ratio", worst)];
    let min_defect = c.log_sobolev.iter().map(|r| r.defect).fold(f64::MAX, f64::min);
    out.push(CheckReport::bound("kernel-log-sobolev", &inputs, -min_defect, 0.0, tol.log_sobolev).with("densities", c.log_sobolev.len() as f64));
    if m.is_flat() {
        if let Some(r) = c.log_sobolev.iter().find(|r| r.density == "tilt") {
            out.push(CheckReport::identity("kernel-log-sobolev-equality", &inputs, r.defect, tol.equality));
        }
    }
    Ok(out)
}

pub fn lgeo(cfg: &RunConfig, ctx: &ModelContext, out_dir: Option<&Path>) -> Result<Vec<CheckReport>> {
    let m = &ctx.model;
    let tol = &cfg.tolerances;
    let mut out = Vec::new();
    let (t, s) = (0.0, -1.0);
    let pairs = [("diagonal", 0.0, 0.0), ("offset", 1.0, 1.0), ("antipodal", PI, 0.0)];
    for (name, th, rho) in pairs {
        if !m.has_sphere() && name == "antipodal" {
            continue;
        }
        let x = pt(m, th, rho);
        let y = m.base_point();
        let lb = kernel_lower_defect(m, &x, t, &y, s)?;
        let inputs = json!({"model": m.spec(), "x": x, "t": t, "y": y, "s": s});
        let check = if m.is_flat() {
            CheckReport::identity("reduced-lower-bound", &inputs, lb.margin, tol.equality)
        } else {
            CheckReport::bound("reduced-lower-bound", &inputs, lb.bound, lb.kernel, lb.error + 1e-14)
        };
        out.push(check.named(&format!("lower-bound-{name}")).with("l", lb.l).with("margin", lb.margin));
        let rd = reduced_distance(m, &x, t, &y, s)?;
        let exact = reduced_distance_exact(m, x.sphere_angle(&y), x.flat_distance_sq(&y).sqrt(), t, s);
        out.push(
            CheckReport::bound("reduced-distance", &inputs, (rd.l - exact).abs(), 0.0, tol.reduced_distance)
                .named(&format!("closed-form-{name}"))
                .with("l", rd.l)
                .with("exact", exact),
        );
        if name == "offset" {
            if let Some(dir) = out_dir {
                rd.path.write_csv(&dir.join(format!("lpath_{}.csv", m.name())))?;
            }
        }
    }
    let y = pt(m, 0.4, 1.0);
    let (t1, s1) = (0.5, 0.0);
    let rd = reduced_distance(m, &y, t1, &y, s1)?;
    let bound = constant_path_bound(m, &y, t1, s1)?;
    out.push(CheckReport::bound("constant-path", &json!({"model": m.spec(), "y": y, "t": t1, "s": s1}), rd.l, bound, 1e-9));
    if m.has_sphere() {
        let x = pt(m, PI / 2.0, 0.0);
        let cg = reduced_distance(m, &x, 0.5, &m.base_point(), 0.0)?.l;
        let dp = reduced_distance_lattice(m, PI / 2.0, 0.5, 0.0, 100, 100);
        out.push(
            CheckReport::identity("reduced-distance-lattice", &json!({"model": m.spec(), "angle": PI / 2.0, "lattice": [100, 100]}), cg - dp, tol.lattice)
                .with("l", cg)
                .with("lattice", dp),
        );
    }
    let big_t = 0.5;
    let window = (0.05, 0.5);
    let h = harnack_check(m, big_t, cfg.harnack_samples, window, cfg.seed)?;
    let hin = json!({"model": m.spec(), "T": big_t, "samples": cfg.harnack_samples, "tau": window, "seed": cfg.seed});
    out.push(
        CheckReport::bound("differential-harnack", &hin, h.max_v, 0.0, tol.harnack)
            .with("samples", h.samples as f64)
            .with("skipped", h.skipped as f64),
    );
    out.push(CheckReport::bound("harnack-consistency", &hin, h.max_consistency, 0.0, tol.consistency));
    if m.is_flat() {
        let grid = harnack_grid(m, &m.base_point(), big_t, 0.3)?;
        let worst = grid.iter().map(|s| s.v.abs()).fold(0.0, f64::max);
        out.push(CheckReport::identity("differential-harnack", &json!({"model": m.spec(), "T": big_t, "tau": 0.3, "grid": [10, 10]}), worst, tol.harnack_flat).named("harnack-grid"));
    }
    let taus = (1e-2, 1e-3);
    let (m1, m2, lim) = b_mean_limit(m, big_t, taus)?;
    out.push(
        CheckReport::identity("b-mean", &json!({"model": m.spec(), "T": big_t, "tau": taus}), lim - m.n as f64 / 2.0, tol.b_mean)
            .with("tau_1e-2", m1)
            .with("tau_1e-3", m2)
            .with("limit", lim),
    );
    Ok(out)
}

pub fn collapsing(cfg: &RunConfig, ctx: &ModelContext, out_dir: Option<&Path>) -> Result<Vec<CheckReport>> {
    let m = &ctx.model;
    let rec = no_local_collapsing_suite(m, &cfg.radii, cfg.volume_extent)?;
    if let Some(dir) = out_dir {
        let mut w = csv::Writer::from_path(dir.join(format!("volumes_{}.csv", m.name())))?;
        w.write_record(["r", "volume", "ratio", "small_ball"])?;
        for row in &rec.rows {
            w.write_record([row.r, row.volume, row.ratio, row.small_ball].map(|v| format!("{v:.12e}")))?;
        }
        w.flush()?;
    }
    let inputs = json!({"model": m.spec(), "radii": cfg.radii, "extent": cfg.volume_extent});
    let skipped = |c: CheckReport| {
        if rec.skipped.is_empty() {
            c
        } else {
            c.note(format!("radii {:?} exceed half the volume extent and were skipped", rec.skipped))
        }
    };
    let mut out = vec![
        skipped(CheckReport::recorded("volume-ratio-bracket", &inputs, rec.bracket_constant, 0.0).with("C", rec.bracket_constant)),
        CheckReport::recorded("small-ball-volume", &inputs, rec.small_ball_constant, 0.0)
            .with("C", rec.small_ball_constant)
            .note("the factors are homogeneous, so balls about q on either factor axis have the volume of balls about p"),
        CheckReport::recorded("volume-lower-bound", &inputs, rec.volume_lower_constant, 0.0).with("c", rec.volume_lower_constant),
        CheckReport::recorded("linear-volume-growth", &inputs, rec.linear_constant, 0.0).with("epsilon0", rec.linear_constant),
        CheckReport::recorded("volume-upper-bound", &inputs, rec.upper_constant, 0.0).with("C", rec.upper_constant),
    ];
    let finite = [rec.bracket_constant, rec.small_ball_constant, rec.volume_lower_constant, rec.linear_constant]
        .iter()
        .all(|c| c.is_finite() && *c > 0.0 && *c < f64::MAX);
    out.push(CheckReport::holds("volume-constants-finite", &inputs, finite && !rec.rows.is_empty()));
    if m.is_flat() {
        out.push(CheckReport::identity("euclidean-volume", &inputs, rec.euclidean_defect, cfg.tolerances.volume));
    }
    Ok(out)
}

pub fn pseudo_locality(cfg: &RunConfig, ctx: &ModelContext) -> Result<Vec<CheckReport>> {
    let m = &ctx.model;
    let profile = ctx.profile(cfg)?;
    let p = pseudo_locality_scale(m, profile, cfg.delta0)?;
    let inputs = json!({"model": m.spec(), "delta0": cfg.delta0, "tau_grid": cfg.tau_grid});
    let mut c = CheckReport::recorded("pseudo-locality-scale", &inputs, p.product.unwrap_or(0.0), 0.0).with("sup_rm", p.sup_rm);
    match (p.tau0, p.product) {
        (Some(t), Some(prod)) => c = c.with("tau0", t).with("C", prod),
        _ => c = c.note("tau0 = infinity: the profile stays above -delta0 on the grid"),
    }
    if p.below_grid {
        c = c.note("the profile is already below -delta0 at the smallest scale; tau0 is an upper bound");
    }
    Ok(vec![c.note("only the scale and curvature consequences are checked; general-position balls are not representable on the catalog")])
}

pub fn gap(cfg: &RunConfig, models: &[&ShrinkerModel]) -> Result<Vec<CheckReport>> {
    let owned: Vec<ShrinkerModel> = models.iter().map(|m| (*m).clone()).collect();
    let g = gap_experiment(&owned);
    let inputs = json!({"models": owned.iter().map(|m| m.spec()).collect::<Vec<_>>()});
    let mut out = Vec::new();
    for (name, mu) in &g.flat {
        out.push(CheckReport::identity("entropy-gap", &inputs, *mu, cfg.tolerances.entropy_constant).named(&format!("flat-{name}")));
    }
    match g.gap {
        Some(gap) => out.push(
            CheckReport::bound("entropy-gap", &inputs, -gap, 0.0, 0.0)
                .named("nonflat-negative")
                .with("gap", gap)
                .with("models", g.nonflat.len() as f64),
        ),
        None => out.push(CheckReport::recorded("entropy-gap", &inputs, 0.0, 0.0).named("nonflat-negative").note("no nonflat model in the catalog")),
    }
    if let Some(c) = out.last_mut() {
        if c.status == super::report::Status::Fail {
            // μ = 0 is attained only on flat space, so a nonpositive gap is a real failure
            c.notes.push("a nonflat model has nonnegative entropy".into());
        }
    }
    Ok(out)
}

pub fn curvature_integrals(cfg: &RunConfig, ctx: &ModelContext) -> Result<Vec<CheckReport>> {
    let m = &ctx.model;
    let ci = weighted_curvature_integrals(m, cfg.lambda)?;
    let (rm2, rc2) = m.curvature_norms();
    let rm_closed = rm2 * weighted_volume_closed(m, cfg.lambda);
    let rc_closed = rc2 * weighted_volume_closed(m, 1.0);
    let rel = |a: f64, b: f64| if b == 0.0 { a.abs() } else { a / b - 1.0 };
    let inputs = json!({"model": m.spec(), "lambda": cfg.lambda});
    Ok(vec![
        CheckReport::identity("weighted-curvature", &inputs, rel(ci.rm, rm_closed).abs().max(rel(ci.rc, rc_closed).abs()), cfg.tolerances.entropy_constant)
            .named("quadrature"),
        CheckReport::recorded("weighted-curvature", &inputs, ci.rm, 0.0)
            .named("constants")
            .with("rm_integral", ci.rm)
            .with("rc_integral", ci.rc)
            .with("C", ci.ratio),
    ])
}
