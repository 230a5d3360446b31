//! The induced self-similar flow g(t) = (1-t)(ψ^t)^*g on t < 1.
//!
//! Points live in the pulled-back chart: the flat factor carries the static
//! Euclidean metric, the sphere factor shrinks by (1-t). Trajectories of ψ^t
//! are integrated numerically with an embedded Runge–Kutta pair; catalog
//! models also have a closed form, used as a cross-check.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{Point, ShrinkerModel};

const RK_TOL: f64 = 1e-12;

/// Dormand–Prince 5(4) with local error control; integrates y' = rhs(s, y)
/// from s0 to s1 (either direction).
pub fn integrate_rk45(
    mut rhs: impl FnMut(f64, &[f64], &mut [f64]),
    s0: f64,
    s1: f64,
    y0: &[f64],
    tol: f64,
) -> Result<Vec<f64>> {
    const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
    const A: [[f64; 6]; 7] = [
        [0.0; 6],
        [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
        [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ];
    const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
    const B4: [f64; 7] = [
        5179.0 / 57600.0,
        0.0,
        7571.0 / 16695.0,
        393.0 / 640.0,
        -92097.0 / 339200.0,
        187.0 / 2100.0,
        1.0 / 40.0,
    ];
    let dim = y0.len();
    let mut y = y0.to_vec();
    if s0 == s1 || dim == 0 {
        return Ok(y);
    }
    let dir = (s1 - s0).signum();
    let mut s = s0;
    let mut h = dir * (s1 - s0).abs().min(0.1);
    let mut k = vec![vec![0.0; dim]; 7];
    let mut stage = vec![0.0; dim];
    let mut steps = 0usize;
    while (s1 - s) * dir > 0.0 {
        if (s + h - s1) * dir > 0.0 {
            h = s1 - s;
        }
        for i in 0..7 {
            for d in 0..dim {
                stage[d] = y[d] + h * (0..i).map(|j| A[i][j] * k[j][d]).sum::<f64>();
            }
            rhs(s + C[i] * h, &stage, &mut k[i]);
        }
        let mut err: f64 = 0.0;
        let mut y_new = vec![0.0; dim];
        for d in 0..dim {
            let hi: f64 = (0..7).map(|i| B5[i] * k[i][d]).sum();
            let lo: f64 = (0..7).map(|i| B4[i] * k[i][d]).sum();
            y_new[d] = y[d] + h * hi;
            let scale = tol * (1.0 + y[d].abs().max(y_new[d].abs()));
            err = err.max((h * (hi - lo)).abs() / scale);
        }
        if err <= 1.0 {
            s += h;
            y = y_new;
        }
        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h *= factor;
        steps += 1;
        if steps > 1_000_000 || h.abs() < 1e-14 {
            return Err(Error::Step(format!("trajectory integration stalled at s = {s}")));
        }
    }
    Ok(y)
}

/// Flat-factor gradient ∇f = f'(ρ) z/ρ.
fn grad_potential(model: &ShrinkerModel, z: &[f64], out: &mut [f64]) {
    let rho = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    let (d1, d2) = model.potential_derivatives(rho);
    let scale = if rho > 0.0 { d1 / rho } else { d2 };
    for (o, zi) in out.iter_mut().zip(z) {
        *o = scale * zi;
    }
}

/// ψ^t(x) by solving ∂_t ψ = ∇f(ψ)/(1-t) from 0 to t.
pub fn diffeo_trajectory(model: &ShrinkerModel, x: &Point, t: f64) -> Result<Point> {
    if !(t < 1.0) {
        return Err(Error::Precondition(format!("flow time must be < 1, got {t}")));
    }
    // sphere factor: ∇f = 0
    let flat = integrate_rk45(
        |s, z, out| {
            grad_potential(model, z, out);
            for v in out.iter_mut() {
                *v /= 1.0 - s;
            }
        },
        0.0,
        t,
        &x.flat,
        RK_TOL,
    )?;
    let rho = flat.iter().map(|v| v * v).sum::<f64>().sqrt();
    if model.has_flat() && rho > model.grid.rho_max {
        return Err(Error::OutOfGrid {
            requested: rho,
            required_rho_max: rho,
        });
    }
    Ok(Point {
        sphere: x.sphere.clone(),
        flat,
    })
}

/// Closed form of the trajectory on catalog models: y ↦ y/√(1-t).
pub fn closed_form_trajectory(x: &Point, t: f64) -> Point {
    let s = 1.0 / (1.0 - t).sqrt();
    Point {
        sphere: x.sphere.clone(),
        flat: x.flat.iter().map(|v| v * s).collect(),
    }
}

/// Scale factors of g(t) = (1-t)(ψ^t)^*g relative to the t = 0 metric on
/// the (sphere, flat-radial) directions, from the linearized trajectory.
pub fn pulled_back_metric(model: &ShrinkerModel, rho: f64, t: f64) -> Result<(f64, f64)> {
    let y = integrate_rk45(
        |s, y, out| {
            let (d1, d2) = model.potential_derivatives(y[0]);
            out[0] = d1 / (1.0 - s);
            out[1] = d2 / (1.0 - s) * y[1];
        },
        0.0,
        t,
        &[rho, 1.0],
        RK_TOL,
    )?;
    let tau_bar = 1.0 - t;
    let flat = if model.has_flat() { tau_bar * y[1] * y[1] } else { 1.0 };
    Ok((tau_bar, flat))
}

/// F = (1-t) f(ψ^t x) and the derived quantities on the flow.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowQuantities {
    pub t: f64,
    pub tau_bar: f64,
    pub f: f64,
    pub dt_f: f64,
    pub grad_f: f64,
    pub lap_f: f64,
    /// Scalar curvature of g(t) at x.
    pub scalar: f64,
}

impl FlowQuantities {
    /// Residuals of ∂_tF + τ̄R, τ̄R + ΔF - n/2, τ̄²R + |∇F|² - F, □F + n/2.
    pub fn identity_residuals(&self, n: usize) -> [f64; 4] {
        let half_n = n as f64 / 2.0;
        let tb = self.tau_bar;
        [
            self.dt_f + tb * self.scalar,
            tb * self.scalar + self.lap_f - half_n,
            tb * tb * self.scalar + self.grad_f * self.grad_f - self.f,
            self.dt_f - self.lap_f + half_n,
        ]
    }

    /// □(F + n t/2).
    pub fn special_heat_residual(&self, n: usize) -> f64 {
        self.dt_f + n as f64 / 2.0 - self.lap_f
    }

    /// □* v̄ / v̄ for v̄ = (4πτ̄)^{-n/2} e^{-F/τ̄}.
    pub fn conjugate_residual(&self, n: usize) -> f64 {
        let tb = self.tau_bar;
        let dt_f = self.dt_f / tb + self.f / (tb * tb);
        let grad_sq = self.grad_f * self.grad_f / (tb * tb);
        let lap = self.lap_f / tb;
        // ∂_t log v̄ = n/(2τ̄) - ∂_t f; Δv̄/v̄ = |∇f|² - Δf
        -(n as f64 / (2.0 * tb) - dt_f) - (grad_sq - lap) + self.scalar
    }
}

#[allow(non_snake_case)]
pub fn F_at(model: &ShrinkerModel, x: &Point, t: f64) -> Result<FlowQuantities> {
    let y = diffeo_trajectory(model, x, t)?;
    let (_, rho) = y.polar();
    let tau_bar = 1.0 - t;
    let f = model.potential(rho);
    let grad_sq = model.grad_potential_sq(rho);
    Ok(FlowQuantities {
        t,
        tau_bar,
        f: tau_bar * f,
        dt_f: grad_sq - f,
        grad_f: (tau_bar * grad_sq).sqrt(),
        lap_f: model.laplacian_potential(rho),
        scalar: model.scalar_curvature() / tau_bar,
    })
}

/// f(ψ^t x) versus f(x)/(1-t) for 0 ≤ t < 1.
pub fn flowline_potential_bound(model: &ShrinkerModel, x: &Point, t: f64) -> Result<(f64, f64)> {
    if !(0.0..1.0).contains(&t) {
        return Err(Error::Precondition(format!("need 0 <= t < 1, got {t}")));
    }
    let y = diffeo_trajectory(model, x, t)?;
    let lhs = model.potential(y.polar().1);
    let rhs = model.potential(x.polar().1) / (1.0 - t);
    Ok((lhs, rhs))
}

/// d_t(x, p) = √(1-t) d(ψ^t x, ψ^t p).
pub fn distance_to_base_at(model: &ShrinkerModel, x: &Point, t: f64) -> Result<f64> {
    let y = diffeo_trajectory(model, x, t)?;
    let p = diffeo_trajectory(model, &model.base_point(), t)?;
    Ok((1.0 - t).sqrt() * model.distance(&y, &p, 0.0))
}

/// (lower, F, upper) of the quadratic growth sandwich
/// ¼(d_t - 5nτ̄ - 4)₊² ≤ F ≤ ¼(d_t + √(2nτ̄))².
pub fn potential_growth_bounds(model: &ShrinkerModel, x: &Point, t: f64) -> Result<(f64, f64, f64)> {
    let d = distance_to_base_at(model, x, t)?;
    let q = F_at(model, x, t)?;
    let n = model.n as f64;
    let tb = 1.0 - t;
    let lower = 0.25 * (d - 5.0 * n * tb - 4.0).max(0.0).powi(2);
    let upper = 0.25 * (d + (2.0 * n * tb).sqrt()).powi(2);
    Ok((lower, q.f, upper))
}

/// The cutoff profile η: 1 on [0,1], quintic smoothstep down to 0 on [1,2].
pub fn eta(s: f64) -> [f64; 3] {
    if s <= 1.0 {
        return [1.0, 0.0, 0.0];
    }
    if s >= 2.0 {
        return [0.0, 0.0, 0.0];
    }
    let u = s - 1.0;
    let v = 1.0 - u;
    [
        1.0 - u * u * u * (6.0 * u * u - 15.0 * u + 10.0),
        -30.0 * u * u * v * v,
        -60.0 * u * v * (1.0 - 2.0 * u),
    ]
}

/// sup |η'|/√η over the transition, on a dense sample.
pub fn eta_ratio_bound() -> f64 {
    (1..10_000)
        .map(|i| {
            let s = 1.0 + i as f64 / 10_000.0;
            let [e, d, _] = eta(s);
            if e > 0.0 {
                d.abs() / e.sqrt()
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutoffValues {
    pub phi: f64,
    pub grad: f64,
    pub dt: f64,
    pub lap: f64,
    /// □φ = φ_t - Δφ
    pub heat: f64,
    /// □*φ = -φ_t - Δφ + Rφ
    pub conj_heat: f64,
}

/// φ^r = η(F/r) and its derivatives along the flow.
pub fn cutoff_eval(model: &ShrinkerModel, r: f64, x: &Point, t: f64) -> Result<CutoffValues> {
    if !(r >= 1.0) {
        return Err(Error::Precondition(format!("cutoff scale must be >= 1, got {r}")));
    }
    let q = F_at(model, x, t)?;
    let [e0, e1, e2] = eta(q.f / r);
    let grad = e1 * q.grad_f / r;
    let dt = e1 * q.dt_f / r;
    let lap = e2 * q.grad_f * q.grad_f / (r * r) + e1 * q.lap_f / r;
    Ok(CutoffValues {
        phi: e0,
        grad,
        dt,
        lap,
        heat: dt - lap,
        conj_heat: -dt - lap + q.scalar * e0,
    })
}

/// Measured constants of the cutoff family at one scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutoffFamily {
    pub r: f64,
    pub eta_ratio: f64,
    pub grad_ratio: f64,
    pub time_derivative: f64,
    pub heat_operator: f64,
}

/// Sample suprema of r|∇φ|²/φ, τ̄|φ_t|, r|□φ| over the transition region
/// {r ≤ F ≤ 2r} at the given times.
pub fn cutoff_constants(model: &ShrinkerModel, r: f64, times: &[f64], samples: usize) -> Result<CutoffFamily> {
    let mut fam = CutoffFamily {
        r,
        eta_ratio: eta_ratio_bound(),
        grad_ratio: 0.0,
        time_derivative: 0.0,
        heat_operator: 0.0,
    };
    if !model.has_flat() {
        // F is constant in space; only the time derivative can be nonzero
        for &t in times {
            let v = cutoff_eval(model, r, &model.base_point(), t)?;
            fam.time_derivative = fam.time_derivative.max((1.0 - t) * v.dt.abs());
            fam.heat_operator = fam.heat_operator.max(r * v.heat.abs());
        }
        return Ok(fam);
    }
    let offset = model.scalar_curvature();
    for &t in times {
        let tb = 1.0 - t;
        for i in 0..=samples {
            let target = r * (1.0 + i as f64 / samples as f64);
            // F = ρ²/4 + τ̄ R₀ in the pulled-back chart
            let rho2 = 4.0 * (target - tb * offset);
            if rho2 < 0.0 {
                continue;
            }
            let rho = rho2.sqrt();
            if rho > model.grid.rho_max * (1.0 - t).sqrt() {
                continue;
            }
            let x = Point::reduced(model, 0.3, rho);
            let v = cutoff_eval(model, r, &x, t)?;
            if v.phi > 0.0 {
                fam.grad_ratio = fam.grad_ratio.max(r * v.grad * v.grad / v.phi);
            }
            fam.time_derivative = fam.time_derivative.max(tb * v.dt.abs());
            fam.heat_operator = fam.heat_operator.max(r * v.heat.abs());
        }
    }
    Ok(fam)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelKind;

    fn model(kind: ModelKind, n: usize, k: Option<usize>) -> ShrinkerModel {
        ShrinkerModel::new(kind, n, k).unwrap()
    }

    #[test]
    fn trajectories_match_closed_form() {
        let g = model(ModelKind::Gaussian, 3, None);
        let x = Point::reduced(&g, 0.0, 1.7);
        for t in [-3.0, -0.5, 0.3, 0.9] {
            let num = diffeo_trajectory(&g, &x, t).unwrap();
            let exact = closed_form_trajectory(&x, t);
            assert!((num.flat[0] - exact.flat[0]).abs() < 1e-10, "t={t}");
        }
        let s = model(ModelKind::Sphere, 2, None);
        let xs = Point::reduced(&s, 1.1, 0.0);
        assert_eq!(diffeo_trajectory(&s, &xs, 0.7).unwrap(), xs);
        let c = model(ModelKind::Cylinder, 4, Some(2));
        let xc = Point::reduced(&c, 0.4, 2.0);
        let yc = diffeo_trajectory(&c, &xc, 0.5).unwrap();
        assert_eq!(yc.sphere, xc.sphere);
        assert!((yc.flat[0] - 2.0 / 0.5f64.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn trajectory_leaving_grid_is_reported() {
        let g = model(ModelKind::Gaussian, 2, None);
        let x = Point::reduced(&g, 0.0, 10.0);
        assert!(matches!(
            diffeo_trajectory(&g, &x, 0.9),
            Err(Error::OutOfGrid { .. })
        ));
    }

    #[test]
    fn pulled_back_metric_is_static_on_flat_factor() {
        let c = model(ModelKind::Cylinder, 3, Some(2));
        for t in [-2.0, 0.0, 0.6] {
            let (sph, flat) = pulled_back_metric(&c, 1.5, t).unwrap();
            assert!((sph - (1.0 - t)).abs() < 1e-12);
            assert!((flat - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn potential_examples() {
        let g = model(ModelKind::Gaussian, 4, None);
        let x = Point::reduced(&g, 0.0, 3.0);
        for t in [-1.0, 0.0, 0.5] {
            let q = F_at(&g, &x, t).unwrap();
            assert!((q.f - 9.0 / 4.0).abs() < 1e-10);
        }
        let s = model(ModelKind::Sphere, 2, None);
        let q = F_at(&s, &s.base_point(), 0.25).unwrap();
        assert!((q.f - 0.75).abs() < 1e-12);
        assert!(q.identity_residuals(2).iter().all(|r| r.abs() < 1e-10));
        for m in [&g, &s] {
            let q = F_at(m, &m.base_point(), 0.0).unwrap();
            assert!(q.f <= m.n as f64 / 2.0 + 1e-12);
        }
    }

    #[test]
    fn time_derivative_matches_finite_difference() {
        let c = model(ModelKind::Cylinder, 4, Some(2));
        let x = Point::reduced(&c, 0.2, 1.3);
        let h = 1e-4;
        for t in [-1.0, 0.4] {
            let q = F_at(&c, &x, t).unwrap();
            let fd = (F_at(&c, &x, t + h).unwrap().f - F_at(&c, &x, t - h).unwrap().f) / (2.0 * h);
            assert!((q.dt_f - fd).abs() < 1e-6, "{} vs {}", q.dt_f, fd);
        }
    }

    #[test]
    fn flowline_bound_examples() {
        let g = model(ModelKind::Gaussian, 2, None);
        let (l, r) = flowline_potential_bound(&g, &Point::reduced(&g, 0.0, 2.0), 0.5).unwrap();
        assert!((l - 2.0).abs() < 1e-9 && (r - 2.0).abs() < 1e-12);
        let s = model(ModelKind::Sphere, 2, None);
        let (l, r) = flowline_potential_bound(&s, &Point::reduced(&s, 1.0, 0.0), 0.9).unwrap();
        assert!((l - 1.0).abs() < 1e-12 && (r - 10.0).abs() < 1e-9);
        let c = model(ModelKind::Cylinder, 4, Some(2));
        let (l, r) = flowline_potential_bound(&c, &Point::reduced(&c, 0.5, 2.0), 0.5).unwrap();
        assert!((l - 3.0).abs() < 1e-9 && (r - 4.0).abs() < 1e-12);
        assert!(flowline_potential_bound(&c, &c.base_point(), -0.5).is_err());
    }

    #[test]
    fn eta_profile_properties() {
        let mut prev = 1.0;
        for i in 0..=1000 {
            let s = i as f64 / 400.0;
            let [e, d, _] = eta(s);
            assert!((0.0..=1.0).contains(&e));
            assert!(e <= prev + 1e-15);
            assert!(d <= 0.0);
            prev = e;
        }
        let b = eta_ratio_bound();
        assert!(b.is_finite() && b > 0.0 && b < 10.0);
    }

    #[test]
    fn cutoff_trivial_regions() {
        let c = model(ModelKind::Cylinder, 4, Some(2));
        let inner = cutoff_eval(&c, 4.0, &Point::reduced(&c, 0.3, 1.0), 0.0).unwrap();
        assert_eq!(inner.phi, 1.0);
        assert_eq!((inner.grad, inner.dt, inner.lap, inner.heat), (0.0, 0.0, 0.0, 0.0));
        assert!((inner.conj_heat - c.scalar_curvature()).abs() < 1e-15);
        let outer = cutoff_eval(&c, 4.0, &Point::reduced(&c, 0.3, 10.0), 0.0).unwrap();
        assert_eq!(outer.phi, 0.0);
        assert_eq!(outer.conj_heat, 0.0);
    }

    #[test]
    fn cutoff_derivatives_match_finite_differences() {
        // gaussian, r = 4, F = 6 at t = 0 means ρ = √24
        let g = model(ModelKind::Gaussian, 3, None);
        let r = 4.0;
        let rho = 24f64.sqrt();
        let phi = |rho: f64, t: f64| cutoff_eval(&g, r, &Point::reduced(&g, 0.0, rho), t).unwrap().phi;
        let v = cutoff_eval(&g, r, &Point::reduced(&g, 0.0, rho), 0.0).unwrap();
        // central differences extrapolated in h²
        let rich = |d: &dyn Fn(f64) -> f64, h: f64| (4.0 * d(h / 2.0) - d(h)) / 3.0;
        let h = 1e-3;
        let d1 = rich(&|h| (phi(rho + h, 0.0) - phi(rho - h, 0.0)) / (2.0 * h), h);
        let d2 = rich(&|h| (phi(rho + h, 0.0) - 2.0 * phi(rho, 0.0) + phi(rho - h, 0.0)) / (h * h), 1e-2);
        // radial Laplacian in R^3
        let lap = d2 + 2.0 * d1 / rho;
        assert!((v.grad.abs() - d1.abs()).abs() < 1e-6, "{} {}", v.grad, d1);
        assert!((v.lap - lap).abs() < 1e-6, "{} {}", v.lap, lap);
        let dt = rich(&|h| (phi(rho, h) - phi(rho, -h)) / (2.0 * h), h);
        assert!((v.heat - (dt - lap)).abs() < 1e-6);
    }

    #[test]
    fn cutoff_constants_are_uniform_in_scale() {
        let c = model(ModelKind::Cylinder, 4, Some(2));
        let times = [-4.0, -1.0, 0.0, 0.5, 0.9];
        let consts: Vec<CutoffFamily> = [1.0, 4.0, 16.0, 64.0]
            .iter()
            .map(|&r| cutoff_constants(&c, r, &times, 200).unwrap())
            .collect();
        let max_grad = consts.iter().map(|c| c.grad_ratio).fold(0.0, f64::max);
        assert!(max_grad.is_finite() && max_grad < 100.0);
        let max_heat = consts.iter().map(|c| c.heat_operator).fold(0.0, f64::max);
        assert!(max_heat.is_finite() && max_heat < 100.0);
    }

    #[test]
    fn special_solutions() {
        for (kind, n, k) in [
            (ModelKind::Gaussian, 3, None),
            (ModelKind::Sphere, 2, None),
            (ModelKind::Cylinder, 4, Some(3)),
        ] {
            let m = model(kind, n, k);
            for t in [-4.0, 0.0, 0.8] {
                for rho in [0.0, 0.5, 2.0] {
                    let x = Point::reduced(&m, 0.7, rho);
                    let q = F_at(&m, &x, t).unwrap();
                    assert!(q.special_heat_residual(n).abs() < 1e-8);
                    assert!(q.conjugate_residual(n).abs() < 1e-8);
                    let (lo, f, hi) = potential_growth_bounds(&m, &x, t).unwrap();
                    assert!(lo <= f + 1e-12 && f <= hi + 1e-12);
                }
            }
        }
    }

    #[test]
    fn conjugate_solution_matches_finite_differences() {
        // □* v̄ by central differences in (ρ, t) on the Gaussian soliton
        let g = model(ModelKind::Gaussian, 2, None);
        let vbar = |rho: f64, t: f64| {
            let tb: f64 = 1.0 - t;
            let q = F_at(&g, &Point::reduced(&g, 0.0, rho), t).unwrap();
            (4.0 * std::f64::consts::PI * tb).powi(-1) * (-q.f / tb).exp()
        };
        let (rho, t, h) = (1.2, 0.3, 1e-3);
        let dt = (vbar(rho, t + h) - vbar(rho, t - h)) / (2.0 * h);
        let d1 = (vbar(rho + h, t) - vbar(rho - h, t)) / (2.0 * h);
        let d2 = (vbar(rho + h, t) - 2.0 * vbar(rho, t) + vbar(rho - h, t)) / (h * h);
        let box_star = -dt - (d2 + d1 / rho);
        assert!(box_star.abs() < 1e-6, "{box_star}");
    }
}
