//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::f64::consts::{LN_2, PI};
use std::process::ExitCode;
use std::time::Instant;

use shrinkerlab::entropy::{log_spaced, minimize_mu, mu_profile, w_functional, TestFunction};
use shrinkerlab::error::Error;
use shrinkerlab::flow::F_at;
use shrinkerlab::harness::{evaluate, parse_model, run_suite, Report, RunConfig};
use shrinkerlab::heat::{concentration_suite, heat_kernel, heat_kernel_fd, kernel_bound_suite, mass_identities, semigroup_defect, Direction, SampleWindow};
use shrinkerlab::harness::volumes::no_local_collapsing_suite;
use shrinkerlab::lgeo::{b_mean_limit, harnack_check, harnack_grid, kernel_lower_defect};
use shrinkerlab::models::{
    curvature_spectrum, entropy_constant, full_catalog, rigidity_condition, rigidity_quadratic_oracle, Point,
    ShrinkerModel,
};

type Outcome = Result<String, String>;

fn catalog() -> Vec<ShrinkerModel> {
    full_catalog().iter().map(|s| s.build().unwrap()).collect()
}

fn named(name: &str) -> ShrinkerModel {
    catalog().into_iter().find(|m| m.name() == name).unwrap()
}

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(value: f64, tol: f64, what: &str) -> Result<(), String> {
    ensure(value.abs() <= tol, format!("{what}: {value:.3e} exceeds {tol:.0e}"))
}

fn err(e: Error) -> String {
    e.to_string()
}

fn geometry() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for m in catalog() {
        let nodes = m.flat_grid().map_or(vec![0.0], |g| g.nodes);
        for &rho in &nodes {
            for r in [m.shrinker_residual(rho), m.normalization_residual(rho), m.trace_residual(rho)] {
                worst = worst.max(r.abs());
            }
        }
        let thetas = m.sphere_grid().map_or(vec![0.0], |g| g.nodes);
        for t in [-4.0f64, -1.0, 0.0, 0.5, 0.9] {
            // the flowline through ρ sits at ρ/√(1-t), which must stay on the grid
            let reach = m.grid.rho_max * (1.0 - t.max(0.0)).sqrt();
            for &th in thetas.iter().step_by(8) {
                for &rho in nodes.iter().step_by(8).filter(|&&r| r < reach) {
                    let q = F_at(&m, &Point::reduced(&m, th, rho), t).map_err(err)?;
                    worst = q.identity_residuals(m.n).iter().fold(worst, |a, r| a.max(r.abs()));
                }
            }
        }
    }
    within(worst, 1e-10, "largest soliton or flow identity residual")?;
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 10.0, format!("took {secs:.1}s"))?;
    Ok(format!("max residual {worst:.2e} over 8 models, {secs:.2}s"))
}

fn entropy() -> Outcome {
    let start = Instant::now();
    for n in [2, 3, 4] {
        let g = named(&format!("gaussian{n}"));
        within(entropy_constant(&g).map_err(err)?, 1e-8, "gaussian entropy constant")?;
        for tau in [0.25, 1.0, 4.0] {
            within(minimize_mu(&g, tau, None).map_err(err)?.mu, 1e-5, &format!("mu(gaussian{n}, {tau})"))?;
        }
    }
    let oracle = LN_2 - 1.0;
    for name in ["sphere2", "cylinder4_2"] {
        let mu = entropy_constant(&named(name)).map_err(err)?;
        within(mu - oracle, 1e-6, &format!("{name} entropy constant vs log 2 - 1"))?;
    }
    let mut worst: f64 = 0.0;
    for m in catalog() {
        let mu = minimize_mu(&m, 1.0, None).map_err(err)?.mu;
        let u = TestFunction::soliton(&m).and_then(|u| u.normalized(&m)).map_err(err)?;
        let w = w_functional(&m, &u, 1.0).map_err(err)?.value;
        worst = worst.max((mu - w).abs());
    }
    within(worst, 1e-6, "Carrillo-Ni defect")?;
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 300.0, format!("took {secs:.1}s"))?;
    Ok(format!("Carrillo-Ni defect {worst:.2e}, {secs:.1}s"))
}

fn monotonicity() -> Outcome {
    let taus = log_spaced(1e-2, 1e2, 20);
    let mut detail = Vec::new();
    for name in ["sphere2", "cylinder4_2"] {
        let p = mu_profile(&named(name), &taus).map_err(err)?;
        ensure(
            p.decreasing_below_one && p.increasing_above_one && p.worst_violation <= 1.0,
            format!("{name}: monotonicity violated by {:.2} certificates", p.worst_violation),
        )?;
        ensure(p.min_at_one, format!("{name}: minimum not at tau = 1"))?;
        // every node sits above the separately computed mu(1)
        let low = p.nodes.iter().map(|nd| nd.mu - p.at_one.mu + 2.0 * nd.error_estimate).fold(f64::MAX, f64::min);
        ensure(low >= 0.0, format!("{name}: a node undercuts mu(1) by {:.2e}", -low))?;
        if name == "cylinder4_2" {
            let first = &p.nodes[0];
            within(first.mu, 0.05, "cylinder profile at tau = 1e-2")?;
            detail.push(format!("cylinder mu(1e-2) = {:.4}", first.mu));
        }
        detail.push(format!("{name} worst violation {:.2}", p.worst_violation));
    }
    Ok(detail.join(", "))
}

fn euclidean_kernel(n: usize, d2: f64, elapsed: f64) -> f64 {
    (4.0 * PI * elapsed).powf(-(n as f64) / 2.0) * (-d2 / (4.0 * elapsed)).exp()
}

fn kernels() -> Outcome {
    let start = Instant::now();
    let mut samples = 0;
    for m in catalog() {
        let s = kernel_bound_suite(&m, 200, SampleWindow::default(), 20_240_601).map_err(err)?;
        ensure(
            s.ultracontractive_failures == 0 && s.positivity_failures == 0 && s.worst_ultra_ratio <= 1.0,
            format!("{}: {} ultracontractivity failures, worst ratio {}", m.name(), s.ultracontractive_failures, s.worst_ultra_ratio),
        )?;
        samples += s.samples;
    }
    let mut worst: f64 = 0.0;
    for n in [2, 3, 4] {
        let g = named(&format!("gaussian{n}"));
        for (x, y, t, s) in [((0.8, 0.5), (0.0, 0.0), 0.3, -0.2), ((0.0, 1.5), (0.0, 0.2), 0.9, -2.0)] {
            let (xp, yp) = (Point::reduced(&g, x.0, x.1), Point::reduced(&g, y.0, y.1));
            let exact = euclidean_kernel(n, xp.flat_distance_sq(&yp), t - s);
            let spectral = heat_kernel(&g, &xp, t, &yp, s).map_err(err)?.value;
            let fd = heat_kernel_fd(&g, &xp, t, &yp, s, Direction::Forward).map_err(err)?.value;
            worst = worst.max((spectral / exact - 1.0).abs()).max((fd / exact - 1.0).abs());
        }
    }
    within(worst, 1e-5, "gaussian kernel relative error")?;
    let c = named("cylinder4_2");
    let (t, s) = (0.5, -0.5);
    let (earlier, later) = mass_identities(&c, t, s).map_err(err)?;
    within(earlier - 1.0, 1e-5, "cylinder mass at s")?;
    within(later - ((1.0 - t) / (1.0 - s)), 1e-5, "cylinder mass at t")?;
    let mut semigroup: f64 = 0.0;
    for m in catalog() {
        let (d, _) = semigroup_defect(&m, &Point::reduced(&m, 1.2, 0.4), 0.2, &m.base_point(), -0.6, -0.1).map_err(err)?;
        semigroup = semigroup.max(d.abs());
    }
    within(semigroup, 1e-6, "semigroup defect")?;
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 300.0, format!("took {secs:.1}s"))?;
    Ok(format!(
        "{samples} samples, gaussian rel err {worst:.1e}, masses {earlier:.7}/{later:.7}, semigroup {semigroup:.1e}, {secs:.1}s"
    ))
}

fn lower_bound_and_harnack() -> Outcome {
    let mut margin: f64 = 0.0;
    let mut flat_v: f64 = 0.0;
    for n in [2, 3, 4] {
        let g = named(&format!("gaussian{n}"));
        for (th, rho) in [(0.0, 0.0), (0.0, 1.0), (0.0, 2.5)] {
            let lb = kernel_lower_defect(&g, &Point::reduced(&g, th, rho), 0.0, &g.base_point(), -1.0).map_err(err)?;
            margin = margin.max(lb.margin.abs());
        }
        let grid = harnack_grid(&g, &g.base_point(), 0.5, 0.3).map_err(err)?;
        ensure(grid.len() >= 100, format!("harnack grid has {} points", grid.len()))?;
        flat_v = grid.iter().fold(flat_v, |a, s| a.max(s.v.abs()));
    }
    within(margin, 1e-6, "gaussian lower-bound margin")?;
    within(flat_v, 1e-8, "gaussian Harnack quantity")?;
    let c = named("cylinder4_2");
    let h = harnack_check(&c, 0.5, 50, (0.05, 0.5), 20_240_601).map_err(err)?;
    ensure(h.samples >= 50 - h.skipped && h.max_v <= 1e-4, format!("cylinder max v {:.2e}", h.max_v))?;
    let mut b_err: f64 = 0.0;
    for m in catalog() {
        let (_, _, lim) = b_mean_limit(&m, 0.5, (1e-2, 1e-3)).map_err(err)?;
        b_err = b_err.max((lim - m.n as f64 / 2.0).abs());
    }
    within(b_err, 1e-3, "b-mean limit vs n/2")?;
    Ok(format!(
        "margin {margin:.1e}, flat v {flat_v:.1e}, cylinder max v {:.1e} ({} samples), b-mean err {b_err:.1e}",
        h.max_v, h.samples
    ))
}

fn concentration() -> Outcome {
    let mut pairs = 0;
    let mut min_defect = f64::MAX;
    let mut tilt: f64 = 0.0;
    for m in catalog() {
        let c = concentration_suite(&m, 0.0, -1.0, 1.0, &[0.5, 1.0, 2.0], &[0.5, 1.0, 2.0, 4.0]).map_err(err)?;
        ensure(c.pairs.len() == 12, format!("{}: {} annulus pairs", m.name(), c.pairs.len()))?;
        ensure(c.pairs.iter().all(|p| p.lhs < p.rhs), format!("{}: concentration bound not strict", m.name()))?;
        ensure(c.log_sobolev.len() == 6, format!("{}: battery of {}", m.name(), c.log_sobolev.len()))?;
        pairs += c.pairs.len();
        for r in &c.log_sobolev {
            min_defect = min_defect.min(r.defect);
            if m.is_flat() && r.density == "tilt" {
                tilt = tilt.max(r.defect.abs());
            }
        }
    }
    ensure(min_defect >= -1e-8, format!("log-Sobolev defect {min_defect:.2e}"))?;
    within(tilt, 1e-6, "gaussian tilt defect")?;
    Ok(format!("{pairs} strict pairs, min defect {min_defect:.2e}, tilt defect {tilt:.1e}"))
}

/// |B(p, r)| on S²(a) × R² by integrating flat disc areas over the sphere.
fn cylinder_ball_oracle(a: f64, r: f64) -> f64 {
    let top = PI.min(r / a);
    let steps = 20_000;
    let h = top / steps as f64;
    let f = |th: f64| 2.0 * PI * a * a * th.sin() * PI * (r * r - a * a * th * th).max(0.0);
    let mut sum = f(0.0) + f(top);
    for i in 1..steps {
        sum += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    sum * h / 3.0
}

fn collapsing() -> Outcome {
    let radii = [1.0, 2.0, 4.0, 8.0, 16.0];
    let c = named("cylinder4_2");
    let rec = no_local_collapsing_suite(&c, &radii, 40.0).map_err(err)?;
    ensure(rec.rows.len() == 5, format!("{} radii skipped", rec.skipped.len()))?;
    let consts = [rec.bracket_constant, rec.small_ball_constant, rec.volume_lower_constant, rec.linear_constant, rec.upper_constant];
    ensure(consts.iter().all(|v| v.is_finite() && *v > 0.0 && *v < 1e6), format!("constants {consts:?}"))?;
    let mut oracle_err: f64 = 0.0;
    for row in &rec.rows {
        let cb = rec.bracket_constant;
        ensure(row.r / cb <= row.ratio && row.ratio <= cb * row.r.powi(4), format!("bracket fails at r = {}", row.r))?;
        oracle_err = oracle_err.max((row.volume / cylinder_ball_oracle(c.radius(), row.r) - 1.0).abs());
    }
    within(oracle_err, 1e-6, "cylinder ball volume vs product integral")?;
    let mut power: f64 = 0.0;
    for n in [2, 3, 4] {
        let g = named(&format!("gaussian{n}"));
        let r = no_local_collapsing_suite(&g, &radii, 40.0).map_err(err)?;
        for row in &r.rows {
            power = power.max((row.ratio / row.r.powi(n) - 1.0).abs());
        }
    }
    within(power, 1e-8, "gaussian volume ratio vs r^n")?;
    Ok(format!("cylinder C = {:.3}, oracle err {oracle_err:.1e}, gaussian err {power:.1e}", rec.bracket_constant))
}

fn analytic_spectrum(m: &ShrinkerModel) -> Vec<f64> {
    let n = m.n;
    let k = m.sphere_dim();
    let curved = k * k.saturating_sub(1) / 2;
    let mut v = vec![0.0; n * (n - 1) / 2 - curved];
    if k >= 2 {
        v.extend(vec![1.0 / (2.0 * (k as f64 - 1.0)); curved]);
    }
    v
}

fn rigidity() -> Outcome {
    let mut spec_err: f64 = 0.0;
    let mut min_p = f64::MAX;
    let mut rejected = Vec::new();
    for m in catalog() {
        let s = curvature_spectrum(&m, &Point::reduced(&m, 0.7, 1.1)).map_err(err)?;
        let exact = analytic_spectrum(&m);
        ensure(exact.len() == s.eigenvalues.len(), format!("{}: spectrum length", m.name()))?;
        spec_err = exact.iter().zip(&s.eigenvalues).fold(spec_err, |a, (x, y)| a.max((x - y).abs()));
        match rigidity_condition(&s, m.scalar_curvature()) {
            Ok(o) => {
                ensure(o.passes, format!("{}: rigidity condition fails", m.name()))?;
                let p = rigidity_quadratic_oracle(o.lambda1, o.lambda2, m.scalar_curvature(), m.n, 10_000, 7);
                min_p = min_p.min(p);
            }
            Err(Error::RigidityUndefined(2)) if m.n == 2 => rejected.push(m.name()),
            Err(e) => return Err(format!("{}: {e}", m.name())),
        }
    }
    within(spec_err, 1e-12, "spectrum vs analytic")?;
    ensure(min_p >= -1e-9, format!("oracle found P = {min_p:.3e}"))?;
    Ok(format!(
        "spectrum err {spec_err:.1e}, min P {min_p:.2e}; n = 2 threshold undefined for {}",
        rejected.join(", ")
    ))
}

fn determinism() -> Outcome {
    let mut cheap = RunConfig::default();
    cheap.models = ["gaussian:3", "sphere:2", "cylinder:4:2"].iter().map(|s| parse_model(s).unwrap()).collect();
    cheap.suites = ["geometry", "flow", "rigidity", "kernel", "gap"].iter().map(|s| s.to_string()).collect();
    cheap.kernel_samples = 40;
    let a = evaluate(&cheap, false).map_err(err)?;
    let b = evaluate(&cheap, false).map_err(err)?;
    ensure(a.digest == b.digest, "cheap runs disagree")?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut full = RunConfig::default();
    full.output.dir = dir.path().to_path_buf();
    let start = Instant::now();
    let report = run_suite(&full).map_err(err)?;
    let secs = start.elapsed().as_secs_f64();
    let text = std::fs::read_to_string(dir.path().join("report.json")).map_err(|e| e.to_string())?;
    let back: Report = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    ensure(back.compute_digest() == report.digest, "persisted report digest differs")?;
    let schema: serde_json::Value =
        serde_json::from_str(include_str!("../../../schema/report.schema.json")).map_err(|e| e.to_string())?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    ensure(jsonschema::is_valid(&schema, &value), "report does not match the schema")?;
    let failures: Vec<_> = report.failures().map(|c| c.id.clone()).collect();
    ensure(failures.is_empty(), format!("strict failures: {failures:?}"))?;
    ensure(report.checks.len() >= 40, format!("only {} checks", report.checks.len()))?;
    ensure(secs < 1800.0, format!("full run took {secs:.0}s"))?;
    Ok(format!(
        "digest {}.., {} checks ({} recorded), 0 failures, full run {secs:.0}s",
        &a.digest[..12],
        report.summary.checks,
        report.summary.recorded
    ))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("geometry identities", geometry),
        ("entropy exactness", entropy),
        ("entropy monotonicity", monotonicity),
        ("kernel bounds", kernels),
        ("lower bound and Harnack", lower_bound_and_harnack),
        ("concentration", concentration),
        ("collapsing and volume", collapsing),
        ("rigidity", rigidity),
        ("determinism and reporting", determinism),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        match run() {
            Ok(detail) => println!("PASS {} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {} {name}: {why}", i + 1);
            }
        }
    }
    if failed > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
