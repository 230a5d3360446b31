//! Gauss–Legendre rules and composite panel quadrature.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Nodes and weights of the `order`-point Gauss–Legendre rule on [-1, 1].
#[derive(Clone, Debug)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(order: usize) -> Self {
        assert!(order >= 1, "Gauss-Legendre order must be positive");
        let mut nodes = vec![0.0; order];
        let mut weights = vec![0.0; order];
        let m = order.div_ceil(2);
        let nf = order as f64;
        for i in 0..m {
            // Tricomi initial guess, then Newton on P_n.
            let mut x = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(order, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(order, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[order - 1 - i] = x;
            weights[i] = w;
            weights[order - 1 - i] = w;
        }
        Self { nodes, weights }
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    /// Integrate `f` over [a, b] with this rule.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (b + a);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(mid + half * x))
            .sum::<f64>()
            * half
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Composite rule: `panels` equal panels of an `order`-point rule on [a, b].
pub fn composite<F: FnMut(f64) -> f64>(
    rule: &GaussLegendre,
    a: f64,
    b: f64,
    panels: usize,
    mut f: F,
) -> f64 {
    let h = (b - a) / panels as f64;
    (0..panels)
        .map(|p| {
            let lo = a + h * p as f64;
            rule.integrate(lo, lo + h, &mut f)
        })
        .sum()
}

/// Result of an adaptive quadrature: value and the difference between the
/// last two refinements.
#[derive(Clone, Copy, Debug)]
pub struct QuadResult {
    pub value: f64,
    pub error: f64,
    pub panels: usize,
}

/// Double the panel count until two successive composite values agree to
/// `rel_tol` (relative, with an absolute floor of `rel_tol * abs_floor`).
pub fn adaptive<F: FnMut(f64) -> f64>(
    a: f64,
    b: f64,
    rel_tol: f64,
    abs_floor: f64,
    f: F,
) -> Result<QuadResult> {
    adaptive_from(a, b, 4, 1 << 14, rel_tol, abs_floor, f)
}

/// As [`adaptive`], starting from `start_panels` and giving up beyond
/// `max_panels`.
pub fn adaptive_from<F: FnMut(f64) -> f64>(
    a: f64,
    b: f64,
    start_panels: usize,
    max_panels: usize,
    rel_tol: f64,
    abs_floor: f64,
    mut f: F,
) -> Result<QuadResult> {
    let rule = GaussLegendre::new(16);
    let mut panels = start_panels.max(1);
    let mut prev = composite(&rule, a, b, panels, &mut f);
    while panels < max_panels {
        panels *= 2;
        let next = composite(&rule, a, b, panels, &mut f);
        let err = (next - prev).abs();
        if err <= rel_tol * next.abs().max(abs_floor) {
            return Ok(QuadResult {
                value: next,
                error: err,
                panels,
            });
        }
        prev = next;
    }
    Err(Error::Quadrature {
        achieved: (composite(&rule, a, b, panels, &mut f) - prev).abs() / prev.abs().max(abs_floor),
        requested: rel_tol,
    })
}

/// Tensor Gauss rule on [a0,b0]×[a1,b1].
pub fn composite_2d<F: FnMut(f64, f64) -> f64>(
    rule: &GaussLegendre,
    (a0, b0, p0): (f64, f64, usize),
    (a1, b1, p1): (f64, f64, usize),
    mut f: F,
) -> f64 {
    composite(rule, a0, b0, p0, |x| composite(rule, a1, b1, p1, |y| f(x, y)))
}

/// Area of the unit m-sphere S^m ⊂ R^{m+1}.
pub fn sphere_area(m: usize) -> f64 {
    match m {
        0 => 2.0,
        1 => 2.0 * PI,
        _ => 2.0 * PI / (m as f64 - 1.0) * sphere_area(m - 2),
    }
}

/// Volume of the unit ball in R^m.
pub fn ball_volume(m: usize) -> f64 {
    if m == 0 {
        1.0
    } else {
        sphere_area(m - 1) / m as f64
    }
}
