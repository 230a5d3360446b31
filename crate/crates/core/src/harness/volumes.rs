//! Catalog-level quantities behind the volume, pseudo-locality, gap and
//! curvature-integral checks.

use serde::{Deserialize, Serialize};

use crate::entropy::{minimize_mu, EntropyProfile};
use crate::error::Result;
use crate::models::{curvature_spectrum, volume_ball, weighted_volume, ShrinkerModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeRow {
    pub r: f64,
    pub volume: f64,
    /// |B(p,r)| / |B(p,1)|
    pub ratio: f64,
    /// inf over ρ ∈ (0, 1/r) of ρ^{-n}|B(q,ρ)|, q on ∂B(p,r).
    pub small_ball: f64,
}

/// Empirical constants of the volume inequalities over a radius grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollapsingRecord {
    pub model: String,
    pub unit_volume: f64,
    pub rows: Vec<VolumeRow>,
    pub skipped: Vec<f64>,
    /// Smallest C with r/C ≤ ratio ≤ C rⁿ.
    pub bracket_constant: f64,
    /// Smallest C with inf ρ^{-n}|B(q,ρ)| ≥ |B(p,1)|/C.
    pub small_ball_constant: f64,
    /// Largest c with r^{-n}|B| ≥ c e^μ (1 + Λr²)^{-n/2}, Λ = sup R.
    pub volume_lower_constant: f64,
    /// Largest ε₀ with |B(p,r)| ≥ ε₀ e^μ r.
    pub linear_constant: f64,
    /// Smallest C with |B(p,r)| ≤ C e^μ rⁿ.
    pub upper_constant: f64,
    /// max |ratio - rⁿ| / rⁿ, meaningful on flat models.
    pub euclidean_defect: f64,
}

/// Radii beyond `extent / 2` on a model with a flat factor are skipped.
/// The catalog factors are homogeneous, so a ball about any q on the
/// r-sphere (whether reached along the sphere axis or the flat axis) has
/// the volume of the ball about p.
pub fn no_local_collapsing_suite(model: &ShrinkerModel, radii: &[f64], extent: f64) -> Result<CollapsingRecord> {
    let mut wide = model.clone();
    wide.grid.rho_max = wide.grid.rho_max.max(extent);
    let n = model.n as i32;
    let unit = volume_ball(&wide, 1.0)?;
    let scalar = model.scalar_curvature();
    let e_mu = model.mu.exp();
    let mut rec = CollapsingRecord {
        model: model.name(),
        unit_volume: unit,
        rows: Vec::new(),
        skipped: Vec::new(),
        bracket_constant: 1.0,
        small_ball_constant: 0.0,
        volume_lower_constant: f64::MAX,
        linear_constant: f64::MAX,
        upper_constant: 0.0,
        euclidean_defect: 0.0,
    };
    for &r in radii {
        if model.has_flat() && r > extent / 2.0 {
            rec.skipped.push(r);
            continue;
        }
        let volume = volume_ball(&wide, r)?;
        let ratio = volume / unit;
        let rn = r.powi(n);
        let mut small = f64::MAX;
        for j in 0..8 {
            let rho = r.recip() * 0.5f64.powi(j);
            small = small.min(volume_ball(&wide, rho)? / rho.powi(n));
        }
        rec.bracket_constant = rec.bracket_constant.max(ratio / rn).max(r / ratio);
        rec.small_ball_constant = rec.small_ball_constant.max(unit / small);
        let lower = volume / rn / (e_mu * (1.0 + scalar * r * r).powf(-(n as f64) / 2.0));
        rec.volume_lower_constant = rec.volume_lower_constant.min(lower);
        rec.linear_constant = rec.linear_constant.min(volume / (e_mu * r));
        rec.upper_constant = rec.upper_constant.max(volume / (e_mu * rn));
        rec.euclidean_defect = rec.euclidean_defect.max((ratio - rn).abs() / rn);
        rec.rows.push(VolumeRow {
            r,
            volume,
            ratio,
            small_ball: small,
        });
    }
    Ok(rec)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PseudoLocality {
    pub delta0: f64,
    /// None when the profile never drops below -δ₀ on the grid.
    pub tau0: Option<f64>,
    pub sup_rm: f64,
    pub product: Option<f64>,
    /// μ(g, τ_min) already below -δ₀: τ₀ is only bounded above by τ_min.
    pub below_grid: bool,
}

/// τ₀ = sup{τ : μ(g, s) ≥ -δ₀ for s ≤ τ}, from the profile nodes and a
/// bisection in log τ between the bracketing nodes.
pub fn pseudo_locality_scale(model: &ShrinkerModel, profile: &EntropyProfile, delta0: f64) -> Result<PseudoLocality> {
    let sup_rm = curvature_spectrum(model, &model.base_point())?.max_abs();
    let first = profile.nodes.iter().position(|nd| nd.mu < -delta0);
    let (tau0, below_grid) = match first {
        None => (None, false),
        Some(0) => (Some(profile.nodes[0].tau), true),
        Some(i) => {
            let (mut lo, mut hi) = (profile.nodes[i - 1].tau.ln(), profile.nodes[i].tau.ln());
            for _ in 0..14 {
                let mid = 0.5 * (lo + hi);
                if minimize_mu(model, mid.exp(), None)?.mu < -delta0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            (Some((0.5 * (lo + hi)).exp()), false)
        }
    };
    Ok(PseudoLocality {
        delta0,
        tau0,
        sup_rm,
        product: tau0.map(|t| t * sup_rm),
        below_grid,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapResult {
    pub nonflat: Vec<(String, f64)>,
    pub flat: Vec<(String, f64)>,
    /// -max μ over the nonflat models.
    pub gap: Option<f64>,
}

pub fn gap_experiment(models: &[ShrinkerModel]) -> GapResult {
    let (flat, nonflat): (Vec<_>, Vec<_>) = models.iter().partition(|m| m.is_flat());
    let nonflat: Vec<(String, f64)> = nonflat.iter().map(|m| (m.name(), m.mu)).collect();
    let gap = nonflat.iter().map(|(_, mu)| *mu).reduce(f64::max).map(|m| -m);
    GapResult {
        nonflat,
        flat: flat.iter().map(|m| (m.name(), m.mu)).collect(),
        gap,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvatureIntegrals {
    pub lambda: f64,
    /// ∫|Rm|² e^{-λf} dV
    pub rm: f64,
    /// ∫|Rc|² e^{-f} dV
    pub rc: f64,
    /// ∫|Rc|² e^{-f} dV / e^μ
    pub ratio: f64,
}

/// The curvature norms are constant on the catalog, so both integrals are
/// the norms times a weighted volume.
pub fn weighted_curvature_integrals(model: &ShrinkerModel, lambda: f64) -> Result<CurvatureIntegrals> {
    let (rm2, rc2) = model.curvature_norms();
    let rm = rm2 * weighted_volume(model, lambda)?;
    let rc = rc2 * weighted_volume(model, 1.0)?;
    Ok(CurvatureIntegrals {
        lambda,
        rm,
        rc,
        ratio: rc / model.mu.exp(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelKind;

    #[test]
    fn gaussian_volume_ratio_is_a_power() {
        let g = ShrinkerModel::new(ModelKind::Gaussian, 3, None).unwrap();
        let rec = no_local_collapsing_suite(&g, &[1.0, 2.0, 4.0, 8.0], 40.0).unwrap();
        assert!(rec.euclidean_defect < 1e-10, "{}", rec.euclidean_defect);
        assert!((rec.linear_constant - 4.0 * std::f64::consts::PI / 3.0).abs() < 1e-9);
    }

    #[test]
    fn cylinder_volume_grows_quadratically() {
        let c = ShrinkerModel::new(ModelKind::Cylinder, 4, Some(2)).unwrap();
        let rec = no_local_collapsing_suite(&c, &[1.0, 2.0, 4.0, 8.0, 16.0], 40.0).unwrap();
        assert_eq!(rec.rows.len(), 5);
        let last = &rec.rows[4];
        let prev = &rec.rows[3];
        // |B(r)| ∝ r² - E[d²] once r exceeds the sphere diameter, E[d²] = a²(π²/2 - 2)
        let e = 2.0 * (std::f64::consts::PI.powi(2) / 2.0 - 2.0);
        let expect = (256.0 - e) / (64.0 - e);
        assert!((last.ratio / prev.ratio / expect - 1.0).abs() < 1e-6, "{} {}", last.ratio / prev.ratio, expect);
        assert!(rec.bracket_constant.is_finite() && rec.small_ball_constant > 0.0);
        let skipped = no_local_collapsing_suite(&c, &[16.0], 24.0).unwrap();
        assert_eq!(skipped.skipped, vec![16.0]);
    }

    #[test]
    fn gap_and_integrals() {
        let models: Vec<ShrinkerModel> = [(ModelKind::Gaussian, 3, None), (ModelKind::Sphere, 2, None), (ModelKind::Cylinder, 4, Some(2))]
            .iter()
            .map(|&(k, n, kk)| ShrinkerModel::new(k, n, kk).unwrap())
            .collect();
        let gap = gap_experiment(&models);
        assert_eq!(gap.nonflat.len(), 2);
        assert!((gap.gap.unwrap() - (1.0 - 2f64.ln())).abs() < 1e-8);
        assert_eq!(gap_experiment(&models[..1]).gap, None);
        let ci = weighted_curvature_integrals(&models[0], 1.0).unwrap();
        assert_eq!((ci.rm, ci.rc), (0.0, 0.0));
        // |Rc|² = k/4 on S²(√2) × R², ∫e^{-f} = 8π e^{-1} · 4π
        let ci = weighted_curvature_integrals(&models[2], 1.0).unwrap();
        let weight = 8.0 * std::f64::consts::PI * (-1.0f64).exp() * 4.0 * std::f64::consts::PI;
        assert!((ci.rc / (0.5 * weight) - 1.0).abs() < 1e-10, "{}", ci.rc);
    }
}
