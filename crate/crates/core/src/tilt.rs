//! Building blocks for expectations under the tilted (pricing) law.
//!
//! The pricing density is proportional to
//! `U'(x+p−G(z)) = Σ_i a_i e^{γ_i G(z)}` with `a_i = c_i e^{−γ_i (x+p)}`.
//! For a separable claim each term factorizes over coordinates, so the
//! conditional pricing law at a state is a mixture, over utility terms, of
//! product measures `Q_i = ⊗_j Q_ij` with `dQ_ij ∝ e^{γ_i c_j φ_j(z)} dN(b_j, T−t)`.
//! Everything is kept in log scale until normalized.

use crate::gauss::{for_each_tensor_node, Grid1d, QuadRule, BASE_EXTENT};
use crate::model::{log_sum_exp, ClaimSpec, PiecewiseLinear, SeparableClaim, UtilitySpec};

/// Moments of one coordinate under `Q_ij`.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct CoordMoments {
    /// `ln E[e^{γ c φ(Z)}]` under the untilted Gaussian.
    pub log_mass: f64,
    pub mean: f64,
    pub phi: f64,
    pub dphi: f64,
    pub z_dphi: f64,
    pub phi_dphi: f64,
    /// Centered `Cov(Z, φ'(Z))`.
    pub cov_z_dphi: f64,
}

/// One coordinate's grid with the leg evaluated at every node.
pub(crate) struct CoordGrid {
    pub grid: Grid1d,
    pub phi: Vec<f64>,
    pub dphi: Vec<f64>,
}

/// Window half-width (in standard deviations) that contains the tilted mass.
pub(crate) fn tilt_extent(max_rate: f64, weight: f64, max_slope: f64, sd: f64) -> f64 {
    BASE_EXTENT + max_rate * weight * max_slope * sd
}

pub(crate) fn coord_grid(
    leg: &PiecewiseLinear,
    weight: f64,
    max_rate: f64,
    mean: f64,
    var: f64,
    rule: &QuadRule,
) -> CoordGrid {
    let sd = var.max(0.0).sqrt();
    let extent = tilt_extent(max_rate, weight, leg.max_abs_slope(), sd);
    let grid = Grid1d::gaussian(mean, var, leg.breakpoints(), rule, extent);
    let phi = grid.nodes.iter().map(|&z| leg.value(z)).collect();
    let dphi = grid.nodes.iter().map(|&z| leg.derivative(z)).collect();
    CoordGrid { grid, phi, dphi }
}

pub(crate) fn coord_moments(cg: &CoordGrid, weight: f64, rate: f64) -> CoordMoments {
    let g = &cg.grid;
    let scale = rate * weight;
    let shift = cg.phi.iter().fold(f64::NEG_INFINITY, |m, &p| m.max(scale * p));
    let mut mass = 0.0;
    let (mut mean, mut phi, mut dphi, mut z_dphi, mut phi_dphi) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut e = Vec::with_capacity(g.len());
    for k in 0..g.len() {
        let w = g.weights[k] * (scale * cg.phi[k] - shift).exp();
        e.push(w);
        let z = g.nodes[k];
        mass += w;
        mean += w * z;
        phi += w * cg.phi[k];
        dphi += w * cg.dphi[k];
        z_dphi += w * z * cg.dphi[k];
        phi_dphi += w * cg.phi[k] * cg.dphi[k];
    }
    let inv = mass.recip();
    let (mean, dphi) = (mean * inv, dphi * inv);
    let mut cov = 0.0;
    for k in 0..g.len() {
        cov += e[k] * (g.nodes[k] - mean) * (cg.dphi[k] - dphi);
    }
    CoordMoments {
        log_mass: shift + mass.ln(),
        mean,
        phi: phi * inv,
        dphi,
        z_dphi: z_dphi * inv,
        phi_dphi: phi_dphi * inv,
        cov_z_dphi: cov * inv,
    }
}

/// Per utility term `i`: `ln E[e^{γ_i G(Z)}]` and the `γ_i`-tilted mean of `G`,
/// for `Z ~ N(b, var·I)`.
pub(crate) fn term_masses(
    claim: &ClaimSpec,
    utility: &UtilitySpec,
    b: &[f64],
    var: f64,
    rule: &QuadRule,
) -> Vec<(f64, f64)> {
    let max_rate = utility.max_rate();
    match claim {
        ClaimSpec::Separable(c) => {
            let grids = separable_grids(c, max_rate, b, var, rule);
            utility
                .terms
                .iter()
                .map(|t| {
                    let mut log_mass = 0.0;
                    let mut mean = 0.0;
                    for (j, cg) in grids.iter().enumerate() {
                        let m = coord_moments(cg, c.weights[j], t.rate);
                        log_mass += m.log_mass;
                        mean += c.weights[j] * m.phi;
                    }
                    (log_mass, mean)
                })
                .collect()
        }
        ClaimSpec::GeneralSmooth(_) => {
            let grids = smooth_grids(claim, max_rate, b, var, rule);
            let mut nodes = Vec::new();
            for_each_tensor_node(&grids, |z, w| nodes.push((w.ln(), claim.value(z))));
            utility
                .terms
                .iter()
                .map(|t| {
                    let logs = nodes.iter().map(|(lw, g)| lw + t.rate * g);
                    let lse = log_sum_exp(logs.clone());
                    let mean = nodes
                        .iter()
                        .map(|(lw, g)| (lw + t.rate * g - lse).exp() * g)
                        .sum();
                    (lse, mean)
                })
                .collect()
        }
    }
}

pub(crate) fn separable_grids(
    c: &SeparableClaim,
    max_rate: f64,
    b: &[f64],
    var: f64,
    rule: &QuadRule,
) -> Vec<CoordGrid> {
    c.legs
        .iter()
        .zip(&c.weights)
        .zip(b)
        .map(|((leg, &w), &bj)| coord_grid(leg, w, max_rate, bj, var, rule))
        .collect()
}

/// Per-coordinate grids for the pointwise tensor backend. Separable claims
/// get the tilt-aware window of their legs; smooth claims use the declared
/// growth bound as slope allowance.
pub(crate) fn smooth_grids(
    claim: &ClaimSpec,
    max_rate: f64,
    b: &[f64],
    var: f64,
    rule: &QuadRule,
) -> Vec<Grid1d> {
    let sd = var.max(0.0).sqrt();
    match claim {
        ClaimSpec::Separable(c) => separable_grids(c, max_rate, b, var, rule)
            .into_iter()
            .map(|cg| cg.grid)
            .collect(),
        ClaimSpec::GeneralSmooth(s) => {
            let kinks = claim.kinks(b.len());
            b.iter()
                .zip(&kinks)
                .map(|(&bj, k)| {
                    let extent = tilt_extent(max_rate, 1.0, s.growth_bound, sd);
                    Grid1d::gaussian(bj, var, k, rule, extent)
                })
                .collect()
        }
    }
}
