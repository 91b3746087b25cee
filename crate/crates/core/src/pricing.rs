//! The claim price and the pricing measure it induces.
//!
//! The price `p` solves `ψ(p) = E[(p − G(Z)) U'(x + p − G(Z))] = 0` with
//! `Z = B_T ~ N(0, T·I)`, and the pricing measure has density proportional to
//! `U'(x + p − G(B_T))`. Writing `U' = Σ_i c_i e^{−γ_i y}` gives
//! `ψ(p) = Σ_i c_i e^{−γ_i(x+p)} m_i (p − μ_i)` where `m_i = E[e^{γ_i G}]` and
//! `μ_i` is the `γ_i`-tilted mean of `G`; the solver works on `ψ` divided by
//! its positive factor `Σ_i c_i e^{−γ_i(x+p)} m_i`, which has the same roots.

use serde::Serialize;

use crate::dynamics::Evaluator;
use crate::error::{EngineError, Result};
use crate::gauss::cached_rule;
use crate::model::{log_sum_exp, ClaimSpec, State, UtilitySpec, ValidatedScenario};
use crate::tilt::term_masses;

const MAX_DOUBLINGS: usize = 60;
const SCAN_POINTS: usize = 400;

#[derive(Debug, Clone, Serialize)]
pub struct SolverReport {
    /// `E[G(Z)]` under the original measure; the bracket is grown around it.
    pub untilted_mean: f64,
    pub bracket: (f64, f64),
    pub iterations: usize,
    /// `|ψ(p)|`, unnormalized.
    pub psi_residual: f64,
    /// `E[G e^{γG}] / E[e^{γG}]`, for single-exponential utilities.
    pub closed_form: Option<f64>,
    /// Number of sign changes of `ψ` found by the grid scan (mixtures only).
    pub sign_changes: Option<usize>,
    pub unique: bool,
}

/// Solved price with the un-normalized pricing density `z ↦ U'(x + p − G(z))`.
#[derive(Debug, Clone)]
pub struct TiltedMeasure {
    pub p: f64,
    /// `E[U'(x + p − G(Z))]` at `t = 0`.
    pub norm0: f64,
    pub log_norm0: f64,
    pub solver: SolverReport,
    pub(crate) wealth: f64,
    pub(crate) utility: UtilitySpec,
    pub(crate) claim: ClaimSpec,
    /// `ln c_i − γ_i (x + p)`.
    pub(crate) log_coefs: Vec<f64>,
}

impl TiltedMeasure {
    pub fn weight(&self, z: &[f64]) -> f64 {
        self.log_weight(z).exp()
    }

    pub fn log_weight(&self, z: &[f64]) -> f64 {
        self.utility.log_marginal(self.wealth + self.p - self.claim.value(z))
    }

    pub fn rates(&self) -> impl Iterator<Item = f64> + '_ {
        self.utility.terms.iter().map(|t| t.rate)
    }
}

/// Pricing density `U'(x + p − G(z))`, strictly positive.
pub fn tilt_weight(m: &TiltedMeasure, z: &[f64]) -> f64 {
    m.weight(z)
}

/// `ψ(p)` divided by `Σ_i c_i e^{−γ_i(x+p)} m_i`: `p` minus a mixture of the
/// tilted means.
fn normalized_psi(p: f64, wealth: f64, utility: &UtilitySpec, masses: &[(f64, f64)]) -> f64 {
    let logs: Vec<f64> = utility
        .terms
        .iter()
        .zip(masses)
        .map(|(t, (lm, _))| t.weight.ln() - t.rate * (wealth + p) + lm)
        .collect();
    let lse = log_sum_exp(logs.iter().copied());
    p - logs
        .iter()
        .zip(masses)
        .map(|(l, (_, mu))| (l - lse).exp() * mu)
        .sum::<f64>()
}

fn raw_psi(p: f64, wealth: f64, utility: &UtilitySpec, masses: &[(f64, f64)]) -> f64 {
    utility
        .terms
        .iter()
        .zip(masses)
        .map(|(t, (lm, mu))| (t.weight.ln() - t.rate * (wealth + p) + lm).exp() * (p - mu))
        .sum()
}

/// Bracketed false position (Illinois) with bisection fallback.
fn refine_root(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> (f64, usize) {
    let (mut flo, mut fhi) = (f(lo), f(hi));
    if flo == 0.0 {
        return (lo, 0);
    }
    if fhi == 0.0 {
        return (hi, 0);
    }
    let mut side = 0i8;
    let mut iterations = 0;
    for it in 1..=300 {
        iterations = it;
        let mut x = (lo * fhi - hi * flo) / (fhi - flo);
        if !(x > lo && x < hi) {
            x = 0.5 * (lo + hi);
        }
        let fx = f(x);
        if fx == 0.0 {
            return (x, it);
        }
        if (fx < 0.0) == (flo < 0.0) {
            lo = x;
            flo = fx;
            if side == -1 {
                fhi *= 0.5;
            }
            side = -1;
        } else {
            hi = x;
            fhi = fx;
            if side == 1 {
                flo *= 0.5;
            }
            side = 1;
        }
        if hi - lo <= 4.0 * f64::EPSILON * lo.abs().max(hi.abs()).max(1e-300) {
            break;
        }
    }
    let x = if flo.abs() < fhi.abs() { lo } else { hi };
    (x, iterations)
}

/// Solve the price equation and build the pricing measure.
pub fn solve_price(s: &ValidatedScenario) -> Result<TiltedMeasure> {
    let rule = cached_rule(s.numerics.quad_order)?;
    let origin = State::origin(s.dimension);
    let masses = term_masses(&s.claim, &s.utility, &origin.b, s.horizon, &rule);
    if masses.iter().any(|(lm, mu)| !lm.is_finite() || !mu.is_finite()) {
        return Err(EngineError::NonFinite("exponential moments of the claim".into()));
    }
    // rate 0: no tilt
    let untilted_mean =
        term_masses(&s.claim, &UtilitySpec::exponential(0.0), &origin.b, s.horizon, &rule)[0].1;
    let x = s.wealth;
    let u = &s.utility;
    let psi = |p: f64| normalized_psi(p, x, u, &masses);

    let mut half = 1.0f64.max(untilted_mean.abs() * 1e-3);
    let mut bracket = None;
    for _ in 0..MAX_DOUBLINGS {
        let (lo, hi) = (untilted_mean - half, untilted_mean + half);
        let (flo, fhi) = (psi(lo), psi(hi));
        if !flo.is_finite() || !fhi.is_finite() {
            return Err(EngineError::NonFinite("price equation".into()));
        }
        if flo * fhi <= 0.0 {
            bracket = Some((lo, hi));
            break;
        }
        half *= 2.0;
    }
    let (lo, hi) = bracket.ok_or(EngineError::BracketNotFound {
        doublings: MAX_DOUBLINGS,
    })?;

    let mut sign_changes = None;
    if u.terms.len() > 1 && u.single_rate().is_none() {
        let roots = scan_roots(&psi, &masses, lo, hi);
        sign_changes = Some(roots.len());
        if roots.len() > 1 {
            return Err(EngineError::NonUniqueRoot { roots });
        }
    }

    let (p, iterations) = refine_root(psi, lo, hi);
    let closed_form = u.single_rate().map(|_| masses[0].1);
    let psi_residual = raw_psi(p, x, u, &masses).abs();

    let log_coefs: Vec<f64> = u.terms.iter().map(|t| t.weight.ln() - t.rate * (x + p)).collect();
    let log_norm0 = log_sum_exp(log_coefs.iter().zip(&masses).map(|(lc, (lm, _))| lc + lm));
    Ok(TiltedMeasure {
        p,
        norm0: log_norm0.exp(),
        log_norm0,
        solver: SolverReport {
            untilted_mean,
            bracket: (lo, hi),
            iterations,
            psi_residual,
            closed_form,
            sign_changes,
            unique: true,
        },
        wealth: x,
        utility: u.clone(),
        claim: s.claim.clone(),
        log_coefs,
    })
}

/// Sign changes of `ψ` on a uniform grid covering the bracket and every tilted mean.
fn scan_roots(psi: &impl Fn(f64) -> f64, masses: &[(f64, f64)], lo: f64, hi: f64) -> Vec<f64> {
    let lo = masses.iter().map(|m| m.1).fold(lo, f64::min) - 1.0;
    let hi = masses.iter().map(|m| m.1).fold(hi, f64::max) + 1.0;
    let step = (hi - lo) / SCAN_POINTS as f64;
    let mut roots = Vec::new();
    let mut prev = (lo, psi(lo));
    for k in 1..=SCAN_POINTS {
        let x = lo + step * k as f64;
        let fx = psi(x);
        if prev.1 == 0.0 {
            roots.push(prev.0);
        } else if (prev.1 < 0.0) != (fx < 0.0) && fx != 0.0 {
            roots.push(refine_root(psi, prev.0, x).0);
        }
        prev = (x, fx);
    }
    roots
}

#[derive(Debug, Clone, Serialize)]
pub struct ConsistencyReport {
    pub price: f64,
    /// `Ẽ[g]` at `t = 0`.
    pub tilted_claim_mean: f64,
    /// `|Ẽ[g] − p|`.
    pub claim_mean_gap: f64,
    /// `|E[(p − g) U'(x + p − g)]|`.
    pub psi_residual: f64,
    /// `S̃_0 = Ẽ[f]`.
    pub initial_prices: Vec<f64>,
}

impl ConsistencyReport {
    pub fn passes(&self, tol_gap: f64, tol_psi: f64) -> bool {
        self.claim_mean_gap <= tol_gap && self.psi_residual <= tol_psi
    }
}

/// Self-consistency of the solved measure, evaluated through the state engine.
pub fn consistency_report(m: &TiltedMeasure, s: &ValidatedScenario) -> Result<ConsistencyReport> {
    let eval = Evaluator::new(s, m)?;
    let at0 = eval.eval(&State::origin(s.dimension))?;
    let rule = cached_rule(s.numerics.quad_order)?;
    let masses = term_masses(&s.claim, &s.utility, &vec![0.0; s.dimension], s.horizon, &rule);
    let psi_residual = raw_psi(m.p, m.wealth, &m.utility, &masses).abs();
    let initial_prices = if s.is_example1() {
        vec![0.0]
    } else {
        at0.s_tilde.clone()
    };
    Ok(ConsistencyReport {
        price: m.p,
        tilted_claim_mean: at0.g_hat,
        claim_mean_gap: (at0.g_hat - m.p).abs(),
        psi_residual,
        initial_prices,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate_scenario, PiecewiseLinear, Scenario, SeparableClaim};
    use crate::rng;
    use rand_distr::{Distribution, StandardNormal};

    fn scenario(leg: PiecewiseLinear, rate: f64) -> ValidatedScenario {
        validate_scenario(Scenario::bachelier(
            1,
            1.0,
            rate,
            ClaimSpec::Separable(SeparableClaim::single(leg)),
        ))
        .unwrap()
    }

    #[test]
    fn constant_claim_prices_at_its_value() {
        let s = scenario(PiecewiseLinear::constant(2.5), 1.0);
        let m = solve_price(&s).unwrap();
        assert!((m.p - 2.5).abs() < 1e-14);
        assert!(m.solver.psi_residual < 1e-14);
        let r = consistency_report(&m, &s).unwrap();
        assert!(r.claim_mean_gap < 1e-14 && r.psi_residual < 1e-14);
    }

    #[test]
    fn linear_claim_matches_tilting_identity() {
        // E[X e^{γX}] / E[e^{γX}] = γT for X ~ N(0, T).
        for (rate, horizon) in [(1.0, 1.0), (0.5, 2.0), (2.0, 0.25)] {
            let mut sc = Scenario::bachelier(
                1,
                horizon,
                rate,
                ClaimSpec::Separable(SeparableClaim::single(PiecewiseLinear::linear())),
            );
            sc.wealth = 3.0;
            let s = validate_scenario(sc).unwrap();
            let m = solve_price(&s).unwrap();
            assert!((m.p - rate * horizon).abs() < 1e-12, "{} vs {}", m.p, rate * horizon);
            assert!((m.p - m.solver.closed_form.unwrap()).abs() < 1e-10);
        }
    }

    #[test]
    fn linear_claim_monte_carlo_cross_check() {
        let mut rng = rng::stream(9, "test", 0);
        let n = 400_000;
        let (mut num, mut den) = (0.0, 0.0);
        for _ in 0..n {
            let x: f64 = StandardNormal.sample(&mut rng);
            num += x * x.exp();
            den += x.exp();
        }
        let mc = num / den;
        let m = solve_price(&scenario(PiecewiseLinear::linear(), 1.0)).unwrap();
        assert!((mc - m.p).abs() < 0.02, "mc {mc} vs {}", m.p);
    }

    #[test]
    fn tilt_weight_ratios() {
        let s = scenario(PiecewiseLinear::call(0.0), 0.8);
        let m = solve_price(&s).unwrap();
        let r = tilt_weight(&m, &[1.3]) / tilt_weight(&m, &[-0.4]);
        assert!((r - (0.8f64 * 1.3).exp()).abs() < 1e-12);
        assert!(tilt_weight(&m, &[-50.0]) > 0.0);

        let c = scenario(PiecewiseLinear::constant(1.0), 1.0);
        let mc = solve_price(&c).unwrap();
        assert_eq!(tilt_weight(&mc, &[-3.0]), tilt_weight(&mc, &[4.0]));
    }

    #[test]
    fn mixture_weight_ratio_matches_utility_eval() {
        let mut sc = Scenario::bachelier(
            1,
            1.0,
            1.0,
            ClaimSpec::Separable(SeparableClaim::single(PiecewiseLinear::call(0.0))),
        );
        sc.utility = UtilitySpec::mixture(&[(1.0, 1.0), (1.0, 2.0)]);
        let s = validate_scenario(sc).unwrap();
        let m = solve_price(&s).unwrap();
        assert_eq!(m.solver.sign_changes, Some(1));
        let y = s.wealth + m.p;
        // G(-1) = 0, G(1) = 1
        let oracle = s.utility.eval(y - 1.0).du / s.utility.eval(y).du;
        let ratio = tilt_weight(&m, &[1.0]) / tilt_weight(&m, &[-1.0]);
        assert!((ratio - oracle).abs() < 1e-12 * oracle);
        let r = consistency_report(&m, &s).unwrap();
        assert!(r.claim_mean_gap < 1e-10, "{r:?}");
        assert!(r.psi_residual < 1e-10, "{r:?}");
    }

    #[test]
    fn convex_claims_price_above_untilted_mean() {
        for leg in [PiecewiseLinear::call(0.0), PiecewiseLinear::put(0.5), PiecewiseLinear::call(-1.0)] {
            let m = solve_price(&scenario(leg, 1.0)).unwrap();
            assert!(m.p >= m.solver.untilted_mean, "{} < {}", m.p, m.solver.untilted_mean);
        }
    }

    #[test]
    fn small_rate_limit_recovers_untilted_mean() {
        let m = solve_price(&scenario(PiecewiseLinear::call(0.0), 1e-4)).unwrap();
        let expected = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        assert!((m.p - expected).abs() < 1e-3 * expected);
    }

    #[test]
    fn illinois_refines_simple_roots() {
        let (r, _) = refine_root(|x| x * x - 2.0, 0.0, 2.0);
        assert!((r - 2f64.sqrt()).abs() < 1e-15);
    }
}
