//! The replicating strategy.
//!
//! Writing `ĝ_t = p + ∫ η dB̃` and `S̃_t = S̃_0 + ∫ σ̃ dB̃`, the claim is
//! replicated by holdings `H` with `σ̃ᵀ H = η`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::dynamics::{example1_dynamics, min_singular_value, Evaluator, StateEval};
use crate::error::{EngineError, Result};
use crate::model::{ClaimSpec, State, ValidatedScenario};
use crate::pricing::TiltedMeasure;

/// Below this smallest singular value (but above the tolerance) a ratio is
/// returned with a warning.
pub const WARN_CONDITION: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HedgeRatio {
    /// Integrand of `ĝ` against the pricing-measure Brownian motion.
    pub eta: Vec<f64>,
    /// Holdings in each risky asset.
    pub holdings: Vec<f64>,
    /// Smallest singular value of the `σ̃` used.
    pub cond: f64,
    pub warn: bool,
}

/// `η(t, b)`, the gradient of `ĝ` in `b`.
pub fn clark_ocone_integrand(state: &State, m: &TiltedMeasure, s: &ValidatedScenario) -> Result<Vec<f64>> {
    Ok(Evaluator::new(s, m)?.eval(state)?.eta)
}

fn incomplete(state: &State, min_sv: f64) -> EngineError {
    EngineError::IncompleteMarket {
        t: state.t,
        b: state.b.clone(),
        min_sv,
        paths: 1,
    }
}

/// Holdings from an already evaluated state.
pub fn ratio_from_eval(e: &StateEval, s: &ValidatedScenario) -> Result<HedgeRatio> {
    let cond = min_singular_value(&e.sigma);
    let tol = s.numerics.sv_tolerance;
    if !(cond >= tol) {
        return Err(incomplete(&e.state, cond));
    }
    let diagonal = matches!(s.claim, ClaimSpec::Separable(_)) && s.utility.single_rate().is_some();
    let holdings = if diagonal {
        e.eta.iter().enumerate().map(|(j, v)| v / e.sigma[(j, j)]).collect()
    } else {
        solve_transposed(&e.sigma, &e.eta).ok_or_else(|| incomplete(&e.state, cond))?
    };
    Ok(HedgeRatio {
        eta: e.eta.clone(),
        holdings,
        cond,
        warn: cond <= WARN_CONDITION,
    })
}

/// Solves `σᵀ h = η` by LU with partial pivoting.
pub fn solve_transposed(sigma: &DMatrix<f64>, eta: &[f64]) -> Option<Vec<f64>> {
    let rhs = DVector::from_column_slice(eta);
    sigma.transpose().lu().solve(&rhs).map(|h| h.iter().copied().collect())
}

/// `H = (σ̃ᵀ)⁻¹ η`, or an incompleteness error when `σ̃` is numerically singular.
pub fn hedge_ratio(state: &State, m: &TiltedMeasure, s: &ValidatedScenario) -> Result<HedgeRatio> {
    if s.is_example1() {
        // σ does not depend on the level at τ
        let point = example1_dynamics(s, state, Some(0.0))?;
        if !(point.sigma >= s.numerics.sv_tolerance) {
            return Err(incomplete(state, point.sigma.abs()));
        }
        let eta = Evaluator::new(s, m)?.eval(state)?.eta;
        let holdings = eta.iter().map(|v| v / point.sigma).collect();
        return Ok(HedgeRatio {
            eta,
            holdings,
            cond: point.sigma,
            warn: point.sigma <= WARN_CONDITION,
        });
    }
    ratio_from_eval(&Evaluator::new(s, m)?.eval(state)?, s)
}

/// Ratio-of-deltas holdings `(∂ĝ/∂bʲ) / (∂S̃ʲ/∂bʲ)` by central differences,
/// meaningful when `σ̃` is diagonal.
pub fn finite_difference_ratio(
    state: &State,
    m: &TiltedMeasure,
    s: &ValidatedScenario,
    step: f64,
) -> Result<Vec<f64>> {
    let eval = Evaluator::new(s, m)?;
    (0..s.dimension)
        .map(|j| {
            let bump = |h: f64| {
                let mut b = state.b.clone();
                b[j] += h;
                eval.eval(&State::new(state.t, b))
            };
            let (up, down) = (bump(step)?, bump(-step)?);
            Ok((up.g_hat - down.g_hat) / (up.s_tilde[j] - down.s_tilde[j]))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate_scenario, PiecewiseLinear, Scenario, SeparableClaim, UtilitySpec};
    use crate::pricing::solve_price;
    use proptest::prelude::*;

    fn setup(claim: SeparableClaim, dim: usize, utility: UtilitySpec) -> (ValidatedScenario, TiltedMeasure) {
        let mut sc = Scenario::bachelier(dim, 1.0, 1.0, ClaimSpec::Separable(claim));
        sc.utility = utility;
        let s = validate_scenario(sc).unwrap();
        let m = solve_price(&s).unwrap();
        (s, m)
    }

    fn single(leg: PiecewiseLinear) -> (ValidatedScenario, TiltedMeasure) {
        setup(SeparableClaim::single(leg), 1, UtilitySpec::exponential(1.0))
    }

    #[test]
    fn constant_and_linear_closed_forms() {
        let (s, m) = single(PiecewiseLinear::constant(1.3));
        let h = hedge_ratio(&State::new(0.4, vec![0.9]), &m, &s).unwrap();
        assert_eq!(h.holdings, vec![0.0]);
        assert_eq!(h.eta, vec![0.0]);
        let (s, m) = single(PiecewiseLinear::linear());
        for st in [State::origin(1), State::new(0.7, vec![-3.0]), State::new(1.0, vec![2.0])] {
            let h = hedge_ratio(&st, &m, &s).unwrap();
            assert!((h.holdings[0] - 1.0).abs() < 1e-12);
            assert!((h.eta[0] - 1.0).abs() < 1e-12);
            assert!(!h.warn);
        }
    }

    #[test]
    fn call_holdings_are_bounded_and_monotone() {
        let (s, m) = single(PiecewiseLinear::call(0.0));
        let mut prev = 0.0;
        for k in -30..=30 {
            let h = hedge_ratio(&State::new(0.5, vec![k as f64 * 0.1]), &m, &s).unwrap().holdings[0];
            assert!((0.0..=1.0).contains(&h), "H = {h}");
            assert!(h >= prev - 1e-12);
            prev = h;
        }
    }

    #[test]
    fn basket_fast_path_matches_general_solve() {
        let claim = SeparableClaim::new(vec![PiecewiseLinear::call(0.0), PiecewiseLinear::put(0.2)], vec![0.7, 0.3]);
        let (s, m) = setup(claim, 2, UtilitySpec::exponential(1.0));
        let e = Evaluator::new(&s, &m).unwrap().eval(&State::new(0.3, vec![0.2, -0.4])).unwrap();
        let fast = ratio_from_eval(&e, &s).unwrap().holdings;
        let general = solve_transposed(&e.sigma, &e.eta).unwrap();
        for (a, b) in fast.iter().zip(&general) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn mixture_uses_full_solve() {
        let claim = SeparableClaim::new(vec![PiecewiseLinear::call(0.0), PiecewiseLinear::call(0.5)], vec![1.0, 1.0]);
        let (s, m) = setup(claim, 2, UtilitySpec::mixture(&[(1.0, 0.5), (1.0, 2.0)]));
        let st = State::new(0.2, vec![0.1, 0.3]);
        let e = Evaluator::new(&s, &m).unwrap().eval(&st).unwrap();
        let h = hedge_ratio(&st, &m, &s).unwrap();
        let r = e.sigma.transpose() * DVector::from_column_slice(&h.holdings);
        for j in 0..2 {
            assert!((r[j] - h.eta[j]).abs() < 1e-10);
        }
    }

    #[test]
    fn forced_tolerance_reports_incompleteness() {
        let (mut s, m) = single(PiecewiseLinear::call(0.0));
        s.scenario.numerics.sv_tolerance = 10.0;
        match hedge_ratio(&State::origin(1), &m, &s) {
            Err(EngineError::IncompleteMarket { min_sv, .. }) => assert!(min_sv >= 1.0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn example1_is_singular_before_tau() {
        let s = validate_scenario(Scenario::example1(1.0, 0.5)).unwrap();
        let m = solve_price(&s).unwrap();
        assert!(matches!(
            hedge_ratio(&State::new(0.2, vec![0.0]), &m, &s),
            Err(EngineError::IncompleteMarket { .. })
        ));
        let h = hedge_ratio(&State::new(0.7, vec![0.0]), &m, &s).unwrap();
        assert!((h.holdings[0] - 1.0).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn malliavin_route_matches_ratio_of_deltas(t in 0.0f64..0.95, b in -2.5f64..2.5, k in -1.0f64..1.0) {
            let (s, m) = single(PiecewiseLinear::call(k));
            let st = State::new(t, vec![b]);
            let h = hedge_ratio(&st, &m, &s).unwrap().holdings[0];
            let fd = finite_difference_ratio(&st, &m, &s, 1e-4).unwrap()[0];
            prop_assert!((h - fd).abs() < 1e-3, "{h} vs {fd}");
        }
    }
}
