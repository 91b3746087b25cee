//! Domain types shared by every stage of the engine: the market maker's
//! utility, the contingent claim, the scenario and the evaluation state.
//!
//! The utility family is a finite mixture of exponentials,
//! `U(z) = Σ_i −c_i e^{−γ_i z} / γ_i`, whose absolute risk aversion
//! `A = −U''/U'` is a convex combination of the rates and therefore stays in
//! `[min γ_i, max γ_i]`. Claims are either separable sums of piecewise-linear
//! payoffs on each Brownian coordinate or caller-supplied smooth functions.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{EngineError, Result};

/// One exponential term `−c e^{−γ z} / γ` of the utility mixture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtilityTerm {
    /// Weight `c_i > 0`.
    pub weight: f64,
    /// Rate `γ_i > 0`.
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtilitySpec {
    pub terms: Vec<UtilityTerm>,
}

/// `U`, `U'`, `U''` and the absolute risk aversion `A = −U''/U'` at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UtilityValues {
    pub u: f64,
    pub du: f64,
    pub d2u: f64,
    pub risk_aversion: f64,
}

impl UtilitySpec {
    /// `U(z) = −e^{−γ z}/γ`.
    pub fn exponential(rate: f64) -> Self {
        Self::mixture(&[(1.0, rate)])
    }

    pub fn mixture(terms: &[(f64, f64)]) -> Self {
        UtilitySpec {
            terms: terms
                .iter()
                .map(|&(weight, rate)| UtilityTerm { weight, rate })
                .collect(),
        }
    }

    /// The common rate when every term shares it (then `A ≡ γ`).
    pub fn single_rate(&self) -> Option<f64> {
        let first = self.terms.first()?.rate;
        self.terms.iter().all(|t| t.rate == first).then_some(first)
    }

    pub fn min_rate(&self) -> f64 {
        self.terms.iter().map(|t| t.rate).fold(f64::INFINITY, f64::min)
    }

    pub fn max_rate(&self) -> f64 {
        self.terms.iter().map(|t| t.rate).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn eval(&self, z: f64) -> UtilityValues {
        utility_eval(self, z)
    }

    /// `ln U'(z)`, evaluated without overflow.
    pub fn log_marginal(&self, z: f64) -> f64 {
        log_sum_exp(self.terms.iter().map(|t| t.weight.ln() - t.rate * z))
    }

    pub fn marginal(&self, z: f64) -> f64 {
        self.log_marginal(z).exp()
    }

    fn diagnostics(&self, out: &mut Vec<String>) {
        if self.terms.is_empty() {
            out.push("utility.terms: empty utility mixture".into());
        }
        for (i, t) in self.terms.iter().enumerate() {
            if !(t.weight > 0.0 && t.weight.is_finite()) {
                out.push(format!("utility.terms[{i}].weight: non-positive weight {}", t.weight));
            }
            if !(t.rate > 0.0 && t.rate.is_finite()) {
                out.push(format!("utility.terms[{i}].rate: non-positive rate {}", t.rate));
            }
        }
    }
}

/// Exact evaluation of the mixture utility and its derivatives.
pub fn utility_eval(u: &UtilitySpec, z: f64) -> UtilityValues {
    let mut val = 0.0;
    let mut du = 0.0;
    let mut d2u = 0.0;
    for t in &u.terms {
        let e = t.weight * (-t.rate * z).exp();
        val -= e / t.rate;
        du += e;
        d2u -= t.rate * e;
    }
    // A as a convex combination of the rates, weighted by each term's share of U'.
    let log_terms: Vec<f64> = u.terms.iter().map(|t| t.weight.ln() - t.rate * z).collect();
    let lse = log_sum_exp(log_terms.iter().copied());
    let risk_aversion = u
        .terms
        .iter()
        .zip(&log_terms)
        .map(|(t, l)| t.rate * (l - lse).exp())
        .sum();
    UtilityValues {
        u: val,
        du,
        d2u,
        risk_aversion,
    }
}

pub(crate) fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Continuous piecewise-linear function of one variable.
///
/// `slopes[k]` applies on `[breakpoints[k-1], breakpoints[k])`, so there is one
/// more slope than breakpoints. The derivative at a breakpoint is the right
/// slope.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLinear {
    breakpoints: Vec<f64>,
    slopes: Vec<f64>,
    value_at_zero: f64,
    knot_values: Vec<f64>,
}

impl PiecewiseLinear {
    pub fn new(breakpoints: Vec<f64>, slopes: Vec<f64>, value_at_zero: f64) -> Result<Self> {
        let mut problems = Vec::new();
        Self::check(&breakpoints, &slopes, value_at_zero, "payoff", &mut problems);
        if !problems.is_empty() {
            return Err(EngineError::Validation(problems));
        }
        Ok(Self::build(breakpoints, slopes, value_at_zero))
    }

    fn check(bps: &[f64], slopes: &[f64], v0: f64, field: &str, out: &mut Vec<String>) {
        if slopes.len() != bps.len() + 1 {
            out.push(format!(
                "{field}: expected {} slopes for {} breakpoints, got {}",
                bps.len() + 1,
                bps.len(),
                slopes.len()
            ));
        }
        if bps.iter().chain(slopes).any(|v| !v.is_finite()) || !v0.is_finite() {
            out.push(format!("{field}: non-finite breakpoint, slope or value"));
        }
        if bps.windows(2).any(|w| w[0] >= w[1]) {
            out.push(format!("{field}.breakpoints: breakpoints must be strictly increasing"));
        }
    }

    fn build(breakpoints: Vec<f64>, slopes: Vec<f64>, value_at_zero: f64) -> Self {
        let mut f = PiecewiseLinear {
            breakpoints,
            slopes,
            value_at_zero,
            knot_values: Vec::new(),
        };
        f.knot_values = f
            .breakpoints
            .iter()
            .map(|&k| value_at_zero + f.slope_integral(0.0, k))
            .collect();
        f
    }

    /// `(x − strike)⁺`
    pub fn call(strike: f64) -> Self {
        Self::build(vec![strike], vec![0.0, 1.0], (-strike).max(0.0))
    }

    /// `(strike − x)⁺`
    pub fn put(strike: f64) -> Self {
        Self::build(vec![strike], vec![-1.0, 0.0], strike.max(0.0))
    }

    /// `x`
    pub fn linear() -> Self {
        Self::build(vec![], vec![1.0], 0.0)
    }

    pub fn constant(value: f64) -> Self {
        Self::build(vec![], vec![0.0], value)
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    pub fn value_at_zero(&self) -> f64 {
        self.value_at_zero
    }

    /// Slopes non-decreasing.
    pub fn is_convex(&self) -> bool {
        self.slopes.windows(2).all(|w| w[0] <= w[1])
    }

    pub fn max_abs_slope(&self) -> f64 {
        self.slopes.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    #[inline]
    fn segment(&self, x: f64) -> usize {
        self.breakpoints.partition_point(|&k| k <= x)
    }

    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        let i = self.segment(x);
        if self.breakpoints.is_empty() {
            self.value_at_zero + self.slopes[0] * x
        } else if i == 0 {
            self.knot_values[0] + self.slopes[0] * (x - self.breakpoints[0])
        } else {
            self.knot_values[i - 1] + self.slopes[i] * (x - self.breakpoints[i - 1])
        }
    }

    /// Right derivative.
    #[inline]
    pub fn derivative(&self, x: f64) -> f64 {
        self.slopes[self.segment(x)]
    }

    fn slope_integral(&self, a: f64, b: f64) -> f64 {
        if b < a {
            return -self.slope_integral(b, a);
        }
        let mut total = 0.0;
        let mut lo = a;
        let mut idx = self.segment(a);
        while lo < b {
            let hi = self.breakpoints.get(idx).copied().unwrap_or(f64::INFINITY).min(b);
            total += self.slopes[idx] * (hi - lo);
            lo = hi;
            idx += 1;
        }
        total
    }
}

/// `G(x) = Σ_j c_j φ_j(x^j)` with one piecewise-linear leg per coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparableClaim {
    pub legs: Vec<PiecewiseLinear>,
    pub weights: Vec<f64>,
}

impl SeparableClaim {
    pub fn new(legs: Vec<PiecewiseLinear>, weights: Vec<f64>) -> Self {
        SeparableClaim { legs, weights }
    }

    pub fn single(leg: PiecewiseLinear) -> Self {
        SeparableClaim {
            legs: vec![leg],
            weights: vec![1.0],
        }
    }

    /// Convexity flag: every leg has non-decreasing slopes (weights are non-negative).
    pub fn is_convex(&self) -> bool {
        self.legs.iter().all(PiecewiseLinear::is_convex)
    }

    pub fn value(&self, z: &[f64]) -> f64 {
        self.legs
            .iter()
            .zip(&self.weights)
            .zip(z)
            .map(|((leg, c), &x)| c * leg.value(x))
            .sum()
    }
}

pub type PayoffFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type GradientFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// Caller-supplied payoff with its gradient.
///
/// `growth_bound` declares `|G(z)| ≤ growth_bound·(1 + |z|)`; `kinks` optionally
/// lists per-coordinate points where the gradient jumps so that quadrature can
/// split there.
#[derive(Clone)]
pub struct SmoothClaim {
    pub dimension: usize,
    pub payoff: PayoffFn,
    pub gradient: GradientFn,
    pub growth_bound: f64,
    pub kinks: Vec<Vec<f64>>,
}

impl fmt::Debug for SmoothClaim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SmoothClaim")
            .field("dimension", &self.dimension)
            .field("growth_bound", &self.growth_bound)
            .field("kinks", &self.kinks)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone)]
pub enum ClaimSpec {
    Separable(SeparableClaim),
    GeneralSmooth(SmoothClaim),
}

impl ClaimSpec {
    pub fn value(&self, z: &[f64]) -> f64 {
        match self {
            ClaimSpec::Separable(c) => c.value(z),
            ClaimSpec::GeneralSmooth(c) => (c.payoff)(z),
        }
    }

    pub fn gradient(&self, z: &[f64]) -> Vec<f64> {
        match self {
            ClaimSpec::Separable(c) => c
                .legs
                .iter()
                .zip(&c.weights)
                .zip(z)
                .map(|((leg, w), &x)| w * leg.derivative(x))
                .collect(),
            ClaimSpec::GeneralSmooth(c) => (c.gradient)(z),
        }
    }

    /// Per-coordinate gradient discontinuities.
    pub fn kinks(&self, dimension: usize) -> Vec<Vec<f64>> {
        match self {
            ClaimSpec::Separable(c) => c.legs.iter().map(|l| l.breakpoints.clone()).collect(),
            ClaimSpec::GeneralSmooth(c) => {
                let mut k = c.kinks.clone();
                k.resize(dimension, Vec::new());
                k
            }
        }
    }

    pub fn as_separable(&self) -> Option<&SeparableClaim> {
        match self {
            ClaimSpec::Separable(c) => Some(c),
            ClaimSpec::GeneralSmooth(_) => None,
        }
    }

    /// True when the claim is `B_T` on a single coordinate.
    fn is_unit_linear(&self) -> bool {
        match self {
            ClaimSpec::Separable(c) => {
                c.legs.len() == 1
                    && c.legs[0].breakpoints.is_empty()
                    && c.legs[0].value_at_zero == 0.0
                    && c.weights[0] * c.legs[0].slopes[0] == 1.0
            }
            ClaimSpec::GeneralSmooth(_) => false,
        }
    }
}

/// Payoff `G(z)` and its a.e. gradient (right derivative at breakpoints).
pub fn claim_eval(c: &ClaimSpec, z: &[f64]) -> (f64, Vec<f64>) {
    (c.value(z), c.gradient(z))
}

/// Traded payoffs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TradedAsset {
    /// `f^j = B_T^j`.
    Bachelier,
    /// The one-dimensional incomplete market whose price process is frozen
    /// until `tau`.
    Example1 { tau: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NumericsConfig {
    pub quad_order: usize,
    pub mc_paths: usize,
    pub time_steps: usize,
    pub seed: u64,
    pub sv_tolerance: f64,
    pub root_tolerance: f64,
    /// RMS terminal replication error accepted by the `hedge` command.
    pub hedge_threshold: f64,
}

impl Default for NumericsConfig {
    fn default() -> Self {
        NumericsConfig {
            quad_order: 64,
            mc_paths: 10_000,
            time_steps: 64,
            seed: 20_100_607,
            sv_tolerance: 1e-8,
            root_tolerance: 1e-10,
            hedge_threshold: 0.1,
        }
    }
}

impl NumericsConfig {
    fn diagnostics(&self, out: &mut Vec<String>) {
        if self.quad_order < 2 {
            out.push(format!("numerics.quad_order: must be at least 2, got {}", self.quad_order));
        }
        if self.mc_paths == 0 {
            out.push("numerics.mc_paths: must be positive".into());
        }
        if self.time_steps == 0 {
            out.push("numerics.time_steps: must be positive".into());
        }
        if !(self.sv_tolerance > 0.0) {
            out.push(format!("numerics.sv_tolerance: must be positive, got {}", self.sv_tolerance));
        }
        if !(self.root_tolerance > 0.0) {
            out.push(format!(
                "numerics.root_tolerance: must be positive, got {}",
                self.root_tolerance
            ));
        }
        if !(self.hedge_threshold >= 0.0) {
            out.push("numerics.hedge_threshold: must be non-negative".into());
        }
    }
}

/// Full market description.
#[derive(Debug, Clone)]
pub struct Scenario {
    /// Number of risky assets / Brownian coordinates `J`.
    pub dimension: usize,
    /// Horizon `T`.
    pub horizon: f64,
    /// Market-maker initial wealth `x`.
    pub wealth: f64,
    pub utility: UtilitySpec,
    pub claim: ClaimSpec,
    pub traded: TradedAsset,
    pub numerics: NumericsConfig,
}

impl Scenario {
    /// Bachelier market with exponential utility and the given claim.
    pub fn bachelier(dimension: usize, horizon: f64, rate: f64, claim: ClaimSpec) -> Self {
        Scenario {
            dimension,
            horizon,
            wealth: 0.0,
            utility: UtilitySpec::exponential(rate),
            claim,
            traded: TradedAsset::Bachelier,
            numerics: NumericsConfig::default(),
        }
    }

    /// The incomplete market: `g = B_T`, `U(x) = −e^{−x}`, `J = 1`.
    pub fn example1(horizon: f64, tau: f64) -> Self {
        Scenario {
            dimension: 1,
            horizon,
            wealth: 0.0,
            utility: UtilitySpec::exponential(1.0),
            claim: ClaimSpec::Separable(SeparableClaim::single(PiecewiseLinear::linear())),
            traded: TradedAsset::Example1 { tau },
            numerics: NumericsConfig::default(),
        }
    }
}

/// A point `(t, b)`: time and current Brownian level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub t: f64,
    pub b: Vec<f64>,
}

impl State {
    pub fn new(t: f64, b: Vec<f64>) -> Self {
        State { t, b }
    }

    pub fn origin(dimension: usize) -> Self {
        State {
            t: 0.0,
            b: vec![0.0; dimension],
        }
    }
}

/// A scenario that passed validation, with the derived constants.
#[derive(Debug, Clone)]
pub struct ValidatedScenario {
    pub scenario: Scenario,
    /// Lower bound of `−U'/U''` (`1 / max γ_i`).
    pub c1: f64,
    /// Upper bound of `−U'/U''` (`1 / min γ_i`).
    pub c2: f64,
    /// `L` with `|G(z)| ≤ L (1 + |z|)`.
    pub growth_bound: f64,
    /// Separable claim whose every leg is convex.
    pub convex: bool,
}

impl std::ops::Deref for ValidatedScenario {
    type Target = Scenario;

    fn deref(&self) -> &Scenario {
        &self.scenario
    }
}

impl ValidatedScenario {
    pub fn is_example1(&self) -> bool {
        matches!(self.scenario.traded, TradedAsset::Example1 { .. })
    }
}

pub fn validate_scenario(s: Scenario) -> Result<ValidatedScenario> {
    let mut problems = Vec::new();
    if s.dimension == 0 {
        problems.push("J: dimension must be positive".into());
    }
    if !(s.horizon > 0.0 && s.horizon.is_finite()) {
        problems.push(format!("T: horizon must be positive, got {}", s.horizon));
    }
    if !s.wealth.is_finite() {
        problems.push("x: wealth must be finite".into());
    }
    s.utility.diagnostics(&mut problems);
    s.numerics.diagnostics(&mut problems);

    let mut growth_bound = 0.0;
    match &s.claim {
        ClaimSpec::Separable(c) => {
            if c.legs.len() != s.dimension || c.weights.len() != s.dimension {
                problems.push(format!(
                    "claim: separable claim needs {} legs and weights, got {} and {}",
                    s.dimension,
                    c.legs.len(),
                    c.weights.len()
                ));
            }
            for (j, w) in c.weights.iter().enumerate() {
                if !(*w >= 0.0 && w.is_finite()) {
                    problems.push(format!("claim.weights[{j}]: weights must be non-negative, got {w}"));
                }
            }
            for (j, leg) in c.legs.iter().enumerate() {
                PiecewiseLinear::check(
                    &leg.breakpoints,
                    &leg.slopes,
                    leg.value_at_zero,
                    &format!("claim.payoffs[{j}]"),
                    &mut problems,
                );
            }
            if problems.is_empty() {
                let lipschitz: f64 = c
                    .legs
                    .iter()
                    .zip(&c.weights)
                    .map(|(l, w)| w * l.max_abs_slope())
                    .sum();
                growth_bound = lipschitz.max(c.value(&vec![0.0; s.dimension]).abs());
            }
        }
        ClaimSpec::GeneralSmooth(c) => {
            if c.dimension != s.dimension {
                problems.push(format!(
                    "claim: smooth claim dimension {} does not match J = {}",
                    c.dimension, s.dimension
                ));
            }
            if !(c.growth_bound >= 0.0 && c.growth_bound.is_finite()) {
                problems.push("claim.growth_bound: must be a finite non-negative number".into());
            }
            for (j, k) in c.kinks.iter().enumerate() {
                if k.windows(2).any(|w| w[0] >= w[1]) {
                    problems.push(format!("claim.kinks[{j}]: kinks must be strictly increasing"));
                }
            }
            growth_bound = c.growth_bound;
        }
    }

    if let TradedAsset::Example1 { tau } = s.traded {
        if s.dimension != 1 {
            problems.push(format!("traded: example1 requires J = 1, got {}", s.dimension));
        }
        if !(tau > 0.0 && tau < s.horizon) {
            problems.push(format!("traded.tau: must lie in (0, T), got {tau}"));
        }
        if !s.claim.is_unit_linear() {
            problems.push("claim: example1 requires the fixed claim g = B_T".into());
        }
        if s.utility.terms != [UtilityTerm { weight: 1.0, rate: 1.0 }] {
            problems.push("utility: example1 requires U(x) = -exp(-x)".into());
        }
    }

    if !problems.is_empty() {
        return Err(EngineError::Validation(problems));
    }
    let convex = s.claim.as_separable().is_some_and(SeparableClaim::is_convex);
    Ok(ValidatedScenario {
        c1: 1.0 / s.utility.max_rate(),
        c2: 1.0 / s.utility.min_rate(),
        growth_bound,
        convex,
        scenario: s,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn call_scenario() -> Scenario {
        Scenario::bachelier(
            1,
            1.0,
            1.0,
            ClaimSpec::Separable(SeparableClaim::single(PiecewiseLinear::call(0.0))),
        )
    }

    #[test]
    fn single_exponential_has_equal_bounds() {
        let v = validate_scenario(call_scenario()).unwrap();
        assert_eq!(v.c1, 1.0);
        assert_eq!(v.c2, 1.0);
        assert!(v.convex);
    }

    #[test]
    fn mixture_bounds_cover_risk_aversion_range() {
        let mut s = call_scenario();
        s.utility = UtilitySpec::mixture(&[(1.0, 1.0), (1.0, 2.0)]);
        let v = validate_scenario(s).unwrap();
        assert_eq!(v.c1, 0.5);
        assert_eq!(v.c2, 1.0);
        // A(z) over a wide grid stays in [1, 2] = [1/c2, 1/c1].
        for k in -400..=400 {
            let a = v.utility.eval(k as f64 * 0.1).risk_aversion;
            assert!((1.0 - 1e-12..=2.0 + 1e-12).contains(&a), "A({}) = {a}", k as f64 * 0.1);
        }
    }

    #[test]
    fn negative_weight_is_rejected() {
        let mut s = call_scenario();
        s.utility = UtilitySpec::mixture(&[(-1.0, 1.0)]);
        let err = validate_scenario(s).unwrap_err();
        assert!(err.to_string().contains("non-positive weight"), "{err}");
    }

    #[test]
    fn non_monotone_breakpoints_are_rejected() {
        let err = PiecewiseLinear::new(vec![1.0, 0.0], vec![0.0, 1.0, 2.0], 0.0).unwrap_err();
        assert!(err.to_string().contains("strictly increasing"));
    }

    #[test]
    fn example1_constraints() {
        assert!(validate_scenario(Scenario::example1(1.0, 0.5)).is_ok());
        let err = validate_scenario(Scenario::example1(1.0, 1.0)).unwrap_err();
        assert!(err.to_string().contains("tau"));
        let mut s = Scenario::example1(1.0, 0.5);
        s.claim = call_scenario().claim;
        assert!(validate_scenario(s).is_err());
        let mut s = Scenario::example1(1.0, 0.5);
        s.dimension = 2;
        assert!(validate_scenario(s).is_err());
    }

    #[test]
    fn utility_values_at_origin() {
        let v = utility_eval(&UtilitySpec::exponential(2.0), 0.0);
        assert_eq!(v.u, -0.5);
        assert_eq!(v.du, 1.0);
        assert_eq!(v.d2u, -2.0);
        assert_eq!(v.risk_aversion, 2.0);
        for z in [-30.0, -1.0, 0.3, 17.0] {
            assert_eq!(utility_eval(&UtilitySpec::exponential(0.7), z).risk_aversion, 0.7);
        }
    }

    #[test]
    fn mixture_risk_aversion_matches_log_derivative() {
        let u = UtilitySpec::mixture(&[(1.0, 1.0), (1.0, 3.0)]);
        let a = u.eval(0.0).risk_aversion;
        assert!((a - 2.0).abs() < 1e-15);
        // Oracle: A = −d/dz ln U'(z) by central differences.
        let h = 1e-5;
        let fd = -(u.eval(h).du.ln() - u.eval(-h).du.ln()) / (2.0 * h);
        assert!((fd - 2.0).abs() < 1e-8);
    }

    #[test]
    fn call_and_put_payoffs() {
        let c = ClaimSpec::Separable(SeparableClaim::single(PiecewiseLinear::call(0.0)));
        assert_eq!(claim_eval(&c, &[1.0]), (1.0, vec![1.0]));
        assert_eq!(claim_eval(&c, &[-1.0]), (0.0, vec![0.0]));
        // right derivative at the kink
        assert_eq!(claim_eval(&c, &[0.0]).1, vec![1.0]);
        let put = PiecewiseLinear::put(0.0);
        assert_eq!(put.derivative(0.0), 0.0);
        assert_eq!(put.value(-2.5), 2.5);
    }

    #[test]
    fn straddle_gradient_matches_finite_difference() {
        // 0.5·call + 0.5·put on the same coordinate, expressed as one leg.
        let leg = PiecewiseLinear::new(vec![0.0], vec![-0.5, 0.5], 0.0).unwrap();
        let c = ClaimSpec::Separable(SeparableClaim::single(leg));
        let (g, grad) = claim_eval(&c, &[2.0]);
        assert_eq!(g, 1.0);
        let h = 1e-6;
        let fd = (c.value(&[2.0 + h]) - c.value(&[2.0 - h])) / (2.0 * h);
        assert!((grad[0] - fd).abs() < 1e-6);
        assert_eq!(grad[0], 0.5);
    }

    #[test]
    fn piecewise_value_is_anchored_at_zero() {
        let f = PiecewiseLinear::new(vec![-1.0, 2.0], vec![2.0, -1.0, 0.5], 3.0).unwrap();
        assert_eq!(f.value(0.0), 3.0);
        assert_eq!(f.value(-1.0), 4.0);
        assert_eq!(f.value(-2.0), 2.0);
        assert_eq!(f.value(2.0), 1.0);
        assert_eq!(f.value(4.0), 2.0);
        assert!(!f.is_convex());
        assert!(PiecewiseLinear::call(3.0).is_convex());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn utility_is_increasing_concave_with_bounded_risk_aversion(
                terms in prop::collection::vec((0.01f64..10.0, 0.05f64..5.0), 1..4),
                z in -20.0f64..20.0,
            ) {
                let u = UtilitySpec::mixture(&terms);
                let v = u.eval(z);
                prop_assert!(v.du > 0.0);
                prop_assert!(v.d2u < 0.0);
                let tol = 1e-12 * u.max_rate();
                prop_assert!(v.risk_aversion >= u.min_rate() - tol);
                prop_assert!(v.risk_aversion <= u.max_rate() + tol);
            }

            #[test]
            fn convex_leg_has_non_decreasing_derivative(
                mut slopes in prop::collection::vec(-3.0f64..3.0, 1..5),
                mut xs in prop::collection::vec(-5.0f64..5.0, 2..20),
            ) {
                slopes.sort_by(f64::total_cmp);
                let bps: Vec<f64> = (0..slopes.len() - 1).map(|k| k as f64 - 1.0).collect();
                let leg = PiecewiseLinear::new(bps, slopes, 0.0).unwrap();
                prop_assert!(leg.is_convex());
                xs.sort_by(f64::total_cmp);
                for w in xs.windows(2) {
                    prop_assert!(leg.derivative(w[0]) <= leg.derivative(w[1]));
                }
            }

            #[test]
            fn gradient_matches_central_differences_away_from_kinks(
                slopes in prop::collection::vec(-3.0f64..3.0, 3),
                x in -4.0f64..4.0,
            ) {
                let leg = PiecewiseLinear::new(vec![-1.0, 1.5], slopes, 0.25).unwrap();
                prop_assume!((x + 1.0).abs() > 1e-3 && (x - 1.5).abs() > 1e-3);
                let h = 1e-6;
                let fd = (leg.value(x + h) - leg.value(x - h)) / (2.0 * h);
                let d = leg.derivative(x);
                prop_assert!((fd - d).abs() <= 1e-6 * d.abs().max(1.0));
            }
        }
    }
}
