//! State functions of the equilibrium market: the price surface `S̃(t, b)`,
//! the conditional claim value `ĝ(t, b)`, the Girsanov drift and the
//! volatility matrix `σ̃`, plus the completeness scan.
//!
//! With `f = B_T` and `g = G(B_T)` every conditional expectation under the
//! pricing measure is an integral against `N(b, (T−t)·I)` weighted by the
//! global density `U'(x + p − G(z))`, so each quantity is a plain function of
//! the state `(t, b)`.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{EngineError, Result};
use crate::gauss::{cached_rule, for_each_tensor_node, QuadRule, MAX_TENSOR_DIM};
use crate::model::{log_sum_exp, ClaimSpec, State, TradedAsset, ValidatedScenario};
use crate::pricing::TiltedMeasure;
use crate::tilt::{coord_moments, separable_grids, smooth_grids, CoordMoments};

/// How conditional expectations are integrated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    /// Per-coordinate 1-d integrals assembled over the mixture of product
    /// laws. Separable claims only.
    SeparableProduct,
    /// Pointwise integrands on a product grid, `J ≤ 3`.
    Tensor,
}

/// The `J×J` volatility matrix at a state and its smallest singular value.
#[derive(Debug, Clone, PartialEq)]
pub struct VolMatrix {
    pub entries: DMatrix<f64>,
    pub min_sv: f64,
}

impl VolMatrix {
    pub fn new(entries: DMatrix<f64>) -> Self {
        let min_sv = min_singular_value(&entries);
        VolMatrix { entries, min_sv }
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }
}

pub fn min_singular_value(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 1 && m.ncols() == 1 {
        return m[(0, 0)].abs();
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Everything the hedging and simulation layers need at one state.
#[derive(Debug, Clone)]
pub struct StateEval {
    pub state: State,
    /// `S̃ⁱ(t, b) = Ẽ[B_Tⁱ | b]`.
    pub s_tilde: Vec<f64>,
    /// `ĝ(t, b) = Ẽ[G(B_T) | b]`.
    pub g_hat: f64,
    /// Drift `α` with `dZ_t = Z_t α_t·dB_t` for the density process `Z`.
    pub alpha: Vec<f64>,
    /// `σ̃ᵢⱼ = δᵢⱼ + Ẽ[A(x+p−G)(B_Tⁱ − S̃ⁱ) ∂ⱼG | b]`.
    pub sigma: DMatrix<f64>,
    /// `δᵢⱼ + γ Coṽ(B_Tⁱ, ∂ⱼG | b)`, single-exponential utilities only.
    pub sigma_cov: Option<DMatrix<f64>>,
    /// Integrand of `ĝ` against the pricing-measure Brownian motion:
    /// `ηʲ = Ẽ[∂ⱼG + A(x+p−G)(G − ĝ) ∂ⱼG | b]`.
    pub eta: Vec<f64>,
    /// `Ẽ[∂ⱼG | b]`.
    pub grad_mean: Vec<f64>,
}

/// Evaluates state functions for one scenario and solved measure.
pub struct Evaluator<'a> {
    scenario: &'a ValidatedScenario,
    measure: &'a TiltedMeasure,
    rule: Arc<QuadRule>,
    backend: Backend,
}

impl<'a> Evaluator<'a> {
    pub fn new(scenario: &'a ValidatedScenario, measure: &'a TiltedMeasure) -> Result<Self> {
        let backend = match scenario.claim {
            ClaimSpec::Separable(_) => Backend::SeparableProduct,
            ClaimSpec::GeneralSmooth(_) => Backend::Tensor,
        };
        Self::with_backend(scenario, measure, backend)
    }

    pub fn with_backend(
        scenario: &'a ValidatedScenario,
        measure: &'a TiltedMeasure,
        backend: Backend,
    ) -> Result<Self> {
        if backend == Backend::SeparableProduct && scenario.claim.as_separable().is_none() {
            return Err(EngineError::Unsupported(
                "separable-product backend needs a separable claim".into(),
            ));
        }
        if backend == Backend::Tensor && scenario.dimension > MAX_TENSOR_DIM {
            return Err(EngineError::Unsupported(format!(
                "tensor backend needs J <= {MAX_TENSOR_DIM}, got {}",
                scenario.dimension
            )));
        }
        Ok(Evaluator {
            scenario,
            measure,
            rule: cached_rule(scenario.numerics.quad_order)?,
            backend,
        })
    }

    pub fn scenario(&self) -> &ValidatedScenario {
        self.scenario
    }

    pub fn measure(&self) -> &TiltedMeasure {
        self.measure
    }

    fn variance(&self, state: &State) -> Result<f64> {
        if state.b.len() != self.scenario.dimension {
            return Err(EngineError::invalid(format!(
                "state has {} coordinates, scenario has J = {}",
                state.b.len(),
                self.scenario.dimension
            )));
        }
        let horizon = self.scenario.horizon;
        if !(state.t >= 0.0 && state.t <= horizon) || state.b.iter().any(|v| !v.is_finite()) {
            return Err(EngineError::invalid(format!(
                "state t = {} outside [0, {horizon}] or non-finite level",
                state.t
            )));
        }
        Ok((horizon - state.t).max(0.0))
    }

    pub fn eval(&self, state: &State) -> Result<StateEval> {
        let var = self.variance(state)?;
        let out = match self.backend {
            Backend::SeparableProduct => self.eval_separable(state, var),
            Backend::Tensor => self.eval_tensor(state, var),
        };
        let finite = out.s_tilde.iter().chain(&out.eta).chain(&out.alpha).all(|v| v.is_finite())
            && out.g_hat.is_finite()
            && out.sigma.iter().all(|v| v.is_finite());
        if finite {
            Ok(out)
        } else {
            Err(EngineError::NonFinite(format!("state functions at t = {}", state.t)))
        }
    }

    fn eval_separable(&self, state: &State, var: f64) -> StateEval {
        let claim = self.scenario.claim.as_separable().expect("checked in constructor");
        let dim = self.scenario.dimension;
        let utility = &self.measure.utility;
        let grids = separable_grids(claim, utility.max_rate(), &state.b, var, &self.rule);
        let c = &claim.weights;
        let rates: Vec<f64> = utility.terms.iter().map(|t| t.rate).collect();
        let moments: Vec<Vec<CoordMoments>> = rates
            .iter()
            .map(|&r| grids.iter().zip(c).map(|(g, &w)| coord_moments(g, w, r)).collect())
            .collect();
        // mixture weights ρ_i ∝ a_i E[e^{γ_i G} | b]
        let logs: Vec<f64> = self
            .measure
            .log_coefs
            .iter()
            .zip(&moments)
            .map(|(lc, ms)| lc + ms.iter().map(|m| m.log_mass).sum::<f64>())
            .collect();
        let lse = log_sum_exp(logs.iter().copied());
        let rho: Vec<f64> = logs.iter().map(|l| (l - lse).exp()).collect();

        let s_tilde: Vec<f64> = (0..dim)
            .map(|k| rho.iter().zip(&moments).map(|(r, ms)| r * ms[k].mean).sum())
            .collect();
        let g_hat: f64 = rho
            .iter()
            .zip(&moments)
            .map(|(r, ms)| r * ms.iter().zip(c).map(|(m, ck)| ck * m.phi).sum::<f64>())
            .sum();
        let mut alpha = vec![0.0; dim];
        let mut grad_mean = vec![0.0; dim];
        let mut eta = vec![0.0; dim];
        let mut sigma = DMatrix::<f64>::identity(dim, dim);
        for (i, ms) in moments.iter().enumerate() {
            let (r, g) = (rho[i], rates[i]);
            for j in 0..dim {
                let d = ms[j].dphi;
                alpha[j] += r * g * c[j] * d;
                grad_mean[j] += r * c[j] * d;
                // Ẽ_i[G ∂ⱼG]
                let g_dg: f64 = (0..dim)
                    .map(|k| {
                        if k == j {
                            c[k] * ms[j].phi_dphi
                        } else {
                            c[k] * ms[k].phi * d
                        }
                    })
                    .sum();
                eta[j] += r * c[j] * d + r * g * c[j] * (g_dg - g_hat * d);
                for k in 0..dim {
                    let z_dg = if k == j { ms[j].z_dphi } else { ms[k].mean * d };
                    sigma[(k, j)] += r * g * c[j] * (z_dg - s_tilde[k] * d);
                }
            }
        }
        let sigma_cov = utility.single_rate().map(|g| {
            let one_term = &moments[0];
            let mut m = DMatrix::<f64>::identity(dim, dim);
            for j in 0..dim {
                m[(j, j)] += g * c[j] * one_term[j].cov_z_dphi;
            }
            m
        });
        StateEval {
            state: state.clone(),
            s_tilde,
            g_hat,
            alpha,
            sigma,
            sigma_cov,
            eta,
            grad_mean,
        }
    }

    fn eval_tensor(&self, state: &State, var: f64) -> StateEval {
        let dim = self.scenario.dimension;
        let claim = &self.measure.claim;
        let utility = &self.measure.utility;
        let rates: Vec<f64> = utility.terms.iter().map(|t| t.rate).collect();
        let grids = smooth_grids(claim, utility.max_rate(), &state.b, var, &self.rule);

        struct Node {
            z: Vec<f64>,
            log_w: f64,
            g: f64,
            grad: Vec<f64>,
            risk: f64,
        }
        let mut nodes = Vec::new();
        for_each_tensor_node(&grids, |z, w| {
            let g = claim.value(z);
            let logs: Vec<f64> = self.measure.log_coefs.iter().zip(&rates).map(|(lc, r)| lc + r * g).collect();
            let lse = log_sum_exp(logs.iter().copied());
            let risk = logs.iter().zip(&rates).map(|(l, r)| r * (l - lse).exp()).sum();
            nodes.push(Node {
                z: z.to_vec(),
                log_w: w.ln() + lse,
                g,
                grad: claim.gradient(z),
                risk,
            });
        });
        let shift = nodes.iter().fold(f64::NEG_INFINITY, |m, n| m.max(n.log_w));
        let q: Vec<f64> = nodes.iter().map(|n| (n.log_w - shift).exp()).collect();
        let total: f64 = q.iter().sum();
        let q: Vec<f64> = q.iter().map(|v| v / total).collect();

        let mut s_tilde = vec![0.0; dim];
        let mut g_hat = 0.0;
        let mut grad_mean = vec![0.0; dim];
        let mut alpha = vec![0.0; dim];
        for (n, &w) in nodes.iter().zip(&q) {
            g_hat += w * n.g;
            for j in 0..dim {
                s_tilde[j] += w * n.z[j];
                grad_mean[j] += w * n.grad[j];
                alpha[j] += w * n.risk * n.grad[j];
            }
        }
        let mut sigma = DMatrix::<f64>::identity(dim, dim);
        let mut eta = grad_mean.clone();
        let mut z_grad = DMatrix::<f64>::zeros(dim, dim);
        for (n, &w) in nodes.iter().zip(&q) {
            for j in 0..dim {
                let ag = w * n.risk * n.grad[j];
                eta[j] += ag * (n.g - g_hat);
                for k in 0..dim {
                    sigma[(k, j)] += ag * (n.z[k] - s_tilde[k]);
                    z_grad[(k, j)] += w * n.z[k] * n.grad[j];
                }
            }
        }
        let sigma_cov = utility.single_rate().map(|g| {
            let mut m = DMatrix::<f64>::identity(dim, dim);
            for k in 0..dim {
                for j in 0..dim {
                    m[(k, j)] += g * (z_grad[(k, j)] - s_tilde[k] * grad_mean[j]);
                }
            }
            m
        });
        StateEval {
            state: state.clone(),
            s_tilde,
            g_hat,
            alpha,
            sigma,
            sigma_cov,
            eta,
            grad_mean,
        }
    }
}

fn require_bachelier(s: &ValidatedScenario, what: &str) -> Result<()> {
    match s.traded {
        TradedAsset::Bachelier => Ok(()),
        TradedAsset::Example1 { .. } => Err(EngineError::Unsupported(format!(
            "{what} needs Bachelier traded assets; use example1_dynamics"
        ))),
    }
}

/// `S̃(t, b)`; equals `b` at `t = T`.
pub fn price_fn(state: &State, m: &TiltedMeasure, s: &ValidatedScenario) -> Result<Vec<f64>> {
    require_bachelier(s, "price_fn")?;
    Ok(Evaluator::new(s, m)?.eval(state)?.s_tilde)
}

/// `ĝ(t, b) = Ẽ[G(B_T) | b]`; `p` at the origin and `G(b)` at maturity.
pub fn claim_fn(state: &State, m: &TiltedMeasure, s: &ValidatedScenario) -> Result<f64> {
    Ok(Evaluator::new(s, m)?.eval(state)?.g_hat)
}

/// `αʲ(t, b) = Ẽ[A(x+p−G) ∂ⱼG | b]`.
pub fn girsanov_drift(state: &State, m: &TiltedMeasure, s: &ValidatedScenario) -> Result<Vec<f64>> {
    Ok(Evaluator::new(s, m)?.eval(state)?.alpha)
}

/// Volatility matrix from the risk-aversion formula; any mixture utility.
pub fn vol_matrix_general(state: &State, m: &TiltedMeasure, s: &ValidatedScenario) -> Result<VolMatrix> {
    require_bachelier(s, "vol_matrix_general")?;
    Ok(VolMatrix::new(Evaluator::new(s, m)?.eval(state)?.sigma))
}

/// Volatility matrix from the conditional-covariance form; single exponential only.
pub fn vol_matrix_bachelier(state: &State, m: &TiltedMeasure, s: &ValidatedScenario) -> Result<VolMatrix> {
    require_bachelier(s, "vol_matrix_bachelier")?;
    if s.utility.single_rate().is_none() {
        return Err(EngineError::Unsupported(
            "covariance form needs a single-exponential utility; use vol_matrix_general".into(),
        ));
    }
    let e = Evaluator::new(s, m)?.eval(state)?;
    Ok(VolMatrix::new(e.sigma_cov.expect("single-rate utility")))
}

/// The closed-form price and volatility of the incomplete example market.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Example1Point {
    pub s_tilde: f64,
    pub sigma: f64,
}

/// `S̃_t = 0` on `[0, τ)` and `S̃_t = B̃_t − B̃_τ` afterwards, with
/// `B̃_t = B_t − t` the pricing-measure Brownian motion; `σ_t = 1_{[τ,T]}(t)`.
///
/// After `τ` the price depends on the path through `level_at_tau = B_τ`.
pub fn example1_dynamics(
    s: &ValidatedScenario,
    state: &State,
    level_at_tau: Option<f64>,
) -> Result<Example1Point> {
    let TradedAsset::Example1 { tau } = s.traded else {
        return Err(EngineError::Unsupported("example1_dynamics needs the example1 scenario".into()));
    };
    if state.b.len() != 1 || !(0.0..=s.horizon).contains(&state.t) {
        return Err(EngineError::invalid("example1 state must be one-dimensional with t in [0, T]"));
    }
    if state.t < tau {
        return Ok(Example1Point {
            s_tilde: 0.0,
            sigma: 0.0,
        });
    }
    let s_tilde = if state.t == tau {
        0.0
    } else {
        let b_tau = level_at_tau.ok_or_else(|| {
            EngineError::invalid("example1 price after tau needs the Brownian level at tau")
        })?;
        (state.b[0] - state.t) - (b_tau - tau)
    };
    Ok(Example1Point { s_tilde, sigma: 1.0 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Complete,
    Incomplete,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScanPoint {
    pub t: f64,
    pub b: Vec<f64>,
    pub min_sv: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScanReport {
    pub points: Vec<ScanPoint>,
    pub min_sv: f64,
    pub sv_tolerance: f64,
    pub verdict: Verdict,
    /// Indices into `points` whose smallest singular value is below tolerance.
    pub failing: Vec<usize>,
}

impl ScanReport {
    pub fn to_csv(&self) -> String {
        let dim = self.points.first().map_or(0, |p| p.b.len());
        let mut out = String::from("t");
        for j in 0..dim {
            out.push_str(&format!(",b{}", j + 1));
        }
        out.push_str(",min_sv\n");
        for p in &self.points {
            out.push_str(&p.t.to_string());
            for v in &p.b {
                out.push(',');
                out.push_str(&v.to_string());
            }
            out.push_str(&format!(",{}\n", p.min_sv));
        }
        out
    }

    pub fn verdict_json(&self) -> serde_json::Value {
        serde_json::json!({
            "verdict": self.verdict,
            "min_sv": self.min_sv,
            "sv_tolerance": self.sv_tolerance,
            "states": self.points.len(),
            "failing_states": self.failing.iter().map(|&i| &self.points[i]).collect::<Vec<_>>(),
        })
    }
}

/// Smallest singular value of `σ̃` over a grid of states.
pub fn completeness_scan(m: &TiltedMeasure, s: &ValidatedScenario, grid: &[State]) -> Result<ScanReport> {
    let values: Vec<f64> = if s.is_example1() {
        grid.iter()
            .map(|st| example1_dynamics(s, st, Some(0.0)).map(|p| p.sigma.abs()))
            .collect::<Result<_>>()?
    } else {
        let eval = Evaluator::new(s, m)?;
        try_map(grid, |st| eval.eval(st).map(|e| min_singular_value(&e.sigma)))?
    };
    let tol = s.numerics.sv_tolerance;
    let points: Vec<ScanPoint> = grid
        .iter()
        .zip(&values)
        .map(|(st, &v)| ScanPoint {
            t: st.t,
            b: st.b.clone(),
            min_sv: v,
        })
        .collect();
    let failing: Vec<usize> = (0..points.len()).filter(|&i| !(points[i].min_sv >= tol)).collect();
    let min_sv = values.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(ScanReport {
        points,
        min_sv,
        sv_tolerance: tol,
        verdict: if failing.is_empty() {
            Verdict::Complete
        } else {
            Verdict::Incomplete
        },
        failing,
    })
}

/// Ordered parallel map.
pub(crate) fn par_map<I: Sync, T: Send>(items: &[I], f: impl Fn(&I) -> T + Sync + Send) -> Vec<T> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

pub(crate) fn try_map<I: Sync, T: Send>(
    items: &[I],
    f: impl Fn(&I) -> Result<T> + Sync + Send,
) -> Result<Vec<T>> {
    par_map(items, f).into_iter().collect()
}

/// Tensor grid of states: every `t` crossed with every combination of levels.
pub fn state_grid(times: &[f64], levels: &[f64], dimension: usize) -> Vec<State> {
    let mut out = Vec::new();
    let n = levels.len();
    let combos = n.pow(dimension as u32);
    for &t in times {
        for c in 0..combos {
            let mut b = Vec::with_capacity(dimension);
            let mut rem = c;
            for _ in 0..dimension {
                b.push(levels[rem % n]);
                rem /= n;
            }
            b.reverse();
            out.push(State::new(t, b));
        }
    }
    out
}

/// `n` evenly spaced points from `a` to `b` inclusive.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect(),
    }
}
