//! Browser bindings: price a scenario, slice the price surface, replicate
//! the claim along one simulated path.

use impact_hedge::config::parse_scenario;
use impact_hedge::dynamics::{linspace, Evaluator};
use impact_hedge::hedging::ratio_from_eval;
use impact_hedge::simulator::{replicate_with, simulate_paths, ReplicateOptions};
use impact_hedge::{solve_price, EngineError, State, TiltedMeasure, ValidatedScenario};
use wasm_bindgen::prelude::*;

const PRESETS: [(&str, &str); 6] = [
    ("call", include_str!("../../core/scenarios/call.toml")),
    ("linear", include_str!("../../core/scenarios/linear.toml")),
    ("constant", include_str!("../../core/scenarios/constant.toml")),
    ("basket2", include_str!("../../core/scenarios/basket2.toml")),
    ("mixture", include_str!("../../core/scenarios/mixture.toml")),
    ("example1", include_str!("../../core/scenarios/example1.toml")),
];

/// Columns per row of [`surface_slice`].
pub const SURFACE_STRIDE: usize = 5;
/// Columns per row of [`hedge_path`].
pub const PATH_STRIDE: usize = 5;

fn js(e: EngineError) -> JsError {
    JsError::new(&e.to_string())
}

fn load(toml: &str) -> Result<(ValidatedScenario, TiltedMeasure), EngineError> {
    let s = parse_scenario(toml)?;
    let m = solve_price(&s)?;
    Ok((s, m))
}

#[wasm_bindgen]
pub fn preset_names() -> Vec<String> {
    PRESETS.iter().map(|(n, _)| n.to_string()).collect()
}

#[wasm_bindgen]
pub fn preset(name: &str) -> Option<String> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, t)| t.to_string())
}

#[wasm_bindgen]
pub struct PriceSummary {
    pub price: f64,
    /// NaN when the utility is a mixture.
    pub closed_form: f64,
    pub psi_residual: f64,
    pub unique: bool,
    pub horizon: f64,
    pub dimension: usize,
}

#[wasm_bindgen]
pub fn price(toml: &str) -> Result<PriceSummary, JsError> {
    let (s, m) = load(toml).map_err(js)?;
    Ok(PriceSummary {
        price: m.p,
        closed_form: m.solver.closed_form.unwrap_or(f64::NAN),
        psi_residual: m.solver.psi_residual,
        unique: m.solver.unique,
        horizon: s.horizon,
        dimension: s.dimension,
    })
}

/// Rows `[b, S̃₁, ĝ, σ̃₁₁, H₁]` at time `t` for `n` levels of the first
/// coordinate in `[lo, hi]`; other coordinates sit at 0.
#[wasm_bindgen]
pub fn surface_slice(toml: &str, t: f64, lo: f64, hi: f64, n: usize) -> Result<Vec<f64>, JsError> {
    let (s, m) = load(toml).map_err(js)?;
    if !(0.0..=s.horizon).contains(&t) {
        return Err(JsError::new(&format!("t must lie in [0, {}]", s.horizon)));
    }
    let eval = Evaluator::new(&s, &m).map_err(js)?;
    let mut out = Vec::with_capacity(n * SURFACE_STRIDE);
    for b in linspace(lo, hi, n) {
        let mut level = vec![0.0; s.dimension];
        level[0] = b;
        let e = eval.eval(&State::new(t, level)).map_err(js)?;
        let h = match ratio_from_eval(&e, &s) {
            Ok(r) => r.holdings[0],
            Err(EngineError::IncompleteMarket { .. }) => f64::NAN,
            Err(err) => return Err(js(err)),
        };
        out.extend([b, e.s_tilde[0], e.g_hat, e.sigma[(0, 0)], h]);
    }
    Ok(out)
}

#[wasm_bindgen]
pub struct HedgePath {
    rows: Vec<f64>,
    pub price: f64,
    pub claim: f64,
    pub terminal_error: f64,
}

#[wasm_bindgen]
impl HedgePath {
    /// Rows `[t, B₁, S̃₁, H₁, W]`, one per rebalancing date.
    #[wasm_bindgen(getter)]
    pub fn rows(&self) -> Vec<f64> {
        self.rows.clone()
    }
}

/// Replicates the claim along path `seed` with `steps` rebalancing dates.
#[wasm_bindgen]
pub fn hedge_path(toml: &str, steps: usize, seed: u64) -> Result<HedgePath, JsError> {
    let (s, m) = load(toml).map_err(js)?;
    let bundle = simulate_paths(&s, steps, 1, seed).map_err(js)?;
    let report = replicate_with(&bundle, &m, &s, ReplicateOptions { keep_trajectories: true }).map_err(js)?;
    let traj = report.wealth_paths.unwrap_or_default();
    let mut rows = Vec::with_capacity(traj.len() * PATH_STRIDE);
    for p in &traj {
        rows.extend([p.t, p.b[0], p.s_tilde[0], p.holdings[0], p.wealth]);
    }
    let terminal_error = report.terminal_errors[0];
    let wealth = traj.last().map_or(f64::NAN, |p| p.wealth);
    Ok(HedgePath {
        rows,
        price: report.price,
        claim: wealth - terminal_error,
        terminal_error,
    })
}
