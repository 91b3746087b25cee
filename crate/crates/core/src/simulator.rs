//! Seeded Brownian paths, discrete replication and the statistical
//! diagnostics built on it.

use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::dynamics::{par_map, try_map, Evaluator};
use crate::error::{EngineError, Result};
use crate::hedging::{hedge_ratio, ratio_from_eval};
use crate::model::{State, ValidatedScenario};
use crate::pricing::TiltedMeasure;
use crate::rng;

/// Brownian increments on a uniform grid, stored path-major:
/// `increments[(path * steps + k) * dim + j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBundle {
    pub times: Vec<f64>,
    pub increments: Vec<f64>,
    pub n_paths: usize,
    pub steps: usize,
    pub dim: usize,
    pub seed: u64,
}

impl PathBundle {
    pub fn dt(&self) -> f64 {
        self.times[1] - self.times[0]
    }

    pub fn increment(&self, path: usize, k: usize) -> &[f64] {
        let at = (path * self.steps + k) * self.dim;
        &self.increments[at..at + self.dim]
    }

    /// Levels `b_0 = 0, …, b_N` of one path.
    pub fn levels(&self, path: usize) -> Vec<Vec<f64>> {
        let mut b = vec![0.0; self.dim];
        let mut out = Vec::with_capacity(self.steps + 1);
        out.push(b.clone());
        for k in 0..self.steps {
            for (bj, d) in b.iter_mut().zip(self.increment(path, k)) {
                *bj += d;
            }
            out.push(b.clone());
        }
        out
    }

    /// The same paths observed every `factor` steps.
    pub fn coarsen(&self, factor: usize) -> Result<PathBundle> {
        if factor == 0 || !self.steps.is_multiple_of(factor) {
            return Err(EngineError::invalid(format!(
                "cannot coarsen {} steps by a factor of {factor}",
                self.steps
            )));
        }
        let steps = self.steps / factor;
        let mut increments = vec![0.0; self.n_paths * steps * self.dim];
        for path in 0..self.n_paths {
            for k in 0..self.steps {
                let at = (path * steps + k / factor) * self.dim;
                for (acc, d) in increments[at..at + self.dim].iter_mut().zip(self.increment(path, k)) {
                    *acc += d;
                }
            }
        }
        Ok(PathBundle {
            times: self.times.iter().step_by(factor).copied().collect(),
            increments,
            n_paths: self.n_paths,
            steps,
            dim: self.dim,
            seed: self.seed,
        })
    }
}

pub fn simulate_paths(s: &ValidatedScenario, steps: usize, n_paths: usize, seed: u64) -> Result<PathBundle> {
    if steps == 0 || n_paths == 0 {
        return Err(EngineError::invalid("steps and paths must be at least 1"));
    }
    let dim = s.dimension;
    let horizon = s.horizon;
    let times: Vec<f64> = (0..=steps).map(|k| horizon * k as f64 / steps as f64).collect();
    let sd = (horizon / steps as f64).sqrt();
    let indices: Vec<u64> = (0..n_paths as u64).collect();
    let per_path = par_map(&indices, |&path| {
        let mut rng = rng::stream(seed, "paths", path);
        (0..steps * dim)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                sd * z
            })
            .collect::<Vec<f64>>()
    });
    Ok(PathBundle {
        times,
        increments: per_path.concat(),
        n_paths,
        steps,
        dim,
        seed,
    })
}

/// One rebalancing date along a path.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryPoint {
    pub path: usize,
    pub k: usize,
    pub t: f64,
    pub b: Vec<f64>,
    pub s_tilde: Vec<f64>,
    pub holdings: Vec<f64>,
    pub wealth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HedgeReport {
    pub price: f64,
    /// `W_N − G(b_N)` per path.
    pub terminal_errors: Vec<f64>,
    pub rms: f64,
    pub max_abs: f64,
    pub mean: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wealth_paths: Option<Vec<TrajectoryPoint>>,
    pub steps: usize,
    pub paths: usize,
    pub seed: u64,
}

impl HedgeReport {
    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "price": self.price,
            "rms": self.rms,
            "max_abs": self.max_abs,
            "mean": self.mean,
            "steps": self.steps,
            "paths": self.paths,
            "seed": self.seed,
        })
    }

    pub fn errors_csv(&self) -> String {
        let mut out = String::from("path,terminal_error\n");
        for (i, e) in self.terminal_errors.iter().enumerate() {
            out.push_str(&format!("{i},{e}\n"));
        }
        out
    }

    pub fn trajectories_csv(&self) -> Option<String> {
        let rows = self.wealth_paths.as_ref()?;
        let dim = rows.first().map_or(0, |r| r.b.len());
        let mut out = String::from("path,k,t");
        for prefix in ["b", "s_tilde", "h"] {
            for j in 1..=dim {
                out.push_str(&format!(",{prefix}{j}"));
            }
        }
        out.push_str(",wealth\n");
        for r in rows {
            out.push_str(&format!("{},{},{}", r.path, r.k, r.t));
            for v in r.b.iter().chain(&r.s_tilde).chain(&r.holdings) {
                out.push_str(&format!(",{v}"));
            }
            out.push_str(&format!(",{}\n", r.wealth));
        }
        Some(out)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ReplicateOptions {
    pub keep_trajectories: bool,
}

/// Price and holdings at every date of one path.
struct PathRecord {
    levels: Vec<Vec<f64>>,
    s_tilde: Vec<Vec<f64>>,
    holdings: Vec<Vec<f64>>,
}

fn record_path(bundle: &PathBundle, path: usize, eval: &Evaluator, s: &ValidatedScenario) -> Result<PathRecord> {
    let levels = bundle.levels(path);
    let mut s_tilde = Vec::with_capacity(levels.len());
    let mut holdings = Vec::with_capacity(levels.len());
    for (t, b) in bundle.times.iter().zip(&levels) {
        let e = eval.eval(&State::new(*t, b.clone()))?;
        holdings.push(ratio_from_eval(&e, s)?.holdings);
        s_tilde.push(e.s_tilde);
    }
    Ok(PathRecord {
        levels,
        s_tilde,
        holdings,
    })
}

fn dot_diff(h: &[f64], next: &[f64], prev: &[f64]) -> f64 {
    h.iter().zip(next.iter().zip(prev)).map(|(h, (a, b))| h * (a - b)).sum()
}

/// Runs `f` on every path and folds incompleteness failures into one error
/// that counts the affected paths.
fn over_paths<T: Send>(
    bundle: &PathBundle,
    m: &TiltedMeasure,
    s: &ValidatedScenario,
    f: impl Fn(usize, &PathRecord) -> T + Sync + Send,
) -> Result<Vec<T>> {
    if s.is_example1() {
        // τ > 0, so the first rebalancing date already lies where σ = 0
        let start = State::origin(s.dimension);
        return match hedge_ratio(&start, m, s) {
            Err(EngineError::IncompleteMarket { t, b, min_sv, .. }) => Err(EngineError::IncompleteMarket {
                t,
                b,
                min_sv,
                paths: bundle.n_paths,
            }),
            Err(e) => Err(e),
            Ok(_) => Err(EngineError::Unsupported("example1 replication".into())),
        };
    }
    if bundle.dim != s.dimension {
        return Err(EngineError::invalid("bundle dimension differs from the scenario"));
    }
    let eval = Evaluator::new(s, m)?;
    let indices: Vec<usize> = (0..bundle.n_paths).collect();
    let results = par_map(&indices, |&path| record_path(bundle, path, &eval, s).map(|r| f(path, &r)));
    let failed = results.iter().filter(|r| matches!(r, Err(EngineError::IncompleteMarket { .. }))).count();
    if failed > 0 {
        let first = results.into_iter().find_map(|r| r.err()).expect("counted above");
        return Err(match first {
            EngineError::IncompleteMarket { t, b, min_sv, .. } => EngineError::IncompleteMarket {
                t,
                b,
                min_sv,
                paths: failed,
            },
            e => e,
        });
    }
    results.into_iter().collect()
}

pub fn replicate(bundle: &PathBundle, m: &TiltedMeasure, s: &ValidatedScenario) -> Result<HedgeReport> {
    replicate_with(bundle, m, s, ReplicateOptions::default())
}

/// `W_0 = p`, `W_{k+1} = W_k + H_k·(S̃_{k+1} − S̃_k)` with `H_k` taken at the
/// left endpoint.
pub fn replicate_with(
    bundle: &PathBundle,
    m: &TiltedMeasure,
    s: &ValidatedScenario,
    opts: ReplicateOptions,
) -> Result<HedgeReport> {
    let per_path = over_paths(bundle, m, s, |path, r| {
        let mut w = m.p;
        let mut traj = Vec::new();
        for k in 0..=bundle.steps {
            if opts.keep_trajectories {
                traj.push(TrajectoryPoint {
                    path,
                    k,
                    t: bundle.times[k],
                    b: r.levels[k].clone(),
                    s_tilde: r.s_tilde[k].clone(),
                    holdings: r.holdings[k].clone(),
                    wealth: w,
                });
            }
            if k < bundle.steps {
                w += dot_diff(&r.holdings[k], &r.s_tilde[k + 1], &r.s_tilde[k]);
            }
        }
        (w - s.claim.value(&r.levels[bundle.steps]), traj)
    })?;
    let (terminal_errors, trajs): (Vec<f64>, Vec<Vec<TrajectoryPoint>>) = per_path.into_iter().unzip();
    let n = terminal_errors.len() as f64;
    let rms = (terminal_errors.iter().map(|e| e * e).sum::<f64>() / n).sqrt();
    let max_abs = terminal_errors.iter().fold(0.0f64, |a, e| a.max(e.abs()));
    let mean = terminal_errors.iter().sum::<f64>() / n;
    Ok(HedgeReport {
        price: m.p,
        terminal_errors,
        rms,
        max_abs,
        mean,
        wealth_paths: opts.keep_trajectories.then(|| trajs.concat()),
        steps: bundle.steps,
        paths: bundle.n_paths,
        seed: bundle.seed,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ResidualLevel {
    pub steps: usize,
    pub dt: f64,
    /// Mean over paths and steps of `‖ΔS̃ − σ̃(ΔB − αΔt)‖₂`.
    pub mean_residual: f64,
    pub max_residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResidualReport {
    pub fine: ResidualLevel,
    pub coarse: ResidualLevel,
    /// `coarse.mean_residual / fine.mean_residual`.
    pub ratio: f64,
    /// Both grids reproduce the surface to round-off.
    pub exact: bool,
    pub passed: bool,
}

/// Residuals below this are treated as exact.
pub const EXACT_RESIDUAL: f64 = 1e-8;
pub const RESIDUAL_RATIO_RANGE: (f64, f64) = (1.5, 3.0);

fn residual_level(bundle: &PathBundle, m: &TiltedMeasure, s: &ValidatedScenario) -> Result<ResidualLevel> {
    let eval = Evaluator::new(s, m)?;
    let dt = bundle.dt();
    let indices: Vec<usize> = (0..bundle.n_paths).collect();
    let per_path = try_map(&indices, |&path| {
        let levels = bundle.levels(path);
        let mut evals = Vec::with_capacity(levels.len());
        for (t, b) in bundle.times.iter().zip(&levels) {
            evals.push(eval.eval(&State::new(*t, b.clone()))?);
        }
        let mut norms = Vec::with_capacity(bundle.steps);
        for k in 0..bundle.steps {
            let (e0, e1) = (&evals[k], &evals[k + 1]);
            let db = bundle.increment(path, k);
            let norm = (0..bundle.dim)
                .map(|i| {
                    let drift: f64 = (0..bundle.dim).map(|j| e0.sigma[(i, j)] * (db[j] - e0.alpha[j] * dt)).sum();
                    (e1.s_tilde[i] - e0.s_tilde[i] - drift).powi(2)
                })
                .sum::<f64>()
                .sqrt();
            norms.push(norm);
        }
        Ok(norms)
    })?;
    let all: Vec<f64> = per_path.concat();
    Ok(ResidualLevel {
        steps: bundle.steps,
        dt,
        mean_residual: all.iter().sum::<f64>() / all.len() as f64,
        max_residual: all.iter().fold(0.0f64, |a, &r| a.max(r)),
    })
}

/// Compares the local martingale residual on the bundle's grid and on the
/// grid coarsened by two.
pub fn martingale_residual_check(bundle: &PathBundle, m: &TiltedMeasure, s: &ValidatedScenario) -> Result<ResidualReport> {
    if s.is_example1() {
        return Err(EngineError::Unsupported("residual check needs a Bachelier scenario".into()));
    }
    let fine = residual_level(bundle, m, s)?;
    let coarse = residual_level(&bundle.coarsen(2)?, m, s)?;
    let exact = fine.max_residual <= EXACT_RESIDUAL && coarse.max_residual <= EXACT_RESIDUAL;
    let ratio = coarse.mean_residual / fine.mean_residual;
    let passed = exact || (RESIDUAL_RATIO_RANGE.0..=RESIDUAL_RATIO_RANGE.1).contains(&ratio);
    Ok(ResidualReport {
        fine,
        coarse,
        ratio,
        exact,
        passed,
    })
}

/// Bounded adapted perturbations of the market maker's position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Perturbation {
    Constant,
    /// `sign(b¹_t)`, with `sign(0) = 1`.
    SignOfState,
    /// `t / T`.
    TimeRamp,
}

impl Perturbation {
    pub const ALL: [Perturbation; 3] = [Perturbation::Constant, Perturbation::SignOfState, Perturbation::TimeRamp];

    fn at(self, t: f64, b: &[f64], horizon: f64) -> f64 {
        match self {
            Perturbation::Constant => 1.0,
            Perturbation::SignOfState => {
                if b[0] >= 0.0 {
                    1.0
                } else {
                    -1.0
                }
            }
            Perturbation::TimeRamp => t / horizon,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OptimalityPoint {
    pub shape: Perturbation,
    pub eps: f64,
    /// Sample mean of `U(w + εX) − U(w)`.
    pub delta: f64,
    pub stderr: f64,
    /// `Δ(ε) − Δ(ε/2)` and its paired standard error.
    pub half_gap: f64,
    pub half_gap_stderr: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct OptimalityReport {
    pub points: Vec<OptimalityPoint>,
    /// `mean U(x + p − W_N) − mean U(x + p − G(b_N))`.
    pub discretization_gap: f64,
    pub zero_is_exact: bool,
    pub largest_is_negative: bool,
    pub concave: bool,
    pub passed: bool,
}

fn mean_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}

/// Perturbs the market maker's hedge `−H` by `εφ` along every path and
/// compares expected utilities with common random numbers:
/// `Δ(ε) = E[U(x + p − W_N + ε∫φ dS̃)] − E[U(x + p − W_N)]`.
pub fn mm_optimality_check(
    bundle: &PathBundle,
    m: &TiltedMeasure,
    s: &ValidatedScenario,
    eps_list: &[f64],
) -> Result<OptimalityReport> {
    if eps_list.is_empty() || eps_list.iter().any(|e| !e.is_finite()) {
        return Err(EngineError::invalid("eps_list must be non-empty and finite"));
    }
    let horizon = s.horizon;
    let u = &s.utility;
    // per path: hedged wealth, claim-settled wealth, and ∫φ dS̃ for each shape
    let per_path = over_paths(bundle, m, s, |_, r| {
        let mut gains = 0.0;
        let mut perturbed = [0.0; 3];
        for k in 0..bundle.steps {
            let (next, prev) = (&r.s_tilde[k + 1], &r.s_tilde[k]);
            gains += dot_diff(&r.holdings[k], next, prev);
            let ds: f64 = next.iter().zip(prev).map(|(a, b)| a - b).sum();
            for (acc, shape) in perturbed.iter_mut().zip(Perturbation::ALL) {
                *acc += shape.at(bundle.times[k], &r.levels[k], horizon) * ds;
            }
        }
        let hedged = s.wealth - gains;
        let settled = s.wealth + m.p - s.claim.value(&r.levels[bundle.steps]);
        (hedged, settled, perturbed)
    })?;
    let base: Vec<f64> = per_path.iter().map(|(w, _, _)| u.eval(*w).u).collect();
    let settled: Vec<f64> = per_path.iter().map(|(_, w, _)| u.eval(*w).u).collect();
    let discretization_gap = mean_stderr(&base).0 - mean_stderr(&settled).0;

    let diffs = |shape: usize, eps: f64| -> Vec<f64> {
        per_path
            .iter()
            .zip(&base)
            .map(|((w, _, x), b)| u.eval(w + eps * x[shape]).u - b)
            .collect()
    };
    let largest = eps_list.iter().fold(0.0f64, |a, e| a.max(e.abs()));
    let mut points = Vec::new();
    let (mut zero_is_exact, mut largest_is_negative, mut concave) = (true, true, true);
    for (si, shape) in Perturbation::ALL.into_iter().enumerate() {
        for &eps in eps_list {
            let d = diffs(si, eps);
            let h = diffs(si, eps / 2.0);
            let (delta, stderr) = mean_stderr(&d);
            let gap: Vec<f64> = d.iter().zip(&h).map(|(a, b)| a - b).collect();
            let (half_gap, half_gap_stderr) = mean_stderr(&gap);
            if eps == 0.0 && delta != 0.0 {
                zero_is_exact = false;
            }
            if eps != 0.0 && eps.abs() == largest && !(delta < -2.0 * stderr) {
                largest_is_negative = false;
            }
            if half_gap > 2.0 * half_gap_stderr {
                concave = false;
            }
            points.push(OptimalityPoint {
                shape,
                eps,
                delta,
                stderr,
                half_gap,
                half_gap_stderr,
            });
        }
    }
    Ok(OptimalityReport {
        points,
        discretization_gap,
        zero_is_exact,
        largest_is_negative,
        concave,
        passed: zero_is_exact && largest_is_negative && concave,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceRow {
    pub steps: usize,
    pub rms: f64,
    pub max_abs: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
    pub paths: usize,
    pub seed: u64,
    /// Each row within 10% of the previous one or below the exact threshold.
    pub monotone: bool,
    pub strictly_decreasing: bool,
}

impl ConvergenceTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("steps,rms,max_abs\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{}\n", r.steps, r.rms, r.max_abs));
        }
        out
    }
}

pub const MONOTONE_SLACK: f64 = 0.10;

/// RMS replication error per step count, all grids observed on the same
/// paths (coarsened from the finest one).
pub fn convergence_study(
    s: &ValidatedScenario,
    m: &TiltedMeasure,
    steps_list: &[usize],
    n_paths: usize,
    seed: u64,
) -> Result<ConvergenceTable> {
    if steps_list.is_empty() || steps_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(EngineError::invalid("steps_list must be non-empty and increasing"));
    }
    let finest = *steps_list.last().expect("non-empty");
    if let Some(bad) = steps_list.iter().find(|&&n| !finest.is_multiple_of(n)) {
        return Err(EngineError::invalid(format!("{bad} does not divide the finest step count {finest}")));
    }
    let fine = simulate_paths(s, finest, n_paths, seed)?;
    let rows = steps_list
        .iter()
        .map(|&n| {
            let r = replicate(&fine.coarsen(finest / n)?, m, s)?;
            Ok(ConvergenceRow {
                steps: n,
                rms: r.rms,
                max_abs: r.max_abs,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let monotone = rows
        .windows(2)
        .all(|w| w[1].rms <= (1.0 + MONOTONE_SLACK) * w[0].rms || w[1].rms <= EXACT_RESIDUAL);
    let strictly_decreasing = rows.windows(2).all(|w| w[1].rms < w[0].rms);
    Ok(ConvergenceTable {
        rows,
        paths: n_paths,
        seed,
        monotone,
        strictly_decreasing,
    })
}
