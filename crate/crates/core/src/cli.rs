//! The `impact-hedge` command line.
//!
//! Exit codes: 0 success, 1 other failure (I/O, threshold, manifest
//! mismatch), 2 invalid scenario, 3 non-unique price, 4 incomplete market,
//! 5 verification failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::load_scenario;
use crate::dynamics::{
    completeness_scan, linspace, min_singular_value, state_grid, Backend, Evaluator, Verdict,
};
use crate::error::EngineError;
use crate::gauss::{cond_expect_1d, quad_rule};
use crate::hedging::{finite_difference_ratio, hedge_ratio, ratio_from_eval};
use crate::model::{NumericsConfig, State, ValidatedScenario};
use crate::pricing::{consistency_report, solve_price, TiltedMeasure};
use crate::simulator::{convergence_study, martingale_residual_check, mm_optimality_check, replicate_with, simulate_paths, ReplicateOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NON_UNIQUE: i32 = 3;
pub const EXIT_INCOMPLETE: i32 = 4;
pub const EXIT_VERIFY: i32 = 5;

#[derive(Parser, Debug)]
#[command(name = "impact-hedge", version, about = "Pricing and replication under large-investor price impact")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Scenario file (TOML).
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Compare the hashes of the new outputs against the manifest already in the output directory.
    #[arg(long)]
    check_manifest: bool,
}

#[derive(Args, Debug, Clone)]
struct Sim {
    /// Rebalancing dates (defaults to numerics.time_steps).
    #[arg(long)]
    steps: Option<usize>,
    /// Number of paths (defaults to numerics.mc_paths).
    #[arg(long)]
    paths: Option<usize>,
    /// Seed (defaults to numerics.seed).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve for the claim price.
    Price {
        #[command(flatten)]
        common: Common,
    },
    /// Price surface, volatility matrix and hedge ratios on a grid of states.
    Surface {
        #[command(flatten)]
        common: Common,
        /// Times as a:b:n.
        #[arg(long)]
        t_grid: String,
        /// Brownian levels as a:b:n, used for every coordinate.
        #[arg(long)]
        b_grid: String,
    },
    /// Replicate the claim along simulated paths.
    Hedge {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sim: Sim,
        /// Accepted RMS terminal error (defaults to numerics.hedge_threshold).
        #[arg(long)]
        threshold: Option<f64>,
        /// Also write per-path trajectories.
        #[arg(long)]
        trajectories: bool,
    },
    /// Smallest singular value of the volatility matrix over a grid.
    Scan {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        t_grid: Option<String>,
        #[arg(long)]
        b_grid: Option<String>,
    },
    /// Replication error as the rebalancing grid is refined.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sim: Sim,
        /// Comma-separated increasing step counts, each dividing the last.
        #[arg(long, default_value = "16,64,256")]
        steps_list: String,
    },
    /// Run the diagnostic suite.
    Verify {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sim: Sim,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Price { .. } => "price",
            Command::Surface { .. } => "surface",
            Command::Hedge { .. } => "hedge",
            Command::Scan { .. } => "scan",
            Command::Simulate { .. } => "simulate",
            Command::Verify { .. } => "verify",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Price { common }
            | Command::Surface { common, .. }
            | Command::Hedge { common, .. }
            | Command::Scan { common, .. }
            | Command::Simulate { common, .. }
            | Command::Verify { common, .. } => common,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestFile {
    pub name: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub scenario: String,
    pub command: String,
    pub numerics: NumericsConfig,
    pub output_dir: String,
    pub engine_version: String,
    pub started_unix: u64,
    pub wall_clock_seconds: f64,
    pub seed: u64,
    pub files: Vec<ManifestFile>,
}

/// A command failure with its exit code.
#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
        }
    }
}

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        let code = match e {
            EngineError::Validation(_) | EngineError::Config(_) => EXIT_VALIDATION,
            EngineError::NonUniqueRoot { .. } => EXIT_NON_UNIQUE,
            EngineError::IncompleteMarket { .. } => EXIT_INCOMPLETE,
            _ => EXIT_FAILURE,
        };
        Failure::new(code, e.to_string())
    }
}

/// Collects output files in memory; written at the end of a command.
struct Outputs {
    dir: PathBuf,
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    fn add(&mut self, name: &str, content: impl Into<Vec<u8>>) {
        self.files.push((name.to_string(), content.into()));
    }

    fn add_json(&mut self, name: &str, value: &impl Serialize) {
        let mut text = serde_json::to_string_pretty(value).expect("serializable report");
        text.push('\n');
        self.add(name, text);
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::new(EXIT_FAILURE, format!("{}: {e}", path.display()))
}

fn parse_grid(spec: &str, flag: &str) -> Result<Vec<f64>, Failure> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || Failure::new(EXIT_VALIDATION, format!("{flag}: expected a:b:n, got {spec:?}"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let a: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let b: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let n: usize = parts[2].trim().parse().map_err(|_| bad())?;
    if n == 0 || !a.is_finite() || !b.is_finite() {
        return Err(bad());
    }
    Ok(linspace(a, b, n))
}

fn time_grid(spec: &str, s: &ValidatedScenario) -> Result<Vec<f64>, Failure> {
    let times = parse_grid(spec, "--t-grid")?;
    if let Some(t) = times.iter().find(|t| !(0.0..=s.horizon).contains(*t)) {
        return Err(Failure::new(
            EXIT_VALIDATION,
            format!("--t-grid: time {t} outside [0, {}]", s.horizon),
        ));
    }
    Ok(times)
}

struct Context {
    scenario: ValidatedScenario,
    measure: TiltedMeasure,
}

/// Entry point; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };
    match execute(&cli.command) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn execute(command: &Command) -> Result<i32, Failure> {
    let started = Instant::now();
    let started_unix = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    let common = command.common().clone();
    let scenario = load_scenario(&common.scenario)?;
    let prior = if common.check_manifest {
        let path = common.out.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(|e| io_failure(&path, e))?;
        let m: RunManifest = serde_json::from_str(&text)
            .map_err(|e| Failure::new(EXIT_FAILURE, format!("{}: {e}", path.display())))?;
        Some(m)
    } else {
        None
    };
    let measure = solve_price(&scenario)?;
    let ctx = Context { scenario, measure };
    let mut out = Outputs {
        dir: common.out.clone(),
        files: Vec::new(),
    };
    let mut seed = ctx.scenario.numerics.seed;
    let result = match command {
        Command::Price { .. } => cmd_price(&ctx, &mut out),
        Command::Surface { t_grid, b_grid, .. } => cmd_surface(&ctx, t_grid, b_grid, &mut out),
        Command::Hedge {
            sim,
            threshold,
            trajectories,
            ..
        } => {
            seed = sim.seed.unwrap_or(seed);
            cmd_hedge(&ctx, sim, *threshold, *trajectories, &mut out)
        }
        Command::Scan { t_grid, b_grid, .. } => cmd_scan(&ctx, t_grid.as_deref(), b_grid.as_deref(), &mut out),
        Command::Simulate { sim, steps_list, .. } => {
            seed = sim.seed.unwrap_or(seed);
            cmd_simulate(&ctx, sim, steps_list, &mut out)
        }
        Command::Verify { sim, .. } => {
            seed = sim.seed.unwrap_or(seed);
            cmd_verify(&ctx, sim, &mut out)
        }
    };
    // Partial outputs are still written so failures can be inspected.
    let code = match &result {
        Ok(code) => *code,
        Err(f) => f.code,
    };
    if !out.files.is_empty() || result.is_ok() {
        write_outputs(&out, &common, command.name(), &ctx.scenario, seed, started, started_unix)?;
    }
    if let Some(prior) = prior {
        check_manifest(&prior, &out)?;
        println!("manifest check: {} file(s) match", prior.files.len());
    }
    result.map(|_| code)
}

fn write_outputs(
    out: &Outputs,
    common: &Common,
    command: &str,
    s: &ValidatedScenario,
    seed: u64,
    started: Instant,
    started_unix: u64,
) -> Result<(), Failure> {
    fs::create_dir_all(&out.dir).map_err(|e| io_failure(&out.dir, e))?;
    let mut files = Vec::new();
    for (name, bytes) in &out.files {
        let path = out.dir.join(name);
        fs::write(&path, bytes).map_err(|e| io_failure(&path, e))?;
        files.push(ManifestFile {
            name: name.clone(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len(),
        });
    }
    let manifest = RunManifest {
        scenario: common.scenario.display().to_string(),
        command: command.to_string(),
        numerics: s.numerics,
        output_dir: out.dir.display().to_string(),
        engine_version: env!("CARGO_PKG_VERSION").to_string(),
        started_unix,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        seed,
        files,
    };
    let path = out.dir.join("manifest.json");
    let mut text = serde_json::to_string_pretty(&manifest).expect("serializable manifest");
    text.push('\n');
    fs::write(&path, text).map_err(|e| io_failure(&path, e))
}

fn check_manifest(prior: &RunManifest, out: &Outputs) -> Result<(), Failure> {
    let fresh: BTreeMap<&str, String> = out.files.iter().map(|(n, b)| (n.as_str(), sha256_hex(b))).collect();
    let mut problems = Vec::new();
    for f in &prior.files {
        match fresh.get(f.name.as_str()) {
            Some(h) if *h == f.sha256 => {}
            Some(_) => problems.push(format!("{} changed", f.name)),
            None => problems.push(format!("{} was not produced", f.name)),
        }
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Failure::new(EXIT_FAILURE, format!("manifest mismatch: {}", problems.join(", "))))
    }
}

fn cmd_price(ctx: &Context, out: &mut Outputs) -> Result<i32, Failure> {
    let m = &ctx.measure;
    let report = consistency_report(m, &ctx.scenario)?;
    println!("price            {}", m.p);
    println!("psi residual     {:e}", report.psi_residual);
    println!("E~[g] - p        {:e}", report.tilted_claim_mean - m.p);
    println!("unique root      {}", m.solver.unique);
    if let Some(c) = m.solver.closed_form {
        println!("closed form      {c}");
    }
    out.add_json(
        "price.json",
        &serde_json::json!({
            "price": m.p,
            "psi_residual": report.psi_residual,
            "claim_mean_gap": report.claim_mean_gap,
            "unique": m.solver.unique,
            "solver": m.solver,
            "initial_prices": report.initial_prices,
        }),
    );
    Ok(EXIT_OK)
}

fn cmd_surface(ctx: &Context, t_spec: &str, b_spec: &str, out: &mut Outputs) -> Result<i32, Failure> {
    let s = &ctx.scenario;
    let times = time_grid(t_spec, s)?;
    let levels = parse_grid(b_spec, "--b-grid")?;
    let grid = state_grid(&times, &levels, s.dimension);
    let dim = s.dimension;
    let mut csv = String::from("t");
    for j in 1..=dim {
        let _ = write!(csv, ",b{j}");
    }
    for j in 1..=dim {
        let _ = write!(csv, ",s_tilde{j}");
    }
    csv.push_str(",g_hat");
    for i in 1..=dim {
        for j in 1..=dim {
            let _ = write!(csv, ",sigma{i}{j}");
        }
    }
    csv.push_str(",min_sv");
    for j in 1..=dim {
        let _ = write!(csv, ",h{j}");
    }
    csv.push('\n');
    if s.is_example1() {
        return Err(EngineError::Unsupported(
            "the example1 surface depends on the path; use scan".into(),
        )
        .into());
    }
    let eval = Evaluator::new(s, &ctx.measure)?;
    let rows = crate::dynamics::try_map(&grid, |st| {
        let e = eval.eval(st)?;
        let h = match ratio_from_eval(&e, s) {
            Ok(r) => r.holdings,
            Err(EngineError::IncompleteMarket { .. }) => vec![f64::NAN; dim],
            Err(err) => return Err(err),
        };
        let mut row = st.t.to_string();
        for v in st.b.iter().chain(&e.s_tilde).chain(std::iter::once(&e.g_hat)) {
            let _ = write!(row, ",{v}");
        }
        for i in 0..dim {
            for j in 0..dim {
                let _ = write!(row, ",{}", e.sigma[(i, j)]);
            }
        }
        let _ = write!(row, ",{}", min_singular_value(&e.sigma));
        for v in &h {
            let _ = write!(row, ",{v}");
        }
        row.push('\n');
        Ok(row)
    })?;
    rows.iter().for_each(|r| csv.push_str(r));
    println!("surface: {} states", grid.len());
    out.add("surface.csv", csv);
    Ok(EXIT_OK)
}

fn sim_params(s: &ValidatedScenario, sim: &Sim) -> (usize, usize, u64) {
    (
        sim.steps.unwrap_or(s.numerics.time_steps),
        sim.paths.unwrap_or(s.numerics.mc_paths),
        sim.seed.unwrap_or(s.numerics.seed),
    )
}

fn cmd_hedge(
    ctx: &Context,
    sim: &Sim,
    threshold: Option<f64>,
    trajectories: bool,
    out: &mut Outputs,
) -> Result<i32, Failure> {
    let s = &ctx.scenario;
    let (steps, paths, seed) = sim_params(s, sim);
    let threshold = threshold.unwrap_or(s.numerics.hedge_threshold);
    let bundle = simulate_paths(s, steps, paths, seed)?;
    let report = match replicate_with(&bundle, &ctx.measure, s, ReplicateOptions { keep_trajectories: trajectories }) {
        Ok(r) => r,
        Err(e @ EngineError::IncompleteMarket { .. }) => {
            let mut f = Failure::from(e);
            if let crate::model::TradedAsset::Example1 { tau } = s.traded {
                f.message = format!(
                    "{}; the price process has zero volatility on [0, {tau}), so the claim is not a stochastic integral of it",
                    f.message
                );
            }
            return Err(f);
        }
        Err(e) => return Err(e.into()),
    };
    let residual = if steps % 2 == 0 {
        Some(martingale_residual_check(&bundle, &ctx.measure, s)?)
    } else {
        None
    };
    println!("price            {}", report.price);
    println!("rms error        {:e}", report.rms);
    println!("max |error|      {:e}", report.max_abs);
    if let Some(r) = &residual {
        println!(
            "residual ratio   {} ({})",
            r.ratio,
            if r.exact { "exact" } else if r.passed { "pass" } else { "FAIL" }
        );
    }
    out.add("hedge_errors.csv", report.errors_csv());
    if let Some(csv) = report.trajectories_csv() {
        out.add("trajectories.csv", csv);
    }
    let mut summary = report.summary_json();
    summary["threshold"] = serde_json::json!(threshold);
    summary["martingale_residual"] = serde_json::to_value(&residual).expect("serializable");
    out.add_json("hedge.json", &summary);
    if report.rms <= threshold {
        Ok(EXIT_OK)
    } else {
        Err(Failure::new(
            EXIT_FAILURE,
            format!("rms terminal error {} exceeds threshold {threshold}", report.rms),
        ))
    }
}

fn default_scan_grid(s: &ValidatedScenario) -> (Vec<f64>, Vec<f64>) {
    let levels = if s.dimension == 1 { linspace(-3.0, 3.0, 13) } else { linspace(-2.0, 2.0, 5) };
    (linspace(0.0, s.horizon, 11), levels)
}

fn cmd_scan(ctx: &Context, t_spec: Option<&str>, b_spec: Option<&str>, out: &mut Outputs) -> Result<i32, Failure> {
    let s = &ctx.scenario;
    let (mut times, mut levels) = default_scan_grid(s);
    if let Some(spec) = t_spec {
        times = time_grid(spec, s)?;
    }
    if let Some(spec) = b_spec {
        levels = parse_grid(spec, "--b-grid")?;
    }
    let report = completeness_scan(&ctx.measure, s, &state_grid(&times, &levels, s.dimension))?;
    println!("verdict          {:?}", report.verdict);
    println!("min singular     {:e}", report.min_sv);
    println!("failing states   {} of {}", report.failing.len(), report.points.len());
    out.add("scan.csv", report.to_csv());
    out.add_json("scan.json", &report.verdict_json());
    Ok(match report.verdict {
        Verdict::Complete => EXIT_OK,
        Verdict::Incomplete => EXIT_INCOMPLETE,
    })
}

fn cmd_simulate(ctx: &Context, sim: &Sim, steps_list: &str, out: &mut Outputs) -> Result<i32, Failure> {
    let s = &ctx.scenario;
    let (_, paths, seed) = sim_params(s, sim);
    let steps: Vec<usize> = steps_list
        .split(',')
        .map(|v| v.trim().parse())
        .collect::<Result<_, _>>()
        .map_err(|_| Failure::new(EXIT_VALIDATION, format!("--steps-list: cannot parse {steps_list:?}")))?;
    let table = convergence_study(s, &ctx.measure, &steps, paths, seed)?;
    for r in &table.rows {
        println!("steps {:>6}  rms {:e}", r.steps, r.rms);
    }
    println!("monotone         {}", table.monotone);
    out.add("convergence.csv", table.to_csv());
    out.add_json("convergence.json", &table);
    Ok(EXIT_OK)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "UPPERCASE")]
enum Status {
    Pass,
    Fail,
    Skip,
}

#[derive(Debug, Clone, Serialize)]
struct CheckResult {
    name: &'static str,
    status: Status,
    detail: String,
}

fn check(name: &'static str, outcome: Result<(bool, String), EngineError>) -> CheckResult {
    match outcome {
        Ok((ok, detail)) => CheckResult {
            name,
            status: if ok { Status::Pass } else { Status::Fail },
            detail,
        },
        Err(e) => CheckResult {
            name,
            status: Status::Fail,
            detail: e.to_string(),
        },
    }
}

fn skip(name: &'static str, why: &str) -> CheckResult {
    CheckResult {
        name,
        status: Status::Skip,
        detail: why.to_string(),
    }
}

/// Deterministic interior states for the pointwise checks.
fn probe_states(s: &ValidatedScenario, n: usize) -> Vec<State> {
    use rand::Rng;
    let mut rng = crate::rng::stream(s.numerics.seed, "verify-states", 0);
    (0..n)
        .map(|_| {
            let t = rng.random_range(0.0..0.95) * s.horizon;
            let b = (0..s.dimension).map(|_| rng.random_range(-2.0..2.0)).collect();
            State::new(t, b)
        })
        .collect()
}

fn quadrature_check(order: usize) -> Result<(bool, String), EngineError> {
    let rule = quad_rule(order)?;
    let (m, v, k): (f64, f64, f64) = (0.3, 0.7, 0.1);
    let sd = v.sqrt();
    let abs_dev = cond_expect_1d(m, v, |z| (z - m).abs(), &[m], &rule)?;
    let call = cond_expect_1d(m, v, |z| (z - k).max(0.0), &[k], &rule)?;
    let put = cond_expect_1d(m, v, |z| (k - z).max(0.0), &[k], &rule)?;
    let mgf = cond_expect_1d(m, v, f64::exp, &[], &rule)?;
    let second = cond_expect_1d(m, v, |z| z * z, &[], &rule)?;
    let err = [
        abs_dev - sd * (2.0 / std::f64::consts::PI).sqrt(),
        call - put - (m - k),
        mgf - (m + 0.5 * v).exp(),
        second - (m * m + v),
    ]
    .iter()
    .fold(0.0f64, |a, e| a.max(e.abs()));
    Ok((err < 1e-10, format!("max error {err:e}")))
}

fn verify_checks(ctx: &Context, sim: &Sim) -> Vec<CheckResult> {
    let s = &ctx.scenario;
    let m = &ctx.measure;
    let names = [
        "quadrature",
        "consistency",
        "sigma_routes",
        "delta_identity",
        "diagonal_structure",
        "completeness",
        "hedge_fd",
        "optimality",
    ];
    if s.is_example1() {
        let grid = state_grid(&linspace(0.0, s.horizon, 11), &[0.0], 1);
        let mut out = vec![check(
            "completeness",
            completeness_scan(m, s, &grid).map(|r| {
                (
                    r.verdict == Verdict::Complete,
                    format!("min_sv {:e}, {} failing states", r.min_sv, r.failing.len()),
                )
            }),
        )];
        out.extend(
            names
                .iter()
                .filter(|n| **n != "completeness")
                .map(|n| skip(n, "example1 market")),
        );
        return out;
    }
    let states = probe_states(s, 20);
    let mut results = vec![check("quadrature", quadrature_check(s.numerics.quad_order))];

    results.push(check(
        "consistency",
        consistency_report(m, s).map(|r| {
            (
                r.passes(1e-8, 1e-10),
                format!("|E~[g] - p| {:e}, |psi| {:e}", r.claim_mean_gap, r.psi_residual),
            )
        }),
    ));

    results.push(check(
        "sigma_routes",
        (|| {
            let main = Evaluator::new(s, m)?;
            let tensor = (s.dimension <= crate::gauss::MAX_TENSOR_DIM)
                .then(|| Evaluator::with_backend(s, m, Backend::Tensor))
                .transpose()?;
            let mut worst = 0.0f64;
            for st in &states {
                let e = main.eval(st)?;
                if let Some(cov) = &e.sigma_cov {
                    worst = worst.max((&e.sigma - cov).amax());
                }
                if let Some(t) = &tensor {
                    worst = worst.max((&e.sigma - &t.eval(st)?.sigma).amax());
                }
            }
            Ok((worst <= 1e-6, format!("max entry gap {worst:e}")))
        })(),
    ));

    results.push(check(
        "delta_identity",
        (|| {
            let eval = Evaluator::new(s, m)?;
            let h = 1e-5;
            let mut worst = 0.0f64;
            for st in &states {
                let e = eval.eval(st)?;
                for j in 0..s.dimension {
                    let bump = |d: f64| {
                        let mut b = st.b.clone();
                        b[j] += d;
                        eval.eval(&State::new(st.t, b))
                    };
                    let (up, down) = (bump(h)?, bump(-h)?);
                    for k in 0..s.dimension {
                        let fd = (up.s_tilde[k] - down.s_tilde[k]) / (2.0 * h);
                        worst = worst.max((fd - e.sigma[(k, j)]).abs());
                    }
                    let fd = (up.g_hat - down.g_hat) / (2.0 * h);
                    worst = worst.max((fd - e.eta[j]).abs());
                }
            }
            Ok((worst <= 1e-4, format!("max gap {worst:e}")))
        })(),
    ));

    if s.convex && s.utility.single_rate().is_some() {
        results.push(check(
            "diagonal_structure",
            (|| {
                let eval = Evaluator::new(s, m)?;
                let (mut off, mut diag) = (0.0f64, f64::INFINITY);
                for st in &states {
                    let e = eval.eval(st)?;
                    for i in 0..s.dimension {
                        for j in 0..s.dimension {
                            if i == j {
                                diag = diag.min(e.sigma[(i, j)]);
                            } else {
                                off = off.max(e.sigma[(i, j)].abs());
                            }
                        }
                    }
                }
                Ok((
                    off <= 1e-8 && diag >= 1.0 - 1e-8,
                    format!("max |off-diagonal| {off:e}, min diagonal {diag}"),
                ))
            })(),
        ));
    } else {
        results.push(skip("diagonal_structure", "needs a convex separable claim and exponential utility"));
    }

    let (times, levels) = default_scan_grid(s);
    let scan = completeness_scan(m, s, &state_grid(&times, &levels, s.dimension));
    let complete = matches!(&scan, Ok(r) if r.verdict == Verdict::Complete);
    results.push(check(
        "completeness",
        scan.map(|r| {
            (
                r.verdict == Verdict::Complete,
                format!("min_sv {:e} (tolerance {:e})", r.min_sv, r.sv_tolerance),
            )
        }),
    ));
    if !complete {
        results.push(skip("hedge_fd", "market not complete"));
        results.push(skip("optimality", "market not complete"));
        return results;
    }

    if s.utility.single_rate().is_some() {
        results.push(check(
            "hedge_fd",
            (|| {
                let mut worst = 0.0f64;
                for st in &states {
                    let h = hedge_ratio(st, m, s)?.holdings;
                    let fd = finite_difference_ratio(st, m, s, 1e-4)?;
                    for (a, b) in h.iter().zip(&fd) {
                        worst = worst.max((a - b).abs());
                    }
                }
                Ok((worst <= 1e-3, format!("max gap {worst:e}")))
            })(),
        ));
    } else {
        results.push(skip("hedge_fd", "ratio of deltas needs a diagonal volatility matrix"));
    }

    let (steps, paths, seed) = sim_params(s, sim);
    results.push(check(
        "optimality",
        simulate_paths(s, steps, paths, seed)
            .and_then(|b| mm_optimality_check(&b, m, s, &[0.0, 0.25, 0.5]))
            .map(|r| {
                (
                    r.passed,
                    format!(
                        "zero exact {}, largest negative {}, concave {}",
                        r.zero_is_exact, r.largest_is_negative, r.concave
                    ),
                )
            }),
    ));
    results
}

fn cmd_verify(ctx: &Context, sim: &Sim, out: &mut Outputs) -> Result<i32, Failure> {
    let results = verify_checks(ctx, sim);
    for r in &results {
        let tag = match r.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Skip => "SKIP",
        };
        println!("{tag:<5} {:<20} {}", r.name, r.detail);
    }
    out.add_json("verify.json", &results);
    let failing: Vec<&str> = results.iter().filter(|r| r.status == Status::Fail).map(|r| r.name).collect();
    if failing.is_empty() {
        Ok(EXIT_OK)
    } else {
        Err(Failure::new(EXIT_VERIFY, format!("failing checks: {}", failing.join(", "))))
    }
}
