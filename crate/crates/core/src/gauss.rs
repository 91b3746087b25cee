//! Conditional-expectation kernel.
//!
//! Everything the engine computes is an expectation of a function of the
//! terminal Brownian value `B_T` given `B_t = b`, i.e. an integral against
//! `N(b, (T−t)·I)`. Smooth integrands use probabilists' Gauss–Hermite rules.
//! Integrands with kinks (payoff breakpoints) are split at the kinks in the
//! standardized coordinate and integrated with composite Gauss–Legendre
//! panels, which keeps every panel smooth.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use rand_distr::{Distribution, StandardNormal};

use crate::error::{EngineError, Result};
use crate::model::{NumericsConfig, State};
use crate::rng;

/// Probabilists' Gauss–Hermite rule: `Σ w_i f(x_i) ≈ E[f(ξ)]`, `ξ ~ N(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadRule {
    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

pub fn quad_rule(order: usize) -> Result<QuadRule> {
    if order < 2 {
        return Err(EngineError::invalid(format!(
            "quadrature order must be at least 2, got {order}"
        )));
    }
    let (nodes, weights) = hermite_physicists(order);
    let scale = PI.sqrt().recip();
    Ok(QuadRule {
        nodes: nodes.iter().map(|x| x * std::f64::consts::SQRT_2).collect(),
        weights: weights.iter().map(|w| w * scale).collect(),
    })
}

/// Shared, immutable rules keyed by order.
pub fn cached_rule(order: usize) -> Result<Arc<QuadRule>> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<QuadRule>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    if let Some(rule) = cache.lock().unwrap().get(&order) {
        return Ok(rule.clone());
    }
    let rule = Arc::new(quad_rule(order)?);
    cache.lock().unwrap().insert(order, rule.clone());
    Ok(rule)
}

/// Nodes and weights for the weight `e^{−x²}` by Newton iteration on the
/// orthonormal Hermite recurrence.
fn hermite_physicists(n: usize) -> (Vec<f64>, Vec<f64>) {
    let pim4 = PI.powf(-0.25);
    let nf = n as f64;
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    let mut z: f64 = 0.0;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-0.16667),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 1..=n {
                let jf = j as f64;
                let p3 = p2;
                p2 = p1;
                p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    if n % 2 == 1 {
        x[m - 1] = 0.0;
    }
    // ascending order
    x.reverse();
    w.reverse();
    (x, w)
}

/// Gauss–Legendre nodes and weights on `[−1, 1]`.
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = 1.0;
            let mut p2 = 0.0;
            for j in 0..n {
                let jf = j as f64;
                let p3 = p2;
                p2 = p1;
                p1 = ((2.0 * jf + 1.0) * z * p2 - jf * p3) / (jf + 1.0);
            }
            pp = nf * (z * p1 - p2) / (z * z - 1.0);
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

const PANEL_ORDER: usize = 10;

fn panel_rule() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(PANEL_ORDER))
}

/// Half-width, in standard deviations, of the window used for split integrals
/// before any tilt allowance.
pub const BASE_EXTENT: f64 = 10.0;

#[inline]
fn std_normal_pdf(u: f64) -> f64 {
    (-0.5 * u * u).exp() / (2.0 * PI).sqrt()
}

/// A value with its standard error (zero for deterministic quadrature).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Estimate { value, stderr: 0.0 }
    }
}

/// Discretization of `N(mean, var)` on one coordinate: `Σ w_i f(z_i) ≈ E[f(Z)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid1d {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Grid1d {
    /// The degenerate law at `x`.
    pub fn point(x: f64) -> Self {
        Grid1d {
            nodes: vec![x],
            weights: vec![1.0],
        }
    }

    /// Grid for `N(mean, var)`. Kinks inside `mean ± extent·sd` split the
    /// domain into Gauss–Legendre panels of at most one standard deviation;
    /// otherwise the Gauss–Hermite rule is used unchanged.
    pub fn gaussian(mean: f64, var: f64, kinks: &[f64], rule: &QuadRule, extent: f64) -> Self {
        if var <= 0.0 {
            return Grid1d::point(mean);
        }
        let sd = var.sqrt();
        let inside: Vec<f64> = kinks
            .iter()
            .map(|k| (k - mean) / sd)
            .filter(|u| u.abs() < extent)
            .collect();
        if inside.is_empty() {
            return Grid1d {
                nodes: rule.nodes.iter().map(|x| mean + sd * x).collect(),
                weights: rule.weights.clone(),
            };
        }
        let bounds = panel_bounds(&inside, -extent, extent);
        let (gx, gw) = panel_rule();
        let mut nodes = Vec::with_capacity(bounds.len() * PANEL_ORDER);
        let mut weights = Vec::with_capacity(bounds.len() * PANEL_ORDER);
        for w in bounds.windows(2) {
            let mid = 0.5 * (w[0] + w[1]);
            let half = 0.5 * (w[1] - w[0]);
            for (x, wt) in gx.iter().zip(gw) {
                let u = mid + half * x;
                nodes.push(mean + sd * u);
                weights.push(half * wt * std_normal_pdf(u));
            }
        }
        Grid1d { nodes, weights }
    }

    pub fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&z, &w)| w * f(z)).sum()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Sorted panel boundaries on `[lo, hi]`: the kinks plus unit steps, with no
/// unit step closer than 1e-9 to a kink.
fn panel_bounds(kinks: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let mut b: Vec<f64> = kinks.to_vec();
    let mut k = lo.ceil();
    while k < hi {
        if k > lo && kinks.iter().all(|q| (q - k).abs() > 1e-9) {
            b.push(k);
        }
        k += 1.0;
    }
    b.push(lo);
    b.push(hi);
    b.sort_by(f64::total_cmp);
    b.dedup();
    b
}

/// `E[f(Z)]` for `Z ~ N(mean, var)`.
///
/// With `var = 0` this is `f(mean)`. Without breakpoints the Gauss–Hermite
/// `rule` is applied directly; with breakpoints the line is split at them and
/// each piece is integrated by Gauss–Legendre panels, extending the window
/// outward while the outermost panels still contribute.
pub fn cond_expect_1d(
    mean: f64,
    var: f64,
    f: impl Fn(f64) -> f64,
    breakpoints: &[f64],
    rule: &QuadRule,
) -> Result<f64> {
    if !(var >= 0.0) {
        return Err(EngineError::invalid(format!("variance must be non-negative, got {var}")));
    }
    if var == 0.0 {
        return finite(f(mean), "1-d integrand");
    }
    let sd = var.sqrt();
    if breakpoints.is_empty() {
        let mut total = 0.0;
        for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
            total += w * finite(f(mean + sd * x), "1-d integrand")?;
        }
        return Ok(total);
    }
    let inside: Vec<f64> = breakpoints
        .iter()
        .map(|k| (k - mean) / sd)
        .filter(|u| u.abs() < 40.0)
        .collect();
    let lo0 = inside.iter().copied().fold(-BASE_EXTENT, f64::min).floor();
    let hi0 = inside.iter().copied().fold(BASE_EXTENT, f64::max).ceil();
    let (gx, gw) = panel_rule();
    let panel = |a: f64, b: f64| -> Result<f64> {
        let mid = 0.5 * (a + b);
        let half = 0.5 * (b - a);
        let mut s = 0.0;
        for (x, w) in gx.iter().zip(gw) {
            let u = mid + half * x;
            s += half * w * std_normal_pdf(u) * finite(f(mean + sd * u), "1-d integrand")?;
        }
        Ok(s)
    };
    let mut total = 0.0;
    for w in panel_bounds(&inside, lo0, hi0).windows(2) {
        total += panel(w[0], w[1])?;
    }
    let (mut lo, mut hi) = (lo0, hi0);
    const LIMIT: f64 = 40.0;
    while hi < LIMIT {
        let c = panel(hi, hi + 1.0)?;
        total += c;
        hi += 1.0;
        if c.abs() <= 1e-17 * total.abs() {
            break;
        }
    }
    while lo > -LIMIT {
        let c = panel(lo - 1.0, lo)?;
        total += c;
        lo -= 1.0;
        if c.abs() <= 1e-17 * total.abs() {
            break;
        }
    }
    Ok(total)
}

#[inline]
fn finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(EngineError::NonFinite(what.to_string()))
    }
}

pub type Factor<'a> = Box<dyn Fn(f64) -> f64 + Sync + 'a>;

/// `coef · Π_j factors[j](z^j)`.
pub struct ProductTerm<'a> {
    pub coef: f64,
    pub factors: Vec<Factor<'a>>,
}

pub type PointFn<'a> = Box<dyn Fn(&[f64]) -> f64 + Sync + 'a>;

/// A function of the terminal value, optionally declared as a sum of products
/// of per-coordinate factors.
pub enum Integrand<'a> {
    Pointwise(PointFn<'a>),
    ProductSum(Vec<ProductTerm<'a>>),
}

impl Integrand<'_> {
    pub fn eval(&self, z: &[f64]) -> f64 {
        match self {
            Integrand::Pointwise(f) => f(z),
            Integrand::ProductSum(terms) => terms
                .iter()
                .map(|t| t.coef * t.factors.iter().zip(z).map(|(f, &x)| f(x)).product::<f64>())
                .sum(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Product grid of one-dimensional rules, `J ≤ 3`.
    Tensor,
    /// Per-coordinate one-dimensional integrals; needs [`Integrand::ProductSum`].
    SeparableProduct,
    /// Seeded Monte Carlo with `cfg.mc_paths` samples on the given stream.
    MonteCarlo { stream: u64 },
}

pub const MAX_TENSOR_DIM: usize = 3;

/// Visit every node of the product grid with its weight.
pub fn for_each_tensor_node(grids: &[Grid1d], mut visit: impl FnMut(&[f64], f64)) {
    let dim = grids.len();
    if grids.iter().any(Grid1d::is_empty) {
        return;
    }
    let mut idx = vec![0usize; dim];
    let mut z: Vec<f64> = grids.iter().map(|g| g.nodes[0]).collect();
    loop {
        let w: f64 = idx.iter().zip(grids).map(|(&i, g)| g.weights[i]).product();
        visit(&z, w);
        let mut d = dim;
        loop {
            if d == 0 {
                return;
            }
            d -= 1;
            idx[d] += 1;
            if idx[d] < grids[d].len() {
                z[d] = grids[d].nodes[idx[d]];
                break;
            }
            idx[d] = 0;
            z[d] = grids[d].nodes[0];
        }
    }
}

/// `E[f(Z)]`, `Z ~ N(b, (T−t)·I)`, by the requested method.
///
/// `kinks[j]` lists gradient discontinuities of the integrand along
/// coordinate `j` (may be empty).
pub fn cond_expect_nd(
    state: &State,
    horizon: f64,
    integrand: &Integrand<'_>,
    kinks: &[Vec<f64>],
    method: Method,
    cfg: &NumericsConfig,
) -> Result<Estimate> {
    let dim = state.b.len();
    let var = horizon - state.t;
    if !(var >= 0.0) {
        return Err(EngineError::invalid(format!(
            "state time {} lies beyond the horizon {horizon}",
            state.t
        )));
    }
    let rule = cached_rule(cfg.quad_order)?;
    let kinks_of = |j: usize| kinks.get(j).map(Vec::as_slice).unwrap_or(&[]);
    match method {
        Method::Tensor => {
            if dim > MAX_TENSOR_DIM {
                return Err(EngineError::Unsupported(format!(
                    "tensor quadrature needs J <= {MAX_TENSOR_DIM}, got {dim}"
                )));
            }
            let grids: Vec<Grid1d> = (0..dim)
                .map(|j| Grid1d::gaussian(state.b[j], var, kinks_of(j), &rule, BASE_EXTENT + 2.0))
                .collect();
            let mut total = 0.0;
            let mut bad = false;
            for_each_tensor_node(&grids, |z, w| {
                let v = integrand.eval(z);
                bad |= !v.is_finite();
                total += w * v;
            });
            if bad {
                return Err(EngineError::NonFinite("tensor integrand".into()));
            }
            Ok(Estimate::exact(total))
        }
        Method::SeparableProduct => {
            let Integrand::ProductSum(terms) = integrand else {
                return Err(EngineError::invalid(
                    "separable-product integration needs a sum-of-products integrand",
                ));
            };
            let mut total = 0.0;
            for term in terms {
                if term.factors.len() != dim {
                    return Err(EngineError::invalid(format!(
                        "product term has {} factors for J = {dim}",
                        term.factors.len()
                    )));
                }
                let mut prod = term.coef;
                for (j, f) in term.factors.iter().enumerate() {
                    prod *= cond_expect_1d(state.b[j], var, f, kinks_of(j), &rule)?;
                }
                total += prod;
            }
            Ok(Estimate::exact(total))
        }
        Method::MonteCarlo { stream } => {
            let mut rng = rng::stream(cfg.seed, "cond_expect_nd", stream);
            let sd = var.sqrt();
            let n = cfg.mc_paths;
            let mut z = vec![0.0; dim];
            let (mut mean, mut m2) = (0.0, 0.0);
            for k in 0..n {
                for (zj, bj) in z.iter_mut().zip(&state.b) {
                    let xi: f64 = StandardNormal.sample(&mut rng);
                    *zj = bj + sd * xi;
                }
                let v = finite(integrand.eval(&z), "Monte Carlo integrand")?;
                // Welford
                let d = v - mean;
                mean += d / (k + 1) as f64;
                m2 += d * (v - mean);
            }
            let stderr = if n > 1 {
                (m2 / (n - 1) as f64 / n as f64).sqrt()
            } else {
                0.0
            };
            Ok(Estimate { value: mean, stderr })
        }
    }
}
