//! Scaling-law fit `L(N, D) = E + A/N^alpha + B/D^beta`.
//!
//! Fitted in log space as `log L = LSE(e, a - alpha log N, b - beta log D)`
//! under a Huber loss on log residuals, from a 5x5 grid of exponent starts.
//! Each start runs a bound-projected L-BFGS for a fixed iteration budget.
//! Internally the log N and log D columns are centered, which only
//! reparameterizes `a` and `b` and keeps the problem well conditioned.

use serde::{Deserialize, Serialize};

use super::StatsError;

pub const HUBER_DELTA: f64 = 1e-3;
pub const GRID: [f64; 5] = [0.0, 0.5, 1.0, 1.5, 2.0];
pub const MAX_ITERATIONS: usize = 3000;
pub const GRAD_TOL: f64 = 1e-8;
const MEMORY: usize = 10;
const MAX_HALVINGS: usize = 60;
const ARMIJO: f64 = 1e-4;
const BINDING_EPS: f64 = 1e-6;
const FLAT_TERM_TOL: f64 = 1e-9;

/// One observation: non-embedding parameters, training tokens, loss in nats.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub n: f64,
    pub d: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingLawFit {
    #[serde(rename = "E")]
    pub e: f64,
    #[serde(rename = "A")]
    pub a: f64,
    #[serde(rename = "B")]
    pub b: f64,
    pub alpha: f64,
    pub beta: f64,
    pub objective_value: f64,
    pub converged: bool,
    /// Grid index (alpha-major) of the winning start.
    pub best_start: usize,
    pub iterations: usize,
}

impl ScalingLawFit {
    pub fn predict(&self, n: f64, d: f64) -> f64 {
        self.e + self.a * n.powf(-self.alpha) + self.b * d.powf(-self.beta)
    }

    /// The three additive terms `(E, A/N^alpha, B/D^beta)` at one point.
    pub fn terms(&self, n: f64, d: f64) -> [f64; 3] {
        [self.e, self.a * n.powf(-self.alpha), self.b * d.powf(-self.beta)]
    }
}

struct Problem {
    ln_n: Vec<f64>,
    ln_d: Vec<f64>,
    ln_l: Vec<f64>,
    center_n: f64,
    center_d: f64,
}

// Parameter vector: [e, a', b', alpha, beta] with a = a' + alpha * center_n.
const BOUNDED: [bool; 5] = [false, false, false, true, true];

fn huber(r: f64) -> (f64, f64) {
    if r.abs() <= HUBER_DELTA {
        (0.5 * r * r, r)
    } else {
        (HUBER_DELTA * (r.abs() - 0.5 * HUBER_DELTA), HUBER_DELTA * r.signum())
    }
}

impl Problem {
    fn new(points: &[ScalingPoint]) -> Self {
        let ln_n: Vec<f64> = points.iter().map(|p| p.n.ln()).collect();
        let ln_d: Vec<f64> = points.iter().map(|p| p.d.ln()).collect();
        let ln_l = points.iter().map(|p| p.loss.ln()).collect();
        let k = points.len() as f64;
        let center_n = ln_n.iter().sum::<f64>() / k;
        let center_d = ln_d.iter().sum::<f64>() / k;
        let ln_n = ln_n.iter().map(|v| v - center_n).collect();
        let ln_d = ln_d.iter().map(|v| v - center_d).collect();
        Self {
            ln_n,
            ln_d,
            ln_l,
            center_n,
            center_d,
        }
    }

    fn eval(&self, x: &[f64; 5], grad: &mut [f64; 5]) -> f64 {
        *grad = [0.0; 5];
        let mut f = 0.0;
        for i in 0..self.ln_l.len() {
            let t = [
                x[0],
                x[1] - x[3] * self.ln_n[i],
                x[2] - x[4] * self.ln_d[i],
            ];
            let m = t[0].max(t[1]).max(t[2]);
            let w = t.map(|v| (v - m).exp());
            let s = w[0] + w[1] + w[2];
            let lhat = m + s.ln();
            let (h, dh) = huber(lhat - self.ln_l[i]);
            f += h;
            let p = w.map(|v| v / s);
            grad[0] += dh * p[0];
            grad[1] += dh * p[1];
            grad[2] += dh * p[2];
            grad[3] -= dh * p[1] * self.ln_n[i];
            grad[4] -= dh * p[2] * self.ln_d[i];
        }
        f
    }

    fn initial(&self, alpha: f64, beta: f64) -> [f64; 5] {
        let losses: Vec<f64> = self.ln_l.iter().map(|v| v.exp()).collect();
        let min = losses.iter().cloned().fold(f64::INFINITY, f64::min);
        let mean = losses.iter().sum::<f64>() / losses.len() as f64;
        let e0 = 0.5 * min;
        let half_excess = 0.5 * (mean - e0);
        // centered log N / log D average to zero, so a' and b' are the
        // log of each power term at the geometric-mean design point
        [e0.ln(), half_excess.ln(), half_excess.ln(), alpha, beta]
    }

    /// Maps optimizer coordinates to natural units.
    fn to_fit(&self, x: &[f64; 5], objective_value: f64, converged: bool) -> ScalingLawFit {
        ScalingLawFit {
            e: x[0].exp(),
            a: (x[1] + x[3] * self.center_n).exp(),
            b: (x[2] + x[4] * self.center_d).exp(),
            alpha: x[3],
            beta: x[4],
            objective_value,
            converged,
            best_start: 0,
            iterations: 0,
        }
    }
}

/// A power term that barely varies over the data cannot be told apart from
/// E; it is reported as part of E with its coefficient set to zero.
fn fold_flat_terms(fit: &mut ScalingLawFit, points: &[ScalingPoint]) {
    let (lo_n, hi_n) = range(points.iter().map(|p| p.n));
    let (lo_d, hi_d) = range(points.iter().map(|p| p.d));
    let floor = points
        .iter()
        .map(|p| fit.predict(p.n, p.d))
        .fold(f64::INFINITY, f64::min);
    let spread_a = fit.a * (lo_n.powf(-fit.alpha) - hi_n.powf(-fit.alpha));
    if spread_a <= FLAT_TERM_TOL * floor {
        fit.e += fit.a * hi_n.powf(-fit.alpha);
        fit.a = 0.0;
        fit.alpha = 0.0;
    }
    let spread_b = fit.b * (lo_d.powf(-fit.beta) - hi_d.powf(-fit.beta));
    if spread_b <= FLAT_TERM_TOL * floor {
        fit.e += fit.b * hi_d.powf(-fit.beta);
        fit.b = 0.0;
        fit.beta = 0.0;
    }
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    })
}

fn project(x: &mut [f64; 5]) {
    for (v, &b) in x.iter_mut().zip(&BOUNDED) {
        if b && *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// `x - P(x - g)`: zero exactly at a bound-constrained stationary point.
fn projected_gradient(x: &[f64; 5], g: &[f64; 5]) -> [f64; 5] {
    std::array::from_fn(|k| {
        if BOUNDED[k] {
            x[k] - (x[k] - g[k]).max(0.0)
        } else {
            g[k]
        }
    })
}

/// Bounded coordinates pinned for this iteration: at (or within `eps` of)
/// zero with the gradient pushing further down.
fn binding(x: &[f64; 5], g: &[f64; 5], eps: f64) -> [bool; 5] {
    std::array::from_fn(|k| BOUNDED[k] && x[k] <= eps && g[k] > 0.0)
}

fn dot(a: &[f64; 5], b: &[f64; 5]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64; 5]) -> f64 {
    dot(a, a).sqrt()
}

struct Outcome {
    x: [f64; 5],
    f: f64,
    grad_norm: f64,
    iterations: usize,
}

fn minimize(problem: &Problem, mut x: [f64; 5]) -> Outcome {
    let mut g = [0.0; 5];
    let mut f = problem.eval(&x, &mut g);
    let mut mem: Vec<([f64; 5], [f64; 5], f64)> = Vec::with_capacity(MEMORY);
    let mut iterations = 0;
    let mut pg = projected_gradient(&x, &g);
    while iterations < MAX_ITERATIONS && norm(&pg) >= GRAD_TOL {
        iterations += 1;
        let pinned = binding(&x, &g, norm(&pg).min(BINDING_EPS));
        let free_g: [f64; 5] = std::array::from_fn(|k| if pinned[k] { 0.0 } else { g[k] });
        let mut d = two_loop(&mem, &free_g);
        for k in 0..5 {
            if pinned[k] {
                d[k] = 0.0;
            }
        }
        if dot(&d, &free_g) >= 0.0 {
            mem.clear();
            d = free_g.map(|v| -v);
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let mut xn = x;
            for k in 0..5 {
                xn[k] += t * d[k];
            }
            project(&mut xn);
            let step: [f64; 5] = std::array::from_fn(|k| xn[k] - x[k]);
            let mut gn = [0.0; 5];
            let fn_ = problem.eval(&xn, &mut gn);
            if fn_ <= f + ARMIJO * dot(&g, &step) && fn_.is_finite() {
                accepted = Some((xn, gn, fn_, step));
                break;
            }
            t *= 0.5;
        }
        let Some((xn, gn, fn_, s)) = accepted else {
            // no decrease along the direction: retry once from steepest descent
            if !mem.is_empty() {
                mem.clear();
                continue;
            }
            break;
        };
        let y: [f64; 5] = std::array::from_fn(|k| gn[k] - g[k]);
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) && sy > 0.0 {
            if mem.len() == MEMORY {
                mem.remove(0);
            }
            mem.push((s, y, 1.0 / sy));
        }
        let stalled = fn_ == f && s.iter().all(|&v| v == 0.0);
        x = xn;
        g = gn;
        f = fn_;
        pg = projected_gradient(&x, &g);
        if stalled {
            break;
        }
    }
    Outcome {
        x,
        f,
        grad_norm: norm(&pg),
        iterations,
    }
}

fn two_loop(mem: &[([f64; 5], [f64; 5], f64)], g: &[f64; 5]) -> [f64; 5] {
    let mut q = *g;
    let mut alphas = Vec::with_capacity(mem.len());
    for (s, y, rho) in mem.iter().rev() {
        let a = rho * dot(s, &q);
        for k in 0..5 {
            q[k] -= a * y[k];
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = mem.last() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in mem.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        for k in 0..5 {
            q[k] += (a - b) * s[k];
        }
    }
    q.map(|v| -v)
}

fn distinct(values: impl Iterator<Item = f64>) -> usize {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v.len()
}

/// Fits the scaling law. Deterministic: the same points give the same bits.
pub fn fit_chinchilla(points: &[ScalingPoint]) -> Result<ScalingLawFit, StatsError> {
    if points.len() < 6 {
        return Err(StatsError::TooFewPoints {
            needed: 6,
            got: points.len(),
        });
    }
    for p in points {
        let ok = [p.n, p.d, p.loss].iter().all(|v| v.is_finite() && *v > 0.0);
        if !ok {
            return Err(StatsError::NonFinite);
        }
    }
    let distinct_n = distinct(points.iter().map(|p| p.n));
    let distinct_d = distinct(points.iter().map(|p| p.d));
    if distinct_n < 2 || distinct_d < 2 {
        return Err(StatsError::DegenerateGrid {
            distinct_n,
            distinct_d,
        });
    }
    let problem = Problem::new(points);
    let mut best: Option<(Outcome, usize)> = None;
    for (ia, &alpha) in GRID.iter().enumerate() {
        for (ib, &beta) in GRID.iter().enumerate() {
            let out = minimize(&problem, problem.initial(alpha, beta));
            let better = match &best {
                None => true,
                Some((b, _)) => out.f < b.f,
            };
            if better {
                best = Some((out, ia * GRID.len() + ib));
            }
        }
    }
    let (out, start) = best.expect("grid is non-empty");
    let mut fit = problem.to_fit(&out.x, out.f, out.grad_norm < GRAD_TOL);
    fit.best_start = start;
    fit.iterations = out.iterations;
    fold_flat_terms(&mut fit, points);
    Ok(fit)
}

/// Fit plus per-point residuals `loss - prediction`.
pub fn chinchilla_residuals(
    points: &[ScalingPoint],
) -> Result<(ScalingLawFit, Vec<f64>), StatsError> {
    let fit = fit_chinchilla(points)?;
    let res = points.iter().map(|p| p.loss - fit.predict(p.n, p.d)).collect();
    Ok((fit, res))
}

/// Spearman correlation between a metric and the scaling-law residuals.
pub fn residual_spearman_chinchilla(
    points: &[ScalingPoint],
    metric: &[f64],
) -> Result<f64, StatsError> {
    let (_, res) = chinchilla_residuals(points)?;
    super::spearman(metric, &res)
}
