//! Derivative-free minimization: Brent's one-dimensional method and Powell's
//! conjugate-direction method, plus the per-season coach-skill fit built on
//! top of them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    CoachRoster, CoachSkillVector, GameObservation, ModelError, SeasonProblem, SkillModelParams,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimizeError {
    #[error("invalid bracket ({0}, {1}, {2})")]
    InvalidBracket(f64, f64, f64),
    #[error("objective is not finite at {0:?}")]
    NonFiniteObjective(Vec<f64>),
    #[error("no coached team plays in the season")]
    NoCoachedTeams,
    #[error("invalid optimizer configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

const CGOLD: f64 = 0.381_966_011_250_105_1;
const GOLDEN_RATIO: f64 = 1.618_033_988_749_895;
const ZEPS: f64 = 1e-15;
const INITIAL_STEP: f64 = 0.1;
const MAX_EXPANSIONS: usize = 50;
/// Smallest volume a direction set may span after a replacement.
const MIN_VOLUME: f64 = 1e-6;

/// Minimizes `f` inside the bracket `(a, m, b)` with Brent's method: golden
/// section steps, with parabolic steps accepted when they stay inside the
/// bracket and shrink fast enough.
///
/// The bracket must satisfy `a < m < b` and `f(m) < min(f(a), f(b))`.
/// Returns the best point and its value once the bracket is narrower than
/// `tol * |x|` (plus a tiny absolute floor) or after `max_iters` steps.
pub fn brent_line_min<F>(
    mut f: F,
    bracket: (f64, f64, f64),
    tol: f64,
    max_iters: usize,
) -> Result<(f64, f64), OptimizeError>
where
    F: FnMut(f64) -> f64,
{
    let (a0, m, b0) = bracket;
    if !(a0 < m && m < b0) {
        return Err(OptimizeError::InvalidBracket(a0, m, b0));
    }
    let fm = finite_or_inf(f(m));
    if !(fm < finite_or_inf(f(a0)) && fm < finite_or_inf(f(b0))) {
        return Err(OptimizeError::InvalidBracket(a0, m, b0));
    }
    Ok(brent_core(&mut f, (a0, m, b0), fm, tol, max_iters))
}

fn finite_or_inf(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        f64::INFINITY
    }
}

fn brent_core<F>(
    f: &mut F,
    bracket: (f64, f64, f64),
    fm: f64,
    tol: f64,
    max_iters: usize,
) -> (f64, f64)
where
    F: FnMut(f64) -> f64,
{
    let (mut a, m, mut b) = bracket;
    let (mut x, mut w, mut v) = (m, m, m);
    let (mut fx, mut fw, mut fv) = (fm, fm, fm);
    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;
    for _ in 0..max_iters {
        let xm = 0.5 * (a + b);
        let tol1 = tol * x.abs() + ZEPS;
        let tol2 = 2.0 * tol1;
        if (x - xm).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let etemp = e;
            e = d;
            let step_ok = p.is_finite()
                && q.is_finite()
                && q != 0.0
                && p.abs() < (0.5 * q * etemp).abs()
                && p > q * (a - x)
                && p < q * (b - x);
            if step_ok {
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = tol1.copysign(xm - x);
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= xm { a - x } else { b - x };
            d = CGOLD * e;
        }
        let u = if d.abs() >= tol1 {
            x + d
        } else {
            x + tol1.copysign(d)
        };
        let fu = finite_or_inf(f(u));
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            (v, w, x) = (w, x, u);
            (fv, fw, fx) = (fw, fx, fu);
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                (v, w) = (w, u);
                (fv, fw) = (fw, fu);
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    (x, fx)
}

/// Line minimization of `phi` starting from `t = 0` where `phi(0) = f0`.
/// Expands from `INITIAL_STEP` by the golden ratio until a bracket forms,
/// then refines with Brent. Never returns a value above `f0`.
fn line_search<F>(mut phi: F, f0: f64, tol: f64, max_iters: usize) -> (f64, f64)
where
    F: FnMut(f64) -> f64,
{
    let mut eval = |t: f64| finite_or_inf(phi(t));
    let (mut a, mut fa) = (0.0, f0);
    let (mut b, mut fb) = (INITIAL_STEP, eval(INITIAL_STEP));
    if fb >= fa {
        let (c, fc) = (-INITIAL_STEP, eval(-INITIAL_STEP));
        if fc >= fa {
            if fa < fb && fa < fc {
                return brent_core(&mut eval, (c, 0.0, b), fa, tol, max_iters);
            }
            return (0.0, f0);
        }
        b = c;
        fb = fc;
    }
    for _ in 0..MAX_EXPANSIONS {
        let c = b + GOLDEN_RATIO * (b - a);
        let fc = eval(c);
        if fc > fb {
            let bracket = if a < c { (a, b, c) } else { (c, b, a) };
            return brent_core(&mut eval, bracket, fb, tol, max_iters);
        }
        (a, fa) = (b, fb);
        (b, fb) = (c, fc);
    }
    let _ = fa;
    (b, fb)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PowellConfig {
    /// Stop when a sweep moves no coordinate by more than this.
    pub x_tol: f64,
    /// Stop when a sweep lowers the cost by less than this fraction.
    pub f_tol: f64,
    /// Maximum number of direction-set sweeps.
    pub max_iters: usize,
    /// Maximum Brent iterations per line search.
    pub max_line_iters: usize,
    /// Fractional tolerance of each line search.
    pub line_tol: f64,
    /// Extra runs from random starting points.
    pub restarts: usize,
    pub seed: u64,
    /// Box on log-skill enforced by a quadratic penalty.
    pub bounds_log: (f64, f64),
}

impl Default for PowellConfig {
    fn default() -> Self {
        Self {
            x_tol: 1e-8,
            f_tol: 1e-12,
            max_iters: 1000,
            max_line_iters: 100,
            line_tol: 1e-10,
            restarts: 3,
            seed: 0,
            bounds_log: (-2.3, 2.3),
        }
    }
}

impl PowellConfig {
    pub fn validate(&self) -> Result<(), OptimizeError> {
        if !(self.x_tol > 0.0 && self.f_tol > 0.0 && self.line_tol > 0.0) {
            return Err(OptimizeError::InvalidConfig(
                "tolerances must be positive".into(),
            ));
        }
        if self.max_iters == 0 || self.max_line_iters == 0 {
            return Err(OptimizeError::InvalidConfig(
                "iteration limits must be positive".into(),
            ));
        }
        let (lo, hi) = self.bounds_log;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(OptimizeError::InvalidConfig(format!(
                "bounds_log ({lo}, {hi}) must satisfy lower < upper"
            )));
        }
        Ok(())
    }
}

/// Outcome of one Powell run.
#[derive(Debug, Clone, PartialEq)]
pub struct PowellOutcome {
    pub x: Vec<f64>,
    pub f: f64,
    /// Cost after each sweep; non-increasing.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn normalized(v: &[f64]) -> Option<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    (norm > 0.0 && norm.is_finite()).then(|| v.iter().map(|x| x / norm).collect())
}

/// Volume spanned by unit vectors: the product of Gram-Schmidt residual norms.
fn volume(directions: &[Vec<f64>]) -> f64 {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(directions.len());
    let mut vol = 1.0;
    for d in directions {
        let mut r = d.clone();
        for q in &basis {
            let dot: f64 = r.iter().zip(q).map(|(a, b)| a * b).sum();
            for (ri, qi) in r.iter_mut().zip(q) {
                *ri -= dot * qi;
            }
        }
        match normalized(&r) {
            Some(q) => {
                vol *= r.iter().map(|x| x * x).sum::<f64>().sqrt();
                basis.push(q);
            }
            None => return 0.0,
        }
    }
    vol
}

fn step(x: &[f64], dir: &[f64], t: f64) -> Vec<f64> {
    x.iter().zip(dir).map(|(xi, di)| xi + t * di).collect()
}

/// Powell's conjugate-direction method.
///
/// Starts from the coordinate basis. Each sweep line-minimizes along every
/// direction, then along the sweep's net displacement, which joins the set.
/// It replaces the remaining coordinate direction with the largest step, or
/// the oldest direction once no coordinate directions are left. The swap is
/// skipped when the new set would span less than [`MIN_VOLUME`], which keeps
/// the set from collapsing onto a subspace. On a quadratic the set becomes mutually conjugate after `n`
/// sweeps.
pub fn powell_minimize<F>(
    mut f: F,
    x0: &[f64],
    config: &PowellConfig,
) -> Result<PowellOutcome, OptimizeError>
where
    F: FnMut(&[f64]) -> f64,
{
    const TINY: f64 = 1e-300;
    let n = x0.len();
    let f_start = f(x0);
    if !f_start.is_finite() || x0.iter().any(|v| !v.is_finite()) {
        return Err(OptimizeError::NonFiniteObjective(x0.to_vec()));
    }
    let mut directions: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            e
        })
        .collect();
    // Leading entries are coordinate directions not yet replaced.
    let mut n_basis = n;
    let mut x = x0.to_vec();
    let mut fx = f_start;
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = n == 0;

    while iterations < config.max_iters && n > 0 {
        iterations += 1;
        let x_start = x.clone();
        let f_sweep_start = fx;
        let mut steps = vec![0.0; n];
        for (dir, taken) in directions.iter().zip(steps.iter_mut()) {
            let (t, ft) = line_search(
                |t| f(&step(&x, dir, t)),
                fx,
                config.line_tol,
                config.max_line_iters,
            );
            if ft < fx {
                x = step(&x, dir, t);
                fx = ft;
                *taken = t;
            }
        }

        let displacement: Vec<f64> = x.iter().zip(&x_start).map(|(a, b)| a - b).collect();
        let small_gain =
            2.0 * (f_sweep_start - fx) <= config.f_tol * (f_sweep_start.abs() + fx.abs()) + TINY;
        if small_gain || inf_norm(&displacement) < config.x_tol {
            trace.push(fx);
            converged = true;
            break;
        }

        if let Some(new_dir) = normalized(&displacement) {
            let (t, ft) = line_search(
                |t| f(&step(&x, &new_dir, t)),
                fx,
                config.line_tol,
                config.max_line_iters,
            );
            if ft < fx {
                x = step(&x, &new_dir, t);
                fx = ft;
            }
            // Drop the coordinate direction that contributed most to the
            // displacement, or the oldest direction once none are left.
            let drop = (0..n_basis)
                .max_by(|&i, &j| steps[i].abs().total_cmp(&steps[j].abs()).then(j.cmp(&i)))
                .unwrap_or(0);
            let mut candidate = directions.clone();
            candidate.remove(drop);
            candidate.push(new_dir);
            if volume(&candidate) >= MIN_VOLUME {
                directions = candidate;
                n_basis = n_basis.saturating_sub(1);
            }
        }
        trace.push(fx);
    }
    if n == 0 {
        trace.push(fx);
    }
    Ok(PowellOutcome {
        x,
        f: fx,
        trace,
        iterations,
        converged,
    })
}

/// Mixes a base seed with a key (restart index, season) into an independent
/// seed.
pub fn derive_seed(seed: u64, key: u64) -> u64 {
    let mut z = seed ^ key.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    /// Fitted coach skills, normalized to geometric mean 1.
    pub skills: CoachSkillVector,
    /// Objective at the optimizer's solution (before normalization).
    pub final_cost: f64,
    pub iterations: usize,
    pub converged: bool,
    pub restart_index: usize,
    pub cost_trace: Vec<f64>,
    /// Geometric mean of the raw optimum; raw skill = skill * gauge_factor.
    pub gauge_factor: f64,
}

impl FitResult {
    /// Skills as the optimizer found them, before normalization.
    pub fn raw_skills(&self) -> CoachSkillVector {
        self.skills
            .skills
            .iter()
            .map(|(k, v)| (k.clone(), v * self.gauge_factor))
            .collect()
    }
}

/// Cost plus a quadratic penalty for log-skills outside `bounds`.
pub struct PenalizedObjective<'a> {
    problem: &'a SeasonProblem,
    bounds: (f64, f64),
    weight: f64,
}

impl<'a> PenalizedObjective<'a> {
    pub fn new(problem: &'a SeasonProblem, bounds: (f64, f64), margin_sq_total: f64) -> Self {
        Self {
            problem,
            bounds,
            weight: 100.0 * (1.0 + margin_sq_total),
        }
    }

    pub fn eval(&self, log_skills: &[f64]) -> f64 {
        let (lo, hi) = self.bounds;
        let skills: Vec<f64> = log_skills.iter().map(|z| z.clamp(lo, hi).exp()).collect();
        let penalty: f64 = log_skills
            .iter()
            .map(|&z| {
                let over = (z - hi).max(0.0) + (lo - z).max(0.0);
                over * over
            })
            .sum();
        self.problem.cost(&skills) + self.weight * penalty
    }
}

/// Fits per-coach skills for one season by minimizing the margin cost over
/// log-skills with Powell's method. Runs once from all-ones skills and once
/// per restart from uniform random log-skills, keeps the lowest cost (ties go
/// to the earlier run), and normalizes the winner to geometric mean 1.
pub fn fit_season(
    observations: &[GameObservation],
    roster: &CoachRoster,
    params: &SkillModelParams,
    config: &PowellConfig,
) -> Result<FitResult, OptimizeError> {
    config.validate()?;
    params.validate()?;
    let problem = SeasonProblem::new(observations, roster, *params)?;
    if problem.dim() == 0 {
        return Err(OptimizeError::NoCoachedTeams);
    }
    let margin_sq: f64 = observations
        .iter()
        .map(|o| f64::from(o.margin).powi(2))
        .sum();
    let objective = PenalizedObjective::new(&problem, config.bounds_log, margin_sq);
    let starts = starting_points(problem.dim(), config);

    let runs: Vec<Result<PowellOutcome, OptimizeError>> = starts
        .par_iter()
        .map(|z0| powell_minimize(|z| objective.eval(z), z0, config))
        .collect();

    let mut best: Option<(usize, PowellOutcome)> = None;
    for (i, run) in runs.into_iter().enumerate() {
        let run = run?;
        let better = match &best {
            None => true,
            Some((_, b)) => run.f < b.f,
        };
        if better {
            best = Some((i, run));
        }
    }
    let (restart_index, outcome) = best.expect("at least one start");

    let mean_log = outcome.x.iter().sum::<f64>() / outcome.x.len() as f64;
    let skills: Vec<f64> = outcome.x.iter().map(|z| (z - mean_log).exp()).collect();
    Ok(FitResult {
        skills: problem.skill_vector(&skills),
        final_cost: outcome.f,
        iterations: outcome.iterations,
        converged: outcome.converged,
        restart_index,
        cost_trace: outcome.trace,
        gauge_factor: mean_log.exp(),
    })
}

/// Start 0 is the all-zero log-skill vector; start `r > 0` is drawn
/// uniformly in the log bounds from a stream keyed by `(seed, r)`.
fn starting_points(dim: usize, config: &PowellConfig) -> Vec<Vec<f64>> {
    let (lo, hi) = config.bounds_log;
    let mut starts = vec![vec![0.0; dim]];
    for r in 1..=config.restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(r as u64);
        starts.push((0..dim).map(|_| rng.random_range(lo..hi)).collect());
    }
    starts
}
