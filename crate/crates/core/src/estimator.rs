//! Fixed-effects fitting by cyclic per-actor maximization of the pairwise
//! log-likelihood.
//!
//! Each actor's `(α_i, β_i)` is updated with everyone else held fixed, by
//! projected Fisher scoring inside the box `[-B, B]` with a backtracking line
//! search that only accepts steps that do not lower the objective.

use std::time::Instant;

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::{total_loglik, unit_eval, EvalMode, FitState};
use crate::margins::expit;
use crate::model::{dot, ActorParams, Basis, TimeBasis, BOX_BOUND};
use crate::stats::PanelStats;

/// Order in which actors are updated within a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepOrder {
    /// Ascending index, each update visible immediately.
    GaussSeidel,
    /// All actors from the same snapshot, updates applied together.
    Jacobi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Stop when the relative objective gain of a sweep falls below this.
    pub tol_obj: f64,
    /// Projected-gradient norm at which a per-actor solve stops.
    pub tol_grad: f64,
    pub max_sweeps: usize,
    pub box_bound: f64,
    pub seed: u64,
    pub sweep_order: SweepOrder,
    /// Scoring iterations allowed per actor per sweep.
    pub max_unit_iters: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            tol_obj: 1e-8,
            tol_grad: 1e-6,
            max_sweeps: 100,
            box_bound: BOX_BOUND,
            seed: 0,
            sweep_order: SweepOrder::GaussSeidel,
            max_unit_iters: 50,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol_obj > 0.0 && self.tol_grad > 0.0) {
            return Err(Error::Validation("tolerances must be positive".into()));
        }
        if self.max_sweeps < 1 || self.max_unit_iters < 1 {
            return Err(Error::Validation("iteration caps must be at least 1".into()));
        }
        if !(self.box_bound > 0.0 && self.box_bound.is_finite()) {
            return Err(Error::Validation(format!("invalid box bound {}", self.box_bound)));
        }
        Ok(())
    }
}

/// Outcome of the last update of one actor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActorFlag {
    Converged,
    /// Stationary up to coordinates held at the box.
    BoundActive,
    /// No events at all, or never sharing an event with anyone.
    Degenerate,
    /// Line search could not find a non-decreasing step.
    Stalled,
    /// Iteration cap reached with the gradient still above tolerance.
    MaxIter,
}

impl ActorFlag {
    pub fn as_str(&self) -> &'static str {
        match self {
            ActorFlag::Converged => "converged",
            ActorFlag::BoundActive => "bound_active",
            ActorFlag::Degenerate => "degenerate",
            ActorFlag::Stalled => "stalled",
            ActorFlag::MaxIter => "max_iter",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub params: Vec<ActorParams>,
    /// Raw pairwise log-likelihood at the start and after every sweep.
    pub trace: Vec<f64>,
    pub normalized: f64,
    pub flags: Vec<ActorFlag>,
    pub sweeps: usize,
    pub converged: bool,
    pub saturated: usize,
    /// Wall time of each sweep in seconds.
    #[serde(skip)]
    pub sweep_seconds: Vec<f64>,
}

/// Result of one per-actor solve.
#[derive(Debug, Clone)]
pub struct UnitSolve {
    pub params: ActorParams,
    pub flag: ActorFlag,
    pub iterations: usize,
    pub loglik_before: f64,
    pub loglik_after: f64,
    pub grad_norm: f64,
}

/// Starting values: `α_i` maximizes the independent Bernoulli likelihood of
/// the actor's participation counts, `β_i = 0`. Actors in no event get the
/// intercept at `-box_bound` and are reported as degenerate.
pub fn init_params(
    stats: &PanelStats,
    basis: &TimeBasis,
    box_bound: f64,
) -> Result<(Vec<ActorParams>, Vec<bool>)> {
    if basis.periods() != stats.n_periods() {
        return Err(Error::Shape(format!(
            "basis has {} periods, data has {}",
            basis.periods(),
            stats.n_periods()
        )));
    }
    let rows = (0..basis.periods())
        .map(|t| basis.row(t, Basis::Participation))
        .collect::<Result<Vec<_>>>()?;
    let m = stats.events_per_period();
    let totals = stats.actor_totals();
    let mut params = Vec::with_capacity(stats.n_actors());
    let mut degenerate = Vec::with_capacity(stats.n_actors());
    for (i, total) in totals.iter().enumerate() {
        let mut p = ActorParams::zeros(basis);
        if *total == 0 {
            p.alpha[0] = -box_bound;
            params.push(p);
            degenerate.push(true);
            continue;
        }
        let counts: Vec<f64> = (0..basis.periods()).map(|t| stats.c1(i, t) as f64).collect();
        p.alpha = bernoulli_newton(&rows, &counts, m, box_bound);
        params.push(p);
        degenerate.push(stats.is_isolated(i));
    }
    Ok((params, degenerate))
}

fn bernoulli_newton(rows: &[Vec<f64>], counts: &[f64], m: &[u64], bound: f64) -> Vec<f64> {
    let k = rows[0].len();
    let objective = |a: &[f64]| -> f64 {
        rows.iter()
            .zip(counts)
            .zip(m)
            .map(|((f, c), m)| {
                let eta = dot(f, a);
                c * eta - *m as f64 * crate::margins::softplus(eta)
            })
            .sum()
    };
    let mut a = vec![0.0; k];
    let mut fa = objective(&a);
    for _ in 0..50 {
        let mut g = vec![0.0; k];
        let mut h = vec![0.0; k * k];
        for ((f, c), m) in rows.iter().zip(counts).zip(m) {
            let mu = expit(dot(f, &a));
            let m = *m as f64;
            for r in 0..k {
                g[r] += f[r] * (c - m * mu);
                for s in 0..k {
                    h[r * k + s] += m * mu * (1.0 - mu) * f[r] * f[s];
                }
            }
        }
        let step = match newton_direction(&h, &g, k) {
            Some(d) => d,
            None => break,
        };
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let trial: Vec<f64> = a.iter().zip(&step).map(|(x, d)| (x + t * d).clamp(-bound, bound)).collect();
            let ft = objective(&trial);
            if ft >= fa {
                moved = trial != a;
                a = trial;
                fa = ft;
                break;
            }
            t *= 0.5;
        }
        if !moved || step.iter().all(|d| d.abs() * t < 1e-12) {
            break;
        }
    }
    a
}

/// Solves `H d = g` for symmetric positive semi-definite `H`, adding a ridge
/// when the Cholesky factorization fails.
fn newton_direction(h: &[f64], g: &[f64], k: usize) -> Option<Vec<f64>> {
    if k == 0 {
        return Some(Vec::new());
    }
    let hm = DMatrix::from_row_slice(k, k, h);
    let gv = DVector::from_column_slice(g);
    let scale = (0..k).map(|r| hm[(r, r)].abs()).fold(0.0f64, f64::max).max(1e-300);
    let mut ridge = 0.0;
    for _ in 0..20 {
        let mut a = hm.clone();
        for r in 0..k {
            a[(r, r)] += ridge;
        }
        if let Some(ch) = a.cholesky() {
            let d = ch.solve(&gv);
            if d.iter().all(|v| v.is_finite()) {
                return Some(d.iter().cloned().collect());
            }
        }
        ridge = if ridge == 0.0 { scale * 1e-12 } else { ridge * 100.0 };
    }
    None
}

/// Maximizes actor `i`'s component with everyone else fixed. Never returns
/// parameters with a lower component value than the current ones.
pub fn solve_unit(state: &FitState<'_>, i: usize, cfg: &FitConfig) -> Result<UnitSolve> {
    let basis = state.basis().clone();
    let bound = cfg.box_bound;
    let start = state.params()[i].clone();
    let mut x: Vec<f64> = start.to_vec().iter().map(|v| v.clamp(-bound, bound)).collect();
    let mut cur = ActorParams::from_slice(&x, &basis)?;
    let mut eval = unit_eval(state, i, Some(&cur), EvalMode::Full)?;
    let before = unit_eval(state, i, None, EvalMode::Loglik)?.loglik;
    if eval.loglik < before {
        // Clamping the start into the box lowered the objective; keep the
        // original point as the reference.
        x = start.to_vec();
        cur = start.clone();
        eval = unit_eval(state, i, None, EvalMode::Full)?;
    }
    let k = x.len();
    let mut flag = ActorFlag::MaxIter;
    let mut iterations = 0;
    let mut grad_norm = f64::INFINITY;
    let mut last_gain = f64::INFINITY;
    while iterations < cfg.max_unit_iters {
        let g = &eval.score;
        let active: Vec<bool> = (0..k)
            .map(|r| (x[r] >= bound && g[r] > 0.0) || (x[r] <= -bound && g[r] < 0.0))
            .collect();
        let prev_grad = grad_norm;
        grad_norm = (0..k).filter(|&r| !active[r]).map(|r| g[r] * g[r]).sum::<f64>().sqrt();
        // The last step gained nothing measurable and the gradient stopped
        // shrinking: stationary to working precision.
        let stagnant = last_gain <= 1e-13 * eval.loglik.abs().max(1.0) && grad_norm > 0.5 * prev_grad;
        if grad_norm <= cfg.tol_grad || stagnant {
            flag = if active.iter().any(|a| *a) {
                ActorFlag::BoundActive
            } else {
                ActorFlag::Converged
            };
            break;
        }
        iterations += 1;
        let free: Vec<usize> = (0..k).filter(|&r| !active[r]).collect();
        let hf: Vec<f64> = free
            .iter()
            .flat_map(|&r| free.iter().map(move |&s| (r, s)))
            .map(|(r, s)| eval.fisher[r * k + s])
            .collect();
        let gf: Vec<f64> = free.iter().map(|&r| g[r]).collect();
        let mut dir = vec![0.0; k];
        match newton_direction(&hf, &gf, free.len()) {
            Some(d) if d.iter().zip(&gf).map(|(a, b)| a * b).sum::<f64>() > 0.0 => {
                for (r, v) in free.iter().zip(d) {
                    dir[*r] = v;
                }
            }
            _ => {
                for &r in &free {
                    dir[r] = g[r];
                }
            }
        }
        let mut t = 1.0;
        let mut accepted = None;
        let slope: f64 = dir.iter().zip(g).map(|(a, b)| a * b).sum();
        let resolution = 1e-13 * eval.loglik.abs().max(1.0);
        let ulp = f64::EPSILON * eval.loglik.abs().max(1.0);
        for _ in 0..=60 {
            if t < 1.0 && t * slope <= ulp {
                // Shorter steps cannot move the objective by one ulp.
                break;
            }
            let trial: Vec<f64> = x
                .iter()
                .zip(&dir)
                .map(|(a, d)| (a + t * d).clamp(-bound, bound))
                .collect();
            let tp = ActorParams::from_slice(&trial, &basis)?;
            let ll = unit_eval(state, i, Some(&tp), EvalMode::Loglik)?.loglik;
            if ll >= eval.loglik {
                accepted = Some((trial, tp));
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some((trial, tp)) => {
                let unchanged = trial == x;
                x = trial;
                cur = tp;
                let prev = eval.loglik;
                eval = unit_eval(state, i, Some(&cur), EvalMode::Full)?;
                last_gain = eval.loglik - prev;
                if unchanged {
                    flag = ActorFlag::Stalled;
                    break;
                }
            }
            None => {
                // A Newton gain below the resolution of the objective means
                // the point is stationary to working precision.
                flag = if 0.5 * slope <= resolution {
                    ActorFlag::Converged
                } else {
                    ActorFlag::Stalled
                };
                break;
            }
        }
    }
    Ok(UnitSolve {
        params: cur,
        flag,
        iterations,
        loglik_before: before,
        loglik_after: eval.loglik,
        grad_norm,
    })
}

/// Cyclic per-actor maximization of the pairwise log-likelihood.
pub fn fit_fixed_effects(stats: &PanelStats, basis: &TimeBasis, cfg: &FitConfig) -> Result<FitResult> {
    let (params, degenerate) = init_params(stats, basis, cfg.box_bound)?;
    fit_from(stats, basis, cfg, params, &degenerate)
}

/// Same as [`fit_fixed_effects`] from given starting values.
pub fn fit_from(
    stats: &PanelStats,
    basis: &TimeBasis,
    cfg: &FitConfig,
    params: Vec<ActorParams>,
    degenerate: &[bool],
) -> Result<FitResult> {
    cfg.validate()?;
    let n = stats.n_actors();
    if n < 2 {
        return Err(Error::Domain(format!("fitting needs at least two actors, got {n}")));
    }
    let mut state = FitState::new(stats, basis.clone(), params)?;
    let mut current = total_loglik(&state)?;
    let mut trace = vec![current.raw];
    let mut flags = vec![ActorFlag::MaxIter; n];
    let mut sweep_seconds = Vec::new();
    let mut converged = false;
    let mut sweeps = 0;
    while sweeps < cfg.max_sweeps {
        sweeps += 1;
        let clock = Instant::now();
        let before = state.params().to_vec();
        match cfg.sweep_order {
            SweepOrder::GaussSeidel => gauss_seidel_sweep(&mut state, cfg, &mut flags)?,
            SweepOrder::Jacobi => {
                if !jacobi_sweep(&mut state, cfg, &mut flags, current.raw)? {
                    debug!("sweep {sweeps}: simultaneous update rejected, falling back to sequential");
                    gauss_seidel_sweep(&mut state, cfg, &mut flags)?;
                }
            }
        }
        sweep_seconds.push(clock.elapsed().as_secs_f64());
        let next = total_loglik(&state)?;
        if next.raw < current.raw {
            // Every accepted actor update is non-decreasing, so a lower total
            // is rounding in the summation: the point is stationary.
            debug!("sweep {sweeps}: total fell by {:.3e}, reverting", current.raw - next.raw);
            state.set_all(before)?;
            trace.push(current.raw);
            converged = true;
            break;
        }
        let gain = (next.raw - current.raw) / current.raw.abs().max(1e-300);
        debug!("sweep {sweeps}: pl = {:.10e}, relative gain {gain:.3e}", next.raw);
        trace.push(next.raw);
        current = next;
        if gain < cfg.tol_obj {
            converged = true;
            break;
        }
    }
    if !converged {
        warn!("no convergence after {} sweeps", cfg.max_sweeps);
    }
    for (f, d) in flags.iter_mut().zip(degenerate) {
        if *d {
            *f = ActorFlag::Degenerate;
        }
    }
    Ok(FitResult {
        normalized: current.normalized,
        saturated: current.saturated,
        params: state.into_params(),
        trace,
        flags,
        sweeps,
        converged,
        sweep_seconds,
    })
}

fn gauss_seidel_sweep(state: &mut FitState<'_>, cfg: &FitConfig, flags: &mut [ActorFlag]) -> Result<()> {
    for i in 0..state.n_actors() {
        let s = solve_unit(state, i, cfg)?;
        flags[i] = s.flag;
        if s.loglik_after > s.loglik_before {
            state.set_params(i, s.params)?;
        }
    }
    Ok(())
}

/// Returns false, leaving the state untouched, when the simultaneous update
/// would lower the objective.
fn jacobi_sweep(
    state: &mut FitState<'_>,
    cfg: &FitConfig,
    flags: &mut [ActorFlag],
    current: f64,
) -> Result<bool> {
    let snapshot: &FitState<'_> = state;
    let solved = (0..snapshot.n_actors())
        .into_par_iter()
        .map(|i| solve_unit(snapshot, i, cfg))
        .collect::<Result<Vec<_>>>()?;
    let old = state.params().to_vec();
    let new: Vec<ActorParams> = solved.iter().map(|s| s.params.clone()).collect();
    state.set_all(new)?;
    if total_loglik(state)?.raw < current {
        state.set_all(old)?;
        return Ok(false);
    }
    for (f, s) in flags.iter_mut().zip(&solved) {
        *f = s.flag;
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihood::tests::{random_corpus, registered};
    use crate::likelihood::{unit_score, unit_loglik};
    use crate::margins::expit;
    use crate::stats::{ingest, ingest_with, EventRecord, IngestOptions};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn logit(p: f64) -> f64 {
        (p / (1.0 - p)).ln()
    }

    fn single_pair() -> PanelStats {
        let mut ev = Vec::new();
        let mut push = |actors: Vec<&str>| {
            let id = format!("e{}", ev.len());
            ev.push(EventRecord::new(id, "1", actors));
        };
        for _ in 0..6 {
            push(vec![]);
        }
        push(vec!["b"]);
        push(vec!["a"]);
        push(vec!["a"]);
        push(vec!["a", "b"]);
        ingest(ev).unwrap()
    }

    #[test]
    fn init_recovers_empirical_logit() {
        let mut ev = Vec::new();
        for t in 0..3 {
            for e in 0..10 {
                let actors = if e < 2 { vec!["a"] } else { vec!["b"] };
                ev.push(EventRecord::new(format!("{t}_{e}"), t.to_string(), actors));
            }
        }
        let stats = ingest(ev).unwrap();
        let basis = TimeBasis::new(stats.period_labels().to_vec(), 0, 0).unwrap();
        let (p, deg) = init_params(&stats, &basis, BOX_BOUND).unwrap();
        assert!((p[0].alpha[0] - logit(0.2)).abs() < 1e-10);
        assert!((p[1].alpha[0] - logit(0.8)).abs() < 1e-10);
        assert_eq!(p[0].beta, vec![0.0]);
        assert_eq!(deg, vec![true, true]);
    }

    #[test]
    fn init_clamps_silent_actor() {
        let opts = IngestOptions {
            actors: vec!["ghost".into()],
            ..IngestOptions::default()
        };
        let stats = ingest_with(vec![EventRecord::new("e", "1", vec!["a"])], &opts).unwrap();
        let basis = TimeBasis::indexed(1, 2, 2).unwrap();
        let (p, deg) = init_params(&stats, &basis, BOX_BOUND).unwrap();
        assert_eq!(p[0].alpha, vec![-BOX_BOUND, 0.0, 0.0]);
        assert!(deg[0]);
    }

    #[test]
    fn saturated_pair_reproduces_empirical_effects() {
        let stats = single_pair();
        let basis = TimeBasis::indexed(1, 0, 0).unwrap();
        let cfg = FitConfig {
            tol_obj: 1e-14,
            tol_grad: 1e-10,
            ..FitConfig::default()
        };
        let fit = fit_fixed_effects(&stats, &basis, &cfg).unwrap();
        let a = &fit.params[stats.actor_index("a").unwrap()];
        let b = &fit.params[stats.actor_index("b").unwrap()];
        assert!((a.alpha[0] - logit(0.3)).abs() < 1e-7, "{a:?}");
        assert!((b.alpha[0] - logit(0.2)).abs() < 1e-7, "{b:?}");
        assert!((a.beta[0] + b.beta[0] - 3f64.ln()).abs() < 1e-7);
        assert!(fit.converged);
    }

    #[test]
    fn optimal_state_is_a_fixed_point() {
        let stats = single_pair();
        let basis = TimeBasis::indexed(1, 0, 0).unwrap();
        let half = 3f64.ln() / 2.0;
        let mut params = vec![
            ActorParams::new(vec![logit(0.3)], vec![half]),
            ActorParams::new(vec![logit(0.2)], vec![half]),
        ];
        if stats.actor_index("a") == Some(1) {
            params.swap(0, 1);
        }
        let state = FitState::new(&stats, basis, params.clone()).unwrap();
        for i in 0..2 {
            let s = solve_unit(&state, i, &FitConfig::default()).unwrap();
            for (x, y) in s.params.to_vec().iter().zip(params[i].to_vec()) {
                assert!((x - y).abs() < 1e-8);
            }
            assert!(s.loglik_after >= s.loglik_before);
        }
    }

    fn random_problem(seed: u64, n: usize) -> (PanelStats, TimeBasis) {
        let events = random_corpus(seed, n, 4, 150);
        let stats = ingest_with(events, &registered(n)).unwrap();
        let basis = TimeBasis::new(stats.period_labels().to_vec(), 2, 1).unwrap();
        (stats, basis)
    }

    #[test]
    fn solve_unit_reaches_gradient_tolerance() {
        let cfg = FitConfig::default();
        for seed in 0..10 {
            let (stats, basis) = random_problem(seed, 6);
            let (params, _) = init_params(&stats, &basis, cfg.box_bound).unwrap();
            let state = FitState::new(&stats, basis, params).unwrap();
            let i = seed as usize % 6;
            let s = solve_unit(&state, i, &cfg).unwrap();
            assert!(s.loglik_after >= s.loglik_before);
            match s.flag {
                ActorFlag::Converged if s.grad_norm > cfg.tol_grad => {
                    // Stationary to working precision: a full Newton step
                    // would not move the objective measurably.
                    let e = unit_eval(&state, i, Some(&s.params), EvalMode::Full).unwrap();
                    let k = e.score.len();
                    let d = newton_direction(&e.fisher, &e.score, k).unwrap();
                    let gain = 0.5 * dot(&d, &e.score);
                    assert!(gain <= 1e-13 * e.loglik.abs(), "seed {seed}: gain {gain:e}, grad {}", s.grad_norm);
                    assert!(s.grad_norm <= 1e3 * cfg.tol_grad, "seed {seed}: grad {}", s.grad_norm);
                }
                ActorFlag::Converged => {}
                ActorFlag::BoundActive => {}
                other => panic!("seed {seed}: unexpected flag {other:?}, grad {}", s.grad_norm),
            }
        }
    }

    #[test]
    fn traces_are_monotone_and_reproducible() {
        for seed in 0..4 {
            let (stats, basis) = random_problem(40 + seed, 7);
            let mut cfg = FitConfig::default();
            let a = fit_fixed_effects(&stats, &basis, &cfg).unwrap();
            assert!(a.trace.windows(2).all(|w| w[1] >= w[0] - 1e-10), "{:?}", a.trace);
            let b = fit_fixed_effects(&stats, &basis, &cfg).unwrap();
            assert_eq!(
                a.trace.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                b.trace.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
            cfg.sweep_order = SweepOrder::Jacobi;
            let j = fit_fixed_effects(&stats, &basis, &cfg).unwrap();
            assert!(j.trace.windows(2).all(|w| w[1] >= w[0] - 1e-10), "{:?}", j.trace);
            assert!((j.trace.last().unwrap() - a.trace.last().unwrap()).abs() < 1e-4 * a.trace[0].abs());
        }
    }

    #[test]
    fn fitted_state_is_a_local_maximum() {
        let (stats, basis) = random_problem(77, 6);
        let cfg = FitConfig { tol_obj: 1e-13, ..FitConfig::default() };
        let fit = fit_fixed_effects(&stats, &basis, &cfg).unwrap();
        let mut state = FitState::new(&stats, basis.clone(), fit.params.clone()).unwrap();
        let base = total_loglik(&state).unwrap().raw;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for i in 0..6 {
            if fit.flags[i] != ActorFlag::Converged {
                continue;
            }
            let g = unit_score(&state, i).unwrap();
            assert!(g.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-3);
            for _ in 0..5 {
                let x: Vec<f64> = fit.params[i]
                    .to_vec()
                    .iter()
                    .map(|v| v + rng.gen_range(-1e-2..1e-2))
                    .collect();
                state.set_params(i, ActorParams::from_slice(&x, &basis).unwrap()).unwrap();
                assert!(total_loglik(&state).unwrap().raw <= base + 1e-9);
            }
            state.set_params(i, fit.params[i].clone()).unwrap();
        }
    }

    #[test]
    fn relabeling_permutes_estimates() {
        let events = random_corpus(5, 6, 3, 200);
        let reversed: Vec<EventRecord> = events
            .iter()
            .map(|e| EventRecord::new(e.event_id.clone(), e.time_label.clone(), e.actors.iter().rev().cloned()))
            .collect();
        let opts_rev = IngestOptions {
            actors: (0..6).rev().map(|k| format!("a{k}")).collect(),
            ..IngestOptions::default()
        };
        let s1 = ingest_with(events, &registered(6)).unwrap();
        let s2 = ingest_with(reversed, &opts_rev).unwrap();
        let basis = TimeBasis::new(s1.period_labels().to_vec(), 1, 1).unwrap();
        let cfg = FitConfig {
            tol_obj: 1e-13,
            tol_grad: 1e-9,
            max_sweeps: 500,
            ..FitConfig::default()
        };
        let f1 = fit_fixed_effects(&s1, &basis, &cfg).unwrap();
        let f2 = fit_fixed_effects(&s2, &basis, &cfg).unwrap();
        for k in 0..6 {
            let other = s2.actor_index(&format!("a{k}")).unwrap();
            let (x, y) = (f1.params[k].to_vec(), f2.params[other].to_vec());
            for (a, b) in x.iter().zip(&y) {
                assert!((a - b).abs() < 1e-3, "actor {k}: {x:?} vs {y:?}");
            }
        }
    }

    #[test]
    fn rejects_bad_config_and_tiny_panels() {
        let stats = single_pair();
        let basis = TimeBasis::indexed(1, 0, 0).unwrap();
        let cfg = FitConfig { tol_obj: 0.0, ..FitConfig::default() };
        assert!(matches!(fit_fixed_effects(&stats, &basis, &cfg), Err(Error::Validation(_))));
        let one = ingest(vec![EventRecord::new("e", "1", vec!["a"])]).unwrap();
        assert!(matches!(
            fit_fixed_effects(&one, &basis, &FitConfig::default()),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn unit_component_never_decreases() {
        let (stats, basis) = random_problem(123, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params: Vec<ActorParams> = (0..5)
            .map(|_| {
                let x: Vec<f64> = (0..basis.param_len()).map(|_| rng.gen_range(-3.0..3.0)).collect();
                ActorParams::from_slice(&x, &basis).unwrap()
            })
            .collect();
        let state = FitState::new(&stats, basis, params).unwrap();
        for i in 0..5 {
            let before = unit_loglik(&state, i).unwrap();
            let s = solve_unit(&state, i, &FitConfig::default()).unwrap();
            assert!(s.loglik_after >= before);
            assert!(expit(s.params.alpha[0]).is_finite());
        }
    }
}
