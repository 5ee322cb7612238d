//! Grouping actors by their fitted profiles and the classification pairwise
//! log-likelihood.
//!
//! Participation groups share `α`, collaboration groups share `β`. Starting
//! from k-means on the fixed-effects estimates, the fit alternates between
//! reassigning single actors and maximizing over the group vectors, and never
//! lets the objective decrease.

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::FitConfig;
use crate::likelihood::{grouped_eval, total_loglik, unit_eval, EvalMode, FitState};
use crate::model::{ActorParams, TimeBasis};
use crate::stats::PanelStats;

pub const KMEANS_RESTARTS: usize = 10;
const LLOYD_MAX_ITERS: usize = 300;
/// Outer iterations of the classification fit.
pub const MAX_OUTER: usize = 100;
const GROUP_SCORING_ITERS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeans {
    /// Cluster of each point, from 0.
    pub assignments: Vec<usize>,
    pub centers: Vec<Vec<f64>>,
    pub within_ss: f64,
    /// Between-cluster over total sum of squares; 1 when all points coincide.
    pub bss_tss: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn distinct_count(points: &[Vec<f64>]) -> usize {
    let mut sorted: Vec<&Vec<f64>> = points.iter().collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    sorted.dedup();
    sorted.len()
}

/// Lloyd's algorithm from k-means++ seeding, best of [`KMEANS_RESTARTS`] runs.
///
/// When `k` exceeds the number of distinct points it is reduced to that
/// number.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeans> {
    if points.is_empty() {
        return Err(Error::Domain("k-means needs at least one point".into()));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim || p.iter().any(|v| !v.is_finite())) {
        return Err(Error::Domain("k-means points must be finite and of equal length".into()));
    }
    if k == 0 || k > points.len() {
        return Err(Error::Range(format!("k = {k} outside 1..={}", points.len())));
    }
    let distinct = distinct_count(points);
    let k = if k > distinct {
        warn!("k-means: k = {k} exceeds {distinct} distinct points, using {distinct}");
        distinct
    } else {
        k
    };
    let mut best: Option<KMeans> = None;
    for restart in 0..KMEANS_RESTARTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(restart as u64);
        let run = lloyd(points, seeding(points, k, &mut rng));
        if best.as_ref().map_or(true, |b| run.within_ss < b.within_ss) {
            best = Some(run);
        }
    }
    let mut best = best.expect("at least one restart");
    let mean = centroid(points.iter());
    let tss: f64 = points.iter().map(|p| sq_dist(p, &mean)).sum();
    best.bss_tss = if tss > 0.0 { (1.0 - best.within_ss / tss).clamp(0.0, 1.0) } else { 1.0 };
    Ok(best)
}

fn centroid<'a>(points: impl Iterator<Item = &'a Vec<f64>>) -> Vec<f64> {
    let mut sum: Vec<f64> = Vec::new();
    let mut count = 0.0;
    for p in points {
        if sum.is_empty() {
            sum = vec![0.0; p.len()];
        }
        for (s, v) in sum.iter_mut().zip(p) {
            *s += v;
        }
        count += 1.0;
    }
    sum.iter().map(|s| s / count).collect()
}

/// k-means++: first center uniform, then proportional to squared distance.
fn seeding(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centers = vec![points[rng.gen_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let u = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = d2.iter().rposition(|d| *d > 0.0).unwrap_or(0);
            for (i, d) in d2.iter().enumerate() {
                acc += d;
                if acc > u && *d > 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            break;
        };
        centers.push(points[pick].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &centers[centers.len() - 1]));
        }
    }
    centers
}

fn nearest(p: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.iter().enumerate() {
        let d = sq_dist(p, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn lloyd(points: &[Vec<f64>], mut centers: Vec<Vec<f64>>) -> KMeans {
    let k = centers.len();
    let mut assignments = vec![usize::MAX; points.len()];
    for _ in 0..LLOYD_MAX_ITERS {
        let mut changed = false;
        for (a, p) in assignments.iter_mut().zip(points) {
            let (c, _) = nearest(p, &centers);
            if *a != c {
                *a = c;
                changed = true;
            }
        }
        // An empty cluster takes the point farthest from its center.
        for c in 0..k {
            if !assignments.contains(&c) {
                let far = (0..points.len())
                    .filter(|&i| assignments.iter().filter(|&&a| a == assignments[i]).count() > 1)
                    .max_by(|&a, &b| {
                        let da = sq_dist(&points[a], &centers[assignments[a]]);
                        let db = sq_dist(&points[b], &centers[assignments[b]]);
                        da.partial_cmp(&db).unwrap().then(b.cmp(&a))
                    });
                if let Some(i) = far {
                    assignments[i] = c;
                    changed = true;
                }
            }
        }
        for (c, center) in centers.iter_mut().enumerate() {
            let members = points.iter().zip(&assignments).filter(|(_, a)| **a == c).map(|(p, _)| p);
            let m = centroid(members);
            if !m.is_empty() {
                *center = m;
            }
        }
        if !changed {
            break;
        }
    }
    let within_ss = points.iter().zip(&assignments).map(|(p, a)| sq_dist(p, &centers[*a])).sum();
    KMeans {
        assignments,
        centers,
        within_ss,
        bss_tss: 0.0,
    }
}

/// Smallest `k` whose k-means solution explains at least `threshold` of the
/// total sum of squares.
pub fn select_k(points: &[Vec<f64>], threshold: f64, seed: u64) -> Result<usize> {
    let distinct = distinct_count(points);
    for k in 1..=distinct {
        let km = kmeans(points, k, seed)?;
        debug!("select_k: k = {k}, BSS/TSS = {:.4}", km.bss_tss);
        if km.bss_tss >= threshold {
            return Ok(k);
        }
    }
    Ok(distinct.max(1))
}

/// Objective value after one step of the classification fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CplStep {
    pub iteration: usize,
    /// `init`, `assign_participation`, `assign_collaboration` or `optimize`.
    pub step: String,
    pub cpl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub alpha_star: Vec<Vec<f64>>,
    pub beta_star: Vec<Vec<f64>>,
    /// Participation group of each actor, from 0.
    pub d1: Vec<usize>,
    /// Collaboration group of each actor, from 0.
    pub d2: Vec<usize>,
    /// Classification pairwise log-likelihood, summed over unordered pairs.
    pub cpl: f64,
    pub cpl_normalized: f64,
    pub trace: Vec<CplStep>,
    pub iterations: usize,
    pub converged: bool,
}

impl ClusterModel {
    pub fn h1(&self) -> usize {
        self.alpha_star.len()
    }

    pub fn h2(&self) -> usize {
        self.beta_star.len()
    }

    /// Parameters of every actor induced by the groups.
    pub fn induced_params(&self) -> Vec<ActorParams> {
        induce(&self.alpha_star, &self.beta_star, &self.d1, &self.d2)
    }
}

fn induce(a: &[Vec<f64>], b: &[Vec<f64>], d1: &[usize], d2: &[usize]) -> Vec<ActorParams> {
    d1.iter()
        .zip(d2)
        .map(|(g1, g2)| ActorParams::new(a[*g1].clone(), b[*g2].clone()))
        .collect()
}

/// Classification fit with `h1` participation and `h2` collaboration groups,
/// initialized by k-means on the fixed-effects estimates.
pub fn fit_clustered(
    stats: &PanelStats,
    basis: &TimeBasis,
    fixed: &[ActorParams],
    h1: usize,
    h2: usize,
    cfg: &FitConfig,
) -> Result<ClusterModel> {
    cfg.validate()?;
    let n = stats.n_actors();
    if n < 2 {
        return Err(Error::Domain(format!("clustering needs at least two actors, got {n}")));
    }
    if h1 == 0 || h2 == 0 || h1 > n || h2 > n {
        return Err(Error::Range(format!("group counts ({h1}, {h2}) outside 1..={n}")));
    }
    if fixed.len() != n {
        return Err(Error::Shape(format!("{} fixed-effect vectors for {n} actors", fixed.len())));
    }
    let alphas: Vec<Vec<f64>> = fixed.iter().map(|p| p.alpha.clone()).collect();
    let betas: Vec<Vec<f64>> = fixed.iter().map(|p| p.beta.clone()).collect();
    let k1 = kmeans(&alphas, h1, cfg.seed)?;
    let k2 = kmeans(&betas, h2, cfg.seed)?;
    let bound = cfg.box_bound;
    let clamp = |v: &Vec<f64>| v.iter().map(|x| x.clamp(-bound, bound)).collect::<Vec<_>>();
    let mut fit = Classification {
        alpha: k1.centers.iter().map(clamp).collect(),
        beta: k2.centers.iter().map(clamp).collect(),
        d1: k1.assignments,
        d2: k2.assignments,
        state: FitState::zeros(stats, basis.clone())?,
        cfg,
        trace: Vec::new(),
    };
    fit.sync()?;
    let mut cpl = total_loglik(&fit.state)?.raw;
    fit.trace.push(CplStep {
        iteration: 0,
        step: "init".into(),
        cpl,
    });
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_OUTER {
        iterations += 1;
        let moved1 = fit.guarded_reassign(true, cpl, iterations, "assign_participation")?;
        cpl = fit.trace.last().map_or(cpl, |s| s.cpl);
        let moved2 = fit.guarded_reassign(false, cpl, iterations, "assign_collaboration")?;
        let before = fit.trace.last().map_or(cpl, |s| s.cpl);
        cpl = fit.optimize_groups(before)?;
        fit.trace.push(CplStep {
            iteration: iterations,
            step: "optimize".into(),
            cpl,
        });
        let gain = (cpl - before) / before.abs().max(1e-300);
        debug!("classification iteration {iterations}: cpl {cpl:.10e}, moves ({moved1}, {moved2})");
        if moved1 == 0 && moved2 == 0 && gain < cfg.tol_obj {
            converged = true;
            break;
        }
    }
    if !converged {
        warn!("classification fit stopped after {MAX_OUTER} iterations");
    }
    let total = total_loglik(&fit.state)?;
    Ok(ClusterModel {
        alpha_star: fit.alpha,
        beta_star: fit.beta,
        d1: fit.d1,
        d2: fit.d2,
        cpl: total.raw,
        cpl_normalized: total.normalized,
        trace: fit.trace,
        iterations,
        converged,
    })
}

struct Classification<'a, 'c> {
    alpha: Vec<Vec<f64>>,
    beta: Vec<Vec<f64>>,
    d1: Vec<usize>,
    d2: Vec<usize>,
    state: FitState<'a>,
    cfg: &'c FitConfig,
    trace: Vec<CplStep>,
}

impl<'a, 'c> Classification<'a, 'c> {
    fn sync(&mut self) -> Result<()> {
        self.state.set_all(induce(&self.alpha, &self.beta, &self.d1, &self.d2))
    }

    /// Reassignment step that is undone when the recomputed total falls
    /// below `prev`; moves are only made on strict unit gains, so such a
    /// fall is rounding in the summation.
    fn guarded_reassign(&mut self, participation: bool, prev: f64, iteration: usize, step: &str) -> Result<usize> {
        let saved = (self.alpha.clone(), self.beta.clone(), self.d1.clone(), self.d2.clone());
        let mut moves = self.reassign(participation)?;
        let mut cpl = total_loglik(&self.state)?.raw;
        if moves > 0 && cpl < prev {
            debug!("{step}: total fell by {:.3e}, reverting", prev - cpl);
            (self.alpha, self.beta, self.d1, self.d2) = saved;
            self.sync()?;
            moves = 0;
            cpl = total_loglik(&self.state)?.raw;
        }
        self.trace.push(CplStep {
            iteration,
            step: step.into(),
            cpl,
        });
        Ok(moves)
    }

    /// Moves each actor in turn to the group maximizing its component. The
    /// current group is kept unless another is strictly better; among equally
    /// good alternatives the lowest index wins. Returns the number of moves.
    fn reassign(&mut self, participation: bool) -> Result<usize> {
        let n = self.state.n_actors();
        let h = if participation { self.alpha.len() } else { self.beta.len() };
        let mut moves = 0;
        for i in 0..n {
            let current = if participation { self.d1[i] } else { self.d2[i] };
            let state = &self.state;
            let (alpha, beta, d1, d2) = (&self.alpha, &self.beta, &self.d1, &self.d2);
            let values = (0..h)
                .into_par_iter()
                .map(|g| {
                    let trial = if participation {
                        ActorParams::new(alpha[g].clone(), beta[d2[i]].clone())
                    } else {
                        ActorParams::new(alpha[d1[i]].clone(), beta[g].clone())
                    };
                    unit_eval(state, i, Some(&trial), EvalMode::Loglik).map(|e| e.loglik)
                })
                .collect::<Result<Vec<f64>>>()?;
            let mut best = current;
            for (g, v) in values.iter().enumerate() {
                if *v > values[best] {
                    best = g;
                }
            }
            if best != current {
                if participation {
                    self.d1[i] = best;
                } else {
                    self.d2[i] = best;
                }
                let p = ActorParams::new(self.alpha[self.d1[i]].clone(), self.beta[self.d2[i]].clone());
                self.state.set_params(i, p)?;
                moves += 1;
            }
        }
        self.reseed_empty(participation)?;
        Ok(moves)
    }

    /// An emptied group takes the actor with the lowest component among
    /// groups that have more than one member, together with a copy of that
    /// actor's current group vector; the objective is unchanged.
    fn reseed_empty(&mut self, participation: bool) -> Result<()> {
        let h = if participation { self.alpha.len() } else { self.beta.len() };
        for g in 0..h {
            let d = if participation { &self.d1 } else { &self.d2 };
            if d.contains(&g) {
                continue;
            }
            let mut sizes = vec![0usize; h];
            for &x in d.iter() {
                sizes[x] += 1;
            }
            let candidates: Vec<usize> = (0..d.len()).filter(|&i| sizes[d[i]] > 1).collect();
            let mut worst: Option<(usize, f64)> = None;
            for i in candidates {
                let v = unit_eval(&self.state, i, None, EvalMode::Loglik)?.loglik;
                if worst.map_or(true, |(_, w)| v < w) {
                    worst = Some((i, v));
                }
            }
            let Some((i, _)) = worst else { continue };
            debug!("group {g} emptied; reseeded with actor {i}");
            if participation {
                self.alpha[g] = self.alpha[self.d1[i]].clone();
                self.d1[i] = g;
            } else {
                self.beta[g] = self.beta[self.d2[i]].clone();
                self.d2[i] = g;
            }
        }
        Ok(())
    }

    fn theta(&self) -> Vec<f64> {
        self.alpha.iter().chain(&self.beta).flatten().cloned().collect()
    }

    fn set_theta(&mut self, theta: &[f64]) -> Result<()> {
        let k1 = self.alpha[0].len();
        let k2 = self.beta[0].len();
        let h1 = self.alpha.len();
        for (g, a) in self.alpha.iter_mut().enumerate() {
            a.copy_from_slice(&theta[g * k1..(g + 1) * k1]);
        }
        for (g, b) in self.beta.iter_mut().enumerate() {
            b.copy_from_slice(&theta[h1 * k1 + g * k2..h1 * k1 + (g + 1) * k2]);
        }
        self.sync()
    }

    /// Projected Fisher scoring over all group vectors jointly, accepting
    /// only steps that do not lower the objective.
    fn optimize_groups(&mut self, start: f64) -> Result<f64> {
        let (h1, h2) = (self.alpha.len(), self.beta.len());
        let bound = self.cfg.box_bound;
        let mut current = start;
        for _ in 0..GROUP_SCORING_ITERS {
            let ev = grouped_eval(&self.state, &self.d1, &self.d2, h1, h2)?;
            let theta = self.theta();
            let dim = theta.len();
            let active: Vec<bool> = (0..dim)
                .map(|r| (theta[r] >= bound && ev.score[r] > 0.0) || (theta[r] <= -bound && ev.score[r] < 0.0))
                .collect();
            let gnorm = (0..dim).filter(|&r| !active[r]).map(|r| ev.score[r].powi(2)).sum::<f64>().sqrt();
            if gnorm <= self.cfg.tol_grad {
                break;
            }
            let free: Vec<usize> = (0..dim).filter(|&r| !active[r]).collect();
            let f = DMatrix::from_fn(free.len(), free.len(), |r, c| ev.fisher[free[r] * dim + free[c]]);
            let g = DVector::from_iterator(free.len(), free.iter().map(|&r| ev.score[r]));
            let mut dir = vec![0.0; dim];
            match f.cholesky().map(|ch| ch.solve(&g)) {
                Some(d) if d.dot(&g) > 0.0 && d.iter().all(|v| v.is_finite()) => {
                    for (k, &r) in free.iter().enumerate() {
                        dir[r] = d[k];
                    }
                }
                _ => {
                    for &r in &free {
                        dir[r] = ev.score[r];
                    }
                }
            }
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..=60 {
                let trial: Vec<f64> = theta
                    .iter()
                    .zip(&dir)
                    .map(|(a, d)| (a + t * d).clamp(-bound, bound))
                    .collect();
                self.set_theta(&trial)?;
                let value = total_loglik(&self.state)?.raw;
                if value >= current {
                    accepted = trial != theta;
                    current = value;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                self.set_theta(&theta)?;
                break;
            }
            if (current - ev.loglik) <= self.cfg.tol_obj * current.abs() * 1e-3 {
                break;
            }
        }
        Ok(total_loglik(&self.state)?.raw)
    }
}

/// Counts of actors per (participation group, collaboration group).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossTable {
    pub counts: Vec<Vec<u64>>,
    pub row_totals: Vec<u64>,
    pub col_totals: Vec<u64>,
    pub total: u64,
}

pub fn cross_classification(model: &ClusterModel) -> CrossTable {
    cross_table(&model.d1, &model.d2, model.h1(), model.h2())
}

/// Cross table of two 0-based assignment vectors.
pub fn cross_table(d1: &[usize], d2: &[usize], h1: usize, h2: usize) -> CrossTable {
    let mut counts = vec![vec![0u64; h2]; h1];
    for (a, b) in d1.iter().zip(d2) {
        counts[*a][*b] += 1;
    }
    let row_totals: Vec<u64> = counts.iter().map(|r| r.iter().sum()).collect();
    let col_totals: Vec<u64> = (0..h2).map(|c| counts.iter().map(|r| r[c]).sum()).collect();
    let total = row_totals.iter().sum();
    CrossTable {
        counts,
        row_totals,
        col_totals,
        total,
    }
}

/// Share of the gap between the one-group and the fixed-effects objective
/// closed by the clustered model: `(cpl_h - cpl_1) / (pl_fixed - cpl_1)`.
pub fn improvement_ratio(cpl_h: f64, cpl_1: f64, pl_fixed: f64) -> Result<f64> {
    let denom = pl_fixed - cpl_1;
    if denom == 0.0 || !denom.is_finite() {
        return Err(Error::Undefined(format!(
            "improvement ratio undefined: fixed-effects and one-group objectives are both {pl_fixed}"
        )));
    }
    if !(pl_fixed >= cpl_h && cpl_h >= cpl_1) {
        warn!("objectives out of order: one-group {cpl_1}, clustered {cpl_h}, fixed {pl_fixed}");
    }
    Ok((cpl_h - cpl_1) / denom)
}

/// Adjusted Rand index between two partitions given as labels.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("partitions of {} and {} items", a.len(), b.len())));
    }
    let n = a.len();
    let ha = a.iter().max().map_or(0, |m| m + 1);
    let hb = b.iter().max().map_or(0, |m| m + 1);
    let t = cross_table(a, b, ha, hb);
    let c2 = |x: u64| (x * x.saturating_sub(1)) as f64 / 2.0;
    let index: f64 = t.counts.iter().flatten().map(|&x| c2(x)).sum();
    let sa: f64 = t.row_totals.iter().map(|&x| c2(x)).sum();
    let sb: f64 = t.col_totals.iter().map(|&x| c2(x)).sum();
    let total = c2(n as u64);
    let expected = if total > 0.0 { sa * sb / total } else { 0.0 };
    let max = 0.5 * (sa + sb);
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::fit_fixed_effects;
    use crate::simulator::{simulate, EventCounts, SimSpec};
    use crate::stats::{ingest_with, IngestOptions};

    /// Box–Muller draw.
    fn normal<R: Rng>(rng: &mut R) -> f64 {
        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = rng.gen();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    fn blobs(seed: u64, per: usize, sep: f64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pts = Vec::new();
        let mut labels = Vec::new();
        for c in 0..2 {
            for _ in 0..per {
                pts.push(vec![c as f64 * sep + normal(&mut rng), normal(&mut rng)]);
                labels.push(c);
            }
        }
        (pts, labels)
    }

    #[test]
    fn kmeans_trivial_cases() {
        let pts = vec![vec![0.0, 0.0], vec![10.0, 0.0], vec![0.0, 10.0]];
        let k3 = kmeans(&pts, 3, 1).unwrap();
        assert_eq!(k3.bss_tss, 1.0);
        let k1 = kmeans(&pts, 1, 1).unwrap();
        assert!(k1.bss_tss.abs() < 1e-12);
        assert!(kmeans(&pts, 0, 1).is_err());
        assert!(kmeans(&pts, 4, 1).is_err());
        let same = vec![vec![1.0, 2.0]; 4];
        let k = kmeans(&same, 3, 1).unwrap();
        assert_eq!(k.centers.len(), 1);
        assert_eq!(k.bss_tss, 1.0);
        assert_eq!(select_k(&same, 0.8, 1).unwrap(), 1);
    }

    #[test]
    fn kmeans_separates_blobs() {
        let (pts, labels) = blobs(3, 40, 10.0);
        let km = kmeans(&pts, 2, 7).unwrap();
        assert_eq!(adjusted_rand_index(&km.assignments, &labels).unwrap(), 1.0);
        assert_eq!(select_k(&pts, 0.8, 7).unwrap(), 2);
        assert_eq!(kmeans(&pts, 2, 7).unwrap(), km);
    }

    #[test]
    fn cross_classification_counts() {
        let t = cross_table(&[0, 0, 1], &[0, 1, 1], 2, 2);
        assert_eq!(t.counts, vec![vec![1, 1], vec![0, 1]]);
        assert_eq!(t.row_totals, vec![2, 1]);
        assert_eq!(t.col_totals, vec![1, 2]);
        assert_eq!(t.total, 3);
    }

    #[test]
    fn improvement_ratio_values() {
        let r = improvement_ratio(-34.916, -75.401, -33.693).unwrap();
        assert!((r - 0.9707).abs() < 1e-4, "{r}");
        assert_eq!(improvement_ratio(-3.0, -5.0, -3.0).unwrap(), 1.0);
        assert_eq!(improvement_ratio(-5.0, -5.0, -3.0).unwrap(), 0.0);
        assert!(matches!(improvement_ratio(-4.0, -3.0, -3.0), Err(Error::Undefined(_))));
    }

    #[test]
    fn ari_values() {
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[1, 1, 0, 0]).unwrap(), 1.0);
        let v = adjusted_rand_index(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap();
        assert!((v + 0.5).abs() < 1e-12, "{v}");
        assert!(adjusted_rand_index(&[0], &[0, 1]).is_err());
    }

    fn grouped_panel(n_per: usize, seed: u64) -> (PanelStats, TimeBasis, Vec<usize>, Vec<usize>) {
        let mut params = Vec::new();
        let mut g1 = Vec::new();
        let mut g2 = Vec::new();
        let mut blocks = Vec::new();
        for a in 0..2 {
            for b in 0..2 {
                let block: Vec<usize> = (params.len()..params.len() + n_per).collect();
                for _ in 0..n_per {
                    params.push(ActorParams::new(
                        vec![if a == 0 { -3.0 } else { -1.5 }, if a == 0 { 0.3 } else { -0.2 }],
                        vec![if b == 0 { 0.0 } else { 1.0 }],
                    ));
                    g1.push(a);
                    g2.push(b);
                }
                blocks.push(block);
            }
        }
        let spec = SimSpec {
            actors: None,
            periods: (1..=4).map(|t| t.to_string()).collect(),
            events_per_period: EventCounts::Constant(1500),
            order1: Some(1),
            order2: Some(0),
            params: Some(params),
            targets: None,
            blocks: Some(blocks),
        };
        let (corpus, truth) = simulate(&spec, seed, false).unwrap();
        let opts = IngestOptions {
            actors: truth.actors.clone(),
            periods: truth.period_labels.clone(),
            ..IngestOptions::default()
        };
        let stats = ingest_with(corpus.events, &opts).unwrap();
        let basis = spec.basis().unwrap();
        (stats, basis, g1, g2)
    }

    fn monotone(trace: &[CplStep]) -> bool {
        trace.windows(2).all(|w| w[1].cpl >= w[0].cpl - 1e-10)
    }

    #[test]
    fn classification_fit_recovers_groups() {
        let (stats, basis, g1, g2) = grouped_panel(5, 99);
        let cfg = FitConfig::default();
        let fixed = fit_fixed_effects(&stats, &basis, &cfg).unwrap();
        let model = fit_clustered(&stats, &basis, &fixed.params, 2, 2, &cfg).unwrap();
        assert!(monotone(&model.trace), "{:?}", model.trace);
        assert!(adjusted_rand_index(&model.d1, &g1).unwrap() >= 0.9);
        assert!(adjusted_rand_index(&model.d2, &g2).unwrap() >= 0.9);
        let one = fit_clustered(&stats, &basis, &fixed.params, 1, 1, &cfg).unwrap();
        assert!(monotone(&one.trace));
        let pl = *fixed.trace.last().unwrap();
        assert!(one.cpl <= model.cpl && model.cpl <= pl + 1e-9);
        // cpl equals the total of the induced state.
        let state = FitState::new(&stats, basis.clone(), model.induced_params()).unwrap();
        assert_eq!(total_loglik(&state).unwrap().raw, model.cpl);
        let t = cross_classification(&model);
        assert_eq!(t.total, 20);
    }

    #[test]
    fn one_group_matches_homogeneous_optimum() {
        let (stats, basis, _, _) = grouped_panel(3, 5);
        let cfg = FitConfig::default();
        let fixed = fit_fixed_effects(&stats, &basis, &cfg).unwrap();
        let one = fit_clustered(&stats, &basis, &fixed.params, 1, 1, &cfg).unwrap();
        assert_eq!(one.d1, vec![0; 12]);
        // At the optimum the grouped gradient vanishes.
        let state = FitState::new(&stats, basis, one.induced_params()).unwrap();
        let ev = grouped_eval(&state, &one.d1, &one.d2, 1, 1).unwrap();
        let g = ev.score.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(g < 1e-3, "gradient {g}");
    }

    #[test]
    fn saturated_grouping_reproduces_fixed_effects() {
        let (stats, basis, _, _) = grouped_panel(2, 17);
        let cfg = FitConfig {
            tol_obj: 1e-12,
            ..FitConfig::default()
        };
        let fixed = fit_fixed_effects(&stats, &basis, &cfg).unwrap();
        let n = stats.n_actors();
        let model = fit_clustered(&stats, &basis, &fixed.params, n, n, &cfg).unwrap();
        let pl = *fixed.trace.last().unwrap();
        assert!((model.cpl - pl).abs() <= 1e-8 * pl.abs(), "{} vs {pl}", model.cpl);
        assert!(monotone(&model.trace));
    }

    #[test]
    fn assignments_are_single_move_optimal() {
        let (stats, basis, _, _) = grouped_panel(3, 23);
        let cfg = FitConfig::default();
        let fixed = fit_fixed_effects(&stats, &basis, &cfg).unwrap();
        let model = fit_clustered(&stats, &basis, &fixed.params, 2, 2, &cfg).unwrap();
        let base = model.cpl;
        for i in 0..stats.n_actors() {
            for g in 0..model.h1() {
                let mut d1 = model.d1.clone();
                d1[i] = g;
                let p = induce(&model.alpha_star, &model.beta_star, &d1, &model.d2);
                let v = total_loglik(&FitState::new(&stats, basis.clone(), p).unwrap()).unwrap().raw;
                assert!(v <= base + 1e-8 * base.abs(), "moving {i} to {g}: {v} > {base}");
            }
        }
    }
}
