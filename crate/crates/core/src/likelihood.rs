//! Pairwise composite log-likelihood, per-unit scores and expected information.
//!
//! The objective is `pl(θ) = Σ_{i<j} Σ_t w'_ijt log p_ijt` where `w` is the
//! pair's 2×2 frequency table in period `t` and `p` the table implied by the
//! marginal effects `(f1'α_i, f1'α_j, f2'(β_i + β_j))`.
//!
//! All reductions over actors run in fixed-size chunks whose partial results
//! are summed in chunk order, so the numbers do not depend on the number of
//! worker threads.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::margins::{dale_cells, dlambda_deta_from_cells, Mat3, CELL_FLOOR};
use crate::model::{dot, ActorParams, Basis, TimeBasis};
use crate::stats::{counts_from_marginals, PanelStats};

/// Number of partner actors handled by one work item.
const CHUNK: usize = 256;

/// What a unit evaluation should compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    Loglik,
    /// Log-likelihood, score and expected information.
    Full,
}

/// Result of evaluating one actor's component `Σ_{j≠i} ℓ_ij`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitEval {
    pub loglik: f64,
    /// Gradient with respect to `(α_i, β_i)`; empty in [`EvalMode::Loglik`].
    pub score: Vec<f64>,
    /// Expected information, row-major `p × p`; empty in [`EvalMode::Loglik`].
    pub fisher: Vec<f64>,
    /// Number of cell probabilities clamped before taking logs.
    pub saturated: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TotalLoglik {
    /// Sum over unordered pairs.
    pub raw: f64,
    /// `raw / (n (n - 1))`.
    pub normalized: f64,
    pub saturated: usize,
}

/// Parameters of every actor together with cached linear predictors.
#[derive(Debug, Clone)]
pub struct FitState<'a> {
    stats: &'a PanelStats,
    basis: TimeBasis,
    params: Vec<ActorParams>,
    f1: Vec<Vec<f64>>,
    f2: Vec<Vec<f64>>,
    /// `f1(t)'α_i`, row-major `n × T`.
    eta1: Vec<f64>,
    /// `f2(t)'β_i`, row-major `n × T`.
    eta2: Vec<f64>,
    c1: Vec<u32>,
    m: Vec<u64>,
    version: u64,
}

impl<'a> FitState<'a> {
    pub fn new(stats: &'a PanelStats, basis: TimeBasis, params: Vec<ActorParams>) -> Result<Self> {
        if basis.periods() != stats.n_periods() {
            return Err(Error::Shape(format!(
                "basis has {} periods, data has {}",
                basis.periods(),
                stats.n_periods()
            )));
        }
        if params.len() != stats.n_actors() {
            return Err(Error::Shape(format!(
                "{} parameter vectors for {} actors",
                params.len(),
                stats.n_actors()
            )));
        }
        let tn = basis.periods();
        let f1 = (0..tn)
            .map(|t| basis.row(t, Basis::Participation))
            .collect::<Result<Vec<_>>>()?;
        let f2 = (0..tn)
            .map(|t| basis.row(t, Basis::Collaboration))
            .collect::<Result<Vec<_>>>()?;
        let n = stats.n_actors();
        let mut state = Self {
            stats,
            basis,
            params: Vec::with_capacity(n),
            f1,
            f2,
            eta1: vec![0.0; n * tn],
            eta2: vec![0.0; n * tn],
            c1: stats.dense_actor_counts(),
            m: stats.events_per_period().to_vec(),
            version: 0,
        };
        for (i, p) in params.into_iter().enumerate() {
            state.check_params(&p)?;
            state.write_cache(i, &p);
            state.params.push(p);
        }
        Ok(state)
    }

    /// State with every actor at the origin.
    pub fn zeros(stats: &'a PanelStats, basis: TimeBasis) -> Result<Self> {
        let params = vec![ActorParams::zeros(&basis); stats.n_actors()];
        Self::new(stats, basis, params)
    }

    pub fn stats(&self) -> &'a PanelStats {
        self.stats
    }

    pub fn basis(&self) -> &TimeBasis {
        &self.basis
    }

    pub fn params(&self) -> &[ActorParams] {
        &self.params
    }

    pub fn into_params(self) -> Vec<ActorParams> {
        self.params
    }

    pub fn n_actors(&self) -> usize {
        self.params.len()
    }

    /// Incremented on every parameter change.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn eta1(&self, i: usize, t: usize) -> f64 {
        self.eta1[i * self.basis.periods() + t]
    }

    pub fn eta2(&self, i: usize, t: usize) -> f64 {
        self.eta2[i * self.basis.periods() + t]
    }

    pub fn set_params(&mut self, i: usize, p: ActorParams) -> Result<()> {
        self.check_actor(i)?;
        self.check_params(&p)?;
        self.write_cache(i, &p);
        self.params[i] = p;
        self.version += 1;
        Ok(())
    }

    pub fn set_all(&mut self, params: Vec<ActorParams>) -> Result<()> {
        if params.len() != self.n_actors() {
            return Err(Error::Shape(format!(
                "{} parameter vectors for {} actors",
                params.len(),
                self.n_actors()
            )));
        }
        for p in &params {
            self.check_params(p)?;
        }
        for (i, p) in params.iter().enumerate() {
            self.write_cache(i, p);
        }
        self.params = params;
        self.version += 1;
        Ok(())
    }

    /// Per-period linear predictors `(f1'α, f2'β)` of a parameter vector.
    pub fn predictors(&self, p: &ActorParams) -> (Vec<f64>, Vec<f64>) {
        (
            self.f1.iter().map(|f| dot(f, &p.alpha)).collect(),
            self.f2.iter().map(|f| dot(f, &p.beta)).collect(),
        )
    }

    fn check_actor(&self, i: usize) -> Result<()> {
        if i >= self.n_actors() {
            return Err(Error::Range(format!("actor {i} outside 0..{}", self.n_actors())));
        }
        Ok(())
    }

    fn check_params(&self, p: &ActorParams) -> Result<()> {
        p.check_shape(&self.basis)?;
        if p.alpha.iter().chain(&p.beta).any(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite parameters {p:?}")));
        }
        Ok(())
    }

    fn write_cache(&mut self, i: usize, p: &ActorParams) {
        let tn = self.basis.periods();
        let (e1, e2) = self.predictors(p);
        self.eta1[i * tn..(i + 1) * tn].copy_from_slice(&e1);
        self.eta2[i * tn..(i + 1) * tn].copy_from_slice(&e2);
    }

    /// Walks partners `j` in `lo..hi` (skipping `i`) and every period with
    /// events, handing the 2×2 counts to `visit(j, t, w)`.
    fn walk_pairs(&self, i: usize, lo: usize, hi: usize, mut visit: impl FnMut(usize, usize, &[f64; 4])) {
        let tn = self.basis.periods();
        let nb = self.stats.cooccurrences(i);
        let mut k = nb.partition_point(|c| (c.other as usize) < lo);
        for j in lo..hi {
            if j == i {
                continue;
            }
            for t in 0..tn {
                let mut cij = 0u64;
                if k < nb.len() && nb[k].other as usize == j && nb[k].period as usize == t {
                    cij = nb[k].count as u64;
                    k += 1;
                }
                let m = self.m[t];
                if m == 0 {
                    continue;
                }
                let ci = self.c1[i * tn + t] as u64;
                let cj = self.c1[j * tn + t] as u64;
                let w = counts_from_marginals(m, ci, cj, cij).as_array();
                visit(j, t, &w);
            }
        }
    }

    /// Component of actor `i` with `i`'s predictors replaced by `e1`, `e2`.
    fn unit_accumulate(&self, i: usize, e1: &[f64], e2: &[f64], mode: EvalMode) -> UnitEval {
        let n = self.n_actors();
        let tn = self.basis.periods();
        let chunks: Vec<Partial> = (0..n.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                let lo = c * CHUNK;
                let hi = ((c + 1) * CHUNK).min(n);
                let mut acc = Partial::new(tn, mode);
                self.walk_pairs(i, lo, hi, |j, t, w| {
                    let ej = self.eta1[j * tn + t];
                    let eij = e2[t] + self.eta2[j * tn + t];
                    let p = dale_cells(e1[t], ej, eij);
                    acc.loglik += cell_loglik(&p, w, &mut acc.saturated);
                    if mode == EvalMode::Full {
                        let (g, info) = table_score_info(&p, w, self.m[t] as f64);
                        acc.per_t[t] += g[0];
                        acc.per_t[tn + t] += g[2];
                        acc.per_t[2 * tn + t] += info[0][0];
                        acc.per_t[3 * tn + t] += info[0][2];
                        acc.per_t[4 * tn + t] += info[2][2];
                    }
                });
                acc
            })
            .collect();
        let mut total = Partial::new(tn, mode);
        for c in &chunks {
            total.loglik += c.loglik;
            total.saturated += c.saturated;
            for (a, b) in total.per_t.iter_mut().zip(&c.per_t) {
                *a += b;
            }
        }
        let (score, fisher) = match mode {
            EvalMode::Loglik => (Vec::new(), Vec::new()),
            EvalMode::Full => self.project(&total.per_t),
        };
        UnitEval {
            loglik: total.loglik,
            score,
            fisher,
            saturated: total.saturated,
        }
    }

    /// Maps per-period sums of `∂/∂η_i`, `∂/∂η_ij` and their information
    /// entries onto the polynomial coefficients.
    fn project(&self, per_t: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let tn = self.basis.periods();
        let k1 = self.basis.order1() + 1;
        let k2 = self.basis.order2() + 1;
        let p = k1 + k2;
        let mut score = vec![0.0; p];
        let mut fisher = vec![0.0; p * p];
        for t in 0..tn {
            let (f1, f2) = (&self.f1[t], &self.f2[t]);
            let (g0, g2) = (per_t[t], per_t[tn + t]);
            let (i00, i02, i22) = (per_t[2 * tn + t], per_t[3 * tn + t], per_t[4 * tn + t]);
            for a in 0..k1 {
                score[a] += f1[a] * g0;
                for b in 0..k1 {
                    fisher[a * p + b] += f1[a] * f1[b] * i00;
                }
                for b in 0..k2 {
                    let v = f1[a] * f2[b] * i02;
                    fisher[a * p + k1 + b] += v;
                    fisher[(k1 + b) * p + a] += v;
                }
            }
            for a in 0..k2 {
                score[k1 + a] += f2[a] * g2;
                for b in 0..k2 {
                    fisher[(k1 + a) * p + k1 + b] += f2[a] * f2[b] * i22;
                }
            }
        }
        (score, fisher)
    }
}

struct Partial {
    loglik: f64,
    saturated: usize,
    per_t: Vec<f64>,
}

impl Partial {
    fn new(tn: usize, mode: EvalMode) -> Self {
        let len = if mode == EvalMode::Full { 5 * tn } else { 0 };
        Self {
            loglik: 0.0,
            saturated: 0,
            per_t: vec![0.0; len],
        }
    }
}

/// `Σ_k w_k log p_k` over cells with positive counts, clamping at [`CELL_FLOOR`].
#[inline]
pub(crate) fn cell_loglik(p: &[f64; 4], w: &[f64; 4], saturated: &mut usize) -> f64 {
    let mut ll = 0.0;
    for k in 0..4 {
        if w[k] > 0.0 {
            let c = if p[k] < CELL_FLOOR {
                *saturated += 1;
                CELL_FLOOR
            } else {
                p[k]
            };
            ll += w[k] * c.ln();
        }
    }
    ll
}

/// Gradient and expected information of `w' log p` with respect to
/// `(η_i, η_j, η_ij)` for a table `p` over `m` events.
///
/// With the log-linear design `G` (rows `00, 01, 10, 11` equal to `(0,0,0)`,
/// `(0,1,0)`, `(1,0,0)`, `(1,1,1)`) the gradient in `λ` is `G'(w - m p)` and the
/// information is `m Var(G'y)`; both are carried to `η` by `J = ∂λ/∂η'`.
#[inline]
pub(crate) fn table_score_info(p: &[f64; 4], w: &[f64; 4], m: f64) -> ([f64; 3], Mat3) {
    let j = dlambda_deta_from_cells(p);
    let r = [w[0] - m * p[0], w[1] - m * p[1], w[2] - m * p[2], w[3] - m * p[3]];
    let gl = [r[2] + r[3], r[1] + r[3], r[3]];
    let mut g = [0.0; 3];
    for (k, gk) in g.iter_mut().enumerate() {
        *gk = j[0][k] * gl[0] + j[1][k] * gl[1] + j[2][k] * gl[2];
    }
    let [p00, p01, p10, p11] = *p;
    let (pa, qa) = (p10 + p11, p00 + p01);
    let (pb, qb) = (p01 + p11, p00 + p10);
    let cross = p00 * p11 - p01 * p10;
    let il = [
        [m * pa * qa, m * cross, m * p11 * qa],
        [m * cross, m * pb * qb, m * p11 * qb],
        [m * p11 * qa, m * p11 * qb, m * p11 * (1.0 - p11)],
    ];
    let mut lj = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            lj[r][c] = (0..3).map(|k| il[r][k] * j[k][c]).sum();
        }
    }
    let mut info = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            info[r][c] = (0..3).map(|k| j[k][r] * lj[k][c]).sum();
        }
    }
    (g, info)
}

/// `ℓ_ij = Σ_t w'_ijt log p_ijt` for one unordered pair.
pub fn pair_loglik(state: &FitState<'_>, i: usize, j: usize) -> Result<f64> {
    if i == j {
        return Err(Error::Domain(format!("pair log-likelihood needs i ≠ j, got {i} twice")));
    }
    state.check_actor(i)?;
    state.check_actor(j)?;
    let tn = state.basis.periods();
    let mut ll = 0.0;
    let mut sat = 0;
    state.walk_pairs(i, j, j + 1, |_, t, w| {
        let p = dale_cells(
            state.eta1[i * tn + t],
            state.eta1[j * tn + t],
            state.eta2[i * tn + t] + state.eta2[j * tn + t],
        );
        ll += cell_loglik(&p, w, &mut sat);
    });
    Ok(ll)
}

/// `Σ_{j≠i} ℓ_ij` at the current parameters.
pub fn unit_loglik(state: &FitState<'_>, i: usize) -> Result<f64> {
    Ok(unit_eval(state, i, None, EvalMode::Loglik)?.loglik)
}

/// Gradient of [`unit_loglik`] with respect to `(α_i, β_i)`.
pub fn unit_score(state: &FitState<'_>, i: usize) -> Result<Vec<f64>> {
    Ok(unit_eval(state, i, None, EvalMode::Full)?.score)
}

/// Evaluates actor `i`'s component, optionally at trial parameters for `i`
/// with everyone else held at the state.
pub fn unit_eval(
    state: &FitState<'_>,
    i: usize,
    trial: Option<&ActorParams>,
    mode: EvalMode,
) -> Result<UnitEval> {
    state.check_actor(i)?;
    let tn = state.basis.periods();
    match trial {
        Some(p) => {
            state.check_params(p)?;
            let (e1, e2) = state.predictors(p);
            Ok(state.unit_accumulate(i, &e1, &e2, mode))
        }
        None => {
            let e1 = &state.eta1[i * tn..(i + 1) * tn];
            let e2 = &state.eta2[i * tn..(i + 1) * tn];
            Ok(state.unit_accumulate(i, e1, e2, mode))
        }
    }
}

/// Pairwise log-likelihood summed over unordered pairs.
pub fn total_loglik(state: &FitState<'_>) -> Result<TotalLoglik> {
    let n = state.n_actors();
    if n < 2 {
        return Err(Error::Domain(format!("pairwise likelihood needs two actors, got {n}")));
    }
    let tn = state.basis.periods();
    let rows: Vec<(f64, usize)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut ll = 0.0;
            let mut sat = 0;
            state.walk_pairs(i, i + 1, n, |j, t, w| {
                let p = dale_cells(
                    state.eta1[i * tn + t],
                    state.eta1[j * tn + t],
                    state.eta2[i * tn + t] + state.eta2[j * tn + t],
                );
                ll += cell_loglik(&p, w, &mut sat);
            });
            (ll, sat)
        })
        .collect();
    let raw: f64 = rows.iter().map(|r| r.0).sum();
    let saturated = rows.iter().map(|r| r.1).sum();
    Ok(TotalLoglik {
        raw,
        normalized: raw / (n * (n - 1)) as f64,
        saturated,
    })
}

/// Score and expected information of the total log-likelihood when actors
/// share parameter vectors: actor `i` uses participation group `d1[i]` and
/// collaboration group `d2[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedEval {
    pub loglik: f64,
    /// Gradient over `(α*_0, .., α*_{h1-1}, β*_0, .., β*_{h2-1})`.
    pub score: Vec<f64>,
    /// Expected information, row-major, same layout as `score`.
    pub fisher: Vec<f64>,
    pub saturated: usize,
}

/// Evaluates the total log-likelihood with its gradient and information with
/// respect to the group vectors. The state's parameters must already be the
/// ones induced by the groups.
///
/// Each pair-period contributes its 3×3 information in `(η_i, η_j, η_ij)` to a
/// per-period matrix over group slots (`η_i = f1'α*_{d1[i]}`,
/// `η_ij = f2'(β*_{d2[i]} + β*_{d2[j]})`); the slots are projected onto the
/// polynomial coefficients once at the end.
pub fn grouped_eval(
    state: &FitState<'_>,
    d1: &[usize],
    d2: &[usize],
    h1: usize,
    h2: usize,
) -> Result<GroupedEval> {
    let n = state.n_actors();
    if n < 2 {
        return Err(Error::Domain(format!("pairwise likelihood needs two actors, got {n}")));
    }
    if d1.len() != n || d2.len() != n {
        return Err(Error::Shape(format!("assignments for {} and {} actors, expected {n}", d1.len(), d2.len())));
    }
    if d1.iter().any(|g| *g >= h1) || d2.iter().any(|g| *g >= h2) {
        return Err(Error::Range("group index out of range".into()));
    }
    let tn = state.basis.periods();
    let slots = h1 + h2;
    let per_t = slots + slots * slots;
    let rows_per_chunk = 16;
    let partials: Vec<(f64, usize, Vec<f64>)> = (0..n.div_ceil(rows_per_chunk))
        .into_par_iter()
        .map(|c| {
            let mut ll = 0.0;
            let mut sat = 0;
            let mut acc = vec![0.0; tn * per_t];
            for i in c * rows_per_chunk..((c + 1) * rows_per_chunk).min(n) {
                state.walk_pairs(i, i + 1, n, |j, t, w| {
                    let p = dale_cells(
                        state.eta1[i * tn + t],
                        state.eta1[j * tn + t],
                        state.eta2[i * tn + t] + state.eta2[j * tn + t],
                    );
                    ll += cell_loglik(&p, w, &mut sat);
                    let (g, info) = table_score_info(&p, w, state.m[t] as f64);
                    let idx = [d1[i], d1[j], h1 + d2[i], h1 + d2[j]];
                    // Rows of D: η_i -> slot a, η_j -> slot b, η_ij -> slots c and e.
                    let map: [&[usize]; 3] = [&idx[0..1], &idx[1..2], &idx[2..4]];
                    let base = t * per_t;
                    for r in 0..3 {
                        for &sr in map[r] {
                            acc[base + sr] += g[r];
                            for c in 0..3 {
                                for &sc in map[c] {
                                    acc[base + slots + sr * slots + sc] += info[r][c];
                                }
                            }
                        }
                    }
                });
            }
            (ll, sat, acc)
        })
        .collect();
    let mut loglik = 0.0;
    let mut saturated = 0;
    let mut acc = vec![0.0; tn * per_t];
    for (ll, sat, a) in &partials {
        loglik += ll;
        saturated += sat;
        for (x, y) in acc.iter_mut().zip(a) {
            *x += y;
        }
    }
    let k1 = state.basis.order1() + 1;
    let k2 = state.basis.order2() + 1;
    let dim = h1 * k1 + h2 * k2;
    // Coefficient range and basis row of each slot.
    let slot_coef = |s: usize| if s < h1 { (s * k1, k1) } else { (h1 * k1 + (s - h1) * k2, k2) };
    let mut score = vec![0.0; dim];
    let mut fisher = vec![0.0; dim * dim];
    for t in 0..tn {
        let base = t * per_t;
        let row = |s: usize| if s < h1 { &state.f1[t] } else { &state.f2[t] };
        for sr in 0..slots {
            let (or, kr) = slot_coef(sr);
            let fr = row(sr);
            for a in 0..kr {
                score[or + a] += fr[a] * acc[base + sr];
            }
            for sc in 0..slots {
                let v = acc[base + slots + sr * slots + sc];
                if v == 0.0 {
                    continue;
                }
                let (oc, kc) = slot_coef(sc);
                let fc = row(sc);
                for a in 0..kr {
                    for b in 0..kc {
                        fisher[(or + a) * dim + oc + b] += fr[a] * fc[b] * v;
                    }
                }
            }
        }
    }
    Ok(GroupedEval {
        loglik,
        score,
        fisher,
        saturated,
    })
}
