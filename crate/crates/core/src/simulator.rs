//! Exact joint distributions with prescribed first- and second-order marginal
//! effects, and event sampling from them.
//!
//! The joint is completed as a quadratic exponential family: the log-linear
//! interactions of order three and higher are zero. Its order-two parameters
//! are found by Newton's method on the (concave) moment-matching problem: the
//! targets `(η_i, η_ij)` fix every marginal `P(z_i = 1)` and every bivariate
//! `P(z_i = z_j = 1)` through the Dale inversion, and the family attaining
//! those moments is unique.
//!
//! States are count vectors over exchangeable blocks of actors. With one actor
//! per block this is the full `2^n` table, in lexicographic order of `z` with
//! `z_1` the most significant digit; larger blocks keep the state space
//! polynomial in block size when actors within a block share their effects.

use std::collections::BTreeMap;

use log::debug;
use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::margins::{dale_cells, table_to_marginal, BivariateTable};
use crate::model::{dot, ActorParams, Basis, TimeBasis};
use crate::stats::EventRecord;

/// Largest actor count for the explicit `2^n` table.
pub const MAX_EXACT_ACTORS: usize = 12;
/// Largest number of lumped states a block joint may enumerate.
pub const MAX_STATES: usize = 1 << 20;
/// Largest tolerated `|η - target|` after fitting a joint.
pub const FIT_TOL: f64 = 1e-10;
const MAX_NEWTON: usize = 200;

/// First- and second-order marginal effects for `n` actors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectTargets {
    /// Marginal logits `η_i`.
    pub eta: Vec<f64>,
    /// Symmetric `n × n` matrix of log-odds ratios; the diagonal is ignored.
    pub eta_pair: Vec<Vec<f64>>,
}

impl EffectTargets {
    pub fn new(eta: Vec<f64>, eta_pair: Vec<Vec<f64>>) -> Result<Self> {
        let t = Self { eta, eta_pair };
        t.validate()?;
        Ok(t)
    }

    /// Targets implied by actor trajectories at period `t`.
    pub fn from_params(params: &[ActorParams], basis: &TimeBasis, t: usize) -> Result<Self> {
        let f1 = basis.row(t, Basis::Participation)?;
        let f2 = basis.row(t, Basis::Collaboration)?;
        for p in params {
            p.check_shape(basis)?;
        }
        let eta = params.iter().map(|p| dot(&f1, &p.alpha)).collect();
        let tend: Vec<f64> = params.iter().map(|p| dot(&f2, &p.beta)).collect();
        let n = params.len();
        let eta_pair = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 0.0 } else { tend[i] + tend[j] }).collect())
            .collect();
        Self::new(eta, eta_pair)
    }

    pub fn n(&self) -> usize {
        self.eta.len()
    }

    fn validate(&self) -> Result<()> {
        let n = self.eta.len();
        if self.eta_pair.len() != n || self.eta_pair.iter().any(|r| r.len() != n) {
            return Err(Error::Shape(format!("pair effects must be {n} × {n}")));
        }
        if self.eta.iter().chain(self.eta_pair.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite target effect".into()));
        }
        for i in 0..n {
            for j in 0..i {
                if (self.eta_pair[i][j] - self.eta_pair[j][i]).abs() > 1e-12 {
                    return Err(Error::Validation(format!("pair effects not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(())
    }
}

/// Full joint distribution of `n ≤ 12` binary indicators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointTable {
    pub n: usize,
    /// `2^n` probabilities; bit `n - 1 - k` of the index is `z_{k+1}`.
    pub probs: Vec<f64>,
}

impl JointTable {
    pub fn new(n: usize, probs: Vec<f64>) -> Result<Self> {
        if !(1..=MAX_EXACT_ACTORS).contains(&n) || probs.len() != 1 << n {
            return Err(Error::Shape(format!("{} cells for {n} actors", probs.len())));
        }
        if probs.iter().any(|p| !(*p >= 0.0)) || (probs.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::Domain("joint cells must be nonnegative and sum to one".into()));
        }
        Ok(Self { n, probs })
    }

    /// Value of `z_k` in configuration `s`.
    pub fn bit(&self, s: usize, k: usize) -> bool {
        (s >> (self.n - 1 - k)) & 1 == 1
    }
}

/// Contrast and marginalization matrices with `η = C log(M p)`.
#[derive(Debug, Clone)]
pub struct MarginalMaps {
    pub n: usize,
    /// Contrast matrix, one row per effect: `n` logits then the pairs
    /// `(i, j)`, `i < j`, in lexicographic order.
    pub c: DMatrix<f64>,
    /// Support of each 0/1 row of `M`: per actor the cells with `z_i = 0`
    /// and `z_i = 1`, then per pair the cells with `(z_i, z_j) = 00, 01, 10, 11`.
    pub m_rows: Vec<Vec<usize>>,
}

impl MarginalMaps {
    /// Dense `M`.
    pub fn m_matrix(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.m_rows.len(), 1 << self.n);
        for (r, cols) in self.m_rows.iter().enumerate() {
            for &c in cols {
                m[(r, c)] = 1.0;
            }
        }
        m
    }

    /// `C log(M p)`.
    pub fn effects(&self, probs: &[f64]) -> Result<Vec<f64>> {
        if probs.len() != 1 << self.n {
            return Err(Error::Shape(format!("{} cells for {} actors", probs.len(), self.n)));
        }
        let logs = DVector::from_iterator(
            self.m_rows.len(),
            self.m_rows.iter().map(|cols| cols.iter().map(|&c| probs[c]).sum::<f64>().ln()),
        );
        Ok((&self.c * logs).iter().cloned().collect())
    }
}

pub fn build_marginal_maps(n: usize) -> Result<MarginalMaps> {
    if !(2..=MAX_EXACT_ACTORS).contains(&n) {
        return Err(Error::Range(format!("marginal maps need 2 ≤ n ≤ {MAX_EXACT_ACTORS}, got {n}")));
    }
    let cells = 1usize << n;
    let bit = |s: usize, k: usize| (s >> (n - 1 - k)) & 1;
    let pairs = n * (n - 1) / 2;
    let mut m_rows = Vec::with_capacity(2 * n + 4 * pairs);
    for i in 0..n {
        for v in 0..2 {
            m_rows.push((0..cells).filter(|&s| bit(s, i) == v).collect());
        }
    }
    for i in 0..n {
        for j in i + 1..n {
            for (a, b) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                m_rows.push((0..cells).filter(|&s| bit(s, i) == a && bit(s, j) == b).collect());
            }
        }
    }
    let mut c = DMatrix::zeros(n + pairs, 2 * n + 4 * pairs);
    for i in 0..n {
        c[(i, 2 * i)] = -1.0;
        c[(i, 2 * i + 1)] = 1.0;
    }
    for k in 0..pairs {
        let base = 2 * n + 4 * k;
        for (o, v) in [1.0, -1.0, -1.0, 1.0].iter().enumerate() {
            c[(n + k, base + o)] = *v;
        }
    }
    Ok(MarginalMaps { n, c, m_rows })
}

pub fn marginalize_pair(joint: &JointTable, i: usize, j: usize) -> Result<BivariateTable> {
    if i >= joint.n || j >= joint.n || i == j {
        return Err(Error::Range(format!("pair ({i}, {j}) invalid for {} actors", joint.n)));
    }
    let mut c = [0.0; 4];
    for (s, p) in joint.probs.iter().enumerate() {
        c[2 * joint.bit(s, i) as usize + joint.bit(s, j) as usize] += p;
    }
    Ok(BivariateTable {
        p00: c[0],
        p01: c[1],
        p10: c[2],
        p11: c[3],
    })
}

/// Quadratic exponential joint over exchangeable blocks of actors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockJoint {
    n: usize,
    blocks: Vec<Vec<usize>>,
    /// Position of each actor's block.
    block_of: Vec<usize>,
    /// Mixed-radix strides; block 0 is the most significant digit.
    strides: Vec<usize>,
    /// Statistic layout: `(g, h)` with `g == h` for the within-block pair
    /// count and `h == usize::MAX` for the block count.
    stat_keys: Vec<(usize, usize)>,
    /// Log-linear parameters, one per statistic.
    theta: Vec<f64>,
    probs: Vec<f64>,
    /// `E` of each statistic.
    moments: Vec<f64>,
}

impl BlockJoint {
    /// Fits the joint whose marginal effects match `targets`; actors in the
    /// same block must share their targets.
    pub fn fit(blocks: Vec<Vec<usize>>, targets: &EffectTargets) -> Result<Self> {
        targets.validate()?;
        let n = targets.n();
        let block_of = check_blocks(&blocks, n)?;
        let sizes: Vec<usize> = blocks.iter().map(Vec::len).collect();
        let states = sizes.iter().try_fold(1usize, |acc, s| acc.checked_mul(s + 1));
        let states = match states {
            Some(s) if s <= MAX_STATES => s,
            _ => {
                return Err(Error::Range(format!(
                    "block sizes {sizes:?} need more than {MAX_STATES} states"
                )))
            }
        };
        let nb = blocks.len();
        let mut strides = vec![1usize; nb];
        for g in (0..nb.saturating_sub(1)).rev() {
            strides[g] = strides[g + 1] * (sizes[g + 1] + 1);
        }
        let mut stat_keys = Vec::new();
        for g in 0..nb {
            stat_keys.push((g, usize::MAX));
        }
        for g in 0..nb {
            for h in g..nb {
                if g != h || sizes[g] >= 2 {
                    stat_keys.push((g, h));
                }
            }
        }
        let block_eta = block_targets(&blocks, targets)?;
        // Target expectations of each statistic.
        let mut goal = Vec::with_capacity(stat_keys.len());
        for &(g, h) in &stat_keys {
            let (sg, eg) = (sizes[g] as f64, block_eta.eta[g]);
            if h == usize::MAX {
                goal.push(sg * crate::margins::expit(eg));
            } else {
                let p11 = dale_cells(eg, block_eta.eta[h], block_eta.pair[g][h])[3];
                let pairs = if g == h { sg * (sg - 1.0) / 2.0 } else { sg * sizes[h] as f64 };
                goal.push(pairs * p11);
            }
        }
        let d = stat_keys.len();
        // Statistics and log multiplicities of every state.
        let ln_fact = ln_factorials(sizes.iter().cloned().max().unwrap_or(0));
        let mut x = vec![0.0; states * d];
        let mut log_mult = vec![0.0; states];
        for s in 0..states {
            let k: Vec<usize> = (0..nb).map(|g| (s / strides[g]) % (sizes[g] + 1)).collect();
            log_mult[s] = (0..nb)
                .map(|g| ln_fact[sizes[g]] - ln_fact[k[g]] - ln_fact[sizes[g] - k[g]])
                .sum();
            for (c, &(g, h)) in stat_keys.iter().enumerate() {
                let (kg, kh) = (k[g] as f64, if h == usize::MAX { 0.0 } else { k[h] as f64 });
                x[s * d + c] = match h {
                    usize::MAX => kg,
                    _ if g == h => kg * (kg - 1.0) / 2.0,
                    _ => kg * kh,
                };
            }
        }
        let mut joint = Self {
            n,
            blocks,
            block_of,
            strides,
            stat_keys,
            theta: vec![0.0; d],
            probs: vec![0.0; states],
            moments: vec![0.0; d],
        };
        // Start from independence.
        for g in 0..nb {
            joint.theta[g] = block_eta.eta[g];
        }
        joint.newton(&x, &log_mult, &goal, &block_eta)?;
        Ok(joint)
    }

    fn newton(&mut self, x: &[f64], log_mult: &[f64], goal: &[f64], targets: &BlockEffects) -> Result<()> {
        let d = self.theta.len();
        let mut dual = self.evaluate(x, log_mult, goal);
        let mut residual = f64::INFINITY;
        for iter in 0..MAX_NEWTON {
            residual = self.effect_residual(targets);
            if residual <= FIT_TOL * 0.1 {
                debug!("joint fitted in {iter} Newton steps, residual {residual:.2e}");
                return Ok(());
            }
            let grad: Vec<f64> = goal.iter().zip(&self.moments).map(|(a, b)| a - b).collect();
            let cov = self.covariance(x);
            let dir = solve_spd(&cov, &grad, d).unwrap_or_else(|| grad.clone());
            let slope: f64 = dir.iter().zip(&grad).map(|(a, b)| a * b).sum();
            let gnorm = grad.iter().map(|v| v * v).sum::<f64>();
            let old = self.theta.clone();
            let mut t = 1.0;
            let mut moved = false;
            for _ in 0..60 {
                self.theta = old.iter().zip(&dir).map(|(a, b)| a + t * b).collect();
                let trial = self.evaluate(x, log_mult, goal);
                // Near the optimum dual gains drop below rounding; a smaller
                // moment residual is then the acceptance test.
                let tgnorm = goal.iter().zip(&self.moments).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
                if trial.is_finite() && (trial > dual + 1e-4 * t * slope.max(0.0) || tgnorm < 0.25 * gnorm) {
                    dual = trial;
                    moved = true;
                    break;
                }
                t *= 0.5;
            }
            if !moved {
                self.theta = old;
                self.evaluate(x, log_mult, goal);
                break;
            }
        }
        residual = residual.min(self.effect_residual(targets));
        if residual <= FIT_TOL {
            return Ok(());
        }
        Err(Error::NonConvergence(format!(
            "joint fit stopped with effect residual {residual:.3e} (targets may be infeasible)"
        )))
    }

    /// Updates `probs` and `moments` from `theta`; returns the concave dual
    /// `θ'goal - log Z`.
    fn evaluate(&mut self, x: &[f64], log_mult: &[f64], goal: &[f64]) -> f64 {
        let d = self.theta.len();
        let logw: Vec<f64> = log_mult
            .iter()
            .enumerate()
            .map(|(s, lm)| lm + dot(&x[s * d..(s + 1) * d], &self.theta))
            .collect();
        let max = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for (p, lw) in self.probs.iter_mut().zip(&logw) {
            *p = (lw - max).exp();
            z += *p;
        }
        for p in self.probs.iter_mut() {
            *p /= z;
        }
        self.moments = vec![0.0; d];
        for (s, p) in self.probs.iter().enumerate() {
            for c in 0..d {
                self.moments[c] += p * x[s * d + c];
            }
        }
        dot(&self.theta, goal) - (max + z.ln())
    }

    fn covariance(&self, x: &[f64]) -> Vec<f64> {
        let d = self.theta.len();
        let mut cov = vec![0.0; d * d];
        for (s, p) in self.probs.iter().enumerate() {
            let row = &x[s * d..(s + 1) * d];
            for a in 0..d {
                let da = row[a] - self.moments[a];
                for b in a..d {
                    cov[a * d + b] += p * da * (row[b] - self.moments[b]);
                }
            }
        }
        for a in 0..d {
            for b in 0..a {
                cov[a * d + b] = cov[b * d + a];
            }
        }
        cov
    }

    fn stat_index(&self, g: usize, h: usize) -> Option<usize> {
        self.stat_keys.iter().position(|k| *k == (g, h))
    }

    /// Probability of `z = 1` for any actor of block `g`.
    fn block_mean(&self, g: usize) -> f64 {
        self.moments[g] / self.blocks[g].len() as f64
    }

    /// `P(z_i = z_j = 1)` for distinct actors of blocks `g ≤ h`.
    fn block_both(&self, g: usize, h: usize) -> f64 {
        let (sg, sh) = (self.blocks[g].len() as f64, self.blocks[h].len() as f64);
        let pairs = if g == h { sg * (sg - 1.0) / 2.0 } else { sg * sh };
        match self.stat_index(g, h) {
            Some(c) => self.moments[c] / pairs,
            None => 0.0,
        }
    }

    fn block_table(&self, g: usize, h: usize) -> BivariateTable {
        let (g, h, flip) = if g <= h { (g, h, false) } else { (h, g, true) };
        let (pg, ph, p11) = (self.block_mean(g), self.block_mean(h), self.block_both(g, h));
        let (pi, pj) = if flip { (ph, pg) } else { (pg, ph) };
        BivariateTable {
            p00: 1.0 - pi - pj + p11,
            p01: pj - p11,
            p10: pi - p11,
            p11,
        }
    }

    fn effect_residual(&self, targets: &BlockEffects) -> f64 {
        let nb = self.blocks.len();
        let mut worst: f64 = 0.0;
        for g in 0..nb {
            for h in g..nb {
                if g == h && self.blocks[g].len() < 2 {
                    let p = self.block_mean(g);
                    worst = worst.max(((p / (1.0 - p)).ln() - targets.eta[g]).abs());
                    continue;
                }
                match table_to_marginal(&self.block_table(g, h)) {
                    Ok(e) => {
                        worst = worst
                            .max((e.eta_i - targets.eta[g]).abs())
                            .max((e.eta_j - targets.eta[h]).abs())
                            .max((e.eta_ij - targets.pair[g][h]).abs());
                    }
                    Err(_) => return f64::INFINITY,
                }
            }
        }
        if worst.is_nan() {
            f64::INFINITY
        } else {
            worst
        }
    }

    pub fn n_actors(&self) -> usize {
        self.n
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    /// Probabilities of the lumped states.
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Log-linear parameters keyed by statistic name.
    pub fn loglinear(&self) -> BTreeMap<String, f64> {
        self.stat_keys
            .iter()
            .zip(&self.theta)
            .map(|(&(g, h), v)| {
                let key = if h == usize::MAX { format!("block{g}") } else { format!("block{g}:block{h}") };
                (key, *v)
            })
            .collect()
    }

    /// Bivariate table of actors `i` and `j`.
    pub fn pair_table(&self, i: usize, j: usize) -> Result<BivariateTable> {
        if i >= self.n || j >= self.n || i == j {
            return Err(Error::Range(format!("pair ({i}, {j}) invalid for {} actors", self.n)));
        }
        Ok(self.block_table(self.block_of[i], self.block_of[j]))
    }

    /// `P(z_i = 1)`.
    pub fn marginal(&self, i: usize) -> f64 {
        self.block_mean(self.block_of[i])
    }

    /// Full `2^n` table; only for one actor per block in ascending order.
    pub fn to_joint_table(&self) -> Result<JointTable> {
        let identity = self.blocks.iter().enumerate().all(|(g, b)| b.len() == 1 && b[0] == g);
        if !identity {
            return Err(Error::Domain("full table needs one actor per block in index order".into()));
        }
        JointTable::new(self.n, self.probs.clone())
    }

    /// Actors of lumped state `s`, drawing members uniformly within blocks.
    fn decode<R: Rng>(&self, s: usize, rng: &mut R) -> Vec<usize> {
        let mut actors = Vec::new();
        for (g, members) in self.blocks.iter().enumerate() {
            let k = (s / self.strides[g]) % (members.len() + 1);
            if k == members.len() {
                actors.extend_from_slice(members);
            } else if k > 0 {
                actors.extend(sample_indices(rng, members.len(), k).into_iter().map(|r| members[r]));
            }
        }
        actors.sort_unstable();
        actors
    }
}

struct BlockEffects {
    eta: Vec<f64>,
    pair: Vec<Vec<f64>>,
}

fn check_blocks(blocks: &[Vec<usize>], n: usize) -> Result<Vec<usize>> {
    let mut block_of = vec![usize::MAX; n];
    for (g, b) in blocks.iter().enumerate() {
        if b.is_empty() {
            return Err(Error::Validation(format!("block {g} is empty")));
        }
        for &a in b {
            if a >= n || block_of[a] != usize::MAX {
                return Err(Error::Validation(format!("actor {a} out of range or in two blocks")));
            }
            block_of[a] = g;
        }
    }
    if block_of.iter().any(|g| *g == usize::MAX) {
        return Err(Error::Validation("blocks must cover every actor".into()));
    }
    Ok(block_of)
}

fn block_targets(blocks: &[Vec<usize>], t: &EffectTargets) -> Result<BlockEffects> {
    let nb = blocks.len();
    let tol = 1e-12;
    let mut eta = vec![0.0; nb];
    let mut pair = vec![vec![0.0; nb]; nb];
    for (g, b) in blocks.iter().enumerate() {
        eta[g] = t.eta[b[0]];
        if b.iter().any(|&a| (t.eta[a] - eta[g]).abs() > tol) {
            return Err(Error::Validation(format!("actors of block {g} differ in η_i")));
        }
    }
    for g in 0..nb {
        for h in g..nb {
            let mut value = None;
            for &a in &blocks[g] {
                for &b in &blocks[h] {
                    if a == b {
                        continue;
                    }
                    let v = t.eta_pair[a][b];
                    match value {
                        None => value = Some(v),
                        Some(w) if (v - w as f64).abs() > tol => {
                            return Err(Error::Validation(format!(
                                "actor pairs of blocks ({g}, {h}) differ in η_ij"
                            )))
                        }
                        _ => {}
                    }
                }
            }
            let v = value.unwrap_or(0.0);
            pair[g][h] = v;
            pair[h][g] = v;
        }
    }
    Ok(BlockEffects { eta, pair })
}

fn ln_factorials(n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n + 1];
    for k in 1..=n {
        out[k] = out[k - 1] + (k as f64).ln();
    }
    out
}

fn solve_spd(a: &[f64], b: &[f64], d: usize) -> Option<Vec<f64>> {
    let m = DMatrix::from_row_slice(d, d, a);
    let ch = m.cholesky()?;
    let x = ch.solve(&DVector::from_column_slice(b));
    x.iter().all(|v| v.is_finite()).then(|| x.iter().cloned().collect())
}

/// Full joint with the given effects, zero interactions above order two.
pub fn joint_from_marginals(targets: &EffectTargets) -> Result<JointTable> {
    let n = targets.n();
    if !(1..=MAX_EXACT_ACTORS).contains(&n) {
        return Err(Error::Range(format!("exact joint needs 1 ≤ n ≤ {MAX_EXACT_ACTORS}, got {n}")));
    }
    BlockJoint::fit((0..n).map(|i| vec![i]).collect(), targets)?.to_joint_table()
}

/// Anything events can be drawn from.
pub trait EventSource {
    fn n_actors(&self) -> usize;
    /// Probabilities of the enumerated states; state 0 has no actors.
    fn state_probs(&self) -> &[f64];
    /// Sorted actor indices of a state.
    fn actors_of<R: Rng>(&self, state: usize, rng: &mut R) -> Vec<usize>;
}

impl EventSource for JointTable {
    fn n_actors(&self) -> usize {
        self.n
    }

    fn state_probs(&self) -> &[f64] {
        &self.probs
    }

    fn actors_of<R: Rng>(&self, state: usize, _rng: &mut R) -> Vec<usize> {
        (0..self.n).filter(|&k| self.bit(state, k)).collect()
    }
}

impl EventSource for BlockJoint {
    fn n_actors(&self) -> usize {
        self.n
    }

    fn state_probs(&self) -> &[f64] {
        &self.probs
    }

    fn actors_of<R: Rng>(&self, state: usize, rng: &mut R) -> Vec<usize> {
        self.decode(state, rng)
    }
}

/// Sampled events, actorless ones included in draw order.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledCorpus {
    pub actor_ids: Vec<String>,
    pub period_labels: Vec<String>,
    pub events: Vec<EventRecord>,
    /// Actorless events per period.
    pub empty_per_period: Vec<u64>,
}

impl SampledCorpus {
    pub fn nonempty(&self) -> impl Iterator<Item = &EventRecord> {
        self.events.iter().filter(|e| !e.actors.is_empty())
    }
}

/// Draws `counts[t]` independent configurations from each period's joint.
///
/// Period `t` uses its own stream of a ChaCha generator seeded with `seed`, so
/// each period's draws do not depend on the others. With `condition_nonempty`
/// the all-zero configuration is excluded and every event has an actor.
pub fn sample_events<J: EventSource>(
    joints: &[J],
    counts: &[u64],
    actor_ids: &[String],
    period_labels: &[String],
    seed: u64,
    condition_nonempty: bool,
) -> Result<SampledCorpus> {
    if joints.len() != counts.len() || joints.len() != period_labels.len() {
        return Err(Error::Shape(format!(
            "{} joints, {} counts, {} labels",
            joints.len(),
            counts.len(),
            period_labels.len()
        )));
    }
    let mut events = Vec::new();
    let mut empty_per_period = vec![0u64; joints.len()];
    for (t, joint) in joints.iter().enumerate() {
        if joint.n_actors() != actor_ids.len() {
            return Err(Error::Shape(format!(
                "joint of period {t} has {} actors, expected {}",
                joint.n_actors(),
                actor_ids.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(t as u64);
        let mut cdf = Vec::with_capacity(joint.state_probs().len());
        let mut acc = 0.0;
        for (s, p) in joint.state_probs().iter().enumerate() {
            if !(condition_nonempty && s == 0) {
                acc += p;
            }
            cdf.push(acc);
        }
        if counts[t] > 0 && !(acc > 0.0) {
            return Err(Error::Domain(format!("period {t} has no configuration to draw")));
        }
        let last = cdf.iter().rposition(|c| *c < acc).map_or(0, |k| k + 1);
        for e in 0..counts[t] {
            let u = rng.gen::<f64>() * acc;
            let s = cdf.partition_point(|c| *c <= u).min(last);
            let actors = joint.actors_of(s, &mut rng);
            if actors.is_empty() {
                empty_per_period[t] += 1;
            }
            events.push(EventRecord::new(
                format!("{}-{}", period_labels[t], e + 1),
                period_labels[t].clone(),
                actors.iter().map(|&a| actor_ids[a].clone()),
            ));
        }
    }
    Ok(SampledCorpus {
        actor_ids: actor_ids.to_vec(),
        period_labels: period_labels.to_vec(),
        events,
        empty_per_period,
    })
}

/// Events per period: one count for every period, or one per period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EventCounts {
    Constant(u64),
    PerPeriod(Vec<u64>),
}

/// Per-period targets as written in a simulation spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodTargets {
    pub eta: Vec<f64>,
    pub eta_pair: Vec<Vec<f64>>,
}

/// Description of a synthetic panel: either actor trajectories (`params`
/// with the polynomial orders) or explicit per-period `targets`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    #[serde(default)]
    pub actors: Option<Vec<String>>,
    pub periods: Vec<String>,
    pub events_per_period: EventCounts,
    #[serde(default)]
    pub order1: Option<usize>,
    #[serde(default)]
    pub order2: Option<usize>,
    #[serde(default)]
    pub params: Option<Vec<ActorParams>>,
    #[serde(default)]
    pub targets: Option<Vec<PeriodTargets>>,
    /// Exchangeable blocks of actor indices; defaults to one actor per block.
    #[serde(default)]
    pub blocks: Option<Vec<Vec<usize>>>,
}

/// What a simulation was built from, for test harnesses.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Truth {
    pub seed: u64,
    pub condition_nonempty: bool,
    pub actors: Vec<String>,
    pub period_labels: Vec<String>,
    pub scaled_times: Vec<f64>,
    pub events_per_period: Vec<u64>,
    pub empty_events_per_period: Vec<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub params: Option<Vec<ActorParams>>,
    pub periods: Vec<PeriodTruth>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PeriodTruth {
    pub label: String,
    pub eta: Vec<f64>,
    pub eta_pair: Vec<Vec<f64>>,
    pub loglinear: BTreeMap<String, f64>,
    /// Full joint, for one actor per block.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub joint: Option<Vec<f64>>,
}

impl SimSpec {
    pub fn n_actors(&self) -> Result<usize> {
        let n = match (&self.actors, &self.params, &self.targets) {
            (Some(a), _, _) => a.len(),
            (None, Some(p), _) => p.len(),
            (None, None, Some(t)) => t.first().map_or(0, |t| t.eta.len()),
            _ => return Err(Error::Validation("spec needs params or targets".into())),
        };
        if n == 0 {
            return Err(Error::Validation("spec has no actors".into()));
        }
        Ok(n)
    }

    pub fn actor_ids(&self) -> Result<Vec<String>> {
        Ok(match &self.actors {
            Some(a) => a.clone(),
            None => (1..=self.n_actors()?).map(|k| format!("a{k}")).collect(),
        })
    }

    pub fn counts(&self) -> Result<Vec<u64>> {
        let tn = self.periods.len();
        match &self.events_per_period {
            EventCounts::Constant(m) => Ok(vec![*m; tn]),
            EventCounts::PerPeriod(v) if v.len() == tn => Ok(v.clone()),
            EventCounts::PerPeriod(v) => Err(Error::Validation(format!(
                "{} event counts for {tn} periods",
                v.len()
            ))),
        }
    }

    pub fn basis(&self) -> Result<TimeBasis> {
        TimeBasis::new(
            self.periods.clone(),
            self.order1.unwrap_or(crate::model::DEFAULT_ORDER),
            self.order2.unwrap_or(crate::model::DEFAULT_ORDER),
        )
    }

    /// Per-period effect targets.
    pub fn period_targets(&self) -> Result<Vec<EffectTargets>> {
        let n = self.n_actors()?;
        if self.periods.is_empty() {
            return Err(Error::Validation("spec has no periods".into()));
        }
        match (&self.params, &self.targets) {
            (Some(p), None) => {
                if p.len() != n {
                    return Err(Error::Validation(format!("{} parameter vectors for {n} actors", p.len())));
                }
                let basis = self.basis()?;
                (0..self.periods.len()).map(|t| EffectTargets::from_params(p, &basis, t)).collect()
            }
            (None, Some(ts)) => {
                if ts.len() != self.periods.len() {
                    return Err(Error::Validation(format!(
                        "{} target sets for {} periods",
                        ts.len(),
                        self.periods.len()
                    )));
                }
                ts.iter()
                    .map(|t| {
                        if t.eta.len() != n {
                            return Err(Error::Validation(format!("{} targets for {n} actors", t.eta.len())));
                        }
                        EffectTargets::new(t.eta.clone(), t.eta_pair.clone())
                    })
                    .collect()
            }
            _ => Err(Error::Validation("spec needs exactly one of params and targets".into())),
        }
    }

    fn blocks(&self, n: usize) -> Result<Vec<Vec<usize>>> {
        match &self.blocks {
            Some(b) => Ok(b.clone()),
            None if n <= MAX_EXACT_ACTORS => Ok((0..n).map(|i| vec![i]).collect()),
            None => Err(Error::Validation(format!(
                "{n} actors exceed the exact limit of {MAX_EXACT_ACTORS}; declare exchangeable blocks"
            ))),
        }
    }
}

/// Fits every period's joint and samples the corpus.
pub fn simulate(spec: &SimSpec, seed: u64, condition_nonempty: bool) -> Result<(SampledCorpus, Truth)> {
    let n = spec.n_actors()?;
    let actors = spec.actor_ids()?;
    let counts = spec.counts()?;
    let targets = spec.period_targets()?;
    let blocks = spec.blocks(n)?;
    let joints = targets
        .iter()
        .map(|t| BlockJoint::fit(blocks.clone(), t))
        .collect::<Result<Vec<_>>>()?;
    let corpus = sample_events(&joints, &counts, &actors, &spec.periods, seed, condition_nonempty)?;
    let basis = spec.basis()?;
    let periods = joints
        .iter()
        .zip(&targets)
        .zip(&spec.periods)
        .map(|((j, t), label)| PeriodTruth {
            label: label.clone(),
            eta: t.eta.clone(),
            eta_pair: t.eta_pair.clone(),
            loglinear: j.loglinear(),
            joint: j.to_joint_table().ok().map(|jt| jt.probs),
        })
        .collect();
    let truth = Truth {
        seed,
        condition_nonempty,
        actors,
        period_labels: spec.periods.clone(),
        scaled_times: basis.scaled_times().to_vec(),
        events_per_period: counts,
        empty_events_per_period: corpus.empty_per_period.clone(),
        params: spec.params.clone(),
        periods,
    };
    Ok((corpus, truth))
}
