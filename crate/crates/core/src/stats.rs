//! Event ingestion and the sparse per-period sufficient statistics.
//!
//! Only three families of counts are stored: events per period, events per
//! (actor, period) and co-occurrences per (unordered pair, period). Every 2×2
//! frequency table is rebuilt from them by inclusion–exclusion, so storage is
//! proportional to the number of nonzero counts and never to `n² T`.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One relational event: an identifier, a time label and the actors involved.
///
/// An empty actor list denotes an event nobody from the actor set took part
/// in; it still counts towards the period's event total.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRecord {
    pub event_id: String,
    pub time_label: String,
    pub actors: Vec<String>,
}

impl EventRecord {
    pub fn new(
        event_id: impl Into<String>,
        time_label: impl Into<String>,
        actors: impl IntoIterator<Item = impl Into<String>>,
    ) -> Self {
        Self {
            event_id: event_id.into(),
            time_label: time_label.into(),
            actors: actors.into_iter().map(Into::into).collect(),
        }
    }
}

/// 2×2 frequency table of one pair in one period, cells `00, 01, 10, 11`
/// over `(z_i, z_j)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PairCounts {
    pub w00: u64,
    pub w01: u64,
    pub w10: u64,
    pub w11: u64,
}

impl PairCounts {
    pub fn total(&self) -> u64 {
        self.w00 + self.w01 + self.w10 + self.w11
    }

    pub fn as_array(&self) -> [f64; 4] {
        [
            self.w00 as f64,
            self.w01 as f64,
            self.w10 as f64,
            self.w11 as f64,
        ]
    }
}

/// Co-occurrence of the owning actor with `other` in `period`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cooccurrence {
    pub other: u32,
    pub period: u32,
    pub count: u32,
}

/// Sufficient statistics of a corpus grouped into periods.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PanelStats {
    actor_ids: Vec<String>,
    period_labels: Vec<String>,
    /// Events per period, including events without any actor.
    m: Vec<u64>,
    /// Events without any actor, per period.
    empty: Vec<u64>,
    /// Per actor, sorted `(period, count)` for periods with a nonzero count.
    c1: Vec<Vec<(u32, u32)>>,
    /// Per actor, co-occurrences sorted by `(other, period)`. Each pair is
    /// stored under both endpoints.
    neighbors: Vec<Vec<Cooccurrence>>,
    pair_keys: usize,
}

impl PanelStats {
    pub fn n_actors(&self) -> usize {
        self.actor_ids.len()
    }

    pub fn n_periods(&self) -> usize {
        self.period_labels.len()
    }

    pub fn actor_ids(&self) -> &[String] {
        &self.actor_ids
    }

    pub fn period_labels(&self) -> &[String] {
        &self.period_labels
    }

    pub fn actor_index(&self, id: &str) -> Option<usize> {
        self.actor_ids.iter().position(|a| a == id)
    }

    /// Events per period.
    pub fn events_per_period(&self) -> &[u64] {
        &self.m
    }

    pub fn empty_events_per_period(&self) -> &[u64] {
        &self.empty
    }

    pub fn total_events(&self) -> u64 {
        self.m.iter().sum()
    }

    /// Number of stored (unordered pair, period) keys.
    pub fn pair_key_count(&self) -> usize {
        self.pair_keys
    }

    /// Sparse per-period participation counts of actor `i`.
    pub fn actor_counts(&self, i: usize) -> &[(u32, u32)] {
        &self.c1[i]
    }

    /// Co-occurrences of actor `i`, sorted by `(other, period)`.
    pub fn cooccurrences(&self, i: usize) -> &[Cooccurrence] {
        &self.neighbors[i]
    }

    /// Events of period `t` involving actor `i`.
    pub fn c1(&self, i: usize, t: usize) -> u64 {
        match self.c1[i].binary_search_by_key(&(t as u32), |e| e.0) {
            Ok(k) => self.c1[i][k].1 as u64,
            Err(_) => 0,
        }
    }

    /// Events of period `t` involving both `i` and `j`.
    pub fn c2(&self, i: usize, j: usize, t: usize) -> u64 {
        let key = (j as u32, t as u32);
        match self.neighbors[i].binary_search_by_key(&key, |c| (c.other, c.period)) {
            Ok(k) => self.neighbors[i][k].count as u64,
            Err(_) => 0,
        }
    }

    /// Total number of events each actor took part in.
    pub fn actor_totals(&self) -> Vec<u64> {
        self.c1
            .iter()
            .map(|v| v.iter().map(|(_, c)| *c as u64).sum())
            .collect()
    }

    /// True when actor `i` never shares an event with anyone.
    pub fn is_isolated(&self, i: usize) -> bool {
        self.neighbors[i].is_empty()
    }

    /// Dense `n × T` matrix of participation counts, row-major by actor.
    pub fn dense_actor_counts(&self) -> Vec<u32> {
        let t = self.n_periods();
        let mut out = vec![0u32; self.n_actors() * t];
        for (i, row) in self.c1.iter().enumerate() {
            for &(p, c) in row {
                out[i * t + p as usize] = c;
            }
        }
        out
    }

    fn check_actor(&self, i: usize) -> Result<()> {
        if i >= self.n_actors() {
            return Err(Error::Range(format!("actor {i} outside 0..{}", self.n_actors())));
        }
        Ok(())
    }
}

/// Frequency table of `(z_i, z_j)` over the events of period `t`.
pub fn pair_counts(stats: &PanelStats, i: usize, j: usize, t: usize) -> Result<PairCounts> {
    if i == j {
        return Err(Error::Domain(format!("pair counts need two distinct actors, got {i} twice")));
    }
    stats.check_actor(i)?;
    stats.check_actor(j)?;
    if t >= stats.n_periods() {
        return Err(Error::Range(format!("period {t} outside 0..{}", stats.n_periods())));
    }
    Ok(counts_from_marginals(
        stats.m[t],
        stats.c1(i, t),
        stats.c1(j, t),
        stats.c2(i, j, t),
    ))
}

#[inline]
pub(crate) fn counts_from_marginals(m: u64, ci: u64, cj: u64, cij: u64) -> PairCounts {
    PairCounts {
        w00: m + cij - ci - cj,
        w01: cj - cij,
        w10: ci - cij,
        w11: cij,
    }
}

/// Options for [`ingest_with`].
#[derive(Debug, Clone, Default)]
pub struct IngestOptions {
    /// Maps raw time labels to merged period labels; unmapped labels are kept.
    pub binning: Option<HashMap<String, String>>,
    /// Actors to register up front, in index order, even if they never appear.
    pub actors: Vec<String>,
    /// Periods to register up front even if they hold no events.
    pub periods: Vec<String>,
    /// Extra actorless events per period label.
    pub empty_events: Vec<(String, u64)>,
}

/// Accumulates events into [`PanelStats`].
#[derive(Debug, Default)]
pub struct PanelBuilder {
    binning: Option<HashMap<String, String>>,
    actor_index: HashMap<String, u32>,
    actor_ids: Vec<String>,
    period_index: HashMap<String, u32>,
    period_labels: Vec<String>,
    m: Vec<u64>,
    empty: Vec<u64>,
    c1: HashMap<(u32, u32), u32>,
    c2: HashMap<(u32, u32, u32), u32>,
    duplicates: Vec<String>,
    events: u64,
}

impl PanelBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_options(opts: &IngestOptions) -> Self {
        let mut b = Self {
            binning: opts.binning.clone(),
            ..Self::default()
        };
        for a in &opts.actors {
            b.actor(a);
        }
        for p in &opts.periods {
            b.period(p);
        }
        for (label, count) in &opts.empty_events {
            b.add_empty_events(label, *count);
        }
        b
    }

    fn actor(&mut self, id: &str) -> u32 {
        if let Some(&k) = self.actor_index.get(id) {
            return k;
        }
        let k = self.actor_ids.len() as u32;
        self.actor_ids.push(id.to_string());
        self.actor_index.insert(id.to_string(), k);
        k
    }

    fn period(&mut self, raw: &str) -> u32 {
        let label = match &self.binning {
            Some(map) => map.get(raw).cloned().unwrap_or_else(|| raw.to_string()),
            None => raw.to_string(),
        };
        if let Some(&k) = self.period_index.get(&label) {
            return k;
        }
        let k = self.period_labels.len() as u32;
        self.period_labels.push(label.clone());
        self.period_index.insert(label, k);
        self.m.push(0);
        self.empty.push(0);
        k
    }

    pub fn add_empty_events(&mut self, time_label: &str, count: u64) {
        let t = self.period(time_label) as usize;
        self.m[t] += count;
        self.empty[t] += count;
        self.events += count;
    }

    pub fn add_event(&mut self, rec: &EventRecord) {
        let t = self.period(&rec.time_label);
        let mut ids: Vec<u32> = rec.actors.iter().map(|a| self.actor(a)).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            self.duplicates.push(rec.event_id.clone());
            return;
        }
        self.events += 1;
        self.m[t as usize] += 1;
        if ids.is_empty() {
            self.empty[t as usize] += 1;
            return;
        }
        for &a in &ids {
            *self.c1.entry((a, t)).or_insert(0) += 1;
        }
        for (k, &a) in ids.iter().enumerate() {
            for &b in &ids[k + 1..] {
                *self.c2.entry((a, b, t)).or_insert(0) += 1;
            }
        }
    }

    pub fn finish(self) -> Result<PanelStats> {
        if !self.duplicates.is_empty() {
            return Err(Error::Validation(format!(
                "events with duplicate actors: {}",
                self.duplicates.join(", ")
            )));
        }
        if self.period_labels.is_empty() {
            return Err(Error::Validation("no events to ingest".into()));
        }
        let order = period_order(&self.period_labels);
        let mut remap = vec![0u32; order.len()];
        for (new, &old) in order.iter().enumerate() {
            remap[old] = new as u32;
        }
        let period_labels: Vec<String> = order.iter().map(|&k| self.period_labels[k].clone()).collect();
        let m = order.iter().map(|&k| self.m[k]).collect();
        let empty = order.iter().map(|&k| self.empty[k]).collect();

        let n = self.actor_ids.len();
        let mut c1: Vec<Vec<(u32, u32)>> = vec![Vec::new(); n];
        for ((a, t), c) in self.c1 {
            c1[a as usize].push((remap[t as usize], c));
        }
        for row in &mut c1 {
            row.sort_unstable();
        }
        let pair_keys = self.c2.len();
        let mut neighbors: Vec<Vec<Cooccurrence>> = vec![Vec::new(); n];
        for ((a, b, t), count) in self.c2 {
            let period = remap[t as usize];
            neighbors[a as usize].push(Cooccurrence { other: b, period, count });
            neighbors[b as usize].push(Cooccurrence { other: a, period, count });
        }
        for row in &mut neighbors {
            row.sort_unstable_by_key(|c| (c.other, c.period));
        }
        debug_assert_eq!(self.events, order.iter().map(|&k| self.m[k]).sum::<u64>());
        Ok(PanelStats {
            actor_ids: self.actor_ids,
            period_labels,
            m,
            empty,
            c1,
            neighbors,
            pair_keys,
        })
    }
}

/// Sorts labels numerically when all of them parse as numbers, otherwise
/// lexicographically. Returns the original indices in sorted order.
fn period_order(labels: &[String]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..labels.len()).collect();
    let numeric: Option<Vec<f64>> = labels.iter().map(|l| l.trim().parse::<f64>().ok()).collect();
    match numeric {
        Some(v) => idx.sort_by(|&a, &b| v[a].total_cmp(&v[b])),
        None => idx.sort_by(|&a, &b| labels[a].cmp(&labels[b])),
    }
    idx
}

/// Builds the statistics of a stream of events.
pub fn ingest<I>(records: I) -> Result<PanelStats>
where
    I: IntoIterator<Item = EventRecord>,
{
    ingest_with(records, &IngestOptions::default())
}

pub fn ingest_with<I>(records: I, opts: &IngestOptions) -> Result<PanelStats>
where
    I: IntoIterator<Item = EventRecord>,
{
    let mut b = PanelBuilder::with_options(opts);
    let mut any = false;
    for r in records {
        any = true;
        b.add_event(&r);
    }
    if !any && opts.empty_events.is_empty() && opts.periods.is_empty() {
        return Err(Error::Validation("empty event stream".into()));
    }
    b.finish()
}

/// Per-period frequency tables counted event by event, for cross-checking.
pub fn brute_force_pair_counts(
    records: &[EventRecord],
    stats: &PanelStats,
    i: usize,
    j: usize,
    t: usize,
) -> PairCounts {
    let (a, b) = (&stats.actor_ids()[i], &stats.actor_ids()[j]);
    let label = &stats.period_labels()[t];
    let mut w = PairCounts::default();
    for r in records.iter().filter(|r| &r.time_label == label) {
        let zi = r.actors.contains(a);
        let zj = r.actors.contains(b);
        match (zi, zj) {
            (false, false) => w.w00 += 1,
            (false, true) => w.w01 += 1,
            (true, false) => w.w10 += 1,
            (true, true) => w.w11 += 1,
        }
    }
    w
}

/// Number of events by size (actors per event), per period label.
pub fn event_size_table(records: &[EventRecord]) -> BTreeMap<String, BTreeMap<usize, u64>> {
    let mut out: BTreeMap<String, BTreeMap<usize, u64>> = BTreeMap::new();
    for r in records {
        *out.entry(r.time_label.clone())
            .or_default()
            .entry(r.actors.len())
            .or_insert(0) += 1;
    }
    out
}
