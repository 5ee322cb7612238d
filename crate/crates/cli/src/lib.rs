//! Commands behind the `biplik` binary. Each command reads its input, writes
//! its artifacts into the output directory and reports whether the fit
//! converged; all artifacts except `timing.json` are byte-identical across
//! runs with the same inputs, seed and options.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use biplik::clustering::{
    cross_classification, fit_clustered, improvement_ratio, kmeans, select_k, ClusterModel,
    CplStep, CrossTable,
};
use biplik::estimator::{fit_fixed_effects, FitConfig, FitResult};
use biplik::io::{read_events_path, write_actor_dictionary, write_events_path};
use biplik::model::{Basis, TimeBasis, BOX_BOUND};
use biplik::simulator::{simulate, SimSpec};
use biplik::stats::{event_size_table, ingest, EventRecord, PanelStats};
use biplik::{Error, Result};
use log::info;
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NONCONVERGENCE: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EventsFormat {
    Csv,
    Jsonl,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub input: PathBuf,
    #[serde(skip)]
    pub out: PathBuf,
    pub order1: usize,
    pub order2: usize,
    pub tol: f64,
    pub grad_tol: f64,
    pub max_sweeps: usize,
    pub h1: Option<usize>,
    pub h2: Option<usize>,
    pub auto_clusters: bool,
    pub bss_threshold: f64,
    pub seed: u64,
    /// Worker threads; never changes any number, so it is left out of the echo.
    #[serde(skip)]
    pub threads: Option<usize>,
    pub condition_nonempty: bool,
    pub events_format: EventsFormat,
}

impl RunConfig {
    pub fn new(input: impl Into<PathBuf>, out: impl Into<PathBuf>) -> Self {
        Self {
            input: input.into(),
            out: out.into(),
            order1: 2,
            order2: 2,
            tol: 1e-8,
            grad_tol: 1e-6,
            max_sweeps: 100,
            h1: None,
            h2: None,
            auto_clusters: false,
            bss_threshold: 0.8,
            seed: 0,
            threads: None,
            condition_nonempty: false,
            events_format: EventsFormat::Csv,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.input.is_file() {
            return Err(Error::Validation(format!(
                "input {} is not a readable file",
                self.input.display()
            )));
        }
        if !(self.tol > 0.0 && self.grad_tol > 0.0) {
            return Err(Error::Validation("tolerances must be positive".into()));
        }
        if self.max_sweeps == 0 {
            return Err(Error::Validation("--max-sweeps must be positive".into()));
        }
        if self.h1 == Some(0) || self.h2 == Some(0) {
            return Err(Error::Validation("cluster counts must be positive".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::Validation("--threads must be positive".into()));
        }
        if !(self.bss_threshold > 0.0 && self.bss_threshold <= 1.0) {
            return Err(Error::Validation("--bss-threshold must lie in (0, 1]".into()));
        }
        Ok(())
    }

    fn fit_config(&self) -> FitConfig {
        FitConfig {
            tol_obj: self.tol,
            tol_grad: self.grad_tol,
            max_sweeps: self.max_sweeps,
            box_bound: BOX_BOUND,
            seed: self.seed,
            ..FitConfig::default()
        }
    }

    /// SHA-256 over the echoed options and the input bytes, as hex.
    pub fn hash(&self) -> Result<String> {
        let mut h = Sha256::new();
        let mut echo = serde_json::to_value(self)?;
        echo.as_object_mut().map(|o| o.remove("input"));
        h.update(serde_json::to_vec(&echo)?);
        h.update(fs::read(&self.input)?);
        Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
    }
}

/// What a command reports back to the binary.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub converged: bool,
    pub files: Vec<PathBuf>,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.converged {
            EXIT_OK
        } else {
            EXIT_NONCONVERGENCE
        }
    }
}

pub fn error_exit_code(e: &Error) -> i32 {
    match e {
        Error::Validation(_)
        | Error::Parse { .. }
        | Error::Range(_)
        | Error::Shape(_)
        | Error::Domain(_)
        | Error::Infeasible(_)
        | Error::Json(_)
        | Error::Csv(_) => EXIT_VALIDATION,
        _ => EXIT_FAILURE,
    }
}

struct Writer {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Writer {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.files.push(p.clone());
        p
    }

    fn text(&mut self, name: &str, body: &str) -> Result<()> {
        let p = self.path(name);
        fs::write(p, body)?;
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut body = serde_json::to_string_pretty(value)?;
        body.push('\n');
        self.text(name, &body)
    }

    fn csv(&mut self, name: &str, comment: &str, header: &[String], rows: &[Vec<String>]) -> Result<()> {
        let p = self.path(name);
        let mut f = BufWriter::new(File::create(p)?);
        writeln!(f, "{comment}")?;
        let mut w = csv::Writer::from_writer(f);
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }

    fn timing(&mut self, seconds: f64, threads: Option<usize>) -> Result<()> {
        let t = Timing {
            wall_seconds: seconds,
            threads: threads.unwrap_or_else(rayon::current_num_threads),
        };
        self.json("timing.json", &t)
    }
}

#[derive(Serialize)]
struct Timing {
    wall_seconds: f64,
    threads: usize,
}

fn header_comment(hash: &str, basis: Option<&TimeBasis>) -> String {
    let mut s = format!("# biplik {VERSION} config_sha256={hash}");
    if let Some(b) = basis {
        s.push_str(" time_map=");
        let parts: Vec<String> = b
            .scaling_map()
            .iter()
            .map(|(label, x)| format!("{label}:{x}"))
            .collect();
        s.push_str(&parts.join(";"));
    }
    s
}

fn load(cfg: &RunConfig) -> Result<(Vec<EventRecord>, PanelStats)> {
    let records = read_events_path(&cfg.input)?;
    let stats = ingest(records.clone())?;
    info!(
        "{} events, {} actors, {} periods",
        stats.total_events(),
        stats.n_actors(),
        stats.n_periods()
    );
    Ok((records, stats))
}

fn fixed_fit(cfg: &RunConfig, stats: &PanelStats) -> Result<(TimeBasis, FitResult)> {
    let basis = TimeBasis::new(stats.period_labels().to_vec(), cfg.order1, cfg.order2)?;
    let fit = fit_fixed_effects(stats, &basis, &cfg.fit_config())?;
    Ok((basis, fit))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn f(x: f64) -> String {
    format!("{x}")
}

fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn time_map(basis: &TimeBasis) -> BTreeMap<String, f64> {
    basis.scaling_map().into_iter().collect()
}

#[derive(Serialize)]
struct FitReport<'a> {
    tool: &'static str,
    version: &'static str,
    config: &'a RunConfig,
    config_sha256: &'a str,
    n_actors: usize,
    n_periods: usize,
    total_events: u64,
    events_per_period: &'a [u64],
    time_map: BTreeMap<String, f64>,
    trace: &'a [f64],
    pl: f64,
    normalized_pl: f64,
    sweeps: usize,
    converged: bool,
    saturated_cells: usize,
    flag_counts: BTreeMap<&'static str, usize>,
}

/// Fixed-effects fit: `params.csv`, `trajectories.csv`, `actors.csv`,
/// `fit_report.json`.
pub fn cmd_fit(cfg: &RunConfig) -> Result<Outcome> {
    cfg.validate()?;
    let start = Instant::now();
    let hash = cfg.hash()?;
    let (_, stats) = load(cfg)?;
    let (basis, fit) = fixed_fit(cfg, &stats)?;
    let comment = header_comment(&hash, Some(&basis));
    let mut w = Writer::new(&cfg.out)?;

    let mut header = vec!["actor".to_string()];
    header.extend((0..=basis.order1()).map(|k| format!("alpha_{k}")));
    header.extend((0..=basis.order2()).map(|k| format!("beta_{k}")));
    header.push("flag".into());
    let rows: Vec<Vec<String>> = stats
        .actor_ids()
        .iter()
        .zip(&fit.params)
        .zip(&fit.flags)
        .map(|((a, p), flag)| {
            let mut r = vec![a.clone()];
            r.extend(p.alpha.iter().chain(&p.beta).map(|x| f(*x)));
            r.push(flag.as_str().to_string());
            r
        })
        .collect();
    w.csv("params.csv", &comment, &header, &rows)?;

    let header: Vec<String> = ["actor", "period_label", "eta1", "beta_tendency", "expected_count"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut rows = Vec::new();
    for (a, p) in stats.actor_ids().iter().zip(&fit.params) {
        for t in 0..basis.periods() {
            let eta1 = dot(&basis.row(t, Basis::Participation)?, &p.alpha);
            let tend = dot(&basis.row(t, Basis::Collaboration)?, &p.beta);
            let expected = expit(eta1) * stats.events_per_period()[t] as f64;
            rows.push(vec![
                a.clone(),
                basis.labels()[t].clone(),
                f(eta1),
                f(tend),
                f(expected),
            ]);
        }
    }
    w.csv("trajectories.csv", &comment, &header, &rows)?;

    let p = w.path("actors.csv");
    write_actor_dictionary(BufWriter::new(File::create(p)?), &stats)?;

    let mut flag_counts = BTreeMap::new();
    for flag in &fit.flags {
        *flag_counts.entry(flag.as_str()).or_insert(0) += 1;
    }
    let pl = *fit.trace.last().unwrap_or(&f64::NAN);
    let report = FitReport {
        tool: "biplik",
        version: VERSION,
        config: cfg,
        config_sha256: &hash,
        n_actors: stats.n_actors(),
        n_periods: stats.n_periods(),
        total_events: stats.total_events(),
        events_per_period: stats.events_per_period(),
        time_map: time_map(&basis),
        trace: &fit.trace,
        pl,
        normalized_pl: fit.normalized,
        sweeps: fit.sweeps,
        converged: fit.converged,
        saturated_cells: fit.saturated,
        flag_counts,
    };
    w.json("fit_report.json", &report)?;
    w.timing(start.elapsed().as_secs_f64(), cfg.threads)?;
    Ok(Outcome {
        converged: fit.converged,
        files: w.files,
    })
}

#[derive(Serialize)]
struct Selection {
    auto: bool,
    threshold: f64,
    /// BSS/TSS of the k-means solution for k = 1, 2, ... up to the choice.
    bss_tss_participation: Vec<f64>,
    bss_tss_collaboration: Vec<f64>,
}

#[derive(Serialize)]
struct ClusterReport<'a> {
    tool: &'static str,
    version: &'static str,
    config: &'a RunConfig,
    config_sha256: &'a str,
    time_map: BTreeMap<String, f64>,
    h1: usize,
    h2: usize,
    selection: Selection,
    pl_fixed: f64,
    pl_fixed_normalized: f64,
    fixed_converged: bool,
    cpl: f64,
    cpl_normalized: f64,
    cpl_trace: &'a [CplStep],
    iterations: usize,
    converged: bool,
    cpl_one_group: f64,
    cpl_one_group_normalized: f64,
    improvement_ratio: Option<f64>,
    cross_classification: CrossTable,
}

fn bss_curve(points: &[Vec<f64>], up_to: usize, seed: u64) -> Result<Vec<f64>> {
    (1..=up_to).map(|k| Ok(kmeans(points, k, seed)?.bss_tss)).collect()
}

/// Classification fit: `clusters.csv`, `cluster_profiles.csv`,
/// `cross_class.csv`, `cluster_report.json`. The fixed-effects fit and the
/// one-group baseline are computed in-line.
pub fn cmd_cluster(cfg: &RunConfig) -> Result<Outcome> {
    cfg.validate()?;
    if !cfg.auto_clusters && (cfg.h1.is_none() || cfg.h2.is_none()) {
        return Err(Error::Validation(
            "give both --h1 and --h2, or --auto-clusters".into(),
        ));
    }
    let start = Instant::now();
    let hash = cfg.hash()?;
    let (_, stats) = load(cfg)?;
    let (basis, fixed) = fixed_fit(cfg, &stats)?;
    let pl_fixed = *fixed.trace.last().unwrap_or(&f64::NAN);
    let alphas: Vec<Vec<f64>> = fixed.params.iter().map(|p| p.alpha.clone()).collect();
    let betas: Vec<Vec<f64>> = fixed.params.iter().map(|p| p.beta.clone()).collect();
    let (h1, h2) = if cfg.auto_clusters {
        (
            select_k(&alphas, cfg.bss_threshold, cfg.seed)?,
            select_k(&betas, cfg.bss_threshold, cfg.seed)?,
        )
    } else {
        (cfg.h1.unwrap_or(1), cfg.h2.unwrap_or(1))
    };
    info!("clustering with h1 = {h1}, h2 = {h2}");
    let fc = cfg.fit_config();
    let baseline = fit_clustered(&stats, &basis, &fixed.params, 1, 1, &fc)?;
    let model: ClusterModel = if h1 == 1 && h2 == 1 {
        baseline.clone()
    } else {
        fit_clustered(&stats, &basis, &fixed.params, h1, h2, &fc)?
    };
    let ratio = match improvement_ratio(model.cpl, baseline.cpl, pl_fixed) {
        Ok(r) => Some(r),
        Err(Error::Undefined(msg)) => {
            log::warn!("{msg}");
            None
        }
        Err(e) => return Err(e),
    };

    let comment = header_comment(&hash, Some(&basis));
    let mut w = Writer::new(&cfg.out)?;
    let rows: Vec<Vec<String>> = stats
        .actor_ids()
        .iter()
        .enumerate()
        .map(|(i, a)| {
            vec![
                a.clone(),
                (model.d1[i] + 1).to_string(),
                (model.d2[i] + 1).to_string(),
            ]
        })
        .collect();
    let header: Vec<String> = ["actor", "d1", "d2"].iter().map(|s| s.to_string()).collect();
    w.csv("clusters.csv", &comment, &header, &rows)?;

    let mut rows = Vec::new();
    for (kind, which, centers) in [
        ("participation", Basis::Participation, &model.alpha_star),
        ("collaboration", Basis::Collaboration, &model.beta_star),
    ] {
        for (g, c) in centers.iter().enumerate() {
            for t in 0..basis.periods() {
                rows.push(vec![
                    kind.to_string(),
                    (g + 1).to_string(),
                    basis.labels()[t].clone(),
                    f(dot(&basis.row(t, which)?, c)),
                ]);
            }
        }
    }
    let header: Vec<String> = ["cluster_type", "cluster_id", "period_label", "value"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    w.csv("cluster_profiles.csv", &comment, &header, &rows)?;

    let cross = cross_classification(&model);
    let mut header = vec!["d1".to_string()];
    header.extend((1..=model.h2()).map(|g| format!("d2_{g}")));
    header.push("total".into());
    let mut rows: Vec<Vec<String>> = cross
        .counts
        .iter()
        .zip(&cross.row_totals)
        .enumerate()
        .map(|(g, (r, tot))| {
            let mut row = vec![(g + 1).to_string()];
            row.extend(r.iter().map(|c| c.to_string()));
            row.push(tot.to_string());
            row
        })
        .collect();
    let mut last = vec!["total".to_string()];
    last.extend(cross.col_totals.iter().map(|c| c.to_string()));
    last.push(cross.total.to_string());
    rows.push(last);
    w.csv("cross_class.csv", &comment, &header, &rows)?;

    let report = ClusterReport {
        tool: "biplik",
        version: VERSION,
        config: cfg,
        config_sha256: &hash,
        time_map: time_map(&basis),
        h1,
        h2,
        selection: Selection {
            auto: cfg.auto_clusters,
            threshold: cfg.bss_threshold,
            bss_tss_participation: bss_curve(&alphas, h1, cfg.seed)?,
            bss_tss_collaboration: bss_curve(&betas, h2, cfg.seed)?,
        },
        pl_fixed,
        pl_fixed_normalized: fixed.normalized,
        fixed_converged: fixed.converged,
        cpl: model.cpl,
        cpl_normalized: model.cpl_normalized,
        cpl_trace: &model.trace,
        iterations: model.iterations,
        converged: model.converged,
        cpl_one_group: baseline.cpl,
        cpl_one_group_normalized: baseline.cpl_normalized,
        improvement_ratio: ratio,
        cross_classification: cross,
    };
    w.json("cluster_report.json", &report)?;
    w.timing(start.elapsed().as_secs_f64(), cfg.threads)?;
    Ok(Outcome {
        converged: fixed.converged && model.converged && baseline.converged,
        files: w.files,
    })
}

/// Synthetic corpus from a JSON simulation spec: `events.csv` (or
/// `events.jsonl`) and `truth.json`.
pub fn cmd_simulate(cfg: &RunConfig) -> Result<Outcome> {
    cfg.validate()?;
    let start = Instant::now();
    let hash = cfg.hash()?;
    let spec: SimSpec = serde_json::from_slice(&fs::read(&cfg.input)?)?;
    let (corpus, truth) = simulate(&spec, cfg.seed, cfg.condition_nonempty)?;
    let basis = spec.basis()?;
    let mut w = Writer::new(&cfg.out)?;
    let name = match cfg.events_format {
        EventsFormat::Csv => "events.csv",
        EventsFormat::Jsonl => "events.jsonl",
    };
    let comment = header_comment(&hash, Some(&basis));
    let p = w.path(name);
    write_events_path(&p, &corpus.events, &[comment[2..].to_string()])?;
    w.json("truth.json", &truth)?;
    w.timing(start.elapsed().as_secs_f64(), cfg.threads)?;
    Ok(Outcome {
        converged: true,
        files: w.files,
    })
}

/// Descriptive statistics of an event file as `summary.md`.
pub fn cmd_report(cfg: &RunConfig) -> Result<Outcome> {
    cfg.validate()?;
    let start = Instant::now();
    let (records, stats) = load(cfg)?;
    let mut w = Writer::new(&cfg.out)?;
    w.text("summary.md", &summary_markdown(&records, &stats))?;
    w.timing(start.elapsed().as_secs_f64(), cfg.threads)?;
    Ok(Outcome {
        converged: true,
        files: w.files,
    })
}

/// Corpus-wide figures shown in `summary.md`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusSummary {
    pub events: u64,
    pub actors: usize,
    pub single_actor_events: u64,
    pub empty_events: u64,
    pub mean_actors_per_event: f64,
    /// Number of events with a given number of actors.
    pub size_distribution: BTreeMap<usize, u64>,
    /// Number of actors with a given number of events.
    pub activity_distribution: BTreeMap<u64, u64>,
}

pub fn corpus_summary(records: &[EventRecord], stats: &PanelStats) -> CorpusSummary {
    let mut size_distribution = BTreeMap::new();
    for per in event_size_table(records).values() {
        for (k, c) in per {
            *size_distribution.entry(*k).or_insert(0) += c;
        }
    }
    let events: u64 = size_distribution.values().sum();
    let slots: u64 = size_distribution.iter().map(|(k, c)| *k as u64 * c).sum();
    let mut activity_distribution = BTreeMap::new();
    for c in stats.actor_totals() {
        *activity_distribution.entry(c).or_insert(0) += 1;
    }
    CorpusSummary {
        events,
        actors: stats.n_actors(),
        single_actor_events: size_distribution.get(&1).copied().unwrap_or(0),
        empty_events: size_distribution.get(&0).copied().unwrap_or(0),
        mean_actors_per_event: if events == 0 { 0.0 } else { slots as f64 / events as f64 },
        size_distribution,
        activity_distribution,
    }
}

pub fn summary_markdown(records: &[EventRecord], stats: &PanelStats) -> String {
    let s = corpus_summary(records, stats);
    let by_period = event_size_table(records);
    let max_size = s.size_distribution.keys().copied().max().unwrap_or(0);
    let mut out = String::new();
    let _ = writeln!(out, "# Corpus summary\n");
    let _ = writeln!(out, "- events: {}", s.events);
    let _ = writeln!(out, "- actors: {}", s.actors);
    let _ = writeln!(out, "- periods: {}", stats.n_periods());
    let _ = writeln!(out, "- single-actor events: {}", s.single_actor_events);
    let _ = writeln!(out, "- events without actors: {}", s.empty_events);
    let _ = writeln!(out, "- mean actors per event: {:.3}", s.mean_actors_per_event);

    let _ = writeln!(out, "\n## Events per period\n");
    let mut head = String::from("| period | events | mean actors |");
    let mut rule = String::from("|---|---:|---:|");
    for k in 0..=max_size {
        let _ = write!(head, " {k} |");
        rule.push_str("---:|");
    }
    let _ = writeln!(out, "{head}\n{rule}");
    for (t, label) in stats.period_labels().iter().enumerate() {
        let per = by_period.get(label);
        let m = stats.events_per_period()[t];
        let slots: u64 = per.map_or(0, |p| p.iter().map(|(k, c)| *k as u64 * c).sum());
        let mean = if m == 0 { 0.0 } else { slots as f64 / m as f64 };
        let _ = write!(out, "| {label} | {m} | {mean:.3} |");
        for k in 0..=max_size {
            let c = per.and_then(|p| p.get(&k)).copied().unwrap_or(0);
            let _ = write!(out, " {c} |");
        }
        out.push('\n');
    }

    let _ = writeln!(out, "\n## Actors per event\n\n| actors | events |\n|---:|---:|");
    for (k, c) in &s.size_distribution {
        let _ = writeln!(out, "| {k} | {c} |");
    }
    let _ = writeln!(out, "\n## Actor activity\n\n| events | actors |\n|---:|---:|");
    for (k, c) in &s.activity_distribution {
        let _ = writeln!(out, "| {k} | {c} |");
    }
    out
}

/// Runs `f` on a pool of `threads` workers, or the global pool when `None`.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .map_err(|e| Error::Internal(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}
