//! Subcommand implementations.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use qudit_net::analysis::{
    estimate_state_with_scan, extract_success_fraction, feed_forward_rephase, fit_differential_field, fit_parity,
    phase_series, ParityScanData, StateEstimate,
};
use qudit_net::experiment::{
    DispositionCounts, EventLog, ExperimentConfig, Mode, Simulator, Stop, SHARD_SIZE,
};
use qudit_net::interference::{success_fraction, BellLabel};
use qudit_net::noise::SensitivityTable;
use qudit_net::ratemodel::{budget_total, rate_table_with_fractions, EfficiencyBudget};
use qudit_net::stats::Measured;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ConfigFile, ExperimentSection};
use crate::logio::{read_log, write_log};
use crate::tables::{self, FractionRow, SweepRow};

/// Error carrying its exit status: 1 for usage and configuration, 2 for runtime.
#[derive(Debug)]
pub enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }

    pub fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Usage(e) | Failure::Runtime(e) => e,
        }
    }
}

pub type Outcome<T = ()> = std::result::Result<T, Failure>;

trait Classify<T> {
    fn usage(self) -> Outcome<T>;
    fn runtime(self) -> Outcome<T>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for std::result::Result<T, E> {
    fn usage(self) -> Outcome<T> {
        self.map_err(|e| Failure::Usage(e.into()))
    }

    fn runtime(self) -> Outcome<T> {
        self.map_err(|e| Failure::Runtime(e.into()))
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub dimension: Option<u32>,
    pub attempts: Option<u64>,
    pub successes: Option<u64>,
    pub jobs: Option<usize>,
    pub feed_forward: bool,
}

pub fn load_config(path: Option<&Path>) -> Outcome<ConfigFile> {
    match path {
        Some(p) => ConfigFile::load(p).usage(),
        None => ConfigFile::parse("").usage(),
    }
}

fn experiment_section(file: &ConfigFile, ov: &Overrides) -> Outcome<ExperimentSection> {
    let mut section = match (&file.experiment, ov.dimension) {
        (Some(s), _) => s.clone(),
        (None, Some(d)) => ExperimentSection::new(d),
        (None, None) => return Err(Failure::Usage(anyhow!("missing [experiment] section (or pass --dimension)"))),
    };
    if let Some(d) = ov.dimension {
        section.d = d;
    }
    if let Some(s) = ov.seed {
        section.seed = Some(s);
    }
    Ok(section)
}

fn stop(file: &ConfigFile, ov: &Overrides) -> Outcome<Stop> {
    match (ov.attempts, ov.successes) {
        (Some(n), None) => Ok(Stop::Attempts(n)),
        (None, Some(n)) => Ok(Stop::Successes(n)),
        (Some(_), Some(_)) => Err(Failure::Usage(anyhow!("--attempts and --successes are exclusive"))),
        (None, None) => file.stop().usage(),
    }
}

fn jobs(file: &ConfigFile, ov: &Overrides) -> usize {
    ov.jobs
        .or(file.run.jobs)
        .filter(|&j| j > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, usize::from))
}

fn check_reachable(cfg: &ExperimentConfig, stop: Stop) -> Outcome {
    if let (Stop::Successes(_), Mode::Physical) = (stop, cfg.mode) {
        if cfg.node_a.p_detect == 0.0 || cfg.node_b.p_detect == 0.0 {
            return Err(Failure::Usage(anyhow!("a successes stop cannot be reached with a zero detection probability")));
        }
    }
    Ok(())
}

/// Campaign with shards spread over the current rayon pool. The result does
/// not depend on the number of threads.
pub fn run_log(cfg: &ExperimentConfig, stop: Stop, batch: usize) -> anyhow::Result<EventLog> {
    let sim = Simulator::new(cfg)?;
    let shards = match stop {
        Stop::Attempts(0) | Stop::Successes(0) => bail!("stop count must be positive"),
        Stop::Attempts(n) => {
            let ranges: Vec<_> = Simulator::shard_ranges(n).collect();
            ranges.par_iter().map(|&(k, start, end)| sim.run_range(k, start, end, None)).collect::<Result<Vec<_>, _>>()?
        }
        Stop::Successes(n) => {
            // Each shard may stop once it alone has the remaining successes;
            // the merge truncates at the n-th success in shard order.
            let mut shards = Vec::new();
            let mut found = 0;
            let mut next = 0u64;
            while found < n {
                let remaining = n - found;
                let batch_shards = (next..next + batch.max(1) as u64)
                    .into_par_iter()
                    .map(|k| sim.run_range(k, k * SHARD_SIZE, (k + 1) * SHARD_SIZE, Some(remaining)))
                    .collect::<Result<Vec<_>, _>>()?;
                found += batch_shards.iter().flat_map(|s| &s.records).filter(|r| r.is_success()).count() as u64;
                next += batch.max(1) as u64;
                shards.extend(batch_shards);
            }
            shards
        }
    };
    Ok(sim.merge(stop, shards))
}

fn pool(threads: usize) -> Outcome<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().runtime()
}

/// Contents of `summary.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub d: u32,
    pub mode: Mode,
    pub seed: u64,
    pub stop: Stop,
    pub attempts: u64,
    pub successes: u64,
    pub bell_heralds: u64,
    pub p_ent: f64,
    pub sigma_p_ent: f64,
    /// `P_ent/(p_A·p_B)` with the detection probabilities used in the run.
    pub success_fraction: f64,
    pub sigma_success_fraction: f64,
    pub rejection_fraction: f64,
    pub wall_time_s: f64,
    pub counts: DispositionCounts,
}

/// Detection probabilities the attempts were sampled with.
fn effective_p(cfg: &ExperimentConfig) -> (f64, f64) {
    match cfg.mode {
        Mode::Physical => (cfg.node_a.p_detect, cfg.node_b.p_detect),
        Mode::PostSelected => (1.0, 1.0),
    }
}

fn fraction_of(cfg: &ExperimentConfig, p_ent: Measured) -> Measured {
    let (p_a, p_b) = effective_p(cfg);
    extract_success_fraction(p_ent, Measured::new(p_a, 0.0), Measured::new(p_b, 0.0))
        .unwrap_or(Measured::new(f64::NAN, f64::NAN))
}

pub fn run_summary(log: &EventLog) -> RunSummary {
    let s = log.summary();
    let cfg = &log.header.config;
    let f = fraction_of(cfg, Measured::new(s.p_ent, s.sigma_p_ent));
    RunSummary {
        d: cfg.d,
        mode: cfg.mode,
        seed: cfg.seed,
        stop: log.header.stop,
        attempts: s.attempts,
        successes: s.counts.success,
        bell_heralds: s.bell_heralds,
        p_ent: s.p_ent,
        sigma_p_ent: s.sigma_p_ent,
        success_fraction: f.value,
        sigma_success_fraction: f.sigma,
        rejection_fraction: s.rejection_fraction,
        wall_time_s: s.wall_time_s,
        counts: s.counts,
    }
}

fn fraction_row(summary: &RunSummary) -> FractionRow {
    FractionRow {
        d: summary.d,
        attempts: summary.attempts,
        bell_heralds: summary.bell_heralds,
        fraction: summary.success_fraction,
        sigma: summary.sigma_success_fraction,
        theory: success_fraction(summary.d),
    }
}

#[derive(Serialize)]
struct ConfigEcho<'a> {
    experiment: &'a ExperimentConfig,
    stop: Stop,
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("cannot write {}", path.display()))
}

fn prepare_run_dir(dir: &Path, force: bool) -> Outcome {
    let log = dir.join("log.jsonl");
    if log.exists() && !force {
        return Err(Failure::Usage(anyhow!("{} exists; pass --force to overwrite", log.display())));
    }
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display())).runtime()
}

/// Writes `log.jsonl`, `config.json`, `summary.json` and `fractions.csv` into `dir`.
fn write_run(dir: &Path, cfg: &ExperimentConfig, log: &EventLog) -> anyhow::Result<RunSummary> {
    write_log(&dir.join("log.jsonl"), log)?;
    write_json(&dir.join("config.json"), &ConfigEcho { experiment: cfg, stop: log.header.stop })?;
    let summary = run_summary(log);
    write_json(&dir.join("summary.json"), &summary)?;
    tables::write_fractions(&dir.join("fractions.csv"), &[fraction_row(&summary)])?;
    Ok(summary)
}

fn print_summary(s: &RunSummary) {
    println!("d = {}, mode = {:?}, seed = {}", s.d, s.mode, s.seed);
    println!("attempts       {}", s.attempts);
    println!("successes      {}", s.successes);
    println!("bell heralds   {}", s.bell_heralds);
    println!("P_ent          {:.4e} ± {:.1e}", s.p_ent, s.sigma_p_ent);
    println!("success frac.  {:.4} ± {:.4} (ideal {:.4})", s.success_fraction, s.sigma_success_fraction, success_fraction(s.d));
    println!("rejected       {:.2}%", 100.0 * s.rejection_fraction);
    let c = &s.counts;
    println!(
        "dispositions   success {}, same-bin {}, dark-dark {}, erasure {}, no herald {}",
        c.success, c.discard_same_bin, c.discard_dark_dark, c.erasure_veto, c.no_herald
    );
}

pub fn simulate(file: &ConfigFile, ov: &Overrides, out: &Path, force: bool) -> Outcome {
    let cfg = experiment_section(file, ov)?.build(&file.base_dir).usage()?;
    let stop = stop(file, ov)?;
    check_reachable(&cfg, stop)?;
    prepare_run_dir(out, force)?;
    let threads = jobs(file, ov);
    let log = pool(threads)?.install(|| run_log(&cfg, stop, threads)).runtime()?;
    let summary = write_run(out, &cfg, &log).runtime()?;
    print_summary(&summary);
    println!("wrote {}", out.display());
    Ok(())
}

/// Log files under `input`: the file itself, `input/log.jsonl`, or every
/// `.jsonl` file found recursively.
fn find_logs(input: &Path) -> Outcome<Vec<PathBuf>> {
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    if !input.is_dir() {
        return Err(Failure::Usage(anyhow!("{} does not exist", input.display())));
    }
    if input.join("log.jsonl").is_file() {
        return Ok(vec![input.join("log.jsonl")]);
    }
    let mut found = Vec::new();
    let mut stack = vec![input.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).with_context(|| format!("cannot list {}", dir.display())).runtime()? {
            let path = entry.runtime()?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e == "jsonl") {
                found.push(path);
            }
        }
    }
    found.sort();
    if found.is_empty() {
        return Err(Failure::Usage(anyhow!("no .jsonl logs under {}", input.display())));
    }
    Ok(found)
}

#[derive(Serialize)]
struct AnalysisReport {
    log: PathBuf,
    skipped_lines: u64,
    feed_forward: bool,
    /// Parity trials outside the fitted field windows, per state.
    excluded: Vec<(String, u64)>,
    summary: RunSummary,
}

pub struct AnalyzeOptions {
    pub window_s: f64,
    pub feed_forward: bool,
    pub strict: bool,
}

fn analyze_one(log_path: &Path, out: &Path, opts: &AnalyzeOptions) -> anyhow::Result<RunSummary> {
    let loaded = read_log(log_path, opts.strict)?;
    if loaded.skipped > 0 {
        eprintln!("{}: skipped {} corrupt line(s)", log_path.display(), loaded.skipped);
    }
    let log = &loaded.log;
    let cfg = &log.header.config;
    let d = cfg.d;
    let table = SensitivityTable::standard();
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;

    let exposure = cfg.noise.exposure_s;
    let field_fit = if exposure > 0.0 {
        let samples = phase_series(&log.records, d, opts.window_s)?;
        Some(fit_differential_field(&samples, d, &table, opts.window_s, exposure)?)
    } else {
        None
    };
    if let Some(fit) = &field_fit {
        tables::write_drift(&out.join("drift.csv"), fit, &cfg.noise.field.build()?)?;
    }

    let mut states: Vec<StateEstimate> = Vec::new();
    let mut scans = Vec::new();
    let mut excluded = Vec::new();
    for label in BellLabel::all(d) {
        let scan = match (&field_fit, opts.feed_forward) {
            (Some(fit), true) => {
                let r = feed_forward_rephase(&log.records, &label, d, &table, fit);
                excluded.push((label.state_name(), r.excluded));
                r.scan
            }
            _ => ParityScanData::from_log(log, &label),
        };
        states.push(estimate_state_with_scan(&log.records, &label, &scan));
        let fit = fit_parity(&scan).ok();
        scans.push((scan, fit));
    }
    if opts.feed_forward && field_fit.is_none() {
        eprintln!("{}: zero exposure, feed-forward has nothing to correct", log_path.display());
    }
    tables::write_states(&out.join("states.csv"), &states)?;
    tables::write_parity(&out.join("parity.csv"), &scans)?;
    let summary = run_summary(log);
    tables::write_fractions(&out.join("fractions.csv"), &[fraction_row(&summary)])?;
    write_json(
        &out.join("analysis.json"),
        &AnalysisReport {
            log: log_path.to_path_buf(),
            skipped_lines: loaded.skipped,
            feed_forward: opts.feed_forward,
            excluded,
            summary: summary.clone(),
        },
    )?;
    print_states(log_path, &states);
    Ok(summary)
}

fn fmt_m(v: Option<f64>, s: Option<f64>) -> String {
    match (v, s) {
        (Some(v), Some(s)) if v.is_finite() => format!("{v:.3}({:.0})", (s * 1000.0).round()),
        (Some(v), _) if v.is_finite() => format!("{v:.3}"),
        _ => String::from("-"),
    }
}

fn print_states(path: &Path, states: &[StateEstimate]) {
    println!("{}", path.display());
    println!("{:<14} {:>12} {:>12} {:>12} {:>8}", "state", "P", "C", "F", "status");
    for e in states {
        let row = tables::StateRow::from(e);
        println!(
            "{:<14} {:>12} {:>12} {:>12} {:>8}",
            row.state,
            fmt_m(row.p, row.sigma_p),
            fmt_m(row.c, row.sigma_c),
            fmt_m(row.f, row.sigma_f),
            row.status
        );
    }
}

pub fn analyze(input: &Path, file: &ConfigFile, ov: &Overrides, out: &Path, strict: bool) -> Outcome {
    let logs = find_logs(input)?;
    let opts = AnalyzeOptions {
        window_s: file.analysis.window_s,
        feed_forward: ov.feed_forward || file.analysis.feed_forward,
        strict,
    };
    if !(opts.window_s.is_finite() && opts.window_s > 0.0) {
        return Err(Failure::Usage(anyhow!("analysis.window_s must be > 0")));
    }
    let single = logs.len() == 1;
    let mut fractions = Vec::new();
    for path in &logs {
        let dir = if single {
            out.to_path_buf()
        } else {
            let rel = path.strip_prefix(input).unwrap_or(path).with_extension("");
            out.join(rel)
        };
        let summary = analyze_one(path, &dir, &opts).runtime()?;
        fractions.push(fraction_row(&summary));
    }
    if !single {
        tables::write_fractions(&out.join("fractions.csv"), &fractions).runtime()?;
    }
    println!("wrote {}", out.display());
    Ok(())
}

/// Budget product, or the given total with the budget's relative error.
fn detection(budget: &EfficiencyBudget, given: Option<f64>, node: &str) -> Outcome<Measured> {
    let total = budget_total(budget).with_context(|| format!("rate.budget_{node}")).usage()?;
    match given {
        None => Ok(total),
        Some(p) if p > 0.0 && p <= 1.0 => Ok(Measured::new(p, p * total.relative())),
        Some(p) => Err(Failure::Usage(anyhow!("rate.p_{node} = {p} is outside (0, 1]"))),
    }
}

pub fn rate(file: &ConfigFile, ov: &Overrides, out: &Path) -> Outcome {
    let r = &file.rate;
    let p_a = detection(&r.budget_a, r.p_a, "a")?;
    let p_b = detection(&r.budget_b, r.p_b, "b")?;
    let overrides = r.fraction_overrides().usage()?;
    let (lo, hi) = match ov.dimension {
        Some(d) => (d, d),
        None => (r.d_min, r.d_max),
    };
    if lo > hi {
        return Err(Failure::Usage(anyhow!("rate: d_min = {lo} exceeds d_max = {hi}")));
    }
    let table = rate_table_with_fractions(
        p_a.value,
        p_b.value,
        lo..=hi,
        |d| r.timing(d),
        |d| overrides.get(&d).copied().unwrap_or_else(|| success_fraction(d)),
    )
    .context("rate")
    .usage()?;

    println!("p_A = {:.5} ± {:.5}", p_a.value, p_a.sigma);
    println!("p_B = {:.5} ± {:.5}", p_b.value, p_b.sigma);
    println!("{:>3} {:>8} {:>11} {:>10} {:>10}", "d", "F(d)", "P_ent", "period_us", "R (1/s)");
    for row in &table.rows {
        let mark = if row.d == table.optimal_d { "  *" } else { "" };
        println!(
            "{:>3} {:>8.4} {:>11.3e} {:>10.2} {:>10.4}{mark}",
            row.d, row.success_fraction, row.p_ent, row.period_us, row.rate_per_s
        );
    }
    println!("optimal d = {}", table.optimal_d);
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display())).runtime()?;
    tables::write_rate(&out.join("rate.csv"), &table, p_a.value, p_b.value).runtime()?;
    println!("wrote {}", out.join("rate.csv").display());
    Ok(())
}

/// Text of a sweep value as written to `sweep.csv`.
fn value_text(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Configuration of one sweep point.
pub fn sweep_point(section: &ExperimentSection, base_dir: &Path, parameter: &str, value: &toml::Value) -> anyhow::Result<ExperimentConfig> {
    let mut section = section.clone();
    let int = |v: &toml::Value| v.as_integer().with_context(|| format!("{parameter}: `{v}` is not an integer"));
    match parameter {
        "d" => section.d = u32::try_from(int(value)?).context("d out of range")?,
        "seed" => section.seed = Some(u64::try_from(int(value)?).context("seed out of range")?),
        "parity_points" => {
            section.schedule = None;
            section.parity_points = Some(u32::try_from(int(value)?).context("parity_points out of range")?);
        }
        _ => {
            let cfg = section.build(base_dir)?;
            let mut json = serde_json::to_value(&cfg)?;
            let mut slot = &mut json;
            for key in parameter.split('.') {
                slot = slot
                    .as_object_mut()
                    .and_then(|o| o.get_mut(key))
                    .with_context(|| format!("unknown sweep parameter `{parameter}`"))?;
            }
            *slot = serde_json::to_value(value)?;
            let cfg: ExperimentConfig =
                serde_json::from_value(json).with_context(|| format!("sweep value `{value}` for `{parameter}`"))?;
            cfg.validate().with_context(|| format!("sweep value `{value}` for `{parameter}`"))?;
            return Ok(cfg);
        }
    }
    section.build(base_dir)
}

/// Mean simulated fidelity of successes whose bins are adjacent (`true`) or not.
fn mean_fidelity(log: &EventLog, adjacent: bool) -> Option<f64> {
    let vals: Vec<f64> = log
        .successes()
        .filter(|r| r.bell().is_some_and(|l| (l.m - l.n == 1) == adjacent))
        .filter_map(|r| r.state_fidelity)
        .collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

pub fn sweep(file: &ConfigFile, ov: &Overrides, out: &Path, force: bool) -> Outcome {
    let grid = file.sweep.as_ref().ok_or_else(|| Failure::Usage(anyhow!("missing [sweep] section")))?;
    if grid.values.is_empty() {
        return Err(Failure::Usage(anyhow!("sweep.values is empty")));
    }
    let section = experiment_section(file, ov)?;
    let stop = stop(file, ov)?;
    let points: Vec<ExperimentConfig> = grid
        .values
        .iter()
        .map(|v| sweep_point(&section, &file.base_dir, &grid.parameter, v))
        .collect::<anyhow::Result<_>>()
        .usage()?;
    let dirs: Vec<PathBuf> = (0..points.len()).map(|i| out.join(format!("point_{i:03}"))).collect();
    for (cfg, dir) in points.iter().zip(&dirs) {
        check_reachable(cfg, stop)?;
        prepare_run_dir(dir, force)?;
    }
    let threads = jobs(file, ov);
    let results: Vec<(RunSummary, Option<f64>, Option<f64>)> = pool(threads)?
        .install(|| {
            points
                .par_iter()
                .zip(&dirs)
                .map(|(cfg, dir)| {
                    let log = run_log(cfg, stop, threads)?;
                    let summary = write_run(dir, cfg, &log)?;
                    Ok((summary, mean_fidelity(&log, true), mean_fidelity(&log, false)))
                })
                .collect::<anyhow::Result<Vec<_>>>()
        })
        .runtime()?;
    let rows: Vec<SweepRow> = grid
        .values
        .iter()
        .zip(&results)
        .map(|(v, (s, adj, dist))| SweepRow {
            parameter: grid.parameter.clone(),
            value: value_text(v),
            d: s.d,
            attempts: s.attempts,
            successes: s.successes,
            bell_heralds: s.bell_heralds,
            p_ent: s.p_ent,
            sigma_p_ent: s.sigma_p_ent,
            fraction: s.success_fraction,
            sigma_fraction: s.sigma_success_fraction,
            rejection: s.rejection_fraction,
            fidelity_adjacent: *adj,
            fidelity_distant: *dist,
        })
        .collect();
    tables::write_sweep(&out.join("sweep.csv"), &rows).runtime()?;
    tables::write_fractions(&out.join("fractions.csv"), &results.iter().map(|r| fraction_row(&r.0)).collect::<Vec<_>>())
        .runtime()?;
    println!("{:>12} {:>3} {:>10} {:>10} {:>8}", grid.parameter, "d", "attempts", "fraction", "F(m-n=1)");
    for r in &rows {
        println!(
            "{:>12} {:>3} {:>10} {:>10.4} {:>8}",
            r.value,
            r.d,
            r.attempts,
            r.fraction,
            r.fidelity_adjacent.map_or(String::from("-"), |f| format!("{f:.4}"))
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}

/// Checks every section the file provides.
pub fn validate_config(file: &ConfigFile, ov: &Overrides) -> Outcome {
    if file.experiment.is_some() || ov.dimension.is_some() {
        let section = experiment_section(file, ov)?;
        let cfg = section.build(&file.base_dir).usage()?;
        if let Some(grid) = &file.sweep {
            for v in &grid.values {
                sweep_point(&section, &file.base_dir, &grid.parameter, v).usage()?;
            }
        }
        let stop = stop(file, ov)?;
        check_reachable(&cfg, stop)?;
        println!("experiment: d = {}, mode = {:?}, seed = {}, stop = {:?}", cfg.d, cfg.mode, cfg.seed, stop);
    } else if file.sweep.is_some() {
        return Err(Failure::Usage(anyhow!("[sweep] needs an [experiment] section")));
    }
    detection(&file.rate.budget_a, file.rate.p_a, "a")?;
    detection(&file.rate.budget_b, file.rate.p_b, "b")?;
    file.rate.fraction_overrides().usage()?;
    if !(file.analysis.window_s.is_finite() && file.analysis.window_s > 0.0) {
        return Err(Failure::Usage(anyhow!("analysis.window_s must be > 0")));
    }
    println!("config ok");
    Ok(())
}
