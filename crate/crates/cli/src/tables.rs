//! CSV tables consumed by the plotting tools.
//!
//! Missing values (no data, no fit) are written as empty fields.

use std::path::Path;

use anyhow::{Context, Result};
use qudit_net::analysis::{FieldFit, ParityFit, ParityScanData, StateEstimate};
use qudit_net::interference::BellLabel;
use qudit_net::noise::Field;
use qudit_net::ratemodel::RateTable;
use serde::Serialize;

fn opt(x: Option<f64>) -> Option<f64> {
    x.filter(|v| v.is_finite())
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>, header: &[&str]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot create {}", path.display()))?;
    let mut empty = true;
    for row in rows {
        w.serialize(row)?;
        empty = false;
    }
    if empty {
        w.write_record(header)?;
    }
    w.flush()?;
    Ok(())
}

pub fn sign_str(label: &BellLabel) -> String {
    label.sign.symbol().to_string()
}

#[derive(Serialize)]
pub struct StateRow {
    pub state: String,
    pub n: u32,
    pub m: u32,
    pub sign: String,
    #[serde(rename = "P")]
    pub p: Option<f64>,
    #[serde(rename = "sigma_P")]
    pub sigma_p: Option<f64>,
    #[serde(rename = "C")]
    pub c: Option<f64>,
    #[serde(rename = "sigma_C")]
    pub sigma_c: Option<f64>,
    pub phi0: Option<f64>,
    #[serde(rename = "F")]
    pub f: Option<f64>,
    #[serde(rename = "sigma_F")]
    pub sigma_f: Option<f64>,
    pub population_shots: u64,
    pub parity_shots: u64,
    /// `ok`, `empty`, `no_parity` or `no_population`.
    pub status: &'static str,
}

pub const STATE_COLUMNS: [&str; 14] = [
    "state", "n", "m", "sign", "P", "sigma_P", "C", "sigma_C", "phi0", "F", "sigma_F", "population_shots",
    "parity_shots", "status",
];

impl From<&StateEstimate> for StateRow {
    fn from(e: &StateEstimate) -> Self {
        let status = match (e.population.is_empty(), e.fit.is_none()) {
            _ if e.is_empty() => "empty",
            (false, false) => "ok",
            (false, true) => "no_parity",
            (true, _) => "no_population",
        };
        let pop = (!e.population.is_empty()).then_some(e.population);
        StateRow {
            state: e.label.state_name(),
            n: e.label.n,
            m: e.label.m,
            sign: sign_str(&e.label),
            p: opt(pop.map(|p| p.p)),
            sigma_p: opt(pop.map(|p| p.sigma)),
            c: e.fit.map(|f| f.contrast),
            sigma_c: opt(e.fit.map(|f| f.sigma_contrast)),
            phi0: e.fit.map(|f| f.phi0),
            f: opt(e.fidelity.map(|f| f.value)),
            sigma_f: opt(e.fidelity.map(|f| f.sigma)),
            population_shots: e.population.successes,
            parity_shots: e.parity_shots,
            status,
        }
    }
}

pub fn write_states(path: &Path, table: &[StateEstimate]) -> Result<()> {
    write_rows(path, table.iter().map(StateRow::from), &STATE_COLUMNS)
}

#[derive(Serialize)]
struct ParityRow {
    state: String,
    n: u32,
    m: u32,
    sign: String,
    delta_phi: f64,
    even: u64,
    odd: u64,
    shots: u64,
    parity: f64,
    sigma: f64,
    fit_contrast: Option<f64>,
    fit_phi0: Option<f64>,
    model: Option<f64>,
}

const PARITY_COLUMNS: [&str; 13] = [
    "state", "n", "m", "sign", "delta_phi", "even", "odd", "shots", "parity", "sigma", "fit_contrast", "fit_phi0",
    "model",
];

/// One row per scan point; scans without a label are skipped.
pub fn write_parity(path: &Path, scans: &[(ParityScanData, Option<ParityFit>)]) -> Result<()> {
    let rows = scans.iter().flat_map(|(scan, fit)| {
        scan.label.into_iter().flat_map(move |label| {
            scan.points.iter().map(move |pt| ParityRow {
                state: label.state_name(),
                n: label.n,
                m: label.m,
                sign: sign_str(&label),
                delta_phi: pt.delta_phi,
                even: pt.even,
                odd: pt.odd,
                shots: pt.shots(),
                parity: pt.mean(),
                sigma: pt.sigma(),
                fit_contrast: fit.map(|f| f.contrast),
                fit_phi0: fit.map(|f| f.phi0),
                model: fit.map(|f| f.model(pt.delta_phi)),
            })
        })
    });
    write_rows(path, rows, &PARITY_COLUMNS)
}

#[derive(Serialize)]
struct DriftRow {
    window_start: f64,
    window_end: f64,
    centre: f64,
    delta_b_mg: Option<f64>,
    sigma_mg: Option<f64>,
    underdetermined: bool,
    true_delta_b_mg: f64,
}

const DRIFT_COLUMNS: [&str; 7] =
    ["window_start", "window_end", "centre", "delta_b_mg", "sigma_mg", "underdetermined", "true_delta_b_mg"];

/// Fitted `δB` per window next to the simulated field averaged over the exposure.
pub fn write_drift(path: &Path, fit: &FieldFit, truth: &Field) -> Result<()> {
    let rows = fit.windows.iter().map(|w| DriftRow {
        window_start: w.start,
        window_end: w.end,
        centre: w.centre,
        delta_b_mg: w.delta_b.map(|b| b.value),
        sigma_mg: opt(w.delta_b.map(|b| b.sigma)),
        underdetermined: w.underdetermined,
        true_delta_b_mg: truth.value(w.centre + fit.exposure_s / 2.0),
    });
    write_rows(path, rows, &DRIFT_COLUMNS)
}

#[derive(Clone, Debug, Serialize)]
pub struct FractionRow {
    pub d: u32,
    pub attempts: u64,
    pub bell_heralds: u64,
    pub fraction: f64,
    pub sigma: f64,
    pub theory: f64,
}

const FRACTION_COLUMNS: [&str; 6] = ["d", "attempts", "bell_heralds", "fraction", "sigma", "theory"];

pub fn write_fractions(path: &Path, rows: &[FractionRow]) -> Result<()> {
    write_rows(path, rows, &FRACTION_COLUMNS)
}

#[derive(Serialize)]
struct RateCsvRow {
    d: u32,
    success_fraction: f64,
    p_a: f64,
    p_b: f64,
    p_ent: f64,
    period_us: f64,
    rate_per_s: f64,
    optimal: bool,
}

const RATE_COLUMNS: [&str; 8] = ["d", "success_fraction", "p_a", "p_b", "p_ent", "period_us", "rate_per_s", "optimal"];

pub fn write_rate(path: &Path, table: &RateTable, p_a: f64, p_b: f64) -> Result<()> {
    let rows = table.rows.iter().map(|r| RateCsvRow {
        d: r.d,
        success_fraction: r.success_fraction,
        p_a,
        p_b,
        p_ent: r.p_ent,
        period_us: r.period_us,
        rate_per_s: r.rate_per_s,
        optimal: r.d == table.optimal_d,
    });
    write_rows(path, rows, &RATE_COLUMNS)
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub parameter: String,
    pub value: String,
    pub d: u32,
    pub attempts: u64,
    pub successes: u64,
    pub bell_heralds: u64,
    pub p_ent: f64,
    pub sigma_p_ent: f64,
    pub fraction: f64,
    pub sigma_fraction: f64,
    pub rejection: f64,
    /// Mean simulated state fidelity of successes with `m − n = 1`.
    pub fidelity_adjacent: Option<f64>,
    /// Same for `m − n > 1`.
    pub fidelity_distant: Option<f64>,
}

const SWEEP_COLUMNS: [&str; 13] = [
    "parameter", "value", "d", "attempts", "successes", "bell_heralds", "p_ent", "sigma_p_ent", "fraction",
    "sigma_fraction", "rejection", "fidelity_adjacent", "fidelity_distant",
];

pub fn write_sweep(path: &Path, rows: &[SweepRow]) -> Result<()> {
    write_rows(path, rows, &SWEEP_COLUMNS)
}
