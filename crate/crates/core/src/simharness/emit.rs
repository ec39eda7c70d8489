//! CSV tables written from a [`RunOutput`].

use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{IntervalRow, MetricsRow, RunConfig, RunOutput};
use crate::error::Result;
use crate::datagen::PRESETS;
use crate::models::CovariateForm;

pub const OUTPUT_FILES: [&str; 9] = [
    "table1.csv",
    "table2.csv",
    "table3.csv",
    "sweep.csv",
    "subpop_error.csv",
    "interval_stats.csv",
    "figure_data.csv",
    "tableA1.csv",
    "ps_hist.csv",
];

#[derive(Serialize)]
struct MetricsRecord<'a> {
    scenario: &'a str,
    prevalence: f64,
    d: f64,
    n: usize,
    spec: String,
    method: &'static str,
    trim: Option<f64>,
    refit_after_trim: bool,
    bias: f64,
    rmse: f64,
    variance: f64,
    mc_se_bias: f64,
    n_ok: usize,
    missing_rate: f64,
    missing_reasons: String,
    ps_nonconverged_rate: f64,
}

impl<'a> From<&'a MetricsRow> for MetricsRecord<'a> {
    fn from(r: &'a MetricsRow) -> Self {
        MetricsRecord {
            scenario: &r.scenario,
            prevalence: r.prevalence,
            d: r.d,
            n: r.n,
            spec: r.spec.label(),
            method: r.config.method.as_str(),
            trim: r.config.trim,
            refit_after_trim: r.config.refit_after_trim,
            bias: r.bias,
            rmse: r.rmse,
            variance: r.variance,
            mc_se_bias: r.mc_se_bias,
            n_ok: r.n_ok,
            missing_rate: r.missing_rate,
            missing_reasons: r.missing.iter().map(|(k, v)| format!("{k}:{v}")).collect::<Vec<_>>().join(";"),
            ps_nonconverged_rate: r.ps_nonconverged_rate,
        }
    }
}

#[derive(Serialize)]
struct SubpopRecord<'a> {
    scenario: &'a str,
    n: usize,
    spec: String,
    population: &'static str,
    mean: Option<f64>,
    mav: Option<f64>,
    n_reps: usize,
}

#[derive(Serialize)]
struct IntervalRecord<'a> {
    scenario: &'a str,
    figure_panel: Option<char>,
    n: usize,
    spec: String,
    quantity: &'static str,
    interval: usize,
    lo: f64,
    hi: f64,
    mav: Option<f64>,
    phi: Option<f64>,
    relative_mav: Option<f64>,
    scaled_relative_mav: Option<f64>,
}

#[derive(Serialize)]
struct A1Record<'a> {
    scenario: &'a str,
    prevalence_target: f64,
    d: f64,
    alpha0: f64,
    calibrated_alpha0: Option<f64>,
    realized_prevalence: Option<f64>,
    pct_outside_05_95: Option<f64>,
}

#[derive(Serialize)]
struct HistRecord<'a> {
    scenario: &'a str,
    interval: usize,
    lo: f64,
    hi: f64,
    mass: f64,
    treated: usize,
    control: usize,
}

/// Figure panels (a) to (d) follow the preset order; custom scenarios have none.
fn figure_panel(scenario: &str) -> Option<char> {
    PRESETS.iter().position(|p| p.0 == scenario).map(|i| (b'a' + i as u8) as char)
}

fn interval_record(r: &IntervalRow) -> IntervalRecord<'_> {
    IntervalRecord {
        scenario: &r.scenario,
        figure_panel: figure_panel(&r.scenario),
        n: r.n,
        spec: r.spec.label(),
        quantity: r.quantity.as_str(),
        interval: r.interval,
        lo: r.interval_lo,
        hi: r.interval_hi,
        mav: r.mav,
        phi: r.phi,
        relative_mav: r.relative_mav,
        scaled_relative_mav: r.scaled_relative_mav,
    }
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn mentions(r: &MetricsRow, form: CovariateForm) -> bool {
    r.spec.ps_form == form || r.spec.outcome_form == form
}

/// Writes every table of [`OUTPUT_FILES`] into `dir` and returns the paths.
///
/// Tables 1-3 hold the primary sample size: correct models, wrong functional
/// form and omitted covariates. The sweep holds every sample size.
pub fn emit_tables(out: &RunOutput, cfg: &RunConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let rows = &out.metrics.rows;
    let primary = |r: &&MetricsRow| r.n == cfg.primary_n;
    let path = |name: &str| dir.join(name);

    write_rows(&path("table1.csv"), rows.iter().filter(primary).filter(|r| r.spec.is_correct()).map(MetricsRecord::from))?;
    write_rows(
        &path("table2.csv"),
        rows.iter().filter(primary).filter(|r| mentions(r, CovariateForm::WrongForm)).map(MetricsRecord::from),
    )?;
    write_rows(
        &path("table3.csv"),
        rows.iter().filter(primary).filter(|r| mentions(r, CovariateForm::OmitVars)).map(MetricsRecord::from),
    )?;
    write_rows(&path("sweep.csv"), rows.iter().map(MetricsRecord::from))?;

    write_rows(
        &path("subpop_error.csv"),
        out.subpop.iter().map(|r| SubpopRecord {
            scenario: &r.scenario,
            n: r.n,
            spec: r.spec.label(),
            population: r.population.as_str(),
            mean: r.mean,
            mav: r.mav,
            n_reps: r.n_reps,
        }),
    )?;

    write_rows(&path("interval_stats.csv"), out.intervals.iter().map(interval_record))?;
    write_rows(
        &path("figure_data.csv"),
        out.intervals.iter().filter(|r| r.n == cfg.primary_n && !r.spec.is_correct()).map(interval_record),
    )?;

    write_rows(
        &path("tableA1.csv"),
        out.scenarios.iter().map(|s| A1Record {
            scenario: &s.name,
            prevalence_target: s.scenario.prevalence_target,
            d: s.scenario.d,
            alpha0: s.scenario.alpha0,
            calibrated_alpha0: s.calibrated_alpha0,
            realized_prevalence: s.phi.as_ref().map(|p| p.prevalence),
            pct_outside_05_95: s.phi.as_ref().map(|p| 100.0 * p.outside_05_95),
        }),
    )?;

    write_rows(
        &path("ps_hist.csv"),
        out.scenarios.iter().filter_map(|s| s.phi.as_ref().map(|p| (s, p))).flat_map(|(s, p)| {
            (0..p.mass.len()).map(move |l| {
                let (lo, hi) = crate::diagnostics::interval_bounds(l);
                HistRecord { scenario: &s.name, interval: l, lo, hi, mass: p.mass[l], treated: p.treated[l], control: p.control[l] }
            })
        }),
    )?;

    Ok(OUTPUT_FILES.iter().map(|f| dir.join(f)).collect())
}
