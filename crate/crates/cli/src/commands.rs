//! Subcommand implementations. Each command is a pure function of the
//! config file and the seed: it computes everything first and then writes
//! its output files.

use std::path::PathBuf;

use anyhow::{anyhow, bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use excusum::conditions::{cesaro_kl_average, full_condition_report, Budgets, MIN_INFORMATION};
use excusum::detectors::{run_detector, statistic_trace, StopResult};
use excusum::metrics::{
    default_delay_margin, default_false_alarm_horizon, estimate_arl2fa, least_squares_slope,
    tradeoff_curve, worst_case_delay_scan, ArlEstimate, DelayScan,
};
use excusum::models::{DensityModel, KlMethod};
use excusum::process::{generate_path, ChangePoint, ChangeSpec};
use serde::Serialize;

use crate::config::{ExperimentConfig, Format, Resolved};
use crate::demo::{demo_run, demo_summary, DEFAULT_GAMMA, DEFAULT_HORIZON, DEFAULT_NU};
use crate::output::{line_chart_svg, to_json, write_file, Csv};

/// Trials used when the config does not set `run.trials`.
pub const DEFAULT_TRIALS: usize = 2000;

#[derive(Debug, Clone, Parser)]
#[command(name = "excusum", version, about = "Quickest change detection for exploding processes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides `run.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides `output.directory`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for trial simulation.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Overrides `output.formats`.
    #[arg(long, global = true)]
    pub format: Option<Format>,
    /// How errors are printed on stderr.
    #[arg(long, global = true, value_enum, default_value_t = ErrorFormat::Text)]
    pub error_format: ErrorFormat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// One path with a change at 80: path, statistic and chart.
    Demo,
    /// Numerical checks of the optimality conditions.
    Verify,
    /// Mean time to false alarm.
    Arl,
    /// Conditional average detection delay over a grid of change points.
    Cadd,
    /// False-alarm / delay tradeoff against log(gamma) / I.
    Tradeoff,
    /// One path and its statistic.
    Simulate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ErrorFormat {
    Text,
    Json,
}

/// What a command did.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    /// All verdicts passed.
    pub pass: bool,
    pub summary: Vec<String>,
    pub files: Vec<PathBuf>,
}

struct Experiment {
    config: ExperimentConfig,
    resolved: Resolved,
    seed: u64,
    out: PathBuf,
    formats: Vec<Format>,
}

impl Experiment {
    fn wants(&self, format: Format) -> bool {
        self.formats.contains(&format)
    }

    fn trials(&self) -> usize {
        self.config.run.trials.unwrap_or(DEFAULT_TRIALS)
    }

    /// `(gamma, A)` pairs from `run.gammas`, else from the detector block.
    fn threshold_points(&self) -> anyhow::Result<Vec<(f64, f64)>> {
        if let Some(gammas) = &self.config.run.gammas {
            return Ok(gammas.iter().map(|&g| (g, g.ln())).collect());
        }
        match (self.config.detector.gamma, self.resolved.threshold) {
            (Some(g), Some(a)) => Ok(vec![(g, a)]),
            (None, Some(a)) => Ok(vec![(a.exp(), a)]),
            _ => bail!("no threshold: set run.gammas, detector.gamma or detector.threshold"),
        }
    }
}

pub fn run(cli: &Cli) -> anyhow::Result<Outcome> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| anyhow!("--config <path> is required"))?;
    let config = ExperimentConfig::from_file(path)?;
    let resolved = config.resolve()?;
    let ctx = Experiment {
        seed: cli.seed.unwrap_or(config.run.seed),
        out: cli.out.clone().unwrap_or_else(|| config.output.directory.clone()),
        formats: cli.format.map_or_else(|| config.output.formats.clone(), |f| vec![f]),
        resolved,
        config,
    };
    match cli.command {
        Command::Demo => demo(&ctx),
        Command::Verify => verify(&ctx),
        Command::Arl => arl(&ctx),
        Command::Cadd => cadd(&ctx),
        Command::Tradeoff => tradeoff(&ctx),
        Command::Simulate => simulate(&ctx),
    }
}

fn demo(ctx: &Experiment) -> anyhow::Result<Outcome> {
    let nu = ctx.config.nu().unwrap_or(ChangePoint::at(DEFAULT_NU)?);
    let horizon = ctx.config.run.horizon.unwrap_or(DEFAULT_HORIZON);
    let threshold = ctx.resolved.threshold.unwrap_or(DEFAULT_GAMMA.ln());
    let model = &ctx.resolved.model;
    let det = &ctx.resolved.detector;
    let run = demo_run(model, det, threshold, nu, horizon, ctx.seed)?;

    let mut path_csv = Csv::new(&["n", "x_n"]);
    let mut stat_csv = Csv::new(&["n", "W_n"]);
    for (i, (&x, &w)) in run.samples.iter().zip(&run.statistics).enumerate() {
        path_csv.row(vec![(i + 1).into(), x.into()]);
        stat_csv.row(vec![(i + 1).into(), w.into()]);
    }
    let title = match nu.time() {
        Some(t) => format!("{} statistic, change at {t}", det.kind.name()),
        None => format!("{} statistic, no change", det.kind.name()),
    };
    let svg = line_chart_svg(&title, &run.statistics, threshold, nu.time());
    let summary_runs = ctx.config.run.trials;
    let summary = summary_runs
        .map(|runs| demo_summary(model, det, threshold, nu, horizon, runs, ctx.seed))
        .transpose()?;

    let mut files = vec![
        write_file(&ctx.out, "demo_path.csv", &path_csv.into_string())?,
        write_file(&ctx.out, "demo_stat.csv", &stat_csv.into_string())?,
        write_file(&ctx.out, "demo_stat.svg", &svg)?,
    ];
    if ctx.wants(Format::Json) {
        files.push(write_file(&ctx.out, "demo.json", &to_json(&run)?)?);
    }
    let mut lines = vec![format!(
        "demo: change at {nu}, A = {threshold:.4}, tau = {}, pre-change max = {}",
        run.tau.map_or("none".into(), |t| t.to_string()),
        run.pre_change_max.map_or("none".into(), |m| format!("{m:.4}")),
    )];
    let mut pass = true;
    if let Some(s) = &summary {
        files.push(write_file(&ctx.out, "demo_summary.json", &to_json(s)?)?);
        pass = s.pass;
        lines.push(format!(
            "{} over {} seeds: quiet before change {}, timely detections {}, below A at horizon {}",
            verdict(s.pass),
            s.runs,
            s.quiet_before_change,
            s.timely_detections.map_or("-".into(), |c| c.to_string()),
            s.below_at_horizon.map_or("-".into(), |c| c.to_string()),
        ));
    }
    Ok(Outcome {
        pass,
        summary: lines,
        files,
    })
}

fn verify(ctx: &Experiment) -> anyhow::Result<Outcome> {
    let mut budgets = ctx.config.verify.clone().unwrap_or_default();
    budgets.seed = ctx.seed;
    let report = full_condition_report(&ctx.resolved.model, &budgets)?;

    let mut csv = Csv::new(&["n", "cesaro_avg", "moment_est", "slln_q95"]);
    for row in &report.trace {
        csv.row(vec![
            row.n.into(),
            row.cesaro_avg.into(),
            row.moment_est.into(),
            row.slln_q95.into(),
        ]);
    }
    let files = vec![
        write_file(&ctx.out, "condition_report.json", &to_json(&report)?)?,
        write_file(&ctx.out, "condition_trace.csv", &csv.into_string())?,
    ];
    let mut lines = vec![format!(
        "I = {:.7} (closed form {})",
        report.information_number_i,
        report.closed_form_i.map_or("n/a".into(), |i| format!("{i:.7}"))
    )];
    lines.extend(
        report
            .verdicts
            .iter()
            .map(|v| format!("{} {}: {}", verdict(v.pass), v.condition, v.detail)),
    );
    lines.extend(report.warnings.iter().map(|w| format!("warning: {w}")));
    Ok(Outcome {
        pass: report.pass,
        summary: lines,
        files,
    })
}

#[derive(Serialize)]
struct ArlRow<'a> {
    gamma: f64,
    #[serde(flatten)]
    estimate: &'a ArlEstimate,
}

fn arl(ctx: &Experiment) -> anyhow::Result<Outcome> {
    let trials = ctx.trials();
    let mut rows = Vec::new();
    for (gamma, a) in ctx.threshold_points()? {
        let horizon = ctx
            .config
            .run
            .horizon
            .unwrap_or_else(|| default_false_alarm_horizon(a));
        let est = estimate_arl2fa(&ctx.resolved.model, &ctx.resolved.detector, a, trials, horizon, ctx.seed)
            .with_context(|| format!("ARL estimate at gamma = {gamma}"))?;
        rows.push((gamma, est));
    }

    let mut csv = Csv::new(&["gamma", "A", "trials", "mean_tau", "stderr", "censored_frac", "lcb95"]);
    for (gamma, e) in &rows {
        csv.row(vec![
            (*gamma).into(),
            e.threshold.into(),
            e.trials.into(),
            e.mean_tau.into(),
            e.std_error.into(),
            e.censored_fraction.into(),
            e.lcb95.into(),
        ]);
    }
    let json: Vec<ArlRow> = rows.iter().map(|(gamma, estimate)| ArlRow { gamma: *gamma, estimate }).collect();
    let files = write_tables(ctx, "arl", csv, &json)?;

    let mut lines = Vec::new();
    for (gamma, e) in &rows {
        lines.push(format!(
            "{} gamma = {}: mean tau {:.2} (se {:.2}), lcb95 {:.2}, censored {:.4}",
            verdict(e.lcb95 >= *gamma),
            gamma,
            e.mean_tau,
            e.std_error,
            e.lcb95,
            e.censored_fraction
        ));
        lines.extend(e.warnings.iter().map(|w| format!("warning: {w}")));
    }
    Ok(Outcome {
        pass: rows.iter().all(|(g, e)| e.lcb95 >= *g),
        summary: lines,
        files,
    })
}

/// Information number used for default delay horizons and bounds.
pub fn information_number(model: &dyn DensityModel) -> anyhow::Result<f64> {
    let i = match model.information_limit() {
        Some(i) => i,
        None => cesaro_kl_average(model, Budgets::default().cesaro_n, KlMethod::Quadrature)?.limit_estimate,
    };
    if i > MIN_INFORMATION {
        Ok(i)
    } else {
        bail!("the information number is zero: delays are unbounded for this model")
    }
}

#[derive(Serialize)]
struct CaddBlock {
    gamma: f64,
    threshold: f64,
    margin: usize,
    scan: DelayScan,
}

fn cadd(ctx: &Experiment) -> anyhow::Result<Outcome> {
    let trials = ctx.trials();
    let grid = match (&ctx.config.run.nu_grid, ctx.config.nu()) {
        (Some(grid), _) => grid.clone(),
        (None, Some(ChangePoint::Never)) => bail!("cadd needs a finite change point (run.nu or run.nu_grid)"),
        (None, nu) => vec![nu.and_then(ChangePoint::time).unwrap_or(1)],
    };
    let mut blocks = Vec::new();
    for (gamma, a) in ctx.threshold_points()? {
        let margin = match ctx.config.run.delay_margin {
            Some(m) => m,
            None => default_delay_margin(a, information_number(&ctx.resolved.model)?),
        };
        let scan = worst_case_delay_scan(&ctx.resolved.model, &ctx.resolved.detector, a, &grid, trials, margin, ctx.seed)?;
        blocks.push(CaddBlock {
            gamma,
            threshold: a,
            margin,
            scan,
        });
    }

    let mut csv = Csv::new(&["gamma", "A", "nu", "trials", "accepted", "mean_delay", "stderr"]);
    for b in &blocks {
        for cell in &b.scan.cells {
            let (accepted, mean, se) = match &cell.estimate {
                Some(e) => (e.accepted, Some(e.mean_delay), Some(e.std_error)),
                None => (0, None, None),
            };
            csv.row(vec![
                b.gamma.into(),
                b.threshold.into(),
                cell.nu.into(),
                trials.into(),
                accepted.into(),
                mean.into(),
                se.into(),
            ]);
        }
    }
    let files = write_tables(ctx, "cadd", csv, &blocks)?;

    let mut lines = Vec::new();
    let mut pass = true;
    for b in &blocks {
        for cell in &b.scan.cells {
            match (&cell.estimate, &cell.flag) {
                (Some(e), _) => {
                    lines.push(format!(
                        "gamma = {}, nu = {}: delay {:.3} (se {:.3}), accepted {}/{}",
                        b.gamma, cell.nu, e.mean_delay, e.std_error, e.accepted, e.trials
                    ));
                    lines.extend(e.warnings.iter().map(|w| format!("warning: {w}")));
                }
                (None, flag) => {
                    pass = false;
                    lines.push(format!(
                        "FAIL gamma = {}, nu = {}: {}",
                        b.gamma,
                        cell.nu,
                        flag.as_deref().unwrap_or("no estimate")
                    ));
                }
            }
        }
        if let (Some(nu), Some(d)) = (b.scan.worst_nu, b.scan.worst_delay) {
            lines.push(format!("gamma = {}: worst delay {d:.3} at nu = {nu}", b.gamma));
        }
    }
    Ok(Outcome {
        pass,
        summary: lines,
        files,
    })
}

fn tradeoff(ctx: &Experiment) -> anyhow::Result<Outcome> {
    let points = ctx.threshold_points()?;
    let gammas: Vec<f64> = points.iter().map(|p| p.0).collect();
    let information = information_number(&ctx.resolved.model)?;
    let rows = tradeoff_curve(
        &ctx.resolved.model,
        &ctx.resolved.detector,
        &gammas,
        ctx.trials(),
        information,
        ctx.seed,
    )?;

    let mut csv = Csv::new(&["gamma", "A", "arl_lcb", "cadd", "bound"]);
    for r in &rows {
        csv.row(vec![
            r.gamma.into(),
            r.threshold.into(),
            r.arl.lcb95.into(),
            r.cadd.mean_delay.into(),
            r.bound.into(),
        ]);
    }
    let files = write_tables(ctx, "tradeoff", csv, &rows)?;

    let mut lines: Vec<String> = rows
        .iter()
        .map(|r| {
            format!(
                "{} gamma = {}: arl lcb95 {:.2}, cadd {:.3} (se {:.3}), bound {:.3}",
                verdict(r.arl.lcb95 >= r.gamma),
                r.gamma,
                r.arl.lcb95,
                r.cadd.mean_delay,
                r.cadd.std_error,
                r.bound
            )
        })
        .collect();
    if rows.len() >= 2 {
        let xs: Vec<f64> = rows.iter().map(|r| r.threshold).collect();
        let ys: Vec<f64> = rows.iter().map(|r| r.cadd.mean_delay).collect();
        lines.push(format!(
            "delay slope vs A: {:.4} (1/I = {:.4})",
            least_squares_slope(&xs, &ys)?,
            1.0 / information
        ));
    }
    Ok(Outcome {
        pass: rows.iter().all(|r| r.arl.lcb95 >= r.gamma),
        summary: lines,
        files,
    })
}

#[derive(Serialize)]
struct SimulateJson<'a> {
    seed: u64,
    nu: ChangePoint,
    horizon: usize,
    threshold: Option<f64>,
    stop: Option<StopResult>,
    samples: &'a [f64],
    statistics: &'a [f64],
}

fn simulate(ctx: &Experiment) -> anyhow::Result<Outcome> {
    let nu = ctx.config.nu().unwrap_or(ChangePoint::Never);
    let horizon = ctx.config.run.horizon.unwrap_or(DEFAULT_HORIZON);
    let model = &ctx.resolved.model;
    let det = &ctx.resolved.detector;
    let path = generate_path(model, &ChangeSpec::new(nu, horizon, ctx.seed)?);
    let statistics = statistic_trace(det, model, path.samples.iter().copied())?;
    let stop = ctx
        .resolved
        .threshold
        .map(|a| run_detector(det, model, path.samples.iter().copied(), a, horizon))
        .transpose()?;

    let mut csv = Csv::new(&["n", "x_n", "statistic"]);
    for (i, (&x, &w)) in path.samples.iter().zip(&statistics).enumerate() {
        csv.row(vec![(i + 1).into(), x.into(), w.into()]);
    }
    let json = SimulateJson {
        seed: ctx.seed,
        nu,
        horizon,
        threshold: ctx.resolved.threshold,
        stop,
        samples: &path.samples,
        statistics: &statistics,
    };
    let files = write_tables(ctx, "simulate", csv, &json)?;
    let line = match stop {
        Some(StopResult::Stopped { tau, statistic }) => {
            format!("{} stopped at tau = {tau} (statistic {statistic:.4}), change at {nu}", det.kind.name())
        }
        Some(StopResult::Censored { horizon, .. }) => {
            format!("{} did not stop by n = {horizon}, change at {nu}", det.kind.name())
        }
        None => format!("simulated {horizon} observations, change at {nu}"),
    };
    Ok(Outcome {
        pass: true,
        summary: vec![line],
        files,
    })
}

fn write_tables<T: Serialize>(ctx: &Experiment, stem: &str, csv: Csv, json: &T) -> anyhow::Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    if ctx.wants(Format::Csv) {
        files.push(write_file(&ctx.out, &format!("{stem}.csv"), &csv.into_string())?);
    }
    if ctx.wants(Format::Json) {
        files.push(write_file(&ctx.out, &format!("{stem}.json"), &to_json(json)?)?);
    }
    Ok(files)
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}
