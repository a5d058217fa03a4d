//! Subcommand definitions and their implementations.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use local_reservoir::ctmc::{self, closed_form, Rates};
use local_reservoir::fit::{self, LookupCurve, LookupParams};
use local_reservoir::photon::{self, PhotonAveraging, PhotonConfig};
use local_reservoir::reservoir::{ArrowKind, ReservoirConfig, StallPolicy};
use local_reservoir::stats;
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::CliError;
use crate::output::{Emitter, Format, Output};
use crate::svg::{Chart, Series};
use crate::table::{Cell, Table};

#[derive(Debug, Parser)]
#[command(name = "reservoir", version, about = "Local reservoir model of choice-based learning")]
pub struct Cli {
    /// Flat JSON file of flag values; flags given on the command line win.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Decision-consistency curve after the reference cycle.
    Sim(SimArgs),
    /// Max consistency and active portion over a grid of sizes and lifetimes.
    Sweep(SweepArgs),
    /// Random-walk traces of individual trials.
    Walk(WalkArgs),
    /// Exact continuous-time analysis of decision transitions.
    Ctmc(CtmcArgs),
    /// Closed-form single-level imbalance next to the exact value.
    ClosedForm(ClosedFormArgs),
    /// Single-photon decision maker.
    Photon(PhotonArgs),
    /// Estimate reservoir sizes for observed consistency values.
    Fit(FitArgs),
    /// Build the consistency-vs-size lookup curve used by `fit`.
    Lookup(LookupArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct OutputArgs {
    /// Output file; stdout when omitted.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Defaults to the output file's extension, else csv.
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

impl OutputArgs {
    fn format(&self) -> Format {
        self.format
            .or_else(|| self.out.as_deref().and_then(Format::from_path))
            .unwrap_or(Format::Csv)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stall {
    CarryForward,
    Skip,
}

impl From<Stall> for StallPolicy {
    fn from(s: Stall) -> Self {
        match s {
            Stall::CarryForward => StallPolicy::CarryForward,
            Stall::Skip => StallPolicy::Skip,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct RunArgs {
    #[arg(long, default_value_t = 1200)]
    pub cycles: u64,
    /// Reference cycle.
    #[arg(long, default_value_t = 1000)]
    pub t0: u64,
    #[arg(long, default_value_t = 20_000)]
    pub trials: u64,
    #[arg(long, env = crate::SEED_ENV, default_value_t = 42)]
    pub seed: u64,
    /// How cycles without any enabled arrow are read out.
    #[arg(long, value_enum, default_value_t = Stall::CarryForward)]
    pub stall: Stall,
}

impl RunArgs {
    fn config(&self, n: usize, lifetime: u64) -> ReservoirConfig {
        ReservoirConfig {
            n_levels: n,
            lifetime,
            total_cycles: self.cycles,
            t0: self.t0,
            trials: self.trials,
            seed: self.seed,
            stall_policy: self.stall.into(),
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimArgs {
    /// Reservoir size(s), comma separated.
    #[arg(long, value_delimiter = ',', default_value = "4")]
    pub n: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    pub lifetime: u64,
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, default_value_t = 200)]
    pub max_offset: usize,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SweepArgs {
    #[arg(long, value_delimiter = ',', default_value = "4,10,20,30,40,50,100")]
    pub n: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "10")]
    pub lifetime: Vec<u64>,
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, default_value_t = 200)]
    pub max_offset: usize,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct WalkArgs {
    #[arg(long, default_value_t = 4)]
    pub n: usize,
    #[arg(long, default_value_t = 10)]
    pub lifetime: u64,
    #[command(flatten)]
    pub run: RunArgs,
    /// Number of trials to trace.
    #[arg(long, default_value_t = 10)]
    pub traces: usize,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CtmcArgs {
    #[arg(long, value_delimiter = ',', default_value = "2")]
    pub n: Vec<usize>,
    #[arg(long, default_value_t = 1.0)]
    pub gin: f64,
    #[arg(long, default_value_t = 1.0)]
    pub gup: f64,
    #[arg(long, default_value_t = 1.0)]
    pub gout: f64,
    /// Include the stationary distribution in JSON output.
    #[arg(long)]
    pub steady_state: bool,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ClosedFormArgs {
    /// Rates to evaluate; without them the four reference triples
    /// (1,1,1), (10,1,1), (1,10,1), (1,1,10) are used.
    #[arg(long, requires_all = ["gup", "gout"])]
    pub gin: Option<f64>,
    #[arg(long, requires_all = ["gin", "gout"])]
    pub gup: Option<f64>,
    #[arg(long, requires_all = ["gin", "gup"])]
    pub gout: Option<f64>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Averaging {
    ZeroFill,
    Survivors,
}

impl From<Averaging> for PhotonAveraging {
    fn from(a: Averaging) -> Self {
        match a {
            Averaging::ZeroFill => PhotonAveraging::ZeroFill,
            Averaging::Survivors => PhotonAveraging::Survivors,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PhotonArgs {
    /// R in Δ = π/R, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "10")]
    pub resolution: Vec<u32>,
    #[arg(long, default_value_t = 500)]
    pub cycles: u64,
    #[arg(long, default_value_t = 20_000)]
    pub trials: u64,
    #[arg(long, env = crate::SEED_ENV, default_value_t = 42)]
    pub seed: u64,
    /// How terminated trials enter the consistency mean.
    #[arg(long, value_enum, default_value_t = Averaging::ZeroFill)]
    pub averaging: Averaging,
    /// One row per resolution instead of per-cycle curves.
    #[arg(long)]
    pub summary: bool,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct LookupSimArgs {
    #[arg(long, default_value_t = 10)]
    pub lifetime: u64,
    /// Offset after the reference cycle at which consistency is read.
    #[arg(long, default_value_t = 8)]
    pub offset: u64,
    /// Grid of sizes; defaults to 2..=50.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<usize>>,
    #[arg(long, default_value_t = 1000)]
    pub t0: u64,
    #[arg(long, default_value_t = 20_000)]
    pub trials: u64,
    #[arg(long, env = crate::SEED_ENV, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Stall::CarryForward)]
    pub stall: Stall,
}

impl LookupSimArgs {
    fn params(&self) -> LookupParams {
        LookupParams {
            lifetime: self.lifetime,
            offset: self.offset,
            t0: self.t0,
            trials: self.trials,
            seed: self.seed,
            stall_policy: self.stall.into(),
        }
    }

    fn grid(&self) -> Vec<usize> {
        self.grid.clone().unwrap_or_else(fit::default_grid)
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct LookupArgs {
    #[command(flatten)]
    pub sim: LookupSimArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FitArgs {
    /// CSV with header `participant_id,consistency`.
    #[arg(long, value_name = "PATH")]
    pub input: PathBuf,
    /// Previously built lookup CSV; its `.params.json` sidecar supplies the
    /// simulation parameters. Built from the flags below when omitted.
    #[arg(long, value_name = "PATH")]
    pub lookup: Option<PathBuf>,
    #[command(flatten)]
    pub sim: LookupSimArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

pub fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Sim(a) => sim(a),
        Command::Sweep(a) => sweep(a),
        Command::Walk(a) => walk(a),
        Command::Ctmc(a) => ctmc_cmd(a),
        Command::ClosedForm(a) => closed_form_cmd(a),
        Command::Photon(a) => photon_cmd(a),
        Command::Fit(a) => fit_cmd(a),
        Command::Lookup(a) => lookup(a),
    }
}

fn emit_one(name: &str, params: &impl Serialize, seed: Option<u64>, out: &OutputArgs, output: &Output) -> Result<(), CliError> {
    let mut e = Emitter::new(name, params, seed)?;
    e.emit(output, out.format(), out.out.as_deref())?;
    e.finish()?;
    Ok(())
}

fn non_empty<T>(v: &[T], flag: &str) -> Result<(), CliError> {
    if v.is_empty() {
        return Err(CliError::Validation(format!("--{flag} needs at least one value")));
    }
    Ok(())
}

fn sim(a: SimArgs) -> Result<(), CliError> {
    non_empty(&a.n, "n")?;
    let multi = a.n.len() > 1;
    let mut table = if multi {
        Table::new(&["n", "t", "mean_consistency", "samples"])
    } else {
        Table::new(&["t", "mean_consistency", "samples"])
    };
    let mut series = Vec::new();
    for &n in &a.n {
        let curve = stats::consistency_curve(&a.run.config(n, a.lifetime), a.max_offset)?;
        let mut points = Vec::new();
        for (i, &t) in curve.offsets.iter().enumerate() {
            let mean = curve.mean(t);
            let mut row: Vec<Cell> = vec![t.into(), mean.into(), curve.samples[i].into()];
            if multi {
                row.insert(0, n.into());
            }
            table.push(row);
            if let Some(m) = mean {
                points.push((t as f64, m));
            }
        }
        series.push(Series::new(format!("N={n}"), points));
    }
    let chart = Chart {
        title: format!("Decision consistency, lifetime {}", a.lifetime),
        x_label: "cycles after reference".into(),
        y_label: "decision consistency".into(),
        series,
    };
    emit_one("sim", &a, Some(a.run.seed), &a.output, &Output::new(table).with_chart(chart))
}

fn sweep(a: SweepArgs) -> Result<(), CliError> {
    non_empty(&a.n, "n")?;
    non_empty(&a.lifetime, "lifetime")?;
    let grid: Vec<ReservoirConfig> = a
        .lifetime
        .iter()
        .flat_map(|&l| a.n.iter().map(move |&n| (n, l)))
        .map(|(n, l)| a.run.config(n, l))
        .collect();
    let rows = stats::sweep(&grid, a.max_offset)?;
    let mut table = Table::new(&["n", "lifetime", "max_consistency", "active_portion"]);
    for r in &rows {
        table.push(vec![r.n.into(), r.lifetime.into(), r.max_consistency.into(), r.active_portion.into()]);
    }
    // One line per lifetime over N, or per N over lifetime when only one N is given.
    let series: Vec<Series> = if a.n.len() > 1 {
        a.lifetime
            .iter()
            .map(|&l| {
                let pts = rows.iter().filter(|r| r.lifetime == l).map(|r| (r.n as f64, r.max_consistency)).collect();
                Series::new(format!("lifetime={l}"), pts)
            })
            .collect()
    } else {
        vec![Series::new(
            format!("N={}", a.n[0]),
            rows.iter().map(|r| (r.lifetime as f64, r.max_consistency)).collect(),
        )]
    };
    let chart = Chart {
        title: "Maximum decision consistency".into(),
        x_label: if a.n.len() > 1 { "reservoir size N".into() } else { "lifetime".into() },
        y_label: "max consistency".into(),
        series,
    };
    emit_one("sweep", &a, Some(a.run.seed), &a.output, &Output::new(table).with_chart(chart))
}

fn walk(a: WalkArgs) -> Result<(), CliError> {
    let traces = stats::walk_traces(&a.run.config(a.n, a.lifetime), a.traces)?;
    let mut table = Table::new(&["trial_id", "first_decision", "k", "position"]);
    let mut series = Vec::new();
    for tr in &traces {
        let first = match tr.first_decision {
            ArrowKind::L => "L",
            ArrowKind::R => "R",
        };
        for (k, &p) in tr.positions.iter().enumerate() {
            table.push(vec![tr.trial_id.into(), first.into(), k.into(), p.into()]);
        }
        series.push(Series::new(
            format!("trial {}", tr.trial_id),
            tr.positions.iter().enumerate().map(|(k, &p)| (k as f64, p as f64)).collect(),
        ));
    }
    if traces.is_empty() {
        return Err(CliError::Validation("no trial decided at the reference cycle".into()));
    }
    let chart = Chart {
        title: format!("Random walk, N={}, lifetime {}", a.n, a.lifetime),
        x_label: "cycles after reference".into(),
        y_label: "position (L = +1, R = -1)".into(),
        series,
    };
    emit_one("walk", &a, Some(a.run.seed), &a.output, &Output::new(table).with_chart(chart))
}

fn ctmc_cmd(a: CtmcArgs) -> Result<(), CliError> {
    non_empty(&a.n, "n")?;
    let rates = Rates::new(a.gin, a.gup, a.gout)?;
    let reports = a.n.iter().map(|&n| ctmc::analyze(n, rates)).collect::<Result<Vec<_>, _>>()?;
    let mut table = Table::new(&[
        "n", "gamma_in", "gamma_up", "gamma_out", "num_states", "p_ll", "p_lr", "imbalance", "residual",
    ]);
    let mut docs = Vec::new();
    for r in &reports {
        table.push(vec![
            r.n.into(),
            r.rates.gamma_in.into(),
            r.rates.gamma_up.into(),
            r.rates.gamma_out.into(),
            r.num_states.into(),
            r.p_ll.into(),
            r.p_lr.into(),
            r.imbalance.into(),
            r.residual.into(),
        ]);
        let mut doc = json!({
            "n": r.n,
            "rates": r.rates,
            "num_states": r.num_states,
            "p_ll": r.p_ll,
            "p_lr": r.p_lr,
            "imbalance": r.imbalance,
            "residual": r.residual,
        });
        if a.steady_state {
            doc["steady_state"] = json!(r.steady_state);
        }
        docs.push(doc);
    }
    let json = if docs.len() == 1 { docs.pop().unwrap() } else { Value::Array(docs) };
    let chart = Chart {
        title: format!("Decision imbalance, rates ({}, {}, {})", a.gin, a.gup, a.gout),
        x_label: "reservoir size N".into(),
        y_label: "P(L->L) - P(L->R)".into(),
        series: vec![Series::new("imbalance", reports.iter().map(|r| (r.n as f64, r.imbalance)).collect())],
    };
    let mut output = Output::new(table).with_chart(chart);
    output.json = Some(json);
    emit_one("ctmc", &a, None, &a.output, &output)
}

fn closed_form_cmd(a: ClosedFormArgs) -> Result<(), CliError> {
    let triples: Vec<(f64, f64, f64)> = match (a.gin, a.gup, a.gout) {
        (Some(i), Some(u), Some(o)) => vec![(i, u, o)],
        _ => vec![(1.0, 1.0, 1.0), (10.0, 1.0, 1.0), (1.0, 10.0, 1.0), (1.0, 1.0, 10.0)],
    };
    let mut table = Table::new(&[
        "gamma_in",
        "gamma_up",
        "gamma_out",
        "closed_form",
        "imbalance",
        "same_sign",
        "magnitude_ratio",
        "relation",
    ]);
    for (i, u, o) in triples {
        let c = closed_form::compare(&Rates::new(i, u, o)?)?;
        let relation = match c.relation {
            closed_form::SignRelation::Equal => "equal",
            closed_form::SignRelation::Negated => "negated",
            closed_form::SignRelation::Neither => "neither",
        };
        table.push(vec![
            i.into(),
            u.into(),
            o.into(),
            c.closed_form.into(),
            c.imbalance.into(),
            c.same_sign.into(),
            c.magnitude_ratio.into(),
            relation.into(),
        ]);
    }
    emit_one("closed-form", &a, None, &a.output, &Output::new(table))
}

fn photon_cmd(a: PhotonArgs) -> Result<(), CliError> {
    non_empty(&a.resolution, "resolution")?;
    let configs: Vec<PhotonConfig> = a
        .resolution
        .iter()
        .map(|&r| PhotonConfig { resolution: r, cycles: a.cycles, trials: a.trials, seed: a.seed })
        .collect();
    let output = if a.summary {
        let rows = photon::sweep(&configs, a.averaging.into())?;
        let mut table = Table::new(&["R", "max_consistency", "active_portion", "termination_fraction"]);
        for r in &rows {
            table.push(vec![
                r.resolution.into(),
                r.max_consistency.into(),
                r.active_portion.into(),
                r.termination_fraction.into(),
            ]);
        }
        let pts = |f: fn(&photon::PhotonSweepRow) -> f64| rows.iter().map(|r| (r.resolution as f64, f(r))).collect();
        Output::new(table).with_chart(Chart {
            title: "Single-photon decision maker".into(),
            x_label: "resolution R".into(),
            y_label: "value".into(),
            series: vec![
                Series::new("max consistency", pts(|r| r.max_consistency)),
                Series::new("active portion", pts(|r| r.active_portion)),
            ],
        })
    } else {
        let multi = configs.len() > 1;
        let mut table = if multi {
            Table::new(&["R", "t", "mean_consistency", "surviving_trials"])
        } else {
            Table::new(&["t", "mean_consistency", "surviving_trials"])
        };
        let mut series = Vec::new();
        for c in &configs {
            let pc = photon::photon_consistency_curve(c, a.averaging.into())?;
            let mut points = Vec::new();
            for (i, &t) in pc.curve.offsets.iter().enumerate() {
                let mean = pc.curve.mean(t);
                let mut row: Vec<Cell> = vec![t.into(), mean.into(), pc.surviving[i].into()];
                if multi {
                    row.insert(0, c.resolution.into());
                }
                table.push(row);
                if let Some(m) = mean {
                    points.push((t as f64, m));
                }
            }
            series.push(Series::new(format!("R={}", c.resolution), points));
        }
        Output::new(table).with_chart(Chart {
            title: "Single-photon decision consistency".into(),
            x_label: "cycles after first decision".into(),
            y_label: "decision consistency".into(),
            series,
        })
    };
    emit_one("photon", &a, Some(a.seed), &a.output, &output)
}

fn lookup_output(curve: &LookupCurve) -> Output {
    let mut table = Table::new(&["n", "raw_consistency", "smoothed_consistency"]);
    for ((n, r), s) in curve.n_grid.iter().zip(&curve.raw).zip(&curve.smoothed) {
        table.push(vec![(*n).into(), (*r).into(), (*s).into()]);
    }
    let grid = || curve.n_grid.iter().map(|&n| n as f64);
    Output::new(table).with_chart(Chart {
        title: format!("Consistency at offset {}, lifetime {}", curve.params.offset, curve.params.lifetime),
        x_label: "reservoir size N".into(),
        y_label: "decision consistency".into(),
        series: vec![
            Series::new("simulated", grid().zip(curve.raw.iter().copied()).collect()),
            Series::new("smoothed", grid().zip(curve.smoothed.iter().copied()).collect()),
        ],
    })
}

/// `<stem>.params.json` next to a lookup CSV.
pub fn params_sidecar(path: &Path) -> PathBuf {
    path.with_extension("params.json")
}

fn lookup(a: LookupArgs) -> Result<(), CliError> {
    let curve = fit::build_lookup(a.sim.params(), &a.sim.grid())?;
    let mut e = Emitter::new("lookup", &a, Some(a.sim.seed))?;
    e.emit(&lookup_output(&curve), a.output.format(), a.output.out.as_deref())?;
    if let Some(out) = &a.output.out {
        let mut sidecar = serde_json::to_vec_pretty(&curve.params)?;
        sidecar.push(b'\n');
        e.write_bytes(&params_sidecar(out), &sidecar)?;
    }
    e.finish()?;
    Ok(())
}

fn load_lookup(path: &Path) -> Result<LookupCurve, CliError> {
    let sidecar = params_sidecar(path);
    let params = match std::fs::read_to_string(&sidecar) {
        Ok(text) => serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("{}: {e}", sidecar.display())))?,
        Err(_) => {
            log::warn!("{} not found; recording default lookup parameters", sidecar.display());
            LookupParams::default()
        }
    };
    Ok(LookupCurve::read_csv(path, params)?)
}

fn fit_cmd(a: FitArgs) -> Result<(), CliError> {
    let records = fit::ingest_csv(&a.input)?;
    let curve = match &a.lookup {
        Some(p) => load_lookup(p)?,
        None => fit::build_lookup(a.sim.params(), &a.sim.grid())?,
    };
    let results = fit::fit_all(&records, &curve)?;
    let mut table = Table::new(&["participant_id", "consistency", "estimated_n", "flag"]);
    for r in &results {
        table.push(vec![
            r.participant_id.as_str().into(),
            r.consistency.into(),
            r.estimated_n.into(),
            r.flag.as_str().into(),
        ]);
    }
    if table.rows.is_empty() {
        return Err(CliError::Validation(format!("{}: no participant rows to fit", a.input.display())));
    }
    let seed = a.lookup.is_none().then_some(a.sim.seed);
    let params = json!({ "args": &a, "lookup": curve.params });
    emit_one("fit", &params, seed, &a.output, &Output::new(table))
}
