//! Command-line front end: builds the configured construction and runs
//! one analysis per invocation, emitting a single JSON document (or CSV
//! table) per run. Every JSON report embeds the resolved parameters, so
//! output files are self-describing; CSV runs echo them to stderr.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use num_bigint::BigInt;
use serde_json::json;

use cutstack::rational::{format_rational, parse_rational};
use cutstack::{
    correlation, correlation_auto, decay_scan, ergodic_components, half_limit_report,
    mc_covariance, rigidity_report, suspension_rigidity_test, CorrBound, Error, LevelSet,
    ParamsSpec, RPrimeSpec, Rat, ScanMode, SpacerSpec, StageTable,
};

mod verify;

#[derive(Parser)]
#[command(name = "cutstack", version, about = "Rank-one cutting-and-stacking constructions: exact stage tables, certified correlation intervals, component counts, and Poisson suspension statistics")]
struct Cli {
    #[command(flatten)]
    params: ParamArgs,
    /// Output format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

/// Construction parameters, from a JSON config file and/or inline flags.
/// Inline flags override the file.
#[derive(Args)]
struct ParamArgs {
    /// JSON config file ({"h1", "j_max", "r_prime", "spacers", "base_width"}).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Stage-1 tower height.
    #[arg(long, global = true)]
    h1: Option<u64>,
    /// Deepest stage to materialize.
    #[arg(long, global = true)]
    j_max: Option<usize>,
    /// Cut multipliers: "j+1" or a comma-separated list (r_j = j * r'_j).
    #[arg(long, global = true)]
    r_prime: Option<String>,
    /// Spacer rule: "paper" or JSON lists like [[0,0],[0,0,0,2,2,2]].
    #[arg(long, global = true)]
    spacers: Option<String>,
    /// Width of the stage-1 base as "p/q".
    #[arg(long, global = true)]
    base_width: Option<String>,
    /// Cap on materialized range counts per refined set.
    #[arg(long, global = true)]
    cardinality_cap: Option<usize>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Rigid,
    Half,
}

#[derive(Subcommand)]
enum Command {
    /// Print the stage table: heights, cut counts, spacer totals, widths,
    /// measures.
    Stages,
    /// Certified interval for mu(T^n A /\ B).
    Correlate {
        /// Set selector, e.g. "stage=2,levels=0" (bare "stage=J" is the
        /// whole tower).
        #[arg(long)]
        a: String,
        /// Second set; defaults to A.
        #[arg(long)]
        b: Option<String>,
        /// Power of T, possibly negative.
        #[arg(long, allow_hyphen_values = true)]
        n: String,
        /// Resolution stage; omitted means deepen until the interval is
        /// narrower than epsilon or the table is exhausted.
        #[arg(long)]
        depth: Option<usize>,
        /// Target interval width "p/q" for automatic deepening.
        #[arg(long)]
        epsilon: Option<String>,
    },
    /// Rigidity along the height of an odd stage: deviation from
    /// mu(A /\ B) within mu(A /\ B)/r.
    Rigidity {
        /// Odd stage whose height h_stage is the tested power.
        #[arg(long)]
        stage: usize,
        /// Defaults to level 0 of the tested stage.
        #[arg(long)]
        a: Option<String>,
        /// Second set; defaults to A.
        #[arg(long)]
        b: Option<String>,
        /// Resolution stage; defaults to min(stage+2, j_max).
        #[arg(long)]
        depth: Option<usize>,
    },
    /// Half-limit along the height of an even stage: deviation from
    /// mu(A /\ B)/2 within (mu(A)+mu(B))/r.
    HalfLimit {
        /// Even stage whose height h_stage is the tested power.
        #[arg(long)]
        stage: usize,
        /// Defaults to level 0 of the tested stage.
        #[arg(long)]
        a: Option<String>,
        /// Second set; defaults to A.
        #[arg(long)]
        b: Option<String>,
        /// Resolution stage; defaults to min(stage+2, j_max).
        #[arg(long)]
        depth: Option<usize>,
    },
    /// Invariant components of T^n on a stage's levels.
    Components {
        /// Power of T.
        #[arg(long)]
        n: u64,
        /// Defaults to stage n+2, where the count stabilizes at n.
        #[arg(long)]
        stage: Option<usize>,
        /// Defaults to stage+2.
        #[arg(long)]
        depth: Option<usize>,
    },
    /// Sweep tower heights h_j and evaluate the mode's limit at each.
    Scan {
        /// Which limit to test: rigid sweeps odd stages, half sweeps even.
        #[arg(long, value_enum)]
        mode: ModeArg,
        /// Set selector for A.
        #[arg(long)]
        a: String,
        /// Second set; defaults to A.
        #[arg(long)]
        b: Option<String>,
        /// Defaults to j_max; stages strictly below this are scanned.
        #[arg(long)]
        depth: Option<usize>,
    },
    /// Poisson suspension statistics.
    #[command(subcommand)]
    Poisson(PoissonCmd),
    /// Run the verification suite; exit 0 iff every check passes.
    Verify {
        /// Base RNG seed for the statistical checks.
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Replicas per statistical check.
        #[arg(long, default_value_t = 100_000)]
        samples: u64,
    },
}

#[derive(Subcommand)]
enum PoissonCmd {
    /// Monte Carlo covariance of transported and plain counts against the
    /// certified base correlation.
    Cov {
        /// Set selector for A.
        #[arg(long)]
        a: String,
        /// Second set; defaults to A.
        #[arg(long)]
        b: Option<String>,
        /// Power of T, possibly negative.
        #[arg(long, allow_hyphen_values = true)]
        n: String,
        /// Sampling window selector (e.g. "stage=4"); defaults to A \/ B.
        #[arg(long)]
        window: Option<String>,
        /// Independent replicas; at least 1000.
        #[arg(long, default_value_t = 100_000)]
        samples: u64,
        /// Base RNG seed; replica i draws from stream i.
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Largest acceptable coverage gap "p/q".
        #[arg(long)]
        tolerance: Option<String>,
    },
    /// Rigidity of the suspension at an odd-stage height.
    Rigidity {
        /// Odd stage whose height h_stage is the tested power.
        #[arg(long)]
        stage: usize,
        /// Defaults to stage-2 level 0.
        #[arg(long)]
        a: Option<String>,
        /// Sampling window selector; defaults to A.
        #[arg(long)]
        window: Option<String>,
        /// Independent replicas; at least 1000.
        #[arg(long, default_value_t = 100_000)]
        samples: u64,
        /// Base RNG seed; replica i draws from stream i.
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Largest acceptable coverage gap "p/q".
        #[arg(long)]
        tolerance: Option<String>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn resolve_spec(args: &ParamArgs) -> Result<ParamsSpec, Error> {
    let mut spec = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| {
                Error::UsageError(format!("cannot read config {}: {e}", path.display()))
            })?;
            ParamsSpec::from_json(&text)?
        }
        None => ParamsSpec::default(),
    };
    if let Some(h1) = args.h1 {
        spec.h1 = h1;
    }
    if let Some(j) = args.j_max {
        spec.j_max = j;
    }
    if let Some(rp) = &args.r_prime {
        spec.r_prime = if rp.trim() == "j+1" {
            RPrimeSpec::Rule("j+1".into())
        } else {
            let list = rp
                .split(',')
                .map(|t| {
                    t.trim()
                        .parse::<u64>()
                        .map_err(|_| Error::UsageError(format!("bad --r-prime entry {t:?}")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            RPrimeSpec::List(list)
        };
    }
    if let Some(sp) = &args.spacers {
        spec.spacers = if sp.trim() == "paper" {
            SpacerSpec::Rule("paper".into())
        } else {
            SpacerSpec::Lists(
                serde_json::from_str(sp)
                    .map_err(|e| Error::UsageError(format!("bad --spacers: {e}")))?,
            )
        };
    }
    if let Some(bw) = &args.base_width {
        parse_rational(bw)?;
        spec.base_width = Some(bw.clone());
    }
    if let Some(cap) = args.cardinality_cap {
        spec.cardinality_cap = Some(cap);
    }
    Ok(spec)
}

/// One report destination; JSON documents embed the parameter echo, CSV
/// sends it to stderr so the table itself stays RFC-4180.
struct Output {
    format: Format,
    params: ParamsSpec,
}

impl Output {
    fn emit(
        &self,
        command: &str,
        report: serde_json::Value,
        header: &[&str],
        rows: Vec<Vec<String>>,
    ) -> Result<(), Error> {
        match self.format {
            Format::Json => {
                let doc = json!({
                    "command": command,
                    "params": self.params,
                    "report": report,
                });
                println!("{doc}");
            }
            Format::Csv => {
                eprintln!(
                    "params: {}",
                    serde_json::to_string(&self.params).expect("params serialize")
                );
                let mut w = csv::Writer::from_writer(std::io::stdout());
                w.write_record(header)
                    .and_then(|()| rows.iter().try_for_each(|r| w.write_record(r)))
                    .and_then(|()| w.flush().map_err(csv::Error::from))
                    .map_err(|e| Error::UsageError(format!("cannot write CSV: {e}")))?;
            }
        }
        Ok(())
    }
}

fn parse_set(table: &StageTable, selector: &str) -> Result<LevelSet, Error> {
    LevelSet::parse(table, selector)
}

fn parse_power(s: &str) -> Result<BigInt, Error> {
    BigInt::from_str(s.trim()).map_err(|_| Error::UsageError(format!("bad power {s:?}")))
}

fn parse_tolerance(t: &Option<String>) -> Result<Option<Rat>, Error> {
    t.as_deref().map(parse_rational).transpose()
}

fn corr_fields(bound: &CorrBound) -> (String, String, String) {
    (
        format_rational(&bound.lo),
        format_rational(&bound.hi),
        format_rational(&bound.unresolved),
    )
}

fn run(cli: &Cli) -> Result<ExitCode, Error> {
    let spec = resolve_spec(&cli.params)?;
    if let Command::Verify { seed, samples } = &cli.command {
        require_samples(*samples)?;
        let passed = verify::run(&spec, *seed, *samples, cli.format)?;
        return Ok(if passed {
            ExitCode::SUCCESS
        } else {
            ExitCode::from(1)
        });
    }
    let table = StageTable::build(spec.to_params()?)?;
    let out = Output {
        format: cli.format,
        params: ParamsSpec::normalized(table.params()),
    };
    match &cli.command {
        Command::Stages => cmd_stages(&table, &out),
        Command::Correlate {
            a,
            b,
            n,
            depth,
            epsilon,
        } => {
            let a = parse_set(&table, a)?;
            let b = match b {
                Some(sel) => parse_set(&table, sel)?,
                None => a.clone(),
            };
            let n = parse_power(n)?;
            let bound = match depth {
                Some(d) => correlation(&table, &a, &b, &n, *d)?,
                None => {
                    let eps = epsilon.as_deref().map(parse_rational).transpose()?;
                    correlation_auto(&table, &a, &b, &n, eps)?
                }
            };
            let (lo, hi, unresolved) = corr_fields(&bound);
            out.emit(
                "correlate",
                serde_json::to_value(&bound).expect("report serialize"),
                &["n", "depth", "lo", "hi", "unresolved"],
                vec![vec![n.to_string(), bound.depth.to_string(), lo, hi, unresolved]],
            )
        }
        Command::Rigidity { stage, a, b, depth } => {
            let a = match a {
                Some(sel) => parse_set(&table, sel)?,
                None => LevelSet::single(&table, *stage, 0u32.into())?,
            };
            let b = match b {
                Some(sel) => parse_set(&table, sel)?,
                None => a.clone(),
            };
            let depth = depth.unwrap_or_else(|| (stage + 2).min(table.j_max()));
            let rep = rigidity_report(&table, &a, &b, *stage, depth)?;
            let (lo, hi, _) = corr_fields(&rep.corr);
            out.emit(
                "rigidity",
                serde_json::to_value(&rep).expect("report serialize"),
                &[
                    "stage",
                    "power",
                    "lo",
                    "hi",
                    "target",
                    "deviation_bound",
                    "budget",
                    "holds",
                    "holds_tight",
                ],
                vec![vec![
                    rep.stage.to_string(),
                    rep.power.to_string(),
                    lo,
                    hi,
                    format_rational(&rep.target),
                    format_rational(&rep.deviation_bound),
                    format_rational(&rep.budget),
                    rep.holds.to_string(),
                    rep.holds_tight.to_string(),
                ]],
            )
        }
        Command::HalfLimit { stage, a, b, depth } => {
            let a = match a {
                Some(sel) => parse_set(&table, sel)?,
                None => LevelSet::single(&table, *stage, 0u32.into())?,
            };
            let b = match b {
                Some(sel) => parse_set(&table, sel)?,
                None => a.clone(),
            };
            let depth = depth.unwrap_or_else(|| (stage + 2).min(table.j_max()));
            let rep = half_limit_report(&table, &a, &b, *stage, depth)?;
            let (lo, hi, _) = corr_fields(&rep.corr);
            out.emit(
                "half-limit",
                serde_json::to_value(&rep).expect("report serialize"),
                &[
                    "stage",
                    "power",
                    "lo",
                    "hi",
                    "target",
                    "deviation_bound",
                    "slack",
                    "holds",
                    "holds_tight",
                ],
                vec![vec![
                    rep.stage.to_string(),
                    rep.power.to_string(),
                    lo,
                    hi,
                    format_rational(&rep.target),
                    format_rational(&rep.deviation_bound),
                    format_rational(&rep.slack),
                    rep.holds.to_string(),
                    rep.holds_tight.to_string(),
                ]],
            )
        }
        Command::Components { n, stage, depth } => {
            if *n == 0 {
                return Err(Error::UsageError("power n must be positive".into()));
            }
            let stage = stage.unwrap_or(*n as usize + 2);
            let depth = depth.unwrap_or(stage + 2);
            let rep = ergodic_components(&table, stage, *n, depth)?;
            let rows = rep
                .components
                .iter()
                .zip(&rep.sizes)
                .enumerate()
                .map(|(i, (set, size))| {
                    vec![
                        rep.n.to_string(),
                        rep.stage.to_string(),
                        rep.depth.to_string(),
                        i.to_string(),
                        size.to_string(),
                        set.to_selector(),
                    ]
                })
                .collect();
            out.emit(
                "components",
                serde_json::to_value(&rep).expect("report serialize"),
                &["n", "stage", "depth", "component", "size", "selector"],
                rows,
            )
        }
        Command::Scan { mode, a, b, depth } => {
            let a = parse_set(&table, a)?;
            let b = match b {
                Some(sel) => parse_set(&table, sel)?,
                None => a.clone(),
            };
            let depth = depth.unwrap_or_else(|| table.j_max());
            let mode = match mode {
                ModeArg::Rigid => ScanMode::Rigid,
                ModeArg::Half => ScanMode::Half,
            };
            let rows = decay_scan(&table, &a, &b, mode, depth)?;
            let csv_rows = rows
                .iter()
                .map(|row| {
                    vec![
                        row.n.to_string(),
                        format_rational(&row.corr.lo),
                        format_rational(&row.corr.hi),
                        format_rational(&row.target),
                        format_rational(&row.deviation_bound),
                    ]
                })
                .collect();
            out.emit(
                "scan",
                json!({ "rows": rows }),
                &["n", "lo", "hi", "target", "deviation_bound"],
                csv_rows,
            )
        }
        Command::Poisson(PoissonCmd::Cov {
            a,
            b,
            n,
            window,
            samples,
            seed,
            tolerance,
        }) => {
            require_samples(*samples)?;
            let a = parse_set(&table, a)?;
            let b = match b {
                Some(sel) => parse_set(&table, sel)?,
                None => a.clone(),
            };
            let n = parse_power(n)?;
            let window = window
                .as_deref()
                .map(|sel| parse_set(&table, sel))
                .transpose()?;
            let tol = parse_tolerance(tolerance)?;
            let rep = mc_covariance(&table, &a, &b, &n, window.as_ref(), *samples, *seed, tol)?;
            let report = json!({
                "n": rep.n.to_string(),
                "samples": rep.replicas,
                "seed": rep.seed,
                "window": rep.window,
                "estimate": format_rational(&rep.estimate),
                "estimate_f64": rep.estimate_f64,
                "stderr": rep.stderr,
                "exact_lo": format_rational(&rep.exact.lo),
                "exact_hi": format_rational(&rep.exact.hi),
                "exact_depth": rep.exact.depth,
                "coverage_gap": format_rational(&rep.coverage_gap),
                "tolerance": format_rational(&rep.tolerance),
                "pass": rep.within,
            });
            out.emit(
                "poisson cov",
                report,
                &[
                    "n",
                    "samples",
                    "seed",
                    "estimate",
                    "stderr",
                    "exact_lo",
                    "exact_hi",
                    "coverage_gap",
                    "pass",
                ],
                vec![vec![
                    rep.n.to_string(),
                    rep.replicas.to_string(),
                    rep.seed.to_string(),
                    format_rational(&rep.estimate),
                    rep.stderr.to_string(),
                    format_rational(&rep.exact.lo),
                    format_rational(&rep.exact.hi),
                    format_rational(&rep.coverage_gap),
                    rep.within.to_string(),
                ]],
            )
        }
        Command::Poisson(PoissonCmd::Rigidity {
            stage,
            a,
            window,
            samples,
            seed,
            tolerance,
        }) => {
            require_samples(*samples)?;
            let a = match a {
                Some(sel) => parse_set(&table, sel)?,
                None => LevelSet::single(&table, 2, 0u32.into())?,
            };
            let window = window
                .as_deref()
                .map(|sel| parse_set(&table, sel))
                .transpose()?;
            let tol = parse_tolerance(tolerance)?;
            let rep = suspension_rigidity_test(
                &table,
                &a,
                *stage,
                window.as_ref(),
                *samples,
                *seed,
                tol,
            )?;
            let report = json!({
                "stage": rep.stage,
                "power": rep.power.to_string(),
                "r": rep.r,
                "samples": rep.cov.replicas,
                "seed": rep.cov.seed,
                "estimate": format_rational(&rep.cov.estimate),
                "estimate_f64": rep.cov.estimate_f64,
                "stderr": rep.cov.stderr,
                "exact_lo": format_rational(&rep.cov.exact.lo),
                "exact_hi": format_rational(&rep.cov.exact.hi),
                "normalized": rep.normalized,
                "floor": format_rational(&rep.floor),
                "coverage_gap": format_rational(&rep.cov.coverage_gap),
                "pass": rep.pass,
            });
            out.emit(
                "poisson rigidity",
                report,
                &[
                    "stage",
                    "power",
                    "samples",
                    "seed",
                    "estimate",
                    "stderr",
                    "normalized",
                    "floor",
                    "coverage_gap",
                    "pass",
                ],
                vec![vec![
                    rep.stage.to_string(),
                    rep.power.to_string(),
                    rep.cov.replicas.to_string(),
                    rep.cov.seed.to_string(),
                    format_rational(&rep.cov.estimate),
                    rep.cov.stderr.to_string(),
                    rep.normalized.to_string(),
                    format_rational(&rep.floor),
                    format_rational(&rep.cov.coverage_gap),
                    rep.pass.to_string(),
                ]],
            )
        }
        Command::Verify { .. } => unreachable!("handled above"),
    }?;
    Ok(ExitCode::SUCCESS)
}

fn require_samples(samples: u64) -> Result<(), Error> {
    if samples < 1000 {
        return Err(Error::UsageError(format!(
            "statistical runs need at least 1000 samples, got {samples}"
        )));
    }
    Ok(())
}

fn cmd_stages(table: &StageTable, out: &Output) -> Result<(), Error> {
    let mut stages = Vec::new();
    let mut rows = Vec::new();
    for j in 1..=table.j_max() {
        let stage = table.stage(j);
        let cut = table.cut(j).ok();
        let (r, spacer_total) = match cut {
            Some(c) => (
                Some(c.columns),
                Some(c.spacers.iter().sum::<num_bigint::BigUint>()),
            ),
            None => (None, None),
        };
        stages.push(json!({
            "stage": j,
            "height": stage.height.to_string(),
            "width": format_rational(&stage.width),
            "measure": format_rational(&stage.measure),
            "r": r,
            "spacer_total": spacer_total.as_ref().map(|s| s.to_string()),
        }));
        rows.push(vec![
            j.to_string(),
            stage.height.to_string(),
            r.map(|r| r.to_string()).unwrap_or_default(),
            spacer_total.map(|s| s.to_string()).unwrap_or_default(),
            format_rational(&stage.width),
            format_rational(&stage.measure),
        ]);
    }
    out.emit(
        "stages",
        json!({ "stages": stages }),
        &["stage", "height", "r", "spacer_total", "width", "measure"],
        rows,
    )
}
