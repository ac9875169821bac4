//! `sowcause`: sowing recommendations from blended forecasts and causal
//! evaluation of their effect on yield.
//!
//! Exit status: 0 on success, 1 on internal failures (I/O and the like),
//! 2 on invalid input or arguments.

mod commands;
mod report;
mod settings;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use sowcause::config::KeyValues;
use sowcause::{Error, Result};

use crate::report::RunReport;
use crate::settings::{load_layers, PipelineConfig};

#[derive(Debug, Parser)]
#[command(name = "sowcause", version, about = "Sowing recommendations and causal evaluation of their effect on yield")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    /// Only print errors.
    #[arg(short, long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

/// Settings shared by the commands that read a run configuration.
#[derive(Debug, Args)]
struct RunArgs {
    /// Run configuration in `key = value` format.
    #[arg(short, long)]
    config: Option<PathBuf>,

    /// Override a configuration key; repeatable. Flags win over the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Random seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Worker threads. Results do not depend on this.
    #[arg(long)]
    threads: Option<usize>,

    /// Directory for outputs.
    #[arg(long)]
    out_dir: Option<PathBuf>,

    /// Comma-separated methods: linear, matching, ips, tlearner, xlearner.
    #[arg(long)]
    methods: Option<String>,

    /// Bootstrap replicates (at least 100).
    #[arg(short = 'B', long)]
    bootstrap: Option<usize>,

    /// Repetitions per refutation test.
    #[arg(long)]
    reps: Option<usize>,

    /// Refutation tests: placebo, rcc, rsr, ucc, all or none.
    #[arg(long)]
    refute: Option<String>,
}

impl RunArgs {
    fn overrides(&self) -> Vec<String> {
        let mut o = self.set.clone();
        let mut push = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                o.push(format!("{k}={v}"));
            }
        };
        push("seed", self.seed.map(|v| v.to_string()));
        push("threads", self.threads.map(|v| v.to_string()));
        push("out_dir", self.out_dir.as_ref().map(|p| p.display().to_string()));
        push("methods", self.methods.clone());
        push("bootstrap", self.bootstrap.map(|v| v.to_string()));
        push("reps", self.reps.map(|v| v.to_string()));
        push("refute", self.refute.clone());
        o
    }

    fn layers(&self) -> Result<KeyValues> {
        load_layers(self.config.as_deref(), &self.overrides())
    }

    fn load(&self) -> Result<PipelineConfig> {
        PipelineConfig::from_kv(&self.layers()?)
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Blend coarse and fine forecast grids into 10-day high resolution forecasts.
    Blend {
        /// Coarse long-range grid CSV.
        #[arg(long)]
        coarse: PathBuf,
        /// Fine short-range grid CSV.
        #[arg(long)]
        fine: PathBuf,
        /// Output grid CSV.
        #[arg(long)]
        out: PathBuf,
        /// Grid spacing in metres; inferred from the points when omitted.
        #[arg(long)]
        resolution_m: Option<f64>,
    },
    /// Write the sowing recommendation map for one issue date.
    Recommend {
        /// Blended grid CSV.
        #[arg(long)]
        art: PathBuf,
        /// Rule overrides in `key = value` format.
        #[arg(long)]
        rules: Option<PathBuf>,
        /// Issue date of the forecast to map (YYYY-MM-DD).
        #[arg(long)]
        date: NaiveDate,
        /// Output map CSV.
        #[arg(long)]
        out: PathBuf,
        /// Also write a plain-text graymap of the levels.
        #[arg(long)]
        raster: Option<PathBuf>,
        #[arg(long)]
        resolution_m: Option<f64>,
    },
    /// List back-door adjustment sets of a causal graph.
    Identify {
        /// Graph file; the shipped farm graph when omitted.
        #[arg(long)]
        graph: Option<PathBuf>,
        /// Most sets to list.
        #[arg(long, default_value_t = 20)]
        max_results: usize,
        /// Comma-separated set to validate.
        #[arg(long)]
        check: Option<String>,
    },
    /// Estimate treatment effects and write a run report.
    Estimate {
        #[command(flatten)]
        run: RunArgs,
        /// Report path; `report.json` in the output directory by default.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run refutation tests against the estimates in a report.
    Refute {
        #[command(flatten)]
        run: RunArgs,
        /// Report written by `estimate`.
        #[arg(long)]
        report: PathBuf,
        /// Output report; the input report is updated in place by default.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic field dataset with known effect.
    Synth {
        /// Model configuration JSON; defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output prefix for `<prefix>_fields.csv` and `<prefix>_truth.json`.
        #[arg(long)]
        out: String,
        #[arg(long)]
        seed: Option<u64>,
        /// Number of fields.
        #[arg(long)]
        n: Option<usize>,
        /// Direct treatment effect on crop growth.
        #[arg(long)]
        beta_t: Option<f64>,
    },
    /// Run blend, recommend, label, identify, estimate and refute in one go.
    Pipeline {
        #[command(flatten)]
        run: RunArgs,
    },
}

fn run(cli: Cli) -> Result<()> {
    let stdout = &mut std::io::stdout().lock();
    match cli.command {
        Command::Blend {
            coarse,
            fine,
            out,
            resolution_m,
        } => {
            let art = commands::cmd_blend(&coarse, &fine, &out, resolution_m)?;
            writeln!(stdout, "wrote {} blended forecast(s) to {}", art.len(), out.display())?;
        }
        Command::Recommend {
            art,
            rules,
            date,
            out,
            raster,
            resolution_m,
        } => {
            let map = commands::cmd_recommend(&art, rules.as_deref(), date, &out, raster.as_deref(), resolution_m)?;
            let top = map.iter().filter(|r| r.level == sowcause::sowing::TOP_LEVEL).count();
            writeln!(stdout, "{date}: {top} of {} points at level 3", map.len())?;
        }
        Command::Identify {
            graph,
            max_results,
            check,
        } => {
            let check = check.map(|c| c.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect());
            commands::cmd_identify(graph.as_deref(), max_results, check, stdout)?;
        }
        Command::Estimate { run, report } => {
            let cfg = run.load()?;
            let path = report.unwrap_or_else(|| cfg.out_dir.join("report.json"));
            let r = commands::cmd_estimate(&cfg, &path)?;
            print_estimates(stdout, &r)?;
            writeln!(stdout, "report: {}", path.display())?;
        }
        Command::Refute { run, report, out } => {
            let mut kv = run.layers()?;
            if kv.get("seed").is_none() {
                kv.set("seed", RunReport::read(&report)?.seed.to_string());
            }
            if kv.get("reps") == Some("0") {
                return Err(Error::InvalidRepetitions(0));
            }
            let cfg = PipelineConfig::from_kv(&kv)?;
            let out = out.unwrap_or_else(|| report.clone());
            let r = commands::cmd_refute(&cfg, &report, &out)?;
            print_refutations(stdout, &r)?;
            writeln!(stdout, "report: {}", out.display())?;
        }
        Command::Synth {
            config,
            out,
            seed,
            n,
            beta_t,
        } => {
            let mut cfg = commands::load_scm_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(n) = n {
                cfg.n = n;
            }
            if let Some(b) = beta_t {
                cfg.beta_t = b;
            }
            let (fields, truth) = commands::cmd_synth(&cfg, &out)?;
            writeln!(stdout, "wrote {} and {}", fields.display(), truth.display())?;
        }
        Command::Pipeline { run } => {
            let cfg = run.load()?;
            let r = commands::cmd_pipeline(&cfg)?;
            print_estimates(stdout, &r)?;
            print_refutations(stdout, &r)?;
            writeln!(stdout, "report: {}", cfg.out_dir.join("report.json").display())?;
        }
    }
    Ok(())
}

fn print_estimates(out: &mut dyn Write, r: &RunReport) -> Result<()> {
    writeln!(
        out,
        "{} rows after trimming ({} treated, {} control)",
        r.dataset.rows_trimmed, r.dataset.treated_trimmed, r.dataset.control_trimmed
    )?;
    for e in &r.estimates {
        writeln!(
            out,
            "{:<9} ATE {:>10.4}  95% CI [{:.4}, {:.4}]  p = {:.4}",
            e.method.name(),
            e.ate,
            e.ci_low,
            e.ci_high,
            e.p_value
        )?;
    }
    Ok(())
}

fn print_refutations(out: &mut dyn Write, r: &RunReport) -> Result<()> {
    for (method, results) in &r.refutations {
        for t in results {
            let p = t.p_value.map_or("-".to_string(), |p| format!("{p:.3}"));
            let verdict = if t.passed { "passed" } else { "FAILED" };
            writeln!(
                out,
                "{method:<9} {:<8} new effect {:>10.4}  p = {p:<6} {verdict}",
                t.test.name(),
                t.new_effect
            )?;
        }
    }
    Ok(())
}

fn init_logging(verbose: u8, quiet: bool) {
    let level = match (quiet, verbose) {
        (true, _) => log::LevelFilter::Error,
        (false, 0) => log::LevelFilter::Warn,
        (false, 1) => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .init();
}

fn exit_code(e: &Error) -> u8 {
    if e.is_input_error() {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose, cli.quiet);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
