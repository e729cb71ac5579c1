//! Command-line front end: runs scenarios and coordinator comparisons and
//! writes their traces. Only flags are read; the environment is ignored.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use eesim_core::scenario::BUNDLED_EMERGENCY;
use eesim_core::sim::write_comparison;
use eesim_core::{compare, export, run, Coordinator, ExportFormat, PolicyMode, RunConfig, Scenario};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "eesim", version, about = "Energy-aware sensing coordination simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and export its traces.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "ee")]
        coordinator: Coordinator,
        /// Comma-separated export formats.
        #[arg(long, value_delimiter = ',', default_value = "csv")]
        formats: Vec<ExportFormat>,
    },
    /// Run several coordinators on the same scenario and seed.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Comma-separated coordinators, at least two.
        #[arg(long, value_delimiter = ',', default_value = "all_on,ee")]
        coordinators: Vec<Coordinator>,
        /// Also export every run's traces under `<out>/<coordinator>/`.
        #[arg(long, value_delimiter = ',')]
        formats: Vec<ExportFormat>,
    },
    /// Print the bundled scenario document.
    Scenario,
}

#[derive(Args)]
struct Common {
    /// Scenario document; the bundled emergency scenario when omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// performance_first, energy_first or balanced:<weight>.
    #[arg(long)]
    policy: Option<PolicyMode>,
    #[arg(long)]
    out: PathBuf,
    /// SECF energy log; kept in memory when omitted.
    #[arg(long)]
    secf_log: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<(Scenario, RunConfig)> {
        let scenario = match &self.scenario {
            Some(p) => Scenario::from_path(p)?,
            None => Scenario::bundled(),
        };
        let mut cfg = RunConfig::for_scenario(&scenario);
        if let Some(n) = self.steps {
            cfg.steps = n;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.policy = self.policy;
        cfg.secf_log = self.secf_log.clone();
        cfg.validate()?;
        Ok((scenario, cfg))
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.6}"))
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            common,
            coordinator,
            formats,
        } => {
            if formats.is_empty() {
                bail!("--formats needs at least one of csv, json");
            }
            let (scenario, mut cfg) = common.load()?;
            cfg.coordinator = coordinator;
            let out = run(&scenario, &cfg)?;
            let files = export(&out, &common.out, &formats)?;
            let s = &out.summary;
            println!(
                "{} steps, coordinator {}, total EC {:.6} J (P_tx {:.6}, P_p {:.6}), mean EE {}, requirements {}",
                s.steps,
                s.coordinator,
                s.total_ec,
                s.p_tx,
                s.p_p,
                fmt_opt(s.mean_ee),
                if s.requirements_met { "met" } else { "violated" },
            );
            for f in files {
                println!("wrote {}", f.display());
            }
        }
        Command::Compare {
            common,
            coordinators,
            formats,
        } => {
            let (scenario, cfg) = common.load()?;
            let (cmp, outs) = compare(&scenario, &cfg, &coordinators)?;
            print!("{}", cmp.csv());
            for f in write_comparison(&cmp, &common.out)? {
                println!("wrote {}", f.display());
            }
            if !formats.is_empty() {
                for o in &outs {
                    let dir = common.out.join(o.summary.coordinator.to_string());
                    let files = export(o, &dir, &formats)
                        .with_context(|| format!("exporting {} run", o.summary.coordinator))?;
                    println!("wrote {} files to {}", files.len(), dir.display());
                }
            }
        }
        Command::Scenario => print!("{BUNDLED_EMERGENCY}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
