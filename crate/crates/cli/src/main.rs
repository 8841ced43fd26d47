use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rckf_core::experiment::{
    cmd_compare, cmd_generate, cmd_run, cmd_sweep, compare_rows_csv, compare_rows_table, timing_csv, ConfigStore,
    Experiment, Override, RunSummary,
};
use rckf_core::Error;

/// Cubature / robust cubature Kalman filter experiments.
#[derive(Parser)]
#[command(name = "rckf", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write noisy datasets for every configured seed.
    Generate(Common),
    /// Run CKF and RCKF on the configured noise profile.
    Run(Common),
    /// Compare the traces in one or more run directories.
    Compare {
        /// Run directories holding dataset.csv, trace_ckf.csv and trace_rckf.csv.
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Leading samples excluded from the metrics.
        #[arg(long, default_value_t = 0)]
        warmup: usize,
        /// Also write compare.csv here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every noise family over every configured seed.
    Sweep(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment name or path to an experiment JSON file.
    #[arg(long, default_value = "default")]
    config: String,
    /// Directory with params/, scenarios/, noise/ and experiments/ subdirectories.
    /// Bundled configs are used for anything not found there.
    #[arg(long)]
    configs_dir: Option<PathBuf>,
    /// Seed to run; repeat for several. Replaces the configured list.
    #[arg(long)]
    seed: Vec<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write timing.csv with mean per-step wall time per filter.
    #[arg(long)]
    timing: bool,
    /// Override a config value by dotted key, e.g. `scenario.duration=5` or `huber_c=2`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn experiment(&self) -> Result<Experiment, Error> {
        let store = match &self.configs_dir {
            Some(dir) => ConfigStore::with_root(dir),
            None => ConfigStore::bundled(),
        };
        let mut overrides = self.set.iter().map(|s| Override::parse(s)).collect::<Result<Vec<_>, _>>()?;
        if !self.seed.is_empty() {
            overrides.push(Override { key: "seeds".into(), value: self.seed.clone().into() });
        }
        Experiment::load(&store, &self.config, &overrides)
    }

    fn out(&self, exp: &Experiment) -> PathBuf {
        self.out.clone().unwrap_or_else(|| exp.config.output_dir.clone())
    }
}

fn report(summary: RunSummary, timing: bool) -> Result<(), Error> {
    print!("{}", summary.aggregate_table());
    if timing {
        for (label, seed, t) in &summary.timing {
            print!("{label} seed {seed}\n{}", timing_csv(t));
        }
    }
    let failed = summary.failures.len();
    let mut first = None;
    for (label, e) in summary.failures {
        eprintln!("{label}: {e}");
        first.get_or_insert(e);
    }
    match first {
        None => Ok(()),
        Some(e) => {
            eprintln!("{failed} run(s) failed");
            Err(e)
        }
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Generate(c) => {
            let exp = c.experiment()?;
            for path in cmd_generate(&exp, &c.out(&exp))? {
                println!("{}", path.display());
            }
            Ok(())
        }
        Command::Run(c) => {
            let exp = c.experiment()?;
            let timing = c.timing || exp.config.timing;
            let summary = cmd_run(&exp, &c.out(&exp), timing)?;
            report(summary, timing)
        }
        Command::Sweep(c) => {
            let exp = c.experiment()?;
            let timing = c.timing || exp.config.timing;
            let summary = cmd_sweep(&exp, &c.out(&exp), timing)?;
            report(summary, timing)
        }
        Command::Compare { dirs, warmup, out } => {
            let rows = cmd_compare(&dirs, warmup)?;
            print!("{}", compare_rows_table(&rows));
            if let Some(out) = out {
                std::fs::create_dir_all(&out).map_err(|e| Error::Io { path: out.clone(), source: e })?;
                let path = out.join("compare.csv");
                std::fs::write(&path, compare_rows_csv(&rows)).map_err(|e| Error::Io { path, source: e })?;
            }
            Ok(())
        }
    }
}

fn exit_code(category: &str) -> u8 {
    match category {
        "config" => 2,
        "data" => 3,
        "io" => 4,
        "parameter" => 5,
        "noise" => 6,
        "model" => 7,
        "filter" => 8,
        "metrics" => 9,
        _ => 1,
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.category());
            ExitCode::from(exit_code(e.category()))
        }
    }
}
