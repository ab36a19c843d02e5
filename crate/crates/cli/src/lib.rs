//! Command-line front end for the experiment harness.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use tdpmd::algorithms::Algorithm;
use tdpmd::diagnostics::{CheckReport, CheckStatus};
use tdpmd::harness::{
    random_mdp, run_compare, run_experiment, write_compare_outputs, write_outputs,
    ExperimentConfig, RunOutput,
};
use tdpmd::parallel::Execution;
use tdpmd::sampling::hoeffding_sizes;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Parser, Debug)]
#[command(
    name = "tdpmd",
    version,
    about = "Policy mirror descent experiments on tabular MDPs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a random MDP as JSON.
    GenMdp {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        states: usize,
        #[arg(long)]
        actions: usize,
        #[arg(long)]
        gamma: f64,
        /// Output file; stdout when omitted.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Run an experiment config.
    Run(RunArgs),
    /// Run two algorithms on the same instances and merge their CSVs.
    Compare {
        #[command(flatten)]
        run: RunArgs,
        first: Algorithm,
        second: Algorithm,
    },
    /// Run a config with every check enabled.
    Validate(RunArgs),
    /// Print Hoeffding per-entry sample counts.
    SampleSizes {
        #[arg(long)]
        gamma: f64,
        #[arg(long)]
        delta: f64,
        #[arg(long)]
        iterations: usize,
        #[arg(long)]
        states: usize,
        #[arg(long)]
        actions: usize,
        #[arg(long)]
        alpha: f64,
        /// Counts for the action-value variant.
        #[arg(long)]
        q_variant: bool,
    },
}

#[derive(Args, Debug)]
struct RunArgs {
    /// TOML experiment config.
    config: PathBuf,
    /// Master seed; replaces the configured seed list.
    #[arg(long)]
    seed: Option<u64>,
    /// With --seed, run this many consecutive trial seeds.
    #[arg(long, requires = "seed", default_value_t = 1)]
    trials: u64,
    /// Output directory (overrides the config and the environment).
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Run trials one after another.
    #[arg(long)]
    sequential: bool,
}

impl RunArgs {
    fn load(&self) -> tdpmd::Result<(ExperimentConfig, PathBuf, Execution)> {
        let mut config = ExperimentConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            if self.trials == 0 {
                return Err(tdpmd::Error::Config("--trials must be at least 1".into()));
            }
            config.seeds = (0..self.trials).map(|i| seed.wrapping_add(i)).collect();
        }
        let dir = self
            .output_dir
            .clone()
            .unwrap_or_else(|| config.output_dir());
        let exec = if self.sequential {
            Execution::Sequential
        } else {
            Execution::Parallel
        };
        Ok((config, dir, exec))
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{e}");
                return EXIT_USAGE;
            }
            let _ = write!(out, "{e}");
            return EXIT_OK;
        }
    };
    match dispatch(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_USAGE
        }
    }
}

fn dispatch(command: Command, out: &mut dyn Write) -> tdpmd::Result<i32> {
    match command {
        Command::GenMdp {
            seed,
            states,
            actions,
            gamma,
            out: path,
        } => {
            let mdp = random_mdp(seed, states, actions, gamma)?;
            match path {
                Some(p) => {
                    mdp.save(&p)?;
                    writeln!(out, "wrote {}", p.display())?;
                }
                None => writeln!(out, "{}", mdp.to_json())?,
            }
            Ok(EXIT_OK)
        }
        Command::Run(args) => {
            let (config, dir, exec) = args.load()?;
            let outputs = run_experiment(&config, exec)?;
            let paths = write_outputs(&dir, &config.output.prefix, &outputs)?;
            report(out, &outputs, &paths)
        }
        Command::Validate(args) => {
            let (mut config, dir, exec) = args.load()?;
            config.checks = vec!["all".into()];
            let outputs = run_experiment(&config, exec)?;
            let paths = write_outputs(&dir, &config.output.prefix, &outputs)?;
            report(out, &outputs, &paths)
        }
        Command::Compare { run, first, second } => {
            let (config, dir, exec) = run.load()?;
            let pairs = run_compare(&config, [first, second], exec)?;
            let paths = write_compare_outputs(&dir, &config.output.prefix, &pairs)?;
            let flat: Vec<RunOutput> = pairs.into_iter().flatten().collect();
            report(out, &flat, &paths)
        }
        Command::SampleSizes {
            gamma,
            delta,
            iterations,
            states,
            actions,
            alpha,
            q_variant,
        } => {
            let (m_q, m_v) =
                hoeffding_sizes(iterations, states, actions, gamma, delta, alpha, q_variant)?;
            writeln!(out, "m_q = {m_q}")?;
            if !q_variant {
                writeln!(out, "m_v = {m_v}")?;
            }
            Ok(EXIT_OK)
        }
    }
}

fn report(out: &mut dyn Write, outputs: &[RunOutput], paths: &[PathBuf]) -> tdpmd::Result<i32> {
    let mut failed = false;
    for o in outputs {
        let s = &o.summary;
        writeln!(
            out,
            "seed {} {}: final v_err {:.6e}, pol_err {:.6e}, kappa0 {:.6e}, {:.1} ms",
            s.seed, s.variant, s.final_v_err, s.final_pol_err, s.kappa0, s.wall_ms
        )?;
        for c in &s.checks {
            writeln!(out, "  {}", check_line(c))?;
            failed |= c.status == CheckStatus::Fail;
        }
    }
    for p in paths {
        writeln!(out, "wrote {}", p.display())?;
    }
    Ok(if failed { EXIT_CHECK_FAILED } else { EXIT_OK })
}

fn check_line(c: &CheckReport) -> String {
    let status = match c.status {
        CheckStatus::Pass => "PASS",
        CheckStatus::Fail => "FAIL",
        CheckStatus::NotApplicable => "n/a ",
    };
    let mut line = format!("{status} {}", c.name);
    if c.status != CheckStatus::NotApplicable {
        line += &format!(
            " (worst {:.3e} at {:?}, tol {:.1e})",
            c.worst_violation, c.worst_iteration, c.tolerance
        );
    }
    if let Some(d) = &c.detail {
        line += &format!(": {d}");
    }
    line
}
