use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use pdboo::harness::{
    bound_violations, dp_verify, monte_carlo_returns, plotdata, run_experiment, write_dp_trace, DpVerifyOptions,
    ExperimentConfig, Policy,
};
use pdboo::mdp::load_mdp;
use pdboo::perturbation::XiScale;
use pdboo::seed::run_rng;
use pdboo::Error;

#[derive(Parser, Debug)]
#[command(
    name = "pdboo",
    version,
    about = "Quantile agents, perturbed distributional DP and N-Chain experiments"
)]
struct Cli {
    /// Master seed (overrides the config's master_seed for `run`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output location: a directory for `run`/`plotdata`, a CSV file for
    /// `dp-verify`/`oracle` (stdout when omitted).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run every agent and seed of an experiment config.
    Run { config: PathBuf },
    /// Iterate the perturbed DP operator and check the convergence bound.
    DpVerify {
        mdp: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        delta0: f64,
        #[arg(long, default_value_t = 0.001)]
        eps: f64,
        #[arg(long, default_value_t = 200)]
        iters: usize,
        /// Quantiles per distribution.
        #[arg(long, default_value_t = 512)]
        n: usize,
        /// Atoms per reward distribution.
        #[arg(long, default_value_t = 64)]
        m: usize,
        /// Dirichlet concentration.
        #[arg(long, default_value_t = 0.05)]
        beta: f64,
        #[arg(long, value_enum, default_value_t = XiMode::AlphaCertified)]
        xi_scale: XiMode,
    },
    /// Monte-Carlo discounted returns of a fixed policy from the start state.
    Oracle {
        mdp: PathBuf,
        /// `<state> <action>` lines; unlisted states take action 0.
        #[arg(long)]
        policy: PathBuf,
        #[arg(long, default_value_t = 200_000)]
        rollouts: usize,
        #[arg(long, default_value_t = 1000)]
        max_steps: u64,
    },
    /// Densities, W₂ curves and count curves from a run directory.
    Plotdata { run_dir: PathBuf },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum XiMode {
    AlphaCertified,
    RawDelta,
}

enum Failure {
    Usage(String),
    Breach(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvariantBreach { .. } => Failure::Breach(e.to_string()),
            other => Failure::Usage(other.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Breach(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

fn output(out: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            Box::new(io::BufWriter::new(fs::File::create(p)?))
        }
        None => Box::new(io::stdout().lock()),
    })
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run { config } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = cli.seed {
                cfg.master_seed = s;
            }
            let report = run_experiment(&cfg, cli.out.as_deref())?;
            for v in &report.variants {
                let tag = if v.label.is_empty() {
                    String::new()
                } else {
                    format!("[{}] ", v.label)
                };
                for s in &v.summary {
                    let w2 = s.final_w2.map(|w| format!("{w:.4}")).unwrap_or_else(|| "-".into());
                    eprintln!(
                        "{tag}{}: {} seeds, {} optimal actions, final W2 {w2}",
                        s.agent, s.seed_count, s.total_optimal
                    );
                }
            }
            let failed: Vec<_> = report.failures().collect();
            for f in &failed {
                eprintln!(
                    "run {} seed {} failed: {}",
                    f.agent,
                    f.seed,
                    f.error.as_deref().unwrap_or("")
                );
            }
            eprintln!("wrote {}", report.out_dir.display());
            if report.has_invariant_breach() {
                return Err(Failure::Breach(format!(
                    "{} run(s) hit an invariant breach",
                    failed.len()
                )));
            }
            if !failed.is_empty() {
                return Err(Failure::Usage(format!("{} run(s) failed", failed.len())));
            }
            Ok(())
        }
        Command::DpVerify {
            mdp,
            delta0,
            eps,
            iters,
            n,
            m,
            beta,
            xi_scale,
        } => {
            let mdp = load_mdp(&mdp)?;
            let opts = DpVerifyOptions {
                delta0,
                epsilon: eps,
                iters,
                n_quantiles: n,
                m_reward: m,
                beta,
                xi_scale: match xi_scale {
                    XiMode::AlphaCertified => XiScale::AlphaCertified,
                    XiMode::RawDelta => XiScale::RawDelta,
                },
                seed: cli.seed.unwrap_or(0),
            };
            let run = dp_verify(&mdp, &opts)?;
            write_dp_trace(&run.trace, output(cli.out.as_deref())?)?;
            eprintln!(
                "final sup gap {:.3e} (V_max {}), projection slack {:.3e}",
                run.final_sup_gap(),
                mdp.vmax(),
                run.slack
            );
            let bad = bound_violations(&run);
            if let Some(r) = bad.first() {
                return Err(Failure::Breach(format!(
                    "bound violated on {} row(s); first at n = {}: {} > {}",
                    bad.len(),
                    r.n,
                    r.sup_gap,
                    r.bound
                )));
            }
            if opts.xi_scale == XiScale::AlphaCertified {
                if let Some(r) = run.trace.iter().find(|r| !r.assumption_ok) {
                    return Err(Failure::Breach(format!(
                        "certified ξ left the ambiguity set at n = {}",
                        r.n
                    )));
                }
            }
            Ok(())
        }
        Command::Oracle {
            mdp,
            policy,
            rollouts,
            max_steps,
        } => {
            let mdp = load_mdp(&mdp)?;
            let text = fs::read_to_string(&policy).map_err(|e| Failure::Usage(format!("{}: {e}", policy.display())))?;
            let policy = Policy::parse(&text, &mdp)?;
            let mut rng = run_rng(cli.seed.unwrap_or(0), 0);
            let r = monte_carlo_returns(&mdp, &policy, rollouts, max_steps, &mut rng)?;
            let n = r.returns.len() as f64;
            let mut w = output(cli.out.as_deref())?;
            writeln!(w, "rollouts,mean,std,se_mean,se_std,truncated")?;
            writeln!(
                w,
                "{},{},{},{},{},{}",
                r.returns.len(),
                r.mean(),
                r.std(),
                r.std() / n.sqrt(),
                r.std() / (2.0 * n).sqrt(),
                r.truncated
            )?;
            w.flush()?;
            Ok(())
        }
        Command::Plotdata { run_dir } => {
            let report = plotdata(&run_dir, cli.out.as_deref())?;
            eprintln!("wrote {} file(s)", report.files.len());
            Ok(())
        }
    }
}
