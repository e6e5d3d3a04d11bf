use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Parser, Subcommand};

use adaptcl::config::{ExperimentConfig, Policy};
use adaptcl::env::predicted_heterogeneity;
use adaptcl::metrics::{emit_metrics, emit_summary};
use adaptcl::prune::PruneMethod;
use adaptcl::run::run;

/// Fixed per-worker pruned rates of the four pruning events used by the
/// pruning-order ablation, so every order variant faces identical budgets.
const ABLATION_SCHEDULE: [[f64; 10]; 4] = [
    [0.5, 0.3, 0.2, 0.3, 0.3, 0.2, 0.3, 0.2, 0.2, 0.0],
    [0.3, 0.2, 0.2, 0.2, 0.3, 0.3, 0.2, 0.2, 0.2, 0.0],
    [0.2, 0.1, 0.1, 0.1, 0.2, 0.2, 0.1, 0.0, 0.1, 0.0],
    [0.1, 0.0, 0.0, 0.0, 0.1, 0.0, 0.1, 0.0, 0.0, 0.0],
];

#[derive(Parser)]
#[command(
    name = "adaptcl",
    about = "Simulator for collaborative learning with dynamic adaptive pruning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write metrics.csv and summary.txt.
    Run {
        /// Key-value config file; flags override file values.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        #[arg(long)]
        policy: Option<String>,
        /// Extra `key=value` overrides, repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Grid over sigma, rho_max and gamma_min; one summary row per run.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "2,5,10,20")]
        sigma: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0.5")]
        rho_max: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0.1")]
        gamma_min: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "42")]
        seeds: Vec<u64>,
    },
    /// Compare the five pruning-order variants under a fixed rate schedule.
    AblatePrune {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn load_config(path: &Option<PathBuf>) -> adaptcl::Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn cmd_run(
    config_path: Option<PathBuf>,
    seed: Option<u64>,
    out_dir: PathBuf,
    policy: Option<String>,
    set: Vec<String>,
) -> adaptcl::Result<()> {
    let mut config = load_config(&config_path)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    if let Some(policy) = policy {
        config.policy = Policy::from_str(&policy)?;
    }
    for pair in &set {
        let (key, value) = pair.split_once('=').ok_or_else(|| {
            adaptcl::Error::InvalidConfig(format!("--set expects key=value, got '{pair}'"))
        })?;
        config.set(key.trim(), value.trim())?;
    }
    let out = run(&config)?;
    emit_metrics(&out.rounds, config.workers, &out_dir.join("metrics.csv"))?;
    emit_summary(&out.summary, &out_dir.join("summary.txt"))?;
    println!("{}", out.summary.to_line());
    Ok(())
}

fn cmd_sweep(
    config_path: Option<PathBuf>,
    out_dir: PathBuf,
    sigmas: Vec<f64>,
    rho_maxes: Vec<f64>,
    gamma_mins: Vec<f64>,
    seeds: Vec<u64>,
) -> adaptcl::Result<()> {
    let base = load_config(&config_path)?;
    let mut table = String::from(
        "sigma,rho_max,gamma_min,seed,h_predicted,final_acc,total_time_s,mean_param_reduction,baseline_time_s,speedup\n",
    );
    for &sigma in &sigmas {
        for &rho_max in &rho_maxes {
            for &gamma_min in &gamma_mins {
                for &seed in &seeds {
                    let mut config = base.clone();
                    config.sigma = sigma;
                    config.rho_max = rho_max;
                    config.gamma_min = gamma_min;
                    config.seed = seed;
                    let out = run(&config)?;
                    let h = predicted_heterogeneity(sigma, config.workers)?;
                    let s = &out.summary;
                    let _ = writeln!(
                        table,
                        "{sigma},{rho_max},{gamma_min},{seed},{h},{},{},{},{},{}",
                        s.final_acc,
                        s.total_time_s,
                        s.mean_param_reduction,
                        s.baseline_time_s.unwrap_or(f64::NAN),
                        s.speedup.unwrap_or(f64::NAN),
                    );
                    println!("{}", s.to_line());
                }
            }
        }
    }
    std::fs::create_dir_all(&out_dir)?;
    std::fs::write(out_dir.join("sweep.csv"), table)?;
    Ok(())
}

fn cmd_ablate(
    config_path: Option<PathBuf>,
    out_dir: PathBuf,
    seed: Option<u64>,
) -> adaptcl::Result<()> {
    let mut base = load_config(&config_path)?;
    if let Some(seed) = seed {
        base.seed = seed;
    }
    if base.workers != 10 {
        return Err(adaptcl::Error::InvalidConfig(
            "the built-in ablation schedule is defined for 10 workers".into(),
        ));
    }
    base.policy = Policy::AdaptCl;
    base.baseline_policy = None;
    base.rate_schedule = Some(
        ABLATION_SCHEDULE
            .iter()
            .map(|rates| rates.to_vec())
            .collect(),
    );
    let methods = [
        PruneMethod::CigBnScalor,
        PruneMethod::Index,
        PruneMethod::NoAdjacent,
        PruneMethod::NoIdentical,
        PruneMethod::NoConstant,
    ];
    let mut table =
        String::from("method,seed,final_acc,best_acc,total_time_s,mean_param_reduction\n");
    for method in methods {
        let mut config = base.clone();
        config.prune_method = method;
        let out = run(&config)?;
        let s = &out.summary;
        let _ = writeln!(
            table,
            "{},{},{},{},{},{}",
            method.as_str(),
            s.seed,
            s.final_acc,
            s.best_acc,
            s.total_time_s,
            s.mean_param_reduction,
        );
        emit_metrics(
            &out.rounds,
            config.workers,
            &out_dir.join(format!("metrics-{}.csv", method.as_str())),
        )?;
        println!("{}", s.to_line());
    }
    std::fs::create_dir_all(&out_dir)?;
    std::fs::write(out_dir.join("ablate.csv"), table)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            seed,
            out_dir,
            policy,
            set,
        } => cmd_run(config, seed, out_dir, policy, set),
        Command::Sweep {
            config,
            out_dir,
            sigma,
            rho_max,
            gamma_min,
            seeds,
        } => cmd_sweep(config, out_dir, sigma, rho_max, gamma_min, seeds),
        Command::AblatePrune {
            config,
            out_dir,
            seed,
        } => cmd_ablate(config, out_dir, seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}
