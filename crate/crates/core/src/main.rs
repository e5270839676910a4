use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;

use sparse_accel::generate::gen_dictionary;
use sparse_accel::harness::{
    diagnose_factorization, emit_plots, quantile, run_experiment, ExperimentConfig, Preset, ResultTable, TestSet,
};
use sparse_accel::io::{save_dictionary, write_atomic};
use sparse_accel::nets::{save_checkpoint, NetKind};
use sparse_accel::solvers::{fmt_f64, run_batch, SolverKind};
use sparse_accel::training::{held_out_batch, train, TrainConfig};
use sparse_accel::{Error, Result};

#[derive(Parser)]
#[command(
    name = "sparse-accel",
    version,
    about = "Classical and unrolled sparse-coding solvers"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration file (TOML).
    #[arg(long, global = true, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in configuration: gaussian-desk, gaussian-paper or adversarial-desk.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Output directory; overrides the configured one.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Run with this single seed instead of the configured list.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the dictionary and the test signals of every seed.
    Generate,
    /// Solve reference problems on the test set and report ISTA / FISTA gaps.
    Solve,
    /// Train one network and write its trace and checkpoint.
    Train {
        #[arg(long)]
        model: String,
        #[arg(long)]
        depth: usize,
        /// Override the number of training steps.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Run the full experiment and write results.csv, traces, checkpoints and plots.
    Experiment,
    /// Factorization diagnostics of a trained FacNet checkpoint.
    Diagnose {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Render charts from an existing results.csv.
    Plot {
        #[arg(long)]
        results: PathBuf,
    },
}

fn resolve(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match (&common.config, &common.preset) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(name)) => Preset::parse(name)
            .ok_or_else(|| {
                let names: Vec<_> = Preset::ALL.iter().map(|p| p.as_str()).collect();
                Error::Config(format!("unknown preset `{name}`; expected one of {}", names.join(", ")))
            })?
            .config(),
        (None, None) => Preset::GaussianDesk.config(),
    };
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = common.seed {
        cfg.seeds = vec![seed];
    }
    cfg.validate()?;
    Ok(cfg)
}

fn generate(cfg: &ExperimentConfig) -> Result<()> {
    for &seed in &cfg.seeds {
        let gen = cfg.problem_for_seed(seed);
        let dict = gen_dictionary(&gen)?;
        let dict_path = cfg.output_dir.join(format!("dictionary_seed{seed}.txt"));
        save_dictionary(&dict_path, &dict)?;
        let gram = std::sync::Arc::new(sparse_accel::problem::Gram::new(dict.d)?);
        let batch = held_out_batch(&gram, &gen, cfg.test_size, seed)?;
        let mut csv = (0..gen.n).map(|i| format!("x{i}")).collect::<Vec<_>>().join(",");
        csv.push('\n');
        for col in batch.x().column_iter() {
            let row: Vec<String> = col.iter().map(|v| fmt_f64(*v)).collect();
            let _ = writeln!(csv, "{}", row.join(","));
        }
        let signals_path = cfg.output_dir.join(format!("signals_seed{seed}.csv"));
        write_atomic(&signals_path, csv.as_bytes())?;
        println!("{}\n{}", dict_path.display(), signals_path.display());
    }
    Ok(())
}

fn solve(cfg: &ExperimentConfig) -> Result<()> {
    let mut refs = String::from("seed,index,f_star,gap,iterations\n");
    let mut gaps = String::from("seed,solver,k,f_gap_median,f_gap_q25,f_gap_q75\n");
    for &seed in &cfg.seeds {
        let test = TestSet::build(cfg, seed)?;
        for (i, r) in test.references.iter().enumerate() {
            let _ = writeln!(
                refs,
                "{seed},{i},{},{},{}",
                fmt_f64(r.f_star),
                fmt_f64(r.gap),
                r.iterations
            );
        }
        let zero = DMatrix::zeros(test.gram.m(), test.batch.len());
        for (name, kind, k_max) in [
            ("ista", SolverKind::Ista, cfg.baselines.ista),
            ("fista", SolverKind::Fista, cfg.baselines.fista),
        ] {
            let iterates = run_batch(&test.gram, cfg.problem.lambda, kind, test.batch.dtx(), &zero, k_max);
            for (k, z) in iterates.iter().enumerate() {
                let g = test.f_gaps(z)?;
                let _ = writeln!(
                    gaps,
                    "{seed},{name},{k},{},{},{}",
                    fmt_f64(quantile(&g, 0.5)),
                    fmt_f64(quantile(&g, 0.25)),
                    fmt_f64(quantile(&g, 0.75))
                );
            }
        }
    }
    write_atomic(&cfg.output_dir.join("references.csv"), refs.as_bytes())?;
    write_atomic(&cfg.output_dir.join("solvers.csv"), gaps.as_bytes())?;
    print!("{gaps}");
    Ok(())
}

fn train_one(cfg: &ExperimentConfig, model: &str, depth: usize, steps: Option<usize>) -> Result<()> {
    let kind = NetKind::parse(model).ok_or_else(|| Error::Config(format!("unknown model `{model}`")))?;
    let base = if kind == NetKind::Linear {
        cfg.baselines.linear.clone()
    } else {
        cfg.models
            .iter()
            .find(|m| m.kind == kind)
            .map(|m| m.train.clone())
            .unwrap_or_else(TrainConfig::default)
    };
    for &seed in &cfg.seeds {
        let mut tc = cfg.train_for_seed(&base, seed);
        if let Some(s) = steps {
            tc.steps = s;
        }
        let gen = cfg.problem_for_seed(seed);
        let gram = std::sync::Arc::new(sparse_accel::problem::Gram::new(gen_dictionary(&gen)?.d)?);
        let outcome = train(kind, depth, &gram, &gen, &tc)?;
        let name = format!("{kind}_k{depth}_seed{seed}");
        write_atomic(
            &cfg.output_dir.join(format!("{name}.csv")),
            outcome.trace.to_csv().as_bytes(),
        )?;
        save_checkpoint(&cfg.output_dir.join(format!("{name}.ckpt")), &outcome.params, gen.n)?;
        println!(
            "{name}: test loss {:.6e} -> {:.6e} (best step {}){}",
            outcome.init_test_loss,
            outcome.test_loss,
            outcome.best_step,
            outcome.diverged.map(|d| format!(", diverged: {d}")).unwrap_or_default()
        );
    }
    Ok(())
}

fn experiment(cfg: &ExperimentConfig) -> Result<()> {
    let report = run_experiment(cfg)?;
    for s in report.training.iter().filter(|s| s.diverged.is_some()) {
        eprintln!("warning: {} K={} seed {} diverged", s.model, s.depth, s.seed);
    }
    println!("{}", cfg.output_dir.join("results.csv").display());
    Ok(())
}

fn plot(results: &Path, out: &Path) -> Result<()> {
    if !results.exists() {
        return Err(Error::Missing(results.to_path_buf()));
    }
    let text = std::fs::read_to_string(results)?;
    let table = ResultTable::from_csv(&text).map_err(|msg| Error::Parse {
        path: results.to_path_buf(),
        msg,
    })?;
    for (name, svg) in emit_plots(&table) {
        let path = out.join(name);
        write_atomic(&path, svg.as_bytes())?;
        println!("{}", path.display());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = resolve(&cli.common)?;
    match cli.command {
        Command::Generate => generate(&cfg),
        Command::Solve => solve(&cfg),
        Command::Train { model, depth, steps } => train_one(&cfg, &model, depth, steps),
        Command::Experiment => experiment(&cfg),
        Command::Diagnose { checkpoint } => {
            let out = cfg.output_dir.join("diagnose.csv");
            let report = diagnose_factorization(&cfg, &checkpoint, cfg.seeds[0], &out)?;
            print!("{}", report.to_csv());
            Ok(())
        }
        Command::Plot { results } => {
            let out = cli.common.out.clone().unwrap_or_else(|| {
                results
                    .parent()
                    .map(Path::to_path_buf)
                    .unwrap_or_else(|| PathBuf::from("."))
            });
            plot(&results, &out)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
