use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use normloss::bench::bench_overhead;
use normloss::checks::{dynamics, grad_check, write_dynamics};
use normloss::config::ExperimentConfig;
use normloss::metrics::emit_metrics;
use normloss::sweep::{sweep_batch_size, sweep_lambda, SweepTable, SWEEP_KINDS};
use normloss::train::train;
use normloss::{HarnessError, Result};
use normloss_core::nn::ModelSpec;

#[derive(Parser)]
#[command(name = "normloss", version, about = "Norm-loss regularization experiments")]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for metrics; overrides `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads. 1 guarantees byte-identical reruns.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write metrics.
    Train,
    /// Finite-difference check of the regularizer and network gradients.
    GradCheck {
        #[arg(long, default_value_t = 200)]
        matrices: usize,
    },
    /// Train once per regularization factor for weight decay and norm loss.
    SweepLambda {
        #[arg(long, value_delimiter = ',', default_values_t = [1e-4, 1e-3, 1e-2, 1e-1])]
        values: Vec<f64>,
    },
    /// Train once per batch size for weight decay and norm loss.
    SweepBatch {
        #[arg(long, value_delimiter = ',', default_values_t = [8, 32, 128])]
        sizes: Vec<usize>,
    },
    /// Time training steps with no regularizer, weight decay and norm loss.
    Bench {
        #[arg(long, default_value_t = 100)]
        steps: usize,
        #[arg(long, default_value_t = 10)]
        warmup: usize,
        #[arg(long, default_value_t = 64)]
        batch: usize,
        /// Input side length of the residual network used without --config.
        #[arg(long, default_value_t = 32)]
        size: usize,
        #[arg(long, default_value_t = 1e-2)]
        lambda: f64,
    },
    /// Iterate the row-norm recurrences of norm loss and weight decay.
    Dynamics {
        #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.5, 2.0, 5.0, 10.0])]
        norms: Vec<f64>,
        #[arg(long, default_value_t = 0.1)]
        eta: f64,
        #[arg(long, default_value_t = 0.01)]
        lambda: f64,
        #[arg(long, default_value_t = 20_000)]
        steps: usize,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
    },
}

impl Cli {
    fn load_config(&self) -> Result<ExperimentConfig> {
        let path = self.config.as_ref().ok_or_else(|| HarnessError::Config("this command needs --config".into()))?;
        let mut cfg = ExperimentConfig::load(path)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.output.dir = Some(out.clone());
        }
        Ok(cfg)
    }

    fn seed(&self) -> Result<u64> {
        match (&self.seed, &self.config) {
            (Some(s), _) => Ok(*s),
            (None, Some(_)) => Ok(self.load_config()?.seed),
            (None, None) => Ok(0),
        }
    }
}

fn print_sweep(table: &SweepTable) {
    println!("{:<14} {:>12} {:>12} {:>16}", "kind", table.parameter, "test_error", "mean|norm-1|");
    for r in &table.rows {
        let err = r.final_test_error.map_or("diverged".into(), |e| format!("{e:.2}"));
        let dev = r.mean_abs_norm_dev.map_or("-".into(), |d| format!("{d:.4e}"));
        println!("{:<14} {:>12} {:>12} {:>16}", r.kind.name(), format!("{}", r.value), err, dev);
    }
    for kind in SWEEP_KINDS {
        match table.spread(kind) {
            Some(s) => println!("spread {}: {s:.2} points", kind.name()),
            None => println!("spread {}: n/a", kind.name()),
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    let threads = cli.threads.max(1);
    match &cli.command {
        Command::Train => {
            let cfg = cli.load_config()?;
            let result = train(&cfg, threads);
            let report = match &result {
                Ok(r) => r,
                Err(HarnessError::Diverged { report, .. }) => report,
                Err(_) => return result.map(|_| ()),
            };
            if let Some(dir) = &cfg.output.dir {
                emit_metrics(report, dir)?;
            }
            for e in &report.epochs {
                println!(
                    "epoch {:>4}  lr {:.4e}  xent {:.4}  test error {:6.2}%  mean|norm-1| {:.4e}  residual {:.3e}",
                    e.epoch,
                    e.lr,
                    e.train_xent,
                    e.test_error,
                    e.mean_abs_norm_dev,
                    e.max_oblique_residual()
                );
            }
            result.map(|_| ())
        }
        Command::GradCheck { matrices } => {
            let report = grad_check(cli.seed()?, *matrices)?;
            println!(
                "norm loss    max rel error {:.3e} over {} matrices",
                report.regularizers.norm_loss_max_rel, matrices
            );
            println!("weight decay max rel error {:.3e}", report.regularizers.weight_decay_max_rel);
            println!("network ({} params), total loss with norm loss 0.01:", report.params);
            for (layer, kind, err) in report.per_layer() {
                println!("  layer {layer:>3} {kind:<18} {err:.3e}");
            }
            println!("network max rel error {:.3e}", report.model.max_rel());
            println!("zero factor leaves gradients unchanged: {}", report.zero_lambda_exact);
            if let Some(dir) = &cli.out {
                report.write_csv(dir)?;
            }
            Ok(())
        }
        Command::SweepLambda { values } => {
            let cfg = cli.load_config()?;
            let table = sweep_lambda(&cfg, values, threads, cfg.output.dir.as_deref())?;
            print_sweep(&table);
            Ok(())
        }
        Command::SweepBatch { sizes } => {
            let cfg = cli.load_config()?;
            let table = sweep_batch_size(&cfg, sizes, threads, cfg.output.dir.as_deref())?;
            print_sweep(&table);
            Ok(())
        }
        Command::Bench { steps, warmup, batch, size, lambda } => {
            let (spec, seed) = match &cli.config {
                Some(_) => {
                    let cfg = cli.load_config()?;
                    (cfg.model_spec()?, cfg.seed)
                }
                None => (ModelSpec::mini_resnet([3, *size, *size], 4, 10), cli.seed.unwrap_or(0)),
            };
            let r = bench_overhead(&spec, *batch, *steps, *warmup, *lambda, seed)?;
            println!(
                "median step: none {:.3} ms, weight decay {:.3} ms, norm loss {:.3} ms",
                1e3 * r.median_none,
                1e3 * r.median_weight_decay,
                1e3 * r.median_norm_loss
            );
            println!("ratio norm loss / weight decay {:.4}", r.ratio_nl_wd());
            println!("ratio weight decay / none      {:.4}", r.ratio_wd_none());
            println!(
                "analytic norm-loss overhead / conv cost: max layer {:.3e}, whole network {:.3e}",
                r.max_flop_ratio(),
                r.total_flop_ratio()
            );
            Ok(())
        }
        Command::Dynamics { norms, eta, lambda, steps, tol } => {
            let runs = dynamics(norms, *eta, *lambda, *steps, *tol)?;
            for r in &runs {
                println!(
                    "norm0 {:>6}: unit after {:>6} steps, monotone {}, weight decay {:.3e} (strictly decreasing {})",
                    r.norm0,
                    r.steps_to_unit.map_or("never".into(), |s| s.to_string()),
                    r.monotone,
                    r.weight_decay.last().unwrap(),
                    r.weight_decay_strictly_decreasing
                );
            }
            if let Some(dir) = &cli.out {
                write_dynamics(&runs, dir)?;
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::FAILURE
        }
    }
}
