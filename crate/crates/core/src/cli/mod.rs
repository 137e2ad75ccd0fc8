//! `nlre gen|train|selftest|sweep`.
//!
//! Exit codes: 0 ok, 2 bad arguments, 3 I/O, 4 training failure, 5 selftest
//! failure, 6 some sweep cells failed.

mod config;
pub mod selftest;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

pub use config::{DataArgs, DatasetSource, ExperimentConfig, GenSpec, TrainArgs};
use selftest::{run_suites, SelftestHooks, Suite};

use crate::datagen::{
    gen_gaussian_blobs, inject_noise, load_dataset, save_dataset, split_train_test, CleanDataset, NoisyDataset,
};
use crate::emtrain::{train_with_sink, Evaluation, TrainResult};
use crate::error::{Error, Result};
use crate::evalkit::write_records;
use crate::gm::save_checkpoint;
use crate::numkit::Rng;
use crate::select::write_split_csv;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ARGS: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_TRAINING: i32 = 4;
pub const EXIT_SELFTEST: i32 = 5;
pub const EXIT_SWEEP_PARTIAL: i32 = 6;

pub const THREADS_ENV: &str = "NLRE_THREADS";

#[derive(Parser)]
#[command(name = "nlre", version, about = "Noisy-label training with a learned noise rate")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate a synthetic noisy dataset file.
    Gen(GenArgs),
    /// Train on a generated or loaded dataset.
    Train(TrainCmd),
    /// Run the oracle suites.
    Selftest(SelftestArgs),
    /// Train over a grid of noise rates and seeds.
    Sweep(SweepArgs),
}

#[derive(clap::Args)]
pub struct GenArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output file.
    #[arg(long, short, default_value = "dataset.nlds")]
    pub out: PathBuf,
}

#[derive(clap::Args)]
pub struct TrainCmd {
    /// Flat `key = value` config file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub args: TrainArgs,
    /// Output directory.
    #[arg(long, short, default_value = "run")]
    pub out: PathBuf,
    /// Record wall time in summary.json (breaks byte-identical reruns).
    #[arg(long)]
    pub timing: bool,
}

#[derive(clap::Args)]
pub struct SelftestArgs {
    /// Run only these suites (repeatable).
    #[arg(long)]
    pub suite: Vec<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(clap::Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub args: TrainArgs,
    /// Comma-separated noise rates.
    #[arg(long, value_delimiter = ',', default_value = "0.2,0.3,0.4,0.5")]
    pub rates: Vec<f64>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    pub seeds: Vec<u64>,
    #[arg(long, short, default_value = "sweep")]
    pub out: PathBuf,
}

/// Exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidArgument { .. } => EXIT_ARGS,
        Error::Io { .. } | Error::Parse { .. } | Error::UnsupportedVersion { .. } => EXIT_IO,
        Error::Training { .. } | Error::NonFinite(_) | Error::Shape { .. } => EXIT_TRAINING,
    }
}

/// Parse `args` (including the program name) and run; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with_hooks(args, &SelftestHooks::default())
}

pub fn run_with_hooks<I, T>(args: I, hooks: &SelftestHooks) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ARGS } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Gen(a) => cmd_gen(&a),
        Command::Train(a) => cmd_train(&a).map(|_| EXIT_OK),
        Command::Selftest(a) => cmd_selftest(&a, hooks),
        Command::Sweep(a) => cmd_sweep(&a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn data_rng(seed: u64) -> Rng {
    Rng::new(seed).derive("data")
}

fn generate(spec: &GenSpec, seed: u64) -> Result<NoisyDataset> {
    let noise = spec.noise_spec()?;
    let mut rng = data_rng(seed);
    let clean = gen_gaussian_blobs(spec.n, spec.classes, spec.dim, spec.separation, &mut rng)?;
    inject_noise(&clean, &noise, &mut rng)
}

pub fn cmd_gen(a: &GenArgs) -> Result<i32> {
    let spec = config::data_gen_spec(&a.data);
    let ds = generate(&spec, a.seed)?;
    save_dataset(&ds, &a.out)?;
    println!(
        "wrote {} ({} samples, {} noise, nominal {:.3}, realized {:.4})",
        a.out.display(),
        ds.len(),
        ds.noise_kind(),
        ds.nominal_rate(),
        ds.true_rate()
    );
    Ok(EXIT_OK)
}

/// Build the train/test pair an experiment describes.
pub fn load_data(cfg: &ExperimentConfig) -> Result<(NoisyDataset, CleanDataset)> {
    let full = match &cfg.dataset {
        DatasetSource::Generate(spec) => generate(spec, cfg.train.seed)?,
        DatasetSource::File(p) => load_dataset(p)?,
    };
    split_train_test(&full, cfg.test_fraction, &mut Rng::new(cfg.train.seed).derive("sampling"))
}

/// `summary.json`; field order is part of the format.
#[derive(Debug, Serialize)]
pub struct Summary<'a> {
    pub final_eps_hat: f64,
    pub realized_rate: f64,
    pub final_test_acc: f64,
    pub best_test_acc: f64,
    pub config_echo: &'a ExperimentConfig,
    pub seed: u64,
    pub wall_time_s: Option<f64>,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// A finished experiment.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub result: TrainResult,
    pub realized_rate: f64,
}

/// Run one experiment and write its artifacts into `cfg.out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let (train_ds, test_ds) = load_data(cfg)?;
    let mut tc = cfg.train.clone();
    if cfg.full_batch {
        tc.batch_size = train_ds.len();
    }
    let out = &cfg.out_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let ckpt_dir = out.join("checkpoints");
    if cfg.checkpoint_every > 0 {
        std::fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
    }
    let eval = Evaluation {
        test: &test_ds,
        flip_mask: Some(train_ds.flip_mask()),
    };
    let every = cfg.checkpoint_every;
    let result = train_with_sink(&tc, &train_ds, eval, &mut |rec, model| {
        if every > 0 && (rec.epoch + 1) % every == 0 {
            save_checkpoint(model, ckpt_dir.join(format!("epoch_{:04}.nlgm", rec.epoch + 1)))?;
        }
        Ok(())
    })?;

    write_records(&result.records, out.join("records.csv"))?;
    save_checkpoint(&result.model, out.join("model.nlgm"))?;
    if cfg.dump_split {
        write_split_csv(out.join("split.csv"), &result.final_scores, &result.final_split, Some(train_ds.flip_mask()))?;
    }
    if !result.trace.is_empty() {
        let mut s = String::from("epoch,batch,block,before,after,backtracks\n");
        for t in &result.trace {
            s.push_str(&format!(
                "{},{},{:?},{:.16e},{:.16e},{}\n",
                t.epoch, t.batch, t.kind, t.before, t.after, t.backtracks
            ));
        }
        write_file(&out.join("trace.csv"), s.as_bytes())?;
    }
    let last = result.records.last().expect("at least one epoch");
    let summary = Summary {
        final_eps_hat: last.eps_hat,
        realized_rate: train_ds.true_rate(),
        final_test_acc: last.test_accuracy,
        best_test_acc: result.records.iter().map(|r| r.test_accuracy).fold(f64::MIN, f64::max),
        config_echo: cfg,
        seed: cfg.train.seed,
        wall_time_s: cfg.timing.then(|| result.wall_time.as_secs_f64()),
    };
    let mut json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    json.push('\n');
    write_file(&out.join("summary.json"), json.as_bytes())?;
    Ok(RunOutput {
        result,
        realized_rate: train_ds.true_rate(),
    })
}

fn merged_args(config: &Option<PathBuf>, flags: &TrainArgs) -> Result<TrainArgs> {
    Ok(match config {
        Some(p) => flags.clone().or(&TrainArgs::from_file(p)?),
        None => flags.clone(),
    })
}

pub fn cmd_train(a: &TrainCmd) -> Result<RunOutput> {
    let cfg = merged_args(&a.config, &a.args)?.resolve(a.out.clone(), a.timing)?;
    let out = run_experiment(&cfg)?;
    let result = &out.result;
    let last = result.records.last().expect("at least one epoch");
    println!(
        "epochs {}  eps_hat {:.4}  test_acc {:.4}  sel_f1 {:.4}  -> {}",
        result.records.len(),
        last.eps_hat,
        last.test_accuracy,
        last.f1,
        cfg.out_dir.display()
    );
    Ok(out)
}

pub fn cmd_selftest(a: &SelftestArgs, hooks: &SelftestHooks) -> Result<i32> {
    let suites: Vec<Suite> = if a.suite.is_empty() {
        Suite::ALL.to_vec()
    } else {
        a.suite.iter().map(|s| s.parse()).collect::<Result<_>>()?
    };
    let reports = run_suites(&suites, hooks, a.seed);
    let mut first_failure = None;
    for r in &reports {
        println!(
            "{:<10} {}  {:.2}s  {}",
            r.suite.name(),
            if r.passed { "PASS" } else { "FAIL" },
            r.seconds,
            r.detail
        );
        if !r.passed && first_failure.is_none() {
            first_failure = Some(r.suite.name());
        }
    }
    match first_failure {
        None => Ok(EXIT_OK),
        Some(name) => {
            eprintln!("selftest failed: {name}");
            Ok(EXIT_SELFTEST)
        }
    }
}

/// Worker count: `NLRE_THREADS` if set to a positive integer, else the CPU count.
pub fn thread_cap() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::invalid("NLRE_THREADS", format!("expected a positive integer, got `{v}`"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub rate: f64,
    pub seed: u64,
    pub dir: PathBuf,
    pub result: std::result::Result<(f64, f64, f64), String>,
}

pub const SWEEP_HEADER: &str =
    "rate,runs,failed,eps_hat_mean,eps_hat_std,realized_mean,abs_err_mean,test_acc_mean,test_acc_std";

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
    (m, var.sqrt())
}

/// Aggregate rows, one per rate in the given order.
pub fn format_sweep(rates: &[f64], cells: &[CellOutcome]) -> String {
    let mut s = format!("{SWEEP_HEADER}\n");
    for &rate in rates {
        let mine: Vec<&CellOutcome> = cells.iter().filter(|c| c.rate == rate).collect();
        let ok: Vec<(f64, f64, f64)> = mine.iter().filter_map(|c| c.result.clone().ok()).collect();
        let eps: Vec<f64> = ok.iter().map(|r| r.0).collect();
        let real: Vec<f64> = ok.iter().map(|r| r.1).collect();
        let acc: Vec<f64> = ok.iter().map(|r| r.2).collect();
        let err: Vec<f64> = ok.iter().map(|r| (r.0 - r.1).abs()).collect();
        let (em, es) = mean_std(&eps);
        let (am, as_) = mean_std(&acc);
        s.push_str(&format!(
            "{rate},{},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
            ok.len(),
            mine.len() - ok.len(),
            em,
            es,
            mean_std(&real).0,
            mean_std(&err).0,
            am,
            as_
        ));
    }
    s
}

pub fn cmd_sweep(a: &SweepArgs) -> Result<i32> {
    if a.rates.is_empty() || a.seeds.is_empty() {
        return Err(Error::invalid("rates", "need at least one rate and one seed"));
    }
    let base = merged_args(&a.config, &a.args)?;
    let mut cells = Vec::new();
    for &rate in &a.rates {
        for &seed in &a.seeds {
            let mut args = base.clone();
            args.data.rate = Some(rate);
            args.seed = Some(seed);
            let dir = a.out.join(format!("rate_{rate}_seed_{seed}"));
            cells.push((rate, seed, dir.clone(), args.resolve(dir, false)));
        }
    }
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_cap()?)
        .build()
        .map_err(|e| Error::invalid("NLRE_THREADS", e.to_string()))?;
    let outcomes: Vec<CellOutcome> = pool.install(|| {
        use rayon::prelude::*;
        cells
            .par_iter()
            .map(|(rate, seed, dir, cfg)| {
                let result = match cfg {
                    Ok(cfg) => run_experiment(cfg)
                        .map(|o| {
                            let last = o.result.records.last().expect("at least one epoch");
                            (last.eps_hat, o.realized_rate, last.test_accuracy)
                        })
                        .map_err(|e| e.to_string()),
                    Err(e) => Err(e.to_string()),
                };
                if let Err(msg) = &result {
                    let _ = std::fs::create_dir_all(dir);
                    let _ = std::fs::write(dir.join("error.txt"), format!("{msg}\n"));
                }
                CellOutcome {
                    rate: *rate,
                    seed: *seed,
                    dir: dir.clone(),
                    result,
                }
            })
            .collect()
    });
    let table = format_sweep(&a.rates, &outcomes);
    let path = a.out.join("sweep.csv");
    write_file(&path, table.as_bytes())?;
    let failed: Vec<&CellOutcome> = outcomes.iter().filter(|c| c.result.is_err()).collect();
    let mut stdout = std::io::stdout().lock();
    let _ = stdout.write_all(table.as_bytes());
    for c in &failed {
        eprintln!("cell rate={} seed={} failed: {}", c.rate, c.seed, c.result.as_ref().unwrap_err());
    }
    Ok(if failed.is_empty() { EXIT_OK } else { EXIT_SWEEP_PARTIAL })
}
