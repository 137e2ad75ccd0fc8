//! Experiment configuration: a flat `key = value` file plus flag overrides.
//!
//! File keys are the long flag names (`lr-theta = 0.02`, underscores also
//! accepted). Flags given on the command line win over the file.

use std::path::{Path, PathBuf};

use clap::{Args, Parser};
use serde::Serialize;

use crate::datagen::{NoiseKind, NoiseSpec};
use crate::emtrain::{SelectionScope, TrainConfig};
use crate::error::{Error, Result};
use crate::gm::HeadSupport;

/// Synthetic dataset recipe.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenSpec {
    pub n: usize,
    pub classes: usize,
    pub dim: usize,
    pub separation: f64,
    pub noise: String,
    pub rate: f64,
    pub idn_std: f64,
}

impl Default for GenSpec {
    fn default() -> Self {
        Self {
            n: 5000,
            classes: 4,
            dim: 2,
            separation: 3.0,
            noise: NoiseKind::Idn.name().to_string(),
            rate: 0.4,
            idn_std: 0.1,
        }
    }
}

impl GenSpec {
    pub fn noise_spec(&self) -> Result<NoiseSpec> {
        let kind: NoiseKind = self.noise.parse()?;
        let spec = NoiseSpec {
            kind,
            rate: self.rate,
            idn_std: self.idn_std,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    Generate(GenSpec),
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub test_fraction: f64,
    pub train: TrainConfig,
    /// One batch holding the whole training set, with checked ascent steps.
    pub full_batch: bool,
    pub checkpoint_every: usize,
    pub dump_split: bool,
    #[serde(skip)]
    pub out_dir: PathBuf,
    #[serde(skip)]
    pub timing: bool,
}

/// Dataset recipe flags shared by `gen`, `train` and `sweep`.
#[derive(Debug, Clone, Default, Args)]
pub struct DataArgs {
    /// Noise model: none, symmetric, pairflip or idn.
    #[arg(long)]
    pub kind: Option<String>,
    /// Nominal noise rate.
    #[arg(long)]
    pub rate: Option<f64>,
    /// Number of samples to generate.
    #[arg(long)]
    pub n: Option<usize>,
    /// Number of classes.
    #[arg(long)]
    pub c: Option<usize>,
    /// Feature dimension.
    #[arg(long)]
    pub d: Option<usize>,
    /// Distance of the class means from the origin.
    #[arg(long)]
    pub separation: Option<f64>,
    /// Spread of per-sample flip rates for IDN.
    #[arg(long)]
    pub idn_std: Option<f64>,
}

/// Training and experiment flags shared by `train` and `sweep`.
#[derive(Debug, Clone, Default, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Load the dataset from a file instead of generating it.
    #[arg(long)]
    pub data_file: Option<PathBuf>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub warmup: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub lr_theta: Option<f64>,
    #[arg(long)]
    pub lr_eps: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    /// Weight of the clean-sample constraint.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub e_steps: Option<usize>,
    #[arg(long)]
    pub m_steps: Option<usize>,
    /// Posterior-only passes before the first epoch.
    #[arg(long)]
    pub posterior_fit: Option<usize>,
    /// small-loss or knn.
    #[arg(long)]
    pub criterion: Option<String>,
    #[arg(long)]
    pub knn_k: Option<usize>,
    /// per-epoch or per-batch.
    #[arg(long)]
    pub scope: Option<String>,
    /// exclude-clean or full.
    #[arg(long)]
    pub head_support: Option<String>,
    /// Use a constant rate for the curriculum.
    #[arg(long)]
    pub fixed_eps: Option<f64>,
    /// Ablation: no constraint and no selection (lambda = 0, R = 1).
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub no_epsilon: Option<bool>,
    /// Keep every sample as clean (R = 1) but keep the constraint.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub no_selection: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub full_batch: Option<bool>,
    /// Write a checkpoint every K epochs (0 = final only).
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Write the final split to split.csv.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub dump_split: Option<bool>,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Parser used to read config files through the same flag definitions.
#[derive(Parser)]
#[command(no_binary_name = true)]
struct FileArgs {
    #[command(flatten)]
    args: TrainArgs,
}

macro_rules! prefer {
    ($a:expr, $b:expr; $($f:ident),*) => {
        $( if $a.$f.is_none() { $a.$f = $b.$f.clone(); } )*
    };
}

impl TrainArgs {
    /// Fill unset fields from `other`.
    pub fn or(mut self, other: &TrainArgs) -> Self {
        prefer!(self.data, other.data; kind, rate, n, c, d, separation, idn_std);
        prefer!(self, other; data_file, test_fraction, epochs, warmup, batch_size, hidden, lr_theta, lr_eps,
            momentum, lambda, e_steps, m_steps, posterior_fit, criterion, knn_k, scope, head_support, fixed_eps, no_epsilon,
            no_selection, full_batch, checkpoint_every, dump_split, seed);
        self
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_kv(&text)
    }

    /// Parse `key = value` lines; `#` starts a comment.
    pub fn parse_kv(text: &str) -> Result<Self> {
        let mut argv = Vec::new();
        for (no, line) in text.lines().enumerate() {
            let body = line.split('#').next().unwrap_or("").trim();
            if !body.is_empty() {
                let (k, v) = body.split_once('=').ok_or_else(|| {
                    Error::invalid("config", format!("line {}: expected `key = value`, got `{body}`", no + 1))
                })?;
                argv.push(format!("--{}", k.trim().replace('_', "-")));
                argv.push(v.trim().to_string());
            }
        }
        FileArgs::try_parse_from(argv)
            .map(|f| f.args)
            .map_err(|e| Error::invalid("config", e.to_string().lines().next().unwrap_or("").to_string()))
    }

    pub fn gen_spec(&self) -> GenSpec {
        data_gen_spec(&self.data)
    }

    /// Resolve into a full experiment configuration.
    pub fn resolve(&self, out_dir: PathBuf, timing: bool) -> Result<ExperimentConfig> {
        let d = TrainConfig::default();
        let no_eps = self.no_epsilon.unwrap_or(false);
        let mut train = TrainConfig {
            epochs: self.epochs.unwrap_or(d.epochs),
            warmup_epochs: self.warmup.unwrap_or(d.warmup_epochs),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            hidden: self.hidden.unwrap_or(d.hidden),
            lr_theta: self.lr_theta.unwrap_or(d.lr_theta),
            lr_eps: self.lr_eps.unwrap_or(d.lr_eps),
            momentum: self.momentum.unwrap_or(d.momentum),
            lambda: self.lambda.unwrap_or(d.lambda),
            e_steps_per_batch: self.e_steps.unwrap_or(d.e_steps_per_batch),
            m_steps_per_batch: self.m_steps.unwrap_or(d.m_steps_per_batch),
            posterior_fit_epochs: self.posterior_fit.unwrap_or(d.posterior_fit_epochs),
            criterion: match &self.criterion {
                Some(c) => c.parse()?,
                None => d.criterion,
            },
            knn_k: self.knn_k.unwrap_or(d.knn_k),
            scope: match &self.scope {
                Some(s) => s.parse::<SelectionScope>()?,
                None => d.scope,
            },
            head_support: match &self.head_support {
                Some(h) => h.parse::<HeadSupport>()?,
                None => d.head_support,
            },
            fixed_eps: self.fixed_eps,
            selection: !self.no_selection.unwrap_or(false),
            guarded_ascent: false,
            trace_objective: false,
            seed: self.seed.unwrap_or(0),
        };
        if no_eps {
            if self.fixed_eps.is_some() {
                return Err(Error::invalid("no-epsilon", "cannot be combined with --fixed-eps"));
            }
            train.lambda = 0.0;
            train.selection = false;
        }
        let full_batch = self.full_batch.unwrap_or(false);
        if full_batch {
            train.guarded_ascent = true;
            train.trace_objective = true;
        }
        train.validate()?;
        let test_fraction = self.test_fraction.unwrap_or(0.2);
        if !(test_fraction > 0.0 && test_fraction < 1.0) {
            return Err(Error::invalid("test-fraction", "must be in (0, 1)"));
        }
        let dataset = match &self.data_file {
            Some(p) => DatasetSource::File(p.clone()),
            None => {
                let g = self.gen_spec();
                g.noise_spec()?;
                DatasetSource::Generate(g)
            }
        };
        Ok(ExperimentConfig {
            dataset,
            test_fraction,
            train,
            full_batch,
            checkpoint_every: self.checkpoint_every.unwrap_or(0),
            dump_split: self.dump_split.unwrap_or(false),
            out_dir,
            timing,
        })
    }
}

pub(crate) fn data_gen_spec(a: &DataArgs) -> GenSpec {
    let d = GenSpec::default();
    GenSpec {
        n: a.n.unwrap_or(d.n),
        classes: a.c.unwrap_or(d.classes),
        dim: a.d.unwrap_or(d.dim),
        separation: a.separation.unwrap_or(d.separation),
        noise: a.kind.clone().unwrap_or(d.noise),
        rate: a.rate.unwrap_or(d.rate),
        idn_std: a.idn_std.unwrap_or(d.idn_std),
    }
}
