//! Command-line interface: simulate, train, group, eval.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::bench::eval::{
    cost_sweep, evaluate, final_partitions, group_albums, parse_cost_list, render_table, Report,
};
use crate::bench::io::{
    partitions_for, read_dataset, read_partitions, write_dataset, write_json_pretty, write_partitions,
    write_trace, ModelFile, ModelKind, PartitionRecord,
};
use crate::bench::sim::simulate;
use crate::config::Config;
use crate::domain::Album;
use crate::error::{Error, Result};
use crate::train::{irl_train, q_train};

#[derive(Debug, Parser)]
#[command(name = "ilgroup", version, about = "Face grouping with learned merge policies")]
pub struct Cli {
    /// Worker threads for album-level parallelism (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labeled synthetic dataset.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Learn the reward model, the action-value model, or both.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out_model: PathBuf,
        #[arg(long, value_enum, default_value_t = Stage::Both)]
        stage: Stage,
        /// Reward model to start from (required by `--stage q`).
        #[arg(long)]
        svm_model: Option<PathBuf>,
        #[arg(long)]
        normalize: bool,
    },
    /// Partition every album with a trained model.
    Group {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out_partitions: PathBuf,
        /// Per-step decision log.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        normalize: bool,
    },
    /// Score partitions against the labels in `--data`.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, conflicts_with = "model", required_unless_present = "model")]
        partitions: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        report: PathBuf,
        /// Cost triples `add,remove,merge` separated by `;`; each is trained
        /// on `--train-data` and evaluated on `--data`.
        #[arg(long, requires = "train_data")]
        cost_sweep: Option<String>,
        #[arg(long)]
        train_data: Option<PathBuf>,
        #[arg(long)]
        normalize: bool,
    },
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON configuration; missing fields take defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl Common {
    fn resolve(&self) -> Result<Config> {
        let cfg = match &self.config {
            Some(p) => Config::load(p)?,
            None => Config::default(),
        };
        Ok(match self.seed {
            Some(s) => cfg.with_seed(s),
            None => cfg,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Stage {
    Irl,
    Q,
    Both,
}

/// `<path>.config.json` next to an output file.
fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".config.json");
    PathBuf::from(s)
}

/// `model.json` -> `model.svm.json`.
fn svm_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.svm.json"))
}

fn load_labeled(path: &Path, normalize: bool) -> Result<Vec<Album>> {
    let albums = read_dataset(path, normalize)?;
    if albums.is_empty() {
        return Err(Error::invalid(format!("{} holds no albums", path.display())));
    }
    Ok(albums)
}

#[derive(Serialize)]
struct Provenance<'a> {
    command: &'a str,
    config: &'a Config,
}

fn cmd_simulate(common: &Common, out: &Path) -> Result<()> {
    let cfg = common.resolve()?;
    let albums = simulate(&cfg.sim)?;
    write_dataset(out, &albums)?;
    write_json_pretty(&sidecar(out), &Provenance { command: "simulate", config: &cfg })?;
    eprintln!("wrote {} albums, {} faces", albums.len(), albums.iter().map(Album::len).sum::<usize>());
    Ok(())
}

fn cmd_train(
    common: &Common,
    data: &Path,
    out_model: &Path,
    stage: Stage,
    svm_model: Option<&Path>,
    normalize: bool,
) -> Result<()> {
    let mut cfg = common.resolve()?;
    if stage == Stage::Q && svm_model.is_none() {
        return Err(Error::invalid("stage q requires --svm-model"));
    }
    let albums = load_labeled(data, normalize)?;

    let svm = match svm_model {
        Some(p) => {
            let m = ModelFile::load(p)?;
            if m.kind != ModelKind::Svm {
                return Err(Error::invalid(format!("{} is not a reward (svm) model", p.display())));
            }
            cfg.policy = m.config.policy;
            m.svm.expect("validated svm model")
        }
        None => {
            let out = irl_train(&albums, &cfg.policy, &cfg.irl)?;
            for e in &out.epochs {
                eprintln!(
                    "irl epoch {:>3}  mistakes {:>5}  |L| {:>6}  solved {:>4}/{}  svm acc {:.4}",
                    e.epoch,
                    e.mistakes,
                    e.l_size,
                    e.albums_solved,
                    albums.len(),
                    e.svm_train_accuracy
                );
            }
            if !out.converged {
                eprintln!("warning: reward learning did not converge in {} epochs", cfg.irl.max_epochs);
            }
            out.model
        }
    };
    if stage == Stage::Irl {
        return ModelFile::svm(svm, cfg).save(out_model);
    }
    if stage == Stage::Both {
        ModelFile::svm(svm.clone(), cfg).save(&svm_path(out_model))?;
    }
    let out = q_train(&albums, &svm, &cfg.policy, &cfg.q)?;
    for e in &out.episodes {
        eprintln!(
            "q episode {:>4}  {:<16} eps {:.3}  steps {:>5}  merges {:>4}  reward {:.3}",
            e.episode, e.album_id, e.epsilon, e.steps, e.merges, e.total_reward
        );
    }
    ModelFile::forest(out.model, cfg).save(out_model)
}

fn cmd_group(data: &Path, model: &Path, out: &Path, trace: Option<&Path>, normalize: bool) -> Result<()> {
    let albums = read_dataset(data, normalize)?;
    let model = ModelFile::load(model)?;
    let traces = group_albums(&albums, &model.policy(), &model.config.policy)?;
    if let Some(path) = trace {
        write_trace(path, &traces)?;
    }
    let records: Vec<PartitionRecord> =
        albums.iter().zip(&traces).map(|(a, t)| PartitionRecord::from_partition(a, &t.final_partition)).collect();
    write_partitions(out, &records)?;
    write_json_pretty(&sidecar(out), &Provenance { command: "group", config: &model.config })?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    common: &Common,
    data: &Path,
    partitions: Option<&Path>,
    model: Option<&Path>,
    report_path: &Path,
    sweep: Option<&str>,
    train_data: Option<&Path>,
    normalize: bool,
) -> Result<()> {
    let albums = load_labeled(data, normalize)?;
    let (preds, mut cfg) = match (partitions, model) {
        (Some(p), _) => (partitions_for(&albums, &read_partitions(p)?)?, common.resolve()?),
        (None, Some(m)) => {
            let m = ModelFile::load(m)?;
            let preds = final_partitions(group_albums(&albums, &m.policy(), &m.config.policy)?);
            (preds, m.config)
        }
        (None, None) => return Err(Error::invalid("eval needs --partitions or --model")),
    };
    if model.is_some() && (common.config.is_some() || common.seed.is_some()) {
        cfg = common.resolve()?;
    }
    let mut report: Report = evaluate(&albums, &preds, &cfg.policy.costs)?;
    if let Some(text) = sweep {
        let costs = parse_cost_list(text)?;
        let train_path = train_data.ok_or_else(|| Error::invalid("--cost-sweep requires --train-data"))?;
        let train = load_labeled(train_path, normalize)?;
        report.sweep = Some(cost_sweep(&train, &albums, &cfg, &costs)?);
    }
    report.config = Some(cfg);
    write_json_pretty(report_path, &report)?;
    print!("{}", render_table(&report));
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(Error::invalid("--jobs must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Simulate { common, out } => cmd_simulate(common, out),
        Command::Train { common, data, out_model, stage, svm_model, normalize } => {
            cmd_train(common, data, out_model, *stage, svm_model.as_deref(), *normalize)
        }
        Command::Group { data, model, out_partitions, trace, normalize } => {
            cmd_group(data, model, out_partitions, trace.as_deref(), *normalize)
        }
        Command::Eval { common, data, partitions, model, report, cost_sweep, train_data, normalize } => cmd_eval(
            common,
            data,
            partitions.as_deref(),
            model.as_deref(),
            report,
            cost_sweep.as_deref(),
            train_data.as_deref(),
            *normalize,
        ),
    }
}

/// Entry point for the binary: returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error[{}]: {}", e.category(), e.to_string().replace('\n', " "));
            1
        }
    }
}
