//! Command-line driver: `train`, `ablation`, `drift` and `eval`.
//!
//! Settings come from an optional `key=value` file overlaid with flags. Every
//! run directory gets a `manifest.txt` holding the fully resolved settings,
//! which can be passed back through `--config` to reproduce the run.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Display;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use crate::augment::TransformSpec;
use crate::data::{load_csv, load_labels, make_blobs, make_rings, LabeledDataset, OverlapScenario};
use crate::error::Error;
use crate::metrics::evaluate;
use crate::model::Architecture;
use crate::numerics::RngState;
use crate::par::Execution;
use crate::prototypes::drift_experiment_with;
use crate::trainer::{run_ablation_suite, train, write_ablation_table, write_epoch_log, Ablation, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

pub const MANIFEST_NAME: &str = "manifest.txt";
/// Environment variable naming the default root for run directories.
pub const OUT_DIR_ENV: &str = "CPCC_OUT_DIR";
const DATA_STREAM: u64 = 0x6461_7461;
const DRIFT_STREAM: u64 = 0x6472_6966;

#[derive(Debug, Parser)]
#[command(name = "cpcc", version, about = "Prototype contrastive clustering for vector data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train on a dataset and cluster it.
    Train(TrainArgs),
    /// Train every ablation variant with a shared seed.
    Ablation(TrainArgs),
    /// Compare hard and soft prototype drift on two overlapping clusters.
    Drift(DriftArgs),
    /// Score a predicted label file against a ground-truth label file.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// key=value settings file; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory [default: $CPCC_OUT_DIR/<command>-seed<seed>, or runs/...].
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Extra setting as KEY=VALUE; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// blobs, rings or csv:PATH
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    pretrain_epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    ablation: Option<String>,
}

#[derive(Debug, Args)]
struct DriftArgs {
    #[command(flatten)]
    common: Common,
    /// Mass of each cluster beyond the bisector.
    #[arg(long)]
    overlap: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    /// Population size the batches are drawn from.
    #[arg(long)]
    population: Option<usize>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Predicted labels, one integer per line.
    pred: PathBuf,
    /// Ground-truth labels, same format.
    truth: PathBuf,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::ConfigInvalid(msg) => CliError::Usage(msg),
            other => CliError::Runtime(other),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(Error::Io(e))
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code. Results go to `stdout`, diagnostics to `stderr`.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let rendered = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(stderr, "{rendered}");
                EXIT_USAGE
            } else {
                let _ = write!(stdout, "{rendered}");
                EXIT_OK
            };
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(a, false, stdout, stderr),
        Command::Ablation(a) => cmd_train(a, true, stdout, stderr),
        Command::Drift(a) => cmd_drift(a, stdout, stderr),
        Command::Eval(a) => cmd_eval(a, stdout),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(CliError::Usage(msg)) => {
            let _ = writeln!(stderr, "error: {msg}\n\nRun with --help for usage.");
            EXIT_USAGE
        }
        Err(CliError::Runtime(e)) => {
            let _ = writeln!(stderr, "error: {e}");
            EXIT_RUNTIME
        }
    }
}

/// Raw settings plus a record of every value actually used.
#[derive(Debug, Default)]
struct Settings {
    raw: BTreeMap<String, String>,
    resolved: BTreeMap<String, String>,
}

impl Settings {
    fn load(path: Option<&Path>) -> CliResult<Self> {
        let mut s = Settings::default();
        let Some(path) = path else {
            return Ok(s);
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::Usage(format!("{}:{}: expected key=value", path.display(), i + 1))
            })?;
            s.raw.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(s)
    }

    fn set(&mut self, key: &str, value: Option<impl Display>) {
        if let Some(v) = value {
            self.raw.insert(key.to_string(), v.to_string());
        }
    }

    fn apply_overrides(&mut self, pairs: &[String]) -> CliResult<()> {
        for p in pairs {
            let (k, v) = p
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got {p:?}")))?;
            self.raw.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(())
    }

    fn get<T: FromStr + Display>(&mut self, key: &str, default: T) -> CliResult<T>
    where
        T::Err: Display,
    {
        let value = match self.raw.get(key) {
            Some(v) => v
                .parse()
                .map_err(|e| CliError::Usage(format!("invalid value {v:?} for {key}: {e}")))?,
            None => default,
        };
        self.resolved.insert(key.to_string(), value.to_string());
        Ok(value)
    }

    fn require<T: FromStr + Display>(&mut self, key: &str) -> CliResult<T>
    where
        T::Err: Display,
    {
        let v = self
            .raw
            .get(key)
            .ok_or_else(|| CliError::Usage(format!("missing required --{}", key.replace('_', "-"))))?
            .clone();
        let value: T = v
            .parse()
            .map_err(|e| CliError::Usage(format!("invalid value {v:?} for {key}: {e}")))?;
        self.resolved.insert(key.to_string(), value.to_string());
        Ok(value)
    }

    fn get_list(&mut self, key: &str, default: &[usize]) -> CliResult<Vec<usize>> {
        let default = WidthList(default.to_vec());
        Ok(self.get(key, default)?.0)
    }

    /// Fails on keys that were never read; `run.*` metadata is ignored.
    fn finish(&self) -> CliResult<()> {
        let unknown: Vec<&str> = self
            .raw
            .keys()
            .filter(|k| !k.starts_with("run.") && !self.resolved.contains_key(*k))
            .map(String::as_str)
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(CliError::Usage(format!("unknown setting(s): {}", unknown.join(", "))))
        }
    }
}

/// Comma-separated layer widths; empty means no hidden layer.
#[derive(Clone, Debug, PartialEq)]
struct WidthList(Vec<usize>);

impl Display for WidthList {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.0.iter().map(usize::to_string).collect();
        f.write_str(&parts.join(","))
    }
}

impl FromStr for WidthList {
    type Err = std::num::ParseIntError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.trim().is_empty() {
            return Ok(WidthList(Vec::new()));
        }
        s.split(',').map(|p| p.trim().parse()).collect::<Result<_, _>>().map(WidthList)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct ExecutionName(Execution);

impl Display for ExecutionName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self.0 {
            Execution::Sequential => "sequential",
            Execution::Parallel => "parallel",
        })
    }
}

impl FromStr for ExecutionName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sequential" => Ok(ExecutionName(Execution::Sequential)),
            "parallel" => Ok(ExecutionName(Execution::Parallel)),
            other => Err(format!("expected sequential or parallel, got {other:?}")),
        }
    }
}

fn dataset_from(s: &mut Settings, k: usize, seed: u64) -> CliResult<LabeledDataset> {
    let spec: String = s.get("dataset", "blobs".to_string())?;
    let mut rng = RngState::substream(seed, DATA_STREAM);
    let ds = match spec.as_str() {
        "blobs" => {
            let per = s.get("per_cluster", 200usize)?;
            let dim = s.get("dim", 16usize)?;
            let dist = s.get("center_dist", 2.0f64)?;
            let std = s.get("cluster_std", 0.1f64)?;
            make_blobs(k, per, dim, dist, std, &mut rng)?
        }
        "rings" => {
            let per = s.get("per_cluster", 200usize)?;
            let noise = s.get("ring_noise", 0.1f64)?;
            make_rings(k, per, noise, &mut rng)?
        }
        other => match other.strip_prefix("csv:") {
            Some(path) => {
                let labeled = s.get("csv_labels", true)?;
                load_csv(Path::new(path), labeled)?
            }
            None => {
                return Err(CliError::Usage(format!(
                    "unknown dataset {other:?}; expected blobs, rings or csv:PATH"
                )))
            }
        },
    };
    Ok(ds)
}

fn train_config_from(s: &mut Settings, k: usize, seed: u64) -> CliResult<TrainConfig> {
    let d = TrainConfig::new(k);
    let arch = Architecture {
        encoder: s.get_list("encoder", &d.arch.encoder)?,
        projection_dim: s.get("projection_dim", d.arch.projection_dim)?,
        predictor_hidden: s.get_list("predictor_hidden", &d.arch.predictor_hidden)?,
    };
    let transform = TransformSpec {
        jitter_std: s.get("jitter_std", d.transform.jitter_std)?,
        scale_range: (
            s.get("scale_lo", d.transform.scale_range.0)?,
            s.get("scale_hi", d.transform.scale_range.1)?,
        ),
        mask_prob: s.get("mask_prob", d.transform.mask_prob)?,
    };
    let ablation: String = s.get("ablation", d.ablation.to_string())?;
    let cfg = TrainConfig {
        k,
        epochs: s.get("epochs", d.epochs)?,
        pretrain_epochs: s.get("pretrain_epochs", d.pretrain_epochs)?,
        batch_size: s.get("batch_size", d.batch_size)?,
        lr_start: s.get("lr", d.lr_start)?,
        tau: s.get("tau", d.tau)?,
        lambda: s.get("lambda", d.lambda)?,
        sigma: s.get("sigma", d.sigma)?,
        alpha: s.get("alpha", d.alpha)?,
        momentum: s.get("momentum", d.momentum)?,
        seed,
        ablation: ablation.parse::<Ablation>()?,
        arch,
        transform,
        kmeans_max_iter: s.get("kmeans_max_iter", d.kmeans_max_iter)?,
        reuse_centers: s.get("reuse_centers", d.reuse_centers)?,
        normalize_before_assign: s.get("normalize_before_assign", d.normalize_before_assign)?,
        spc_include_positive_in_denominator: s.get(
            "spc_include_positive_in_denominator",
            d.spc_include_positive_in_denominator,
        )?,
        dcl2_use_target_features: s.get("dcl2_use_target_features", d.dcl2_use_target_features)?,
        execution: s.get("execution", ExecutionName(d.execution))?.0,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn run_dir(common: &Common, command: &str, seed: u64) -> PathBuf {
    common.out.clone().unwrap_or_else(|| {
        let root = std::env::var_os(OUT_DIR_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from);
        root.join(format!("{command}-seed{seed}"))
    })
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Hash of `bytes` as git would name the blob, but with SHA-256.
pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

/// Collects the files of one run and writes them with a manifest.
struct RunWriter {
    dir: PathBuf,
    command: &'static str,
    started: u64,
    artifacts: Vec<(String, Vec<u8>)>,
}

impl RunWriter {
    fn new(dir: PathBuf, command: &'static str) -> Self {
        Self {
            dir,
            command,
            started: unix_now(),
            artifacts: Vec::new(),
        }
    }

    fn add(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.artifacts.push((name.into(), bytes));
    }

    fn commit(self, settings: &Settings, stderr: &mut dyn Write) -> CliResult<()> {
        std::fs::create_dir_all(&self.dir)?;
        let mut manifest = String::from("# cpcc run manifest; usable as --config\n");
        manifest.push_str(&format!("run.command={}\n", self.command));
        manifest.push_str(&format!("run.version={}\n", env!("CARGO_PKG_VERSION")));
        manifest.push_str(&format!("run.started_unix={}\n", self.started));
        for (name, bytes) in &self.artifacts {
            std::fs::write(self.dir.join(name), bytes)?;
            manifest.push_str(&format!("run.artifact.{name}=sha256:{}\n", blob_hash(bytes)));
        }
        manifest.push_str(&format!("run.finished_unix={}\n", unix_now()));
        for (k, v) in &settings.resolved {
            manifest.push_str(&format!("{k}={v}\n"));
        }
        std::fs::write(self.dir.join(MANIFEST_NAME), manifest)?;
        let _ = writeln!(stderr, "wrote {}", self.dir.display());
        Ok(())
    }
}

fn cmd_train(a: TrainArgs, ablation_suite: bool, stdout: &mut dyn Write, stderr: &mut dyn Write) -> CliResult<()> {
    let mut s = Settings::load(a.common.config.as_deref())?;
    s.set("dataset", a.dataset.as_ref());
    s.set("k", a.k);
    s.set("epochs", a.epochs);
    s.set("pretrain_epochs", a.pretrain_epochs);
    s.set("batch_size", a.batch_size);
    s.set("lr", a.lr);
    s.set("tau", a.tau);
    s.set("lambda", a.lambda);
    s.set("sigma", a.sigma);
    s.set("alpha", a.alpha);
    s.set("momentum", a.momentum);
    s.set("seed", a.common.seed);
    s.set("ablation", a.ablation.as_ref());
    s.apply_overrides(&a.common.set)?;

    let k: usize = s.require("k")?;
    let seed: u64 = s.get("seed", 0u64)?;
    let cfg = train_config_from(&mut s, k, seed)?;
    let ds = dataset_from(&mut s, k, seed)?;
    s.finish()?;

    let command = if ablation_suite { "ablation" } else { "train" };
    let mut writer = RunWriter::new(run_dir(&a.common, command, seed), command);
    let _ = writeln!(
        stderr,
        "{command}: {} samples x {} features, k={}, {} epochs, seed {}",
        ds.features.rows(),
        ds.features.cols(),
        k,
        cfg.epochs,
        seed
    );

    if ablation_suite {
        let rows = run_ablation_suite(&ds.features, ds.labels.as_ref(), &cfg)?;
        let mut table = Vec::new();
        write_ablation_table(&rows, &mut table)?;
        for row in &rows {
            let mut log = Vec::new();
            write_epoch_log(&row.output.log, &mut log)?;
            writer.add(format!("epoch_log_{}.csv", row.ablation), log);
        }
        stdout.write_all(&table)?;
        writer.add("ablation_table.csv", table);
    } else {
        let out = train(&ds.features, ds.labels.as_ref(), &cfg)?;
        let mut log = Vec::new();
        write_epoch_log(&out.log, &mut log)?;
        writer.add("epoch_log.csv", log);
        let mut labels = String::from("label\n");
        for l in out.labels.as_slice() {
            labels.push_str(&format!("{l}\n"));
        }
        writer.add("final_labels.csv", labels.into_bytes());
        let mut ckpt = Vec::new();
        out.write_checkpoint(&mut ckpt)?;
        writer.add("checkpoint.bin", ckpt);
        if let Some(sc) = out.scores {
            writeln!(stdout, "{:?},{:?},{:?}", sc.nmi, sc.acc, sc.ari)?;
        }
    }
    writer.commit(&s, stderr)
}

fn cmd_drift(a: DriftArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> CliResult<()> {
    let mut s = Settings::load(a.common.config.as_deref())?;
    s.set("overlap", a.overlap);
    s.set("batch", a.batch);
    s.set("trials", a.trials);
    s.set("population", a.population);
    s.set("seed", a.common.seed);
    s.apply_overrides(&a.common.set)?;

    let d = OverlapScenario::default();
    let scenario = OverlapScenario {
        overlap: s.get("overlap", d.overlap)?,
        radius: s.get("radius", d.radius)?,
        half_angle: s.get("half_angle", d.half_angle)?,
    };
    let batch: usize = s.get("batch", 32usize)?;
    let trials: usize = s.get("trials", 1000usize)?;
    let population: usize = s.get("population", 10_000usize)?;
    let seed: u64 = s.get("seed", 0u64)?;
    let exec = s.get("execution", ExecutionName(Execution::default()))?.0;
    s.finish()?;
    if trials == 0 {
        return Err(CliError::Usage("trials must be >= 1".into()));
    }
    scenario.cluster_std()?;

    let (ds, centers) = scenario.sample(population, &mut RngState::substream(seed, DATA_STREAM))?;
    let report = drift_experiment_with(
        exec,
        &ds.features,
        &centers,
        batch,
        trials,
        &mut RngState::substream(seed, DRIFT_STREAM),
    )?;
    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    let mut writer = RunWriter::new(run_dir(&a.common, "drift", seed), "drift");
    writer.add("drift.csv", csv);
    writeln!(
        stdout,
        "{:?},{:?},{:?}",
        report.hard_mean(),
        report.soft_mean(),
        report.soft_win_rate()
    )?;
    writer.commit(&s, stderr)
}

fn cmd_eval(a: EvalArgs, stdout: &mut dyn Write) -> CliResult<()> {
    let pred = load_labels(&a.pred)?;
    let truth = load_labels(&a.truth)?;
    let sc = evaluate(&pred, &truth)?;
    writeln!(stdout, "{:?},{:?},{:?}", sc.nmi, sc.acc, sc.ari)?;
    Ok(())
}
