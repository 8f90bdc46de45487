//! Batch front-end: run configuration files and the `drawdim` subcommands.
//!
//! Every command reads the same flat `key = value` configuration, so a
//! pipeline is a sequence of commands sharing one file. Errors surface as
//! a single `ERROR <Class>` line on stdout, details on stderr, and the exit
//! code from [`Error::exit_code`].

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::augment::{AugmentPlan, FlipAxis, Transform};
use crate::encode::{encode_record, Dimension};
use crate::error::{Error, Result};
use crate::ingest::{load_manifest_with, DrawingRecord, FeatureSet, OnSurface, Schema};
use crate::net::{shape_trace, Network};
use crate::preprocess::Normalization;
use crate::synthetic::{gen_cohort, write_cohort};
use crate::tensor::{write_gdt1, Tensor};
use crate::trainer::{
    encode_partition, evaluate, normalization_scope, partition_indices, prepare_partitions, report_row, Evaluation,
    Experiment, Trainer, TrainMetrics, REPORT_HEADER,
};

/// Published configuration keys with a one-line description each.
pub const KEYS: &[(&str, &str)] = &[
    ("manifest", "dataset manifest (TSV: path, label, subject, task, source)"),
    ("schema", "force every record to `drawritepd` or `pahaw` columns; default follows each record's source"),
    ("on_surface", "pen-up filtering: auto (PaHaW only), always, never"),
    ("features", "enabled features, e.g. x+y+v or x,y,a,l,p,v"),
    ("dim", "input dimensionality: 1, 2 or 3"),
    ("length", "1D series length"),
    ("image_size", "2D image side"),
    ("voxel_size", "3D voxel grid side"),
    ("w_min", "narrowest 2D stroke width in pixels"),
    ("w_max", "widest 2D stroke width in pixels"),
    ("margin", "empty border in cells around 2D/3D drawings"),
    ("normalization", "min/max scope: record or dataset (training partition)"),
    ("augment.flip", "flip axes, comma separated (h, v) or none"),
    ("augment.rotate", "rotation angles in degrees, comma separated, or none"),
    ("augment.illumination", "colour shift range, or none"),
    ("augment.jitter", "coordinate jitter sigma as a fraction of span, or none"),
    ("augment.multiplicity", "copies per record for illumination and jitter"),
    ("augment.seed", "augmentation seed"),
    ("lr", "Adam learning rate"),
    ("beta1", "Adam first-moment decay"),
    ("beta2", "Adam second-moment decay"),
    ("eps", "Adam epsilon"),
    ("epochs", "maximum number of epochs"),
    ("batch_size", "mini-batch size"),
    ("val_fraction", "share of training subjects held out for validation"),
    ("train_seed", "shuffling and dropout seed"),
    ("train_metrics", "training loss/accuracy: running (during the epoch) or eval (after it)"),
    ("early_stop_loss", "stop once training loss falls below this, or none"),
    ("test_fraction", "share of subjects held out for testing"),
    ("split_seed", "subject split seed"),
    ("init_seed", "weight initialization seed"),
    ("out", "output directory"),
    ("synth.pd", "synthetic PD subjects"),
    ("synth.hc", "synthetic HC subjects"),
    ("synth.seed", "synthetic cohort seed"),
];

/// Parsed configuration for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub manifest: Option<PathBuf>,
    pub schema: Option<Schema>,
    pub on_surface: OnSurface,
    pub out: PathBuf,
    pub synth_pd: usize,
    pub synth_hc: usize,
    pub synth_seed: u64,
    pub experiment: Experiment,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            manifest: None,
            schema: None,
            on_surface: OnSurface::Auto,
            out: PathBuf::from("out"),
            synth_pd: 40,
            synth_hc: 40,
            synth_seed: 7,
            experiment: Experiment::new(Dimension::Two, FeatureSet::ALL),
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn is_none(value: &str) -> bool {
    matches!(value, "" | "none" | "off")
}

fn optional<T: std::str::FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    if is_none(value) {
        Ok(None)
    } else {
        num(key, value).map(Some)
    }
}

fn list(value: &str) -> impl Iterator<Item = &str> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty())
}

impl RunConfig {
    /// Parses a configuration file body on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.merge(text)?;
        Ok(cfg)
    }

    /// Applies `key = value` lines. Blank lines and `#` comments are skipped.
    pub fn merge(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| match e {
                    Error::Config(msg) => Error::Config(format!("line {}: {msg}", i + 1)),
                    other => other,
                })?;
        }
        Ok(())
    }

    /// Sets one key. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let exp = &mut self.experiment;
        let bad = |what: String| Error::Config(format!("`{key}`: {what}"));
        match key {
            "manifest" => self.manifest = (!is_none(value)).then(|| PathBuf::from(value)),
            "schema" => {
                self.schema = if value == "auto" || is_none(value) {
                    None
                } else {
                    Some(value.parse().map_err(|v| bad(format!("unknown schema `{v}`")))?)
                }
            }
            "on_surface" => self.on_surface = value.parse().map_err(|v| bad(format!("unknown mode `{v}`")))?,
            "features" => exp.features = value.parse().map_err(bad)?,
            "dim" => exp.dim = value.parse().map_err(|v| bad(format!("unknown dimension `{v}`")))?,
            "length" => exp.encode.length = num(key, value)?,
            "image_size" => exp.encode.image_size = num(key, value)?,
            "voxel_size" => exp.encode.voxel_size = num(key, value)?,
            "w_min" => exp.encode.w_min = num(key, value)?,
            "w_max" => exp.encode.w_max = num(key, value)?,
            "margin" => exp.encode.margin = num(key, value)?,
            "normalization" => {
                exp.dataset_normalization = match value {
                    "record" => false,
                    "dataset" => true,
                    other => return Err(bad(format!("expected record or dataset, got `{other}`"))),
                }
            }
            "augment.flip" => {
                exp.augment.flip_axes = list(value)
                    .filter(|v| !is_none(v))
                    .map(str::parse::<FlipAxis>)
                    .collect::<Result<_>>()?
            }
            "augment.rotate" => {
                exp.augment.rotation_angles = list(value)
                    .filter(|v| !is_none(v))
                    .map(|v| num(key, v))
                    .collect::<Result<_>>()?
            }
            "augment.illumination" => exp.augment.illumination = optional(key, value)?,
            "augment.jitter" => exp.augment.jitter = optional(key, value)?,
            "augment.multiplicity" => exp.augment.multiplicity = num(key, value)?,
            "augment.seed" => exp.augment.seed = num(key, value)?,
            "lr" => exp.train.adam.lr = num(key, value)?,
            "beta1" => exp.train.adam.beta1 = num(key, value)?,
            "beta2" => exp.train.adam.beta2 = num(key, value)?,
            "eps" => exp.train.adam.eps = num(key, value)?,
            "epochs" => exp.train.epochs = num(key, value)?,
            "batch_size" => exp.train.batch_size = num(key, value)?,
            "val_fraction" => exp.train.val_fraction = num(key, value)?,
            "train_seed" => exp.train.seed = num(key, value)?,
            "train_metrics" => {
                exp.train.train_metrics = match value {
                    "running" => TrainMetrics::Running,
                    "eval" => TrainMetrics::EvalPass,
                    other => return Err(bad(format!("expected running or eval, got `{other}`"))),
                }
            }
            "early_stop_loss" => exp.train.stop_below_loss = optional(key, value)?,
            "test_fraction" => exp.test_fraction = num(key, value)?,
            "split_seed" => exp.split_seed = num(key, value)?,
            "init_seed" => exp.init_seed = num(key, value)?,
            "out" => self.out = PathBuf::from(value),
            "synth.pd" => self.synth_pd = num(key, value)?,
            "synth.hc" => self.synth_hc = num(key, value)?,
            "synth.seed" => self.synth_seed = num(key, value)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Reads the manifest and applies on-surface filtering.
    pub fn load_records(&self) -> Result<Vec<DrawingRecord>> {
        let path = self
            .manifest
            .as_deref()
            .ok_or_else(|| Error::Config("`manifest` is not set".into()))?;
        let (_, records) = load_manifest_with(path, self.schema)?;
        records.iter().map(|r| self.on_surface.apply(r)).collect()
    }
}

#[derive(Parser, Debug)]
#[command(name = "drawdim", version, about = "Drawing-test classification with 1D, 2D and 3D CNNs")]
struct Cli {
    /// Configuration file (key = value lines)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration key; repeatable
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Worker threads (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic spiral cohort and its manifest
    Synth,
    /// Parse and validate the dataset; write a per-record summary
    Ingest,
    /// Encode every record into GDT1 tensor dumps
    Encode,
    /// Encode the augmented training partition
    Augment,
    /// Train a network and write the checkpoint and history
    Train,
    /// Evaluate the trained network on the test partition
    Evaluate,
    /// Train and evaluate every cell of the dimension x feature-set grid
    Ablation {
        /// Restrict to these dimensions, e.g. 1,3
        #[arg(long, value_delimiter = ',')]
        dims: Vec<String>,
    },
    /// Aggregate the ablation runs into report.csv
    Report,
    /// Print the layer shape trace for the configured network
    Trace,
    /// List configuration keys
    Keys,
}

/// Runs the CLI and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() {
                println!("ERROR ConfigError");
                2
            } else {
                0
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            println!("ERROR {}", e.class());
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::parse(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)?,
        None => RunConfig::default(),
    };
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    let work = || match cli.command {
        Command::Synth => cmd_synth(&cfg),
        Command::Ingest => cmd_ingest(&cfg),
        Command::Encode => cmd_encode(&cfg),
        Command::Augment => cmd_augment(&cfg),
        Command::Train => cmd_train(&cfg),
        Command::Evaluate => cmd_evaluate(&cfg),
        Command::Ablation { dims } => {
            let dims = dims
                .iter()
                .map(|d| d.parse().map_err(|v| Error::Config(format!("unknown dimension `{v}`"))))
                .collect::<Result<Vec<Dimension>>>()?;
            cmd_ablation(&cfg, &dims)
        }
        Command::Report => cmd_report(&cfg),
        Command::Trace => cmd_trace(&cfg),
        Command::Keys => {
            for (k, doc) in KEYS {
                println!("{k:<22} {doc}");
            }
            Ok(())
        }
    };
    match cli.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    }
}

fn write(path: &Path, body: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, body).map_err(|e| Error::io(path, e))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn write_tensor(path: &Path, t: &Tensor<f32>) -> Result<()> {
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_gdt1(t, BufWriter::new(f))
}

fn shape_str(shape: &[usize]) -> String {
    shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
}

fn transform_str(t: &Transform) -> String {
    match t {
        Transform::Original => "original".into(),
        Transform::Flip(a) => format!("flip:{a}"),
        Transform::Rotate(deg) => format!("rotate:{deg}"),
        Transform::Illuminate(d) => format!("illuminate:{:.6}/{:.6}/{:.6}", d[0], d[1], d[2]),
        Transform::Jitter(s) => format!("jitter:{s}"),
    }
}

fn cmd_synth(cfg: &RunConfig) -> Result<()> {
    let (manifest, records) = gen_cohort(cfg.synth_pd, cfg.synth_hc, cfg.synth_seed)?;
    let path = write_cohort(&cfg.out.join("data"), &manifest, &records)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_ingest(cfg: &RunConfig) -> Result<()> {
    let records = cfg.load_records()?;
    let mut body = String::from("subject\tlabel\tsource\tsamples\tduration_s\n");
    for r in &records {
        let s = r.samples();
        let duration = s[s.len() - 1].t - s[0].t;
        writeln!(body, "{}\t{}\t{}\t{}\t{:.6}", r.subject_id, r.label, r.source, r.len(), duration).unwrap();
    }
    write(&cfg.out.join("ingest.tsv"), &body)
}

fn cmd_encode(cfg: &RunConfig) -> Result<()> {
    let exp = &cfg.experiment;
    exp.validate()?;
    let records = cfg.load_records()?;
    let dir = cfg.out.join("encoded");
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut index = String::from("file\tlabel\tsubject\tshape\n");
    for (i, r) in records.iter().enumerate() {
        let t = encode_record(r, exp.dim, &exp.features, &exp.encode, Normalization::PerRecord)?.into_tensor();
        let name = format!("{i:05}.gdt");
        write_tensor(&dir.join(&name), &t)?;
        writeln!(index, "{name}\t{}\t{}\t{}", r.label, r.subject_id, shape_str(t.shape())).unwrap();
    }
    write(&dir.join("index.tsv"), &index)
}

fn cmd_augment(cfg: &RunConfig) -> Result<()> {
    let records = cfg.load_records()?;
    let ([train_idx, ..], [train, ..]) = prepare_partitions(&records, &cfg.experiment)?;
    let dir = cfg.out.join("augmented");
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut index = String::from("file\tlabel\tsubject\torigin\ttransform\n");
    for (i, s) in train.iter().enumerate() {
        let name = format!("{i:06}.gdt");
        write_tensor(&dir.join(&name), &s.input)?;
        let p = &s.provenance;
        writeln!(index, "{name}\t{}\t{}\t{}\t{}", s.label, p.subject_id, p.origin, transform_str(&p.transform)).unwrap();
    }
    println!("{} training records -> {} samples", train_idx.len(), train.len());
    write(&dir.join("index.tsv"), &index)
}

fn split_table(records: &[DrawingRecord], parts: &[Vec<usize>; 3]) -> String {
    let mut body = String::from("index\tsubject\tlabel\tpartition\n");
    for (name, idx) in ["train", "val", "test"].iter().zip(parts) {
        for &i in idx {
            writeln!(body, "{i}\t{}\t{}\t{name}", records[i].subject_id, records[i].label).unwrap();
        }
    }
    body
}

/// Trains into `dir`: `model/`, `history.csv`, `split.tsv`.
fn train_into(records: &[DrawingRecord], exp: &Experiment, dir: &Path) -> Result<Network<f32>> {
    let (parts, [train, val, _]) = prepare_partitions(records, exp)?;
    let model = Network::<f32>::build(exp.network_config(), exp.init_seed)?;
    let mut trainer = Trainer::new(model, exp.train.clone())?;
    for _ in 0..exp.train.epochs {
        let e = trainer.step_epoch(&train, &val)?;
        let val = match (e.val_loss, e.val_acc) {
            (Some(l), Some(a)) => format!(" val_loss {l:.4} val_acc {a:.4}"),
            _ => String::new(),
        };
        eprintln!("epoch {:>3} loss {:.4} acc {:.4}{val}", e.epoch, e.train_loss, e.train_acc);
        if trainer.converged() {
            break;
        }
    }
    let (model, history) = trainer.into_parts();
    model.save(&dir.join("model"))?;
    println!("wrote {}", dir.join("model").display());
    write(&dir.join("history.csv"), &history.to_csv())?;
    write(&dir.join("split.tsv"), &split_table(records, &parts))?;
    Ok(model)
}

/// Evaluates on the test partition and writes `metrics.csv` and
/// `predictions.tsv` into `dir`.
fn evaluate_into(records: &[DrawingRecord], exp: &Experiment, model: &Network<f32>, dir: &Path) -> Result<Evaluation> {
    exp.validate()?;
    if model.config() != &exp.network_config() {
        return Err(Error::ShapeMismatch(format!(
            "checkpoint was built for {:?}, configuration asks for {:?}",
            model.config(),
            exp.network_config()
        )));
    }
    let [train_idx, _, test_idx] = partition_indices(records, exp)?;
    let scope = normalization_scope(records, &train_idx, exp);
    let test = encode_partition(records, &test_idx, exp, &AugmentPlan::default(), scope)?;
    let ev = evaluate(model, &test)?;
    write(
        &dir.join("metrics.csv"),
        &format!("{REPORT_HEADER}\n{}\n", report_row(exp.dim, &exp.features, &ev.metrics)),
    )?;
    let mut preds = String::from("subject\tlabel\tpredicted\tp_hc\tp_pd\n");
    for (s, (truth, p)) in test.iter().zip(&ev.predictions) {
        writeln!(
            preds,
            "{}\t{truth}\t{}\t{:.6}\t{:.6}",
            s.provenance.subject_id, p.label, p.probs[0], p.probs[1]
        )
        .unwrap();
    }
    write(&dir.join("predictions.tsv"), &preds)?;
    let c = &ev.confusion;
    println!(
        "tp {} fn {} fp {} tn {}  accuracy {:.2}%",
        c.tp,
        c.fn_,
        c.fp,
        c.tn,
        100.0 * ev.metrics.accuracy
    );
    if !ev.metrics.undefined.is_empty() {
        eprintln!("undefined metrics (reported as 0): {}", ev.metrics.undefined.join(", "));
    }
    Ok(ev)
}

fn cmd_train(cfg: &RunConfig) -> Result<()> {
    cfg.experiment.validate()?;
    let records = cfg.load_records()?;
    train_into(&records, &cfg.experiment, &cfg.out).map(drop)
}

fn cmd_evaluate(cfg: &RunConfig) -> Result<()> {
    let model_dir = cfg.out.join("model");
    if !model_dir.join("network.txt").exists() {
        return Err(Error::Config(format!(
            "no checkpoint at {}; run `train` first",
            model_dir.display()
        )));
    }
    let model = Network::<f32>::load(&model_dir)?;
    let records = cfg.load_records()?;
    evaluate_into(&records, &cfg.experiment, &model, &cfg.out).map(drop)
}

/// Directory name of one ablation cell, e.g. `2D_x+y+v`.
pub fn cell_name(dim: Dimension, fs: &FeatureSet) -> String {
    format!("{dim}_{}", fs.label())
}

/// The ten (dimension, feature set) cells of the ablation grid.
pub fn ablation_cells() -> Vec<(Dimension, FeatureSet)> {
    [Dimension::One, Dimension::Two, Dimension::Three]
        .into_iter()
        .flat_map(|d| d.ablation_feature_sets().into_iter().map(move |fs| (d, fs)))
        .collect()
}

fn cmd_ablation(cfg: &RunConfig, dims: &[Dimension]) -> Result<()> {
    let records = cfg.load_records()?;
    for (dim, fs) in ablation_cells() {
        if !dims.is_empty() && !dims.contains(&dim) {
            continue;
        }
        let mut exp = cfg.experiment.clone();
        exp.dim = dim;
        exp.features = fs;
        // random families still apply to 1D; geometric ones do not
        if dim == Dimension::One {
            exp.augment.flip_axes.clear();
            exp.augment.rotation_angles.clear();
            exp.augment.illumination = None;
        }
        let dir = cfg.out.join("runs").join(cell_name(dim, &fs));
        eprintln!("== {}", cell_name(dim, &fs));
        let model = train_into(&records, &exp, &dir)?;
        evaluate_into(&records, &exp, &model, &dir)?;
    }
    Ok(())
}

fn cmd_report(cfg: &RunConfig) -> Result<()> {
    let runs = cfg.out.join("runs");
    let mut report = format!("{REPORT_HEADER}\n");
    let mut missing = Vec::new();
    let mut found = 0;
    for (dim, fs) in ablation_cells() {
        let name = cell_name(dim, &fs);
        let dir = runs.join(&name);
        let metrics = dir.join("metrics.csv");
        let Ok(text) = fs::read_to_string(&metrics) else {
            missing.push(name);
            continue;
        };
        let row = text
            .lines()
            .nth(1)
            .ok_or_else(|| Error::Format(format!("{} has no data row", metrics.display())))?;
        report.push_str(row);
        report.push('\n');
        found += 1;
        if let Ok(history) = fs::read_to_string(dir.join("history.csv")) {
            write(&cfg.out.join("curves").join(format!("{name}.csv")), &history)?;
        }
    }
    for name in &missing {
        eprintln!("missing run: {name}");
    }
    write(
        &cfg.out.join("missing.txt"),
        &missing.iter().map(|m| format!("{m}\n")).collect::<String>(),
    )?;
    if found == 0 {
        return Err(Error::Format(format!("no completed runs under {}", runs.display())));
    }
    write(&cfg.out.join("report.csv"), &report)?;
    println!("{found} runs reported, {} missing", missing.len());
    Ok(())
}

fn cmd_trace(cfg: &RunConfig) -> Result<()> {
    let net = cfg.experiment.network_config();
    let trace = shape_trace(&net)?;
    println!("{:<10} {:<20} {:<20} {:>10}", "layer", "input", "output", "params");
    for row in &trace.rows {
        println!(
            "{:<10} {:<20} {:<20} {:>10}",
            row.name,
            shape_str(&row.input),
            shape_str(&row.output),
            row.params
        );
    }
    println!("total {}", trace.total_params());
    Ok(())
}
