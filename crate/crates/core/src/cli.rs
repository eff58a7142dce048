//! The `anthro` command line: gen → split → train → eval → predict → screen.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::bodygen::{GenerationRanges, Sex};
use crate::datakit::{
    generate_dataset, sha256_hex, split_dataset, write_atomic, DatasetManifest, GenerationConfig, Provenance, Split,
    DEFAULT_FRACTIONS, PROVENANCE_FILE,
};
use crate::imaging::{load_gray, RenderConfig};
use crate::measure::{MeasureConfig, CANONICAL, MEASUREMENT_NAMES};
use crate::regressor::checkpoint::{load_checkpoint, save_checkpoint, WEIGHTS_FILE};
use crate::regressor::eval::{ConstantPredictor, PerfectPredictor};
use crate::regressor::{
    build_model, evaluate_model, train_model, BackboneConfig, BackboneName, EvalReport, HeadConfig, Predictor, Samples,
    TrainConfig,
};
use crate::screening::{screen_subject, ProportionThresholds};
use crate::{Error, Result};

/// Environment variable selecting the compute device.
pub const DEVICE_ENV: &str = "ANTHRO_DEVICE";

pub const EVAL_CSV: &str = "eval_report.csv";
pub const EVAL_TABLE: &str = "eval_report.txt";
pub const EVAL_JSON: &str = "eval_report.json";
pub const PREDICTION_FILE: &str = "prediction.json";
pub const SCREENING_JSON: &str = "screening.json";
pub const SCREENING_TEXT: &str = "screening.txt";

#[derive(Debug, Parser)]
#[command(name = "anthro", version, about = "Synthetic anthropometry pipeline")]
pub struct Cli {
    /// Pipeline config file (TOML, or JSON by extension).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed (default 0)
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory of the command's artifact.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Baseline {
    Perfect,
    TrainMean,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a dataset of bodies, renders and measurements.
    Gen {
        /// Bodies generated per sex
        #[arg(long)]
        n_per_sex: Option<usize>,
        /// Generation-range file (TOML or JSON).
        #[arg(long)]
        ranges: Option<PathBuf>,
        /// Also write every body as an OBJ mesh.
        #[arg(long)]
        export_obj: bool,
    },
    /// Assign train/val/test labels and rewrite the manifest.
    Split {
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Train, val and test fractions, comma separated.
        #[arg(long, value_delimiter = ',')]
        fractions: Option<Vec<f64>>,
    },
    /// Train the regressor and write a checkpoint directory.
    Train {
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// vgg19, resnet50, densenet121 or tiny_test (default)
        #[arg(long)]
        backbone: Option<String>,
        /// Mini-batch size (default 350)
        #[arg(long)]
        batch_size: Option<usize>,
        /// Epoch cap, at most 100
        #[arg(long)]
        max_epochs: Option<usize>,
    },
    /// Evaluate a checkpoint (or a baseline) on the test split.
    Eval {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, conflicts_with = "baseline")]
        model: Option<PathBuf>,
        #[arg(long, value_enum)]
        baseline: Option<Baseline>,
    },
    /// Predict the 16 measurements of one rendered image.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        image: PathBuf,
    },
    /// Screening report from a measurements JSON file (or a predict output).
    Screen {
        #[arg(long)]
        measurements: PathBuf,
        #[arg(long)]
        sex: Sex,
        #[arg(long)]
        thresholds: Option<PathBuf>,
    },
}

/// Settings shared by the subcommands; every field is optional and command-line
/// flags take precedence.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: Option<u64>,
    pub dataset: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub n_per_sex: Option<usize>,
    pub ranges: Option<PathBuf>,
    pub resolution: Option<usize>,
    pub export_obj: Option<bool>,
    pub render: Option<RenderConfig>,
    pub measure: Option<MeasureConfig>,
    pub fractions: Option<[f64; 3]>,
    pub backbone: Option<BackboneName>,
    pub train: Option<TrainConfig>,
    pub thresholds: Option<PathBuf>,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        // relative paths are taken relative to the config file
        let base = path.parent().unwrap_or(Path::new(""));
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(v) = p {
                if v.is_relative() {
                    *v = base.join(&*v);
                }
            }
        };
        let mut cfg = cfg;
        fix(&mut cfg.dataset);
        fix(&mut cfg.out);
        fix(&mut cfg.ranges);
        fix(&mut cfg.thresholds);
        Ok(cfg)
    }
}

/// Fails unless the requested device is the CPU.
pub fn check_device() -> Result<()> {
    match std::env::var(DEVICE_ENV) {
        Err(_) => Ok(()),
        Ok(v) if v.is_empty() || v.eq_ignore_ascii_case("cpu") || v.eq_ignore_ascii_case("auto") => Ok(()),
        Ok(v) => Err(Error::Config(format!("{DEVICE_ENV}={v}: only the cpu device is available"))),
    }
}

fn digest_of<T: Serialize>(value: &T) -> String {
    sha256_hex(serde_json::to_string(value).expect("serialisable").as_bytes())
}

fn required(value: Option<PathBuf>, what: &str) -> Result<PathBuf> {
    value.ok_or_else(|| Error::Config(format!("missing {what} (flag or config)")))
}

/// Writes `files` plus a provenance file into `dir` via a sibling staging directory.
pub fn write_artifact_dir(dir: &Path, files: &[(&str, Vec<u8>)], provenance: &Provenance) -> Result<()> {
    if dir.exists() {
        let nonempty = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?.next().is_some();
        if nonempty && !dir.join(PROVENANCE_FILE).exists() {
            return Err(Error::Config(format!("refusing to overwrite {}", dir.display())));
        }
    }
    let name = dir.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let stage = dir.with_file_name(format!(".{name}.partial"));
    if stage.exists() {
        fs::remove_dir_all(&stage).map_err(|e| Error::io(&stage, e))?;
    }
    fs::create_dir_all(&stage).map_err(|e| Error::io(&stage, e))?;
    for (file, bytes) in files {
        write_atomic(&stage.join(file), bytes)?;
    }
    provenance.write(&stage)?;
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::rename(&stage, dir).map_err(|e| Error::io(dir, e))
}

/// Runs a parsed command; returns the text printed on success.
pub fn run(cli: Cli) -> Result<String> {
    let file = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    let seed = cli.seed.or(file.seed).unwrap_or(0);
    let out = cli.out.clone().or(file.out.clone());

    match cli.command {
        Command::Gen { n_per_sex, ranges, export_obj } => {
            let out = required(out, "--out")?;
            let n = n_per_sex
                .or(file.n_per_sex)
                .ok_or_else(|| Error::Config("missing --n-per-sex".into()))?;
            let mut cfg = GenerationConfig::default();
            if let Some(p) = ranges.or(file.ranges.clone()) {
                cfg.ranges = GenerationRanges::load(&p)?;
            }
            if let Some(r) = file.render.clone() {
                cfg.render = r;
            }
            if let Some(m) = file.measure {
                cfg.measure = m;
            }
            if let Some(res) = file.resolution {
                cfg.resolution = res;
            }
            cfg.export_obj = export_obj || file.export_obj.unwrap_or(false);
            let m = generate_dataset(n, &cfg, &out, seed)?;
            Ok(format!("generated {} samples into {} (digest {})\n", m.records.len(), out.display(), m.config_digest))
        }

        Command::Split { dataset, fractions } => {
            let root = required(dataset.or(file.dataset.clone()).or(out), "--dataset")?;
            let fractions = match fractions {
                Some(v) => <[f64; 3]>::try_from(v.as_slice())
                    .map_err(|_| Error::Config(format!("--fractions needs 3 values, got {}", v.len())))?,
                None => file.fractions.unwrap_or(DEFAULT_FRACTIONS),
            };
            let manifest = DatasetManifest::read(&root)?;
            let split = split_dataset(&manifest, fractions, seed)?;
            split.write(&root)?;
            let mut prov = Provenance::new("dataset", split.config_digest.clone(), split.generation.master_seed);
            prov.inputs.insert("split_seed".into(), seed.to_string());
            prov.inputs.insert("split_fractions".into(), format!("{fractions:?}"));
            prov.write(&root)?;
            let counts: Vec<String> = Split::ALL
                .iter()
                .map(|s| format!("{:?}={}", s, split.records_in(*s).len()).to_lowercase())
                .collect();
            Ok(format!("split {}: {}\n", root.display(), counts.join(" ")))
        }

        Command::Train { dataset, backbone, batch_size, max_epochs } => {
            check_device()?;
            let root = required(dataset.or(file.dataset.clone()), "--dataset")?;
            let out = required(out, "--out")?;
            let name = match backbone {
                Some(b) => b.parse()?,
                None => file.backbone.unwrap_or(BackboneName::TinyTest),
            };
            let mut train_cfg = file.train.clone().unwrap_or_default();
            train_cfg.seed = seed;
            if let Some(b) = batch_size {
                train_cfg.batch_size = b;
            }
            if let Some(e) = max_epochs {
                train_cfg.max_epochs = e;
            }
            train_cfg.validate()?;
            let bb = BackboneConfig { seed, ..BackboneConfig::new(name) };
            let hc = HeadConfig { seed, ..HeadConfig::default() };
            let model = build_model(&bb, &hc)?;
            let manifest = DatasetManifest::read(&root)?;
            if !manifest.is_split() {
                return Err(Error::State(format!("{} has not been split", root.display())));
            }
            let train = Samples::from_records(&model, &root, &manifest.records_in(Split::Train))?;
            let val = Samples::from_records(&model, &root, &manifest.records_in(Split::Val))?;
            let (model, history) = train_model(model, &train, &val, &train_cfg)?;
            let digest = digest_of(&json!({ "backbone": bb, "head": hc, "train": train_cfg }));
            let mut prov = Provenance::new("checkpoint", digest, seed);
            prov.inputs.insert("dataset".into(), manifest.config_digest.clone());
            let card = save_checkpoint(&out, &model, &train_cfg, &history, Some(&prov))?;
            Ok(format!(
                "trained {} for {} epochs; best epoch {} val MAE {:.4} cm; checkpoint {}\n",
                card.backbone.name,
                card.epochs_run,
                card.best_epoch,
                card.best_val_mae,
                out.display()
            ))
        }

        Command::Eval { dataset, model, baseline } => {
            let root = required(dataset.or(file.dataset.clone()), "--dataset")?;
            let out = required(out, "--out")?;
            let manifest = DatasetManifest::read(&root)?;
            let mut prov_inputs = BTreeMap::new();
            prov_inputs.insert("dataset".to_string(), manifest.config_digest.clone());
            let report: EvalReport = match (model, baseline) {
                (Some(dir), _) => {
                    check_device()?;
                    let (m, _) = load_checkpoint(&dir)?;
                    let w = dir.join(WEIGHTS_FILE);
                    let bytes = fs::read(&w).map_err(|e| Error::io(&w, e))?;
                    prov_inputs.insert("model".into(), sha256_hex(&bytes));
                    evaluate_model(&m, &manifest, &root, &CANONICAL)?
                }
                (None, Some(Baseline::Perfect)) => evaluate_model(&PerfectPredictor, &manifest, &root, &CANONICAL)?,
                (None, Some(Baseline::TrainMean)) => {
                    let p = ConstantPredictor::train_mean(&manifest)?;
                    evaluate_model(&p as &dyn Predictor, &manifest, &root, &CANONICAL)?
                }
                (None, None) => return Err(Error::Config("eval needs --model or --baseline".into())),
            };
            let mut prov = Provenance::new("eval_report", digest_of(&json!({ "model": report.model, "reported": CANONICAL })), seed);
            prov.inputs = prov_inputs;
            let table = report.to_table();
            write_artifact_dir(
                &out,
                &[
                    (EVAL_CSV, report.to_csv().into_bytes()),
                    (EVAL_TABLE, table.clone().into_bytes()),
                    (EVAL_JSON, (serde_json::to_string_pretty(&report).expect("serialisable") + "\n").into_bytes()),
                ],
                &prov,
            )?;
            Ok(table)
        }

        Command::Predict { model, image } => {
            check_device()?;
            let (m, card) = load_checkpoint(&model)?;
            let input = m.prepare(&load_gray(&image)?)?;
            let pred = m.predict_batch(&[input])?;
            let measurements: BTreeMap<&str, f64> =
                MEASUREMENT_NAMES.iter().copied().zip(pred.row(0).iter().copied()).collect();
            let doc = json!({
                "model": card.backbone.name,
                "image": image.display().to_string(),
                "measurements": measurements,
            });
            let text = serde_json::to_string_pretty(&doc).expect("serialisable") + "\n";
            if let Some(out) = out {
                let mut prov = Provenance::new("prediction", card.weights_sha256.clone(), card.seed);
                let bytes = fs::read(&image).map_err(|e| Error::io(&image, e))?;
                prov.inputs.insert("image".into(), sha256_hex(&bytes));
                write_artifact_dir(&out, &[(PREDICTION_FILE, text.clone().into_bytes())], &prov)?;
            }
            Ok(text)
        }

        Command::Screen { measurements, sex, thresholds } => {
            let thresholds = match thresholds.or(file.thresholds.clone()) {
                Some(p) => ProportionThresholds::load(&p)?,
                None => ProportionThresholds::default(),
            };
            let values = read_measurements(&measurements)?;
            let report = screen_subject(&values, sex, &thresholds)?;
            let text = report.to_text();
            if let Some(out) = out {
                let digest = digest_of(&json!({ "sex": sex, "thresholds": thresholds }));
                let mut prov = Provenance::new("screening", digest, seed);
                let bytes = fs::read(&measurements).map_err(|e| Error::io(&measurements, e))?;
                prov.inputs.insert("measurements".into(), sha256_hex(&bytes));
                write_artifact_dir(
                    &out,
                    &[(SCREENING_JSON, report.to_json().into_bytes()), (SCREENING_TEXT, text.clone().into_bytes())],
                    &prov,
                )?;
            }
            Ok(text)
        }
    }
}

/// Reads a flat `{name: cm}` object, or any object with such a map under `measurements`.
pub fn read_measurements(path: &Path) -> Result<BTreeMap<String, f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::Decode(format!("{}: {e}", path.display())))?;
    let map = doc.get("measurements").unwrap_or(&doc);
    let obj = map
        .as_object()
        .ok_or_else(|| Error::Decode(format!("{}: expected a JSON object of measurements", path.display())))?;
    obj.iter()
        .map(|(k, v)| {
            v.as_f64()
                .map(|x| (k.clone(), x))
                .ok_or_else(|| Error::Decode(format!("{}: `{k}` is not a number", path.display())))
        })
        .collect()
}

/// Single-line error report: `error[<class>]: <message>`.
pub fn error_line(err: &Error) -> String {
    format!("error[{}]: {}", err.class(), err.to_string().replace('\n', " "))
}

/// Parses `args`, runs the command, prints results, and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return 0;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error[config]: {first}");
            return 2;
        }
    };
    match run(cli) {
        Ok(text) => {
            print!("{text}");
            0
        }
        Err(e) => {
            eprintln!("{}", error_line(&e));
            e.exit_code()
        }
    }
}

