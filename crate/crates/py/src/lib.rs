//! Python bindings: dataset generation, splitting, measurement, screening,
//! training and evaluation.

use std::collections::BTreeMap;
use std::path::PathBuf;

use anthro_core::bodygen::{build_body, sample_body_spec, GenerationRanges, Sex};
use anthro_core::datakit::{generate_dataset, split_dataset, DatasetManifest, GenerationConfig, Split};
use anthro_core::imaging::load_gray;
use anthro_core::measure::{measure_all, MeasureConfig, CANONICAL, MEASUREMENT_NAMES};
use anthro_core::regressor::checkpoint::{load_checkpoint, save_checkpoint, ModelCard};
use anthro_core::regressor::eval::{ConstantPredictor, PerfectPredictor};
use anthro_core::regressor::{
    build_model, evaluate_model, train_model, BackboneConfig, BackboneName, EvalReport, HeadConfig, Samples,
    TrainConfig,
};
use anthro_core::screening::{screen_subject, ProportionThresholds, ScreeningReport};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

create_exception!(anthro, AnthroError, PyException, "Raised for any pipeline failure; `args[1]` is the error class.");

fn to_py(err: anthro_core::Error) -> PyErr {
    AnthroError::new_err((err.to_string(), err.class()))
}

fn parse_sex(s: &str) -> PyResult<Sex> {
    s.parse().map_err(to_py)
}

/// Generates `n_per_sex` bodies of each sex into `out`; returns the sample count.
#[pyfunction]
#[pyo3(signature = (out, n_per_sex, seed=0, resolution=None, export_obj=false))]
fn generate(
    py: Python<'_>,
    out: PathBuf,
    n_per_sex: usize,
    seed: u64,
    resolution: Option<usize>,
    export_obj: bool,
) -> PyResult<usize> {
    let mut cfg = GenerationConfig { export_obj, ..GenerationConfig::default() };
    if let Some(r) = resolution {
        cfg.resolution = r;
    }
    let m = py.detach(|| generate_dataset(n_per_sex, &cfg, &out, seed)).map_err(to_py)?;
    Ok(m.records.len())
}

/// Splits the dataset at `root` in place; returns `{split: count}`.
#[pyfunction]
#[pyo3(signature = (root, fractions=(0.7, 0.15, 0.15), seed=0))]
fn split(root: PathBuf, fractions: (f64, f64, f64), seed: u64) -> PyResult<BTreeMap<String, usize>> {
    let manifest = DatasetManifest::read(&root).map_err(to_py)?;
    let s = split_dataset(&manifest, [fractions.0, fractions.1, fractions.2], seed).map_err(to_py)?;
    s.write(&root).map_err(to_py)?;
    Ok(Split::ALL
        .iter()
        .map(|sp| (format!("{sp:?}").to_lowercase(), s.records_in(*sp).len()))
        .collect())
}

/// Builds the body for `(sex, seed)` with the default ranges and measures it.
#[pyfunction]
#[pyo3(signature = (sex, seed, resolution=64))]
fn measure_body(sex: &str, seed: u64, resolution: usize) -> PyResult<BTreeMap<String, f64>> {
    let spec = sample_body_spec(parse_sex(sex)?, seed, &GenerationRanges::default()).map_err(to_py)?;
    let body = build_body(&spec, resolution).map_err(to_py)?;
    let m = measure_all(&body, &MeasureConfig::default()).map_err(to_py)?;
    Ok(m.iter().map(|(k, v)| (k.to_string(), v)).collect())
}

fn screening_dict<'py>(py: Python<'py>, r: &ScreeningReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("sex", r.sex.as_str())?;
    d.set_item("inputs", r.inputs.clone())?;
    d.set_item("waist_class", r.waist_class.to_string().replace(' ', "_"))?;
    d.set_item("whr", r.whr)?;
    d.set_item("whr_class", r.whr_class.to_string().replace(' ', "_"))?;
    d.set_item("arm_torso", r.ratios.arm_torso)?;
    d.set_item("leg_torso", r.ratios.leg_torso)?;
    let flags = PyDict::new(py);
    flags.set_item("arm_torso", r.marfanoid_flags.arm_torso.to_string().replace(' ', "_"))?;
    flags.set_item("leg_torso", r.marfanoid_flags.leg_torso.to_string().replace(' ', "_"))?;
    d.set_item("marfanoid_flags", flags)?;
    d.set_item("text", r.to_text())?;
    Ok(d)
}

/// Screens one subject from a `{name: cm}` mapping.
#[pyfunction]
#[pyo3(signature = (measurements, sex, arm_torso_max=None, leg_torso_max=None))]
fn screen<'py>(
    py: Python<'py>,
    measurements: BTreeMap<String, f64>,
    sex: &str,
    arm_torso_max: Option<f64>,
    leg_torso_max: Option<f64>,
) -> PyResult<Bound<'py, PyDict>> {
    let t = ProportionThresholds { arm_torso_max, leg_torso_max };
    t.validate().map_err(to_py)?;
    let r = screen_subject(&measurements, parse_sex(sex)?, &t).map_err(to_py)?;
    screening_dict(py, &r)
}

fn report_dict<'py>(py: Python<'py>, r: &EvalReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("model", &r.model)?;
    d.set_item("n_male", r.n_male)?;
    d.set_item("n_female", r.n_female)?;
    let rows = PyList::empty(py);
    for row in r.rows.iter().chain(std::iter::once(&r.mean)) {
        let x = PyDict::new(py);
        x.set_item("measurement", &row.measurement)?;
        x.set_item("label", &row.label)?;
        x.set_item("male", row.male)?;
        x.set_item("female", row.female)?;
        x.set_item("total", row.total)?;
        rows.append(x)?;
    }
    d.set_item("rows", rows)?;
    d.set_item("csv", r.to_csv())?;
    d.set_item("table", r.to_table())?;
    Ok(d)
}

/// Evaluates a baseline (`"perfect"` or `"train-mean"`) on the test split.
#[pyfunction]
fn evaluate_baseline<'py>(py: Python<'py>, root: PathBuf, baseline: &str) -> PyResult<Bound<'py, PyDict>> {
    let manifest = DatasetManifest::read(&root).map_err(to_py)?;
    let report = match baseline {
        "perfect" => evaluate_model(&PerfectPredictor, &manifest, &root, &CANONICAL),
        "train-mean" | "train_mean" => ConstantPredictor::train_mean(&manifest)
            .and_then(|p| evaluate_model(&p, &manifest, &root, &CANONICAL)),
        other => {
            return Err(to_py(anthro_core::Error::Config(format!("unknown baseline `{other}`"))));
        }
    }
    .map_err(to_py)?;
    report_dict(py, &report)
}

/// A trained regressor loaded from a checkpoint directory.
#[pyclass(name = "Model", frozen)]
struct PyModel {
    model: anthro_core::regressor::Model,
    card: ModelCard,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        let (model, card) = load_checkpoint(&dir).map_err(to_py)?;
        Ok(Self { model, card })
    }

    /// Trains the tiny test backbone on the split dataset at `root` and saves to `out`.
    #[staticmethod]
    #[pyo3(signature = (root, out, seed=0, max_epochs=None, batch_size=None))]
    fn train(
        py: Python<'_>,
        root: PathBuf,
        out: PathBuf,
        seed: u64,
        max_epochs: Option<usize>,
        batch_size: Option<usize>,
    ) -> PyResult<Self> {
        py.detach(|| {
            let mut cfg = TrainConfig { seed, ..TrainConfig::default() };
            if let Some(e) = max_epochs {
                cfg.max_epochs = e;
            }
            if let Some(b) = batch_size {
                cfg.batch_size = b;
            }
            cfg.validate()?;
            let bb = BackboneConfig { seed, ..BackboneConfig::new(BackboneName::TinyTest) };
            let hc = HeadConfig { seed, ..HeadConfig::default() };
            let model = build_model(&bb, &hc)?;
            let manifest = DatasetManifest::read(&root)?;
            let train = Samples::from_records(&model, &root, &manifest.records_in(Split::Train))?;
            let val = Samples::from_records(&model, &root, &manifest.records_in(Split::Val))?;
            let (model, history) = train_model(model, &train, &val, &cfg)?;
            let card = save_checkpoint(&out, &model, &cfg, &history, None)?;
            Ok(Self { model, card })
        })
        .map_err(to_py)
    }

    #[getter]
    fn backbone(&self) -> String {
        self.card.backbone.name.to_string()
    }

    #[getter]
    fn best_epoch(&self) -> usize {
        self.card.best_epoch
    }

    #[getter]
    fn best_val_mae(&self) -> f64 {
        self.card.best_val_mae
    }

    /// Predicts the 16 measurements (cm) for one PNG silhouette.
    fn predict(&self, image: PathBuf) -> PyResult<BTreeMap<String, f64>> {
        let input = load_gray(&image).and_then(|g| self.model.prepare(&g)).map_err(to_py)?;
        let pred = self.model.predict_batch(&[input]).map_err(to_py)?;
        Ok(MEASUREMENT_NAMES.iter().map(|n| n.to_string()).zip(pred.row(0).iter().copied()).collect())
    }

    /// Evaluates on the test split of the dataset at `root`.
    fn evaluate<'py>(&self, py: Python<'py>, root: PathBuf) -> PyResult<Bound<'py, PyDict>> {
        let manifest = DatasetManifest::read(&root).map_err(to_py)?;
        let report = py.detach(|| evaluate_model(&self.model, &manifest, &root, &CANONICAL)).map_err(to_py)?;
        report_dict(py, &report)
    }
}

#[pymodule]
fn anthro(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("AnthroError", m.py().get_type::<AnthroError>())?;
    m.add("MEASUREMENT_NAMES", MEASUREMENT_NAMES.to_vec())?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(split, m)?)?;
    m.add_function(wrap_pyfunction!(measure_body, m)?)?;
    m.add_function(wrap_pyfunction!(screen, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_baseline, m)?)?;
    m.add_class::<PyModel>()?;
    Ok(())
}
