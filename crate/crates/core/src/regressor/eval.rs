//! Per-measurement, per-sex MAE on the test split.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use super::train::{targets_of, Samples};
use super::{Model, OUTPUT_DIM};
use crate::bodygen::Sex;
use crate::datakit::{test_subsets, DatasetManifest, SampleRecord, Split};
use crate::measure::{measurement_index, CANONICAL, MEASUREMENT_NAMES};
use crate::{Error, Result};

/// Mean over samples of `|prediction - target|` in column `index`.
pub fn compute_mae(predictions: &Array2<f64>, targets: &Array2<f64>, index: usize) -> Result<f64> {
    if predictions.dim() != targets.dim() {
        return Err(Error::InvalidInput(format!(
            "prediction shape {:?} differs from target shape {:?}",
            predictions.dim(),
            targets.dim()
        )));
    }
    if predictions.nrows() == 0 {
        return Err(Error::InvalidInput("MAE over zero samples".into()));
    }
    if index >= predictions.ncols() {
        return Err(Error::InvalidInput(format!("measurement index {index} out of range")));
    }
    let p = predictions.index_axis(Axis(1), index);
    let t = targets.index_axis(Axis(1), index);
    let sum: f64 = p.iter().zip(t.iter()).map(|(a, b)| (a - b).abs()).sum();
    Ok(sum / predictions.nrows() as f64)
}

/// Anything that maps dataset records to N×16 predictions.
pub trait Predictor {
    fn name(&self) -> String;

    fn predict_records(&self, root: &Path, records: &[&SampleRecord]) -> Result<Array2<f64>>;
}

impl Predictor for Model {
    fn name(&self) -> String {
        self.backbone_config.name.to_string()
    }

    fn predict_records(&self, root: &Path, records: &[&SampleRecord]) -> Result<Array2<f64>> {
        let samples = Samples::from_records(self, root, records)?;
        self.predict_features(&samples.features)
    }
}

/// Returns the ground truth; an evaluation stub.
#[derive(Debug, Clone, Copy, Default)]
pub struct PerfectPredictor;

impl Predictor for PerfectPredictor {
    fn name(&self) -> String {
        "perfect".into()
    }

    fn predict_records(&self, _root: &Path, records: &[&SampleRecord]) -> Result<Array2<f64>> {
        Ok(targets_of(records))
    }
}

/// Predicts the same vector for every sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantPredictor {
    pub label: String,
    pub values: [f64; OUTPUT_DIM],
}

impl ConstantPredictor {
    /// Mean of the training targets.
    pub fn train_mean(manifest: &DatasetManifest) -> Result<Self> {
        let train = manifest.records_in(Split::Train);
        if train.is_empty() {
            return Err(Error::State("train split is empty".into()));
        }
        let mean = targets_of(&train).mean_axis(Axis(0)).expect("nonempty");
        let mut values = [0.0; OUTPUT_DIM];
        values.iter_mut().zip(mean.iter()).for_each(|(v, m)| *v = *m);
        Ok(Self { label: "train-mean".into(), values })
    }
}

impl Predictor for ConstantPredictor {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn predict_records(&self, _root: &Path, records: &[&SampleRecord]) -> Result<Array2<f64>> {
        Ok(Array2::from_shape_fn((records.len(), OUTPUT_DIM), |(_, k)| self.values[k]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub measurement: String,
    pub label: String,
    pub male: f64,
    pub female: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub n_male: usize,
    pub n_female: usize,
    pub rows: Vec<EvalRow>,
    /// Average of `rows` per column.
    pub mean: EvalRow,
}

/// Display label. The shoulder-to-wrist distance is reported as arm length.
pub fn measurement_label(name: &str) -> String {
    if name == "shoulder_to_wrist" {
        return "Arm length".into();
    }
    let spaced = name.replace('_', " ");
    let mut chars = spaced.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("measurement,male,female,total\n");
        for r in self.rows.iter().chain(std::iter::once(&self.mean)) {
            let _ = writeln!(s, "{},{},{},{}", r.measurement, r.male, r.female, r.total);
        }
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "Mean Absolute Error (cm), model {}", self.model);
        let _ = writeln!(s, "test samples: {} male, {} female", self.n_male, self.n_female);
        let _ = writeln!(s, "{:<24}{:>10}{:>12}{:>11}", "Measurement", "Male MAE", "Female MAE", "Total MAE");
        for r in &self.rows {
            let _ = writeln!(s, "{:<24}{:>10.3}{:>12.3}{:>11.3}", r.label, r.male, r.female, r.total);
        }
        let m = &self.mean;
        let _ = writeln!(s, "{:<24}{:>10.3}{:>12.3}{:>11.3}", m.label, m.male, m.female, m.total);
        s
    }
}

/// MAE on the male, female and full test sets for each of `reported`.
pub fn evaluate_model<P: Predictor + ?Sized>(
    predictor: &P,
    manifest: &DatasetManifest,
    root: &Path,
    reported: &[&str],
) -> Result<EvalReport> {
    if reported.is_empty() {
        return Err(Error::InvalidInput("no measurements to report".into()));
    }
    let indices = reported
        .iter()
        .map(|n| measurement_index(n).ok_or_else(|| Error::InvalidInput(format!("unknown measurement `{n}`"))))
        .collect::<Result<Vec<_>>>()?;
    let (male_ids, female_ids) = test_subsets(manifest)?;
    for (sex, ids) in [(Sex::Male, &male_ids), (Sex::Female, &female_ids)] {
        if ids.is_empty() {
            return Err(Error::State(format!("test subset `{sex}` is empty")));
        }
    }

    let records = |ids: &[String]| -> Vec<&SampleRecord> {
        ids.iter().filter_map(|id| manifest.record(id)).collect()
    };
    let (male, female) = (records(&male_ids), records(&female_ids));
    let all: Vec<&SampleRecord> = male.iter().chain(female.iter()).copied().collect();
    let pred = predictor.predict_records(root, &all)?;
    let truth = targets_of(&all);
    if pred.dim() != truth.dim() {
        return Err(Error::InvalidInput(format!("predictor returned shape {:?}", pred.dim())));
    }
    let nm = male.len();
    let (pm, pf) = (pred.slice(ndarray::s![..nm, ..]).to_owned(), pred.slice(ndarray::s![nm.., ..]).to_owned());
    let (tm, tf) = (truth.slice(ndarray::s![..nm, ..]).to_owned(), truth.slice(ndarray::s![nm.., ..]).to_owned());

    let rows = reported
        .iter()
        .zip(&indices)
        .map(|(name, &k)| {
            Ok(EvalRow {
                measurement: name.to_string(),
                label: measurement_label(name),
                male: compute_mae(&pm, &tm, k)?,
                female: compute_mae(&pf, &tf, k)?,
                total: compute_mae(&pred, &truth, k)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = rows.len() as f64;
    let mean = EvalRow {
        measurement: "mean".into(),
        label: "Mean MAE".into(),
        male: rows.iter().map(|r| r.male).sum::<f64>() / n,
        female: rows.iter().map(|r| r.female).sum::<f64>() / n,
        total: rows.iter().map(|r| r.total).sum::<f64>() / n,
    };
    Ok(EvalReport {
        model: predictor.name(),
        n_male: male.len(),
        n_female: female.len(),
        rows,
        mean,
    })
}

/// The five measurements shown in the report, in table order.
pub fn reported_measurements() -> [&'static str; 5] {
    CANONICAL
}

const _: () = assert!(MEASUREMENT_NAMES.len() == OUTPUT_DIM);
