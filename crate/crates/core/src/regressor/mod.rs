//! Frozen-backbone regression model: configuration, construction, inference,
//! training and evaluation.

pub mod backbone;
pub mod checkpoint;
pub mod eval;
pub mod head;
pub mod train;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use image::GrayImage;
use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::imaging::{to_model_input, ModelInput, Normalization, INPUT_SIZE};
use crate::measure::MEASUREMENT_NAMES;
use crate::{Error, Result};

pub use backbone::{FeatureExtractor, TinyConvNet};
pub use eval::{compute_mae, evaluate_model, EvalReport, EvalRow, Predictor};
pub use head::{Activation, Head};
pub use train::{train_model, train_with_validator, EarlyStopping, History, Samples};

pub const OUTPUT_DIM: usize = MEASUREMENT_NAMES.len();
pub const HIDDEN_WIDTHS: [usize; 3] = [1024, 512, 128];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneName {
    Vgg19,
    Resnet50,
    Densenet121,
    TinyTest,
}

impl BackboneName {
    pub const ALL: [BackboneName; 4] = [
        BackboneName::Vgg19,
        BackboneName::Resnet50,
        BackboneName::Densenet121,
        BackboneName::TinyTest,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BackboneName::Vgg19 => "vgg19",
            BackboneName::Resnet50 => "resnet50",
            BackboneName::Densenet121 => "densenet121",
            BackboneName::TinyTest => "tiny_test",
        }
    }

    /// Flattened feature size for a 224×224 input.
    pub fn feature_dim(self) -> usize {
        match self {
            BackboneName::Vgg19 => 7 * 7 * 512,
            BackboneName::Resnet50 => 7 * 7 * 2048,
            BackboneName::Densenet121 => 7 * 7 * 1024,
            BackboneName::TinyTest => {
                backbone::TINY_CHANNELS[backbone::TINY_CHANNELS.len() - 1]
                    * TinyConvNet::output_side()
                    * TinyConvNet::output_side()
            }
        }
    }
}

impl fmt::Display for BackboneName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BackboneName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|b| b.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown backbone `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub name: BackboneName,
    pub normalization: Normalization,
    pub frozen: bool,
    pub feature_dim: usize,
    /// Initialisation seed for backbones built locally.
    pub seed: u64,
}

impl BackboneConfig {
    pub fn new(name: BackboneName) -> Self {
        Self {
            name,
            normalization: Normalization::IMAGENET,
            frozen: true,
            feature_dim: name.feature_dim(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.frozen {
            return Err(Error::Config("backbone must be frozen".into()));
        }
        if self.feature_dim == 0 {
            return Err(Error::Config("backbone feature dimension must be positive".into()));
        }
        if self.feature_dim != self.name.feature_dim() {
            return Err(Error::Config(format!(
                "{} produces {} features, config says {}",
                self.name,
                self.name.feature_dim(),
                self.feature_dim
            )));
        }
        self.normalization.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub hidden_widths: Vec<usize>,
    pub batch_norm: bool,
    pub activation: Activation,
    pub output_dim: usize,
    pub seed: u64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            hidden_widths: HIDDEN_WIDTHS.to_vec(),
            batch_norm: true,
            activation: Activation::Relu,
            output_dim: OUTPUT_DIM,
            seed: 0,
        }
    }
}

impl HeadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_widths != HIDDEN_WIDTHS {
            return Err(Error::Config(format!(
                "hidden widths must be {HIDDEN_WIDTHS:?}, got {:?}",
                self.hidden_widths
            )));
        }
        if !self.batch_norm {
            return Err(Error::Config("every hidden layer is followed by batch normalisation".into()));
        }
        if self.output_dim != OUTPUT_DIM {
            return Err(Error::Config(format!("output dimension must be {OUTPUT_DIM}, got {}", self.output_dim)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Start the output bias at the mean training target.
    pub init_output_bias: bool,
}

pub const MAX_EPOCHS: usize = 100;

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            max_epochs: MAX_EPOCHS,
            batch_size: 350,
            patience: 10,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
            init_output_bias: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if self.max_epochs == 0 || self.max_epochs > MAX_EPOCHS {
            return Err(Error::Config(format!("max epochs must be in 1..={MAX_EPOCHS}, got {}", self.max_epochs)));
        }
        let unit = |v: f64| (0.0..1.0).contains(&v);
        if !unit(self.beta1) || !unit(self.beta2) || !(self.epsilon > 0.0) {
            return Err(Error::Config("Adam betas must lie in [0, 1) and epsilon be positive".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> head::AdamParams {
        head::AdamParams {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

/// Frozen feature extractor plus trainable head.
#[derive(Clone)]
pub struct Model {
    pub backbone_config: BackboneConfig,
    pub head_config: HeadConfig,
    backbone: Arc<dyn FeatureExtractor>,
    pub head: Head,
}

impl fmt::Debug for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Model")
            .field("backbone", &self.backbone_config.name)
            .field("head", &self.head_config)
            .finish()
    }
}

/// Builds the model. Only `tiny_test` can be constructed locally; the other
/// backbones need pretrained weights supplied through [`Model::from_parts`].
pub fn build_model(backbone: &BackboneConfig, head: &HeadConfig) -> Result<Model> {
    backbone.validate()?;
    head.validate()?;
    let extractor: Arc<dyn FeatureExtractor> = match backbone.name {
        BackboneName::TinyTest => Arc::new(TinyConvNet::new(backbone.seed)),
        other => {
            return Err(Error::Config(format!(
                "pretrained weights for `{other}` are not bundled; load them with Model::from_parts"
            )))
        }
    };
    let net = Head::new(
        backbone.feature_dim,
        &head.hidden_widths,
        head.output_dim,
        head.batch_norm,
        head.activation,
        head.seed,
    );
    Model::from_parts(backbone.clone(), head.clone(), extractor, net)
}

impl Model {
    /// Assembles a model from an arbitrary extractor and head. Dimensions must agree.
    pub fn from_parts(
        backbone_config: BackboneConfig,
        head_config: HeadConfig,
        backbone: Arc<dyn FeatureExtractor>,
        head: Head,
    ) -> Result<Self> {
        if !backbone_config.frozen {
            return Err(Error::Config("backbone must be frozen".into()));
        }
        if backbone.feature_dim() != head.input_dim() {
            return Err(Error::Config(format!(
                "backbone yields {} features, head expects {}",
                backbone.feature_dim(),
                head.input_dim()
            )));
        }
        if head.output_dim() != head_config.output_dim {
            return Err(Error::Config("head output does not match its config".into()));
        }
        Ok(Self { backbone_config, head_config, backbone, head })
    }

    pub fn output_dim(&self) -> usize {
        self.head.output_dim()
    }

    pub fn backbone(&self) -> &dyn FeatureExtractor {
        self.backbone.as_ref()
    }

    pub fn backbone_parameters(&self) -> Vec<(String, Vec<f32>)> {
        self.backbone.parameters()
    }

    /// Names of the parameters the optimiser updates.
    pub fn trainable_parameters(&self) -> Vec<String> {
        self.head.trainable_names()
    }

    /// Preprocesses a grayscale render with this model's normalisation.
    pub fn prepare(&self, image: &GrayImage) -> Result<ModelInput> {
        to_model_input(image, &self.backbone_config.normalization)
    }

    /// Backbone features, one row per input.
    pub fn features(&self, inputs: &[ModelInput]) -> Array2<f64> {
        let dim = self.backbone.feature_dim();
        let rows: Vec<Vec<f32>> = inputs.par_iter().map(|x| self.backbone.extract(x)).collect();
        let mut out = Array2::zeros((inputs.len(), dim));
        for (mut row, f) in out.rows_mut().into_iter().zip(rows) {
            row.iter_mut().zip(f).for_each(|(d, s)| *d = s as f64);
        }
        out
    }

    /// Inference on precomputed features.
    pub fn predict_features(&self, features: &Array2<f64>) -> Result<Array2<f64>> {
        if features.ncols() != self.head.input_dim() {
            return Err(Error::InvalidInput(format!(
                "expected {} features per row, got {}",
                self.head.input_dim(),
                features.ncols()
            )));
        }
        if features.nrows() == 0 {
            return Ok(Array2::zeros((0, self.output_dim())));
        }
        Ok(self.head.predict(features))
    }

    /// N inputs to an N×16 array of predictions in cm.
    pub fn predict_batch(&self, inputs: &[ModelInput]) -> Result<Array2<f64>> {
        for x in inputs {
            if x.data().shape() != [INPUT_SIZE, INPUT_SIZE, 3] {
                return Err(Error::InvalidInput(format!("bad input shape {:?}", x.data().shape())));
            }
        }
        self.predict_features(&self.features(inputs))
    }
}

/// The training loss: mean absolute error over every output.
pub fn loss(predictions: &Array2<f64>, targets: &Array2<f64>) -> Result<f64> {
    if predictions.dim() != targets.dim() || predictions.is_empty() {
        return Err(Error::InvalidInput(format!(
            "loss needs equal nonempty shapes, got {:?} and {:?}",
            predictions.dim(),
            targets.dim()
        )));
    }
    Ok(head::mae_loss(predictions, targets).0)
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builds_tiny_model_with_standard_head() {
        let m = build_model(&BackboneConfig::new(BackboneName::TinyTest), &HeadConfig::default()).unwrap();
        let widths: Vec<usize> = m.head.hidden.iter().map(|l| l.dense.weight.ncols()).collect();
        assert_eq!(widths, HIDDEN_WIDTHS);
        let out = m.predict_batch(&testutil::random_inputs(4, 1)).unwrap();
        assert_eq!(out.dim(), (4, 16));
        assert!(m.trainable_parameters().iter().all(|n| n.starts_with("head.")));
        assert!(m.backbone_parameters().iter().all(|(n, _)| n.starts_with("backbone.")));
    }

    #[test]
    fn unknown_or_unbundled_backbones_are_config_errors() {
        assert!(matches!("alexnet".parse::<BackboneName>(), Err(Error::Config(_))));
        for name in [BackboneName::Vgg19, BackboneName::Resnet50, BackboneName::Densenet121] {
            let err = build_model(&BackboneConfig::new(name), &HeadConfig::default()).unwrap_err();
            assert!(matches!(err, Error::Config(_)));
        }
        assert_eq!("densenet121".parse::<BackboneName>().unwrap().feature_dim(), 50176);
    }

    #[test]
    fn config_validation() {
        let mut bb = BackboneConfig::new(BackboneName::TinyTest);
        bb.frozen = false;
        assert!(bb.validate().is_err());
        let hc = HeadConfig { hidden_widths: vec![1024, 512], ..HeadConfig::default() };
        assert!(hc.validate().is_err());
        for bad in [
            TrainConfig { patience: 0, ..TrainConfig::default() },
            TrainConfig { batch_size: 0, ..TrainConfig::default() },
            TrainConfig { learning_rate: 0.0, ..TrainConfig::default() },
            TrainConfig { max_epochs: 101, ..TrainConfig::default() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn inference_is_deterministic_and_batch_independent() {
        let m = testutil::small_model(&[32, 16, 8], 3);
        let inputs = testutil::random_inputs(8, 2);
        let a = m.predict_batch(&inputs).unwrap();
        assert_eq!(a, m.predict_batch(&inputs).unwrap());
        let one = m.predict_batch(&inputs[5..6]).unwrap();
        for k in 0..16 {
            let (x, y) = (a[[5, k]], one[[0, k]]);
            assert!((x - y).abs() <= 1e-5 * x.abs().max(1.0));
        }
        assert_eq!(m.predict_batch(&[]).unwrap().dim(), (0, 16));
    }

    #[test]
    fn feature_width_mismatch_is_invalid_input() {
        let m = testutil::small_model(&[8], 1);
        assert!(matches!(m.predict_features(&Array2::zeros((2, 5))), Err(Error::InvalidInput(_))));
    }
}
