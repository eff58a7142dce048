//! Frozen convolutional feature extractors.

use ndarray::{Array1, Array3, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::imaging::{ModelInput, INPUT_SIZE};

/// A frozen feature extractor: maps one model input to a flat feature vector.
pub trait FeatureExtractor: Send + Sync {
    fn feature_dim(&self) -> usize;

    fn extract(&self, input: &ModelInput) -> Vec<f32>;

    /// Named parameter tensors, flattened.
    fn parameters(&self) -> Vec<(String, Vec<f32>)>;
}

/// 3×3 same-padded convolution, ReLU, 2×2 average pooling.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock {
    /// (out, in, 3, 3)
    pub weight: Array4<f32>,
    pub bias: Array1<f32>,
}

impl ConvBlock {
    fn random(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = (6.0 / (inputs * 9) as f32).sqrt();
        let weight = Array4::from_shape_fn((outputs, inputs, 3, 3), |_| rng.gen_range(-bound..bound));
        let bias = Array1::from_shape_fn(outputs, |_| rng.gen_range(-0.05..0.05));
        Self { weight, bias }
    }

    /// `x` is (channels, h, w); returns (out, h/2, w/2).
    pub fn forward(&self, x: &Array3<f32>) -> Array3<f32> {
        let (cin, h, w) = x.dim();
        let cout = self.weight.dim().0;
        let (ph, pw) = (h + 2, w + 2);
        let mut padded = vec![0f32; cin * ph * pw];
        for c in 0..cin {
            for r in 0..h {
                for col in 0..w {
                    padded[c * ph * pw + (r + 1) * pw + col + 1] = x[[c, r, col]];
                }
            }
        }

        let mut conv = vec![0f32; h * w];
        let mut out = Array3::<f32>::zeros((cout, h / 2, w / 2));
        for o in 0..cout {
            conv.iter_mut().for_each(|v| *v = self.bias[o]);
            for c in 0..cin {
                let plane = &padded[c * ph * pw..(c + 1) * ph * pw];
                for ky in 0..3 {
                    for kx in 0..3 {
                        let k = self.weight[[o, c, ky, kx]];
                        for r in 0..h {
                            let src = &plane[(r + ky) * pw + kx..(r + ky) * pw + kx + w];
                            let dst = &mut conv[r * w..(r + 1) * w];
                            for (d, s) in dst.iter_mut().zip(src) {
                                *d += k * s;
                            }
                        }
                    }
                }
            }
            for r in 0..h / 2 {
                for col in 0..w / 2 {
                    let relu = |i: usize| conv[i].max(0.0);
                    out[[o, r, col]] = 0.25
                        * (relu(2 * r * w + 2 * col)
                            + relu(2 * r * w + 2 * col + 1)
                            + relu((2 * r + 1) * w + 2 * col)
                            + relu((2 * r + 1) * w + 2 * col + 1));
                }
            }
        }
        out
    }
}

/// Small randomly initialised convolutional base: three conv blocks, then flatten.
#[derive(Debug, Clone, PartialEq)]
pub struct TinyConvNet {
    pub blocks: Vec<ConvBlock>,
}

pub const TINY_CHANNELS: [usize; 3] = [8, 8, 8];

impl TinyConvNet {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut inputs = 3;
        let blocks = TINY_CHANNELS
            .iter()
            .map(|&out| {
                let b = ConvBlock::random(inputs, out, &mut rng);
                inputs = out;
                b
            })
            .collect();
        Self { blocks }
    }

    pub fn from_blocks(blocks: Vec<ConvBlock>) -> Self {
        Self { blocks }
    }

    pub fn output_side() -> usize {
        INPUT_SIZE >> TINY_CHANNELS.len()
    }
}

impl FeatureExtractor for TinyConvNet {
    fn feature_dim(&self) -> usize {
        let side = Self::output_side();
        self.blocks.last().map_or(0, |b| b.weight.dim().0) * side * side
    }

    fn extract(&self, input: &ModelInput) -> Vec<f32> {
        // HWC -> CHW
        let mut x = input.data().view().permuted_axes([2, 0, 1]).to_owned();
        for block in &self.blocks {
            x = block.forward(&x);
        }
        x.iter().copied().collect()
    }

    fn parameters(&self) -> Vec<(String, Vec<f32>)> {
        self.blocks
            .iter()
            .enumerate()
            .flat_map(|(i, b)| {
                [
                    (format!("backbone.conv{i}.weight"), b.weight.iter().copied().collect()),
                    (format!("backbone.conv{i}.bias"), b.bias.to_vec()),
                ]
            })
            .collect()
    }
}
