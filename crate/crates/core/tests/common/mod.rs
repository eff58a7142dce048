#![allow(dead_code)]

use std::collections::BTreeMap;

use anthro_core::bodygen::Sex;
use anthro_core::datakit::{sample_id, DatasetManifest, GenerationConfig, GenerationInfo, SampleRecord};
use anthro_core::measure::MeasurementSet;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Manifest with random positive measurements and no images on disk.
pub fn synthetic_manifest(n_male: usize, n_female: usize, seed: u64) -> DatasetManifest {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    for (sex, n) in [(Sex::Male, n_male), (Sex::Female, n_female)] {
        for i in 0..n {
            let v: Vec<f64> = (0..16).map(|_| rng.gen_range(10.0..120.0)).collect();
            records.push(SampleRecord {
                sample_id: sample_id(sex, i),
                sex,
                image_path: format!("images/{sex}/{}.png", sample_id(sex, i)),
                measurements: MeasurementSet::from_vector(&v).unwrap(),
                spec_seed: i as u64,
            });
        }
    }
    let generation = GenerationInfo {
        config: GenerationConfig::default(),
        n_per_sex: n_male.max(n_female),
        master_seed: seed,
    };
    DatasetManifest {
        records,
        split: BTreeMap::new(),
        config_digest: generation.digest(),
        generation,
        shuffle_seed: None,
        fractions: None,
    }
}

/// Every regular file under `root`, relative path to bytes.
pub fn tree(root: &std::path::Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}
