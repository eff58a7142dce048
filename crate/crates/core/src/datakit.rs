//! Dataset generation, the on-disk manifest, and the sex-stratified split.
//!
//! Layout of a dataset root:
//!
//! ```text
//! manifest.header.json     generation config, digest, split assignment
//! manifest.records.jsonl   one sample per line
//! images/<sex>/<id>.png    8-bit grayscale renders
//! provenance.json
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bodygen::{build_body, sample_body_spec, GenerationRanges, Sex};
use crate::error::{Error, Result};
use crate::imaging::{encode_png, render_silhouette, RenderConfig};
use crate::measure::{measure_all, MeasureConfig, MeasurementSet};

pub const HEADER_FILE: &str = "manifest.header.json";
pub const RECORDS_FILE: &str = "manifest.records.jsonl";
pub const PROVENANCE_FILE: &str = "provenance.json";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: String,
    pub sex: Sex,
    /// Relative to the dataset root.
    pub image_path: String,
    pub measurements: MeasurementSet,
    pub spec_seed: u64,
}

/// Everything that determines the generated samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub ranges: GenerationRanges,
    pub render: RenderConfig,
    pub resolution: usize,
    pub measure: MeasureConfig,
    /// Also write each body as `meshes/<sex>/<id>.obj`.
    #[serde(default)]
    pub export_obj: bool,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            ranges: GenerationRanges::default(),
            render: RenderConfig::default(),
            resolution: 128,
            export_obj: false,
            measure: MeasureConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationInfo {
    pub config: GenerationConfig,
    pub n_per_sex: usize,
    pub master_seed: u64,
}

impl GenerationInfo {
    /// SHA-256 of the canonical JSON encoding, hex.
    pub fn digest(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("serialisable").as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub records: Vec<SampleRecord>,
    pub split: BTreeMap<String, Split>,
    pub generation: GenerationInfo,
    pub config_digest: String,
    pub shuffle_seed: Option<u64>,
    pub fractions: Option<[f64; 3]>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config_digest: String,
    generation: GenerationInfo,
    shuffle_seed: Option<u64>,
    fractions: Option<[f64; 3]>,
    split: BTreeMap<String, Split>,
}

#[derive(Deserialize)]
struct RecordLine {
    sample_id: String,
    sex: Sex,
    image_path: String,
    spec_seed: u64,
    measurements: MeasurementSet,
}

impl DatasetManifest {
    pub fn is_split(&self) -> bool {
        !self.records.is_empty() && self.records.iter().all(|r| self.split.contains_key(&r.sample_id))
    }

    pub fn record(&self, id: &str) -> Option<&SampleRecord> {
        self.records.iter().find(|r| r.sample_id == id)
    }

    pub fn records_in(&self, split: Split) -> Vec<&SampleRecord> {
        self.records
            .iter()
            .filter(|r| self.split.get(&r.sample_id) == Some(&split))
            .collect()
    }

    /// Writes header and records into `root`.
    pub fn write(&self, root: &Path) -> Result<()> {
        let header = Header {
            format_version: FORMAT_VERSION,
            config_digest: self.config_digest.clone(),
            generation: self.generation.clone(),
            shuffle_seed: self.shuffle_seed,
            fractions: self.fractions,
            split: self.split.clone(),
        };
        let text = serde_json::to_string_pretty(&header).expect("serialisable") + "\n";
        write_atomic(&root.join(HEADER_FILE), text.as_bytes())?;

        let mut lines = String::new();
        for r in &self.records {
            lines.push_str(&format!(
                "{{\"sample_id\":{},\"sex\":\"{}\",\"image_path\":{},\"spec_seed\":{},\"measurements\":{}}}\n",
                serde_json::to_string(&r.sample_id).expect("string"),
                r.sex,
                serde_json::to_string(&r.image_path).expect("string"),
                r.spec_seed,
                r.measurements.to_fixed_json(),
            ));
        }
        write_atomic(&root.join(RECORDS_FILE), lines.as_bytes())
    }

    pub fn read(root: &Path) -> Result<Self> {
        let header_path = root.join(HEADER_FILE);
        let text = fs::read_to_string(&header_path).map_err(|e| Error::io(&header_path, e))?;
        let header: Header = serde_json::from_str(&text)
            .map_err(|e| Error::Decode(format!("{}: {e}", header_path.display())))?;
        if header.format_version != FORMAT_VERSION {
            return Err(Error::Decode(format!(
                "unsupported manifest version {}",
                header.format_version
            )));
        }

        let records_path = root.join(RECORDS_FILE);
        let file = fs::File::open(&records_path).map_err(|e| Error::io(&records_path, e))?;
        let mut records = Vec::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(&records_path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let r: RecordLine = serde_json::from_str(&line)
                .map_err(|e| Error::Decode(format!("{}:{}: {e}", records_path.display(), n + 1)))?;
            records.push(SampleRecord {
                sample_id: r.sample_id,
                sex: r.sex,
                image_path: r.image_path,
                measurements: r.measurements,
                spec_seed: r.spec_seed,
            });
        }
        Ok(Self {
            records,
            split: header.split,
            generation: header.generation,
            config_digest: header.config_digest,
            shuffle_seed: header.shuffle_seed,
            fractions: header.fractions,
        })
    }
}

/// Per-sample seed derived from `(master_seed, sex, index)`.
pub fn sample_seed(master_seed: u64, sex: Sex, index: usize) -> u64 {
    let digest = Sha256::digest(format!("{master_seed}/{sex}/{index}").as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

pub fn sample_id(sex: Sex, index: usize) -> String {
    format!("{sex}_{index:06}")
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.partial",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Provenance record dropped into every artifact directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub artifact: String,
    pub tool_version: String,
    pub config_digest: String,
    pub seed: u64,
    #[serde(default)]
    pub inputs: BTreeMap<String, String>,
}

impl Provenance {
    pub fn new(artifact: &str, config_digest: String, seed: u64) -> Self {
        Self {
            artifact: artifact.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_digest,
            seed,
            inputs: BTreeMap::new(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("serialisable") + "\n";
        write_atomic(&dir.join(PROVENANCE_FILE), text.as_bytes())
    }
}

/// Generated but not yet written sample.
struct Rendered {
    record: SampleRecord,
    png: Vec<u8>,
    obj: Option<String>,
}

fn render_sample(cfg: &GenerationConfig, master_seed: u64, sex: Sex, index: usize) -> Result<Rendered> {
    let seed = sample_seed(master_seed, sex, index);
    let spec = sample_body_spec(sex, seed, &cfg.ranges)?;
    let body = build_body(&spec, cfg.resolution)?;
    let measurements = measure_all(&body, &cfg.measure)?.quantized();
    let image = render_silhouette(&body.mesh, &cfg.render)?;
    let id = sample_id(sex, index);
    Ok(Rendered {
        record: SampleRecord {
            image_path: format!("images/{sex}/{id}.png"),
            sample_id: id,
            sex,
            measurements,
            spec_seed: seed,
        },
        png: encode_png(&image)?,
        obj: cfg.export_obj.then(|| body.mesh.to_obj()),
    })
}

/// Generates `n_per_sex` bodies of each sex into `out_dir` and writes the manifest.
///
/// The tree is assembled in a sibling `.partial` directory and renamed into
/// place once complete. An existing `out_dir` is replaced only if it holds a
/// previous dataset.
pub fn generate_dataset(
    n_per_sex: usize,
    cfg: &GenerationConfig,
    out_dir: &Path,
    master_seed: u64,
) -> Result<DatasetManifest> {
    if n_per_sex == 0 {
        return Err(Error::Config("n_per_sex must be at least 1".into()));
    }
    if cfg.resolution < crate::bodygen::MIN_RESOLUTION {
        return Err(Error::Config(format!("resolution {} below 16", cfg.resolution)));
    }
    cfg.ranges.validate()?;
    cfg.render.validate()?;

    let jobs: Vec<(Sex, usize)> = Sex::ALL
        .iter()
        .flat_map(|&s| (0..n_per_sex).map(move |i| (s, i)))
        .collect();
    let rendered: Vec<Rendered> = jobs
        .par_iter()
        .map(|&(sex, i)| render_sample(cfg, master_seed, sex, i))
        .collect::<Result<_>>()?;

    let staging = staging_dir(out_dir);
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
    }
    for sex in Sex::ALL {
        let d = staging.join("images").join(sex.as_str());
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        if cfg.export_obj {
            let m = staging.join("meshes").join(sex.as_str());
            fs::create_dir_all(&m).map_err(|e| Error::io(&m, e))?;
        }
    }
    for r in &rendered {
        let path = staging.join(&r.record.image_path);
        fs::write(&path, &r.png).map_err(|e| Error::io(&path, e))?;
        if let Some(obj) = &r.obj {
            let path = staging.join(format!("meshes/{}/{}.obj", r.record.sex, r.record.sample_id));
            fs::write(&path, obj).map_err(|e| Error::io(&path, e))?;
        }
    }

    let generation = GenerationInfo {
        config: cfg.clone(),
        n_per_sex,
        master_seed,
    };
    let manifest = DatasetManifest {
        records: rendered.into_iter().map(|r| r.record).collect(),
        split: BTreeMap::new(),
        config_digest: generation.digest(),
        generation,
        shuffle_seed: None,
        fractions: None,
    };
    manifest.write(&staging)?;
    Provenance::new("dataset", manifest.config_digest.clone(), master_seed).write(&staging)?;
    promote(&staging, out_dir)?;
    Ok(manifest)
}

fn staging_dir(out_dir: &Path) -> PathBuf {
    let name = out_dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    out_dir.with_file_name(format!(".{name}.partial"))
}

/// Renames `staging` to `target`, replacing a previous dataset at `target`.
fn promote(staging: &Path, target: &Path) -> Result<()> {
    if target.exists() {
        let is_empty = fs::read_dir(target)
            .map_err(|e| Error::io(target, e))?
            .next()
            .is_none();
        if !is_empty && !target.join(HEADER_FILE).exists() {
            return Err(Error::Config(format!(
                "refusing to overwrite non-dataset directory {}",
                target.display()
            )));
        }
        fs::remove_dir_all(target).map_err(|e| Error::io(target, e))?;
    }
    if let Some(parent) = target.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::rename(staging, target).map_err(|e| Error::io(target, e))
}

pub const DEFAULT_FRACTIONS: [f64; 3] = [0.70, 0.15, 0.15];

/// Per-split counts for `n` samples of one sex; rounding remainder goes to train.
pub fn split_counts(n: usize, fractions: [f64; 3]) -> [usize; 3] {
    let take = |f: f64| ((n as f64) * f + 1e-9).floor() as usize;
    let val = take(fractions[1]);
    let test = take(fractions[2]);
    [n - val - test, val, test]
}

/// Assigns train/val/test labels, shuffling each sex separately with `seed`
/// so every split keeps the sex balance of the whole set.
pub fn split_dataset(manifest: &DatasetManifest, fractions: [f64; 3], seed: u64) -> Result<DatasetManifest> {
    let sum: f64 = fractions.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
        return Err(Error::Config(format!("split fractions {fractions:?} must be in [0, 1] and sum to 1")));
    }
    let mut split = BTreeMap::new();
    for (k, sex) in Sex::ALL.into_iter().enumerate() {
        let mut ids: Vec<&str> = manifest
            .records
            .iter()
            .filter(|r| r.sex == sex)
            .map(|r| r.sample_id.as_str())
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64 + 1);
        ids.shuffle(&mut rng);
        let [train, val, _] = split_counts(ids.len(), fractions);
        for (i, id) in ids.into_iter().enumerate() {
            let label = if i < train {
                Split::Train
            } else if i < train + val {
                Split::Val
            } else {
                Split::Test
            };
            split.insert(id.to_string(), label);
        }
    }
    Ok(DatasetManifest {
        split,
        shuffle_seed: Some(seed),
        fractions: Some(fractions),
        ..manifest.clone()
    })
}

/// Test-set ids partitioned by sex, `(male, female)`, in record order.
pub fn test_subsets(manifest: &DatasetManifest) -> Result<(Vec<String>, Vec<String>)> {
    if !manifest.is_split() {
        return Err(Error::State("manifest has no split assignment".into()));
    }
    let mut male = Vec::new();
    let mut female = Vec::new();
    for r in manifest.records_in(Split::Test) {
        match r.sex {
            Sex::Male => male.push(r.sample_id.clone()),
            Sex::Female => female.push(r.sample_id.clone()),
        }
    }
    Ok((male, female))
}
