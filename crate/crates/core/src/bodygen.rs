//! Procedural T-pose bodies built from lofted superellipse cross-sections.
//!
//! Every girth parameter is realised as a ring whose polygon perimeter equals
//! the requested value, and every joint is placed analytically from the segment
//! lengths, so the measurements of a generated body are known exactly.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{closed_perimeter, distance3, Point2, Point3, TriMesh};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Male,
    Female,
}

impl Sex {
    pub const ALL: [Sex; 2] = [Sex::Male, Sex::Female];

    pub fn as_str(self) -> &'static str {
        match self {
            Sex::Male => "male",
            Sex::Female => "female",
        }
    }
}

impl fmt::Display for Sex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Sex {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "male" | "m" => Ok(Sex::Male),
            "female" | "f" => Ok(Sex::Female),
            other => Err(Error::InvalidInput(format!("unknown sex `{other}`"))),
        }
    }
}

/// Girths that are generated but not among the five reported measurements.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuxGirths {
    pub head: f64,
    pub neck: f64,
    pub chest: f64,
    pub thigh: f64,
    pub calf: f64,
    pub bicep: f64,
    pub forearm: f64,
    pub wrist: f64,
    pub ankle: f64,
}

impl AuxGirths {
    pub fn iter(&self) -> impl Iterator<Item = (&'static str, f64)> {
        [
            ("head", self.head),
            ("neck", self.neck),
            ("chest", self.chest),
            ("thigh", self.thigh),
            ("calf", self.calf),
            ("bicep", self.bicep),
            ("forearm", self.forearm),
            ("wrist", self.wrist),
            ("ankle", self.ankle),
        ]
        .into_iter()
    }
}

/// Generative parameters of one synthetic person. Lengths and girths in cm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodySpec {
    pub sex: Sex,
    pub stature: f64,
    /// Neck joint to pelvis joint.
    pub torso_len: f64,
    /// Pelvis joint to ankle joint.
    pub leg_len: f64,
    /// Shoulder joint to wrist joint.
    pub arm_len: f64,
    pub waist_circ: f64,
    pub pelvis_circ: f64,
    pub aux_girths: AuxGirths,
    /// Distance between the shoulder joints.
    pub shoulder_width: f64,
    pub seed: u64,
}

/// Names of the generation parameters, in sampling order.
pub const PARAM_NAMES: [&str; 16] = [
    "stature",
    "torso_len",
    "leg_len",
    "arm_len",
    "waist_circ",
    "pelvis_circ",
    "shoulder_width",
    "head_circ",
    "neck_circ",
    "chest_circ",
    "thigh_circ",
    "calf_circ",
    "bicep_circ",
    "forearm_circ",
    "wrist_circ",
    "ankle_circ",
];

impl BodySpec {
    /// Value of a generation parameter by its config name.
    pub fn param(&self, name: &str) -> Option<f64> {
        let g = &self.aux_girths;
        Some(match name {
            "stature" => self.stature,
            "torso_len" => self.torso_len,
            "leg_len" => self.leg_len,
            "arm_len" => self.arm_len,
            "waist_circ" => self.waist_circ,
            "pelvis_circ" => self.pelvis_circ,
            "shoulder_width" => self.shoulder_width,
            "head_circ" => g.head,
            "neck_circ" => g.neck,
            "chest_circ" => g.chest,
            "thigh_circ" => g.thigh,
            "calf_circ" => g.calf,
            "bicep_circ" => g.bicep,
            "forearm_circ" => g.forearm,
            "wrist_circ" => g.wrist,
            "ankle_circ" => g.ankle,
            _ => return None,
        })
    }

    fn from_params(sex: Sex, seed: u64, v: &[f64; 16]) -> Self {
        BodySpec {
            sex,
            stature: v[0],
            torso_len: v[1],
            leg_len: v[2],
            arm_len: v[3],
            waist_circ: v[4],
            pelvis_circ: v[5],
            shoulder_width: v[6],
            aux_girths: AuxGirths {
                head: v[7],
                neck: v[8],
                chest: v[9],
                thigh: v[10],
                calf: v[11],
                bicep: v[12],
                forearm: v[13],
                wrist: v[14],
                ankle: v[15],
            },
            seed,
        }
    }

    /// Checks positivity, `torso_len + leg_len < stature`, and that the
    /// derived layout leaves room for every body part.
    pub fn validate(&self) -> Result<()> {
        for name in PARAM_NAMES {
            let v = self.param(name).unwrap_or(f64::NAN);
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Validation(format!("{name} must be positive, got {v}")));
            }
        }
        if self.torso_len + self.leg_len >= self.stature {
            return Err(Error::Validation(format!(
                "torso_len + leg_len ({}) must be below stature ({})",
                self.torso_len + self.leg_len,
                self.stature
            )));
        }
        BodyLayout::from_spec(self).map(|_| ())
    }
}

/// Generation ranges, one table per sex mapping parameter name to `[min, max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRanges {
    #[serde(default = "default_version")]
    pub version: u32,
    pub male: BTreeMap<String, [f64; 2]>,
    pub female: BTreeMap<String, [f64; 2]>,
}

fn default_version() -> u32 {
    1
}

const DEFAULT_RANGES: &str = include_str!("../config/default_ranges.toml");

impl Default for GenerationRanges {
    fn default() -> Self {
        Self::from_toml_str(DEFAULT_RANGES).expect("shipped ranges are valid")
    }
}

impl GenerationRanges {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let ranges: Self =
            toml::from_str(s).map_err(|e| Error::Config(format!("ranges: {e}")))?;
        ranges.validate()?;
        Ok(ranges)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let ranges: Self =
            serde_json::from_str(s).map_err(|e| Error::Config(format!("ranges: {e}")))?;
        ranges.validate()?;
        Ok(ranges)
    }

    /// Loads a `.toml` or `.json` range file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Self::from_json_str(&text),
            _ => Self::from_toml_str(&text),
        }
    }

    pub fn for_sex(&self, sex: Sex) -> &BTreeMap<String, [f64; 2]> {
        match sex {
            Sex::Male => &self.male,
            Sex::Female => &self.female,
        }
    }

    pub fn range(&self, sex: Sex, param: &str) -> Option<[f64; 2]> {
        self.for_sex(sex).get(param).copied()
    }

    pub fn validate(&self) -> Result<()> {
        for sex in Sex::ALL {
            let table = self.for_sex(sex);
            for name in PARAM_NAMES {
                let [lo, hi] = *table
                    .get(name)
                    .ok_or_else(|| Error::Config(format!("{sex}: missing range `{name}`")))?;
                if !(lo.is_finite() && hi.is_finite()) || lo <= 0.0 {
                    return Err(Error::Config(format!(
                        "{sex}.{name}: range must be positive, got [{lo}, {hi}]"
                    )));
                }
                if lo > hi {
                    return Err(Error::Config(format!(
                        "{sex}.{name}: min {lo} exceeds max {hi}"
                    )));
                }
            }
            if let Some(extra) = table.keys().find(|k| !PARAM_NAMES.contains(&k.as_str())) {
                return Err(Error::Config(format!("{sex}: unknown parameter `{extra}`")));
            }
        }
        Ok(())
    }
}

const MAX_SAMPLE_ATTEMPTS: usize = 10_000;

/// Draws a body for `sex` from `ranges`, deterministically in `(sex, seed, ranges)`.
///
/// Parameters are drawn uniformly and independently; draws whose combination
/// cannot be laid out (e.g. legs plus torso taller than the stature) are
/// rejected and redrawn from the same stream.
pub fn sample_body_spec(sex: Sex, seed: u64, ranges: &GenerationRanges) -> Result<BodySpec> {
    ranges.validate()?;
    let table = ranges.for_sex(sex);
    let stream = match sex {
        Sex::Male => 0x6d61_6c65,
        Sex::Female => 0x6665_6d61,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);

    let mut values = [0.0; 16];
    for _ in 0..MAX_SAMPLE_ATTEMPTS {
        for (slot, name) in values.iter_mut().zip(PARAM_NAMES) {
            let [lo, hi] = table[name];
            *slot = if lo == hi { lo } else { rng.gen_range(lo..=hi) };
        }
        let spec = BodySpec::from_params(sex, seed, &values);
        if spec.validate().is_ok() {
            return Ok(spec);
        }
    }
    Err(Error::Config(format!(
        "{sex} ranges admit no valid body after {MAX_SAMPLE_ATTEMPTS} draws"
    )))
}

/// Named joint positions in cm.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Skeleton {
    pub joints: BTreeMap<String, Point3>,
}

pub const REQUIRED_JOINTS: [&str; 11] = [
    "neck",
    "mid_spine",
    "pelvis",
    "hip_left",
    "hip_right",
    "shoulder_left",
    "shoulder_right",
    "wrist_left",
    "wrist_right",
    "ankle_left",
    "ankle_right",
];

impl Skeleton {
    pub fn get(&self, name: &str) -> Result<Point3> {
        self.joints
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownJoint(name.to_string()))
    }

    pub fn insert(&mut self, name: &str, p: Point3) {
        self.joints.insert(name.to_string(), p);
    }

    pub fn validate(&self) -> Result<()> {
        for name in REQUIRED_JOINTS {
            self.get(name)?;
        }
        let (neck, pelvis, ankle) = (self.get("neck")?, self.get("pelvis")?, self.get("ankle_left")?);
        if !(pelvis[1] < neck[1] && ankle[1] < pelvis[1]) {
            return Err(Error::Validation(
                "skeleton is not Y-up (expected ankle < pelvis < neck)".into(),
            ));
        }
        Ok(())
    }

    fn map(&self, f: impl Fn(Point3) -> Point3) -> Skeleton {
        Skeleton {
            joints: self.joints.iter().map(|(k, &p)| (k.clone(), f(p))).collect(),
        }
    }
}

/// Triangle mesh with its embedded skeleton.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodyMesh {
    pub mesh: TriMesh,
    pub skeleton: Skeleton,
}

impl BodyMesh {
    pub fn validate(&self) -> Result<()> {
        if self.mesh.is_empty() {
            return Err(Error::InvalidInput("empty mesh".into()));
        }
        if !self.mesh.faces_valid() {
            return Err(Error::Validation("face index out of range".into()));
        }
        self.skeleton.validate()
    }

    pub fn translated(&self, d: Point3) -> BodyMesh {
        BodyMesh {
            mesh: self.mesh.translated(d),
            skeleton: self.skeleton.map(|p| [p[0] + d[0], p[1] + d[1], p[2] + d[2]]),
        }
    }

    pub fn scaled(&self, k: f64) -> BodyMesh {
        BodyMesh {
            mesh: self.mesh.scaled(k),
            skeleton: self.skeleton.map(|p| [p[0] * k, p[1] * k, p[2] * k]),
        }
    }
}

// Proportions shared by the layout. Heights are fractions of stature unless noted.
const ANKLE_HEIGHT: f64 = 0.045;
/// Hip joints sit this fraction of `leg_len` below the pelvis joint.
const HIP_DROP: f64 = 0.08;
/// Crotch sits this fraction of `leg_len` below the hip joints.
const CROTCH_DROP: f64 = 0.06;
const SHOULDER_DROP: f64 = 0.03;
const HAND_LENGTH: f64 = 0.10;
/// Half-height of the constant-girth band around the mid-spine joint; covers
/// the default waist search region (0.05 × stature) with margin.
const WAIST_BAND: f64 = 0.055;
/// Chest level below the neck joint, as a fraction of `torso_len`.
const CHEST_DROP: f64 = 0.2;
const MIN_HEAD_NECK: f64 = 0.1;
const MAX_HEAD_NECK: f64 = 0.3;
/// Gap kept between the two thighs.
const THIGH_GAP: f64 = 0.75;

const TORSO_EXPONENT: f64 = 2.5;
const PELVIS_ASPECT: f64 = 0.72;
const WAIST_ASPECT: f64 = 0.78;
const CHEST_ASPECT: f64 = 0.68;
const HEAD_ASPECT: f64 = 1.2;
const HAND_ASPECT: f64 = 2.2;

/// Resolution used when converting girths to widths for joint placement, so the
/// skeleton does not depend on the mesh resolution.
const LAYOUT_RESOLUTION: usize = 1024;

/// Levels and offsets derived from a [`BodySpec`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyLayout {
    pub ankle_y: f64,
    pub knee_y: f64,
    pub crotch_y: f64,
    pub hip_y: f64,
    pub pelvis_y: f64,
    pub mid_y: f64,
    pub chest_y: f64,
    pub shoulder_y: f64,
    pub neck_y: f64,
    pub head_base_y: f64,
    pub head_y: f64,
    pub top_y: f64,
    pub hip_x: f64,
    pub shoulder_x: f64,
    pub elbow_x: f64,
    pub wrist_x: f64,
    pub hand_tip_x: f64,
    pub waist_band: f64,
}

impl BodyLayout {
    pub fn from_spec(spec: &BodySpec) -> Result<Self> {
        let s = spec.stature;
        let g = &spec.aux_girths;
        let pelvis_half = ring_scale(spec.pelvis_circ, 1.0, PELVIS_ASPECT, TORSO_EXPONENT, LAYOUT_RESOLUTION);
        let thigh_r = ring_scale(g.thigh, 1.0, 1.0, 2.0, LAYOUT_RESOLUTION);
        let hip_x = (pelvis_half - thigh_r).max(thigh_r + THIGH_GAP / 2.0);
        if hip_x >= spec.leg_len {
            return Err(Error::Validation("leg_len shorter than hip offset".into()));
        }

        let ankle_y = ANKLE_HEIGHT * s;
        let pelvis_y = ankle_y + (spec.leg_len.powi(2) - hip_x.powi(2)).sqrt();
        let hip_y = pelvis_y - HIP_DROP * spec.leg_len;
        let crotch_y = hip_y - CROTCH_DROP * spec.leg_len;
        let knee_y = 0.5 * (hip_y + ankle_y);
        let neck_y = pelvis_y + spec.torso_len;
        let mid_y = 0.5 * (pelvis_y + neck_y);
        let chest_y = neck_y - CHEST_DROP * spec.torso_len;
        let waist_band = WAIST_BAND * s;

        let head_neck = s - neck_y;
        if head_neck < MIN_HEAD_NECK * s || head_neck > MAX_HEAD_NECK * s {
            return Err(Error::Validation(format!(
                "head and neck height {head_neck:.2} cm outside [{:.2}, {:.2}]",
                MIN_HEAD_NECK * s,
                MAX_HEAD_NECK * s
            )));
        }
        if mid_y - waist_band <= pelvis_y + 0.5 || mid_y + waist_band >= chest_y - 0.5 {
            return Err(Error::Validation(
                "torso too short for the waist band".into(),
            ));
        }

        let shoulder_x = 0.5 * spec.shoulder_width;
        Ok(BodyLayout {
            ankle_y,
            knee_y,
            crotch_y,
            hip_y,
            pelvis_y,
            mid_y,
            chest_y,
            shoulder_y: neck_y - SHOULDER_DROP * s,
            neck_y,
            head_base_y: neck_y + 0.35 * head_neck,
            head_y: neck_y + 0.65 * head_neck,
            top_y: s,
            hip_x,
            shoulder_x,
            elbow_x: shoulder_x + 0.5 * spec.arm_len,
            wrist_x: shoulder_x + spec.arm_len,
            hand_tip_x: shoulder_x + spec.arm_len + HAND_LENGTH * s,
            waist_band,
        })
    }

    pub fn skeleton(&self) -> Skeleton {
        let mut sk = Skeleton::default();
        sk.insert("neck", [0.0, self.neck_y, 0.0]);
        sk.insert("mid_spine", [0.0, self.mid_y, 0.0]);
        sk.insert("pelvis", [0.0, self.pelvis_y, 0.0]);
        sk.insert("head", [0.0, self.head_y, 0.0]);
        for (side, sign) in [("left", 1.0), ("right", -1.0)] {
            sk.insert(&format!("hip_{side}"), [sign * self.hip_x, self.hip_y, 0.0]);
            sk.insert(&format!("knee_{side}"), [sign * self.hip_x, self.knee_y, 0.0]);
            sk.insert(&format!("ankle_{side}"), [sign * self.hip_x, self.ankle_y, 0.0]);
            sk.insert(&format!("shoulder_{side}"), [sign * self.shoulder_x, self.shoulder_y, 0.0]);
            sk.insert(&format!("elbow_{side}"), [sign * self.elbow_x, self.shoulder_y, 0.0]);
            sk.insert(&format!("wrist_{side}"), [sign * self.wrist_x, self.shoulder_y, 0.0]);
        }
        sk
    }
}

/// One control cross-section of a loft.
#[derive(Debug, Clone, Copy)]
struct Station {
    t: f64,
    girth: f64,
    aspect: f64,
    exponent: f64,
}

fn st(t: f64, girth: f64, aspect: f64, exponent: f64) -> Station {
    Station { t, girth, aspect, exponent }
}

fn unit_superellipse(aspect: f64, exponent: f64, n: usize) -> Vec<Point2> {
    let p = 2.0 / exponent;
    (0..n)
        .map(|i| {
            let th = std::f64::consts::TAU * i as f64 / n as f64;
            let (s, c) = th.sin_cos();
            [c.signum() * c.abs().powf(p), aspect * s.signum() * s.abs().powf(p)]
        })
        .collect()
}

/// Scale that gives a `n`-gon superellipse with semi-axes `(1, aspect)` the perimeter
/// `girth`, multiplied by `unit`.
fn ring_scale(girth: f64, unit: f64, aspect: f64, exponent: f64, n: usize) -> f64 {
    unit * girth / closed_perimeter(&unit_superellipse(aspect, exponent, n))
}

/// Ring polygon whose perimeter equals `girth` exactly.
fn ring(girth: f64, aspect: f64, exponent: f64, n: usize) -> Vec<Point2> {
    let unit = unit_superellipse(aspect, exponent, n);
    let k = girth / closed_perimeter(&unit);
    unit.into_iter().map(|[u, v]| [u * k, v * k]).collect()
}

#[derive(Debug, Clone, Copy)]
enum LoftAxis {
    /// Rings in the XZ plane, stacked along +Y.
    Vertical { cx: f64 },
    /// Rings in the YZ plane, stacked along `sign`·X.
    Lateral { cy: f64, sign: f64 },
}

/// Rings no further apart than this (cm).
const MAX_RING_STEP: f64 = 1.5;

fn refine(stations: &[Station]) -> Vec<Station> {
    let mut out: Vec<Station> = Vec::new();
    for w in stations.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b.t - a.t <= 1e-9 {
            continue;
        }
        let steps = ((b.t - a.t) / MAX_RING_STEP).ceil().max(1.0) as usize;
        for k in 0..steps {
            let f = k as f64 / steps as f64;
            let lerp = |x: f64, y: f64| x + (y - x) * f;
            out.push(st(
                lerp(a.t, b.t),
                lerp(a.girth, b.girth),
                lerp(a.aspect, b.aspect),
                lerp(a.exponent, b.exponent),
            ));
        }
    }
    if let Some(&last) = stations.last() {
        out.push(last);
    }
    out
}

fn loft(stations: &[Station], axis: LoftAxis, resolution: usize) -> TriMesh {
    let rings = refine(stations);
    let place = |t: f64, [u, v]: Point2| -> Point3 {
        match axis {
            LoftAxis::Vertical { cx } => [cx + u, t, v],
            LoftAxis::Lateral { cy, sign } => [sign * t, cy + u, v],
        }
    };

    let mut mesh = TriMesh::new();
    for r in &rings {
        for p in ring(r.girth, r.aspect, r.exponent, resolution) {
            mesh.vertices.push(place(r.t, p));
        }
    }
    let n = resolution as u32;
    for k in 0..rings.len() as u32 - 1 {
        for i in 0..n {
            let j = (i + 1) % n;
            let (a, b, c, d) = (k * n + i, k * n + j, (k + 1) * n + j, (k + 1) * n + i);
            mesh.faces.push([a, c, b]);
            mesh.faces.push([a, d, c]);
        }
    }
    let first = rings[0].t;
    let last = rings[rings.len() - 1].t;
    let c0 = mesh.vertices.len() as u32;
    mesh.vertices.push(place(first, [0.0, 0.0]));
    mesh.vertices.push(place(last, [0.0, 0.0]));
    let top = (rings.len() as u32 - 1) * n;
    for i in 0..n {
        let j = (i + 1) % n;
        mesh.faces.push([c0, i, j]);
        mesh.faces.push([c0 + 1, top + j, top + i]);
    }
    mesh
}

fn torso_stations(spec: &BodySpec, l: &BodyLayout) -> Vec<Station> {
    let g = &spec.aux_girths;
    let e = TORSO_EXPONENT;
    let hn = l.top_y - l.neck_y;
    vec![
        st(l.crotch_y, 0.92 * spec.pelvis_circ, PELVIS_ASPECT, e),
        st(l.hip_y, spec.pelvis_circ, PELVIS_ASPECT, e),
        st(l.pelvis_y, spec.pelvis_circ, PELVIS_ASPECT, e),
        st(l.mid_y - l.waist_band, spec.waist_circ, WAIST_ASPECT, e),
        st(l.mid_y + l.waist_band, spec.waist_circ, WAIST_ASPECT, e),
        st(l.chest_y, g.chest, CHEST_ASPECT, e),
        st(l.neck_y, g.neck, 1.0, 2.0),
        st(l.head_base_y, g.neck, 1.0, 2.0),
        st(l.neck_y + 0.45 * hn, 0.9 * g.head, HEAD_ASPECT, 2.0),
        st(l.head_y - 0.03 * hn, g.head, HEAD_ASPECT, 2.0),
        st(l.head_y + 0.03 * hn, g.head, HEAD_ASPECT, 2.0),
        st(l.neck_y + 0.9 * hn, 0.75 * g.head, HEAD_ASPECT, 2.0),
        st(l.top_y, 0.3 * g.head, HEAD_ASPECT, 2.0),
    ]
}

fn leg_stations(spec: &BodySpec, l: &BodyLayout) -> Vec<Station> {
    let g = &spec.aux_girths;
    let lower = l.knee_y - l.ankle_y;
    let upper = l.hip_y - l.knee_y;
    let knee = 0.5 * (g.thigh + g.calf);
    vec![
        st(0.0, g.ankle, 1.0, 2.0),
        st(l.ankle_y + 0.15 * lower, g.ankle, 1.0, 2.0),
        st(l.ankle_y + 0.6 * lower, g.calf, 1.0, 2.0),
        st(l.ankle_y + 0.8 * lower, g.calf, 1.0, 2.0),
        st(l.knee_y, knee, 1.0, 2.0),
        st(l.knee_y + 0.6 * upper, g.thigh, 1.0, 2.0),
        st(0.5 * (l.crotch_y + l.hip_y), g.thigh, 1.0, 2.0),
    ]
}

fn arm_stations(spec: &BodySpec, l: &BodyLayout) -> Vec<Station> {
    let g = &spec.aux_girths;
    let upper = l.elbow_x - l.shoulder_x;
    let lower = l.wrist_x - l.elbow_x;
    let hand = l.hand_tip_x - l.wrist_x;
    vec![
        st(0.5 * l.shoulder_x, g.bicep, 1.0, 2.0),
        st(l.shoulder_x + 0.7 * upper, g.bicep, 1.0, 2.0),
        st(l.elbow_x, 0.5 * (g.bicep + g.forearm), 1.0, 2.0),
        st(l.elbow_x + 0.15 * lower, g.forearm, 1.0, 2.0),
        st(l.elbow_x + 0.45 * lower, g.forearm, 1.0, 2.0),
        st(l.wrist_x - 0.08 * lower, g.wrist, 1.0, 2.0),
        st(l.wrist_x + 0.1 * hand, g.wrist, 1.0, 2.0),
        st(l.wrist_x + 0.4 * hand, 1.25 * g.wrist, HAND_ASPECT, 2.0),
        st(l.hand_tip_x, 0.6 * g.wrist, HAND_ASPECT, 2.0),
    ]
}

pub const MIN_RESOLUTION: usize = 16;

/// Builds the T-pose mesh for `spec` with `resolution` segments per cross-section.
pub fn build_body(spec: &BodySpec, resolution: usize) -> Result<BodyMesh> {
    if resolution < MIN_RESOLUTION {
        return Err(Error::InvalidInput(format!(
            "resolution {resolution} below minimum {MIN_RESOLUTION}"
        )));
    }
    spec.validate()?;
    let layout = BodyLayout::from_spec(spec)?;

    let mut mesh = loft(&torso_stations(spec, &layout), LoftAxis::Vertical { cx: 0.0 }, resolution);
    let legs = leg_stations(spec, &layout);
    let arms = arm_stations(spec, &layout);
    for sign in [1.0, -1.0] {
        mesh.append(&loft(&legs, LoftAxis::Vertical { cx: sign * layout.hip_x }, resolution));
        mesh.append(&loft(&arms, LoftAxis::Lateral { cy: layout.shoulder_y, sign }, resolution));
    }

    Ok(BodyMesh {
        mesh,
        skeleton: layout.skeleton(),
    })
}

/// Joint-distance lengths implied by a spec, for cross-checking generated skeletons.
pub fn spec_lengths(body: &BodyMesh) -> Result<[f64; 3]> {
    let sk = &body.skeleton;
    Ok([
        distance3(sk.get("shoulder_left")?, sk.get("wrist_left")?),
        distance3(sk.get("neck")?, sk.get("pelvis")?),
        distance3(sk.get("pelvis")?, sk.get("ankle_left")?),
    ])
}
