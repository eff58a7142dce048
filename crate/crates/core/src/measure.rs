//! Ground-truth anthropometry from a body mesh: plane sections, convex-hull
//! girths, extremal girth search and joint distances.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::bodygen::{BodyMesh, Skeleton};
use crate::error::{Error, Result};
use crate::geometry::{distance3, hull_perimeter, Point2, TriMesh};

/// Measurement names, in model-output order. The first five are the reported ones.
pub const MEASUREMENT_NAMES: [&str; 16] = [
    "waist_circumference",
    "pelvis_circumference",
    "shoulder_to_wrist",
    "leg_length",
    "torso_length",
    "stature",
    "head_circumference",
    "neck_circumference",
    "chest_circumference",
    "thigh_circumference",
    "calf_circumference",
    "bicep_circumference",
    "forearm_circumference",
    "wrist_circumference",
    "ankle_circumference",
    "shoulder_width",
];

pub const CANONICAL: [&str; 5] = [
    "waist_circumference",
    "pelvis_circumference",
    "shoulder_to_wrist",
    "leg_length",
    "torso_length",
];

pub fn measurement_index(name: &str) -> Option<usize> {
    MEASUREMENT_NAMES.iter().position(|&n| n == name)
}

/// Axis normal to a slicing plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

impl Axis {
    fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
        }
    }

    fn name(self) -> char {
        match self {
            Axis::X => 'x',
            Axis::Y => 'y',
        }
    }

    /// In-plane coordinates: (x, z) for Y planes, (y, z) for X planes.
    fn project(self, p: [f64; 3]) -> Point2 {
        match self {
            Axis::X => [p[1], p[2]],
            Axis::Y => [p[0], p[2]],
        }
    }
}

/// Intersection of a mesh with an axis-aligned plane.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossSection {
    /// Plane offset along its axis (the Y level for horizontal sections).
    pub y_level: f64,
    /// All intersection points, in-plane coordinates.
    pub points: Vec<Point2>,
    pub component_count: usize,
    /// Points grouped by connected intersection loop.
    pub components: Vec<Vec<Point2>>,
}

impl CrossSection {
    pub fn hull_perimeter(&self) -> f64 {
        hull_perimeter(&self.points)
    }

    /// Hull perimeter of the loop whose centroid is closest to `near`.
    pub fn component_perimeter(&self, near: Point2) -> f64 {
        let centroid = |c: &Vec<Point2>| {
            let n = c.len() as f64;
            let s = c.iter().fold([0.0, 0.0], |a, p| [a[0] + p[0], a[1] + p[1]]);
            [s[0] / n, s[1] / n]
        };
        let dist2 = |p: Point2| (p[0] - near[0]).powi(2) + (p[1] - near[1]).powi(2);
        self.components
            .iter()
            .min_by(|a, b| dist2(centroid(a)).total_cmp(&dist2(centroid(b))))
            .map(|c| hull_perimeter(c))
            .unwrap_or(0.0)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
enum Crossing {
    Vertex(u32),
    Edge(u32, u32),
}

struct DisjointSet(Vec<usize>);

impl DisjointSet {
    fn find(&mut self, mut i: usize) -> usize {
        while self.0[i] != i {
            self.0[i] = self.0[self.0[i]];
            i = self.0[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Slices `mesh` with the plane `axis = level`.
///
/// A vertex exactly on the plane counts as lying above it, so sections taken
/// at a ring level reproduce that ring's vertices.
pub fn slice(mesh: &TriMesh, axis: Axis, level: f64) -> Result<CrossSection> {
    if mesh.is_empty() {
        return Err(Error::InvalidInput("empty mesh".into()));
    }
    let k = axis.index();
    let v = &mesh.vertices;
    let above = |i: u32| v[i as usize][k] >= level;

    let mut ids: HashMap<Crossing, usize> = HashMap::new();
    let mut points: Vec<Point2> = Vec::new();
    let mut links: Vec<(usize, usize)> = Vec::new();

    let mut crossing = |a: u32, b: u32| -> usize {
        let (a, b) = (a.min(b), a.max(b));
        let (pa, pb) = (v[a as usize], v[b as usize]);
        let key = if pa[k] == level {
            Crossing::Vertex(a)
        } else if pb[k] == level {
            Crossing::Vertex(b)
        } else {
            Crossing::Edge(a, b)
        };
        *ids.entry(key).or_insert_with(|| {
            let p = match key {
                Crossing::Vertex(i) => v[i as usize],
                Crossing::Edge(..) => {
                    let t = (level - pa[k]) / (pb[k] - pa[k]);
                    [
                        pa[0] + t * (pb[0] - pa[0]),
                        pa[1] + t * (pb[1] - pa[1]),
                        pa[2] + t * (pb[2] - pa[2]),
                    ]
                }
            };
            points.push(axis.project(p));
            points.len() - 1
        })
    };

    for f in &mesh.faces {
        let s = [above(f[0]), above(f[1]), above(f[2])];
        if s[0] == s[1] && s[1] == s[2] {
            continue;
        }
        let mut ends = [0usize; 2];
        let mut n = 0;
        for e in 0..3 {
            let (a, b) = (f[e], f[(e + 1) % 3]);
            if s[e] != s[(e + 1) % 3] {
                ends[n] = crossing(a, b);
                n += 1;
            }
        }
        links.push((ends[0], ends[1]));
    }

    if points.is_empty() {
        return Err(Error::EmptySection {
            axis: axis.name(),
            level,
        });
    }

    let mut sets = DisjointSet((0..points.len()).collect());
    for (a, b) in links {
        sets.union(a, b);
    }
    let mut groups: BTreeMap<usize, Vec<Point2>> = BTreeMap::new();
    for (i, &p) in points.iter().enumerate() {
        let root = sets.find(i);
        groups.entry(root).or_default().push(p);
    }
    let components: Vec<Vec<Point2>> = groups.into_values().collect();

    Ok(CrossSection {
        y_level: level,
        component_count: components.len(),
        points,
        components,
    })
}

/// Horizontal section at height `y`, points in the XZ plane.
pub fn cross_section(mesh: &TriMesh, y: f64) -> Result<CrossSection> {
    slice(mesh, Axis::Y, y)
}

/// Tape-measure girth at height `y`: perimeter of the convex hull of the section.
pub fn circumference_at(mesh: &TriMesh, y: f64) -> Result<f64> {
    Ok(cross_section(mesh, y)?.hull_perimeter())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Extremum {
    Minimal,
    Maximal,
}

/// Hull perimeters of identical rings sliced at different heights differ by
/// rounding noise only.
pub const TIE_TOLERANCE: f64 = 1e-9;

/// Searches `levels` evenly spaced heights in `[y_min, y_max]` (inclusive) for the
/// smallest or largest girth. Ties (within [`TIE_TOLERANCE`] relative) go to the
/// lower height; heights that miss the mesh are skipped.
pub fn extremal_circumference(
    mesh: &TriMesh,
    y_min: f64,
    y_max: f64,
    mode: Extremum,
    levels: usize,
) -> Result<(f64, f64)> {
    if !(y_min < y_max) {
        return Err(Error::InvalidInput(format!("empty region [{y_min}, {y_max}]")));
    }
    if levels < 2 {
        return Err(Error::InvalidInput(format!("levels must be >= 2, got {levels}")));
    }
    let mut best: Option<(f64, f64)> = None;
    for i in 0..levels {
        let y = if i == levels - 1 {
            y_max
        } else {
            y_min + (y_max - y_min) * i as f64 / (levels - 1) as f64
        };
        let c = match circumference_at(mesh, y) {
            Ok(c) => c,
            Err(Error::EmptySection { .. }) => continue,
            Err(e) => return Err(e),
        };
        let better = match (best, mode) {
            (None, _) => true,
            (Some((_, b)), Extremum::Minimal) => c < b - TIE_TOLERANCE * b,
            (Some((_, b)), Extremum::Maximal) => c > b + TIE_TOLERANCE * b,
        };
        if better {
            best = Some((y, c));
        }
    }
    best.ok_or(Error::EmptyRegion { lo: y_min, hi: y_max })
}

pub fn joint_distance(skeleton: &Skeleton, a: &str, b: &str) -> Result<f64> {
    Ok(distance3(skeleton.get(a)?, skeleton.get(b)?))
}

/// Tunables for [`measure_all`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeasureConfig {
    /// Half-height of the waist search region around the mid-spine joint, as a
    /// fraction of stature.
    pub waist_region_fraction: f64,
    /// Number of sampled levels in each extremal search.
    pub levels: usize,
}

impl Default for MeasureConfig {
    fn default() -> Self {
        Self {
            waist_region_fraction: 0.05,
            levels: 64,
        }
    }
}

/// The 16 named measurements of one body, in cm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<String, f64>", into = "BTreeMap<String, f64>")]
pub struct MeasurementSet {
    values: BTreeMap<String, f64>,
}

impl MeasurementSet {
    /// Validates that exactly the 16 known names are present with finite,
    /// positive values.
    pub fn new(values: BTreeMap<String, f64>) -> Result<Self> {
        for name in MEASUREMENT_NAMES {
            let v = *values
                .get(name)
                .ok_or_else(|| Error::Validation(format!("missing measurement `{name}`")))?;
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Validation(format!("{name} must be positive, got {v}")));
            }
        }
        if let Some(extra) = values.keys().find(|k| measurement_index(k).is_none()) {
            return Err(Error::Validation(format!("unknown measurement `{extra}`")));
        }
        Ok(Self { values })
    }

    /// Builds a set from a vector in [`MEASUREMENT_NAMES`] order.
    pub fn from_vector(v: &[f64]) -> Result<Self> {
        if v.len() != MEASUREMENT_NAMES.len() {
            return Err(Error::InvalidInput(format!("expected 16 values, got {}", v.len())));
        }
        Self::new(MEASUREMENT_NAMES.iter().map(|n| n.to_string()).zip(v.iter().copied()).collect())
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.get(name).copied()
    }

    pub fn to_vector(&self) -> [f64; 16] {
        let mut out = [0.0; 16];
        for (slot, name) in out.iter_mut().zip(MEASUREMENT_NAMES) {
            *slot = self.values[name];
        }
        out
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.values.iter().map(|(k, &v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Rounds every value to 1e-6 cm so it survives fixed six-decimal text.
    pub fn quantized(&self) -> Self {
        Self {
            values: self
                .values
                .iter()
                .map(|(k, &v)| (k.clone(), format!("{v:.6}").parse().unwrap()))
                .collect(),
        }
    }

    /// JSON object with each value written with six decimals.
    pub fn to_fixed_json(&self) -> String {
        let body: Vec<String> = self
            .values
            .iter()
            .map(|(k, v)| format!("\"{k}\":{v:.6}"))
            .collect();
        format!("{{{}}}", body.join(","))
    }
}

impl TryFrom<BTreeMap<String, f64>> for MeasurementSet {
    type Error = Error;

    fn try_from(values: BTreeMap<String, f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<MeasurementSet> for BTreeMap<String, f64> {
    fn from(m: MeasurementSet) -> Self {
        m.values
    }
}

/// Extracts all 16 measurements from `body`.
pub fn measure_all(body: &BodyMesh, cfg: &MeasureConfig) -> Result<MeasurementSet> {
    let mesh = &body.mesh;
    if mesh.is_empty() {
        return Err(Error::InvalidInput("empty mesh".into()));
    }
    let sk = &body.skeleton;
    let (lo, hi) = mesh.bounds().expect("non-empty mesh");
    let stature = hi[1] - lo[1];

    let mid = sk.get("mid_spine")?;
    let half = cfg.waist_region_fraction * stature;
    let (_, waist) =
        extremal_circumference(mesh, mid[1] - half, mid[1] + half, Extremum::Minimal, cfg.levels)?;

    let pelvis = sk.get("pelvis")?;
    let hip = sk.get("hip_left")?;
    let (_, pelvis_circ) =
        extremal_circumference(mesh, hip[1], pelvis[1], Extremum::Maximal, cfg.levels)?;

    let neck = sk.get("neck")?;
    let head = sk.get("head")?;
    let knee = sk.get("knee_left")?;
    let ankle = sk.get("ankle_left")?;
    let shoulder = sk.get("shoulder_left")?;
    let elbow = sk.get("elbow_left")?;
    let wrist = sk.get("wrist_left")?;

    let horizontal = |y: f64, x: f64, z: f64| -> Result<f64> {
        Ok(slice(mesh, Axis::Y, y)?.component_perimeter([x, z]))
    };
    let along_arm = |x: f64| -> Result<f64> {
        Ok(slice(mesh, Axis::X, x)?.component_perimeter([shoulder[1], shoulder[2]]))
    };
    let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;

    let mut m = BTreeMap::new();
    m.insert("waist_circumference", waist);
    m.insert("pelvis_circumference", pelvis_circ);
    m.insert("shoulder_to_wrist", joint_distance(sk, "shoulder_left", "wrist_left")?);
    m.insert("torso_length", joint_distance(sk, "neck", "pelvis")?);
    m.insert("leg_length", joint_distance(sk, "pelvis", "ankle_left")?);
    m.insert("stature", stature);
    m.insert("head_circumference", horizontal(head[1], head[0], head[2])?);
    m.insert("neck_circumference", horizontal(lerp(neck[1], head[1], 0.25), neck[0], neck[2])?);
    m.insert("chest_circumference", horizontal(lerp(neck[1], pelvis[1], 0.2), neck[0], neck[2])?);
    m.insert("thigh_circumference", horizontal(lerp(knee[1], hip[1], 0.75), hip[0], hip[2])?);
    m.insert("calf_circumference", horizontal(lerp(ankle[1], knee[1], 0.7), knee[0], knee[2])?);
    m.insert("ankle_circumference", horizontal(ankle[1], ankle[0], ankle[2])?);
    m.insert("bicep_circumference", along_arm(lerp(shoulder[0], elbow[0], 0.5))?);
    m.insert("forearm_circumference", along_arm(lerp(elbow[0], wrist[0], 0.3))?);
    m.insert("wrist_circumference", along_arm(wrist[0])?);
    m.insert("shoulder_width", joint_distance(sk, "shoulder_left", "shoulder_right")?);

    MeasurementSet::new(m.into_iter().map(|(k, v)| (k.to_string(), v)).collect())
}
