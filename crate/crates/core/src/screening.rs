//! Cardiovascular and marfanoid screening indicators from body measurements.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bodygen::Sex;
use crate::measure::{MeasurementSet, CANONICAL};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WaistClass {
    Normal,
    Increased,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WhrClass {
    Normal,
    Increased,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlagStatus {
    Flagged,
    NotFlagged,
    NotAssessed,
}

macro_rules! display_via_serde {
    ($($t:ty),*) => {$(
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                let s = serde_json::to_value(self).expect("serialisable");
                f.write_str(s.as_str().expect("unit variant").replace('_', " ").as_str())
            }
        }
    )*};
}
display_via_serde!(WaistClass, WhrClass, FlagStatus);

/// (increased, high) waist cutoffs in cm.
pub fn waist_thresholds(sex: Sex) -> (f64, f64) {
    match sex {
        Sex::Male => (94.0, 102.0),
        Sex::Female => (80.0, 88.0),
    }
}

/// WHR strictly above this indicates increased risk.
pub fn whr_threshold(sex: Sex) -> f64 {
    match sex {
        Sex::Male => 0.90,
        Sex::Female => 0.85,
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{name} must be positive, got {v}")))
    }
}

pub fn classify_waist(sex: Sex, waist: f64) -> Result<WaistClass> {
    positive("waist", waist)?;
    let (increased, high) = waist_thresholds(sex);
    Ok(if waist >= high {
        WaistClass::High
    } else if waist >= increased {
        WaistClass::Increased
    } else {
        WaistClass::Normal
    })
}

pub fn waist_to_hip_ratio(waist: f64, pelvis: f64) -> Result<f64> {
    positive("pelvis", pelvis)?;
    positive("waist", waist)?;
    Ok(waist / pelvis)
}

pub fn classify_whr(sex: Sex, whr: f64) -> Result<WhrClass> {
    positive("waist-to-hip ratio", whr)?;
    Ok(if whr > whr_threshold(sex) { WhrClass::Increased } else { WhrClass::Normal })
}

/// User-supplied proportion cutoffs. None ship by default.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProportionThresholds {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arm_torso_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leg_torso_max: Option<f64>,
}

impl ProportionThresholds {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("arm_torso_max", self.arm_torso_max), ("leg_torso_max", self.leg_torso_max)] {
            if let Some(v) = v {
                if !(v.is_finite() && v > 0.0) {
                    return Err(Error::Config(format!("{name} must be positive, got {v}")));
                }
            }
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let t: Self = toml::from_str(text).map_err(|e| Error::Config(format!("thresholds: {e}")))?;
        t.validate()?;
        Ok(t)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let t: Self = serde_json::from_str(text).map_err(|e| Error::Config(format!("thresholds: {e}")))?;
        t.validate()?;
        Ok(t)
    }

    /// Loads a `.json` file as JSON and anything else as TOML.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        if path.extension().is_some_and(|e| e == "json") {
            Self::from_json_str(&text)
        } else {
            Self::from_toml_str(&text)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProportionRatios {
    pub arm_torso: f64,
    pub leg_torso: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarfanoidFlags {
    pub arm_torso: FlagStatus,
    pub leg_torso: FlagStatus,
}

fn flag(ratio: f64, max: Option<f64>) -> FlagStatus {
    match max {
        None => FlagStatus::NotAssessed,
        Some(m) if ratio > m => FlagStatus::Flagged,
        Some(_) => FlagStatus::NotFlagged,
    }
}

pub fn proportion_ratios(
    arm: f64,
    leg: f64,
    torso: f64,
    thresholds: &ProportionThresholds,
) -> Result<(ProportionRatios, MarfanoidFlags)> {
    positive("arm length", arm)?;
    positive("leg length", leg)?;
    positive("torso length", torso)?;
    let ratios = ProportionRatios { arm_torso: arm / torso, leg_torso: leg / torso };
    let flags = MarfanoidFlags {
        arm_torso: flag(ratios.arm_torso, thresholds.arm_torso_max),
        leg_torso: flag(ratios.leg_torso, thresholds.leg_torso_max),
    };
    Ok((ratios, flags))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreeningReport {
    pub sex: Sex,
    /// The five measurements used, in cm.
    pub inputs: BTreeMap<String, f64>,
    pub waist_class: WaistClass,
    pub whr: f64,
    pub whr_class: WhrClass,
    pub ratios: ProportionRatios,
    pub marfanoid_flags: MarfanoidFlags,
    pub thresholds: ProportionThresholds,
}

impl ScreeningReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serialisable") + "\n"
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "Screening report ({})", self.sex);
        for (k, v) in &self.inputs {
            let _ = writeln!(s, "  {k:<22} {v:>8.2} cm");
        }
        let (inc, high) = waist_thresholds(self.sex);
        let _ = writeln!(s, "Waist circumference: {} (increased >= {inc}, high >= {high})", self.waist_class);
        let _ = writeln!(
            s,
            "Waist-to-hip ratio:  {:.3} {} (increased above {:.2})",
            self.whr,
            self.whr_class,
            whr_threshold(self.sex)
        );
        let limit = |m: Option<f64>| m.map_or("no threshold".to_string(), |v| format!("max {v}"));
        let _ = writeln!(
            s,
            "Arm/torso ratio:     {:.3} {} ({})",
            self.ratios.arm_torso,
            self.marfanoid_flags.arm_torso,
            limit(self.thresholds.arm_torso_max)
        );
        let _ = writeln!(
            s,
            "Leg/torso ratio:     {:.3} {} ({})",
            self.ratios.leg_torso,
            self.marfanoid_flags.leg_torso,
            limit(self.thresholds.leg_torso_max)
        );
        s
    }
}

/// Measurement source for screening: a full set, or a partial map with at
/// least the five canonical keys.
pub trait MeasurementLookup {
    fn lookup(&self, name: &str) -> Option<f64>;
}

impl MeasurementLookup for MeasurementSet {
    fn lookup(&self, name: &str) -> Option<f64> {
        self.get(name)
    }
}

impl MeasurementLookup for BTreeMap<String, f64> {
    fn lookup(&self, name: &str) -> Option<f64> {
        self.get(name).copied()
    }
}

pub fn screen_subject<M: MeasurementLookup + ?Sized>(
    measurements: &M,
    sex: Sex,
    thresholds: &ProportionThresholds,
) -> Result<ScreeningReport> {
    thresholds.validate()?;
    let mut inputs = BTreeMap::new();
    for key in CANONICAL {
        let v = measurements
            .lookup(key)
            .ok_or_else(|| Error::Validation(format!("missing measurement `{key}`")))?;
        inputs.insert(key.to_string(), v);
    }
    let waist = inputs["waist_circumference"];
    let pelvis = inputs["pelvis_circumference"];
    let whr = waist_to_hip_ratio(waist, pelvis)?;
    let (ratios, marfanoid_flags) = proportion_ratios(
        inputs["shoulder_to_wrist"],
        inputs["leg_length"],
        inputs["torso_length"],
        thresholds,
    )?;
    Ok(ScreeningReport {
        sex,
        waist_class: classify_waist(sex, waist)?,
        whr,
        whr_class: classify_whr(sex, whr)?,
        ratios,
        marfanoid_flags,
        thresholds: *thresholds,
        inputs,
    })
}
