//! Acceptance suite: one PASS/FAIL line per criterion. Exits nonzero if any fails.

mod common;

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use anthro_core::bodygen::{build_body, sample_body_spec, GenerationRanges, Sex};
use anthro_core::cli::main_with_args;
use anthro_core::datakit::{
    generate_dataset, split_dataset, GenerationConfig, Split, DEFAULT_FRACTIONS,
};
use anthro_core::geometry::shapes;
use anthro_core::measure::{circumference_at, measure_all, MeasureConfig, CANONICAL};
use anthro_core::regressor::eval::{ConstantPredictor, PerfectPredictor};
use anthro_core::regressor::head::Adam;
use anthro_core::regressor::train::train_step;
use anthro_core::regressor::{
    build_model, evaluate_model, train_model, train_with_validator, BackboneConfig, BackboneName, EvalReport,
    HeadConfig, Samples, TrainConfig,
};
use anthro_core::screening::{classify_waist, classify_whr, WaistClass, WhrClass};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    if elapsed <= limit {
        Ok(())
    } else {
        Err(format!("took {elapsed:.2?}, limit {limit:?}"))
    }
}

fn report_format() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = dir.path().join("ds");
    let m = generate_dataset(10, &GenerationConfig::default(), &root, 3).map_err(|e| e.to_string())?;
    let m = split_dataset(&m, [0.6, 0.2, 0.2], 1).map_err(|e| e.to_string())?;
    let r = evaluate_model(&PerfectPredictor, &m, &root, &CANONICAL).map_err(|e| e.to_string())?;
    let labels: Vec<&str> = r.rows.iter().map(|x| x.label.as_str()).collect();
    let expected = ["Waist circumference", "Pelvis circumference", "Arm length", "Leg length", "Torso length"];
    let csv = r.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    let table = r.to_table();
    check(
        labels == expected
            && lines.len() == 7
            && lines[0] == "measurement,male,female,total"
            && lines[6].starts_with("mean,")
            && lines[1..].iter().all(|l| l.split(',').count() == 4)
            && ["Male MAE", "Female MAE", "Total MAE", "Mean MAE"].iter().all(|h| table.contains(h)),
        format!("5 rows x (male, female, total) + mean row; labels {labels:?}"),
    )
}

fn geometry_oracle() -> Outcome {
    let t = Instant::now();
    let r = 10.0;
    let c = circumference_at(&shapes::cylinder(r, 0.0, 10.0, 256), 5.0).map_err(|e| e.to_string())?;
    let d = 30.0;
    let mut two = shapes::cylinder(r, 0.0, 10.0, 256).translated([-d / 2.0, 0.0, 0.0]);
    two.append(&shapes::cylinder(r, 0.0, 10.0, 256).translated([d / 2.0, 0.0, 0.0]));
    let h = circumference_at(&two, 5.0).map_err(|e| e.to_string())?;
    let hull_expected = 2.0 * PI * r + 2.0 * d;
    let hull_rel = (h - hull_expected).abs() / hull_expected;
    within(t.elapsed(), Duration::from_secs(1))?;
    check(
        (c - 62.829).abs() <= 0.06 && hull_rel <= 1e-3,
        format!("cylinder {c:.4} cm; two-cylinder hull {h:.4} vs {hull_expected:.4} (rel {hull_rel:.2e}); {:.2?}", t.elapsed()),
    )
}

fn construction_equivalence() -> Outcome {
    let t = Instant::now();
    let ranges = GenerationRanges::default();
    let cfg = MeasureConfig::default();
    let (mut girth_rel, mut len_abs, mut n) = (0.0f64, 0.0f64, 0);
    for sex in Sex::ALL {
        for seed in 0..100u64 {
            let spec = sample_body_spec(sex, 10_000 + seed, &ranges).map_err(|e| e.to_string())?;
            let body = build_body(&spec, 256).map_err(|e| e.to_string())?;
            let m = measure_all(&body, &cfg).map_err(|e| e.to_string())?;
            let get = |k: &str| m.get(k).unwrap();
            girth_rel = girth_rel
                .max((get("waist_circumference") - spec.waist_circ).abs() / spec.waist_circ)
                .max((get("pelvis_circumference") - spec.pelvis_circ).abs() / spec.pelvis_circ);
            len_abs = len_abs
                .max((get("shoulder_to_wrist") - spec.arm_len).abs())
                .max((get("leg_length") - spec.leg_len).abs())
                .max((get("torso_length") - spec.torso_len).abs());
            n += 1;
        }
    }
    within(t.elapsed(), Duration::from_secs(120))?;
    check(
        girth_rel <= 0.01 && len_abs <= 0.001,
        format!("{n} bodies; max girth rel err {girth_rel:.2e}, max length err {len_abs:.2e} cm; {:.1?}", t.elapsed()),
    )
}

fn split_protocol() -> Outcome {
    let t = Instant::now();
    let m = common::synthetic_manifest(500, 500, 4);
    let a = split_dataset(&m, DEFAULT_FRACTIONS, 17).map_err(|e| e.to_string())?;
    let b = split_dataset(&m, DEFAULT_FRACTIONS, 17).map_err(|e| e.to_string())?;
    let counts: Vec<usize> = Split::ALL.iter().map(|s| a.records_in(*s).len()).collect();
    let balanced = Split::ALL.iter().all(|s| {
        let recs = a.records_in(*s);
        let male = recs.iter().filter(|r| r.sex == Sex::Male).count() as i64;
        (male - (recs.len() as i64 - male)).abs() <= 1
    });
    let ids: BTreeSet<&str> = m.records.iter().map(|r| r.sample_id.as_str()).collect();
    let assigned: Vec<&str> = Split::ALL
        .iter()
        .flat_map(|s| a.records_in(*s).into_iter().map(|r| r.sample_id.as_str()))
        .collect();
    let partition = assigned.len() == ids.len() && assigned.iter().copied().collect::<BTreeSet<_>>() == ids;
    within(t.elapsed(), Duration::from_secs(1))?;
    check(
        counts == [700, 150, 150] && balanced && a == b && partition,
        format!("counts {counts:?}, balanced {balanced}, repeatable {}, partition {partition}", a == b),
    )
}

fn model_contract() -> Outcome {
    let t = Instant::now();
    let mut model = build_model(&BackboneConfig::new(BackboneName::TinyTest), &HeadConfig::default())
        .map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let inputs: Vec<_> = (0..4)
        .map(|_| {
            let a = ndarray::Array3::from_shape_fn((224, 224, 3), |_| rng.gen_range(-2.0f32..2.0));
            anthro_core::imaging::ModelInput::new(a).unwrap()
        })
        .collect();
    let out = model.predict_batch(&inputs).map_err(|e| e.to_string())?;
    let frozen_before = model.backbone_parameters();
    let head_before: Vec<(String, Vec<f64>)> =
        model.head.named_tensors().into_iter().map(|(n, _, d)| (n, d.to_vec())).collect();
    let feats = model.features(&inputs);
    let targets = Array2::from_shape_fn((4, 16), |_| rng.gen_range(20.0..100.0));
    let mut opt = Adam::new(TrainConfig::default().adam());
    train_step(&mut model, &mut opt, &feats, &targets).map_err(|e| e.to_string())?;
    let frozen_after = model.backbone_parameters();
    let bitwise = frozen_before.len() == frozen_after.len()
        && frozen_before.iter().zip(&frozen_after).all(|((na, a), (nb, b))| {
            na == nb && a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
        });
    let after: Vec<(String, Vec<f64>)> =
        model.head.named_tensors().into_iter().map(|(n, _, d)| (n, d.to_vec())).collect();
    // group by layer: head.dense0, head.bn0, ..., head.output
    let mut layers: BTreeSet<String> = BTreeSet::new();
    let mut changed: BTreeSet<String> = BTreeSet::new();
    for ((name, a), (_, b)) in head_before.iter().zip(&after) {
        let layer = name.rsplit_once('.').unwrap().0.to_string();
        layers.insert(layer.clone());
        if a != b {
            changed.insert(layer);
        }
    }
    let no_backbone_trainable = model.trainable_parameters().iter().all(|n| !n.starts_with("backbone"));
    within(t.elapsed(), Duration::from_secs(60))?;
    check(
        out.dim() == (4, 16) && bitwise && changed == layers && no_backbone_trainable,
        format!(
            "output {:?}; backbone bit-identical {bitwise}; head layers changed {}/{}; {:.1?}",
            out.dim(),
            changed.len(),
            layers.len(),
            t.elapsed()
        ),
    )
}

fn learning_sanity(reports: &mut Vec<(EvalReport, usize, usize)>) -> Outcome {
    let t = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = dir.path().join("ds");
    let m = generate_dataset(256, &GenerationConfig::default(), &root, 42).map_err(|e| e.to_string())?;
    let m = split_dataset(&m, DEFAULT_FRACTIONS, 7).map_err(|e| e.to_string())?;
    let model = build_model(&BackboneConfig::new(BackboneName::TinyTest), &HeadConfig::default())
        .map_err(|e| e.to_string())?;
    let train = Samples::from_records(&model, &root, &m.records_in(Split::Train)).map_err(|e| e.to_string())?;
    let val = Samples::from_records(&model, &root, &m.records_in(Split::Val)).map_err(|e| e.to_string())?;
    let cfg = TrainConfig { batch_size: 32, max_epochs: 50, ..TrainConfig::default() };
    let (model, history) = train_model(model, &train, &val, &cfg).map_err(|e| e.to_string())?;
    let r = evaluate_model(&model, &m, &root, &CANONICAL).map_err(|e| e.to_string())?;
    let baseline = ConstantPredictor::train_mean(&m).map_err(|e| e.to_string())?;
    let b = evaluate_model(&baseline, &m, &root, &CANONICAL).map_err(|e| e.to_string())?;
    let ratio = r.mean.total / b.mean.total;
    let (nm, nf) = (r.n_male, r.n_female);
    reports.push((r.clone(), nm, nf));
    reports.push((b.clone(), nm, nf));
    within(t.elapsed(), Duration::from_secs(15 * 60))?;
    check(
        ratio <= 0.6,
        format!(
            "model mean MAE {:.3} cm vs train-mean baseline {:.3} cm, ratio {ratio:.3} (limit 0.6); {} epochs, lr {}; {:.0?}",
            r.mean.total,
            b.mean.total,
            history.epochs.len(),
            cfg.learning_rate,
            t.elapsed()
        ),
    )
}

fn early_stopping() -> Outcome {
    let model = build_model(&BackboneConfig::new(BackboneName::TinyTest), &HeadConfig::default())
        .map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let feats = Array2::from_shape_fn((16, model.head.input_dim()), |_| rng.gen_range(0.0..1.0));
    let targets = Array2::from_shape_fn((16, 16), |_| rng.gen_range(20.0..100.0));
    let train = Samples::new(feats, targets).map_err(|e| e.to_string())?;
    let seq = |e: usize| if e <= 5 { 2.0 - 0.25 * e as f64 } else { 0.75 };
    let mut snapshots = Vec::new();
    let cfg = TrainConfig { batch_size: 8, ..TrainConfig::default() };
    let (restored, history) = train_with_validator(model, &train, &cfg, |m, e| {
        snapshots.push(m.head.clone());
        Ok(seq(e))
    })
    .map_err(|e| e.to_string())?;
    let min = (1..=history.epochs.len()).map(seq).fold(f64::INFINITY, f64::min);
    // the restored weights are the epoch at which the minimum was observed
    let restored_loss = snapshots
        .iter()
        .position(|s| *s == restored.head)
        .map(|i| seq(i + 1));
    check(
        history.epochs.len() == 15 && restored_loss == Some(min) && history.best_val_mae == min,
        format!(
            "stopped at epoch {}, best epoch {}, restored val loss {:?} (min {min})",
            history.epochs.len(),
            history.best_epoch,
            restored_loss
        ),
    )
}

fn screening_table() -> Outcome {
    use Sex::*;
    use WaistClass::*;
    let waist = [
        (Male, 93.99, Normal),
        (Male, 94.0, Increased),
        (Male, 101.99, Increased),
        (Male, 102.0, High),
        (Female, 79.99, Normal),
        (Female, 80.0, Increased),
        (Female, 87.99, Increased),
        (Female, 88.0, High),
    ];
    let whr = [
        (Male, 0.90, WhrClass::Normal),
        (Male, 0.91, WhrClass::Increased),
        (Female, 0.85, WhrClass::Normal),
        (Female, 0.86, WhrClass::Increased),
    ];
    let mut bad = Vec::new();
    for (sex, w, want) in waist {
        if classify_waist(sex, w).ok() != Some(want) {
            bad.push(format!("waist {sex} {w}"));
        }
    }
    for (sex, r, want) in whr {
        if classify_whr(sex, r).ok() != Some(want) {
            bad.push(format!("whr {sex} {r}"));
        }
    }
    check(bad.is_empty(), format!("8 waist + 4 WHR boundary cases; mismatches {bad:?}"))
}

fn mae_decomposition(reports: &[(EvalReport, usize, usize)]) -> Outcome {
    let mut reports = reports.to_vec();
    // an extra run on a synthetic manifest with a random constant predictor
    let m = split_dataset(&common::synthetic_manifest(37, 29, 9), DEFAULT_FRACTIONS, 3).map_err(|e| e.to_string())?;
    let mut p = ConstantPredictor::train_mean(&m).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    p.values.iter_mut().for_each(|v| *v += rng.gen_range(-20.0..20.0));
    let r = evaluate_model(&p, &m, Path::new("."), &CANONICAL).map_err(|e| e.to_string())?;
    let (nm, nf) = (r.n_male, r.n_female);
    reports.push((r, nm, nf));
    let mut worst = 0.0f64;
    for (r, nm, nf) in &reports {
        let n = (nm + nf) as f64;
        for row in &r.rows {
            let combined = (row.male * *nm as f64 + row.female * *nf as f64) / n;
            let rel = (row.total - combined).abs() / row.total.abs().max(f64::MIN_POSITIVE);
            worst = worst.max(rel);
        }
    }
    check(worst <= 1e-9, format!("{} evaluation runs; worst relative gap {worst:.2e}", reports.len()))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let run = |name: &str| {
        let out = dir.path().join(name);
        let args = ["anthro", "gen", "--n-per-sex", "12", "--seed", "77", "--out", out.to_str().unwrap()];
        (main_with_args(args), common::tree(&out))
    };
    let (ca, a) = run("a");
    let (cb, b) = run("b");
    let bytes: usize = a.values().map(|v| v.len()).sum();
    check(
        ca == 0 && cb == 0 && !a.is_empty() && a == b,
        format!("{} files, {bytes} bytes, identical {}", a.len(), a == b),
    )
}

fn main() {
    let mut reports = Vec::new();
    let mut failures = 0;
    let mut run = |n: usize, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(d) => println!("criterion {n:>2} {name}: PASS ({d})"),
            Err(d) => {
                failures += 1;
                println!("criterion {n:>2} {name}: FAIL ({d})");
            }
        }
    };
    run(1, "report format", &mut report_format);
    run(2, "geometry oracle", &mut geometry_oracle);
    run(3, "construction vs extraction", &mut construction_equivalence);
    run(4, "split protocol", &mut split_protocol);
    run(5, "model contract", &mut model_contract);
    run(6, "learning sanity", &mut || learning_sanity(&mut reports));
    run(7, "early stopping", &mut early_stopping);
    run(8, "screening boundaries", &mut screening_table);
    run(9, "MAE decomposition", &mut || mae_decomposition(&reports));
    run(10, "end-to-end determinism", &mut determinism);
    if failures > 0 {
        println!("acceptance: {failures} criterion(s) failed");
        std::process::exit(1);
    }
    println!("acceptance: all criteria passed");
}
