//! End-to-end acceptance checks. Each criterion prints one `PASS` or `FAIL`
//! line with its measurements; the process exits nonzero if any fails.
//!
//! Run with `cargo test -p stratum-core --test acceptance`.

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stratum_core::components::{CorruptedSegmenter, CorruptionConfig, OracleCompleter, OracleSegmenter};
use stratum_core::dataset::{read_dataset, write_dataset, Dataset, DatasetRecord, ANNOTATIONS_FILE};
use stratum_core::engine::{decompose, Completer, EngineConfig, Segmenter, StepContext};
use stratum_core::metrics::completion::{psnr_from_rmse, rmse_unit, ssim};
use stratum_core::metrics::{
    average_precision, ground_truth_instances, oap_counts, order_by_area, order_by_yaxis, predictions_from_trace,
    ApEvaluator, AreaConvention, GtInstance, OapEvaluator, PredInstance, SizeBucket, IOU_THRESHOLDS,
};
use stratum_core::order::{absolute_order, binary_labels, pairwise_from_trace, validate};
use stratum_core::scene::composite;
use stratum_core::synth::{generate_scene, ground_truth_matrix, peel_plan, DepthMode, SynthConfig};
use stratum_core::{Appearance, BBox, Error, InstanceId, Mask, OcclusionMatrix, Result, Scene};

const SEED: u64 = 20_240_611;

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(name: &str, limit: Duration, f: impl FnOnce() -> Result<Outcome>) -> bool {
    let start = Instant::now();
    let result = f();
    let elapsed = start.elapsed();
    let (pass, detail) = match result {
        Ok(o) => (o.pass && elapsed < limit, o.detail),
        Err(e) => (false, format!("error: {e}")),
    };
    println!(
        "{} {name}: {detail} [{:.2}s, limit {}s]",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        limit.as_secs()
    );
    pass
}

fn synth_base() -> SynthConfig {
    SynthConfig {
        seed: SEED,
        width: 256,
        height: 256,
        min_objects: 5,
        max_objects: 12,
        ..Default::default()
    }
}

/// Enough steps to peel every instance of a 5 to 12 object scene.
fn engine_cfg() -> EngineConfig {
    EngineConfig {
        max_steps: 12,
        ..Default::default()
    }
}

fn oracle_round_trip() -> Result<Outcome> {
    let base = synth_base();
    let mut ap = ApEvaluator::default();
    let mut oap = OapEvaluator::default();
    let mut background_mismatches = Vec::new();
    for k in 0..100 {
        let scene = generate_scene(&base.for_scene(k))?;
        let cfg = engine_cfg();
        let mut seg = OracleSegmenter::new(scene.clone(), cfg.overlap_threshold);
        let mut comp = OracleCompleter::new(scene.clone());
        let input = composite(&scene);
        let (trace, w) = decompose(&input, &mut seg, &mut comp, &cfg)?;
        let preds = predictions_from_trace(&trace);
        let gts = ground_truth_instances(&scene);
        ap.add(&preds, &gts)?;
        oap.add(&preds, &w, &gts, &ground_truth_matrix(&scene, cfg.overlap_threshold))?;
        if trace.final_image(&input) != scene.background() {
            background_mismatches.push(k);
        }
    }
    let ap = ap.report();
    let oap = oap.report();
    let ap_ok = ap.per_threshold.iter().all(|v| *v == Some(1.0));
    let oap_ok = [oap.oap50, oap.oap75, oap.oap85].iter().all(|v| *v == Some(1.0));
    Ok(Outcome {
        pass: ap_ok && oap_ok && background_mismatches.is_empty(),
        detail: format!(
            "100 scenes; AP per threshold {:?}; OAP50/75/85 {:?}/{:?}/{:?}; background mismatches {:?}",
            ap.per_threshold, oap.oap50, oap.oap75, oap.oap85, background_mismatches
        ),
    })
}

fn random_dag(rng: &mut ChaCha8Rng) -> OcclusionMatrix {
    let n = rng.random_range(0..=20u32);
    let mut depth: Vec<u32> = (0..n).collect();
    rand::seq::SliceRandom::shuffle(depth.as_mut_slice(), rng);
    let density = rng.random::<f64>();
    let mut w = OcclusionMatrix::zeros(0..n);
    for a in 0..n {
        for b in a + 1..n {
            if rng.random::<f64>() < density {
                let (front, back) = if depth[a as usize] < depth[b as usize] { (a, b) } else { (b, a) };
                w.set_front(front, back).expect("ids exist");
            }
        }
    }
    w
}

/// Order from the recurrence, by memoized recursion over occluders.
fn recurrence_order(w: &OcclusionMatrix) -> BTreeMap<InstanceId, u32> {
    fn go(w: &OcclusionMatrix, i: usize, memo: &mut Vec<Option<u32>>) -> u32 {
        if let Some(v) = memo[i] {
            return v;
        }
        let occluders: Vec<usize> = (0..w.len()).filter(|&j| w.at(j, i) == 1).collect();
        let v = occluders.into_iter().map(|j| go(w, j, memo) + 1).max().unwrap_or(0);
        memo[i] = Some(v);
        v
    }
    let mut memo = vec![None; w.len()];
    (0..w.len()).map(|i| (w.ids()[i], go(w, i, &mut memo))).collect()
}

fn order_consistency() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut bad = Vec::new();
    for k in 0..1000 {
        let w = random_dag(&mut rng);
        let order = absolute_order(&w)?;
        let expected = recurrence_order(&w);
        let labels = binary_labels(&w);
        let labels_ok = labels.iter().all(|(id, &l)| (l == 0) == (expected[id] == 0));
        if order.0 != expected || !labels_ok || labels.len() != w.len() {
            bad.push(k);
        }
    }
    Ok(Outcome {
        pass: bad.is_empty(),
        detail: format!("1000 random acyclic matrices (N <= 20); mismatches {bad:?}"),
    })
}

/// One instance per step, ordered by peel layer then id.
fn sequential_schedule(scene: &Scene) -> (Vec<InstanceId>, Vec<BTreeSet<InstanceId>>) {
    let layers = peel_plan(scene, 1);
    (layers.iter().flat_map(|l| l.iter().copied()).collect(), layers)
}

fn steps_of(order: &[InstanceId]) -> BTreeMap<InstanceId, usize> {
    order.iter().enumerate().map(|(s, &id)| (id, s)).collect()
}

fn shift_robustness() -> Result<Outcome> {
    let base = synth_base();
    let (mut used, mut k) = (0, 0u64);
    let mut failures = Vec::new();
    while used < 200 {
        let scene = generate_scene(&base.for_scene(10_000 + k))?;
        k += 1;
        let (canonical, layers) = sequential_schedule(&scene);
        // two instances of one layer never overlap, and only same-layer
        // instances sit between them in the schedule
        let Some(layer) = layers.iter().find(|l| l.len() >= 2) else {
            continue;
        };
        used += 1;
        let mut members = layer.iter();
        let (a, b) = (*members.next().expect("two"), *members.next_back().expect("two"));
        let mut swapped = canonical.clone();
        let (pa, pb) = (
            canonical.iter().position(|&x| x == a).expect("scheduled"),
            canonical.iter().position(|&x| x == b).expect("scheduled"),
        );
        swapped.swap(pa, pb);
        let by_layer: BTreeMap<InstanceId, usize> =
            layers.iter().enumerate().flat_map(|(s, l)| l.iter().map(move |&id| (id, s))).collect();

        let masks = scene.amodal_masks();
        let w_canonical = pairwise_from_trace(&masks, &steps_of(&canonical), 1)?;
        let w_swapped = pairwise_from_trace(&masks, &steps_of(&swapped), 1)?;
        let w_layers = pairwise_from_trace(&masks, &by_layer, 1)?;
        let steps_differ = steps_of(&canonical) != steps_of(&swapped);
        if !steps_differ || w_canonical != w_swapped || w_canonical != w_layers || w_canonical != ground_truth_matrix(&scene, 1) {
            failures.push(k - 1);
        }
    }
    Ok(Outcome {
        pass: failures.is_empty(),
        detail: format!("200 scenes (of {k} generated); swapped, sequential and per-layer schedules disagreeing: {failures:?}"),
    })
}

fn metric_closed_forms() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let img = Appearance::from_fn(48, 40, |_, _| [rng.random(), rng.random(), rng.random()]);
    let s = ssim(&img, &img)?;
    let psnr = psnr_from_rmse(rmse_unit(&vec![0.25; 300], &vec![0.75; 300])?);

    let rect = |x, y, w, h| Mask::from_rect(64, 64, BBox::new(x, y, w, h));
    let gts = vec![GtInstance { id: 0, mask: rect(0, 0, 10, 10) }, GtInstance { id: 1, mask: rect(30, 30, 10, 10) }];
    let preds = vec![
        PredInstance { id: 0, mask: rect(0, 0, 10, 10), class_score: 0.9 },
        PredInstance { id: 1, mask: rect(50, 0, 10, 10), class_score: 0.8 },
    ];
    let ap = average_precision(&preds, &gts, 0.5, SizeBucket::All)?;

    // chain of five: four occluded pairs, one predicted backwards
    let chain: Vec<GtInstance> = (0..5).map(|i| GtInstance { id: i, mask: rect(i * 10, i * 10, 15, 15) }).collect();
    let mut gt_w = OcclusionMatrix::zeros(0..5);
    for i in 0..4 {
        gt_w.set_front(i, i + 1)?;
    }
    let mut pred_w = gt_w.clone();
    pred_w.set_front(3, 2)?;
    let chain_preds: Vec<PredInstance> =
        chain.iter().map(|g| PredInstance { id: g.id, mask: g.mask.clone(), class_score: 1.0 }).collect();
    let oap = oap_counts(&chain_preds, &pred_w, &chain, &gt_w, 0.5)?.oap(SizeBucket::All);

    let ssim_ok = (s - 1.0).abs() <= 1e-9;
    let psnr_ok = (psnr - 6.0206).abs() <= 1e-3;
    Ok(Outcome {
        pass: ssim_ok && psnr_ok && ap == Some(0.5) && oap == Some(0.75),
        detail: format!("SSIM(x,x) {s:.12}; PSNR(0.5 error) {psnr:.6} dB; AP {ap:?}; OAP {oap:?}"),
    })
}

fn degradation() -> Result<Outcome> {
    let base = synth_base();
    let scenes: Vec<Scene> = (0..100).map(|k| generate_scene(&base.for_scene(20_000 + k))).collect::<Result<_>>()?;
    let mut means = Vec::new();
    for erode in [0u32, 2, 4, 8] {
        let mut ev = OapEvaluator::default();
        for (k, scene) in scenes.iter().enumerate() {
            let cfg = engine_cfg();
            let corruption = CorruptionConfig { mask_erode_px: erode, seed: SEED + k as u64, ..Default::default() };
            let mut seg = CorruptedSegmenter::new(OracleSegmenter::new(scene.clone(), 1), corruption)?;
            let mut comp = OracleCompleter::new(scene.clone());
            let (trace, w) = decompose(&composite(scene), &mut seg, &mut comp, &cfg)?;
            ev.add(&predictions_from_trace(&trace), &w, &ground_truth_instances(scene), &ground_truth_matrix(scene, 1))?;
        }
        means.push(ev.report().oap.unwrap_or(0.0));
    }
    let monotone = means.windows(2).all(|p| p[1] <= p[0]);
    let drop = means[0] - means[3];
    Ok(Outcome {
        pass: monotone && drop >= 0.01,
        detail: format!("mean OAP at erode 0/2/4/8 px: {means:.4?}; drop {drop:.4}"),
    })
}

fn baseline_sanity() -> Result<Outcome> {
    let base = SynthConfig { depth_mode: DepthMode::BottomFront, ..synth_base() };
    let mut ev = OapEvaluator::default();
    let mut area_mismatches = 0usize;
    for k in 0..100 {
        let scene = generate_scene(&base.for_scene(30_000 + k))?;
        let amodal = scene.amodal_masks();
        let gts = ground_truth_instances(&scene);
        let preds: Vec<PredInstance> =
            gts.iter().map(|g| PredInstance { id: g.id, mask: g.mask.clone(), class_score: 1.0 }).collect();
        let gt_w = ground_truth_matrix(&scene, 1);
        ev.add(&preds, &order_by_yaxis(&amodal, 1)?, &gts, &gt_w)?;

        let by_area = order_by_area(&amodal, AreaConvention::LargerBehind, 1)?;
        for (&a, ma) in &amodal {
            for (&b, mb) in &amodal {
                let overlapping = ma.iter_set().any(|(x, y)| mb.get(x, y));
                let want = if a == b || !overlapping { 0 } else { mb.area().cmp(&ma.area()) as i8 };
                area_mismatches += (by_area.get(a, b)? != want) as usize;
            }
        }
        if !validate(&by_area).is_valid() {
            area_mismatches += 1;
        }
    }
    let r = ev.report();
    let yaxis_ok = r.per_threshold.iter().all(|v| *v == Some(1.0));
    Ok(Outcome {
        pass: yaxis_ok && area_mismatches == 0,
        detail: format!("100 bottom-front scenes; y-axis OAP {:?}; area entries differing from oracle {area_mismatches}", r.oap),
    })
}

fn dataset_round_trip() -> Result<Outcome> {
    let base = synth_base();
    let records: Vec<DatasetRecord> = (0..50)
        .map(|k| generate_scene(&base.for_scene(40_000 + k)).map(|s| DatasetRecord::from_scene(k, &s, 1)))
        .collect::<Result<_>>()?;
    let dataset = Dataset { overlap_threshold: 1, records };
    let dir = tempfile::tempdir()?;
    write_dataset(&dataset, dir.path())?;
    let back = read_dataset(dir.path())?;

    let schema_path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../docs/annotations.schema.json");
    let schema: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(schema_path)?)?;
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join(ANNOTATIONS_FILE))?)?;
    let validator = jsonschema::validator_for(&schema).map_err(|e| Error::InvalidConfig(format!("schema: {e}")))?;
    let schema_errors: Vec<String> = validator.iter_errors(&doc).take(3).map(|e| e.to_string()).collect();
    Ok(Outcome {
        pass: back == dataset && schema_errors.is_empty(),
        detail: format!(
            "50 scenes; identical after read {}; schema errors {schema_errors:?}",
            back == dataset
        ),
    })
}

/// Passes through the oracle completer, then flips one pixel outside the hole at step 2.
struct TamperAtStep2(OracleCompleter);

impl Completer for TamperAtStep2 {
    fn complete(&mut self, image: &Appearance, hole: &Mask, ctx: &StepContext<'_>) -> Result<Appearance> {
        let mut out = self.0.complete(image, hole, ctx)?;
        if ctx.step == 2 {
            let (x, y) = hole.complement().iter_set().next().expect("hole is not the whole canvas");
            let p = out.get(x, y);
            out.set(x, y, [p[0].wrapping_add(1), p[1], p[2]]);
        }
        Ok(out)
    }
}

fn contract_enforcement() -> Result<Outcome> {
    // first scene deep enough to reach step 2
    let base = synth_base();
    let scene = (0..)
        .map(|k| generate_scene(&base.for_scene(50_000 + k)).expect("valid config"))
        .find(|s| peel_plan(s, 1).len() >= 3)
        .expect("some scene has three layers");
    let mut seg: Box<dyn Segmenter> = Box::new(OracleSegmenter::new(scene.clone(), 1));
    let mut comp = TamperAtStep2(OracleCompleter::new(scene.clone()));
    let result = decompose(&composite(&scene), &mut seg, &mut comp, &engine_cfg());
    let (pass, detail) = match result {
        Err(e @ Error::ContractViolation { step: 2, component: "completer", .. }) => {
            let msg = e.to_string();
            (msg.contains("step 2"), msg)
        }
        Err(e) => (false, format!("wrong error: {e}")),
        Ok(_) => (false, "tampered output accepted".into()),
    };
    Ok(Outcome { pass, detail })
}

fn main() {
    // the IoU grid is part of the metric definition
    assert_eq!(IOU_THRESHOLDS.len(), 10);
    let results = [
        check("oracle round trip", Duration::from_secs(60), oracle_round_trip),
        check("order representation consistency", Duration::from_secs(5), order_consistency),
        check("shift robustness", Duration::from_secs(10), shift_robustness),
        check("metric closed forms", Duration::from_secs(10), metric_closed_forms),
        check("degradation monotonicity", Duration::from_secs(120), degradation),
        check("baseline ordering sanity", Duration::from_secs(60), baseline_sanity),
        check("dataset round trip", Duration::from_secs(60), dataset_round_trip),
        check("engine contract enforcement", Duration::from_secs(10), contract_enforcement),
    ];
    let failed = results.iter().filter(|p| !**p).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
