use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::json;

use stratum_core::dataset::{read_dataset, DatasetRecord};
use stratum_core::engine::{TraceDocument, TRACE_FILE};
use stratum_core::metrics::{
    completion_metrics, ground_truth_instances, order_by_area, order_by_iou_area, order_by_yaxis, APReport,
    ApEvaluator, AreaConvention, CompletionReport, GtInstance, OAPReport, OapEvaluator, OrderingAlgorithm,
    PredInstance,
};
use stratum_core::{Appearance, InstanceId, Mask, OcclusionMatrix};

use crate::config::ConfigFile;
use crate::decompose::parse_scene_dir_name;
use crate::error::{CliError, CliResult};
use crate::manifest::ManifestBuilder;
use crate::par_map;

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TEXT: &str = "report.txt";

#[derive(Debug, Default, Clone, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct EvalArgs {
    /// Directory of traces written by `decompose`.
    #[arg(long)]
    pub pred: Option<PathBuf>,
    /// Ground-truth dataset directory.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// Report directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also score the heuristic ordering algorithms on the predicted masks.
    #[arg(long)]
    pub baselines: bool,
    /// larger-front or larger-behind, for the Area baseline [default: larger-behind].
    #[arg(long)]
    pub area_convention: Option<String>,
    /// Worker threads [default: 1].
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Serialize)]
struct Settings {
    pred: PathBuf,
    gt: PathBuf,
    out: PathBuf,
    baselines: bool,
    area_convention: AreaConvention,
    jobs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRow {
    pub algorithm: OrderingAlgorithm,
    pub label: String,
    pub oap: OAPReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scenes: usize,
    pub ap: APReport,
    pub oap: OAPReport,
    /// Mean over scenes of the final completed image against the ground-truth background.
    pub background_completion: Option<CompletionReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baselines: Option<Vec<BaselineRow>>,
}

struct SceneEval {
    preds: Vec<PredInstance>,
    pred_w: OcclusionMatrix,
    gts: Vec<GtInstance>,
    gt_w: OcclusionMatrix,
    completion: CompletionReport,
    baselines: Vec<(OrderingAlgorithm, OcclusionMatrix)>,
}

fn parse_convention(s: &str) -> CliResult<AreaConvention> {
    match s {
        "larger-front" => Ok(AreaConvention::LargerFront),
        "larger-behind" => Ok(AreaConvention::LargerBehind),
        _ => Err(CliError::invalid(format!(
            "unknown area convention '{s}'; valid names: larger-front, larger-behind"
        ))),
    }
}

/// Trace directories under `dir`, keyed by scene id.
fn find_traces(dir: &Path) -> CliResult<BTreeMap<u64, PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::invalid(format!("{}: {e}", dir.display())))?;
    let mut found = BTreeMap::new();
    for entry in entries {
        let path = entry?.path();
        let id = path.file_name().and_then(|n| n.to_str()).and_then(parse_scene_dir_name);
        if let (Some(id), true) = (id, path.join(TRACE_FILE).is_file()) {
            found.insert(id, path);
        }
    }
    Ok(found)
}

fn check_ids(pred: &BTreeMap<u64, PathBuf>, gt: &[DatasetRecord]) -> CliResult<()> {
    let gt_ids: BTreeSet<u64> = gt.iter().map(|r| r.image_id).collect();
    let pred_ids: BTreeSet<u64> = pred.keys().copied().collect();
    let no_pred: Vec<_> = gt_ids.difference(&pred_ids).collect();
    let no_gt: Vec<_> = pred_ids.difference(&gt_ids).collect();
    if no_pred.is_empty() && no_gt.is_empty() {
        return Ok(());
    }
    let mut msg = String::from("prediction and ground-truth scene ids differ:");
    if !no_pred.is_empty() {
        let _ = write!(msg, " no prediction for scene(s) {no_pred:?};");
    }
    if !no_gt.is_empty() {
        let _ = write!(msg, " no ground truth for scene(s) {no_gt:?};");
    }
    msg.pop();
    Err(CliError::invalid(msg))
}

fn load_doc(dir: &Path) -> CliResult<(TraceDocument, Appearance)> {
    let path = dir.join(TRACE_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))?;
    let doc: TraceDocument =
        serde_json::from_str(&text).map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))?;
    let final_image = Appearance::load_png(dir.join(&doc.final_image))
        .map_err(|e| CliError::invalid(e).context(dir.display()))?;
    Ok((doc, final_image))
}

/// Predicted visible masks: each amodal mask minus everything removed in
/// earlier steps.
fn predicted_visible(doc: &TraceDocument) -> CliResult<BTreeMap<InstanceId, Mask>> {
    let mut visible = BTreeMap::new();
    let mut earlier: Option<Mask> = None;
    for step in &doc.steps {
        for e in &step.selected {
            let v = match &earlier {
                Some(front) => e.detection.mask.difference(front)?,
                None => e.detection.mask.clone(),
            };
            visible.insert(e.id, v);
        }
        for e in &step.selected {
            match &mut earlier {
                Some(front) => front.union_in_place(&e.detection.mask)?,
                None => earlier = Some(e.detection.mask.clone()),
            }
        }
    }
    Ok(visible)
}

fn evaluate_scene(dir: &Path, record: &DatasetRecord, s: &Settings, overlap_threshold: u64) -> CliResult<SceneEval> {
    let (doc, final_image) = load_doc(dir)?;
    let preds: Vec<PredInstance> = doc
        .steps
        .iter()
        .flat_map(|st| &st.selected)
        .map(|e| PredInstance {
            id: e.id,
            mask: e.detection.mask.clone(),
            class_score: e.detection.class_score,
        })
        .collect();
    let scene = record.to_scene()?;
    let completion = completion_metrics(&final_image, &record.background)
        .map_err(|e| CliError::invalid(e).context(format!("scene {}", record.image_id)))?;
    let mut baselines = Vec::new();
    if s.baselines {
        let amodal: BTreeMap<InstanceId, Mask> = preds.iter().map(|p| (p.id, p.mask.clone())).collect();
        let visible = predicted_visible(&doc)?;
        for alg in OrderingAlgorithm::ALL {
            let w = match alg {
                OrderingAlgorithm::Area => order_by_area(&amodal, s.area_convention, overlap_threshold)?,
                OrderingAlgorithm::YAxis => order_by_yaxis(&amodal, overlap_threshold)?,
                OrderingAlgorithm::IouArea => order_by_iou_area(&visible, &amodal, overlap_threshold)?,
                OrderingAlgorithm::LayerOrder => doc.matrix.clone(),
            };
            baselines.push((alg, w));
        }
    }
    Ok(SceneEval {
        preds,
        pred_w: doc.matrix,
        gts: ground_truth_instances(&scene),
        gt_w: record.matrix()?,
        completion,
        baselines,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{:.4}", v))
}

/// Left-aligned first column, right-aligned numbers.
pub fn render_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let line = |cells: Vec<&str>| {
        let mut s = String::new();
        for (i, (cell, w)) in cells.iter().zip(&widths).enumerate() {
            if i == 0 {
                let _ = write!(s, "{cell:<w$}");
            } else {
                let _ = write!(s, "  {cell:>w$}");
            }
        }
        s.trim_end().to_string() + "\n"
    };
    let mut out = line(header.to_vec());
    out += &line(widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().iter().map(String::as_str).collect());
    for row in rows {
        out += &line(row.iter().map(String::as_str).collect());
    }
    out
}

fn oap_cells(r: &OAPReport) -> Vec<String> {
    [r.oap, r.oap50, r.oap75, r.oap85, r.oap_s, r.oap_m, r.oap_l]
        .into_iter()
        .map(fmt_opt)
        .collect()
}

const OAP_HEADER: [&str; 7] = ["OAP", "OAP50", "OAP75", "OAP85", "OAP_S", "OAP_M", "OAP_L"];

pub fn render_report(r: &EvalReport) -> String {
    let mut out = format!("scenes: {}\n\n", r.scenes);
    let ap = &r.ap;
    out += &render_table(
        &["mask", "AP", "AP50", "AP75", "AP_S", "AP_M", "AP_L"],
        &[std::iter::once("amodal".to_string())
            .chain([ap.ap, ap.ap50, ap.ap75, ap.ap_s, ap.ap_m, ap.ap_l].into_iter().map(fmt_opt))
            .collect()],
    );
    out += "\n";
    let mut header = vec!["ordering"];
    header.extend(OAP_HEADER);
    header.push("false rel.");
    let mut row = vec!["predicted".to_string()];
    row.extend(oap_cells(&r.oap));
    row.push(fmt_opt(r.oap.false_relation_rate));
    out += &render_table(&header, &[row]);
    out += "\n";
    let c = r.background_completion.as_ref();
    out += &render_table(
        &["completion", "RMSE", "SSIM", "PSNR"],
        &[vec![
            "background".into(),
            fmt_opt(c.map(|c| c.rmse)),
            fmt_opt(c.map(|c| c.ssim)),
            c.map_or_else(|| "-".into(), |c| format!("{:.2}", c.psnr)),
        ]],
    );
    if let Some(rows) = &r.baselines {
        out += "\n";
        let mut header = vec!["Ordering Algorithm"];
        header.extend(OAP_HEADER);
        let rows: Vec<Vec<String>> = rows
            .iter()
            .map(|b| std::iter::once(b.label.clone()).chain(oap_cells(&b.oap)).collect())
            .collect();
        out += &render_table(&header, &rows);
    }
    out
}

pub fn run(args: EvalArgs, config: &ConfigFile) -> CliResult<()> {
    let manifest = ManifestBuilder::start("eval");
    let args = config.merge("eval", &args)?;
    let s = Settings {
        pred: args.pred.ok_or_else(|| CliError::invalid("--pred is required"))?,
        gt: args.gt.ok_or_else(|| CliError::invalid("--gt is required"))?,
        out: args.out.ok_or_else(|| CliError::invalid("--out is required"))?,
        baselines: args.baselines,
        area_convention: parse_convention(args.area_convention.as_deref().unwrap_or("larger-behind"))?,
        jobs: args.jobs.unwrap_or(1),
    };
    let dataset = read_dataset(&s.gt).map_err(|e| CliError::invalid(e).context(s.gt.display()))?;
    let traces = find_traces(&s.pred)?;
    check_ids(&traces, &dataset.records)?;

    let scenes = par_map(s.jobs, &dataset.records, |rec| {
        evaluate_scene(&traces[&rec.image_id], rec, &s, dataset.overlap_threshold)
            .map_err(|e| e.context(format!("scene {}", rec.image_id)))
    })?
    .into_iter()
    .collect::<CliResult<Vec<_>>>()?;

    let mut ap = ApEvaluator::default();
    let mut oap = OapEvaluator::default();
    let mut baseline_evals: BTreeMap<usize, OapEvaluator> = BTreeMap::new();
    let mut completion = [0.0f64; 3];
    for sc in &scenes {
        ap.add(&sc.preds, &sc.gts)?;
        oap.add(&sc.preds, &sc.pred_w, &sc.gts, &sc.gt_w)?;
        for (i, (_, w)) in sc.baselines.iter().enumerate() {
            baseline_evals.entry(i).or_default().add(&sc.preds, w, &sc.gts, &sc.gt_w)?;
        }
        completion[0] += sc.completion.rmse;
        completion[1] += sc.completion.ssim;
        completion[2] += sc.completion.psnr;
    }
    let n = scenes.len();
    let report = EvalReport {
        scenes: n,
        ap: ap.report(),
        oap: oap.report(),
        background_completion: (n > 0).then(|| CompletionReport {
            rmse: completion[0] / n as f64,
            ssim: completion[1] / n as f64,
            psnr: completion[2] / n as f64,
        }),
        baselines: s.baselines.then(|| {
            OrderingAlgorithm::ALL
                .iter()
                .enumerate()
                .map(|(i, &alg)| BaselineRow {
                    algorithm: alg,
                    label: alg.label().into(),
                    oap: baseline_evals.get(&i).cloned().unwrap_or_default().report(),
                })
                .collect()
        }),
    };

    std::fs::create_dir_all(&s.out)?;
    std::fs::write(s.out.join(REPORT_JSON), serde_json::to_string_pretty(&report)?)?;
    let text = render_report(&report);
    std::fs::write(s.out.join(REPORT_TEXT), &text)?;
    print!("{text}");
    manifest
        .finish(
            None,
            &s,
            vec![s.pred.clone(), s.gt.clone()],
            vec![s.out.join(REPORT_JSON), s.out.join(REPORT_TEXT)],
            json!({ "ap": report.ap.ap, "oap": report.oap.oap }),
        )?
        .write(&s.out)
}
