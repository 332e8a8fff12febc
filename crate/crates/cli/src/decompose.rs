use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::json;

use stratum_core::components::{
    build_completer, build_segmenter, CompleterKind, CorruptionConfig, HeuristicSegmenter, InpaintCompleter,
    SegmenterKind,
};
use stratum_core::dataset::{read_dataset, ANNOTATIONS_FILE};
use stratum_core::engine::{decompose, write_trace, EngineConfig};
use stratum_core::synth::derive_seed;
use stratum_core::{Appearance, Scene};

use crate::config::ConfigFile;
use crate::error::{CliError, CliResult};
use crate::manifest::ManifestBuilder;
use crate::par_map;

/// Per-scene trace directories are named `scene_<image id, 6 digits>`.
pub fn scene_dir_name(image_id: u64) -> String {
    format!("scene_{image_id:06}")
}

pub fn parse_scene_dir_name(name: &str) -> Option<u64> {
    name.strip_prefix("scene_")?.parse().ok()
}

#[derive(Debug, Default, Clone, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct DecomposeArgs {
    /// Dataset directory, or a single PNG (ground-truth-free components only).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Output directory for traces.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// oracle, corrupted, or heuristic [default: oracle].
    #[arg(long)]
    pub segmenter: Option<String>,
    /// oracle or inpaint [default: oracle].
    #[arg(long)]
    pub completer: Option<String>,
    #[arg(long)]
    pub class_threshold: Option<f64>,
    #[arg(long)]
    pub nonocc_threshold: Option<f64>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// Defaults to the dataset's threshold.
    #[arg(long)]
    pub overlap_threshold: Option<u64>,
    /// Also write the completed image of every step.
    #[arg(long)]
    pub dump_steps: bool,
    /// Seed for the corrupted segmenter [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub mask_erode_px: Option<u32>,
    #[arg(long)]
    pub mask_dilate_px: Option<u32>,
    #[arg(long)]
    pub drop_prob: Option<f64>,
    #[arg(long)]
    pub label_flip_prob: Option<f64>,
    /// Worker threads [default: 1].
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Serialize)]
struct Settings {
    input: PathBuf,
    out: PathBuf,
    segmenter: SegmenterKind,
    completer: CompleterKind,
    engine: EngineConfig,
    corruption: CorruptionConfig,
    heuristic: HeuristicSegmenter,
    inpaint: InpaintCompleter,
    dump_steps: bool,
    seed: u64,
    jobs: usize,
}

struct Job {
    image_id: Option<u64>,
    input: Appearance,
    ground_truth: Option<Scene>,
}

#[derive(Debug, Serialize)]
struct SceneSummary {
    image_id: Option<u64>,
    steps: usize,
    instances: usize,
}

fn load_jobs(input: &Path) -> CliResult<(Vec<Job>, Option<u64>)> {
    if input.is_file() {
        let image = Appearance::load_png(input).map_err(|e| CliError::invalid(e).context(input.display()))?;
        return Ok((
            vec![Job {
                image_id: None,
                input: image,
                ground_truth: None,
            }],
            None,
        ));
    }
    if !input.join(ANNOTATIONS_FILE).is_file() {
        return Err(CliError::invalid(format!(
            "{} is neither a PNG file nor a dataset directory",
            input.display()
        )));
    }
    let dataset = read_dataset(input).map_err(|e| CliError::invalid(e).context(input.display()))?;
    let jobs = dataset
        .records
        .iter()
        .map(|r| {
            Ok(Job {
                image_id: Some(r.image_id),
                input: r.composite.clone(),
                ground_truth: Some(r.to_scene()?),
            })
        })
        .collect::<CliResult<_>>()?;
    Ok((jobs, Some(dataset.overlap_threshold)))
}

pub fn run(args: DecomposeArgs, config: &ConfigFile) -> CliResult<()> {
    let manifest = ManifestBuilder::start("decompose");
    let args = config.merge("decompose", &args)?;
    let input = args.input.clone().ok_or_else(|| CliError::invalid("--input is required"))?;
    let out = args.out.clone().ok_or_else(|| CliError::invalid("--out is required"))?;
    let segmenter: SegmenterKind = args.segmenter.as_deref().unwrap_or("oracle").parse()?;
    let completer: CompleterKind = args.completer.as_deref().unwrap_or("oracle").parse()?;
    let (jobs, dataset_threshold) = load_jobs(&input)?;

    let d = EngineConfig::default();
    let engine = EngineConfig {
        class_score_threshold: args.class_threshold.unwrap_or(d.class_score_threshold),
        nonocc_threshold: args.nonocc_threshold.unwrap_or(d.nonocc_threshold),
        max_steps: args.max_steps.unwrap_or(d.max_steps),
        overlap_threshold: args.overlap_threshold.or(dataset_threshold).unwrap_or(d.overlap_threshold),
        ..d
    };
    engine.validate()?;
    let c = CorruptionConfig::default();
    let corruption = CorruptionConfig {
        mask_erode_px: args.mask_erode_px.unwrap_or(c.mask_erode_px),
        mask_dilate_px: args.mask_dilate_px.unwrap_or(c.mask_dilate_px),
        drop_prob: args.drop_prob.unwrap_or(c.drop_prob),
        label_flip_prob: args.label_flip_prob.unwrap_or(c.label_flip_prob),
        seed: args.seed.unwrap_or(0),
    };
    corruption.validate()?;
    let s = Settings {
        input,
        out,
        segmenter,
        completer,
        engine,
        corruption,
        heuristic: HeuristicSegmenter::default(),
        inpaint: InpaintCompleter::default(),
        dump_steps: args.dump_steps,
        seed: args.seed.unwrap_or(0),
        jobs: args.jobs.unwrap_or(1),
    };

    let summaries = par_map(s.jobs, &jobs, |job| -> CliResult<SceneSummary> {
        let gt = job.ground_truth.as_ref();
        let corruption = CorruptionConfig {
            seed: derive_seed(s.seed, &[job.image_id.unwrap_or(0)]),
            ..s.corruption.clone()
        };
        let mut seg = build_segmenter(s.segmenter, gt, s.engine.overlap_threshold, &corruption, &s.heuristic)?;
        let mut comp = build_completer(s.completer, gt, &s.inpaint)?;
        let (trace, matrix) = decompose(&job.input, &mut *seg, &mut *comp, &s.engine).map_err(|e| {
            let e = CliError::from(e);
            match job.image_id {
                Some(id) => e.context(format!("scene {id}")),
                None => e,
            }
        })?;
        let dir = match job.image_id {
            Some(id) => s.out.join(scene_dir_name(id)),
            None => s.out.clone(),
        };
        write_trace(&dir, &job.input, &trace, &matrix, s.dump_steps)?;
        Ok(SceneSummary {
            image_id: job.image_id,
            steps: trace.steps.len(),
            instances: trace.instance_ids().len(),
        })
    })?
    .into_iter()
    .collect::<CliResult<Vec<_>>>()?;

    eprintln!("decomposed {} scene(s) into {}", summaries.len(), s.out.display());
    manifest
        .finish(
            Some(s.seed),
            &s,
            vec![s.input.clone()],
            vec![s.out.clone()],
            json!({ "scenes": summaries }),
        )?
        .write(&s.out)
}
