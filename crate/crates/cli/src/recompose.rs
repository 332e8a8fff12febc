use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::json;

use stratum_core::dataset::{read_dataset, ANNOTATIONS_FILE};
use stratum_core::edit::{recomposite, replay, Edit};
use stratum_core::engine::{read_trace, TRACE_FILE};
use stratum_core::Scene;

use crate::config::ConfigFile;
use crate::error::{CliError, CliResult};
use crate::manifest::ManifestBuilder;

pub const RECOMPOSED_FILE: &str = "recomposed.png";

#[derive(Debug, Default, Clone, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct RecomposeArgs {
    /// Trace directory (written with --dump-steps) or dataset directory.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Scene id within a dataset; optional when it holds one scene.
    #[arg(long)]
    pub scene: Option<u64>,
    /// JSON list of edits.
    #[arg(long)]
    pub edits: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn load_scene(input: &Path, scene: Option<u64>) -> CliResult<Scene> {
    let ctx = |e: stratum_core::Error| CliError::invalid(e).context(input.display());
    if input.join(TRACE_FILE).is_file() {
        let (image, _, trace) = read_trace(input).map_err(ctx)?;
        return trace.to_scene(&image).map_err(ctx);
    }
    if !input.join(ANNOTATIONS_FILE).is_file() {
        return Err(CliError::invalid(format!(
            "{} holds neither {TRACE_FILE} nor {ANNOTATIONS_FILE}",
            input.display()
        )));
    }
    let dataset = read_dataset(input).map_err(ctx)?;
    let ids: Vec<u64> = dataset.records.iter().map(|r| r.image_id).collect();
    let record = match scene {
        Some(id) => dataset.records.iter().find(|r| r.image_id == id).ok_or_else(|| {
            CliError::invalid(format!("scene {id} is not in {}; scene ids: {ids:?}", input.display()))
        })?,
        None if dataset.records.len() == 1 => &dataset.records[0],
        None => {
            return Err(CliError::invalid(format!(
                "{} holds {} scenes; pick one with --scene (ids: {ids:?})",
                input.display(),
                ids.len()
            )))
        }
    };
    Ok(record.to_scene()?)
}

pub fn run(args: RecomposeArgs, config: &ConfigFile) -> CliResult<()> {
    let manifest = ManifestBuilder::start("recompose");
    let args = config.merge("recompose", &args)?;
    let input = args.input.clone().ok_or_else(|| CliError::invalid("--input is required"))?;
    let edits_path = args.edits.clone().ok_or_else(|| CliError::invalid("--edits is required"))?;
    let out = args.out.clone().ok_or_else(|| CliError::invalid("--out is required"))?;

    let scene = load_scene(&input, args.scene)?;
    let text = std::fs::read_to_string(&edits_path)
        .map_err(|e| CliError::invalid(format!("{}: {e}", edits_path.display())))?;
    let edits: Vec<Edit> =
        serde_json::from_str(&text).map_err(|e| CliError::invalid(format!("{}: {e}", edits_path.display())))?;
    let (edited, warnings) = replay(&scene, &edits).map_err(|e| CliError::invalid(e).context(edits_path.display()))?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    std::fs::create_dir_all(&out)?;
    let png = out.join(RECOMPOSED_FILE);
    recomposite(&edited).save_png(&png).map_err(CliError::internal)?;
    eprintln!("applied {} edit(s); wrote {}", edits.len(), png.display());
    manifest
        .finish(
            None,
            &args,
            vec![input, edits_path],
            vec![png],
            json!({ "edits": edits.len(), "instances": edited.len(), "warnings": warnings }),
        )?
        .write(&out)
}
