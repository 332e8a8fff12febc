use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::json;

use stratum_core::dataset::{write_dataset, Dataset, DatasetRecord};
use stratum_core::synth::{generate_scene, SynthConfig};

use crate::config::ConfigFile;
use crate::error::{CliError, CliResult};
use crate::manifest::ManifestBuilder;
use crate::par_map;

#[derive(Debug, Default, Clone, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct SynthArgs {
    /// Output dataset directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Number of scenes [default: 10].
    #[arg(long)]
    pub count: Option<u64>,
    /// Base seed; scene k uses a seed derived from this and k [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub width: Option<u32>,
    #[arg(long)]
    pub height: Option<u32>,
    #[arg(long)]
    pub min_objects: Option<usize>,
    #[arg(long)]
    pub max_objects: Option<usize>,
    /// Minimum shared amodal pixels for two instances to be ordered.
    #[arg(long)]
    pub overlap_threshold: Option<u64>,
    /// Worker threads [default: 1].
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Serialize)]
struct Settings {
    out: PathBuf,
    count: u64,
    jobs: usize,
    synth: SynthConfig,
}

fn resolve(args: SynthArgs) -> CliResult<Settings> {
    let d = SynthConfig::default();
    let synth = SynthConfig {
        width: args.width.unwrap_or(d.width),
        height: args.height.unwrap_or(d.height),
        min_objects: args.min_objects.unwrap_or(d.min_objects),
        max_objects: args.max_objects.unwrap_or(d.max_objects),
        overlap_threshold: args.overlap_threshold.unwrap_or(d.overlap_threshold),
        seed: args.seed.unwrap_or(d.seed),
        ..d
    };
    synth.validate()?;
    Ok(Settings {
        out: args.out.ok_or_else(|| CliError::invalid("--out is required"))?,
        count: args.count.unwrap_or(10),
        jobs: args.jobs.unwrap_or(1),
        synth,
    })
}

pub fn run(args: SynthArgs, config: &ConfigFile) -> CliResult<()> {
    let manifest = ManifestBuilder::start("synth");
    let s = resolve(config.merge("synth", &args)?)?;
    let indices: Vec<u64> = (0..s.count).collect();
    let records = par_map(s.jobs, &indices, |&k| {
        generate_scene(&s.synth.for_scene(k)).map(|scene| DatasetRecord::from_scene(k, &scene, s.synth.overlap_threshold))
    })?
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    let instances: usize = records.iter().map(|r| r.instances.len()).sum();
    write_dataset(
        &Dataset {
            overlap_threshold: s.synth.overlap_threshold,
            records,
        },
        &s.out,
    )?;
    eprintln!("wrote {} scenes ({instances} instances) to {}", s.count, s.out.display());
    manifest
        .finish(
            Some(s.synth.seed),
            &s,
            Vec::new(),
            vec![s.out.clone()],
            json!({ "scenes": s.count, "instances": instances }),
        )?
        .write(&s.out)
}
