use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use artigen::artcore::{
    build_depth1, collapse_fixed_joints, validate_object, ArticulatedObject, Part, PartGeometry, Representation, VoxelGeometry,
};
use artigen::artihead::{predict_articulation, FeatureCache};
use artigen::flowgen::toy::{cond_from_mask, part_aabbs, run_toy, ToyModels, ToyRunConfig, TOY_RESOLUTION};
use artigen::flowgen::{run_two_stage, PipelineConfig, SamplerConfig};
use artigen::interop::{
    export_urdf, extract_physx_parts, load_mask, load_object, object_to_value, write_atomic, FloatFormat, VertexPrediction,
};
use artigen::kinematics::{pose_object, state_at_fraction, JointState};
use artigen::metrics::{evaluate, report_table, EvalOptions};
use artigen::netcore::{Stage, TensorFile};

#[derive(Parser)]
#[command(name = "artigen", version, about = "Articulated object tools: validation, posing, metrics, export, toy training and sampling")]
struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Log level on stderr (error, warn, info, debug).
    #[arg(long, global = true, default_value = "warn")]
    log: String,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Output {
    /// Write the result here instead of stdout.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Round floats to 9 significant digits.
    #[arg(long)]
    canonical: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Check structural invariants of an object file.
    Validate { object: PathBuf },
    /// Collapse fixed joints, then attach every movable part to the base.
    Simplify {
        object: PathBuf,
        #[command(flatten)]
        output: Output,
    },
    /// Move parts to an articulation state.
    Pose {
        object: PathBuf,
        /// Comma-separated joint values, one per part.
        #[arg(long, value_delimiter = ',', conflicts_with = "fraction")]
        state: Option<Vec<f64>>,
        /// Open every movable joint to this fraction of its range.
        #[arg(long)]
        fraction: Option<f64>,
        #[command(flatten)]
        output: Output,
    },
    /// Compare a predicted object with a reference.
    Eval {
        pred: PathBuf,
        gt: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0.25,0.5,0.75,1")]
        fractions: Vec<f64>,
        /// Chamfer point budget per object.
        #[arg(long, default_value_t = 4096)]
        points: usize,
        #[arg(long, default_value_t = 64)]
        aor_res: u32,
        /// Chamfer per matched part pair instead of on whole objects.
        #[arg(long)]
        per_part_chamfer: bool,
        /// Evaluate without articulated states.
        #[arg(long)]
        rest_only: bool,
    },
    /// Write a URDF with one link per part.
    ExportUrdf {
        object: PathBuf,
        #[arg(long, default_value = "object")]
        name: String,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Build a part-level object from per-vertex predictions (JSON array).
    ExtractPhysx {
        predictions: PathBuf,
        #[command(flatten)]
        output: Output,
    },
    /// Train the toy denoiser and articulation head, then score them.
    TrainToy {
        /// TOML file with run settings; missing keys take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override the optimizer step count.
        #[arg(long)]
        steps: Option<usize>,
        /// Override the dataset size.
        #[arg(long)]
        objects: Option<usize>,
        /// Override the coarse-stage step count.
        #[arg(long)]
        stage1_steps: Option<usize>,
        /// Checkpoint destination.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Generate a part-voxel object with joints from a mask.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Mask JSON, `-1` for background.
        #[arg(long)]
        mask: PathBuf,
        #[arg(long, default_value_t = 25)]
        steps: usize,
        #[arg(long, default_value_t = 7.0)]
        cfg_scale: f64,
        /// Number of final steps whose features are cached.
        #[arg(long, default_value_t = 20)]
        cache_steps: usize,
        /// Which stage's features drive the articulation head.
        #[arg(long, default_value = "stage2")]
        feature_source: Stage,
        /// Also save the feature cache used for regression.
        #[arg(long)]
        cache_out: Option<PathBuf>,
        #[command(flatten)]
        output: Output,
    },
    /// Regress joints for an object's parts from a saved feature cache.
    RegressArti {
        #[arg(long)]
        cache: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Object supplying part geometry; its joints are replaced.
        #[arg(long)]
        object: PathBuf,
        #[command(flatten)]
        output: Output,
    },
}

fn print_json(v: &Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn emit_object(obj: &ArticulatedObject, output: &Output) -> Result<()> {
    let fmt = if output.canonical { FloatFormat::Canonical } else { FloatFormat::Exact };
    let v = object_to_value(obj, fmt)?;
    match &output.out {
        Some(path) => {
            write_atomic(path, (serde_json::to_string(&v)? + "\n").as_bytes())?;
            print_json(&json!({ "output": path, "parts": obj.len() }))
        }
        None => {
            println!("{}", serde_json::to_string(&v)?);
            Ok(())
        }
    }
}

fn load(path: &Path) -> Result<ArticulatedObject> {
    load_object(path).with_context(|| format!("reading {}", path.display()))
}

fn validate(path: &Path) -> Result<bool> {
    let obj = load(path)?;
    let report = validate_object(&obj);
    let violations: Vec<Value> = report.violations.iter().map(|v| json!({ "kind": v.kind(), "message": v.to_string() })).collect();
    let notes: Vec<String> = report.notes.iter().map(|n| format!("{n:?}")).collect();
    print_json(&json!({
        "valid": report.is_valid(),
        "parts": obj.len(),
        "depth1": obj.is_depth1(),
        "violations": violations,
        "notes": notes,
    }))?;
    if !report.is_valid() {
        eprintln!("{} violation(s)", report.violations.len());
    }
    Ok(report.is_valid())
}

fn sample(
    checkpoint: &Path,
    mask_path: &Path,
    sampler: SamplerConfig,
    feature_source: Stage,
    cache_out: Option<&Path>,
    output: &Output,
) -> Result<()> {
    let models = ToyModels::from_tensor_file(&TensorFile::load(checkpoint)?)?;
    let Some(stage1) = &models.stage1 else {
        bail!("checkpoint has no coarse-stage network; train with --stage1-steps > 0");
    };
    let net_cfg = models.net.config();
    let background = net_cfg.max_parts - 1;
    let mask = load_mask(mask_path, background)?;
    let cond = cond_from_mask(mask, net_cfg.cond_grid, background)?;
    let cfg = PipelineConfig {
        sampler,
        coarse_resolution: TOY_RESOLUTION,
        fine_resolution: net_cfg.resolution,
        feature_source,
        background,
        ..PipelineConfig::default()
    };
    let out = run_two_stage(&cond, Some(stage1), &models.net, None, &cfg)?;
    if let Some(p) = cache_out {
        out.cache.save(p)?;
    }
    let aabbs = part_aabbs(&out.voxels);
    let joints = predict_articulation(&out.cache, &models.head, &aabbs)?;
    let r = out.voxels.resolution();
    let mut parts = Vec::new();
    for (i, (occ, joint)) in out.voxels.parts().iter().zip(joints).enumerate() {
        let geometry = PartGeometry::new(Representation::Voxels(VoxelGeometry {
            resolution: r,
            coords: occ.coords().collect(),
            origin: Default::default(),
            scale: 1.0,
        }))?;
        parts.push(Part::new(i as i64, geometry, joint));
    }
    emit_object(&ArticulatedObject::new(parts), output)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.cmd {
        Cmd::Validate { object } => return validate(&object),
        Cmd::Simplify { object, output } => {
            let obj = load(&object)?;
            emit_object(&build_depth1(&collapse_fixed_joints(&obj)?)?, &output)?;
        }
        Cmd::Pose { object, state, fraction, output } => {
            let obj = load(&object)?;
            let state = match (state, fraction) {
                (Some(values), _) => JointState { values },
                (None, Some(f)) => {
                    if !(0.0..=1.0).contains(&f) {
                        bail!("fraction {f} outside [0, 1]");
                    }
                    state_at_fraction(&obj, f)
                }
                (None, None) => bail!("pass --state or --fraction"),
            };
            emit_object(&pose_object(&obj, &state)?, &output)?;
        }
        Cmd::Eval { pred, gt, fractions, points, aor_res, per_part_chamfer, rest_only } => {
            let opts = EvalOptions {
                fractions: if rest_only { Vec::new() } else { fractions },
                points,
                aor_resolution: aor_res,
                seed: cli.seed,
                per_part_chamfer,
            };
            let report = evaluate(&load(&pred)?, &load(&gt)?, &opts)?;
            eprint!("{}", report_table(&report));
            print_json(&serde_json::to_value(&report)?)?;
        }
        Cmd::ExportUrdf { object, name, out } => {
            let obj = load(&object)?;
            let text = export_urdf(&obj, &name)?;
            match out {
                Some(path) => {
                    write_atomic(&path, text.as_bytes())?;
                    print_json(&json!({ "output": path, "links": obj.len(), "joints": obj.len() - 1 }))?;
                }
                None => print_json(&json!({ "urdf": text }))?,
            }
        }
        Cmd::ExtractPhysx { predictions, output } => {
            let text = std::fs::read_to_string(&predictions).with_context(|| format!("reading {}", predictions.display()))?;
            let preds: Vec<VertexPrediction> = serde_json::from_str(&text)?;
            emit_object(&extract_physx_parts(&preds)?, &output)?;
        }
        Cmd::TrainToy { config, steps, objects, stage1_steps, checkpoint } => {
            let mut cfg: ToyRunConfig = match config {
                Some(p) => toml::from_str(&std::fs::read_to_string(&p)?).with_context(|| format!("parsing {}", p.display()))?,
                None => ToyRunConfig::default(),
            };
            cfg.seed = cli.seed;
            if let Some(s) = steps {
                cfg.train.steps = s;
            }
            if let Some(n) = objects {
                cfg.objects = n;
            }
            if let Some(s) = stage1_steps {
                cfg.stage1_steps = s;
            }
            let start = Instant::now();
            let report = run_toy(&cfg)?;
            if let Some(p) = &checkpoint {
                report.models().to_tensor_file().save(p)?;
            }
            print_json(&json!({
                "fm_before": report.fm_before,
                "fm_after": report.fm_after,
                "fm_reduction": 1.0 - report.fm_after / report.fm_before,
                "axis_error_deg": report.axis_error_deg,
                "type_accuracy": report.type_accuracy,
                "steps": report.history.len(),
                "seconds": start.elapsed().as_secs_f64(),
                "checkpoint": checkpoint,
            }))?;
        }
        Cmd::Sample { checkpoint, mask, steps, cfg_scale, cache_steps, feature_source, cache_out, output } => {
            let sampler = SamplerConfig { steps, cfg_scale, cache_steps, seed: cli.seed };
            sample(&checkpoint, &mask, sampler, feature_source, cache_out.as_deref(), &output)?;
        }
        Cmd::RegressArti { cache, checkpoint, object, output } => {
            let models = ToyModels::from_tensor_file(&TensorFile::load(&checkpoint)?)?;
            let cache = FeatureCache::load(&cache)?;
            let mut obj = load(&object)?;
            let aabbs: Vec<_> = obj.parts.iter().map(|p| p.geometry.bounds()).collect();
            let joints = predict_articulation(&cache, &models.head, &aabbs)?;
            for (p, j) in obj.parts.iter_mut().zip(joints) {
                p.joint = j;
            }
            emit_object(&obj, &output)?;
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log).format_timestamp(None).init();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
