mod config;
mod error;
mod pipeline;
mod stages;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use p2o_core::hierarchy::{FusionMode, MergeParams, ObjectRule, HIERARCHY_SCHEMA, HIERARCHY_VERSION};
use p2o_core::scene_io::{write_frames, write_scene, FEATURES_MAGIC, MASKS_MAGIC, POINTS_MAGIC};
use p2o_core::synth::{generate, SynthSpec};
use p2o_core::{MatchParams, SuperpointParams};

use crate::config::PipelineConfig;
use crate::error::{bad_input, StageResult, Tag};

#[derive(Parser)]
#[command(name = "p2o", version, about = "Unsupervised 3D instance segmentation by hierarchical clustering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene with frames and ground truth.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed in the spec file.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Partition a scene into super-points.
    Superpoints {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        params: SuperpointFlags,
    },
    /// Build objectness prior boxes from frames.
    Priors {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        params: MatchFlags,
    },
    /// Run hierarchical clustering over super-points.
    Cluster {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        superpoints: PathBuf,
        #[arg(long)]
        priors: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        l2_normalize_features: bool,
        #[command(flatten)]
        params: MergeFlags,
    },
    /// Collect objects and parts from a hierarchy.
    Extract {
        #[arg(long)]
        hierarchy: PathBuf,
        #[arg(long)]
        objects: PathBuf,
        #[arg(long)]
        parts: PathBuf,
        /// Needed with --drop-largest-planar.
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        drop_largest_planar: usize,
        #[command(flatten)]
        params: MergeFlags,
    },
    /// Score predictions against ground truth. Repeat --pred/--gt to pool scenes.
    Eval {
        #[arg(long, required = true)]
        pred: Vec<PathBuf>,
        #[arg(long, required = true)]
        gt: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every stage end to end.
    Run(RunArgs),
    /// Print the on-disk format versions.
    Info {
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args, Default)]
struct SuperpointFlags {
    #[arg(long)]
    voxel_size: Option<f64>,
    #[arg(long)]
    seed_resolution: Option<f64>,
    #[arg(long)]
    w_spatial: Option<f64>,
    #[arg(long)]
    w_color: Option<f64>,
    #[arg(long)]
    w_normal: Option<f64>,
}

impl SuperpointFlags {
    fn apply(&self, p: &mut SuperpointParams) {
        set(&mut p.voxel_size, self.voxel_size);
        set(&mut p.seed_resolution, self.seed_resolution);
        set(&mut p.w_spatial, self.w_spatial);
        set(&mut p.w_color, self.w_color);
        set(&mut p.w_normal, self.w_normal);
    }
}

#[derive(Args, Default)]
struct MatchFlags {
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    depth_tol: Option<f64>,
    #[arg(long)]
    min_track_frames: Option<usize>,
    #[arg(long)]
    min_track_points: Option<usize>,
    /// Link masks only when each is the other's best match.
    #[arg(long)]
    mutual: bool,
}

impl MatchFlags {
    fn apply(&self, p: &mut MatchParams) {
        set(&mut p.tau, self.tau);
        set(&mut p.depth_tol, self.depth_tol);
        set(&mut p.min_track_frames, self.min_track_frames);
        set(&mut p.min_track_points, self.min_track_points);
        p.mutual |= self.mutual;
    }
}

#[derive(Args, Default)]
struct MergeFlags {
    /// Fraction of candidate pairs, by similarity rank, allowed to merge per layer.
    #[arg(long = "K", alias = "k")]
    k_fraction: Option<f64>,
    /// Closest-point distance threshold in metres.
    #[arg(long = "T", alias = "t")]
    t: Option<f64>,
    #[arg(long)]
    max_layers: Option<usize>,
    #[arg(long)]
    inside_frac: Option<f64>,
    #[arg(long)]
    outside_frac: Option<f64>,
    #[arg(long)]
    min_object_points: Option<usize>,
    /// weighted | mean
    #[arg(long, value_parser = parse_fusion)]
    fusion: Option<FusionMode>,
    /// terminal | any_layer
    #[arg(long, value_parser = parse_object_rule)]
    object_rule: Option<ObjectRule>,
}

impl MergeFlags {
    fn apply(&self, p: &mut MergeParams) {
        set(&mut p.k_fraction, self.k_fraction);
        set(&mut p.t, self.t);
        set(&mut p.max_layers, self.max_layers);
        set(&mut p.inside_frac, self.inside_frac);
        set(&mut p.outside_frac, self.outside_frac);
        set(&mut p.min_object_points, self.min_object_points);
        set(&mut p.fusion, self.fusion);
        set(&mut p.object_rule, self.object_rule);
    }
}

#[derive(Args)]
struct RunArgs {
    /// JSON config; flags given here override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scene directory; repeat for several scenes.
    #[arg(long)]
    scene: Vec<PathBuf>,
    #[arg(long)]
    frames: Option<PathBuf>,
    #[arg(long)]
    gt: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Scenes processed in parallel.
    #[arg(long)]
    jobs: Option<usize>,
    /// Fail when a scene has no frames to build priors from.
    #[arg(long)]
    require_priors: bool,
    /// Cluster without objectness priors.
    #[arg(long)]
    no_priors: bool,
    #[arg(long)]
    l2_normalize_features: bool,
    #[arg(long)]
    drop_largest_planar: Option<usize>,
    #[command(flatten)]
    superpoint: SuperpointFlags,
    #[command(flatten)]
    matching: MatchFlags,
    #[command(flatten)]
    merge: MergeFlags,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn parse_fusion(s: &str) -> Result<FusionMode, String> {
    serde_json::from_value(serde_json::Value::String(s.into())).map_err(|_| format!("unknown fusion mode {s:?}"))
}

fn parse_object_rule(s: &str) -> Result<ObjectRule, String> {
    serde_json::from_value(serde_json::Value::String(s.into())).map_err(|_| format!("unknown object rule {s:?}"))
}

fn synth(spec: &Path, out: &Path, seed: Option<u64>) -> StageResult<()> {
    let text =
        std::fs::read_to_string(spec).map_err(|e| anyhow::anyhow!("{}: {e}", spec.display())).bad_input("synth")?;
    let mut spec: SynthSpec =
        serde_json::from_str(&text).map_err(|e| anyhow::anyhow!("{}: {e}", spec.display())).bad_input("synth")?;
    set(&mut spec.seed, seed);
    let scene = generate(&spec).bad_input("synth")?;
    std::fs::create_dir_all(out).map_err(|e| anyhow::anyhow!("{}: {e}", out.display())).failure("synth")?;
    write_scene(out, &scene.cloud).failure("synth")?;
    if !scene.frames.is_empty() {
        let frames = out.join("frames");
        std::fs::create_dir_all(&frames).map_err(|e| anyhow::anyhow!("{}: {e}", frames.display())).failure("synth")?;
        write_frames(&frames, &scene.frames).failure("synth")?;
    }
    stages::write_instances(&out.join("gt.txt"), &scene.ground_truth, "synth")?;
    log::info!("{} points, {} objects, {} frames", scene.cloud.len(), scene.ground_truth.len(), scene.frames.len());
    Ok(())
}

fn info(json: bool) {
    let magic = |m: &[u8; 4]| String::from_utf8_lossy(m).into_owned();
    let formats = [
        ("points.p2o", magic(POINTS_MAGIC), 1),
        ("features.f32", magic(FEATURES_MAGIC), 1),
        ("frame_<id>.masks", magic(MASKS_MAGIC), 1),
        ("hierarchy.json", HIERARCHY_SCHEMA.to_string(), HIERARCHY_VERSION),
    ];
    if json {
        let list: Vec<_> = formats
            .iter()
            .map(|(file, id, version)| serde_json::json!({ "file": file, "id": id, "version": version }))
            .collect();
        let doc = serde_json::json!({ "tool": "p2o", "version": env!("CARGO_PKG_VERSION"), "formats": list });
        println!("{}", serde_json::to_string_pretty(&doc).expect("static document"));
    } else {
        println!("p2o {}", env!("CARGO_PKG_VERSION"));
        for (file, id, version) in formats {
            println!("{file:<18} {id:<14} v{version}");
        }
    }
}

fn dispatch(command: Command) -> StageResult<()> {
    match command {
        Command::Synth { spec, out, seed } => synth(&spec, &out, seed),
        Command::Superpoints { scene, out, params } => {
            let mut p = SuperpointParams::default();
            params.apply(&mut p);
            let cloud = stages::load_cloud(&scene, false)?;
            let parts = stages::superpoints(&cloud, &p)?;
            stages::write_text(&out, &stages::superpoints_json(&parts), "superpoints")
        }
        Command::Priors { scene, frames, out, params } => {
            let mut p = MatchParams::default();
            params.apply(&mut p);
            let cloud = stages::load_cloud(&scene, false)?;
            let priors = stages::priors(&cloud, &frames, &p)?;
            stages::write_text(&out, &stages::priors_text(&priors), "priors")
        }
        Command::Cluster { scene, superpoints, priors, out, l2_normalize_features, params } => {
            let mut p = MergeParams::default();
            params.apply(&mut p);
            let cloud = stages::load_cloud(&scene, l2_normalize_features)?;
            let parts = stages::read_superpoints(&superpoints)?;
            let boxes: Vec<_> = match priors {
                Some(path) => stages::read_priors(&path)?.iter().map(|b| b.bbox()).collect(),
                None => Vec::new(),
            };
            let h = stages::cluster(&parts, &cloud, &boxes, &p)?;
            stages::write_text(&out, &stages::hierarchy_text(&h, &p), "cluster")
        }
        Command::Extract { hierarchy, objects, parts, scene, drop_largest_planar, params } => {
            let (h, stored) = stages::read_hierarchy(&hierarchy)?;
            let mut p = stored.unwrap_or_default();
            params.apply(&mut p);
            let cloud = scene.as_deref().map(|s| stages::load_cloud(s, false)).transpose()?;
            let positions = cloud.as_ref().map(|c| c.positions.as_slice());
            let (o, pt) = stages::extract(&h, &p, positions, drop_largest_planar)?;
            stages::write_instances(&objects, &o, "extract")?;
            stages::write_instances(&parts, &pt, "extract")
        }
        Command::Eval { pred, gt, out } => {
            if pred.len() != gt.len() {
                return Err(bad_input("eval", "give one --gt per --pred"));
            }
            let mut scenes = Vec::new();
            for (p, g) in pred.iter().zip(&gt) {
                scenes.push((stages::read_instances(p)?, stages::read_instances(g)?));
            }
            let report = stages::eval(&scenes);
            stages::write_text(&out, &stages::report_text(&report), "eval")
        }
        Command::Run(args) => {
            let mut cfg = match &args.config {
                Some(path) => PipelineConfig::load(path)?,
                None => PipelineConfig::default(),
            };
            if !args.scene.is_empty() {
                cfg.scenes = args.scene.clone();
            }
            cfg.frames = args.frames.or(cfg.frames);
            cfg.gt = args.gt.or(cfg.gt);
            cfg.out = args.out.or(cfg.out);
            set(&mut cfg.jobs, args.jobs);
            set(&mut cfg.drop_largest_planar, args.drop_largest_planar);
            cfg.require_priors |= args.require_priors;
            cfg.l2_normalize_features |= args.l2_normalize_features;
            if args.no_priors {
                cfg.use_priors = false;
            }
            args.superpoint.apply(&mut cfg.superpoint);
            args.matching.apply(&mut cfg.matching);
            args.merge.apply(&mut cfg.merge);
            pipeline::run(&cfg)
        }
        Command::Info { json } => {
            info(json);
            Ok(())
        }
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("P2O_LOG", "warn")).init();
    let cli = Cli::parse();
    if let Err(e) = dispatch(cli.command) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
