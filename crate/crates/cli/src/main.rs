use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use scanfit_core::cad::{CadDatabase, ManifestEntry};
use scanfit_core::eval::{evaluate, AlignmentThresholds};
use scanfit_core::geometry::io::save_obj;
use scanfit_core::hoctree::{load_tree_dir, HocTree, TreeConfig};
use scanfit_core::objective::RcWeights;
use scanfit_core::pipeline::{annotate_scene, AnnotationFile, PipelineConfig};
use scanfit_core::scene::{load_scene, save_scene};
use scanfit_core::search::SearchConfig;
use scanfit_core::synth::{draw_models, ground_truth_file, synthetic_database, synthetic_scene, SynthConfig};
use scanfit_review::{router, ReviewService, ReviewSession, ServiceConfig, SessionConfig};

#[derive(Parser)]
#[command(
    name = "scanfit",
    version,
    about = "CAD retrieval and 9-DoF alignment for segmented scans"
)]
struct Cli {
    /// Log filter, e.g. `info` or `scanfit_core=debug`.
    #[arg(long, global = true, default_value = "info")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Retrieve and align a CAD model for every object of a scene.
    Annotate(AnnotateArgs),
    /// Build the search tree of one class.
    BuildTree(BuildTreeArgs),
    /// Write a synthetic database, scene and ground truth.
    SynthScene(SynthArgs),
    /// Score predicted annotations against ground truth.
    Eval(EvalArgs),
    /// Serve annotations for review over HTTP.
    Serve(ServeArgs),
}

#[derive(Args)]
struct AnnotateArgs {
    scene: PathBuf,
    #[arg(long)]
    db: PathBuf,
    #[arg(long)]
    trees: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1200)]
    iterations: usize,
    /// Depth, silhouette and chamfer weights.
    #[arg(long, default_value = "1,1,1")]
    weights: String,
    /// Refinement steps for the final incumbent.
    #[arg(long)]
    final_refine_steps: Option<usize>,
    #[arg(long)]
    no_clone: bool,
}

#[derive(Args)]
struct BuildTreeArgs {
    manifest: PathBuf,
    #[arg(long)]
    class: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 4)]
    pose_bins: usize,
    #[arg(long, default_value_t = 4)]
    branching: usize,
    /// Samples per model used for clustering; 0 uses all.
    #[arg(long, default_value_t = 0)]
    cluster_samples: usize,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "chair,table,cabinet,sofa")]
    classes: Vec<String>,
    #[arg(long, default_value_t = 6)]
    per_class: usize,
    #[arg(long, default_value_t = 6)]
    objects: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    views: usize,
    #[arg(long, default_value_t = 192)]
    width: usize,
    #[arg(long, default_value_t = 144)]
    height: usize,
    #[arg(long, default_value = "synth")]
    scene_id: String,
}

#[derive(Args)]
struct EvalArgs {
    pred: PathBuf,
    gt: PathBuf,
    /// Also write the full report as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    db: PathBuf,
    /// Scene manifest; pair each with an --annotations file.
    #[arg(long, required = true)]
    scene: Vec<PathBuf>,
    #[arg(long, required = true)]
    annotations: Vec<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: String,
    #[arg(long, env = "SCANFIT_TOKEN")]
    token: Option<String>,
    #[arg(long, default_value_t = 60)]
    refine_timeout_secs: u64,
    #[arg(long, default_value = "1,1,1")]
    weights: String,
}

type CliResult<T> = Result<T, Box<dyn std::error::Error>>;

fn annotate(args: AnnotateArgs) -> CliResult<()> {
    let scene = load_scene(&args.scene)?;
    let db = CadDatabase::load_manifest(&args.db)?;
    let trees = load_tree_dir(&args.trees)?;
    let defaults = SearchConfig::default();
    let cfg = PipelineConfig {
        search: SearchConfig {
            max_iterations: args.iterations,
            seed: args.seed,
            final_refine_steps: args.final_refine_steps.unwrap_or(defaults.final_refine_steps),
            ..defaults
        },
        weights: RcWeights::parse_triplet(&args.weights)?,
        clone_enabled: !args.no_clone,
        ..PipelineConfig::default()
    };
    let file = annotate_scene(&scene, &db, &trees, &cfg)?;
    file.save(&args.out)?;
    tracing::info!(
        annotated = file.annotations.len(),
        failed = file.failures.len(),
        out = %args.out.display(),
        "done"
    );
    Ok(())
}

fn build_tree(args: BuildTreeArgs) -> CliResult<()> {
    let db = CadDatabase::load_manifest(&args.manifest)?;
    let cfg = TreeConfig {
        pose_bins: args.pose_bins,
        branching: args.branching,
        cluster_samples: args.cluster_samples,
        ..TreeConfig::default()
    };
    let tree = HocTree::build(&db.of_class(&args.class), &args.class, &cfg)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    tree.save(&args.out)?;
    tracing::info!(class = %args.class, nodes = tree.nodes().len(), "tree written");
    Ok(())
}

fn write_database(db: &CadDatabase, dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(db.len());
    for m in db.models() {
        let mesh_path = format!("{}.obj", m.id());
        save_obj(m.mesh(), dir.join(&mesh_path))?;
        entries.push(ManifestEntry {
            id: m.id().to_string(),
            class: m.class_label().to_string(),
            mesh_path,
        });
    }
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&entries)?)?;
    Ok(())
}

fn synth_scene(args: SynthArgs) -> CliResult<()> {
    let classes: Vec<&str> = args.classes.iter().map(String::as_str).collect();
    let db = synthetic_database(&classes, args.per_class, args.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let ids = draw_models(&db, args.objects, &mut rng);
    let cfg = SynthConfig {
        views_per_object: args.views,
        width: args.width,
        height: args.height,
        ..SynthConfig::default()
    };
    let (scene, truth) = synthetic_scene(&args.scene_id, &db, &ids, &cfg, args.seed)?;
    write_database(&db, &args.out.join("db"))?;
    save_scene(&scene, args.out.join("scene"))?;
    ground_truth_file(&args.scene_id, &db, &truth)?.save(args.out.join("ground_truth.json"))?;
    println!("{}", args.out.join("scene").join("scene.json").display());
    Ok(())
}

fn eval(args: EvalArgs) -> CliResult<()> {
    let pred = AnnotationFile::load(&args.pred)?;
    let gt = AnnotationFile::load(&args.gt)?;
    let report = evaluate(&pred, &gt, &AlignmentThresholds::default())?;
    print!("{}", report.table());
    if let Some(path) = args.json {
        fs::write(path, serde_json::to_string_pretty(&report)?)?;
    }
    Ok(())
}

fn serve(args: ServeArgs) -> CliResult<()> {
    if args.scene.len() != args.annotations.len() {
        return Err("give one --annotations file per --scene".into());
    }
    let db = Arc::new(CadDatabase::load_manifest(&args.db)?);
    let session_cfg = SessionConfig {
        weights: RcWeights::parse_triplet(&args.weights)?,
        ..SessionConfig::default()
    };
    let mut service = ReviewService::new(ServiceConfig {
        token: args.token,
        refine_timeout: Duration::from_secs(args.refine_timeout_secs),
    });
    for (scene, ann) in args.scene.iter().zip(&args.annotations) {
        let scene = load_scene(scene)?;
        let file = AnnotationFile::load(ann)?;
        service.add_session(ReviewSession::new(&scene, file, db.clone(), session_cfg)?)?;
    }
    let app = router(Arc::new(service));
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&args.addr).await?;
        tracing::info!(addr = %listener.local_addr()?, "serving");
        axum::serve(listener, app).await
    })?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::new(&cli.log))
        .with_writer(std::io::stderr)
        .init();
    let result = match cli.command {
        Command::Annotate(a) => annotate(a),
        Command::BuildTree(a) => build_tree(a),
        Command::SynthScene(a) => synth_scene(a),
        Command::Eval(a) => eval(a),
        Command::Serve(a) => serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
