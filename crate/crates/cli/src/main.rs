use std::collections::HashMap;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use mpstack::edit::{render, replay};
use mpstack::io::{
    export_scene, load_scene, read_color_dir, read_cutout_dir, read_depth, write_alpha, write_color, write_dataset,
    write_sgmp, DepthRange, DATASET_INDEX_FILE,
};
use mpstack::metrics::EvalConfig;
use mpstack::service::SessionManager;
use mpstack::sgmp::{self, Spacing};
use mpstack::synth::{procedural, split_counts, AlphaMode, SynthConfig};
use mpstack::{DepthMap, PlaneId};
use mpstack_cli::eval::{evaluate_dirs, write_report};
use mpstack_cli::{router, AppState, OpSpec};

#[derive(Parser)]
#[command(
    name = "mpstack",
    version,
    about = "Layered scene stacks: synthesis, editing, evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SpacingArg {
    Quantile,
    Linear,
}

#[derive(Clone, Copy, ValueEnum)]
enum Channel {
    Color,
    Alpha,
}

#[derive(Args)]
struct SgmpArgs {
    /// 16-bit depth PNG, or a scene directory / manifest with a depth map.
    #[arg(long)]
    depth: PathBuf,
    /// Depth at PNG value 0 (PNG input only).
    #[arg(long)]
    min: Option<f32>,
    /// Depth at PNG value 65535 (PNG input only).
    #[arg(long)]
    max: Option<f32>,
    #[arg(long, default_value_t = 10)]
    planes: usize,
    /// Mask temperature; defaults to (max - min) / (4 N).
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long, default_value_t = 20)]
    iters: usize,
    #[arg(long, value_enum, default_value_t = SpacingArg::Quantile)]
    spacing: SpacingArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// Directory of RGBA cutout PNGs; procedural blobs when omitted.
    #[arg(long)]
    cutouts: Option<PathBuf>,
    /// Directory of background PNGs; procedural gradients when omitted.
    #[arg(long)]
    backgrounds: Option<PathBuf>,
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Size of procedural backgrounds.
    #[arg(long, default_value_t = 256)]
    width: usize,
    #[arg(long, default_value_t = 256)]
    height: usize,
    #[arg(long, default_value_t = 2)]
    min_instances: usize,
    #[arg(long, default_value_t = 6)]
    max_instances: usize,
    /// Binarize alphas where instances overlap.
    #[arg(long)]
    hard_core: bool,
    /// With --hard-core, binarize alphas everywhere.
    #[arg(long, requires = "hard_core")]
    hard_edges: bool,
    /// Skip the swapped-order composite.
    #[arg(long)]
    no_reorder: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Split a depth map into soft depth-plane masks.
    Sgmp(SgmpArgs),
    /// Generate a synthetic dataset split 3:1:1 into train/val/test.
    Synth(SynthArgs),
    /// Apply edits to a scene and write the rendered result.
    Edit {
        #[arg(long)]
        scene: PathBuf,
        /// remove:J | reorder:P,Q | drag:J,X,Y[,S[,R]] | paste:SCENE#J,X,Y[,S[,R]]
        #[arg(long = "op", required = true)]
        ops: Vec<OpSpec>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the edited scene (base layers plus edit log) here.
        #[arg(long)]
        emit_stack: Option<PathBuf>,
    },
    /// Score predicted mattes against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        iou_threshold: f32,
    },
    /// Write a scene's render, or one plane's color or alpha, as PNG.
    Render {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        plane: Option<u32>,
        #[arg(long, value_enum, default_value_t = Channel::Color)]
        channel: Channel,
    },
    /// Print a scene summary as JSON.
    Info {
        #[arg(long)]
        scene: PathBuf,
    },
    /// Keep the first N logged edits and write the result as a new scene.
    Undo {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        to: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rewrite a scene in export layout.
    Export {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Scratch directory for uploads and inline exports.
        #[arg(long)]
        work_dir: Option<PathBuf>,
    },
}

fn load_depth(path: &Path, min: Option<f32>, max: Option<f32>) -> Result<DepthMap> {
    let is_png = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"));
    if is_png {
        let (Some(min), Some(max)) = (min, max) else {
            bail!("--min and --max are required for a depth PNG");
        };
        return Ok(read_depth(path, DepthRange { min, max })?);
    }
    if min.is_some() || max.is_some() {
        bail!("--min/--max apply only to depth PNGs; scenes carry their own range");
    }
    let scene = load_scene(path)?;
    let entry = scene
        .manifest
        .depth_map
        .as_ref()
        .with_context(|| format!("{} has no depth_map", path.display()))?;
    Ok(read_depth(
        scene.path(&entry.file),
        DepthRange {
            min: entry.min,
            max: entry.max,
        },
    )?)
}

fn run_sgmp(args: SgmpArgs) -> Result<()> {
    let SgmpArgs {
        depth,
        min,
        max,
        planes,
        tau,
        iters,
        spacing,
        out,
    } = args;
    let depth = load_depth(&depth, min, max)?;
    let spacing = match spacing {
        SpacingArg::Quantile => Spacing::Quantile,
        SpacingArg::Linear => Spacing::Linear,
    };
    let initial = sgmp::initial_plane_depths_with(&depth, planes, spacing)?;
    let (depths, trace) = sgmp::refine_plane_depths_traced(&depth, &initial, iters)?;
    let tau = tau.unwrap_or_else(|| sgmp::default_tau(&depth, planes));
    let masks = sgmp::plane_masks(&depth, &depths, tau)?;
    let manifest = write_sgmp(&out, &depth, &depths, &masks, tau, &trace)?;
    println!(
        "{} planes, tau {:.4}, objective {:.4} -> {:.4}, written to {}",
        manifest.masks.len(),
        tau,
        trace.first().copied().unwrap_or(0.0),
        trace.last().copied().unwrap_or(0.0),
        out.display()
    );
    Ok(())
}

fn run_synth(args: SynthArgs) -> Result<()> {
    let SynthArgs {
        cutouts,
        backgrounds,
        count,
        seed,
        out,
        width,
        height,
        min_instances,
        max_instances,
        hard_core,
        hard_edges,
        no_reorder,
    } = args;
    if min_instances == 0 || min_instances > max_instances {
        bail!("need 1 <= --min-instances <= --max-instances");
    }
    let cutouts = match cutouts {
        Some(dir) => read_cutout_dir(&dir)?,
        None => procedural::cutouts(seed ^ 0x9e37_79b9, 16, (width / 2, height)),
    };
    let backgrounds = match backgrounds {
        Some(dir) => read_color_dir(&dir)?,
        None => procedural::backgrounds(seed ^ 0x7f4a_7c15, 8, width, height),
    };
    if cutouts.is_empty() || backgrounds.is_empty() {
        bail!("no PNG files found in the cutout or background directory");
    }
    let config = SynthConfig {
        instances: (min_instances, max_instances),
        alpha_mode: if hard_core {
            AlphaMode::HardCore {
                keep_soft_edges: !hard_edges,
            }
        } else {
            AlphaMode::Soft
        },
        reorder_pair: !no_reorder,
        ..SynthConfig::default()
    };
    let index = write_dataset(&cutouts, &backgrounds, &config, seed, count, &out)?;
    let (train, val, test) = split_counts(count);
    let instances: usize = index.scenes.iter().map(|s| s.instances).sum();
    println!(
        "{count} scenes ({train} train, {val} val, {test} test), {instances} instances, index at {}",
        out.join(DATASET_INDEX_FILE).display()
    );
    Ok(())
}

fn run_edit(scene: &Path, ops: &[OpSpec], out: &Path, emit_stack: Option<&Path>) -> Result<()> {
    let manager = SessionManager::new(usize::MAX);
    let id = manager.create_session(scene)?.id;
    let mut sources: HashMap<PathBuf, String> = HashMap::new();
    for (i, spec) in ops.iter().enumerate() {
        let source = match spec.source_scene() {
            Some(path) => Some(match sources.get(path) {
                Some(sid) => sid.clone(),
                None => {
                    let sid = manager
                        .create_session(path)
                        .with_context(|| format!("loading paste source {}", path.display()))?
                        .id;
                    sources.insert(path.clone(), sid.clone());
                    sid
                }
            }),
            None => None,
        };
        let summary = manager
            .apply_op(&id, &spec.to_request(source.as_deref()))
            .with_context(|| format!("op {} ({})", i + 1, summary_name(spec)))?;
        let affected: Vec<String> = summary.affected.iter().map(|p| p.to_string()).collect();
        println!(
            "{}: {:.3} ms, affected planes [{}]",
            summary.op,
            summary.latency_ms,
            affected.join(", ")
        );
    }
    write_file(out, &manager.render_png(&id)?)?;
    if let Some(dir) = emit_stack {
        manager.export(&id, dir)?;
        println!("scene written to {}", dir.display());
    }
    Ok(())
}

fn summary_name(spec: &OpSpec) -> &'static str {
    match spec {
        OpSpec::Remove(_) => "remove",
        OpSpec::Reorder(..) => "reorder",
        OpSpec::Drag { .. } => "drag",
        OpSpec::Paste { .. } => "paste",
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn run_eval(pred: &Path, gt: &Path, report_path: &Path, iou_threshold: f32) -> Result<()> {
    if !(0.0..1.0).contains(&iou_threshold) {
        bail!("--iou-threshold must be in [0, 1)");
    }
    let config = EvalConfig {
        iou_threshold,
        ..EvalConfig::default()
    };
    let report = evaluate_dirs(pred, gt, &config)?;
    write_report(&report, report_path)?;
    let a = &report.aggregate;
    println!(
        "{} images: SAD {:.4} (occluded {:.4}, non-occluded {:.4}), MSE {:.4}, MAD {:.4}, {} missed, {} false positives",
        a.images, a.sad, a.sad_o, a.sad_no, a.mse, a.mad, a.missed, a.false_positives
    );
    if let Some(e) = &a.editing {
        println!(
            "editing: L1 {:.4}%, L2 {:.4}%, PSNR {:.2} dB",
            e.mean_l1, e.mean_l2, e.psnr
        );
    }
    Ok(())
}

fn run_render(scene: &Path, out: &Path, plane: Option<u32>, channel: Channel) -> Result<()> {
    let scene = load_scene(scene)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    match plane {
        None => write_color(out, &render(&scene.current))?,
        Some(k) => {
            let plane = scene
                .current
                .plane(PlaneId(k))
                .with_context(|| format!("scene has no plane {k}"))?;
            match channel {
                Channel::Color => write_color(out, plane.color())?,
                Channel::Alpha => write_alpha(out, plane.alpha())?,
            }
        }
    }
    Ok(())
}

fn run_info(scene: &Path) -> Result<()> {
    let manager = SessionManager::new(1);
    let summary = manager.create_session(scene)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn run_undo(scene: &Path, to: usize, out: &Path) -> Result<()> {
    let scene = load_scene(scene)?;
    if to > scene.log.len() {
        bail!("--to {to} is past the end of the {}-entry edit log", scene.log.len());
    }
    let kept = &scene.log[..to];
    let current = replay(&scene.base, kept)?;
    export_scene(&scene.base, kept, Some(&current), scene.manifest.seed, out)?;
    println!("kept {to} of {} edits, written to {}", scene.log.len(), out.display());
    Ok(())
}

fn run_export(scene: &Path, out: &Path) -> Result<()> {
    let scene = load_scene(scene)?;
    export_scene(&scene.base, &scene.log, Some(&scene.current), scene.manifest.seed, out)?;
    println!("written to {}", out.display());
    Ok(())
}

fn run_serve(host: &str, port: u16, work_dir: Option<PathBuf>) -> Result<()> {
    let manager = SessionManager::from_env()?;
    let work_dir = work_dir.unwrap_or_else(|| std::env::temp_dir().join("mpstack"));
    fs::create_dir_all(&work_dir).with_context(|| format!("creating {}", work_dir.display()))?;
    let addr: SocketAddr = format!("{host}:{port}")
        .parse()
        .with_context(|| format!("bad address {host}:{port}"))?;
    let max = manager.max_sessions();
    let app = router(Arc::new(AppState::new(manager, work_dir)));
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .with_context(|| format!("binding {addr}"))?;
        eprintln!("listening on http://{} (max {max} sessions)", listener.local_addr()?);
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Sgmp(args) => run_sgmp(args),
        Command::Synth(args) => run_synth(args),
        Command::Edit {
            scene,
            ops,
            out,
            emit_stack,
        } => run_edit(&scene, &ops, &out, emit_stack.as_deref()),
        Command::Eval {
            pred,
            gt,
            report,
            iou_threshold,
        } => run_eval(&pred, &gt, &report, iou_threshold),
        Command::Render {
            scene,
            out,
            plane,
            channel,
        } => run_render(&scene, &out, plane, channel),
        Command::Info { scene } => run_info(&scene),
        Command::Undo { scene, to, out } => run_undo(&scene, to, &out),
        Command::Export { scene, out } => run_export(&scene, &out),
        Command::Serve { host, port, work_dir } => run_serve(&host, port, work_dir),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
