#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use jointpnp_bench::demo::{demo_options, inline_demo_scene, stacking_demo_scene, SequenceReport};
use jointpnp_bench::run::{render_csv, BenchConfig, InstanceResult, SceneSet};
use jointpnp_bench::{adversarial_scene, build_problem, evaluate, generate_scene, run_benchmark, run_sequential_task};
use jointpnp_bench::{field_settings, BenchError, BuildOptions, Result, SceneFile};
use jointpnp_core::costs::TaskKind;
use jointpnp_core::planner::{joint_solve, sampling_solve, sequential_solve, Method};
use jointpnp_core::sdf::{build_scene_sdf, TruncatedSdf};

#[derive(Parser)]
#[command(name = "jointpnp", version, about = "Joint grasp and placement planning benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one scene with one method and print a CSV row.
    Solve(SolveArgs),
    /// Run a sweep over scenes, methods and seeds.
    Bench(BenchArgs),
    /// Run a sequential placement demo.
    Demo(DemoArgs),
    /// Build, inspect or dump a scene's distance field.
    #[command(subcommand)]
    Sdf(SdfCommand),
    /// Write scene files.
    #[command(subcommand)]
    Scene(SceneCommand),
}

#[derive(Args, Clone)]
struct Tuning {
    /// Likelihood sharpness, overriding the scene's.
    #[arg(long)]
    alpha: Option<f64>,
    /// SDF voxel size, meters.
    #[arg(long)]
    voxel: Option<f64>,
    /// Collision margin, meters.
    #[arg(long)]
    epsilon: Option<f64>,
}

impl Tuning {
    fn apply(&self, o: &mut BuildOptions) {
        if self.alpha.is_some() {
            o.alpha = self.alpha;
        }
        if let Some(v) = self.voxel {
            o.voxel = v;
        }
        if let Some(e) = self.epsilon {
            o.epsilon = e;
        }
    }
}

#[derive(Args)]
struct SolveArgs {
    /// Scene file.
    scene: PathBuf,
    #[arg(long, default_value = "joint")]
    method: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sample budget of the sampling baseline.
    #[arg(long, default_value_t = 450)]
    samples: usize,
    #[command(flatten)]
    tuning: Tuning,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// TOML sweep configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Methods to run, comma separated.
    #[arg(long, value_delimiter = ',')]
    method: Vec<String>,
    /// Solver seeds, comma separated.
    #[arg(long, value_delimiter = ',')]
    seed: Vec<u64>,
    /// Generated scenes, starting at `--first-seed`.
    #[arg(long)]
    scenes: Option<usize>,
    #[arg(long)]
    first_seed: Option<u64>,
    /// Use this many adversarial scenes instead of generated ones.
    #[arg(long)]
    adversarial: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    /// Fill the wall-time columns.
    #[arg(long)]
    wall_times: bool,
    #[command(flatten)]
    tuning: Tuning,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum DemoKind {
    Inline,
    Stacking,
}

#[derive(Args)]
struct DemoArgs {
    #[arg(value_enum)]
    kind: DemoKind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Scene with a `sequence` list, replacing the built-in one.
    #[arg(long)]
    scene: Option<PathBuf>,
    #[command(flatten)]
    tuning: Tuning,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum SdfCommand {
    /// Build the place scene's field and write it as a binary grid.
    Build {
        scene: PathBuf,
        #[arg(long, default_value_t = 0.01)]
        voxel: f64,
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Print a grid's dimensions and value range.
    Inspect { grid: PathBuf },
    /// Write every voxel of a grid as CSV.
    Dump {
        grid: PathBuf,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum SceneCommand {
    /// Generate a random scene.
    Generate {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        clutter: usize,
        #[arg(long, default_value = "target")]
        task: String,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Write one of the walled-pocket scenes.
    Adversarial {
        #[arg(long, default_value_t = 0)]
        index: u64,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
}

fn emit(output: Option<&Path>, text: &str) -> Result<()> {
    match output {
        Some(p) => std::fs::write(p, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn parse_method(s: &str) -> Result<Method> {
    Ok(s.parse::<Method>()?)
}

fn parse_task(s: &str) -> Result<TaskKind> {
    match s {
        "target" => Ok(TaskKind::Target),
        "inline" => Ok(TaskKind::Inline),
        "pack" => Ok(TaskKind::Pack),
        "stack" => Ok(TaskKind::Stack),
        _ => Err(BenchError::Config(format!("unknown task {s:?}"))),
    }
}

fn solve(a: SolveArgs) -> Result<()> {
    let scene = SceneFile::load(&a.scene)?;
    let method = parse_method(&a.method)?;
    let mut opts = BuildOptions::default();
    a.tuning.apply(&mut opts);
    let problem = build_problem(&scene, &opts)?;
    let solved = match method {
        Method::Joint => joint_solve(&problem, a.seed),
        Method::Sequential => sequential_solve(&problem, a.seed),
        Method::Sampling => sampling_solve(&problem, a.samples, a.seed),
    };
    let sol = solved?;
    let report = evaluate(&sol, &scene, &problem);
    let result = InstanceResult { scene: scene.name.clone(), method, seed: a.seed, solution: Some(sol), report, error: None };
    emit(a.output.as_deref(), &render_csv(&[result], &[method], false)?)
}

fn bench(a: BenchArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => BenchConfig::from_toml(&std::fs::read_to_string(p)?)?,
        None => BenchConfig::default(),
    };
    if !a.method.is_empty() {
        cfg.methods = a.method.iter().map(|m| parse_method(m)).collect::<Result<_>>()?;
    }
    if !a.seed.is_empty() {
        cfg.seeds = a.seed.clone();
    }
    if let Some(n) = a.adversarial {
        cfg.scenes = SceneSet::Adversarial { count: n };
    } else if a.scenes.is_some() || a.first_seed.is_some() {
        if let SceneSet::Random { first_seed, count, .. } = &mut cfg.scenes {
            *count = a.scenes.unwrap_or(*count);
            *first_seed = a.first_seed.unwrap_or(*first_seed);
        } else {
            return Err(BenchError::Config("--scenes and --first-seed need a generated scene set".into()));
        }
    }
    if let Some(s) = a.samples {
        cfg.samples = s;
    }
    if let Some(w) = a.workers {
        cfg.workers = w;
    }
    cfg.wall_times |= a.wall_times;
    let mut opts = cfg.build_options();
    a.tuning.apply(&mut opts);
    cfg.alpha = opts.alpha;
    cfg.voxel = opts.voxel;
    cfg.epsilon = opts.epsilon;
    if a.output.is_some() {
        cfg.output = a.output.clone();
    }
    let out = run_benchmark(&cfg)?;
    for r in out.results.iter().filter(|r| r.error.is_some()) {
        eprintln!("{} {} seed {}: {}", r.scene, r.method, r.seed, r.error.as_deref().unwrap_or_default());
    }
    if cfg.output.is_none() {
        emit(None, &out.csv)?;
    }
    Ok(())
}

fn demo_csv(r: &SequenceReport) -> Result<String> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(Vec::new());
    w.write_record([
        "step",
        "object",
        "status",
        "grasp_success",
        "place_success",
        "failure",
        "likelihood",
        "x",
        "y",
        "z",
        "line_deviation",
        "orientation_cost",
        "identity_cost",
        "best_flat_cost",
        "sdf_matches_rebuild",
    ])?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    for (i, s) in r.steps.iter().enumerate() {
        let (status, t) = match &s.solution {
            Some(sol) => (sol.status.to_string(), Some(sol.place.translation())),
            None => ("error".to_string(), None),
        };
        w.write_record([
            i.to_string(),
            s.object.clone(),
            status,
            u8::from(s.report.grasp_success).to_string(),
            u8::from(s.report.place_success).to_string(),
            s.report.failure.to_string(),
            format!("{:.6}", s.report.likelihood),
            opt(t.map(|t| t.x)),
            opt(t.map(|t| t.y)),
            opt(t.map(|t| t.z)),
            opt(s.line_deviation),
            opt(s.orientation_cost),
            opt(s.identity_cost),
            opt(s.best_flat_cost),
            u8::from(s.sdf_matches_rebuild).to_string(),
        ])?;
    }
    w.write_record(["#stack_height".to_string(), format!("{:.6}", r.stack_height)])?;
    let bytes = w.into_inner().map_err(|e| BenchError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn demo(a: DemoArgs) -> Result<()> {
    let (scene, kind) = match a.kind {
        DemoKind::Inline => (inline_demo_scene(), TaskKind::Inline),
        DemoKind::Stacking => (stacking_demo_scene(), TaskKind::Stack),
    };
    let scene = match &a.scene {
        Some(p) => SceneFile::load(p)?,
        None => scene,
    };
    let mut opts = demo_options(kind);
    a.tuning.apply(&mut opts);
    let report = run_sequential_task(&scene, &opts, a.seed)?;
    emit(a.output.as_deref(), &demo_csv(&report)?)
}

fn read_grid(p: &Path) -> Result<TruncatedSdf> {
    Ok(TruncatedSdf::read_from(std::io::BufReader::new(std::fs::File::open(p)?))?)
}

fn sdf(c: SdfCommand) -> Result<()> {
    match c {
        SdfCommand::Build { scene, voxel, output } => {
            if !(voxel > 0.0) {
                return Err(BenchError::Config(format!("voxel size must be positive, got {voxel}")));
            }
            let scene = SceneFile::load(scene)?;
            let cloud = scene.place_cloud();
            if cloud.is_empty() {
                return Err(BenchError::Config("the place scene has no objects".into()));
            }
            let grid = build_scene_sdf(&cloud, &field_settings(voxel, BuildOptions::default().epsilon))?;
            grid.write_to(std::io::BufWriter::new(std::fs::File::create(output)?))?;
        }
        SdfCommand::Inspect { grid } => {
            let g = read_grid(&grid)?;
            let geo = g.geometry();
            let (lo, hi) = g.distances().iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &d| (a.min(d), b.max(d)));
            println!("dims {} {} {}", geo.dims[0], geo.dims[1], geo.dims[2]);
            println!("spacing {:.6}", geo.spacing);
            println!("origin {:.6} {:.6} {:.6}", geo.origin.x, geo.origin.y, geo.origin.z);
            println!("truncation {:.6}", g.truncation());
            println!("occupied {}", g.occupancy().occupied_count());
            println!("distance range {lo:.6} {hi:.6}");
        }
        SdfCommand::Dump { grid, output } => {
            let g = read_grid(&grid)?;
            let geo = *g.geometry();
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["i", "j", "k", "x", "y", "z", "distance", "gx", "gy", "gz"])?;
            for lin in 0..geo.len() {
                let idx = geo.unlinear(lin);
                let c = geo.cell_center(idx);
                let gr = g.gradients()[lin];
                w.write_record([
                    idx[0].to_string(),
                    idx[1].to_string(),
                    idx[2].to_string(),
                    format!("{:.6}", c.x),
                    format!("{:.6}", c.y),
                    format!("{:.6}", c.z),
                    format!("{:.6}", g.distances()[lin]),
                    format!("{:.6}", gr[0]),
                    format!("{:.6}", gr[1]),
                    format!("{:.6}", gr[2]),
                ])?;
            }
            let bytes = w.into_inner().map_err(|e| BenchError::Io(e.into_error()))?;
            emit(output.as_deref(), &String::from_utf8(bytes).expect("csv output is utf-8"))?;
        }
    }
    Ok(())
}

fn scene(c: SceneCommand) -> Result<()> {
    let (s, output) = match c {
        SceneCommand::Generate { seed, clutter, task, output } => (generate_scene(seed, clutter, parse_task(&task)?)?, output),
        SceneCommand::Adversarial { index, output } => (adversarial_scene(index), output),
    };
    emit(output.as_deref(), &s.to_toml()?)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Solve(a) => solve(a),
        Command::Bench(a) => bench(a),
        Command::Demo(a) => demo(a),
        Command::Sdf(c) => sdf(c),
        Command::Scene(c) => scene(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
