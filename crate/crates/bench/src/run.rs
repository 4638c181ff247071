//! Benchmark sweeps over scenes, methods and seeds, written as CSV.
//!
//! Instances run on a bounded thread pool; rows are collected and written
//! in instance order by a single writer, so the output does not depend on
//! scheduling. Wall times are left blank unless asked for, which keeps
//! repeated runs byte-identical.

use std::io::Write;
use std::path::PathBuf;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use jointpnp_core::costs::TaskKind;
use jointpnp_core::planner::{joint_solve_from, sampling_solve, sequential_solve, Method, Problem, Solution, SolverSettings};

use crate::evaluate::{evaluate, EvalReport, FailureReason};
use crate::scene::{adversarial_scene, generate_scene, SceneFile};
use crate::{build_problem, BenchError, BuildOptions, Result};

pub const CSV_HEADER: [&str; 22] = [
    "scene",
    "method",
    "seed",
    "status",
    "grasp_success",
    "place_success",
    "failure",
    "likelihood",
    "grasp_score",
    "objective",
    "fk_grasp",
    "fk_place",
    "place_collision",
    "grasp_collision",
    "support",
    "restarts",
    "outer_iterations",
    "inner_iterations",
    "evaluations",
    "winning_restart",
    "solve_seconds",
    "eval_seconds",
];

pub const AGGREGATE_HEADER: [&str; 10] = [
    "#aggregate",
    "method",
    "instances",
    "feasible_rate",
    "grasp_rate",
    "place_rate",
    "success_rate",
    "mean_likelihood",
    "mean_solve_seconds",
    "std_solve_seconds",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SceneSet {
    /// Generated scenes with seeds `first_seed..first_seed + count`; the
    /// clutter count cycles through `clutter_min..=clutter_max`.
    Random { first_seed: u64, count: usize, clutter_min: usize, clutter_max: usize, task: TaskKind },
    /// Walled-pocket scenes where the highest-scoring grasp cannot place.
    Adversarial { count: usize },
    Files { paths: Vec<PathBuf> },
}

impl SceneSet {
    pub fn scenes(&self) -> Result<Vec<SceneFile>> {
        match self {
            SceneSet::Random { first_seed, count, clutter_min, clutter_max, task } => {
                if clutter_min > clutter_max {
                    return Err(BenchError::Config("clutter_min exceeds clutter_max".into()));
                }
                let span = clutter_max - clutter_min + 1;
                (0..*count).map(|i| generate_scene(first_seed + i as u64, clutter_min + i % span, *task)).collect()
            }
            SceneSet::Adversarial { count } => Ok((0..*count as u64).map(adversarial_scene).collect()),
            SceneSet::Files { paths } => paths.iter().map(SceneFile::load).collect(),
        }
    }
}

fn default_methods() -> Vec<Method> {
    vec![Method::Joint, Method::Sequential, Method::Sampling]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    pub scenes: SceneSet,
    /// Solver seeds; each scene is solved once per seed and method.
    pub seeds: Vec<u64>,
    /// Sample budget of the sampling baseline.
    pub samples: usize,
    /// Concurrent instances; 0 uses one per core.
    pub workers: usize,
    /// Fill the wall-time columns. Off by default so reruns match bytewise.
    pub wall_times: bool,
    pub epsilon: f64,
    pub voxel: f64,
    pub alpha: Option<f64>,
    pub solver: SolverSettings,
    pub output: Option<PathBuf>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        let b = BuildOptions::default();
        Self {
            methods: default_methods(),
            scenes: SceneSet::Random { first_seed: 0, count: 30, clutter_min: 4, clutter_max: 7, task: TaskKind::Target },
            seeds: vec![0],
            samples: 450,
            workers: 0,
            wall_times: false,
            epsilon: b.epsilon,
            voxel: b.voxel,
            alpha: None,
            solver: b.solver,
            output: None,
        }
    }
}

impl BenchConfig {
    pub fn from_toml(s: &str) -> Result<Self> {
        let c: BenchConfig = toml::from_str(s)?;
        c.validate()?;
        Ok(c)
    }

    pub fn build_options(&self) -> BuildOptions {
        BuildOptions { epsilon: self.epsilon, voxel: self.voxel, alpha: self.alpha, solver: self.solver.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(BenchError::Config("at least one method is required".into()));
        }
        if self.seeds.is_empty() {
            return Err(BenchError::Config("at least one seed is required".into()));
        }
        let scenes = match &self.scenes {
            SceneSet::Random { count, .. } | SceneSet::Adversarial { count } => *count,
            SceneSet::Files { paths } => paths.len(),
        };
        if scenes == 0 {
            return Err(BenchError::Config("the scene set is empty".into()));
        }
        if self.samples == 0 {
            return Err(BenchError::Config("the sampling budget must be positive".into()));
        }
        self.build_options().validate()
    }
}

/// One solved and scored instance.
#[derive(Clone, Debug)]
pub struct InstanceResult {
    pub scene: String,
    pub method: Method,
    pub seed: u64,
    /// `None` when the problem could not be built or the solver errored.
    pub solution: Option<Solution>,
    pub report: EvalReport,
    pub error: Option<String>,
}

#[derive(Clone, Debug)]
pub struct BenchOutput {
    pub results: Vec<InstanceResult>,
    pub csv: String,
}

fn failed_report() -> EvalReport {
    EvalReport {
        grasp_success: false,
        place_success: false,
        likelihood: 0.0,
        failure: FailureReason::Infeasible,
        grasp_score: 0.0,
        support: 0.0,
        solve_time: Duration::ZERO,
        eval_time: Duration::ZERO,
    }
}

/// Solves one scene with every configured method for one seed. When both
/// joint and pick-then-place run, the joint solve starts from the
/// pick-then-place result as well, and its time includes that solve.
fn run_instance(scene: &SceneFile, cfg: &BenchConfig, seed: u64) -> Vec<InstanceResult> {
    let fail = |method, e: String| InstanceResult {
        scene: scene.name.clone(),
        method,
        seed,
        solution: None,
        report: failed_report(),
        error: Some(e),
    };
    let problem = match build_problem(scene, &cfg.build_options()) {
        Ok(p) => p,
        Err(e) => return cfg.methods.iter().map(|&m| fail(m, e.to_string())).collect(),
    };
    let mut seq: Option<Solution> = None;
    let needs_seq = cfg.methods.contains(&Method::Sequential) && cfg.methods.contains(&Method::Joint);
    if needs_seq {
        seq = sequential_solve(&problem, seed).ok();
    }
    cfg.methods
        .iter()
        .map(|&m| {
            let solved = match m {
                Method::Sequential => match &seq {
                    Some(s) => Ok(s.clone()),
                    None => sequential_solve(&problem, seed),
                },
                Method::Joint => joint_with(&problem, seed, seq.as_ref()),
                Method::Sampling => sampling_solve(&problem, cfg.samples, seed),
            };
            match solved {
                Ok(sol) => {
                    let report = evaluate(&sol, scene, &problem);
                    InstanceResult { scene: scene.name.clone(), method: m, seed, solution: Some(sol), report, error: None }
                }
                Err(e) => fail(m, e.to_string()),
            }
        })
        .collect()
}

fn joint_with(problem: &Problem, seed: u64, seq: Option<&Solution>) -> jointpnp_core::Result<Solution> {
    match seq {
        Some(s) => {
            let mut sol = joint_solve_from(problem, seed, Some(s))?;
            sol.wall_time += s.wall_time;
            Ok(sol)
        }
        None => jointpnp_core::planner::joint_solve(problem, seed),
    }
}

/// Runs the sweep and renders the CSV; individual failures become rows.
pub fn run_benchmark(cfg: &BenchConfig) -> Result<BenchOutput> {
    cfg.validate()?;
    let scenes = cfg.scenes.scenes()?;
    let jobs: Vec<(usize, u64)> = (0..scenes.len()).flat_map(|i| cfg.seeds.iter().map(move |&s| (i, s))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| BenchError::Config(format!("thread pool: {e}")))?;
    let per_job: Vec<Vec<InstanceResult>> = pool.install(|| jobs.par_iter().map(|&(i, seed)| run_instance(&scenes[i], cfg, seed)).collect());
    let results: Vec<InstanceResult> = per_job.into_iter().flatten().collect();
    let csv = render_csv(&results, &cfg.methods, cfg.wall_times)?;
    if let Some(path) = &cfg.output {
        std::fs::File::create(path)?.write_all(csv.as_bytes())?;
    }
    Ok(BenchOutput { results, csv })
}

fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.6}")
    } else {
        String::new()
    }
}

fn sci(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x:.3e}"),
        _ => String::new(),
    }
}

fn flag(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

fn secs(d: Duration, on: bool) -> String {
    if on {
        format!("{:.3}", d.as_secs_f64())
    } else {
        String::new()
    }
}

pub fn data_row(r: &InstanceResult, wall_times: bool) -> Vec<String> {
    let e = &r.report;
    let (status, objective, fk_g, fk_p, pc, gc, counts, restart) = match &r.solution {
        Some(s) => (
            s.status.to_string(),
            num(s.objective),
            sci(Some(s.residuals.fk_grasp)),
            sci(Some(s.residuals.fk_place)),
            sci(s.residuals.place_collision()),
            sci(s.residuals.grasp_collision()),
            s.iterations,
            s.restart.to_string(),
        ),
        None => ("error".into(), String::new(), String::new(), String::new(), String::new(), String::new(), Default::default(), String::new()),
    };
    vec![
        r.scene.clone(),
        r.method.to_string(),
        r.seed.to_string(),
        status,
        flag(e.grasp_success).into(),
        flag(e.place_success).into(),
        e.failure.to_string(),
        num(e.likelihood),
        num(e.grasp_score),
        objective,
        fk_g,
        fk_p,
        pc,
        gc,
        num(e.support),
        counts.restarts.to_string(),
        counts.outer.to_string(),
        counts.inner.to_string(),
        counts.evaluations.to_string(),
        restart,
        secs(e.solve_time, wall_times),
        secs(e.eval_time, wall_times),
    ]
}

/// Per-method summary; recomputable from the data rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Aggregate {
    pub method: Method,
    pub instances: usize,
    pub feasible_rate: f64,
    pub grasp_rate: f64,
    pub place_rate: f64,
    pub success_rate: f64,
    pub mean_likelihood: f64,
    pub mean_seconds: f64,
    pub std_seconds: f64,
}

pub fn aggregate(results: &[InstanceResult], method: Method) -> Aggregate {
    let rows: Vec<&InstanceResult> = results.iter().filter(|r| r.method == method).collect();
    let n = rows.len().max(1) as f64;
    let rate = |f: &dyn Fn(&InstanceResult) -> bool| rows.iter().filter(|r| f(r)).count() as f64 / n;
    let times: Vec<f64> = rows.iter().map(|r| r.report.solve_time.as_secs_f64()).collect();
    let mean = times.iter().sum::<f64>() / n;
    let var = times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n;
    Aggregate {
        method,
        instances: rows.len(),
        feasible_rate: rate(&|r| r.solution.as_ref().is_some_and(|s| s.status.is_feasible())),
        grasp_rate: rate(&|r| r.report.grasp_success),
        place_rate: rate(&|r| r.report.place_success),
        success_rate: rate(&|r| r.report.success()),
        mean_likelihood: rows.iter().map(|r| r.report.likelihood).sum::<f64>() / n,
        mean_seconds: mean,
        std_seconds: var.sqrt(),
    }
}

pub fn render_csv(results: &[InstanceResult], methods: &[Method], wall_times: bool) -> Result<String> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for r in results {
        w.write_record(data_row(r, wall_times))?;
    }
    w.write_record(AGGREGATE_HEADER)?;
    for &m in methods {
        let a = aggregate(results, m);
        w.write_record([
            "#aggregate".to_string(),
            m.to_string(),
            a.instances.to_string(),
            num(a.feasible_rate),
            num(a.grasp_rate),
            num(a.place_rate),
            num(a.success_rate),
            num(a.mean_likelihood),
            if wall_times { format!("{:.3}", a.mean_seconds) } else { String::new() },
            if wall_times { format!("{:.3}", a.std_seconds) } else { String::new() },
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| BenchError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
