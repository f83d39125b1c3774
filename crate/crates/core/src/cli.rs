//! Command-line front end: `label`, `eval`, `synth`, `ablate` and `bench`.
//!
//! Every tuning flag is optional; an absent flag keeps the value from
//! [`PipelineConfig::default`], so the library defaults stay the single
//! source of truth.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::ablation::{
    format_rows, full_grid, matching_table, measures_table, refinement_table, run_grid, walk_steps_table, SuiteSpec,
};
use crate::cost::Measures;
use crate::features::{estimate_normals, DEFAULT_NORMAL_K};
use crate::io::{
    list_scene_dirs, read_cloud, read_flow, read_flow_file, read_scene_pair, write_labels, write_scene_pair,
    PlyEncoding, ScenePair, FIRST_FRAME_FILE,
};
use crate::metrics::{evaluate, label_quality};
use crate::model::PointCloud;
use crate::pipeline::{
    generate_labels, Assignment, MatchStrategy, PipelineConfig, Refinement, SourceMode, StageTimings,
};
use crate::synth::{generate, SceneSpec};
use crate::walk::WalkSteps;

#[derive(Debug, Parser)]
#[command(
    name = "otflow",
    version,
    about = "Pseudo scene-flow labels from optimal transport and random walks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate pseudo labels for a pair of clouds.
    Label(LabelCmd),
    /// Score a predicted flow (or label file) against ground truth.
    Eval(EvalCmd),
    /// Write a synthetic scene described by a key=value config.
    Synth(SynthCmd),
    /// Run the ablation grid over scene directories or a synthetic suite.
    Ablate(AblateCmd),
    /// Time each pipeline stage over repeated runs.
    Bench(BenchCmd),
}

/// Flags shared by every command that runs the pipeline.
#[derive(Debug, Clone, Default, Args)]
pub struct PipelineArgs {
    /// Cost measures, comma separated from coord, color, normal.
    #[arg(long)]
    pub measures: Option<String>,
    /// Correspondence search.
    #[arg(long, value_enum)]
    pub assignment: Option<AssignmentArg>,
    /// Hard (row argmax) or soft (barycentric) matching.
    #[arg(long, value_enum)]
    pub strategy: Option<StrategyArg>,
    /// Match the raw first frame or the frame pre-warped by a predicted flow.
    #[arg(long, value_enum)]
    pub source: Option<SourceArg>,
    /// Refinement stages after the displacement filter.
    #[arg(long, value_enum)]
    pub refine: Option<RefineArg>,
    /// Bandwidth of the coordinate kernel (meters)
    #[arg(long)]
    pub theta_d: Option<f64>,
    /// Bandwidth of the color kernel
    #[arg(long)]
    pub theta_c: Option<f64>,
    /// Bandwidth of the random-walk affinity kernel (meters)
    #[arg(long)]
    pub theta_r: Option<f64>,
    /// Random-walk propagation weight in [0, 1)
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Entropic regularization of the transport problem
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Maximum Sinkhorn iterations.
    #[arg(long)]
    pub iters_ot: Option<usize>,
    /// Newton polish steps after an unconverged Sinkhorn run.
    #[arg(long)]
    pub newton_steps: Option<usize>,
    /// Random-walk steps, a count or `inf` for the closed form.
    #[arg(long)]
    pub iters_walk: Option<WalkStepsArg>,
    /// Labels longer than this (meters) are discarded.
    #[arg(long)]
    pub max_disp: Option<f64>,
    /// Neighborhood size of the naive smoothing baseline.
    #[arg(long)]
    pub naive_k: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AssignmentArg {
    Ot,
    Greedy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    Hard,
    Soft,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SourceArg {
    Raw,
    Prewarp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RefineArg {
    Off,
    Naive,
    Walk,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WalkStepsArg(pub WalkSteps);

impl FromStr for WalkStepsArg {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "inf" | "infinite" | "∞" => Ok(WalkStepsArg(WalkSteps::Infinite)),
            n => n
                .parse::<usize>()
                .map(|t| WalkStepsArg(WalkSteps::Finite(t)))
                .map_err(|_| format!("expected a step count or `inf`, got {n:?}")),
        }
    }
}

/// Parses `coord,color,normal`-style lists. The coordinate term is always
/// part of the cost, so `coord` may be omitted.
pub fn parse_measures(text: &str) -> anyhow::Result<Measures> {
    let mut measures = Measures::COORDINATE;
    for token in text.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        match token {
            "coord" | "coordinate" => {}
            "color" => measures.color = true,
            "normal" => measures.normal = true,
            other => bail!("unknown measure {other:?} (expected coord, color, normal)"),
        }
    }
    Ok(measures)
}

impl PipelineArgs {
    /// Applies the given flags on top of the library defaults.
    pub fn config(&self) -> anyhow::Result<PipelineConfig> {
        let mut c = PipelineConfig::default();
        if let Some(m) = &self.measures {
            c.cost.measures = parse_measures(m)?;
        }
        if let Some(a) = self.assignment {
            c.assignment = match a {
                AssignmentArg::Ot => Assignment::Transport,
                AssignmentArg::Greedy => Assignment::Greedy,
            };
        }
        if let Some(s) = self.strategy {
            c.matching = match s {
                StrategyArg::Hard => MatchStrategy::Hard,
                StrategyArg::Soft => MatchStrategy::Soft,
            };
        }
        if let Some(s) = self.source {
            c.source = match s {
                SourceArg::Raw => SourceMode::Raw,
                SourceArg::Prewarp => SourceMode::Prewarped,
            };
        }
        if let Some(r) = self.refine {
            c.refinement = match r {
                RefineArg::Off => Refinement::Off,
                RefineArg::Naive => Refinement::NaiveSmooth,
                RefineArg::Walk => Refinement::UndirectedOnly,
                RefineArg::Full => Refinement::Full,
            };
        }
        if let Some(v) = self.theta_d {
            c.cost.theta_d = v;
        }
        if let Some(v) = self.theta_c {
            c.cost.theta_c = v;
        }
        if let Some(v) = self.theta_r {
            c.walk.theta_r = v;
        }
        if let Some(v) = self.alpha {
            c.walk.alpha = v;
        }
        if let Some(v) = self.epsilon {
            c.sinkhorn.epsilon = v;
        }
        if let Some(v) = self.iters_ot {
            c.sinkhorn.max_iterations = v;
        }
        if let Some(v) = self.newton_steps {
            c.sinkhorn.newton_steps = v;
        }
        if let Some(WalkStepsArg(steps)) = self.iters_walk {
            c.walk.steps = steps;
        }
        if let Some(v) = self.max_disp {
            c.max_displacement = v;
        }
        if let Some(v) = self.naive_k {
            c.naive_k = v;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Args)]
pub struct LabelCmd {
    /// First frame (PLY).
    pub p: PathBuf,
    /// Second frame (PLY).
    pub q: PathBuf,
    /// Output label file (SFL1 with validity flags).
    #[arg(short, long)]
    pub out: PathBuf,
    /// Predicted flow of the first frame (SFL1), used by `--source prewarp`.
    #[arg(long)]
    pub flow: Option<PathBuf>,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Debug, Args)]
pub struct EvalCmd {
    /// Predicted flow or label file (SFL1). Label files are scored over
    /// their valid entries only.
    pub pred: PathBuf,
    /// Ground-truth flow (SFL1).
    pub gt: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthCmd {
    /// key=value scene description.
    pub config: PathBuf,
    /// Output scene directory.
    #[arg(short, long)]
    pub out: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write binary little-endian PLY instead of ascii.
    #[arg(long)]
    pub binary: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TableArg {
    All,
    A1,
    A2,
    A3,
    A4,
}

#[derive(Debug, Args)]
pub struct AblateCmd {
    /// A scene directory or a directory of scene directories. Without it the
    /// seeded synthetic suite is used.
    pub scenes: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "all")]
    pub table: TableArg,
    /// Seed of the synthetic suite.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of scenes in the synthetic suite.
    #[arg(long)]
    pub suite_scenes: Option<usize>,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Debug, Args)]
pub struct BenchCmd {
    /// First frame (PLY).
    pub p: PathBuf,
    /// Second frame (PLY).
    pub q: PathBuf,
    /// Predicted flow of the first frame (SFL1), used by `--source prewarp`.
    #[arg(long)]
    pub flow: Option<PathBuf>,
    /// Number of timed repetitions
    #[arg(long, default_value_t = 5)]
    pub runs: usize,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

/// Adds PCA normals to a cloud that has none when the cost needs them.
pub fn with_normals_if_needed(cloud: PointCloud, config: &PipelineConfig) -> anyhow::Result<PointCloud> {
    if !config.cost.measures.normal || cloud.normals.is_some() {
        return Ok(cloud);
    }
    let k = DEFAULT_NORMAL_K.min(cloud.len());
    estimate_normals(&cloud, k).context("estimating normals for a cloud without stored normals")
}

fn load_pair(p: &Path, q: &Path, flow: Option<&Path>, config: &PipelineConfig) -> anyhow::Result<ScenePair> {
    let p_cloud = read_cloud(p).with_context(|| format!("reading {}", p.display()))?;
    let q_cloud = read_cloud(q).with_context(|| format!("reading {}", q.display()))?;
    let prediction = flow
        .map(|f| read_flow(f).with_context(|| format!("reading {}", f.display())))
        .transpose()?;
    if config.source == SourceMode::Prewarped && prediction.is_none() {
        bail!("--source prewarp needs a predicted flow (--flow)");
    }
    Ok(ScenePair {
        p: with_normals_if_needed(p_cloud, config)?,
        q: with_normals_if_needed(q_cloud, config)?,
        ground_truth: None,
        prediction,
    })
}

fn run_label(cmd: &LabelCmd) -> anyhow::Result<String> {
    let config = cmd.pipeline.config()?;
    let pair = load_pair(&cmd.p, &cmd.q, cmd.flow.as_deref(), &config)?;
    let report = generate_labels(&pair.p, &pair.q, pair.prediction.as_ref(), &config)?;
    write_labels(&cmd.out, &report.labels).with_context(|| format!("writing {}", cmd.out.display()))?;
    let mut out = String::new();
    writeln!(out, "points={}", report.labels.len())?;
    writeln!(out, "labeled={}", report.labeled_count)?;
    writeln!(out, "unlabeled={}", report.unlabeled_count)?;
    writeln!(out, "valid={}", report.labels.valid_count())?;
    writeln!(out, "sinkhorn_iterations={}", report.sinkhorn_iterations)?;
    writeln!(out, "sinkhorn_converged={}", report.sinkhorn_converged)?;
    if report.refinement_downgraded {
        writeln!(out, "refinement_skipped=true")?;
    }
    Ok(out)
}

fn run_eval(cmd: &EvalCmd) -> anyhow::Result<String> {
    let pred = read_flow_file(&cmd.pred).with_context(|| format!("reading {}", cmd.pred.display()))?;
    let gt = read_flow(&cmd.gt).with_context(|| format!("reading {}", cmd.gt.display()))?;
    let report = if pred.validity.is_some() {
        label_quality(&pred.into_labels(), &gt)?
    } else {
        evaluate(&pred.into_flow(), &gt, None)?
    };
    Ok(format!("{report}{}", report.to_key_values()))
}

fn run_synth(cmd: &SynthCmd) -> anyhow::Result<String> {
    let text = std::fs::read_to_string(&cmd.config).with_context(|| format!("reading {}", cmd.config.display()))?;
    let mut spec = SceneSpec::from_config(&text)?;
    if let Some(seed) = cmd.seed {
        spec.seed = seed;
    }
    let scene = generate(&spec)?;
    let pair = ScenePair {
        p: scene.p,
        q: scene.q,
        ground_truth: Some(scene.gt_flow),
        prediction: None,
    };
    let encoding = if cmd.binary {
        PlyEncoding::BinaryLittleEndian
    } else {
        PlyEncoding::Ascii
    };
    write_scene_pair(&cmd.out, &pair, encoding).with_context(|| format!("writing {}", cmd.out.display()))?;
    Ok(format!(
        "points={}\nbodies={}\noutliers={}\n",
        pair.p.len(),
        spec.bodies.len(),
        scene.outlier.iter().filter(|&&o| o).count()
    ))
}

fn load_scene_dirs(root: &Path, config: &PipelineConfig) -> anyhow::Result<Vec<ScenePair>> {
    let dirs = if root.join(FIRST_FRAME_FILE).is_file() {
        vec![root.to_path_buf()]
    } else {
        list_scene_dirs(root).with_context(|| format!("listing {}", root.display()))?
    };
    if dirs.is_empty() {
        bail!("no scene directories under {}", root.display());
    }
    dirs.iter()
        .map(|dir| {
            let pair = read_scene_pair(dir).with_context(|| format!("reading scene {}", dir.display()))?;
            Ok(ScenePair {
                p: with_normals_if_needed(pair.p, config)?,
                q: with_normals_if_needed(pair.q, config)?,
                ..pair
            })
        })
        .collect()
}

fn run_ablate(cmd: &AblateCmd) -> anyhow::Result<String> {
    let base = cmd.pipeline.config()?;
    // every grid row uses normals
    let with_all = PipelineConfig {
        cost: crate::cost::CostParams {
            measures: Measures::ALL,
            ..base.cost
        },
        ..base
    };
    let pairs = match &cmd.scenes {
        Some(root) => load_scene_dirs(root, &with_all)?,
        None => {
            let mut suite = SuiteSpec {
                seed: cmd.seed,
                ..SuiteSpec::default()
            };
            if let Some(n) = cmd.suite_scenes {
                suite.scenes = n;
            }
            suite.build()?
        }
    };
    let raw = PipelineConfig {
        source: SourceMode::Raw,
        ..base
    };
    let prewarped = PipelineConfig {
        source: SourceMode::Prewarped,
        ..base
    };
    let variants = match cmd.table {
        TableArg::All => full_grid(&base),
        TableArg::A1 => measures_table(&raw),
        TableArg::A2 => matching_table(&base),
        TableArg::A3 => refinement_table(&prewarped),
        TableArg::A4 => walk_steps_table(&prewarped),
    };
    let rows = run_grid(&pairs, &variants)?;
    Ok(format_rows(&rows))
}

fn run_bench(cmd: &BenchCmd) -> anyhow::Result<String> {
    if cmd.runs == 0 {
        bail!("--runs must be at least 1");
    }
    let config = cmd.pipeline.config()?;
    let pair = load_pair(&cmd.p, &cmd.q, cmd.flow.as_deref(), &config)?;
    let mut total = StageTimings::default();
    let mut best = f64::INFINITY;
    for _ in 0..cmd.runs {
        let t = &generate_labels(&pair.p, &pair.q, pair.prediction.as_ref(), &config)?.timings;
        total.prewarp_ms += t.prewarp_ms;
        total.cost_ms += t.cost_ms;
        total.transport_ms += t.transport_ms;
        total.matching_ms += t.matching_ms;
        total.refine_ms += t.refine_ms;
        total.propagate_ms += t.propagate_ms;
        best = best.min(t.total_ms());
    }
    let n = cmd.runs as f64;
    let mut out = format!(
        "points={} runs={}\n{:<12} {:>12}\n",
        pair.p.len(),
        cmd.runs,
        "stage",
        "mean(ms)"
    );
    for (name, ms) in [
        ("prewarp", total.prewarp_ms),
        ("cost", total.cost_ms),
        ("transport", total.transport_ms),
        ("matching", total.matching_ms),
        ("refine", total.refine_ms),
        ("propagate", total.propagate_ms),
    ] {
        writeln!(out, "{:<12} {:>12.3}", name, ms / n)?;
    }
    writeln!(out, "{:<12} {:>12.3}", "generation", total.generation_ms() / n)?;
    writeln!(out, "{:<12} {:>12.3}", "refinement", total.refinement_ms() / n)?;
    writeln!(out, "{:<12} {:>12.3}", "best total", best)?;
    Ok(out)
}

/// Runs one parsed command and returns its stdout text.
pub fn run(cli: &Cli) -> anyhow::Result<String> {
    match &cli.command {
        Command::Label(cmd) => run_label(cmd),
        Command::Eval(cmd) => run_eval(cmd),
        Command::Synth(cmd) => run_synth(cmd),
        Command::Ablate(cmd) => run_ablate(cmd),
        Command::Bench(cmd) => run_bench(cmd),
    }
}
