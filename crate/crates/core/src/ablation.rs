//! Ablation grids over a set of scene pairs: measure subsets and constraints,
//! matching strategies, refinement stages and walk lengths. Each
//! configuration is scored by the mean pseudo-label AS/AR/EPE over scenes.

use std::fmt;

use rayon::prelude::*;

use crate::cost::Measures;
use crate::error::{Error, Result};
use crate::io::ScenePair;
use crate::metrics::label_quality;
use crate::model::FlowField;
use crate::pipeline::{generate_labels, Assignment, MatchStrategy, PipelineConfig, Refinement, SourceMode};
use crate::synth::{generate, ColorMode, SceneSpec, MAX_ROTATION, MAX_TRANSLATION};
use crate::walk::WalkSteps;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Table {
    /// Measures and the one-to-one constraint.
    Measures,
    /// Source frame and matching strategy.
    Matching,
    /// Refinement stages.
    Refinement,
    /// Random-walk steps.
    WalkSteps,
}

impl Table {
    pub fn label(&self) -> &'static str {
        match self {
            Table::Measures => "A1",
            Table::Matching => "A2",
            Table::Refinement => "A3",
            Table::WalkSteps => "A4",
        }
    }
}

/// One configuration of an ablation table.
#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub table: Table,
    pub name: String,
    pub config: PipelineConfig,
}

fn variant(table: Table, name: &str, config: PipelineConfig) -> Variant {
    Variant {
        table,
        name: name.to_string(),
        config,
    }
}

fn with_measures(base: &PipelineConfig, measures: Measures, assignment: Assignment) -> PipelineConfig {
    let mut config = *base;
    config.cost.measures = measures;
    config.assignment = assignment;
    config.matching = MatchStrategy::Hard;
    config.refinement = Refinement::Off;
    config
}

/// Greedy search and transport, each with coordinate, +color and
/// +color+normal measures; no refinement.
pub fn measures_table(base: &PipelineConfig) -> Vec<Variant> {
    let mut rows = Vec::new();
    for (assignment, prefix) in [(Assignment::Greedy, "greedy"), (Assignment::Transport, "transport")] {
        for (measures, suffix) in [
            (Measures::COORDINATE, "coord"),
            (Measures::COORDINATE_COLOR, "coord+color"),
            (Measures::ALL, "coord+color+normal"),
        ] {
            rows.push(variant(
                Table::Measures,
                &format!("{prefix} {suffix}"),
                with_measures(base, measures, assignment),
            ));
        }
    }
    rows
}

/// Raw hard matching, pre-warped soft matching and pre-warped hard matching;
/// no refinement.
pub fn matching_table(base: &PipelineConfig) -> Vec<Variant> {
    let plain = PipelineConfig {
        assignment: Assignment::Transport,
        refinement: Refinement::Off,
        ..*base
    };
    vec![
        variant(
            Table::Matching,
            "raw hard",
            PipelineConfig {
                source: SourceMode::Raw,
                matching: MatchStrategy::Hard,
                ..plain
            },
        ),
        variant(
            Table::Matching,
            "prewarped soft",
            PipelineConfig {
                source: SourceMode::Prewarped,
                matching: MatchStrategy::Soft,
                ..plain
            },
        ),
        variant(
            Table::Matching,
            "prewarped hard",
            PipelineConfig {
                source: SourceMode::Prewarped,
                matching: MatchStrategy::Hard,
                ..plain
            },
        ),
    ]
}

/// No refinement, naive smoothing, undirected walk, undirected + directed.
pub fn refinement_table(base: &PipelineConfig) -> Vec<Variant> {
    [
        (Refinement::Off, "labels only"),
        (Refinement::NaiveSmooth, "+naive smoothing"),
        (Refinement::UndirectedOnly, "+undirected walk"),
        (Refinement::Full, "+undirected +directed walk"),
    ]
    .into_iter()
    .map(|(refinement, name)| {
        variant(
            Table::Refinement,
            name,
            PipelineConfig {
                assignment: Assignment::Transport,
                matching: MatchStrategy::Hard,
                refinement,
                ..*base
            },
        )
    })
    .collect()
}

pub const WALK_STEP_GRID: [WalkSteps; 5] = [
    WalkSteps::Finite(1),
    WalkSteps::Finite(5),
    WalkSteps::Finite(10),
    WalkSteps::Finite(20),
    WalkSteps::Infinite,
];

/// Full refinement with 1, 5, 10, 20 and infinitely many walk steps.
pub fn walk_steps_table(base: &PipelineConfig) -> Vec<Variant> {
    WALK_STEP_GRID
        .iter()
        .map(|&steps| {
            let mut config = PipelineConfig {
                assignment: Assignment::Transport,
                matching: MatchStrategy::Hard,
                refinement: Refinement::Full,
                ..*base
            };
            config.walk.steps = steps;
            let name = match steps {
                WalkSteps::Finite(t) => format!("steps {t}"),
                WalkSteps::Infinite => "steps inf".to_string(),
            };
            variant(Table::WalkSteps, &name, config)
        })
        .collect()
}

/// All four tables in order. The measure table matches raw frames; the
/// refinement and walk tables build on pre-warped hard matching. `base`
/// supplies the cost, transport and walk parameters.
pub fn full_grid(base: &PipelineConfig) -> Vec<Variant> {
    let raw = PipelineConfig {
        source: SourceMode::Raw,
        ..*base
    };
    let prewarped = PipelineConfig {
        source: SourceMode::Prewarped,
        ..*base
    };
    let mut rows = measures_table(&raw);
    rows.extend(matching_table(base));
    rows.extend(refinement_table(&prewarped));
    rows.extend(walk_steps_table(&prewarped));
    rows
}

/// Suite-mean pseudo-label accuracy of one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub table: Table,
    pub name: String,
    /// Mean AS over scenes, percent. Scenes without any valid label count 0.
    pub as_pct: f64,
    pub ar_pct: f64,
    /// Mean EPE over scenes that have at least one valid label.
    pub epe: f64,
    pub scenes: usize,
    pub empty_scenes: usize,
}

/// Flow used to pre-warp a pair: its prediction, or the ground truth when
/// no prediction is stored.
pub fn prewarp_flow(pair: &ScenePair) -> Option<&FlowField> {
    pair.prediction.as_ref().or(pair.ground_truth.as_ref())
}

pub fn run_variant(pairs: &[ScenePair], variant: &Variant) -> Result<AblationRow> {
    if pairs.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let per_scene = pairs
        .par_iter()
        .map(|pair| {
            let gt = pair
                .ground_truth
                .as_ref()
                .ok_or_else(|| Error::InvalidParameter("ablation needs ground-truth flow for every scene".into()))?;
            let report = generate_labels(&pair.p, &pair.q, prewarp_flow(pair), &variant.config)?;
            match label_quality(&report.labels, gt) {
                Ok(m) => Ok(Some(m)),
                Err(Error::EmptyEvaluation) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let scenes = per_scene.len();
    let scored: Vec<_> = per_scene.iter().flatten().collect();
    let mean = |f: &dyn Fn(&crate::metrics::MetricReport) -> f64, over: usize| {
        if over == 0 {
            f64::NAN
        } else {
            scored.iter().map(|m| f(m)).sum::<f64>() / over as f64
        }
    };
    Ok(AblationRow {
        table: variant.table,
        name: variant.name.clone(),
        as_pct: mean(&|m| m.as_pct, scenes),
        ar_pct: mean(&|m| m.ar_pct, scenes),
        epe: mean(&|m| m.epe, scored.len()),
        scenes,
        empty_scenes: scenes - scored.len(),
    })
}

pub fn run_grid(pairs: &[ScenePair], variants: &[Variant]) -> Result<Vec<AblationRow>> {
    variants.iter().map(|v| run_variant(pairs, v)).collect()
}

/// Seeded noisy suite of synthetic scenes.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteSpec {
    pub scenes: usize,
    pub seed: u64,
    pub min_bodies: usize,
    pub max_bodies: usize,
    pub points_per_body: usize,
    pub jitter: f64,
    pub outlier_fraction: f64,
    pub max_translation: f64,
    /// Rotation angles of `SceneSpec::random` are rescaled to this cap.
    pub max_rotation: f64,
    pub color_mode: ColorMode,
}

impl Default for SuiteSpec {
    fn default() -> Self {
        SuiteSpec {
            scenes: 50,
            seed: 0,
            min_bodies: 1,
            max_bodies: 3,
            points_per_body: 96,
            jitter: 0.05,
            outlier_fraction: 0.1,
            max_translation: MAX_TRANSLATION,
            max_rotation: 0.075,
            color_mode: ColorMode::PerBody,
        }
    }
}

impl SuiteSpec {
    pub fn scene_specs(&self) -> Vec<SceneSpec> {
        let span = self.max_bodies.saturating_sub(self.min_bodies) + 1;
        (0..self.scenes)
            .map(|k| {
                let scene_seed = self.seed.wrapping_mul(1_000_003).wrapping_add(k as u64);
                let bodies = self.min_bodies + k % span;
                let mut spec = SceneSpec {
                    jitter: self.jitter,
                    outlier_fraction: self.outlier_fraction,
                    color_mode: self.color_mode,
                    ..SceneSpec::random(scene_seed, bodies, self.points_per_body, self.max_translation)
                };
                for body in &mut spec.bodies {
                    body.rotation *= self.max_rotation / MAX_ROTATION;
                }
                spec
            })
            .collect()
    }

    /// Generates every scene; pairs carry ground truth and no prediction.
    pub fn build(&self) -> Result<Vec<ScenePair>> {
        self.scene_specs()
            .par_iter()
            .map(|spec| {
                let scene = generate(spec)?;
                Ok(ScenePair {
                    p: scene.p,
                    q: scene.q,
                    ground_truth: Some(scene.gt_flow),
                    prediction: None,
                })
            })
            .collect()
    }
}

impl fmt::Display for AblationRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<4} {:<30} {:>8.2} {:>8.2} {:>10.4}",
            self.table.label(),
            self.name,
            self.as_pct,
            self.ar_pct,
            self.epe
        )
    }
}

/// Aligned text table of rows with a header line.
pub fn format_rows(rows: &[AblationRow]) -> String {
    let mut out = format!(
        "{:<4} {:<30} {:>8} {:>8} {:>10}\n",
        "tab", "config", "AS(%)", "AR(%)", "EPE(m)"
    );
    for row in rows {
        out.push_str(&row.to_string());
        out.push('\n');
    }
    out
}
