//! End-to-end pseudo-label generation for one pair of frames.

use std::time::Instant;

use crate::cost::{build_cost_matrix, CostParams};
use crate::error::{Error, Result};
use crate::model::{prewarp, FlowField, PointCloud, PseudoLabelSet, Vec3};
use crate::sinkhorn::{
    extract_labels, greedy_search, harden, labels_from_matches, sinkhorn_uniform, soft_match, SinkhornParams,
    DEFAULT_MAX_DISPLACEMENT,
};
use crate::walk::{
    directed_transition_from_points, naive_smooth, propagate_directed, refine, undirected_transition_from_points,
    RandomWalkParams,
};

pub const DEFAULT_NAIVE_K: usize = 16;

/// How correspondences are searched for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Assignment {
    /// Entropic OT with uniform marginals.
    #[default]
    Transport,
    /// Per-row cheapest target, no marginal constraints.
    Greedy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MatchStrategy {
    #[default]
    Hard,
    Soft,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SourceMode {
    #[default]
    Raw,
    Prewarped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Refinement {
    Off,
    NaiveSmooth,
    UndirectedOnly,
    #[default]
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub cost: CostParams,
    pub sinkhorn: SinkhornParams,
    pub walk: RandomWalkParams,
    pub max_displacement: f64,
    pub assignment: Assignment,
    pub matching: MatchStrategy,
    pub source: SourceMode,
    pub refinement: Refinement,
    /// Neighborhood size of the naive smoothing baseline.
    pub naive_k: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            cost: CostParams::default(),
            sinkhorn: SinkhornParams::default(),
            walk: RandomWalkParams::default(),
            max_displacement: DEFAULT_MAX_DISPLACEMENT,
            assignment: Assignment::Transport,
            matching: MatchStrategy::Hard,
            source: SourceMode::Raw,
            refinement: Refinement::Full,
            naive_k: DEFAULT_NAIVE_K,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.cost.validate()?;
        self.sinkhorn.validate()?;
        self.walk.validate()?;
        if !(self.max_displacement > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "max_displacement must be > 0, got {}",
                self.max_displacement
            )));
        }
        if self.assignment == Assignment::Greedy && self.matching == MatchStrategy::Soft {
            return Err(Error::InvalidParameter(
                "soft matching needs a transport plan; greedy search has none".into(),
            ));
        }
        if self.naive_k == 0 {
            return Err(Error::InvalidParameter("naive_k must be >= 1".into()));
        }
        Ok(())
    }
}

/// Wall-clock time per stage, in milliseconds. Informational only.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StageTimings {
    pub prewarp_ms: f64,
    pub cost_ms: f64,
    pub transport_ms: f64,
    pub matching_ms: f64,
    pub refine_ms: f64,
    pub propagate_ms: f64,
}

impl StageTimings {
    /// Label generation: everything up to and including the filter.
    pub fn generation_ms(&self) -> f64 {
        self.prewarp_ms + self.cost_ms + self.transport_ms + self.matching_ms
    }

    pub fn refinement_ms(&self) -> f64 {
        self.refine_ms + self.propagate_ms
    }

    pub fn total_ms(&self) -> f64 {
        self.generation_ms() + self.refinement_ms()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelReport {
    /// Final labels over every point of the first frame.
    pub labels: PseudoLabelSet,
    /// Points with a valid label after the displacement filter.
    pub labeled_count: usize,
    pub unlabeled_count: usize,
    pub transport_cost_total: f64,
    pub timings: StageTimings,
    /// Set when refinement was requested but fewer than two labels survived
    /// the filter, so refinement was skipped.
    pub refinement_downgraded: bool,
    pub sinkhorn_iterations: usize,
    pub sinkhorn_converged: bool,
}

impl LabelReport {
    /// Equality ignoring wall-clock timings.
    pub fn same_result(&self, other: &LabelReport) -> bool {
        LabelReport {
            timings: StageTimings::default(),
            ..self.clone()
        } == LabelReport {
            timings: StageTimings::default(),
            ..other.clone()
        }
    }
}

fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

/// Generates pseudo labels for `p` by matching it (optionally pre-warped by
/// `predicted`) against `q`, then refines them as configured.
pub fn generate_labels(
    p: &PointCloud,
    q: &PointCloud,
    predicted: Option<&FlowField>,
    config: &PipelineConfig,
) -> Result<LabelReport> {
    config.validate()?;
    p.check()?;
    q.check()?;
    let mut timings = StageTimings::default();

    let t = Instant::now();
    let warped;
    let source = match config.source {
        SourceMode::Raw => p,
        SourceMode::Prewarped => {
            let flow = predicted
                .ok_or_else(|| Error::InvalidParameter("pre-warped matching requires a predicted flow".into()))?;
            warped = prewarp(p, flow)?;
            &warped
        }
    };
    timings.prewarp_ms = elapsed_ms(t);

    let t = Instant::now();
    let cost = build_cost_matrix(source, q, &config.cost)?;
    timings.cost_ms = elapsed_ms(t);

    let t = Instant::now();
    let plan = match config.assignment {
        Assignment::Transport => Some(sinkhorn_uniform(&cost, &config.sinkhorn)?),
        Assignment::Greedy => None,
    };
    timings.transport_ms = elapsed_ms(t);

    let t = Instant::now();
    let (initial, transport_cost_total) = match (&plan, config.matching) {
        (Some(plan), MatchStrategy::Hard) => {
            let corr = harden(plan);
            (
                extract_labels(p, q, &corr, config.max_displacement)?,
                plan.total_cost(&cost),
            )
        }
        (Some(plan), MatchStrategy::Soft) => {
            let targets = soft_match(plan, q)?;
            (
                labels_from_matches(p, &targets, &vec![true; p.len()], config.max_displacement)?,
                plan.total_cost(&cost),
            )
        }
        (None, _) => {
            let corr = greedy_search(&cost);
            let total = corr.total_cost(&cost) / p.len() as f64;
            (extract_labels(p, q, &corr, config.max_displacement)?, total)
        }
    };
    timings.matching_ms = elapsed_ms(t);

    let labeled = initial.labeled_indices();
    let unlabeled = initial.unlabeled_indices();
    let mut report = LabelReport {
        labels: initial,
        labeled_count: labeled.len(),
        unlabeled_count: unlabeled.len(),
        transport_cost_total,
        timings,
        refinement_downgraded: false,
        sinkhorn_iterations: plan.as_ref().map_or(0, |p| p.iterations),
        sinkhorn_converged: plan.as_ref().is_some_and(|p| p.converged),
    };

    if config.refinement == Refinement::Off {
        return Ok(report);
    }
    if labeled.len() < 2 {
        report.refinement_downgraded = true;
        return Ok(report);
    }

    let t = Instant::now();
    let labeled_points: Vec<Vec3> = labeled.iter().map(|&i| p.positions[i]).collect();
    let initial_flow = FlowField(labeled.iter().map(|&i| report.labels.labels[i]).collect());
    let refined = match config.refinement {
        Refinement::NaiveSmooth => {
            let k = config.naive_k.min(labeled.len());
            naive_smooth(&labeled_points, &initial_flow, k)?
        }
        _ => {
            let a1 = undirected_transition_from_points(&labeled_points, config.walk.theta_r)?;
            refine(&a1, &initial_flow, &config.walk)?
        }
    };
    for (&i, d) in labeled.iter().zip(refined.vectors()) {
        report.labels.labels[i] = *d;
    }
    report.timings.refine_ms = elapsed_ms(t);

    if config.refinement == Refinement::Full && !unlabeled.is_empty() {
        let t = Instant::now();
        let unlabeled_points: Vec<Vec3> = unlabeled.iter().map(|&i| p.positions[i]).collect();
        let a2 = directed_transition_from_points(&unlabeled_points, &labeled_points, config.walk.theta_r)?;
        let propagated = propagate_directed(&a2, &refined)?;
        for (&i, d) in unlabeled.iter().zip(propagated.vectors()) {
            report.labels.labels[i] = *d;
            report.labels.valid[i] = true;
        }
        report.timings.propagate_ms = elapsed_ms(t);
    }
    Ok(report)
}

/// Mean per-point L2 distance between labels and predictions over valid
/// labels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingLoss {
    pub value: f64,
    /// Number of valid labels the mean ran over; zero means no supervision.
    pub evaluated: usize,
}

impl TrainingLoss {
    pub fn is_empty(&self) -> bool {
        self.evaluated == 0
    }
}

pub fn training_loss(labels: &PseudoLabelSet, predicted: &FlowField) -> Result<TrainingLoss> {
    if labels.len() != predicted.len() {
        return Err(Error::LengthMismatch {
            expected: labels.len(),
            actual: predicted.len(),
        });
    }
    let (sum, count) = labels
        .labels
        .iter()
        .zip(&labels.valid)
        .zip(predicted.vectors())
        .filter(|((_, &valid), _)| valid)
        .fold((0.0, 0usize), |(s, c), ((d, _), f)| (s + (d - f).norm(), c + 1));
    Ok(TrainingLoss {
        value: if count == 0 { 0.0 } else { sum / count as f64 },
        evaluated: count,
    })
}

/// One self-supervision round: label with `predicted` as the pre-warp and
/// score the prediction against the labels.
pub fn self_label_round(
    p: &PointCloud,
    q: &PointCloud,
    predicted: &FlowField,
    config: &PipelineConfig,
) -> Result<(LabelReport, TrainingLoss)> {
    let config = PipelineConfig {
        source: SourceMode::Prewarped,
        ..*config
    };
    let report = generate_labels(p, q, Some(predicted), &config)?;
    let loss = training_loss(&report.labels, predicted)?;
    Ok((report, loss))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::Measures;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(x: f64, y: f64, z: f64) -> Vec3 {
        Vec3::new(x, y, z)
    }

    /// Small cloud with distinct geometry, gradient colors and varied normals.
    fn textured_cloud(seed: u64, n: usize) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let positions: Vec<Vec3> = (0..n)
            .map(|_| {
                v(
                    rng.random_range(0.0..2.0),
                    rng.random_range(0.0..2.0),
                    rng.random_range(0.0..0.5),
                )
            })
            .collect();
        let colors = positions.iter().map(|p| v(p.x / 2.0, p.y / 2.0, p.z * 2.0)).collect();
        let normals = (0..n)
            .map(|_| v(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 1.0).normalize())
            .collect();
        PointCloud::new(positions).with_colors(colors).with_normals(normals)
    }

    fn translated(cloud: &PointCloud, t: Vec3) -> PointCloud {
        PointCloud {
            positions: cloud.positions.iter().map(|p| p + t).collect(),
            ..cloud.clone()
        }
    }

    #[test]
    fn identical_clouds_give_zero_labels() {
        let p = textured_cloud(1, 40);
        for refinement in [
            Refinement::Off,
            Refinement::NaiveSmooth,
            Refinement::UndirectedOnly,
            Refinement::Full,
        ] {
            let config = PipelineConfig {
                refinement,
                ..PipelineConfig::default()
            };
            let report = generate_labels(&p, &p, None, &config).unwrap();
            assert!(report.labels.valid.iter().all(|&b| b));
            assert!(report.labels.labels.iter().all(|d| d.norm() < 1e-12), "{refinement:?}");
            assert_eq!(report.labeled_count + report.unlabeled_count, p.len());
        }
    }

    #[test]
    fn rigid_translation_is_recovered() {
        let p = textured_cloud(2, 60);
        let t = v(2.5, 0.0, 0.0);
        let q = translated(&p, t);
        let report = generate_labels(&p, &q, None, &PipelineConfig::default()).unwrap();
        assert!(report.labels.valid.iter().all(|&b| b));
        for d in &report.labels.labels {
            assert!((d - t).norm() < 1e-6);
        }
    }

    #[test]
    fn large_translation_is_filtered_out() {
        let p = textured_cloud(3, 30);
        let q = translated(&p, v(4.0, 0.0, 0.0));
        let config = PipelineConfig {
            refinement: Refinement::Off,
            ..PipelineConfig::default()
        };
        let report = generate_labels(&p, &q, None, &config).unwrap();
        assert_eq!(report.labeled_count, 0);
        assert_eq!(report.unlabeled_count, 30);
        assert!(report.labels.valid.iter().all(|&b| !b));

        // refinement requested but nothing to refine from
        let report = generate_labels(&p, &q, None, &PipelineConfig::default()).unwrap();
        assert!(report.refinement_downgraded);
        assert_eq!(report.labels.valid_count(), 0);
    }

    #[test]
    fn nearest_neighbor_baseline() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cloud = |rng: &mut ChaCha8Rng, n| {
            PointCloud::new(
                (0..n)
                    .map(|_| {
                        v(
                            rng.random_range(0.0..3.0),
                            rng.random_range(0.0..3.0),
                            rng.random_range(0.0..1.0),
                        )
                    })
                    .collect(),
            )
        };
        let p = cloud(&mut rng, 50);
        let q = cloud(&mut rng, 45);
        let config = PipelineConfig {
            cost: CostParams {
                measures: Measures::COORDINATE,
                ..CostParams::default()
            },
            assignment: Assignment::Greedy,
            refinement: Refinement::Off,
            source: SourceMode::Raw,
            ..PipelineConfig::default()
        };
        let report = generate_labels(&p, &q, None, &config).unwrap();
        for (i, pi) in p.positions.iter().enumerate() {
            let nn = q
                .positions
                .iter()
                .min_by(|a, b| (*a - pi).norm().partial_cmp(&(*b - pi).norm()).unwrap())
                .unwrap();
            assert!(report.labels.valid[i]);
            assert_eq!(report.labels.labels[i], nn - pi);
        }
    }

    #[test]
    fn filter_bound_holds_before_and_after_refinement() {
        let p = textured_cloud(5, 60);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let q = PointCloud {
            positions: p
                .positions
                .iter()
                .map(|x| x + v(rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0), 0.0))
                .collect(),
            ..p.clone()
        };
        for refinement in [Refinement::Off, Refinement::UndirectedOnly, Refinement::Full] {
            let config = PipelineConfig {
                refinement,
                ..PipelineConfig::default()
            };
            let report = generate_labels(&p, &q, None, &config).unwrap();
            for (d, &ok) in report.labels.labels.iter().zip(&report.labels.valid) {
                if ok {
                    assert!(d.norm() <= 3.5 + 1e-12);
                } else {
                    assert_eq!(*d, Vec3::zeros());
                }
            }
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let p = textured_cloud(7, 50);
        let q = translated(&textured_cloud(8, 50), v(1.0, 0.5, 0.0));
        let a = generate_labels(&p, &q, None, &PipelineConfig::default()).unwrap();
        let b = generate_labels(&p, &q, None, &PipelineConfig::default()).unwrap();
        assert!(a.same_result(&b));
        let bits = |r: &LabelReport| {
            r.labels
                .labels
                .iter()
                .flat_map(|d| d.iter().map(|c| c.to_bits()).collect::<Vec<_>>())
                .collect::<Vec<_>>()
        };
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn config_errors() {
        let p = textured_cloud(9, 10);
        let prewarp_cfg = PipelineConfig {
            source: SourceMode::Prewarped,
            ..PipelineConfig::default()
        };
        assert!(generate_labels(&p, &p, None, &prewarp_cfg).is_err());
        let bad = PipelineConfig {
            assignment: Assignment::Greedy,
            matching: MatchStrategy::Soft,
            ..PipelineConfig::default()
        };
        assert!(generate_labels(&p, &p, None, &bad).is_err());
        let bare = PointCloud::new(p.positions.clone());
        assert_eq!(
            generate_labels(&bare, &bare, None, &PipelineConfig::default()).unwrap_err(),
            Error::MissingAttribute("colors")
        );
    }

    #[test]
    fn soft_matching_on_translation() {
        let p = textured_cloud(10, 40);
        let t = v(1.0, -1.0, 0.0);
        let q = translated(&p, t);
        let config = PipelineConfig {
            matching: MatchStrategy::Soft,
            refinement: Refinement::Off,
            ..PipelineConfig::default()
        };
        let report = generate_labels(&p, &q, None, &config).unwrap();
        assert!(report.labels.valid.iter().all(|&b| b));
        let mean_err: f64 = report.labels.labels.iter().map(|d| (d - t).norm()).sum::<f64>() / p.len() as f64;
        assert!(mean_err < 0.2, "{mean_err}");
    }

    #[test]
    fn training_loss_examples() {
        let labels = PseudoLabelSet::all_valid(FlowField(vec![v(1.0, 2.0, 3.0), v(0.0, 0.0, 1.0)]));
        let loss = training_loss(&labels, &labels.to_flow()).unwrap();
        assert_eq!(loss.value, 0.0);

        let one = PseudoLabelSet::all_valid(FlowField(vec![v(1.0, 0.0, 0.0)]));
        assert_eq!(training_loss(&one, &FlowField::zeros(1)).unwrap().value, 1.0);

        let two = PseudoLabelSet {
            labels: vec![v(1.0, 0.0, 0.0), v(0.0, 3.0, 0.0), v(9.0, 9.0, 9.0)],
            valid: vec![true, true, false],
        };
        let loss = training_loss(&two, &FlowField::zeros(3)).unwrap();
        assert_eq!(loss.value, 2.0);
        assert_eq!(loss.evaluated, 2);

        let none = training_loss(&PseudoLabelSet::all_invalid(2), &FlowField::zeros(2)).unwrap();
        assert!(none.is_empty() && none.value == 0.0);
        assert!(training_loss(&one, &FlowField::zeros(2)).is_err());
    }

    #[test]
    fn self_label_round_with_true_flow() {
        let p = textured_cloud(11, 50);
        let t = v(-1.5, 2.0, 0.25);
        let q = translated(&p, t);
        let truth = FlowField(vec![t; 50]);
        let (report, loss) = self_label_round(&p, &q, &truth, &PipelineConfig::default()).unwrap();
        assert_eq!(report.labels.valid_count(), 50);
        assert!(loss.value < 1e-6);

        // zero prediction reduces to raw matching
        let zero = FlowField::zeros(50);
        let (warped, loss) = self_label_round(&p, &q, &zero, &PipelineConfig::default()).unwrap();
        let raw = generate_labels(&p, &q, None, &PipelineConfig::default()).unwrap();
        assert!(warped.same_result(&raw));
        assert!(loss.value.is_finite() && loss.value >= 0.0);
    }
}
