//! Random-walk refinement of pseudo labels on the first frame.
//!
//! Labeled points form a fully-connected undirected graph used to smooth
//! their labels; unlabeled points receive labels through a directed graph
//! from the labeled set.

use faer::linalg::solvers::Solve;
use nalgebra::{DMatrix, RowVector3};

use crate::error::{Error, Result};
use crate::features::knn_in;
use crate::model::{FlowField, Vec3};

pub const DEFAULT_THETA_R: f64 = 0.75;
pub const DEFAULT_ALPHA: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WalkSteps {
    Finite(usize),
    #[default]
    Infinite,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomWalkParams {
    pub theta_r: f64,
    pub alpha: f64,
    pub steps: WalkSteps,
}

impl Default for RandomWalkParams {
    fn default() -> Self {
        RandomWalkParams {
            theta_r: DEFAULT_THETA_R,
            alpha: DEFAULT_ALPHA,
            steps: WalkSteps::Infinite,
        }
    }
}

impl RandomWalkParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta_r > 0.0 && self.theta_r.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "theta_r must be > 0, got {}",
                self.theta_r
            )));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidParameter(format!(
                "alpha must be in [0, 1], got {}",
                self.alpha
            )));
        }
        if self.steps == WalkSteps::Infinite && self.alpha >= 1.0 {
            return Err(Error::InvalidParameter(
                "alpha must be < 1 for the closed-form walk".into(),
            ));
        }
        Ok(())
    }
}

/// Row-stochastic transition matrix (square with zero diagonal for the
/// undirected graph, `n_s x n_m` for the directed one).
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix(pub DMatrix<f64>);

impl TransitionMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn nrows(&self) -> usize {
        self.0.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.0.ncols()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.0.row_iter().map(|r| r.sum()).collect()
    }
}

/// Gaussian affinity `exp(-|a_i - b_j|^2 / (2 theta^2))`.
pub fn affinity(points_a: &[Vec3], points_b: &[Vec3], theta_r: f64) -> DMatrix<f64> {
    let scale = 1.0 / (2.0 * theta_r * theta_r);
    DMatrix::from_fn(points_a.len(), points_b.len(), |i, j| {
        (-(points_a[i] - points_b[j]).norm_squared() * scale).exp()
    })
}

/// Normalizes each row of a square affinity over its off-diagonal entries
/// and zeroes the diagonal.
pub fn transition_undirected(w: &DMatrix<f64>) -> Result<TransitionMatrix> {
    if w.nrows() != w.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "undirected affinity must be square, got {}x{}",
            w.nrows(),
            w.ncols()
        )));
    }
    let n = w.nrows();
    let mut a = w.clone();
    for i in 0..n {
        a[(i, i)] = 0.0;
        let total: f64 = a.row(i).sum();
        if !(total > 0.0) {
            return Err(Error::IsolatedNode(i));
        }
        a.row_mut(i).scale_mut(1.0 / total);
    }
    Ok(TransitionMatrix(a))
}

/// Normalizes each row of an `n_s x n_m` affinity over all of its columns.
pub fn transition_directed(w: &DMatrix<f64>) -> Result<TransitionMatrix> {
    let mut a = w.clone();
    for i in 0..a.nrows() {
        let total: f64 = a.row(i).sum();
        if !(total > 0.0) {
            return Err(Error::IsolatedNode(i));
        }
        a.row_mut(i).scale_mut(1.0 / total);
    }
    Ok(TransitionMatrix(a))
}

/// Row-normalized Gaussian weights with each row's exponent shifted by its
/// smallest squared distance. Equal to normalizing [`affinity`] directly,
/// but a far-away point never underflows to an all-zero row.
fn shifted_transition(rows: &[Vec3], cols: &[Vec3], theta_r: f64, skip_diagonal: bool) -> Result<TransitionMatrix> {
    let scale = 1.0 / (2.0 * theta_r * theta_r);
    let mut a = DMatrix::zeros(rows.len(), cols.len());
    let mut sq = vec![0.0; cols.len()];
    for (i, p) in rows.iter().enumerate() {
        let mut min = f64::INFINITY;
        for (j, q) in cols.iter().enumerate() {
            sq[j] = (p - q).norm_squared();
            if !(skip_diagonal && i == j) {
                min = min.min(sq[j]);
            }
        }
        if !min.is_finite() {
            return Err(Error::IsolatedNode(i));
        }
        let mut total = 0.0;
        for j in 0..cols.len() {
            if skip_diagonal && i == j {
                continue;
            }
            let w = (-(sq[j] - min) * scale).exp();
            a[(i, j)] = w;
            total += w;
        }
        a.row_mut(i).scale_mut(1.0 / total);
    }
    Ok(TransitionMatrix(a))
}

/// Undirected transition matrix over the labeled points.
pub fn undirected_transition_from_points(points: &[Vec3], theta_r: f64) -> Result<TransitionMatrix> {
    if points.len() < 2 {
        return Err(Error::IsolatedNode(0));
    }
    shifted_transition(points, points, theta_r, true)
}

/// Directed transition matrix from labeled points to unlabeled points.
pub fn directed_transition_from_points(unlabeled: &[Vec3], labeled: &[Vec3], theta_r: f64) -> Result<TransitionMatrix> {
    if labeled.is_empty() && !unlabeled.is_empty() {
        return Err(Error::IsolatedNode(0));
    }
    shifted_transition(unlabeled, labeled, theta_r, false)
}

pub(crate) fn flow_to_matrix(flow: &FlowField) -> DMatrix<f64> {
    DMatrix::from_fn(flow.len(), 3, |i, k| flow.0[i][k])
}

pub(crate) fn matrix_to_flow(m: &DMatrix<f64>) -> FlowField {
    FlowField(m.row_iter().map(|r| Vec3::new(r[0], r[1], r[2])).collect())
}

fn check_square_walk(a1: &TransitionMatrix, d0: &FlowField) -> Result<()> {
    if a1.nrows() != a1.ncols() || a1.nrows() != d0.len() {
        return Err(Error::DimensionMismatch(format!(
            "transition is {}x{} but there are {} labels",
            a1.nrows(),
            a1.ncols(),
            d0.len()
        )));
    }
    Ok(())
}

/// `t` steps of `D <- alpha A D + (1 - alpha) D0` starting from `D0`.
pub fn refine_iterative(a1: &TransitionMatrix, d0: &FlowField, alpha: f64, steps: usize) -> Result<FlowField> {
    check_square_walk(a1, d0)?;
    let anchor = flow_to_matrix(d0) * (1.0 - alpha);
    let mut current = flow_to_matrix(d0);
    let mut next = current.clone();
    for _ in 0..steps {
        next.gemm(alpha, a1.matrix(), &current, 0.0);
        next += &anchor;
        // once an iterate repeats bitwise every later one does too
        if next == current {
            break;
        }
        std::mem::swap(&mut current, &mut next);
    }
    Ok(matrix_to_flow(&current))
}

/// Infinite-step limit `(1 - alpha)(I - alpha A)^-1 D0`, via a dense LU
/// solve with partial pivoting.
pub fn refine_closed_form(a1: &TransitionMatrix, d0: &FlowField, alpha: f64) -> Result<FlowField> {
    check_square_walk(a1, d0)?;
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::InvalidParameter(format!(
            "closed-form walk needs 0 <= alpha < 1, got {alpha}"
        )));
    }
    let n = a1.nrows();
    let a = a1.matrix();
    let system = faer::Mat::<f64>::from_fn(n, n, |i, j| {
        let off = -alpha * a[(i, j)];
        if i == j {
            1.0 + off
        } else {
            off
        }
    });
    let rhs = faer::Mat::<f64>::from_fn(n, 3, |i, k| (1.0 - alpha) * d0.0[i][k]);
    let solution = system.partial_piv_lu().solve(&rhs);
    let flow = FlowField(
        (0..n)
            .map(|i| Vec3::new(solution[(i, 0)], solution[(i, 1)], solution[(i, 2)]))
            .collect(),
    );
    if !flow.is_finite() {
        return Err(Error::Singular);
    }
    Ok(flow)
}

/// Runs the walk in the mode selected by `params`.
pub fn refine(a1: &TransitionMatrix, d0: &FlowField, params: &RandomWalkParams) -> Result<FlowField> {
    match params.steps {
        WalkSteps::Finite(t) => refine_iterative(a1, d0, params.alpha, t),
        WalkSteps::Infinite => refine_closed_form(a1, d0, params.alpha),
    }
}

/// Labels for unlabeled points: `A2 * refined`.
pub fn propagate_directed(a2: &TransitionMatrix, refined: &FlowField) -> Result<FlowField> {
    if a2.ncols() != refined.len() {
        return Err(Error::DimensionMismatch(format!(
            "directed transition has {} columns but there are {} refined labels",
            a2.ncols(),
            refined.len()
        )));
    }
    if a2.nrows() == 0 {
        return Ok(FlowField::default());
    }
    Ok(matrix_to_flow(&(a2.matrix() * flow_to_matrix(refined))))
}

/// Replaces each label by the plain mean over its `k` nearest points
/// (itself included).
pub fn naive_smooth(points: &[Vec3], labels: &FlowField, k: usize) -> Result<FlowField> {
    if labels.len() != points.len() {
        return Err(Error::LengthMismatch {
            expected: points.len(),
            actual: labels.len(),
        });
    }
    if k == 0 || k > points.len() {
        return Err(Error::NotEnoughPoints { size: points.len(), k });
    }
    points
        .iter()
        .map(|p| {
            let nbrs = knn_in(points, p, k)?;
            let sum: RowVector3<f64> = nbrs.iter().map(|&j| labels.0[j].transpose()).sum();
            Ok((sum / k as f64).transpose())
        })
        .collect::<Result<Vec<_>>>()
        .map(FlowField)
}
