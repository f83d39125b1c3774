//! Entropic optimal transport between two point sets and the correspondence
//! and label extraction built on top of the plan.
//!
//! The solver runs the classic alternating scaling
//!
//! ```text
//! K = exp(-C / eps)
//! b <- mu_col / (K^T a)
//! a <- mu_row / (K b)
//! T = diag(a) K diag(b)
//! ```
//!
//! For small `eps` (or whenever `exp(-C/eps)` would underflow) the same
//! updates are carried out on log-scalings with log-sum-exp reductions.
//!
//! Alternating scaling converges linearly with a rate that degrades badly
//! when the plan splits into nearly disconnected blocks (common for small
//! `eps`). An optional damped Newton polish on the column potentials, with
//! the row potentials eliminated in closed form, finishes such instances in
//! a few dozen steps.

use nalgebra::{DMatrix, DVector};

use crate::cost::CostMatrix;
use crate::error::{Error, Result};
use crate::model::{PointCloud, PseudoLabelSet, Vec3};

pub const DEFAULT_EPSILON: f64 = 0.03;
pub const DEFAULT_MAX_ITERATIONS: usize = 100;
pub const DEFAULT_MARGINAL_TOLERANCE: f64 = 1e-9;
pub const DEFAULT_MAX_DISPLACEMENT: f64 = 3.5;

/// Below this epsilon the solver always works in the log domain.
pub const LOG_DOMAIN_EPSILON: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Domain {
    /// Log domain when `eps < 0.01` or the kernel underflows, plain otherwise.
    #[default]
    Auto,
    Standard,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornParams {
    pub epsilon: f64,
    pub max_iterations: usize,
    pub marginal_tolerance: f64,
    pub domain: Domain,
    /// Newton polish steps run after the scaling loop if it has not reached
    /// `marginal_tolerance`; 0 disables the polish.
    pub newton_steps: usize,
}

impl Default for SinkhornParams {
    fn default() -> Self {
        SinkhornParams {
            epsilon: DEFAULT_EPSILON,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            marginal_tolerance: DEFAULT_MARGINAL_TOLERANCE,
            domain: Domain::Auto,
            newton_steps: 0,
        }
    }
}

impl SinkhornParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "epsilon must be > 0, got {}",
                self.epsilon
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidParameter("max_iterations must be >= 1".into()));
        }
        if !(self.marginal_tolerance >= 0.0) {
            return Err(Error::InvalidParameter("marginal_tolerance must be >= 0".into()));
        }
        Ok(())
    }
}

/// Converged (or iteration-capped) entropic transport plan.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub plan: DMatrix<f64>,
    /// Row scaling in log form, `a = exp(log_a)`.
    pub log_a: DVector<f64>,
    /// Column scaling in log form, `b = exp(log_b)`.
    pub log_b: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Max-norm column-marginal residual at exit.
    pub column_residual: f64,
    pub log_domain: bool,
    /// Newton polish steps taken (0 when the polish was not needed or off).
    pub newton_steps: usize,
}

impl TransportPlan {
    pub fn nrows(&self) -> usize {
        self.plan.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.plan.ncols()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.plan.row_iter().map(|r| r.sum()).collect()
    }

    pub fn column_sums(&self) -> Vec<f64> {
        self.plan.column_iter().map(|c| c.sum()).collect()
    }

    /// Total transport cost `sum_ij C_ij T_ij`.
    pub fn total_cost(&self, cost: &CostMatrix) -> f64 {
        self.plan.component_mul(cost.matrix()).sum()
    }
}

/// Per-source-point target index with a validity flag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorrespondenceSet {
    pub target_index: Vec<usize>,
    pub is_valid: Vec<bool>,
}

impl CorrespondenceSet {
    pub fn new(target_index: Vec<usize>) -> Self {
        let n = target_index.len();
        CorrespondenceSet {
            target_index,
            is_valid: vec![true; n],
        }
    }

    pub fn len(&self) -> usize {
        self.target_index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target_index.is_empty()
    }

    pub fn is_permutation(&self, n_targets: usize) -> bool {
        if self.len() != n_targets {
            return false;
        }
        let mut seen = vec![false; n_targets];
        for &j in &self.target_index {
            if j >= n_targets || seen[j] {
                return false;
            }
            seen[j] = true;
        }
        true
    }

    /// Sum of the selected cost entries.
    pub fn total_cost(&self, cost: &CostMatrix) -> f64 {
        self.target_index.iter().enumerate().map(|(i, &j)| cost.get(i, j)).sum()
    }
}

pub fn uniform(n: usize) -> DVector<f64> {
    DVector::from_element(n, 1.0 / n as f64)
}

fn check_distribution(mu: &DVector<f64>, n: usize, name: &str) -> Result<()> {
    if mu.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{name} has length {} but the cost matrix needs {n}",
            mu.len()
        )));
    }
    if !mu.iter().all(|&m| m > 0.0 && m.is_finite()) {
        return Err(Error::InvalidParameter(format!("{name} must be strictly positive")));
    }
    if (mu.sum() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParameter(format!(
            "{name} must sum to 1, sums to {}",
            mu.sum()
        )));
    }
    Ok(())
}

/// Solves entropy-regularized OT between `mu_row` and `mu_col`.
pub fn sinkhorn(
    cost: &CostMatrix,
    params: &SinkhornParams,
    mu_row: &DVector<f64>,
    mu_col: &DVector<f64>,
) -> Result<TransportPlan> {
    params.validate()?;
    let (n, m) = (cost.nrows(), cost.ncols());
    if n == 0 || m == 0 {
        return Err(Error::DimensionMismatch("empty cost matrix".into()));
    }
    check_distribution(mu_row, n, "row marginal")?;
    check_distribution(mu_col, m, "column marginal")?;
    if !cost.matrix().iter().all(|c| c.is_finite()) {
        return Err(Error::InvalidParameter("cost entries must be finite".into()));
    }

    let use_log = match params.domain {
        Domain::Log => true,
        Domain::Standard => false,
        Domain::Auto => {
            params.epsilon < LOG_DOMAIN_EPSILON || {
                let worst = cost.matrix().max();
                (-worst / params.epsilon).exp() < f64::MIN_POSITIVE
            }
        }
    };
    let plan = if use_log {
        sinkhorn_log(cost, params, mu_row, mu_col)?
    } else {
        sinkhorn_standard(cost, params, mu_row, mu_col)?
    };
    if plan.converged || params.newton_steps == 0 {
        return Ok(plan);
    }
    Ok(newton_polish(cost, params, mu_row, mu_col, plan))
}

/// [`sinkhorn`] with uniform marginals `1/n_rows` and `1/n_cols`.
pub fn sinkhorn_uniform(cost: &CostMatrix, params: &SinkhornParams) -> Result<TransportPlan> {
    sinkhorn(cost, params, &uniform(cost.nrows()), &uniform(cost.ncols()))
}

fn sinkhorn_standard(
    cost: &CostMatrix,
    params: &SinkhornParams,
    mu_row: &DVector<f64>,
    mu_col: &DVector<f64>,
) -> Result<TransportPlan> {
    let eps = params.epsilon;
    let kernel = cost.matrix().map(|c| (-c / eps).exp());
    for (j, col) in kernel.column_iter().enumerate() {
        if col.iter().all(|&k| k == 0.0) {
            return Err(Error::KernelUnderflow {
                axis: "column",
                index: j,
                epsilon: eps,
            });
        }
    }
    for (i, row) in kernel.row_iter().enumerate() {
        if row.iter().all(|&k| k == 0.0) {
            return Err(Error::KernelUnderflow {
                axis: "row",
                index: i,
                epsilon: eps,
            });
        }
    }

    let mut a = mu_row.clone();
    let mut b = DVector::from_element(kernel.ncols(), 1.0);
    let mut iterations = 0;
    let mut converged = false;
    let mut column_residual = f64::INFINITY;

    while iterations < params.max_iterations {
        let kta = kernel.tr_mul(&a);
        if iterations > 0 {
            column_residual = column_residual_of(&kta, &b, mu_col);
            if column_residual < params.marginal_tolerance {
                converged = true;
                break;
            }
        }
        for (j, (bj, (&kj, &mu))) in b.iter_mut().zip(kta.iter().zip(mu_col.iter())).enumerate() {
            if kj == 0.0 {
                return Err(Error::KernelUnderflow {
                    axis: "column",
                    index: j,
                    epsilon: eps,
                });
            }
            *bj = mu / kj;
        }
        let kb = &kernel * &b;
        for (i, (ai, (&ki, &mu))) in a.iter_mut().zip(kb.iter().zip(mu_row.iter())).enumerate() {
            if ki == 0.0 {
                return Err(Error::KernelUnderflow {
                    axis: "row",
                    index: i,
                    epsilon: eps,
                });
            }
            *ai = mu / ki;
        }
        iterations += 1;
        if !a.iter().chain(b.iter()).all(|v| v.is_finite()) {
            return Err(Error::NonFiniteScaling {
                iteration: iterations,
                epsilon: eps,
            });
        }
    }
    if !converged {
        column_residual = column_residual_of(&kernel.tr_mul(&a), &b, mu_col);
        converged = column_residual < params.marginal_tolerance;
    }

    let mut plan = kernel;
    for (j, mut col) in plan.column_iter_mut().enumerate() {
        let bj = b[j];
        for (t, &ai) in col.iter_mut().zip(a.iter()) {
            *t *= ai * bj;
        }
    }
    Ok(TransportPlan {
        plan,
        log_a: a.map(f64::ln),
        log_b: b.map(f64::ln),
        iterations,
        converged,
        column_residual,
        log_domain: false,
        newton_steps: 0,
    })
}

fn column_residual_of(kta: &DVector<f64>, b: &DVector<f64>, mu_col: &DVector<f64>) -> f64 {
    kta.iter()
        .zip(b.iter())
        .zip(mu_col.iter())
        .map(|((k, b), mu)| (k * b - mu).abs())
        .fold(0.0, f64::max)
}

fn log_sum_exp<I: Iterator<Item = f64> + Clone>(values: I) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn sinkhorn_log(
    cost: &CostMatrix,
    params: &SinkhornParams,
    mu_row: &DVector<f64>,
    mu_col: &DVector<f64>,
) -> Result<TransportPlan> {
    let eps = params.epsilon;
    let (n, m) = (cost.nrows(), cost.ncols());
    // column-major storage: columns of log_k are contiguous, so keep the
    // transpose around for the row reductions
    let log_k = cost.matrix().map(|c| -c / eps);
    let log_k_t = log_k.transpose();
    let log_mu_row = mu_row.map(f64::ln);
    let log_mu_col = mu_col.map(f64::ln);

    let mut log_a = log_mu_row.clone();
    let mut log_b = DVector::zeros(m);
    let mut iterations = 0;
    let mut converged = false;
    let mut column_residual = f64::INFINITY;

    let col_lse = |log_a: &DVector<f64>, out: &mut DVector<f64>| {
        for j in 0..m {
            let col = log_k.column(j);
            out[j] = log_sum_exp(col.iter().zip(log_a.iter()).map(|(k, a)| k + a));
        }
    };
    let mut lse_col = DVector::zeros(m);
    let mut lse_row = DVector::zeros(n);

    while iterations < params.max_iterations {
        col_lse(&log_a, &mut lse_col);
        if iterations > 0 {
            column_residual = log_column_residual(&lse_col, &log_b, mu_col);
            if column_residual < params.marginal_tolerance {
                converged = true;
                break;
            }
        }
        for j in 0..m {
            log_b[j] = log_mu_col[j] - lse_col[j];
        }
        for i in 0..n {
            let row = log_k_t.column(i);
            lse_row[i] = log_sum_exp(row.iter().zip(log_b.iter()).map(|(k, b)| k + b));
            log_a[i] = log_mu_row[i] - lse_row[i];
        }
        iterations += 1;
        if !log_a.iter().chain(log_b.iter()).all(|v| v.is_finite()) {
            return Err(Error::NonFiniteScaling {
                iteration: iterations,
                epsilon: eps,
            });
        }
    }
    if !converged {
        col_lse(&log_a, &mut lse_col);
        column_residual = log_column_residual(&lse_col, &log_b, mu_col);
        converged = column_residual < params.marginal_tolerance;
    }

    let plan = DMatrix::from_fn(n, m, |i, j| (log_a[i] + log_k[(i, j)] + log_b[j]).exp());
    Ok(TransportPlan {
        plan,
        log_a,
        log_b,
        iterations,
        converged,
        column_residual,
        log_domain: true,
        newton_steps: 0,
    })
}

fn log_column_residual(lse_col: &DVector<f64>, log_b: &DVector<f64>, mu_col: &DVector<f64>) -> f64 {
    lse_col
        .iter()
        .zip(log_b.iter())
        .zip(mu_col.iter())
        .map(|((l, b), mu)| ((l + b).exp() - mu).abs())
        .fold(0.0, f64::max)
}

/// Row potentials, plan and semi-dual objective for fixed column log-scalings
/// `log_b`, with every row marginal met exactly.
struct SemiDual {
    log_a: DVector<f64>,
    plan: DMatrix<f64>,
    objective: f64,
}

fn semi_dual(
    log_k: &DMatrix<f64>,
    log_mu_row: &DVector<f64>,
    mu_row: &DVector<f64>,
    mu_col: &DVector<f64>,
    log_b: &DVector<f64>,
) -> SemiDual {
    let (n, m) = log_k.shape();
    let log_a = DVector::from_fn(n, |i, _| {
        log_mu_row[i] - log_sum_exp((0..m).map(|j| log_k[(i, j)] + log_b[j]))
    });
    let plan = DMatrix::from_fn(n, m, |i, j| (log_a[i] + log_k[(i, j)] + log_b[j]).exp());
    let objective = mu_row.dot(&log_a) + mu_col.dot(log_b);
    SemiDual { log_a, plan, objective }
}

fn max_residual(plan: &DMatrix<f64>, mu_col: &DVector<f64>) -> f64 {
    plan.column_iter()
        .zip(mu_col.iter())
        .map(|(c, mu)| (c.sum() - mu).abs())
        .fold(0.0, f64::max)
}

/// Damped Newton ascent on the concave semi-dual in the column
/// log-scalings, starting from the scaling loop's `log_b`. The damping is
/// proportional to the current residual, so steps stay bounded along the
/// nearly flat directions of weakly coupled blocks and the iteration turns
/// quadratic near the optimum.
fn newton_polish(
    cost: &CostMatrix,
    params: &SinkhornParams,
    mu_row: &DVector<f64>,
    mu_col: &DVector<f64>,
    start: TransportPlan,
) -> TransportPlan {
    const DAMPING: f64 = 10.0;
    let eps = params.epsilon;
    let m = cost.ncols();
    let log_k = cost.matrix().map(|c| -c / eps);
    let log_mu_row = mu_row.map(f64::ln);
    let inv_mu_row = mu_row.map(|v| 1.0 / v);

    let mut log_b = start.log_b.clone();
    let mut state = semi_dual(&log_k, &log_mu_row, mu_row, mu_col, &log_b);
    let mut residual = max_residual(&state.plan, mu_col);
    let mut steps = 0;
    while steps < params.newton_steps && residual >= params.marginal_tolerance {
        let col_sums = DVector::from_iterator(m, state.plan.column_iter().map(|c| c.sum()));
        let gradient = mu_col - &col_sums;
        // negated Hessian: diag(c) - T^T diag(1/mu_row) T, positive
        // semidefinite with the constant vector in its null space; the rank
        // one term pins that direction (the gradient is orthogonal to it)
        let scaled = DMatrix::from_fn(state.plan.nrows(), m, |i, j| state.plan[(i, j)] * inv_mu_row[i]);
        let mut hessian = -(state.plan.tr_mul(&scaled));
        let damping = eps * DAMPING * residual;
        for j in 0..m {
            hessian[(j, j)] += col_sums[j] + damping;
        }
        hessian.add_scalar_mut(eps / m as f64);
        let direction = match hessian.clone().cholesky() {
            Some(chol) => chol.solve(&gradient),
            None => match hessian.lu().solve(&gradient) {
                Some(d) => d,
                None => break,
            },
        };
        if !direction.iter().all(|d| d.is_finite()) {
            break;
        }

        // backtrack until the objective does not drop (up to rounding)
        let slack = 1e-14 * state.objective.abs().max(1.0);
        let mut step = 1.0;
        let mut accepted = None;
        while step > 1e-10 {
            let trial_b = &log_b + &direction * step;
            let trial = semi_dual(&log_k, &log_mu_row, mu_row, mu_col, &trial_b);
            let trial_residual = max_residual(&trial.plan, mu_col);
            if trial.objective.is_finite() && trial.objective >= state.objective - slack {
                accepted = Some((trial_b, trial, trial_residual));
                break;
            }
            step *= 0.5;
        }
        let Some((next_b, next, next_residual)) = accepted else {
            break;
        };
        log_b = next_b;
        state = next;
        residual = next_residual;
        steps += 1;
    }

    if residual >= start.column_residual {
        return start;
    }
    TransportPlan {
        plan: state.plan,
        log_a: state.log_a,
        log_b,
        iterations: start.iterations,
        converged: residual < params.marginal_tolerance,
        column_residual: residual,
        log_domain: start.log_domain,
        newton_steps: steps,
    }
}

fn argmax_first<'a>(values: impl Iterator<Item = &'a f64>) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (j, &v) in values.enumerate() {
        if v > best_val {
            best = j;
            best_val = v;
        }
    }
    best
}

/// Row-wise argmax of the plan; ties go to the lowest column.
pub fn harden(plan: &TransportPlan) -> CorrespondenceSet {
    CorrespondenceSet::new(plan.plan.row_iter().map(|r| argmax_first(r.iter())).collect())
}

/// Plan-weighted barycenter of the target points for every row.
pub fn soft_match(plan: &TransportPlan, target: &PointCloud) -> Result<Vec<Vec3>> {
    if plan.ncols() != target.len() {
        return Err(Error::DimensionMismatch(format!(
            "plan has {} columns but target has {} points",
            plan.ncols(),
            target.len()
        )));
    }
    plan.plan
        .row_iter()
        .enumerate()
        .map(|(i, row)| {
            let total: f64 = row.sum();
            if !(total > 0.0) {
                return Err(Error::ZeroRowSum(i));
            }
            Ok(row.iter().zip(&target.positions).map(|(w, q)| q * (w / total)).sum())
        })
        .collect()
}

/// Row-wise argmin of the cost without any marginal constraint; ties go to
/// the lowest column.
pub fn greedy_search(cost: &CostMatrix) -> CorrespondenceSet {
    CorrespondenceSet::new(
        cost.matrix()
            .row_iter()
            .map(|r| {
                let mut best = 0;
                let mut best_val = f64::INFINITY;
                for (j, &v) in r.iter().enumerate() {
                    if v < best_val {
                        best = j;
                        best_val = v;
                    }
                }
                best
            })
            .collect(),
    )
}

/// Labels `matched[i] - source[i]`, marked invalid beyond `max_displacement`.
/// Invalid entries hold the zero vector.
pub fn labels_from_matches(
    source: &PointCloud,
    matched: &[Vec3],
    usable: &[bool],
    max_displacement: f64,
) -> Result<PseudoLabelSet> {
    if matched.len() != source.len() || usable.len() != source.len() {
        return Err(Error::LengthMismatch {
            expected: source.len(),
            actual: matched.len(),
        });
    }
    let mut out = PseudoLabelSet::all_invalid(source.len());
    for (i, (q, p)) in matched.iter().zip(&source.positions).enumerate() {
        let d = q - p;
        if usable[i] && d.iter().all(|c| c.is_finite()) && d.norm() <= max_displacement {
            out.labels[i] = d;
            out.valid[i] = true;
        }
    }
    Ok(out)
}

/// Pseudo labels from hard correspondences, measured against the un-warped
/// source cloud.
pub fn extract_labels(
    source: &PointCloud,
    target: &PointCloud,
    corr: &CorrespondenceSet,
    max_displacement: f64,
) -> Result<PseudoLabelSet> {
    if corr.len() != source.len() {
        return Err(Error::LengthMismatch {
            expected: source.len(),
            actual: corr.len(),
        });
    }
    let matched = corr
        .target_index
        .iter()
        .map(|&j| {
            target.positions.get(j).copied().ok_or(Error::IndexOutOfRange {
                index: j,
                size: target.len(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    labels_from_matches(source, &matched, &corr.is_valid, max_displacement)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(x: f64, y: f64, z: f64) -> Vec3 {
        Vec3::new(x, y, z)
    }

    fn random_cost(rng: &mut ChaCha8Rng, n: usize, m: usize) -> CostMatrix {
        CostMatrix(DMatrix::from_fn(n, m, |_, _| rng.random_range(0.0..3.0)))
    }

    #[test]
    fn one_by_one_plan() {
        let plan = sinkhorn_uniform(&CostMatrix::from_rows(&[&[0.7]]), &SinkhornParams::default()).unwrap();
        assert!((plan.plan[(0, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn constant_cost_gives_uniform_plan() {
        let cost = CostMatrix(DMatrix::from_element(4, 4, 1.3));
        let plan = sinkhorn_uniform(&cost, &SinkhornParams::default()).unwrap();
        for t in plan.plan.iter() {
            assert!((t - 1.0 / 16.0).abs() < 1e-15);
        }
        assert!(plan.converged);
    }

    #[test]
    fn two_by_two_converges_to_lp_solution() {
        let cost = CostMatrix::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let params = SinkhornParams {
            epsilon: 0.01,
            ..SinkhornParams::default()
        };
        let plan = sinkhorn_uniform(&cost, &params).unwrap();
        let expect = [[0.5, 0.0], [0.0, 0.5]];
        for (i, row) in expect.iter().enumerate() {
            for (j, &e) in row.iter().enumerate() {
                assert!((plan.plan[(i, j)] - e).abs() < 1e-6);
            }
        }
        // exact LP value is 0
        assert!(plan.total_cost(&cost) < 1e-6);
    }

    #[test]
    fn rectangular_marginals_are_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cost = random_cost(&mut rng, 7, 12);
        let params = SinkhornParams {
            max_iterations: 10_000,
            ..SinkhornParams::default()
        };
        let plan = sinkhorn_uniform(&cost, &params).unwrap();
        assert!(plan.converged);
        for r in plan.row_sums() {
            assert!((r - 1.0 / 7.0).abs() < 1e-12);
        }
        for c in plan.column_sums() {
            assert!((c - 1.0 / 12.0).abs() < 1e-9);
        }
    }

    #[test]
    fn log_domain_agrees_with_standard_domain() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let n = rng.random_range(2..10);
            let m = rng.random_range(2..10);
            let cost = random_cost(&mut rng, n, m);
            let base = SinkhornParams {
                epsilon: 0.05,
                max_iterations: 300,
                marginal_tolerance: 0.0,
                ..SinkhornParams::default()
            };
            let std = sinkhorn_uniform(
                &cost,
                &SinkhornParams {
                    domain: Domain::Standard,
                    ..base
                },
            )
            .unwrap();
            let log = sinkhorn_uniform(
                &cost,
                &SinkhornParams {
                    domain: Domain::Log,
                    ..base
                },
            )
            .unwrap();
            assert!(!std.log_domain && log.log_domain);
            let diff = (&std.plan - &log.plan).amax();
            assert!(diff < 1e-10, "max plan difference {diff}");
        }
    }

    #[test]
    fn auto_switches_to_log_domain_for_small_epsilon() {
        let cost = CostMatrix::from_rows(&[&[0.0, 3.0], &[3.0, 0.0]]);
        let params = SinkhornParams {
            epsilon: 0.001,
            ..SinkhornParams::default()
        };
        let plan = sinkhorn_uniform(&cost, &params).unwrap();
        assert!(plan.log_domain);
        assert!(plan.plan.iter().all(|t| t.is_finite()));
        // a forced plain solve underflows the whole kernel off the diagonal;
        // with a cost shift it underflows entirely and must error
        let shifted = CostMatrix(cost.0.map(|c| c + 1.0));
        let err = sinkhorn_uniform(
            &shifted,
            &SinkhornParams {
                domain: Domain::Standard,
                ..params
            },
        )
        .unwrap_err();
        assert!(matches!(err, Error::KernelUnderflow { .. }));
        assert!(err.to_string().contains("epsilon"));
    }

    #[test]
    fn rejects_bad_inputs() {
        let cost = CostMatrix::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let bad_eps = SinkhornParams {
            epsilon: 0.0,
            ..SinkhornParams::default()
        };
        assert!(sinkhorn_uniform(&cost, &bad_eps).is_err());
        let skewed = DVector::from_vec(vec![0.7, 0.7]);
        assert!(sinkhorn(&cost, &SinkhornParams::default(), &skewed, &uniform(2)).is_err());
        let nan = CostMatrix::from_rows(&[&[f64::NAN]]);
        assert!(sinkhorn_uniform(&nan, &SinkhornParams::default()).is_err());
    }

    #[test]
    fn converged_plan_is_positive_with_small_column_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let n = rng.random_range(2..9);
            let cost = random_cost(&mut rng, n, n);
            let params = SinkhornParams {
                epsilon: 0.1,
                max_iterations: 1000,
                newton_steps: 50,
                ..SinkhornParams::default()
            };
            let plan = sinkhorn_uniform(&cost, &params).unwrap();
            assert!(plan.converged);
            assert!(plan.column_residual < 1e-9);
            assert!(plan.plan.iter().all(|&t| t > 0.0));
            let cols = plan.column_sums();
            assert!(cols.iter().all(|c| (c - 1.0 / n as f64).abs() < 1e-9));
        }
    }

    #[test]
    fn newton_polish_finishes_slow_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut polished = 0;
        for _ in 0..200 {
            let n = rng.random_range(2..9);
            let m = rng.random_range(2..9);
            let cost = random_cost(&mut rng, n, m);
            let plain = SinkhornParams {
                epsilon: 0.005,
                ..SinkhornParams::default()
            };
            let with_polish = SinkhornParams {
                newton_steps: 60,
                ..plain
            };
            let base = sinkhorn_uniform(&cost, &plain).unwrap();
            let plan = sinkhorn_uniform(&cost, &with_polish).unwrap();
            assert!(plan.converged, "residual {}", plan.column_residual);
            let cols = plan.column_sums();
            assert!(cols.iter().all(|c| (c - 1.0 / m as f64).abs() < 1e-9));
            assert!(plan.row_sums().iter().all(|r| (r - 1.0 / n as f64).abs() < 1e-12));
            if base.converged {
                assert_eq!(plan, base);
            } else {
                polished += 1;
                assert!(plan.newton_steps > 0);
            }
        }
        assert!(polished > 0);
    }

    #[test]
    fn polish_matches_long_scaling_run() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..10 {
            let cost = random_cost(&mut rng, 5, 5);
            let long = SinkhornParams {
                epsilon: 0.2,
                max_iterations: 100_000,
                marginal_tolerance: 1e-14,
                ..SinkhornParams::default()
            };
            let short = SinkhornParams {
                max_iterations: 3,
                newton_steps: 50,
                ..long
            };
            let a = sinkhorn_uniform(&cost, &long).unwrap();
            let b = sinkhorn_uniform(&cost, &short).unwrap();
            assert!(b.converged);
            assert!((&a.plan - &b.plan).amax() < 1e-12);
        }
    }

    #[test]
    fn total_cost_does_not_increase_as_epsilon_shrinks() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..10 {
            let cost = random_cost(&mut rng, 6, 6);
            let mut last = f64::INFINITY;
            for eps in [1.0, 0.5, 0.25, 0.1, 0.05, 0.02] {
                let params = SinkhornParams {
                    epsilon: eps,
                    max_iterations: 200_000,
                    marginal_tolerance: 1e-13,
                    ..SinkhornParams::default()
                };
                let total = sinkhorn_uniform(&cost, &params).unwrap().total_cost(&cost);
                assert!(total <= last + 1e-8, "eps {eps}: {total} > {last}");
                last = total;
            }
        }
    }

    #[test]
    fn harden_examples() {
        let mk = |m: DMatrix<f64>| TransportPlan {
            log_a: DVector::zeros(m.nrows()),
            log_b: DVector::zeros(m.ncols()),
            plan: m,
            iterations: 0,
            converged: true,
            column_residual: 0.0,
            log_domain: false,
            newton_steps: 0,
        };
        let p = mk(DMatrix::from_row_slice(2, 2, &[0.4, 0.1, 0.1, 0.4]));
        assert_eq!(harden(&p).target_index, vec![0, 1]);
        let p = mk(DMatrix::from_row_slice(1, 3, &[0.2, 0.2, 0.2]));
        assert_eq!(harden(&p).target_index, vec![0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = DMatrix::from_fn(5, 7, |_, _| rng.random::<f64>());
        let base = harden(&mk(m.clone())).target_index;
        let mut scaled = m;
        for (i, mut row) in scaled.row_iter_mut().enumerate() {
            row *= 0.1 + i as f64 * 3.7;
        }
        assert_eq!(harden(&mk(scaled)).target_index, base);
    }

    #[test]
    fn soft_match_examples() {
        let target = PointCloud::new(vec![v(0.0, 0.0, 0.0), v(4.0, 0.0, 0.0)]);
        let mk = |row: [f64; 2]| TransportPlan {
            plan: DMatrix::from_row_slice(1, 2, &row),
            log_a: DVector::zeros(1),
            log_b: DVector::zeros(2),
            iterations: 0,
            converged: true,
            column_residual: 0.0,
            log_domain: false,
            newton_steps: 0,
        };
        assert_eq!(soft_match(&mk([0.0, 0.3]), &target).unwrap(), vec![v(4.0, 0.0, 0.0)]);
        assert_eq!(soft_match(&mk([0.2, 0.2]), &target).unwrap(), vec![v(2.0, 0.0, 0.0)]);
        assert_eq!(soft_match(&mk([0.75, 0.25]), &target).unwrap(), vec![v(1.0, 0.0, 0.0)]);
        assert_eq!(soft_match(&mk([0.0, 0.0]), &target), Err(Error::ZeroRowSum(0)));
        let small = PointCloud::new(vec![v(0.0, 0.0, 0.0)]);
        assert!(soft_match(&mk([0.5, 0.5]), &small).is_err());
    }

    #[test]
    fn extract_label_examples() {
        let p = PointCloud::new(vec![v(0.0, 0.0, 0.0)]);
        let q = PointCloud::new(vec![v(1.0, 0.0, 0.0)]);
        let l = extract_labels(&p, &q, &CorrespondenceSet::new(vec![0]), 3.5).unwrap();
        assert_eq!(l.labels, vec![v(1.0, 0.0, 0.0)]);
        assert_eq!(l.valid, vec![true]);

        let far = PointCloud::new(vec![v(0.0, 4.0, 0.0)]);
        let l = extract_labels(&p, &far, &CorrespondenceSet::new(vec![0]), 3.5).unwrap();
        assert_eq!(l.valid, vec![false]);
        assert_eq!(l.labels, vec![Vec3::zeros()]);

        let pts = PointCloud::new(vec![v(0.0, 1.0, 2.0), v(3.0, -1.0, 0.5), v(7.0, 7.0, 7.0)]);
        let l = extract_labels(&pts, &pts, &CorrespondenceSet::new(vec![0, 1, 2]), 3.5).unwrap();
        assert!(l.valid.iter().all(|&b| b));
        assert!(l.labels.iter().all(|d| *d == Vec3::zeros()));

        assert_eq!(
            extract_labels(&p, &q, &CorrespondenceSet::new(vec![3]), 3.5),
            Err(Error::IndexOutOfRange { index: 3, size: 1 })
        );
    }

    #[test]
    fn greedy_examples() {
        let c = CostMatrix::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]);
        assert_eq!(greedy_search(&c).target_index, vec![0, 1]);
        let c = CostMatrix::from_rows(&[&[0.0, 1.0], &[0.0, 1.0]]);
        assert_eq!(greedy_search(&c).target_index, vec![0, 0]);
        let c = CostMatrix::from_rows(&[&[0.5, 0.5, 0.5]]);
        assert_eq!(greedy_search(&c).target_index, vec![0]);
    }

    #[test]
    fn coordinate_greedy_is_nearest_neighbor() {
        use crate::cost::{build_cost_matrix, CostParams, Measures};
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..30 {
            let mut cloud = |n: usize| {
                PointCloud::new(
                    (0..n)
                        .map(|_| v(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random()))
                        .collect(),
                )
            };
            let a = cloud(15);
            let b = cloud(20);
            let params = CostParams {
                measures: Measures::COORDINATE,
                ..CostParams::default()
            };
            let greedy = greedy_search(&build_cost_matrix(&a, &b, &params).unwrap());
            for (i, p) in a.positions.iter().enumerate() {
                let nn = (0..b.len())
                    .min_by(|&x, &y| {
                        (b.positions[x] - p)
                            .norm()
                            .partial_cmp(&(b.positions[y] - p).norm())
                            .unwrap()
                    })
                    .unwrap();
                assert_eq!(greedy.target_index[i], nn);
            }
        }
    }
}
