//! Shared geometric types: point clouds, flow fields and pseudo-label sets.

use std::fmt;

use nalgebra::Vector3;

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Tolerance on `| |n| - 1 |` for a normal to count as valid.
pub const UNIT_NORMAL_TOLERANCE: f64 = 1e-6;

/// Whether a stored normal is usable. Invalid normals are stored as the zero
/// vector (or anything that is not unit length).
pub fn is_valid_normal(n: &Vec3) -> bool {
    let norm = n.norm();
    norm.is_finite() && (norm - 1.0).abs() <= UNIT_NORMAL_TOLERANCE
}

/// One frame of points with optional per-point color and normal attributes.
///
/// Colors are normalized RGB in `[0, 1]`. Normals are unit vectors; a normal
/// that is the zero vector marks a point whose normal could not be estimated.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub positions: Vec<Vec3>,
    pub colors: Option<Vec<Vec3>>,
    pub normals: Option<Vec<Vec3>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    Empty,
    NonFiniteCoordinate { index: usize },
    ColorOutOfRange { index: usize },
    ColorLengthMismatch { expected: usize, actual: usize },
    NormalNotUnit { index: usize },
    NormalLengthMismatch { expected: usize, actual: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Empty => write!(f, "empty cloud"),
            Violation::NonFiniteCoordinate { index } => {
                write!(f, "non-finite coordinate at point {index}")
            }
            Violation::ColorOutOfRange { index } => write!(f, "color out of range at point {index}"),
            Violation::ColorLengthMismatch { expected, actual } => {
                write!(f, "length mismatch: {actual} colors for {expected} points")
            }
            Violation::NormalNotUnit { index } => {
                write!(f, "normal at point {index} is neither unit length nor flagged invalid")
            }
            Violation::NormalLengthMismatch { expected, actual } => {
                write!(f, "length mismatch: {actual} normals for {expected} points")
            }
        }
    }
}

impl PointCloud {
    pub fn new(positions: Vec<Vec3>) -> Self {
        PointCloud {
            positions,
            colors: None,
            normals: None,
        }
    }

    pub fn with_colors(mut self, colors: Vec<Vec3>) -> Self {
        self.colors = Some(colors);
        self
    }

    pub fn with_normals(mut self, normals: Vec<Vec3>) -> Self {
        self.normals = Some(normals);
        self
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Checks every invariant and returns all violations found.
    pub fn validate(&self) -> Vec<Violation> {
        let n = self.len();
        let mut out = Vec::new();
        if n == 0 {
            out.push(Violation::Empty);
        }
        for (index, p) in self.positions.iter().enumerate() {
            if !p.iter().all(|c| c.is_finite()) {
                out.push(Violation::NonFiniteCoordinate { index });
            }
        }
        if let Some(colors) = &self.colors {
            if colors.len() != n {
                out.push(Violation::ColorLengthMismatch {
                    expected: n,
                    actual: colors.len(),
                });
            }
            for (index, c) in colors.iter().enumerate() {
                if !c.iter().all(|v| (0.0..=1.0).contains(v)) {
                    out.push(Violation::ColorOutOfRange { index });
                }
            }
        }
        if let Some(normals) = &self.normals {
            if normals.len() != n {
                out.push(Violation::NormalLengthMismatch {
                    expected: n,
                    actual: normals.len(),
                });
            }
            for (index, nrm) in normals.iter().enumerate() {
                if !is_valid_normal(nrm) && *nrm != Vec3::zeros() {
                    out.push(Violation::NormalNotUnit { index });
                }
            }
        }
        out
    }

    /// Like [`PointCloud::validate`] but folds the report into an error.
    pub fn check(&self) -> Result<()> {
        let violations = self.validate();
        if violations.is_empty() {
            return Ok(());
        }
        let msg = violations
            .iter()
            .take(4)
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join("; ");
        Err(Error::InvalidCloud(msg))
    }
}

/// Report-style validation of a cloud; an empty list means the cloud is valid.
pub fn validate_cloud(cloud: &PointCloud) -> Vec<Violation> {
    cloud.validate()
}

/// Per-point displacement field.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FlowField(pub Vec<Vec3>);

impl FlowField {
    pub fn zeros(n: usize) -> Self {
        FlowField(vec![Vec3::zeros(); n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn vectors(&self) -> &[Vec3] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.iter().all(|c| c.is_finite()))
    }
}

impl From<Vec<Vec3>> for FlowField {
    fn from(v: Vec<Vec3>) -> Self {
        FlowField(v)
    }
}

impl std::ops::Neg for &FlowField {
    type Output = FlowField;

    fn neg(self) -> FlowField {
        FlowField(self.0.iter().map(|v| -v).collect())
    }
}

/// Flow labels with a validity mask. Invalid entries hold the zero vector and
/// must only be read through the mask.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PseudoLabelSet {
    pub labels: Vec<Vec3>,
    pub valid: Vec<bool>,
}

impl PseudoLabelSet {
    pub fn all_invalid(n: usize) -> Self {
        PseudoLabelSet {
            labels: vec![Vec3::zeros(); n],
            valid: vec![false; n],
        }
    }

    pub fn all_valid(flow: FlowField) -> Self {
        let n = flow.len();
        PseudoLabelSet {
            labels: flow.0,
            valid: vec![true; n],
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labeled_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.valid[i]).collect()
    }

    pub fn unlabeled_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.valid[i]).collect()
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn get(&self, i: usize) -> Option<&Vec3> {
        if self.valid[i] {
            Some(&self.labels[i])
        } else {
            None
        }
    }

    pub fn to_flow(&self) -> FlowField {
        FlowField(self.labels.clone())
    }
}

/// Translates every point of `cloud` by the matching flow vector. Attributes
/// are carried over untouched.
pub fn prewarp(cloud: &PointCloud, flow: &FlowField) -> Result<PointCloud> {
    if flow.len() != cloud.len() {
        return Err(Error::LengthMismatch {
            expected: cloud.len(),
            actual: flow.len(),
        });
    }
    Ok(PointCloud {
        positions: cloud.positions.iter().zip(flow.vectors()).map(|(p, f)| p + f).collect(),
        colors: cloud.colors.clone(),
        normals: cloud.normals.clone(),
    })
}
