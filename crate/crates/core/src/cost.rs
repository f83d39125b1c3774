//! Pairwise transport cost from coordinate, color and normal measures.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::features::NormalEstimate;
use crate::model::{PointCloud, Vec3};

pub const DEFAULT_THETA_D: f64 = 1.75;
pub const DEFAULT_THETA_C: f64 = 0.2;

/// Optional measures on top of the always-on coordinate term.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Measures {
    pub color: bool,
    pub normal: bool,
}

impl Measures {
    pub const COORDINATE: Measures = Measures {
        color: false,
        normal: false,
    };
    pub const COORDINATE_COLOR: Measures = Measures {
        color: true,
        normal: false,
    };
    pub const ALL: Measures = Measures {
        color: true,
        normal: true,
    };

    pub fn count(&self) -> usize {
        1 + self.color as usize + self.normal as usize
    }
}

impl Default for Measures {
    fn default() -> Self {
        Measures::ALL
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostParams {
    pub theta_d: f64,
    pub theta_c: f64,
    pub measures: Measures,
}

impl Default for CostParams {
    fn default() -> Self {
        CostParams {
            theta_d: DEFAULT_THETA_D,
            theta_c: DEFAULT_THETA_C,
            measures: Measures::ALL,
        }
    }
}

impl CostParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta_d > 0.0 && self.theta_d.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "theta_d must be > 0, got {}",
                self.theta_d
            )));
        }
        if !(self.theta_c > 0.0 && self.theta_c.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "theta_c must be > 0, got {}",
                self.theta_c
            )));
        }
        Ok(())
    }
}

/// Dense `n_a x n_b` matrix of nonnegative transport costs.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix(pub DMatrix<f64>);

impl CostMatrix {
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, |r| r.len());
        CostMatrix(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
    }

    pub fn nrows(&self) -> usize {
        self.0.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.0.ncols()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }
}

fn gaussian_cost(sq_dist: f64, theta: f64) -> f64 {
    1.0 - (-sq_dist / (2.0 * theta * theta)).exp()
}

pub fn coordinate_cost(p: &Vec3, q: &Vec3, theta_d: f64) -> f64 {
    gaussian_cost((p - q).norm_squared(), theta_d)
}

pub fn color_cost(c1: &Vec3, c2: &Vec3, theta_c: f64) -> f64 {
    gaussian_cost((c1 - c2).norm_squared(), theta_c)
}

/// One minus the absolute cosine between the normals; 1 when either is invalid.
pub fn normal_cost(n1: &NormalEstimate, n2: &NormalEstimate) -> f64 {
    if !n1.valid || !n2.valid {
        return 1.0;
    }
    let denom = n1.normal.norm() * n2.normal.norm();
    if !(denom > 0.0) {
        return 1.0;
    }
    (1.0 - n1.normal.dot(&n2.normal).abs() / denom).max(0.0)
}

pub fn build_cost_matrix(a: &PointCloud, b: &PointCloud, params: &CostParams) -> Result<CostMatrix> {
    params.validate()?;
    let colors = if params.measures.color {
        match (&a.colors, &b.colors) {
            (Some(ca), Some(cb)) => Some((ca, cb)),
            _ => return Err(Error::MissingAttribute("colors")),
        }
    } else {
        None
    };
    let normals = if params.measures.normal {
        match (&a.normals, &b.normals) {
            (Some(na), Some(nb)) => Some((
                na.iter().copied().map(NormalEstimate::from_stored).collect::<Vec<_>>(),
                nb.iter().copied().map(NormalEstimate::from_stored).collect::<Vec<_>>(),
            )),
            _ => return Err(Error::MissingAttribute("normals")),
        }
    } else {
        None
    };

    let m = DMatrix::from_fn(a.len(), b.len(), |i, j| {
        let mut c = coordinate_cost(&a.positions[i], &b.positions[j], params.theta_d);
        if let Some((ca, cb)) = colors {
            c += color_cost(&ca[i], &cb[j], params.theta_c);
        }
        if let Some((na, nb)) = &normals {
            c += normal_cost(&na[i], &nb[j]);
        }
        c
    });
    Ok(CostMatrix(m))
}
