//! Exact k-nearest-neighbor queries and PCA surface normals.

use nalgebra::{Matrix3, SymmetricEigen};

use crate::error::{Error, Result};
use crate::model::{PointCloud, Vec3};

pub const DEFAULT_NORMAL_K: usize = 16;

/// Smallest-to-largest eigenvalue ratio above which a neighborhood is treated
/// as isotropic (no dominant plane).
pub const ISOTROPY_RATIO: f64 = 0.9;

/// Middle-to-largest eigenvalue ratio below which a neighborhood is treated as
/// collinear (plane orientation undetermined).
pub const COLLINEARITY_RATIO: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalEstimate {
    pub normal: Vec3,
    pub valid: bool,
    pub neighborhood_size: usize,
}

impl NormalEstimate {
    pub fn invalid(k: usize) -> Self {
        NormalEstimate {
            normal: Vec3::zeros(),
            valid: false,
            neighborhood_size: k,
        }
    }

    /// Wraps a stored normal; validity follows the unit-length convention.
    pub fn from_stored(normal: Vec3) -> Self {
        NormalEstimate {
            normal,
            valid: crate::model::is_valid_normal(&normal),
            neighborhood_size: 0,
        }
    }
}

/// Indices of the `k` points of `points` nearest to `query`, by ascending
/// Euclidean distance with ties going to the lower index.
pub fn knn_in(points: &[Vec3], query: &Vec3, k: usize) -> Result<Vec<usize>> {
    if k > points.len() {
        return Err(Error::NotEnoughPoints { size: points.len(), k });
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    let mut keyed: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .map(|(i, p)| ((p - query).norm_squared(), i))
        .collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < keyed.len() {
        keyed.select_nth_unstable_by(k - 1, cmp);
        keyed.truncate(k);
    }
    keyed.sort_unstable_by(cmp);
    Ok(keyed.into_iter().map(|(_, i)| i).collect())
}

pub fn knn_indices(cloud: &PointCloud, query: &Vec3, k: usize) -> Result<Vec<usize>> {
    knn_in(&cloud.positions, query, k)
}

/// Covariance of the given neighborhood around its centroid.
pub fn neighborhood_covariance(points: &[Vec3], indices: &[usize]) -> Matrix3<f64> {
    let n = indices.len() as f64;
    let centroid = indices.iter().map(|&i| points[i]).sum::<Vec3>() / n;
    let mut cov = Matrix3::zeros();
    for &i in indices {
        let d = points[i] - centroid;
        cov += d * d.transpose();
    }
    cov / n
}

/// Plane normal of a neighborhood: eigenvector of the smallest covariance
/// eigenvalue. Flagged invalid for isotropic, collinear or coincident sets.
pub fn normal_from_covariance(cov: &Matrix3<f64>, k: usize) -> NormalEstimate {
    let eig = SymmetricEigen::new(*cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let lo = eig.eigenvalues[order[0]].max(0.0);
    let mid = eig.eigenvalues[order[1]].max(0.0);
    let hi = eig.eigenvalues[order[2]].max(0.0);

    if !(hi > 0.0) || lo / hi > ISOTROPY_RATIO || mid / hi < COLLINEARITY_RATIO {
        return NormalEstimate::invalid(k);
    }
    let normal = eig.eigenvectors.column(order[0]).normalize();
    NormalEstimate {
        normal,
        valid: true,
        neighborhood_size: k,
    }
}

pub fn estimate_normal_estimates(cloud: &PointCloud, k: usize) -> Result<Vec<NormalEstimate>> {
    if k < 3 {
        return Err(Error::InvalidParameter(format!("normal k must be >= 3, got {k}")));
    }
    if cloud.len() < k {
        return Err(Error::NotEnoughPoints { size: cloud.len(), k });
    }
    cloud
        .positions
        .iter()
        .map(|p| {
            let nbrs = knn_in(&cloud.positions, p, k)?;
            let cov = neighborhood_covariance(&cloud.positions, &nbrs);
            Ok(normal_from_covariance(&cov, k))
        })
        .collect()
}

/// Returns a copy of `cloud` with PCA normals attached. Invalid estimates are
/// stored as zero vectors.
pub fn estimate_normals(cloud: &PointCloud, k: usize) -> Result<PointCloud> {
    let normals = estimate_normal_estimates(cloud, k)?
        .into_iter()
        .map(|e| if e.valid { e.normal } else { Vec3::zeros() })
        .collect();
    Ok(PointCloud {
        positions: cloud.positions.clone(),
        colors: cloud.colors.clone(),
        normals: Some(normals),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Rotation3, Unit};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(x: f64, y: f64, z: f64) -> Vec3 {
        Vec3::new(x, y, z)
    }

    fn brute_knn(points: &[Vec3], q: &Vec3, k: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..points.len()).collect();
        idx.sort_by(|&a, &b| {
            (points[a] - q)
                .norm_squared()
                .partial_cmp(&(points[b] - q).norm_squared())
                .unwrap()
                .then(a.cmp(&b))
        });
        idx.truncate(k);
        idx
    }

    #[test]
    fn knn_examples() {
        let cloud = PointCloud::new(vec![v(0.0, 0.0, 0.0), v(1.0, 0.0, 0.0), v(2.0, 0.0, 0.0)]);
        assert_eq!(knn_indices(&cloud, &v(0.0, 0.0, 0.0), 2).unwrap(), vec![0, 1]);
        assert_eq!(knn_indices(&cloud, &v(1.5, 0.0, 0.0), 2).unwrap(), vec![1, 2]);
        assert_eq!(knn_indices(&cloud, &v(1.5, 0.0, 0.0), 1).unwrap(), vec![1]);
        assert_eq!(knn_indices(&cloud, &v(2.2, 0.0, 0.0), 3).unwrap(), vec![2, 1, 0]);
        assert!(matches!(
            knn_indices(&cloud, &v(0.0, 0.0, 0.0), 4),
            Err(Error::NotEnoughPoints { size: 3, k: 4 })
        ));
    }

    #[test]
    fn knn_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            // coarse grid forces many distance ties
            let pts: Vec<Vec3> = (0..60)
                .map(|_| v(rng.random_range(0..4) as f64, rng.random_range(0..4) as f64, 0.0))
                .collect();
            let q = v(rng.random_range(0..4) as f64, rng.random_range(0..4) as f64, 0.0);
            let k = rng.random_range(1..=60);
            let got = knn_in(&pts, &q, k).unwrap();
            assert_eq!(got, brute_knn(&pts, &q, k));
            let d: Vec<f64> = got.iter().map(|&i| (pts[i] - q).norm()).collect();
            assert!(d.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn planar_points_give_vertical_normals() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts = (0..100)
            .map(|_| v(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.0))
            .collect();
        let cloud = estimate_normals(&PointCloud::new(pts), 10).unwrap();
        for n in cloud.normals.unwrap() {
            assert!((n.z.abs() - 1.0).abs() < 1e-6, "{n:?}");
            assert!(n.x.abs() < 1e-6 && n.y.abs() < 1e-6);
        }
    }

    #[test]
    fn isotropic_flags_follow_direct_eigenvalue_ratio() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut pts = Vec::new();
        while pts.len() < 100 {
            let p = v(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            if p.norm() <= 1.0 {
                pts.push(p);
            }
        }
        let est = estimate_normal_estimates(&PointCloud::new(pts.clone()), 10).unwrap();
        for (i, e) in est.iter().enumerate() {
            // oracle: brute-force neighbors, covariance by explicit sums,
            // eigenvalues from the characteristic cubic
            let nbrs = brute_knn(&pts, &pts[i], 10);
            let (lo, mid, hi) = oracle_eigenvalues(&pts, &nbrs);
            let expect_invalid = lo / hi > ISOTROPY_RATIO || mid / hi < COLLINEARITY_RATIO;
            assert_eq!(e.valid, !expect_invalid, "point {i}: {lo} {mid} {hi}");
        }
    }

    #[test]
    fn perfectly_isotropic_neighborhood_is_invalid() {
        let pts = vec![
            v(0.0, 0.0, 0.0),
            v(1.0, 0.0, 0.0),
            v(-1.0, 0.0, 0.0),
            v(0.0, 1.0, 0.0),
            v(0.0, -1.0, 0.0),
            v(0.0, 0.0, 1.0),
            v(0.0, 0.0, -1.0),
        ];
        let est = estimate_normal_estimates(&PointCloud::new(pts), 7).unwrap();
        assert!(!est[0].valid);
    }

    #[test]
    fn collinear_points_are_invalid() {
        // covariance of (0,0,0),(1,1,0),(2,2,0) is rank one along (1,1,0)
        let pts = vec![v(0.0, 0.0, 0.0), v(1.0, 1.0, 0.0), v(2.0, 2.0, 0.0)];
        let cov = neighborhood_covariance(&pts, &[0, 1, 2]);
        let third = 2.0 / 3.0;
        assert!((cov - Matrix3::new(third, third, 0.0, third, third, 0.0, 0.0, 0.0, 0.0)).norm() < 1e-12);
        let est = estimate_normal_estimates(&PointCloud::new(pts), 3).unwrap();
        assert!(est.iter().all(|e| !e.valid));
    }

    #[test]
    fn rejects_small_k_and_small_cloud() {
        let cloud = PointCloud::new(vec![v(0.0, 0.0, 0.0); 4]);
        assert!(estimate_normals(&cloud, 2).is_err());
        assert!(matches!(
            estimate_normals(&cloud, 5),
            Err(Error::NotEnoughPoints { size: 4, k: 5 })
        ));
    }

    #[test]
    fn normals_are_rigid_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        // gently curved surface so neighborhoods have a clear plane
        let pts: Vec<Vec3> = (0..200)
            .map(|_| {
                let x: f64 = rng.random_range(-2.0..2.0);
                let y: f64 = rng.random_range(-2.0..2.0);
                v(x, y, 0.05 * x * x - 0.03 * x * y)
            })
            .collect();
        let base = estimate_normal_estimates(&PointCloud::new(pts.clone()), 12).unwrap();
        for _ in 0..5 {
            let axis = Unit::new_normalize(v(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ));
            let rot = Rotation3::from_axis_angle(&axis, rng.random_range(-3.0..3.0));
            let t = v(rng.random_range(-5.0..5.0), 3.0, -1.0);
            let moved: Vec<Vec3> = pts.iter().map(|p| rot * p + t).collect();
            let est = estimate_normal_estimates(&PointCloud::new(moved), 12).unwrap();
            for (a, b) in base.iter().zip(&est) {
                assert_eq!(a.valid, b.valid);
                if a.valid {
                    let expect = rot * a.normal;
                    assert!((expect.dot(&b.normal).abs() - 1.0).abs() < 1e-5);
                }
            }
        }
    }

    fn oracle_eigenvalues(pts: &[Vec3], idx: &[usize]) -> (f64, f64, f64) {
        let n = idx.len() as f64;
        let mut mean = [0.0; 3];
        for &i in idx {
            for a in 0..3 {
                mean[a] += pts[i][a] / n;
            }
        }
        let mut c = [[0.0; 3]; 3];
        for &i in idx {
            for a in 0..3 {
                for b in 0..3 {
                    c[a][b] += (pts[i][a] - mean[a]) * (pts[i][b] - mean[b]) / n;
                }
            }
        }
        // trigonometric solution of the symmetric 3x3 eigenproblem
        let p1 = c[0][1].powi(2) + c[0][2].powi(2) + c[1][2].powi(2);
        let q = (c[0][0] + c[1][1] + c[2][2]) / 3.0;
        let p2 = (c[0][0] - q).powi(2) + (c[1][1] - q).powi(2) + (c[2][2] - q).powi(2) + 2.0 * p1;
        let p = (p2 / 6.0).sqrt();
        let mut bm = [[0.0; 3]; 3];
        for a in 0..3 {
            for b in 0..3 {
                bm[a][b] = (c[a][b] - if a == b { q } else { 0.0 }) / p;
            }
        }
        let det = bm[0][0] * (bm[1][1] * bm[2][2] - bm[1][2] * bm[2][1])
            - bm[0][1] * (bm[1][0] * bm[2][2] - bm[1][2] * bm[2][0])
            + bm[0][2] * (bm[1][0] * bm[2][1] - bm[1][1] * bm[2][0]);
        let r = (det / 2.0).clamp(-1.0, 1.0);
        let phi = r.acos() / 3.0;
        let hi = q + 2.0 * p * phi.cos();
        let lo = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
        let mid = 3.0 * q - hi - lo;
        (lo, mid, hi)
    }
}
