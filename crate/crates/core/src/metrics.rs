//! Scene-flow accuracy metrics: EPE, strict/relaxed accuracy and outliers.

use std::fmt;

use crate::error::{Error, Result};
use crate::model::{FlowField, PseudoLabelSet};

pub const STRICT_ABS: f64 = 0.05;
pub const STRICT_REL: f64 = 0.05;
pub const RELAXED_ABS: f64 = 0.1;
pub const RELAXED_REL: f64 = 0.1;
pub const OUTLIER_ABS: f64 = 0.3;
pub const OUTLIER_REL: f64 = 0.1;
/// Floor on the ground-truth norm in the relative error.
pub const REL_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub epe: f64,
    pub as_pct: f64,
    pub ar_pct: f64,
    pub out_pct: f64,
    pub point_count: usize,
}

/// Threshold outcome for a single point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PointOutcome {
    pub strict: bool,
    pub relaxed: bool,
    pub outlier: bool,
}

pub fn classify(error: f64, gt_norm: f64) -> PointOutcome {
    let rel = error / gt_norm.max(REL_FLOOR);
    PointOutcome {
        strict: error < STRICT_ABS || rel < STRICT_REL,
        relaxed: error < RELAXED_ABS || rel < RELAXED_REL,
        outlier: error > OUTLIER_ABS || rel > OUTLIER_REL,
    }
}

pub fn evaluate(pred: &FlowField, gt: &FlowField, mask: Option<&[bool]>) -> Result<MetricReport> {
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch {
            expected: gt.len(),
            actual: pred.len(),
        });
    }
    if let Some(mask) = mask {
        if mask.len() != gt.len() {
            return Err(Error::LengthMismatch {
                expected: gt.len(),
                actual: mask.len(),
            });
        }
    }
    let mut count = 0usize;
    let mut sum_err = 0.0;
    let (mut strict, mut relaxed, mut outlier) = (0usize, 0usize, 0usize);
    for (i, (p, g)) in pred.0.iter().zip(&gt.0).enumerate() {
        if mask.is_some_and(|m| !m[i]) {
            continue;
        }
        let err = (p - g).norm();
        let o = classify(err, g.norm());
        count += 1;
        sum_err += err;
        strict += o.strict as usize;
        relaxed += o.relaxed as usize;
        outlier += o.outlier as usize;
    }
    if count == 0 {
        return Err(Error::EmptyEvaluation);
    }
    let pct = |k: usize| 100.0 * k as f64 / count as f64;
    Ok(MetricReport {
        epe: sum_err / count as f64,
        as_pct: pct(strict),
        ar_pct: pct(relaxed),
        out_pct: pct(outlier),
        point_count: count,
    })
}

/// Metrics over the valid labels only; `point_count` is the valid count.
pub fn label_quality(labels: &PseudoLabelSet, gt: &FlowField) -> Result<MetricReport> {
    evaluate(&labels.to_flow(), gt, Some(&labels.valid))
}

impl MetricReport {
    /// `key=value` lines, one metric per line.
    pub fn to_key_values(&self) -> String {
        format!(
            "epe={}\nas={}\nar={}\nout={}\npoints={}\n",
            self.epe, self.as_pct, self.ar_pct, self.out_pct, self.point_count
        )
    }

    /// Parses the output of [`MetricReport::to_key_values`]; unrelated lines
    /// are skipped.
    pub fn from_key_values(text: &str) -> Result<MetricReport> {
        let mut fields: [Option<f64>; 4] = [None; 4];
        let mut points = None;
        for line in text.lines() {
            let Some((key, value)) = line.split_once('=') else {
                continue;
            };
            let value = value.trim();
            let parse = |v: &str| {
                v.parse::<f64>()
                    .map_err(|_| Error::Format(format!("bad metric value {v:?}")))
            };
            match key.trim() {
                "epe" => fields[0] = Some(parse(value)?),
                "as" => fields[1] = Some(parse(value)?),
                "ar" => fields[2] = Some(parse(value)?),
                "out" => fields[3] = Some(parse(value)?),
                "points" => {
                    points = Some(
                        value
                            .parse::<usize>()
                            .map_err(|_| Error::Format(format!("bad point count {value:?}")))?,
                    )
                }
                _ => {}
            }
        }
        let missing = |name: &str| Error::Format(format!("missing key {name}"));
        Ok(MetricReport {
            epe: fields[0].ok_or_else(|| missing("epe"))?,
            as_pct: fields[1].ok_or_else(|| missing("as"))?,
            ar_pct: fields[2].ok_or_else(|| missing("ar"))?,
            out_pct: fields[3].ok_or_else(|| missing("out"))?,
            point_count: points.ok_or_else(|| missing("points"))?,
        })
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:>10} {:>8} {:>8} {:>8} {:>8}",
            "EPE(m)", "AS(%)", "AR(%)", "Out(%)", "points"
        )?;
        writeln!(
            f,
            "{:>10.4} {:>8.2} {:>8.2} {:>8.2} {:>8}",
            self.epe, self.as_pct, self.ar_pct, self.out_pct, self.point_count
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Vec3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one(x: f64) -> FlowField {
        FlowField(vec![Vec3::new(x, 0.0, 0.0)])
    }

    #[test]
    fn perfect_prediction() {
        let gt = FlowField(vec![Vec3::new(1.0, 2.0, 0.0), Vec3::zeros(), Vec3::new(0.0, 0.0, -4.0)]);
        let r = evaluate(&gt, &gt, None).unwrap();
        assert_eq!(
            r,
            MetricReport {
                epe: 0.0,
                as_pct: 100.0,
                ar_pct: 100.0,
                out_pct: 0.0,
                point_count: 3
            }
        );
    }

    #[test]
    fn small_error_counts_as_accurate() {
        let r = evaluate(&one(1.04), &one(1.0), None).unwrap();
        assert!((r.epe - 0.04).abs() < 1e-12);
        assert_eq!((r.as_pct, r.ar_pct, r.out_pct), (100.0, 100.0, 0.0));
    }

    #[test]
    fn large_error_is_outlier() {
        let r = evaluate(&one(1.35), &one(1.0), None).unwrap();
        assert!((r.epe - 0.35).abs() < 1e-12);
        assert_eq!((r.as_pct, r.ar_pct, r.out_pct), (0.0, 0.0, 100.0));
    }

    #[test]
    fn thresholds_are_strict() {
        // e = 0.05 exactly with large gt: neither abs nor rel branch passes AS
        let gt = FlowField(vec![Vec3::new(0.0, 0.0, 4.0)]);
        let pred = FlowField(vec![Vec3::new(0.0, 0.0, 4.5)]);
        let o = classify(0.5, 4.0);
        assert!(!o.strict && !o.relaxed && o.outlier);
        assert_eq!(evaluate(&pred, &gt, None).unwrap().out_pct, 100.0);
        let o = classify(0.3, 100.0);
        assert!(!o.outlier);
    }

    #[test]
    fn zero_ground_truth_is_guarded() {
        let r = evaluate(&one(0.01), &one(0.0), None).unwrap();
        assert_eq!(r.as_pct, 100.0);
        assert_eq!(r.out_pct, 100.0);
    }

    #[test]
    fn mask_and_empty_set() {
        let gt = FlowField(vec![Vec3::new(1.0, 0.0, 0.0); 4]);
        let labels = PseudoLabelSet {
            labels: vec![Vec3::new(1.0, 0.0, 0.0); 4],
            valid: vec![true, false, true, false],
        };
        let r = label_quality(&labels, &gt).unwrap();
        assert_eq!(r.point_count, 2);
        assert_eq!(r.as_pct, 100.0);
        assert_eq!(
            label_quality(&PseudoLabelSet::all_invalid(4), &gt),
            Err(Error::EmptyEvaluation)
        );
        assert!(evaluate(&one(1.0), &gt, None).is_err());
    }

    #[test]
    fn relative_branch_scale_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // |gt| in [1, 1.5] and relative errors drawn from bands that keep the
        // absolute tests from flipping any point at scales up to 2
        let bands = [(0.01, 0.04), (0.06, 0.09), (0.11, 0.2)];
        let gt: Vec<Vec3> = (0..300)
            .map(|_| {
                Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.0).normalize()
                    * rng.random_range(1.0..1.5)
            })
            .collect();
        let pred: Vec<Vec3> = gt
            .iter()
            .map(|g| {
                let dir = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 1.0).normalize();
                let (lo, hi) = bands[rng.random_range(0..3)];
                g + dir * (g.norm() * rng.random_range(lo..hi))
            })
            .collect();
        let base = evaluate(&FlowField(pred.clone()), &FlowField(gt.clone()), None).unwrap();
        assert!(base.as_pct > 0.0 && base.ar_pct < 100.0 && base.out_pct > 0.0);
        for s in [1.5, 2.0] {
            let scaled = evaluate(
                &FlowField(pred.iter().map(|p| p * s).collect()),
                &FlowField(gt.iter().map(|g| g * s).collect()),
                None,
            )
            .unwrap();
            assert_eq!(scaled.as_pct, base.as_pct);
            assert_eq!(scaled.ar_pct, base.ar_pct);
            assert_eq!(scaled.out_pct, base.out_pct);
            assert!((scaled.epe - s * base.epe).abs() < 1e-12);
        }
    }

    #[test]
    fn key_value_round_trip() {
        let r = MetricReport {
            epe: 0.123456789,
            as_pct: 33.333333333333336,
            ar_pct: 50.0,
            out_pct: 1e-3,
            point_count: 17,
        };
        let text = format!("{r}{}", r.to_key_values());
        assert_eq!(MetricReport::from_key_values(&text).unwrap(), r);
        assert!(MetricReport::from_key_values("epe=1\n").is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn vec3() -> impl Strategy<Value = Vec3> {
            (-3.0..3.0f64, -3.0..3.0f64, -3.0..3.0f64).prop_map(|(x, y, z)| Vec3::new(x, y, z))
        }

        proptest! {
            #[test]
            fn strict_implies_relaxed(pairs in prop::collection::vec((vec3(), vec3()), 1..64)) {
                let pred = FlowField(pairs.iter().map(|p| p.0).collect());
                let gt = FlowField(pairs.iter().map(|p| p.1).collect());
                for (p, g) in pred.0.iter().zip(&gt.0) {
                    let o = classify((p - g).norm(), g.norm());
                    prop_assert!(!o.strict || o.relaxed);
                }
                let r = evaluate(&pred, &gt, None).unwrap();
                prop_assert!(0.0 <= r.as_pct && r.as_pct <= r.ar_pct && r.ar_pct <= 100.0);
                prop_assert!((0.0..=100.0).contains(&r.out_pct));

                let mut rev_p = pred.0.clone();
                let mut rev_g = gt.0.clone();
                rev_p.reverse();
                rev_g.reverse();
                let rr = evaluate(&FlowField(rev_p), &FlowField(rev_g), None).unwrap();
                prop_assert!((rr.epe - r.epe).abs() < 1e-12);
            }
        }
    }
}
