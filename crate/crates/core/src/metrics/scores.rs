use serde::Serialize;

use crate::geometry::{norm, sub, Vec3};
use crate::{Error, Result};

/// One value per joint plus their unweighted mean.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct JointScores {
    pub per_joint: Vec<f64>,
    pub mean: f64,
}

impl JointScores {
    fn from_per_joint(per_joint: Vec<f64>) -> Self {
        let mean = per_joint.iter().sum::<f64>() / per_joint.len() as f64;
        JointScores { per_joint, mean }
    }
}

/// `errors[f][j]`: Euclidean error of joint `j` in frame `f`.
pub fn joint_errors(preds: &[Vec<Vec3>], truths: &[Vec<Vec3>]) -> Result<Vec<Vec<f64>>> {
    if preds.len() != truths.len() {
        return Err(Error::contract(format!("{} predicted frames vs {} labelled", preds.len(), truths.len())));
    }
    if preds.is_empty() {
        return Err(Error::contract("no frames to score"));
    }
    let j = truths[0].len();
    preds
        .iter()
        .zip(truths)
        .map(|(p, t)| {
            if p.len() != t.len() || t.len() != j || j == 0 {
                return Err(Error::contract(format!("joint count mismatch: {} vs {} (expected {j})", p.len(), t.len())));
            }
            Ok(p.iter().zip(t).map(|(a, b)| norm(sub(*a, *b))).collect())
        })
        .collect()
}

/// Percentage of frames whose error is strictly below `threshold_mm`, per joint.
pub fn map_at(preds: &[Vec<Vec3>], truths: &[Vec<Vec3>], threshold_mm: f64) -> Result<JointScores> {
    let errors = joint_errors(preds, truths)?;
    let j = errors[0].len();
    let per_joint = (0..j)
        .map(|k| 100.0 * errors.iter().filter(|e| e[k] < threshold_mm).count() as f64 / errors.len() as f64)
        .collect();
    Ok(JointScores::from_per_joint(per_joint))
}

/// Mean Euclidean error per joint, in the input units.
pub fn mpjpe(preds: &[Vec<Vec3>], truths: &[Vec<Vec3>]) -> Result<JointScores> {
    let errors = joint_errors(preds, truths)?;
    let j = errors[0].len();
    let per_joint = (0..j).map(|k| errors.iter().map(|e| e[k]).sum::<f64>() / errors.len() as f64).collect();
    Ok(JointScores::from_per_joint(per_joint))
}

/// 10, 20, …, 150 mm.
pub fn default_pdj_thresholds() -> Vec<f64> {
    (1..=15).map(|k| 10.0 * k as f64).collect()
}

/// Fraction of all joints detected (error strictly below `t`) at each threshold.
pub fn pdj_curve(preds: &[Vec<Vec3>], truths: &[Vec<Vec3>], thresholds: &[f64]) -> Result<Vec<f64>> {
    if thresholds.windows(2).any(|w| !(w[0] <= w[1])) || thresholds.iter().any(|t| t.is_nan()) {
        return Err(Error::contract("PDJ thresholds must be sorted ascending"));
    }
    let errors: Vec<f64> = joint_errors(preds, truths)?.into_iter().flatten().collect();
    let n = errors.len() as f64;
    Ok(thresholds.iter().map(|&t| errors.iter().filter(|&&e| e < t).count() as f64 / n).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one(p: Vec3) -> Vec<Vec<Vec3>> {
        vec![vec![p]]
    }

    #[test]
    fn map_threshold_is_strict() {
        let t = one([0.0; 3]);
        assert_eq!(map_at(&one([50.0, 0.0, 0.0]), &t, 100.0).unwrap().mean, 100.0);
        assert_eq!(map_at(&one([100.0, 0.0, 0.0]), &t, 100.0).unwrap().mean, 0.0);
        let preds = vec![vec![[50.0, 0.0, 0.0]], vec![[0.0, 150.0, 0.0]]];
        assert_eq!(map_at(&preds, &vec![vec![[0.0; 3]]; 2], 100.0).unwrap().mean, 50.0);
    }

    #[test]
    fn mpjpe_cases() {
        assert_eq!(mpjpe(&one([1.0, 2.0, 3.0]), &one([1.0, 2.0, 3.0])).unwrap().mean, 0.0);
        assert_eq!(mpjpe(&one([3.0, 4.0, 0.0]), &one([0.0; 3])).unwrap().mean, 5.0);
        assert!(matches!(mpjpe(&one([0.0; 3]), &vec![vec![[0.0; 3]; 2]]), Err(Error::Contract(_))));
        assert!(matches!(map_at(&one([0.0; 3]), &[], 100.0), Err(Error::Contract(_))));
    }

    #[test]
    fn mpjpe_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let gen = |rng: &mut ChaCha8Rng| -> Vec<Vec<Vec3>> {
            (0..40).map(|_| (0..6).map(|_| std::array::from_fn(|_| rng.random_range(-500.0..500.0))).collect()).collect()
        };
        let (p, t) = (gen(&mut rng), gen(&mut rng));
        let got = mpjpe(&p, &t).unwrap();
        let mut sums = [0.0; 6];
        for f in 0..40 {
            for j in 0..6 {
                let d: f64 = (0..3).map(|k| (p[f][j][k] - t[f][j][k]).powi(2)).sum();
                sums[j] += d.sqrt();
            }
        }
        for j in 0..6 {
            assert!((got.per_joint[j] - sums[j] / 40.0).abs() < 1e-9);
        }
        let mean_of_means = got.per_joint.iter().sum::<f64>() / 6.0;
        assert!((got.mean - mean_of_means).abs() < 1e-9);
    }

    #[test]
    fn pdj_edges_and_consistency() {
        let preds = vec![vec![[30.0, 0.0, 0.0], [0.0, 100.0, 0.0]], vec![[0.0, 0.0, 120.0], [1.0, 0.0, 0.0]]];
        let truth = vec![vec![[0.0; 3]; 2]; 2];
        let curve = pdj_curve(&preds, &truth, &[0.0, 100.0, 1e12]).unwrap();
        assert_eq!(curve, vec![0.0, 0.5, 1.0]);
        assert_eq!(curve[1], map_at(&preds, &truth, 100.0).unwrap().mean / 100.0);
        assert!(matches!(pdj_curve(&preds, &truth, &[20.0, 10.0]), Err(Error::Contract(_))));
    }

    proptest! {
        #[test]
        fn pdj_is_monotone(errs in prop::collection::vec(0.0f64..300.0, 1..60)) {
            let preds: Vec<Vec<Vec3>> = errs.iter().map(|&e| vec![[e, 0.0, 0.0]]).collect();
            let truth = vec![vec![[0.0; 3]]; errs.len()];
            let curve = pdj_curve(&preds, &truth, &default_pdj_thresholds()).unwrap();
            prop_assert!(curve.windows(2).all(|w| w[0] <= w[1]));
        }
    }
}
