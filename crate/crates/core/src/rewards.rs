//! Rule-based GRPO rewards, group-relative advantages and the clipped surrogate.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    bidirectional_mean_distance, discrete_frechet, resample_polyline, GeometryError, Point, Polygon,
};
use crate::metrics::inside_fraction;

/// Rollouts sampled per prompt.
pub const GROUP_SIZE: usize = 5;
/// Lower clip offset: ratios below `1 - 0.2` are clipped.
pub const CLIP_EPS_LOW: f64 = 0.2;
/// Upper clip offset: ratios above `1 + 0.28` are clipped.
pub const CLIP_EPS_HIGH: f64 = 0.28;
pub const KL_BETA: f64 = 0.02;
/// Stabilizer added to the group standard deviation.
pub const ADVANTAGE_EPS: f64 = 1e-4;

pub const DEFAULT_LAMBDA_TRAJ: f64 = 1.0;
pub const DEFAULT_LAMBDA_AFF: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RewardError {
    #[error("a group needs at least two rewards, got {0}")]
    GroupTooSmall(usize),
    #[error("input lengths differ: {ratios} ratios, {advantages} advantages, {kl} KL terms")]
    LengthMismatch {
        ratios: usize,
        advantages: usize,
        kl: usize,
    },
    #[error("importance ratio {value} at index {index} is not positive")]
    NonPositiveRatio { index: usize, value: f64 },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// `exp(-λ · DFD)` over both paths resampled to `n_resample` points.
pub fn reward_trajectory(
    pred: &[Point],
    truth: &[Point],
    lambda_traj: f64,
    n_resample: usize,
) -> Result<f64, RewardError> {
    let p = resample_polyline(pred, n_resample)?;
    let g = resample_polyline(truth, n_resample)?;
    let d = discrete_frechet(&p, &g)?;
    Ok((-lambda_traj * d).exp())
}

/// `exp(-λ · D_bidir)` with the bidirectional mean Euclidean distance.
pub fn reward_affordance(
    pred: &[Point],
    truth: &[Point],
    lambda_aff: f64,
) -> Result<f64, RewardError> {
    Ok((-lambda_aff * bidirectional_mean_distance(pred, truth)?).exp())
}

/// Fraction of predicted points inside the truth polygon.
pub fn reward_area(pred: &[Point], truth: &Polygon) -> Result<f64, RewardError> {
    Ok(inside_fraction(pred, truth)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardGroup {
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
    pub epsilon_std: f64,
}

/// `A_i = (r_i - mean) / (std + ε)` with the population standard deviation.
pub fn group_advantages(rewards: &[f64], epsilon_std: f64) -> Result<RewardGroup, RewardError> {
    let g = rewards.len();
    if g < 2 {
        return Err(RewardError::GroupTooSmall(g));
    }
    let advantages = if rewards.iter().all(|&r| r == rewards[0]) {
        vec![0.0; g]
    } else {
        let n = g as f64;
        let mean = rewards.iter().sum::<f64>() / n;
        let mut centered: Vec<f64> = rewards.iter().map(|r| r - mean).collect();
        // second pass removes the rounding residue of the first mean
        let residue = centered.iter().sum::<f64>() / n;
        centered.iter_mut().for_each(|c| *c -= residue);
        let std = (centered.iter().map(|c| c * c).sum::<f64>() / n).sqrt();
        let denom = std + epsilon_std;
        centered.iter().map(|c| c / denom).collect()
    };
    Ok(RewardGroup {
        rewards: rewards.to_vec(),
        advantages,
        epsilon_std,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateInputs {
    pub ratios: Vec<f64>,
    pub advantages: Vec<f64>,
    pub kl_terms: Vec<f64>,
    pub eps_low: f64,
    pub eps_high: f64,
    pub beta: f64,
}

impl SurrogateInputs {
    /// Inputs with the default clip range and KL coefficient.
    pub fn new(ratios: Vec<f64>, advantages: Vec<f64>, kl_terms: Vec<f64>) -> Self {
        Self {
            ratios,
            advantages,
            kl_terms,
            eps_low: CLIP_EPS_LOW,
            eps_high: CLIP_EPS_HIGH,
            beta: KL_BETA,
        }
    }

    pub fn clip_interval(&self) -> (f64, f64) {
        (1.0 - self.eps_low, 1.0 + self.eps_high)
    }
}

/// Mean over the group of `min(ρA, clip(ρ, 1-ε_low, 1+ε_high)·A) - β·KL`.
pub fn grpo_surrogate(inp: &SurrogateInputs) -> Result<f64, RewardError> {
    let g = inp.ratios.len();
    if inp.advantages.len() != g || inp.kl_terms.len() != g {
        return Err(RewardError::LengthMismatch {
            ratios: g,
            advantages: inp.advantages.len(),
            kl: inp.kl_terms.len(),
        });
    }
    if let Some((index, &value)) = inp
        .ratios
        .iter()
        .enumerate()
        .find(|(_, &r)| r.is_nan() || r <= 0.0)
    {
        return Err(RewardError::NonPositiveRatio { index, value });
    }
    if g == 0 {
        return Ok(0.0);
    }
    let (lo, hi) = inp.clip_interval();
    let total: f64 = inp
        .ratios
        .iter()
        .zip(&inp.advantages)
        .zip(&inp.kl_terms)
        .map(|((&rho, &adv), &kl)| {
            let unclipped = rho * adv;
            let clipped = rho.clamp(lo, hi) * adv;
            unclipped.min(clipped) - inp.beta * kl
        })
        .sum();
    Ok(total / g as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pt(x: f64, y: f64) -> Point {
        Point::new(x, y)
    }

    #[test]
    fn trajectory_reward() {
        let path = [pt(0.1, 0.1), pt(0.4, 0.5), pt(0.9, 0.2)];
        assert_eq!(reward_trajectory(&path, &path, 1.0, 15).unwrap(), 1.0);
        let a = [pt(0.0, 0.0), pt(0.8, 0.0)];
        let b = [pt(0.0, 0.2), pt(0.8, 0.2)];
        let r = reward_trajectory(&a, &b, 1.0, 15).unwrap();
        assert!((r - 0.818_730_753_077_981_9).abs() < 1e-12);
        let mut last = r;
        for lambda in [2.0, 5.0, 20.0, 100.0] {
            let r = reward_trajectory(&a, &b, lambda, 15).unwrap();
            assert!(r < last);
            last = r;
        }
        assert!(last < 1e-8);
        assert!(reward_trajectory(&[], &b, 1.0, 15).is_err());
    }

    #[test]
    fn trajectory_reward_custom_resolution() {
        let a = [pt(0.0, 0.0), pt(1.0, 0.0)];
        let b = [pt(0.0, 0.1), pt(1.0, 0.1)];
        let r = reward_trajectory(&a, &b, 1.0, 4).unwrap();
        assert!((r - (-0.1f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn affordance_reward() {
        let p = [pt(0.3, 0.3), pt(0.5, 0.1)];
        assert_eq!(reward_affordance(&p, &p, 1.0).unwrap(), 1.0);
        let r = reward_affordance(&[pt(0.0, 0.0)], &[pt(1.0, 0.0)], 1.0).unwrap();
        assert!((r - (-1.0f64).exp()).abs() <= 1e-12);
        let q = [pt(0.9, 0.9)];
        assert_eq!(
            reward_affordance(&p, &q, 1.3).unwrap(),
            reward_affordance(&q, &p, 1.3).unwrap()
        );
    }

    #[test]
    fn area_reward() {
        let sq =
            Polygon::new(vec![pt(0.0, 0.0), pt(0.5, 0.0), pt(0.5, 0.5), pt(0.0, 0.5)]).unwrap();
        assert_eq!(
            reward_area(&[pt(0.1, 0.1), pt(0.2, 0.2)], &sq).unwrap(),
            1.0
        );
        let quarter = [pt(0.1, 0.1), pt(0.9, 0.1), pt(0.9, 0.9), pt(0.6, 0.1)];
        assert_eq!(reward_area(&quarter, &sq).unwrap(), 0.25);
        assert_eq!(reward_area(&[pt(0.9, 0.9)], &sq).unwrap(), 0.0);
        assert!(matches!(
            reward_area(&[], &sq),
            Err(RewardError::Geometry(GeometryError::EmptyPointSet))
        ));
    }

    #[test]
    fn advantages_one_winner() {
        let g = group_advantages(&[1.0, 0.0, 0.0, 0.0, 0.0], 1e-4).unwrap();
        // oracle: mean 0.2, population std 0.4
        let denom = 0.4 + 1e-4;
        assert!((g.advantages[0] - 0.8 / denom).abs() < 1e-12);
        for a in &g.advantages[1..] {
            assert!((a + 0.2 / denom).abs() < 1e-12);
        }
        assert!((g.advantages[0] - 1.9995).abs() < 1e-4);
        assert!((g.advantages[1] + 0.49988).abs() < 1e-5);
    }

    #[test]
    fn advantages_pair_and_ties() {
        let g = group_advantages(&[1.0, 0.0], 1e-4).unwrap();
        assert!((g.advantages[0] - 0.5 / (0.5 + 1e-4)).abs() < 1e-12);
        assert!((g.advantages[1] + 0.5 / (0.5 + 1e-4)).abs() < 1e-12);
        let tied = group_advantages(&[0.3; 5], 1e-4).unwrap();
        assert_eq!(tied.advantages, vec![0.0; 5]);
        assert_eq!(
            group_advantages(&[1.0], 1e-4),
            Err(RewardError::GroupTooSmall(1))
        );
    }

    #[test]
    fn surrogate_clip_branches() {
        let mut inp = SurrogateInputs::new(vec![2.0], vec![1.0], vec![0.0]);
        inp.beta = 0.0;
        assert!((grpo_surrogate(&inp).unwrap() - 1.28).abs() < 1e-15);
        inp.ratios = vec![0.5];
        inp.advantages = vec![-1.0];
        assert!((grpo_surrogate(&inp).unwrap() + 0.8).abs() < 1e-15);
    }

    #[test]
    fn surrogate_defaults_and_kl() {
        let inp = SurrogateInputs::new(vec![1.0; 2], vec![0.5, -0.5], vec![1.0, 3.0]);
        assert_eq!(inp.clip_interval(), (0.8, 1.28));
        assert_eq!(inp.beta, 0.02);
        assert!((grpo_surrogate(&inp).unwrap() + 0.04).abs() < 1e-15);
    }

    #[test]
    fn surrogate_errors() {
        let inp = SurrogateInputs::new(vec![1.0, 1.0], vec![0.0], vec![0.0, 0.0]);
        assert!(matches!(
            grpo_surrogate(&inp),
            Err(RewardError::LengthMismatch { .. })
        ));
        let inp = SurrogateInputs::new(vec![1.0, 0.0], vec![0.0; 2], vec![0.0; 2]);
        assert_eq!(
            grpo_surrogate(&inp),
            Err(RewardError::NonPositiveRatio {
                index: 1,
                value: 0.0
            })
        );
    }

    #[test]
    fn surrogate_sweep_is_monotone_then_flat() {
        let mut prev = f64::NEG_INFINITY;
        for k in 1..=200 {
            let rho = k as f64 / 100.0;
            let mut inp = SurrogateInputs::new(vec![rho], vec![0.7], vec![0.0]);
            inp.beta = 0.0;
            let v = grpo_surrogate(&inp).unwrap();
            assert!(v >= prev);
            if rho >= 1.28 {
                assert!((v - 1.28 * 0.7).abs() < 1e-15);
            }
            prev = v;
        }
    }

    proptest! {
        #[test]
        fn advantages_sum_to_zero(rewards in proptest::collection::vec(0.0f64..=1.0, 2..12)) {
            let g = group_advantages(&rewards, ADVANTAGE_EPS).unwrap();
            let sum: f64 = g.advantages.iter().sum();
            prop_assert!(sum.abs() <= 1e-12 * rewards.len() as f64);
            let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
            for (r, a) in rewards.iter().zip(&g.advantages) {
                if (r - mean).abs() > 1e-12 {
                    prop_assert_eq!(a.signum(), (r - mean).signum());
                }
            }
        }

        #[test]
        fn clipped_and_unclipped_agree_inside_interval(rho in 0.8f64..=1.28, adv in -3.0f64..3.0) {
            let mut inp = SurrogateInputs::new(vec![rho], vec![adv], vec![0.0]);
            inp.beta = 0.0;
            prop_assert_eq!(grpo_surrogate(&inp).unwrap(), rho * adv);
        }

        #[test]
        fn rewards_stay_in_unit_interval(
            p in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..6),
            g in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..6),
        ) {
            let p: Vec<Point> = p.into_iter().map(|(x, y)| pt(x, y)).collect();
            let g: Vec<Point> = g.into_iter().map(|(x, y)| pt(x, y)).collect();
            let t = reward_trajectory(&p, &g, 1.0, 15).unwrap();
            let a = reward_affordance(&p, &g, 1.0).unwrap();
            prop_assert!(t > 0.0 && t <= 1.0);
            prop_assert!(a > 0.0 && a <= 1.0);
        }
    }
}
