use crate::error::{Error, Result};
use crate::numkit::Rng;

pub const N_ACTIONS: usize = 5;

const LOW_MEAN: f64 = 1.0;
const SAFE_MEAN: f64 = 1.2;
const HIGH_MEAN: f64 = 50.0;
const NOISE_STD: f64 = 0.01;

/// Wheel bandit with radius `delta`. Actions are numbered 1 to 5.
///
/// Inside the radius action 5 pays 1.2 and the others 1.0. Outside it the
/// action matching the context's quadrant pays 50 (1 upper right, 2 lower
/// right, 3 upper left, 4 lower left), action 5 still pays 1.2 and the rest
/// 1.0. Points on an axis count as right (`x = 0`) and upper (`y = 0`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WheelTask {
    pub delta: f64,
}

impl WheelTask {
    pub fn new(delta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&delta) {
            return Err(Error::Domain(format!("wheel radius must lie in [0, 1], got {delta}")));
        }
        Ok(Self { delta })
    }

    /// Uniform draw from the unit disc.
    pub fn sample_context(rng: &mut Rng) -> [f64; 2] {
        let r = rng.uniform(0.0, 1.0).sqrt();
        let a = rng.uniform(0.0, std::f64::consts::TAU);
        [r * a.cos(), r * a.sin()]
    }

    pub fn in_low_region(&self, ctx: [f64; 2]) -> bool {
        ctx[0].hypot(ctx[1]) <= self.delta
    }

    fn quadrant_action(ctx: [f64; 2]) -> usize {
        match (ctx[0] >= 0.0, ctx[1] >= 0.0) {
            (true, true) => 1,
            (true, false) => 2,
            (false, true) => 3,
            (false, false) => 4,
        }
    }

    pub fn optimal_action(&self, ctx: [f64; 2]) -> usize {
        if self.in_low_region(ctx) {
            5
        } else {
            Self::quadrant_action(ctx)
        }
    }

    pub fn mean_reward(&self, ctx: [f64; 2], action: usize) -> Result<f64> {
        check_action(action)?;
        Ok(if action == 5 {
            SAFE_MEAN
        } else if !self.in_low_region(ctx) && action == Self::quadrant_action(ctx) {
            HIGH_MEAN
        } else {
            LOW_MEAN
        })
    }

    pub fn optimal_mean(&self, ctx: [f64; 2]) -> f64 {
        if self.in_low_region(ctx) {
            SAFE_MEAN
        } else {
            HIGH_MEAN
        }
    }

    /// Noisy reward of `action` at `ctx`.
    pub fn reward(&self, ctx: [f64; 2], action: usize, rng: &mut Rng) -> Result<f64> {
        Ok(self.mean_reward(ctx, action)? + rng.normal(0.0, NOISE_STD))
    }
}

fn check_action(action: usize) -> Result<()> {
    if (1..=N_ACTIONS).contains(&action) {
        Ok(())
    } else {
        Err(Error::contract(format!("wheel action must be in 1..=5, got {action}")))
    }
}

/// Noisy reward and the regret of `action` (optimal mean minus chosen mean).
pub fn wheel_step(task: &WheelTask, ctx: [f64; 2], action: usize, rng: &mut Rng) -> Result<(f64, f64)> {
    let r = task.reward(ctx, action, rng)?;
    Ok((r, task.optimal_mean(ctx) - task.mean_reward(ctx, action)?))
}

/// Expected regret of a uniformly random action at `ctx`.
pub fn random_regret_expectation(task: &WheelTask, ctx: [f64; 2]) -> f64 {
    let best = task.optimal_mean(ctx);
    (1..=N_ACTIONS)
        .map(|a| best - task.mean_reward(ctx, a).expect("valid action"))
        .sum::<f64>()
        / N_ACTIONS as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reward_table() {
        let t = WheelTask::new(0.5).unwrap();
        let mut rng = Rng::new(0);
        let (_, regret) = wheel_step(&t, [0.3, 0.0], 5, &mut rng).unwrap();
        assert_eq!(t.mean_reward([0.3, 0.0], 5).unwrap(), 1.2);
        assert_eq!(regret, 0.0);
        assert_eq!(t.mean_reward([0.8, 0.1], 1).unwrap(), 50.0);
        assert_eq!(wheel_step(&t, [0.8, 0.1], 1, &mut rng).unwrap().1, 0.0);
        assert_eq!(wheel_step(&t, [0.8, 0.1], 3, &mut rng).unwrap().1, 49.0);
        assert!(wheel_step(&t, [0.8, 0.1], 0, &mut rng).is_err());
        assert!(wheel_step(&t, [0.8, 0.1], 6, &mut rng).is_err());
    }

    #[test]
    fn quadrants_and_ties() {
        let t = WheelTask::new(0.1).unwrap();
        assert_eq!(t.optimal_action([0.5, 0.5]), 1);
        assert_eq!(t.optimal_action([0.5, -0.5]), 2);
        assert_eq!(t.optimal_action([-0.5, 0.5]), 3);
        assert_eq!(t.optimal_action([-0.5, -0.5]), 4);
        assert_eq!(t.optimal_action([0.0, 0.5]), 1);
        assert_eq!(t.optimal_action([0.0, -0.5]), 2);
        assert_eq!(t.optimal_action([-0.5, 0.0]), 3);
        assert_eq!(t.optimal_action([0.05, 0.0]), 5);
    }

    #[test]
    fn random_regret_values() {
        let t = WheelTask::new(0.5).unwrap();
        assert!((random_regret_expectation(&t, [0.1, 0.1]) - 0.16).abs() < 1e-12);
        assert!((random_regret_expectation(&t, [0.7, -0.2]) - 39.16).abs() < 1e-12);
        let mut rng = Rng::new(3);
        let n = 200_000;
        let avg = (0..n)
            .map(|_| random_regret_expectation(&t, WheelTask::sample_context(&mut rng)))
            .sum::<f64>()
            / n as f64;
        assert!((avg - 29.41).abs() < 0.15, "{avg}");
    }

    #[test]
    fn contexts_in_disc() {
        let mut rng = Rng::new(1);
        for _ in 0..1000 {
            let c = WheelTask::sample_context(&mut rng);
            assert!(c[0].hypot(c[1]) <= 1.0);
        }
        assert!(WheelTask::new(1.5).is_err());
    }
}
