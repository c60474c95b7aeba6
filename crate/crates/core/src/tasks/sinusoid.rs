use crate::numkit::{Mat, Rng};
use crate::synapse::RegressionData;

pub const AMPLITUDE_RANGE: (f64, f64) = (0.1, 5.0);
pub const PHASE_RANGE: (f64, f64) = (0.0, std::f64::consts::PI);
pub const X_RANGE: (f64, f64) = (-5.0, 5.0);

/// One sinusoid `y = A·sin(x + p)` with 10 learn and 10 eval samples.
#[derive(Debug, Clone, PartialEq)]
pub struct SinusoidTask {
    pub amplitude: f64,
    pub phase: f64,
    pub learn_x: Vec<f64>,
    pub learn_y: Vec<f64>,
    pub eval_x: Vec<f64>,
    pub eval_y: Vec<f64>,
}

impl SinusoidTask {
    pub const SHOTS: usize = 10;

    pub fn target(&self, x: f64) -> f64 {
        self.amplitude * (x + self.phase).sin()
    }

    pub fn regression_data(&self) -> RegressionData {
        let col = |v: &[f64]| Mat::from_vec(v.len(), 1, v.to_vec()).expect("column length");
        RegressionData {
            learn_x: col(&self.learn_x),
            learn_y: col(&self.learn_y),
            eval_x: col(&self.eval_x),
            eval_y: col(&self.eval_y),
        }
    }
}

pub fn sinusoid_sample(rng: &mut Rng) -> SinusoidTask {
    let amplitude = rng.uniform(AMPLITUDE_RANGE.0, AMPLITUDE_RANGE.1);
    let phase = rng.uniform(PHASE_RANGE.0, PHASE_RANGE.1);
    let draw = |rng: &mut Rng| {
        let x: Vec<f64> = (0..SinusoidTask::SHOTS).map(|_| rng.uniform(X_RANGE.0, X_RANGE.1)).collect();
        let y = x.iter().map(|x| amplitude * (x + phase).sin()).collect();
        (x, y)
    };
    let (learn_x, learn_y) = draw(rng);
    let (eval_x, eval_y) = draw(rng);
    SinusoidTask {
        amplitude,
        phase,
        learn_x,
        learn_y,
        eval_x,
        eval_y,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::stats::mean;

    #[test]
    fn moments_and_ranges() {
        let mut rng = Rng::new(0);
        let tasks: Vec<_> = (0..10_000).map(|_| sinusoid_sample(&mut rng)).collect();
        let a: Vec<f64> = tasks.iter().map(|t| t.amplitude).collect();
        let p: Vec<f64> = tasks.iter().map(|t| t.phase).collect();
        assert!((mean(&a) - 2.55).abs() < 0.05);
        assert!((mean(&p) - std::f64::consts::FRAC_PI_2).abs() < 0.03);
        for t in &tasks {
            assert!((0.1..=5.0).contains(&t.amplitude));
            assert_eq!(t.learn_x.len() + t.eval_x.len(), 20);
            assert!(t.learn_x.iter().chain(&t.eval_x).all(|x| (-5.0..=5.0).contains(x)));
        }
    }

    #[test]
    fn deterministic_and_consistent() {
        let a = sinusoid_sample(&mut Rng::new(7));
        assert_eq!(a, sinusoid_sample(&mut Rng::new(7)));
        for (x, y) in a.eval_x.iter().zip(&a.eval_y) {
            assert_eq!(a.target(*x), *y);
        }
    }
}
