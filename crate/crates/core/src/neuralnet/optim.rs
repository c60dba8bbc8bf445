//! Adam with decoupled weight decay and a piecewise-constant learning-rate
//! schedule keyed on step count.

/// Learning rate as a step function: `initial * decay^k` after the k-th
/// boundary has been crossed.
#[derive(Debug, Clone, PartialEq)]
pub struct LrSchedule {
    pub initial: f64,
    pub decay: f64,
    pub boundaries: Vec<u64>,
}

impl LrSchedule {
    /// Drops the rate by `decay` at each quarter of the training run.
    pub fn quarters(initial: f64, decay: f64, total_steps: u64) -> Self {
        let boundaries = if total_steps >= 4 {
            vec![total_steps / 4, total_steps / 2, 3 * total_steps / 4]
        } else {
            Vec::new()
        };
        LrSchedule {
            initial,
            decay,
            boundaries,
        }
    }

    pub fn constant(initial: f64) -> Self {
        LrSchedule {
            initial,
            decay: 1.0,
            boundaries: Vec::new(),
        }
    }

    pub fn at(&self, step: u64) -> f64 {
        let crossed = self.boundaries.iter().filter(|&&b| step >= b).count() as i32;
        self.initial * self.decay.powi(crossed)
    }
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPSILON: f64 = 1e-8;

/// Optimizer state: step count, first/second moments, schedule, and the
/// decoupled weight-decay coefficient.
#[derive(Debug, Clone)]
pub struct AdamState {
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
    pub schedule: LrSchedule,
    pub weight_decay: f64,
}

impl AdamState {
    pub fn new(param_len: usize, schedule: LrSchedule, weight_decay: f64) -> Self {
        AdamState {
            step: 0,
            m: vec![0.0; param_len],
            v: vec![0.0; param_len],
            schedule,
            weight_decay,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn learning_rate(&self) -> f64 {
        self.schedule.at(self.step)
    }

    /// One Adam update. Weight decay is decoupled: `theta -= lr * wd * theta`
    /// before the Adam delta, never folded into the gradient.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len(), "optimizer/parameter mismatch");
        assert_eq!(grads.len(), self.m.len());
        let lr = self.schedule.at(self.step);
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - BETA1.powi(t);
        let bc2 = 1.0 - BETA2.powi(t);
        let wd = self.weight_decay;
        for i in 0..params.len() {
            if wd != 0.0 {
                params[i] -= lr * wd * params[i];
            }
            let g = grads[i];
            self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * g;
            self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + EPSILON);
        }
    }
}
