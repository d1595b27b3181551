use crate::error::{Error, Result};

/// Uniform time grid on [tau, t_end] with `steps` steps of width `dt`.
/// `t(steps)` returns `t_end` exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    tau: f64,
    t_end: f64,
    steps: usize,
    dt: f64,
}

impl TimeGrid {
    pub fn new(tau: f64, t_end: f64, steps: usize) -> Result<Self> {
        if !tau.is_finite() || !t_end.is_finite() {
            return Err(Error::Argument("time grid endpoints must be finite".into()));
        }
        if tau < 0.0 {
            return Err(Error::Argument(format!("start time must be >= 0, got {tau}")));
        }
        if t_end <= tau {
            return Err(Error::Argument(format!(
                "terminal time must exceed start time, got [{tau}, {t_end}]"
            )));
        }
        if steps == 0 {
            return Err(Error::Argument("number of steps must be positive".into()));
        }
        let dt = (t_end - tau) / steps as f64;
        if dt <= 0.0 {
            return Err(Error::Argument("interval too short for the requested steps".into()));
        }
        Ok(Self { tau, t_end, steps, dt })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Grid time at level `k`; the terminal level maps to `t_end` exactly.
    pub fn t(&self, k: usize) -> f64 {
        debug_assert!(k <= self.steps);
        if k == self.steps {
            self.t_end
        } else {
            self.tau + k as f64 * self.dt
        }
    }
}
