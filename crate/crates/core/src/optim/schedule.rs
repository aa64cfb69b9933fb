use crate::{Error, Result};

/// Step decay: `lr = base · gamma^⌊epoch / step_size⌋`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub gamma: f64,
    pub step_size: usize,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            gamma: 0.1,
            step_size: 7,
        }
    }
}

impl LrSchedule {
    pub fn new(gamma: f64, step_size: usize) -> Result<Self> {
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "lr decay gamma {gamma} must lie in (0, 1]"
            )));
        }
        if step_size == 0 {
            return Err(Error::InvalidArgument(
                "lr decay step size must be >= 1".into(),
            ));
        }
        Ok(Self { gamma, step_size })
    }

    pub fn constant() -> Self {
        Self {
            gamma: 1.0,
            step_size: 1,
        }
    }

    pub fn lr_at(&self, epoch: usize, base_lr: f64) -> f64 {
        apply_lr_schedule(epoch, self, base_lr)
    }
}

pub fn apply_lr_schedule(epoch: usize, schedule: &LrSchedule, base_lr: f64) -> f64 {
    let k = (epoch / schedule.step_size.max(1)) as i32;
    base_lr * schedule.gamma.powi(k)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_decay_examples() {
        let s = LrSchedule::default();
        assert_eq!(s.lr_at(0, 0.5), 0.5);
        assert_eq!(s.lr_at(6, 0.5), 0.5);
        assert!((s.lr_at(7, 0.5) - 0.05).abs() < 1e-15);
        assert!((s.lr_at(14, 1.0) - 0.01).abs() < 1e-15);
        let c = LrSchedule::new(1.0, 7).unwrap();
        assert_eq!(c.lr_at(10_000, 0.3), 0.3);
        assert!(LrSchedule::new(0.0, 7).is_err());
        assert!(LrSchedule::new(1.5, 7).is_err());
        assert!(LrSchedule::new(0.5, 0).is_err());
    }
}
