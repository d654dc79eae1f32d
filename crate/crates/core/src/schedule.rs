use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum ScheduleShape {
    Constant,
    /// Multiply by `factor` at each listed iteration.
    StepDrop { drops: Vec<u64>, factor: f64 },
    /// Linear ramp over `warmup` iterations, then step drops.
    WarmupStepDrop { warmup: u64, drops: Vec<u64>, factor: f64 },
    /// Linear interpolation from the base rate at 0 to `end` at T*.
    LinearDecay { end: f64 },
}

/// Learning rate as a function of the global iteration over [0, T*).
#[derive(Debug, Clone, PartialEq)]
pub struct LrSchedule {
    pub base: f64,
    pub total_iterations: u64,
    pub shape: ScheduleShape,
}

impl LrSchedule {
    pub fn constant(base: f64, total_iterations: u64) -> Self {
        LrSchedule {
            base,
            total_iterations,
            shape: ScheduleShape::Constant,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |why: &str| Err(Error::contract(format!("invalid schedule {self:?}: {why}")));
        if !(self.base > 0.0 && self.base.is_finite()) {
            return fail("base rate must be positive");
        }
        if self.total_iterations == 0 {
            return fail("T* must be positive");
        }
        let check_drops = |drops: &[u64], factor: f64| drops.windows(2).all(|w| w[0] < w[1]) && factor > 0.0;
        match &self.shape {
            ScheduleShape::Constant => Ok(()),
            ScheduleShape::StepDrop { drops, factor } => {
                if check_drops(drops, *factor) {
                    Ok(())
                } else {
                    fail("drops must ascend and factor must be positive")
                }
            }
            ScheduleShape::WarmupStepDrop { warmup, drops, factor } => {
                if *warmup == 0 || *warmup > self.total_iterations {
                    fail("warmup must lie in [1, T*]")
                } else if !check_drops(drops, *factor) {
                    fail("drops must ascend and factor must be positive")
                } else {
                    Ok(())
                }
            }
            ScheduleShape::LinearDecay { end } => {
                if *end > 0.0 {
                    Ok(())
                } else {
                    fail("end rate must be positive")
                }
            }
        }
    }

    fn dropped(&self, iteration: u64, drops: &[u64], factor: f64) -> f64 {
        let n = drops.iter().take_while(|&&d| d <= iteration).count();
        self.base * factor.powi(n as i32)
    }
}

/// Rate for global iteration `iteration`. Warmup ramps linearly as
/// base · i / warmup, using i = 1 for the first iteration so the rate is
/// never zero.
pub fn lr_at(schedule: &LrSchedule, iteration: u64) -> Result<f64> {
    if iteration >= schedule.total_iterations {
        return Err(Error::contract(format!(
            "iteration {iteration} outside [0, {})",
            schedule.total_iterations
        )));
    }
    Ok(match &schedule.shape {
        ScheduleShape::Constant => schedule.base,
        ScheduleShape::StepDrop { drops, factor } => schedule.dropped(iteration, drops, *factor),
        ScheduleShape::WarmupStepDrop { warmup, drops, factor } => {
            if iteration < *warmup {
                schedule.base * iteration.max(1) as f64 / *warmup as f64
            } else {
                schedule.dropped(iteration, drops, *factor)
            }
        }
        ScheduleShape::LinearDecay { end } => {
            let frac = iteration as f64 / schedule.total_iterations as f64;
            schedule.base + (end - schedule.base) * frac
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_drop_at_60k() {
        let s = LrSchedule {
            base: 0.1,
            total_iterations: 112_000,
            shape: ScheduleShape::StepDrop {
                drops: vec![56_000, 84_000],
                factor: 0.1,
            },
        };
        assert_eq!(lr_at(&s, 55_999).unwrap(), 0.1);
        assert!((lr_at(&s, 60_000).unwrap() - 0.01).abs() < 1e-17);
        assert!((lr_at(&s, 84_000).unwrap() - 0.001).abs() < 1e-18);
    }

    #[test]
    fn constant_adam_rate() {
        let s = LrSchedule::constant(12e-4, 50_000);
        assert_eq!(lr_at(&s, 0).unwrap(), 0.0012);
        assert_eq!(lr_at(&s, 49_999).unwrap(), 0.0012);
        assert!(matches!(lr_at(&s, 50_000), Err(Error::Contract(_))));
    }

    #[test]
    fn warmup_is_linear() {
        let s = LrSchedule {
            base: 0.1,
            total_iterations: 30_000,
            shape: ScheduleShape::WarmupStepDrop {
                warmup: 10_000,
                drops: vec![20_000],
                factor: 0.1,
            },
        };
        assert!((lr_at(&s, 5_000).unwrap() - 0.05).abs() < 1e-17);
        assert!(lr_at(&s, 0).unwrap() > 0.0);
        assert_eq!(lr_at(&s, 10_000).unwrap(), 0.1);
        assert!((lr_at(&s, 25_000).unwrap() - 0.01).abs() < 1e-17);
    }

    #[test]
    fn linear_decay_and_validation() {
        let s = LrSchedule {
            base: 1.0,
            total_iterations: 10,
            shape: ScheduleShape::LinearDecay { end: 0.5 },
        };
        assert!(s.validate().is_ok());
        assert_eq!(lr_at(&s, 0).unwrap(), 1.0);
        assert!((lr_at(&s, 5).unwrap() - 0.75).abs() < 1e-15);
        assert!((0..10).all(|i| lr_at(&s, i).unwrap() > 0.0));
        assert!(LrSchedule::constant(0.0, 5).validate().is_err());
        assert!(LrSchedule {
            base: 1.0,
            total_iterations: 10,
            shape: ScheduleShape::StepDrop {
                drops: vec![5, 3],
                factor: 0.1
            }
        }
        .validate()
        .is_err());
    }
}
