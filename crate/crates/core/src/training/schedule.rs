use crate::error::{Error, Result};
use crate::memory::MemoryStage;

/// Fraction of steps spent on the linear learning-rate ramp.
pub const LR_WARMUP_FRACTION: f64 = 0.1;

/// Linear ramp from 0 to `base_lr` over the first 10% of steps, then linear
/// decay to 0 at `total_steps`.
pub fn lr_at(step: usize, total_steps: usize, base_lr: f64) -> Result<f64> {
    lr_at_with_warmup(step, total_steps, base_lr, LR_WARMUP_FRACTION)
}

/// [`lr_at`] with a configurable ramp fraction. The ramp length is
/// `round(fraction · total_steps)` whole steps.
pub fn lr_at_with_warmup(step: usize, total_steps: usize, base_lr: f64, fraction: f64) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::Schedule("total_steps must be positive".into()));
    }
    if step > total_steps {
        return Err(Error::Schedule(format!(
            "step {step} is past total_steps {total_steps}"
        )));
    }
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Schedule(format!(
            "warm-up fraction {fraction} is outside [0, 1]"
        )));
    }
    let warmup = ((fraction * total_steps as f64).round() as usize).min(total_steps);
    if step < warmup {
        return Ok(base_lr * step as f64 / warmup as f64);
    }
    if step == warmup || warmup == total_steps {
        return Ok(base_lr);
    }
    Ok(base_lr * (total_steps - step) as f64 / (total_steps - warmup) as f64)
}

/// `Warmup` while `step < proportion · total_steps`, `Full` afterwards.
pub fn memory_stage(step: usize, total_steps: usize, proportion: f64) -> MemoryStage {
    if (step as f64) < proportion * total_steps as f64 {
        MemoryStage::Warmup
    } else {
        MemoryStage::Full
    }
}

/// Stage used for inference after `step` optimizer steps: memories whose
/// reads never activated during training stay bypassed.
pub fn inference_stage(step: usize, total_steps: usize, proportion: f64) -> MemoryStage {
    if proportion >= 1.0 {
        MemoryStage::Warmup
    } else {
        memory_stage(step.min(total_steps), total_steps, proportion)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ramp_and_decay() {
        assert_eq!(lr_at(0, 100, 5e-5).unwrap(), 0.0);
        assert_eq!(lr_at(10, 100, 5e-5).unwrap(), 5e-5);
        assert_eq!(lr_at(100, 100, 5e-5).unwrap(), 0.0);
        assert!((lr_at(5, 100, 1.0).unwrap() - 0.5).abs() < 1e-15);
        assert!((lr_at(55, 100, 1.0).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_total_is_error() {
        assert!(lr_at(0, 0, 1.0).is_err());
        assert!(lr_at(3, 2, 1.0).is_err());
    }

    #[test]
    fn stage_boundaries() {
        assert_eq!(memory_stage(0, 100, 0.0), MemoryStage::Full);
        assert_eq!(memory_stage(99, 100, 1.0), MemoryStage::Warmup);
        assert_eq!(memory_stage(39, 100, 0.4), MemoryStage::Warmup);
        assert_eq!(memory_stage(40, 100, 0.4), MemoryStage::Full);
        assert_eq!(inference_stage(100, 100, 1.0), MemoryStage::Warmup);
        assert_eq!(inference_stage(100, 100, 0.4), MemoryStage::Full);
    }
}
