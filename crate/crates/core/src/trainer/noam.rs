use crate::error::{Error, Result};

/// `scale * d_model^-0.5 * min(step^-0.5, step * warmup^-1.5)`.
pub fn noam_lr(step: u64, d_model: usize, warmup_steps: u64, scale: f64) -> Result<f64> {
    if step == 0 {
        return Err(Error::invalid("noam schedule is defined from step 1"));
    }
    if warmup_steps == 0 || d_model == 0 {
        return Err(Error::invalid("warmup_steps and d_model must be >= 1"));
    }
    let step = step as f64;
    let warmup = warmup_steps as f64;
    let decay = step.powf(-0.5);
    let ramp = step * warmup.powf(-1.5);
    Ok(scale * (d_model as f64).powf(-0.5) * decay.min(ramp))
}
