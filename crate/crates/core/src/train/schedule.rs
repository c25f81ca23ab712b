use core::f64::consts::PI;

use num_traits::Float;

/// Ratio of the warmup starting rate to the base rate.
pub const WARMUP_START: f64 = 1.0 / 100.0;
/// Ratio of the cosine floor to the base rate.
pub const COSINE_FLOOR: f64 = 1.0 / 1000.0;

/// Learning rate at optimiser step `step`: linear warmup from `base/100` to
/// `base` over `warmup_steps`, then cosine decay to `base/1000` at
/// `total_steps`.
pub fn lr_at(step: usize, total_steps: usize, base: f64, warmup_steps: usize) -> f64 {
    if step < warmup_steps {
        let start = base * WARMUP_START;
        return start + (base - start) * step as f64 / warmup_steps as f64;
    }
    let end = base * COSINE_FLOOR;
    let span = total_steps.saturating_sub(warmup_steps);
    let progress = if span == 0 {
        1.0
    } else {
        ((step - warmup_steps) as f64 / span as f64).min(1.0)
    };
    end + 0.5 * (base - end) * (1.0 + Float::cos(PI * progress))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundaries() {
        assert_eq!(lr_at(0, 100, 0.1, 0), 0.1);
        let mid = lr_at(50, 100, 0.1, 0);
        assert!((mid - (0.1 + 0.1 * COSINE_FLOOR) / 2.0).abs() < 1e-15);
        assert!((lr_at(100, 100, 0.1, 0) - 0.1 * COSINE_FLOOR).abs() < 1e-15);
        assert!((lr_at(0, 100, 0.1, 10) - 0.1 * WARMUP_START).abs() < 1e-15);
        assert_eq!(lr_at(10, 100, 0.1, 10), 0.1);
    }
}
