//! Learning-rate schedule and the dev-BLEU stopping rule.

use super::train::TrajectoryPoint;

/// Linear warmup followed by inverse square root decay:
/// `base_lr * min(step / warmup, 1) * max(step, warmup)^-0.5`.
pub fn lr_schedule(step: u64, base_lr: f64, warmup_steps: u64) -> f64 {
    debug_assert!(step >= 1, "steps count from 1");
    let s = step.max(1) as f64;
    let w = warmup_steps.max(1) as f64;
    base_lr * (s / w).min(1.0) / libm::sqrt(s.max(w))
}

/// True when training has run at least `min_steps` (local) steps and the
/// best dev BLEU inside the most recent `ceil(window_frac * n)` evaluations
/// does not exceed the best before that window by more than `rel_threshold`
/// relative. With nothing before the window there is no reference and the
/// answer is false.
pub fn early_stop(trajectory: &[TrajectoryPoint], rel_threshold: f64, window_frac: f64, min_steps: u64) -> bool {
    let Some(last) = trajectory.last() else {
        return false;
    };
    if last.step < min_steps {
        return false;
    }
    let scores: alloc::vec::Vec<f64> = trajectory.iter().map(|p| p.bleu).collect();
    stop_on_scores(&scores, rel_threshold, window_frac)
}

pub(crate) fn stop_on_scores(scores: &[f64], rel_threshold: f64, window_frac: f64) -> bool {
    let n = scores.len();
    let window = (libm::ceil(window_frac * n as f64) as usize).clamp(1, n);
    let split = n - window;
    if split == 0 {
        return false;
    }
    let before = scores[..split].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let recent = scores[split..].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    recent <= before * (1.0 + rel_threshold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;

    fn traj(scores: &[f64], spacing: u64) -> Vec<TrajectoryPoint> {
        scores
            .iter()
            .enumerate()
            .map(|(i, &b)| TrajectoryPoint { step: i as u64 * spacing, bleu: b, ..TrajectoryPoint::default() })
            .collect()
    }

    #[test]
    fn closed_form_values() {
        let peak = lr_schedule(8000, 1.0, 8000);
        assert!((peak - 0.011180339887498949).abs() < 1e-15);
        let first = lr_schedule(1, 1.0, 8000);
        let expect = (1.0 / 8000.0) * 8000f64.powf(-0.5);
        assert!(((first - expect) / expect).abs() < 1e-12);
        let late = lr_schedule(32000, 1.0, 8000);
        assert!(((late - peak / 2.0) / late).abs() < 1e-12);
    }

    #[test]
    fn schedule_shape() {
        let mut prev = 0.0;
        for s in 1..=400 {
            let lr = lr_schedule(s, 0.5, 400);
            assert!(lr >= prev);
            prev = lr;
        }
        for s in 401..2000 {
            let lr = lr_schedule(s, 0.5, 400);
            assert!(lr <= prev);
            prev = lr;
        }
    }

    #[test]
    fn stopping_rule() {
        let rising: Vec<f64> = (0..20).map(|i| i as f64).collect();
        assert!(!early_stop(&traj(&rising, 100), 0.005, 0.5, 0));
        assert!(early_stop(&traj(&[10.0; 20], 100), 0.005, 0.5, 1000));
        let mut small_gain = [10.0; 20];
        small_gain[19] = 10.04;
        assert!(early_stop(&traj(&small_gain, 100), 0.005, 0.5, 1000));
        let mut big_gain = [10.0; 20];
        big_gain[19] = 10.06;
        assert!(!early_stop(&traj(&big_gain, 100), 0.005, 0.5, 1000));
        // Flat, but not yet at min_steps.
        assert!(!early_stop(&traj(&[10.0; 5], 100), 0.005, 0.5, 1000));
        assert!(!early_stop(&traj(&[10.0], 100), 0.005, 1.0, 0));
        assert!(!early_stop(&[], 0.005, 0.5, 0));
    }
}
