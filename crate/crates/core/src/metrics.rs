//! Learning-curve post-processing and the three transfer metrics:
//! jumpstart, final improvement, and steps-to-threshold, each normalized
//! against the no-transfer reference curve.

use serde::{Deserialize, Serialize};

use crate::dqn::LearningCurve;
use crate::error::{Error, Result};

/// A moving-average filtered curve, step-annotated.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedCurve {
    pub steps: Vec<u64>,
    pub values: Vec<f64>,
}

impl SmoothedCurve {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Window bounds for a centered window of `width` at index `i`, clipped to
/// the curve: ceil((w-1)/2) points before, floor((w-1)/2) after.
fn window_bounds(i: usize, width: usize, len: usize) -> (usize, usize) {
    let before = width / 2; // ceil((w-1)/2)
    let after = (width - 1) / 2; // floor((w-1)/2)
    let lo = i.saturating_sub(before);
    let hi = (i + after).min(len - 1);
    (lo, hi)
}

/// Centered moving average with the window shrunk at the curve boundaries.
pub fn moving_average(steps: &[u64], values: &[f64], width: usize) -> Result<SmoothedCurve> {
    if values.is_empty() {
        return Err(Error::EmptyCurve);
    }
    if width == 0 {
        return Err(Error::InvalidConfig(
            "moving average width must be >= 1".into(),
        ));
    }
    debug_assert_eq!(steps.len(), values.len());
    let mut out = Vec::with_capacity(values.len());
    for i in 0..values.len() {
        let (lo, hi) = window_bounds(i, width, values.len());
        let n = (hi - lo + 1) as f64;
        out.push(values[lo..=hi].iter().sum::<f64>() / n);
    }
    Ok(SmoothedCurve {
        steps: steps.to_vec(),
        values: out,
    })
}

pub fn smooth_curve(curve: &LearningCurve, width: usize) -> Result<SmoothedCurve> {
    moving_average(&curve.steps(), &curve.means(), width)
}

fn population_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

/// Near-optimal performance: mu - sigma over a window of up to `window`
/// points centered on the curve's maximum (earliest on ties), clipped at
/// the curve ends.
pub fn near_optimal(curve: &SmoothedCurve, window: usize) -> Result<f64> {
    if curve.is_empty() {
        return Err(Error::EmptyCurve);
    }
    let mut argmax = 0;
    for (i, &v) in curve.values.iter().enumerate() {
        if v > curve.values[argmax] {
            argmax = i;
        }
    }
    let (lo, hi) = window_bounds(argmax, window.max(1), curve.len());
    let slice = &curve.values[lo..=hi];
    let mean = slice.iter().sum::<f64>() / slice.len() as f64;
    Ok(mean - population_std(slice))
}

/// Fractional jumpstart: (y - y_ref) / |y_ref| over the first smoothed
/// entries. Returns (normalized, raw difference); the normalized form is
/// None when the reference is exactly zero.
pub fn jumpstart(
    transfer: &SmoothedCurve,
    reference: &SmoothedCurve,
) -> Result<(Option<f64>, f64)> {
    if transfer.is_empty() || reference.is_empty() {
        return Err(Error::EmptyCurve);
    }
    let y = transfer.values[0];
    let y_ref = reference.values[0];
    let raw = y - y_ref;
    let normalized = if y_ref == 0.0 {
        None
    } else {
        Some(raw / y_ref.abs())
    };
    Ok((normalized, raw))
}

/// Fractional difference of near-optimal performances; None when the
/// reference near-optimal is exactly zero.
pub fn final_improvement(
    transfer: &SmoothedCurve,
    reference: &SmoothedCurve,
    window: usize,
) -> Result<Option<f64>> {
    let t = near_optimal(transfer, window)?;
    let r = near_optimal(reference, window)?;
    if r == 0.0 {
        return Ok(None);
    }
    Ok(Some((t - r) / r.abs()))
}

fn first_step_reaching(curve: &SmoothedCurve, threshold: f64) -> Option<u64> {
    curve
        .values
        .iter()
        .position(|&v| v >= threshold)
        .map(|i| curve.steps[i])
}

/// Ratio t / t_ref of first training steps at which each curve reaches the
/// reference's near-optimal threshold; None when the transfer curve never
/// reaches it.
pub fn steps_to_threshold(
    transfer: &SmoothedCurve,
    reference: &SmoothedCurve,
    window: usize,
) -> Result<Option<f64>> {
    let threshold = near_optimal(reference, window)?;
    let t_ref = first_step_reaching(reference, threshold).ok_or_else(|| {
        // mu - sigma never exceeds the max of its own window, so the
        // reference always crosses its own threshold.
        Error::Internal("reference curve below its own near-optimal threshold".into())
    })?;
    Ok(first_step_reaching(transfer, threshold).map(|t| t as f64 / t_ref as f64))
}

/// All transfer metrics for one (task, architecture) run against the
/// no-transfer reference, plus the raw intermediates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub task_index: usize,
    pub architecture: String,
    pub jumpstart: Option<f64>,
    pub jumpstart_raw: f64,
    pub final_improvement: Option<f64>,
    pub step_ratio: Option<f64>,
    pub first_transfer: f64,
    pub first_reference: f64,
    pub near_optimal_transfer: f64,
    pub near_optimal_reference: f64,
    pub threshold: f64,
    pub config_hash: String,
}

/// Metric extraction settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricConfig {
    pub smoothing_width: usize,
    pub near_optimal_window: usize,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            smoothing_width: 20,
            near_optimal_window: 100,
        }
    }
}

pub fn build_report(
    task_index: usize,
    architecture: &str,
    transfer_curve: &LearningCurve,
    reference_curve: &LearningCurve,
    cfg: &MetricConfig,
    config_hash: &str,
) -> Result<TransferReport> {
    let t = smooth_curve(transfer_curve, cfg.smoothing_width)?;
    let r = smooth_curve(reference_curve, cfg.smoothing_width)?;
    let (js, js_raw) = jumpstart(&t, &r)?;
    let fi = final_improvement(&t, &r, cfg.near_optimal_window)?;
    let ratio = steps_to_threshold(&t, &r, cfg.near_optimal_window)?;
    Ok(TransferReport {
        task_index,
        architecture: architecture.to_string(),
        jumpstart: js,
        jumpstart_raw: js_raw,
        final_improvement: fi,
        step_ratio: ratio,
        first_transfer: t.values[0],
        first_reference: r.values[0],
        near_optimal_transfer: near_optimal(&t, cfg.near_optimal_window)?,
        near_optimal_reference: near_optimal(&r, cfg.near_optimal_window)?,
        threshold: near_optimal(&r, cfg.near_optimal_window)?,
        config_hash: config_hash.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn curve(values: &[f64]) -> SmoothedCurve {
        SmoothedCurve {
            steps: (1..=values.len() as u64).map(|i| i * 1000).collect(),
            values: values.to_vec(),
        }
    }

    fn steps_of(values: &[f64]) -> Vec<u64> {
        (1..=values.len() as u64).map(|i| i * 1000).collect()
    }

    #[test]
    fn constant_curve_smooths_to_itself() {
        let v = vec![3.0; 7];
        let sm = moving_average(&steps_of(&v), &v, 20).unwrap();
        assert_eq!(sm.values, v);
    }

    #[test]
    fn width_one_is_identity() {
        let v = vec![1.0, -2.0, 5.0];
        let sm = moving_average(&steps_of(&v), &v, 1).unwrap();
        assert_eq!(sm.values, v);
    }

    #[test]
    fn width_two_uses_current_and_previous() {
        let v = vec![1.0, 2.0, 3.0];
        let sm = moving_average(&steps_of(&v), &v, 2).unwrap();
        assert_eq!(sm.values, vec![1.0, 1.5, 2.5]);
    }

    #[test]
    fn empty_curve_is_an_error() {
        assert!(matches!(
            moving_average(&[], &[], 5),
            Err(Error::EmptyCurve)
        ));
    }

    #[test]
    fn near_optimal_of_constant_is_the_constant() {
        assert_eq!(near_optimal(&curve(&[2.5; 10]), 100).unwrap(), 2.5);
    }

    #[test]
    fn near_optimal_two_point_window() {
        // window values {4, 6}: mu = 5, sigma = 1 -> 4
        let c = curve(&[4.0, 6.0]);
        assert_eq!(near_optimal(&c, 100).unwrap(), 4.0);
    }

    #[test]
    fn near_optimal_window_clips_at_curve_end() {
        // maximum at the last point; the window may only contain existing
        // points and must not fabricate any
        let c = curve(&[0.0, 0.0, 1.0, 2.0, 3.0]);
        let (lo, hi) = window_bounds(4, 100, 5);
        assert_eq!((lo, hi), (0, 4));
        let v = near_optimal(&c, 100).unwrap();
        // mean 1.2, population std of [0,0,1,2,3]
        let mean: f64 = 1.2;
        let var = [0.0, 0.0, 1.0, 2.0, 3.0]
            .iter()
            .map(|x| (x - mean) * (x - mean))
            .sum::<f64>()
            / 5.0;
        assert!((v - (mean - var.sqrt())).abs() < 1e-12);
    }

    #[test]
    fn jumpstart_examples() {
        let (n, raw) = jumpstart(&curve(&[3.0]), &curve(&[2.0])).unwrap();
        assert_eq!(n, Some(0.5));
        assert_eq!(raw, 1.0);
        let (n, _) = jumpstart(&curve(&[2.0]), &curve(&[2.0])).unwrap();
        assert_eq!(n, Some(0.0));
        // absolute-value denominator for negative references
        let (n, _) = jumpstart(&curve(&[-1.0]), &curve(&[-2.0])).unwrap();
        assert_eq!(n, Some(0.5));
        let (n, raw) = jumpstart(&curve(&[1.0]), &curve(&[0.0])).unwrap();
        assert_eq!(n, None);
        assert_eq!(raw, 1.0);
    }

    #[test]
    fn final_improvement_examples() {
        assert_eq!(
            final_improvement(&curve(&[4.0; 5]), &curve(&[4.0; 5]), 100).unwrap(),
            Some(0.0)
        );
        assert_eq!(
            final_improvement(&curve(&[6.0; 5]), &curve(&[4.0; 5]), 100).unwrap(),
            Some(0.5)
        );
        // negative transfer stays visible
        assert_eq!(
            final_improvement(&curve(&[2.0; 5]), &curve(&[4.0; 5]), 100).unwrap(),
            Some(-0.5)
        );
        assert_eq!(
            final_improvement(&curve(&[2.0; 5]), &curve(&[0.0; 5]), 100).unwrap(),
            None
        );
    }

    #[test]
    fn step_ratio_examples() {
        // reference reaches its threshold (4.0) at step 2000; transfer at 1000
        let reference = curve(&[0.0, 4.0, 4.0, 4.0]);
        let transfer = curve(&[4.0, 4.0, 4.0, 4.0]);
        let r = steps_to_threshold(&transfer, &reference, 1).unwrap();
        assert_eq!(r, Some(0.5));
        // transfer first point already past the threshold: the ratio uses
        // the first records' steps
        let early = curve(&[9.0, 9.0, 9.0, 9.0]);
        let ref_first = curve(&[5.0, 5.0, 5.0, 5.0]);
        assert_eq!(
            steps_to_threshold(&early, &ref_first, 1).unwrap(),
            Some(1.0)
        );
        // transfer never reaches -> absent
        let never = curve(&[0.0, 0.0, 0.0, 0.0]);
        assert_eq!(steps_to_threshold(&never, &reference, 1).unwrap(), None);
    }

    #[test]
    fn self_comparison_is_zero_zero_one() {
        let c = LearningCurve {
            points: (1..=30)
                .map(|i| crate::dqn::CurvePoint {
                    step: i * 2000,
                    mean_return: (i as f64 * 0.37).sin() + i as f64 * 0.05,
                    std_return: 0.1,
                    episodes: 300,
                })
                .collect(),
        };
        let report = build_report(2, "a2t", &c, &c, &MetricConfig::default(), "h").unwrap();
        assert_eq!(report.jumpstart, Some(0.0));
        assert_eq!(report.final_improvement, Some(0.0));
        assert_eq!(report.step_ratio, Some(1.0));
    }

    #[test]
    fn metrics_use_step_annotations_not_indices() {
        // Subsampling both curves by 2 (keeping crossing records on the
        // lattice) must leave every metric unchanged.
        // crossings and maxima sit on even indices so the factor-2
        // subsample keeps them
        let full_t = SmoothedCurve {
            steps: (0..8).map(|i| 2000 + i * 2000).collect(),
            values: vec![1.0, 1.0, 6.0, 6.0, 6.0, 6.0, 6.0, 6.0],
        };
        let full_r = SmoothedCurve {
            steps: (0..8).map(|i| 2000 + i * 2000).collect(),
            values: vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 6.0, 6.0],
        };
        let sub = |c: &SmoothedCurve| SmoothedCurve {
            steps: c.steps.iter().copied().step_by(2).collect(),
            values: c.values.iter().copied().step_by(2).collect(),
        };
        // window 1 keeps near-optimal at the curve max for both samplings
        let w = 1;
        let full_ratio = steps_to_threshold(&full_t, &full_r, w).unwrap().unwrap();
        let sub_ratio = steps_to_threshold(&sub(&full_t), &sub(&full_r), w)
            .unwrap()
            .unwrap();
        assert_eq!(full_ratio, sub_ratio);
        assert_eq!(
            jumpstart(&full_t, &full_r).unwrap(),
            jumpstart(&sub(&full_t), &sub(&full_r)).unwrap()
        );
        assert_eq!(
            final_improvement(&full_t, &full_r, w).unwrap(),
            final_improvement(&sub(&full_t), &sub(&full_r), w).unwrap()
        );
    }

    proptest! {
        #[test]
        fn smoothing_preserves_length(values in proptest::collection::vec(-100.0f64..100.0, 1..120), width in 1usize..40) {
            let steps: Vec<u64> = (1..=values.len() as u64).collect();
            let sm = moving_average(&steps, &values, width).unwrap();
            prop_assert_eq!(sm.len(), values.len());
            prop_assert!(sm.values.iter().all(|v| v.is_finite()));
        }

        #[test]
        fn near_optimal_never_exceeds_max(values in proptest::collection::vec(-50.0f64..50.0, 1..120), window in 1usize..150) {
            let c = curve(&values);
            let no = near_optimal(&c, window).unwrap();
            let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(no <= max + 1e-12);
        }

        #[test]
        fn reference_always_reaches_its_own_threshold(values in proptest::collection::vec(-50.0f64..50.0, 1..120)) {
            let c = curve(&values);
            prop_assert!(steps_to_threshold(&c, &c, 100).unwrap().is_some());
        }
    }
}
