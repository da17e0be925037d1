//! Displacement metrics over the most probable modes.

use waydcm_core::choice::top_n;
use waydcm_core::Point2;

/// Mean pointwise distance between a prediction and the truth.
pub fn ade(pred: &[Point2], truth: &[Point2]) -> f64 {
    assert_eq!(pred.len(), truth.len(), "prediction and truth lengths differ");
    pred.iter().zip(truth).map(|(p, t)| p.distance(*t)).sum::<f64>() / truth.len() as f64
}

/// Distance between the final points.
pub fn fde(pred: &[Point2], truth: &[Point2]) -> f64 {
    pred.last().expect("non-empty prediction").distance(*truth.last().expect("non-empty truth"))
}

/// `(minADE_k, minFDE_k)` over the `k` most probable modes (ties to the lower
/// index; all modes when `k` exceeds their number). Each minimum is taken
/// independently.
pub fn min_ade_fde(modes: &[Vec<Point2>], probs: &[f64], truth: &[Point2], k: usize) -> (f64, f64) {
    assert_eq!(modes.len(), probs.len());
    assert!(k >= 1 && !modes.is_empty());
    top_n(probs, k).into_iter().fold((f64::INFINITY, f64::INFINITY), |(a, f), m| {
        (a.min(ade(&modes[m], truth)), f.min(fde(&modes[m], truth)))
    })
}
