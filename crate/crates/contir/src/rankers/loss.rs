//! Pairwise margin ranking loss.

use crate::autodiff::{Tensor, Var};

/// Elementwise max(0, x) on a vector, composed from stack-with-zeros and
/// max-over-axis. At exactly 0 the subgradient goes to the live branch.
pub fn relu(v: &Var) -> Var {
    let n = v.shape()[0];
    let stacked = v.reshape(&[n, 1]);
    let zeros = v.tape().constant(Tensor::zeros(&[n, 1]));
    v.tape().concat(&[&stacked, &zeros], 1).max_axis(1)
}

/// Mean over the batch of `max(0, -y * (pos - neg) + margin)`.
///
/// Panics when the score vectors differ in length or `margin < 0`.
pub fn margin_ranking_loss(pos: &Var, neg: &Var, margin: f64, y: f64) -> Var {
    assert_eq!(pos.shape(), neg.shape(), "score vectors differ in length");
    assert_eq!(pos.shape().len(), 1, "scores must be vectors");
    assert!(margin >= 0.0, "margin must be non-negative");
    let batch = pos.shape()[0] as f64;
    let raw = pos.sub(neg).mul_scalar(-y).add_scalar(margin);
    relu(&raw).sum_all().mul_scalar(1.0 / batch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;

    fn loss_of(pos: &[f64], neg: &[f64], margin: f64, y: f64) -> f64 {
        let tape = Tape::new();
        let p = tape.constant(Tensor::from_vec(pos.to_vec()));
        let n = tape.constant(Tensor::from_vec(neg.to_vec()));
        margin_ranking_loss(&p, &n, margin, y).scalar_value().unwrap()
    }

    #[test]
    fn separated_pair_has_zero_loss() {
        // pos=2.0, neg=0.5, margin=1, y=1 -> max(0, -1.5 + 1) = 0
        assert_eq!(loss_of(&[2.0], &[0.5], 1.0, 1.0), 0.0);
    }

    #[test]
    fn equal_scores_leave_the_margin() {
        assert_eq!(loss_of(&[0.7], &[0.7], 1.0, 1.0), 1.0);
    }

    #[test]
    fn inverted_pair_pays_gap_plus_margin() {
        // pos=0, neg=0.5, margin=1, y=1 -> 1.5
        assert!((loss_of(&[0.0], &[0.5], 1.0, 1.0) - 1.5).abs() < 1e-15);
    }

    #[test]
    fn batch_mean() {
        let v = loss_of(&[2.0, 0.0], &[0.5, 0.5], 1.0, 1.0);
        assert!((v - 0.75).abs() < 1e-15);
    }

    #[test]
    #[should_panic(expected = "differ in length")]
    fn length_mismatch_panics() {
        loss_of(&[1.0, 2.0], &[0.5], 1.0, 1.0);
    }
}
