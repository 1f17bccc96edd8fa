//! Classification and distribution metrics.

/// Numerically stable softmax with max subtraction.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

/// Macro-averaged precision, recall, and F1 over the classes present in
/// `y_true`, with 0/0 defined as 0.
pub fn macro_prf(y_true: &[usize], y_pred: &[usize], num_classes: usize) -> (f64, f64, f64) {
    assert_eq!(y_true.len(), y_pred.len());
    let mut tp = vec![0usize; num_classes];
    let mut fp = vec![0usize; num_classes];
    let mut fn_ = vec![0usize; num_classes];
    let mut present = vec![false; num_classes];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        present[t] = true;
        if t == p {
            tp[t] += 1;
        } else {
            fp[p] += 1;
            fn_[t] += 1;
        }
    }
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let mut sums = (0.0, 0.0, 0.0);
    let mut count = 0usize;
    for c in 0..num_classes {
        if !present[c] {
            continue;
        }
        let precision = ratio(tp[c], tp[c] + fp[c]);
        let recall = ratio(tp[c], tp[c] + fn_[c]);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        sums.0 += precision;
        sums.1 += recall;
        sums.2 += f1;
        count += 1;
    }
    if count == 0 {
        return (0.0, 0.0, 0.0);
    }
    let n = count as f64;
    (sums.0 / n, sums.1 / n, sums.2 / n)
}

/// (KL(q || p), L1, Chebyshev) between a predicted distribution `p` and a
/// target `q`. For KL, `p` is clamped to >= 1e-8 and renormalized, and
/// `q_i = 0` terms contribute zero. L1 is the mean absolute bin difference
/// and Chebyshev the maximum, both on the raw `p`.
pub fn distribution_metrics(p: &[f64], q: &[f64]) -> (f64, f64, f64) {
    assert_eq!(p.len(), q.len());
    let clamped: Vec<f64> = p.iter().map(|&x| x.max(1e-8)).collect();
    let z: f64 = clamped.iter().sum();
    let mut kl = 0.0;
    for (&qi, &ci) in q.iter().zip(&clamped) {
        if qi > 0.0 {
            kl += qi * (qi / (ci / z)).ln();
        }
    }

    let mut l1 = 0.0;
    let mut chebyshev = 0.0f64;
    for (&pi, &qi) in p.iter().zip(q) {
        let diff = (pi - qi).abs();
        l1 += diff;
        chebyshev = chebyshev.max(diff);
    }
    l1 /= p.len() as f64;
    (kl, l1, chebyshev)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_rows_sum_to_one() {
        let p = softmax(&[2.0, -1.0, 0.5, 30.0]);
        let sum: f64 = p.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
        assert!(p.iter().all(|&x| x > 0.0 && x < 1.0));
    }

    #[test]
    fn kl_hand_cases() {
        let (kl, l1, cheb) = distribution_metrics(&[0.5, 0.5], &[1.0, 0.0]);
        assert!((kl - std::f64::consts::LN_2).abs() < 1e-9);
        assert!((l1 - 0.5).abs() < 1e-12);
        assert!((cheb - 0.5).abs() < 1e-12);
    }

    #[test]
    fn identical_distributions_score_zero() {
        let q = [0.2, 0.3, 0.5];
        let (kl, l1, cheb) = distribution_metrics(&q, &q);
        assert!(kl.abs() < 1e-7);
        assert_eq!(l1, 0.0);
        assert_eq!(cheb, 0.0);
    }

    #[test]
    fn kl_self_with_zero_bins_stays_under_clamp_tolerance() {
        let q = [0.7, 0.3, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let (kl, _, _) = distribution_metrics(&q, &q);
        assert!(kl >= 0.0);
        assert!(kl < 1e-7, "kl {kl}");
    }

    #[test]
    fn majority_class_macro_f1_is_one_third() {
        // 2-class 50/50 test set, always predicting class 0: class 0 has
        // P = 0.5, R = 1, F1 = 2/3; class 1 has all zeros.
        let y_true = [0, 0, 1, 1];
        let y_pred = [0, 0, 0, 0];
        let (p, r, f1) = macro_prf(&y_true, &y_pred, 2);
        assert!((p - 0.25).abs() < 1e-12);
        assert!((r - 0.5).abs() < 1e-12);
        assert!((f1 - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn single_present_class_predicted_perfectly() {
        let y = [3, 3, 3];
        let (p, r, f1) = macro_prf(&y, &y, 5);
        assert_eq!((p, r, f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn macro_metrics_invariant_under_relabeling() {
        let y_true = [0, 1, 2, 1, 0, 2, 2];
        let y_pred = [0, 2, 2, 1, 1, 2, 0];
        let base = macro_prf(&y_true, &y_pred, 3);
        // permutation 0->2, 1->0, 2->1
        let map = [2, 0, 1];
        let yt: Vec<usize> = y_true.iter().map(|&c| map[c]).collect();
        let yp: Vec<usize> = y_pred.iter().map(|&c| map[c]).collect();
        let permuted = macro_prf(&yt, &yp, 3);
        assert!((base.0 - permuted.0).abs() < 1e-12);
        assert!((base.1 - permuted.1).abs() < 1e-12);
        assert!((base.2 - permuted.2).abs() < 1e-12);
    }

    #[test]
    fn chebyshev_bounds_l1() {
        // max >= mean and max <= mean * bins for absolute differences.
        let cases = [
            (vec![0.1, 0.2, 0.7], vec![0.3, 0.3, 0.4]),
            (vec![0.25, 0.25, 0.25, 0.25], vec![1.0, 0.0, 0.0, 0.0]),
            (vec![0.5, 0.5], vec![0.5, 0.5]),
        ];
        for (p, q) in cases {
            let (_, l1, cheb) = distribution_metrics(&p, &q);
            let b = p.len() as f64;
            assert!(cheb >= l1 - 1e-15);
            assert!(cheb <= l1 * b + 1e-15);
        }
    }
}
