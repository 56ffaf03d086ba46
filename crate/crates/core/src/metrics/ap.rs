/// All-points interpolated average precision.
///
/// `ranked` holds `(confidence, is_true_positive)`; entries are ranked by confidence,
/// highest first, and ties keep their input order (callers sort by query id first).
/// Recall is measured against `num_gt`. Returns 0 for an empty list or `num_gt == 0`.
pub fn average_precision(ranked: &[(f64, bool)], num_gt: usize) -> f64 {
    if ranked.is_empty() || num_gt == 0 {
        return 0.0;
    }
    let mut order: Vec<usize> = (0..ranked.len()).collect();
    order.sort_by(|&i, &j| ranked[j].0.total_cmp(&ranked[i].0).then(i.cmp(&j)));

    let mut true_positives = 0usize;
    let mut hits = Vec::with_capacity(order.len());
    let mut at_rank = Vec::with_capacity(order.len());
    for (rank, &i) in order.iter().enumerate() {
        let hit = ranked[i].1;
        true_positives += hit as usize;
        at_rank.push((true_positives, rank + 1));
        hits.push(hit);
    }
    // interpolated precision: best precision at any equal-or-higher recall, kept as tp / k
    let mut interpolated = vec![(0usize, 1usize); order.len()];
    let mut best = (0usize, 1usize);
    for k in (0..order.len()).rev() {
        let (tp, n) = at_rank[k];
        if tp * best.1 > best.0 * n {
            best = (tp, n);
        }
        interpolated[k] = best;
    }
    // every hit adds 1/num_gt recall; recall saturates at 1
    let counted: Vec<(usize, usize)> = hits
        .iter()
        .zip(&interpolated)
        .filter(|(hit, _)| **hit)
        .map(|(_, p)| *p)
        .take(num_gt)
        .collect();
    exact_area(&counted, num_gt)
        .unwrap_or_else(|| counted.iter().map(|&(tp, k)| tp as f64 / k as f64).sum::<f64>() / num_gt as f64)
}

fn gcd(mut a: i128, mut b: i128) -> i128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a.abs()
}

/// `sum(tp / k) / num_gt` rounded once, or `None` if the fraction outgrows 53-bit parts.
fn exact_area(terms: &[(usize, usize)], num_gt: usize) -> Option<f64> {
    let (mut num, mut den) = (0i128, 1i128);
    for &(tp, k) in terms {
        let (p, q) = (tp as i128, k as i128);
        let g = gcd(den, q);
        let new_den = (den / g).checked_mul(q)?;
        num = num.checked_mul(q / g)?.checked_add(p.checked_mul(den / g)?)?;
        den = new_den;
        let r = gcd(num, den).max(1);
        num /= r;
        den /= r;
    }
    den = den.checked_mul(num_gt as i128)?;
    let r = gcd(num, den).max(1);
    let (num, den) = (num / r, den / r);
    const LIMIT: i128 = 1 << 53;
    (num <= LIMIT && den <= LIMIT).then(|| num as f64 / den as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_prediction() {
        assert_eq!(average_precision(&[(0.9, true)], 1), 1.0);
        assert_eq!(average_precision(&[(0.9, false)], 1), 0.0);
        assert_eq!(average_precision(&[], 3), 0.0);
    }

    #[test]
    fn hand_computed_five_ninths() {
        let ap = average_precision(&[(0.9, true), (0.8, false), (0.7, true)], 3);
        assert_eq!(ap, 5.0 / 9.0);
    }

    #[test]
    fn ranking_uses_confidence_not_input_order() {
        let a = average_precision(&[(0.7, true), (0.8, false), (0.9, true)], 3);
        let b = average_precision(&[(0.9, true), (0.8, false), (0.7, true)], 3);
        assert_eq!(a, b);
    }

    #[test]
    fn ties_keep_input_order() {
        let fp_first = average_precision(&[(0.5, false), (0.5, true)], 1);
        let tp_first = average_precision(&[(0.5, true), (0.5, false)], 1);
        assert_eq!(fp_first, 0.5);
        assert_eq!(tp_first, 1.0);
    }

    #[test]
    fn missing_predictions_cap_recall() {
        assert_eq!(average_precision(&[(0.9, true)], 4), 0.25);
    }

    #[test]
    fn long_lists_fall_back_to_float_sum() {
        let ranked: Vec<(f64, bool)> = (0..400).map(|i| (1.0 - i as f64 / 400.0, i % 3 != 1)).collect();
        let ap = average_precision(&ranked, 400);
        assert!(ap > 0.0 && ap < 1.0);
    }
}
