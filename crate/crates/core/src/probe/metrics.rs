use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub value: f64,
    /// Either input had zero variance; `value` is then 0.
    pub degenerate: bool,
}

/// Sample Pearson correlation.
pub fn pearson(a: &[f64], b: &[f64]) -> Correlation {
    assert_eq!(a.len(), b.len(), "pearson inputs differ in length");
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if a.len() < 2 || saa == 0.0 || sbb == 0.0 {
        return Correlation { value: 0.0, degenerate: true };
    }
    Correlation { value: (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0), degenerate: false }
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half. `None` when only one class is present.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len(), "roc_auc inputs differ in length");
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // midranks over tied groups
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        pos_rank_sum += mid * idx[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (p, q) = (pos as f64, neg as f64);
    Some((pos_rank_sum - p * (p + 1.0) / 2.0) / (p * q))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pearson_cases() {
        let a = [1.0, 2.0, 3.0];
        assert_eq!(pearson(&a, &a).value, 1.0);
        assert_eq!(pearson(&a, &[-1.0, -2.0, -3.0]).value, -1.0);
        assert!((pearson(&a, &[1.0, 2.0, 4.0]).value - 0.9820).abs() < 1e-4);
        let flat = pearson(&a, &[2.0; 3]);
        assert!(flat.degenerate && flat.value == 0.0);
    }

    #[test]
    fn auc_cases() {
        assert_eq!(roc_auc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]), Some(0.75));
        assert_eq!(roc_auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]), Some(1.0));
        assert_eq!(roc_auc(&[0.1, 0.2, 0.8, 0.9], &[true, true, false, false]), Some(0.0));
        assert_eq!(roc_auc(&[0.5, 0.5], &[true, false]), Some(0.5));
        assert_eq!(roc_auc(&[0.1, 0.2], &[true, true]), None);
    }

    fn brute_auc(s: &[f64], l: &[bool]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..s.len() {
            for j in 0..s.len() {
                if l[i] && !l[j] {
                    den += 1.0;
                    num += if s[i] > s[j] { 1.0 } else if s[i] == s[j] { 0.5 } else { 0.0 };
                }
            }
        }
        num / den
    }

    proptest! {
        #[test]
        fn auc_matches_pair_counting(v in prop::collection::vec((0u8..6, any::<bool>()), 2..40)) {
            let s: Vec<f64> = v.iter().map(|p| p.0 as f64).collect();
            let l: Vec<bool> = v.iter().map(|p| p.1).collect();
            match roc_auc(&s, &l) {
                Some(a) => prop_assert!((a - brute_auc(&s, &l)).abs() < 1e-12),
                None => prop_assert!(l.iter().all(|&x| x) || l.iter().all(|&x| !x)),
            }
        }

        #[test]
        fn auc_ignores_monotone_transforms(v in prop::collection::vec((-5.0f64..5.0, any::<bool>()), 2..40)) {
            let s: Vec<f64> = v.iter().map(|p| p.0).collect();
            let l: Vec<bool> = v.iter().map(|p| p.1).collect();
            let t: Vec<f64> = s.iter().map(|x| x.exp() * 3.0 + 1.0).collect();
            prop_assert_eq!(roc_auc(&s, &l), roc_auc(&t, &l));
        }

        #[test]
        fn pearson_symmetric_and_affine_invariant(v in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 3..30), alpha in 0.1f64..10.0, beta in -3.0f64..3.0) {
            let a: Vec<f64> = v.iter().map(|p| p.0).collect();
            let b: Vec<f64> = v.iter().map(|p| p.1).collect();
            let r = pearson(&a, &b);
            prop_assert_eq!(r.value, pearson(&b, &a).value);
            let scaled: Vec<f64> = a.iter().map(|x| alpha * x + beta).collect();
            prop_assert!((pearson(&scaled, &b).value - r.value).abs() < 1e-12);
        }
    }
}
