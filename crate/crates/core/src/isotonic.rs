//! Weighted pool-adjacent-violators.

/// Weighted least-squares projection of `values` onto nondecreasing sequences.
pub fn isotonic(values: &[f64], weights: &[f64]) -> Vec<f64> {
    assert_eq!(values.len(), weights.len());
    // blocks of (mean, weight, length)
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(values.len());
    for (&v, &w) in values.iter().zip(weights) {
        let mut cur = (v, w, 1usize);
        while let Some(&(m, bw, len)) = blocks.last() {
            if m <= cur.0 {
                break;
            }
            blocks.pop();
            let tw = bw + cur.1;
            let mean = if tw > 0.0 {
                (m * bw + cur.0 * cur.1) / tw
            } else {
                0.5 * (m + cur.0)
            };
            cur = (mean, tw, len + cur.2);
        }
        blocks.push(cur);
    }
    blocks
        .into_iter()
        .flat_map(|(m, _, len)| std::iter::repeat_n(m, len))
        .collect()
}

pub fn is_nondecreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[0] <= w[1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pools_violators() {
        assert_eq!(isotonic(&[1.0, 3.0, 2.0, 4.0], &[1.0; 4]), vec![1.0, 2.5, 2.5, 4.0]);
        assert_eq!(isotonic(&[3.0, 1.0], &[1.0, 3.0]), vec![1.5, 1.5]);
        assert_eq!(isotonic(&[1.0, 2.0], &[1.0, 1.0]), vec![1.0, 2.0]);
    }

    proptest! {
        #[test]
        fn projection_properties(v in prop::collection::vec(-10.0f64..10.0, 1..30),
                                 w in prop::collection::vec(0.1f64..5.0, 30)) {
            let w = &w[..v.len()];
            let p = isotonic(&v, w);
            prop_assert!(is_nondecreasing(&p));
            // weighted mean preserved
            let a: f64 = v.iter().zip(w).map(|(x, y)| x * y).sum();
            let b: f64 = p.iter().zip(w).map(|(x, y)| x * y).sum();
            prop_assert!((a - b).abs() < 1e-9);
            // idempotent
            let q = isotonic(&p, w);
            for (x, y) in p.iter().zip(&q) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
