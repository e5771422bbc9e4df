//! Ranking losses. Scores follow the lower-is-better convention and labels
//! are 1-based positions (1 = best).

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Σ over pairs with label(a) < label(b) of max(0, f(a) − f(b) + τ).
pub fn triplet_loss(scores: &[f64], labels: &[usize], margin: f64) -> f64 {
    triplet_loss_grad(scores, labels, margin).0
}

pub fn triplet_loss_grad(scores: &[f64], labels: &[usize], margin: f64) -> (f64, Vec<f64>) {
    let n = scores.len();
    let mut loss = 0.0;
    let mut grad = vec![0.0; n];
    for a in 0..n {
        for b in 0..n {
            if labels[a] < labels[b] {
                let t = scores[a] - scores[b] + margin;
                if t > 0.0 {
                    loss += t;
                    grad[a] += 1.0;
                    grad[b] -= 1.0;
                }
            }
        }
    }
    (loss, grad)
}

/// Differentiable rank position: 1 + Σ_{c'≠c} σ((f(c) − f(c'))/T).
pub fn soft_rank(scores: &[f64], temperature: f64) -> Vec<f64> {
    scores
        .iter()
        .enumerate()
        .map(|(c, &fc)| {
            1.0 + scores
                .iter()
                .enumerate()
                .filter(|&(o, _)| o != c)
                .map(|(_, &fo)| sigmoid((fc - fo) / temperature))
                .sum::<f64>()
        })
        .collect()
}

/// Mean over candidates of (label − soft_rank)².
pub fn pointwise_loss(scores: &[f64], labels: &[usize], temperature: f64) -> f64 {
    pointwise_loss_grad(scores, labels, temperature).0
}

pub fn pointwise_loss_grad(scores: &[f64], labels: &[usize], temperature: f64) -> (f64, Vec<f64>) {
    let n = scores.len();
    if n == 0 {
        return (0.0, Vec::new());
    }
    let g = soft_rank(scores, temperature);
    let loss = labels
        .iter()
        .zip(&g)
        .map(|(&l, &gt)| (l as f64 - gt).powi(2))
        .sum::<f64>()
        / n as f64;
    // r_c = dL/dg̃_c
    let r: Vec<f64> = labels
        .iter()
        .zip(&g)
        .map(|(&l, &gt)| -2.0 * (l as f64 - gt) / n as f64)
        .collect();
    let mut grad = vec![0.0; n];
    for c in 0..n {
        for o in 0..n {
            if o == c {
                continue;
            }
            let s = sigmoid((scores[c] - scores[o]) / temperature);
            let d = s * (1.0 - s) / temperature;
            grad[c] += r[c] * d;
            grad[o] -= r[c] * d;
        }
    }
    (loss, grad)
}

/// α · L_t + (1 − α) · L_p.
pub fn combined_loss(
    scores: &[f64],
    labels: &[usize],
    alpha: f64,
    margin: f64,
    temperature: f64,
) -> f64 {
    combined_loss_grad(scores, labels, alpha, margin, temperature).0
}

pub fn combined_loss_grad(
    scores: &[f64],
    labels: &[usize],
    alpha: f64,
    margin: f64,
    temperature: f64,
) -> (f64, Vec<f64>) {
    let (lt, gt) = triplet_loss_grad(scores, labels, margin);
    let (lp, gp) = pointwise_loss_grad(scores, labels, temperature);
    let grad = gt
        .iter()
        .zip(&gp)
        .map(|(a, b)| alpha * a + (1.0 - alpha) * b)
        .collect();
    (alpha * lt + (1.0 - alpha) * lp, grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplet_examples() {
        assert_eq!(triplet_loss(&[0.2, 0.5], &[1, 2], 0.2), 0.0);
        let l = triplet_loss(&[0.5, 0.4], &[1, 2], 0.2);
        assert!((l - 0.3).abs() < 1e-15);
        assert_eq!(triplet_loss(&[0.9], &[1], 0.2), 0.0);
    }

    #[test]
    fn soft_rank_examples() {
        let g = soft_rank(&[0.1, 0.2, 0.3], 1e-6);
        for (a, b) in g.iter().zip([1.0, 2.0, 3.0]) {
            assert!((a - b).abs() < 1e-9);
        }
        assert_eq!(soft_rank(&[0.4, 0.4], 0.1), vec![1.5, 1.5]);
        let g = soft_rank(&[0.0, 1.0], 1.0);
        assert!((g[0] - 1.2689).abs() < 1e-4);
        assert!((g[1] - 1.7311).abs() < 1e-4);
    }

    #[test]
    fn pointwise_examples() {
        assert!(pointwise_loss(&[0.1, 0.2, 0.3], &[1, 2, 3], 1e-6) < 1e-12);
        assert!((pointwise_loss(&[0.2, 0.1], &[1, 2], 1e-6) - 1.0).abs() < 1e-12);
        assert_eq!(pointwise_loss(&[0.3], &[1], 0.1), 0.0);
    }

    #[test]
    fn combined_endpoints() {
        let s = [0.3, -0.2, 0.9, 0.1];
        let l = [2, 1, 4, 3];
        assert_eq!(
            combined_loss(&s, &l, 1.0, 0.2, 0.1),
            triplet_loss(&s, &l, 0.2)
        );
        assert_eq!(
            combined_loss(&s, &l, 0.0, 0.2, 0.1),
            pointwise_loss(&s, &l, 0.1)
        );
    }

    #[test]
    fn gradients_match_finite_differences() {
        let s = [0.31, -0.17, 0.93, 0.12, 0.5];
        let l = [2, 1, 5, 3, 4];
        let (_, g) = combined_loss_grad(&s, &l, 0.7, 0.2, 0.3);
        let h = 1e-7;
        for i in 0..s.len() {
            let mut p = s;
            p[i] += h;
            let mut m = s;
            m[i] -= h;
            let num = (combined_loss(&p, &l, 0.7, 0.2, 0.3) - combined_loss(&m, &l, 0.7, 0.2, 0.3))
                / (2.0 * h);
            assert!((num - g[i]).abs() < 1e-6, "{i}: {num} vs {}", g[i]);
        }
    }

    mod props {
        use proptest::prelude::*;

        use super::*;

        proptest! {
            #[test]
            fn triplet_zero_iff_margins_hold(scores in proptest::collection::vec(-1.0f64..1.0, 1..8)) {
                let n = scores.len();
                let labels: Vec<usize> = (1..=n).collect();
                let zero = triplet_loss(&scores, &labels, 0.2) == 0.0;
                let holds = (0..n).all(|a| (a + 1..n).all(|b| scores[a] - scores[b] + 0.2 <= 0.0));
                prop_assert_eq!(zero, holds);
            }

            #[test]
            fn soft_rank_sums_in_hard_limit(scores in proptest::collection::hash_set(-1000i32..1000, 1..10)) {
                let s: Vec<f64> = scores.into_iter().map(|x| x as f64 / 100.0).collect();
                let n = s.len() as f64;
                let total: f64 = soft_rank(&s, 1e-6).iter().sum();
                prop_assert!((total - n * (n + 1.0) / 2.0).abs() < 1e-6);
            }
        }
    }
}
