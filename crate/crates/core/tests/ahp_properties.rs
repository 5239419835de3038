use proptest::prelude::*;
use softlab_core::ahp::{consistency_ratio, priority_vector, PairwiseMatrix};

const SCALE: [f64; 9] = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0];

fn labels(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("R{i}")).collect()
}

fn judgment_matrix() -> impl Strategy<Value = PairwiseMatrix> {
    (3usize..=8).prop_flat_map(|n| {
        let upper = n * (n - 1) / 2;
        proptest::collection::vec((0usize..9, any::<bool>()), upper).prop_map(move |cells| {
            let mut e = vec![vec![1.0; n]; n];
            let mut k = 0;
            for i in 0..n {
                for j in i + 1..n {
                    let (idx, inv) = cells[k];
                    k += 1;
                    let v = if inv { 1.0 / SCALE[idx] } else { SCALE[idx] };
                    e[i][j] = v;
                    e[j][i] = 1.0 / v;
                }
            }
            PairwiseMatrix::new(labels(n), e).unwrap()
        })
    })
}

proptest! {
    #[test]
    fn weights_form_a_distribution(m in judgment_matrix()) {
        let w = priority_vector(&m).weights;
        prop_assert!(w.iter().all(|&x| x > 0.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(consistency_ratio(&m).unwrap() >= -1e-9);
    }

    #[test]
    fn relabeling_permutes_weights(m in judgment_matrix(), seed in any::<u64>()) {
        let n = m.n();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(i, (s >> 33) as usize % (i + 1));
        }
        let e: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| m.get(perm[i], perm[j])).collect())
            .collect();
        let p = PairwiseMatrix::new(labels(n), e).unwrap();
        let w = priority_vector(&m).weights;
        let wp = priority_vector(&p).weights;
        for i in 0..n {
            prop_assert!((wp[i] - w[perm[i]]).abs() < 1e-12);
        }
        let cr = consistency_ratio(&m).unwrap();
        prop_assert!((consistency_ratio(&p).unwrap() - cr).abs() < 1e-7);
    }

    #[test]
    fn consistent_matrices_recover_their_weights(
        raw in proptest::collection::vec(0.01f64..1.0, 3..=10)
    ) {
        let total: f64 = raw.iter().sum();
        let w: Vec<f64> = raw.iter().map(|x| x / total).collect();
        let m = PairwiseMatrix::consistent(labels(w.len()), &w).unwrap();
        let got = priority_vector(&m).weights;
        for (g, e) in got.iter().zip(&w) {
            prop_assert!((g - e).abs() < 1e-9);
        }
        prop_assert!(consistency_ratio(&m).unwrap().abs() < 1e-7);
    }

    #[test]
    fn preferring_a_row_more_never_lowers_its_weight(m in judgment_matrix(), row in 0usize..3) {
        let n = m.n();
        let mut e = m.entries().to_vec();
        for j in 0..n {
            if j != row && e[row][j] < 9.0 {
                e[row][j] = (e[row][j] * 2.0).min(9.0);
                e[j][row] = 1.0 / e[row][j];
            }
        }
        let promoted = PairwiseMatrix::new(labels(n), e).unwrap();
        let before = priority_vector(&m).weights[row];
        let after = priority_vector(&promoted).weights[row];
        prop_assert!(after >= before - 1e-12);
    }
}
