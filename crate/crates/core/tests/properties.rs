use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use semirnet_core::model::{one_hot, triplet_loss};
use semirnet_core::numerics::{cosine_similarity, covariance, inverse_sqrt_psd, symmetric_eigen, Tape};
use semirnet_core::similarity::word_level_similarity;
use semirnet_core::training::{hard_triplets, sample_triplets};
use semirnet_core::Tensor;

fn matrix(max_rows: usize, max_cols: usize) -> impl Strategy<Value = Tensor> {
    (1..=max_rows, 1..=max_cols).prop_flat_map(|(r, c)| {
        prop::collection::vec(-10.0..10.0f64, r * c).prop_map(move |d| Tensor::matrix(r, c, d).unwrap())
    })
}

fn matmul_tn(a: &Tensor, b: &Tensor) -> Tensor {
    a.transpose().matmul(b).unwrap()
}

fn triplet_invariants(labels: &[u8], triplets: &[(usize, usize, usize)]) -> Result<(), TestCaseError> {
    let eligible: Vec<usize> = (0..labels.len())
        .filter(|&a| {
            let pos = (0..labels.len()).any(|j| j != a && labels[j] == labels[a]);
            let neg = labels.iter().any(|&l| l != labels[a]);
            pos && neg
        })
        .collect();
    let anchors: Vec<usize> = triplets.iter().map(|t| t.0).collect();
    prop_assert_eq!(anchors, eligible);
    for &(a, p, n) in triplets {
        prop_assert!(a != p);
        prop_assert_eq!(labels[a], labels[p]);
        prop_assert_ne!(labels[a], labels[n]);
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn covariance_is_symmetric_psd(x in matrix(12, 8).prop_filter("two rows", |x| x.rows() >= 2)) {
        let c = covariance(&x).unwrap();
        let d = c.rows();
        for i in 0..d {
            for j in 0..d {
                prop_assert_eq!(c.get(i, j), c.get(j, i));
            }
        }
        let scale = c.data().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        for l in symmetric_eigen(&c).unwrap().values {
            prop_assert!(l >= -1e-12 * scale * d as f64, "eigenvalue {l}");
        }
    }

    #[test]
    fn inverse_sqrt_whitens(d in 1usize..=32, seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = d + 8;
        let a = Tensor::matrix(n, d, (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let mut s = matmul_tn(&a, &a).map(|v| v / n as f64);
        for i in 0..d {
            s.set(i, i, s.get(i, i) + 0.05);
        }
        let eps = 1e-5;
        let m = inverse_sqrt_psd(&s, eps).unwrap();
        let mut ridge = s.clone();
        for i in 0..d {
            ridge.set(i, i, ridge.get(i, i) + eps);
        }
        let product = m.matmul(&ridge).unwrap().matmul(&m).unwrap();
        prop_assert!(product.max_abs_diff(&Tensor::identity(d)) < 1e-9);
        prop_assert!(m.max_abs_diff(&m.transpose()) < 1e-12);
    }

    #[test]
    fn cosine_is_symmetric_and_bounded(
        pair in (1usize..20).prop_flat_map(|d| (prop::collection::vec(-5.0..5.0f64, d), prop::collection::vec(-5.0..5.0f64, d)))
    ) {
        let (a, b) = pair;
        let ab = cosine_similarity(&a, &b).unwrap();
        let ba = cosine_similarity(&b, &a).unwrap();
        prop_assert_eq!(ab.to_bits(), ba.to_bits());
        prop_assert!((-1.0..=1.0).contains(&ab));
    }

    #[test]
    fn word_level_stays_in_range(t in matrix(6, 5), rows in 1usize..6, seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = t.cols();
        let v = Tensor::matrix(rows, d, (0..rows * d).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let w = word_level_similarity(&t, &v).unwrap();
        prop_assert!((-1.0..=1.0).contains(&w.max));
        prop_assert!((-1.0..=1.0).contains(&w.mean));
        prop_assert!(w.mean <= w.max);
    }

    #[test]
    fn sampled_triplets_respect_labels(labels in prop::collection::vec(0u8..2, 0..40), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let triplets = sample_triplets(&labels, &mut rng);
        triplet_invariants(&labels, &triplets)?;
    }

    #[test]
    fn hard_triplets_respect_labels(labels in prop::collection::vec(0u8..2, 1..30), seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let emb = Tensor::matrix(labels.len(), 3, (0..labels.len() * 3).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        triplet_invariants(&labels, &hard_triplets(&labels, &emb))?;
    }

    #[test]
    fn cross_entropy_is_non_negative(logits in matrix(8, 1).prop_map(|t| {
        let d: Vec<f64> = t.data().iter().flat_map(|&v| [v * 5.0, -v * 3.0]).collect();
        Tensor::matrix(t.rows(), 2, d).unwrap()
    }), seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<i64> = (0..logits.rows()).map(|_| rng.gen_range(0..2)).collect();
        let mut tape = Tape::new();
        let l = tape.leaf(logits);
        let loss = tape.softmax_cross_entropy(l, &one_hot(&labels).unwrap()).unwrap();
        let v = tape.value(loss).data()[0];
        prop_assert!(v >= 0.0 && v.is_finite(), "{v}");
    }

    #[test]
    fn triplet_loss_is_non_negative(
        v in prop::collection::vec(-3.0..3.0f64, 12),
        margin in 0.0..2.0f64,
    ) {
        let l = triplet_loss(&v[0..4], &v[4..8], &v[8..12], margin);
        prop_assert!(l >= 0.0);
    }
}
