use fogsynth_core::classifier::{adjusted_rand_index, evaluate_predictions};
use fogsynth_core::dec::{kl_loss, soft_assign, target_dist};
use fogsynth_core::evaluation::{mmd2, KernelSpec};
use fogsynth_core::fgan2::fedavg;
use fogsynth_core::nn::{init_model, Activation};
use fogsynth_core::update::split_by_confidence;
use fogsynth_core::{Architecture, Matrix, ModelParams, Role};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-3.0..3.0f64, rows * cols).prop_map(move |v| Matrix::from_vec(rows, cols, v).unwrap())
}

fn latents() -> impl Strategy<Value = (Matrix, Matrix)> {
    (1usize..12, 1usize..6, 1usize..4).prop_flat_map(|(n, k, d)| (matrix(n, d), matrix(k, d)))
}

fn params(count: usize) -> impl Strategy<Value = Vec<ModelParams>> {
    let arch = Architecture::mlp(2, &[3], Activation::Tanh, 2, Activation::Identity);
    let base = init_model(&arch, Role::Generator, 0).unwrap();
    let len = base.len();
    prop::collection::vec(prop::collection::vec(-5.0..5.0f64, len), count)
        .prop_map(move |vs| vs.into_iter().map(|v| base.with_values(v).unwrap()).collect())
}

proptest! {
    #[test]
    fn assignments_are_row_stochastic((z, mu) in latents()) {
        let q = soft_assign(&z, &mu).unwrap();
        let p = target_dist(&q).unwrap();
        for m in [&q, &p] {
            for row in m.iter_rows() {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
        prop_assert!(kl_loss(&p, &q).unwrap() >= -1e-12);
        prop_assert!(kl_loss(&q, &q).unwrap().abs() < 1e-12);
    }

    #[test]
    fn fedavg_ignores_order_and_stays_in_range(vs in params(4), rot in 0usize..4) {
        let refs: Vec<&ModelParams> = vs.iter().collect();
        let mut rotated = refs.clone();
        rotated.rotate_left(rot);
        let a = fedavg(&refs).unwrap();
        let b = fedavg(&rotated).unwrap();
        for (i, (x, y)) in a.values().iter().zip(b.values()).enumerate() {
            prop_assert!((x - y).abs() <= 1e-12);
            let lo = vs.iter().map(|v| v.values()[i]).fold(f64::INFINITY, f64::min);
            let hi = vs.iter().map(|v| v.values()[i]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(*x >= lo - 1e-12 && *x <= hi + 1e-12);
        }
    }

    #[test]
    fn threshold_split_is_a_monotone_partition(
        conf in prop::collection::vec(0.0..1.0f64, 0..50),
        a in 0.0..1.0f64,
        b in 0.0..1.0f64,
    ) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let low = split_by_confidence(&conf, lo);
        let high = split_by_confidence(&conf, hi);
        let mut all: Vec<usize> = low.known.iter().chain(&low.unknown).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..conf.len()).collect::<Vec<_>>());
        prop_assert!(low.unknown.iter().all(|i| high.unknown.contains(i)));
        prop_assert!(low.unknown.iter().all(|&i| conf[i] < lo));
    }

    #[test]
    fn pairwise_scores_ignore_sample_order_and_label_names(
        pairs in prop::collection::vec((0u32..4, 0u32..5), 2..40),
        shift in 1u32..50,
    ) {
        let truth: Vec<u32> = pairs.iter().map(|p| p.0).collect();
        let pred: Vec<u32> = pairs.iter().map(|p| p.1).collect();
        let base = evaluate_predictions(&truth, &pred).unwrap();
        let rt: Vec<u32> = truth.iter().rev().copied().collect();
        let rp: Vec<u32> = pred.iter().rev().map(|l| l * 7 + shift).collect();
        let other = evaluate_predictions(&rt, &rp).unwrap();
        prop_assert_eq!(base.pairs, other.pairs);
        prop_assert_eq!(base.f1, other.f1);
        prop_assert_eq!(base.per_class.accuracy, other.per_class.accuracy);
        let ari = adjusted_rand_index(&truth, &pred).unwrap();
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&ari));
        prop_assert!((adjusted_rand_index(&rt, &rp).unwrap() - ari).abs() < 1e-12);
    }

    #[test]
    fn mmd_is_symmetric_and_zero_on_itself(x in matrix(8, 3), y in matrix(6, 3)) {
        let k = KernelSpec::default();
        prop_assert!(mmd2(&x, &x, k).unwrap().abs() < 1e-9);
        prop_assert!((mmd2(&x, &y, k).unwrap() - mmd2(&y, &x, k).unwrap()).abs() < 1e-12);
    }
}
