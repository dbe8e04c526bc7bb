use hashcond::augment::{assemble, decode, FormationConfig};
use hashcond::model::perturb::perturb_tensor;
use hashcond::retrieval::{average_precision, binarize, hamming_rank, mean_average_precision, ranked_relevance};
use ndarray::{Array1, Array2, Array4};
use proptest::prelude::*;

fn pm1(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![Just(-1.0), Just(1.0)], n)
}

fn brute_ap(rel: &[bool]) -> f64 {
    let total: usize = rel.iter().filter(|&&r| r).count();
    if total == 0 {
        return 0.0;
    }
    let mut s = 0.0;
    for k in 1..=rel.len() {
        if rel[k - 1] {
            let p = rel[..k].iter().filter(|&&r| r).count() as f64 / k as f64;
            s += p;
        }
    }
    s / total as f64
}

proptest! {
    #[test]
    fn hamming_is_half_of_k_minus_dot(k in prop_oneof![Just(32usize), Just(64)], seed in any::<u64>()) {
        let q: Vec<f64> = (0..k).map(|i| if (seed >> (i % 64)) & 1 == 1 { 1.0 } else { -1.0 }).collect();
        let d: Vec<f64> = (0..k).map(|i| if (seed.rotate_left(17) >> (i % 64)) & 1 == 1 { 1.0 } else { -1.0 }).collect();
        let qc = binarize(&Array2::from_shape_vec((1, k), q.clone()).unwrap(), vec![0]).unwrap();
        let dc = binarize(&Array2::from_shape_vec((1, k), d.clone()).unwrap(), vec![0]).unwrap();
        let dot: f64 = q.iter().zip(&d).map(|(a, b)| a * b).sum();
        prop_assert_eq!(qc.distance(0, &dc, 0) as f64, (k as f64 - dot) / 2.0);
    }

    #[test]
    fn rank_matches_descending_dot(q in pm1(32), db in prop::collection::vec(pm1(32), 1..30)) {
        let n = db.len();
        let dbm = Array2::from_shape_vec((n, 32), db.concat()).unwrap();
        let qc = binarize(&Array2::from_shape_vec((1, 32), q.clone()).unwrap(), vec![0]).unwrap();
        let dc = binarize(&dbm, vec![0; n]).unwrap();
        let dots: Vec<f64> = dbm.rows().into_iter().map(|r| r.dot(&Array1::from(q.clone()))).collect();
        let mut by_dot: Vec<usize> = (0..n).collect();
        by_dot.sort_by(|&a, &b| dots[b].partial_cmp(&dots[a]).unwrap().then(a.cmp(&b)));
        prop_assert_eq!(hamming_rank(&qc, 0, &dc).unwrap(), by_dot);
    }

    #[test]
    fn ap_matches_brute_force(rel in prop::collection::vec(any::<bool>(), 1..50)) {
        prop_assert!((average_precision(&rel, None) - brute_ap(&rel)).abs() < 1e-12);
    }

    #[test]
    fn map_permutation_invariant_with_distinct_distances(shift in 0usize..8) {
        // Database row j sits at distance j from the all-ones query.
        let k = 8;
        let rows: Vec<f64> = (0..k).flat_map(|j| (0..k).map(move |b| if b < j { -1.0 } else { 1.0 })).collect();
        let labels: Vec<usize> = (0..k).map(|j| j % 3).collect();
        let db = binarize(&Array2::from_shape_vec((k, k), rows.clone()).unwrap(), labels.clone()).unwrap();
        let perm: Vec<usize> = (0..k).map(|i| (i + shift) % k).collect();
        let prow: Vec<f64> = perm.iter().flat_map(|&j| rows[j * k..(j + 1) * k].to_vec()).collect();
        let plab: Vec<usize> = perm.iter().map(|&j| labels[j]).collect();
        let pdb = binarize(&Array2::from_shape_vec((k, k), prow).unwrap(), plab).unwrap();
        let q = binarize(&Array2::ones((1, k)), vec![1]).unwrap();
        prop_assert_eq!(
            mean_average_precision(&q, &db, None).unwrap().map_value,
            mean_average_precision(&q, &pdb, None).unwrap().map_value
        );
        prop_assert_eq!(ranked_relevance(&q, 0, &db).unwrap(), ranked_relevance(&q, 0, &pdb).unwrap());
    }

    #[test]
    fn constants_survive_formation(v in -3.0f64..3.0, f in 1usize..4) {
        let side = 12;
        let form = FormationConfig::new(f, side).unwrap();
        let x = Array4::from_elem((f * f, 2, side, side), v);
        let back = decode(assemble(&x, &form).unwrap().view(), &form).unwrap();
        prop_assert_eq!(back.dim().0, f * f);
        prop_assert!(back.iter().all(|&y| y == v));
    }

    #[test]
    fn perturbation_linear_in_alpha(w in prop::collection::vec(-2.0f64..2.0, 1..20), a in 0.0f64..1.0) {
        let n = w.len();
        let w = ndarray::ArrayD::from_shape_vec(vec![n], w).unwrap();
        let raw = ndarray::ArrayD::from_shape_fn(vec![n], |i| ((i[0] * 37 % 11) as f64) - 5.0);
        let apply = |alpha| {
            let mut p = w.clone();
            perturb_tensor(p.view_mut(), raw.view(), alpha);
            p - &w
        };
        let (one, got) = (apply(1.0), apply(a));
        for (g, o) in got.iter().zip(one.iter()) {
            prop_assert!((g - a * o).abs() <= 1e-12 * (1.0 + o.abs()));
        }
    }
}
