use logitfe::differencing::{find_wperp, pair_from_wperp, SearchOptions, WeightVector};
use logitfe::io::{fmt12, read_sample_csv, write_sample_csv};
use logitfe::model::{likelihood_ratio, path_from_index, path_index, CovariatePath, FixedEffect, IndexFamily, ModelSpec, OutcomePath};
use logitfe::simulation::{generate, ALaw, DgpConfig, XLaw, Y0Law};
use proptest::prelude::*;

fn small_design() -> impl Strategy<Value = Vec<Vec<i64>>> {
    (3usize..=7, 1usize..=2).prop_flat_map(|(t, rows)| prop::collection::vec(prop::collection::vec(-2i64..=2, t), rows))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn wperp_vectors_are_orthogonal_and_nonzero(w in small_design()) {
        for v in find_wperp(&w, &SearchOptions::default()).unwrap() {
            prop_assert!(!v.is_zero());
            prop_assert!(v.apply(&w).iter().all(|&s| s == 0));
        }
    }

    #[test]
    fn pair_difference_is_the_weight_vector(w in prop::collection::vec(-1i8..=1, 2..9), fill in prop::collection::vec(0u8..=1, 9)) {
        let w = WeightVector(w);
        prop_assume!(!w.is_zero());
        let zeros = w.0.iter().filter(|&&v| v == 0).count();
        let pair = pair_from_wperp(&w, &fill[..zeros]).unwrap();
        for t in 0..w.len() {
            prop_assert_eq!(pair.y1[t] as i8 - pair.y2[t] as i8, w.0[t]);
        }
    }

    #[test]
    fn path_index_round_trips(t in 1usize..12, raw in any::<u64>()) {
        let i = (raw as usize) % (1 << t);
        prop_assert_eq!(path_index(&path_from_index(i, t)), i);
    }

    #[test]
    fn likelihood_ratio_is_antisymmetric(y1 in 0usize..16, y2 in 0usize..16, g in -2.0f64..2.0, a in -3.0f64..3.0) {
        let spec = ModelSpec::new(IndexFamily::Ar { p: 1 }, vec![vec![1.0; 4]], 0).unwrap();
        let x = CovariatePath::zeros(0, 4);
        let (p1, p2) = (OutcomePath::new(path_from_index(y1, 4), vec![1]), OutcomePath::new(path_from_index(y2, 4), vec![1]));
        let a = FixedEffect(vec![a]);
        let r = likelihood_ratio(&spec, &p1, &p2, &x, &[g], &a).unwrap();
        let s = likelihood_ratio(&spec, &p2, &p1, &x, &[g], &a).unwrap();
        prop_assert!((r * s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fmt12_keeps_twelve_digits(v in -1e12f64..1e12) {
        let back: f64 = fmt12(v).parse().unwrap();
        prop_assert!((back - v).abs() <= 1e-11 * v.abs().max(f64::MIN_POSITIVE));
        prop_assert_eq!(fmt12(back), fmt12(v));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn generation_is_deterministic_and_round_trips(seed in any::<u64>(), n in 1usize..30) {
        let cfg = DgpConfig {
            spec: ModelSpec::new(IndexFamily::Ar { p: 1 }, vec![vec![1.0; 3]], 1).unwrap(),
            theta: vec![0.5, 1.0],
            a_law: ALaw::Normal { mean: 0.0, sd: 1.0 },
            x_law: XLaw::Normal { sd: 1.0 },
            y0_law: Y0Law::BurnIn { periods: 10 },
            n,
            seed,
        };
        let s = generate(&cfg).unwrap();
        prop_assert_eq!(&s, &generate(&cfg).unwrap());
        let mut buf = Vec::new();
        write_sample_csv(&mut buf, &s).unwrap();
        let back = read_sample_csv(buf.as_slice(), &s.spec).unwrap();
        prop_assert_eq!(back.units.len(), n);
        let mut buf2 = Vec::new();
        write_sample_csv(&mut buf2, &back).unwrap();
        let again = read_sample_csv(buf2.as_slice(), &s.spec).unwrap();
        // unit ids are reassigned on write, so compare as multisets
        let key = |u: &logitfe::estimation::Unit| format!("{u:?}");
        let mut a: Vec<String> = back.units.iter().map(key).collect();
        let mut b: Vec<String> = again.units.iter().map(key).collect();
        a.sort();
        b.sort();
        prop_assert_eq!(a, b);
    }
}
