use equistop::fuzz;
use equistop::model::{parse_model, Model};
use equistop::stopping::{self, StoppingTime, DEFAULT_ENUM_CAP};
use proptest::prelude::*;

fn model(seed: u64) -> Model {
    let (text, _) = fuzz::generate(seed, 0, 800);
    parse_model(&text).unwrap()
}

fn all(m: &Model) -> Vec<StoppingTime> {
    stopping::enumerate_all(&m.tree, &StoppingTime::at_leaves(&m.tree), DEFAULT_ENUM_CAP).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn join_and_meet_form_a_lattice(seed in 0u64..10_000, picks in proptest::collection::vec(any::<prop::sample::Index>(), 3)) {
        let m = model(seed);
        let t = &m.tree;
        let xs = all(&m);
        let [a, b, c] = [0, 1, 2].map(|i| &xs[picks[i].index(xs.len())]);
        let j = |x: &StoppingTime, y: &StoppingTime| stopping::join(t, x, y).unwrap();
        let mt = |x: &StoppingTime, y: &StoppingTime| stopping::meet(t, x, y).unwrap();
        let le = |x: &StoppingTime, y: &StoppingTime| stopping::le(t, x, y).unwrap();
        prop_assert_eq!(j(a, b), j(b, a));
        prop_assert_eq!(mt(a, b), mt(b, a));
        prop_assert_eq!(j(&j(a, b), c), j(a, &j(b, c)));
        prop_assert_eq!(mt(&mt(a, b), c), mt(a, &mt(b, c)));
        prop_assert_eq!(&j(a, &mt(a, b)), a);
        prop_assert_eq!(&mt(a, &j(a, b)), a);
        prop_assert!(le(a, &j(a, b)) && le(&mt(a, b), a));
        prop_assert_eq!(le(a, b), j(a, b) == *b);
        prop_assert_eq!(le(a, b), mt(a, b) == *a);
        prop_assert!(le(&StoppingTime::at_root(t), a) && le(a, &StoppingTime::at_leaves(t)));
    }

    #[test]
    fn band_counts_match_enumeration(seed in 0u64..10_000, pick in any::<prop::sample::Index>()) {
        let m = model(seed);
        let t = &m.tree;
        let xs = all(&m);
        prop_assert_eq!(stopping::total_count(t, &StoppingTime::at_leaves(t)), xs.len() as u128);
        let rho = &xs[pick.index(xs.len())];
        for v in t.ids() {
            if rho.stops_before(t, v) || rho.contains(v) {
                continue;
            }
            let n = stopping::band_count(t, v, rho).unwrap();
            let band = stopping::enumerate_band(t, v, rho, DEFAULT_ENUM_CAP).unwrap();
            prop_assert_eq!(n, band.len() as u128);
            prop_assert!(band.iter().all(|x| stopping::le(t, x, rho).unwrap() && !x.contains(v)));
        }
    }
}
