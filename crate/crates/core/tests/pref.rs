use equistop::expr::{Expr, Var};
use equistop::fuzz;
use equistop::model::{parse_model, parse_spec, Model};
use equistop::pref::{self, PreferenceFlow, SupMethod};
use equistop::scalar::Scalar;
use equistop::stopping::{self, StoppingTime, DEFAULT_ENUM_CAP};
use equistop::tree::ScenarioTree;
use proptest::prelude::*;

fn model(seed: u64) -> Model {
    let (text, _) = fuzz::generate(seed, 0, 800);
    parse_model(&text).unwrap()
}

fn all(tree: &ScenarioTree) -> Vec<StoppingTime> {
    stopping::enumerate_all(tree, &StoppingTime::at_leaves(tree), DEFAULT_ENUM_CAP).unwrap()
}

/// States shifted and sibling probabilities made uniform everywhere off
/// the subtree of `v`.
fn mutate_outside(tree: &ScenarioTree, v: equistop::tree::NodeId) -> ScenarioTree {
    let inside = tree.subtree(v);
    let mut specs = tree.to_specs();
    for (id, spec) in tree.ids().zip(specs.iter_mut()) {
        if inside.contains(&id) {
            continue;
        }
        for s in spec.state.iter_mut() {
            *s = *s + Scalar::int(7);
        }
        if let Some(p) = tree.parent(id) {
            if !tree.children(p).iter().any(|c| inside.contains(c)) {
                spec.prob = Scalar::ratio(1, tree.children(p).len() as i64);
            }
        }
    }
    ScenarioTree::from_specs(&specs).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn evaluation_is_measurable(seed in 0u64..10_000, pv in any::<prop::sample::Index>(), pt in any::<prop::sample::Index>()) {
        let m = model(seed);
        let t = &m.tree;
        let ids: Vec<_> = t.ids().collect();
        let v = ids[pv.index(ids.len())];
        let ok: Vec<StoppingTime> = all(t).into_iter().filter(|x| !x.stops_before(t, v)).collect();
        let tau = &ok[pt.index(ok.len())];
        let before = m.flow.evaluate(t, tau, v).unwrap();

        let t2 = mutate_outside(t, v);
        prop_assert_eq!(t2.len(), t.len());
        let tau2 = StoppingTime::new(&t2, tau.stops().iter().copied()).unwrap();
        prop_assert_eq!(m.flow.evaluate(&t2, &tau2, v).unwrap(), before);

        // Agreement on the subtree alone fixes the value.
        let other = StoppingTime::at_leaves(t).paste(t, v, &tau.restricted(t, v));
        prop_assert_eq!(m.flow.evaluate(t, &other, v).unwrap(), before);
    }

    #[test]
    fn band_supremum_is_monotone_in_the_bound(seed in 0u64..10_000, pa in any::<prop::sample::Index>(), pb in any::<prop::sample::Index>()) {
        let m = model(seed);
        let t = &m.tree;
        let xs = all(t);
        let (a, b) = (&xs[pa.index(xs.len())], &xs[pb.index(xs.len())]);
        let (lo, hi) = (stopping::meet(t, a, b).unwrap(), stopping::join(t, a, b).unwrap());
        for v in t.ids() {
            if lo.stops_before(t, v) || lo.contains(v) {
                continue;
            }
            let s1 = pref::sup_band(&m.flow, t, v, &lo, DEFAULT_ENUM_CAP, SupMethod::Auto).unwrap();
            let s2 = pref::sup_band(&m.flow, t, v, &hi, DEFAULT_ENUM_CAP, SupMethod::Auto).unwrap();
            prop_assert!(s2.value.ge(&s1.value), "{} < {}", s2.value, s1.value);
        }
    }

    #[test]
    fn generated_specs_print_and_parse_back(seed in any::<u64>()) {
        let spec = model(seed).spec;
        prop_assert_eq!(parse_spec(&spec.to_string()).unwrap(), spec);
    }

    #[test]
    fn expressions_print_and_parse_back(e in expr()) {
        let printed = e.to_string();
        prop_assert_eq!(Expr::parse(&printed).unwrap(), e, "{}", printed);
    }
}

fn constant() -> impl Strategy<Value = Scalar> {
    prop_oneof![
        (-20i64..20).prop_map(Scalar::int),
        (-20i64..20, 1i64..9).prop_map(|(n, d)| Scalar::ratio(n, d)),
    ]
}

fn expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        constant().prop_map(Expr::Const),
        Just(Expr::Var(Var::Tau)),
        (0usize..3).prop_map(|i| Expr::Var(Var::State(i))),
    ];
    leaf.prop_recursive(4, 24, 2, |inner| {
        let b = |e: Expr| Box::new(e);
        prop_oneof![
            inner.clone().prop_map(move |e| Expr::Neg(b(e))),
            inner.clone().prop_map(move |e| Expr::Abs(b(e))),
            inner.clone().prop_map(move |e| Expr::Exp(b(e))),
            inner.clone().prop_map(move |e| Expr::Sqrt(b(e))),
            (inner.clone(), 0i32..4).prop_map(move |(e, n)| Expr::Pow(b(e), n)),
            (inner.clone(), inner.clone()).prop_map(move |(x, y)| Expr::Add(b(x), b(y))),
            (inner.clone(), inner.clone()).prop_map(move |(x, y)| Expr::Sub(b(x), b(y))),
            (inner.clone(), inner.clone()).prop_map(move |(x, y)| Expr::Mul(b(x), b(y))),
            (inner.clone(), inner.clone()).prop_map(move |(x, y)| Expr::Div(b(x), b(y))),
            (inner.clone(), inner.clone()).prop_map(move |(x, y)| Expr::Max(b(x), b(y))),
            (inner.clone(), inner).prop_map(move |(x, y)| Expr::Min(b(x), b(y))),
        ]
    })
}

#[test]
fn recursion_matches_enumeration_on_expectation_form_trees() {
    let mut done = 0;
    let mut seed = 0;
    while done < 100 {
        seed += 1;
        let m = model(seed);
        if !m.flow.expectation_form() {
            continue;
        }
        done += 1;
        let t = &m.tree;
        let xs = all(t);
        for rho in xs.iter().step_by((xs.len() / 6).max(1)) {
            for v in t.ids() {
                if rho.stops_before(t, v) || rho.contains(v) {
                    continue;
                }
                let dp = pref::sup_band(&m.flow, t, v, rho, DEFAULT_ENUM_CAP, SupMethod::Auto).unwrap();
                let en = pref::sup_band(&m.flow, t, v, rho, DEFAULT_ENUM_CAP, SupMethod::Enumerate).unwrap();
                assert!((dp.value.to_f64() - en.value.to_f64()).abs() <= 1e-12, "seed {seed}");
                assert_eq!(dp.strictly_dominated, en.strictly_dominated, "seed {seed}");
                let at_argmax = m.flow.evaluate(t, &dp.argmax, v).unwrap();
                assert!(at_argmax.tol_eq(&dp.value));
            }
        }
    }
}
