use equistop::fuzz::{self, FuzzConfig};

#[test]
fn corpus_other_seed_is_clean() {
    let fc = FuzzConfig { seed: 7, instances: 500, ..FuzzConfig::default() };
    let r = fuzz::run(&fc);
    let bad: Vec<_> = r.failures().map(|i| format!("{}: {:?}\n{}", i.index, i.violations, i.text)).collect();
    assert!(bad.is_empty(), "{}", bad.join("\n"));
    // The corpus must exercise time inconsistency.
    let split = r
        .instances
        .iter()
        .filter(|i| {
            let (b, s) = i.summary.split_once(" tau_star=").unwrap();
            b.trim_start_matches("tau_b_root=") != s.split(" approachable=").next().unwrap()
        })
        .count();
    assert!(split >= 15, "only {split} instances separate the two solutions");
}

#[test]
fn single_instance_replays() {
    let fc = FuzzConfig { seed: 11, instances: 30, ..FuzzConfig::default() };
    let all = fuzz::run(&fc);
    let one = fuzz::run_instance(&fc, 17);
    assert_eq!(one.text, all.instances[17].text);
    assert_eq!(one.summary, all.instances[17].summary);
}
