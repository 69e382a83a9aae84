//! Run-level properties of the memorization algorithm.

use pjoin::learn::{self, Delay, LearnConfig, Learner, Pattern};
use pjoin::rng;
use proptest::prelude::*;

fn random_run(n: usize, m: usize, rounds: usize, seed: u64) -> (Vec<Pattern>, Vec<usize>) {
    let mut r = rng::seeded(seed);
    let patterns: Vec<Pattern> = (0..m).map(|_| Pattern::random(n, &mut r)).collect();
    let schedule = learn::round_schedule(m, rounds, &mut r);
    (patterns, schedule)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn presentations_keep_their_invariants(n in 2usize..14, m in 1usize..4, seed in any::<u64>()) {
        let (patterns, schedule) = random_run(n, m, 3, seed);
        let cfg = LearnConfig { t_max: Some(400), ..Default::default() };
        let rep = learn::learn_run(&patterns, &schedule, cfg, seed).unwrap();
        for p in &rep.presentations {
            prop_assert_eq!(p.invariant_violations, 0);
            prop_assert!(p.downward <= p.firings);
            prop_assert!(p.sensors_fired <= n);
            prop_assert_eq!(p.sensors_done_at.is_some(), p.sensors_fired == n);
            let logged: usize = p.log.iter().map(|s| s.firings).sum();
            prop_assert_eq!(logged, p.firings);
        }
    }

    #[test]
    fn top_item_never_fires_for_another_pattern(n in 3usize..12, seed in any::<u64>()) {
        let (patterns, schedule) = random_run(n, 3, 2, seed);
        let cfg = LearnConfig { t_max: Some(400), ..Default::default() };
        let rep = learn::learn_run(&patterns, &schedule, cfg, seed).unwrap();

        // Replaying the same presentations on a fresh learner gives the same state.
        let mut learner = Learner::new(n, cfg, seed).unwrap();
        let mut shown = vec![false; patterns.len()];
        for &pid in &schedule {
            let start = learner.net.now();
            learner.present(&patterns[pid], pid).unwrap();
            for (other, top) in rep.top.iter().enumerate() {
                let Some(top) = *top else { continue };
                if other == pid || !shown[other] || patterns[other] == patterns[pid] {
                    continue;
                }
                let fired = learner.net.node(top).last_full.is_some_and(|t| t >= start);
                prop_assert!(!fired, "top item of pattern {} fired while showing {}", other, pid);
            }
            shown[pid] = true;
        }
    }
}

#[test]
fn all_sensors_fire_under_the_default_cap() {
    let n = 100;
    let runs = 40;
    let cfg = LearnConfig::default();
    assert!(cfg.t_max_for(n) as f64 >= 4.0 * (n as f64).ln() + 2.0 * (n as f64).ln() / cfg.p);
    let complete = (0..runs)
        .filter(|&s| {
            let (patterns, schedule) = random_run(n, 2, 1, rng::derive(0x51, s));
            let rep = learn::learn_run(&patterns, &schedule, cfg, s).unwrap();
            rep.presentations.iter().all(|p| p.sensors_done_at.is_some())
        })
        .count();
    assert!(complete as f64 >= 0.95 * runs as f64, "{complete}/{runs}");
}

#[test]
fn max_level_is_logarithmic() {
    let n = 100;
    let runs = 40;
    let cap = 4.0 * (n as f64).ln();
    let within = (0..runs)
        .filter(|&s| {
            let (patterns, schedule) = random_run(n, 1, 1, rng::derive(0x52, s));
            let cfg = LearnConfig { t_max: Some(2000), ..Default::default() };
            let rep = learn::learn_run(&patterns, &schedule, cfg, s).unwrap();
            rep.max_level as f64 <= cap
        })
        .count();
    assert!(within as f64 >= 0.95 * runs as f64, "{within}/{runs}");
}

#[test]
fn new_pjoins_reach_zero_and_stay_there_with_a_long_delay() {
    let (n, m, rounds) = (40, 10, 10);
    let cfg = LearnConfig { delay: Delay { slope: 2, offset: 8 }, t_max: Some(2000), ..Default::default() };
    for s in 0..6u64 {
        let (patterns, schedule) = random_run(n, m, rounds, rng::derive(0x53, s));
        let rep = learn::learn_run(&patterns, &schedule, cfg, s).unwrap();
        let per_round: Vec<usize> =
            rep.presentations.chunks(m).map(|r| r.iter().map(|p| p.new_pjoins.len()).sum()).collect();
        let first_zero = per_round.iter().position(|&c| c == 0).expect("some round creates nothing");
        assert!(per_round[first_zero..].iter().all(|&c| c == 0), "seed {s}: {per_round:?}");
        assert!(rep.stabilization_round.is_some_and(|k| k <= 12), "seed {s}: {per_round:?}");
    }
}
