mod common;

use common::{exhaustive_makespan, longest_path, random_graph, GraphShape};
use proptest::prelude::*;
use worldpipe::sched::trace::{from_chrome_trace, to_chrome_trace};
use worldpipe::sched::{optimal_schedule_bruteforce, simulate, validate_schedule, Policy};

const WIDE: GraphShape = GraphShape {
    max_tasks: 30,
    min_duration: 0,
    max_duration: 20,
    with_memory: true,
    allow_host: true,
};

const TINY: GraphShape = GraphShape {
    max_tasks: 6,
    min_duration: 1,
    max_duration: 6,
    with_memory: false,
    allow_host: true,
};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn greedy_and_baseline_schedules_validate(seed in any::<u64>()) {
        let (graph, groups) = random_graph(seed, &WIDE);
        for policy in [Policy::greedy(), Policy::baseline()] {
            let s = simulate(&graph, &groups, policy).unwrap();
            prop_assert_eq!(validate_schedule(&s, &graph, &groups), Ok(()));
        }
    }

    #[test]
    fn greedy_between_critical_path_and_sequential(seed in any::<u64>()) {
        let (graph, groups) = random_graph(seed, &WIDE);
        let greedy = simulate(&graph, &groups, Policy::greedy()).unwrap().makespan_ms();
        let baseline = simulate(&graph, &groups, Policy::baseline()).unwrap().makespan_ms();
        let total: i64 = graph.tasks.iter().map(|t| t.duration_ms).sum();
        prop_assert!(greedy >= longest_path(&graph));
        prop_assert!(greedy <= baseline);
        prop_assert_eq!(baseline, total);
    }

    #[test]
    fn simulation_is_deterministic(seed in any::<u64>()) {
        let (graph, groups) = random_graph(seed, &WIDE);
        let a = simulate(&graph, &groups, Policy::greedy()).unwrap();
        let b = simulate(&graph, &groups, Policy::greedy()).unwrap();
        prop_assert_eq!(to_chrome_trace(&a, &graph, &groups), to_chrome_trace(&b, &graph, &groups));
    }

    #[test]
    fn trace_round_trip(seed in any::<u64>()) {
        let (graph, groups) = random_graph(seed, &WIDE);
        let s = simulate(&graph, &groups, Policy::greedy()).unwrap();
        let text = to_chrome_trace(&s, &graph, &groups);
        let (s2, g2, groups2) = from_chrome_trace(&text).unwrap();
        prop_assert_eq!(s2.makespan_ms(), s.makespan_ms());
        prop_assert_eq!(validate_schedule(&s2, &g2, &groups2), Ok(()));
        prop_assert_eq!(to_chrome_trace(&s2, &g2, &groups2), text);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(150))]

    #[test]
    fn oracle_matches_exhaustive_search(seed in any::<u64>()) {
        let (graph, groups) = random_graph(seed, &TINY);
        let opt = optimal_schedule_bruteforce(&graph, &groups).unwrap();
        let greedy = simulate(&graph, &groups, Policy::greedy()).unwrap();
        prop_assert_eq!(validate_schedule(&opt, &graph, &groups), Ok(()));
        prop_assert!(opt.makespan_ms() <= greedy.makespan_ms());
        prop_assert!(opt.makespan_ms() >= longest_path(&graph));
        prop_assert_eq!(opt.makespan_ms(), exhaustive_makespan(&graph, &groups));
    }
}

#[test]
fn oracle_refuses_large_graphs() {
    let shape = GraphShape {
        max_tasks: 40,
        ..TINY
    };
    let (graph, groups) = (0..)
        .map(|s| random_graph(s, &shape))
        .find(|(g, _)| g.len() > 12)
        .unwrap();
    assert!(optimal_schedule_bruteforce(&graph, &groups).is_err());
}
