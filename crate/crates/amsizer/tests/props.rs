//! Property tests over the parser, graph, scoring, and stage grouping.

mod common;

use amsizer::graph::build_graph;
use amsizer::netlist::{parse_netlist, serialize_netlist, suffix_exponent};
use amsizer::score::{
    fom_feasibility, fom_single, score_metric, Direction, Measurement, MetricSpec, ScoreConfig,
    SpecSet,
};
use amsizer::stages::{enumerate_paths, merge_stages, ConductionGraph};
use proptest::prelude::*;
use std::collections::BTreeMap;

proptest! {
    /// Suffix expansion equals the decimal-recomposition table oracle.
    #[test]
    fn suffix_expansion_matches_table_oracle(
        mantissa in 0.001f64..1e4,
        suffix_idx in 0usize..9,
    ) {
        let suffixes = ["", "f", "p", "n", "u", "m", "k", "meg", "g"];
        let suffix = suffixes[suffix_idx];
        let token = format!("{mantissa}{suffix}");
        let parsed = amsizer::netlist::parse_value(&token, 1).unwrap();
        // Oracle: splice the exponent into the decimal text and reparse.
        let exp = suffix_exponent(suffix).unwrap();
        let expected: f64 = format!("{mantissa}e{exp}").parse().unwrap();
        prop_assert_eq!(parsed.literal().unwrap(), expected);
    }

    /// serialize(parse(text)) reparses to an identical netlist.
    #[test]
    fn netlist_round_trip(seed in 0u64..500) {
        let text = common::random_netlist(seed, 12);
        let first = parse_netlist(&text).unwrap();
        let second = parse_netlist(&serialize_netlist(&first)).unwrap();
        prop_assert_eq!(&first, &second);
    }

    /// build_graph then reconstruct yields an equal netlist, and the graph
    /// is bipartite with every terminal accounted for.
    #[test]
    fn graph_losslessness(seed in 0u64..500) {
        let text = common::random_netlist(seed, 12);
        let netlist = parse_netlist(&text).unwrap();
        let graph = build_graph(&netlist).unwrap();
        let terminal_count: usize = netlist.devices.iter().map(|d| d.terminals.len()).sum();
        prop_assert_eq!(graph.edges().len(), terminal_count);
        let back = graph.reconstruct_netlist().unwrap();
        prop_assert_eq!(&netlist, &back);
    }

    /// FoM_feas(X) = 0 iff every normalized score is nonnegative.
    #[test]
    fn feasibility_characterization(values in prop::collection::vec(-1e3f64..1e3, 1..8)) {
        let spec = SpecSet {
            metrics: (0..values.len())
                .map(|i| MetricSpec {
                    name: format!("m{i}"),
                    constraint: 1.0,
                    direction: Direction::Max,
                    unit: String::new(),
                    target: false,
                })
                .collect(),
        };
        let meas = Measurement::from_values(
            values.iter().enumerate().map(|(i, v)| (format!("m{i}"), *v)).collect(),
        );
        let sv = fom_feasibility(&spec, &meas, &ScoreConfig::default()).unwrap();
        prop_assert!(sv.fom <= 0.0);
        let all_ok = sv.r.iter().all(|(_, r)| *r >= 0.0);
        prop_assert_eq!(sv.fom == 0.0, all_ok);
    }

    /// Whenever any non-target score is negative, the single-objective FoM
    /// never goes positive (target reward cannot leak through
    /// infeasibility), and it agrees with the feasibility FoM when the
    /// target itself is violated too.
    #[test]
    fn single_objective_gating(values in prop::collection::vec(-1e3f64..1e3, 2..8)) {
        let spec = SpecSet {
            metrics: (0..values.len())
                .map(|i| MetricSpec {
                    name: format!("m{i}"),
                    constraint: 1.0,
                    direction: Direction::Max,
                    unit: String::new(),
                    target: i == 0,
                })
                .collect(),
        };
        let meas = Measurement::from_values(
            values.iter().enumerate().map(|(i, v)| (format!("m{i}"), *v)).collect(),
        );
        let cfg = ScoreConfig::default();
        let single = fom_single(&spec, &meas, &cfg).unwrap();
        let feas = fom_feasibility(&spec, &meas, &cfg).unwrap();
        let any_nt_bad = single.r.iter().skip(1).any(|(_, r)| *r < 0.0);
        let target_bad = single.r[0].1 <= 0.0;
        if any_nt_bad {
            prop_assert!(single.fom <= 0.0);
        }
        if any_nt_bad && target_bad {
            prop_assert!((single.fom - feas.fom).abs() < 1e-12);
        }
    }

    /// Monotonicity of the normalized score in F, verified by finite
    /// sampling across the F sign boundary. The score has a genuine
    /// extremum at F = -C (the |r| = 2 point), so the monotone domain is
    /// F > -|C|; beyond that the formula decays back toward |r| = 1 by
    /// construction and monotonicity cannot hold globally.
    #[test]
    fn score_monotonicity(c in -100.0f64..100.0) {
        // Monotone interval: the side of the extremum containing C and 0,
        // i.e. [-C, +inf) for C >= 0 and (-inf, -C] for C < 0.
        let (lo, hi) = if c >= 0.0 { (-c, -c + 320.0) } else { (-c - 320.0, -c) };
        let samples: Vec<f64> = (0..=80).map(|i| lo + (hi - lo) * i as f64 / 80.0).collect();
        let scores: Vec<f64> = samples
            .iter()
            .map(|f| score_metric(*f, c, 1.0).unwrap())
            .collect();
        for pair in scores.windows(2) {
            // phi = +1 never decreases; phi = -1 is the exact negation, so
            // it never increases on the same samples.
            prop_assert!(pair[1] >= pair[0] - 1e-12);
        }
    }

    /// merge_stages output partitions the union of path node sets and
    /// equals the transitive-closure oracle.
    #[test]
    fn stage_partition_property(seed in 0u64..300) {
        let mut rng = <rand_chacha::ChaCha12Rng as rand::SeedableRng>::seed_from_u64(seed);
        let (labels, edges, vdd, gnd) = common::random_conduction_graph(&mut rng, 12);
        let cg = ConductionGraph::from_parts(labels, &edges, vdd, gnd);
        let Ok(paths) = enumerate_paths(&cg, 100_000) else {
            return Ok(()); // no conduction path: nothing to partition
        };
        let stages = merge_stages(&cg, &paths);
        // Partition: classes are disjoint and cover the union.
        let mut seen = BTreeMap::new();
        for (i, stage) in stages.iter().enumerate() {
            for &node in &stage.members {
                prop_assert!(seen.insert(node, i).is_none(), "overlapping stages");
            }
        }
        let union: std::collections::BTreeSet<usize> = paths
            .iter()
            .flatten()
            .copied()
            .filter(|&n| n != cg.vdd() && n != cg.gnd())
            .collect();
        prop_assert_eq!(seen.keys().copied().collect::<std::collections::BTreeSet<_>>(), union);
    }
}
