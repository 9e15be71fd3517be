mod common;

use std::collections::BTreeMap;
use std::sync::Arc;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use se_mapper::baselines::{brute_force_optimal, greedy_schedule, simulated_annealing, BruteForceLimits, SaConfig};
use se_mapper::device::{
    earliest_fire, place_node, valid_action_mask, validate_mapping, ActionMask, DeviceConfig, Mapping, PlacementState,
};
use se_mapper::env::{run_episode, schedule_return, EnvOptions, MappingEnv, NodeOrder, RandomPolicy};
use se_mapper::ir::{parse_ir, random_graph, serialize_ir, topological_order, DataflowGraph, GeneratorParams, IrGraph};
use se_mapper::policy::MaskedCategorical;
use se_mapper::ppo::{compute_returns_advantages, RolloutBuffer, StepRecord};

fn device() -> impl Strategy<Value = DeviceConfig> {
    (1usize..=4, 1usize..=3, 1u64..=4).prop_flat_map(|(tiles, slots, exec)| {
        (1..=slots).prop_map(move |ii| DeviceConfig { exec_latency: exec, ..DeviceConfig::new(tiles, slots, ii) })
    })
}

fn graph(max_nodes: usize) -> impl Strategy<Value = DataflowGraph> {
    (1..=max_nodes, any::<u64>()).prop_map(|(n, seed)| {
        DataflowGraph::new(random_graph(n, seed, &GeneratorParams::default()).graph).expect("generator emits valid graphs")
    })
}

fn placements(state: &PlacementState) -> BTreeMap<usize, (usize, usize)> {
    state.placed().map(|(n, p)| (n, (p.tile, p.slot))).collect()
}

fn random_walk(g: &DataflowGraph, cfg: &DeviceConfig, seed: u64, order: NodeOrder) -> (MappingEnv, se_mapper::env::Episode) {
    let mut env = MappingEnv::new(Arc::new(g.clone()), cfg.clone(), EnvOptions { order, masking: true }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ep = run_episode(&mut RandomPolicy, &mut env, seed, &mut rng).unwrap();
    (env, ep)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 128, ..ProptestConfig::default() })]

    #[test]
    fn completed_walks_match_the_simulator(g in graph(10), cfg in device(), seed in any::<u64>()) {
        let (env, ep) = random_walk(&g, &cfg, seed, NodeOrder::Topological);
        prop_assume!(!ep.dead_end);
        let (fires, total) = common::simulate(&cfg, g.ir(), &placements(env.state())).expect("simulator finishes");
        prop_assert_eq!(ep.total_cycles, Some(total));
        for (n, p) in env.state().placed() {
            prop_assert_eq!(p.fire_cycle, fires[n]);
        }
    }

    #[test]
    fn fire_cycles_respect_slot_and_predecessors(g in graph(10), cfg in device(), seed in any::<u64>()) {
        let (env, _) = random_walk(&g, &cfg, seed, NodeOrder::Topological);
        let s = env.state();
        for (n, p) in s.placed() {
            prop_assert_eq!(p.fire_cycle % cfg.ii as u64, p.slot as u64);
            prop_assert_eq!(p.ready_time, p.fire_cycle + cfg.exec_latency);
            for &q in g.preds(n) {
                prop_assert!(p.fire_cycle > s.placement(q).unwrap().fire_cycle);
            }
        }
    }

    #[test]
    fn mask_agrees_with_rules_and_placement(g in graph(8), cfg in device(), seed in any::<u64>(), cut in 0usize..8) {
        let (env, _) = random_walk(&g, &cfg, seed, NodeOrder::Topological);
        // Rebuild a prefix of the walk, then probe the next node exhaustively.
        let order = g.topological_order();
        let cut = cut.min(env.state().placed_count());
        let mut state = PlacementState::new(&cfg, g.len());
        for &n in &order[..cut] {
            let p = env.state().placement(n).unwrap();
            state = place_node(&cfg, &state, &g, n, p.tile, p.slot).unwrap();
        }
        prop_assume!(cut < order.len());
        let node = order[cut];
        let mask = valid_action_mask(&cfg, &state, &g, node);
        let placed = placements(&state);
        for tile in 0..cfg.num_tiles {
            for slot in 0..cfg.num_slots {
                let bit = mask.get(tile, slot);
                prop_assert_eq!(bit, common::legal(&cfg, g.ir(), &placed, node, tile, slot));
                prop_assert_eq!(bit, place_node(&cfg, &state, &g, node, tile, slot).is_ok());
            }
        }
    }

    #[test]
    fn earliest_fire_matches_formula(g in graph(8), cfg in device(), seed in any::<u64>()) {
        let (env, _) = random_walk(&g, &cfg, seed, NodeOrder::Topological);
        let s = env.state();
        for (n, p) in s.placed() {
            let preds: Vec<(u64, usize)> = g.preds(n).iter().map(|&q| {
                let pq = s.placement(q).unwrap();
                (pq.fire_cycle, pq.tile)
            }).collect();
            prop_assert_eq!(p.fire_cycle, common::formula_fire(&cfg, &preds, p.tile, p.slot));
            prop_assert_eq!(earliest_fire(&cfg, &s.without(n), &g, n, p.tile, p.slot).unwrap(), p.fire_cycle);
        }
    }

    #[test]
    fn episode_return_is_schedule_return(g in graph(10), cfg in device(), seed in any::<u64>(), random in any::<bool>()) {
        let order = if random { NodeOrder::Random } else { NodeOrder::Topological };
        let (env, ep) = random_walk(&g, &cfg, seed, order);
        prop_assume!(!ep.dead_end);
        let expected = schedule_return(&g, env.state());
        prop_assert!((ep.episode_return - expected).abs() < 1e-9, "{} vs {}", ep.episode_return, expected);
        let report = validate_mapping(&cfg, &g, &ep.mapping);
        prop_assert!(report.is_valid(), "{:?}", report.violations);
    }

    #[test]
    fn dead_end_episodes_end_with_penalty(g in graph(10), cfg in device(), seed in any::<u64>()) {
        let (_, ep) = random_walk(&g, &cfg, seed, NodeOrder::Topological);
        prop_assume!(ep.dead_end);
        let last = ep.trajectory.last().unwrap();
        prop_assert_eq!(last.reward, -cfg.lambda_penalty);
        prop_assert!(last.done && last.action.is_none());
        prop_assert!(last.mask.is_dead_end());
    }

    #[test]
    fn stored_actions_respect_stored_masks(g in graph(10), cfg in device(), seed in any::<u64>()) {
        let (_, ep) = random_walk(&g, &cfg, seed, NodeOrder::Topological);
        for t in &ep.trajectory {
            if let Some(a) = t.action {
                prop_assert!(t.mask.allows(a));
            }
        }
    }

    #[test]
    fn cycle_detection_agrees_with_petgraph(n in 2usize..10, raw in prop::collection::btree_set((0usize..10, 0usize..10), 0..20)) {
        let edges: Vec<(usize, usize)> =
            raw.into_iter().map(|(a, b)| (a % n, b % n)).filter(|(a, b)| a != b).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
        let mut pg = petgraph::graph::DiGraph::<(), ()>::new();
        let ids: Vec<_> = (0..n).map(|_| pg.add_node(())).collect();
        for &(a, b) in &edges {
            pg.add_edge(ids[a], ids[b], ());
        }
        let cyclic = petgraph::algo::is_cyclic_directed(&pg);
        match topological_order(&IrGraph::from_edges("p", n, &edges)) {
            Ok(order) => {
                prop_assert!(!cyclic);
                let mut pos = vec![0; n];
                for (i, &v) in order.iter().enumerate() {
                    pos[v] = i;
                }
                prop_assert_eq!(order.len(), n);
                for &(a, b) in &edges {
                    prop_assert!(pos[a] < pos[b]);
                }
            }
            Err(_) => prop_assert!(cyclic),
        }
    }

    #[test]
    fn ir_json_round_trips(g in graph(12)) {
        let text = serialize_ir(g.ir());
        let back = parse_ir(&text).unwrap();
        let mut want = g.ir().clone();
        want.edges.sort_unstable();
        prop_assert_eq!(&back, &want);
        prop_assert_eq!(serialize_ir(&back), text);
    }

    #[test]
    fn mapping_json_round_trips(g in graph(10), cfg in device(), seed in any::<u64>()) {
        let (_, ep) = random_walk(&g, &cfg, seed, NodeOrder::Topological);
        let text = ep.mapping.to_json();
        prop_assert_eq!(Mapping::from_json(&text).unwrap(), ep.mapping);
    }

    #[test]
    fn sampling_stays_in_support(logits in prop::collection::vec(-20.0f64..20.0, 1..24), bits in prop::collection::vec(any::<bool>(), 24), seed in any::<u64>()) {
        let bits: Vec<bool> = bits[..logits.len()].to_vec();
        let mask = ActionMask::from_bits(bits.clone(), 1);
        let Some(d) = MaskedCategorical::new(&logits, &mask) else {
            prop_assert!(bits.iter().all(|b| !b));
            return Ok(());
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..200 {
            prop_assert!(bits[d.sample(&mut rng)]);
        }
        let total: f64 = d.probs().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
        for (p, b) in d.probs().iter().zip(&bits) {
            if !b { prop_assert_eq!(*p, 0.0); }
        }
    }

    #[test]
    fn returns_are_discounted_suffix_sums(rewards in prop::collection::vec(-10.0f64..0.0, 1..12), split in 0usize..12, gamma in 0.1f64..=1.0) {
        let split = split.min(rewards.len());
        let record = |r: f64| StepRecord {
            graph: 0,
            observation: se_mapper::env::Observation { ts_occupancy: vec![], current_node: None, num_nodes: 1 },
            mask: ActionMask::from_bits(vec![true], 1),
            action: Some(0),
            log_prob: 0.0,
            reward: r,
            value: 0.0,
            done: false,
        };
        let mut buffer = RolloutBuffer {
            steps: rewards.iter().map(|&r| record(r)).collect(),
            episode_starts: if split > 0 && split < rewards.len() { vec![0, split] } else { vec![0] },
            ..Default::default()
        };
        compute_returns_advantages(&mut buffer, gamma, None, false);
        let ends: Vec<usize> = buffer.episode_starts.iter().skip(1).copied().chain([rewards.len()]).collect();
        for (&s, &e) in buffer.episode_starts.iter().zip(&ends) {
            for t in s..e {
                let want: f64 = (t..e).map(|k| gamma.powi((k - t) as i32) * rewards[k]).sum();
                prop_assert!((buffer.returns[t] - want).abs() < 1e-9);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn baselines_are_ordered_and_valid(n in 1usize..=5, gseed in any::<u64>(), cfg in device(), seed in any::<u64>()) {
        let g = DataflowGraph::new(random_graph(n, gseed, &GeneratorParams::default()).graph).unwrap();
        let Ok(greedy) = greedy_schedule(&g, &cfg) else { return Ok(()) };
        let opt = brute_force_optimal(&g, &cfg, BruteForceLimits::default()).unwrap();
        let sa = simulated_annealing(&g, &cfg, &SaConfig { steps: 300, seed, ..Default::default() }).unwrap();
        let greedy_cycles = greedy.total_cycles.unwrap();
        prop_assert!(opt.optimal_cycles <= greedy_cycles);
        prop_assert!(opt.optimal_cycles <= sa.best_cycles);
        prop_assert!(sa.best_cycles <= greedy_cycles);
        prop_assert_eq!(sa.trace[0].objective, greedy_cycles as f64);
        prop_assert!(sa.trace.windows(2).all(|w| w[1].best <= w[0].best));
        for m in [&greedy, &opt.mapping, &sa.mapping] {
            let r = validate_mapping(&cfg, &g, m);
            prop_assert!(r.is_valid(), "{:?}", r.violations);
        }
        let (fires, total) = common::simulate(&cfg, g.ir(), &opt.mapping.placements.iter().map(|(&k, v)| (k, (v.tile, v.slot))).collect()).unwrap();
        prop_assert_eq!(total, opt.optimal_cycles);
        prop_assert_eq!(fires.len(), n);
    }
}
