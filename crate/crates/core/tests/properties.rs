use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vstream::baselines::{comp1_action, Comp2Tier};
use vstream::config::{resolve_rho, InitialPositions, Initializer};
use vstream::env::{self, Env};
use vstream::experiment::ConservationAudit;
use vstream::metrics::EpisodeTotals;
use vstream::neural::{soft_blend, DenseNet, OutputHead};
use vstream::oracle::{self, DeliveryLaw};
use vstream::SimConfig;

prop_compose! {
    fn small_config()(
        k in 1usize..=4,
        n in 1usize..=6,
        l in 1usize..=3,
        queue_cap in 4u32..=40,
        f in 1u32..=4,
        extra_buffer in 0u32..=20,
        push_frac in 0.1f64..=1.0,
        r_max in 5.0f64..=60.0,
        velocity in 20.0f64..=150.0,
        all_at_zero in any::<bool>(),
    ) -> SimConfig {
        let mut cfg = SimConfig::desk();
        cfg.n_mbs = k;
        cfg.n_vehicles = n;
        cfg.n_quality = l;
        cfg.quality_bitrates = [1.0, 4.0, 16.0][..l].to_vec();
        cfg.queue_cap = queue_cap;
        cfg.playback_rate = f;
        cfg.buffer_cap = f + extra_buffer;
        cfg.push_cap = Some(((push_frac * f64::from(queue_cap)).round() as u32).max(1));
        cfg.r_max_mbps = r_max;
        cfg.velocity_kmh = velocity;
        cfg.episode_len = 30;
        if all_at_zero {
            cfg.initial_positions = InitialPositions::Origin;
        }
        cfg.finalized().expect("generated config is valid")
    }
}

/// Lexicographic brute force: the feasible delivery vector that is largest
/// when compared from the top quality level down.
fn brute_force_delivery(queue: &[u32], capacity: f64, sizes: &[f64]) -> Vec<u32> {
    fn rec(q: usize, queue: &[u32], left: f64, sizes: &[f64], cur: &mut Vec<u32>, best: &mut Option<Vec<u32>>) {
        if q == usize::MAX {
            let better = match best {
                None => true,
                Some(b) => cur.iter().rev().cmp(b.iter().rev()) == std::cmp::Ordering::Greater,
            };
            if better {
                *best = Some(cur.clone());
            }
            return;
        }
        for w in 0..=queue[q] {
            let used = f64::from(w) * sizes[q];
            if used > left {
                break;
            }
            cur[q] = w;
            rec(q.wrapping_sub(1), queue, left - used, sizes, cur, best);
        }
        cur[q] = 0;
    }
    let mut best = None;
    let mut cur = vec![0; queue.len()];
    rec(queue.len() - 1, queue, capacity, sizes, &mut cur, &mut best);
    best.unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn config_round_trips_through_toml(cfg in small_config()) {
        let text = cfg.to_toml_string();
        prop_assert_eq!(SimConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn rho_is_monotone_and_bounded(v in 1.0f64..300.0, o in 10.0f64..2000.0, dv in 0.0f64..50.0, d_o in 0.0f64..500.0) {
        let r = resolve_rho(v, o).unwrap();
        prop_assert!(r > 0.0 && r <= 1.0);
        prop_assert!(resolve_rho(v + dv, o).unwrap() >= r);
        prop_assert!(resolve_rho(v, o + d_o).unwrap() <= r);
    }

    #[test]
    fn delivery_matches_lexicographic_brute_force(
        queue in proptest::collection::vec(0u32..6, 1..=3),
        capacity in 0.0f64..60.0,
    ) {
        let sizes = &[1.0, 3.0, 8.0][..queue.len()];
        let fast = env::deliver_high_quality_first(&queue, capacity, sizes);
        prop_assert_eq!(&fast, &brute_force_delivery(&queue, capacity, sizes));
    }

    #[test]
    fn random_episodes_keep_every_invariant(cfg in small_config(), seed in any::<u64>()) {
        let mut env = Env::new(&cfg, seed).unwrap();
        let mut twin = Env::new(&cfg, seed).unwrap();
        let mut audit = ConservationAudit::new(env.state());
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x55);
        let sizes = cfg.chunk_sizes().to_vec();
        let mut totals = EpisodeTotals::default();
        for _ in 0..cfg.episode_len {
            let state = env.state().clone();
            let raw: Vec<f64> = (0..cfg.action_dim()).map(|_| rng.random::<f64>()).collect();
            let action = env::decode_action(&raw, &state, &cfg);
            let o = env.step(&action).unwrap();
            prop_assert_eq!(&o, &twin.step(&action).unwrap());

            let (k, n, l) = (cfg.n_mbs, cfg.n_vehicles, cfg.n_quality);
            for j in 0..k {
                for i in 0..n {
                    let used: f64 = (0..l).map(|q| f64::from(o.delivery.w.get(j, i, q)) * sizes[q]).sum();
                    prop_assert!(used <= o.delivery.capacities[i] + 1e-9);
                    for q in 0..l {
                        prop_assert!(o.delivery.w.get(j, i, q) <= state.queues.get(j, i, q));
                    }
                }
            }
            o.next_state.check_invariants(&cfg).map_err(TestCaseError::fail)?;
            prop_assert_eq!(o.reward, o.reward_quality * o.reward_drop + o.reward_stall);
            audit.observe(&o).map_err(TestCaseError::fail)?;
            totals.add(&o);
        }
        let m = totals.finish(0);
        for rate in [m.stall_rate, m.mbs_drop_rate, m.vehicle_drop_rate, m.transmission_efficiency].into_iter().flatten() {
            prop_assert!((0.0..=1.0).contains(&rate));
        }
        if let Some(q) = m.mean_quality {
            prop_assert!(q >= 0.0 && q <= cfg.top_bitrate());
        }
    }

    #[test]
    fn decoding_respects_the_active_mask(cfg in small_config(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let state = env::random_state(&cfg, &mut rng);
        let raw: Vec<f64> = (0..cfg.action_dim()).map(|_| rng.random_range(-0.5..1.5)).collect();
        let a = env::decode_action(&raw, &state, &cfg);
        prop_assert_eq!(&env::decode_action(&env::encode_action(&a, &cfg), &state, &cfg), &a);
        for j in 0..cfg.n_mbs {
            for i in 0..cfg.n_vehicles {
                if !env::is_active(&state.positions, j, i) {
                    prop_assert!(a.l.row(j, i).iter().all(|&x| x == 0));
                }
                prop_assert!(a.l.row(j, i).iter().all(|&x| x <= cfg.push_cap()));
            }
        }
    }

    #[test]
    fn baselines_respect_action_constraints(cfg in small_config(), seed in any::<u64>(), frac in 0.05f64..=1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let state = env::random_state(&cfg, &mut rng);
        let bound = ((frac * f64::from(cfg.queue_cap)).round() as u32).max(1);
        let a = comp1_action(&state, bound, &cfg, &mut ChaCha8Rng::seed_from_u64(seed));
        let b = comp1_action(&state, bound, &cfg, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(&a, &b);
        env::check_action(&cfg, &state, &a).unwrap();
        prop_assert!(a.l.as_slice().iter().all(|&x| x <= bound));

        let raw: Vec<f64> = (0..cfg.action_dim()).map(|_| rng.random::<f64>()).collect();
        for tier in [Comp2Tier::Q1, Comp2Tier::Q3, Comp2Tier::Q5] {
            let lane = tier.level(cfg.n_quality);
            let a = env::decode_action_lane(&raw, &state, &cfg, Some(lane));
            env::check_action(&cfg, &state, &a).unwrap();
            for j in 0..cfg.n_mbs {
                for i in 0..cfg.n_vehicles {
                    for q in 0..cfg.n_quality {
                        if q != lane {
                            prop_assert_eq!(a.l.get(j, i, q), 0);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn analytic_pmfs_are_distributions(
        queue in proptest::collection::vec(0u32..5, 1..=3),
        push in 0u32..5,
        r_max in 1.0f64..40.0,
        b in 0u32..10,
        f in 1u32..4,
    ) {
        let sizes = &[2.0, 5.0, 11.0][..queue.len()];
        let law = DeliveryLaw::new(&queue, sizes, r_max).unwrap();
        let cap = 8u32;
        for (q, &c) in queue.iter().enumerate() {
            let marginal = law.marginal(q);
            let pmf = oracle::queue_transition_pmf(c, push, cap, &marginal).unwrap();
            prop_assert!(pmf.iter().all(|&p| p >= 0.0));
            prop_assert!((pmf.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let (lo, hi) = (push.min(cap), (c + push).min(cap));
            for (v, &p) in pmf.iter().enumerate() {
                if p > 0.0 {
                    prop_assert!(v as u32 >= lo && v as u32 <= hi, "mass at {} outside [{}, {}]", v, lo, hi);
                }
            }
        }
        let buffer_cap = 12;
        let pmf = oracle::buffer_transition_pmf(b.min(buffer_cap), &law, f, buffer_cap);
        prop_assert!(pmf.iter().all(|&p| p >= 0.0));
        prop_assert!((pmf.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn repeated_blending_converges_geometrically(seed in any::<u64>(), tau in 0.05f64..=1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let online = DenseNet::initialized(&[3, 4, 2], OutputHead::Sigmoid, Initializer::Xavier, &mut rng).unwrap();
        let mut target = DenseNet::initialized(&[3, 4, 2], OutputHead::Sigmoid, Initializer::Xavier, &mut rng).unwrap();
        let gap = |t: &DenseNet| t.params.iter().zip(online.params.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let start = gap(&target);
        for step in 1..=20 {
            soft_blend(&mut target.params, &online.params, tau).unwrap();
            prop_assert!(target.params.is_finite());
            prop_assert!(target.params.same_shape(&online.params));
            let bound = start * (1.0 - tau).powi(step) + 1e-12;
            prop_assert!(gap(&target) <= bound);
        }
    }
}
