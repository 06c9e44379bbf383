use proptest::prelude::*;
use rand::SeedableRng;

use negmarket::features::{encode, ObservedState};
use negmarket::metrics::{s_pct, t_avg, u_avg, EpisodeResult};
use negmarket::neural::Mlp;
use negmarket::protocol::{
    legal_actions, transition, ActionKind, NegotiationAction, NegotiationThreadState, ProtocolState, Role, Stage,
};
use negmarket::rl::{
    reward_classification, reward_regression, utility, Experience, ReplayBuffer, RewardContext, RewardSpec,
    UtilityFrame, ACTION_DIM,
};
use negmarket::strategies::{SellerStrategy, SellerView};
use negmarket::SimRng;

const KINDS: [ActionKind; 7] = [
    ActionKind::Offer,
    ActionKind::ReqToReserve,
    ActionKind::Reserve,
    ActionKind::Cancel,
    ActionKind::Confirm,
    ActionKind::Accept,
    ActionKind::Exit,
];

fn action(kind: ActionKind, price: f64) -> NegotiationAction {
    match kind {
        ActionKind::Offer => NegotiationAction::offer(price).unwrap(),
        k => NegotiationAction::simple(k),
    }
}

proptest! {
    #[test]
    fn random_walks_respect_the_protocol(
        steps in prop::collection::vec((0usize..7, any::<bool>(), 1.0f64..1000.0), 0..60)
    ) {
        let mut th = NegotiationThreadState::new(1, 0);
        let mut offers: Vec<f64> = Vec::new();
        for (t, (k, by_buyer, price)) in steps.into_iter().enumerate() {
            let actor = if by_buyer { Role::Buyer } else { Role::Seller };
            let before = th.protocol;
            let a = action(KINDS[k], price);
            let legal = legal_actions(before, actor).contains(a.kind());
            let res = th.apply(&a, actor, t as u64);
            prop_assert_eq!(res.is_ok(), legal);
            if !legal {
                prop_assert_eq!(th.protocol, before);
                continue;
            }
            if a.kind() == ActionKind::Offer {
                offers.push(price);
            }
            let after = th.protocol;
            prop_assert_eq!(after.outcome().is_none(), !after.is_terminal());
            prop_assert_eq!(after.turn().is_some(), !after.is_terminal());
            if let Some(best) = th.x_best {
                let min = offers.iter().copied().fold(f64::INFINITY, f64::min);
                prop_assert_eq!(best, min);
            }
            if th.reserved_offer.is_some() {
                prop_assert!(matches!(after.stage(), Some(Stage::S3) | Some(Stage::S4)));
            }
        }
    }

    #[test]
    fn exit_is_always_available(stage in 0usize..4, buyer in any::<bool>(), buyer_turn in any::<bool>()) {
        let stage = Stage::ALL[stage];
        let turn = if buyer_turn { Role::Buyer } else { Role::Seller };
        let actor = if buyer { Role::Buyer } else { Role::Seller };
        let s = ProtocolState::Open { stage, turn };
        prop_assert!(legal_actions(s, actor).contains(ActionKind::Exit));
        let next = transition(s, &NegotiationAction::simple(ActionKind::Exit), actor).unwrap();
        prop_assert!(next.is_terminal());
    }

    #[test]
    fn seller_offers_stay_within_bounds(
        id in 0usize..6,
        ip in 500.0f64..730.0,
        span in 10.0f64..200.0,
        elapsed in 0u64..300_000,
        horizon in 1u64..300_000,
        buyer in prop::collection::vec(250.0f64..800.0, 0..8),
        seed in any::<u64>(),
    ) {
        let s = SellerStrategy::from_id(SellerStrategy::IDS[id]).unwrap();
        let rp = ip - span;
        let mut rng = SimRng::seed_from_u64(seed);
        let view = SellerView { ip, rp, elapsed, horizon, buyer_offers: &buyer, last_own: None };
        let x = s.next_offer(&view, &mut rng);
        prop_assert!(x >= rp - 1e-9 && x <= ip + 1e-9, "{} outside [{}, {}]", x, rp, ip);
    }

    #[test]
    fn metrics_ignore_episode_order(
        outcomes in prop::collection::vec(prop::option::of((0.0f64..1.0, 1u64..200_000)), 1..40),
        seed in any::<u64>(),
    ) {
        let results: Vec<EpisodeResult> = outcomes
            .iter()
            .enumerate()
            .map(|(i, o)| match o {
                Some((u, d)) => EpisodeResult::agreement(i as u64, 400.0, *d, *u),
                None => EpisodeResult::failure(i as u64),
            })
            .collect();
        let mut shuffled = results.clone();
        use rand::seq::SliceRandom;
        shuffled.shuffle(&mut SimRng::seed_from_u64(seed));
        prop_assert_eq!(s_pct(&results).unwrap(), s_pct(&shuffled).unwrap());
        let close = |a: Option<f64>, b: Option<f64>| match (a, b) {
            (Some(a), Some(b)) => (a - b).abs() <= 1e-9 * a.abs().max(1.0),
            (None, None) => true,
            _ => false,
        };
        prop_assert!(close(u_avg(&results).map(|m| m.mean), u_avg(&shuffled).map(|m| m.mean)));
        prop_assert!(close(t_avg(&results).map(|m| m.mean), t_avg(&shuffled).map(|m| m.mean)));
        let s = s_pct(&results).unwrap();
        prop_assert!((0.0..=100.0).contains(&s));
    }

    #[test]
    fn rewards_stay_in_unit_range(
        ip in 300.0f64..400.0,
        span in 50.0f64..200.0,
        frac in 0.0f64..1.0,
        t in 0u64..400_000,
        t_end in 1u64..300_000,
        offers in prop::collection::vec(300.0f64..900.0, 0..6),
        inverted in any::<bool>(),
    ) {
        let rp = ip + span;
        let x = ip + frac * (1.5 * rp - ip);
        let frame = UtilityFrame { ip_b: ip, rp_b: rp, t_end };
        let mut spec = RewardSpec::default();
        if inverted {
            spec.variant = negmarket::rl::DiscountVariant::Inverted;
        }
        for ctx in [
            RewardContext::Agreement { price: x },
            RewardContext::NoDeal,
            RewardContext::Other,
            RewardContext::CounterOffer { price: x, seller_offers: &offers },
        ] {
            let r = reward_classification(&ctx, t, &frame, &spec);
            prop_assert!((-1.0..=1.0).contains(&r), "{:?} -> {}", ctx, r);
        }
        let r = reward_regression(x, &offers, t, &frame, &spec);
        prop_assert!((-1.0..=1.0).contains(&r));
    }

    #[test]
    fn utility_monotonicity(
        ip in 300.0f64..400.0,
        span in 50.0f64..200.0,
        a in 0.0f64..1.0,
        b in 0.0f64..1.0,
        t1 in 1u64..100_000,
        t2 in 1u64..100_000,
    ) {
        let rp = ip + span;
        let frame = UtilityFrame { ip_b: ip, rp_b: rp, t_end: 100_000 };
        let spec = RewardSpec::default();
        let (lo, hi) = (ip + a.min(b) * span, ip + a.max(b) * span);
        if hi > lo {
            prop_assert!(utility(lo, t1, &frame, &spec) > utility(hi, t1, &frame, &spec));
        }
        let x = ip + a * span * 0.99;
        let (early, late) = (t1.min(t2), t1.max(t2));
        prop_assert!(utility(x, early, &frame, &spec) <= utility(x, late, &frame, &spec) + 1e-15);
    }

    #[test]
    fn soft_update_contracts(tau in 0.001f64..1.0, seed in any::<u64>()) {
        let mut rng = SimRng::seed_from_u64(seed);
        let online = Mlp::new(&[5, 7, 2], &mut rng);
        let mut target = Mlp::new(&[5, 7, 2], &mut rng);
        let before = target.clone();
        target.soft_update_from(&online, tau);
        for ((t1, t0), o) in target.params().iter().zip(before.params()).zip(online.params()) {
            prop_assert!(((t1 - o) - (1.0 - tau) * (t0 - o)).abs() <= 1e-12);
        }
    }

    #[test]
    fn replay_buffer_is_bounded_and_reproducible(
        capacity in 2usize..50,
        pushes in 0usize..200,
        seed in any::<u64>(),
    ) {
        let k = capacity / 2;
        prop_assume!(k >= 1);
        let mut b = ReplayBuffer::new(capacity, k).unwrap();
        for i in 0..pushes {
            b.push(Experience {
                state: [i as f64; 10],
                action: [0.0; ACTION_DIM],
                reward: 0.0,
                next_state: [0.0; 10],
                terminal: false,
            });
            prop_assert!(b.len() <= capacity);
        }
        let draw = || {
            b.sample(&mut SimRng::seed_from_u64(seed))
                .map(|v| v.iter().map(|e| e.state[0]).collect::<Vec<_>>())
        };
        let first = draw();
        prop_assert_eq!(&first, &draw());
        if let Some(v) = first {
            let mut d = v.clone();
            d.sort_by(f64::total_cmp);
            d.dedup();
            prop_assert_eq!(d.len(), k);
        }
    }

    #[test]
    fn encoding_is_monotone(
        ns in 1u32..49, nc in 0u32..49, x in 300.0f64..729.0, t_left in 0u64..99_999, stage in 0usize..4,
    ) {
        let s = ObservedState {
            ns_r: ns, nc_r: nc, stage: Stage::ALL[stage], x_best: x, t_left, horizon: 100_000, ip_b: 320.0, rp_b: 520.0,
        };
        let f = encode(&s);
        let bump = [
            encode(&ObservedState { ns_r: ns + 1, ..s }),
            encode(&ObservedState { nc_r: nc + 1, ..s }),
            encode(&ObservedState { x_best: x + 1.0, ..s }),
            encode(&ObservedState { t_left: t_left + 1, ..s }),
        ];
        for (g, i) in bump.iter().zip([0usize, 1, 6, 7]) {
            prop_assert!(g[i] > f[i]);
        }
        prop_assert_eq!(f[2..6].iter().sum::<f64>(), 1.0);
        prop_assert_eq!(f[2 + stage], 1.0);
    }
}
