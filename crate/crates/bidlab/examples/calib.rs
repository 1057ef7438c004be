//! Dev-only training calibration probe (not part of the deliverable).
use bidlab::ddpg::{constant_bid_reference, train_safe_policy, DdpgConfig};
use bidlab::market::{MarketConfig, MarketEnv};

fn main() {
    let env = MarketEnv::new(MarketConfig::default()).unwrap();
    let gate_seeds: Vec<u64> = (0..20u64).map(|i| bidlab::rng::derive(9, &[bidlab::rng::stream::EVAL, 1_000_000 + i])).collect();
    let r = constant_bid_reference(&env, 24, &gate_seeds).unwrap();
    println!("reference: best bid {:.3} value {:.1}", r.best_bid, r.best_value);

    let combos = [
        (200u32, 2.25f64, 1u32, 1e-4f64, 1e-3f64, 20_000usize),
        (300, 2.25, 1, 1e-4, 1e-3, 20_000),
        (300, 1.0, 1, 3e-4, 1e-3, 20_000),
        (300, 2.25, 1, 3e-4, 3e-3, 50_000),
    ];
    for (episodes, noise_var, update_every, alr, clr, buffer) in combos {
        let cfg = DdpgConfig {
            episodes,
            noise_var,
            update_every,
            actor_lr: alr,
            critic_lr: clr,
            buffer_capacity: buffer,
            shape: bidlab::policy::NetShape { hidden: vec![32, 32], init_bid: 5.0 },
            eval_every: 50,
            ..DdpgConfig::default()
        };
        let t0 = std::time::Instant::now();
        let out = train_safe_policy(&env, &cfg, 9).unwrap();
        println!(
            "eps {episodes} noise {noise_var} upd {update_every} lr {alr}: value {:.1} vs ref {:.1} gate {} ({:.1}s) curve {:?}",
            out.policy_value,
            out.reference.best_value,
            out.passes_gate,
            t0.elapsed().as_secs_f32(),
            out.curve.iter().map(|c| c.value.round()).collect::<Vec<_>>()
        );
    }
}
