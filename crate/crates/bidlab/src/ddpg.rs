//! Deterministic actor-critic training in the live market, used to produce
//! the trusted baseline policy. Standard recipe: replay buffer, target
//! networks with soft updates, critic on squared TD error, actor ascending
//! the critic, additive Gaussian exploration noise.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::evaluate_market;
use crate::market::{MarketEnv, Transition};
use crate::nets::{soft_update, Adam};
use crate::policy::{Actor, BidPolicy, ConstantBid, Critic, NetShape, Scaling, TrainedPair};
use crate::rng::{chacha, derive, stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DdpgConfig {
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub soft_update: f64,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub gamma: f64,
    /// Variance of the additive exploration noise.
    pub noise_var: f64,
    /// Training episode budget.
    pub episodes: u32,
    /// Environment steps between gradient updates.
    pub update_every: u32,
    pub shape: NetShape,
    /// Action input scale for the critic.
    pub action_ref: f64,
    /// Output scale for the critic.
    pub value_scale: f64,
    /// Episodes for the final evaluation and the fixed-bid reference search.
    pub gate_episodes: usize,
    /// Coarse grid size for the fixed-bid reference search.
    pub reference_grid: usize,
    /// Episodes between training-curve points (0 disables curve evals).
    pub eval_every: u32,
    pub eval_episodes: usize,
}

impl Default for DdpgConfig {
    fn default() -> Self {
        DdpgConfig {
            actor_lr: 1e-4,
            critic_lr: 1e-4,
            soft_update: 0.01,
            buffer_capacity: 1000,
            batch_size: 200,
            gamma: 0.99,
            noise_var: 0.01,
            episodes: 150,
            update_every: 1,
            shape: NetShape::default(),
            action_ref: 10.0,
            value_scale: 5000.0,
            gate_episodes: 20,
            reference_grid: 24,
            eval_every: 25,
            eval_episodes: 20,
        }
    }
}

impl DdpgConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |f: &str, m: &str| Err(Error::Config(format!("ddpg.{f}: {m}")));
        if self.actor_lr <= 0.0 || self.critic_lr <= 0.0 {
            return bad("actor_lr", "learning rates must be positive");
        }
        if !(0.0..=1.0).contains(&self.soft_update) {
            return bad("soft_update", "must be in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma", "must be in [0, 1]");
        }
        if self.buffer_capacity == 0 || self.batch_size == 0 {
            return bad("buffer_capacity", "buffer and batch must be positive");
        }
        if self.noise_var < 0.0 {
            return bad("noise_var", "must be nonnegative");
        }
        if self.update_every == 0 {
            return bad("update_every", "must be positive");
        }
        if self.action_ref <= 0.0 || self.value_scale <= 0.0 {
            return bad("action_ref", "scales must be positive");
        }
        Ok(())
    }

    pub fn scaling(&self, env: &MarketEnv) -> Scaling {
        Scaling {
            budget: env.config().budget_max,
            horizon: env.config().steps as f64,
            action_ref: self.action_ref,
            value_scale: self.value_scale,
        }
    }
}

/// FIFO replay buffer of fixed capacity.
pub struct ReplayBuffer {
    items: Vec<Transition>,
    capacity: usize,
    next: usize,
    filled: bool,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer { items: Vec::with_capacity(capacity), capacity, next: 0, filled: false }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, tr: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(tr);
        } else {
            self.items[self.next] = tr;
            self.filled = true;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn sample(&self, batch: usize, rng: &mut ChaCha8Rng) -> Vec<Transition> {
        (0..batch).map(|_| self.items[rng.random_range(0..self.items.len())]).collect()
    }
}

/// Target networks for TD bootstrapping.
pub struct Targets {
    pub actor: Actor,
    pub critic: Critic,
}

impl Targets {
    pub fn of(pair: &TrainedPair) -> Self {
        Targets { actor: pair.actor.clone(), critic: pair.critic.clone() }
    }

    /// TD target `r + gamma * Q_target(s', mu_target(s'))`, zero bootstrap on
    /// terminal transitions.
    pub fn td_target(&self, tr: &Transition, gamma: f64) -> f64 {
        if tr.done {
            tr.reward
        } else {
            let a2 = self.actor.action(&tr.next_state);
            tr.reward + gamma * self.critic.q(&tr.next_state, a2)
        }
    }
}

/// Squared-TD critic loss and its parameter gradient.
pub fn critic_td_grad(
    batch: &[Transition],
    critic: &Critic,
    targets: &Targets,
    gamma: f64,
) -> Result<(f64, Vec<f64>)> {
    let n = batch.len() as f64;
    let mut grad = vec![0.0; critic.net().param_count()];
    let mut loss = 0.0;
    for tr in batch {
        let y = targets.td_target(tr, gamma);
        let (cache, q) = critic.forward_cache(&tr.state, tr.action);
        let e = q - y;
        loss += 0.5 * e * e / n;
        critic.backward(&cache, e / n, &mut grad);
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite("TD loss".into()));
    }
    Ok((loss, grad))
}

/// Actor loss `-mean Q(s, mu(s))` and its parameter gradient through the
/// critic's action input.
pub fn actor_objective_grad(batch: &[Transition], actor: &Actor, critic: &Critic) -> Result<(f64, Vec<f64>)> {
    let n = batch.len() as f64;
    let mut grad = vec![0.0; actor.net().param_count()];
    let mut scratch = vec![0.0; critic.net().param_count()];
    let mut loss = 0.0;
    for tr in batch {
        let (a_cache, a) = actor.forward_cache(&tr.state);
        let (q_cache, q) = critic.forward_cache(&tr.state, a);
        loss -= q / n;
        scratch.iter_mut().for_each(|g| *g = 0.0);
        let dq_da = critic.backward(&q_cache, -1.0 / n, &mut scratch);
        actor.backward(&a_cache, dq_da, &mut grad);
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite("actor loss".into()));
    }
    Ok((loss, grad))
}

/// One actor-critic update on a batch: critic descends squared TD error
/// against the targets, actor ascends the critic, targets soft-update.
pub fn ddpg_update(
    batch: &[Transition],
    pair: &mut TrainedPair,
    targets: &mut Targets,
    critic_opt: &mut Adam,
    actor_opt: &mut Adam,
    cfg: &DdpgConfig,
) -> Result<(f64, f64)> {
    if batch.is_empty() {
        return Err(Error::Contract("update on an empty batch".into()));
    }
    let (critic_loss, critic_grad) = critic_td_grad(batch, &pair.critic, targets, cfg.gamma)?;
    critic_opt.step(pair.critic.net_mut().params_mut(), &critic_grad)?;
    let (actor_loss, actor_grad) = actor_objective_grad(batch, &pair.actor, &pair.critic)?;
    actor_opt.step(pair.actor.net_mut().params_mut(), &actor_grad)?;
    soft_update(targets.critic.net_mut(), pair.critic.net(), cfg.soft_update)?;
    soft_update(targets.actor.net_mut(), pair.actor.net(), cfg.soft_update)?;
    Ok((critic_loss, actor_loss))
}

#[derive(Clone, Debug, Serialize)]
pub struct CurvePoint {
    pub episode: u32,
    pub value: f64,
}

/// Fixed-bid reference: coarse log grid then a linear refinement around the
/// best coarse point, each bid evaluated on shared draws.
#[derive(Clone, Debug, Serialize)]
pub struct ReferenceReport {
    pub best_bid: f64,
    pub best_value: f64,
}

pub fn constant_bid_reference(env: &MarketEnv, grid: usize, seeds: &[u64]) -> Result<ReferenceReport> {
    let mc = env.config();
    let coarse = crate::explore::bid_grid(mc.bid_min, mc.bid_max, grid.max(4));
    let eval_bids = |bids: &[f64]| -> Result<Vec<f64>> {
        let policies: Vec<ConstantBid> = bids.iter().map(|&b| ConstantBid(b)).collect();
        let refs: Vec<&dyn BidPolicy> = policies.iter().map(|p| p as &dyn BidPolicy).collect();
        Ok(evaluate_market(env, &refs, seeds)?.into_iter().map(|m| m.buy_cnt).collect())
    };
    let values = eval_bids(&coarse)?;
    let best = values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .expect("nonempty grid");
    let lo = coarse[best.saturating_sub(1)];
    let hi = coarse[(best + 1).min(coarse.len() - 1)];
    let fine: Vec<f64> = (0..16).map(|i| lo + (hi - lo) * i as f64 / 15.0).collect();
    let fine_values = eval_bids(&fine)?;
    let mut best_bid = coarse[best];
    let mut best_value = values[best];
    for (b, v) in fine.iter().zip(fine_values.iter()) {
        if *v > best_value {
            best_value = *v;
            best_bid = *b;
        }
    }
    Ok(ReferenceReport { best_bid, best_value })
}

/// Outcome of baseline training, including the fixed-bid quality gate.
pub struct SafeTrainResult {
    pub pair: TrainedPair,
    pub targets: Targets,
    pub curve: Vec<CurvePoint>,
    pub reference: ReferenceReport,
    pub policy_value: f64,
    pub passes_gate: bool,
}

/// Trains the trusted baseline in the live market. The returned report
/// carries the fixed-bid reference comparison; callers that need a
/// non-degenerate baseline must check `passes_gate`.
pub fn train_safe_policy(env: &MarketEnv, cfg: &DdpgConfig, seed: u64) -> Result<SafeTrainResult> {
    cfg.validate()?;
    let scaling = cfg.scaling(env);
    let mut init_rng = chacha(seed, &[stream::NET_INIT]);
    let mc = env.config().clone();
    let mut pair = TrainedPair {
        actor: Actor::new(&cfg.shape, scaling, mc.bid_min, mc.bid_max, &mut init_rng)?,
        critic: Critic::new(&cfg.shape, scaling, &mut init_rng)?,
    };
    let mut targets = Targets::of(&pair);
    let mut critic_opt = Adam::new(cfg.critic_lr, pair.critic.net().param_count());
    let mut actor_opt = Adam::new(cfg.actor_lr, pair.actor.net().param_count());
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity);
    let mut train_rng = chacha(seed, &[stream::TRAIN]);
    let noise_std = cfg.noise_var.sqrt();
    let mut curve = Vec::new();
    let eval_seeds: Vec<u64> = (0..cfg.eval_episodes as u64).map(|i| derive(seed, &[stream::EVAL, i])).collect();
    let mut steps_done: u64 = 0;
    for ep in 0..cfg.episodes {
        let draw = env.draw_episode(derive(seed, &[stream::TRAIN, ep as u64]));
        let mut state = crate::market::BidState::initial(draw.budget, mc.steps);
        for (t, imps) in draw.steps.iter().enumerate() {
            let noise = noise_std * crate::stats::standard_normal(&mut train_rng);
            let action = (pair.actor.action(&state) + noise).clamp(mc.bid_min, mc.bid_max);
            let out = env.auction_step(&state, action, imps)?;
            buffer.push(Transition {
                t: t as u32,
                state,
                action,
                reward: out.reward,
                cost: out.cost,
                next_state: out.next_state,
                done: out.terminated,
            });
            steps_done += 1;
            if buffer.len() >= cfg.batch_size && steps_done % cfg.update_every as u64 == 0 {
                let batch = buffer.sample(cfg.batch_size, &mut train_rng);
                ddpg_update(&batch, &mut pair, &mut targets, &mut critic_opt, &mut actor_opt, cfg)
                    .map_err(|e| Error::Divergence(format!("episode {ep}, step {t}: {e}")))?;
            }
            state = out.next_state;
            if out.terminated {
                break;
            }
        }
        if cfg.eval_every > 0 && (ep + 1) % cfg.eval_every == 0 {
            let report = evaluate_market(env, &[&pair.actor], &eval_seeds)?;
            curve.push(CurvePoint { episode: ep + 1, value: report[0].buy_cnt });
        }
    }
    let gate_seeds: Vec<u64> =
        (0..cfg.gate_episodes as u64).map(|i| derive(seed, &[stream::EVAL, 1_000_000 + i])).collect();
    let reference = constant_bid_reference(env, cfg.reference_grid, &gate_seeds)?;
    let policy_value = evaluate_market(env, &[&pair.actor], &gate_seeds)?[0].buy_cnt;
    let passes_gate = policy_value > reference.best_value;
    Ok(SafeTrainResult { pair, targets, curve, reference, policy_value, passes_gate })
}
