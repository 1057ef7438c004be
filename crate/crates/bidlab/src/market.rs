//! Two-stage cascade auction market and the episodic bidding process over it.
//!
//! One learning bidder faces a fixed population of static competitors. Each
//! impression carries a rough stage-1 value and an accurate stage-2 value for
//! the bidder, plus two market prices derived from competitor bids: the
//! stage-1 price is a fixed quantile of competitor stage-1 eCPMs (bid times
//! rough value), and the stage-2 price is the second-highest stage-2 eCPM
//! among the competitors that cleared stage 1. The bidder wins an impression
//! when its own eCPM clears both prices and the remaining budget covers the
//! charge. Realized value/price are identified with the stage-2 quantities.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::BidPolicy;
use crate::rng::{chacha, stream};

/// One auction item as seen by the learning bidder.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImpressionOpportunity {
    /// Rough stage-1 value, in (0, value_cap].
    pub v1: f64,
    /// Accurate stage-2 value, in (0, value_cap].
    pub v2: f64,
    /// Realized value credited on a win (identified with `v2`).
    pub v: f64,
    /// Stage-1 market price, in (0, price_cap].
    pub p1: f64,
    /// Stage-2 market price, in (0, price_cap].
    pub p2: f64,
    /// Charged price on a win (identified with `p2`).
    pub p: f64,
}

impl ImpressionOpportunity {
    pub fn in_bounds(&self, value_cap: f64, price_cap: f64) -> bool {
        let val = |x: f64| x > 0.0 && x <= value_cap;
        let pri = |x: f64| x > 0.0 && x <= price_cap;
        val(self.v1) && val(self.v2) && val(self.v) && pri(self.p1) && pri(self.p2) && pri(self.p)
    }
}

/// Bidder state: budget left, whole time steps left, budget consumed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BidState {
    pub budget_left: f64,
    pub time_left: u32,
    pub budget_consumed: f64,
}

impl BidState {
    pub fn initial(budget: f64, horizon: u32) -> Self {
        BidState { budget_left: budget, time_left: horizon, budget_consumed: 0.0 }
    }

    /// State as a raw feature vector `[budget_left, time_left, consumed]`.
    pub fn features(&self) -> [f64; 3] {
        [self.budget_left, self.time_left as f64, self.budget_consumed]
    }
}

/// Result of one auction step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    /// Total value of impressions won this step.
    pub reward: f64,
    /// Total charged price this step.
    pub cost: f64,
    pub won_count: u32,
    pub next_state: BidState,
    pub terminated: bool,
}

/// One recorded transition of the bidding process.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub t: u32,
    pub state: BidState,
    pub action: f64,
    pub reward: f64,
    pub cost: f64,
    pub next_state: BidState,
    pub done: bool,
}

/// Market and episode parameters. Defaults are the desk-scale reference
/// setup: a 96-step day, 100..=500 impressions per step, one learning bidder
/// against 99 static competitors, values capped at 1 and prices at 1000.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MarketConfig {
    /// Episode length T.
    pub steps: u32,
    /// Impression count per step is uniform in `n_min..=n_max`.
    pub n_min: u32,
    pub n_max: u32,
    /// Episode budget is uniform in `[budget_min, budget_max]`.
    pub budget_min: f64,
    pub budget_max: f64,
    /// Upper bound for all values.
    pub value_cap: f64,
    /// Upper bound for all prices.
    pub price_cap: f64,
    /// Action (bid) bounds, `0 < bid_min < bid_max`.
    pub bid_min: f64,
    pub bid_max: f64,
    /// Number of static competitors.
    pub competitors: u32,
    /// Discount factor used in value computations.
    pub gamma: f64,
    /// Seed for the fixed competitor population.
    pub seed: u64,
    /// Competitor bid scalars are drawn once, uniform in this range.
    pub comp_bid_low: f64,
    pub comp_bid_high: f64,
    /// Stage-1 price is this quantile of competitor stage-1 eCPMs.
    pub stage1_quantile: f64,
    /// Values are drawn uniform in `(value_floor, value_cap]`.
    pub value_floor: f64,
    /// Half-width of the uniform noise linking rough to accurate values.
    pub value_coupling: f64,
    /// Amplitude of the deterministic intra-day price-level wave.
    pub level_amplitude: f64,
    /// Half-width of the per-step random price-level factor.
    pub level_noise: f64,
    /// Half-width of the per-episode random price-level factor (demand
    /// varies day to day; only the bidder's budget trajectory reveals it).
    pub episode_level_noise: f64,
    /// Episode ends once the remaining budget drops below this.
    pub exhaust_floor: f64,
}

impl Default for MarketConfig {
    fn default() -> Self {
        MarketConfig {
            steps: 96,
            n_min: 100,
            n_max: 500,
            budget_min: 21_000.0,
            budget_max: 35_000.0,
            value_cap: 1.0,
            price_cap: 1000.0,
            bid_min: 0.01,
            bid_max: 1000.0,
            competitors: 99,
            gamma: 0.99,
            seed: 0,
            comp_bid_low: 0.25,
            comp_bid_high: 2.0,
            stage1_quantile: 0.9,
            value_floor: 0.05,
            value_coupling: 0.3,
            level_amplitude: 0.2,
            level_noise: 0.2,
            episode_level_noise: 0.4,
            exhaust_floor: 1.5,
        }
    }
}

impl MarketConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |f: &str, m: &str| Err(Error::Config(format!("market.{f}: {m}")));
        if self.steps < 1 {
            return bad("steps", "must be at least 1");
        }
        if self.n_min > self.n_max {
            return bad("n_min", "must not exceed n_max");
        }
        if self.n_min == 0 {
            return bad("n_min", "must be positive");
        }
        if !(self.budget_min >= 0.0 && self.budget_min <= self.budget_max) {
            return bad("budget_min", "need 0 <= budget_min <= budget_max");
        }
        if !(self.bid_min > 0.0 && self.bid_min < self.bid_max) {
            return bad("bid_min", "need 0 < bid_min < bid_max");
        }
        if !(self.value_cap > 0.0 && self.price_cap > 0.0) {
            return bad("value_cap", "caps must be positive");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma", "must be in [0, 1]");
        }
        if self.competitors < 2 {
            return bad("competitors", "need at least 2 for a second price");
        }
        if !(self.comp_bid_low > 0.0 && self.comp_bid_low <= self.comp_bid_high) {
            return bad("comp_bid_low", "need 0 < low <= high");
        }
        if !(0.0..1.0).contains(&self.stage1_quantile) {
            return bad("stage1_quantile", "must be in [0, 1)");
        }
        if !(self.value_floor > 0.0 && self.value_floor < self.value_cap) {
            return bad("value_floor", "must be in (0, value_cap)");
        }
        if self.value_coupling < 0.0 {
            return bad("value_coupling", "must be nonnegative");
        }
        if !(0.0..1.0).contains(&self.level_amplitude) {
            return bad("level_amplitude", "must be in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.level_noise) {
            return bad("level_noise", "must be in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.episode_level_noise) {
            return bad("episode_level_noise", "must be in [0, 1)");
        }
        if self.exhaust_floor < 0.0 {
            return bad("exhaust_floor", "must be nonnegative");
        }
        Ok(())
    }
}

/// All impression lists of one episode plus its drawn budget, so that several
/// policies can be replayed against the exact same market realization.
#[derive(Clone, Debug)]
pub struct EpisodeDraw {
    pub budget: f64,
    pub steps: Vec<Vec<ImpressionOpportunity>>,
}

/// Per-impression record of a logged episode (input for replay datasets).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LoggedImpression {
    pub t: u32,
    pub action: f64,
    pub imp: ImpressionOpportunity,
}

/// Full impression log of one episode run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ImpressionLog {
    pub budget: f64,
    pub horizon: u32,
    pub items: Vec<LoggedImpression>,
}

/// Aggregate outcome of one episode.
#[derive(Clone, Debug)]
pub struct EpisodeResult {
    pub transitions: Vec<Transition>,
    /// Undiscounted total won value.
    pub buy_cnt: f64,
    /// Total spend.
    pub con_bdg: f64,
    pub won: u64,
    /// Discounted total won value (gamma^t weights, t starting at 0).
    pub discounted: f64,
    pub budget: f64,
}

/// The simulated advertising market: a validated config plus the fixed
/// competitor population drawn from the config seed.
#[derive(Clone, Debug)]
pub struct MarketEnv {
    cfg: MarketConfig,
    comp_bids: Vec<f64>,
}

struct Scratch {
    e1: Vec<f64>,
    e2: Vec<f64>,
    sorted: Vec<f64>,
}

impl MarketEnv {
    pub fn new(cfg: MarketConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = chacha(cfg.seed, &[stream::POPULATION]);
        let comp_bids = (0..cfg.competitors)
            .map(|_| rng.random_range(cfg.comp_bid_low..=cfg.comp_bid_high))
            .collect();
        Ok(MarketEnv { cfg, comp_bids })
    }

    pub fn config(&self) -> &MarketConfig {
        &self.cfg
    }

    pub fn gamma(&self) -> f64 {
        self.cfg.gamma
    }

    fn value_pair(&self, rng: &mut ChaCha8Rng) -> (f64, f64) {
        let c = &self.cfg;
        let v2 = rng.random_range(c.value_floor..=c.value_cap);
        let noise = rng.random_range(-c.value_coupling..=c.value_coupling) * c.value_cap;
        let v1 = (v2 + noise).clamp(c.value_floor, c.value_cap);
        (v1, v2)
    }

    /// Price level multiplier for step `t`: a deterministic intra-day wave
    /// times a per-step random factor, scaled by the episode demand level.
    fn price_level(&self, t: u32, episode_level: f64, rng: &mut ChaCha8Rng) -> f64 {
        let c = &self.cfg;
        let phase = 2.0 * std::f64::consts::PI * t as f64 / c.steps as f64;
        let wave = 1.0 + c.level_amplitude * phase.sin();
        let noise = 1.0 + rng.random_range(-c.level_noise..=c.level_noise);
        (episode_level * wave * noise).max(0.05)
    }

    fn impression(&self, level: f64, rng: &mut ChaCha8Rng, scratch: &mut Scratch) -> ImpressionOpportunity {
        let c = &self.cfg;
        let (v1, v2) = self.value_pair(rng);
        scratch.e1.clear();
        scratch.e2.clear();
        for &beta in &self.comp_bids {
            let (u1, u2) = self.value_pair(rng);
            scratch.e1.push((beta * u1 * level).min(c.price_cap));
            scratch.e2.push((beta * u2 * level).min(c.price_cap));
        }
        // stage-1 price: fixed quantile of competitor stage-1 eCPMs
        scratch.sorted.clear();
        scratch.sorted.extend_from_slice(&scratch.e1);
        let n = scratch.sorted.len();
        let idx = ((c.stage1_quantile * (n - 1) as f64).floor() as usize).min(n - 1);
        let (_, p1, _) = scratch.sorted.select_nth_unstable_by(idx, f64::total_cmp);
        let p1 = *p1;
        // stage-2 price: second-highest stage-2 eCPM among stage-1 survivors
        // (the quantile threshold is itself a competitor eCPM, so the
        // survivor set is never empty)
        let (mut best, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for i in 0..n {
            if scratch.e1[i] >= p1 {
                let e = scratch.e2[i];
                if e > best {
                    second = best;
                    best = e;
                } else if e > second {
                    second = e;
                }
            }
        }
        let p2 = if second.is_finite() { second } else { best };
        ImpressionOpportunity { v1, v2, v: v2, p1, p2, p: p2 }
    }

    /// Impression list for step `t` at neutral episode demand. Deterministic
    /// given the environment, the step and the generator state.
    pub fn impressions(&self, t: u32, rng: &mut ChaCha8Rng) -> Vec<ImpressionOpportunity> {
        let mut scratch = Scratch {
            e1: Vec::with_capacity(self.comp_bids.len()),
            e2: Vec::with_capacity(self.comp_bids.len()),
            sorted: Vec::with_capacity(self.comp_bids.len()),
        };
        self.impressions_with(t, 1.0, rng, &mut scratch)
    }

    fn impressions_with(
        &self,
        t: u32,
        episode_level: f64,
        rng: &mut ChaCha8Rng,
        scratch: &mut Scratch,
    ) -> Vec<ImpressionOpportunity> {
        let c = &self.cfg;
        let count = rng.random_range(c.n_min..=c.n_max) as usize;
        let level = self.price_level(t, episode_level, rng);
        (0..count).map(|_| self.impression(level, rng, scratch)).collect()
    }

    /// Draws the full market realization of one episode.
    pub fn draw_episode(&self, seed: u64) -> EpisodeDraw {
        let c = &self.cfg;
        let mut rng = chacha(seed, &[stream::EPISODE_ENV, c.seed]);
        let budget = rng.random_range(c.budget_min..=c.budget_max);
        let episode_level = 1.0 + rng.random_range(-c.episode_level_noise..=c.episode_level_noise);
        let mut scratch = Scratch {
            e1: Vec::with_capacity(self.comp_bids.len()),
            e2: Vec::with_capacity(self.comp_bids.len()),
            sorted: Vec::with_capacity(self.comp_bids.len()),
        };
        let steps = (0..c.steps).map(|t| self.impressions_with(t, episode_level, &mut rng, &mut scratch)).collect();
        EpisodeDraw { budget, steps }
    }

    /// One auction step: impressions are processed in arrival order, a win
    /// requires clearing both stage prices and having the charge covered by
    /// the remaining budget.
    pub fn auction_step(&self, state: &BidState, action: f64, imps: &[ImpressionOpportunity]) -> Result<StepOutcome> {
        let c = &self.cfg;
        if !(c.bid_min..=c.bid_max).contains(&action) {
            return Err(Error::Contract(format!(
                "action {action} outside [{}, {}]",
                c.bid_min, c.bid_max
            )));
        }
        if state.budget_left < 0.0 || state.time_left == 0 {
            return Err(Error::Contract("auction step on a finished episode".into()));
        }
        let mut remaining = state.budget_left;
        let mut reward = 0.0;
        let mut cost = 0.0;
        let mut won = 0u32;
        for imp in imps {
            if action * imp.v1 >= imp.p1 && action * imp.v2 >= imp.p2 && imp.p <= remaining {
                remaining -= imp.p;
                reward += imp.v;
                cost += imp.p;
                won += 1;
            }
        }
        let next_state = BidState {
            budget_left: remaining,
            time_left: state.time_left - 1,
            budget_consumed: state.budget_consumed + cost,
        };
        let terminated = next_state.time_left == 0 || next_state.budget_left < c.exhaust_floor;
        Ok(StepOutcome { reward, cost, won_count: won, next_state, terminated })
    }

    /// Runs a policy over a fixed market realization.
    pub fn run_on_draw(&self, draw: &EpisodeDraw, policy: &dyn BidPolicy, pol_rng: &mut ChaCha8Rng) -> Result<EpisodeResult> {
        self.run_inner(draw, policy, pol_rng, None)
    }

    /// Runs a policy on the episode drawn from `seed` (policy randomness on a
    /// separate stream of the same seed).
    pub fn run_episode(&self, policy: &dyn BidPolicy, seed: u64) -> Result<EpisodeResult> {
        let draw = self.draw_episode(seed);
        let mut pol_rng = chacha(seed, &[stream::EPISODE_POLICY, self.cfg.seed]);
        self.run_inner(&draw, policy, &mut pol_rng, None)
    }

    /// Like `run_episode` but also records every impression seen together
    /// with the action taken, for building replay datasets.
    pub fn run_episode_logged(&self, policy: &dyn BidPolicy, seed: u64) -> Result<(EpisodeResult, ImpressionLog)> {
        let draw = self.draw_episode(seed);
        let mut pol_rng = chacha(seed, &[stream::EPISODE_POLICY, self.cfg.seed]);
        let mut log = ImpressionLog { budget: draw.budget, horizon: self.cfg.steps, items: Vec::new() };
        let result = self.run_inner(&draw, policy, &mut pol_rng, Some(&mut log))?;
        Ok((result, log))
    }

    fn run_inner(
        &self,
        draw: &EpisodeDraw,
        policy: &dyn BidPolicy,
        pol_rng: &mut ChaCha8Rng,
        mut log: Option<&mut ImpressionLog>,
    ) -> Result<EpisodeResult> {
        let mut state = BidState::initial(draw.budget, self.cfg.steps);
        let mut transitions = Vec::with_capacity(self.cfg.steps as usize);
        let mut buy_cnt = 0.0;
        let mut con_bdg = 0.0;
        let mut won = 0u64;
        let mut discounted = 0.0;
        let mut disc = 1.0;
        for (t, imps) in draw.steps.iter().enumerate() {
            let t = t as u32;
            let action = policy.bid(&state, t, pol_rng);
            let outcome = self.auction_step(&state, action, imps)?;
            if let Some(log) = log.as_deref_mut() {
                log.items.extend(imps.iter().map(|&imp| LoggedImpression { t, action, imp }));
            }
            transitions.push(Transition {
                t,
                state,
                action,
                reward: outcome.reward,
                cost: outcome.cost,
                next_state: outcome.next_state,
                done: outcome.terminated,
            });
            buy_cnt += outcome.reward;
            con_bdg += outcome.cost;
            won += outcome.won_count as u64;
            discounted += disc * outcome.reward;
            disc *= self.cfg.gamma;
            state = outcome.next_state;
            if outcome.terminated {
                break;
            }
        }
        Ok(EpisodeResult { transitions, buy_cnt, con_bdg, won, discounted, budget: draw.budget })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::ConstantBid;

    fn tiny_cfg() -> MarketConfig {
        MarketConfig { n_min: 3, n_max: 3, competitors: 10, ..MarketConfig::default() }
    }

    #[test]
    fn impression_count_forced_by_range() {
        let env = MarketEnv::new(tiny_cfg()).unwrap();
        let mut rng = chacha(7, &[stream::EPISODE_ENV]);
        let imps = env.impressions(1, &mut rng);
        assert_eq!(imps.len(), 3);
        for imp in &imps {
            assert!(imp.in_bounds(env.config().value_cap, env.config().price_cap), "{imp:?}");
            assert_eq!(imp.v, imp.v2);
            assert_eq!(imp.p, imp.p2);
        }
    }

    #[test]
    fn impression_count_within_reference_range() {
        let env = MarketEnv::new(MarketConfig::default()).unwrap();
        let mut rng = chacha(3, &[stream::EPISODE_ENV]);
        for t in [0u32, 17, 95] {
            let n = env.impressions(t, &mut rng).len();
            assert!((100..=500).contains(&n), "count {n} out of range");
        }
    }

    #[test]
    fn impressions_are_deterministic() {
        let env = MarketEnv::new(tiny_cfg()).unwrap();
        let a = env.impressions(4, &mut chacha(9, &[stream::EPISODE_ENV]));
        let b = env.impressions(4, &mut chacha(9, &[stream::EPISODE_ENV]));
        assert_eq!(a, b);
    }

    fn imp(v1: f64, v2: f64, p1: f64, p2: f64) -> ImpressionOpportunity {
        ImpressionOpportunity { v1, v2, v: v2, p1, p2, p: p2 }
    }

    #[test]
    fn min_bid_with_high_prices_wins_nothing() {
        let env = MarketEnv::new(tiny_cfg()).unwrap();
        let state = BidState::initial(100.0, 96);
        let imps = vec![imp(0.5, 0.5, 10.0, 10.0); 4];
        let out = env.auction_step(&state, env.config().bid_min, &imps).unwrap();
        assert_eq!(out.won_count, 0);
        assert_eq!(out.reward, 0.0);
        assert_eq!(out.cost, 0.0);
    }

    #[test]
    fn boundary_ecpm_equal_to_price_wins() {
        let env = MarketEnv::new(tiny_cfg()).unwrap();
        let state = BidState::initial(100.0, 96);
        // action * v1 == p1 and action * v2 == p2 exactly
        let imps = vec![imp(0.5, 0.25, 2.0, 1.0)];
        let out = env.auction_step(&state, 4.0, &imps).unwrap();
        assert_eq!(out.won_count, 1);
        assert_eq!(out.reward, 0.25);
        assert_eq!(out.cost, 1.0);
    }

    #[test]
    fn stage_filters_select_the_winnable_impression() {
        let env = MarketEnv::new(tiny_cfg()).unwrap();
        let state = BidState::initial(100.0, 96);
        let imps = vec![
            imp(0.1, 0.9, 5.0, 1.0), // fails stage 1: 4 * 0.1 < 5
            imp(0.9, 0.1, 1.0, 5.0), // fails stage 2: 4 * 0.1 < 5
            imp(0.9, 0.8, 1.0, 2.0), // wins both
        ];
        let out = env.auction_step(&state, 4.0, &imps).unwrap();
        assert_eq!(out.won_count, 1);
        assert_eq!(out.reward, 0.8);
        assert_eq!(out.cost, 2.0);
    }

    #[test]
    fn budget_gate_skips_unaffordable_impressions_in_order() {
        let env = MarketEnv::new(tiny_cfg()).unwrap();
        let state = BidState::initial(3.0, 96);
        let imps = vec![imp(0.9, 0.9, 1.0, 2.0), imp(0.9, 0.9, 1.0, 2.0), imp(0.9, 0.9, 1.0, 0.5)];
        let out = env.auction_step(&state, 10.0, &imps).unwrap();
        // first costs 2, second unaffordable (2 > 1 left), third affordable
        assert_eq!(out.won_count, 2);
        assert_eq!(out.cost, 2.5);
        assert!(out.cost <= state.budget_left);
    }

    #[test]
    fn out_of_bounds_action_is_rejected() {
        let env = MarketEnv::new(tiny_cfg()).unwrap();
        let state = BidState::initial(10.0, 96);
        assert!(env.auction_step(&state, 0.0, &[]).is_err());
        assert!(env.auction_step(&state, 1e6, &[]).is_err());
    }

    #[test]
    fn zero_budget_episode_ends_immediately() {
        let cfg = MarketConfig { budget_min: 0.0, budget_max: 0.0, ..tiny_cfg() };
        let env = MarketEnv::new(cfg).unwrap();
        let res = env.run_episode(&ConstantBid(5.0), 1).unwrap();
        assert!(res.transitions.len() <= 1);
        assert_eq!(res.buy_cnt, 0.0);
    }

    #[test]
    fn max_bid_with_tiny_budget_terminates_early() {
        let cfg = MarketConfig { budget_min: 60.0, budget_max: 60.0, ..MarketConfig::default() };
        let env = MarketEnv::new(cfg).unwrap();
        let res = env.run_episode(&ConstantBid(1000.0), 2).unwrap();
        assert!(res.transitions.len() < 96, "episode ran {} steps", res.transitions.len());
        assert!(res.transitions.last().unwrap().done);
        assert!(res.con_bdg <= 60.0 + 1e-9);
    }

    #[test]
    fn episodes_replay_identically() {
        let env = MarketEnv::new(MarketConfig { n_min: 20, n_max: 40, ..MarketConfig::default() }).unwrap();
        let a = env.run_episode(&ConstantBid(8.0), 11).unwrap();
        let b = env.run_episode(&ConstantBid(8.0), 11).unwrap();
        assert_eq!(a.transitions, b.transitions);
        assert_eq!(a.buy_cnt, b.buy_cnt);
    }

    #[test]
    fn budget_is_conserved_along_the_episode() {
        let env = MarketEnv::new(MarketConfig { n_min: 30, n_max: 60, ..MarketConfig::default() }).unwrap();
        let res = env.run_episode(&ConstantBid(12.0), 17).unwrap();
        let budget = res.budget;
        for tr in &res.transitions {
            let s = tr.next_state;
            assert!(
                (s.budget_left + s.budget_consumed - budget).abs() <= 1e-9 * budget.max(1.0),
                "conservation broken at t={}",
                tr.t
            );
        }
        assert!(res.con_bdg <= budget + 1e-9 * budget.max(1.0));
    }

    #[test]
    fn higher_bid_wins_a_superset_when_budget_slack() {
        let env = MarketEnv::new(tiny_cfg()).unwrap();
        let mut rng = chacha(33, &[stream::EPISODE_ENV]);
        let imps = env.impressions(5, &mut rng);
        let state = BidState::initial(1e9, 96);
        let low = env.auction_step(&state, 3.0, &imps).unwrap();
        let high = env.auction_step(&state, 6.0, &imps).unwrap();
        // with unconstrained budget the win set is monotone in the bid
        for imp in &imps {
            let low_win = 3.0 * imp.v1 >= imp.p1 && 3.0 * imp.v2 >= imp.p2;
            let high_win = 6.0 * imp.v1 >= imp.p1 && 6.0 * imp.v2 >= imp.p2;
            assert!(!low_win || high_win);
        }
        assert!(high.won_count >= low.won_count);
    }
}
