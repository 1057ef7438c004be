//! Safe exploration around a trusted policy.
//!
//! The value a policy can lose by deviating from a trusted policy inside an
//! action window is bounded through Lipschitz constants of the reward and Q
//! function; that bound turns a tolerated value loss into an action radius.
//! Inside the resulting zone, exploration samples either from a truncated
//! Gaussian (vanilla) or from the Gaussian tilted by the current critic
//! (`exp{-(a-c)^2/(2 sigma^2) + Q(s,a)/lambda}`), which shifts draws toward
//! actions the critic currently favors while staying within the zone.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{BidState, MarketEnv};
use crate::policy::{Actor, BidPolicy, Critic};
use crate::rng::stream;
use crate::stats::{gaussian_exponent, truncated_normal};

/// Exploration parameters. `radius` is the half-width of the safety zone in
/// action units; `sigma`, `lambda` and `samples` shape the in-zone sampling
/// distribution; the window defaults to the whole episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SerConfig {
    /// Gaussian width of the anchor distribution.
    pub sigma: f64,
    /// Temperature on the critic term; larger values fall back to vanilla.
    pub lambda: f64,
    /// Number of uniform candidate actions drawn per decision.
    pub samples: usize,
    /// Safety-zone half width.
    pub radius: f64,
    /// First exploring step.
    pub window_start: u32,
    /// Last exploring step (inclusive); `None` means the episode end.
    pub window_end: Option<u32>,
    /// Tolerated value loss as a fraction of the trusted policy's value.
    pub safety_fraction: f64,
    /// Explicit tolerated value loss in value units (overrides the fraction).
    pub epsilon_s: Option<f64>,
}

impl Default for SerConfig {
    fn default() -> Self {
        SerConfig {
            sigma: 1.0,
            lambda: 0.1,
            samples: 1000,
            radius: 0.5,
            window_start: 0,
            window_end: None,
            safety_fraction: 0.05,
            epsilon_s: None,
        }
    }
}

impl SerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |f: &str, m: &str| Err(Error::Config(format!("ser.{f}: {m}")));
        if self.sigma <= 0.0 {
            return bad("sigma", "must be positive");
        }
        if self.lambda <= 0.0 {
            return bad("lambda", "must be positive");
        }
        if self.samples == 0 {
            return bad("samples", "must be at least 1");
        }
        if self.radius <= 0.0 {
            return bad("radius", "must be positive");
        }
        if self.safety_fraction <= 0.0 {
            return bad("safety_fraction", "must be positive");
        }
        if let Some(e) = self.epsilon_s {
            if e <= 0.0 {
                return bad("epsilon_s", "must be positive");
            }
        }
        Ok(())
    }
}

/// Action interval around the trusted policy inside a step window.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SafetyZone {
    pub radius: f64,
    pub t_start: u32,
    pub t_end: u32,
}

impl SafetyZone {
    pub fn new(radius: f64, t_start: u32, t_end: u32, horizon: u32) -> Result<Self> {
        if radius <= 0.0 {
            return Err(Error::Config("zone radius must be positive".into()));
        }
        if !(t_start < t_end && t_end <= horizon.saturating_sub(1)) {
            return Err(Error::Config(format!(
                "zone window [{t_start}, {t_end}] must satisfy 0 <= start < end <= {}",
                horizon.saturating_sub(1)
            )));
        }
        Ok(SafetyZone { radius, t_start, t_end })
    }

    pub fn from_config(cfg: &SerConfig, horizon: u32) -> Result<Self> {
        let t_end = cfg.window_end.unwrap_or(horizon.saturating_sub(1));
        SafetyZone::new(cfg.radius, cfg.window_start, t_end, horizon)
    }

    pub fn span(&self) -> u32 {
        self.t_end - self.t_start + 1
    }

    pub fn in_window(&self, t: u32) -> bool {
        (self.t_start..=self.t_end).contains(&t)
    }

    /// Zone interval around `center`, clipped to the action bounds.
    pub fn interval(&self, center: f64, bid_min: f64, bid_max: f64) -> (f64, f64) {
        ((center - self.radius).max(bid_min), (center + self.radius).min(bid_max))
    }
}

/// Zone radius that keeps the worst-case value loss within `epsilon_s`:
/// `epsilon_s / (l_q * gamma^t_start * span)`.
pub fn safety_radius(epsilon_s: f64, l_q: f64, gamma: f64, t_start: u32, span: u32) -> Result<f64> {
    if epsilon_s <= 0.0 || l_q <= 0.0 || span == 0 {
        return Err(Error::Contract("safety radius needs positive tolerance, constant and span".into()));
    }
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::Contract("safety radius needs gamma in (0, 1]".into()));
    }
    Ok(epsilon_s / (l_q * gamma.powi(t_start as i32) * span as f64))
}

/// Reward Lipschitz constant from the stage win-count slopes.
pub fn lipschitz_reward(k1: f64, k2: f64, value_cap: f64) -> f64 {
    (k1 + k2) * value_cap
}

/// Q-function Lipschitz constant from the win-count slopes and the bounds on
/// the value sensitivity to the two budget components.
pub fn lipschitz_q(k1: f64, k2: f64, k3: f64, k4: f64, value_cap: f64, price_cap: f64, gamma: f64) -> f64 {
    (value_cap + gamma * (k3 + k4) * price_cap) * (k1 + k2)
}

/// Empirical Lipschitz constants of one environment/critic pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    /// Stage-1 win-count slope bound.
    pub k1: f64,
    /// Stage-2 win-count slope bound.
    pub k2: f64,
    /// Bound on |dQ/d budget_left|.
    pub k3: f64,
    /// Bound on |dQ/d budget_consumed|.
    pub k4: f64,
    pub l_r: f64,
    pub l_q: f64,
}

/// Sampling budget for constant estimation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConstantsConfig {
    /// Episodes drawn for win-count envelopes.
    pub envelope_episodes: usize,
    /// Log-spaced bid grid size.
    pub bid_grid: usize,
    /// Rollout episodes supplying states for the Q sensitivity probes.
    pub rollout_episodes: usize,
    /// States probed for |dQ/d budget| bounds.
    pub state_samples: usize,
    /// Finite-difference step as a fraction of the max budget.
    pub fd_step_frac: f64,
}

impl Default for ConstantsConfig {
    fn default() -> Self {
        ConstantsConfig {
            envelope_episodes: 10,
            bid_grid: 48,
            rollout_episodes: 6,
            state_samples: 256,
            fd_step_frac: 1e-4,
        }
    }
}

/// Log-spaced bid grid over the action bounds.
pub fn bid_grid(bid_min: f64, bid_max: f64, points: usize) -> Vec<f64> {
    let n = points.max(2);
    (0..n)
        .map(|i| bid_min * (bid_max / bid_min).powf(i as f64 / (n - 1) as f64))
        .collect()
}

/// Win counts against the two stage thresholds for every grid bid.
/// Thresholds are `p1/v1` (stage 1) and `p2/v2` (stage 2), counted
/// independently per stage.
pub fn win_counts_on_grid(imps: &[crate::market::ImpressionOpportunity], grid: &[f64]) -> (Vec<usize>, Vec<usize>) {
    let mut th1: Vec<f64> = imps.iter().map(|i| i.p1 / i.v1).collect();
    let mut th2: Vec<f64> = imps.iter().map(|i| i.p2 / i.v2).collect();
    th1.sort_by(f64::total_cmp);
    th2.sort_by(f64::total_cmp);
    let count = |sorted: &[f64], a: f64| sorted.partition_point(|&th| th <= a);
    let n1 = grid.iter().map(|&a| count(&th1, a)).collect();
    let n2 = grid.iter().map(|&a| count(&th2, a)).collect();
    (n1, n2)
}

/// Steepest pairwise slope of a count curve on the grid, anchored at the
/// origin (zero bids win zero impressions).
fn max_slope(grid: &[f64], counts: &[usize]) -> f64 {
    let mut k: f64 = 0.0;
    for i in 0..grid.len() {
        let from_zero = counts[i] as f64 / grid[i];
        k = k.max(from_zero);
        for j in i + 1..grid.len() {
            let slope = (counts[j] as f64 - counts[i] as f64) / (grid[j] - grid[i]);
            k = k.max(slope);
        }
    }
    k
}

/// Estimates the win-count slope bounds from episode draws and the Q
/// sensitivity bounds from finite differences of the critic along rollout
/// states, then assembles the two Lipschitz constants.
pub fn estimate_constants(
    env: &MarketEnv,
    policy: &dyn BidPolicy,
    critic: &Critic,
    cfg: &ConstantsConfig,
    seed: u64,
) -> Result<Constants> {
    if cfg.envelope_episodes == 0 || cfg.rollout_episodes == 0 || cfg.state_samples == 0 {
        return Err(Error::Contract("constant estimation needs a positive sample budget".into()));
    }
    let mc = env.config();
    let grid = bid_grid(mc.bid_min, mc.bid_max, cfg.bid_grid);
    let mut k1: f64 = 0.0;
    let mut k2: f64 = 0.0;
    for e in 0..cfg.envelope_episodes {
        let draw = env.draw_episode(crate::rng::derive(seed, &[stream::CONSTANTS, e as u64]));
        for imps in &draw.steps {
            let (n1, n2) = win_counts_on_grid(imps, &grid);
            k1 = k1.max(max_slope(&grid, &n1));
            k2 = k2.max(max_slope(&grid, &n2));
        }
    }
    // Q sensitivity to the budget components along visited states
    let mut states = Vec::new();
    for e in 0..cfg.rollout_episodes {
        let ep_seed = crate::rng::derive(seed, &[stream::CONSTANTS, 1000 + e as u64]);
        let res = env.run_episode(policy, ep_seed)?;
        states.extend(res.transitions.iter().map(|tr| (tr.state, tr.action)));
    }
    if states.is_empty() {
        return Err(Error::Contract("no rollout states for sensitivity probes".into()));
    }
    let stride = (states.len() / cfg.state_samples).max(1);
    let h = (cfg.fd_step_frac * mc.budget_max).max(1e-9);
    let mut k3: f64 = 0.0;
    let mut k4: f64 = 0.0;
    for (s, a) in states.iter().step_by(stride) {
        let mut hi = *s;
        let mut lo = *s;
        hi.budget_left += h;
        lo.budget_left -= h;
        k3 = k3.max(((critic.q(&hi, *a) - critic.q(&lo, *a)) / (2.0 * h)).abs());
        let mut hi = *s;
        let mut lo = *s;
        hi.budget_consumed += h;
        lo.budget_consumed -= h;
        k4 = k4.max(((critic.q(&hi, *a) - critic.q(&lo, *a)) / (2.0 * h)).abs());
    }
    Ok(Constants {
        k1,
        k2,
        k3,
        k4,
        l_r: lipschitz_reward(k1, k2, mc.value_cap),
        l_q: lipschitz_q(k1, k2, k3, k4, mc.value_cap, mc.price_cap, mc.gamma),
    })
}

/// Candidate weights from precomputed critic values: weight proportional to
/// `exp{-(a-center)^2/(2 sigma^2) + q/lambda}`, max-stabilized, normalized.
pub fn weights_from_values(actions: &[f64], q_values: &[f64], center: f64, sigma: f64, lambda: f64) -> Vec<(f64, f64)> {
    debug_assert_eq!(actions.len(), q_values.len());
    let logits: Vec<f64> = actions
        .iter()
        .zip(q_values.iter())
        .map(|(&a, &q)| gaussian_exponent(a, center, sigma) + q / lambda)
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut weights: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= sum;
    }
    actions.iter().copied().zip(weights).collect()
}

/// Draws `samples` uniform candidates in the clipped zone and weighs them by
/// the tilted-Gaussian rule. Falls back to the clamped center with weight 1
/// when the clipped zone is degenerate.
pub fn ser_weights(
    state: &BidState,
    center: f64,
    critic: &Critic,
    cfg: &SerConfig,
    zone: (f64, f64),
    rng: &mut ChaCha8Rng,
) -> Vec<(f64, f64)> {
    let (lo, hi) = zone;
    if !(lo < hi) {
        return vec![(center.clamp(hi.min(lo), lo.max(hi)), 1.0)];
    }
    let actions: Vec<f64> = (0..cfg.samples).map(|_| rng.random_range(lo..=hi)).collect();
    let q_values: Vec<f64> = actions.iter().map(|&a| critic.q(state, a)).collect();
    weights_from_values(&actions, &q_values, center, cfg.sigma, cfg.lambda)
}

fn categorical(weights: &[(f64, f64)], rng: &mut ChaCha8Rng) -> f64 {
    let u: f64 = rng.random_range(0.0..1.0);
    let mut acc = 0.0;
    for &(a, w) in weights {
        acc += w;
        if u < acc {
            return a;
        }
    }
    weights.last().expect("nonempty weights").0
}

/// Critic-tilted exploration policy: inside the window, a categorical draw
/// over zone candidates weighted by the tilted Gaussian; outside, exactly the
/// trusted policy.
pub struct SerPolicy<'a> {
    pub safe: &'a Actor,
    pub critic: &'a Critic,
    pub zone: SafetyZone,
    pub cfg: &'a SerConfig,
}

impl SerPolicy<'_> {
    fn zone_at(&self, center: f64) -> (f64, f64) {
        self.zone.interval(center, self.safe.bid_min, self.safe.bid_max)
    }

    /// Deterministic expected action on an evenly spaced candidate grid.
    /// Used when a dataset round needs its behavior policy queried.
    pub fn mean_action(&self, state: &BidState, t: u32) -> f64 {
        let center = self.safe.action(state);
        if !self.zone.in_window(t) {
            return center;
        }
        let (lo, hi) = self.zone_at(center);
        if !(lo < hi) {
            return center.clamp(hi.min(lo), lo.max(hi));
        }
        let m = self.cfg.samples.clamp(2, 64);
        let step = (hi - lo) / m as f64;
        let actions: Vec<f64> = (0..m).map(|i| lo + (i as f64 + 0.5) * step).collect();
        let q_values: Vec<f64> = actions.iter().map(|&a| self.critic.q(state, a)).collect();
        weights_from_values(&actions, &q_values, center, self.cfg.sigma, self.cfg.lambda)
            .iter()
            .map(|(a, w)| a * w)
            .sum()
    }
}

impl BidPolicy for SerPolicy<'_> {
    fn bid(&self, state: &BidState, t: u32, rng: &mut ChaCha8Rng) -> f64 {
        let center = self.safe.action(state);
        if !self.zone.in_window(t) {
            return center;
        }
        let weights = ser_weights(state, center, self.critic, self.cfg, self.zone_at(center), rng);
        categorical(&weights, rng)
    }
}

/// Truncated-Gaussian exploration inside the zone, trusted policy outside.
pub struct VanillaPolicy<'a> {
    pub safe: &'a Actor,
    pub zone: SafetyZone,
    pub sigma: f64,
}

impl BidPolicy for VanillaPolicy<'_> {
    fn bid(&self, state: &BidState, t: u32, rng: &mut ChaCha8Rng) -> f64 {
        let center = self.safe.action(state);
        if !self.zone.in_window(t) {
            return center;
        }
        let (lo, hi) = self.zone.interval(center, self.safe.bid_min, self.safe.bid_max);
        truncated_normal(center, self.sigma, lo, hi, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::MarketConfig;
    use crate::policy::{NetShape, Scaling};
    use crate::rng::chacha;
    use approx::assert_relative_eq;

    #[test]
    fn radius_formula_identity_and_arithmetic() {
        assert_relative_eq!(safety_radius(1.0, 1.0, 1.0, 0, 1).unwrap(), 1.0);
        assert_relative_eq!(safety_radius(2.0, 4.0, 1.0, 0, 2).unwrap(), 0.25);
        // doubling t_start with gamma < 1 scales the radius by gamma^{-t1}
        let g: f64 = 0.9;
        let r1 = safety_radius(1.0, 2.0, g, 3, 4).unwrap();
        let r2 = safety_radius(1.0, 2.0, g, 6, 4).unwrap();
        assert_relative_eq!(r2 / r1, g.powi(-3), max_relative = 1e-12);
        assert!(safety_radius(0.0, 1.0, 1.0, 0, 1).is_err());
        assert!(safety_radius(1.0, -1.0, 1.0, 0, 1).is_err());
    }

    #[test]
    fn reward_constant_formula() {
        assert_relative_eq!(lipschitz_reward(2.0, 3.0, 1.0), 5.0);
        assert_relative_eq!(lipschitz_q(2.0, 3.0, 0.5, 0.5, 1.0, 10.0, 1.0), (1.0 + 10.0) * 5.0);
    }

    #[test]
    fn hand_computed_weights_match_softmax_of_two_term_exponent() {
        let actions = [4.0, 4.5, 5.0];
        let q = [10.0, 12.0, 11.0];
        let (center, sigma, lambda) = (4.5, 1.0, 2.0);
        let got = weights_from_values(&actions, &q, center, sigma, lambda);
        // by hand: logits = -(a-c)^2/2 + q/lambda
        let logits: [f64; 3] = [-0.125 + 5.0, 0.0 + 6.0, -0.125 + 5.5];
        let mx = 6.0;
        let exps: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
        let z: f64 = exps.iter().sum();
        for i in 0..3 {
            assert_relative_eq!(got[i].1, exps[i] / z, max_relative = 1e-12);
        }
        let total: f64 = got.iter().map(|(_, w)| w).sum();
        assert!((total - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn constant_critic_reduces_to_gaussian_weights() {
        let actions = [3.6, 4.1, 4.4, 5.2];
        let q = [7.0; 4];
        let got = weights_from_values(&actions, &q, 4.4, 0.8, 0.5);
        let gauss: Vec<f64> = actions.iter().map(|&a| f64::exp(gaussian_exponent(a, 4.4, 0.8))).collect();
        let z: f64 = gauss.iter().sum();
        for i in 0..4 {
            assert_relative_eq!(got[i].1, gauss[i] / z, max_relative = 1e-12);
        }
    }

    fn test_agents(seed: u64) -> (Actor, Critic) {
        let scaling = Scaling { budget: 35_000.0, horizon: 96.0, action_ref: 10.0, value_scale: 5000.0 };
        let mut rng = chacha(seed, &[stream::NET_INIT]);
        let shape = NetShape { hidden: vec![16, 16], init_bid: 4.5 };
        let actor = Actor::new(&shape, scaling, 0.01, 1000.0, &mut rng).unwrap();
        let critic = Critic::new(&shape, scaling, &mut rng).unwrap();
        (actor, critic)
    }

    #[test]
    fn huge_lambda_recovers_vanilla_weights() {
        let (_, critic) = test_agents(1);
        let s = BidState::initial(30_000.0, 96);
        let cfg = SerConfig { lambda: 1e6, samples: 200, ..SerConfig::default() };
        let mut r1 = chacha(4, &[stream::EPISODE_POLICY]);
        let mut r2 = r1.clone();
        let w_ser = ser_weights(&s, 4.5, &critic, &cfg, (4.0, 5.0), &mut r1);
        // same candidate draws, Gaussian-only weights
        let actions: Vec<f64> = (0..cfg.samples).map(|_| r2.random_range(4.0..=5.0)).collect();
        let zero_q = vec![0.0; actions.len()];
        let w_vanilla = weights_from_values(&actions, &zero_q, 4.5, cfg.sigma, 1.0);
        let sup = w_ser
            .iter()
            .zip(w_vanilla.iter())
            .map(|((a1, w1), (a2, w2))| {
                assert_eq!(a1.to_bits(), a2.to_bits());
                (w1 - w2).abs()
            })
            .fold(0.0, f64::max);
        assert!(sup <= 1e-6, "sup norm {sup}");
    }

    #[test]
    fn ser_action_keeps_window_contract() {
        let (actor, critic) = test_agents(2);
        let cfg = SerConfig { samples: 50, ..SerConfig::default() };
        let zone = SafetyZone::from_config(&cfg, 96).unwrap();
        let pol = SerPolicy { safe: &actor, critic: &critic, zone, cfg: &cfg };
        let s = BidState::initial(30_000.0, 96);
        let mut rng = chacha(5, &[stream::EPISODE_POLICY]);
        let zone2 = SafetyZone::new(0.5, 10, 20, 96).unwrap();
        let pol2 = SerPolicy { safe: &actor, critic: &critic, zone: zone2, cfg: &cfg };
        let center = actor.action(&s);
        // outside the window the trusted action is returned exactly
        assert_eq!(pol2.bid(&s, 5, &mut rng), center);
        assert_eq!(pol2.bid(&s, 21, &mut rng), center);
        // inside, every draw stays within the clipped zone
        for t in [0u32, 40, 95] {
            let a = pol.bid(&s, t, &mut rng);
            assert!((center - 0.5..=center + 0.5).contains(&a), "{a} vs center {center}");
        }
    }

    #[test]
    fn ser_tilts_toward_higher_critic_values() {
        // critic increasing in the action: mean sampled action above center
        let (actor, critic) = test_agents(3);
        let s = BidState::initial(30_000.0, 96);
        let center = actor.action(&s);
        let cfg = SerConfig { samples: 64, lambda: 10.0, ..SerConfig::default() };
        // find whether this critic rises or falls in a at this state
        let q_lo = critic.q(&s, center - 0.4);
        let q_hi = critic.q(&s, center + 0.4);
        let zone = SafetyZone::from_config(&cfg, 96).unwrap();
        let pol = SerPolicy { safe: &actor, critic: &critic, zone, cfg: &cfg };
        let mut rng = chacha(6, &[stream::EPISODE_POLICY]);
        let n = 10_000;
        let mean: f64 = (0..n).map(|_| pol.bid(&s, 1, &mut rng)).sum::<f64>() / n as f64;
        if q_hi > q_lo {
            assert!(mean > center, "mean {mean} center {center}");
        } else {
            assert!(mean < center, "mean {mean} center {center}");
        }
    }

    #[test]
    fn vanilla_action_mean_and_support() {
        let (actor, _) = test_agents(4);
        let s = BidState::initial(30_000.0, 96);
        let center = actor.action(&s);
        let zone = SafetyZone::new(0.5, 0, 95, 96).unwrap();
        let pol = VanillaPolicy { safe: &actor, zone, sigma: 1.0 };
        let mut rng = chacha(7, &[stream::EPISODE_POLICY]);
        let n = 10_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let a = pol.bid(&s, 3, &mut rng);
            assert!((center - 0.5..=center + 0.5).contains(&a));
            sum += a;
        }
        let mean = sum / n as f64;
        // symmetric zone: mean within 3 standard errors of the center
        let se = 0.29 / (n as f64).sqrt();
        assert!((mean - center).abs() <= 3.0 * se, "mean {mean} center {center}");
        // sigma -> 0 collapses to the trusted action
        let tight = VanillaPolicy { safe: &actor, zone, sigma: 1e-12 };
        let a = tight.bid(&s, 3, &mut rng);
        assert!((a - center).abs() <= 1e-6);
    }

    #[test]
    fn degenerate_zone_falls_back_to_center() {
        let (_, critic) = test_agents(5);
        let s = BidState::initial(30_000.0, 96);
        let cfg = SerConfig::default();
        let mut rng = chacha(8, &[stream::EPISODE_POLICY]);
        let w = ser_weights(&s, 4.5, &critic, &cfg, (5.0, 5.0), &mut rng);
        assert_eq!(w.len(), 1);
        assert_relative_eq!(w[0].1, 1.0);
    }

    #[test]
    fn unwinnable_market_has_zero_reward_slope() {
        // bids are capped below every threshold, so no bid wins anything
        let cfg = MarketConfig {
            bid_max: 1.0,
            bid_min: 0.01,
            n_min: 20,
            n_max: 30,
            comp_bid_low: 8.0,
            comp_bid_high: 10.0,
            ..MarketConfig::default()
        };
        let env = MarketEnv::new(cfg).unwrap();
        let (_, critic) = test_agents(6);
        let policy = crate::policy::ConstantBid(0.5);
        let ccfg = ConstantsConfig {
            envelope_episodes: 2,
            rollout_episodes: 1,
            state_samples: 16,
            ..ConstantsConfig::default()
        };
        let c = estimate_constants(&env, &policy, &critic, &ccfg, 3).unwrap();
        assert_eq!(c.k1, 0.0);
        assert_eq!(c.k2, 0.0);
        assert_eq!(c.l_r, 0.0);
    }

    #[test]
    fn estimated_reward_constant_dominates_grid_slopes() {
        let env = MarketEnv::new(MarketConfig { n_min: 50, n_max: 100, ..MarketConfig::default() }).unwrap();
        let (actor, critic) = test_agents(7);
        let ccfg = ConstantsConfig { envelope_episodes: 4, rollout_episodes: 2, ..ConstantsConfig::default() };
        let c = estimate_constants(&env, &actor, &critic, &ccfg, 11).unwrap();
        assert!(c.k1 > 0.0 && c.k2 > 0.0 && c.l_r > 0.0 && c.l_q > 0.0);
        // fresh draws: reward changes along the grid stay within the bound
        let grid = bid_grid(env.config().bid_min, env.config().bid_max, 48);
        for e in 0..2 {
            let draw = env.draw_episode(crate::rng::derive(11, &[stream::CONSTANTS, e]));
            for imps in draw.steps.iter().take(24) {
                let reward_at = |a: f64| -> f64 {
                    imps.iter()
                        .filter(|i| a * i.v1 >= i.p1 && a * i.v2 >= i.p2)
                        .map(|i| i.v)
                        .sum()
                };
                for w in grid.windows(2) {
                    let dr = (reward_at(w[1]) - reward_at(w[0])).abs();
                    assert!(
                        dr <= c.l_r * (w[1] - w[0]) + 1e-9,
                        "slope {} exceeds l_r {}",
                        dr / (w[1] - w[0]),
                        c.l_r
                    );
                }
            }
        }
    }
}
