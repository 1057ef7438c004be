//! Metrics, paired-seed evaluation, off-policy replay scoring against a
//! fractional-knapsack optimum, A/B comparison, and the empirical check of
//! the exploration value bound.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::explore::{estimate_constants, Constants, ConstantsConfig, SafetyZone, SerConfig, SerPolicy};
use crate::market::{EpisodeResult, MarketEnv};
use crate::policy::{Actor, BidPolicy, Critic};
use crate::rng::{chacha, stream};
use crate::stats::{mean, std_err};
use crate::vas::VasDataset;

/// Episodic simulator interface shared by the live market and the replay
/// dataset.
pub trait Simulator: Sync {
    fn episode(&self, policy: &dyn BidPolicy, seed: u64) -> Result<EpisodeResult>;
}

impl Simulator for MarketEnv {
    fn episode(&self, policy: &dyn BidPolicy, seed: u64) -> Result<EpisodeResult> {
        self.run_episode(policy, seed)
    }
}

impl Simulator for VasDataset {
    fn episode(&self, policy: &dyn BidPolicy, seed: u64) -> Result<EpisodeResult> {
        self.run_episode(policy, seed)
    }
}

/// Aggregate metrics over a set of episodes: total won value (the main
/// index), total spend, value per spend, spend per won impression, and the
/// discounted value used by the bound checks.
#[derive(Clone, Debug, Serialize)]
pub struct MetricsReport {
    pub episodes: usize,
    pub buy_cnt: f64,
    pub buy_cnt_se: f64,
    pub con_bdg: f64,
    pub con_bdg_se: f64,
    pub discounted: f64,
    pub discounted_se: f64,
    pub won_per_episode: f64,
    pub roi: Option<f64>,
    pub cpa: Option<f64>,
}

impl MetricsReport {
    fn from_episodes(eps: &[EpisodeSummary]) -> Self {
        let buy: Vec<f64> = eps.iter().map(|e| e.buy_cnt).collect();
        let con: Vec<f64> = eps.iter().map(|e| e.con_bdg).collect();
        let dis: Vec<f64> = eps.iter().map(|e| e.discounted).collect();
        let won = eps.iter().map(|e| e.won as f64).sum::<f64>() / eps.len() as f64;
        let buy_cnt = mean(&buy);
        let con_bdg = mean(&con);
        MetricsReport {
            episodes: eps.len(),
            buy_cnt,
            buy_cnt_se: std_err(&buy),
            con_bdg,
            con_bdg_se: std_err(&con),
            discounted: mean(&dis),
            discounted_se: std_err(&dis),
            won_per_episode: won,
            roi: (con_bdg > 0.0).then(|| buy_cnt / con_bdg),
            cpa: (won > 0.0).then(|| con_bdg / won),
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct EpisodeSummary {
    buy_cnt: f64,
    con_bdg: f64,
    discounted: f64,
    won: u64,
}

impl From<&EpisodeResult> for EpisodeSummary {
    fn from(r: &EpisodeResult) -> Self {
        EpisodeSummary { buy_cnt: r.buy_cnt, con_bdg: r.con_bdg, discounted: r.discounted, won: r.won }
    }
}

/// Mean metrics of one policy over the given episode seeds.
pub fn evaluate<S: Simulator>(sim: &S, policy: &dyn BidPolicy, seeds: &[u64]) -> Result<MetricsReport> {
    if seeds.is_empty() {
        return Err(Error::Contract("evaluation needs at least one episode".into()));
    }
    let eps: Vec<EpisodeSummary> = seeds
        .par_iter()
        .map(|&s| sim.episode(policy, s).map(|r| EpisodeSummary::from(&r)))
        .collect::<Result<_>>()?;
    Ok(MetricsReport::from_episodes(&eps))
}

/// Evaluates several policies against the exact same market realizations
/// (one draw per seed, replayed for every policy). Policy randomness streams
/// are derived per (seed, policy index), so a policy compared against itself
/// reproduces identical episodes.
pub fn evaluate_market(env: &MarketEnv, policies: &[&dyn BidPolicy], seeds: &[u64]) -> Result<Vec<MetricsReport>> {
    if seeds.is_empty() {
        return Err(Error::Contract("evaluation needs at least one episode".into()));
    }
    let per_seed: Vec<Vec<EpisodeSummary>> = seeds
        .par_iter()
        .map(|&seed| {
            let draw = env.draw_episode(seed);
            policies
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    let mut rng = chacha(seed, &[stream::EPISODE_POLICY, env.config().seed, i as u64]);
                    env.run_on_draw(&draw, *p, &mut rng).map(|r| EpisodeSummary::from(&r))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok((0..policies.len())
        .map(|i| {
            let eps: Vec<EpisodeSummary> = per_seed.iter().map(|row| row[i]).collect();
            MetricsReport::from_episodes(&eps)
        })
        .collect())
}

/// Value of the fractional-knapsack relaxation over `(value, price)` items:
/// greedy by value/price ratio, last item taken fractionally.
pub fn greedy_optimum(items: &[(f64, f64)], budget: f64) -> f64 {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&a, &b| (items[a].0 * items[b].1).total_cmp(&(items[b].0 * items[a].1)).reverse());
    let mut left = budget;
    let mut value = 0.0;
    for &i in &order {
        let (v, p) = items[i];
        if p <= left {
            left -= p;
            value += v;
        } else {
            value += v * left / p;
            break;
        }
    }
    value
}

/// Off-policy score of a policy against the replay dataset: replayed value
/// over the hindsight optimum at the same budget, clamped into [0, 1].
pub fn ope_rr_star(policy: &dyn BidPolicy, vas: &VasDataset, budget: f64) -> Result<f64> {
    if vas.is_empty() {
        return Err(Error::EmptyDataset("replay dataset holds no entries".into()));
    }
    let items: Vec<(f64, f64)> = vas.all_entries().map(|e| (e.v, e.p)).collect();
    let best = greedy_optimum(&items, budget);
    if best <= 0.0 {
        return Err(Error::Undefined("hindsight optimum is zero".into()));
    }
    let replated = vas.run_episode_with_budget(policy, budget, 0)?;
    Ok((replated.buy_cnt / best).clamp(0.0, 1.0))
}

/// One metric row of a paired A/B comparison.
#[derive(Clone, Debug, Serialize)]
pub struct AbRow {
    pub metric: String,
    pub a: f64,
    pub b: f64,
    pub delta_pct: Option<f64>,
    pub se_pct: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct AbReport {
    pub rows: Vec<AbRow>,
}

impl AbReport {
    pub fn row(&self, metric: &str) -> Option<&AbRow> {
        self.rows.iter().find(|r| r.metric == metric)
    }
}

/// Paired A/B comparison of two policies on shared market draws. Percentage
/// deltas are `(a - b) / b`; per-seed standard errors are reported for the
/// episode-sum metrics.
pub fn ab_compare(
    policy_a: &dyn BidPolicy,
    policy_b: &dyn BidPolicy,
    env: &MarketEnv,
    seeds: &[u64],
) -> Result<AbReport> {
    let per_seed: Vec<(EpisodeSummary, EpisodeSummary)> = seeds
        .par_iter()
        .map(|&seed| {
            let draw = env.draw_episode(seed);
            let mut ra = chacha(seed, &[stream::EPISODE_POLICY, env.config().seed, 0]);
            let mut rb = chacha(seed, &[stream::EPISODE_POLICY, env.config().seed, 0]);
            let a = env.run_on_draw(&draw, policy_a, &mut ra)?;
            let b = env.run_on_draw(&draw, policy_b, &mut rb)?;
            Ok((EpisodeSummary::from(&a), EpisodeSummary::from(&b)))
        })
        .collect::<Result<_>>()?;
    let a_eps: Vec<EpisodeSummary> = per_seed.iter().map(|p| p.0).collect();
    let b_eps: Vec<EpisodeSummary> = per_seed.iter().map(|p| p.1).collect();
    let ra = MetricsReport::from_episodes(&a_eps);
    let rb = MetricsReport::from_episodes(&b_eps);
    let paired_se = |fa: &dyn Fn(&EpisodeSummary) -> f64, base: f64| -> Option<f64> {
        if base == 0.0 {
            return None;
        }
        let deltas: Vec<f64> = per_seed.iter().map(|(a, b)| (fa(a) - fa(b)) / base * 100.0).collect();
        Some(std_err(&deltas))
    };
    let pct = |a: f64, b: f64| (b != 0.0).then(|| (a - b) / b * 100.0);
    let rows = vec![
        AbRow {
            metric: "buy_cnt".into(),
            a: ra.buy_cnt,
            b: rb.buy_cnt,
            delta_pct: pct(ra.buy_cnt, rb.buy_cnt),
            se_pct: paired_se(&|e| e.buy_cnt, rb.buy_cnt),
        },
        AbRow {
            metric: "con_bdg".into(),
            a: ra.con_bdg,
            b: rb.con_bdg,
            delta_pct: pct(ra.con_bdg, rb.con_bdg),
            se_pct: paired_se(&|e| e.con_bdg, rb.con_bdg),
        },
        AbRow {
            metric: "discounted".into(),
            a: ra.discounted,
            b: rb.discounted,
            delta_pct: pct(ra.discounted, rb.discounted),
            se_pct: paired_se(&|e| e.discounted, rb.discounted),
        },
        AbRow {
            metric: "roi".into(),
            a: ra.roi.unwrap_or(0.0),
            b: rb.roi.unwrap_or(0.0),
            delta_pct: match (ra.roi, rb.roi) {
                (Some(x), Some(y)) => pct(x, y),
                _ => None,
            },
            se_pct: None,
        },
        AbRow {
            metric: "cpa".into(),
            a: ra.cpa.unwrap_or(0.0),
            b: rb.cpa.unwrap_or(0.0),
            delta_pct: match (ra.cpa, rb.cpa) {
                (Some(x), Some(y)) => pct(x, y),
                _ => None,
            },
            se_pct: None,
        },
    ];
    Ok(AbReport { rows })
}

/// Grid settings for the bound verification.
#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
#[serde(default)]
pub struct VerifyConfig {
    pub radii: Vec<f64>,
    /// (window start, span) pairs.
    pub windows: Vec<(u32, u32)>,
    pub eval_episodes: usize,
    /// Episode/step samples for the reward-slope check.
    pub slope_episodes: usize,
    pub constants: ConstantsConfig,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            radii: vec![0.1, 0.25, 0.5],
            windows: vec![(0, 96), (24, 48), (60, 24)],
            eval_episodes: 100,
            slope_episodes: 2,
            constants: ConstantsConfig::default(),
        }
    }
}

/// One grid point of the bound check.
#[derive(Clone, Debug, Serialize)]
pub struct BoundRow {
    pub radius: f64,
    pub t_start: u32,
    pub span: u32,
    pub measured: f64,
    pub bound: f64,
    pub pass: bool,
}

/// Result of the empirical verification: the estimated constants, the
/// reward-slope check against the reward constant, and the value-gap check
/// against `radius * gamma^start * l_q * span` on every grid point.
#[derive(Clone, Debug, Serialize)]
pub struct TheoremReport {
    pub constants: Constants,
    pub reward_slope_max: f64,
    pub reward_slope_ok: bool,
    pub rows: Vec<BoundRow>,
    pub all_pass: bool,
}

/// Measures the value gap between critic-tilted exploration and the trusted
/// policy on a grid of (radius, window) settings and compares it against the
/// Lipschitz bound with constants estimated from the same environment.
pub fn verify_theorems(
    env: &MarketEnv,
    safe: &Actor,
    critic: &Critic,
    ser: &SerConfig,
    cfg: &VerifyConfig,
    seed: u64,
) -> Result<TheoremReport> {
    let mc = env.config();
    let constants = estimate_constants(env, safe, critic, &cfg.constants, seed)?;
    // reward-slope check on fresh draws
    let grid = crate::explore::bid_grid(mc.bid_min, mc.bid_max, cfg.constants.bid_grid);
    let mut slope_max: f64 = 0.0;
    for e in 0..cfg.slope_episodes {
        let draw = env.draw_episode(crate::rng::derive(seed, &[stream::EVAL, 777, e as u64]));
        for imps in &draw.steps {
            let reward_at = |a: f64| -> f64 {
                imps.iter().filter(|i| a * i.v1 >= i.p1 && a * i.v2 >= i.p2).map(|i| i.v).sum()
            };
            let rewards: Vec<f64> = grid.iter().map(|&a| reward_at(a)).collect();
            for i in 0..grid.len() {
                for j in i + 1..grid.len() {
                    let slope = (rewards[j] - rewards[i]).abs() / (grid[j] - grid[i]);
                    slope_max = slope_max.max(slope);
                }
            }
        }
    }
    let reward_slope_ok = slope_max <= constants.l_r + 1e-9;
    // value-gap grid
    let seeds: Vec<u64> = (0..cfg.eval_episodes as u64).map(|i| crate::rng::derive(seed, &[stream::EVAL, i])).collect();
    let mut rows = Vec::new();
    for &radius in &cfg.radii {
        for &(t_start, span) in &cfg.windows {
            if span == 0 || t_start + span > mc.steps {
                return Err(Error::Config(format!(
                    "verify window ({t_start}, {span}) does not fit horizon {}",
                    mc.steps
                )));
            }
            let zone = SafetyZone::new(radius, t_start, t_start + span - 1, mc.steps)?;
            let ser_cfg = SerConfig { radius, ..ser.clone() };
            let explorer = SerPolicy { safe, critic, zone, cfg: &ser_cfg };
            let reports = evaluate_market(env, &[&explorer, safe], &seeds)?;
            let measured = (reports[0].discounted - reports[1].discounted).abs();
            let bound = radius * mc.gamma.powi(t_start as i32) * constants.l_q * span as f64;
            rows.push(BoundRow { radius, t_start, span, measured, bound, pass: measured <= bound });
        }
    }
    let all_pass = reward_slope_ok && rows.iter().all(|r| r.pass);
    Ok(TheoremReport { constants, reward_slope_max: slope_max, reward_slope_ok, rows, all_pass })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::MarketConfig;
    use crate::policy::ConstantBid;
    use crate::vas::log_and_build;
    use approx::assert_relative_eq;

    fn small_env() -> MarketEnv {
        MarketEnv::new(MarketConfig { n_min: 20, n_max: 40, ..MarketConfig::default() }).unwrap()
    }

    #[test]
    fn single_episode_metrics_equal_its_sums() {
        let env = small_env();
        let r = env.run_episode(&ConstantBid(4.5), 3).unwrap();
        let m = evaluate(&env, &ConstantBid(4.5), &[3]).unwrap();
        assert_relative_eq!(m.buy_cnt, r.buy_cnt);
        assert_relative_eq!(m.con_bdg, r.con_bdg);
        assert_relative_eq!(m.discounted, r.discounted);
        assert_eq!(m.episodes, 1);
    }

    #[test]
    fn metric_identities_hold() {
        let env = small_env();
        let m = evaluate(&env, &ConstantBid(5.0), &(0..8u64).collect::<Vec<_>>()).unwrap();
        let roi = m.roi.unwrap();
        assert!((roi * m.con_bdg - m.buy_cnt).abs() <= 1e-9 * m.buy_cnt.abs().max(1.0));
        let cpa = m.cpa.unwrap();
        assert!((cpa * m.won_per_episode - m.con_bdg).abs() <= 1e-9 * m.con_bdg.abs().max(1.0));
    }

    #[test]
    fn unreachable_prices_leave_cpa_absent() {
        let env = small_env();
        // minimum legal bid cannot clear any price in this market
        let m = evaluate(&env, &ConstantBid(0.01), &[1, 2]).unwrap();
        assert_eq!(m.buy_cnt, 0.0);
        assert!(m.cpa.is_none());
        assert!(m.roi.is_none());
    }

    #[test]
    fn greedy_takes_prefix_and_fraction() {
        // ratios: 2.0, 1.0, 0.5; budget covers first item and half the second
        let items = [(2.0, 1.0), (2.0, 2.0), (1.0, 2.0)];
        let v = greedy_optimum(&items, 2.0);
        assert_relative_eq!(v, 2.0 + 2.0 * 0.5);
    }

    #[test]
    fn greedy_dominates_every_integer_subset() {
        let mut rng = chacha(5, &[stream::EVAL]);
        for _ in 0..50 {
            let n = rand::Rng::random_range(&mut rng, 1..=12usize);
            let items: Vec<(f64, f64)> = (0..n)
                .map(|_| {
                    (
                        rand::Rng::random_range(&mut rng, 0.05..1.0),
                        rand::Rng::random_range(&mut rng, 0.5..4.0),
                    )
                })
                .collect();
            let budget = rand::Rng::random_range(&mut rng, 1.0..8.0);
            let relaxed = greedy_optimum(&items, budget);
            let mut best_int = 0.0f64;
            for mask in 0u32..(1 << n) {
                let (mut v, mut p) = (0.0, 0.0);
                for (i, item) in items.iter().enumerate() {
                    if mask & (1 << i) != 0 {
                        v += item.0;
                        p += item.1;
                    }
                }
                if p <= budget {
                    best_int = best_int.max(v);
                }
            }
            assert!(relaxed >= best_int - 1e-12, "relaxation {relaxed} below integer {best_int}");
            let max_item = items.iter().map(|i| i.0).fold(0.0, f64::max);
            assert!(relaxed <= best_int + max_item + 1e-12);
        }
    }

    #[test]
    fn replay_score_edges() {
        let env = small_env();
        let vas = log_and_build(&env, &ConstantBid(4.5), 9).unwrap();
        // losing policy scores zero
        let zero = ope_rr_star(&ConstantBid(0.01), &vas, vas.budget()).unwrap();
        assert_eq!(zero, 0.0);
        // a dominant bid with ample budget wins everything: score 1
        let total_price: f64 = vas.all_entries().map(|e| e.p).sum();
        let one = ope_rr_star(&ConstantBid(1000.0), &vas, total_price + 1.0).unwrap();
        assert_relative_eq!(one, 1.0, epsilon = 1e-12);
        // scores always within [0, 1]
        for bid in [2.0, 4.0, 6.0] {
            let s = ope_rr_star(&ConstantBid(bid), &vas, vas.budget()).unwrap();
            assert!((0.0..=1.0).contains(&s));
        }
    }

    #[test]
    fn ab_compare_policy_with_itself_is_zero() {
        let env = small_env();
        let p = ConstantBid(4.5);
        let rep = ab_compare(&p, &p, &env, &[1, 2, 3]).unwrap();
        for row in &rep.rows {
            if let Some(d) = row.delta_pct {
                assert_eq!(d, 0.0, "{} delta {d}", row.metric);
            }
        }
    }

    #[test]
    fn ab_compare_orders_distinct_policies() {
        let env = small_env();
        let rep = ab_compare(&ConstantBid(4.5), &ConstantBid(3.0), &env, &(0..6u64).collect::<Vec<_>>()).unwrap();
        let buy = rep.row("buy_cnt").unwrap();
        assert!(buy.delta_pct.unwrap() > 0.0);
    }
}
