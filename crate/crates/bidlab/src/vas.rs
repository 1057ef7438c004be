//! Frozen replay environment built from one policy's stage-2 logs.
//!
//! The replay dataset keeps only the impressions the logging bidder carried
//! into stage 2 (its bid cleared the stage-1 price at logging time), with
//! their values and market prices frozen. Replaying against it tests a
//! policy against a single-stage auction at constant prices — exactly the
//! setting whose rankings can invert relative to the live market.

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{BidState, ImpressionLog, MarketEnv, StepOutcome, Transition};
use crate::policy::BidPolicy;
use crate::record::{read_header_jsonl, write_header_jsonl, ReplayHeader, STAGE2_LOG_KIND};
use crate::rng::{chacha, stream};
use crate::stats::spearman;

/// One stage-2 log entry: an impression the logging bidder entered stage 2 on.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VasLogEntry {
    pub t: u32,
    pub v2: f64,
    pub p2: f64,
    pub v: f64,
    pub p: f64,
}

/// Episode frame carried over from the logging environment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayRules {
    pub bid_min: f64,
    pub bid_max: f64,
    pub exhaust_floor: f64,
    pub gamma: f64,
}

/// The frozen replay dataset: per-step stage-2 log entries plus the logging
/// budget and horizon. Immutable after construction.
#[derive(Clone, Debug)]
pub struct VasDataset {
    steps: Vec<Vec<VasLogEntry>>,
    budget: f64,
    horizon: u32,
    rules: ReplayRules,
}

/// Builds the replay dataset from a fully logged episode by re-applying the
/// stage-1 predicate `a * v1 >= p1` with the logged action.
pub fn build_vas(log: &ImpressionLog, rules: ReplayRules) -> Result<VasDataset> {
    if log.items.is_empty() {
        return Err(Error::EmptyDataset("impression log holds no impressions".into()));
    }
    let mut steps = vec![Vec::new(); log.horizon as usize];
    for item in &log.items {
        let imp = &item.imp;
        if item.action * imp.v1 >= imp.p1 {
            steps[item.t as usize].push(VasLogEntry { t: item.t, v2: imp.v2, p2: imp.p2, v: imp.v, p: imp.p });
        }
    }
    Ok(VasDataset { steps, budget: log.budget, horizon: log.horizon, rules })
}

impl VasDataset {
    pub fn budget(&self) -> f64 {
        self.budget
    }

    pub fn horizon(&self) -> u32 {
        self.horizon
    }

    pub fn rules(&self) -> &ReplayRules {
        &self.rules
    }

    pub fn entries(&self, t: u32) -> &[VasLogEntry] {
        &self.steps[t as usize]
    }

    pub fn len(&self) -> usize {
        self.steps.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn all_entries(&self) -> impl Iterator<Item = &VasLogEntry> {
        self.steps.iter().flatten()
    }

    /// One replay step: a pure function of (state, action, stored entries).
    /// A win needs `a * v2 >= p2` and the charge covered by the remaining
    /// budget, entries processed in stored order.
    pub fn step(&self, state: &BidState, action: f64, t: u32) -> Result<StepOutcome> {
        if !(self.rules.bid_min..=self.rules.bid_max).contains(&action) {
            return Err(Error::Contract(format!(
                "action {action} outside [{}, {}]",
                self.rules.bid_min, self.rules.bid_max
            )));
        }
        if state.time_left == 0 {
            return Err(Error::Contract("replay step on a finished episode".into()));
        }
        let mut remaining = state.budget_left;
        let mut reward = 0.0;
        let mut cost = 0.0;
        let mut won = 0u32;
        for e in self.entries(t) {
            if action * e.v2 >= e.p2 && e.p <= remaining {
                remaining -= e.p;
                reward += e.v;
                cost += e.p;
                won += 1;
            }
        }
        let next_state = BidState {
            budget_left: remaining,
            time_left: state.time_left - 1,
            budget_consumed: state.budget_consumed + cost,
        };
        let terminated = next_state.time_left == 0 || next_state.budget_left < self.rules.exhaust_floor;
        Ok(StepOutcome { reward, cost, won_count: won, next_state, terminated })
    }

    /// Replays a policy through the whole dataset with the logging budget.
    pub fn run_episode(&self, policy: &dyn BidPolicy, seed: u64) -> Result<crate::market::EpisodeResult> {
        self.run_episode_with_budget(policy, self.budget, seed)
    }

    /// Replay with an explicit starting budget.
    pub fn run_episode_with_budget(
        &self,
        policy: &dyn BidPolicy,
        budget: f64,
        seed: u64,
    ) -> Result<crate::market::EpisodeResult> {
        let mut pol_rng = chacha(seed, &[stream::EPISODE_POLICY]);
        let mut state = BidState::initial(budget, self.horizon);
        let mut transitions = Vec::with_capacity(self.horizon as usize);
        let mut buy_cnt = 0.0;
        let mut con_bdg = 0.0;
        let mut won = 0u64;
        let mut discounted = 0.0;
        let mut disc = 1.0;
        for t in 0..self.horizon {
            let action = policy.bid(&state, t, &mut pol_rng);
            let out = self.step(&state, action, t)?;
            transitions.push(Transition {
                t,
                state,
                action,
                reward: out.reward,
                cost: out.cost,
                next_state: out.next_state,
                done: out.terminated,
            });
            buy_cnt += out.reward;
            con_bdg += out.cost;
            won += out.won_count as u64;
            discounted += disc * out.reward;
            disc *= self.rules.gamma;
            state = out.next_state;
            if out.terminated {
                break;
            }
        }
        Ok(crate::market::EpisodeResult { transitions, buy_cnt, con_bdg, won, discounted, budget })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = ReplayHeader {
            kind: STAGE2_LOG_KIND.to_string(),
            budget: self.budget,
            horizon: self.horizon,
        };
        #[derive(Serialize)]
        struct Line<'a> {
            #[serde(flatten)]
            entry: &'a VasLogEntry,
            bid_min: f64,
            bid_max: f64,
            exhaust_floor: f64,
            gamma: f64,
        }
        // rules ride along on the first entry line to keep the file flat
        let rules = self.rules;
        write_header_jsonl(
            path,
            &header,
            self.all_entries().map(move |entry| Line {
                entry,
                bid_min: rules.bid_min,
                bid_max: rules.bid_max,
                exhaust_floor: rules.exhaust_floor,
                gamma: rules.gamma,
            }),
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct Line {
            #[serde(flatten)]
            entry: VasLogEntry,
            bid_min: f64,
            bid_max: f64,
            exhaust_floor: f64,
            gamma: f64,
        }
        let (header, lines): (ReplayHeader, Vec<Line>) = read_header_jsonl(path, STAGE2_LOG_KIND)?;
        let mut steps = vec![Vec::new(); header.horizon as usize];
        let mut rules = None;
        for line in lines {
            rules.get_or_insert(ReplayRules {
                bid_min: line.bid_min,
                bid_max: line.bid_max,
                exhaust_floor: line.exhaust_floor,
                gamma: line.gamma,
            });
            steps[line.entry.t as usize].push(line.entry);
        }
        let rules = rules.ok_or_else(|| Error::EmptyDataset("replay file holds no entries".into()))?;
        Ok(VasDataset { steps, budget: header.budget, horizon: header.horizon, rules })
    }
}

/// Per-policy row of the offline/online comparison table.
#[derive(Clone, Debug, Serialize)]
pub struct IbooRow {
    pub name: String,
    pub replay_score: f64,
    pub replay_rank: f64,
    pub live_score: f64,
    pub live_rank: f64,
}

/// Offline/online ranking comparison: replay (off-policy) score against live
/// market value, with Spearman rank correlation. Correlation is `None` when
/// undefined (fewer than two policies or constant scores).
#[derive(Clone, Debug, Serialize)]
pub struct IbooReport {
    pub rows: Vec<IbooRow>,
    pub rank_correlation: Option<f64>,
    pub inversions: usize,
}

/// Scores every policy in the replay dataset (ratio against the hindsight
/// optimum) and in the live market (mean value over shared seeds), then
/// ranks both columns.
pub fn iboo_report(
    policies: &[(&str, &dyn BidPolicy)],
    vas: &VasDataset,
    env: &MarketEnv,
    seeds: &[u64],
) -> Result<IbooReport> {
    let mut replay_scores = Vec::with_capacity(policies.len());
    let mut live_scores = Vec::with_capacity(policies.len());
    for (_, policy) in policies {
        replay_scores.push(crate::eval::ope_rr_star(*policy, vas, vas.budget())?);
        let reports = crate::eval::evaluate_market(env, &[*policy], seeds)?;
        live_scores.push(reports[0].buy_cnt);
    }
    let replay_ranks = crate::stats::descending_ranks(&replay_scores);
    let live_ranks = crate::stats::descending_ranks(&live_scores);
    let rows = policies
        .iter()
        .enumerate()
        .map(|(i, (name, _))| IbooRow {
            name: (*name).to_string(),
            replay_score: replay_scores[i],
            replay_rank: replay_ranks[i],
            live_score: live_scores[i],
            live_rank: live_ranks[i],
        })
        .collect();
    let inversions = count_inversions(&replay_ranks, &live_ranks);
    Ok(IbooReport { rows, rank_correlation: spearman(&replay_scores, &live_scores), inversions })
}

/// Pairs ranked one way by the first column and the other way by the second.
fn count_inversions(a: &[f64], b: &[f64]) -> usize {
    let n = a.len();
    let mut count = 0;
    for i in 0..n {
        for j in i + 1..n {
            if (a[i] - a[j]) * (b[i] - b[j]) < 0.0 {
                count += 1;
            }
        }
    }
    count
}

/// Runs a policy in the live market once and builds the replay dataset from
/// that episode's full impression log.
pub fn log_and_build(env: &MarketEnv, policy: &dyn BidPolicy, seed: u64) -> Result<VasDataset> {
    let (_, log) = env.run_episode_logged(policy, seed)?;
    let c = env.config();
    build_vas(
        &log,
        ReplayRules {
            bid_min: c.bid_min,
            bid_max: c.bid_max,
            exhaust_floor: c.exhaust_floor,
            gamma: c.gamma,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{ImpressionOpportunity, LoggedImpression, MarketConfig};
    use crate::policy::ConstantBid;

    fn rules() -> ReplayRules {
        ReplayRules { bid_min: 0.01, bid_max: 1000.0, exhaust_floor: 1.5, gamma: 0.99 }
    }

    fn imp(v1: f64, v2: f64, p1: f64, p2: f64) -> ImpressionOpportunity {
        ImpressionOpportunity { v1, v2, v: v2, p1, p2, p: p2 }
    }

    fn log_of(items: Vec<LoggedImpression>) -> ImpressionLog {
        ImpressionLog { budget: 100.0, horizon: 4, items }
    }

    #[test]
    fn empty_log_is_an_error() {
        assert!(build_vas(&log_of(vec![]), rules()).is_err());
    }

    #[test]
    fn bidder_that_never_cleared_stage1_gives_empty_dataset() {
        let items = vec![LoggedImpression { t: 0, action: 1.0, imp: imp(0.1, 0.9, 5.0, 1.0) }; 3];
        let vas = build_vas(&log_of(items), rules()).unwrap();
        assert!(vas.is_empty());
    }

    #[test]
    fn stage1_survivors_are_kept_exactly() {
        // 12 impressions, 5 of which clear stage 1 at action 2
        let mut items = Vec::new();
        for i in 0..12u32 {
            let clears = i < 5;
            let p1 = if clears { 1.0 } else { 5.0 };
            items.push(LoggedImpression { t: i % 4, action: 2.0, imp: imp(0.8, 0.5, p1, 1.0) });
        }
        let vas = build_vas(&log_of(items.clone()), rules()).unwrap();
        // independent count by replaying the predicate
        let expected = items.iter().filter(|it| it.action * it.imp.v1 >= it.imp.p1).count();
        assert_eq!(vas.len(), expected);
        assert_eq!(vas.len(), 5);
        let again = build_vas(&log_of(items), rules()).unwrap();
        assert_eq!(again.len(), vas.len());
    }

    #[test]
    fn dominant_bid_wins_every_entry() {
        let items = (0..6u32)
            .map(|i| LoggedImpression { t: i % 3, action: 3.0, imp: imp(0.9, 0.5, 1.0, 1.0) })
            .collect();
        let mut log = log_of(items);
        log.horizon = 3;
        let vas = build_vas(&log, rules()).unwrap();
        let state = BidState::initial(100.0, 3);
        let out = vas.step(&state, 100.0, 0).unwrap();
        assert_eq!(out.won_count as usize, vas.entries(0).len());
    }

    #[test]
    fn replay_step_is_pure() {
        let env = MarketEnv::new(MarketConfig { n_min: 30, n_max: 60, ..MarketConfig::default() }).unwrap();
        let vas = log_and_build(&env, &ConstantBid(4.5), 7).unwrap();
        let state = BidState::initial(vas.budget(), vas.horizon());
        let a = vas.step(&state, 5.0, 0).unwrap();
        let b = vas.step(&state, 5.0, 0).unwrap();
        assert_eq!(a, b);
        let ra = vas.run_episode(&ConstantBid(5.0), 1).unwrap();
        let rb = vas.run_episode(&ConstantBid(5.0), 2).unwrap();
        assert_eq!(ra.buy_cnt.to_bits(), rb.buy_cnt.to_bits());
    }

    #[test]
    fn replay_entries_are_a_subset_of_the_live_episode() {
        let env = MarketEnv::new(MarketConfig { n_min: 20, n_max: 40, ..MarketConfig::default() }).unwrap();
        let (_, log) = env.run_episode_logged(&ConstantBid(4.0), 9).unwrap();
        let vas = build_vas(&log, rules()).unwrap();
        assert!(vas.len() <= log.items.len());
        // strict subset whenever the bidder failed stage 1 at least once
        let failed = log.items.iter().any(|it| it.action * it.imp.v1 < it.imp.p1);
        if failed {
            assert!(vas.len() < log.items.len());
        }
    }

    #[test]
    fn replay_file_round_trips() {
        let env = MarketEnv::new(MarketConfig { n_min: 10, n_max: 20, ..MarketConfig::default() }).unwrap();
        let vas = log_and_build(&env, &ConstantBid(4.5), 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vas.jsonl");
        vas.save(&path).unwrap();
        let back = VasDataset::load(&path).unwrap();
        assert_eq!(back.len(), vas.len());
        assert_eq!(back.budget().to_bits(), vas.budget().to_bits());
        assert_eq!(back.rules(), vas.rules());
        let state = BidState::initial(vas.budget(), vas.horizon());
        for t in 0..vas.horizon() {
            assert_eq!(vas.entries(t), back.entries(t));
            let x = vas.step(&state, 6.0, t).unwrap();
            let y = back.step(&state, 6.0, t).unwrap();
            assert_eq!(x, y);
        }
    }
}
