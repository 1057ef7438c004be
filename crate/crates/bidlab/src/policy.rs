//! Actor and critic wrappers around the dense nets, plus the policy trait the
//! episode loop consumes. The wrappers own the fixed input/output scaling:
//! states are normalized by budget and horizon, actions by a reference bid,
//! and critic outputs by a value scale, so the underlying nets work on O(1)
//! quantities while the public interface stays in raw currency units.

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::BidState;
use crate::nets::{Activation, ForwardCache, Mlp};

/// Fixed normalization constants shared by actor and critic.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    /// Budget components are divided by this (typically the max budget).
    pub budget: f64,
    /// Time left is divided by this (the episode length).
    pub horizon: f64,
    /// Actions are divided by this before entering the critic.
    pub action_ref: f64,
    /// Critic net outputs are multiplied by this.
    pub value_scale: f64,
}

impl Scaling {
    pub fn state_features(&self, s: &BidState) -> [f64; 3] {
        [s.budget_left / self.budget, s.time_left as f64 / self.horizon, s.budget_consumed / self.budget]
    }
}

/// Network shape options for a freshly initialized agent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetShape {
    pub hidden: Vec<usize>,
    /// Initial actor output, used to seat the output bias.
    pub init_bid: f64,
}

impl Default for NetShape {
    fn default() -> Self {
        NetShape { hidden: vec![32, 32], init_bid: 10.0 }
    }
}

/// Deterministic bounded-output policy network.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Actor {
    net: Mlp,
    pub scaling: Scaling,
    pub bid_min: f64,
    pub bid_max: f64,
}

impl Actor {
    pub fn new(shape: &NetShape, scaling: Scaling, bid_min: f64, bid_max: f64, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut widths = vec![3usize];
        widths.extend_from_slice(&shape.hidden);
        widths.push(1);
        let mut acts = vec![Activation::Tanh; shape.hidden.len()];
        acts.push(Activation::Sigmoid);
        let mut net = Mlp::new(&widths, &acts, rng)?;
        // seat the output bias so the untrained policy starts near init_bid
        let p0 = ((shape.init_bid - bid_min) / (bid_max - bid_min)).clamp(1e-6, 1.0 - 1e-6);
        net.set_output_bias(0, (p0 / (1.0 - p0)).ln());
        Ok(Actor { net, scaling, bid_min, bid_max })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn action(&self, s: &BidState) -> f64 {
        let y = self.net.forward_cache(&self.scaling.state_features(s)).output()[0];
        self.bid_min + y * (self.bid_max - self.bid_min)
    }

    pub fn forward_cache(&self, s: &BidState) -> (ForwardCache, f64) {
        let cache = self.net.forward_cache(&self.scaling.state_features(s));
        let a = self.bid_min + cache.output()[0] * (self.bid_max - self.bid_min);
        (cache, a)
    }

    /// Accumulates dLoss/dparams given dLoss/daction for a cached state.
    pub fn backward(&self, cache: &ForwardCache, dl_da: f64, param_grad: &mut [f64]) {
        let dl_dy = dl_da * (self.bid_max - self.bid_min);
        self.net.backward(cache, &[dl_dy], param_grad);
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_checkpoint(path, "actor", self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_checkpoint(path, "actor")
    }
}

/// Action-value network over (state, action).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Critic {
    net: Mlp,
    pub scaling: Scaling,
}

impl Critic {
    pub fn new(shape: &NetShape, scaling: Scaling, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut widths = vec![4usize];
        widths.extend_from_slice(&shape.hidden);
        widths.push(1);
        let mut acts = vec![Activation::Tanh; shape.hidden.len()];
        acts.push(Activation::Linear);
        Ok(Critic { net: Mlp::new(&widths, &acts, rng)?, scaling })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    fn inputs(&self, s: &BidState, action: f64) -> [f64; 4] {
        let f = self.scaling.state_features(s);
        [f[0], f[1], f[2], action / self.scaling.action_ref]
    }

    pub fn q(&self, s: &BidState, action: f64) -> f64 {
        self.net.forward_cache(&self.inputs(s, action)).output()[0] * self.scaling.value_scale
    }

    pub fn forward_cache(&self, s: &BidState, action: f64) -> (ForwardCache, f64) {
        let cache = self.net.forward_cache(&self.inputs(s, action));
        let q = cache.output()[0] * self.scaling.value_scale;
        (cache, q)
    }

    /// Accumulates dLoss/dparams given dLoss/dQ; returns dLoss/daction in raw
    /// action units.
    pub fn backward(&self, cache: &ForwardCache, dl_dq: f64, param_grad: &mut [f64]) -> f64 {
        let dl_dout = dl_dq * self.scaling.value_scale;
        let din = self.net.backward(cache, &[dl_dout], param_grad);
        din[3] / self.scaling.action_ref
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_checkpoint(path, "critic", self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_checkpoint(path, "critic")
    }
}

/// An actor together with its critic, as produced by training.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainedPair {
    pub actor: Actor,
    pub critic: Critic,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile<T> {
    format: String,
    kind: String,
    payload: T,
}

const CHECKPOINT_FORMAT: &str = "bidlab-checkpoint-v1";

fn write_checkpoint<T: Serialize>(path: &Path, kind: &str, payload: &T) -> Result<()> {
    let file = CheckpointFile {
        format: CHECKPOINT_FORMAT.to_string(),
        kind: kind.to_string(),
        payload,
    };
    let text = serde_json::to_string(&file)?;
    std::fs::write(path, text)?;
    Ok(())
}

fn read_checkpoint<T: for<'de> Deserialize<'de>>(path: &Path, kind: &str) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    let file: CheckpointFile<T> = serde_json::from_str(&text)?;
    if file.format != CHECKPOINT_FORMAT {
        return Err(Error::Format(format!("unknown checkpoint format {}", file.format)));
    }
    if file.kind != kind {
        return Err(Error::Format(format!("checkpoint kind {} where {kind} expected", file.kind)));
    }
    Ok(file.payload)
}

/// A bidding policy: maps (state, step index) to a bid, possibly randomized.
pub trait BidPolicy: Sync {
    fn bid(&self, state: &BidState, t: u32, rng: &mut ChaCha8Rng) -> f64;
}

impl BidPolicy for Actor {
    fn bid(&self, state: &BidState, _t: u32, _rng: &mut ChaCha8Rng) -> f64 {
        self.action(state)
    }
}

/// Fixed-bid reference policy.
#[derive(Clone, Copy, Debug)]
pub struct ConstantBid(pub f64);

impl BidPolicy for ConstantBid {
    fn bid(&self, _state: &BidState, _t: u32, _rng: &mut ChaCha8Rng) -> f64 {
        self.0
    }
}

/// Base policy with additive Gaussian noise, clamped to the action bounds.
pub struct NoisyPolicy<'a> {
    pub base: &'a Actor,
    pub std_dev: f64,
}

impl BidPolicy for NoisyPolicy<'_> {
    fn bid(&self, state: &BidState, _t: u32, rng: &mut ChaCha8Rng) -> f64 {
        let a = self.base.action(state) + self.std_dev * crate::stats::standard_normal(rng);
        a.clamp(self.base.bid_min, self.base.bid_max)
    }
}

/// Base policy shifted by a constant offset, clamped to the action bounds.
/// Used to probe value sensitivity to systematic bid error.
pub struct ShiftedPolicy<'a> {
    pub base: &'a Actor,
    pub offset: f64,
}

impl BidPolicy for ShiftedPolicy<'_> {
    fn bid(&self, state: &BidState, _t: u32, _rng: &mut ChaCha8Rng) -> f64 {
        (self.base.action(state) + self.offset).clamp(self.base.bid_min, self.base.bid_max)
    }
}
