//! Per-slot stochastic policies. Each slot owns a two-hidden-layer network
//! whose output splits into a mean vector and a clamped log-std vector; a
//! sample is tanh(mean + std·ε) with ε supplied by the caller, so identical
//! noise gives identical actions (common random numbers). Log-densities
//! include the tanh change-of-variables term in the numerically stable form
//! 2(ln 2 − u − softplus(−2u)).
//!
//! The backward pass propagates an objective gradient that may touch both
//! the log-density and the action itself, which is exactly what the
//! entropy-regularized policy update needs.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::fp;
use crate::nn::{Mlp, MlpCache, MlpGrads};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
const HALF_LN_TWO_PI: f64 = 0.918_938_533_204_672_7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActorConfig {
    pub n_slots: usize,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub hidden_dim: usize,
}

impl Default for ActorConfig {
    fn default() -> Self {
        ActorConfig { n_slots: 16, obs_dim: 26, act_dim: 2, hidden_dim: 128 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Actor {
    pub cfg: ActorConfig,
    nets: Vec<Mlp>,
}

/// One reparameterized draw, carrying what the backward pass needs.
#[derive(Clone, Debug)]
pub struct PolicySample {
    pub action: Vec<f64>,
    pub log_prob: f64,
    std: Vec<f64>,
    eps: Vec<f64>,
    /// 1 where the raw log-std landed inside the clamp interval, else 0.
    std_grad_mask: Vec<f64>,
    cache: MlpCache,
}

#[derive(Clone, Debug)]
pub struct ActorGrads {
    nets: Vec<MlpGrads>,
}

impl Actor {
    pub fn new<R: Rng>(cfg: ActorConfig, rng: &mut R) -> Self {
        assert!(cfg.n_slots > 0 && cfg.act_dim > 0);
        let nets = (0..cfg.n_slots)
            .map(|_| {
                Mlp::glorot(
                    &[cfg.obs_dim, cfg.hidden_dim, cfg.hidden_dim, 2 * cfg.act_dim],
                    rng,
                )
            })
            .collect();
        Actor { cfg, nets }
    }

    /// Draws the action tanh(μ + σ·ε) for the given noise vector and
    /// returns it with its log-density under the current policy.
    pub fn sample(&self, slot: usize, obs: &[f64], eps: &[f64]) -> PolicySample {
        assert_eq!(obs.len(), self.cfg.obs_dim);
        assert_eq!(eps.len(), self.cfg.act_dim);
        let mut cache = MlpCache::default();
        let head = self.nets[slot].forward_cached(obs, &mut cache);
        let ad = self.cfg.act_dim;

        let mut action = Vec::with_capacity(ad);
        let mut std = Vec::with_capacity(ad);
        let mut mask = Vec::with_capacity(ad);
        let mut log_prob = 0.0;
        for d in 0..ad {
            let mean = head[d];
            let raw_ls = head[ad + d];
            let ls = raw_ls.clamp(LOG_STD_MIN, LOG_STD_MAX);
            mask.push(if raw_ls > LOG_STD_MIN && raw_ls < LOG_STD_MAX { 1.0 } else { 0.0 });
            let sd = fp::exp(ls);
            let u = mean + sd * eps[d];
            action.push(fp::tanh(u));
            std.push(sd);
            // Gaussian density at u plus the tanh correction.
            log_prob += -HALF_LN_TWO_PI - ls - 0.5 * eps[d] * eps[d];
            log_prob -= 2.0 * (core::f64::consts::LN_2 - u - fp::softplus(-2.0 * u));
        }
        PolicySample { action, log_prob, std, eps: eps.to_vec(), std_grad_mask: mask, cache }
    }

    /// [`Actor::sample`] with noise drawn from the given generator.
    pub fn sample_with_rng<R: Rng>(&self, slot: usize, obs: &[f64], rng: &mut R) -> PolicySample {
        let eps: Vec<f64> = (0..self.cfg.act_dim).map(|_| rng.sample(StandardNormal)).collect();
        self.sample(slot, obs, &eps)
    }

    /// Deterministic action tanh(μ), used for greedy evaluation.
    pub fn mean_action(&self, slot: usize, obs: &[f64]) -> Vec<f64> {
        let head = self.nets[slot].forward(obs);
        head[..self.cfg.act_dim].iter().map(|&m| fp::tanh(m)).collect()
    }

    /// Accumulates d(objective)/d(params) for an objective of the form
    /// `d_logp·log π(a) + d_action·a`, evaluated at the given sample with
    /// its noise held fixed (the reparameterization pathway).
    pub fn backward(
        &self,
        slot: usize,
        sample: &PolicySample,
        d_logp: f64,
        d_action: &[f64],
        grads: &mut ActorGrads,
    ) {
        let ad = self.cfg.act_dim;
        assert_eq!(d_action.len(), ad);
        let mut dhead = alloc::vec![0.0; 2 * ad];
        for d in 0..ad {
            let a = sample.action[d];
            let dadu = 1.0 - a * a;
            let duds = sample.std[d] * sample.eps[d];
            // d log π / du = 2·tanh(u); the Gaussian part depends on the
            // log-std alone once ε is fixed.
            let dlogp_du = 2.0 * a;
            dhead[d] = d_logp * dlogp_du + d_action[d] * dadu;
            dhead[ad + d] = (d_logp * (-1.0 + dlogp_du * duds) + d_action[d] * dadu * duds)
                * sample.std_grad_mask[d];
        }
        self.nets[slot].backward(&sample.cache, &dhead, &mut grads.nets[slot]);
    }

    pub fn zero_grads(&self) -> ActorGrads {
        ActorGrads { nets: self.nets.iter().map(Mlp::zero_grads).collect() }
    }

    pub fn param_count(&self) -> usize {
        self.nets.iter().map(Mlp::param_count).sum()
    }

    pub fn param_slices(&self) -> impl Iterator<Item = &[f64]> {
        self.nets.iter().flat_map(Mlp::param_slices)
    }

    pub fn param_slices_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.nets.iter_mut().flat_map(Mlp::param_slices_mut)
    }

    pub fn soft_update_from(&mut self, online: &Actor, tau: f64) {
        for (t, o) in self.param_slices_mut().zip(online.param_slices()) {
            for (ti, oi) in t.iter_mut().zip(o) {
                *ti = tau * oi + (1.0 - tau) * *ti;
            }
        }
    }
}

impl ActorGrads {
    pub fn slices(&self) -> impl Iterator<Item = &[f64]> {
        self.nets.iter().flat_map(MlpGrads::slices)
    }

    pub fn zero(&mut self) {
        for g in &mut self.nets {
            g.zero();
        }
    }
}
