//! Shared attentive critic. Every agent's Q-value is produced by one
//! network family: a per-slot encoder embeds each agent's observation and
//! action, multi-head scaled dot-product attention aggregates the other
//! agents' embeddings into a contribution vector, and a per-slot head maps
//! (embedding, contribution) to a scalar. The attention projections are
//! shared across agents; encoders and heads are per slot, with agents
//! mapped to slots by their spawn order.
//!
//! The backward passes are hand written. `backward_params` accumulates
//! gradients for every parameter given d(objective)/dQ per agent;
//! `action_grad` extracts dQ_i/da_i alone, which is the only piece the
//! policy update needs from a frozen critic.

use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::fp;
use crate::nn::{self, Matrix, Mlp, MlpCache, MlpGrads};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticConfig {
    /// Number of parameter slots; concurrent agents share slot parameters
    /// when their spawn indices collide modulo this count.
    pub n_slots: usize,
    pub obs_dim: usize,
    pub act_dim: usize,
    /// Embedding width E; must be divisible by `n_heads`.
    pub embed_dim: usize,
    pub n_heads: usize,
    /// Hidden width of encoder and Q head.
    pub hidden_dim: usize,
}

impl Default for CriticConfig {
    fn default() -> Self {
        CriticConfig {
            n_slots: 16,
            obs_dim: 26,
            act_dim: 2,
            embed_dim: 128,
            n_heads: 4,
            hidden_dim: 128,
        }
    }
}

impl CriticConfig {
    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.n_heads
    }
}

/// One agent's slice of a joint critic evaluation.
#[derive(Clone, Copy, Debug)]
pub struct SlotInput<'a> {
    pub slot: usize,
    pub obs: &'a [f64],
    pub act: &'a [f64],
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Critic {
    pub cfg: CriticConfig,
    encoders: Vec<Mlp>,
    wq: Vec<Matrix>,
    wk: Vec<Matrix>,
    wv: Vec<Matrix>,
    q_heads: Vec<Mlp>,
}

/// Everything recorded by [`Critic::forward`]: per-agent encoder and head
/// caches, embeddings, projections, attention weights, contributions, and
/// the Q-values themselves.
#[derive(Clone, Debug)]
pub struct CriticCache {
    slots: Vec<usize>,
    /// Concatenated (obs, act) fed to each encoder.
    inputs: Vec<Vec<f64>>,
    enc_caches: Vec<MlpCache>,
    e: Vec<Vec<f64>>,
    /// Per-agent query/key/value vectors, all heads concatenated (H·D).
    q: Vec<Vec<f64>>,
    k: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    /// `attn[i][h][m]`: weight of the m-th other agent (input order with i
    /// skipped) for agent i, head h. Sums to 1 over m.
    attn: Vec<Vec<Vec<f64>>>,
    x: Vec<Vec<f64>>,
    head_caches: Vec<MlpCache>,
    qvals: Vec<f64>,
}

/// Gradient accumulator mirroring [`Critic`]'s parameter layout.
#[derive(Clone, Debug)]
pub struct CriticGrads {
    encoders: Vec<MlpGrads>,
    wq: Vec<Matrix>,
    wk: Vec<Matrix>,
    wv: Vec<Matrix>,
    q_heads: Vec<MlpGrads>,
}

/// Maps the m-th entry of agent i's "others" list back to an input index.
fn other_index(i: usize, m: usize) -> usize {
    if m < i { m } else { m + 1 }
}

impl Critic {
    pub fn new<R: Rng>(cfg: CriticConfig, rng: &mut R) -> Self {
        assert!(cfg.n_slots > 0 && cfg.n_heads > 0);
        assert_eq!(
            cfg.embed_dim % cfg.n_heads,
            0,
            "embedding width must divide evenly across heads"
        );
        let d = cfg.head_dim();
        let in_dim = cfg.obs_dim + cfg.act_dim;
        let encoders = (0..cfg.n_slots)
            .map(|_| Mlp::glorot(&[in_dim, cfg.hidden_dim, cfg.embed_dim], rng))
            .collect();
        let proj = |rng: &mut R| {
            (0..cfg.n_heads)
                .map(|_| Matrix::glorot(d, cfg.embed_dim, rng))
                .collect::<Vec<_>>()
        };
        let wq = proj(rng);
        let wk = proj(rng);
        let wv = proj(rng);
        let q_heads = (0..cfg.n_slots)
            .map(|_| Mlp::glorot(&[2 * cfg.embed_dim, cfg.hidden_dim, 1], rng))
            .collect();
        Critic { cfg, encoders, wq, wk, wv, q_heads }
    }

    /// Joint evaluation for a set of live agents. Returns per-agent
    /// Q-values inside a cache that also carries the attention diagnostics
    /// and everything the backward passes need.
    pub fn forward(&self, agents: &[SlotInput]) -> CriticCache {
        let n = agents.len();
        assert!(n > 0, "critic evaluated on an empty agent set");
        let (e_dim, h, d) = (self.cfg.embed_dim, self.cfg.n_heads, self.cfg.head_dim());
        let scale = 1.0 / fp::sqrt(d as f64);

        let mut cache = CriticCache {
            slots: Vec::with_capacity(n),
            inputs: Vec::with_capacity(n),
            enc_caches: alloc::vec![MlpCache::default(); n],
            e: Vec::with_capacity(n),
            q: alloc::vec![alloc::vec![0.0; h * d]; n],
            k: alloc::vec![alloc::vec![0.0; h * d]; n],
            v: alloc::vec![alloc::vec![0.0; h * d]; n],
            attn: alloc::vec![Vec::new(); n],
            x: alloc::vec![alloc::vec![0.0; e_dim]; n],
            head_caches: alloc::vec![MlpCache::default(); n],
            qvals: alloc::vec![0.0; n],
        };

        for (i, a) in agents.iter().enumerate() {
            assert!(a.slot < self.cfg.n_slots, "slot out of range");
            assert_eq!(a.obs.len(), self.cfg.obs_dim);
            assert_eq!(a.act.len(), self.cfg.act_dim);
            let mut u = Vec::with_capacity(a.obs.len() + a.act.len());
            u.extend_from_slice(a.obs);
            u.extend_from_slice(a.act);
            let e = self.encoders[a.slot].forward_cached(&u, &mut cache.enc_caches[i]);
            for hh in 0..h {
                self.wq[hh].matvec_into(&e, &mut cache.q[i][hh * d..(hh + 1) * d]);
                self.wk[hh].matvec_into(&e, &mut cache.k[i][hh * d..(hh + 1) * d]);
                self.wv[hh].matvec_into(&e, &mut cache.v[i][hh * d..(hh + 1) * d]);
            }
            cache.slots.push(a.slot);
            cache.inputs.push(u);
            cache.e.push(e);
        }

        for i in 0..n {
            cache.attn[i] = alloc::vec![alloc::vec![0.0; n - 1]; h];
            for hh in 0..h {
                let qi = &cache.q[i][hh * d..(hh + 1) * d];
                for m in 0..n - 1 {
                    let j = other_index(i, m);
                    let kj = &cache.k[j][hh * d..(hh + 1) * d];
                    cache.attn[i][hh][m] =
                        scale * qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>();
                }
                nn::softmax_in_place(&mut cache.attn[i][hh]);
                let xh = &mut cache.x[i][hh * d..(hh + 1) * d];
                for m in 0..n - 1 {
                    let j = other_index(i, m);
                    let w = cache.attn[i][hh][m];
                    for (xd, vd) in xh.iter_mut().zip(&cache.v[j][hh * d..(hh + 1) * d]) {
                        *xd += w * vd;
                    }
                }
            }
            let mut z = Vec::with_capacity(2 * e_dim);
            z.extend_from_slice(&cache.e[i]);
            z.extend_from_slice(&cache.x[i]);
            cache.qvals[i] =
                self.q_heads[cache.slots[i]].forward_cached(&z, &mut cache.head_caches[i])[0];
        }
        cache
    }

    /// Full reverse pass: given dL/dQ_i for every agent in the cached
    /// forward, accumulates dL/d(parameter) into `grads`.
    pub fn backward_params(&self, cache: &CriticCache, dq: &[f64], grads: &mut CriticGrads) {
        let n = cache.qvals.len();
        assert_eq!(dq.len(), n);
        let (e_dim, h, d) = (self.cfg.embed_dim, self.cfg.n_heads, self.cfg.head_dim());
        let scale = 1.0 / fp::sqrt(d as f64);

        let mut de = alloc::vec![alloc::vec![0.0; e_dim]; n];
        let mut dqv = alloc::vec![alloc::vec![0.0; h * d]; n];
        let mut dkv = alloc::vec![alloc::vec![0.0; h * d]; n];
        let mut dvv = alloc::vec![alloc::vec![0.0; h * d]; n];

        for i in 0..n {
            if dq[i] == 0.0 {
                continue;
            }
            let dz = self.q_heads[cache.slots[i]].backward(
                &cache.head_caches[i],
                &[dq[i]],
                &mut grads.q_heads[cache.slots[i]],
            );
            for (t, s) in de[i].iter_mut().zip(&dz[..e_dim]) {
                *t += s;
            }
            let dx = &dz[e_dim..];
            for hh in 0..h {
                let xh = &dx[hh * d..(hh + 1) * d];
                let weights = &cache.attn[i][hh];
                // d(attention weights), plus the value-vector pathway.
                let mut dalpha = alloc::vec![0.0; n - 1];
                for m in 0..n - 1 {
                    let j = other_index(i, m);
                    let vj = &cache.v[j][hh * d..(hh + 1) * d];
                    dalpha[m] = xh.iter().zip(vj).map(|(a, b)| a * b).sum();
                    let dvj = &mut dvv[j][hh * d..(hh + 1) * d];
                    for (t, s) in dvj.iter_mut().zip(xh) {
                        *t += weights[m] * s;
                    }
                }
                // Softmax backward, then the query/key pathways.
                let dot: f64 = weights.iter().zip(&dalpha).map(|(w, g)| w * g).sum();
                let qi = &cache.q[i][hh * d..(hh + 1) * d];
                for m in 0..n - 1 {
                    let j = other_index(i, m);
                    let dl = weights[m] * (dalpha[m] - dot) * scale;
                    if dl == 0.0 {
                        continue;
                    }
                    let kj = &cache.k[j][hh * d..(hh + 1) * d];
                    let dqi = &mut dqv[i][hh * d..(hh + 1) * d];
                    for (t, s) in dqi.iter_mut().zip(kj) {
                        *t += dl * s;
                    }
                    let dkj = &mut dkv[j][hh * d..(hh + 1) * d];
                    for (t, s) in dkj.iter_mut().zip(qi) {
                        *t += dl * s;
                    }
                }
            }
        }

        // Projection parameters and their embedding pull-backs.
        for i in 0..n {
            for hh in 0..h {
                let r = hh * d..(hh + 1) * d;
                grads.wq[hh].add_outer(&dqv[i][r.clone()], &cache.e[i]);
                self.wq[hh].matvec_t_add(&dqv[i][r.clone()], &mut de[i]);
                grads.wk[hh].add_outer(&dkv[i][r.clone()], &cache.e[i]);
                self.wk[hh].matvec_t_add(&dkv[i][r.clone()], &mut de[i]);
                grads.wv[hh].add_outer(&dvv[i][r.clone()], &cache.e[i]);
                self.wv[hh].matvec_t_add(&dvv[i][r], &mut de[i]);
            }
        }

        for i in 0..n {
            self.encoders[cache.slots[i]].backward(
                &cache.enc_caches[i],
                &de[i],
                &mut grads.encoders[cache.slots[i]],
            );
        }
    }

    /// dQ_i/da_i: gradient of agent i's Q-value with respect to its own
    /// action only. Other agents' actions influence Q_i as well, but those
    /// pathways belong to their own policy updates and are excluded here.
    /// No parameter gradients are produced.
    pub fn action_grad(&self, cache: &CriticCache, i: usize) -> Vec<f64> {
        let n = cache.qvals.len();
        let (e_dim, h, d) = (self.cfg.embed_dim, self.cfg.n_heads, self.cfg.head_dim());
        let scale = 1.0 / fp::sqrt(d as f64);

        let dz = self.q_heads[cache.slots[i]].backward_input(&cache.head_caches[i], &[1.0]);
        let mut de = dz[..e_dim].to_vec();
        let dx = &dz[e_dim..];

        // Own-action influence on x_i flows only through the query vector:
        // keys and values of the other agents do not depend on a_i.
        let mut dqi = alloc::vec![0.0; h * d];
        for hh in 0..h {
            let xh = &dx[hh * d..(hh + 1) * d];
            let weights = &cache.attn[i][hh];
            let mut dalpha = alloc::vec![0.0; n - 1];
            for m in 0..n - 1 {
                let j = other_index(i, m);
                let vj = &cache.v[j][hh * d..(hh + 1) * d];
                dalpha[m] = xh.iter().zip(vj).map(|(a, b)| a * b).sum();
            }
            let dot: f64 = weights.iter().zip(&dalpha).map(|(w, g)| w * g).sum();
            for m in 0..n - 1 {
                let j = other_index(i, m);
                let dl = weights[m] * (dalpha[m] - dot) * scale;
                let kj = &cache.k[j][hh * d..(hh + 1) * d];
                let dqh = &mut dqi[hh * d..(hh + 1) * d];
                for (t, s) in dqh.iter_mut().zip(kj) {
                    *t += dl * s;
                }
            }
        }
        for hh in 0..h {
            self.wq[hh].matvec_t_add(&dqi[hh * d..(hh + 1) * d], &mut de);
        }

        let du = self.encoders[cache.slots[i]].backward_input(&cache.enc_caches[i], &de);
        du[self.cfg.obs_dim..].to_vec()
    }

    /// Q_i re-evaluated with agent i's action replaced and every other
    /// agent's cached embedding, key, and value reused. Used for the
    /// K-sample baseline, where only one agent's action varies.
    pub fn q_resampled(&self, cache: &CriticCache, i: usize, act: &[f64]) -> f64 {
        let n = cache.qvals.len();
        assert_eq!(act.len(), self.cfg.act_dim);
        let (e_dim, h, d) = (self.cfg.embed_dim, self.cfg.n_heads, self.cfg.head_dim());
        let scale = 1.0 / fp::sqrt(d as f64);

        let mut u = cache.inputs[i].clone();
        u[self.cfg.obs_dim..].copy_from_slice(act);
        let e = self.encoders[cache.slots[i]].forward(&u);

        let mut x = alloc::vec![0.0; e_dim];
        let mut qh = alloc::vec![0.0; d];
        let mut logits = alloc::vec![0.0; n - 1];
        for hh in 0..h {
            self.wq[hh].matvec_into(&e, &mut qh);
            for m in 0..n - 1 {
                let j = other_index(i, m);
                let kj = &cache.k[j][hh * d..(hh + 1) * d];
                logits[m] = scale * qh.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>();
            }
            nn::softmax_in_place(&mut logits);
            let xh = &mut x[hh * d..(hh + 1) * d];
            for m in 0..n - 1 {
                let j = other_index(i, m);
                for (xd, vd) in xh.iter_mut().zip(&cache.v[j][hh * d..(hh + 1) * d]) {
                    *xd += logits[m] * vd;
                }
            }
        }
        let mut z = Vec::with_capacity(2 * e_dim);
        z.extend_from_slice(&e);
        z.extend_from_slice(&x);
        self.q_heads[cache.slots[i]].forward(&z)[0]
    }

    pub fn zero_grads(&self) -> CriticGrads {
        let d = self.cfg.head_dim();
        CriticGrads {
            encoders: self.encoders.iter().map(Mlp::zero_grads).collect(),
            wq: (0..self.cfg.n_heads).map(|_| Matrix::zeros(d, self.cfg.embed_dim)).collect(),
            wk: (0..self.cfg.n_heads).map(|_| Matrix::zeros(d, self.cfg.embed_dim)).collect(),
            wv: (0..self.cfg.n_heads).map(|_| Matrix::zeros(d, self.cfg.embed_dim)).collect(),
            q_heads: self.q_heads.iter().map(Mlp::zero_grads).collect(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.param_slices().map(<[f64]>::len).sum()
    }

    pub fn param_slices(&self) -> impl Iterator<Item = &[f64]> {
        self.encoders
            .iter()
            .flat_map(Mlp::param_slices)
            .chain(self.wq.iter().map(Matrix::as_slice))
            .chain(self.wk.iter().map(Matrix::as_slice))
            .chain(self.wv.iter().map(Matrix::as_slice))
            .chain(self.q_heads.iter().flat_map(Mlp::param_slices))
    }

    pub fn param_slices_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.encoders
            .iter_mut()
            .flat_map(Mlp::param_slices_mut)
            .chain(self.wq.iter_mut().map(Matrix::as_mut_slice))
            .chain(self.wk.iter_mut().map(Matrix::as_mut_slice))
            .chain(self.wv.iter_mut().map(Matrix::as_mut_slice))
            .chain(self.q_heads.iter_mut().flat_map(Mlp::param_slices_mut))
    }

    /// target ← τ·online + (1−τ)·target over the whole parameter set.
    pub fn soft_update_from(&mut self, online: &Critic, tau: f64) {
        for (t, o) in self.param_slices_mut().zip(online.param_slices()) {
            for (ti, oi) in t.iter_mut().zip(o) {
                *ti = tau * oi + (1.0 - tau) * *ti;
            }
        }
    }

    #[cfg(test)]
    fn zero_value_projections(&mut self) {
        for w in &mut self.wv {
            w.fill(0.0);
        }
    }
}

impl CriticCache {
    pub fn qvals(&self) -> &[f64] {
        &self.qvals
    }

    pub fn n_agents(&self) -> usize {
        self.qvals.len()
    }

    /// Attention weights of agent i, head h over the other agents, paired
    /// with their input indices. Entries sum to 1 when others exist.
    pub fn attention_weights(&self, i: usize, h: usize) -> impl Iterator<Item = (usize, f64)> {
        self.attn[i][h]
            .iter()
            .enumerate()
            .map(move |(m, &w)| (other_index(i, m), w))
    }

    /// Shannon entropy of agent i's head-h weight distribution.
    pub fn attention_entropy(&self, i: usize, h: usize) -> f64 {
        nn::entropy(&self.attn[i][h])
    }

    pub fn n_heads(&self) -> usize {
        self.attn.first().map_or(0, Vec::len)
    }
}

impl CriticGrads {
    pub fn slices(&self) -> impl Iterator<Item = &[f64]> {
        self.encoders
            .iter()
            .flat_map(MlpGrads::slices)
            .chain(self.wq.iter().map(Matrix::as_slice))
            .chain(self.wk.iter().map(Matrix::as_slice))
            .chain(self.wv.iter().map(Matrix::as_slice))
            .chain(self.q_heads.iter().flat_map(MlpGrads::slices))
    }

    pub fn zero(&mut self) {
        for g in &mut self.encoders {
            g.zero();
        }
        for w in self.wq.iter_mut().chain(&mut self.wk).chain(&mut self.wv) {
            w.fill(0.0);
        }
        for g in &mut self.q_heads {
            g.zero();
        }
    }
}
