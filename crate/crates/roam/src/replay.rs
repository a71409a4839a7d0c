//! Experience storage for off-policy training: one [`Transition`] per
//! environment step (variable agent count), kept in a bounded FIFO ring
//! with uniform without-replacement batch sampling.

use alloc::vec::Vec;

use rand::Rng;

/// One environment step from the acting agents' perspective, plus the full
/// next-state agent set needed to evaluate bootstrap targets.
///
/// Agent counts vary step to step; only live agents appear, so absent
/// agents contribute nothing to any sum by construction.
#[derive(Clone, Debug, Default)]
pub struct Transition {
    /// Parameter slot of each acting agent.
    pub slots: Vec<usize>,
    /// Observation each acting agent saw before the step.
    pub obs: Vec<Vec<f64>>,
    /// Action each acting agent took.
    pub acts: Vec<[f64; 2]>,
    pub rewards: Vec<f64>,
    /// Whether each acting agent's trajectory ended here (departure or
    /// episode end); done transitions drop the bootstrap term.
    pub dones: Vec<bool>,
    /// Parameter slots of the agents live after the step.
    pub next_slots: Vec<usize>,
    /// Observations of the agents live after the step.
    pub next_obs: Vec<Vec<f64>>,
    /// For each acting agent, its position in the next-state set (None
    /// when it departed or the episode ended).
    pub next_index: Vec<Option<usize>>,
}

impl Transition {
    pub fn n_acting(&self) -> usize {
        self.slots.len()
    }

    /// Checks internal consistency: aligned per-agent lengths, one shared
    /// observation width, finite rewards, and next-state indices in range.
    pub fn validate(&self) -> Result<(), &'static str> {
        let n = self.slots.len();
        if self.obs.len() != n
            || self.acts.len() != n
            || self.rewards.len() != n
            || self.dones.len() != n
            || self.next_index.len() != n
        {
            return Err("per-agent field lengths disagree");
        }
        if self.next_obs.len() != self.next_slots.len() {
            return Err("next-state field lengths disagree");
        }
        let dim = self
            .obs
            .first()
            .or_else(|| self.next_obs.first())
            .map(Vec::len)
            .unwrap_or(0);
        if self.obs.iter().chain(&self.next_obs).any(|o| o.len() != dim) {
            return Err("observation widths disagree");
        }
        if self.rewards.iter().any(|r| !r.is_finite()) {
            return Err("non-finite reward");
        }
        if self.acts.iter().any(|a| !(a[0].is_finite() && a[1].is_finite())) {
            return Err("non-finite action");
        }
        for (k, idx) in self.next_index.iter().enumerate() {
            match idx {
                Some(j) if *j >= self.next_slots.len() => {
                    return Err("next-state index out of range");
                }
                None if !self.dones[k] => {
                    return Err("live agent missing from the next state");
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Bounded FIFO transition store; once full, new pushes overwrite the
/// oldest entry.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    items: Vec<Transition>,
    capacity: usize,
    /// Ring cursor: where the next push lands once the buffer is full.
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer { items: Vec::new(), capacity, next: 0 }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if let Err(why) = t.validate() {
            panic!("invalid transition pushed to replay buffer: {why}");
        }
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
            self.next = (self.next + 1) % self.capacity;
        }
    }

    /// Samples `min(batch, len)` distinct transitions uniformly.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Vec<&Transition> {
        let amount = batch.min(self.items.len());
        if amount == 0 {
            return Vec::new();
        }
        rand::seq::index::sample(rng, self.items.len(), amount)
            .iter()
            .map(|i| &self.items[i])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Single-agent transition whose reward tags its identity.
    fn tagged(tag: f64) -> Transition {
        Transition {
            slots: vec![0],
            obs: vec![vec![0.0, 1.0]],
            acts: vec![[0.1, -0.1]],
            rewards: vec![tag],
            dones: vec![false],
            next_slots: vec![0],
            next_obs: vec![vec![0.5, 0.5]],
            next_index: vec![Some(0)],
        }
    }

    #[test]
    fn ring_overwrites_oldest_first() {
        let mut buf = ReplayBuffer::new(3);
        for k in 0..5 {
            buf.push(tagged(k as f64));
            assert!(buf.len() <= 3);
        }
        let mut tags: Vec<f64> = (0..buf.len()).map(|_| 0.0).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for t in buf.sample(3, &mut rng) {
            let tag = t.rewards[0] as usize % 3;
            tags[tag] = t.rewards[0];
        }
        // Entries 0 and 1 were overwritten by 3 and 4; 2 survives.
        tags.sort_by(f64::total_cmp);
        assert_eq!(tags, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn sampling_has_no_duplicates_and_caps_at_len() {
        let mut buf = ReplayBuffer::new(100);
        for k in 0..10 {
            buf.push(tagged(k as f64));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        // Requesting more than stored returns everything, once each.
        let batch = buf.sample(64, &mut rng);
        assert_eq!(batch.len(), 10);
        let mut seen: Vec<f64> = batch.iter().map(|t| t.rewards[0]).collect();
        seen.sort_by(f64::total_cmp);
        seen.dedup();
        assert_eq!(seen.len(), 10);
        // Smaller batches stay duplicate-free too.
        for _ in 0..50 {
            let batch = buf.sample(6, &mut rng);
            assert_eq!(batch.len(), 6);
            let mut seen: Vec<f64> = batch.iter().map(|t| t.rewards[0]).collect();
            seen.sort_by(f64::total_cmp);
            let before = seen.len();
            seen.dedup();
            assert_eq!(seen.len(), before, "duplicate index in batch");
        }
    }

    #[test]
    fn sampling_is_uniform_ish_and_seeded() {
        let mut buf = ReplayBuffer::new(20);
        for k in 0..20 {
            buf.push(tagged(k as f64));
        }
        let mut counts = [0u32; 20];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..2000 {
            for t in buf.sample(5, &mut rng) {
                counts[t.rewards[0] as usize] += 1;
            }
        }
        // Expected 500 hits each; a generous band catches gross bias.
        for (k, &c) in counts.iter().enumerate() {
            assert!((350..=650).contains(&c), "item {k} sampled {c} times");
        }
        // Same seed, same draws.
        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = ChaCha8Rng::seed_from_u64(9);
        let ta: Vec<f64> = buf.sample(5, &mut a).iter().map(|t| t.rewards[0]).collect();
        let tb: Vec<f64> = buf.sample(5, &mut b).iter().map(|t| t.rewards[0]).collect();
        assert_eq!(ta, tb);
    }

    #[test]
    fn empty_buffer_yields_empty_batches() {
        let buf = ReplayBuffer::new(4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(buf.sample(8, &mut rng).is_empty());
        assert!(buf.is_empty());
    }

    #[test]
    fn transition_validation_catches_inconsistencies() {
        let good = tagged(1.0);
        assert!(good.validate().is_ok());

        let mut short = tagged(1.0);
        short.rewards.clear();
        assert!(short.validate().is_err());

        let mut ragged = tagged(1.0);
        ragged.next_obs[0].push(9.0);
        assert!(ragged.validate().is_err());

        let mut inf = tagged(1.0);
        inf.rewards[0] = f64::INFINITY;
        assert!(inf.validate().is_err());

        let mut dangling = tagged(1.0);
        dangling.next_index[0] = Some(5);
        assert!(dangling.validate().is_err());

        let mut lost = tagged(1.0);
        lost.next_index[0] = None;
        assert!(lost.validate().is_err(), "live agent must appear in the next state");
        lost.dones[0] = true;
        assert!(lost.validate().is_ok(), "done agent may vanish");
    }

    #[test]
    #[should_panic(expected = "invalid transition")]
    fn push_rejects_invalid_transitions() {
        let mut buf = ReplayBuffer::new(4);
        let mut bad = tagged(0.0);
        bad.rewards[0] = f64::NAN;
        buf.push(bad);
    }
}
