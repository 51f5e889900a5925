//! Uniform ring-buffer replay.

use diffcore::rng::RngStream;
use diffcore::{Tensor32, Real};
use envkit::{ACTION_DIM, OBS_DIM};

#[derive(Clone, Debug)]
pub struct Transition {
    pub obs: [Real; OBS_DIM],
    pub action: [Real; ACTION_DIM],
    pub reward: Real,
    pub next_obs: [Real; OBS_DIM],
    pub done: bool,
}

/// Fixed-capacity ring buffer with uniform sampling.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    data: Vec<Transition>,
    capacity: usize,
    cursor: usize,
    total_pushed: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        ReplayBuffer {
            data: Vec::with_capacity(capacity.min(1 << 20)),
            capacity,
            cursor: 0,
            total_pushed: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn total_pushed(&self) -> u64 {
        self.total_pushed
    }

    pub fn push(&mut self, t: Transition) {
        if self.data.len() < self.capacity {
            self.data.push(t);
        } else {
            self.data[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
        self.total_pushed += 1;
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.data[i]
    }

    pub fn sample_indices(&self, batch: usize, rng: &mut RngStream) -> Vec<usize> {
        (0..batch).map(|_| rng.below(self.data.len())).collect()
    }

    /// Indices uniform over the most recent `window` transitions.
    pub fn sample_recent_indices(
        &self,
        batch: usize,
        window: usize,
        rng: &mut RngStream,
    ) -> Vec<usize> {
        let n = self.data.len();
        let w = window.min(n);
        (0..batch)
            .map(|_| {
                let back = rng.below(w);
                // Most recent item sits just before the cursor.
                (self.cursor + n - 1 - back) % n
            })
            .collect()
    }

    /// Gather a batch into dense tensors: (s [B,44], a [B,12], r, s', done).
    pub fn gather(&self, indices: &[usize]) -> BatchTensors {
        let b = indices.len();
        let mut s = Vec::with_capacity(b * OBS_DIM);
        let mut a = Vec::with_capacity(b * ACTION_DIM);
        let mut r = Vec::with_capacity(b);
        let mut s2 = Vec::with_capacity(b * OBS_DIM);
        let mut done = Vec::with_capacity(b);
        for &i in indices {
            let t = &self.data[i];
            s.extend_from_slice(&t.obs);
            a.extend_from_slice(&t.action);
            r.push(t.reward);
            s2.extend_from_slice(&t.next_obs);
            done.push(t.done);
        }
        BatchTensors {
            obs: Tensor32::from_vec(&[b, OBS_DIM], s).unwrap(),
            action: Tensor32::from_vec(&[b, ACTION_DIM], a).unwrap(),
            reward: r,
            next_obs: Tensor32::from_vec(&[b, OBS_DIM], s2).unwrap(),
            done,
        }
    }
}

pub struct BatchTensors {
    pub obs: Tensor32,
    pub action: Tensor32,
    pub reward: Vec<Real>,
    pub next_obs: Tensor32,
    pub done: Vec<bool>,
}

impl BatchTensors {
    pub fn len(&self) -> usize {
        self.reward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reward.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use diffcore::rng::Seeder;

    fn transition(tag: Real) -> Transition {
        Transition {
            obs: [tag; OBS_DIM],
            action: [tag; ACTION_DIM],
            reward: tag,
            next_obs: [tag; OBS_DIM],
            done: false,
        }
    }

    #[test]
    fn ring_overwrites_oldest() {
        let mut buf = ReplayBuffer::new(4);
        for i in 0..6 {
            buf.push(transition(i as Real));
        }
        assert_eq!(buf.len(), 4);
        let rewards: Vec<Real> = (0..4).map(|i| buf.get(i).reward).collect();
        assert_eq!(rewards, vec![4.0, 5.0, 2.0, 3.0]);
        assert_eq!(buf.total_pushed(), 6);
    }

    #[test]
    fn sampling_is_uniform_within_3_sigma() {
        let mut buf = ReplayBuffer::new(64);
        for i in 0..64 {
            buf.push(transition(i as Real));
        }
        let mut rng = Seeder::new(0).stream("replay");
        let n = 100_000;
        let mut counts = vec![0usize; 64];
        for i in buf.sample_indices(n, &mut rng) {
            counts[i] += 1;
        }
        let expect = n as f64 / 64.0;
        let sigma = (expect * (1.0 - 1.0 / 64.0)).sqrt();
        for &c in &counts {
            assert!((c as f64 - expect).abs() < 3.0 * sigma + 1.0, "count {c}");
        }
    }

    #[test]
    fn recent_window_sampling_hits_only_recent_items() {
        let mut buf = ReplayBuffer::new(100);
        for i in 0..250 {
            buf.push(transition(i as Real));
        }
        let mut rng = Seeder::new(1).stream("replay");
        for i in buf.sample_recent_indices(1000, 30, &mut rng) {
            let tag = buf.get(i).reward;
            assert!(tag >= 220.0, "tag {tag} is outside the recent window");
        }
    }

    #[test]
    fn gather_shapes() {
        let mut buf = ReplayBuffer::new(8);
        for i in 0..8 {
            buf.push(transition(i as Real));
        }
        let batch = buf.gather(&[0, 3, 7]);
        assert_eq!(batch.len(), 3);
        assert_eq!(batch.obs.shape(), &[3, OBS_DIM]);
        assert_eq!(batch.action.shape(), &[3, ACTION_DIM]);
        assert_eq!(batch.reward, vec![0.0, 3.0, 7.0]);
    }
}
