//! FIFO replay buffer for online fine-tuning. Every entry is tagged with its
//! provenance so the fine-tuning protocol — train exclusively on freshly
//! collected rollouts — is checkable, not just promised.

use rand::Rng;

use crate::envsim::EnvSpec;
use crate::error::{Error, Result};

use super::batch::Batch;
use super::TransitionRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataSource {
    Offline,
    Online,
}

pub struct ReplayBuffer {
    entries: Vec<(TransitionRecord, DataSource)>,
    capacity: usize,
    /// Next slot to overwrite once the buffer is full.
    cursor: usize,
    inserted: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::config("replay buffer capacity must be positive"));
        }
        Ok(ReplayBuffer { entries: Vec::new(), capacity, cursor: 0, inserted: 0 })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn push(&mut self, record: TransitionRecord, source: DataSource) {
        if self.entries.len() < self.capacity {
            self.entries.push((record, source));
        } else {
            self.entries[self.cursor] = (record, source);
            self.cursor = (self.cursor + 1) % self.capacity;
        }
        self.inserted += 1;
    }

    /// Append one episode's transitions in order.
    pub fn push_rollout(&mut self, episode: Vec<TransitionRecord>, source: DataSource) {
        for r in episode {
            self.push(r, source);
        }
    }

    /// True when every stored transition came from online rollouts.
    pub fn all_online(&self) -> bool {
        self.entries.iter().all(|(_, s)| *s == DataSource::Online)
    }

    pub fn sample(&self, spec: &EnvSpec, batch_size: usize, rng: &mut impl Rng) -> Result<Batch> {
        if self.entries.is_empty() {
            return Err(Error::usage("replay buffer is empty"));
        }
        if batch_size == 0 || batch_size > self.entries.len() {
            return Err(Error::usage(format!(
                "batch_size {batch_size} outside 1..={} (buffer size)",
                self.entries.len()
            )));
        }
        let records: Vec<TransitionRecord> =
            self.entries.iter().map(|(r, _)| r.clone()).collect();
        let indices: Vec<usize> =
            (0..batch_size).map(|_| rng.gen_range(0..records.len())).collect();
        Ok(Batch::gather(&records, &indices, spec))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envsim::{make_env, BehaviorKind};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn records(n_eps: u64) -> Vec<TransitionRecord> {
        let mut env = make_env("two_step").unwrap();
        crate::datastore::generate_records(env.as_mut(), BehaviorKind::Uniform, n_eps, 0)
            .unwrap()
            .1
    }

    #[test]
    fn fifo_eviction_beyond_capacity() {
        let rs = records(4); // 8 records
        let mut buf = ReplayBuffer::new(5).unwrap();
        for r in rs.iter().take(5).cloned() {
            buf.push(r, DataSource::Online);
        }
        assert_eq!(buf.len(), 5);
        buf.push(rs[5].clone(), DataSource::Online);
        assert_eq!(buf.len(), 5);
        assert_eq!(buf.inserted(), 6);
        // the oldest record (episode 0, t 0) is gone
        assert!(!buf.entries.iter().any(|(r, _)| r.episode_id == 0 && r.t == 0));
        // the newest is present
        assert!(buf.entries.iter().any(|(r, _)| *r == rs[5]));
    }

    #[test]
    fn size_tracks_pushes_until_capacity() {
        let rs = records(2);
        let mut buf = ReplayBuffer::new(16).unwrap();
        for (k, r) in rs.iter().enumerate() {
            buf.push(r.clone(), DataSource::Online);
            assert_eq!(buf.len(), k + 1);
        }
    }

    #[test]
    fn sampling_excludes_evicted_items() {
        let rs = records(8); // 16 records
        let mut buf = ReplayBuffer::new(4).unwrap();
        buf.push_rollout(rs.clone(), DataSource::Online);
        // only the last 4 records can appear
        let spec = make_env("two_step").unwrap().spec().clone();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let batch = buf.sample(&spec, 4, &mut rng).unwrap();
        let survivors: Vec<&TransitionRecord> = rs.iter().skip(12).collect();
        for row in 0..batch.size {
            let state_row = batch.state.row(row);
            assert!(survivors.iter().any(|r| r.state == state_row));
        }
    }

    #[test]
    fn provenance_is_tracked() {
        let rs = records(1);
        let mut buf = ReplayBuffer::new(8).unwrap();
        buf.push(rs[0].clone(), DataSource::Online);
        assert!(buf.all_online());
        buf.push(rs[1].clone(), DataSource::Offline);
        assert!(!buf.all_online());
    }
}
