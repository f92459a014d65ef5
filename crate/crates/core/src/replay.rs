//! Transitions, the FIFO replay buffer and flat mini-batches.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub r: f64,
    pub s_next: Vec<f64>,
    /// Failure or goal termination; cuts the bootstrap.
    pub terminated: bool,
    /// Time-limit cut; bootstraps through.
    pub truncated: bool,
}

impl Transition {
    pub fn done(&self) -> bool {
        self.terminated || self.truncated
    }
}

/// Derives an independent generator for one purpose within a seeded run.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Row-major mini-batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub size: usize,
    pub state_dim: usize,
    pub action_dim: usize,
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub r: Vec<f64>,
    pub s_next: Vec<f64>,
    pub terminated: Vec<bool>,
}

impl Batch {
    pub fn from_transitions(ts: &[Transition]) -> Result<Self> {
        let first = ts
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
        let (sd, ad) = (first.s.len(), first.a.len());
        let mut b = Batch {
            size: ts.len(),
            state_dim: sd,
            action_dim: ad,
            s: Vec::with_capacity(ts.len() * sd),
            a: Vec::with_capacity(ts.len() * ad),
            r: Vec::with_capacity(ts.len()),
            s_next: Vec::with_capacity(ts.len() * sd),
            terminated: Vec::with_capacity(ts.len()),
        };
        for t in ts {
            if t.s.len() != sd || t.s_next.len() != sd {
                return Err(Error::dim("transition state", sd, t.s.len().max(t.s_next.len())));
            }
            if t.a.len() != ad {
                return Err(Error::dim("transition action", ad, t.a.len()));
            }
            b.s.extend_from_slice(&t.s);
            b.a.extend_from_slice(&t.a);
            b.r.push(t.r);
            b.s_next.extend_from_slice(&t.s_next);
            b.terminated.push(t.terminated);
        }
        Ok(b)
    }

    /// Rows of `[s, a]`, the critic input.
    pub fn state_actions(&self) -> Vec<f64> {
        concat_rows(&self.s, self.state_dim, &self.a, self.action_dim)
    }
}

/// Row-wise concatenation of two row-major matrices with the same row count.
pub fn concat_rows(left: &[f64], ld: usize, right: &[f64], rd: usize) -> Vec<f64> {
    let rows = if ld > 0 { left.len() / ld } else { right.len() / rd.max(1) };
    let mut out = Vec::with_capacity(rows * (ld + rd));
    for i in 0..rows {
        out.extend_from_slice(&left[i * ld..(i + 1) * ld]);
        out.extend_from_slice(&right[i * rd..(i + 1) * rd]);
    }
    out
}

/// Fixed-capacity ring of transitions stored in flat arrays. Once full, each
/// push overwrites the oldest entry.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    state_dim: usize,
    action_dim: usize,
    s: Vec<f64>,
    a: Vec<f64>,
    r: Vec<f64>,
    s_next: Vec<f64>,
    terminated: Vec<bool>,
    truncated: Vec<bool>,
    inserted: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, state_dim: usize, action_dim: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("buffer capacity must be >= 1".into()));
        }
        Ok(Self {
            capacity,
            state_dim,
            action_dim,
            s: Vec::new(),
            a: Vec::new(),
            r: Vec::new(),
            s_next: Vec::new(),
            terminated: Vec::new(),
            truncated: Vec::new(),
            inserted: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    /// Total pushes, including overwritten ones.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn push(&mut self, t: &Transition) -> Result<()> {
        if t.s.len() != self.state_dim || t.s_next.len() != self.state_dim {
            return Err(Error::dim("transition state", self.state_dim, t.s.len()));
        }
        if t.a.len() != self.action_dim {
            return Err(Error::dim("transition action", self.action_dim, t.a.len()));
        }
        let (sd, ad) = (self.state_dim, self.action_dim);
        if self.len() < self.capacity {
            self.s.extend_from_slice(&t.s);
            self.a.extend_from_slice(&t.a);
            self.r.push(t.r);
            self.s_next.extend_from_slice(&t.s_next);
            self.terminated.push(t.terminated);
            self.truncated.push(t.truncated);
        } else {
            let i = (self.inserted % self.capacity as u64) as usize;
            self.s[i * sd..(i + 1) * sd].copy_from_slice(&t.s);
            self.a[i * ad..(i + 1) * ad].copy_from_slice(&t.a);
            self.r[i] = t.r;
            self.s_next[i * sd..(i + 1) * sd].copy_from_slice(&t.s_next);
            self.terminated[i] = t.terminated;
            self.truncated[i] = t.truncated;
        }
        self.inserted += 1;
        Ok(())
    }

    /// Entry by storage slot.
    pub fn get(&self, i: usize) -> Transition {
        let (sd, ad) = (self.state_dim, self.action_dim);
        Transition {
            s: self.s[i * sd..(i + 1) * sd].to_vec(),
            a: self.a[i * ad..(i + 1) * ad].to_vec(),
            r: self.r[i],
            s_next: self.s_next[i * sd..(i + 1) * sd].to_vec(),
            terminated: self.terminated[i],
            truncated: self.truncated[i],
        }
    }

    /// Transitions from oldest to newest.
    pub fn iter_chronological(&self) -> impl Iterator<Item = Transition> + '_ {
        let n = self.len();
        let start = if n < self.capacity {
            0
        } else {
            (self.inserted % self.capacity as u64) as usize
        };
        (0..n).map(move |k| self.get((start + k) % n))
    }

    /// Uniform draw with replacement.
    pub fn sample(&self, rng: &mut impl Rng, n: usize) -> Result<Batch> {
        if self.is_empty() {
            return Err(Error::InvalidArgument("cannot sample an empty buffer".into()));
        }
        let (sd, ad) = (self.state_dim, self.action_dim);
        let mut b = Batch {
            size: n,
            state_dim: sd,
            action_dim: ad,
            s: Vec::with_capacity(n * sd),
            a: Vec::with_capacity(n * ad),
            r: Vec::with_capacity(n),
            s_next: Vec::with_capacity(n * sd),
            terminated: Vec::with_capacity(n),
        };
        for _ in 0..n {
            let i = rng.random_range(0..self.len());
            b.s.extend_from_slice(&self.s[i * sd..(i + 1) * sd]);
            b.a.extend_from_slice(&self.a[i * ad..(i + 1) * ad]);
            b.r.push(self.r[i]);
            b.s_next.extend_from_slice(&self.s_next[i * sd..(i + 1) * sd]);
            b.terminated.push(self.terminated[i]);
        }
        Ok(b)
    }

    /// Distinct slots drawn without replacement, in draw order.
    pub fn sample_transitions(&self, rng: &mut impl Rng, n: usize) -> Result<Vec<Transition>> {
        if n > self.len() {
            return Err(Error::InvalidArgument(format!(
                "requested {n} distinct transitions from a buffer of {}",
                self.len()
            )));
        }
        let idx = rand::seq::index::sample(rng, self.len(), n);
        Ok(idx.iter().map(|i| self.get(i)).collect())
    }
}
