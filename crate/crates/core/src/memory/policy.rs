use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::EvictionHeap;
use crate::error::Error;

/// Victim selection rule when the hot store is full.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EvictionPolicyKind {
    /// Fewest remaining pending messages first, FIFO among ties.
    #[default]
    MinPending,
    /// Least recently accumulated first.
    Lru,
    /// Uniformly random, from a seeded generator.
    Random { seed: u64 },
}

impl std::fmt::Display for EvictionPolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EvictionPolicyKind::MinPending => f.write_str("minpend"),
            EvictionPolicyKind::Lru => f.write_str("lru"),
            EvictionPolicyKind::Random { .. } => f.write_str("rnd"),
        }
    }
}

impl EvictionPolicyKind {
    /// Parses `minpend`, `lru` or `rnd`; `seed` feeds the random policy.
    pub fn parse(s: &str, seed: u64) -> Result<Self, Error> {
        match s {
            "minpend" | "min_pending" => Ok(Self::MinPending),
            "lru" => Ok(Self::Lru),
            "rnd" | "random" => Ok(Self::Random { seed }),
            other => Err(Error::Config(format!("unknown eviction policy {other:?}"))),
        }
    }
}

const NIL: u32 = u32::MAX;

/// Recency list threaded through per-vertex arrays.
#[derive(Debug, Clone)]
pub(crate) struct LruList {
    prev: Vec<u32>,
    next: Vec<u32>,
    member: Vec<bool>,
    head: u32,
    tail: u32,
}

impl LruList {
    fn new(universe: usize) -> Self {
        Self {
            prev: vec![NIL; universe],
            next: vec![NIL; universe],
            member: vec![false; universe],
            head: NIL,
            tail: NIL,
        }
    }

    fn push_back(&mut self, v: u32) {
        let vi = v as usize;
        debug_assert!(!self.member[vi]);
        self.member[vi] = true;
        self.prev[vi] = self.tail;
        self.next[vi] = NIL;
        if self.tail == NIL {
            self.head = v;
        } else {
            self.next[self.tail as usize] = v;
        }
        self.tail = v;
    }

    fn unlink(&mut self, v: u32) -> bool {
        let vi = v as usize;
        if !self.member[vi] {
            return false;
        }
        let (p, n) = (self.prev[vi], self.next[vi]);
        if p == NIL {
            self.head = n;
        } else {
            self.next[p as usize] = n;
        }
        if n == NIL {
            self.tail = p;
        } else {
            self.prev[n as usize] = p;
        }
        self.member[vi] = false;
        true
    }

    fn touch(&mut self, v: u32) {
        if self.unlink(v) {
            self.push_back(v);
        }
    }

    fn pop_front(&mut self) -> Option<u32> {
        let v = self.head;
        (v != NIL).then(|| {
            self.unlink(v);
            v
        })
    }
}

#[derive(Debug, Clone)]
pub(crate) struct RandomSet {
    members: Vec<u32>,
    position: Vec<u32>,
    rng: ChaCha8Rng,
}

impl RandomSet {
    fn new(universe: usize, seed: u64) -> Self {
        Self {
            members: Vec::new(),
            position: vec![NIL; universe],
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn insert(&mut self, v: u32) {
        self.position[v as usize] = self.members.len() as u32;
        self.members.push(v);
    }

    fn remove_at(&mut self, idx: usize) -> u32 {
        let v = self.members.swap_remove(idx);
        self.position[v as usize] = NIL;
        if let Some(&moved) = self.members.get(idx) {
            self.position[moved as usize] = idx as u32;
        }
        v
    }

    fn remove(&mut self, v: u32) -> bool {
        let idx = self.position[v as usize];
        if idx == NIL {
            return false;
        }
        self.remove_at(idx as usize);
        true
    }
}

/// Per-layer bookkeeping for the chosen policy over HOT vertices.
#[derive(Debug, Clone)]
pub(crate) enum Policy {
    MinPending(EvictionHeap),
    Lru(LruList),
    Random(RandomSet),
}

impl Policy {
    pub(crate) fn new(kind: EvictionPolicyKind, universe: usize, max_pending: u32) -> Self {
        match kind {
            EvictionPolicyKind::MinPending => {
                Policy::MinPending(EvictionHeap::new(universe, max_pending))
            }
            EvictionPolicyKind::Lru => Policy::Lru(LruList::new(universe)),
            EvictionPolicyKind::Random { seed } => Policy::Random(RandomSet::new(universe, seed)),
        }
    }

    pub(crate) fn insert(&mut self, v: u32, pending: u32) {
        match self {
            Policy::MinPending(h) => h.insert(v, pending),
            Policy::Lru(l) => l.push_back(v),
            Policy::Random(r) => r.insert(v),
        }
    }

    /// Called after `v` received one message.
    pub(crate) fn accumulated(&mut self, v: u32) {
        match self {
            Policy::MinPending(h) => {
                h.decrement(v);
            }
            Policy::Lru(l) => l.touch(v),
            Policy::Random(_) => {}
        }
    }

    pub(crate) fn remove(&mut self, v: u32) {
        match self {
            Policy::MinPending(h) => {
                h.remove(v);
            }
            Policy::Lru(l) => {
                l.unlink(v);
            }
            Policy::Random(r) => {
                r.remove(v);
            }
        }
    }

    /// Removes up to `k` victims and appends them to `out`.
    pub(crate) fn select(&mut self, k: usize, out: &mut Vec<u32>) {
        match self {
            Policy::MinPending(h) => h.pop_min(k, out),
            Policy::Lru(l) => {
                for _ in 0..k {
                    match l.pop_front() {
                        Some(v) => out.push(v),
                        None => break,
                    }
                }
            }
            Policy::Random(r) => {
                for _ in 0..k {
                    if r.members.is_empty() {
                        break;
                    }
                    let idx = r.rng.gen_range(0..r.members.len());
                    out.push(r.remove_at(idx));
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn victims(kind: EvictionPolicyKind) -> Vec<u32> {
        let mut p = Policy::new(kind, 3, 5);
        p.insert(0, 3);
        p.insert(1, 1);
        p.insert(2, 2);
        let mut out = vec![];
        p.select(2, &mut out);
        out
    }

    #[test]
    fn min_pending_example() {
        assert_eq!(victims(EvictionPolicyKind::MinPending), vec![1, 2]);
    }

    #[test]
    fn random_is_seed_deterministic() {
        let k = EvictionPolicyKind::Random { seed: 0 };
        assert_eq!(victims(k), victims(k));
    }

    #[test]
    fn lru_evicts_least_recently_touched() {
        let mut p = Policy::new(EvictionPolicyKind::Lru, 3, 5);
        for v in 0..3 {
            p.insert(v, 4);
        }
        p.accumulated(0);
        let mut out = vec![];
        p.select(2, &mut out);
        assert_eq!(out, vec![1, 2]);
    }

    #[test]
    fn removed_vertices_are_never_selected() {
        for kind in [
            EvictionPolicyKind::MinPending,
            EvictionPolicyKind::Lru,
            EvictionPolicyKind::Random { seed: 9 },
        ] {
            let mut p = Policy::new(kind, 4, 5);
            for v in 0..4 {
                p.insert(v, v);
            }
            p.remove(1);
            p.remove(3);
            let mut out = vec![];
            p.select(10, &mut out);
            out.sort();
            assert_eq!(out, vec![0, 2], "{kind}");
        }
    }
}
