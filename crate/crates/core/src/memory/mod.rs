//! Fixed-budget hot store of partial aggregates, a buffered disk-backed
//! cold store for evicted partial states, and the eviction policies.

mod heap;
mod policy;

pub use heap::EvictionHeap;
pub use policy::EvictionPolicyKind;

use std::fs::{File, OpenOptions};
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};

use policy::Policy;

use crate::error::{Error, IoContext, Result};
use crate::storage::VertexId;

const NO_SLOT: u32 = u32::MAX;

/// How a message is folded into a slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Combine {
    /// Element-wise add into the leading `message.len()` columns.
    Sum,
    /// Overwrite the trailing half `[d, 2d)` (SAGE self embedding).
    WriteSelfHalf,
}

/// Fixed array of `slot_count` accumulator rows.
#[derive(Debug)]
pub struct HotStore {
    slot_dim: usize,
    slots: Vec<f32>,
    slot_of: Vec<u32>,
    owner: Vec<u32>,
    free: Vec<u32>,
}

impl HotStore {
    pub fn new(num_vertices: usize, slot_count: usize, slot_dim: usize) -> Self {
        Self {
            slot_dim,
            slots: vec![0.0; slot_count * slot_dim],
            slot_of: vec![NO_SLOT; num_vertices],
            owner: vec![NO_SLOT; slot_count],
            // popped from the back, so slot 0 is handed out first
            free: (0..slot_count as u32).rev().collect(),
        }
    }

    pub fn slot_count(&self) -> usize {
        self.owner.len()
    }

    pub fn slot_dim(&self) -> usize {
        self.slot_dim
    }

    pub fn population(&self) -> usize {
        self.slot_count() - self.free.len()
    }

    pub fn is_full(&self) -> bool {
        self.free.is_empty()
    }

    pub fn slot_of(&self, v: VertexId) -> Option<u32> {
        let s = self.slot_of[v as usize];
        (s != NO_SLOT).then_some(s)
    }

    pub fn row(&self, slot: u32) -> &[f32] {
        let s = slot as usize * self.slot_dim;
        &self.slots[s..s + self.slot_dim]
    }

    fn row_mut(&mut self, slot: u32) -> &mut [f32] {
        let s = slot as usize * self.slot_dim;
        &mut self.slots[s..s + self.slot_dim]
    }

    fn assign(&mut self, v: VertexId) -> u32 {
        let slot = self.free.pop().expect("assign on full hot store");
        self.slot_of[v as usize] = slot;
        self.owner[slot as usize] = v as u32;
        slot
    }

    fn free_slot(&mut self, v: VertexId) -> u32 {
        let slot = self.slot_of[v as usize];
        self.slot_of[v as usize] = NO_SLOT;
        self.owner[slot as usize] = NO_SLOT;
        self.free.push(slot);
        slot
    }

    /// O(1) consistency of one mapping; full scans are left to the tests.
    fn check_slot(&self, v: VertexId, slot: u32) -> bool {
        self.slot_of[v as usize] == slot
            && self.owner[slot as usize] == v as u32
            && self.free.len() <= self.slot_count()
    }

    #[cfg(test)]
    fn check_invariants(&self) -> bool {
        let mapped = self.slot_of.iter().filter(|&&s| s != NO_SLOT).count();
        mapped + self.free.len() == self.slot_count()
    }
}

/// Disk tier for evicted partial states: slot-sized f32 records in one
/// file, accessed through the OS page cache, with record reuse.
#[derive(Debug)]
pub struct ColdStore {
    path: PathBuf,
    file: File,
    record_bytes: u64,
    record_of: std::collections::HashMap<u32, u64>,
    free_records: Vec<u64>,
    next_record: u64,
    pub bytes_read: u64,
    pub bytes_written: u64,
    scratch: Vec<u8>,
}

impl ColdStore {
    pub fn create(path: &Path, slot_dim: usize) -> Result<Self> {
        let file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(true)
            .open(path)
            .at(path)?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
            record_bytes: slot_dim as u64 * 4,
            record_of: Default::default(),
            free_records: Vec::new(),
            next_record: 0,
            bytes_read: 0,
            bytes_written: 0,
            scratch: Vec::with_capacity(slot_dim * 4),
        })
    }

    pub fn contains(&self, v: VertexId) -> bool {
        self.record_of.contains_key(&(v as u32))
    }

    pub fn len(&self) -> usize {
        self.record_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.record_of.is_empty()
    }

    /// Peak number of records ever allocated; bounds the file size.
    pub fn record_capacity(&self) -> u64 {
        self.next_record
    }

    fn put(&mut self, v: VertexId, row: &[f32]) -> Result<()> {
        debug_assert!(!self.contains(v));
        let rec = self.free_records.pop().unwrap_or_else(|| {
            self.next_record += 1;
            self.next_record - 1
        });
        self.scratch.clear();
        for x in row {
            self.scratch.extend_from_slice(&x.to_le_bytes());
        }
        self.file
            .write_all_at(&self.scratch, rec * self.record_bytes)
            .at(&self.path)?;
        self.bytes_written += self.record_bytes;
        self.record_of.insert(v as u32, rec);
        Ok(())
    }

    fn take(&mut self, v: VertexId, out: &mut [f32]) -> Result<()> {
        let rec = self.record_of.remove(&(v as u32)).ok_or(Error::ColdMiss(v))?;
        self.scratch.resize(self.record_bytes as usize, 0);
        self.file
            .read_exact_at(&mut self.scratch, rec * self.record_bytes)
            .at(&self.path)?;
        self.bytes_read += self.record_bytes;
        for (o, c) in out.iter_mut().zip(self.scratch.chunks_exact(4)) {
            *o = f32::from_le_bytes(c.try_into().unwrap());
        }
        self.free_records.push(rec);
        Ok(())
    }
}

impl Drop for ColdStore {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MemoryCounters {
    pub admissions: u64,
    pub evictions: u64,
    pub eviction_events: u64,
    pub reloads: u64,
    pub unique_reloads: u64,
    pub releases: u64,
    pub peak_hot: u64,
    pub cold_bytes_read: u64,
    pub cold_bytes_written: u64,
    pub peak_cold_records: u64,
}

#[derive(Debug, Clone)]
pub struct MemoryConfig {
    pub slot_count: usize,
    pub slot_dim: usize,
    pub policy: EvictionPolicyKind,
    /// Victims taken per eviction event; `None` means max(1, 1% of slots).
    pub evict_batch: Option<usize>,
    pub cold_path: PathBuf,
}

/// Hot store + cold store + eviction policy, owned by the orchestrator.
#[derive(Debug)]
pub struct MemoryManager {
    hot: HotStore,
    cold: ColdStore,
    policy: Policy,
    pending: Vec<u32>,
    evict_batch: usize,
    reloaded: Vec<bool>,
    victims: Vec<u32>,
    counters: MemoryCounters,
}

impl MemoryManager {
    /// `pending[v]` is the number of contributions `v` awaits this layer.
    pub fn new(config: &MemoryConfig, pending: Vec<u32>) -> Result<Self> {
        if config.slot_count == 0 {
            return Err(Error::Config("hot store has zero slots".into()));
        }
        if config.slot_dim == 0 {
            return Err(Error::Config("slot width is zero".into()));
        }
        let n = pending.len();
        if n as u64 >= u32::MAX as u64 {
            return Err(Error::Config(format!("{n} vertices exceed the 32-bit slot map")));
        }
        let max_pending = pending.iter().copied().max().unwrap_or(0);
        let slot_count = config.slot_count.min(n.max(1));
        Ok(Self {
            hot: HotStore::new(n, slot_count, config.slot_dim),
            cold: ColdStore::create(&config.cold_path, config.slot_dim)?,
            policy: Policy::new(config.policy, n, max_pending),
            pending,
            evict_batch: config
                .evict_batch
                .unwrap_or_else(|| (slot_count / 100).max(1))
                .max(1),
            reloaded: vec![false; n],
            victims: Vec::new(),
            counters: MemoryCounters::default(),
        })
    }

    pub fn hot(&self) -> &HotStore {
        &self.hot
    }

    pub fn pending(&self, v: VertexId) -> u32 {
        self.pending[v as usize]
    }

    pub fn is_hot(&self, v: VertexId) -> bool {
        self.hot.slot_of(v).is_some()
    }

    pub fn is_cold(&self, v: VertexId) -> bool {
        self.cold.contains(v)
    }

    pub fn cold_len(&self) -> usize {
        self.cold.len()
    }

    pub fn counters(&self) -> MemoryCounters {
        let mut c = self.counters;
        c.cold_bytes_read = self.cold.bytes_read;
        c.cold_bytes_written = self.cold.bytes_written;
        c.peak_cold_records = self.cold.record_capacity();
        c
    }

    pub fn slot_row(&self, v: VertexId) -> Option<&[f32]> {
        self.hot.slot_of(v).map(|s| self.hot.row(s))
    }

    /// Gives `v` a slot, evicting first if none is free. The slot is zeroed
    /// or filled from `initial`. Evicted vertices are appended to `evicted`.
    pub fn admit(
        &mut self,
        v: VertexId,
        initial: Option<&[f32]>,
        evicted: &mut Vec<VertexId>,
    ) -> Result<u32> {
        if self.is_hot(v) {
            return Err(Error::Contract(format!("admit of HOT vertex {v}")));
        }
        if self.hot.is_full() {
            self.evict(self.evict_batch, evicted)?;
        }
        let slot = self.hot.assign(v);
        let row = self.hot.row_mut(slot);
        match initial {
            Some(state) => {
                if state.len() != row.len() {
                    return Err(Error::DimMismatch {
                        expected: row.len(),
                        found: state.len(),
                        context: "admitted state",
                    });
                }
                row.copy_from_slice(state);
            }
            None => row.fill(0.0),
        }
        self.policy.insert(v as u32, self.pending[v as usize]);
        self.counters.admissions += 1;
        let pop = self.hot.population() as u64;
        self.counters.peak_hot = self.counters.peak_hot.max(pop);
        debug_assert!(self.hot.check_slot(v, slot));
        Ok(slot)
    }

    /// Folds one message into `v`'s slot and returns the remaining count.
    pub fn accumulate(&mut self, v: VertexId, message: &[f32], combine: Combine) -> Result<u32> {
        let slot = self
            .hot
            .slot_of(v)
            .ok_or_else(|| Error::Contract(format!("accumulate into non-HOT vertex {v}")))?;
        let p = &mut self.pending[v as usize];
        if *p == 0 {
            return Err(Error::Contract(format!("vertex {v} has no pending messages")));
        }
        let row = self.hot.row_mut(slot);
        match combine {
            Combine::Sum => {
                if message.len() > row.len() {
                    return Err(Error::DimMismatch {
                        expected: row.len(),
                        found: message.len(),
                        context: "message",
                    });
                }
                for (a, m) in row.iter_mut().zip(message) {
                    *a += m;
                }
            }
            Combine::WriteSelfHalf => {
                if message.len() * 2 != row.len() {
                    return Err(Error::DimMismatch {
                        expected: row.len() / 2,
                        found: message.len(),
                        context: "self half",
                    });
                }
                let d = message.len();
                row[d..].copy_from_slice(message);
            }
        }
        *p -= 1;
        let left = *p;
        if left > 0 {
            self.policy.accumulated(v as u32);
        }
        Ok(left)
    }

    /// Moves up to `k` HOT vertices to the cold store per the policy.
    pub fn evict(&mut self, k: usize, evicted: &mut Vec<VertexId>) -> Result<()> {
        let population = self.hot.population();
        let k = if k > population {
            log::warn!("eviction of {k} vertices clamped to HOT population {population}");
            population
        } else {
            k
        };
        self.victims.clear();
        self.policy.select(k, &mut self.victims);
        if !self.victims.is_empty() {
            self.counters.eviction_events += 1;
        }
        for i in 0..self.victims.len() {
            let v = self.victims[i] as VertexId;
            let slot = self.hot.slot_of(v).expect("policy tracked a non-HOT vertex");
            // borrowck: copy through a split borrow of hot and cold
            let (hot, cold) = (&self.hot, &mut self.cold);
            cold.put(v, hot.row(slot))?;
            self.hot.free_slot(v);
            evicted.push(v);
        }
        self.counters.evictions += self.victims.len() as u64;
        Ok(())
    }

    /// Brings a COLD vertex back, restoring its partial state bit-exactly.
    pub fn reload(&mut self, v: VertexId, evicted: &mut Vec<VertexId>) -> Result<u32> {
        let mut state = vec![0f32; self.hot.slot_dim()];
        self.cold.take(v, &mut state)?;
        let slot = self.admit(v, Some(&state), evicted)?;
        self.counters.reloads += 1;
        if !std::mem::replace(&mut self.reloaded[v as usize], true) {
            self.counters.unique_reloads += 1;
        }
        Ok(slot)
    }

    /// Copies out a finished vertex's aggregate and frees its slot.
    pub fn release(&mut self, v: VertexId, out: &mut Vec<f32>) -> Result<()> {
        let slot = self
            .hot
            .slot_of(v)
            .ok_or_else(|| Error::Contract(format!("release of non-HOT vertex {v}")))?;
        if self.pending[v as usize] != 0 {
            return Err(Error::Contract(format!(
                "release of vertex {v} with {} pending",
                self.pending[v as usize]
            )));
        }
        out.extend_from_slice(self.hot.row(slot));
        self.policy.remove(v as u32);
        self.hot.free_slot(v);
        self.counters.releases += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manager(dir: &Path, slots: usize, dim: usize, pending: Vec<u32>) -> MemoryManager {
        MemoryManager::new(
            &MemoryConfig {
                slot_count: slots,
                slot_dim: dim,
                policy: EvictionPolicyKind::MinPending,
                evict_batch: Some(1),
                cold_path: dir.join("cold"),
            },
            pending,
        )
        .unwrap()
    }

    #[test]
    fn admit_into_empty_store() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = manager(dir.path(), 4, 2, vec![1; 10]);
        let mut ev = vec![];
        assert_eq!(m.admit(7, None, &mut ev).unwrap(), 0);
        assert_eq!(m.slot_row(7).unwrap(), &[0.0, 0.0]);
        assert!(ev.is_empty());
    }

    #[test]
    fn forced_eviction_and_bit_exact_reload() {
        let dir = tempfile::tempdir().unwrap();
        let mut pending = vec![1; 10];
        pending[3] = 5;
        let mut m = manager(dir.path(), 1, 2, pending);
        let mut ev = vec![];
        m.admit(3, None, &mut ev).unwrap();
        let odd = [f32::from_bits(0x7fc0_0001), -0.0];
        m.accumulate(3, &[1.5, 0.0], Combine::Sum).unwrap();
        let before: Vec<u32> = m.slot_row(3).unwrap().iter().map(|x| x.to_bits()).collect();
        m.admit(9, None, &mut ev).unwrap();
        assert_eq!(ev, vec![3]);
        assert!(m.is_cold(3) && m.is_hot(9));
        assert_eq!(m.counters().evictions, 1);

        // reload evicts 9 first (depth-1 recursion through admit)
        ev.clear();
        m.reload(3, &mut ev).unwrap();
        assert_eq!(ev, vec![9]);
        let after: Vec<u32> = m.slot_row(3).unwrap().iter().map(|x| x.to_bits()).collect();
        assert_eq!(before, after);

        // NaN payloads and signed zeros survive the cold tier
        ev.clear();
        m.evict(1, &mut ev).unwrap();
        let mut restored = manager(dir.path(), 1, 2, vec![1; 2]);
        restored.admit(0, Some(&odd), &mut ev).unwrap();
        let bits: Vec<u32> = restored.slot_row(0).unwrap().iter().map(|x| x.to_bits()).collect();
        assert_eq!(bits, vec![0x7fc0_0001, 0x8000_0000]);
    }

    #[test]
    fn accumulate_variants() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = manager(dir.path(), 2, 2, vec![2, 3]);
        let mut ev = vec![];
        m.admit(0, Some(&[1.0, 1.0]), &mut ev).unwrap();
        assert_eq!(m.accumulate(0, &[0.5, -1.0], Combine::Sum).unwrap(), 1);
        assert_eq!(m.slot_row(0).unwrap(), &[1.5, 0.0]);
        assert_eq!(m.accumulate(0, &[0.0, 0.0], Combine::Sum).unwrap(), 0);

        let mut s = manager(dir.path(), 2, 4, vec![2]);
        s.admit(0, Some(&[1.0, 2.0, 3.0, 4.0]), &mut ev).unwrap();
        s.accumulate(0, &[9.0, 8.0], Combine::WriteSelfHalf).unwrap();
        assert_eq!(s.slot_row(0).unwrap(), &[1.0, 2.0, 9.0, 8.0]);
    }

    #[test]
    fn contract_violations() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = manager(dir.path(), 2, 1, vec![1, 1]);
        let mut ev = vec![];
        assert!(matches!(
            m.accumulate(0, &[1.0], Combine::Sum),
            Err(Error::Contract(_))
        ));
        assert!(matches!(m.reload(1, &mut ev), Err(Error::ColdMiss(1))));
        m.admit(0, None, &mut ev).unwrap();
        let mut out = vec![];
        assert!(matches!(m.release(0, &mut out), Err(Error::Contract(_))));
        assert!(matches!(m.admit(0, None, &mut ev), Err(Error::Contract(_))));
        m.accumulate(0, &[1.0], Combine::Sum).unwrap();
        m.release(0, &mut out).unwrap();
        assert_eq!(out, vec![1.0]);
        assert_eq!(m.hot().population(), 0);
    }

    #[test]
    fn zero_slots_is_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let r = MemoryManager::new(
            &MemoryConfig {
                slot_count: 0,
                slot_dim: 1,
                policy: EvictionPolicyKind::Lru,
                evict_batch: None,
                cold_path: dir.path().join("c"),
            },
            vec![1],
        );
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn clamped_eviction() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = manager(dir.path(), 3, 1, vec![2; 3]);
        let mut ev = vec![];
        m.admit(1, None, &mut ev).unwrap();
        m.evict(10, &mut ev).unwrap();
        assert_eq!(ev, vec![1]);
    }

    #[test]
    fn conservation_under_churn() {
        let dir = tempfile::tempdir().unwrap();
        let n = 50;
        let mut m = manager(dir.path(), 4, 1, vec![3; n]);
        let mut ev = vec![];
        let mut out = vec![];
        for round in 0..3 {
            for v in 0..n as u64 {
                if m.is_cold(v) {
                    m.reload(v, &mut ev).unwrap();
                } else if !m.is_hot(v) {
                    m.admit(v, None, &mut ev).unwrap();
                }
                if m.accumulate(v, &[1.0], Combine::Sum).unwrap() == 0 {
                    out.clear();
                    m.release(v, &mut out).unwrap();
                    assert_eq!(out, vec![3.0]);
                }
                assert!(m.hot().population() <= 4);
                assert!(m.hot.check_invariants());
            }
            let c = m.counters();
            assert_eq!(
                c.evictions + c.releases + m.hot().population() as u64,
                c.admissions,
                "round {round}"
            );
        }
        assert_eq!(m.counters().releases, n as u64);
    }
}
