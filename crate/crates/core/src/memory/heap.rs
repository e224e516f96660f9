//! Bucket-indexed min structure keyed by pending-message count.
//!
//! Buckets are intrusive doubly-linked lists threaded through per-vertex
//! `prev`/`next` arrays, so insert, remove and decrement are O(1) and
//! selecting `k` victims is O(k + empty buckets skipped). Within a bucket
//! vertices leave in FIFO order of entering that bucket.

const NIL: u32 = u32::MAX;
const ABSENT: u32 = u32::MAX;

#[derive(Debug, Clone)]
pub struct EvictionHeap {
    head: Vec<u32>,
    tail: Vec<u32>,
    prev: Vec<u32>,
    next: Vec<u32>,
    key: Vec<u32>,
    min_hint: usize,
    len: usize,
}

impl EvictionHeap {
    /// `universe` vertices with keys in `0..=max_key`.
    pub fn new(universe: usize, max_key: u32) -> Self {
        let buckets = max_key as usize + 1;
        Self {
            head: vec![NIL; buckets],
            tail: vec![NIL; buckets],
            prev: vec![NIL; universe],
            next: vec![NIL; universe],
            key: vec![ABSENT; universe],
            min_hint: buckets,
            len: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn contains(&self, v: u32) -> bool {
        self.key[v as usize] != ABSENT
    }

    pub fn key(&self, v: u32) -> Option<u32> {
        let k = self.key[v as usize];
        (k != ABSENT).then_some(k)
    }

    pub fn max_key(&self) -> u32 {
        self.head.len() as u32 - 1
    }

    pub fn insert(&mut self, v: u32, key: u32) {
        assert!(!self.contains(v), "vertex {v} already in heap");
        assert!(key <= self.max_key(), "key {key} above bucket range");
        self.link_tail(v, key);
        self.len += 1;
    }

    /// Moves `v` one bucket down; returns the new key.
    pub fn decrement(&mut self, v: u32) -> u32 {
        let k = self.key(v).expect("decrement of absent vertex");
        assert!(k > 0, "decrement below zero for vertex {v}");
        self.unlink(v);
        self.link_tail(v, k - 1);
        k - 1
    }

    pub fn remove(&mut self, v: u32) -> bool {
        if !self.contains(v) {
            return false;
        }
        self.unlink(v);
        self.key[v as usize] = ABSENT;
        self.len -= 1;
        true
    }

    /// Removes and returns up to `k` vertices with the smallest keys.
    pub fn pop_min(&mut self, k: usize, out: &mut Vec<u32>) {
        let mut taken = 0;
        while taken < k && self.len > 0 {
            while self.head[self.min_hint] == NIL {
                self.min_hint += 1;
            }
            let v = self.head[self.min_hint];
            self.remove(v);
            out.push(v);
            taken += 1;
        }
        if self.len == 0 {
            self.min_hint = self.head.len();
        }
    }

    fn link_tail(&mut self, v: u32, key: u32) {
        let b = key as usize;
        let vi = v as usize;
        self.key[vi] = key;
        self.prev[vi] = self.tail[b];
        self.next[vi] = NIL;
        if self.tail[b] == NIL {
            self.head[b] = v;
        } else {
            self.next[self.tail[b] as usize] = v;
        }
        self.tail[b] = v;
        self.min_hint = self.min_hint.min(b);
    }

    fn unlink(&mut self, v: u32) {
        let vi = v as usize;
        let b = self.key[vi] as usize;
        let (p, n) = (self.prev[vi], self.next[vi]);
        if p == NIL {
            self.head[b] = n;
        } else {
            self.next[p as usize] = n;
        }
        if n == NIL {
            self.tail[b] = p;
        } else {
            self.prev[n as usize] = p;
        }
        self.prev[vi] = NIL;
        self.next[vi] = NIL;
    }
}
