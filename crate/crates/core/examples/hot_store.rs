//! Drives the memory manager by hand: a two-slot hot store, min-pending
//! eviction to the cold store, reload and release.

use broadcast_gnn::memory::{Combine, EvictionHeap, EvictionPolicyKind, MemoryConfig, MemoryManager};

fn main() -> broadcast_gnn::Result<()> {
    let dir = tempfile::tempdir().expect("tempdir");
    // pending message counts for vertices 0..4
    let pending = vec![3, 1, 2, 1];
    let mut mm = MemoryManager::new(
        &MemoryConfig {
            slot_count: 2,
            slot_dim: 2,
            policy: EvictionPolicyKind::MinPending,
            evict_batch: Some(1),
            cold_path: dir.path().join("cold"),
        },
        pending,
    )?;
    let mut evicted = Vec::new();

    mm.admit(0, None, &mut evicted)?;
    mm.accumulate(0, &[1.0, 1.0], Combine::Sum)?;
    mm.admit(2, None, &mut evicted)?;
    mm.accumulate(2, &[0.5, -1.0], Combine::Sum)?;
    println!("hot: 0 pending {}, 2 pending {}", mm.pending(0), mm.pending(2));

    // the store is full; vertex 2 has the fewest pending messages and goes cold
    mm.admit(1, None, &mut evicted)?;
    println!("admitting 1 evicted {evicted:?}; 2 is cold: {}", mm.is_cold(2));
    mm.accumulate(1, &[2.0, 2.0], Combine::Sum)?;
    let mut row = Vec::new();
    mm.release(1, &mut row)?;
    println!("vertex 1 complete: {row:?}");

    evicted.clear();
    mm.reload(2, &mut evicted)?;
    println!("reloaded 2 with state {:?}", mm.slot_row(2).unwrap());
    println!("{:?}", mm.counters());

    // the bucket queue underneath: pop order is by key, FIFO within a key
    let mut heap = EvictionHeap::new(8, 4);
    for (v, key) in [(5, 2), (1, 1), (7, 2), (3, 1)] {
        heap.insert(v, key);
    }
    heap.decrement(7);
    let mut out = Vec::new();
    heap.pop_min(4, &mut out);
    println!("pop order {out:?}");
    Ok(())
}
