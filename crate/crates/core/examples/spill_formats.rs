//! Writes a small matrix set in f32 and f16, inspects the spill headers,
//! and shows the error a corrupted header produces.

use broadcast_gnn::dio::IoMode;
use broadcast_gnn::storage::{
    read_matrix_set, read_spill, read_spill_header, write_dense_matrix_set, MatrixSet, RowsRef,
};
use half::f16;

fn main() -> broadcast_gnn::Result<()> {
    let dir = tempfile::tempdir().expect("tempdir");
    let (n, dim) = (10u64, 3usize);
    let rows: Vec<f32> = (0..n as usize * dim).map(|i| i as f32 * 0.25).collect();
    let halves: Vec<f16> = rows.iter().map(|&x| f16::from_f32(x)).collect();

    let f32_dir = dir.path().join("f32");
    let f16_dir = dir.path().join("f16");
    write_dense_matrix_set(&f32_dir, RowsRef::F32(&rows), n, dim, 3, IoMode::Buffered)?;
    write_dense_matrix_set(&f16_dir, RowsRef::F16(&halves), n, dim, 3, IoMode::Buffered)?;

    for path in [&f32_dir, &f16_dir] {
        let set = MatrixSet::open(path)?;
        for (partition, spill) in set.spill_paths() {
            let h = read_spill_header(&spill)?;
            println!(
                "{}: partition {partition} ids {}..={} rows {} dtype {:?} ({} bytes)",
                path.file_name().unwrap().to_string_lossy(),
                h.min_id,
                h.max_id,
                h.row_count,
                h.dtype,
                std::fs::metadata(&spill).map(|m| m.len()).unwrap_or(0)
            );
        }
        let (_, back) = read_matrix_set(path)?;
        assert_eq!(back, rows, "values are exact in both widths");
    }

    let (_, spill) = MatrixSet::open(&f32_dir)?.spill_paths().remove(0);
    let mut bytes = std::fs::read(&spill).expect("read spill");
    bytes[0] ^= 0xff;
    std::fs::write(&spill, bytes).expect("write spill");
    match read_spill(&spill) {
        Ok(_) => println!("corruption went unnoticed"),
        Err(e) => println!("corrupted header rejected: {e}"),
    }
    Ok(())
}
