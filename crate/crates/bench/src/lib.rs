//! Benchmark-only crate; the measurements live under `benches/`.
//! Run them with `cargo bench -p ufo-bench`.
