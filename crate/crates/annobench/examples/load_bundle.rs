//! Write a bundle directory, load it back, and normalize the counts.
//!
//! ```bash
//! cargo run --example load_bundle
//! ```

use annobench::dataset::{filter_cells, load_bundle, normalize_counts, save_bundle, Layout};
use annobench::synthetic::random_bundle;

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = random_bundle(2024);
    save_bundle(&bundle, dir.path()).unwrap();
    println!("bundle written to {}", dir.path().display());
    for name in ["genes.txt", "matrix.mtx", "cells.tsv", "synonyms.tsv"] {
        let len = std::fs::metadata(dir.path().join(name)).unwrap().len();
        println!("  {name:<13} {len:>5} bytes");
    }

    let loaded = load_bundle(dir.path()).unwrap();
    assert_eq!(loaded, bundle);
    println!(
        "loaded {} cells × {} genes ({} layout, {} entries)",
        loaded.matrix.n_cells,
        loaded.genes.len(),
        loaded.matrix.layout,
        loaded.matrix.entries().len()
    );

    let kept = filter_cells(&loaded, 10).unwrap();
    println!(
        "min_reads=10 keeps {} of {} cells",
        kept.matrix.n_cells, loaded.matrix.n_cells
    );
    if kept.matrix.n_cells > 0 {
        let norm = normalize_counts(&kept.matrix).unwrap();
        assert_eq!(norm.layout, Layout::Lognorm);
        let totals: Vec<f64> = norm
            .cell_totals()
            .iter()
            .map(|t| (t * 100.0).round() / 100.0)
            .collect();
        println!("log1p-normalized cell totals: {totals:?}");
    }
}
