//! Rank marker genes on a synthetic bundle with planted signals.
//!
//! ```bash
//! cargo run --example deg_markers
//! ```

use annobench::deg::rank_degs;
use annobench::synthetic::planted_bundle;

fn main() {
    // 3 cell types × 100 cells × 50 genes, 5 planted markers per type
    let (bundle, planted) = planted_bundle(3, 100, 50, 5, 5.0, 42);
    let outcome = rank_degs(&bundle, 10).unwrap();
    for (cell_type, ranking) in &outcome.rankings {
        println!("{cell_type} (planted: {:?})", planted[cell_type]);
        for (rank, (gene, r)) in ranking.ranked.iter().take(10).enumerate() {
            let mark = if planted[cell_type].contains(gene) { "*" } else { " " };
            println!(
                "  {:>2}. {mark} {gene}  t={:+8.3}  p={:.3e}",
                rank + 1,
                r.t_stat,
                r.p_value
            );
        }
    }
    for s in &outcome.skipped {
        println!("skipped {}: {}", s.cell_type, s.reason);
    }
}
