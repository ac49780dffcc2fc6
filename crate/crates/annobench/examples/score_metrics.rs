//! Score a few predictions against multi-reference ground truth.
//!
//! ```bash
//! cargo run --example score_metrics
//! ```

use annobench::dataset::SynonymSet;
use annobench::eval::score_sample;
use annobench::label::{normalize_label, normalized_references, process_response};

fn main() {
    let cases: Vec<(&str, SynonymSet)> = vec![
        (
            "B cells",
            SynonymSet::new("B cell".to_string(), vec!["B lymphocyte".to_string()]),
        ),
        (
            "Dendritic cells, specifically the CD141+ (BDCA-3+) subset",
            SynonymSet::singleton("Myeloid dendritic cell"),
        ),
        (
            "Proximal tubule cell.\nThe markers Lrp2 and Pdzk1 …",
            SynonymSet::singleton("Proximal tubule cell"),
        ),
        (
            "Hematopoietic progenitor cell",
            SynonymSet::singleton("Plasmablast"),
        ),
    ];
    println!(
        "{:<34} {:<28} {:>6} {:>6} {:>6} {:>4} {:>6}",
        "raw response", "normalized", "BLEU-1", "BLEU-2", "Avg", "EM", "F1"
    );
    for (raw, references) in cases {
        let cleansed = process_response(raw);
        let refs = normalized_references(&references);
        let (b, em, f1) = score_sample(&cleansed.normalized, &refs).unwrap();
        println!(
            "{:<34} {:<28} {:>6.3} {:>6.3} {:>6.3} {:>4} {:>6.3}",
            truncate(raw, 32),
            cleansed.normalized,
            b.bleu1,
            b.bleu2,
            b.bleu_avg,
            em as u8,
            f1
        );
    }
    // normalization folds case, articles, plurals, and marker punctuation
    for raw in ["The B-cells", "CD141+ dendritic cells", "antibodies"] {
        println!("normalize_label({raw:?}) = {:?}", normalize_label(raw));
    }
}

fn truncate(s: &str, max: usize) -> String {
    if s.len() <= max {
        s.to_string()
    } else {
        format!("{}…", &s[..max])
    }
}
