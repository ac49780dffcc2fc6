//! Show the single-call and two-call message sequences for one query.
//!
//! ```bash
//! cargo run --example build_prompts
//! ```

use annobench::dataset::SynonymSet;
use annobench::prompt::{
    build_cot_round1, build_cot_round2, build_zero_shot, CellQuery, PromptOptions,
};

fn print_messages(title: &str, messages: &[annobench::prompt::ChatMessage]) {
    println!("— {title} —");
    for m in messages {
        println!("[{:?}] {}", m.role, m.content);
    }
    println!();
}

fn main() {
    let query = CellQuery {
        sample_id: "demo".to_string(),
        markers: ["MS4A1", "TNFRSF13B", "IGHM", "IGHD", "CD79A"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        context: "PBMC".to_string(),
        references: SynonymSet::new("B cell".to_string(), vec!["B lymphocyte".to_string()]),
    };

    let opts = PromptOptions::default();
    print_messages("single call", &build_zero_shot(&query, &opts));
    print_messages("two-call, round 1", &build_cot_round1(&query, &opts));
    print_messages(
        "two-call, round 2",
        &build_cot_round2(&query, &opts, "MS4A1 and CD79A are canonical B-cell markers …"),
    );

    // the wording variant used by the recorded transcript fixtures
    let opts = PromptOptions::transcript_style();
    print_messages("transcript style, round 1", &build_cot_round1(&query, &opts));
}
