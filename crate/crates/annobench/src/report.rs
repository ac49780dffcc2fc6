//! Human-facing output: the grouped summary CSV and a plain-text
//! leaderboard. Scores export ×100 with two decimals.

use std::collections::BTreeMap;

use crate::eval::{aggregate, GroupField, GroupStats, ScoreRow, METRIC_NAMES};

fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// `group,metric,mean,n` rows, means ×100 rounded to two decimals, preceded
/// by a config-digest comment line.
pub fn render_summary_csv(groups: &BTreeMap<String, GroupStats>, digest: &str) -> String {
    let mut out = format!("# config_digest={digest}\n");
    out.push_str("group,metric,mean,n\n");
    for (key, stats) in groups {
        for metric in METRIC_NAMES {
            let mean = stats.mean.get(metric).expect("known metric");
            out.push_str(&format!(
                "{},{},{:.2},{}\n",
                csv_field(key),
                metric,
                mean * 100.0,
                stats.n
            ));
        }
    }
    out
}

/// Fixed-width per-(model, strategy) table of mean scores ×100.
pub fn render_leaderboard(rows: &[ScoreRow]) -> String {
    let report = aggregate(rows, &[GroupField::Model, GroupField::Strategy])
        .expect("caller checks for rows");
    let mut model_width = "model".len();
    let mut parsed: Vec<(String, String, &GroupStats)> = Vec::new();
    for (key, stats) in &report.groups {
        // key shape: model=...|strategy=...
        let mut model = String::new();
        let mut strategy = String::new();
        for part in key.split('|') {
            if let Some(v) = part.strip_prefix("model=") {
                model = v.to_string();
            } else if let Some(v) = part.strip_prefix("strategy=") {
                strategy = v.to_string();
            }
        }
        model_width = model_width.max(model.len());
        parsed.push((model, strategy, stats));
    }
    let mut out = format!(
        "{:<model_width$}  {:<9}  {:>7}  {:>7}  {:>7}  {:>7}  {:>7}  {:>5}\n",
        "model", "strategy", "BLEU-1", "BLEU-2", "Average", "EM", "F1", "n"
    );
    for (model, strategy, stats) in parsed {
        let m = &stats.mean;
        out.push_str(&format!(
            "{:<model_width$}  {:<9}  {:>7.2}  {:>7.2}  {:>7.2}  {:>7.2}  {:>7.2}  {:>5}\n",
            model,
            strategy,
            m.bleu1 * 100.0,
            m.bleu2 * 100.0,
            m.bleu_avg * 100.0,
            m.em * 100.0,
            m.f1 * 100.0,
            stats.n
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::Strategy;

    fn score_row(model: &str, strategy: Strategy, b1: f64, b2: f64, avg: f64) -> ScoreRow {
        ScoreRow {
            sample_id: "s".to_string(),
            model: model.to_string(),
            strategy,
            tissue: "PBMC".to_string(),
            dataset_id: "d".to_string(),
            prediction: "p".to_string(),
            bleu1: b1,
            bleu2: b2,
            bleu_avg: avg,
            em: 0.0,
            f1: 0.0,
        }
    }

    #[test]
    fn leaderboard_renders_x100_two_decimals() {
        let rows = vec![
            score_row("Mixtral-8x22B", Strategy::Cot, 0.4096, 0.1940, 0.2819),
            score_row("Mixtral-8x22B", Strategy::Cot, 0.4096, 0.1940, 0.2819),
            score_row("Mixtral-8x22B", Strategy::ZeroShot, 0.2642, 0.1049, 0.1665),
        ];
        let table = render_leaderboard(&rows);
        let cot_line = table
            .lines()
            .find(|l| l.contains("Mixtral-8x22B") && l.contains("cot"))
            .unwrap();
        assert!(cot_line.contains("40.96"), "{cot_line}");
        assert!(cot_line.contains("19.40"), "{cot_line}");
        assert!(cot_line.contains("28.19"), "{cot_line}");
    }

    #[test]
    fn summary_csv_has_digest_and_scaled_means() {
        let rows = vec![score_row("m", Strategy::ZeroShot, 0.5, 0.25, 0.3536)];
        let report = aggregate(&rows, &[]).unwrap();
        let csv = render_summary_csv(&report.groups, "abc123");
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "# config_digest=abc123");
        assert_eq!(lines[1], "group,metric,mean,n");
        assert!(lines.contains(&"all,bleu1,50.00,1"));
        assert!(lines.contains(&"all,bleu2,25.00,1"));
    }

    #[test]
    fn csv_fields_with_commas_are_quoted() {
        assert_eq!(csv_field("a,b"), "\"a,b\"");
        assert_eq!(csv_field("plain"), "plain");
        assert_eq!(csv_field("say \"hi\""), "\"say \"\"hi\"\"\"");
    }
}
