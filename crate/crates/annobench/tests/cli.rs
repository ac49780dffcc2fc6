//! Integration tests against the compiled binary: subcommand surfaces,
//! exit codes, and the accessibility-translation chain.

mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use annobench::dataset::{
    save_bundle, CellMeta, DatasetBundle, ExpressionMatrix, GeneList, Layout, MatrixEntry,
    SynonymSet,
};
use annobench::synthetic::planted_bundle;

fn annobench(workdir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_annobench"))
        .arg("--workdir")
        .arg(workdir)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn deg_emits_ranked_tsv() {
    let dir = tempfile::tempdir().unwrap();
    // 3 types: each type's own planted markers dominate its ranking (with 2
    // types the other type's markers tie as down-regulated DEGs)
    let (bundle, planted) = planted_bundle(3, 20, 12, 2, 5.0, 9);
    save_bundle(&bundle, &dir.path().join("bundle")).unwrap();
    let out = annobench(dir.path(), &["deg", "--bundle", "bundle", "--k", "3"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "cell_type\trank\tgene\tt_stat\tp_value");
    assert_eq!(lines.len(), 1 + 3 * 3);
    // the top-ranked gene of each type is one of its planted markers
    for (cell_type, genes) in &planted {
        let top = lines
            .iter()
            .find(|l| l.starts_with(&format!("{cell_type}\t1\t")))
            .unwrap();
        let gene = top.split('\t').nth(2).unwrap();
        assert!(genes.iter().any(|g| g == gene), "{top}");
    }
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("run.toml"),
        r#"bundle = "bundle"
output_dir = "out"
strategies = []

[replay]
mode = "replay"
store = "store.jsonl"

[[providers]]
name = "mock"
endpoint = "http://localhost:9"
model = "m"
"#,
    )
    .unwrap();
    let out = annobench(dir.path(), &["annotate", "--config", "run.toml"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("at least one strategy"));
}

fn replay_config(mode: &str, endpoint: &str) -> String {
    format!(
        r#"bundle = "bundle"
output_dir = "out"
k_markers = 5
strategies = ["zero_shot"]

[replay]
mode = "{mode}"
store = "store.jsonl"

[[providers]]
name = "mock"
endpoint = "{endpoint}"
model = "mock-model"
timeout_ms = 5000

[providers.retry]
max_attempts = 1
base_backoff_ms = 1
"#
    )
}

#[test]
fn replay_misses_are_error_rows_and_fail_fast_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let (bundle, _) = planted_bundle(3, 10, 15, 2, 5.0, 5);
    save_bundle(&bundle, &dir.path().join("bundle")).unwrap();
    fs::write(dir.path().join("store.jsonl"), "").unwrap();
    fs::write(
        dir.path().join("run.toml"),
        replay_config("replay", "http://unused.invalid"),
    )
    .unwrap();

    // fail-fast aborts with exit code 1
    let out = annobench(
        dir.path(),
        &["annotate", "--config", "run.toml", "--fail-fast"],
    );
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));

    // without fail-fast: error rows recorded, exit code 0, warning printed
    let dir2 = tempfile::tempdir().unwrap();
    save_bundle(&bundle, &dir2.path().join("bundle")).unwrap();
    fs::write(dir2.path().join("store.jsonl"), "").unwrap();
    fs::write(
        dir2.path().join("run.toml"),
        replay_config("replay", "http://unused.invalid"),
    )
    .unwrap();
    let out = annobench(dir2.path(), &["annotate", "--config", "run.toml"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stderr(&out).contains("3 samples failed"));
    let predictions = fs::read_to_string(
        dir2.path().join("out/mock-model/zero_shot/predictions.jsonl"),
    )
    .unwrap();
    assert_eq!(predictions.lines().count(), 1 + 3);
    assert!(predictions.contains("no recorded response"));
}

#[test]
fn record_evaluate_report_through_binary_and_resume() {
    let server = common::spawn_chat_server();
    let dir = tempfile::tempdir().unwrap();
    let (bundle, _) = planted_bundle(4, 10, 16, 2, 5.0, 21);
    save_bundle(&bundle, &dir.path().join("bundle")).unwrap();
    fs::write(
        dir.path().join("run.toml"),
        replay_config("record", &server.endpoint),
    )
    .unwrap();

    let out = annobench(dir.path(), &["annotate", "--config", "run.toml"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("mock: 4 gateway calls"));

    // a rerun resumes: zero new gateway calls, zero served requests
    let before = server.served.load(std::sync::atomic::Ordering::SeqCst);
    let out = annobench(dir.path(), &["annotate", "--config", "run.toml"]);
    assert!(out.status.success());
    assert!(stdout(&out).contains("mock: 0 gateway calls"), "{}", stdout(&out));
    assert_eq!(
        server.served.load(std::sync::atomic::Ordering::SeqCst),
        before
    );

    let out = annobench(dir.path(), &["evaluate", "--config", "run.toml"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("scored 4 rows"));
    assert!(dir.path().join("out/mock-model/zero_shot/scores.jsonl").is_file());
    assert!(dir.path().join("out/summary.csv").is_file());

    let out = annobench(dir.path(), &["report", "--config", "run.toml"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let table = stdout(&out);
    assert!(table.contains("mock-model"));
    assert!(table.contains("zero_shot"));
    assert!(dir.path().join("out/leaderboard.txt").is_file());
}

#[test]
fn report_without_scores_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir_all(dir.path().join("out")).unwrap();
    let out = annobench(dir.path(), &["report", "--output-dir", "out"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("no prediction rows"));
}

/// Build a tiny paired corpus on disk: a lognorm expression bundle, a binary
/// accessibility bundle, and the pairing file.
fn write_paired_corpus(dir: &Path) {
    let (rna, _) = planted_bundle(3, 8, 10, 2, 5.0, 31);
    save_bundle(&rna, &dir.join("rna")).unwrap();

    let n_cells = rna.matrix.n_cells;
    let n_peaks = 14;
    let mut entries = Vec::new();
    for cell in 0..n_cells {
        let class = cell / 8;
        for peak in 0..n_peaks {
            // class-specific accessibility stripes
            if peak % 3 == class || (cell + peak) % 7 == 0 {
                entries.push(MatrixEntry { cell, gene: peak, value: 1.0 });
            }
        }
    }
    let matrix = ExpressionMatrix::new(n_cells, n_peaks, Layout::Binary, entries).unwrap();
    let genes = GeneList::new((0..n_peaks).map(|i| format!("peak{i}")).collect()).unwrap();
    let cells: Vec<CellMeta> = (0..n_cells)
        .map(|i| CellMeta {
            cell_id: format!("atac{i:02}"),
            cell_type: format!("type{}", i / 8),
            tissue: "Tissue".to_string(),
            dataset_id: "paired".to_string(),
            species: "none".to_string(),
        })
        .collect();
    let mut labels = std::collections::BTreeMap::new();
    for t in 0..3 {
        labels.insert(format!("type{t}"), SynonymSet::singleton(&format!("type{t}")));
    }
    let atac = DatasetBundle::new(genes, matrix, cells, labels).unwrap();
    save_bundle(&atac, &dir.join("atac")).unwrap();

    let mut pairs = String::from("rna_cell_id\tatac_cell_id\tclass\n");
    for i in 0..n_cells {
        pairs.push_str(&format!(
            "{}\tatac{i:02}\t{}\n",
            rna.cells[i].cell_id, rna.cells[i].cell_type
        ));
    }
    fs::write(dir.join("pairs.tsv"), pairs).unwrap();
}

#[test]
fn align_train_translate_then_deg_chain() {
    let dir = tempfile::tempdir().unwrap();
    write_paired_corpus(dir.path());
    let out = annobench(
        dir.path(),
        &[
            "align",
            "train",
            "--rna",
            "rna",
            "--atac",
            "atac",
            "--pairs",
            "pairs.tsv",
            "--out",
            "model.json",
            "--steps",
            "40",
            "--batch-size",
            "8",
            "--d-latent",
            "4",
            "--d-embed",
            "8",
            "--tfidf-keep",
            "12",
        ],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(dir.path().join("model.json").is_file());

    let out = annobench(
        dir.path(),
        &[
            "align",
            "translate",
            "--model",
            "model.json",
            "--atac",
            "atac",
            "--out",
            "pseudo",
        ],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("translated 24 cells"));

    // the emitted bundle loads, validates, and feeds marker selection
    let pseudo = annobench::dataset::load_bundle(&dir.path().join("pseudo")).unwrap();
    assert_eq!(pseudo.matrix.layout, Layout::Lognorm);
    assert_eq!(pseudo.genes.len(), 10);
    let out = annobench(dir.path(), &["deg", "--bundle", "pseudo", "--k", "2"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).lines().count() > 1);
}
