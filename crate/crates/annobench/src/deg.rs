//! One-vs-rest differential expression: Welch's t-test per (cell type, gene),
//! ranked ascending by p-value, top-k genes become the marker list.

use std::collections::BTreeMap;

use rayon::prelude::*;
use thiserror::Error;

use crate::dataset::{DatasetBundle, Layout};
use crate::stats::{welch_t, StatsError, TestResult};

#[derive(Debug, Error)]
pub enum DegError {
    #[error("marker selection requires lognorm layout, matrix has {0}")]
    NotNormalized(Layout),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// Full per-gene ranking for one cell type: ascending p-value, ties broken
/// by descending t-statistic, residual ties by gene-list position.
#[derive(Debug, Clone, PartialEq)]
pub struct DegRanking {
    pub cell_type: String,
    pub ranked: Vec<(String, TestResult)>,
}

/// The top-k marker genes of one cell type, most significant first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MarkerList {
    pub genes: Vec<String>,
}

/// A cell type that could not be tested, with the reason.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedType {
    pub cell_type: String,
    pub n_cells: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DegOutcome {
    pub rankings: BTreeMap<String, DegRanking>,
    pub markers: BTreeMap<String, MarkerList>,
    pub skipped: Vec<SkippedType>,
}

/// Rank every gene for every cell type and keep the top `k` as markers.
///
/// Cell types whose own group or rest group has fewer than 2 cells are
/// skipped with a warning record rather than aborting the run. Group values
/// are accumulated in sorted order, so the output is invariant under any
/// permutation of the bundle's cell rows and byte-identical across repeated
/// calls.
pub fn rank_degs(bundle: &DatasetBundle, k: usize) -> Result<DegOutcome, DegError> {
    if bundle.matrix.layout != Layout::Lognorm {
        return Err(DegError::NotNormalized(bundle.matrix.layout));
    }
    let n = bundle.matrix.n_cells;
    let columns = bundle.matrix.gene_major();
    let groups = bundle.cells_by_type();

    let mut skipped = Vec::new();
    let mut testable: Vec<(&str, &Vec<usize>)> = Vec::new();
    for (ct, idx) in &groups {
        if idx.len() < 2 {
            skipped.push(SkippedType {
                cell_type: ct.to_string(),
                n_cells: idx.len(),
                reason: "cell type has fewer than 2 cells".to_string(),
            });
        } else if n - idx.len() < 2 {
            skipped.push(SkippedType {
                cell_type: ct.to_string(),
                n_cells: idx.len(),
                reason: "rest group has fewer than 2 cells".to_string(),
            });
        } else {
            testable.push((ct, idx));
        }
    }
    for s in &skipped {
        log::warn!("skipping cell type '{}': {}", s.cell_type, s.reason);
    }

    let ranked: Result<Vec<(String, DegRanking)>, DegError> = testable
        .par_iter()
        .map(|(ct, idx)| {
            let ranking = rank_one_type(bundle, &columns, ct, idx, n)?;
            Ok((ct.to_string(), ranking))
        })
        .collect();
    let rankings: BTreeMap<String, DegRanking> = ranked?.into_iter().collect();
    let markers = rankings
        .iter()
        .map(|(ct, r)| {
            (
                ct.clone(),
                MarkerList {
                    genes: r.ranked.iter().take(k).map(|(g, _)| g.clone()).collect(),
                },
            )
        })
        .collect();
    Ok(DegOutcome {
        rankings,
        markers,
        skipped,
    })
}

fn rank_one_type(
    bundle: &DatasetBundle,
    columns: &[Vec<(usize, f64)>],
    cell_type: &str,
    group: &[usize],
    n: usize,
) -> Result<DegRanking, DegError> {
    let mut in_group = vec![false; n];
    let mut slot = vec![0usize; n];
    for (s, &cell) in group.iter().enumerate() {
        in_group[cell] = true;
        slot[cell] = s;
    }
    let mut rest_slot = 0usize;
    for cell in 0..n {
        if !in_group[cell] {
            slot[cell] = rest_slot;
            rest_slot += 1;
        }
    }
    let n_rest = n - group.len();

    let mut results: Vec<(usize, TestResult)> = Vec::with_capacity(columns.len());
    for (gene, col) in columns.iter().enumerate() {
        let mut a = vec![0.0; group.len()];
        let mut b = vec![0.0; n_rest];
        for &(cell, value) in col {
            if in_group[cell] {
                a[slot[cell]] = value;
            } else {
                b[slot[cell]] = value;
            }
        }
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        results.push((gene, welch_t(&a, &b)?));
    }
    results.sort_by(|(gi, ri), (gj, rj)| {
        ri.p_value
            .total_cmp(&rj.p_value)
            .then(rj.t_stat.total_cmp(&ri.t_stat))
            .then(gi.cmp(gj))
    });
    Ok(DegRanking {
        cell_type: cell_type.to_string(),
        ranked: results
            .into_iter()
            .map(|(g, r)| (bundle.genes.name(g).to_string(), r))
            .collect(),
    })
}

/// Tab-separated ranking rows: `cell_type  rank  gene  t_stat  p_value`,
/// at most `k` rows per cell type.
pub fn rankings_tsv(outcome: &DegOutcome, k: usize) -> String {
    let mut out = String::from("cell_type\trank\tgene\tt_stat\tp_value\n");
    for ranking in outcome.rankings.values() {
        for (rank, (gene, r)) in ranking.ranked.iter().take(k).enumerate() {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                ranking.cell_type,
                rank + 1,
                gene,
                r.t_stat,
                r.p_value
            ));
        }
    }
    out
}
