//! Cross-modality alignment: translate binary chromatin-accessibility
//! profiles into pseudo gene expression so they can flow through the text
//! annotation pipeline.
//!
//! Two autoencoders (one per modality) meet in a shared latent space;
//! per-class discriminators and cycle-consistent cross-mappers align the
//! two latent distributions. After training, translation is
//! `decode_rna(map_ar(encode_atac(x)))`.

mod gradcheck;
mod loss;
mod model;
mod train;

use std::path::PathBuf;

use thiserror::Error;

use crate::dataset::{ExpressionMatrix, Layout};

pub use gradcheck::grad_check;
pub use loss::{discriminator_loss, generator_loss, reconstruction_loss};
pub use model::{
    load_model, save_model, AlignmentModel, Dims, PairedCell, PeakSelection, CHECKPOINT_VERSION,
};
pub use train::{train, LossRecord, TrainConfig, TrainDriver};

#[derive(Debug, Error)]
pub enum AlignError {
    #[error("dimension mismatch: {0}")]
    Dim(String),
    #[error("invalid input: {0}")]
    BadInput(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("class {class} has {have} cells, need {need} (or enable sampling with replacement)")]
    ClassTooSmall {
        class: usize,
        have: usize,
        need: usize,
    },
    #[error("training diverged at step {step}: non-finite loss")]
    Diverged { step: usize },
    #[error("peak selection requires binary layout, matrix has {0}")]
    NotBinary(Layout),
    #[error("peak matrix is all zero")]
    AllZeroMatrix,
    #[error("cannot keep {n_keep} of {n_cols} columns")]
    KeepTooLarge { n_keep: usize, n_cols: usize },
    #[error("no marker has variance across classes")]
    NoDefinedMarkers,
    #[error("checkpoint {path}: {msg}")]
    Checkpoint { path: PathBuf, msg: String },
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
}

/// Rank peaks by summed tf·idf informativeness and keep the top `n_keep`.
///
/// For a binary matrix: tf is the peak's share of its cell's accessible
/// peaks, idf is `ln(n_cells / (1 + cells accessible at the peak))`. Ties
/// break toward the lower column index. Cells with no accessible peaks
/// contribute nothing. The returned index set is ascending.
pub fn tfidf_select(matrix: &ExpressionMatrix, n_keep: usize) -> Result<Vec<usize>, AlignError> {
    if matrix.layout != Layout::Binary {
        return Err(AlignError::NotBinary(matrix.layout));
    }
    if n_keep > matrix.n_genes {
        return Err(AlignError::KeepTooLarge {
            n_keep,
            n_cols: matrix.n_genes,
        });
    }
    let entries = matrix.entries();
    if !entries.iter().any(|e| e.value != 0.0) {
        return Err(AlignError::AllZeroMatrix);
    }
    let mut row_totals = vec![0.0f64; matrix.n_cells];
    let mut col_counts = vec![0usize; matrix.n_genes];
    for e in entries {
        if e.value != 0.0 {
            row_totals[e.cell] += 1.0;
            col_counts[e.gene] += 1;
        }
    }
    let mut tf_sums = vec![0.0f64; matrix.n_genes];
    for e in entries {
        if e.value != 0.0 {
            tf_sums[e.gene] += 1.0 / row_totals[e.cell];
        }
    }
    let n = matrix.n_cells as f64;
    let scores: Vec<f64> = (0..matrix.n_genes)
        .map(|j| tf_sums[j] * (n / (1.0 + col_counts[j] as f64)).ln())
        .collect();
    let mut order: Vec<usize> = (0..matrix.n_genes).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut keep: Vec<usize> = order.into_iter().take(n_keep).collect();
    keep.sort_unstable();
    Ok(keep)
}

/// Per-marker coefficient of determination over cell-type mean expressions.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkerR2 {
    /// `(marker column, R²)`; `None` where the observed class means have no
    /// variance (excluded from the mean).
    pub per_marker: Vec<(usize, Option<f64>)>,
    pub mean: f64,
    pub n_defined: usize,
}

/// R² between predicted and observed per-class mean expression, one value
/// per marker column, plus the mean over defined markers.
pub fn marker_r2(
    predicted: &[Vec<f64>],
    observed: &[Vec<f64>],
    labels: &[usize],
    markers: &[usize],
) -> Result<MarkerR2, AlignError> {
    if predicted.len() != observed.len() || predicted.len() != labels.len() {
        return Err(AlignError::Dim(format!(
            "{} predicted rows, {} observed rows, {} labels",
            predicted.len(),
            observed.len(),
            labels.len()
        )));
    }
    if predicted.is_empty() {
        return Err(AlignError::EmptyBatch);
    }
    let width = observed[0].len();
    for (p, o) in predicted.iter().zip(observed) {
        if p.len() != width || o.len() != width {
            return Err(AlignError::Dim("ragged expression rows".to_string()));
        }
    }
    if let Some(&bad) = markers.iter().find(|&&m| m >= width) {
        return Err(AlignError::Dim(format!(
            "marker column {bad} out of range for width {width}"
        )));
    }
    let n_classes = labels.iter().max().unwrap() + 1;
    let mut counts = vec![0usize; n_classes];
    for &l in labels {
        counts[l] += 1;
    }
    let classes: Vec<usize> = (0..n_classes).filter(|&k| counts[k] > 0).collect();
    let mut per_marker = Vec::with_capacity(markers.len());
    let mut sum = 0.0;
    let mut n_defined = 0;
    for &g in markers {
        let mut obs_mean = vec![0.0f64; n_classes];
        let mut pred_mean = vec![0.0f64; n_classes];
        for (i, &l) in labels.iter().enumerate() {
            obs_mean[l] += observed[i][g];
            pred_mean[l] += predicted[i][g];
        }
        for &k in &classes {
            obs_mean[k] /= counts[k] as f64;
            pred_mean[k] /= counts[k] as f64;
        }
        let grand = classes.iter().map(|&k| obs_mean[k]).sum::<f64>() / classes.len() as f64;
        let ss_tot: f64 = classes.iter().map(|&k| (obs_mean[k] - grand).powi(2)).sum();
        let ss_res: f64 = classes
            .iter()
            .map(|&k| (pred_mean[k] - obs_mean[k]).powi(2))
            .sum();
        if ss_tot == 0.0 {
            per_marker.push((g, None));
        } else {
            let r2 = 1.0 - ss_res / ss_tot;
            per_marker.push((g, Some(r2)));
            sum += r2;
            n_defined += 1;
        }
    }
    if n_defined == 0 {
        return Err(AlignError::NoDefinedMarkers);
    }
    Ok(MarkerR2 {
        per_marker,
        mean: sum / n_defined as f64,
        n_defined,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::MatrixEntry;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn binary_matrix(rows: &[&[f64]]) -> ExpressionMatrix {
        let mut entries = Vec::new();
        for (cell, row) in rows.iter().enumerate() {
            for (gene, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    entries.push(MatrixEntry { cell, gene, value: 1.0 });
                }
            }
        }
        ExpressionMatrix::new(rows.len(), rows[0].len(), Layout::Binary, entries).unwrap()
    }

    #[test]
    fn ubiquitous_peak_has_lower_idf_than_rare_peak() {
        // column 0 accessible everywhere, column 1 in a single cell
        let m = binary_matrix(&[
            &[1.0, 1.0, 0.0],
            &[1.0, 0.0, 0.0],
            &[1.0, 0.0, 1.0],
            &[1.0, 0.0, 0.0],
        ]);
        let keep = tfidf_select(&m, 2).unwrap();
        assert!(!keep.contains(&0), "ubiquitous peak should rank last: {keep:?}");
        assert!(keep.contains(&1));
        assert!(keep.contains(&2));
    }

    #[test]
    fn keeping_all_columns_is_identity() {
        let m = binary_matrix(&[&[1.0, 0.0, 1.0], &[0.0, 1.0, 0.0]]);
        assert_eq!(tfidf_select(&m, 3).unwrap(), vec![0, 1, 2]);
        assert!(matches!(
            tfidf_select(&m, 4),
            Err(AlignError::KeepTooLarge { .. })
        ));
    }

    #[test]
    fn rejects_non_binary_and_all_zero() {
        let zero = ExpressionMatrix::new(2, 2, Layout::Binary, vec![]).unwrap();
        assert!(matches!(tfidf_select(&zero, 1), Err(AlignError::AllZeroMatrix)));
        let counts = ExpressionMatrix::new(
            1,
            1,
            Layout::RawCounts,
            vec![MatrixEntry { cell: 0, gene: 0, value: 3.0 }],
        )
        .unwrap();
        assert!(matches!(tfidf_select(&counts, 1), Err(AlignError::NotBinary(_))));
    }

    #[test]
    fn matches_brute_force_oracle_and_ignores_row_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for round in 0..10 {
            let n_cells = 20;
            let n_peaks = 10;
            let mut dense = vec![vec![0.0f64; n_peaks]; n_cells];
            for row in dense.iter_mut() {
                for v in row.iter_mut() {
                    *v = if rng.gen_bool(0.35) { 1.0 } else { 0.0 };
                }
            }
            if !dense.iter().flatten().any(|&v| v != 0.0) {
                continue;
            }
            let rows: Vec<&[f64]> = dense.iter().map(|r| r.as_slice()).collect();
            let m = binary_matrix(&rows);
            let keep = tfidf_select(&m, 4).unwrap();

            // brute force: dense score loop, stable selection
            let mut scores = vec![0.0f64; n_peaks];
            for j in 0..n_peaks {
                let col_count: f64 = dense.iter().map(|r| r[j]).sum();
                let idf = (n_cells as f64 / (1.0 + col_count)).ln();
                let mut tf = 0.0;
                for row in &dense {
                    let total: f64 = row.iter().sum();
                    if total > 0.0 && row[j] != 0.0 {
                        tf += 1.0 / total;
                    }
                }
                scores[j] = tf * idf;
            }
            let mut order: Vec<usize> = (0..n_peaks).collect();
            order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
            let mut expect: Vec<usize> = order.into_iter().take(4).collect();
            expect.sort_unstable();
            assert_eq!(keep, expect, "round {round}");

            // shuffling cell rows must not change the selected set
            let mut shuffled = dense.clone();
            shuffled.reverse();
            let rows2: Vec<&[f64]> = shuffled.iter().map(|r| r.as_slice()).collect();
            let keep2 = tfidf_select(&binary_matrix(&rows2), 4).unwrap();
            assert_eq!(keep, keep2);
        }
    }

    #[test]
    fn r2_perfect_and_constant_predictions() {
        let observed = vec![
            vec![1.0, 5.0],
            vec![2.0, 6.0],
            vec![5.0, 1.0],
            vec![6.0, 2.0],
        ];
        let labels = vec![0, 0, 1, 1];
        let perfect = marker_r2(&observed, &observed, &labels, &[0, 1]).unwrap();
        assert_eq!(perfect.mean, 1.0);
        assert!(perfect.per_marker.iter().all(|(_, r)| *r == Some(1.0)));

        // predicting the grand mean for every class gives R² = 0
        let grand0 = (1.5 + 5.5) / 2.0;
        let grand1 = (5.5 + 1.5) / 2.0;
        let constant = vec![vec![grand0, grand1]; 4];
        let flat = marker_r2(&constant, &observed, &labels, &[0, 1]).unwrap();
        assert!(flat.per_marker.iter().all(|(_, r)| r.unwrap().abs() < 1e-12));
    }

    #[test]
    fn r2_excludes_zero_variance_markers() {
        let observed = vec![vec![3.0, 1.0], vec![3.0, 2.0]];
        let predicted = vec![vec![2.0, 1.0], vec![2.0, 2.0]];
        let labels = vec![0, 1];
        let r = marker_r2(&predicted, &observed, &labels, &[0, 1]).unwrap();
        assert_eq!(r.per_marker[0], (0, None)); // constant across classes
        assert_eq!(r.n_defined, 1);
        assert!(matches!(
            marker_r2(&predicted, &observed, &labels, &[0]),
            Err(AlignError::NoDefinedMarkers)
        ));
    }

    #[test]
    fn r2_matches_hand_computed_ss_ratio() {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let n = 30;
        let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let observed: Vec<Vec<f64>> = (0..n)
            .map(|i| vec![labels[i] as f64 + rng.gen_range(-0.1..0.1), rng.gen_range(0.0..1.0)])
            .collect();
        let predicted: Vec<Vec<f64>> = observed
            .iter()
            .map(|r| vec![r[0] + rng.gen_range(-0.2..0.2), r[1] + rng.gen_range(-0.2..0.2)])
            .collect();
        let got = marker_r2(&predicted, &observed, &labels, &[0, 1]).unwrap();
        for &(g, r2) in &got.per_marker {
            // hand computation with explicit class loops
            let mut ss_res = 0.0;
            let mut ss_tot = 0.0;
            let mut means = Vec::new();
            for k in 0..3 {
                let obs: Vec<f64> = (0..n).filter(|&i| labels[i] == k).map(|i| observed[i][g]).collect();
                let pred: Vec<f64> = (0..n).filter(|&i| labels[i] == k).map(|i| predicted[i][g]).collect();
                let om = obs.iter().sum::<f64>() / obs.len() as f64;
                let pm = pred.iter().sum::<f64>() / pred.len() as f64;
                ss_res += (pm - om) * (pm - om);
                means.push(om);
            }
            let grand = means.iter().sum::<f64>() / means.len() as f64;
            for m in &means {
                ss_tot += (m - grand) * (m - grand);
            }
            let expect = 1.0 - ss_res / ss_tot;
            assert!((r2.unwrap() - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn translate_shape_determinism_and_checkpoint_round_trip() {
        let dims = Dims {
            d_atac: 6,
            d_rna: 4,
            d_latent: 3,
            d_embed: 5,
            n_classes: 2,
        };
        let model = AlignmentModel::init(dims, 0.7, vec!["a".into(), "b".into()], 13);
        let x = vec![1.0, 0.0, 1.0, 1.0, 0.0, 0.0];
        let out = model.translate(&x).unwrap();
        assert_eq!(out.len(), 4);
        assert!(out.iter().all(|v| v.is_finite()));
        assert_eq!(out, model.translate(&x).unwrap());
        assert!(model.translate(&[1.0]).is_err());

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_model(&model, &path).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(loaded, model);
        assert_eq!(loaded.translate(&x).unwrap(), out);
    }

    #[test]
    fn translate_applies_peak_selection() {
        let dims = Dims {
            d_atac: 3,
            d_rna: 2,
            d_latent: 2,
            d_embed: 3,
            n_classes: 1,
        };
        let mut model = AlignmentModel::init(dims, 1.0, vec!["only".into()], 2);
        model.atac_peaks = Some(PeakSelection {
            input_dim: 6,
            keep: vec![0, 2, 5],
        });
        let full = vec![1.0, 1.0, 0.0, 1.0, 1.0, 1.0];
        let narrow = vec![1.0, 0.0, 1.0];
        let via_selection = model.translate(&full).unwrap();
        let mut bare = model.clone();
        bare.atac_peaks = None;
        assert_eq!(via_selection, bare.translate(&narrow).unwrap());
        assert!(model.translate(&narrow).is_err());
    }
}
