//! Deterministic synthetic datasets for tests, examples, and smoke runs.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::align::PairedCell;
use crate::dataset::{
    CellMeta, DatasetBundle, ExpressionMatrix, GeneList, Layout, MatrixEntry, SynonymSet,
};

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.gen_range(1e-12..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Small random raw-count bundle; every draw is a function of the seed.
pub fn random_bundle(seed: u64) -> DatasetBundle {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_genes = rng.gen_range(1..6);
    let n_cells = rng.gen_range(1..6);
    let genes = GeneList::new((0..n_genes).map(|i| format!("G{i}")).collect()).unwrap();
    let n_types = rng.gen_range(1..3usize);
    let type_names: Vec<String> = (0..n_types).map(|i| format!("type{i}")).collect();
    let mut labels = BTreeMap::new();
    for (i, t) in type_names.iter().enumerate() {
        let extra: Vec<String> = (0..rng.gen_range(0..3))
            .map(|j| format!("alias{i}x{j}"))
            .collect();
        labels.insert(t.clone(), SynonymSet::new(t.clone(), extra));
    }
    let cells: Vec<CellMeta> = (0..n_cells)
        .map(|i| CellMeta {
            cell_id: format!("c{i}"),
            cell_type: type_names[rng.gen_range(0..n_types)].clone(),
            tissue: format!("tissue{}", rng.gen_range(0..2)),
            dataset_id: "ds0".to_string(),
            species: "human".to_string(),
        })
        .collect();
    let mut entries = Vec::new();
    for cell in 0..n_cells {
        for gene in 0..n_genes {
            if rng.gen_bool(0.6) {
                entries.push(MatrixEntry {
                    cell,
                    gene,
                    value: rng.gen_range(0..40) as f64,
                });
            }
        }
    }
    let matrix = ExpressionMatrix::new(n_cells, n_genes, Layout::RawCounts, entries).unwrap();
    DatasetBundle::new(genes, matrix, cells, labels).unwrap()
}

/// A lognorm bundle with planted markers: `n_types` × `cells_per_type`
/// cells over `n_genes` genes; each type gets `planted_per_type` exclusive
/// genes shifted up by `shift_sigmas` standard deviations. Baseline draws
/// come from N(5, 0.2), so values stay positive.
///
/// Returns the bundle and the planted gene names per type.
pub fn planted_bundle(
    n_types: usize,
    cells_per_type: usize,
    n_genes: usize,
    planted_per_type: usize,
    shift_sigmas: f64,
    seed: u64,
) -> (DatasetBundle, BTreeMap<String, Vec<String>>) {
    let sigma = 0.2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let genes = GeneList::new((0..n_genes).map(|i| format!("G{i:03}")).collect()).unwrap();
    let mut planted: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut plant_of_gene = vec![usize::MAX; n_genes];
    for t in 0..n_types {
        let type_name = format!("type{t}");
        let mut mine = Vec::new();
        for p in 0..planted_per_type {
            let g = t * planted_per_type + p;
            assert!(g < n_genes, "not enough genes for the planted markers");
            plant_of_gene[g] = t;
            mine.push(genes.name(g).to_string());
        }
        planted.insert(type_name, mine);
    }
    let n_cells = n_types * cells_per_type;
    let mut entries = Vec::with_capacity(n_cells * n_genes);
    let mut cells = Vec::with_capacity(n_cells);
    let mut labels = BTreeMap::new();
    for t in 0..n_types {
        let type_name = format!("type{t}");
        labels.insert(type_name.clone(), SynonymSet::singleton(&type_name));
        for c in 0..cells_per_type {
            let cell = t * cells_per_type + c;
            cells.push(CellMeta {
                cell_id: format!("cell{cell:04}"),
                cell_type: type_name.clone(),
                tissue: "Tissue".to_string(),
                dataset_id: "synthetic".to_string(),
                species: "none".to_string(),
            });
            for gene in 0..n_genes {
                let mut mu = 5.0;
                if plant_of_gene[gene] == t {
                    mu += shift_sigmas * sigma;
                }
                let value = (mu + sigma * standard_normal(&mut rng)).max(0.0);
                entries.push(MatrixEntry { cell, gene, value });
            }
        }
    }
    let matrix = ExpressionMatrix::new(n_cells, n_genes, Layout::Lognorm, entries).unwrap();
    let bundle = DatasetBundle::new(genes, matrix, cells, labels).unwrap();
    (bundle, planted)
}

/// Unstructured random paired cells (for gradient checks and loss oracles,
/// not for learnability).
pub fn random_paired_batch(
    d_atac: usize,
    d_rna: usize,
    n_classes: usize,
    n_per_class: usize,
    seed: u64,
) -> Vec<PairedCell> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cells = Vec::new();
    for k in 0..n_classes {
        for _ in 0..n_per_class {
            let atac: Vec<f64> = (0..d_atac)
                .map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 })
                .collect();
            let rna: Vec<f64> = (0..d_rna).map(|_| rng.gen_range(-1.0..1.0)).collect();
            cells.push(PairedCell::new(atac, rna, k).unwrap());
        }
    }
    cells
}

/// Linearly generated paired multiomics cells: a latent vector per cell
/// (class center plus noise) drives both modalities through fixed random
/// maps — `rna = A·z + ε` and `atac = 1[B·z > 0]`.
pub struct PairedToySet {
    pub train: Vec<PairedCell>,
    pub held_out: Vec<PairedCell>,
    pub n_classes: usize,
}

pub fn paired_toy_set(
    n_cells: usize,
    n_classes: usize,
    d_atac: usize,
    d_rna: usize,
    d_latent_true: usize,
    held_out_fraction: f64,
    seed: u64,
) -> PairedToySet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a_map: Vec<f64> = (0..d_rna * d_latent_true)
        .map(|_| standard_normal(&mut rng))
        .collect();
    let b_map: Vec<f64> = (0..d_atac * d_latent_true)
        .map(|_| standard_normal(&mut rng))
        .collect();
    // well-separated class centers
    let centers: Vec<Vec<f64>> = (0..n_classes)
        .map(|k| {
            (0..d_latent_true)
                .map(|j| if j % n_classes == k { 2.5 } else { -1.0 })
                .collect()
        })
        .collect();
    let mut cells = Vec::with_capacity(n_cells);
    for i in 0..n_cells {
        let label = i % n_classes;
        let z: Vec<f64> = (0..d_latent_true)
            .map(|j| centers[label][j] + 0.3 * standard_normal(&mut rng))
            .collect();
        let rna: Vec<f64> = (0..d_rna)
            .map(|r| {
                let dot: f64 = (0..d_latent_true)
                    .map(|j| a_map[r * d_latent_true + j] * z[j])
                    .sum();
                dot + 0.05 * standard_normal(&mut rng)
            })
            .collect();
        let atac: Vec<f64> = (0..d_atac)
            .map(|p| {
                let dot: f64 = (0..d_latent_true)
                    .map(|j| b_map[p * d_latent_true + j] * z[j])
                    .sum();
                if dot > 0.0 {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        cells.push(PairedCell::new(atac, rna, label).unwrap());
    }
    let n_held = (n_cells as f64 * held_out_fraction).round() as usize;
    // deterministic interleaved split keeps class balance in both halves
    let mut train = Vec::new();
    let mut held_out = Vec::new();
    for (i, c) in cells.into_iter().enumerate() {
        if i % ((n_cells + n_held.max(1) - 1) / n_held.max(1)) == 0 && held_out.len() < n_held {
            held_out.push(c);
        } else {
            train.push(c);
        }
    }
    PairedToySet {
        train,
        held_out,
        n_classes,
    }
}
