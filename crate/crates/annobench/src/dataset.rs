//! On-disk expression bundles: load, validate, filter, normalize, save.
//!
//! A bundle directory holds four files:
//!
//! - `genes.txt` — one gene symbol per line, UTF-8, LF endings
//! - `matrix.mtx` — MatrixMarket coordinate format, 1-based, rows are cells,
//!   columns are genes, with a `%layout: raw_counts|lognorm|binary` comment
//! - `cells.tsv` — tab-separated with header
//!   `cell_id  cell_type  tissue  dataset_id  species`
//! - `synonyms.tsv` — `canonical<TAB>synonym` pairs, canonicals self-paired
//!
//! Bundles are immutable after load and safe to share across threads.
//! Serialization is canonical: entries sorted by (cell, gene), synonym pairs
//! sorted by (canonical, synonym), so `save ∘ load` is the identity on
//! canonical directories.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::label::normalize_label;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("missing file: {0}")]
    MissingFile(PathBuf),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}:{line}: {msg}")]
    Malformed {
        file: String,
        line: usize,
        msg: String,
    },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid bundle: {0}")]
    Invalid(String),
    #[error("operation requires layout {expected}, matrix has layout {actual}")]
    LayoutMismatch { expected: Layout, actual: Layout },
    #[error("cell at row {cell} has zero total count; filter cells before normalizing")]
    ZeroCountCell { cell: usize },
}

/// Unit interpretation of the matrix values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    RawCounts,
    Lognorm,
    Binary,
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Layout::RawCounts => "raw_counts",
            Layout::Lognorm => "lognorm",
            Layout::Binary => "binary",
        })
    }
}

impl std::str::FromStr for Layout {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "raw_counts" => Ok(Layout::RawCounts),
            "lognorm" => Ok(Layout::Lognorm),
            "binary" => Ok(Layout::Binary),
            other => Err(format!("unknown layout '{other}'")),
        }
    }
}

/// Ordered list of unique gene symbols. Order is significant and stable.
///
/// Symbols are case-preserved and compared case-sensitively: "Cftr" (mouse)
/// and "CFTR" (human) are distinct.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneList {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl GeneList {
    pub fn new(names: Vec<String>) -> Result<Self, DatasetError> {
        let mut index = HashMap::with_capacity(names.len());
        for (i, name) in names.iter().enumerate() {
            if name.is_empty() {
                return Err(DatasetError::Invalid(format!("empty gene name at {i}")));
            }
            if index.insert(name.clone(), i).is_some() {
                return Err(DatasetError::Invalid(format!("duplicate gene '{name}'")));
            }
        }
        Ok(GeneList { names, index })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }
}

/// One nonzero matrix entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatrixEntry {
    pub cell: usize,
    pub gene: usize,
    pub value: f64,
}

/// Sparse cell × gene matrix in coordinate form, canonically sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpressionMatrix {
    pub n_cells: usize,
    pub n_genes: usize,
    pub layout: Layout,
    entries: Vec<MatrixEntry>,
}

impl ExpressionMatrix {
    pub fn new(
        n_cells: usize,
        n_genes: usize,
        layout: Layout,
        mut entries: Vec<MatrixEntry>,
    ) -> Result<Self, DatasetError> {
        entries.sort_by_key(|e| (e.cell, e.gene));
        let m = ExpressionMatrix {
            n_cells,
            n_genes,
            layout,
            entries,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn entries(&self) -> &[MatrixEntry] {
        &self.entries
    }

    fn validate(&self) -> Result<(), DatasetError> {
        let mut prev: Option<(usize, usize)> = None;
        for e in &self.entries {
            if e.cell >= self.n_cells || e.gene >= self.n_genes {
                return Err(DatasetError::Invalid(format!(
                    "entry ({}, {}) out of range for {}x{} matrix",
                    e.cell, e.gene, self.n_cells, self.n_genes
                )));
            }
            if !e.value.is_finite() || e.value < 0.0 {
                return Err(DatasetError::Invalid(format!(
                    "entry ({}, {}) has invalid value {}",
                    e.cell, e.gene, e.value
                )));
            }
            if self.layout == Layout::Binary && e.value != 0.0 && e.value != 1.0 {
                return Err(DatasetError::Invalid(format!(
                    "binary matrix entry ({}, {}) has value {}",
                    e.cell, e.gene, e.value
                )));
            }
            if prev == Some((e.cell, e.gene)) {
                return Err(DatasetError::Invalid(format!(
                    "duplicate entry at ({}, {})",
                    e.cell, e.gene
                )));
            }
            prev = Some((e.cell, e.gene));
        }
        Ok(())
    }

    /// Total value per cell (row sums).
    pub fn cell_totals(&self) -> Vec<f64> {
        let mut totals = vec![0.0; self.n_cells];
        for e in &self.entries {
            totals[e.cell] += e.value;
        }
        totals
    }

    /// Entries grouped per gene: `result[g]` lists `(cell, value)`.
    pub fn gene_major(&self) -> Vec<Vec<(usize, f64)>> {
        let mut cols = vec![Vec::new(); self.n_genes];
        for e in &self.entries {
            cols[e.gene].push((e.cell, e.value));
        }
        cols
    }

    /// Dense row for one cell.
    pub fn dense_row(&self, cell: usize) -> Vec<f64> {
        let mut row = vec![0.0; self.n_genes];
        let start = self.entries.partition_point(|e| e.cell < cell);
        for e in &self.entries[start..] {
            if e.cell != cell {
                break;
            }
            row[e.gene] = e.value;
        }
        row
    }
}

/// Per-cell metadata.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellMeta {
    pub cell_id: String,
    pub cell_type: String,
    pub tissue: String,
    pub dataset_id: String,
    pub species: String,
}

/// A canonical label plus its synonyms (canonical always included).
///
/// Entries are deduplicated by normalized form and kept sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynonymSet {
    canonical: String,
    synonyms: Vec<String>,
}

impl SynonymSet {
    pub fn new(canonical: String, extra: impl IntoIterator<Item = String>) -> Self {
        let mut synonyms = vec![canonical.clone()];
        synonyms.extend(extra);
        synonyms.sort();
        synonyms.dedup();
        // drop entries whose normalized form duplicates an earlier one,
        // keeping the canonical whatever happens
        let mut seen = HashSet::new();
        seen.insert(normalize_label(&canonical));
        let mut kept = vec![];
        for s in synonyms {
            if s == canonical {
                kept.push(s);
                continue;
            }
            if seen.insert(normalize_label(&s)) {
                kept.push(s);
            }
        }
        SynonymSet {
            canonical,
            synonyms: kept,
        }
    }

    pub fn singleton(label: &str) -> Self {
        SynonymSet::new(label.to_string(), [])
    }

    pub fn canonical(&self) -> &str {
        &self.canonical
    }

    /// All candidates, canonical included, in sorted order.
    pub fn candidates(&self) -> &[String] {
        &self.synonyms
    }

    pub fn contains(&self, s: &str) -> bool {
        self.synonyms.iter().any(|x| x == s)
    }
}

/// A loaded dataset: genes, matrix, per-cell metadata, and the ground-truth
/// synonym table keyed by raw cell-type label.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub genes: GeneList,
    pub matrix: ExpressionMatrix,
    pub cells: Vec<CellMeta>,
    pub labels: BTreeMap<String, SynonymSet>,
}

impl DatasetBundle {
    pub fn new(
        genes: GeneList,
        matrix: ExpressionMatrix,
        cells: Vec<CellMeta>,
        labels: BTreeMap<String, SynonymSet>,
    ) -> Result<Self, DatasetError> {
        let b = DatasetBundle {
            genes,
            matrix,
            cells,
            labels,
        };
        validate_bundle(&b)?;
        Ok(b)
    }

    /// Cell indices grouped by cell type, in first-appearance order of cells.
    pub fn cells_by_type(&self) -> BTreeMap<&str, Vec<usize>> {
        let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, c) in self.cells.iter().enumerate() {
            groups.entry(c.cell_type.as_str()).or_default().push(i);
        }
        groups
    }
}

/// Check every bundle invariant; cheap relative to loading.
pub fn validate_bundle(b: &DatasetBundle) -> Result<(), DatasetError> {
    b.matrix.validate()?;
    if b.matrix.n_genes != b.genes.len() {
        return Err(DatasetError::DimensionMismatch(format!(
            "matrix has {} genes, gene list has {}",
            b.matrix.n_genes,
            b.genes.len()
        )));
    }
    if b.matrix.n_cells != b.cells.len() {
        return Err(DatasetError::DimensionMismatch(format!(
            "matrix has {} cells, metadata has {}",
            b.matrix.n_cells,
            b.cells.len()
        )));
    }
    let mut ids = HashSet::new();
    for c in &b.cells {
        if !ids.insert(&c.cell_id) {
            return Err(DatasetError::Invalid(format!(
                "duplicate cell_id '{}'",
                c.cell_id
            )));
        }
        if c.tissue.is_empty() {
            return Err(DatasetError::Invalid(format!(
                "cell '{}' has empty tissue",
                c.cell_id
            )));
        }
        if !b.labels.contains_key(&c.cell_type) {
            return Err(DatasetError::Invalid(format!(
                "cell type '{}' missing from synonym table",
                c.cell_type
            )));
        }
    }
    for (key, set) in &b.labels {
        if !set.contains(set.canonical()) {
            return Err(DatasetError::Invalid(format!(
                "synonym set '{key}' does not contain its canonical"
            )));
        }
    }
    Ok(())
}

const CELLS_HEADER: &str = "cell_id\tcell_type\ttissue\tdataset_id\tspecies";

fn read_file(path: &Path) -> Result<String, DatasetError> {
    if !path.is_file() {
        return Err(DatasetError::MissingFile(path.to_path_buf()));
    }
    fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn malformed(path: &Path, line: usize, msg: impl Into<String>) -> DatasetError {
    DatasetError::Malformed {
        file: path.file_name().unwrap_or_default().to_string_lossy().into_owned(),
        line,
        msg: msg.into(),
    }
}

/// Load and validate a bundle directory.
pub fn load_bundle(dir: &Path) -> Result<DatasetBundle, DatasetError> {
    let genes_path = dir.join("genes.txt");
    let genes: Vec<String> = read_file(&genes_path)?
        .lines()
        .map(str::to_string)
        .collect();
    for (i, g) in genes.iter().enumerate() {
        if g.is_empty() {
            return Err(malformed(&genes_path, i + 1, "empty gene name"));
        }
    }
    let genes = GeneList::new(genes)?;

    let mtx_path = dir.join("matrix.mtx");
    let mtx_text = read_file(&mtx_path)?;
    let mut layout = None;
    let mut dims: Option<(usize, usize, usize)> = None;
    let mut entries = Vec::new();
    let mut saw_banner = false;
    for (lineno, line) in mtx_text.lines().enumerate() {
        let lineno = lineno + 1;
        if lineno == 1 {
            if !line.starts_with("%%MatrixMarket matrix coordinate") {
                return Err(malformed(&mtx_path, 1, "missing MatrixMarket banner"));
            }
            saw_banner = true;
            continue;
        }
        if let Some(rest) = line.strip_prefix('%') {
            if let Some(val) = rest.trim().strip_prefix("layout:") {
                layout = Some(
                    val.trim()
                        .parse::<Layout>()
                        .map_err(|e| malformed(&mtx_path, lineno, e))?,
                );
            }
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if dims.is_none() {
            if fields.len() != 3 {
                return Err(malformed(&mtx_path, lineno, "expected 'cells genes nnz'"));
            }
            let parse = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| malformed(&mtx_path, lineno, format!("bad integer '{s}'")))
            };
            dims = Some((parse(fields[0])?, parse(fields[1])?, parse(fields[2])?));
            continue;
        }
        if fields.len() != 3 {
            return Err(malformed(&mtx_path, lineno, "expected 'cell gene value'"));
        }
        let cell: usize = fields[0]
            .parse()
            .map_err(|_| malformed(&mtx_path, lineno, format!("bad row index '{}'", fields[0])))?;
        let gene: usize = fields[1].parse().map_err(|_| {
            malformed(&mtx_path, lineno, format!("bad column index '{}'", fields[1]))
        })?;
        let value: f64 = fields[2]
            .parse()
            .map_err(|_| malformed(&mtx_path, lineno, format!("bad value '{}'", fields[2])))?;
        if cell == 0 || gene == 0 {
            return Err(malformed(&mtx_path, lineno, "indices are 1-based"));
        }
        entries.push(MatrixEntry {
            cell: cell - 1,
            gene: gene - 1,
            value,
        });
    }
    if !saw_banner {
        return Err(malformed(&mtx_path, 1, "empty matrix file"));
    }
    let (n_cells, n_genes, nnz) =
        dims.ok_or_else(|| malformed(&mtx_path, 2, "missing dimensions line"))?;
    if entries.len() != nnz {
        return Err(DatasetError::DimensionMismatch(format!(
            "matrix header declares {} entries, found {}",
            nnz,
            entries.len()
        )));
    }
    let layout = layout.ok_or_else(|| malformed(&mtx_path, 2, "missing '%layout:' comment"))?;
    let matrix = ExpressionMatrix::new(n_cells, n_genes, layout, entries)?;

    let cells_path = dir.join("cells.tsv");
    let cells_text = read_file(&cells_path)?;
    let mut cells = Vec::new();
    for (lineno, line) in cells_text.lines().enumerate() {
        let lineno = lineno + 1;
        if lineno == 1 {
            if line != CELLS_HEADER {
                return Err(malformed(&cells_path, 1, "bad header"));
            }
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(malformed(
                &cells_path,
                lineno,
                format!("expected 5 tab-separated fields, got {}", fields.len()),
            ));
        }
        cells.push(CellMeta {
            cell_id: fields[0].to_string(),
            cell_type: fields[1].to_string(),
            tissue: fields[2].to_string(),
            dataset_id: fields[3].to_string(),
            species: fields[4].to_string(),
        });
    }

    let syn_path = dir.join("synonyms.tsv");
    let syn_text = read_file(&syn_path)?;
    let mut raw: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (lineno, line) in syn_text.lines().enumerate() {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 {
            return Err(malformed(
                &syn_path,
                lineno + 1,
                "expected 'canonical<TAB>synonym'",
            ));
        }
        raw.entry(fields[0].to_string())
            .or_default()
            .push(fields[1].to_string());
    }
    let labels: BTreeMap<String, SynonymSet> = raw
        .into_iter()
        .map(|(canonical, syns)| (canonical.clone(), SynonymSet::new(canonical, syns)))
        .collect();

    DatasetBundle::new(genes, matrix, cells, labels)
}

/// Write a bundle in canonical form.
pub fn save_bundle(bundle: &DatasetBundle, dir: &Path) -> Result<(), DatasetError> {
    fs::create_dir_all(dir).map_err(|source| DatasetError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let write = |name: &str, content: String| -> Result<(), DatasetError> {
        let path = dir.join(name);
        let mut f = fs::File::create(&path).map_err(|source| DatasetError::Io {
            path: path.clone(),
            source,
        })?;
        f.write_all(content.as_bytes())
            .map_err(|source| DatasetError::Io { path, source })
    };

    let mut genes_txt = String::new();
    for g in bundle.genes.names() {
        genes_txt.push_str(g);
        genes_txt.push('\n');
    }
    write("genes.txt", genes_txt)?;

    let m = &bundle.matrix;
    let mut mtx = String::from("%%MatrixMarket matrix coordinate real general\n");
    mtx.push_str(&format!("%layout: {}\n", m.layout));
    mtx.push_str(&format!("{} {} {}\n", m.n_cells, m.n_genes, m.entries.len()));
    for e in &m.entries {
        mtx.push_str(&format!("{} {} {}\n", e.cell + 1, e.gene + 1, e.value));
    }
    write("matrix.mtx", mtx)?;

    let mut cells_tsv = String::from(CELLS_HEADER);
    cells_tsv.push('\n');
    for c in &bundle.cells {
        cells_tsv.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            c.cell_id, c.cell_type, c.tissue, c.dataset_id, c.species
        ));
    }
    write("cells.tsv", cells_tsv)?;

    let mut syn_tsv = String::new();
    for set in bundle.labels.values() {
        for s in set.candidates() {
            syn_tsv.push_str(&format!("{}\t{}\n", set.canonical(), s));
        }
    }
    write("synonyms.tsv", syn_tsv)?;
    Ok(())
}

/// Keep cells whose total raw count is at least `min_reads`; gene list and
/// retained-cell order are unchanged.
pub fn filter_cells(bundle: &DatasetBundle, min_reads: u64) -> Result<DatasetBundle, DatasetError> {
    if bundle.matrix.layout != Layout::RawCounts {
        return Err(DatasetError::LayoutMismatch {
            expected: Layout::RawCounts,
            actual: bundle.matrix.layout,
        });
    }
    let totals = bundle.matrix.cell_totals();
    let keep: Vec<usize> = (0..bundle.matrix.n_cells)
        .filter(|&i| totals[i] >= min_reads as f64)
        .collect();
    let mut remap = vec![usize::MAX; bundle.matrix.n_cells];
    for (new, &old) in keep.iter().enumerate() {
        remap[old] = new;
    }
    let entries = bundle
        .matrix
        .entries
        .iter()
        .filter(|e| remap[e.cell] != usize::MAX)
        .map(|e| MatrixEntry {
            cell: remap[e.cell],
            gene: e.gene,
            value: e.value,
        })
        .collect();
    let matrix = ExpressionMatrix::new(
        keep.len(),
        bundle.matrix.n_genes,
        Layout::RawCounts,
        entries,
    )?;
    let cells = keep.iter().map(|&i| bundle.cells[i].clone()).collect();
    DatasetBundle::new(bundle.genes.clone(), matrix, cells, bundle.labels.clone())
}


/// Total-count normalization to the maximum per-cell total, then log1p.
///
/// Each cell's values are scaled by `T / total(cell)` where `T` is the
/// largest per-cell total, then mapped `v -> ln(1 + v)`. Zero entries remain
/// zero, so sparsity is preserved. Cells with a zero total are rejected.
pub fn normalize_counts(matrix: &ExpressionMatrix) -> Result<ExpressionMatrix, DatasetError> {
    if matrix.layout != Layout::RawCounts {
        return Err(DatasetError::LayoutMismatch {
            expected: Layout::RawCounts,
            actual: matrix.layout,
        });
    }
    let totals = matrix.cell_totals();
    if let Some(cell) = (0..matrix.n_cells).find(|&i| totals[i] == 0.0) {
        return Err(DatasetError::ZeroCountCell { cell });
    }
    let target = totals.iter().cloned().fold(0.0, f64::max);
    let entries = matrix
        .entries
        .iter()
        .map(|e| MatrixEntry {
            cell: e.cell,
            gene: e.gene,
            value: (e.value * target / totals[e.cell]).ln_1p(),
        })
        .collect();
    ExpressionMatrix::new(matrix.n_cells, matrix.n_genes, Layout::Lognorm, entries)
}

/// Filter (when raw) and normalize a bundle so it is ready for marker
/// selection. Lognorm bundles pass through untouched.
pub fn prepare_lognorm(bundle: DatasetBundle, min_reads: u64) -> Result<DatasetBundle, DatasetError> {
    match bundle.matrix.layout {
        Layout::Lognorm => Ok(bundle),
        Layout::RawCounts => {
            let filtered = filter_cells(&bundle, min_reads)?;
            let matrix = normalize_counts(&filtered.matrix)?;
            DatasetBundle::new(filtered.genes, matrix, filtered.cells, filtered.labels)
        }
        Layout::Binary => Err(DatasetError::LayoutMismatch {
            expected: Layout::RawCounts,
            actual: Layout::Binary,
        }),
    }
}
