//! Model parameters and forward passes for the cross-modality translator.
//!
//! The layer stack is deliberately small: per-dimension two-state embedding
//! for the binary accessibility input, a linear embedding for expression,
//! one-hidden-layer MLPs for encoders / decoders / cross-modality mappers
//! (hidden width 2×latent, leaky-ReLU slope 0.01), and per-class
//! discriminators with a single hidden layer of latent width.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::AlignError;

pub const LEAKY_SLOPE: f64 = 0.01;

/// Probability clamp for every log/sigmoid in the losses.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    /// Accessibility input width (d_a).
    pub d_atac: usize,
    /// Expression output width (d_r).
    pub d_rna: usize,
    /// Shared latent width (d_h).
    pub d_latent: usize,
    /// Embedding width fed to the encoders.
    pub d_embed: usize,
    /// Number of semantic classes, one discriminator pair each (T).
    pub n_classes: usize,
}

/// One paired multiomics cell: binary accessibility, real expression, class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedCell {
    pub atac: Vec<f64>,
    pub rna: Vec<f64>,
    pub label: usize,
}

impl PairedCell {
    pub fn new(atac: Vec<f64>, rna: Vec<f64>, label: usize) -> Result<Self, AlignError> {
        if atac.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(AlignError::BadInput(
                "accessibility entries must be 0 or 1".to_string(),
            ));
        }
        if rna.iter().any(|v| !v.is_finite()) {
            return Err(AlignError::BadInput(
                "expression entries must be finite".to_string(),
            ));
        }
        Ok(PairedCell { atac, rna, label })
    }
}

/// Column selection applied to accessibility profiles before the embedding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeakSelection {
    /// Width of the full input profile the indices refer to.
    pub input_dim: usize,
    /// Kept column indices, ascending.
    pub keep: Vec<usize>,
}

/// One-hidden-layer MLP with a leaky-ReLU hidden activation and linear
/// output. Weights are row-major `[out][in]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub n_in: usize,
    pub n_hidden: usize,
    pub n_out: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

pub(crate) struct MlpCache {
    pub pre: Vec<f64>,
    pub act: Vec<f64>,
    pub out: Vec<f64>,
}

impl Mlp {
    fn init(rng: &mut ChaCha8Rng, n_in: usize, n_hidden: usize, n_out: usize) -> Self {
        let lim1 = 1.0 / (n_in as f64).sqrt();
        let lim2 = 1.0 / (n_hidden as f64).sqrt();
        Mlp {
            n_in,
            n_hidden,
            n_out,
            w1: (0..n_hidden * n_in).map(|_| rng.gen_range(-lim1..lim1)).collect(),
            b1: vec![0.0; n_hidden],
            w2: (0..n_out * n_hidden).map(|_| rng.gen_range(-lim2..lim2)).collect(),
            b2: vec![0.0; n_out],
        }
    }

    fn zeroed(n_in: usize, n_hidden: usize, n_out: usize) -> Self {
        Mlp {
            n_in,
            n_hidden,
            n_out,
            w1: vec![0.0; n_hidden * n_in],
            b1: vec![0.0; n_hidden],
            w2: vec![0.0; n_out * n_hidden],
            b2: vec![0.0; n_out],
        }
    }

    pub(crate) fn forward(&self, x: &[f64]) -> MlpCache {
        debug_assert_eq!(x.len(), self.n_in);
        let mut pre = self.b1.clone();
        for h in 0..self.n_hidden {
            let row = &self.w1[h * self.n_in..(h + 1) * self.n_in];
            pre[h] += row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
        let act: Vec<f64> = pre
            .iter()
            .map(|&p| if p > 0.0 { p } else { LEAKY_SLOPE * p })
            .collect();
        let mut out = self.b2.clone();
        for o in 0..self.n_out {
            let row = &self.w2[o * self.n_hidden..(o + 1) * self.n_hidden];
            out[o] += row.iter().zip(&act).map(|(w, v)| w * v).sum::<f64>();
        }
        MlpCache { pre, act, out }
    }

    /// Accumulate parameter gradients (and optionally input gradients) for
    /// an upstream gradient `d_out`.
    pub(crate) fn backward(
        &self,
        x: &[f64],
        cache: &MlpCache,
        d_out: &[f64],
        mut d_x: Option<&mut [f64]>,
        grads: &mut Mlp,
    ) {
        let mut d_act = vec![0.0; self.n_hidden];
        for o in 0..self.n_out {
            let g = d_out[o];
            grads.b2[o] += g;
            let row = &self.w2[o * self.n_hidden..(o + 1) * self.n_hidden];
            let grow = &mut grads.w2[o * self.n_hidden..(o + 1) * self.n_hidden];
            for h in 0..self.n_hidden {
                grow[h] += g * cache.act[h];
                d_act[h] += g * row[h];
            }
        }
        for h in 0..self.n_hidden {
            let d_pre = d_act[h] * if cache.pre[h] > 0.0 { 1.0 } else { LEAKY_SLOPE };
            grads.b1[h] += d_pre;
            let row = &self.w1[h * self.n_in..(h + 1) * self.n_in];
            let grow = &mut grads.w1[h * self.n_in..(h + 1) * self.n_in];
            for i in 0..self.n_in {
                grow[i] += d_pre * x[i];
                if let Some(dx) = d_x.as_deref_mut() {
                    dx[i] += d_pre * row[i];
                }
            }
        }
    }

    fn block_refs(&self) -> [&Vec<f64>; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    fn block_refs_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
}

/// Which alternating-update family a parameter block belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Generator,
    Discriminator,
}

/// All trainable parameters of the translator plus its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentModel {
    pub dims: Dims,
    pub gamma: f64,
    pub class_names: Vec<String>,
    pub atac_peaks: Option<PeakSelection>,
    /// Expression gene names carried along for bundle emission; may be
    /// empty when the model is used programmatically.
    #[serde(default)]
    pub rna_genes: Vec<String>,
    /// Per-dimension two-state embedding table, `[d_atac][2][d_embed]`.
    pub emb_atac: Vec<f64>,
    /// Linear expression embedding, `[d_embed][d_rna]`.
    pub emb_rna: Vec<f64>,
    pub enc_atac: Mlp,
    pub enc_rna: Mlp,
    pub dec_atac: Mlp,
    pub dec_rna: Mlp,
    pub map_ar: Mlp,
    pub map_ra: Mlp,
    pub disc_atac: Vec<Mlp>,
    pub disc_rna: Vec<Mlp>,
}

impl AlignmentModel {
    pub fn init(dims: Dims, gamma: f64, class_names: Vec<String>, seed: u64) -> Self {
        assert_eq!(class_names.len(), dims.n_classes, "one name per class");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hidden = 2 * dims.d_latent;
        let emb_scale = 0.1;
        AlignmentModel {
            emb_atac: (0..dims.d_atac * 2 * dims.d_embed)
                .map(|_| rng.gen_range(-emb_scale..emb_scale))
                .collect(),
            emb_rna: {
                let lim = 1.0 / (dims.d_rna as f64).sqrt();
                (0..dims.d_embed * dims.d_rna)
                    .map(|_| rng.gen_range(-lim..lim))
                    .collect()
            },
            enc_atac: Mlp::init(&mut rng, dims.d_embed, hidden, dims.d_latent),
            enc_rna: Mlp::init(&mut rng, dims.d_embed, hidden, dims.d_latent),
            dec_atac: Mlp::init(&mut rng, dims.d_latent, hidden, dims.d_atac),
            dec_rna: Mlp::init(&mut rng, dims.d_latent, hidden, dims.d_rna),
            map_ar: Mlp::init(&mut rng, dims.d_latent, hidden, dims.d_latent),
            map_ra: Mlp::init(&mut rng, dims.d_latent, hidden, dims.d_latent),
            disc_atac: (0..dims.n_classes)
                .map(|_| Mlp::init(&mut rng, dims.d_latent, dims.d_latent, 1))
                .collect(),
            disc_rna: (0..dims.n_classes)
                .map(|_| Mlp::init(&mut rng, dims.d_latent, dims.d_latent, 1))
                .collect(),
            dims,
            gamma,
            class_names,
            atac_peaks: None,
            rna_genes: vec![],
        }
    }

    /// Same shapes, every parameter zero; the gradient / moment container.
    pub(crate) fn zeroed_like(&self) -> AlignmentModel {
        let d = self.dims;
        let hidden = 2 * d.d_latent;
        AlignmentModel {
            dims: d,
            gamma: self.gamma,
            class_names: self.class_names.clone(),
            atac_peaks: self.atac_peaks.clone(),
            rna_genes: self.rna_genes.clone(),
            emb_atac: vec![0.0; d.d_atac * 2 * d.d_embed],
            emb_rna: vec![0.0; d.d_embed * d.d_rna],
            enc_atac: Mlp::zeroed(d.d_embed, hidden, d.d_latent),
            enc_rna: Mlp::zeroed(d.d_embed, hidden, d.d_latent),
            dec_atac: Mlp::zeroed(d.d_latent, hidden, d.d_atac),
            dec_rna: Mlp::zeroed(d.d_latent, hidden, d.d_rna),
            map_ar: Mlp::zeroed(d.d_latent, hidden, d.d_latent),
            map_ra: Mlp::zeroed(d.d_latent, hidden, d.d_latent),
            disc_atac: (0..d.n_classes)
                .map(|_| Mlp::zeroed(d.d_latent, d.d_latent, 1))
                .collect(),
            disc_rna: (0..d.n_classes)
                .map(|_| Mlp::zeroed(d.d_latent, d.d_latent, 1))
                .collect(),
        }
    }

    /// Parameter blocks in a fixed order with their update family.
    pub(crate) fn blocks(&self) -> Vec<(Family, &Vec<f64>)> {
        let mut out: Vec<(Family, &Vec<f64>)> = vec![
            (Family::Generator, &self.emb_atac),
            (Family::Generator, &self.emb_rna),
        ];
        for mlp in [
            &self.enc_atac,
            &self.enc_rna,
            &self.dec_atac,
            &self.dec_rna,
            &self.map_ar,
            &self.map_ra,
        ] {
            out.extend(mlp.block_refs().into_iter().map(|b| (Family::Generator, b)));
        }
        for mlp in self.disc_atac.iter().chain(&self.disc_rna) {
            out.extend(
                mlp.block_refs()
                    .into_iter()
                    .map(|b| (Family::Discriminator, b)),
            );
        }
        out
    }

    pub(crate) fn blocks_mut(&mut self) -> Vec<(Family, &mut Vec<f64>)> {
        let mut out: Vec<(Family, &mut Vec<f64>)> = vec![
            (Family::Generator, &mut self.emb_atac),
            (Family::Generator, &mut self.emb_rna),
        ];
        for mlp in [
            &mut self.enc_atac,
            &mut self.enc_rna,
            &mut self.dec_atac,
            &mut self.dec_rna,
            &mut self.map_ar,
            &mut self.map_ra,
        ] {
            out.extend(
                mlp.block_refs_mut()
                    .into_iter()
                    .map(|b| (Family::Generator, b)),
            );
        }
        for mlp in self.disc_atac.iter_mut().chain(self.disc_rna.iter_mut()) {
            out.extend(
                mlp.block_refs_mut()
                    .into_iter()
                    .map(|b| (Family::Discriminator, b)),
            );
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.blocks().iter().map(|(_, b)| b.len()).sum()
    }

    pub(crate) fn flat_get(&self, index: usize) -> f64 {
        let mut i = index;
        for (_, b) in self.blocks() {
            if i < b.len() {
                return b[i];
            }
            i -= b.len();
        }
        panic!("flat index {index} out of range");
    }

    pub(crate) fn flat_add(&mut self, index: usize, delta: f64) {
        let mut i = index;
        for (_, b) in self.blocks_mut() {
            if i < b.len() {
                b[i] += delta;
                return;
            }
            i -= b.len();
        }
        panic!("flat index {index} out of range");
    }

    pub fn all_finite(&self) -> bool {
        self.blocks().iter().all(|(_, b)| b.iter().all(|v| v.is_finite()))
    }

    /// Σ_j E_j[x_j]: embed the observed binary state of every dimension.
    pub fn embed_atac(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.dims.d_atac);
        let d = self.dims.d_embed;
        let mut e = vec![0.0; d];
        for (j, &v) in x.iter().enumerate() {
            let state = if v != 0.0 { 1 } else { 0 };
            let base = (j * 2 + state) * d;
            for (k, slot) in e.iter_mut().enumerate() {
                *slot += self.emb_atac[base + k];
            }
        }
        e
    }

    pub(crate) fn embed_atac_backward(&self, x: &[f64], d_e: &[f64], grads: &mut AlignmentModel) {
        let d = self.dims.d_embed;
        for (j, &v) in x.iter().enumerate() {
            let state = if v != 0.0 { 1 } else { 0 };
            let base = (j * 2 + state) * d;
            for (k, &g) in d_e.iter().enumerate() {
                grads.emb_atac[base + k] += g;
            }
        }
    }

    /// Linear embedding `W·y` of an expression vector.
    pub fn embed_rna(&self, y: &[f64]) -> Vec<f64> {
        debug_assert_eq!(y.len(), self.dims.d_rna);
        let (d_e, d_r) = (self.dims.d_embed, self.dims.d_rna);
        (0..d_e)
            .map(|k| {
                self.emb_rna[k * d_r..(k + 1) * d_r]
                    .iter()
                    .zip(y)
                    .map(|(w, v)| w * v)
                    .sum()
            })
            .collect()
    }

    pub(crate) fn embed_rna_backward(&self, y: &[f64], d_e: &[f64], grads: &mut AlignmentModel) {
        let d_r = self.dims.d_rna;
        for (k, &g) in d_e.iter().enumerate() {
            let row = &mut grads.emb_rna[k * d_r..(k + 1) * d_r];
            for (j, &v) in y.iter().enumerate() {
                row[j] += g * v;
            }
        }
    }

    /// Latent embedding of an accessibility vector (already peak-selected).
    pub fn encode_atac(&self, x: &[f64]) -> Result<Vec<f64>, AlignError> {
        if x.len() != self.dims.d_atac {
            return Err(AlignError::Dim(format!(
                "accessibility vector has {} entries, model expects {}",
                x.len(),
                self.dims.d_atac
            )));
        }
        Ok(self.enc_atac.forward(&self.embed_atac(x)).out)
    }

    /// Latent embedding of an expression vector.
    pub fn encode_rna(&self, y: &[f64]) -> Result<Vec<f64>, AlignError> {
        if y.len() != self.dims.d_rna {
            return Err(AlignError::Dim(format!(
                "expression vector has {} entries, model expects {}",
                y.len(),
                self.dims.d_rna
            )));
        }
        Ok(self.enc_rna.forward(&self.embed_rna(y)).out)
    }

    /// Translate a full-width accessibility profile into pseudo-expression:
    /// decode_rna(map_ar(encode_atac(x))). Deterministic.
    pub fn translate(&self, x_full: &[f64]) -> Result<Vec<f64>, AlignError> {
        let selected: Vec<f64> = match &self.atac_peaks {
            Some(sel) => {
                if x_full.len() != sel.input_dim {
                    return Err(AlignError::Dim(format!(
                        "profile has {} entries, peak selection expects {}",
                        x_full.len(),
                        sel.input_dim
                    )));
                }
                sel.keep.iter().map(|&j| x_full[j]).collect()
            }
            None => x_full.to_vec(),
        };
        let h_a = self.encode_atac(&selected)?;
        let h_r = self.map_ar.forward(&h_a).out;
        Ok(self.dec_rna.forward(&h_r).out)
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    #[serde(flatten)]
    model: AlignmentModel,
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Write the model as a versioned JSON checkpoint (named parameter blocks;
/// floats round-trip exactly).
pub fn save_model(model: &AlignmentModel, path: &Path) -> Result<(), AlignError> {
    let text = serde_json::to_string(&Checkpoint {
        version: CHECKPOINT_VERSION,
        model: model.clone(),
    })
    .map_err(|e| AlignError::Checkpoint {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    fs::write(path, text).map_err(|e| AlignError::Checkpoint {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

pub fn load_model(path: &Path) -> Result<AlignmentModel, AlignError> {
    let text = fs::read_to_string(path).map_err(|e| AlignError::Checkpoint {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| AlignError::Checkpoint {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    if ck.version != CHECKPOINT_VERSION {
        return Err(AlignError::UnsupportedVersion(ck.version));
    }
    let m = ck.model;
    if m.class_names.len() != m.dims.n_classes
        || m.disc_atac.len() != m.dims.n_classes
        || m.disc_rna.len() != m.dims.n_classes
        || m.emb_atac.len() != m.dims.d_atac * 2 * m.dims.d_embed
        || m.emb_rna.len() != m.dims.d_embed * m.dims.d_rna
    {
        return Err(AlignError::Checkpoint {
            path: path.to_path_buf(),
            msg: "parameter block shapes do not match the dims header".to_string(),
        });
    }
    Ok(m)
}
