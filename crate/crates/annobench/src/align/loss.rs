//! The three training objectives and their analytic gradients.
//!
//! Gradients are accumulated into a zeroed parameter mirror by manual
//! backpropagation. Each loss flows gradients into *every* parameter it
//! mathematically depends on; the training loop then applies only the
//! family it is updating, and the finite-difference check exercises the
//! whole thing.

use super::model::{AlignmentModel, MlpCache, PROB_CLAMP};
use super::{AlignError, PairedCell};

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Binary cross-entropy of one logit against a 0/1 target, with the
/// gradient w.r.t. the logit (zero where the clamp is active, matching what
/// a finite difference of the clamped loss sees).
fn bce_term(logit: f64, target: f64) -> (f64, f64) {
    let s = sigmoid(logit);
    let p = clamp_prob(s);
    let loss = -(target * p.ln() + (1.0 - target) * (1.0 - p).ln());
    let grad = if s > PROB_CLAMP && s < 1.0 - PROB_CLAMP {
        s - target
    } else {
        0.0
    };
    (loss, grad)
}

/// −ln σ(logit) and its logit gradient.
fn neg_log_sigmoid(logit: f64) -> (f64, f64) {
    let s = sigmoid(logit);
    let p = clamp_prob(s);
    let grad = if s > PROB_CLAMP && s < 1.0 - PROB_CLAMP {
        s - 1.0
    } else {
        0.0
    };
    (-p.ln(), grad)
}

/// −ln(1 − σ(logit)) and its logit gradient.
fn neg_log_one_minus_sigmoid(logit: f64) -> (f64, f64) {
    let s = sigmoid(logit);
    let p = clamp_prob(s);
    let grad = if s > PROB_CLAMP && s < 1.0 - PROB_CLAMP {
        s
    } else {
        0.0
    };
    (-(1.0 - p).ln(), grad)
}

fn check_batch(
    model: &AlignmentModel,
    batch: &[&PairedCell],
    class: Option<usize>,
) -> Result<(), AlignError> {
    if batch.is_empty() {
        return Err(AlignError::EmptyBatch);
    }
    for cell in batch {
        if cell.atac.len() != model.dims.d_atac || cell.rna.len() != model.dims.d_rna {
            return Err(AlignError::Dim(format!(
                "cell has atac {} / rna {}, model expects {} / {}",
                cell.atac.len(),
                cell.rna.len(),
                model.dims.d_atac,
                model.dims.d_rna
            )));
        }
        if cell.label >= model.dims.n_classes {
            return Err(AlignError::BadInput(format!(
                "label {} out of range for {} classes",
                cell.label, model.dims.n_classes
            )));
        }
        if let Some(k) = class {
            if cell.label != k {
                return Err(AlignError::BadInput(format!(
                    "batch restricted to class {k} contains label {}",
                    cell.label
                )));
            }
        }
    }
    Ok(())
}

/// Mean over the batch of BCE(σ(decode_atac(h_a)), x) + MSE(decode_rna(h_r), y),
/// both terms averaged over their output dimensions.
pub fn reconstruction_loss(
    model: &AlignmentModel,
    batch: &[&PairedCell],
) -> Result<f64, AlignError> {
    reconstruction(model, batch, false).map(|(l, _)| l)
}

pub(crate) fn reconstruction(
    model: &AlignmentModel,
    batch: &[&PairedCell],
    want_grads: bool,
) -> Result<(f64, Option<AlignmentModel>), AlignError> {
    check_batch(model, batch, None)?;
    let d = model.dims;
    let scale = 1.0 / batch.len() as f64;
    let mut grads = want_grads.then(|| model.zeroed_like());
    let mut loss = 0.0;
    for cell in batch {
        let e_a = model.embed_atac(&cell.atac);
        let ca = model.enc_atac.forward(&e_a);
        let da = model.dec_atac.forward(&ca.out);
        let mut bce = 0.0;
        let mut d_logits = vec![0.0; d.d_atac];
        for j in 0..d.d_atac {
            let (l, g) = bce_term(da.out[j], cell.atac[j]);
            bce += l / d.d_atac as f64;
            d_logits[j] = g / d.d_atac as f64 * scale;
        }
        let e_r = model.embed_rna(&cell.rna);
        let cr = model.enc_rna.forward(&e_r);
        let dr = model.dec_rna.forward(&cr.out);
        let mut mse = 0.0;
        let mut d_yhat = vec![0.0; d.d_rna];
        for j in 0..d.d_rna {
            let diff = dr.out[j] - cell.rna[j];
            mse += diff * diff / d.d_rna as f64;
            d_yhat[j] = 2.0 * diff / d.d_rna as f64 * scale;
        }
        loss += (bce + mse) * scale;
        if let Some(g) = grads.as_mut() {
            let mut d_h_a = vec![0.0; d.d_latent];
            model
                .dec_atac
                .backward(&ca.out, &da, &d_logits, Some(&mut d_h_a), &mut g.dec_atac);
            let mut d_e_a = vec![0.0; d.d_embed];
            model
                .enc_atac
                .backward(&e_a, &ca, &d_h_a, Some(&mut d_e_a), &mut g.enc_atac);
            model.embed_atac_backward(&cell.atac, &d_e_a, g);

            let mut d_h_r = vec![0.0; d.d_latent];
            model
                .dec_rna
                .backward(&cr.out, &dr, &d_yhat, Some(&mut d_h_r), &mut g.dec_rna);
            let mut d_e_r = vec![0.0; d.d_embed];
            model
                .enc_rna
                .backward(&e_r, &cr, &d_h_r, Some(&mut d_e_r), &mut g.enc_rna);
            model.embed_rna_backward(&cell.rna, &d_e_r, g);
        }
    }
    Ok((loss, grads))
}

struct LatentPair {
    e_a: Vec<f64>,
    ca: MlpCache,
    e_r: Vec<f64>,
    cr: MlpCache,
}

fn encode_pair(model: &AlignmentModel, cell: &PairedCell) -> LatentPair {
    let e_a = model.embed_atac(&cell.atac);
    let ca = model.enc_atac.forward(&e_a);
    let e_r = model.embed_rna(&cell.rna);
    let cr = model.enc_rna.forward(&e_r);
    LatentPair { e_a, ca, e_r, cr }
}

fn backprop_latents(
    model: &AlignmentModel,
    cell: &PairedCell,
    lat: &LatentPair,
    d_h_a: &[f64],
    d_h_r: &[f64],
    g: &mut AlignmentModel,
) {
    let d_embed = model.dims.d_embed;
    let mut d_e_a = vec![0.0; d_embed];
    model
        .enc_atac
        .backward(&lat.e_a, &lat.ca, d_h_a, Some(&mut d_e_a), &mut g.enc_atac);
    model.embed_atac_backward(&cell.atac, &d_e_a, g);
    let mut d_e_r = vec![0.0; d_embed];
    model
        .enc_rna
        .backward(&lat.e_r, &lat.cr, d_h_r, Some(&mut d_e_r), &mut g.enc_rna);
    model.embed_rna_backward(&cell.rna, &d_e_r, g);
}

/// Class-k discrimination objective (sign-flipped so minimizing it drives
/// the discriminators toward telling native latents from mapped ones):
/// −E[ln D_a(h_a) + ln(1−D_a(h̃_a)) + ln D_r(h_r) + ln(1−D_r(h̃_r))].
pub fn discriminator_loss(
    model: &AlignmentModel,
    batch: &[&PairedCell],
    class: usize,
) -> Result<f64, AlignError> {
    discriminator(model, batch, class, false).map(|(l, _)| l)
}

pub(crate) fn discriminator(
    model: &AlignmentModel,
    batch: &[&PairedCell],
    class: usize,
    want_grads: bool,
) -> Result<(f64, Option<AlignmentModel>), AlignError> {
    check_batch(model, batch, Some(class))?;
    let d = model.dims;
    let scale = 1.0 / batch.len() as f64;
    let disc_a = &model.disc_atac[class];
    let disc_r = &model.disc_rna[class];
    let mut grads = want_grads.then(|| model.zeroed_like());
    let mut loss = 0.0;
    for cell in batch {
        let lat = encode_pair(model, cell);
        let mar = model.map_ar.forward(&lat.ca.out); // h̃_r
        let mra = model.map_ra.forward(&lat.cr.out); // h̃_a
        let la_real = disc_a.forward(&lat.ca.out);
        let la_fake = disc_a.forward(&mra.out);
        let lr_real = disc_r.forward(&lat.cr.out);
        let lr_fake = disc_r.forward(&mar.out);
        let (l1, g1) = neg_log_sigmoid(la_real.out[0]);
        let (l2, g2) = neg_log_one_minus_sigmoid(la_fake.out[0]);
        let (l3, g3) = neg_log_sigmoid(lr_real.out[0]);
        let (l4, g4) = neg_log_one_minus_sigmoid(lr_fake.out[0]);
        loss += (l1 + l2 + l3 + l4) * scale;
        if let Some(g) = grads.as_mut() {
            let mut d_h_a = vec![0.0; d.d_latent];
            let mut d_h_r = vec![0.0; d.d_latent];
            let mut d_fake_a = vec![0.0; d.d_latent];
            let mut d_fake_r = vec![0.0; d.d_latent];
            disc_a.backward(
                &lat.ca.out,
                &la_real,
                &[g1 * scale],
                Some(&mut d_h_a),
                &mut g.disc_atac[class],
            );
            disc_a.backward(
                &mra.out,
                &la_fake,
                &[g2 * scale],
                Some(&mut d_fake_a),
                &mut g.disc_atac[class],
            );
            disc_r.backward(
                &lat.cr.out,
                &lr_real,
                &[g3 * scale],
                Some(&mut d_h_r),
                &mut g.disc_rna[class],
            );
            disc_r.backward(
                &mar.out,
                &lr_fake,
                &[g4 * scale],
                Some(&mut d_fake_r),
                &mut g.disc_rna[class],
            );
            // mapped latents feed back into the opposite encoder
            model
                .map_ra
                .backward(&lat.cr.out, &mra, &d_fake_a, Some(&mut d_h_r), &mut g.map_ra);
            model
                .map_ar
                .backward(&lat.ca.out, &mar, &d_fake_r, Some(&mut d_h_a), &mut g.map_ar);
            backprop_latents(model, cell, &lat, &d_h_a, &d_h_r, g);
        }
    }
    Ok((loss, grads))
}

/// Class-k generator objective: fool the opposite discriminator and keep the
/// cycle closed, E[−ln D_r(h̃_r) + MSE(map_ra(h̃_r), h_a)] +
/// E[−ln D_a(h̃_a) + MSE(map_ar(h̃_a), h_r)].
pub fn generator_loss(
    model: &AlignmentModel,
    batch: &[&PairedCell],
    class: usize,
) -> Result<f64, AlignError> {
    generator(model, batch, class, false).map(|(l, _)| l)
}

pub(crate) fn generator(
    model: &AlignmentModel,
    batch: &[&PairedCell],
    class: usize,
    want_grads: bool,
) -> Result<(f64, Option<AlignmentModel>), AlignError> {
    check_batch(model, batch, Some(class))?;
    let d = model.dims;
    let scale = 1.0 / batch.len() as f64;
    let dl = d.d_latent as f64;
    let disc_a = &model.disc_atac[class];
    let disc_r = &model.disc_rna[class];
    let mut grads = want_grads.then(|| model.zeroed_like());
    let mut loss = 0.0;
    for cell in batch {
        let lat = encode_pair(model, cell);
        let h_a = &lat.ca.out;
        let h_r = &lat.cr.out;
        let mar = model.map_ar.forward(h_a); // h̃_r
        let mra = model.map_ra.forward(h_r); // h̃_a
        let cyc_a = model.map_ra.forward(&mar.out); // map_ra(h̃_r), should be h_a
        let cyc_r = model.map_ar.forward(&mra.out); // map_ar(h̃_a), should be h_r
        let lr_fake = disc_r.forward(&mar.out);
        let la_fake = disc_a.forward(&mra.out);
        let (adv_r, g_adv_r) = neg_log_sigmoid(lr_fake.out[0]);
        let (adv_a, g_adv_a) = neg_log_sigmoid(la_fake.out[0]);
        let mse_a: f64 = (0..d.d_latent)
            .map(|i| (cyc_a.out[i] - h_a[i]).powi(2))
            .sum::<f64>()
            / dl;
        let mse_r: f64 = (0..d.d_latent)
            .map(|i| (cyc_r.out[i] - h_r[i]).powi(2))
            .sum::<f64>()
            / dl;
        loss += (adv_r + mse_a + adv_a + mse_r) * scale;
        if let Some(g) = grads.as_mut() {
            let mut d_h_a = vec![0.0; d.d_latent];
            let mut d_h_r = vec![0.0; d.d_latent];
            let mut d_mar = vec![0.0; d.d_latent]; // d h̃_r
            let mut d_mra = vec![0.0; d.d_latent]; // d h̃_a

            // adversarial terms (discriminator params frozen during the
            // generator update, but their gradients are still well-defined
            // and accumulated for the checker)
            disc_r.backward(
                &mar.out,
                &lr_fake,
                &[g_adv_r * scale],
                Some(&mut d_mar),
                &mut g.disc_rna[class],
            );
            disc_a.backward(
                &mra.out,
                &la_fake,
                &[g_adv_a * scale],
                Some(&mut d_mra),
                &mut g.disc_atac[class],
            );

            // cycle terms: both the mapped path and the target latent
            let mut d_cyc_a = vec![0.0; d.d_latent];
            let mut d_cyc_r = vec![0.0; d.d_latent];
            for i in 0..d.d_latent {
                let ga = 2.0 * (cyc_a.out[i] - h_a[i]) / dl * scale;
                d_cyc_a[i] = ga;
                d_h_a[i] -= ga;
                let gr = 2.0 * (cyc_r.out[i] - h_r[i]) / dl * scale;
                d_cyc_r[i] = gr;
                d_h_r[i] -= gr;
            }
            model
                .map_ra
                .backward(&mar.out, &cyc_a, &d_cyc_a, Some(&mut d_mar), &mut g.map_ra);
            model
                .map_ar
                .backward(&mra.out, &cyc_r, &d_cyc_r, Some(&mut d_mra), &mut g.map_ar);

            // first mapping hop
            model
                .map_ar
                .backward(h_a, &mar, &d_mar, Some(&mut d_h_a), &mut g.map_ar);
            model
                .map_ra
                .backward(h_r, &mra, &d_mra, Some(&mut d_h_r), &mut g.map_ra);

            backprop_latents(model, cell, &lat, &d_h_a, &d_h_r, g);
        }
    }
    Ok((loss, grads))
}

/// Scaled in-place accumulation: `into += factor * from`, block by block.
pub(crate) fn add_scaled(into: &mut AlignmentModel, from: &AlignmentModel, factor: f64) {
    let src: Vec<Vec<f64>> = from.blocks().into_iter().map(|(_, b)| b.clone()).collect();
    for ((_, dst), s) in into.blocks_mut().into_iter().zip(src) {
        for (d, v) in dst.iter_mut().zip(s) {
            *d += factor * v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::align::model::Dims;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn tiny_dims() -> Dims {
        Dims {
            d_atac: 6,
            d_rna: 4,
            d_latent: 3,
            d_embed: 5,
            n_classes: 2,
        }
    }

    fn tiny_batch(dims: Dims, n_per_class: usize, seed: u64) -> Vec<PairedCell> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cells = Vec::new();
        for k in 0..dims.n_classes {
            for _ in 0..n_per_class {
                let atac: Vec<f64> = (0..dims.d_atac)
                    .map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 })
                    .collect();
                let rna: Vec<f64> = (0..dims.d_rna).map(|_| rng.gen_range(-1.0..1.0)).collect();
                cells.push(PairedCell::new(atac, rna, k).unwrap());
            }
        }
        cells
    }

    #[test]
    fn embedding_is_affine_in_the_flipped_bits() {
        let dims = tiny_dims();
        let model = AlignmentModel::init(dims, 1.0, vec!["a".into(), "b".into()], 7);
        let zero = vec![0.0; dims.d_atac];
        let base = model.embed_atac(&zero);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let x: Vec<f64> = (0..dims.d_atac)
                .map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 })
                .collect();
            let emb = model.embed_atac(&x);
            // Emb(x) − Emb(0) must equal the sum of per-dimension deltas
            let mut expect = vec![0.0; dims.d_embed];
            for (j, &v) in x.iter().enumerate() {
                if v != 0.0 {
                    for k in 0..dims.d_embed {
                        let on = model.emb_atac[(j * 2 + 1) * dims.d_embed + k];
                        let off = model.emb_atac[(j * 2) * dims.d_embed + k];
                        expect[k] += on - off;
                    }
                }
            }
            for k in 0..dims.d_embed {
                assert!((emb[k] - base[k] - expect[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn perfect_reconstruction_has_negligible_loss() {
        // rig a 1-cell model by brute force: decoder output forced to the
        // targets through the bias terms of a zeroed decoder
        let dims = Dims {
            d_atac: 3,
            d_rna: 2,
            d_latent: 2,
            d_embed: 2,
            n_classes: 1,
        };
        let mut model = AlignmentModel::init(dims, 1.0, vec!["only".into()], 3);
        let cell = PairedCell::new(vec![1.0, 0.0, 1.0], vec![0.4, -0.2], 0).unwrap();
        for w in model.dec_atac.w1.iter_mut().chain(model.dec_atac.w2.iter_mut()) {
            *w = 0.0;
        }
        for (j, b) in model.dec_atac.b2.iter_mut().enumerate() {
            *b = if cell.atac[j] != 0.0 { 20.0 } else { -20.0 };
        }
        for w in model.dec_rna.w1.iter_mut().chain(model.dec_rna.w2.iter_mut()) {
            *w = 0.0;
        }
        for (j, b) in model.dec_rna.b2.iter_mut().enumerate() {
            *b = cell.rna[j];
        }
        let loss = reconstruction_loss(&model, &[&cell]).unwrap();
        assert!(loss < 1e-6, "loss = {loss}");
    }

    #[test]
    fn indifferent_discriminator_sits_at_four_ln_two() {
        // zero discriminator weights output logit 0, i.e. probability 0.5
        let dims = tiny_dims();
        let mut model = AlignmentModel::init(dims, 1.0, vec!["a".into(), "b".into()], 5);
        for disc in model.disc_atac.iter_mut().chain(model.disc_rna.iter_mut()) {
            for v in disc
                .w1
                .iter_mut()
                .chain(disc.b1.iter_mut())
                .chain(disc.w2.iter_mut())
                .chain(disc.b2.iter_mut())
            {
                *v = 0.0;
            }
        }
        let cells = tiny_batch(dims, 3, 11);
        let class0: Vec<&PairedCell> = cells.iter().filter(|c| c.label == 0).collect();
        let loss = discriminator_loss(&model, &class0, 0).unwrap();
        assert!((loss - 4.0 * 2f64.ln()).abs() < 1e-12, "loss = {loss}");
    }

    /// Straight-line reimplementation of all three objectives, sharing only
    /// the model's forward primitives.
    fn oracle_losses(model: &AlignmentModel, cells: &[PairedCell], k: usize) -> (f64, f64, f64) {
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let cl = |p: f64| p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        let batch: Vec<&PairedCell> = cells.iter().collect();
        let class: Vec<&PairedCell> = cells.iter().filter(|c| c.label == k).collect();
        let mut rec = 0.0;
        for c in &batch {
            let h_a = model.encode_atac(&c.atac).unwrap();
            let h_r = model.encode_rna(&c.rna).unwrap();
            let logits = model.dec_atac.forward(&h_a).out;
            let yhat = model.dec_rna.forward(&h_r).out;
            let mut bce = 0.0;
            for j in 0..c.atac.len() {
                let p = cl(sig(logits[j]));
                bce += -(c.atac[j] * p.ln() + (1.0 - c.atac[j]) * (1.0 - p).ln());
            }
            let mut mse = 0.0;
            for j in 0..c.rna.len() {
                mse += (yhat[j] - c.rna[j]).powi(2);
            }
            rec += bce / c.atac.len() as f64 + mse / c.rna.len() as f64;
        }
        rec /= batch.len() as f64;
        let mut dis = 0.0;
        let mut gen = 0.0;
        for c in &class {
            let h_a = model.encode_atac(&c.atac).unwrap();
            let h_r = model.encode_rna(&c.rna).unwrap();
            let fr = model.map_ar.forward(&h_a).out;
            let fa = model.map_ra.forward(&h_r).out;
            let d_ar = cl(sig(model.disc_atac[k].forward(&h_a).out[0]));
            let d_af = cl(sig(model.disc_atac[k].forward(&fa).out[0]));
            let d_rr = cl(sig(model.disc_rna[k].forward(&h_r).out[0]));
            let d_rf = cl(sig(model.disc_rna[k].forward(&fr).out[0]));
            dis += -(d_ar.ln() + (1.0 - d_af).ln() + d_rr.ln() + (1.0 - d_rf).ln());
            let cyc_a = model.map_ra.forward(&fr).out;
            let cyc_r = model.map_ar.forward(&fa).out;
            let mut mse_a = 0.0;
            let mut mse_r = 0.0;
            for i in 0..h_a.len() {
                mse_a += (cyc_a[i] - h_a[i]).powi(2);
                mse_r += (cyc_r[i] - h_r[i]).powi(2);
            }
            gen += -d_rf.ln() + mse_a / h_a.len() as f64 - d_af.ln()
                + mse_r / h_r.len() as f64;
        }
        dis /= class.len() as f64;
        gen /= class.len() as f64;
        (rec, dis, gen)
    }

    #[test]
    fn losses_match_straight_line_oracle() {
        let dims = tiny_dims();
        let model = AlignmentModel::init(dims, 1.0, vec!["a".into(), "b".into()], 21);
        let cells = tiny_batch(dims, 4, 22);
        let (rec_o, dis_o, gen_o) = oracle_losses(&model, &cells, 1);
        let batch: Vec<&PairedCell> = cells.iter().collect();
        let class: Vec<&PairedCell> = cells.iter().filter(|c| c.label == 1).collect();
        assert!((reconstruction_loss(&model, &batch).unwrap() - rec_o).abs() < 1e-10);
        assert!((discriminator_loss(&model, &class, 1).unwrap() - dis_o).abs() < 1e-10);
        assert!((generator_loss(&model, &class, 1).unwrap() - gen_o).abs() < 1e-10);
    }

    #[test]
    fn class_restriction_is_enforced() {
        let dims = tiny_dims();
        let model = AlignmentModel::init(dims, 1.0, vec!["a".into(), "b".into()], 2);
        let cells = tiny_batch(dims, 2, 1);
        let mixed: Vec<&PairedCell> = cells.iter().collect();
        assert!(matches!(
            discriminator_loss(&model, &mixed, 0),
            Err(AlignError::BadInput(_))
        ));
        assert!(matches!(
            generator_loss(&model, &[], 0),
            Err(AlignError::EmptyBatch)
        ));
    }
}
