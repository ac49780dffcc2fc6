//! Central finite-difference validation of the analytic gradients, over all
//! parameters and all three loss families.

use super::loss::{discriminator, generator, reconstruction};
use super::model::AlignmentModel;
use super::{AlignError, PairedCell};

enum LossFamily {
    Reconstruction,
    Discriminator(usize),
    Generator(usize),
}

impl LossFamily {
    fn eval(&self, model: &AlignmentModel, batch: &[&PairedCell]) -> Result<f64, AlignError> {
        match self {
            LossFamily::Reconstruction => reconstruction(model, batch, false).map(|(l, _)| l),
            LossFamily::Discriminator(k) => {
                discriminator(model, batch, *k, false).map(|(l, _)| l)
            }
            LossFamily::Generator(k) => generator(model, batch, *k, false).map(|(l, _)| l),
        }
    }

    fn grads(
        &self,
        model: &AlignmentModel,
        batch: &[&PairedCell],
    ) -> Result<AlignmentModel, AlignError> {
        let g = match self {
            LossFamily::Reconstruction => reconstruction(model, batch, true)?.1,
            LossFamily::Discriminator(k) => discriminator(model, batch, *k, true)?.1,
            LossFamily::Generator(k) => generator(model, batch, *k, true)?.1,
        };
        Ok(g.unwrap())
    }
}

/// Maximum relative error |g_analytic − g_fd| / max(1e-8, |g_a| + |g_fd|)
/// over every parameter and every loss family evaluated on `batch`.
///
/// Meant for small dimensions; cost is two loss evaluations per parameter
/// per family.
pub fn grad_check(
    model: &AlignmentModel,
    batch: &[PairedCell],
    epsilon: f64,
) -> Result<f64, AlignError> {
    if batch.is_empty() {
        return Err(AlignError::EmptyBatch);
    }
    let mut families = vec![LossFamily::Reconstruction];
    for k in 0..model.dims.n_classes {
        if batch.iter().any(|c| c.label == k) {
            families.push(LossFamily::Discriminator(k));
            families.push(LossFamily::Generator(k));
        }
    }
    let n = model.param_count();
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    for family in &families {
        let refs: Vec<&PairedCell> = match family {
            LossFamily::Reconstruction => batch.iter().collect(),
            LossFamily::Discriminator(k) | LossFamily::Generator(k) => {
                batch.iter().filter(|c| c.label == *k).collect()
            }
        };
        let analytic = family.grads(model, &refs)?;
        for i in 0..n {
            probe.flat_add(i, epsilon);
            let plus = family.eval(&probe, &refs)?;
            probe.flat_add(i, -2.0 * epsilon);
            let minus = family.eval(&probe, &refs)?;
            probe.flat_add(i, epsilon);
            let fd = (plus - minus) / (2.0 * epsilon);
            let ga = analytic.flat_get(i);
            let rel = (ga - fd).abs() / (ga.abs() + fd.abs()).max(1e-8);
            if rel > worst {
                worst = rel;
            }
        }
    }
    Ok(worst)
}
