//! Train the accessibility→expression translator on a synthetic paired set
//! and measure held-out marker R².
//!
//! ```bash
//! cargo run --release --example train_alignment
//! ```

use annobench::align::{marker_r2, train, AlignmentModel, Dims, TrainConfig};
use annobench::synthetic::paired_toy_set;

fn main() {
    let d_atac = 40;
    let d_rna = 20;
    let set = paired_toy_set(500, 3, d_atac, d_rna, 4, 0.2, 20250810);
    println!(
        "toy set: {} train / {} held-out cells, {} classes",
        set.train.len(),
        set.held_out.len(),
        set.n_classes
    );
    let dims = Dims {
        d_atac,
        d_rna,
        d_latent: 8,
        d_embed: 16,
        n_classes: set.n_classes,
    };
    let cfg = TrainConfig {
        step_size: 1e-3,
        steps: 2000,
        batch_size: 16,
        gamma: 1.0,
        seed: 7,
        disc_steps_per_gen_step: 1,
        sample_with_replacement: false,
    };
    let mut model = AlignmentModel::init(
        dims,
        cfg.gamma,
        vec!["class0".into(), "class1".into(), "class2".into()],
        cfg.seed,
    );
    let start = std::time::Instant::now();
    let history = train(&mut model, &set.train, &cfg).unwrap();
    let elapsed = start.elapsed();
    for r in history.iter().step_by(250) {
        println!(
            "step {:4}  rec {:8.4}  dis {:8.4}  gen {:8.4}",
            r.step, r.rec, r.dis, r.gen
        );
    }
    let last = history.last().unwrap();
    println!(
        "final   rec {:8.4}  dis {:8.4}  gen {:8.4}  ({elapsed:.1?})",
        last.rec, last.dis, last.gen
    );

    let predicted: Vec<Vec<f64>> = set
        .held_out
        .iter()
        .map(|c| model.translate(&c.atac).unwrap())
        .collect();
    let observed: Vec<Vec<f64>> = set.held_out.iter().map(|c| c.rna.clone()).collect();
    let labels: Vec<usize> = set.held_out.iter().map(|c| c.label).collect();
    let markers: Vec<usize> = (0..d_rna).collect();
    let r2 = marker_r2(&predicted, &observed, &labels, &markers).unwrap();
    println!(
        "held-out marker R²: mean {:.4} over {} markers",
        r2.mean, r2.n_defined
    );
}
