//! A few hundred Adam steps of the twin VAE on random paired features.

use fsvae::crossvae::{train_step, TrainBatch, VaeConfig, VaeParams};
use fsvae::losses::{AlignmentLoss, LossConfig};
use fsvae::numkit::{standard_normal, AdamState, DenseMatrix, RngSeed};

fn main() -> fsvae::Result<()> {
    let cfg = VaeConfig {
        skeleton_dim: 12,
        text_dim: 8,
        latent_dim: 4,
        hidden: vec![16],
    };
    let mut rng = RngSeed::new(3, 0).rng();
    let mut params = VaeParams::seeded(&cfg, &mut rng)?;
    let batch = TrainBatch {
        skeleton: DenseMatrix::from_fn(16, 12, |_, _| standard_normal(&mut rng)),
        text: DenseMatrix::from_fn(16, 8, |_, _| standard_normal(&mut rng)),
        labels: (0..16).map(|i| i % 4).collect(),
    };
    let loss_cfg = LossConfig::default();
    let mut adam = AdamState::new(params.num_params(), 1e-3);
    for step in 0..=300 {
        let out = train_step(&mut params, &mut adam, &batch, AlignmentLoss::Calibrated, &loss_cfg, &mut rng)?;
        if step % 50 == 0 {
            let b = out.breakdown;
            println!("step {step:>3}: total {:.4} vae {:.4} align {:.4}", b.total, b.vae, b.align);
        }
    }
    Ok(())
}
