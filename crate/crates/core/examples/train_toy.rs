//! A short training run on 16×16 phantoms.

use eamri::harness::{build_dataset, DatasetSpec, ReconConfig};
use eamri::recon::EamriModel;
use eamri::training::Trainer;

fn main() -> eamri::Result<()> {
    let config = ReconConfig {
        image_size: 16,
        channels: 8,
        heads: 2,
        batch: 2,
        steps: 40,
        eval_every: 10,
        lr: 1e-3,
        ..ReconConfig::desk()
    };
    let samples = build_dataset(&DatasetSpec::from_config(&config, 10))?;
    let mut trainer = Trainer::new(EamriModel::new(&config)?, samples.len())?;
    println!("{} parameters", trainer.model.parameter_count());
    trainer.run(&samples, config.steps as u64, |r| {
        println!(
            "step {:>3}  train {:.4}  val {:.4}  edge {:.4}  psnr {:.2} dB",
            r.step, r.loss, r.val_loss, r.edge_loss, r.psnr
        );
        Ok(())
    })?;
    Ok(())
}
