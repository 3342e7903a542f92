//! Calibrated loss against the triplet baselines under injected label noise,
//! on a reduced benchmark.

use fsvae::cli::{loss_bench, RunConfig};
use fsvae::losses::AlignmentLoss;
use fsvae::synthbench::{bench_pipeline_config, SynthConfig};

fn main() -> fsvae::Result<()> {
    let cfg = RunConfig {
        pipeline: bench_pipeline_config(),
        synth: SynthConfig::default(),
        ..RunConfig::default()
    };
    let table = loss_bench(&cfg, &[0.0, 0.2], &[0, 1], &AlignmentLoss::ALL)?;
    print!("{}", table.to_tsv());
    Ok(())
}
