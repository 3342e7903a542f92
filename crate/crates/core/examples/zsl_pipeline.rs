//! Full training on the synthetic benchmark followed by ZSL and GZSL
//! evaluation.

use fsvae::pipeline::run_pipeline;
use fsvae::synthbench::{bench_pipeline_config, generate, SynthConfig};

fn main() -> fsvae::Result<()> {
    let g = generate(&SynthConfig::default())?;
    let cfg = bench_pipeline_config();
    let (model, summary) = run_pipeline(&g.dataset, &g.split, &g.table, &cfg)?;
    for e in summary.epochs.iter().step_by(50) {
        println!("epoch {:>3}: loss {:.4}", e.epoch, e.loss.total);
    }
    println!("band scales {:?}", model.extractor.band_scales().iter().map(|g| format!("{g:.3}")).collect::<Vec<_>>());
    println!("unseen classes {:?}", g.split.unseen);
    println!("zsl accuracy {:.4}", model.evaluate_zsl(&g.dataset)?.accuracy);
    let r = model.evaluate_gzsl(&g.dataset)?;
    println!("gzsl seen {:.4} unseen {:.4} H {:.4}", r.seen, r.unseen, r.harmonic_mean);
    Ok(())
}
