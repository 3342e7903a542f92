//! Generating the synthetic benchmark and scoring the nearest-prototype
//! oracle as jitter grows.

use fsvae::synthbench::{band_energy_fraction, generate, oracle_nearest_prototype, SynthConfig};
use fsvae::pipeline::Features;

fn main() -> fsvae::Result<()> {
    for jitter in [0.0, 0.5, 2.0, 10.0] {
        let cfg = SynthConfig { jitter, ..SynthConfig::default() };
        let g = generate(&cfg)?;
        let Features::Sequence(first) = &g.dataset.records[0].features else { unreachable!() };
        let inside = band_energy_fraction(first, cfg.band_start, cfg.band_end)?;
        let r = oracle_nearest_prototype(&g)?;
        println!(
            "jitter {jitter:>4}: band energy {inside:.3}, oracle zsl {:.3} seen {:.3} all {:.3}",
            r.zsl_accuracy, r.seen_accuracy, r.all_accuracy
        );
    }
    Ok(())
}
