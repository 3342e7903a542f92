//! Forward/inverse DCT of a motion sequence, energy preservation and band
//! enhancement.

use fsvae::frequency::{
    dct_forward, enhance_sequence, idct, redistributed_energy, signal_energy, EnhancementConfig, EnhancementMode,
    MotionSequence,
};
use fsvae::numkit::{standard_normal, RngSeed};

fn main() -> fsvae::Result<()> {
    let (j, c, f) = (25, 3, 64);
    let mut rng = RngSeed::new(1, 0).rng();
    let seq = MotionSequence::new(j, c, f, (0..j * c * f).map(|_| standard_normal(&mut rng)).collect())?;

    let spec = dct_forward(&seq)?;
    let back = idct(&spec)?;
    let err = back.values().iter().zip(seq.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("round-trip max error  {err:.2e}");
    println!("time energy           {:.6}", signal_energy(&seq));
    println!("frequency energy      {:.6}", signal_energy(&spec));

    let cfg = EnhancementConfig::per_coefficient(f, EnhancementMode::Piecewise, 35, 30.0, 0.5);
    let enhanced = enhance_sequence(&seq, &cfg)?;
    println!("enhanced energy       {:.6}", signal_energy(&enhanced));
    println!("sum g(i)^2 C_i^2      {:.6}", redistributed_energy(&spec, &cfg)?);
    let scales = cfg.coefficient_scales();
    println!("g at i = 0, 34, 35, 63: {:.3} {:.3} {:.3} {:.3}", scales[0], scales[34], scales[35], scales[63]);
    Ok(())
}
