//! Generates a synthetic motion sequence, normalizes it to [-1, 1] per axis
//! and writes it as MTF text.

use pms_core::dataio::{denormalize, normalize_action, synth_generate, to_mtf_string, SynthSpec};

fn main() -> pms_core::error::Result<()> {
    let spec = SynthSpec {
        joints: 4,
        frames: 120,
        seed: 7,
        ..SynthSpec::default()
    };
    let seq = synth_generate(&spec)?;
    let (normed, stats) = normalize_action(&seq)?;
    println!("{} frames, {} joints", seq.num_frames(), seq.joints);
    for axis in 0..3 {
        println!(
            "axis {axis}: source range [{:.3}, {:.3}] -> midpoint {:.3}, half range {:.3}",
            stats.min[axis],
            stats.max[axis],
            stats.midpoint(axis),
            stats.half_range(axis)
        );
    }
    let back = denormalize(&normed, &stats);
    let worst = back
        .frames
        .iter()
        .flatten()
        .zip(seq.frames.iter().flatten())
        .flat_map(|(a, b)| (0..3).map(move |i| (a[i] - b[i]).abs()))
        .fold(0.0, f64::max);
    println!("round-trip error {worst:.2e}");
    let text = to_mtf_string(&normed)?;
    println!("first MTF lines:");
    for line in text.lines().take(3) {
        println!("  {}", &line[..line.len().min(72)]);
    }
    Ok(())
}
