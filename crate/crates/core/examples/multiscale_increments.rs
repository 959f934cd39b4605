//! Splits a window into five segments per scale and prints the fused
//! velocity and acceleration features.

use pms_core::increments::{scale_increments, Anchor, FusionWeights};

fn main() -> pms_core::error::Result<()> {
    // One coordinate moving as t² / 100 over a 50-frame window.
    let window: Vec<Vec<f64>> = (0..50).map(|t| vec![(t * t) as f64 / 100.0, 0.0, 0.0]).collect();
    let weights = FusionWeights::default();
    for delta in [10, 5, 2] {
        let inc = scale_increments(&window, delta, Anchor::End, &weights)?;
        let v: Vec<String> = inc.fused_velocity.iter().map(|f| format!("{:.2}", f[0])).collect();
        let a: Vec<String> = inc.fused_accel.iter().map(|f| format!("{:.2}", f[0])).collect();
        println!("scale {delta:>2}: fused velocity [{}]", v.join(", "));
        println!("          fused acceleration [{}]", a.join(", "));
    }
    Ok(())
}
