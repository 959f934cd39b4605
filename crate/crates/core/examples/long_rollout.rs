//! Predicts 25 frames by repeated 10-frame steps and shows that the first
//! step equals the short prediction.

use pms_core::dataio::{normalize_action, synth_generate, SynthSpec};
use pms_core::model::{Forward, ForwardMode, ModelConfig, PmsModel};

fn main() -> pms_core::error::Result<()> {
    let (seq, _) = normalize_action(&synth_generate(&SynthSpec {
        joints: 3,
        frames: 80,
        ..SynthSpec::default()
    })?)?;
    let window: Vec<Vec<f64>> = (0..50).map(|i| seq.flat_frame(i)).collect();
    let mut cfg = ModelConfig::new(3);
    cfg.hidden = 16;
    let model = PmsModel::new(cfg, 1)?;

    let mut f = Forward::new(&model, ForwardMode::Infer, false);
    let frames = f.input(&[&window])?;
    let long = f.predict_long(&frames, 25)?;
    println!("{} frames from {} short steps", long.len(), f.short_calls);

    let short = model.predict_short(&window)?;
    let rollout = model.predict_long(&window, 25)?;
    let same = rollout[..10] == short.frames[..];
    println!("first 10 rollout frames equal the short prediction: {same}");
    for (delta, frames) in &short.branches {
        println!("scale {delta:>2} frame 1, joint 0: {:?}", &frames[0][..3]);
    }
    println!("blended frame 1, joint 0: {:?}", &short.frames[0][..3]);
    Ok(())
}
