//! Saves a model to bytes, loads it back and checks that predictions match
//! bit for bit.

use pms_core::model::{load_model, save_model, ModelConfig, PmsModel};

fn main() -> pms_core::error::Result<()> {
    let mut cfg = ModelConfig::new(2);
    cfg.hidden = 8;
    let model = PmsModel::new(cfg, 42)?;
    let mut bytes = Vec::new();
    save_model(&model, &mut bytes)?;
    let back = load_model(&bytes)?;
    println!("{} bytes, fingerprint {:016x} -> {:016x}", bytes.len(), model.fingerprint(), back.fingerprint());
    let window: Vec<Vec<f64>> = (0..50).map(|t| vec![(t as f64 * 0.1).sin(); 6]).collect();
    let a = model.predict_long(&window, 25)?;
    let b = back.predict_long(&window, 25)?;
    println!("identical predictions: {}", a == b);
    Ok(())
}
