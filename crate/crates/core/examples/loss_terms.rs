//! Computes the past, current and rollout loss terms for a toy prediction.

use pms_core::losses::{loss_current, loss_future, loss_past, loss_total, mpjpe};

fn main() -> pms_core::error::Result<()> {
    let truth: Vec<Vec<f64>> = (0..30).map(|t| vec![t as f64 * 0.1, 0.0, 0.0]).collect();
    // A prediction that drifts by 0.01 per frame.
    let pred: Vec<Vec<f64>> = truth.iter().enumerate().map(|(t, f)| vec![f[0] + 0.01 * t as f64, 0.0, 0.0]).collect();
    let past = loss_past(&pred[..10], &truth[..10], &[2, 5, 10])?;
    let current = loss_current(&pred[..10], &truth[..10])?;
    let (future, skipped) = loss_future(&pred, &truth, &[20, 30])?;
    let total = loss_total(past, current, future, skipped);
    println!("past {past:.4}  current {current:.4}  rollout {future:.4}  total {:.4}", total.l_total);
    println!("MPJPE over 10 frames {:.4}", mpjpe(&pred[..10], &truth[..10])?);
    let (_, skipped) = loss_future(&pred, &truth[..25], &[20, 30])?;
    println!("with 25 ground-truth frames, {skipped} rollout term is skipped");
    Ok(())
}
