//! Lists the ablation variants and the configuration keys each one changes.

use pms_core::config::RunConfig;
use pms_core::training::{apply_ablation, config_diff, AblationSpec};

fn main() -> pms_core::error::Result<()> {
    let base = RunConfig::default().resolved()?;
    for spec in AblationSpec::ALL {
        let c = apply_ablation(&base, spec)?;
        println!("{:<14} {}", spec.name(), spec.description());
        for line in config_diff(&base, &c) {
            println!("    {line}");
        }
    }
    Ok(())
}
