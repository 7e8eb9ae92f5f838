//! Parameter counts of the four variants at desk scale.

use eamri::harness::{ReconConfig, VariantKind};
use eamri::recon::EamriModel;

fn main() -> eamri::Result<()> {
    for variant in VariantKind::ALL {
        let model = EamriModel::new(&ReconConfig { variant, ..ReconConfig::desk() })?;
        let store = model.store();
        println!(
            "{:<5} {:>7} parameters (edge net {:>6}, fusion {:>5})",
            variant.name(),
            model.parameter_count(),
            store.scalar_count_with_prefix("epn"),
            store.scalar_count_with_prefix("cascade0.eam")
                + store.scalar_count_with_prefix("eam.")
                + store.scalar_count_with_prefix("cascade0.concat"),
        );
    }
    Ok(())
}
