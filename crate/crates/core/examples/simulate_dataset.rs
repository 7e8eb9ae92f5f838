//! Builds a small phantom dataset, writes it to disk and reads it back.

use eamri::harness::{build_dataset, read_dataset, write_dataset, DatasetSpec, ReconConfig};

fn main() -> eamri::Result<()> {
    let spec = DatasetSpec::from_config(&ReconConfig::desk(), 8);
    let samples = build_dataset(&spec)?;
    let path = std::env::temp_dir().join("eamri-example-dataset.eamri");
    write_dataset(&path, &spec, &samples)?;
    let (back, reread) = read_dataset(&path)?;
    assert_eq!(back, spec);

    for (i, s) in reread.iter().enumerate() {
        let (h, w) = s.image_shape();
        let edge_fraction = s.edge_gt.data().iter().filter(|&&e| e > 0.1).count() as f64 / (h * w) as f64;
        println!(
            "sample {i}: {}x{} x {} coils, {} of {} columns sampled (ACS {:?}), |x| max {:.3}, edge pixels {:.1}%",
            h,
            w,
            s.coils(),
            s.mask.sampled_count(),
            w,
            s.mask.acs_range(),
            s.x_gt.abs().max(),
            100.0 * edge_fraction
        );
    }
    println!("round trip through {} ok", path.display());
    Ok(())
}
