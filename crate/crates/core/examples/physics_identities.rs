//! Forward model, Reduce/Expand and the data-consistency projection on one
//! simulated acquisition.

use eamri::harness::{generate_phantom, simulate_coil_maps, PhantomSpec};
use eamri::mri::{
    data_consistency, expand, forward_model, reduce, rss, sampled_residual, zero_filled, CoilSensitivities,
    SamplingMask,
};
use eamri::tensor::{ComplexTensor, RealTensor};

fn main() -> eamri::Result<()> {
    let n = 32;
    let x = generate_phantom(&PhantomSpec { size: n, ..PhantomSpec::default() })?;
    let maps = simulate_coil_maps(4, n, n, 1)?;
    let mask = SamplingMask::cartesian(n, 4, 0.08, 2)?;
    let y = forward_model(&x, &maps, &mask, 0.0, 3)?;

    let back = reduce(&maps, &expand(&maps, &x)?)?;
    println!("max |R(S, E(S, x)) - x|      = {:.2e}", back.max_abs_diff(&x));
    let r = rss(&expand(&maps, &x)?)?;
    println!("max |rss(E(S, x)) - |x||     = {:.2e}", r.max_abs_diff(&x.abs()));
    println!("sensitivity normalization     = {:.2e}", maps.normalization_error());

    let zf = zero_filled(&y, &maps)?;
    println!("zero-filled residual on mask  = {:.3e}", sampled_residual(&zf, &y, &mask, &maps)?);
    let dc = data_consistency(&zf, &y, &mask, &maps)?;
    println!("after one DC projection       = {:.3e}", sampled_residual(&dc, &y, &mask, &maps)?);
    let dc2 = data_consistency(&dc, &y, &mask, &maps)?;
    println!("DC(DC(x)) - DC(x)             = {:.3e}", dc2.max_abs_diff(&dc));

    // with a single unit-modulus coil the projection is exact
    let h = n;
    let phase: Vec<f64> = (0..h * n).flat_map(|p| {
        let a = 0.1 * (p % n) as f64;
        [a.cos(), a.sin()]
    }).collect();
    let single = CoilSensitivities::new(ComplexTensor::new(vec![1, h, n], phase)?)?;
    let y1 = forward_model(&x, &single, &mask, 0.0, 3)?;
    let start = ComplexTensor::from_real(&RealTensor::filled(vec![h, n], 0.2));
    let d1 = data_consistency(&start, &y1, &mask, &single)?;
    println!("single coil residual after DC = {:.3e}", sampled_residual(&d1, &y1, &mask, &single)?);
    println!("single coil idempotence       = {:.3e}", data_consistency(&d1, &y1, &mask, &single)?.max_abs_diff(&d1));
    Ok(())
}
