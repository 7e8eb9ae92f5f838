//! Attention shapes, row sums and multiply-add counts of one edge attention
//! pass at growing image sizes.

use eamri::mri::SamplingMask;
use eamri::recon::{DcContext, EamBlock};
use eamri::tensor::{ComplexTensor, ParamStore, RealTensor, Trace};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> eamri::Result<()> {
    let (channels, heads, coils) = (16, 4, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::new();
    let eam = EamBlock::new(&mut store, "eam", channels, heads, false, &mut rng)?;
    for n in [8, 16, 32] {
        let mut t = Trace::new();
        let x = t.constant(RealTensor::uniform(vec![n, n, 2], -1.0, 1.0, &mut rng));
        let edge = t.constant(RealTensor::uniform(vec![1, 1, n, n], 0.0, 1.0, &mut rng));
        let y = t.constant(ComplexTensor::uniform(vec![coils, n, n], -1.0, 1.0, &mut rng).into_interleaved());
        let maps = t.constant(ComplexTensor::uniform(vec![coils, n, n], -1.0, 1.0, &mut rng).into_interleaved());
        let mask = SamplingMask::cartesian(n, 4, 0.08, 0)?.weights();
        let dc = DcContext { y, maps, mask: &mask };
        let before = t.macs();
        let out = eam.forward(&mut t, &store, x, edge, &dc)?;
        let macs = t.macs() - before;
        let a = t.value(out.attention);
        let row_err = a
            .data()
            .chunks(a.shape()[2])
            .map(|row| (row.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max);
        println!(
            "{n:>2}x{n:<2} attention {:?}, max |row sum - 1| {row_err:.1e}, MACs {macs} (model {})",
            a.shape(),
            EamBlock::macs(channels, heads, coils, n * n)
        );
    }
    Ok(())
}
