use eamri::harness::{build_dataset, simulate_coil_maps, DatasetSpec, ReconConfig, VariantKind};
use eamri::mri::{data_consistency, sampled_residual, SamplingMask};
use eamri::recon::{DcContext, EamBlock, EamriModel, RdcnBlock};
use eamri::tensor::{ComplexTensor, ParamStore, RealTensor, Trace};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

struct Scene {
    x: ComplexTensor,
    y: ComplexTensor,
    maps: eamri::mri::CoilSensitivities,
    mask: SamplingMask,
}

fn scene(n: usize, coils: usize, seed: u64) -> Scene {
    let mut r = rng(seed);
    let maps = simulate_coil_maps(coils, n, n, seed).unwrap();
    let mask = SamplingMask::cartesian(n, 4, 0.08, seed).unwrap();
    let truth = ComplexTensor::uniform(vec![n, n], -1.0, 1.0, &mut r);
    let y = eamri::mri::forward_model(&truth, &maps, &mask, 0.0, 0).unwrap();
    Scene {
        x: ComplexTensor::uniform(vec![n, n], -1.0, 1.0, &mut r),
        y,
        maps,
        mask,
    }
}

#[test]
fn rdcn_with_zero_projection_is_data_consistency_of_its_input() {
    let s = scene(8, 2, 1);
    let mut store = ParamStore::new();
    let block = RdcnBlock::new(&mut store, "rdcn", 8, 2, &mut rng(2)).unwrap();
    let mut t = Trace::new();
    let x = t.constant(s.x.clone().into_interleaved());
    let y = t.constant(s.y.clone().into_interleaved());
    let maps = t.constant(s.maps.maps().clone().into_interleaved());
    let w = s.mask.weights();
    let dc = DcContext { y, maps, mask: &w };
    let out = block.forward(&mut t, &store, x, &dc).unwrap();
    let got = ComplexTensor::from_interleaved(t.value(out).clone()).unwrap();
    let want = data_consistency(&s.x, &s.y, &s.mask, &s.maps).unwrap();
    assert!(got.max_abs_diff(&want) < 1e-13);
}

#[test]
fn rdcn_parameter_count_is_independent_of_recursions() {
    let count = |m: usize| {
        let mut store = ParamStore::new();
        RdcnBlock::new(&mut store, "rdcn", 16, m, &mut rng(0)).unwrap();
        store.scalar_count()
    };
    assert_eq!(count(1), count(3));
    assert_eq!(count(1), count(7));
}

fn eam_pass(n: usize, seed: u64, zero_proj: bool) -> (ComplexTensor, RealTensor, ComplexTensor, u64) {
    let s = scene(n, 2, seed);
    let mut store = ParamStore::new();
    let eam = EamBlock::new(&mut store, "eam", 8, 2, false, &mut rng(seed)).unwrap();
    if !zero_proj {
        let mut r = rng(seed + 1);
        let ids: Vec<_> = store.iter().map(|(id, p)| (id, p.value.shape().to_vec())).collect();
        for (id, shape) in ids {
            store.set_value(id, RealTensor::uniform(shape, -0.5, 0.5, &mut r)).unwrap();
        }
    }
    let mut t = Trace::new();
    let x = t.constant(s.x.clone().into_interleaved());
    let edge = t.constant(RealTensor::uniform(vec![1, 1, n, n], 0.0, 1.0, &mut rng(seed + 2)));
    let y = t.constant(s.y.clone().into_interleaved());
    let maps = t.constant(s.maps.maps().clone().into_interleaved());
    let w = s.mask.weights();
    let dc = DcContext { y, maps, mask: &w };
    let before = t.macs();
    let out = eam.forward(&mut t, &store, x, edge, &dc).unwrap();
    let macs = t.macs() - before;
    let want = data_consistency(&s.x, &s.y, &s.mask, &s.maps).unwrap();
    (
        ComplexTensor::from_interleaved(t.value(out.image).clone()).unwrap(),
        t.value(out.attention).clone(),
        want,
        macs,
    )
}

#[test]
fn eam_with_zero_projection_is_data_consistency() {
    let (got, _, want, _) = eam_pass(8, 3, true);
    assert!(got.max_abs_diff(&want) < 1e-13);
    let (got, _, want, _) = eam_pass(8, 3, false);
    assert!(got.max_abs_diff(&want) > 1e-6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn attention_rows_sum_to_one(seed in 0u64..1000) {
        let (_, a, _, _) = eam_pass(8, seed, false);
        prop_assert_eq!(a.shape(), &[2, 4, 4]);
        for row in a.data().chunks(4) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            prop_assert!(row.iter().all(|v| *v >= 0.0));
        }
    }
}

#[test]
fn attention_cost_is_affine_in_pixel_count() {
    let m: Vec<(u64, u64)> = [4, 8, 16]
        .iter()
        .map(|&n| ((n * n) as u64, eam_pass(n, 5, false).3))
        .collect();
    for &(hw, macs) in &m {
        assert_eq!(macs, EamBlock::macs(8, 2, 2, hw as usize));
    }
    let slope = (m[1].1 - m[0].1) / (m[1].0 - m[0].0);
    let intercept = m[0].1 - slope * m[0].0;
    assert_eq!((m[1].1 - m[0].1) % (m[1].0 - m[0].0), 0);
    assert_eq!(m[2].1, intercept + slope * m[2].0);
}

fn count(variant: VariantKind, base: &ReconConfig) -> usize {
    EamriModel::new(&ReconConfig {
        variant,
        ..base.clone()
    })
    .unwrap()
    .parameter_count()
}

#[test]
fn variant_parameter_counts_are_ordered() {
    for base in [ReconConfig::desk(), ReconConfig::default(), ReconConfig::toy()] {
        let [full, m1, m2, m3] = VariantKind::ALL.map(|v| count(v, &base));
        assert!(m1 < m2 && m2 < m3 && m3 < full, "{m1} {m2} {m3} {full}");
    }
}

#[test]
fn variant_structure_audit() {
    let base = ReconConfig::toy();
    let model = |v| {
        EamriModel::new(&ReconConfig {
            variant: v,
            ..base.clone()
        })
        .unwrap()
    };
    let names = |m: &EamriModel| m.store().iter().map(|(_, p)| p.name.clone()).collect::<Vec<_>>();

    let m3 = model(VariantKind::M3);
    let alphas: Vec<_> = names(&m3).into_iter().filter(|n| n.ends_with(".alpha")).collect();
    assert_eq!(alphas, ["eam.alpha"]);

    let full = model(VariantKind::Full);
    let alphas = names(&full).into_iter().filter(|n| n.ends_with(".alpha")).count();
    assert_eq!(alphas, base.cascades);

    let m1 = model(VariantKind::M1);
    assert!(names(&m1).iter().all(|n| !n.starts_with("epn") && !n.contains("eam")));
    // the de-aliasing cascades are identical across variants
    for m in [&full, &m3] {
        assert_eq!(
            m.store().scalar_count_with_prefix("cascade0.rdcn"),
            m1.store().scalar_count_with_prefix("cascade0.rdcn")
        );
    }
}

#[test]
fn forward_shapes_and_edge_calls() {
    let base = ReconConfig::toy();
    let sample = build_dataset(&DatasetSpec::from_config(&base, 1)).unwrap().remove(0);
    for v in VariantKind::ALL {
        let model = EamriModel::new(&ReconConfig {
            variant: v,
            ..base.clone()
        })
        .unwrap();
        let mut t = Trace::new();
        let y = t.constant(sample.y.clone().into_interleaved());
        let out = model.forward(&mut t, y, &sample.mask).unwrap();
        assert_eq!(t.shape(out.image), &[8, 8, 2]);
        let expected = if v == VariantKind::M1 { 0 } else { base.cascades };
        assert_eq!(out.edge_calls, expected, "{v:?}");
        assert_eq!(out.edges.len(), expected);
        for e in &out.edges {
            assert_eq!(t.shape(*e), &[8, 8]);
        }
        let attention = matches!(v, VariantKind::Full | VariantKind::M3) as usize * base.cascades;
        assert_eq!(out.attention.len(), attention);
    }
}

#[test]
fn single_coil_output_is_data_consistent() {
    let cfg = ReconConfig {
        coils: 1,
        ..ReconConfig::toy()
    };
    let sample = build_dataset(&DatasetSpec::from_config(&cfg, 1)).unwrap().remove(0);
    let mut model = EamriModel::new(&cfg).unwrap();
    eamri::harness::gradcheck::randomize_parameters(model.store_mut(), 3).unwrap();
    let r = model.reconstruct(&sample.y, &sample.mask).unwrap();
    let residual = sampled_residual(&r.image, &sample.y, &sample.mask, &r.maps).unwrap();
    assert!(residual < 1e-10, "{residual}");
}

#[test]
fn construction_and_reconstruction_are_deterministic() {
    let cfg = ReconConfig::toy();
    let sample = build_dataset(&DatasetSpec::from_config(&cfg, 1)).unwrap().remove(0);
    let a = EamriModel::new(&cfg).unwrap();
    let b = EamriModel::new(&cfg).unwrap();
    assert_eq!(a.store(), b.store());
    let ra = a.reconstruct(&sample.y, &sample.mask).unwrap();
    let rb = b.reconstruct(&sample.y, &sample.mask).unwrap();
    assert_eq!(ra.image, rb.image);
    assert_eq!(ra.edges, rb.edges);
    let c = EamriModel::new(&ReconConfig { seed: 1, ..cfg }).unwrap();
    assert_ne!(a.store(), c.store());
}

#[test]
fn invalid_configurations_are_rejected() {
    let bad = ReconConfig {
        heads: 3,
        ..ReconConfig::toy()
    };
    assert!(EamriModel::new(&bad).is_err());
    let model = EamriModel::new(&ReconConfig::toy()).unwrap();
    let y = ComplexTensor::zeros(vec![2, 8, 8]);
    assert!(model.reconstruct(&y, &SamplingMask::cartesian(16, 4, 0.08, 0).unwrap()).is_err());
}
