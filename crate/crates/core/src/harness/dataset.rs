use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::edge::{canny_edges, sobel_edges};
use crate::error::{Error, Result};
use crate::mri::{forward_model, KSpaceSample, SamplingMask};
use crate::tensor::RealTensor;

use super::container::Container;
use super::{generate_phantom, simulate_coil_maps, EdgeOperator, PhantomSpec, ReconConfig};

/// Hysteresis thresholds used when Canny supplies the ground-truth edges.
pub const CANNY_THRESHOLDS: (f64, f64) = (0.1, 0.3);

/// Recipe for a synthetic dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub samples: usize,
    pub size: usize,
    pub coils: usize,
    pub af: usize,
    pub center_fraction: f64,
    pub ellipses: usize,
    pub noise_sigma: f64,
    pub edge_op: EdgeOperator,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn from_config(config: &ReconConfig, samples: usize) -> Self {
        Self {
            samples,
            size: config.image_size,
            coils: config.coils,
            af: config.af,
            center_fraction: config.center_fraction,
            ellipses: PhantomSpec::default().ellipses,
            noise_sigma: config.noise_sigma,
            edge_op: config.edge_op,
            seed: config.seed,
        }
    }
}

/// Independent sub-seed for `(seed, index, stream)`.
fn derive_seed(seed: u64, index: usize, stream: u64) -> u64 {
    let mut z = seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ stream.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Ground-truth edge map of a magnitude image.
pub fn ground_truth_edges(magnitude: &RealTensor, op: EdgeOperator) -> Result<RealTensor> {
    match op {
        EdgeOperator::Sobel => sobel_edges(magnitude),
        EdgeOperator::Canny => canny_edges(magnitude, CANNY_THRESHOLDS.0, CANNY_THRESHOLDS.1),
    }
}

fn build_sample(spec: &DatasetSpec, i: usize) -> Result<KSpaceSample> {
    let x = generate_phantom(&PhantomSpec {
        size: spec.size,
        ellipses: spec.ellipses,
        seed: derive_seed(spec.seed, i, 1),
        ..PhantomSpec::default()
    })?;
    let maps = simulate_coil_maps(spec.coils, spec.size, spec.size, derive_seed(spec.seed, i, 2))?;
    let mask = SamplingMask::cartesian(spec.size, spec.af, spec.center_fraction, derive_seed(spec.seed, i, 3))?;
    let y = forward_model(&x, &maps, &mask, spec.noise_sigma, derive_seed(spec.seed, i, 4))?;
    let edge_gt = ground_truth_edges(&x.abs(), spec.edge_op)?;
    Ok(KSpaceSample {
        y,
        mask,
        x_gt: x,
        edge_gt,
        coil_maps: Some(maps),
    })
}

/// Phantom → coil maps → mask → simulated k-space → edges, per sample.
pub fn build_dataset(spec: &DatasetSpec) -> Result<Vec<KSpaceSample>> {
    if spec.samples == 0 {
        return Err(Error::arg("a dataset needs at least one sample"));
    }
    (0..spec.samples).into_par_iter().map(|i| build_sample(spec, i)).collect()
}

pub fn dataset_container(spec: &DatasetSpec, samples: &[KSpaceSample]) -> Result<Container> {
    let mut c = Container::new("dataset");
    c.meta = serde_json::to_value(spec).expect("spec serializes");
    for (i, s) in samples.iter().enumerate() {
        let p = format!("sample{i}");
        c.insert_complex(format!("{p}.y"), &s.y)?;
        c.insert_real(format!("{p}.mask"), &RealTensor::new(vec![s.mask.width()], s.mask.weights())?)?;
        let acs = s.mask.acs_range();
        c.insert_real(format!("{p}.acs"), &RealTensor::new(vec![2], vec![acs.start as f64, acs.end as f64])?)?;
        c.insert_complex(format!("{p}.x_gt"), &s.x_gt)?;
        c.insert_real(format!("{p}.edge_gt"), &s.edge_gt)?;
        if let Some(maps) = &s.coil_maps {
            c.insert_complex(format!("{p}.maps"), maps.maps())?;
        }
    }
    Ok(c)
}

pub fn write_dataset(path: &Path, spec: &DatasetSpec, samples: &[KSpaceSample]) -> Result<()> {
    dataset_container(spec, samples)?.write(path)
}

fn read_sample(c: &Container, i: usize, spec: &DatasetSpec) -> Result<KSpaceSample> {
    let p = format!("sample{i}");
    let field = |n: &str| format!("{p}.{n}");
    let n = spec.size;
    let y = c.complex(&field("y"))?;
    if y.shape() != [spec.coils, n, n] {
        return Err(Error::format(field("y"), format!("shape {:?}, expected {:?}", y.shape(), [spec.coils, n, n])));
    }
    let weights = c.real(&field("mask"))?;
    if weights.shape() != [n] || weights.data().iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::format(field("mask"), "expected a 0/1 vector of image width"));
    }
    let acs = c.real(&field("acs"))?;
    let (a0, a1) = match acs.data() {
        &[a, b] if a >= 0.0 && b >= a && b <= n as f64 && a.fract() == 0.0 && b.fract() == 0.0 => (a as usize, b as usize),
        _ => return Err(Error::format(field("acs"), "expected [start, end] column indices")),
    };
    let columns: Vec<bool> = weights.data().iter().map(|&v| v == 1.0).collect();
    let mask = SamplingMask::from_parts(columns, a0..a1).map_err(|e| Error::format(field("acs"), e.to_string()))?;
    for k in 0..y.len() {
        if !mask.columns()[k % n] && y.get(k) != (0.0, 0.0) {
            return Err(Error::format(field("y"), "nonzero k-space outside the mask"));
        }
    }
    let x_gt = c.complex(&field("x_gt"))?;
    if x_gt.shape() != [n, n] {
        return Err(Error::format(field("x_gt"), format!("shape {:?}", x_gt.shape())));
    }
    let edge_gt = c.real(&field("edge_gt"))?;
    if edge_gt.shape() != [n, n] || edge_gt.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::format(field("edge_gt"), "expected an [H, W] map in [0, 1]"));
    }
    let coil_maps = if c.names().any(|s| s == field("maps")) {
        let maps = c.complex(&field("maps"))?;
        Some(crate::mri::CoilSensitivities::new(maps).map_err(|e| Error::format(field("maps"), e.to_string()))?)
    } else {
        None
    };
    Ok(KSpaceSample {
        y,
        mask,
        x_gt,
        edge_gt,
        coil_maps,
    })
}

pub fn dataset_from_container(c: &Container) -> Result<(DatasetSpec, Vec<KSpaceSample>)> {
    c.expect_kind("dataset")?;
    let spec: DatasetSpec =
        serde_json::from_value(c.meta.clone()).map_err(|e| Error::format("meta", e.to_string()))?;
    let samples = (0..spec.samples).map(|i| read_sample(c, i, &spec)).collect::<Result<Vec<_>>>()?;
    if samples.is_empty() {
        return Err(Error::format("meta", "dataset holds no samples"));
    }
    Ok((spec, samples))
}

pub fn read_dataset(path: &Path) -> Result<(DatasetSpec, Vec<KSpaceSample>)> {
    dataset_from_container(&Container::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> DatasetSpec {
        DatasetSpec {
            samples: 3,
            size: 8,
            coils: 2,
            af: 4,
            center_fraction: 0.2,
            ellipses: 4,
            noise_sigma: 0.0,
            edge_op: EdgeOperator::Sobel,
            seed: 1,
        }
    }

    #[test]
    fn container_round_trip_is_exact() {
        let s = spec();
        let data = build_dataset(&s).unwrap();
        let c = dataset_container(&s, &data).unwrap();
        let (s2, back) = dataset_from_container(&Container::from_bytes(&c.to_bytes()).unwrap()).unwrap();
        assert_eq!(s2, s);
        assert_eq!(back, data);
    }

    #[test]
    fn nonzero_off_mask_is_a_format_error() {
        let s = spec();
        let mut data = build_dataset(&s).unwrap();
        let off = (0..8).find(|&c| !data[1].mask.columns()[c]).unwrap();
        data[1].y.set(off, (1.0, 0.0));
        let c = dataset_container(&s, &data).unwrap();
        match dataset_from_container(&c) {
            Err(Error::Format { field, .. }) => assert_eq!(field, "sample1.y"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn wrong_kind_is_rejected() {
        assert!(dataset_from_container(&Container::new("checkpoint")).is_err());
    }

    #[test]
    fn empty_dataset_is_an_error() {
        assert!(build_dataset(&DatasetSpec { samples: 0, ..spec() }).is_err());
    }
}
