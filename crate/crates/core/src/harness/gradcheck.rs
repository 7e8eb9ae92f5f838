//! Central finite-difference checks of traced gradients.
//!
//! Checks compare the analytic directional derivative `<∇f, d>` from
//! [`Trace::backward`] against `(f(x + h d) - f(x - h d)) / 2h` for a random
//! direction `d`, so one check costs two extra forward passes regardless of
//! input size. [`coordinate_check`] does the same per scalar for small inputs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::recon::EamriModel;
use crate::tensor::{ParamStore, RealTensor, Trace, Var};
use crate::training::{edge_loss, image_loss, total_loss};

use super::{build_dataset, DatasetSpec, ReconConfig, VariantKind};

/// Outcome of one finite-difference comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
    pub tol: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.rel_err < self.tol
    }
}

/// `|a - n| / max(|a|, |n|, 1e-12)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(1e-12);
    (analytic - numeric).abs() / scale
}

fn eval_scalar<F>(f: &F, inputs: &[RealTensor]) -> Result<f64>
where
    F: Fn(&mut Trace, &[Var]) -> Result<Var>,
{
    let mut t = Trace::new();
    let vars: Vec<Var> = inputs.iter().map(|x| t.input(x.clone())).collect();
    let out = f(&mut t, &vars)?;
    scalar_of(&t, out)
}

fn scalar_of(t: &Trace, v: Var) -> Result<f64> {
    let value = t.value(v);
    if value.len() != 1 {
        return Err(Error::arg(format!(
            "gradient check needs a scalar output, got {:?}",
            value.shape()
        )));
    }
    Ok(value.data()[0])
}

/// Gradients of `f` at `inputs`, one tensor per input.
pub fn analytic_gradients<F>(f: &F, inputs: &[RealTensor]) -> Result<(f64, Vec<RealTensor>)>
where
    F: Fn(&mut Trace, &[Var]) -> Result<Var>,
{
    let mut t = Trace::new();
    let vars: Vec<Var> = inputs.iter().map(|x| t.input(x.clone())).collect();
    let out = f(&mut t, &vars)?;
    let value = scalar_of(&t, out)?;
    let grads = t.backward(out)?;
    let g = vars
        .iter()
        .zip(inputs)
        .map(|(&v, x)| {
            grads
                .get(v)
                .unwrap_or_else(|| RealTensor::zeros(x.shape().to_vec()))
        })
        .collect();
    Ok((value, g))
}

fn shifted(inputs: &[RealTensor], dirs: &[RealTensor], h: f64) -> Vec<RealTensor> {
    inputs
        .iter()
        .zip(dirs)
        .map(|(x, d)| {
            let data = x
                .data()
                .iter()
                .zip(d.data())
                .map(|(a, b)| a + h * b)
                .collect();
            RealTensor::new(x.shape().to_vec(), data).expect("same shape")
        })
        .collect()
}

/// Random-direction check of a scalar function of several inputs.
pub fn directional_check<F>(
    name: &str,
    f: F,
    inputs: &[RealTensor],
    h: f64,
    tol: f64,
    seed: u64,
) -> Result<CheckResult>
where
    F: Fn(&mut Trace, &[Var]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dirs: Vec<RealTensor> = inputs
        .iter()
        .map(|x| RealTensor::uniform(x.shape().to_vec(), -1.0, 1.0, &mut rng))
        .collect();
    let (_, grads) = analytic_gradients(&f, inputs)?;
    let analytic: f64 = grads
        .iter()
        .zip(&dirs)
        .map(|(g, d)| g.data().iter().zip(d.data()).map(|(a, b)| a * b).sum::<f64>())
        .sum();
    let plus = eval_scalar(&f, &shifted(inputs, &dirs, h))?;
    let minus = eval_scalar(&f, &shifted(inputs, &dirs, -h))?;
    let numeric = (plus - minus) / (2.0 * h);
    Ok(CheckResult {
        name: name.to_string(),
        analytic,
        numeric,
        rel_err: relative_error(analytic, numeric),
        tol,
    })
}

/// Per-scalar check over every entry of every input; reports the worst entry.
pub fn coordinate_check<F>(name: &str, f: F, inputs: &[RealTensor], h: f64, tol: f64) -> Result<CheckResult>
where
    F: Fn(&mut Trace, &[Var]) -> Result<Var>,
{
    let (_, grads) = analytic_gradients(&f, inputs)?;
    let mut worst = CheckResult {
        name: name.to_string(),
        analytic: 0.0,
        numeric: 0.0,
        rel_err: 0.0,
        tol,
    };
    for (i, x) in inputs.iter().enumerate() {
        for j in 0..x.len() {
            let mut probe = inputs.to_vec();
            probe[i].data_mut()[j] = x.data()[j] + h;
            let plus = eval_scalar(&f, &probe)?;
            probe[i].data_mut()[j] = x.data()[j] - h;
            let minus = eval_scalar(&f, &probe)?;
            let numeric = (plus - minus) / (2.0 * h);
            let analytic = grads[i].data()[j];
            let rel = relative_error(analytic, numeric);
            if rel > worst.rel_err {
                worst.analytic = analytic;
                worst.numeric = numeric;
                worst.rel_err = rel;
            }
        }
    }
    Ok(worst)
}

/// Wraps a tensor-valued op into a scalar `sum(out ⊙ weights)` with fixed
/// random weights, so every output entry contributes to the check.
pub fn weighted_sum(t: &mut Trace, out: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = RealTensor::uniform(t.shape(out).to_vec(), -1.0, 1.0, &mut rng);
    let wv = t.constant(w);
    let prod = t.mul(out, wv)?;
    Ok(t.sum(prod))
}

/// Random-direction check of `loss` with respect to each parameter tensor
/// of `store` separately.
pub fn param_checks<F>(
    prefix: &str,
    store: &ParamStore,
    loss: F,
    h: f64,
    tol: f64,
    seed: u64,
) -> Result<Vec<CheckResult>>
where
    F: Fn(&ParamStore, &mut Trace) -> Result<Var>,
{
    let mut t = Trace::new();
    let out = loss(store, &mut t)?;
    scalar_of(&t, out)?;
    let grads = t.backward(out)?;
    let mut by_id = vec![None; store.len()];
    for (id, g) in grads.param_grads() {
        by_id[id.index()] = Some(g);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut results = Vec::with_capacity(store.len());
    let mut probe = store.clone();
    for (id, p) in store.iter() {
        let dir = RealTensor::uniform(p.value.shape().to_vec(), -1.0, 1.0, &mut rng);
        let analytic = by_id[id.index()]
            .as_ref()
            .map(|g| g.data().iter().zip(dir.data()).map(|(a, b)| a * b).sum())
            .unwrap_or(0.0);
        let mut eval_at = |sign: f64| -> Result<f64> {
            let data = p
                .value
                .data()
                .iter()
                .zip(dir.data())
                .map(|(v, d)| v + sign * h * d)
                .collect();
            probe.set_value(id, RealTensor::new(p.value.shape().to_vec(), data)?)?;
            let mut t = Trace::new();
            let out = loss(&probe, &mut t)?;
            scalar_of(&t, out)
        };
        let plus = eval_at(1.0)?;
        let minus = eval_at(-1.0)?;
        probe.set_value(id, p.value.clone())?;
        let numeric = (plus - minus) / (2.0 * h);
        results.push(CheckResult {
            name: format!("{prefix}{}", p.name),
            analytic,
            numeric,
            rel_err: relative_error(analytic, numeric),
            tol,
        });
    }
    Ok(results)
}

/// Directional checks of every differentiable trace operation on random
/// inputs, three directions each.
pub fn op_checks(seed: u64, h: f64, tol: f64) -> Result<Vec<CheckResult>> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut check_dir = |name: &str, f: &dyn Fn(&mut Trace, &[Var]) -> Result<Var>, inputs: &[RealTensor]| -> Result<()> {
        for k in 0..3 {
            out.push(directional_check(name, f, inputs, h, tol, seed.wrapping_add(100 + k))?);
        }
        Ok(())
    };
    let x = RealTensor::uniform(vec![2, 4, 5, 6], -1.0, 1.0, &mut r);
    let w = RealTensor::uniform(vec![6, 2, 3, 3], -1.0, 1.0, &mut r);
    let b = RealTensor::uniform(vec![6], -1.0, 1.0, &mut r);
    check_dir(
        "conv2d",
        &|t, v| {
            let o = t.conv2d(v[0], v[1], Some(v[2]), 2, 2)?;
            weighted_sum(t, o, 1)
        },
        &[x.clone(), w, b],
    )?;
    let wd = RealTensor::uniform(vec![4, 1, 3, 3], -1.0, 1.0, &mut r);
    check_dir(
        "depthwise",
        &|t, v| {
            let o = t.conv2d(v[0], v[1], None, 1, 4)?;
            weighted_sum(t, o, 2)
        },
        &[x.clone(), wd],
    )?;
    let y = RealTensor::uniform(vec![2, 4, 5, 6], -1.0, 1.0, &mut r);
    check_dir(
        "add_sub_mul_scale",
        &|t, v| {
            let a = t.add(v[0], v[1])?;
            let s = t.sub(a, v[1])?;
            let m = t.mul(s, v[1])?;
            let sc = t.scale(m, -1.7);
            weighted_sum(t, sc, 3)
        },
        &[x.clone(), y.clone()],
    )?;
    check_dir(
        "relu_sigmoid",
        &|t, v| {
            let a = t.relu(v[0]);
            let s = t.sigmoid(a);
            weighted_sum(t, s, 4)
        },
        std::slice::from_ref(&x),
    )?;
    check_dir(
        "concat_reshape",
        &|t, v| {
            let c = t.concat_channels(&[v[0], v[1], v[0]])?;
            let rs = t.reshape(c, &[2, 12, 30])?;
            weighted_sum(t, rs, 5)
        },
        &[x.clone(), y.clone()],
    )?;
    let a = RealTensor::uniform(vec![3, 4, 5], -1.0, 1.0, &mut r);
    let bm = RealTensor::uniform(vec![3, 5, 2], -1.0, 1.0, &mut r);
    let bt = RealTensor::uniform(vec![3, 2, 5], -1.0, 1.0, &mut r);
    check_dir(
        "bmm",
        &|t, v| {
            let c = t.bmm(v[0], v[1], false)?;
            let d = t.bmm(v[0], v[2], true)?;
            let s = t.add(c, d)?;
            weighted_sum(t, s, 6)
        },
        &[a.clone(), bm, bt],
    )?;
    let alpha = RealTensor::uniform(vec![3], 0.5, 2.0, &mut r);
    check_dir(
        "softmax_div_leading",
        &|t, v| {
            let d = t.div_leading(v[0], v[1])?;
            let s = t.softmax_last(d)?;
            weighted_sum(t, s, 7)
        },
        &[a, alpha],
    )?;
    let z = RealTensor::uniform(vec![3, 4, 8, 2], -1.0, 1.0, &mut r);
    check_dir(
        "complex_layout_magnitude",
        &|t, v| {
            let ch = t.to_channels(v[0])?;
            let back = t.to_complex(ch)?;
            let m = t.magnitude(back)?;
            let s = weighted_sum(t, m, 8)?;
            let c2 = weighted_sum(t, ch, 9)?;
            t.add(s, c2)
        },
        std::slice::from_ref(&z),
    )?;
    check_dir(
        "fft2c_ifft2c",
        &|t, v| {
            let k = t.fft2c(v[0])?;
            let a = weighted_sum(t, k, 10)?;
            let x = t.ifft2c(v[0])?;
            let b = weighted_sum(t, x, 11)?;
            t.add(a, b)
        },
        std::slice::from_ref(&z),
    )?;
    let maps = RealTensor::uniform(vec![3, 4, 8, 2], -1.0, 1.0, &mut r);
    let img = RealTensor::uniform(vec![4, 8, 2], -1.0, 1.0, &mut r);
    check_dir(
        "expand_reduce",
        &|t, v| {
            let e = t.expand(v[0], v[1])?;
            let a = weighted_sum(t, e, 12)?;
            let red = t.reduce(v[0], v[2])?;
            let b = weighted_sum(t, red, 13)?;
            t.add(a, b)
        },
        &[maps.clone(), img, z.clone()],
    )?;
    let mask = vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 0.0];
    check_dir(
        "masked_replace",
        &|t, v| {
            let m = t.masked_replace(v[0], &mask, v[1])?;
            weighted_sum(t, m, 14)
        },
        &[z.clone(), maps.clone()],
    )?;
    let pos = RealTensor::uniform(vec![4, 8], 0.5, 1.5, &mut r);
    check_dir(
        "rss_clamp_div_real_normalize",
        &|t, v| {
            let rs = t.rss(v[0])?;
            let c = t.clamp_min(rs, 1e-8);
            let q = t.div_real(v[0], c)?;
            let q2 = t.div_real(q, v[1])?;
            let n = t.normalize_coils(q2)?;
            weighted_sum(t, n, 15)
        },
        &[maps, pos],
    )?;
    check_dir(
        "l1_mean_mean",
        &|t, v| {
            let l = t.l1_mean(v[0], v[1])?;
            let m = t.mean(v[0]);
            t.add(l, m)
        },
        &[x, y],
    )?;
    Ok(out)
}

/// Replaces every parameter with a random value so that no branch sits at
/// its zero initialisation: convolution weights uniform in `±1/sqrt(fan_in)`,
/// biases in `±0.1`, attention temperatures in `[0.5, 1.5]`.
pub fn randomize_parameters(store: &mut ParamStore, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    for id in ids {
        let p = store.get(id);
        let shape = p.value.shape().to_vec();
        let value = if p.name.ends_with(".alpha") {
            RealTensor::uniform(shape, 0.5, 1.5, &mut rng)
        } else if shape.len() == 4 {
            let bound = 1.0 / ((shape[1] * shape[2] * shape[3]) as f64).sqrt();
            RealTensor::uniform(shape, -bound, bound, &mut rng)
        } else {
            RealTensor::uniform(shape, -0.1, 0.1, &mut rng)
        };
        store.set_value(id, value)?;
    }
    Ok(())
}

/// Per-parameter-tensor checks of the full training loss of the model
/// built from `config`, on one simulated sample, after
/// [`randomize_parameters`].
pub fn model_checks(config: &ReconConfig, seed: u64, h: f64, tol: f64) -> Result<Vec<CheckResult>> {
    let mut model = EamriModel::new(config)?;
    randomize_parameters(model.store_mut(), seed)?;
    let spec = DatasetSpec {
        seed,
        ..DatasetSpec::from_config(config, 1)
    };
    let sample = build_dataset(&spec)?.remove(0);
    let gt_mag = sample.x_gt.abs();
    let loss = |store: &ParamStore, t: &mut Trace| -> Result<Var> {
        let y = t.constant(sample.y.clone().into_interleaved());
        let out = model.forward_with(t, store, y, &sample.mask)?;
        let li = image_loss(t, out.image, &gt_mag)?;
        let le = edge_loss(t, &out.edges, &sample.edge_gt)?;
        total_loss(t, li, le, config.beta)
    };
    let prefix = format!("{}/", config.variant.name());
    param_checks(&prefix, model.store(), loss, h, tol, seed)
}

/// Finite-difference step used by the suite.
pub const SUITE_STEP: f64 = 1e-5;
/// Tolerance for single operations.
pub const OP_TOLERANCE: f64 = 1e-5;
/// Tolerance for the assembled model.
pub const MODEL_TOLERANCE: f64 = 1e-4;

/// Every operation check plus the model check of each variant at toy size.
pub fn run_suite(seed: u64) -> Result<Vec<CheckResult>> {
    let mut out = op_checks(seed, SUITE_STEP, OP_TOLERANCE)?;
    for variant in VariantKind::ALL {
        let config = ReconConfig {
            variant,
            seed,
            ..ReconConfig::toy()
        };
        out.extend(model_checks(&config, seed, SUITE_STEP, MODEL_TOLERANCE)?);
    }
    Ok(out)
}
