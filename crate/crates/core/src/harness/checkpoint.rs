use std::path::Path;

use crate::error::{Error, Result};
use crate::recon::EamriModel;
use crate::training::{AdamConfig, AdamState, Trainer};

use super::container::Container;
use super::ReconConfig;

/// Parameters, Adam moments and the step counter, with the producing config.
pub fn checkpoint_container(model: &EamriModel, adam: &AdamState) -> Result<Container> {
    let mut c = Container::new("checkpoint");
    c.config = serde_json::to_value(model.config()).expect("config serializes");
    c.meta = serde_json::json!({ "step": adam.step, "adam": adam.config });
    for (_, p) in model.store().iter() {
        c.insert_real(format!("param.{}", p.name), &p.value)?;
    }
    for ((_, p), (m, v)) in model.store().iter().zip(adam.m.iter().zip(&adam.v)) {
        c.insert_real(format!("adam.m.{}", p.name), m)?;
        c.insert_real(format!("adam.v.{}", p.name), v)?;
    }
    Ok(c)
}

pub fn model_from_container(c: &Container) -> Result<(EamriModel, AdamState)> {
    c.expect_kind("checkpoint")?;
    let config: ReconConfig =
        serde_json::from_value(c.config.clone()).map_err(|e| Error::format("config", e.to_string()))?;
    config.validate().map_err(|e| Error::format("config", e.to_string()))?;
    let mut model = EamriModel::new(&config)?;
    let ids: Vec<_> = model.store().iter().map(|(id, p)| (id, p.name.clone())).collect();
    let (mut m, mut v) = (Vec::new(), Vec::new());
    for (id, name) in &ids {
        let field = format!("param.{name}");
        let value = c.real(&field)?;
        if value.shape() != model.store().get(*id).value.shape() {
            return Err(Error::format(field, format!("shape {:?} does not match the config", value.shape())));
        }
        model.store_mut().set_value(*id, value)?;
        m.push(c.real(&format!("adam.m.{name}"))?);
        v.push(c.real(&format!("adam.v.{name}"))?);
    }
    let expected = 3 * ids.len();
    if c.len() != expected {
        return Err(Error::format("tensors", format!("{} tensors, expected {expected}", c.len())));
    }
    let step = c.meta.get("step").and_then(|s| s.as_u64()).ok_or_else(|| Error::format("step", "missing step counter"))?;
    let adam_cfg: AdamConfig = c
        .meta
        .get("adam")
        .cloned()
        .map(serde_json::from_value)
        .transpose()
        .map_err(|e| Error::format("adam", e.to_string()))?
        .ok_or_else(|| Error::format("adam", "missing optimiser settings"))?;
    let adam = AdamState::from_parts(model.store(), adam_cfg, m, v, step).map_err(|e| Error::format("adam", e.to_string()))?;
    Ok((model, adam))
}

pub fn save_checkpoint(path: &Path, trainer: &Trainer) -> Result<()> {
    checkpoint_container(&trainer.model, &trainer.adam)?.write(path)
}

pub fn load_checkpoint(path: &Path) -> Result<(EamriModel, AdamState)> {
    model_from_container(&Container::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_everything() {
        let model = EamriModel::new(&ReconConfig::toy()).unwrap();
        let adam = AdamState::new(model.store(), AdamConfig::default());
        let c = checkpoint_container(&model, &adam).unwrap();
        let (m2, a2) = model_from_container(&Container::from_bytes(&c.to_bytes()).unwrap()).unwrap();
        assert_eq!(a2, adam);
        assert_eq!(checkpoint_container(&m2, &a2).unwrap().to_bytes(), c.to_bytes());
    }

    #[test]
    fn missing_parameter_names_the_field() {
        let model = EamriModel::new(&ReconConfig::toy()).unwrap();
        let adam = AdamState::new(model.store(), AdamConfig::default());
        let full = checkpoint_container(&model, &adam).unwrap();
        let mut c = Container::new("checkpoint");
        c.config = full.config.clone();
        c.meta = full.meta.clone();
        match model_from_container(&c) {
            Err(Error::Format { field, .. }) => assert!(field.starts_with("param.")),
            other => panic!("{other:?}"),
        }
    }
}
