//! Checkpoints: model config, train config, schedule position, parameters
//! and AdamW moments. Payloads are f64 so a resumed run continues from
//! exactly the state it left.

use std::path::Path;

use gpc_core::matrix::Matrix;
use gpc_core::model::{Linear, ModelConfig, ModelParams, ParamSet};
use gpc_core::optim::OptimizerState;
use gpc_core::trainer::{TrainConfig, Trainer};

use crate::error::{Error, Result};
use crate::fsio;
use crate::keyvalue::{model_pairs, set_model, set_train, train_pairs};
use crate::tensor_file::{Tensor, TensorData, TensorFile};

fn push_set(out: &mut Vec<Tensor>, prefix: &str, names: &[String], set: &ParamSet) {
    for (name, layer) in names.iter().zip(&set.layers) {
        out.push(Tensor {
            name: format!("{prefix}{name}.weight"),
            shape: vec![layer.weight.rows(), layer.weight.cols()],
            data: TensorData::F64(layer.weight.as_slice().to_vec()),
        });
        out.push(Tensor {
            name: format!("{prefix}{name}.bias"),
            shape: vec![layer.bias.len()],
            data: TensorData::F64(layer.bias.clone()),
        });
    }
}

fn f64_tensor(file: &TensorFile, name: &str, shape: &[usize]) -> Result<Vec<f64>> {
    let t = file.tensor(name)?;
    if t.shape != shape {
        return Err(Error::format(format!("tensor '{name}' has shape {:?}, expected {shape:?}", t.shape)));
    }
    match &t.data {
        TensorData::F64(v) => Ok(v.clone()),
        TensorData::F32(_) => Err(Error::format(format!("tensor '{name}' is not f64"))),
    }
}

fn read_set(file: &TensorFile, prefix: &str, config: &ModelConfig) -> Result<ParamSet> {
    let mut layers = Vec::new();
    for (name, (fan_in, fan_out)) in config.layer_names().iter().zip(config.layer_shapes()) {
        let w = f64_tensor(file, &format!("{prefix}{name}.weight"), &[fan_out, fan_in])?;
        let b = f64_tensor(file, &format!("{prefix}{name}.bias"), &[fan_out])?;
        layers.push(Linear { weight: Matrix::from_vec(fan_out, fan_in, w)?, bias: b });
    }
    Ok(ParamSet { layers })
}

pub fn encode_checkpoint(trainer: &Trainer) -> Result<Vec<u8>> {
    let cfg = &trainer.params.config;
    let mut meta: Vec<(String, String)> = vec![("kind".into(), "checkpoint".into())];
    meta.extend(model_pairs(cfg).into_iter().map(|(k, v)| (format!("model.{k}"), v)));
    meta.extend(train_pairs(&trainer.config).into_iter().map(|(k, v)| (format!("train.{k}"), v)));
    meta.push(("epochs_done".into(), trainer.epochs_done.to_string()));
    meta.push(("optimizer_step".into(), trainer.optimizer.step.to_string()));
    let names = cfg.layer_names();
    let mut tensors = Vec::new();
    push_set(&mut tensors, "", &names, &trainer.params.weights);
    push_set(&mut tensors, "adam.m.", &names, &trainer.optimizer.first_moment);
    push_set(&mut tensors, "adam.v.", &names, &trainer.optimizer.second_moment);
    TensorFile { meta, tensors }.encode()
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Trainer> {
    let file = TensorFile::decode(bytes)?;
    if file.meta_value("kind") != Some("checkpoint") {
        return Err(Error::format("tensor file is not a checkpoint"));
    }
    let mut model = ModelConfig::new(1);
    let mut train = TrainConfig::default();
    let mut epochs_done = None;
    let mut step = None;
    for mut e in file.meta_entries() {
        let known = if let Some(k) = e.key.strip_prefix("model.") {
            e.key = k.to_string();
            set_model(&mut model, &e)?
        } else if let Some(k) = e.key.strip_prefix("train.") {
            e.key = k.to_string();
            set_train(&mut train, &e)?
        } else {
            match e.key.as_str() {
                "kind" => true,
                "epochs_done" => {
                    epochs_done = e.value.parse().ok();
                    epochs_done.is_some()
                }
                "optimizer_step" => {
                    step = e.value.parse().ok();
                    step.is_some()
                }
                _ => false,
            }
        };
        if !known {
            return Err(Error::format(format!("checkpoint metadata entry '{}' is not understood", e.key)));
        }
    }
    let (Some(epochs_done), Some(step)) = (epochs_done, step) else {
        return Err(Error::format("checkpoint lacks its schedule position"));
    };
    model.validate()?;
    let weights = read_set(&file, "", &model)?;
    let first_moment = read_set(&file, "adam.m.", &model)?;
    let second_moment = read_set(&file, "adam.v.", &model)?;
    let expected = 3 * 2 * model.layer_shapes().len();
    if file.tensors.len() != expected {
        return Err(Error::format(format!("checkpoint holds {} tensors, expected {expected}", file.tensors.len())));
    }
    let params = ModelParams::from_parts(model, weights)?;
    Ok(Trainer { params, optimizer: OptimizerState { first_moment, second_moment, step }, config: train, epochs_done })
}

pub fn save_checkpoint(path: &Path, trainer: &Trainer) -> Result<()> {
    fsio::write_atomic(path, &encode_checkpoint(trainer)?)
}

pub fn load_checkpoint(path: &Path) -> Result<Trainer> {
    decode_checkpoint(&fsio::read(path)?)
}

/// `N x (3 + D)` features as a single f32 tensor named `features`.
pub fn encode_features(features: &Matrix) -> Result<Vec<u8>> {
    TensorFile {
        meta: vec![("kind".into(), "features".into())],
        tensors: vec![Tensor {
            name: "features".into(),
            shape: vec![features.rows(), features.cols()],
            data: TensorData::F32(features.as_slice().iter().map(|&v| v as f32).collect()),
        }],
    }
    .encode()
}
