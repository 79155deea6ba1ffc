//! Single-file checkpoints: parameters, Adam moments, schedule position and
//! the prototype bank, all as named tensors.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use super::Trainer;
use crate::csrl::Model;
use crate::numerics::snapshot::{load_params, read_tensors, write_tensors};
use crate::numerics::{NumericsError, ParamStore, Tensor};
use crate::plrb::PrototypeBank;
use crate::{Error, Result};

const PARAM: &str = "param/";
const FIRST: &str = "adam.m/";
const SECOND: &str = "adam.v/";
const STATE: &str = "state";
const BANK: &str = "bank.prototypes";
const BANK_VALID: &str = "bank.valid";
const BANK_EPOCH: &str = "bank.epoch";

fn missing(name: &str) -> NumericsError {
    NumericsError::Snapshot(format!("checkpoint lacks '{name}'"))
}

impl Trainer {
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let mut tensors: Vec<(String, Tensor)> = Vec::new();
        let (first, second) = self.adam.moments();
        for ((_, var), (m, v)) in self.store.iter().zip(first.iter().zip(second)) {
            tensors.push((format!("{PARAM}{}", var.name), var.value.clone()));
            tensors.push((format!("{FIRST}{}", var.name), m.clone()));
            tensors.push((format!("{SECOND}{}", var.name), v.clone()));
        }
        let state = [
            self.epoch,
            self.batch_index,
            self.step as usize,
            self.adam.step_count() as usize,
        ];
        tensors.push((STATE.into(), Tensor::vector(state.iter().map(|&x| x as f64).collect())?));
        if let Some(bank) = &self.bank {
            tensors.push((BANK.into(), bank.prototypes.clone()));
            let valid = bank.valid.iter().map(|&v| f64::from(u8::from(v))).collect();
            tensors.push((BANK_VALID.into(), Tensor::vector(valid)?));
            tensors.push((BANK_EPOCH.into(), Tensor::scalar(bank.built_at_epoch as f64)));
        }
        let mut out = BufWriter::new(File::create(path)?);
        write_tensors(&mut out, tensors.iter().map(|(n, t)| (n.as_str(), t)))?;
        out.flush()?;
        Ok(())
    }

    /// Restores the state saved by [`Trainer::save_checkpoint`] into a
    /// trainer built from the same configuration and seed. Logs from before
    /// the checkpoint are not restored.
    pub fn load_checkpoint(&mut self, path: &Path) -> Result<()> {
        let tensors = read_tensors(BufReader::new(File::open(path)?))?;
        let find = |name: &str| tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t);
        let with_prefix = |prefix: &str| -> Vec<(String, Tensor)> {
            tensors
                .iter()
                .filter_map(|(n, t)| n.strip_prefix(prefix).map(|n| (n.to_string(), t.clone())))
                .collect()
        };
        load_params(&mut self.store, &with_prefix(PARAM))?;
        let moments = |prefix: &str| -> Result<Vec<Tensor>, NumericsError> {
            let saved = with_prefix(prefix);
            self.store
                .iter()
                .map(|(_, var)| {
                    saved
                        .iter()
                        .find(|(n, _)| *n == var.name)
                        .map(|(_, t)| t.clone())
                        .ok_or_else(|| missing(&format!("{prefix}{}", var.name)))
                })
                .collect()
        };
        let (first, second) = (moments(FIRST)?, moments(SECOND)?);
        let state = find(STATE).ok_or_else(|| missing(STATE))?.data().to_vec();
        if state.len() != 4 {
            return Err(missing(STATE).into());
        }
        self.adam.restore(state[3] as u64, first, second)?;
        self.epoch = state[0] as usize;
        self.batch_index = state[1] as usize;
        self.step = state[2] as u64;
        self.bank = match (find(BANK), find(BANK_VALID), find(BANK_EPOCH)) {
            (Some(p), Some(valid), Some(epoch)) => {
                let shape = p.shape();
                if shape.len() != 3 || valid.len() != shape[0] {
                    return Err(missing(BANK).into());
                }
                Some(PrototypeBank {
                    categories: shape[0],
                    k: shape[1],
                    dim: shape[2],
                    prototypes: p.clone(),
                    valid: valid.data().iter().map(|&v| v != 0.0).collect(),
                    built_at_epoch: epoch.data()[0] as usize,
                })
            }
            _ => None,
        };
        self.order = None;
        self.log.clear();
        self.rebuilds.clear();
        self.epochs.clear();
        Ok(())
    }
}

/// The model parameters stored in a checkpoint, without optimizer or
/// schedule state.
pub fn load_model(path: &Path) -> Result<(Model, ParamStore)> {
    let tensors = read_tensors(BufReader::new(File::open(path)?))?;
    let mut store = ParamStore::new();
    for (name, tensor) in tensors {
        if let Some(name) = name.strip_prefix(PARAM) {
            store.add(name, tensor);
        }
    }
    let model = Model::attach(&store).ok_or_else(|| Error::Data(format!("{} holds no model", path.display())))?;
    Ok((model, store))
}
