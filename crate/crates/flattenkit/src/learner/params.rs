//! Named parameter storage, initialization, and checkpoint IO.

use std::fs;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{read_tensor, write_tensor};
use crate::learner::net::Scalar;
use crate::learner::ConvNetSpec;
use crate::rng::{derive_seed, SplitMix64};

/// Ordered, named dense arrays for every weight and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<F> {
    entries: Vec<(String, ArrayD<F>)>,
}

impl<F: Scalar> ParamStore<F> {
    pub fn from_entries(entries: Vec<(String, ArrayD<F>)>) -> Self {
        ParamStore { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.entries[i].0
    }

    pub fn value(&self, i: usize) -> &ArrayD<F> {
        &self.entries[i].1
    }

    pub fn value_mut(&mut self, i: usize) -> &mut ArrayD<F> {
        &mut self.entries[i].1
    }

    pub fn by_name(&self, name: &str) -> Option<&ArrayD<F>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }

    pub fn iter(&self) -> impl Iterator<Item = &(String, ArrayD<F>)> {
        self.entries.iter()
    }

    /// Same names and shapes, all values zero. The gradient layout.
    pub fn zeros_like(&self) -> Self {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|(n, v)| (n.clone(), ArrayD::zeros(v.raw_dim())))
                .collect(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.entries.iter().map(|(_, v)| v.len()).sum()
    }

    /// Hard error on any NaN/Inf, naming the offending tensor.
    pub fn assert_finite(&self) -> Result<()> {
        for (name, v) in &self.entries {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("parameter {name}")));
            }
        }
        Ok(())
    }

    /// He-uniform initialization for a convnet: conv and head weights drawn
    /// from `U(-sqrt(6 / fan_in), +sqrt(6 / fan_in))`, biases zero. Each
    /// tensor draws from its own sub-seed so the layout is append-stable.
    pub fn init(spec: &ConvNetSpec, seed: u64) -> Result<ParamStore<F>> {
        spec.validate()?;
        let mut entries: Vec<(String, ArrayD<F>)> = Vec::new();
        let mut in_c = spec.input.0;
        for (i, &out_c) in spec.stages.iter().enumerate() {
            let fan_in = in_c * 9;
            entries.push((
                format!("conv{i}.weight"),
                he_uniform::<F>(
                    &[out_c, in_c, 3, 3],
                    fan_in,
                    derive_seed(seed, entries.len() as u64),
                ),
            ));
            entries.push((format!("conv{i}.bias"), ArrayD::zeros(IxDyn(&[out_c]))));
            in_c = out_c;
        }
        entries.push((
            "head.weight".to_string(),
            he_uniform::<F>(
                &[spec.n_classes, in_c],
                in_c,
                derive_seed(seed, entries.len() as u64),
            ),
        ));
        entries.push((
            "head.bias".to_string(),
            ArrayD::zeros(IxDyn(&[spec.n_classes])),
        ));
        Ok(ParamStore { entries })
    }
}

fn he_uniform<F: Scalar>(shape: &[usize], fan_in: usize, seed: u64) -> ArrayD<F> {
    let limit = (6.0 / fan_in as f64).sqrt();
    let mut rng = SplitMix64::new(seed);
    let count: usize = shape.iter().product();
    let values: Vec<F> = (0..count)
        .map(|_| F::from_f64(rng.uniform(-limit, limit)).unwrap())
        .collect();
    ArrayD::from_shape_vec(IxDyn(shape), values).unwrap()
}

impl ParamStore<f32> {
    /// Widened copy for the f64 gradient-check path.
    pub fn to_f64(&self) -> ParamStore<f64> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|(n, v)| (n.clone(), v.mapv(|x| x as f64)))
                .collect(),
        }
    }

    /// Saves one tensor file per parameter plus a `manifest.json` listing
    /// names and shapes, under `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let manifest = CheckpointManifest {
            params: self
                .entries
                .iter()
                .map(|(n, v)| ParamMeta {
                    name: n.clone(),
                    shape: v.shape().to_vec(),
                })
                .collect(),
        };
        fs::write(
            dir.join("manifest.json"),
            serde_json::to_string_pretty(&manifest)? + "\n",
        )?;
        for (name, value) in &self.entries {
            write_tensor(&dir.join(format!("{name}.fltn")), &value.view())?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<ParamStore<f32>> {
        let manifest: CheckpointManifest =
            serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)
                .map_err(|e| Error::BadCheckpoint(e.to_string()))?;
        let mut entries = Vec::with_capacity(manifest.params.len());
        for meta in &manifest.params {
            let tensor = read_tensor(&dir.join(format!("{}.fltn", meta.name)))?;
            if tensor.shape() != meta.shape.as_slice() {
                return Err(Error::BadCheckpoint(format!(
                    "parameter {} has shape {:?}, manifest says {:?}",
                    meta.name,
                    tensor.shape(),
                    meta.shape
                )));
            }
            entries.push((meta.name.clone(), tensor));
        }
        Ok(ParamStore { entries })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointManifest {
    params: Vec<ParamMeta>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ParamMeta {
    name: String,
    shape: Vec<usize>,
}
