use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// A dense float32 array as stored in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Array {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Array {
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        Ok(Self {
            shape: t.dims().to_vec(),
            data: t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?,
        })
    }

    pub fn to_tensor(&self, dtype: DType) -> Result<Tensor> {
        Ok(
            Tensor::from_vec(self.data.clone(), self.shape.as_slice(), &Device::Cpu)?
                .to_dtype(dtype)?,
        )
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Normal(f64),
    Zeros,
    Ones,
}

/// Named trainable tensors, iterated in name order.
///
/// Cloning copies the underlying storage, so a clone can be trained without
/// touching the original.
#[derive(Debug)]
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    dtype: DType,
}

impl Clone for ParamStore {
    fn clone(&self) -> Self {
        let vars = self
            .vars
            .iter()
            .map(|(k, v)| {
                let t = v.as_tensor().copy().expect("cpu tensor copy");
                (k.clone(), Var::from_tensor(&t).expect("cpu var"))
            })
            .collect();
        Self {
            vars,
            dtype: self.dtype,
        }
    }
}

impl ParamStore {
    pub fn new(dtype: DType) -> Self {
        Self {
            vars: BTreeMap::new(),
            dtype,
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    /// Initializes `specs` in order from one seeded stream.
    pub fn init(specs: &[(String, Vec<usize>, Init)], seed: u64, dtype: DType) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = Self::new(dtype);
        for (name, shape, init) in specs {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = match *init {
                Init::Zeros => vec![0.0; n],
                Init::Ones => vec![1.0; n],
                Init::Normal(std) => {
                    let d =
                        Normal::new(0.0, std).map_err(|e| Error::InvalidInput(e.to_string()))?;
                    (0..n).map(|_| d.sample(&mut rng)).collect()
                }
            };
            let t = Tensor::from_vec(data, shape.as_slice(), &Device::Cpu)?.to_dtype(dtype)?;
            store.insert(name, t)?;
        }
        Ok(store)
    }

    /// A deep copy converted to `dtype`.
    pub fn to_dtype(&self, dtype: DType) -> Result<Self> {
        let mut store = Self::new(dtype);
        for (k, v) in &self.vars {
            store.insert(k, v.as_tensor().to_dtype(dtype)?.copy()?)?;
        }
        Ok(store)
    }

    pub fn insert(&mut self, name: &str, t: Tensor) -> Result<()> {
        let t = t.to_dtype(self.dtype)?;
        self.vars.insert(name.to_string(), Var::from_tensor(&t)?);
        Ok(())
    }

    pub fn remove(&mut self, name: &str) -> Option<Var> {
        self.vars.remove(name)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.vars
            .get(name)
            .map(Var::as_tensor)
            .ok_or_else(|| Error::InvalidInput(format!("missing parameter {name}")))
    }

    pub fn var(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.vars.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.vars.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    pub fn to_arrays(&self) -> Result<BTreeMap<String, Array>> {
        self.vars
            .iter()
            .map(|(k, v)| Ok((k.clone(), Array::from_tensor(v.as_tensor())?)))
            .collect()
    }

    pub fn from_arrays(arrays: &BTreeMap<String, Array>, dtype: DType) -> Result<Self> {
        let mut store = Self::new(dtype);
        for (name, a) in arrays {
            store.insert(name, a.to_tensor(dtype)?)?;
        }
        Ok(store)
    }

    /// Overwrites values in place from arrays with matching names and shapes.
    pub fn load_arrays(&self, arrays: &BTreeMap<String, Array>) -> Result<()> {
        for (name, a) in arrays {
            let var = self
                .vars
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown weight {name}")))?;
            if var.dims() != a.shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "shape mismatch for {name}: {:?} vs {:?}",
                    var.dims(),
                    a.shape
                )));
            }
            var.set(&a.to_tensor(self.dtype)?)?;
        }
        Ok(())
    }

    /// SHA-256 over name, shape and little-endian f32 values of the selected
    /// parameters.
    pub fn hash_where(&self, keep: impl Fn(&str) -> bool) -> Result<String> {
        let mut h = Sha256::new();
        for (name, v) in self.vars.iter().filter(|(k, _)| keep(k)) {
            let a = Array::from_tensor(v.as_tensor())?;
            h.update(name.as_bytes());
            for d in &a.shape {
                h.update((*d as u64).to_le_bytes());
            }
            for x in &a.data {
                h.update(x.to_le_bytes());
            }
        }
        Ok(hex::encode(h.finalize()))
    }

    pub fn hash(&self) -> Result<String> {
        self.hash_where(|_| true)
    }
}
