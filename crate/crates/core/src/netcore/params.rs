use std::collections::HashMap;
use std::ops::{Deref, DerefMut};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::tape::{Mat, Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(usize);

/// Named parameter tensors in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Mat>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Mat) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter `{name}`");
        self.index.insert(name.clone(), self.values.len());
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// Normal init with standard deviation `std`.
    pub fn add_normal<R: Rng>(&mut self, name: impl Into<String>, shape: (usize, usize), std: f64, rng: &mut R) -> ParamId {
        let m = Mat::from_shape_simple_fn(shape, || {
            let z: f64 = StandardNormal.sample(rng);
            z * std
        });
        self.add(name, m)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.values[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut Mat> {
        self.values.iter_mut()
    }

    pub fn map_inplace(&mut self, f: impl Fn(f64) -> f64) {
        for v in &mut self.values {
            v.mapv_inplace(&f);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.iter().all(|x| x.is_finite()))
    }

    /// Copies values from `other` by name; every name here must exist there with the same shape.
    pub fn load_from(&mut self, other: &TensorFile) -> Result<()> {
        let by_name: HashMap<&str, &TensorRecord> = other.tensors.iter().map(|t| (t.name.as_str(), t)).collect();
        for (name, value) in self.names.iter().zip(self.values.iter_mut()) {
            let rec = by_name.get(name.as_str()).ok_or_else(|| Error::schema(format!("tensors.{name}"), "missing tensor"))?;
            if rec.shape != [value.nrows(), value.ncols()] {
                return Err(Error::schema(format!("tensors.{name}.shape"), format!("expected {:?}, found {:?}", value.dim(), rec.shape)));
            }
            if rec.data.len() != value.len() {
                return Err(Error::schema(format!("tensors.{name}.data"), "length does not match shape"));
            }
            *value = Mat::from_shape_vec((rec.shape[0], rec.shape[1]), rec.data.clone()).map_err(|e| Error::Shape(e.to_string()))?;
        }
        Ok(())
    }

    pub fn to_records(&self, prefix: &str) -> Vec<TensorRecord> {
        self.names
            .iter()
            .zip(&self.values)
            .map(|(n, v)| TensorRecord { name: format!("{prefix}{n}"), shape: [v.nrows(), v.ncols()], data: v.iter().copied().collect() })
            .collect()
    }
}

/// One tensor of a checkpoint: name, `[rows, cols]` header, row-major data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

/// Checkpoint file: a JSON config blob plus named tensors in a fixed order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorFile {
    pub format: String,
    pub version: u32,
    #[serde(default)]
    pub config: serde_json::Value,
    pub tensors: Vec<TensorRecord>,
}

pub const CHECKPOINT_FORMAT: &str = "artigen-tensors";

impl TensorFile {
    pub fn new(config: serde_json::Value, tensors: Vec<TensorRecord>) -> Self {
        Self { format: CHECKPOINT_FORMAT.into(), version: 1, config, tensors }
    }

    /// Tensors whose names start with `prefix`, with the prefix removed.
    pub fn scoped(&self, prefix: &str) -> TensorFile {
        TensorFile {
            format: self.format.clone(),
            version: self.version,
            config: self.config.get(prefix.trim_end_matches('.')).cloned().unwrap_or_default(),
            tensors: self
                .tensors
                .iter()
                .filter_map(|t| t.name.strip_prefix(prefix).map(|n| TensorRecord { name: n.to_string(), ..t.clone() }))
                .collect(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        crate::interop::write_atomic(path, text.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f: TensorFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if f.format != CHECKPOINT_FORMAT {
            return Err(Error::schema("format", format!("expected `{CHECKPOINT_FORMAT}`")));
        }
        if let Some(t) = f.tensors.iter().find(|t| t.data.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite(format!("tensor `{}`", t.name)));
        }
        Ok(f)
    }
}

/// A tape bound to a parameter store; each parameter becomes a leaf on first use.
pub struct Graph<'p> {
    pub tape: Tape,
    store: &'p ParamStore,
    bound: Vec<Option<Var>>,
}

impl<'p> Graph<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Self { tape: Tape::new(), store, bound: vec![None; store.len()] }
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let v = self.tape.leaf(self.store.get(id).clone());
        self.bound[id.0] = Some(v);
        v
    }

    pub fn constant(&mut self, m: Mat) -> Var {
        self.tape.leaf(m)
    }

    /// Gradients of `loss` for every parameter, aligned with the store. Unused parameters get zeros.
    pub fn param_grads(&self, loss: Var) -> Vec<Mat> {
        self.param_grads_with(loss, &[]).0
    }

    /// Like [`Graph::param_grads`], also returning gradients of extra leaves (zeros if unused).
    pub fn param_grads_with(&self, loss: Var, extra: &[Var]) -> (Vec<Mat>, Vec<Mat>) {
        let mut g = self.tape.backward(loss);
        let others = extra.iter().map(|&v| g.take(v).unwrap_or_else(|| Mat::zeros(self.tape.value(v).raw_dim()))).collect();
        let own = self
            .store
            .ids()
            .map(|id| self.bound[id.0].and_then(|v| g.take(v)).unwrap_or_else(|| Mat::zeros(self.store.get(id).raw_dim())))
            .collect();
        (own, others)
    }
}

impl Deref for Graph<'_> {
    type Target = Tape;

    fn deref(&self) -> &Tape {
        &self.tape
    }
}

impl DerefMut for Graph<'_> {
    fn deref_mut(&mut self) -> &mut Tape {
        &mut self.tape
    }
}
