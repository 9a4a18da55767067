use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to one learnable tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

/// Named collection of every learnable tensor of a model, in registration
/// order. Gradients live next to the values and are filled by
/// [`crate::tensor::Gradients::accumulate_into`].
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    grads: Vec<Option<Tensor>>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        let id = ParamId(self.values.len());
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        self.grads.push(None);
        id
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }

    pub fn set_grad(&mut self, id: ParamId, grad: Tensor) {
        assert_eq!(grad.shape(), self.values[id.0].shape(), "gradient shape for {}", self.names[id.0]);
        self.grads[id.0] = Some(grad);
    }

    pub(crate) fn add_grad(&mut self, id: ParamId, grad: &[f64]) {
        let slot = self.grads[id.0].get_or_insert_with(|| Tensor::zeros(self.values[id.0].shape()));
        for (g, d) in slot.data_mut().iter_mut().zip(grad) {
            *g += d;
        }
    }

    /// Sets every gradient to zeros of the parameter's shape.
    pub fn zero_grad(&mut self) {
        for (g, v) in self.grads.iter_mut().zip(&self.values) {
            *g = Some(Tensor::zeros(v.shape()));
        }
    }

    /// Rescales all gradients so their joint L2 norm is at most `max_norm`,
    /// returning the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grads.iter().flatten().flat_map(|g| g.data()).map(|v| v * v).sum::<f64>().sqrt();
        if norm > max_norm {
            let c = max_norm / norm;
            for g in self.grads.iter_mut().flatten() {
                g.data_mut().iter_mut().for_each(|v| *v *= c);
            }
        }
        norm
    }

    pub fn clear_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    /// Serializes every parameter as `name<TAB>dims<TAB>values`, one per line,
    /// with dims joined by `x` and values in row-major order.
    pub fn to_checkpoint_string(&self) -> String {
        let mut out = String::from("# hydranet checkpoint v1\n");
        for (name, value) in self.names.iter().zip(&self.values) {
            let dims: Vec<String> = value.shape().iter().map(usize::to_string).collect();
            let _ = write!(out, "{name}\t{}\t", if dims.is_empty() { "scalar".into() } else { dims.join("x") });
            let vals: Vec<String> = value.data().iter().map(|v| format!("{v:?}")).collect();
            out.push_str(&vals.join(" "));
            out.push('\n');
        }
        out
    }

    /// Loads values from checkpoint text into this store. Every parameter of
    /// the store must be present with exactly its configured shape.
    pub fn load_checkpoint_str(&mut self, text: &str) -> Result<()> {
        let mut seen = vec![false; self.values.len()];
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |msg: &str| Error::Row { line: lineno as u64 + 1, message: msg.to_string() };
            let mut parts = line.splitn(3, '\t');
            let name = parts.next().ok_or_else(|| bad("missing name"))?;
            let dims = parts.next().ok_or_else(|| bad("missing shape"))?;
            let values = parts.next().unwrap_or("");
            let id = self
                .id(name)
                .ok_or_else(|| Error::Config(format!("checkpoint parameter {name} is not part of this model")))?;
            let shape: Vec<usize> = if dims == "scalar" {
                Vec::new()
            } else {
                dims.split('x')
                    .map(|d| d.parse::<usize>().map_err(|_| bad("bad shape")))
                    .collect::<Result<_>>()?
            };
            if shape != self.values[id.0].shape() {
                return Err(Error::Config(format!(
                    "checkpoint shape {:?} for {name} does not match configured {:?}",
                    shape,
                    self.values[id.0].shape()
                )));
            }
            let data: Vec<f64> = values
                .split_whitespace()
                .map(|v| v.parse::<f64>().map_err(|_| bad("bad value")))
                .collect::<Result<_>>()?;
            self.values[id.0] = Tensor::new(&shape, data)?;
            seen[id.0] = true;
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::Config(format!("checkpoint is missing parameter {}", self.names[i])));
        }
        Ok(())
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_checkpoint_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load_checkpoint(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.load_checkpoint_str(&text)
    }
}
