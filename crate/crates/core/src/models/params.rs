use std::collections::BTreeMap;

use candle_core::{DType, Tensor, Var};

use crate::error::{Error, Result};

/// Named trainable tensors, keyed by dotted path
/// (`backbone.block2.module3.conv1.weight`). Iteration order is the sorted
/// name order, which is also the checkpoint blob order.
#[derive(Debug, Clone)]
pub struct ParamStore {
    dtype: DType,
    vars: BTreeMap<String, Var>,
}

impl ParamStore {
    pub fn new(dtype: DType) -> Self {
        Self {
            dtype,
            vars: BTreeMap::new(),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.vars.contains_key(&name) {
            return Err(Error::Contract(format!("duplicate parameter name `{name}`")));
        }
        let value = value.to_dtype(self.dtype)?;
        self.vars.insert(name, Var::from_tensor(&value)?);
        Ok(())
    }

    pub fn var(&self, name: &str) -> Result<&Var> {
        self.vars
            .get(name)
            .ok_or_else(|| Error::Contract(format!("missing parameter `{name}`")))
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.vars.keys()
    }

    /// Scalar parameter count, optionally restricted to names with `prefix`.
    pub fn count_parameters(&self, prefix: Option<&str>) -> usize {
        self.vars
            .iter()
            .filter(|(name, _)| prefix.is_none_or(|p| name.starts_with(p)))
            .map(|(_, v)| v.elem_count())
            .sum()
    }

    pub fn shapes(&self) -> BTreeMap<String, Vec<usize>> {
        self.vars
            .iter()
            .map(|(k, v)| (k.clone(), v.dims().to_vec()))
            .collect()
    }

    /// Deep copy; the returned store shares no storage with `self`.
    pub fn deep_clone(&self) -> Result<Self> {
        let mut out = Self::new(self.dtype);
        for (name, var) in &self.vars {
            out.vars
                .insert(name.clone(), Var::from_tensor(&var.as_tensor().copy()?)?);
        }
        Ok(out)
    }

    pub fn frozen(&self) -> Frozen<'_> {
        Frozen(self)
    }
}

/// Source of parameter tensors for a forward pass.
pub trait ParamSource {
    fn tensor(&self, name: &str) -> Result<Tensor>;
}

impl ParamSource for ParamStore {
    fn tensor(&self, name: &str) -> Result<Tensor> {
        Ok(self.var(name)?.as_tensor().clone())
    }
}

/// Detached view: forwards through it contribute no gradients to the store.
#[derive(Clone, Copy)]
pub struct Frozen<'a>(&'a ParamStore);

impl ParamSource for Frozen<'_> {
    fn tensor(&self, name: &str) -> Result<Tensor> {
        Ok(self.0.var(name)?.as_tensor().detach())
    }
}

impl<T: ParamSource + ?Sized> ParamSource for &T {
    fn tensor(&self, name: &str) -> Result<Tensor> {
        (**self).tensor(name)
    }
}
