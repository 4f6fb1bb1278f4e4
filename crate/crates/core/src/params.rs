use std::collections::BTreeMap;

use crate::autodiff::{Gradients, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Named trainable tensors, iterated in name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, mut t: Tensor) {
        t.set_requires_grad(true);
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| Error::invalid(format!("missing parameter `{name}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn zero_grad(&mut self) {
        self.tensors.values_mut().for_each(Tensor::zero_grad);
    }
}

/// Graph leaves for the parameters used in one forward pass.
#[derive(Debug, Default)]
pub struct Bindings {
    vars: Vec<(String, Var)>,
}

impl Bindings {
    pub fn bind(&mut self, graph: &mut Graph, params: &ParamSet, name: &str) -> Result<Var> {
        if let Some((_, v)) = self.vars.iter().find(|(n, _)| n == name) {
            return Ok(*v);
        }
        let var = graph.leaf(params.require(name)?);
        self.vars.push((name.to_string(), var));
        Ok(var)
    }

    /// Adds the gradients of the bound leaves into the parameters' grad buffers.
    pub fn accumulate(&self, grads: &Gradients, params: &mut ParamSet) -> Result<()> {
        for (name, var) in &self.vars {
            if let Some(g) = grads.wrt(*var) {
                params
                    .get_mut(name)
                    .ok_or_else(|| Error::Internal(format!("bound parameter `{name}` vanished")))?
                    .accumulate_grad(g)?;
            }
        }
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.vars.iter().map(|(n, _)| n.as_str())
    }
}
