use std::collections::BTreeMap;

use super::{Gradients, Graph, NnError, Result, Tensor, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub id: String,
    pub value: Tensor,
    pub grad: Option<Tensor>,
}

/// Named parameters in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
    index: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: impl Into<String>, value: Tensor) {
        let id = id.into();
        match self.index.get(&id) {
            Some(&i) => self.params[i].value = value,
            None => {
                self.index.insert(id.clone(), self.params.len());
                self.params.push(Parameter { id, value, grad: None });
            }
        }
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn get(&self, id: &str) -> Result<&Parameter> {
        self.position(id).map(|i| &self.params[i]).ok_or_else(|| NnError::UnknownParameter(id.into()))
    }

    pub fn value(&self, id: &str) -> Result<&Tensor> {
        Ok(&self.get(id)?.value)
    }

    pub fn set_value(&mut self, id: &str, value: Tensor) -> Result<()> {
        let i = self.position(id).ok_or_else(|| NnError::UnknownParameter(id.into()))?;
        self.params[i].value.same_shape(&value)?;
        self.params[i].value = value;
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        self.params.iter_mut().for_each(|p| p.grad = None);
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.is_finite())
    }

    /// Puts every parameter whose id starts with one of `trainable` on the
    /// tape as a leaf; all others enter as constants.
    pub fn bind(&self, g: &mut Graph, trainable: &[&str]) -> Binding {
        let vars = self
            .params
            .iter()
            .map(|p| {
                let v = if trainable.iter().any(|pre| p.id.starts_with(pre)) {
                    g.leaf(p.value.clone())
                } else {
                    g.constant(p.value.clone())
                };
                (p.id.clone(), v)
            })
            .collect();
        Binding { vars }
    }

    /// Puts only parameters whose id starts with one of `include` on the tape.
    pub fn bind_matching(&self, g: &mut Graph, include: &[&str], trainable: bool) -> Binding {
        let vars = self
            .params
            .iter()
            .filter(|p| include.iter().any(|pre| p.id.starts_with(pre)))
            .map(|p| {
                let v = if trainable { g.leaf(p.value.clone()) } else { g.constant(p.value.clone()) };
                (p.id.clone(), v)
            })
            .collect();
        Binding { vars }
    }

    /// Adds `scale * dL/dp` for every bound leaf into the parameter grads.
    pub fn accumulate(&mut self, g: &Graph, binding: &Binding, grads: &Gradients, scale: f64) {
        for p in &mut self.params {
            let Some(&v) = binding.vars.get(&p.id) else { continue };
            if !g.requires_grad(v) {
                continue;
            }
            let Some(dg) = grads.get(v) else { continue };
            let dg = dg.map(|x| x * scale);
            match &mut p.grad {
                Some(acc) => acc.add_assign(&dg),
                slot => *slot = Some(dg),
            }
        }
    }
}

/// Tape variables for a parameter store.
#[derive(Debug, Clone, Default)]
pub struct Binding {
    vars: BTreeMap<String, Var>,
}

impl Binding {
    pub fn get(&self, id: &str) -> Result<Var> {
        self.vars.get(id).copied().ok_or_else(|| NnError::UnknownParameter(id.into()))
    }

    pub fn has(&self, id: &str) -> bool {
        self.vars.contains_key(id)
    }
}
