//! Named parameter storage and binding into a [`Graph`].

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Gradients, Graph, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Learning-rate group. Transformer layers train at a reduced rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ParamGroup {
    Base,
    Transformer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamMeta {
    pub name: String,
    pub group: ParamGroup,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    meta: Vec<ParamMeta>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, group: ParamGroup) -> ParamId {
        let name = name.into();
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.meta.push(ParamMeta { name, group });
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// Glorot-uniform `[fan_in x fan_out]` weight.
    pub fn add_weight<R: Rng + ?Sized>(
        &mut self,
        rng: &mut R,
        name: impl Into<String>,
        fan_in: usize,
        fan_out: usize,
        group: ParamGroup,
    ) -> ParamId {
        let limit = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
        let data = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        let t = Tensor::new(alloc::vec![fan_in, fan_out], data).expect("weight shape");
        self.add(name, t, group)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn meta(&self, id: ParamId) -> &ParamMeta {
        &self.meta[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.meta.iter().position(|m| m.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    pub fn groups(&self) -> impl Iterator<Item = ParamGroup> + '_ {
        self.meta.iter().map(|m| m.group)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    /// Replaces every value, checking names and shapes against this store.
    pub fn load(&mut self, named: &[(String, Tensor)]) -> Result<()> {
        if named.len() != self.len() {
            return Err(Error::Argument(alloc::format!(
                "expected {} parameters, got {}",
                self.len(),
                named.len()
            )));
        }
        for (name, t) in named {
            let id = self
                .find(name)
                .ok_or_else(|| Error::Argument(alloc::format!("unknown parameter {name}")))?;
            if self.values[id.0].shape() != t.shape() {
                return Err(Error::Dimension(alloc::format!(
                    "parameter {name}: expected shape {:?}, got {:?}",
                    self.values[id.0].shape(),
                    t.shape()
                )));
            }
            self.values[id.0] = t.clone();
        }
        Ok(())
    }

    pub fn named(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.meta.iter().map(|m| m.name.as_str()).zip(&self.values)
    }

    /// Every parameter as a gradient-tracked leaf of `graph`.
    pub fn bind<'g>(&self, graph: &'g Graph) -> Bound<'g> {
        Bound {
            graph,
            vars: self.values.iter().map(|t| graph.param(t.clone())).collect(),
        }
    }

    /// Every parameter as a constant of `graph`.
    pub fn bind_frozen<'g>(&self, graph: &'g Graph) -> Bound<'g> {
        Bound {
            graph,
            vars: self.values.iter().map(|t| graph.constant(t.clone())).collect(),
        }
    }
}

/// Parameters of a [`ParamStore`] bound into one graph.
#[derive(Clone)]
pub struct Bound<'g> {
    graph: &'g Graph,
    vars: Vec<Var<'g>>,
}

impl<'g> Bound<'g> {
    /// Wraps variables created elsewhere, in store order.
    pub fn from_vars(graph: &'g Graph, vars: Vec<Var<'g>>) -> Self {
        Self { graph, vars }
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn get(&self, id: ParamId) -> Var<'g> {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var<'g>] {
        &self.vars
    }

    /// Per-parameter gradients; parameters the loss does not reach get zeros.
    pub fn gradients(&self, grads: &Gradients) -> Vec<Tensor> {
        self.vars
            .iter()
            .map(|v| {
                let shape = v.shape();
                match grads.get(*v) {
                    Some(g) => Tensor::new(shape, g.to_vec()).expect("gradient shape"),
                    None => Tensor::zeros(&shape),
                }
            })
            .collect()
    }
}
