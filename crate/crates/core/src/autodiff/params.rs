use std::collections::HashMap;

use super::Tensor;
use crate::error::{Error, Result};

/// Which optimizer owns a parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Group {
    /// Generative model, updated by SGD.
    Theta,
    /// Generative action head; SGD with its own learning rate.
    ThetaAction,
    /// Inference network, updated by Adam.
    Phi,
}

impl Group {
    pub fn is_theta(self) -> bool {
        matches!(self, Group::Theta | Group::ThetaAction)
    }

    pub fn tag(self) -> u8 {
        match self {
            Group::Theta => 0,
            Group::ThetaAction => 1,
            Group::Phi => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Group::Theta),
            1 => Some(Group::ThetaAction),
            2 => Some(Group::Phi),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub group: Group,
    pub tensor: Tensor,
}

/// Named parameter tensors in registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    entries: Vec<ParamEntry>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, group: Group, tensor: Tensor) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push(ParamEntry {
            name: name.to_string(),
            group,
            tensor,
        });
        Ok(ParamId(self.entries.len() - 1))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].tensor
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn ids_in(&self, group: impl Fn(Group) -> bool) -> Vec<ParamId> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| group(e.group))
            .map(|(i, _)| ParamId(i))
            .collect()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.len()).sum()
    }

    /// Same names, groups and shapes.
    pub fn same_layout(&self, other: &ParamSet) -> bool {
        self.entries.len() == other.entries.len()
            && self.entries.iter().zip(&other.entries).all(|(a, b)| {
                a.name == b.name && a.group == b.group && a.tensor.shape() == b.tensor.shape()
            })
    }
}

/// Per-parameter gradients aligned with a [`ParamSet`]; `None` where the
/// objective did not touch the parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn zeros_like(params: &ParamSet) -> Self {
        Gradients {
            grads: vec![None; params.len()],
        }
    }

    pub(crate) fn from_vec(grads: Vec<Option<Tensor>>) -> Self {
        Gradients { grads }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// Dense copy of one parameter's gradient, zeros when absent.
    pub fn dense(&self, params: &ParamSet, id: ParamId) -> Vec<f64> {
        match self.get(id) {
            Some(t) => t.data().to_vec(),
            None => vec![0.0; params.get(id).len()],
        }
    }

    /// `self += scale * other`.
    pub fn accumulate(&mut self, other: &Gradients, scale: f64) {
        for (mine, theirs) in self.grads.iter_mut().zip(&other.grads) {
            let Some(theirs) = theirs else { continue };
            match mine {
                Some(t) => {
                    for (a, b) in t.data_mut().iter_mut().zip(theirs.data()) {
                        *a += scale * b;
                    }
                }
                None => {
                    let mut t = theirs.clone();
                    t.data_mut().iter_mut().for_each(|v| *v *= scale);
                    *mine = Some(t);
                }
            }
        }
    }

    pub fn scale(&mut self, factor: f64, ids: &[ParamId]) {
        for id in ids {
            if let Some(t) = &mut self.grads[id.0] {
                t.data_mut().iter_mut().for_each(|v| *v *= factor);
            }
        }
    }

    pub fn norm(&self, ids: &[ParamId]) -> f64 {
        ids.iter()
            .filter_map(|id| self.grads[id.0].as_ref())
            .map(Tensor::squared_norm)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescale the listed gradients so their joint norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_norm(&mut self, ids: &[ParamId], max_norm: f64) -> f64 {
        let norm = self.norm(ids);
        if norm > max_norm {
            self.scale(max_norm / norm, ids);
        }
        norm
    }

    /// Flatten the listed parameters' gradients into one vector.
    pub fn flatten(&self, params: &ParamSet, ids: &[ParamId]) -> Vec<f64> {
        ids.iter().flat_map(|&id| self.dense(params, id)).collect()
    }

    pub fn clear(&mut self, ids: &[ParamId]) {
        for id in ids {
            self.grads[id.0] = None;
        }
    }
}
