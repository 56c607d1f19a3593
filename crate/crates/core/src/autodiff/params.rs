use super::{Array, Gradients, Graph, Tensor};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Named trainable arrays living outside any graph.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Array>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Names identify checkpoint records, so a
    /// repeated name is a programming error and panics.
    pub fn add(&mut self, name: impl Into<String>, value: Array) -> ParamId {
        let name = name.into();
        assert!(!self.names.contains(&name), "parameter `{name}` registered twice");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Array {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array)> {
        self.names.iter().map(String::as_str).zip(self.values.iter())
    }

    pub fn values(&self) -> &[Array] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Array] {
        &mut self.values
    }

    /// Total number of scalar entries.
    pub fn numel(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Creates one trainable leaf per parameter in `graph`.
    pub fn bind<'g>(&self, graph: &'g Graph) -> BoundParams<'g> {
        BoundParams {
            leaves: self.values.iter().map(|v| graph.param(v.clone())).collect(),
        }
    }

    /// Creates non-trainable leaves, for evaluation without gradients.
    pub fn bind_frozen<'g>(&self, graph: &'g Graph) -> BoundParams<'g> {
        BoundParams {
            leaves: self.values.iter().map(|v| graph.constant(v.clone())).collect(),
        }
    }
}

/// The leaves a [`ParamStore`] was bound to in one graph.
#[derive(Clone)]
pub struct BoundParams<'g> {
    leaves: Vec<Tensor<'g>>,
}

impl<'g> BoundParams<'g> {
    pub fn get(&self, id: ParamId) -> Tensor<'g> {
        self.leaves[id.0]
    }

    /// Gradient for every parameter, zero where the root did not depend on it.
    pub fn grads(&self, grads: &Gradients) -> Vec<Array> {
        self.leaves
            .iter()
            .map(|t| match grads.get(*t) {
                Some(g) => g.clone(),
                None => Array::zeros(t.shape()),
            })
            .collect()
    }
}
