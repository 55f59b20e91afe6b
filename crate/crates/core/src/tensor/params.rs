use std::sync::atomic::{AtomicU64, Ordering};

use super::{Graph, Real, RunningStats, Tensor};

static NEXT_STORE: AtomicU64 = AtomicU64::new(1);

/// Identifies one tensor inside one [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId {
    store: u64,
    index: usize,
}

impl ParamId {
    pub fn index(self) -> usize {
        self.index
    }

    pub(crate) fn store_id(self) -> u64 {
        self.store
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Trainable weight; has a gradient and optimizer state.
    Weight,
    /// Non-trainable state such as batch-norm running statistics.
    Buffer,
}

#[derive(Clone, Debug)]
struct Entry<T> {
    name: String,
    value: Tensor<T>,
    grad: Tensor<T>,
    kind: ParamKind,
}

/// Named tensors owned by one network.
///
/// A clone keeps the store identity, so the `ParamId`s held by a cloned
/// network stay valid. A clone and its original must not be bound in the
/// same graph.
#[derive(Clone, Debug)]
pub struct ParamStore<T> {
    id: u64,
    entries: Vec<Entry<T>>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_STORE.fetch_add(1, Ordering::Relaxed),
            entries: Vec::new(),
        }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>, kind: ParamKind) -> ParamId {
        let grad = Tensor::zeros(value.shape());
        self.entries.push(Entry {
            name: name.into(),
            value,
            grad,
            kind,
        });
        ParamId {
            store: self.id,
            index: self.entries.len() - 1,
        }
    }

    fn entry(&self, id: ParamId) -> &Entry<T> {
        debug_assert_eq!(id.store, self.id, "parameter from another store");
        &self.entries[id.index]
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(|index| ParamId { store: self.id, index })
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entry(id).name
    }

    pub fn kind(&self, id: ParamId) -> ParamKind {
        self.entry(id).kind
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.kind(id) == ParamKind::Weight
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.entry(id).value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        debug_assert_eq!(id.store, self.id);
        &mut self.entries[id.index].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<T> {
        &self.entry(id).grad
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries
            .iter()
            .position(|e| e.name == name)
            .map(|index| ParamId { store: self.id, index })
    }

    /// Total number of trainable scalars.
    pub fn num_weights(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.kind == ParamKind::Weight)
            .map(|e| e.value.len())
            .sum()
    }

    pub fn zero_grad(&mut self) {
        for e in &mut self.entries {
            e.grad.fill(T::zero());
        }
    }

    /// Adds the gradients a finished graph holds for this store's weights.
    pub fn accumulate_grads(&mut self, graph: &Graph<T>) {
        for index in 0..self.entries.len() {
            let id = ParamId { store: self.id, index };
            let Some(g) = graph.binding(id).and_then(|v| graph.grad(v)) else {
                continue;
            };
            let e = &mut self.entries[index];
            e.grad
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .for_each(|(a, &b)| *a = *a + b);
        }
    }

    /// Mutable views of two buffers holding running mean and variance.
    pub fn running_stats(&mut self, mean: ParamId, var: ParamId, momentum: f64) -> RunningStats<'_, T> {
        assert!(mean.index < var.index, "mean buffer must precede variance");
        let (head, tail) = self.entries.split_at_mut(var.index);
        RunningStats {
            mean: head[mean.index].value.data_mut(),
            var: tail[0].value.data_mut(),
            momentum,
        }
    }

    /// All entries as `(name, value)` pairs, in insertion order.
    pub fn named(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|e| (e.name.as_str(), &e.value))
    }

    /// Simple additive checksum of every value, used to detect mutation.
    pub fn checksum(&self) -> f64 {
        self.entries
            .iter()
            .flat_map(|e| e.value.data().iter().enumerate())
            .map(|(i, v)| v.f64() * (1.0 + (i % 7) as f64))
            .sum()
    }
}
