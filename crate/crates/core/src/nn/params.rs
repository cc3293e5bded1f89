use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct ParamEntry<T> {
    pub name: String,
    pub value: Tensor<T>,
    /// Buffers (running statistics) are stored and checkpointed but never optimised.
    pub trainable: bool,
}

/// Named parameters and buffers of one model.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    entries: Vec<ParamEntry<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
        }
    }

    fn insert(&mut self, name: &str, value: Tensor<T>, trainable: bool) -> ParamId {
        debug_assert!(
            self.entries.iter().all(|e| e.name != name),
            "duplicate parameter name {name}"
        );
        self.entries.push(ParamEntry {
            name: name.to_string(),
            value,
            trainable,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn param(&mut self, name: &str, value: Tensor<T>) -> ParamId {
        self.insert(name, value, true)
    }

    pub fn buffer(&mut self, name: &str, value: Tensor<T>) -> ParamId {
        self.insert(name, value, false)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].value
    }

    pub(crate) fn entry_value_mut(&mut self, i: usize) -> &mut [T] {
        self.entries[i].value.data_mut()
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    /// Total trainable scalars.
    pub fn param_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.value.len())
            .sum()
    }

    /// Trainable scalars grouped by the name prefix before the last `.`.
    pub fn param_count_by_layer(&self) -> Vec<(String, usize)> {
        let mut out: Vec<(String, usize)> = Vec::new();
        for e in self.entries.iter().filter(|e| e.trainable) {
            let layer = e.name.rsplit_once('.').map_or(e.name.as_str(), |(l, _)| l);
            match out.last_mut() {
                Some((name, n)) if name == layer => *n += e.value.len(),
                _ => out.push((layer.to_string(), e.value.len())),
            }
        }
        out
    }

    /// Overwrite values from `(name, shape, data)` records; every entry must be present.
    pub fn load_records(&mut self, records: &[(String, Vec<usize>, Vec<f32>)]) -> Result<()> {
        for entry in &mut self.entries {
            let (_, shape, data) = records
                .iter()
                .find(|(n, _, _)| *n == entry.name)
                .ok_or_else(|| Error::InvalidArgument(format!("checkpoint lacks {}", entry.name)))?;
            if shape.as_slice() != entry.value.shape() {
                return Err(Error::shape(
                    "load_records",
                    format!("{}: checkpoint {shape:?} vs model {:?}", entry.name, entry.value.shape()),
                ));
            }
            entry.value = Tensor::from_vec(shape, data.iter().map(|&v| T::of(v as f64)).collect())?;
        }
        Ok(())
    }

    pub fn to_records(&self) -> Vec<(String, Vec<usize>, Vec<f32>)> {
        self.entries
            .iter()
            .map(|e| {
                (
                    e.name.clone(),
                    e.value.shape().to_vec(),
                    e.value.data().iter().map(|v| v.as_f64() as f32).collect(),
                )
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One forward/backward pass: a fresh tape bound to a parameter store.
pub struct Ctx<'s, T: Scalar> {
    pub tape: Tape<T>,
    store: &'s mut ParamStore<T>,
    bound: Vec<Option<Var>>,
    mode: Mode,
}

impl<'s, T: Scalar> Ctx<'s, T> {
    pub fn new(store: &'s mut ParamStore<T>, mode: Mode) -> Self {
        let n = store.len();
        Ctx {
            tape: Tape::new(),
            store,
            bound: vec![None; n],
            mode,
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn training(&self) -> bool {
        self.mode == Mode::Train
    }

    /// Tape variable for a parameter, recorded on first use.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let requires_grad = self.mode == Mode::Train && self.store.entries[id.0].trainable;
        let v = self
            .tape
            .leaf(self.store.entries[id.0].value.clone(), requires_grad);
        self.bound[id.0] = Some(v);
        v
    }

    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.tape.constant(value)
    }

    pub fn store(&self) -> &ParamStore<T> {
        self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        self.store
    }

    /// Gradients of `loss` for every trainable parameter used in this pass.
    pub fn backward(&self, loss: Var) -> Result<ParamGrads<T>> {
        let mut g = self.tape.backward(loss)?;
        let grads = self
            .bound
            .iter()
            .map(|b| b.and_then(|v| g.take(v)))
            .collect();
        Ok(ParamGrads { grads })
    }
}

/// Gradients indexed by [`ParamId`].
pub struct ParamGrads<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> ParamGrads<T> {
    pub fn get(&self, id: ParamId) -> Option<&[T]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    pub(crate) fn by_index(&self, i: usize) -> Option<&[T]> {
        self.grads.get(i).and_then(|g| g.as_deref())
    }
}
