use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::{Grads, Rng, Tape, Tensor, Var};

/// Index of a tensor in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Named, ordered parameter table. Insertion order is the serialization
/// order and the order of gradient vectors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter `{name}`")));
        }
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(value);
        Ok(ParamId(self.tensors.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn by_name(&self, name: &str) -> Result<&Tensor> {
        self.id(name)
            .map(|id| self.get(id))
            .ok_or_else(|| Error::MissingParameter(name.to_string()))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Zeroes every parameter whose name satisfies `pred`.
    pub fn zero_where(&mut self, pred: impl Fn(&str) -> bool) {
        for (name, t) in self.names.iter().zip(&mut self.tensors) {
            if pred(name) {
                t.data_mut().fill(0.0);
            }
        }
    }

    /// Overwrites every parameter of `self` from the same-named entry of
    /// `other`. Extra entries in `other` are ignored.
    pub fn load_from(&mut self, other: &ParamStore, prefix: &str) -> Result<()> {
        for (name, t) in self.names.iter().zip(&mut self.tensors) {
            let full = format!("{prefix}{name}");
            let src = other.by_name(&full)?;
            if src.shape() != t.shape() {
                return Err(Error::mismatch("load parameters", t.shape(), src.shape()));
            }
            *t = src.clone();
        }
        Ok(())
    }

    /// Copies all entries into `dst` with `prefix` prepended to each name.
    pub fn export_into(&self, dst: &mut ParamStore, prefix: &str) -> Result<()> {
        for (name, t) in self.iter() {
            dst.add(format!("{prefix}{name}"), t.clone())?;
        }
        Ok(())
    }
}

/// Parameter initializer that scopes names with dotted prefixes.
pub struct Init<'a> {
    store: &'a mut ParamStore,
    rng: &'a mut Rng,
    prefix: String,
}

impl<'a> Init<'a> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut Rng) -> Self {
        Self {
            store,
            rng,
            prefix: String::new(),
        }
    }

    pub fn sub(&mut self, name: &str) -> Init<'_> {
        Init {
            prefix: format!("{}{name}.", self.prefix),
            store: self.store,
            rng: self.rng,
        }
    }

    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> Result<ParamId> {
        let t = Tensor::rand_uniform(shape, -bound, bound, self.rng);
        self.store.add(format!("{}{name}", self.prefix), t)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> Result<ParamId> {
        self.store.add(format!("{}{name}", self.prefix), Tensor::full(shape, value))
    }
}

/// Parameters of a [`ParamStore`] materialized on a tape.
pub struct Ctx<'t> {
    tape: &'t Tape,
    vars: Vec<Var<'t>>,
}

impl<'t> Ctx<'t> {
    /// Records every parameter as a leaf (`trainable`) or a constant.
    pub fn new(tape: &'t Tape, store: &ParamStore, trainable: bool) -> Self {
        let vars = store
            .tensors
            .iter()
            .map(|t| {
                if trainable {
                    tape.leaf(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        Self { tape, vars }
    }

    /// Uses caller-made vars, one per parameter in store order.
    pub fn from_vars(tape: &'t Tape, vars: Vec<Var<'t>>) -> Self {
        Self { tape, vars }
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn p(&self, id: ParamId) -> Var<'t> {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var<'t>] {
        &self.vars
    }

    pub fn input(&self, t: Tensor) -> Var<'t> {
        self.tape.constant(t)
    }

    /// Gradient for every parameter, in store order.
    pub fn grads(&self, grads: &Grads) -> Result<Vec<Tensor>> {
        self.vars.iter().map(|&v| grads.wrt(v)).collect()
    }
}
