use std::cell::RefCell;
use std::rc::Rc;

use indexmap::IndexMap;

use super::{ParamStore, Real, Tensor};
use crate::error::{Error, Result};

pub(crate) type BackwardFn<T> = Box<dyn Fn(&[T], &mut GradSink<T>)>;

struct Node<T> {
    value: Rc<Tensor<T>>,
    tracked: bool,
    backward: Option<BackwardFn<T>>,
}

/// Operation record for one forward pass.
///
/// Nodes are appended in execution order, so the reverse of insertion order
/// is a valid topological order for the backward sweep.
pub struct Tape<T: Real> {
    nodes: RefCell<Vec<Node<T>>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Real> {
    tape: &'t Tape<T>,
    id: usize,
}

/// Forward-pass behaviour of stateful layers (batch norm).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics are updated iff `track_stats`.
    Train { track_stats: bool },
    /// Running statistics.
    Eval,
}

impl Mode {
    pub const TRAIN: Mode = Mode::Train { track_stats: true };
    pub const TRAIN_FROZEN: Mode = Mode::Train { track_stats: false };

    pub fn is_train(self) -> bool {
        matches!(self, Mode::Train { .. })
    }
}

/// Gradient buffers handed to backward closures.
pub struct GradSink<T> {
    grads: Vec<Option<Vec<T>>>,
    tracked: Vec<bool>,
    sizes: Vec<usize>,
}

impl<T: Real> GradSink<T> {
    /// Whether node `id` takes part in differentiation.
    pub fn wants(&self, id: usize) -> bool {
        self.tracked[id]
    }

    /// Accumulator of node `id`, allocated on first use.
    pub fn slot(&mut self, id: usize) -> &mut [T] {
        let size = self.sizes[id];
        self.grads[id].get_or_insert_with(|| vec![T::zero(); size])
    }

    pub fn add(&mut self, id: usize, g: &[T]) {
        if !self.tracked[id] {
            return;
        }
        let slot = self.slot(id);
        for (s, v) in slot.iter_mut().zip(g) {
            *s += *v;
        }
    }
}

/// Gradients of tracked leaves after [`Tape::backward`].
pub struct Grads<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Grads<T> {
    pub fn get(&self, v: Var<'_, T>) -> Option<&[T]> {
        self.grads.get(v.id).and_then(|g| g.as_deref())
    }

    /// Gradient of `v`, or zeros of the right size if nothing reached it.
    pub fn get_or_zeros(&self, v: Var<'_, T>) -> Vec<T> {
        match self.get(v) {
            Some(g) => g.to_vec(),
            None => vec![T::zero(); v.numel()],
        }
    }

    /// Adds the gradients of bound parameters into the store's accumulators.
    pub fn accumulate_into(&self, bound: &Bound<'_, T>, store: &mut ParamStore<T>) -> Result<()> {
        for (name, var) in bound.iter() {
            let Some(g) = self.get(*var) else { continue };
            let param = store
                .get_mut(name)
                .ok_or_else(|| Error::invariant(format!("bound parameter {name} missing from store")))?;
            let slot = param
                .grad_mut()
                .ok_or_else(|| Error::invariant(format!("parameter {name} has no gradient accumulator")))?;
            for (s, v) in slot.iter_mut().zip(g) {
                *s += *v;
            }
        }
        Ok(())
    }
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn leaf(&self, value: Tensor<T>, tracked: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            value: Rc::new(value),
            tracked,
            backward: None,
        });
        Var { tape: self, id }
    }

    /// Leaf that receives a gradient.
    pub fn var(&self, value: Tensor<T>) -> Var<'_, T> {
        let mut value = value;
        value.set_requires_grad(false);
        self.leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        let mut value = value;
        value.set_requires_grad(false);
        self.leaf(value, false)
    }

    /// Records every parameter of `store` as a leaf. With `trainable` unset
    /// the parameters act as constants and receive no gradient.
    pub fn bind(&self, store: &ParamStore<T>, trainable: bool) -> Bound<'_, T> {
        let vars = store
            .iter()
            .map(|(name, t)| {
                let v = Tensor::new(t.shape().to_vec(), t.data().to_vec()).expect("store tensors are well formed");
                (name.to_string(), if trainable { self.var(v) } else { self.constant(v) })
            })
            .collect();
        Bound { vars }
    }

    /// Appends an operation node. The closure receives the output gradient
    /// and must push contributions for its inputs into the sink.
    pub(crate) fn push<F>(&self, value: Tensor<T>, parents: &[usize], backward: F) -> Var<'_, T>
    where
        F: Fn(&[T], &mut GradSink<T>) + 'static,
    {
        let mut nodes = self.nodes.borrow_mut();
        let tracked = parents.iter().any(|&p| nodes[p].tracked);
        let id = nodes.len();
        nodes.push(Node {
            value: Rc::new(value),
            tracked,
            backward: if tracked { Some(Box::new(backward)) } else { None },
        });
        Var { tape: self, id }
    }

    pub(crate) fn value(&self, id: usize) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn tracked(&self, id: usize) -> bool {
        self.nodes.borrow()[id].tracked
    }

    /// Reverse sweep from a single-element output with seed 1.
    pub fn backward(&self, output: Var<'_, T>) -> Result<Grads<T>> {
        if output.numel() != 1 {
            return Err(Error::config(format!(
                "backward needs a single-element output, got shape {:?}",
                output.shape()
            )));
        }
        self.backward_seeded(output, &[T::one()])
    }

    /// Reverse sweep from `output` seeded with an explicit output gradient.
    pub fn backward_seeded(&self, output: Var<'_, T>, seed: &[T]) -> Result<Grads<T>> {
        let nodes = self.nodes.borrow();
        if seed.len() != nodes[output.id].value.numel() {
            return Err(Error::shape("backward", nodes[output.id].value.shape(), &[seed.len()]));
        }
        let count = output.id + 1;
        let mut sink = GradSink {
            grads: (0..count).map(|_| None).collect(),
            tracked: nodes[..count].iter().map(|n| n.tracked).collect(),
            sizes: nodes[..count].iter().map(|n| n.value.numel()).collect(),
        };
        if nodes[output.id].tracked {
            sink.grads[output.id] = Some(seed.to_vec());
        }
        for id in (0..count).rev() {
            let Some(bw) = &nodes[id].backward else { continue };
            if let Some(g) = sink.grads[id].take() {
                bw(&g, &mut sink);
            }
        }
        Ok(Grads { grads: sink.grads })
    }
}

impl<'t, T: Real> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.tape.nodes.borrow()[self.id].value.numel()
    }

    pub fn tracked(&self) -> bool {
        self.tape.tracked(self.id)
    }

    /// Copies the value out as an owned tensor.
    pub fn to_tensor(&self) -> Tensor<T> {
        (*self.value()).clone()
    }
}

/// Parameters of one network recorded on a tape, looked up by name.
pub struct Bound<'t, T: Real> {
    vars: IndexMap<String, Var<'t, T>>,
}

impl<'t, T: Real> Bound<'t, T> {
    pub fn from_vars(vars: impl IntoIterator<Item = (String, Var<'t, T>)>) -> Self {
        Bound {
            vars: vars.into_iter().collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<Var<'t, T>> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::config(format!("parameter {name} is not bound")))
    }

    /// Substitutes the binding of an existing name.
    pub fn replace(&mut self, name: &str, var: Var<'t, T>) -> Result<()> {
        let slot = self
            .vars
            .get_mut(name)
            .ok_or_else(|| Error::config(format!("parameter {name} is not bound")))?;
        if slot.shape() != var.shape() {
            return Err(Error::shape("Bound::replace", &slot.shape(), &var.shape()));
        }
        *slot = var;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var<'t, T>)> {
        self.vars.iter()
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }
}
