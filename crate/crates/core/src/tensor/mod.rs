//! Dense f64 tensors with tape-based reverse-mode differentiation.
//!
//! Every differentiable op records a node holding its parents and whatever
//! context its backward rule needs. [`Tensor::backward`] walks the recorded
//! graph in reverse topological order and accumulates `dloss/dleaf` into
//! every leaf created with [`Tensor::param`]. Gradients add up across calls
//! until [`Tensor::zero_grad`] clears them.

mod gemm;
pub mod gradcheck;
mod init;
mod mask;
mod ops;

use std::cell::{Cell, Ref, RefCell, RefMut};
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};

pub use gradcheck::{grad_check, GradCheckReport};
pub use init::{init_param, InitScheme};
pub use mask::Mask;
pub(crate) use ops::Op;

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` without recording any graph nodes.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    let out = f();
    GRAD_ENABLED.with(|g| g.set(prev));
    out
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

pub(crate) struct Node {
    pub op: Op,
    pub parents: Vec<Tensor>,
}

struct Inner {
    shape: Vec<usize>,
    data: RefCell<Vec<f64>>,
    grad: RefCell<Option<Vec<f64>>>,
    requires_grad: bool,
    node: Option<Node>,
}

/// Reference-counted handle to a tensor; cloning shares storage.
#[derive(Clone)]
pub struct Tensor(Rc<Inner>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let data = self.0.data.borrow();
        let head: Vec<f64> = data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .field("data", &head)
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn check_finite(op: &str, data: &[f64]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { op: op.to_string() })
    }
}

impl Tensor {
    fn build(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool, node: Option<Node>) -> Self {
        Tensor(Rc::new(Inner { shape, data: RefCell::new(data), grad: RefCell::new(None), requires_grad, node }))
    }

    /// A constant (non-trainable) tensor.
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        validate_shape(shape)?;
        if numel(shape) != data.len() {
            return Err(Error::shape(
                "new",
                format!("shape {shape:?} needs {} elements, got {}", numel(shape), data.len()),
            ));
        }
        check_finite("new", &data)?;
        Ok(Self::build(shape.to_vec(), data, false, None))
    }

    pub fn scalar(v: f64) -> Result<Self> {
        Self::new(&[], vec![v])
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::new(shape, vec![0.0; numel(shape)])
    }

    /// A trainable leaf: gradients accumulate into it during backward.
    pub fn param(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let t = Self::new(shape, data)?;
        let inner = Rc::try_unwrap(t.0).ok().expect("fresh tensor is unique");
        Ok(Self::build(inner.shape, inner.data.into_inner(), true, None))
    }

    /// Result of an op: records a graph node when any parent needs gradients.
    pub(crate) fn from_op(shape: Vec<usize>, data: Vec<f64>, op: Op, parents: Vec<Tensor>) -> Result<Self> {
        debug_assert_eq!(numel(&shape), data.len());
        check_finite(op.name(), &data)?;
        let track = grad_enabled() && parents.iter().any(|p| p.requires_grad());
        let node = track.then_some(Node { op, parents });
        Ok(Self::build(shape, data, track, node))
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        numel(&self.0.shape)
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.node.is_none()
    }

    pub fn data(&self) -> Ref<'_, Vec<f64>> {
        self.0.data.borrow()
    }

    /// Mutable access to the storage, for optimizers and finite differences.
    pub fn data_mut(&self) -> RefMut<'_, Vec<f64>> {
        self.0.data.borrow_mut()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.borrow().clone()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.numel() != 1 {
            return Err(Error::shape("item", format!("shape {:?} is not scalar", self.shape())));
        }
        Ok(self.0.data.borrow()[0])
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Overwrites the accumulated gradient (used by gradient clipping).
    pub fn set_grad(&self, g: Option<Vec<f64>>) {
        *self.0.grad.borrow_mut() = g;
    }

    pub fn same_storage(&self, other: &Tensor) -> bool {
        Rc::ptr_eq(&self.0, &other.0)
    }

    /// A constant copy without graph history.
    pub fn detach(&self) -> Tensor {
        Self::build(self.0.shape.clone(), self.to_vec(), false, None)
    }

    pub(crate) fn node(&self) -> Option<&Node> {
        self.0.node.as_ref()
    }

    fn key(&self) -> *const () {
        Rc::as_ptr(&self.0) as *const ()
    }

    /// Reverse-mode sweep from a scalar loss.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::NonScalarLoss(self.shape().to_vec()));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = self.topo_order();
        let mut grads: HashMap<*const (), Vec<f64>> = HashMap::new();
        grads.insert(self.key(), vec![1.0]);
        for t in order.iter().rev() {
            let Some(g) = grads.remove(&t.key()) else {
                continue;
            };
            match t.node() {
                None => {
                    let mut slot = t.0.grad.borrow_mut();
                    match slot.as_mut() {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                        None => *slot = Some(g),
                    }
                }
                Some(node) => {
                    let parent_grads = node.op.backward(t, &node.parents, &g)?;
                    for (p, pg) in node.parents.iter().zip(parent_grads) {
                        let Some(pg) = pg else { continue };
                        if !p.requires_grad() {
                            continue;
                        }
                        check_finite(&format!("backward:{}", node.op.name()), &pg)?;
                        match grads.get_mut(&p.key()) {
                            Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                            None => {
                                grads.insert(p.key(), pg);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Post-order over the tracked graph: parents precede children.
    fn topo_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut visited = std::collections::HashSet::new();
        let mut stack = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.key()) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(node) = t.node() {
                for p in &node.parents {
                    if p.requires_grad() && !visited.contains(&p.key()) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }
        order
    }
}

fn validate_shape(shape: &[usize]) -> Result<()> {
    if shape.contains(&0) {
        return Err(Error::shape("new", format!("zero extent in {shape:?}")));
    }
    Ok(())
}
