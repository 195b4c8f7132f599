use std::cell::{Cell, Ref, RefCell, RefMut};
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

static NEXT_ID: AtomicUsize = AtomicUsize::new(0);

thread_local! {
    static ADJOINT_FAULT: Cell<Option<&'static str>> = const { Cell::new(None) };
}

/// Flips the sign of every adjoint produced by the primitive called `name`
/// on the current thread. Used to check that gradient checking catches a
/// broken backward rule; pass `None` to restore normal behaviour.
#[doc(hidden)]
pub fn set_adjoint_fault(name: Option<&'static str>) {
    ADJOINT_FAULT.with(|f| f.set(name));
}

/// Backward rule of a recorded operation.
///
/// `grad` is the adjoint of the operation's output. The returned vector has
/// one entry per parent; `None` marks parents that do not need a gradient.
pub trait BackwardOp<S: Scalar> {
    fn name(&self) -> &'static str;

    fn backward(&self, parents: &[Tensor<S>], output: &Tensor<S>, grad: &[S]) -> Result<Vec<Option<Vec<S>>>>;
}

struct Node<S: Scalar> {
    op: Box<dyn BackwardOp<S>>,
    parents: Vec<Tensor<S>>,
}

struct Inner<S: Scalar> {
    id: usize,
    shape: Vec<usize>,
    data: RefCell<Vec<S>>,
    grad: RefCell<Option<Vec<S>>>,
    requires_grad: bool,
    name: Option<String>,
    node: Option<Node<S>>,
}

/// Dense row-major tensor taking part in a reverse-mode differentiation graph.
///
/// Values are computed eagerly when an operation is applied; the operation and
/// its parents are retained so [`Tensor::backward`] can replay the chain rule.
/// Cloning a `Tensor` clones a handle, not the buffer.
pub struct Tensor<S: Scalar>(Rc<Inner<S>>);

impl<S: Scalar> Clone for Tensor<S> {
    fn clone(&self) -> Self {
        Tensor(Rc::clone(&self.0))
    }
}

impl<S: Scalar> fmt::Debug for Tensor<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .field("op", &self.0.node.as_ref().map(|n| n.op.name()))
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<S: Scalar> Tensor<S> {
    fn build(
        shape: Vec<usize>,
        data: Vec<S>,
        requires_grad: bool,
        name: Option<String>,
        node: Option<Node<S>>,
    ) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor(Rc::new(Inner {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad,
            name,
            node,
        }))
    }

    /// Constant leaf; never receives a gradient.
    pub fn from_vec(data: Vec<S>, shape: &[usize]) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(Error::shape("from_vec", shape, &[data.len()]));
        }
        Ok(Self::build(shape.to_vec(), data, false, None, None))
    }

    /// Trainable leaf. The name is used in checkpoints and error messages.
    pub fn parameter(data: Vec<S>, shape: &[usize], name: impl Into<String>) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(Error::shape("parameter", shape, &[data.len()]));
        }
        Ok(Self::build(shape.to_vec(), data, true, Some(name.into()), None))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::build(shape.to_vec(), vec![S::zero(); numel(shape)], false, None, None)
    }

    pub fn full(shape: &[usize], value: S) -> Self {
        Self::build(shape.to_vec(), vec![value; numel(shape)], false, None, None)
    }

    pub fn scalar(value: S) -> Self {
        Self::build(vec![1], vec![value], false, None, None)
    }

    /// Records the result of an operation. The node is kept only if some
    /// parent participates in differentiation.
    pub fn from_op(data: Vec<S>, shape: Vec<usize>, parents: Vec<Tensor<S>>, op: impl BackwardOp<S> + 'static) -> Self {
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        let node = requires_grad.then(|| Node { op: Box::new(op), parents });
        Self::build(shape, data, requires_grad, None, node)
    }

    pub fn id(&self) -> usize {
        self.0.id
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

    pub fn dim(&self, axis: usize) -> usize {
        self.0.shape[axis]
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn name(&self) -> Option<&str> {
        self.0.name.as_deref()
    }

    pub fn is_leaf(&self) -> bool {
        self.0.node.is_none()
    }

    pub fn op_name(&self) -> Option<&'static str> {
        self.0.node.as_ref().map(|n| n.op.name())
    }

    pub fn data(&self) -> Ref<'_, Vec<S>> {
        self.0.data.borrow()
    }

    /// Mutable access to the buffer. Meant for parameter updates between
    /// graph evaluations; mutating an interior node invalidates its graph.
    pub fn data_mut(&self) -> RefMut<'_, Vec<S>> {
        self.0.data.borrow_mut()
    }

    pub fn to_vec(&self) -> Vec<S> {
        self.0.data.borrow().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> S {
        self.0.data.borrow()[0]
    }

    pub fn grad(&self) -> Option<Vec<S>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    #[cfg(test)]
    pub(crate) fn set_grad(&self, grad: Vec<S>) {
        *self.0.grad.borrow_mut() = Some(grad);
    }

    /// New constant leaf holding a copy of this tensor's values.
    pub fn detach(&self) -> Self {
        Self::build(self.0.shape.clone(), self.to_vec(), false, None, None)
    }

    /// Backpropagates from a single-element root.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::NonScalarRoot(self.0.shape.clone()));
        }
        self.backward_with(vec![S::one()])
    }

    /// Backpropagates with an explicit seed adjoint for the root.
    ///
    /// Gradients accumulate into the `grad` buffer of every reachable leaf
    /// that requires grad; interior adjoints are discarded.
    pub fn backward_with(&self, seed: Vec<S>) -> Result<()> {
        if !self.requires_grad() {
            return Err(Error::Detached);
        }
        if seed.len() != self.numel() {
            return Err(Error::shape("backward", &self.0.shape, &[seed.len()]));
        }
        let order = self.topo_order();
        let mut adjoints: HashMap<usize, Vec<S>> = HashMap::new();
        adjoints.insert(self.id(), seed);
        let fault = ADJOINT_FAULT.with(|f| f.get());

        for t in order.iter().rev() {
            let Some(grad) = adjoints.remove(&t.id()) else {
                continue;
            };
            match &t.0.node {
                None => {
                    let mut slot = t.0.grad.borrow_mut();
                    match slot.as_mut() {
                        Some(acc) => acc.iter_mut().zip(&grad).for_each(|(a, g)| *a += *g),
                        None => *slot = Some(grad),
                    }
                }
                Some(node) => {
                    let mut pgrads = node.op.backward(&node.parents, t, &grad)?;
                    if fault == Some(node.op.name()) {
                        for g in pgrads.iter_mut().flatten() {
                            g.iter_mut().for_each(|v| *v = -*v);
                        }
                    }
                    for (parent, pg) in node.parents.iter().zip(pgrads) {
                        let Some(pg) = pg else { continue };
                        if !parent.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(pg.len(), parent.numel(), "{}", node.op.name());
                        match adjoints.get_mut(&parent.id()) {
                            Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, g)| *a += *g),
                            None => {
                                adjoints.insert(parent.id(), pg);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Post-order over the differentiable subgraph rooted here.
    fn topo_order(&self) -> Vec<Tensor<S>> {
        let mut order = Vec::new();
        let mut visited = std::collections::HashSet::new();
        let mut stack: Vec<(Tensor<S>, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.id()) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(node) = &t.0.node {
                for p in &node.parents {
                    if p.requires_grad() && !visited.contains(&p.id()) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }
        order
    }
}
