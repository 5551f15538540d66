use std::cell::{Cell, RefCell};
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};

/// Computes parent gradients from the output gradient and the output values.
///
/// Returns one entry per parent; `None` for parents that do not need a gradient.
pub(crate) type BackwardFn = dyn Fn(&[f32], &[f32]) -> Vec<Option<Vec<f32>>>;

struct Node {
    op: &'static str,
    parents: Vec<Tensor>,
    backward: Box<BackwardFn>,
}

struct Inner {
    shape: Vec<usize>,
    data: Vec<f32>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f32>>>,
    node: RefCell<Option<Node>>,
    consumed: Cell<bool>,
}

/// Dense row-major f32 tensor and a node of the reverse-mode graph.
///
/// Values are immutable once created; only the gradient buffer changes.
/// Cloning is cheap and shares storage.
#[derive(Clone)]
pub struct Tensor(Rc<Inner>);

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn from_parts(data: Vec<f32>, shape: Vec<usize>, requires_grad: bool, node: Option<Node>) -> Self {
        Tensor(Rc::new(Inner {
            shape,
            data,
            requires_grad,
            grad: RefCell::new(None),
            node: RefCell::new(node),
            consumed: Cell::new(false),
        }))
    }

    fn check_shape(data: &[f32], shape: &[usize]) -> Result<()> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::invalid(format!("shape {shape:?} has a zero dimension")));
        }
        if numel(shape) != data.len() {
            return Err(Error::invalid(format!(
                "shape {shape:?} needs {} values, got {}",
                numel(shape),
                data.len()
            )));
        }
        Ok(())
    }

    /// A constant (no gradient) tensor.
    pub fn new(data: Vec<f32>, shape: &[usize]) -> Result<Self> {
        Self::check_shape(&data, shape)?;
        Ok(Self::from_parts(data, shape.to_vec(), false, None))
    }

    /// A leaf that collects a gradient on `backward`.
    pub fn param(data: Vec<f32>, shape: &[usize]) -> Result<Self> {
        Self::check_shape(&data, shape)?;
        Ok(Self::from_parts(data, shape.to_vec(), true, None))
    }

    pub fn scalar(value: f32) -> Self {
        Self::from_parts(vec![value], vec![1], false, None)
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::new(vec![0.0; numel(shape)], shape)
    }

    /// Builds the result of an operation. A graph node is recorded only when
    /// at least one parent requires a gradient.
    pub(crate) fn from_op(
        data: Vec<f32>,
        shape: Vec<usize>,
        op: &'static str,
        parents: &[&Tensor],
        backward: Box<BackwardFn>,
    ) -> Self {
        debug_assert_eq!(numel(&shape), data.len(), "op {op}");
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        let node = requires_grad.then(|| Node {
            op,
            parents: parents.iter().map(|&p| p.clone()).collect(),
            backward,
        });
        Self::from_parts(data, shape, requires_grad, node)
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.0.data
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f32> {
        if self.numel() != 1 {
            return Err(Error::invalid(format!(
                "item() on tensor of shape {:?}",
                self.shape()
            )));
        }
        Ok(self.0.data[0])
    }

    pub fn grad(&self) -> Option<Vec<f32>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Same values, cut from the graph.
    pub fn detach(&self) -> Tensor {
        Self::from_parts(self.0.data.clone(), self.0.shape.clone(), false, None)
    }

    /// Name of the producing operation, if this tensor is a recorded graph node.
    pub fn op_name(&self) -> Option<&'static str> {
        self.0.node.borrow().as_ref().map(|n| n.op)
    }

    fn key(&self) -> usize {
        Rc::as_ptr(&self.0) as usize
    }

    fn has_node(&self) -> bool {
        self.0.node.borrow().is_some()
    }

    /// Reverse-mode sweep from a scalar loss.
    ///
    /// Leaf gradients accumulate into existing buffers; the traversed part of
    /// the graph is released, so a second call without a new forward fails.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if self.0.consumed.get() {
            return Err(Error::State(
                "backward called twice on the same graph; run a new forward first".into(),
            ));
        }
        if !self.requires_grad() {
            return Err(Error::State(
                "loss does not depend on any tensor that requires a gradient".into(),
            ));
        }

        let order = self.topo_order()?;
        let mut grads: HashMap<usize, Vec<f32>> = HashMap::new();
        grads.insert(self.key(), vec![1.0]);

        for t in order.iter().rev() {
            let Some(g) = grads.remove(&t.key()) else {
                continue;
            };
            let node = t.0.node.borrow_mut().take();
            match node {
                Some(node) => {
                    let parent_grads = (node.backward)(&g, &t.0.data);
                    debug_assert_eq!(parent_grads.len(), node.parents.len(), "op {}", node.op);
                    for (p, pg) in node.parents.iter().zip(parent_grads) {
                        let Some(pg) = pg else { continue };
                        if !p.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(pg.len(), p.numel(), "op {} grad size", node.op);
                        match grads.get_mut(&p.key()) {
                            Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                            None => {
                                grads.insert(p.key(), pg);
                            }
                        }
                    }
                    t.0.consumed.set(true);
                }
                None => {
                    let mut slot = t.0.grad.borrow_mut();
                    match slot.as_mut() {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                        None => *slot = Some(g),
                    }
                }
            }
        }
        self.0.consumed.set(true);
        Ok(())
    }

    /// Post-order over the grad-requiring subgraph reachable from `self`.
    fn topo_order(&self) -> Result<Vec<Tensor>> {
        let mut order = Vec::new();
        let mut visited = std::collections::HashSet::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.key()) {
                continue;
            }
            if t.0.consumed.get() && !t.has_node() {
                return Err(Error::State(format!(
                    "graph already consumed at a tensor of shape {:?}",
                    t.shape()
                )));
            }
            stack.push((t.clone(), true));
            if let Some(node) = t.0.node.borrow().as_ref() {
                for p in node.parents.iter().rev() {
                    if p.requires_grad() && !visited.contains(&p.key()) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }
        Ok(order)
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<f32> = self.data().iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape())
            .field("requires_grad", &self.requires_grad())
            .field("op", &self.op_name())
            .field("data", &preview)
            .finish()
    }
}
