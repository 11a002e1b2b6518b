use std::cell::{Cell, Ref, RefCell};
use std::collections::HashSet;
use std::fmt;
use std::rc::Rc;

use rand::Rng;
use rand_distr::StandardNormal;

use super::{c, Real};
use crate::error::{Error, Result};

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
}

fn fresh_id() -> u64 {
    NEXT_ID.with(|n| {
        let id = n.get();
        n.set(id + 1);
        id
    })
}

/// Backward rule of one recorded operation.
///
/// Arguments: upstream gradient of the node, the node's own output data
/// (some rules reuse it instead of recomputing), and the parent tensors the
/// rule accumulates into.
pub(super) type BackwardFn<R> = Box<dyn Fn(&[R], &[R], &[Tensor<R>])>;

pub(super) struct Inner<R: Real> {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<R>>,
    grad: RefCell<Option<Vec<R>>>,
    tracked: bool,
    parents: Vec<Tensor<R>>,
    backward: Option<BackwardFn<R>>,
}

/// Dense row-major tensor, cheaply cloneable (shared storage).
///
/// A tensor is either a leaf (constructed directly, optionally tracked for
/// gradients) or the output of an operation on tracked inputs, in which case
/// it carries the recorded backward rule of that operation.
pub struct Tensor<R: Real> {
    pub(super) inner: Rc<Inner<R>>,
}

impl<R: Real> Clone for Tensor<R> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<R: Real> fmt::Debug for Tensor<R> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let data = self.inner.data.borrow();
        let head: Vec<&R> = data.iter().take(8).collect();
        write!(
            f,
            "Tensor{{shape: {:?}, tracked: {}, data: {:?}{}}}",
            self.inner.shape,
            self.inner.tracked,
            head,
            if data.len() > 8 { ", .." } else { "" }
        )
    }
}

impl<R: Real> Tensor<R> {
    fn build(
        shape: Vec<usize>,
        data: Vec<R>,
        tracked: bool,
        parents: Vec<Tensor<R>>,
        backward: Option<BackwardFn<R>>,
    ) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        debug_assert!(data.iter().all(|x| x.is_finite()), "non-finite tensor data");
        Tensor {
            inner: Rc::new(Inner {
                id: fresh_id(),
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                tracked,
                parents,
                backward,
            }),
        }
    }

    /// Untracked leaf from raw data. Validates shape/data agreement and
    /// finiteness.
    pub fn new(shape: &[usize], data: Vec<R>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() || shape.iter().any(|&d| d == 0) {
            return Err(Error::Dimension {
                op: "new",
                lhs: shape.to_vec(),
                rhs: vec![data.len()],
            });
        }
        if !data.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite {
                context: "tensor construction".to_string(),
                batch_ids: vec![],
            });
        }
        Ok(Self::build(shape.to_vec(), data, false, vec![], None))
    }

    /// Tracked leaf (trainable parameter). Gradients accumulate here.
    pub fn param(shape: &[usize], data: Vec<R>) -> Result<Self> {
        let t = Self::new(shape, data)?;
        let data = t.inner.data.borrow().clone();
        Ok(Self::build(t.inner.shape.clone(), data, true, vec![], None))
    }

    /// Output node of an op. Tracking is inherited from `parents`; parents
    /// and the backward rule are only recorded when some parent is tracked.
    pub(super) fn from_op(
        shape: Vec<usize>,
        data: Vec<R>,
        parents: Vec<Tensor<R>>,
        backward: BackwardFn<R>,
    ) -> Self {
        let tracked = parents.iter().any(|p| p.inner.tracked);
        if tracked {
            Self::build(shape, data, true, parents, Some(backward))
        } else {
            Self::build(shape, data, false, vec![], None)
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel: usize = shape.iter().product();
        Self::build(shape.to_vec(), vec![R::zero(); numel], false, vec![], None)
    }

    pub fn ones(shape: &[usize]) -> Self {
        let numel: usize = shape.iter().product();
        Self::build(shape.to_vec(), vec![R::one(); numel], false, vec![], None)
    }

    pub fn full(shape: &[usize], value: R) -> Self {
        let numel: usize = shape.iter().product();
        Self::build(shape.to_vec(), vec![value; numel], false, vec![], None)
    }

    pub fn scalar(value: R) -> Self {
        Self::build(vec![1], vec![value], false, vec![], None)
    }

    /// Tracked leaf with entries drawn from `N(0, std^2)`.
    pub fn randn_param<G: Rng>(shape: &[usize], std: f64, rng: &mut G) -> Self {
        let numel: usize = shape.iter().product();
        let data: Vec<R> = (0..numel)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                c::<R>(z * std)
            })
            .collect();
        Self::build(shape.to_vec(), data, true, vec![], None)
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        self.inner.data.borrow().len()
    }

    pub fn is_vector(&self) -> bool {
        self.inner.shape.len() == 1
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }

    pub fn is_tracked(&self) -> bool {
        self.inner.tracked
    }

    pub(super) fn id(&self) -> u64 {
        self.inner.id
    }

    /// Borrow of the underlying buffer.
    pub fn data(&self) -> Ref<'_, Vec<R>> {
        self.inner.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<R> {
        self.inner.data.borrow().clone()
    }

    /// Value of a scalar tensor.
    pub fn value(&self) -> R {
        debug_assert!(self.is_scalar());
        self.inner.data.borrow()[0]
    }

    /// Overwrite the buffer in place (parameter updates). Length must match.
    pub fn set_data(&self, new: &[R]) -> Result<()> {
        let mut data = self.inner.data.borrow_mut();
        if data.len() != new.len() {
            return Err(Error::Dimension {
                op: "set_data",
                lhs: self.inner.shape.clone(),
                rhs: vec![new.len()],
            });
        }
        data.copy_from_slice(new);
        Ok(())
    }

    /// Current gradient, if any has been accumulated.
    pub fn grad(&self) -> Option<Vec<R>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// Untracked copy of the current values.
    pub fn detach(&self) -> Tensor<R> {
        Self::build(
            self.inner.shape.clone(),
            self.inner.data.borrow().clone(),
            false,
            vec![],
            None,
        )
    }

    pub(super) fn accumulate_grad(&self, contribution: &[R]) {
        if !self.inner.tracked {
            return;
        }
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(g) => {
                for (gi, ci) in g.iter_mut().zip(contribution) {
                    *gi += *ci;
                }
            }
            None => *slot = Some(contribution.to_vec()),
        }
    }

    /// Reverse-mode sweep from a scalar root. Every tracked leaf reachable
    /// from the root receives its gradient; repeated calls accumulate until
    /// [`Tensor::zero_grad`] clears them.
    pub fn backward(&self) -> Result<()> {
        if !self.is_scalar() {
            return Err(Error::Contract(format!(
                "backward requires a scalar root, got shape {:?}",
                self.inner.shape
            )));
        }
        if !self.inner.tracked {
            return Err(Error::Contract(
                "backward requires a tracked root".to_string(),
            ));
        }

        // Iterative post-order DFS so deep graphs cannot overflow the stack.
        let mut order: Vec<Tensor<R>> = Vec::new();
        let mut visited: HashSet<u64> = HashSet::new();
        let mut stack: Vec<(Tensor<R>, usize)> = vec![(self.clone(), 0)];
        visited.insert(self.id());
        while let Some((node, child)) = stack.pop() {
            if child < node.inner.parents.len() {
                stack.push((node.clone(), child + 1));
                let parent = node.inner.parents[child].clone();
                if parent.inner.tracked && visited.insert(parent.id()) {
                    stack.push((parent, 0));
                }
            } else {
                order.push(node);
            }
        }

        self.accumulate_grad(&[R::one()]);
        for node in order.iter().rev() {
            if let Some(rule) = &node.inner.backward {
                let grad = match node.inner.grad.borrow().clone() {
                    Some(g) => g,
                    None => continue,
                };
                let out = node.inner.data.borrow().clone();
                rule(&grad, &out, &node.inner.parents);
            }
        }
        Ok(())
    }
}
