//! Dense row-major `f64` tensors with define-by-run reverse-mode differentiation.
//!
//! Every operation that has at least one gradient-tracking input records a
//! [`GradFn`] on its output node. Node ids are handed out in creation order,
//! so sorting the reachable nodes by descending id yields a valid reverse
//! topological order; [`GradTape`] materializes that order for a given root.
//!
//! Tensors are immutable after construction. The only interior mutability is
//! the gradient accumulator, which [`Tensor::backward`] fills.

mod linalg;
mod nn;
mod ops;
pub mod gradcheck;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};

pub use linalg::{bmm, linear, matmul};
pub use nn::{conv1d, dropout, embedding, layer_norm, softmax, LAYER_NORM_EPS};

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

/// Vector-Jacobian product: receives the upstream gradient of the output and
/// returns one optional gradient per recorded input.
pub type BackwardFn = Box<dyn Fn(&[f64]) -> Vec<Option<Vec<f64>>> + Send + Sync>;

pub(crate) struct GradFn {
    op: &'static str,
    inputs: Vec<Tensor>,
    backward: BackwardFn,
}

struct Node {
    id: u64,
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
    requires_grad: bool,
    grad_fn: Option<GradFn>,
    grad: Mutex<Option<Vec<f64>>>,
}

/// Shared handle to an immutable tensor node.
#[derive(Clone)]
pub struct Tensor(Arc<Node>);

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn build(
        shape: Vec<usize>,
        data: Arc<Vec<f64>>,
        requires_grad: bool,
        grad_fn: Option<GradFn>,
    ) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor(Arc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            requires_grad,
            grad_fn,
            grad: Mutex::new(None),
        }))
    }

    /// Constant tensor (no gradient tracking).
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) || numel(shape) != data.len() {
            return Err(Error::Shape {
                op: "new",
                lhs: shape.to_vec(),
                rhs: vec![data.len()],
            });
        }
        Ok(Self::build(shape.to_vec(), Arc::new(data), false, None))
    }

    /// Gradient-tracking leaf.
    pub fn param(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        Ok(Self::new(shape, data)?.tracked())
    }

    /// Leaf sharing storage with an existing buffer.
    pub fn from_shared(shape: &[usize], data: Arc<Vec<f64>>, requires_grad: bool) -> Result<Self> {
        if shape.contains(&0) || numel(shape) != data.len() {
            return Err(Error::Shape {
                op: "from_shared",
                lhs: shape.to_vec(),
                rhs: vec![data.len()],
            });
        }
        Ok(Self::build(shape.to_vec(), data, requires_grad, None))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        assert!(shape.iter().all(|&d| d > 0), "zero extent in {shape:?}");
        Self::build(shape.to_vec(), Arc::new(vec![value; numel(shape)]), false, None)
    }

    pub fn scalar(value: f64) -> Self {
        Self::build(vec![1], Arc::new(vec![value]), false, None)
    }

    pub fn eye(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self::build(vec![n, n], Arc::new(data), false, None)
    }

    /// New leaf over the same values that does track gradients.
    pub fn tracked(&self) -> Self {
        Self::build(self.0.shape.clone(), self.0.data.clone(), true, None)
    }

    /// New leaf over the same values, cut from the graph.
    pub fn detach(&self) -> Self {
        Self::build(self.0.shape.clone(), self.0.data.clone(), false, None)
    }

    /// Records the output of a differentiable operation. When no input tracks
    /// gradients the backward closure is dropped and the result is a constant.
    pub fn from_op(
        op: &'static str,
        shape: Vec<usize>,
        data: Vec<f64>,
        inputs: Vec<Tensor>,
        backward: BackwardFn,
    ) -> Self {
        let requires_grad = inputs.iter().any(Tensor::requires_grad);
        let grad_fn = requires_grad.then(|| GradFn {
            op,
            inputs,
            backward,
        });
        Self::build(shape, Arc::new(data), requires_grad, grad_fn)
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn shared_data(&self) -> Arc<Vec<f64>> {
        self.0.data.clone()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.as_ref().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.0.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn op_name(&self) -> Option<&'static str> {
        self.0.grad_fn.as_ref().map(|g| g.op)
    }

    /// Accumulated gradient, if any backward pass reached this tensor.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.lock().expect("grad lock").clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.lock().expect("grad lock") = None;
    }

    fn accumulate(&self, g: Vec<f64>) {
        let mut slot = self.0.grad.lock().expect("grad lock");
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
            None => *slot = Some(g),
        }
    }

    /// Back-propagates from a scalar, accumulating into every reachable
    /// gradient-tracking tensor. Repeated calls add up.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Err(Error::Contract(
                "backward on a tensor that is not connected to any tracked input".into(),
            ));
        }
        let tape = GradTape::record(self);
        let mut pending: HashMap<u64, Vec<f64>> = HashMap::new();
        pending.insert(self.id(), vec![1.0]);
        for node in tape.nodes.iter().rev() {
            let Some(g) = pending.remove(&node.id()) else {
                continue;
            };
            if let Some(gf) = &node.0.grad_fn {
                let input_grads = (gf.backward)(&g);
                debug_assert_eq!(input_grads.len(), gf.inputs.len(), "{}", gf.op);
                for (input, ig) in gf.inputs.iter().zip(input_grads) {
                    let Some(ig) = ig else { continue };
                    if !input.requires_grad() {
                        continue;
                    }
                    debug_assert_eq!(ig.len(), input.numel(), "{} grad size", gf.op);
                    match pending.get_mut(&input.id()) {
                        Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, b)| *a += b),
                        None => {
                            pending.insert(input.id(), ig);
                        }
                    }
                }
            }
            node.accumulate(g);
        }
        Ok(())
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .field("op", &self.op_name())
            .finish()
    }
}

/// The gradient-tracking subgraph under a root, in forward (creation) order.
pub struct GradTape {
    nodes: Vec<Tensor>,
}

impl GradTape {
    pub fn record(root: &Tensor) -> Self {
        let mut seen = HashSet::new();
        let mut nodes = Vec::new();
        let mut stack = vec![root.clone()];
        while let Some(t) = stack.pop() {
            if !t.requires_grad() || !seen.insert(t.id()) {
                continue;
            }
            if let Some(gf) = &t.0.grad_fn {
                stack.extend(gf.inputs.iter().cloned());
            }
            nodes.push(t);
        }
        nodes.sort_by_key(Tensor::id);
        GradTape { nodes }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Operation names in reverse traversal order; leaves report `None`.
    pub fn reverse_ops(&self) -> Vec<Option<&'static str>> {
        self.nodes.iter().rev().map(Tensor::op_name).collect()
    }

    /// Ids in the order backward visits them.
    pub fn reverse_ids(&self) -> Vec<u64> {
        self.nodes.iter().rev().map(Tensor::id).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_inconsistent_shape() {
        assert!(Tensor::new(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(&[0], vec![]).is_err());
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let x = Tensor::param(&[2, 2], vec![1.0, -2.0, 3.0, 0.5]).unwrap();
        x.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0; 4]);
    }

    #[test]
    fn backward_of_square_sum_is_twice_x() {
        let vals = vec![1.0, -2.0, 3.0, 0.5];
        let x = Tensor::param(&[4], vals.clone()).unwrap();
        x.mul(&x).unwrap().sum().backward().unwrap();
        let expect: Vec<f64> = vals.iter().map(|v| 2.0 * v).collect();
        assert_eq!(x.grad().unwrap(), expect);
    }

    #[test]
    fn non_scalar_backward_is_contract_error() {
        let x = Tensor::param(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let y = x.scale(2.0);
        assert!(matches!(y.backward(), Err(Error::Contract(_))));
    }

    #[test]
    fn constants_do_not_record() {
        let a = Tensor::ones(&[2]);
        let b = a.add(&a).unwrap();
        assert!(!b.requires_grad());
        assert!(b.op_name().is_none());
    }

    #[test]
    fn tape_visits_each_node_once_in_reverse_order() {
        let x = Tensor::param(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let y = x.mul(&x).unwrap();
        let z = y.add(&x).unwrap().add(&y).unwrap();
        let loss = z.sum();
        let tape = GradTape::record(&loss);
        let ids = tape.reverse_ids();
        let unique: HashSet<_> = ids.iter().collect();
        assert_eq!(unique.len(), ids.len());
        assert!(ids.windows(2).all(|w| w[0] > w[1]));
        assert_eq!(ids[0], loss.id());
        assert_eq!(tape.len(), 5);
        loss.backward().unwrap();
        // d/dx (2x^2 + x) = 4x + 1
        assert_eq!(x.grad().unwrap(), vec![5.0, 9.0, 13.0]);
    }

    #[test]
    fn gradient_is_linear_across_backward_calls() {
        let vals = vec![0.3, -1.2, 2.0];
        let fa = |x: &Tensor| x.mul(x).unwrap().sum();
        let fb = |x: &Tensor| x.scale(3.0).exp().sum();

        let x = Tensor::param(&[3], vals.clone()).unwrap();
        fa(&x).add(&fb(&x)).unwrap().backward().unwrap();
        let joint = x.grad().unwrap();

        let x2 = Tensor::param(&[3], vals).unwrap();
        fa(&x2).backward().unwrap();
        fb(&x2).backward().unwrap();
        let separate = x2.grad().unwrap();
        for (a, b) in joint.iter().zip(&separate) {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn detach_cuts_graph() {
        let x = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
        let y = x.scale(2.0).detach();
        assert!(!y.requires_grad());
        assert_eq!(y.data(), &[2.0, 4.0]);
    }

    #[test]
    fn tensor_is_send_and_sync() {
        fn check<T: Send + Sync>() {}
        check::<Tensor>();
    }
}
