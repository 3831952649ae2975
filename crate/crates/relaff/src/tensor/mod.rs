//! Dense f64 arrays with reverse-mode differentiation.
//!
//! Values form a DAG through parent links; `backward` recovers a
//! topological order by depth-first search and accumulates gradients in
//! reverse. Graphs are single-use: a second `backward` through the same
//! nodes is an error, rebuild the forward pass instead.

use std::cell::{Cell, RefCell};
use std::collections::BTreeMap;
use std::collections::HashSet;
use std::rc::Rc;

use thiserror::Error;

pub mod ops;
pub use ops::*;

pub type Result<T> = std::result::Result<T, TensorError>;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: dimension mismatch between shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected {expected}, got shape {shape:?}")]
    BadShape {
        op: &'static str,
        expected: &'static str,
        shape: Vec<usize>,
    },
    #[error("{op}: empty input")]
    EmptyInput { op: &'static str },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("graph already consumed by a previous backward; rebuild the forward pass")]
    GraphConsumed,
    #[error("{op}: non-finite value encountered")]
    NonFinite { op: &'static str },
    #[error("{op}: domain error: {what}")]
    Domain { op: &'static str, what: String },
    #[error("grad_check: epsilon must be positive, got {0}")]
    BadEpsilon(f64),
    #[error("parameter {0:?} already registered")]
    DuplicateParameter(String),
    #[error("unknown parameter {0:?}")]
    UnknownParameter(String),
}

type BackwardFn = Box<dyn Fn(&[f64])>;

struct Inner {
    shape: Vec<usize>,
    data: RefCell<Vec<f64>>,
    grad: RefCell<Option<Vec<f64>>>,
    requires_grad: bool,
    parents: Vec<Value>,
    backward: Option<BackwardFn>,
    consumed: Cell<bool>,
}

/// A dense array node in the computation graph.
#[derive(Clone)]
pub struct Value {
    inner: Rc<Inner>,
}

impl std::fmt::Debug for Value {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Value")
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .finish()
    }
}

impl Value {
    fn new(
        shape: Vec<usize>,
        data: Vec<f64>,
        requires_grad: bool,
        parents: Vec<Value>,
        backward: Option<BackwardFn>,
    ) -> Value {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Value {
            inner: Rc::new(Inner {
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad,
                parents,
                backward,
                consumed: Cell::new(false),
            }),
        }
    }

    /// A constant (no gradient tracking).
    pub fn constant(shape: &[usize], data: Vec<f64>) -> Value {
        Value::new(shape.to_vec(), data, false, Vec::new(), None)
    }

    /// A trainable leaf.
    pub fn parameter(shape: &[usize], data: Vec<f64>) -> Value {
        Value::new(shape.to_vec(), data, true, Vec::new(), None)
    }

    pub fn scalar(x: f64) -> Value {
        Value::constant(&[1], vec![x])
    }

    /// Interior node from an op. Gradient tracking is dropped entirely
    /// when no operand requires it.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<f64>,
        parents: Vec<Value>,
        backward: BackwardFn,
    ) -> Value {
        if parents.iter().any(|p| p.inner.requires_grad) {
            Value::new(shape, data, true, parents, Some(backward))
        } else {
            Value::new(shape, data, false, Vec::new(), None)
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn len(&self) -> usize {
        self.inner.data.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn data(&self) -> Vec<f64> {
        self.inner.data.borrow().clone()
    }

    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.len(), 1);
        self.inner.data.borrow()[0]
    }

    /// Overwrite the stored data in place (optimizer updates).
    pub fn set_data(&self, data: &[f64]) {
        let mut d = self.inner.data.borrow_mut();
        assert_eq!(d.len(), data.len(), "set_data length mismatch");
        d.copy_from_slice(data);
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
        self.inner.consumed.set(false);
    }

    pub(crate) fn accumulate_grad(&self, contribution: &[f64]) {
        let mut g = self.inner.grad.borrow_mut();
        match g.as_mut() {
            Some(buf) => {
                for (b, c) in buf.iter_mut().zip(contribution) {
                    *b += c;
                }
            }
            None => *g = Some(contribution.to_vec()),
        }
    }

    /// Same data, no gradient edges. Implements the stop-gradient rule for
    /// the context branch.
    pub fn detach(&self) -> Value {
        Value::constant(&self.inner.shape.clone(), self.data())
    }

    fn ptr_id(&self) -> usize {
        Rc::as_ptr(&self.inner) as usize
    }
}

/// Run reverse-mode accumulation from a scalar loss. Every reachable
/// `requires_grad` leaf receives its gradient; detached subgraphs receive
/// none. The traversed graph is consumed.
pub fn backward(loss: &Value) -> Result<()> {
    if loss.len() != 1 {
        return Err(TensorError::NonScalarLoss {
            shape: loss.shape().to_vec(),
        });
    }
    if loss.inner.consumed.get() {
        return Err(TensorError::GraphConsumed);
    }

    // Iterative post-order DFS: children end up after their parents when
    // reversed, so we walk `topo` from the back.
    let mut topo: Vec<Value> = Vec::new();
    let mut seen: HashSet<usize> = HashSet::new();
    let mut stack: Vec<(Value, bool)> = vec![(loss.clone(), false)];
    while let Some((node, processed)) = stack.pop() {
        if processed {
            topo.push(node);
            continue;
        }
        if !seen.insert(node.ptr_id()) {
            continue;
        }
        stack.push((node.clone(), true));
        for p in &node.inner.parents {
            if p.inner.requires_grad {
                stack.push((p.clone(), false));
            }
        }
    }

    loss.accumulate_grad(&[1.0]);
    for node in topo.iter().rev() {
        node.inner.consumed.set(true);
        if let Some(bf) = &node.inner.backward {
            let g = node
                .inner
                .grad
                .borrow()
                .clone()
                .unwrap_or_else(|| vec![0.0; node.len()]);
            bf(&g);
        }
    }
    Ok(())
}

/// Named trainable parameters with a frozen subset excluded from updates.
pub struct ParameterStore {
    params: BTreeMap<String, Value>,
    frozen: HashSet<String>,
}

impl Default for ParameterStore {
    fn default() -> Self {
        Self::new()
    }
}

impl ParameterStore {
    pub fn new() -> ParameterStore {
        ParameterStore {
            params: BTreeMap::new(),
            frozen: HashSet::new(),
        }
    }

    pub fn register(&mut self, name: &str, value: Value) -> Result<Value> {
        if self.params.contains_key(name) {
            return Err(TensorError::DuplicateParameter(name.to_string()));
        }
        self.params.insert(name.to_string(), value.clone());
        Ok(value)
    }

    pub fn get(&self, name: &str) -> Result<Value> {
        self.params
            .get(name)
            .cloned()
            .ok_or_else(|| TensorError::UnknownParameter(name.to_string()))
    }

    pub fn freeze(&mut self, name: &str) {
        self.frozen.insert(name.to_string());
    }

    /// Freeze every parameter whose name starts with `prefix`.
    pub fn freeze_prefix(&mut self, prefix: &str) {
        let names: Vec<String> = self
            .params
            .keys()
            .filter(|n| n.starts_with(prefix))
            .cloned()
            .collect();
        for n in names {
            self.frozen.insert(n);
        }
    }

    pub fn is_frozen(&self, name: &str) -> bool {
        self.frozen.contains(name)
    }

    /// Deterministic (name-sorted) iteration over all parameters.
    pub fn iter(&self) -> impl Iterator<Item = (&String, &Value)> {
        self.params.iter()
    }

    /// Name-sorted iteration over parameters eligible for updates.
    pub fn iter_trainable(&self) -> impl Iterator<Item = (&String, &Value)> {
        self.params.iter().filter(|(n, _)| !self.frozen.contains(*n))
    }

    pub fn zero_grads(&self) {
        for v in self.params.values() {
            v.zero_grad();
        }
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }
}

/// Central-difference gradient check. `f` rebuilds the forward pass from
/// scratch on every call; `theta` is perturbed in place and restored.
/// Returns the max over coordinates of |analytic - numeric| / max(1, |numeric|).
pub fn grad_check<F>(mut f: F, theta: &Value, eps: f64) -> Result<f64>
where
    F: FnMut(&Value) -> Result<Value>,
{
    if eps <= 0.0 {
        return Err(TensorError::BadEpsilon(eps));
    }
    theta.zero_grad();
    let loss = f(theta)?;
    backward(&loss)?;
    let analytic = theta
        .grad()
        .unwrap_or_else(|| vec![0.0; theta.len()]);

    let base = theta.data();
    let mut max_err: f64 = 0.0;
    for i in 0..base.len() {
        let mut plus = base.clone();
        plus[i] += eps;
        theta.set_data(&plus);
        let fp = f(theta)?.item();

        let mut minus = base.clone();
        minus[i] -= eps;
        theta.set_data(&minus);
        let fm = f(theta)?.item();

        let numeric = (fp - fm) / (2.0 * eps);
        let err = (analytic[i] - numeric).abs() / numeric.abs().max(1.0);
        max_err = max_err.max(err);
    }
    theta.set_data(&base);
    theta.zero_grad();
    Ok(max_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Negative control: an op with a deliberately corrupted backward rule
    /// (twice the true gradient) must be flagged by the checker.
    #[test]
    fn grad_check_catches_wrong_backward() {
        let bad_square = |x: &Value| -> Result<Value> {
            let d = x.data();
            let out = d.iter().map(|v| v * v).sum::<f64>();
            let px = x.clone();
            Ok(Value::from_op(
                vec![1],
                vec![out],
                vec![x.clone()],
                Box::new(move |g| {
                    let d = px.data();
                    let wrong: Vec<f64> = d.iter().map(|v| 4.0 * v * g[0]).collect();
                    px.accumulate_grad(&wrong);
                }),
            ))
        };
        let x = Value::parameter(&[3], vec![0.5, -1.2, 2.0]);
        let err = grad_check(bad_square, &x, 1e-5).unwrap();
        assert!(err > 1e-2, "corrupted backward went undetected: {err}");
    }

    #[test]
    fn constant_has_no_grad() {
        let c = Value::constant(&[3], vec![1.0, 2.0, 3.0]);
        assert!(!c.requires_grad());
        assert!(c.grad().is_none());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let w = Value::parameter(&[2], vec![1.0, 2.0]);
        let y = relu(&w).unwrap();
        assert!(matches!(
            backward(&y),
            Err(TensorError::NonScalarLoss { .. })
        ));
    }

    #[test]
    fn second_backward_errors() {
        let w = Value::parameter(&[2], vec![1.0, 2.0]);
        let loss = sum(&w).unwrap();
        backward(&loss).unwrap();
        assert!(matches!(backward(&loss), Err(TensorError::GraphConsumed)));
    }

    #[test]
    fn loss_independent_of_param_gives_zero() {
        let w = Value::parameter(&[2], vec![1.0, 2.0]);
        let x = Value::parameter(&[2], vec![3.0, 4.0]);
        let loss = sum(&x).unwrap();
        w.zero_grad();
        backward(&loss).unwrap();
        assert!(w.grad().is_none());
        assert_eq!(x.grad().unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn detach_stops_gradient() {
        let x = Value::parameter(&[2], vec![1.0, 2.0]);
        let w = Value::parameter(&[2], vec![3.0, 5.0]);
        let loss = sum(&mul(&x.detach(), &w).unwrap()).unwrap();
        backward(&loss).unwrap();
        assert!(x.grad().is_none());
        assert_eq!(w.grad().unwrap(), vec![1.0, 2.0]);
        assert_eq!(x.detach().data(), x.data());
    }

    #[test]
    fn grad_accumulates_across_fanout() {
        // y = sum(x) + sum(x) -> dy/dx = 2
        let x = Value::parameter(&[2], vec![1.0, 1.0]);
        let loss = add(&sum(&x).unwrap(), &sum(&x).unwrap()).unwrap();
        backward(&loss).unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 2.0]);
    }

    #[test]
    fn grad_check_quadratic() {
        let theta = Value::parameter(&[4], vec![0.3, -0.7, 1.2, 0.05]);
        let err = grad_check(|t| sum(&mul(t, t)?), &theta, 1e-5).unwrap();
        assert!(err < 1e-8, "err = {err}");
    }

    #[test]
    fn grad_check_linear_is_exact_to_machine_precision() {
        let theta = Value::parameter(&[3], vec![0.5, -1.5, 2.0]);
        let c = Value::constant(&[3], vec![2.0, 3.0, -1.0]);
        let err = grad_check(|t| sum(&mul(t, &c)?), &theta, 1e-5).unwrap();
        assert!(err < 1e-9, "err = {err}");
    }

    #[test]
    fn grad_check_rejects_bad_epsilon() {
        let theta = Value::parameter(&[1], vec![1.0]);
        assert!(matches!(
            grad_check(|t| sum(t), &theta, 0.0),
            Err(TensorError::BadEpsilon(_))
        ));
    }

    #[test]
    fn parameter_store_names_unique() {
        let mut ps = ParameterStore::new();
        ps.register("w", Value::parameter(&[1], vec![0.0])).unwrap();
        assert!(ps.register("w", Value::parameter(&[1], vec![0.0])).is_err());
    }

    #[test]
    fn frozen_excluded_from_trainable_iteration() {
        let mut ps = ParameterStore::new();
        ps.register("a", Value::parameter(&[1], vec![0.0])).unwrap();
        ps.register("b", Value::parameter(&[1], vec![0.0])).unwrap();
        ps.freeze("a");
        let names: Vec<&String> = ps.iter_trainable().map(|(n, _)| n).collect();
        assert_eq!(names, vec!["b"]);
        assert!(ps.is_frozen("a"));
    }
}
