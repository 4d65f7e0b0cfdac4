//! Reverse-mode autodiff tape over dynamic-dimension `ndarray` arrays.
//!
//! A `Tape` records one forward pass as a sequence of nodes. Each op node
//! carries a closure that maps the node's output gradient to gradient
//! contributions for its parents. `backward` walks the tape once in reverse.
//! Tapes are single-use: build, run `backward`, drop.

use std::cell::RefCell;
use std::rc::Rc;

pub type Arr = ndarray::ArrayD<f64>;

/// Handle to a node on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

/// Gradient sink passed to backward closures: `sink(parent_id, contribution)`.
pub type GradSink<'s> = dyn FnMut(usize, Arr) + 's;

type BackFn = Box<dyn Fn(&Arr, &mut GradSink)>;

struct Node {
    value: Rc<Arr>,
    back: Option<BackFn>,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Push an op node. `back` receives the output gradient and a sink for
    /// parent contributions.
    pub fn push(&self, value: Arr, back: BackFn) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            back: Some(back),
        });
        Var(nodes.len() - 1)
    }

    /// Push a node with no backward function (constants and leaves).
    pub fn leaf(&self, value: Arr) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            back: None,
        });
        Var(nodes.len() - 1)
    }

    /// Alias for `leaf` used for values that never need a gradient.
    pub fn constant(&self, value: Arr) -> Var {
        self.leaf(value)
    }

    pub fn value(&self, v: Var) -> Rc<Arr> {
        Rc::clone(&self.nodes.borrow()[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let val = self.value(v);
        debug_assert_eq!(val.len(), 1, "scalar() on non-scalar node");
        *val.iter().next().unwrap()
    }

    /// Run reverse accumulation from `root`, seeding with ones of the root's
    /// shape. Gradients of op nodes are freed once consumed; gradients of
    /// leaves stay available in the returned `Gradients`.
    pub fn backward(&self, root: Var) -> Gradients {
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Arr>> = (0..nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Arr::ones(nodes[root.0].value.raw_dim()));
        for i in (0..=root.0).rev() {
            if grads[i].is_none() {
                continue;
            }
            let Some(back) = nodes[i].back.as_ref() else {
                continue; // leaf: keep the gradient
            };
            let g = grads[i].take().unwrap();
            // Split the buffer so the sink can mutate entries below i.
            let (lower, _) = grads.split_at_mut(i);
            let mut sink = |parent: usize, contrib: Arr| {
                debug_assert!(parent < i, "backward edge must point to earlier node");
                match &mut lower[parent] {
                    Some(acc) => *acc += &contrib,
                    slot @ None => *slot = Some(contrib),
                }
            };
            back(&g, &mut sink);
        }
        Gradients { grads }
    }
}

/// Gradients of leaf nodes after a backward pass.
pub struct Gradients {
    grads: Vec<Option<Arr>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Arr> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Arr> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ops;
    use ndarray::IxDyn;

    #[test]
    fn backward_accumulates_shared_parent() {
        let t = Tape::new();
        let a = t.leaf(Arr::from_elem(IxDyn(&[3]), 2.0));
        let y = ops::mul(&t, a, a); // y = a^2
        let s = ops::sum_all(&t, y);
        let grads = t.backward(s);
        let g = grads.get(a).unwrap();
        for &v in g.iter() {
            assert!((v - 4.0).abs() < 1e-12); // d(a^2)/da = 2a = 4
        }
    }

    #[test]
    fn unused_leaf_has_no_gradient() {
        let t = Tape::new();
        let a = t.leaf(Arr::from_elem(IxDyn(&[2]), 1.0));
        let b = t.leaf(Arr::from_elem(IxDyn(&[2]), 1.0));
        let s = ops::sum_all(&t, a);
        let grads = t.backward(s);
        assert!(grads.get(b).is_none());
        assert!(grads.get(a).is_some());
    }
}
