//! Named parameter storage, graph binding, and the AdamW update.

use indexmap::IndexMap;
use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::graph::{Gradients, Graph, NodeId};
use crate::scalar::{s, Scalar};

/// Ordered name -> tensor map. Insertion order is the optimizer update order
/// and the checkpoint layout, so construction must be deterministic.
#[derive(Clone)]
pub struct Params<F: Scalar> {
    map: IndexMap<String, Array2<F>>,
}

impl<F: Scalar> Default for Params<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Params<F> {
    pub fn new() -> Self {
        Params {
            map: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array2<F>) {
        let name = name.into();
        assert!(
            self.map.insert(name.clone(), value).is_none(),
            "duplicate parameter {name}"
        );
    }

    pub fn get(&self, name: &str) -> &Array2<F> {
        self.map
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Array2<F> {
        self.map
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Array2<F>)> {
        self.map.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn n_elements(&self) -> usize {
        self.map.values().map(|v| v.len()).sum()
    }

    /// Copy every tensor whose name exists in both stores from `other`.
    /// Returns the copied names (used when a flow stage warm-starts from an
    /// encoder checkpoint).
    pub fn load_matching(&mut self, other: &Params<F>) -> Vec<String> {
        let mut copied = Vec::new();
        for (name, value) in other.iter() {
            if let Some(slot) = self.map.get_mut(name) {
                assert_eq!(
                    slot.dim(),
                    value.dim(),
                    "shape mismatch loading parameter {name}"
                );
                slot.assign(value);
                copied.push(name.clone());
            }
        }
        copied
    }
}

/// Gaussian init, std 0.02 (token-embedding convention).
pub fn init_normal<F: Scalar>(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<F> {
    init_normal_std(rng, rows, cols, 0.02)
}

pub fn init_normal_std<F: Scalar>(
    rng: &mut ChaCha8Rng,
    rows: usize,
    cols: usize,
    std: f64,
) -> Array2<F> {
    Array2::from_shape_fn((rows, cols), |_| {
        let z: f64 = StandardNormal.sample(rng);
        s(z * std)
    })
}

pub fn init_zeros<F: Scalar>(rows: usize, cols: usize) -> Array2<F> {
    Array2::zeros((rows, cols))
}

pub fn init_ones<F: Scalar>(rows: usize, cols: usize) -> Array2<F> {
    Array2::from_elem((rows, cols), F::one())
}

/// One training/inference pass: a graph with every parameter bound as a leaf.
pub struct Session<F: Scalar> {
    pub graph: Graph<F>,
    ids: IndexMap<String, NodeId>,
}

impl<F: Scalar> Session<F> {
    pub fn new(params: &Params<F>) -> Self {
        Self::with_freeze(params, |_| false)
    }

    /// Bind parameters, marking those for which `frozen(name)` holds as
    /// plain inputs (no gradient, no update).
    pub fn with_freeze(params: &Params<F>, frozen: impl Fn(&str) -> bool) -> Self {
        let mut graph = Graph::new();
        let mut ids = IndexMap::new();
        for (name, value) in params.iter() {
            let id = if frozen(name) {
                graph.input(value.clone())
            } else {
                graph.param(value.clone())
            };
            ids.insert(name.clone(), id);
        }
        Session { graph, ids }
    }

    pub fn p(&self, name: &str) -> NodeId {
        *self
            .ids
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} not bound"))
    }

    /// Collect per-parameter gradients by name after a backward pass.
    pub fn grads_by_name(&self, grads: &Gradients<F>) -> IndexMap<String, Array2<F>> {
        let mut out = IndexMap::new();
        for (name, &id) in &self.ids {
            if let Some(g) = grads.get(id) {
                out.insert(name.clone(), g.clone());
            }
        }
        out
    }
}

/// AdamW with decoupled weight decay and bias correction.
pub struct AdamW<F: Scalar> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: usize,
    m: IndexMap<String, Array2<F>>,
    v: IndexMap<String, Array2<F>>,
}

impl<F: Scalar> AdamW<F> {
    pub fn new(lr: f64) -> Self {
        AdamW {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            step: 0,
            m: IndexMap::new(),
            v: IndexMap::new(),
        }
    }

    pub fn step(&mut self, params: &mut Params<F>, grads: &IndexMap<String, Array2<F>>) {
        self.step += 1;
        let b1 = s::<F>(self.beta1);
        let b2 = s::<F>(self.beta2);
        let one = F::one();
        let bc1 = s::<F>(1.0 - self.beta1.powi(self.step as i32));
        let bc2 = s::<F>(1.0 - self.beta2.powi(self.step as i32));
        let lr = s::<F>(self.lr);
        let eps = s::<F>(self.eps);
        let wd = s::<F>(self.lr * self.weight_decay);

        let names: Vec<String> = params.names().cloned().collect();
        for name in names {
            let Some(g) = grads.get(&name) else { continue };
            let p = params.get_mut(&name);
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Array2::zeros(p.dim()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Array2::zeros(p.dim()));
            ndarray::Zip::from(p)
                .and(m)
                .and(v)
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = b1 * *m + (one - b1) * g;
                    *v = b2 * *v + (one - b2) * g * g;
                    let mhat = *m / bc1;
                    let vhat = *v / bc2;
                    *p = *p - lr * mhat / (vhat.sqrt() + eps) - wd * *p;
                });
        }
    }

    /// Flattened optimizer state for checkpointing (moment tensors keyed by
    /// a reserved prefix plus the step counter).
    pub fn export_state(&self) -> (usize, IndexMap<String, Array2<F>>) {
        let mut out = IndexMap::new();
        for (name, m) in &self.m {
            out.insert(format!("opt.m.{name}"), m.clone());
        }
        for (name, v) in &self.v {
            out.insert(format!("opt.v.{name}"), v.clone());
        }
        (self.step, out)
    }

    pub fn import_state(&mut self, step: usize, state: &IndexMap<String, Array2<F>>) {
        self.step = step;
        for (name, value) in state {
            if let Some(rest) = name.strip_prefix("opt.m.") {
                self.m.insert(rest.to_string(), value.clone());
            } else if let Some(rest) = name.strip_prefix("opt.v.") {
                self.v.insert(rest.to_string(), value.clone());
            }
        }
    }
}

/// Draw a uniform f64 and convert; keeps generic code off rand's type-driven
/// distribution dispatch.
pub fn uniform<F: Scalar>(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> F {
    s(rng.random_range(lo..hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn adamw_moves_against_gradient() {
        let mut params: Params<f64> = Params::new();
        params.insert("w", array![[1.0, -1.0]]);
        let mut opt = AdamW::new(0.1);
        let mut grads = IndexMap::new();
        grads.insert("w".to_string(), array![[1.0, -1.0]]);
        opt.step(&mut params, &grads);
        let w = params.get("w");
        assert!(w[(0, 0)] < 1.0);
        assert!(w[(0, 1)] > -1.0);
    }

    #[test]
    fn optimizer_state_round_trips() {
        let mut params: Params<f64> = Params::new();
        params.insert("w", array![[0.5]]);
        let grads = {
            let mut g = IndexMap::new();
            g.insert("w".to_string(), array![[0.3]]);
            g
        };

        let mut a = AdamW::new(0.05);
        a.step(&mut params.clone(), &grads);
        let (step, state) = a.export_state();

        let mut b = AdamW::new(0.05);
        b.import_state(step, &state);

        // One more identical step from either optimizer matches exactly.
        let mut pa = params.clone();
        let mut pb = params.clone();
        a.step(&mut pa, &grads);
        b.step(&mut pb, &grads);
        assert_eq!(pa.get("w")[(0, 0)].to_bits(), pb.get("w")[(0, 0)].to_bits());
    }

    #[test]
    fn frozen_params_get_no_grads() {
        let mut params: Params<f64> = Params::new();
        params.insert("a", array![[1.0]]);
        params.insert("b", array![[2.0]]);
        let mut sess = Session::with_freeze(&params, |n| n == "a");
        let (a, b) = (sess.p("a"), sess.p("b"));
        let x = sess.graph.matmul(a, b);
        let loss = sess.graph.mean_all(x);
        let grads = sess.graph.backward(loss);
        let named = sess.grads_by_name(&grads);
        assert!(!named.contains_key("a"));
        assert!(named.contains_key("b"));
    }
}
