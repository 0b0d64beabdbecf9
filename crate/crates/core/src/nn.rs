//! Parameter storage and the small set of layers the grounding network needs.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Matrix, Tape, Var};
use crate::error::{Result, StvgError};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Named trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Matrix<T>>,
}

/// Serializable form of one tensor (always stored as `f64`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix<T>) -> ParamId {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter `{name}`");
        self.names.push(name);
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Matrix<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix<T> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn to_named(&self) -> Vec<NamedTensor> {
        self.names
            .iter()
            .zip(&self.tensors)
            .map(|(n, t)| NamedTensor {
                name: n.clone(),
                shape: [t.rows, t.cols],
                data: t.data.iter().map(|v| v.as_f64()).collect(),
            })
            .collect()
    }

    /// Overwrites every tensor from `named`; names and shapes must match exactly.
    pub fn load_named(&mut self, named: &[NamedTensor]) -> Result<()> {
        if named.len() != self.tensors.len() {
            return Err(StvgError::Config(format!(
                "parameter file has {} tensors, model expects {}",
                named.len(),
                self.tensors.len()
            )));
        }
        for (k, nt) in named.iter().enumerate() {
            let t = &mut self.tensors[k];
            if nt.name != self.names[k] || nt.shape != [t.rows, t.cols] || nt.data.len() != t.data.len() {
                return Err(StvgError::Config(format!(
                    "tensor {k}: expected `{}` {:?}, found `{}` {:?}",
                    self.names[k],
                    [t.rows, t.cols],
                    nt.name,
                    nt.shape
                )));
            }
            for (dst, src) in t.data.iter_mut().zip(&nt.data) {
                *dst = T::lit(*src);
            }
        }
        Ok(())
    }
}

/// Gradient buffers shaped like a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Grads<T> {
    pub tensors: Vec<Matrix<T>>,
}

impl<T: Scalar> Grads<T> {
    pub fn zeros_like(store: &ParamStore<T>) -> Self {
        Grads {
            tensors: store.tensors.iter().map(|t| Matrix::zeros(t.rows, t.cols)).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Matrix<T> {
        &self.tensors[id.0]
    }

    pub fn accumulate(&mut self, other: &Grads<T>) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += *y;
            }
        }
    }

    pub fn scale(&mut self, c: T) {
        for t in &mut self.tensors {
            for v in &mut t.data {
                *v *= c;
            }
        }
    }

    pub fn global_norm(&self) -> T {
        self.tensors
            .iter()
            .flat_map(|t| t.data.iter())
            .map(|v| *v * *v)
            .sum::<T>()
            .sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|v| *v == T::zero()))
    }
}

/// A tape bound to a parameter store; parameters become leaves on first use.
pub struct Graph<'p, T> {
    pub tape: Tape<T>,
    store: &'p ParamStore<T>,
    bound: Vec<Option<Var>>,
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new(store: &'p ParamStore<T>) -> Self {
        Graph {
            tape: Tape::new(),
            store,
            bound: vec![None; store.len()],
        }
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let v = self.tape.leaf(self.store.get(id).clone());
        self.bound[id.0] = Some(v);
        v
    }

    /// Constant input from `f64` data.
    pub fn input(&mut self, rows: usize, cols: usize, data: &[f64]) -> Var {
        let m = Matrix::from_vec(rows, cols, data.iter().map(|v| T::lit(*v)).collect());
        self.tape.leaf(m)
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> Var {
        self.tape.leaf(Matrix::zeros(rows, cols))
    }

    /// Gradient of the scalar `loss` with respect to every parameter.
    pub fn gradients(&self, loss: Var) -> Grads<T> {
        let node_grads = self.tape.backward(loss);
        let mut grads = Grads::zeros_like(self.store);
        for (k, b) in self.bound.iter().enumerate() {
            if let Some(v) = b {
                if let Some(Some(g)) = node_grads.get(v.index()) {
                    grads.tensors[k] = g.clone();
                }
            }
        }
        grads
    }
}

fn uniform<T: Scalar, R: Rng>(rng: &mut R, rows: usize, cols: usize, bound: f64) -> Matrix<T> {
    let data = (0..rows * cols)
        .map(|_| T::lit(rng.random_range(-bound..=bound)))
        .collect();
    Matrix::from_vec(rows, cols, data)
}

/// Affine map `y = x·Wᵀ + b`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        input: usize,
        output: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (input.max(1) as f64).sqrt();
        let w = store.add(format!("{name}.weight"), uniform(rng, output, input, bound));
        let b = bias.then(|| store.add(format!("{name}.bias"), uniform(rng, 1, output, bound)));
        Linear { w, b, input, output }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Var {
        let w = g.param(self.w);
        let b = self.b.map(|b| g.param(b));
        g.tape.linear(x, w, b)
    }
}

/// LSTM cell applied to a batch of rows; gates ordered input, forget, cell, output.
#[derive(Clone, Copy, Debug)]
pub struct Lstm {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl Lstm {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let w = store.add(format!("{name}.weight"), uniform(rng, 4 * hidden, input + hidden, bound));
        let mut bias: Matrix<T> = uniform(rng, 1, 4 * hidden, bound);
        for v in &mut bias.data[hidden..2 * hidden] {
            *v += T::one();
        }
        let b = store.add(format!("{name}.bias"), bias);
        Lstm { w, b, input, hidden }
    }

    pub fn step<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var, h: Var, c: Var) -> (Var, Var) {
        let hd = self.hidden;
        let w = g.param(self.w);
        let b = g.param(self.b);
        let t = &mut g.tape;
        let xh = t.concat_cols(&[x, h]);
        let z = t.linear(xh, w, Some(b));
        let zi = t.slice_cols(z, 0..hd);
        let zf = t.slice_cols(z, hd..2 * hd);
        let zg = t.slice_cols(z, 2 * hd..3 * hd);
        let zo = t.slice_cols(z, 3 * hd..4 * hd);
        let i = t.sigmoid(zi);
        let f = t.sigmoid(zf);
        let gg = t.tanh(zg);
        let o = t.sigmoid(zo);
        let fc = t.mul(f, c);
        let ig = t.mul(i, gg);
        let c2 = t.add(fc, ig);
        let tc = t.tanh(c2);
        let h2 = t.mul(o, tc);
        (h2, c2)
    }

    /// Runs over a sequence of `batch×input` steps from zero state; returns every hidden state.
    pub fn run<T: Scalar>(&self, g: &mut Graph<'_, T>, steps: &[Var]) -> Vec<Var> {
        let Some(first) = steps.first() else {
            return Vec::new();
        };
        let batch = g.tape.value(*first).rows;
        let mut h = g.zeros(batch, self.hidden);
        let mut c = g.zeros(batch, self.hidden);
        let mut out = Vec::with_capacity(steps.len());
        for x in steps {
            let (h2, c2) = self.step(g, *x, h, c);
            h = h2;
            c = c2;
            out.push(h);
        }
        out
    }
}

/// SGD with classical momentum: `v ← μ·v + g`, `θ ← θ − η·v`.
#[derive(Clone, Debug)]
pub struct Sgd<T> {
    pub lr: T,
    pub momentum: T,
    /// L2 penalty added to the gradients of decayed tensors.
    pub weight_decay: T,
    decayed: Vec<bool>,
    velocity: Vec<Matrix<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(store: &ParamStore<T>, lr: T, momentum: T) -> Self {
        Sgd {
            lr,
            momentum,
            weight_decay: T::zero(),
            decayed: vec![true; store.len()],
            velocity: Grads::zeros_like(store).tensors,
        }
    }

    /// Applies `weight_decay` only to tensors whose name satisfies `decay`.
    pub fn with_weight_decay(mut self, store: &ParamStore<T>, weight_decay: T, decay: impl Fn(&str) -> bool) -> Self {
        self.weight_decay = weight_decay;
        self.decayed = store.ids().map(|id| decay(store.name(id))).collect();
        self
    }

    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &Grads<T>) {
        for (k, (v, g)) in self.velocity.iter_mut().zip(&grads.tensors).enumerate() {
            let p = &mut store.tensors[k];
            let wd = if self.decayed[k] { self.weight_decay } else { T::zero() };
            for ((vi, gi), pi) in v.data.iter_mut().zip(&g.data).zip(p.data.iter_mut()) {
                *vi = self.momentum * *vi + *gi + wd * *pi;
                *pi -= self.lr * *vi;
            }
        }
    }
}

/// Per-column standardization fitted on training rows.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Standardizer {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn fit<'a>(dim: usize, rows: impl IntoIterator<Item = &'a [f64]>) -> Self {
        let mut n = 0usize;
        let mut sum = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        for r in rows {
            debug_assert_eq!(r.len(), dim);
            n += 1;
            for (k, v) in r.iter().enumerate() {
                sum[k] += v;
                sq[k] += v * v;
            }
        }
        if n == 0 {
            return Self::identity(dim);
        }
        let nf = n as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / nf).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| {
                let var = (s / nf - m * m).max(0.0);
                if var.sqrt() < 1e-9 {
                    1.0
                } else {
                    var.sqrt()
                }
            })
            .collect();
        Standardizer { mean, std }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply_into(&self, row: &[f64], out: &mut Vec<f64>) {
        out.extend(row.iter().zip(self.mean.iter().zip(&self.std)).map(|(v, (m, s))| (v - m) / s));
    }
}
