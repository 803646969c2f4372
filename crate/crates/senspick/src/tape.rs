//! Reverse-mode automatic differentiation over `f64` matrices.
//!
//! Every value is an `Array2<f64>` holding column vectors: shape
//! `(features, columns)`. A [`Tape`] records the forward graph for one
//! batch; [`Tape::backward`] fills gradients for every parameter leaf.
//! Model parameters live outside the tape in a [`ParamStore`] so the
//! optimizer can update them between batches without copying.
//!
//! Recurrent encoding goes through one fused op, [`Tape::lstm_stack`]:
//! a stacked LSTM run over a batch of sequences in lockstep, with
//! per-column length masking. Columns whose sequence has ended keep
//! their previous state, so the state after the last step is each
//! column's own final state (zero for empty sequences). The fused
//! backward accumulates weight gradients with one matrix product per
//! layer over all timesteps, which is what makes wide hidden layers
//! affordable on a single core.

// Some ops in the engine's surface are currently exercised only by the
// gradient-check tests.
#![allow(dead_code)]

use std::collections::HashMap;

use ndarray::{concatenate, Array2, Axis};

pub type Arr = Array2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Named parameter arrays, updated in place by the optimizer.
#[derive(Debug, Clone)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Arr>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore {
            names: Vec::new(),
            values: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn register(&mut self, name: &str, value: Arr) -> ParamId {
        assert!(
            !self.by_name.contains_key(name),
            "parameter {name} registered twice"
        );
        let id = ParamId(self.values.len());
        self.names.push(name.to_string());
        self.values.push(value);
        self.by_name.insert(name.to_string(), id);
        id
    }

    pub fn get(&self, id: ParamId) -> &Arr {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Arr {
        &mut self.values[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn name_of(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Arr)> {
        self.values
            .iter()
            .enumerate()
            .map(|(i, v)| (ParamId(i), self.names[i].as_str(), v))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

struct Node {
    op: Op,
    value: Option<Arr>,
    aux: Option<Arr>,
    needs_grad: bool,
}

enum Op {
    Const,
    Param(ParamId),
    MatMul(Var, Var),
    /// aᵀ · b
    MatMulTA(Var, Var),
    Add(Var, Var),
    AddN(Vec<Var>),
    /// x + bias broadcast over columns; bias is (n, 1)
    AddColBroadcast(Var, Var),
    Mul(Var, Var),
    /// scalar (1,1) var broadcast-multiplied into x
    MulScalar(Var, Var),
    Scale(Var, f64),
    /// a*x + b elementwise with constants
    AffineConst(Var, f64, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Rows(Var, usize, usize),
    Cols(Var, usize, usize),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    /// columns picked from the source, duplicates allowed
    GatherCols(Var, Vec<usize>),
    /// column-wise softmax with max subtraction
    Softmax(Var),
    /// -log softmax(x)[row] of a single-column input
    NllLogits(Var, usize),
    Dropout(Var, Arr),
    Lstm(Box<LstmOp>),
}

/// Per-layer LSTM parameters: packed gate weights in i, f, g, o row order.
#[derive(Debug, Clone, Copy)]
pub struct LstmLayerVars {
    pub w_x: Var,
    pub w_h: Var,
    pub b: Var,
}

pub struct LstmSpec {
    pub layers: Vec<LstmLayerVars>,
    /// one (input_dim, batch) matrix per timestep
    pub inputs: Vec<Var>,
    /// valid steps per column; columns freeze once their length is reached
    pub lengths: Vec<usize>,
    /// inter-layer dropout masks, `[layer-1][t]`, entries 0 or 1/(1-p)
    pub dropout_masks: Option<Vec<Vec<Arr>>>,
}

struct LstmOp {
    spec: LstmSpec,
    hidden: usize,
    cache: Option<LstmCache>,
}

struct LstmCache {
    /// step masks, (1, batch), 1.0 while the column is active
    masks: Vec<Arr>,
    /// [layer][t] -> (i, f, g, o, c, tanh_c, h)
    steps: Vec<Vec<StepCache>>,
}

struct StepCache {
    i: Arr,
    f: Arr,
    g: Arr,
    o: Arr,
    c: Arr,
    tanh_c: Arr,
    h: Arr,
}

pub struct Tape<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
}

fn sigmoid_in_place(a: &mut Arr) {
    a.mapv_inplace(|x| 1.0 / (1.0 + (-x).exp()));
}

impl<'p> Tape<'p> {
    pub fn new(store: &'p ParamStore) -> Tape<'p> {
        Tape {
            store,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    fn push(&mut self, op: Op, value: Option<Arr>, aux: Option<Arr>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            aux,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Arr {
        let node = &self.nodes[v.0];
        match node.op {
            Op::Param(id) => self.store.get(id),
            _ => node.value.as_ref().expect("forward value present"),
        }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn constant(&mut self, value: Arr) -> Var {
        self.push(Op::Const, Some(value), None, false)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let v = self.push(Op::Param(id), None, None, true);
        self.param_vars.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        let needs = self.needs(a) || self.needs(b);
        self.push(Op::MatMul(a, b), Some(value), None, needs)
    }

    pub fn matmul_ta(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).t().dot(self.value(b));
        let needs = self.needs(a) || self.needs(b);
        self.push(Op::MatMulTA(a, b), Some(value), None, needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        let needs = self.needs(a) || self.needs(b);
        self.push(Op::Add(a, b), Some(value), None, needs)
    }

    pub fn add_n(&mut self, terms: Vec<Var>) -> Var {
        assert!(!terms.is_empty());
        let mut value = self.value(terms[0]).clone();
        for &t in &terms[1..] {
            value += self.value(t);
        }
        let needs = terms.iter().any(|&t| self.needs(t));
        self.push(Op::AddN(terms), Some(value), None, needs)
    }

    pub fn add_col_broadcast(&mut self, x: Var, bias: Var) -> Var {
        let b = self.value(bias);
        debug_assert_eq!(b.ncols(), 1);
        let mut value = self.value(x).clone();
        for mut col in value.columns_mut() {
            col += &b.column(0);
        }
        let needs = self.needs(x) || self.needs(bias);
        self.push(Op::AddColBroadcast(x, bias), Some(value), None, needs)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) * self.value(b);
        let needs = self.needs(a) || self.needs(b);
        self.push(Op::Mul(a, b), Some(value), None, needs)
    }

    pub fn mul_scalar(&mut self, scalar: Var, x: Var) -> Var {
        let s = self.value(scalar)[(0, 0)];
        let value = self.value(x) * s;
        let needs = self.needs(scalar) || self.needs(x);
        self.push(Op::MulScalar(scalar, x), Some(value), None, needs)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let value = self.value(x) * factor;
        let needs = self.needs(x);
        self.push(Op::Scale(x, factor), Some(value), None, needs)
    }

    pub fn affine_const(&mut self, x: Var, mul: f64, add: f64) -> Var {
        let value = self.value(x).mapv(|v| mul * v + add);
        let needs = self.needs(x);
        self.push(Op::AffineConst(x, mul, add), Some(value), None, needs)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let mut value = self.value(x).clone();
        sigmoid_in_place(&mut value);
        let needs = self.needs(x);
        self.push(Op::Sigmoid(x), Some(value), None, needs)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).mapv(f64::tanh);
        let needs = self.needs(x);
        self.push(Op::Tanh(x), Some(value), None, needs)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).mapv(|v| v.max(0.0));
        let needs = self.needs(x);
        self.push(Op::Relu(x), Some(value), None, needs)
    }

    pub fn rows(&mut self, x: Var, from: usize, to: usize) -> Var {
        let value = self.value(x).slice(ndarray::s![from..to, ..]).to_owned();
        let needs = self.needs(x);
        self.push(Op::Rows(x, from, to), Some(value), None, needs)
    }

    pub fn cols(&mut self, x: Var, from: usize, to: usize) -> Var {
        let value = self.value(x).slice(ndarray::s![.., from..to]).to_owned();
        let needs = self.needs(x);
        self.push(Op::Cols(x, from, to), Some(value), None, needs)
    }

    pub fn concat_rows(&mut self, parts: Vec<Var>) -> Var {
        let views: Vec<_> = parts.iter().map(|&v| self.value(v).view()).collect();
        let value = concatenate(Axis(0), &views).expect("column counts match");
        let needs = parts.iter().any(|&v| self.needs(v));
        self.push(Op::ConcatRows(parts), Some(value), None, needs)
    }

    pub fn concat_cols(&mut self, parts: Vec<Var>) -> Var {
        let views: Vec<_> = parts.iter().map(|&v| self.value(v).view()).collect();
        let value = concatenate(Axis(1), &views).expect("row counts match");
        let needs = parts.iter().any(|&v| self.needs(v));
        self.push(Op::ConcatCols(parts), Some(value), None, needs)
    }

    pub fn gather_cols(&mut self, x: Var, indices: Vec<usize>) -> Var {
        let src = self.value(x);
        let mut value = Arr::zeros((src.nrows(), indices.len()));
        for (dst, &i) in indices.iter().enumerate() {
            value.column_mut(dst).assign(&src.column(i));
        }
        let needs = self.needs(x);
        self.push(Op::GatherCols(x, indices), Some(value), None, needs)
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let mut value = self.value(x).clone();
        for mut col in value.columns_mut() {
            let max = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            col.mapv_inplace(|v| (v - max).exp());
            let sum: f64 = col.sum();
            col.mapv_inplace(|v| v / sum);
        }
        let needs = self.needs(x);
        self.push(Op::Softmax(x), Some(value), None, needs)
    }

    /// Cross-entropy of a single-column logit vector against class `gold`.
    pub fn nll_logits(&mut self, logits: Var, gold: usize) -> Var {
        let x = self.value(logits);
        debug_assert_eq!(x.ncols(), 1);
        let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps = x.mapv(|v| (v - max).exp());
        let sum: f64 = exps.sum();
        let probs = exps / sum;
        let loss = -(probs[(gold, 0)].ln());
        let needs = self.needs(logits);
        self.push(
            Op::NllLogits(logits, gold),
            Some(Arr::from_elem((1, 1), loss)),
            Some(probs),
            needs,
        )
    }

    /// Inverted dropout; `mask` entries are 0 or 1/(1-p).
    pub fn dropout(&mut self, x: Var, mask: Arr) -> Var {
        let value = self.value(x) * &mask;
        let needs = self.needs(x);
        self.push(Op::Dropout(x, mask), Some(value), None, needs)
    }

    /// Runs a stacked LSTM over `spec.inputs` in lockstep and returns the
    /// final hidden state of the top layer, shape (hidden, batch).
    pub fn lstm_stack(&mut self, spec: LstmSpec, hidden: usize) -> Var {
        let batch = spec.lengths.len();
        if spec.inputs.is_empty() {
            return self.constant(Arr::zeros((hidden, batch)));
        }
        let steps = spec.inputs.len();
        debug_assert!(spec.lengths.iter().all(|&l| l <= steps));

        let masks: Vec<Arr> = (0..steps)
            .map(|t| {
                Arr::from_shape_fn((1, batch), |(_, b)| if t < spec.lengths[b] { 1.0 } else { 0.0 })
            })
            .collect();

        let mut layer_caches: Vec<Vec<StepCache>> = Vec::with_capacity(spec.layers.len());
        let mut layer_input: Vec<Arr> = spec
            .inputs
            .iter()
            .map(|&v| self.value(v).clone())
            .collect();

        for (l, layer) in spec.layers.iter().enumerate() {
            if l > 0 {
                if let Some(masks) = spec.dropout_masks.as_ref() {
                    for (t, x) in layer_input.iter_mut().enumerate() {
                        *x *= &masks[l - 1][t];
                    }
                }
            }
            let w_x = self.value(layer.w_x).clone();
            let w_h = self.value(layer.w_h).clone();
            let bias = self.value(layer.b).clone();
            let mut h = Arr::zeros((hidden, batch));
            let mut c = Arr::zeros((hidden, batch));
            let mut steps_cache = Vec::with_capacity(steps);
            for (t, x) in layer_input.iter().enumerate() {
                let mut z = w_x.dot(x) + w_h.dot(&h);
                for mut col in z.columns_mut() {
                    col += &bias.column(0);
                }
                let mut i = z.slice(ndarray::s![0..hidden, ..]).to_owned();
                let mut f = z.slice(ndarray::s![hidden..2 * hidden, ..]).to_owned();
                let g = z.slice(ndarray::s![2 * hidden..3 * hidden, ..]).mapv(f64::tanh);
                let mut o = z.slice(ndarray::s![3 * hidden..4 * hidden, ..]).to_owned();
                sigmoid_in_place(&mut i);
                sigmoid_in_place(&mut f);
                sigmoid_in_place(&mut o);
                let c_new = &f * &c + &i * &g;
                let tanh_c = c_new.mapv(f64::tanh);
                let h_new = &o * &tanh_c;
                // frozen columns keep their previous state
                let mask = &masks[t];
                let keep = mask.mapv(|m| 1.0 - m);
                let c_next = &c_new * mask + &c * &keep;
                let h_next = &h_new * mask + &h * &keep;
                steps_cache.push(StepCache {
                    i,
                    f,
                    g,
                    o,
                    c: c_next.clone(),
                    tanh_c,
                    h: h_next.clone(),
                });
                h = h_next;
                c = c_next;
            }
            layer_input = steps_cache.iter().map(|s| s.h.clone()).collect();
            layer_caches.push(steps_cache);
        }

        let final_h = layer_caches
            .last()
            .unwrap()
            .last()
            .unwrap()
            .h
            .clone();
        let needs = spec
            .layers
            .iter()
            .flat_map(|l| [l.w_x, l.w_h, l.b])
            .chain(spec.inputs.iter().copied())
            .any(|v| self.needs(v));
        let op = LstmOp {
            spec,
            hidden,
            cache: Some(LstmCache {
                masks,
                steps: layer_caches,
            }),
        };
        self.push(Op::Lstm(Box::new(op)), Some(final_h), None, needs)
    }

    /// Propagates gradients from `root` (a (1,1) value) back to every
    /// parameter leaf. Returns gradients keyed by parameter id.
    pub fn backward(&self, root: Var) -> HashMap<ParamId, Arr> {
        let mut grads: Vec<Option<Arr>> = (0..self.nodes.len()).map(|_| None).collect();
        debug_assert_eq!(self.value(root).dim(), (1, 1));
        grads[root.0] = Some(Arr::from_elem((1, 1), 1.0));

        for idx in (0..self.nodes.len()).rev() {
            if !self.nodes[idx].needs_grad {
                grads[idx] = None;
                continue;
            }
            if matches!(self.nodes[idx].op, Op::Param(_)) {
                continue; // leaf: keep the gradient for collection below
            }
            let Some(gy) = grads[idx].take() else { continue };
            self.backprop_node(idx, gy, &mut grads);
        }

        let mut out = HashMap::new();
        for (&pid, &var) in &self.param_vars {
            if let Some(g) = grads[var.0].take() {
                out.insert(pid, g);
            }
        }
        out
    }

    fn accumulate(grads: &mut [Option<Arr>], v: Var, g: Arr) {
        match &mut grads[v.0] {
            Some(existing) => *existing += &g,
            slot => *slot = Some(g),
        }
    }

    fn backprop_node(&self, idx: usize, gy: Arr, grads: &mut Vec<Option<Arr>>) {
        let add = Self::accumulate;
        match &self.nodes[idx].op {
            Op::Const | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                if self.needs(*a) {
                    add(grads, *a, gy.dot(&self.value(*b).t()));
                }
                if self.needs(*b) {
                    add(grads, *b, self.value(*a).t().dot(&gy));
                }
            }
            Op::MatMulTA(a, b) => {
                // y = aᵀ b; dа = b gyᵀ, db = a gy
                if self.needs(*a) {
                    add(grads, *a, self.value(*b).dot(&gy.t()));
                }
                if self.needs(*b) {
                    add(grads, *b, self.value(*a).dot(&gy));
                }
            }
            Op::Add(a, b) => {
                if self.needs(*a) {
                    add(grads, *a, gy.clone());
                }
                if self.needs(*b) {
                    add(grads, *b, gy);
                }
            }
            Op::AddN(terms) => {
                for &t in terms {
                    if self.needs(t) {
                        add(grads, t, gy.clone());
                    }
                }
            }
            Op::AddColBroadcast(x, bias) => {
                if self.needs(*bias) {
                    let summed = gy.sum_axis(Axis(1)).insert_axis(Axis(1));
                    add(grads, *bias, summed);
                }
                if self.needs(*x) {
                    add(grads, *x, gy);
                }
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    add(grads, *a, &gy * self.value(*b));
                }
                if self.needs(*b) {
                    add(grads, *b, &gy * self.value(*a));
                }
            }
            Op::MulScalar(scalar, x) => {
                if self.needs(*scalar) {
                    let dot: f64 = (&gy * self.value(*x)).sum();
                    add(grads, *scalar, Arr::from_elem((1, 1), dot));
                }
                if self.needs(*x) {
                    let s = self.value(*scalar)[(0, 0)];
                    add(grads, *x, gy * s);
                }
            }
            Op::Scale(x, factor) => {
                if self.needs(*x) {
                    add(grads, *x, gy * *factor);
                }
            }
            Op::AffineConst(x, mul, _) => {
                if self.needs(*x) {
                    add(grads, *x, gy * *mul);
                }
            }
            Op::Sigmoid(x) => {
                if self.needs(*x) {
                    let y = self.nodes[idx].value.as_ref().unwrap();
                    add(grads, *x, gy * y * &y.mapv(|v| 1.0 - v));
                }
            }
            Op::Tanh(x) => {
                if self.needs(*x) {
                    let y = self.nodes[idx].value.as_ref().unwrap();
                    add(grads, *x, gy * &y.mapv(|v| 1.0 - v * v));
                }
            }
            Op::Relu(x) => {
                if self.needs(*x) {
                    let y = self.nodes[idx].value.as_ref().unwrap();
                    add(grads, *x, gy * &y.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 }));
                }
            }
            Op::Rows(x, from, to) => {
                if self.needs(*x) {
                    let src = self.value(*x);
                    let mut g = Arr::zeros(src.raw_dim());
                    g.slice_mut(ndarray::s![*from..*to, ..]).assign(&gy);
                    add(grads, *x, g);
                }
            }
            Op::Cols(x, from, to) => {
                if self.needs(*x) {
                    let src = self.value(*x);
                    let mut g = Arr::zeros(src.raw_dim());
                    g.slice_mut(ndarray::s![.., *from..*to]).assign(&gy);
                    add(grads, *x, g);
                }
            }
            Op::ConcatRows(parts) => {
                let mut row = 0;
                for &p in parts {
                    let n = self.value(p).nrows();
                    if self.needs(p) {
                        add(grads, p, gy.slice(ndarray::s![row..row + n, ..]).to_owned());
                    }
                    row += n;
                }
            }
            Op::ConcatCols(parts) => {
                let mut col = 0;
                for &p in parts {
                    let n = self.value(p).ncols();
                    if self.needs(p) {
                        add(grads, p, gy.slice(ndarray::s![.., col..col + n]).to_owned());
                    }
                    col += n;
                }
            }
            Op::GatherCols(x, indices) => {
                if self.needs(*x) {
                    let src = self.value(*x);
                    let mut g = Arr::zeros(src.raw_dim());
                    for (from, &to) in indices.iter().enumerate() {
                        let mut col = g.column_mut(to);
                        col += &gy.column(from);
                    }
                    add(grads, *x, g);
                }
            }
            Op::Softmax(x) => {
                if self.needs(*x) {
                    let y = self.nodes[idx].value.as_ref().unwrap();
                    let prod = &gy * y;
                    let mut g = prod.clone();
                    for (mut gcol, (ycol, pcol)) in g
                        .columns_mut()
                        .into_iter()
                        .zip(y.columns().into_iter().zip(prod.columns()))
                    {
                        let s: f64 = pcol.sum();
                        gcol.zip_mut_with(&ycol, |gv, yv| *gv -= s * yv);
                    }
                    add(grads, *x, g);
                }
            }
            Op::NllLogits(x, gold) => {
                if self.needs(*x) {
                    let probs = self.nodes[idx].aux.as_ref().unwrap();
                    let scale = gy[(0, 0)];
                    let mut g = probs * scale;
                    g[(*gold, 0)] -= scale;
                    add(grads, *x, g);
                }
            }
            Op::Dropout(x, mask) => {
                if self.needs(*x) {
                    add(grads, *x, gy * mask);
                }
            }
            Op::Lstm(op) => self.backprop_lstm(op, gy, grads),
        }
    }

    fn backprop_lstm(&self, op: &LstmOp, gy: Arr, grads: &mut Vec<Option<Arr>>) {
        let cache = op.cache.as_ref().expect("forward ran");
        let spec = &op.spec;
        let hidden = op.hidden;
        let steps = spec.inputs.len();
        let batch = spec.lengths.len();
        let top = spec.layers.len() - 1;

        // dh flowing into each layer's hidden sequence from above
        let mut dh_seq: Vec<Arr> = (0..steps).map(|_| Arr::zeros((hidden, batch))).collect();
        dh_seq[steps - 1] = gy;

        for l in (0..=top).rev() {
            let layer = spec.layers[l];
            let w_x = self.value(layer.w_x);
            let w_h = self.value(layer.w_h);
            let cache_l = &cache.steps[l];
            let input_dim = w_x.ncols();

            let mut dh_next = Arr::zeros((hidden, batch));
            let mut dc_next = Arr::zeros((hidden, batch));
            // da per step, kept for the batched weight-gradient products
            let mut da_steps: Vec<Arr> = Vec::with_capacity(steps);
            let mut dx_seq: Vec<Arr> = Vec::with_capacity(steps);

            for t in (0..steps).rev() {
                let sc = &cache_l[t];
                let mask = &cache.masks[t];
                let keep = mask.mapv(|m| 1.0 - m);
                let dh_total = &dh_next + &dh_seq[t];

                // split the masked update: gate path gets mask, skip path
                // passes straight to t-1
                let dh_gate = &dh_total * mask;
                let dc_gate = &dc_next * mask;

                let d_o = &dh_gate * &sc.tanh_c;
                let mut dc = dc_gate;
                dc += &(&dh_gate * &sc.o * &sc.tanh_c.mapv(|v| 1.0 - v * v));

                let c_prev = if t == 0 {
                    Arr::zeros((hidden, batch))
                } else {
                    cache_l[t - 1].c.clone()
                };
                let d_f = &dc * &c_prev;
                let d_i = &dc * &sc.g;
                let d_g = &dc * &sc.i;

                let da_i = d_i * &sc.i * &sc.i.mapv(|v| 1.0 - v);
                let da_f = d_f * &sc.f * &sc.f.mapv(|v| 1.0 - v);
                let da_g = d_g * &sc.g.mapv(|v| 1.0 - v * v);
                let da_o = d_o * &sc.o * &sc.o.mapv(|v| 1.0 - v);
                let da = concatenate(
                    Axis(0),
                    &[da_i.view(), da_f.view(), da_g.view(), da_o.view()],
                )
                .unwrap();

                // recurrent gradients to t-1, plus the skip path
                dh_next = w_h.t().dot(&da) + &dh_total * &keep;
                dc_next = &dc * &sc.f + &dc_next * &keep;

                dx_seq.push(w_x.t().dot(&da));
                da_steps.push(da);
            }
            da_steps.reverse();
            dx_seq.reverse();

            // weight gradients in two products over all timesteps
            let da_all = concatenate(
                Axis(1),
                &da_steps.iter().map(|a| a.view()).collect::<Vec<_>>(),
            )
            .unwrap();
            let x_all = self.layer_input_matrix(spec, cache, l, input_dim, steps, batch);
            let h_prev_all = {
                let mut views = Vec::with_capacity(steps);
                let zero = Arr::zeros((hidden, batch));
                views.push(zero.view().to_owned());
                for t in 0..steps - 1 {
                    views.push(cache_l[t].h.clone());
                }
                concatenate(
                    Axis(1),
                    &views.iter().map(|v| v.view()).collect::<Vec<_>>(),
                )
                .unwrap()
            };
            if self.needs(layer.w_x) {
                Self::accumulate(grads, layer.w_x, da_all.dot(&x_all.t()));
            }
            if self.needs(layer.w_h) {
                Self::accumulate(grads, layer.w_h, da_all.dot(&h_prev_all.t()));
            }
            if self.needs(layer.b) {
                Self::accumulate(
                    grads,
                    layer.b,
                    da_all.sum_axis(Axis(1)).insert_axis(Axis(1)),
                );
            }

            if l > 0 {
                // pass input gradients down through the dropout masks
                for (t, mut dx) in dx_seq.into_iter().enumerate() {
                    if let Some(masks) = spec.dropout_masks.as_ref() {
                        dx *= &masks[l - 1][t];
                    }
                    dh_seq[t] = dx;
                }
            } else {
                for (t, dx) in dx_seq.into_iter().enumerate() {
                    if self.needs(spec.inputs[t]) {
                        Self::accumulate(grads, spec.inputs[t], dx);
                    }
                }
            }
        }
    }

    /// The (input_dim, steps*batch) matrix of inputs layer `l` consumed,
    /// with inter-layer dropout re-applied from the stored masks.
    fn layer_input_matrix(
        &self,
        spec: &LstmSpec,
        cache: &LstmCache,
        l: usize,
        input_dim: usize,
        steps: usize,
        batch: usize,
    ) -> Arr {
        let mut out = Arr::zeros((input_dim, steps * batch));
        for t in 0..steps {
            let mut dst = out.slice_mut(ndarray::s![.., t * batch..(t + 1) * batch]);
            if l == 0 {
                dst.assign(self.value(spec.inputs[t]));
            } else {
                let h = &cache.steps[l - 1][t].h;
                if let Some(masks) = spec.dropout_masks.as_ref() {
                    dst.assign(&(h * &masks[l - 1][t]));
                } else {
                    dst.assign(h);
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn rand_arr(rng: &mut StdRng, rows: usize, cols: usize) -> Arr {
        Arr::from_shape_fn((rows, cols), |_| rng.random_range(-0.9..0.9))
    }

    /// Central finite differences of `loss(store)` against analytic grads.
    fn check_param_grads<F>(store: &mut ParamStore, loss_fn: F, tol: f64)
    where
        F: Fn(&ParamStore) -> (f64, HashMap<ParamId, Arr>),
    {
        let (_, analytic) = loss_fn(store);
        let eps = 1e-6;
        for pid in 0..store.len() {
            let pid = ParamId(pid);
            let dims = store.get(pid).raw_dim();
            for r in 0..dims[0] {
                for c in 0..dims[1] {
                    let orig = store.get(pid)[(r, c)];
                    store.get_mut(pid)[(r, c)] = orig + eps;
                    let (up, _) = loss_fn(store);
                    store.get_mut(pid)[(r, c)] = orig - eps;
                    let (down, _) = loss_fn(store);
                    store.get_mut(pid)[(r, c)] = orig;
                    let numeric = (up - down) / (2.0 * eps);
                    let a = analytic
                        .get(&pid)
                        .map(|g| g[(r, c)])
                        .unwrap_or(0.0);
                    let denom = a.abs().max(numeric.abs()).max(1e-6);
                    assert!(
                        (a - numeric).abs() / denom < tol,
                        "param {} [{r},{c}]: analytic {a} vs numeric {numeric}",
                        store.name_of(pid),
                    );
                }
            }
        }
    }

    #[test]
    fn elementwise_and_matmul_gradients_match_finite_differences() {
        let mut rng = StdRng::seed_from_u64(7);
        let mut store = ParamStore::new();
        store.register("w", rand_arr(&mut rng, 3, 4));
        store.register("x", rand_arr(&mut rng, 4, 2));
        store.register("b", rand_arr(&mut rng, 3, 1));
        store.register("s", rand_arr(&mut rng, 1, 1));

        let loss_fn = |store: &ParamStore| {
            let mut tape = Tape::new(store);
            let w = tape.param(ParamId(0));
            let x = tape.param(ParamId(1));
            let b = tape.param(ParamId(2));
            let s = tape.param(ParamId(3));
            let y = tape.matmul(w, x);
            let y = tape.add_col_broadcast(y, b);
            let y = tape.tanh(y);
            let z = tape.sigmoid(y);
            let z = tape.mul(z, y);
            let z = tape.relu(z);
            let z = tape.mul_scalar(s, z);
            let z = tape.affine_const(z, 1.5, 0.25);
            let flat = tape.rows(z, 0, 3);
            let sm = tape.softmax(flat);
            let col0 = tape.cols(sm, 0, 1);
            let col1 = tape.cols(sm, 1, 2);
            let joined = tape.concat_rows(vec![col0, col1]);
            let picked = tape.gather_cols(joined, vec![0, 0]);
            let merged = tape.concat_cols(vec![picked, joined]);
            let weights = tape.constant(Arr::from_shape_fn((6, 3), |(r, c)| {
                0.1 * (r as f64 + 1.0) - 0.05 * c as f64
            }));
            let scored = tape.mul(merged, weights);
            let ones_l = tape.constant(Arr::ones((6, 1)));
            let summed = tape.matmul_ta(ones_l, scored);
            let ones_r = tape.constant(Arr::ones((3, 1)));
            let total = tape.matmul(summed, ones_r);
            let loss = tape.scale(total, 0.5);
            let grads = tape.backward(loss);
            (tape.value(loss)[(0, 0)], grads)
        };
        check_param_grads(&mut store, loss_fn, 1e-6);
    }

    #[test]
    fn nll_logits_gradient_matches_finite_differences() {
        let mut rng = StdRng::seed_from_u64(11);
        let mut store = ParamStore::new();
        store.register("logits", rand_arr(&mut rng, 5, 1));
        let loss_fn = |store: &ParamStore| {
            let mut tape = Tape::new(store);
            let x = tape.param(ParamId(0));
            let loss = tape.nll_logits(x, 2);
            let grads = tape.backward(loss);
            (tape.value(loss)[(0, 0)], grads)
        };
        check_param_grads(&mut store, loss_fn, 1e-6);
    }

    #[test]
    fn add_n_and_dropout_gradients() {
        let mut rng = StdRng::seed_from_u64(13);
        let mut store = ParamStore::new();
        store.register("a", rand_arr(&mut rng, 2, 2));
        store.register("b", rand_arr(&mut rng, 2, 2));
        let mask = Arr::from_shape_vec((2, 2), vec![2.0, 0.0, 2.0, 2.0]).unwrap();
        let loss_fn = |store: &ParamStore| {
            let mut tape = Tape::new(store);
            let a = tape.param(ParamId(0));
            let b = tape.param(ParamId(1));
            let s = tape.add_n(vec![a, b, a]);
            let d = tape.dropout(s, mask.clone());
            let ones_l = tape.constant(Arr::ones((2, 1)));
            let ones_r = tape.constant(Arr::ones((2, 1)));
            let row = tape.matmul_ta(ones_l, d);
            let loss = tape.matmul(row, ones_r);
            let grads = tape.backward(loss);
            (tape.value(loss)[(0, 0)], grads)
        };
        check_param_grads(&mut store, loss_fn, 1e-6);
    }

    /// Scalar reference implementation of one stacked-LSTM sequence.
    fn reference_stack(
        store: &ParamStore,
        layer_ids: &[(ParamId, ParamId, ParamId)],
        seq: &[Vec<f64>],
        hidden: usize,
    ) -> Vec<f64> {
        let mut inputs: Vec<Vec<f64>> = seq.to_vec();
        let mut final_h = vec![0.0; hidden];
        for &(wx_id, wh_id, b_id) in layer_ids {
            let w_x = store.get(wx_id);
            let w_h = store.get(wh_id);
            let b = store.get(b_id);
            let mut h = vec![0.0; hidden];
            let mut c = vec![0.0; hidden];
            let mut outs = Vec::new();
            for x in &inputs {
                let mut z = vec![0.0; 4 * hidden];
                for (r, zr) in z.iter_mut().enumerate() {
                    let mut acc = b[(r, 0)];
                    for (k, xv) in x.iter().enumerate() {
                        acc += w_x[(r, k)] * xv;
                    }
                    for (k, hv) in h.iter().enumerate() {
                        acc += w_h[(r, k)] * hv;
                    }
                    *zr = acc;
                }
                let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
                let mut h2 = vec![0.0; hidden];
                let mut c2 = vec![0.0; hidden];
                for j in 0..hidden {
                    let i = sig(z[j]);
                    let f = sig(z[hidden + j]);
                    let g = z[2 * hidden + j].tanh();
                    let o = sig(z[3 * hidden + j]);
                    c2[j] = f * c[j] + i * g;
                    h2[j] = o * c2[j].tanh();
                }
                h = h2.clone();
                c = c2;
                outs.push(h2);
            }
            final_h = h.clone();
            inputs = outs;
        }
        final_h
    }

    #[test]
    fn masked_lockstep_lstm_matches_per_sequence_reference() {
        let mut rng = StdRng::seed_from_u64(17);
        let hidden = 3;
        let input_dim = 2;
        let mut store = ParamStore::new();
        let mut layer_ids = Vec::new();
        for l in 0..2 {
            let d = if l == 0 { input_dim } else { hidden };
            let wx = store.register(&format!("l{l}.wx"), rand_arr(&mut rng, 4 * hidden, d));
            let wh = store.register(&format!("l{l}.wh"), rand_arr(&mut rng, 4 * hidden, hidden));
            let b = store.register(&format!("l{l}.b"), rand_arr(&mut rng, 4 * hidden, 1));
            layer_ids.push((wx, wh, b));
        }

        // three sequences with different lengths, one empty
        let lengths = [3usize, 1, 0, 2];
        let seqs: Vec<Vec<Vec<f64>>> = lengths
            .iter()
            .map(|&len| {
                (0..len)
                    .map(|_| (0..input_dim).map(|_| rng.random_range(-1.0..1.0)).collect())
                    .collect()
            })
            .collect();

        let steps = 3;
        let mut tape = Tape::new(&store);
        let inputs: Vec<Var> = (0..steps)
            .map(|t| {
                let m = Arr::from_shape_fn((input_dim, lengths.len()), |(r, b)| {
                    seqs[b].get(t).map(|x| x[r]).unwrap_or(0.0)
                });
                tape.constant(m)
            })
            .collect();
        let layers: Vec<LstmLayerVars> = layer_ids
            .iter()
            .map(|&(wx, wh, b)| LstmLayerVars {
                w_x: tape.param(wx),
                w_h: tape.param(wh),
                b: tape.param(b),
            })
            .collect();
        let out = tape.lstm_stack(
            LstmSpec {
                layers,
                inputs,
                lengths: lengths.to_vec(),
                dropout_masks: None,
            },
            hidden,
        );
        let got = tape.value(out);

        for (bi, seq) in seqs.iter().enumerate() {
            let want = if seq.is_empty() {
                vec![0.0; hidden]
            } else {
                reference_stack(&store, &layer_ids, seq, hidden)
            };
            for j in 0..hidden {
                let rel = (got[(j, bi)] - want[j]).abs() / want[j].abs().max(1e-9);
                assert!(
                    rel < 1e-12 || (got[(j, bi)] - want[j]).abs() < 1e-12,
                    "col {bi} row {j}: got {} want {}",
                    got[(j, bi)],
                    want[j]
                );
            }
        }
    }

    #[test]
    fn lstm_gradients_match_finite_differences_with_masking() {
        let mut rng = StdRng::seed_from_u64(23);
        let hidden = 2;
        let input_dim = 2;
        let mut store = ParamStore::new();
        let mut ids = Vec::new();
        for l in 0..2 {
            let d = if l == 0 { input_dim } else { hidden };
            ids.push((
                store.register(&format!("l{l}.wx"), rand_arr(&mut rng, 4 * hidden, d)),
                store.register(&format!("l{l}.wh"), rand_arr(&mut rng, 4 * hidden, hidden)),
                store.register(&format!("l{l}.b"), rand_arr(&mut rng, 4 * hidden, 1)),
            ));
        }
        let x0 = store.register("x0", rand_arr(&mut rng, input_dim, 3));
        let x1 = store.register("x1", rand_arr(&mut rng, input_dim, 3));
        let x2 = store.register("x2", rand_arr(&mut rng, input_dim, 3));
        let lengths = vec![3usize, 2, 1];

        let loss_fn = |store: &ParamStore| {
            let mut tape = Tape::new(store);
            let inputs = vec![tape.param(x0), tape.param(x1), tape.param(x2)];
            let layers = ids
                .iter()
                .map(|&(wx, wh, b)| LstmLayerVars {
                    w_x: tape.param(wx),
                    w_h: tape.param(wh),
                    b: tape.param(b),
                })
                .collect();
            let out = tape.lstm_stack(
                LstmSpec {
                    layers,
                    inputs,
                    lengths: lengths.clone(),
                    dropout_masks: None,
                },
                hidden,
            );
            // scalar objective: weighted sum of the final states
            let weights = tape.constant(Arr::from_shape_fn((hidden, 3), |(r, c)| {
                0.3 + 0.2 * r as f64 - 0.1 * c as f64
            }));
            let prod = tape.mul(out, weights);
            let ones_l = tape.constant(Arr::ones((hidden, 1)));
            let ones_r = tape.constant(Arr::ones((3, 1)));
            let row = tape.matmul_ta(ones_l, prod);
            let loss = tape.matmul(row, ones_r);
            let grads = tape.backward(loss);
            (tape.value(loss)[(0, 0)], grads)
        };
        check_param_grads(&mut store, loss_fn, 1e-5);
    }

    #[test]
    fn lstm_dropout_masks_apply_between_layers_only() {
        let mut rng = StdRng::seed_from_u64(29);
        let hidden = 2;
        let mut store = ParamStore::new();
        let mut ids = Vec::new();
        for l in 0..2 {
            let d = 2;
            ids.push((
                store.register(&format!("l{l}.wx"), rand_arr(&mut rng, 4 * hidden, d)),
                store.register(&format!("l{l}.wh"), rand_arr(&mut rng, 4 * hidden, hidden)),
                store.register(&format!("l{l}.b"), rand_arr(&mut rng, 4 * hidden, 1)),
            ));
        }
        let x = rand_arr(&mut rng, 2, 1);

        let run = |store: &ParamStore, masks: Option<Vec<Vec<Arr>>>| -> Arr {
            let mut tape = Tape::new(store);
            let inputs = vec![tape.constant(x.clone())];
            let layers = ids
                .iter()
                .map(|&(wx, wh, b)| LstmLayerVars {
                    w_x: tape.param(wx),
                    w_h: tape.param(wh),
                    b: tape.param(b),
                })
                .collect();
            let out = tape.lstm_stack(
                LstmSpec {
                    layers,
                    inputs,
                    lengths: vec![1],
                    dropout_masks: masks,
                },
                hidden,
            );
            tape.value(out).clone()
        };

        let plain = run(&store, None);
        let identity = run(&store, Some(vec![vec![Arr::ones((hidden, 1))]]));
        assert_eq!(plain, identity, "identity mask changes nothing");
        let zeroed = run(&store, Some(vec![vec![Arr::zeros((hidden, 1))]]));
        assert_ne!(plain, zeroed, "zero mask blocks the layer-1 signal");
    }
}
