//! Append-only computation tape with reverse-mode gradients.

use super::params::{Param, PolicyParams};

pub type NodeId = usize;

#[derive(Debug, Clone)]
enum NodeOp {
    Input,
    Row { param: Param, row: usize },
    Affine { terms: Vec<(Param, usize, NodeId)>, bias: Option<Param> },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Slice { x: NodeId, start: usize },
    /// `s_i = v . tanh(query + key_i)`; the tanh outputs are cached.
    Additive { query: NodeId, keys: Vec<NodeId>, v: Param, hidden: Vec<Vec<f64>> },
    /// `sum_i softmax(scores)_i * values_i`
    Attend { scores: NodeId, values: Vec<NodeId>, weights: Vec<f64> },
    /// `-log softmax(scores)[target]`
    NegLogSoftmax { scores: NodeId, target: usize, probs: Vec<f64> },
}

#[derive(Debug, Clone)]
struct Node {
    op: NodeOp,
    value: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node created after the first `len`.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id].value
    }

    fn push(&mut self, op: NodeOp, value: Vec<f64>) -> NodeId {
        self.nodes.push(Node { op, value });
        self.nodes.len() - 1
    }

    pub fn input(&mut self, value: Vec<f64>) -> NodeId {
        self.push(NodeOp::Input, value)
    }

    pub fn row(&mut self, params: &PolicyParams, param: Param, row: usize) -> NodeId {
        let value = params.get(param).row(row).to_vec();
        self.push(NodeOp::Row { param, row }, value)
    }

    /// `sum_k W_k[:, off_k..] x_k (+ b)`
    pub fn affine(
        &mut self,
        params: &PolicyParams,
        terms: &[(Param, usize, NodeId)],
        bias: Option<Param>,
    ) -> NodeId {
        let rows = params.get(terms[0].0).rows;
        let mut value = match bias {
            Some(b) => params.get(b).data.clone(),
            None => vec![0.0; rows],
        };
        for &(p, offset, x) in terms {
            params.get(p).mul_vec_into(offset, &self.nodes[x].value, &mut value);
        }
        self.push(
            NodeOp::Affine {
                terms: terms.to_vec(),
                bias,
            },
            value,
        )
    }

    fn zip_with(&mut self, a: NodeId, b: NodeId, op: NodeOp, f: impl Fn(f64, f64) -> f64) -> NodeId {
        let value = self.nodes[a]
            .value
            .iter()
            .zip(&self.nodes[b].value)
            .map(|(&x, &y)| f(x, y))
            .collect();
        self.push(op, value)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip_with(a, b, NodeOp::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip_with(a, b, NodeOp::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip_with(a, b, NodeOp::Mul(a, b), |x, y| x * y)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let value = self.nodes[x].value.iter().map(|v| v.tanh()).collect();
        self.push(NodeOp::Tanh(x), value)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let value = self.nodes[x].value.iter().map(|&v| sigmoid(v)).collect();
        self.push(NodeOp::Sigmoid(x), value)
    }

    pub fn slice(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let value = self.nodes[x].value[start..start + len].to_vec();
        self.push(NodeOp::Slice { x, start }, value)
    }

    pub fn additive_scores(&mut self, params: &PolicyParams, query: NodeId, keys: &[NodeId], v: Param) -> NodeId {
        let vv = &params.get(v).data;
        let q = &self.nodes[query].value;
        let mut hidden = Vec::with_capacity(keys.len());
        let mut scores = Vec::with_capacity(keys.len());
        for &k in keys {
            let h: Vec<f64> = q.iter().zip(&self.nodes[k].value).map(|(a, b)| (a + b).tanh()).collect();
            scores.push(h.iter().zip(vv).map(|(a, b)| a * b).sum());
            hidden.push(h);
        }
        self.push(
            NodeOp::Additive {
                query,
                keys: keys.to_vec(),
                v,
                hidden,
            },
            scores,
        )
    }

    pub fn attend(&mut self, scores: NodeId, values: &[NodeId]) -> NodeId {
        let weights = softmax(&self.nodes[scores].value);
        let width = self.nodes[values[0]].value.len();
        let mut out = vec![0.0; width];
        for (&w, &v) in weights.iter().zip(values) {
            for (o, x) in out.iter_mut().zip(&self.nodes[v].value) {
                *o += w * x;
            }
        }
        self.push(
            NodeOp::Attend {
                scores,
                values: values.to_vec(),
                weights,
            },
            out,
        )
    }

    pub fn neg_log_softmax(&mut self, scores: NodeId, target: usize) -> NodeId {
        let probs = softmax(&self.nodes[scores].value);
        let loss = -probs[target].ln();
        self.push(NodeOp::NegLogSoftmax { scores, target, probs }, vec![loss])
    }

    /// Gradients of `sum_i weight_i * node_i` where each seeded node is a scalar.
    pub fn backward(&self, params: &PolicyParams, seeds: &[(NodeId, f64)]) -> PolicyParams {
        let mut grads = params.zeros_like();
        let mut adj: Vec<Vec<f64>> = vec![Vec::new(); self.nodes.len()];
        let mut start = 0;
        for &(id, w) in seeds {
            debug_assert_eq!(self.nodes[id].value.len(), 1);
            if adj[id].is_empty() {
                adj[id] = vec![0.0];
            }
            adj[id][0] += w;
            start = start.max(id + 1);
        }

        fn acc(adj: &mut [Vec<f64>], id: NodeId, len: usize) -> &mut Vec<f64> {
            let slot = &mut adj[id];
            if slot.is_empty() {
                *slot = vec![0.0; len];
            }
            slot
        }

        for id in (0..start).rev() {
            if adj[id].is_empty() {
                continue;
            }
            let dy = std::mem::take(&mut adj[id]);
            let node = &self.nodes[id];
            let len_of = |n: NodeId| self.nodes[n].value.len();
            match &node.op {
                NodeOp::Input => {}
                NodeOp::Row { param, row } => {
                    for (g, d) in grads.get_mut(*param).row_mut(*row).iter_mut().zip(&dy) {
                        *g += d;
                    }
                }
                NodeOp::Affine { terms, bias } => {
                    if let Some(b) = bias {
                        for (g, d) in grads.get_mut(*b).data.iter_mut().zip(&dy) {
                            *g += d;
                        }
                    }
                    for &(p, offset, x) in terms {
                        grads.get_mut(p).add_outer(offset, &dy, &self.nodes[x].value);
                        if !matches!(self.nodes[x].op, NodeOp::Input) {
                            let n = len_of(x);
                            params.get(p).mul_vec_transpose_into(offset, &dy, acc(&mut adj, x, n));
                        }
                    }
                }
                NodeOp::Add(a, b) | NodeOp::Sub(a, b) => {
                    let sign = if matches!(node.op, NodeOp::Sub(..)) { -1.0 } else { 1.0 };
                    let (a, b) = (*a, *b);
                    let n = dy.len();
                    for (g, d) in acc(&mut adj, a, n).iter_mut().zip(&dy) {
                        *g += d;
                    }
                    for (g, d) in acc(&mut adj, b, n).iter_mut().zip(&dy) {
                        *g += sign * d;
                    }
                }
                NodeOp::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    let n = dy.len();
                    let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
                    let da: Vec<f64> = dy.iter().zip(vb).map(|(d, y)| d * y).collect();
                    let db: Vec<f64> = dy.iter().zip(va).map(|(d, x)| d * x).collect();
                    for (g, d) in acc(&mut adj, a, n).iter_mut().zip(&da) {
                        *g += d;
                    }
                    for (g, d) in acc(&mut adj, b, n).iter_mut().zip(&db) {
                        *g += d;
                    }
                }
                NodeOp::Tanh(x) => {
                    let n = dy.len();
                    let g = acc(&mut adj, *x, n);
                    for ((g, d), y) in g.iter_mut().zip(&dy).zip(&node.value) {
                        *g += d * (1.0 - y * y);
                    }
                }
                NodeOp::Sigmoid(x) => {
                    let n = dy.len();
                    let g = acc(&mut adj, *x, n);
                    for ((g, d), y) in g.iter_mut().zip(&dy).zip(&node.value) {
                        *g += d * y * (1.0 - y);
                    }
                }
                NodeOp::Slice { x, start } => {
                    let n = len_of(*x);
                    let g = acc(&mut adj, *x, n);
                    for (g, d) in g[*start..*start + dy.len()].iter_mut().zip(&dy) {
                        *g += d;
                    }
                }
                NodeOp::Additive { query, keys, v, hidden } => {
                    let vv = &params.get(*v).data;
                    let width = vv.len();
                    let mut dq = vec![0.0; width];
                    for ((&ds, h), &k) in dy.iter().zip(hidden).zip(keys) {
                        if ds == 0.0 {
                            continue;
                        }
                        for (g, t) in grads.get_mut(*v).data.iter_mut().zip(h) {
                            *g += ds * t;
                        }
                        let pre: Vec<f64> = h.iter().zip(vv).map(|(t, w)| ds * w * (1.0 - t * t)).collect();
                        for (q, p) in dq.iter_mut().zip(&pre) {
                            *q += p;
                        }
                        if !matches!(self.nodes[k].op, NodeOp::Input) {
                            for (g, p) in acc(&mut adj, k, width).iter_mut().zip(&pre) {
                                *g += p;
                            }
                        }
                    }
                    for (g, p) in acc(&mut adj, *query, width).iter_mut().zip(&dq) {
                        *g += p;
                    }
                }
                NodeOp::Attend { scores, values, weights } => {
                    let mut dw = Vec::with_capacity(values.len());
                    for (&w, &v) in weights.iter().zip(values) {
                        let hv = &self.nodes[v].value;
                        dw.push(dy.iter().zip(hv).map(|(a, b)| a * b).sum::<f64>());
                        let n = hv.len();
                        for (g, d) in acc(&mut adj, v, n).iter_mut().zip(&dy) {
                            *g += w * d;
                        }
                    }
                    let mean: f64 = weights.iter().zip(&dw).map(|(w, d)| w * d).sum();
                    let n = weights.len();
                    for ((g, w), d) in acc(&mut adj, *scores, n).iter_mut().zip(weights).zip(&dw) {
                        *g += w * (d - mean);
                    }
                }
                NodeOp::NegLogSoftmax { scores, target, probs } => {
                    let n = probs.len();
                    let g = acc(&mut adj, *scores, n);
                    for (i, (g, p)) in g.iter_mut().zip(probs).enumerate() {
                        let onehot = if i == *target { 1.0 } else { 0.0 };
                        *g += dy[0] * (p - onehot);
                    }
                }
            }
        }
        grads
    }
}
