//! Dense f64 tensors with reverse-mode gradient propagation for exactly the
//! operations the classifier needs.
//!
//! A [`Graph`] is a tape: every operation computes its value eagerly and
//! records how to push gradients back to its inputs. [`Graph::backward`]
//! walks the tape in reverse from a scalar loss, accumulating into each
//! tensor's paired `grad` buffer. Parameters keep their gradients across the
//! call; the caller zeroes them between steps.

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{Error, Result};

/// Probabilities are clamped to [EPS, 1 - EPS] before any log.
pub const PROB_CLAMP: f64 = 1e-12;

/// Which cross-entropy form to use; see [`Graph::cross_entropy_loss`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossMode {
    /// -(1/R) sum_i sum_p t ln y. The standard softmax pairing; default.
    Categorical,
    /// The binary form t ln y + (1-t) ln(1-y), summed over outputs.
    LiteralBinary,
}

/// Which weight-decay form to use; see [`Graph::l2_penalty`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PenaltyMode {
    /// eta * sum w^2 (squared Frobenius norm); default.
    Squared,
    /// eta * ||W||_2 (unsquared).
    Norm,
}

pub struct TensorData {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub grad: Vec<f64>,
}

/// Shared handle to a value/gradient pair. Cloning is cheap and aliases the
/// same storage; a graph and its tensors belong to one thread at a time.
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<RefCell<TensorData>>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Tensor {
        let len = shape.iter().product();
        Tensor::raw(shape.to_vec(), vec![0.0; len])
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor::raw(vec![1], vec![value])
    }

    pub fn from_values(shape: &[usize], values: Vec<f64>) -> Result<Tensor> {
        let expected: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) || values.len() != expected {
            return Err(Error::ShapeMismatch {
                op: "from_values",
                detail: format!("{} values for shape {shape:?}", values.len()),
            });
        }
        Ok(Tensor::raw(shape.to_vec(), values))
    }

    fn raw(shape: Vec<usize>, values: Vec<f64>) -> Tensor {
        let grad = vec![0.0; values.len()];
        Tensor {
            inner: Rc::new(RefCell::new(TensorData {
                shape,
                values,
                grad,
            })),
        }
    }

    pub fn shape(&self) -> Vec<usize> {
        self.inner.borrow().shape.clone()
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn values(&self) -> Vec<f64> {
        self.inner.borrow().values.clone()
    }

    pub fn grad(&self) -> Vec<f64> {
        self.inner.borrow().grad.clone()
    }

    pub fn value_at(&self, i: usize) -> f64 {
        self.inner.borrow().values[i]
    }

    /// Value of a single-element tensor.
    pub fn scalar_value(&self) -> f64 {
        let data = self.inner.borrow();
        debug_assert_eq!(data.values.len(), 1, "scalar_value on non-scalar");
        data.values[0]
    }

    pub fn set_values(&self, values: &[f64]) {
        let mut data = self.inner.borrow_mut();
        assert_eq!(data.values.len(), values.len(), "set_values length");
        data.values.copy_from_slice(values);
    }

    pub fn zero_grad(&self) {
        self.inner.borrow_mut().grad.iter_mut().for_each(|g| *g = 0.0);
    }

    /// Mutable access to the raw storage, for optimizers and serialization.
    pub fn with_data<R>(&self, f: impl FnOnce(&mut TensorData) -> R) -> R {
        f(&mut self.inner.borrow_mut())
    }

    pub fn same_storage(&self, other: &Tensor) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let data = self.inner.borrow();
        f.debug_struct("Tensor")
            .field("shape", &data.shape)
            .field("values", &data.values)
            .finish()
    }
}

enum Rule {
    EmbedLookup {
        table: Tensor,
        indices: Vec<usize>,
    },
    ConvWindow {
        x: Tensor,
        w: Tensor,
        b: Tensor,
    },
    Relu {
        z: Tensor,
    },
    MaxOverTime {
        h: Tensor,
        argmax: usize,
    },
    Concat {
        parts: Vec<Tensor>,
    },
    StackRows {
        rows: Vec<Tensor>,
    },
    DenseSoftmax {
        hhat: Tensor,
        mask: Tensor,
        weights: Tensor,
        bias: Tensor,
    },
    CrossEntropy {
        y: Tensor,
        targets: Tensor,
        mode: LossMode,
    },
    L2Penalty {
        weights: Tensor,
        eta: f64,
        mode: PenaltyMode,
    },
    AddScalars {
        a: Tensor,
        b: Tensor,
    },
    WeightedSum {
        x: Tensor,
        coeffs: Vec<f64>,
    },
}

struct Node {
    output: Tensor,
    rule: Rule,
}

/// Tape of recorded operations, in execution order.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn softmax_stable(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

fn clamp_prob(y: f64) -> f64 {
    y.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

fn in_clamp_interior(y: f64) -> bool {
    y > PROB_CLAMP && y < 1.0 - PROB_CLAMP
}

impl Graph {
    pub fn new() -> Graph {
        Graph::default()
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    fn record(&mut self, output: Tensor, rule: Rule) -> Tensor {
        self.nodes.push(Node {
            output: output.clone(),
            rule,
        });
        output
    }

    /// Gather rows of an embedding table: row n of the output is
    /// `table[indices[n]]`.
    pub fn embed_lookup(&mut self, table: &Tensor, indices: &[u32]) -> Result<Tensor> {
        let (rows, dim) = {
            let data = table.inner.borrow();
            if data.shape.len() != 2 {
                return Err(Error::ShapeMismatch {
                    op: "embed_lookup",
                    detail: format!("table must be 2-D, got {:?}", data.shape),
                });
            }
            (data.shape[0], data.shape[1])
        };
        let mut gathered = Vec::with_capacity(indices.len() * dim);
        let mut usize_indices = Vec::with_capacity(indices.len());
        {
            let data = table.inner.borrow();
            for &index in indices {
                let index = index as usize;
                if index >= rows {
                    return Err(Error::IndexOutOfRange { index, rows });
                }
                gathered.extend_from_slice(&data.values[index * dim..(index + 1) * dim]);
                usize_indices.push(index);
            }
        }
        let output = Tensor::raw(vec![indices.len(), dim], gathered);
        Ok(self.record(
            output,
            Rule::EmbedLookup {
                table: table.clone(),
                indices: usize_indices,
            },
        ))
    }

    /// Sliding-window convolution over a token-embedding matrix, before
    /// activation: `h[m] = sum_{k,d} x[m+k][d] * w[k][d] + b[m]`.
    pub fn conv_window(&mut self, x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (n, d, k, m) = {
            let xd = x.inner.borrow();
            let wd = w.inner.borrow();
            let bd = b.inner.borrow();
            if xd.shape.len() != 2 || wd.shape.len() != 2 {
                return Err(Error::ShapeMismatch {
                    op: "conv_window",
                    detail: format!("x {:?} and w {:?} must be 2-D", xd.shape, wd.shape),
                });
            }
            let (n, d) = (xd.shape[0], xd.shape[1]);
            let (k, wd_dim) = (wd.shape[0], wd.shape[1]);
            if wd_dim != d || n < k {
                return Err(Error::ShapeMismatch {
                    op: "conv_window",
                    detail: format!("x {:?} incompatible with w {:?}", xd.shape, wd.shape),
                });
            }
            let m = n - k + 1;
            if bd.values.len() != m {
                return Err(Error::ShapeMismatch {
                    op: "conv_window",
                    detail: format!("bias length {} != {}", bd.values.len(), m),
                });
            }
            (n, d, k, m)
        };
        let _ = n;
        let xd = x.inner.borrow();
        let wd = w.inner.borrow();
        let bd = b.inner.borrow();
        let mut out = Vec::with_capacity(m);
        for i in 0..m {
            let mut acc = bd.values[i];
            let window = &xd.values[i * d..(i + k) * d];
            for (xv, wv) in window.iter().zip(wd.values.iter()) {
                acc += xv * wv;
            }
            out.push(acc);
        }
        drop((xd, wd, bd));
        let output = Tensor::raw(vec![m], out);
        Ok(self.record(
            output,
            Rule::ConvWindow {
                x: x.clone(),
                w: w.clone(),
                b: b.clone(),
            },
        ))
    }

    /// Elementwise max(0, z).
    pub fn relu(&mut self, z: &Tensor) -> Tensor {
        let (shape, values) = {
            let data = z.inner.borrow();
            (
                data.shape.clone(),
                data.values.iter().map(|&v| v.max(0.0)).collect(),
            )
        };
        let output = Tensor::raw(shape, values);
        self.record(output, Rule::Relu { z: z.clone() })
    }

    /// Max-over-time pooling: the single largest entry of a feature map.
    /// Ties break toward the lowest index.
    pub fn max_over_time(&mut self, h: &Tensor) -> Result<Tensor> {
        let (argmax, max) = {
            let data = h.inner.borrow();
            if data.values.is_empty() {
                return Err(Error::ShapeMismatch {
                    op: "max_over_time",
                    detail: "empty feature map".to_string(),
                });
            }
            let mut argmax = 0;
            let mut max = data.values[0];
            for (i, &v) in data.values.iter().enumerate().skip(1) {
                if v > max {
                    max = v;
                    argmax = i;
                }
            }
            (argmax, max)
        };
        let output = Tensor::scalar(max);
        Ok(self.record(
            output,
            Rule::MaxOverTime {
                h: h.clone(),
                argmax,
            },
        ))
    }

    /// Concatenate 1-D tensors into one vector.
    pub fn concat(&mut self, parts: &[Tensor]) -> Tensor {
        let mut values = Vec::new();
        for part in parts {
            values.extend_from_slice(&part.inner.borrow().values);
        }
        let output = Tensor::raw(vec![values.len()], values);
        self.record(
            output,
            Rule::Concat {
                parts: parts.to_vec(),
            },
        )
    }

    /// Stack equal-length vectors into a matrix, one row each.
    pub fn stack_rows(&mut self, rows: &[Tensor]) -> Result<Tensor> {
        if rows.is_empty() {
            return Err(Error::ShapeMismatch {
                op: "stack_rows",
                detail: "no rows".to_string(),
            });
        }
        let width = rows[0].len();
        let mut values = Vec::with_capacity(rows.len() * width);
        for row in rows {
            let data = row.inner.borrow();
            if data.values.len() != width {
                return Err(Error::ShapeMismatch {
                    op: "stack_rows",
                    detail: format!("row length {} != {}", data.values.len(), width),
                });
            }
            values.extend_from_slice(&data.values);
        }
        let output = Tensor::raw(vec![rows.len(), width], values);
        Ok(self.record(
            output,
            Rule::StackRows {
                rows: rows.to_vec(),
            },
        ))
    }

    /// Masked dense layer into a softmax distribution:
    /// `y = softmax(sum_l hhat[l] * mask[l] * w[l][p] + b[p])`.
    ///
    /// The mask is treated as a constant multiplier (no gradient flows into
    /// it); training passes the scaled dropout mask, inference all-ones.
    pub fn dense_softmax(
        &mut self,
        hhat: &Tensor,
        mask: &Tensor,
        weights: &Tensor,
        bias: &Tensor,
    ) -> Result<Tensor> {
        let probs = {
            let hd = hhat.inner.borrow();
            let md = mask.inner.borrow();
            let wd = weights.inner.borrow();
            let bd = bias.inner.borrow();
            let l = hd.values.len();
            let p = bd.values.len();
            let ok = md.values.len() == l && wd.shape.len() == 2 && wd.shape[0] == l && wd.shape[1] == p;
            if !ok {
                return Err(Error::ShapeMismatch {
                    op: "dense_softmax",
                    detail: format!(
                        "hhat[{l}], mask[{}], w{:?}, b[{p}]",
                        md.values.len(),
                        wd.shape
                    ),
                });
            }
            let mut logits = bd.values.clone();
            for li in 0..l {
                let masked = hd.values[li] * md.values[li];
                if masked != 0.0 {
                    let row = &wd.values[li * p..(li + 1) * p];
                    for (logit, wv) in logits.iter_mut().zip(row.iter()) {
                        *logit += masked * wv;
                    }
                }
            }
            softmax_stable(&logits)
        };
        let output = Tensor::raw(vec![probs.len()], probs);
        Ok(self.record(
            output,
            Rule::DenseSoftmax {
                hhat: hhat.clone(),
                mask: mask.clone(),
                weights: weights.clone(),
                bias: bias.clone(),
            },
        ))
    }

    /// Mean cross-entropy between predicted rows `y` and one-hot targets.
    pub fn cross_entropy_loss(
        &mut self,
        y: &Tensor,
        targets: &Tensor,
        mode: LossMode,
    ) -> Result<Tensor> {
        let loss = {
            let yd = y.inner.borrow();
            let td = targets.inner.borrow();
            if yd.shape.len() != 2 || yd.shape != td.shape {
                return Err(Error::ShapeMismatch {
                    op: "cross_entropy_loss",
                    detail: format!("y {:?} vs targets {:?}", yd.shape, td.shape),
                });
            }
            let rows = yd.shape[0] as f64;
            let mut total = 0.0;
            for (&yv, &tv) in yd.values.iter().zip(td.values.iter()) {
                let cy = clamp_prob(yv);
                total += match mode {
                    LossMode::Categorical => tv * cy.ln(),
                    LossMode::LiteralBinary => tv * cy.ln() + (1.0 - tv) * (1.0 - cy).ln(),
                };
            }
            -total / rows
        };
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                context: "cross_entropy_loss".to_string(),
            });
        }
        let output = Tensor::scalar(loss);
        Ok(self.record(
            output,
            Rule::CrossEntropy {
                y: y.clone(),
                targets: targets.clone(),
                mode,
            },
        ))
    }

    /// Weight-decay term over the output weights.
    pub fn l2_penalty(&mut self, weights: &Tensor, eta: f64, mode: PenaltyMode) -> Result<Tensor> {
        if eta < 0.0 {
            return Err(Error::InvalidConfig(format!("negative l2 eta {eta}")));
        }
        let sum_sq: f64 = weights
            .inner
            .borrow()
            .values
            .iter()
            .map(|&w| w * w)
            .sum();
        let value = match mode {
            PenaltyMode::Squared => eta * sum_sq,
            PenaltyMode::Norm => eta * sum_sq.sqrt(),
        };
        let output = Tensor::scalar(value);
        Ok(self.record(
            output,
            Rule::L2Penalty {
                weights: weights.clone(),
                eta,
                mode,
            },
        ))
    }

    /// Sum of two scalar tensors.
    pub fn add_scalars(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.len() != 1 || b.len() != 1 {
            return Err(Error::ShapeMismatch {
                op: "add_scalars",
                detail: format!("lengths {} and {}", a.len(), b.len()),
            });
        }
        let output = Tensor::scalar(a.scalar_value() + b.scalar_value());
        Ok(self.record(
            output,
            Rule::AddScalars {
                a: a.clone(),
                b: b.clone(),
            },
        ))
    }

    /// Dot product with a fixed coefficient vector, reducing to a scalar.
    pub fn weighted_sum(&mut self, x: &Tensor, coeffs: &[f64]) -> Result<Tensor> {
        let value = {
            let data = x.inner.borrow();
            if data.values.len() != coeffs.len() {
                return Err(Error::ShapeMismatch {
                    op: "weighted_sum",
                    detail: format!("{} values, {} coeffs", data.values.len(), coeffs.len()),
                });
            }
            data.values
                .iter()
                .zip(coeffs.iter())
                .map(|(&v, &c)| v * c)
                .sum()
        };
        let output = Tensor::scalar(value);
        Ok(self.record(
            output,
            Rule::WeightedSum {
                x: x.clone(),
                coeffs: coeffs.to_vec(),
            },
        ))
    }

    /// Reverse-mode sweep from a scalar loss produced by this graph.
    /// Gradients accumulate into every tensor's `grad` buffer.
    pub fn backward(&self, loss: &Tensor) -> Result<()> {
        let position = self
            .nodes
            .iter()
            .rposition(|node| node.output.same_storage(loss))
            .ok_or(Error::GraphNotFinalized(
                "loss tensor was not produced by this graph",
            ))?;
        if loss.len() != 1 {
            return Err(Error::GraphNotFinalized("loss tensor is not a scalar"));
        }
        loss.inner.borrow_mut().grad[0] += 1.0;
        for node in self.nodes[..=position].iter().rev() {
            node.apply_backward();
        }
        Ok(())
    }
}

impl Node {
    fn apply_backward(&self) {
        let out_grad = self.output.inner.borrow().grad.clone();
        if out_grad.iter().all(|&g| g == 0.0) {
            return;
        }
        match &self.rule {
            Rule::EmbedLookup { table, indices } => {
                let mut td = table.inner.borrow_mut();
                let dim = td.shape[1];
                for (n, &index) in indices.iter().enumerate() {
                    let row = &mut td.grad[index * dim..(index + 1) * dim];
                    for (g, &og) in row.iter_mut().zip(&out_grad[n * dim..(n + 1) * dim]) {
                        *g += og;
                    }
                }
            }
            Rule::ConvWindow { x, w, b } => {
                let (k, d) = {
                    let wd = w.inner.borrow();
                    (wd.shape[0], wd.shape[1])
                };
                let x_values = x.inner.borrow().values.clone();
                let w_values = w.inner.borrow().values.clone();
                {
                    let mut xd = x.inner.borrow_mut();
                    for (i, &g) in out_grad.iter().enumerate() {
                        if g == 0.0 {
                            continue;
                        }
                        let window = &mut xd.grad[i * d..(i + k) * d];
                        for (gx, &wv) in window.iter_mut().zip(w_values.iter()) {
                            *gx += g * wv;
                        }
                    }
                }
                {
                    let mut wd = w.inner.borrow_mut();
                    for (i, &g) in out_grad.iter().enumerate() {
                        if g == 0.0 {
                            continue;
                        }
                        let window = &x_values[i * d..(i + k) * d];
                        for (gw, &xv) in wd.grad.iter_mut().zip(window.iter()) {
                            *gw += g * xv;
                        }
                    }
                }
                let mut bd = b.inner.borrow_mut();
                for (gb, &g) in bd.grad.iter_mut().zip(out_grad.iter()) {
                    *gb += g;
                }
            }
            Rule::Relu { z } => {
                let mut zd = z.inner.borrow_mut();
                for i in 0..zd.values.len() {
                    if zd.values[i] > 0.0 {
                        zd.grad[i] += out_grad[i];
                    }
                }
            }
            Rule::MaxOverTime { h, argmax } => {
                h.inner.borrow_mut().grad[*argmax] += out_grad[0];
            }
            Rule::Concat { parts } => {
                let mut offset = 0;
                for part in parts {
                    let mut pd = part.inner.borrow_mut();
                    let len = pd.values.len();
                    for (g, &og) in pd.grad.iter_mut().zip(&out_grad[offset..offset + len]) {
                        *g += og;
                    }
                    offset += len;
                }
            }
            Rule::StackRows { rows } => {
                let width = rows[0].len();
                for (r, row) in rows.iter().enumerate() {
                    let mut rd = row.inner.borrow_mut();
                    for (g, &og) in rd.grad.iter_mut().zip(&out_grad[r * width..(r + 1) * width]) {
                        *g += og;
                    }
                }
            }
            Rule::DenseSoftmax {
                hhat,
                mask,
                weights,
                bias,
            } => {
                let probs = self.output.inner.borrow().values.clone();
                // dL/dz through the softmax Jacobian
                let dot: f64 = out_grad.iter().zip(probs.iter()).map(|(&g, &y)| g * y).sum();
                let gz: Vec<f64> = probs
                    .iter()
                    .zip(out_grad.iter())
                    .map(|(&y, &g)| y * (g - dot))
                    .collect();
                let h_values = hhat.inner.borrow().values.clone();
                let m_values = mask.inner.borrow().values.clone();
                let p = gz.len();
                {
                    let wd = weights.inner.borrow();
                    let mut hd = hhat.inner.borrow_mut();
                    for (li, gh) in hd.grad.iter_mut().enumerate() {
                        if m_values[li] == 0.0 {
                            continue;
                        }
                        let row = &wd.values[li * p..(li + 1) * p];
                        let acc: f64 = row.iter().zip(gz.iter()).map(|(&wv, &g)| wv * g).sum();
                        *gh += m_values[li] * acc;
                    }
                }
                {
                    let mut wd = weights.inner.borrow_mut();
                    for li in 0..h_values.len() {
                        let masked = h_values[li] * m_values[li];
                        if masked == 0.0 {
                            continue;
                        }
                        let row = &mut wd.grad[li * p..(li + 1) * p];
                        for (gw, &g) in row.iter_mut().zip(gz.iter()) {
                            *gw += masked * g;
                        }
                    }
                }
                let mut bd = bias.inner.borrow_mut();
                for (gb, &g) in bd.grad.iter_mut().zip(gz.iter()) {
                    *gb += g;
                }
            }
            Rule::CrossEntropy { y, targets, mode } => {
                let g = out_grad[0];
                let td = targets.inner.borrow();
                let mut yd = y.inner.borrow_mut();
                let rows = yd.shape[0] as f64;
                for i in 0..yd.values.len() {
                    let yv = yd.values[i];
                    if !in_clamp_interior(yv) {
                        continue;
                    }
                    let tv = td.values[i];
                    let d = match mode {
                        LossMode::Categorical => -tv / yv,
                        LossMode::LiteralBinary => -(tv / yv - (1.0 - tv) / (1.0 - yv)),
                    };
                    yd.grad[i] += g * d / rows;
                }
            }
            Rule::L2Penalty { weights, eta, mode } => {
                let g = out_grad[0];
                let mut wd = weights.inner.borrow_mut();
                match mode {
                    PenaltyMode::Squared => {
                        for i in 0..wd.values.len() {
                            let v = wd.values[i];
                            wd.grad[i] += g * eta * 2.0 * v;
                        }
                    }
                    PenaltyMode::Norm => {
                        let norm: f64 = wd.values.iter().map(|&w| w * w).sum::<f64>().sqrt();
                        if norm > 0.0 {
                            for i in 0..wd.values.len() {
                                let v = wd.values[i];
                                wd.grad[i] += g * eta * v / norm;
                            }
                        }
                    }
                }
            }
            Rule::AddScalars { a, b } => {
                a.inner.borrow_mut().grad[0] += out_grad[0];
                b.inner.borrow_mut().grad[0] += out_grad[0];
            }
            Rule::WeightedSum { x, coeffs } => {
                let g = out_grad[0];
                let mut xd = x.inner.borrow_mut();
                for (gx, &c) in xd.grad.iter_mut().zip(coeffs.iter()) {
                    *gx += g * c;
                }
            }
        }
    }
}
