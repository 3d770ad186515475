//! Reverse-mode automatic differentiation over whole tensors.
//!
//! A `Tape` owns every tensor produced during one forward pass. Each op
//! appends a node and returns a `Var` handle into the tape. Ops can only
//! consume handles that already exist, so walking nodes in reverse creation
//! order is a valid reverse topological order for `backward`.
//!
//! Gradients flow only into nodes whose `requires_grad` is set (leaves added
//! with `param`, or anything computed from one); everything else is skipped,
//! so inference and frozen-input training pay no backward cost for data.

use crate::error::{Error, Result};
use crate::tensor::{format_shape, matmul_acc, transpose_into, two_dims, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Classification targets for `softmax_cross_entropy`.
#[derive(Clone, Debug)]
pub enum Targets {
    /// One label in [0,k) per row.
    Hard(Vec<u32>),
    /// Row-major N×k probability rows, each summing to 1 within 1e-5.
    Soft { rows: Vec<f32>, classes: usize },
}

struct Conv2dGeo {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    f: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    oh: usize,
    ow: usize,
}

struct Conv1dGeo {
    n: usize,
    l: usize,
    d: usize,
    f: usize,
    w: usize,
    out_l: usize,
}

enum Op {
    Leaf,
    Add {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        c: f32,
    },
    HadamardConst {
        x: Var,
        c: Tensor,
    },
    Relu {
        x: Var,
    },
    Reshape {
        x: Var,
    },
    Mean {
        x: Var,
    },
    Matmul {
        a: Var,
        b: Var,
    },
    AddBias {
        x: Var,
        bias: Var,
    },
    Conv2d {
        input: Var,
        kernels: Var,
        patches: Vec<f32>,
        geo: Conv2dGeo,
    },
    Conv1dSeq {
        input: Var,
        kernels: Var,
        geo: Conv1dGeo,
    },
    MaxPool2d {
        x: Var,
        /// Flat input index of each window's max.
        arg: Vec<u32>,
    },
    MaxOverTime {
        x: Var,
        arg: Vec<u32>,
    },
    Embedding {
        table: Var,
        ids: Vec<u32>,
    },
    SelectRows {
        x: Var,
        rows: Vec<u32>,
    },
    ConcatCols {
        parts: Vec<Var>,
        widths: Vec<usize>,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        targets: Targets,
    },
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Accumulated gradients from one backward pass, addressed by `Var`.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Constant input; no gradient is tracked for it.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, false, Op::Leaf)
    }

    /// Trainable input; `backward` accumulates a gradient of the same shape.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, true, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Dimension(format!(
                "add shapes differ: {} vs {}",
                format_shape(self.value(a).shape()),
                format_shape(self.value(b).shape())
            )));
        }
        let data: Vec<f32> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let rg = self.wants(a) || self.wants(b);
        Ok(self.push(value, rg, Op::Add { a, b }))
    }

    pub fn scale(&mut self, x: Var, c: f32) -> Var {
        let data: Vec<f32> = self.value(x).data().iter().map(|v| v * c).collect();
        let value = Tensor::new(self.value(x).shape().to_vec(), data).expect("same shape");
        let rg = self.wants(x);
        self.push(value, rg, Op::Scale { x, c })
    }

    /// Elementwise product with a constant tensor (no gradient through `c`).
    pub fn hadamard_const(&mut self, x: Var, c: &Tensor) -> Result<Var> {
        if self.value(x).shape() != c.shape() {
            return Err(Error::Dimension(format!(
                "hadamard shapes differ: {} vs {}",
                format_shape(self.value(x).shape()),
                format_shape(c.shape())
            )));
        }
        let data: Vec<f32> = self
            .value(x)
            .data()
            .iter()
            .zip(c.data())
            .map(|(a, b)| a * b)
            .collect();
        let value = Tensor::new(c.shape().to_vec(), data)?;
        let rg = self.wants(x);
        Ok(self.push(value, rg, Op::HadamardConst { x, c: c.clone() }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let data: Vec<f32> = self.value(x).data().iter().map(|v| v.max(0.0)).collect();
        let value = Tensor::new(self.value(x).shape().to_vec(), data).expect("same shape");
        let rg = self.wants(x);
        self.push(value, rg, Op::Relu { x })
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.value(x).reshaped(shape)?;
        let rg = self.wants(x);
        Ok(self.push(value, rg, Op::Reshape { x }))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        if n == 0 {
            return Err(Error::Dimension("mean of an empty tensor".to_string()));
        }
        let sum: f64 = self.value(x).data().iter().map(|&v| v as f64).sum();
        let value = Tensor::scalar((sum / n as f64) as f32);
        let rg = self.wants(x);
        Ok(self.push(value, rg, Op::Mean { x }))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let [m, ka] = two_dims(self.value(a), "matmul lhs")?;
        let [kb, n] = two_dims(self.value(b), "matmul rhs")?;
        if ka != kb {
            return Err(Error::Dimension(format!(
                "matmul inner dims differ: {} vs {}",
                format_shape(self.value(a).shape()),
                format_shape(self.value(b).shape())
            )));
        }
        let mut out = vec![0.0f32; m * n];
        matmul_acc(self.value(a).data(), m, ka, self.value(b).data(), n, &mut out);
        let value = Tensor::new(vec![m, n], out)?;
        let rg = self.wants(a) || self.wants(b);
        Ok(self.push(value, rg, Op::Matmul { a, b }))
    }

    /// Broadcast `bias` (rank 1) along dim 1 of `x` (rank ≥ 2): dense rows,
    /// conv channel maps, and sequence filters all share this shape rule.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() < 2 {
            return Err(Error::Dimension(format!(
                "add_bias input must have rank ≥ 2, got {}",
                format_shape(&xs)
            )));
        }
        let blen = match self.value(bias).shape() {
            [b] => *b,
            s => {
                return Err(Error::Dimension(format!(
                    "bias must be rank 1, got {}",
                    format_shape(s)
                )))
            }
        };
        if blen != xs[1] {
            return Err(Error::Dimension(format!(
                "bias length {} vs dim-1 size {}",
                blen, xs[1]
            )));
        }
        let inner: usize = xs[2..].iter().product();
        let bdata = self.value(bias).data().to_vec();
        let mut data = self.value(x).data().to_vec();
        for chunk in data.chunks_mut(blen * inner) {
            for (j, &bv) in bdata.iter().enumerate() {
                for v in &mut chunk[j * inner..(j + 1) * inner] {
                    *v += bv;
                }
            }
        }
        let value = Tensor::new(xs, data)?;
        let rg = self.wants(x) || self.wants(bias);
        Ok(self.push(value, rg, Op::AddBias { x, bias }))
    }

    /// Valid (unpadded) cross-correlation of NCHW input with FCkk kernels.
    pub fn conv2d(&mut self, input: Var, kernels: Var, stride: usize) -> Result<Var> {
        let geo = {
            let xs = self.value(input).shape();
            let ks = self.value(kernels).shape();
            let ([n, c, h, w], [f, kc, kh, kw]) = match (xs, ks) {
                ([a, b, cc, d], [e, ff, g, hh]) => ([*a, *b, *cc, *d], [*e, *ff, *g, *hh]),
                _ => {
                    return Err(Error::Dimension(format!(
                        "conv2d wants NCHW input and FCHW kernels, got {} and {}",
                        format_shape(xs),
                        format_shape(ks)
                    )))
                }
            };
            if stride == 0 {
                return Err(Error::Validation("conv2d stride must be ≥ 1".to_string()));
            }
            if kc != c {
                return Err(Error::Dimension(format!(
                    "conv2d kernel channels {} vs input channels {}",
                    kc, c
                )));
            }
            if kh > h || kw > w {
                return Err(Error::Dimension(format!(
                    "conv2d kernel {}x{} larger than input {}x{}",
                    kh, kw, h, w
                )));
            }
            let oh = (h - kh) / stride + 1;
            let ow = (w - kw) / stride + 1;
            Conv2dGeo {
                n,
                c,
                h,
                w,
                f,
                kh,
                kw,
                stride,
                oh,
                ow,
            }
        };
        let g = &geo;
        let positions = g.oh * g.ow;
        let patch_len = g.c * g.kh * g.kw;
        let mut patches = vec![0.0f32; g.n * positions * patch_len];
        im2col_2d(self.value(input).data(), g, &mut patches);

        let kflat = self.value(kernels).data();
        let mut kt = vec![0.0f32; g.f * patch_len];
        transpose_into(kflat, g.f, patch_len, &mut kt);
        let mut rows_out = vec![0.0f32; g.n * positions * g.f];
        matmul_acc(&patches, g.n * positions, patch_len, &kt, g.f, &mut rows_out);

        // rows are [example, position, filter]; output wants [example, filter, position]
        let mut out = vec![0.0f32; g.n * g.f * positions];
        for ex in 0..g.n {
            transpose_into(
                &rows_out[ex * positions * g.f..(ex + 1) * positions * g.f],
                positions,
                g.f,
                &mut out[ex * g.f * positions..(ex + 1) * g.f * positions],
            );
        }
        let value = Tensor::new(vec![g.n, g.f, g.oh, g.ow], out)?;
        let rg = self.wants(input) || self.wants(kernels);
        Ok(self.push(
            value,
            rg,
            Op::Conv2d {
                input,
                kernels,
                patches,
                geo,
            },
        ))
    }

    /// Sequence convolution: NLd input, FWd kernels, full stride-1 sweep over
    /// the length axis. Output is N×F×(L−W+1).
    pub fn conv1d_seq(&mut self, input: Var, kernels: Var) -> Result<Var> {
        let geo = {
            let xs = self.value(input).shape();
            let ks = self.value(kernels).shape();
            let ([n, l, d], [f, w, kd]) = match (xs, ks) {
                ([a, b, cc], [e, ff, g]) => ([*a, *b, *cc], [*e, *ff, *g]),
                _ => {
                    return Err(Error::Dimension(format!(
                        "conv1d_seq wants NLd input and FWd kernels, got {} and {}",
                        format_shape(xs),
                        format_shape(ks)
                    )))
                }
            };
            if kd != d {
                return Err(Error::Dimension(format!(
                    "conv1d_seq kernel depth {} vs embedding dim {}",
                    kd, d
                )));
            }
            if w > l {
                return Err(Error::Dimension(format!(
                    "conv1d_seq filter width {} larger than sequence length {}",
                    w, l
                )));
            }
            Conv1dGeo {
                n,
                l,
                d,
                f,
                w,
                out_l: l - w + 1,
            }
        };
        let g = &geo;
        let patch_len = g.w * g.d;
        let x = self.value(input).data();
        let kflat = self.value(kernels).data();
        let mut kt = vec![0.0f32; g.f * patch_len];
        transpose_into(kflat, g.f, patch_len, &mut kt);

        // each patch row is already one contiguous slice of the input
        let mut rows_out = vec![0.0f32; g.n * g.out_l * g.f];
        for ex in 0..g.n {
            for t in 0..g.out_l {
                let patch = &x[(ex * g.l + t) * g.d..(ex * g.l + t) * g.d + patch_len];
                let dst = &mut rows_out[(ex * g.out_l + t) * g.f..(ex * g.out_l + t + 1) * g.f];
                matmul_acc(patch, 1, patch_len, &kt, g.f, dst);
            }
        }
        let mut out = vec![0.0f32; g.n * g.f * g.out_l];
        for ex in 0..g.n {
            transpose_into(
                &rows_out[ex * g.out_l * g.f..(ex + 1) * g.out_l * g.f],
                g.out_l,
                g.f,
                &mut out[ex * g.f * g.out_l..(ex + 1) * g.f * g.out_l],
            );
        }
        let value = Tensor::new(vec![g.n, g.f, g.out_l], out)?;
        let rg = self.wants(input) || self.wants(kernels);
        Ok(self.push(value, rg, Op::Conv1dSeq { input, kernels, geo }))
    }

    /// Non-overlapping max pooling; output dims are floor(H/wh)×floor(W/ww),
    /// trailing rows/cols that don't fill a window are dropped. Ties route
    /// the gradient to the first maximal element in row-major order.
    pub fn maxpool2d(&mut self, x: Var, window: (usize, usize)) -> Result<Var> {
        let (wh, ww) = window;
        let (n, c, h, w) = match self.value(x).shape() {
            [n, c, h, w] => (*n, *c, *h, *w),
            s => {
                return Err(Error::Dimension(format!(
                    "maxpool2d wants NCHW input, got {}",
                    format_shape(s)
                )))
            }
        };
        if wh == 0 || ww == 0 || wh > h || ww > w {
            return Err(Error::Dimension(format!(
                "pooling window {}x{} invalid for {}x{} input",
                wh, ww, h, w
            )));
        }
        let oh = h / wh;
        let ow = w / ww;
        let xd = self.value(x).data();
        let mut out = vec![0.0f32; n * c * oh * ow];
        let mut arg = vec![0u32; n * c * oh * ow];
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best_idx = base + (oy * wh) * w + ox * ww;
                    let mut best = xd[best_idx];
                    for dy in 0..wh {
                        for dx in 0..ww {
                            let idx = base + (oy * wh + dy) * w + (ox * ww + dx);
                            if xd[idx] > best {
                                best = xd[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    let o = plane * oh * ow + oy * ow + ox;
                    out[o] = best;
                    arg[o] = best_idx as u32;
                }
            }
        }
        let value = Tensor::new(vec![n, c, oh, ow], out)?;
        let rg = self.wants(x);
        Ok(self.push(value, rg, Op::MaxPool2d { x, arg }))
    }

    /// Max over the trailing (time) axis of an N×F×L tensor; ties keep the
    /// first position.
    pub fn max_over_time(&mut self, x: Var) -> Result<Var> {
        let (n, f, l) = match self.value(x).shape() {
            [n, f, l] => (*n, *f, *l),
            s => {
                return Err(Error::Dimension(format!(
                    "max_over_time wants an NxFxL tensor, got {}",
                    format_shape(s)
                )))
            }
        };
        if l == 0 {
            return Err(Error::Dimension("max over an empty time axis".to_string()));
        }
        let xd = self.value(x).data();
        let mut out = vec![0.0f32; n * f];
        let mut arg = vec![0u32; n * f];
        for r in 0..n * f {
            let row = &xd[r * l..(r + 1) * l];
            let mut best = 0;
            for (i, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = i;
                }
            }
            out[r] = row[best];
            arg[r] = (r * l + best) as u32;
        }
        let value = Tensor::new(vec![n, f], out)?;
        let rg = self.wants(x);
        Ok(self.push(value, rg, Op::MaxOverTime { x, arg }))
    }

    /// Gather rows of a V×d table by id; `ids` is row-major N×seq_len.
    /// Backward scatters into the table, accumulating duplicate ids.
    pub fn embedding_lookup(&mut self, table: Var, ids: &[u32], seq_len: usize) -> Result<Var> {
        let [v, d] = two_dims(self.value(table), "embedding table")?;
        if seq_len == 0 || ids.is_empty() || ids.len() % seq_len != 0 {
            return Err(Error::Dimension(format!(
                "id count {} is not a multiple of sequence length {}",
                ids.len(),
                seq_len
            )));
        }
        for &id in ids {
            if id as usize >= v {
                return Err(Error::Vocabulary { id, size: v });
            }
        }
        let n = ids.len() / seq_len;
        let td = self.value(table).data();
        let mut out = vec![0.0f32; ids.len() * d];
        for (pos, &id) in ids.iter().enumerate() {
            out[pos * d..(pos + 1) * d].copy_from_slice(&td[id as usize * d..(id as usize + 1) * d]);
        }
        let value = Tensor::new(vec![n, seq_len, d], out)?;
        let rg = self.wants(table);
        Ok(self.push(
            value,
            rg,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    /// Gather rows of a 2-d tensor; backward scatter-adds them back.
    pub fn select_rows(&mut self, x: Var, rows: &[u32]) -> Result<Var> {
        let [n, k] = two_dims(self.value(x), "select_rows")?;
        if rows.is_empty() {
            return Err(Error::Dimension("empty row selection".to_string()));
        }
        for &r in rows {
            if r as usize >= n {
                return Err(Error::Validation(format!(
                    "row index {} out of range for {} rows",
                    r, n
                )));
            }
        }
        let xd = self.value(x).data();
        let mut out = vec![0.0f32; rows.len() * k];
        for (i, &r) in rows.iter().enumerate() {
            out[i * k..(i + 1) * k].copy_from_slice(&xd[r as usize * k..(r as usize + 1) * k]);
        }
        let value = Tensor::new(vec![rows.len(), k], out)?;
        let rg = self.wants(x);
        Ok(self.push(
            value,
            rg,
            Op::SelectRows {
                x,
                rows: rows.to_vec(),
            },
        ))
    }

    /// Concatenate 2-d tensors with equal row counts along dim 1.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Dimension("concat of zero tensors".to_string()));
        }
        let mut n = 0;
        let mut widths = Vec::with_capacity(parts.len());
        for (i, &p) in parts.iter().enumerate() {
            let [pn, pk] = two_dims(self.value(p), "concat_cols part")?;
            if i == 0 {
                n = pn;
            } else if pn != n {
                return Err(Error::Dimension(format!(
                    "concat_cols row counts differ: {} vs {}",
                    n, pn
                )));
            }
            widths.push(pk);
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0f32; n * total];
        let mut col = 0;
        for (&p, &wd) in parts.iter().zip(&widths) {
            let pd = self.value(p).data();
            for r in 0..n {
                out[r * total + col..r * total + col + wd]
                    .copy_from_slice(&pd[r * wd..(r + 1) * wd]);
            }
            col += wd;
        }
        let value = Tensor::new(vec![n, total], out)?;
        let rg = parts.iter().any(|&p| self.wants(p));
        Ok(self.push(
            value,
            rg,
            Op::ConcatCols {
                parts: parts.to_vec(),
                widths,
            },
        ))
    }

    /// Mean over the batch of −Σ_j t_j·log softmax(logits)_j, max-subtracted
    /// for stability. Gradient is (softmax − t)/N.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: Targets) -> Result<Var> {
        let [n, k] = two_dims(self.value(logits), "softmax_cross_entropy logits")?;
        if n == 0 {
            return Err(Error::Dimension("cross entropy of an empty batch".to_string()));
        }
        match &targets {
            Targets::Hard(labels) => {
                if labels.len() != n {
                    return Err(Error::Dimension(format!(
                        "{} labels for {} rows",
                        labels.len(),
                        n
                    )));
                }
                if let Some(&bad) = labels.iter().find(|&&t| t as usize >= k) {
                    return Err(Error::Validation(format!(
                        "label {} out of range for {} classes",
                        bad, k
                    )));
                }
            }
            Targets::Soft { rows, classes } => {
                if *classes != k || rows.len() != n * k {
                    return Err(Error::Dimension(format!(
                        "soft targets ({} values, {} classes) for logits {}x{}",
                        rows.len(),
                        classes,
                        n,
                        k
                    )));
                }
                for (i, row) in rows.chunks(k).enumerate() {
                    let sum: f64 = row.iter().map(|&v| v as f64).sum();
                    if (sum - 1.0).abs() > 1e-5 {
                        return Err(Error::Validation(format!(
                            "soft target row {} sums to {}, not 1",
                            i, sum
                        )));
                    }
                }
            }
        }
        let xd = self.value(logits).data();
        let mut total = 0.0f64;
        for i in 0..n {
            let row = &xd[i * k..(i + 1) * k];
            let m = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
            let lse = m + row
                .iter()
                .map(|&z| (z as f64 - m).exp())
                .sum::<f64>()
                .ln();
            match &targets {
                Targets::Hard(labels) => {
                    total += lse - row[labels[i] as usize] as f64;
                }
                Targets::Soft { rows, .. } => {
                    let t = &rows[i * k..(i + 1) * k];
                    for j in 0..k {
                        total += t[j] as f64 * (lse - row[j] as f64);
                    }
                }
            }
        }
        let value = Tensor::scalar((total / n as f64) as f32);
        let rg = self.wants(logits);
        Ok(self.push(value, rg, Op::SoftmaxCrossEntropy { logits, targets }))
    }

    /// Accumulate gradients of a scalar root into every node that requires
    /// them. Nodes are visited in reverse creation order, which is a reverse
    /// topological order of the dataflow.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).len() != 1 {
            return Err(Error::Dimension(format!(
                "backward root must be a scalar, got {}",
                format_shape(self.value(root).shape())
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::new(
            self.value(root).shape().to_vec(),
            vec![1.0],
        )?);
        for idx in (0..=root.0).rev() {
            if grads[idx].is_none() || !self.nodes[idx].requires_grad {
                continue;
            }
            let g = grads[idx].take().expect("checked above");
            self.dispatch(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn slot<'a>(&self, grads: &'a mut [Option<Tensor>], v: Var) -> &'a mut [f32] {
        let e = &mut grads[v.0];
        if e.is_none() {
            *e = Some(Tensor::zeros(self.nodes[v.0].value.shape().to_vec()));
        }
        e.as_mut().expect("just filled").data_mut()
    }

    fn dispatch(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gd = g.data();
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Add { a, b } => {
                for &v in [a, b].into_iter() {
                    if self.wants(v) {
                        for (s, &gv) in self.slot(grads, v).iter_mut().zip(gd) {
                            *s += gv;
                        }
                    }
                }
            }
            Op::Scale { x, c } => {
                if self.wants(*x) {
                    for (s, &gv) in self.slot(grads, *x).iter_mut().zip(gd) {
                        *s += c * gv;
                    }
                }
            }
            Op::HadamardConst { x, c } => {
                if self.wants(*x) {
                    let cd = c.data();
                    for ((s, &gv), &cv) in self.slot(grads, *x).iter_mut().zip(gd).zip(cd) {
                        *s += cv * gv;
                    }
                }
            }
            Op::Relu { x } => {
                if self.wants(*x) {
                    let xd = self.value(*x).data();
                    for ((s, &gv), &xv) in self.slot(grads, *x).iter_mut().zip(gd).zip(xd) {
                        if xv > 0.0 {
                            *s += gv;
                        }
                    }
                }
            }
            Op::Reshape { x } => {
                if self.wants(*x) {
                    for (s, &gv) in self.slot(grads, *x).iter_mut().zip(gd) {
                        *s += gv;
                    }
                }
            }
            Op::Mean { x } => {
                if self.wants(*x) {
                    let n = self.value(*x).len() as f32;
                    let gv = gd[0] / n;
                    for s in self.slot(grads, *x).iter_mut() {
                        *s += gv;
                    }
                }
            }
            Op::Matmul { a, b } => {
                let [m, k] = two_dims(self.value(*a), "matmul lhs").expect("validated");
                let [_, n] = two_dims(self.value(*b), "matmul rhs").expect("validated");
                if self.wants(*a) {
                    // ∂/∂a = g·bᵀ
                    let mut bt = vec![0.0f32; k * n];
                    transpose_into(self.value(*b).data(), k, n, &mut bt);
                    matmul_acc(gd, m, n, &bt, k, self.slot(grads, *a));
                }
                if self.wants(*b) {
                    // ∂/∂b = aᵀ·g
                    let mut at = vec![0.0f32; m * k];
                    transpose_into(self.value(*a).data(), m, k, &mut at);
                    matmul_acc(&at, k, m, gd, n, self.slot(grads, *b));
                }
            }
            Op::AddBias { x, bias } => {
                if self.wants(*x) {
                    for (s, &gv) in self.slot(grads, *x).iter_mut().zip(gd) {
                        *s += gv;
                    }
                }
                if self.wants(*bias) {
                    let xs = self.value(*x).shape();
                    let blen = xs[1];
                    let inner: usize = xs[2..].iter().product();
                    let bs = self.slot(grads, *bias);
                    for chunk in gd.chunks(blen * inner) {
                        for (j, b) in bs.iter_mut().enumerate() {
                            for &gv in &chunk[j * inner..(j + 1) * inner] {
                                *b += gv;
                            }
                        }
                    }
                }
            }
            Op::Conv2d {
                input,
                kernels,
                patches,
                geo,
            } => {
                let positions = geo.oh * geo.ow;
                let patch_len = geo.c * geo.kh * geo.kw;
                let rows = geo.n * positions;
                // output grad back to [example·position, filter] rows
                let mut gr = vec![0.0f32; rows * geo.f];
                for ex in 0..geo.n {
                    transpose_into(
                        &gd[ex * geo.f * positions..(ex + 1) * geo.f * positions],
                        geo.f,
                        positions,
                        &mut gr[ex * positions * geo.f..(ex + 1) * positions * geo.f],
                    );
                }
                if self.wants(*kernels) {
                    // ∂/∂K = grᵀ·patches
                    let mut grt = vec![0.0f32; geo.f * rows];
                    transpose_into(&gr, rows, geo.f, &mut grt);
                    matmul_acc(
                        &grt,
                        geo.f,
                        rows,
                        patches,
                        patch_len,
                        self.slot(grads, *kernels),
                    );
                }
                if self.wants(*input) {
                    // ∂/∂patches = gr·K, then scatter patches back
                    let mut dp = vec![0.0f32; rows * patch_len];
                    matmul_acc(
                        &gr,
                        rows,
                        geo.f,
                        self.value(*kernels).data(),
                        patch_len,
                        &mut dp,
                    );
                    col2im_2d(&dp, geo, self.slot(grads, *input));
                }
            }
            Op::Conv1dSeq { input, kernels, geo } => {
                let rows = geo.n * geo.out_l;
                let patch_len = geo.w * geo.d;
                let mut gr = vec![0.0f32; rows * geo.f];
                for ex in 0..geo.n {
                    transpose_into(
                        &gd[ex * geo.f * geo.out_l..(ex + 1) * geo.f * geo.out_l],
                        geo.f,
                        geo.out_l,
                        &mut gr[ex * geo.out_l * geo.f..(ex + 1) * geo.out_l * geo.f],
                    );
                }
                let x = self.value(*input).data();
                if self.wants(*kernels) {
                    // patch rows are contiguous input slices; accumulate
                    // grad_K row-by-row without materializing patches
                    let ks = self.slot(grads, *kernels);
                    for ex in 0..geo.n {
                        for t in 0..geo.out_l {
                            let patch = &x[(ex * geo.l + t) * geo.d..][..patch_len];
                            let grow = &gr[(ex * geo.out_l + t) * geo.f..][..geo.f];
                            for (fi, &gv) in grow.iter().enumerate() {
                                if gv != 0.0 {
                                    let krow = &mut ks[fi * patch_len..(fi + 1) * patch_len];
                                    for (kv, &pv) in krow.iter_mut().zip(patch) {
                                        *kv += gv * pv;
                                    }
                                }
                            }
                        }
                    }
                }
                if self.wants(*input) {
                    let kflat = self.value(*kernels).data();
                    let mut dp = vec![0.0f32; rows * patch_len];
                    matmul_acc(&gr, rows, geo.f, kflat, patch_len, &mut dp);
                    let xs = self.slot(grads, *input);
                    for ex in 0..geo.n {
                        for t in 0..geo.out_l {
                            let src = &dp[(ex * geo.out_l + t) * patch_len..][..patch_len];
                            let dst = &mut xs[(ex * geo.l + t) * geo.d..][..patch_len];
                            for (d, &s) in dst.iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                    }
                }
            }
            Op::MaxPool2d { x, arg } => {
                if self.wants(*x) {
                    let xs = self.slot(grads, *x);
                    for (&a, &gv) in arg.iter().zip(gd) {
                        xs[a as usize] += gv;
                    }
                }
            }
            Op::MaxOverTime { x, arg } => {
                if self.wants(*x) {
                    let xs = self.slot(grads, *x);
                    for (&a, &gv) in arg.iter().zip(gd) {
                        xs[a as usize] += gv;
                    }
                }
            }
            Op::Embedding { table, ids } => {
                if self.wants(*table) {
                    let [_, d] = two_dims(self.value(*table), "embedding table").expect("validated");
                    let ts = self.slot(grads, *table);
                    for (pos, &id) in ids.iter().enumerate() {
                        let dst = &mut ts[id as usize * d..(id as usize + 1) * d];
                        for (t, &gv) in dst.iter_mut().zip(&gd[pos * d..(pos + 1) * d]) {
                            *t += gv;
                        }
                    }
                }
            }
            Op::SelectRows { x, rows } => {
                if self.wants(*x) {
                    let [_, k] = two_dims(self.value(*x), "select_rows").expect("validated");
                    let xs = self.slot(grads, *x);
                    for (i, &r) in rows.iter().enumerate() {
                        let dst = &mut xs[r as usize * k..(r as usize + 1) * k];
                        for (d, &gv) in dst.iter_mut().zip(&gd[i * k..(i + 1) * k]) {
                            *d += gv;
                        }
                    }
                }
            }
            Op::ConcatCols { parts, widths } => {
                let total: usize = widths.iter().sum();
                let mut col = 0;
                for (&p, &wd) in parts.iter().zip(widths) {
                    if self.wants(p) {
                        let n = self.value(p).shape()[0];
                        let ps = self.slot(grads, p);
                        for r in 0..n {
                            let src = &gd[r * total + col..r * total + col + wd];
                            for (d, &gv) in ps[r * wd..(r + 1) * wd].iter_mut().zip(src) {
                                *d += gv;
                            }
                        }
                    }
                    col += wd;
                }
            }
            Op::SoftmaxCrossEntropy { logits, targets } => {
                if self.wants(*logits) {
                    let [n, k] = two_dims(self.value(*logits), "sce logits").expect("validated");
                    let xd = self.value(*logits).data();
                    let coeff = gd[0] / n as f32;
                    let ls = self.slot(grads, *logits);
                    for i in 0..n {
                        let row = &xd[i * k..(i + 1) * k];
                        let m = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
                        let denom: f64 = row.iter().map(|&z| (z as f64 - m).exp()).sum();
                        for j in 0..k {
                            let p = ((row[j] as f64 - m).exp() / denom) as f32;
                            let t = match targets {
                                Targets::Hard(labels) => {
                                    if labels[i] as usize == j {
                                        1.0
                                    } else {
                                        0.0
                                    }
                                }
                                Targets::Soft { rows, .. } => rows[i * k + j],
                            };
                            ls[i * k + j] += coeff * (p - t);
                        }
                    }
                }
            }
        }
    }
}

fn im2col_2d(x: &[f32], g: &Conv2dGeo, out: &mut [f32]) {
    let patch_len = g.c * g.kh * g.kw;
    for ex in 0..g.n {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let row = (ex * g.oh + oy) * g.ow + ox;
                let dst = &mut out[row * patch_len..(row + 1) * patch_len];
                let mut off = 0;
                for ci in 0..g.c {
                    for dy in 0..g.kh {
                        let src = ((ex * g.c + ci) * g.h + oy * g.stride + dy) * g.w
                            + ox * g.stride;
                        dst[off..off + g.kw].copy_from_slice(&x[src..src + g.kw]);
                        off += g.kw;
                    }
                }
            }
        }
    }
}

fn col2im_2d(dp: &[f32], g: &Conv2dGeo, grad_x: &mut [f32]) {
    let patch_len = g.c * g.kh * g.kw;
    for ex in 0..g.n {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let row = (ex * g.oh + oy) * g.ow + ox;
                let src = &dp[row * patch_len..(row + 1) * patch_len];
                let mut off = 0;
                for ci in 0..g.c {
                    for dy in 0..g.kh {
                        let dst = ((ex * g.c + ci) * g.h + oy * g.stride + dy) * g.w
                            + ox * g.stride;
                        for (d, &s) in grad_x[dst..dst + g.kw].iter_mut().zip(&src[off..off + g.kw])
                        {
                            *d += s;
                        }
                        off += g.kw;
                    }
                }
            }
        }
    }
}
