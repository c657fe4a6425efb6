//! Minimal reverse-mode differentiation over dense f64 arrays.
//!
//! Every operation appends a node to a [`Tape`]; [`Tape::backward`] walks the
//! tape in reverse and accumulates vector-Jacobian products into each node's
//! adjoint. Only the operations the micro conv net needs are provided.

use crate::error::{Error, Result};

/// Handle to a node on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// Single-channel valid cross-correlation: input [H, W], kernels [K, kh, kw],
    /// bias [K] -> [K, H-kh+1, W-kw+1].
    Conv2dValid { input: Var, kernels: Var, bias: Var },
    Relu(Var),
    /// Mean over all but the leading axis: [K, ...] -> [K].
    ChannelMean(Var),
    /// weight [C, K] · input [K] + bias [C] -> [C].
    Affine { weight: Var, input: Var, bias: Var },
    /// Single element of a vector -> [1].
    Pick { input: Var, index: usize },
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    shape: Vec<usize>,
    value: Vec<f64>,
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints for every node of a tape, indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    adjoints: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> &[f64] {
        &self.adjoints[v.0]
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, value: Vec<f64>) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node { op, shape, value });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, shape: Vec<usize>, value: Vec<f64>) -> Result<Var> {
        if shape.iter().product::<usize>() != value.len() || shape.is_empty() {
            return Err(Error::ShapeMismatch {
                expected: shape,
                actual: vec![value.len()],
            });
        }
        Ok(self.push(Op::Leaf, shape, value))
    }

    pub fn conv2d_valid(&mut self, input: Var, kernels: Var, bias: Var) -> Result<Var> {
        let (ishape, kshape, bshape) = (self.shape(input), self.shape(kernels), self.shape(bias));
        if ishape.len() != 2 || kshape.len() != 3 || bshape != [kshape[0]] {
            return Err(Error::ShapeMismatch {
                expected: vec![kshape.first().copied().unwrap_or(0)],
                actual: bshape.to_vec(),
            });
        }
        let (h, w) = (ishape[0], ishape[1]);
        let (k, kh, kw) = (kshape[0], kshape[1], kshape[2]);
        if kh > h || kw > w {
            return Err(Error::InvalidArgument(format!(
                "kernel {kh}x{kw} larger than input {h}x{w}"
            )));
        }
        let (oh, ow) = (h - kh + 1, w - kw + 1);
        let x = self.value(input);
        let wt = self.value(kernels);
        let b = self.value(bias);
        let mut out = vec![0.0; k * oh * ow];
        for f in 0..k {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = b[f];
                    for u in 0..kh {
                        for v in 0..kw {
                            acc += wt[(f * kh + u) * kw + v] * x[(i + u) * w + (j + v)];
                        }
                    }
                    out[(f * oh + i) * ow + j] = acc;
                }
            }
        }
        Ok(self.push(
            Op::Conv2dValid {
                input,
                kernels,
                bias,
            },
            vec![k, oh, ow],
            out,
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let shape = self.shape(x).to_vec();
        let value = self.value(x).iter().map(|&v| v.max(0.0)).collect();
        self.push(Op::Relu(x), shape, value)
    }

    pub fn channel_mean(&mut self, x: Var) -> Var {
        let k = self.shape(x)[0];
        let per = self.value(x).len() / k;
        let value = self
            .value(x)
            .chunks_exact(per)
            .map(|c| c.iter().sum::<f64>() / per as f64)
            .collect();
        self.push(Op::ChannelMean(x), vec![k], value)
    }

    pub fn affine(&mut self, weight: Var, input: Var, bias: Var) -> Result<Var> {
        let (ws, xs, bs) = (self.shape(weight), self.shape(input), self.shape(bias));
        if ws.len() != 2 || xs != [ws[1]] || bs != [ws[0]] {
            return Err(Error::ShapeMismatch {
                expected: ws.to_vec(),
                actual: xs.to_vec(),
            });
        }
        let (c, k) = (ws[0], ws[1]);
        let w = self.value(weight);
        let x = self.value(input);
        let b = self.value(bias);
        let value = (0..c)
            .map(|r| b[r] + (0..k).map(|j| w[r * k + j] * x[j]).sum::<f64>())
            .collect();
        Ok(self.push(
            Op::Affine {
                weight,
                input,
                bias,
            },
            vec![c],
            value,
        ))
    }

    pub fn pick(&mut self, input: Var, index: usize) -> Result<Var> {
        let n = self.value(input).len();
        if index >= n {
            return Err(Error::InvalidArgument(format!(
                "index {index} out of range for length {n}"
            )));
        }
        let v = self.value(input)[index];
        Ok(self.push(Op::Pick { input, index }, vec![1], vec![v]))
    }

    /// Reverse sweep from a scalar node with seed 1.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.nodes[output.0].value.len() != 1 {
            return Err(Error::InvalidArgument(
                "backward needs a scalar output".into(),
            ));
        }
        let mut adj: Vec<Vec<f64>> = self
            .nodes
            .iter()
            .map(|n| vec![0.0; n.value.len()])
            .collect();
        adj[output.0][0] = 1.0;
        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if adj[idx].iter().all(|&g| g == 0.0) {
                continue;
            }
            let g = std::mem::take(&mut adj[idx]);
            match node.op {
                Op::Leaf => {}
                Op::Relu(x) => {
                    let xv = self.value(x);
                    for (i, gi) in g.iter().enumerate() {
                        if xv[i] > 0.0 {
                            adj[x.0][i] += gi;
                        }
                    }
                }
                Op::ChannelMean(x) => {
                    let k = node.value.len();
                    let per = self.value(x).len() / k;
                    for (f, gf) in g.iter().enumerate() {
                        let share = gf / per as f64;
                        for a in &mut adj[x.0][f * per..(f + 1) * per] {
                            *a += share;
                        }
                    }
                }
                Op::Affine {
                    weight,
                    input,
                    bias,
                } => {
                    let k = self.value(input).len();
                    let w = self.value(weight);
                    let x = self.value(input);
                    for (r, gr) in g.iter().enumerate() {
                        adj[bias.0][r] += gr;
                        for j in 0..k {
                            adj[weight.0][r * k + j] += gr * x[j];
                            adj[input.0][j] += gr * w[r * k + j];
                        }
                    }
                }
                Op::Pick { input, index } => {
                    adj[input.0][index] += g[0];
                }
                Op::Conv2dValid {
                    input,
                    kernels,
                    bias,
                } => {
                    let w = self.shape(input)[1];
                    let ks = self.shape(kernels);
                    let (kh, kw) = (ks[1], ks[2]);
                    let (k, oh, ow) = (node.shape[0], node.shape[1], node.shape[2]);
                    let x = self.value(input);
                    let wt = self.value(kernels);
                    for f in 0..k {
                        for i in 0..oh {
                            for j in 0..ow {
                                let go = g[(f * oh + i) * ow + j];
                                if go == 0.0 {
                                    continue;
                                }
                                adj[bias.0][f] += go;
                                for u in 0..kh {
                                    for v in 0..kw {
                                        let xi = (i + u) * w + (j + v);
                                        let wi = (f * kh + u) * kw + v;
                                        adj[kernels.0][wi] += go * x[xi];
                                        adj[input.0][xi] += go * wt[wi];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            adj[idx] = g;
        }
        Ok(Gradients { adjoints: adj })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_pick_gradients() {
        let mut t = Tape::new();
        let w = t.leaf(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let x = t.leaf(vec![2], vec![5.0, 6.0]).unwrap();
        let b = t.leaf(vec![2], vec![0.5, -0.5]).unwrap();
        let y = t.affine(w, x, b).unwrap();
        assert_eq!(t.value(y), &[17.5, 38.5]);
        let out = t.pick(y, 1).unwrap();
        let g = t.backward(out).unwrap();
        assert_eq!(g.wrt(x), &[3.0, 4.0]);
        assert_eq!(g.wrt(w), &[0.0, 0.0, 5.0, 6.0]);
        assert_eq!(g.wrt(b), &[0.0, 1.0]);
    }

    #[test]
    fn relu_blocks_negative_inputs() {
        let mut t = Tape::new();
        let x = t.leaf(vec![1, 1, 3], vec![-1.0, 0.0, 2.0]).unwrap();
        let r = t.relu(x);
        let m = t.channel_mean(r);
        let out = t.pick(m, 0).unwrap();
        let g = t.backward(out).unwrap();
        assert_eq!(g.wrt(x), &[0.0, 0.0, 1.0 / 3.0]);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut t = Tape::new();
        let x = t.leaf(vec![2], vec![1.0, 2.0]).unwrap();
        assert!(t.backward(x).is_err());
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let input: Vec<f64> = (0..16).map(|i| ((i * 7) % 5) as f64 * 0.3 - 0.4).collect();
        let kernel: Vec<f64> = (0..9).map(|i| (i as f64 - 4.0) * 0.1).collect();
        let eval = |inp: &[f64], ker: &[f64]| -> (f64, Gradients, Var, Var) {
            let mut t = Tape::new();
            let x = t.leaf(vec![4, 4], inp.to_vec()).unwrap();
            let k = t.leaf(vec![1, 3, 3], ker.to_vec()).unwrap();
            let b = t.leaf(vec![1], vec![0.1]).unwrap();
            let c = t.conv2d_valid(x, k, b).unwrap();
            let m = t.channel_mean(c);
            let out = t.pick(m, 0).unwrap();
            let g = t.backward(out).unwrap();
            (t.value(out)[0], g, x, k)
        };
        let (_, g, xv, kv) = eval(&input, &kernel);
        let eps = 1e-6;
        for i in 0..9 {
            let mut kp = kernel.clone();
            kp[i] += eps;
            let mut km = kernel.clone();
            km[i] -= eps;
            let num = (eval(&input, &kp).0 - eval(&input, &km).0) / (2.0 * eps);
            assert!((num - g.wrt(kv)[i]).abs() < 1e-8);
        }
        for i in 0..16 {
            let mut ip = input.clone();
            ip[i] += eps;
            let mut im = input.clone();
            im[i] -= eps;
            let num = (eval(&ip, &kernel).0 - eval(&im, &kernel).0) / (2.0 * eps);
            assert!((num - g.wrt(xv)[i]).abs() < 1e-8);
        }
    }
}
