//! Dense f64 tensors and a small reverse-mode differentiation graph.
//!
//! Complex-valued axes follow one convention everywhere: an axis of C complex
//! channels is stored as 2C reals, `(Re₀, Im₀, Re₁, Im₁, …)`. Time-axis
//! operations treat the second-to-last axis as time and fold all leading
//! axes into a batch.

mod adam;
pub(crate) mod kernels;

use std::sync::Arc;

use num_complex::Complex64 as C64;

use crate::error::{NqpError, Result};
use kernels::{gemm, mode_retained, std_normal_cdf, std_normal_pdf, Mat};

pub use adam::{Adam, AdamState};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(NqpError::shape(
                "tensor",
                format!("shape {shape:?} needs {n} values, got {}", data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    pub fn scalar(x: f64) -> Self {
        Tensor { shape: vec![], data: vec![x] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn last_dim(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    /// Paired-real tensor from complex values; the last axis doubles.
    pub fn from_complex(shape: &[usize], values: &[C64]) -> Result<Self> {
        let mut s = shape.to_vec();
        match s.last_mut() {
            Some(last) => *last *= 2,
            None => return Err(NqpError::shape("from_complex", "scalar shape")),
        }
        Tensor::new(s, values.iter().flat_map(|z| [z.re, z.im]).collect())
    }

    pub fn to_complex(&self) -> Result<Vec<C64>> {
        if !self.last_dim().is_multiple_of(2) {
            return Err(NqpError::shape("to_complex", format!("odd trailing axis in {:?}", self.shape)));
        }
        Ok(self.data.chunks_exact(2).map(|p| C64::new(p[0], p[1])).collect())
    }

    /// (batch, time, channels) view of the trailing two axes.
    fn time_layout(&self, op: &'static str) -> Result<(usize, usize, usize)> {
        let r = self.shape.len();
        if r < 2 {
            return Err(NqpError::shape(op, format!("need [.., T, C], got {:?}", self.shape)));
        }
        let t = self.shape[r - 2];
        let c = self.shape[r - 1];
        let batch = self.shape[..r - 2].iter().product();
        Ok((batch, t, c))
    }
}

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Linear { x: Var, w: Var, b: Var },
    /// Keeps Φ(x) from the forward pass for the backward one.
    Gelu { x: Var, cdf: Vec<f64> },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Scale { x: Var, c: f64 },
    Dft { x: Var, inverse: bool },
    ModeMask { x: Var, modes: usize },
    ComplexMul { x: Var, w: Var },
    ComplexMatvec { x: Var, mats: Arc<Vec<C64>>, dim: usize },
    TimeDerivative { x: Var, dt: f64 },
    NormSum { x: Var, squared: bool },
    SumSquares { x: Var },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Records a computation for a single backward pass.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of the trainable leaves, indexed by [`Var`]. Constants and
/// intermediate nodes have none.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<Tensor> {
        self.grads[v.0].as_ref().map(|g| Tensor { shape: self.shapes[v.0].clone(), data: g.clone() })
    }

    pub fn raw(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Affine map along the trailing axis: x·W + b.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if wv.shape.len() != 2 || bv.shape.len() != 1 || xv.shape.is_empty() {
            return Err(NqpError::shape(
                "linear",
                format!("x {:?}, w {:?}, b {:?}", xv.shape, wv.shape, bv.shape),
            ));
        }
        let (cin, cout) = (wv.shape[0], wv.shape[1]);
        if xv.last_dim() != cin || bv.shape[0] != cout {
            return Err(NqpError::shape(
                "linear",
                format!("x {:?}, w {:?}, b {:?}", xv.shape, wv.shape, bv.shape),
            ));
        }
        let rows = xv.len() / cin.max(1);
        let mut out = Vec::with_capacity(rows * cout);
        for _ in 0..rows {
            out.extend_from_slice(&bv.data);
        }
        gemm(1.0, &xv.data, Mat::dense(rows, cin), &wv.data, Mat::dense(cin, cout), 1.0, &mut out, Mat::dense(rows, cout));
        let mut shape = xv.shape.clone();
        *shape.last_mut().unwrap() = cout;
        let g = self.any_grad(&[x, w, b]);
        Ok(self.push(Tensor { shape, data: out }, Op::Linear { x, w, b }, g))
    }

    /// Exact GeLU, x·Φ(x).
    pub fn gelu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let cdf: Vec<f64> = xv.data.iter().map(|&v| std_normal_cdf(v)).collect();
        let data = xv.data.iter().zip(&cdf).map(|(v, p)| v * p).collect();
        let t = Tensor { shape: xv.shape.clone(), data };
        let g = self.any_grad(&[x]);
        let cdf = if g { cdf } else { Vec::new() };
        self.push(t, Op::Gelu { x, cdf }, g)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape != bv.shape {
            return Err(NqpError::shape(op, format!("{:?} vs {:?}", av.shape, bv.shape)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let (av, bv) = (self.value(a), self.value(b));
        let data = av.data.iter().zip(&bv.data).map(|(x, y)| x + y).collect();
        let t = Tensor { shape: av.shape.clone(), data };
        let g = self.any_grad(&[a, b]);
        Ok(self.push(t, Op::Add { a, b }, g))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let (av, bv) = (self.value(a), self.value(b));
        let data = av.data.iter().zip(&bv.data).map(|(x, y)| x - y).collect();
        let t = Tensor { shape: av.shape.clone(), data };
        let g = self.any_grad(&[a, b]);
        Ok(self.push(t, Op::Sub { a, b }, g))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let xv = self.value(x);
        let t = Tensor { shape: xv.shape.clone(), data: xv.data.iter().map(|v| v * c).collect() };
        let g = self.any_grad(&[x]);
        self.push(t, Op::Scale { x, c }, g)
    }

    /// Unnormalized forward DFT along time, per complex channel.
    pub fn dft_time(&mut self, x: Var) -> Result<Var> {
        self.dft(x, false)
    }

    /// Inverse DFT along time, normalized by 1/T.
    pub fn idft_time(&mut self, x: Var) -> Result<Var> {
        self.dft(x, true)
    }

    fn dft(&mut self, x: Var, inverse: bool) -> Result<Var> {
        let xv = self.value(x);
        let (batch, t, c2) = xv.time_layout("dft_time")?;
        if c2 % 2 != 0 {
            return Err(NqpError::shape("dft_time", format!("odd channel count {c2}")));
        }
        let scale = if inverse { 1.0 / t.max(1) as f64 } else { 1.0 };
        let data = kernels::dft_time(&xv.data, batch, t, c2 / 2, inverse, scale);
        let out = Tensor { shape: xv.shape.clone(), data };
        let g = self.any_grad(&[x]);
        Ok(self.push(out, Op::Dft { x, inverse }, g))
    }

    /// Zeros every frequency index outside the lowest `modes` (by |k|).
    pub fn mode_mask(&mut self, x: Var, modes: usize) -> Result<Var> {
        let xv = self.value(x);
        let (batch, t, c) = xv.time_layout("mode_mask")?;
        let mut data = xv.data.clone();
        for b in 0..batch {
            for n in 0..t {
                if !mode_retained(n, t, modes) {
                    let start = (b * t + n) * c;
                    data[start..start + c].fill(0.0);
                }
            }
        }
        let out = Tensor { shape: xv.shape.clone(), data };
        let g = self.any_grad(&[x]);
        Ok(self.push(out, Op::ModeMask { x, modes }, g))
    }

    /// out[.., n, :] = x[.., n, :] · W[n] with complex W[n] of shape
    /// `[C_in, C_out]`, stored as a `[T, C_in, C_out, 2]` tensor.
    pub fn complex_mul(&mut self, x: Var, w: Var) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        let (batch, t, c2) = xv.time_layout("complex_mul")?;
        if wv.shape.len() != 4 || wv.shape[0] != t || wv.shape[3] != 2 || c2 != 2 * wv.shape[1] {
            return Err(NqpError::shape("complex_mul", format!("x {:?}, w {:?}", xv.shape, wv.shape)));
        }
        let (cin, cout) = (wv.shape[1], wv.shape[2]);
        let mut out = vec![0.0; batch * t * 2 * cout];
        for n in 0..t {
            let (xr, xi, wr, wi, or, oi) = cmul_views(n, batch, t, cin, cout);
            gemm(1.0, &xv.data, xr, &wv.data, wr, 0.0, &mut out, or);
            gemm(-1.0, &xv.data, xi, &wv.data, wi, 1.0, &mut out, or);
            gemm(1.0, &xv.data, xr, &wv.data, wi, 0.0, &mut out, oi);
            gemm(1.0, &xv.data, xi, &wv.data, wr, 1.0, &mut out, oi);
        }
        let mut shape = xv.shape.clone();
        *shape.last_mut().unwrap() = 2 * cout;
        let g = self.any_grad(&[x, w]);
        Ok(self.push(Tensor { shape, data: out }, Op::ComplexMul { x, w }, g))
    }

    /// Row-wise complex matrix-vector products with fixed matrices: row r of
    /// `x` (a complex vector of length `dim`) is multiplied by
    /// `mats[r*dim*dim..]` (row-major).
    pub fn complex_matvec(&mut self, x: Var, mats: Arc<Vec<C64>>, dim: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.last_dim() != 2 * dim {
            return Err(NqpError::shape("complex_matvec", format!("x {:?} vs dim {dim}", xv.shape)));
        }
        let rows = xv.len() / (2 * dim).max(1);
        if mats.len() != rows * dim * dim {
            return Err(NqpError::shape(
                "complex_matvec",
                format!("{} matrix entries for {rows} rows of dim {dim}", mats.len()),
            ));
        }
        let mut out = vec![0.0; xv.len()];
        for r in 0..rows {
            let m = &mats[r * dim * dim..(r + 1) * dim * dim];
            let v = &xv.data[r * 2 * dim..(r + 1) * 2 * dim];
            let o = &mut out[r * 2 * dim..(r + 1) * 2 * dim];
            for i in 0..dim {
                let mut acc = C64::new(0.0, 0.0);
                for j in 0..dim {
                    acc += m[i * dim + j] * C64::new(v[2 * j], v[2 * j + 1]);
                }
                o[2 * i] = acc.re;
                o[2 * i + 1] = acc.im;
            }
        }
        let out = Tensor { shape: xv.shape.clone(), data: out };
        let g = self.any_grad(&[x]);
        Ok(self.push(out, Op::ComplexMatvec { x, mats, dim }, g))
    }

    /// Second-order finite-difference time derivative along the time axis:
    /// central in the interior, one-sided three-point at both ends.
    pub fn time_derivative(&mut self, x: Var, dt: f64) -> Result<Var> {
        let xv = self.value(x);
        let (batch, t, c) = xv.time_layout("time_derivative")?;
        if t < 3 {
            return Err(NqpError::shape("time_derivative", format!("need at least 3 time points, got {t}")));
        }
        let mut out = vec![0.0; xv.len()];
        let h = 0.5 / dt;
        for b in 0..batch {
            let at = |n: usize, ch: usize| xv.data[(b * t + n) * c + ch];
            for ch in 0..c {
                // Written as differences so that constants give exactly zero.
                out[(b * t) * c + ch] = h * (4.0 * (at(1, ch) - at(0, ch)) - (at(2, ch) - at(0, ch)));
                for n in 1..t - 1 {
                    out[(b * t + n) * c + ch] = h * (at(n + 1, ch) - at(n - 1, ch));
                }
                let l = t - 1;
                out[(b * t + l) * c + ch] = h * (4.0 * (at(l, ch) - at(l - 1, ch)) - (at(l, ch) - at(l - 2, ch)));
            }
        }
        let out = Tensor { shape: xv.shape.clone(), data: out };
        let g = self.any_grad(&[x]);
        Ok(self.push(out, Op::TimeDerivative { x, dt }, g))
    }

    /// Σ over slices of the Euclidean norm of the trailing axis (squared norm
    /// when `squared`).
    pub fn norm_sum(&mut self, x: Var, squared: bool) -> Var {
        let xv = self.value(x);
        let c = xv.last_dim().max(1);
        let total: f64 = xv
            .data
            .chunks(c)
            .map(|s| {
                let sq: f64 = s.iter().map(|v| v * v).sum();
                if squared {
                    sq
                } else {
                    sq.sqrt()
                }
            })
            .sum();
        let g = self.any_grad(&[x]);
        self.push(Tensor::scalar(total), Op::NormSum { x, squared }, g)
    }

    /// Σ over slices of ‖x − y‖_F.
    pub fn frobenius_sum(&mut self, x: Var, y: Var, squared: bool) -> Result<Var> {
        let diff = self.sub(x, y)?;
        Ok(self.norm_sum(diff, squared))
    }

    /// Mean over slices (all axes but the last) of ‖x − y‖_F.
    pub fn frobenius_mean(&mut self, x: Var, y: Var) -> Result<Var> {
        let slices = self.value(x).len() / self.value(x).last_dim().max(1);
        let s = self.frobenius_sum(x, y, false)?;
        Ok(self.scale(s, 1.0 / slices.max(1) as f64))
    }

    pub fn sum_squares(&mut self, x: Var) -> Var {
        let total = self.value(x).data.iter().map(|v| v * v).sum();
        let g = self.any_grad(&[x]);
        self.push(Tensor::scalar(total), Op::SumSquares { x }, g)
    }

    /// Reverse-mode accumulation from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(NqpError::shape("backward", format!("loss has shape {:?}", self.value(loss).shape)));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            self.propagate(&node.op, &node.value, &g, &mut grads);
            // Intermediate buffers are dropped as soon as they are consumed.
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
            }
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape.clone()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, op: &Op, out: &Tensor, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let wants = |v: &Var| nodes[v.0].needs_grad;
        let acc = |v: Var, contrib: Vec<f64>, grads: &mut [Option<Vec<f64>>]| match &mut grads[v.0] {
            Some(existing) => existing.iter_mut().zip(contrib).for_each(|(a, c)| *a += c),
            slot @ None => *slot = Some(contrib),
        };
        match op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let (xv, wv) = (&nodes[x.0].value, &nodes[w.0].value);
                let (cin, cout) = (wv.shape[0], wv.shape[1]);
                let rows = xv.len() / cin.max(1);
                if wants(x) {
                    let mut gx = vec![0.0; xv.len()];
                    gemm(1.0, g, Mat::dense(rows, cout), &wv.data, Mat::dense(cin, cout).t(), 0.0, &mut gx, Mat::dense(rows, cin));
                    acc(*x, gx, grads);
                }
                if wants(w) {
                    let mut gw = vec![0.0; cin * cout];
                    gemm(1.0, &xv.data, Mat::dense(rows, cin).t(), g, Mat::dense(rows, cout), 0.0, &mut gw, Mat::dense(cin, cout));
                    acc(*w, gw, grads);
                }
                if wants(b) {
                    let mut gb = vec![0.0; cout];
                    for row in g.chunks_exact(cout) {
                        gb.iter_mut().zip(row).for_each(|(a, v)| *a += v);
                    }
                    acc(*b, gb, grads);
                }
            }
            Op::Gelu { x, cdf } => {
                let xv = &nodes[x.0].value;
                let gx = xv
                    .data
                    .iter()
                    .zip(cdf)
                    .zip(g)
                    .map(|((&v, &p), &gv)| gv * (p + v * std_normal_pdf(v)))
                    .collect();
                acc(*x, gx, grads);
            }
            Op::Add { a, b } => {
                if wants(a) {
                    acc(*a, g.to_vec(), grads);
                }
                if wants(b) {
                    acc(*b, g.to_vec(), grads);
                }
            }
            Op::Sub { a, b } => {
                if wants(a) {
                    acc(*a, g.to_vec(), grads);
                }
                if wants(b) {
                    acc(*b, g.iter().map(|v| -v).collect(), grads);
                }
            }
            Op::Scale { x, c } => acc(*x, g.iter().map(|v| v * c).collect(), grads),
            Op::Dft { x, inverse } => {
                // Adjoint of the unnormalized forward transform is the
                // unnormalized conjugate transform, and vice versa.
                let (batch, t, c2) = out.time_layout("dft_time").expect("validated in forward");
                let scale = if *inverse { 1.0 / t.max(1) as f64 } else { 1.0 };
                let gx = kernels::dft_time(g, batch, t, c2 / 2, !inverse, scale);
                acc(*x, gx, grads);
            }
            Op::ModeMask { x, modes } => {
                let (batch, t, c) = out.time_layout("mode_mask").expect("validated in forward");
                let mut gx = g.to_vec();
                for b in 0..batch {
                    for n in 0..t {
                        if !mode_retained(n, t, *modes) {
                            let start = (b * t + n) * c;
                            gx[start..start + c].fill(0.0);
                        }
                    }
                }
                acc(*x, gx, grads);
            }
            Op::ComplexMul { x, w } => {
                let (xv, wv) = (&nodes[x.0].value, &nodes[w.0].value);
                let (batch, t, _) = xv.time_layout("complex_mul").expect("validated in forward");
                let (cin, cout) = (wv.shape[1], wv.shape[2]);
                let mut gx = if wants(x) { Some(vec![0.0; xv.len()]) } else { None };
                let mut gw = if wants(w) { Some(vec![0.0; wv.len()]) } else { None };
                for n in 0..t {
                    let (xr, xi, wr, wi, or, oi) = cmul_views(n, batch, t, cin, cout);
                    if let Some(gx) = gx.as_mut() {
                        // gx = g · W^H
                        gemm(1.0, g, or, &wv.data, wr.t(), 0.0, gx, xr);
                        gemm(1.0, g, oi, &wv.data, wi.t(), 1.0, gx, xr);
                        gemm(-1.0, g, or, &wv.data, wi.t(), 0.0, gx, xi);
                        gemm(1.0, g, oi, &wv.data, wr.t(), 1.0, gx, xi);
                    }
                    if let Some(gw) = gw.as_mut() {
                        // gW = x^H · g
                        gemm(1.0, &xv.data, xr.t(), g, or, 0.0, gw, wr);
                        gemm(1.0, &xv.data, xi.t(), g, oi, 1.0, gw, wr);
                        gemm(1.0, &xv.data, xr.t(), g, oi, 0.0, gw, wi);
                        gemm(-1.0, &xv.data, xi.t(), g, or, 1.0, gw, wi);
                    }
                }
                if let Some(gx) = gx {
                    acc(*x, gx, grads);
                }
                if let Some(gw) = gw {
                    acc(*w, gw, grads);
                }
            }
            Op::ComplexMatvec { x, mats, dim } => {
                let dim = *dim;
                let rows = g.len() / (2 * dim).max(1);
                let mut gx = vec![0.0; g.len()];
                for r in 0..rows {
                    let m = &mats[r * dim * dim..(r + 1) * dim * dim];
                    let gr = &g[r * 2 * dim..(r + 1) * 2 * dim];
                    let o = &mut gx[r * 2 * dim..(r + 1) * 2 * dim];
                    // gx = M^H g
                    for j in 0..dim {
                        let mut a = C64::new(0.0, 0.0);
                        for i in 0..dim {
                            a += m[i * dim + j].conj() * C64::new(gr[2 * i], gr[2 * i + 1]);
                        }
                        o[2 * j] = a.re;
                        o[2 * j + 1] = a.im;
                    }
                }
                acc(*x, gx, grads);
            }
            Op::TimeDerivative { x, dt } => {
                let (batch, t, c) = out.time_layout("time_derivative").expect("validated in forward");
                let h = 0.5 / dt;
                let mut gx = vec![0.0; g.len()];
                for b in 0..batch {
                    for ch in 0..c {
                        let gi = |n: usize| g[(b * t + n) * c + ch];
                        let idx = |n: usize| (b * t + n) * c + ch;
                        let g0 = gi(0);
                        gx[idx(0)] += -3.0 * h * g0;
                        gx[idx(1)] += 4.0 * h * g0;
                        gx[idx(2)] += -h * g0;
                        for n in 1..t - 1 {
                            let gn = gi(n);
                            gx[idx(n + 1)] += h * gn;
                            gx[idx(n - 1)] -= h * gn;
                        }
                        let l = t - 1;
                        let gl = gi(l);
                        gx[idx(l)] += 3.0 * h * gl;
                        gx[idx(l - 1)] += -4.0 * h * gl;
                        gx[idx(l - 2)] += h * gl;
                    }
                }
                acc(*x, gx, grads);
            }
            Op::NormSum { x, squared } => {
                let xv = &nodes[x.0].value;
                let c = xv.last_dim().max(1);
                let g0 = g[0];
                let mut gx = vec![0.0; xv.len()];
                for (s, o) in xv.data.chunks(c).zip(gx.chunks_mut(c)) {
                    if *squared {
                        s.iter().zip(o.iter_mut()).for_each(|(v, o)| *o = 2.0 * g0 * v);
                    } else {
                        let norm = s.iter().map(|v| v * v).sum::<f64>().sqrt();
                        // The norm is not differentiable at zero; take the zero subgradient.
                        if norm > 0.0 {
                            s.iter().zip(o.iter_mut()).for_each(|(v, o)| *o = g0 * v / norm);
                        }
                    }
                }
                acc(*x, gx, grads);
            }
            Op::SumSquares { x } => {
                let xv = &nodes[x.0].value;
                let g0 = g[0];
                acc(*x, xv.data.iter().map(|v| 2.0 * g0 * v).collect(), grads);
            }
        }
    }
}

/// Strided real/imag views for mode `n` of a complex_mul.
fn cmul_views(n: usize, batch: usize, t: usize, cin: usize, cout: usize) -> (Mat, Mat, Mat, Mat, Mat, Mat) {
    let x = Mat { offset: n * 2 * cin, rows: batch, cols: cin, rs: t * 2 * cin, cs: 2 };
    let w = Mat { offset: n * cin * cout * 2, rows: cin, cols: cout, rs: cout * 2, cs: 2 };
    let o = Mat { offset: n * 2 * cout, rows: batch, cols: cout, rs: t * 2 * cout, cs: 2 };
    (x, x.at(x.offset + 1), w, w.at(w.offset + 1), o, o.at(o.offset + 1))
}
