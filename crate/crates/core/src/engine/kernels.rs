//! Low-level numeric kernels shared by the graph operations.

use std::cell::RefCell;
use std::sync::Arc;

use num_complex::Complex64 as C64;
use rustfft::{Fft, FftPlanner};

/// Strided view of a row-major-ish matrix inside a flat buffer.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Mat {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl Mat {
    pub fn dense(rows: usize, cols: usize) -> Self {
        Mat { offset: 0, rows, cols, rs: cols, cs: 1 }
    }

    pub fn t(self) -> Self {
        Mat { rows: self.cols, cols: self.rows, rs: self.cs, cs: self.rs, ..self }
    }

    pub fn at(self, offset: usize) -> Self {
        Mat { offset, ..self }
    }

    fn last_index(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            return self.offset;
        }
        self.offset + (self.rows - 1) * self.rs + (self.cols - 1) * self.cs
    }
}

/// c ← alpha·a·b + beta·c
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(alpha: f64, a: &[f64], am: Mat, b: &[f64], bm: Mat, beta: f64, c: &mut [f64], cm: Mat) {
    assert_eq!(am.cols, bm.rows, "gemm inner dimension");
    assert_eq!((am.rows, bm.cols), (cm.rows, cm.cols), "gemm output shape");
    let (m, k, n) = (am.rows, am.cols, bm.cols);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                let idx = cm.offset + i * cm.rs + j * cm.cs;
                c[idx] *= beta;
            }
        }
        return;
    }
    assert!(am.last_index() < a.len() && bm.last_index() < b.len() && cm.last_index() < c.len());
    // SAFETY: every index touched lies within the slices (checked above) and
    // `c` does not alias `a` or `b` because it is borrowed mutably.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr().add(am.offset),
            am.rs as isize,
            am.cs as isize,
            b.as_ptr().add(bm.offset),
            bm.rs as isize,
            bm.cs as isize,
            beta,
            c.as_mut_ptr().add(cm.offset),
            cm.rs as isize,
            cm.cs as isize,
        );
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(len)
        } else {
            p.plan_fft_forward(len)
        }
    })
}

/// Unnormalized DFT along the time axis of a `[batch, t, 2c]` paired-real
/// buffer. `sign_positive` selects exp(+2πi kn/T).
pub(crate) fn dft_time(data: &[f64], batch: usize, t: usize, c: usize, sign_positive: bool, scale: f64) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    if t == 0 || c == 0 {
        return out;
    }
    let fft = plan(t, sign_positive);
    let mut buf = vec![C64::new(0.0, 0.0); t * c];
    for b in 0..batch {
        let base = b * t * 2 * c;
        for n in 0..t {
            let row = base + n * 2 * c;
            for ch in 0..c {
                buf[ch * t + n] = C64::new(data[row + 2 * ch], data[row + 2 * ch + 1]);
            }
        }
        fft.process(&mut buf);
        for n in 0..t {
            let row = base + n * 2 * c;
            for ch in 0..c {
                let z = buf[ch * t + n];
                out[row + 2 * ch] = z.re * scale;
                out[row + 2 * ch + 1] = z.im * scale;
            }
        }
    }
    out
}

/// Whether frequency index `n` of a length-`t` transform survives a
/// truncation to `modes` modes (lowest |frequency| first).
pub(crate) fn mode_retained(n: usize, t: usize, modes: usize) -> bool {
    if modes >= t {
        return true;
    }
    let positive = modes.div_ceil(2);
    let negative = modes / 2;
    n < positive || n >= t - negative
}

pub(crate) fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

pub(crate) fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}
