//! Dense f64 kernels shared by the tape ops.
//!
//! All matrices are row-major and contiguous unless a stride argument says
//! otherwise.

use std::borrow::Cow;

/// `c = a·b + beta·c` with `a: m×k`, `b: k×n`, `c: m×n`.
///
/// `a_t` / `b_t` read the operand as the transpose of a row-major buffer
/// (`a` stored `k×m`, `b` stored `n×k`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    beta: f64,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the debug assertions above pin every buffer to the exact
    // extent the strides address, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of one 1-D convolution call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    pub left_pad: usize,
    pub t_in: usize,
    pub t_out: usize,
}

impl ConvGeom {
    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.left_pad == 0
    }
}

/// Unfolds `x: c_in×t_in` into `(c_in·kernel)×t_out` patches.
pub(crate) fn im2col<'x>(x: &'x [f64], g: &ConvGeom) -> Cow<'x, [f64]> {
    if g.is_pointwise() {
        return Cow::Borrowed(x);
    }
    let mut cols = vec![0.0; g.c_in * g.kernel * g.t_out];
    for c in 0..g.c_in {
        let row = &x[c * g.t_in..(c + 1) * g.t_in];
        for k in 0..g.kernel {
            let dst = &mut cols[(c * g.kernel + k) * g.t_out..(c * g.kernel + k + 1) * g.t_out];
            let offset = k * g.dilation;
            for (t, d) in dst.iter_mut().enumerate() {
                let j = t * g.stride + offset;
                if j >= g.left_pad {
                    *d = row[j - g.left_pad];
                }
            }
        }
    }
    Cow::Owned(cols)
}

/// Scatter-adds patch gradients back onto `dx: c_in×t_in`.
pub(crate) fn col2im_add(dcols: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    if g.is_pointwise() {
        dx.iter_mut().zip(dcols).for_each(|(a, b)| *a += b);
        return;
    }
    for c in 0..g.c_in {
        let row = &mut dx[c * g.t_in..(c + 1) * g.t_in];
        for k in 0..g.kernel {
            let src = &dcols[(c * g.kernel + k) * g.t_out..(c * g.kernel + k + 1) * g.t_out];
            let offset = k * g.dilation;
            for (t, s) in src.iter().enumerate() {
                let j = t * g.stride + offset;
                if j >= g.left_pad {
                    row[j - g.left_pad] += s;
                }
            }
        }
    }
}

pub(crate) fn conv1d_forward(x: &[f64], w: &[f64], g: &ConvGeom) -> Vec<f64> {
    let cols = im2col(x, g);
    let mut out = vec![0.0; g.c_out * g.t_out];
    gemm(
        g.c_out,
        g.c_in * g.kernel,
        g.t_out,
        w,
        false,
        &cols,
        false,
        &mut out,
        0.0,
    );
    out
}

/// Returns `(dx, dw)`; either side is skipped when not requested.
pub(crate) fn conv1d_backward(
    x: &[f64],
    w: &[f64],
    dout: &[f64],
    g: &ConvGeom,
    want_dx: bool,
    want_dw: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let ck = g.c_in * g.kernel;
    let dw = want_dw.then(|| {
        let cols = im2col(x, g);
        let mut dw = vec![0.0; g.c_out * ck];
        // dw = dout · colsᵀ
        gemm(g.c_out, g.t_out, ck, dout, false, &cols, true, &mut dw, 0.0);
        dw
    });
    let dx = want_dx.then(|| {
        let mut dcols = vec![0.0; ck * g.t_out];
        // dcols = wᵀ · dout
        gemm(ck, g.c_out, g.t_out, w, true, dout, false, &mut dcols, 0.0);
        let mut dx = vec![0.0; g.c_in * g.t_in];
        col2im_add(&dcols, g, &mut dx);
        dx
    });
    (dx, dw)
}

const ERF_STEP: f64 = 1.0 / 64.0;
const ERF_NODES: usize = 385;
const ERF_ORDER: usize = 7;

/// Taylor coefficients of erf around `i·ERF_STEP` for `i < ERF_NODES`. The
/// n-th derivative of erf is `(2/√π)·(−1)^(n−1)·H_(n−1)(x)·e^(−x²)` with
/// physicists' Hermite `H`.
fn erf_table() -> &'static [[f64; ERF_ORDER + 1]; ERF_NODES] {
    static TABLE: std::sync::OnceLock<[[f64; ERF_ORDER + 1]; ERF_NODES]> = std::sync::OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = [[0.0; ERF_ORDER + 1]; ERF_NODES];
        for (i, row) in t.iter_mut().enumerate() {
            let x = i as f64 * ERF_STEP;
            let g = 2.0 / std::f64::consts::PI.sqrt() * (-x * x).exp();
            row[0] = libm::erf(x);
            let (mut h_prev, mut h) = (0.0, 1.0);
            let mut fact = 1.0;
            for n in 1..=ERF_ORDER {
                fact *= n as f64;
                let sign = if n % 2 == 1 { 1.0 } else { -1.0 };
                row[n] = g * sign * h / fact;
                // H_n = 2x·H_(n−1) − 2(n−1)·H_(n−2)
                let next = 2.0 * x * h - 2.0 * (n - 1) as f64 * h_prev;
                h_prev = h;
                h = next;
            }
        }
        t
    })
}

/// erf via a tabulated degree-7 Taylor expansion on a 1/64 grid. Agrees
/// with `libm::erf` to a few ulp and runs several times faster, which
/// matters because GELU dominates encoder inference.
pub(crate) fn erf(x: f64) -> f64 {
    let a = x.abs();
    if !(a < (ERF_NODES - 1) as f64 * ERF_STEP) {
        // erf(6) rounds to 1; NaN propagates.
        return if x.is_nan() { x } else { 1.0f64.copysign(x) };
    }
    // Truncating cast of a nonnegative value: nearest node without a libm
    // call on baseline x86-64.
    let i = (a * (1.0 / ERF_STEP) + 0.5) as usize;
    let d = a - i as f64 * ERF_STEP;
    let c = &erf_table()[i];
    let mut acc = c[ERF_ORDER];
    for k in (0..ERF_ORDER).rev() {
        acc = acc * d + c[k];
    }
    acc.copysign(x)
}

/// Standard normal CDF, erf form.
pub(crate) fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x * std::f64::consts::FRAC_1_SQRT_2))
}

pub(crate) fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}
