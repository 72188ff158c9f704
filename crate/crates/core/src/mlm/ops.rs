//! Numeric kernels shared by the forward and backward passes.

use std::fmt::Debug;

use num_traits::Float;

/// Floating-point element type of a model (f32 for training, f64 for
/// gradient checking).
pub trait Scalar: Float + Default + Debug + Send + Sync + 'static {
    /// Raw strided GEMM: `C = alpha * A * B + beta * C`.
    ///
    /// # Safety
    /// The pointers and strides must describe valid, non-aliasing matrices of
    /// the stated sizes.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn of(x: f64) -> Self;

    fn f64(self) -> f64;
}

impl Scalar for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }

    fn of(x: f64) -> f32 {
        x as f32
    }

    fn f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }

    fn of(x: f64) -> f64 {
        x
    }

    fn f64(self) -> f64 {
        self
    }
}

/// Row-major `C (m×n) = op(A) · op(B) + beta · C`, where `op(A)` is m×k and
/// `op(B)` is k×n. A transposed operand is stored in its untransposed shape.
#[allow(clippy::too_many_arguments)]
pub fn matmul<T: Scalar>(
    a: &[T],
    trans_a: bool,
    b: &[T],
    trans_b: bool,
    c: &mut [T],
    m: usize,
    k: usize,
    n: usize,
    beta: T,
) {
    assert!(a.len() >= m * k, "lhs too short");
    assert!(b.len() >= k * n, "rhs too short");
    assert!(c.len() >= m * n, "output too short");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for x in &mut c[..m * n] {
            *x = *x * beta;
        }
        return;
    }
    let (rsa, csa) = if trans_a {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if trans_b {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    // SAFETY: sizes were checked above and `c` is exclusively borrowed.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
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

/// `y (rows×out) = x (rows×in) · w (in×out) + bias`.
pub fn linear<T: Scalar>(
    x: &[T],
    w: &[T],
    bias: &[T],
    rows: usize,
    inp: usize,
    out: usize,
) -> Vec<T> {
    let mut y = Vec::with_capacity(rows * out);
    for _ in 0..rows {
        y.extend_from_slice(&bias[..out]);
    }
    matmul(x, false, w, false, &mut y, rows, inp, out, T::one());
    y
}

/// Accumulates the weight and bias gradients of [`linear`] and returns the
/// input gradient.
#[allow(clippy::too_many_arguments)]
pub fn linear_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    dy: &[T],
    dw: &mut [T],
    db: &mut [T],
    rows: usize,
    inp: usize,
    out: usize,
) -> Vec<T> {
    matmul(x, true, dy, false, dw, inp, rows, out, T::one());
    for r in 0..rows {
        for (d, &g) in db.iter_mut().zip(&dy[r * out..(r + 1) * out]) {
            *d = *d + g;
        }
    }
    let mut dx = vec![T::zero(); rows * inp];
    matmul(dy, false, w, true, &mut dx, rows, out, inp, T::zero());
    dx
}

pub const LN_EPS: f64 = 1e-5;

/// Saved statistics of a layer-norm application.
#[derive(Debug, Clone, Default)]
pub struct LnCache<T> {
    pub xhat: Vec<T>,
    pub rstd: Vec<T>,
}

pub fn layer_norm<T: Scalar>(
    x: &[T],
    gain: &[T],
    bias: &[T],
    width: usize,
) -> (Vec<T>, LnCache<T>) {
    let rows = x.len() / width;
    let mut y = vec![T::zero(); x.len()];
    let mut cache = LnCache {
        xhat: vec![T::zero(); x.len()],
        rstd: Vec::with_capacity(rows),
    };
    let w = T::of(width as f64);
    for r in 0..rows {
        let row = &x[r * width..(r + 1) * width];
        let mean = row.iter().fold(T::zero(), |s, &v| s + v) / w;
        let var = row
            .iter()
            .fold(T::zero(), |s, &v| s + (v - mean) * (v - mean))
            / w;
        let rstd = T::one() / (var + T::of(LN_EPS)).sqrt();
        cache.rstd.push(rstd);
        for j in 0..width {
            let xh = (row[j] - mean) * rstd;
            cache.xhat[r * width + j] = xh;
            y[r * width + j] = xh * gain[j] + bias[j];
        }
    }
    (y, cache)
}

pub fn layer_norm_backward<T: Scalar>(
    dy: &[T],
    cache: &LnCache<T>,
    gain: &[T],
    dgain: &mut [T],
    dbias: &mut [T],
    width: usize,
) -> Vec<T> {
    let rows = dy.len() / width;
    let mut dx = vec![T::zero(); dy.len()];
    let w = T::of(width as f64);
    let mut dxhat = vec![T::zero(); width];
    for r in 0..rows {
        let off = r * width;
        let mut mean_d = T::zero();
        let mut mean_dx = T::zero();
        for j in 0..width {
            let g = dy[off + j];
            let xh = cache.xhat[off + j];
            dgain[j] = dgain[j] + g * xh;
            dbias[j] = dbias[j] + g;
            let d = g * gain[j];
            dxhat[j] = d;
            mean_d = mean_d + d;
            mean_dx = mean_dx + d * xh;
        }
        mean_d = mean_d / w;
        mean_dx = mean_dx / w;
        let rstd = cache.rstd[r];
        for j in 0..width {
            dx[off + j] = rstd * (dxhat[j] - mean_d - cache.xhat[off + j] * mean_dx);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

/// Tanh approximation of GELU.
pub fn gelu<T: Scalar>(x: T) -> T {
    let c = T::of(GELU_C);
    let a = T::of(GELU_A);
    let half = T::of(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::of(GELU_C);
    let a = T::of(GELU_A);
    let half = T::of(0.5);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::of(3.0) * a * x * x)
}

/// In-place numerically stable softmax of one row.
pub fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum = sum + *v;
    }
    for v in row.iter_mut() {
        *v = *v / sum;
    }
}

pub fn add_in_place<T: Scalar>(acc: &mut [T], other: &[T]) {
    for (a, &b) in acc.iter_mut().zip(other) {
        *a = *a + b;
    }
}
