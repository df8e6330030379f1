//! Raw loops behind the differentiable ops. All matrices are row-major slices.
//!
//! The matrix loops keep the shared dimension outermost so each row of the
//! right-hand operand is streamed exactly once per call; the left-hand side in
//! this crate is always short (a dozen rows), the right-hand side is large.

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

/// `y += a0·x0 + a1·x1 + a2·x2 + a3·x3`.
#[inline]
fn axpy4(a: [f64; 4], x: [&[f64]; 4], y: &mut [f64]) {
    let n = y.len();
    let (x0, x1, x2, x3) = (&x[0][..n], &x[1][..n], &x[2][..n], &x[3][..n]);
    for j in 0..n {
        y[j] += a[0] * x0[j] + a[1] * x1[j] + a[2] * x2[j] + a[3] * x3[j];
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `c += a · b` with `a: m×k`, `b: k×n`, `c: m×n`.
pub fn matmul_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    let mut p = 0;
    while p + 4 <= k {
        let rows = [
            &b[p * n..(p + 1) * n],
            &b[(p + 1) * n..(p + 2) * n],
            &b[(p + 2) * n..(p + 3) * n],
            &b[(p + 3) * n..(p + 4) * n],
        ];
        for i in 0..m {
            let ai = &a[i * k + p..i * k + p + 4];
            axpy4([ai[0], ai[1], ai[2], ai[3]], rows, &mut c[i * n..(i + 1) * n]);
        }
        p += 4;
    }
    for p in p..k {
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..m {
            axpy(a[i * k + p], brow, &mut c[i * n..(i + 1) * n]);
        }
    }
}

/// `da += dc · bᵀ` with `dc: m×n`, `b: k×n`, `da: m×k`.
pub fn matmul_grad_lhs(dc: &[f64], b: &[f64], da: &mut [f64], m: usize, k: usize, n: usize) {
    for p in 0..k {
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..m {
            da[i * k + p] += dot(&dc[i * n..(i + 1) * n], brow);
        }
    }
}

/// `db += aᵀ · dc` with `a: m×k`, `dc: m×n`, `db: k×n`.
pub fn matmul_grad_rhs(a: &[f64], dc: &[f64], db: &mut [f64], m: usize, k: usize, n: usize) {
    for p in 0..k {
        let dbrow = &mut db[p * n..(p + 1) * n];
        let mut i = 0;
        while i + 4 <= m {
            let coef = [a[i * k + p], a[(i + 1) * k + p], a[(i + 2) * k + p], a[(i + 3) * k + p]];
            let rows = [
                &dc[i * n..(i + 1) * n],
                &dc[(i + 1) * n..(i + 2) * n],
                &dc[(i + 2) * n..(i + 3) * n],
                &dc[(i + 3) * n..(i + 4) * n],
            ];
            axpy4(coef, rows, dbrow);
            i += 4;
        }
        for i in i..m {
            axpy(a[i * k + p], &dc[i * n..(i + 1) * n], dbrow);
        }
    }
}

pub struct ConvDims {
    pub c_in: usize,
    pub len: usize,
    pub c_out: usize,
    pub width: usize,
    pub stride: usize,
    pub n_out: usize,
}

pub fn conv1d(x: &[f64], k: &[f64], bias: &[f64], out: &mut [f64], d: &ConvDims) {
    for o in 0..d.c_out {
        let orow = &mut out[o * d.n_out..(o + 1) * d.n_out];
        orow.iter_mut().for_each(|v| *v = bias[o]);
        for c in 0..d.c_in {
            let xrow = &x[c * d.len..(c + 1) * d.len];
            let krow = &k[(o * d.c_in + c) * d.width..(o * d.c_in + c + 1) * d.width];
            for (i, ov) in orow.iter_mut().enumerate() {
                let start = i * d.stride;
                *ov += dot(krow, &xrow[start..start + d.width]);
            }
        }
    }
}

pub fn conv1d_backward(
    x: &[f64],
    k: &[f64],
    dout: &[f64],
    dx: Option<&mut [f64]>,
    dk: Option<&mut [f64]>,
    db: Option<&mut [f64]>,
    d: &ConvDims,
) {
    if let Some(db) = db {
        for o in 0..d.c_out {
            db[o] += dout[o * d.n_out..(o + 1) * d.n_out].iter().sum::<f64>();
        }
    }
    if let Some(dk) = dk {
        for o in 0..d.c_out {
            let grow = &dout[o * d.n_out..(o + 1) * d.n_out];
            for c in 0..d.c_in {
                let xrow = &x[c * d.len..(c + 1) * d.len];
                let kbase = (o * d.c_in + c) * d.width;
                for (i, &g) in grow.iter().enumerate() {
                    let start = i * d.stride;
                    axpy(g, &xrow[start..start + d.width], &mut dk[kbase..kbase + d.width]);
                }
            }
        }
    }
    if let Some(dx) = dx {
        for o in 0..d.c_out {
            let grow = &dout[o * d.n_out..(o + 1) * d.n_out];
            for c in 0..d.c_in {
                let krow = &k[(o * d.c_in + c) * d.width..(o * d.c_in + c + 1) * d.width];
                let dxrow = &mut dx[c * d.len..(c + 1) * d.len];
                for (i, &g) in grow.iter().enumerate() {
                    let start = i * d.stride;
                    axpy(g, krow, &mut dxrow[start..start + d.width]);
                }
            }
        }
    }
}

/// Bin `i` of an adaptive pool over length `len` with `target` bins.
#[inline]
pub fn pool_bin(i: usize, len: usize, target: usize) -> (usize, usize) {
    let start = i * len / target;
    let end = ((i + 1) * len).div_ceil(target);
    (start, end)
}
