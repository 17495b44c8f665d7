//! Raw compute kernels shared by forward and backward passes.
//!
//! All kernels operate on contiguous row-major slices. The inner loops
//! are written over sub-slices so the compiler can vectorize them.

use super::Element;

/// C += A(m,k) * B(k,n)
pub fn mm_nn<T: Element>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// C += A(m,n) * B(k,n)^T  -> (m,k); rows of A dotted with rows of B.
pub fn mm_nt<T: Element>(a: &[T], b: &[T], c: &mut [T], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        let crow = &mut c[i * k..(i + 1) * k];
        for (p, cv) in crow.iter_mut().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            let mut acc = T::zero();
            for (&av, &bv) in arow.iter().zip(brow) {
                acc += av * bv;
            }
            *cv += acc;
        }
    }
}

/// C += A(m,k)^T * B(m,n) -> (k,n)
pub fn mm_tn<T: Element>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let crow = &mut c[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// Output length of a 1-D convolution.
pub fn conv1d_out_len(l: usize, k: usize, stride: usize, padding: usize) -> Option<usize> {
    let span = l + 2 * padding;
    if span < k || stride == 0 {
        return None;
    }
    Some((span - k) / stride + 1)
}

/// y(b,co,o) += sum_{ci,k} x(b,ci,o*s+k-p) * w(co,ci,k); zero padding.
#[allow(clippy::too_many_arguments)]
pub fn conv1d_fwd<T: Element>(
    x: &[T],
    w: &[T],
    y: &mut [T],
    batch: usize,
    c_in: usize,
    l: usize,
    c_out: usize,
    ksize: usize,
    stride: usize,
    padding: usize,
) {
    let lout = conv1d_out_len(l, ksize, stride, padding).expect("validated by caller");
    for b in 0..batch {
        let xb = &x[b * c_in * l..(b + 1) * c_in * l];
        let yb = &mut y[b * c_out * lout..(b + 1) * c_out * lout];
        for co in 0..c_out {
            let yo = &mut yb[co * lout..(co + 1) * lout];
            for ci in 0..c_in {
                let xi = &xb[ci * l..(ci + 1) * l];
                let wk = &w[(co * c_in + ci) * ksize..(co * c_in + ci + 1) * ksize];
                for (kk, &wv) in wk.iter().enumerate() {
                    if wv == T::zero() {
                        continue;
                    }
                    // valid o: 0 <= o*stride + kk - padding < l
                    let (o0, o1) = valid_out_range(l, lout, stride, padding, kk);
                    if stride == 1 {
                        let off = o0 + kk - padding;
                        for (yv, &xv) in yo[o0..o1].iter_mut().zip(&xi[off..off + (o1 - o0)]) {
                            *yv += wv * xv;
                        }
                    } else {
                        for o in o0..o1 {
                            yo[o] += wv * xi[o * stride + kk - padding];
                        }
                    }
                }
            }
        }
    }
}

/// dx(b,ci,i) += sum_{co,k} g(b,co,o) * w(co,ci,k) with i = o*s+k-p.
#[allow(clippy::too_many_arguments)]
pub fn conv1d_bwd_input<T: Element>(
    g: &[T],
    w: &[T],
    dx: &mut [T],
    batch: usize,
    c_in: usize,
    l: usize,
    c_out: usize,
    ksize: usize,
    stride: usize,
    padding: usize,
) {
    let lout = conv1d_out_len(l, ksize, stride, padding).expect("validated by caller");
    for b in 0..batch {
        let gb = &g[b * c_out * lout..(b + 1) * c_out * lout];
        let dxb = &mut dx[b * c_in * l..(b + 1) * c_in * l];
        for co in 0..c_out {
            let go = &gb[co * lout..(co + 1) * lout];
            for ci in 0..c_in {
                let dxi = &mut dxb[ci * l..(ci + 1) * l];
                let wk = &w[(co * c_in + ci) * ksize..(co * c_in + ci + 1) * ksize];
                for (kk, &wv) in wk.iter().enumerate() {
                    if wv == T::zero() {
                        continue;
                    }
                    let (o0, o1) = valid_out_range(l, lout, stride, padding, kk);
                    if stride == 1 {
                        let off = o0 + kk - padding;
                        for (dxv, &gv) in dxi[off..off + (o1 - o0)].iter_mut().zip(&go[o0..o1]) {
                            *dxv += wv * gv;
                        }
                    } else {
                        for o in o0..o1 {
                            dxi[o * stride + kk - padding] += wv * go[o];
                        }
                    }
                }
            }
        }
    }
}

/// dw(co,ci,k) += sum_{b,o} g(b,co,o) * x(b,ci,o*s+k-p)
#[allow(clippy::too_many_arguments)]
pub fn conv1d_bwd_weight<T: Element>(
    g: &[T],
    x: &[T],
    dw: &mut [T],
    batch: usize,
    c_in: usize,
    l: usize,
    c_out: usize,
    ksize: usize,
    stride: usize,
    padding: usize,
) {
    let lout = conv1d_out_len(l, ksize, stride, padding).expect("validated by caller");
    for b in 0..batch {
        let gb = &g[b * c_out * lout..(b + 1) * c_out * lout];
        let xb = &x[b * c_in * l..(b + 1) * c_in * l];
        for co in 0..c_out {
            let go = &gb[co * lout..(co + 1) * lout];
            for ci in 0..c_in {
                let xi = &xb[ci * l..(ci + 1) * l];
                let dwk = &mut dw[(co * c_in + ci) * ksize..(co * c_in + ci + 1) * ksize];
                for (kk, dwv) in dwk.iter_mut().enumerate() {
                    let (o0, o1) = valid_out_range(l, lout, stride, padding, kk);
                    let mut acc = T::zero();
                    if stride == 1 {
                        let off = o0 + kk - padding;
                        for (&gv, &xv) in go[o0..o1].iter().zip(&xi[off..off + (o1 - o0)]) {
                            acc += gv * xv;
                        }
                    } else {
                        for o in o0..o1 {
                            acc += go[o] * xi[o * stride + kk - padding];
                        }
                    }
                    *dwv += acc;
                }
            }
        }
    }
}

/// Range of output indices o with 0 <= o*stride + k - padding < l.
fn valid_out_range(l: usize, lout: usize, stride: usize, padding: usize, k: usize) -> (usize, usize) {
    let lo = if k >= padding { 0 } else { (padding - k).div_ceil(stride) };
    let hi_excl = {
        // o*stride + k - padding <= l-1
        let limit = l + padding;
        if limit <= k {
            0
        } else {
            ((limit - 1 - k) / stride + 1).min(lout)
        }
    };
    (lo.min(hi_excl), hi_excl)
}

/// Numerically stable softmax over each row of length `d`, in place.
pub fn softmax_rows<T: Element>(data: &mut [T], d: usize) {
    for row in data.chunks_mut(d) {
        let mut mx = row[0];
        for &v in row.iter() {
            if v > mx {
                mx = v;
            }
        }
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - mx).exp();
            sum += *v;
        }
        let inv = T::one() / sum;
        for v in row.iter_mut() {
            *v *= inv;
        }
    }
}
