//! Raw convolution kernels over N×C×H×W slices (3×3 kernels use zero padding 1).

use alloc::vec;
use alloc::vec::Vec;

use crate::scalar::Real;

/// Kernel tap offsets in row-major order of a 3×3 window.
const TAPS: [(isize, isize); 9] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 0),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

fn valid_range(len: usize, d: isize) -> (usize, usize) {
    let lo = if d < 0 { (-d) as usize } else { 0 };
    let hi = if d > 0 { len.saturating_sub(d as usize) } else { len };
    (lo, hi.max(lo))
}

/// `dst[y][x] += k * src[y+dy][x+dx]` wherever the source index is in range.
fn shift_acc<T: Real>(dst: &mut [T], src: &[T], h: usize, w: usize, dy: isize, dx: isize, k: T) {
    let (y0, y1) = valid_range(h, dy);
    let (x0, x1) = valid_range(w, dx);
    if x0 >= x1 {
        return;
    }
    for y in y0..y1 {
        let sy = (y as isize + dy) as usize;
        let s0 = (sy * w) as isize + x0 as isize + dx;
        let s = &src[s0 as usize..s0 as usize + (x1 - x0)];
        let d = &mut dst[y * w + x0..y * w + x1];
        for (dv, &sv) in d.iter_mut().zip(s) {
            *dv += k * sv;
        }
    }
}

/// `Σ g[y][x] * src[y+dy][x+dx]` over the in-range window.
fn shift_dot<T: Real>(g: &[T], src: &[T], h: usize, w: usize, dy: isize, dx: isize) -> T {
    let (y0, y1) = valid_range(h, dy);
    let (x0, x1) = valid_range(w, dx);
    let mut acc = T::ZERO;
    if x0 >= x1 {
        return acc;
    }
    for y in y0..y1 {
        let sy = (y as isize + dy) as usize;
        let s0 = ((sy * w) as isize + x0 as isize + dx) as usize;
        let s = &src[s0..s0 + (x1 - x0)];
        let gr = &g[y * w + x0..y * w + x1];
        for (&gv, &sv) in gr.iter().zip(s) {
            acc += gv * sv;
        }
    }
    acc
}

/// 1×1 convolution: `out[n,o,p] = Σ_c w[o,c]·x[n,c,p] + b[o]`.
pub fn pointwise<T: Real>(
    x: &[T],
    n: usize,
    cin: usize,
    hw: usize,
    w: &[T],
    cout: usize,
    bias: Option<&[T]>,
) -> Vec<T> {
    let mut out = vec![T::ZERO; n * cout * hw];
    for b in 0..n {
        let xb = &x[b * cin * hw..(b + 1) * cin * hw];
        let ob = &mut out[b * cout * hw..(b + 1) * cout * hw];
        for o in 0..cout {
            let orow = &mut ob[o * hw..(o + 1) * hw];
            if let Some(bias) = bias {
                orow.fill(bias[o]);
            }
            for c in 0..cin {
                let wv = w[o * cin + c];
                if wv == T::ZERO {
                    continue;
                }
                let xrow = &xb[c * hw..(c + 1) * hw];
                for (ov, &xv) in orow.iter_mut().zip(xrow) {
                    *ov += wv * xv;
                }
            }
        }
    }
    out
}

pub struct PointwiseGrads<T> {
    pub dx: Option<Vec<T>>,
    pub dw: Option<Vec<T>>,
    pub db: Option<Vec<T>>,
}

#[allow(clippy::too_many_arguments)]
pub fn pointwise_backward<T: Real>(
    g: &[T],
    x: &[T],
    n: usize,
    cin: usize,
    hw: usize,
    w: &[T],
    cout: usize,
    want: (bool, bool, bool),
) -> PointwiseGrads<T> {
    let mut dx = want.0.then(|| vec![T::ZERO; n * cin * hw]);
    let mut dw = want.1.then(|| vec![T::ZERO; cout * cin]);
    let mut db = want.2.then(|| vec![T::ZERO; cout]);
    for b in 0..n {
        let xb = &x[b * cin * hw..(b + 1) * cin * hw];
        let gb = &g[b * cout * hw..(b + 1) * cout * hw];
        for o in 0..cout {
            let grow = &gb[o * hw..(o + 1) * hw];
            if let Some(db) = db.as_mut() {
                db[o] += grow.iter().copied().sum::<T>();
            }
            for c in 0..cin {
                let xrow = &xb[c * hw..(c + 1) * hw];
                if let Some(dw) = dw.as_mut() {
                    let mut acc = T::ZERO;
                    for (&gv, &xv) in grow.iter().zip(xrow) {
                        acc += gv * xv;
                    }
                    dw[o * cin + c] += acc;
                }
                if let Some(dx) = dx.as_mut() {
                    let wv = w[o * cin + c];
                    let drow = &mut dx[(b * cin + c) * hw..(b * cin + c + 1) * hw];
                    for (dv, &gv) in drow.iter_mut().zip(grow) {
                        *dv += wv * gv;
                    }
                }
            }
        }
    }
    PointwiseGrads { dx, dw, db }
}

/// Depth-wise 3×3 convolution, kernel layout C×3×3.
pub fn depthwise<T: Real>(
    x: &[T],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    k: &[T],
    bias: Option<&[T]>,
) -> Vec<T> {
    let hw = h * w;
    let mut out = vec![T::ZERO; n * c * hw];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * hw;
            let dst = &mut out[off..off + hw];
            if let Some(bias) = bias {
                dst.fill(bias[ch]);
            }
            let src = &x[off..off + hw];
            for (t, &(dy, dx)) in TAPS.iter().enumerate() {
                let kv = k[ch * 9 + t];
                if kv != T::ZERO {
                    shift_acc(dst, src, h, w, dy, dx, kv);
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub fn depthwise_backward<T: Real>(
    g: &[T],
    x: &[T],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    k: &[T],
    want: (bool, bool, bool),
) -> PointwiseGrads<T> {
    let hw = h * w;
    let mut dx = want.0.then(|| vec![T::ZERO; n * c * hw]);
    let mut dk = want.1.then(|| vec![T::ZERO; c * 9]);
    let mut db = want.2.then(|| vec![T::ZERO; c]);
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * hw;
            let gp = &g[off..off + hw];
            if let Some(db) = db.as_mut() {
                db[ch] += gp.iter().copied().sum::<T>();
            }
            let src = &x[off..off + hw];
            for (t, &(dy, ddx)) in TAPS.iter().enumerate() {
                if let Some(dk) = dk.as_mut() {
                    dk[ch * 9 + t] += shift_dot(gp, src, h, w, dy, ddx);
                }
                if let Some(dx) = dx.as_mut() {
                    shift_acc(&mut dx[off..off + hw], gp, h, w, -dy, -ddx, k[ch * 9 + t]);
                }
            }
        }
    }
    PointwiseGrads { dx, dw: dk, db }
}

/// Dense 3×3 convolution, kernel layout Cout×Cin×3×3.
#[allow(clippy::too_many_arguments)]
pub fn dense3x3<T: Real>(
    x: &[T],
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    k: &[T],
    cout: usize,
    bias: Option<&[T]>,
) -> Vec<T> {
    let hw = h * w;
    let mut out = vec![T::ZERO; n * cout * hw];
    for b in 0..n {
        for o in 0..cout {
            let off = (b * cout + o) * hw;
            let dst = &mut out[off..off + hw];
            if let Some(bias) = bias {
                dst.fill(bias[o]);
            }
            for c in 0..cin {
                let src = &x[(b * cin + c) * hw..(b * cin + c + 1) * hw];
                for (t, &(dy, dx)) in TAPS.iter().enumerate() {
                    let kv = k[(o * cin + c) * 9 + t];
                    if kv != T::ZERO {
                        shift_acc(dst, src, h, w, dy, dx, kv);
                    }
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub fn dense3x3_backward<T: Real>(
    g: &[T],
    x: &[T],
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    k: &[T],
    cout: usize,
    want: (bool, bool, bool),
) -> PointwiseGrads<T> {
    let hw = h * w;
    let mut dx = want.0.then(|| vec![T::ZERO; n * cin * hw]);
    let mut dk = want.1.then(|| vec![T::ZERO; cout * cin * 9]);
    let mut db = want.2.then(|| vec![T::ZERO; cout]);
    for b in 0..n {
        for o in 0..cout {
            let gp = &g[(b * cout + o) * hw..(b * cout + o + 1) * hw];
            if let Some(db) = db.as_mut() {
                db[o] += gp.iter().copied().sum::<T>();
            }
            for c in 0..cin {
                let xoff = (b * cin + c) * hw;
                for (t, &(dy, ddx)) in TAPS.iter().enumerate() {
                    let ki = (o * cin + c) * 9 + t;
                    if let Some(dk) = dk.as_mut() {
                        dk[ki] += shift_dot(gp, &x[xoff..xoff + hw], h, w, dy, ddx);
                    }
                    if let Some(dx) = dx.as_mut() {
                        shift_acc(&mut dx[xoff..xoff + hw], gp, h, w, -dy, -ddx, k[ki]);
                    }
                }
            }
        }
    }
    PointwiseGrads { dx, dw: dk, db }
}
