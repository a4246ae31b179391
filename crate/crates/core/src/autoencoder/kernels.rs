//! Forward and backward kernels for the three layer kinds.
//!
//! Activations are row-major `[channel][time]`. `rows` flags which input
//! channels contain a non-zero entry so all-zero rows can be skipped.

use super::arch::KERNEL;

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn nonzero_rows(x: &[f64], len: usize, out: &mut Vec<bool>) {
    out.clear();
    out.extend(x.chunks_exact(len).map(|r| r.iter().any(|&v| v != 0.0)));
}

pub struct Dims {
    pub cin: usize,
    pub cout: usize,
    pub len_in: usize,
}

pub fn conv_forward(d: &Dims, w: &[f64], b: &[f64], x: &[f64], rows: &[bool], y: &mut [f64]) {
    let lout = d.len_in - (KERNEL - 1);
    for (o, yo) in y.chunks_exact_mut(lout).enumerate() {
        yo.fill(b[o]);
        for i in (0..d.cin).filter(|&i| rows[i]) {
            let xi = &x[i * d.len_in..(i + 1) * d.len_in];
            let wk = &w[(o * d.cin + i) * KERNEL..][..KERNEL];
            for (k, &wv) in wk.iter().enumerate() {
                axpy(yo, wv, &xi[k..k + lout]);
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn conv_backward(
    d: &Dims,
    w: &[f64],
    x: &[f64],
    rows: &[bool],
    dy: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    mut dx: Option<&mut [f64]>,
) {
    let lout = d.len_in - (KERNEL - 1);
    for (o, dyo) in dy.chunks_exact(lout).enumerate() {
        db[o] += dyo.iter().sum::<f64>();
        for i in 0..d.cin {
            let base = (o * d.cin + i) * KERNEL;
            if rows[i] {
                let xi = &x[i * d.len_in..(i + 1) * d.len_in];
                for k in 0..KERNEL {
                    dw[base + k] += dot(dyo, &xi[k..k + lout]);
                }
            }
            if let Some(dx) = dx.as_deref_mut() {
                let dxi = &mut dx[i * d.len_in..(i + 1) * d.len_in];
                for k in 0..KERNEL {
                    axpy(&mut dxi[k..k + lout], w[base + k], dyo);
                }
            }
        }
    }
}

pub fn convt_forward(d: &Dims, w: &[f64], b: &[f64], x: &[f64], rows: &[bool], y: &mut [f64]) {
    let lout = d.len_in + (KERNEL - 1);
    for (o, yo) in y.chunks_exact_mut(lout).enumerate() {
        yo.fill(b[o]);
    }
    for i in (0..d.cin).filter(|&i| rows[i]) {
        let xi = &x[i * d.len_in..(i + 1) * d.len_in];
        for (o, yo) in y.chunks_exact_mut(lout).enumerate() {
            let wk = &w[(i * d.cout + o) * KERNEL..][..KERNEL];
            for (k, &wv) in wk.iter().enumerate() {
                axpy(&mut yo[k..k + d.len_in], wv, xi);
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn convt_backward(
    d: &Dims,
    w: &[f64],
    x: &[f64],
    rows: &[bool],
    dy: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    mut dx: Option<&mut [f64]>,
) {
    let lout = d.len_in + (KERNEL - 1);
    for (o, dyo) in dy.chunks_exact(lout).enumerate() {
        db[o] += dyo.iter().sum::<f64>();
    }
    for i in 0..d.cin {
        let xi = &x[i * d.len_in..(i + 1) * d.len_in];
        let mut dxi = dx.as_deref_mut().map(|dx| &mut dx[i * d.len_in..(i + 1) * d.len_in]);
        for (o, dyo) in dy.chunks_exact(lout).enumerate() {
            let base = (i * d.cout + o) * KERNEL;
            for k in 0..KERNEL {
                let window = &dyo[k..k + d.len_in];
                if rows[i] {
                    dw[base + k] += dot(xi, window);
                }
                if let Some(dxi) = dxi.as_deref_mut() {
                    axpy(dxi, w[base + k], window);
                }
            }
        }
    }
}

pub fn linear_forward(d: &Dims, w: &[f64], b: &[f64], x: &[f64], y: &mut [f64]) {
    for (o, yo) in y.iter_mut().enumerate() {
        *yo = b[o] + dot(&w[o * d.cin..(o + 1) * d.cin], x);
    }
}

pub fn linear_backward(
    d: &Dims,
    w: &[f64],
    x: &[f64],
    dy: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    mut dx: Option<&mut [f64]>,
) {
    for (o, &g) in dy.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        db[o] += g;
        axpy(&mut dw[o * d.cin..(o + 1) * d.cin], g, x);
        if let Some(dx) = dx.as_deref_mut() {
            axpy(dx, g, &w[o * d.cin..(o + 1) * d.cin]);
        }
    }
}
