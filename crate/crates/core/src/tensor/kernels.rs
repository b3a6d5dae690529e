//! Raw numeric kernels behind the graph operations. Inputs are assumed
//! to be shape-checked by the caller.

use matrixmultiply::dgemm;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub ph: usize,
    pub pw: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.ph - self.kh) / self.sh + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.pw - self.kw) / self.sw + 1
    }

    fn rows(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.sh == 1 && self.sw == 1 && self.ph == 0 && self.pw == 0
    }
}

/// Unfolds the zero-padded input into a `(c_in·kh·kw) × (oh·ow)` matrix.
fn im2col(x: &[f64], g: &ConvGeom) -> Vec<f64> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let p = oh * ow;
    let mut col = vec![0.0; g.rows() * p];
    for ci in 0..g.c_in {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (ci * g.kh + i) * g.kw + j;
                let dst = &mut col[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let iy = (oy * g.sh + i) as isize - g.ph as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let out_row = &mut dst[oy * ow..(oy + 1) * ow];
                    for (ox, o) in out_row.iter_mut().enumerate() {
                        let ix = (ox * g.sw + j) as isize - g.pw as isize;
                        if ix >= 0 && (ix as usize) < g.w {
                            *o = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

/// Folds a column-matrix gradient back onto the input, summing overlaps.
fn col2im(col: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let p = oh * ow;
    for ci in 0..g.c_in {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (ci * g.kh + i) * g.kw + j;
                let src = &col[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let iy = (oy * g.sh + i) as isize - g.ph as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..ow {
                        let ix = (ox * g.sw + j) as isize - g.pw as isize;
                        if ix >= 0 && (ix as usize) < g.w {
                            dst[ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `c (m×n) = a (m×k) · b (k×n) + beta·c`, all row-major and contiguous
/// unless strides say otherwise.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(c.len() >= m * n);
    // SAFETY: the strides describe matrices that lie entirely inside the
    // given slices; every caller derives them from the slice lengths.
    unsafe {
        dgemm(
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

pub(crate) fn conv2d_forward(x: &[f64], w: &[f64], b: &[f64], g: &ConvGeom) -> Vec<f64> {
    let p = g.out_h() * g.out_w();
    let r = g.rows();
    let mut out = vec![0.0; g.c_out * p];
    for (co, row) in out.chunks_mut(p).enumerate() {
        row.fill(b[co]);
    }
    if g.pointwise() {
        gemm(g.c_out, r, p, w, (r as isize, 1), x, (p as isize, 1), 1.0, &mut out);
    } else {
        let col = im2col(x, g);
        gemm(g.c_out, r, p, w, (r as isize, 1), &col, (p as isize, 1), 1.0, &mut out);
    }
    out
}

/// Returns `(dx, dw, db)` for upstream gradient `gy`.
pub(crate) fn conv2d_backward(
    x: &[f64],
    w: &[f64],
    gy: &[f64],
    g: &ConvGeom,
    need_dx: bool,
) -> (Option<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let p = g.out_h() * g.out_w();
    let r = g.rows();
    let db: Vec<f64> = gy.chunks(p).map(|row| row.iter().sum()).collect();

    let owned;
    let col: &[f64] = if g.pointwise() {
        x
    } else {
        owned = im2col(x, g);
        &owned
    };

    // dw (c_out × r) = gy (c_out × p) · colᵀ (p × r)
    let mut dw = vec![0.0; g.c_out * r];
    gemm(g.c_out, p, r, gy, (p as isize, 1), col, (1, p as isize), 0.0, &mut dw);

    let dx = need_dx.then(|| {
        // dcol (r × p) = wᵀ (r × c_out) · gy (c_out × p)
        let mut dcol = vec![0.0; r * p];
        gemm(r, g.c_out, p, w, (1, r as isize), gy, (p as isize, 1), 0.0, &mut dcol);
        if g.pointwise() {
            dcol
        } else {
            let mut dx = vec![0.0; g.c_in * g.h * g.w];
            col2im(&dcol, g, &mut dx);
            dx
        }
    });
    (dx, dw, db)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct PoolGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub ph: usize,
    pub pw: usize,
}

impl PoolGeom {
    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.ph - self.kh) / self.sh + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.pw - self.kw) / self.sw + 1
    }

    /// Visits every (output index, input index) pair covered by a window.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize)) {
        let (oh, ow) = (self.out_h(), self.out_w());
        for c in 0..self.c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let o = (c * oh + oy) * ow + ox;
                    for i in 0..self.kh {
                        let iy = (oy * self.sh + i) as isize - self.ph as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        for j in 0..self.kw {
                            let ix = (ox * self.sw + j) as isize - self.pw as isize;
                            if ix < 0 || ix >= self.w as isize {
                                continue;
                            }
                            f(o, (c * self.h + iy as usize) * self.w + ix as usize);
                        }
                    }
                }
            }
        }
    }
}

/// Average pooling over a zero-padded input; the divisor is always the
/// full window size so the map stays linear.
pub(crate) fn avg_pool_forward(x: &[f64], g: &PoolGeom) -> Vec<f64> {
    let mut out = vec![0.0; g.c * g.out_h() * g.out_w()];
    let scale = 1.0 / (g.kh * g.kw) as f64;
    g.for_each_tap(|o, i| out[o] += x[i]);
    out.iter_mut().for_each(|v| *v *= scale);
    out
}

pub(crate) fn avg_pool_backward(gy: &[f64], g: &PoolGeom) -> Vec<f64> {
    let mut dx = vec![0.0; g.c * g.h * g.w];
    let scale = 1.0 / (g.kh * g.kw) as f64;
    g.for_each_tap(|o, i| dx[i] += gy[o] * scale);
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &[f64], w: &[f64], b: &[f64], g: &ConvGeom) -> Vec<f64> {
        let (oh, ow) = (g.out_h(), g.out_w());
        let mut out = vec![0.0; g.c_out * oh * ow];
        for co in 0..g.c_out {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b[co];
                    for ci in 0..g.c_in {
                        for i in 0..g.kh {
                            for j in 0..g.kw {
                                let iy = (oy * g.sh + i) as isize - g.ph as isize;
                                let ix = (ox * g.sw + j) as isize - g.pw as isize;
                                if iy < 0 || ix < 0 || iy >= g.h as isize || ix >= g.w as isize {
                                    continue;
                                }
                                acc += w[((co * g.c_in + ci) * g.kh + i) * g.kw + j]
                                    * x[(ci * g.h + iy as usize) * g.w + ix as usize];
                            }
                        }
                    }
                    out[(co * oh + oy) * ow + ox] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn gemm_path_matches_direct_loops() {
        let g = ConvGeom {
            c_in: 3,
            h: 7,
            w: 9,
            c_out: 4,
            kh: 3,
            kw: 5,
            sh: 2,
            sw: 1,
            ph: 1,
            pw: 2,
        };
        let x: Vec<f64> = (0..3 * 7 * 9).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let w: Vec<f64> = (0..4 * 3 * 15).map(|i| ((i * 13) % 7) as f64 * 0.25 - 0.7).collect();
        let b = vec![0.1, -0.2, 0.3, 0.0];
        let fast = conv2d_forward(&x, &w, &b, &g);
        let slow = naive_conv(&x, &w, &b, &g);
        for (a, e) in fast.iter().zip(&slow) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn pooling_counts_padding_as_zero() {
        let g = PoolGeom {
            c: 1,
            h: 2,
            w: 2,
            kh: 3,
            kw: 3,
            sh: 1,
            sw: 1,
            ph: 1,
            pw: 1,
        };
        let out = avg_pool_forward(&[1.0, 1.0, 1.0, 1.0], &g);
        assert_eq!(out, vec![4.0 / 9.0; 4]);
    }
}
