//! Slice-level numeric kernels shared by the graph ops.

use super::Real;

/// `out[m,n] += a[m,k] · b[k,n]`
pub(crate) fn gemm_acc(a: &[Real], b: &[Real], out: &mut [Real], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[k,n] += aᵀ · g` with `a[m,k]`, `g[m,n]`.
pub(crate) fn gemm_at_b_acc(a: &[Real], g: &[Real], out: &mut [Real], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
}

/// `out[m,k] += g · bᵀ` with `g[m,n]`, `b[k,n]`.
pub(crate) fn gemm_a_bt_acc(g: &[Real], b: &[Real], out: &mut [Real], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let dot: Real = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
            out[i * k + p] += dot;
        }
    }
}

/// Geometry of a 2-D convolution window sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        pad: usize,
    ) -> Option<Self> {
        let ph = height + 2 * pad;
        let pw = width + 2 * pad;
        if stride == 0 || kh > ph || kw > pw {
            return None;
        }
        Some(ConvGeom {
            channels,
            height,
            width,
            kh,
            kw,
            stride,
            pad,
            out_h: (ph - kh) / stride + 1,
            out_w: (pw - kw) / stride + 1,
        })
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    pub fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Visits every (column-matrix index, image index) pair that lands inside the image.
    #[inline]
    fn for_each(&self, mut f: impl FnMut(usize, usize)) {
        let cols = self.col_cols();
        for c in 0..self.channels {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    for oy in 0..self.out_h {
                        let iy = (oy * self.stride + ki) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.height as isize {
                            continue;
                        }
                        for ox in 0..self.out_w {
                            let ix = (ox * self.stride + kj) as isize - self.pad as isize;
                            if ix < 0 || ix >= self.width as isize {
                                continue;
                            }
                            let img = (c * self.height + iy as usize) * self.width + ix as usize;
                            f(row * cols + oy * self.out_w + ox, img);
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn im2col(x: &[Real], geom: &ConvGeom) -> Vec<Real> {
    let mut cols = vec![0.0; geom.col_rows() * geom.col_cols()];
    geom.for_each(|ci, xi| cols[ci] = x[xi]);
    cols
}

/// Adjoint of [`im2col`]: scatters-and-adds column entries back onto the image.
pub(crate) fn col2im_acc(cols: &[Real], geom: &ConvGeom, out: &mut [Real]) {
    geom.for_each(|ci, xi| out[xi] += cols[ci]);
}
