//! Slice-level convolution kernels built on im2col/col2im and GEMM.

use super::Real;

/// Geometry of a 2-d cross-correlation between a `[c, h, w]` image and a
/// `kh×kw` window, producing `oh×ow` positions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Patch {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl Patch {
    pub fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    pub fn cols(&self) -> usize {
        self.oh * self.ow
    }

    pub fn image_len(&self) -> usize {
        self.c * self.h * self.w
    }
}

#[inline]
fn source_index(o: usize, k: usize, stride: usize, pad: usize, extent: usize) -> Option<usize> {
    let i = (o * stride + k) as isize - pad as isize;
    (i >= 0 && (i as usize) < extent).then_some(i as usize)
}

/// Unfolds one image into a `[c·kh·kw, oh·ow]` column matrix.
pub(crate) fn im2col<T: Real>(img: &[T], p: &Patch, cols: &mut [T]) {
    debug_assert_eq!(img.len(), p.image_len());
    debug_assert_eq!(cols.len(), p.rows() * p.cols());
    let ncols = p.cols();
    for c in 0..p.c {
        let plane = &img[c * p.h * p.w..(c + 1) * p.h * p.w];
        for ki in 0..p.kh {
            for kj in 0..p.kw {
                let row = (c * p.kh + ki) * p.kw + kj;
                let dst = &mut cols[row * ncols..(row + 1) * ncols];
                for oy in 0..p.oh {
                    let line = &mut dst[oy * p.ow..(oy + 1) * p.ow];
                    match source_index(oy, ki, p.stride, p.pad, p.h) {
                        None => line.fill(T::zero()),
                        Some(iy) => {
                            let src = &plane[iy * p.w..(iy + 1) * p.w];
                            for (ox, v) in line.iter_mut().enumerate() {
                                *v = match source_index(ox, kj, p.stride, p.pad, p.w) {
                                    Some(ix) => src[ix],
                                    None => T::zero(),
                                };
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Folds a column matrix back into an image, accumulating overlaps.
pub(crate) fn col2im<T: Real>(cols: &[T], p: &Patch, img: &mut [T]) {
    debug_assert_eq!(img.len(), p.image_len());
    let ncols = p.cols();
    for c in 0..p.c {
        let plane = &mut img[c * p.h * p.w..(c + 1) * p.h * p.w];
        for ki in 0..p.kh {
            for kj in 0..p.kw {
                let row = (c * p.kh + ki) * p.kw + kj;
                let src = &cols[row * ncols..(row + 1) * ncols];
                for oy in 0..p.oh {
                    let Some(iy) = source_index(oy, ki, p.stride, p.pad, p.h) else {
                        continue;
                    };
                    let dst = &mut plane[iy * p.w..(iy + 1) * p.w];
                    for (ox, &v) in src[oy * p.ow..(oy + 1) * p.ow].iter().enumerate() {
                        if let Some(ix) = source_index(ox, kj, p.stride, p.pad, p.w) {
                            dst[ix] = dst[ix] + v;
                        }
                    }
                }
            }
        }
    }
}

/// Row-major `c (m×n) = alpha · op(a) · op(b) + beta · c`, with `op` a
/// transpose when the flag is set. `a` is stored `m×k` (or `k×m` when
/// transposed), `b` is `k×n` (or `n×k`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn matmul<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_t: bool,
    b: &[T],
    b_t: bool,
    beta: T,
    c: &mut [T],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every access implied by the strides.
    unsafe {
        T::gemm(
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
