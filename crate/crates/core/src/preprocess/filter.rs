//! Linear spatial filtering, Gaussian smoothing, cross sharpening and
//! image gradients.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::grid::{Grid, Shape, Slice2D};

/// Dense correlation kernel with odd side lengths. A planar kernel has depth 1.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterKernel {
    weights: Grid<f64>,
}

impl FilterKernel {
    pub fn new(weights: Grid<f64>) -> Result<Self> {
        if let Some(axis) = weights.shape().iter().position(|n| n % 2 == 0) {
            return Err(Error::InvalidParameter(format!(
                "kernel side along axis {axis} must be odd (shape {:?})",
                weights.shape()
            )));
        }
        Ok(FilterKernel { weights })
    }

    pub fn weights(&self) -> &Grid<f64> {
        &self.weights
    }

    /// Half extents `(a, b, c)`: the kernel spans `-a..=a` along x and so on.
    pub fn half_extents(&self) -> Shape {
        let s = self.weights.shape();
        [s[0] / 2, s[1] / 2, s[2] / 2]
    }

    pub fn identity_2d() -> Self {
        let mut w = Grid::filled([3, 3, 1], 0.0).unwrap();
        w[[1, 1, 0]] = 1.0;
        FilterKernel { weights: w }
    }

    pub fn box_2d(radius: usize) -> Self {
        let side = 2 * radius + 1;
        let v = 1.0 / (side * side) as f64;
        FilterKernel {
            weights: Grid::filled([side, side, 1], v).unwrap(),
        }
    }

    /// Planar high-pass cross: 4 at the centre, -1 on the four edge neighbours.
    pub fn cross_2d() -> Self {
        let w = Grid::from_vec(
            [3, 3, 1],
            vec![0.0, -1.0, 0.0, -1.0, 4.0, -1.0, 0.0, -1.0, 0.0],
        )
        .unwrap();
        FilterKernel { weights: w }
    }

    /// Volumetric cross: 6 at the centre, -1 on the six face neighbours.
    pub fn cross_3d() -> Self {
        let mut w = Grid::filled([3, 3, 3], 0.0).unwrap();
        w[[1, 1, 1]] = 6.0;
        for p in [
            [0, 1, 1],
            [2, 1, 1],
            [1, 0, 1],
            [1, 2, 1],
            [1, 1, 0],
            [1, 1, 2],
        ] {
            w[p] = -1.0;
        }
        FilterKernel { weights: w }
    }

    /// Normalised sampled Gaussian over the axes where `shape` has extent > 1.
    pub fn gaussian(sigma: f64, radius: usize, planar: bool) -> Result<Self> {
        let taps = gaussian_taps(sigma, radius)?;
        let side = 2 * radius + 1;
        let depth = if planar { 1 } else { side };
        let w = Grid::from_fn([side, side, depth], |p| {
            let wz = if planar { 1.0 } else { taps[p[2]] };
            taps[p[0]] * taps[p[1]] * wz
        })?;
        Ok(FilterKernel { weights: w })
    }
}

/// Normalised 1D Gaussian taps of length `2 * radius + 1`.
pub fn gaussian_taps(sigma: f64, radius: usize) -> Result<Vec<f64>> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "gaussian sigma must be positive (got {sigma})"
        )));
    }
    let r = radius as isize;
    let mut taps: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    Ok(taps)
}

/// Half-sample symmetric reflection: `-1 -> 0`, `n -> n - 1`.
#[inline]
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if i < 0 {
        -i - 1
    } else if i >= n {
        2 * n - i - 1
    } else {
        i
    };
    r as usize
}

/// `g(p) = sum_{s} w(s) f(p + s)` over the kernel support, reflecting at borders.
pub fn convolve(img: &Grid<f64>, kernel: &FilterKernel) -> Result<Grid<f64>> {
    let shape = img.shape();
    let ks = kernel.weights.shape();
    for axis in 0..3 {
        if ks[axis] > shape[axis] {
            return Err(Error::InvalidParameter(format!(
                "kernel side {} exceeds image extent {} along axis {axis}",
                ks[axis], shape[axis]
            )));
        }
    }
    let half = kernel.half_extents();
    let stride = [1isize, shape[0] as isize, (shape[0] * shape[1]) as isize];

    struct Tap {
        d: [isize; 3],
        flat: isize,
        w: f64,
    }
    let mut taps = Vec::new();
    for kz in 0..ks[2] {
        for ky in 0..ks[1] {
            for kx in 0..ks[0] {
                let w = kernel.weights[[kx, ky, kz]];
                if w == 0.0 {
                    continue;
                }
                let d = [
                    kx as isize - half[0] as isize,
                    ky as isize - half[1] as isize,
                    kz as isize - half[2] as isize,
                ];
                let flat = d[0] * stride[0] + d[1] * stride[1] + d[2] * stride[2];
                taps.push(Tap { d, flat, w });
            }
        }
    }

    let src = img.data();
    let mut out = vec![0.0; img.len()];
    let mut idx = 0usize;
    for z in 0..shape[2] {
        let z_in = z >= half[2] && z + half[2] < shape[2];
        for y in 0..shape[1] {
            let y_in = y >= half[1] && y + half[1] < shape[1];
            for x in 0..shape[0] {
                let interior = z_in && y_in && x >= half[0] && x + half[0] < shape[0];
                let mut acc = 0.0;
                if interior {
                    for t in &taps {
                        acc += t.w * src[(idx as isize + t.flat) as usize];
                    }
                } else {
                    for t in &taps {
                        let qx = reflect(x as isize + t.d[0], shape[0]);
                        let qy = reflect(y as isize + t.d[1], shape[1]);
                        let qz = reflect(z as isize + t.d[2], shape[2]);
                        acc += t.w * src[qx + shape[0] * (qy + shape[1] * qz)];
                    }
                }
                out[idx] = acc;
                idx += 1;
            }
        }
    }
    Grid::from_vec(shape, out)
}

/// Correlate every line along `axis` with `taps`, reflecting at the ends.
fn convolve_axis(img: &Grid<f64>, taps: &[f64], axis: usize) -> Grid<f64> {
    let shape = img.shape();
    let n = shape[axis];
    let r = taps.len() / 2;
    let stride = match axis {
        0 => 1,
        1 => shape[0],
        _ => shape[0] * shape[1],
    };
    let src = img.data();
    let mut out = vec![0.0; src.len()];
    let mut line = vec![0.0; n + 2 * r];
    // Enumerate line starts: every index whose coordinate along `axis` is zero.
    let starts: Vec<usize> = (0..src.len())
        .filter(|&i| (i / stride) % n == 0)
        .collect();
    for start in starts {
        for (j, slot) in line.iter_mut().enumerate() {
            let k = reflect(j as isize - r as isize, n);
            *slot = src[start + k * stride];
        }
        for i in 0..n {
            let mut acc = 0.0;
            for (t, w) in taps.iter().enumerate() {
                acc += w * line[i + t];
            }
            out[start + i * stride] = acc;
        }
    }
    Grid::from_vec(shape, out).expect("shape preserved")
}

/// Separable Gaussian smoothing over every axis with extent > 1.
///
/// Equal (up to rounding) to [`convolve`] with [`FilterKernel::gaussian`].
pub fn gaussian_blur(img: &Grid<f64>, sigma: f64, radius: usize) -> Result<Grid<f64>> {
    let taps = gaussian_taps(sigma, radius)?;
    let side = 2 * radius + 1;
    let shape = img.shape();
    let axes: Vec<usize> = (0..3).filter(|&a| shape[a] > 1).collect();
    for &axis in &axes {
        if side > shape[axis] {
            return Err(Error::InvalidParameter(format!(
                "gaussian side {side} exceeds image extent {} along axis {axis}",
                shape[axis]
            )));
        }
    }
    let mut cur = img.clone();
    for axis in axes {
        cur = convolve_axis(&cur, &taps, axis);
    }
    Ok(cur)
}

/// `img + cross(img)`: adds the high-pass cross response back onto the image.
pub fn sharpen(img: &Grid<f64>) -> Result<Grid<f64>> {
    let s = img.shape();
    let planar = img.is_2d();
    if s[0] < 3 || s[1] < 3 || (!planar && s[2] < 3) {
        return Err(Error::InvalidParameter(format!(
            "sharpening needs at least 3 voxels per axis (shape {s:?})"
        )));
    }
    let kernel = if planar {
        FilterKernel::cross_2d()
    } else {
        FilterKernel::cross_3d()
    };
    let mut out = convolve(img, &kernel)?;
    for (o, &v) in out.data_mut().iter_mut().zip(img.data()) {
        *o += v;
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct GradientField {
    pub gx: Slice2D,
    pub gy: Slice2D,
    pub magnitude: Slice2D,
    /// `atan2(gy, gx)` mapped into `(-pi, pi]`.
    pub direction: Slice2D,
}

fn diff(src: &[f64], i: usize, n: usize, stride: usize, at: usize) -> f64 {
    if at == 0 {
        src[i + stride] - src[i]
    } else if at == n - 1 {
        src[i] - src[i - stride]
    } else {
        (src[i + stride] - src[i - stride]) / 2.0
    }
}

/// Central differences inside, one-sided differences on the border.
pub fn gradient(img: &Slice2D) -> Result<GradientField> {
    let s = img.shape();
    if !img.is_2d() || s[0] < 3 || s[1] < 3 {
        return Err(Error::InvalidParameter(format!(
            "gradient needs a planar image of at least 3x3 (shape {s:?})"
        )));
    }
    let src = img.data();
    let mut gx = vec![0.0; src.len()];
    let mut gy = vec![0.0; src.len()];
    for y in 0..s[1] {
        for x in 0..s[0] {
            let i = x + s[0] * y;
            gx[i] = diff(src, i, s[0], 1, x);
            gy[i] = diff(src, i, s[1], s[0], y);
        }
    }
    let magnitude: Vec<f64> = gx.iter().zip(&gy).map(|(a, b)| a.hypot(*b)).collect();
    let direction: Vec<f64> = gx
        .iter()
        .zip(&gy)
        .map(|(&a, &b)| {
            let t = b.atan2(a);
            if t <= -PI {
                PI
            } else {
                t
            }
        })
        .collect();
    Ok(GradientField {
        gx: Grid::from_vec(s, gx)?,
        gy: Grid::from_vec(s, gy)?,
        magnitude: Grid::from_vec(s, magnitude)?,
        direction: Grid::from_vec(s, direction)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn plane(n: usize, m: usize, f: impl Fn(usize, usize) -> f64) -> Slice2D {
        Grid::from_fn([n, m, 1], |p| f(p[0], p[1])).unwrap()
    }
    /// The convolution sum evaluated voxel by voxel, with explicit reflection.
    /// Eq. 2 evaluated literally, with explicit reflection.
    fn direct_sum(img: &Grid<f64>, k: &FilterKernel, p: Shape) -> f64 {
        let h = k.half_extents();
        let s = img.shape();
        let mut acc = 0.0;
        for kz in 0..2 * h[2] + 1 {
            for ky in 0..2 * h[1] + 1 {
                for kx in 0..2 * h[0] + 1 {
                    let q = [
                        reflect(p[0] as isize + kx as isize - h[0] as isize, s[0]),
                        reflect(p[1] as isize + ky as isize - h[1] as isize, s[1]),
                        reflect(p[2] as isize + kz as isize - h[2] as isize, s[2]),
                    ];
                    acc += k.weights()[[kx, ky, kz]] * img[q];
                }
            }
        }
        acc
    }

    #[test]
    fn reflect_mirrors_edges() {
        assert_eq!(reflect(-1, 5), 0);
        assert_eq!(reflect(-2, 5), 1);
        assert_eq!(reflect(5, 5), 4);
        assert_eq!(reflect(6, 5), 3);
        assert_eq!(reflect(2, 5), 2);
    }

    #[test]
    fn identity_kernel_is_identity() {
        let img = plane(5, 4, |x, y| (x * 7 + y * 3) as f64);
        assert_eq!(convolve(&img, &FilterKernel::identity_2d()).unwrap(), img);
    }

    #[test]
    fn box_on_constant_and_hand_sum() {
        let c = plane(6, 6, |_, _| 2.5);
        let out = convolve(&c, &FilterKernel::box_2d(1)).unwrap();
        assert!(out.data().iter().all(|v| (v - 2.5).abs() < 1e-12));

        let img = Grid::from_vec([3, 3, 1], vec![0.0, 9.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])
            .unwrap();
        let out = convolve(&img, &FilterKernel::box_2d(1)).unwrap();
        assert!((out[[1, 1, 0]] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kernel_larger_than_image_is_rejected() {
        let img = plane(2, 2, |_, _| 1.0);
        assert!(convolve(&img, &FilterKernel::box_2d(1)).is_err());
        assert!(FilterKernel::new(Grid::filled([2, 3, 1], 0.0).unwrap()).is_err());
    }

    #[test]
    fn convolve_matches_direct_sum_everywhere() {
        let img = Grid::from_fn([6, 5, 4], |p| ((p[0] * 31 + p[1] * 17 + p[2] * 7) % 11) as f64)
            .unwrap();
        let k = FilterKernel::new(
            Grid::from_fn([3, 5, 3], |p| (p[0] + 2 * p[1] + 3 * p[2]) as f64 - 4.0).unwrap(),
        )
        .unwrap();
        let out = convolve(&img, &k).unwrap();
        for i in 0..img.len() {
            let p = img.coords(i);
            assert!((out[p] - direct_sum(&img, &k, p)).abs() < 1e-9, "{p:?}");
        }
    }

    #[test]
    fn gaussian_impulse_response_is_kernel() {
        let mut img = plane(9, 9, |_, _| 0.0);
        img[[4, 4, 0]] = 1.0;
        let out = gaussian_blur(&img, 1.0, 2).unwrap();
        let k = FilterKernel::gaussian(1.0, 2, true).unwrap();
        for dy in 0..5 {
            for dx in 0..5 {
                let v = out[[2 + dx, 2 + dy, 0]];
                assert!((v - k.weights()[[dx, dy, 0]]).abs() < 1e-12);
            }
        }
        let total: f64 = k.weights().data().iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn gaussian_constant_checkerboard_and_sigma() {
        let c = plane(8, 8, |_, _| 3.0);
        let out = gaussian_blur(&c, 1.0, 2).unwrap();
        assert!(out.data().iter().all(|v| (v - 3.0).abs() < 1e-12));

        let cb = plane(8, 8, |x, y| ((x + y) % 2) as f64);
        let out = gaussian_blur(&cb, 1.0, 2).unwrap();
        let (lo, hi) = out.min_max();
        assert!(hi - lo < 1.0);

        assert!(gaussian_blur(&c, 0.0, 2).is_err());
        assert!(gaussian_blur(&c, -1.0, 2).is_err());
    }

    #[test]
    fn separable_blur_equals_full_kernel_3d() {
        let img = Grid::from_fn([7, 6, 5], |p| ((p[0] * 13 + p[1] * 5 + p[2] * 3) % 7) as f64)
            .unwrap();
        let sep = gaussian_blur(&img, 1.3, 2).unwrap();
        let full = convolve(&img, &FilterKernel::gaussian(1.3, 2, false).unwrap()).unwrap();
        for (a, b) in sep.data().iter().zip(full.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn sharpen_cases() {
        let c = plane(5, 5, |_, _| 1.5);
        assert_eq!(sharpen(&c).unwrap(), c);

        let mut imp = plane(5, 5, |_, _| 0.0);
        imp[[2, 2, 0]] = 1.0;
        let out = sharpen(&imp).unwrap();
        assert_eq!(out[[2, 2, 0]], 5.0);
        for p in [[1, 2, 0], [3, 2, 0], [2, 1, 0], [2, 3, 0]] {
            assert_eq!(out[p], -1.0);
        }
        assert_eq!(out[[1, 1, 0]], 0.0);

        let ramp = plane(6, 5, |x, _| x as f64);
        let out = sharpen(&ramp).unwrap();
        for y in 1..4 {
            for x in 1..5 {
                assert!((out[[x, y, 0]] - ramp[[x, y, 0]]).abs() < 1e-12);
            }
        }
        assert!(sharpen(&plane(2, 5, |_, _| 0.0)).is_err());
    }

    #[test]
    fn sharpen_3d_uses_six_neighbour_cross() {
        let mut v = Grid::filled([5, 5, 5], 0.0).unwrap();
        v[[2, 2, 2]] = 1.0;
        let out = sharpen(&v).unwrap();
        assert_eq!(out[[2, 2, 2]], 7.0);
        assert_eq!(out[[2, 2, 1]], -1.0);
        assert_eq!(out[[1, 1, 2]], 0.0);
    }

    #[test]
    fn gradient_of_ramps() {
        let r = plane(6, 6, |x, _| x as f64);
        let g = gradient(&r).unwrap();
        for y in 1..5 {
            for x in 1..5 {
                assert!((g.gx[[x, y, 0]] - 1.0).abs() < 1e-12);
                assert!(g.gy[[x, y, 0]].abs() < 1e-12);
                assert!((g.magnitude[[x, y, 0]] - 1.0).abs() < 1e-12);
                assert!(g.direction[[x, y, 0]].abs() < 1e-12);
            }
        }
        let c = gradient(&plane(4, 4, |_, _| 2.0)).unwrap();
        assert!(c.magnitude.data().iter().all(|&m| m == 0.0));

        let r = plane(6, 6, |x, y| 3.0 * x as f64 + 4.0 * y as f64);
        let g = gradient(&r).unwrap();
        assert!((g.magnitude[[2, 3, 0]] - 5.0).abs() < 1e-9);
        assert!(gradient(&plane(2, 6, |_, _| 0.0)).is_err());
    }

    #[test]
    fn direction_in_half_open_interval() {
        let r = plane(5, 5, |x, _| -(x as f64));
        let g = gradient(&r).unwrap();
        assert_eq!(g.direction[[2, 2, 0]], PI);
        let r = plane(5, 5, |x, y| ((x * 7 + y * 3) % 5) as f64 - 2.0);
        let g = gradient(&r).unwrap();
        assert!(g.direction.data().iter().all(|&t| t > -PI && t <= PI));
    }

    proptest! {
        #[test]
        fn convolve_is_linear(
            f in proptest::collection::vec(-10.0f64..10.0, 36),
            g in proptest::collection::vec(-10.0f64..10.0, 36),
            w in proptest::collection::vec(-1.0f64..1.0, 9),
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
        ) {
            let f = Grid::from_vec([6, 6, 1], f).unwrap();
            let g = Grid::from_vec([6, 6, 1], g).unwrap();
            let k = FilterKernel::new(Grid::from_vec([3, 3, 1], w).unwrap()).unwrap();
            let mix = Grid::from_vec(
                [6, 6, 1],
                f.data().iter().zip(g.data()).map(|(x, y)| a * x + b * y).collect(),
            ).unwrap();
            let lhs = convolve(&mix, &k).unwrap();
            let cf = convolve(&f, &k).unwrap();
            let cg = convolve(&g, &k).unwrap();
            for i in 0..36 {
                let rhs = a * cf.data()[i] + b * cg.data()[i];
                prop_assert!((lhs.data()[i] - rhs).abs() < 1e-6);
            }
        }

        #[test]
        fn linear_field_gradient_magnitude(alpha in -5.0f64..5.0, beta in -5.0f64..5.0) {
            let img = plane(7, 6, |x, y| alpha * x as f64 + beta * y as f64);
            let g = gradient(&img).unwrap();
            let want = (alpha * alpha + beta * beta).sqrt();
            for y in 1..5 {
                for x in 1..6 {
                    prop_assert!((g.magnitude[[x, y, 0]] - want).abs() < 1e-9);
                    let m = g.magnitude[[x, y, 0]];
                    let gx = g.gx[[x, y, 0]];
                    let gy = g.gy[[x, y, 0]];
                    prop_assert!((m - (gx * gx + gy * gy).sqrt()).abs() < 1e-9);
                }
            }
        }
    }
}
