//! Binary erosion, dilation, opening and closing with a box structuring
//! element of side `2r + 1`.
//!
//! The grid is treated as embedded in an all-false plane: erosion sees
//! out-of-bounds voxels as background, and closing dilates into an `r`-voxel
//! margin before eroding, so a block near the border closes to itself. With
//! these semantics opening is anti-extensive, closing is extensive, and both
//! are idempotent. A box is separable, so each operation runs one 1D pass
//! per axis with extent > 1.

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, Grid, Shape};

fn axis_pass(mask: &BinaryMask, radius: usize, axis: usize, erode: bool) -> BinaryMask {
    let shape = mask.shape();
    let n = shape[axis];
    let stride = match axis {
        0 => 1,
        1 => shape[0],
        _ => shape[0] * shape[1],
    };
    let src = mask.data();
    let mut out = src.to_vec();
    // Running count of "hits": false voxels for erosion, true voxels for dilation.
    let mut prefix = vec![0usize; n + 1];
    for start in (0..src.len()).filter(|&i| (i / stride) % n == 0) {
        for i in 0..n {
            let v = src[start + i * stride];
            prefix[i + 1] = prefix[i] + usize::from(v != erode);
        }
        for i in 0..n {
            let lo = i.saturating_sub(radius);
            let hi = (i + radius).min(n - 1);
            let hits = prefix[hi + 1] - prefix[lo];
            out[start + i * stride] = if erode {
                hits == 0 && i >= radius && i + radius < n
            } else {
                hits > 0
            };
        }
    }
    BinaryMask::from_vec(shape, out).expect("shape preserved")
}

fn apply(mask: &BinaryMask, radius: usize, erode: bool) -> BinaryMask {
    let shape = mask.shape();
    let mut cur = mask.clone();
    for axis in (0..3).filter(|&a| shape[a] > 1) {
        cur = axis_pass(&cur, radius, axis, erode);
    }
    cur
}

pub fn erode(mask: &BinaryMask, radius: usize) -> BinaryMask {
    apply(mask, radius, true)
}

pub fn dilate(mask: &BinaryMask, radius: usize) -> BinaryMask {
    apply(mask, radius, false)
}

pub fn open(mask: &BinaryMask, radius: usize) -> BinaryMask {
    dilate(&erode(mask, radius), radius)
}

pub fn close(mask: &BinaryMask, radius: usize) -> BinaryMask {
    let shape = mask.shape();
    let pad: Shape = std::array::from_fn(|a| if shape[a] > 1 { radius } else { 0 });
    let padded_shape: Shape = std::array::from_fn(|a| shape[a] + 2 * pad[a]);
    let padded = Grid::from_fn(padded_shape, |p| {
        (0..3).all(|a| p[a] >= pad[a] && p[a] < pad[a] + shape[a])
            && mask[[p[0] - pad[0], p[1] - pad[1], p[2] - pad[2]]]
    })
    .expect("positive extents");
    erode(&dilate(&padded, radius), radius)
        .crop(pad, shape)
        .expect("window inside padded grid")
}

/// Opening followed by closing.
pub fn morph_open_close(mask: &BinaryMask, se_radius: usize) -> Result<BinaryMask> {
    if se_radius == 0 {
        return Err(Error::InvalidParameter(
            "structuring element radius must be at least 1".into(),
        ));
    }
    Ok(close(&open(mask, se_radius), se_radius))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Set definition: the box around `p`, out-of-bounds voxels read as false.
    fn window(mask: &BinaryMask, p: Shape, r: usize) -> Vec<bool> {
        let s = mask.shape();
        let r = r as isize;
        let mut out = Vec::new();
        let span = |n: usize| if n == 1 { 0..=0 } else { -r..=r };
        for dz in span(s[2]) {
            for dy in span(s[1]) {
                for dx in span(s[0]) {
                    let q = [p[0] as isize + dx, p[1] as isize + dy, p[2] as isize + dz];
                    let inside = (0..3).all(|a| q[a] >= 0 && q[a] < s[a] as isize);
                    out.push(inside && mask[[q[0] as usize, q[1] as usize, q[2] as usize]]);
                }
            }
        }
        out
    }

    fn oracle_erode(mask: &BinaryMask, r: usize) -> BinaryMask {
        Grid::from_fn(mask.shape(), |p| window(mask, p, r).iter().all(|&b| b)).unwrap()
    }

    fn oracle_dilate(mask: &BinaryMask, r: usize) -> BinaryMask {
        Grid::from_fn(mask.shape(), |p| window(mask, p, r).iter().any(|&b| b)).unwrap()
    }

    fn block(shape: Shape, lo: Shape, hi: Shape) -> BinaryMask {
        Grid::from_fn(shape, |p| (0..3).all(|a| p[a] >= lo[a] && p[a] < hi[a])).unwrap()
    }

    #[test]
    fn isolated_voxel_is_removed() {
        let mut m = Grid::filled([9, 9, 1], false).unwrap();
        m[[4, 4, 0]] = true;
        assert_eq!(morph_open_close(&m, 1).unwrap().count_true(), 0);
    }

    #[test]
    fn small_hole_is_filled_by_closing() {
        let mut m = block([9, 9, 1], [2, 2, 0], [7, 7, 1]);
        m[[4, 4, 0]] = false;
        let out = close(&m, 1);
        assert!(out[[4, 4, 0]]);
        assert_eq!(out, block([9, 9, 1], [2, 2, 0], [7, 7, 1]));
        // Opening runs first in the composed operator, and a 3x3 box fits
        // nowhere in a 5x5 block with a centre hole.
        assert_eq!(morph_open_close(&m, 1).unwrap().count_true(), 0);
    }

    #[test]
    fn block_touching_border_survives_both() {
        let m = block([8, 8, 1], [0, 0, 0], [5, 5, 1]);
        assert_eq!(morph_open_close(&m, 1).unwrap(), m);
    }

    #[test]
    fn solid_block_is_unchanged() {
        let m = block([11, 11, 1], [2, 2, 0], [9, 9, 1]);
        assert_eq!(morph_open_close(&m, 1).unwrap(), m);
        let opened = oracle_dilate(&oracle_erode(&m, 1), 1);
        assert_eq!(opened, m);
        let cube = block([9, 9, 9], [1, 1, 1], [8, 8, 8]);
        assert_eq!(morph_open_close(&cube, 1).unwrap(), cube);
    }

    #[test]
    fn zero_radius_rejected() {
        let m = Grid::filled([3, 3, 1], true).unwrap();
        assert!(morph_open_close(&m, 0).is_err());
    }

    fn random_mask(bits: &[bool], shape: Shape) -> BinaryMask {
        Grid::from_vec(shape, bits.to_vec()).unwrap()
    }

    proptest! {
        #[test]
        fn separable_matches_set_definition_3d(
            bits in proptest::collection::vec(any::<bool>(), 6 * 5 * 4),
            r in 1usize..3,
        ) {
            let m = random_mask(&bits, [6, 5, 4]);
            prop_assert_eq!(erode(&m, r), oracle_erode(&m, r));
            prop_assert_eq!(dilate(&m, r), oracle_dilate(&m, r));
        }

        #[test]
        fn opening_and_closing_are_idempotent(
            bits in proptest::collection::vec(any::<bool>(), 10 * 9),
            r in 1usize..3,
        ) {
            let m = random_mask(&bits, [10, 9, 1]);
            let o = open(&m, r);
            prop_assert_eq!(open(&o, r), o.clone());
            let c = close(&m, r);
            prop_assert_eq!(close(&c, r), c.clone());
            for ((&a, &b), &cc) in o.data().iter().zip(m.data()).zip(c.data()) {
                prop_assert!(!a || b);
                prop_assert!(!b || cc);
            }
        }
    }
}
