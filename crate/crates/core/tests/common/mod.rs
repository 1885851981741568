//! Independent reference implementations shared by the integration tests.
//! Nothing here calls into the library's algorithms.

#![allow(dead_code)]

use tumorpatch::{BinaryMask, Grid, Shape};

/// Neighbours of `p` changing at most `max_axes` coordinates by one.
pub fn neighbours(p: Shape, shape: Shape, max_axes: usize) -> Vec<Shape> {
    let mut out = Vec::new();
    for dz in -1i64..=1 {
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let d = [dx, dy, dz];
                let changed = d.iter().filter(|&&v| v != 0).count();
                if changed == 0 || changed > max_axes {
                    continue;
                }
                let q: Vec<i64> = (0..3).map(|a| p[a] as i64 + d[a]).collect();
                if (0..3).all(|a| q[a] >= 0 && q[a] < shape[a] as i64) {
                    out.push([q[0] as usize, q[1] as usize, q[2] as usize]);
                }
            }
        }
    }
    out
}

/// Flood-fill labelling: label ids in order of first raster appearance.
pub fn flood_fill(mask: &BinaryMask, max_axes: usize) -> Vec<u32> {
    let shape = mask.shape();
    let mut labels = vec![0u32; mask.len()];
    let mut next = 0;
    for i in 0..mask.len() {
        if !mask.data()[i] || labels[i] != 0 {
            continue;
        }
        next += 1;
        labels[i] = next;
        let mut stack = vec![mask.coords(i)];
        while let Some(p) = stack.pop() {
            for q in neighbours(p, shape, max_axes) {
                let j = mask.flat_index(q);
                if mask.data()[j] && labels[j] == 0 {
                    labels[j] = next;
                    stack.push(q);
                }
            }
        }
    }
    labels
}

/// Sublevel 0-dim persistence by sweeping every distinct threshold and
/// flood-filling `{v <= t}` from scratch. Returns sorted `(birth, death)`
/// pairs, essential deaths as `+inf`, zero-length pairs omitted.
pub fn sublevel_sweep(img: &Grid<f64>, max_axes: usize) -> Vec<(f64, f64)> {
    let mut levels: Vec<f64> = img.data().to_vec();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let mut pairs = Vec::new();
    // Birth value of the component each voxel belonged to at the previous level.
    let mut prev: Vec<Option<(u32, f64)>> = vec![None; img.len()];
    for &t in &levels {
        let mask = img.map(|&v| v <= t);
        let labels = flood_fill(&mask, max_axes);
        let n = labels.iter().copied().max().unwrap_or(0) as usize;
        let mut olds: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n + 1];
        for i in 0..img.len() {
            if let Some(old) = prev[i] {
                if !olds[labels[i] as usize].contains(&old) {
                    olds[labels[i] as usize].push(old);
                }
            }
        }
        let mut birth_of = vec![t; n + 1];
        for (l, group) in olds.iter_mut().enumerate().skip(1) {
            if group.is_empty() {
                continue;
            }
            group.sort_by(|a, b| a.1.total_cmp(&b.1));
            birth_of[l] = group[0].1;
            for &(_, b) in &group[1..] {
                if b < t {
                    pairs.push((b, t));
                }
            }
        }
        for i in 0..img.len() {
            let l = labels[i];
            prev[i] = (l != 0).then(|| (l, birth_of[l as usize]));
        }
    }
    let mut essential: Vec<(u32, f64)> = prev.into_iter().flatten().collect();
    essential.sort_by(|a, b| a.0.cmp(&b.0));
    essential.dedup_by_key(|e| e.0);
    pairs.extend(essential.into_iter().map(|(_, b)| (b, f64::INFINITY)));
    sort_pairs(&mut pairs);
    pairs
}

pub fn sort_pairs(pairs: &mut [(f64, f64)]) {
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
}

/// Yen cut by evaluating every cut from scratch; ties go to the lowest cut.
pub fn yen_brute_force(counts: &[u64]) -> usize {
    let mut best = (usize::MAX, f64::NEG_INFINITY);
    for t in 0..counts.len() - 1 {
        let lo: u64 = counts[..=t].iter().sum();
        let hi: u64 = counts[t + 1..].iter().sum();
        if lo == 0 || hi == 0 {
            continue;
        }
        let (lo, hi) = (lo as u128, hi as u128);
        let sq_lo: u128 = counts[..=t].iter().map(|&c| (c as u128).pow(2)).sum();
        let sq_hi: u128 = counts[t + 1..].iter().map(|&c| (c as u128).pow(2)).sum();
        // ln(P1^2 P2^2 / (S1 S2)) on raw counts; the common normaliser cancels.
        let crit = 2.0 * (lo as f64).ln() + 2.0 * (hi as f64).ln() - (sq_lo as f64).ln() - (sq_hi as f64).ln();
        if crit > best.1 {
            best = (t, crit);
        }
    }
    best.0
}
