//! Connected-component labelling, small-component filtering and centroids.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{offset_point, BinaryMask, Connectivity, Grid, Shape};
use crate::metrics;
use crate::union_find::UnionFind;

/// Components smaller than this are discarded by the 3D patching pipeline.
pub const DEFAULT_MIN_VOXELS: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub id: u32,
    pub voxel_count: usize,
    pub centroid: [f64; 3],
    /// Inclusive lower corner.
    pub bbox_min: Shape,
    /// Inclusive upper corner.
    pub bbox_max: Shape,
    /// Per-axis coordinate sums, kept so unions can be averaged exactly.
    #[serde(skip)]
    coord_sums: [u64; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComponentSet {
    /// 0 is background, `k >= 1` is `components[k - 1]`.
    pub labels: Grid<u32>,
    pub components: Vec<Component>,
    pub connectivity: Connectivity,
}

impl ComponentSet {
    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn mask(&self) -> BinaryMask {
        self.labels.map(|&l| l != 0)
    }

    pub fn voxel_total(&self) -> usize {
        self.components.iter().map(|c| c.voxel_count).sum()
    }

    /// Component table as CSV: `id,voxel_count,cx,cy,cz,x0,y0,z0,x1,y1,z1`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["id", "voxel_count", "cx", "cy", "cz", "x0", "y0", "z0", "x1", "y1", "z1"])?;
        for c in &self.components {
            let mut row = vec![c.id.to_string(), c.voxel_count.to_string()];
            row.extend(c.centroid.iter().map(|v| v.to_string()));
            row.extend(c.bbox_min.iter().chain(c.bbox_max.iter()).map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Label the true voxels of `mask` by connectivity.
///
/// Two-pass scan: the first pass links each voxel to its already-visited
/// neighbours through a union-find, the second resolves roots. Labels are
/// numbered by decreasing voxel count, ties broken by the first voxel in
/// raster order.
pub fn label_components(mask: &BinaryMask, connectivity: Connectivity) -> Result<ComponentSet> {
    let shape = mask.shape();
    // Neighbours that precede a voxel in x-fastest raster order.
    let backward: Vec<[isize; 3]> = connectivity
        .offsets(shape)?
        .into_iter()
        .filter(|d| d[2] < 0 || (d[2] == 0 && (d[1] < 0 || (d[1] == 0 && d[0] < 0))))
        .collect();

    const NONE: u32 = u32::MAX;
    let mut provisional = vec![NONE; mask.len()];
    let mut uf = UnionFind::new(0);
    for (i, &on) in mask.data().iter().enumerate() {
        if !on {
            continue;
        }
        let p = mask.coords(i);
        let mut root = NONE;
        for d in &backward {
            let Some(q) = offset_point(p, *d, shape) else { continue };
            let l = provisional[mask.flat_index(q)];
            if l == NONE {
                continue;
            }
            let r = uf.find(l);
            root = if root == NONE {
                r
            } else {
                let a = uf.find(root);
                uf.union_roots(a, r)
            };
        }
        provisional[i] = if root == NONE { uf.push() } else { root };
    }

    struct Acc {
        count: usize,
        first: usize,
        sums: [u64; 3],
        lo: Shape,
        hi: Shape,
    }
    let mut accs: Vec<Option<Acc>> = (0..uf.len()).map(|_| None).collect();
    for (i, l) in provisional.iter_mut().enumerate() {
        if *l == NONE {
            continue;
        }
        let r = uf.find(*l);
        *l = r;
        let p = mask.coords(i);
        let acc = accs[r as usize].get_or_insert(Acc {
            count: 0,
            first: i,
            sums: [0; 3],
            lo: p,
            hi: p,
        });
        acc.count += 1;
        for a in 0..3 {
            acc.sums[a] += p[a] as u64;
            acc.lo[a] = acc.lo[a].min(p[a]);
            acc.hi[a] = acc.hi[a].max(p[a]);
        }
    }

    let mut roots: Vec<usize> = (0..accs.len()).filter(|&r| accs[r].is_some()).collect();
    roots.sort_by_key(|&r| {
        let a = accs[r].as_ref().expect("filtered");
        (std::cmp::Reverse(a.count), a.first)
    });
    let mut dense = vec![0u32; accs.len()];
    let mut components = Vec::with_capacity(roots.len());
    for (k, &r) in roots.iter().enumerate() {
        let a = accs[r].as_ref().expect("filtered");
        dense[r] = k as u32 + 1;
        components.push(Component {
            id: k as u32 + 1,
            voxel_count: a.count,
            centroid: std::array::from_fn(|ax| a.sums[ax] as f64 / a.count as f64),
            bbox_min: a.lo,
            bbox_max: a.hi,
            coord_sums: a.sums,
        });
    }
    let labels: Vec<u32> = provisional
        .iter()
        .map(|&l| if l == NONE { 0 } else { dense[l as usize] })
        .collect();
    Ok(ComponentSet {
        labels: Grid::from_vec(shape, labels)?,
        components,
        connectivity,
    })
}

/// Drop components with fewer than `min_voxels` voxels and renumber the rest.
pub fn filter_small(cs: &ComponentSet, min_voxels: usize) -> ComponentSet {
    let mut remap = vec![0u32; cs.components.len() + 1];
    let mut components = Vec::new();
    for c in cs.components.iter().filter(|c| c.voxel_count >= min_voxels) {
        let id = components.len() as u32 + 1;
        remap[c.id as usize] = id;
        components.push(Component { id, ..c.clone() });
    }
    ComponentSet {
        labels: cs.labels.map(|&l| remap[l as usize]),
        components,
        connectivity: cs.connectivity,
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CentroidMode {
    /// Mean over every voxel of every surviving component.
    #[default]
    Union,
    /// Centroid of the largest component only.
    Largest,
}

pub fn mask_centroid(cs: &ComponentSet, mode: CentroidMode) -> Result<[f64; 3]> {
    let chosen: &[Component] = match mode {
        CentroidMode::Union => &cs.components,
        CentroidMode::Largest => &cs.components[..cs.components.len().min(1)],
    };
    let count: usize = chosen.iter().map(|c| c.voxel_count).sum();
    if count == 0 {
        return Err(Error::Empty("no components left to take a centroid of".into()));
    }
    let mut sums = [0u64; 3];
    for c in chosen {
        for a in 0..3 {
            sums[a] += c.coord_sums[a];
        }
    }
    Ok(std::array::from_fn(|a| sums[a] as f64 / count as f64))
}

/// Dice of an extracted binary mask against the whole-tumor mask.
pub fn mask_dice(extracted: &BinaryMask, whole_tumor: &BinaryMask) -> Result<f64> {
    metrics::dice(extracted, whole_tumor, metrics::DICE_EPS)
}
