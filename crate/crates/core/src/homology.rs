//! 0-dimensional persistent homology of cubical filtrations on images.
//!
//! Each pixel (voxel) is a top cell carrying its own value. In the sublevel
//! filtration a pixel enters once the threshold reaches its value; pixels are
//! swept in ascending `(value, flat index)` order and joined to already
//! present neighbours with a union-find. At a merge the component born first
//! survives and the younger one dies at the current value. Pairs whose birth
//! equals their death are not recorded, so every recorded pair has positive
//! lifetime and its birth pixel is a local minimum. Components still alive at
//! the end are essential and never die.
//!
//! The superlevel filtration is the sublevel filtration of the negated image
//! with signs restored, so its pairs have `death <= birth` and its essential
//! deaths are `-inf`.

use std::collections::VecDeque;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{offset_point, Connectivity, Grid, Shape};
use crate::union_find::UnionFind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Filtration {
    Sublevel,
    Superlevel,
}

impl Filtration {
    fn sign(self) -> f64 {
        match self {
            Filtration::Sublevel => 1.0,
            Filtration::Superlevel => -1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PersistencePair {
    pub birth: f64,
    /// `+inf` (sublevel) or `-inf` (superlevel) for essential classes.
    pub death: f64,
    pub birth_location: Shape,
}

impl PersistencePair {
    pub fn is_essential(&self) -> bool {
        self.death.is_infinite()
    }

    pub fn lifetime(&self) -> f64 {
        (self.death - self.birth).abs()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PersistenceDiagram0 {
    pub pairs: Vec<PersistencePair>,
    pub filtration: Filtration,
    pub source_shape: Shape,
    /// Smallest and largest value of the filtered image.
    pub value_range: (f64, f64),
}

impl PersistenceDiagram0 {
    pub fn finite(&self) -> impl Iterator<Item = &PersistencePair> {
        self.pairs.iter().filter(|p| !p.is_essential())
    }

    pub fn essential(&self) -> impl Iterator<Item = &PersistencePair> {
        self.pairs.iter().filter(|p| p.is_essential())
    }

    /// The value an essential class is taken to die at when a finite death is needed.
    pub fn capped_death(&self) -> f64 {
        match self.filtration {
            Filtration::Sublevel => self.value_range.1,
            Filtration::Superlevel => self.value_range.0,
        }
    }

    /// CSV rows `birth,death,bx,by[,bz]`; essential deaths are written `inf` or `-inf`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let planar = self.source_shape[2] == 1;
        let mut w = csv::Writer::from_writer(out);
        if planar {
            w.write_record(["birth", "death", "bx", "by"])?;
        } else {
            w.write_record(["birth", "death", "bx", "by", "bz"])?;
        }
        for p in &self.pairs {
            let death = if p.death == f64::INFINITY {
                "inf".to_string()
            } else if p.death == f64::NEG_INFINITY {
                "-inf".to_string()
            } else {
                p.death.to_string()
            };
            let mut row = vec![p.birth.to_string(), death];
            let dims = if planar { 2 } else { 3 };
            row.extend(p.birth_location[..dims].iter().map(|c| c.to_string()));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// 0-dimensional persistence diagram of `img` under `connectivity`.
pub fn persistence_0d(
    img: &Grid<f64>,
    filtration: Filtration,
    connectivity: Connectivity,
) -> Result<PersistenceDiagram0> {
    if let Some(i) = img.first_non_finite() {
        return Err(Error::NonFinite { index: i });
    }
    let shape = img.shape();
    let offsets = connectivity.offsets(shape)?;
    let sign = filtration.sign();
    let values: Vec<f64> = img.data().iter().map(|&v| sign * v).collect();

    let mut order: Vec<u32> = (0..values.len() as u32).collect();
    order.sort_unstable_by(|&a, &b| {
        values[a as usize]
            .total_cmp(&values[b as usize])
            .then(a.cmp(&b))
    });

    // A component's age is the sweep rank of its birth pixel, so the elder
    // is the root with the smaller birth rank.
    let mut present = vec![false; values.len()];
    let mut uf = UnionFind::new(values.len());
    let mut birth_rank = vec![0u32; values.len()];
    let mut pairs = Vec::new();

    for (r, &p) in order.iter().enumerate() {
        let p = p as usize;
        present[p] = true;
        birth_rank[p] = r as u32;
        let here = img.coords(p);
        let value = values[p];
        for d in &offsets {
            let Some(q) = offset_point(here, *d, shape) else { continue };
            let q = img.flat_index(q);
            if !present[q] {
                continue;
            }
            let a = uf.find(p as u32);
            let b = uf.find(q as u32);
            if a == b {
                continue;
            }
            let (elder, younger) = if birth_rank[a as usize] <= birth_rank[b as usize] {
                (a, b)
            } else {
                (b, a)
            };
            let born = order[birth_rank[younger as usize] as usize] as usize;
            if values[born] < value {
                pairs.push(PersistencePair {
                    birth: sign * values[born],
                    death: sign * value,
                    birth_location: img.coords(born),
                });
            }
            let elder_birth = birth_rank[elder as usize];
            let root = uf.union_roots(a, b);
            birth_rank[root as usize] = elder_birth;
        }
    }

    let mut essential: Vec<u32> = (0..values.len() as u32)
        .filter(|&p| uf.find(p) == p)
        .map(|p| birth_rank[p as usize])
        .collect();
    essential.sort_unstable();
    for r in essential {
        let born = order[r as usize] as usize;
        pairs.push(PersistencePair {
            birth: sign * values[born],
            death: sign * f64::INFINITY,
            birth_location: img.coords(born),
        });
    }

    Ok(PersistenceDiagram0 {
        pairs,
        filtration,
        source_shape: shape,
        value_range: img.min_max(),
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EssentialPolicy {
    Drop,
    /// Essential classes die at the image's extreme value in filtration order.
    #[default]
    CapAtMax,
}

fn weighted_pairs(d: &PersistenceDiagram0, policy: EssentialPolicy) -> Vec<(Shape, f64)> {
    d.pairs
        .iter()
        .filter_map(|p| {
            if !p.is_essential() {
                Some((p.birth_location, p.lifetime()))
            } else if policy == EssentialPolicy::CapAtMax {
                Some((p.birth_location, (d.capped_death() - p.birth).abs()))
            } else {
                None
            }
        })
        .collect()
}

/// Grid holding, at each birth location, the largest lifetime born there.
pub fn lifetime_image(d: &PersistenceDiagram0, policy: EssentialPolicy) -> Grid<f64> {
    let mut out = Grid::filled(d.source_shape, 0.0).expect("diagram shape is valid");
    for (loc, life) in weighted_pairs(d, policy) {
        let cell: &mut f64 = &mut out[loc];
        *cell = cell.max(life);
    }
    out
}

/// Sum over pairs of lifetime times an isotropic Gaussian centred at the
/// birth location.
///
/// Each Gaussian is sampled within `ceil(4 sigma)` voxels of its centre and
/// normalised over the samples that fall inside the grid, so every pair adds
/// exactly its lifetime to the surface total. Planar diagrams spread in x
/// and y only.
pub fn persistence_surface(
    d: &PersistenceDiagram0,
    sigma: f64,
    policy: EssentialPolicy,
) -> Result<Grid<f64>> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "surface sigma must be positive (got {sigma})"
        )));
    }
    let shape = d.source_shape;
    let mut out = Grid::filled(shape, 0.0).expect("diagram shape is valid");
    let radius = (4.0 * sigma).ceil() as isize;
    let span = |c: usize, n: usize| -> (usize, usize) {
        if n == 1 {
            return (0, 0);
        }
        let lo = (c as isize - radius).max(0) as usize;
        let hi = (c as isize + radius).min(n as isize - 1) as usize;
        (lo, hi)
    };
    let inv = 1.0 / (2.0 * sigma * sigma);
    for (loc, life) in weighted_pairs(d, policy) {
        if life == 0.0 {
            continue;
        }
        let ranges: Vec<(usize, usize)> = (0..3).map(|a| span(loc[a], shape[a])).collect();
        let mut samples = Vec::new();
        let mut total = 0.0;
        for z in ranges[2].0..=ranges[2].1 {
            for y in ranges[1].0..=ranges[1].1 {
                for x in ranges[0].0..=ranges[0].1 {
                    let r2 = [x, y, z]
                        .iter()
                        .zip(loc.iter())
                        .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
                        .sum::<f64>();
                    let w = (-r2 * inv).exp();
                    total += w;
                    samples.push(([x, y, z], w));
                }
            }
        }
        for (p, w) in samples {
            out[p] += life * w / total;
        }
    }
    Ok(out)
}

/// Voxels reachable from `seed` through voxels satisfying `keep`.
pub(crate) fn component_of(
    img: &Grid<f64>,
    seed: Shape,
    connectivity: Connectivity,
    keep: impl Fn(f64) -> bool,
) -> Result<Vec<Shape>> {
    let shape = img.shape();
    let offsets = connectivity.offsets(shape)?;
    if !keep(img[seed]) {
        return Ok(Vec::new());
    }
    let mut seen = vec![false; img.len()];
    seen[img.flat_index(seed)] = true;
    let mut queue = VecDeque::from([seed]);
    let mut out = Vec::new();
    while let Some(p) = queue.pop_front() {
        out.push(p);
        for d in &offsets {
            if let Some(q) = offset_point(p, *d, shape) {
                let i = img.flat_index(q);
                if !seen[i] && keep(img.data()[i]) {
                    seen[i] = true;
                    queue.push_back(q);
                }
            }
        }
    }
    Ok(out)
}

pub(crate) fn centroid_of(points: &[Shape]) -> [f64; 3] {
    let mut sums = [0u64; 3];
    for p in points {
        for a in 0..3 {
            sums[a] += p[a] as u64;
        }
    }
    let n = points.len() as f64;
    [sums[0] as f64 / n, sums[1] as f64 / n, sums[2] as f64 / n]
}

/// The component chosen by [`strongest_component_centroid`].
#[derive(Clone, Debug, PartialEq)]
pub struct StrongestComponent {
    pub pair: PersistencePair,
    pub voxel_count: usize,
    pub centroid: [f64; 3],
}

/// Centroid of the component behind the most persistent pair.
///
/// Essential pairs outrank finite ones, then longer lifetimes win, then
/// larger regions, then the lexicographically smaller birth location. A
/// finite pair's region is its component just before it dies: the voxels
/// connected to its birth strictly below (sublevel) or above (superlevel)
/// the death value. An essential pair's region is its component of the
/// image support, the voxels strictly away from the filtration's final
/// value, so a background floor at that value is excluded.
pub fn strongest_component_centroid(
    img: &Grid<f64>,
    filtration: Filtration,
    connectivity: Connectivity,
) -> Result<StrongestComponent> {
    let diagram = persistence_0d(img, filtration, connectivity)?;
    if diagram.pairs.is_empty() {
        return Err(Error::Empty("persistence diagram has no pairs".into()));
    }
    let floor = diagram.capped_death();
    let key = |p: &PersistencePair| (p.is_essential(), if p.is_essential() { 0.0 } else { p.lifetime() });
    let top = diagram
        .pairs
        .iter()
        .map(key)
        .fold((false, f64::NEG_INFINITY), |a, b| if b > a { b } else { a });
    let mut best: Option<StrongestComponent> = None;
    for pair in diagram.pairs.iter().filter(|p| key(p) == top) {
        let level = if pair.is_essential() { floor } else { pair.death };
        let mut region = match filtration {
            Filtration::Sublevel => component_of(img, pair.birth_location, connectivity, |v| v < level)?,
            Filtration::Superlevel => component_of(img, pair.birth_location, connectivity, |v| v > level)?,
        };
        if region.is_empty() {
            region.push(pair.birth_location);
        }
        let candidate = StrongestComponent {
            pair: *pair,
            voxel_count: region.len(),
            centroid: centroid_of(&region),
        };
        let order = |l: Shape| [l[2], l[1], l[0]];
        let replace = best.as_ref().map_or(true, |b| {
            candidate.voxel_count > b.voxel_count
                || (candidate.voxel_count == b.voxel_count
                    && order(pair.birth_location) < order(b.pair.birth_location))
        });
        if replace {
            best = Some(candidate);
        }
    }
    Ok(best.expect("non-empty diagram"))
}
