//! Overlapping patch extraction (FPS seeds + KNN), patch grouping and fusion.

mod archive;
mod knn;

pub use archive::{read_archive, write_archive, PatchArchive, ARCHIVE_VERSION};
pub use knn::{dist2, farthest_point_sampling, knn, knn_self, KdTree, Point3};
pub(crate) use knn::put_first;

use crate::error::{Error, Result};
use crate::pointcloud::PointCloud;

/// `n` points of a parent cloud gathered around one FPS seed.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    /// Source index of every patch point; `indices[0] == seed_index`.
    pub indices: Vec<usize>,
    pub seed_index: usize,
    pub geometry: Vec<Point3>,
    pub attributes: Vec<[f64; 3]>,
}

impl Patch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn seed_point(&self) -> Point3 {
        self.geometry[0]
    }

    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.attributes.iter().map(|a| a[c]).collect()
    }

    /// The `n x 6` row view: geometry followed by attributes.
    pub fn points(&self) -> Vec<[f64; 6]> {
        self.geometry
            .iter()
            .zip(&self.attributes)
            .map(|(g, a)| [g[0], g[1], g[2], a[0], a[1], a[2]])
            .collect()
    }
}

/// A patch plus the `num_nei` patches whose seeds lie closest to its own seed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupedPatch {
    pub center: usize,
    /// Patch indices ordered by seed distance, ties by index.
    pub neighbors: Vec<usize>,
}

impl GroupedPatch {
    /// Geometry of the expanded patch: center first, then each neighbor in order.
    pub fn expanded_geometry(&self, patches: &[Patch]) -> Vec<Point3> {
        std::iter::once(self.center)
            .chain(self.neighbors.iter().copied())
            .flat_map(|p| patches[p].geometry.iter().copied())
            .collect()
    }

    /// Number of patches in the expanded set (`num_nei + 1`).
    pub fn expanded_len(&self) -> usize {
        self.neighbors.len() + 1
    }
}

/// `n = floor(N * ol / m)`.
pub fn patch_size(num_points: usize, m: usize, ol: f64) -> usize {
    if m == 0 {
        return 0;
    }
    (num_points as f64 * ol / m as f64).floor() as usize
}

/// Number of seeds giving patches of at most `n` points: `ceil(N * ol / n)`.
pub fn seeds_for_patch_size(num_points: usize, n: usize, ol: f64) -> usize {
    if n == 0 {
        return 0;
    }
    ((num_points as f64 * ol / n as f64).ceil() as usize).clamp(1, num_points)
}

/// Split a cloud into `m` patches of `n = floor(N * ol / m)` points each.
///
/// Patch `i` holds FPS seed `i` followed by its `n - 1` nearest neighbours in
/// the whole cloud. Points may be covered several times or not at all.
pub fn generate_patches(pc: &PointCloud, m: usize, ol: f64) -> Result<Vec<Patch>> {
    if !(ol > 0.0) {
        return Err(Error::Argument(format!("overlap ratio must be positive (ol = {ol})")));
    }
    let n = patch_size(pc.len(), m, ol);
    if n == 0 {
        return Err(Error::Argument(format!("patch size N*ol/m rounds to 0 (N = {}, m = {m}, ol = {ol})", pc.len())));
    }
    if n > pc.len() {
        return Err(Error::Argument(format!("patch size {n} exceeds cloud size {}", pc.len())));
    }
    let geometry = pc.geometry();
    let seeds = farthest_point_sampling(geometry, m)?;
    let seed_points: Vec<Point3> = seeds.iter().map(|&s| geometry[s]).collect();
    let rows = knn(&seed_points, geometry, n)?;
    Ok(seeds
        .iter()
        .zip(rows)
        .map(|(&seed, mut indices)| {
            put_first(&mut indices, seed);
            Patch {
                geometry: indices.iter().map(|&i| geometry[i]).collect(),
                attributes: indices.iter().map(|&i| pc.attributes()[i]).collect(),
                indices,
                seed_index: seed,
            }
        })
        .collect())
}

/// For each patch, the `num_nei` patches with the nearest seed points.
pub fn group_patches(patches: &[Patch], num_nei: usize) -> Result<Vec<GroupedPatch>> {
    if num_nei >= patches.len() {
        return Err(Error::Argument(format!(
            "num_nei = {num_nei} must be smaller than the number of patches ({})",
            patches.len()
        )));
    }
    let seeds: Vec<Point3> = patches.iter().map(Patch::seed_point).collect();
    let rows = knn(&seeds, &seeds, num_nei + 1)?;
    Ok(rows
        .into_iter()
        .enumerate()
        .map(|(center, mut row)| {
            put_first(&mut row, center);
            GroupedPatch { center, neighbors: row[1..].to_vec() }
        })
        .collect())
}

/// How many patches cover each of the `num_points` source points.
pub fn coverage(patches: &[Patch], num_points: usize) -> Vec<usize> {
    let mut count = vec![0; num_points];
    for p in patches {
        for &i in &p.indices {
            count[i] += 1;
        }
    }
    count
}

/// Merge per-patch values of one channel back into a full-length channel.
///
/// Points covered by several patches get the mean of their values; uncovered
/// points keep `fallback`. The mean is accumulated as an offset from the
/// fallback value, so points whose patch values all equal the fallback come
/// back bit-identical.
pub fn fuse_patches<'a, I>(enhanced: I, num_points: usize, fallback: &[f64]) -> Result<Vec<f64>>
where
    I: IntoIterator<Item = (&'a [usize], &'a [f64])>,
{
    if fallback.len() != num_points {
        return Err(Error::Argument(format!("fallback has {} values for {num_points} points", fallback.len())));
    }
    let mut offset = vec![0.0; num_points];
    let mut count = vec![0usize; num_points];
    for (indices, values) in enhanced {
        if indices.len() != values.len() {
            return Err(Error::Argument("patch indices and values differ in length".into()));
        }
        for (&i, &v) in indices.iter().zip(values) {
            if i >= num_points {
                return Err(Error::Argument(format!("patch index {i} out of range for {num_points} points")));
            }
            offset[i] += v - fallback[i];
            count[i] += 1;
        }
    }
    Ok(fallback
        .iter()
        .zip(offset.iter().zip(&count))
        .map(|(&f, (&o, &c))| if c == 0 { f } else { f + o / c as f64 })
        .collect())
}
