use log::warn;

use crate::error::{Error, Result};
use crate::patch::{generate_patches, group_patches, seeds_for_patch_size, Point3};
use crate::pointcloud::{Channel, ColorSpace, PointCloud};

/// One distorted patch with its grouped neighbourhood and the matching original values.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub geometry: Vec<Point3>,
    /// Patch geometry followed by the geometry of its grouped neighbour patches.
    pub expanded: Vec<Point3>,
    /// Channel values in code units, `[0, 255]`.
    pub distorted: Vec<f64>,
    pub original: Vec<f64>,
}

/// Patch count and grouping size for a cloud, shrinking `num_nei` when the cloud has too few patches.
pub(crate) fn patch_layout(num_points: usize, patch_size: usize, overlap: f64, num_nei: usize) -> (usize, usize) {
    let m = seeds_for_patch_size(num_points, patch_size, overlap);
    let nei = num_nei.min(m.saturating_sub(1));
    if nei < num_nei {
        warn!("only {m} patches: grouping with {nei} neighbours instead of {num_nei}");
    }
    (m, nei)
}

/// Patchify every `(original, distorted)` pair on the distorted geometry and
/// collect one channel. Both clouds of a pair must share geometry and order.
pub fn build_dataset(
    pairs: &[(PointCloud, PointCloud)],
    channel: Channel,
    patch_size: usize,
    overlap: f64,
    num_nei: usize,
) -> Result<Vec<TrainingSample>> {
    let mut out = Vec::new();
    for (i, (orig, dist)) in pairs.iter().enumerate() {
        if orig.geometry() != dist.geometry() {
            return Err(Error::Argument(format!("pair {i}: original and distorted geometry differ")));
        }
        if orig.color_space() != ColorSpace::YCbCr || dist.color_space() != ColorSpace::YCbCr {
            return Err(Error::State(format!("pair {i}: training expects YCbCr clouds")));
        }
        let (m, nei) = patch_layout(dist.len(), patch_size, overlap, num_nei);
        let patches = generate_patches(dist, m, overlap)?;
        let groups = group_patches(&patches, nei)?;
        let c = channel.index();
        for (p, g) in patches.iter().zip(&groups) {
            out.push(TrainingSample {
                geometry: p.geometry.clone(),
                expanded: g.expanded_geometry(&patches),
                distorted: p.attributes.iter().map(|a| a[c]).collect(),
                original: p.indices.iter().map(|&j| orig.attributes()[j][c]).collect(),
            });
        }
    }
    Ok(out)
}
