//! Geometry-only quantities of a patch, computed once and reused by every forward pass.

use std::rc::Rc;

use nalgebra::{Matrix3, SymmetricEigen};

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::patch::{dist2, knn, knn_self, Point3};
use crate::tensor::{Real, Tensor};

/// Width of the raw position-encoder input: six concatenated 3-vectors.
pub const GSCE_INPUT_DIM: usize = 18;

const WEIGHT_EPS: f64 = 1e-8;

/// `[p_i, p_ik, p'_ik, p_i - p_ik, p_i - p'_ik, p_i + p_ik - p'_ik]`
pub fn gsce_input(p_i: &Point3, p_ik: &Point3, p_exp: &Point3) -> [f64; GSCE_INPUT_DIM] {
    let mut out = [0.0; GSCE_INPUT_DIM];
    for c in 0..3 {
        out[c] = p_i[c];
        out[3 + c] = p_ik[c];
        out[6 + c] = p_exp[c];
        out[9 + c] = p_i[c] - p_ik[c];
        out[12 + c] = p_i[c] - p_exp[c];
        out[15 + c] = p_i[c] + p_ik[c] - p_exp[c];
    }
    out
}

/// Unit normal of a neighbourhood: eigenvector of the smallest covariance
/// eigenvalue, flipped into the `z >= 0` half-space. Returns `+z` when the
/// points have no spread.
pub fn plane_normal(points: &[Point3]) -> Point3 {
    let n = points.len() as f64;
    let mut mean = [0.0; 3];
    for p in points {
        for c in 0..3 {
            mean[c] += p[c] / n;
        }
    }
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = nalgebra::Vector3::new(p[0] - mean[0], p[1] - mean[1], p[2] - mean[2]);
        cov += d * d.transpose();
    }
    cov /= n;
    if cov.trace() <= f64::MIN_POSITIVE {
        return [0.0, 0.0, 1.0];
    }
    let eig = SymmetricEigen::new(cov);
    let mut best = 0;
    for i in 1..3 {
        if eig.eigenvalues[i] < eig.eigenvalues[best] {
            best = i;
        }
    }
    let v = eig.eigenvectors.column(best);
    let mut normal = [v[0], v[1], v[2]];
    let len = (normal[0] * normal[0] + normal[1] * normal[1] + normal[2] * normal[2]).sqrt();
    if !(len > 0.0) || !len.is_finite() {
        return [0.0, 0.0, 1.0];
    }
    normal = normal.map(|x| x / len);
    // First non-zero of z, y, x decides the sign.
    let sign = [normal[2], normal[1], normal[0]].into_iter().find(|&c| c != 0.0).unwrap_or(1.0);
    if sign < 0.0 {
        normal = normal.map(|x| -x);
    }
    normal
}

/// Per-point normals from each point's `k` nearest neighbours (itself included).
pub fn estimate_normals(points: &[Point3], k: usize) -> Result<Vec<Point3>> {
    let rows = knn_self(points, k)?;
    Ok(rows
        .iter()
        .map(|row| {
            let nb: Vec<Point3> = row.iter().map(|&j| points[j]).collect();
            plane_normal(&nb)
        })
        .collect())
}

/// Normalised inverse-distance weights of `neighbors` around `center`.
pub fn inverse_distance_weights(center: &Point3, neighbors: &[Point3]) -> Vec<f64> {
    let inv: Vec<f64> = neighbors.iter().map(|q| 1.0 / (dist2(center, q).sqrt() + WEIGHT_EPS)).collect();
    let total: f64 = inv.iter().sum();
    inv.into_iter().map(|w| w / total).collect()
}

/// Centre on the centroid and scale the farthest point to unit distance.
pub fn normalize_geometry(points: &[Point3]) -> (Point3, f64) {
    let n = points.len() as f64;
    let mut c = [0.0; 3];
    for p in points {
        for i in 0..3 {
            c[i] += p[i] / n;
        }
    }
    let r = points.iter().map(|p| dist2(p, &c)).fold(0.0, f64::max).sqrt();
    (c, if r > 0.0 { r } else { 1.0 })
}

fn flat(rows: &[Vec<usize>]) -> Rc<Vec<usize>> {
    Rc::new(rows.iter().flatten().copied().collect())
}

/// Everything the generator needs from a patch's geometry.
pub struct PatchContext<T: Real> {
    pub n: usize,
    pub k: usize,
    /// `n * k` row indices, each point's neighbourhood starting with itself.
    pub knn: Rc<Vec<usize>>,
    /// Neighbours used by feature refinement (self excluded), `fr_k` per point.
    pub fr_knn: Rc<Vec<usize>>,
    pub fr_k: usize,
    /// `[n * fr_k, 1]`
    pub fr_weights: Var<T>,
    /// `[n, 3]`
    pub normals: Var<T>,
    /// `[n * k, 18]`, present only when the grouped neighbourhood was supplied.
    pub gsce: Option<Var<T>>,
}

impl<T: Real> PatchContext<T> {
    /// `geometry` is the patch; `expanded` is the patch followed by its grouped
    /// neighbours (see `GroupedPatch::expanded_geometry`).
    pub fn new(geometry: &[Point3], expanded: Option<&[Point3]>, k: usize) -> Result<Self> {
        let n = geometry.len();
        if k < 2 {
            return Err(Error::Argument(format!("k must be >= 2 (got {k})")));
        }
        if k > n {
            return Err(Error::Argument(format!("k = {k} exceeds patch size {n}")));
        }
        let (centroid, scale) = normalize_geometry(geometry);
        let norm = |p: &Point3| [0, 1, 2].map(|c| (p[c] - centroid[c]) / scale);
        let g: Vec<Point3> = geometry.iter().map(norm).collect();

        let rows = knn_self(&g, k)?;
        let fr_k = k.min(n - 1).max(1);
        let mut fr_rows = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n * fr_k);
        for (i, row) in knn_self(&g, (fr_k + 1).min(n))?.into_iter().enumerate() {
            let mut others: Vec<usize> = row.into_iter().skip(1).collect();
            if others.is_empty() {
                others.push(i);
            }
            let pts: Vec<Point3> = others.iter().map(|&j| g[j]).collect();
            weights.extend(inverse_distance_weights(&g[i], &pts));
            fr_rows.push(others);
        }
        let normals: Vec<f64> = rows
            .iter()
            .flat_map(|row| {
                let nb: Vec<Point3> = row.iter().map(|&j| g[j]).collect();
                plane_normal(&nb)
            })
            .collect();

        let gsce = match expanded {
            None => None,
            Some(exp) => {
                if exp.len() < k {
                    return Err(Error::Argument(format!("expanded patch has {} points, k = {k}", exp.len())));
                }
                let e: Vec<Point3> = exp.iter().map(norm).collect();
                let exp_rows = knn(&g, &e, k)?;
                let mut raw = Vec::with_capacity(n * k * GSCE_INPUT_DIM);
                for i in 0..n {
                    for j in 0..k {
                        raw.extend(gsce_input(&g[i], &g[rows[i][j]], &e[exp_rows[i][j]]));
                    }
                }
                Some(Var::constant(Tensor::from_f64(n * k, GSCE_INPUT_DIM, &raw)))
            }
        };

        Ok(Self {
            n,
            k,
            knn: flat(&rows),
            fr_knn: flat(&fr_rows),
            fr_k,
            fr_weights: Var::constant(Tensor::from_f64(n * fr_k, 1, &weights)),
            normals: Var::constant(Tensor::from_f64(n, 3, &normals)),
            gsce,
        })
    }
}
