//! Linear deformable vehicle shape model.
//!
//! Training keypoint sets (one per CAD vehicle, all with the same keypoint
//! layout) are stacked into vectors of length `3 * C_K` and decomposed into a
//! mean shape plus an orthonormal eigenbasis of the sample covariance. A
//! shape is synthesised as
//!
//! ```text
//! M(gamma) = mean + sum_s gamma_s * sigma_s * e_s
//! ```
//!
//! with unit-scale coefficients `gamma_s`, the eigen standard deviations
//! `sigma_s` and eigenvectors `e_s`. Per-subcategory mean shapes are encoded
//! as coefficient vectors (modes) fitted by least squares, so a category
//! prior can pull the coefficients towards a subcategory.

mod bundle;
pub mod synthetic;
mod topology;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Point3};

use crate::error::{Error, Result};
use crate::mesh::SurfaceMesh;
use crate::scene::PlaneFrame;
use crate::types::{VehicleState, VehicleType};

pub use topology::Topology;

/// Maximum left/right asymmetry tolerated in training keypoints, in metres.
/// Vehicles are built symmetric; larger violations indicate corrupt data.
pub const SYMMETRY_TOLERANCE_M: f64 = 0.15;

/// Eigenvalues below `max_eigenvalue * RANK_TOLERANCE` count as zero.
const RANK_TOLERANCE: f64 = 1e-10;

/// One training vehicle: a subcategory label and `C_K` keypoints in the body
/// frame (x forward, y left, z up, origin at the footprint centre).
#[derive(Debug, Clone)]
pub struct KeypointSet {
    pub type_label: VehicleType,
    pub points: Vec<Point3<f64>>,
}

impl KeypointSet {
    /// Parses the text record: a type name line, then `C_K` lines of `x y z`.
    pub fn parse(text: &str) -> Result<KeypointSet> {
        let mut lines = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .filter(|l| !l.is_empty());
        let type_label: VehicleType = lines
            .next()
            .ok_or_else(|| Error::format("keypoint record", "empty record"))?
            .parse()?;
        let mut points = Vec::new();
        for line in lines {
            let mut tok = line.split_whitespace();
            let mut next = || -> Result<f64> {
                tok.next()
                    .ok_or_else(|| {
                        Error::format("keypoint record", format!("truncated line `{line}`"))
                    })?
                    .parse()
                    .map_err(|_| {
                        Error::format("keypoint record", format!("bad number in `{line}`"))
                    })
            };
            points.push(Point3::new(next()?, next()?, next()?));
        }
        if points.is_empty() {
            return Err(Error::format("keypoint record", "record has no keypoints"));
        }
        Ok(KeypointSet { type_label, points })
    }

    pub fn serialize(&self) -> String {
        let mut out = String::new();
        out.push_str(self.type_label.name());
        out.push('\n');
        for p in &self.points {
            let _ = writeln!(out, "{:.9} {:.9} {:.9}", p.x, p.y, p.z);
        }
        out
    }

    pub fn read(path: &Path) -> Result<KeypointSet> {
        KeypointSet::parse(&fs::read_to_string(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.serialize())?;
        Ok(())
    }

    /// Stacks the keypoints into a `3 * C_K` coordinate vector.
    pub fn to_vector(&self) -> DVector<f64> {
        points_to_vector(&self.points)
    }
}

pub fn points_to_vector(points: &[Point3<f64>]) -> DVector<f64> {
    let mut v = DVector::zeros(points.len() * 3);
    for (i, p) in points.iter().enumerate() {
        v[3 * i] = p.x;
        v[3 * i + 1] = p.y;
        v[3 * i + 2] = p.z;
    }
    v
}

pub fn vector_to_points(v: &DVector<f64>) -> Vec<Point3<f64>> {
    (0..v.len() / 3)
        .map(|i| Point3::new(v[3 * i], v[3 * i + 1], v[3 * i + 2]))
        .collect()
}

/// Learned deformable model: mean shape, eigenbasis, per-type modes and the
/// keypoint topology.
#[derive(Debug, Clone)]
pub struct DeformableVehicleModel {
    pub keypoint_count: usize,
    /// Mean shape, `3 * C_K` stacked coordinates.
    pub mean: DVector<f64>,
    /// Orthonormal eigenvectors as columns, sorted by descending eigenvalue.
    /// Only components with strictly positive eigenvalue are stored.
    pub eigenvectors: DMatrix<f64>,
    /// Standard deviations (square roots of the covariance eigenvalues).
    pub eigen_sdevs: DVector<f64>,
    /// Number of leading components active for deformation.
    pub n_active: usize,
    /// Per-type coefficient vectors over the full stored basis.
    pub modes: BTreeMap<VehicleType, DVector<f64>>,
    pub topology: Topology,
}

/// Least squares fit of one subcategory mean in the active shape basis.
#[derive(Debug, Clone)]
pub struct ModeFit {
    pub gamma: Vec<f64>,
    /// `type_mean - synthesize(gamma)`, stacked coordinates.
    pub residual: DVector<f64>,
    pub residual_rms: f64,
}

impl DeformableVehicleModel {
    pub fn n_components(&self) -> usize {
        self.eigen_sdevs.len()
    }

    /// Mean shape as points in the body frame.
    pub fn mean_points(&self) -> Vec<Point3<f64>> {
        vector_to_points(&self.mean)
    }

    /// Synthesises keypoints for shape coefficients over the active
    /// components. `gamma` may be shorter than `n_active`; missing entries
    /// are zero. Longer inputs are rejected.
    pub fn synthesize(&self, gamma: &[f64]) -> Result<Vec<Point3<f64>>> {
        if gamma.len() > self.n_active {
            return Err(Error::InvalidConfig(format!(
                "{} shape coefficients given, model has {} active components",
                gamma.len(),
                self.n_active
            )));
        }
        Ok(vector_to_points(&self.synthesize_vector(gamma)))
    }

    pub(crate) fn synthesize_vector(&self, gamma: &[f64]) -> DVector<f64> {
        let mut v = self.mean.clone();
        for (s, &g) in gamma.iter().enumerate() {
            v.axpy(g * self.eigen_sdevs[s], &self.eigenvectors.column(s).into_owned(), 1.0);
        }
        v
    }

    /// Reconstruction of a coordinate vector from its first `k` coefficients.
    pub fn reconstruct(&self, coeffs: &DVector<f64>, k: usize) -> DVector<f64> {
        let k = k.min(coeffs.len()).min(self.n_components());
        let mut v = self.mean.clone();
        for s in 0..k {
            v.axpy(
                coeffs[s] * self.eigen_sdevs[s],
                &self.eigenvectors.column(s).into_owned(),
                1.0,
            );
        }
        v
    }

    /// Coefficients of a subcategory mean over the full stored basis.
    pub fn mode(&self, t: VehicleType) -> Option<&DVector<f64>> {
        self.modes.get(&t)
    }

    /// Active-length shape coefficients of a subcategory mean.
    pub fn mode_gamma(&self, t: VehicleType) -> Option<Vec<f64>> {
        self.modes
            .get(&t)
            .map(|m| m.iter().take(self.n_active).copied().collect())
    }

    /// Body-frame surface mesh at the given shape coefficients.
    pub fn surface_mesh(&self, gamma: &[f64]) -> Result<SurfaceMesh> {
        Ok(SurfaceMesh::new(
            self.synthesize(gamma)?,
            self.topology.mesh.clone(),
        ))
    }

    /// Axis-aligned body-frame extents (length, width, height) at `gamma`.
    pub fn dimensions(&self, gamma: &[f64]) -> Result<[f64; 3]> {
        let pts = self.synthesize(gamma)?;
        let mut min = [f64::INFINITY; 3];
        let mut max = [f64::NEG_INFINITY; 3];
        for p in &pts {
            for a in 0..3 {
                min[a] = min[a].min(p.coords[a]);
                max[a] = max[a].max(p.coords[a]);
            }
        }
        Ok([max[0] - min[0], max[1] - min[1], max[2] - min[2]])
    }
}

/// Learns the deformable model from training keypoint sets.
///
/// The eigenbasis comes from the covariance (normalised by the sample count)
/// of the mean-centred coordinate vectors. Exactly `n_keep` components stay
/// active for deformation; all components with positive eigenvalue are
/// stored. Eigenvector signs are fixed by making each vector's
/// largest-magnitude entry positive.
pub fn learn_asm(
    samples: &[KeypointSet],
    n_keep: usize,
    topology: Topology,
) -> Result<DeformableVehicleModel> {
    topology.validate()?;
    if samples.is_empty() {
        return Err(Error::DegenerateTrainingSet("no training samples".into()));
    }
    let c_k = topology.keypoint_count;
    let mut per_type: BTreeMap<VehicleType, usize> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        if s.points.len() != c_k {
            return Err(Error::KeypointCountMismatch {
                expected: c_k,
                got: s.points.len(),
            });
        }
        check_symmetry(i, s, &topology)?;
        *per_type.entry(s.type_label).or_insert(0) += 1;
    }
    for (t, n) in &per_type {
        if *n < 2 {
            return Err(Error::DegenerateTrainingSet(format!(
                "type {t} has {n} sample(s), need at least 2"
            )));
        }
    }

    let n = samples.len();
    let dim = 3 * c_k;
    let mut data = DMatrix::zeros(dim, n);
    for (j, s) in samples.iter().enumerate() {
        data.set_column(j, &s.to_vector());
    }
    let mean = DVector::from_fn(dim, |i, _| data.row(i).sum() / n as f64);
    for mut col in data.column_iter_mut() {
        col -= &mean;
    }
    // Thin SVD of the centred data scaled by 1/sqrt(N) gives the covariance
    // eigenbasis directly: singular values are the eigen standard deviations.
    data.scale_mut(1.0 / (n as f64).sqrt());
    let svd = data.svd(true, false);
    let u = svd.u.as_ref().expect("svd requested u");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let max_sv = order
        .first()
        .map(|&i| svd.singular_values[i])
        .unwrap_or(0.0);
    let tol = max_sv * RANK_TOLERANCE.sqrt();
    let kept: Vec<usize> = order
        .into_iter()
        .filter(|&i| svd.singular_values[i] > tol)
        .collect();
    if kept.len() < n_keep {
        return Err(Error::DegenerateTrainingSet(format!(
            "{} positive-variance components, {} requested",
            kept.len(),
            n_keep
        )));
    }

    let n_all = kept.len();
    let mut eigenvectors = DMatrix::zeros(dim, n_all);
    let mut eigen_sdevs = DVector::zeros(n_all);
    for (s, &i) in kept.iter().enumerate() {
        let mut col = u.column(i).into_owned();
        fix_sign(&mut col);
        eigenvectors.set_column(s, &col);
        eigen_sdevs[s] = svd.singular_values[i];
    }

    let mut model = DeformableVehicleModel {
        keypoint_count: c_k,
        mean,
        eigenvectors,
        eigen_sdevs,
        n_active: n_keep,
        modes: BTreeMap::new(),
        topology,
    };

    // Full-length per-type coefficients: with an orthonormal basis the least
    // squares solution is the per-component projection, so truncating these
    // to `n_active` reproduces `learn_modes`.
    for &t in per_type.keys() {
        let type_mean = type_mean(samples, t, dim);
        let centred = &type_mean - &model.mean;
        let mut coeffs = DVector::zeros(n_all);
        for s in 0..n_all {
            coeffs[s] = model.eigenvectors.column(s).dot(&centred) / model.eigen_sdevs[s];
        }
        model.modes.insert(t, coeffs);
    }
    Ok(model)
}

fn check_symmetry(sample_idx: usize, s: &KeypointSet, topology: &Topology) -> Result<()> {
    for p in &topology.mirror_pairs {
        let a = s.points[p[0] as usize];
        let b = s.points[p[1] as usize];
        let mirrored = Point3::new(b.x, -b.y, b.z);
        let d = (a - mirrored).norm();
        if d > SYMMETRY_TOLERANCE_M {
            return Err(Error::DegenerateTrainingSet(format!(
                "sample {sample_idx}: keypoints {} and {} violate mirror symmetry by {d:.3} m",
                p[0], p[1]
            )));
        }
    }
    Ok(())
}

fn fix_sign(col: &mut DVector<f64>) {
    let mut max_abs = 0.0;
    let mut max_idx = 0;
    for (i, &v) in col.iter().enumerate() {
        if v.abs() > max_abs {
            max_abs = v.abs();
            max_idx = i;
        }
    }
    if col[max_idx] < 0.0 {
        col.neg_mut();
    }
}

fn type_mean(samples: &[KeypointSet], t: VehicleType, dim: usize) -> DVector<f64> {
    let mut acc = DVector::zeros(dim);
    let mut count = 0.0;
    for s in samples.iter().filter(|s| s.type_label == t) {
        acc += s.to_vector();
        count += 1.0;
    }
    acc / count
}

/// Fits per-subcategory coefficients by least squares in the active basis.
///
/// For each represented type the normal equations
/// `(A^T A) gamma = A^T (type_mean - mean)` are solved, where column `s` of
/// `A` is `sigma_s * e_s`. The residual is what the active components cannot
/// explain of the type mean.
pub fn learn_modes(
    model: &DeformableVehicleModel,
    samples: &[KeypointSet],
) -> Result<BTreeMap<VehicleType, ModeFit>> {
    let dim = 3 * model.keypoint_count;
    for s in samples {
        if s.points.len() != model.keypoint_count {
            return Err(Error::KeypointCountMismatch {
                expected: model.keypoint_count,
                got: s.points.len(),
            });
        }
    }
    let n_s = model.n_active;
    let mut a = DMatrix::zeros(dim, n_s);
    for s in 0..n_s {
        a.set_column(s, &(model.eigenvectors.column(s) * model.eigen_sdevs[s]));
    }
    let ata = a.transpose() * &a;
    let chol = ata
        .clone()
        .cholesky()
        .ok_or(Error::RankDeficient)?;

    let mut out = BTreeMap::new();
    let mut types: Vec<VehicleType> = samples.iter().map(|s| s.type_label).collect();
    types.sort();
    types.dedup();
    for t in types {
        let tm = type_mean(samples, t, dim);
        let centred = &tm - &model.mean;
        let rhs = a.transpose() * &centred;
        let gamma_v = chol.solve(&rhs);
        let synth = &model.mean + &a * &gamma_v;
        let residual = &tm - &synth;
        let residual_rms = (residual.norm_squared() / model.keypoint_count as f64).sqrt();
        out.insert(
            t,
            ModeFit {
                gamma: gamma_v.iter().copied().collect(),
                residual,
                residual_rms,
            },
        );
    }
    Ok(out)
}

/// Rigidly places body-frame points on the ground plane: rotation by the
/// heading around the plane normal, in-plane translation, then the plane
/// frame transform into camera coordinates.
pub fn place(
    points: &[Point3<f64>],
    state: &VehicleState,
    frame: &PlaneFrame,
) -> Vec<Point3<f64>> {
    let (sin_t, cos_t) = state.theta_deg.to_radians().sin_cos();
    points
        .iter()
        .map(|p| {
            let x = cos_t * p.x - sin_t * p.y + state.t.x;
            let y = sin_t * p.x + cos_t * p.y + state.t.y;
            frame.to_camera(x, y, p.z)
        })
        .collect()
}
