//! Pinhole camera model, rigid poses and the view-aligned token remap.
//!
//! Camera frame: x right, y down, z forward. A [`PoseSE3`] maps camera-frame
//! points into the world frame (`p_world = R * p_cam + t`). The relative
//! transform from frame `t` into frame `t-1` is therefore
//! `prev.inverse().compose(&cur)`.

use nalgebra::{Matrix3, Point2, Point3, Rotation3, Vector3};
use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gating::cosine_slices;

/// Points closer than this to the image plane are treated as behind the camera.
pub const Z_NEAR: f64 = 1e-4;

/// Cosine values closer than this are considered tied during neighborhood refinement.
const COSINE_TIE: f64 = 1e-12;

const ORTHONORMAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub patch: u32,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32, patch: u32) -> Result<Self> {
        let k = Self { fx, fy, cx, cy, width, height, patch };
        k.validate()?;
        Ok(k)
    }

    /// Square-pixel camera with the principal point at the image center and
    /// the given horizontal field of view.
    pub fn from_hfov(width: u32, height: u32, patch: u32, hfov_deg: f64) -> Result<Self> {
        if !(hfov_deg > 0.0 && hfov_deg < 180.0) {
            return Err(Error::InvalidIntrinsics(format!(
                "horizontal field of view {hfov_deg} must lie in (0, 180) degrees"
            )));
        }
        let f = 0.5 * width as f64 / (0.5 * hfov_deg.to_radians()).tan();
        Self::new(f, f, 0.5 * width as f64, 0.5 * height as f64, width, height, patch)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fx.is_finite() && self.fy > 0.0 && self.fy.is_finite()) {
            return Err(Error::InvalidIntrinsics(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(Error::InvalidIntrinsics("principal point must be finite".into()));
        }
        if self.patch == 0 || self.width == 0 || self.height == 0 {
            return Err(Error::InvalidIntrinsics("image and patch sizes must be nonzero".into()));
        }
        if self.width % self.patch != 0 || self.height % self.patch != 0 {
            return Err(Error::InvalidIntrinsics(format!(
                "image {}x{} is not divisible by patch {}",
                self.width, self.height, self.patch
            )));
        }
        Ok(())
    }

    pub fn grid(&self) -> TokenGrid {
        TokenGrid {
            rows: (self.height / self.patch) as usize,
            cols: (self.width / self.patch) as usize,
            patch: self.patch as f64,
        }
    }

    pub fn contains(&self, u: &Point2<f64>) -> bool {
        u.x >= 0.0 && u.x < self.width as f64 && u.y >= 0.0 && u.y < self.height as f64
    }
}

/// Row-major patch grid over the image. Token `i` sits at `(i / cols, i % cols)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TokenGrid {
    pub rows: usize,
    pub cols: usize,
    pub patch: f64,
}

impl TokenGrid {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row_col(&self, index: usize) -> (usize, usize) {
        (index / self.cols, index % self.cols)
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.cols + col
    }

    pub fn center(&self, index: usize) -> Point2<f64> {
        let (row, col) = self.row_col(index);
        Point2::new((col as f64 + 0.5) * self.patch, (row as f64 + 0.5) * self.patch)
    }

    pub fn centers(&self) -> Vec<Point2<f64>> {
        (0..self.len()).map(|i| self.center(i)).collect()
    }

    /// Patch containing a continuous pixel coordinate, if it lies on the image.
    pub fn patch_at(&self, u: &Point2<f64>) -> Option<usize> {
        if u.x < 0.0 || u.y < 0.0 {
            return None;
        }
        let col = (u.x / self.patch).floor() as usize;
        let row = (u.y / self.patch).floor() as usize;
        (row < self.rows && col < self.cols).then(|| self.index(row, col))
    }
}

/// Rigid transform in SE(3).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseSE3 {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl PoseSE3 {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let gram = rotation.transpose() * rotation;
        let ortho_err = (gram - Matrix3::identity()).abs().max();
        if !(ortho_err <= ORTHONORMAL_TOL) {
            return Err(Error::InvalidPose(format!("rotation is not orthonormal (error {ortho_err:e})")));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(Error::InvalidPose(format!("rotation determinant {det} is not +1")));
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidPose("translation must be finite".into()));
        }
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    /// Rotation by `yaw` radians about the vertical (y) axis, then translation.
    pub fn from_yaw(yaw: f64, translation: Vector3<f64>) -> Self {
        let rotation = Rotation3::from_axis_angle(&Vector3::y_axis(), yaw).into_inner();
        Self { rotation, translation }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &PoseSE3) -> PoseSE3 {
        PoseSE3 {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> PoseSE3 {
        let rt = self.rotation.transpose();
        PoseSE3 { rotation: rt, translation: -(rt * self.translation) }
    }

    pub fn transform(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// Transform taking points from the camera frame of `current` into the
    /// camera frame of `previous`.
    pub fn relative(previous: &PoseSE3, current: &PoseSE3) -> PoseSE3 {
        previous.inverse().compose(current)
    }

    pub fn max_abs_diff(&self, other: &PoseSE3) -> f64 {
        let r = (self.rotation - other.rotation).abs().max();
        let t = (self.translation - other.translation).abs().max();
        r.max(t)
    }
}

pub fn back_project(u: &Point2<f64>, depth: f64, k: &Intrinsics) -> Result<Point3<f64>> {
    if !(depth > 0.0 && depth.is_finite()) {
        return Err(Error::InvalidDepth(depth));
    }
    Ok(Point3::new((u.x - k.cx) * depth / k.fx, (u.y - k.cy) * depth / k.fy, depth))
}

/// Continuous (unrounded) image coordinate of a camera-frame point.
pub fn project(p: &Point3<f64>, k: &Intrinsics) -> Result<Point2<f64>> {
    if !(p.z > Z_NEAR) {
        return Err(Error::Behind(p.z));
    }
    Ok(Point2::new(k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RemapResult {
    Aligned(usize),
    OutOfView,
}

impl RemapResult {
    pub fn index(self) -> Option<usize> {
        match self {
            RemapResult::Aligned(j) => Some(j),
            RemapResult::OutOfView => None,
        }
    }

    pub fn is_in_view(self) -> bool {
        matches!(self, RemapResult::Aligned(_))
    }
}

/// Search radius in patches for a window of side `k_window` patches.
///
/// `k_window` of 0 or 1 means no search (rounded patch only); 3 gives the 3x3 window.
pub fn window_radius(k_window: usize) -> usize {
    k_window.saturating_sub(1) / 2
}

/// View-aligned remapper for one camera and token grid.
#[derive(Debug, Clone, Copy)]
pub struct Remapper {
    pub intrinsics: Intrinsics,
    pub grid: TokenGrid,
    pub k_window: usize,
    pub epsilon: f64,
}

impl Remapper {
    pub fn new(intrinsics: Intrinsics, k_window: usize, epsilon: f64) -> Self {
        Self { intrinsics, grid: intrinsics.grid(), k_window, epsilon }
    }

    /// Continuous coordinate of token `index` reprojected into the previous frame.
    pub fn reproject(&self, index: usize, depth: f64, rel: &PoseSE3) -> Option<Point2<f64>> {
        let center = self.grid.center(index);
        let p = back_project(&center, depth, &self.intrinsics).ok()?;
        project(&rel.transform(&p), &self.intrinsics).ok()
    }

    /// Remap of token `index`, refined over the neighborhood window by feature cosine.
    pub fn remap_token(
        &self,
        index: usize,
        depth: &[f64],
        rel: &PoseSE3,
        current: ArrayView2<'_, f64>,
        previous: ArrayView2<'_, f64>,
    ) -> RemapResult {
        let Some(u) = self.reproject(index, depth[index], rel) else {
            return RemapResult::OutOfView;
        };
        let Some(rounded) = self.grid.patch_at(&u) else {
            return RemapResult::OutOfView;
        };
        let radius = window_radius(self.k_window);
        if radius == 0 {
            return RemapResult::Aligned(rounded);
        }

        let feature = current.row(index);
        let feature = feature.as_slice().expect("row-major feature grid");
        let (row0, col0) = self.grid.row_col(rounded);
        let mut best: Option<(f64, f64, usize)> = None;
        for row in row0.saturating_sub(radius)..=(row0 + radius).min(self.grid.rows - 1) {
            for col in col0.saturating_sub(radius)..=(col0 + radius).min(self.grid.cols - 1) {
                let j = self.grid.index(row, col);
                let cand = previous.row(j);
                let sim = cosine_slices(feature, cand.as_slice().expect("row-major feature grid"), self.epsilon);
                let dist = (self.grid.center(j) - u).norm();
                let better = match best {
                    None => true,
                    Some((bs, bd, bj)) => {
                        if sim > bs + COSINE_TIE {
                            true
                        } else if sim < bs - COSINE_TIE {
                            false
                        } else {
                            dist < bd || (dist == bd && j < bj)
                        }
                    }
                };
                if better {
                    best = Some((sim, dist, j));
                }
            }
        }
        RemapResult::Aligned(best.map(|(_, _, j)| j).unwrap_or(rounded))
    }

    pub fn remap_all(
        &self,
        depth: &[f64],
        rel: &PoseSE3,
        current: ArrayView2<'_, f64>,
        previous: ArrayView2<'_, f64>,
    ) -> Vec<RemapResult> {
        (0..self.grid.len())
            .map(|i| self.remap_token(i, depth, rel, current, previous))
            .collect()
    }
}
