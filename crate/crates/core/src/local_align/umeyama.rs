use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{Quaternion, Sim3Transform};

/// Relative threshold on the second singular value of the source scatter
/// below which the configuration counts as collinear.
const RANK_TOL: f64 = 1e-12;

/// Weighted least-squares similarity `dst ~ s R src + t`.
///
/// Minimizes `sum_i w_i |dst_i - s R src_i - t|^2`. The rotation is always
/// proper: if the best orthogonal fit is a reflection, the axis of the
/// smallest singular value is flipped. With `with_scale = false` the scale is
/// fixed to 1.
pub fn weighted_umeyama(
    src: &[Vector3<f64>],
    dst: &[Vector3<f64>],
    weights: &[f64],
    with_scale: bool,
) -> Result<Sim3Transform> {
    if src.len() != dst.len() || src.len() != weights.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} source points, {} target points, {} weights",
            src.len(),
            dst.len(),
            weights.len()
        )));
    }
    if src.len() < 3 {
        return Err(Error::Degenerate(format!("need at least 3 correspondences, got {}", src.len())));
    }
    if let Some(w) = weights.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
        return Err(Error::InvalidValue(format!("weights must be positive, got {w}")));
    }
    let total: f64 = weights.iter().sum();
    let mut mu_s = Vector3::zeros();
    let mut mu_d = Vector3::zeros();
    for ((s, d), w) in src.iter().zip(dst).zip(weights) {
        mu_s += *w * s;
        mu_d += *w * d;
    }
    mu_s /= total;
    mu_d /= total;

    let mut cov = Matrix3::zeros();
    let mut scatter = Matrix3::zeros();
    for ((s, d), w) in src.iter().zip(dst).zip(weights) {
        let ds = s - mu_s;
        cov += *w * (d - mu_d) * ds.transpose();
        scatter += *w * ds * ds.transpose();
    }
    cov /= total;
    scatter /= total;
    let var_s = scatter.trace();

    let mut spread = scatter.symmetric_eigenvalues().as_slice().to_vec();
    spread.sort_by(|a, b| b.total_cmp(a));
    if !(spread[0] > 0.0) || spread[1] <= RANK_TOL * spread[0] {
        return Err(Error::Degenerate("source points are coincident or collinear".into()));
    }

    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.expect("requested U"), svd.v_t.expect("requested V^T"));
    let sv = svd.singular_values;
    let mut sign = Vector3::repeat(1.0);
    if (u * v_t).determinant() < 0.0 {
        sign[sv.imin()] = -1.0;
    }
    let r = u * Matrix3::from_diagonal(&sign) * v_t;
    let scale = if with_scale { sv.component_mul(&sign).sum() / var_s } else { 1.0 };
    if !(scale > 0.0) {
        return Err(Error::Degenerate("non-positive similarity scale".into()));
    }
    let rotation = Quaternion::from_rotation_matrix(&r);
    let translation = mu_d - scale * rotation.rotate(&mu_s);
    Sim3Transform::new(scale, rotation, translation)
}

/// Unweighted convenience wrapper.
pub fn umeyama(src: &[Vector3<f64>], dst: &[Vector3<f64>], with_scale: bool) -> Result<Sim3Transform> {
    weighted_umeyama(src, dst, &vec![1.0; src.len()], with_scale)
}

/// `sum_i w_i |dst_i - T(src_i)|^2`.
pub fn weighted_residual(src: &[Vector3<f64>], dst: &[Vector3<f64>], weights: &[f64], t: &Sim3Transform) -> f64 {
    src.iter().zip(dst).zip(weights).map(|((s, d), w)| w * (d - t.transform_point(s)).norm_squared()).sum()
}
