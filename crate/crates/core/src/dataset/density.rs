use crate::metrics::{FixationSet, MetricError};
use crate::tensor::Tensor;

/// Sum of one isotropic Gaussian per fixation, normalized to sum 1.
///
/// The Gaussians are separable, so the map is the product of an `H × F`
/// row-profile matrix and an `F × W` column-profile matrix.
pub fn density_from_fixations(
    fix: &FixationSet,
    (width, height): (usize, usize),
    sigma: f64,
) -> Result<Tensor, MetricError> {
    if fix.is_empty() {
        return Err(MetricError::NoFixations);
    }
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(MetricError::InvalidParameter(format!(
            "density sigma must be positive, got {sigma}"
        )));
    }
    fix.check_bounds(width, height)?;
    let n = fix.len();
    let inv = -0.5 / (sigma * sigma);
    let mut gy = vec![0.0f64; height * n];
    let mut gx = vec![0.0f64; n * width];
    for (f, &(fx, fy)) in fix.points.iter().enumerate() {
        for y in 0..height {
            let d = y as f64 - fy as f64;
            gy[y * n + f] = (d * d * inv).exp();
        }
        for x in 0..width {
            let d = x as f64 - fx as f64;
            gx[f * width + x] = (d * d * inv).exp();
        }
    }
    let mut out = vec![0.0f64; height * width];
    // SAFETY: the three buffers have exactly the row-major extents passed
    // as dimensions and strides.
    unsafe {
        matrixmultiply::dgemm(
            height,
            n,
            width,
            1.0,
            gy.as_ptr(),
            n as isize,
            1,
            gx.as_ptr(),
            width as isize,
            1,
            0.0,
            out.as_mut_ptr(),
            width as isize,
            1,
        );
    }
    let total: f64 = out.iter().sum();
    Ok(Tensor::new(
        vec![height, width],
        out.into_iter().map(|v| (v / total) as f32).collect(),
    )?)
}
