use nalgebra::Vector3;

/// Front-to-back alpha compositing of `(color, ρ)` pairs over a background:
/// `C = Σ c_i ρ_i Π_{j<i}(1-ρ_j) + bg·Π_i(1-ρ_i)`.
///
/// Splats must already be sorted front to back.
pub fn composite_pixel(splats: &[(Vector3<f64>, f64)], background: &Vector3<f64>) -> Vector3<f64> {
    let mut color = Vector3::zeros();
    let mut transmittance = 1.0;
    for (c, rho) in splats {
        debug_assert!((0.0..1.0).contains(rho), "ρ = {rho} outside [0, 1)");
        color += c * (rho * transmittance);
        transmittance *= 1.0 - rho;
    }
    color + background * transmittance
}

/// Transmittance after each splat, `T_k = Π_{j≤k}(1-ρ_j)`.
pub fn transmittance_trace(rhos: &[f64]) -> Vec<f64> {
    rhos.iter()
        .scan(1.0, |t, rho| {
            *t *= 1.0 - rho;
            Some(*t)
        })
        .collect()
}
