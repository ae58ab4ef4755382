use nalgebra::{Matrix3, Vector3};

/// One splat. Scale and opacity are stored unconstrained (log and logit).
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPoint {
    pub position: Vector3<f64>,
    pub log_scale: Vector3<f64>,
    /// Unit quaternion, `[w, x, y, z]`.
    pub rotation: [f64; 4],
    pub opacity_logit: f64,
    /// Linear RGB in `[0, 1]`.
    pub color: Vector3<f64>,
}

/// Constrained parameters of a [`GaussianPoint`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Activated {
    pub scale: Vector3<f64>,
    pub opacity: f64,
    pub rotation: Matrix3<f64>,
    pub covariance: Matrix3<f64>,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

impl GaussianPoint {
    pub const IDENTITY_ROTATION: [f64; 4] = [1.0, 0.0, 0.0, 0.0];

    pub fn new(
        position: Vector3<f64>,
        scale: Vector3<f64>,
        rotation: [f64; 4],
        opacity: f64,
        color: Vector3<f64>,
    ) -> Self {
        let mut point = GaussianPoint {
            position,
            log_scale: scale.map(f64::ln),
            rotation,
            opacity_logit: logit(opacity),
            color,
        };
        point.normalize_rotation();
        point
    }

    pub(crate) fn check_finite(&self) -> Result<(), String> {
        let fields: [(&str, &[f64]); 5] = [
            ("position", self.position.as_slice()),
            ("log_scale", self.log_scale.as_slice()),
            ("rotation", &self.rotation),
            ("opacity_logit", std::slice::from_ref(&self.opacity_logit)),
            ("color", self.color.as_slice()),
        ];
        for (name, values) in fields {
            if values.iter().any(|v| !v.is_finite()) {
                return Err(format!("non-finite {name}"));
            }
        }
        if quat_norm(&self.rotation) == 0.0 {
            return Err("zero-length rotation quaternion".into());
        }
        Ok(())
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        quat_to_matrix(&self.rotation)
    }

    /// Scale, opacity, rotation and covariance `R diag(s²) Rᵀ`.
    pub fn activate(&self) -> crate::Result<Activated> {
        self.check_finite()
            .map_err(crate::Error::ParameterCorruption)?;
        let scale = self.log_scale.map(f64::exp);
        let rotation = self.rotation_matrix();
        let m = rotation * Matrix3::from_diagonal(&scale);
        Ok(Activated {
            scale,
            opacity: sigmoid(self.opacity_logit),
            rotation,
            covariance: m * m.transpose(),
        })
    }

    pub fn normalize_rotation(&mut self) {
        let n = quat_norm(&self.rotation);
        if n > 0.0 && (n - 1.0).abs() > 1e-12 {
            for c in &mut self.rotation {
                *c /= n;
            }
        }
    }

    /// Right-multiplies the rotation by `exp(delta)` (axis-angle) and renormalizes.
    ///
    /// This is the retraction matching the tangent-space rotation gradient.
    pub fn apply_rotation_delta(&mut self, delta: &Vector3<f64>) {
        let dq = axis_angle_quat(delta);
        self.rotation = quat_mul(&self.rotation, &dq);
        let n = quat_norm(&self.rotation);
        for c in &mut self.rotation {
            *c /= n;
        }
    }
}

fn quat_norm(q: &[f64; 4]) -> f64 {
    q.iter().map(|c| c * c).sum::<f64>().sqrt()
}

pub(crate) fn quat_mul(a: &[f64; 4], b: &[f64; 4]) -> [f64; 4] {
    let [aw, ax, ay, az] = *a;
    let [bw, bx, by, bz] = *b;
    [
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ]
}

pub(crate) fn axis_angle_quat(v: &Vector3<f64>) -> [f64; 4] {
    let theta = v.norm();
    if theta < 1e-12 {
        // second-order accurate for tiny angles
        let q = [1.0, 0.5 * v.x, 0.5 * v.y, 0.5 * v.z];
        let n = quat_norm(&q);
        return q.map(|c| c / n);
    }
    let (s, c) = (0.5 * theta).sin_cos();
    let k = s / theta;
    [c, k * v.x, k * v.y, k * v.z]
}

/// Rotation matrix of a quaternion `[w, x, y, z]`; the input is normalized first.
pub(crate) fn quat_to_matrix(q: &[f64; 4]) -> Matrix3<f64> {
    let n = quat_norm(q);
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}
