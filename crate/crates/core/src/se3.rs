//! Rigid motions in twist coordinates.
//!
//! A twist is stored as `[ω; v]`: the first three components are the
//! rotation vector (radians), the last three the translational part. A
//! [`Pose`] maps points as `x' = R x + t` with `(R, t) = exp(twist)`.

use nalgebra::{Matrix3, Matrix3x6, Matrix4, Rotation3, UnitQuaternion, Vector3, Vector6};

use crate::error::{Error, Result};

pub type Twist = Vector6<f64>;

const SERIES_EPS: f64 = 1e-8;

/// Rigid transform with its twist coordinates cached alongside `(R, t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    twist: Twist,
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Pose::identity()
    }
}

#[inline]
pub(crate) fn hat(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Coefficients `(sinθ/θ, (1-cosθ)/θ², (θ-sinθ)/θ³)`.
fn rodrigues_coeffs(theta: f64) -> (f64, f64, f64) {
    let t2 = theta * theta;
    if theta < SERIES_EPS {
        (1.0 - t2 / 6.0, 0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0)
    } else if theta < 1e-2 {
        let t4 = t2 * t2;
        (
            1.0 - t2 / 6.0 + t4 / 120.0 - t4 * t2 / 5040.0,
            0.5 - t2 / 24.0 + t4 / 720.0 - t4 * t2 / 40320.0,
            1.0 / 6.0 - t2 / 120.0 + t4 / 5040.0 - t4 * t2 / 362880.0,
        )
    } else {
        let (s, c) = theta.sin_cos();
        (s / theta, (1.0 - c) / t2, (theta - s) / (t2 * theta))
    }
}

/// `(dA/dθ)/θ` and `(dB/dθ)/θ` for the coefficients A, B above.
fn rodrigues_coeff_derivs(theta: f64) -> (f64, f64) {
    let t2 = theta * theta;
    if theta < 5e-2 {
        let t4 = t2 * t2;
        (
            -1.0 / 12.0 + t2 / 180.0 - t4 / 6720.0 + t4 * t2 / 453600.0,
            -1.0 / 60.0 + t2 / 1260.0 - t4 / 60480.0 + t4 * t2 / 4989600.0,
        )
    } else {
        let (s, c) = theta.sin_cos();
        let t4 = t2 * t2;
        (
            (theta * s - 2.0 * (1.0 - c)) / t4,
            ((1.0 - c) * theta - 3.0 * (theta - s)) / (t4 * theta),
        )
    }
}

/// Left Jacobian of SO(3); also the `V` matrix mapping `v` to `t`.
pub fn so3_left_jacobian(w: &Vector3<f64>) -> Matrix3<f64> {
    let (_, a, b) = rodrigues_coeffs(w.norm());
    let w_hat = hat(w);
    Matrix3::identity() + w_hat * a + w_hat * w_hat * b
}

pub fn so3_exp(w: &Vector3<f64>) -> Matrix3<f64> {
    let (s, a, _) = rodrigues_coeffs(w.norm());
    let w_hat = hat(w);
    Matrix3::identity() + w_hat * s + w_hat * w_hat * a
}

pub fn so3_log(r: &Matrix3<f64>) -> Vector3<f64> {
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*r));
    q.scaled_axis()
}

/// Exponential map. Rejects non-finite twists.
pub fn se3_exp(twist: &Twist) -> Result<Pose> {
    if !twist.iter().all(|c| c.is_finite()) {
        return Err(Error::invalid(format!("non-finite twist {:?}", twist.as_slice())));
    }
    Ok(Pose::exp_unchecked(twist))
}

/// `a ∘ b`: applies `b` first, then `a`.
pub fn se3_compose(a: &Pose, b: &Pose) -> Pose {
    a.compose(b)
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            twist: Twist::zeros(),
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub(crate) fn exp_unchecked(twist: &Twist) -> Self {
        let w = twist.fixed_rows::<3>(0).into_owned();
        let v = twist.fixed_rows::<3>(3).into_owned();
        let (s, a, b) = rodrigues_coeffs(w.norm());
        let w_hat = hat(&w);
        let w_hat2 = w_hat * w_hat;
        let rotation = Matrix3::identity() + w_hat * s + w_hat2 * a;
        let jl = Matrix3::identity() + w_hat * a + w_hat2 * b;
        Pose {
            twist: *twist,
            rotation,
            translation: jl * v,
        }
    }

    pub fn exp(twist: &Twist) -> Result<Self> {
        se3_exp(twist)
    }

    /// Build from a rotation matrix and translation; the twist is recovered
    /// through the logarithm.
    pub fn from_rt(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        let w = so3_log(&rotation);
        let theta = w.norm();
        let w_hat = hat(&w);
        let c = if theta < 1e-3 {
            let t2 = theta * theta;
            1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
        } else {
            let (s, co) = theta.sin_cos();
            (1.0 - theta * s / (2.0 * (1.0 - co))) / (theta * theta)
        };
        let jl_inv = Matrix3::identity() - w_hat * 0.5 + w_hat * w_hat * c;
        let v = jl_inv * translation;
        Pose {
            twist: Twist::new(w.x, w.y, w.z, v.x, v.y, v.z),
            rotation,
            translation,
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Pose {
            twist: Twist::new(0.0, 0.0, 0.0, t.x, t.y, t.z),
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    pub fn twist(&self) -> &Twist {
        &self.twist
    }

    /// Twist recomputed from `(R, t)`.
    pub fn log(&self) -> Twist {
        Pose::from_rt(self.rotation, self.translation).twist
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn rotation_vector(&self) -> Vector3<f64> {
        self.twist.fixed_rows::<3>(0).into_owned()
    }

    /// Rotation angle in radians.
    pub fn rotation_angle(&self) -> f64 {
        so3_log(&self.rotation).norm()
    }

    #[inline]
    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::from_rt(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            twist: -self.twist,
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Same motion with the translation multiplied by `s`.
    pub fn scale_translation(&self, s: f64) -> Pose {
        let mut twist = self.twist;
        for i in 3..6 {
            twist[i] *= s;
        }
        Pose {
            twist,
            rotation: self.rotation,
            translation: self.translation * s,
        }
    }

    /// Jacobian of `exp(twist) * p` with respect to the twist coordinates,
    /// where `p` is the untransformed point.
    pub fn point_jacobian(&self, p: &Vector3<f64>) -> Matrix3x6<f64> {
        self.twist_derivative().at(p)
    }

    /// Twist-only factors of [`Pose::point_jacobian`], for evaluating it at
    /// many points.
    pub fn twist_derivative(&self) -> TwistDerivative {
        let w = self.twist.fixed_rows::<3>(0).into_owned();
        let v = self.twist.fixed_rows::<3>(3).into_owned();
        let theta = w.norm();
        let (_, a, b) = rodrigues_coeffs(theta);
        let (da, db) = rodrigues_coeff_derivs(theta);
        let w_hat = hat(&w);
        let jl = Matrix3::identity() + w_hat * a + w_hat * w_hat * b;

        let wxv = w.cross(&v);
        let wwv = w.cross(&wxv);
        // d(V v)/dω with V = I + A[ω]x + B[ω]x²
        let dvv = wxv * (w.transpose() * da) - hat(&v) * a
            + wwv * (w.transpose() * db)
            + (Matrix3::identity() * w.dot(&v) + w * v.transpose() - v * w.transpose() * 2.0) * b;
        TwistDerivative {
            rotation: self.rotation,
            jl,
            dvv,
        }
    }
}

/// Precomputed derivative of `exp(twist) * p` with respect to the twist.
#[derive(Debug, Clone, Copy)]
pub struct TwistDerivative {
    rotation: Matrix3<f64>,
    jl: Matrix3<f64>,
    dvv: Matrix3<f64>,
}

impl TwistDerivative {
    #[inline]
    pub fn at(&self, p: &Vector3<f64>) -> Matrix3x6<f64> {
        let d_rot = -hat(&(self.rotation * p)) * self.jl + self.dvv;
        let mut j = Matrix3x6::zeros();
        j.fixed_view_mut::<3, 3>(0, 0).copy_from(&d_rot);
        j.fixed_view_mut::<3, 3>(0, 3).copy_from(&self.jl);
        j
    }

    /// `Jᵀ g` without forming the 3x6 matrix.
    #[inline]
    pub fn transpose_mul(&self, p: &Vector3<f64>, g: &Vector3<f64>) -> Vector6<f64> {
        let rp = self.rotation * p;
        // (-[Rp]x jl + dvv)ᵀ g = jlᵀ (Rp x g) + dvvᵀ g
        let top = self.jl.transpose() * rp.cross(g) + self.dvv.transpose() * g;
        let bottom = self.jl.transpose() * g;
        Vector6::new(top.x, top.y, top.z, bottom.x, bottom.y, bottom.z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn close_m3(a: &Matrix3<f64>, b: &Matrix3<f64>, tol: f64) -> bool {
        (a - b).abs().max() <= tol
    }

    fn twist_strategy(max_w: f64, max_v: f64) -> impl Strategy<Value = Twist> {
        (
            proptest::array::uniform3(-1.0f64..1.0),
            0.0..max_w,
            proptest::array::uniform3(-max_v..max_v),
        )
            .prop_map(|(dir, mag, v)| {
                let d = Vector3::from(dir);
                let w = if d.norm() > 1e-6 { d.normalize() * mag } else { Vector3::zeros() };
                Twist::new(w.x, w.y, w.z, v[0], v[1], v[2])
            })
    }

    #[test]
    fn exp_of_zero_is_identity() {
        let p = se3_exp(&Twist::zeros()).unwrap();
        assert_eq!(*p.rotation(), Matrix3::identity());
        assert_eq!(*p.translation(), Vector3::zeros());
    }

    #[test]
    fn quarter_turn_about_z() {
        let p = se3_exp(&Twist::new(0.0, 0.0, FRAC_PI_2, 0.0, 0.0, 0.0)).unwrap();
        // Rodrigues evaluated by hand: R = I + sin θ K + (1 - cos θ) K², K = hat(z).
        let k = hat(&Vector3::z());
        let expected = Matrix3::identity() + k * 1.0 + k * k * 1.0;
        assert!(close_m3(p.rotation(), &expected, 1e-12));
        assert!((p.rotation()[(0, 1)] + 1.0).abs() < 1e-12);
        assert!((p.rotation()[(1, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pure_translation() {
        let p = se3_exp(&Twist::new(0.0, 0.0, 0.0, 1.0, 2.0, 3.0)).unwrap();
        assert_eq!(*p.rotation(), Matrix3::identity());
        assert_eq!(*p.translation(), Vector3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn non_finite_twist_rejected() {
        assert!(se3_exp(&Twist::new(f64::NAN, 0.0, 0.0, 0.0, 0.0, 0.0)).is_err());
        assert!(se3_exp(&Twist::new(0.0, 0.0, 0.0, f64::INFINITY, 0.0, 0.0)).is_err());
    }

    #[test]
    fn tiny_rotation_uses_series() {
        let p = se3_exp(&Twist::new(1e-10, -2e-10, 0.0, 0.0, 0.0, 0.0)).unwrap();
        assert!((p.rotation() * p.rotation().transpose() - Matrix3::identity()).abs().max() < 1e-15);
        assert!((p.rotation()[(2, 1)] - 1e-10).abs() < 1e-20);
    }

    #[test]
    fn identity_composition() {
        let p = se3_exp(&Twist::new(0.1, -0.2, 0.3, 1.0, -2.0, 0.5)).unwrap();
        let q = Pose::identity().compose(&p);
        assert!(close_m3(q.rotation(), p.rotation(), 1e-12));
        assert!((q.translation() - p.translation()).abs().max() < 1e-12);
        assert!((q.twist() - p.twist()).abs().max() < 1e-12);
        let r = p.compose(&p.inverse());
        assert!(close_m3(r.rotation(), &Matrix3::identity(), 1e-9));
        assert!(r.translation().norm() < 1e-9);
    }

    #[test]
    fn chained_compositions_stay_orthonormal() {
        let step = se3_exp(&Twist::new(0.31, -0.17, 0.23, 0.1, 0.2, -0.3)).unwrap();
        let mut acc = Pose::identity();
        for _ in 0..100 {
            acc = acc.compose(&step);
        }
        let r = acc.rotation();
        assert!((r * r.transpose() - Matrix3::identity()).abs().max() < 1e-6);
        assert!((r.determinant() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn point_jacobian_matches_finite_differences() {
        let twists = [
            Twist::new(0.3, -0.5, 0.2, 0.4, 0.1, -0.7),
            Twist::new(1e-4, 2e-4, -1e-4, 0.05, 0.0, 0.02),
            Twist::new(0.0, 0.0, 0.0, 0.1, 0.2, 0.3),
            Twist::new(2.0, 0.5, -1.0, -1.0, 2.0, 0.3),
        ];
        let p = Vector3::new(0.3, -0.8, 2.5);
        for tw in twists {
            let j = Pose::exp_unchecked(&tw).point_jacobian(&p);
            let h = 1e-6;
            for c in 0..6 {
                let mut tp = tw;
                let mut tm = tw;
                tp[c] += h;
                tm[c] -= h;
                let fd = (Pose::exp_unchecked(&tp).transform(&p) - Pose::exp_unchecked(&tm).transform(&p))
                    / (2.0 * h);
                let col = j.column(c);
                let g = Vector3::new(0.3, -1.1, 0.7);
                let jt = Pose::exp_unchecked(&tw).twist_derivative().transpose_mul(&p, &g);
                assert!((jt[c] - col.dot(&g)).abs() < 1e-12);
                assert!((fd - col).norm() < 1e-8 * (1.0 + fd.norm()), "twist {tw:?} col {c}: {fd} vs {col}");
            }
        }
    }

    proptest! {
        #[test]
        fn exp_log_roundtrip(tw in twist_strategy(3.0, 5.0)) {
            let p = se3_exp(&tw).unwrap();
            let back = p.log();
            prop_assert!((back - tw).abs().max() < 1e-7, "{:?} -> {:?}", tw, back);
            let r = p.rotation();
            prop_assert!((r * r.transpose() - Matrix3::identity()).abs().max() < 1e-9);
            prop_assert!((r.determinant() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn compose_matches_homogeneous_product(a in twist_strategy(0.5, 1.0), b in twist_strategy(0.5, 1.0)) {
            let pa = se3_exp(&a).unwrap();
            let pb = se3_exp(&b).unwrap();
            let expected = pa.to_matrix() * pb.to_matrix();
            prop_assert!((pa.compose(&pb).to_matrix() - expected).abs().max() < 1e-9);
        }

        #[test]
        fn compose_is_associative(a in twist_strategy(3.0, 2.0), b in twist_strategy(3.0, 2.0), c in twist_strategy(3.0, 2.0)) {
            let (pa, pb, pc) = (se3_exp(&a).unwrap(), se3_exp(&b).unwrap(), se3_exp(&c).unwrap());
            let l = pa.compose(&pb).compose(&pc).to_matrix();
            let r = pa.compose(&pb.compose(&pc)).to_matrix();
            prop_assert!((l - r).abs().max() < 1e-9);
        }

        #[test]
        fn inverse_is_exp_of_negated_twist(a in twist_strategy(3.0, 2.0)) {
            let p = se3_exp(&a).unwrap();
            let direct = se3_exp(&(-a)).unwrap();
            prop_assert!((p.inverse().to_matrix() - direct.to_matrix()).abs().max() < 1e-9);
        }
    }
}
