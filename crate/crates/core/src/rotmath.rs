//! Rotation representations: 3x3 rotation matrices, the continuous 6D
//! encoding (first two matrix rows), and axis-angle vectors.

use std::ops::Mul;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

const TAYLOR_THRESHOLD: f64 = 1e-7;
const DEGENERATE_NORM: f64 = 1e-8;

/// A proper rotation (orthonormal, det = +1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(Matrix3<f64>);

impl RotationMatrix {
    pub const VALIDITY_TOL: f64 = 1e-6;

    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Validates orthonormality and handedness within [`Self::VALIDITY_TOL`].
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        let r = Self(m);
        if r.is_valid(Self::VALIDITY_TOL) {
            Ok(r)
        } else {
            Err(Error::InvalidInput(format!("not a rotation matrix: {m}")))
        }
    }

    /// Wraps a matrix the caller knows to be a rotation.
    pub fn new_unchecked(m: Matrix3<f64>) -> Self {
        Self(m)
    }

    pub fn from_rows(rows: [[f64; 3]; 3]) -> Result<Self> {
        Self::new(Matrix3::from_fn(|i, j| rows[i][j]))
    }

    pub fn rows(&self) -> [[f64; 3]; 3] {
        let m = &self.0;
        [
            [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
            [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
            [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
        ]
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn apply(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        let m = &self.0;
        if !m.iter().all(|x| x.is_finite()) {
            return false;
        }
        let gram = m.transpose() * m - Matrix3::identity();
        gram.iter().all(|x| x.abs() <= tol) && (m.determinant() - 1.0).abs() <= tol
    }
}

impl Mul for RotationMatrix {
    type Output = RotationMatrix;

    fn mul(self, rhs: RotationMatrix) -> RotationMatrix {
        RotationMatrix(self.0 * rhs.0)
    }
}

impl Default for RotationMatrix {
    fn default() -> Self {
        Self::identity()
    }
}

/// First two rows of a rotation matrix, row-major.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rot6D(pub [f64; 6]);

impl Rot6D {
    pub const IDENTITY: Rot6D = Rot6D([1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);

    pub fn from_slice(s: &[f64]) -> Self {
        let mut r = [0.0; 6];
        r.copy_from_slice(&s[..6]);
        Rot6D(r)
    }
}

/// Rotation vector: unit axis scaled by the angle in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisAngle(pub Vector3<f64>);

impl AxisAngle {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self(Vector3::new(x, y, z))
    }

    pub fn angle(&self) -> f64 {
        self.0.norm()
    }
}

fn skew(a: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -a.z, a.y, a.z, 0.0, -a.x, -a.y, a.x, 0.0)
}

/// Rodrigues' formula, R = I + A·[a]ₓ + B·[a]ₓ² with A = sinθ/θ and
/// B = (1 − cosθ)/θ², both switched to their series below 1e-7 rad.
pub fn axis_angle_to_matrix(a: AxisAngle) -> Result<RotationMatrix> {
    let v = a.0;
    if !v.iter().all(|x| x.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite axis-angle {v:?}")));
    }
    let theta2 = v.norm_squared();
    let theta = theta2.sqrt();
    let (sa, sb) = if theta < TAYLOR_THRESHOLD {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    let k = skew(&v);
    Ok(RotationMatrix(Matrix3::identity() + k * sa + (k * k) * sb))
}

pub fn matrix_to_rot6d(r: &RotationMatrix) -> Rot6D {
    let m = &r.0;
    Rot6D([
        m[(0, 0)],
        m[(0, 1)],
        m[(0, 2)],
        m[(1, 0)],
        m[(1, 1)],
        m[(1, 2)],
    ])
}

/// Row-wise Gram–Schmidt decoding of a 6D rotation.
pub fn rot6d_to_matrix(r: &Rot6D) -> Result<RotationMatrix> {
    let a = Vector3::new(r.0[0], r.0[1], r.0[2]);
    let b = Vector3::new(r.0[3], r.0[4], r.0[5]);
    if !a.iter().chain(b.iter()).all(|x| x.is_finite()) {
        return Err(Error::DegenerateRotation(format!("non-finite 6D {:?}", r.0)));
    }
    let na = a.norm();
    if na <= DEGENERATE_NORM {
        return Err(Error::DegenerateRotation(format!("first row near zero: {:?}", r.0)));
    }
    let row1 = a / na;
    let rej = b - row1 * b.dot(&row1);
    let nr = rej.norm();
    if nr <= DEGENERATE_NORM {
        return Err(Error::DegenerateRotation(format!("rows near parallel: {:?}", r.0)));
    }
    let row2 = rej / nr;
    let row3 = row1.cross(&row2);
    Ok(RotationMatrix(Matrix3::from_rows(&[
        row1.transpose(),
        row2.transpose(),
        row3.transpose(),
    ])))
}

/// `R_prev⁻¹ · R_cur`, using the transpose as the inverse.
pub fn relative_rotation(prev: &RotationMatrix, cur: &RotationMatrix) -> RotationMatrix {
    RotationMatrix(prev.0.transpose() * cur.0)
}

/// Geodesic distance between two rotations in degrees, in [0, 180].
pub fn geodesic_angle_deg(ra: &RotationMatrix, rb: &RotationMatrix) -> f64 {
    let rel = ra.0.transpose() * rb.0;
    let axis = Vector3::new(rel[(2, 1)] - rel[(1, 2)], rel[(0, 2)] - rel[(2, 0)], rel[(1, 0)] - rel[(0, 1)]);
    axis.norm().atan2(rel.trace() - 1.0).to_degrees()
}


#[cfg(test)]
mod tests {
    use super::oracle::{random_quat, random_rotation, Quat};
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn assert_mat_close(a: &RotationMatrix, b: &RotationMatrix, tol: f64) {
        for (x, y) in a.matrix().iter().zip(b.matrix().iter()) {
            assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
        }
    }

    fn rot_z(deg: f64) -> RotationMatrix {
        Quat::from_axis_angle([0.0, 0.0, 1.0], deg.to_radians()).to_matrix()
    }

    #[test]
    fn zero_axis_angle_is_exact_identity() {
        let r = axis_angle_to_matrix(AxisAngle::new(0.0, 0.0, 0.0)).unwrap();
        assert_eq!(r, RotationMatrix::identity());
    }

    #[test]
    fn axis_angle_matches_quaternion_oracle() {
        let r = axis_angle_to_matrix(AxisAngle::new(0.0, 0.0, PI / 2.0)).unwrap();
        let expect = RotationMatrix::from_rows([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]).unwrap();
        assert_mat_close(&r, &expect, 1e-12);
        assert_mat_close(&r, &rot_z(90.0), 1e-12);

        let r = axis_angle_to_matrix(AxisAngle::new(PI, 0.0, 0.0)).unwrap();
        let q = Quat::from_axis_angle([1.0, 0.0, 0.0], PI).to_matrix();
        assert_mat_close(&r, &q, 1e-12);
        let diag = RotationMatrix::from_rows([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]]).unwrap();
        assert_mat_close(&r, &diag, 1e-12);
    }

    #[test]
    fn tiny_angles_use_series_and_stay_valid() {
        let r = axis_angle_to_matrix(AxisAngle::new(1e-9, -2e-9, 3e-10)).unwrap();
        assert!(r.is_valid(1e-12));
        let q = Quat::from_axis_angle([1e-9, -2e-9, 3e-10], (1e-18f64 + 4e-18 + 9e-20).sqrt()).to_matrix();
        assert_mat_close(&r, &q, 1e-15);
    }

    #[test]
    fn non_finite_axis_angle_rejected() {
        assert!(matches!(
            axis_angle_to_matrix(AxisAngle::new(f64::NAN, 0.0, 0.0)),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn rot6d_projection() {
        assert_eq!(matrix_to_rot6d(&RotationMatrix::identity()), Rot6D::IDENTITY);
        let r = rot_z(90.0);
        let six = matrix_to_rot6d(&r);
        let expect = [0.0, -1.0, 0.0, 1.0, 0.0, 0.0];
        for (a, b) in six.0.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rot6d_decoding_removes_scale() {
        assert_eq!(rot6d_to_matrix(&Rot6D::IDENTITY).unwrap(), RotationMatrix::identity());
        let r = rot6d_to_matrix(&Rot6D([2.0, 0.0, 0.0, 0.0, 3.0, 0.0])).unwrap();
        assert_mat_close(&r, &RotationMatrix::identity(), 0.0);
    }

    #[test]
    fn rot6d_degenerate_rows_rejected() {
        assert!(matches!(
            rot6d_to_matrix(&Rot6D([0.0; 6])),
            Err(Error::DegenerateRotation(_))
        ));
        assert!(matches!(
            rot6d_to_matrix(&Rot6D([1.0, 0.0, 0.0, 2.0, 0.0, 0.0])),
            Err(Error::DegenerateRotation(_))
        ));
    }

    #[test]
    fn rot6d_round_trip_1000_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let r = random_rotation(&mut rng);
            let back = rot6d_to_matrix(&matrix_to_rot6d(&r)).unwrap();
            assert_mat_close(&back, &r, 1e-6);
        }
    }

    #[test]
    fn relative_rotation_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = random_rotation(&mut rng);
        assert_mat_close(&relative_rotation(&r, &r), &RotationMatrix::identity(), 1e-12);
        assert_mat_close(&relative_rotation(&RotationMatrix::identity(), &r), &r, 0.0);
        assert_mat_close(&relative_rotation(&rot_z(30.0), &rot_z(90.0)), &rot_z(60.0), 1e-12);
        let qa = random_quat(&mut rng);
        let qb = random_quat(&mut rng);
        let rel = relative_rotation(&qa.to_matrix(), &qa.mul(qb).to_matrix());
        assert_mat_close(&rel, &qb.to_matrix(), 1e-12);
    }

    #[test]
    fn geodesic_angle_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let r = random_rotation(&mut rng);
        assert_eq!(geodesic_angle_deg(&r, &r), 0.0);
        assert!((geodesic_angle_deg(&RotationMatrix::identity(), &rot_z(90.0)) - 90.0).abs() < 1e-9);
        let x180 = Quat::from_axis_angle([1.0, 0.0, 0.0], PI).to_matrix();
        assert!((geodesic_angle_deg(&RotationMatrix::identity(), &x180) - 180.0).abs() < 1e-6);
    }

    #[test]
    fn geodesic_agrees_with_quaternion_angle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let (qa, qb) = (random_quat(&mut rng), random_quat(&mut rng));
            let got = geodesic_angle_deg(&qa.to_matrix(), &qb.to_matrix());
            assert!((got - qa.angle_between_deg(qb)).abs() < 1e-5);
        }
    }

    proptest! {
        #[test]
        fn axis_angle_output_is_rotation(x in -7.0f64..7.0, y in -7.0f64..7.0, z in -7.0f64..7.0) {
            let r = axis_angle_to_matrix(AxisAngle::new(x, y, z)).unwrap();
            prop_assert!(r.is_valid(1e-6));
        }

        #[test]
        fn relative_rotation_recovers_increment(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let prev = random_rotation(&mut rng);
            let q = random_rotation(&mut rng);
            let rel = relative_rotation(&prev, &(prev * q));
            for (a, b) in rel.matrix().iter().zip(q.matrix().iter()) {
                prop_assert!((a - b).abs() < 1e-6);
            }
        }

        #[test]
        fn geodesic_is_symmetric_metric(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (a, b, c) = (random_rotation(&mut rng), random_rotation(&mut rng), random_rotation(&mut rng));
            let ab = geodesic_angle_deg(&a, &b);
            prop_assert!((ab - geodesic_angle_deg(&b, &a)).abs() < 1e-6);
            prop_assert!(geodesic_angle_deg(&a, &c) <= ab + geodesic_angle_deg(&b, &c) + 1e-6);
            prop_assert!((0.0..=180.0).contains(&ab));
        }
    }
}
