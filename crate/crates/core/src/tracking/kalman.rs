//! Linear Kalman filter over dense matrices.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Linear-Gaussian motion and observation model.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanModel {
    /// State transition `F` (d×d).
    pub transition: DMatrix<f64>,
    /// Observation matrix `H` (m×d).
    pub observation: DMatrix<f64>,
    /// Process noise covariance `Q` (d×d).
    pub process_noise: DMatrix<f64>,
    /// Measurement noise covariance `R` (m×m).
    pub measurement_noise: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackState {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl KalmanModel {
    pub fn new(
        transition: DMatrix<f64>,
        observation: DMatrix<f64>,
        process_noise: DMatrix<f64>,
        measurement_noise: DMatrix<f64>,
    ) -> Result<Self> {
        let model = KalmanModel {
            transition,
            observation,
            process_noise,
            measurement_noise,
        };
        model.validate()?;
        Ok(model)
    }

    /// Constant-velocity model: `measure_dim` observed quantities, each with a
    /// velocity component, unit time step. Noise covariances start at zero.
    pub fn constant_velocity(measure_dim: usize) -> Self {
        let d = 2 * measure_dim;
        let mut transition = DMatrix::identity(d, d);
        for i in 0..measure_dim {
            transition[(i, measure_dim + i)] = 1.0;
        }
        let mut observation = DMatrix::zeros(measure_dim, d);
        for i in 0..measure_dim {
            observation[(i, i)] = 1.0;
        }
        KalmanModel {
            transition,
            observation,
            process_noise: DMatrix::zeros(d, d),
            measurement_noise: DMatrix::zeros(measure_dim, measure_dim),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.transition.nrows()
    }

    pub fn measurement_dim(&self) -> usize {
        self.observation.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.transition.nrows();
        let m = self.observation.nrows();
        if self.transition.ncols() != d {
            return Err(Error::Config(format!(
                "transition matrix must be square, got {}x{}",
                d,
                self.transition.ncols()
            )));
        }
        if self.observation.ncols() != d {
            return Err(Error::Config(format!(
                "observation matrix is {}x{}, expected {}x{}",
                m,
                self.observation.ncols(),
                m,
                d
            )));
        }
        if self.process_noise.shape() != (d, d) {
            return Err(Error::Config(format!(
                "process noise is {:?}, expected ({d}, {d})",
                self.process_noise.shape()
            )));
        }
        if self.measurement_noise.shape() != (m, m) {
            return Err(Error::Config(format!(
                "measurement noise is {:?}, expected ({m}, {m})",
                self.measurement_noise.shape()
            )));
        }
        for (name, mat) in [("Q", &self.process_noise), ("R", &self.measurement_noise)] {
            if !is_symmetric(mat, 1e-12) {
                return Err(Error::Config(format!("{name} is not symmetric")));
            }
        }
        Ok(())
    }
}

impl TrackState {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Self {
        TrackState { mean, covariance }
    }

    fn check_dims(&self, model: &KalmanModel) -> Result<()> {
        let d = model.state_dim();
        if self.mean.len() != d || self.covariance.shape() != (d, d) {
            return Err(Error::Config(format!(
                "state has dimension {} / covariance {:?}, model expects {d}",
                self.mean.len(),
                self.covariance.shape()
            )));
        }
        Ok(())
    }
}

fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    let scale = m.amax().max(1.0);
    (m - m.transpose()).amax() <= tol * scale
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// `x ← F x`, `P ← F P Fᵀ + Q`.
pub fn kalman_predict(state: &TrackState, model: &KalmanModel) -> Result<TrackState> {
    state.check_dims(model)?;
    let f = &model.transition;
    let mean = f * &state.mean;
    let covariance = symmetrize(f * &state.covariance * f.transpose() + &model.process_noise);
    Ok(TrackState { mean, covariance })
}

/// Residual `z - Hx` and innovation covariance `S = H P Hᵀ + R`.
pub fn innovation(
    state: &TrackState,
    z: &DVector<f64>,
    model: &KalmanModel,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    state.check_dims(model)?;
    if z.len() != model.measurement_dim() {
        return Err(Error::Config(format!(
            "measurement has dimension {}, model expects {}",
            z.len(),
            model.measurement_dim()
        )));
    }
    let h = &model.observation;
    let residual = z - h * &state.mean;
    let s = symmetrize(h * &state.covariance * h.transpose() + &model.measurement_noise);
    Ok((residual, s))
}

fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Inverse of a symmetric positive definite innovation covariance.
fn spd_inverse(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(chol) = s.clone().cholesky() {
        let inv = chol.inverse();
        if inv.iter().all(|v| v.is_finite()) {
            return Ok(inv);
        }
    }
    let cond = condition_number(s);
    Err(Error::Numerical(format!(
        "innovation covariance is singular or indefinite (condition number {cond:.3e}): {s}"
    )))
}

/// Projected measurement `Hx` and inverse innovation covariance `S⁻¹`, for
/// evaluating many Mahalanobis distances against one state.
pub fn projected_inverse(
    state: &TrackState,
    model: &KalmanModel,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let zero = DVector::zeros(model.measurement_dim());
    let (_, s) = innovation(state, &zero, model)?;
    Ok((&model.observation * &state.mean, spd_inverse(&s)?))
}

/// `K = P Hᵀ S⁻¹`, `x ← x + K (z - Hx)`, `P ← (I - K H) P`, re-symmetrized.
pub fn kalman_update(state: &TrackState, z: &DVector<f64>, model: &KalmanModel) -> Result<TrackState> {
    let (residual, s) = innovation(state, z, model)?;
    let s_inv = spd_inverse(&s)?;
    let h = &model.observation;
    let gain = &state.covariance * h.transpose() * s_inv;
    let mean = &state.mean + &gain * residual;
    let d = model.state_dim();
    let covariance = symmetrize((DMatrix::identity(d, d) - &gain * h) * &state.covariance);
    Ok(TrackState { mean, covariance })
}

/// Squared Mahalanobis distance `dᵀ S⁻¹ d` between a measurement and the
/// state's projected distribution.
pub fn mahalanobis_sq(state: &TrackState, z: &DVector<f64>, model: &KalmanModel) -> Result<f64> {
    let (residual, s) = innovation(state, z, model)?;
    let s_inv = spd_inverse(&s)?;
    Ok((residual.transpose() * s_inv * &residual)[(0, 0)].max(0.0))
}
