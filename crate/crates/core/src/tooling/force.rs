//! Simulated force-driven adaptation of a time-driven position model.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, KmpError, Result};
use crate::kernels::Kernel;
use crate::kmp::{update_database, DesiredPoint, KmpModel, UpdateAction};

/// Default position covariance of the two points a force event adds.
pub const FORCE_POSITION_VARIANCE: f64 = 1e-6;

/// A sensed force `F` at time `t` while the robot is at `position`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForceEvent {
    pub time: f64,
    pub force: DVector<f64>,
    pub position: DVector<f64>,
}

impl ForceEvent {
    pub fn new(time: f64, force: DVector<f64>, position: DVector<f64>) -> Result<Self> {
        check_dim("force event position", force.len(), position.len())?;
        if !time.is_finite() || force.iter().chain(position.iter()).any(|v| !v.is_finite()) {
            return Err(KmpError::validation("force event has non-finite entries"));
        }
        Ok(ForceEvent { time, force, position })
    }

    /// Event at the position the model currently predicts for `time`.
    pub fn at_prediction<K: Kernel>(model: &KmpModel<K>, time: f64, force: DVector<f64>) -> Result<Self> {
        let mean = model.predict_mean(&DVector::from_element(1, time))?;
        let o = force.len();
        if mean.len() < o {
            return Err(KmpError::DimensionMismatch {
                context: "force dimension",
                expected: mean.len(),
                found: o,
            });
        }
        Self::new(time, force, mean.rows(0, o).into_owned())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForceParams {
    /// Gain `K_f` mapping force to position offset.
    pub gain: DMatrix<f64>,
    pub delta_t: f64,
    pub threshold: f64,
    pub position_variance: f64,
}

impl ForceParams {
    pub fn new(gain: DMatrix<f64>, delta_t: f64, threshold: f64) -> Result<Self> {
        let p = ForceParams {
            gain,
            delta_t,
            threshold,
            position_variance: FORCE_POSITION_VARIANCE,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.gain.is_square() || self.gain.iter().any(|v| !v.is_finite()) {
            return Err(KmpError::validation("force gain must be a finite square matrix"));
        }
        if !(self.delta_t.is_finite() && self.delta_t >= 0.0) {
            return Err(KmpError::validation("delta_t must be finite and non-negative"));
        }
        if !(self.threshold.is_finite() && self.threshold >= 0.0) {
            return Err(KmpError::validation("force threshold must be finite and non-negative"));
        }
        if !(self.position_variance.is_finite() && self.position_variance > 0.0) {
            return Err(KmpError::validation("position variance must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ForceOutcome<K: Kernel> {
    pub model: KmpModel<K>,
    pub applied: bool,
    /// Empty when the event was below threshold.
    pub actions: Vec<UpdateAction>,
    /// The two desired points, `(t+δ_t, p_t+K_f F)` then `(t, p_t)`.
    pub points: Vec<DesiredPoint>,
}

fn force_point<K: Kernel>(model: &KmpModel<K>, t: f64, position: DVector<f64>, variance: f64) -> Result<DesiredPoint> {
    let o = position.len();
    let cov = DMatrix::identity(o, o) * variance;
    let input = DVector::from_element(1, t);
    if model.output_dim() == 2 * o {
        DesiredPoint::position_only(input, position, cov)
    } else {
        check_dim("force model output", o, model.output_dim())?;
        DesiredPoint::new(input, position, cov)
    }
}

/// One step of the force loop. Events with `‖F‖ ≤ F_thre` return the model
/// untouched; stronger events add two desired points and rebuild.
pub fn force_sim_step<K: Kernel + Clone>(
    model: &KmpModel<K>,
    event: &ForceEvent,
    params: &ForceParams,
    zeta: f64,
) -> Result<ForceOutcome<K>> {
    params.validate()?;
    if model.input_dim() != 1 {
        return Err(KmpError::validation("force simulation needs a time-driven model"));
    }
    ForceEvent::new(event.time, event.force.clone(), event.position.clone())?;
    check_dim("force gain", event.force.len(), params.gain.nrows())?;
    if event.force.norm() <= params.threshold {
        return Ok(ForceOutcome {
            model: model.clone(),
            applied: false,
            actions: Vec::new(),
            points: Vec::new(),
        });
    }
    let shifted = &event.position + &params.gain * &event.force;
    let points = vec![
        force_point(model, event.time + params.delta_t, shifted, params.position_variance)?,
        force_point(model, event.time, event.position.clone(), params.position_variance)?,
    ];
    let mut db = model.database().clone();
    let mut actions = Vec::with_capacity(2);
    for p in &points {
        let (next, action) = update_database(&db, p, zeta)?;
        db = next;
        actions.push(action);
    }
    Ok(ForceOutcome {
        model: model.with_database(db)?,
        applied: true,
        actions,
        points,
    })
}
