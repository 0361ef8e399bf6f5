//! Staged trust-region least squares with Powell dogleg steps.
//!
//! Each stage fixes a weight set and robust scale, then iterates dogleg
//! steps on the Gauss-Newton model until the relative energy decrease
//! drops below the stage tolerance or the iteration budget runs out.
//! Accepted steps strictly decrease the energy, so per-stage traces are
//! monotone by construction.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use num_traits::Float;

use super::problem::{EvalError, LeastSquaresProblem, ParamLayout};

/// Trust-region radius bounds.
pub const RADIUS_MIN: f64 = 1e-12;
pub const RADIUS_MAX: f64 = 1e6;

/// Energies at or below this are treated as an exact optimum.
const ZERO_ENERGY: f64 = 1e-20;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SolveError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("normal equations remained singular after Levenberg escalation")]
    SingularNormalEquations,
    #[error("schedule invalid: {0}")]
    BadSchedule(&'static str),
}

/// One optimization stage: a weight map consumed by the problem builder,
/// the robust scale, and termination controls.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub weights: BTreeMap<String, f64>,
    pub sigma: f64,
    pub max_iterations: usize,
    pub relative_tolerance: f64,
}

impl Stage {
    pub fn weight(&self, name: &str) -> Option<f64> {
        self.weights.get(name).copied()
    }
}

/// An ordered list of stages.
#[derive(Debug, Clone, PartialEq)]
pub struct StageSchedule {
    pub stages: Vec<Stage>,
}

impl StageSchedule {
    pub fn validate(&self) -> Result<(), SolveError> {
        if self.stages.is_empty() {
            return Err(SolveError::BadSchedule("schedule needs at least one stage"));
        }
        for s in &self.stages {
            if !s.weights.values().all(|w| w.is_finite()) {
                return Err(SolveError::BadSchedule("non-finite stage weight"));
            }
            if !(s.relative_tolerance > 0.0) {
                return Err(SolveError::BadSchedule("tolerance must be positive"));
            }
        }
        Ok(())
    }

    /// Single unweighted stage, for plain least-squares problems.
    pub fn single(max_iterations: usize, relative_tolerance: f64) -> Self {
        StageSchedule {
            stages: alloc::vec![Stage {
                weights: BTreeMap::new(),
                sigma: 1.0,
                max_iterations,
                relative_tolerance,
            }],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// Relative decrease under tolerance, vanishing gradient, or an
    /// already-optimal start.
    Converged,
    MaxIterations,
    /// The trust region collapsed without an acceptable step.
    StepSizeLimit,
}

/// Per-stage energy trace. `energies[0]` is the stage's starting energy;
/// each further entry is the energy after an accepted step.
#[derive(Debug, Clone)]
pub struct StageTrace {
    pub weights: BTreeMap<String, f64>,
    pub sigma: f64,
    pub energies: Vec<f64>,
    pub accepted: usize,
    pub rejected: usize,
    pub termination: Termination,
    pub radius_range: (f64, f64),
}

#[derive(Debug, Clone, Default)]
pub struct EnergyTrace {
    pub stages: Vec<StageTrace>,
}

impl EnergyTrace {
    /// True when every stage's energy sequence is non-increasing.
    pub fn is_monotone_within_stages(&self) -> bool {
        self.stages
            .iter()
            .all(|s| s.energies.windows(2).all(|w| w[1] <= w[0]))
    }

    pub fn final_energy(&self) -> Option<f64> {
        self.stages.last().and_then(|s| s.energies.last()).copied()
    }
}

/// Minimizes a staged least-squares problem by the dogleg trust-region
/// method, starting from `x0` (full parameter space). The problem builder
/// is invoked once per stage with that stage's weights.
pub fn dogleg_minimize<P, F>(
    mut problem_for_stage: F,
    layout: &ParamLayout,
    x0: &DVector<f64>,
    schedule: &StageSchedule,
) -> Result<(DVector<f64>, EnergyTrace), SolveError>
where
    P: LeastSquaresProblem,
    F: FnMut(&Stage) -> Result<P, SolveError>,
{
    schedule.validate()?;
    let mut x = x0.clone();
    let mut trace = EnergyTrace::default();
    for stage in &schedule.stages {
        let problem = problem_for_stage(stage)?;
        let stage_trace = run_stage(&problem, layout, &mut x, stage)?;
        trace.stages.push(stage_trace);
    }
    Ok((x, trace))
}

fn run_stage<P: LeastSquaresProblem>(
    problem: &P,
    layout: &ParamLayout,
    x: &mut DVector<f64>,
    stage: &Stage,
) -> Result<StageTrace, SolveError> {
    let active_map = layout.active_map();
    let active_len = layout.active_len();

    let residual_checked = |x: &DVector<f64>| -> Result<DVector<f64>, EvalError> {
        let r = problem.residuals(x)?;
        if let Some(row) = r.iter().position(|v| !v.is_finite()) {
            return Err(EvalError::NonFiniteResidual { row });
        }
        Ok(r)
    };

    let mut residual = residual_checked(x)?;
    let mut energy = residual.norm_squared();
    let mut radius: f64 = 1.0;
    let mut radius_range = (radius, radius);
    let mut energies = alloc::vec![energy];
    let mut accepted = 0;
    let mut rejected = 0;
    let mut termination = Termination::MaxIterations;

    if active_len == 0 {
        termination = Termination::Converged;
    }

    let mut iter = 0;
    while iter < stage.max_iterations && termination == Termination::MaxIterations {
        iter += 1;
        if energy <= ZERO_ENERGY {
            termination = Termination::Converged;
            break;
        }
        let jac = problem.jacobian(x)?;
        if !jac.is_finite() {
            return Err(SolveError::Eval(EvalError::NonFiniteJacobian));
        }
        let (gram, grad) = jac.gram(&residual, &active_map, active_len);
        if grad.amax() < 1e-15 {
            termination = Termination::Converged;
            break;
        }

        let gn_step = solve_gauss_newton(&gram, &grad)?;
        let g_norm_sq = grad.norm_squared();
        let g_b_g = (&gram * &grad).dot(&grad);
        let sd_step = if g_b_g > 0.0 {
            -&grad * (g_norm_sq / g_b_g)
        } else {
            -&grad * (radius / grad.norm())
        };

        // Inner loop: shrink the radius until a step is accepted or the
        // region collapses.
        let mut inner_done = false;
        while !inner_done {
            let step = dogleg_step(&gn_step, &sd_step, radius);
            let step_norm = step.norm();
            if step_norm < 1e-14 * (1.0 + x.norm()) {
                termination = Termination::StepSizeLimit;
                break;
            }
            let x_try = layout.splice(x, &(layout.extract_active(x) + &step));
            let try_residual = residual_checked(&x_try).ok();
            let try_energy = try_residual
                .as_ref()
                .map(|r| r.norm_squared())
                .unwrap_or(f64::INFINITY);
            let predicted = -(grad.dot(&step) + 0.5 * (&gram * &step).dot(&step));
            if try_energy < energy {
                let gain = (energy - try_energy) / predicted.max(f64::MIN_POSITIVE);
                if gain > 0.75 && step_norm >= 0.99 * radius {
                    radius = (radius * 2.0).min(RADIUS_MAX);
                } else if gain < 0.25 {
                    radius = (radius * 0.25).max(RADIUS_MIN);
                }
                let prev = energy;
                *x = x_try;
                residual = try_residual.expect("finite residual on accepted step");
                energy = try_energy;
                energies.push(energy);
                accepted += 1;
                inner_done = true;
                if (prev - energy) < stage.relative_tolerance * prev {
                    termination = Termination::Converged;
                }
            } else {
                rejected += 1;
                let new_radius = (0.25 * step_norm).max(RADIUS_MIN);
                if new_radius >= radius && radius <= RADIUS_MIN {
                    termination = Termination::StepSizeLimit;
                    break;
                }
                radius = new_radius;
            }
            radius_range = (radius_range.0.min(radius), radius_range.1.max(radius));
        }
    }
    Ok(StageTrace {
        weights: stage.weights.clone(),
        sigma: stage.sigma,
        energies,
        accepted,
        rejected,
        termination,
        radius_range,
    })
}

/// Gauss-Newton step from the normal equations, with Levenberg damping
/// escalation when the system is near-singular.
fn solve_gauss_newton(gram: &DMatrix<f64>, grad: &DVector<f64>) -> Result<DVector<f64>, SolveError> {
    if let Some(chol) = gram.clone().cholesky() {
        let step = chol.solve(&(-grad));
        if step.iter().all(|v| v.is_finite()) {
            return Ok(step);
        }
    }
    let n = gram.nrows();
    let mut lambda = 1e-6 * gram.trace().max(1e-300);
    for _ in 0..20 {
        let damped = gram + DMatrix::identity(n, n) * lambda;
        if let Some(chol) = damped.cholesky() {
            let step = chol.solve(&(-grad));
            if step.iter().all(|v| v.is_finite()) {
                return Ok(step);
            }
        }
        lambda *= 10.0;
    }
    Err(SolveError::SingularNormalEquations)
}

/// The classic dogleg path: Gauss-Newton inside the region, scaled
/// steepest descent outside, and the connecting segment in between.
fn dogleg_step(gn: &DVector<f64>, sd: &DVector<f64>, radius: f64) -> DVector<f64> {
    let gn_norm = gn.norm();
    if gn_norm <= radius {
        return gn.clone();
    }
    let sd_norm = sd.norm();
    if sd_norm >= radius {
        return sd * (radius / sd_norm);
    }
    let diff = gn - sd;
    let a = diff.norm_squared();
    let b = sd.dot(&diff);
    let c = sd.norm_squared() - radius * radius;
    let tau = if a <= 0.0 {
        0.0
    } else {
        (-b + (b * b - a * c).max(0.0).sqrt()) / a
    };
    sd + diff * tau.clamp(0.0, 1.0)
}
