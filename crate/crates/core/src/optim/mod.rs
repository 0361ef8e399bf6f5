//! Robust staged nonlinear least squares: the Geman-McClure loss, problem
//! plumbing, and the dogleg trust-region driver shared by both fitting
//! stages.

mod dogleg;
mod problem;
mod robust;

pub use dogleg::{
    dogleg_minimize, EnergyTrace, SolveError, Stage, StageSchedule, StageTrace, Termination,
    RADIUS_MAX, RADIUS_MIN,
};
pub use problem::{
    numeric_jacobian, BlockJacobian, CompositeProblem, EvalError, JacBlock, LeastSquaresProblem,
    ParamBlock, ParamLayout,
};
pub use robust::{geman_mcclure, robustify_group, RobustLossParams};

impl<T: LeastSquaresProblem + ?Sized> LeastSquaresProblem for &T {
    fn residual_len(&self) -> usize {
        (**self).residual_len()
    }
    fn param_len(&self) -> usize {
        (**self).param_len()
    }
    fn residuals(&self, x: &nalgebra::DVector<f64>) -> Result<nalgebra::DVector<f64>, EvalError> {
        (**self).residuals(x)
    }
    fn jacobian(&self, x: &nalgebra::DVector<f64>) -> Result<BlockJacobian, EvalError> {
        (**self).jacobian(x)
    }
}
