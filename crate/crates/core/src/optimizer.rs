//! Alternating minimization of the structured-estimator MSE.
//!
//! Each outer iteration solves the coefficient subproblem exactly (it is a
//! quadratic in `a`) and then runs Armijo steepest descent on `W`. Both
//! blocks only ever lower the evaluated objective, so the recorded trace is
//! non-increasing.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{
    lmmse_operator, prior_covariance, smse, trace_second_moment, SensingMatrix, SmmseEstimator,
    VandermondeMoments,
};
use crate::linalg::{frobenius_dot, min_eigenvalue, right_pseudo_inverse, solve_spd_vec};
use crate::moments::{MomentTable, MultiIndex};
use crate::par;

/// Slack allowed when checking that an update did not raise the objective.
pub const MONOTONE_SLACK: f64 = 1e-12;
const MAX_BACKTRACKS: usize = 80;

/// Stopping threshold for the outer loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tolerance {
    Absolute(f64),
    /// Multiple of `tr C_x`.
    RelativeToTrace(f64),
}

impl Tolerance {
    pub fn resolve(self, trace_c: f64) -> f64 {
        match self {
            Tolerance::Absolute(v) => v,
            Tolerance::RelativeToTrace(v) => v * trace_c,
        }
    }

    fn value(self) -> f64 {
        match self {
            Tolerance::Absolute(v) | Tolerance::RelativeToTrace(v) => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub max_outer_iterations: usize,
    pub outer_tolerance: Tolerance,
    pub armijo_c1: f64,
    pub armijo_backtrack: f64,
    pub max_inner_steps: usize,
    pub initial_step: f64,
    /// `c` in the initial operator `W = c A^†`.
    pub init_scale: f64,
    /// The inner descent stops once a step lowers the objective by less than
    /// this fraction of the outer tolerance.
    pub inner_tolerance_ratio: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_outer_iterations: 50,
            outer_tolerance: Tolerance::RelativeToTrace(1e-8),
            armijo_c1: 1e-4,
            armijo_backtrack: 0.5,
            max_inner_steps: 200,
            initial_step: 1.0,
            init_scale: 10.0,
            inner_tolerance_ratio: 1e-2,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("optimizer: {what}")));
        if self.max_outer_iterations == 0 {
            return bad("max_outer_iterations must be positive");
        }
        if !(self.outer_tolerance.value() > 0.0) {
            return bad("outer_tolerance must be positive");
        }
        if !(self.armijo_c1 > 0.0 && self.armijo_c1 < 1.0) {
            return bad("armijo_c1 must lie in (0, 1)");
        }
        if !(self.armijo_backtrack > 0.0 && self.armijo_backtrack < 1.0) {
            return bad("armijo_backtrack must lie in (0, 1)");
        }
        if self.max_inner_steps == 0 {
            return bad("max_inner_steps must be positive");
        }
        if !(self.initial_step > 0.0 && self.initial_step.is_finite()) {
            return bad("initial_step must be positive");
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return bad("init_scale must be positive");
        }
        if !(self.inner_tolerance_ratio >= 0.0) {
            return bad("inner_tolerance_ratio must be nonnegative");
        }
        Ok(())
    }
}

/// One outer iteration of the alternating scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub smse_after_a_step: f64,
    pub smse_after_w_step: f64,
    pub inner_steps_taken: usize,
    pub min_eigenvalue_vtv: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct IterationTrace {
    /// Objective at the initial point (`a = 0`, i.e. `tr C_x`).
    pub initial_smse: f64,
    pub iterations: Vec<IterationRecord>,
}

impl IterationTrace {
    /// Initial value followed by the a-step and W-step values of every
    /// iteration, in evaluation order.
    pub fn objective_sequence(&self) -> Vec<f64> {
        let mut seq = vec![self.initial_smse];
        for r in &self.iterations {
            seq.push(r.smse_after_a_step);
            seq.push(r.smse_after_w_step);
        }
        seq
    }

    pub fn final_smse(&self) -> f64 {
        self.iterations
            .last()
            .map(|r| r.smse_after_w_step)
            .unwrap_or(self.initial_smse)
    }

    /// Whether consecutive values never increase by more than `slack`.
    pub fn is_monotone(&self, slack: f64) -> bool {
        self.objective_sequence()
            .windows(2)
            .all(|w| w[1] <= w[0] + slack)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "iteration,smse_after_a_step,smse_after_w_step,inner_steps_taken,min_eigenvalue_vtv\n",
        );
        for (k, r) in self.iterations.iter().enumerate() {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                k + 1,
                r.smse_after_a_step,
                r.smse_after_w_step,
                r.inner_steps_taken,
                r.min_eigenvalue_vtv
            ));
        }
        s
    }
}

/// Solution of the coefficient subproblem together with diagnostics.
#[derive(Debug, Clone)]
pub struct CoefficientUpdate {
    pub a: DVector<f64>,
    pub smse: f64,
    /// `‖S a − b‖ / (‖S‖ ‖a‖ + ‖b‖)` for the normal equations `S a = b`.
    pub relative_residual: f64,
    pub min_eigenvalue_vtv: f64,
}

fn solve_coefficients(moments: &VandermondeMoments, trace_c: f64) -> Result<CoefficientUpdate> {
    let b = moments.cross_vector();
    let s = &moments.vtv;
    let a = solve_spd_vec(s, &b)?;
    let residual = (s * &a - &b).norm();
    let scale = s.norm() * a.norm() + b.norm();
    let relative_residual = if scale > 0.0 { residual / scale } else { 0.0 };
    Ok(CoefficientUpdate {
        smse: moments.objective(trace_c, &a),
        a,
        relative_residual,
        min_eigenvalue_vtv: min_eigenvalue(s),
    })
}

fn check_shapes(table: &MomentTable, a: &SensingMatrix, w: &DMatrix<f64>) -> Result<()> {
    if table.dim() != a.cols() {
        return Err(Error::Dimension {
            context: "moment table vs sensing matrix",
            expected: a.cols(),
            found: table.dim(),
        });
    }
    if w.shape() != (a.cols(), a.rows()) {
        return Err(Error::Dimension {
            context: "operator shape must be N × M",
            expected: a.cols() * a.rows(),
            found: w.nrows() * w.ncols(),
        });
    }
    Ok(())
}

/// Minimizer of the MSE over the coefficients with `W` held fixed:
/// `a = E[VᵀV]⁻¹ E[Vᵀx]`.
pub fn update_coefficients(
    table: &MomentTable,
    a: &SensingMatrix,
    w: &DMatrix<f64>,
    degree: usize,
) -> Result<CoefficientUpdate> {
    check_shapes(table, a, w)?;
    let u = w * a.matrix();
    let moments = VandermondeMoments::compute(table, &u, degree)?;
    solve_coefficients(&moments, trace_second_moment(table))
}

/// `∂ε/∂W` as an `N × M` matrix.
///
/// With `U = W A` and `u_i` its rows,
/// `G₁[i, n] = Σ_{d≥1} d a_d E[x_i x_n ⟨u_i, x⟩^{d−1}]` (from the cross term)
/// and `G₂[i, n] = Σ_{k,l} (k+l) a_k a_l E[x_n ⟨u_i, x⟩^{k+l−1}]` (from the
/// energy of the estimate). The gradient is `(−2 G₁ + G₂) Aᵀ`.
pub fn gradient_w(
    table: &MomentTable,
    a: &SensingMatrix,
    est: &SmmseEstimator,
) -> Result<DMatrix<f64>> {
    check_shapes(table, a, est.w())?;
    let n = a.cols();
    let degree = est.degree();
    let coeffs = est.coefficients();
    if degree == 0 {
        return Ok(DMatrix::zeros(n, a.rows()));
    }
    let u = est.w() * a.matrix();

    // (T²)' = Σ_m square_weights[m] t^{m−1}, square_weights[m] = m Σ_{k+l=m} a_k a_l
    let square_weights: Vec<f64> = (0..=2 * degree)
        .map(|m| {
            let conv: f64 = (m.saturating_sub(degree)..=m.min(degree))
                .map(|k| coeffs[k] * coeffs[m - k])
                .sum();
            m as f64 * conv
        })
        .collect();

    let rows: Vec<Result<Vec<f64>>> = par::map_range(n, |i| {
        let ui: Vec<f64> = u.row(i).iter().copied().collect();
        let mut row = vec![0.0; n];
        for (col, slot) in row.iter_mut().enumerate() {
            let pair =
                table.inner_product_series(&ui, degree as u32 - 1, &MultiIndex::pair(n, i, col))?;
            let g1: f64 = (1..=degree)
                .map(|d| d as f64 * coeffs[d] * pair[d - 1])
                .sum();
            let single = table.inner_product_series(
                &ui,
                2 * degree as u32 - 1,
                &MultiIndex::unit(n, col),
            )?;
            let g2: f64 = (1..=2 * degree)
                .map(|m| square_weights[m] * single[m - 1])
                .sum();
            *slot = -2.0 * g1 + g2;
        }
        Ok(row)
    });
    let mut inner = DMatrix::zeros(n, n);
    for (i, row) in rows.into_iter().enumerate() {
        for (col, v) in row?.into_iter().enumerate() {
            inner[(i, col)] = v;
        }
    }
    Ok(inner * a.matrix().transpose())
}

/// Result of the inner descent on `W`.
#[derive(Debug, Clone)]
pub struct DescentOutcome {
    pub w: DMatrix<f64>,
    pub steps_taken: usize,
    pub smse: f64,
    /// Warm-start step for the next call.
    pub next_step: f64,
}

/// Armijo steepest descent on `W` with the coefficients held fixed.
///
/// A trial step `t` is accepted when
/// `ε(W − t∇) ≤ ε(W) − c₁ t ‖∇‖²_F`; after acceptance the next trial starts
/// at `2t`. The loop ends after `max_inner_steps`, when the gradient
/// vanishes, when backtracking finds no admissible step, or when a step
/// gains less than `inner_tolerance_ratio · outer_tolerance`.
pub fn descent_step_w(
    table: &MomentTable,
    a: &SensingMatrix,
    est: &SmmseEstimator,
    config: &OptimizerConfig,
    initial_step: f64,
) -> Result<DescentOutcome> {
    config.validate()?;
    let trace_c = trace_second_moment(table);
    let min_gain = config.inner_tolerance_ratio * config.outer_tolerance.resolve(trace_c);
    let mut current = est.clone();
    let mut f = smse(table, a, &current)?;
    let mut step = initial_step;
    let mut taken = 0;

    while taken < config.max_inner_steps {
        let grad = gradient_w(table, a, &current)?;
        let gg = frobenius_dot(&grad, &grad);
        if !(gg > 0.0) {
            break;
        }
        let mut t = step;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let trial = current.with_w(current.w() - &grad * t);
            let ft = smse(table, a, &trial)?;
            if ft.is_finite() && ft <= f - config.armijo_c1 * t * gg {
                accepted = Some((trial, ft));
                break;
            }
            t *= config.armijo_backtrack;
        }
        let Some((next, fnext)) = accepted else {
            break;
        };
        let gain = f - fnext;
        current = next;
        f = fnext;
        taken += 1;
        step = 2.0 * t;
        if gain < min_gain {
            break;
        }
    }

    Ok(DescentOutcome {
        w: current.w().clone(),
        steps_taken: taken,
        smse: f,
        next_step: step,
    })
}

/// Trains a degree-`degree` structured estimator from `W = c A^†`, `a = 0`.
///
/// For anisotropic `p` the prior covariance is not a multiple of the
/// identity and `A^†` is no longer the LMMSE operator; the start is then
/// `c W_lmmse`, so that the first coefficient step can already reach the
/// linear optimum and the result never ends up above it.
pub fn alternating_minimize(
    table: &MomentTable,
    a: &SensingMatrix,
    degree: usize,
    config: &OptimizerConfig,
) -> Result<(SmmseEstimator, IterationTrace)> {
    config.validate()?;
    if table.dim() != a.cols() {
        return Err(Error::Dimension {
            context: "moment table vs sensing matrix",
            expected: a.cols(),
            found: table.dim(),
        });
    }
    let trace_c = trace_second_moment(table);
    let tolerance = config.outer_tolerance.resolve(trace_c);
    let w0 = if table.p().is_isotropic() {
        right_pseudo_inverse(a.matrix())?
    } else {
        lmmse_operator(a, &prior_covariance(table))?
    } * config.init_scale;
    let mut est = SmmseEstimator::new(w0, DVector::zeros(degree + 1))?;
    let mut previous = smse(table, a, &est)?;
    let mut trace = IterationTrace {
        initial_smse: previous,
        iterations: Vec::new(),
    };
    let mut step = config.initial_step;

    for k in 0..config.max_outer_iterations {
        let u = est.w() * a.matrix();
        let moments = VandermondeMoments::compute(table, &u, degree)?;
        let update = solve_coefficients(&moments, trace_c)?;
        if update.min_eigenvalue_vtv < 0.0 {
            log::warn!(
                "iteration {}: E[VᵀV] has negative eigenvalue {:.3e}",
                k + 1,
                update.min_eigenvalue_vtv
            );
        }
        let after_a = if update.smse <= previous + MONOTONE_SLACK {
            est = est.with_coefficients(update.a);
            update.smse
        } else {
            log::warn!(
                "iteration {}: coefficient update raised the objective ({} > {}), keeping previous coefficients",
                k + 1,
                update.smse,
                previous
            );
            previous
        };

        let descent = descent_step_w(table, a, &est, config, step)?;
        step = descent.next_step;
        est = est.with_w(descent.w);
        trace.iterations.push(IterationRecord {
            smse_after_a_step: after_a,
            smse_after_w_step: descent.smse,
            inner_steps_taken: descent.steps_taken,
            min_eigenvalue_vtv: update.min_eigenvalue_vtv,
        });
        log::debug!(
            "iteration {}: smse {:.6e} -> {:.6e} ({} inner steps)",
            k + 1,
            after_a,
            descent.smse,
            descent.steps_taken
        );
        let decrease = previous - descent.smse;
        previous = descent.smse;
        if decrease < tolerance {
            break;
        }
    }
    Ok((est, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::{lmmse_operator, lmse, prior_covariance};
    use crate::moments::CharacteristicVector;

    fn small_problem() -> (MomentTable, SensingMatrix) {
        let t = MomentTable::new(CharacteristicVector::isotropic(0.8, 4).unwrap());
        let a = SensingMatrix::new(DMatrix::from_row_slice(
            2,
            4,
            &[0.6, -0.3, 0.9, 0.2, 0.1, 0.8, -0.4, 0.7],
        ))
        .unwrap();
        (t, a)
    }

    #[test]
    fn config_validation() {
        assert!(OptimizerConfig::default().validate().is_ok());
        let c = OptimizerConfig {
            armijo_c1: 1.0,
            ..OptimizerConfig::default()
        };
        assert!(c.validate().is_err());
        let c = OptimizerConfig {
            outer_tolerance: Tolerance::Absolute(0.0),
            ..OptimizerConfig::default()
        };
        assert!(c.validate().is_err());
        let json = r#"{"max_outer_iterations": 5, "outer_tolerance": {"absolute": 1e-9}}"#;
        let parsed: OptimizerConfig = serde_json::from_str(json).unwrap();
        assert_eq!(parsed.max_outer_iterations, 5);
        assert_eq!(parsed.outer_tolerance, Tolerance::Absolute(1e-9));
        assert_eq!(parsed.init_scale, 10.0);
    }

    #[test]
    fn zero_degree_coefficient_is_zero() {
        let (t, a) = small_problem();
        let w = right_pseudo_inverse(a.matrix()).unwrap();
        let up = update_coefficients(&t, &a, &w, 0).unwrap();
        assert_eq!(up.a.len(), 1);
        assert!(up.a[0].abs() < 1e-15);
    }

    #[test]
    fn exact_inverse_recovers_identity_polynomial() {
        let t = MomentTable::new(CharacteristicVector::isotropic(0.6, 3).unwrap());
        let a = SensingMatrix::new(DMatrix::from_row_slice(
            3,
            3,
            &[1.0, 0.2, -0.3, 0.0, 0.9, 0.4, 0.5, -0.1, 1.2],
        ))
        .unwrap();
        let inv = a.matrix().clone().try_inverse().unwrap();
        let up = update_coefficients(&t, &a, &inv, 4).unwrap();
        let mut e2 = DVector::zeros(5);
        e2[1] = 1.0;
        assert!((&up.a - e2).norm() < 1e-8, "a = {}", up.a);
        assert!(up.smse < 1e-12);
    }

    #[test]
    fn coefficient_update_beats_identity_polynomial() {
        let (t, a) = small_problem();
        let w = right_pseudo_inverse(a.matrix()).unwrap() * 3.0;
        let up = update_coefficients(&t, &a, &w, 3).unwrap();
        let lin = SmmseEstimator::linear(w.clone(), 3).unwrap();
        assert!(up.smse <= smse(&t, &a, &lin).unwrap() + 1e-15);
        assert!(up.relative_residual <= 1e-9);
        assert!(up.min_eigenvalue_vtv > 0.0);
    }

    #[test]
    fn gradient_vanishes_for_zero_polynomial() {
        let (t, a) = small_problem();
        let est = SmmseEstimator::new(DMatrix::from_element(4, 2, 0.3), DVector::zeros(4)).unwrap();
        assert_eq!(gradient_w(&t, &a, &est).unwrap(), DMatrix::zeros(4, 2));
    }

    #[test]
    fn linear_gradient_matches_lmse_derivative_and_vanishes_at_lmmse() {
        let t = MomentTable::new(CharacteristicVector::new(vec![0.5, 1.5, 0.8, 1.1]).unwrap());
        let (_, a) = small_problem();
        let c = prior_covariance(&t);
        let w = DMatrix::from_fn(4, 2, |i, j| 0.2 * (i as f64) - 0.5 * (j as f64) + 0.1);
        let est = SmmseEstimator::linear(w.clone(), 3).unwrap();
        let g = gradient_w(&t, &a, &est).unwrap();
        let am = a.matrix();
        let want = -2.0 * c.matrix() * am.transpose() + 2.0 * &w * am * c.matrix() * am.transpose();
        assert!((&g - &want).norm() < 1e-12 * want.norm());
        let opt = SmmseEstimator::linear(lmmse_operator(&a, &c).unwrap(), 3).unwrap();
        assert!(gradient_w(&t, &a, &opt).unwrap().norm() < 1e-8);
    }

    #[test]
    fn descent_does_not_move_at_lmmse() {
        let (t, a) = small_problem();
        let c = prior_covariance(&t);
        let w = lmmse_operator(&a, &c).unwrap();
        let est = SmmseEstimator::linear(w.clone(), 3).unwrap();
        let before = smse(&t, &a, &est).unwrap();
        let out = descent_step_w(&t, &a, &est, &OptimizerConfig::default(), 1.0).unwrap();
        assert!(before - out.smse <= 1e-10);
        assert!(out.smse <= before);
    }

    #[test]
    fn descent_with_zero_gradient_is_a_no_op() {
        let (t, a) = small_problem();
        let est = SmmseEstimator::new(DMatrix::from_element(4, 2, 0.3), DVector::zeros(4)).unwrap();
        let out = descent_step_w(&t, &a, &est, &OptimizerConfig::default(), 1.0).unwrap();
        assert_eq!(out.steps_taken, 0);
        assert_eq!(&out.w, est.w());
    }

    #[test]
    fn descent_decreases_away_from_critical_points() {
        let (t, a) = small_problem();
        let w = right_pseudo_inverse(a.matrix()).unwrap() * 4.0;
        let est = SmmseEstimator::new(w, DVector::from_vec(vec![0.0, 0.2, 0.0, 0.05])).unwrap();
        assert!(gradient_w(&t, &a, &est).unwrap().norm() > 1e-6);
        let before = smse(&t, &a, &est).unwrap();
        let out = descent_step_w(&t, &a, &est, &OptimizerConfig::default(), 1.0).unwrap();
        assert!(out.steps_taken > 0);
        assert!(out.smse < before);
    }

    #[test]
    fn square_system_converges_to_zero() {
        let t = MomentTable::new(CharacteristicVector::isotropic(0.7, 3).unwrap());
        let a = SensingMatrix::new(DMatrix::from_row_slice(
            3,
            3,
            &[1.0, 0.2, -0.3, 0.0, 0.9, 0.4, 0.5, -0.1, 1.2],
        ))
        .unwrap();
        let (est, trace) = alternating_minimize(&t, &a, 5, &OptimizerConfig::default()).unwrap();
        assert!(trace.final_smse() <= 1e-8, "{}", trace.final_smse());
        assert!(trace.iterations.len() <= 2);
        assert!(smse(&t, &a, &est).unwrap() <= 1e-8);
    }

    #[test]
    fn trace_is_monotone_and_sandwiched() {
        let (t, a) = small_problem();
        let c = prior_covariance(&t);
        let bound = lmse(&lmmse_operator(&a, &c).unwrap(), &a, &c).unwrap();
        let config = OptimizerConfig {
            max_outer_iterations: 8,
            ..OptimizerConfig::default()
        };
        let (_, trace) = alternating_minimize(&t, &a, 3, &config).unwrap();
        assert!(trace.is_monotone(MONOTONE_SLACK));
        assert!(trace.final_smse() >= 0.0);
        assert!(trace.final_smse() <= bound + 1e-9);
        assert_eq!(trace.to_csv().lines().count(), trace.iterations.len() + 1);
    }
}
