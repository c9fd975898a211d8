//! Beam design on a uniform linear array whose one transmit beam must both
//! carry the command link and keep the target observable to the sensing
//! receiver.
//!
//! The design problem is: minimize transmit power `||w||^2` subject to a
//! link-SINR floor and the expected-drift certificate of the control loop.
//! Both constraints couple through the beam: link SINR grows with the
//! steering-direction gain `|a^H w|^2`, while the sensing error bound
//! shrinks with the derivative gain `|a_dot^H w|^2`. Any gain pair reachable
//! with some beam is reachable at no more power by a beam inside
//! `span{a, a_dot}`, so the search runs over that plane, parameterized as
//! `w = c * ((1 - kappa) a_hat + kappa d_hat)` with `a_hat` the normalized
//! steering vector and `d_hat` the normalized component of `a_dot`
//! orthogonal to it.

use nalgebra::DVector;
use num_complex::Complex64;
use thiserror::Error;

use crate::control::{
    lyapunov_value, packet_success_prob, ControlError, ControllerGain, CovMapping,
    DriftEvaluator, LinkReliability, PlantModel, SensingSpec,
};

/// Direction components with squared norm below this are treated as zero
/// when orthonormalizing the search plane.
const DEGENERATE_DIRECTION_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum BeamformingError {
    #[error("array needs at least 2 elements, got {0}")]
    TooFewElements(usize),
    #[error("element spacing must be positive and finite, got {0} wavelengths")]
    BadSpacing(f64),
    #[error("steering angle must satisfy |theta| < pi/2, got {0} rad")]
    BadAngle(f64),
    #[error("noise variance must be positive and finite, got {0}")]
    BadNoise(f64),
    #[error("beam has {got} entries, array has {expected} elements")]
    MismatchedLength { got: usize, expected: usize },
    #[error("sinr floor must be non-negative, got {0}")]
    BadSinrFloor(f64),
    #[error("solver needs at least 2 direction-mix grid points, got {0}")]
    BadGrid(usize),
    #[error("solver tolerance must be positive and finite, got {0}")]
    BadTolerance(f64),
    #[error("power cap must be positive and finite, got {0}")]
    BadPowerCap(f64),
    #[error(transparent)]
    Control(#[from] ControlError),
}

/// Uniform linear array with spacing in wavelengths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArrayGeometry {
    num_elements: usize,
    spacing: f64,
}

impl ArrayGeometry {
    pub fn new(num_elements: usize, spacing: f64) -> Result<Self, BeamformingError> {
        if num_elements < 2 {
            return Err(BeamformingError::TooFewElements(num_elements));
        }
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(BeamformingError::BadSpacing(spacing));
        }
        Ok(ArrayGeometry { num_elements, spacing })
    }

    /// Array at the conventional half-wavelength spacing.
    pub fn half_wavelength(num_elements: usize) -> Result<Self, BeamformingError> {
        ArrayGeometry::new(num_elements, 0.5)
    }

    pub fn num_elements(&self) -> usize {
        self.num_elements
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }
}

fn check_angle(theta: f64) -> Result<(), BeamformingError> {
    if !(theta.is_finite() && theta.abs() < std::f64::consts::FRAC_PI_2) {
        return Err(BeamformingError::BadAngle(theta));
    }
    Ok(())
}

/// Steering vector `a_n = exp(j 2 pi spacing n sin(theta))`, `n = 0..N-1`.
///
/// Every entry has unit modulus, so `||a||^2 = N`.
pub fn steering_vector(
    array: &ArrayGeometry,
    theta: f64,
) -> Result<DVector<Complex64>, BeamformingError> {
    check_angle(theta)?;
    let phase = 2.0 * std::f64::consts::PI * array.spacing * theta.sin();
    Ok(DVector::from_fn(array.num_elements, |n, _| {
        Complex64::from_polar(1.0, phase * n as f64)
    }))
}

/// Derivative of the steering vector in the angle:
/// `a_dot_n = j 2 pi spacing n cos(theta) a_n`.
pub fn steering_derivative(
    array: &ArrayGeometry,
    theta: f64,
) -> Result<DVector<Complex64>, BeamformingError> {
    let a = steering_vector(array, theta)?;
    let scale = 2.0 * std::f64::consts::PI * array.spacing * theta.cos();
    Ok(DVector::from_fn(array.num_elements, |n, _| {
        Complex64::new(0.0, scale * n as f64) * a[n]
    }))
}

/// Link SINR `|beta|^2 |a^H w|^2 / noise_var` delivered by beam `w`.
pub fn link_sinr(
    w: &DVector<Complex64>,
    channel_gain_mag: f64,
    steering: &DVector<Complex64>,
    noise_var: f64,
) -> Result<f64, BeamformingError> {
    if w.len() != steering.len() {
        return Err(BeamformingError::MismatchedLength {
            got: w.len(),
            expected: steering.len(),
        });
    }
    if !(noise_var > 0.0 && noise_var.is_finite()) {
        return Err(BeamformingError::BadNoise(noise_var));
    }
    Ok(channel_gain_mag.powi(2) * steering.dotc(w).norm_sqr() / noise_var)
}

/// Squared derivative gain `|a_dot^H w|^2`, the quantity the angle-error
/// bound scales inversely with.
pub fn sensing_gain(
    w: &DVector<Complex64>,
    derivative: &DVector<Complex64>,
) -> Result<f64, BeamformingError> {
    if w.len() != derivative.len() {
        return Err(BeamformingError::MismatchedLength {
            got: w.len(),
            expected: derivative.len(),
        });
    }
    Ok(derivative.dotc(w).norm_sqr())
}

/// One instance of the minimum-power beam design problem.
///
/// The command link and the sensing echo share the physical channel, so the
/// link SINR and the sensing error bound both use
/// `sensing.channel_gain_mag`; `noise_var` is the communication receiver's
/// noise floor, distinct from `sensing.noise_var` at the echo receiver.
#[derive(Debug, Clone)]
pub struct P1Problem {
    pub array: ArrayGeometry,
    /// Target direction, radians off broadside.
    pub theta: f64,
    pub plant: PlantModel,
    pub gains: ControllerGain,
    pub link: LinkReliability,
    pub sensing: SensingSpec,
    pub mapping: CovMapping,
    /// Link-SINR floor; infinite means no beam can stabilize the plant.
    pub gamma_critical: f64,
    /// State the drift certificate is evaluated at.
    pub q_current: DVector<f64>,
    /// Communication receiver noise variance.
    pub noise_var: f64,
}

/// Search-grid and termination settings for [`solve_p1`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Points on the direction-mix grid over `kappa in [0, 1]`.
    pub kappa_points: usize,
    /// Relative width at which the power bisection stops.
    pub rel_tol: f64,
    /// Transmit power above which a direction is declared infeasible.
    pub power_cap: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { kappa_points: 101, rel_tol: 1e-6, power_cap: 1e6 }
    }
}

impl SolverOptions {
    fn validate(&self) -> Result<(), BeamformingError> {
        if self.kappa_points < 2 {
            return Err(BeamformingError::BadGrid(self.kappa_points));
        }
        if !(self.rel_tol > 0.0 && self.rel_tol.is_finite()) {
            return Err(BeamformingError::BadTolerance(self.rel_tol));
        }
        if !(self.power_cap > 0.0 && self.power_cap.is_finite()) {
            return Err(BeamformingError::BadPowerCap(self.power_cap));
        }
        Ok(())
    }
}

/// Why no feasible beam exists.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InfeasibleReason {
    /// Every direction needs more than the power cap.
    PowerCap,
    /// The critical SINR is infinite: the plant's instability rate exceeds
    /// what the link can carry at any power.
    InfiniteCriticalSinr,
}

/// Minimum-power beam satisfying both constraints.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub kappa: f64,
    pub weights: DVector<Complex64>,
    pub power: f64,
    pub sinr: f64,
    pub sensing_gain_sq: f64,
    pub sinr_margin: f64,
    pub drift_margin: f64,
    /// Which constraint pinned the power: "sinr", "drift", or "none" for the
    /// zero beam.
    pub binding: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SolveOutcome {
    Solved(Solution),
    Infeasible(InfeasibleReason),
}

/// Outcome of one direction-mix grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct KappaReport {
    pub kappa: f64,
    /// Minimum feasible power, or None when the direction cannot satisfy
    /// both constraints under the power cap (margins are then reported at
    /// the cap).
    pub power: Option<f64>,
    pub sinr_margin: f64,
    pub drift_margin: f64,
    pub binding: String,
}

/// Solver outcome plus the full grid scan that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub outcome: SolveOutcome,
    pub scan: Vec<KappaReport>,
}

/// Writes the grid scan as CSV with header
/// `kappa,power,sinr_margin,drift_margin,binding`. Infeasible grid points
/// leave the power field empty.
pub fn write_scan_csv<W: std::io::Write>(
    scan: &[KappaReport],
    mut out: W,
) -> std::io::Result<()> {
    writeln!(out, "kappa,power,sinr_margin,drift_margin,binding")?;
    for row in scan {
        let power = row.power.map(|p| p.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{}",
            row.kappa, power, row.sinr_margin, row.drift_margin, row.binding
        )?;
    }
    Ok(())
}

/// Constraint check of an arbitrary beam against a problem instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeasibilityReport {
    pub sinr: f64,
    pub sinr_margin: f64,
    pub sinr_ok: bool,
    pub expected_drift: f64,
    pub drift_threshold: f64,
    pub drift_margin: f64,
    pub drift_ok: bool,
}

impl FeasibilityReport {
    pub fn is_feasible(&self) -> bool {
        self.sinr_ok && self.drift_ok
    }
}

/// Evaluates both constraints at a given beam.
pub fn check_feasibility(
    w: &DVector<Complex64>,
    problem: &P1Problem,
) -> Result<FeasibilityReport, BeamformingError> {
    validate_problem(problem)?;
    let a = steering_vector(&problem.array, problem.theta)?;
    let adot = steering_derivative(&problem.array, problem.theta)?;
    let sinr = link_sinr(w, problem.sensing.channel_gain_mag, &a, problem.noise_var)?;
    let gain = sensing_gain(w, &adot)?;
    let eval = DriftEvaluator::new(&problem.q_current, &problem.plant, &problem.gains)?;
    let unit_weight = eval.error_unit_weight(&problem.sensing, &problem.mapping)?;
    let p = packet_success_prob(sinr, &problem.link);
    let bound = crate::control::crb_angle(gain, &problem.sensing)?;
    let expected_drift = eval.eval_scaled(p, unit_weight, bound);
    let drift_threshold =
        problem.gains.decay_rate() * lyapunov_value(&problem.q_current, &problem.gains);
    Ok(FeasibilityReport {
        sinr,
        sinr_margin: sinr - problem.gamma_critical,
        sinr_ok: sinr >= problem.gamma_critical,
        expected_drift,
        drift_threshold,
        drift_margin: drift_threshold - expected_drift,
        drift_ok: expected_drift <= drift_threshold,
    })
}

fn validate_problem(problem: &P1Problem) -> Result<(), BeamformingError> {
    check_angle(problem.theta)?;
    if !(problem.noise_var > 0.0 && problem.noise_var.is_finite()) {
        return Err(BeamformingError::BadNoise(problem.noise_var));
    }
    if problem.gamma_critical < 0.0 || problem.gamma_critical.is_nan() {
        return Err(BeamformingError::BadSinrFloor(problem.gamma_critical));
    }
    Ok(())
}

/// Minimizes beam power subject to the link-SINR floor and the expected
/// drift certificate at `q_current`.
///
/// For each grid point `kappa`, the minimum scale `c` for the SINR floor is
/// closed form, and the minimum scale for the drift certificate is found by
/// doubling and bisection; the larger of the two is taken. The search
/// assumes drift does not worsen as power grows along a fixed direction,
/// which holds whenever delivered commands contract the state; a final joint
/// re-check guards the assumption.
pub fn solve_p1(
    problem: &P1Problem,
    opts: &SolverOptions,
) -> Result<SolveReport, BeamformingError> {
    opts.validate()?;
    validate_problem(problem)?;
    if problem.gamma_critical.is_infinite() {
        return Ok(SolveReport {
            outcome: SolveOutcome::Infeasible(InfeasibleReason::InfiniteCriticalSinr),
            scan: Vec::new(),
        });
    }

    let a = steering_vector(&problem.array, problem.theta)?;
    let adot = steering_derivative(&problem.array, problem.theta)?;
    let a_hat = a.clone().unscale(a.norm());
    let along = a_hat.dotc(&adot);
    let d_raw = &adot - &a_hat * along;
    let d_norm = d_raw.norm();
    let d_hat = if d_norm * d_norm < DEGENERATE_DIRECTION_TOL {
        DVector::zeros(a.len())
    } else {
        d_raw.unscale(d_norm)
    };

    let eval = DriftEvaluator::new(&problem.q_current, &problem.plant, &problem.gains)?;
    let unit_weight = eval.error_unit_weight(&problem.sensing, &problem.mapping)?;
    let threshold =
        problem.gains.decay_rate() * lyapunov_value(&problem.q_current, &problem.gains);
    let beta_sq = problem.sensing.channel_gain_mag.powi(2);
    let gamma = problem.gamma_critical;

    struct Candidate {
        kappa: f64,
        dir: DVector<Complex64>,
        c: f64,
        power: f64,
        sinr: f64,
        gain: f64,
        sinr_margin: f64,
        drift_margin: f64,
        binding: String,
    }

    let mut scan = Vec::with_capacity(opts.kappa_points);
    let mut best: Option<Candidate> = None;
    for i in 0..opts.kappa_points {
        let kappa = i as f64 / (opts.kappa_points - 1) as f64;
        let dir = a_hat.scale(1.0 - kappa) + d_hat.scale(kappa);
        let dir_power = dir.norm_squared();
        let sinr_coef = beta_sq * a.dotc(&dir).norm_sqr() / problem.noise_var;
        let gain_coef = adot.dotc(&dir).norm_sqr();
        let drift_at = |c: f64| -> f64 {
            let sinr = c * c * sinr_coef;
            let p = packet_success_prob(sinr, &problem.link);
            let g = c * c * gain_coef;
            let bound = if g == 0.0 {
                f64::INFINITY
            } else {
                crate::control::crb_angle(g, &problem.sensing)
                    .expect("squared gain is non-negative")
            };
            eval.eval_scaled(p, unit_weight, bound)
        };
        let feasible = |c: f64| drift_at(c) <= threshold;

        if dir_power == 0.0 {
            // Degenerate direction: only the zero beam is reachable.
            let drift = drift_at(0.0);
            if gamma == 0.0 && drift <= threshold {
                let report = KappaReport {
                    kappa,
                    power: Some(0.0),
                    sinr_margin: 0.0,
                    drift_margin: threshold - drift,
                    binding: "none".to_string(),
                };
                scan.push(report);
                if best.as_ref().is_none_or(|b| 0.0 < b.power) {
                    best = Some(Candidate {
                        kappa,
                        dir,
                        c: 0.0,
                        power: 0.0,
                        sinr: 0.0,
                        gain: 0.0,
                        sinr_margin: 0.0,
                        drift_margin: threshold - drift,
                        binding: "none".to_string(),
                    });
                }
            } else {
                scan.push(KappaReport {
                    kappa,
                    power: None,
                    sinr_margin: -gamma,
                    drift_margin: threshold - drift,
                    binding: "infeasible".to_string(),
                });
            }
            continue;
        }

        let c_cap = (opts.power_cap / dir_power).sqrt();
        let infeasible_report = |kappa: f64| KappaReport {
            kappa,
            power: None,
            sinr_margin: c_cap * c_cap * sinr_coef - gamma,
            drift_margin: threshold - drift_at(c_cap),
            binding: "infeasible".to_string(),
        };

        let c_sinr = if gamma == 0.0 {
            0.0
        } else if sinr_coef == 0.0 {
            f64::INFINITY
        } else {
            // Nudge up so the floor holds despite rounding.
            (gamma / sinr_coef).sqrt() * (1.0 + 1e-12)
        };
        if c_sinr > c_cap {
            scan.push(infeasible_report(kappa));
            continue;
        }

        let c_drift = if feasible(0.0) {
            Some(0.0)
        } else {
            let mut lo = 0.0f64;
            let mut hi = 1e-9f64.min(c_cap);
            let mut bracketed = feasible(hi);
            while !bracketed && hi < c_cap {
                lo = hi;
                hi = (hi * 2.0).min(c_cap);
                bracketed = feasible(hi);
            }
            if bracketed {
                while hi - lo > opts.rel_tol * hi {
                    let mid = 0.5 * (lo + hi);
                    if feasible(mid) {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                Some(hi)
            } else {
                None
            }
        };
        let Some(c_drift) = c_drift else {
            scan.push(infeasible_report(kappa));
            continue;
        };

        let mut c = c_sinr.max(c_drift);
        let mut binding = if c == 0.0 {
            "none"
        } else if c_sinr >= c_drift {
            "sinr"
        } else {
            "drift"
        };
        if !feasible(c) {
            // Raising c for the SINR floor broke the drift certificate, so
            // drift is not monotone here; rebracket above c.
            let mut lo = c;
            let mut hi = (c * 2.0).max(1e-9).min(c_cap);
            let mut bracketed = feasible(hi);
            while !bracketed && hi < c_cap {
                lo = hi;
                hi = (hi * 2.0).min(c_cap);
                bracketed = feasible(hi);
            }
            if !bracketed {
                scan.push(infeasible_report(kappa));
                continue;
            }
            while hi - lo > opts.rel_tol * hi {
                let mid = 0.5 * (lo + hi);
                if feasible(mid) {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            c = hi;
            binding = "drift";
        }
        let power = c * c * dir_power;
        if power > opts.power_cap {
            scan.push(infeasible_report(kappa));
            continue;
        }
        let sinr = c * c * sinr_coef;
        let gain = c * c * gain_coef;
        let sinr_margin = sinr - gamma;
        let drift_margin = threshold - drift_at(c);
        scan.push(KappaReport {
            kappa,
            power: Some(power),
            sinr_margin,
            drift_margin,
            binding: binding.to_string(),
        });
        if best.as_ref().is_none_or(|b| power < b.power) {
            best = Some(Candidate {
                kappa,
                dir,
                c,
                power,
                sinr,
                gain,
                sinr_margin,
                drift_margin,
                binding: binding.to_string(),
            });
        }
    }

    let outcome = match best {
        None => SolveOutcome::Infeasible(InfeasibleReason::PowerCap),
        Some(cand) => SolveOutcome::Solved(Solution {
            kappa: cand.kappa,
            weights: cand.dir.scale(cand.c),
            power: cand.power,
            sinr: cand.sinr,
            sensing_gain_sq: cand.gain,
            sinr_margin: cand.sinr_margin,
            drift_margin: cand.drift_margin,
            binding: cand.binding,
        }),
    };
    Ok(SolveReport { outcome, scan })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn scalar_plant(a: f64, b: f64, qn: f64) -> PlantModel {
        PlantModel::new(
            DMatrix::from_row_slice(1, 1, &[a]),
            DMatrix::from_row_slice(1, 1, &[b]),
            DMatrix::from_row_slice(1, 1, &[qn]),
        )
        .unwrap()
    }

    fn scalar_gain(g: f64, p: f64, eta: f64) -> ControllerGain {
        ControllerGain::new(
            DMatrix::from_row_slice(1, 1, &[g]),
            DMatrix::from_row_slice(1, 1, &[p]),
            eta,
        )
        .unwrap()
    }

    fn base_problem() -> P1Problem {
        P1Problem {
            array: ArrayGeometry::half_wavelength(4).unwrap(),
            theta: 0.5,
            plant: scalar_plant(2.0, 1.0, 0.0),
            gains: scalar_gain(1.9, 1.0, 0.9),
            link: LinkReliability::new(2.0, 1.0).unwrap(),
            sensing: SensingSpec::new(1.0, 1, 1, 1.0, 1.0).unwrap(),
            mapping: CovMapping::default(),
            gamma_critical: 1.0,
            q_current: DVector::from_vec(vec![1.0]),
            noise_var: 1.0,
        }
    }

    #[test]
    fn steering_vector_has_unit_modulus_entries() {
        let array = ArrayGeometry::half_wavelength(8).unwrap();
        let a = steering_vector(&array, 0.7).unwrap();
        assert_relative_eq!(a.norm_squared(), 8.0, max_relative = 1e-12);
        for entry in a.iter() {
            assert_relative_eq!(entry.norm(), 1.0, max_relative = 1e-12);
        }
        assert_eq!(a[0], num_complex::Complex64::new(1.0, 0.0));
    }

    #[test]
    fn steering_rejects_endfire_angles() {
        let array = ArrayGeometry::half_wavelength(4).unwrap();
        assert!(steering_vector(&array, std::f64::consts::FRAC_PI_2).is_err());
        assert!(steering_vector(&array, -std::f64::consts::FRAC_PI_2).is_err());
        assert!(steering_vector(&array, f64::NAN).is_err());
        assert!(ArrayGeometry::half_wavelength(1).is_err());
        assert!(ArrayGeometry::new(4, 0.0).is_err());
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let array = ArrayGeometry::half_wavelength(6).unwrap();
        let theta = 0.3;
        let h = 1e-6;
        let plus = steering_vector(&array, theta + h).unwrap();
        let minus = steering_vector(&array, theta - h).unwrap();
        let fd = (plus - minus).unscale(2.0 * h);
        let analytic = steering_derivative(&array, theta).unwrap();
        let err = (&fd - &analytic).norm() / analytic.norm();
        assert!(err < 1e-6, "relative error {err}");
    }

    #[test]
    fn link_sinr_of_matched_beam() {
        let array = ArrayGeometry::half_wavelength(4).unwrap();
        let a = steering_vector(&array, 0.2).unwrap();
        // w = a gives |a^H a|^2 = N^2.
        let sinr = link_sinr(&a, 2.0, &a, 0.5).unwrap();
        assert_relative_eq!(sinr, 4.0 * 16.0 / 0.5, max_relative = 1e-12);
    }

    #[test]
    fn gains_are_invariant_to_global_beam_phase() {
        let array = ArrayGeometry::half_wavelength(5).unwrap();
        let a = steering_vector(&array, 0.4).unwrap();
        let adot = steering_derivative(&array, 0.4).unwrap();
        let w = &a + &adot.scale(0.3);
        let rotated = &w * num_complex::Complex64::from_polar(1.0, 1.234);
        let sinr = link_sinr(&w, 1.5, &a, 1.0).unwrap();
        let sinr_rot = link_sinr(&rotated, 1.5, &a, 1.0).unwrap();
        assert_relative_eq!(sinr, sinr_rot, max_relative = 1e-12);
        let g = sensing_gain(&w, &adot).unwrap();
        let g_rot = sensing_gain(&rotated, &adot).unwrap();
        assert_relative_eq!(g, g_rot, max_relative = 1e-12);
    }

    #[test]
    fn span_projection_preserves_both_gains_at_less_power() {
        let array = ArrayGeometry::half_wavelength(6).unwrap();
        let a = steering_vector(&array, 0.25).unwrap();
        let adot = steering_derivative(&array, 0.25).unwrap();
        let a_hat = a.clone().unscale(a.norm());
        let d_raw = &adot - &a_hat * a_hat.dotc(&adot);
        let d_hat = d_raw.clone().unscale(d_raw.norm());
        // An arbitrary beam with a component outside span{a, a_dot}.
        let mut w = DVector::from_fn(6, |n, _| {
            num_complex::Complex64::new(0.3 * n as f64 - 0.8, 1.1 - 0.25 * n as f64)
        });
        w[3] += num_complex::Complex64::new(2.0, -1.0);
        let proj = &a_hat * a_hat.dotc(&w) + &d_hat * d_hat.dotc(&w);
        assert_relative_eq!(
            link_sinr(&proj, 1.0, &a, 1.0).unwrap(),
            link_sinr(&w, 1.0, &a, 1.0).unwrap(),
            max_relative = 1e-9
        );
        assert_relative_eq!(
            sensing_gain(&proj, &adot).unwrap(),
            sensing_gain(&w, &adot).unwrap(),
            max_relative = 1e-9
        );
        assert!(proj.norm_squared() < w.norm_squared());
    }

    #[test]
    fn slack_drift_recovers_closed_form_power() {
        // A stable plant with zero feedback never needs the link, so only
        // the SINR floor binds and the steering beam at kappa = 0 is
        // optimal: power = gamma * noise / (beta^2 N).
        let mut problem = base_problem();
        problem.plant = scalar_plant(0.5, 1.0, 0.0);
        problem.gains = scalar_gain(0.0, 1.0, 0.9);
        problem.gamma_critical = 2.0;
        problem.sensing = SensingSpec::new(1.0, 1, 1, 1.5, 1.0).unwrap();
        problem.noise_var = 0.7;
        let report = solve_p1(&problem, &SolverOptions::default()).unwrap();
        let SolveOutcome::Solved(sol) = report.outcome else {
            panic!("expected a solution")
        };
        let expected = 2.0 * 0.7 / (1.5 * 1.5 * 4.0);
        assert_eq!(sol.kappa, 0.0);
        assert_relative_eq!(sol.power, expected, max_relative = 1e-9);
        assert_eq!(sol.binding, "sinr");
        assert!(sol.sinr_margin >= 0.0);
        assert_eq!(report.scan.len(), 101);
    }

    #[test]
    fn drift_binding_when_sinr_floor_is_low() {
        let mut problem = base_problem();
        problem.gamma_critical = 0.01;
        let report = solve_p1(&problem, &SolverOptions::default()).unwrap();
        let SolveOutcome::Solved(sol) = report.outcome else {
            panic!("expected a solution")
        };
        assert_eq!(sol.binding, "drift");
        assert!(sol.sinr_margin >= -1e-9, "sinr margin {}", sol.sinr_margin);
        assert!(sol.drift_margin >= -1e-9, "drift margin {}", sol.drift_margin);
        // Bisection stops just above the boundary.
        assert!(sol.drift_margin < 0.05, "drift margin {}", sol.drift_margin);
        let check = check_feasibility(&sol.weights, &problem).unwrap();
        assert!(check.is_feasible(), "{check:?}");
    }

    #[test]
    fn solution_margins_match_feasibility_report() {
        let problem = base_problem();
        let report = solve_p1(&problem, &SolverOptions::default()).unwrap();
        let SolveOutcome::Solved(sol) = report.outcome else {
            panic!("expected a solution")
        };
        let check = check_feasibility(&sol.weights, &problem).unwrap();
        assert!(check.is_feasible(), "{check:?}");
        assert_relative_eq!(check.sinr_margin, sol.sinr_margin, max_relative = 1e-9);
        assert_relative_eq!(
            check.drift_margin,
            sol.drift_margin,
            max_relative = 1e-6,
            epsilon = 1e-9
        );
    }

    #[test]
    fn infinite_sinr_floor_is_reported_as_such() {
        let mut problem = base_problem();
        problem.gamma_critical = f64::INFINITY;
        let report = solve_p1(&problem, &SolverOptions::default()).unwrap();
        assert_eq!(
            report.outcome,
            SolveOutcome::Infeasible(InfeasibleReason::InfiniteCriticalSinr)
        );
        assert!(report.scan.is_empty());
    }

    #[test]
    fn tiny_power_cap_is_infeasible() {
        let problem = base_problem();
        let opts = SolverOptions { power_cap: 1e-12, ..SolverOptions::default() };
        let report = solve_p1(&problem, &opts).unwrap();
        assert_eq!(report.outcome, SolveOutcome::Infeasible(InfeasibleReason::PowerCap));
        assert_eq!(report.scan.len(), 101);
        assert!(report.scan.iter().all(|r| r.power.is_none()));
        assert!(report.scan.iter().all(|r| r.binding == "infeasible"));
    }

    #[test]
    fn scan_csv_has_expected_shape() {
        let problem = base_problem();
        let report = solve_p1(&problem, &SolverOptions::default()).unwrap();
        let mut buf = Vec::new();
        write_scan_csv(&report.scan, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "kappa,power,sinr_margin,drift_margin,binding"
        );
        assert_eq!(lines.count(), 101);
    }

    #[test]
    fn solver_rejects_bad_options() {
        let problem = base_problem();
        assert!(solve_p1(
            &problem,
            &SolverOptions { kappa_points: 1, ..SolverOptions::default() }
        )
        .is_err());
        assert!(solve_p1(
            &problem,
            &SolverOptions { rel_tol: 0.0, ..SolverOptions::default() }
        )
        .is_err());
        assert!(solve_p1(
            &problem,
            &SolverOptions { power_cap: f64::INFINITY, ..SolverOptions::default() }
        )
        .is_err());
    }
}
