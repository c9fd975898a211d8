//! Communication, sensing, and control closed loop.
//!
//! A discrete-time plant `q_{t+1} = A q_t + alpha_t B u_t + n_t` is driven by
//! feedback `u_t = -G q_hat_t` computed from a sensed state estimate. The
//! wireless link erases commands: `alpha_t` is Bernoulli with success
//! probability given by a sigmoid in the link SINR. Sensing accuracy enters
//! through the angle-estimation error bound, which maps (scaled by slant
//! range) into the covariance of the state-estimate error `e_t` in
//! `q_hat_t = q_t - e_t`.
//!
//! Stability is certified per state via the expected one-step Lyapunov drift
//! `E[V(q_{t+1}) | q_t] <= eta * V(q_t)` with `V(q) = q' P q`, and globally
//! via the instability-rate floor: a plant with topological entropy `H` bits
//! per step over a link carrying `B` bits per step needs
//! `SINR >= 2^(H/B) - 1` to be stabilizable at all.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::rng;

/// Divergence ceiling on the state norm used when none is configured.
pub const DEFAULT_DIVERGENCE_CEILING: f64 = 1e6;

/// Eigenvalue magnitudes within this distance of 1 count as stable when
/// summing topological entropy.
const UNIT_CIRCLE_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ControlError {
    #[error("matrix {name} must be square, got {rows}x{cols}")]
    NotSquare { name: &'static str, rows: usize, cols: usize },
    #[error("{name} has {rows}x{cols} shape, expected {expected_rows}x{expected_cols}")]
    DimensionMismatch {
        name: &'static str,
        rows: usize,
        cols: usize,
        expected_rows: usize,
        expected_cols: usize,
    },
    #[error("{0} must be symmetric positive semidefinite")]
    NotPsd(&'static str),
    #[error("{0} must be symmetric positive definite")]
    NotPd(&'static str),
    #[error("decay rate must lie in (0, 1), got {0}")]
    BadDecayRate(f64),
    #[error("sigmoid steepness must be positive and finite, got {0}")]
    BadSteepness(f64),
    #[error("sinr threshold must be non-negative and finite, got {0}")]
    BadThreshold(f64),
    #[error("{name} must be positive and finite, got {value}")]
    BadPositive { name: &'static str, value: f64 },
    #[error("success probability must lie in [0, 1], got {0}")]
    BadProbability(f64),
    #[error("beam gain must be non-negative, got {0}")]
    BadBeamGain(f64),
    #[error("error bound must be non-negative, got {0}")]
    BadErrorBound(f64),
    #[error("entropy must be non-negative and finite, got {0}")]
    BadEntropy(f64),
    #[error("bits-per-step capacity must be positive and finite, got {0}")]
    BadBandwidth(f64),
    #[error("simulation needs horizon >= 1 and replicates >= 1")]
    EmptySimulation,
    #[error("per-step schedule must not be empty")]
    EmptySchedule,
}

fn check_matrix_scale(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(1.0f64, |acc, &v| acc.max(v.abs()))
}

fn is_symmetric(m: &DMatrix<f64>) -> bool {
    if m.nrows() != m.ncols() {
        return false;
    }
    let tol = 1e-9 * check_matrix_scale(m);
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            if (m[(i, j)] - m[(j, i)]).abs() > tol {
                return false;
            }
        }
    }
    true
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |acc, &v| acc.min(v))
}

/// Discrete-time linear plant with additive Gaussian process noise.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantModel {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    process_noise: DMatrix<f64>,
}

impl PlantModel {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        process_noise: DMatrix<f64>,
    ) -> Result<Self, ControlError> {
        if a.nrows() != a.ncols() {
            return Err(ControlError::NotSquare { name: "A", rows: a.nrows(), cols: a.ncols() });
        }
        let d = a.nrows();
        if b.nrows() != d || b.ncols() == 0 {
            return Err(ControlError::DimensionMismatch {
                name: "B",
                rows: b.nrows(),
                cols: b.ncols(),
                expected_rows: d,
                expected_cols: b.ncols().max(1),
            });
        }
        if process_noise.nrows() != d || process_noise.ncols() != d {
            return Err(ControlError::DimensionMismatch {
                name: "process noise covariance",
                rows: process_noise.nrows(),
                cols: process_noise.ncols(),
                expected_rows: d,
                expected_cols: d,
            });
        }
        let scale = check_matrix_scale(&process_noise);
        if !is_symmetric(&process_noise) || min_eigenvalue(&process_noise) < -1e-10 * scale {
            return Err(ControlError::NotPsd("process noise covariance"));
        }
        Ok(PlantModel { a, b, process_noise })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn process_noise(&self) -> &DMatrix<f64> {
        &self.process_noise
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }
}

/// Feedback gain with the Lyapunov certificate it is checked against.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerGain {
    feedback: DMatrix<f64>,
    lyapunov: DMatrix<f64>,
    decay_rate: f64,
}

impl ControllerGain {
    pub fn new(
        feedback: DMatrix<f64>,
        lyapunov: DMatrix<f64>,
        decay_rate: f64,
    ) -> Result<Self, ControlError> {
        if lyapunov.nrows() != lyapunov.ncols() {
            return Err(ControlError::NotSquare {
                name: "P",
                rows: lyapunov.nrows(),
                cols: lyapunov.ncols(),
            });
        }
        if feedback.ncols() != lyapunov.nrows() || feedback.nrows() == 0 {
            return Err(ControlError::DimensionMismatch {
                name: "feedback gain",
                rows: feedback.nrows(),
                cols: feedback.ncols(),
                expected_rows: feedback.nrows().max(1),
                expected_cols: lyapunov.nrows(),
            });
        }
        if !is_symmetric(&lyapunov) || min_eigenvalue(&lyapunov) <= 0.0 {
            return Err(ControlError::NotPd("P"));
        }
        if !(decay_rate > 0.0 && decay_rate < 1.0) {
            return Err(ControlError::BadDecayRate(decay_rate));
        }
        Ok(ControllerGain { feedback, lyapunov, decay_rate })
    }

    pub fn feedback(&self) -> &DMatrix<f64> {
        &self.feedback
    }

    pub fn lyapunov(&self) -> &DMatrix<f64> {
        &self.lyapunov
    }

    pub fn decay_rate(&self) -> f64 {
        self.decay_rate
    }
}

/// Packet-success curve of the command link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkReliability {
    /// Sigmoid steepness per unit of linear SINR.
    pub steepness: f64,
    /// Linear SINR at which delivery probability is one half.
    pub sinr_threshold: f64,
}

impl LinkReliability {
    pub fn new(steepness: f64, sinr_threshold: f64) -> Result<Self, ControlError> {
        if !(steepness > 0.0 && steepness.is_finite()) {
            return Err(ControlError::BadSteepness(steepness));
        }
        if !(sinr_threshold >= 0.0 && sinr_threshold.is_finite()) {
            return Err(ControlError::BadThreshold(sinr_threshold));
        }
        Ok(LinkReliability { steepness, sinr_threshold })
    }
}

/// Echo-path parameters that set angle-estimation accuracy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensingSpec {
    /// Sensing noise variance at the receive array.
    pub noise_var: f64,
    /// Coherent snapshots accumulated per estimate.
    pub snapshots: u32,
    /// Receive antennas.
    pub rx_antennas: u32,
    /// Two-way channel gain magnitude |beta|.
    pub channel_gain_mag: f64,
    /// Slant range to the target, meters; converts angle error to position
    /// error.
    pub slant_range: f64,
}

impl SensingSpec {
    pub fn new(
        noise_var: f64,
        snapshots: u32,
        rx_antennas: u32,
        channel_gain_mag: f64,
        slant_range: f64,
    ) -> Result<Self, ControlError> {
        for (name, value) in [
            ("sensing noise variance", noise_var),
            ("channel gain magnitude", channel_gain_mag),
            ("slant range", slant_range),
        ] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(ControlError::BadPositive { name, value });
            }
        }
        if snapshots == 0 {
            return Err(ControlError::BadPositive { name: "snapshots", value: 0.0 });
        }
        if rx_antennas == 0 {
            return Err(ControlError::BadPositive { name: "rx antennas", value: 0.0 });
        }
        Ok(SensingSpec { noise_var, snapshots, rx_antennas, channel_gain_mag, slant_range })
    }
}

/// How a scalar angle-error bound spreads over the plant state.
///
/// The first `num_positions` coordinates (default: half the state, rounded
/// up) are positions and receive the range-scaled variance directly;
/// the rest are velocities and receive it scaled by
/// `velocity_factor / step_dt^2`. The default factor of zero leaves the
/// velocity block noiseless.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovMapping {
    pub velocity_factor: f64,
    pub step_dt: f64,
    pub num_positions: Option<usize>,
}

impl Default for CovMapping {
    fn default() -> Self {
        CovMapping { velocity_factor: 0.0, step_dt: 1.0, num_positions: None }
    }
}

impl CovMapping {
    fn positions(&self, dim: usize) -> usize {
        self.num_positions.unwrap_or(dim.div_ceil(2)).min(dim)
    }

    fn validate(&self) -> Result<(), ControlError> {
        if !(self.velocity_factor >= 0.0 && self.velocity_factor.is_finite()) {
            return Err(ControlError::BadPositive {
                name: "velocity factor",
                value: self.velocity_factor,
            });
        }
        if !(self.step_dt > 0.0 && self.step_dt.is_finite()) {
            return Err(ControlError::BadPositive { name: "step dt", value: self.step_dt });
        }
        Ok(())
    }
}

/// State-estimate error covariance, or the flag that sensing is blind.
#[derive(Debug, Clone, PartialEq)]
pub enum SensingCov {
    Bounded(DMatrix<f64>),
    /// Infinite error bound: there is no usable estimate this step, and
    /// callers must treat it as a sensing outage.
    Unbounded,
}

/// Probability that a command packet survives the link at `sinr` (linear).
pub fn packet_success_prob(sinr: f64, link: &LinkReliability) -> f64 {
    1.0 / (1.0 + (-link.steepness * (sinr - link.sinr_threshold)).exp())
}

/// Draws one packet-delivery outcome.
pub fn sample_packet<R: Rng + ?Sized>(p: f64, rng: &mut R) -> Result<bool, ControlError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(ControlError::BadProbability(p));
    }
    Ok(rng.random_bool(p))
}

/// Angle-estimation error bound for a beam with squared derivative gain
/// `beam_gain_sq = |a_dot^H w|^2`.
///
/// Returns infinity when the gain is zero: the beam carries no angular
/// information and the configuration is sensing-blind.
pub fn crb_angle(beam_gain_sq: f64, spec: &SensingSpec) -> Result<f64, ControlError> {
    if beam_gain_sq < 0.0 || beam_gain_sq.is_nan() {
        return Err(ControlError::BadBeamGain(beam_gain_sq));
    }
    if beam_gain_sq == 0.0 {
        return Ok(f64::INFINITY);
    }
    let denom = 2.0
        * spec.snapshots as f64
        * spec.channel_gain_mag.powi(2)
        * spec.rx_antennas as f64
        * beam_gain_sq;
    Ok(spec.noise_var / denom)
}

/// Maps a scalar angle-error bound into a state-estimate error covariance.
///
/// Position variance is `slant_range^2 * error_bound`; the velocity block
/// follows [`CovMapping`]. The result is diagonal, hence symmetric PSD.
pub fn sensing_error_cov(
    error_bound: f64,
    spec: &SensingSpec,
    plant_dim: usize,
    mapping: &CovMapping,
) -> Result<SensingCov, ControlError> {
    if error_bound < 0.0 || error_bound.is_nan() {
        return Err(ControlError::BadErrorBound(error_bound));
    }
    mapping.validate()?;
    if error_bound.is_infinite() {
        return Ok(SensingCov::Unbounded);
    }
    let pos_var = spec.slant_range.powi(2) * error_bound;
    let vel_var = pos_var * mapping.velocity_factor / mapping.step_dt.powi(2);
    let positions = mapping.positions(plant_dim);
    let mut cov = DMatrix::zeros(plant_dim, plant_dim);
    for i in 0..plant_dim {
        cov[(i, i)] = if i < positions { pos_var } else { vel_var };
    }
    Ok(SensingCov::Bounded(cov))
}

/// Feedback law `u = -G q_hat`.
pub fn control_law(
    q_hat: &DVector<f64>,
    gains: &ControllerGain,
) -> Result<DVector<f64>, ControlError> {
    if q_hat.len() != gains.feedback.ncols() {
        return Err(ControlError::DimensionMismatch {
            name: "state estimate",
            rows: q_hat.len(),
            cols: 1,
            expected_rows: gains.feedback.ncols(),
            expected_cols: 1,
        });
    }
    Ok(-(&gains.feedback * q_hat))
}

/// One plant step `A q + alpha B u + n` with `alpha` already decided.
pub fn step_dynamics(
    q: &DVector<f64>,
    u: &DVector<f64>,
    delivered: bool,
    noise: &DVector<f64>,
    plant: &PlantModel,
) -> Result<DVector<f64>, ControlError> {
    if q.len() != plant.state_dim() || noise.len() != plant.state_dim() {
        return Err(ControlError::DimensionMismatch {
            name: "state",
            rows: q.len(),
            cols: 1,
            expected_rows: plant.state_dim(),
            expected_cols: 1,
        });
    }
    if u.len() != plant.input_dim() {
        return Err(ControlError::DimensionMismatch {
            name: "input",
            rows: u.len(),
            cols: 1,
            expected_rows: plant.input_dim(),
            expected_cols: 1,
        });
    }
    let mut next = &plant.a * q + noise;
    if delivered {
        next += &plant.b * u;
    }
    Ok(next)
}

/// Lyapunov value `q' P q`.
pub fn lyapunov_value(q: &DVector<f64>, gains: &ControllerGain) -> f64 {
    (q.transpose() * &gains.lyapunov * q)[(0, 0)]
}

/// Closed-form one-step expected Lyapunov value.
///
/// With delivery probability `p`, estimate error covariance `sigma`, and
/// process noise `Q_n`:
///
/// ```text
/// E[V(q+)] = p * q'(A-BG)'P(A-BG)q + (1-p) * q'A'PAq
///          + p * tr(P B G sigma G'B') + tr(P Q_n)
/// ```
///
/// The form assumes the delivery flag, estimate error, and process noise are
/// mutually independent within the step.
pub fn expected_drift(
    q: &DVector<f64>,
    p: f64,
    sigma: &DMatrix<f64>,
    plant: &PlantModel,
    gains: &ControllerGain,
) -> Result<f64, ControlError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(ControlError::BadProbability(p));
    }
    let d = plant.state_dim();
    if sigma.nrows() != d || sigma.ncols() != d {
        return Err(ControlError::DimensionMismatch {
            name: "estimate error covariance",
            rows: sigma.nrows(),
            cols: sigma.ncols(),
            expected_rows: d,
            expected_cols: d,
        });
    }
    let scale = check_matrix_scale(sigma);
    if !is_symmetric(sigma) || min_eigenvalue(sigma) < -1e-10 * scale {
        return Err(ControlError::NotPsd("estimate error covariance"));
    }
    let eval = DriftEvaluator::new(q, plant, gains)?;
    Ok(eval.eval_with_cov(p, sigma))
}

/// Precomputed pieces of the expected-drift form, for callers that sweep
/// delivery probability and sensing covariance with the plant and state
/// fixed (the beam design search does exactly that).
#[derive(Debug, Clone)]
pub struct DriftEvaluator {
    /// q'(A-BG)'P(A-BG)q.
    closed_term: f64,
    /// q'A'PAq.
    open_term: f64,
    /// tr(P Q_n).
    noise_floor: f64,
    /// M = G'B'P B G, the weight the estimate error enters with.
    error_weight: DMatrix<f64>,
}

impl DriftEvaluator {
    pub fn new(
        q: &DVector<f64>,
        plant: &PlantModel,
        gains: &ControllerGain,
    ) -> Result<Self, ControlError> {
        let d = plant.state_dim();
        if q.len() != d || gains.lyapunov.nrows() != d {
            return Err(ControlError::DimensionMismatch {
                name: "state",
                rows: q.len(),
                cols: 1,
                expected_rows: d,
                expected_cols: 1,
            });
        }
        if gains.feedback.ncols() != d || gains.feedback.nrows() != plant.input_dim() {
            return Err(ControlError::DimensionMismatch {
                name: "feedback gain",
                rows: gains.feedback.nrows(),
                cols: gains.feedback.ncols(),
                expected_rows: plant.input_dim(),
                expected_cols: d,
            });
        }
        let p_mat = &gains.lyapunov;
        let closed = &plant.a - &plant.b * &gains.feedback;
        let closed_q = &closed * q;
        let open_q = &plant.a * q;
        let bg = &plant.b * &gains.feedback;
        let error_weight = bg.transpose() * p_mat * &bg;
        Ok(DriftEvaluator {
            closed_term: (closed_q.transpose() * p_mat * &closed_q)[(0, 0)],
            open_term: (open_q.transpose() * p_mat * &open_q)[(0, 0)],
            noise_floor: (p_mat * &plant.process_noise).trace(),
            error_weight,
        })
    }

    /// Expected next Lyapunov value with an explicit covariance matrix.
    pub fn eval_with_cov(&self, p: f64, sigma: &DMatrix<f64>) -> f64 {
        let error_term = (&self.error_weight * sigma).trace();
        self.combine(p, error_term)
    }

    /// Drift contribution per unit of angle-error bound: `tr(M Sigma_unit)`
    /// where `Sigma_unit` is the [`CovMapping`] image of a unit bound. The
    /// covariance is linear in the bound, so one evaluation covers every
    /// bound via [`DriftEvaluator::eval_scaled`].
    pub fn error_unit_weight(
        &self,
        spec: &SensingSpec,
        mapping: &CovMapping,
    ) -> Result<f64, ControlError> {
        let dim = self.error_weight.nrows();
        let unit = match sensing_error_cov(1.0, spec, dim, mapping)? {
            SensingCov::Bounded(cov) => cov,
            SensingCov::Unbounded => unreachable!("unit bound is finite"),
        };
        Ok((&self.error_weight * &unit).trace())
    }

    /// Expected next Lyapunov value at an angle-error bound, given the
    /// precomputed unit weight. An infinite bound yields infinity unless the
    /// error enters with zero weight.
    pub fn eval_scaled(&self, p: f64, unit_weight: f64, error_bound: f64) -> f64 {
        let error_term = if unit_weight == 0.0 { 0.0 } else { unit_weight * error_bound };
        self.combine(p, error_term)
    }

    fn combine(&self, p: f64, error_term: f64) -> f64 {
        let delivery = if p == 0.0 { 0.0 } else { p * (self.closed_term + error_term) };
        delivery + (1.0 - p) * self.open_term + self.noise_floor
    }
}

/// Verdict of the per-state drift certificate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DriftOutcome {
    /// `E[V(q+)] <= eta V(q)` holds with the given slack.
    Satisfied { margin: f64 },
    /// The certificate fails by the given excess.
    Violated { excess: f64 },
    /// The certificate fails, but only because `V(q) = 0` while the noise
    /// floor is positive; no gain can satisfy a multiplicative decay there.
    NoiseFloorBound { excess: f64 },
}

/// Checks `E[V(q+)] <= eta V(q)` at one state.
pub fn drift_certificate(
    q: &DVector<f64>,
    p: f64,
    sigma: &DMatrix<f64>,
    plant: &PlantModel,
    gains: &ControllerGain,
) -> Result<DriftOutcome, ControlError> {
    let expected = expected_drift(q, p, sigma, plant, gains)?;
    let v = lyapunov_value(q, gains);
    let threshold = gains.decay_rate * v;
    if expected <= threshold {
        Ok(DriftOutcome::Satisfied { margin: threshold - expected })
    } else if v == 0.0 {
        Ok(DriftOutcome::NoiseFloorBound { excess: expected - threshold })
    } else {
        Ok(DriftOutcome::Violated { excess: expected - threshold })
    }
}

/// Topological entropy of the plant in bits per step: the sum of
/// `log2 |lambda|` over unstable eigenvalues. Magnitudes within 1e-9 of the
/// unit circle count as stable.
pub fn topological_entropy(a: &DMatrix<f64>) -> Result<f64, ControlError> {
    if a.nrows() != a.ncols() {
        return Err(ControlError::NotSquare { name: "A", rows: a.nrows(), cols: a.ncols() });
    }
    Ok(a.complex_eigenvalues()
        .iter()
        .map(|lambda| lambda.norm())
        .filter(|&m| m > 1.0 + UNIT_CIRCLE_TOL)
        .map(f64::log2)
        .sum())
}

/// Minimum link SINR at which the plant's state information can cross the
/// link fast enough to stabilize it: `2^(H/B) - 1` for entropy `H` and a
/// link carrying `B` bits per step.
///
/// Returns infinity when `H/B` overflows; there is no finite SINR that
/// stabilizes such a plant over such a link.
pub fn critical_sinr(entropy_bits: f64, bits_per_step: f64) -> Result<f64, ControlError> {
    if !(entropy_bits >= 0.0 && entropy_bits.is_finite()) {
        return Err(ControlError::BadEntropy(entropy_bits));
    }
    if !(bits_per_step > 0.0 && bits_per_step.is_finite()) {
        return Err(ControlError::BadBandwidth(bits_per_step));
    }
    Ok(2f64.powf(entropy_bits / bits_per_step) - 1.0)
}

/// Link and sensing conditions for one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepCondition {
    /// Link SINR, linear.
    pub sinr: f64,
    /// Squared sensing beam gain `|a_dot^H w|^2`.
    pub beam_gain_sq: f64,
}

/// Per-step operating conditions over the horizon.
#[derive(Debug, Clone, PartialEq)]
pub enum BeamSchedule {
    Constant(StepCondition),
    /// One entry per step; shorter schedules hold their last entry.
    PerStep(Vec<StepCondition>),
}

impl BeamSchedule {
    fn at(&self, t: usize) -> StepCondition {
        match self {
            BeamSchedule::Constant(c) => *c,
            BeamSchedule::PerStep(list) => list[t.min(list.len() - 1)],
        }
    }

    fn validate(&self) -> Result<(), ControlError> {
        match self {
            BeamSchedule::Constant(_) => Ok(()),
            BeamSchedule::PerStep(list) if list.is_empty() => Err(ControlError::EmptySchedule),
            BeamSchedule::PerStep(_) => Ok(()),
        }
    }
}

/// Replication and horizon settings for the closed-loop simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationOptions {
    pub horizon: usize,
    pub replicates: usize,
    pub seed: u64,
    pub initial_state: DVector<f64>,
    /// State-norm ceiling past which a replicate is flagged diverged and
    /// frozen.
    pub divergence_ceiling: f64,
}

/// Cross-replicate statistics for one time index.
#[derive(Debug, Clone, PartialEq)]
pub struct StepStats {
    pub t: usize,
    /// Mean state norm; diverged replicates contribute their frozen
    /// last value.
    pub mean_norm: f64,
    /// 5th and 95th percentile of the state norm (nearest rank).
    pub p05_norm: f64,
    pub p95_norm: f64,
    pub mean_v: f64,
    /// Fraction of delivered packets on the transition into this step;
    /// zero at t = 0 where no packet has been sent yet.
    pub packet_rate: f64,
    /// Fraction of replicates diverged at or before this step.
    pub diverged_frac: f64,
}

/// Aggregated closed-loop simulation output.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryStats {
    pub steps: Vec<StepStats>,
    /// Delivered fraction over every packet sampled in the run.
    pub packet_success_rate: f64,
    /// Final fraction of diverged replicates.
    pub diverged_fraction: f64,
}

impl TrajectoryStats {
    /// Writes the per-step table as CSV with header
    /// `t,mean_norm,p05_norm,p95_norm,mean_V,packet_rate,diverged_frac`.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,mean_norm,p05_norm,p95_norm,mean_V,packet_rate,diverged_frac")?;
        for s in &self.steps {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                s.t, s.mean_norm, s.p05_norm, s.p95_norm, s.mean_v, s.packet_rate, s.diverged_frac
            )?;
        }
        Ok(())
    }
}

/// Zero-mean Gaussian sampler from a PSD covariance.
struct GaussianFactor {
    factor: DMatrix<f64>,
    zero: bool,
}

impl GaussianFactor {
    fn new(cov: &DMatrix<f64>) -> Self {
        let zero = cov.iter().all(|&v| v == 0.0);
        if zero {
            return GaussianFactor { factor: cov.clone_owned(), zero: true };
        }
        let sym = (cov + cov.transpose()) * 0.5;
        let eig = sym.symmetric_eigen();
        let mut factor = eig.eigenvectors.clone();
        for (j, &lambda) in eig.eigenvalues.iter().enumerate() {
            let s = lambda.max(0.0).sqrt();
            for i in 0..factor.nrows() {
                factor[(i, j)] *= s;
            }
        }
        GaussianFactor { factor, zero: false }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let d = self.factor.nrows();
        if self.zero {
            return DVector::zeros(d);
        }
        let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.factor * z
    }
}

struct ReplicateTrace {
    norms: Vec<f64>,
    lyap: Vec<f64>,
    packets: Vec<Option<bool>>,
    diverged_at: Option<usize>,
}

/// Runs the closed loop over `opts.horizon` steps and `opts.replicates`
/// independent replicates.
///
/// Each step draws the sensing error (fresh, independent across steps), the
/// packet outcome, and the process noise, in that order, from the
/// replicate's own stream; results are reproducible for a fixed seed
/// regardless of parallel scheduling. A step whose sensing error bound is
/// infinite is a sensing outage: the controller reuses its previous estimate
/// (initially the known initial state) and the packet is still sent.
/// Replicates whose state norm passes the divergence ceiling are frozen and
/// reported through `diverged_frac`.
pub fn simulate_closed_loop(
    plant: &PlantModel,
    gains: &ControllerGain,
    link: &LinkReliability,
    sensing: &SensingSpec,
    mapping: &CovMapping,
    schedule: &BeamSchedule,
    opts: &SimulationOptions,
) -> Result<TrajectoryStats, ControlError> {
    if opts.horizon == 0 || opts.replicates == 0 {
        return Err(ControlError::EmptySimulation);
    }
    if opts.divergence_ceiling <= 0.0 || opts.divergence_ceiling.is_nan() {
        return Err(ControlError::BadPositive {
            name: "divergence ceiling",
            value: opts.divergence_ceiling,
        });
    }
    let d = plant.state_dim();
    if opts.initial_state.len() != d {
        return Err(ControlError::DimensionMismatch {
            name: "initial state",
            rows: opts.initial_state.len(),
            cols: 1,
            expected_rows: d,
            expected_cols: 1,
        });
    }
    if gains.feedback.ncols() != d || gains.feedback.nrows() != plant.input_dim() {
        return Err(ControlError::DimensionMismatch {
            name: "feedback gain",
            rows: gains.feedback.nrows(),
            cols: gains.feedback.ncols(),
            expected_rows: plant.input_dim(),
            expected_cols: d,
        });
    }
    schedule.validate()?;

    // Per-step link and sensing conditions are shared by all replicates.
    struct StepModel {
        p: f64,
        sensing: Option<GaussianFactor>,
    }
    let mut step_models = Vec::with_capacity(opts.horizon);
    for t in 0..opts.horizon {
        let cond = schedule.at(t);
        let p = packet_success_prob(cond.sinr, link);
        let bound = crb_angle(cond.beam_gain_sq, sensing)?;
        let factor = match sensing_error_cov(bound, sensing, d, mapping)? {
            SensingCov::Bounded(cov) => Some(GaussianFactor::new(&cov)),
            SensingCov::Unbounded => None,
        };
        step_models.push(StepModel { p, sensing: factor });
    }
    let noise_factor = GaussianFactor::new(plant.process_noise());

    let traces: Vec<ReplicateTrace> = (0..opts.replicates)
        .into_par_iter()
        .map(|rep| {
            let mut rng = rng::stream(opts.seed, &[0x6374, rep as u64]);
            let mut q = opts.initial_state.clone();
            let mut q_hat_prev = opts.initial_state.clone();
            let mut norms = Vec::with_capacity(opts.horizon + 1);
            let mut lyap = Vec::with_capacity(opts.horizon + 1);
            let mut packets = Vec::with_capacity(opts.horizon);
            let mut diverged_at = None;
            norms.push(q.norm());
            lyap.push(lyapunov_value(&q, gains));
            if q.norm() > opts.divergence_ceiling {
                diverged_at = Some(0);
            }
            for (t, model) in step_models.iter().enumerate() {
                if diverged_at.is_some() {
                    packets.push(None);
                    norms.push(*norms.last().expect("seeded above"));
                    lyap.push(*lyap.last().expect("seeded above"));
                    continue;
                }
                let q_hat = match &model.sensing {
                    Some(factor) => &q - factor.sample(&mut rng),
                    None => q_hat_prev.clone(),
                };
                let u = -(&gains.feedback * &q_hat);
                let delivered = rng.random_bool(model.p);
                let noise = noise_factor.sample(&mut rng);
                let mut next = &plant.a * &q + &noise;
                if delivered {
                    next += &plant.b * &u;
                }
                packets.push(Some(delivered));
                q_hat_prev = q_hat;
                q = next;
                norms.push(q.norm());
                lyap.push(lyapunov_value(&q, gains));
                if q.norm() > opts.divergence_ceiling {
                    diverged_at = Some(t + 1);
                }
            }
            ReplicateTrace { norms, lyap, packets, diverged_at }
        })
        .collect();

    let reps = opts.replicates as f64;
    let mut steps = Vec::with_capacity(opts.horizon + 1);
    let mut delivered_total = 0usize;
    let mut sampled_total = 0usize;
    for t in 0..=opts.horizon {
        let mut column: Vec<f64> = traces.iter().map(|tr| tr.norms[t]).collect();
        let mean_norm = column.iter().sum::<f64>() / reps;
        column.sort_by(|a, b| a.partial_cmp(b).expect("norms are finite"));
        let rank = |quantile: f64| -> f64 {
            let n = column.len();
            let idx = ((quantile * n as f64).ceil() as usize).max(1) - 1;
            column[idx.min(n - 1)]
        };
        let mean_v = traces.iter().map(|tr| tr.lyap[t]).sum::<f64>() / reps;
        let diverged =
            traces.iter().filter(|tr| tr.diverged_at.is_some_and(|s| s <= t)).count();
        let (packet_rate, delivered, sampled) = if t == 0 {
            (0.0, 0, 0)
        } else {
            let outcomes: Vec<bool> =
                traces.iter().filter_map(|tr| tr.packets[t - 1]).collect();
            let delivered = outcomes.iter().filter(|&&d| d).count();
            let rate = if outcomes.is_empty() {
                0.0
            } else {
                delivered as f64 / outcomes.len() as f64
            };
            (rate, delivered, outcomes.len())
        };
        delivered_total += delivered;
        sampled_total += sampled;
        steps.push(StepStats {
            t,
            mean_norm,
            p05_norm: rank(0.05),
            p95_norm: rank(0.95),
            mean_v,
            packet_rate,
            diverged_frac: diverged as f64 / reps,
        });
    }
    let packet_success_rate = if sampled_total == 0 {
        0.0
    } else {
        delivered_total as f64 / sampled_total as f64
    };
    let diverged_fraction = steps.last().expect("horizon >= 1").diverged_frac;
    Ok(TrajectoryStats { steps, packet_success_rate, diverged_fraction })
}
