//! Acceptance suite: one test per release criterion. Every test prints a
//! single PASS or FAIL line with the measured values (visible under
//! `--nocapture`, and on failure in the panic message), and each oracle here
//! is independent of the library code it checks.

use std::cmp::Ordering;
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use lawn_core::airspace::discretize;
use lawn_core::beamforming::{
    sensing_gain, solve_p1, steering_derivative, steering_vector, ArrayGeometry, P1Problem,
    SolveOutcome, SolverOptions,
};
use lawn_core::channel::{
    classify_regime, critical_capacity, per_uav_se_curve, qos_capacity_bound, sinr,
    spectral_efficiency, AllocationPolicy, BeamMapping, BeamPlan, LinkSnr, RegimeLabel,
};
use lawn_core::control::{
    crb_angle, critical_sinr, expected_drift, simulate_closed_loop, topological_entropy,
    BeamSchedule, ControllerGain, CovMapping, LinkReliability, PlantModel, SensingSpec,
    SimulationOptions, StepCondition,
};
use lawn_core::corridor::{
    build_layered_plan, check_geofence, corridor_beam_budget, AdmissionDecision, AdmissionLedger,
    DirectionClass, FlightRequest, Geofence, GeofenceKind, RejectReason,
};
use lawn_core::geom::{Aabb, Point3};

fn report(number: u32, passed: bool, detail: &str) {
    let status = if passed { "PASS" } else { "FAIL" };
    println!("{status} criterion {number}: {detail}");
    assert!(passed, "criterion {number}: {detail}");
}

/// Criterion 1: balanced-allocation load curve for 16 beams. Exact
/// private-beam plateau for K <= 16, strictly decreasing beyond it, and the
/// three SNR curves converge at K = 160. Runs in under a second.
#[test]
fn criterion_1_balanced_curve_plateau_decay_convergence() {
    let start = Instant::now();
    let k_range: Vec<usize> = (1..=160).collect();
    let rho_db = [0.0, 10.0, 20.0];
    let points =
        per_uav_se_curve(&k_range, 16, &rho_db, AllocationPolicy::Balanced, 1, 0).unwrap();

    let lane = |i: usize| -> Vec<f64> {
        points.iter().skip(i).step_by(rho_db.len()).map(|p| p.mean_se).collect()
    };
    let mut plateau_exact = true;
    let mut strictly_decreasing = true;
    for (i, &db) in rho_db.iter().enumerate() {
        let solo = (1.0 + 10f64.powf(db / 10.0)).log2();
        let curve = lane(i);
        for k in 1..=16usize {
            if curve[k - 1].to_bits() != solo.to_bits() {
                plateau_exact = false;
            }
        }
        for k in 17..=160usize {
            if curve[k - 1].partial_cmp(&curve[k - 2]) != Some(Ordering::Less) {
                strictly_decreasing = false;
            }
        }
    }
    let at_160: Vec<f64> = (0..rho_db.len()).map(|i| lane(i)[159]).collect();
    let mut max_gap: f64 = 0.0;
    for i in 0..at_160.len() {
        for j in i + 1..at_160.len() {
            max_gap = max_gap.max((at_160[i] - at_160[j]).abs());
        }
    }
    let elapsed = start.elapsed();

    report(
        1,
        plateau_exact && strictly_decreasing && max_gap < 0.06 && elapsed < Duration::from_secs(1),
        &format!(
            "plateau exact for K <= 16: {plateau_exact}, strictly decreasing above: \
             {strictly_decreasing}, max pairwise gap at K = 160: {max_gap:.4} (< 0.06), \
             runtime {elapsed:?} (< 1 s)"
        ),
    );
}

/// Criterion 2: regime classification is exact at the boundaries load = L,
/// load = C_crit, and load = C_crit + 1 for 50 random beam-count and SNR
/// pairs.
#[test]
fn criterion_2_regime_boundary_classification() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0acc_0002);
    let mut mismatches = 0usize;
    for _ in 0..50 {
        let num_beams = rng.random_range(1..=64usize);
        let db = rng.random_range(-10.0..30.0);
        let snr = LinkSnr::from_db(db).unwrap();
        let c_crit = critical_capacity(num_beams, snr);
        if classify_regime(num_beams as f64, num_beams, snr) != RegimeLabel::NoiseMasked {
            mismatches += 1;
        }
        if classify_regime(c_crit, num_beams, snr) != RegimeLabel::LinearTradeoff {
            mismatches += 1;
        }
        if classify_regime(c_crit + 1.0, num_beams, snr) != RegimeLabel::Saturation {
            mismatches += 1;
        }
    }
    report(
        2,
        mismatches == 0,
        &format!("{mismatches} boundary mismatches over 50 random (L, rho) pairs (exact)"),
    );
}

/// Criterion 3: tightness of the load bound for a rate floor. Instances are
/// constructed so the bound lands just above a multiple of the beam count:
/// sampling a rate floor and an integer occupancy m, then solving for the
/// SNR that puts the bound at L(m + delta) with a small delta below 1/L.
/// That makes floor(bound) a multiple of L, so the balanced state there has
/// uniform occupancy and the achievability check applies to all 100
/// instances; non-multiple loads are excluded by construction because their
/// mixed occupancy classes make per-UAV SE a blend (integer-occupancy
/// granularity). The violating load is the bound scaled by 1.1, rounded up
/// to the next whole UAV.
#[test]
fn criterion_3_qos_load_bound_tightness() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0acc_0003);
    let mut achieve_failures = 0usize;
    let mut violation_failures = 0usize;
    for _ in 0..100 {
        let r_min = rng.random_range(0.15..0.5);
        let x = 1.0 / (2f64.powf(r_min) - 1.0);
        let m_max = ((x + 0.9).floor() as usize).min(8);
        let m = rng.random_range(2..=m_max);
        let num_beams = [4usize, 8, 16, 32, 64][rng.random_range(0..5)];
        let delta = rng.random_range(0.01..(0.04f64).min(0.8 / num_beams as f64));
        let rho = 1.0 / (1.0 + x - m as f64 - delta);
        let snr = LinkSnr::new(rho).unwrap();

        let bound = qos_capacity_bound(num_beams, snr, r_min).unwrap();
        assert!(bound.feasible);
        let k_floor = bound.max_load.floor() as usize;
        assert_eq!(k_floor, m * num_beams, "instance construction drifted");

        // Uniform occupancy m at K = floor(bound).
        let se_at_bound = spectral_efficiency(sinr(m, snr).unwrap()).unwrap();
        if se_at_bound < r_min - 0.02 {
            achieve_failures += 1;
        }

        let k_over = (1.1 * bound.max_load).ceil() as usize;
        let over = per_uav_se_curve(
            &[k_over],
            num_beams,
            &[snr.to_db()],
            AllocationPolicy::Balanced,
            1,
            0,
        )
        .unwrap();
        if over[0].mean_se >= r_min {
            violation_failures += 1;
        }
    }
    report(
        3,
        achieve_failures == 0 && violation_failures == 0,
        &format!(
            "100 instances: {achieve_failures} achievability failures at K = floor(bound) \
             (>= r_min - 0.02), {violation_failures} non-violations at K = ceil(1.1 bound)"
        ),
    );
}

/// Small-matrix helpers for the hand-rolled Monte Carlo drift oracle; kept
/// independent of the library's linear algebra.
mod smallmat {
    pub fn mat_vec(m: &[f64], v: &[f64], dim: usize) -> Vec<f64> {
        (0..dim).map(|i| (0..dim).map(|j| m[i * dim + j] * v[j]).sum()).collect()
    }

    pub fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    /// Gram matrix f^T f, row-major.
    pub fn gram(f: &[f64], dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in 0..dim {
                out[i * dim + j] = (0..dim).map(|k| f[k * dim + i] * f[k * dim + j]).sum();
            }
        }
        out
    }

    /// Sample f^T z with z standard normal, so the covariance is f^T f.
    pub fn correlated(f: &[f64], z: &[f64], dim: usize) -> Vec<f64> {
        (0..dim).map(|i| (0..dim).map(|k| f[k * dim + i] * z[k]).sum()).collect()
    }
}

/// Criterion 4: the closed-form one-step drift matches a 1e5-sample Monte
/// Carlo estimate within three standard errors on 20 random instances, half
/// scalar and half two-dimensional. Runs in under 30 seconds.
#[test]
fn criterion_4_drift_matches_monte_carlo() {
    use smallmat::{correlated, dot, gram, mat_vec};

    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x0acc_0004);
    let mut worst_sigma = 0.0f64;
    let mut failures = 0usize;
    for instance in 0..20 {
        let dim = if instance < 10 { 1 } else { 2 };
        let a: Vec<f64> = (0..dim * dim).map(|_| rng.random_range(-1.5..1.5)).collect();
        let b: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut p_mat: Vec<f64> = {
            let f: Vec<f64> = (0..dim * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            gram(&f, dim)
        };
        for i in 0..dim {
            p_mat[i * dim + i] += 0.1;
        }
        let sigma_fac: Vec<f64> = (0..dim * dim).map(|_| rng.random_range(-0.5..0.5)).collect();
        let qn_fac: Vec<f64> = (0..dim * dim).map(|_| rng.random_range(-0.3..0.3)).collect();
        let p = rng.random_range(0.05..0.95);
        let q: Vec<f64> = (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect();

        let samples = 100_000usize;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..samples {
            let z1: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let e = correlated(&sigma_fac, &z1, dim);
            let q_hat: Vec<f64> = (0..dim).map(|i| q[i] - e[i]).collect();
            let u = -dot(&g, &q_hat);
            let delivered = rng.random_bool(p);
            let z2: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let n = correlated(&qn_fac, &z2, dim);
            let aq = mat_vec(&a, &q, dim);
            let q_next: Vec<f64> = (0..dim)
                .map(|i| aq[i] + if delivered { b[i] * u } else { 0.0 } + n[i])
                .collect();
            let v = dot(&q_next, &mat_vec(&p_mat, &q_next, dim));
            sum += v;
            sum_sq += v * v;
        }
        let mc = sum / samples as f64;
        let var = (sum_sq / samples as f64 - mc * mc).max(0.0);
        let se = (var / samples as f64).sqrt();

        let plant = PlantModel::new(
            DMatrix::from_row_slice(dim, dim, &a),
            DMatrix::from_row_slice(dim, 1, &b),
            DMatrix::from_row_slice(dim, dim, &gram(&qn_fac, dim)),
        )
        .unwrap();
        let gains = ControllerGain::new(
            DMatrix::from_row_slice(1, dim, &g),
            DMatrix::from_row_slice(dim, dim, &p_mat),
            0.9,
        )
        .unwrap();
        let analytic = expected_drift(
            &DVector::from_vec(q.clone()),
            p,
            &DMatrix::from_row_slice(dim, dim, &gram(&sigma_fac, dim)),
            &plant,
            &gains,
        )
        .unwrap();

        let gap = (mc - analytic).abs();
        if gap > 3.0 * se + 1e-9 {
            failures += 1;
        }
        if se > 0.0 {
            worst_sigma = worst_sigma.max(gap / se);
        }
    }
    let elapsed = start.elapsed();
    report(
        4,
        failures == 0 && elapsed < Duration::from_secs(30),
        &format!(
            "20 instances x 1e5 samples: {failures} beyond 3 standard errors \
             (worst gap {worst_sigma:.2} SE), runtime {elapsed:?} (< 30 s)"
        ),
    );
}

/// Criterion 5: survival threshold from the instability rate. A scalar
/// plant with A = 2 carries one bit per step, so unit bandwidth puts the
/// critical SINR at exactly 1; far below it the loop diverges, far above it
/// the loop survives.
#[test]
fn criterion_5_entropy_survival_threshold() {
    let plant = PlantModel::new(
        DMatrix::from_row_slice(1, 1, &[2.0]),
        DMatrix::from_row_slice(1, 1, &[1.0]),
        DMatrix::from_row_slice(1, 1, &[1e-4]),
    )
    .unwrap();
    let gains = ControllerGain::new(
        DMatrix::from_row_slice(1, 1, &[2.0]),
        DMatrix::from_row_slice(1, 1, &[1.0]),
        0.5,
    )
    .unwrap();

    let entropy = topological_entropy(plant.a()).unwrap();
    let gamma_critical = critical_sinr(entropy, 1.0).unwrap();
    let threshold_exact = (entropy - 1.0).abs() < 1e-12 && (gamma_critical - 1.0).abs() < 1e-12;

    let link = LinkReliability::new(10.0, gamma_critical).unwrap();
    let sensing = SensingSpec::new(1.0, 4, 4, 1.0, 1.0).unwrap();
    let mapping = CovMapping::default();
    let run = |sinr: f64, seed: u64| {
        let opts = SimulationOptions {
            horizon: 200,
            replicates: 500,
            seed,
            initial_state: DVector::from_vec(vec![1.0]),
            divergence_ceiling: 1e6,
        };
        simulate_closed_loop(
            &plant,
            &gains,
            &link,
            &sensing,
            &mapping,
            &BeamSchedule::Constant(StepCondition { sinr, beam_gain_sq: 1.0 }),
            &opts,
        )
        .unwrap()
    };
    let starved = run(gamma_critical / 100.0, 51);
    let fed = run(4.0 * gamma_critical, 52);

    report(
        5,
        threshold_exact && starved.diverged_fraction > 0.95 && fed.diverged_fraction < 0.05,
        &format!(
            "entropy {entropy} bits, critical SINR {gamma_critical}; diverged fraction \
             {:.3} at SINR = critical/100 (> 0.95) and {:.3} at SINR = 4x critical (< 0.05)",
            starved.diverged_fraction, fed.diverged_fraction
        ),
    );
}

/// One random scalar-plant beam design instance with a 4-element array.
struct BeamInstance {
    a_plant: f64,
    g_fb: f64,
    eta: f64,
    qn: f64,
    q0: f64,
    steepness: f64,
    threshold: f64,
    snapshots: u32,
    rx: u32,
    beta: f64,
    slant: f64,
    gamma: f64,
    theta: f64,
    noise_comm: f64,
}

impl BeamInstance {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let a_plant: f64 = rng.random_range(1.1..2.0);
        let closed: f64 = rng.random_range(-0.3..0.3);
        let eta: f64 = rng.random_range(0.85..0.97);
        let qn: f64 = rng.random_range(0.001..0.01);
        let q0 = 3.0 * (qn / (eta - closed * closed)).sqrt() + rng.random_range(0.5..2.0);
        BeamInstance {
            a_plant,
            g_fb: a_plant - closed,
            eta,
            qn,
            q0,
            steepness: rng.random_range(1.0..3.0),
            threshold: rng.random_range(0.5..3.0),
            snapshots: rng.random_range(4..32),
            rx: rng.random_range(2..8),
            beta: rng.random_range(0.5..2.0),
            slant: rng.random_range(1.0..20.0),
            gamma: rng.random_range(0.2..5.0),
            theta: rng.random_range(-1.0..1.0),
            noise_comm: rng.random_range(0.3..2.0),
        }
    }

    fn problem(&self) -> P1Problem {
        P1Problem {
            array: ArrayGeometry::half_wavelength(4).unwrap(),
            theta: self.theta,
            plant: PlantModel::new(
                DMatrix::from_row_slice(1, 1, &[self.a_plant]),
                DMatrix::from_row_slice(1, 1, &[1.0]),
                DMatrix::from_row_slice(1, 1, &[self.qn]),
            )
            .unwrap(),
            gains: ControllerGain::new(
                DMatrix::from_row_slice(1, 1, &[self.g_fb]),
                DMatrix::from_row_slice(1, 1, &[1.0]),
                self.eta,
            )
            .unwrap(),
            link: LinkReliability::new(self.steepness, self.threshold).unwrap(),
            sensing: SensingSpec::new(1.0, self.snapshots, self.rx, self.beta, self.slant)
                .unwrap(),
            mapping: CovMapping::default(),
            gamma_critical: self.gamma,
            q_current: DVector::from_vec(vec![self.q0]),
            noise_var: self.noise_comm,
        }
    }

    /// One-step drift from scratch, scalar arithmetic only.
    fn drift(&self, link_sinr: f64, gain_sq: f64) -> f64 {
        let p = 1.0 / (1.0 + (-self.steepness * (link_sinr - self.threshold)).exp());
        let closed = self.a_plant - self.g_fb;
        let crb = 1.0
            / (2.0 * self.snapshots as f64 * self.beta * self.beta * self.rx as f64 * gain_sq);
        let sigma = self.slant * self.slant * crb;
        let v = self.q0 * self.q0;
        p * (closed * closed * v + self.g_fb * self.g_fb * sigma)
            + (1.0 - p) * self.a_plant * self.a_plant * v
            + self.qn
    }

    fn drift_limit(&self) -> f64 {
        self.eta * self.q0 * self.q0
    }
}

fn own_steering(n: usize, theta: f64) -> Vec<Complex64> {
    (0..n)
        .map(|k| Complex64::from_polar(1.0, std::f64::consts::PI * k as f64 * theta.sin()))
        .collect()
}

fn own_derivative(n: usize, theta: f64) -> Vec<Complex64> {
    own_steering(n, theta)
        .into_iter()
        .enumerate()
        .map(|(k, a)| Complex64::new(0.0, std::f64::consts::PI * k as f64 * theta.cos()) * a)
        .collect()
}

fn own_dotc(x: &[Complex64], y: &[Complex64]) -> Complex64 {
    x.iter().zip(y).map(|(a, b)| a.conj() * b).sum()
}

/// Exhaustive 1001 x 1001 grid search over the direction mix and log-spaced
/// beam scale. Returns the minimum feasible power; widens the scale window
/// until the argmin is interior.
fn oracle_min_power(inst: &BeamInstance) -> f64 {
    let n = 4usize;
    let a = own_steering(n, inst.theta);
    let da = own_derivative(n, inst.theta);
    let a_norm = own_dotc(&a, &a).re.sqrt();
    let a_hat: Vec<Complex64> = a.iter().map(|v| v / a_norm).collect();
    let proj = own_dotc(&a_hat, &da);
    let d_raw: Vec<Complex64> =
        da.iter().zip(&a_hat).map(|(d, ah)| d - ah * proj).collect();
    let d_norm = own_dotc(&d_raw, &d_raw).re.sqrt();
    let d_hat: Vec<Complex64> = d_raw.iter().map(|v| v / d_norm).collect();

    let grid = 1001usize;
    let mut window_center = (inst.gamma * inst.noise_comm
        / (inst.beta * inst.beta * n as f64))
        .sqrt();
    for _attempt in 0..6 {
        let mut best: Option<(f64, usize)> = None;
        for ki in 0..grid {
            let kappa = ki as f64 / (grid - 1) as f64;
            let dir: Vec<Complex64> = a_hat
                .iter()
                .zip(&d_hat)
                .map(|(ah, dh)| ah * (1.0 - kappa) + dh * kappa)
                .collect();
            let power_coef = own_dotc(&dir, &dir).re;
            let sinr_coef = inst.beta * inst.beta * own_dotc(&a, &dir).norm_sqr()
                / inst.noise_comm;
            let gain_coef = own_dotc(&da, &dir).norm_sqr();
            if sinr_coef <= 0.0 || power_coef <= 0.0 {
                continue;
            }
            for ci in 0..grid {
                // Two decades of scale, log spaced around the window center.
                let c = window_center * 10f64.powf(ci as f64 / (grid - 1) as f64 * 2.0 - 1.0);
                let c2 = c * c;
                if c2 * sinr_coef < inst.gamma {
                    continue;
                }
                if inst.drift(c2 * sinr_coef, c2 * gain_coef) > inst.drift_limit() {
                    continue;
                }
                let power = c2 * power_coef;
                if best.is_none_or(|(b, _)| power < b) {
                    best = Some((power, ci));
                }
                // Power grows with the scale at fixed kappa, so the first
                // feasible scale is this direction's minimum.
                break;
            }
        }
        let (power, ci) = best.expect("instance generation keeps the problem feasible");
        if ci > 0 && ci < grid - 1 {
            return power;
        }
        window_center *= if ci == 0 { 0.1 } else { 10.0 };
    }
    panic!("scale window kept hitting its edge");
}

/// Criterion 6: the minimum-power beam solver agrees with an independent
/// 1001 x 1001 grid search within 1% on 10 random scalar-plant instances,
/// and matches the closed-form SINR-only power exactly when the drift
/// constraint is slack. Runs in under 60 seconds.
#[test]
fn criterion_6_beam_solver_matches_grid_search() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x0acc_0006);
    let opts = SolverOptions { kappa_points: 1001, rel_tol: 1e-6, power_cap: 1e6 };
    let mut worst_rel = 0.0f64;
    let mut failures = 0usize;
    for _ in 0..10 {
        let inst = BeamInstance::random(&mut rng);
        let oracle = oracle_min_power(&inst);
        let outcome = solve_p1(&inst.problem(), &opts).unwrap().outcome;
        let SolveOutcome::Solved(solution) = outcome else {
            failures += 1;
            continue;
        };
        // The solver bisects, so it can only undercut the grid; the grid in
        // turn is at most one scale step above the true minimum.
        let rel = (oracle - solution.power).abs() / solution.power;
        worst_rel = worst_rel.max(rel);
        if solution.power > oracle * (1.0 + 1e-5) || oracle > solution.power * 1.01 {
            failures += 1;
        }
    }

    // Slack-drift instances: a generous error budget and a hot link make the
    // SINR constraint the only active one, so the power has a closed form.
    let mut closed_form_failures = 0usize;
    let mut worst_closed_rel = 0.0f64;
    for &gamma in &[0.5, 3.0, 8.0] {
        let inst = BeamInstance {
            a_plant: 1.3,
            g_fb: 1.2,
            eta: 0.95,
            qn: 1e-4,
            q0: 5.0,
            steepness: 5.0,
            threshold: 0.2,
            snapshots: 64,
            rx: 8,
            beta: 1.5,
            slant: 1.0,
            gamma,
            theta: 0.4,
            noise_comm: 0.9,
        };
        let outcome = solve_p1(&inst.problem(), &opts).unwrap().outcome;
        let SolveOutcome::Solved(solution) = outcome else {
            closed_form_failures += 1;
            continue;
        };
        let expected = gamma * inst.noise_comm / (inst.beta * inst.beta * 4.0);
        let rel = (solution.power - expected).abs() / expected;
        worst_closed_rel = worst_closed_rel.max(rel);
        if solution.binding != "sinr" || solution.kappa != 0.0 || rel > 1e-9 {
            closed_form_failures += 1;
        }
    }
    let elapsed = start.elapsed();
    report(
        6,
        failures == 0 && closed_form_failures == 0 && elapsed < Duration::from_secs(60),
        &format!(
            "10 random instances: {failures} outside 1% of the grid search (worst gap \
             {worst_rel:.5}); slack-drift closed form: {closed_form_failures} mismatches \
             (worst rel {worst_closed_rel:.2e}); runtime {elapsed:?} (< 60 s)"
        ),
    );
}

/// Criterion 7: the steering derivative matches central finite differences
/// to 1e-6 over 100 angles, and the angle-error bound scales inversely with
/// beam power to 1e-12 relative.
#[test]
fn criterion_7_steering_derivative_and_crb_scaling() {
    let array = ArrayGeometry::half_wavelength(6).unwrap();
    let h = 1e-6;
    let mut worst_fd = 0.0f64;
    for i in 0..100 {
        let span = std::f64::consts::FRAC_PI_2 - 0.1;
        let theta = -span + 2.0 * span * i as f64 / 99.0;
        let plus = steering_vector(&array, theta + h).unwrap();
        let minus = steering_vector(&array, theta - h).unwrap();
        let analytic = steering_derivative(&array, theta).unwrap();
        let fd = (plus - minus).unscale(2.0 * h);
        let rel = (&fd - &analytic).norm() / analytic.norm();
        worst_fd = worst_fd.max(rel);
    }

    let spec = SensingSpec::new(2.0, 16, 4, 1.3, 9.0).unwrap();
    let derivative = steering_derivative(&array, 0.7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0x0acc_0007);
    let w = DVector::from_iterator(
        6,
        (0..6).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))),
    );
    let base_gain = sensing_gain(&w, &derivative).unwrap();
    let base_crb = crb_angle(base_gain, &spec).unwrap();
    let mut worst_scale = 0.0f64;
    for &s in &[2.0f64, 4.0, 8.0, 3.7] {
        let scaled_gain = sensing_gain(&w.scale(s), &derivative).unwrap();
        let scaled_crb = crb_angle(scaled_gain, &spec).unwrap();
        let rel = (scaled_crb * s * s - base_crb).abs() / base_crb;
        worst_scale = worst_scale.max(rel);
    }

    report(
        7,
        worst_fd < 1e-6 && worst_scale < 1e-12,
        &format!(
            "steering derivative vs finite differences: worst rel {worst_fd:.2e} (< 1e-6); \
             inverse-quadratic power scaling of the angle bound: worst rel {worst_scale:.2e} \
             (< 1e-12)"
        ),
    );
}

/// Criterion 8: ten thousand randomized admit and release operations never
/// push any corridor past its budget, tracked against an independent
/// occupancy mirror, and every admitted route clears the geofences.
#[test]
fn criterion_8_admission_never_exceeds_budgets() {
    use std::collections::BTreeMap;

    let grid = discretize([0.0, 0.0, 0.0], [100.0, 100.0, 30.0], [10.0, 10.0, 10.0]).unwrap();
    let fences = vec![Geofence {
        id: "block".into(),
        volume: Aabb::new([40.0, 40.0, 0.0], [60.0, 60.0, 30.0]),
        kind: GeofenceKind::NoFly,
    }];
    let plan = build_layered_plan(
        &grid,
        &[[0.0, 10.0], [10.0, 20.0], [20.0, 30.0]],
        &fences,
        DirectionClass::EastWest,
    )
    .unwrap();
    let beam_plan = BeamPlan::mapped(grid.total_cells(), 16, BeamMapping::RoundRobin).unwrap();
    let snr = LinkSnr::new(0.6).unwrap();
    let mut budgets = BTreeMap::new();
    for corridor in &plan.corridors {
        let budget = corridor_beam_budget(corridor, &beam_plan, &grid, snr, 1.0).unwrap();
        budgets.insert(corridor.id.clone(), budget);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0x0acc_0008);
    let mut ledger = AdmissionLedger::new();
    let mut mirror: BTreeMap<String, u32> = BTreeMap::new();
    let mut active: Vec<(String, Vec<String>)> = Vec::new();
    let mut admitted = 0usize;
    let mut capacity_rejections = 0usize;
    let mut geofence_rejections = 0usize;
    let mut budget_breaches = 0usize;
    let mut mirror_mismatches = 0usize;
    let mut route_violations = 0usize;

    let random_point = |rng: &mut ChaCha8Rng| -> Point3 {
        [
            rng.random_range(0.0..100.0),
            rng.random_range(0.0..100.0),
            rng.random_range(0.0..30.0),
        ]
    };
    for op in 0..10_000 {
        if !active.is_empty() && rng.random_bool(0.3) {
            let (id, path) = active.swap_remove(rng.random_range(0..active.len()));
            ledger.release(&id).unwrap();
            for corridor in path {
                *mirror.get_mut(&corridor).unwrap() -= 1;
            }
        } else {
            let request = FlightRequest {
                id: format!("f{op}"),
                origin: random_point(&mut rng),
                destination: random_point(&mut rng),
                r_min: 1.0,
            };
            match ledger.admit(&request, &plan, &grid, &budgets, 1.0).unwrap() {
                AdmissionDecision::Admitted { corridor_path, waypoints } => {
                    admitted += 1;
                    route_violations +=
                        check_geofence(&waypoints, &plan.geofences, 1.0).unwrap().len();
                    let mut distinct = corridor_path.clone();
                    distinct.sort();
                    distinct.dedup();
                    for corridor in &distinct {
                        *mirror.entry(corridor.clone()).or_insert(0) += 1;
                    }
                    active.push((request.id, distinct));
                }
                AdmissionDecision::Rejected(RejectReason::Capacity { .. }) => {
                    capacity_rejections += 1;
                }
                AdmissionDecision::Rejected(RejectReason::Geofence) => geofence_rejections += 1,
                AdmissionDecision::Rejected(RejectReason::NoRoute) => {}
            }
        }
        for (id, budget) in &budgets {
            let occupancy = ledger.occupancy_of(id);
            if occupancy > budget.max_concurrent {
                budget_breaches += 1;
            }
            if occupancy != mirror.get(id).copied().unwrap_or(0) {
                mirror_mismatches += 1;
            }
        }
    }

    let exercised = admitted > 1_000 && capacity_rejections > 0 && geofence_rejections > 0;
    report(
        8,
        budget_breaches == 0 && mirror_mismatches == 0 && route_violations == 0 && exercised,
        &format!(
            "10000 operations: {admitted} admitted, {capacity_rejections} capacity and \
             {geofence_rejections} geofence rejections; {budget_breaches} budget breaches, \
             {mirror_mismatches} mirror mismatches, {route_violations} geofence contacts \
             on admitted routes"
        ),
    );
}

const DETERMINISM_CONFIG: &str = r#"
seed = 424242

[grid]
bounds_min = [0.0, 0.0, 0.0]
bounds_max = [100.0, 100.0, 30.0]
cell_size = [10.0, 10.0, 10.0]

[beams]
count = 12

[capacity]
rho_db = [6.0]
k_min = 1
k_max = 36
policy = "uniform-random"
replicates = 60

[corridors]
bands = [[0.0, 10.0], [10.0, 20.0], [20.0, 30.0]]
rho_db = 6.0
r_min = 0.8

[[corridors.no_fly]]
id = "block"
min = [40.0, 40.0, 0.0]
max = [60.0, 60.0, 30.0]

[[corridors.requests]]
id = "r1"
origin = [5.0, 5.0, 5.0]
destination = [95.0, 95.0, 25.0]

[[corridors.requests]]
id = "r2"
origin = [15.0, 75.0, 5.0]
destination = [85.0, 15.0, 5.0]

[[corridors.requests]]
id = "r3"
origin = [45.0, 45.0, 15.0]
destination = [95.0, 5.0, 5.0]

[plant]
a = [[1.4]]
b = [[1.0]]
process_noise = [[0.01]]

[controller]
feedback = [[1.3]]
lyapunov = [[1.0]]
decay_rate = 0.9

[link]
steepness = 3.0
threshold_db = 2.0

[sensing]
noise_var = 1.0
snapshots = 8
rx_antennas = 4
channel_gain_mag = 1.0
slant_range = 20.0

[control]
sinr_db = [0.0, 8.0]
horizon = 50
replicates = 80
initial_state = [4.0]

[beamforming]
enabled = true
elements = 6
theta_deg = 30.0
noise_var = 1.0
kappa_points = 21
"#;

fn run_cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_lawn-sim"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn dir_snapshot(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut entries: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    entries.sort_by(|a, b| a.0.cmp(&b.0));
    entries
}

/// Criterion 9: every CLI command run twice with the same config and seed
/// produces byte-identical output, artifact files for the generators and
/// stdout for the report audit.
#[test]
fn criterion_9_cli_byte_determinism() {
    let root = tempfile::tempdir().unwrap();
    let config = root.path().join("determinism.toml");
    std::fs::write(&config, DETERMINISM_CONFIG).unwrap();
    let config = config.to_str().unwrap();

    let mut mismatched: Vec<String> = Vec::new();
    let mut detail = Vec::new();
    for command in ["capacity-sweep", "corridor-demo", "control-sim"] {
        let out_a = root.path().join(format!("{command}-a"));
        let out_b = root.path().join(format!("{command}-b"));
        for out in [&out_a, &out_b] {
            let run = run_cli(&[command, "--config", config, "--out", out.to_str().unwrap()]);
            assert!(
                run.status.success(),
                "{command} failed: {}",
                String::from_utf8_lossy(&run.stderr)
            );
        }
        let snap_a = dir_snapshot(&out_a);
        let snap_b = dir_snapshot(&out_b);
        if snap_a != snap_b {
            mismatched.push(command.to_string());
        }
        detail.push(format!("{command}: {} files", snap_a.len()));

        let report_a = run_cli(&["report", "--out", out_a.to_str().unwrap()]);
        let report_b = run_cli(&["report", "--out", out_a.to_str().unwrap()]);
        assert!(report_a.status.success(), "report failed on {command} output");
        if report_a.stdout != report_b.stdout {
            mismatched.push(format!("report({command})"));
        }
    }

    report(
        9,
        mismatched.is_empty(),
        &format!(
            "reruns byte-identical for {}; mismatches: {:?}",
            detail.join(", "),
            mismatched
        ),
    );
}
