//! Beam-sharing channel model: occupancy to SINR to spectral efficiency.
//!
//! A base station serves the airspace through `L` orthogonal beams. UAVs in
//! cells mapped to the same beam share it; with `mu` co-beam users at link
//! SNR `rho`, each sees
//!
//! ```text
//! sinr = rho / ((mu - 1) * rho + 1)
//! ```
//!
//! and per-UAV spectral efficiency `log2(1 + sinr)`. Loading beams past one
//! user each trades communication quality for airspace capacity, which splits
//! the load axis into three regimes:
//!
//! - noise-masked: load at most `L`, every UAV gets a private beam and the
//!   full `log2(1 + rho)`;
//! - linear trade-off: load up to the critical capacity `L * (1 + 1/rho)`,
//!   interference grows but stays comparable to noise;
//! - saturation: beyond critical capacity the link is interference-dominated
//!   and efficiency approaches `log2(1 + 1/(load/L - 1))` regardless of SNR.
//!
//! The quality-of-service bound inverts the relation: to guarantee each UAV
//! at least `r_min` bits/s/Hz, the load may not exceed
//! `L * (1 + 1/(2^r_min - 1) - 1/rho)`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::airspace::TrafficState;
use crate::rng;

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("snr must be positive and finite, got {0}")]
    BadSnr(f64),
    #[error("beam occupancy must be at least 1, got {0}")]
    EmptyBeamOccupancy(usize),
    #[error("sinr must be non-negative, got {0}")]
    NegativeSinr(f64),
    #[error("beam count must be at least 1")]
    NoBeams,
    #[error("cell {cell} is mapped to beam {beam} but only {beams} beams exist")]
    BadBeamIndex { cell: usize, beam: usize, beams: usize },
    #[error("traffic state references cell {cell} but the beam plan covers {cells} cells")]
    UnmappedCell { cell: usize, cells: usize },
    #[error("load must exceed the beam count for the saturation approximation, got load {load} with {beams} beams")]
    NotSaturated { load: f64, beams: usize },
    #[error("minimum rate must be positive and finite, got {0}")]
    BadRateFloor(f64),
    #[error("sweep needs at least one load point and one snr point")]
    EmptySweep,
    #[error("replicates must be at least 1")]
    NoReplicates,
}

/// Link SNR `rho`, stored linear.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkSnr(f64);

impl LinkSnr {
    pub fn new(linear: f64) -> Result<Self, ChannelError> {
        if linear > 0.0 && linear.is_finite() {
            Ok(LinkSnr(linear))
        } else {
            Err(ChannelError::BadSnr(linear))
        }
    }

    pub fn from_db(db: f64) -> Result<Self, ChannelError> {
        LinkSnr::new(10f64.powf(db / 10.0))
    }

    pub fn linear(self) -> f64 {
        self.0
    }

    pub fn to_db(self) -> f64 {
        10.0 * self.0.log10()
    }
}

/// Static map from grid cells onto the beam that serves them.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamPlan {
    num_beams: usize,
    cell_to_beam: Vec<usize>,
}

/// How cells are spread across beams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BeamMapping {
    /// Cell `i` is served by beam `i mod L`.
    RoundRobin,
    /// Cells are split into `L` contiguous runs of near-equal length.
    Contiguous,
}

impl BeamPlan {
    pub fn new(num_beams: usize, cell_to_beam: Vec<usize>) -> Result<Self, ChannelError> {
        if num_beams == 0 {
            return Err(ChannelError::NoBeams);
        }
        for (cell, &beam) in cell_to_beam.iter().enumerate() {
            if beam >= num_beams {
                return Err(ChannelError::BadBeamIndex { cell, beam, beams: num_beams });
            }
        }
        Ok(BeamPlan { num_beams, cell_to_beam })
    }

    /// Maps `num_cells` cells onto `num_beams` beams with the given policy.
    pub fn mapped(
        num_cells: usize,
        num_beams: usize,
        mapping: BeamMapping,
    ) -> Result<Self, ChannelError> {
        if num_beams == 0 {
            return Err(ChannelError::NoBeams);
        }
        let cell_to_beam = match mapping {
            BeamMapping::RoundRobin => (0..num_cells).map(|c| c % num_beams).collect(),
            BeamMapping::Contiguous => {
                let run = num_cells.div_ceil(num_beams).max(1);
                (0..num_cells).map(|c| (c / run).min(num_beams - 1)).collect()
            }
        };
        Ok(BeamPlan { num_beams, cell_to_beam })
    }

    pub fn num_beams(&self) -> usize {
        self.num_beams
    }

    pub fn num_cells(&self) -> usize {
        self.cell_to_beam.len()
    }

    pub fn beam_of_cell(&self, cell: usize) -> Option<usize> {
        self.cell_to_beam.get(cell).copied()
    }
}

/// Capacity regime a load point falls into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeLabel {
    NoiseMasked,
    LinearTradeoff,
    Saturation,
}

impl std::fmt::Display for RegimeLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            RegimeLabel::NoiseMasked => "noise_masked",
            RegimeLabel::LinearTradeoff => "linear_tradeoff",
            RegimeLabel::Saturation => "saturation",
        };
        f.write_str(s)
    }
}

/// Per-UAV beam occupancy: for each UAV, how many UAVs (itself included)
/// share its serving beam.
pub fn beam_occupancy(state: &TrafficState, plan: &BeamPlan) -> Result<Vec<usize>, ChannelError> {
    let mut per_beam = vec![0usize; plan.num_beams()];
    for &cell in state.assignments() {
        let beam = plan
            .beam_of_cell(cell)
            .ok_or(ChannelError::UnmappedCell { cell, cells: plan.num_cells() })?;
        per_beam[beam] += 1;
    }
    Ok(state
        .assignments()
        .iter()
        .map(|&cell| per_beam[plan.beam_of_cell(cell).expect("checked above")])
        .collect())
}

/// SINR of one UAV sharing its beam with `mu - 1` others at link SNR `rho`.
pub fn sinr(mu: usize, snr: LinkSnr) -> Result<f64, ChannelError> {
    if mu < 1 {
        return Err(ChannelError::EmptyBeamOccupancy(mu));
    }
    let rho = snr.linear();
    Ok(rho / ((mu as f64 - 1.0) * rho + 1.0))
}

/// Shannon spectral efficiency in bits/s/Hz.
pub fn spectral_efficiency(gamma: f64) -> Result<f64, ChannelError> {
    if gamma < 0.0 || gamma.is_nan() {
        return Err(ChannelError::NegativeSinr(gamma));
    }
    Ok((1.0 + gamma).log2())
}

/// Load at which interference power equals noise power: `L * (1 + 1/rho)`.
/// Beyond it the channel saturates.
pub fn critical_capacity(num_beams: usize, snr: LinkSnr) -> f64 {
    num_beams as f64 * (1.0 + 1.0 / snr.linear())
}

/// Places an airspace load on the noise-masked / linear trade-off /
/// saturation axis. Both upper boundaries are inclusive on the lower regime.
pub fn classify_regime(load: f64, num_beams: usize, snr: LinkSnr) -> RegimeLabel {
    if load <= num_beams as f64 {
        RegimeLabel::NoiseMasked
    } else if load <= critical_capacity(num_beams, snr) {
        RegimeLabel::LinearTradeoff
    } else {
        RegimeLabel::Saturation
    }
}

/// Interference-dominated spectral efficiency `log2(1 + 1/(load/L - 1))`,
/// valid only past the beam count.
pub fn saturation_capacity_approx(load: f64, num_beams: usize) -> Result<f64, ChannelError> {
    if load <= num_beams as f64 {
        return Err(ChannelError::NotSaturated { load, beams: num_beams });
    }
    Ok((1.0 + 1.0 / (load / num_beams as f64 - 1.0)).log2())
}

/// Largest airspace load that still guarantees each UAV `r_min` bits/s/Hz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QosBound {
    /// Load bound, clamped at zero.
    pub max_load: f64,
    /// False when the raw bound was negative: the rate floor is unreachable
    /// even with a private beam at this SNR.
    pub feasible: bool,
}

/// Inverts the SINR relation into a load bound for a per-UAV rate floor:
/// `L * (1 + 1/(2^r_min - 1) - 1/rho)`.
pub fn qos_capacity_bound(
    num_beams: usize,
    snr: LinkSnr,
    r_min: f64,
) -> Result<QosBound, ChannelError> {
    if r_min <= 0.0 || !r_min.is_finite() {
        return Err(ChannelError::BadRateFloor(r_min));
    }
    let gamma_min = 2f64.powf(r_min) - 1.0;
    let raw = num_beams as f64 * (1.0 + 1.0 / gamma_min - 1.0 / snr.linear());
    if raw < 0.0 {
        Ok(QosBound { max_load: 0.0, feasible: false })
    } else {
        Ok(QosBound { max_load: raw, feasible: true })
    }
}

/// How UAVs are spread over beams when sweeping load.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllocationPolicy {
    /// Round-robin: occupancies differ by at most one across beams.
    Balanced,
    /// Each UAV picks a beam uniformly at random; sampled over replicates.
    UniformRandom,
}

impl std::fmt::Display for AllocationPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            AllocationPolicy::Balanced => "balanced",
            AllocationPolicy::UniformRandom => "uniform_random",
        };
        f.write_str(s)
    }
}

/// One point of a load sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub k_uav: usize,
    pub rho_db: f64,
    pub policy: AllocationPolicy,
    /// Mean per-UAV spectral efficiency, bits/s/Hz.
    pub mean_se: f64,
    /// Standard error of the mean over replicates; zero for the
    /// deterministic balanced policy.
    pub stderr_se: f64,
    pub regime: RegimeLabel,
}

fn balanced_mean_se(k_uav: usize, num_beams: usize, snr: LinkSnr) -> f64 {
    if k_uav == 0 {
        return 0.0;
    }
    let q = k_uav / num_beams;
    let r = k_uav % num_beams;
    // With one occupancy class the mean is the class value itself; computing
    // it directly keeps the private-beam plateau exact.
    if r == 0 {
        return spectral_efficiency(sinr(q, snr).expect("q >= 1")).expect("sinr >= 0");
    }
    if q == 0 {
        return spectral_efficiency(sinr(1, snr).expect("mu = 1")).expect("sinr >= 0");
    }
    let se_hi = spectral_efficiency(sinr(q + 1, snr).expect("mu >= 1")).expect("sinr >= 0");
    let se_lo = spectral_efficiency(sinr(q, snr).expect("mu >= 1")).expect("sinr >= 0");
    let n_hi = (r * (q + 1)) as f64;
    let n_lo = ((num_beams - r) * q) as f64;
    (n_hi * se_hi + n_lo * se_lo) / k_uav as f64
}

fn uniform_random_mean_se(
    k_uav: usize,
    num_beams: usize,
    snr: LinkSnr,
    rho_db: f64,
    replicates: usize,
    seed: u64,
) -> (f64, f64) {
    if k_uav == 0 {
        return (0.0, 0.0);
    }
    let means: Vec<f64> = (0..replicates)
        .map(|rep| {
            let mut rng =
                rng::stream(seed, &[0x6368, k_uav as u64, rho_db.to_bits(), rep as u64]);
            let mut per_beam = vec![0usize; num_beams];
            let beams: Vec<usize> =
                (0..k_uav).map(|_| rng.random_range(0..num_beams)).collect();
            for &b in &beams {
                per_beam[b] += 1;
            }
            let total: f64 = beams
                .iter()
                .map(|&b| {
                    spectral_efficiency(sinr(per_beam[b], snr).expect("mu >= 1"))
                        .expect("sinr >= 0")
                })
                .sum();
            total / k_uav as f64
        })
        .collect();
    let n = means.len() as f64;
    let mean = means.iter().sum::<f64>() / n;
    let stderr = if means.len() > 1 {
        let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    (mean, stderr)
}

/// Sweeps mean per-UAV spectral efficiency over airspace loads and SNR
/// points. Points are independent and evaluated in parallel; each draws its
/// own random stream from `(seed, load, snr, replicate)`, so the output is
/// reproducible regardless of thread scheduling.
///
/// Rows come back load-major: for each load, one row per SNR point in the
/// order given.
pub fn per_uav_se_curve(
    k_range: &[usize],
    num_beams: usize,
    rho_db_list: &[f64],
    policy: AllocationPolicy,
    replicates: usize,
    seed: u64,
) -> Result<Vec<CurvePoint>, ChannelError> {
    if num_beams == 0 {
        return Err(ChannelError::NoBeams);
    }
    if k_range.is_empty() || rho_db_list.is_empty() {
        return Err(ChannelError::EmptySweep);
    }
    if replicates == 0 {
        return Err(ChannelError::NoReplicates);
    }
    let snrs = rho_db_list
        .iter()
        .map(|&db| LinkSnr::from_db(db).map(|s| (db, s)))
        .collect::<Result<Vec<_>, _>>()?;
    let points: Vec<(usize, f64, LinkSnr)> = k_range
        .iter()
        .flat_map(|&k| snrs.iter().map(move |&(db, s)| (k, db, s)))
        .collect();
    Ok(points
        .into_par_iter()
        .map(|(k_uav, rho_db, snr)| {
            let (mean_se, stderr_se) = match policy {
                AllocationPolicy::Balanced => (balanced_mean_se(k_uav, num_beams, snr), 0.0),
                AllocationPolicy::UniformRandom => {
                    uniform_random_mean_se(k_uav, num_beams, snr, rho_db, replicates, seed)
                }
            };
            CurvePoint {
                k_uav,
                rho_db,
                policy,
                mean_se,
                stderr_se,
                regime: classify_regime(k_uav as f64, num_beams, snr),
            }
        })
        .collect())
}
