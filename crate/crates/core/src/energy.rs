//! Physical model of one federated-learning round over a wireless uplink:
//! per-worker computation/transmission energy and latency, channel rate,
//! dataset variance, and the deadline/exclusion indicators. Pure functions,
//! no state, no randomness.

use crate::num::Real;
use thiserror::Error;

/// Model-wide constants of the learning task.
#[derive(Debug, Clone, PartialEq)]
pub struct FlModelSpec<R: Real> {
    /// Complexity of one local iteration over one sample, in FLOPs.
    pub alpha: R,
    /// Size of one model update on the wire, in bits.
    pub m_bits: R,
    /// Local performance target in (0, 1].
    pub eta: R,
    /// Global performance target in (0, 1].
    pub epsilon0: R,
    /// Optimal objective value (1.0 when the objective is accuracy).
    pub f_star: R,
    /// Round deadline in seconds.
    pub deadline_h: R,
}

/// Hardware and link capabilities of one worker.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkerCaps<R: Real> {
    /// Maximum CPU frequency in Hz.
    pub f_max: R,
    /// Maximum transmit power in W.
    pub p_max: R,
    /// FLOPs retired per CPU cycle.
    pub c_flops_per_cycle: R,
    /// Effective switched capacitance in W/Hz^3.
    pub sigma_cap: R,
    /// Assigned uplink bandwidth in Hz.
    pub bandwidth: R,
    /// Distance to the coordinator in km.
    pub distance_km: R,
    /// Local dataset size.
    pub n_samples: u32,
    /// Local dataset variance (trace of the sample covariance).
    pub data_variance: R,
}

/// Resources assigned to one worker for one round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Allocation<R: Real> {
    /// Assigned CPU frequency in Hz (0 excludes the worker from computing).
    pub f: R,
    /// Assigned transmit power in W (0 excludes the worker from the round).
    pub p: R,
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dataset variance needs at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error("dataset rows have inconsistent widths ({0} vs {1})")]
    RaggedRows(usize, usize),
    #[error("distance must be positive, got {0} km")]
    NonPositiveDistance(f64),
    #[error("transmit power {0} W with zero data rate")]
    PowerWithoutRate(f64),
    #[error("{0} local iterations with zero CPU frequency (worker must be excluded)")]
    ItersWithoutFrequency(u32),
}

/// Trace of the sample covariance matrix (divisor s−1) of the rows.
pub fn dataset_variance<R: Real>(rows: &[Vec<R>]) -> Result<R, ModelError> {
    if rows.len() < 2 {
        return Err(ModelError::TooFewRows(rows.len()));
    }
    let width = rows[0].len();
    for row in rows {
        if row.len() != width {
            return Err(ModelError::RaggedRows(width, row.len()));
        }
    }
    let n = R::of(rows.len() as f64);
    let denom = R::of((rows.len() - 1) as f64);
    let mut total = R::zero();
    for d in 0..width {
        let mean = rows.iter().map(|r| r[d]).sum::<R>() / n;
        let ss = rows
            .iter()
            .map(|r| {
                let dev = r[d] - mean;
                dev * dev
            })
            .sum::<R>();
        total = total + ss / denom;
    }
    Ok(total)
}

/// Computation energy of `local_iters` local iterations at frequency `f`:
/// ς·I·α·s·f²/c.
pub fn comp_energy<R: Real>(
    caps: &WorkerCaps<R>,
    spec: &FlModelSpec<R>,
    local_iters: u32,
    f: R,
) -> R {
    let i = R::of(local_iters as f64);
    let s = R::of(caps.n_samples as f64);
    caps.sigma_cap * i * spec.alpha * s * f * f / caps.c_flops_per_cycle
}

/// Computation time of `local_iters` local iterations at frequency `f`:
/// I·α·s/(c·f). Zero iterations take zero time; `f = 0` with work pending is
/// an exclusion the caller must handle, not a division.
pub fn comp_time<R: Real>(
    caps: &WorkerCaps<R>,
    spec: &FlModelSpec<R>,
    local_iters: u32,
    f: R,
) -> Result<R, ModelError> {
    if local_iters == 0 {
        return Ok(R::zero());
    }
    if f <= R::zero() {
        return Err(ModelError::ItersWithoutFrequency(local_iters));
    }
    let i = R::of(local_iters as f64);
    let s = R::of(caps.n_samples as f64);
    Ok(i * spec.alpha * s / (caps.c_flops_per_cycle * f))
}

/// Linear channel gain at `distance_km`: the dB path-loss expression
/// 127 + 30·log10(d) interpreted as attenuation, i.e. 10^(−g_dB/10).
pub fn channel_gain_linear<R: Real>(distance_km: R) -> Result<R, ModelError> {
    if distance_km <= R::zero() {
        return Err(ModelError::NonPositiveDistance(distance_km.f64()));
    }
    let thirty = R::of(30.0);
    let g_db = R::of(127.0) + thirty * distance_km.log10();
    Ok(R::of(10.0).powf(-g_db / R::of(10.0)))
}

/// Achievable uplink rate b·log2(1 + g·p/(b·N0)) in bits/s; 0 when `p = 0`.
pub fn data_rate<R: Real>(bandwidth: R, gain: R, p: R, n0: R) -> R {
    if p <= R::zero() {
        return R::zero();
    }
    let snr = gain * p / (bandwidth * n0);
    bandwidth * (R::one() + snr).log2()
}

/// Transmission energy m·p/r in joules; 0 when `p = 0` (no transmission).
pub fn tx_energy<R: Real>(spec: &FlModelSpec<R>, p: R, rate: R) -> Result<R, ModelError> {
    if p <= R::zero() {
        return Ok(R::zero());
    }
    if rate <= R::zero() {
        return Err(ModelError::PowerWithoutRate(p.f64()));
    }
    Ok(spec.m_bits * p / rate)
}

/// Transmission time m/r in seconds; 0 when `p = 0`.
pub fn tx_time<R: Real>(spec: &FlModelSpec<R>, p: R, rate: R) -> Result<R, ModelError> {
    if p <= R::zero() {
        return Ok(R::zero());
    }
    if rate <= R::zero() {
        return Err(ModelError::PowerWithoutRate(p.f64()));
    }
    Ok(spec.m_bits / rate)
}

/// Deadline check: the round survives only if τ + t < H, strictly.
pub fn deadline_ok<R: Real>(tau: R, t: R, h: R) -> bool {
    tau + t < h
}

/// Participation indicator: 1 iff transmit power is nonzero.
pub fn omega<R: Real>(p: R) -> u32 {
    u32::from(p > R::zero())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn spec() -> FlModelSpec<f64> {
        FlModelSpec {
            alpha: 1.8e6,
            m_bits: 2.008e7,
            eta: 0.5,
            epsilon0: 0.04,
            f_star: 1.0,
            deadline_h: 13.0,
        }
    }

    fn caps(c: f64, s: u32) -> WorkerCaps<f64> {
        WorkerCaps {
            f_max: 3e9,
            p_max: 1.995262314968880,
            c_flops_per_cycle: c,
            sigma_cap: 1e-28,
            bandwidth: 20e6,
            distance_km: 0.1,
            n_samples: s,
            data_variance: 1.0,
        }
    }

    #[test]
    fn variance_hand_covariance() {
        // deviations ±0.5 in both columns: trace 0.5 + 0.5
        let rows = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        assert_relative_eq!(dataset_variance(&rows).unwrap(), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn variance_zero_spread() {
        let rows = vec![vec![1.0, 0.0]; 3];
        assert_eq!(dataset_variance(&rows).unwrap(), 0.0);
    }

    #[test]
    fn variance_one_dimensional() {
        // (4 + 0 + 4) / 2
        let rows = vec![vec![0.0], vec![2.0], vec![4.0]];
        assert_relative_eq!(dataset_variance(&rows).unwrap(), 4.0, max_relative = 1e-12);
    }

    #[test]
    fn variance_needs_two_rows() {
        assert!(matches!(
            dataset_variance::<f64>(&[vec![1.0]]),
            Err(ModelError::TooFewRows(1))
        ));
    }

    #[test]
    fn variance_rejects_ragged_rows() {
        let rows = vec![vec![0.0, 1.0], vec![1.0]];
        assert!(matches!(
            dataset_variance(&rows),
            Err(ModelError::RaggedRows(2, 1))
        ));
    }

    #[test]
    fn comp_energy_oracles() {
        let e = comp_energy(&caps(4.0, 1000), &spec(), 5, 1e9);
        assert_relative_eq!(e, 0.225, max_relative = 1e-12);
        let e = comp_energy(&caps(2.0, 800), &spec(), 2, 3e9);
        assert_relative_eq!(e, 1.296, max_relative = 1e-12);
        assert_eq!(comp_energy(&caps(4.0, 1000), &spec(), 5, 0.0), 0.0);
    }

    #[test]
    fn comp_time_oracle() {
        let tau = comp_time(&caps(4.0, 1000), &spec(), 5, 1e9).unwrap();
        assert_relative_eq!(tau, 2.25, max_relative = 1e-12);
        assert_eq!(comp_time(&caps(4.0, 1000), &spec(), 0, 0.0).unwrap(), 0.0);
        assert!(comp_time(&caps(4.0, 1000), &spec(), 5, 0.0).is_err());
    }

    #[test]
    fn gain_oracles() {
        assert_relative_eq!(
            channel_gain_linear(1.0_f64).unwrap(),
            1.995262314968883e-13,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            channel_gain_linear(0.1_f64).unwrap(),
            1.995262314968883e-10,
            max_relative = 1e-12
        );
        // 30 dB per decade over two decades
        let ratio = channel_gain_linear(0.01_f64).unwrap() / channel_gain_linear(1.0).unwrap();
        assert_relative_eq!(ratio, 1e6, max_relative = 1e-9);
        assert!(channel_gain_linear(0.0_f64).is_err());
        assert!(channel_gain_linear(-1.0_f64).is_err());
    }

    #[test]
    fn rate_oracle() {
        // d = 0.1 km, 33 dBm, 20 MHz, N0 = 10^−18.8 W/Hz → SNR = 10^2.4 / 2
        let g = 10f64.powf(-9.7);
        let n0 = 10f64.powf(-18.8);
        let p = 1.9952623149688795;
        let r = data_rate(20e6, g, p, n0);
        assert_relative_eq!(r, 1.3968137766986766e8, max_relative = 1e-12);
        assert_eq!(data_rate(20e6, g, 0.0, n0), 0.0);
        assert!(data_rate(20e6, g, 2.0, n0) > data_rate(20e6, g, 1.0, n0));
    }

    #[test]
    fn tx_oracles() {
        let r = 1.3968137766986766e8;
        let p = 1.9952623149688795;
        let e = tx_energy(&spec(), p, r).unwrap();
        assert_relative_eq!(e, 0.2868304132800515, max_relative = 1e-12);
        let t = tx_time(&spec(), p, r).unwrap();
        assert_relative_eq!(t, 0.14375574135199626, max_relative = 1e-12);
        assert_eq!(tx_energy(&spec(), 0.0, 0.0).unwrap(), 0.0);
        assert_eq!(tx_time(&spec(), 0.0, 0.0).unwrap(), 0.0);
        assert!(tx_energy(&spec(), 1.0, 0.0).is_err());
    }

    #[test]
    fn deadline_and_omega() {
        assert!(deadline_ok(2.25, 0.14, 13.0));
        assert!(!deadline_ok(6.5, 6.5, 13.0)); // equality misses
        assert_eq!(omega(0.0), 0);
        assert_eq!(omega(1.0), 1);
    }
}
