//! Particle-based Monte Carlo of the full relay protocol.
//!
//! Two engines produce statistically identical trials:
//! [`Engine::Direct`] moves every molecule of the trial through the whole
//! transmission; [`Engine::HitSampling`] samples, burst by burst, only the
//! molecules that are ever observed (see [`occupancy`]). Source emissions
//! are known up front and the relay only reacts to its own A1 counts, so
//! the hit-sampling engine resolves the first hop completely before the
//! relay bursts are drawn.

pub mod occupancy;
pub mod particles;

use log::{debug, info};
use rayon::prelude::*;

use crate::config::{Hops, SystemConfig};
use crate::error::{Error, Result};
use crate::num::{CompensatedSum, Real};
use crate::protocols::{detect, RelayContext, RelayNode};
use crate::rng::{substream, StreamDomain};

pub use occupancy::{ball_probability, OccupancyTable};
pub use particles::{brownian_step, count_inside_sphere, Particle, ParticleCloud, Species};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Engine {
    Direct,
    #[default]
    HitSampling,
}

/// Culling horizon used when culling is requested without a value, in bit intervals.
pub const DEFAULT_CULL_INTERVALS: u64 = 30;

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct SimulationOptions<T> {
    pub engine: Engine,
    /// Stop following molecules this many seconds after their release.
    pub cull_horizon: Option<T>,
}

impl<T: Real> SimulationOptions<T> {
    /// Culling after [`DEFAULT_CULL_INTERVALS`] bit intervals.
    pub fn with_default_culling(engine: Engine, bit_interval: T) -> Self {
        Self {
            engine,
            cull_horizon: Some(T::from_count(DEFAULT_CULL_INTERVALS) * bit_interval),
        }
    }
}

/// What is transmitted: a relay protocol, or the direct link with a boosted emission.
#[derive(Clone, Debug)]
pub enum TransmissionPlan<T> {
    Relay(RelayContext<T>),
    Baseline { emission: u64 },
}

impl<T> TransmissionPlan<T> {
    /// Intervals between a bit's emission and its decision.
    pub fn decision_delay(&self) -> usize {
        match self {
            TransmissionPlan::Relay(_) => 1,
            TransmissionPlan::Baseline { .. } => 0,
        }
    }
}

/// Everything observed in one transmission of `L` bits over `L + 1` intervals.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrialResult {
    pub source_bits: Vec<u8>,
    /// Relay threshold decisions for intervals `1..=L` (Type-1 and DF only).
    pub relay_estimates: Option<Vec<u8>>,
    /// Destination decisions at the configured threshold, one per source bit.
    pub decisions: Vec<u8>,
    /// `N_A2[j]` for `j = 1..=L+1` (the first is always zero).
    pub relay_emissions: Vec<u64>,
    /// Relay sample sums per interval.
    pub relay_sums: Vec<u64>,
    /// Destination sample sums per interval.
    pub destination_sums: Vec<u64>,
    pub decision_delay: usize,
    /// Molecules whose tracking was cut short by culling.
    pub culled: u64,
}

impl TrialResult {
    /// Decisions the destination would take with threshold `xi`.
    pub fn decisions_at(&self, xi: u64) -> Vec<u8> {
        (0..self.source_bits.len())
            .map(|j| detect(self.destination_sums[j + self.decision_delay], xi))
            .collect()
    }

    pub fn errors_at(&self, xi: u64) -> u64 {
        self.source_bits
            .iter()
            .enumerate()
            .filter(|&(j, &b)| detect(self.destination_sums[j + self.decision_delay], xi) != b)
            .count() as u64
    }

    pub fn trace(&self, trial: u64) -> Vec<TraceRecord> {
        let l = self.source_bits.len();
        (0..=l)
            .map(|i| {
                // Bit decided in this interval, if any.
                let decided = i.checked_sub(self.decision_delay).filter(|&b| b < l);
                TraceRecord {
                    trial,
                    interval: i + 1,
                    source_bit: self.source_bits.get(i).copied(),
                    relay_sum: self.relay_sums[i],
                    relay_estimate: self.relay_estimates.as_ref().and_then(|e| e.get(i).copied()),
                    relay_emission: self.relay_emissions[i],
                    destination_sum: self.destination_sums[i],
                    decided_bit: decided.map(|b| b + 1),
                    decision: decided.map(|b| self.decisions[b]),
                }
            })
            .collect()
    }
}

/// One row of the trial-trace dump.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TraceRecord {
    pub trial: u64,
    pub interval: usize,
    pub source_bit: Option<u8>,
    pub relay_sum: u64,
    pub relay_estimate: Option<u8>,
    pub relay_emission: u64,
    pub destination_sum: u64,
    /// Index of the bit decided at the end of this interval.
    pub decided_bit: Option<usize>,
    pub decision: Option<u8>,
}

/// Simulated bit error rate with a Wilson 95% interval.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BerEstimate {
    pub errors: u64,
    pub bits: u64,
    pub ber: f64,
    /// Half-width of the Wilson score interval.
    pub ci95: f64,
    /// Centre of the Wilson score interval.
    pub center: f64,
    pub seed: u64,
    pub trials: u64,
    pub threshold: u64,
}

const Z95: f64 = 1.959_963_984_540_054;

impl BerEstimate {
    pub fn new(errors: u64, bits: u64, seed: u64, trials: u64, threshold: u64) -> Self {
        let (center, ci95) = wilson(errors, bits);
        Self {
            errors,
            bits,
            ber: if bits == 0 { 0.0 } else { errors as f64 / bits as f64 },
            ci95,
            center,
            seed,
            trials,
            threshold,
        }
    }

    pub fn lower(&self) -> f64 {
        (self.center - self.ci95).max(0.0)
    }

    pub fn upper(&self) -> f64 {
        (self.center + self.ci95).min(1.0)
    }
}

/// Centre and half-width of the Wilson score interval at 95%.
pub fn wilson(successes: u64, n: u64) -> (f64, f64) {
    if n == 0 {
        return (0.5, 0.5);
    }
    let n = n as f64;
    let p = successes as f64 / n;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = Z95 * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    (center, half)
}

/// Trial runner for one configuration.
#[derive(Clone, Debug)]
pub struct Simulator<T> {
    config: SystemConfig<T>,
    hops: Hops<T>,
    options: SimulationOptions<T>,
    source_relay: OccupancyTable<T>,
    relay_destination: OccupancyTable<T>,
    source_destination: OccupancyTable<T>,
}

impl<T: Real> Simulator<T> {
    pub fn new(config: SystemConfig<T>, options: SimulationOptions<T>) -> Result<Self> {
        config.validate()?;
        let hops = config.hops()?;
        let s = &config.sampling;
        let l = config.source.seq_len();
        let times: Vec<T> = (0..=l)
            .flat_map(|a| (1..=s.samples_per_bit()).map(move |m| T::from_count(a as u64) * s.bit_interval() + s.sample_time(m)))
            .collect();
        let table = |link: &crate::channel::LinkGeometry<T>| {
            OccupancyTable::new(
                link.emitter_pos(),
                link.observer().center(),
                link.observer().radius(),
                link.diffusion_coeff(),
                times.clone(),
            )
        };
        if let Some(h) = options.cull_horizon {
            if !(h > T::zero()) {
                return Err(Error::Config(format!("culling horizon must be positive, got {h}")));
            }
            let later = times.iter().filter(|&&t| t > h).count();
            let mut worst = T::zero();
            for link in [&hops.source_relay, &hops.relay_destination, &hops.source_destination] {
                // Past the peak the hit probability only decreases.
                let t = if h > link.peak_time() { h } else { link.peak_time() };
                worst = worst.max(crate::channel::hit_probability(link, t)?);
            }
            info!(
                "culling after {h} s: at most {} expected hits per molecule are neglected",
                worst * T::from_count(later as u64)
            );
        }
        Ok(Self {
            source_relay: table(&hops.source_relay),
            relay_destination: table(&hops.relay_destination),
            source_destination: table(&hops.source_destination),
            config,
            hops,
            options,
        })
    }

    pub fn config(&self) -> &SystemConfig<T> {
        &self.config
    }

    /// Source bits of trial `index`, drawn i.i.d. with `P₁`.
    pub fn draw_sequence(&self, seed: u64, index: u64) -> Vec<u8> {
        let mut rng = substream(seed, StreamDomain::SequenceSample, index);
        let src = &self.config.source;
        src.draw_bits(src.seq_len(), &mut rng)
    }

    fn check_plan(&self, plan: &TransmissionPlan<T>, bits: &[u8]) -> Result<()> {
        if bits.len() != self.config.source.seq_len() {
            return Err(Error::Config(format!(
                "expected {} source bits, got {}",
                self.config.source.seq_len(),
                bits.len()
            )));
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::Domain("source bits must be 0 or 1".into()));
        }
        if let TransmissionPlan::Relay(ctx) = plan {
            if !ctx.protocol.has_relay() {
                return Err(Error::Config("baseline protocol passed as a relay plan".into()));
            }
        }
        Ok(())
    }

    fn horizon_samples(&self) -> usize {
        let n = self.source_relay.len();
        match self.options.cull_horizon {
            None => n,
            Some(h) => self.source_relay.times().partition_point(|&t| t <= h),
        }
    }

    /// One transmission of `bits` under `plan`; randomness from trial `index` of `seed`.
    pub fn run_trial(&self, plan: &TransmissionPlan<T>, bits: &[u8], seed: u64, index: u64) -> Result<TrialResult> {
        self.check_plan(plan, bits)?;
        match self.options.engine {
            Engine::HitSampling => self.run_bursts(plan, bits, seed, index),
            Engine::Direct => self.run_particles(plan, bits, seed, index),
        }
    }

    fn interval_sums(samples: &[u64], m: usize) -> Vec<u64> {
        samples.chunks(m).map(|c| c.iter().sum()).collect()
    }

    fn run_bursts(&self, plan: &TransmissionPlan<T>, bits: &[u8], seed: u64, index: u64) -> Result<TrialResult> {
        let l = bits.len();
        let m = self.config.sampling.samples_per_bit();
        let n_samples = (l + 1) * m;
        let horizon = self.horizon_samples();
        let mut culled = 0u64;
        let mut burst = |table: &OccupancyTable<T>, n: u64, interval: usize, out: &mut [u64], rng: &mut rand_chacha::ChaCha8Rng| {
            let start = (interval - 1) * m;
            let len = (n_samples - start).min(horizon);
            if len < n_samples - start {
                culled += n;
            }
            table.sample_burst(n, &mut out[start..start + len], rng);
        };
        let mut rng1 = substream(seed, StreamDomain::Trial, index);
        let mut dest_samples = vec![0u64; n_samples];
        let xi_d = self.config.detection.xi_d;
        let (relay_sums, relay_emissions, relay_estimates) = match plan {
            TransmissionPlan::Relay(ctx) => {
                let mut relay_samples = vec![0u64; n_samples];
                for (i, &b) in bits.iter().enumerate() {
                    if b == 1 {
                        burst(&self.source_relay, self.config.source.n_a1(), i + 1, &mut relay_samples, &mut rng1);
                    }
                }
                let relay_sums = Self::interval_sums(&relay_samples, m);
                let mut node = RelayNode::new(ctx);
                let mut emissions = vec![0u64; l + 1];
                for j in 2..=l + 1 {
                    emissions[j - 1] = node.forward(j, relay_sums[j - 2])?;
                }
                let mut rng2 = substream(seed, StreamDomain::SecondHop, index);
                for (j, &e) in emissions.iter().enumerate() {
                    if e > 0 {
                        burst(&self.relay_destination, e, j + 1, &mut dest_samples, &mut rng2);
                    }
                }
                let estimates = ctx.protocol.uses_relay_threshold().then(|| node.estimates().to_vec());
                (relay_sums, emissions, estimates)
            }
            TransmissionPlan::Baseline { emission } => {
                for (i, &b) in bits.iter().enumerate() {
                    if b == 1 {
                        burst(&self.source_destination, *emission, i + 1, &mut dest_samples, &mut rng1);
                    }
                }
                (vec![0; l + 1], vec![0; l + 1], None)
            }
        };
        let destination_sums = Self::interval_sums(&dest_samples, m);
        let delay = plan.decision_delay();
        let decisions = (0..l).map(|j| detect(destination_sums[j + delay], xi_d)).collect();
        if culled > 0 {
            debug!("trial {index}: {culled} molecules followed only up to the culling horizon");
        }
        Ok(TrialResult {
            source_bits: bits.to_vec(),
            relay_estimates,
            decisions,
            relay_emissions,
            relay_sums,
            destination_sums,
            decision_delay: delay,
            culled,
        })
    }

    fn run_particles(&self, plan: &TransmissionPlan<T>, bits: &[u8], seed: u64, index: u64) -> Result<TrialResult> {
        let l = bits.len();
        let s = self.config.sampling;
        let m = s.samples_per_bit();
        let d1 = self.config.medium.diffusion_coeff_a1;
        let d2 = self.config.medium.diffusion_coeff_a2;
        let relay_node = *self.hops.source_relay.observer();
        let dest_node = *self.hops.relay_destination.observer();
        let relay_pos = self.hops.relay_destination.emitter_pos();
        let source_pos = self.hops.source_relay.emitter_pos();
        let mut rng = substream(seed, StreamDomain::Trial, index);
        let mut cloud = ParticleCloud::new();
        let mut now = T::zero();
        let mut relay_sums = vec![0u64; l + 1];
        let mut destination_sums = vec![0u64; l + 1];
        let mut emissions = vec![0u64; l + 1];
        let ctx = match plan {
            TransmissionPlan::Relay(ctx) => Some(ctx),
            TransmissionPlan::Baseline { .. } => None,
        };
        let mut node = ctx.map(RelayNode::new);
        let mut culled = 0u64;
        for j in 1..=l + 1 {
            let start = T::from_count((j - 1) as u64) * s.bit_interval();
            if start > now {
                cloud.advance(start - now, d1, d2, &mut rng);
                now = start;
            }
            if let Some(horizon) = self.options.cull_horizon {
                culled += cloud.cull(now, horizon);
            }
            if let Some(node) = node.as_mut() {
                if j >= 2 {
                    emissions[j - 1] = node.forward(j, relay_sums[j - 2])?;
                    cloud.emit(emissions[j - 1], relay_pos, Species::A2, now);
                }
            }
            if j <= l && bits[j - 1] == 1 {
                let n = match plan {
                    TransmissionPlan::Relay(_) => self.config.source.n_a1(),
                    TransmissionPlan::Baseline { emission } => *emission,
                };
                cloud.emit(n, source_pos, Species::A1, now);
            }
            for k in 1..=m {
                let t = start + s.sample_time(k);
                cloud.advance(t - now, d1, d2, &mut rng);
                now = t;
                match plan {
                    TransmissionPlan::Relay(_) => {
                        relay_sums[j - 1] += cloud.count_inside(&relay_node, Species::A1);
                        destination_sums[j - 1] += cloud.count_inside(&dest_node, Species::A2);
                    }
                    TransmissionPlan::Baseline { .. } => {
                        destination_sums[j - 1] += cloud.count_inside(&dest_node, Species::A1);
                    }
                }
            }
        }
        let delay = plan.decision_delay();
        let xi_d = self.config.detection.xi_d;
        let decisions = (0..l).map(|j| detect(destination_sums[j + delay], xi_d)).collect();
        let relay_estimates = match (ctx, node) {
            (Some(c), Some(n)) if c.protocol.uses_relay_threshold() => Some(n.estimates().to_vec()),
            _ => None,
        };
        Ok(TrialResult {
            source_bits: bits.to_vec(),
            relay_estimates,
            decisions,
            relay_emissions: emissions,
            relay_sums,
            destination_sums,
            decision_delay: delay,
            culled,
        })
    }

    /// Runs `trials` independent trials with sequences from `bits_for(index)`.
    /// The output is ordered by trial index and independent of the thread count.
    pub fn run_trials_with<F>(&self, plan: &TransmissionPlan<T>, trials: u64, seed: u64, bits_for: F) -> Result<Vec<TrialResult>>
    where
        F: Fn(u64) -> Vec<u8> + Sync,
    {
        (0..trials)
            .into_par_iter()
            .map(|t| self.run_trial(plan, &bits_for(t), seed, t))
            .collect()
    }

    /// Trials with fresh i.i.d. source sequences.
    pub fn run_trials(&self, plan: &TransmissionPlan<T>, trials: u64, seed: u64) -> Result<Vec<TrialResult>> {
        self.run_trials_with(plan, trials, seed, |t| self.draw_sequence(seed, t))
    }

    /// Bit error rate at the configured destination threshold.
    pub fn monte_carlo_ber(&self, plan: &TransmissionPlan<T>, trials: u64, seed: u64) -> Result<BerEstimate> {
        if trials == 0 {
            return Err(Error::Domain("at least one trial is required".into()));
        }
        let results = self.run_trials(plan, trials, seed)?;
        Ok(ber_at(&results, self.config.detection.xi_d, seed))
    }
}

/// Bit error rate of recorded trials re-decided with threshold `xi`.
pub fn ber_at(results: &[TrialResult], xi: u64, seed: u64) -> BerEstimate {
    let errors = results.iter().map(|r| r.errors_at(xi)).sum();
    let bits = results.iter().map(|r| r.source_bits.len() as u64).sum();
    BerEstimate::new(errors, bits, seed, results.len() as u64, xi)
}

/// [`ber_at`] for each threshold.
pub fn ber_sweep(results: &[TrialResult], thresholds: &[u64], seed: u64) -> Vec<BerEstimate> {
    thresholds.iter().map(|&xi| ber_at(results, xi, seed)).collect()
}

/// Mean relay emission per forwarding interval (`j = 2..=L+1`).
pub fn measure_relay_budget<T: Real>(plan: &TransmissionPlan<T>, results: &[TrialResult]) -> Result<T> {
    if let TransmissionPlan::Baseline { .. } = plan {
        return Err(Error::InvalidProtocol("the baseline has no relay".into()));
    }
    let mut acc = CompensatedSum::new();
    let mut n = 0u64;
    for r in results {
        for &e in &r.relay_emissions[1..] {
            acc.add(T::from_count(e));
            n += 1;
        }
    }
    Ok(if n == 0 { T::zero() } else { acc.value() / T::from_count(n) })
}
