//! Semi-analytic end-to-end error probability of the two-hop link.
//!
//! The relay's observation in interval `i` is Poisson with mean
//! `N̄[i]`. The destination's count in interval `j + 1` is then Poisson with
//! mean `Σ_i e_i · Σ_m P_RD((j−i)T + t_m)`, where `e_i` is the relay emission
//! driven by interval `i`. Two ways of fixing the relay observations are
//! offered: their means (deterministic mode) or one Poisson draw each
//! (sampled mode).

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;

use crate::channel::HopProfile;
use crate::config::{ChannelTables, SystemConfig};
use crate::error::{Error, Result};
use crate::num::{CompensatedSum, Real};
use crate::protocols::{detect, ProtocolKind, RelayContext};
use crate::rng::{substream, StreamDomain};
use crate::special::poisson_cdf_below_many;

const CHUNK: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MeanMode {
    /// Relay observations replaced by their means.
    Deterministic,
    /// One Poisson realization of every relay observation.
    Sampled,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    SampledRealization,
    DeterministicMean,
}

/// Relay observations per interval, either drawn or averaged.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservedCountVector<T> {
    pub counts: Vec<T>,
    pub provenance: Provenance,
}

/// Split of the destination mean into its three sources.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IsiDecomposition<T> {
    /// Earlier relay emissions still inside the destination.
    pub second_hop_isi: T,
    /// First-hop ISI at the relay, re-emitted in the latest relay burst.
    pub amplified_first_hop_isi: T,
    pub current_bit_term: T,
}

impl<T: Real> IsiDecomposition<T> {
    pub fn total(&self) -> T {
        self.second_hop_isi + self.amplified_first_hop_isi + self.current_bit_term
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntervalError<T> {
    pub j: usize,
    pub pe_given_1: T,
    pub pe_given_0: T,
    /// `P₁·Pe|1 + P₀·Pe|0`.
    pub pe: T,
}

impl<T: Real> IntervalError<T> {
    pub fn mix(j: usize, p1: T, pe_given_1: T, pe_given_0: T) -> Self {
        Self {
            j,
            pe_given_1,
            pe_given_0,
            pe: p1 * pe_given_1 + (T::one() - p1) * pe_given_0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErrorProbabilityReport<T> {
    pub threshold: u64,
    pub per_interval: Vec<IntervalError<T>>,
    /// Average of `pe` over all intervals.
    pub overall: T,
    /// Average relay emission per interval (zero for the baseline).
    pub relay_budget: T,
    pub n_sequence_samples: usize,
    pub seed: u64,
}

/// Monte Carlo settings of an averaged evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AverageOptions {
    pub n_sequences: usize,
    pub seed: u64,
    pub mode: MeanMode,
    /// Realizations per sequence in sampled mode (Type-1 and sampled relays).
    pub draws: usize,
}

impl AverageOptions {
    pub fn new(n_sequences: usize, seed: u64, mode: MeanMode) -> Self {
        Self {
            n_sequences,
            seed,
            mode,
            draws: 1,
        }
    }
}

/// `N̄[i]` for `i = 1..=len`, the relay's mean observation per interval.
pub fn first_hop_means<T: Real>(sequence: &[u8], n_a1: T, first_hop: &HopProfile<T>) -> Vec<T> {
    (1..=sequence.len())
        .map(|i| {
            let mut acc = CompensatedSum::new();
            for (w, &b) in sequence[..i].iter().enumerate() {
                if b == 1 {
                    acc.add(first_hop.window(i - 1 - w));
                }
            }
            n_a1 * acc.value()
        })
        .collect()
}

/// One Poisson draw; zero mean gives zero.
pub fn poisson_draw<T: Real, R: Rng + ?Sized>(mean: T, rng: &mut R) -> u64 {
    let m = mean.as_f64();
    if !(m > 0.0) {
        return 0;
    }
    let d = Poisson::new(m).expect("finite positive Poisson mean");
    d.sample(rng) as u64
}

pub fn sample_first_hop_realization<T: Real>(means: &[T], seed: u64) -> ObservedCountVector<T> {
    let mut rng = substream(seed, StreamDomain::Realization, 0);
    ObservedCountVector {
        counts: means
            .iter()
            .map(|&m| T::from_count(poisson_draw(m, &mut rng)))
            .collect(),
        provenance: Provenance::SampledRealization,
    }
}

/// Destination mean in interval `j + 1`: `Σ_{i=1}^{j} k_i γ_i Σ_m P_RD((j−i)T + t_m)`.
///
/// `gains[i−1]` multiplies `counts[i−1]` (the gain applied in interval `i + 1`).
pub fn second_hop_mean<T: Real>(counts: &[T], gains: &[T], second_hop: &HopProfile<T>, j: usize) -> T {
    let mut acc = CompensatedSum::new();
    for i in 1..=j {
        acc.add(gains[i - 1] * counts[i - 1] * second_hop.window(j - i));
    }
    acc.value()
}

/// Three-way split of the destination mean for the bit `sequence[j−1]`,
/// with relay observations at their means.
pub fn isi_decompose<T: Real>(
    sequence: &[u8],
    gains: &[T],
    first_hop: &HopProfile<T>,
    second_hop: &HopProfile<T>,
    n_a1: T,
) -> IsiDecomposition<T> {
    let j = sequence.len();
    if j == 0 {
        return IsiDecomposition {
            second_hop_isi: T::zero(),
            amplified_first_hop_isi: T::zero(),
            current_bit_term: T::zero(),
        };
    }
    let means = first_hop_means(sequence, n_a1, first_hop);
    let mut earlier = CompensatedSum::new();
    for i in 1..j {
        earlier.add(gains[i - 1] * means[i - 1] * second_hop.window(j - i));
    }
    let second_hop_isi = earlier.value();
    let k = gains[j - 1];
    let rd0 = second_hop.window(0);
    let mut isi = CompensatedSum::new();
    for (w, &b) in sequence[..j - 1].iter().enumerate() {
        if b == 1 {
            isi.add(first_hop.window(j - 1 - w));
        }
    }
    let current = T::from_count(sequence[j - 1] as u64) * first_hop.window(0);
    IsiDecomposition {
        second_hop_isi,
        amplified_first_hop_isi: k * n_a1 * isi.value() * rd0,
        current_bit_term: k * n_a1 * current * rd0,
    }
}

/// Destination means under both hypotheses for each decided bit, plus the
/// emissions driven by the true bits.
struct Hypotheses<T> {
    lambda1: Vec<T>,
    lambda0: Vec<T>,
    emissions: Vec<T>,
}

/// Semi-analytic evaluator for one system configuration.
#[derive(Clone, Debug)]
pub struct Analysis<T> {
    config: SystemConfig<T>,
    tables: ChannelTables<T>,
}

impl<T: Real> Analysis<T> {
    pub fn new(config: SystemConfig<T>) -> Result<Self> {
        config.validate()?;
        let tables = config.tables()?;
        Ok(Self { config, tables })
    }

    pub fn config(&self) -> &SystemConfig<T> {
        &self.config
    }
    pub fn tables(&self) -> &ChannelTables<T> {
        &self.tables
    }

    fn n_a1(&self) -> T {
        T::from_count(self.config.source.n_a1())
    }

    /// Relay emission driven by observation `x` of interval `i`.
    fn emission(
        &self,
        relay: &RelayContext<T>,
        i: usize,
        x: T,
        estimates: &[u8],
        from_mean: bool,
        type1_gains: &mut Vec<T>,
    ) -> Result<T> {
        Ok(match relay.protocol {
            ProtocolKind::Baseline => return Err(Error::InvalidProtocol("the baseline has no relay".into())),
            ProtocolKind::FixedGainAf | ProtocolKind::VariableGainAfType2 => {
                let k = relay
                    .schedule
                    .gain_at(i + 1)
                    .ok_or_else(|| Error::Config(format!("no gain scheduled for interval {}", i + 1)))?;
                k * x
            }
            ProtocolKind::VariableGainAfType1 => {
                let model = relay
                    .gain_model
                    .as_ref()
                    .ok_or_else(|| Error::Config("Type-1 relay without a gain model".into()))?;
                // Gain for interval i+1 depends on estimates of intervals 1..i-1.
                while type1_gains.len() < i {
                    let h = type1_gains.len();
                    type1_gains.push(model.optimal_gain(&estimates[..h]).gain);
                }
                type1_gains[i - 1] * x
            }
            ProtocolKind::DecodeForward { df_emission } => {
                let e = T::from_count(df_emission);
                if from_mean {
                    let below = poisson_cdf_below_many(&[relay.xi_r], x)[0];
                    e * (T::one() - below)
                } else {
                    let count = x.to_u64().expect("sampled count");
                    e * T::from_count(detect(count, relay.xi_r) as u64)
                }
            }
        })
    }

    /// Hypothesis means for bits `1..=upto` given the true bits (at least `upto − 1` of them).
    fn hypotheses<R: Rng + ?Sized>(
        &self,
        bits: &[u8],
        upto: usize,
        relay: &RelayContext<T>,
        mode: MeanMode,
        rng: &mut R,
    ) -> Result<Hypotheses<T>> {
        let sr = &self.tables.source_relay;
        let rd = &self.tables.relay_destination;
        let n_a1 = self.n_a1();
        let cur = n_a1 * sr.window(0);
        let means = first_hop_means(bits, n_a1, sr);
        let needs_draws = mode == MeanMode::Sampled || relay.protocol == ProtocolKind::VariableGainAfType1;
        let drawn: Vec<u64> = if needs_draws {
            means.iter().map(|&m| poisson_draw(m, rng)).collect()
        } else {
            Vec::new()
        };
        let estimates: Vec<u8> = drawn.iter().map(|&g| detect(g, relay.xi_r)).collect();
        let from_mean = mode == MeanMode::Deterministic;
        let observe = |i: usize| -> T {
            if from_mean {
                means[i - 1]
            } else {
                T::from_count(drawn[i - 1])
            }
        };
        let mut type1_gains = Vec::new();
        let mut emissions = Vec::with_capacity(bits.len());
        for i in 1..=bits.len() {
            emissions.push(self.emission(relay, i, observe(i), &estimates, from_mean, &mut type1_gains)?);
        }
        let mut lambda1 = Vec::with_capacity(upto);
        let mut lambda0 = Vec::with_capacity(upto);
        for j in 1..=upto {
            let mut isi = CompensatedSum::new();
            for i in 1..j {
                isi.add(emissions[i - 1] * rd.window(j - i));
            }
            let prior = if j <= bits.len() {
                means[j - 1] - T::from_count(bits[j - 1] as u64) * cur
            } else {
                first_hop_means(&[bits, &[0]].concat(), n_a1, sr)[j - 1]
            };
            for (b, out) in [(1u8, &mut lambda1), (0u8, &mut lambda0)] {
                let mean_b = (prior + T::from_count(b as u64) * cur).max(T::zero());
                let x = if from_mean {
                    mean_b
                } else {
                    T::from_count(poisson_draw(mean_b, rng))
                };
                let e = self.emission(relay, j, x, &estimates, from_mean, &mut type1_gains)?;
                out.push(isi.value() + e * rd.window(0));
            }
        }
        emissions.truncate(bits.len());
        Ok(Hypotheses {
            lambda1,
            lambda0,
            emissions,
        })
    }

    /// `(Pe|1, Pe|0, Pe)` for the bit following `prefix`, averaged over
    /// `draws` realizations in sampled mode.
    pub fn expected_error_prob(
        &self,
        prefix: &[u8],
        relay: &RelayContext<T>,
        mode: MeanMode,
        draws: usize,
        seed: u64,
    ) -> Result<IntervalError<T>> {
        let j = prefix.len() + 1;
        let xi = self.config.detection.xi_d;
        let mut s1 = CompensatedSum::new();
        let mut s0 = CompensatedSum::new();
        let n = draws.max(1);
        for d in 0..n {
            let mut rng = substream(seed, StreamDomain::Realization, d as u64);
            let h = self.hypotheses(prefix, j, relay, mode, &mut rng)?;
            s1.add(poisson_cdf_below_many(&[xi], h.lambda1[j - 1])[0]);
            s0.add(T::one() - poisson_cdf_below_many(&[xi], h.lambda0[j - 1])[0]);
        }
        let nn = T::from_count(n as u64);
        Ok(IntervalError::mix(j, self.config.source.p1(), s1.value() / nn, s0.value() / nn))
    }

    /// Average error probability over random sequences and all `L`
    /// intervals, at the configured destination threshold.
    pub fn average_error_prob(&self, relay: &RelayContext<T>, opts: AverageOptions) -> Result<ErrorProbabilityReport<T>> {
        let mut r = self.average_error_prob_sweep(relay, &[self.config.detection.xi_d], opts)?;
        Ok(r.remove(0))
    }

    /// [`Self::average_error_prob`] for several destination thresholds at
    /// once (the relay does not depend on them). `thresholds` must be nondecreasing.
    pub fn average_error_prob_sweep(
        &self,
        relay: &RelayContext<T>,
        thresholds: &[u64],
        opts: AverageOptions,
    ) -> Result<Vec<ErrorProbabilityReport<T>>> {
        let l = self.config.source.seq_len();
        self.averaged(thresholds, opts, |bits, rng| {
            let h = self.hypotheses(bits, l, relay, opts.mode, rng)?;
            Ok((h.lambda1, h.lambda0, h.emissions))
        })
    }

    /// Single-hop reference with the source emission boosted to
    /// `N_A1 + 2·relay_budget` (rounded), decided without delay.
    pub fn baseline_error_prob(
        &self,
        relay_budget: Option<T>,
        thresholds: &[u64],
        opts: AverageOptions,
    ) -> Result<Vec<ErrorProbabilityReport<T>>> {
        let budget = relay_budget.ok_or_else(|| {
            Error::Config("the baseline needs the average relay emission of the protocol it is compared with".into())
        })?;
        let n = baseline_emission(self.config.source.n_a1(), budget);
        let sd = &self.tables.source_destination;
        self.averaged(thresholds, opts, |bits, _rng| {
            let means = first_hop_means(bits, n, sd);
            let cur = n * sd.window(0);
            let mut l1 = Vec::with_capacity(bits.len());
            let mut l0 = Vec::with_capacity(bits.len());
            for (j, &m) in means.iter().enumerate() {
                let prior = (m - T::from_count(bits[j] as u64) * cur).max(T::zero());
                l1.push(prior + cur);
                l0.push(prior);
            }
            Ok((l1, l0, Vec::new()))
        })
    }

    fn averaged<F>(&self, thresholds: &[u64], opts: AverageOptions, eval: F) -> Result<Vec<ErrorProbabilityReport<T>>>
    where
        F: Fn(&[u8], &mut rand_chacha::ChaCha8Rng) -> Result<(Vec<T>, Vec<T>, Vec<T>)> + Sync,
    {
        if opts.n_sequences == 0 {
            return Err(Error::Domain("at least one sequence sample is required".into()));
        }
        if thresholds.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Domain("thresholds must be nondecreasing".into()));
        }
        let l = self.config.source.seq_len();
        let nt = thresholds.len();
        let draws = opts.draws.max(1);
        let source = self.config.source;
        let chunks = opts.n_sequences.div_ceil(CHUNK);
        let partials: Vec<Result<Accumulator<T>>> = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut acc = Accumulator::new(nt, l);
                for s in (c * CHUNK)..((c + 1) * CHUNK).min(opts.n_sequences) {
                    let mut seq_rng = substream(opts.seed, StreamDomain::SequenceSample, s as u64);
                    let bits = source.draw_bits(l, &mut seq_rng);
                    for d in 0..draws {
                        let unit = (s * draws + d) as u64;
                        let mut rng = substream(opts.seed, StreamDomain::Realization, unit);
                        let (l1, l0, e) = eval(&bits, &mut rng)?;
                        acc.add(thresholds, &l1, &l0, &e);
                    }
                }
                Ok(acc)
            })
            .collect();
        let mut total = Accumulator::new(nt, l);
        for p in partials {
            total.merge(&p?);
        }
        let units = T::from_count((opts.n_sequences * draws) as u64);
        let p1 = source.p1();
        let budget = if l > 0 {
            total.budget.value() / (units * T::from_count(l as u64))
        } else {
            T::zero()
        };
        Ok(thresholds
            .iter()
            .enumerate()
            .map(|(ti, &xi)| {
                let per_interval: Vec<IntervalError<T>> = (0..l)
                    .map(|j| {
                        let (a, b) = &total.sums[ti * l + j];
                        IntervalError::mix(j + 1, p1, a.value() / units, b.value() / units)
                    })
                    .collect();
                let overall = per_interval.iter().map(|e| e.pe).collect::<CompensatedSum<T>>().value()
                    / T::from_count(l as u64);
                ErrorProbabilityReport {
                    threshold: xi,
                    per_interval,
                    overall,
                    relay_budget: budget,
                    n_sequence_samples: opts.n_sequences,
                    seed: opts.seed,
                }
            })
            .collect())
    }
}

/// Source emission of the baseline: `N_A1 + 2·N̄_A2`, rounded.
pub fn baseline_emission<T: Real>(n_a1: u64, relay_budget: T) -> T {
    (T::from_count(n_a1) + T::lit(2.0) * relay_budget).round_half_away()
}

struct Accumulator<T> {
    /// `(Σ Pe|1, Σ Pe|0)` per (threshold, interval).
    sums: Vec<(CompensatedSum<T>, CompensatedSum<T>)>,
    budget: CompensatedSum<T>,
}

impl<T: Real> Accumulator<T> {
    fn new(nt: usize, l: usize) -> Self {
        Self {
            sums: vec![(CompensatedSum::new(), CompensatedSum::new()); nt * l],
            budget: CompensatedSum::new(),
        }
    }

    fn add(&mut self, thresholds: &[u64], lambda1: &[T], lambda0: &[T], emissions: &[T]) {
        let l = lambda1.len();
        for j in 0..l {
            let below1 = poisson_cdf_below_many(thresholds, lambda1[j]);
            let below0 = poisson_cdf_below_many(thresholds, lambda0[j]);
            for ti in 0..thresholds.len() {
                let slot = &mut self.sums[ti * l + j];
                slot.0.add(below1[ti]);
                slot.1.add(T::one() - below0[ti]);
            }
        }
        for &e in emissions {
            self.budget.add(e);
        }
    }

    fn merge(&mut self, other: &Self) {
        for (a, b) in self.sums.iter_mut().zip(&other.sums) {
            a.0.add(b.0.value());
            a.1.add(b.1.value());
        }
        self.budget.add(other.budget.value());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocols::AmplificationSchedule;
    use approx::assert_relative_eq;

    fn analysis() -> Analysis<f64> {
        Analysis::new(SystemConfig::reference_operating_point()).unwrap()
    }

    fn fixed(k: f64) -> RelayContext<f64> {
        RelayContext::new(
            ProtocolKind::FixedGainAf,
            AmplificationSchedule::fixed(k, 10_000).unwrap(),
            1,
            None,
        )
        .unwrap()
    }

    #[test]
    fn first_hop_means_basics() {
        let a = analysis();
        let sr = &a.tables().source_relay;
        assert!(first_hop_means(&[0, 0, 0], 2500.0, sr).iter().all(|&m| m == 0.0));
        let m11 = first_hop_means(&[1, 1], 2500.0, sr);
        let m10 = first_hop_means(&[1, 0], 2500.0, sr);
        assert!(m11[1] > m10[1]);
        assert_relative_eq!(m10[0], 2500.0 * sr.window(0), max_relative = 1e-15);
    }

    #[test]
    fn second_hop_mean_is_linear() {
        let a = analysis();
        let rd = &a.tables().relay_destination;
        let counts = [12.0, 3.0, 20.0];
        let g = [100.0, 100.0, 100.0];
        let g2 = [200.0, 200.0, 200.0];
        let m = second_hop_mean(&counts, &g, rd, 3);
        assert_relative_eq!(second_hop_mean(&counts, &g2, rd, 3), 2.0 * m, max_relative = 1e-14);
        assert_eq!(second_hop_mean(&[0.0; 3], &g, rd, 3), 0.0);
        assert_relative_eq!(second_hop_mean(&[7.0], &[50.0], rd, 1), 350.0 * rd.window(0), max_relative = 1e-15);
    }

    #[test]
    fn decomposition_single_bit() {
        let a = analysis();
        let t = a.tables();
        let d = isi_decompose(&[1], &[150.0], &t.source_relay, &t.relay_destination, 2500.0);
        assert_eq!(d.second_hop_isi, 0.0);
        assert_eq!(d.amplified_first_hop_isi, 0.0);
        assert_relative_eq!(
            d.current_bit_term,
            150.0 * 2500.0 * t.source_relay.window(0) * t.relay_destination.window(0),
            max_relative = 1e-14
        );
        let z = isi_decompose(&[0, 0, 0], &[1.0; 3], &t.source_relay, &t.relay_destination, 2500.0);
        assert_eq!(z.total(), 0.0);
    }

    #[test]
    fn silent_prefix_has_no_false_alarm() {
        let a = analysis();
        let e = a
            .expected_error_prob(&[0, 0, 0], &fixed(200.0), MeanMode::Deterministic, 1, 0)
            .unwrap();
        assert_eq!(e.pe_given_0, 0.0);
        assert_eq!(e.pe, 0.5 * e.pe_given_1);
    }

    #[test]
    fn unit_threshold_gives_exponential_miss() {
        let mut cfg = SystemConfig::<f64>::reference_operating_point();
        cfg.detection.xi_d = 1;
        let a = Analysis::new(cfg).unwrap();
        let relay = fixed(100.0);
        let e = a.expected_error_prob(&[1, 0], &relay, MeanMode::Deterministic, 1, 0).unwrap();
        let t = a.tables();
        let means = first_hop_means(&[1, 0, 1], 2500.0, &t.source_relay);
        let lambda1 = second_hop_mean(&means, &[100.0; 3], &t.relay_destination, 3);
        assert_relative_eq!(e.pe_given_1, (-lambda1).exp(), max_relative = 1e-12);
    }

    #[test]
    fn degenerate_thresholds_and_sources() {
        let a = analysis();
        let opts = AverageOptions::new(64, 5, MeanMode::Deterministic);
        let r = a.average_error_prob_sweep(&fixed(200.0), &[0], opts).unwrap();
        assert_relative_eq!(r[0].overall, 0.5, max_relative = 1e-15);

        let mut cfg = SystemConfig::<f64>::reference_operating_point();
        cfg.source = crate::protocols::SourceModel::new(0.0, 2500, 50).unwrap();
        let a0 = Analysis::new(cfg).unwrap();
        let r0 = a0.average_error_prob(&fixed(200.0), opts).unwrap();
        assert_eq!(r0.overall, 0.0);
        assert_eq!(r0.relay_budget, 0.0);
    }

    #[test]
    fn baseline_requires_budget() {
        let a = analysis();
        let opts = AverageOptions::new(8, 1, MeanMode::Deterministic);
        assert!(matches!(a.baseline_error_prob(None, &[20], opts), Err(Error::Config(_))));
    }

    #[test]
    fn report_mixture_identity_is_exact() {
        let a = analysis();
        let opts = AverageOptions::new(300, 9, MeanMode::Sampled);
        let r = a.average_error_prob(&fixed(180.0), opts).unwrap();
        for e in &r.per_interval {
            assert_eq!(e.pe, 0.5 * e.pe_given_1 + 0.5 * e.pe_given_0);
            assert!((0.0..=1.0).contains(&e.pe));
        }
    }
}
