//! Source, relay and destination behaviour: ON/OFF keying, threshold
//! detection, amplification gains and the per-interval relay rule.

use log::{debug, warn};
use rand::Rng;
use rayon::prelude::*;

use crate::channel::HopProfile;
use crate::config::{ChannelTables, SystemConfig};
use crate::error::{Error, Result};
use crate::num::{CompensatedSum, Real};
use crate::rng::{substream, StreamDomain};

/// Longest history prefix whose expectation is computed by exhaustive enumeration.
pub const EXHAUSTIVE_HISTORY_LIMIT: usize = 16;

/// Statistics of the transmitted bit stream.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SourceModel<T> {
    p1: T,
    n_a1: u64,
    seq_len: usize,
}

impl<T: Real> SourceModel<T> {
    pub fn new(p1: T, n_a1: u64, seq_len: usize) -> Result<Self> {
        if !(p1 >= T::zero() && p1 <= T::one()) {
            return Err(Error::Domain(format!("P1 must lie in [0, 1], got {p1}")));
        }
        if seq_len == 0 {
            return Err(Error::Domain("sequence length must be at least 1".into()));
        }
        Ok(Self { p1, n_a1, seq_len })
    }

    pub fn p1(&self) -> T {
        self.p1
    }
    pub fn p0(&self) -> T {
        T::one() - self.p1
    }
    pub fn n_a1(&self) -> u64 {
        self.n_a1
    }
    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    /// One i.i.d. bit with `P(1) = p1`.
    pub fn draw_bit<R: Rng + ?Sized>(&self, rng: &mut R) -> u8 {
        let u = T::lit(rng.random::<f64>());
        u8::from(u < self.p1)
    }

    pub fn draw_bits<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<u8> {
        (0..n).map(|_| self.draw_bit(rng)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BitRole {
    Source,
    RelayEstimate,
    DestinationDecision,
}

/// A 0/1 sequence tagged with the node that produced it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BitSequence {
    bits: Vec<u8>,
    role: BitRole,
}

impl BitSequence {
    pub fn new(bits: Vec<u8>, role: BitRole) -> Result<Self> {
        if let Some(b) = bits.iter().find(|&&b| b > 1) {
            return Err(Error::Domain(format!("bits must be 0 or 1, found {b}")));
        }
        Ok(Self { bits, role })
    }

    /// Parses a string such as `"101101001"`.
    pub fn parse(s: &str, role: BitRole) -> Result<Self> {
        let bits = s
            .chars()
            .map(|c| match c {
                '0' => Ok(0),
                '1' => Ok(1),
                other => Err(Error::Domain(format!("invalid bit character {other:?}"))),
            })
            .collect::<Result<Vec<u8>>>()?;
        Self::new(bits, role)
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }
    pub fn role(&self) -> BitRole {
        self.role
    }
    pub fn len(&self) -> usize {
        self.bits.len()
    }
    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }
}

impl std::fmt::Display for BitSequence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for b in &self.bits {
            write!(f, "{b}")?;
        }
        Ok(())
    }
}

/// Thresholds of the destination and (for Type-1 and DF relays) the relay.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DetectionConfig {
    pub xi_d: u64,
    /// `None` selects [`default_relay_threshold`].
    pub xi_r: Option<u64>,
}

impl DetectionConfig {
    /// `xi_d = 0` is accepted as the degenerate always-one detector.
    pub fn new(xi_d: u64, xi_r: Option<u64>) -> Self {
        Self { xi_d, xi_r }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProtocolKind {
    /// Direct source-destination link, no relay.
    Baseline,
    FixedGainAf,
    VariableGainAfType1,
    VariableGainAfType2,
    DecodeForward { df_emission: u64 },
}

impl ProtocolKind {
    pub fn has_relay(&self) -> bool {
        !matches!(self, ProtocolKind::Baseline)
    }

    pub fn label(&self) -> &'static str {
        match self {
            ProtocolKind::Baseline => "baseline",
            ProtocolKind::FixedGainAf => "fixed_af",
            ProtocolKind::VariableGainAfType1 => "type1_af",
            ProtocolKind::VariableGainAfType2 => "type2_af",
            ProtocolKind::DecodeForward { .. } => "df",
        }
    }

    /// Whether the relay thresholds its observations.
    pub fn uses_relay_threshold(&self) -> bool {
        matches!(self, ProtocolKind::VariableGainAfType1 | ProtocolKind::DecodeForward { .. })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum GainMode<T> {
    Fixed(T),
    /// Entry `i` is the gain applied in interval `i + 1`; entry 0 (interval 1) is unused.
    PerInterval(Vec<T>),
    /// Computed by the relay from its own estimates.
    Online,
}

/// Gains applied by an amplify-and-forward relay.
#[derive(Clone, Debug, PartialEq)]
pub struct AmplificationSchedule<T> {
    mode: GainMode<T>,
    k_max: u64,
}

impl<T: Real> AmplificationSchedule<T> {
    fn check(k: T, k_max: u64) -> Result<()> {
        if k >= T::zero() && k <= T::from_count(k_max) {
            Ok(())
        } else {
            Err(Error::Config(format!("gain {k} outside [0, {k_max}]")))
        }
    }

    pub fn fixed(k: T, k_max: u64) -> Result<Self> {
        Self::check(k, k_max)?;
        Ok(Self {
            mode: GainMode::Fixed(k),
            k_max,
        })
    }

    pub fn per_interval(gains: Vec<T>, k_max: u64) -> Result<Self> {
        for &k in &gains {
            Self::check(k, k_max)?;
        }
        Ok(Self {
            mode: GainMode::PerInterval(gains),
            k_max,
        })
    }

    pub fn online(k_max: u64) -> Self {
        Self {
            mode: GainMode::Online,
            k_max,
        }
    }

    pub fn mode(&self) -> &GainMode<T> {
        &self.mode
    }
    pub fn k_max(&self) -> u64 {
        self.k_max
    }

    /// Precomputed gain for interval `j`; `None` for online schedules.
    pub fn gain_at(&self, j: usize) -> Option<T> {
        match &self.mode {
            GainMode::Fixed(k) => Some(*k),
            GainMode::PerInterval(g) => g.get(j - 1).copied(),
            GainMode::Online => None,
        }
    }
}

/// Threshold decision: 1 iff `sample_sum >= threshold`.
#[inline]
pub fn detect(sample_sum: u64, threshold: u64) -> u8 {
    u8::from(sample_sum >= threshold)
}

/// `round(k · observed)`, half away from zero.
pub fn relay_emission_count<T: Real>(k: T, observed: u64) -> u64 {
    (k * T::from_count(observed))
        .round_half_away()
        .to_u64()
        .expect("emission count is finite and nonnegative")
}

/// ISI weight `B_b` of the destination under hypothesis `b` for the current bit.
///
/// `history` holds the `j − 1` earlier source bits; only the relay's most
/// recent emission is assumed to reach the destination.
pub fn isi_factor_b<T: Real>(history: &[u8], b: u8, first_hop: &HopProfile<T>, second_hop: &HopProfile<T>) -> T {
    let h = history.len();
    let mut acc = CompensatedSum::new();
    for (i, &w) in history.iter().enumerate() {
        if w == 1 {
            acc.add(first_hop.window(h - i));
        }
    }
    if b == 1 {
        acc.add(first_hop.window(0));
    }
    acc.value() * second_hop.window(0)
}

/// Outcome of the closed-form gain.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GainEstimate<T> {
    /// Rounded and clamped into `[1, k_max]`.
    pub gain: T,
    /// Unrounded, unclamped value; infinite when the log terms diverge.
    pub raw: T,
    /// `B₀ = 0`: no false-alarm pressure, the formula diverges.
    pub degenerate: bool,
}

/// Everything the closed-form gain depends on.
#[derive(Clone, Debug, PartialEq)]
pub struct GainModel<T> {
    first_hop: HopProfile<T>,
    second_hop: HopProfile<T>,
    p1: T,
    n_a1: T,
    xi_d: u64,
    k_max: u64,
}

impl<T: Real> GainModel<T> {
    pub fn new(
        first_hop: HopProfile<T>,
        second_hop: HopProfile<T>,
        source: &SourceModel<T>,
        xi_d: u64,
        k_max: u64,
    ) -> Result<Self> {
        if xi_d < 2 {
            return Err(Error::Unsupported(format!(
                "closed-form gain needs a destination threshold of at least 2, got {xi_d}"
            )));
        }
        if source.n_a1() == 0 {
            return Err(Error::Unsupported("closed-form gain needs a nonzero source emission".into()));
        }
        Ok(Self {
            first_hop,
            second_hop,
            p1: source.p1(),
            n_a1: T::from_count(source.n_a1()),
            xi_d,
            k_max,
        })
    }

    pub fn from_config(config: &SystemConfig<T>) -> Result<Self> {
        let tables = config.tables()?;
        Self::from_tables(&tables, config)
    }

    pub fn from_tables(tables: &ChannelTables<T>, config: &SystemConfig<T>) -> Result<Self> {
        Self::new(
            tables.source_relay.clone(),
            tables.relay_destination.clone(),
            &config.source,
            config.detection.xi_d,
            config.k_max,
        )
    }

    pub fn k_max(&self) -> u64 {
        self.k_max
    }
    pub fn xi_d(&self) -> u64 {
        self.xi_d
    }

    /// `B₁ − B₀`, the same for every history.
    pub fn current_bit_weight(&self) -> T {
        self.first_hop.window(0) * self.second_hop.window(0)
    }

    pub fn b0(&self, history: &[u8]) -> T {
        isi_factor_b(history, 0, &self.first_hop, &self.second_hop)
    }

    pub fn gain_for_b0(&self, b0: T) -> GainEstimate<T> {
        let k_max = T::from_count(self.k_max);
        if !(b0 > T::zero()) {
            return GainEstimate {
                gain: k_max,
                raw: T::infinity(),
                degenerate: true,
            };
        }
        let delta = self.current_bit_weight();
        let b1 = b0 + delta;
        let xi = T::from_count(self.xi_d);
        // (ξ−1)·ln(B₁/B₀) + ln(P₁B₁ / (P₀B₀)) = ξ·ln(B₁/B₀) + ln(P₁/P₀)
        let numerator = xi * (b1 / b0).ln() + (self.p1.ln() - (T::one() - self.p1).ln());
        let raw = numerator / (self.n_a1 * delta);
        let gain = if raw.is_nan() {
            k_max
        } else {
            raw.round_half_away().max(T::one()).min(k_max)
        };
        GainEstimate {
            gain,
            raw,
            degenerate: false,
        }
    }

    /// Closed-form gain for the bit that follows `history`.
    pub fn optimal_gain(&self, history: &[u8]) -> GainEstimate<T> {
        self.gain_for_b0(self.b0(history))
    }
}

/// Free-function form of [`GainModel::optimal_gain`].
pub fn optimal_gain<T: Real>(
    history: &BitSequence,
    source: &SourceModel<T>,
    detection: &DetectionConfig,
    first_hop: &HopProfile<T>,
    second_hop: &HopProfile<T>,
    k_max: u64,
) -> Result<GainEstimate<T>> {
    let model = GainModel::new(first_hop.clone(), second_hop.clone(), source, detection.xi_d, k_max)?;
    Ok(model.optimal_gain(history.bits()))
}

/// One entry of the averaged gain schedule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScheduleEntry<T> {
    /// Interval in which the relay applies this gain (2..=L+1).
    pub interval: usize,
    /// Mean over non-degenerate histories, unrounded.
    pub mean: T,
    /// `mean` rounded to an integer; `k_max` when every history is degenerate.
    pub gain: T,
    /// Probability mass (or sample fraction) of degenerate histories.
    pub degenerate_fraction: T,
    pub all_degenerate: bool,
    pub exhaustive: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GainSchedule<T> {
    pub entries: Vec<ScheduleEntry<T>>,
    pub n_samples: usize,
    pub seed: u64,
}

impl<T: Real> GainSchedule<T> {
    /// Gains indexed like [`GainMode::PerInterval`]: slot 0 (interval 1) is zero.
    pub fn per_interval_gains(&self) -> Vec<T> {
        std::iter::once(T::zero())
            .chain(self.entries.iter().map(|e| e.gain))
            .collect()
    }

    pub fn amplification(&self, k_max: u64) -> Result<AmplificationSchedule<T>> {
        AmplificationSchedule::per_interval(self.per_interval_gains(), k_max)
    }

    /// Mean of the non-degenerate entries, rounded; `None` if there are none.
    pub fn fixed_gain(&self) -> Option<T> {
        let mut acc = CompensatedSum::new();
        let mut n = 0u64;
        for e in self.entries.iter().filter(|e| !e.all_degenerate) {
            acc.add(e.mean);
            n += 1;
        }
        (n > 0).then(|| (acc.value() / T::from_count(n)).round_half_away())
    }
}

/// Expected closed-form gain per interval over i.i.d. source histories.
///
/// Prefixes of up to [`EXHAUSTIVE_HISTORY_LIMIT`] bits are enumerated
/// exactly with their probabilities; longer prefixes are averaged over
/// `n_samples` sequences drawn from per-sample substreams of `seed`.
/// Degenerate histories (`B₀ = 0`) are excluded from every average.
pub fn type2_gain_schedule<T: Real>(
    model: &GainModel<T>,
    source: &SourceModel<T>,
    n_samples: usize,
    seed: u64,
) -> Result<GainSchedule<T>> {
    if n_samples == 0 {
        return Err(Error::Domain("at least one sequence sample is required".into()));
    }
    let l = source.seq_len();
    let mut entries = Vec::with_capacity(l);
    for h in 0..l.min(EXHAUSTIVE_HISTORY_LIMIT + 1) {
        let (mean, degenerate_fraction, all_degenerate) = enumerate_history(model, source, h);
        entries.push(finish_entry(model, h, mean, degenerate_fraction, all_degenerate, true));
    }
    if l > EXHAUSTIVE_HISTORY_LIMIT + 1 {
        let sampled = sample_histories(model, source, EXHAUSTIVE_HISTORY_LIMIT + 1, l, n_samples, seed);
        for (offset, (sum, kept)) in sampled.into_iter().enumerate() {
            let h = EXHAUSTIVE_HISTORY_LIMIT + 1 + offset;
            let all_degenerate = kept == 0;
            let mean = if all_degenerate {
                T::from_count(model.k_max)
            } else {
                T::from_count(sum) / T::from_count(kept)
            };
            let frac = T::from_count(n_samples as u64 - kept) / T::from_count(n_samples as u64);
            entries.push(finish_entry(model, h, mean, frac, all_degenerate, false));
        }
    }
    Ok(GainSchedule {
        entries,
        n_samples,
        seed,
    })
}

fn finish_entry<T: Real>(
    model: &GainModel<T>,
    h: usize,
    mean: T,
    degenerate_fraction: T,
    all_degenerate: bool,
    exhaustive: bool,
) -> ScheduleEntry<T> {
    let interval = h + 2;
    // With no earlier bits every history is degenerate, so only later intervals are worth a warning.
    if all_degenerate && h > 0 {
        warn!("every history of length {h} is degenerate; gain for interval {interval} clamped to {}", model.k_max);
    } else if all_degenerate {
        debug!("first relayed interval has no ISI; gain clamped to {}", model.k_max);
    }
    ScheduleEntry {
        interval,
        mean,
        gain: if all_degenerate {
            T::from_count(model.k_max)
        } else {
            mean.round_half_away()
        },
        degenerate_fraction,
        all_degenerate,
        exhaustive,
    }
}

fn enumerate_history<T: Real>(model: &GainModel<T>, source: &SourceModel<T>, h: usize) -> (T, T, bool) {
    let p1 = source.p1();
    let p0 = source.p0();
    let mut weighted = CompensatedSum::new();
    let mut kept = CompensatedSum::new();
    let mut dropped = CompensatedSum::new();
    let mut history = vec![0u8; h];
    for code in 0u64..(1u64 << h) {
        let mut weight = T::one();
        for (i, slot) in history.iter_mut().enumerate() {
            *slot = ((code >> i) & 1) as u8;
            weight = weight * if *slot == 1 { p1 } else { p0 };
        }
        if weight == T::zero() {
            continue;
        }
        let est = model.optimal_gain(&history);
        if est.degenerate {
            dropped.add(weight);
        } else {
            weighted.add(weight * est.gain);
            kept.add(weight);
        }
    }
    let kept = kept.value();
    if kept > T::zero() {
        (weighted.value() / kept, dropped.value(), false)
    } else {
        (T::from_count(model.k_max), T::one(), true)
    }
}

/// Integer gain sums and non-degenerate counts per history length in `h_lo..l`.
fn sample_histories<T: Real>(
    model: &GainModel<T>,
    source: &SourceModel<T>,
    h_lo: usize,
    l: usize,
    n_samples: usize,
    seed: u64,
) -> Vec<(u64, u64)> {
    const CHUNK: usize = 1024;
    let n_h = l - h_lo;
    let n_chunks = n_samples.div_ceil(CHUNK);
    let partials: Vec<Vec<(u64, u64)>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![(0u64, 0u64); n_h];
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(n_samples);
            for s in lo..hi {
                let mut rng = substream(seed, StreamDomain::GainSample, s as u64);
                let bits = source.draw_bits(l - 1, &mut rng);
                for (slot, h) in acc.iter_mut().zip(h_lo..l) {
                    let est = model.optimal_gain(&bits[..h]);
                    if !est.degenerate {
                        // Rounded gains are integers, so the sums are exact.
                        slot.0 += est.gain.to_u64().expect("gain is a bounded integer");
                        slot.1 += 1;
                    }
                }
            }
            acc
        })
        .collect();
    let mut total = vec![(0u64, 0u64); n_h];
    for part in partials {
        for (t, p) in total.iter_mut().zip(part) {
            t.0 += p.0;
            t.1 += p.1;
        }
    }
    total
}

/// Single gain for a fixed-gain relay: the interval average of the Type-2 schedule.
pub fn fixed_gain<T: Real>(model: &GainModel<T>, source: &SourceModel<T>, n_samples: usize, seed: u64) -> Result<T> {
    let schedule = type2_gain_schedule(model, source, n_samples, seed)?;
    schedule
        .fixed_gain()
        .ok_or_else(|| Error::Unsupported("every schedule entry is degenerate".into()))
}

/// Relay threshold placing the relay at the destination's operating point:
/// `ξ_D` scaled by the ratio of the single-bit first-hop mean to the
/// single-bit second-hop mean, rounded and at least 1.
///
/// For AF relays the second-hop mean uses `reference_gain` times the
/// first-hop mean; for DF it uses the fixed re-emission.
pub fn default_relay_threshold<T: Real>(
    config: &SystemConfig<T>,
    tables: &ChannelTables<T>,
    protocol: ProtocolKind,
    reference_gain: T,
) -> u64 {
    let m1 = T::from_count(config.source.n_a1()) * tables.source_relay.window(0);
    let rd0 = tables.relay_destination.window(0);
    let m2 = match protocol {
        ProtocolKind::DecodeForward { df_emission } => T::from_count(df_emission) * rd0,
        _ => reference_gain * m1 * rd0,
    };
    if !(m2 > T::zero()) {
        return 1;
    }
    let xi = (T::from_count(config.detection.xi_d) * m1 / m2).round_half_away();
    xi.to_u64().unwrap_or(u64::MAX).max(1)
}

/// What a relay needs to turn its previous observation into an emission.
#[derive(Clone, Debug)]
pub struct RelayContext<T> {
    pub protocol: ProtocolKind,
    pub schedule: AmplificationSchedule<T>,
    pub xi_r: u64,
    /// Required by Type-1 relays.
    pub gain_model: Option<GainModel<T>>,
}

impl<T: Real> RelayContext<T> {
    pub fn new(
        protocol: ProtocolKind,
        schedule: AmplificationSchedule<T>,
        xi_r: u64,
        gain_model: Option<GainModel<T>>,
    ) -> Result<Self> {
        let consistent = match (&protocol, schedule.mode()) {
            (ProtocolKind::Baseline, _) => {
                return Err(Error::InvalidProtocol("the baseline has no relay".into()));
            }
            (ProtocolKind::FixedGainAf, GainMode::Fixed(_)) => true,
            (ProtocolKind::VariableGainAfType2, GainMode::PerInterval(_)) => true,
            (ProtocolKind::VariableGainAfType1, GainMode::Online) => gain_model.is_some(),
            (ProtocolKind::DecodeForward { .. }, _) => true,
            _ => false,
        };
        if !consistent {
            return Err(Error::Config(format!(
                "gain schedule {:?} does not fit protocol {}",
                schedule.mode(),
                protocol.label()
            )));
        }
        Ok(Self {
            protocol,
            schedule,
            xi_r,
            gain_model,
        })
    }
}

/// Emission of the relay at the start of interval `j`.
///
/// `observed_prev` is the relay's sample sum from interval `j − 1`, and
/// `estimated_history` its threshold decisions for intervals `1..=j−2`.
pub fn relay_step<T: Real>(
    ctx: &RelayContext<T>,
    observed_prev: u64,
    estimated_history: &[u8],
    j: usize,
) -> Result<u64> {
    if j <= 1 {
        return Ok(0);
    }
    match ctx.protocol {
        ProtocolKind::Baseline => Err(Error::InvalidProtocol("the baseline has no relay".into())),
        ProtocolKind::DecodeForward { df_emission } => Ok(if detect(observed_prev, ctx.xi_r) == 1 {
            df_emission
        } else {
            0
        }),
        ProtocolKind::VariableGainAfType1 => {
            let model = ctx
                .gain_model
                .as_ref()
                .ok_or_else(|| Error::Config("Type-1 relay without a gain model".into()))?;
            let k = model.optimal_gain(estimated_history).gain;
            Ok(relay_emission_count(k, observed_prev))
        }
        ProtocolKind::FixedGainAf | ProtocolKind::VariableGainAfType2 => {
            let k = ctx
                .schedule
                .gain_at(j)
                .ok_or_else(|| Error::Config(format!("no gain scheduled for interval {j}")))?;
            Ok(relay_emission_count(k, observed_prev))
        }
    }
}

/// Stateful relay: keeps its own threshold decisions across intervals.
#[derive(Clone, Debug)]
pub struct RelayNode<'a, T> {
    ctx: &'a RelayContext<T>,
    estimates: Vec<u8>,
}

impl<'a, T: Real> RelayNode<'a, T> {
    pub fn new(ctx: &'a RelayContext<T>) -> Self {
        Self {
            ctx,
            estimates: Vec::new(),
        }
    }

    /// Emission at the start of interval `j >= 2`, given the sum observed in `j − 1`.
    /// Intervals must be visited in order.
    pub fn forward(&mut self, j: usize, observed_prev: u64) -> Result<u64> {
        debug_assert_eq!(self.estimates.len() + 2, j);
        let emission = relay_step(self.ctx, observed_prev, &self.estimates, j)?;
        self.estimates.push(detect(observed_prev, self.ctx.xi_r));
        Ok(emission)
    }

    pub fn estimates(&self) -> &[u8] {
        &self.estimates
    }
}
