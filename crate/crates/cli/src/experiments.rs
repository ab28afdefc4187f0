//! Figure sweeps and ad-hoc reports.
//!
//! Analytic curves come from [`Analysis`]; simulated points record every
//! destination sample sum once and re-decide them for each threshold, so a
//! threshold sweep costs a single batch of trials.

use std::io;
use std::path::{Path, PathBuf};

use log::info;
use mc_relay::analysis::{baseline_emission, Analysis, AverageOptions, MeanMode};
use mc_relay::config::SystemConfig;
use mc_relay::protocols::{
    default_relay_threshold, detect, fixed_gain, type2_gain_schedule, AmplificationSchedule, GainModel, ProtocolKind,
    RelayContext,
};
use mc_relay::simulator::{
    ber_sweep, measure_relay_budget, BerEstimate, Simulator, TransmissionPlan, TrialResult,
};
use rayon::prelude::*;

use crate::config::{ExperimentConfig, ProtocolName};
use crate::csv::{Cell, Table};
use crate::{CliError, Result};

/// Clamp for degenerate gains in the protocol comparison: the top of the
/// amplification range swept elsewhere. The library default lets a single
/// first-interval burst dominate the ISI of every later bit.
pub const FIG6_K_MAX: u64 = 1000;

/// Prefix whose tenth bit is examined in the gain sweep.
pub const FIG2_PREFIX: [u8; 9] = [1, 0, 1, 1, 0, 1, 0, 0, 1];

/// `(M, T [µs], ξ_D)` of the four fixed-gain curves.
pub const GAIN_SETS: [(usize, f64, u64); 4] = [(10, 400.0, 10), (10, 400.0, 20), (20, 400.0, 20), (10, 600.0, 20)];

/// `(M, T [µs], k)` of the threshold sweeps.
pub const THRESHOLD_SETS: [(usize, f64, f64); 2] = [(10, 400.0, 200.0), (10, 600.0, 250.0)];

/// Destination thresholds searched when a protocol is evaluated at its best threshold.
pub const THRESHOLD_SEARCH: std::ops::RangeInclusive<u64> = 1..=100;

/// Trial counts and Monte Carlo sizes shared by every experiment of a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunSettings {
    pub seed: u64,
    pub trials: u64,
    pub gain_samples: usize,
    pub sequence_samples: usize,
}

impl RunSettings {
    pub const PAPER_TRIALS: u64 = 30_000;
    pub const PAPER_GAIN_SAMPLES: usize = 100_000;
    pub const PAPER_SEQUENCE_SAMPLES: usize = 10_000;

    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        Self {
            seed: cfg.seed,
            trials: cfg.trials,
            gain_samples: cfg.gain_samples,
            sequence_samples: cfg.sequence_samples,
        }
    }

    pub fn paper_scale(self) -> Self {
        Self {
            trials: Self::PAPER_TRIALS,
            gain_samples: Self::PAPER_GAIN_SAMPLES,
            sequence_samples: Self::PAPER_SEQUENCE_SAMPLES,
            ..self
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FigureId {
    Fig2,
    Fig3,
    Fig4,
    Fig5,
    Fig6,
}

impl FigureId {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "fig2" => FigureId::Fig2,
            "fig3" => FigureId::Fig3,
            "fig4" => FigureId::Fig4,
            "fig5" => FigureId::Fig5,
            "fig6" => FigureId::Fig6,
            other => return Err(CliError::UnknownFigure(other.to_string())),
        })
    }

    pub fn label(self) -> &'static str {
        match self {
            FigureId::Fig2 => "fig2",
            FigureId::Fig3 => "fig3",
            FigureId::Fig4 => "fig4",
            FigureId::Fig5 => "fig5",
            FigureId::Fig6 => "fig6",
        }
    }
}

/// What one figure sweeps.
#[derive(Clone, Debug, PartialEq)]
pub struct FigureSpec {
    pub id: FigureId,
    /// Axis name with unit, used as the first CSV column.
    pub axis: String,
    /// Analytic sweep values.
    pub values: Vec<f64>,
    /// Values also simulated; empty for none.
    pub simulated: Vec<f64>,
    pub protocols: Vec<ProtocolName>,
}

fn strictly_increasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[0] < w[1])
}

impl FigureSpec {
    pub fn default_for(id: FigureId) -> Self {
        let range = |a: u64, b: u64, step: usize| (a..=b).step_by(step).map(|x| x as f64).collect::<Vec<_>>();
        match id {
            FigureId::Fig2 => Self {
                id,
                axis: "k [-]".into(),
                values: range(1, 1000, 1),
                simulated: range(100, 400, 50),
                protocols: vec![ProtocolName::FixedAf],
            },
            FigureId::Fig3 => Self {
                id,
                axis: "interval [-]".into(),
                values: range(2, 51, 1),
                simulated: Vec::new(),
                protocols: vec![ProtocolName::Type2Af],
            },
            FigureId::Fig4 => Self {
                id,
                axis: "k [-]".into(),
                values: range(10, 600, 10),
                simulated: vec![50.0, 100.0, 150.0, 200.0, 250.0, 300.0, 400.0, 500.0],
                protocols: vec![ProtocolName::FixedAf],
            },
            FigureId::Fig5 => Self {
                id,
                axis: "xi_d [molecules]".into(),
                values: range(1, 60, 1),
                simulated: range(1, 60, 1),
                protocols: vec![ProtocolName::FixedAf, ProtocolName::Baseline],
            },
            FigureId::Fig6 => Self {
                id,
                axis: "bit_interval [us]".into(),
                values: vec![200.0, 300.0, 400.0, 500.0, 600.0],
                simulated: vec![200.0, 300.0, 400.0, 500.0, 600.0],
                protocols: ProtocolName::ALL.to_vec(),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(CliError::Spec(format!("{}: the sweep is empty", self.id.label())));
        }
        if !strictly_increasing(&self.values) || !strictly_increasing(&self.simulated) {
            return Err(CliError::Spec(format!("{}: sweep values must be strictly increasing", self.id.label())));
        }
        if self.values.iter().chain(&self.simulated).any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(CliError::Spec(format!("{}: sweep values must be positive", self.id.label())));
        }
        if self.protocols.is_empty() {
            return Err(CliError::Spec(format!("{}: no protocol selected", self.id.label())));
        }
        Ok(())
    }
}

/// The CSV tables of one run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub tables: Vec<Table>,
}

impl Dataset {
    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn write_to(&self, dir: &Path) -> io::Result<Vec<PathBuf>> {
        self.tables.iter().map(|t| t.write_to(dir)).collect()
    }
}

// ---------------------------------------------------------------------------
// Shared building blocks

fn with_operating_point(base: &SystemConfig<f64>, m: usize, t_us: f64, xi_d: u64) -> Result<SystemConfig<f64>> {
    let mut cfg = base.clone();
    let spacing = base.sampling.sample_spacing();
    cfg.sampling = mc_relay::channel::SamplingScheme::new(t_us * 1e-6, m, spacing)?;
    cfg.detection.xi_d = xi_d;
    cfg.validate()?;
    Ok(cfg)
}

fn average_options(settings: &RunSettings, cfg: &ExperimentConfig) -> AverageOptions {
    AverageOptions {
        n_sequences: settings.sequence_samples,
        seed: settings.seed,
        mode: cfg.mean_mode,
        draws: cfg.realization_draws,
    }
}

fn fixed_relay(k: f64, k_max: u64, xi_r: u64) -> Result<RelayContext<f64>> {
    Ok(RelayContext::new(
        ProtocolKind::FixedGainAf,
        AmplificationSchedule::fixed(k, k_max)?,
        xi_r,
        None,
    )?)
}

/// A relay protocol ready to run, with the parameters worth reporting.
#[derive(Clone, Debug)]
pub struct PreparedRelay {
    pub name: ProtocolName,
    pub context: RelayContext<f64>,
    /// Fixed gain, when the protocol uses one.
    pub gain: Option<f64>,
    /// Destination threshold the relay was designed for.
    pub design_xi_d: u64,
}

/// Builds the relay of `name` from closed-form gains.
///
/// `gain` overrides the averaged fixed gain and `xi_r` the relay threshold
/// heuristic. Decode-and-forward keeps the configured destination threshold.
pub fn prepare_relay(
    sys: &SystemConfig<f64>,
    name: ProtocolName,
    settings: &RunSettings,
    gain: Option<f64>,
    xi_r: Option<u64>,
) -> Result<PreparedRelay> {
    let tables = sys.tables()?;
    let k_max = sys.k_max;
    let needs_model = !matches!(name, ProtocolName::DecodeForward) && !(name == ProtocolName::FixedAf && gain.is_some());
    let model = if needs_model {
        Some(GainModel::from_tables(&tables, sys)?)
    } else {
        None
    };
    let design = |m: &GainModel<f64>| -> Result<f64> {
        Ok(match gain {
            Some(k) => k,
            None => fixed_gain(m, &sys.source, settings.gain_samples, settings.seed)?,
        })
    };
    let (kind, schedule, k_ref) = match name {
        ProtocolName::Baseline => return Err(mc_relay::Error::InvalidProtocol("the baseline has no relay".into()).into()),
        ProtocolName::FixedAf => {
            let k = match (gain, &model) {
                (Some(k), _) => k,
                (None, Some(m)) => design(m)?,
                (None, None) => unreachable!("a gain model exists whenever no gain is given"),
            };
            (ProtocolKind::FixedGainAf, AmplificationSchedule::fixed(k, k_max)?, Some(k))
        }
        ProtocolName::Type1Af => {
            let m = model.as_ref().expect("Type-1 always builds a gain model");
            (ProtocolKind::VariableGainAfType1, AmplificationSchedule::online(k_max), Some(design(m)?))
        }
        ProtocolName::Type2Af => {
            let m = model.as_ref().expect("Type-2 always builds a gain model");
            let s = type2_gain_schedule(m, &sys.source, settings.gain_samples, settings.seed)?;
            let k_ref = s.fixed_gain();
            (ProtocolKind::VariableGainAfType2, s.amplification(k_max)?, k_ref)
        }
        ProtocolName::DecodeForward => (
            ProtocolKind::DecodeForward {
                df_emission: sys.df_emission(),
            },
            AmplificationSchedule::online(k_max),
            None,
        ),
    };
    let xi_r = xi_r
        .or(sys.detection.xi_r)
        .unwrap_or_else(|| default_relay_threshold(sys, &tables, kind, k_ref.unwrap_or(0.0)));
    let type1_model = (kind == ProtocolKind::VariableGainAfType1).then(|| model.clone()).flatten();
    Ok(PreparedRelay {
        name,
        context: RelayContext::new(kind, schedule, xi_r, type1_model)?,
        gain: if name == ProtocolName::FixedAf { k_ref } else { None },
        design_xi_d: sys.detection.xi_d,
    })
}

fn simulate(sys: &SystemConfig<f64>, cfg: &ExperimentConfig, plan: &TransmissionPlan<f64>, settings: &RunSettings) -> Result<Vec<TrialResult>> {
    let sim = Simulator::new(sys.clone(), cfg.simulation_options())?;
    Ok(sim.run_trials(plan, settings.trials, settings.seed)?)
}

/// Lowest simulated error rate; ties go to the smaller threshold.
pub fn best_estimate(estimates: &[BerEstimate]) -> BerEstimate {
    *estimates
        .iter()
        .min_by(|a, b| a.ber.total_cmp(&b.ber))
        .expect("at least one threshold")
}

/// Lowest analytic error probability as `(threshold, P̄e)`; ties go to the smaller threshold.
fn best_analytic(reports: &[mc_relay::analysis::ErrorProbabilityReport<f64>]) -> (u64, f64) {
    reports
        .iter()
        .map(|r| (r.threshold, r.overall))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("at least one threshold")
}

fn argmin<T: Copy>(points: impl IntoIterator<Item = (T, f64)>) -> Option<(T, f64)> {
    points.into_iter().fold(None, |acc, (x, y)| match acc {
        Some((_, best)) if best <= y => acc,
        _ => Some((x, y)),
    })
}

fn thresholds() -> Vec<u64> {
    THRESHOLD_SEARCH.collect()
}

fn as_u64(v: f64, what: &str) -> Result<u64> {
    if v.fract() != 0.0 || v < 0.0 {
        return Err(CliError::Spec(format!("{what} must be a nonnegative integer, got {v}")));
    }
    Ok(v as u64)
}

// ---------------------------------------------------------------------------
// Figures

/// Runs one figure sweep on the environment of `cfg`.
pub fn run_figure(spec: &FigureSpec, cfg: &ExperimentConfig, settings: &RunSettings) -> Result<Dataset> {
    spec.validate()?;
    info!("{}: {} analytic and {} simulated points", spec.id.label(), spec.values.len(), spec.simulated.len());
    match spec.id {
        FigureId::Fig2 => fig2(spec, cfg, settings),
        FigureId::Fig3 => fig3(spec, cfg, settings),
        FigureId::Fig4 => fig4(spec, cfg, settings),
        FigureId::Fig5 => fig5(spec, cfg, settings),
        FigureId::Fig6 => fig6(spec, cfg, settings),
    }
}

fn fig2(spec: &FigureSpec, cfg: &ExperimentConfig, settings: &RunSettings) -> Result<Dataset> {
    let l = FIG2_PREFIX.len() + 1;
    let sys = cfg.system_default()?.with_seq_len(l);
    let xi = sys.detection.xi_d;
    let analysis = Analysis::new(sys.clone())?;
    let ks: Vec<f64> = spec.values.clone();
    let rows: Vec<Result<(f64, [f64; 4])>> = ks
        .par_iter()
        .map(|&k| {
            let relay = fixed_relay(k, sys.k_max, xi)?;
            let det = analysis.expected_error_prob(&FIG2_PREFIX, &relay, MeanMode::Deterministic, 1, settings.seed)?;
            let smp = analysis.expected_error_prob(
                &FIG2_PREFIX,
                &relay,
                MeanMode::Sampled,
                settings.sequence_samples,
                settings.seed,
            )?;
            Ok((k, [det.pe, det.pe_given_1, det.pe_given_0, smp.pe]))
        })
        .collect();
    let mut analytic = Table::new(
        "fig2_analytic",
        &["k [-]", "pe_deterministic [-]", "pe_miss_deterministic [-]", "pe_false_alarm_deterministic [-]", "pe_sampled [-]"],
    );
    let mut det_curve = Vec::new();
    let mut smp_curve = Vec::new();
    for r in rows {
        let (k, v) = r?;
        det_curve.push((k, v[0]));
        smp_curve.push((k, v[3]));
        analytic.push(vec![k.into(), v[0].into(), v[1].into(), v[2].into(), v[3].into()]);
    }

    // Trials alternate the tenth bit so both hypotheses get equal weight.
    let mut simulated = Table::new(
        "fig2_simulated",
        &["k [-]", "trials [-]", "errors [-]", "ber [-]", "ci95_low [-]", "ci95_high [-]"],
    );
    let sim = Simulator::new(sys.clone(), cfg.simulation_options())?;
    let mut sim_curve = Vec::new();
    for &k in &spec.simulated {
        let plan = TransmissionPlan::Relay(fixed_relay(k, sys.k_max, xi)?);
        let results = sim.run_trials_with(&plan, settings.trials, settings.seed, |t| {
            let mut bits = FIG2_PREFIX.to_vec();
            bits.push((t % 2) as u8);
            bits
        })?;
        let errors = results
            .iter()
            .filter(|r| detect(r.destination_sums[l - 1 + r.decision_delay], xi) != r.source_bits[l - 1])
            .count() as u64;
        let est = BerEstimate::new(errors, settings.trials, settings.seed, settings.trials, xi);
        info!("fig2: k = {k}: {errors} errors in {} trials", settings.trials);
        sim_curve.push((k, est.ber));
        simulated.push(vec![k.into(), settings.trials.into(), errors.into(), est.ber.into(), est.lower().into(), est.upper().into()]);
    }

    let model = GainModel::from_config(&sys)?;
    let closed = model.optimal_gain(&FIG2_PREFIX);
    let gap = |m: Option<(f64, f64)>| m.map(|(k, _)| (closed.gain - k).abs() / k);
    let (det_min, smp_min, sim_min) = (argmin(det_curve), argmin(smp_curve), argmin(sim_curve));
    let mut summary = Table::new(
        "fig2_summary",
        &[
            "k_opt_closed_form [-]",
            "k_opt_unrounded [-]",
            "argmin_pe_deterministic [-]",
            "argmin_pe_sampled [-]",
            "argmin_ber_simulated [-]",
            "relative_gap_deterministic [-]",
            "relative_gap_simulated [-]",
        ],
    );
    summary.push(vec![
        closed.gain.into(),
        closed.raw.into(),
        det_min.map(|m| m.0).into(),
        smp_min.map(|m| m.0).into(),
        sim_min.map(|m| m.0).into(),
        gap(det_min).into(),
        gap(sim_min).into(),
    ]);
    Ok(Dataset {
        tables: vec![analytic, simulated, summary],
    })
}

fn fig3(spec: &FigureSpec, cfg: &ExperimentConfig, settings: &RunSettings) -> Result<Dataset> {
    let base = cfg.system_default()?;
    let mut schedule = Table::new(
        "fig3_schedule",
        &[
            "set [-]",
            "samples_per_bit [-]",
            "bit_interval [us]",
            "xi_d [molecules]",
            "interval [-]",
            "k_bar [-]",
            "k_bar_unrounded [-]",
            "degenerate_fraction [-]",
            "all_degenerate [-]",
            "exhaustive [-]",
        ],
    );
    let mut fixed = Table::new(
        "fig3_fixed_gain",
        &["set [-]", "samples_per_bit [-]", "bit_interval [us]", "xi_d [molecules]", "k_bar_fixed [-]"],
    );
    for (set, &(m, t_us, xi)) in GAIN_SETS.iter().enumerate() {
        let sys = with_operating_point(&base, m, t_us, xi)?;
        let model = GainModel::from_config(&sys)?;
        let s = type2_gain_schedule(&model, &sys.source, settings.gain_samples, settings.seed)?;
        for e in s.entries.iter().filter(|e| spec.values.contains(&(e.interval as f64))) {
            schedule.push(vec![
                (set + 1).into(),
                m.into(),
                t_us.into(),
                xi.into(),
                e.interval.into(),
                e.gain.into(),
                e.mean.into(),
                e.degenerate_fraction.into(),
                e.all_degenerate.into(),
                e.exhaustive.into(),
            ]);
        }
        fixed.push(vec![(set + 1).into(), m.into(), t_us.into(), xi.into(), s.fixed_gain().into()]);
    }
    Ok(Dataset {
        tables: vec![schedule, fixed],
    })
}

fn fig4(spec: &FigureSpec, cfg: &ExperimentConfig, settings: &RunSettings) -> Result<Dataset> {
    let base = cfg.system_default()?;
    let opts = average_options(settings, cfg);
    let mut analytic = Table::new(
        "fig4_analytic",
        &["set [-]", "samples_per_bit [-]", "bit_interval [us]", "xi_d [molecules]", "k [-]", "pe [-]", "relay_budget [molecules]"],
    );
    let mut simulated = Table::new(
        "fig4_simulated",
        &["set [-]", "samples_per_bit [-]", "bit_interval [us]", "xi_d [molecules]", "k [-]", "ber [-]", "ci95_low [-]", "ci95_high [-]"],
    );
    let mut summary = Table::new(
        "fig4_summary",
        &["set [-]", "samples_per_bit [-]", "bit_interval [us]", "xi_d [molecules]", "k_bar_opt [-]", "argmin_pe [-]", "argmin_ber [-]"],
    );
    for (set, &(m, t_us, xi)) in GAIN_SETS.iter().enumerate() {
        let sys = with_operating_point(&base, m, t_us, xi)?;
        let analysis = Analysis::new(sys.clone())?;
        let head = |row: &mut Vec<Cell>| row.extend([(set + 1).into(), m.into(), t_us.into(), xi.into()]);
        let mut curve = Vec::new();
        for &k in &spec.values {
            let r = analysis.average_error_prob(&fixed_relay(k, sys.k_max, xi)?, opts)?;
            curve.push((k, r.overall));
            let mut row = Vec::new();
            head(&mut row);
            row.extend([k.into(), r.overall.into(), r.relay_budget.into()]);
            analytic.push(row);
        }
        let mut sim_curve = Vec::new();
        for &k in &spec.simulated {
            let plan = TransmissionPlan::Relay(fixed_relay(k, sys.k_max, xi)?);
            let results = simulate(&sys, cfg, &plan, settings)?;
            let est = ber_sweep(&results, &[xi], settings.seed)[0];
            sim_curve.push((k, est.ber));
            let mut row = Vec::new();
            head(&mut row);
            row.extend([k.into(), est.ber.into(), est.lower().into(), est.upper().into()]);
            simulated.push(row);
        }
        let k_bar = fixed_gain(&GainModel::from_config(&sys)?, &sys.source, settings.gain_samples, settings.seed)?;
        let mut row = Vec::new();
        head(&mut row);
        row.extend([
            k_bar.into(),
            argmin(curve).map(|c| c.0).into(),
            argmin(sim_curve).map(|c| c.0).into(),
        ]);
        summary.push(row);
    }
    Ok(Dataset {
        tables: vec![analytic, simulated, summary],
    })
}

/// Simulated fixed-gain AF and its budget-matched baseline at one operating point.
#[derive(Clone, Debug)]
pub struct ThresholdComparison {
    pub relay: Vec<BerEstimate>,
    pub baseline: Vec<BerEstimate>,
    pub relay_budget: f64,
    pub baseline_emission: u64,
}

impl ThresholdComparison {
    pub fn best_relay(&self) -> BerEstimate {
        best_estimate(&self.relay)
    }
    pub fn best_baseline(&self) -> BerEstimate {
        best_estimate(&self.baseline)
    }
}

/// Runs `relay` and then the baseline boosted by its measured budget, both
/// decided at every threshold in `xis`.
pub fn simulate_against_baseline(
    sys: &SystemConfig<f64>,
    cfg: &ExperimentConfig,
    relay: RelayContext<f64>,
    xis: &[u64],
    settings: &RunSettings,
) -> Result<ThresholdComparison> {
    let plan = TransmissionPlan::Relay(relay);
    let results = simulate(sys, cfg, &plan, settings)?;
    let budget: f64 = measure_relay_budget(&plan, &results)?;
    let relay_est = ber_sweep(&results, xis, settings.seed);
    drop(results);
    let emission = baseline_emission(sys.source.n_a1(), budget) as u64;
    let base_results = simulate(sys, cfg, &TransmissionPlan::Baseline { emission }, settings)?;
    Ok(ThresholdComparison {
        relay: relay_est,
        baseline: ber_sweep(&base_results, xis, settings.seed),
        relay_budget: budget,
        baseline_emission: emission,
    })
}

fn fig5(spec: &FigureSpec, cfg: &ExperimentConfig, settings: &RunSettings) -> Result<Dataset> {
    let base = cfg.system_default()?;
    let opts = average_options(settings, cfg);
    let xis: Vec<u64> = spec.values.iter().map(|&v| as_u64(v, "threshold")).collect::<Result<_>>()?;
    let sim_xis: Vec<u64> = spec.simulated.iter().map(|&v| as_u64(v, "threshold")).collect::<Result<_>>()?;
    let with_baseline = spec.protocols.contains(&ProtocolName::Baseline);
    let mut analytic = Table::new(
        "fig5_analytic",
        &["set [-]", "bit_interval [us]", "k [-]", "xi_d [molecules]", "pe_fixed_af [-]", "pe_baseline [-]"],
    );
    let mut simulated = Table::new(
        "fig5_simulated",
        &[
            "set [-]",
            "bit_interval [us]",
            "k [-]",
            "xi_d [molecules]",
            "ber_fixed_af [-]",
            "ci95_low_fixed_af [-]",
            "ci95_high_fixed_af [-]",
            "ber_baseline [-]",
            "ci95_low_baseline [-]",
            "ci95_high_baseline [-]",
        ],
    );
    let mut summary = Table::new(
        "fig5_summary",
        &[
            "set [-]",
            "bit_interval [us]",
            "k [-]",
            "relay_budget_analytic [molecules]",
            "relay_budget_simulated [molecules]",
            "baseline_emission [molecules]",
            "best_xi_fixed_af [molecules]",
            "ber_fixed_af [-]",
            "ci95_high_fixed_af [-]",
            "best_xi_baseline [molecules]",
            "ber_baseline [-]",
            "ci95_low_baseline [-]",
        ],
    );
    for (set, &(m, t_us, k)) in THRESHOLD_SETS.iter().enumerate() {
        let sys = with_operating_point(&base, m, t_us, base.detection.xi_d)?;
        let analysis = Analysis::new(sys.clone())?;
        let relay = fixed_relay(k, sys.k_max, sys.detection.xi_d)?;
        let af = analysis.average_error_prob_sweep(&relay, &xis, opts)?;
        let budget = af[0].relay_budget;
        let bl = if with_baseline {
            Some(analysis.baseline_error_prob(Some(budget), &xis, opts)?)
        } else {
            None
        };
        for (i, &xi) in xis.iter().enumerate() {
            analytic.push(vec![
                (set + 1).into(),
                t_us.into(),
                k.into(),
                xi.into(),
                af[i].overall.into(),
                bl.as_ref().map(|b| b[i].overall).into(),
            ]);
        }
        if sim_xis.is_empty() {
            continue;
        }
        let cmp = simulate_against_baseline(&sys, cfg, relay, &sim_xis, settings)?;
        for (i, &xi) in sim_xis.iter().enumerate() {
            let (a, b) = (cmp.relay[i], cmp.baseline[i]);
            simulated.push(vec![
                (set + 1).into(),
                t_us.into(),
                k.into(),
                xi.into(),
                a.ber.into(),
                a.lower().into(),
                a.upper().into(),
                b.ber.into(),
                b.lower().into(),
                b.upper().into(),
            ]);
        }
        let (ba, bb) = (cmp.best_relay(), cmp.best_baseline());
        summary.push(vec![
            (set + 1).into(),
            t_us.into(),
            k.into(),
            budget.into(),
            cmp.relay_budget.into(),
            cmp.baseline_emission.into(),
            ba.threshold.into(),
            ba.ber.into(),
            ba.upper().into(),
            bb.threshold.into(),
            bb.ber.into(),
            bb.lower().into(),
        ]);
    }
    Ok(Dataset {
        tables: vec![analytic, simulated, summary],
    })
}

/// Destination threshold minimising the analytic DF error probability when
/// the relay threshold follows the heuristic for each candidate.
pub fn df_operating_threshold(
    sys: &SystemConfig<f64>,
    settings: &RunSettings,
    cfg: &ExperimentConfig,
) -> Result<u64> {
    let opts = average_options(settings, cfg);
    let candidates: Vec<u64> = thresholds();
    let scores: Vec<Result<(u64, f64)>> = candidates
        .par_iter()
        .map(|&xi| {
            let mut c = sys.clone();
            c.detection.xi_d = xi;
            let relay = prepare_relay(&c, ProtocolName::DecodeForward, settings, None, cfg.threshold_r)?;
            let r = Analysis::new(c)?.average_error_prob(&relay.context, opts)?;
            Ok((xi, r.overall))
        })
        .collect();
    let scores: Vec<(u64, f64)> = scores.into_iter().collect::<Result<_>>()?;
    Ok(argmin(scores).expect("nonempty threshold range").0)
}

fn fig6(spec: &FigureSpec, cfg: &ExperimentConfig, settings: &RunSettings) -> Result<Dataset> {
    let base = cfg.system(cfg.k_max.unwrap_or(FIG6_K_MAX))?;
    let opts = average_options(settings, cfg);
    let xis = thresholds();
    let mut table = Table::new(
        "fig6",
        &[
            "bit_interval [us]",
            "protocol [-]",
            "matched_to [-]",
            "fixed_gain [-]",
            "xi_r [molecules]",
            "relay_budget_analytic [molecules]",
            "relay_budget_simulated [molecules]",
            "source_emission [molecules]",
            "best_xi_analytic [molecules]",
            "pe_analytic [-]",
            "best_xi_simulated [molecules]",
            "ber [-]",
            "ci95_low [-]",
            "ci95_high [-]",
        ],
    );
    let include_baseline = spec.protocols.contains(&ProtocolName::Baseline);
    for &t_us in &spec.values {
        let sys = with_operating_point(&base, base.sampling.samples_per_bit(), t_us, base.detection.xi_d)?;
        let do_sim = spec.simulated.contains(&t_us);
        for &name in spec.protocols.iter().filter(|&&p| p != ProtocolName::Baseline) {
            let design = if name == ProtocolName::DecodeForward {
                let mut c = sys.clone();
                c.detection.xi_d = df_operating_threshold(&sys, settings, cfg)?;
                c
            } else {
                sys.clone()
            };
            let relay = prepare_relay(&design, name, settings, cfg.gain, cfg.threshold_r)?;
            info!("fig6: T = {t_us} us, {}: xi_r = {}", name.label(), relay.context.xi_r);
            let analysis = Analysis::new(design.clone())?;
            let reports = analysis.average_error_prob_sweep(&relay.context, &xis, opts)?;
            let budget = reports[0].relay_budget;
            let (axi, ape) = best_analytic(&reports);
            let cmp = if do_sim {
                Some(simulate_against_baseline(&design, cfg, relay.context.clone(), &xis, settings)?)
            } else {
                None
            };
            let best = cmp.as_ref().map(|c| c.best_relay());
            table.push(vec![
                t_us.into(),
                name.label().into(),
                Cell::Empty,
                relay.gain.into(),
                relay.context.xi_r.into(),
                budget.into(),
                cmp.as_ref().map(|c| c.relay_budget).into(),
                sys.source.n_a1().into(),
                axi.into(),
                ape.into(),
                best.map(|b| b.threshold).into(),
                best.map(|b| b.ber).into(),
                best.map(|b| b.lower()).into(),
                best.map(|b| b.upper()).into(),
            ]);
            if include_baseline {
                let bl = analysis.baseline_error_prob(Some(budget), &xis, opts)?;
                let (bxi, bpe) = best_analytic(&bl);
                let bbest = cmp.as_ref().map(|c| c.best_baseline());
                table.push(vec![
                    t_us.into(),
                    ProtocolName::Baseline.label().into(),
                    name.label().into(),
                    Cell::Empty,
                    Cell::Empty,
                    Cell::Empty,
                    Cell::Empty,
                    cmp.as_ref()
                        .map(|c| c.baseline_emission)
                        .unwrap_or(baseline_emission(sys.source.n_a1(), budget) as u64)
                        .into(),
                    bxi.into(),
                    bpe.into(),
                    bbest.map(|b| b.threshold).into(),
                    bbest.map(|b| b.ber).into(),
                    bbest.map(|b| b.lower()).into(),
                    bbest.map(|b| b.upper()).into(),
                ]);
            }
        }
    }
    Ok(Dataset { tables: vec![table] })
}

// ---------------------------------------------------------------------------
// Ad-hoc reports

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BerMode {
    Analytic,
    Simulate,
    Both,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KoptMode {
    PerInterval,
    Fixed,
}

/// Result of [`run_ber`]: the CSV plus the human-readable summary lines.
#[derive(Clone, Debug)]
pub struct BerReport {
    pub dataset: Dataset,
    pub lines: Vec<String>,
    /// Per-interval records of every trial, when requested.
    pub trace: Option<Table>,
}

pub fn trace_table(results: &[TrialResult]) -> Table {
    let mut t = Table::new(
        "trace",
        &[
            "trial [-]",
            "interval [-]",
            "source_bit [-]",
            "relay_sum [molecules]",
            "relay_estimate [-]",
            "relay_emission [molecules]",
            "destination_sum [molecules]",
            "decided_bit [-]",
            "decision [-]",
        ],
    );
    for (i, r) in results.iter().enumerate() {
        for rec in r.trace(i as u64) {
            t.push(vec![
                rec.trial.into(),
                rec.interval.into(),
                rec.source_bit.map(u64::from).into(),
                rec.relay_sum.into(),
                rec.relay_estimate.map(u64::from).into(),
                rec.relay_emission.into(),
                rec.destination_sum.into(),
                rec.decided_bit.into(),
                rec.decision.map(u64::from).into(),
            ]);
        }
    }
    t
}

/// Error probability of the configured protocol at the configured threshold.
pub fn run_ber(cfg: &ExperimentConfig, mode: BerMode, settings: &RunSettings, with_trace: bool) -> Result<BerReport> {
    let sys = cfg.system_default()?;
    let xi = sys.detection.xi_d;
    let opts = average_options(settings, cfg);
    let mut table = Table::new(
        "ber",
        &[
            "protocol [-]",
            "method [-]",
            "xi_d [molecules]",
            "xi_r [molecules]",
            "fixed_gain [-]",
            "error_rate [-]",
            "ci95_low [-]",
            "ci95_high [-]",
            "relay_budget [molecules]",
            "samples [-]",
            "seed [-]",
        ],
    );
    let mut lines = Vec::new();
    let mut trace = None;
    let (plan, relay) = if cfg.protocol == ProtocolName::Baseline {
        let budget = cfg.baseline_budget.ok_or_else(|| crate::ConfigError::Missing {
            field: "baseline_budget".into(),
        })?;
        let emission = baseline_emission(sys.source.n_a1(), budget) as u64;
        (TransmissionPlan::Baseline { emission }, None)
    } else {
        let r = prepare_relay(&sys, cfg.protocol, settings, cfg.gain, cfg.threshold_r)?;
        (TransmissionPlan::Relay(r.context.clone()), Some(r))
    };
    let xi_r: Cell = relay.as_ref().map(|r| r.context.xi_r).into();
    let gain: Cell = relay.as_ref().and_then(|r| r.gain).into();
    if matches!(mode, BerMode::Analytic | BerMode::Both) {
        let analysis = Analysis::new(sys.clone())?;
        let report = match &relay {
            Some(r) => analysis.average_error_prob(&r.context, opts)?,
            None => analysis
                .baseline_error_prob(cfg.baseline_budget, &[xi], opts)?
                .remove(0),
        };
        lines.push(format!(
            "{} analytic: mean error probability {:.6e} at xi_d = {xi} ({} sequences, seed {})",
            cfg.protocol, report.overall, opts.n_sequences, settings.seed
        ));
        table.push(vec![
            cfg.protocol.label().into(),
            "analytic".into(),
            xi.into(),
            xi_r.clone(),
            gain.clone(),
            report.overall.into(),
            Cell::Empty,
            Cell::Empty,
            report.relay_budget.into(),
            opts.n_sequences.into(),
            settings.seed.into(),
        ]);
    }
    if matches!(mode, BerMode::Simulate | BerMode::Both) {
        let results = simulate(&sys, cfg, &plan, settings)?;
        let est = ber_sweep(&results, &[xi], settings.seed)[0];
        let budget = match &plan {
            TransmissionPlan::Relay(_) => measure_relay_budget(&plan, &results)?,
            TransmissionPlan::Baseline { .. } => 0.0,
        };
        lines.push(format!(
            "{} simulated: BER {:.6e} (95% CI [{:.6e}, {:.6e}], {} errors in {} bits, {} trials, seed {})",
            cfg.protocol,
            est.ber,
            est.lower(),
            est.upper(),
            est.errors,
            est.bits,
            est.trials,
            settings.seed
        ));
        table.push(vec![
            cfg.protocol.label().into(),
            "simulated".into(),
            xi.into(),
            xi_r,
            gain,
            est.ber.into(),
            est.lower().into(),
            est.upper().into(),
            budget.into(),
            settings.trials.into(),
            settings.seed.into(),
        ]);
        if with_trace {
            trace = Some(trace_table(&results));
        }
    }
    Ok(BerReport {
        dataset: Dataset { tables: vec![table] },
        lines,
        trace,
    })
}

/// Averaged closed-form gains of the configured system.
pub fn run_kopt(cfg: &ExperimentConfig, mode: KoptMode, settings: &RunSettings) -> Result<Dataset> {
    let sys = cfg.system_default()?;
    let model = GainModel::from_config(&sys)?;
    let s = type2_gain_schedule(&model, &sys.source, settings.gain_samples, settings.seed)?;
    let table = match mode {
        KoptMode::PerInterval => {
            let mut t = Table::new(
                "kopt_per_interval",
                &[
                    "interval [-]",
                    "k_bar [-]",
                    "k_bar_unrounded [-]",
                    "degenerate_fraction [-]",
                    "degenerate_clamp [-]",
                    "exhaustive [-]",
                ],
            );
            for e in &s.entries {
                t.push(vec![
                    e.interval.into(),
                    e.gain.into(),
                    e.mean.into(),
                    e.degenerate_fraction.into(),
                    e.all_degenerate.into(),
                    e.exhaustive.into(),
                ]);
            }
            t
        }
        KoptMode::Fixed => {
            let mut t = Table::new("kopt_fixed", &["k_bar [-]", "degenerate_clamp [-]", "k_max [-]"]);
            let k = s.fixed_gain();
            t.push(vec![
                k.unwrap_or(sys.k_max as f64).into(),
                k.is_none().into(),
                sys.k_max.into(),
            ]);
            t
        }
    };
    Ok(Dataset { tables: vec![table] })
}
