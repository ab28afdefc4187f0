use mc_relay::config::SystemConfig;
use mc_relay::protocols::{
    default_relay_threshold, detect, fixed_gain, isi_factor_b, relay_emission_count, type2_gain_schedule,
    AmplificationSchedule, GainModel, ProtocolKind, RelayContext, SourceModel,
};
use mc_relay::Error;
use proptest::prelude::*;

fn model(xi_d: u64, p1: f64) -> GainModel<f64> {
    let mut cfg = SystemConfig::<f64>::reference_operating_point();
    cfg.detection.xi_d = xi_d;
    cfg.source = SourceModel::new(p1, 2500, 50).unwrap();
    GainModel::from_config(&cfg).unwrap()
}

fn history() -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(0u8..=1, 0..50)
}

proptest! {
    #[test]
    fn current_bit_weight_is_history_free(h in history()) {
        let cfg = SystemConfig::<f64>::reference_operating_point();
        let t = cfg.tables().unwrap();
        let b1 = isi_factor_b(&h, 1, &t.source_relay, &t.relay_destination);
        let b0 = isi_factor_b(&h, 0, &t.source_relay, &t.relay_destination);
        let w = model(20, 0.5).current_bit_weight();
        prop_assert!(((b1 - b0) - w).abs() <= 1e-12 * w);
    }

    #[test]
    fn gain_depends_on_history_only_through_b0(h in history()) {
        let m = model(20, 0.5);
        let direct = m.optimal_gain(&h);
        let via_b0 = m.gain_for_b0(m.b0(&h));
        prop_assert_eq!(direct, via_b0);
        prop_assert_eq!(direct.degenerate, !h.contains(&1));
    }

    #[test]
    fn gain_is_nonincreasing_in_b0(a in 1e-12f64..1e-4, b in 1e-12f64..1e-4) {
        let m = model(20, 0.5);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(m.gain_for_b0(lo).raw >= m.gain_for_b0(hi).raw);
        prop_assert!(m.gain_for_b0(lo).gain >= m.gain_for_b0(hi).gain);
    }

    #[test]
    fn raw_gain_doubles_with_threshold(h in history()) {
        prop_assume!(h.contains(&1));
        let g20 = model(20, 0.5).optimal_gain(&h).raw;
        let g10 = model(10, 0.5).optimal_gain(&h).raw;
        prop_assert!((g20 - 2.0 * g10).abs() <= 1e-12 * g20);
    }

    #[test]
    fn clamped_gain_stays_in_range(h in history(), p1 in 0.01f64..0.99, xi in 2u64..80) {
        let e = model(xi, p1).optimal_gain(&h);
        prop_assert!((1.0..=10_000.0).contains(&e.gain));
        prop_assert_eq!(e.gain, e.gain.round());
    }

    #[test]
    fn detection_is_monotone(sum in 0u64..10_000, xi in 0u64..1000) {
        prop_assert!(detect(sum, xi) <= detect(sum + 1, xi));
        prop_assert!(detect(sum, xi + 1) <= detect(sum, xi));
    }

    #[test]
    fn emission_rounds_the_amplified_count(k in 0.0f64..2000.0, n in 0u64..200) {
        let e = relay_emission_count(k, n) as f64;
        prop_assert!((e - k * n as f64).abs() <= 0.5);
    }
}

#[test]
fn skewed_priors_shift_the_gain() {
    let h = [1u8, 0, 1];
    let even = model(20, 0.5).optimal_gain(&h).raw;
    let likely_one = model(20, 0.8).optimal_gain(&h).raw;
    let likely_zero = model(20, 0.2).optimal_gain(&h).raw;
    assert!(likely_one > even && even > likely_zero);
}

#[test]
fn schedule_is_reproducible_and_positive() {
    let cfg = SystemConfig::<f64>::reference_operating_point().with_seq_len(20);
    let m = GainModel::from_config(&cfg).unwrap();
    let a = type2_gain_schedule(&m, &cfg.source, 500, 9).unwrap();
    let b = type2_gain_schedule(&m, &cfg.source, 500, 9).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.entries.len(), 20);
    assert!(a.entries[0].all_degenerate);
    assert_eq!(a.entries[0].gain, 10_000.0);
    for e in &a.entries[1..] {
        assert!(!e.all_degenerate && e.mean > 1.0);
    }
    // Interval 2 + h uses a history of h bits: exhaustive up to 16 bits.
    assert!(a.entries[16].exhaustive && !a.entries[17].exhaustive);
    let k = fixed_gain(&m, &cfg.source, 500, 9).unwrap();
    assert_eq!(Some(k), a.fixed_gain());
}

#[test]
fn exhaustive_and_sampled_averages_agree() {
    // Entry 17 averages 16 history bits exactly; entry 18 samples 17 bits.
    // Their means differ only by the tiny extra ISI of one more bit.
    let cfg = SystemConfig::<f64>::reference_operating_point().with_seq_len(18);
    let m = GainModel::from_config(&cfg).unwrap();
    let s = type2_gain_schedule(&m, &cfg.source, 20_000, 3).unwrap();
    let exact = s.entries[16].mean;
    let sampled = s.entries[17].mean;
    assert!(((exact - sampled) / exact).abs() < 0.01, "{exact} vs {sampled}");
}

#[test]
fn relay_context_rejects_mismatches() {
    let fixed = AmplificationSchedule::<f64>::fixed(200.0, 10_000).unwrap();
    assert!(matches!(
        RelayContext::new(ProtocolKind::Baseline, fixed.clone(), 20, None),
        Err(Error::InvalidProtocol(_))
    ));
    assert!(matches!(
        RelayContext::new(ProtocolKind::VariableGainAfType2, fixed.clone(), 20, None),
        Err(Error::Config(_))
    ));
    assert!(matches!(
        RelayContext::new(ProtocolKind::VariableGainAfType1, AmplificationSchedule::<f64>::online(10_000), 20, None),
        Err(Error::Config(_))
    ));
    assert!(RelayContext::new(ProtocolKind::FixedGainAf, fixed, 20, None).is_ok());
}

#[test]
fn relay_threshold_heuristic() {
    let cfg = SystemConfig::<f64>::reference_operating_point();
    let t = cfg.tables().unwrap();
    // Equal re-emission over equal hops: the relay sees what the destination sees.
    let df = ProtocolKind::DecodeForward { df_emission: 2500 };
    assert_eq!(default_relay_threshold(&cfg, &t, df, 0.0), 20);
    // A gain of 1/rd0 makes the second-hop mean equal the first-hop mean.
    let k = 1.0 / t.relay_destination.window(0);
    assert_eq!(default_relay_threshold(&cfg, &t, ProtocolKind::FixedGainAf, k), 20);
    assert_eq!(default_relay_threshold(&cfg, &t, ProtocolKind::FixedGainAf, 0.0), 1);
}
