use mc_relay::analysis::{Analysis, AverageOptions, MeanMode};
use mc_relay::channel::SamplingScheme;
use mc_relay::config::SystemConfig;
use mc_relay::protocols::{fixed_gain, AmplificationSchedule, GainModel, ProtocolKind, RelayContext};
use mc_relay::simulator::{SimulationOptions, Simulator, TransmissionPlan};

fn configs() -> (SystemConfig<f32>, SystemConfig<f64>) {
    let s32 = SamplingScheme::new(400e-6f32, 10, 20e-6).unwrap();
    let s64 = SamplingScheme::new(400e-6f64, 10, 20e-6).unwrap();
    (SystemConfig::reference(s32, 20).with_seq_len(12), SystemConfig::reference(s64, 20).with_seq_len(12))
}

#[test]
fn window_sums_agree_across_precisions() {
    let (c32, c64) = configs();
    let (t32, t64) = (c32.tables().unwrap(), c64.tables().unwrap());
    for a in 0..t64.source_relay.len() {
        let (x, y) = (t32.source_relay.window(a) as f64, t64.source_relay.window(a));
        assert!(((x - y) / y).abs() < 1e-5, "lag {a}: {x} vs {y}");
    }
}

#[test]
fn gains_and_error_rates_agree_across_precisions() {
    let (c32, c64) = configs();
    let k32 = fixed_gain(&GainModel::from_config(&c32).unwrap(), &c32.source, 2000, 1).unwrap();
    let k64 = fixed_gain(&GainModel::from_config(&c64).unwrap(), &c64.source, 2000, 1).unwrap();
    assert!((k32 as f64 - k64).abs() <= 1.0, "{k32} vs {k64}");

    let r32 = RelayContext::new(ProtocolKind::FixedGainAf, AmplificationSchedule::fixed(200.0f32, 10_000).unwrap(), 20, None)
        .unwrap();
    let r64 = RelayContext::new(ProtocolKind::FixedGainAf, AmplificationSchedule::fixed(200.0f64, 10_000).unwrap(), 20, None)
        .unwrap();
    let opts = AverageOptions::new(200, 3, MeanMode::Deterministic);
    let p32 = Analysis::new(c32.clone()).unwrap().average_error_prob(&r32, opts).unwrap().overall as f64;
    let p64 = Analysis::new(c64).unwrap().average_error_prob(&r64, opts).unwrap().overall;
    assert!(((p32 - p64) / p64).abs() < 1e-3, "{p32} vs {p64}");

    let sim = Simulator::new(c32, SimulationOptions::default()).unwrap();
    let ber = sim.monte_carlo_ber(&TransmissionPlan::Relay(r32), 50, 2).unwrap();
    assert_eq!(ber.bits, 600);
}
