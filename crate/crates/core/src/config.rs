//! Full parameterisation of one two-hop experiment.

use crate::channel::{DiffusionMedium, HopProfile, LinkGeometry, NodeGeometry, SamplingScheme};
use crate::error::{Error, Result};
use crate::num::Real;
use crate::protocols::{DetectionConfig, SourceModel};

/// Default clamp for the gain when the closed form diverges.
pub const DEFAULT_K_MAX: u64 = 10_000;

/// Geometry, diffusion, source statistics, sampling and thresholds.
///
/// Source at the origin, destination at `(x_D, 0, 0)`, relay halfway between.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemConfig<T> {
    pub medium: DiffusionMedium<T>,
    pub receiver_distance: T,
    pub relay_radius: T,
    pub destination_radius: T,
    pub source: SourceModel<T>,
    pub sampling: SamplingScheme<T>,
    pub detection: DetectionConfig,
    pub k_max: u64,
    /// Molecules re-emitted by a decode-and-forward relay on a detected one.
    /// `None` means "same as the source emission".
    pub df_emission: Option<u64>,
}

/// The three links of the network.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hops<T> {
    pub source_relay: LinkGeometry<T>,
    pub relay_destination: LinkGeometry<T>,
    /// Direct link used by the no-relay baseline (carries A1 molecules).
    pub source_destination: LinkGeometry<T>,
}

/// Window-sum tables of every link, long enough for the whole transmission.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelTables<T> {
    pub source_relay: HopProfile<T>,
    pub relay_destination: HopProfile<T>,
    pub source_destination: HopProfile<T>,
}

impl<T: Real> SystemConfig<T> {
    /// Environment of the reference scenario (P₁ = 0.5, x_D = 500 nm, L = 50,
    /// r_R = r_D = 45 nm, D = 4.365e-10 m²/s, N_A1 = 2500) at the given
    /// operating point.
    pub fn reference(sampling: SamplingScheme<T>, xi_d: u64) -> Self {
        let d = T::lit(4.365e-10);
        Self {
            medium: DiffusionMedium::new(d, d).expect("reference medium is valid"),
            receiver_distance: T::lit(500e-9),
            relay_radius: T::lit(45e-9),
            destination_radius: T::lit(45e-9),
            source: SourceModel::new(T::lit(0.5), 2500, 50).expect("reference source is valid"),
            sampling,
            detection: DetectionConfig::new(xi_d, None),
            k_max: DEFAULT_K_MAX,
            df_emission: None,
        }
    }

    /// Reference environment with `M = 10` samples every 20 µs, `T = 400 µs`, `ξ_D = 20`.
    pub fn reference_operating_point() -> Self {
        let sampling = SamplingScheme::new(T::lit(400e-6), 10, T::lit(20e-6)).expect("valid sampling");
        Self::reference(sampling, 20)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.receiver_distance > T::zero()) {
            return Err(Error::Config("receiver distance must be positive".into()));
        }
        if self.k_max == 0 {
            return Err(Error::Config("k_max must be at least 1".into()));
        }
        self.hops().map(|_| ())
    }

    pub fn relay_center(&self) -> [T; 3] {
        [self.receiver_distance / T::lit(2.0), T::zero(), T::zero()]
    }

    pub fn destination_center(&self) -> [T; 3] {
        [self.receiver_distance, T::zero(), T::zero()]
    }

    pub fn hops(&self) -> Result<Hops<T>> {
        let origin = [T::zero(); 3];
        let relay = NodeGeometry::sphere(self.relay_center(), self.relay_radius)?;
        let dest = NodeGeometry::sphere(self.destination_center(), self.destination_radius)?;
        Ok(Hops {
            source_relay: LinkGeometry::new(origin, relay, self.medium.diffusion_coeff_a1)?,
            relay_destination: LinkGeometry::new(self.relay_center(), dest, self.medium.diffusion_coeff_a2)?,
            source_destination: LinkGeometry::new(origin, dest, self.medium.diffusion_coeff_a1)?,
        })
    }

    /// Tables covering lags `0..=L`, enough for any interval of a length-`L` transmission.
    pub fn tables(&self) -> Result<ChannelTables<T>> {
        let hops = self.hops()?;
        let lags = self.source.seq_len() + 1;
        Ok(ChannelTables {
            source_relay: HopProfile::new(&hops.source_relay, &self.sampling, lags)?,
            relay_destination: HopProfile::new(&hops.relay_destination, &self.sampling, lags)?,
            source_destination: HopProfile::new(&hops.source_destination, &self.sampling, lags)?,
        })
    }

    pub fn df_emission(&self) -> u64 {
        self.df_emission.unwrap_or(self.source.n_a1())
    }

    pub fn with_seq_len(mut self, seq_len: usize) -> Self {
        self.source = SourceModel::new(self.source.p1(), self.source.n_a1(), seq_len).expect("valid length");
        self
    }
}
