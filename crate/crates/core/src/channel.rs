//! Diffusion channel between an impulsive point emitter and a passive
//! spherical observer.
//!
//! All quantities are SI: metres, seconds, m²/s. Observations follow the
//! uniform-concentration model: the expected number of molecules inside the
//! observer is the point concentration at its centre times its volume.

use log::warn;

use crate::error::{Error, Result};
use crate::num::Real;
use crate::special;

pub type Vec3<T> = [T; 3];

pub(crate) fn distance<T: Real>(a: &Vec3<T>, b: &Vec3<T>) -> T {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

fn check_positive<T: Real>(name: &str, v: T) -> Result<()> {
    if v > T::zero() && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} must be positive and finite, got {v}")))
    }
}

/// Diffusion coefficients of the two messenger species.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiffusionMedium<T> {
    /// Species emitted by the source and sensed by the relay.
    pub diffusion_coeff_a1: T,
    /// Species emitted by the relay and sensed by the destination.
    pub diffusion_coeff_a2: T,
}

impl<T: Real> DiffusionMedium<T> {
    pub fn new(diffusion_coeff_a1: T, diffusion_coeff_a2: T) -> Result<Self> {
        check_positive("diffusion coefficient of A1", diffusion_coeff_a1)?;
        check_positive("diffusion coefficient of A2", diffusion_coeff_a2)?;
        Ok(Self {
            diffusion_coeff_a1,
            diffusion_coeff_a2,
        })
    }
}

/// A spherical node; radius zero makes it a point observer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NodeGeometry<T> {
    center: Vec3<T>,
    radius: T,
    volume: T,
}

impl<T: Real> NodeGeometry<T> {
    pub fn sphere(center: Vec3<T>, radius: T) -> Result<Self> {
        if !(radius >= T::zero() && radius.is_finite()) {
            return Err(Error::Domain(format!("node radius must be finite and >= 0, got {radius}")));
        }
        let volume = T::lit(4.0 / 3.0) * T::PI() * radius * radius * radius;
        Ok(Self {
            center,
            radius,
            volume,
        })
    }

    pub fn point(center: Vec3<T>) -> Self {
        Self {
            center,
            radius: T::zero(),
            volume: T::zero(),
        }
    }

    pub fn center(&self) -> Vec3<T> {
        self.center
    }
    pub fn radius(&self) -> T {
        self.radius
    }
    pub fn volume(&self) -> T {
        self.volume
    }
}

/// One hop: where molecules are released, who observes them, and how fast they diffuse.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinkGeometry<T> {
    emitter_pos: Vec3<T>,
    observer: NodeGeometry<T>,
    distance: T,
    diffusion_coeff: T,
}

impl<T: Real> LinkGeometry<T> {
    pub fn new(emitter_pos: Vec3<T>, observer: NodeGeometry<T>, diffusion_coeff: T) -> Result<Self> {
        check_positive("diffusion coefficient", diffusion_coeff)?;
        let distance = distance(&observer.center, &emitter_pos);
        if distance <= observer.radius {
            return Err(Error::ModelValidity(format!(
                "emitter at distance {distance} m lies inside the observer of radius {} m",
                observer.radius
            )));
        }
        if distance < T::lit(3.0) * observer.radius {
            warn!(
                "emitter-observer distance {distance} m is under three observer radii; \
                 the uniform-concentration approximation is coarse here"
            );
        }
        Ok(Self {
            emitter_pos,
            observer,
            distance,
            diffusion_coeff,
        })
    }

    pub fn emitter_pos(&self) -> Vec3<T> {
        self.emitter_pos
    }
    pub fn observer(&self) -> &NodeGeometry<T> {
        &self.observer
    }
    pub fn distance(&self) -> T {
        self.distance
    }
    pub fn diffusion_coeff(&self) -> T {
        self.diffusion_coeff
    }

    /// Time at which the hit probability peaks, `d² / (6 D)`.
    pub fn peak_time(&self) -> T {
        self.distance * self.distance / (T::lit(6.0) * self.diffusion_coeff)
    }
}

/// Equally spaced samples `t_m = m·t₀`, `m = 1..=M`, inside every bit interval.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplingScheme<T> {
    bit_interval: T,
    samples_per_bit: usize,
    sample_spacing: T,
}

impl<T: Real> SamplingScheme<T> {
    pub fn new(bit_interval: T, samples_per_bit: usize, sample_spacing: T) -> Result<Self> {
        check_positive("bit interval", bit_interval)?;
        check_positive("sample spacing", sample_spacing)?;
        if samples_per_bit == 0 {
            return Err(Error::Domain("at least one sample per bit is required".into()));
        }
        let last = T::from_count(samples_per_bit as u64) * sample_spacing;
        // Relative slack so that e.g. 10 × 20 µs == 200 µs survives rounding.
        if last > bit_interval * (T::one() + T::lit(1e-9)) {
            return Err(Error::Domain(format!(
                "{samples_per_bit} samples spaced {sample_spacing} s do not fit into a bit interval of {bit_interval} s"
            )));
        }
        Ok(Self {
            bit_interval,
            samples_per_bit,
            sample_spacing,
        })
    }

    pub fn bit_interval(&self) -> T {
        self.bit_interval
    }
    pub fn samples_per_bit(&self) -> usize {
        self.samples_per_bit
    }
    pub fn sample_spacing(&self) -> T {
        self.sample_spacing
    }

    /// Offset of sample `m` (1-based) from the start of its bit interval.
    pub fn sample_time(&self, m: usize) -> T {
        T::from_count(m as u64) * self.sample_spacing
    }

    pub fn sample_times(&self) -> impl Iterator<Item = T> + '_ {
        (1..=self.samples_per_bit).map(move |m| self.sample_time(m))
    }
}

/// Expected concentration (molecule/m³) at the observer centre `t` seconds
/// after `n_molecules` were released at the emitter.
pub fn point_concentration<T: Real>(n_molecules: T, link: &LinkGeometry<T>, t: T) -> Result<T> {
    if !(t > T::zero()) {
        return Err(Error::Domain(format!("concentration is singular at t = {t} s")));
    }
    if n_molecules < T::zero() {
        return Err(Error::Domain("molecule count must be nonnegative".into()));
    }
    let four_dt = T::lit(4.0) * link.diffusion_coeff * t;
    let norm = (T::PI() * four_dt).powf(T::lit(1.5));
    let d2 = link.distance * link.distance;
    Ok(n_molecules / norm * (-d2 / four_dt).exp())
}

/// Probability that one molecule released at the emitter is inside the observer at time `t`.
pub fn hit_probability<T: Real>(link: &LinkGeometry<T>, t: T) -> Result<T> {
    let p = point_concentration(T::one(), link, t)? * link.observer.volume;
    if p > T::one() {
        return Err(Error::ModelValidity(format!(
            "hit probability {p} exceeds one at t = {t} s; observer too close to emitter"
        )));
    }
    Ok(p)
}

/// Mean of the summed observation in interval `j` (1-based) given the
/// emissions at the start of intervals `1..=j`.
pub fn cumulative_mean<T: Real>(
    link: &LinkGeometry<T>,
    scheme: &SamplingScheme<T>,
    emissions: &[T],
    j: usize,
) -> Result<T> {
    check_interval(emissions.len(), j)?;
    let mut total = T::zero();
    for (i, &n) in emissions[..j].iter().enumerate() {
        if n < T::zero() {
            return Err(Error::Domain("emissions must be nonnegative".into()));
        }
        if n == T::zero() {
            continue;
        }
        let lag = T::from_count((j - 1 - i) as u64) * scheme.bit_interval;
        let mut window = T::zero();
        for t in scheme.sample_times() {
            window = window + hit_probability(link, lag + t)?;
        }
        total = total + n * window;
    }
    Ok(total)
}

fn check_interval(len: usize, j: usize) -> Result<()> {
    if j == 0 {
        return Err(Error::Domain("interval indices start at 1".into()));
    }
    if len < j {
        return Err(Error::Domain(format!("need emissions for {j} intervals, got {len}")));
    }
    Ok(())
}

/// `P(N < threshold)` for a Poisson count with the given mean (exact series).
pub fn poisson_tail_below<T: Real>(threshold: u64, mean: T) -> T {
    special::poisson_cdf_below(threshold, mean)
}

/// Continuous relaxation of [`poisson_tail_below`]: `Γ(ξ, λ) / Γ(ξ)`.
///
/// Coincides with the series for integer thresholds.
pub fn poisson_tail_gamma<T: Real>(threshold: T, mean: T) -> Result<T> {
    if !(threshold >= T::one()) {
        return Err(Error::Domain(format!("gamma relaxation needs a threshold >= 1, got {threshold}")));
    }
    if !(mean >= T::zero() && mean.is_finite()) {
        return Err(Error::Domain(format!("mean must be finite and >= 0, got {mean}")));
    }
    Ok(special::gamma_q(threshold, mean))
}

/// Per-lag window sums `Σ_m P_ob(a·T + t_m)` of one link, precomputed for
/// lags `0..len`. Every cumulative mean in the analysis is a dot product
/// against one of these tables.
#[derive(Clone, Debug, PartialEq)]
pub struct HopProfile<T> {
    window_sums: Vec<T>,
}

impl<T: Real> HopProfile<T> {
    pub fn new(link: &LinkGeometry<T>, scheme: &SamplingScheme<T>, lags: usize) -> Result<Self> {
        let mut window_sums = Vec::with_capacity(lags);
        for a in 0..lags {
            let offset = T::from_count(a as u64) * scheme.bit_interval();
            let mut s = T::zero();
            for t in scheme.sample_times() {
                s = s + hit_probability(link, offset + t)?;
            }
            window_sums.push(s);
        }
        Ok(Self { window_sums })
    }

    /// `Σ_m P_ob(lag·T + t_m)`; zero past the precomputed range is never
    /// returned silently.
    #[inline]
    pub fn window(&self, lag: usize) -> T {
        self.window_sums[lag]
    }

    pub fn len(&self) -> usize {
        self.window_sums.len()
    }

    pub fn is_empty(&self) -> bool {
        self.window_sums.is_empty()
    }

    /// [`cumulative_mean`] over the cached table.
    pub fn cumulative_mean(&self, emissions: &[T], j: usize) -> T {
        emissions[..j]
            .iter()
            .enumerate()
            .map(|(i, &n)| n * self.window(j - 1 - i))
            .sum()
    }
}
