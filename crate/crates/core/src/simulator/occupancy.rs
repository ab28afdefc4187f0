//! Exact sampling of sphere occupancy for a burst of molecules without
//! tracking the molecules that never enter the sphere.
//!
//! For a burst of `n` molecules released together, each molecule's path
//! is observed at a fixed list of times. With `p_i` the probability that
//! one molecule is inside the ball at time `i` and `S = Σ p_i`, draw
//! `K ~ Binomial(n, S)` proposals. A proposal picks a time `i ∝ p_i`,
//! samples the position at that time conditioned on being inside the ball,
//! completes the path with a Brownian bridge backwards and free motion
//! forwards, and is accepted with probability `1/h` where `h` is the number
//! of observation times at which the path is inside. Accepted paths are
//! distributed exactly as molecule paths that visit the ball at least once,
//! and every molecule independently yields one with the right probability,
//! so the summed indicators have the law of the full particle simulation.

use rand::Rng;
use rand_distr::{Binomial, Distribution};

use crate::channel::{distance, Vec3};
use crate::num::Real;

use super::particles::{brownian_step, inside};

fn std_normal_pdf<T: Real>(z: T) -> T {
    (-(z * z) / T::lit(2.0)).exp() / (T::lit(2.0) * T::PI()).sqrt()
}

/// `P(|X − c| ≤ s)` for `X ~ N(x₀, σ²I₃)` with `ρ = |x₀ − c|`.
pub fn ball_probability<T: Real>(rho: T, s: T, sigma: T) -> T {
    if s <= T::zero() {
        return T::zero();
    }
    let p = if rho <= sigma * T::lit(1e-6) {
        // Centred: Maxwell distribution of the radius.
        let x = s / sigma;
        (x / T::SQRT_2()).erf() - (T::lit(2.0) / T::PI()).sqrt() * x * (-(x * x) / T::lit(2.0)).exp()
    } else {
        let a = (s - rho) / sigma;
        let b = (s + rho) / sigma;
        let head = T::lit(0.5) * ((-a / T::SQRT_2()).erfc() - (b / T::SQRT_2()).erfc());
        head - sigma / rho * (std_normal_pdf(a) - std_normal_pdf(b))
    };
    p.max(T::zero()).min(T::one())
}

/// Occupancy probabilities of one emitter-observer pair at a list of
/// observation times measured from the release.
#[derive(Clone, Debug)]
pub struct OccupancyTable<T> {
    emitter: Vec3<T>,
    center: Vec3<T>,
    radius: T,
    diffusion_coeff: T,
    times: Vec<T>,
    probs: Vec<T>,
    /// `cumulative[k] = Σ_{i<k} probs[i]`.
    cumulative: Vec<T>,
}

impl<T: Real> OccupancyTable<T> {
    pub fn new(emitter: Vec3<T>, center: Vec3<T>, radius: T, diffusion_coeff: T, times: Vec<T>) -> Self {
        debug_assert!(times.windows(2).all(|w| w[0] < w[1]) && times[0] > T::zero());
        let rho = distance(&emitter, &center);
        let probs: Vec<T> = times
            .iter()
            .map(|&t| ball_probability(rho, radius, (T::lit(2.0) * diffusion_coeff * t).sqrt()))
            .collect();
        let mut cumulative = Vec::with_capacity(probs.len() + 1);
        let mut acc = T::zero();
        cumulative.push(acc);
        for &p in &probs {
            acc = acc + p;
            cumulative.push(acc);
        }
        Self {
            emitter,
            center,
            radius,
            diffusion_coeff,
            times,
            probs,
            cumulative,
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn probability(&self, i: usize) -> T {
        self.probs[i]
    }

    pub fn times(&self) -> &[T] {
        &self.times
    }

    /// Adds to `counts[i]` the number of the `n` molecules inside the ball at
    /// observation time `i`, for the first `counts.len()` times.
    pub fn sample_burst<R: Rng + ?Sized>(&self, n: u64, counts: &mut [u64], rng: &mut R) {
        let horizon = counts.len();
        assert!(horizon <= self.len());
        if n == 0 || horizon == 0 {
            return;
        }
        let total = self.cumulative[horizon];
        if total > T::one() {
            for _ in 0..n {
                self.walk_forward(0, self.emitter, T::zero(), counts, rng);
            }
            return;
        }
        if !(total > T::zero()) {
            return;
        }
        let k = Binomial::new(n, total.as_f64().min(1.0))
            .expect("valid binomial parameters")
            .sample(rng);
        let mut hits = Vec::new();
        for _ in 0..k {
            hits.clear();
            let u = T::lit(rng.random::<f64>()) * total;
            // Largest i with cumulative[i] <= u, restricted to the horizon.
            let i = (self.cumulative[1..=horizon].partition_point(|&c| c <= u)).min(horizon - 1);
            if self.probs[i] == T::zero() {
                continue;
            }
            let y = self.conditioned_position(i, rng);
            self.bridge_hits(i, y, &mut hits, rng);
            hits.push(i);
            self.forward_hits(i, y, horizon, &mut hits, rng);
            let h = T::from_count(hits.len() as u64);
            if T::lit(rng.random::<f64>()) * h < T::one() {
                for &idx in &hits {
                    counts[idx] += 1;
                }
            }
        }
    }

    /// Position at time `i` drawn from the free-diffusion law conditioned on the ball.
    fn conditioned_position<R: Rng + ?Sized>(&self, i: usize, rng: &mut R) -> Vec3<T> {
        let sigma = (T::lit(2.0) * self.diffusion_coeff * self.times[i]).sqrt();
        let rho = distance(&self.emitter, &self.center);
        let r = self.radius;
        let two_var = T::lit(2.0) * sigma * sigma;
        // Density ratio across the ball is at most exp(4ρr / 2σ²).
        if T::lit(4.0) * rho * r / two_var <= T::lit(4.0) {
            let nearest = (rho - r).max(T::zero());
            loop {
                let y = self.uniform_in_ball(rng);
                let d = distance(&y, &self.emitter);
                let log_accept = -(d * d - nearest * nearest) / two_var;
                if T::open_unit(rng).ln() <= log_accept {
                    return y;
                }
            }
        }
        self.conditioned_position_by_inversion(i, sigma, rho, rng)
    }

    fn uniform_in_ball<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec3<T> {
        loop {
            let u = [
                T::lit(2.0 * rng.random::<f64>() - 1.0),
                T::lit(2.0 * rng.random::<f64>() - 1.0),
                T::lit(2.0 * rng.random::<f64>() - 1.0),
            ];
            if u[0] * u[0] + u[1] * u[1] + u[2] * u[2] <= T::one() {
                return [
                    self.center[0] + self.radius * u[0],
                    self.center[1] + self.radius * u[1],
                    self.center[2] + self.radius * u[2],
                ];
            }
        }
    }

    /// Radius by bisection on its conditional CDF, direction from a von
    /// Mises-Fisher law about the emitter direction.
    fn conditioned_position_by_inversion<R: Rng + ?Sized>(&self, i: usize, sigma: T, rho: T, rng: &mut R) -> Vec3<T> {
        let offset = [
            self.emitter[0] - self.center[0],
            self.emitter[1] - self.center[1],
            self.emitter[2] - self.center[2],
        ];
        let u = T::open_unit(rng) * self.probs[i];
        let (mut lo, mut hi) = (T::zero(), self.radius);
        for _ in 0..60 {
            let mid = T::lit(0.5) * (lo + hi);
            if ball_probability(rho, mid, sigma) < u {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let s = T::lit(0.5) * (lo + hi);
        let kappa = s * rho / (sigma * sigma);
        let w = if kappa < T::lit(1e-8) {
            T::lit(2.0) * T::lit(rng.random::<f64>()) - T::one()
        } else {
            let v = T::lit(rng.random::<f64>());
            (T::one() + (v + (T::one() - v) * (T::lit(-2.0) * kappa).exp()).ln() / kappa)
                .max(-T::one())
                .min(T::one())
        };
        let axis = if rho > T::zero() {
            [offset[0] / rho, offset[1] / rho, offset[2] / rho]
        } else {
            [T::one(), T::zero(), T::zero()]
        };
        let (e1, e2) = orthonormal_complement(axis);
        let phi = T::lit(2.0) * T::PI() * T::lit(rng.random::<f64>());
        let perp = (T::one() - w * w).max(T::zero()).sqrt();
        let (sp, cp) = phi.sin_cos();
        let mut y = self.center;
        for d in 0..3 {
            y[d] = y[d] + s * (w * axis[d] + perp * (cp * e1[d] + sp * e2[d]));
        }
        y
    }

    /// Brownian bridge from the release point to `(times[i], y)`, recording earlier hits.
    fn bridge_hits<R: Rng + ?Sized>(&self, i: usize, y: Vec3<T>, hits: &mut Vec<usize>, rng: &mut R) {
        let end = self.times[i];
        let two_d = T::lit(2.0) * self.diffusion_coeff;
        let mut t_prev = T::zero();
        let mut x = self.emitter;
        for k in 0..i {
            let t = self.times[k];
            let frac = (t - t_prev) / (end - t_prev);
            let sd = (two_d * (t - t_prev) * (end - t) / (end - t_prev)).sqrt();
            for d in 0..3 {
                x[d] = x[d] + frac * (y[d] - x[d]) + sd * T::standard_normal(rng);
            }
            if inside(&x, &self.center, self.radius) {
                hits.push(k);
            }
            t_prev = t;
        }
    }

    fn forward_hits<R: Rng + ?Sized>(&self, i: usize, y: Vec3<T>, horizon: usize, hits: &mut Vec<usize>, rng: &mut R) {
        let mut x = y;
        for k in (i + 1)..horizon {
            x = brownian_step(x, self.times[k] - self.times[k - 1], self.diffusion_coeff, rng);
            if inside(&x, &self.center, self.radius) {
                hits.push(k);
            }
        }
    }

    fn walk_forward<R: Rng + ?Sized>(&self, from: usize, start: Vec3<T>, t0: T, counts: &mut [u64], rng: &mut R) {
        let mut x = start;
        let mut t = t0;
        for (count, &tk) in counts[from..].iter_mut().zip(&self.times[from..]) {
            x = brownian_step(x, tk - t, self.diffusion_coeff, rng);
            t = tk;
            if inside(&x, &self.center, self.radius) {
                *count += 1;
            }
        }
    }

    /// Plain particle-by-particle simulation of the same burst.
    pub fn simulate_burst_directly<R: Rng + ?Sized>(&self, n: u64, counts: &mut [u64], rng: &mut R) {
        for _ in 0..n {
            self.walk_forward(0, self.emitter, T::zero(), counts, rng);
        }
    }
}

fn orthonormal_complement<T: Real>(a: Vec3<T>) -> (Vec3<T>, Vec3<T>) {
    // Cross with the coordinate axis least aligned with `a`.
    let helper = if a[0].abs() < T::lit(0.9) {
        [T::one(), T::zero(), T::zero()]
    } else {
        [T::zero(), T::one(), T::zero()]
    };
    let e1 = normalize(cross(a, helper));
    let e2 = cross(a, e1);
    (e1, e2)
}

fn cross<T: Real>(a: Vec3<T>, b: Vec3<T>) -> Vec3<T> {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn normalize<T: Real>(a: Vec3<T>) -> Vec3<T> {
    let n = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
    [a[0] / n, a[1] / n, a[2] / n]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, StreamDomain};
    use approx::assert_relative_eq;

    #[test]
    fn ball_probability_limits() {
        // Far-field: volume times the density at the centre.
        let (rho, r, sigma): (f64, f64, f64) = (250e-9, 1e-9, 132e-9);
        let density = (-(rho * rho) / (2.0 * sigma * sigma)).exp() / (2.0 * std::f64::consts::PI * sigma * sigma).powf(1.5);
        let vol = 4.0 / 3.0 * std::f64::consts::PI * r * r * r;
        assert_relative_eq!(ball_probability(rho, r, sigma), vol * density, max_relative = 1e-4);
        // Centred and nearly centred agree.
        assert_relative_eq!(
            ball_probability(1e-20, 50e-9, 100e-9),
            ball_probability(1e-12, 50e-9, 100e-9),
            max_relative = 1e-6
        );
        // Huge ball captures everything.
        assert_relative_eq!(ball_probability(1e-7, 1e-3, 1e-7), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn ball_probability_matches_direct_sampling() {
        let d = 4.365e-10;
        let table = OccupancyTable::new([0.0; 3], [250e-9, 0.0, 0.0], 45e-9, d, vec![20e-6]);
        let mut rng = substream(11, StreamDomain::Trial, 0);
        let mut counts = [0u64];
        let n = 2_000_000;
        table.simulate_burst_directly(n, &mut counts, &mut rng);
        let p = table.probability(0);
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((counts[0] as f64 / n as f64 - p).abs() < 4.0 * se, "{} vs {p}", counts[0]);
    }

    #[test]
    fn rejection_and_inversion_agree() {
        // Same conditional law from both samplers: compare mean offset along the axis
        // and mean squared radius.
        let c = [250e-9, 0.0, 0.0];
        let table = OccupancyTable::new([0.0; 3], c, 45e-9, 4.365e-10, vec![20e-6]);
        let sigma = (2.0 * 4.365e-10 * 20e-6f64).sqrt();
        let c: [f64; 3] = c;
        let mut rng = substream(3, StreamDomain::Trial, 0);
        let n = 200_000;
        let (mut ax1, mut r1, mut ax2, mut r2) = (0.0, 0.0, 0.0, 0.0);
        for _ in 0..n {
            let y = table.conditioned_position(0, &mut rng);
            ax1 += (y[0] - c[0]) / 45e-9;
            r1 += distance::<f64>(&y, &c).powi(2) / (45e-9f64).powi(2);
            let z = table.conditioned_position_by_inversion(0, sigma, 250e-9, &mut rng);
            ax2 += (z[0] - c[0]) / 45e-9;
            r2 += distance::<f64>(&z, &c).powi(2) / (45e-9f64).powi(2);
        }
        let nf = n as f64;
        // Per-sample sd is below 0.6 for both statistics.
        let tol = 5.0 * 0.6 * (2.0 / nf).sqrt();
        assert!((ax1 / nf - ax2 / nf).abs() < tol, "{} {}", ax1 / nf, ax2 / nf);
        assert!((r1 / nf - r2 / nf).abs() < tol, "{} {}", r1 / nf, r2 / nf);
        // Pulled towards the emitter.
        assert!(ax1 / nf < -0.05);
    }

    #[test]
    fn conditioned_positions_are_inside() {
        let table = OccupancyTable::new([0.0; 3], [0.0, 250e-9, 0.0], 45e-9, 4.365e-10, vec![20e-6, 40e-6]);
        let mut rng = substream(2, StreamDomain::Trial, 1);
        for i in 0..2 {
            for _ in 0..2000 {
                let y = table.conditioned_position(i, &mut rng);
                let d = distance(&y, &[0.0, 250e-9, 0.0]);
                assert!(d <= 45e-9 * (1.0 + 1e-12));
            }
        }
    }
}
