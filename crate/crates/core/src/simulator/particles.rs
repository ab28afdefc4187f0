//! Individual molecules undergoing free 3-D Brownian motion.

use rand::Rng;

use crate::channel::{NodeGeometry, Vec3};
use crate::num::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Species {
    /// Emitted by the source, sensed by the relay.
    A1,
    /// Emitted by the relay, sensed by the destination.
    A2,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Particle<T> {
    pub position: Vec3<T>,
    pub species: Species,
    pub birth_time: T,
}

/// Adds an independent `N(0, 2·D·dt)` increment to every coordinate.
pub fn brownian_step<T: Real, R: Rng + ?Sized>(position: Vec3<T>, dt: T, diffusion_coeff: T, rng: &mut R) -> Vec3<T> {
    debug_assert!(dt > T::zero() && diffusion_coeff > T::zero());
    let sd = (T::lit(2.0) * diffusion_coeff * dt).sqrt();
    [
        position[0] + sd * T::standard_normal(rng),
        position[1] + sd * T::standard_normal(rng),
        position[2] + sd * T::standard_normal(rng),
    ]
}

#[inline]
pub(crate) fn inside<T: Real>(position: &Vec3<T>, center: &Vec3<T>, radius: T) -> bool {
    let dx = position[0] - center[0];
    let dy = position[1] - center[1];
    let dz = position[2] - center[2];
    dx * dx + dy * dy + dz * dz <= radius * radius
}

/// Particles of `species` inside the closed ball of `node`.
pub fn count_inside_sphere<T: Real>(particles: &[Particle<T>], node: &NodeGeometry<T>, species: Species) -> u64 {
    let c = node.center();
    let r = node.radius();
    particles
        .iter()
        .filter(|p| p.species == species && inside(&p.position, &c, r))
        .count() as u64
}

/// The whole molecule population of one trial.
#[derive(Clone, Debug, Default)]
pub struct ParticleCloud<T> {
    particles: Vec<Particle<T>>,
    emitted: [u64; 2],
    culled: [u64; 2],
}

fn slot(s: Species) -> usize {
    match s {
        Species::A1 => 0,
        Species::A2 => 1,
    }
}

impl<T: Real> ParticleCloud<T> {
    pub fn new() -> Self {
        Self {
            particles: Vec::new(),
            emitted: [0; 2],
            culled: [0; 2],
        }
    }

    pub fn emit(&mut self, n: u64, position: Vec3<T>, species: Species, time: T) {
        self.particles.extend((0..n).map(|_| Particle {
            position,
            species,
            birth_time: time,
        }));
        self.emitted[slot(species)] += n;
    }

    pub fn advance<R: Rng + ?Sized>(&mut self, dt: T, d_a1: T, d_a2: T, rng: &mut R) {
        for p in &mut self.particles {
            let d = match p.species {
                Species::A1 => d_a1,
                Species::A2 => d_a2,
            };
            p.position = brownian_step(p.position, dt, d, rng);
        }
    }

    /// Drops particles born before `now − horizon`; returns how many were removed.
    pub fn cull(&mut self, now: T, horizon: T) -> u64 {
        let before = self.particles.len();
        let mut removed = [0u64; 2];
        self.particles.retain(|p| {
            let keep = now - p.birth_time <= horizon;
            if !keep {
                removed[slot(p.species)] += 1;
            }
            keep
        });
        self.culled[0] += removed[0];
        self.culled[1] += removed[1];
        (before - self.particles.len()) as u64
    }

    pub fn count_inside(&self, node: &NodeGeometry<T>, species: Species) -> u64 {
        count_inside_sphere(&self.particles, node, species)
    }

    pub fn particles(&self) -> &[Particle<T>] {
        &self.particles
    }

    pub fn alive(&self, species: Species) -> u64 {
        self.particles.iter().filter(|p| p.species == species).count() as u64
    }

    pub fn emitted(&self, species: Species) -> u64 {
        self.emitted[slot(species)]
    }

    pub fn culled(&self, species: Species) -> u64 {
        self.culled[slot(species)]
    }
}
