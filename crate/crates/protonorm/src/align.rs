//! Prototype alignment on the unit hypersphere.
//!
//! Global prototypes are projected onto the unit sphere and repelled
//! from each other by minimizing the log-inverse-distance energy
//! `E = sum over pairs j < k of log(1 / ||c_j - c_k||)`, the
//! Thomson-style objective whose minimum spreads the prototypes to
//! maximal angular separation. Each iteration applies the pairwise
//! repulsion force with momentum, then renormalizes back to the sphere.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::norm;
use crate::proto::{DistanceStats, Prototype, PrototypeSet};
use crate::rng::{substream, Stream};

/// Solver hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignerConfig {
    /// Momentum coefficient in [0, 1).
    pub mu: f64,
    /// Initial learning rate.
    pub eta0: f64,
    /// Multiplicative learning-rate decay, applied every `decay_every`
    /// iterations.
    pub decay_factor: f64,
    pub decay_every: usize,
    /// Stopping threshold on the max per-prototype force change.
    pub epsilon: f64,
    /// Consecutive iterations the force change must stay below
    /// `epsilon` before the solver stops.
    pub patience: usize,
    pub max_iters: usize,
    /// Lower clamp on pair distances inside the energy and force
    /// kernels; the kernel is singular at zero separation.
    pub min_pair_distance_floor: f64,
}

impl Default for AlignerConfig {
    fn default() -> Self {
        AlignerConfig {
            mu: 0.9,
            eta0: 0.1,
            decay_factor: 0.95,
            decay_every: 10,
            epsilon: 1e-4,
            patience: 10,
            max_iters: 1000,
            min_pair_distance_floor: 1e-8,
        }
    }
}

impl AlignerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.mu) {
            return Err(Error::Config(format!(
                "aligner.mu must be in [0, 1), got {}",
                self.mu
            )));
        }
        if self.eta0 <= 0.0 {
            return Err(Error::Config("aligner.eta0 must be > 0".into()));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::Config("aligner.decay_factor must be in (0, 1]".into()));
        }
        if self.decay_every == 0 {
            return Err(Error::Config("aligner.decay_every must be >= 1".into()));
        }
        if self.epsilon <= 0.0 {
            return Err(Error::Config("aligner.epsilon must be > 0".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("aligner.patience must be >= 1".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("aligner.max_iters must be >= 1".into()));
        }
        if self.min_pair_distance_floor <= 0.0 {
            return Err(Error::Config(
                "aligner.min_pair_distance_floor must be > 0".into(),
            ));
        }
        Ok(())
    }
}

/// How an alignment run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Converged,
    MaxIters,
}

/// State snapshot after one solver iteration.
#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub energy: f64,
    pub distances: DistanceStats,
    /// max over prototypes of the force-change norm vs the previous
    /// iteration; the first iteration reports its own force norm.
    pub max_force_change: f64,
}

/// Per-iteration record of one alignment run.
#[derive(Debug, Clone)]
pub struct AlignerTrace {
    /// Energy and distances of the normalized input, before any update.
    pub initial: Option<(f64, DistanceStats)>,
    pub iterations: Vec<IterationRecord>,
    pub terminated_by: Termination,
}

impl AlignerTrace {
    pub fn iterations_run(&self) -> usize {
        self.iterations.len()
    }
}

/// Log-inverse-distance energy of a point configuration, with pair
/// distances clamped below at `floor`. Points need not be unit norm.
pub fn log_energy(points: &[Vec<f64>], floor: f64) -> f64 {
    let mut e = 0.0;
    for j in 0..points.len() {
        for k in (j + 1)..points.len() {
            let d = crate::linalg::euclidean_distance(&points[j], &points[k]).max(floor);
            e -= d.ln();
        }
    }
    e
}

/// Pairwise repulsion forces: the negative gradient of [`log_energy`]
/// with respect to each point, with the same distance clamp.
pub fn repulsion_forces(points: &[Vec<f64>], floor: f64) -> Vec<Vec<f64>> {
    let n = points.len();
    let dim = points.first().map_or(0, |p| p.len());
    let mut forces = vec![vec![0.0; dim]; n];
    for j in 0..n {
        for k in (j + 1)..n {
            let d = crate::linalg::euclidean_distance(&points[j], &points[k]).max(floor);
            let inv_sq = 1.0 / (d * d);
            for i in 0..dim {
                let push = (points[j][i] - points[k][i]) * inv_sq;
                forces[j][i] += push;
                forces[k][i] -= push;
            }
        }
    }
    forces
}

fn check_unit(points: &[Vec<f64>]) -> Result<()> {
    for (i, p) in points.iter().enumerate() {
        if (norm(p) - 1.0).abs() > 1e-6 {
            return Err(Error::Contract(format!(
                "prototype {i} is not unit norm (|v| = {})",
                norm(p)
            )));
        }
    }
    Ok(())
}

fn vectors_of(protos: &PrototypeSet) -> Vec<Vec<f64>> {
    protos.iter().map(|p| p.vec.clone()).collect()
}

fn set_with_vectors(template: &PrototypeSet, vectors: Vec<Vec<f64>>) -> PrototypeSet {
    let mut out = PrototypeSet::new(template.dim(), template.num_classes());
    for (p, vec) in template.iter().zip(vectors) {
        out.insert(Prototype {
            class_id: p.class_id,
            vec,
            support: p.support,
        });
    }
    out
}

/// Surrogate energy of a unit-norm prototype set.
pub fn surrogate_energy(protos: &PrototypeSet, floor: f64) -> Result<f64> {
    if protos.len() < 2 {
        return Err(Error::Contract(
            "energy requires at least two prototypes".into(),
        ));
    }
    let points = vectors_of(protos);
    check_unit(&points)?;
    Ok(log_energy(&points, floor))
}

/// Repulsion forces on a unit-norm prototype set, in class order.
pub fn forces(protos: &PrototypeSet, floor: f64) -> Result<Vec<Vec<f64>>> {
    if protos.len() < 2 {
        return Err(Error::Contract(
            "forces require at least two prototypes".into(),
        ));
    }
    let points = vectors_of(protos);
    check_unit(&points)?;
    Ok(repulsion_forces(&points, floor))
}

pub(crate) fn random_unit_vector<R: Rng>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = norm(&v);
        if n > 1e-12 {
            return v.iter().map(|x| x / n).collect();
        }
    }
}

/// Project every prototype onto the unit sphere. Zero vectors are
/// replaced by a seeded random direction and logged.
pub fn normalize_set(protos: &PrototypeSet, seed: u64) -> PrototypeSet {
    let mut rng = substream(seed, Stream::Align, &[0]);
    let vectors = protos
        .iter()
        .map(|p| {
            let n = norm(&p.vec);
            if n == 0.0 {
                log::warn!(
                    "class {} prototype is the zero vector; replacing with a seeded random direction",
                    p.class_id
                );
                random_unit_vector(p.vec.len(), &mut rng)
            } else {
                p.vec.iter().map(|x| x / n).collect()
            }
        })
        .collect();
    set_with_vectors(protos, vectors)
}

fn distance_stats(points: &[Vec<f64>]) -> DistanceStats {
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    let mut sum = 0.0;
    let mut count = 0usize;
    for j in 0..points.len() {
        for k in (j + 1)..points.len() {
            let d = crate::linalg::euclidean_distance(&points[j], &points[k]);
            min = min.min(d);
            max = max.max(d);
            sum += d;
            count += 1;
        }
    }
    DistanceStats {
        min,
        mean: sum / count as f64,
        max,
    }
}

/// Run the alignment solver on a prototype set.
///
/// Normalizes the inputs, then iterates force computation, momentum
/// velocity update, position update, and renormalization until the
/// forces stabilize or `max_iters` is reached. Velocities start at
/// zero on every call. With fewer than two prototypes the input is
/// returned unchanged with an empty trace.
pub fn align(protos: &PrototypeSet, config: &AlignerConfig, seed: u64) -> (PrototypeSet, AlignerTrace) {
    if protos.len() < 2 {
        return (
            protos.clone(),
            AlignerTrace {
                initial: None,
                iterations: Vec::new(),
                terminated_by: Termination::Converged,
            },
        );
    }

    let normalized = normalize_set(protos, seed);
    let mut points = vectors_of(&normalized);
    let dim = points[0].len();
    let floor = config.min_pair_distance_floor;

    // Coincident prototypes sit at the kernel's singularity; nudge the
    // later member of each such pair so the forces can separate them.
    let mut jitter_rng = substream(seed, Stream::Align, &[1]);
    for j in 0..points.len() {
        for k in (j + 1)..points.len() {
            if crate::linalg::euclidean_distance(&points[j], &points[k]) < floor {
                let dir = random_unit_vector(dim, &mut jitter_rng);
                for (x, d) in points[k].iter_mut().zip(&dir) {
                    *x += 1e-6 * d;
                }
                let n = norm(&points[k]);
                for x in points[k].iter_mut() {
                    *x /= n;
                }
            }
        }
    }

    let initial = (log_energy(&points, floor), distance_stats(&points));

    let mut velocities = vec![vec![0.0; dim]; points.len()];
    let mut prev_forces: Option<Vec<Vec<f64>>> = None;
    let mut iterations = Vec::new();
    let mut below_eps_streak = 0usize;
    let mut terminated_by = Termination::MaxIters;

    for t in 0..config.max_iters {
        let eta = config.eta0 * config.decay_factor.powi((t / config.decay_every) as i32);
        let current_forces = repulsion_forces(&points, floor);

        let max_force_change = match &prev_forces {
            Some(prev) => current_forces
                .iter()
                .zip(prev)
                .map(|(f, g)| {
                    f.iter()
                        .zip(g)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt()
                })
                .fold(0.0, f64::max),
            None => current_forces.iter().map(|f| norm(f)).fold(0.0, f64::max),
        };

        for ((point, velocity), force) in points
            .iter_mut()
            .zip(velocities.iter_mut())
            .zip(&current_forces)
        {
            for ((x, v), &f) in point.iter_mut().zip(velocity.iter_mut()).zip(force) {
                *v = config.mu * *v + eta * f;
                *x += *v;
            }
            let n = norm(point);
            for x in point.iter_mut() {
                *x /= n;
            }
        }

        iterations.push(IterationRecord {
            energy: log_energy(&points, floor),
            distances: distance_stats(&points),
            max_force_change,
        });

        if max_force_change < config.epsilon {
            below_eps_streak += 1;
            if below_eps_streak >= config.patience {
                terminated_by = Termination::Converged;
                break;
            }
        } else {
            below_eps_streak = 0;
        }
        prev_forces = Some(current_forces);
    }

    (
        set_with_vectors(&normalized, points),
        AlignerTrace {
            initial: Some(initial),
            iterations,
            terminated_by,
        },
    )
}
