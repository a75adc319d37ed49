//! Sequential Monte Carlo fitting of vehicle pose and shape.
//!
//! The sampler keeps a population of candidate states. Each iteration the
//! best few survive into the next population, spawn perturbed copies that
//! refill it, and the perturbation radii shrink geometrically. The initial
//! radii span the whole heading circle and a generous translation window
//! around a heuristic seed state, so the first population doubles as a
//! global random search while later iterations refine locally. Runs are
//! deterministic for a given seed: perturbations are drawn sequentially
//! from one generator and energies are evaluated in parallel without
//! affecting order.

use std::cmp::Ordering;

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::energy::{EnergyModel, EnergyParams, EnergyReport, ModelVariant, SceneEnergy};
use crate::error::{Error, Result};
use crate::observer::{ObservationBundle, VisibilityLut};
use crate::scene::{FreeSpaceGrid, PlaneFrame, StereoRig};
use crate::shape_model::DeformableVehicleModel;
use crate::types::{wrap_deg, VehicleState};

/// Sampler settings. The defaults fit one vehicle with 2200 evaluations.
#[derive(Debug, Clone)]
pub struct SmcConfig {
    /// Population size.
    pub particles: usize,
    /// Number of survive-and-refill rounds after the initial population.
    pub iterations: usize,
    /// Particles surviving each round; must divide `particles`.
    pub survivors: usize,
    /// Geometric decay of the perturbation radii per round, in `(0, 1]`.
    pub shrink: f64,
    /// Initial heading perturbation radius in degrees.
    pub theta_radius_deg: f64,
    /// Initial translation perturbation radius in metres.
    pub t_radius_m: f64,
    /// Initial shape coefficient perturbation radius.
    pub gamma_radius: f64,
    /// Hard bound on the magnitude of each shape coefficient.
    pub gamma_limit: f64,
    pub rng_seed: u64,
}

impl Default for SmcConfig {
    fn default() -> Self {
        SmcConfig {
            particles: 200,
            iterations: 10,
            survivors: 10,
            shrink: 0.85,
            theta_radius_deg: 180.0,
            t_radius_m: 1.5,
            gamma_radius: 3.0,
            gamma_limit: 6.0,
            rng_seed: 0,
        }
    }
}

impl SmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.particles == 0 || self.survivors == 0 {
            return Err(Error::InvalidConfig(
                "particle and survivor counts must be positive".to_string(),
            ));
        }
        if !self.particles.is_multiple_of(self.survivors) {
            return Err(Error::InvalidConfig(format!(
                "{} particles cannot be split evenly among {} survivors",
                self.particles, self.survivors
            )));
        }
        if !(self.shrink > 0.0 && self.shrink <= 1.0) {
            return Err(Error::InvalidConfig(
                "shrink factor must lie in (0, 1]".to_string(),
            ));
        }
        if self.theta_radius_deg < 0.0
            || self.t_radius_m < 0.0
            || self.gamma_radius < 0.0
            || self.gamma_limit <= 0.0
        {
            return Err(Error::InvalidConfig(
                "perturbation radii must be non-negative and the coefficient bound positive"
                    .to_string(),
            ));
        }
        Ok(())
    }
}

/// Best state known after one round, with its energy decomposition.
#[derive(Debug, Clone)]
pub struct IterationTrace {
    /// Round number; zero is the initial population.
    pub iteration: usize,
    pub report: EnergyReport,
    pub state: VehicleState,
}

#[derive(Debug, Clone)]
pub struct SmcResult {
    pub state: VehicleState,
    pub report: EnergyReport,
    /// One row per round, including the initial population. The best energy
    /// never increases along the trace.
    pub trace: Vec<IterationTrace>,
    /// Total number of energy evaluations spent.
    pub evaluations: usize,
}

/// Heuristic initial state: the translation is the centre of the smallest
/// enclosing rectangle of the stereo points on the ground plane, the heading
/// inverts the most likely viewpoint at that position, and the shape
/// coefficients are the subcategory target of the most likely type.
///
/// The rectangle may take any orientation. When two sides of the vehicle
/// are visible the point footprint is L-shaped and its minimum-area box is
/// close to the true footprint, so the centre is far less biased towards
/// the camera than an axis-aligned box of the visible surface would be.
pub fn seed_state(
    model: &DeformableVehicleModel,
    bundle: &ObservationBundle,
    frame: &PlaneFrame,
) -> Result<VehicleState> {
    if bundle.points.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    let flat: Vec<Vector2<f64>> = bundle
        .points
        .iter()
        .map(|p| frame.to_plane(p).xy())
        .collect();
    // Provisional centre for the bearing; the bearing varies slowly enough
    // with position that an axis-aligned box is accurate here.
    let mut min = Vector2::repeat(f64::INFINITY);
    let mut max = Vector2::repeat(f64::NEG_INFINITY);
    for p in &flat {
        min = min.inf(p);
        max = max.sup(p);
    }
    let rough = (min + max) / 2.0;
    let view = bundle.viewpoint.bin_center_deg(bundle.viewpoint.argmax());
    let rough_cam = frame.to_camera(rough.x, rough.y, 0.0);
    let rough_theta = wrap_deg(180.0 - view - rough_cam.x.atan2(rough_cam.z).to_degrees());

    let t0 = min_box_center(&flat, Some(rough_theta));
    let center = frame.to_camera(t0.x, t0.y, 0.0);
    let bearing = center.x.atan2(center.z).to_degrees();
    let theta = wrap_deg(180.0 - view - bearing);
    let gamma = model
        .mode_gamma(bundle.types.argmax())
        .unwrap_or_else(|| vec![0.0; model.n_active]);
    Ok(VehicleState::new(t0, theta, gamma))
}

/// Centre of the minimum-area rectangle of arbitrary orientation enclosing
/// the points. One side of that rectangle is collinear with a convex hull
/// edge, so it suffices to test every hull edge direction.
///
/// When the points trace two straight sides meeting at a right angle, the
/// side-aligned box and the box on the hull's diagonal have exactly equal
/// area, so the minimum is ambiguous. `preferred_axis_deg` breaks such
/// near-ties (within 5 % of the minimal area) towards the box whose axes
/// align with the given direction.
fn min_box_center(points: &[Vector2<f64>], preferred_axis_deg: Option<f64>) -> Vector2<f64> {
    let hull = convex_hull(points);
    if hull.len() < 3 {
        let mut min = Vector2::repeat(f64::INFINITY);
        let mut max = Vector2::repeat(f64::NEG_INFINITY);
        for p in &hull {
            min = min.inf(p);
            max = max.sup(p);
        }
        return (min + max) / 2.0;
    }
    let mut candidates: Vec<(f64, f64, Vector2<f64>)> = Vec::with_capacity(hull.len());
    let mut best_area = f64::INFINITY;
    for i in 0..hull.len() {
        let edge = hull[(i + 1) % hull.len()] - hull[i];
        let len = edge.norm();
        if len < 1e-12 {
            continue;
        }
        let u = edge / len;
        let v = Vector2::new(-u.y, u.x);
        let (mut u0, mut u1) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut v0, mut v1) = (f64::INFINITY, f64::NEG_INFINITY);
        for p in &hull {
            let a = p.dot(&u);
            let b = p.dot(&v);
            u0 = u0.min(a);
            u1 = u1.max(a);
            v0 = v0.min(b);
            v1 = v1.max(b);
        }
        let area = (u1 - u0) * (v1 - v0);
        let center = u * (0.5 * (u0 + u1)) + v * (0.5 * (v0 + v1));
        let axis = u.y.atan2(u.x).to_degrees();
        candidates.push((area, axis, center));
        best_area = best_area.min(area);
    }
    let tolerance = 1.05 * best_area;
    let mut best = None;
    for &(area, axis, center) in &candidates {
        if area > tolerance {
            continue;
        }
        // Box axes repeat every 90 degrees.
        let key = match preferred_axis_deg {
            Some(pref) => {
                let off = (axis - pref).rem_euclid(90.0);
                off.min(90.0 - off)
            }
            None => area,
        };
        match best {
            Some((k, _)) if k <= key => {}
            _ => best = Some((key, center)),
        }
    }
    best.expect("hull with at least three vertices has a candidate box").1
}

/// Convex hull by monotone chain, counterclockwise without repeating the
/// first point. Collinear inputs collapse to their two extremes.
fn convex_hull(points: &[Vector2<f64>]) -> Vec<Vector2<f64>> {
    let mut pts: Vec<Vector2<f64>> = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() <= 2 {
        return pts;
    }
    let cross =
        |o: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>| (a - o).perp(&(b - o));
    let mut lower: Vec<Vector2<f64>> = Vec::new();
    for p in &pts {
        while lower.len() >= 2
            && cross(&lower[lower.len() - 2], &lower[lower.len() - 1], p) <= 0.0
        {
            lower.pop();
        }
        lower.push(*p);
    }
    let mut upper: Vec<Vector2<f64>> = Vec::new();
    for p in pts.iter().rev() {
        while upper.len() >= 2
            && cross(&upper[upper.len() - 2], &upper[upper.len() - 1], p) <= 0.0
        {
            upper.pop();
        }
        upper.push(*p);
    }
    // Each chain ends where the other begins.
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Runs the sampler on an energy model from a seed state.
///
/// Fails with a degenerate-observations error when not a single particle of
/// the initial population has finite energy.
pub fn run<E: EnergyModel + ?Sized>(
    energy: &E,
    seed: &VehicleState,
    config: &SmcConfig,
) -> Result<SmcResult> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);

    let mut states = Vec::with_capacity(config.particles);
    states.push(seed.clone());
    while states.len() < config.particles {
        states.push(perturb(seed, 1.0, config, &mut rng));
    }
    let mut energies = evaluate(energy, &states);
    let mut evaluations = states.len();
    if energies.iter().all(|e| !e.is_finite()) {
        return Err(Error::DegenerateObservations);
    }

    let first = argmin(&energies);
    let mut best_state = states[first].clone();
    let mut best_energy = energies[first];
    let mut best_report = energy.breakdown(&best_state);
    let mut trace = Vec::with_capacity(config.iterations + 1);
    trace.push(IterationTrace {
        iteration: 0,
        report: best_report,
        state: best_state.clone(),
    });

    let brood = config.particles / config.survivors;
    for round in 1..=config.iterations {
        let scale = config.shrink.powi(round as i32);
        let parents = select(&energies, config.survivors);
        // The selected parents carry over into the next population with
        // their cached energies, so the best particle found so far is never
        // lost and only the offspring cost fresh evaluations.
        let mut next_states: Vec<VehicleState> =
            parents.iter().map(|&p| states[p].clone()).collect();
        let mut children = Vec::with_capacity(config.particles);
        for parent in &next_states {
            for _ in 0..brood {
                children.push(perturb(parent, scale, config, &mut rng));
            }
        }
        let child_energies = evaluate(energy, &children);
        evaluations += children.len();
        let mut next_energies: Vec<f64> = parents.iter().map(|&p| energies[p]).collect();
        next_states.append(&mut children);
        next_energies.extend_from_slice(&child_energies);
        states = next_states;
        energies = next_energies;

        let b = argmin(&energies);
        if energies[b] < best_energy {
            best_energy = energies[b];
            best_state = states[b].clone();
            best_report = energy.breakdown(&best_state);
        }
        trace.push(IterationTrace {
            iteration: round,
            report: best_report,
            state: best_state.clone(),
        });
    }

    Ok(SmcResult {
        state: best_state,
        report: best_report,
        trace,
        evaluations,
    })
}

/// Convenience wrapper: builds the scene energy, seeds from the bundle and
/// runs the sampler.
#[allow(clippy::too_many_arguments)]
pub fn fit(
    model: &DeformableVehicleModel,
    lut: &VisibilityLut,
    bundle: &ObservationBundle,
    frame: &PlaneFrame,
    rig: &StereoRig,
    grid: Option<&FreeSpaceGrid>,
    variant: ModelVariant,
    params: EnergyParams,
    config: &SmcConfig,
) -> Result<SmcResult> {
    let energy = SceneEnergy::new(model, lut, bundle, frame, rig, grid, variant, params)?;
    let seed = seed_state(model, bundle, frame)?;
    run(&energy, &seed, config)
}

fn evaluate<E: EnergyModel + ?Sized>(energy: &E, states: &[VehicleState]) -> Vec<f64> {
    states.par_iter().map(|s| energy.energy(s)).collect()
}

fn perturb<R: Rng + ?Sized>(
    base: &VehicleState,
    scale: f64,
    config: &SmcConfig,
    rng: &mut R,
) -> VehicleState {
    fn draw<R: Rng + ?Sized>(rng: &mut R, radius: f64) -> f64 {
        if radius > 0.0 {
            rng.random_range(-radius..radius)
        } else {
            0.0
        }
    }
    let r_t = config.t_radius_m * scale;
    let t = Vector2::new(base.t.x + draw(rng, r_t), base.t.y + draw(rng, r_t));
    let theta = base.theta_deg + draw(rng, config.theta_radius_deg * scale);
    let r_g = config.gamma_radius * scale;
    let gamma = base
        .gamma
        .iter()
        .map(|&g| (g + draw(rng, r_g)).clamp(-config.gamma_limit, config.gamma_limit))
        .collect();
    VehicleState::new(t, theta, gamma)
}

/// Index of the smallest energy; ties go to the lower index.
fn argmin(energies: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..energies.len() {
        if energies[i].total_cmp(&energies[best]) == Ordering::Less {
            best = i;
        }
    }
    best
}

/// Indices of the `k` smallest energies in deterministic order.
fn select(energies: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..energies.len()).collect();
    idx.sort_by(|&a, &b| energies[a].total_cmp(&energies[b]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}
