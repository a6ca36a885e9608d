//! Particle clouds pushed along singular characteristics and the continuity equation they satisfy.
//!
//! Every particle follows its own run. Euler particles that stop moving (a step that leaves
//! the lift bitwise unchanged) are stored only up to that step: the scheme is deterministic,
//! so every later step repeats it exactly.

use crate::action::{ActionSolver, Curve};
use crate::characteristics::{
    CharacteristicRun, IntrinsicConfig, RunMethod, band_selection, edi_defects, integrate_intrinsic,
};
use crate::error::{Error, Result};
use crate::geometry::{Covector, TorusPoint, Vector, torus_distance};
use crate::hamiltonian::HamiltonianModel;
use crate::semiconcave::{MinSmoothFn, superdifferential_with_tol};
use crate::singularity::{SINGULAR_TOL, cut_time_calibration};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use std::io::Write;

/// Particles per unit of parallel work; sums are reduced chunk by chunk in a fixed order.
const CHUNK: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParticleCloud {
    pub positions: Vec<TorusPoint>,
    pub weights: Vec<f64>,
}

impl ParticleCloud {
    pub fn new(positions: Vec<TorusPoint>, weights: Vec<f64>) -> Result<Self> {
        if positions.is_empty() || positions.len() != weights.len() {
            return Err(Error::precondition("particle_cloud", "positions and weights must be nonempty and aligned"));
        }
        if weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::precondition("particle_cloud", "weights must be positive"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::precondition("particle_cloud", format!("weights sum to {total}")));
        }
        let d = positions[0].dim();
        if positions.iter().any(|p| p.dim() != d) {
            return Err(Error::precondition("particle_cloud", "mixed dimensions"));
        }
        Ok(ParticleCloud { positions, weights })
    }

    /// `n` equal weights on the lattice `k / n` (or an `m x m` lattice with `m^2 = n`).
    pub fn uniform(dim: usize, n: usize) -> Result<Self> {
        let positions: Vec<TorusPoint> = match dim {
            1 => (0..n).map(|k| TorusPoint::new1(k as f64 / n as f64)).collect(),
            2 => {
                let m = (n as f64).sqrt().round() as usize;
                if m * m != n {
                    return Err(Error::precondition("particle_cloud", "a planar lattice needs a square count"));
                }
                (0..n).map(|k| TorusPoint::new2((k / m) as f64 / m as f64, (k % m) as f64 / m as f64)).collect()
            }
            _ => return Err(Error::precondition("particle_cloud", "dimension must be 1 or 2")),
        };
        Self::equal_weights(positions)
    }

    /// `n` equal weights at uniform pseudo-random positions.
    pub fn random(dim: usize, n: usize, seed: u64) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::precondition("particle_cloud", "dimension must be 1 or 2"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let positions = (0..n)
            .map(|_| {
                let c: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
                TorusPoint::from_slice(&c)
            })
            .collect();
        Self::equal_weights(positions)
    }

    fn equal_weights(positions: Vec<TorusPoint>) -> Result<Self> {
        let n = positions.len();
        if n == 0 {
            return Err(Error::precondition("particle_cloud", "empty cloud"));
        }
        // the last weight absorbs the rounding so the total is exactly representable
        let w = 1.0 / n as f64;
        let mut weights = vec![w; n];
        let rest: f64 = weights[..n - 1].iter().sum();
        weights[n - 1] = 1.0 - rest;
        Self::new(positions, weights)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.positions[0].dim()
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CloudMethod {
    Euler,
    Intrinsic,
}

/// Trajectories of a cloud sampled every `step` up to `t_end`.
#[derive(Clone, Debug)]
pub struct CloudEvolution {
    pub dim: usize,
    pub t_end: f64,
    pub step: f64,
    pub steps: usize,
    pub method: CloudMethod,
    pub weights: Vec<f64>,
    /// Lifts at steps `0..len`; the last one holds for all later steps.
    paths: Vec<Vec<Vector>>,
    /// Largest displacement per unit time over all particles.
    pub speed_bound: f64,
}

impl CloudEvolution {
    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn time(&self, k: usize) -> f64 {
        if k >= self.steps { self.t_end } else { k as f64 * self.step }
    }

    pub fn lift(&self, i: usize, k: usize) -> Vector {
        let p = &self.paths[i];
        p[k.min(p.len() - 1)]
    }

    /// Step from which particle `i` no longer moves, if it comes to rest.
    pub fn rest_step(&self, i: usize) -> Option<usize> {
        let n = self.paths[i].len() - 1;
        (n < self.steps).then_some(n)
    }

    /// Number of steps during which particle `i` moves.
    fn active_steps(&self, i: usize) -> usize {
        (self.paths[i].len() - 1).min(self.steps)
    }

    pub fn lift_at(&self, i: usize, t: f64) -> Vector {
        let s = (t / self.step).clamp(0.0, self.steps as f64);
        let k = (s.floor() as usize).min(self.steps.saturating_sub(1));
        let f = s - k as f64;
        let (a, b) = (self.lift(i, k), self.lift(i, k + 1));
        a + (b - a) * f
    }

    pub fn positions_at(&self, t: f64) -> Vec<TorusPoint> {
        (0..self.len()).map(|i| TorusPoint::new(self.lift_at(i, t))).collect()
    }

    /// Full run of particle `i`, with per-sample selections.
    pub fn run(&self, model: &HamiltonianModel, phi: &MinSmoothFn, i: usize) -> Result<CharacteristicRun> {
        let times: Vec<f64> = (0..=self.steps).map(|k| self.time(k)).collect();
        let lifts = (0..=self.steps).map(|k| self.lift(i, k)).collect();
        let method = match self.method {
            CloudMethod::Euler => RunMethod::Euler,
            CloudMethod::Intrinsic => RunMethod::Intrinsic,
        };
        Ok(CharacteristicRun::new(model, phi, Curve::from_lifts(times, lifts, None)?, method, self.step))
    }

    /// CSV `t,particle_id,x_0[,x_1],weight` at each of `times`.
    pub fn write_snapshots_csv<W: Write>(&self, w: W, times: &[f64]) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut head = vec!["t".to_string(), "particle_id".into()];
        head.extend((0..self.dim).map(|a| format!("x_{a}")));
        head.push("weight".into());
        wr.write_record(&head).map_err(|e| Error::Io(e.to_string()))?;
        for &t in times {
            for (i, x) in self.positions_at(t).iter().enumerate() {
                let mut row = vec![t.to_string(), i.to_string()];
                row.extend(x.coords().iter().map(|c| c.to_string()));
                row.push(self.weights[i].to_string());
                wr.write_record(&row).map_err(|e| Error::Io(e.to_string()))?;
            }
        }
        wr.flush()?;
        Ok(())
    }
}

fn euler_path(model: &HamiltonianModel, phi: &MinSmoothFn, x0: &TorusPoint, steps: usize, dt: f64) -> Vec<Vector> {
    let mut x = x0.lift();
    let mut out = vec![x];
    for _ in 0..steps {
        let s = band_selection(model, phi, &TorusPoint::new(x), dt);
        let next = x + model.h_p(&x, &s.p_sharp) * dt;
        if next == x {
            break;
        }
        x = next;
        out.push(x);
    }
    out
}

/// Push every particle along its own run: band-selection Euler steps of size `h`, or the
/// intrinsic construction with partition width `h`.
pub fn evolve_cloud(
    solver: &ActionSolver,
    phi: &MinSmoothFn,
    cloud: &ParticleCloud,
    t_end: f64,
    h: f64,
    method: CloudMethod,
) -> Result<CloudEvolution> {
    if !(h > 0.0) || !(t_end > 0.0) {
        return Err(Error::precondition("evolve_cloud", "step and horizon must be positive"));
    }
    if phi.dim() != cloud.dim() {
        return Err(Error::precondition("evolve_cloud", "dimension mismatch"));
    }
    let model = &solver.model;
    let steps = (t_end / h - 1e-9).ceil().max(1.0) as usize;
    let dt = t_end / steps as f64;
    let paths: Vec<Vec<Vector>> = match method {
        CloudMethod::Euler => cloud.positions.par_iter().map(|x| euler_path(model, phi, x, steps, dt)).collect(),
        CloudMethod::Intrinsic => {
            let cfg = IntrinsicConfig { widths: vec![dt], ..IntrinsicConfig::default() };
            cloud
                .positions
                .par_iter()
                .map(|x| {
                    let run = integrate_intrinsic(solver, phi, x, t_end, &cfg)?;
                    Ok((0..=steps).map(|k| run.curve.lift_at(k as f64 * dt)).collect())
                })
                .collect::<Result<_>>()?
        }
    };
    let mut speed_bound = 0.0f64;
    for p in &paths {
        for w in p.windows(2) {
            speed_bound = speed_bound.max((w[1] - w[0]).norm() / dt);
        }
    }
    Ok(CloudEvolution { dim: cloud.dim(), t_end, step: dt, steps, method, weights: cloud.weights.clone(), paths, speed_bound })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parity {
    Cos,
    Sin,
}

/// `cos` or `sin` of `2 pi <k, x>`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestFunction {
    pub freq: [i64; 2],
    pub parity: Parity,
}

impl TestFunction {
    fn phase(&self, x: &Vector) -> (f64, Vector) {
        let mut k = Vector::zeros(x.dim());
        let mut arg = 0.0;
        for a in 0..x.dim() {
            k[a] = TAU * self.freq[a] as f64;
            arg += k[a] * x[a];
        }
        (arg, k)
    }

    pub fn value(&self, x: &Vector) -> f64 {
        let (a, _) = self.phase(x);
        match self.parity {
            Parity::Cos => a.cos(),
            Parity::Sin => a.sin(),
        }
    }

    pub fn grad(&self, x: &Vector) -> Covector {
        let (a, k) = self.phase(x);
        match self.parity {
            Parity::Cos => k * (-a.sin()),
            Parity::Sin => k * a.cos(),
        }
    }
}

/// The first `count` Fourier modes, cosine and sine alternating.
pub fn fourier_tests(dim: usize, count: usize) -> Vec<TestFunction> {
    let freqs: Vec<[i64; 2]> = if dim == 1 {
        (1..).map(|k| [k, 0]).take(count.div_ceil(2)).collect()
    } else {
        let mut f = vec![];
        let mut r = 1i64;
        while f.len() < count.div_ceil(2) {
            for (a, b) in [(r, 0), (0, r), (r, r), (r, -r)] {
                f.push([a, b]);
            }
            r += 1;
        }
        f
    };
    let mut out = vec![];
    for k in freqs {
        for parity in [Parity::Cos, Parity::Sin] {
            if out.len() < count {
                out.push(TestFunction { freq: k, parity });
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OneSidedSample {
    pub t: f64,
    /// Largest gap between the forward difference of `<g, mu>` and `<Dg . H_p(x, p#), mu>`.
    pub max_gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CeReport {
    /// Largest `|<g, mu_{t+h}> - <g, mu_t> - h <Dg . H_p(x, p#(x)), mu_{t+h/2}>| / h`.
    pub max_residual: f64,
    /// Per test function.
    pub per_test: Vec<f64>,
    /// Time of the worst step.
    pub worst_t: f64,
    /// The same residual with the field replaced by the velocity of each segment.
    pub segment_residual: f64,
    pub one_sided: Vec<OneSidedSample>,
    pub tests: Vec<TestFunction>,
}

/// Chunked, order-fixed sum over particles of a per-particle vector.
fn reduce_particles(n: usize, len: usize, f: impl Fn(usize, &mut [f64]) + Sync) -> Vec<f64> {
    let chunks: Vec<Vec<f64>> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![0.0; len];
            for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                f(i, &mut acc);
            }
            acc
        })
        .collect();
    let mut out = vec![0.0; len];
    for c in chunks {
        for (o, v) in out.iter_mut().zip(c) {
            *o += v;
        }
    }
    out
}

/// Weak form of the continuity equation over consecutive steps.
///
/// The field is the band selection of width `step`, the one the Euler particles follow.
/// Particles at rest contribute nothing. The one-sided check compares forward differences
/// over one step with the field at five evenly spaced times.
pub fn ce_residual(model: &HamiltonianModel, phi: &MinSmoothFn, evo: &CloudEvolution, tests: &[TestFunction]) -> CeReport {
    let nt = tests.len();
    let steps = evo.steps;
    let h = evo.step;
    // layout: [step][test][field | segment]
    let sums = reduce_particles(evo.len(), steps * nt * 2, |i, acc| {
        let w = evo.weights[i];
        for k in 0..evo.active_steps(i) {
            let (a, b) = (evo.lift(i, k), evo.lift(i, k + 1));
            let m = (a + b) * 0.5;
            let sel = band_selection(model, phi, &TorusPoint::new(m), h);
            let v = model.h_p(&m, &sel.p_sharp);
            for (j, g) in tests.iter().enumerate() {
                let dg = g.value(&b) - g.value(&a);
                let gm = g.grad(&m);
                acc[(k * nt + j) * 2] += w * (dg - h * gm.dot(&v));
                acc[(k * nt + j) * 2 + 1] += w * (dg - gm.dot(&(b - a)));
            }
        }
    });
    let mut max_residual = 0.0f64;
    let mut segment_residual = 0.0f64;
    let mut per_test = vec![0.0f64; nt];
    let mut worst_t = 0.0;
    for k in 0..steps {
        for j in 0..nt {
            let r = sums[(k * nt + j) * 2].abs() / h;
            if r > max_residual {
                max_residual = r;
                worst_t = evo.time(k);
            }
            per_test[j] = per_test[j].max(r);
            segment_residual = segment_residual.max(sums[(k * nt + j) * 2 + 1].abs() / h);
        }
    }
    let one_sided = (0..5)
        .map(|s| {
            let k = (s * steps) / 5;
            let acc = reduce_particles(evo.len(), nt, |i, acc| {
                let w = evo.weights[i];
                let (a, b) = (evo.lift(i, k), evo.lift(i, k + 1));
                let sel = band_selection(model, phi, &TorusPoint::new(a), h);
                let v = model.h_p(&a, &sel.p_sharp);
                for (j, g) in tests.iter().enumerate() {
                    acc[j] += w * ((g.value(&b) - g.value(&a)) / h - g.grad(&a).dot(&v));
                }
            });
            OneSidedSample { t: evo.time(k), max_gap: acc.iter().fold(0.0f64, |m, v| m.max(v.abs())) }
        })
        .collect();
    CeReport { max_residual, per_test, worst_t, segment_residual, one_sided, tests: tests.to_vec() }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EdiAggregate {
    /// `<phi, mu_T> - <phi, mu_0>`.
    pub lhs: f64,
    /// `int_0^T <L(x, H_p(x, p#)) + H(x, p#), mu_t> dt`.
    pub rhs: f64,
    pub gap: f64,
    /// Largest per-particle gap per unit time.
    pub max_particle_residual: f64,
}

/// Cloud average of the energy dissipation identity.
pub fn edi_aggregate(model: &HamiltonianModel, phi: &MinSmoothFn, evo: &CloudEvolution) -> Result<EdiAggregate> {
    let n = evo.len();
    let per: Vec<(f64, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let active = evo.active_steps(i);
            let rest = evo.steps - active;
            // the active segments plus, if the particle rests, one representative resting segment
            let len = active + 1 + usize::from(rest > 0);
            let times: Vec<f64> = (0..len).map(|k| k as f64 * evo.step).collect();
            let lifts: Vec<Vector> = (0..len).map(|k| evo.lift(i, k)).collect();
            let curve = Curve::from_lifts(times, lifts, None)?;
            let defects = edi_defects(model, phi, &curve, evo.step);
            let mut total: f64 = defects[..active].iter().sum();
            if rest > 0 {
                total += defects[active] * rest as f64;
            }
            let lhs = phi.value(&TorusPoint::new(evo.lift(i, evo.steps))) - phi.value(&TorusPoint::new(evo.lift(i, 0)));
            Ok((lhs, total))
        })
        .collect::<Result<_>>()?;
    let (mut lhs, mut defect) = (0.0, 0.0);
    let mut worst = 0.0f64;
    for (i, (l, d)) in per.iter().enumerate() {
        lhs += evo.weights[i] * l;
        defect += evo.weights[i] * d;
        worst = worst.max(d.abs() / evo.t_end);
    }
    let rhs = lhs - defect;
    Ok(EdiAggregate { lhs, rhs, gap: (lhs - rhs).abs(), max_particle_residual: worst })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Region {
    Cut,
    SingClosure,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MassReport {
    pub region: Region,
    pub delta: f64,
    /// Detected grid nodes the neighbourhood is built from.
    pub nodes: usize,
    pub times: Vec<f64>,
    pub masses: Vec<f64>,
    /// Weight within `step * speed_bound` of the neighbourhood boundary.
    pub allowances: Vec<f64>,
    /// Times at which the mass fell by more than the allowance.
    pub violations: Vec<f64>,
    pub nondecreasing: bool,
}

fn detect_nodes(model: &HamiltonianModel, phi: &MinSmoothFn, region: Region, resolution: usize, step: f64) -> Result<Vec<TorusPoint>> {
    let d = phi.dim();
    let nodes: Vec<TorusPoint> = if d == 1 {
        (0..resolution).map(|k| TorusPoint::new1(k as f64 / resolution as f64)).collect()
    } else {
        (0..resolution * resolution).map(|k| TorusPoint::new2((k / resolution) as f64 / resolution as f64, (k % resolution) as f64 / resolution as f64)).collect()
    };
    let spacing = 1.0 / resolution as f64;
    let found: Vec<Option<TorusPoint>> = nodes
        .par_iter()
        .map(|x| {
            // a kink within one spacing makes the competing piece nearly active
            let lip = phi.local(x).grads.iter().map(|g| g.norm()).fold(0.0f64, f64::max);
            let eps = (2.0 * lip * spacing * (d as f64).sqrt()).max(phi.eps_act());
            let near_kink = superdifferential_with_tol(phi, x, eps).diameter() > SINGULAR_TOL;
            let hit = match region {
                Region::SingClosure => near_kink,
                Region::Cut => near_kink || cut_time_calibration(model, phi, x, 4.0 * step, 64)? <= step,
            };
            Ok(hit.then_some(*x))
        })
        .collect::<Result<_>>()?;
    Ok(found.into_iter().flatten().collect())
}

fn distance_to_set(x: &TorusPoint, set: &[TorusPoint]) -> f64 {
    set.iter().map(|y| torus_distance(x, y)).fold(f64::INFINITY, f64::min)
}

/// Mass of the `delta`-neighbourhood of the detected cut or singular nodes at each of `times`.
pub fn mass_monotonicity(
    model: &HamiltonianModel,
    phi: &MinSmoothFn,
    evo: &CloudEvolution,
    region: Region,
    times: &[f64],
    delta: f64,
    resolution: usize,
) -> Result<MassReport> {
    let set = detect_nodes(model, phi, region, resolution, evo.step)?;
    let band = evo.step * evo.speed_bound;
    let mut masses = vec![];
    let mut allowances = vec![];
    for &t in times {
        let pos = evo.positions_at(t);
        let per: Vec<(f64, f64)> = pos
            .par_iter()
            .map(|x| {
                let dist = distance_to_set(x, &set);
                (if dist < delta { 1.0 } else { 0.0 }, if (dist - delta).abs() <= band { 1.0 } else { 0.0 })
            })
            .collect();
        let (mut m, mut a) = (0.0, 0.0);
        for (i, (inside, edge)) in per.iter().enumerate() {
            m += evo.weights[i] * inside;
            a += evo.weights[i] * edge;
        }
        masses.push(m);
        allowances.push(a);
    }
    let mut violations = vec![];
    for j in 1..masses.len() {
        if masses[j] < masses[j - 1] - (allowances[j] + allowances[j - 1]) {
            violations.push(times[j]);
        }
    }
    let nondecreasing = violations.is_empty();
    Ok(MassReport { region, delta, nodes: set.len(), times: times.to_vec(), masses, allowances, violations, nondecreasing })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnergyAverages {
    pub times: Vec<f64>,
    /// `<H(x, p#(x)), mu_t>`.
    pub averages: Vec<f64>,
    /// Largest increase per unit time between consecutive entries.
    pub max_rate: f64,
}

pub fn energy_averages(model: &HamiltonianModel, phi: &MinSmoothFn, evo: &CloudEvolution, times: &[f64]) -> EnergyAverages {
    let averages: Vec<f64> = times
        .iter()
        .map(|&t| {
            let pos = evo.positions_at(t);
            let e: Vec<f64> = pos.par_iter().map(|x| band_selection(model, phi, x, evo.step).h_value).collect();
            e.iter().zip(&evo.weights).map(|(e, w)| e * w).sum()
        })
        .collect();
    let mut max_rate = f64::NEG_INFINITY;
    for j in 1..times.len() {
        max_rate = max_rate.max((averages[j] - averages[j - 1]) / (times[j] - times[j - 1]));
    }
    EnergyAverages { times: times.to_vec(), averages, max_rate }
}
