//! Continuity, semigroup and consistency invariants that need longer runs than the
//! quick properties.

use proptest::prelude::*;
use singchar::action::{ActionConfig, ActionMethod, ActionSolver};
use singchar::characteristics::selection::{SimplexObjective, minimize_on_simplex};
use singchar::characteristics::{
    CharacteristicRun, IntrinsicConfig, MollifiedConfig, hull_distance, integrate_euler, integrate_intrinsic,
    integrate_mollified, minimal_energy_selection,
};
use singchar::fixtures;
use singchar::fourier::TrigPoly;
use singchar::geometry::{Covector, Grid, TorusPoint, Vector, torus_distance};
use singchar::hamiltonian::{HamiltonianModel, hamiltonian_flow, legendre};
use singchar::laxoleinik::{Direction, GridField, KernelTable, LoConfig, LoInput, commutator_at, lax_oleinik};
use singchar::semiconcave::{MinSmoothFn, mollify, superdifferential, superdifferential_with_tol};
use singchar::transport::{CloudMethod, ParticleCloud, evolve_cloud};

fn cfg(cases: u32) -> ProptestConfig {
    ProptestConfig { cases, ..ProptestConfig::default() }
}

fn models() -> Vec<HamiltonianModel> {
    let v1 = TrigPoly::zero(1).with_term(&[1.0], 0.5, 0.2);
    let v2 = TrigPoly::zero(2).with_term(&[1.0, 1.0], 0.3, 0.0).with_term(&[0.0, 1.0], 0.0, -0.4);
    vec![
        HamiltonianModel::mechanical(v1.clone()),
        HamiltonianModel::quartic(v1),
        HamiltonianModel::mechanical(v2.clone()),
        HamiltonianModel::quartic(v2),
    ]
}

/// `sup_v <p, v> - L(x, v)`, maximised by Newton on `v` using only the Lagrangian side.
fn conjugate_of_lagrangian(model: &HamiltonianModel, x: &TorusPoint, p: &Covector) -> f64 {
    let mut v = Vector::zeros(model.dim());
    for _ in 0..100 {
        let lv = legendre(model, x, &v).unwrap();
        let r = *p - lv.p_star;
        if r.norm() < 1e-14 {
            break;
        }
        // d p* / d v is the inverse of H_pp
        v = v + model.h_pp(&x.lift(), &lv.p_star).mul_vec(&r);
    }
    p.dot(&v) - legendre(model, x, &v).unwrap().l
}

/// Points with a kink for each fixture that has one.
fn kinks() -> Vec<(MinSmoothFn, HamiltonianModel, TorusPoint)> {
    let f2 = fixtures::f2();
    let f3 = fixtures::f3();
    let f4 = fixtures::f4();
    let f5 = fixtures::f5();
    vec![
        (f2.phi.clone(), f2.model.clone(), TorusPoint::new1(0.25)),
        (f2.phi.clone(), f2.model.clone(), TorusPoint::new1(0.75)),
        (f3.phi.clone(), f3.model.clone(), TorusPoint::new1(0.5)),
        (f4.phi.clone(), f4.model.clone(), TorusPoint::new2(0.25, 0.1)),
        (f4.phi.clone(), f4.model.clone(), TorusPoint::new2(0.75, 0.6)),
        (f5.phi.clone(), f5.model.clone(), TorusPoint::new1(0.25)),
    ]
}

fn shifted(x: &TorusPoint, dir: &[f64], r: f64) -> TorusPoint {
    let d = x.dim();
    TorusPoint::new(x.lift() + Vector::from_slice(&dir[..d]) * r)
}

proptest! {
    #![proptest_config(cfg(200))]

    #[test]
    fn legendre_is_an_involution(m in 0usize..4, x in prop::array::uniform2(0.0..1.0f64), p in prop::array::uniform2(-2.0..2.0f64)) {
        let model = &models()[m];
        let d = model.dim();
        let x = TorusPoint::from_slice(&x[..d]);
        let p = Vector::from_slice(&p[..d]);
        let h = model.h(&x.lift(), &p);
        prop_assert!((conjugate_of_lagrangian(model, &x, &p) - h).abs() <= 1e-6);
    }
}

proptest! {
    #![proptest_config(cfg(100))]

    #[test]
    fn superdifferential_is_upper_semicontinuous(k in 0usize..6, dir in prop::array::uniform2(-1.0..1.0f64), random in any::<bool>(), base in prop::array::uniform2(0.0..1.0f64)) {
        let (phi, _, kink) = &kinks()[k];
        let x = if random { TorusPoint::from_slice(&base[..phi.dim()]) } else { *kink };
        let limit = superdifferential(phi, &x);
        for j in 20..=45 {
            let xk = shifted(&x, &dir, 2f64.powi(-j));
            for q in superdifferential(phi, &xk).vertices {
                let gap = hull_distance(&limit.vertices, &q);
                // gradients are Lipschitz, so the tail of the sequence is within 1e-8
                if j >= 35 {
                    prop_assert!(gap <= 1e-8, "j = {}: {}", j, gap);
                }
            }
        }
    }

    #[test]
    fn energy_is_lower_semicontinuous_and_collapse_forces_convergence(k in 0usize..6, dir in prop::array::uniform2(-1.0..1.0f64), random in any::<bool>(), base in prop::array::uniform2(0.0..1.0f64)) {
        let (phi, model, kink) = &kinks()[k];
        let x = if random { TorusPoint::from_slice(&base[..phi.dim()]) } else { *kink };
        let limit = minimal_energy_selection(model, phi, &x);
        let mut tail_low = f64::INFINITY;
        for j in 40..=50 {
            let s = minimal_energy_selection(model, phi, &shifted(&x, &dir, 2f64.powi(-j)));
            tail_low = tail_low.min(s.h_value);
            if (s.h_value - limit.h_value).abs() <= 1e-10 {
                prop_assert!((s.p_sharp - limit.p_sharp).norm() <= 1e-6);
            }
        }
        prop_assert!(tail_low >= limit.h_value - 1e-8);
    }

    #[test]
    fn soft_min_gradient_is_near_the_superdifferential(k in 0usize..6, offset in -0.02..0.02f64, sharp in prop::sample::select(vec![1e2, 1e3, 1e4])) {
        let (phi, _, kink) = &kinks()[k];
        let x = shifted(kink, &[1.0, 0.0], offset);
        let soft = mollify(phi, sharp);
        let g = superdifferential(&soft, &x).vertices[0];
        // pieces more than log(k)/k above the minimum carry weight at most 1/k
        let near = superdifferential_with_tol(phi, &x, sharp.ln() / sharp);
        let diam = superdifferential_with_tol(phi, &x, 1.0).diameter();
        prop_assert!(hull_distance(&near.vertices, &g) <= (phi.pieces().len() - 1) as f64 * diam / sharp + 1e-12);
    }
}

/// Squared distance to a fixed vector, for hull projections.
struct Dist(Vec<f64>);

impl SimplexObjective for Dist {
    fn dim(&self) -> usize {
        self.0.len()
    }

    fn eval(&self, z: &[f64]) -> (f64, [f64; 3], [[f64; 3]; 3]) {
        let mut g = [0.0; 3];
        let mut h = [[0.0; 3]; 3];
        let mut v = 0.0;
        for i in 0..self.0.len() {
            g[i] = z[i] - self.0[i];
            h[i][i] = 1.0;
            v += 0.5 * g[i] * g[i];
        }
        (v, g, h)
    }
}

proptest! {
    #![proptest_config(cfg(50))]

    #[test]
    fn calibrated_curves_are_unique_off_the_cut_locus(x in 0.02..0.48f64, noise in -1.0..1.0f64, mirror in any::<bool>()) {
        let f = fixtures::f3();
        let x = TorusPoint::new1(if mirror { 1.0 - x } else { x });
        let sd = superdifferential(&f.phi, &x);
        prop_assert!(sd.is_differentiable());
        let pts: Vec<Vec<f64>> = sd.vertices.iter().map(|q| q.to_vec()).collect();
        let perturbed = sd.vertices[0][0] + noise;
        let proj = minimize_on_simplex(&pts, &Dist(vec![perturbed]));
        let p0 = Vector::from_slice(&proj.point);
        // backward flow is forward flow with reversed momentum, mirrored
        let a = hamiltonian_flow(&f.model, &x, &(sd.vertices[0] * -1.0), 0.2, 400).unwrap();
        let b = hamiltonian_flow(&f.model, &x, &(p0 * -1.0), 0.2, 400).unwrap();
        for (sa, sb) in a.iter().zip(&b) {
            prop_assert!(torus_distance(&sa.x, &sb.x) <= 1e-6);
        }
    }
}

fn pendulum_solver() -> ActionSolver {
    ActionSolver::new(fixtures::pendulum(), ActionConfig::default())
}

proptest! {
    #![proptest_config(cfg(6))]

    #[test]
    fn action_dynamic_programming(x in 0.0..1.0f64, y in 0.0..1.0f64, t1 in 0.2..0.24f64, t2 in 0.2..0.24f64) {
        let solver = pendulum_solver();
        let m = ActionMethod::Shooting;
        let (x, y) = (TorusPoint::new1(x), TorusPoint::new1(y));
        let r = solver.fundamental_solution(&x, &y, t1 + t2, m).unwrap();
        let split = |z: f64| {
            let z = TorusPoint::new1(z);
            solver.fundamental_solution(&x, &z, t1, m).unwrap().value + solver.fundamental_solution(&z, &y, t2, m).unwrap().value
        };
        // no split beats the direct action anywhere on the torus
        let global = (0..128).map(|j| split(j as f64 / 128.0)).fold(f64::INFINITY, f64::min);
        prop_assert!(r.value <= global + 1e-8);
        // 128 midpoints across a window of width 1/8 around where the minimiser is at t1
        let mid = r.minimizer.lift_at(t1)[0];
        let local = (0..128).map(|j| split(mid + (j as f64 - 63.5) / 1024.0)).fold(f64::INFINITY, f64::min);
        prop_assert!(r.value <= local + 1e-8);
        prop_assert!(local - r.value <= 1e-4, "{} vs {}", local, r.value);
    }

    #[test]
    fn minimizers_solve_the_hamiltonian_system(x in 0.0..1.0f64, u in -1.0..1.0f64, t in 0.1..0.45f64) {
        let y = x + 0.9 * ActionConfig::default().lambda * t * u;
        let (x, y) = (TorusPoint::new1(x), TorusPoint::new1(y));
        let shot = pendulum_solver().fundamental_solution(&x, &y, t, ActionMethod::Shooting).unwrap();
        let r = flow_residual(&fixtures::pendulum(), &shot.minimizer);
        prop_assert!(r <= 1e-6, "shooting residual {}", r);
        // broken lines are first order: the residual must shrink as segments are refined
        let discrete = |segments: usize| {
            let s = ActionSolver::new(fixtures::pendulum(), ActionConfig { segments, ..ActionConfig::default() });
            flow_residual(&s.model, &s.fundamental_solution(&x, &y, t, ActionMethod::Discrete).unwrap().minimizer)
        };
        let (coarse, fine) = (discrete(32), discrete(128));
        prop_assert!(fine < coarse, "discrete residual {} -> {}", coarse, fine);
    }
}

/// Largest residual of `x' = H_p`, `p' = -H_x` along a sampled curve with momenta,
/// by fourth order central differences at interior samples.
fn flow_residual(model: &HamiltonianModel, c: &singchar::action::Curve) -> f64 {
    let ps = c.momenta.as_ref().expect("minimiser carries momenta");
    let mut worst: f64 = 0.0;
    for k in 2..c.len() - 2 {
        let dt = c.times[k + 1] - c.times[k];
        let d = |f: &dyn Fn(usize) -> f64| (f(k - 2) - 8.0 * f(k - 1) + 8.0 * f(k + 1) - f(k + 2)) / (12.0 * dt);
        let xd = d(&|i| c.lifts[i][0]);
        let pd = d(&|i| ps[i][0]);
        worst = worst.max((xd - model.h_p(&c.lifts[k], &ps[k])[0]).abs()).max((pd + model.h_x(&c.lifts[k], &ps[k])[0]).abs());
    }
    worst
}

#[test]
fn grid_semigroup_within_twice_the_grid_error() {
    let solver = pendulum_solver();
    let lo = LoConfig::default();
    let grid = Grid::uniform(1, 64);
    let fine = Grid::uniform(1, 256);
    let phi = fixtures::f2_phi();
    let u = GridField::from_fn(&grid, |x| phi.value(x));
    let (t1, t2) = (0.1, 0.15);
    let table = |t: f64| KernelTable::build(&solver, &grid, t, &lo).unwrap();
    let (k1, k2, k12) = (table(t1), table(t2), table(t1 + t2));
    for dir in [Direction::Neg, Direction::Pos] {
        let apply = |k: &KernelTable, v: &GridField| GridField::new(grid.clone(), k.apply(&v.values, dir, &lo, false).0).unwrap();
        let exact = |g: &Grid, t: f64| lax_oleinik(&solver, LoInput::Exact(&phi), g, t, dir, &lo).unwrap().field;
        let inner = apply(&k2, &u);
        let composed = apply(&k1, &inner);
        let direct = apply(&k12, &u);
        // grid error: a single application against the exact operator, and the
        // interpolation error of the intermediate field between the nodes
        let app = inner.sup_distance(&exact(&grid, t2)).max(direct.sup_distance(&exact(&grid, t1 + t2)));
        let e2 = exact(&fine, t2);
        let interp = fine.nodes().zip(&e2.values).map(|(y, v)| (inner.interpolate(&y.lift()) - v).abs()).fold(0.0f64, f64::max);
        let err = app.max(interp);
        let gap = composed.sup_distance(&direct);
        assert!(gap <= 2.0 * err + 1e-12, "{dir:?}: gap {gap:.3e}, grid error {err:.3e}");
    }
}

#[test]
fn commutator_is_nonnegative() {
    let solver = pendulum_solver();
    // a coarse search lattice resolves the optima once t is not small
    let coarse = LoConfig { lattice: 1.0 / 16.0, ..LoConfig::default() };
    for phi in [fixtures::f2_phi(), fixtures::pendulum_u()] {
        for (t, lo, points) in [(0.05, LoConfig::default(), 6), (0.2, coarse.clone(), 2)] {
            for k in 0..points {
                let x = TorusPoint::new1(k as f64 / points as f64 + 0.03);
                let c = commutator_at(&solver, &phi, &x, t, &lo).unwrap();
                assert!(c >= -1e-6, "x = {:?}, t = {t}: {c}", x.coords());
            }
        }
    }
}

fn f3_runs() -> Vec<CharacteristicRun> {
    let f = fixtures::f3();
    let x0 = TorusPoint::new1(0.3);
    let solver = ActionSolver::new(f.model.clone(), ActionConfig::default());
    vec![
        integrate_euler(&f.model, &f.phi, &x0, 1.0, 1.0 / 1024.0).unwrap(),
        integrate_mollified(&f.model, &f.phi, &x0, 1.0, &MollifiedConfig::default()).unwrap(),
        integrate_intrinsic(&solver, &f.phi, &x0, 1.0, &IntrinsicConfig::default()).unwrap(),
    ]
}

#[test]
fn displacement_matches_selected_velocity() {
    // x(t + w) - x(t) against the integral of H_p(x, p#(x)) over windows of width w
    let f = fixtures::f3();
    for run in f3_runs() {
        let c = &run.curve;
        let w = 32;
        let mut worst: f64 = 0.0;
        for k in (0..c.len() - w).step_by(w) {
            let mut integral = 0.0;
            for j in k..k + w {
                let dt = c.times[j + 1] - c.times[j];
                let v0 = f.model.h_p(&c.lifts[j], &run.diagnostics[j].p_sharp)[0];
                let v1 = f.model.h_p(&c.lifts[j + 1], &run.diagnostics[j + 1].p_sharp)[0];
                integral += 0.5 * (v0 + v1) * dt;
            }
            worst = worst.max((c.lifts[k + w][0] - c.lifts[k][0] - integral).abs());
        }
        // one jump of the selection per window costs at most one step of speed 2
        assert!(worst <= 4.0 * run.step, "{:?}: {worst:.3e} with step {:.3e}", run.method, run.step);
    }
}

fn observables(x: &Vector, p: &Covector) -> [f64; 5] {
    let a = 2.0 * std::f64::consts::PI * x[0];
    [a.cos(), a.sin(), p[0], p[0] * p[0], p[0] * a.cos()]
}

#[test]
fn window_averages_are_right_continuous() {
    let f = fixtures::f3();
    let h = 1.0 / 1024.0;
    let run = integrate_euler(&f.model, &f.phi, &TorusPoint::new1(0.3), 4.5, h).unwrap();
    let c = &run.curve;
    let obs = |j: usize| observables(&c.lifts[j], &run.diagnostics[j].p_sharp);
    let ws = [0.2, 0.1, 0.05];
    let mut worst = [0.0f64; 3];
    let mut sel_gap = [0.0f64; 4];
    for s in 0..50 {
        let t0 = 0.05 + 0.08 * s as f64;
        let k0 = (t0 / h).round() as usize;
        let here = obs(k0);
        for (wi, w) in ws.iter().enumerate() {
            let n = (w / h).round() as usize;
            let mut avg = [0.0; 5];
            for j in k0..k0 + n {
                let o = obs(j);
                for i in 0..5 {
                    avg[i] += o[i] / n as f64;
                }
            }
            let gap = (0..5).map(|i| (avg[i] - here[i]).abs()).fold(0.0, f64::max);
            worst[wi] = worst[wi].max(gap);
        }
        for (wi, w) in [0.2, 0.1, 0.05, 4.0 * h].iter().enumerate() {
            let n = (w / h).round() as usize;
            let d = (run.diagnostics[k0 + n].p_sharp - run.diagnostics[k0].p_sharp).norm();
            sel_gap[wi] = sel_gap[wi].max(d);
        }
    }
    assert!(worst[0] >= worst[1] && worst[1] >= worst[2], "window gaps {worst:?}");
    assert!(sel_gap[3] <= 0.05, "selection gaps {sel_gap:?}");
    assert!(sel_gap.windows(2).all(|g| g[1] <= g[0] + 1e-12), "selection gaps {sel_gap:?}");
}

#[test]
fn cloud_absorption_and_right_continuity() {
    let f = fixtures::f3();
    let solver = ActionSolver::new(f.model.clone(), ActionConfig::default());
    let h = 1.0 / 512.0;
    let cloud = ParticleCloud::uniform(1, 200).unwrap();
    let evo = evolve_cloud(&solver, &f.phi, &cloud, 3.0, h, CloudMethod::Euler).unwrap();
    let lambda = solver.cfg.lambda;
    for i in 0..evo.len() {
        let mut entry: Option<f64> = None;
        for k in 0..=evo.steps {
            let d = (TorusPoint::new(evo.lift_at(i, k as f64 * h)).coords()[0] - 0.5).abs();
            match entry {
                None if d <= 2.0 * h => entry = Some(d),
                Some(e) => assert!(d <= e + h * lambda, "particle {i} left the kink at step {k}: {d}"),
                None => {}
            }
        }
    }
    // cloud averages of the observables over [t, t + w] approach the value at t
    let avg_at = |t: f64| {
        let mut a = [0.0; 5];
        for (x, wgt) in evo.positions_at(t).iter().zip(&evo.weights) {
            let s = minimal_energy_selection(&f.model, &f.phi, x);
            let o = observables(&x.lift(), &s.p_sharp);
            for i in 0..5 {
                a[i] += wgt * o[i];
            }
        }
        a
    };
    let mut worst = [0.0f64; 3];
    for t0 in [0.1, 0.4, 0.9, 1.6] {
        let here = avg_at(t0);
        for (wi, w) in [0.2, 0.1, 0.05].iter().enumerate() {
            let n = 16;
            let mut gap = [0.0; 5];
            for j in 0..n {
                let a = avg_at(t0 + w * (j as f64 + 0.5) / n as f64);
                for i in 0..5 {
                    gap[i] += (a[i] - here[i]) / n as f64;
                }
            }
            worst[wi] = worst[wi].max(gap.iter().map(|g| g.abs()).fold(0.0, f64::max));
        }
    }
    assert!(worst[0] >= worst[1] && worst[1] >= worst[2], "window gaps {worst:?}");
}
