//! Minimisation of a smooth convex function of a convex combination of points.
//!
//! Frank-Wolfe with away steps and exact Newton line search; two-point problems are
//! solved directly on the segment.

/// Smooth convex objective on `R^k` with `k <= 3`.
pub trait SimplexObjective {
    fn dim(&self) -> usize;
    /// Value, gradient and Hessian at `z`.
    fn eval(&self, z: &[f64]) -> (f64, [f64; 3], [[f64; 3]; 3]);
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimplexSolution {
    pub weights: Vec<f64>,
    pub point: Vec<f64>,
    pub value: f64,
    pub gap: f64,
    pub iterations: usize,
}

pub const FW_MAX_ITER: usize = 200;
pub const FW_GAP_TOL: f64 = 1e-12;

fn combine(points: &[Vec<f64>], w: &[f64], k: usize) -> Vec<f64> {
    let mut z = vec![0.0; k];
    for (p, wi) in points.iter().zip(w) {
        if *wi != 0.0 {
            for j in 0..k {
                z[j] += wi * p[j];
            }
        }
    }
    z
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn quad(h: &[[f64; 3]; 3], d: &[f64]) -> f64 {
    let k = d.len();
    let mut s = 0.0;
    for i in 0..k {
        for j in 0..k {
            s += d[i] * h[i][j] * d[j];
        }
    }
    s
}

/// Minimise `g(s) = f(z + s d)` over `[0, smax]` for convex `g`.
fn line_search(f: &dyn SimplexObjective, z: &[f64], d: &[f64], smax: f64) -> f64 {
    let at = |s: f64| -> Vec<f64> { z.iter().zip(d).map(|(a, b)| a + s * b).collect() };
    let deriv = |s: f64| -> (f64, f64) {
        let (_, g, h) = f.eval(&at(s));
        (dot(&g[..d.len()], d), quad(&h, d))
    };
    let (d0, _) = deriv(0.0);
    if d0 >= 0.0 {
        return 0.0;
    }
    let (d1, _) = deriv(smax);
    if d1 <= 0.0 {
        return smax;
    }
    let (mut lo, mut hi) = (0.0, smax);
    let tol = 1e-15 * smax.max(1.0);
    let mut s = 0.5 * smax;
    for _ in 0..100 {
        let (g1, g2) = deriv(s);
        if g1 == 0.0 {
            return s;
        }
        if g1 < 0.0 {
            lo = s;
        } else {
            hi = s;
        }
        let newton = if g2 > 0.0 { s - g1 / g2 } else { f64::NAN };
        // a converged Newton step may land on the bracket end it came from
        if newton.is_finite() && (newton - s).abs() <= tol {
            return newton.clamp(lo, hi);
        }
        if hi - lo <= tol {
            return 0.5 * (lo + hi);
        }
        s = if newton.is_finite() && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
    }
    s
}

/// Minimiser of `w -> f(sum_i w_i points_i)` over the probability simplex.
pub fn minimize_on_simplex(points: &[Vec<f64>], f: &dyn SimplexObjective) -> SimplexSolution {
    let n = points.len();
    let k = f.dim();
    assert!(n >= 1, "at least one point required");
    if n == 1 {
        let (v, _, _) = f.eval(&points[0]);
        return SimplexSolution { weights: vec![1.0], point: points[0].clone(), value: v, gap: 0.0, iterations: 0 };
    }
    if n == 2 {
        let d: Vec<f64> = (0..k).map(|j| points[1][j] - points[0][j]).collect();
        let s = line_search(f, &points[0], &d, 1.0);
        let w = vec![1.0 - s, s];
        let z: Vec<f64> = (0..k).map(|j| points[0][j] + s * d[j]).collect();
        let (v, g, _) = f.eval(&z);
        let scores: Vec<f64> = points.iter().map(|p| dot(&g[..k], p)).collect();
        let gap = dot(&g[..k], &z) - scores.iter().copied().fold(f64::INFINITY, f64::min);
        return SimplexSolution { weights: w, point: z, value: v, gap: gap.max(0.0), iterations: 1 };
    }
    // start at the best vertex, first index on ties
    let vals: Vec<f64> = points.iter().map(|p| f.eval(p).0).collect();
    let mut start = 0;
    for i in 1..n {
        if vals[i] < vals[start] {
            start = i;
        }
    }
    let mut w = vec![0.0; n];
    w[start] = 1.0;
    let mut z = points[start].clone();
    let mut gap = f64::INFINITY;
    let mut it = 0;
    while it < FW_MAX_ITER {
        let (_, g, _) = f.eval(&z);
        let g = &g[..k];
        let scores: Vec<f64> = points.iter().map(|p| dot(g, p)).collect();
        let mut s_idx = 0;
        for i in 1..n {
            if scores[i] < scores[s_idx] {
                s_idx = i;
            }
        }
        let mut v_idx = usize::MAX;
        for i in 0..n {
            if w[i] > 0.0 && (v_idx == usize::MAX || scores[i] > scores[v_idx]) {
                v_idx = i;
            }
        }
        let gz = dot(g, &z);
        gap = gz - scores[s_idx];
        if gap <= FW_GAP_TOL {
            break;
        }
        it += 1;
        let away_gap = scores[v_idx] - gz;
        if gap >= away_gap {
            let d: Vec<f64> = (0..k).map(|j| points[s_idx][j] - z[j]).collect();
            let s = line_search(f, &z, &d, 1.0);
            for wi in w.iter_mut() {
                *wi *= 1.0 - s;
            }
            w[s_idx] += s;
        } else {
            let wv = w[v_idx];
            let smax = if wv >= 1.0 { f64::INFINITY } else { wv / (1.0 - wv) };
            let d: Vec<f64> = (0..k).map(|j| z[j] - points[v_idx][j]).collect();
            let s = line_search(f, &z, &d, smax.min(1e12));
            for wi in w.iter_mut() {
                *wi *= 1.0 + s;
            }
            w[v_idx] -= s;
            if s >= smax {
                w[v_idx] = 0.0;
            }
        }
        for wi in w.iter_mut() {
            if *wi < 1e-17 {
                *wi = 0.0;
            }
        }
        let tot: f64 = w.iter().sum();
        for wi in w.iter_mut() {
            *wi /= tot;
        }
        z = combine(points, &w, k);
    }
    let (v, _, _) = f.eval(&z);
    let fw = SimplexSolution { weights: w, point: z, value: v, gap: gap.max(0.0), iterations: it };
    if fw.gap <= FW_GAP_TOL {
        return fw;
    }
    // away steps can stall when the optimal face is thin; solve face by face instead
    match face_search(points, f) {
        Some(e) if e.value <= fw.value => SimplexSolution { iterations: it, ..e },
        _ => fw,
    }
}

/// Solve `a x = b` for `m <= 3` by elimination with partial pivoting.
fn solve_small(mut a: [[f64; 3]; 3], mut b: [f64; 3], m: usize) -> Option<[f64; 3]> {
    let scale = (0..m).flat_map(|i| (0..m).map(move |j| (i, j))).map(|(i, j)| a[i][j].abs()).fold(0.0, f64::max);
    for c in 0..m {
        let piv = (c..m).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[piv][c].abs() <= 1e-13 * scale {
            return None;
        }
        a.swap(c, piv);
        b.swap(c, piv);
        for r in c + 1..m {
            let q = a[r][c] / a[c][c];
            for j in c..m {
                a[r][j] -= q * a[c][j];
            }
            b[r] -= q * b[c];
        }
    }
    let mut x = [0.0; 3];
    for c in (0..m).rev() {
        let s: f64 = (c + 1..m).map(|j| a[c][j] * x[j]).sum();
        x[c] = (b[c] - s) / a[c][c];
    }
    Some(x)
}

/// Minimiser of `f` on the affine hull of `face`, as barycentric weights.
fn face_minimum(points: &[Vec<f64>], face: &[usize], f: &dyn SimplexObjective) -> Option<Vec<f64>> {
    let k = f.dim();
    let m = face.len() - 1;
    let a0 = &points[face[0]];
    let cols: Vec<Vec<f64>> = face[1..].iter().map(|&i| (0..k).map(|j| points[i][j] - a0[j]).collect()).collect();
    let at = |lam: &[f64; 3]| -> Vec<f64> { (0..k).map(|j| a0[j] + (0..m).map(|c| lam[c] * cols[c][j]).sum::<f64>()).collect() };
    let mut lam = [0.0; 3];
    for _ in 0..100 {
        let z = at(&lam);
        let (v, g, h) = f.eval(&z);
        let mut grad = [0.0; 3];
        let mut hess = [[0.0; 3]; 3];
        for c in 0..m {
            grad[c] = dot(&g[..k], &cols[c]);
            for e in 0..m {
                hess[c][e] = (0..k).map(|i| cols[c][i] * (0..k).map(|j| h[i][j] * cols[e][j]).sum::<f64>()).sum();
            }
        }
        let step = solve_small(hess, grad, m)?;
        // damped Newton: halve until the value does not increase
        let mut t = 1.0;
        let mut next = lam;
        for _ in 0..60 {
            for c in 0..m {
                next[c] = lam[c] - t * step[c];
            }
            if f.eval(&at(&next)).0 <= v {
                break;
            }
            t *= 0.5;
        }
        let moved = (0..m).map(|c| (next[c] - lam[c]).abs()).fold(0.0, f64::max);
        lam = next;
        if moved <= 1e-15 {
            break;
        }
    }
    let mut w = vec![1.0 - lam[..m].iter().sum::<f64>()];
    w.extend_from_slice(&lam[..m]);
    Some(w)
}

/// Exhaustive search over faces with at most `dim + 1` vertices (enough by Caratheodory).
fn face_search(points: &[Vec<f64>], f: &dyn SimplexObjective) -> Option<SimplexSolution> {
    let n = points.len();
    let k = f.dim();
    let mut best: Option<SimplexSolution> = None;
    let mut face = vec![];
    fn subsets(n: usize, size: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == size {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            subsets(n, size, i + 1, cur, out);
            cur.pop();
        }
    }
    let mut faces = vec![];
    for size in 1..=(k + 1).min(n) {
        subsets(n, size, 0, &mut face, &mut faces);
    }
    for face in faces {
        let Some(fw) = face_minimum(points, &face, f) else { continue };
        if fw.iter().any(|&x| x < -1e-12) {
            continue;
        }
        let mut w = vec![0.0; n];
        let tot: f64 = fw.iter().map(|x| x.max(0.0)).sum();
        for (i, x) in face.iter().zip(&fw) {
            w[*i] = x.max(0.0) / tot;
        }
        let z = combine(points, &w, k);
        let (v, g, _) = f.eval(&z);
        let gap = dot(&g[..k], &z) - points.iter().map(|p| dot(&g[..k], p)).fold(f64::INFINITY, f64::min);
        if best.as_ref().is_none_or(|b| v < b.value) {
            best = Some(SimplexSolution { weights: w, point: z, value: v, gap: gap.max(0.0), iterations: 0 });
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Quad {
        c: Vec<f64>,
    }

    impl SimplexObjective for Quad {
        fn dim(&self) -> usize {
            self.c.len()
        }
        fn eval(&self, z: &[f64]) -> (f64, [f64; 3], [[f64; 3]; 3]) {
            let mut g = [0.0; 3];
            let mut h = [[0.0; 3]; 3];
            let mut v = 0.0;
            for i in 0..self.c.len() {
                v += 0.5 * (z[i] - self.c[i]).powi(2);
                g[i] = z[i] - self.c[i];
                h[i][i] = 1.0;
            }
            (v, g, h)
        }
    }

    #[test]
    fn projection_onto_triangle() {
        let pts = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]];
        let s = minimize_on_simplex(&pts, &Quad { c: vec![1.0, 1.0] });
        assert!((s.point[0] - 0.5).abs() < 1e-9 && (s.point[1] - 0.5).abs() < 1e-9);
        let s = minimize_on_simplex(&pts, &Quad { c: vec![0.2, 0.3] });
        assert!((s.point[0] - 0.2).abs() < 1e-9 && (s.point[1] - 0.3).abs() < 1e-9);
        assert!((s.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn segment_newton() {
        let pts = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let s = minimize_on_simplex(&pts, &Quad { c: vec![0.0, 0.0] });
        assert!((s.point[0] - 0.5).abs() < 1e-15 && (s.value - 0.25).abs() < 1e-15);
    }

    struct Quartic;

    impl SimplexObjective for Quartic {
        fn dim(&self) -> usize {
            2
        }

        fn eval(&self, z: &[f64]) -> (f64, [f64; 3], [[f64; 3]; 3]) {
            let r2 = z[0] * z[0] + z[1] * z[1];
            let mut h = [[0.0; 3]; 3];
            for i in 0..2 {
                for j in 0..2 {
                    h[i][j] = 2.0 * z[i] * z[j] + if i == j { r2 + 1.0 } else { 0.0 };
                }
            }
            (0.25 * r2 * r2 + 0.5 * r2, [z[0] * (r2 + 1.0), z[1] * (r2 + 1.0), 0.0], h)
        }
    }

    #[test]
    fn thin_face_falls_back_to_face_search() {
        let pts = vec![
            vec![-0.3329018312743228, 0.8976221484591065],
            vec![1.0912260469669999, -2.3554588294529015],
            vec![0.4245214948620841, 2.2995164831050126],
            vec![-0.8275595797555453, 1.9568893779140701],
        ];
        let s = minimize_on_simplex(&pts, &Quartic);
        assert!(s.gap < 1e-10, "{s:?}");
        // optimum lies on the edge between the second and fourth points
        assert!(s.weights[0] < 1e-12 && s.weights[2] < 1e-12);
    }

    #[test]
    fn segment_newton_converges_on_quartic() {
        // Newton lands exactly on the lower bracket end here
        let pts = vec![vec![-0.8858517759849112, 1.0213609853679024], vec![-0.8244058223383712, -0.6862262108155797]];
        let s = minimize_on_simplex(&pts, &Quartic);
        assert!(s.gap < 1e-12, "{s:?}");
        assert!((s.weights[1] - 0.616001058895348).abs() < 1e-12);
    }
}
