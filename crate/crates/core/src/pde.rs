//! Periodic cell problems on the pixel grid.
//!
//! Pixels are cell-centered. The discrete gradient `D = (Dx, Dy)` takes
//! forward differences onto the edges to the right (`x`) and above (`y`) of
//! each pixel; its adjoint `Dᵀ` is the negative backward-difference
//! divergence. Edge coefficients are harmonic means of the adjacent pixels,
//! which makes laminates exactly solvable on the grid. All quantities use unit
//! pixel spacing, so gradients of the correctors are dimensionless.
//!
//! The corrector problem `Dᵀ(a (e_i + Dφ_i)) = 0` is solved by conjugate
//! gradients preconditioned with the inverse of `mean(a)·DᵀD`, which is
//! diagonal in Fourier space. Both directions share one complex FFT per
//! iteration: the preconditioner symbol is real and even, so packing the two
//! residuals as real and imaginary parts preconditions them independently.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft::{laplacian_symbol, Fft2};
use crate::fieldgen::{Axis, ScalarField};

pub const DEFAULT_TOL: f64 = 1e-9;

/// Default iteration cap, `20·n`.
pub fn default_max_iter(n: usize) -> usize {
    20 * n
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeCoefficients {
    pub n: usize,
    /// Coefficient on the edge between pixel `(ix, iy)` and `(ix+1, iy)`.
    pub ax: Vec<f64>,
    /// Coefficient on the edge between pixel `(ix, iy)` and `(ix, iy+1)`.
    pub ay: Vec<f64>,
}

impl EdgeCoefficients {
    pub fn along(&self, axis: Axis) -> &[f64] {
        match axis {
            Axis::X => &self.ax,
            Axis::Y => &self.ay,
        }
    }
}

fn harmonic(a: f64, b: f64) -> f64 {
    2.0 * a * b / (a + b)
}

pub fn edge_coefficients(field: &ScalarField) -> EdgeCoefficients {
    let n = field.n();
    let v = &field.values;
    let mut ax = vec![0.0; n * n];
    let mut ay = vec![0.0; n * n];
    for iy in 0..n {
        let row = iy * n;
        let up = ((iy + 1) % n) * n;
        for ix in 0..n {
            let right = row + (ix + 1) % n;
            ax[row + ix] = harmonic(v[row + ix], v[right]);
            ay[row + ix] = harmonic(v[row + ix], v[up + ix]);
        }
    }
    EdgeCoefficients { n, ax, ay }
}

/// Edge-based discrete gradient of a periodic potential.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeGradient {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl EdgeGradient {
    pub fn along(&self, axis: Axis) -> &[f64] {
        match axis {
            Axis::X => &self.x,
            Axis::Y => &self.y,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrectorSolution {
    pub n: usize,
    pub direction: Axis,
    pub grad_phi: EdgeGradient,
    /// `‖b − Aφ‖ / ‖b‖` of the returned iterate (0 when `b = 0`).
    pub residual_rel: f64,
    pub iterations: usize,
    /// `½φᵀAφ − bᵀφ` after each iteration.
    pub energy_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuxSolution {
    pub n: usize,
    pub direction: Axis,
    pub grad_v: EdgeGradient,
    pub residual_rel: f64,
}

fn gradient(u: &[f64], n: usize) -> EdgeGradient {
    let mut gx = vec![0.0; n * n];
    let mut gy = vec![0.0; n * n];
    for iy in 0..n {
        let row = iy * n;
        let up = ((iy + 1) % n) * n;
        for ix in 0..n - 1 {
            gx[row + ix] = u[row + ix + 1] - u[row + ix];
        }
        gx[row + n - 1] = u[row] - u[row + n - 1];
        for ix in 0..n {
            gy[row + ix] = u[up + ix] - u[row + ix];
        }
    }
    EdgeGradient { x: gx, y: gy }
}

/// `out = Dxᵀ fx + Dyᵀ fy`.
fn divergence_adjoint(fx: &[f64], fy: &[f64], out: &mut [f64], n: usize) {
    for iy in 0..n {
        let row = iy * n;
        let down = ((iy + n - 1) % n) * n;
        out[row] = fx[row + n - 1] - fx[row] + fy[down] - fy[row];
        for ix in 1..n {
            out[row + ix] = fx[row + ix - 1] - fx[row + ix] + fy[down + ix] - fy[row + ix];
        }
    }
}

/// `A u = Dᵀ(a ⊙ D u)`, symmetric positive semidefinite with kernel the constants.
pub fn apply_operator(edges: &EdgeCoefficients, u: &[f64], out: &mut [f64]) {
    let n = edges.n;
    let mut g = gradient(u, n);
    for (gx, a) in g.x.iter_mut().zip(&edges.ax) {
        *gx *= a;
    }
    for (gy, a) in g.y.iter_mut().zip(&edges.ay) {
        *gy *= a;
    }
    divergence_adjoint(&g.x, &g.y, out, n);
}

/// Right-hand side `−Dᵀ(a ⊙ e_i)` of the corrector equation.
pub fn corrector_rhs(edges: &EdgeCoefficients, direction: Axis) -> Vec<f64> {
    let n = edges.n;
    let zeros = vec![0.0; n * n];
    let mut out = vec![0.0; n * n];
    match direction {
        Axis::X => divergence_adjoint(&edges.ax, &zeros, &mut out, n),
        Axis::Y => divergence_adjoint(&zeros, &edges.ay, &mut out, n),
    }
    for v in &mut out {
        *v = -*v;
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Reusable solver state for one grid size: FFT plans, the inverse Laplacian
/// symbol and complex scratch. Create one per worker.
pub struct CellSolver {
    n: usize,
    fft: Fft2,
    inv_symbol: Vec<f64>,
    buf: Vec<Complex64>,
}

struct CgSystem {
    rhs: Vec<f64>,
    rhs_norm: f64,
    x: Vec<f64>,
    r: Vec<f64>,
    z: Vec<f64>,
    p: Vec<f64>,
    q: Vec<f64>,
    rz: f64,
    iterations: usize,
    energy: Vec<f64>,
    residuals: Vec<f64>,
    active: bool,
}

impl CgSystem {
    fn new(rhs: Vec<f64>) -> Self {
        let len = rhs.len();
        let rhs_norm = norm(&rhs);
        Self {
            r: rhs.clone(),
            rhs,
            rhs_norm,
            x: vec![0.0; len],
            z: vec![0.0; len],
            p: vec![0.0; len],
            q: vec![0.0; len],
            rz: 0.0,
            iterations: 0,
            energy: Vec::new(),
            residuals: Vec::new(),
            active: rhs_norm > 0.0,
        }
    }

    fn relative_residual(&self) -> f64 {
        if self.rhs_norm == 0.0 {
            0.0
        } else {
            norm(&self.r) / self.rhs_norm
        }
    }
}

impl CellSolver {
    pub fn new(n: usize) -> Self {
        let inv_symbol = laplacian_symbol(n)
            .into_iter()
            .map(|s| if s > 0.0 { 1.0 / s } else { 0.0 })
            .collect();
        Self {
            n,
            fft: Fft2::new(n),
            inv_symbol,
            buf: vec![Complex64::default(); n * n],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Applies `scale · (DᵀD)⁺` to one or two real vectors at once.
    fn inverse_laplacian(&mut self, first: Option<&[f64]>, second: Option<&[f64]>, scale: f64) {
        for (k, c) in self.buf.iter_mut().enumerate() {
            *c = Complex64::new(first.map_or(0.0, |v| v[k]), second.map_or(0.0, |v| v[k]));
        }
        self.fft.forward(&mut self.buf);
        let norm = scale / (self.n * self.n) as f64;
        for (c, s) in self.buf.iter_mut().zip(&self.inv_symbol) {
            *c *= s * norm;
        }
        self.fft.inverse(&mut self.buf);
    }

    fn check_size(&self, n: usize) -> Result<()> {
        if n != self.n {
            return Err(Error::GeometryMismatch {
                field: n,
                solution: self.n,
            });
        }
        Ok(())
    }

    /// Corrector for one direction.
    pub fn solve_corrector(
        &mut self,
        field: &ScalarField,
        direction: Axis,
        tol: f64,
        max_iter: usize,
    ) -> Result<CorrectorSolution> {
        let edges = edge_coefficients(field);
        let mut dirs = [None, None];
        dirs[direction.index()] = Some(direction);
        let [a, b] = self.solve_pcg(&edges, field.mean(), dirs, tol, max_iter)?;
        Ok(a.or(b).expect("one direction requested"))
    }

    /// Correctors for both directions, sharing each preconditioner FFT.
    pub fn solve_correctors(
        &mut self,
        field: &ScalarField,
        tol: f64,
        max_iter: usize,
    ) -> Result<[CorrectorSolution; 2]> {
        let edges = edge_coefficients(field);
        let [a, b] = self.solve_pcg(&edges, field.mean(), [Some(Axis::X), Some(Axis::Y)], tol, max_iter)?;
        Ok([a.expect("x requested"), b.expect("y requested")])
    }

    fn solve_pcg(
        &mut self,
        edges: &EdgeCoefficients,
        mean_a: f64,
        directions: [Option<Axis>; 2],
        tol: f64,
        max_iter: usize,
    ) -> Result<[Option<CorrectorSolution>; 2]> {
        if !(tol > 0.0) {
            return Err(Error::InvalidInput(format!("tolerance must be positive, got {tol}")));
        }
        self.check_size(edges.n)?;
        let len = self.n * self.n;
        let mut systems: Vec<Option<CgSystem>> = directions
            .iter()
            .map(|d| d.map(|d| CgSystem::new(corrector_rhs(edges, d))))
            .collect();
        let scale = 1.0 / mean_a;

        // Restart from the true residual until it meets the tolerance; the
        // recursively updated residual can drift below the true one.
        loop {
            for s in systems.iter_mut().flatten() {
                s.active = s.rhs_norm > 0.0 && s.relative_residual() > tol;
            }
            if systems.iter().flatten().all(|s| !s.active) {
                break;
            }
            self.precondition_active(&mut systems, scale);
            for s in systems.iter_mut().flatten().filter(|s| s.active) {
                s.p.copy_from_slice(&s.z);
                s.rz = dot(&s.r, &s.z);
            }
            loop {
                let mut any_active = false;
                for s in systems.iter_mut().flatten().filter(|s| s.active) {
                    if s.iterations >= max_iter {
                        return Err(Error::NotConverged {
                            iterations: s.iterations,
                            residual_history: s.residuals.clone(),
                        });
                    }
                    apply_operator(edges, &s.p, &mut s.q);
                    let pq = dot(&s.p, &s.q);
                    let alpha = s.rz / pq;
                    for k in 0..len {
                        s.x[k] += alpha * s.p[k];
                        s.r[k] -= alpha * s.q[k];
                    }
                    s.iterations += 1;
                    let e = -0.5 * (dot(&s.x, &s.rhs) + dot(&s.x, &s.r));
                    s.energy.push(e);
                    let rel = s.relative_residual();
                    s.residuals.push(rel);
                    if rel <= tol || !alpha.is_finite() {
                        s.active = false;
                    } else {
                        any_active = true;
                    }
                }
                if !any_active {
                    break;
                }
                self.precondition_active(&mut systems, scale);
                for s in systems.iter_mut().flatten().filter(|s| s.active) {
                    let rz_new = dot(&s.r, &s.z);
                    let beta = rz_new / s.rz;
                    s.rz = rz_new;
                    for k in 0..len {
                        s.p[k] = s.z[k] + beta * s.p[k];
                    }
                }
            }
            // True residual.
            for s in systems.iter_mut().flatten() {
                if s.rhs_norm == 0.0 {
                    continue;
                }
                apply_operator(edges, &s.x, &mut s.q);
                for k in 0..len {
                    s.r[k] = s.rhs[k] - s.q[k];
                }
                if s.relative_residual() > tol && s.iterations >= max_iter {
                    return Err(Error::NotConverged {
                        iterations: s.iterations,
                        residual_history: s.residuals.clone(),
                    });
                }
            }
        }

        let n = self.n;
        let mut out = [None, None];
        for (slot, (sys, dir)) in out.iter_mut().zip(systems.into_iter().zip(directions)) {
            if let (Some(s), Some(direction)) = (sys, dir) {
                *slot = Some(CorrectorSolution {
                    n,
                    direction,
                    residual_rel: s.relative_residual(),
                    grad_phi: gradient(&s.x, n),
                    iterations: s.iterations,
                    energy_history: s.energy,
                });
            }
        }
        Ok(out)
    }

    fn precondition_active(&mut self, systems: &mut [Option<CgSystem>], scale: f64) {
        fn take(s: &Option<CgSystem>) -> Option<Vec<f64>> {
            s.as_ref().filter(|s| s.active).map(|s| s.r.clone())
        }
        let first = take(&systems[0]);
        let second = take(&systems[1]);
        self.inverse_laplacian(first.as_deref(), second.as_deref(), scale);
        for (slot, s) in systems.iter_mut().enumerate() {
            if let Some(s) = s.as_mut().filter(|s| s.active) {
                for (z, c) in s.z.iter_mut().zip(&self.buf) {
                    *z = if slot == 0 { c.re } else { c.im };
                }
            }
        }
    }

    /// Constant-coefficient auxiliary problem `DᵀD v_i = −Dᵀ(a ⊙ e_i)` for
    /// both directions, solved directly in Fourier space.
    pub fn solve_aux_pair(&mut self, field: &ScalarField) -> Result<[AuxSolution; 2]> {
        self.check_size(field.n())?;
        let edges = edge_coefficients(field);
        let bx = corrector_rhs(&edges, Axis::X);
        let by = corrector_rhs(&edges, Axis::Y);
        self.inverse_laplacian(Some(&bx), Some(&by), 1.0);
        let vx: Vec<f64> = self.buf.iter().map(|c| c.re).collect();
        let vy: Vec<f64> = self.buf.iter().map(|c| c.im).collect();
        Ok([
            self.aux_solution(Axis::X, &vx, &bx),
            self.aux_solution(Axis::Y, &vy, &by),
        ])
    }

    fn aux_solution(&self, direction: Axis, v: &[f64], rhs: &[f64]) -> AuxSolution {
        let n = self.n;
        let grad_v = gradient(v, n);
        let mut lv = vec![0.0; n * n];
        divergence_adjoint(&grad_v.x, &grad_v.y, &mut lv, n);
        let rhs_norm = norm(rhs);
        let residual_rel = if rhs_norm == 0.0 {
            0.0
        } else {
            lv.iter().zip(rhs).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() / rhs_norm
        };
        AuxSolution {
            n,
            direction,
            grad_v,
            residual_rel,
        }
    }
}

pub fn solve_corrector(field: &ScalarField, direction: Axis, tol: f64, max_iter: usize) -> Result<CorrectorSolution> {
    CellSolver::new(field.n()).solve_corrector(field, direction, tol, max_iter)
}

pub fn solve_aux_poisson(field: &ScalarField, direction: Axis) -> AuxSolution {
    let [x, y] = CellSolver::new(field.n())
        .solve_aux_pair(field)
        .expect("solver built for this field");
    match direction {
        Axis::X => x,
        Axis::Y => y,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fieldgen::{generate, GeneratorSpec, GridGeometry};
    use crate::rng::SampleSeed;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn geom(l: usize, m: usize) -> GridGeometry {
        GridGeometry::new(l, m).unwrap()
    }

    fn checkerboard(l: usize, m: usize, lo: f64, idx: u64) -> ScalarField {
        generate(
            &GeneratorSpec::checkerboard(lo, 1.0, 0.5),
            &geom(l, m),
            SampleSeed::new(77, idx),
        )
        .unwrap()
    }

    /// Dense Gaussian elimination on `A φ = b` with the gauge `φ[0] = 0`
    /// replacing the first equation; independent of the FFT/CG path.
    fn dense_corrector(field: &ScalarField, direction: Axis) -> Vec<f64> {
        let n = field.n();
        let len = n * n;
        let edges = edge_coefficients(field);
        let mut a = vec![vec![0.0; len + 1]; len];
        let mut e = vec![0.0; len];
        let mut col = vec![0.0; len];
        for j in 0..len {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            apply_operator(&edges, &e, &mut col);
            for i in 0..len {
                a[i][j] = col[i];
            }
        }
        let b = corrector_rhs(&edges, direction);
        for i in 0..len {
            a[i][len] = b[i];
        }
        a[0].iter_mut().for_each(|v| *v = 0.0);
        a[0][0] = 1.0;
        for c in 0..len {
            let piv = (c..len)
                .max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))
                .unwrap();
            a.swap(c, piv);
            for r in 0..len {
                if r != c {
                    let f = a[r][c] / a[c][c];
                    if f != 0.0 {
                        for k in c..=len {
                            a[r][k] -= f * a[c][k];
                        }
                    }
                }
            }
        }
        (0..len).map(|i| a[i][len] / a[i][i]).collect()
    }

    #[test]
    fn edge_coefficient_examples() {
        let c = ScalarField::constant(geom(2, 2), 0.7);
        let e = edge_coefficients(&c);
        assert!(e.ax.iter().chain(&e.ay).all(|&v| (v - 0.7).abs() < 1e-15));

        let f = ScalarField::from_fn(geom(2, 1), |ix, _| if ix == 0 { 1.0 } else { 0.5 });
        let e = edge_coefficients(&f);
        assert_relative_eq!(e.ax[0], 2.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(e.ay[0], 1.0, epsilon = 1e-15);

        let f = checkerboard(4, 2, 0.2, 1);
        let e = edge_coefficients(&f);
        let n = f.n();
        for iy in 0..n {
            for ix in 0..n {
                let (a, b) = (f.at(ix, iy), f.at(ix + 1, iy));
                let v = e.ax[iy * n + ix];
                assert!(v >= a.min(b) - 1e-15 && v <= a.max(b) + 1e-15);
            }
        }
    }

    #[test]
    fn constant_field_has_zero_corrector() {
        let f = ScalarField::constant(geom(3, 4), 2.5);
        let s = solve_corrector(&f, Axis::X, 1e-9, 100).unwrap();
        assert!(s.iterations <= 1);
        assert!(s.grad_phi.x.iter().chain(&s.grad_phi.y).all(|&g| g == 0.0));
    }

    #[test]
    fn layered_field_correctors_are_explicit() {
        let f = generate(
            &GeneratorSpec::layered(Axis::X, 1.0, 0.5),
            &geom(4, 3),
            SampleSeed::new(0, 0),
        )
        .unwrap();
        let s2 = solve_corrector(&f, Axis::Y, 1e-9, 240).unwrap();
        assert_eq!(s2.iterations, 0);
        assert!(s2.grad_phi.x.iter().chain(&s2.grad_phi.y).all(|&g| g == 0.0));

        // 1D corrector: flux a(1 + ∂xφ) equals the harmonic mean of the edge coefficients.
        let s1 = solve_corrector(&f, Axis::X, 1e-12, 240).unwrap();
        let e = edge_coefficients(&f);
        let hm = e.ax.len() as f64 / e.ax.iter().map(|a| 1.0 / a).sum::<f64>();
        assert_relative_eq!(hm, 2.0 / 3.0, epsilon = 1e-14);
        for (g, a) in s1.grad_phi.x.iter().zip(&e.ax) {
            assert!((g - (hm / a - 1.0)).abs() < 1e-10);
        }
        assert!(s1.grad_phi.y.iter().all(|g| g.abs() < 1e-10));
    }

    #[test]
    fn cg_matches_dense_solve() {
        let f = checkerboard(3, 2, 0.2, 4);
        for dir in [Axis::X, Axis::Y] {
            let s = solve_corrector(&f, dir, 1e-12, 500).unwrap();
            assert!(s.residual_rel <= 1e-12);
            let phi = dense_corrector(&f, dir);
            let g = gradient(&phi, f.n());
            for (a, b) in s.grad_phi.x.iter().zip(&g.x).chain(s.grad_phi.y.iter().zip(&g.y)) {
                assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn paired_solve_equals_single_solves() {
        let f = checkerboard(4, 4, 0.2, 5);
        let mut solver = CellSolver::new(f.n());
        let [sx, sy] = solver.solve_correctors(&f, 1e-10, 1000).unwrap();
        let single_x = solver.solve_corrector(&f, Axis::X, 1e-10, 1000).unwrap();
        let single_y = solver.solve_corrector(&f, Axis::Y, 1e-10, 1000).unwrap();
        for (a, b) in sx.grad_phi.x.iter().zip(&single_x.grad_phi.x) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in sy.grad_phi.y.iter().zip(&single_y.grad_phi.y) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn corrector_gradients_have_zero_mean_and_meet_tolerance() {
        let f = checkerboard(6, 4, 0.2, 6);
        let n = f.n() as f64;
        let mut solver = CellSolver::new(f.n());
        for s in solver.solve_correctors(&f, 1e-9, 480).unwrap() {
            assert!(s.residual_rel <= 1e-9);
            let mx: f64 = s.grad_phi.x.iter().sum();
            let my: f64 = s.grad_phi.y.iter().sum();
            assert!(mx.abs() < 1e-12 * n * n && my.abs() < 1e-12 * n * n);
        }
    }

    #[test]
    fn non_convergence_reports_history() {
        let f = checkerboard(6, 4, 0.05, 7);
        match solve_corrector(&f, Axis::X, 1e-14, 2) {
            Err(Error::NotConverged {
                iterations,
                residual_history,
            }) => {
                assert_eq!(iterations, 2);
                assert_eq!(residual_history.len(), 2);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn energy_is_monotone() {
        // Conjugate gradients minimize the energy over growing Krylov spaces.
        let f = checkerboard(8, 4, 0.2, 8);
        let s = solve_corrector(&f, Axis::X, 1e-11, 640).unwrap();
        assert!(s.iterations > 3);
        for w in s.energy_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-13 * w[0].abs().max(1.0), "{w:?}");
        }
    }

    #[test]
    fn layered_flux_is_conserved_per_column() {
        let f = generate(
            &GeneratorSpec::layered(Axis::X, 1.0, 0.3),
            &geom(4, 5),
            SampleSeed::new(0, 0),
        )
        .unwrap();
        let s = solve_corrector(&f, Axis::X, 1e-11, 400).unwrap();
        let e = edge_coefficients(&f);
        let n = f.n();
        let flux: Vec<f64> = e.ax.iter().zip(&s.grad_phi.x).map(|(a, g)| a * (1.0 + g)).collect();
        let total = flux.iter().sum::<f64>() / flux.len() as f64;
        for ix in 0..n {
            let col = (0..n).map(|iy| flux[iy * n + ix]).sum::<f64>() / n as f64;
            assert!((col - total).abs() < 1e-9);
        }
    }

    #[test]
    fn corrector_is_scale_invariant() {
        let f = checkerboard(4, 4, 0.2, 9);
        let tol = 1e-9;
        let a = solve_corrector(&f, Axis::X, tol, 320).unwrap();
        let b = solve_corrector(&f.scaled(3.7), Axis::X, tol, 320).unwrap();
        for (x, y) in a
            .grad_phi
            .x
            .iter()
            .zip(&b.grad_phi.x)
            .chain(a.grad_phi.y.iter().zip(&b.grad_phi.y))
        {
            assert!((x - y).abs() <= 10.0 * tol);
        }
    }

    #[test]
    fn aux_constant_field_vanishes() {
        let f = ScalarField::constant(geom(2, 4), 1.3);
        let s = solve_aux_poisson(&f, Axis::X);
        assert!(s.grad_v.x.iter().chain(&s.grad_v.y).all(|g| g.abs() < 1e-15));
    }

    #[test]
    fn aux_single_mode_matches_closed_form() {
        // For an x-only field the 1D identity Dxᵀ(Dx v + a_x) = 0 gives
        // Dx v = mean(a_x) − a_x, with a_x the harmonic edge means.
        let eta = 0.3;
        let g = geom(4, 4);
        let n = g.n();
        let f = ScalarField::from_fn(g, |ix, _| {
            1.0 + eta * (2.0 * std::f64::consts::PI * (ix as f64 + 0.5) / n as f64).cos()
        });
        let s = solve_aux_poisson(&f, Axis::X);
        let ax: Vec<f64> = (0..n).map(|i| harmonic(f.at(i, 0), f.at(i + 1, 0))).collect();
        let mean_ax = ax.iter().sum::<f64>() / n as f64;
        for iy in 0..n {
            for ix in 0..n {
                assert!((s.grad_v.x[iy * n + ix] - (mean_ax - ax[ix])).abs() < 1e-13);
                assert!(s.grad_v.y[iy * n + ix].abs() < 1e-13);
            }
        }
        assert!(s.residual_rel < 1e-12);
        assert!(solve_aux_poisson(&f, Axis::Y).grad_v.x.iter().all(|g| g.abs() < 1e-13));
    }

    #[test]
    fn aux_transposition_swaps_directions() {
        let f = checkerboard(4, 2, 0.2, 10);
        let t = f.transpose();
        let n = f.n();
        let a = solve_aux_poisson(&f, Axis::X);
        let b = solve_aux_poisson(&t, Axis::Y);
        for iy in 0..n {
            for ix in 0..n {
                assert!((a.grad_v.x[iy * n + ix] - b.grad_v.y[ix * n + iy]).abs() < 1e-12);
                assert!((a.grad_v.y[iy * n + ix] - b.grad_v.x[ix * n + iy]).abs() < 1e-12);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn operator_is_self_adjoint(seed in any::<u64>()) {
            use rand::Rng;
            let f = checkerboard(3, 3, 0.3, seed % 1000);
            let e = edge_coefficients(&f);
            let mut rng = SampleSeed::new(seed, 1).rng(9);
            let len = f.n() * f.n();
            let u: Vec<f64> = (0..len).map(|_| rng.random::<f64>() - 0.5).collect();
            let w: Vec<f64> = (0..len).map(|_| rng.random::<f64>() - 0.5).collect();
            let mut au = vec![0.0; len];
            let mut aw = vec![0.0; len];
            apply_operator(&e, &u, &mut au);
            apply_operator(&e, &w, &mut aw);
            let lhs = dot(&au, &w);
            let rhs = dot(&u, &aw);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(rhs.abs()));
        }
    }
}
