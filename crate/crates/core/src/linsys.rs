//! Linear-systems design kit: equilibria, Jacobian linearization,
//! stability and controllability analysis, pole placement, Lyapunov and
//! Riccati solvers, and observer design.
//!
//! Everything works on dynamically sized matrices so the same routines
//! serve the 4-state arm model and small textbook systems.

use std::f64::consts::PI;

use nalgebra::{DMatrix, Matrix2, SMatrix};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    forward_dynamics, gravity_jacobian, lumped_params, mass_matrix, JointTorque, RobotParams, State,
};
use crate::error::{Error, Result};

/// Real parts within this distance of zero count as "on the axis".
pub const STABILITY_MARGIN: f64 = 1e-9;
/// Relative singular-value cutoff for numerical rank.
pub const RANK_TOL: f64 = 1e-9;
/// Equilibria reported by [`find_equilibria`] satisfy `|f(x, 0)| <= EQUILIBRIUM_TOL`.
pub const EQUILIBRIUM_TOL: f64 = 1e-12;
/// [`linearize`] refuses expansion points with a larger residual.
pub const LINEARIZE_TOL: f64 = 1e-9;

/// Default closed-loop poles for state feedback about the upright pose.
pub const DEFAULT_FEEDBACK_POLES: [f64; 4] = [-2.0, -2.5, -3.0, -3.5];
/// Default observer poles, three times faster than the slowest controller pole.
pub const DEFAULT_OBSERVER_POLES: [f64; 4] = [-9.0, -9.5, -10.0, -10.5];
/// Default LQR weights.
pub const DEFAULT_LQR_Q: [f64; 4] = [50.0, 50.0, 5.0, 5.0];
pub const DEFAULT_LQR_R: [f64; 2] = [0.2, 0.5];

/// `xdot = A (x - x_eq) + B u`, `y = C x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub x_eq: Option<State>,
}

impl LinearModel {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::Dimension(format!("A is {}x{}", n, a.ncols())));
        }
        if b.nrows() != n {
            return Err(Error::Dimension(format!("B has {} rows, A has {n}", b.nrows())));
        }
        if c.ncols() != n {
            return Err(Error::Dimension(format!("C has {} columns, A has {n}", c.ncols())));
        }
        if a.iter().chain(b.iter()).chain(c.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("model matrices must be finite".into()));
        }
        Ok(Self { a, b, c, x_eq: None })
    }

    /// `n` joints as double integrators, position measurement.
    pub fn double_integrator(joints: usize) -> Self {
        let n = 2 * joints;
        let mut a = DMatrix::zeros(n, n);
        let mut b = DMatrix::zeros(n, joints);
        for j in 0..joints {
            a[(j, joints + j)] = 1.0;
            b[(joints + j, j)] = 1.0;
        }
        Self { a, b, c: position_output(joints), x_eq: None }
    }

    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_inputs(&self) -> usize {
        self.b.ncols()
    }

    /// The dual pair `(A^T, C^T, B^T)`.
    pub fn dual(&self) -> Self {
        Self { a: self.a.transpose(), b: self.c.transpose(), c: self.b.transpose(), x_eq: self.x_eq }
    }
}

/// `[I 0]` selecting the joint positions from `[q; qd]`.
pub fn position_output(joints: usize) -> DMatrix<f64> {
    let mut c = DMatrix::zeros(joints, 2 * joints);
    for j in 0..joints {
        c[(j, j)] = 1.0;
    }
    c
}

/// State-feedback gain, `u = -K x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainK(pub DMatrix<f64>);

impl GainK {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn zeros(inputs: usize, states: usize) -> Self {
        Self(DMatrix::zeros(inputs, states))
    }

    /// View as the 2×4 gain used by the arm controllers.
    pub fn to_2x4(&self) -> Result<SMatrix<f64, 2, 4>> {
        if self.0.shape() != (2, 4) {
            return Err(Error::Dimension(format!("expected 2x4 gain, got {:?}", self.0.shape())));
        }
        Ok(self.0.fixed_view::<2, 4>(0, 0).into_owned())
    }
}

/// Observer gain in `xhat' = A xhat + B u + L (y - C xhat)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObserverGainL(pub DMatrix<f64>);

impl ObserverGainL {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stability {
    Stable,
    Unstable,
    Marginal,
}

// ---------------------------------------------------------------------------
// Spectral helpers

pub fn eigenvalues(m: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension(format!("eigenvalues of {}x{} matrix", m.nrows(), m.ncols())));
    }
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite matrix".into()));
    }
    let schur = nalgebra::Schur::try_new(m.clone(), f64::EPSILON, 100_000)
        .ok_or_else(|| Error::LinearSolve("Schur iteration did not converge".into()))?;
    Ok(schur.complex_eigenvalues().iter().map(|z| Complex64::new(z.re, z.im)).collect())
}

pub fn max_real_part(eigs: &[Complex64]) -> f64 {
    eigs.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
}

pub fn is_hurwitz(m: &DMatrix<f64>) -> bool {
    eigenvalues(m).map(|e| max_real_part(&e) < -STABILITY_MARGIN).unwrap_or(false)
}

/// Largest pairwise gap between two spectra under the matching that
/// minimizes the total absolute difference. Spectra of different length
/// are infinitely far apart.
pub fn spectrum_distance(a: &[Complex64], b: &[Complex64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    let n = a.len();
    if n == 0 {
        return 0.0;
    }
    let cost: Vec<Vec<f64>> = a.iter().map(|x| b.iter().map(|y| (x - y).norm()).collect()).collect();
    if n > 8 {
        // Greedy fallback for large spectra.
        let mut used = vec![false; n];
        let mut worst: f64 = 0.0;
        for row in &cost {
            let (j, c) = row
                .iter()
                .enumerate()
                .filter(|(j, _)| !used[*j])
                .min_by(|x, y| x.1.total_cmp(y.1))
                .expect("unused column remains");
            used[j] = true;
            worst = worst.max(*c);
        }
        return worst;
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = (f64::INFINITY, f64::INFINITY);
    let mut visit = |p: &[usize]| {
        let (sum, max) = p
            .iter()
            .enumerate()
            .fold((0.0, 0.0f64), |(s, m), (i, &j)| (s + cost[i][j], m.max(cost[i][j])));
        if sum < best.0 || (sum == best.0 && max < best.1) {
            best = (sum, max);
        }
    };
    heap_permutations(&mut perm, n, &mut visit);
    best.1
}

fn heap_permutations(p: &mut [usize], k: usize, visit: &mut impl FnMut(&[usize])) {
    if k <= 1 {
        visit(p);
        return;
    }
    for i in 0..k - 1 {
        heap_permutations(p, k - 1, visit);
        if k.is_multiple_of(2) {
            p.swap(i, k - 1);
        } else {
            p.swap(0, k - 1);
        }
    }
    heap_permutations(p, k - 1, visit);
}

pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.max();
    if smax <= 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_TOL * smax).count()
}

fn complex_rank(m: &DMatrix<Complex64>) -> usize {
    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.max();
    if smax <= 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_TOL * smax).count()
}

fn to_complex(m: &DMatrix<f64>) -> DMatrix<Complex64> {
    m.map(|v| Complex64::new(v, 0.0))
}

fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().svd(false, false).singular_values;
    let smin = sv.min();
    if smin <= 0.0 {
        f64::INFINITY
    } else {
        sv.max() / smin
    }
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

// ---------------------------------------------------------------------------
// Arm-specific analysis

/// All equilibria with zero velocity and zero input, angles in `(-pi, pi]`.
///
/// With positive lumped gravity coefficients, `g(q) = 0` forces
/// `sin(th1 + th2) = 0` and then `sin(th1) = 0`, so the candidates are the
/// four combinations of `{0, pi}`; each is kept only if its residual
/// passes [`EQUILIBRIUM_TOL`].
pub fn find_equilibria(params: &RobotParams) -> Vec<State> {
    let mut out = Vec::with_capacity(4);
    for th1 in [0.0, PI] {
        for th2 in [0.0, PI] {
            let x = State::new(th1, th2, 0.0, 0.0);
            if let Ok(xd) = forward_dynamics(params, &x, &JointTorque::ZERO) {
                if xd.amax() <= EQUILIBRIUM_TOL {
                    out.push(x);
                }
            }
        }
    }
    out
}

/// Analytic Jacobian linearization of `f(x, u)` about an equilibrium.
pub fn linearize(params: &RobotParams, x_eq: &State) -> Result<LinearModel> {
    params.validate()?;
    let residual = forward_dynamics(params, x_eq, &JointTorque::ZERO)?.amax();
    if !(residual <= LINEARIZE_TOL) {
        return Err(Error::NotEquilibrium { residual });
    }
    let alpha = lumped_params(params);
    let q = x_eq.q();
    let mass = mass_matrix(&alpha, &q);
    let minv = mass
        .try_inverse()
        .ok_or(Error::SingularInertia { cond: f64::INFINITY })?;
    // At rest with g(q) = 0 only the gravity Jacobian and friction survive.
    let dq: Matrix2<f64> = -minv * gravity_jacobian(&alpha, &q);
    let dqd: Matrix2<f64> = -minv * params.friction();

    let mut a = DMatrix::zeros(4, 4);
    let mut b = DMatrix::zeros(4, 2);
    a[(0, 2)] = 1.0;
    a[(1, 3)] = 1.0;
    for i in 0..2 {
        for j in 0..2 {
            a[(2 + i, j)] = dq[(i, j)];
            a[(2 + i, 2 + j)] = dqd[(i, j)];
            b[(2 + i, j)] = minv[(i, j)];
        }
    }
    Ok(LinearModel { a, b, c: position_output(2), x_eq: Some(*x_eq) })
}

pub fn classify_stability(model: &LinearModel) -> Result<Stability> {
    let eigs = eigenvalues(&model.a)?;
    let max_re = max_real_part(&eigs);
    Ok(if max_re < -STABILITY_MARGIN {
        Stability::Stable
    } else if max_re > STABILITY_MARGIN {
        Stability::Unstable
    } else {
        Stability::Marginal
    })
}

pub fn controllability_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let m = b.ncols();
    let mut out = DMatrix::zeros(n, n * m);
    let mut block = b.clone();
    for k in 0..n {
        out.view_mut((0, k * m), (n, m)).copy_from(&block);
        block = a * &block;
    }
    out
}

pub fn controllability_rank(model: &LinearModel) -> usize {
    numerical_rank(&controllability_matrix(&model.a, &model.b))
}

pub fn observability_rank(model: &LinearModel) -> usize {
    numerical_rank(&controllability_matrix(&model.a.transpose(), &model.c.transpose()))
}

// ---------------------------------------------------------------------------
// Pole placement

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlacementOptions {
    pub seed: u64,
    /// Number of well-conditioned random draws compared; the smallest gain wins.
    pub candidates: usize,
    pub max_attempts: usize,
    /// Draws whose Sylvester solution is worse conditioned are rejected.
    pub max_cond: f64,
    /// Required agreement between requested and achieved poles.
    pub tolerance: f64,
}

impl Default for PlacementOptions {
    fn default() -> Self {
        Self { seed: 0x5EED, candidates: 8, max_attempts: 200, max_cond: 1e8, tolerance: 1e-6 }
    }
}

fn check_conjugate_closed(poles: &[Complex64]) -> Result<()> {
    let scale = poles.iter().map(|z| z.norm()).fold(1.0, f64::max);
    let tol = 1e-9 * scale;
    let mut used = vec![false; poles.len()];
    for i in 0..poles.len() {
        if used[i] {
            continue;
        }
        let z = poles[i];
        used[i] = true;
        if z.im.abs() <= tol {
            continue;
        }
        let partner = (0..poles.len()).find(|&j| !used[j] && (poles[j] - z.conj()).norm() <= tol);
        match partner {
            Some(j) => used[j] = true,
            None => {
                return Err(Error::InvalidInput(format!("pole {z} has no conjugate partner")))
            }
        }
    }
    Ok(())
}

/// Conjugate pairs as `(re, im > 0)` plus real poles, with repeated
/// values separated by at least `sep`.
fn canonical_poles(poles: &[Complex64], sep: f64) -> (Vec<f64>, Vec<(f64, f64)>) {
    let scale = poles.iter().map(|z| z.norm()).fold(1.0, f64::max);
    let tol = 1e-9 * scale;
    let mut reals: Vec<f64> = poles.iter().filter(|z| z.im.abs() <= tol).map(|z| z.re).collect();
    let mut pairs: Vec<(f64, f64)> =
        poles.iter().filter(|z| z.im > tol).map(|z| (z.re, z.im)).collect();
    reals.sort_by(|a, b| a.total_cmp(b));
    for i in 1..reals.len() {
        if reals[i] - reals[i - 1] < sep {
            reals[i] = reals[i - 1] + sep;
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    for i in 1..pairs.len() {
        if (pairs[i].0 - pairs[i - 1].0).abs() < sep && (pairs[i].1 - pairs[i - 1].1).abs() < sep {
            pairs[i].0 = pairs[i - 1].0 + sep;
        }
    }
    (reals, pairs)
}

fn real_block_diagonal(reals: &[f64], pairs: &[(f64, f64)]) -> DMatrix<f64> {
    let n = reals.len() + 2 * pairs.len();
    let mut m = DMatrix::zeros(n, n);
    let mut k = 0;
    for &r in reals {
        m[(k, k)] = r;
        k += 1;
    }
    for &(re, im) in pairs {
        m[(k, k)] = re;
        m[(k, k + 1)] = im;
        m[(k + 1, k)] = -im;
        m[(k + 1, k + 1)] = re;
        k += 2;
    }
    m
}

/// Solve `A X + X B = C` through its Kronecker form.
pub fn solve_sylvester(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (n, m) = (a.nrows(), b.nrows());
    if a.ncols() != n || b.ncols() != m || c.shape() != (n, m) {
        return Err(Error::Dimension("Sylvester operands do not conform".into()));
    }
    let nm = n * m;
    let mut big = DMatrix::zeros(nm, nm);
    // vec(AX) = (I ⊗ A) vec X, vec(XB) = (B^T ⊗ I) vec X, column-major vec.
    for col in 0..m {
        for i in 0..n {
            for j in 0..n {
                big[(col * n + i, col * n + j)] += a[(i, j)];
            }
        }
        for k in 0..m {
            let coeff = b[(k, col)];
            if coeff != 0.0 {
                for i in 0..n {
                    big[(col * n + i, k * n + i)] += coeff;
                }
            }
        }
    }
    let rhs = nalgebra::DVector::from_column_slice(c.as_slice());
    let sol = big
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::LinearSolve("singular Sylvester operator".into()))?;
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(Error::LinearSolve("singular Sylvester operator".into()));
    }
    Ok(DMatrix::from_column_slice(n, m, sol.as_slice()))
}

/// State-feedback gain placing `eig(A - B K)` at `desired`.
pub fn place_poles(model: &LinearModel, desired: &[Complex64], seed: u64) -> Result<GainK> {
    place_poles_with(&model.a, &model.b, desired, &PlacementOptions { seed, ..Default::default() })
}

/// Sylvester-equation pole placement: for a random `G`, solve
/// `A X - X Λ = B G` and take `K = G X^-1`, so that `(A - B K) X = X Λ`.
pub fn place_poles_with(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    desired: &[Complex64],
    opts: &PlacementOptions,
) -> Result<GainK> {
    let n = a.nrows();
    let m = b.ncols();
    if a.ncols() != n || b.nrows() != n {
        return Err(Error::Dimension("A must be square and B must have n rows".into()));
    }
    if desired.len() != n {
        return Err(Error::InvalidInput(format!("{} poles requested for {n} states", desired.len())));
    }
    if desired.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
        return Err(Error::InvalidInput("poles must be finite".into()));
    }
    if let Some(z) = desired.iter().find(|z| z.re >= 0.0) {
        return Err(Error::InvalidInput(format!("pole {z} is not in the open left half-plane")));
    }
    check_conjugate_closed(desired)?;
    let rank = numerical_rank(&controllability_matrix(a, b));
    if rank < n {
        return Err(Error::Uncontrollable { rank, n });
    }

    let open_loop = eigenvalues(a)?;
    if spectrum_distance(&open_loop, desired) <= 1e-12 * (1.0 + a.norm()) {
        return Ok(GainK::zeros(m, n));
    }

    let (reals, pairs) = canonical_poles(desired, 1e-6);
    let lambda = real_block_diagonal(&reals, &pairs);
    let target: Vec<Complex64> = eigenvalues(&lambda)?;
    let neg_lambda = -&lambda;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best: Option<(f64, DMatrix<f64>)> = None;
    let mut accepted = 0;
    let mut last_issue = String::from("no attempt made");
    for _ in 0..opts.max_attempts {
        let g = DMatrix::from_fn(m, n, |_, _| StandardNormal.sample(&mut rng));
        let x = match solve_sylvester(a, &neg_lambda, &(b * &g)) {
            Ok(x) => x,
            Err(e) => {
                last_issue = e.to_string();
                continue;
            }
        };
        let cond = condition_number(&x);
        if !(cond <= opts.max_cond) {
            last_issue = format!("Sylvester solution condition {cond:e}");
            continue;
        }
        let Some(x_inv) = x.clone().try_inverse() else {
            last_issue = "singular Sylvester solution".into();
            continue;
        };
        let k = &g * x_inv;
        let achieved = eigenvalues(&(a - b * &k))?;
        let err = spectrum_distance(&achieved, &target);
        if !(err <= opts.tolerance) {
            last_issue = format!("achieved poles off by {err:e}");
            continue;
        }
        let norm = k.norm();
        if best.as_ref().is_none_or(|(bn, _)| norm < *bn) {
            best = Some((norm, k));
        }
        accepted += 1;
        if accepted >= opts.candidates {
            break;
        }
    }
    best.map(|(_, k)| GainK(k)).ok_or(Error::PlacementFailed(last_issue))
}

/// Observer gain by duality: place `eig(A^T - C^T K)` and transpose.
pub fn design_observer(model: &LinearModel, desired: &[Complex64], seed: u64) -> Result<ObserverGainL> {
    let n = model.n_states();
    let rank = observability_rank(model);
    if rank < n {
        return Err(Error::Unobservable { rank, n });
    }
    let dual = model.dual();
    let k = place_poles(&dual, desired, seed)?;
    Ok(ObserverGainL(k.0.transpose()))
}

// ---------------------------------------------------------------------------
// Lyapunov and Riccati

/// `A^T P + P A = -Q` without Hurwitz or definiteness checks.
fn lyapunov_raw(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = solve_sylvester(&a.transpose(), a, &(-q))?;
    Ok(symmetrize(&p))
}

pub fn lyapunov_residual(a: &DMatrix<f64>, p: &DMatrix<f64>, q: &DMatrix<f64>) -> f64 {
    (a.transpose() * p + p * a + q).norm()
}

/// Solve `A_cl^T P + P A_cl = -Q` for Hurwitz `A_cl` and symmetric `Q`.
pub fn solve_lyapunov(a_cl: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a_cl.nrows();
    if a_cl.ncols() != n || q.shape() != (n, n) {
        return Err(Error::Dimension("A_cl and Q must be square and conformant".into()));
    }
    if (q - q.transpose()).norm() > 1e-12 * q.norm().max(1.0) {
        return Err(Error::InvalidInput("Q must be symmetric".into()));
    }
    let eigs = eigenvalues(a_cl)?;
    let max_real = max_real_part(&eigs);
    if !(max_real < -STABILITY_MARGIN) {
        return Err(Error::NotHurwitz { max_real });
    }
    lyapunov_raw(a_cl, q)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CareSolution {
    pub p: DMatrix<f64>,
    pub k: GainK,
    /// Frobenius norm of the Riccati residual at `p`.
    pub residual: f64,
    /// Which route produced `p`.
    pub method: CareMethod,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CareMethod {
    Hamiltonian,
    NewtonKleinman,
}

pub fn care_residual(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r_inv: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> f64 {
    (a.transpose() * p + p * a + q - p * b * r_inv * b.transpose() * p).norm()
}

fn pbh_rank_deficient(a: &DMatrix<f64>, other: &DMatrix<f64>, stack_rows: bool) -> Result<bool> {
    let n = a.nrows();
    for lam in eigenvalues(a)? {
        if lam.re < -STABILITY_MARGIN {
            continue;
        }
        let shifted = to_complex(a) - DMatrix::<Complex64>::identity(n, n) * lam;
        let other_c = to_complex(other);
        let stacked = if stack_rows {
            let mut s = DMatrix::zeros(n + other.nrows(), n);
            s.view_mut((0, 0), (n, n)).copy_from(&shifted);
            s.view_mut((n, 0), (other.nrows(), n)).copy_from(&other_c);
            s
        } else {
            let mut s = DMatrix::zeros(n, n + other.ncols());
            s.view_mut((0, 0), (n, n)).copy_from(&shifted);
            s.view_mut((0, n), (n, other.ncols())).copy_from(&other_c);
            s
        };
        if complex_rank(&stacked) < n {
            return Ok(true);
        }
    }
    Ok(false)
}

/// Continuous algebraic Riccati equation `A^T P + P A + Q - P B R^-1 B^T P = 0`
/// and the LQR gain `K = R^-1 B^T P`.
///
/// Primary route: the stable invariant subspace of the Hamiltonian
/// `[[A, -B R^-1 B^T], [-Q, -A^T]]`. If that subspace is ill-conditioned
/// the solve falls back to Newton–Kleinman iteration; either way the
/// result is polished by Newton steps until the residual is below
/// `1e-10 ‖Q‖_F`.
pub fn solve_care(model: &LinearModel, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<CareSolution> {
    let (a, b) = (&model.a, &model.b);
    let n = model.n_states();
    let m = model.n_inputs();
    if q.shape() != (n, n) || r.shape() != (m, m) {
        return Err(Error::Dimension("Q must be n×n and R m×m".into()));
    }
    if (q - q.transpose()).norm() > 1e-12 * q.norm().max(1.0) {
        return Err(Error::InvalidInput("Q must be symmetric".into()));
    }
    if eigenvalues(&symmetrize(q))?.iter().any(|z| z.re < -1e-12 * q.norm().max(1.0)) {
        return Err(Error::InvalidInput("Q must be positive semidefinite".into()));
    }
    let r_chol = nalgebra::Cholesky::new(symmetrize(r))
        .ok_or_else(|| Error::InvalidInput("R must be symmetric positive definite".into()))?;
    let r_inv = r_chol.inverse();

    if pbh_rank_deficient(a, b, false)? {
        return Err(Error::NotStabilizable);
    }
    if pbh_rank_deficient(&a.transpose(), q, false)? {
        return Err(Error::NotDetectable);
    }

    let q_norm = q.norm();
    let target = 1e-10 * q_norm;
    let gain = |p: &DMatrix<f64>| &r_inv * b.transpose() * p;

    let (mut p, mut method) = match hamiltonian_care(a, b, q, &r_inv) {
        Ok(p) if is_hurwitz(&(a - b * gain(&p))) => (p, CareMethod::Hamiltonian),
        _ => (newton_kleinman(a, b, q, r, &r_inv, stabilizing_gain(a, b)?, 100)?, CareMethod::NewtonKleinman),
    };
    let mut residual = care_residual(a, b, q, &r_inv, &p);
    if residual > target {
        if let Ok(polished) = newton_kleinman(a, b, q, r, &r_inv, gain(&p), 20) {
            let res = care_residual(a, b, q, &r_inv, &polished);
            if res < residual {
                p = polished;
                residual = res;
                method = CareMethod::NewtonKleinman;
            }
        }
    }
    if !p.iter().all(|v| v.is_finite()) {
        return Err(Error::RiccatiFailed("non-finite solution".into()));
    }
    let k = gain(&p);
    if !is_hurwitz(&(a - b * &k)) {
        return Err(Error::RiccatiFailed("closed loop is not Hurwitz".into()));
    }
    Ok(CareSolution { p, k: GainK(k), residual, method })
}

fn hamiltonian_care(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r_inv: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let s = b * r_inv * b.transpose();
    let mut h = DMatrix::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(a);
    h.view_mut((0, n), (n, n)).copy_from(&(-&s));
    h.view_mut((n, 0), (n, n)).copy_from(&(-q));
    h.view_mut((n, n), (n, n)).copy_from(&(-a.transpose()));

    let mut stable: Vec<Complex64> =
        eigenvalues(&h)?.into_iter().filter(|z| z.re < 0.0).collect();
    if stable.len() != n {
        return Err(Error::RiccatiFailed(format!(
            "Hamiltonian has {} stable eigenvalues, expected {n}",
            stable.len()
        )));
    }
    stable.sort_by(|x, y| x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im)));

    // Group (numerically) repeated eigenvalues; each group contributes as
    // many null vectors of (H - λ I) as its multiplicity.
    let hc = to_complex(&h);
    let scale = 1.0 + h.norm();
    let mut basis = DMatrix::<Complex64>::zeros(2 * n, n);
    let mut col = 0;
    let mut i = 0;
    while i < stable.len() {
        let mut j = i + 1;
        while j < stable.len() && (stable[j] - stable[i]).norm() <= 1e-7 * scale {
            j += 1;
        }
        let mult = j - i;
        let centre = stable[i..j].iter().sum::<Complex64>() / mult as f64;
        let shifted = &hc - DMatrix::<Complex64>::identity(2 * n, 2 * n) * centre;
        let svd = shifted.svd(false, true);
        let v_t = svd.v_t.ok_or_else(|| Error::RiccatiFailed("SVD failed".into()))?;
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&x, &y| svd.singular_values[x].total_cmp(&svd.singular_values[y]));
        for &idx in order.iter().take(mult) {
            for r in 0..2 * n {
                basis[(r, col)] = v_t[(idx, r)].conj();
            }
            col += 1;
        }
        i = j;
    }

    let u1 = basis.rows(0, n).into_owned();
    let u2 = basis.rows(n, n).into_owned();
    let sv = u1.clone().svd(false, false).singular_values;
    if sv.min() <= 1e-12 * sv.max() {
        return Err(Error::RiccatiFailed("stable subspace is ill-conditioned".into()));
    }
    let u1_inv = u1
        .try_inverse()
        .ok_or_else(|| Error::RiccatiFailed("singular U1".into()))?;
    let p = (u2 * u1_inv).map(|z| z.re);
    Ok(symmetrize(&p))
}

/// A gain making `A - B K` Hurwitz, found by reflecting unstable poles.
fn stabilizing_gain(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eigs = eigenvalues(a)?;
    if max_real_part(&eigs) < -STABILITY_MARGIN {
        return Ok(DMatrix::zeros(b.ncols(), a.nrows()));
    }
    let shift = 1.0 + 0.5 * eigs.iter().map(|z| z.re.abs()).fold(0.0, f64::max);
    let desired: Vec<Complex64> =
        eigs.iter().map(|z| Complex64::new(-z.re.abs() - shift, z.im)).collect();
    Ok(place_poles_with(a, b, &desired, &PlacementOptions::default())?.0)
}

fn newton_kleinman(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    r_inv: &DMatrix<f64>,
    k0: DMatrix<f64>,
    max_iter: usize,
) -> Result<DMatrix<f64>> {
    let mut k = k0;
    let mut p_prev: Option<DMatrix<f64>> = None;
    for _ in 0..max_iter {
        let a_cl = a - b * &k;
        if !is_hurwitz(&a_cl) {
            return Err(Error::RiccatiFailed("Newton–Kleinman iterate lost stability".into()));
        }
        let p = lyapunov_raw(&a_cl, &(q + k.transpose() * r * &k))?;
        k = r_inv * b.transpose() * &p;
        if let Some(prev) = &p_prev {
            if (&p - prev).norm() <= 1e-15 * p.norm().max(1e-300) {
                return Ok(p);
            }
        }
        p_prev = Some(p);
    }
    p_prev.ok_or_else(|| Error::RiccatiFailed("no iterations".into()))
}

/// Complex poles from real values.
pub fn real_poles(values: &[f64]) -> Vec<Complex64> {
    values.iter().map(|&v| Complex64::new(v, 0.0)).collect()
}

pub fn diag(values: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(values))
}
