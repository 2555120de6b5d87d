//! Multi-user beamforming in the span of the conjugate user channels.
//!
//! A beam is w_k(s) = Σ_j B[k,j] h_j*(s). With R[j,l] = ∫ h_j h_l*, every
//! inner product reduces to Gram contractions: ∫ h_i w_k = (R b_k)_i and
//! ∫ |w_k|² = b_kᴴ R b_k, where b_k is row k of B.

use std::fmt::Write as _;

use nalgebra::SymmetricEigen;

use crate::error::{domain, Error, Result};
use crate::quadrature::ApertureGrid;
use crate::{CMat, CVec, C64};

/// Default condition-number cap for zero-forcing.
pub const DEFAULT_COND_CAP: f64 = 1e10;

/// K user channels sampled on one shared grid.
#[derive(Debug, Clone)]
pub struct UserChannelSet {
    pub grid: ApertureGrid,
    /// channels[k][l] = h_k(s_l)
    pub channels: Vec<Vec<C64>>,
    pub noise_power: f64,
}

impl UserChannelSet {
    pub fn new(grid: ApertureGrid, channels: Vec<Vec<C64>>, noise_power: f64) -> Result<Self> {
        if channels.is_empty() {
            return domain("at least one user is required");
        }
        if !(noise_power > 0.0 && noise_power.is_finite()) {
            return domain(format!("noise power must be positive, got {noise_power}"));
        }
        for (k, h) in channels.iter().enumerate() {
            if h.len() != grid.len() {
                return domain(format!("user {k} has {} samples, grid has {}", h.len(), grid.len()));
            }
        }
        Ok(Self { grid, channels, noise_power })
    }

    pub fn users(&self) -> usize {
        self.channels.len()
    }
}

/// Hermitian K×K Gram matrix R[j,l] = ∫ h_j h_l*.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    pub matrix: CMat,
}

impl GramMatrix {
    /// Ascending eigenvalues of the Hermitian matrix.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut v: Vec<f64> = SymmetricEigen::new(self.matrix.clone()).eigenvalues.iter().copied().collect();
        v.sort_by(f64::total_cmp);
        v
    }

    /// λ_max/λ_min, infinite when λ_min ≤ 0.
    pub fn condition_number(&self) -> f64 {
        let ev = self.eigenvalues();
        let (lo, hi) = (ev[0], ev[ev.len() - 1]);
        if lo <= 0.0 {
            f64::INFINITY
        } else {
            hi / lo
        }
    }
}

pub fn gram_matrix(users: &UserChannelSet) -> GramMatrix {
    let k = users.users();
    let w = &users.grid.weights;
    let raw = CMat::from_fn(k, k, |j, l| {
        users.channels[j]
            .iter()
            .zip(&users.channels[l])
            .zip(w)
            .map(|((a, b), wt)| a * b.conj() * *wt)
            .sum()
    });
    GramMatrix { matrix: (&raw + raw.adjoint()) * C64::from(0.5) }
}

/// Span coefficients: w_k(s) = Σ_j coefficients[(k, j)] h_j*(s).
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformerSet {
    pub coefficients: CMat,
}

impl BeamformerSet {
    pub fn row(&self, k: usize) -> CVec {
        self.coefficients.row(k).transpose()
    }

    /// ∫|w_k|² = b_kᴴ R b_k per user.
    pub fn powers(&self, gram: &GramMatrix) -> Vec<f64> {
        (0..self.coefficients.nrows())
            .map(|k| {
                let b = self.row(k);
                (b.adjoint() * &gram.matrix * &b)[(0, 0)].re
            })
            .collect()
    }

    /// A[i, k] = ∫ h_i w_k = (R b_k)_i.
    pub fn responses(&self, gram: &GramMatrix) -> CMat {
        &gram.matrix * self.coefficients.transpose()
    }

    /// Beam currents sampled on the users' grid, one vector per user.
    pub fn sample(&self, users: &UserChannelSet) -> Vec<Vec<C64>> {
        let n = users.grid.len();
        (0..self.coefficients.nrows())
            .map(|k| {
                (0..n)
                    .map(|l| {
                        (0..users.users())
                            .map(|j| self.coefficients[(k, j)] * users.channels[j][l].conj())
                            .sum()
                    })
                    .collect()
            })
            .collect()
    }

    /// CSV rows `user,index,re,im` of the coefficient matrix.
    pub fn coefficients_csv(&self) -> String {
        let mut out = String::from("user,index,re,im\n");
        for k in 0..self.coefficients.nrows() {
            for j in 0..self.coefficients.ncols() {
                let v = self.coefficients[(k, j)];
                let _ = writeln!(out, "{k},{j},{:.16e},{:.16e}", v.re, v.im);
            }
        }
        out
    }

    /// CSV rows `user,node,x,z,abs_w` of |w_k| on the quadrature grid.
    pub fn field_csv(&self, users: &UserChannelSet) -> String {
        let mut out = String::from("user,node,x_m,z_m,abs_w\n");
        for (k, w) in self.sample(users).iter().enumerate() {
            for (l, (v, n)) in w.iter().zip(&users.grid.nodes).enumerate() {
                let _ = writeln!(out, "{k},{l},{:.16e},{:.16e},{:.16e}", n.local.x, n.local.y, v.norm());
            }
        }
        out
    }
}

fn check_powers(users: &UserChannelSet, power_alloc: &[f64]) -> Result<()> {
    if power_alloc.len() != users.users() {
        return domain(format!("{} powers for {} users", power_alloc.len(), users.users()));
    }
    if let Some(p) = power_alloc.iter().find(|p| !(**p >= 0.0 && p.is_finite())) {
        return domain(format!("powers must be finite and >= 0, got {p}"));
    }
    Ok(())
}

/// B diagonal with B[k,k] = √(P_k/R_kk).
pub fn mrt(users: &UserChannelSet, power_alloc: &[f64]) -> Result<BeamformerSet> {
    check_powers(users, power_alloc)?;
    let r = gram_matrix(users);
    let k = users.users();
    let mut b = CMat::zeros(k, k);
    for i in 0..k {
        let rkk = r.matrix[(i, i)].re;
        if !(rkk > 0.0) {
            return domain(format!("user {i} has a zero-norm channel"));
        }
        b[(i, i)] = C64::from((power_alloc[i] / rkk).sqrt());
    }
    Ok(BeamformerSet { coefficients: b })
}

pub fn zf(users: &UserChannelSet, power_alloc: &[f64]) -> Result<BeamformerSet> {
    zf_with_cap(users, power_alloc, DEFAULT_COND_CAP)
}

/// b_j = c_j R⁻¹ e_j with c_j = √(P_j/(R⁻¹)_jj), so (R b_j)_i = c_j δ_ij.
pub fn zf_with_cap(users: &UserChannelSet, power_alloc: &[f64], cond_cap: f64) -> Result<BeamformerSet> {
    check_powers(users, power_alloc)?;
    let r = gram_matrix(users);
    let cond = r.condition_number();
    if !(cond <= cond_cap) {
        return Err(Error::RankDeficient { cond, cap: cond_cap });
    }
    let inv = r
        .matrix
        .clone()
        .try_inverse()
        .ok_or(Error::RankDeficient { cond, cap: cond_cap })?;
    let k = users.users();
    let mut b = CMat::zeros(k, k);
    for j in 0..k {
        let c = (power_alloc[j] / inv[(j, j)].re).sqrt();
        for i in 0..k {
            b[(j, i)] = inv[(i, j)] * c;
        }
    }
    Ok(BeamformerSet { coefficients: b })
}

/// (I + Λ_μ R/σ²)⁻¹ for the Gram matrix and multipliers.
fn regularized_inverse(gram: &GramMatrix, multipliers: &[f64], noise_power: f64) -> Result<CMat> {
    let k = gram.matrix.nrows();
    let mut a = CMat::identity(k, k);
    for i in 0..k {
        for j in 0..k {
            a[(i, j)] += gram.matrix[(i, j)] * (multipliers[i] / noise_power);
        }
    }
    a.try_inverse().ok_or_else(|| Error::Numerical("I + Λ_μ R/σ² is singular".into()))
}

/// B = [(I + Λ_μ R/σ²)⁻¹ P]ᵀ with P = diag(scale).
pub fn mmse(users: &UserChannelSet, multipliers: &[f64], scale: &[f64]) -> Result<BeamformerSet> {
    let k = users.users();
    if multipliers.len() != k || scale.len() != k {
        return domain("multiplier and scale vectors must have one entry per user");
    }
    if let Some(m) = multipliers.iter().find(|m| !(**m >= 0.0 && m.is_finite())) {
        return domain(format!("multipliers must be finite and >= 0, got {m}"));
    }
    let r = gram_matrix(users);
    let m = regularized_inverse(&r, multipliers, users.noise_power)?;
    let p = CMat::from_diagonal(&CVec::from_iterator(k, scale.iter().map(|s| C64::from(*s))));
    Ok(BeamformerSet { coefficients: (m * p).transpose() })
}

/// SINR per user from Gram contractions.
pub fn sinr_from_gram(gram: &GramMatrix, beams: &BeamformerSet, noise_power: f64) -> Vec<f64> {
    let a = beams.responses(gram);
    let k = a.nrows();
    (0..k)
        .map(|i| {
            let signal = a[(i, i)].norm_sqr();
            let interference: f64 = (0..k).filter(|j| *j != i).map(|j| a[(i, j)].norm_sqr()).sum();
            signal / (interference + noise_power)
        })
        .collect()
}

pub fn sinr(users: &UserChannelSet, beams: &BeamformerSet) -> Vec<f64> {
    sinr_from_gram(&gram_matrix(users), beams, users.noise_power)
}

/// Per-user SINR targets γ̄_k > 0.
#[derive(Debug, Clone, PartialEq)]
pub struct SinrTargets {
    pub targets: Vec<f64>,
}

impl SinrTargets {
    pub fn new(targets: Vec<f64>) -> Result<Self> {
        if targets.is_empty() || targets.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            return domain("SINR targets must be positive and finite");
        }
        Ok(Self { targets })
    }

    pub fn uniform_db(users: usize, db: f64) -> Result<Self> {
        Self::new(vec![10f64.powf(db / 10.0); users])
    }
}

/// Outcome of the power-minimization fixed point.
#[derive(Debug, Clone)]
pub struct PowerMinResult {
    pub beamformers: BeamformerSet,
    pub multipliers: Vec<f64>,
    /// Σ_k b_kᴴ R b_k.
    pub total_power: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Total transmit power after each iteration.
    pub power_trace: Vec<f64>,
    /// max_k |γ_k^UL/γ̄_k − 1| after each iteration.
    pub residual_trace: Vec<f64>,
    pub diagnostics: Vec<String>,
}

pub const DEFAULT_POWER_MIN_TOL: f64 = 1e-4;
pub const DEFAULT_POWER_MIN_MAX_ITER: usize = 500;
pub const DEFAULT_POWER_MIN_DAMPING: f64 = 0.5;

// Unit-power directions and dual SINRs for a multiplier vector.
struct DualState {
    directions: Vec<CVec>,
    uplink_sinr: Vec<f64>,
}

fn dual_state(gram: &GramMatrix, mu: &[f64], noise: f64) -> Result<DualState> {
    let k = mu.len();
    let inv = regularized_inverse(gram, mu, noise)?;
    let mut directions = Vec::with_capacity(k);
    let mut uplink_sinr = Vec::with_capacity(k);
    for i in 0..k {
        let d = inv.column(i).into_owned();
        let rd = &gram.matrix * &d;
        let norm = d.dotc(&rd).re;
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::Numerical(format!("direction {i} has non-positive power {norm}")));
        }
        // t = μ_k (R d_k)_k / σ², and γ^UL = t/(1 − t).
        let t = (mu[i] * rd[i] / noise).re;
        uplink_sinr.push(if t < 1.0 { t / (1.0 - t) } else { f64::INFINITY });
        directions.push(d * C64::from(1.0 / norm.sqrt()));
    }
    Ok(DualState { directions, uplink_sinr })
}

// Downlink powers meeting every SINR target with equality along fixed unit directions.
fn downlink_powers(gram: &GramMatrix, dirs: &[CVec], targets: &[f64], noise: f64) -> Option<Vec<f64>> {
    let k = dirs.len();
    let resp: Vec<CVec> = dirs.iter().map(|u| &gram.matrix * u).collect();
    let mut a = nalgebra::DMatrix::<f64>::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            let g = resp[j][i].norm_sqr();
            a[(i, j)] = if i == j { g / targets[i] } else { -g };
        }
    }
    let p = a.lu().solve(&nalgebra::DVector::from_element(k, noise))?;
    if p.iter().all(|v| *v > 0.0 && v.is_finite()) {
        Some(p.iter().copied().collect())
    } else {
        None
    }
}

fn assemble(dirs: &[CVec], powers: &[f64]) -> BeamformerSet {
    let k = dirs.len();
    let b = CMat::from_fn(k, k, |i, j| dirs[i][j] * powers[i].sqrt());
    BeamformerSet { coefficients: b }
}

/// Minimizes total power subject to γ_k ≥ γ̄_k.
///
/// Multipliers follow μ_k ← μ_k (γ̄_k/γ_k^UL)^damping from a start above the
/// fixed point; beam directions are (I + Λ_μ R/σ²)⁻¹e_k and their magnitudes
/// meet the targets with equality.
pub fn power_min_solve(users: &UserChannelSet, targets: &SinrTargets, tol: f64, max_iter: usize, damping: f64) -> Result<PowerMinResult> {
    power_min_from_gram(&gram_matrix(users), users.noise_power, targets, tol, max_iter, damping)
}

pub fn power_min_from_gram(gram: &GramMatrix, noise: f64, targets: &SinrTargets, tol: f64, max_iter: usize, damping: f64) -> Result<PowerMinResult> {
    let k = gram.matrix.nrows();
    let tg = &targets.targets;
    if tg.len() != k {
        return domain(format!("{} targets for {} users", tg.len(), k));
    }
    if !(damping > 0.0 && damping <= 1.0) {
        return domain(format!("damping must lie in (0, 1], got {damping}"));
    }
    if !(tol > 0.0) {
        return domain("tolerance must be positive");
    }
    let mut diagnostics = Vec::new();
    let mut mu: Vec<f64> = (0..k).map(|i| tg[i] * noise / gram.matrix[(i, i)].re.max(f64::MIN_POSITIVE)).collect();
    let mut state = dual_state(gram, &mu, noise)?;
    let mut doublings = 0;
    while state.uplink_sinr.iter().zip(tg).any(|(g, t)| g < t) {
        if doublings >= 200 {
            if diagnostics.is_empty() {
                diagnostics.push("no multiplier scaling meets the targets; they appear infeasible".into());
            }
            return Ok(PowerMinResult {
                beamformers: BeamformerSet { coefficients: CMat::zeros(k, k) },
                multipliers: mu,
                total_power: 0.0,
                iterations: 0,
                converged: false,
                power_trace: Vec::new(),
                residual_trace: Vec::new(),
                diagnostics,
            });
        }
        mu.iter_mut().for_each(|m| *m *= 2.0);
        doublings += 1;
        match dual_state(gram, &mu, noise) {
            Ok(s) => state = s,
            Err(e) => {
                diagnostics.push(format!("multiplier scaling broke down ({e}); targets appear infeasible"));
                doublings = 200;
            }
        }
    }

    let mut power_trace = Vec::new();
    let mut residual_trace = Vec::new();
    let mut last_good: Option<(BeamformerSet, f64)> = None;
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=max_iter {
        iterations = it;
        for i in 0..k {
            let g = state.uplink_sinr[i];
            mu[i] *= if g.is_finite() { (tg[i] / g).powf(damping) } else { 0.5 };
        }
        if mu.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
            return Err(Error::Numerical(format!("multipliers became non-finite at iteration {it}: {mu:?}; power trace {power_trace:?}")));
        }
        state = dual_state(gram, &mu, noise)?;
        let residual = state.uplink_sinr.iter().zip(tg).map(|(g, t)| (g / t - 1.0).abs()).fold(0.0, f64::max);
        residual_trace.push(residual);
        match downlink_powers(gram, &state.directions, tg, noise) {
            Some(p) => {
                let total: f64 = p.iter().sum();
                power_trace.push(total);
                last_good = Some((assemble(&state.directions, &p), total));
                if residual < tol {
                    converged = true;
                    break;
                }
            }
            None => power_trace.push(f64::NAN),
        }
    }
    if !converged {
        diagnostics.push(format!(
            "not converged after {iterations} iterations; final residual {:.3e}",
            residual_trace.last().copied().unwrap_or(f64::NAN)
        ));
    }
    let (beamformers, total_power) = match last_good {
        Some(v) => v,
        None => {
            diagnostics.push("no iterate admitted positive downlink powers".into());
            (BeamformerSet { coefficients: CMat::zeros(k, k) }, 0.0)
        }
    };
    Ok(PowerMinResult { beamformers, multipliers: mu, total_power, iterations, converged, power_trace, residual_trace, diagnostics })
}

/// x = g + Σ a_k U_k with a = (I − C)⁻¹ b, b_j = ∫V_j g, c_jk = ∫V_j U_k.
pub fn fredholm_solve_second_kind(g: &[C64], u_list: &[Vec<C64>], v_list: &[Vec<C64>], grid: &ApertureGrid) -> Result<Vec<C64>> {
    let n = grid.len();
    if g.len() != n {
        return domain("g must be sampled on the grid");
    }
    if u_list.len() != v_list.len() {
        return domain("U and V lists must have equal length");
    }
    if u_list.iter().chain(v_list).any(|f| f.len() != n) {
        return domain("every U_k and V_k must be sampled on the grid");
    }
    let kp = u_list.len();
    if kp == 0 {
        return Ok(g.to_vec());
    }
    // ∫ f h without conjugation.
    let integ = |f: &[C64], h: &[C64]| -> C64 { f.iter().zip(h).zip(&grid.weights).map(|((a, b), w)| a * b * *w).sum() };
    let b = CVec::from_iterator(kp, v_list.iter().map(|v| integ(v, g)));
    let mut a_mat = CMat::identity(kp, kp);
    for j in 0..kp {
        for k in 0..kp {
            a_mat[(j, k)] -= integ(&v_list[j], &u_list[k]);
        }
    }
    let sv = a_mat.clone().singular_values();
    let smin = sv.min();
    if smin <= 1e-12 * sv.max().max(1.0) {
        return Err(Error::Resonance(smin));
    }
    let a = a_mat.lu().solve(&b).ok_or(Error::Resonance(smin))?;
    let mut x = g.to_vec();
    for (ak, u) in a.iter().zip(u_list) {
        for (xi, ui) in x.iter_mut().zip(u) {
            *xi += ak * ui;
        }
    }
    Ok(x)
}

/// Ridge solution of a first-kind equation on a Nyström discretization.
///
/// `operator` maps grid samples to grid samples, (Kx)_i = Σ_j operator[(i,j)] x_j
/// (quadrature weights already folded in). Minimizes the weighted
/// ‖Kx − g‖² + ρ‖x‖². First-kind inversion is ill-posed; ρ has no default.
pub fn fredholm_first_kind_ridge(operator: &CMat, g: &[C64], grid: &ApertureGrid, rho: f64) -> Result<Vec<C64>> {
    let n = grid.len();
    if operator.nrows() != n || operator.ncols() != n || g.len() != n {
        return domain("operator and g must match the grid");
    }
    if !(rho >= 0.0 && rho.is_finite()) {
        return domain(format!("ridge parameter must be finite and >= 0, got {rho}"));
    }
    let d: Vec<f64> = grid.weights.iter().map(|w| w.sqrt()).collect();
    let a = CMat::from_fn(n, n, |i, j| operator[(i, j)] * (d[i] / d[j]));
    let dg = CVec::from_iterator(n, g.iter().zip(&d).map(|(v, s)| v * *s));
    let mut normal = a.adjoint() * &a;
    let eig = SymmetricEigen::new(normal.clone()).eigenvalues;
    let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(l, h), v| (l.min(*v), h.max(*v)));
    if rho == 0.0 && lo <= 1e-12 * hi.max(f64::MIN_POSITIVE) {
        return Err(Error::RankDeficient { cond: if lo > 0.0 { hi / lo } else { f64::INFINITY }, cap: 1e12 });
    }
    for i in 0..n {
        normal[(i, i)] += C64::from(rho);
    }
    let rhs = a.adjoint() * dg;
    let y = normal
        .cholesky()
        .map(|c| c.solve(&rhs))
        .ok_or_else(|| Error::Numerical("ridge normal equations are not positive definite".into()))?;
    Ok(y.iter().zip(&d).map(|(v, s)| v / *s).collect())
}

/// Σ log₂(1 + γ_k).
pub fn sum_rate(sinrs: &[f64]) -> Result<f64> {
    if let Some(g) = sinrs.iter().find(|g| !(**g >= 0.0)) {
        return domain(format!("SINR must be >= 0, got {g}"));
    }
    Ok(sinrs.iter().map(|g| (1.0 + g).log2()).sum())
}
