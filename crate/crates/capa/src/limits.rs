//! Modal analysis, DoF counting and capacity limits.
//!
//! Operators are discretized with square-root weights, A = W_r^{1/2} H W_t^{1/2},
//! so matrix singular values approximate the L² operator singular values.
//! Covariance, noise and power-coupling kernels use the same Nyström form
//! W^{1/2} K W^{1/2}; a Dirac kernel c·δ maps to c·I.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::{Fft, FftPlanner};

use crate::channel::{los_kernel, sample_kernel, Kernel, PolarizationMode, UniPolLosChannel};
use crate::em_core::{Carrier, Orientation, PlanarAperture};
use crate::error::{config, domain, Error, Result};
use crate::quadrature::{aperture_grid, default_order, ApertureGrid};
use crate::{CMat, Vec3, C64};

/// Weighted kernel matrix between an rx and a tx grid.
#[derive(Debug, Clone)]
pub struct DiscretizedOperator {
    pub matrix: CMat,
    pub rx_grid: ApertureGrid,
    pub tx_grid: ApertureGrid,
}

pub fn discretize_operator(h: &dyn Kernel, tx_grid: &ApertureGrid, rx_grid: &ApertureGrid) -> Result<DiscretizedOperator> {
    let sampled = sample_kernel(h, rx_grid, tx_grid)?;
    let wr: Vec<f64> = rx_grid.weights.iter().map(|w| w.sqrt()).collect();
    let wt: Vec<f64> = tx_grid.weights.iter().map(|w| w.sqrt()).collect();
    let matrix = CMat::from_fn(rx_grid.len(), tx_grid.len(), |i, j| sampled.values[(i, j)] * (wr[i] * wt[j]));
    Ok(DiscretizedOperator { matrix, rx_grid: rx_grid.clone(), tx_grid: tx_grid.clone() })
}

/// Singular values (descending) and, for dense decompositions, singular functions.
#[derive(Debug, Clone)]
pub struct ModalDecomposition {
    pub singular_values: Vec<f64>,
    /// Columns φ_n sampled on the rx grid (unweighted).
    pub left: Option<CMat>,
    /// Columns ψ_n sampled on the tx grid (unweighted).
    pub right: Option<CMat>,
    pub rx_weights: Vec<f64>,
    pub tx_weights: Vec<f64>,
    /// True when only the leading part of the spectrum was computed.
    pub truncated: bool,
}

impl ModalDecomposition {
    pub fn from_singular_values(mut singular_values: Vec<f64>) -> Self {
        singular_values.sort_by(|a, b| b.total_cmp(a));
        Self { singular_values, left: None, right: None, rx_weights: Vec::new(), tx_weights: Vec::new(), truncated: false }
    }

    /// μ_n = σ_n²/σ_1².
    pub fn normalized(&self) -> Vec<f64> {
        let s1 = self.singular_values.first().copied().unwrap_or(0.0);
        if s1 <= 0.0 {
            return vec![0.0; self.singular_values.len()];
        }
        self.singular_values.iter().map(|s| (s / s1).powi(2)).collect()
    }
}

pub fn modal_decomposition(op: &DiscretizedOperator) -> Result<ModalDecomposition> {
    if op.matrix.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
        return Err(Error::Numerical("operator matrix has non-finite entries".into()));
    }
    let svd = op
        .matrix
        .clone()
        .try_svd(true, true, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Numerical("SVD did not converge".into()))?;
    let u = svd.u.ok_or_else(|| Error::Numerical("SVD returned no left vectors".into()))?;
    let vt = svd.v_t.ok_or_else(|| Error::Numerical("SVD returned no right vectors".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|a, b| svd.singular_values[*b].total_cmp(&svd.singular_values[*a]));
    let wr: Vec<f64> = op.rx_grid.weights.iter().map(|w| w.sqrt()).collect();
    let wt: Vec<f64> = op.tx_grid.weights.iter().map(|w| w.sqrt()).collect();
    let left = CMat::from_fn(u.nrows(), order.len(), |i, n| u[(i, order[n])] / wr[i]);
    let right = CMat::from_fn(vt.ncols(), order.len(), |j, n| vt[(order[n], j)].conj() / wt[j]);
    Ok(ModalDecomposition {
        singular_values: order.iter().map(|&n| svd.singular_values[n]).collect(),
        left: Some(left),
        right: Some(right),
        rx_weights: op.rx_grid.weights.clone(),
        tx_weights: op.tx_grid.weights.clone(),
        truncated: false,
    })
}

/// Singular values only; much cheaper than [`modal_decomposition`] for large grids.
pub fn modal_spectrum(op: &DiscretizedOperator) -> Result<ModalDecomposition> {
    if op.matrix.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
        return Err(Error::Numerical("operator matrix has non-finite entries".into()));
    }
    let mut sv: Vec<f64> = op
        .matrix
        .clone()
        .try_svd(false, false, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Numerical("SVD did not converge".into()))?
        .singular_values
        .iter()
        .copied()
        .collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    Ok(ModalDecomposition {
        singular_values: sv,
        left: None,
        right: None,
        rx_weights: op.rx_grid.weights.clone(),
        tx_weights: op.tx_grid.weights.clone(),
        truncated: false,
    })
}

/// Number of modes with σ_n²/σ_1² ≥ threshold.
pub fn dof_count(modes: &ModalDecomposition, threshold: f64) -> Result<usize> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return domain(format!("threshold must lie in (0, 1), got {threshold}"));
    }
    if !modes.singular_values.iter().any(|s| *s > 0.0) {
        return domain("spectrum has no positive singular value");
    }
    Ok(modes.normalized().iter().filter(|m| **m >= threshold).count())
}

/// A_tA_r|det C∥|/(λ²D²).
pub fn landau_dof(tx: &PlanarAperture, rx: &PlanarAperture, distance_m: f64, carrier: &Carrier, orientation: &Orientation) -> f64 {
    let lam = carrier.lambda();
    tx.area() * rx.area() * orientation.in_plane_det() / (lam * lam * distance_m * distance_m)
}

/// min(|A_t||D_t|, |A_r||D_r|)/(2π)².
pub fn multipath_dof_bound(tx_area: f64, rx_area: f64, tx_angular_area: f64, rx_angular_area: f64, carrier: &Carrier) -> Result<f64> {
    let disk = PI * carrier.k0().powi(2);
    for (name, v) in [("tx area", tx_area), ("rx area", rx_area), ("tx angular area", tx_angular_area), ("rx angular area", rx_angular_area)] {
        if !(v >= 0.0 && v.is_finite()) {
            return domain(format!("{name} must be finite and >= 0, got {v}"));
        }
    }
    for (name, v) in [("tx", tx_angular_area), ("rx", rx_angular_area)] {
        if v > disk * (1.0 + 1e-12) {
            return domain(format!("{name} angular area {v:.6e} exceeds the radiating disk {disk:.6e}"));
        }
    }
    let four_pi2 = 4.0 * PI * PI;
    Ok((tx_area * tx_angular_area / four_pi2).min(rx_area * rx_angular_area / four_pi2))
}

/// Water-filling allocation over a spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct Waterfill {
    pub powers: Vec<f64>,
    pub capacity_bits: f64,
    pub water_level: f64,
}

pub fn waterfill(modes: &ModalDecomposition, total_power: f64, noise_level: f64) -> Result<Waterfill> {
    waterfill_sigmas(&modes.singular_values, total_power, noise_level)
}

/// P_n = (μ − N0/σ_n²)⁺ with Σ P_n = P_t; μ by bisection, then exact on the active set.
pub fn waterfill_sigmas(sigmas: &[f64], total_power: f64, noise_level: f64) -> Result<Waterfill> {
    if !(total_power > 0.0 && total_power.is_finite()) {
        return domain(format!("total power must be positive, got {total_power}"));
    }
    if !(noise_level > 0.0 && noise_level.is_finite()) {
        return domain(format!("noise level must be positive, got {noise_level}"));
    }
    let s_max = sigmas.iter().copied().fold(0.0, f64::max);
    if !(s_max > 0.0) {
        return domain("all singular values are zero");
    }
    let thresholds: Vec<f64> = sigmas.iter().map(|s| if *s > 0.0 { noise_level / (s * s) } else { f64::INFINITY }).collect();
    let filled = |mu: f64| -> f64 { thresholds.iter().map(|t| (mu - t).max(0.0)).sum() };
    let mut lo = noise_level / (s_max * s_max);
    let mut hi = lo + total_power;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if filled(mid) < total_power {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    let mut mu = 0.5 * (lo + hi);
    // Exact level on the active set; repeat while the set changes.
    for _ in 0..sigmas.len() + 1 {
        let active: Vec<f64> = thresholds.iter().copied().filter(|t| *t < mu).collect();
        let exact = (total_power + active.iter().sum::<f64>()) / active.len() as f64;
        let same = thresholds.iter().all(|t| (*t < mu) == (*t < exact));
        mu = exact;
        if same {
            break;
        }
    }
    let powers: Vec<f64> = thresholds.iter().map(|t| (mu - t).max(0.0)).collect();
    let capacity_bits = sigmas.iter().zip(&powers).map(|(s, p)| (1.0 + s * s * p / noise_level).log2()).sum();
    Ok(Waterfill { powers, capacity_bits, water_level: mu })
}

/// Σ_{√P σ_n > ε} log₂(√P σ_n/ε).
pub fn kolmogorov_capacity(modes: &ModalDecomposition, total_power: f64, epsilon: f64) -> Result<f64> {
    kolmogorov_sigmas(&modes.singular_values, total_power, epsilon)
}

pub fn kolmogorov_sigmas(sigmas: &[f64], total_power: f64, epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0) {
        return domain(format!("epsilon must be positive, got {epsilon}"));
    }
    if !(total_power >= 0.0) {
        return domain(format!("power must be >= 0, got {total_power}"));
    }
    let sp = total_power.sqrt();
    Ok(sigmas.iter().map(|s| sp * s / epsilon).filter(|r| *r > 1.0).map(f64::log2).sum())
}

fn hermitian_eigen(m: &CMat) -> SymmetricEigen<C64, nalgebra::Dyn> {
    SymmetricEigen::new((m + m.adjoint()) * C64::from(0.5))
}

/// Σ log₂(1 + λ_m) of A Q Aᴴ/N0, with Q the Nyström-form input covariance.
///
/// `power_budget`, when given, bounds tr(Q) (the transmitted power) up to 1e-9.
pub fn mutual_information(op: &DiscretizedOperator, input_covariance: &CMat, noise_level: f64, power_budget: Option<f64>) -> Result<f64> {
    let nt = op.matrix.ncols();
    if input_covariance.nrows() != nt || input_covariance.ncols() != nt {
        return domain("input covariance must match the tx grid");
    }
    if !(noise_level > 0.0) {
        return domain("noise level must be positive");
    }
    let scale = input_covariance.norm().max(f64::MIN_POSITIVE);
    if (input_covariance - input_covariance.adjoint()).norm() > 1e-10 * scale {
        return domain("input covariance is not Hermitian");
    }
    let trace: f64 = (0..nt).map(|i| input_covariance[(i, i)].re).sum();
    let eig = hermitian_eigen(input_covariance).eigenvalues;
    if eig.iter().any(|e| *e < -1e-10 * trace.abs().max(scale)) {
        return domain("input covariance is not positive semidefinite");
    }
    if let Some(p) = power_budget {
        if trace > p + 1e-9 * p.abs().max(1.0) {
            return domain(format!("input covariance trace {trace:.6e} exceeds the power budget {p:.6e}"));
        }
    }
    let rx_cov = &op.matrix * input_covariance * op.matrix.adjoint() * C64::from(1.0 / noise_level);
    Ok(hermitian_eigen(&rx_cov).eigenvalues.iter().map(|l| (1.0 + l.max(0.0)).log2()).sum())
}

/// Nyström form of a sampled kernel: W^{1/2} K W^{1/2}, Hermitized.
pub fn kernel_operator(samples: &CMat, grid: &ApertureGrid) -> Result<CMat> {
    let n = grid.len();
    if samples.nrows() != n || samples.ncols() != n {
        return domain("kernel samples must be square on the grid");
    }
    let w: Vec<f64> = grid.weights.iter().map(|v| v.sqrt()).collect();
    let m = CMat::from_fn(n, n, |i, j| samples[(i, j)] * (w[i] * w[j]));
    Ok((&m + m.adjoint()) * C64::from(0.5))
}

// Clips negative eigenvalues; returns the projected matrix and whether anything was clipped.
fn project_psd(m: &CMat) -> (CMat, bool) {
    let e = hermitian_eigen(m);
    let clipped = e.eigenvalues.iter().any(|v| *v < 0.0);
    if !clipped {
        return (m.clone(), false);
    }
    let d = CMat::from_diagonal(&e.eigenvalues.map(|v| C64::from(v.max(0.0))));
    (&e.eigenvectors * d * e.eigenvectors.adjoint(), true)
}

/// Transmit power-coupling kernel R_t.
#[derive(Debug, Clone)]
pub enum PowerCouplingKernel {
    /// R_t = δ, so the physical power is ∫|x|².
    Identity,
    Sampled { operator: CMat, psd_projected: bool },
}

impl PowerCouplingKernel {
    pub fn from_samples(samples: &CMat, grid: &ApertureGrid) -> Result<Self> {
        let (operator, psd_projected) = project_psd(&kernel_operator(samples, grid)?);
        Ok(PowerCouplingKernel::Sampled { operator, psd_projected })
    }
}

/// Receive noise covariance kernel K_n.
#[derive(Debug, Clone)]
pub enum NoiseKernel {
    /// K_n = N0 δ.
    White { n0: f64 },
    Sampled { operator: CMat, psd_projected: bool },
}

impl NoiseKernel {
    pub fn from_samples(samples: &CMat, grid: &ApertureGrid) -> Result<Self> {
        let (operator, psd_projected) = project_psd(&kernel_operator(samples, grid)?);
        Ok(NoiseKernel::Sampled { operator, psd_projected })
    }
}

/// K^{-1/2} on the positive subspace; eigenvalues below 1e-12·max are excluded.
pub fn inverse_sqrt_psd(m: &CMat) -> Result<CMat> {
    let e = hermitian_eigen(m);
    let max = e.eigenvalues.iter().copied().fold(0.0, f64::max);
    if !(max > 0.0) {
        return domain("kernel has no positive subspace");
    }
    let floor = 1e-12 * max;
    let d = CMat::from_diagonal(&e.eigenvalues.map(|v| if v > floor { C64::from(1.0 / v.sqrt()) } else { C64::new(0.0, 0.0) }));
    Ok(&e.eigenvectors * d * e.eigenvectors.adjoint())
}

/// h̄ = K_n^{-1/2} H R_t^{-1/2} on the discretized operator.
pub fn whiten(op: &DiscretizedOperator, r_t: &PowerCouplingKernel, k_n: &NoiseKernel) -> Result<DiscretizedOperator> {
    let mut m = op.matrix.clone();
    match k_n {
        NoiseKernel::White { n0 } => {
            if !(*n0 > 0.0) {
                return domain(format!("white noise level must be positive, got {n0}"));
            }
            m *= C64::from(1.0 / n0.sqrt());
        }
        NoiseKernel::Sampled { operator, .. } => {
            if operator.nrows() != m.nrows() {
                return domain("noise kernel does not match the rx grid");
            }
            m = inverse_sqrt_psd(operator)? * m;
        }
    }
    if let PowerCouplingKernel::Sampled { operator, .. } = r_t {
        if operator.nrows() != m.ncols() {
            return domain("power-coupling kernel does not match the tx grid");
        }
        m *= inverse_sqrt_psd(operator)?;
    }
    Ok(DiscretizedOperator { matrix: m, rx_grid: op.rx_grid.clone(), tx_grid: op.tx_grid.clone() })
}

/// Dense Gauss-Legendre Nyström of the uni-polarized LoS kernel.
pub fn los_operator(tx: &PlanarAperture, rx: &PlanarAperture, carrier: &Carrier, order: usize) -> Result<DiscretizedOperator> {
    let link = UniPolLosChannel::new(*tx, *rx, *carrier, PolarizationMode::Simplified)?;
    let tg = aperture_grid(tx, order)?;
    let rg = aperture_grid(rx, order)?;
    let h = move |r: &Vec3, s: &Vec3| los_kernel(&link, r, s);
    discretize_operator(&h, &tg, &rg)
}

// ---------------------------------------------------------------------------
// Fast path: congruent parallel apertures on uniform midpoint grids.

struct Fft2 {
    p: usize,
    q: usize,
    fx: Arc<dyn Fft<f64>>,
    fz: Arc<dyn Fft<f64>>,
    ix: Arc<dyn Fft<f64>>,
    iz: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    fn new(p: usize, q: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self { p, q, fx: planner.plan_fft_forward(p), fz: planner.plan_fft_forward(q), ix: planner.plan_fft_inverse(p), iz: planner.plan_fft_inverse(q) }
    }

    // In-place 2-D transform of a q×p array stored with x fastest.
    fn run(&self, data: &mut [C64], inverse: bool) {
        let (fx, fz) = if inverse { (&self.ix, &self.iz) } else { (&self.fx, &self.fz) };
        for row in data.chunks_exact_mut(self.p) {
            fx.process(row);
        }
        let mut col = vec![C64::new(0.0, 0.0); self.q];
        for x in 0..self.p {
            for z in 0..self.q {
                col[z] = data[z * self.p + x];
            }
            fz.process(&mut col);
            for z in 0..self.q {
                data[z * self.p + x] = col[z];
            }
        }
    }
}

/// A = w·T for a block-Toeplitz T[i, j] = h(r_i − s_j) on congruent uniform grids.
pub struct ToeplitzOperator {
    nx: usize,
    nz: usize,
    weight: f64,
    fft: Fft2,
    kernel_hat: Vec<C64>,
    adjoint_hat: Vec<C64>,
}

impl ToeplitzOperator {
    /// Samples `h_disp(r − s)` over all node offsets of `nx`×`nz` midpoint grids.
    pub fn new<F>(tx: &PlanarAperture, rx: &PlanarAperture, nx: usize, nz: usize, h_disp: F) -> Result<Self>
    where
        F: Fn(&Vec3) -> Result<C64>,
    {
        if !congruent_parallel(tx, rx) {
            return config("the FFT path needs parallel apertures of identical size and orientation");
        }
        if nx == 0 || nz == 0 {
            return config("FFT grid needs at least one cell per axis");
        }
        let px = tx.len_x_m / nx as f64;
        let pz = tx.len_z_m / nz as f64;
        let (ux, _, uz) = tx.orientation.axes();
        let base = rx.center_m - tx.center_m;
        let p = (2 * nx - 1).next_power_of_two().max(2);
        let q = (2 * nz - 1).next_power_of_two().max(2);
        let fft = Fft2::new(p, q);
        let mut kern = vec![C64::new(0.0, 0.0); p * q];
        let mut adj = vec![C64::new(0.0, 0.0); p * q];
        let wrap = |d: i64, n: usize| -> usize { d.rem_euclid(n as i64) as usize };
        for dz in -(nz as i64 - 1)..=(nz as i64 - 1) {
            for dx in -(nx as i64 - 1)..=(nx as i64 - 1) {
                let disp = base + ux * (dx as f64 * px) + uz * (dz as f64 * pz);
                let v = h_disp(&disp)?;
                if !(v.re.is_finite() && v.im.is_finite()) {
                    return Err(Error::Numerical(format!("non-finite kernel value at offset ({dx}, {dz})")));
                }
                kern[wrap(dz, q) * p + wrap(dx, p)] = v;
                adj[wrap(-dz, q) * p + wrap(-dx, p)] = v.conj();
            }
        }
        fft.run(&mut kern, false);
        fft.run(&mut adj, false);
        Ok(Self { nx, nz, weight: px * pz, fft, kernel_hat: kern, adjoint_hat: adj })
    }

    pub fn dim(&self) -> usize {
        self.nx * self.nz
    }

    fn convolve(&self, hat: &[C64], x: &[C64]) -> Vec<C64> {
        let (p, q) = (self.fft.p, self.fft.q);
        let mut buf = vec![C64::new(0.0, 0.0); p * q];
        for z in 0..self.nz {
            buf[z * p..z * p + self.nx].copy_from_slice(&x[z * self.nx..(z + 1) * self.nx]);
        }
        self.fft.run(&mut buf, false);
        for (b, k) in buf.iter_mut().zip(hat) {
            *b *= k;
        }
        self.fft.run(&mut buf, true);
        let norm = self.weight / (p * q) as f64;
        let mut out = Vec::with_capacity(self.dim());
        for z in 0..self.nz {
            out.extend(buf[z * p..z * p + self.nx].iter().map(|v| v * norm));
        }
        out
    }

    /// A x.
    pub fn apply(&self, x: &[C64]) -> Vec<C64> {
        self.convolve(&self.kernel_hat, x)
    }

    /// Aᴴ y.
    pub fn apply_adjoint(&self, y: &[C64]) -> Vec<C64> {
        self.convolve(&self.adjoint_hat, y)
    }

    fn apply_block(&self, x: &CMat, adjoint: bool) -> CMat {
        let cols: Vec<Vec<C64>> = (0..x.ncols())
            .map(|c| {
                let col: Vec<C64> = x.column(c).iter().copied().collect();
                if adjoint {
                    self.apply_adjoint(&col)
                } else {
                    self.apply(&col)
                }
            })
            .collect();
        CMat::from_fn(self.dim(), x.ncols(), |i, c| cols[c][i])
    }

    /// Leading singular values by randomized subspace iteration.
    pub fn top_singular_values(&self, rank: usize, power_iters: usize, seed: u64) -> Result<Vec<f64>> {
        let n = self.dim();
        let l = rank.min(n);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let omega = CMat::from_fn(n, l, |_, _| {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            C64::new(re, im)
        });
        let orth = |m: CMat| -> CMat { m.qr().q() };
        let mut qm = orth(self.apply_block(&omega, false));
        for _ in 0..power_iters {
            let z = orth(self.apply_block(&qm, true));
            qm = orth(self.apply_block(&z, false));
        }
        // σ(QᴴA) from the l×l Gram matrix of Aᴴ Q.
        let bt = self.apply_block(&qm, true);
        let gram = bt.adjoint() * &bt;
        let mut sv: Vec<f64> = hermitian_eigen(&gram).eigenvalues.iter().map(|e| e.max(0.0).sqrt()).collect();
        if sv.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("randomized SVD produced non-finite values".into()));
        }
        sv.sort_by(|a, b| b.total_cmp(a));
        Ok(sv)
    }
}

/// Same size and orientation; the FFT path needs identical node pitch on both sides.
pub fn congruent_parallel(tx: &PlanarAperture, rx: &PlanarAperture) -> bool {
    let same_len = (tx.len_x_m - rx.len_x_m).abs() <= 1e-12 * tx.len_x_m && (tx.len_z_m - rx.len_z_m).abs() <= 1e-12 * tx.len_z_m;
    same_len && (tx.orientation.matrix - rx.orientation.matrix).abs().max() <= 1e-12
}

/// How the LoS spectrum is computed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DofMethod {
    /// Dense Gauss-Legendre Nyström with an order×order rule per aperture.
    DenseGaussLegendre { order: usize },
    /// Midpoint grid, FFT matvecs, randomized leading singular values.
    FftMidpoint { cells_x: usize, cells_z: usize },
}

/// Largest node count per side handled by the dense path in [`auto_dof_method`].
pub const DENSE_NODE_LIMIT: usize = 2_500;

/// Dense GL at the λ/4 rule when small enough, else the FFT path when eligible.
pub fn auto_dof_method(tx: &PlanarAperture, rx: &PlanarAperture, carrier: &Carrier) -> Result<DofMethod> {
    let order = default_order(tx, carrier)?.max(default_order(rx, carrier)?);
    if order * order <= DENSE_NODE_LIMIT {
        return Ok(DofMethod::DenseGaussLegendre { order });
    }
    if congruent_parallel(tx, rx) {
        let q = 0.25 * carrier.lambda();
        return Ok(DofMethod::FftMidpoint { cells_x: (tx.len_x_m / q).ceil() as usize, cells_z: (tx.len_z_m / q).ceil() as usize });
    }
    config(format!(
        "dense Nystrom would need {} nodes per side and the apertures are not congruent and parallel",
        order * order
    ))
}

/// Leading LoS spectrum; the FFT path grows its sketch until μ_last < 0.1·threshold.
pub fn los_spectrum(tx: &PlanarAperture, rx: &PlanarAperture, carrier: &Carrier, method: DofMethod, threshold: f64, seed: u64) -> Result<ModalDecomposition> {
    match method {
        DofMethod::DenseGaussLegendre { order } => modal_spectrum(&los_operator(tx, rx, carrier, order)?),
        DofMethod::FftMidpoint { cells_x, cells_z } => {
            let c = *carrier;
            let k = c.k0();
            let eta = c.impedance_ohm;
            let h = move |d: &Vec3| -> Result<C64> {
                let r = d.norm();
                if !(r > 0.0) {
                    return domain("LoS kernel evaluated at coincident points");
                }
                Ok(C64::new(0.0, -eta * k / (4.0 * PI * r)) * C64::from_polar(1.0, -k * r))
            };
            if tx.intersects(rx) {
                return domain("transmit and receive apertures intersect");
            }
            let op = ToeplitzOperator::new(tx, rx, cells_x, cells_z, h)?;
            let guess = (axis_distance(tx, rx).map(|d| landau_dof(tx, rx, d, carrier, &rx.orientation)).unwrap_or(10.0)).ceil() as usize;
            let mut rank = (guess + guess / 2 + 20).min(op.dim());
            loop {
                let sv = op.top_singular_values(rank, 3, seed)?;
                let m = ModalDecomposition::from_singular_values(sv);
                let last = m.normalized().last().copied().unwrap_or(0.0);
                if last < 0.1 * threshold || rank == op.dim() {
                    let truncated = rank < op.dim();
                    return Ok(ModalDecomposition { truncated, ..m });
                }
                rank = (rank * 2).min(op.dim());
            }
        }
    }
}

// Separation along the tx normal, when the apertures face each other.
fn axis_distance(tx: &PlanarAperture, rx: &PlanarAperture) -> Option<f64> {
    let d = (rx.center_m - tx.center_m).dot(&tx.normal()).abs();
    (d > 0.0).then_some(d)
}

/// One row of a DoF sweep.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct DofRow {
    pub distance_m: f64,
    pub landau: f64,
    pub numeric_dof: usize,
    pub sigma_1: f64,
    pub capacity_bits: f64,
}

/// Landau prediction, numeric DoF and water-filling capacity for broadside apertures.
pub fn los_dof_row(tx: &PlanarAperture, rx: &PlanarAperture, carrier: &Carrier, threshold: f64, total_power: f64, noise_level: f64, method: DofMethod) -> Result<DofRow> {
    let distance_m = axis_distance(tx, rx).ok_or_else(|| Error::Domain("apertures share a plane".into()))?;
    let modes = los_spectrum(tx, rx, carrier, method, threshold, 0x5eed)?;
    let numeric_dof = dof_count(&modes, threshold)?;
    let wf = waterfill(&modes, total_power, noise_level)?;
    Ok(DofRow {
        distance_m,
        landau: landau_dof(tx, rx, distance_m, carrier, &rx.orientation),
        numeric_dof,
        sigma_1: modes.singular_values[0],
        capacity_bits: wf.capacity_bits,
    })
}

/// Real spectrum helper for tests and callers: σ from a dense matrix.
pub fn singular_values(m: &DMatrix<C64>) -> Vec<f64> {
    let mut v: Vec<f64> = m.singular_values().iter().copied().collect();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}
