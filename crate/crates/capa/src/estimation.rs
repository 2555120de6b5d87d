//! Dictionary-based sparse channel estimation.
//!
//! Every atom is a product φ(r,s) = f_r(r)·f_t(s), so a sensing entry
//! ∬ b_l*(r) φ(r,s) w_l(s) splits into two single-aperture integrals.
//! Atoms are unit-normalized for sensing; reconstruction reapplies the
//! normalization to the raw atoms.

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::channel::{sample_kernel, Kernel};
use crate::em_core::{Carrier, PlanarAperture};
use crate::error::{config, domain, Error, Result};
use crate::quadrature::ApertureGrid;
use crate::wavenumber::WavenumberGrid;
use crate::{CMat, CVec, Vec3, C64};

/// Largest dictionary built without an explicit budget.
pub const DEFAULT_ATOM_BUDGET: usize = 50_000;

/// Relative residual used when no sparsity budget is given.
pub const DEFAULT_RESIDUAL_FRACTION: f64 = 1e-6;

/// Support matrices with a larger condition number are rejected by the refit.
pub const REFIT_COND_CAP: f64 = 1e12;

/// Physical parameters of one atom.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AtomKind {
    /// a_r(r;k)·a_t*(s;κ); `rx_index`/`tx_index` address the wavenumber grids.
    FarField { k: Vector2<f64>, kappa: Vector2<f64>, rx_index: usize, tx_index: usize },
    /// Spherical waves through a focal point q.
    NearField { focal: Vec3 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DictionaryAtom {
    pub kind: AtomKind,
    /// L² norm of the raw atom over the aperture pair.
    pub l2_norm: f64,
    pub rx: PlanarAperture,
    pub tx: PlanarAperture,
    pub k0: f64,
}

impl DictionaryAtom {
    pub fn rx_factor(&self, r: &Vec3) -> C64 {
        match self.kind {
            AtomKind::FarField { k, .. } => C64::from_polar(1.0, k.dot(&self.rx.to_local(r).0)),
            AtomKind::NearField { focal } => spherical(self.k0, (r - focal).norm()),
        }
    }

    pub fn tx_factor(&self, s: &Vec3) -> C64 {
        match self.kind {
            AtomKind::FarField { kappa, .. } => C64::from_polar(1.0, -kappa.dot(&self.tx.to_local(s).0)),
            AtomKind::NearField { focal } => spherical(self.k0, (focal - s).norm()),
        }
    }

    /// Raw atom value φ(r,s).
    pub fn eval(&self, r: &Vec3, s: &Vec3) -> C64 {
        self.rx_factor(r) * self.tx_factor(s)
    }

    /// φ(r,s)/‖φ‖.
    pub fn eval_normalized(&self, r: &Vec3, s: &Vec3) -> C64 {
        self.eval(r, s) / self.l2_norm
    }
}

fn spherical(k0: f64, d: f64) -> C64 {
    C64::from_polar(1.0 / d, -k0 * d)
}

/// Atoms plus the quadrature grids their norms and sensing rows use.
#[derive(Debug, Clone)]
pub struct Dictionary {
    pub atoms: Vec<DictionaryAtom>,
    pub rx_grid: ApertureGrid,
    pub tx_grid: ApertureGrid,
}

impl Dictionary {
    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Normalized factor samples: (rx rows, tx rows), one row per atom.
    fn factor_samples(&self) -> (Vec<Vec<C64>>, Vec<Vec<C64>>) {
        self.atoms
            .par_iter()
            .map(|a| {
                let scale = 1.0 / a.l2_norm.sqrt();
                let fr = self.rx_grid.nodes.iter().map(|n| a.rx_factor(&n.global) * scale).collect();
                let ft = self.tx_grid.nodes.iter().map(|n| a.tx_factor(&n.global) * scale).collect();
                (fr, ft)
            })
            .unzip()
    }
}

fn factor_norm(grid: &ApertureGrid, f: impl Fn(&Vec3) -> C64) -> f64 {
    grid.nodes.iter().zip(&grid.weights).map(|(n, w)| w * f(&n.global).norm_sqr()).sum::<f64>().sqrt()
}

fn finish_atom(kind: AtomKind, rx_grid: &ApertureGrid, tx_grid: &ApertureGrid, k0: f64) -> Result<DictionaryAtom> {
    let mut atom = DictionaryAtom { kind, l2_norm: 1.0, rx: rx_grid.aperture, tx: tx_grid.aperture, k0 };
    let norm = factor_norm(rx_grid, |r| atom.rx_factor(r)) * factor_norm(tx_grid, |s| atom.tx_factor(s));
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::Numerical(format!("atom {kind:?} has norm {norm}")));
    }
    atom.l2_norm = norm;
    Ok(atom)
}

/// Lattice with spacing divided by `factor`, clipped to the radiating disk.
/// Factors that divide one another give nested grids.
pub fn refine_grid(grid: &WavenumberGrid, factor: usize) -> Result<WavenumberGrid> {
    if factor == 0 {
        return config("refinement factor must be at least 1");
    }
    let f = factor as f64;
    let spacing = (grid.spacing.0 / f, grid.spacing.1 / f);
    let k0 = grid.carrier.k0();
    let mmax = (k0 / spacing.0).floor() as i64;
    let nmax = (k0 / spacing.1).floor() as i64;
    let rim = k0 * k0 * (1.0 + 1e-12);
    let mut indices = Vec::new();
    for n in -nmax..=nmax {
        for m in -mmax..=mmax {
            let (kx, kz) = (m as f64 * spacing.0, n as f64 * spacing.1);
            if kx * kx + kz * kz <= rim {
                indices.push((m, n));
            }
        }
    }
    Ok(WavenumberGrid { aperture: grid.aperture, carrier: grid.carrier, spacing, indices })
}

/// One plane-wave pair per (rx wavenumber, tx wavenumber), rx index outer:
/// atom i ↔ (i / |W_t|, i % |W_t|).
pub fn farfield_dictionary(
    tx_wavenumbers: &WavenumberGrid,
    rx_wavenumbers: &WavenumberGrid,
    tx_grid: &ApertureGrid,
    rx_grid: &ApertureGrid,
    budget: usize,
) -> Result<Dictionary> {
    if tx_wavenumbers.is_empty() || rx_wavenumbers.is_empty() {
        return domain("far-field dictionary needs nonempty wavenumber grids");
    }
    if tx_wavenumbers.aperture != tx_grid.aperture || rx_wavenumbers.aperture != rx_grid.aperture {
        return domain("wavenumber grids and quadrature grids belong to different apertures");
    }
    let count = tx_wavenumbers.len() * rx_wavenumbers.len();
    if count > budget {
        return config(format!("far-field dictionary needs {count} atoms, budget is {budget}"));
    }
    let k0 = rx_wavenumbers.carrier.k0();
    let nt = tx_wavenumbers.len();
    let atoms = (0..count)
        .into_par_iter()
        .map(|i| {
            let (p, q) = (i / nt, i % nt);
            let kind = AtomKind::FarField {
                k: rx_wavenumbers.wavevector(p),
                kappa: tx_wavenumbers.wavevector(q),
                rx_index: p,
                tx_index: q,
            };
            finish_atom(kind, rx_grid, tx_grid, k0)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dictionary { atoms, rx_grid: rx_grid.clone(), tx_grid: tx_grid.clone() })
}

/// One spherical-wave atom per candidate focal point.
pub fn nearfield_dictionary(
    candidates: &[Vec3],
    carrier: &Carrier,
    tx_grid: &ApertureGrid,
    rx_grid: &ApertureGrid,
) -> Result<Dictionary> {
    if candidates.is_empty() {
        return domain("near-field dictionary needs at least one candidate point");
    }
    let on = |ap: &PlanarAperture, q: &Vec3| {
        let (local, h) = ap.to_local(q);
        h.abs() <= 1e-12 * ap.diameter().max(1.0) && ap.contains_local(&local)
    };
    for (i, q) in candidates.iter().enumerate() {
        if on(&tx_grid.aperture, q) || on(&rx_grid.aperture, q) {
            return domain(format!("candidate {i} at {q:?} lies on an aperture"));
        }
    }
    let k0 = carrier.k0();
    let atoms = candidates
        .par_iter()
        .map(|q| finish_atom(AtomKind::NearField { focal: *q }, rx_grid, tx_grid, k0))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dictionary { atoms, rx_grid: rx_grid.clone(), tx_grid: tx_grid.clone() })
}

/// Pilot currents w_l and combiners b_l, sampled on the dictionary grids.
#[derive(Debug, Clone)]
pub struct PilotSchedule {
    pub combiners: Vec<Vec<C64>>,
    pub currents: Vec<Vec<C64>>,
    pub noise_level: f64,
    /// ∫|w_l|² per slot.
    pub pilot_energy: Vec<f64>,
    /// ∫|b_l|² per slot.
    pub combiner_energy: Vec<f64>,
}

impl PilotSchedule {
    pub fn new(
        combiners: Vec<Vec<C64>>,
        currents: Vec<Vec<C64>>,
        noise_level: f64,
        rx_grid: &ApertureGrid,
        tx_grid: &ApertureGrid,
    ) -> Result<Self> {
        if combiners.is_empty() || combiners.len() != currents.len() {
            return domain(format!("{} combiners for {} pilot slots", combiners.len(), currents.len()));
        }
        if !(noise_level >= 0.0 && noise_level.is_finite()) {
            return domain(format!("noise level must be non-negative, got {noise_level}"));
        }
        if combiners.iter().any(|b| b.len() != rx_grid.len()) || currents.iter().any(|w| w.len() != tx_grid.len()) {
            return domain("pilot samples do not match the grid sizes");
        }
        let pilot_energy = currents.iter().map(|w| tx_grid.norm_sqr(w)).collect();
        let combiner_energy = combiners.iter().map(|b| rx_grid.norm_sqr(b)).collect();
        Ok(Self { combiners, currents, noise_level, pilot_energy, combiner_energy })
    }

    /// τ_p slots of independent random-phase profiles with unit energy.
    pub fn random(tau_p: usize, rx_grid: &ApertureGrid, tx_grid: &ApertureGrid, noise_level: f64, seed: u64) -> Result<Self> {
        if tau_p == 0 {
            return domain("at least one pilot slot is required");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut profile = |grid: &ApertureGrid| -> Vec<C64> {
            let amp = 1.0 / grid.total_weight().sqrt();
            (0..grid.len()).map(|_| C64::from_polar(amp, rng.random_range(0.0..2.0 * PI))).collect()
        };
        let mut combiners = Vec::with_capacity(tau_p);
        let mut currents = Vec::with_capacity(tau_p);
        for _ in 0..tau_p {
            combiners.push(profile(rx_grid));
            currents.push(profile(tx_grid));
        }
        Self::new(combiners, currents, noise_level, rx_grid, tx_grid)
    }

    /// τ_p slots whose currents and combiners are sums of the lattice plane
    /// waves with independent random phases, scaled to unit energy.
    pub fn random_spectral(
        tau_p: usize,
        rx_wavenumbers: &WavenumberGrid,
        tx_wavenumbers: &WavenumberGrid,
        rx_grid: &ApertureGrid,
        tx_grid: &ApertureGrid,
        noise_level: f64,
        seed: u64,
    ) -> Result<Self> {
        if tau_p == 0 {
            return domain("at least one pilot slot is required");
        }
        if rx_wavenumbers.aperture != rx_grid.aperture || tx_wavenumbers.aperture != tx_grid.aperture {
            return domain("wavenumber grids and quadrature grids belong to different apertures");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut profile = |wg: &WavenumberGrid, grid: &ApertureGrid| -> Vec<C64> {
            let phases: Vec<f64> = (0..wg.len()).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
            let x: Vec<C64> = grid
                .nodes
                .iter()
                .map(|n| phases.iter().enumerate().map(|(i, p)| C64::from_polar(1.0, p + wg.wavevector(i).dot(&n.local))).sum())
                .collect();
            let scale = 1.0 / grid.norm_sqr(&x).sqrt();
            x.into_iter().map(|v| v * scale).collect()
        };
        let mut combiners = Vec::with_capacity(tau_p);
        let mut currents = Vec::with_capacity(tau_p);
        for _ in 0..tau_p {
            combiners.push(profile(rx_wavenumbers, rx_grid));
            currents.push(profile(tx_wavenumbers, tx_grid));
        }
        Self::new(combiners, currents, noise_level, rx_grid, tx_grid)
    }

    pub fn len(&self) -> usize {
        self.currents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.currents.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensingMatrix {
    /// τ_p × N_c.
    pub matrix: CMat,
    pub column_norms: Vec<f64>,
}

/// [A]_{l,i} = (∫ b_l* f_r,i)(∫ f_t,i w_l) with unit-norm atoms.
pub fn sensing_matrix(schedule: &PilotSchedule, dictionary: &Dictionary) -> Result<SensingMatrix> {
    let (rxg, txg) = (&dictionary.rx_grid, &dictionary.tx_grid);
    if schedule.combiners.iter().any(|b| b.len() != rxg.len()) || schedule.currents.iter().any(|w| w.len() != txg.len()) {
        return domain("pilot schedule and dictionary use different grids");
    }
    let (fr, ft) = dictionary.factor_samples();
    let cols: Vec<Vec<C64>> = (0..dictionary.len())
        .into_par_iter()
        .map(|i| {
            (0..schedule.len())
                .map(|l| {
                    let rx = rxg.inner(&schedule.combiners[l], &fr[i]);
                    let tx: C64 = txg.weights.iter().zip(&ft[i]).zip(&schedule.currents[l]).map(|((w, f), x)| *w * f * x).sum();
                    rx * tx
                })
                .collect()
        })
        .collect();
    let matrix = CMat::from_fn(schedule.len(), dictionary.len(), |l, i| cols[i][l]);
    let column_norms = matrix.column_iter().map(|c| c.norm()).collect();
    Ok(SensingMatrix { matrix, column_norms })
}

/// v_l = ∬ b_l* h w_l + z_l, z_l ~ CN(0, N0∫|b_l|²).
pub fn measure(h: &dyn Kernel, schedule: &PilotSchedule, rx_grid: &ApertureGrid, tx_grid: &ApertureGrid, seed: u64) -> Result<CVec> {
    let sampled = sample_kernel(h, rx_grid, tx_grid)?;
    measure_sampled(&sampled.values, schedule, rx_grid, tx_grid, seed)
}

/// `measure` for a kernel already sampled as values[(i, j)] = h(r_i, s_j).
pub fn measure_sampled(values: &CMat, schedule: &PilotSchedule, rx_grid: &ApertureGrid, tx_grid: &ApertureGrid, seed: u64) -> Result<CVec> {
    if values.nrows() != rx_grid.len() || values.ncols() != tx_grid.len() {
        return domain("sampled kernel does not match the grids");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = CVec::zeros(schedule.len());
    for l in 0..schedule.len() {
        let wx = CVec::from_iterator(tx_grid.len(), tx_grid.weights.iter().zip(&schedule.currents[l]).map(|(w, x)| *w * x));
        let field = values * wx;
        let signal: C64 = rx_grid.inner(&schedule.combiners[l], field.as_slice());
        let var = schedule.noise_level * schedule.combiner_energy[l];
        let noise = if var > 0.0 {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            C64::new(re, im) * (0.5 * var).sqrt()
        } else {
            C64::new(0.0, 0.0)
        };
        v[l] = signal + noise;
    }
    Ok(v)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StopRule {
    /// Stop after this many atoms (or earlier on an exact fit).
    Sparsity(usize),
    /// Stop once ‖v − Aα‖ ≤ ε.
    Residual(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseEstimate {
    pub coefficients: CVec,
    /// Selected columns in selection order.
    pub support: Vec<usize>,
    pub residual_norm: f64,
    /// Residual norm before the first and after every selection.
    pub residual_trace: Vec<f64>,
}

impl SparseEstimate {
    /// Rows `index,re,im` for every coefficient.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("index,re,im\n");
        for (i, c) in self.coefficients.iter().enumerate() {
            let _ = writeln!(out, "{i},{:.16e},{:.16e}", c.re, c.im);
        }
        out
    }
}

/// Orthogonal matching pursuit with column-normalized correlations.
/// `stop = None` uses the residual rule with ε = 1e-6‖v‖.
pub fn omp_recover(a: &CMat, v: &CVec, stop: Option<StopRule>) -> Result<SparseEstimate> {
    let (m, n) = a.shape();
    if m == 0 {
        return domain("sensing matrix has no rows");
    }
    if v.len() != m {
        return domain(format!("{} measurements for {m} sensing rows", v.len()));
    }
    let vnorm = v.norm();
    let stop = stop.unwrap_or(StopRule::Residual(DEFAULT_RESIDUAL_FRACTION * vnorm));
    let (max_atoms, eps) = match stop {
        StopRule::Sparsity(k) => (k.min(m).min(n), 0.0),
        StopRule::Residual(e) => (m.min(n), e),
    };
    // An exact fit ends a sparsity-budget run early.
    let floor = 1e-14 * vnorm;
    let norms: Vec<f64> = a.column_iter().map(|c| c.norm()).collect();
    let mut support: Vec<usize> = Vec::new();
    let mut residual = v.clone();
    let mut coeffs = CVec::zeros(0);
    let mut trace = vec![vnorm];
    while support.len() < max_atoms {
        let rn = residual.norm();
        if rn <= eps || rn <= floor {
            break;
        }
        let corr = a.ad_mul(&residual);
        let mut best: Option<(usize, f64)> = None;
        for j in 0..n {
            if norms[j] == 0.0 || support.contains(&j) {
                continue;
            }
            let c = corr[j].norm() / norms[j];
            if best.is_none_or(|(_, b)| c > b) {
                best = Some((j, c));
            }
        }
        let Some((j, _)) = best else { break };
        support.push(j);
        let sub = CMat::from_fn(m, support.len(), |r, c| a[(r, support[c])]);
        coeffs = refit(&sub, v, &support)?;
        residual = v - &sub * &coeffs;
        trace.push(residual.norm());
    }
    let mut coefficients = CVec::zeros(n);
    for (c, &j) in support.iter().enumerate() {
        coefficients[j] = coeffs[c];
    }
    Ok(SparseEstimate { coefficients, residual_norm: residual.norm(), support, residual_trace: trace })
}

fn refit(sub: &CMat, v: &CVec, support: &[usize]) -> Result<CVec> {
    let svd = sub.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 0.0 && smax / smin < REFIT_COND_CAP) {
        return Err(Error::Refit { support: support.to_vec() });
    }
    svd.solve(v, 0.0).map_err(|_| Error::Refit { support: support.to_vec() })
}

/// OMP on the sampled kernel itself (measurement = √w_r √w_s h), i.e. a direct
/// L² fit of h by dictionary atoms.
pub fn dictionary_fit(dictionary: &Dictionary, values: &CMat, stop: Option<StopRule>) -> Result<SparseEstimate> {
    let (rxg, txg) = (&dictionary.rx_grid, &dictionary.tx_grid);
    if values.nrows() != rxg.len() || values.ncols() != txg.len() {
        return domain("sampled kernel does not match the dictionary grids");
    }
    let (nr, nt) = (rxg.len(), txg.len());
    let sr: Vec<f64> = rxg.weights.iter().map(|w| w.sqrt()).collect();
    let st: Vec<f64> = txg.weights.iter().map(|w| w.sqrt()).collect();
    let (fr, ft) = dictionary.factor_samples();
    let a = CMat::from_fn(nr * nt, dictionary.len(), |row, i| {
        let (p, q) = (row / nt, row % nt);
        fr[i][p] * ft[i][q] * (sr[p] * st[q])
    });
    let v = CVec::from_fn(nr * nt, |row, _| {
        let (p, q) = (row / nt, row % nt);
        values[(p, q)] * (sr[p] * st[q])
    });
    omp_recover(&a, &v, stop)
}

/// ĥ(r,s) = Σ α_i φ_i(r,s)/‖φ_i‖.
#[derive(Debug, Clone)]
pub struct ReconstructedChannel {
    pub terms: Vec<(C64, DictionaryAtom)>,
}

impl Kernel for ReconstructedChannel {
    fn eval(&self, r: &Vec3, s: &Vec3) -> Result<C64> {
        Ok(self.terms.iter().map(|(c, a)| c * a.eval_normalized(r, s)).sum())
    }
}

pub fn reconstruct_channel(estimate: &SparseEstimate, dictionary: &Dictionary) -> Result<ReconstructedChannel> {
    if estimate.coefficients.len() != dictionary.len() {
        return domain(format!("{} coefficients for {} atoms", estimate.coefficients.len(), dictionary.len()));
    }
    let terms = estimate
        .coefficients
        .iter()
        .zip(&dictionary.atoms)
        .filter(|(c, _)| c.norm_sqr() > 0.0)
        .map(|(c, a)| (*c, *a))
        .collect();
    Ok(ReconstructedChannel { terms })
}

/// ‖h − ĥ‖² over the aperture pair by quadrature.
pub fn dictionary_residual(h: &dyn Kernel, estimate: &dyn Kernel, rx_grid: &ApertureGrid, tx_grid: &ApertureGrid) -> Result<f64> {
    let d = |r: &Vec3, s: &Vec3| -> Result<C64> { Ok(h.eval(r, s)? - estimate.eval(r, s)?) };
    l2_norm_sqr(&d, rx_grid, tx_grid)
}

/// ‖f‖² over the aperture pair by quadrature.
pub fn l2_norm_sqr(f: &dyn Kernel, rx_grid: &ApertureGrid, tx_grid: &ApertureGrid) -> Result<f64> {
    let s = sample_kernel(f, rx_grid, tx_grid)?;
    let mut total = 0.0;
    for (i, wr) in rx_grid.weights.iter().enumerate() {
        for (j, wt) in tx_grid.weights.iter().enumerate() {
            total += wr * wt * s.values[(i, j)].norm_sqr();
        }
    }
    Ok(total)
}

/// ‖h − ĥ‖²/‖h‖².
pub fn nmse(h: &dyn Kernel, estimate: &dyn Kernel, rx_grid: &ApertureGrid, tx_grid: &ApertureGrid) -> Result<f64> {
    let den = l2_norm_sqr(h, rx_grid, tx_grid)?;
    if den == 0.0 {
        return domain("reference channel has zero norm");
    }
    Ok(dictionary_residual(h, estimate, rx_grid, tx_grid)? / den)
}
