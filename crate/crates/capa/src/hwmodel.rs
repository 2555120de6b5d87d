//! Circuit-to-field port model and power accounting.
//!
//! Currents are z-polarized, so the radiation kernel is −Re{g} = c_z.
//! P_rad = ½∬ x*(s) c_z(s − s′) x(s′), P_loss = ½∫ Re{Z_s}|x|².

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::em_core::{coupling_z, Carrier, PlanarAperture};
use crate::error::{domain, Error, Result};
use crate::quadrature::{composite_grid, ApertureGrid};
use crate::{CMat, CVec, C64};

/// N port current patterns ψ_n sampled on one grid.
#[derive(Debug, Clone)]
pub struct PortBasis {
    pub grid: ApertureGrid,
    /// functions[n][l] = ψ_n(s_l)
    pub functions: Vec<Vec<C64>>,
}

impl PortBasis {
    pub fn from_samples(grid: ApertureGrid, functions: Vec<Vec<C64>>) -> Result<Self> {
        if functions.is_empty() {
            return domain("a port basis needs at least one function");
        }
        for (n, f) in functions.iter().enumerate() {
            if f.len() != grid.len() {
                return domain(format!("basis function {n} has {} samples, grid has {}", f.len(), grid.len()));
            }
            if f.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
                return domain(format!("basis function {n} is not finite"));
            }
        }
        Ok(Self { grid, functions })
    }

    /// nx×nz disjoint unit-amplitude pixels, each integrated with an
    /// order×order Gauss-Legendre rule. Port n is pixel (n % nx, n / nx).
    pub fn pixels(aperture: &PlanarAperture, nx: usize, nz: usize, order: usize) -> Result<Self> {
        let grid = composite_grid(aperture, nx, nz, order)?;
        let functions = (0..nx * nz)
            .map(|n| grid.cell.iter().map(|&c| C64::new(if c == n { 1.0 } else { 0.0 }, 0.0)).collect())
            .collect();
        Ok(Self { grid, functions })
    }

    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    /// ψᵀ(s)·i on the grid.
    pub fn combine(&self, i: &CVec) -> Result<Vec<C64>> {
        if i.len() != self.len() {
            return domain(format!("{} port currents for {} ports", i.len(), self.len()));
        }
        let mut x = vec![C64::new(0.0, 0.0); self.grid.len()];
        for (f, c) in self.functions.iter().zip(i.iter()) {
            for (xv, fv) in x.iter_mut().zip(f) {
                *xv += fv * c;
            }
        }
        Ok(x)
    }

    fn matrix(&self) -> CMat {
        CMat::from_fn(self.grid.len(), self.len(), |l, n| self.functions[n][l])
    }
}

/// Loaded multiport seen from the sources, plus the rx transfer map.
#[derive(Debug, Clone, PartialEq)]
pub struct CircuitNetwork {
    /// Y: i = Y v.
    pub admittance: CMat,
    /// T: v_RF = T v_oc.
    pub transfer: Option<CMat>,
}

impl CircuitNetwork {
    pub fn new(admittance: CMat) -> Result<Self> {
        if !admittance.is_square() {
            return domain("admittance matrix must be square");
        }
        Ok(Self { admittance, transfer: None })
    }

    pub fn identity(n: usize) -> Self {
        Self { admittance: CMat::identity(n, n), transfer: None }
    }

    /// Z = Y⁻¹.
    pub fn impedance(&self) -> Result<CMat> {
        self.admittance
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Numerical("admittance matrix is singular".into()))
    }

    /// v_RF = T v_oc.
    pub fn receive(&self, v_oc: &CVec) -> Result<CVec> {
        let t = self.transfer.as_ref().ok_or_else(|| Error::Domain("network has no rx transfer matrix".into()))?;
        if t.ncols() != v_oc.len() {
            return domain(format!("transfer has {} inputs, got {}", t.ncols(), v_oc.len()));
        }
        Ok(t * v_oc)
    }
}

/// x(s) = ψᵀ(s)·Y·W·c.
pub fn synthesize_current(basis: &PortBasis, network: &CircuitNetwork, precoder: &CMat, symbols: &CVec) -> Result<Vec<C64>> {
    let n = basis.len();
    if network.admittance.nrows() != n || precoder.nrows() != n {
        return domain(format!(
            "{n} ports but admittance is {}x{} and precoder has {} rows",
            network.admittance.nrows(),
            network.admittance.ncols(),
            precoder.nrows()
        ));
    }
    if precoder.ncols() != symbols.len() {
        return domain(format!("precoder has {} streams, got {} symbols", precoder.ncols(), symbols.len()));
    }
    basis.combine(&(&network.admittance * (precoder * symbols)))
}

/// w_k(s) = ψᵀ(s)·Y·w_k.
pub fn effective_beamformer(basis: &PortBasis, network: &CircuitNetwork, column: &CVec) -> Result<Vec<C64>> {
    let w = CMat::from_column_slice(column.len(), 1, column.as_slice());
    synthesize_current(basis, network, &w, &CVec::from_element(1, C64::new(1.0, 0.0)))
}

/// Weighted kernel matrix w_i c_z(s_i − s_j) w_j.
fn weighted_radiation_kernel(grid: &ApertureGrid, carrier: &Carrier) -> DMatrix<f64> {
    let n = grid.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let si = grid.nodes[i].global;
            (0..n).map(|j| grid.weights[i] * grid.weights[j] * coupling_z(&(si - grid.nodes[j].global), carrier)).collect()
        })
        .collect();
    DMatrix::from_fn(n, n, |i, j| rows[i][j])
}

/// ½∬ x* c_z x by quadrature on `grid`.
pub fn radiated_power(x: &[C64], grid: &ApertureGrid, carrier: &Carrier) -> Result<f64> {
    if x.len() != grid.len() {
        return domain(format!("current has {} samples, grid has {}", x.len(), grid.len()));
    }
    // Collected before summing so the result does not depend on thread scheduling.
    let terms: Vec<C64> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            if x[i].norm_sqr() == 0.0 {
                return C64::new(0.0, 0.0);
            }
            let si = grid.nodes[i].global;
            let row: C64 = (0..grid.len())
                .map(|j| x[j] * (grid.weights[j] * coupling_z(&(si - grid.nodes[j].global), carrier)))
                .sum();
            x[i].conj() * row * grid.weights[i]
        })
        .collect();
    Ok(0.5 * terms.iter().sum::<C64>().re)
}

/// (k0²η0/12π)·|S_t|·∫|x|².
pub fn radiated_power_upper_bound(x: &[C64], grid: &ApertureGrid, carrier: &Carrier) -> Result<f64> {
    if x.len() != grid.len() {
        return domain(format!("current has {} samples, grid has {}", x.len(), grid.len()));
    }
    let k0 = carrier.k0();
    Ok(k0 * k0 * carrier.impedance_ohm / (12.0 * PI) * grid.aperture.area() * grid.norm_sqr(x))
}

fn check_resistance(resistance: &[f64], grid: &ApertureGrid) -> Result<()> {
    if resistance.len() != grid.len() {
        return domain(format!("surface resistance has {} samples, grid has {}", resistance.len(), grid.len()));
    }
    if let Some(l) = resistance.iter().position(|r| !(*r >= 0.0 && r.is_finite())) {
        return domain(format!("surface resistance at node {l} is {}", resistance[l]));
    }
    Ok(())
}

/// ½∫ Re{Z_s}|x|², with Re{Z_s} sampled on the grid.
pub fn loss_power(x: &[C64], grid: &ApertureGrid, resistance: &[f64]) -> Result<f64> {
    if x.len() != grid.len() {
        return domain(format!("current has {} samples, grid has {}", x.len(), grid.len()));
    }
    check_resistance(resistance, grid)?;
    Ok(0.5 * grid.weights.iter().zip(resistance).zip(x).map(|((w, r), v)| w * r * v.norm_sqr()).sum::<f64>())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerMatrices {
    pub radiation_resistance: CMat,
    pub loss: CMat,
}

impl PowerMatrices {
    /// Rows `matrix,m,n,re,im`.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("matrix,m,n,re,im\n");
        for (name, mat) in [("R_rad", &self.radiation_resistance), ("R_loss", &self.loss)] {
            for m in 0..mat.nrows() {
                for n in 0..mat.ncols() {
                    let v = mat[(m, n)];
                    out.push_str(&format!("{name},{m},{n},{:.16e},{:.16e}\n", v.re, v.im));
                }
            }
        }
        out
    }
}

/// [R_rad]_{mn} = ∬ψ_m* c_z ψ_n and [R_loss]_{mn} = ∫Re{Z_s}ψ_m*ψ_n.
pub fn circuit_power_matrices(basis: &PortBasis, carrier: &Carrier, resistance: &[f64]) -> Result<PowerMatrices> {
    let grid = &basis.grid;
    check_resistance(resistance, grid)?;
    let k = weighted_radiation_kernel(grid, carrier).map(|v| C64::new(v, 0.0));
    let psi = basis.matrix();
    let radiation_resistance = psi.adjoint() * k * &psi;
    let d = CMat::from_diagonal(&CVec::from_iterator(
        grid.len(),
        grid.weights.iter().zip(resistance).map(|(w, r)| C64::new(w * r, 0.0)),
    ));
    let loss = psi.adjoint() * d * &psi;
    Ok(PowerMatrices { radiation_resistance, loss })
}

/// Source power against the aperture powers.
#[derive(Debug, Clone, PartialEq)]
pub struct SourcePowerReport {
    /// ½Re{iᴴZi}.
    pub source: f64,
    /// ½iᴴR_rad i.
    pub radiated: f64,
    /// ½iᴴR_loss i.
    pub loss: f64,
    /// Smallest eigenvalue of herm(Z) − R_rad − R_loss.
    pub excess_min_eigenvalue: f64,
    /// Excess resistance PSD within tolerance.
    pub passive: bool,
    /// P_src ≥ P_rad + P_loss within tolerance.
    pub inequality_holds: bool,
}

impl SourcePowerReport {
    pub fn summary(&self) -> String {
        format!(
            "P_src={:.6e} P_rad={:.6e} P_loss={:.6e} excess_min_eig={:.3e} passive={} inequality={}",
            self.source, self.radiated, self.loss, self.excess_min_eigenvalue, self.passive, self.inequality_holds
        )
    }
}

fn quad(i: &CVec, m: &CMat) -> C64 {
    i.dotc(&(m * i))
}

/// P_src = ½Re{iᴴZi}. Non-passive networks are reported, not rejected.
pub fn source_power(i: &CVec, impedance: &CMat, matrices: &PowerMatrices) -> Result<SourcePowerReport> {
    let n = i.len();
    if impedance.shape() != (n, n) || matrices.radiation_resistance.shape() != (n, n) || matrices.loss.shape() != (n, n) {
        return domain(format!("{n} port currents do not match the impedance and power matrices"));
    }
    let source = 0.5 * quad(i, impedance).re;
    let radiated = 0.5 * quad(i, &matrices.radiation_resistance).re;
    let loss = 0.5 * quad(i, &matrices.loss).re;
    let herm = (impedance + impedance.adjoint()) * C64::new(0.5, 0.0);
    let excess = herm - &matrices.radiation_resistance - &matrices.loss;
    let excess = (&excess + excess.adjoint()) * C64::new(0.5, 0.0);
    let eig = SymmetricEigen::new(excess).eigenvalues;
    let min = eig.min();
    let scale = impedance.norm().max(matrices.radiation_resistance.norm()).max(matrices.loss.norm()).max(f64::MIN_POSITIVE);
    let tol = 1e-10 * scale;
    Ok(SourcePowerReport {
        source,
        radiated,
        loss,
        excess_min_eigenvalue: min,
        passive: min >= -tol,
        inequality_holds: source >= radiated + loss - tol * i.norm_squared(),
    })
}
