//! Wavenumber-domain discretization of a continuous channel.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector2;

use crate::channel::{sample_kernel, Kernel};
use crate::em_core::{Carrier, PlanarAperture};
use crate::error::{config, domain, Result};
use crate::quadrature::{aperture_grid, default_order, ApertureGrid};
use crate::{CMat, CVec, C64};

/// Default per-side cardinality budget for [`assemble_spectral_channel`].
pub const DEFAULT_BUDGET: usize = 5_000;

/// Magnitude below which assembled entries are stored as exact zeros.
pub const ZERO_FLOOR: f64 = 1e-14;

/// Spectral samples of one aperture inside its radiating disk.
#[derive(Debug, Clone, PartialEq)]
pub struct WavenumberGrid {
    pub aperture: PlanarAperture,
    pub carrier: Carrier,
    /// (Δκx, Δκz) = (2π/Lx, 2π/Lz).
    pub spacing: (f64, f64),
    /// (m, n) pairs, n outer and m inner.
    pub indices: Vec<(i64, i64)>,
}

impl WavenumberGrid {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn wavevector(&self, index: usize) -> Vector2<f64> {
        let (m, n) = self.indices[index];
        Vector2::new(m as f64 * self.spacing.0, n as f64 * self.spacing.1)
    }

    /// ΔκxΔκz/(2π)², equal to 1/(LxLz).
    pub fn cell_scale(&self) -> f64 {
        self.spacing.0 * self.spacing.1 / (4.0 * PI * PI)
    }

    pub fn position(&self, m: i64, n: i64) -> Option<usize> {
        self.indices.iter().position(|&p| p == (m, n))
    }
}

/// Lattice (mΔκx, nΔκz) restricted to the closed radiating disk.
pub fn build_grid(aperture: &PlanarAperture, carrier: &Carrier) -> Result<WavenumberGrid> {
    let lam = carrier.lambda();
    if aperture.len_x_m < 0.5 * lam || aperture.len_z_m < 0.5 * lam {
        return config(format!(
            "aperture {:.4e} x {:.4e} m is below half a wavelength ({:.4e} m) on an edge",
            aperture.len_x_m,
            aperture.len_z_m,
            0.5 * lam
        ));
    }
    let k0 = carrier.k0();
    let dx = 2.0 * PI / aperture.len_x_m;
    let dz = 2.0 * PI / aperture.len_z_m;
    let mmax = (k0 / dx).floor() as i64;
    let nmax = (k0 / dz).floor() as i64;
    // Relative slack so lattice points exactly on the rim (L a multiple of λ) are kept.
    let rim = k0 * k0 * (1.0 + 1e-12);
    let mut indices = Vec::new();
    for n in -nmax..=nmax {
        for m in -mmax..=mmax {
            let (kx, kz) = (m as f64 * dx, n as f64 * dz);
            if kx * kx + kz * kz <= rim {
                indices.push((m, n));
            }
        }
    }
    Ok(WavenumberGrid { aperture: *aperture, carrier: *carrier, spacing: (dx, dz), indices })
}

// e^{sign·j κ·s′} rows over the quadrature nodes, weights folded in.
fn fourier_rows(wgrid: &WavenumberGrid, qgrid: &ApertureGrid, sign: f64) -> CMat {
    CMat::from_fn(wgrid.len(), qgrid.len(), |i, l| {
        let kv = wgrid.wavevector(i);
        let s = &qgrid.nodes[l].local;
        C64::from_polar(qgrid.weights[l], sign * kv.dot(s))
    })
}

fn check_same(a: &PlanarAperture, b: &PlanarAperture) -> Result<()> {
    if a != b {
        return domain("quadrature grid and wavenumber grid belong to different apertures");
    }
    Ok(())
}

/// X(κ) = ∬ x(s) e^{−jκ·s′} ds by quadrature on `qgrid`.
pub fn transmit_spectrum(x: &[C64], qgrid: &ApertureGrid, wgrid: &WavenumberGrid, kappa_index: usize) -> Result<C64> {
    check_same(&qgrid.aperture, &wgrid.aperture)?;
    if x.len() != qgrid.len() {
        return domain(format!("current has {} samples, grid has {} nodes", x.len(), qgrid.len()));
    }
    if kappa_index >= wgrid.len() {
        return domain(format!("wavenumber index {kappa_index} out of range {}", wgrid.len()));
    }
    let kv = wgrid.wavevector(kappa_index);
    Ok(qgrid
        .nodes
        .iter()
        .zip(&qgrid.weights)
        .zip(x)
        .map(|((n, w), xv)| xv * C64::from_polar(*w, -kv.dot(&n.local)))
        .sum())
}

/// All transmit spectrum samples at once.
pub fn transmit_spectrum_all(x: &[C64], qgrid: &ApertureGrid, wgrid: &WavenumberGrid) -> Result<CVec> {
    check_same(&qgrid.aperture, &wgrid.aperture)?;
    if x.len() != qgrid.len() {
        return domain(format!("current has {} samples, grid has {} nodes", x.len(), qgrid.len()));
    }
    Ok(fourier_rows(wgrid, qgrid, -1.0) * CVec::from_column_slice(x))
}

/// A spectral sample with any accuracy warning raised while computing it.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralEntry {
    pub value: C64,
    pub warnings: Vec<String>,
}

fn order_warnings(order: usize, grids: [&WavenumberGrid; 2]) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for (name, g) in ["tx", "rx"].iter().zip(grids) {
        let need = default_order(&g.aperture, &g.carrier)?;
        if order < need {
            out.push(format!("{name} quadrature order {order} is below the lambda/4 spacing order {need}"));
        }
    }
    Ok(out)
}

/// H_a(k, κ) = ∬∬ e^{−jk·r′} h(r, s) e^{jκ·s′} dr ds by tensor quadrature.
pub fn spectral_entry(
    h: &dyn Kernel,
    k_index: usize,
    kappa_index: usize,
    tx_grid: &WavenumberGrid,
    rx_grid: &WavenumberGrid,
    quadrature_order: usize,
) -> Result<SpectralEntry> {
    if k_index >= rx_grid.len() || kappa_index >= tx_grid.len() {
        return domain("spectral index out of range");
    }
    let warnings = order_warnings(quadrature_order, [tx_grid, rx_grid])?;
    let tq = aperture_grid(&tx_grid.aperture, quadrature_order)?;
    let rq = aperture_grid(&rx_grid.aperture, quadrature_order)?;
    let kv = rx_grid.wavevector(k_index);
    let qv = tx_grid.wavevector(kappa_index);
    let mut acc = C64::new(0.0, 0.0);
    for (rn, rw) in rq.nodes.iter().zip(&rq.weights) {
        let left = C64::from_polar(*rw, -kv.dot(&rn.local));
        let mut inner = C64::new(0.0, 0.0);
        for (sn, sw) in tq.nodes.iter().zip(&tq.weights) {
            inner += h.eval(&rn.global, &sn.global)? * C64::from_polar(*sw, qv.dot(&sn.local));
        }
        acc += left * inner;
    }
    Ok(SpectralEntry { value: acc, warnings })
}

/// Discrete MIMO-like model y_a = H_a x_a between two wavenumber grids.
#[derive(Debug, Clone)]
pub struct SpectralChannel {
    pub tx_grid: WavenumberGrid,
    pub rx_grid: WavenumberGrid,
    /// (ΔκxΔκz/(2π)²)·H_a(k_p, κ_q), rows over rx indices.
    pub matrix: CMat,
    pub quadrature_order: usize,
    pub warnings: Vec<String>,
}

/// Assembles every spectral entry with the cell scaling folded in.
pub fn assemble_spectral_channel(
    h: &dyn Kernel,
    tx_grid: &WavenumberGrid,
    rx_grid: &WavenumberGrid,
    quadrature_order: usize,
    budget: usize,
) -> Result<SpectralChannel> {
    if tx_grid.len() > budget || rx_grid.len() > budget {
        return config(format!(
            "wavenumber grid cardinality (tx {}, rx {}) exceeds budget {budget}",
            tx_grid.len(),
            rx_grid.len()
        ));
    }
    let warnings = order_warnings(quadrature_order, [tx_grid, rx_grid])?;
    let tq = aperture_grid(&tx_grid.aperture, quadrature_order)?;
    let rq = aperture_grid(&rx_grid.aperture, quadrature_order)?;
    let sampled = sample_kernel(h, &rq, &tq)?;
    let left = fourier_rows(rx_grid, &rq, -1.0);
    let right = fourier_rows(tx_grid, &tq, 1.0).transpose();
    let mut matrix = left * sampled.values * right * C64::from(tx_grid.cell_scale());
    for v in matrix.iter_mut() {
        if v.norm() < ZERO_FLOOR {
            *v = C64::new(0.0, 0.0);
        }
    }
    Ok(SpectralChannel { tx_grid: tx_grid.clone(), rx_grid: rx_grid.clone(), matrix, quadrature_order, warnings })
}

impl SpectralChannel {
    /// CSV of re,im pairs per row, preceded by `#` metadata lines.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        let c = &self.tx_grid.carrier;
        let _ = writeln!(out, "# frequency_hz: {:.16e}", c.frequency_hz);
        for (name, g) in [("tx", &self.tx_grid), ("rx", &self.rx_grid)] {
            let a = &g.aperture;
            let _ = writeln!(
                out,
                "# {name}_aperture: center=({:.16e},{:.16e},{:.16e}) len=({:.16e},{:.16e}) rotation=({})",
                a.center_m.x,
                a.center_m.y,
                a.center_m.z,
                a.len_x_m,
                a.len_z_m,
                a.orientation.matrix.transpose().iter().map(|v| format!("{v:.16e}")).collect::<Vec<_>>().join(",")
            );
            let idx: Vec<String> = g.indices.iter().map(|(m, n)| format!("{m}:{n}")).collect();
            let _ = writeln!(out, "# {name}_indices: {}", idx.join(" "));
        }
        let _ = writeln!(out, "# quadrature_order: {}", self.quadrature_order);
        let _ = writeln!(out, "# rows: {} cols: {}", self.matrix.nrows(), self.matrix.ncols());
        for i in 0..self.matrix.nrows() {
            let row: Vec<String> = (0..self.matrix.ncols())
                .map(|j| {
                    let v = self.matrix[(i, j)];
                    format!("{:.16e},{:.16e}", v.re, v.im)
                })
                .collect();
            let _ = writeln!(out, "{}", row.join(","));
        }
        out
    }

    pub fn export_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }

    /// Received spectrum for transmit spectrum samples `x`.
    pub fn apply(&self, x: &CVec) -> Result<CVec> {
        if x.len() != self.matrix.ncols() {
            return domain("transmit spectrum length does not match the tx grid");
        }
        Ok(&self.matrix * x)
    }
}

/// (ΔκxΔκz/(2π)²) Σ X e^{j(mΔκx sx + nΔκz sz)} at the local point `s`.
pub fn reconstruct_current(coefficients: &[C64], grid: &WavenumberGrid, s: &Vector2<f64>) -> Result<C64> {
    if coefficients.len() != grid.len() {
        return domain(format!("{} coefficients for a grid of {}", coefficients.len(), grid.len()));
    }
    let sum: C64 = coefficients
        .iter()
        .enumerate()
        .map(|(i, x)| x * C64::from_polar(1.0, grid.wavevector(i).dot(s)))
        .sum();
    Ok(sum * grid.cell_scale())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{los_kernel, PolarizationMode, UniPolLosChannel};
    use crate::Vec3;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn carrier() -> Carrier {
        Carrier::new(30e9).unwrap()
    }

    fn square(c: &Carrier, l: f64, y: f64) -> PlanarAperture {
        PlanarAperture::broadside(Vec3::new(0.0, y, 0.0), l * c.lambda(), l * c.lambda()).unwrap()
    }

    #[test]
    fn grid_examples() {
        let c = carrier();
        let g = build_grid(&square(&c, 1.0, 0.0), &c).unwrap();
        let mut idx = g.indices.clone();
        idx.sort();
        assert_eq!(idx, vec![(-1, 0), (0, -1), (0, 0), (0, 1), (1, 0)]);
        assert_relative_eq!(g.spacing.0, 2.0 * PI / c.lambda(), max_relative = 1e-15);
        assert!(build_grid(&square(&c, 0.4, 0.0), &c).is_err());
        let big = PlanarAperture::broadside(Vec3::zeros(), 1.0, 1.0).unwrap();
        let n = build_grid(&big, &c).unwrap().len() as f64;
        let expect = PI * (1.0 / c.lambda()).powi(2);
        assert!((n - expect).abs() / expect < 0.01, "{n} vs {expect}");
    }

    #[test]
    fn grid_symmetry_and_growth() {
        let c = carrier();
        for l in [2.0, 3.5, 5.0, 8.0, 13.0, 20.0] {
            let g = build_grid(&square(&c, l, 0.0), &c).unwrap();
            for &(m, n) in &g.indices {
                assert!(g.indices.contains(&(-m, -n)));
                let kv = Vector2::new(m as f64 * g.spacing.0, n as f64 * g.spacing.1);
                assert!(kv.norm() <= c.k0() * (1.0 + 1e-12));
            }
            let expect = PI * l * l;
            assert!((g.len() as f64 - expect).abs() <= 2.0 * PI * l + 1.0, "L = {l}: {}", g.len());
        }
    }

    #[test]
    fn transmit_spectrum_examples() {
        let c = carrier();
        let ap = square(&c, 2.0, 0.0);
        let wg = build_grid(&ap, &c).unwrap();
        let qg = aperture_grid(&ap, 32).unwrap();
        let l2 = ap.area();
        let ones = vec![C64::new(1.0, 0.0); qg.len()];
        let zero = wg.position(0, 0).unwrap();
        assert!((transmit_spectrum(&ones, &qg, &wg, zero).unwrap() - l2).norm() < 1e-12 * l2);
        let (m0, n0) = (1, -1);
        let pos = wg.position(m0, n0).unwrap();
        let kv = wg.wavevector(pos);
        let x: Vec<C64> = qg.nodes.iter().map(|n| C64::from_polar(1.0, kv.dot(&n.local))).collect();
        let all = transmit_spectrum_all(&x, &qg, &wg).unwrap();
        for i in 0..wg.len() {
            let expect = if i == pos { l2 } else { 0.0 };
            assert!((all[i] - expect).norm() < 1e-10 * l2, "index {:?}", wg.indices[i]);
        }
        let y: Vec<C64> = x.iter().zip(&ones).map(|(a, b)| a * 2.0 - b * C64::new(0.0, 3.0)).collect();
        let lin = transmit_spectrum(&y, &qg, &wg, 3).unwrap();
        let sep = transmit_spectrum(&x, &qg, &wg, 3).unwrap() * 2.0 - transmit_spectrum(&ones, &qg, &wg, 3).unwrap() * C64::new(0.0, 3.0);
        assert!((lin - sep).norm() < 1e-12 * l2);
        let other = aperture_grid(&square(&c, 2.0, 1.0), 8).unwrap();
        assert!(transmit_spectrum(&vec![C64::new(1.0, 0.0); other.len()], &other, &wg, 0).is_err());
    }

    #[test]
    fn spectral_entry_examples() {
        let c = carrier();
        let tx = square(&c, 2.0, 0.0);
        let rx = square(&c, 2.0, 20.0 * c.lambda());
        let tg = build_grid(&tx, &c).unwrap();
        let rg = build_grid(&rx, &c).unwrap();
        let a = Vector2::new(0.3 * c.k0(), -0.2 * c.k0());
        let b = Vector2::new(-0.5 * c.k0(), 0.1 * c.k0());
        let phase = move |r: &Vec3, s: &Vec3| -> Result<C64> {
            let (rl, _) = rx.to_local(r);
            let (sl, _) = tx.to_local(s);
            Ok(C64::from_polar(1.0, a.dot(&rl) + b.dot(&sl)))
        };
        let (ki, qi) = (2, 5);
        let order = 24;
        let got = spectral_entry(&phase, ki, qi, &tg, &rg, order).unwrap();
        // Separable oracle: product of closed-form 1-D integrals ∫ e^{jus} ds = L sinc.
        let one_d = |u: f64, l: f64| if u.abs() < 1e-14 { l } else { 2.0 * (u * l / 2.0).sin() / u };
        let kr = a - rg.wavevector(ki);
        let ks = b + tg.wavevector(qi);
        let expect = one_d(kr.x, rx.len_x_m) * one_d(kr.y, rx.len_z_m) * one_d(ks.x, tx.len_x_m) * one_d(ks.y, tx.len_z_m);
        assert!((got.value - expect).norm() < 1e-10 * tx.area() * rx.area());
        let zero = |_: &Vec3, _: &Vec3| -> Result<C64> { Ok(C64::new(0.0, 0.0)) };
        assert_eq!(spectral_entry(&zero, 0, 0, &tg, &rg, 8).unwrap().value, C64::new(0.0, 0.0));
        let conj = move |r: &Vec3, s: &Vec3| -> Result<C64> { Ok(phase(r, s)?.conj()) };
        let neg_k = rg.position(-rg.indices[ki].0, -rg.indices[ki].1).unwrap();
        let neg_q = tg.position(-tg.indices[qi].0, -tg.indices[qi].1).unwrap();
        let mirrored = spectral_entry(&conj, neg_k, neg_q, &tg, &rg, order).unwrap();
        assert!((mirrored.value - got.value.conj()).norm() < 1e-12 * tx.area() * rx.area());
        assert!(!spectral_entry(&zero, 0, 0, &tg, &rg, 2).unwrap().warnings.is_empty());
        assert!(got.warnings.is_empty());
    }

    #[test]
    fn assembly_matches_entries_and_rank_one() {
        let c = carrier();
        let tx = square(&c, 2.0, 0.0);
        let rx = square(&c, 2.0, 20.0 * c.lambda());
        let tg = build_grid(&tx, &c).unwrap();
        let rg = build_grid(&rx, &c).unwrap();
        let rank1 = move |r: &Vec3, s: &Vec3| -> Result<C64> {
            let (rl, _) = rx.to_local(r);
            let (sl, _) = tx.to_local(s);
            Ok(C64::new(1.0 + 20.0 * rl.x, rl.y * 7.0) * C64::from_polar(1.0 + 30.0 * sl.norm_squared(), 40.0 * sl.x))
        };
        let ch = assemble_spectral_channel(&rank1, &tg, &rg, 16, DEFAULT_BUDGET).unwrap();
        let e = spectral_entry(&rank1, 3, 4, &tg, &rg, 16).unwrap().value * tg.cell_scale();
        assert!((ch.matrix[(3, 4)] - e).norm() < 1e-12 * ch.matrix.norm());
        let sv = ch.matrix.singular_values();
        let max = sv.max();
        assert!(sv.iter().filter(|s| **s > 1e-10 * max).count() == 1);
        let zero = |_: &Vec3, _: &Vec3| -> Result<C64> { Ok(C64::new(0.0, 0.0)) };
        let z = assemble_spectral_channel(&zero, &tg, &rg, 8, DEFAULT_BUDGET).unwrap();
        assert!(z.matrix.iter().all(|v| *v == C64::new(0.0, 0.0)));
        assert!(assemble_spectral_channel(&zero, &tg, &rg, 8, 5).is_err());
    }

    #[test]
    fn permutation_of_indices_permutes_rows_and_columns() {
        let c = carrier();
        let tx = square(&c, 2.0, 0.0);
        let rx = square(&c, 2.0, 15.0 * c.lambda());
        let los = UniPolLosChannel::new(tx, rx, c, PolarizationMode::Simplified).unwrap();
        let h = move |r: &Vec3, s: &Vec3| los_kernel(&los, r, s);
        let tg = build_grid(&tx, &c).unwrap();
        let rg = build_grid(&rx, &c).unwrap();
        let mut tp = tg.clone();
        tp.indices.reverse();
        let mut rp = rg.clone();
        rp.indices.rotate_left(3);
        let a = assemble_spectral_channel(&h, &tg, &rg, 12, DEFAULT_BUDGET).unwrap();
        let b = assemble_spectral_channel(&h, &tp, &rp, 12, DEFAULT_BUDGET).unwrap();
        let nr = rg.len();
        let nt = tg.len();
        for i in 0..nr {
            for j in 0..nt {
                let bi = (i + nr - 3) % nr;
                let bj = nt - 1 - j;
                assert!((a.matrix[(i, j)] - b.matrix[(bi, bj)]).norm() <= 1e-12 * a.matrix.norm());
            }
        }
    }

    #[test]
    fn frobenius_energy_decreases_with_distance() {
        let c = carrier();
        let tx = square(&c, 2.0, 0.0);
        let tg = build_grid(&tx, &c).unwrap();
        let mut last = f64::INFINITY;
        for d in [6.0, 10.0, 16.0, 25.0, 40.0] {
            let rx = square(&c, 2.0, d * c.lambda());
            let los = UniPolLosChannel::new(tx, rx, c, PolarizationMode::Simplified).unwrap();
            let h = move |r: &Vec3, s: &Vec3| los_kernel(&los, r, s);
            let rg = build_grid(&rx, &c).unwrap();
            let e = assemble_spectral_channel(&h, &tg, &rg, 12, DEFAULT_BUDGET).unwrap().matrix.norm_squared();
            assert!(e.is_finite() && e < last, "d = {d}: {e} vs {last}");
            last = e;
        }
    }

    #[test]
    fn reconstruct_examples_and_round_trip() {
        let c = carrier();
        let ap = square(&c, 3.0, 0.0);
        let wg = build_grid(&ap, &c).unwrap();
        let s = Vector2::new(0.001, -0.002);
        let mut unit = vec![C64::new(0.0, 0.0); wg.len()];
        assert_eq!(reconstruct_current(&unit, &wg, &s).unwrap(), C64::new(0.0, 0.0));
        unit[wg.position(0, 0).unwrap()] = C64::new(1.0, 0.0);
        let v = reconstruct_current(&unit, &wg, &s).unwrap();
        assert_relative_eq!(v.re, 1.0 / ap.area(), max_relative = 1e-12);
        assert!(reconstruct_current(&unit[1..], &wg, &s).is_err());
        let coeffs: Vec<C64> = (0..wg.len()).map(|i| C64::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos())).collect();
        let qg = aperture_grid(&ap, 48).unwrap();
        let x: Vec<C64> = qg.nodes.iter().map(|n| reconstruct_current(&coeffs, &wg, &n.local).unwrap()).collect();
        let back = transmit_spectrum_all(&x, &qg, &wg).unwrap();
        let scale = coeffs.iter().map(|v| v.norm()).fold(0.0, f64::max);
        for (b, a) in back.iter().zip(&coeffs) {
            assert!((b - a).norm() < 1e-8 * scale);
        }
    }

    #[test]
    fn export_has_metadata_and_pairs() {
        let c = carrier();
        let tx = square(&c, 1.0, 0.0);
        let rx = square(&c, 1.0, 10.0 * c.lambda());
        let tg = build_grid(&tx, &c).unwrap();
        let rg = build_grid(&rx, &c).unwrap();
        let one = |_: &Vec3, _: &Vec3| -> Result<C64> { Ok(C64::new(1.0, 0.0)) };
        let ch = assemble_spectral_channel(&one, &tg, &rg, 6, DEFAULT_BUDGET).unwrap();
        let text = ch.to_csv_string();
        assert!(text.starts_with("# frequency_hz"));
        let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(rows.len(), 5);
        assert!(rows.iter().all(|r| r.split(',').count() == 10));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn grid_invariants_and_round_trip(lx in 1.0f64..3.0, lz in 1.0f64..3.0, seed in any::<u64>()) {
            let c = carrier();
            let ap = PlanarAperture::broadside(Vec3::zeros(), lx * c.lambda(), lz * c.lambda()).unwrap();
            let wg = build_grid(&ap, &c).unwrap();
            for (i, &(m, n)) in wg.indices.iter().enumerate() {
                prop_assert!(wg.position(-m, -n).is_some());
                prop_assert_eq!(wg.position(m, n), Some(i));
                prop_assert!(wg.wavevector(i).norm() <= c.k0() * (1.0 + 1e-12));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let coeffs: Vec<C64> = (0..wg.len()).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
            let qg = aperture_grid(&ap, 48).unwrap();
            let x: Vec<C64> = qg.nodes.iter().map(|n| reconstruct_current(&coeffs, &wg, &n.local).unwrap()).collect();
            let back = transmit_spectrum_all(&x, &qg, &wg).unwrap();
            for (b, a) in back.iter().zip(&coeffs) {
                prop_assert!((b - a).norm() < 1e-8);
            }
        }
    }
}
