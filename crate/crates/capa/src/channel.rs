//! LoS, physics-based multipath and correlation-based stochastic channel kernels.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::em_core::{dyadic_green, polarization_factor, Carrier, GreenMode, PlanarAperture, Polarization};
use crate::error::{config, domain, Error, Result};
use crate::quadrature::{aperture_grid, gl_rule, ApertureGrid};
use crate::{CMat, Vec3, C64};

/// A scalar channel kernel h(r, s) between global points.
pub trait Kernel: Sync {
    fn eval(&self, r: &Vec3, s: &Vec3) -> Result<C64>;

    /// values[(i, j)] = h(r_i, s_j). Kernels with separable structure override this.
    fn sample_block(&self, rx: &[Vec3], tx: &[Vec3]) -> Result<CMat> {
        let rows: Vec<Vec<C64>> = rx
            .par_iter()
            .map(|r| tx.iter().map(|s| self.eval(r, s)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        Ok(CMat::from_fn(rx.len(), tx.len(), |i, j| rows[i][j]))
    }
}

impl<F> Kernel for F
where
    F: Fn(&Vec3, &Vec3) -> Result<C64> + Sync,
{
    fn eval(&self, r: &Vec3, s: &Vec3) -> Result<C64> {
        self(r, s)
    }
}

/// Kernel values on an rx × tx grid pair.
#[derive(Debug, Clone)]
pub struct SampledKernel {
    pub rx_grid: ApertureGrid,
    pub tx_grid: ApertureGrid,
    /// values[(i, j)] = h(r_i, s_j)
    pub values: CMat,
}

/// Evaluates `h` at every node pair; non-finite values are reported with their indices.
pub fn sample_kernel(h: &dyn Kernel, rx_grid: &ApertureGrid, tx_grid: &ApertureGrid) -> Result<SampledKernel> {
    let rx: Vec<Vec3> = rx_grid.nodes.iter().map(|n| n.global).collect();
    let tx: Vec<Vec3> = tx_grid.nodes.iter().map(|n| n.global).collect();
    let values = h.sample_block(&rx, &tx)?;
    if let Some(k) = values.iter().position(|v| !(v.re.is_finite() && v.im.is_finite())) {
        let (i, j) = (k % values.nrows(), k / values.nrows());
        return Err(Error::Numerical(format!("non-finite kernel value at node pair ({i}, {j})")));
    }
    Ok(SampledKernel { rx_grid: rx_grid.clone(), tx_grid: tx_grid.clone(), values })
}

/// How the uni-polarized LoS kernel treats polarization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PolarizationMode {
    /// Drop ρ_pol (perfectly matched, transverse).
    Simplified,
    /// Multiply by ρ_pol for the given transmit and receive directions.
    Matched { p_t: Polarization, p_r: Polarization },
}

/// Uni-polarized LoS link between two apertures.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniPolLosChannel {
    pub tx: PlanarAperture,
    pub rx: PlanarAperture,
    pub carrier: Carrier,
    pub polarization_mode: PolarizationMode,
}

impl UniPolLosChannel {
    pub fn new(tx: PlanarAperture, rx: PlanarAperture, carrier: Carrier, polarization_mode: PolarizationMode) -> Result<Self> {
        if tx.intersects(&rx) {
            return domain("transmit and receive apertures intersect");
        }
        Ok(Self { tx, rx, carrier, polarization_mode })
    }
}

impl Kernel for UniPolLosChannel {
    fn eval(&self, r: &Vec3, s: &Vec3) -> Result<C64> {
        los_kernel(self, r, s)
    }
}

// −jη0k0 e^{−jk0R}/(4πR) between two arbitrary points.
fn point_los(carrier: &Carrier, r: &Vec3, s: &Vec3) -> Result<C64> {
    let d = (r - s).norm();
    if !(d > 0.0) {
        return domain("channel kernel evaluated at coincident points");
    }
    let k = carrier.k0();
    let mag = carrier.impedance_ohm * k / (4.0 * PI * d);
    Ok(C64::new(0.0, -mag) * C64::from_polar(1.0, -k * d))
}

/// h_LoS(r, s) = −jη0k0 e^{−jk0‖r−s‖}/(4π‖r−s‖), times ρ_pol in matched mode.
pub fn los_kernel(channel: &UniPolLosChannel, r: &Vec3, s: &Vec3) -> Result<C64> {
    let h = point_los(&channel.carrier, r, s)?;
    match channel.polarization_mode {
        PolarizationMode::Simplified => Ok(h),
        PolarizationMode::Matched { p_t, p_r } => Ok(h * polarization_factor(r, s, &p_r, &p_t)?),
    }
}

/// Tri-polarized LoS kernel: the radiative dyadic Green's function.
pub fn los_kernel_tripol(_tx: &PlanarAperture, _rx: &PlanarAperture, carrier: &Carrier, r: &Vec3, s: &Vec3) -> Result<Matrix3<C64>> {
    dyadic_green(r, s, carrier, GreenMode::Radiative)
}

/// Point scatterer with complex reflectivity, delay and Doppler.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scatterer {
    pub position_m: Vec3,
    pub gain: C64,
    pub cluster_id: usize,
    pub delay_s: f64,
    pub doppler_hz: f64,
}

impl Scatterer {
    /// Static scatterer with its geometric delay left at zero.
    pub fn new(position_m: Vec3, gain: C64) -> Self {
        Self { position_m, gain, cluster_id: 0, delay_s: 0.0, doppler_hz: 0.0 }
    }
}

/// h_LoS(r,s) + Σ Γ h_LoS(r,q) h_LoS(q,s).
pub fn multipath_kernel(channel: &UniPolLosChannel, scatterers: &[Scatterer], r: &Vec3, s: &Vec3) -> Result<C64> {
    let mut h = los_kernel(channel, r, s)?;
    for sc in scatterers {
        let q = &sc.position_m;
        h += sc.gain * los_kernel(channel, r, q)? * los_kernel(channel, q, s)?;
    }
    Ok(h)
}

/// Multipath link as a [`Kernel`].
#[derive(Debug, Clone)]
pub struct MultipathChannel {
    pub los: UniPolLosChannel,
    pub scatterers: Vec<Scatterer>,
}

impl Kernel for MultipathChannel {
    fn eval(&self, r: &Vec3, s: &Vec3) -> Result<C64> {
        multipath_kernel(&self.los, &self.scatterers, r, s)
    }
}

/// H_LoS + Σ H_LoS(r,q) Γ H_LoS(q,s) with 3×3 scattering matrices.
pub fn multipath_kernel_tripol(
    channel: &UniPolLosChannel,
    scatterers: &[Scatterer],
    scatter_matrices: &[Matrix3<C64>],
    r: &Vec3,
    s: &Vec3,
) -> Result<Matrix3<C64>> {
    if scatterers.len() != scatter_matrices.len() {
        return domain("one scattering matrix is required per scatterer");
    }
    let c = &channel.carrier;
    let mut h = dyadic_green(r, s, c, GreenMode::Radiative)?;
    for (sc, gamma) in scatterers.iter().zip(scatter_matrices) {
        let q = &sc.position_m;
        h += dyadic_green(r, q, c, GreenMode::Radiative)? * gamma * dyadic_green(q, s, c, GreenMode::Radiative)?;
    }
    Ok(h)
}

/// Doubly dispersive response h(r, s, t, τ) with taps binned to width `delta_fn_width`.
///
/// A tap at delay τ_i occupies [τ_i − w/2, τ_i + w/2). The LoS tap sits at
/// ‖r − s‖/c; scatterer taps carry Γ e^{j2πνt}/√N_s.
pub fn doubly_dispersive_kernel(
    channel: &UniPolLosChannel,
    scatterers: &[Scatterer],
    r: &Vec3,
    s: &Vec3,
    t_s: f64,
    tau_s: f64,
    delta_fn_width: f64,
) -> Result<C64> {
    if !(delta_fn_width > 0.0 && delta_fn_width.is_finite()) {
        return config(format!("tap width must be positive, got {delta_fn_width}"));
    }
    let half = 0.5 * delta_fn_width;
    let in_bin = |center: f64| tau_s >= center - half && tau_s < center + half;
    let mut h = C64::new(0.0, 0.0);
    let tau_los = (r - s).norm() / channel.carrier.light_speed_m_per_s;
    if in_bin(tau_los) {
        h += los_kernel(channel, r, s)?;
    }
    if !scatterers.is_empty() {
        let norm = 1.0 / (scatterers.len() as f64).sqrt();
        for sc in scatterers {
            if in_bin(sc.delay_s) {
                let q = &sc.position_m;
                let phase = C64::from_polar(1.0, 2.0 * PI * sc.doppler_hz * t_s);
                h += norm * sc.gain * phase * los_kernel(channel, r, q)? * los_kernel(channel, q, s)?;
            }
        }
    }
    Ok(h)
}

/// One von Mises-Fisher angular cluster.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct VmfCluster {
    pub modal_theta_rad: f64,
    pub modal_phi_rad: f64,
    pub concentration: f64,
    pub weight: f64,
}

/// Angular density of one link end.
#[derive(Debug, Clone, PartialEq)]
pub enum SideSpectrum {
    Isotropic,
    VmfMixture(Vec<VmfCluster>),
}

impl SideSpectrum {
    /// Validates a mixture: α ≥ 0, weights in (0, 1] summing to 1 within 1e-9.
    pub fn mixture(clusters: Vec<VmfCluster>) -> Result<Self> {
        if clusters.is_empty() {
            return domain("vMF mixture needs at least one cluster");
        }
        for c in &clusters {
            if !(c.concentration >= 0.0 && c.concentration.is_finite()) {
                return domain(format!("vMF concentration must be >= 0, got {}", c.concentration));
            }
            if !(c.weight > 0.0 && c.weight <= 1.0) {
                return domain(format!("vMF weight must lie in (0, 1], got {}", c.weight));
            }
        }
        let total: f64 = clusters.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return domain(format!("vMF weights must sum to 1, got {total}"));
        }
        Ok(SideSpectrum::VmfMixture(clusters))
    }

    /// Density p(θ, φ) of this side.
    pub fn density(&self, theta: f64, phi: f64, carrier: &Carrier) -> f64 {
        match self {
            SideSpectrum::Isotropic => (2.0 * PI / carrier.k0()).powi(2),
            SideSpectrum::VmfMixture(cs) => cs.iter().map(|c| c.weight * vmf_density(theta, phi, c, carrier)).sum(),
        }
    }
}

/// Kronecker-separable Tx/Rx angular spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct AngularSpectrum {
    pub tx_side: SideSpectrum,
    pub rx_side: SideSpectrum,
}

impl AngularSpectrum {
    pub fn isotropic() -> Self {
        Self { tx_side: SideSpectrum::Isotropic, rx_side: SideSpectrum::Isotropic }
    }
}

/// c(α) e^{α(sinθ sinμθ cos(φ−μφ) + cosθ cosμθ)} with c(α) = (2π/k0)² α/sinh α.
pub fn vmf_density(theta: f64, phi: f64, cluster: &VmfCluster, carrier: &Carrier) -> f64 {
    let base = (2.0 * PI / carrier.k0()).powi(2);
    let a = cluster.concentration;
    if a <= 0.0 {
        return base;
    }
    let cos_psi = theta.sin() * cluster.modal_theta_rad.sin() * (phi - cluster.modal_phi_rad).cos()
        + theta.cos() * cluster.modal_theta_rad.cos();
    // α/sinh α · e^{α cosψ} = 2α/(1 − e^{−2α}) · e^{α(cosψ − 1)}, overflow-free.
    if a < 1e-8 {
        return base * (a * cos_psi).exp();
    }
    base * 2.0 * a / (-(-2.0 * a).exp_m1()) * (a * (cos_psi - 1.0)).exp()
}

/// Product p_r(θr, φr) · p_t(θt, φt); isotropic sides contribute (2π/k0)².
pub fn angular_power(theta_r: f64, phi_r: f64, theta_t: f64, phi_t: f64, spectrum: &AngularSpectrum, carrier: &Carrier) -> f64 {
    spectrum.rx_side.density(theta_r, phi_r, carrier) * spectrum.tx_side.density(theta_t, phi_t, carrier)
}

/// Wavenumber cell of a sampled radiating disk.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WavenumberCell {
    /// Transverse wavenumber (κx, κz) at the cell midpoint.
    pub kappa: Vector2<f64>,
    /// √(q(θ,φ) Δ² / γ) after power calibration.
    pub amplitude: f64,
}

/// One realization of the correlation-based NLoS channel.
#[derive(Debug, Clone)]
pub struct CorrelationRealization {
    pub tx: PlanarAperture,
    pub rx: PlanarAperture,
    pub carrier: Carrier,
    pub tx_wavenumber_cells: Vec<WavenumberCell>,
    pub rx_wavenumber_cells: Vec<WavenumberCell>,
    /// gains[(p, q)] = √(S ΔkΔκ)/(2π)² · W_pq for rx cell p, tx cell q.
    pub gains: CMat,
    pub seed: u64,
    /// E|h(r, s)|², identical for every (r, s).
    pub expected_power: f64,
}

// θ ∈ [0, π] and φ ∈ [0, π] for a propagating transverse wavenumber.
fn cell_angles(kappa: &Vector2<f64>, k0: f64) -> (f64, f64, f64) {
    let gamma = (k0 * k0 - kappa.norm_squared()).max(0.0).sqrt();
    let theta = (kappa.y / k0).clamp(-1.0, 1.0).acos();
    let phi = gamma.atan2(kappa.x);
    (theta, phi, gamma)
}

// k0 ∫_{hemisphere} q dΩ, the continuous per-side target of Σ q Δ²/γ.
fn hemisphere_target(side: &SideSpectrum, carrier: &Carrier) -> Result<f64> {
    let k0 = carrier.k0();
    let scale = k0 / (2.0 * PI);
    let rule = gl_rule(256)?;
    let half = 0.5 * PI;
    let mut total = 0.0;
    for (ut, wt) in rule.nodes.iter().zip(&rule.weights) {
        let theta = half * (ut + 1.0);
        let st = theta.sin();
        for (up, wp) in rule.nodes.iter().zip(&rule.weights) {
            let phi = half * (up + 1.0);
            total += wt * wp * side.density(theta, phi, carrier) * st;
        }
    }
    Ok(k0 * scale * total * half * half)
}

/// Retained disk cells for one side with calibrated amplitudes.
pub fn disk_cells(side: &SideSpectrum, carrier: &Carrier, cells_per_axis: usize) -> Result<Vec<WavenumberCell>> {
    if cells_per_axis < 8 {
        return config(format!("cells_per_axis must be >= 8, got {cells_per_axis}"));
    }
    let k0 = carrier.k0();
    let delta = 2.0 * k0 / cells_per_axis as f64;
    let scale = k0 / (2.0 * PI);
    let mut raw = Vec::new();
    for iz in 0..cells_per_axis {
        for ix in 0..cells_per_axis {
            let lo_x = -k0 + ix as f64 * delta;
            let lo_z = -k0 + iz as f64 * delta;
            let far_x = lo_x.abs().max((lo_x + delta).abs());
            let far_z = lo_z.abs().max((lo_z + delta).abs());
            // Cells touching the rim are dropped: their farthest corner must be strictly inside.
            if far_x * far_x + far_z * far_z >= k0 * k0 {
                continue;
            }
            let kappa = Vector2::new(lo_x + 0.5 * delta, lo_z + 0.5 * delta);
            let (theta, phi, gamma) = cell_angles(&kappa, k0);
            let v = scale * side.density(theta, phi, carrier) * delta * delta / gamma;
            raw.push((kappa, v));
        }
    }
    if raw.is_empty() {
        return config("wavenumber grid retains no interior cells");
    }
    let sum: f64 = raw.iter().map(|(_, v)| v).sum();
    if !(sum > 0.0) {
        return config("angular spectrum has no power on the retained cells");
    }
    let calib = hemisphere_target(side, carrier)? / sum;
    Ok(raw.into_iter().map(|(kappa, v)| WavenumberCell { kappa, amplitude: (v * calib).sqrt() }).collect())
}

fn complex_normal(rng: &mut ChaCha8Rng) -> C64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Precomputed cell sets for repeated sampling with different seeds.
#[derive(Debug, Clone)]
pub struct CorrelationSampler {
    pub tx: PlanarAperture,
    pub rx: PlanarAperture,
    pub carrier: Carrier,
    pub tx_cells: Vec<WavenumberCell>,
    pub rx_cells: Vec<WavenumberCell>,
    scale: CMat,
}

impl CorrelationSampler {
    pub fn new(spectrum: &AngularSpectrum, tx: &PlanarAperture, rx: &PlanarAperture, carrier: &Carrier, cells_per_axis: usize) -> Result<Self> {
        let tx_cells = disk_cells(&spectrum.tx_side, carrier, cells_per_axis)?;
        let rx_cells = disk_cells(&spectrum.rx_side, carrier, cells_per_axis)?;
        let norm = 1.0 / (2.0 * PI).powi(2);
        let scale = CMat::from_fn(rx_cells.len(), tx_cells.len(), |p, q| {
            C64::from(norm * rx_cells[p].amplitude * tx_cells[q].amplitude)
        });
        Ok(Self { tx: *tx, rx: *rx, carrier: *carrier, tx_cells, rx_cells, scale })
    }

    pub fn expected_power(&self) -> f64 {
        self.scale.iter().map(|v| v.norm_sqr()).sum()
    }

    pub fn sample(&self, seed: u64) -> CorrelationRealization {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut gains = self.scale.clone();
        // Row-major draw order keeps realizations reproducible across platforms.
        for p in 0..gains.nrows() {
            for q in 0..gains.ncols() {
                gains[(p, q)] *= complex_normal(&mut rng);
            }
        }
        CorrelationRealization {
            tx: self.tx,
            rx: self.rx,
            carrier: self.carrier,
            tx_wavenumber_cells: self.tx_cells.clone(),
            rx_wavenumber_cells: self.rx_cells.clone(),
            gains,
            seed,
            expected_power: self.expected_power(),
        }
    }
}

/// Draws one realization with i.i.d. CN(0,1) weights per cell pair.
pub fn sample_correlation_channel(
    spectrum: &AngularSpectrum,
    tx: &PlanarAperture,
    rx: &PlanarAperture,
    carrier: &Carrier,
    cells_per_axis: usize,
    seed: u64,
) -> Result<CorrelationRealization> {
    Ok(CorrelationSampler::new(spectrum, tx, rx, carrier, cells_per_axis)?.sample(seed))
}

/// Σ_p Σ_q e^{−jk_p·r′} g_pq e^{jκ_q·s′} at local points r′ (rx) and s′ (tx).
pub fn evaluate_realization(real: &CorrelationRealization, r_local: &Vector2<f64>, s_local: &Vector2<f64>) -> C64 {
    let tx_phase: Vec<C64> = real
        .tx_wavenumber_cells
        .iter()
        .map(|c| C64::from_polar(1.0, c.kappa.dot(s_local)))
        .collect();
    let mut h = C64::new(0.0, 0.0);
    for (p, c) in real.rx_wavenumber_cells.iter().enumerate() {
        let row: C64 = (0..tx_phase.len()).map(|q| real.gains[(p, q)] * tx_phase[q]).sum();
        h += C64::from_polar(1.0, -c.kappa.dot(r_local)) * row;
    }
    h
}

impl Kernel for CorrelationRealization {
    fn eval(&self, r: &Vec3, s: &Vec3) -> Result<C64> {
        let (rl, _) = self.rx.to_local(r);
        let (sl, _) = self.tx.to_local(s);
        Ok(evaluate_realization(self, &rl, &sl))
    }

    fn sample_block(&self, rx: &[Vec3], tx: &[Vec3]) -> Result<CMat> {
        let er = CMat::from_fn(rx.len(), self.rx_wavenumber_cells.len(), |i, p| {
            let (rl, _) = self.rx.to_local(&rx[i]);
            C64::from_polar(1.0, -self.rx_wavenumber_cells[p].kappa.dot(&rl))
        });
        let et = CMat::from_fn(self.tx_wavenumber_cells.len(), tx.len(), |q, j| {
            let (sl, _) = self.tx.to_local(&tx[j]);
            C64::from_polar(1.0, self.tx_wavenumber_cells[q].kappa.dot(&sl))
        });
        Ok(er * &self.gains * et)
    }
}

/// Rician mix of a power-normalized LoS link and a correlation realization.
#[derive(Debug, Clone)]
pub struct RicianChannel {
    pub los: UniPolLosChannel,
    pub realization: CorrelationRealization,
    pub k_factor: f64,
    /// Mean of |h_LoS|² over the aperture pair.
    pub los_mean_power: f64,
}

impl RicianChannel {
    /// LoS mean power is integrated on `order`×`order` grids on both apertures.
    pub fn new(los: UniPolLosChannel, realization: CorrelationRealization, k_factor: f64, order: usize) -> Result<Self> {
        if !(k_factor >= 0.0) {
            return domain(format!("K-factor must be >= 0, got {k_factor}"));
        }
        let rg = aperture_grid(&los.rx, order)?;
        let tg = aperture_grid(&los.tx, order)?;
        let mut acc = 0.0;
        for (rn, rw) in rg.nodes.iter().zip(&rg.weights) {
            for (sn, sw) in tg.nodes.iter().zip(&tg.weights) {
                acc += rw * sw * los_kernel(&los, &rn.global, &sn.global)?.norm_sqr();
            }
        }
        let los_mean_power = acc / (los.rx.area() * los.tx.area());
        Ok(Self { los, realization, k_factor, los_mean_power })
    }
}

/// √(K/(K+1)) ĥ_LoS + √(1/(K+1)) ĥ_NLoS with unit-average-power components.
pub fn rician_kernel(channel: &RicianChannel, r: &Vec3, s: &Vec3) -> Result<C64> {
    let k = channel.k_factor;
    let (w_los, w_nlos) = if k.is_infinite() { (1.0, 0.0) } else { ((k / (k + 1.0)).sqrt(), (1.0 / (k + 1.0)).sqrt()) };
    let mut h = C64::new(0.0, 0.0);
    if w_los > 0.0 {
        h += w_los * los_kernel(&channel.los, r, s)? / channel.los_mean_power.sqrt();
    }
    if w_nlos > 0.0 {
        h += w_nlos * channel.realization.eval(r, s)? / channel.realization.expected_power.sqrt();
    }
    Ok(h)
}

impl Kernel for RicianChannel {
    fn eval(&self, r: &Vec3, s: &Vec3) -> Result<C64> {
        rician_kernel(self, r, s)
    }

    fn sample_block(&self, rx: &[Vec3], tx: &[Vec3]) -> Result<CMat> {
        let k = self.k_factor;
        let (w_los, w_nlos) = if k.is_infinite() { (1.0, 0.0) } else { ((k / (k + 1.0)).sqrt(), (1.0 / (k + 1.0)).sqrt()) };
        let mut out = CMat::zeros(rx.len(), tx.len());
        if w_los > 0.0 {
            out += self.los.sample_block(rx, tx)? * C64::from(w_los / self.los_mean_power.sqrt());
        }
        if w_nlos > 0.0 {
            out += self.realization.sample_block(rx, tx)? * C64::from(w_nlos / self.realization.expected_power.sqrt());
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::em_core::ETA0;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn link() -> UniPolLosChannel {
        let c = Carrier::new(28e9).unwrap();
        let lam = c.lambda();
        let tx = PlanarAperture::broadside(Vec3::zeros(), 4.0 * lam, 4.0 * lam).unwrap();
        let rx = PlanarAperture::broadside(Vec3::new(0.0, 40.0 * lam, 0.0), 4.0 * lam, 4.0 * lam).unwrap();
        UniPolLosChannel::new(tx, rx, c, PolarizationMode::Simplified).unwrap()
    }

    #[test]
    fn los_magnitude_and_phase() {
        let ch = link();
        let k = ch.carrier.k0();
        let s = Vec3::new(0.001, 0.0, -0.002);
        let r = Vec3::new(0.0, 0.3, 0.01);
        let d = (r - s).norm();
        let h = los_kernel(&ch, &r, &s).unwrap();
        assert_relative_eq!(h.norm(), ETA0 * k / (4.0 * PI * d), max_relative = 1e-12);
        let dir = (r - s) / d;
        let r2 = s + dir * (d + ch.carrier.lambda());
        let h2 = los_kernel(&ch, &r2, &s).unwrap();
        let dphi = (h2 / h).arg();
        assert!(dphi.abs() < 1e-9, "phase step {dphi}");
        assert!(los_kernel(&ch, &s, &s).is_err());
    }

    #[test]
    fn matched_crossed_polarization_vanishes() {
        let mut ch = link();
        ch.polarization_mode = PolarizationMode::Matched { p_t: Polarization::x(), p_r: Polarization::z() };
        let h = los_kernel(&ch, &Vec3::new(0.0, 1.0, 0.0), &Vec3::zeros()).unwrap();
        assert!(h.norm() < 1e-15);
    }

    #[test]
    fn tripol_projection_and_rank() {
        let ch = link();
        let r = Vec3::new(0.01, 0.4, -0.02);
        let s = Vec3::new(-0.003, 0.0, 0.001);
        let h = los_kernel_tripol(&ch.tx, &ch.rx, &ch.carrier, &r, &s).unwrap();
        let u = (r - s).normalize().map(C64::from);
        let uh = u.transpose() * h;
        assert!(uh.norm() < 1e-12 * h.norm());
        let sv = h.singular_values();
        let mut v: Vec<f64> = sv.iter().copied().collect();
        v.sort_by(|a, b| b.partial_cmp(a).unwrap());
        assert!(v[2] < 1e-12 * v[0]);
        let pt = Polarization::new(Vec3::new(0.2, 0.1, 1.0)).unwrap();
        let pr = Polarization::new(Vec3::new(1.0, 0.3, 0.2)).unwrap();
        let proj = (pr.direction.map(C64::from).transpose() * h * pt.direction.map(C64::from))[(0, 0)];
        let mut matched = ch;
        matched.polarization_mode = PolarizationMode::Matched { p_t: pt, p_r: pr };
        let uni = los_kernel(&matched, &r, &s).unwrap();
        assert!((proj - uni).norm() < 1e-12 * uni.norm().max(1e-300));
    }

    #[test]
    fn multipath_superposition() {
        let ch = link();
        let r = Vec3::new(0.0, 0.43, 0.0);
        let s = Vec3::new(0.002, 0.0, 0.0);
        let los = los_kernel(&ch, &r, &s).unwrap();
        assert_eq!(multipath_kernel(&ch, &[], &r, &s).unwrap(), los);
        let a = Scatterer::new(Vec3::new(0.2, 0.2, 0.1), C64::new(0.3, -0.1));
        let b = Scatterer::new(Vec3::new(-0.1, 0.25, -0.2), C64::new(-0.2, 0.4));
        let zero = Scatterer::new(a.position_m, C64::new(0.0, 0.0));
        assert_eq!(multipath_kernel(&ch, &[zero], &r, &s).unwrap(), los);
        let both = multipath_kernel(&ch, &[a, b], &r, &s).unwrap();
        let sep = multipath_kernel(&ch, &[a], &r, &s).unwrap() + multipath_kernel(&ch, &[b], &r, &s).unwrap() - los;
        assert!((both - sep).norm() < 1e-12 * both.norm());
        let on_point = Scatterer::new(r, C64::new(1.0, 0.0));
        assert!(multipath_kernel(&ch, &[on_point], &r, &s).is_err());
    }

    #[test]
    fn tripol_multipath_cases() {
        let ch = link();
        let c = ch.carrier;
        let r = Vec3::new(0.0, 0.43, 0.0);
        let s = Vec3::new(0.002, 0.0, 0.0);
        let sc = Scatterer::new(Vec3::new(0.2, 0.2, 0.0), C64::new(0.5, 0.2));
        let los = dyadic_green(&r, &s, &c, GreenMode::Radiative).unwrap();
        let zero = multipath_kernel_tripol(&ch, &[sc], &[Matrix3::zeros()], &r, &s).unwrap();
        assert_eq!(zero, los);
        // Scalar Γ·I projected onto a matched pair reproduces the uni-pol composite with ρ factors.
        let gamma = Matrix3::identity() * sc.gain;
        let tri = multipath_kernel_tripol(&ch, &[sc], &[gamma], &r, &s).unwrap();
        let z = Vec3::z().map(C64::from);
        let proj = (z.transpose() * tri * z)[(0, 0)];
        let g1 = dyadic_green(&r, &sc.position_m, &c, GreenMode::Radiative).unwrap();
        let g2 = dyadic_green(&sc.position_m, &s, &c, GreenMode::Radiative).unwrap();
        let expect = (z.transpose() * los * z)[(0, 0)] + sc.gain * (z.transpose() * g1 * g2 * z)[(0, 0)];
        assert!((proj - expect).norm() < 1e-12 * proj.norm());
        // With q, r, s coplanar in z = 0, z stays transverse on every leg, so the
        // z-z entry factors exactly into scalar LoS kernels.
        let uni = multipath_kernel(&ch, &[sc], &r, &s).unwrap();
        assert!((proj - uni).norm() < 1e-12 * uni.norm());
        // Rotation about y mixes x and z: cross-polar z←x entry appears.
        let (sn, cs) = 0.7f64.sin_cos();
        let rot = Matrix3::new(cs, 0.0, sn, 0.0, 1.0, 0.0, -sn, 0.0, cs).map(C64::from);
        let depol = multipath_kernel_tripol(&ch, &[sc], &[rot], &r, &s).unwrap();
        let x = Vec3::x().map(C64::from);
        let cross_los = (z.transpose() * los * x)[(0, 0)];
        let cross = (z.transpose() * depol * x)[(0, 0)];
        assert!(cross_los.norm() < 1e-12 * los.norm());
        assert!(cross.norm() > 1e-6 * depol.norm());
    }

    #[test]
    fn doubly_dispersive_taps() {
        let ch = link();
        let r = Vec3::new(0.0, 0.43, 0.0);
        let s = Vec3::zeros();
        let c0 = ch.carrier.light_speed_m_per_s;
        let tau_los = 0.43 / c0;
        let mut sc = Scatterer::new(Vec3::new(0.2, 0.2, 0.1), C64::new(0.3, 0.1));
        sc.delay_s = 5e-9;
        sc.doppler_hz = 120.0;
        let w = 1e-10;
        let los = los_kernel(&ch, &r, &s).unwrap();
        let at_los = doubly_dispersive_kernel(&ch, &[sc], &r, &s, 0.3, tau_los, w).unwrap();
        assert!((at_los - los).norm() < 1e-12 * los.norm());
        assert_eq!(doubly_dispersive_kernel(&ch, &[sc], &r, &s, 0.0, 2e-9, w).unwrap(), C64::new(0.0, 0.0));
        let t0 = doubly_dispersive_kernel(&ch, &[sc], &r, &s, 0.0, 5e-9, w).unwrap();
        let dt = 1e-3;
        let t1 = doubly_dispersive_kernel(&ch, &[sc], &r, &s, dt, 5e-9, w).unwrap();
        let adv = (t1 / t0).arg();
        let expect = (2.0 * PI * 120.0 * dt + PI).rem_euclid(2.0 * PI) - PI;
        assert!((adv - expect).abs() < 1e-9);
        let mut still = sc;
        still.doppler_hz = 0.0;
        let a = doubly_dispersive_kernel(&ch, &[still], &r, &s, 0.0, 5e-9, w).unwrap();
        let b = doubly_dispersive_kernel(&ch, &[still], &r, &s, 7.0, 5e-9, w).unwrap();
        assert_eq!(a, b);
        assert!(doubly_dispersive_kernel(&ch, &[sc], &r, &s, 0.0, 0.0, -1.0).is_err());
    }

    #[test]
    fn vmf_examples() {
        let c = Carrier::new(28e9).unwrap();
        let base = (2.0 * PI / c.k0()).powi(2);
        let flat = VmfCluster { modal_theta_rad: 0.3, modal_phi_rad: 1.0, concentration: 0.0, weight: 1.0 };
        assert_relative_eq!(vmf_density(1.1, 0.4, &flat, &c), base, max_relative = 1e-15);
        let tiny = VmfCluster { concentration: 1e-12, ..flat };
        assert_relative_eq!(vmf_density(1.1, 0.4, &tiny, &c), base, max_relative = 1e-10);
        let a = 39.5;
        let cl = VmfCluster { modal_theta_rad: 20f64.to_radians(), modal_phi_rad: 90f64.to_radians(), concentration: a, weight: 1.0 };
        let peak = vmf_density(cl.modal_theta_rad, cl.modal_phi_rad, &cl, &c);
        assert_relative_eq!(peak, base * a / a.sinh() * a.exp(), max_relative = 1e-12);
        assert!(vmf_density(0.5, 1.2, &cl, &c) < peak);
    }

    // ∮ p dΩ = 4π(2π/k0)² by GL quadrature in (cos θ, φ).
    fn sphere_integral(side: &SideSpectrum, c: &Carrier) -> f64 {
        let rule = gl_rule(200).unwrap();
        let mut acc = 0.0;
        for (u, wu) in rule.nodes.iter().zip(&rule.weights) {
            let theta = u.acos();
            for (v, wv) in rule.nodes.iter().zip(&rule.weights) {
                let phi = PI * (v + 1.0);
                acc += wu * wv * side.density(theta, phi, c);
            }
        }
        acc * PI
    }

    #[test]
    fn vmf_sphere_normalization() {
        let c = Carrier::new(28e9).unwrap();
        let expect = 4.0 * PI * (2.0 * PI / c.k0()).powi(2);
        for a in [0.0, 0.5, 5.0, 39.5] {
            let side = SideSpectrum::mixture(vec![VmfCluster {
                modal_theta_rad: 0.35,
                modal_phi_rad: 1.57,
                concentration: a,
                weight: 1.0,
            }])
            .unwrap();
            assert_relative_eq!(sphere_integral(&side, &c), expect, max_relative = 1e-6);
        }
    }

    #[test]
    fn angular_power_examples() {
        let c = Carrier::new(28e9).unwrap();
        let iso = AngularSpectrum::isotropic();
        assert_relative_eq!(angular_power(0.1, 0.2, 0.3, 0.4, &iso, &c), (2.0 * PI / c.k0()).powi(4), max_relative = 1e-14);
        let cl = VmfCluster { modal_theta_rad: 0.8, modal_phi_rad: 1.0, concentration: 3.0, weight: 1.0 };
        let single = SideSpectrum::mixture(vec![cl]).unwrap();
        let halves = SideSpectrum::mixture(vec![VmfCluster { weight: 0.5, ..cl }, VmfCluster { weight: 0.5, ..cl }]).unwrap();
        assert_relative_eq!(single.density(0.4, 2.0, &c), halves.density(0.4, 2.0, &c), max_relative = 1e-14);
        let fig8 = AngularSpectrum {
            tx_side: SideSpectrum::mixture(vec![VmfCluster {
                modal_theta_rad: 20f64.to_radians(),
                modal_phi_rad: 90f64.to_radians(),
                concentration: 39.5,
                weight: 1.0,
            }])
            .unwrap(),
            rx_side: SideSpectrum::Isotropic,
        };
        let at_mode = angular_power(1.0, 1.0, 20f64.to_radians(), 90f64.to_radians(), &fig8, &c);
        for (t, p) in [(0.2, 1.4), (0.5, 1.57), (0.35, 2.0), (1.2, 0.3)] {
            assert!(angular_power(1.0, 1.0, t, p, &fig8, &c) < at_mode);
        }
        assert!(SideSpectrum::mixture(vec![VmfCluster { weight: 0.4, ..cl }]).is_err());
    }

    #[test]
    fn realization_determinism_and_linearity() {
        let ch = link();
        let spec = AngularSpectrum::isotropic();
        let a = sample_correlation_channel(&spec, &ch.tx, &ch.rx, &ch.carrier, 8, 11).unwrap();
        let b = sample_correlation_channel(&spec, &ch.tx, &ch.rx, &ch.carrier, 8, 11).unwrap();
        assert_eq!(a.gains, b.gains);
        let r = Vector2::new(0.001, -0.002);
        let s = Vector2::new(0.0005, 0.003);
        let mut z = a.clone();
        z.gains.fill(C64::new(0.0, 0.0));
        assert_eq!(evaluate_realization(&z, &r, &s), C64::new(0.0, 0.0));
        let mut one = z.clone();
        one.gains[(2, 3)] = C64::new(1.0, 0.0);
        let expect = C64::from_polar(1.0, -a.rx_wavenumber_cells[2].kappa.dot(&r)) * C64::from_polar(1.0, a.tx_wavenumber_cells[3].kappa.dot(&s));
        assert!((evaluate_realization(&one, &r, &s) - expect).norm() < 1e-14);
        let mut sum = a.clone();
        sum.gains = &a.gains * C64::new(2.0, 0.0) + &one.gains;
        let lhs = evaluate_realization(&sum, &r, &s);
        let rhs = evaluate_realization(&a, &r, &s) * 2.0 + evaluate_realization(&one, &r, &s);
        assert!((lhs - rhs).norm() < 1e-12 * lhs.norm());
        assert!(sample_correlation_channel(&spec, &ch.tx, &ch.rx, &ch.carrier, 4, 1).is_err());
    }

    #[test]
    fn isotropic_expected_power_is_one() {
        let ch = link();
        let sampler = CorrelationSampler::new(&AngularSpectrum::isotropic(), &ch.tx, &ch.rx, &ch.carrier, 12).unwrap();
        assert_relative_eq!(sampler.expected_power(), 1.0, max_relative = 1e-9);
    }

    #[test]
    fn rician_limits() {
        let ch = link();
        let real = sample_correlation_channel(&AngularSpectrum::isotropic(), &ch.tx, &ch.rx, &ch.carrier, 8, 3).unwrap();
        let r = ch.rx.center_m + Vec3::new(0.001, 0.0, 0.0);
        let s = ch.tx.center_m;
        let inf = RicianChannel::new(ch, real.clone(), f64::INFINITY, 6).unwrap();
        let los = los_kernel(&ch, &r, &s).unwrap() / inf.los_mean_power.sqrt();
        assert!((rician_kernel(&inf, &r, &s).unwrap() - los).norm() < 1e-12 * los.norm());
        let zero = RicianChannel::new(ch, real.clone(), 0.0, 6).unwrap();
        let nlos = real.eval(&r, &s).unwrap() / real.expected_power.sqrt();
        assert!((rician_kernel(&zero, &r, &s).unwrap() - nlos).norm() < 1e-12 * nlos.norm());
        assert!(RicianChannel::new(ch, real, -1.0, 6).is_err());
    }

    #[test]
    fn block_sampling_matches_pointwise() {
        let ch = link();
        let real = sample_correlation_channel(&AngularSpectrum::isotropic(), &ch.tx, &ch.rx, &ch.carrier, 10, 5).unwrap();
        let mixed = RicianChannel::new(ch, real, 1.5, 6).unwrap();
        let rg = aperture_grid(&ch.rx, 3).unwrap();
        let tg = aperture_grid(&ch.tx, 4).unwrap();
        let block = sample_kernel(&mixed, &rg, &tg).unwrap().values;
        for (i, rn) in rg.nodes.iter().enumerate() {
            for (j, sn) in tg.nodes.iter().enumerate() {
                let v = mixed.eval(&rn.global, &sn.global).unwrap();
                assert!((block[(i, j)] - v).norm() < 1e-12 * (1.0 + v.norm()));
            }
        }
    }

    #[test]
    fn isotropic_monte_carlo_power_correlation_and_mean() {
        let ch = link();
        let lam = ch.carrier.lambda();
        let sampler = CorrelationSampler::new(&AngularSpectrum::isotropic(), &ch.tx, &ch.rx, &ch.carrier, 12).unwrap();
        let s = Vector2::new(0.2 * lam, -0.1 * lam);
        let r1 = Vector2::new(-5.0 * lam, 0.0);
        let r2 = Vector2::new(5.0 * lam, 0.0);
        let n = 10_000;
        let (mut p1, mut p2, mut cross, mut mean) = (0.0, 0.0, C64::new(0.0, 0.0), C64::new(0.0, 0.0));
        for seed in 0..n {
            let real = sampler.sample(seed);
            let a = evaluate_realization(&real, &r1, &s);
            let b = evaluate_realization(&real, &r2, &s);
            p1 += a.norm_sqr();
            p2 += b.norm_sqr();
            cross += a * b.conj();
            mean += a;
        }
        let nf = n as f64;
        let (p1, p2) = (p1 / nf, p2 / nf);
        assert!((p1 - 1.0).abs() < 0.05, "E|h|^2 = {p1}");
        let rho = (cross / nf).norm() / (p1 * p2).sqrt();
        assert!(rho < 0.2, "correlation {rho}");
        // Oracle: Σ_p v_p e^{-jk_p·d} / Σ_p v_p over the retained rx cells.
        let d = r1 - r2;
        let num: C64 = sampler.rx_cells.iter().map(|c| c.amplitude.powi(2) * C64::from_polar(1.0, -c.kappa.dot(&d))).sum();
        let den: f64 = sampler.rx_cells.iter().map(|c| c.amplitude.powi(2)).sum();
        assert!((rho - num.norm() / den).abs() < 0.05);
        assert!((mean / nf).norm() <= 3.0 * (p1 / nf).sqrt());
    }

    proptest! {
        #[test]
        fn multipath_linear_in_gain(re in -2.0f64..2.0, im in -2.0f64..2.0, c in -3.0f64..3.0) {
            let ch = link();
            let r = Vec3::new(0.0, 0.43, 0.001);
            let s = Vec3::new(0.002, 0.0, 0.0);
            let q = Vec3::new(0.1, 0.2, -0.05);
            let los = los_kernel(&ch, &r, &s).unwrap();
            let g = C64::new(re, im);
            let one = multipath_kernel(&ch, &[Scatterer::new(q, g)], &r, &s).unwrap() - los;
            let scaled = multipath_kernel(&ch, &[Scatterer::new(q, g * c)], &r, &s).unwrap() - los;
            prop_assert!((scaled - one * c).norm() <= 1e-9 * (one.norm() * c.abs() + 1e-300));
        }

        #[test]
        fn vmf_nonnegative(t in 0.0f64..PI, p in 0.0f64..PI, a in 0.0f64..200.0, mt in 0.0f64..PI, mp in 0.0f64..PI) {
            let c = Carrier::new(28e9).unwrap();
            let cl = VmfCluster { modal_theta_rad: mt, modal_phi_rad: mp, concentration: a, weight: 1.0 };
            let v = vmf_density(t, p, &cl, &c);
            prop_assert!(v >= 0.0 && v.is_finite());
        }
    }
}
