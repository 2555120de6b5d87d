//! Constants, aperture geometry, Green's functions and coupling kernels.

use std::f64::consts::PI;

use nalgebra::{Matrix2, Matrix3, Vector2};

use crate::error::{domain, Result};
use crate::quadrature::ApertureGrid;
use crate::{Vec3, C64};

/// Speed of light in vacuum (m/s), exact.
pub const LIGHT_SPEED: f64 = 299_792_458.0;
/// Vacuum permeability (H/m), CODATA 2018.
pub const MU0: f64 = 1.256_637_062_12e-6;
/// Vacuum permittivity (F/m), CODATA 2018.
pub const EPS0: f64 = 8.854_187_812_8e-12;
/// Free-space impedance (ohm), CODATA 2018.
pub const ETA0: f64 = 376.730_313_668;

/// Monochromatic carrier and its derived free-space quantities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Carrier {
    pub frequency_hz: f64,
    pub wavelength_m: f64,
    pub wavenumber_rad_per_m: f64,
    pub impedance_ohm: f64,
    pub light_speed_m_per_s: f64,
}

impl Carrier {
    pub fn new(frequency_hz: f64) -> Result<Self> {
        if !(frequency_hz.is_finite() && frequency_hz > 0.0) {
            return domain(format!("carrier frequency must be positive, got {frequency_hz}"));
        }
        let wavelength_m = LIGHT_SPEED / frequency_hz;
        Ok(Self {
            frequency_hz,
            wavelength_m,
            wavenumber_rad_per_m: 2.0 * PI / wavelength_m,
            impedance_ohm: ETA0,
            light_speed_m_per_s: LIGHT_SPEED,
        })
    }

    pub fn from_wavelength(wavelength_m: f64) -> Result<Self> {
        if !(wavelength_m.is_finite() && wavelength_m > 0.0) {
            return domain(format!("wavelength must be positive, got {wavelength_m}"));
        }
        Self::new(LIGHT_SPEED / wavelength_m)
    }

    /// Angular frequency ω = 2πf.
    pub fn omega(&self) -> f64 {
        2.0 * PI * self.frequency_hz
    }

    pub fn k0(&self) -> f64 {
        self.wavenumber_rad_per_m
    }

    pub fn lambda(&self) -> f64 {
        self.wavelength_m
    }
}

/// Proper rotation mapping local aperture axes to the global frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Orientation {
    pub matrix: Matrix3<f64>,
    pub euler_rad: Option<(f64, f64, f64)>,
}

impl Default for Orientation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Orientation {
    pub fn identity() -> Self {
        Self { matrix: Matrix3::identity(), euler_rad: Some((0.0, 0.0, 0.0)) }
    }

    /// Validates orthonormality and unit determinant to 1e-12.
    pub fn from_matrix(matrix: Matrix3<f64>) -> Result<Self> {
        let defect = (matrix.transpose() * matrix - Matrix3::identity()).abs().max();
        if defect > 1e-12 || (matrix.determinant() - 1.0).abs() > 1e-12 {
            return domain("orientation matrix is not a proper rotation");
        }
        Ok(Self { matrix, euler_rad: None })
    }

    /// In-plane block [[C11, C13], [C31, C33]].
    pub fn in_plane_block(&self) -> Matrix2<f64> {
        let c = &self.matrix;
        Matrix2::new(c[(0, 0)], c[(0, 2)], c[(2, 0)], c[(2, 2)])
    }

    /// |det C∥|, the projected-area factor of the rotated aperture.
    pub fn in_plane_det(&self) -> f64 {
        self.in_plane_block().determinant().abs()
    }

    /// Local x̂′, ŷ′ (normal) and ẑ′ axes as global vectors.
    pub fn axes(&self) -> (Vec3, Vec3, Vec3) {
        (
            self.matrix.column(0).into_owned(),
            self.matrix.column(1).into_owned(),
            self.matrix.column(2).into_owned(),
        )
    }
}

/// Builds C = Rz(α) Ry(β) Rx(γ).
///
/// With this ordering the in-plane block satisfies
/// |det C∥| = |cos α cos γ + sin α sin γ sin β|.
pub fn orientation_from_euler(alpha_rad: f64, beta_rad: f64, gamma_rad: f64) -> Orientation {
    let (sa, ca) = alpha_rad.sin_cos();
    let (sb, cb) = beta_rad.sin_cos();
    let (sg, cg) = gamma_rad.sin_cos();
    let rz = Matrix3::new(ca, -sa, 0.0, sa, ca, 0.0, 0.0, 0.0, 1.0);
    let ry = Matrix3::new(cb, 0.0, sb, 0.0, 1.0, 0.0, -sb, 0.0, cb);
    let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, cg, -sg, 0.0, sg, cg);
    Orientation { matrix: rz * ry * rx, euler_rad: Some((alpha_rad, beta_rad, gamma_rad)) }
}

/// Rectangular aperture in its local x′-z′ plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanarAperture {
    pub center_m: Vec3,
    pub orientation: Orientation,
    pub len_x_m: f64,
    pub len_z_m: f64,
}

/// Result of [`local_to_global`]; `inside` is false for out-of-bounds locals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MappedPoint {
    pub point: Vec3,
    pub inside: bool,
}

impl PlanarAperture {
    pub fn new(center_m: Vec3, orientation: Orientation, len_x_m: f64, len_z_m: f64) -> Result<Self> {
        if !(len_x_m > 0.0 && len_z_m > 0.0 && len_x_m.is_finite() && len_z_m.is_finite()) {
            return domain(format!("aperture edges must be positive, got {len_x_m} x {len_z_m}"));
        }
        if !center_m.iter().all(|v| v.is_finite()) {
            return domain("aperture center must be finite");
        }
        Ok(Self { center_m, orientation, len_x_m, len_z_m })
    }

    /// Axis-aligned aperture (identity orientation) centered at `center_m`.
    pub fn broadside(center_m: Vec3, len_x_m: f64, len_z_m: f64) -> Result<Self> {
        Self::new(center_m, Orientation::identity(), len_x_m, len_z_m)
    }

    pub fn area(&self) -> f64 {
        self.len_x_m * self.len_z_m
    }

    /// Diagonal length, used as the aperture "diameter" in region rules.
    pub fn diameter(&self) -> f64 {
        self.len_x_m.hypot(self.len_z_m)
    }

    pub fn normal(&self) -> Vec3 {
        self.orientation.matrix.column(1).into_owned()
    }

    pub fn to_global(&self, local: Vector2<f64>) -> Vec3 {
        self.center_m + self.orientation.matrix * Vec3::new(local.x, 0.0, local.y)
    }

    /// Inverse of the placement map; returns (r′x, r′z) and the normal offset.
    pub fn to_local(&self, global: &Vec3) -> (Vector2<f64>, f64) {
        let v = self.orientation.matrix.transpose() * (global - self.center_m);
        (Vector2::new(v.x, v.z), v.y)
    }

    pub fn contains_local(&self, local: &Vector2<f64>) -> bool {
        let tol = 1e-12 * self.len_x_m.max(self.len_z_m);
        local.x.abs() <= 0.5 * self.len_x_m + tol && local.y.abs() <= 0.5 * self.len_z_m + tol
    }

    fn corners(&self) -> [Vec3; 4] {
        let hx = 0.5 * self.len_x_m;
        let hz = 0.5 * self.len_z_m;
        [
            self.to_global(Vector2::new(-hx, -hz)),
            self.to_global(Vector2::new(hx, -hz)),
            self.to_global(Vector2::new(hx, hz)),
            self.to_global(Vector2::new(-hx, hz)),
        ]
    }

    /// True when the two closed rectangles share at least one point.
    pub fn intersects(&self, other: &PlanarAperture) -> bool {
        edges_hit(self, other) || edges_hit(other, self)
    }
}

// Does any edge of `a` touch the closed rectangle `b`?
fn edges_hit(a: &PlanarAperture, b: &PlanarAperture) -> bool {
    let corners = a.corners();
    let scale = a.diameter().max(b.diameter());
    let tol = 1e-12 * scale;
    for i in 0..4 {
        let p = corners[i];
        let q = corners[(i + 1) % 4];
        let (lp, dp) = b.to_local(&p);
        let (lq, dq) = b.to_local(&q);
        if dp.abs() <= tol && dq.abs() <= tol {
            // Coplanar edge: clip the segment against b's rectangle.
            if segment_hits_rect(lp, lq, 0.5 * b.len_x_m + tol, 0.5 * b.len_z_m + tol) {
                return true;
            }
        } else if dp * dq <= 0.0 {
            let t = dp / (dp - dq);
            let hit = lp + (lq - lp) * t;
            if b.contains_local(&hit) {
                return true;
            }
        }
    }
    // One rectangle strictly inside the other (coplanar, no edge crossing).
    let (c, d) = b.to_local(&a.center_m);
    d.abs() <= tol && b.contains_local(&c) && a.normal().cross(&b.normal()).norm() <= 1e-12
}

// Liang-Barsky clip of segment p→q against |x| ≤ hx, |z| ≤ hz.
fn segment_hits_rect(p: Vector2<f64>, q: Vector2<f64>, hx: f64, hz: f64) -> bool {
    let d = q - p;
    let mut t0 = 0.0f64;
    let mut t1 = 1.0f64;
    for (pi, di, h) in [(p.x, d.x, hx), (p.y, d.y, hz)] {
        // Constraints den·t ≤ num.
        for (den, num) in [(-di, pi + h), (di, h - pi)] {
            if den == 0.0 {
                if num < 0.0 {
                    return false;
                }
            } else if den < 0.0 {
                t0 = t0.max(num / den);
            } else {
                t1 = t1.min(num / den);
            }
        }
    }
    t0 <= t1
}

/// Maps a local point r′ = (r′x, r′z) to r = r_o + C r′.
pub fn local_to_global(aperture: &PlanarAperture, local: Vector2<f64>) -> MappedPoint {
    MappedPoint { point: aperture.to_global(local), inside: aperture.contains_local(&local) }
}

/// Unit-norm polarization direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Polarization {
    pub direction: Vec3,
}

impl Polarization {
    /// Normalizes `direction`; zero or non-finite vectors are rejected.
    pub fn new(direction: Vec3) -> Result<Self> {
        let n = direction.norm();
        if !(n.is_finite() && n > 0.0) {
            return domain("polarization direction must be a nonzero finite vector");
        }
        Ok(Self { direction: direction / n })
    }

    pub fn x() -> Self {
        Self { direction: Vec3::x() }
    }
    pub fn y() -> Self {
        Self { direction: Vec3::y() }
    }
    pub fn z() -> Self {
        Self { direction: Vec3::z() }
    }
}

/// Scalar Green's function e^{-jk0R}/(4πR).
pub fn scalar_green(distance_m: f64, carrier: &Carrier) -> Result<C64> {
    if !(distance_m > 0.0 && distance_m.is_finite()) {
        return domain(format!("Green's function needs a positive distance, got {distance_m}"));
    }
    let k = carrier.k0();
    Ok(C64::from_polar(1.0 / (4.0 * PI * distance_m), -k * distance_m))
}

/// Which terms of the dyadic Green's function to keep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GreenMode {
    Full,
    Radiative,
}

fn separation(obs: &Vec3, src: &Vec3) -> Result<(f64, Vec3)> {
    let d = obs - src;
    let r = d.norm();
    if !(r > 0.0) {
        return domain("observation and source points coincide");
    }
    Ok((r, d / r))
}

/// Dyadic Green's function mapping a source current at `src` to the field at `obs`.
pub fn dyadic_green(obs: &Vec3, src: &Vec3, carrier: &Carrier, mode: GreenMode) -> Result<Matrix3<C64>> {
    let (r, u) = separation(obs, src)?;
    let k = carrier.k0();
    let uu = u * u.transpose();
    let transverse = Matrix3::identity() - uu;
    let prefactor = C64::new(0.0, -k * carrier.impedance_ohm) * C64::from_polar(1.0 / (4.0 * PI * r), -k * r);
    let mut g = transverse.map(C64::from);
    if mode == GreenMode::Full {
        let kr = k * r;
        let near = Matrix3::identity() - 3.0 * uu;
        let factor = C64::new(-1.0 / (kr * kr), -1.0 / kr);
        g += near.map(|v| factor * v);
    }
    Ok(g * prefactor)
}

/// Field-region label, ordered from the source outward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, serde::Serialize)]
pub enum Region {
    ReactiveNear,
    RadiativeNear,
    Far,
}

/// Inner (reactive) boundary rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReactiveRule {
    /// ρ0 = 0.62 √(D³/λ)
    Classical,
    /// ρ0 = λ
    Lambda,
}

/// Classifies `distance_m`; boundaries belong to the farther region.
pub fn classify_region(
    distance_m: f64,
    aperture_diameter_m: f64,
    carrier: &Carrier,
    rule: ReactiveRule,
) -> Result<Region> {
    if !(distance_m > 0.0 && aperture_diameter_m > 0.0) {
        return domain("distance and aperture diameter must be positive");
    }
    let lambda = carrier.lambda();
    let d = aperture_diameter_m;
    let fraunhofer = 2.0 * d * d / lambda;
    let rho0 = match rule {
        ReactiveRule::Classical => 0.62 * (d * d * d / lambda).sqrt(),
        ReactiveRule::Lambda => lambda,
    };
    Ok(if distance_m >= fraunhofer {
        Region::Far
    } else if distance_m < rho0 {
        Region::ReactiveNear
    } else {
        Region::RadiativeNear
    })
}

/// ρ_pol = p̂_rᵀ (I − ûûᵀ) p̂_t with û pointing from `src` to `obs`.
pub fn polarization_factor(obs: &Vec3, src: &Vec3, p_r: &Polarization, p_t: &Polarization) -> Result<C64> {
    let (_, u) = separation(obs, src)?;
    let a = &p_r.direction;
    let b = &p_t.direction;
    Ok(C64::from(a.dot(b) - a.dot(&u) * u.dot(b)))
}

// sin(x)/x with its radial derivatives: (S, S'/x, S'').
fn sinc_parts(x: f64) -> (f64, f64, f64) {
    if x < 0.5 {
        // Taylor series; 14 terms converge to machine precision for x < 0.5.
        let x2 = x * x;
        let mut a = 1.0; // (-1)^n / (2n+1)!
        let mut pw = 1.0; // x^{2n}
        let mut s = 1.0;
        let mut s1 = 0.0;
        let mut s2 = 0.0;
        for n in 1..14 {
            let nf = n as f64;
            a = -a / ((2.0 * nf) * (2.0 * nf + 1.0));
            let prev = pw;
            pw *= x2;
            s += a * pw;
            s1 += 2.0 * nf * a * prev;
            s2 += 2.0 * nf * (2.0 * nf - 1.0) * a * prev;
        }
        (s, s1, s2)
    } else {
        let (sn, cs) = x.sin_cos();
        let s = sn / x;
        let d1 = (x * cs - sn) / (x * x);
        let d2 = (-x * x * sn - 2.0 * x * cs + 2.0 * sn) / (x * x * x);
        (s, d1 / x, d2)
    }
}

/// Isotropic part φ(s) = sin(k0‖s‖)/(4π‖s‖), with φ(0) = k0/(4π).
pub fn coupling_phi(sep: &Vec3, carrier: &Carrier) -> f64 {
    let k = carrier.k0();
    let (s, _, _) = sinc_parts(k * sep.norm());
    k * s / (4.0 * PI)
}

/// Coupling kernel c_z(s) = k0η0 (φ + k0⁻² ∂²_z φ), finite at s = 0.
pub fn coupling_z(sep: &Vec3, carrier: &Carrier) -> f64 {
    let k = carrier.k0();
    let r = sep.norm();
    let x = k * r;
    let (s, s1_over_x, s2) = sinc_parts(x);
    let c2 = if r > 0.0 { (sep.z / r).powi(2) } else { 0.0 };
    // In scaled coordinates ξ = k0 s: ∂²_ζ S = S''·c² + (S'/x)(1 − c²).
    let d2 = if r > 0.0 { s2 * c2 + s1_over_x * (1.0 - c2) } else { -1.0 / 3.0 };
    k * k * carrier.impedance_ohm / (4.0 * PI) * (s + d2)
}

/// C_12 = −∬ J_aᴴ G J_b over two sampled vector currents.
pub fn aperture_coupling(
    grid_a: &ApertureGrid,
    current_a: &[nalgebra::Vector3<C64>],
    grid_b: &ApertureGrid,
    current_b: &[nalgebra::Vector3<C64>],
    carrier: &Carrier,
) -> Result<C64> {
    if current_a.len() != grid_a.len() || current_b.len() != grid_b.len() {
        return domain("current samples do not match their quadrature grids");
    }
    if grid_a.aperture.intersects(&grid_b.aperture) {
        return domain("apertures overlap; the coupling kernel is singular");
    }
    let mut total = C64::new(0.0, 0.0);
    for (i, na) in grid_a.nodes.iter().enumerate() {
        let ja = current_a[i];
        if ja.iter().all(|v| v.norm_sqr() == 0.0) {
            continue;
        }
        let mut row = C64::new(0.0, 0.0);
        for (j, nb) in grid_b.nodes.iter().enumerate() {
            let jb = current_b[j];
            if jb.iter().all(|v| v.norm_sqr() == 0.0) {
                continue;
            }
            let g = dyadic_green(&na.global, &nb.global, carrier, GreenMode::Full)?;
            let gj = g * jb;
            let inner: C64 = ja.iter().zip(gj.iter()).map(|(a, b)| a.conj() * b).sum();
            row += grid_b.weights[j] * inner;
        }
        total += grid_a.weights[i] * row;
    }
    Ok(-total)
}

/// Mutual impedance Z_12 = C_12/(I_1 I_2).
pub fn mutual_impedance(c12: C64, port_current_1: C64, port_current_2: C64) -> Result<C64> {
    let denom = port_current_1 * port_current_2;
    if denom.norm() == 0.0 {
        return domain("port currents must be nonzero");
    }
    Ok(c12 / denom)
}
