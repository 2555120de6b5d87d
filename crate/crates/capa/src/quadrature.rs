//! Gauss-Legendre rules and tensor-product aperture grids.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::Vector2;

use crate::em_core::{Carrier, PlanarAperture};
use crate::error::{config, domain, Result};
use crate::{Vec3, C64};

/// Largest supported rule order.
pub const MAX_ORDER: usize = 512;

/// M-point Gauss-Legendre rule on [-1, 1], nodes ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussLegendreRule {
    pub order: usize,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

// (P_M(x), P_{M-1}(x)) by the three-term recurrence.
fn legendre_pair(m: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if m == 0 {
        return (1.0, 0.0);
    }
    for n in 1..m {
        let nf = n as f64;
        let p2 = ((2.0 * nf + 1.0) * x * p1 - nf * p0) / (nf + 1.0);
        p0 = p1;
        p1 = p2;
    }
    (p1, p0)
}

fn compute_rule(m: usize) -> GaussLegendreRule {
    let mf = m as f64;
    let mut nodes = vec![0.0; m];
    let mut weights = vec![0.0; m];
    for i in 0..m.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (mf + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, pm1) = legendre_pair(m, x);
            dp = mf * (x * p - pm1) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                let (p, pm1) = legendre_pair(m, x);
                dp = mf * (x * p - pm1) / (x * x - 1.0);
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        // Mirror to enforce exact symmetry; the odd-order middle node is 0.
        let (lo, hi) = (i, m - 1 - i);
        if lo == hi {
            nodes[lo] = 0.0;
        } else {
            nodes[lo] = -x;
            nodes[hi] = x;
        }
        weights[lo] = w;
        weights[hi] = w;
    }
    GaussLegendreRule { order: m, nodes, weights }
}

fn cache() -> &'static Mutex<HashMap<usize, Arc<GaussLegendreRule>>> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<GaussLegendreRule>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Gauss-Legendre rule of the given order (memoized).
pub fn gl_rule(order: usize) -> Result<Arc<GaussLegendreRule>> {
    if !(1..=MAX_ORDER).contains(&order) {
        return config(format!("quadrature order must be in 1..={MAX_ORDER}, got {order}"));
    }
    let mut map = cache().lock().expect("quadrature cache poisoned");
    Ok(map.entry(order).or_insert_with(|| Arc::new(compute_rule(order))).clone())
}

/// ∫_a^b f(x) dx ≈ ((b−a)/2) Σ w_m f(affine(s_m)).
pub fn integrate_1d<F: Fn(f64) -> C64>(f: F, a: f64, b: f64, rule: &GaussLegendreRule) -> Result<C64> {
    if !(a < b) {
        return domain(format!("integration bounds must satisfy a < b, got [{a}, {b}]"));
    }
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let sum: C64 = rule.nodes.iter().zip(&rule.weights).map(|(&s, &w)| w * f(mid + half * s)).sum();
    Ok(sum * half)
}

/// One quadrature node on an aperture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridNode {
    pub global: Vec3,
    pub local: Vector2<f64>,
}

/// Quadrature nodes and weights covering one aperture.
#[derive(Debug, Clone, PartialEq)]
pub struct ApertureGrid {
    pub aperture: PlanarAperture,
    pub nodes: Vec<GridNode>,
    pub weights: Vec<f64>,
    /// Tensor Gauss-Legendre order, when the grid is a single M×M rule.
    pub order: Option<usize>,
    /// Cell (pixel) index of each node for composite grids.
    pub cell: Vec<usize>,
}

impl ApertureGrid {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Σ w |f|² for samples on this grid.
    pub fn norm_sqr(&self, samples: &[C64]) -> f64 {
        self.weights.iter().zip(samples).map(|(w, v)| w * v.norm_sqr()).sum()
    }

    /// Σ w f* g.
    pub fn inner(&self, f: &[C64], g: &[C64]) -> C64 {
        self.weights.iter().zip(f.iter().zip(g)).map(|(w, (a, b))| *w * a.conj() * b).sum()
    }

    pub fn sample<F: Fn(&GridNode) -> C64>(&self, f: F) -> Vec<C64> {
        self.nodes.iter().map(f).collect()
    }
}

/// M×M tensor Gauss-Legendre grid with weights (Lx/2)(Lz/2) w_m w_n.
pub fn aperture_grid(aperture: &PlanarAperture, order: usize) -> Result<ApertureGrid> {
    let rule = gl_rule(order)?;
    let hx = 0.5 * aperture.len_x_m;
    let hz = 0.5 * aperture.len_z_m;
    let mut nodes = Vec::with_capacity(order * order);
    let mut weights = Vec::with_capacity(order * order);
    for (sz, wz) in rule.nodes.iter().zip(&rule.weights) {
        for (sx, wx) in rule.nodes.iter().zip(&rule.weights) {
            let local = Vector2::new(hx * sx, hz * sz);
            nodes.push(GridNode { global: aperture.to_global(local), local });
            weights.push(hx * hz * wx * wz);
        }
    }
    let cell = vec![0; nodes.len()];
    Ok(ApertureGrid { aperture: *aperture, nodes, weights, order: Some(order), cell })
}

/// nx×nz pixels, each integrated with its own order×order rule.
pub fn composite_grid(aperture: &PlanarAperture, nx: usize, nz: usize, order: usize) -> Result<ApertureGrid> {
    if nx == 0 || nz == 0 {
        return config("composite grid needs at least one cell per axis");
    }
    let rule = gl_rule(order)?;
    let dx = aperture.len_x_m / nx as f64;
    let dz = aperture.len_z_m / nz as f64;
    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    let mut cell = Vec::new();
    for iz in 0..nz {
        for ix in 0..nx {
            let cx = -0.5 * aperture.len_x_m + (ix as f64 + 0.5) * dx;
            let cz = -0.5 * aperture.len_z_m + (iz as f64 + 0.5) * dz;
            for (sz, wz) in rule.nodes.iter().zip(&rule.weights) {
                for (sx, wx) in rule.nodes.iter().zip(&rule.weights) {
                    let local = Vector2::new(cx + 0.5 * dx * sx, cz + 0.5 * dz * sz);
                    nodes.push(GridNode { global: aperture.to_global(local), local });
                    weights.push(0.25 * dx * dz * wx * wz);
                    cell.push(iz * nx + ix);
                }
            }
        }
    }
    Ok(ApertureGrid { aperture: *aperture, nodes, weights, order: None, cell })
}

/// Uniform midpoint grid with nx×nz equal cells.
pub fn midpoint_grid(aperture: &PlanarAperture, nx: usize, nz: usize) -> Result<ApertureGrid> {
    if nx == 0 || nz == 0 {
        return config("midpoint grid needs at least one cell per axis");
    }
    let dx = aperture.len_x_m / nx as f64;
    let dz = aperture.len_z_m / nz as f64;
    let mut nodes = Vec::with_capacity(nx * nz);
    for iz in 0..nz {
        for ix in 0..nx {
            let local = Vector2::new(
                -0.5 * aperture.len_x_m + (ix as f64 + 0.5) * dx,
                -0.5 * aperture.len_z_m + (iz as f64 + 0.5) * dz,
            );
            nodes.push(GridNode { global: aperture.to_global(local), local });
        }
    }
    let n = nodes.len();
    Ok(ApertureGrid { aperture: *aperture, nodes, weights: vec![dx * dz; n], order: None, cell: (0..n).collect() })
}

/// Σ w_i f(node_i).
pub fn integrate_aperture<F: Fn(&GridNode) -> C64>(f: F, grid: &ApertureGrid) -> C64 {
    grid.nodes.iter().zip(&grid.weights).map(|(n, &w)| w * f(n)).sum()
}

/// Largest gap between consecutive nodes of the order-M rule scaled to length `len`.
pub fn max_node_spacing(order: usize, len: f64) -> Result<f64> {
    let rule = gl_rule(order)?;
    if order == 1 {
        return Ok(len);
    }
    let gap = rule.nodes.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    Ok(0.5 * len * gap)
}

/// Smallest order whose node spacing is at most λ/4 along both edges.
pub fn default_order(aperture: &PlanarAperture, carrier: &Carrier) -> Result<usize> {
    let len = aperture.len_x_m.max(aperture.len_z_m);
    let target = 0.25 * carrier.lambda();
    let estimate = (2.0 * PI * len / carrier.lambda() - 0.5).floor() as isize - 3;
    let mut m = estimate.max(1) as usize;
    while m <= MAX_ORDER {
        if max_node_spacing(m, len)? <= target {
            return Ok(m);
        }
        m += 1;
    }
    config(format!(
        "aperture edge {len} m needs more than {MAX_ORDER} nodes for lambda/4 spacing; use a composite grid"
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    // Adaptive Simpson, kept here as the independent oracle.
    fn adaptive_simpson<F: Fn(f64) -> C64>(f: &F, a: f64, b: f64, tol: f64) -> C64 {
        fn simpson<F: Fn(f64) -> C64>(f: &F, a: f64, b: f64) -> C64 {
            (f(a) + 4.0 * f(0.5 * (a + b)) + f(b)) * ((b - a) / 6.0)
        }
        fn rec<F: Fn(f64) -> C64>(f: &F, a: f64, b: f64, whole: C64, tol: f64, depth: u32) -> C64 {
            let m = 0.5 * (a + b);
            let left = simpson(f, a, m);
            let right = simpson(f, m, b);
            let delta = left + right - whole;
            if depth == 0 || delta.norm() <= 15.0 * tol {
                return left + right + delta / 15.0;
            }
            rec(f, a, m, left, 0.5 * tol, depth - 1) + rec(f, m, b, right, 0.5 * tol, depth - 1)
        }
        rec(f, a, b, simpson(f, a, b), tol, 40)
    }

    #[test]
    fn low_orders() {
        let r = gl_rule(1).unwrap();
        assert_eq!(r.nodes, vec![0.0]);
        assert_relative_eq!(r.weights[0], 2.0, epsilon = 1e-15);
        let r = gl_rule(2).unwrap();
        assert_relative_eq!(r.nodes[1], 1.0 / 3f64.sqrt(), epsilon = 1e-15);
        assert_relative_eq!(r.nodes[0], -1.0 / 3f64.sqrt(), epsilon = 1e-15);
        assert_relative_eq!(r.weights[0], 1.0, epsilon = 1e-14);
        let r = gl_rule(5).unwrap();
        assert!((r.weights.iter().sum::<f64>() - 2.0).abs() < 1e-14);
        assert!(gl_rule(0).is_err());
        assert!(gl_rule(513).is_err());
    }

    #[test]
    fn nodes_are_roots() {
        for m in [3, 17, 64, 200, 512] {
            let r = gl_rule(m).unwrap();
            for &x in &r.nodes {
                let (p, pm1) = legendre_pair(m, x);
                let dp = m as f64 * (x * p - pm1) / (x * x - 1.0);
                // |x − root| ≈ |P/P′|.
                assert!((p / dp).abs() < 1e-14, "order {m}");
            }
            assert!(r.weights.iter().all(|&w| w > 0.0));
            assert!((r.weights.iter().sum::<f64>() - 2.0).abs() < 1e-12);
            assert!(r.nodes.windows(2).all(|w| w[1] > w[0]));
        }
    }

    #[test]
    fn integrate_1d_examples() {
        let r2 = gl_rule(2).unwrap();
        let v = integrate_1d(|x| C64::from(x * x), -1.0, 1.0, &r2).unwrap();
        assert_relative_eq!(v.re, 2.0 / 3.0, epsilon = 1e-15);
        for m in [1, 4, 9] {
            let v = integrate_1d(|_| C64::from(1.0), 0.0, 1.0, &gl_rule(m).unwrap()).unwrap();
            assert_relative_eq!(v.re, 1.0, epsilon = 1e-15);
        }
        assert!(integrate_1d(|_| C64::from(1.0), 1.0, 1.0, &r2).is_err());
    }

    #[test]
    fn grid_examples() {
        let unit = PlanarAperture::broadside(Vec3::zeros(), 1.0, 1.0).unwrap();
        for m in [1, 3, 8] {
            let g = aperture_grid(&unit, m).unwrap();
            assert_eq!(g.len(), m * m);
            assert_relative_eq!(g.total_weight(), 1.0, max_relative = 1e-12);
        }
        let sq = PlanarAperture::broadside(Vec3::zeros(), 2.0, 2.0).unwrap();
        let g = aperture_grid(&sq, 2).unwrap();
        let v = integrate_aperture(|n| C64::from(n.local.norm_squared()), &g);
        assert_relative_eq!(v.re, 8.0 / 3.0, max_relative = 1e-14);
        let c = composite_grid(&sq, 3, 2, 4).unwrap();
        assert_relative_eq!(c.total_weight(), 4.0, max_relative = 1e-12);
        assert_eq!(*c.cell.iter().max().unwrap(), 5);
        let mgrid = midpoint_grid(&sq, 4, 5).unwrap();
        assert_relative_eq!(mgrid.total_weight(), 4.0, max_relative = 1e-12);
    }

    #[test]
    fn tensor_legendre_exactness() {
        let ap = PlanarAperture::broadside(Vec3::new(1.0, 2.0, 3.0), 2.0, 2.0).unwrap();
        let m = 6;
        let g = aperture_grid(&ap, m).unwrap();
        // P_a(x)·P_b(z) integrates to 4 δ_{a0} δ_{b0} on [-1,1]².
        for a in 0..(2 * m) {
            for b in 0..(2 * m - a).min(2 * m) {
                let v = integrate_aperture(|n| C64::from(legendre_pair(a, n.local.x).0 * legendre_pair(b, n.local.y).0), &g);
                let expect = if a == 0 && b == 0 { 4.0 } else { 0.0 };
                assert!((v.re - expect).abs() < 1e-12, "degrees ({a},{b})");
            }
        }
    }

    #[test]
    fn oscillatory_matches_adaptive_oracle() {
        let c = Carrier::new(28e9).unwrap();
        let k = c.k0();
        let lam = c.lambda();
        let ap = PlanarAperture::broadside(Vec3::zeros(), lam, 1.3 * lam).unwrap();
        let g = aperture_grid(&ap, 16).unwrap();
        let v = integrate_aperture(|n| C64::from_polar(1.0, k * n.local.x), &g);
        let fx = adaptive_simpson(&|x| C64::from_polar(1.0, k * x), -0.5 * lam, 0.5 * lam, 1e-14);
        let oracle = fx * (1.3 * lam);
        assert!((v - oracle).norm() < 1e-8 * ap.area(), "{v} vs {oracle}");
    }

    #[test]
    fn default_order_spacing_rule() {
        let c = Carrier::new(15e9).unwrap();
        let ap = PlanarAperture::broadside(Vec3::zeros(), 0.1, 0.06).unwrap();
        let m = default_order(&ap, &c).unwrap();
        assert!(max_node_spacing(m, 0.1).unwrap() <= 0.25 * c.lambda());
        assert!(max_node_spacing(m - 1, 0.1).unwrap() > 0.25 * c.lambda());
    }

    proptest! {
        #[test]
        fn node_symmetry(m in 1usize..=128) {
            let r = gl_rule(m).unwrap();
            for i in 0..m {
                prop_assert!((r.nodes[i] + r.nodes[m - 1 - i]).abs() <= 1e-14);
            }
        }

        #[test]
        fn random_polynomial_exactness(m in 1usize..=32, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let deg = 2 * m - 1;
            let coeffs: Vec<f64> = (0..=deg).map(|_| rng.random_range(-1.0..1.0)).collect();
            let rule = gl_rule(m).unwrap();
            let p = |x: f64| coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c);
            let q = integrate_1d(|x| C64::from(p(x)), -1.0, 1.0, &rule).unwrap().re;
            let (mut exact, mut scale) = (0.0, 0.0);
            for (n, c) in coeffs.iter().enumerate() {
                let mono = if n % 2 == 0 { 2.0 / (n as f64 + 1.0) } else { 0.0 };
                exact += c * mono;
                scale += c.abs() * 2.0 / (n as f64 + 1.0);
            }
            prop_assert!((q - exact).abs() <= 1e-12 * exact.abs().max(scale));
        }

        #[test]
        fn grid_weights_positive(lx in 0.01f64..3.0, lz in 0.01f64..3.0, m in 1usize..20) {
            let ap = PlanarAperture::broadside(Vec3::zeros(), lx, lz).unwrap();
            let g = aperture_grid(&ap, m).unwrap();
            prop_assert!(g.weights.iter().all(|&w| w > 0.0));
            prop_assert!((g.total_weight() - lx * lz).abs() <= 1e-12 * lx * lz);
        }
    }
}
