//! Closed-form geometric kernels for the spindle and cylinder transforms.
//!
//! Two hollow balls appear throughout: the *spindle domain* `ε₁ < |x| < ε₂ < 1`
//! where densities live physically, and the *cylinder domain*
//! `α₁ < |x| < α₂` obtained through the radial map [`vmap_inverse`]. The
//! radius link is `α = 2ε / (1 − ε²)`.

use std::f64::consts::PI;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Electron rest energy in keV.
pub const ELECTRON_REST_ENERGY_KEV: f64 = 511.0;

/// Smallest cylinder parameter admitted on sampling grids; smaller values
/// approach the degenerate cylinder where `x ∥ θ`.
pub const S_MIN: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn normalized(self) -> Vec3 {
        self / self.norm()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, k: f64) -> Vec3 {
        Vec3::new(self.x * k, self.y * k, self.z * k)
    }
}

impl Mul<Vec3> for f64 {
    type Output = Vec3;
    fn mul(self, v: Vec3) -> Vec3 {
        v * self
    }
}

impl Div<f64> for Vec3 {
    type Output = Vec3;
    fn div(self, k: f64) -> Vec3 {
        Vec3::new(self.x / k, self.y / k, self.z / k)
    }
}

/// A unit vector on S² together with its chart coordinates
/// `θ = (cos α cos β, sin α cos β, sin β)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Direction {
    pub alpha: f64,
    pub beta: f64,
    pub unit: Vec3,
}

impl Direction {
    pub fn from_angles(alpha: f64, beta: f64) -> Self {
        let (sa, ca) = alpha.sin_cos();
        let (sb, cb) = beta.sin_cos();
        Self { alpha, beta, unit: Vec3::new(ca * cb, sa * cb, sb) }
    }

    /// Colatitude/longitude form used by the sphere grids.
    pub fn from_colat_lon(colat: f64, lon: f64) -> Self {
        let (sc, cc) = colat.sin_cos();
        let (sl, cl) = lon.sin_cos();
        Self { alpha: lon, beta: PI / 2.0 - colat, unit: Vec3::new(sc * cl, sc * sl, cc) }
    }

    pub fn from_unit(v: Vec3) -> Result<Self> {
        let n = v.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::Domain("direction from a zero or non-finite vector".into()));
        }
        let unit = v / n;
        Ok(Self { alpha: unit.y.atan2(unit.x), beta: unit.z.clamp(-1.0, 1.0).asin(), unit })
    }

    /// `∂θ/∂α`; its norm is `cos β`.
    pub fn d_alpha(&self) -> Vec3 {
        let (sa, ca) = self.alpha.sin_cos();
        let cb = self.beta.cos();
        Vec3::new(-sa * cb, ca * cb, 0.0)
    }

    /// `∂θ/∂β`; a unit vector.
    pub fn d_beta(&self) -> Vec3 {
        let (sa, ca) = self.alpha.sin_cos();
        let (sb, cb) = self.beta.sin_cos();
        Vec3::new(-ca * sb, -sa * sb, cb)
    }

    pub fn antipode(&self) -> Direction {
        Direction { alpha: self.alpha + PI, beta: -self.beta, unit: -self.unit }
    }
}

/// Deterministic orthonormal completion `{e₁, e₂}` of `θ`.
pub fn frame(theta: Vec3) -> (Vec3, Vec3) {
    let a = if theta.z.abs() > 0.9 { Vec3::new(1.0, 0.0, 0.0) } else { Vec3::new(0.0, 0.0, 1.0) };
    let e1 = a.cross(theta).normalized();
    let e2 = theta.cross(e1);
    (e1, e2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Flavor {
    SpindleDomain,
    CylinderDomain,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HollowBall {
    pub inner: f64,
    pub outer: f64,
    pub flavor: Flavor,
}

impl HollowBall {
    pub fn spindle(inner: f64, outer: f64) -> Result<Self> {
        if !(inner > 0.0 && inner < outer && outer < 1.0) {
            return Err(Error::Config(format!(
                "spindle domain needs 0 < inner < outer < 1, got ({inner}, {outer})"
            )));
        }
        Ok(Self { inner, outer, flavor: Flavor::SpindleDomain })
    }

    pub fn cylinder(inner: f64, outer: f64) -> Result<Self> {
        if !(inner > 0.0 && inner < outer && outer.is_finite()) {
            return Err(Error::Config(format!(
                "cylinder domain needs 0 < inner < outer, got ({inner}, {outer})"
            )));
        }
        Ok(Self { inner, outer, flavor: Flavor::CylinderDomain })
    }

    /// The cylinder-domain ball whose boundary spheres map onto this one's
    /// under [`vmap`]. Identity for a cylinder-domain ball.
    pub fn to_cylinder(&self) -> HollowBall {
        match self.flavor {
            Flavor::CylinderDomain => *self,
            Flavor::SpindleDomain => HollowBall {
                inner: spindle_to_cylinder_radius(self.inner),
                outer: spindle_to_cylinder_radius(self.outer),
                flavor: Flavor::CylinderDomain,
            },
        }
    }

    pub fn to_spindle(&self) -> HollowBall {
        match self.flavor {
            Flavor::SpindleDomain => *self,
            Flavor::CylinderDomain => HollowBall {
                inner: radial_profile(self.inner),
                outer: radial_profile(self.outer),
                flavor: Flavor::SpindleDomain,
            },
        }
    }

    pub fn contains(&self, x: Vec3) -> bool {
        let r = x.norm();
        r > self.inner && r < self.outer
    }
}

impl Default for HollowBall {
    fn default() -> Self {
        Self { inner: 0.1, outer: 0.9, flavor: Flavor::SpindleDomain }
    }
}

/// `α = 2ε / (1 − ε²)`.
pub fn spindle_to_cylinder_radius(eps: f64) -> f64 {
    2.0 * eps / (1.0 - eps * eps)
}

/// Radial profile of [`vmap`]: `g(ρ) = (√(ρ²+1) − 1)/ρ`, written in a form
/// without cancellation at small `ρ`.
pub fn radial_profile(rho: f64) -> f64 {
    rho / ((rho * rho + 1.0).sqrt() + 1.0)
}

fn radial_profile_derivative(rho: f64) -> f64 {
    let q = (rho * rho + 1.0).sqrt();
    1.0 / (q * (q + 1.0))
}

/// `E_s = E_λ / (1 + (E_λ/E₀)(1 − cos ω))`.
pub fn scattered_energy(e_lambda: f64, omega: f64, e0: f64) -> f64 {
    e_lambda / (1.0 + (e_lambda / e0) * (1.0 - omega.cos()))
}

/// The diffeomorphism taking the cylinder domain onto the spindle domain.
pub fn vmap(x: Vec3) -> Result<Vec3> {
    let rho = x.norm();
    if !(rho > 0.0) {
        return Err(Error::Domain("vmap is undefined at the origin".into()));
    }
    Ok(x * (1.0 / ((rho * rho + 1.0).sqrt() + 1.0)))
}

/// Inverse of [`vmap`]: `x = 2y / (1 − |y|²)`.
pub fn vmap_inverse(y: Vec3) -> Result<Vec3> {
    let r2 = y.norm_sq();
    if !(r2 > 0.0 && r2 < 1.0) {
        return Err(Error::Domain(format!("vmap_inverse needs 0 < |y| < 1, got |y| = {}", r2.sqrt())));
    }
    Ok(y * (2.0 / (1.0 - r2)))
}

/// `det J_v = g′(ρ) (g(ρ)/ρ)²` for the radial map `v`.
pub fn vmap_jacobian_det(x: Vec3) -> Result<f64> {
    let rho = x.norm();
    if !(rho > 0.0) {
        return Err(Error::Domain("vmap Jacobian is undefined at the origin".into()));
    }
    Ok(jacobian_det_radial(rho))
}

pub(crate) fn jacobian_det_radial(rho: f64) -> f64 {
    let ratio = 1.0 / ((rho * rho + 1.0).sqrt() + 1.0);
    radial_profile_derivative(rho) * ratio * ratio
}

/// `h(s, x, θ) = 4|x×θ|²/(1−|x|²)² − s`; its zero set is the spindle torus.
pub fn h_eval(s: f64, x: Vec3, theta: &Direction) -> Result<f64> {
    let r2 = x.norm_sq();
    if r2 >= 1.0 {
        return Err(Error::Domain(format!("h is singular for |x| ≥ 1, got {}", r2.sqrt())));
    }
    let c = x.cross(theta.unit).norm_sq();
    let d = 1.0 - r2;
    Ok(4.0 * c / (d * d) - s)
}

/// `∇ₓh`. Independent of `s`.
pub fn grad_h(x: Vec3, theta: &Direction) -> Result<Vec3> {
    if x.norm_sq() >= 1.0 {
        return Err(Error::Domain(format!("∇h is singular for |x| ≥ 1, got {}", x.norm())));
    }
    Ok(grad_h_raw(x, theta.unit))
}

#[inline]
pub(crate) fn grad_h_raw(x: Vec3, theta: Vec3) -> Vec3 {
    let r2 = x.norm_sq();
    let d = 1.0 - r2;
    let xt = x.dot(theta);
    let c = r2 - xt * xt;
    (x - theta * xt) * (8.0 / (d * d)) + x * (16.0 * c.max(0.0) / (d * d * d))
}

/// Nodes and positive surface-measure weights on a clipped surface.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SurfaceQuadrature {
    pub nodes: Vec<Vec3>,
    pub weights: Vec<f64>,
}

impl SurfaceQuadrature {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// How the axial coordinate of a cylinder is sampled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum AxialRule {
    /// Trapezoid uniform in the axial coordinate `z`.
    #[default]
    Uniform,
    /// Trapezoid uniform in the axial coordinate of `vmap(x)`, so that nodes
    /// are evenly spread once carried into the spindle domain.
    SpindleAxial,
}

/// `w(z)`: axial coordinate of `vmap(√s e + z θ)`.
fn spindle_axial_of(s: f64, z: f64) -> f64 {
    z / ((s + 1.0 + z * z).sqrt() + 1.0)
}

/// Inverse of [`spindle_axial_of`] and `dz/dw`.
fn spindle_axial_inverse(s: f64, w: f64) -> (f64, f64) {
    let d = 1.0 - w * w;
    let q = (1.0 + d * s).sqrt();
    let z = w * (1.0 + q) / d;
    let dz = ((1.0 + q - w * w * s / q) * d + 2.0 * w * w * (1.0 + q)) / (d * d);
    (z, dz)
}

fn trapezoid_band(lo: f64, hi: f64, n: usize, mut emit: impl FnMut(f64, f64)) {
    let step = (hi - lo) / (n - 1) as f64;
    for i in 0..n {
        let t = if i == n - 1 { hi } else { lo + step * i as f64 };
        let w = if i == 0 || i == n - 1 { 0.5 * step } else { step };
        emit(t, w);
    }
}

/// Axial bands `z ∈ [lo, hi]` of the cylinder `|x|² − (x·θ)² = s` inside the
/// hollow ball, listed in increasing `z`.
fn cylinder_bands(s: f64, domain: &HollowBall) -> Vec<(f64, f64)> {
    let outer2 = domain.outer * domain.outer;
    let inner2 = domain.inner * domain.inner;
    if !(s > 0.0) || s >= outer2 {
        return Vec::new();
    }
    let z_out = (outer2 - s).sqrt();
    if s < inner2 {
        let z_in = (inner2 - s).sqrt();
        vec![(-z_out, -z_in), (z_in, z_out)]
    } else {
        vec![(-z_out, z_out)]
    }
}

/// Visits the nodes of the cylinder quadrature without allocating:
/// `emit(x, weight)` with `weight` the surface-measure weight.
pub fn for_each_cylinder_node(
    s: f64,
    theta: Vec3,
    domain: &HollowBall,
    n_phi: usize,
    n_z: usize,
    rule: AxialRule,
    mut emit: impl FnMut(Vec3, f64),
) {
    let bands = cylinder_bands(s, domain);
    if bands.is_empty() {
        return;
    }
    let (e1, e2) = frame(theta);
    let root_s = s.sqrt();
    let dphi = 2.0 * PI / n_phi as f64;
    let ring: Vec<Vec3> = (0..n_phi)
        .map(|k| {
            let (sp, cp) = ((k as f64 + 0.5) * dphi).sin_cos();
            (e1 * cp + e2 * sp) * root_s
        })
        .collect();
    let ring_weight = root_s * dphi;
    for (lo, hi) in bands {
        match rule {
            AxialRule::Uniform => trapezoid_band(lo, hi, n_z, |z, wz| {
                for &r in &ring {
                    emit(r + theta * z, ring_weight * wz);
                }
            }),
            AxialRule::SpindleAxial => {
                let (wlo, whi) = (spindle_axial_of(s, lo), spindle_axial_of(s, hi));
                trapezoid_band(wlo, whi, n_z, |w, ww| {
                    let (z, dz) = spindle_axial_inverse(s, w);
                    for &r in &ring {
                        emit(r + theta * z, ring_weight * ww * dz);
                    }
                })
            }
        }
    }
}

/// Quadrature on the cylinder `|x|² − (x·θ)² = s`, clipped to a
/// cylinder-domain hollow ball. Midpoint in `φ`, trapezoid in `z`; when
/// `s < inner²` the cylinder crosses the inner sphere and yields two bands.
pub fn cylinder_quadrature(
    s: f64,
    theta: &Direction,
    domain: &HollowBall,
    n_phi: usize,
    n_z: usize,
) -> Result<SurfaceQuadrature> {
    if n_phi < 2 || n_z < 2 {
        return Err(Error::Config("cylinder quadrature needs n_phi, n_z ≥ 2".into()));
    }
    if !(s > 0.0) {
        return Err(Error::Domain(format!("cylinder parameter must be positive, got {s}")));
    }
    let mut q = SurfaceQuadrature::default();
    for_each_cylinder_node(s, theta.unit, domain, n_phi, n_z, AxialRule::Uniform, |x, w| {
        q.nodes.push(x);
        q.weights.push(w);
    });
    Ok(q)
}

/// Quadrature on the spindle torus `(r + |x×θ|)² + (x·θ)² = 1 + r²` clipped
/// to a spindle-domain hollow ball.
///
/// The surface is the revolution about `θ` of the arc
/// `(a, b) = (−r + R cos t, R sin t)`, `R = √(1+r²)`, `a ≥ 0`. Along the arc
/// `|x|² = 1 + 2r² − 2rR cos t` grows with `|t|`, so clipping is a band in `t`.
pub fn spindle_quadrature(
    r: f64,
    theta: &Direction,
    domain: &HollowBall,
    n_psi: usize,
    n_arc: usize,
) -> Result<SurfaceQuadrature> {
    if !(r >= 0.0) {
        return Err(Error::Domain(format!("tube offset must be non-negative, got {r}")));
    }
    if n_psi < 2 || n_arc < 2 {
        return Err(Error::Config("spindle quadrature needs n_psi, n_arc ≥ 2".into()));
    }
    let mut q = SurfaceQuadrature::default();
    let big_r = (1.0 + r * r).sqrt();
    // r = 0 is the unit sphere, which never meets a spindle domain.
    if r == 0.0 || domain.outer <= big_r - r {
        return Ok(q);
    }
    let t_of_radius = |rho: f64| ((1.0 + 2.0 * r * r - rho * rho) / (2.0 * r * big_r)).clamp(-1.0, 1.0).acos();
    let t_max = (r / big_r).acos();
    let t_hi = if domain.outer >= 1.0 { t_max } else { t_of_radius(domain.outer).min(t_max) };
    let t_lo = if domain.inner <= big_r - r { 0.0 } else { t_of_radius(domain.inner) };
    let bands = if t_lo == 0.0 { vec![(-t_hi, t_hi)] } else { vec![(-t_hi, -t_lo), (t_lo, t_hi)] };

    let (e1, e2) = frame(theta.unit);
    let dpsi = 2.0 * PI / n_psi as f64;
    for (lo, hi) in bands {
        trapezoid_band(lo, hi, n_arc, |t, wt| {
            let (st, ct) = t.sin_cos();
            let a = (-r + big_r * ct).max(0.0);
            let b = big_r * st;
            for k in 0..n_psi {
                let (sp, cp) = ((k as f64 + 0.5) * dpsi).sin_cos();
                q.nodes.push((e1 * cp + e2 * sp) * a + theta.unit * b);
                q.weights.push(a * big_r * wt * dpsi);
            }
        });
    }
    Ok(q)
}
