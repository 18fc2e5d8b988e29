//! Computable content of the canonical-relation analysis: the two
//! projections and their Jacobian determinants, the blowdown kernels on
//! `Σ = {x·θ = 0}`, Poisson brackets of the rotation generators, the flowout
//! rotation family, and artefact metrics on reconstructions.
//!
//! Points of the canonical relation are `(x, α, β, σ)` with
//! `θ = (cos α cos β, sin α cos β, sin β)`.

use nalgebra::{Matrix3, SMatrix, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::geometry::{Direction, Vec3};
use crate::phantoms::PhantomSpec;
use crate::volume::Volume;

pub type Matrix6 = SMatrix<f64, 6, 6>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CanonicalPoint {
    pub x: Vec3,
    pub alpha: f64,
    pub beta: f64,
    pub sigma: f64,
}

impl CanonicalPoint {
    pub fn new(x: Vec3, alpha: f64, beta: f64, sigma: f64) -> Result<Self> {
        let p = Self { x, alpha, beta, sigma };
        p.check()?;
        Ok(p)
    }

    fn check(&self) -> Result<()> {
        if !(self.beta.cos().abs() > 1e-8) {
            return Err(Error::Domain(format!("chart singular at β = {}", self.beta)));
        }
        if !(self.sigma != 0.0 && self.sigma.is_finite()) || !self.x.is_finite() {
            return Err(Error::Domain("σ must be non-zero and all coordinates finite".into()));
        }
        Ok(())
    }

    pub fn direction(&self) -> Direction {
        Direction::from_angles(self.alpha, self.beta)
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.x.x, self.x.y, self.x.z, self.alpha, self.beta, self.sigma]
    }

    pub fn from_array(z: [f64; 6]) -> Self {
        Self { x: Vec3::new(z[0], z[1], z[2]), alpha: z[3], beta: z[4], sigma: z[5] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CotangentPoint {
    pub x: Vec3,
    pub xi: Vec3,
}

struct Chart {
    theta: Vec3,
    t_alpha: Vec3,
    t_beta: Vec3,
}

fn chart(p: &CanonicalPoint) -> Chart {
    let d = p.direction();
    Chart { theta: d.unit, t_alpha: d.d_alpha(), t_beta: d.d_beta() }
}

/// `(s, α, β, σ, 2σ(x·θ_α)(x·θ), 2σ(x·θ_β)(x·θ))`, `s = |x|² − (x·θ)²`.
pub fn pi_left(p: &CanonicalPoint) -> Result<[f64; 6]> {
    p.check()?;
    Ok(pi_left_raw(&p.to_array()))
}

fn pi_left_raw(z: &[f64; 6]) -> [f64; 6] {
    let p = CanonicalPoint::from_array(*z);
    let c = chart(&p);
    let xt = p.x.dot(c.theta);
    [
        p.x.norm_sq() - xt * xt,
        p.alpha,
        p.beta,
        p.sigma,
        2.0 * p.sigma * p.x.dot(c.t_alpha) * xt,
        2.0 * p.sigma * p.x.dot(c.t_beta) * xt,
    ]
}

/// [`pi_left`] with outputs in canonical pairs `(s, σ, α, α̂, β, β̂)`, the
/// orientation in which the closed-form determinant carries a plus sign.
pub fn pi_left_paired(p: &CanonicalPoint) -> Result<[f64; 6]> {
    p.check()?;
    Ok(pair_order(pi_left_raw(&p.to_array())))
}

fn pair_order(v: [f64; 6]) -> [f64; 6] {
    [v[0], v[3], v[1], v[4], v[2], v[5]]
}

/// `(x, 2σ(x − (x·θ)θ))`.
pub fn pi_right(p: &CanonicalPoint) -> Result<[f64; 6]> {
    p.check()?;
    Ok(pi_right_raw(&p.to_array()))
}

fn pi_right_raw(z: &[f64; 6]) -> [f64; 6] {
    let p = CanonicalPoint::from_array(*z);
    let theta = p.direction().unit;
    let xi = (p.x - theta * p.x.dot(theta)) * (2.0 * p.sigma);
    [p.x.x, p.x.y, p.x.z, xi.x, xi.y, xi.z]
}

/// `(8σ²/cos β)(x·θ)((x·θ_α)² + (x·θ_β)² cos²β)`.
pub fn det_dpi_left(p: &CanonicalPoint) -> Result<f64> {
    p.check()?;
    let c = chart(p);
    let cb = p.beta.cos();
    let xt = p.x.dot(c.theta);
    let (xa, xb) = (p.x.dot(c.t_alpha), p.x.dot(c.t_beta));
    Ok(8.0 * p.sigma * p.sigma / cb * xt * (xa * xa + xb * xb * cb * cb))
}

pub fn det_dpi_right(p: &CanonicalPoint) -> Result<f64> {
    Ok(-det_dpi_left(p)?)
}

/// Central-difference Jacobian with step `rel_step · max(|zᵢ|, 1)`.
pub fn fd_jacobian(f: impl Fn(&[f64; 6]) -> [f64; 6], z: &[f64; 6], rel_step: f64) -> Matrix6 {
    let mut j = Matrix6::zeros();
    for c in 0..6 {
        let h = rel_step * z[c].abs().max(1.0);
        let (mut zp, mut zm) = (*z, *z);
        zp[c] += h;
        zm[c] -= h;
        let (fp, fm) = (f(&zp), f(&zm));
        for r in 0..6 {
            j[(r, c)] = (fp[r] - fm[r]) / (2.0 * h);
        }
    }
    j
}

pub const FD_STEP: f64 = 1e-6;
pub const RANK_THRESHOLD: f64 = 1e-6;

/// Finite-difference `Dπ_L` in the paired output order.
pub fn fd_dpi_left(p: &CanonicalPoint) -> Matrix6 {
    fd_jacobian(|z| pair_order(pi_left_raw(z)), &p.to_array(), FD_STEP)
}

pub fn fd_dpi_right(p: &CanonicalPoint) -> Matrix6 {
    fd_jacobian(pi_right_raw, &p.to_array(), FD_STEP)
}

/// Number of singular values above `threshold · σ_max`.
pub fn numerical_rank(m: &Matrix6, threshold: f64) -> usize {
    let sv = m.singular_values();
    let top = sv.max();
    sv.iter().filter(|s| **s > threshold * top).count()
}

fn on_sigma(p: &CanonicalPoint) -> Result<Chart> {
    p.check()?;
    let c = chart(p);
    let xt = p.x.dot(c.theta);
    if xt.abs() > 1e-12 * p.x.norm().max(1.0) {
        return Err(Error::Domain(format!("point is not on Σ: x·θ = {xt:e}")));
    }
    Ok(c)
}

/// `((x·θ_β)θ_α − (x·θ_α)θ_β, 0, 0, 0)` in `(x, α, β, σ)` coordinates.
pub fn blowdown_kernel_left(p: &CanonicalPoint) -> Result<[f64; 6]> {
    let c = on_sigma(p)?;
    let w = c.t_alpha * p.x.dot(c.t_beta) - c.t_beta * p.x.dot(c.t_alpha);
    Ok([w.x, w.y, w.z, 0.0, 0.0, 0.0])
}

/// `(0, 0, 0, x·θ_β, −x·θ_α, 0)`.
pub fn blowdown_kernel_right(p: &CanonicalPoint) -> Result<[f64; 6]> {
    let c = on_sigma(p)?;
    Ok([0.0, 0.0, 0.0, p.x.dot(c.t_beta), -p.x.dot(c.t_alpha), 0.0])
}

const GENERATOR_PAIRS: [(usize, usize); 3] = [(0, 1), (0, 2), (1, 2)];

/// Gradients `(∂ₓp, ∂_ξp)` of `p = x_a ξ_b − x_b ξ_a`.
fn generator_gradients(i: usize, q: &CotangentPoint) -> ([f64; 3], [f64; 3]) {
    let (a, b) = GENERATOR_PAIRS[i];
    let (x, xi) = (q.x.to_array(), q.xi.to_array());
    let mut dx = [0.0; 3];
    let mut dxi = [0.0; 3];
    dx[a] = xi[b];
    dx[b] = -xi[a];
    dxi[b] = x[a];
    dxi[a] = -x[b];
    (dx, dxi)
}

/// `{p_i, p_j} = H_{p_i} p_j` with `H_p = Σ ∂_{ξ_k}p ∂_{x_k} − ∂_{x_k}p ∂_{ξ_k}`,
/// for the rotation generators `p₁ = x₁ξ₂ − x₂ξ₁`, `p₂ = x₁ξ₃ − x₃ξ₁`,
/// `p₃ = x₂ξ₃ − x₃ξ₂` (indices `1..=3`).
pub fn poisson_bracket(i: usize, j: usize, q: &CotangentPoint) -> Result<f64> {
    if !(1..=3).contains(&i) || !(1..=3).contains(&j) {
        return Err(Error::Domain(format!("bracket indices must be in 1..=3, got ({i}, {j})")));
    }
    let (dxi_i, dxii_i) = generator_gradients(i - 1, q);
    let (dx_j, dxi_j) = generator_gradients(j - 1, q);
    Ok((0..3).map(|k| dxii_i[k] * dx_j[k] - dxi_i[k] * dxi_j[k]).sum())
}

/// `e^{tG} = I + G sin t + G²(1 − cos t)`, `G = b aᵀ − a bᵀ`,
/// `a = (1, 0, 0)`, `b = (0, cos ω, sin ω)`.
pub fn flowout_rotation(t: f64, omega: f64) -> Matrix3<f64> {
    let g = flowout_generator(omega);
    Matrix3::identity() + g * t.sin() + g * g * (1.0 - t.cos())
}

pub fn flowout_generator(omega: f64) -> Matrix3<f64> {
    let a = Vector3::new(1.0, 0.0, 0.0);
    let b = Vector3::new(0.0, omega.cos(), omega.sin());
    b * a.transpose() - a * b.transpose()
}

/// `Σ_{k ≤ terms} M^k / k!`.
pub fn series_expm(m: &Matrix3<f64>, terms: usize) -> Matrix3<f64> {
    let mut acc = Matrix3::identity();
    let mut term = Matrix3::identity();
    for k in 1..=terms {
        term = term * m / k as f64;
        acc += term;
    }
    acc
}

/// Bead-centred energy ratios of a reconstruction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtefactReport {
    /// Energy in `||x| − |c|| ≤ r` outside both neighbourhoods over the bead
    /// neighbourhood energy.
    pub smear_ratio: f64,
    /// Energy near `−c` over energy near `c`.
    pub mirror_ratio: f64,
    pub bead_energy: f64,
    pub mirror_energy: f64,
    pub annulus_energy: f64,
}

/// Energies `Σ v²` over balls of radius `2r` about the bead centre and its
/// mirror image, and over the spherical band at the centre's radius.
pub fn artefact_metrics(recon: &Volume, spec: &PhantomSpec) -> Result<ArtefactReport> {
    let PhantomSpec::Bead { center, radius, .. } = *spec else {
        return Err(Error::Config(format!("artefact metrics need a bead phantom, got {}", spec.kind())));
    };
    let hood = 2.0 * radius;
    let rc = center.norm();
    let (mut bead, mut mirror, mut annulus) = (0.0, 0.0, 0.0);
    for (x, v) in recon.centers().zip(&recon.values) {
        let e = v * v;
        let near = (x - center).norm() <= hood;
        let near_mirror = (x + center).norm() <= hood;
        if near {
            bead += e;
        }
        if near_mirror {
            mirror += e;
        }
        if !near && !near_mirror && (x.norm() - rc).abs() <= radius {
            annulus += e;
        }
    }
    if !(bead > 0.0) {
        return Err(Error::Numeric("reconstruction has no energy near the bead".into()));
    }
    Ok(ArtefactReport {
        smear_ratio: annulus / bead,
        mirror_ratio: mirror / bead,
        bead_energy: bead,
        mirror_energy: mirror,
        annulus_energy: annulus,
    })
}

/// Random chart point with `β ∈ (−π/4, π/4)` and `|x| ∈ [0.2, 0.9]`.
pub fn random_point(rng: &mut impl Rng) -> CanonicalPoint {
    let alpha = rng.random_range(-PI..PI);
    let beta = rng.random_range(-PI / 4.0 + 0.05..PI / 4.0 - 0.05);
    let dir = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let x = dir.normalized() * rng.random_range(0.2..0.9);
    let mag = rng.random_range(0.5..2.0);
    let sigma = if rng.random_bool(0.5) { mag } else { -mag };
    CanonicalPoint { x, alpha, beta, sigma }
}

/// Random point of `Σ`: `x = a θ_α/|θ_α| + b θ_β`.
pub fn random_sigma_point(rng: &mut impl Rng) -> CanonicalPoint {
    let mut p = random_point(rng);
    let c = chart(&p);
    let (a, b) = (rng.random_range(-0.7..0.7), rng.random_range(-0.7..0.7));
    let (a, b) = if a * a + b * b < 0.04 { (a + 0.3, b) } else { (a, b) };
    p.x = c.t_alpha.normalized() * a + c.t_beta * b;
    p
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub measured: f64,
    pub tolerance: f64,
    /// The check passes when `measured ≤ tolerance`, or `≥` for lower bounds.
    pub lower_bound: bool,
    pub passed: bool,
}

impl CheckResult {
    fn upper(name: &str, measured: f64, tolerance: f64) -> Self {
        Self { name: name.into(), measured, tolerance, lower_bound: false, passed: measured <= tolerance }
    }

    fn lower(name: &str, measured: f64, tolerance: f64) -> Self {
        Self { name: name.into(), measured, tolerance, lower_bound: true, passed: measured >= tolerance }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub n_points: usize,
    pub seed: u64,
    pub tolerance_factor: f64,
    pub checks: Vec<CheckResult>,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn table(&self) -> String {
        let mut out = format!("{:<34} {:>12} {:>12}  result\n", "check", "measured", "tolerance");
        for c in &self.checks {
            let rel = if c.lower_bound { ">=" } else { "<=" };
            out.push_str(&format!(
                "{:<34} {:>12.3e} {} {:>9.1e}  {}\n",
                c.name,
                c.measured,
                rel,
                c.tolerance,
                if c.passed { "PASS" } else { "FAIL" }
            ));
        }
        out
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

fn apply6(m: &Matrix6, v: &[f64; 6]) -> f64 {
    (m * SMatrix::<f64, 6, 1>::from_column_slice(v)).norm()
}

/// Runs every microlocal check on `n_points` seeded samples. Tolerances are
/// multiplied by `tolerance_factor`; lower bounds are divided by it.
pub fn run_verification(n_points: usize, seed: u64, tolerance_factor: f64) -> Result<VerificationReport> {
    if n_points == 0 || !(tolerance_factor > 0.0) {
        return Err(Error::Config("verification needs n_points ≥ 1 and a positive tolerance factor".into()));
    }
    let tf = tolerance_factor;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut generic = Vec::new();
    while generic.len() < n_points {
        let p = random_point(&mut rng);
        if p.x.dot(p.direction().unit).abs() > 0.1 * p.x.norm() {
            generic.push(p);
        }
    }
    let sigma_pts: Vec<CanonicalPoint> = (0..n_points).map(|_| random_sigma_point(&mut rng)).collect();

    let mut det_l: f64 = 0.0;
    let mut det_r: f64 = 0.0;
    let mut det_sym: f64 = 0.0;
    let mut even: f64 = 0.0;
    let mut min_rank_ratio = f64::INFINITY;
    for p in &generic {
        let dl = det_dpi_left(p)?;
        let dr = det_dpi_right(p)?;
        det_l = det_l.max(rel_err(fd_dpi_left(p).determinant(), dl));
        det_r = det_r.max(rel_err(fd_dpi_right(p).determinant(), dr));
        det_sym = det_sym.max((dr + dl).abs() / dl.abs());
        let mirrored = CanonicalPoint { x: -p.x, ..*p };
        let (a, b) = (pi_left(p)?, pi_left(&mirrored)?);
        even = even.max(a.iter().zip(&b).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
        let sv = fd_dpi_left(p).singular_values();
        min_rank_ratio = min_rank_ratio.min(sv.min() / sv.max());
    }

    let mut det_on_sigma: f64 = 0.0;
    let mut rank_ratio: f64 = 0.0;
    let mut ker_l: f64 = 0.0;
    let mut ker_r: f64 = 0.0;
    for p in &sigma_pts {
        let scale = 8.0 * p.sigma * p.sigma * p.x.norm_sq() * p.x.norm() / p.beta.cos();
        det_on_sigma = det_on_sigma.max(det_dpi_left(p)?.abs().max(det_dpi_right(p)?.abs()) / scale);
        let jl = fd_dpi_left(p);
        let sv = jl.singular_values();
        let mut sorted: Vec<f64> = sv.iter().copied().collect();
        sorted.sort_by(f64::total_cmp);
        rank_ratio = rank_ratio.max(sorted[0] / sorted[5]);
        min_rank_ratio = min_rank_ratio.min(sorted[1] / sorted[5]);
        let kl = blowdown_kernel_left(p)?;
        let kl_norm = kl.iter().map(|v| v * v).sum::<f64>().sqrt();
        ker_l = ker_l.max(apply6(&jl, &kl) / (jl.norm() * kl_norm));
        let jr = fd_dpi_right(p);
        let kr = blowdown_kernel_right(p)?;
        let kr_norm = kr.iter().map(|v| v * v).sum::<f64>().sqrt();
        ker_r = ker_r.max(apply6(&jr, &kr) / (jr.norm() * kr_norm));
    }

    let mut series: f64 = 0.0;
    let mut rot: f64 = 0.0;
    let mut orth: f64 = 0.0;
    for it in 0..20 {
        for iw in 0..20 {
            let t = PI * it as f64 / 19.0;
            let w = 2.0 * PI * iw as f64 / 20.0;
            let e = flowout_rotation(t, w);
            series = series.max((e - series_expm(&(flowout_generator(w) * t), 30)).amax());
            let col = e * Vector3::new(1.0, 0.0, 0.0);
            let expect = Vector3::new(t.cos(), t.sin() * w.cos(), t.sin() * w.sin());
            rot = rot.max((col - expect).amax());
            orth = orth.max((e * e.transpose() - Matrix3::identity()).amax()).max((e.determinant() - 1.0).abs());
        }
    }

    let mut bracket: f64 = 0.0;
    let mut preserved: f64 = 0.0;
    for _ in 0..n_points.max(100) {
        let x = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let q = CotangentPoint { x, xi: x * rng.random_range(-2.0..2.0) };
        for (i, j) in [(1, 2), (1, 3), (2, 3)] {
            bracket = bracket.max(poisson_bracket(i, j, &q)?.abs());
        }
        let e = flowout_rotation(rng.random_range(0.0..PI), rng.random_range(0.0..2.0 * PI));
        let ox = e * Vector3::from(q.x.to_array());
        let oxi = e * Vector3::from(q.xi.to_array());
        preserved = preserved.max(ox.cross(&oxi).amax());
    }

    let checks = vec![
        CheckResult::upper("det_dpi_left_vs_fd", det_l, 1e-5 * tf),
        CheckResult::upper("det_dpi_right_vs_fd", det_r, 1e-5 * tf),
        CheckResult::upper("det_right_plus_left", det_sym, 1e-12 * tf),
        CheckResult::upper("det_vanishes_on_sigma", det_on_sigma, 1e-12 * tf),
        CheckResult::upper("dpi_left_rank5_on_sigma", rank_ratio, RANK_THRESHOLD * tf),
        CheckResult::lower("dpi_left_rank_margin", min_rank_ratio, RANK_THRESHOLD / tf),
        CheckResult::upper("kernel_left_annihilated", ker_l, 1e-6 * tf),
        CheckResult::upper("kernel_right_annihilated", ker_r, 1e-6 * tf),
        CheckResult::upper("pi_left_even_in_x", even, 1e-12 * tf),
        CheckResult::upper("flowout_vs_series", series, 1e-10 * tf),
        CheckResult::upper("flowout_rotates_e1", rot, 1e-12 * tf),
        CheckResult::upper("flowout_orthogonal", orth, 1e-12 * tf),
        CheckResult::upper("poisson_brackets_vanish", bracket, 1e-12 * tf),
        CheckResult::upper("flowout_preserves_parallel", preserved, 1e-12 * tf),
    ];
    Ok(VerificationReport { n_points, seed, tolerance_factor, checks })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(17)
    }

    #[test]
    fn pi_left_matches_explicit_trigonometry() {
        let mut r = rng();
        for _ in 0..20 {
            let p = random_point(&mut r);
            let (a, b) = (p.alpha, p.beta);
            let (x1, x2, x3) = (p.x.x, p.x.y, p.x.z);
            let xt = x1 * a.cos() * b.cos() + x2 * a.sin() * b.cos() + x3 * b.sin();
            let xa = -x1 * a.sin() * b.cos() + x2 * a.cos() * b.cos();
            let xb = -x1 * a.cos() * b.sin() - x2 * a.sin() * b.sin() + x3 * b.cos();
            let expect = [x1 * x1 + x2 * x2 + x3 * x3 - xt * xt, a, b, p.sigma, 2.0 * p.sigma * xa * xt, 2.0 * p.sigma * xb * xt];
            let got = pi_left(&p).unwrap();
            for k in 0..6 {
                assert!((got[k] - expect[k]).abs() <= 1e-12, "component {k}");
            }
        }
    }

    #[test]
    fn pi_left_on_sigma_and_evenness() {
        let mut r = rng();
        let p = random_sigma_point(&mut r);
        let v = pi_left(&p).unwrap();
        assert!(v[4].abs() < 1e-15 && v[5].abs() < 1e-15);
        let q = random_point(&mut r);
        let m = CanonicalPoint { x: -q.x, ..q };
        assert_eq!(pi_left(&q).unwrap()[1..4], pi_left(&m).unwrap()[1..4]);
    }

    #[test]
    fn determinants_match_finite_differences() {
        let mut r = rng();
        let mut n = 0;
        while n < 20 {
            let p = random_point(&mut r);
            if p.x.dot(p.direction().unit).abs() < 0.1 * p.x.norm() {
                continue;
            }
            n += 1;
            let dl = det_dpi_left(&p).unwrap();
            assert!(rel_err(fd_dpi_left(&p).determinant(), dl) <= 1e-5);
            assert!(rel_err(fd_dpi_right(&p).determinant(), det_dpi_right(&p).unwrap()) <= 1e-5);
            assert_eq!(det_dpi_right(&p).unwrap(), -dl);
        }
    }

    #[test]
    fn listing_order_has_the_opposite_orientation() {
        let mut r = rng();
        let p = random_point(&mut r);
        let natural = fd_jacobian(pi_left_raw, &p.to_array(), FD_STEP).determinant();
        assert!(rel_err(natural, -det_dpi_left(&p).unwrap()) <= 1e-5);
    }

    #[test]
    fn determinant_is_odd_in_the_axial_component() {
        let mut r = rng();
        let p = random_point(&mut r);
        let theta = p.direction().unit;
        let flipped = CanonicalPoint { x: p.x - theta * (2.0 * p.x.dot(theta)), ..p };
        let (a, b) = (det_dpi_left(&p).unwrap(), det_dpi_left(&flipped).unwrap());
        assert!((a + b).abs() <= 1e-12 * a.abs());
    }

    #[test]
    fn sigma_rank_drop_and_kernels() {
        let mut r = rng();
        for _ in 0..10 {
            let p = random_sigma_point(&mut r);
            assert!(det_dpi_left(&p).unwrap().abs() < 1e-14);
            let jl = fd_dpi_left(&p);
            assert_eq!(numerical_rank(&jl, RANK_THRESHOLD), 5);
            let k = blowdown_kernel_left(&p).unwrap();
            let kn = k.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(apply6(&jl, &k) <= 1e-6 * jl.norm() * kn);
            assert!(Vec3::new(k[0], k[1], k[2]).dot(p.direction().unit).abs() < 1e-14);
            let jr = fd_dpi_right(&p);
            let k = blowdown_kernel_right(&p).unwrap();
            let kn = k.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(apply6(&jr, &k) <= 1e-6 * jr.norm() * kn);
        }
        let off = random_point(&mut r);
        assert!(blowdown_kernel_left(&off).is_err());
        assert!(blowdown_kernel_right(&off).is_err());
    }

    #[test]
    fn rank_six_off_sigma() {
        let mut r = rng();
        for _ in 0..10 {
            let p = random_point(&mut r);
            if p.x.dot(p.direction().unit).abs() > 1e-3 {
                assert_eq!(numerical_rank(&fd_dpi_left(&p), RANK_THRESHOLD), 6);
            }
        }
    }

    #[test]
    fn chart_violation_is_rejected() {
        assert!(CanonicalPoint::new(Vec3::new(0.1, 0.2, 0.3), 0.0, PI / 2.0, 1.0).is_err());
        assert!(CanonicalPoint::new(Vec3::new(0.1, 0.2, 0.3), 0.0, 0.1, 0.0).is_err());
    }

    #[test]
    fn brackets_match_stated_expression() {
        let mut r = rng();
        for _ in 0..20 {
            let x = Vec3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
            let xi = Vec3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
            let q = CotangentPoint { x, xi };
            let b12 = poisson_bracket(1, 2, &q).unwrap();
            assert!((b12 - (xi.y * x.z - x.y * xi.z)).abs() <= 1e-14);
            assert_eq!(poisson_bracket(2, 1, &q).unwrap(), -b12);
            assert_eq!(poisson_bracket(3, 3, &q).unwrap(), 0.0);
        }
        assert!(poisson_bracket(0, 1, &CotangentPoint { x: Vec3::ZERO, xi: Vec3::ZERO }).is_err());
    }

    #[test]
    fn flowout_properties() {
        for (t, w) in [(0.3, 1.1), (2.5, -0.4), (PI, 3.0)] {
            let e = flowout_rotation(t, w);
            let col = e * Vector3::new(1.0, 0.0, 0.0);
            assert!((col - Vector3::new(t.cos(), t.sin() * w.cos(), t.sin() * w.sin())).amax() < 1e-12);
            assert!((e * e.transpose() - Matrix3::identity()).amax() < 1e-12);
            assert!((e.determinant() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn default_verification_passes_and_tight_tolerance_fails() {
        let rep = run_verification(20, 1, 1.0).unwrap();
        assert!(rep.passed(), "{}", rep.table());
        assert_eq!(rep.checks.len(), 14);
        let strict = run_verification(20, 1, 1e-9).unwrap();
        assert!(!strict.passed());
    }

    #[test]
    fn artefact_metrics_on_ideal_and_twin_volumes() {
        let d = crate::geometry::HollowBall::default();
        let vol = Volume::for_domain(32, &d).unwrap();
        let spec = PhantomSpec::default_for("bead", &d).unwrap();
        let f = spec.generate(&vol, &d).unwrap();
        let m = artefact_metrics(&f, &spec).unwrap();
        assert_eq!((m.smear_ratio, m.mirror_ratio), (0.0, 0.0));
        let (even, _) = crate::phantoms::odd_even_split(&f).unwrap();
        let m = artefact_metrics(&even, &spec).unwrap();
        assert!((m.mirror_ratio - 1.0).abs() < 1e-12);
        let shells = PhantomSpec::default_for("spherical_shells", &d).unwrap();
        assert!(artefact_metrics(&f, &shells).is_err());
    }
}
