//! Spherical-harmonic analysis and synthesis on Gauss–Legendre grids, the
//! angular filter `Q = −Δ(I − Δ)⁻¹` and its square root, the convolution
//! kernel realising `Q`, and a brute-force SO(3) convolution used to check the
//! multiplier path.
//!
//! Conventions. `P_l^m` carries the Condon–Shortley factor `(−1)^m` and
//! `Y_l^m = (−1)^m N_lm P_l^m(cos β) e^{imα}` applies a second one, so the two
//! cancel: for `m ≥ 0`, `Y_l^m = N_lm |P_l^m|(cos β) e^{imα}` with no phase.
//! Negative orders follow `Y_l^{−m} = (−1)^m conj(Y_l^m)`, which makes the
//! coefficients of a real function satisfy `c[l][−m] = (−1)^m conj(c[l][m])`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Direction, Vec3};

/// Degree-`l` Legendre polynomial by Bonnet's recurrence.
pub fn legendre_p(l: usize, x: f64) -> Result<f64> {
    if !(-1.0..=1.0).contains(&x) {
        return Err(Error::Domain(format!("Legendre argument {x} outside [-1, 1]")));
    }
    Ok(legendre_with_derivative(l, x).0)
}

/// `(P_l(x), P_l′(x))`, derivative valid for `|x| < 1`.
fn legendre_with_derivative(l: usize, x: f64) -> (f64, f64) {
    if l == 0 {
        return (1.0, 0.0);
    }
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=l {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = l as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// `P_l^m(x) = (−1)^m (1−x²)^{m/2} dᵐ/dxᵐ P_l(x)`.
pub fn assoc_legendre(l: usize, m: usize, x: f64) -> Result<f64> {
    if m > l {
        return Err(Error::Domain(format!("order m={m} exceeds degree l={l}")));
    }
    if !(-1.0..=1.0).contains(&x) {
        return Err(Error::Domain(format!("Legendre argument {x} outside [-1, 1]")));
    }
    let somx2 = ((1.0 - x) * (1.0 + x)).sqrt();
    let mut pmm = 1.0;
    let mut fact = 1.0;
    for _ in 0..m {
        pmm *= -fact * somx2;
        fact += 2.0;
    }
    if l == m {
        return Ok(pmm);
    }
    let mut pmmp1 = x * (2 * m + 1) as f64 * pmm;
    for ll in (m + 2)..=l {
        let pll = (x * (2 * ll - 1) as f64 * pmmp1 - (ll + m - 1) as f64 * pmm) / (ll - m) as f64;
        pmm = pmmp1;
        pmmp1 = pll;
    }
    Ok(pmmp1)
}

/// `Y_l^m(α, β)` evaluated literally from its defining formula; `colat` is
/// `β`, the argument of `P_l^m(cos β)`, and `lon` is `α`.
pub fn ylm(l: usize, m: i64, colat: f64, lon: f64) -> Result<Complex64> {
    let am = m.unsigned_abs() as usize;
    if am > l {
        return Err(Error::Domain(format!("|m|={am} exceeds degree l={l}")));
    }
    // (l−m)!/(l+m)! as a product to avoid overflow
    let mut ratio = 1.0;
    for k in (l - am + 1)..=(l + am) {
        ratio /= k as f64;
    }
    let norm = ((2 * l + 1) as f64 * ratio / (4.0 * PI)).sqrt();
    let sign = if am % 2 == 1 { -1.0 } else { 1.0 };
    let p = assoc_legendre(l, am, colat.cos())?;
    let y = Complex64::from_polar(sign * norm * p, am as f64 * lon);
    Ok(if m >= 0 { y } else { y.conj() * sign })
}

/// Gauss–Legendre abscissae (descending) and weights on `[−1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let half = n.div_ceil(2);
    for i in 0..half {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_with_derivative(n, z);
            let dz = p / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre_with_derivative(n, z);
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

/// Gauss–Legendre colatitudes × uniform longitudes.
///
/// `quad_weights[j]` is the weight of every cell on latitude row `j`
/// (Gauss weight times `2π/n_lon`), so the weights over all cells sum to `4π`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SphereGrid {
    pub n_lat: usize,
    pub n_lon: usize,
    pub colatitudes: Vec<f64>,
    pub longitudes: Vec<f64>,
    pub quad_weights: Vec<f64>,
}

impl SphereGrid {
    pub fn new(n_lat: usize, n_lon: usize) -> Result<Self> {
        if n_lat == 0 || n_lon == 0 {
            return Err(Error::Config("sphere grid needs at least one row and column".into()));
        }
        let (x, w) = gauss_legendre(n_lat);
        let dlon = 2.0 * PI / n_lon as f64;
        Ok(Self {
            n_lat,
            n_lon,
            colatitudes: x.iter().map(|v| v.acos()).collect(),
            longitudes: (0..n_lon).map(|k| k as f64 * dlon).collect(),
            quad_weights: w.iter().map(|v| v * dlon).collect(),
        })
    }

    /// Smallest grid resolving band limit `l_max`, with an even longitude
    /// count so antipodal cells exist.
    pub fn for_band_limit(l_max: usize) -> Result<Self> {
        Self::new(l_max + 1, 2 * l_max + 2)
    }

    /// Rebuilds a grid from stored arrays, checking the invariants.
    pub fn from_parts(colatitudes: Vec<f64>, longitudes: Vec<f64>, quad_weights: Vec<f64>) -> Result<Self> {
        let grid = Self { n_lat: colatitudes.len(), n_lon: longitudes.len(), colatitudes, longitudes, quad_weights };
        if grid.quad_weights.len() != grid.n_lat || grid.n_lat == 0 || grid.n_lon == 0 {
            return Err(Error::Config("sphere grid arrays have inconsistent lengths".into()));
        }
        if (grid.total_weight() - 4.0 * PI).abs() > 1e-10 {
            return Err(Error::Config(format!("sphere weights sum to {} instead of 4π", grid.total_weight())));
        }
        Ok(grid)
    }

    pub fn len(&self) -> usize {
        self.n_lat * self.n_lon
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn total_weight(&self) -> f64 {
        self.quad_weights.iter().sum::<f64>() * self.n_lon as f64
    }

    pub fn direction(&self, j: usize, k: usize) -> Direction {
        Direction::from_colat_lon(self.colatitudes[j], self.longitudes[k])
    }

    pub fn directions(&self) -> Vec<Direction> {
        (0..self.n_lat).flat_map(|j| (0..self.n_lon).map(move |k| self.direction(j, k))).collect()
    }

    /// Index of the antipodal cell, when the grid contains one.
    pub fn antipode(&self, j: usize, k: usize) -> Option<(usize, usize)> {
        if self.n_lon % 2 != 0 {
            return None;
        }
        let (jj, kk) = (self.n_lat - 1 - j, (k + self.n_lon / 2) % self.n_lon);
        let d = self.direction(j, k).unit + self.direction(jj, kk).unit;
        (d.norm() < 1e-9).then_some((jj, kk))
    }

    pub fn resolves(&self, l_max: usize) -> bool {
        self.n_lat > l_max && self.n_lon > 2 * l_max
    }

    pub fn check_resolves(&self, l_max: usize) -> Result<()> {
        if self.resolves(l_max) {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "sphere grid {}x{} cannot resolve band limit {l_max} (needs n_lat ≥ {}, n_lon ≥ {})",
                self.n_lat,
                self.n_lon,
                l_max + 1,
                2 * l_max + 1
            )))
        }
    }
}

/// Coefficients `c[l][m]`, `0 ≤ l ≤ L`, `|m| ≤ l`, stored at `l² + l + m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarmonicCoeffs {
    pub l_max: usize,
    pub data: Vec<Complex64>,
}

impl HarmonicCoeffs {
    pub fn zeros(l_max: usize) -> Self {
        Self { l_max, data: vec![Complex64::new(0.0, 0.0); (l_max + 1) * (l_max + 1)] }
    }

    #[inline]
    pub fn index(l: usize, m: i64) -> usize {
        ((l * l + l) as i64 + m) as usize
    }

    #[inline]
    pub fn get(&self, l: usize, m: i64) -> Complex64 {
        self.data[((l * l + l) as i64 + m) as usize]
    }

    #[inline]
    pub fn set(&mut self, l: usize, m: i64, v: Complex64) {
        self.data[((l * l + l) as i64 + m) as usize] = v;
    }

    /// Largest violation of `c[l][−m] = (−1)^m conj(c[l][m])`.
    pub fn real_symmetry_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for l in 0..=self.l_max {
            for m in 1..=l as i64 {
                let sign = if m % 2 == 1 { -1.0 } else { 1.0 };
                worst = worst.max((self.get(l, -m) - self.get(l, m).conj() * sign).norm());
            }
        }
        worst
    }

    /// Multiplies every degree-`l` coefficient by `factor(l)`.
    pub fn scaled_by_degree(&self, factor: impl Fn(usize) -> f64) -> Self {
        let mut out = self.clone();
        for l in 0..=self.l_max {
            let f = factor(l);
            for m in -(l as i64)..=l as i64 {
                out.set(l, m, self.get(l, m) * f);
            }
        }
        out
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarmonicStack {
    pub l_max: usize,
    pub slices: Vec<HarmonicCoeffs>,
}

impl HarmonicStack {
    pub fn new(slices: Vec<HarmonicCoeffs>) -> Result<Self> {
        let l_max = slices.first().map_or(0, |c| c.l_max);
        if slices.iter().any(|c| c.l_max != l_max) {
            return Err(Error::Config("harmonic stack slices disagree on band limit".into()));
        }
        Ok(Self { l_max, slices })
    }

    pub fn n_s(&self) -> usize {
        self.slices.len()
    }

    pub fn scaled_by_degree(&self, factor: impl Fn(usize) -> f64 + Copy) -> Self {
        Self { l_max: self.l_max, slices: self.slices.iter().map(|c| c.scaled_by_degree(factor)).collect() }
    }
}

/// Orthonormally scaled `P̄_l^m(x)` for `0 ≤ m ≤ l ≤ L`, without the
/// Condon–Shortley phase, packed at `l(l+1)/2 + m`.
fn normalized_legendre_row(l_max: usize, x: f64, out: &mut [f64]) {
    let packed = |l: usize, m: usize| l * (l + 1) / 2 + m;
    let somx2 = ((1.0 - x) * (1.0 + x)).sqrt();
    let mut pmm = (1.0 / (4.0 * PI)).sqrt();
    for m in 0..=l_max {
        if m > 0 {
            pmm *= ((2 * m + 1) as f64 / (2 * m) as f64).sqrt() * somx2;
        }
        out[packed(m, m)] = pmm;
        if m == l_max {
            break;
        }
        let mut p_prev = pmm;
        let mut p = (2.0 * m as f64 + 3.0).sqrt() * x * pmm;
        out[packed(m + 1, m)] = p;
        for l in (m + 2)..=l_max {
            let (lf, mf) = (l as f64, m as f64);
            let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
            let b = (((lf - 1.0).powi(2) - mf * mf) / (4.0 * (lf - 1.0).powi(2) - 1.0)).sqrt();
            let next = a * (x * p - b * p_prev);
            p_prev = p;
            p = next;
            out[packed(l, m)] = p;
        }
    }
}

fn packed_len(l_max: usize) -> usize {
    (l_max + 1) * (l_max + 2) / 2
}

/// Evaluates `Σ c_lm Y_l^m` at an arbitrary direction.
pub fn evaluate(coeffs: &HarmonicCoeffs, dir: Vec3) -> Complex64 {
    let l_max = coeffs.l_max;
    let mut row = vec![0.0; packed_len(l_max)];
    normalized_legendre_row(l_max, dir.z.clamp(-1.0, 1.0), &mut row);
    let lon = dir.y.atan2(dir.x);
    let mut acc = Complex64::new(0.0, 0.0);
    for m in 0..=l_max {
        let e = Complex64::from_polar(1.0, m as f64 * lon);
        let sign = if m % 2 == 1 { -1.0 } else { 1.0 };
        let mut pos = Complex64::new(0.0, 0.0);
        let mut neg = Complex64::new(0.0, 0.0);
        for l in m..=l_max {
            let p = row[l * (l + 1) / 2 + m];
            pos += coeffs.get(l, m as i64) * p;
            if m > 0 {
                neg += coeffs.get(l, -(m as i64)) * (sign * p);
            }
        }
        acc += pos * e + neg * e.conj();
    }
    acc
}

/// Precomputed Legendre rows and longitude phases for one grid and band limit.
#[derive(Debug, Clone)]
pub struct ShtPlan {
    pub l_max: usize,
    pub grid: SphereGrid,
    legendre: Vec<f64>,
    phases: Vec<Complex64>,
}

impl ShtPlan {
    pub fn new(grid: &SphereGrid, l_max: usize) -> Result<Self> {
        grid.check_resolves(l_max)?;
        let np = packed_len(l_max);
        let mut legendre = vec![0.0; grid.n_lat * np];
        for (j, chunk) in legendre.chunks_mut(np).enumerate() {
            normalized_legendre_row(l_max, grid.colatitudes[j].cos(), chunk);
        }
        let mut phases = Vec::with_capacity(grid.n_lon * (l_max + 1));
        for &lon in &grid.longitudes {
            for m in 0..=l_max {
                phases.push(Complex64::from_polar(1.0, m as f64 * lon));
            }
        }
        Ok(Self { l_max, grid: grid.clone(), legendre, phases })
    }

    #[inline]
    fn p(&self, j: usize, l: usize, m: usize) -> f64 {
        self.legendre[j * packed_len(self.l_max) + l * (l + 1) / 2 + m]
    }

    #[inline]
    fn phase(&self, k: usize, m: usize) -> Complex64 {
        self.phases[k * (self.l_max + 1) + m]
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if n != self.grid.len() {
            return Err(Error::Config(format!("expected {} sphere samples, got {n}", self.grid.len())));
        }
        Ok(())
    }

    /// Analysis of a real function; negative orders are filled from the
    /// real-symmetry relation so it holds bit for bit.
    pub fn analyze_real(&self, samples: &[f64]) -> Result<HarmonicCoeffs> {
        self.check_len(samples.len())?;
        let (l_max, n_lon) = (self.l_max, self.grid.n_lon);
        let mut out = HarmonicCoeffs::zeros(l_max);
        let mut fourier = vec![Complex64::new(0.0, 0.0); l_max + 1];
        for j in 0..self.grid.n_lat {
            let row = &samples[j * n_lon..(j + 1) * n_lon];
            for (m, fm) in fourier.iter_mut().enumerate() {
                *fm = row.iter().enumerate().map(|(k, &f)| self.phase(k, m).conj() * f).sum();
            }
            let w = self.grid.quad_weights[j];
            for l in 0..=l_max {
                for m in 0..=l {
                    let idx = HarmonicCoeffs::index(l, m as i64);
                    out.data[idx] += fourier[m] * (w * self.p(j, l, m));
                }
            }
        }
        for l in 0..=l_max {
            for m in 1..=l as i64 {
                let sign = if m % 2 == 1 { -1.0 } else { 1.0 };
                let v = out.get(l, m).conj() * sign;
                out.set(l, -m, v);
            }
        }
        Ok(out)
    }

    /// Analysis of a complex function, every order computed directly.
    pub fn analyze(&self, samples: &[Complex64]) -> Result<HarmonicCoeffs> {
        self.check_len(samples.len())?;
        let (l_max, n_lon) = (self.l_max, self.grid.n_lon);
        let mut out = HarmonicCoeffs::zeros(l_max);
        for j in 0..self.grid.n_lat {
            let row = &samples[j * n_lon..(j + 1) * n_lon];
            let w = self.grid.quad_weights[j];
            for m in 0..=l_max {
                // Σ f e^{−imα} and Σ f e^{+imα}
                let mut minus = Complex64::new(0.0, 0.0);
                let mut plus = Complex64::new(0.0, 0.0);
                for (k, &f) in row.iter().enumerate() {
                    let e = self.phase(k, m);
                    minus += f * e.conj();
                    plus += f * e;
                }
                let sign = if m % 2 == 1 { -1.0 } else { 1.0 };
                for l in m..=l_max {
                    let p = w * self.p(j, l, m);
                    out.data[HarmonicCoeffs::index(l, m as i64)] += minus * p;
                    if m > 0 {
                        out.data[HarmonicCoeffs::index(l, -(m as i64))] += plus * (sign * p);
                    }
                }
            }
        }
        Ok(out)
    }

    /// Synthesis on the plan's grid. Coefficients above the plan's band limit
    /// are ignored; missing ones count as zero.
    pub fn synthesize(&self, coeffs: &HarmonicCoeffs) -> Vec<Complex64> {
        let (n_lat, n_lon) = (self.grid.n_lat, self.grid.n_lon);
        let l_max = self.l_max.min(coeffs.l_max);
        let mut out = vec![Complex64::new(0.0, 0.0); n_lat * n_lon];
        let mut pos = vec![Complex64::new(0.0, 0.0); l_max + 1];
        let mut neg = vec![Complex64::new(0.0, 0.0); l_max + 1];
        for j in 0..n_lat {
            for m in 0..=l_max {
                let sign = if m % 2 == 1 { -1.0 } else { 1.0 };
                pos[m] = Complex64::new(0.0, 0.0);
                neg[m] = Complex64::new(0.0, 0.0);
                for l in m..=l_max {
                    let p = self.p(j, l, m);
                    pos[m] += coeffs.get(l, m as i64) * p;
                    if m > 0 {
                        neg[m] += coeffs.get(l, -(m as i64)) * (sign * p);
                    }
                }
            }
            for k in 0..n_lon {
                let mut acc = Complex64::new(0.0, 0.0);
                for m in 0..=l_max {
                    let e = self.phase(k, m);
                    acc += pos[m] * e + neg[m] * e.conj();
                }
                out[j * n_lon + k] = acc;
            }
        }
        out
    }

    pub fn synthesize_real(&self, coeffs: &HarmonicCoeffs) -> Vec<f64> {
        self.synthesize(coeffs).into_iter().map(|c| c.re).collect()
    }

    /// Truncates a real function to degree `≤ L`, scales each degree by
    /// `factor(l)` and synthesises it back.
    pub fn filter_real(&self, samples: &[f64], factor: impl Fn(usize) -> f64) -> Result<Vec<f64>> {
        let c = self.analyze_real(samples)?.scaled_by_degree(factor);
        Ok(self.synthesize_real(&c))
    }
}

pub fn sht_forward(samples: &[f64], grid: &SphereGrid, l_max: usize) -> Result<HarmonicCoeffs> {
    ShtPlan::new(grid, l_max)?.analyze_real(samples)
}

pub fn sht_inverse(coeffs: &HarmonicCoeffs, grid: &SphereGrid) -> Result<Vec<Complex64>> {
    Ok(ShtPlan::new(grid, coeffs.l_max)?.synthesize(coeffs))
}

/// Degree multiplier of `Q`: `−c_l/(1−c_l)` with `c_l = −l(l+1)`.
pub fn q_factor(l: usize) -> f64 {
    let ll = (l * (l + 1)) as f64;
    ll / (ll + 1.0)
}

pub fn q_sqrt_factor(l: usize) -> f64 {
    q_factor(l).sqrt()
}

pub fn apply_q(stack: &HarmonicStack) -> HarmonicStack {
    stack.scaled_by_degree(q_factor)
}

pub fn apply_q_sqrt(stack: &HarmonicStack) -> HarmonicStack {
    stack.scaled_by_degree(q_sqrt_factor)
}

/// `a_l = (1/2π) √((2l+1)/4π)`; a zonal kernel with these coefficients
/// convolves as the identity.
pub fn identity_kernel_coefficient(l: usize) -> f64 {
    ((2 * l + 1) as f64 / (4.0 * PI)).sqrt() / (2.0 * PI)
}

/// Kernel `h` with `h_lm = h_l = q_factor(l) a_l` for every `|m| ≤ l`, so
/// that convolution with `h` applies `Q`.
pub fn kernel_h(l_max: usize) -> HarmonicCoeffs {
    let mut h = HarmonicCoeffs::zeros(l_max);
    for l in 0..=l_max {
        let v = Complex64::new(q_factor(l) * identity_kernel_coefficient(l), 0.0);
        for m in -(l as i64)..=l as i64 {
            h.set(l, m, v);
        }
    }
    h
}

/// `(f ∗ h)(θ) = ∫_{SO(3)} f(gω) h(g⁻¹θ) dg`, `ω` the north pole, by direct
/// quadrature over a ZYZ Euler grid: uniform in the two azimuthal angles,
/// Gauss–Legendre in the cosine of the middle angle (which carries the
/// `sin β` Haar density). The measure has total mass `8π²`.
///
/// `f` is given by samples on `grid` and evaluated off-grid through its
/// band-limited expansion to the kernel's degree.
pub fn spherical_convolve_bruteforce(
    f: &[f64],
    h: &HarmonicCoeffs,
    grid: &SphereGrid,
    n_so3: usize,
) -> Result<Vec<Complex64>> {
    let f_coeffs = sht_forward(f, grid, h.l_max)?;
    let (xb, wb) = gauss_legendre(n_so3);
    let da = 2.0 * PI / n_so3 as f64;
    let angles: Vec<f64> = (0..n_so3).map(|i| i as f64 * da).collect();

    // f(gω) depends on (α, β) only
    let mut f_at = vec![0.0; n_so3 * n_so3];
    for (ia, &a) in angles.iter().enumerate() {
        for (ib, &cb) in xb.iter().enumerate() {
            let sb = (1.0 - cb * cb).sqrt();
            let dir = Vec3::new(sb * a.cos(), sb * a.sin(), cb);
            f_at[ia * n_so3 + ib] = evaluate(&f_coeffs, dir).re;
        }
    }

    let rot_z = |t: f64, v: Vec3| {
        let (s, c) = t.sin_cos();
        Vec3::new(c * v.x - s * v.y, s * v.x + c * v.y, v.z)
    };
    let rot_y = |cb: f64, sb: f64, v: Vec3| Vec3::new(cb * v.x + sb * v.z, v.y, -sb * v.x + cb * v.z);

    let out = grid
        .directions()
        .iter()
        .map(|theta| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (ia, &a) in angles.iter().enumerate() {
                let v1 = rot_z(-a, theta.unit);
                for (ib, (&cb, &wbeta)) in xb.iter().zip(&wb).enumerate() {
                    let fv = f_at[ia * n_so3 + ib];
                    if fv == 0.0 {
                        continue;
                    }
                    let sb = (1.0 - cb * cb).sqrt();
                    let v2 = rot_y(cb, -sb, v1);
                    let mut inner = Complex64::new(0.0, 0.0);
                    for &g in &angles {
                        inner += evaluate(h, rot_z(-g, v2));
                    }
                    acc += inner * (fv * wbeta * da * da);
                }
            }
            acc
        })
        .collect();
    Ok(out)
}
