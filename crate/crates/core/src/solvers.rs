//! Backprojection, filtered backprojection, damped CGLS, Landweber iteration
//! and Gaussian noise, all written against [`LinearMap`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harmonics::{q_factor, q_sqrt_factor};
use crate::operators::{FilteredMap, LinearMap, Sinogram, SurfaceOperator};
use crate::volume::Volume;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    Bp,
    Fbp,
    Cgls,
    Landweber,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bp" => Ok(Self::Bp),
            "fbp" => Ok(Self::Fbp),
            "cgls" => Ok(Self::Cgls),
            "landweber" => Ok(Self::Landweber),
            _ => Err(Error::Config(format!("unknown method {s:?} (expected bp, fbp, cgls or landweber)"))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Bp => "bp",
            Self::Fbp => "fbp",
            Self::Cgls => "cgls",
            Self::Landweber => "landweber",
        })
    }
}

/// A numeric setting that may be derived from the operator norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Param {
    Auto,
    Value(f64),
}

impl std::str::FromStr for Param {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(Self::Auto);
        }
        s.parse::<f64>().map(Self::Value).map_err(|_| Error::Config(format!("expected a number or \"auto\", got {s:?}")))
    }
}

impl std::fmt::Display for Param {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Auto => f.write_str("auto"),
            Self::Value(v) => write!(f, "{v}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub method: Method,
    pub max_iters: usize,
    pub tol: f64,
    /// `Auto` is `0.01 σ_max`.
    pub tikhonov_mu: Param,
    /// `Auto` is `1/σ_max²`.
    pub landweber_step: Param,
    pub precondition: bool,
    pub harmonic_l: usize,
    pub seed: u64,
}

impl SolverConfig {
    pub fn new(method: Method) -> Self {
        let max_iters = match method {
            Method::Landweber => 2000,
            _ => 50,
        };
        Self {
            method,
            max_iters,
            tol: 1e-6,
            tikhonov_mu: Param::Auto,
            landweber_step: Param::Auto,
            precondition: false,
            harmonic_l: 25,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iters == 0 && matches!(self.method, Method::Cgls | Method::Landweber) {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        if let Param::Value(mu) = self.tikhonov_mu {
            if !(mu >= 0.0 && mu.is_finite()) {
                return Err(Error::Config(format!("tikhonov_mu must be non-negative, got {mu}")));
            }
        }
        if let Param::Value(t) = self.landweber_step {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::Config(format!("landweber_step must be positive, got {t}")));
            }
        }
        if (self.method == Method::Fbp || self.precondition) && self.harmonic_l < 1 {
            return Err(Error::Config("harmonic_L must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconReport {
    pub iterations: usize,
    /// `‖A x_k − b‖` for `k = 0..=iterations`.
    pub residuals: Vec<f64>,
    pub solution: Vec<f64>,
    /// Step or damping actually used, when the method has one.
    pub step: Option<f64>,
    pub mu: Option<f64>,
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (y, x) in y.iter_mut().zip(x) {
        *y += a * x;
    }
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

pub fn backproject(op: &dyn LinearMap, b: &[f64]) -> Vec<f64> {
    op.apply_adjoint(b)
}

/// `A*(Q b_L)`: truncate every data slice to degree `L`, apply `Q`, backproject.
pub fn filtered_backproject(op: &SurfaceOperator, b: &Sinogram, l_max: usize) -> Result<Volume> {
    let filtered = b.filtered(l_max, q_factor)?;
    op.adjoint(&filtered)
}

/// `Q^{1/2} ∘ truncate_L ∘ A` with its exact adjoint.
pub fn precondition(op: &SurfaceOperator, l_max: usize) -> Result<FilteredMap<'_>> {
    FilteredMap::new(op, l_max, q_sqrt_factor)
}

/// Largest singular value by power iteration on `A*A` from a seeded start.
pub fn estimate_sigma_max(op: &dyn LinearMap, iters: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..op.domain_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut sigma2 = 0.0;
    for _ in 0..iters.max(1) {
        let n = op.domain_dot(&v, &v).sqrt();
        if !(n > 0.0) {
            return Ok(0.0);
        }
        v.iter_mut().for_each(|x| *x /= n);
        let av = op.apply(&v);
        sigma2 = op.range_dot(&av, &av);
        v = op.apply_adjoint(&av);
        if !all_finite(&v) {
            return Err(Error::Numeric("power iteration produced non-finite values".into()));
        }
    }
    Ok(sigma2.sqrt())
}

/// CGLS for `min ‖Ax − b‖² + μ²‖x‖²`, `x₀ = 0`, stopping when
/// `‖A*r − μ²x‖ ≤ tol · ‖A*b‖` or after `max_iters` steps.
pub fn cgls(op: &dyn LinearMap, b: &[f64], max_iters: usize, tol: f64, mu: f64) -> Result<ReconReport> {
    if max_iters == 0 {
        return Err(Error::Config("max_iters must be at least 1".into()));
    }
    let mu2 = mu * mu;
    let mut x = vec![0.0; op.domain_len()];
    let mut r = b.to_vec();
    let mut s = op.apply_adjoint(&r);
    let mut p = s.clone();
    let mut gamma = op.domain_dot(&s, &s);
    let gamma0 = gamma;
    let mut residuals = vec![op.range_dot(&r, &r).sqrt()];
    let mut iterations = 0;
    while iterations < max_iters && gamma > 0.0 && gamma.sqrt() > tol * gamma0.sqrt() {
        let q = op.apply(&p);
        let delta = op.range_dot(&q, &q) + mu2 * op.domain_dot(&p, &p);
        if !(delta > 0.0) {
            break;
        }
        let alpha = gamma / delta;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &q, &mut r);
        s = op.apply_adjoint(&r);
        if mu2 > 0.0 {
            axpy(-mu2, &x, &mut s);
        }
        let gamma_new = op.domain_dot(&s, &s);
        iterations += 1;
        residuals.push(op.range_dot(&r, &r).sqrt());
        if !gamma_new.is_finite() || !all_finite(&x) {
            return Err(Error::Numeric(format!("CGLS produced non-finite iterates at iteration {iterations}")));
        }
        let beta = gamma_new / gamma;
        for (p, s) in p.iter_mut().zip(&s) {
            *p = s + beta * *p;
        }
        gamma = gamma_new;
    }
    Ok(ReconReport { iterations, residuals, solution: x, step: None, mu: Some(mu) })
}

/// `x_{k+1} = x_k + τ A*(b − A x_k)`, `x₀ = 0`. Stops when
/// `‖A*(b − Ax)‖ ≤ tol · ‖A*b‖`; aborts when the residual exceeds ten times
/// its initial value.
pub fn landweber(op: &dyn LinearMap, b: &[f64], max_iters: usize, tol: f64, step: f64) -> Result<ReconReport> {
    if max_iters == 0 {
        return Err(Error::Config("max_iters must be at least 1".into()));
    }
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::Config(format!("Landweber step must be positive, got {step}")));
    }
    let mut x = vec![0.0; op.domain_len()];
    let mut r = b.to_vec();
    let r0 = op.range_dot(&r, &r).sqrt();
    let mut residuals = vec![r0];
    let mut g = op.apply_adjoint(&r);
    let g0 = op.domain_dot(&g, &g).sqrt();
    let mut iterations = 0;
    while iterations < max_iters && op.domain_dot(&g, &g).sqrt() > tol * g0 {
        axpy(step, &g, &mut x);
        let ax = op.apply(&x);
        for ((r, b), a) in r.iter_mut().zip(b).zip(&ax) {
            *r = b - a;
        }
        let res = op.range_dot(&r, &r).sqrt();
        iterations += 1;
        residuals.push(res);
        if !res.is_finite() || !all_finite(&x) {
            return Err(Error::Numeric(format!("Landweber produced non-finite iterates at iteration {iterations}")));
        }
        if res > 10.0 * r0 {
            return Err(Error::Numeric(format!(
                "Landweber diverged at iteration {iterations}: residual {res:e} exceeds 10x initial {r0:e}"
            )));
        }
        g = op.apply_adjoint(&r);
    }
    Ok(ReconReport { iterations, residuals, solution: x, step: Some(step), mu: None })
}

/// Runs the configured iterative or direct method on a generic map.
pub fn solve(op: &dyn LinearMap, b: &[f64], cfg: &SolverConfig) -> Result<ReconReport> {
    cfg.validate()?;
    match cfg.method {
        Method::Bp => {
            let x = backproject(op, b);
            let ax = op.apply(&x);
            let r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
            let res = vec![op.range_dot(b, b).sqrt(), op.range_dot(&r, &r).sqrt()];
            Ok(ReconReport { iterations: 1, residuals: res, solution: x, step: None, mu: None })
        }
        Method::Fbp => Err(Error::Config("filtered backprojection needs a sinogram operator".into())),
        Method::Cgls => {
            let mu = match cfg.tikhonov_mu {
                Param::Value(v) => v,
                Param::Auto => 0.01 * estimate_sigma_max(op, 20, cfg.seed)?,
            };
            cgls(op, b, cfg.max_iters, cfg.tol, mu)
        }
        Method::Landweber => {
            let step = match cfg.landweber_step {
                Param::Value(v) => v,
                Param::Auto => {
                    let s = estimate_sigma_max(op, 20, cfg.seed)?;
                    if !(s > 0.0) {
                        return Err(Error::Numeric("operator norm estimate is zero".into()));
                    }
                    1.0 / (s * s)
                }
            };
            landweber(op, b, cfg.max_iters, cfg.tol, step)
        }
    }
}

/// Adds i.i.d. Gaussian noise with standard deviation `level · RMS(b)`.
pub fn add_noise(b: &Sinogram, level: f64, seed: u64) -> Result<Sinogram> {
    if !(level >= 0.0 && level.is_finite()) {
        return Err(Error::Config(format!("noise level must be non-negative, got {level}")));
    }
    let mut out = b.clone();
    if level == 0.0 || b.is_empty() {
        return Ok(out);
    }
    let rms = (b.values.iter().map(|v| v * v).sum::<f64>() / b.len() as f64).sqrt();
    let normal = Normal::new(0.0, level * rms).map_err(|e| Error::Numeric(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in &mut out.values {
        *v += normal.sample(&mut rng);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harmonics::SphereGrid;
    use crate::operators::DenseMap;
    use nalgebra::{DMatrix, DVector};

    fn random_system(m: usize, n: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
        let b = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
        (a, b)
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let d: f64 = a.iter().zip(b).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        d / b.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
        a.clone().svd(true, true).solve(b, 1e-14).unwrap()
    }

    #[test]
    fn cgls_matches_least_squares() {
        let (a, b) = random_system(50, 30, 1);
        let x = lstsq(&a, &b);
        let rep = cgls(&DenseMap(a), b.as_slice(), 100, 1e-14, 0.0).unwrap();
        assert!(rel_err(&rep.solution, x.as_slice()) <= 1e-8);
        assert_eq!(rep.residuals.len(), rep.iterations + 1);
    }

    #[test]
    fn damped_cgls_matches_augmented_system() {
        let (a, b) = random_system(50, 30, 2);
        let mu = 0.7;
        let mut aug = DMatrix::zeros(80, 30);
        aug.view_mut((0, 0), (50, 30)).copy_from(&a);
        for i in 0..30 {
            aug[(50 + i, i)] = mu;
        }
        let mut baug = DVector::zeros(80);
        baug.rows_mut(0, 50).copy_from(&b);
        let x = lstsq(&aug, &baug);
        let rep = cgls(&DenseMap(a), b.as_slice(), 200, 1e-15, mu).unwrap();
        assert!(rel_err(&rep.solution, x.as_slice()) <= 1e-8);
    }

    #[test]
    fn cgls_consistent_system_and_monotone_residual() {
        let (a, _) = random_system(50, 30, 3);
        let xs = DVector::from_fn(30, |i, _| (i as f64).sin());
        let b = &a * &xs;
        let rep = cgls(&DenseMap(a), b.as_slice(), 60, 1e-300, 0.0).unwrap();
        assert!(*rep.residuals.last().unwrap() <= 1e-8 * b.norm(), "{:?}", rep.residuals);
        for w in rep.residuals.windows(2) {
            assert!(w[1] <= w[0] + 1e-12 * b.norm());
        }
    }

    #[test]
    fn heavy_damping_drives_solution_to_zero() {
        let (a, b) = random_system(20, 10, 4);
        let rep = cgls(&DenseMap(a), b.as_slice(), 50, 1e-14, 1e8).unwrap();
        assert!(rep.solution.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn landweber_converges_with_auto_step() {
        let (a, b) = random_system(50, 30, 5);
        let x = lstsq(&a, &b);
        let op = DenseMap(a.clone());
        let sigma = estimate_sigma_max(&op, 20, 0).unwrap();
        let exact = a.singular_values().max();
        assert!((sigma - exact).abs() <= 1e-2 * exact);
        let rep = landweber(&op, b.as_slice(), 5000, 1e-12, 1.0 / (sigma * sigma)).unwrap();
        assert!(rel_err(&rep.solution, x.as_slice()) <= 1e-4);
        for w in rep.residuals.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12));
        }
    }

    #[test]
    fn landweber_overshooting_step_diverges() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]);
        let err = landweber(&DenseMap(a), &[1.0, 1.0], 100, 1e-12, 0.6).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
    }

    #[test]
    fn solve_dispatch_and_validation() {
        let (a, b) = random_system(12, 6, 6);
        let op = DenseMap(a);
        let mut cfg = SolverConfig::new(Method::Cgls);
        cfg.tikhonov_mu = Param::Value(0.0);
        let rep = solve(&op, b.as_slice(), &cfg).unwrap();
        assert!(rep.iterations >= 1);
        cfg.tol = 0.0;
        assert!(solve(&op, b.as_slice(), &cfg).is_err());
        let bp = solve(&op, b.as_slice(), &SolverConfig::new(Method::Bp)).unwrap();
        assert_eq!(bp.solution, op.apply_adjoint(b.as_slice()));
        assert!(backproject(&op, &[0.0; 12]).iter().all(|v| *v == 0.0));
        assert_eq!("landweber".parse::<Method>().unwrap(), Method::Landweber);
        assert!("sirt".parse::<Method>().is_err());
        assert_eq!("auto".parse::<Param>().unwrap(), Param::Auto);
    }

    #[test]
    fn noise_statistics_and_determinism() {
        let mut b = Sinogram::zeros(vec![0.1, 0.2], SphereGrid::new(60, 100).unwrap()).unwrap();
        for (i, v) in b.values.iter_mut().enumerate() {
            *v = 1.0 + (i as f64 * 0.01).sin();
        }
        assert_eq!(add_noise(&b, 0.0, 1).unwrap(), b);
        let n1 = add_noise(&b, 0.01, 7).unwrap();
        let n2 = add_noise(&b, 0.01, 7).unwrap();
        assert!(n1.values.iter().zip(&n2.values).all(|(a, b)| a.to_bits() == b.to_bits()));
        let eta: f64 = n1.values.iter().zip(&b.values).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let ratio = eta / b.values.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((ratio - 0.01).abs() <= 0.0015, "{ratio}");
        assert!(add_noise(&b, -1.0, 0).is_err());
    }

    #[test]
    fn positive_diagonal_left_factor_keeps_consistent_solution() {
        let (a, _) = random_system(50, 30, 8);
        let xs = DVector::from_fn(30, |i, _| (i as f64 * 0.3).cos());
        let b = &a * &xs;
        let d = DMatrix::from_diagonal(&DVector::from_fn(50, |i, _| 0.5 + (i % 7) as f64));
        let plain = cgls(&DenseMap(a.clone()), b.as_slice(), 200, 1e-15, 0.0).unwrap();
        let db = &d * &b;
        let pre = cgls(&DenseMap(&d * &a), db.as_slice(), 200, 1e-15, 0.0).unwrap();
        assert!(rel_err(&pre.solution, &plain.solution) <= 1e-8);
    }
}
