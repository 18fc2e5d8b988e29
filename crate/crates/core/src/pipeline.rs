//! End-to-end reconstruction: optional noise, then the configured method.

use crate::error::Result;
use crate::operators::{Sinogram, SurfaceOperator};
use crate::solvers::{self, add_noise, filtered_backproject, Method, ReconReport, SolverConfig};
use crate::volume::Volume;

pub struct Reconstruction {
    pub volume: Volume,
    pub report: ReconReport,
}

/// Adds `noise · RMS(b)` Gaussian noise (seeded by `cfg.seed`) and
/// reconstructs with `cfg`. With `cfg.precondition` the iterative methods
/// solve `Q^{1/2} A x = Q^{1/2} b`.
pub fn reconstruct(op: &SurfaceOperator, b: &Sinogram, cfg: &SolverConfig, noise: f64) -> Result<Reconstruction> {
    cfg.validate()?;
    let data = add_noise(b, noise, cfg.seed)?;
    let mut volume = op.volume_template().zeros_like();
    let report = match cfg.method {
        Method::Fbp => {
            volume = filtered_backproject(op, &data, cfg.harmonic_l)?;
            let q = data.filtered(cfg.harmonic_l, crate::harmonics::q_factor)?;
            ReconReport { iterations: 1, residuals: vec![data.norm(), q.norm()], solution: Vec::new(), step: None, mu: None }
        }
        Method::Cgls | Method::Landweber if cfg.precondition => {
            let pre = solvers::precondition(op, cfg.harmonic_l)?;
            let rhs = pre.filter(&data.values);
            solvers::solve(&pre, &rhs, cfg)?
        }
        _ => solvers::solve(op, &data.values, cfg)?,
    };
    if cfg.method != Method::Fbp {
        volume.values = report.solution.clone();
    }
    Ok(Reconstruction { volume, report: ReconReport { solution: Vec::new(), ..report } })
}

/// Plain-text report: settings, then one residual per line.
pub fn format_report(cfg: &SolverConfig, report: &ReconReport) -> String {
    let mut out = format!("method = {}\niterations = {}\n", cfg.method, report.iterations);
    if let Some(t) = report.step {
        out.push_str(&format!("step = {t:e}\n"));
    }
    if let Some(mu) = report.mu {
        out.push_str(&format!("mu = {mu:e}\n"));
    }
    out.push_str("# k residual\n");
    for (k, r) in report.residuals.iter().enumerate() {
        out.push_str(&format!("{k} {r:e}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{KeyValues, RunConfig};
    use crate::phantoms::PhantomSpec;

    fn small() -> RunConfig {
        RunConfig::from_key_values(&KeyValues::parse("grid_n = 10\nsphere_l = 4\nn_s = 4\n").unwrap()).unwrap()
    }

    #[test]
    fn every_method_runs_and_is_reproducible() {
        let rc = small();
        let op = rc.operator().unwrap();
        let d = rc.domain().unwrap();
        let f = PhantomSpec::default_for("custom_radial", &d).unwrap().generate(op.volume_template(), &d).unwrap();
        let b = op.forward(&f).unwrap();
        for m in ["bp", "fbp", "cgls", "landweber"] {
            let mut cfg = SolverConfig::new(m.parse().unwrap());
            cfg.max_iters = 5;
            cfg.harmonic_l = 4;
            let a = reconstruct(&op, &b, &cfg, 0.01).unwrap();
            let c = reconstruct(&op, &b, &cfg, 0.01).unwrap();
            assert_eq!(a.volume, c.volume, "{m}");
            assert!(a.volume.values.iter().all(|v| v.is_finite()));
            assert!(format_report(&cfg, &a.report).contains("iterations"));
        }
        let mut cfg = SolverConfig::new(Method::Cgls);
        cfg.precondition = true;
        cfg.harmonic_l = 4;
        cfg.max_iters = 3;
        let r = reconstruct(&op, &b, &cfg, 0.0).unwrap();
        assert_eq!(r.report.residuals.len(), r.report.iterations + 1);
    }

    #[test]
    fn fbp_of_direction_independent_data_is_zero() {
        let rc = small();
        let op = rc.operator().unwrap();
        let mut b = op.sinogram_template().clone();
        for i in 0..b.n_s() {
            b.slice_mut(i).iter_mut().for_each(|v| *v = 1.0 + i as f64);
        }
        let v = filtered_backproject(&op, &b, 4).unwrap();
        assert!(v.values.iter().all(|x| x.abs() < 1e-9));
    }
}
