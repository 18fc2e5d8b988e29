//! Acceptance criteria 1 to 10. Runs as a plain binary so that the summary
//! lines are always printed; exits nonzero if any criterion fails.

use std::f64::consts::PI;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spindle_core::config::RunConfig;
use spindle_core::harmonics::{
    apply_q, apply_q_sqrt, kernel_h, q_factor, spherical_convolve_bruteforce, ylm, HarmonicCoeffs, HarmonicStack,
    ShtPlan, SphereGrid,
};
use spindle_core::io;
use spindle_core::microlocal::run_verification;
use spindle_core::operators::{
    spindle_s_grid, uniform_s_grid, DenseMap, LinearMap, QuadResolution, Sinogram, SurfaceOperator,
};
use spindle_core::phantoms::{odd_even_split, PhantomSpec};
use spindle_core::pipeline::reconstruct;
use spindle_core::solvers::{cgls, filtered_backproject, landweber, Method, SolverConfig};
use spindle_core::{microlocal, HollowBall, Volume};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn random_real_coeffs(l_max: usize, rng: &mut ChaCha8Rng) -> HarmonicCoeffs {
    let mut c = HarmonicCoeffs::zeros(l_max);
    for l in 0..=l_max {
        c.set(l, 0, Complex64::new(rng.random_range(-1.0..1.0), 0.0));
        for m in 1..=l as i64 {
            let v = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            c.set(l, m, v);
            let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
            c.set(l, -m, v.conj() * sign);
        }
    }
    c
}

fn operators_32() -> spindle_core::Result<Vec<(&'static str, SurfaceOperator)>> {
    let spindle_domain = HollowBall::default();
    let cylinder_domain = spindle_domain.to_cylinder();
    let grid = SphereGrid::new(4, 6)?;
    let quad = QuadResolution::for_grid(32);

    let vs = Volume::for_domain(32, &spindle_domain)?;
    let ss = Sinogram::zeros(spindle_s_grid(&spindle_domain, 16)?, grid.clone())?;
    let vc = Volume::for_domain(32, &cylinder_domain)?;
    let sc = Sinogram::zeros(uniform_s_grid(&cylinder_domain, 16)?, grid)?;
    Ok(vec![
        ("spindle", SurfaceOperator::spindle(&vs, &ss, &spindle_domain, quad)?),
        ("cylinder", SurfaceOperator::cylinder(&vc, &sc, &cylinder_domain, quad, 0.5)?),
    ])
}

fn criterion_1() -> Outcome {
    let ops = operators_32().map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for (_, op) in &ops {
        for _ in 0..20 {
            let f = random_vec(op.domain_len(), &mut rng);
            let g = random_vec(op.range_len(), &mut rng);
            let af = op.apply(&f);
            let ag = op.apply_adjoint(&g);
            let lhs = op.range_dot(&af, &g);
            let rhs = op.domain_dot(&f, &ag);
            let scale = op.range_dot(&af, &af).sqrt() * op.range_dot(&g, &g).sqrt();
            worst = worst.max((lhs - rhs).abs() / scale);
        }
    }
    check(worst <= 1e-10, format!("max |<Af,g> - <f,A*g>| / (|Af||g|) = {worst:.2e} (tol 1e-10, 2 operators x 20 pairs)"))
}

fn criterion_2() -> Outcome {
    let run = || -> spindle_core::Result<f64> {
        let d = HollowBall::default().to_cylinder();
        let vol = Volume::for_domain(64, &d)?;
        let sino = Sinogram::zeros(uniform_s_grid(&d, 8)?, SphereGrid::new(4, 8)?)?;
        let op = SurfaceOperator::cylinder(&vol, &sino, &d, QuadResolution::for_grid(64), 0.5)?;
        let mut worst: f64 = 0.0;
        for seed in 0..5 {
            let PhantomSpec::RandomBandlimited { n_blobs, width, .. } = PhantomSpec::default_for("random_bandlimited", &d)?
            else {
                unreachable!()
            };
            let spec = PhantomSpec::RandomBandlimited { seed, n_blobs, width };
            let f = spec.generate(&vol, &d)?;
            let (even, odd) = odd_even_split(&f)?;
            let ratio = op.forward(&odd)?.norm() / op.forward(&even)?.norm();
            worst = worst.max(ratio);
        }
        Ok(worst)
    };
    let worst = run().map_err(|e| e.to_string())?;
    check(worst <= 1e-3, format!("max |C f_odd| / |C f_even| = {worst:.2e} over 5 phantoms at 64^3 (tol 1e-3)"))
}

fn criterion_3() -> Outcome {
    let mut exact = true;
    for l in 0..=64usize {
        let ll = (l * (l + 1)) as f64;
        exact &= q_factor(l) == ll / (ll + 1.0);
    }
    let h = kernel_h(64);
    let mut kernel: f64 = 0.0;
    for l in 0..=64usize {
        let m = 2.0 * PI * (4.0 * PI / (2 * l + 1) as f64).sqrt() * h.get(l, 0).re;
        kernel = kernel.max((m - q_factor(l)).abs());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let stack = HarmonicStack::new((0..4).map(|_| random_real_coeffs(20, &mut rng)).collect()).map_err(|e| e.to_string())?;
    let twice = apply_q_sqrt(&apply_q_sqrt(&stack));
    let once = apply_q(&stack);
    let mut comp: f64 = 0.0;
    for (a, b) in twice.slices.iter().zip(&once.slices) {
        for (x, y) in a.data.iter().zip(&b.data) {
            comp = comp.max((x - y).norm());
        }
    }
    check(
        exact && kernel <= 1e-14 && comp <= 1e-12,
        format!("q exact for l<=64: {exact}; kernel multiplier err {kernel:.1e} (tol 1e-14); sqrt(Q)^2 - Q = {comp:.1e} (tol 1e-12)"),
    )
}

fn criterion_4() -> Outcome {
    let l_max = 8;
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let mut run = || -> spindle_core::Result<f64> {
        let grid = SphereGrid::for_band_limit(l_max)?;
        let plan = ShtPlan::new(&grid, l_max)?;
        let fc = random_real_coeffs(l_max, &mut rng);
        let f = plan.synthesize_real(&fc);
        let h = kernel_h(l_max);
        let conv = spherical_convolve_bruteforce(&f, &h, &grid, 2 * l_max + 2)?;
        let multiplied = fc.scaled_by_degree(q_factor);
        let path = plan.synthesize(&multiplied);
        Ok(conv.iter().zip(&path).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max))
    };
    let err = run().map_err(|e| e.to_string())?;
    check(err <= 1e-6, format!("max |brute-force SO(3) convolution - multiplier path| = {err:.2e} at L=8 (tol 1e-6)"))
}

fn criterion_5() -> Outcome {
    let run = || -> spindle_core::Result<(f64, f64)> {
        let grid = SphereGrid::for_band_limit(8)?;
        let mut basis = Vec::new();
        for l in 0..=8usize {
            for m in -(l as i64)..=l as i64 {
                let mut col = Vec::with_capacity(grid.len());
                for j in 0..grid.n_lat {
                    for k in 0..grid.n_lon {
                        col.push(ylm(l, m, grid.colatitudes[j], grid.longitudes[k])?);
                    }
                }
                basis.push(col);
            }
        }
        let mut gram: f64 = 0.0;
        for (a, ca) in basis.iter().enumerate() {
            for (b, cb) in basis.iter().enumerate() {
                let mut acc = Complex64::new(0.0, 0.0);
                for j in 0..grid.n_lat {
                    let w = grid.quad_weights[j];
                    for k in 0..grid.n_lon {
                        let i = j * grid.n_lon + k;
                        acc += ca[i] * cb[i].conj() * w;
                    }
                }
                let target = if a == b { 1.0 } else { 0.0 };
                gram = gram.max((acc - target).norm());
            }
        }

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let grid16 = SphereGrid::for_band_limit(16)?;
        let plan = ShtPlan::new(&grid16, 16)?;
        let c = random_real_coeffs(16, &mut rng);
        let back = plan.analyze_real(&plan.synthesize_real(&c))?;
        let round = c.data.iter().zip(&back.data).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        Ok((gram, round))
    };
    let (gram, round) = run().map_err(|e| e.to_string())?;
    check(
        gram <= 1e-10 && round <= 1e-9,
        format!("Gram error {gram:.1e} for l<=8 (tol 1e-10); round trip error {round:.1e} at L=16 (tol 1e-9)"),
    )
}

fn verification_checks(names: &[&str]) -> Outcome {
    let report = run_verification(20, 2024, 1.0).map_err(|e| e.to_string())?;
    let mut ok = true;
    let mut parts = Vec::new();
    for name in names {
        let c = report.checks.iter().find(|c| c.name == *name).ok_or(format!("missing check {name}"))?;
        ok &= c.passed;
        let rel = if c.lower_bound { ">=" } else { "<=" };
        parts.push(format!("{} {:.1e} {rel} {:.0e}", c.name, c.measured, c.tolerance));
    }
    check(ok, parts.join("; "))
}

fn criterion_6() -> Outcome {
    let listed = verification_checks(&[
        "det_dpi_left_vs_fd",
        "det_dpi_right_vs_fd",
        "det_right_plus_left",
        "det_vanishes_on_sigma",
        "dpi_left_rank5_on_sigma",
        "dpi_left_rank_margin",
    ])?;
    // rank read off directly at fresh points of Σ
    let mut rng = ChaCha8Rng::seed_from_u64(66);
    for _ in 0..20 {
        let p = microlocal::random_sigma_point(&mut rng);
        let rank = microlocal::numerical_rank(&microlocal::fd_dpi_left(&p), microlocal::RANK_THRESHOLD);
        if rank != 5 {
            return Err(format!("numerical rank {rank} on Sigma; {listed}"));
        }
    }
    Ok(format!("{listed}; rank 5 at 20 points of Sigma"))
}

fn criterion_7() -> Outcome {
    verification_checks(&["flowout_vs_series", "flowout_rotates_e1", "poisson_brackets_vanish"])
}

fn criterion_8() -> Outcome {
    let run = || -> spindle_core::Result<(f64, f64, f64)> {
        let rc = RunConfig::default();
        let d = rc.domain()?;
        let op = rc.operator()?;
        let spec = PhantomSpec::default_for("bead", &d)?;
        let f = spec.generate(op.volume_template(), &d)?;
        let b = op.forward(&f)?;
        let bp = op.adjoint(&b)?;
        let fbp = filtered_backproject(&op, &b, rc.sphere_l)?;
        let m_bp = microlocal::artefact_metrics(&bp, &spec)?;
        let m_fbp = microlocal::artefact_metrics(&fbp, &spec)?;
        Ok((m_bp.mirror_ratio, m_bp.smear_ratio, m_fbp.smear_ratio))
    };
    let (mirror, smear_bp, smear_fbp) = run().map_err(|e| e.to_string())?;
    check(
        (0.9..=1.1).contains(&mirror) && smear_fbp < smear_bp,
        format!(
            "BP mirror ratio {mirror:.4} (in [0.9,1.1]); smear BP {smear_bp:.4e}, FBP {smear_fbp:.4e}, reduction factor {:.3}",
            smear_bp / smear_fbp
        ),
    )
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let a = DMatrix::from_fn(50, 30, |_, _| rng.random_range(-1.0..1.0));
    let b = DVector::from_fn(50, |_, _| rng.random_range(-1.0..1.0));
    let lstsq = |m: &DMatrix<f64>, v: &DVector<f64>| m.clone().svd(true, true).solve(v, 1e-14).unwrap();
    let rel = |x: &[f64], y: &DVector<f64>| {
        x.iter().zip(y.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() / y.norm()
    };
    let x_ls = lstsq(&a, &b);
    let map = DenseMap(a.clone());
    let plain = cgls(&map, b.as_slice(), 200, 1e-15, 0.0).map_err(|e| e.to_string())?;
    let e_plain = rel(&plain.solution, &x_ls);

    let mu = 0.5;
    let mut aug = DMatrix::zeros(80, 30);
    aug.view_mut((0, 0), (50, 30)).copy_from(&a);
    for i in 0..30 {
        aug[(50 + i, i)] = mu;
    }
    let mut baug = DVector::zeros(80);
    baug.rows_mut(0, 50).copy_from(&b);
    let damped = cgls(&map, b.as_slice(), 200, 1e-15, mu).map_err(|e| e.to_string())?;
    let e_damped = rel(&damped.solution, &lstsq(&aug, &baug));

    let sigma = a.singular_values().max();
    let lw = landweber(&map, b.as_slice(), 5000, 1e-300, 1.0 / (sigma * sigma)).map_err(|e| e.to_string())?;
    let mut reached = None;
    // first iteration count at which the error bound holds
    if rel(&lw.solution, &x_ls) <= 1e-4 {
        let mut lo = 1;
        let mut hi = lw.iterations;
        while lo < hi {
            let mid = (lo + hi) / 2;
            let r = landweber(&map, b.as_slice(), mid, 1e-300, 1.0 / (sigma * sigma)).map_err(|e| e.to_string())?;
            if rel(&r.solution, &x_ls) <= 1e-4 {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        reached = Some(lo);
    }
    let e_lw = rel(&lw.solution, &x_ls);
    check(
        e_plain <= 1e-8 && e_damped <= 1e-8 && reached.is_some(),
        format!(
            "CGLS rel err {e_plain:.1e}; damped CGLS rel err {e_damped:.1e} (tol 1e-8); Landweber rel err {e_lw:.1e} after 5000 steps, 1e-4 reached at step {}",
            reached.map_or("never".to_string(), |k| k.to_string())
        ),
    )
}

fn criterion_10() -> Outcome {
    let run = || -> spindle_core::Result<Vec<String>> {
        let mut failures = Vec::new();
        let ops = operators_32()?;
        let (_, op) = &ops[0];
        let d = HollowBall::default();
        let spec = PhantomSpec::RandomBandlimited { seed: 9, n_blobs: 6, width: 0.1 };
        let f = spec.generate(op.volume_template(), &d)?;
        if f != spec.generate(op.volume_template(), &d)? {
            failures.push("phantom not reproducible".to_string());
        }

        let forward_with = |threads: usize| -> spindle_core::Result<(Sinogram, Volume)> {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| {
                spindle_core::Error::Numeric(e.to_string())
            })?;
            pool.install(|| {
                let g = op.forward(&f)?;
                let back = op.adjoint(&g)?;
                Ok((g, back))
            })
        };
        let (g1, b1) = forward_with(1)?;
        let (g4, b4) = forward_with(4)?;
        if g1.values.iter().zip(&g4.values).any(|(a, b)| a.to_bits() != b.to_bits()) {
            failures.push("forward differs between 1 and 4 threads".into());
        }
        let drift = b1.values.iter().zip(&b4.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let scale = b1.values.iter().map(|v| v.abs()).fold(0.0, f64::max);
        if drift > 1e-12 * scale {
            failures.push(format!("adjoint drift {drift:e} between 1 and 4 threads"));
        }

        let v2 = io::volume_from_bytes(&io::volume_to_bytes(&f))?;
        let s2 = io::sinogram_from_bytes(&io::sinogram_to_bytes(&g1))?;
        let stack = g1.to_harmonics(2)?;
        let h2 = io::harmonics_from_bytes(&io::harmonics_to_bytes(&stack))?;
        let bits = |a: &[f64], b: &[f64]| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits());
        if !(bits(&v2.values, &f.values) && v2.same_grid(&f)) {
            failures.push("volume round trip".into());
        }
        if !(bits(&s2.values, &g1.values) && s2.same_layout(&g1)) {
            failures.push("sinogram round trip".into());
        }
        if h2 != stack {
            failures.push("harmonics round trip".into());
        }

        let mut cfg = SolverConfig::new(Method::Cgls);
        cfg.max_iters = 4;
        cfg.seed = 12;
        let r1 = reconstruct(op, &g1, &cfg, 0.05)?;
        let r2 = reconstruct(op, &g1, &cfg, 0.05)?;
        if !bits(&r1.volume.values, &r2.volume.values) || r1.report != r2.report {
            failures.push("seeded reconstruction not bitwise reproducible".into());
        }
        Ok(failures)
    };
    let failures = run().map_err(|e| e.to_string())?;
    check(
        failures.is_empty(),
        if failures.is_empty() {
            "formats round-trip bitwise; seeded runs bitwise identical; forward bitwise equal on 1 and 4 threads".into()
        } else {
            failures.join("; ")
        },
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("adjoint correctness", criterion_1),
        ("odd null space", criterion_2),
        ("filter algebra", criterion_3),
        ("convolution theorem", criterion_4),
        ("SHT validity", criterion_5),
        ("microlocal determinants", criterion_6),
        ("flowout", criterion_7),
        ("artefact phenomenology", criterion_8),
        ("solver correctness", criterion_9),
        ("determinism and formats", criterion_10),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if only.is_some_and(|k| k != i + 1) {
            continue;
        }
        let t = Instant::now();
        let outcome = run();
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS {name} [{secs:.1}s]: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL {name} [{secs:.1}s]: {detail}", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
