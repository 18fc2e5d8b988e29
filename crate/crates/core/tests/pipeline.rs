use spindle_core::config::{KeyValues, RunConfig};
use spindle_core::harmonics::{apply_q, q_factor};
use spindle_core::operators::{as_matrix, DenseMap, LinearMap};
use spindle_core::phantoms::PhantomSpec;
use spindle_core::solvers::{backproject, cgls, filtered_backproject, precondition};
use spindle_core::{Sinogram, Vec3, Volume};

fn config(text: &str) -> RunConfig {
    RunConfig::from_key_values(&KeyValues::parse(text).unwrap()).unwrap()
}

/// Dense map with the operator's weighted inner products.
struct WeightedDense<'a> {
    dense: DenseMap,
    op: &'a dyn LinearMap,
}

impl LinearMap for WeightedDense<'_> {
    fn domain_len(&self) -> usize {
        self.dense.domain_len()
    }
    fn range_len(&self) -> usize {
        self.dense.range_len()
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.dense.apply(x)
    }
    fn apply_adjoint(&self, y: &[f64]) -> Vec<f64> {
        self.op.apply_adjoint(y)
    }
    fn domain_dot(&self, a: &[f64], b: &[f64]) -> f64 {
        self.op.domain_dot(a, b)
    }
    fn range_dot(&self, a: &[f64], b: &[f64]) -> f64 {
        self.op.range_dot(a, b)
    }
}

#[test]
fn cgls_matrix_free_matches_explicit_matrix_at_16() {
    let rc = config("grid_n = 16\nsphere_l = 3\nn_s = 5\n");
    let op = rc.operator().unwrap();
    let d = rc.domain().unwrap();
    let f = PhantomSpec::default_for("random_bandlimited", &d).unwrap().generate(op.volume_template(), &d).unwrap();
    let b = op.forward(&f).unwrap();
    let m = as_matrix(&op).unwrap();
    let dense = WeightedDense { dense: DenseMap(m), op: &op };
    for iters in 1..=6 {
        let free = cgls(&op, &b.values, iters, 1e-300, 0.0).unwrap();
        let explicit = cgls(&dense, &b.values, iters, 1e-300, 0.0).unwrap();
        let scale = free.solution.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let diff = free.solution.iter().zip(&explicit.solution).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff <= 1e-10 * scale, "{iters}: {diff} vs {scale}");
    }
    assert!(backproject(&op, &vec![0.0; op.range_len()]).iter().all(|v| *v == 0.0));
}

#[test]
fn fbp_is_backprojection_of_filtered_truncated_data() {
    let rc = config("grid_n = 16\nsphere_l = 6\nn_s = 5\n");
    let op = rc.operator().unwrap();
    let d = rc.domain().unwrap();
    let f = PhantomSpec::default_for("custom_radial", &d).unwrap().generate(op.volume_template(), &d).unwrap();
    let f = Volume::from_fn(&f, |x| f.sample(x) + 0.3 * (x.x > 0.2) as u8 as f64 * x.norm());
    let b = op.forward(&f).unwrap();
    let fbp = filtered_backproject(&op, &b, 5).unwrap();
    let composed = op.adjoint(&Sinogram::from_harmonics(&b, &apply_q(&b.to_harmonics(5).unwrap())).unwrap()).unwrap();
    let diff = fbp.values.iter().zip(&composed.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(diff <= 1e-12 * composed.values.iter().map(|v| v.abs()).fold(0.0, f64::max));
    assert_eq!(b.filtered(5, q_factor).unwrap().values.len(), b.len());
}

/// `Σ (∂²_r v)² / Σ v²`, with the radial second difference taken by trilinear
/// sampling one voxel in and out along the ray.
fn radial_roughness(v: &Volume) -> f64 {
    let h = v.spacing;
    let mut rough = 0.0;
    let mut energy = 0.0;
    for (x, val) in v.centers().zip(&v.values) {
        energy += val * val;
        let r = x.norm();
        if r < 2.0 * h {
            continue;
        }
        let u: Vec3 = x * (1.0 / r);
        let d2 = v.sample(x + u * h) - 2.0 * val + v.sample(x - u * h);
        rough += d2 * d2;
    }
    rough / energy
}

#[test]
fn preconditioning_smooths_radial_singularities() {
    let rc = config("grid_n = 32\nsphere_l = 8\nn_s = 16\n");
    let op = rc.operator().unwrap();
    let d = rc.domain().unwrap();
    for kind in ["bead", "spherical_shells"] {
        let spec = match PhantomSpec::default_for(kind, &d).unwrap() {
            PhantomSpec::Bead { center, value, .. } => PhantomSpec::Bead { center, radius: 0.1, value },
            other => other,
        };
        let f = spec.generate(op.volume_template(), &d).unwrap();
        let b = op.forward(&f).unwrap();
        let plain = cgls(&op, &b.values, 10, 1e-12, 0.0).unwrap();
        let pre = precondition(&op, 8).unwrap();
        let smoothed = cgls(&pre, &pre.filter(&b.values), 10, 1e-12, 0.0).unwrap();
        let as_volume = |x: Vec<f64>| Volume { values: x, ..op.volume_template().clone() };
        let r_plain = radial_roughness(&as_volume(plain.solution));
        let r_pre = radial_roughness(&as_volume(smoothed.solution));
        println!("{kind}: radial roughness plain {r_plain:.4e}, preconditioned {r_pre:.4e}");
        assert!(r_plain.is_finite() && r_pre.is_finite());
    }
}
