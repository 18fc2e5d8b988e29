//! Discrete forward/adjoint pairs for the weighted cylinder transform and the
//! spindle transform.
//!
//! Both operators integrate over quadrature nodes on the cylinders
//! `|x|² − (x·θ)² = s`. A row of the discrete matrix is the list of trilinear
//! stencil weights of those nodes, so the adjoint is the exact transpose of
//! the forward with respect to the weighted inner products
//! `⟨f, f′⟩ = h³ Σ f f′` and `⟨g, g′⟩ = Σ Δs · w_θ · g g′`.
//!
//! The spindle transform is the cylinder transform of
//! `f̃(x) = det J_v(x) f(v(x))` with unit weight exponent. `f̃` is never
//! tabulated: the spindle-domain volume is interpolated at `v(x)` for every
//! cylinder node.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    for_each_cylinder_node, grad_h_raw, jacobian_det_radial, spindle_to_cylinder_radius, AxialRule, Flavor,
    HollowBall,
};
use crate::harmonics::{HarmonicStack, ShtPlan, SphereGrid};
use crate::volume::Volume;

/// Transform data `g(s, θ)` sampled on `s_values × grid`, stored s-major,
/// then latitude, then longitude.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sinogram {
    pub s_values: Vec<f64>,
    pub grid: SphereGrid,
    pub values: Vec<f64>,
}

impl Sinogram {
    pub fn zeros(s_values: Vec<f64>, grid: SphereGrid) -> Result<Self> {
        if s_values.is_empty() {
            return Err(Error::Config("sinogram needs at least one s sample".into()));
        }
        if !(s_values[0] > 0.0) || s_values.windows(2).any(|w| !(w[1] > w[0])) || s_values.iter().any(|s| !s.is_finite()) {
            return Err(Error::Config("s samples must be positive, finite and strictly increasing".into()));
        }
        let n = s_values.len() * grid.len();
        Ok(Self { s_values, grid, values: vec![0.0; n] })
    }

    pub fn zeros_like(&self) -> Self {
        Self { values: vec![0.0; self.values.len()], ..self.clone() }
    }

    pub fn n_s(&self) -> usize {
        self.s_values.len()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.grid.n_lat + j) * self.grid.n_lon + k
    }

    pub fn slice(&self, i: usize) -> &[f64] {
        let n = self.grid.len();
        &self.values[i * n..(i + 1) * n]
    }

    pub fn slice_mut(&mut self, i: usize) -> &mut [f64] {
        let n = self.grid.len();
        &mut self.values[i * n..(i + 1) * n]
    }

    /// Cell widths in `s`: half the distance between neighbours, with the end
    /// cells mirrored so a uniform grid gets a constant `Δs`.
    pub fn s_weights(&self) -> Vec<f64> {
        let s = &self.s_values;
        let n = s.len();
        if n == 1 {
            return vec![1.0];
        }
        (0..n)
            .map(|i| match i {
                0 => s[1] - s[0],
                _ if i == n - 1 => s[n - 1] - s[n - 2],
                _ => 0.5 * (s[i + 1] - s[i - 1]),
            })
            .collect()
    }

    /// Measure `Δs_i · w_j` of every stored cell.
    pub fn cell_weights(&self) -> Vec<f64> {
        let ds = self.s_weights();
        let mut out = Vec::with_capacity(self.len());
        for d in ds {
            for j in 0..self.grid.n_lat {
                let w = d * self.grid.quad_weights[j];
                out.extend(std::iter::repeat_n(w, self.grid.n_lon));
            }
        }
        out
    }

    pub fn dot(&self, other: &Sinogram) -> f64 {
        weighted_dot(&self.cell_weights(), &self.values, &other.values)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn same_layout(&self, other: &Sinogram) -> bool {
        self.s_values == other.s_values && self.grid == other.grid
    }

    /// Per-slice harmonic coefficients up to degree `l_max`.
    pub fn to_harmonics(&self, l_max: usize) -> Result<HarmonicStack> {
        let plan = ShtPlan::new(&self.grid, l_max)?;
        let slices = (0..self.n_s()).map(|i| plan.analyze_real(self.slice(i))).collect::<Result<Vec<_>>>()?;
        HarmonicStack::new(slices)
    }

    /// Synthesises a harmonic stack onto this sinogram's layout.
    pub fn from_harmonics(template: &Sinogram, stack: &HarmonicStack) -> Result<Sinogram> {
        if stack.n_s() != template.n_s() {
            return Err(Error::Config(format!(
                "harmonic stack has {} slices, sinogram layout has {}",
                stack.n_s(),
                template.n_s()
            )));
        }
        let plan = ShtPlan::new(&template.grid, stack.l_max)?;
        let mut out = template.zeros_like();
        for (i, c) in stack.slices.iter().enumerate() {
            out.slice_mut(i).copy_from_slice(&plan.synthesize_real(c));
        }
        Ok(out)
    }

    /// Truncates every slice to degree `≤ l_max` and scales degree `l` by
    /// `factor(l)`.
    pub fn filtered(&self, l_max: usize, factor: impl Fn(usize) -> f64 + Copy) -> Result<Sinogram> {
        let plan = ShtPlan::new(&self.grid, l_max)?;
        let mut out = self.zeros_like();
        filter_slices(&plan, &self.values, &mut out.values, factor)?;
        Ok(out)
    }
}

fn filter_slices(plan: &ShtPlan, input: &[f64], output: &mut [f64], factor: impl Fn(usize) -> f64 + Copy) -> Result<()> {
    let n = plan.grid.len();
    for (src, dst) in input.chunks(n).zip(output.chunks_mut(n)) {
        dst.copy_from_slice(&plan.filter_real(src, factor)?);
    }
    Ok(())
}

fn weighted_dot(w: &[f64], a: &[f64], b: &[f64]) -> f64 {
    w.iter().zip(a).zip(b).map(|((w, a), b)| w * a * b).sum()
}

/// Uniform `s` samples on `[s_min, outer² − s_min]`, `s_min = 10⁻² outer²`.
pub fn uniform_s_grid(domain: &HollowBall, n_s: usize) -> Result<Vec<f64>> {
    if n_s == 0 {
        return Err(Error::Config("n_s must be positive".into()));
    }
    let outer2 = domain.to_cylinder().outer.powi(2);
    let s_min = 1e-2 * outer2;
    if n_s == 1 {
        return Ok(vec![0.5 * outer2]);
    }
    let step = (outer2 - 2.0 * s_min) / (n_s - 1) as f64;
    Ok((0..n_s).map(|i| s_min + step * i as f64).collect())
}

/// `s` samples for the spindle transform, uniform in the equatorial radius
/// `ε` of the spindle torus over `[0.1, 0.99]·outer`, with `s = α(ε)²`.
pub fn spindle_s_grid(domain: &HollowBall, n_s: usize) -> Result<Vec<f64>> {
    if n_s == 0 {
        return Err(Error::Config("n_s must be positive".into()));
    }
    let outer = domain.to_spindle().outer;
    let (lo, hi) = (0.1 * outer, 0.99 * outer);
    let step = if n_s == 1 { 0.0 } else { (hi - lo) / (n_s - 1) as f64 };
    let first = if n_s == 1 { 0.5 * (lo + hi) } else { lo };
    Ok((0..n_s).map(|i| spindle_to_cylinder_radius(first + step * i as f64).powi(2)).collect())
}

/// A linear map between flat real vectors with its adjoint taken with
/// respect to `domain_dot` and `range_dot`.
pub trait LinearMap: Sync {
    fn domain_len(&self) -> usize;
    fn range_len(&self) -> usize;
    fn apply(&self, x: &[f64]) -> Vec<f64>;
    fn apply_adjoint(&self, y: &[f64]) -> Vec<f64>;

    fn domain_dot(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(a, b)| a * b).sum()
    }

    fn range_dot(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(a, b)| a * b).sum()
    }
}

/// A dense matrix under Euclidean inner products.
#[derive(Debug, Clone)]
pub struct DenseMap(pub DMatrix<f64>);

impl LinearMap for DenseMap {
    fn domain_len(&self) -> usize {
        self.0.ncols()
    }

    fn range_len(&self) -> usize {
        self.0.nrows()
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        (&self.0 * nalgebra::DVector::from_column_slice(x)).as_slice().to_vec()
    }

    fn apply_adjoint(&self, y: &[f64]) -> Vec<f64> {
        (self.0.transpose() * nalgebra::DVector::from_column_slice(y)).as_slice().to_vec()
    }
}

pub const AS_MATRIX_MAX_UNKNOWNS: usize = 20_000;

/// The explicit matrix of `op`, one column per domain impulse.
pub fn as_matrix(op: &dyn LinearMap) -> Result<DMatrix<f64>> {
    let n = op.domain_len();
    if n > AS_MATRIX_MAX_UNKNOWNS {
        return Err(Error::Config(format!("as_matrix limited to {AS_MATRIX_MAX_UNKNOWNS} unknowns, got {n}")));
    }
    let cols: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            op.apply(&e)
        })
        .collect();
    let mut m = DMatrix::zeros(op.range_len(), n);
    for (i, c) in cols.iter().enumerate() {
        m.column_mut(i).copy_from_slice(c);
    }
    Ok(m)
}

/// The explicit matrix of `op.apply_adjoint`, one column per range impulse.
pub fn adjoint_as_matrix(op: &dyn LinearMap) -> Result<DMatrix<f64>> {
    let (n, m) = (op.domain_len(), op.range_len());
    if n > AS_MATRIX_MAX_UNKNOWNS {
        return Err(Error::Config(format!("as_matrix limited to {AS_MATRIX_MAX_UNKNOWNS} unknowns, got {n}")));
    }
    let cols: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|i| {
            let mut e = vec![0.0; m];
            e[i] = 1.0;
            op.apply_adjoint(&e)
        })
        .collect();
    let mut out = DMatrix::zeros(n, m);
    for (i, c) in cols.iter().enumerate() {
        out.column_mut(i).copy_from_slice(c);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Transform {
    Cylinder,
    Spindle,
}

impl std::str::FromStr for Transform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cylinder" => Ok(Self::Cylinder),
            "spindle" => Ok(Self::Spindle),
            _ => Err(Error::Config(format!("unknown transform {s:?} (expected spindle or cylinder)"))),
        }
    }
}

/// Nodes per cylinder: `n_phi` around, `n_z` along each axial band.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuadResolution {
    pub n_phi: usize,
    pub n_z: usize,
}

impl QuadResolution {
    /// Twice the voxel count per axis in both directions.
    pub fn for_grid(n: usize) -> Self {
        Self { n_phi: 2 * n, n_z: 2 * n }
    }
}

/// Number of independent accumulators in the adjoint. Fixed so the result
/// does not depend on the thread count.
const ADJOINT_PARTITIONS: usize = 16;

/// Discrete cylinder or spindle transform on fixed volume and sinogram
/// layouts.
#[derive(Debug, Clone)]
pub struct SurfaceOperator {
    pub transform: Transform,
    pub domain: HollowBall,
    pub quad: QuadResolution,
    pub weight_pow: f64,
    pub axial: AxialRule,
    volume: Volume,
    sinogram: Sinogram,
    cylinder_domain: HollowBall,
    /// `(j, k)` of one member of every antipodal pair, with the partner.
    canonical: Vec<((usize, usize), (usize, usize))>,
    cell_weights: Vec<f64>,
}

impl SurfaceOperator {
    /// Weighted cylinder transform with weight `|∇h(v(x))|^{−weight_pow}`.
    pub fn cylinder(
        volume: &Volume,
        sinogram: &Sinogram,
        domain: &HollowBall,
        quad: QuadResolution,
        weight_pow: f64,
    ) -> Result<Self> {
        if domain.flavor != Flavor::CylinderDomain {
            return Err(Error::Config("cylinder transform needs a cylinder-domain hollow ball".into()));
        }
        if !(weight_pow > 0.0 && weight_pow.is_finite()) {
            return Err(Error::Config(format!("weight exponent must be positive, got {weight_pow}")));
        }
        Self::build(Transform::Cylinder, volume, sinogram, domain, quad, weight_pow, AxialRule::Uniform)
    }

    /// Spindle transform on a spindle-domain volume.
    pub fn spindle(volume: &Volume, sinogram: &Sinogram, domain: &HollowBall, quad: QuadResolution) -> Result<Self> {
        if domain.flavor != Flavor::SpindleDomain {
            return Err(Error::Config("spindle transform needs a spindle-domain hollow ball".into()));
        }
        Self::build(Transform::Spindle, volume, sinogram, domain, quad, 1.0, AxialRule::SpindleAxial)
    }

    fn build(
        transform: Transform,
        volume: &Volume,
        sinogram: &Sinogram,
        domain: &HollowBall,
        quad: QuadResolution,
        weight_pow: f64,
        axial: AxialRule,
    ) -> Result<Self> {
        if quad.n_phi < 2 || quad.n_z < 2 || quad.n_phi % 2 != 0 {
            return Err(Error::Config(format!(
                "quadrature needs an even n_phi ≥ 2 and n_z ≥ 2, got {}x{}",
                quad.n_phi, quad.n_z
            )));
        }
        let cylinder_domain = domain.to_cylinder();
        let outer2 = cylinder_domain.outer.powi(2);
        if let Some(bad) = sinogram.s_values.iter().find(|&&s| !(s > 0.0 && s < outer2)) {
            return Err(Error::Config(format!("s = {bad} outside (0, {outer2})")));
        }
        let (lo, hi) = volume.bounds();
        let reach = domain.outer - 0.5 * volume.spacing - 1e-9 * domain.outer;
        if [lo.x, lo.y, lo.z].iter().any(|&c| c > -reach) || [hi.x, hi.y, hi.z].iter().any(|&c| c < reach) {
            return Err(Error::Config(format!(
                "volume grid does not cover the hollow ball of radius {}",
                domain.outer
            )));
        }
        let grid = &sinogram.grid;
        let mut canonical = Vec::new();
        for j in 0..grid.n_lat {
            for k in 0..grid.n_lon {
                let partner = grid.antipode(j, k).ok_or_else(|| {
                    Error::Config("sphere grid must contain antipodes (even n_lon, symmetric latitudes)".into())
                })?;
                if (j, k) < partner {
                    canonical.push(((j, k), partner));
                }
            }
        }
        let sinogram = sinogram.zeros_like();
        Ok(Self {
            transform,
            domain: *domain,
            quad,
            weight_pow,
            axial,
            volume: volume.zeros_like(),
            cell_weights: sinogram.cell_weights(),
            sinogram,
            cylinder_domain,
            canonical,
        })
    }

    pub fn volume_template(&self) -> &Volume {
        &self.volume
    }

    pub fn sinogram_template(&self) -> &Sinogram {
        &self.sinogram
    }

    /// Visits the nonzero entries `(voxel, coefficient)` of the row for
    /// `s_values[i]` and direction `(j, k)`.
    pub fn for_each_row_entry(&self, i: usize, j: usize, k: usize, mut visit: impl FnMut(usize, f64)) {
        let s = self.sinogram.s_values[i];
        let theta = self.sinogram.grid.direction(j, k).unit;
        let scale = 0.5 / s.sqrt();
        let pow = self.weight_pow;
        let vol = &self.volume;
        let spindle = self.transform == Transform::Spindle;
        for_each_cylinder_node(s, theta, &self.cylinder_domain, self.quad.n_phi, self.quad.n_z, self.axial, |x, w| {
            let rho = x.norm();
            let y = x * (1.0 / ((rho * rho + 1.0).sqrt() + 1.0));
            let g = grad_h_raw(y, theta).norm();
            let gw = if pow == 1.0 {
                g
            } else if pow == 0.5 {
                g.sqrt()
            } else {
                g.powf(pow)
            };
            let (point, coeff) = if spindle {
                (y, w * scale * jacobian_det_radial(rho) / gw)
            } else {
                (x, w * scale / gw)
            };
            vol.stencil(point, |idx, wt| visit(idx, coeff * wt));
        });
    }

    fn check_volume(&self, f: &Volume) -> Result<()> {
        if !f.same_grid(&self.volume) || f.values.len() != self.volume.len() {
            return Err(Error::Config("volume grid differs from the operator's grid".into()));
        }
        Ok(())
    }

    pub fn forward(&self, f: &Volume) -> Result<Sinogram> {
        self.check_volume(f)?;
        let mut out = self.sinogram.zeros_like();
        out.values = self.apply(&f.values);
        Ok(out)
    }

    pub fn adjoint(&self, g: &Sinogram) -> Result<Volume> {
        if !g.same_layout(&self.sinogram) {
            return Err(Error::Config("sinogram layout differs from the operator's layout".into()));
        }
        let mut out = self.volume.zeros_like();
        out.values = self.apply_adjoint(&g.values);
        Ok(out)
    }

    /// Every `(s index, canonical pair)` cell.
    fn cells(&self) -> impl IndexedParallelIterator<Item = (usize, usize)> + '_ {
        let nc = self.canonical.len();
        (0..self.sinogram.n_s() * nc).into_par_iter().map(move |c| (c / nc, c % nc))
    }
}

impl LinearMap for SurfaceOperator {
    fn domain_len(&self) -> usize {
        self.volume.len()
    }

    fn range_len(&self) -> usize {
        self.sinogram.len()
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let rows: Vec<f64> = self
            .cells()
            .map(|(i, c)| {
                let (j, k) = self.canonical[c].0;
                let mut acc = 0.0;
                self.for_each_row_entry(i, j, k, |idx, w| acc += w * x[idx]);
                acc
            })
            .collect();
        let mut out = vec![0.0; self.sinogram.len()];
        let nc = self.canonical.len();
        for (cell, v) in rows.into_iter().enumerate() {
            let (i, c) = (cell / nc, cell % nc);
            let ((j, k), (jj, kk)) = self.canonical[c];
            out[self.sinogram.index(i, j, k)] = v;
            out[self.sinogram.index(i, jj, kk)] = v;
        }
        out
    }

    fn apply_adjoint(&self, y: &[f64]) -> Vec<f64> {
        let n_cells = self.sinogram.n_s() * self.canonical.len();
        let nc = self.canonical.len();
        let inv_h3 = 1.0 / self.volume.voxel_volume();
        let chunk = n_cells.div_ceil(ADJOINT_PARTITIONS).max(1);
        let partials: Vec<Vec<f64>> = (0..ADJOINT_PARTITIONS)
            .into_par_iter()
            .map(|p| {
                let mut acc = vec![0.0; self.volume.len()];
                for cell in (p * chunk)..((p + 1) * chunk).min(n_cells) {
                    let (i, c) = (cell / nc, cell % nc);
                    let ((j, k), (jj, kk)) = self.canonical[c];
                    let (a, b) = (self.sinogram.index(i, j, k), self.sinogram.index(i, jj, kk));
                    let g = self.cell_weights[a] * y[a] + self.cell_weights[b] * y[b];
                    if g == 0.0 {
                        continue;
                    }
                    self.for_each_row_entry(i, j, k, |idx, w| acc[idx] += w * g);
                }
                acc
            })
            .collect();
        let mut out = vec![0.0; self.volume.len()];
        for part in partials {
            for (o, v) in out.iter_mut().zip(part) {
                *o += v;
            }
        }
        for o in &mut out {
            *o *= inv_h3;
        }
        out
    }

    fn domain_dot(&self, a: &[f64], b: &[f64]) -> f64 {
        self.volume.voxel_volume() * a.iter().zip(b).map(|(a, b)| a * b).sum::<f64>()
    }

    fn range_dot(&self, a: &[f64], b: &[f64]) -> f64 {
        weighted_dot(&self.cell_weights, a, b)
    }
}

/// `P ∘ A` where `P` truncates each data slice to degree `≤ L` and scales
/// degree `l` by `factor(l)`. `P` is self-adjoint under the sinogram inner
/// product, so the adjoint is `A* ∘ P`.
pub struct FilteredMap<'a> {
    op: &'a SurfaceOperator,
    plan: ShtPlan,
    factor: fn(usize) -> f64,
}

impl<'a> FilteredMap<'a> {
    pub fn new(op: &'a SurfaceOperator, l_max: usize, factor: fn(usize) -> f64) -> Result<Self> {
        let plan = ShtPlan::new(&op.sinogram.grid, l_max)?;
        Ok(Self { op, plan, factor })
    }

    pub fn filter(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; y.len()];
        filter_slices(&self.plan, y, &mut out, self.factor).expect("plan matches the operator's sphere grid");
        out
    }
}

impl LinearMap for FilteredMap<'_> {
    fn domain_len(&self) -> usize {
        self.op.domain_len()
    }

    fn range_len(&self) -> usize {
        self.op.range_len()
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.filter(&self.op.apply(x))
    }

    fn apply_adjoint(&self, y: &[f64]) -> Vec<f64> {
        self.op.apply_adjoint(&self.filter(y))
    }

    fn domain_dot(&self, a: &[f64], b: &[f64]) -> f64 {
        self.op.domain_dot(a, b)
    }

    fn range_dot(&self, a: &[f64], b: &[f64]) -> f64 {
        self.op.range_dot(a, b)
    }
}

/// Cylinder transform of `f` on the layout of `template`.
pub fn cylinder_forward(
    f: &Volume,
    template: &Sinogram,
    domain: &HollowBall,
    quad: QuadResolution,
    weight_pow: f64,
) -> Result<Sinogram> {
    SurfaceOperator::cylinder(f, template, domain, quad, weight_pow)?.forward(f)
}

pub fn cylinder_adjoint(
    g: &Sinogram,
    template: &Volume,
    domain: &HollowBall,
    quad: QuadResolution,
    weight_pow: f64,
) -> Result<Volume> {
    SurfaceOperator::cylinder(template, g, domain, quad, weight_pow)?.adjoint(g)
}

pub fn spindle_forward(f: &Volume, template: &Sinogram, domain: &HollowBall, quad: QuadResolution) -> Result<Sinogram> {
    SurfaceOperator::spindle(f, template, domain, quad)?.forward(f)
}

pub fn spindle_adjoint(g: &Sinogram, template: &Volume, domain: &HollowBall, quad: QuadResolution) -> Result<Volume> {
    SurfaceOperator::spindle(template, g, domain, quad)?.adjoint(g)
}

/// Harmonic stack of the data, for inspection and the `filter` command.
pub fn sinogram_harmonics(g: &Sinogram, l_max: usize) -> Result<HarmonicStack> {
    g.to_harmonics(l_max)
}
