use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{HollowBall, Vec3};

/// Scalar density on a regular grid, x-fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Volume {
    pub dims: [usize; 3],
    pub origin: Vec3,
    pub spacing: f64,
    pub values: Vec<f64>,
}

impl Volume {
    pub fn new(dims: [usize; 3], origin: Vec3, spacing: f64) -> Result<Self> {
        if !(spacing > 0.0) || dims.iter().any(|&d| d == 0) {
            return Err(Error::Config(format!("invalid volume grid dims={dims:?} spacing={spacing}")));
        }
        Ok(Self { dims, origin, spacing, values: vec![0.0; dims[0] * dims[1] * dims[2]] })
    }

    /// An `n³` grid of voxel centres symmetric about the origin, covering the
    /// cube `[−half_extent, half_extent]³`.
    pub fn centered(n: usize, half_extent: f64) -> Result<Self> {
        let spacing = 2.0 * half_extent / n as f64;
        let o = -0.5 * (n as f64 - 1.0) * spacing;
        Self::new([n, n, n], Vec3::new(o, o, o), spacing)
    }

    /// Centred grid covering the bounding box of a hollow ball.
    pub fn for_domain(n: usize, domain: &HollowBall) -> Result<Self> {
        Self::centered(n, domain.outer)
    }

    pub fn zeros_like(&self) -> Self {
        Self { values: vec![0.0; self.values.len()], ..self.clone() }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn voxel_volume(&self) -> f64 {
        self.spacing.powi(3)
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn center(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.origin + Vec3::new(i as f64, j as f64, k as f64) * self.spacing
    }

    /// Voxel centres in storage order.
    pub fn centers(&self) -> impl Iterator<Item = Vec3> + '_ {
        let [nx, ny, nz] = self.dims;
        (0..nz).flat_map(move |k| (0..ny).flat_map(move |j| (0..nx).map(move |i| self.center(i, j, k))))
    }

    pub fn from_fn(template: &Volume, mut f: impl FnMut(Vec3) -> f64) -> Self {
        let values = template.centers().map(&mut f).collect();
        Self { values, ..template.clone() }
    }

    /// `⟨a, b⟩ = h³ Σ aᵢbᵢ`.
    pub fn dot(&self, other: &Volume) -> f64 {
        self.voxel_volume() * self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn same_grid(&self, other: &Volume) -> bool {
        self.dims == other.dims && self.origin == other.origin && self.spacing == other.spacing
    }

    /// Whether `x → −x` maps voxel centres onto voxel centres.
    pub fn is_symmetric(&self) -> bool {
        (0..3).all(|a| {
            let o = self.origin.to_array()[a];
            let expected = -0.5 * (self.dims[a] as f64 - 1.0) * self.spacing;
            (o - expected).abs() <= 1e-12 * self.spacing.max(o.abs())
        })
    }

    pub fn mirror_index(&self, idx: usize) -> usize {
        let [nx, ny, nz] = self.dims;
        let i = idx % nx;
        let j = (idx / nx) % ny;
        let k = idx / (nx * ny);
        self.index(nx - 1 - i, ny - 1 - j, nz - 1 - k)
    }

    /// Trilinear stencil at a world point: up to eight `(index, weight)`
    /// pairs. Corners outside the grid are dropped, which treats the volume as
    /// zero outside its sampled box.
    #[inline]
    pub fn stencil(&self, p: Vec3, mut visit: impl FnMut(usize, f64)) {
        let inv = 1.0 / self.spacing;
        let u = [(p.x - self.origin.x) * inv, (p.y - self.origin.y) * inv, (p.z - self.origin.z) * inv];
        let mut base = [0isize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let fl = u[a].floor();
            if !(fl > -2.0 && fl < self.dims[a] as f64) {
                return;
            }
            base[a] = fl as isize;
            frac[a] = u[a] - fl;
        }
        for corner in 0..8usize {
            let mut w = 1.0;
            let mut idx = [0isize; 3];
            let mut inside = true;
            for a in 0..3 {
                let bit = (corner >> a) & 1;
                idx[a] = base[a] + bit as isize;
                if idx[a] < 0 || idx[a] >= self.dims[a] as isize {
                    inside = false;
                    break;
                }
                w *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
            }
            if inside && w != 0.0 {
                visit(self.index(idx[0] as usize, idx[1] as usize, idx[2] as usize), w);
            }
        }
    }

    pub fn sample(&self, p: Vec3) -> f64 {
        let mut acc = 0.0;
        self.stencil(p, |i, w| acc += w * self.values[i]);
        acc
    }

    /// World-space box spanned by the voxel centres.
    pub fn bounds(&self) -> (Vec3, Vec3) {
        let hi = self.center(self.dims[0] - 1, self.dims[1] - 1, self.dims[2] - 1);
        (self.origin, hi)
    }
}
