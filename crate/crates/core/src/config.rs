//! Flat `key = value` configuration text and the run configuration with its
//! defaults table.
//!
//! | key              | default      | meaning                                        |
//! |------------------|--------------|------------------------------------------------|
//! | `transform`      | `spindle`    | `spindle` or `cylinder`                        |
//! | `inner`, `outer` | `0.1`, `0.9` | spindle-domain shell radii                     |
//! | `grid_n`         | `64`         | voxels per axis                                |
//! | `sphere_l`       | `25`         | sphere grid resolves degree `L`: `(L+1)×(2L+2)` |
//! | `n_s`            | `32`         | number of `s` samples                          |
//! | `quad_n_phi`     | `2·grid_n`   | nodes around each cylinder                     |
//! | `quad_n_z`       | `2·grid_n`   | nodes along each axial band                    |
//! | `weight_pow`     | `0.5`        | cylinder weight exponent on `|∇h|`             |
//! | `method`         | `bp`         | `bp`, `fbp`, `cgls`, `landweber`               |
//! | `max_iters`      | 50 / 2000    | CGLS / Landweber                               |
//! | `tol`            | `1e-6`       | relative normal-equation residual              |
//! | `tikhonov_mu`    | `auto`       | `0.01·σ_max`                                   |
//! | `landweber_step` | `auto`       | `1/σ_max²`, `σ_max` from 20 power iterations   |
//! | `precondition`   | `false`      | solve with `Q^{1/2}` applied to the data side  |
//! | `filter_l`       | `25`         | band limit of `Q` in `fbp` and preconditioning |
//! | `noise`          | `0`          | noise std as a fraction of the data RMS        |
//! | `seed`           | `0`          | noise and power-iteration seed                 |
//!
//! The cylinder transform runs on the image of the spindle shell under the
//! inverse radial map, so `inner` and `outer` always describe the spindle
//! domain.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{HollowBall, Vec3};
use crate::harmonics::SphereGrid;
use crate::operators::{spindle_s_grid, uniform_s_grid, QuadResolution, Sinogram, SurfaceOperator, Transform};
use crate::solvers::{Method, Param, SolverConfig};
use crate::volume::Volume;

/// Ordered `key = value` pairs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KeyValues(pub BTreeMap<String, String>);

impl KeyValues {
    /// Parses `key = value` lines; `#` starts a comment, blank lines are
    /// skipped, duplicate keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse { line: n + 1, msg: format!("expected `key = value`, got {line:?}") })?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() || k.contains(char::is_whitespace) {
                return Err(Error::Parse { line: n + 1, msg: format!("invalid key {k:?}") });
            }
            if map.insert(k.to_string(), v.to_string()).is_some() {
                return Err(Error::Parse { line: n + 1, msg: format!("duplicate key {k:?}") });
            }
        }
        Ok(Self(map))
    }

    pub fn to_text(&self) -> String {
        self.0.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        self.0.insert(key.to_string(), value.to_string());
    }

    pub fn set_vec3(&mut self, key: &str, v: Vec3) {
        self.set(key, format!("{},{},{}", v.x, v.y, v.z));
    }

    pub fn parse_value<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<T>()
                .map(Some)
                .map_err(|_| Error::Config(format!("invalid value {v:?} for key {key:?}"))),
        }
    }

    /// Overwrites `target` when the key is present.
    pub fn update<T: FromStr>(&self, key: &str, target: &mut T) -> Result<()> {
        if let Some(v) = self.parse_value(key)? {
            *target = v;
        }
        Ok(())
    }

    pub fn update_vec3(&self, key: &str, target: &mut Vec3) -> Result<()> {
        if let Some(v) = self.get(key) {
            *target = parse_vec3(v).map_err(|_| Error::Config(format!("invalid vector {v:?} for key {key:?}")))?;
        }
        Ok(())
    }

    /// Errors on any key outside `allowed`.
    pub fn reject_unknown(&self, allowed: &[&str]) -> Result<()> {
        match self.0.keys().find(|k| !allowed.contains(&k.as_str())) {
            Some(k) => Err(Error::Config(format!("unknown key {k:?}"))),
            None => Ok(()),
        }
    }

    pub fn merge(&mut self, other: &KeyValues) {
        for (k, v) in &other.0 {
            self.0.insert(k.clone(), v.clone());
        }
    }
}

/// `"x,y,z"` to a vector.
pub fn parse_vec3(s: &str) -> Result<Vec3> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(Error::Config(format!("expected three comma-separated numbers, got {s:?}")));
    }
    let mut out = [0.0; 3];
    for (o, p) in out.iter_mut().zip(&parts) {
        *o = p.parse().map_err(|_| Error::Config(format!("invalid number {p:?} in {s:?}")))?;
    }
    Ok(Vec3::from_array(out))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub transform: Transform,
    pub inner: f64,
    pub outer: f64,
    pub grid_n: usize,
    pub sphere_l: usize,
    pub n_s: usize,
    /// Zero selects `2·grid_n`.
    pub quad_n_phi: usize,
    pub quad_n_z: usize,
    pub weight_pow: f64,
    pub solver: SolverConfig,
    pub noise: f64,
}

pub const RUN_KEYS: [&str; 19] = [
    "transform",
    "inner",
    "outer",
    "grid_n",
    "sphere_l",
    "n_s",
    "quad_n_phi",
    "quad_n_z",
    "weight_pow",
    "method",
    "max_iters",
    "tol",
    "tikhonov_mu",
    "landweber_step",
    "precondition",
    "filter_l",
    "noise",
    "seed",
    "threads",
];

impl Default for RunConfig {
    fn default() -> Self {
        let d = HollowBall::default();
        Self {
            transform: Transform::Spindle,
            inner: d.inner,
            outer: d.outer,
            grid_n: 64,
            sphere_l: 25,
            n_s: 32,
            quad_n_phi: 0,
            quad_n_z: 0,
            weight_pow: 0.5,
            solver: SolverConfig::new(Method::Bp),
            noise: 0.0,
        }
    }
}

impl RunConfig {
    /// Spindle-domain shell.
    pub fn spindle_domain(&self) -> Result<HollowBall> {
        HollowBall::spindle(self.inner, self.outer)
    }

    /// Shell on which the configured transform's volume lives.
    pub fn domain(&self) -> Result<HollowBall> {
        let d = self.spindle_domain()?;
        Ok(match self.transform {
            Transform::Spindle => d,
            Transform::Cylinder => d.to_cylinder(),
        })
    }

    pub fn quad(&self) -> QuadResolution {
        let auto = QuadResolution::for_grid(self.grid_n);
        QuadResolution {
            n_phi: if self.quad_n_phi == 0 { auto.n_phi } else { self.quad_n_phi },
            n_z: if self.quad_n_z == 0 { auto.n_z } else { self.quad_n_z },
        }
    }

    pub fn volume_template(&self) -> Result<Volume> {
        Volume::for_domain(self.grid_n, &self.domain()?)
    }

    pub fn sinogram_template(&self) -> Result<Sinogram> {
        let d = self.domain()?;
        let s = match self.transform {
            Transform::Spindle => spindle_s_grid(&d, self.n_s)?,
            Transform::Cylinder => uniform_s_grid(&d, self.n_s)?,
        };
        Sinogram::zeros(s, SphereGrid::for_band_limit(self.sphere_l)?)
    }

    /// Operator on explicit layouts, e.g. those read from files.
    pub fn operator_for(&self, volume: &Volume, sinogram: &Sinogram) -> Result<SurfaceOperator> {
        let d = self.domain()?;
        match self.transform {
            Transform::Spindle => SurfaceOperator::spindle(volume, sinogram, &d, self.quad()),
            Transform::Cylinder => SurfaceOperator::cylinder(volume, sinogram, &d, self.quad(), self.weight_pow),
        }
    }

    pub fn operator(&self) -> Result<SurfaceOperator> {
        self.operator_for(&self.volume_template()?, &self.sinogram_template()?)
    }

    pub fn validate(&self) -> Result<()> {
        self.spindle_domain()?;
        if self.grid_n < 2 || self.n_s == 0 || self.sphere_l == 0 {
            return Err(Error::Config("grid_n ≥ 2, n_s ≥ 1 and sphere_l ≥ 1 are required".into()));
        }
        if !(self.weight_pow == 0.5 || self.weight_pow == 1.0) {
            return Err(Error::Config(format!("weight_pow must be 0.5 or 1, got {}", self.weight_pow)));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config(format!("noise must be non-negative, got {}", self.noise)));
        }
        self.solver.validate()
    }

    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        kv.set(
            "transform",
            match self.transform {
                Transform::Spindle => "spindle",
                Transform::Cylinder => "cylinder",
            },
        );
        kv.set("inner", self.inner);
        kv.set("outer", self.outer);
        kv.set("grid_n", self.grid_n);
        kv.set("sphere_l", self.sphere_l);
        kv.set("n_s", self.n_s);
        let q = self.quad();
        kv.set("quad_n_phi", q.n_phi);
        kv.set("quad_n_z", q.n_z);
        kv.set("weight_pow", self.weight_pow);
        kv.set("method", self.solver.method);
        kv.set("max_iters", self.solver.max_iters);
        kv.set("tol", self.solver.tol);
        kv.set("tikhonov_mu", self.solver.tikhonov_mu);
        kv.set("landweber_step", self.solver.landweber_step);
        kv.set("precondition", self.solver.precondition);
        kv.set("filter_l", self.solver.harmonic_l);
        kv.set("noise", self.noise);
        kv.set("seed", self.solver.seed);
        kv
    }

    /// Defaults overridden by the given pairs. A `method` key also resets
    /// `max_iters` to that method's default unless `max_iters` is given.
    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        kv.reject_unknown(&RUN_KEYS)?;
        let mut c = Self::default();
        kv.update("transform", &mut c.transform)?;
        kv.update("inner", &mut c.inner)?;
        kv.update("outer", &mut c.outer)?;
        kv.update("grid_n", &mut c.grid_n)?;
        kv.update("sphere_l", &mut c.sphere_l)?;
        kv.update("n_s", &mut c.n_s)?;
        kv.update("quad_n_phi", &mut c.quad_n_phi)?;
        kv.update("quad_n_z", &mut c.quad_n_z)?;
        kv.update("weight_pow", &mut c.weight_pow)?;
        if let Some(m) = kv.parse_value::<Method>("method")? {
            c.solver = SolverConfig::new(m);
        }
        kv.update("max_iters", &mut c.solver.max_iters)?;
        kv.update("tol", &mut c.solver.tol)?;
        kv.update::<Param>("tikhonov_mu", &mut c.solver.tikhonov_mu)?;
        kv.update::<Param>("landweber_step", &mut c.solver.landweber_step)?;
        kv.update("precondition", &mut c.solver.precondition)?;
        kv.update("filter_l", &mut c.solver.harmonic_l)?;
        kv.update("noise", &mut c.noise)?;
        kv.update("seed", &mut c.solver.seed)?;
        c.validate()?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_comments_blank_lines_and_errors() {
        let kv = KeyValues::parse("# header\n\nalpha = 1.5  # trailing\nname=bead\n").unwrap();
        assert_eq!(kv.get("alpha"), Some("1.5"));
        assert_eq!(kv.get("name"), Some("bead"));
        assert!(matches!(KeyValues::parse("a = 1\nnot a pair\n"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(KeyValues::parse("a = 1\na = 2\n"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(KeyValues::parse("bad key = 1\n"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn text_round_trip() {
        let mut kv = KeyValues::default();
        kv.set("x", 0.1 + 0.2);
        kv.set_vec3("v", Vec3::new(1e-300, -2.5, 3.0));
        let back = KeyValues::parse(&kv.to_text()).unwrap();
        assert_eq!(kv, back);
        let mut v = Vec3::ZERO;
        back.update_vec3("v", &mut v).unwrap();
        assert_eq!(v, Vec3::new(1e-300, -2.5, 3.0));
        let mut x = 0.0f64;
        back.update("x", &mut x).unwrap();
        assert_eq!(x, 0.1 + 0.2);
    }

    #[test]
    fn run_config_round_trip_and_validation() {
        let c = RunConfig::default();
        let back = RunConfig::from_key_values(&c.to_key_values()).unwrap();
        assert_eq!(back.to_key_values(), c.to_key_values());
        let kv = KeyValues::parse("method = landweber\n").unwrap();
        assert_eq!(RunConfig::from_key_values(&kv).unwrap().solver.max_iters, 2000);
        for bad in ["bogus = 1", "weight_pow = 0.7", "inner = 0.95", "method = art", "tol = 0"] {
            assert!(RunConfig::from_key_values(&KeyValues::parse(bad).unwrap()).is_err(), "{bad}");
        }
    }

    #[test]
    fn cylinder_run_uses_mapped_shell() {
        let kv = KeyValues::parse("transform = cylinder\ngrid_n = 8\nsphere_l = 2\nn_s = 3").unwrap();
        let c = RunConfig::from_key_values(&kv).unwrap();
        let d = c.domain().unwrap();
        assert!((d.outer - 2.0 * 0.9 / 0.19).abs() < 1e-12);
        let op = c.operator().unwrap();
        assert_eq!(op.sinogram_template().n_s(), 3);
    }
}
