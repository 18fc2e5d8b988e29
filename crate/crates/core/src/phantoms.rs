//! Test densities: the bead, layered shell and plane phantoms, a smooth
//! radial shell, seeded random blobs, and the even/odd split.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::geometry::{HollowBall, Vec3};
use crate::volume::Volume;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PhantomSpec {
    Bead {
        center: Vec3,
        radius: f64,
        value: f64,
    },
    SphericalShells {
        r0: f64,
        r1: f64,
        n_layers: usize,
        v_low: f64,
        v_high: f64,
        cap_direction: Vec3,
        /// Radians.
        cap_half_angle: f64,
    },
    LayeredPlanes {
        normal: Vec3,
        spacing: f64,
        n_layers: usize,
        v_low: f64,
        v_high: f64,
        box_min: Vec3,
        box_max: Vec3,
    },
    /// Gaussian shell `value · exp(−(|x| − radius)²/(2 width²))`, tapered to
    /// zero at the hollow-ball boundary.
    CustomRadial {
        radius: f64,
        width: f64,
        value: f64,
    },
    /// Sum of seeded Gaussian blobs, tapered to zero at the boundary.
    RandomBandlimited {
        seed: u64,
        n_blobs: usize,
        width: f64,
    },
}

pub const KINDS: [&str; 5] = ["bead", "spherical_shells", "layered_planes", "custom_radial", "random_bandlimited"];

impl PhantomSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Bead { .. } => "bead",
            Self::SphericalShells { .. } => "spherical_shells",
            Self::LayeredPlanes { .. } => "layered_planes",
            Self::CustomRadial { .. } => "custom_radial",
            Self::RandomBandlimited { .. } => "random_bandlimited",
        }
    }

    /// Default geometry of each kind, scaled to the domain's outer radius.
    pub fn default_for(kind: &str, domain: &HollowBall) -> Result<Self> {
        let o = domain.outer;
        let shell_thickness = (0.8 - 0.4) * o / 6.0;
        Ok(match kind {
            "bead" => Self::Bead { center: Vec3::new(0.5 * o, 0.0, 0.0), radius: 0.08 * o, value: 1.0 },
            "spherical_shells" => Self::SphericalShells {
                r0: 0.4 * o,
                r1: 0.8 * o,
                n_layers: 6,
                v_low: 1.0,
                v_high: 2.0,
                cap_direction: Vec3::new(0.0, 0.0, 1.0),
                cap_half_angle: 40f64.to_radians(),
            },
            "layered_planes" => Self::LayeredPlanes {
                normal: Vec3::new(1.0, 0.0, 0.0),
                spacing: shell_thickness,
                n_layers: 6,
                v_low: 1.0,
                v_high: 2.0,
                box_min: Vec3::new(0.3 * o, -0.2 * o, -0.2 * o),
                box_max: Vec3::new(0.7 * o, 0.2 * o, 0.2 * o),
            },
            "custom_radial" => Self::CustomRadial { radius: 0.6 * o, width: 0.05 * o, value: 1.0 },
            "random_bandlimited" => Self::RandomBandlimited { seed: 0, n_blobs: 8, width: 0.12 * o },
            _ => {
                return Err(Error::Config(format!("unknown phantom kind {kind:?} (expected one of {})", KINDS.join(", "))))
            }
        })
    }

    /// Checks that the phantom's support lies inside the hollow ball.
    pub fn validate(&self, domain: &HollowBall) -> Result<()> {
        let (inner, outer) = (domain.inner, domain.outer);
        let fail = |msg: String| Err(Error::Geometry(msg));
        match self {
            Self::Bead { center, radius, value } => {
                if !(*radius > 0.0) || !value.is_finite() || !center.is_finite() {
                    return fail(format!("bead needs a positive radius and finite value, got r={radius}"));
                }
                let c = center.norm();
                if c - radius <= inner || c + radius >= outer {
                    return fail(format!("bead at |c|={c} with r={radius} leaves the shell ({inner}, {outer})"));
                }
            }
            Self::SphericalShells { r0, r1, n_layers, cap_direction, cap_half_angle, .. } => {
                if *n_layers < 2 {
                    return fail(format!("shell phantom needs at least 2 layers, got {n_layers}"));
                }
                if !(inner < *r0 && r0 < r1 && *r1 < outer) {
                    return fail(format!("shell radii ({r0}, {r1}) must lie inside ({inner}, {outer})"));
                }
                if !(cap_direction.norm() > 0.0) || !(*cap_half_angle > 0.0) {
                    return fail("shell cap needs a non-zero direction and positive half-angle".into());
                }
            }
            Self::LayeredPlanes { normal, spacing, n_layers, box_min, box_max, .. } => {
                if *n_layers < 2 || !(*spacing > 0.0) || !(normal.norm() > 0.0) {
                    return fail("plane phantom needs ≥ 2 layers, positive spacing and a non-zero normal".into());
                }
                if !(box_min.x < box_max.x && box_min.y < box_max.y && box_min.z < box_max.z) {
                    return fail("plane phantom box is empty".into());
                }
                let far = Vec3::new(
                    box_min.x.abs().max(box_max.x.abs()),
                    box_min.y.abs().max(box_max.y.abs()),
                    box_min.z.abs().max(box_max.z.abs()),
                );
                let clamp = |lo: f64, hi: f64| if lo > 0.0 { lo } else if hi < 0.0 { -hi } else { 0.0 };
                let near = Vec3::new(
                    clamp(box_min.x, box_max.x),
                    clamp(box_min.y, box_max.y),
                    clamp(box_min.z, box_max.z),
                );
                if far.norm() >= outer || near.norm() <= inner {
                    return fail(format!("plane phantom box leaves the shell ({inner}, {outer})"));
                }
            }
            Self::CustomRadial { radius, width, .. } => {
                if !(inner < *radius && *radius < outer && *width > 0.0) {
                    return fail(format!("radial shell at {radius} (width {width}) must lie inside ({inner}, {outer})"));
                }
            }
            Self::RandomBandlimited { n_blobs, width, .. } => {
                if *n_blobs == 0 || !(*width > 0.0) {
                    return fail("random phantom needs at least one blob and a positive width".into());
                }
            }
        }
        Ok(())
    }

    /// Samples the phantom on `template`'s voxel centres.
    pub fn generate(&self, template: &Volume, domain: &HollowBall) -> Result<Volume> {
        self.validate(domain)?;
        let v = match *self {
            Self::Bead { center, radius, value } => bead(center, radius, value, template),
            Self::SphericalShells { r0, r1, n_layers, v_low, v_high, cap_direction, cap_half_angle } => {
                spherical_shells(r0, r1, n_layers, v_low, v_high, cap_direction, cap_half_angle, template)
            }
            Self::LayeredPlanes { normal, spacing, n_layers, v_low, v_high, box_min, box_max } => {
                layered_planes(normal, spacing, n_layers, v_low, v_high, (box_min, box_max), template)
            }
            Self::CustomRadial { radius, width, value } => {
                let w = taper(domain);
                Volume::from_fn(template, |x| {
                    let d = x.norm() - radius;
                    value * (-0.5 * d * d / (width * width)).exp() * w(x)
                })
            }
            Self::RandomBandlimited { seed, n_blobs, width } => random_bandlimited(seed, n_blobs, width, template, domain),
        };
        Ok(v)
    }

    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        kv.set("kind", self.kind());
        match self {
            Self::Bead { center, radius, value } => {
                kv.set_vec3("center", *center);
                kv.set("radius", radius);
                kv.set("value", value);
            }
            Self::SphericalShells { r0, r1, n_layers, v_low, v_high, cap_direction, cap_half_angle } => {
                kv.set("r0", r0);
                kv.set("r1", r1);
                kv.set("n_layers", n_layers);
                kv.set("v_low", v_low);
                kv.set("v_high", v_high);
                kv.set_vec3("cap_direction", *cap_direction);
                kv.set("cap_half_angle", cap_half_angle);
            }
            Self::LayeredPlanes { normal, spacing, n_layers, v_low, v_high, box_min, box_max } => {
                kv.set_vec3("normal", *normal);
                kv.set("spacing", spacing);
                kv.set("n_layers", n_layers);
                kv.set("v_low", v_low);
                kv.set("v_high", v_high);
                kv.set_vec3("box_min", *box_min);
                kv.set_vec3("box_max", *box_max);
            }
            Self::CustomRadial { radius, width, value } => {
                kv.set("radius", radius);
                kv.set("width", width);
                kv.set("value", value);
            }
            Self::RandomBandlimited { seed, n_blobs, width } => {
                kv.set("seed", seed);
                kv.set("n_blobs", n_blobs);
                kv.set("width", width);
            }
        }
        kv
    }

    /// Reads a spec from key/value pairs; missing keys take the kind's
    /// default for `domain`.
    pub fn from_key_values(kv: &KeyValues, domain: &HollowBall) -> Result<Self> {
        let kind = kv.get("kind").ok_or_else(|| Error::Config("phantom spec needs a kind".into()))?;
        let mut spec = Self::default_for(kind, domain)?;
        match &mut spec {
            Self::Bead { center, radius, value } => {
                kv.update_vec3("center", center)?;
                kv.update("radius", radius)?;
                kv.update("value", value)?;
            }
            Self::SphericalShells { r0, r1, n_layers, v_low, v_high, cap_direction, cap_half_angle } => {
                kv.update("r0", r0)?;
                kv.update("r1", r1)?;
                kv.update("n_layers", n_layers)?;
                kv.update("v_low", v_low)?;
                kv.update("v_high", v_high)?;
                kv.update_vec3("cap_direction", cap_direction)?;
                kv.update("cap_half_angle", cap_half_angle)?;
            }
            Self::LayeredPlanes { normal, spacing, n_layers, v_low, v_high, box_min, box_max } => {
                kv.update_vec3("normal", normal)?;
                kv.update("spacing", spacing)?;
                kv.update("n_layers", n_layers)?;
                kv.update("v_low", v_low)?;
                kv.update("v_high", v_high)?;
                kv.update_vec3("box_min", box_min)?;
                kv.update_vec3("box_max", box_max)?;
            }
            Self::CustomRadial { radius, width, value } => {
                kv.update("radius", radius)?;
                kv.update("width", width)?;
                kv.update("value", value)?;
            }
            Self::RandomBandlimited { seed, n_blobs, width } => {
                kv.update("seed", seed)?;
                kv.update("n_blobs", n_blobs)?;
                kv.update("width", width)?;
            }
        }
        Ok(spec)
    }
}

/// Smooth window vanishing outside the open shell: `sin²` of the normalised
/// radius.
fn taper(domain: &HollowBall) -> impl Fn(Vec3) -> f64 {
    let (inner, outer) = (domain.inner, domain.outer);
    move |x| {
        let r = x.norm();
        if r <= inner || r >= outer {
            0.0
        } else {
            (std::f64::consts::PI * (r - inner) / (outer - inner)).sin().powi(2)
        }
    }
}

/// Indicator of a closed ball, times `value`, at voxel centres.
pub fn bead(center: Vec3, radius: f64, value: f64, template: &Volume) -> Volume {
    Volume::from_fn(template, |x| if (x - center).norm() <= radius { value } else { 0.0 })
}

/// Alternating-value shells of equal thickness between `r0` and `r1`,
/// restricted to the cap within `cap_half_angle` of `cap_direction`.
#[allow(clippy::too_many_arguments)]
pub fn spherical_shells(
    r0: f64,
    r1: f64,
    n_layers: usize,
    v_low: f64,
    v_high: f64,
    cap_direction: Vec3,
    cap_half_angle: f64,
    template: &Volume,
) -> Volume {
    let axis = cap_direction.normalized();
    let cos_cap = cap_half_angle.cos();
    let t = (r1 - r0) / n_layers as f64;
    Volume::from_fn(template, |x| {
        let r = x.norm();
        if r < r0 || r >= r1 || x.dot(axis) < cos_cap * r {
            return 0.0;
        }
        let layer = (((r - r0) / t) as usize).min(n_layers - 1);
        if layer % 2 == 0 {
            v_low
        } else {
            v_high
        }
    })
}

/// Alternating-value slabs orthogonal to `normal`, stacked symmetrically
/// about the centre of the extent box and clipped to it.
pub fn layered_planes(
    normal: Vec3,
    spacing: f64,
    n_layers: usize,
    v_low: f64,
    v_high: f64,
    extent: (Vec3, Vec3),
    template: &Volume,
) -> Volume {
    let n = normal.normalized();
    let (lo, hi) = extent;
    let mid = (lo + hi) * 0.5;
    let start = mid.dot(n) - 0.5 * spacing * n_layers as f64;
    Volume::from_fn(template, |x| {
        let inside = x.x >= lo.x && x.x <= hi.x && x.y >= lo.y && x.y <= hi.y && x.z >= lo.z && x.z <= hi.z;
        if !inside {
            return 0.0;
        }
        let u = (x.dot(n) - start) / spacing;
        if u < 0.0 || u >= n_layers as f64 {
            return 0.0;
        }
        if (u as usize) % 2 == 0 {
            v_low
        } else {
            v_high
        }
    })
}

/// Seeded Gaussian blobs with centres uniform in the shell and amplitudes in
/// `[−1, 1]`, multiplied by a window vanishing at the boundary.
pub fn random_bandlimited(seed: u64, n_blobs: usize, width: f64, template: &Volume, domain: &HollowBall) -> Volume {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blobs: Vec<(Vec3, f64)> = (0..n_blobs)
        .map(|_| {
            let c = loop {
                let p = Vec3::new(
                    rng.random_range(-domain.outer..domain.outer),
                    rng.random_range(-domain.outer..domain.outer),
                    rng.random_range(-domain.outer..domain.outer),
                );
                if domain.contains(p) {
                    break p;
                }
            };
            (c, rng.random_range(-1.0..1.0))
        })
        .collect();
    let w = taper(domain);
    let inv = 0.5 / (width * width);
    Volume::from_fn(template, |x| {
        let wx = w(x);
        if wx == 0.0 {
            return 0.0;
        }
        wx * blobs.iter().map(|(c, a)| a * (-(x - *c).norm_sq() * inv).exp()).sum::<f64>()
    })
}

/// `(f_even, f_odd)` with `f_even(x) = (f(x) + f(−x))/2`.
pub fn odd_even_split(f: &Volume) -> Result<(Volume, Volume)> {
    if !f.is_symmetric() {
        return Err(Error::Geometry("odd/even split needs a grid symmetric about the origin".into()));
    }
    let mut even = f.zeros_like();
    let mut odd = f.zeros_like();
    for i in 0..f.len() {
        let m = f.mirror_index(i);
        even.values[i] = 0.5 * (f.values[i] + f.values[m]);
        odd.values[i] = f.values[i] - even.values[i];
    }
    Ok((even, odd))
}
