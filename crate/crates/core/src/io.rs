//! File formats. Volumes, sinograms and harmonic stacks are an 8-byte magic,
//! one ASCII header line, then little-endian `f64` payload:
//!
//! * `SPNVOL1\n`, `nx ny nz ox oy oz spacing\n`, values x-fastest.
//! * `SPNSIN1\n`, `ns nlat nlon\n`, the `s` values, colatitudes, latitude
//!   weights and longitudes, then values (s, lat, lon).
//! * `SPNHRM1\n`, `ns L\n`, per slice the `(re, im)` pairs for `m ≥ 0` in
//!   `(l, m)` order; negative orders follow from the real-symmetry relation.
//!
//! Images are binary 16-bit PGM (big-endian samples), profiles are CSV.

use std::fs;
use std::io::Write;
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::harmonics::{HarmonicCoeffs, HarmonicStack, SphereGrid};
use crate::operators::Sinogram;
use crate::volume::Volume;

pub const VOLUME_MAGIC: &[u8; 8] = b"SPNVOL1\n";
pub const SINOGRAM_MAGIC: &[u8; 8] = b"SPNSIN1\n";
pub const HARMONIC_MAGIC: &[u8; 8] = b"SPNHRM1\n";

fn push_f64s(buf: &mut Vec<u8>, values: &[f64]) {
    buf.reserve(values.len() * 8);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(bytes)?;
    f.flush()?;
    Ok(())
}

/// Splits a file into its header fields and payload after checking the magic.
fn split_header<'a>(bytes: &'a [u8], magic: &[u8; 8]) -> Result<(Vec<&'a str>, &'a [u8])> {
    if bytes.len() < 8 || &bytes[..8] != magic {
        let n = bytes.len().min(8);
        return Err(Error::Magic {
            expected: String::from_utf8_lossy(magic).into_owned(),
            found: String::from_utf8_lossy(&bytes[..n]).into_owned(),
        });
    }
    let rest = &bytes[8..];
    let nl = rest.iter().position(|&b| b == b'\n').ok_or_else(|| Error::Header("missing header line".into()))?;
    let line = std::str::from_utf8(&rest[..nl]).map_err(|_| Error::Header("header is not UTF-8".into()))?;
    Ok((line.split_whitespace().collect(), &rest[nl + 1..]))
}

fn field<T: std::str::FromStr>(fields: &[&str], i: usize, name: &str) -> Result<T> {
    fields
        .get(i)
        .ok_or_else(|| Error::Header(format!("missing field {name}")))?
        .parse()
        .map_err(|_| Error::Header(format!("invalid {name}: {:?}", fields[i])))
}

fn expect_fields(fields: &[&str], n: usize) -> Result<()> {
    if fields.len() != n {
        return Err(Error::Header(format!("expected {n} header fields, found {}", fields.len())));
    }
    Ok(())
}

fn read_f64s(payload: &[u8], count: usize) -> Result<Vec<f64>> {
    let expected = count.checked_mul(8).ok_or_else(|| Error::Header("declared size overflows".into()))?;
    if payload.len() != expected {
        return Err(Error::Length { expected, found: payload.len() });
    }
    Ok(payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect())
}

pub fn volume_to_bytes(v: &Volume) -> Vec<u8> {
    let mut buf = VOLUME_MAGIC.to_vec();
    let [nx, ny, nz] = v.dims;
    buf.extend_from_slice(
        format!("{nx} {ny} {nz} {} {} {} {}\n", v.origin.x, v.origin.y, v.origin.z, v.spacing).as_bytes(),
    );
    push_f64s(&mut buf, &v.values);
    buf
}

pub fn volume_from_bytes(bytes: &[u8]) -> Result<Volume> {
    let (h, payload) = split_header(bytes, VOLUME_MAGIC)?;
    expect_fields(&h, 7)?;
    let dims = [field(&h, 0, "nx")?, field(&h, 1, "ny")?, field(&h, 2, "nz")?];
    let origin = Vec3::new(field(&h, 3, "ox")?, field(&h, 4, "oy")?, field(&h, 5, "oz")?);
    let spacing: f64 = field(&h, 6, "spacing")?;
    let mut v = Volume::new(dims, origin, spacing).map_err(|e| Error::Header(e.to_string()))?;
    v.values = read_f64s(payload, v.len())?;
    Ok(v)
}

pub fn write_volume(v: &Volume, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &volume_to_bytes(v))
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume> {
    volume_from_bytes(&fs::read(path)?)
}

pub fn sinogram_to_bytes(g: &Sinogram) -> Vec<u8> {
    let mut buf = SINOGRAM_MAGIC.to_vec();
    buf.extend_from_slice(format!("{} {} {}\n", g.n_s(), g.grid.n_lat, g.grid.n_lon).as_bytes());
    push_f64s(&mut buf, &g.s_values);
    push_f64s(&mut buf, &g.grid.colatitudes);
    push_f64s(&mut buf, &g.grid.quad_weights);
    push_f64s(&mut buf, &g.grid.longitudes);
    push_f64s(&mut buf, &g.values);
    buf
}

pub fn sinogram_from_bytes(bytes: &[u8]) -> Result<Sinogram> {
    let (h, payload) = split_header(bytes, SINOGRAM_MAGIC)?;
    expect_fields(&h, 3)?;
    let (ns, nlat, nlon): (usize, usize, usize) = (field(&h, 0, "ns")?, field(&h, 1, "nlat")?, field(&h, 2, "nlon")?);
    let count = ns
        .checked_mul(nlat)
        .and_then(|v| v.checked_mul(nlon))
        .and_then(|v| v.checked_add(ns + 2 * nlat + nlon))
        .ok_or_else(|| Error::Header("declared size overflows".into()))?;
    let all = read_f64s(payload, count)?;
    let (s, rest) = all.split_at(ns);
    let (colat, rest) = rest.split_at(nlat);
    let (weights, rest) = rest.split_at(nlat);
    let (lon, values) = rest.split_at(nlon);
    let grid = SphereGrid::from_parts(colat.to_vec(), lon.to_vec(), weights.to_vec())
        .map_err(|e| Error::Header(e.to_string()))?;
    let mut g = Sinogram::zeros(s.to_vec(), grid).map_err(|e| Error::Header(e.to_string()))?;
    g.values = values.to_vec();
    Ok(g)
}

pub fn write_sinogram(g: &Sinogram, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &sinogram_to_bytes(g))
}

pub fn read_sinogram(path: impl AsRef<Path>) -> Result<Sinogram> {
    sinogram_from_bytes(&fs::read(path)?)
}

pub fn harmonics_to_bytes(stack: &HarmonicStack) -> Vec<u8> {
    let mut buf = HARMONIC_MAGIC.to_vec();
    buf.extend_from_slice(format!("{} {}\n", stack.n_s(), stack.l_max).as_bytes());
    for c in &stack.slices {
        for l in 0..=stack.l_max {
            for m in 0..=l as i64 {
                let v = c.get(l, m);
                push_f64s(&mut buf, &[v.re, v.im]);
            }
        }
    }
    buf
}

pub fn harmonics_from_bytes(bytes: &[u8]) -> Result<HarmonicStack> {
    let (h, payload) = split_header(bytes, HARMONIC_MAGIC)?;
    expect_fields(&h, 2)?;
    let (ns, l_max): (usize, usize) = (field(&h, 0, "ns")?, field(&h, 1, "L")?);
    let per = (l_max + 1) * (l_max + 2) / 2;
    let all = read_f64s(payload, ns * per * 2)?;
    let mut slices = Vec::with_capacity(ns);
    for chunk in all.chunks_exact(per * 2) {
        let mut c = HarmonicCoeffs::zeros(l_max);
        let mut it = chunk.chunks_exact(2);
        for l in 0..=l_max {
            for m in 0..=l as i64 {
                let p = it.next().expect("chunk sized to the packed count");
                let v = Complex64::new(p[0], p[1]);
                c.set(l, m, v);
                if m > 0 {
                    let sign = if m % 2 == 1 { -1.0 } else { 1.0 };
                    c.set(l, -m, v.conj() * sign);
                }
            }
        }
        slices.push(c);
    }
    Ok(HarmonicStack { l_max, slices })
}

pub fn write_harmonics(stack: &HarmonicStack, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &harmonics_to_bytes(stack))
}

pub fn read_harmonics(path: impl AsRef<Path>) -> Result<HarmonicStack> {
    harmonics_from_bytes(&fs::read(path)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl std::str::FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "x" => Ok(Self::X),
            "y" => Ok(Self::Y),
            "z" => Ok(Self::Z),
            _ => Err(Error::Config(format!("axis must be x, y or z, got {s:?}"))),
        }
    }
}

/// 16-bit grey image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image16 {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u16>,
}

/// Maximum-intensity projection along `axis`, min–max scaled to
/// `0..=65535`. Columns follow the first remaining axis and rows the second
/// (`x`: `(y, z)`, `y`: `(x, z)`, `z`: `(x, y)`). A constant projection maps
/// to zeros.
pub fn mip(v: &Volume, axis: Axis) -> Image16 {
    let [nx, ny, nz] = v.dims;
    let (w, h, depth) = match axis {
        Axis::X => (ny, nz, nx),
        Axis::Y => (nx, nz, ny),
        Axis::Z => (nx, ny, nz),
    };
    let mut proj = vec![f64::NEG_INFINITY; w * h];
    for r in 0..h {
        for c in 0..w {
            let mut best = f64::NEG_INFINITY;
            for d in 0..depth {
                let (i, j, k) = match axis {
                    Axis::X => (d, c, r),
                    Axis::Y => (c, d, r),
                    Axis::Z => (c, r, d),
                };
                best = best.max(v.values[v.index(i, j, k)]);
            }
            proj[r * w + c] = best;
        }
    }
    let lo = proj.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = proj.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let pixels = proj
        .iter()
        .map(|p| if hi > lo { ((p - lo) / (hi - lo) * 65535.0).round() as u16 } else { 0 })
        .collect();
    Image16 { width: w, height: h, pixels }
}

pub fn pgm_bytes(img: &Image16) -> Vec<u8> {
    let mut buf = format!("P5\n{} {}\n65535\n", img.width, img.height).into_bytes();
    for p in &img.pixels {
        buf.extend_from_slice(&p.to_be_bytes());
    }
    buf
}

pub fn write_mip(v: &Volume, axis: Axis, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &pgm_bytes(&mip(v, axis)))
}

/// `n` trilinear samples along the segment `start → end`, each divided by the
/// largest absolute sample. Returns `(t, value)` with `t ∈ [0, 1]`.
pub fn profile(v: &Volume, start: Vec3, end: Vec3, n: usize) -> Result<Vec<(f64, f64)>> {
    if n < 2 {
        return Err(Error::Config("a profile needs at least two samples".into()));
    }
    let (lo, hi) = v.bounds();
    let inside = |p: Vec3| {
        let tol = 1e-9 * v.spacing;
        p.x >= lo.x - tol && p.y >= lo.y - tol && p.z >= lo.z - tol && p.x <= hi.x + tol && p.y <= hi.y + tol && p.z <= hi.z + tol
    };
    if !inside(start) || !inside(end) {
        return Err(Error::Geometry("profile line leaves the volume grid".into()));
    }
    let samples: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let t = i as f64 / (n - 1) as f64;
            (t, v.sample(start + (end - start) * t))
        })
        .collect();
    let peak = samples.iter().fold(0.0f64, |m, s| m.max(s.1.abs()));
    Ok(samples.into_iter().map(|(t, s)| (t, if peak > 0.0 { s / peak } else { 0.0 })).collect())
}

pub fn write_profile(v: &Volume, start: Vec3, end: Vec3, n: usize, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from("t,value\n");
    for (t, s) in profile(v, start, end, n)? {
        out.push_str(&format!("{t},{s}\n"));
    }
    write_file(path.as_ref(), out.as_bytes())
}
