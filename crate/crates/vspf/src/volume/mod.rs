//! 3D scalar volumes: representation, resampling, smoothing, gradients and
//! the multi-resolution pyramid.
//!
//! Voxel data is stored x-fastest; all geometric quantities are physical
//! (millimetres). Volumes are immutable once built and freely shareable.

pub mod mhd;

use crate::error::{Error, Result};

pub use mhd::{load_volume, save_volume};

/// Dense 3D scalar grid with physical spacing and origin.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub dims: [usize; 3],
    /// mm per voxel along each axis.
    pub spacing: [f64; 3],
    /// Physical position (mm) of the center of voxel (0,0,0).
    pub origin: [f64; 3],
    /// Samples, x-fastest: index = x + dims[0]*(y + dims[1]*z).
    pub data: Vec<f64>,
}

impl Volume {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3], data: Vec<f64>) -> Result<Self> {
        let n = dims[0]
            .checked_mul(dims[1])
            .and_then(|v| v.checked_mul(dims[2]))
            .ok_or_else(|| Error::InvalidVolume("dims overflow".into()))?;
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidVolume("zero dimension".into()));
        }
        if data.len() != n {
            return Err(Error::DataLengthMismatch {
                expected: n,
                actual: data.len(),
            });
        }
        if spacing.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::InvalidVolume(format!("non-positive spacing {spacing:?}")));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteSample(i));
        }
        Ok(Volume {
            dims,
            spacing,
            origin,
            data,
        })
    }

    /// Uniform volume, mainly for tests and phantom scaffolding.
    pub fn constant(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3], value: f64) -> Self {
        let n = dims[0] * dims[1] * dims[2];
        Volume {
            dims,
            spacing,
            origin,
            data: vec![value; n],
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, z: usize) -> f64 {
        self.data[self.index(x, y, z)]
    }

    /// Decomposes a linear index back into (x, y, z).
    #[inline]
    pub fn coords_of(&self, index: usize) -> [usize; 3] {
        let x = index % self.dims[0];
        let rest = index / self.dims[0];
        [x, rest % self.dims[1], rest / self.dims[1]]
    }

    /// Physical position (mm) of a voxel center.
    #[inline]
    pub fn voxel_center(&self, x: usize, y: usize, z: usize) -> [f64; 3] {
        [
            self.origin[0] + x as f64 * self.spacing[0],
            self.origin[1] + y as f64 * self.spacing[1],
            self.origin[2] + z as f64 * self.spacing[2],
        ]
    }

    /// Physical center of the grid (midpoint of the voxel-center bounding box).
    pub fn physical_center(&self) -> [f64; 3] {
        let mut c = [0.0; 3];
        for a in 0..3 {
            c[a] = self.origin[a] + 0.5 * (self.dims[a] - 1) as f64 * self.spacing[a];
        }
        c
    }

    /// Radius (mm) of the sphere bounding the voxel centers around the
    /// physical center. Used to make rotations commensurate with
    /// translations in optimizer scaling.
    pub fn bounding_radius(&self) -> f64 {
        let mut r2 = 0.0;
        for a in 0..3 {
            let half = 0.5 * (self.dims[a] - 1) as f64 * self.spacing[a];
            r2 += half * half;
        }
        r2.sqrt()
    }

    /// Continuous voxel coordinate of a physical point.
    #[inline]
    pub fn to_voxel_coords(&self, point: [f64; 3]) -> [f64; 3] {
        [
            (point[0] - self.origin[0]) / self.spacing[0],
            (point[1] - self.origin[1]) / self.spacing[1],
            (point[2] - self.origin[2]) / self.spacing[2],
        ]
    }

    pub fn min_max(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in &self.data {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }

    /// Tri-cubic (Catmull-Rom) interpolation at a physical point with
    /// clamp-to-edge boundary handling. Returns None outside the voxel-center
    /// bounding box.
    pub fn sample_cubic(&self, point: [f64; 3]) -> Option<f64> {
        let u = self.to_voxel_coords(point);
        for a in 0..3 {
            if !(u[a] >= 0.0 && u[a] <= (self.dims[a] - 1) as f64) {
                return None;
            }
        }
        let mut base = [0i64; 3];
        let mut w = [[0.0f64; 4]; 3];
        for a in 0..3 {
            let b = u[a].floor();
            base[a] = b as i64;
            let f = u[a] - b;
            w[a] = catmull_rom_weights(f);
        }
        let mut acc = 0.0;
        for (kz, &wz) in w[2].iter().enumerate() {
            if wz == 0.0 {
                continue;
            }
            let z = clamp_index(base[2] - 1 + kz as i64, self.dims[2]);
            for (ky, &wy) in w[1].iter().enumerate() {
                if wy == 0.0 {
                    continue;
                }
                let y = clamp_index(base[1] - 1 + ky as i64, self.dims[1]);
                let wyz = wy * wz;
                let row = self.dims[0] * (y + self.dims[1] * z);
                for (kx, &wx) in w[0].iter().enumerate() {
                    if wx == 0.0 {
                        continue;
                    }
                    let x = clamp_index(base[0] - 1 + kx as i64, self.dims[0]);
                    acc += wx * wyz * self.data[row + x];
                }
            }
        }
        Some(acc)
    }
}

#[inline]
fn clamp_index(i: i64, n: usize) -> usize {
    i.clamp(0, n as i64 - 1) as usize
}

/// Catmull-Rom weights (a = -0.5) for the 4 taps around a fractional offset
/// f in [0,1). Exact (0,1,0,0) at f = 0.
#[inline]
fn catmull_rom_weights(f: f64) -> [f64; 4] {
    let f2 = f * f;
    let f3 = f2 * f;
    [
        -0.5 * f3 + f2 - 0.5 * f,
        1.5 * f3 - 2.5 * f2 + 1.0,
        -1.5 * f3 + 2.0 * f2 + 0.5 * f,
        0.5 * f3 - 0.5 * f2,
    ]
}

/// Per-voxel spatial gradient (intensity/mm), same grid as its source volume.
#[derive(Debug, Clone)]
pub struct VectorField {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
    /// 3 components per voxel, voxel-major: [gx, gy, gz, gx, gy, gz, ...].
    pub data: Vec<f64>,
}

impl VectorField {
    #[inline]
    pub fn vector_at(&self, index: usize) -> [f64; 3] {
        let i = 3 * index;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Trilinear interpolation at a physical point; None outside the grid.
    pub fn sample_trilinear(&self, point: [f64; 3]) -> Option<[f64; 3]> {
        let mut u = [0.0; 3];
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            u[a] = (point[a] - self.origin[a]) / self.spacing[a];
            if !(u[a] >= 0.0 && u[a] <= (self.dims[a] - 1) as f64) {
                return None;
            }
            base[a] = (u[a].floor() as usize).min(self.dims[a].saturating_sub(2));
            frac[a] = u[a] - base[a] as f64;
        }
        let stride_y = self.dims[0];
        let stride_z = self.dims[0] * self.dims[1];
        let mut out = [0.0; 3];
        for dz in 0..2 {
            let wz = if dz == 0 { 1.0 - frac[2] } else { frac[2] };
            if wz == 0.0 {
                continue;
            }
            for dy in 0..2 {
                let wy = if dy == 0 { 1.0 - frac[1] } else { frac[1] };
                if wy == 0.0 {
                    continue;
                }
                for dx in 0..2 {
                    let wx = if dx == 0 { 1.0 - frac[0] } else { frac[0] };
                    if wx == 0.0 {
                        continue;
                    }
                    let idx = (base[0] + dx) + stride_y * (base[1] + dy) + stride_z * (base[2] + dz);
                    let w = wx * wy * wz;
                    let v = 3 * idx;
                    out[0] += w * self.data[v];
                    out[1] += w * self.data[v + 1];
                    out[2] += w * self.data[v + 2];
                }
            }
        }
        Some(out)
    }

    /// Per-voxel Euclidean gradient magnitude.
    pub fn magnitudes(&self) -> Vec<f64> {
        self.data
            .chunks_exact(3)
            .map(|g| (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt())
            .collect()
    }
}

/// Multi-resolution pyramid; `levels[0]` is the finest scale (level 1).
#[derive(Debug, Clone)]
pub struct Pyramid {
    pub levels: Vec<Volume>,
}

impl Pyramid {
    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    /// Level by 1-based index (1 = finest).
    pub fn level(&self, k: usize) -> &Volume {
        &self.levels[k - 1]
    }
}

/// Resamples to an isotropic grid at `target_spacing` mm via separable cubic
/// (Catmull-Rom) interpolation, anchored at the source origin. The physical
/// extent is preserved to within one output voxel.
pub fn resample_isotropic(vol: &Volume, target_spacing: f64) -> Result<Volume> {
    resample_isotropic_anchored(vol, target_spacing, false)
}

/// As `resample_isotropic`, but centers the output grid inside the source
/// extent so any trimmed margin splits evenly between opposite faces.
pub fn resample_isotropic_centered(vol: &Volume, target_spacing: f64) -> Result<Volume> {
    resample_isotropic_anchored(vol, target_spacing, true)
}

fn resample_isotropic_anchored(vol: &Volume, target_spacing: f64, centered: bool) -> Result<Volume> {
    if !(target_spacing > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "target spacing must be positive, got {target_spacing}"
        )));
    }
    let mut dims = [0usize; 3];
    let mut origin = vol.origin;
    for a in 0..3 {
        let extent = (vol.dims[a] - 1) as f64 * vol.spacing[a];
        dims[a] = (extent / target_spacing).floor() as usize + 1;
        if dims[a] < 2 {
            return Err(Error::InvalidVolume(format!(
                "degenerate output dims along axis {a}: {}",
                dims[a]
            )));
        }
        if centered {
            origin[a] += 0.5 * (extent - (dims[a] - 1) as f64 * target_spacing);
        }
    }
    let spacing = [target_spacing; 3];
    let mut data = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let p = [
                    origin[0] + x as f64 * target_spacing,
                    origin[1] + y as f64 * target_spacing,
                    origin[2] + z as f64 * target_spacing,
                ];
                // In-extent by construction of dims.
                data.push(vol.sample_cubic(p).unwrap_or(0.0));
            }
        }
    }
    Volume::new(dims, spacing, origin, data)
}

/// Separable Gaussian smoothing with per-axis sigma in mm. Kernel radius is
/// ceil(3 sigma / spacing) per axis, renormalized to sum 1, clamp-to-edge.
pub fn gaussian_smooth_anisotropic(vol: &Volume, sigma_mm: [f64; 3]) -> Volume {
    let mut out = vol.clone();
    for axis in 0..3 {
        let sigma = sigma_mm[axis];
        if sigma <= 0.0 {
            continue;
        }
        let radius = (3.0 * sigma / vol.spacing[axis]).ceil() as i64;
        if radius == 0 {
            continue;
        }
        let mut kernel = Vec::with_capacity(2 * radius as usize + 1);
        let mut sum = 0.0;
        for k in -radius..=radius {
            let d = k as f64 * vol.spacing[axis];
            let w = (-0.5 * d * d / (sigma * sigma)).exp();
            kernel.push(w);
            sum += w;
        }
        for w in &mut kernel {
            *w /= sum;
        }
        out = convolve_axis(&out, axis, &kernel, radius);
    }
    out
}

/// Isotropic Gaussian smoothing; sigma = 0 returns a copy.
pub fn gaussian_smooth(vol: &Volume, sigma: f64) -> Volume {
    gaussian_smooth_anisotropic(vol, [sigma; 3])
}

fn convolve_axis(vol: &Volume, axis: usize, kernel: &[f64], radius: i64) -> Volume {
    let dims = vol.dims;
    let mut data = vec![0.0; vol.len()];
    let stride = match axis {
        0 => 1,
        1 => dims[0],
        _ => dims[0] * dims[1],
    };
    let n_axis = dims[axis] as i64;
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let idx = vol.index(x, y, z);
                let pos = [x as i64, y as i64, z as i64][axis];
                let line_start = idx - pos as usize * stride;
                let mut acc = 0.0;
                for (k, &w) in kernel.iter().enumerate() {
                    let q = (pos + k as i64 - radius).clamp(0, n_axis - 1) as usize;
                    acc += w * vol.data[line_start + q * stride];
                }
                data[idx] = acc;
            }
        }
    }
    Volume {
        dims,
        spacing: vol.spacing,
        origin: vol.origin,
        data,
    }
}

/// Central differences in the interior, one-sided at the boundaries,
/// divided by spacing (intensity/mm).
pub fn spatial_gradient(vol: &Volume) -> Result<VectorField> {
    if vol.dims.iter().any(|&d| d < 2) {
        return Err(Error::InvalidVolume(
            "spatial gradient needs at least 2 voxels per axis".into(),
        ));
    }
    let dims = vol.dims;
    let mut data = vec![0.0; vol.len() * 3];
    let strides = [1usize, dims[0], dims[0] * dims[1]];
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let idx = vol.index(x, y, z);
                let pos = [x, y, z];
                for a in 0..3 {
                    let s = strides[a];
                    let n = dims[a];
                    let p = pos[a];
                    let g = if p == 0 {
                        (vol.data[idx + s] - vol.data[idx]) / vol.spacing[a]
                    } else if p == n - 1 {
                        (vol.data[idx] - vol.data[idx - s]) / vol.spacing[a]
                    } else {
                        (vol.data[idx + s] - vol.data[idx - s]) / (2.0 * vol.spacing[a])
                    };
                    data[3 * idx + a] = g;
                }
            }
        }
    }
    Ok(VectorField {
        dims,
        spacing: vol.spacing,
        origin: vol.origin,
        data,
    })
}

/// K-level pyramid: level 1 is the input; each coarser level smooths with
/// sigma = 0.8 * spacing per axis and keeps every second voxel.
pub fn build_pyramid(vol: &Volume, levels: usize) -> Result<Pyramid> {
    if levels == 0 {
        return Err(Error::InvalidArgument("pyramid needs at least one level".into()));
    }
    // Coarsest level must keep every axis at >= 4 voxels.
    for a in 0..3 {
        let mut d = vol.dims[a];
        for _ in 1..levels {
            d = d.div_ceil(2);
        }
        if d < 4 {
            return Err(Error::InvalidArgument(format!(
                "{levels} pyramid levels would shrink axis {a} below 4 voxels"
            )));
        }
    }
    let mut out = Vec::with_capacity(levels);
    out.push(vol.clone());
    for _ in 1..levels {
        let prev = out.last().unwrap();
        let sigma = [
            0.8 * prev.spacing[0],
            0.8 * prev.spacing[1],
            0.8 * prev.spacing[2],
        ];
        let smoothed = gaussian_smooth_anisotropic(prev, sigma);
        let dims = [
            prev.dims[0].div_ceil(2),
            prev.dims[1].div_ceil(2),
            prev.dims[2].div_ceil(2),
        ];
        let spacing = [
            prev.spacing[0] * 2.0,
            prev.spacing[1] * 2.0,
            prev.spacing[2] * 2.0,
        ];
        let mut data = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    data.push(smoothed.at(2 * x, 2 * y, 2 * z));
                }
            }
        }
        out.push(Volume {
            dims,
            spacing,
            origin: prev.origin,
            data,
        });
    }
    Ok(Pyramid { levels: out })
}
