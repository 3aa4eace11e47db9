//! Binary pore-space volumes: loading, cropping, porosity and synthetic test shapes.
//!
//! On disk a volume is a dense 8-bit `.raw` file plus a JSON sidecar
//! `{nx, ny, nz, resolution_um, pore_value}`. Bytes are stored x-fastest
//! (x, then y, then z). Every byte equal to `pore_value` is pore, anything
//! else is solid.

use std::collections::VecDeque;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A segmented 3D image. `true` voxels are pore space.
#[derive(Clone, Debug, PartialEq)]
pub struct VolumeImage {
    dims: [usize; 3],
    resolution: f64,
    voxels: Vec<bool>,
}

impl VolumeImage {
    pub fn new(dims: [usize; 3], resolution: f64, voxels: Vec<bool>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::input(format!("volume dims must be >= 1, got {dims:?}")));
        }
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(Error::input(format!("resolution must be > 0, got {resolution}")));
        }
        let len = dims[0] * dims[1] * dims[2];
        if voxels.len() != len {
            return Err(Error::input(format!(
                "voxel buffer has {} entries, dims {dims:?} need {len}",
                voxels.len()
            )));
        }
        Ok(Self {
            dims,
            resolution,
            voxels,
        })
    }

    /// All-solid volume.
    pub fn solid(dims: [usize; 3], resolution: f64) -> Result<Self> {
        let len = dims.iter().product();
        Self::new(dims, resolution, vec![false; len])
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    /// Voxel edge length in micrometers.
    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    pub fn voxels(&self) -> &[bool] {
        &self.voxels
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let [nx, ny, _] = self.dims;
        [idx % nx, (idx / nx) % ny, idx / (nx * ny)]
    }

    #[inline]
    pub fn is_pore(&self, x: usize, y: usize, z: usize) -> bool {
        self.voxels[self.index(x, y, z)]
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, pore: bool) {
        let i = self.index(x, y, z);
        self.voxels[i] = pore;
    }

    pub fn pore_count(&self) -> usize {
        self.voxels.iter().filter(|&&v| v).count()
    }

    /// Fraction of pore voxels.
    pub fn porosity(&self) -> f64 {
        self.pore_count() as f64 / self.len() as f64
    }

    /// Physical center of a voxel in micrometers, with the image corner at the origin.
    pub fn voxel_center(&self, x: usize, y: usize, z: usize) -> [f64; 3] {
        let h = self.resolution;
        [(x as f64 + 0.5) * h, (y as f64 + 0.5) * h, (z as f64 + 0.5) * h]
    }

    pub fn crop(&self, region: &CropRegion) -> Result<VolumeImage> {
        region.check(self.dims)?;
        let out_dims = region.dims();
        let mut voxels = Vec::with_capacity(out_dims.iter().product());
        for z in region.lo[2]..region.hi[2] {
            for y in region.lo[1]..region.hi[1] {
                let row = self.index(region.lo[0], y, z);
                voxels.extend_from_slice(&self.voxels[row..row + out_dims[0]]);
            }
        }
        VolumeImage::new(out_dims, self.resolution, voxels)
    }

    /// Labels 6-connected pore components. Solid voxels get `None`.
    pub fn pore_components(&self) -> (Vec<Option<usize>>, usize) {
        let [nx, ny, nz] = self.dims;
        let mut labels = vec![None; self.len()];
        let mut count = 0;
        let mut queue = VecDeque::new();
        for start in 0..self.len() {
            if !self.voxels[start] || labels[start].is_some() {
                continue;
            }
            labels[start] = Some(count);
            queue.push_back(start);
            while let Some(idx) = queue.pop_front() {
                let [x, y, z] = self.coords(idx);
                let mut visit = |nx_: usize, ny_: usize, nz_: usize| {
                    let n = self.index(nx_, ny_, nz_);
                    if self.voxels[n] && labels[n].is_none() {
                        labels[n] = Some(count);
                        queue.push_back(n);
                    }
                };
                if x > 0 {
                    visit(x - 1, y, z);
                }
                if x + 1 < nx {
                    visit(x + 1, y, z);
                }
                if y > 0 {
                    visit(x, y - 1, z);
                }
                if y + 1 < ny {
                    visit(x, y + 1, z);
                }
                if z > 0 {
                    visit(x, y, z - 1);
                }
                if z + 1 < nz {
                    visit(x, y, z + 1);
                }
            }
            count += 1;
        }
        (labels, count)
    }
}

/// JSON sidecar describing a `.raw` volume.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeMeta {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub resolution_um: f64,
    pub pore_value: u8,
}

pub fn load_volume(raw_path: impl AsRef<Path>, meta_path: impl AsRef<Path>) -> Result<VolumeImage> {
    let meta_path = meta_path.as_ref();
    let raw_path = raw_path.as_ref();
    let text = fs::read_to_string(meta_path).map_err(|e| Error::io(meta_path, e))?;
    let meta: VolumeMeta = serde_json::from_str(&text).map_err(|e| Error::json(meta_path, e))?;
    let bytes = fs::read(raw_path).map_err(|e| Error::io(raw_path, e))?;
    decode_volume(&bytes, &meta)
}

pub fn decode_volume(bytes: &[u8], meta: &VolumeMeta) -> Result<VolumeImage> {
    let expected = meta
        .nx
        .checked_mul(meta.ny)
        .and_then(|v| v.checked_mul(meta.nz))
        .ok_or_else(|| Error::input("volume dims overflow"))?;
    if bytes.len() != expected {
        return Err(Error::input(format!(
            "raw size mismatch: {} bytes, sidecar declares {}x{}x{} = {expected}",
            bytes.len(),
            meta.nx,
            meta.ny,
            meta.nz
        )));
    }
    let voxels = bytes.iter().map(|&b| b == meta.pore_value).collect();
    VolumeImage::new([meta.nx, meta.ny, meta.nz], meta.resolution_um, voxels)
}

/// Writes `<stem>.raw` and `<stem>.json`. Solid voxels are written as the
/// complement of `pore_value`.
pub fn save_volume(
    img: &VolumeImage,
    raw_path: impl AsRef<Path>,
    meta_path: impl AsRef<Path>,
    pore_value: u8,
) -> Result<()> {
    let raw_path = raw_path.as_ref();
    let meta_path = meta_path.as_ref();
    let solid_value = !pore_value;
    let bytes: Vec<u8> = img
        .voxels
        .iter()
        .map(|&p| if p { pore_value } else { solid_value })
        .collect();
    fs::write(raw_path, bytes).map_err(|e| Error::io(raw_path, e))?;
    let meta = VolumeMeta {
        nx: img.dims[0],
        ny: img.dims[1],
        nz: img.dims[2],
        resolution_um: img.resolution,
        pore_value,
    };
    let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::json(meta_path, e))?;
    fs::write(meta_path, text).map_err(|e| Error::io(meta_path, e))
}

/// Axis-aligned box of voxels, `lo` inclusive and `hi` exclusive.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropRegion {
    pub lo: [usize; 3],
    pub hi: [usize; 3],
}

impl CropRegion {
    pub fn new(lo: [usize; 3], hi: [usize; 3]) -> Self {
        Self { lo, hi }
    }

    pub fn full(dims: [usize; 3]) -> Self {
        Self { lo: [0; 3], hi: dims }
    }

    pub fn dims(&self) -> [usize; 3] {
        [
            self.hi[0] - self.lo[0],
            self.hi[1] - self.lo[1],
            self.hi[2] - self.lo[2],
        ]
    }

    fn check(&self, dims: [usize; 3]) -> Result<()> {
        for a in 0..3 {
            if !(self.lo[a] < self.hi[a] && self.hi[a] <= dims[a]) {
                return Err(Error::input(format!(
                    "crop region {:?}..{:?} out of bounds for dims {dims:?}",
                    self.lo, self.hi
                )));
            }
        }
        Ok(())
    }
}

/// Parses `x0:x1,y0:y1,z0:z1`.
impl FromStr for CropRegion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').collect();
        if parts.len() != 3 {
            return Err(Error::input(format!("crop must be x0:x1,y0:y1,z0:z1, got {s:?}")));
        }
        let mut lo = [0; 3];
        let mut hi = [0; 3];
        for (a, part) in parts.iter().enumerate() {
            let (l, h) = part
                .split_once(':')
                .ok_or_else(|| Error::input(format!("bad crop range {part:?}")))?;
            let parse = |v: &str| {
                v.trim()
                    .parse::<usize>()
                    .map_err(|e| Error::input(format!("bad crop bound {v:?}: {e}")))
            };
            lo[a] = parse(l)?;
            hi[a] = parse(h)?;
        }
        Ok(CropRegion { lo, hi })
    }
}

/// Primitive shapes for synthetic volumes. Coordinates and radii are in voxel
/// units with voxel `(i, j, k)` centered at `(i, j, k)`; a voxel is pore when
/// its center lies inside (closed) any shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Sphere {
        center: [f64; 3],
        radius: f64,
    },
    /// Capsule around the segment `from`–`to`.
    Tube {
        from: [f64; 3],
        to: [f64; 3],
        radius: f64,
    },
    /// `count` spheres with uniformly random centers and radii.
    Blobs {
        count: usize,
        min_radius: f64,
        max_radius: f64,
        seed: u64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub dims: [usize; 3],
    pub resolution_um: f64,
    #[serde(default)]
    pub shapes: Vec<Shape>,
}

pub fn synth_volume(spec: &SynthSpec) -> Result<VolumeImage> {
    let mut img = VolumeImage::solid(spec.dims, spec.resolution_um)?;
    let mut spheres = Vec::new();
    let mut tubes = Vec::new();
    for shape in &spec.shapes {
        match *shape {
            Shape::Sphere { center, radius } => {
                check_radius(radius)?;
                spheres.push((center, radius));
            }
            Shape::Tube { from, to, radius } => {
                check_radius(radius)?;
                tubes.push((from, to, radius));
            }
            Shape::Blobs {
                count,
                min_radius,
                max_radius,
                seed,
            } => {
                check_radius(min_radius)?;
                if max_radius < min_radius {
                    return Err(Error::input("blob max_radius < min_radius"));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                for _ in 0..count {
                    let c = [
                        rng.gen_range(0.0..spec.dims[0] as f64),
                        rng.gen_range(0.0..spec.dims[1] as f64),
                        rng.gen_range(0.0..spec.dims[2] as f64),
                    ];
                    let r = if max_radius > min_radius {
                        rng.gen_range(min_radius..max_radius)
                    } else {
                        min_radius
                    };
                    spheres.push((c, r));
                }
            }
        }
    }
    let [nx, ny, nz] = spec.dims;
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let p = [x as f64, y as f64, z as f64];
                let inside = spheres.iter().any(|&(c, r)| dist2(p, c) <= r * r)
                    || tubes.iter().any(|&(a, b, r)| segment_dist2(p, a, b) <= r * r);
                if inside {
                    img.set(x, y, z, true);
                }
            }
        }
    }
    Ok(img)
}

fn check_radius(r: f64) -> Result<()> {
    if r > 0.0 && r.is_finite() {
        Ok(())
    } else {
        Err(Error::input(format!("shape radius must be > 0, got {r}")))
    }
}

fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    (0..3).map(|i| (a[i] - b[i]).powi(2)).sum()
}

fn segment_dist2(p: [f64; 3], a: [f64; 3], b: [f64; 3]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let len2: f64 = ab.iter().map(|v| v * v).sum();
    let t = if len2 == 0.0 {
        0.0
    } else {
        ((0..3).map(|i| (p[i] - a[i]) * ab[i]).sum::<f64>() / len2).clamp(0.0, 1.0)
    };
    let q = [a[0] + t * ab[0], a[1] + t * ab[1], a[2] + t * ab[2]];
    dist2(p, q)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere_spec(n: usize, r: f64) -> SynthSpec {
        let c = (n as f64 - 1.0) / 2.0;
        SynthSpec {
            dims: [n; 3],
            resolution_um: 24.0,
            shapes: vec![Shape::Sphere {
                center: [c; 3],
                radius: r,
            }],
        }
    }

    #[test]
    fn load_uniform_pore_volume() {
        let dir = tempfile::tempdir().unwrap();
        let raw = dir.path().join("v.raw");
        let meta = dir.path().join("v.json");
        fs::write(&raw, [0u8; 8]).unwrap();
        fs::write(&meta, r#"{"nx":2,"ny":2,"nz":2,"resolution_um":24.0,"pore_value":0}"#).unwrap();
        let img = load_volume(&raw, &meta).unwrap();
        assert_eq!(img.pore_count(), 8);
        assert_eq!(img.resolution(), 24.0);
    }

    #[test]
    fn size_mismatch_is_rejected() {
        let meta = VolumeMeta {
            nx: 2,
            ny: 2,
            nz: 2,
            resolution_um: 1.0,
            pore_value: 0,
        };
        assert!(matches!(decode_volume(&[0u8; 7], &meta), Err(Error::Input(_))));
    }

    #[test]
    fn missing_metadata_field_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let raw = dir.path().join("v.raw");
        let meta = dir.path().join("v.json");
        fs::write(&raw, [0u8; 8]).unwrap();
        fs::write(&meta, r#"{"nx":2,"ny":2,"nz":2,"pore_value":0}"#).unwrap();
        assert!(matches!(load_volume(&raw, &meta), Err(Error::Json { .. })));
    }

    #[test]
    fn non_pore_bytes_are_solid() {
        let meta = VolumeMeta {
            nx: 4,
            ny: 1,
            nz: 1,
            resolution_um: 1.0,
            pore_value: 7,
        };
        let img = decode_volume(&[7, 0, 255, 7], &meta).unwrap();
        assert_eq!(img.voxels(), &[true, false, false, true]);
    }

    #[test]
    fn x_fastest_order() {
        let meta = VolumeMeta {
            nx: 2,
            ny: 2,
            nz: 2,
            resolution_um: 1.0,
            pore_value: 1,
        };
        let mut bytes = [0u8; 8];
        bytes[1 + 2 * 2] = 1; // (x=1, y=0, z=1)
        let img = decode_volume(&bytes, &meta).unwrap();
        assert!(img.is_pore(1, 0, 1));
        assert_eq!(img.pore_count(), 1);
    }

    #[test]
    fn synthetic_round_trip() {
        let spec = SynthSpec {
            dims: [50; 3],
            resolution_um: 24.0,
            shapes: vec![Shape::Blobs {
                count: 40,
                min_radius: 1.0,
                max_radius: 4.0,
                seed: 11,
            }],
        };
        let img = synth_volume(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        for pore_value in [0u8, 255] {
            let raw = dir.path().join("s.raw");
            let meta = dir.path().join("s.json");
            save_volume(&img, &raw, &meta, pore_value).unwrap();
            assert_eq!(fs::metadata(&raw).unwrap().len(), 125_000);
            assert_eq!(load_volume(&raw, &meta).unwrap(), img);
        }
    }

    #[test]
    fn crop_full_extent_is_identity() {
        let img = synth_volume(&sphere_spec(12, 4.0)).unwrap();
        assert_eq!(img.crop(&CropRegion::full(img.dims())).unwrap(), img);
    }

    #[test]
    fn crop_sample_region_of_large_volume() {
        let img = VolumeImage::solid([512; 3], 24.0).unwrap();
        let region: CropRegion = "50:100,50:100,150:200".parse().unwrap();
        let out = img.crop(&region).unwrap();
        assert_eq!(out.dims(), [50; 3]);
        assert_eq!(out.resolution(), 24.0);
    }

    #[test]
    fn crop_single_voxel_and_offsets() {
        let img = synth_volume(&SynthSpec {
            dims: [9, 7, 5],
            resolution_um: 1.0,
            shapes: vec![Shape::Blobs {
                count: 6,
                min_radius: 1.0,
                max_radius: 2.5,
                seed: 3,
            }],
        })
        .unwrap();
        for (x, y, z) in [(0, 0, 0), (4, 3, 2), (8, 6, 4)] {
            let one = img.crop(&CropRegion::new([x, y, z], [x + 1, y + 1, z + 1])).unwrap();
            assert_eq!(one.voxels(), &[img.is_pore(x, y, z)]);
        }
        let sub = img.crop(&CropRegion::new([2, 1, 1], [8, 6, 4])).unwrap();
        assert_eq!(sub.dims(), [6, 5, 3]);
        for z in 0..3 {
            for y in 0..5 {
                for x in 0..6 {
                    assert_eq!(sub.is_pore(x, y, z), img.is_pore(x + 2, y + 1, z + 1));
                }
            }
        }
    }

    #[test]
    fn crop_out_of_bounds() {
        let img = VolumeImage::solid([4; 3], 1.0).unwrap();
        assert!(img.crop(&CropRegion::new([0; 3], [5, 4, 4])).is_err());
        assert!(img.crop(&CropRegion::new([2, 0, 0], [2, 4, 4])).is_err());
        assert!("1:2,3".parse::<CropRegion>().is_err());
    }

    #[test]
    fn porosity_extremes_and_count() {
        assert_eq!(VolumeImage::solid([3; 3], 1.0).unwrap().porosity(), 0.0);
        let full = VolumeImage::new([3; 3], 1.0, vec![true; 27]).unwrap();
        assert_eq!(full.porosity(), 1.0);
        let mut img = VolumeImage::solid([50; 3], 24.0).unwrap();
        for i in 0..163 {
            let idx = i * 761;
            let [x, y, z] = img.coords(idx);
            img.set(x, y, z, true);
        }
        assert_eq!(img.pore_count(), 163);
        assert_eq!(img.porosity(), 163.0 / 125_000.0);
        assert!((img.porosity() - 0.0013).abs() < 1e-5);
    }

    #[test]
    fn synthetic_sphere_matches_brute_force_membership() {
        let img = synth_volume(&sphere_spec(32, 10.0)).unwrap();
        let c = 15.5;
        let mut count = 0;
        for z in 0..32 {
            for y in 0..32 {
                for x in 0..32 {
                    let d2 = (x as f64 - c).powi(2) + (y as f64 - c).powi(2) + (z as f64 - c).powi(2);
                    if d2 <= 100.0 {
                        count += 1;
                    }
                }
            }
        }
        assert_eq!(img.pore_count(), count);
    }

    #[test]
    fn overlapping_spheres_are_one_component() {
        let img = synth_volume(&SynthSpec {
            dims: [40, 24, 24],
            resolution_um: 1.0,
            shapes: vec![
                Shape::Sphere {
                    center: [14.0, 12.0, 12.0],
                    radius: 8.0,
                },
                Shape::Sphere {
                    center: [24.0, 12.0, 12.0],
                    radius: 8.0,
                },
            ],
        })
        .unwrap();
        assert_eq!(img.pore_components().1, 1);
    }

    #[test]
    fn empty_spec_and_degenerate_shape() {
        let img = synth_volume(&SynthSpec {
            dims: [5; 3],
            resolution_um: 1.0,
            shapes: vec![],
        })
        .unwrap();
        assert_eq!(img.pore_count(), 0);
        let bad = SynthSpec {
            dims: [5; 3],
            resolution_um: 1.0,
            shapes: vec![Shape::Sphere {
                center: [2.0; 3],
                radius: 0.0,
            }],
        };
        assert!(synth_volume(&bad).is_err());
    }

    #[test]
    fn synth_is_deterministic() {
        let spec = SynthSpec {
            dims: [20; 3],
            resolution_um: 1.0,
            shapes: vec![Shape::Blobs {
                count: 10,
                min_radius: 1.0,
                max_radius: 3.0,
                seed: 99,
            }],
        };
        assert_eq!(synth_volume(&spec).unwrap(), synth_volume(&spec).unwrap());
    }
}
