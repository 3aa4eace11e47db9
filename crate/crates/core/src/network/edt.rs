//! Exact Euclidean distance transform on voxel centers.
//!
//! Separable lower-envelope algorithm (Felzenszwalb & Huttenlocher), one pass
//! per axis over squared distances. Distances are measured between voxel
//! centers; the image faces act as an additional solid boundary.

use crate::image_io::VolumeImage;

/// Squared distance field in voxel units. Solid voxels hold 0.
///
/// Values are exact: squared distances to solid centers are integers and
/// squared distances to faces are `(k + 0.5)^2`, both representable in f64.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceField {
    dims: [usize; 3],
    resolution: f64,
    dist2: Vec<f64>,
}

impl DistanceField {
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    /// Squared distance in voxel units.
    pub fn dist2_voxels(&self) -> &[f64] {
        &self.dist2
    }

    /// Distance in micrometers at a flat voxel index.
    pub fn distance(&self, idx: usize) -> f64 {
        self.dist2[idx].sqrt() * self.resolution
    }

    /// Distances in micrometers.
    pub fn to_micrometers(&self) -> Vec<f64> {
        (0..self.dist2.len()).map(|i| self.distance(i)).collect()
    }
}

/// At each pore voxel, the distance from its center to the nearest solid voxel
/// center or image face; 0 at solid voxels.
pub fn distance_transform(img: &VolumeImage) -> DistanceField {
    let dims = img.dims();
    let [nx, ny, nz] = dims;
    let mut f: Vec<f64> = img
        .voxels()
        .iter()
        .map(|&p| if p { f64::INFINITY } else { 0.0 })
        .collect();

    let longest = nx.max(ny).max(nz);
    let mut line = vec![0.0; longest];
    let mut out = vec![0.0; longest];
    let mut scratch = Envelope::with_capacity(longest);

    // x lines
    for z in 0..nz {
        for y in 0..ny {
            let base = nx * (y + ny * z);
            line[..nx].copy_from_slice(&f[base..base + nx]);
            scratch.transform(&line[..nx], &mut out[..nx]);
            f[base..base + nx].copy_from_slice(&out[..nx]);
        }
    }
    // y lines
    for z in 0..nz {
        for x in 0..nx {
            for y in 0..ny {
                line[y] = f[x + nx * (y + ny * z)];
            }
            scratch.transform(&line[..ny], &mut out[..ny]);
            for y in 0..ny {
                f[x + nx * (y + ny * z)] = out[y];
            }
        }
    }
    // z lines
    for y in 0..ny {
        for x in 0..nx {
            for z in 0..nz {
                line[z] = f[x + nx * (y + ny * z)];
            }
            scratch.transform(&line[..nz], &mut out[..nz]);
            for z in 0..nz {
                f[x + nx * (y + ny * z)] = out[z];
            }
        }
    }

    for (idx, d2) in f.iter_mut().enumerate() {
        if *d2 == 0.0 {
            continue;
        }
        let c = img.coords(idx);
        let face = (0..3)
            .map(|a| {
                let lo = c[a] as f64 + 0.5;
                let hi = dims[a] as f64 - c[a] as f64 - 0.5;
                lo.min(hi)
            })
            .fold(f64::INFINITY, f64::min);
        *d2 = d2.min(face * face);
    }

    DistanceField {
        dims,
        resolution: img.resolution(),
        dist2: f,
    }
}

/// 1D squared-distance transform via the lower envelope of parabolas.
struct Envelope {
    v: Vec<usize>,
    z: Vec<f64>,
}

impl Envelope {
    fn with_capacity(n: usize) -> Self {
        Self {
            v: Vec::with_capacity(n),
            z: Vec::with_capacity(n + 1),
        }
    }

    fn transform(&mut self, f: &[f64], out: &mut [f64]) {
        self.v.clear();
        self.z.clear();
        for (q, &fq) in f.iter().enumerate() {
            if !fq.is_finite() {
                continue;
            }
            let qf = q as f64;
            loop {
                let Some(&p) = self.v.last() else {
                    self.v.push(q);
                    self.z.push(f64::NEG_INFINITY);
                    break;
                };
                let pf = p as f64;
                let s = ((fq + qf * qf) - (f[p] + pf * pf)) / (2.0 * qf - 2.0 * pf);
                if s <= *self.z.last().unwrap() {
                    self.v.pop();
                    self.z.pop();
                } else {
                    self.v.push(q);
                    self.z.push(s);
                    break;
                }
            }
        }
        if self.v.is_empty() {
            out.fill(f64::INFINITY);
            return;
        }
        self.z.push(f64::INFINITY);
        let mut k = 0;
        for (q, o) in out.iter_mut().enumerate() {
            let qf = q as f64;
            while self.z[k + 1] < qf {
                k += 1;
            }
            let p = self.v[k];
            let d = qf - p as f64;
            *o = d * d + f[p];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image_io::{synth_volume, Shape, SynthSpec};

    /// Nearest solid center or face, by exhaustive scan.
    fn brute_force(img: &VolumeImage) -> Vec<f64> {
        let dims = img.dims();
        let solids: Vec<[usize; 3]> = (0..img.len())
            .filter(|&i| !img.voxels()[i])
            .map(|i| img.coords(i))
            .collect();
        (0..img.len())
            .map(|i| {
                if !img.voxels()[i] {
                    return 0.0;
                }
                let c = img.coords(i);
                let mut best = f64::INFINITY;
                for s in &solids {
                    let d2: f64 = (0..3).map(|a| (c[a] as f64 - s[a] as f64).powi(2)).sum();
                    best = best.min(d2);
                }
                for a in 0..3 {
                    let lo = c[a] as f64 + 0.5;
                    let hi = dims[a] as f64 - c[a] as f64 - 0.5;
                    best = best.min(lo * lo).min(hi * hi);
                }
                best.sqrt() * img.resolution()
            })
            .collect()
    }

    #[test]
    fn all_pore_cube_uses_faces() {
        let img = VolumeImage::new([5; 3], 1.0, vec![true; 125]).unwrap();
        let dt = distance_transform(&img);
        assert_eq!(dt.distance(img.index(2, 2, 2)), 2.5);
        assert_eq!(dt.distance(img.index(0, 2, 2)), 0.5);
    }

    #[test]
    fn isolated_pore_voxel() {
        let mut img = VolumeImage::solid([5; 3], 2.0).unwrap();
        img.set(2, 2, 2, true);
        let dt = distance_transform(&img);
        assert_eq!(dt.distance(img.index(2, 2, 2)), 2.0);
        assert_eq!(dt.distance(img.index(1, 2, 2)), 0.0);
    }

    #[test]
    fn all_solid_is_zero() {
        let img = VolumeImage::solid([4, 3, 2], 1.0).unwrap();
        assert!(distance_transform(&img).to_micrometers().iter().all(|&d| d == 0.0));
    }

    #[test]
    fn matches_brute_force_on_random_blobs() {
        for seed in 0..4 {
            let img = synth_volume(&SynthSpec {
                dims: [17, 13, 11],
                resolution_um: 24.0,
                shapes: vec![Shape::Blobs {
                    count: 12,
                    min_radius: 1.0,
                    max_radius: 4.0,
                    seed,
                }],
            })
            .unwrap();
            let dt = distance_transform(&img).to_micrometers();
            let bf = brute_force(&img);
            assert_eq!(dt, bf, "seed {seed}");
        }
    }
}
