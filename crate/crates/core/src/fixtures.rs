//! Synthetic pore geometries used by tests, the acceptance suite and the CLI demo.
//!
//! The real CT sample is not distributed; these volumes stand in for it.
//! Voxels are 24 μm unless stated otherwise.

use crate::image_io::{synth_volume, Shape, SynthSpec, VolumeImage};

pub const RESOLUTION_UM: f64 = 24.0;

/// 3×3×3 lattice of spheres (radius 4.5 voxels, spacing 14) joined by
/// tubes (radius 1.5) in a 50³ volume. One connected pore body.
pub fn lattice_spec() -> SynthSpec {
    let (k, spacing, r_sphere, r_tube) = (3usize, 14.0, 4.5, 1.5);
    let offset = (50.0 - spacing * (k as f64 - 1.0)) / 2.0;
    let mut shapes = Vec::new();
    for i in 0..k {
        for j in 0..k {
            for l in 0..k {
                let c = [
                    offset + spacing * i as f64,
                    offset + spacing * j as f64,
                    offset + spacing * l as f64,
                ];
                shapes.push(Shape::Sphere {
                    center: c,
                    radius: r_sphere,
                });
                let mut link = |to: [f64; 3]| {
                    shapes.push(Shape::Tube {
                        from: c,
                        to,
                        radius: r_tube,
                    })
                };
                if i + 1 < k {
                    link([c[0] + spacing, c[1], c[2]]);
                }
                if j + 1 < k {
                    link([c[0], c[1] + spacing, c[2]]);
                }
                if l + 1 < k {
                    link([c[0], c[1], c[2] + spacing]);
                }
            }
        }
    }
    SynthSpec {
        dims: [50; 3],
        resolution_um: RESOLUTION_UM,
        shapes,
    }
}

pub fn lattice() -> VolumeImage {
    synth_volume(&lattice_spec()).expect("lattice fixture")
}

/// Single sphere of `radius` voxels centered on a voxel of a cube just large
/// enough to leave a solid margin.
pub fn sphere(radius: f64) -> VolumeImage {
    let n = 2 * (radius.ceil() as usize) + 5;
    let c = (n / 2) as f64;
    synth_volume(&SynthSpec {
        dims: [n; 3],
        resolution_um: RESOLUTION_UM,
        shapes: vec![Shape::Sphere { center: [c; 3], radius }],
    })
    .expect("sphere fixture")
}

/// Straight tube one voxel wide and `length` voxels long along x.
pub fn thin_tube(length: usize) -> VolumeImage {
    synth_volume(&SynthSpec {
        dims: [length + 4, 5, 5],
        resolution_um: RESOLUTION_UM,
        shapes: vec![Shape::Tube {
            from: [2.0, 2.0, 2.0],
            to: [(length + 1) as f64, 2.0, 2.0],
            radius: 0.5,
        }],
    })
    .expect("tube fixture")
}

/// Two spheres of radius 8 whose centers are 10 voxels apart, joined
/// through the waist where they overlap.
pub fn dumbbell() -> VolumeImage {
    synth_volume(&SynthSpec {
        dims: [40, 22, 22],
        resolution_um: RESOLUTION_UM,
        shapes: vec![
            Shape::Sphere {
                center: [15.0, 11.0, 11.0],
                radius: 8.0,
            },
            Shape::Sphere {
                center: [25.0, 11.0, 11.0],
                radius: 8.0,
            },
        ],
    })
    .expect("dumbbell fixture")
}

/// Two spheres of radius 5 joined by a neck tube of radius 2.
pub fn necked_dumbbell() -> VolumeImage {
    synth_volume(&SynthSpec {
        dims: [34, 15, 15],
        resolution_um: RESOLUTION_UM,
        shapes: vec![
            Shape::Sphere {
                center: [8.0, 7.0, 7.0],
                radius: 5.0,
            },
            Shape::Sphere {
                center: [25.0, 7.0, 7.0],
                radius: 5.0,
            },
            Shape::Tube {
                from: [8.0, 7.0, 7.0],
                to: [25.0, 7.0, 7.0],
                radius: 2.0,
            },
        ],
    })
    .expect("necked dumbbell fixture")
}

/// Two spheres that do not touch.
pub fn separate_pores() -> VolumeImage {
    synth_volume(&SynthSpec {
        dims: [34, 15, 15],
        resolution_um: RESOLUTION_UM,
        shapes: vec![
            Shape::Sphere {
                center: [8.0, 7.0, 7.0],
                radius: 5.0,
            },
            Shape::Sphere {
                center: [25.0, 7.0, 7.0],
                radius: 5.0,
            },
        ],
    })
    .expect("separate pores fixture")
}
