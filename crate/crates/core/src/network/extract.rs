//! Greedy maximal-ball covering and contact graph construction.
//!
//! Pore voxels are visited in order of decreasing distance-transform value
//! (ties by voxel index). Each voxel still uncovered becomes the center of a
//! ball whose radius is its distance value; the ball covers every pore voxel
//! center strictly inside it. A covered center is never selected again, so
//! every ball keeps its own center as a privately covered voxel and no two
//! balls share a center.

use std::f64::consts::PI;

use super::{distance_transform, Ball, NetworkMeta, PoreEdge, PoreNetwork};
use crate::error::{Error, Result};
use crate::image_io::VolumeImage;

pub fn extract_balls(img: &VolumeImage) -> Result<Vec<Ball>> {
    let field = distance_transform(img);
    let d2 = field.dist2_voxels();
    let mut order: Vec<usize> = (0..img.len()).filter(|&i| img.voxels()[i]).collect();
    if order.is_empty() {
        return Err(Error::EmptyNetwork);
    }
    // stable sort keeps ascending index among equal distances
    order.sort_by(|&a, &b| d2[b].total_cmp(&d2[a]));

    let [nx, ny, nz] = img.dims();
    let h = img.resolution();
    let mut covered = vec![false; img.len()];
    let mut balls = Vec::new();
    for idx in order {
        if covered[idx] {
            continue;
        }
        let r2 = d2[idx];
        let [cx, cy, cz] = img.coords(idx);
        let reach = r2.sqrt().ceil() as usize;
        let (x0, x1) = (cx.saturating_sub(reach), (cx + reach).min(nx - 1));
        let (y0, y1) = (cy.saturating_sub(reach), (cy + reach).min(ny - 1));
        let (z0, z1) = (cz.saturating_sub(reach), (cz + reach).min(nz - 1));
        for z in z0..=z1 {
            let dz = z as f64 - cz as f64;
            for y in y0..=y1 {
                let dy = y as f64 - cy as f64;
                for x in x0..=x1 {
                    let dx = x as f64 - cx as f64;
                    if dx * dx + dy * dy + dz * dz < r2 {
                        let q = img.index(x, y, z);
                        if img.voxels()[q] {
                            covered[q] = true;
                        }
                    }
                }
            }
        }
        balls.push(Ball::new(img.voxel_center(cx, cy, cz), r2.sqrt() * h));
    }
    Ok(balls)
}

/// Area of the contact disk between two balls at center distance `d`.
///
/// For intersecting spheres this is the disk where the two surfaces meet.
/// When one ball swallows the other's center the formula leaves its valid
/// range and the area is clamped to the smaller ball's great-circle disk.
pub fn contact_area(ri: f64, rj: f64, d: f64) -> f64 {
    let x = (d * d - rj * rj + ri * ri) / (2.0 * d);
    if x.abs() >= ri {
        PI * ri.min(rj).powi(2)
    } else {
        PI * (ri * ri - x * x)
    }
}

/// Edges between every pair of strictly overlapping balls.
pub fn build_edges(balls: &[Ball]) -> Result<Vec<PoreEdge>> {
    if balls.is_empty() {
        return Err(Error::EmptyNetwork);
    }
    let max_r = balls.iter().map(|b| b.radius).fold(0.0, f64::max);
    // sweep along x
    let mut by_x: Vec<usize> = (0..balls.len()).collect();
    by_x.sort_by(|&a, &b| balls[a].center[0].total_cmp(&balls[b].center[0]).then(a.cmp(&b)));

    let mut edges = Vec::new();
    for (k, &a) in by_x.iter().enumerate() {
        let ba = &balls[a];
        for &b in &by_x[k + 1..] {
            let bb = &balls[b];
            if bb.center[0] - ba.center[0] >= ba.radius + max_r {
                break;
            }
            let d = ba.distance_to(bb);
            if d >= ba.radius + bb.radius {
                continue;
            }
            if d == 0.0 {
                return Err(Error::input(format!("balls {a} and {b} share a center")));
            }
            let (i, j) = if a < b { (a, b) } else { (b, a) };
            let area = contact_area(balls[i].radius, balls[j].radius, d);
            if area <= 0.0 {
                continue;
            }
            edges.push(PoreEdge {
                i,
                j,
                contact_area: area,
                center_distance: d,
                conductance: area / d,
            });
        }
    }
    edges.sort_by_key(|e| (e.i, e.j));
    Ok(edges)
}

/// Distance transform, greedy covering and contact graph in one go.
pub fn extract_network(img: &VolumeImage, source: impl Into<String>) -> Result<PoreNetwork> {
    let balls = extract_balls(img)?;
    PoreNetwork::from_balls(
        balls,
        NetworkMeta {
            resolution_um: img.resolution(),
            source: source.into(),
        },
    )
}
