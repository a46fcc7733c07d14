//! Binary mask morphology.

/// Dilation by a city-block ball of `radius` voxels: a voxel is set when some
/// set voxel lies within L1 distance `radius`. `mask` is x-fastest over `dims`.
///
/// # Panics
/// If `mask.len()` differs from the product of `dims`.
pub fn dilate_mask(mask: &[bool], dims: [usize; 3], radius: usize) -> Vec<bool> {
    assert_eq!(mask.len(), dims.iter().product::<usize>(), "mask length must match dims");
    let [nx, ny, nz] = dims;
    // Repeated 6-neighbour dilation grows exactly the L1 ball.
    let mut cur = mask.to_vec();
    for _ in 0..radius {
        let mut next = cur.clone();
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let i = x + nx * (y + ny * z);
                    if !cur[i] {
                        continue;
                    }
                    if x > 0 {
                        next[i - 1] = true;
                    }
                    if x + 1 < nx {
                        next[i + 1] = true;
                    }
                    if y > 0 {
                        next[i - nx] = true;
                    }
                    if y + 1 < ny {
                        next[i + nx] = true;
                    }
                    if z > 0 {
                        next[i - nx * ny] = true;
                    }
                    if z + 1 < nz {
                        next[i + nx * ny] = true;
                    }
                }
            }
        }
        if next == cur {
            break;
        }
        cur = next;
    }
    cur
}
