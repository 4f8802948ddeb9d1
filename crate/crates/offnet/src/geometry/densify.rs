//! Sparse-to-dense depth completion.
//!
//! Invalid pixels are filled by iterated morphological dilation: each round,
//! every still-invalid pixel takes the minimum valid depth inside a 5x5
//! diamond (Manhattan radius 2) of the previous round's state. Rounds repeat
//! until the map is full, then one 3x3 median pass smooths the filled-in
//! pixels while leaving original measurements bit-exact.

use super::{DepthMap, GeometryError, Result};

const DIAMOND_RADIUS: isize = 2;

pub fn densify_depth(sparse: &DepthMap) -> Result<DepthMap> {
    if sparse.valid_count() == 0 {
        return Err(GeometryError::Degenerate(
            "densify_depth needs at least one valid pixel".into(),
        ));
    }
    let (w, h) = (sparse.width, sparse.height);
    let mut current = sparse.clone();

    while !current.is_fully_valid() {
        let snapshot = current.clone();
        for y in 0..h {
            for x in 0..w {
                if snapshot.get(x, y).is_some() {
                    continue;
                }
                let mut best: Option<f32> = None;
                for dy in -DIAMOND_RADIUS..=DIAMOND_RADIUS {
                    let reach = DIAMOND_RADIUS - dy.abs();
                    for dx in -reach..=reach {
                        let (nx, ny) = (x as isize + dx, y as isize + dy);
                        if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                            continue;
                        }
                        if let Some(d) = snapshot.get(nx as usize, ny as usize) {
                            best = Some(best.map_or(d, |b: f32| b.min(d)));
                        }
                    }
                }
                if let Some(d) = best {
                    current.set(x, y, d);
                }
            }
        }
    }

    // Median smoothing of filled pixels only, computed on a snapshot.
    let snapshot = current.clone();
    for y in 0..h {
        for x in 0..w {
            if sparse.get(x, y).is_some() {
                continue;
            }
            let mut window: Vec<f32> = Vec::with_capacity(9);
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let (nx, ny) = (x as isize + dx, y as isize + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    window.push(snapshot.get(nx as usize, ny as usize).unwrap());
                }
            }
            window.sort_by(|a, b| a.partial_cmp(b).unwrap());
            current.set(x, y, window[window.len() / 2]);
        }
    }
    Ok(current)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fully_dense_input_is_a_fixed_point() {
        let mut map = DepthMap::new_invalid(4, 3);
        for y in 0..3 {
            for x in 0..4 {
                map.set(x, y, 1.0 + (x + y) as f32);
            }
        }
        let out = densify_depth(&map).unwrap();
        assert_eq!(out.depth_raw(), map.depth_raw());
    }

    #[test]
    fn single_seed_floods_everything() {
        let mut map = DepthMap::new_invalid(7, 5);
        map.set(3, 2, 4.25);
        let out = densify_depth(&map).unwrap();
        assert!(out.is_fully_valid());
        assert!(out.depth_raw().iter().all(|&d| d == 4.25));
    }

    #[test]
    fn empty_input_is_degenerate() {
        let map = DepthMap::new_invalid(4, 4);
        assert!(matches!(
            densify_depth(&map),
            Err(GeometryError::Degenerate(_))
        ));
    }

    #[test]
    fn two_seeds_on_a_row_follow_the_dilation_schedule() {
        // Seeds depth 2 at x=0 and depth 8 at x=8 on a 1x9 row.
        // Hand-stepping the radius-2 dilation with snapshot updates:
        //   round 1: [2 2 2 . . . 8 8 8]
        //   round 2: x=3 sees {2,2} -> 2; x=4 sees {2,8} -> min 2; x=5 sees {8,8} -> 8
        // Median pass leaves every value unchanged.
        let mut map = DepthMap::new_invalid(9, 1);
        map.set(0, 0, 2.0);
        map.set(8, 0, 8.0);
        let out = densify_depth(&map).unwrap();
        let expect = [2.0, 2.0, 2.0, 2.0, 2.0, 8.0, 8.0, 8.0, 8.0];
        for (x, e) in expect.iter().enumerate() {
            assert_eq!(out.get(x, 0), Some(*e), "pixel {x}");
        }
    }

    #[test]
    fn measured_pixels_survive_bit_exactly() {
        let mut map = DepthMap::new_invalid(11, 7);
        let seeds = [
            (0usize, 0usize, 3.217_593f32),
            (10, 6, 2.590_282),
            (5, 3, 1.338_214),
        ];
        for &(x, y, d) in &seeds {
            map.set(x, y, d);
        }
        let out = densify_depth(&map).unwrap();
        for &(x, y, d) in &seeds {
            assert_eq!(out.get(x, y).unwrap().to_bits(), d.to_bits());
        }
        assert!(out.is_fully_valid());
    }
}
