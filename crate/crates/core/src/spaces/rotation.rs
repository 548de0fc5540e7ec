//! Nearest-neighbour rotation of the inscribed disc of a square grid.
//!
//! The grid is rotated about its exact centre `((n-1)/2, (n-1)/2)` and only
//! pixels whose centres lie within radius `(n-1)/2` move; everything else maps
//! to itself. Positions are rounded to the nearest grid point with ties going
//! to the smaller index on each axis, which makes the chosen point the
//! lexicographically smallest of the equidistant candidates.

/// `(cos, sin)` of `angle_deg`, exact for multiples of 90 degrees.
pub(crate) fn cos_sin(angle_deg: f64) -> (f64, f64) {
    let reduced = angle_deg.rem_euclid(360.0);
    if reduced == 0.0 {
        (1.0, 0.0)
    } else if reduced == 90.0 {
        (0.0, 1.0)
    } else if reduced == 180.0 {
        (-1.0, 0.0)
    } else if reduced == 270.0 {
        (0.0, -1.0)
    } else {
        let r = reduced.to_radians();
        (r.cos(), r.sin())
    }
}

const TIE_TOLERANCE: f64 = 1e-9;

/// Rounds to the nearest integer, resolving halves (within a small tolerance
/// for trigonometric round-off) downwards.
pub(crate) fn round_half_down(x: f64) -> f64 {
    (x - 0.5 - TIE_TOLERANCE).ceil()
}

/// Flat index lookup: entry `q` is the grid point sampled by pixel `q` after
/// rotating its position by `angle_deg` about the centre (for `angle_deg`
/// negated this is the pre-image map of a forward rotation).
pub(crate) fn disc_rotation_table(n: usize, angle_deg: f64) -> Vec<usize> {
    let c = (n as f64 - 1.0) / 2.0;
    let r2 = c * c;
    let (cos, sin) = cos_sin(angle_deg);
    let last = (n - 1) as f64;
    let mut table = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let di = i as f64 - c;
            let dj = j as f64 - c;
            if di * di + dj * dj > r2 {
                table.push(i * n + j);
                continue;
            }
            let si = c + cos * di - sin * dj;
            let sj = c + sin * di + cos * dj;
            let ri = round_half_down(si).clamp(0.0, last) as usize;
            let rj = round_half_down(sj).clamp(0.0, last) as usize;
            table.push(ri * n + rj);
        }
    }
    table
}
