//! Seedable low-discrepancy point sets.
//!
//! A classic Sobol sequence (direction numbers from the Joe–Kuo tables, up
//! to 8 dimensions) combined with a per-dimension random digital shift
//! derived from the seed. The XOR shift decorrelates runs without breaking
//! the net structure that gives the sequence its low discrepancy, and it
//! moves the first point away from the origin.

use crate::error::{Error, Result};
use crate::seeding;

/// Joe–Kuo primitive polynomial data for dimensions 2..=8: degree,
/// coefficient bits `a`, and initial direction values `m`.
const JOE_KUO: [(u32, u32, [u32; 5]); 7] = [
    (1, 0, [1, 0, 0, 0, 0]),
    (2, 1, [1, 3, 0, 0, 0]),
    (3, 1, [1, 3, 1, 0, 0]),
    (3, 2, [1, 1, 1, 0, 0]),
    (4, 1, [1, 1, 3, 3, 0]),
    (4, 4, [1, 3, 5, 13, 0]),
    (5, 2, [1, 1, 5, 5, 17]),
];

const BITS: usize = 32;

/// Maximum supported dimensionality.
pub const MAX_DIM: usize = 8;

/// Direction numbers for one dimension, scaled to 32-bit fractions.
fn direction_numbers(dim: usize) -> [u32; BITS] {
    let mut v = [0u32; BITS];
    if dim == 0 {
        // First dimension is the van der Corput sequence in base 2.
        for (k, slot) in v.iter_mut().enumerate() {
            *slot = 1 << (31 - k);
        }
        return v;
    }
    let (degree, a, m) = JOE_KUO[dim - 1];
    let s = degree as usize;
    for k in 0..s {
        v[k] = m[k] << (31 - k);
    }
    for k in s..BITS {
        let mut val = v[k - s] ^ (v[k - s] >> s);
        for i in 1..s {
            if (a >> (s - 1 - i)) & 1 == 1 {
                val ^= v[k - i];
            }
        }
        v[k] = val;
    }
    v
}

/// Generates the first `n` points of a digitally shifted Sobol sequence in
/// the unit cube `[0, 1)^dim`. Deterministic given `seed`.
pub fn sample_unit_cube(dim: usize, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if dim == 0 || dim > MAX_DIM {
        return Err(Error::Config(format!(
            "sobol dimension {dim} unsupported (1..={MAX_DIM})"
        )));
    }
    let directions: Vec<[u32; BITS]> = (0..dim).map(direction_numbers).collect();
    let shifts: Vec<u32> = (0..dim)
        .map(|d| seeding::mix(seed, &[0x50b01, d as u64]) as u32)
        .collect();

    let mut points = Vec::with_capacity(n);
    for i in 0..n as u64 {
        let gray = i ^ (i >> 1);
        let mut point = Vec::with_capacity(dim);
        for d in 0..dim {
            let mut x = 0u32;
            for (k, &v) in directions[d].iter().enumerate() {
                if (gray >> k) & 1 == 1 {
                    x ^= v;
                }
            }
            x ^= shifts[d];
            point.push(x as f64 / (1u64 << 32) as f64);
        }
        points.push(point);
    }
    Ok(points)
}

/// The same points mapped affinely into `[lower, upper]` per dimension.
pub fn sample_box(lower: &[f64], upper: &[f64], n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if lower.len() != upper.len() {
        return Err(Error::Config("sobol bounds length mismatch".into()));
    }
    if lower.iter().zip(upper).any(|(l, u)| l > u) {
        return Err(Error::Config("sobol lower bound exceeds upper".into()));
    }
    let points = sample_unit_cube(lower.len(), n, seed)?;
    Ok(points
        .into_iter()
        .map(|p| {
            p.iter()
                .enumerate()
                .map(|(d, &x)| lower[d] + x * (upper[d] - lower[d]))
                .collect()
        })
        .collect())
}
