//! Scrambled Sobol low-discrepancy sequences on the unit cube.
//!
//! Gray-code construction with direction numbers from the new-joe-kuo-6
//! table (<https://web.maths.unsw.edu.au/~fkuo/sobol/>), scrambled by a
//! seeded random digital shift per dimension. The shift keeps the dyadic
//! structure (and hence the discrepancy) of the raw sequence while making
//! distinct seeds produce distinct point sets.

use rand::Rng;

use crate::error::{Error, Result};
use crate::seed;

/// Direction numbers cover sequences up to 2^20 points.
const MAX_BITS: usize = 21;

/// (a, m) rows of the primitive-polynomial table, dimensions 2..=8.
/// Dimension 1 is the van der Corput sequence (all m_i = 1).
const TABLE: &[(u32, &[u32])] = &[
    (0, &[1]),
    (1, &[1, 3]),
    (1, &[1, 3, 1]),
    (2, &[1, 1, 1]),
    (1, &[1, 1, 3, 3]),
    (4, &[1, 3, 5, 13]),
    (2, &[1, 1, 5, 5, 17]),
];

/// Largest supported dimensionality.
pub const MAX_DIMS: usize = TABLE.len() + 1;

fn directions_for(dim: usize) -> [u32; MAX_BITS] {
    let mut v = [0u32; MAX_BITS];
    if dim == 0 {
        for (j, slot) in v.iter_mut().enumerate() {
            *slot = 1u32 << (31 - j);
        }
        return v;
    }
    let (a, m) = TABLE[dim - 1];
    let s = m.len();
    for (j, &mj) in m.iter().enumerate() {
        v[j] = mj << (31 - j);
    }
    for i in s..MAX_BITS {
        v[i] = v[i - s] ^ (v[i - s] >> s);
        for k in 0..s.saturating_sub(1) {
            if (a >> k) & 1 != 0 {
                v[i] ^= v[i - s + 1 + k];
            }
        }
    }
    v
}

/// A lazily advancing scrambled Sobol stream.
#[derive(Debug, Clone)]
pub struct SobolSequence {
    directions: Vec<[u32; MAX_BITS]>,
    shift: Vec<u32>,
    state: Vec<u32>,
    index: u64,
}

impl SobolSequence {
    pub fn new(dims: usize, seed: u64) -> Result<Self> {
        if dims == 0 {
            return Err(Error::invalid("sobol sequence needs at least one dimension"));
        }
        if dims > MAX_DIMS {
            return Err(Error::UnsupportedConfiguration(format!(
                "sobol table covers {MAX_DIMS} dimensions, requested {dims}"
            )));
        }
        let mut rng = seed::rng(seed::derive(seed, "sobol-shift"));
        let shift = (0..dims).map(|_| rng.random::<u32>()).collect();
        Ok(SobolSequence {
            directions: (0..dims).map(directions_for).collect(),
            shift,
            state: vec![0; dims],
            index: 0,
        })
    }

    pub fn dims(&self) -> usize {
        self.state.len()
    }

    /// Next point of the sequence, components in [0, 1).
    pub fn next_point(&mut self) -> Vec<f64> {
        if self.index > 0 {
            let bit = self.index.trailing_zeros() as usize;
            for (d, s) in self.state.iter_mut().enumerate() {
                *s ^= self.directions[d][bit];
            }
        }
        self.index += 1;
        self.state
            .iter()
            .zip(self.shift.iter())
            .map(|(&x, &sh)| f64::from(x ^ sh) / (u64::from(u32::MAX) + 1) as f64)
            .collect()
    }

    /// Skip ahead to point `index` (used to resume a stream mid-sequence).
    pub fn advance_to(&mut self, index: u64) {
        while self.index < index {
            self.next_point();
        }
    }
}

/// First `n` points of the scrambled sequence.
pub fn sobol_points(dims: usize, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let mut seq = SobolSequence::new(dims, seed)?;
    Ok((0..n).map(|_| seq.next_point()).collect())
}
