//! Deterministic low-discrepancy sampling for the condition validators.

const BASES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

/// Van der Corput radical inverse of `index` in base `b`, in [0, 1).
fn radical_inverse(mut index: u64, b: u64) -> f64 {
    let mut inv = 0.0;
    let mut denom = 1.0;
    while index > 0 {
        denom *= b as f64;
        inv += (index % b) as f64 / denom;
        index /= b;
    }
    inv
}

/// Halton sequence over the unit cube in `dims` dimensions.
#[derive(Debug, Clone)]
pub(crate) struct Halton {
    dims: usize,
    index: u64,
}

impl Halton {
    pub fn new(dims: usize) -> Halton {
        assert!(dims <= BASES.len());
        Halton { dims, index: 0 }
    }

    /// Next point, each coordinate in [0, 1).
    pub fn next_point(&mut self, out: &mut [f64]) {
        self.index += 1;
        for (k, slot) in out.iter_mut().take(self.dims).enumerate() {
            *slot = radical_inverse(self.index, BASES[k]);
        }
    }
}

/// Maps a unit-cube coordinate to [-radius, radius].
pub(crate) fn to_symmetric(u: f64, radius: f64) -> f64 {
    (2.0 * u - 1.0) * radius
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halton_is_deterministic_and_spreads() {
        let mut a = Halton::new(3);
        let mut b = Halton::new(3);
        let mut pa = [0.0; 3];
        let mut pb = [0.0; 3];
        let mut mean = [0.0; 3];
        for _ in 0..1000 {
            a.next_point(&mut pa);
            b.next_point(&mut pb);
            assert_eq!(pa, pb);
            for k in 0..3 {
                mean[k] += pa[k] / 1000.0;
            }
        }
        for k in 0..3 {
            assert!((mean[k] - 0.5).abs() < 0.02, "dim {k} mean {}", mean[k]);
        }
    }
}
