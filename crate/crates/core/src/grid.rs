use crate::error::{CoreError, Result};

/// Default lower bound on the block size `K`. The coarse-graining operator
/// `P NPᵗ` is provably invertible only for large `K`; assembly additionally
/// checks conditioning numerically, this bound just rejects degenerate setups
/// early.
pub const DEFAULT_K_MIN: usize = 4;

/// The size triple of a multiscale run: `N` lattice sites split into `M`
/// spline pieces of `K` sites each, `N = K·M`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MultiscaleGrid {
    n: usize,
    m: usize,
    k: usize,
}

impl MultiscaleGrid {
    pub fn new(n: usize, m: usize) -> Result<Self> {
        Self::with_k_min(n, m, DEFAULT_K_MIN)
    }

    pub fn with_k_min(n: usize, m: usize, k_min: usize) -> Result<Self> {
        if n == 0 || m == 0 {
            return Err(CoreError::Grid("N and M must be positive".into()));
        }
        if m < 2 {
            return Err(CoreError::Grid(format!(
                "M = {m} gives a trivial spline space; need M >= 2"
            )));
        }
        if n % m != 0 {
            return Err(CoreError::Grid(format!("N = {n} is not a multiple of M = {m}")));
        }
        let k = n / m;
        if k < k_min {
            return Err(CoreError::Grid(format!(
                "block size K = {k} below the minimum {k_min}"
            )));
        }
        Ok(MultiscaleGrid { n, m, k })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn m(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.k
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accepts_exact_multiples() {
        let g = MultiscaleGrid::new(64, 8).unwrap();
        assert_eq!((g.n(), g.m(), g.k()), (64, 8, 8));
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(MultiscaleGrid::new(65, 8).is_err());
        assert!(MultiscaleGrid::new(16, 8).is_err()); // K = 2 < 4
        assert!(MultiscaleGrid::new(8, 1).is_err());
        assert!(MultiscaleGrid::with_k_min(16, 8, 2).is_ok());
    }
}
