//! Residual vector quantization with EMA codebooks.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Denominator floor when turning EMA sums back into code vectors.
const COUNT_FLOOR: f64 = 1e-5;
/// Codes whose EMA count falls below this are re-seeded from current residuals.
pub const DEAD_CODE_COUNT: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    /// `n_codes x dim`, row-major.
    pub codes: Vec<f64>,
    pub counts: Vec<f64>,
    pub sums: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rvq {
    pub dim: usize,
    pub n_codes: usize,
    pub decay: f64,
    pub levels: Vec<Codebook>,
    pub initialized: bool,
}

/// Result of quantizing `n` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Quantized {
    pub n: usize,
    /// Sum of the selected codes over all levels, `n x dim`.
    pub values: Vec<f64>,
    /// Selected code per level and row.
    pub codes: Vec<Vec<usize>>,
    /// Input residual per level, `n x dim` each.
    pub residuals: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RvqError {
    #[error("codebook is empty")]
    Empty,
    #[error("codebook has not been initialized")]
    Uninitialized,
    #[error("input length {0} is not a multiple of the code width {1}")]
    Shape(usize, usize),
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl Rvq {
    pub fn new(levels: usize, n_codes: usize, dim: usize, decay: f64) -> Self {
        let book = Codebook {
            codes: vec![0.0; n_codes * dim],
            counts: vec![0.0; n_codes],
            sums: vec![0.0; n_codes * dim],
        };
        Self { dim, n_codes, decay, levels: vec![book; levels], initialized: false }
    }

    fn nearest(&self, level: usize, x: &[f64]) -> usize {
        let book = &self.levels[level];
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for k in 0..self.n_codes {
            let d = sq_dist(x, &book.codes[k * self.dim..(k + 1) * self.dim]);
            if d < best_d {
                best_d = d;
                best = k;
            }
        }
        best
    }

    /// Nearest-code quantization level by level, each level coding the previous residual.
    pub fn quantize(&self, z: &[f64]) -> Result<Quantized, RvqError> {
        if self.n_codes == 0 || self.levels.is_empty() || self.dim == 0 {
            return Err(RvqError::Empty);
        }
        if !z.len().is_multiple_of(self.dim) {
            return Err(RvqError::Shape(z.len(), self.dim));
        }
        let n = z.len() / self.dim;
        let mut residual = z.to_vec();
        let mut values = vec![0.0; z.len()];
        let mut codes = Vec::with_capacity(self.levels.len());
        let mut residuals = Vec::with_capacity(self.levels.len());
        for level in 0..self.levels.len() {
            residuals.push(residual.clone());
            let mut pick = Vec::with_capacity(n);
            for i in 0..n {
                let row = &mut residual[i * self.dim..(i + 1) * self.dim];
                let k = self.nearest(level, row);
                let c = &self.levels[level].codes[k * self.dim..(k + 1) * self.dim];
                for d in 0..self.dim {
                    values[i * self.dim + d] += c[d];
                    row[d] -= c[d];
                }
                pick.push(k);
            }
            codes.push(pick);
        }
        Ok(Quantized { n, values, codes, residuals })
    }

    /// Seeds every level from data: codes are random residual rows plus a small jitter.
    pub fn init_from_data(&mut self, z: &[f64], rng: &mut impl Rng) -> Result<(), RvqError> {
        if z.is_empty() || !z.len().is_multiple_of(self.dim) {
            return Err(RvqError::Shape(z.len(), self.dim));
        }
        let n = z.len() / self.dim;
        let scale = {
            let mean = z.iter().sum::<f64>() / z.len() as f64;
            (z.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / z.len() as f64).sqrt().max(1e-3)
        };
        let mut residual = z.to_vec();
        for level in 0..self.levels.len() {
            let order = rand::seq::index::sample(rng, n, n.min(self.n_codes)).into_vec();
            let dim = self.dim;
            let level_scale = scale * 0.01f64.powi(level as i32);
            for k in 0..self.n_codes {
                let src = order[k % order.len()];
                for d in 0..dim {
                    let jitter: f64 = StandardNormal.sample(rng);
                    let v = residual[src * dim + d] + if k < order.len() { 0.0 } else { 1e-2 * level_scale * jitter };
                    self.levels[level].codes[k * dim + d] = v;
                    self.levels[level].sums[k * dim + d] = v;
                }
                self.levels[level].counts[k] = 1.0;
            }
            for i in 0..n {
                let k = self.nearest(level, &residual[i * dim..(i + 1) * dim]);
                for d in 0..dim {
                    residual[i * dim + d] -= self.levels[level].codes[k * dim + d];
                }
            }
        }
        self.initialized = true;
        Ok(())
    }

    /// EMA update of counts and sums from the residuals each level saw, then
    /// re-seeding of dead codes from those residuals.
    pub fn ema_update(&mut self, q: &Quantized, rng: &mut impl Rng) {
        let dim = self.dim;
        let decay = self.decay;
        for (level, book) in self.levels.iter_mut().enumerate() {
            let mut n_k = vec![0.0; self.n_codes];
            let mut s_k = vec![0.0; self.n_codes * dim];
            for (i, &k) in q.codes[level].iter().enumerate() {
                n_k[k] += 1.0;
                for d in 0..dim {
                    s_k[k * dim + d] += q.residuals[level][i * dim + d];
                }
            }
            for k in 0..self.n_codes {
                book.counts[k] = decay * book.counts[k] + (1.0 - decay) * n_k[k];
                for d in 0..dim {
                    let idx = k * dim + d;
                    book.sums[idx] = decay * book.sums[idx] + (1.0 - decay) * s_k[idx];
                    book.codes[idx] = book.sums[idx] / book.counts[k].max(COUNT_FLOOR);
                }
            }
            if q.n == 0 {
                continue;
            }
            for k in 0..self.n_codes {
                if book.counts[k] < DEAD_CODE_COUNT {
                    let src = rng.random_range(0..q.n);
                    for d in 0..dim {
                        let v = q.residuals[level][src * dim + d];
                        book.codes[k * dim + d] = v;
                        book.sums[k * dim + d] = v * book.counts[k];
                    }
                    // keep the replacement alive long enough to be picked
                    book.counts[k] = book.counts[k].max(DEAD_CODE_COUNT);
                    for d in 0..dim {
                        book.sums[k * dim + d] = book.codes[k * dim + d] * book.counts[k];
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_level() -> Rvq {
        let mut r = Rvq::new(2, 3, 2, 0.9);
        r.levels[0].codes = vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0];
        r.levels[1].codes = vec![0.0, 0.0, 0.1, 0.1, -0.1, 0.0];
        r.initialized = true;
        r
    }

    #[test]
    fn exact_codes_are_fixed_points() {
        let r = two_level();
        let z = [1.1, 0.1, -0.1, 1.0];
        let q = r.quantize(&z).unwrap();
        for (a, b) in q.values.iter().zip(&z) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(q.codes, vec![vec![1, 2], vec![1, 2]]);
    }

    #[test]
    fn empty_codebook_rejected() {
        assert_eq!(Rvq::new(2, 0, 2, 0.9).quantize(&[0.0, 0.0]), Err(RvqError::Empty));
        assert!(two_level().quantize(&[0.0; 3]).is_err());
    }

    #[test]
    fn ema_moves_codes_toward_assignments() {
        let mut r = two_level();
        r.levels[0].counts = vec![1.0; 3];
        r.levels[0].sums = r.levels[0].codes.clone();
        r.levels[1].counts = vec![1.0; 3];
        r.levels[1].sums = r.levels[1].codes.clone();
        let z = [1.3, 0.0];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..500 {
            let q = r.quantize(&z).unwrap();
            r.ema_update(&q, &mut rng);
        }
        let q = r.quantize(&z).unwrap();
        assert!((q.values[0] - 1.3).abs() < 1e-6);
        assert!(r.levels.iter().all(|b| b.counts.iter().all(|&c| c >= 0.0)));
    }

    #[test]
    fn data_init_covers_distinct_rows() {
        let mut r = Rvq::new(2, 8, 2, 0.99);
        let z: Vec<f64> = (0..10).flat_map(|i| [i as f64, -(i as f64)]).collect();
        r.init_from_data(&z, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(r.initialized);
        let q = r.quantize(&z).unwrap();
        let err: f64 = q.values.iter().zip(&z).map(|(a, b)| (a - b).powi(2)).sum();
        assert!(err < 10.0);
        assert!(r.levels[0].codes.iter().all(|x| x.is_finite()));
    }
}
