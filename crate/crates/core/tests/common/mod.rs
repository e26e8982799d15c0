//! Independent reference implementations used by the integration tests.

#![allow(dead_code)]

use std::collections::{HashMap, HashSet};

use rand::Rng;
use xtalgen::crystal::{params_to_matrix, CrystalStructure, Lattice};
use xtalgen::eval::VnuReport;
use xtalgen::nn::ParamStore;
use xtalgen::tensor::Tensor;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Gradients this small are compared absolutely; relative error is meaningless there.
pub const FD_ABS_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, Default)]
pub struct FdStats {
    pub checked: usize,
    pub max_rel: f64,
    pub failures: usize,
}

impl FdStats {
    pub fn merge(&mut self, o: FdStats) {
        self.checked += o.checked;
        self.max_rel = self.max_rel.max(o.max_rel);
        self.failures += o.failures;
    }
}

/// Compares `analytic` (one tensor per parameter) with central differences of
/// `loss` at `points` randomly chosen scalar parameters.
pub fn fd_check(
    store: &ParamStore,
    analytic: &[Tensor],
    points: usize,
    tol: f64,
    rng: &mut impl Rng,
    loss: impl Fn(&ParamStore) -> f64,
) -> FdStats {
    let mut work = store.clone();
    let sizes: Vec<usize> = store.values().iter().map(|t| t.len()).collect();
    let total: usize = sizes.iter().sum();
    let mut st = FdStats::default();
    for _ in 0..points {
        let mut flat = rng.random_range(0..total);
        let mut p = 0;
        while flat >= sizes[p] {
            flat -= sizes[p];
            p += 1;
        }
        let orig = store.values()[p].data()[flat];
        work.values_mut()[p].data_mut()[flat] = orig + FD_STEP;
        let up = loss(&work);
        work.values_mut()[p].data_mut()[flat] = orig - FD_STEP;
        let down = loss(&work);
        work.values_mut()[p].data_mut()[flat] = orig;
        let fd = (up - down) / (2.0 * FD_STEP);
        let an = analytic[p].data()[flat];
        let diff = (fd - an).abs();
        let scale = fd.abs().max(an.abs());
        let rel = if scale < FD_ABS_FLOOR { 0.0 } else { diff / scale };
        st.checked += 1;
        st.max_rel = st.max_rel.max(rel);
        if rel >= tol && diff >= FD_ABS_FLOOR {
            st.failures += 1;
        }
    }
    st
}

/// All periodic images with offsets in `{-r..r}^3`, per receiver sorted by distance.
pub fn brute_neighbors(s: &CrystalStructure, r: i32) -> Vec<Vec<(f64, usize, [i32; 3])>> {
    let m = params_to_matrix(s.lattice()).unwrap();
    let f = s.frac();
    (0..f.len())
        .map(|i| {
            let mut all = Vec::new();
            for (j, fj) in f.iter().enumerate() {
                for a in -r..=r {
                    for b in -r..=r {
                        for c in -r..=r {
                            if i == j && (a, b, c) == (0, 0, 0) {
                                continue;
                            }
                            let df = [fj[0] + a as f64 - f[i][0], fj[1] + b as f64 - f[i][1], fj[2] + c as f64 - f[i][2]];
                            let x = m.to_cartesian(df);
                            let d = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
                            all.push((d, j, [a, b, c]));
                        }
                    }
                }
            }
            all.sort_by(|x, y| x.0.total_cmp(&y.0));
            all
        })
        .collect()
}

/// Lexicographically smallest sorted length triple over integer bases with
/// entries in `{-2..2}` and determinant ±1.
pub fn brute_min_lengths(l: &Lattice) -> [f64; 3] {
    let m = params_to_matrix(l).unwrap().rows;
    let mut coeffs = Vec::with_capacity(124);
    for a in -2i64..=2 {
        for b in -2i64..=2 {
            for c in -2i64..=2 {
                if (a, b, c) != (0, 0, 0) {
                    coeffs.push([a, b, c]);
                }
            }
        }
    }
    let len: Vec<f64> = coeffs
        .iter()
        .map(|k| {
            let v: Vec<f64> = (0..3).map(|d| (0..3).map(|r| k[r] as f64 * m[r][d]).sum()).collect();
            (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
        })
        .collect();
    let mut idx: Vec<usize> = (0..coeffs.len()).collect();
    idx.sort_by(|&x, &y| len[x].total_cmp(&len[y]));
    let det = |a: [i64; 3], b: [i64; 3], c: [i64; 3]| {
        a[0] * (b[1] * c[2] - b[2] * c[1]) - a[1] * (b[0] * c[2] - b[2] * c[0]) + a[2] * (b[0] * c[1] - b[1] * c[0])
    };
    let mut best = [f64::INFINITY; 3];
    // rows taken in ascending length give sorted triples directly
    for (p, &i) in idx.iter().enumerate() {
        if len[i] > best[0] {
            break;
        }
        for (q, &j) in idx.iter().enumerate().skip(p + 1) {
            if [len[i], len[j]] > [best[0], best[1]] {
                break;
            }
            // the first unimodular completion is the shortest third row for this pair
            if let Some(&k) = idx[q + 1..].iter().find(|&&k| det(coeffs[i], coeffs[j], coeffs[k]).abs() == 1) {
                let cand = [len[i], len[j], len[k]];
                if cand < best {
                    best = cand;
                }
            }
        }
    }
    best
}

/// Pairwise VNU accounting without hashing.
pub fn brute_vnu(ids: &[Option<String>], train: &[String], valid: &[bool]) -> VnuReport {
    let mut r = VnuReport { total: ids.len(), ..Default::default() };
    for (i, id) in ids.iter().enumerate() {
        r.valid += valid[i] as usize;
        let Some(id) = id else { continue };
        r.id_exists += 1;
        let unique = ids.iter().enumerate().all(|(j, other)| j == i || other.as_deref() != Some(id.as_str()));
        let novel = train.iter().all(|t| t != id);
        r.unique += unique as usize;
        r.novel += novel as usize;
        r.novel_unique += (unique && novel) as usize;
        r.vnu += (unique && novel && valid[i]) as usize;
    }
    r
}

pub fn id_set(xs: &[String]) -> HashSet<String> {
    xs.iter().cloned().collect()
}

/// Random cell with lengths in [3, 10] Å and angles in [65°, 115°].
pub fn random_lattice(rng: &mut impl Rng) -> Lattice {
    loop {
        let l = Lattice::from_degrees(
            [rng.random_range(3.0..10.0), rng.random_range(3.0..10.0), rng.random_range(3.0..10.0)],
            [rng.random_range(65.0..115.0), rng.random_range(65.0..115.0), rng.random_range(65.0..115.0)],
        );
        if params_to_matrix(&l).is_ok_and(|m| m.volume() > 0.3 * l.lengths.iter().product::<f64>()) {
            return l;
        }
    }
}

/// Random atoms in a random cell; types drawn from `palette`.
pub fn random_structure(rng: &mut impl Rng, n: usize, palette: &[u8]) -> CrystalStructure {
    let lattice = random_lattice(rng);
    let types = (0..n).map(|_| palette[rng.random_range(0..palette.len())]).collect();
    let frac = (0..n).map(|_| [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()]).collect();
    CrystalStructure::new(types, frac, lattice).unwrap()
}

/// Counts of each id, for readable failure messages.
pub fn tally(ids: &[Option<String>]) -> HashMap<String, usize> {
    let mut m = HashMap::new();
    for id in ids.iter().flatten() {
        *m.entry(id.clone()).or_insert(0) += 1;
    }
    m
}
