//! Crystal structures, lattice parameterization, Niggli reduction and
//! periodic (minimum-image) geometry.

use std::f64::consts::PI;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CrystalError {
    #[error("invalid lattice: {0}")]
    InvalidLattice(String),
    #[error("lattice angles {0:?} (deg) outside [60, 120] after Niggli reduction")]
    AngleOutOfBounds([f64; 3]),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("atom {atom}: fractional coordinate {value} outside [0, 1)")]
    Unwrapped { atom: usize, value: f64 },
    #[error("{types} atom types but {positions} positions")]
    LengthMismatch { types: usize, positions: usize },
    #[error("structure has no atoms")]
    Empty,
    #[error("Niggli reduction did not converge within {iterations} steps for cell {cell}")]
    NiggliNoConvergence { iterations: usize, cell: String },
}

pub type Result<T> = std::result::Result<T, CrystalError>;

pub const MIN_ANGLE: f64 = PI / 3.0;
pub const MAX_ANGLE: f64 = 2.0 * PI / 3.0;
/// Slack allowed on the angle bounds for values produced by floating-point reduction.
pub const ANGLE_SLACK: f64 = 1e-6;
const NIGGLI_MAX_ITER: usize = 1000;

pub type Vec3 = [f64; 3];

/// Six-parameter cell: lengths in angstrom, angles (alpha, beta, gamma) in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lattice {
    pub lengths: Vec3,
    pub angles: Vec3,
}

impl Lattice {
    pub fn new(lengths: Vec3, angles: Vec3) -> Self {
        Self { lengths, angles }
    }

    pub fn from_degrees(lengths: Vec3, angles_deg: Vec3) -> Self {
        Self {
            lengths,
            angles: angles_deg.map(f64::to_radians),
        }
    }

    pub fn angles_degrees(&self) -> Vec3 {
        self.angles.map(f64::to_degrees)
    }

    pub fn as_array(&self) -> [f64; 6] {
        let [a, b, c] = self.lengths;
        let [al, be, ga] = self.angles;
        [a, b, c, al, be, ga]
    }

    pub fn angles_in_bounds(&self) -> bool {
        self.angles
            .iter()
            .all(|&x| (MIN_ANGLE - ANGLE_SLACK..=MAX_ANGLE + ANGLE_SLACK).contains(&x))
    }

    pub fn to_matrix(&self) -> Result<LatticeMatrix> {
        params_to_matrix(self)
    }

    pub fn volume(&self) -> Result<f64> {
        Ok(self.to_matrix()?.volume())
    }

    fn describe(&self) -> String {
        let d = self.angles_degrees();
        format!(
            "({:.6}, {:.6}, {:.6}, {:.4}, {:.4}, {:.4})",
            self.lengths[0], self.lengths[1], self.lengths[2], d[0], d[1], d[2]
        )
    }
}

/// Row basis: `rows[0]` is the a-vector, etc.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatticeMatrix {
    pub rows: [Vec3; 3],
}

impl LatticeMatrix {
    pub fn determinant(&self) -> f64 {
        dot(self.rows[0], cross(self.rows[1], self.rows[2]))
    }

    pub fn volume(&self) -> f64 {
        self.determinant().abs()
    }

    pub fn to_lattice(&self) -> Lattice {
        let [a, b, c] = self.rows;
        let (la, lb, lc) = (norm(a), norm(b), norm(c));
        let ang = |u: Vec3, v: Vec3, lu: f64, lv: f64| (dot(u, v) / (lu * lv)).clamp(-1.0, 1.0).acos();
        Lattice {
            lengths: [la, lb, lc],
            angles: [ang(b, c, lb, lc), ang(a, c, la, lc), ang(a, b, la, lb)],
        }
    }

    /// Cartesian position of a fractional coordinate.
    pub fn to_cartesian(&self, f: Vec3) -> Vec3 {
        let mut out = [0.0; 3];
        for (k, row) in self.rows.iter().enumerate() {
            for d in 0..3 {
                out[d] += f[k] * row[d];
            }
        }
        out
    }

    pub fn to_fractional(&self, x: Vec3) -> Vec3 {
        // f = x B^{-1}; B^{-1} columns are the reciprocal vectors / det
        let [a, b, c] = self.rows;
        let det = self.determinant();
        let ra = cross(b, c);
        let rb = cross(c, a);
        let rc = cross(a, b);
        [dot(x, ra) / det, dot(x, rb) / det, dot(x, rc) / det]
    }

    /// Spacing between lattice planes spanned by the other two vectors, per axis.
    pub fn plane_spacings(&self) -> Vec3 {
        let [a, b, c] = self.rows;
        let v = self.volume();
        [v / norm(cross(b, c)), v / norm(cross(c, a)), v / norm(cross(a, b))]
    }
}

/// Standard orientation: a along x, b in the xy-plane, right-handed.
pub fn params_to_matrix(l: &Lattice) -> Result<LatticeMatrix> {
    let [a, b, c] = l.lengths;
    if !l.lengths.iter().chain(&l.angles).all(|x| x.is_finite()) {
        return Err(CrystalError::NonFinite("lattice"));
    }
    if a <= 0.0 || b <= 0.0 || c <= 0.0 {
        return Err(CrystalError::InvalidLattice(format!(
            "non-positive length in {}",
            l.describe()
        )));
    }
    let [al, be, ga] = l.angles;
    let (ca, cb, cg, sg) = (al.cos(), be.cos(), ga.cos(), ga.sin());
    if sg.abs() < 1e-12 {
        return Err(CrystalError::InvalidLattice(format!(
            "gamma degenerate in {}",
            l.describe()
        )));
    }
    let cx = c * cb;
    let cy = c * (ca - cb * cg) / sg;
    let cz2 = c * c - cx * cx - cy * cy;
    if cz2 <= 1e-12 * c * c {
        return Err(CrystalError::InvalidLattice(format!(
            "non-positive cell volume for {}",
            l.describe()
        )));
    }
    Ok(LatticeMatrix {
        rows: [[a, 0.0, 0.0], [b * cg, b * sg, 0.0], [cx, cy, cz2.sqrt()]],
    })
}

/// `x mod 1` into the half-open interval [0, 1).
pub fn wrap_unit(x: f64) -> f64 {
    let w = x - x.floor();
    if w >= 1.0 {
        0.0
    } else {
        w
    }
}

pub fn wrap_fractional(f: &[Vec3]) -> Result<Vec<Vec3>> {
    if f.iter().flatten().any(|x| !x.is_finite()) {
        return Err(CrystalError::NonFinite("fractional coordinates"));
    }
    Ok(f.iter().map(|p| p.map(wrap_unit)).collect())
}

/// The tuple (atom types, fractional positions, lattice).
#[derive(Debug, Clone, PartialEq)]
pub struct CrystalStructure {
    atom_types: Vec<u8>,
    frac: Vec<Vec3>,
    lattice: Lattice,
}

impl CrystalStructure {
    /// Validating constructor; positions must already be wrapped and the lattice within bounds.
    pub fn new(atom_types: Vec<u8>, frac: Vec<Vec3>, lattice: Lattice) -> Result<Self> {
        if atom_types.len() != frac.len() {
            return Err(CrystalError::LengthMismatch {
                types: atom_types.len(),
                positions: frac.len(),
            });
        }
        if atom_types.is_empty() {
            return Err(CrystalError::Empty);
        }
        for (i, p) in frac.iter().enumerate() {
            for &x in p {
                if !x.is_finite() {
                    return Err(CrystalError::NonFinite("fractional coordinates"));
                }
                if !(0.0..1.0).contains(&x) {
                    return Err(CrystalError::Unwrapped { atom: i, value: x });
                }
            }
        }
        params_to_matrix(&lattice)?;
        if !lattice.angles_in_bounds() {
            return Err(CrystalError::AngleOutOfBounds(lattice.angles_degrees()));
        }
        Ok(Self {
            atom_types,
            frac,
            lattice,
        })
    }

    /// Ingestion path: wraps positions, Niggli-reduces the cell (re-expressing
    /// positions in the reduced basis) and rejects cells still outside the angle bounds.
    pub fn ingest(atom_types: Vec<u8>, frac: Vec<Vec3>, lattice: Lattice) -> Result<Self> {
        if atom_types.len() != frac.len() {
            return Err(CrystalError::LengthMismatch {
                types: atom_types.len(),
                positions: frac.len(),
            });
        }
        let frac = wrap_fractional(&frac)?;
        let reduced = niggli_reduce_with_transform(&lattice)?;
        let inv = reduced.inverse_transform();
        let frac = frac
            .iter()
            .map(|f| {
                let mut g = [0.0; 3];
                for (k, fk) in f.iter().enumerate() {
                    for d in 0..3 {
                        g[d] += fk * inv[k][d] as f64;
                    }
                }
                g.map(wrap_unit)
            })
            .collect();
        Self::new(atom_types, frac, reduced.lattice)
    }

    pub fn num_atoms(&self) -> usize {
        self.atom_types.len()
    }

    pub fn atom_types(&self) -> &[u8] {
        &self.atom_types
    }

    pub fn frac(&self) -> &[Vec3] {
        &self.frac
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn matrix(&self) -> LatticeMatrix {
        params_to_matrix(&self.lattice).expect("validated lattice")
    }

    pub fn cell(&self) -> PeriodicCell {
        PeriodicCell::new(&self.lattice).expect("validated lattice")
    }

    /// Reorders atoms so that new atom `k` is old atom `order[k]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            atom_types: order.iter().map(|&i| self.atom_types[i]).collect(),
            frac: order.iter().map(|&i| self.frac[i]).collect(),
            lattice: self.lattice,
        }
    }

    /// Full minimum-image distance matrix.
    pub fn distance_matrix(&self) -> Vec<Vec<f64>> {
        let cell = self.cell();
        let n = self.num_atoms();
        let mut d = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i + 1..n {
                let x = norm(cell.min_image(self.frac[i], self.frac[j]));
                d[i][j] = x;
                d[j][i] = x;
            }
        }
        d
    }
}

/// Shifts all positions by `u` and wraps: S' = (A, (F + u) mod 1, L).
pub fn random_translate(s: &CrystalStructure, u: Vec3) -> Result<CrystalStructure> {
    let shifted: Vec<Vec3> = s
        .frac
        .iter()
        .map(|f| [f[0] + u[0], f[1] + u[1], f[2] + u[2]])
        .collect();
    Ok(CrystalStructure {
        atom_types: s.atom_types.clone(),
        frac: wrap_fractional(&shifted)?,
        lattice: s.lattice,
    })
}

/// Per-axis circular mean of the positions weighted by atomic number. Shifts
/// exactly with the structure under translation; an axis whose resultant
/// vanishes falls back to 0.
pub fn circular_centroid(s: &CrystalStructure) -> Vec3 {
    let mut out = [0.0; 3];
    let total: f64 = s.atom_types.iter().map(|&z| z as f64).sum();
    for (d, o) in out.iter_mut().enumerate() {
        let (mut sx, mut cx) = (0.0, 0.0);
        for (f, &z) in s.frac.iter().zip(&s.atom_types) {
            let w = 2.0 * PI * f[d];
            sx += z as f64 * w.sin();
            cx += z as f64 * w.cos();
        }
        if sx.hypot(cx) > 1e-9 * total {
            *o = wrap_unit(sx.atan2(cx) / (2.0 * PI));
        }
    }
    out
}

/// Translates the structure so its circular centroid sits at 0.5 on every axis.
/// The result is the same (to rounding) for every translate of `s`.
pub fn centered(s: &CrystalStructure) -> CrystalStructure {
    let c = circular_centroid(s);
    random_translate(s, [0.5 - c[0], 0.5 - c[1], 0.5 - c[2]]).expect("finite shift of a valid structure")
}

/// Log of the lengths normalized by the cube root of the atom count.
pub fn normalize_lattice_lengths(l: &Lattice, n_atoms: usize) -> Vec3 {
    let s = (n_atoms as f64).cbrt();
    l.lengths.map(|x| (x / s).ln())
}

/// Inverse of [`normalize_lattice_lengths`].
pub fn denormalize_lattice_lengths(log_norm: Vec3, n_atoms: usize) -> Vec3 {
    let s = (n_atoms as f64).cbrt();
    log_norm.map(|x| x.exp() * s)
}

/// Lattice matrix plus the image-search shell for minimum-image queries.
#[derive(Debug, Clone, Copy)]
pub struct PeriodicCell {
    pub matrix: LatticeMatrix,
    shell: i32,
}

impl PeriodicCell {
    pub fn new(l: &Lattice) -> Result<Self> {
        let matrix = params_to_matrix(l)?;
        let skewed = l
            .angles
            .iter()
            .any(|&x| !(MIN_ANGLE + 0.1..=MAX_ANGLE - 0.1).contains(&x));
        Ok(Self {
            matrix,
            shell: if skewed { 2 } else { 1 },
        })
    }

    /// Cartesian vector from `fi` to the nearest periodic image of `fj`.
    pub fn min_image(&self, fi: Vec3, fj: Vec3) -> Vec3 {
        let mut df = [0.0; 3];
        for d in 0..3 {
            let x = fj[d] - fi[d];
            df[d] = x - x.round();
        }
        let r = self.shell;
        let mut best = [0.0; 3];
        let mut best_d2 = f64::INFINITY;
        for i in -r..=r {
            for j in -r..=r {
                for k in -r..=r {
                    let v = self
                        .matrix
                        .to_cartesian([df[0] + i as f64, df[1] + j as f64, df[2] + k as f64]);
                    let d2 = dot(v, v);
                    if d2 < best_d2 {
                        best_d2 = d2;
                        best = v;
                    }
                }
            }
        }
        best
    }
}

pub fn min_image_displacement(fi: Vec3, fj: Vec3, l: &Lattice) -> Result<Vec3> {
    Ok(PeriodicCell::new(l)?.min_image(fi, fj))
}

/// Reduced cell plus the integer matrix `M` with `new_rows = M * old_rows`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NiggliReduction {
    pub lattice: Lattice,
    pub transform: [[i64; 3]; 3],
}

impl NiggliReduction {
    /// `M^{-1}`; fractional coordinates map as `f' = f M^{-1}`.
    pub fn inverse_transform(&self) -> [[i64; 3]; 3] {
        let m = self.transform;
        let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
        debug_assert_eq!(det, 1, "reduction transforms are unimodular");
        let mut inv = [[0i64; 3]; 3];
        for (i, row) in inv.iter_mut().enumerate() {
            for (j, x) in row.iter_mut().enumerate() {
                let (r0, r1) = ((j + 1) % 3, (j + 2) % 3);
                let (c0, c1) = ((i + 1) % 3, (i + 2) % 3);
                *x = (m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0]) * det;
            }
        }
        inv
    }
}

pub fn niggli_reduce(l: &Lattice) -> Result<Lattice> {
    Ok(niggli_reduce_with_transform(l)?.lattice)
}

/// Epsilon-tolerant Krivy-Gruber reduction acting directly on basis vectors.
pub fn niggli_reduce_with_transform(l: &Lattice) -> Result<NiggliReduction> {
    let m0 = params_to_matrix(l)?;
    let eps = 1e-5 * m0.volume().powf(2.0 / 3.0);
    let mut v = m0.rows;
    let mut total: [[i64; 3]; 3] = [[1, 0, 0], [0, 1, 0], [0, 0, 1]];
    let apply = |v: &mut [Vec3; 3], total: &mut [[i64; 3]; 3], t: [[i64; 3]; 3]| {
        let mut nv = [[0.0; 3]; 3];
        let mut nt = [[0i64; 3]; 3];
        for i in 0..3 {
            for k in 0..3 {
                if t[i][k] == 0 {
                    continue;
                }
                for d in 0..3 {
                    nv[i][d] += t[i][k] as f64 * v[k][d];
                    nt[i][d] += t[i][k] * total[k][d];
                }
            }
        }
        *v = nv;
        *total = nt;
    };
    let lt = |x: f64, y: f64| x < y - eps;
    let gt = |x: f64, y: f64| lt(y, x);
    let eq = |x: f64, y: f64| !(lt(x, y) || lt(y, x));
    let sign = |x: f64| if x < 0.0 { -1i64 } else { 1 };

    let mut iterations = 0;
    'outer: loop {
        iterations += 1;
        if iterations > NIGGLI_MAX_ITER {
            return Err(CrystalError::NiggliNoConvergence {
                iterations: NIGGLI_MAX_ITER,
                cell: l.describe(),
            });
        }
        let g6 = |v: &[Vec3; 3]| {
            (
                dot(v[0], v[0]),
                dot(v[1], v[1]),
                dot(v[2], v[2]),
                2.0 * dot(v[1], v[2]),
                2.0 * dot(v[0], v[2]),
                2.0 * dot(v[0], v[1]),
            )
        };
        let (a, b, _, xi, eta, _) = g6(&v);
        // A1
        if gt(a, b) || (eq(a, b) && gt(xi.abs(), eta.abs())) {
            apply(&mut v, &mut total, [[0, -1, 0], [-1, 0, 0], [0, 0, -1]]);
        }
        // A2
        let (_, b, c, _, eta, zeta) = g6(&v);
        if gt(b, c) || (eq(b, c) && gt(eta.abs(), zeta.abs())) {
            apply(&mut v, &mut total, [[-1, 0, 0], [0, 0, -1], [0, -1, 0]]);
            continue 'outer;
        }
        // A3 / A4: sign normalization of the off-diagonal terms
        let (_, _, _, xi, eta, zeta) = g6(&v);
        let cls = |x: f64| {
            if gt(x, 0.0) {
                1
            } else if lt(x, 0.0) {
                -1
            } else {
                0
            }
        };
        let (l1, m1, n1) = (cls(xi), cls(eta), cls(zeta));
        let all_positive_target = l1 * m1 * n1 == 1;
        let flips: [[i64; 3]; 4] = [[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]];
        for f in flips {
            let (s_xi, s_eta, s_zeta) = (f[1] * f[2], f[0] * f[2], f[0] * f[1]);
            let ok = if all_positive_target {
                s_xi * l1 > 0 && s_eta * m1 > 0 && s_zeta * n1 > 0
            } else {
                s_xi * l1 <= 0 && s_eta * m1 <= 0 && s_zeta * n1 <= 0
            };
            if ok {
                if f != [1, 1, 1] {
                    apply(
                        &mut v,
                        &mut total,
                        [[f[0], 0, 0], [0, f[1], 0], [0, 0, f[2]]],
                    );
                }
                break;
            }
        }
        let (a, b, _, xi, eta, zeta) = g6(&v);
        // A5
        if gt(xi.abs(), b)
            || (eq(xi, b) && lt(2.0 * eta, zeta))
            || (eq(xi, -b) && lt(zeta, 0.0))
        {
            let s = sign(xi);
            apply(&mut v, &mut total, [[1, 0, 0], [0, 1, 0], [0, -s, 1]]);
            continue 'outer;
        }
        // A6
        if gt(eta.abs(), a)
            || (eq(eta, a) && lt(2.0 * xi, zeta))
            || (eq(eta, -a) && lt(zeta, 0.0))
        {
            let s = sign(eta);
            apply(&mut v, &mut total, [[1, 0, 0], [0, 1, 0], [-s, 0, 1]]);
            continue 'outer;
        }
        // A7
        if gt(zeta.abs(), a)
            || (eq(zeta, a) && lt(2.0 * xi, eta))
            || (eq(zeta, -a) && lt(eta, 0.0))
        {
            let s = sign(zeta);
            apply(&mut v, &mut total, [[1, 0, 0], [-s, 1, 0], [0, 0, 1]]);
            continue 'outer;
        }
        // A8
        let sum = xi + eta + zeta + a + b;
        if lt(sum, 0.0) || (eq(sum, 0.0) && gt(2.0 * (a + eta) + zeta, 0.0)) {
            apply(&mut v, &mut total, [[1, 0, 0], [0, 1, 0], [1, 1, 1]]);
            continue 'outer;
        }
        break;
    }
    let lattice = LatticeMatrix { rows: v }.to_lattice();
    Ok(NiggliReduction {
        lattice,
        transform: total,
    })
}

pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}
