//! Synthetic framework-like crystals: a metal at the origin bridged to its own
//! periodic images by small organic linkers (carbon chains or six-membered
//! rings, optionally capped by O/N donors and decorated with H).
//!
//! Every emitted structure is rejected and redrawn unless its geometry makes the
//! 1.2x covalent-radius bond rule recover exactly the intended bonds, with a
//! margin on both sides.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::crystal::{cross, norm, params_to_matrix, CrystalError, CrystalStructure, Lattice, Vec3};
use crate::elements;

pub const TOY_METALS: [u8; 10] = [30, 29, 27, 28, 26, 25, 40, 12, 48, 13];
pub const MIN_TOY_ATOMS: usize = 2;
pub const MAX_TOY_ATOMS: usize = 64;

const C: u8 = 6;
const N: u8 = 7;
const O: u8 = 8;
const H: u8 = 1;

/// Bonded pairs sit at this fraction of the radius sum...
const BOND_SCALE: f64 = 0.92;
/// ...must stay below this one after jitter...
const BONDED_MAX: f64 = 1.1;
/// ...and every other pair and image must stay above this one.
const NONBONDED_MIN: f64 = 1.35;
const JITTER: f64 = 0.03;
const MOTIF_ATTEMPTS: usize = 10_000;
const GEOMETRY_ATTEMPTS: usize = 50;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ToyError {
    #[error("size range {0}..={1} is outside [{MIN_TOY_ATOMS}, {MAX_TOY_ATOMS}] or empty")]
    BadRange(usize, usize),
    #[error("no framework motif fits {0}..={1} atoms")]
    Infeasible(usize, usize),
    #[error(transparent)]
    Structure(#[from] CrystalError),
}

#[derive(Debug, Clone, Copy)]
enum Donor {
    None,
    O,
    N,
}

#[derive(Debug, Clone, Copy)]
enum Body {
    Chain { carbons: usize, hydrogens: bool },
    Ring { hydrogens: bool },
}

#[derive(Debug, Clone, Copy)]
struct Linker {
    donor: Donor,
    body: Body,
    repeats: usize,
}

/// Planar linker: atoms at (along-axis s, perpendicular t), first atom at s = 0.
struct Template {
    atoms: Vec<(u8, f64, f64)>,
    bonds: Vec<(usize, usize)>,
    first: usize,
    last: usize,
}

fn bond_len(a: u8, b: u8) -> f64 {
    BOND_SCALE * (radius(a) + radius(b))
}

fn radius(z: u8) -> f64 {
    elements::covalent_radius(z).expect("toy elements are tabulated")
}

impl Linker {
    fn num_atoms(&self) -> usize {
        let donors = if matches!(self.donor, Donor::None) { 0 } else { 2 };
        let body = match self.body {
            Body::Chain { carbons, hydrogens } => carbons * if hydrogens { 2 } else { 1 },
            Body::Ring { hydrogens } => 6 + if hydrogens { 4 } else { 0 },
        };
        donors + body
    }

    fn template(&self) -> Template {
        let mut atoms: Vec<(u8, f64, f64)> = Vec::new();
        let mut bonds = Vec::new();
        let donor = match self.donor {
            Donor::None => None,
            Donor::O => Some(O),
            Donor::N => Some(N),
        };
        let mut s = 0.0;
        let mut prev: Option<usize> = None;
        if let Some(d) = donor {
            atoms.push((d, 0.0, 0.0));
            prev = Some(0);
            s = bond_len(d, C);
        }
        let cc = bond_len(C, C);
        let ch = bond_len(C, H);
        let tail = match self.body {
            Body::Chain { carbons, hydrogens } => {
                for k in 0..carbons {
                    let idx = atoms.len();
                    atoms.push((C, s, 0.0));
                    if let Some(p) = prev {
                        bonds.push((p, idx));
                    }
                    if hydrogens {
                        let side = if k % 2 == 0 { 1.0 } else { -1.0 };
                        atoms.push((H, s, side * ch));
                        bonds.push((idx, idx + 1));
                    }
                    prev = Some(idx);
                    if k + 1 < carbons {
                        s += cc;
                    }
                }
                prev.unwrap()
            }
            Body::Ring { hydrogens } => {
                let h = cc * 3f64.sqrt() / 2.0;
                let base = atoms.len();
                let ring = [
                    (s, 0.0),
                    (s + cc / 2.0, h),
                    (s + 1.5 * cc, h),
                    (s + 2.0 * cc, 0.0),
                    (s + 1.5 * cc, -h),
                    (s + cc / 2.0, -h),
                ];
                for &(rs, rt) in &ring {
                    atoms.push((C, rs, rt));
                }
                for k in 0..6 {
                    bonds.push((base + k, base + (k + 1) % 6));
                }
                if let Some(p) = prev {
                    bonds.push((p, base));
                }
                if hydrogens {
                    let center = s + cc;
                    for k in [1, 2, 4, 5] {
                        let (rs, rt) = ring[k];
                        let (ds, dt) = ((rs - center) / cc, rt / cc);
                        atoms.push((H, rs + ch * ds, rt + ch * dt));
                        bonds.push((base + k, atoms.len() - 1));
                    }
                }
                s += 2.0 * cc;
                base + 3
            }
        };
        let last = if let Some(d) = donor {
            atoms.push((d, s + bond_len(d, C), 0.0));
            bonds.push((tail, atoms.len() - 1));
            atoms.len() - 1
        } else {
            tail
        };
        Template { atoms, bonds, first: 0, last }
    }
}

#[derive(Debug, Clone)]
struct Motif {
    metal: u8,
    linkers: Vec<Linker>,
}

impl Motif {
    fn num_atoms(&self) -> usize {
        1 + self
            .linkers
            .iter()
            .map(|l| l.repeats * l.num_atoms() + l.repeats - 1)
            .sum::<usize>()
    }
}

fn draw_linker(rng: &mut impl Rng) -> Linker {
    let donor = match rng.random_range(0..3) {
        0 => Donor::None,
        1 => Donor::O,
        _ => Donor::N,
    };
    let hydrogens = rng.random_bool(0.6);
    let body = if rng.random_bool(0.3) {
        Body::Ring { hydrogens }
    } else {
        // a lone carbon would bond to the same metal twice
        let min = if matches!(donor, Donor::None) { 2 } else { 1 };
        Body::Chain { carbons: rng.random_range(min..=4), hydrogens }
    };
    let repeats = if rng.random_bool(0.2) { 2 } else { 1 };
    Linker { donor, body, repeats }
}

fn draw_motif(rng: &mut impl Rng, lo: usize, hi: usize) -> Result<Motif, ToyError> {
    for _ in 0..MOTIF_ATTEMPTS {
        let metal = TOY_METALS[rng.random_range(0..TOY_METALS.len())];
        let n_axes = rng.random_range(1..=3);
        let linkers = (0..n_axes).map(|_| draw_linker(rng)).collect();
        let m = Motif { metal, linkers };
        if (lo..=hi).contains(&m.num_atoms()) {
            return Ok(m);
        }
    }
    Err(ToyError::Infeasible(lo, hi))
}

fn unit(v: Vec3) -> Vec3 {
    let n = norm(v);
    [v[0] / n, v[1] / n, v[2] / n]
}

fn random_perpendicular(rng: &mut impl Rng, u: Vec3) -> Vec3 {
    loop {
        let r: Vec3 = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let p = cross(u, r);
        if norm(p) > 0.1 {
            return unit(p);
        }
    }
}

struct Placed {
    types: Vec<u8>,
    cart: Vec<Vec3>,
    bonds: Vec<(usize, usize)>,
    lattice: Lattice,
}

fn place(rng: &mut impl Rng, motif: &Motif) -> Result<Placed, ToyError> {
    let templates: Vec<Template> = motif.linkers.iter().map(|l| l.template()).collect();
    let mut lengths = [0.0; 3];
    let mut segs = [0.0; 3];
    for axis in 0..3 {
        lengths[axis] = match (motif.linkers.get(axis), templates.get(axis)) {
            (Some(l), Some(t)) => {
                let first = t.atoms[t.first].0;
                let last = t.atoms[t.last].0;
                let seg = bond_len(motif.metal, first) + t.atoms[t.last].1 + bond_len(last, motif.metal);
                segs[axis] = seg;
                seg * l.repeats as f64
            }
            _ => rng.random_range(6.5..9.0),
        };
    }
    let deg = [
        rng.random_range(80.0..100.0),
        rng.random_range(80.0..100.0),
        rng.random_range(80.0..100.0),
    ];
    let lattice = Lattice::from_degrees(lengths, deg);
    let m = params_to_matrix(&lattice)?;

    let mut types = vec![motif.metal];
    let mut cart: Vec<Vec3> = vec![[0.0; 3]];
    let mut bonds = Vec::new();
    for (axis, (l, t)) in motif.linkers.iter().zip(&templates).enumerate() {
        let u = unit(m.rows[axis]);
        let p = random_perpendicular(rng, u);
        let offset = bond_len(motif.metal, t.atoms[t.first].0);
        let mut metal_here = 0;
        for rep in 0..l.repeats {
            let base = rep as f64 * segs[axis];
            let start = types.len();
            for &(z, s, tt) in &t.atoms {
                types.push(z);
                let along = base + offset + s;
                cart.push([
                    along * u[0] + tt * p[0],
                    along * u[1] + tt * p[1],
                    along * u[2] + tt * p[2],
                ]);
            }
            for &(a, b) in &t.bonds {
                bonds.push((start + a, start + b));
            }
            bonds.push((metal_here, start + t.first));
            let metal_next = if rep + 1 < l.repeats {
                types.push(motif.metal);
                let along = base + segs[axis];
                cart.push([along * u[0], along * u[1], along * u[2]]);
                types.len() - 1
            } else {
                0
            };
            bonds.push((start + t.last, metal_next));
            metal_here = metal_next;
        }
    }
    for x in &mut cart {
        for c in x.iter_mut() {
            *c += rng.random_range(-JITTER..JITTER);
        }
    }
    Ok(Placed { types, cart, bonds, lattice })
}

/// Exhaustive check over neighboring images that intended bonds are unique and
/// short, and every other contact is clearly long.
fn geometry_ok(p: &Placed) -> Result<bool, ToyError> {
    let m = params_to_matrix(&p.lattice)?;
    let n = p.types.len();
    let mut intended = vec![vec![false; n]; n];
    for &(a, b) in &p.bonds {
        if a == b || intended[a][b] {
            return Ok(false);
        }
        intended[a][b] = true;
        intended[b][a] = true;
    }
    for i in 0..n {
        for j in i..n {
            let sum = radius(p.types[i]) + radius(p.types[j]);
            let mut short = 0;
            for a in -1..=1i32 {
                for b in -1..=1i32 {
                    for c in -1..=1i32 {
                        if i == j && a == 0 && b == 0 && c == 0 {
                            continue;
                        }
                        let t = m.to_cartesian([a as f64, b as f64, c as f64]);
                        let d = norm([
                            p.cart[j][0] + t[0] - p.cart[i][0],
                            p.cart[j][1] + t[1] - p.cart[i][1],
                            p.cart[j][2] + t[2] - p.cart[i][2],
                        ]);
                        if d <= BONDED_MAX * sum {
                            short += 1;
                        } else if d < NONBONDED_MIN * sum {
                            return Ok(false);
                        }
                    }
                }
            }
            let want = usize::from(intended[i][j]);
            if short != want {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

fn one_structure(rng: &mut impl Rng, lo: usize, hi: usize) -> Result<CrystalStructure, ToyError> {
    loop {
        let motif = draw_motif(rng, lo, hi)?;
        for _ in 0..GEOMETRY_ATTEMPTS {
            let placed = place(rng, &motif)?;
            if !geometry_ok(&placed)? {
                continue;
            }
            let m = params_to_matrix(&placed.lattice)?;
            let frac = placed.cart.iter().map(|&x| m.to_fractional(x)).collect();
            return Ok(CrystalStructure::ingest(placed.types, frac, placed.lattice)?);
        }
    }
}

/// `count` structures with atom counts in `size_range` (inclusive), deterministic per seed.
/// The smallest motif has 3 atoms, so a range of exactly `2..=2` is infeasible.
pub fn toy_dataset(seed: u64, count: usize, size_range: (usize, usize)) -> Result<Vec<CrystalStructure>, ToyError> {
    let (lo, hi) = size_range;
    if lo < MIN_TOY_ATOMS || hi > MAX_TOY_ATOMS || lo > hi {
        return Err(ToyError::BadRange(lo, hi));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| one_structure(&mut rng, lo, hi)).collect()
}
