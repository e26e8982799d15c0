//! Sample scoring: validity criteria, building-block identifiers, VNU and
//! rediscovery accounting, histograms.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canon::{connected_components, infer_bonds, labeled_fragments, radius, BondGraph, FragmentRole};
use crate::crystal::{niggli_reduce, norm, CrystalStructure, Lattice};
use crate::elements;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("{what}: {left} vs {right} entries")]
    LengthMismatch { what: &'static str, left: usize, right: usize },
    #[error("histogram edges must be strictly increasing and at least two")]
    BadEdges,
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// Coordination bounds `(min, max)` by element, counted as bond-graph degree.
pub const CARBON_BOUNDS: (usize, usize) = (2, 4);
pub const NITROGEN_BOUNDS: (usize, usize) = (1, 4);
pub const HYDROGEN_BOUNDS: (usize, usize) = (1, 1);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalThresholds {
    pub bond_factor: f64,
    /// Pairs closer than this multiple of the radius sum overlap.
    pub overlap_factor: f64,
}

impl Default for EvalThresholds {
    fn default() -> Self {
        Self { bond_factor: crate::canon::DEFAULT_BOND_FACTOR, overlap_factor: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ValidityReport {
    pub has_carbon: bool,
    pub has_hydrogen: bool,
    pub has_metal: bool,
    pub has_atomic_overlap: bool,
    pub has_overcoord_c: bool,
    pub has_overcoord_n: bool,
    pub has_overcoord_h: bool,
    pub has_undercoord_c: bool,
    pub has_undercoord_n: bool,
    pub has_lone_molecule: bool,
    pub overall_valid: bool,
}

impl ValidityReport {
    pub const FLAG_NAMES: [&'static str; 10] = [
        "has_carbon",
        "has_hydrogen",
        "has_metal",
        "has_atomic_overlap",
        "has_overcoord_C",
        "has_overcoord_N",
        "has_overcoord_H",
        "has_undercoord_C",
        "has_undercoord_N",
        "has_lone_molecule",
    ];

    pub fn flags(&self) -> [bool; 10] {
        [
            self.has_carbon,
            self.has_hydrogen,
            self.has_metal,
            self.has_atomic_overlap,
            self.has_overcoord_c,
            self.has_overcoord_n,
            self.has_overcoord_h,
            self.has_undercoord_c,
            self.has_undercoord_n,
            self.has_lone_molecule,
        ]
    }

    /// Flags in `FLAG_NAMES` order as `0`/`1` characters.
    pub fn bits(&self) -> String {
        self.flags().iter().map(|&f| if f { '1' } else { '0' }).collect()
    }

    fn finish(mut self) -> Self {
        let f = self.flags();
        self.overall_valid = f[..3].iter().all(|&x| x) && f[3..].iter().all(|&x| !x);
        self
    }
}

/// Scores `s` against the implemented criteria subset.
pub fn validity_check(s: &CrystalStructure, th: &EvalThresholds) -> ValidityReport {
    let types = s.atom_types();
    let bg = infer_bonds(s, th.bond_factor);
    let mut r = ValidityReport {
        has_carbon: types.contains(&6),
        has_hydrogen: types.contains(&1),
        has_metal: types.iter().any(|&z| elements::is_metal(z)),
        ..Default::default()
    };

    let cell = s.cell();
    let f = s.frac();
    'outer: for i in 0..types.len() {
        for j in i + 1..types.len() {
            if norm(cell.min_image(f[i], f[j])) < th.overlap_factor * (radius(types[i]) + radius(types[j])) {
                r.has_atomic_overlap = true;
                break 'outer;
            }
        }
    }

    for (i, &z) in types.iter().enumerate() {
        let d = bg.degree(i);
        match z {
            6 => {
                r.has_undercoord_c |= d < CARBON_BOUNDS.0;
                r.has_overcoord_c |= d > CARBON_BOUNDS.1;
            }
            7 => {
                r.has_undercoord_n |= d < NITROGEN_BOUNDS.0;
                r.has_overcoord_n |= d > NITROGEN_BOUNDS.1;
            }
            1 => r.has_overcoord_h |= d > HYDROGEN_BOUNDS.1,
            _ => {}
        }
    }

    // Components of the full graph: a metal-free one touches no metal.
    r.has_lone_molecule = connected_components(&bg)
        .iter()
        .any(|c| !c.iter().any(|&a| elements::is_metal(types[a])));
    r.finish()
}

/// Hill order: C, then H, then the rest alphabetically; without carbon, all alphabetically.
pub fn hill_formula(types: impl IntoIterator<Item = u8>) -> String {
    let mut counts: BTreeMap<&'static str, usize> = BTreeMap::new();
    for z in types {
        *counts.entry(elements::symbol(z).unwrap_or("X")).or_insert(0) += 1;
    }
    let mut keys: Vec<&str> = counts.keys().copied().collect();
    if counts.contains_key("C") {
        keys.retain(|&k| k != "C" && k != "H");
        if counts.contains_key("H") {
            keys.insert(0, "H");
        }
        keys.insert(0, "C");
    }
    keys.iter()
        .map(|k| match counts[k] {
            1 => k.to_string(),
            n => format!("{k}{n}"),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LatticeFamily {
    Cubic,
    Tetragonal,
    Orthorhombic,
    Hexagonal,
    Monoclinic,
    Triclinic,
}

impl fmt::Display for LatticeFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LatticeFamily::Cubic => "cubic",
            LatticeFamily::Tetragonal => "tetragonal",
            LatticeFamily::Orthorhombic => "orthorhombic",
            LatticeFamily::Hexagonal => "hexagonal",
            LatticeFamily::Monoclinic => "monoclinic",
            LatticeFamily::Triclinic => "triclinic",
        })
    }
}

pub const LENGTH_TOLERANCE: f64 = 0.01;
pub const ANGLE_TOLERANCE_DEG: f64 = 0.5;

/// Buckets the Niggli-reduced cell of `l` by metric equalities.
pub fn lattice_family(l: &Lattice) -> LatticeFamily {
    let r = niggli_reduce(l).unwrap_or(*l);
    let len = r.lengths;
    let ang = r.angles_degrees();
    let eq_len = |i: usize, j: usize| (len[i] - len[j]).abs() <= LENGTH_TOLERANCE * len[i].max(len[j]);
    let near = |a: f64, target: f64| (a - target).abs() <= ANGLE_TOLERANCE_DEG;
    let right: Vec<bool> = ang.iter().map(|&a| near(a, 90.0)).collect();
    let n_right = right.iter().filter(|&&x| x).count();

    if n_right == 3 {
        return match (eq_len(0, 1), eq_len(1, 2), eq_len(0, 2)) {
            (true, true, _) => LatticeFamily::Cubic,
            (true, _, _) | (_, true, _) | (_, _, true) => LatticeFamily::Tetragonal,
            _ => LatticeFamily::Orthorhombic,
        };
    }
    if n_right == 2 {
        // angle k sits between the two other axes
        let k = right.iter().position(|&x| !x).expect("one non-right angle");
        let (i, j) = ((k + 1) % 3, (k + 2) % 3);
        if eq_len(i, j) && (near(ang[k], 120.0) || near(ang[k], 60.0)) {
            return LatticeFamily::Hexagonal;
        }
        return LatticeFamily::Monoclinic;
    }
    LatticeFamily::Triclinic
}

/// `formula[role]` for each building block, in fragment order.
pub fn fragment_tags(s: &CrystalStructure, bond_factor: f64) -> Vec<(FragmentRole, String)> {
    let bg: BondGraph = infer_bonds(s, bond_factor);
    labeled_fragments(&bg)
        .into_iter()
        .map(|f| (f.role, hill_formula(f.atoms.iter().map(|&a| s.atom_types()[a]))))
        .collect()
}

/// Distinct building-block strings such as `C6H6[organic]`, for rediscovery counts.
pub fn components(s: &CrystalStructure, bond_factor: f64) -> BTreeSet<String> {
    fragment_tags(s, bond_factor)
        .into_iter()
        .map(|(role, f)| format!("{f}[{}]", role.tag()))
        .collect()
}

/// Identifier string `blocks|family`.
///
/// Distinct blocks are listed metal clusters first, each group sorted
/// lexicographically, joined by `|`, e.g. `Cu[metal]|C6H6[organic]|cubic`.
pub fn structure_id(s: &CrystalStructure, bond_factor: f64) -> String {
    let blocks: BTreeSet<(FragmentRole, String)> = fragment_tags(s, bond_factor).into_iter().collect();
    let mut parts: Vec<String> = blocks.into_iter().map(|(role, f)| format!("{f}[{}]", role.tag())).collect();
    parts.push(lattice_family(s.lattice()).to_string());
    parts.join("|")
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VnuReport {
    pub total: usize,
    pub id_exists: usize,
    pub valid: usize,
    pub unique: usize,
    pub novel: usize,
    pub novel_unique: usize,
    pub vnu: usize,
}

impl VnuReport {
    fn rate(&self, n: usize) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            n as f64 / self.total as f64
        }
    }

    pub fn rates(&self) -> BTreeMap<&'static str, f64> {
        BTreeMap::from([
            ("id_exists", self.rate(self.id_exists)),
            ("valid", self.rate(self.valid)),
            ("unique", self.rate(self.unique)),
            ("novel", self.rate(self.novel)),
            ("novel_unique", self.rate(self.novel_unique)),
            ("vnu", self.rate(self.vnu)),
        ])
    }
}

/// Novelty against `train_ids`, uniqueness within the sample set.
///
/// A sample without an identifier (`None`) is neither unique nor novel.
pub fn vnu(sample_ids: &[Option<String>], train_ids: &HashSet<String>, valid: &[bool]) -> Result<VnuReport> {
    if sample_ids.len() != valid.len() {
        return Err(EvalError::LengthMismatch { what: "ids vs validity flags", left: sample_ids.len(), right: valid.len() });
    }
    let mut seen: HashMap<&str, usize> = HashMap::new();
    for id in sample_ids.iter().flatten() {
        *seen.entry(id).or_insert(0) += 1;
    }
    let mut r = VnuReport { total: sample_ids.len(), ..Default::default() };
    for (id, &ok) in sample_ids.iter().zip(valid) {
        r.valid += ok as usize;
        let Some(id) = id else { continue };
        r.id_exists += 1;
        let unique = seen[id.as_str()] == 1;
        let novel = !train_ids.contains(id);
        r.unique += unique as usize;
        r.novel += novel as usize;
        r.novel_unique += (unique && novel) as usize;
        r.vnu += (unique && novel && ok) as usize;
    }
    Ok(r)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RediscoveryReport {
    pub unique: usize,
    pub unique_novel: usize,
    pub rediscovered: usize,
    /// `None` when nothing is novel.
    pub rate: Option<f64>,
}

impl RediscoveryReport {
    pub fn from_counts(unique: usize, unique_novel: usize, rediscovered: usize) -> Self {
        let rate = (unique_novel > 0).then(|| rediscovered as f64 / unique_novel as f64);
        Self { unique, unique_novel, rediscovered, rate }
    }
}

impl fmt::Display for RediscoveryReport {
    /// `437 (8.5%)`, or `0 (n/a)` without novel components.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.rate {
            Some(r) => write!(f, "{} ({:.1}%)", self.rediscovered, 100.0 * r),
            None => write!(f, "{} (n/a)", self.rediscovered),
        }
    }
}

pub fn rediscovery(
    samples: &BTreeSet<String>,
    train: &BTreeSet<String>,
    reference: &BTreeSet<String>,
) -> RediscoveryReport {
    let novel: BTreeSet<&String> = samples.difference(train).collect();
    let found = novel.iter().filter(|c| reference.contains(**c)).count();
    RediscoveryReport::from_counts(samples.len(), novel.len(), found)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Histogram {
    pub counts: Vec<usize>,
    pub underflow: usize,
    pub overflow: usize,
}

/// Half-open bins `[e_k, e_{k+1})`; values at or past the last edge overflow.
pub fn histogram(values: &[f64], edges: &[f64]) -> Result<Histogram> {
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(EvalError::BadEdges);
    }
    let mut h = Histogram { counts: vec![0; edges.len() - 1], underflow: 0, overflow: 0 };
    for &v in values {
        if v < edges[0] {
            h.underflow += 1;
        } else if v >= edges[edges.len() - 1] || v.is_nan() {
            h.overflow += 1;
        } else {
            let k = edges.partition_point(|&e| e <= v) - 1;
            h.counts[k] += 1;
        }
    }
    Ok(h)
}

/// One evaluated sample: path, identifier (absent when unparseable), flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleReport {
    pub path: String,
    pub id: Option<String>,
    pub validity: Option<ValidityReport>,
    pub components: Vec<String>,
}

impl SampleReport {
    pub fn evaluate(path: impl Into<String>, s: &CrystalStructure, th: &EvalThresholds) -> Self {
        Self {
            path: path.into(),
            id: Some(structure_id(s, th.bond_factor)),
            validity: Some(validity_check(s, th)),
            components: components(s, th.bond_factor).into_iter().collect(),
        }
    }

    pub fn failed(path: impl Into<String>) -> Self {
        Self { path: path.into(), id: None, validity: None, components: Vec::new() }
    }

    pub fn is_valid(&self) -> bool {
        self.validity.is_some_and(|v| v.overall_valid)
    }

    /// Tab-separated `path id bits`; `-` marks a missing id or report.
    pub fn to_line(&self) -> String {
        format!(
            "{}\t{}\t{}",
            self.path,
            self.id.as_deref().unwrap_or("-"),
            self.validity.map(|v| v.bits()).unwrap_or_else(|| "-".into())
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub vnu: VnuReport,
    pub rates: BTreeMap<String, f64>,
    /// Per-criterion counts of flagged samples, in `FLAG_NAMES` order.
    pub flag_counts: BTreeMap<String, usize>,
    pub rediscovery: Option<RediscoveryReport>,
}

/// Aggregates per-sample reports against training (and optionally reference) sets.
pub fn summarize(
    reports: &[SampleReport],
    train_ids: &HashSet<String>,
    train_components: &BTreeSet<String>,
    reference_components: Option<&BTreeSet<String>>,
) -> EvalSummary {
    let ids: Vec<Option<String>> = reports.iter().map(|r| r.id.clone()).collect();
    let valid: Vec<bool> = reports.iter().map(SampleReport::is_valid).collect();
    let v = vnu(&ids, train_ids, &valid).expect("parallel arrays");
    let mut flag_counts = BTreeMap::new();
    for (k, name) in ValidityReport::FLAG_NAMES.iter().enumerate() {
        let c = reports.iter().filter(|r| r.validity.is_some_and(|x| x.flags()[k])).count();
        flag_counts.insert(name.to_string(), c);
    }
    let rediscovery = reference_components.map(|reference| {
        let samples: BTreeSet<String> = reports.iter().flat_map(|r| r.components.iter().cloned()).collect();
        rediscovery(&samples, train_components, reference)
    });
    EvalSummary {
        rates: v.rates().into_iter().map(|(k, x)| (k.to_string(), x)).collect(),
        vnu: v,
        flag_counts,
        rediscovery,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crystal::{random_translate, Lattice};
    use crate::io::toy_dataset;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn cubic(a: f64) -> Lattice {
        Lattice::new([a; 3], [FRAC_PI_2; 3])
    }

    fn ids(xs: &[&str]) -> Vec<Option<String>> {
        xs.iter().map(|x| Some(x.to_string())).collect()
    }

    /// Cu bonded to a planar C6H6 ring in a 12 Å cube.
    fn cu_benzene() -> CrystalStructure {
        let a = 12.0;
        let (cc, ch) = (1.39, 1.09);
        let center = [6.0, 6.0, 6.0];
        let mut types = vec![29];
        let mut frac = vec![[(6.0 + cc + ch + 1.9) / a, 6.0 / a, 6.0 / a]];
        for k in 0..6 {
            let th = std::f64::consts::PI / 3.0 * k as f64;
            let (c, sn) = (th.cos(), th.sin());
            types.push(6);
            frac.push([(center[0] + cc * c) / a, (center[1] + cc * sn) / a, center[2] / a]);
            types.push(1);
            frac.push([(center[0] + (cc + ch) * c) / a, (center[1] + (cc + ch) * sn) / a, center[2] / a]);
        }
        CrystalStructure::new(types, frac, cubic(a)).unwrap()
    }

    #[test]
    fn grammar_example() {
        assert_eq!(structure_id(&cu_benzene(), 1.2), "Cu[metal]|C6H6[organic]|cubic");
    }

    #[test]
    fn hill_order() {
        assert_eq!(hill_formula([8, 1, 6, 6, 7, 1]), "C2H2NO");
        assert_eq!(hill_formula([8, 1, 1]), "H2O");
        assert_eq!(hill_formula([29]), "Cu");
    }

    #[test]
    fn families() {
        let d = |l: [f64; 3], a: [f64; 3]| lattice_family(&Lattice::from_degrees(l, a));
        assert_eq!(d([5.0; 3], [90.0; 3]), LatticeFamily::Cubic);
        assert_eq!(d([5.0, 5.0, 7.0], [90.0; 3]), LatticeFamily::Tetragonal);
        assert_eq!(d([4.0, 5.0, 7.0], [90.0; 3]), LatticeFamily::Orthorhombic);
        assert_eq!(d([5.0, 5.0, 7.0], [90.0, 90.0, 120.0]), LatticeFamily::Hexagonal);
        assert_eq!(d([4.0, 5.0, 7.0], [90.0, 100.0, 90.0]), LatticeFamily::Monoclinic);
        assert_eq!(d([4.0, 5.0, 7.0], [80.0, 100.0, 95.0]), LatticeFamily::Triclinic);
        // within tolerance
        assert_eq!(d([5.0, 5.03, 4.98], [90.3, 89.8, 90.0]), LatticeFamily::Cubic);
    }

    #[test]
    fn validity_examples() {
        let th = EvalThresholds::default();
        let overlap = CrystalStructure::new(vec![29, 6], vec![[0.2; 3], [0.2; 3]], cubic(8.0)).unwrap();
        assert!(validity_check(&overlap, &th).has_atomic_overlap);

        // CH4 without metal
        let b = 1.09 / 8.0 / 3f64.sqrt();
        let ch4 = CrystalStructure::new(
            vec![6, 1, 1, 1, 1],
            vec![[0.5; 3], [0.5 + b, 0.5 + b, 0.5 + b], [0.5 - b, 0.5 - b, 0.5 + b], [0.5 - b, 0.5 + b, 0.5 - b], [0.5 + b, 0.5 - b, 0.5 - b]],
            cubic(8.0),
        )
        .unwrap();
        let r = validity_check(&ch4, &th);
        assert!(!r.has_metal && r.has_lone_molecule && !r.overall_valid);

        // carbon with five hydrogens
        let mut types = vec![6];
        let mut frac = vec![[0.5; 3]];
        for v in [[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 1.0]] {
            types.push(1);
            frac.push([0.5 + v[0] * 1.1 / 10.0, 0.5 + v[1] * 1.1 / 10.0, 0.5 + v[2] * 1.1 / 10.0]);
        }
        let c5 = CrystalStructure::new(types, frac, cubic(10.0)).unwrap();
        assert!(validity_check(&c5, &th).has_overcoord_c);
    }

    #[test]
    fn toy_frameworks_have_no_lone_molecules() {
        let th = EvalThresholds::default();
        for s in toy_dataset(3, 30, (3, 24)).unwrap() {
            let r = validity_check(&s, &th);
            assert!(r.has_metal && !r.has_lone_molecule && !r.has_atomic_overlap, "{r:?}");
            assert_eq!(validity_check(&s, &th), r);
        }
    }

    #[test]
    fn id_invariant_under_relabel_and_translate() {
        let data = toy_dataset(5, 20, (3, 20)).unwrap();
        for (k, s) in data.iter().enumerate() {
            let id = structure_id(s, 1.2);
            let n = s.num_atoms();
            let order: Vec<usize> = (0..n).map(|i| (i * 7 + k) % n).collect();
            if crate::canon::is_permutation(&order) {
                assert_eq!(structure_id(&s.permuted(&order), 1.2), id);
            }
            let rev: Vec<usize> = (0..n).rev().collect();
            assert_eq!(structure_id(&s.permuted(&rev), 1.2), id);
            let t = random_translate(s, [0.31, 0.77, 0.05 * k as f64 % 1.0]).unwrap();
            assert_eq!(structure_id(&t, 1.2), id);
        }
    }

    #[test]
    fn vnu_examples() {
        let train: HashSet<String> = ["c".to_string()].into();
        let r = vnu(&ids(&["a", "b", "b", "c"]), &train, &[true; 4]).unwrap();
        assert_eq!((r.unique, r.novel, r.novel_unique, r.vnu), (2, 3, 1, 1));
        let same = vnu(&ids(&["x", "x", "x"]), &HashSet::new(), &[true; 3]).unwrap();
        assert_eq!(same.unique, 0);
        assert_eq!(same.novel, 3);
        assert!(vnu(&ids(&["a"]), &train, &[]).is_err());
        let missing = vnu(&[None, Some("a".into())], &train, &[false, true]).unwrap();
        assert_eq!((missing.id_exists, missing.unique, missing.novel), (1, 1, 1));
    }

    #[test]
    fn rediscovery_examples() {
        let r = RediscoveryReport::from_counts(6000, 5158, 437);
        assert_eq!(r.to_string(), "437 (8.5%)");
        let set = |xs: &[&str]| xs.iter().map(|x| x.to_string()).collect::<BTreeSet<_>>();
        let train = set(&["a", "b"]);
        let r = rediscovery(&set(&["a", "c", "d"]), &train, &train);
        assert_eq!((r.unique, r.unique_novel, r.rediscovered), (3, 2, 0));
        let r = rediscovery(&set(&["a"]), &train, &set(&["a"]));
        assert_eq!(r.rate, None);
        assert_eq!(r.to_string(), "0 (n/a)");
    }

    #[test]
    fn histogram_examples() {
        let h = histogram(&[1.0, 2.0, 3.0], &[0.0, 2.0, 4.0]).unwrap();
        assert_eq!(h.counts, vec![1, 2]);
        assert_eq!(histogram(&[], &[0.0, 1.0]).unwrap().counts, vec![0]);
        assert!(histogram(&[1.0], &[1.0, 1.0]).is_err());
        assert!(histogram(&[1.0], &[2.0]).is_err());
        let h = histogram(&[-1.0, 4.0, 5.0], &[0.0, 2.0, 4.0]).unwrap();
        assert_eq!((h.underflow, h.overflow), (1, 2));
    }

    #[test]
    fn summary_serializes() {
        let s = cu_benzene();
        let reports = vec![SampleReport::evaluate("a.cif", &s, &EvalThresholds::default()), SampleReport::failed("b.cif")];
        let sum = summarize(&reports, &HashSet::new(), &BTreeSet::new(), Some(&BTreeSet::new()));
        assert_eq!(sum.vnu.total, 2);
        assert_eq!(sum.vnu.id_exists, 1);
        let json = serde_json::to_string(&sum).unwrap();
        let back: EvalSummary = serde_json::from_str(&json).unwrap();
        assert_eq!(back, sum);
        assert!(reports[1].to_line().ends_with("\t-\t-"));
    }

    proptest! {
        #[test]
        fn histogram_conserves(values in proptest::collection::vec(-10.0f64..10.0, 0..50)) {
            let h = histogram(&values, &[-5.0, -1.0, 0.0, 3.0]).unwrap();
            prop_assert_eq!(h.counts.iter().sum::<usize>() + h.underflow + h.overflow, values.len());
        }

        #[test]
        fn vnu_conjunctions_bounded(raw in proptest::collection::vec(0u8..4, 0..12), valid in proptest::collection::vec(any::<bool>(), 12)) {
            let ids: Vec<Option<String>> = raw.iter().map(|&x| (x < 3).then(|| x.to_string())).collect();
            let train: HashSet<String> = ["0".to_string()].into();
            let r = vnu(&ids, &train, &valid[..ids.len()]).unwrap();
            prop_assert!(r.novel_unique <= r.unique.min(r.novel));
            prop_assert!(r.vnu <= r.novel_unique.min(r.valid));
            prop_assert!(r.id_exists <= r.total);
        }

        #[test]
        fn rediscovery_conserves(s in proptest::collection::btree_set(0u8..10, 0..10), t in proptest::collection::btree_set(0u8..10, 0..10), r in proptest::collection::btree_set(0u8..10, 0..10)) {
            let f = |x: &BTreeSet<u8>| x.iter().map(|v| v.to_string()).collect::<BTreeSet<_>>();
            let rep = rediscovery(&f(&s), &f(&t), &f(&r));
            prop_assert!(rep.rediscovered <= rep.unique_novel && rep.unique_novel <= rep.unique);
        }
    }
}
