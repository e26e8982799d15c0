//! Bond graphs, fragment decomposition and canonical atom ordering.
//!
//! The canonical order is computed per connected component by color refinement
//! (seeded with atom types) followed by an individualization-refinement search
//! that keeps the lexicographically least leaf encoding. Automorphisms found
//! between equal leaves prune sibling branches in the same orbit.

use std::cmp::Ordering;

use thiserror::Error;

use crate::crystal::{norm, CrystalStructure};
use crate::elements;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CanonError {
    #[error("invalid bond graph: {0}")]
    InvalidGraph(String),
    #[error("order is not a permutation of 0..{0}")]
    InvalidPermutation(usize),
    #[error("individualization depth exceeded {0} rounds")]
    DepthExceeded(usize),
}

pub type Result<T> = std::result::Result<T, CanonError>;

pub const DEFAULT_BOND_FACTOR: f64 = 1.2;
/// Radius used for elements missing from the table.
const FALLBACK_RADIUS: f64 = 1.5;

pub fn radius(z: u8) -> f64 {
    elements::covalent_radius(z).unwrap_or(FALLBACK_RADIUS)
}

/// Undirected simple graph with atom-type node colors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BondGraph {
    colors: Vec<u8>,
    adj: Vec<Vec<usize>>,
}

impl BondGraph {
    pub fn new(colors: Vec<u8>, edges: &[(usize, usize)]) -> Result<Self> {
        let n = colors.len();
        let mut adj = vec![Vec::new(); n];
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(CanonError::InvalidGraph(format!(
                    "edge ({i}, {j}) out of range for {n} nodes"
                )));
            }
            if i == j {
                return Err(CanonError::InvalidGraph(format!("self-loop on {i}")));
            }
            if adj[i].contains(&j) {
                return Err(CanonError::InvalidGraph(format!("duplicate edge ({i}, {j})")));
            }
            adj[i].push(j);
            adj[j].push(i);
        }
        for a in &mut adj {
            a.sort_unstable();
        }
        Ok(Self { colors, adj })
    }

    pub fn num_nodes(&self) -> usize {
        self.colors.len()
    }

    pub fn colors(&self) -> &[u8] {
        &self.colors
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adj[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adj[i].len()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adj[i].binary_search(&j).is_ok()
    }

    /// Edges as `(i, j)` with `i < j`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, a) in self.adj.iter().enumerate() {
            for &j in a {
                if i < j {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Graph whose node `k` is this graph's node `order[k]`.
    pub fn reordered(&self, order: &[usize]) -> Self {
        let mut pos = vec![0; order.len()];
        for (k, &o) in order.iter().enumerate() {
            pos[o] = k;
        }
        let colors = order.iter().map(|&o| self.colors[o]).collect();
        let edges: Vec<_> = self.edges().iter().map(|&(i, j)| (pos[i], pos[j])).collect();
        Self::new(colors, &edges).expect("relabeling preserves simplicity")
    }

    /// Copy without edges joining a metal to a non-metal.
    pub fn without_metal_links(&self) -> Self {
        let keep: Vec<_> = self
            .edges()
            .into_iter()
            .filter(|&(i, j)| elements::is_metal(self.colors[i]) == elements::is_metal(self.colors[j]))
            .collect();
        Self::new(self.colors.clone(), &keep).expect("subgraph of a simple graph")
    }
}

/// Atoms `i`, `j` bond iff their minimum-image distance is at most
/// `factor * (r_i + r_j)` with covalent radii `r`.
pub fn infer_bonds(s: &CrystalStructure, factor: f64) -> BondGraph {
    let cell = s.cell();
    let types = s.atom_types();
    let f = s.frac();
    let mut edges = Vec::new();
    for i in 0..types.len() {
        for j in i + 1..types.len() {
            let d = norm(cell.min_image(f[i], f[j]));
            if d <= factor * (radius(types[i]) + radius(types[j])) {
                edges.push((i, j));
            }
        }
    }
    BondGraph::new(types.to_vec(), &edges).expect("pairs are distinct")
}

/// Connected components, each sorted ascending, in order of first member.
pub fn connected_components(bg: &BondGraph) -> Vec<Vec<usize>> {
    let n = bg.num_nodes();
    let mut seen = vec![false; n];
    let mut out = Vec::new();
    for start in 0..n {
        if seen[start] {
            continue;
        }
        let mut comp = vec![start];
        seen[start] = true;
        let mut k = 0;
        while k < comp.len() {
            let u = comp[k];
            for &v in bg.neighbors(u) {
                if !seen[v] {
                    seen[v] = true;
                    comp.push(v);
                }
            }
            k += 1;
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

/// Canonical labeling of one component: `order[k]` is the member placed at position `k`.
#[derive(Debug, Clone)]
struct Labeling {
    order: Vec<usize>,
    code: Vec<u64>,
}

/// Connected components in canonical order: by (size, canonical encoding),
/// isomorphic components by smallest member.
pub fn fragments(bg: &BondGraph) -> Vec<Vec<usize>> {
    canonical_fragments(bg)
        .expect("simple graphs never exceed the depth guard")
        .into_iter()
        .map(|(members, _)| members)
        .collect()
}

fn canonical_fragments(bg: &BondGraph) -> Result<Vec<(Vec<usize>, Labeling)>> {
    let mut out = Vec::new();
    for comp in connected_components(bg) {
        let lab = canonical_labeling_of(bg, &comp)?;
        out.push((comp, lab));
    }
    out.sort_by(|(ca, la), (cb, lb)| {
        ca.len()
            .cmp(&cb.len())
            .then_with(|| la.code.cmp(&lb.code))
            .then_with(|| ca[0].cmp(&cb[0]))
    });
    Ok(out)
}

/// A permutation of `0..N`; `order[k]` is the original index of the `k`-th atom.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CanonicalOrder(pub Vec<usize>);

impl CanonicalOrder {
    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn inverse(&self) -> Vec<usize> {
        let mut inv = vec![0; self.0.len()];
        for (k, &o) in self.0.iter().enumerate() {
            inv[o] = k;
        }
        inv
    }
}

pub fn is_permutation(order: &[usize]) -> bool {
    let mut seen = vec![false; order.len()];
    for &o in order {
        if o >= order.len() || seen[o] {
            return false;
        }
        seen[o] = true;
    }
    true
}

/// Fragment-local canonical orders concatenated in canonical fragment order.
pub fn canonical_order(bg: &BondGraph) -> Result<CanonicalOrder> {
    let mut order = Vec::with_capacity(bg.num_nodes());
    for (members, lab) in canonical_fragments(bg)? {
        order.extend(lab.order.iter().map(|&local| members[local]));
    }
    Ok(CanonicalOrder(order))
}

pub fn apply_order(s: &CrystalStructure, order: &[usize]) -> Result<CrystalStructure> {
    if order.len() != s.num_atoms() || !is_permutation(order) {
        return Err(CanonError::InvalidPermutation(s.num_atoms()));
    }
    Ok(s.permuted(order))
}

fn canonical_labeling_of(bg: &BondGraph, members: &[usize]) -> Result<Labeling> {
    let local: std::collections::HashMap<usize, usize> =
        members.iter().enumerate().map(|(k, &m)| (m, k)).collect();
    let adj: Vec<Vec<usize>> = members
        .iter()
        .map(|&m| {
            let mut a: Vec<usize> = bg.neighbors(m).iter().map(|v| local[v]).collect();
            a.sort_unstable();
            a
        })
        .collect();
    let types: Vec<u8> = members.iter().map(|&m| bg.colors()[m]).collect();
    canonical_labeling(&types, &adj)
}

/// Initial colors are ranks of the atom types, so the ordering of color classes
/// is independent of node labels.
fn canonical_labeling(types: &[u8], adj: &[Vec<usize>]) -> Result<Labeling> {
    let mut distinct: Vec<u8> = types.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    let colors: Vec<u32> = types
        .iter()
        .map(|t| distinct.binary_search(t).unwrap() as u32)
        .collect();
    let mut search = Search {
        types,
        adj,
        best: None,
        autos: Vec::new(),
    };
    search.run(colors, &mut Vec::new())?;
    Ok(search.best.expect("at least one leaf"))
}

struct Search<'a> {
    types: &'a [u8],
    adj: &'a [Vec<usize>],
    best: Option<Labeling>,
    autos: Vec<Vec<usize>>,
}

impl Search<'_> {
    fn run(&mut self, colors: Vec<u32>, prefix: &mut Vec<usize>) -> Result<()> {
        let n = self.adj.len();
        if prefix.len() > n {
            return Err(CanonError::DepthExceeded(n));
        }
        let colors = refine(self.adj, colors);
        let Some(cell_color) = first_nonsingleton(&colors) else {
            self.leaf(&colors);
            return Ok(());
        };
        let cell: Vec<usize> = (0..n).filter(|&v| colors[v] == cell_color).collect();
        let mut explored: Vec<usize> = Vec::new();
        for &v in &cell {
            if !explored.is_empty() {
                let orbit = self.orbits(prefix);
                if explored.iter().any(|&w| orbit[w] == orbit[v]) {
                    continue;
                }
            }
            explored.push(v);
            let mut next: Vec<u32> = colors.iter().map(|&c| 2 * c + u32::from(c == cell_color)).collect();
            next[v] = 2 * cell_color;
            prefix.push(v);
            self.run(next, prefix)?;
            prefix.pop();
        }
        Ok(())
    }

    fn leaf(&mut self, colors: &[u32]) {
        let n = colors.len();
        let mut order = vec![0; n];
        for (v, &c) in colors.iter().enumerate() {
            order[c as usize] = v;
        }
        let code = encode(self.types, self.adj, &order);
        match &self.best {
            None => self.best = Some(Labeling { order, code }),
            Some(best) => match code.cmp(&best.code) {
                Ordering::Less => self.best = Some(Labeling { order, code }),
                Ordering::Equal => {
                    // gamma maps this leaf's labeling onto the best one
                    let mut gamma = vec![0; n];
                    for k in 0..n {
                        gamma[order[k]] = best.order[k];
                    }
                    if gamma.iter().enumerate().any(|(i, &g)| i != g) {
                        self.autos.push(gamma);
                    }
                }
                Ordering::Greater => {}
            },
        }
    }

    /// Orbit representatives under the known automorphisms that fix `prefix` pointwise.
    fn orbits(&self, prefix: &[usize]) -> Vec<usize> {
        let n = self.adj.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for g in &self.autos {
            if prefix.iter().any(|&v| g[v] != v) {
                continue;
            }
            for (i, &gi) in g.iter().enumerate() {
                let (a, b) = (find(&mut parent, i), find(&mut parent, gi));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
        (0..n).map(|i| find(&mut parent, i)).collect()
    }
}

/// Equitable refinement. Returns dense ranks; a node's new color is ordered first
/// by its old color, so refinement only ever splits cells in place.
fn refine(adj: &[Vec<usize>], mut colors: Vec<u32>) -> Vec<u32> {
    let mut n_colors = rerank(&mut colors);
    loop {
        let sigs: Vec<(u32, Vec<u32>)> = adj
            .iter()
            .enumerate()
            .map(|(v, a)| {
                let mut nc: Vec<u32> = a.iter().map(|&u| colors[u]).collect();
                nc.sort_unstable();
                (colors[v], nc)
            })
            .collect();
        let mut sorted: Vec<&(u32, Vec<u32>)> = sigs.iter().collect();
        sorted.sort();
        sorted.dedup();
        let next: Vec<u32> = sigs
            .iter()
            .map(|s| sorted.binary_search(&s).unwrap() as u32)
            .collect();
        let count = sorted.len();
        colors = next;
        if count == n_colors {
            return colors;
        }
        n_colors = count;
    }
}

fn rerank(colors: &mut [u32]) -> usize {
    let mut d: Vec<u32> = colors.to_vec();
    d.sort_unstable();
    d.dedup();
    for c in colors.iter_mut() {
        *c = d.binary_search(c).unwrap() as u32;
    }
    d.len()
}

/// Smallest color shared by at least two nodes.
fn first_nonsingleton(colors: &[u32]) -> Option<u32> {
    let mut counts = vec![0usize; colors.len()];
    for &c in colors {
        counts[c as usize] += 1;
    }
    counts.iter().position(|&k| k > 1).map(|c| c as u32)
}

/// Types by position, then each position's sorted neighbor positions.
fn encode(types: &[u8], adj: &[Vec<usize>], order: &[usize]) -> Vec<u64> {
    let n = order.len();
    let mut pos = vec![0; n];
    for (k, &v) in order.iter().enumerate() {
        pos[v] = k;
    }
    let mut code: Vec<u64> = order.iter().map(|&v| types[v] as u64).collect();
    for &v in order {
        let mut nb: Vec<u64> = adj[v].iter().map(|&u| pos[u] as u64).collect();
        nb.sort_unstable();
        code.push(nb.len() as u64);
        code.extend(nb);
    }
    code
}

/// Fragment role used by identifiers and clustering labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FragmentRole {
    Metal,
    Organic,
}

impl FragmentRole {
    pub fn tag(self) -> &'static str {
        match self {
            FragmentRole::Metal => "metal",
            FragmentRole::Organic => "organic",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledFragment {
    pub atoms: Vec<usize>,
    pub role: FragmentRole,
}

/// Building blocks: components after cutting metal/non-metal bonds, so metal
/// clusters and organic linkers separate.
pub fn labeled_fragments(bg: &BondGraph) -> Vec<LabeledFragment> {
    let cut = bg.without_metal_links();
    fragments(&cut)
        .into_iter()
        .map(|atoms| {
            let role = if atoms.iter().any(|&a| elements::is_metal(bg.colors()[a])) {
                FragmentRole::Metal
            } else {
                FragmentRole::Organic
            };
            LabeledFragment { atoms, role }
        })
        .collect()
}
