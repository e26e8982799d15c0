//! Graph construction and fixed feature encoders.
//!
//! Node index spaces: local edges index local nodes; global edges index the
//! joint set `[global nodes..., local nodes...]`.

use std::f64::consts::PI;
use std::sync::Arc;

use thiserror::Error;

use crate::config::RunConfig;
use crate::crystal::{centered, dot, CrystalStructure, Vec3, MAX_ANGLE, MIN_ANGLE};
use crate::tensor::{Tape, Tensor, TensorError, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeaturizeError {
    #[error("distance must be positive, got {0}")]
    NonPositiveDistance(f64),
    #[error("invalid feature config: {0}")]
    Config(String),
    #[error("invalid graph: {0}")]
    Graph(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, FeaturizeError>;

/// Distances below this count as coincident atoms.
pub const MIN_DISTANCE: f64 = 1e-6;
/// Centers for lattice-length RBFs span `[0, LENGTH_RBF_MAX]` Å.
pub const LENGTH_RBF_MAX: f64 = 32.0;

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderFeatureConfig {
    pub k_neighbors: usize,
    pub r_cut: f64,
    pub n_bessel: usize,
    pub n_sinusoidal: usize,
    pub n_rbf: usize,
    pub vocab_size: usize,
}

impl Default for EncoderFeatureConfig {
    fn default() -> Self {
        Self::from_run(&RunConfig::default())
    }
}

impl EncoderFeatureConfig {
    pub fn from_run(c: &RunConfig) -> Self {
        Self {
            k_neighbors: c.k_neighbors,
            r_cut: c.r_cut,
            n_bessel: c.n_bessel,
            n_sinusoidal: c.n_sinusoidal,
            n_rbf: c.n_rbf,
            vocab_size: c.vocab_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_neighbors == 0 || self.n_bessel == 0 || self.n_sinusoidal == 0 || self.n_rbf == 0 || self.vocab_size == 0 {
            return Err(FeaturizeError::Config("all counts must be >= 1".into()));
        }
        if !(self.r_cut > 0.0) {
            return Err(FeaturizeError::Config("r_cut must be > 0".into()));
        }
        Ok(())
    }

    pub fn lattice_width(&self) -> usize {
        6 * self.n_rbf
    }

    pub fn local_node_width(&self) -> usize {
        self.vocab_size + 6 * self.n_sinusoidal + self.lattice_width()
    }

    pub fn local_edge_width(&self) -> usize {
        self.n_bessel + 3 + self.lattice_width()
    }

    pub fn global_node_width(&self) -> usize {
        self.lattice_width()
    }

    pub fn global_edge_width(&self) -> usize {
        self.lattice_width()
    }
}

/// Directed edge: messages flow from `sender` (an image of atom j) to `receiver` i.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PbcEdge {
    pub receiver: usize,
    pub sender: usize,
    /// Lattice translation applied to the sender's wrapped position.
    pub offset: [i32; 3],
    /// Cartesian vector from receiver to the sender image.
    pub disp: Vec3,
    pub dist: f64,
}

/// The `k` nearest periodic images of every atom (self-images included), ordered
/// per receiver by (distance, offset, sender). The cutoff only shapes features.
pub fn knn_edges_pbc(s: &CrystalStructure, k: usize) -> Vec<PbcEdge> {
    let m = s.matrix();
    let f = s.frac();
    let n = f.len();
    let spacings = m.plane_spacings();
    let mut out = Vec::with_capacity(n * k);
    for i in 0..n {
        let candidates = |range: [i32; 3]| {
            let mut c = Vec::new();
            for (j, fj) in f.iter().enumerate() {
                for a in -range[0]..=range[0] {
                    for b in -range[1]..=range[1] {
                        for cc in -range[2]..=range[2] {
                            if i == j && a == 0 && b == 0 && cc == 0 {
                                continue;
                            }
                            let off = [a, b, cc];
                            let df = [
                                fj[0] + a as f64 - f[i][0],
                                fj[1] + b as f64 - f[i][1],
                                fj[2] + cc as f64 - f[i][2],
                            ];
                            let disp = m.to_cartesian(df);
                            let dist = dot(disp, disp).sqrt();
                            c.push(PbcEdge { receiver: i, sender: j, offset: off, disp, dist });
                        }
                    }
                }
            }
            c
        };
        // any shell holding >= k candidates bounds the k-th distance from above
        let mut shell = 1;
        let mut first = candidates([shell; 3]);
        while first.len() < k {
            shell += 1;
            first = candidates([shell; 3]);
        }
        let mut d: Vec<f64> = first.iter().map(|e| e.dist).collect();
        d.sort_by(f64::total_cmp);
        let bound = d[k - 1];
        // positions differ by less than one cell, so |offset| <= bound / spacing + 1 suffices
        let range = spacings.map(|sp| ((bound / sp).floor() as i32 + 1).max(shell));
        let mut all = if range == [shell; 3] { first } else { candidates(range) };
        all.sort_by(|x, y| {
            x.dist
                .total_cmp(&y.dist)
                .then_with(|| x.offset.cmp(&y.offset))
                .then_with(|| x.sender.cmp(&y.sender))
        });
        out.extend(all.into_iter().take(k));
    }
    out
}

/// `sqrt(2/r_cut) * sin(m pi d / r_cut) / d` for m = 1..=n.
pub fn bessel_encode(d: f64, r_cut: f64, n: usize) -> Result<Vec<f64>> {
    if !(d > 0.0) {
        return Err(FeaturizeError::NonPositiveDistance(d));
    }
    let pref = (2.0 / r_cut).sqrt();
    Ok((1..=n)
        .map(|m| pref * (m as f64 * PI * d / r_cut).sin() / d)
        .collect())
}

/// Edge radial features: the Bessel basis inside the cutoff, zero beyond it, and
/// the `d -> 0` limit for coincident atoms.
fn radial_features(d: f64, r_cut: f64, n: usize) -> Vec<f64> {
    if d >= r_cut {
        vec![0.0; n]
    } else if d < MIN_DISTANCE {
        let pref = (2.0 / r_cut).sqrt();
        (1..=n).map(|m| pref * m as f64 * PI / r_cut).collect()
    } else {
        bessel_encode(d, r_cut, n).expect("positive distance")
    }
}

/// `(1 - (d/r_cut)^2)^2` inside the cutoff, 0 outside.
pub fn cutoff_envelope(d: f64, r_cut: f64) -> f64 {
    if d >= r_cut {
        0.0
    } else {
        let x = d / r_cut;
        (1.0 - x * x).powi(2)
    }
}

/// `(sin(2 pi 2^m f), cos(2 pi 2^m f))` for m = 0..n.
pub fn sinusoidal_encode(f: f64, n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * n);
    for m in 0..n {
        let w = 2.0 * PI * (1u64 << m) as f64 * f;
        out.push(w.sin());
        out.push(w.cos());
    }
    out
}

pub fn rbf_encode(x: f64, centers: &[f64], width: f64) -> Vec<f64> {
    centers
        .iter()
        .map(|c| (-(x - c).powi(2) / (2.0 * width * width)).exp())
        .collect()
}

/// `n` evenly spaced centers on `[lo, hi]` and their spacing as the width.
pub fn linspace_centers(lo: f64, hi: f64, n: usize) -> (Vec<f64>, f64) {
    if n == 1 {
        return (vec![(lo + hi) / 2.0], hi - lo);
    }
    let step = (hi - lo) / (n - 1) as f64;
    ((0..n).map(|i| lo + step * i as f64).collect(), step)
}

pub fn lattice_features(s: &CrystalStructure, n_rbf: usize) -> Vec<f64> {
    let (lc, lw) = linspace_centers(0.0, LENGTH_RBF_MAX, n_rbf);
    let (ac, aw) = linspace_centers(MIN_ANGLE, MAX_ANGLE, n_rbf);
    let l = s.lattice();
    let mut out = Vec::with_capacity(6 * n_rbf);
    for &x in &l.lengths {
        out.extend(rbf_encode(x, &lc, lw));
    }
    for &x in &l.angles {
        out.extend(rbf_encode(x, &ac, aw));
    }
    out
}

pub fn one_hot(z: u8, vocab: usize) -> Vec<f64> {
    let mut v = vec![0.0; vocab];
    if (1..=vocab).contains(&(z as usize)) {
        v[z as usize - 1] = 1.0;
    }
    v
}

/// Index of atomic number `z` in a one-hot/probability row.
pub fn type_index(z: u8) -> usize {
    z as usize - 1
}

pub fn index_type(i: usize) -> u8 {
    (i + 1) as u8
}

/// Edge lists plus the per-edge gate multiplier for distance smoothing.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub n_local: usize,
    pub n_global: usize,
    pub local_senders: Arc<[usize]>,
    pub local_receivers: Arc<[usize]>,
    /// Joint indices: globals `0..n_global`, then locals.
    pub global_senders: Arc<[usize]>,
    pub global_receivers: Arc<[usize]>,
    pub local_gate_scale: Option<Arc<[f64]>>,
}

impl Topology {
    pub fn n_local_edges(&self) -> usize {
        self.local_senders.len()
    }

    pub fn n_global_edges(&self) -> usize {
        self.global_senders.len()
    }

    pub fn n_joint(&self) -> usize {
        self.n_local + self.n_global
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(FeaturizeError::Graph(m));
        if self.local_senders.len() != self.local_receivers.len() {
            return bad("local sender/receiver lengths differ".into());
        }
        if self.global_senders.len() != self.global_receivers.len() {
            return bad("global sender/receiver lengths differ".into());
        }
        if let Some(g) = &self.local_gate_scale {
            if g.len() != self.local_senders.len() {
                return bad("gate scale length differs from local edge count".into());
            }
        }
        for &x in self.local_senders.iter().chain(self.local_receivers.iter()) {
            if x >= self.n_local {
                return bad(format!("local edge endpoint {x} >= {}", self.n_local));
            }
        }
        for &x in self.global_senders.iter().chain(self.global_receivers.iter()) {
            if x >= self.n_joint() {
                return bad(format!("global edge endpoint {x} >= {}", self.n_joint()));
            }
        }
        Ok(())
    }
}

/// A featurized hierarchical graph with concrete feature matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct HierGraph {
    pub topology: Topology,
    pub local_nodes: Tensor,
    pub local_edges: Tensor,
    pub global_nodes: Tensor,
    pub global_edges: Tensor,
}

/// Feature matrices living on a tape.
#[derive(Debug, Clone, Copy)]
pub struct GraphVars {
    pub local_nodes: Var,
    pub local_edges: Var,
    pub global_nodes: Var,
    pub global_edges: Var,
}

impl HierGraph {
    pub fn bind(&self, tape: &mut Tape) -> GraphVars {
        GraphVars {
            local_nodes: tape.constant(self.local_nodes.clone()),
            local_edges: tape.constant(self.local_edges.clone()),
            global_nodes: tape.constant(self.global_nodes.clone()),
            global_edges: tape.constant(self.global_edges.clone()),
        }
    }
}

fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Tensor> {
    Ok(Tensor::matrix(rows, cols, data)?)
}

/// Encoder input graph: k-NN local edges with distance smoothing, one global node
/// holding the lattice, and an edge from every atom to it. Node positions are
/// encoded in the centered frame of [`centered`].
pub fn build_encoder_graph(s: &CrystalStructure, cfg: &EncoderFeatureConfig) -> Result<HierGraph> {
    cfg.validate()?;
    let n = s.num_atoms();
    let lat = lattice_features(s, cfg.n_rbf);

    // positions enter relative to the circular centroid, so translates featurize identically
    let frame = centered(s);
    let mut nodes = Vec::with_capacity(n * cfg.local_node_width());
    for (&z, f) in s.atom_types().iter().zip(frame.frac()) {
        nodes.extend(one_hot(z, cfg.vocab_size));
        for &x in f {
            nodes.extend(sinusoidal_encode(x, cfg.n_sinusoidal));
        }
        nodes.extend_from_slice(&lat);
    }

    let edges = knn_edges_pbc(s, cfg.k_neighbors);
    let mut efeat = Vec::with_capacity(edges.len() * cfg.local_edge_width());
    let mut senders = Vec::with_capacity(edges.len());
    let mut receivers = Vec::with_capacity(edges.len());
    let mut gate = Vec::with_capacity(edges.len());
    for e in &edges {
        senders.push(e.sender);
        receivers.push(e.receiver);
        efeat.extend(radial_features(e.dist, cfg.r_cut, cfg.n_bessel));
        if e.dist < MIN_DISTANCE {
            efeat.extend([0.0; 3]);
        } else {
            efeat.extend(e.disp.map(|x| x / e.dist));
        }
        efeat.extend_from_slice(&lat);
        gate.push(cutoff_envelope(e.dist, cfg.r_cut));
    }

    let topology = Topology {
        n_local: n,
        n_global: 1,
        local_senders: senders.into(),
        local_receivers: receivers.into(),
        global_senders: (1..=n).collect::<Vec<_>>().into(),
        global_receivers: vec![0; n].into(),
        local_gate_scale: Some(gate.into()),
    };
    topology.validate()?;
    Ok(HierGraph {
        local_nodes: matrix(n, cfg.local_node_width(), nodes)?,
        local_edges: matrix(edges.len(), cfg.local_edge_width(), efeat)?,
        global_nodes: matrix(1, cfg.global_node_width(), lat.clone())?,
        global_edges: matrix(n, cfg.global_edge_width(), lat.repeat(n))?,
        topology,
    })
}

/// `(sin(pi i / 2^m), cos(pi i / 2^m))` for position `i` and m = 0..n.
pub fn order_embedding(n_nodes: usize, n_freq: usize) -> Tensor {
    let mut data = Vec::with_capacity(n_nodes * 2 * n_freq);
    for i in 0..n_nodes {
        for m in 0..n_freq {
            let w = PI * i as f64 / (1u64 << m) as f64;
            data.push(w.sin());
            data.push(w.cos());
        }
    }
    Tensor::matrix(n_nodes, 2 * n_freq, data).expect("shape")
}

/// Inputs to the fully connected graph builder.
#[derive(Debug, Clone, Copy)]
pub struct DenseInputs {
    /// `N x D` local latents.
    pub z_local: Var,
    /// `1 x D` global latent.
    pub z_global: Var,
    /// Extra per-node columns (order indices, conditioning), `N x e`.
    pub node_extra: Option<Var>,
    /// Extra per-edge columns in dense edge order, `N(N-1) x e`.
    pub edge_extra: Option<Var>,
    /// Extra global-node columns, `1 x e`.
    pub global_extra: Option<Var>,
}

/// Dense edge list: receivers in order, senders ascending, no self-loops.
pub fn dense_edge_list(n: usize) -> (Vec<usize>, Vec<usize>) {
    let mut s = Vec::with_capacity(n * n.saturating_sub(1));
    let mut r = Vec::with_capacity(s.capacity());
    for i in 0..n {
        for j in 0..n {
            if i != j {
                r.push(i);
                s.push(j);
            }
        }
    }
    (s, r)
}

/// Fully connected local graph over latent rows plus one global node that sends
/// an edge to every local node. Local edge features are `[z_receiver, z_sender]`,
/// global edge features `[z_global, z_receiver]`.
pub fn build_dense_graph(tape: &mut Tape, inp: DenseInputs) -> Result<(Topology, GraphVars)> {
    let n = tape.shape(inp.z_local)[0];
    if n < 1 {
        return Err(FeaturizeError::Graph("dense graph needs at least one local node".into()));
    }
    if tape.shape(inp.z_global)[0] != 1 {
        return Err(FeaturizeError::Graph("expected exactly one global latent row".into()));
    }
    let (senders, receivers) = dense_edge_list(n);
    let senders: Arc<[usize]> = senders.into();
    let receivers: Arc<[usize]> = receivers.into();

    let local_nodes = match inp.node_extra {
        Some(x) => tape.concat_cols(&[inp.z_local, x])?,
        None => inp.z_local,
    };
    let zr = tape.gather_rows(inp.z_local, receivers.clone())?;
    let zs = tape.gather_rows(inp.z_local, senders.clone())?;
    let mut parts = vec![zr, zs];
    parts.extend(inp.edge_extra);
    let local_edges = tape.concat_cols(&parts)?;
    let global_nodes = match inp.global_extra {
        Some(x) => tape.concat_cols(&[inp.z_global, x])?,
        None => inp.z_global,
    };
    let zg = tape.gather_rows(inp.z_global, vec![0; n].into())?;
    let global_edges = tape.concat_cols(&[zg, inp.z_local])?;

    let topology = Topology {
        n_local: n,
        n_global: 1,
        local_senders: senders,
        local_receivers: receivers,
        global_senders: vec![0; n].into(),
        global_receivers: (1..=n).collect::<Vec<_>>().into(),
        local_gate_scale: None,
    };
    topology.validate()?;
    Ok((topology, GraphVars { local_nodes, local_edges, global_nodes, global_edges }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crystal::{random_translate, Lattice};
    use std::f64::consts::FRAC_PI_2;

    fn cubic(a: f64) -> Lattice {
        Lattice::new([a; 3], [FRAC_PI_2; 3])
    }

    #[test]
    fn single_atom_six_self_images() {
        let s = CrystalStructure::new(vec![6], vec![[0.0; 3]], cubic(4.0)).unwrap();
        let e = knn_edges_pbc(&s, 6);
        assert_eq!(e.len(), 6);
        assert!(e.iter().all(|x| (x.dist - 4.0).abs() < 1e-12 && x.sender == 0));
    }

    #[test]
    fn two_atoms_pick_each_other() {
        let s = CrystalStructure::new(vec![6, 6], vec![[0.0; 3], [0.5, 0.0, 0.0]], cubic(4.0)).unwrap();
        let e = knn_edges_pbc(&s, 1);
        assert_eq!(e.len(), 2);
        assert_eq!((e[0].receiver, e[0].sender), (0, 1));
        assert_eq!((e[1].receiver, e[1].sender), (1, 0));
        assert!(e.iter().all(|x| (x.dist - 2.0).abs() < 1e-12));
    }

    #[test]
    fn large_k_grows_the_shell() {
        let s = CrystalStructure::new(vec![6], vec![[0.0; 3]], cubic(3.0)).unwrap();
        let e = knn_edges_pbc(&s, 40);
        assert_eq!(e.len(), 40);
        // 6 at a, 12 at a*sqrt2, 8 at a*sqrt3, 6 at 2a, then 24 at a*sqrt5
        assert!((e[26].dist - 6.0).abs() < 1e-12 && (e[32].dist - 3.0 * 5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn bessel_examples() {
        let r = 6.0;
        assert!(bessel_encode(r, r, 8).unwrap().iter().all(|x| x.abs() < 1e-12));
        let half = bessel_encode(r / 2.0, r, 2).unwrap();
        assert!(half[1].abs() < 1e-12);
        let expect = (2.0 / r).sqrt() * (PI / 2.0).sin() / (r / 2.0);
        assert!((half[0] - expect).abs() < 1e-15);
        assert!(bessel_encode(0.0, r, 2).is_err());
        assert!(bessel_encode(-1.0, r, 2).is_err());
    }

    #[test]
    fn sinusoid_examples() {
        let z = sinusoidal_encode(0.0, 4);
        for m in 0..4 {
            assert_eq!(z[2 * m], 0.0);
            assert_eq!(z[2 * m + 1], 1.0);
        }
        let q = sinusoidal_encode(0.25, 1);
        assert!((q[0] - 1.0).abs() < 1e-15 && q[1].abs() < 1e-15);
        let a = sinusoidal_encode(0.3, 4);
        let b = sinusoidal_encode((0.3f64 + 1.0) % 1.0, 4);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn rbf_examples() {
        let c = [1.0, 2.0, 3.0];
        assert_eq!(rbf_encode(2.0, &c, 0.5)[1], 1.0);
        assert!((rbf_encode(2.5, &[2.0], 0.5)[0] - (-0.5f64).exp()).abs() < 1e-15);
        let g: Vec<f64> = (0..20).map(|k| rbf_encode(2.0 + 0.1 * k as f64, &[2.0], 0.5)[0]).collect();
        assert!(g.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn encoder_graph_counts() {
        let s = CrystalStructure::new(vec![6, 8, 1], vec![[0.1; 3], [0.3; 3], [0.7, 0.2, 0.5]], cubic(5.0)).unwrap();
        let cfg = EncoderFeatureConfig::default();
        let g = build_encoder_graph(&s, &cfg).unwrap();
        assert_eq!(g.local_nodes.shape(), &[3, cfg.local_node_width()]);
        assert_eq!(g.topology.n_local_edges(), 3 * cfg.k_neighbors);
        assert_eq!(g.global_nodes.rows(), 1);
        assert_eq!(g.topology.n_global_edges(), 3);
    }

    fn sorted_rows(t: &Tensor, rows: impl Iterator<Item = usize>) -> Vec<Vec<f64>> {
        let mut v: Vec<Vec<f64>> = rows.map(|r| t.row(r).to_vec()).collect();
        v.sort_by(|a, b| a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal));
        v
    }

    #[test]
    fn edge_features_translation_invariant() {
        let s = CrystalStructure::new(vec![6, 8, 1], vec![[0.1; 3], [0.3; 3], [0.7, 0.2, 0.5]], cubic(5.0)).unwrap();
        let t = random_translate(&s, [0.37, 0.81, 0.05]).unwrap();
        let cfg = EncoderFeatureConfig::default();
        let (g, h) = (build_encoder_graph(&s, &cfg).unwrap(), build_encoder_graph(&t, &cfg).unwrap());
        for i in 0..3 {
            let rows = |x: &HierGraph| {
                let idx: Vec<usize> = (0..x.topology.n_local_edges()).filter(|&e| x.topology.local_receivers[e] == i).collect();
                sorted_rows(&x.local_edges, idx.into_iter())
            };
            for (a, b) in rows(&g).iter().zip(rows(&h)) {
                for (x, y) in a.iter().zip(&b) {
                    assert!((x - y).abs() < 1e-10);
                }
            }
        }
        for (x, y) in g.local_nodes.data().iter().zip(h.local_nodes.data()) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn dense_graph_counts_and_values() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::matrix(4, 2, (0..8).map(|x| x as f64).collect()).unwrap());
        let g = tape.constant(Tensor::matrix(1, 2, vec![9.0, 10.0]).unwrap());
        let inp = DenseInputs { z_local: z, z_global: g, node_extra: None, edge_extra: None, global_extra: None };
        let (top, vars) = build_dense_graph(&mut tape, inp).unwrap();
        assert_eq!(top.n_local_edges(), 12);
        assert_eq!(top.n_global_edges(), 4);
        let e = tape.value(vars.local_edges);
        // edge 0: receiver 0, sender 1
        assert_eq!(e.row(0), &[0.0, 1.0, 2.0, 3.0]);
        assert_eq!(tape.value(vars.global_edges).row(2), &[9.0, 10.0, 4.0, 5.0]);
    }

    #[test]
    fn order_embedding_breaks_permutation_symmetry() {
        let o = order_embedding(4, 8);
        assert_eq!(o.shape(), &[4, 16]);
        assert_ne!(o.row(1), o.row(2));
        let z = Tensor::matrix(4, 1, vec![0.3, 0.3, 0.9, 0.1]).unwrap();
        // swapping rows 0 and 2 of z leaves the multiset of (z_i, order_i) changed
        let pairs = |zz: &[f64]| {
            let mut p: Vec<(u64, Vec<u64>)> =
                (0..4).map(|i| (zz[i].to_bits(), o.row(i).iter().map(|x| x.to_bits()).collect())).collect();
            p.sort();
            p
        };
        let swapped = [z.data()[2], z.data()[1], z.data()[0], z.data()[3]];
        assert_ne!(pairs(z.data()), pairs(&swapped));
    }

    #[test]
    fn dense_graph_rejects_empty() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::zeros(&[0, 2]));
        let g = tape.constant(Tensor::zeros(&[1, 2]));
        let inp = DenseInputs { z_local: z, z_global: g, node_extra: None, edge_extra: None, global_extra: None };
        assert!(build_dense_graph(&mut tape, inp).is_err());
    }
}
