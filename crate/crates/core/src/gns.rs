//! Hierarchical graph-network backbone shared by encoder, decoder and denoiser.
//!
//! Each iteration updates the local graph, then runs a joint step over the
//! global edges on the node set `[globals, locals]`. Local nodes only take the
//! joint-step delta when some global edge points at them.

use std::sync::Arc;

use rand::Rng;
use thiserror::Error;

use crate::featurize::{GraphVars, Topology};
use crate::nn::{Activation, BoundParams, Mlp, ParamStore};
use crate::tensor::{Tape, Tensor, TensorError, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GnsError {
    #[error("{what} width {found}, expected {expected}")]
    Width { what: &'static str, found: usize, expected: usize },
    #[error(transparent)]
    Graph(#[from] crate::featurize::FeaturizeError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, GnsError>;

#[derive(Debug, Clone, PartialEq)]
pub struct GnsConfig {
    pub hidden: usize,
    pub mp_steps: usize,
    pub local_node_in: usize,
    pub local_edge_in: usize,
    pub global_node_in: usize,
    pub global_edge_in: usize,
    pub local_out: usize,
    pub global_out: usize,
    /// Sigmoid edge gates on messages; without them every gate is 1.
    pub attention: bool,
    /// Start every message-passing output layer at zero.
    pub zero_init: bool,
}

/// Edge and node update networks for one graph level of one iteration.
#[derive(Debug, Clone)]
pub struct MpBlock {
    pub edge_net: Mlp,
    pub node_net: Mlp,
    pub psi1: Option<Mlp>,
    pub psi2: Option<Mlp>,
}

impl MpBlock {
    fn new(store: &mut ParamStore, name: &str, h: usize, attention: bool, zero: bool, rng: &mut impl Rng) -> Self {
        let act = Activation::Silu;
        let gate = |store: &mut ParamStore, tag: &str, rng: &mut _| Mlp::new(store, &format!("{name}.{tag}"), &[h, 1], act, false, rng);
        let edge_net = Mlp::new(store, &format!("{name}.edge"), &[3 * h, h, h], act, zero, rng);
        let node_net = Mlp::new(store, &format!("{name}.node"), &[3 * h, h, h], act, zero, rng);
        let (psi1, psi2) = if attention {
            (Some(gate(store, "psi1", rng)), Some(gate(store, "psi2", rng)))
        } else {
            (None, None)
        };
        Self { edge_net, node_net, psi1, psi2 }
    }
}

fn gate(tape: &mut Tape, p: &BoundParams, psi: Option<&Mlp>, e: Var, scale: Option<Var>) -> Result<Option<Var>> {
    let g = match psi {
        Some(m) => {
            let logits = m.forward(tape, p, e)?;
            Some(tape.sigmoid(logits))
        }
        None => None,
    };
    Ok(match (g, scale) {
        (Some(g), Some(s)) => Some(tape.mul(g, s)?),
        (Some(g), None) => Some(g),
        (None, s) => s,
    })
}

/// Residual updates for one graph level.
///
/// `de = edge_net([e, v_receiver, v_sender])`; node `i` aggregates gated edge
/// residuals where it is the receiver (m1) and where it is the sender (m2);
/// `dv = node_net([v, m1, m2])`. `gate_scale` (`E x 1`) multiplies both gates.
#[allow(clippy::too_many_arguments)]
pub fn compute_deltas(
    tape: &mut Tape,
    p: &BoundParams,
    block: &MpBlock,
    v: Var,
    e: Var,
    senders: &Arc<[usize]>,
    receivers: &Arc<[usize]>,
    gate_scale: Option<Var>,
) -> Result<(Var, Var)> {
    let n = tape.shape(v)[0];
    let vr = tape.gather_rows(v, receivers.clone())?;
    let vs = tape.gather_rows(v, senders.clone())?;
    let x = tape.concat_cols(&[e, vr, vs])?;
    let de = block.edge_net.forward(tape, p, x)?;
    let g1 = gate(tape, p, block.psi1.as_ref(), e, gate_scale)?;
    let g2 = gate(tape, p, block.psi2.as_ref(), e, gate_scale)?;
    let w1 = match g1 {
        Some(g) => tape.mul_col(de, g)?,
        None => de,
    };
    let w2 = match g2 {
        Some(g) => tape.mul_col(de, g)?,
        None => de,
    };
    let m1 = tape.segment_sum(w1, receivers.clone(), n)?;
    let m2 = tape.segment_sum(w2, senders.clone(), n)?;
    let y = tape.concat_cols(&[v, m1, m2])?;
    let dv = block.node_net.forward(tape, p, y)?;
    Ok((dv, de))
}

#[derive(Debug, Clone)]
pub struct Gns {
    pub config: GnsConfig,
    embed_local_node: Mlp,
    embed_local_edge: Mlp,
    embed_global_node: Mlp,
    embed_global_edge: Mlp,
    local_blocks: Vec<MpBlock>,
    global_blocks: Vec<MpBlock>,
    read_local: Mlp,
    read_global: Mlp,
}

#[derive(Debug, Clone, Copy)]
pub struct GnsOutput {
    pub local: Var,
    pub global: Var,
}

impl Gns {
    pub fn new(store: &mut ParamStore, name: &str, config: GnsConfig, rng: &mut impl Rng) -> Self {
        let h = config.hidden;
        let act = Activation::Silu;
        let mlp = |store: &mut ParamStore, tag: &str, widths: &[usize], rng: &mut _| {
            Mlp::new(store, &format!("{name}.{tag}"), widths, act, false, rng)
        };
        let embed_local_node = mlp(store, "embed_local_node", &[config.local_node_in, h, h], rng);
        let embed_local_edge = mlp(store, "embed_local_edge", &[config.local_edge_in, h, h], rng);
        let embed_global_node = mlp(store, "embed_global_node", &[config.global_node_in, h, h], rng);
        let embed_global_edge = mlp(store, "embed_global_edge", &[config.global_edge_in, h, h], rng);
        let mut local_blocks = Vec::new();
        let mut global_blocks = Vec::new();
        for t in 0..config.mp_steps {
            local_blocks.push(MpBlock::new(store, &format!("{name}.local.{t}"), h, config.attention, config.zero_init, rng));
            global_blocks.push(MpBlock::new(store, &format!("{name}.global.{t}"), h, config.attention, config.zero_init, rng));
        }
        let read_local = mlp(store, "read_local", &[h, h, config.local_out], rng);
        let read_global = mlp(store, "read_global", &[h, h, config.global_out], rng);
        Self {
            config,
            embed_local_node,
            embed_local_edge,
            embed_global_node,
            embed_global_edge,
            local_blocks,
            global_blocks,
            read_local,
            read_global,
        }
    }

    fn check_width(tape: &Tape, v: Var, what: &'static str, expected: usize) -> Result<()> {
        let s = tape.shape(v);
        let found = if s.len() == 2 { s[1] } else { 0 };
        if found != expected {
            return Err(GnsError::Width { what, found, expected });
        }
        Ok(())
    }

    pub fn forward(&self, tape: &mut Tape, p: &BoundParams, topo: &Topology, g: GraphVars) -> Result<GnsOutput> {
        topo.validate()?;
        let c = &self.config;
        Self::check_width(tape, g.local_nodes, "local node features", c.local_node_in)?;
        Self::check_width(tape, g.local_edges, "local edge features", c.local_edge_in)?;
        Self::check_width(tape, g.global_nodes, "global node features", c.global_node_in)?;
        Self::check_width(tape, g.global_edges, "global edge features", c.global_edge_in)?;

        let mut vl = self.embed_local_node.forward(tape, p, g.local_nodes)?;
        let mut el = self.embed_local_edge.forward(tape, p, g.local_edges)?;
        let mut vg = self.embed_global_node.forward(tape, p, g.global_nodes)?;
        let mut eg = self.embed_global_edge.forward(tape, p, g.global_edges)?;

        let scale = topo.local_gate_scale.as_ref().map(|s| {
            tape.constant(Tensor::matrix(s.len(), 1, s.to_vec()).expect("column"))
        });
        let n_g = topo.n_global;
        let n_l = topo.n_local;
        let mut targeted = vec![0.0; n_l];
        for &r in topo.global_receivers.iter() {
            if r >= n_g {
                targeted[r - n_g] = 1.0;
            }
        }
        let any_targeted = targeted.iter().any(|&x| x > 0.0);
        let all_targeted = targeted.iter().all(|&x| x > 0.0);
        let mask = (any_targeted && !all_targeted).then(|| tape.constant(Tensor::matrix(n_l, 1, targeted).expect("column")));

        for t in 0..c.mp_steps {
            let (dv, de) = compute_deltas(
                tape,
                p,
                &self.local_blocks[t],
                vl,
                el,
                &topo.local_senders,
                &topo.local_receivers,
                scale,
            )?;
            vl = tape.add(vl, dv)?;
            el = tape.add(el, de)?;

            let joint = tape.concat_rows(&[vg, vl])?;
            let (dj, deg) = compute_deltas(
                tape,
                p,
                &self.global_blocks[t],
                joint,
                eg,
                &topo.global_senders,
                &topo.global_receivers,
                None,
            )?;
            eg = tape.add(eg, deg)?;
            let dg = tape.slice_rows(dj, 0, n_g)?;
            vg = tape.add(vg, dg)?;
            if any_targeted {
                let mut dl = tape.slice_rows(dj, n_g, n_g + n_l)?;
                if let Some(m) = mask {
                    dl = tape.mul_col(dl, m)?;
                }
                vl = tape.add(vl, dl)?;
            }
        }
        let local = self.read_local.forward(tape, p, vl)?;
        let global = self.read_global.forward(tape, p, vg)?;
        Ok(GnsOutput { local, global })
    }

    /// Readouts of the embeddings alone, skipping message passing.
    pub fn forward_embed_only(&self, tape: &mut Tape, p: &BoundParams, g: GraphVars) -> Result<GnsOutput> {
        let vl = self.embed_local_node.forward(tape, p, g.local_nodes)?;
        let vg = self.embed_global_node.forward(tape, p, g.global_nodes)?;
        Ok(GnsOutput {
            local: self.read_local.forward(tape, p, vl)?,
            global: self.read_global.forward(tape, p, vg)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featurize::{build_dense_graph, DenseInputs};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(d: usize, steps: usize, zero: bool) -> GnsConfig {
        GnsConfig {
            hidden: 8,
            mp_steps: steps,
            local_node_in: d,
            local_edge_in: 2 * d,
            global_node_in: d,
            global_edge_in: 2 * d,
            local_out: 3,
            global_out: 2,
            attention: true,
            zero_init: zero,
        }
    }

    fn random_matrix(rng: &mut impl Rng, r: usize, c: usize) -> Tensor {
        Tensor::matrix(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn run(gns: &Gns, store: &ParamStore, z: &Tensor, zg: &Tensor) -> (Tensor, Tensor) {
        let mut tape = Tape::new();
        let p = BoundParams::bind_frozen(&mut tape, store);
        let zl = tape.constant(z.clone());
        let zg = tape.constant(zg.clone());
        let (topo, vars) = build_dense_graph(
            &mut tape,
            DenseInputs { z_local: zl, z_global: zg, node_extra: None, edge_extra: None, global_extra: None },
        )
        .unwrap();
        let out = gns.forward(&mut tape, &p, &topo, vars).unwrap();
        (tape.value(out.local).clone(), tape.value(out.global).clone())
    }

    #[test]
    fn zero_init_reduces_to_embed_readout() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let gns = Gns::new(&mut store, "g", cfg(3, 2, true), &mut rng);
        let z = random_matrix(&mut rng, 5, 3);
        let zg = random_matrix(&mut rng, 1, 3);
        let (l, g) = run(&gns, &store, &z, &zg);
        let mut tape = Tape::new();
        let p = BoundParams::bind_frozen(&mut tape, &store);
        let vars = GraphVars {
            local_nodes: tape.constant(z.clone()),
            local_edges: tape.constant(Tensor::zeros(&[0, 6])),
            global_nodes: tape.constant(zg.clone()),
            global_edges: tape.constant(Tensor::zeros(&[0, 6])),
        };
        let e = gns.forward_embed_only(&mut tape, &p, vars).unwrap();
        assert_eq!(&l, tape.value(e.local));
        assert_eq!(&g, tape.value(e.global));
    }

    #[test]
    fn zero_steps_is_embed_readout() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let gns = Gns::new(&mut store, "g", cfg(3, 0, false), &mut rng);
        let z = random_matrix(&mut rng, 3, 3);
        let zg = random_matrix(&mut rng, 1, 3);
        let (l, _) = run(&gns, &store, &z, &zg);
        assert_eq!(l.shape(), &[3, 3]);
    }

    #[test]
    fn permutation_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let gns = Gns::new(&mut store, "g", cfg(3, 2, false), &mut rng);
        let z = random_matrix(&mut rng, 5, 3);
        let zg = random_matrix(&mut rng, 1, 3);
        let perm = [3, 0, 4, 1, 2];
        let zp = Tensor::from_rows(&perm.iter().map(|&i| z.row(i).to_vec()).collect::<Vec<_>>(), 3).unwrap();
        let (l, g) = run(&gns, &store, &z, &zg);
        let (lp, gp) = run(&gns, &store, &zp, &zg);
        for (k, &i) in perm.iter().enumerate() {
            for (a, b) in lp.row(k).iter().zip(l.row(i)) {
                assert!((a - b).abs() < 1e-10);
            }
        }
        for (a, b) in g.data().iter().zip(gp.data()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn width_mismatch_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let gns = Gns::new(&mut store, "g", cfg(3, 1, false), &mut rng);
        let z = random_matrix(&mut rng, 3, 4);
        let zg = random_matrix(&mut rng, 1, 4);
        let mut tape = Tape::new();
        let p = BoundParams::bind_frozen(&mut tape, &store);
        let zl = tape.constant(z);
        let zg = tape.constant(zg);
        let (topo, vars) = build_dense_graph(
            &mut tape,
            DenseInputs { z_local: zl, z_global: zg, node_extra: None, edge_extra: None, global_extra: None },
        )
        .unwrap();
        assert!(matches!(gns.forward(&mut tape, &p, &topo, vars), Err(GnsError::Width { .. })));
    }

    #[test]
    fn isolated_node_gets_empty_messages() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let block = MpBlock::new(&mut store, "b", 4, true, false, &mut rng);
        let mut tape = Tape::new();
        let p = BoundParams::bind_frozen(&mut tape, &store);
        let v = tape.constant(random_matrix(&mut rng, 3, 4));
        let e = tape.constant(random_matrix(&mut rng, 1, 4));
        let (s, r): (Arc<[usize]>, Arc<[usize]>) = (vec![0].into(), vec![1].into());
        let (dv, _) = compute_deltas(&mut tape, &p, &block, v, e, &s, &r, None).unwrap();
        let zeros = tape.constant(Tensor::zeros(&[1, 8]));
        let v2 = tape.slice_rows(v, 2, 3).unwrap();
        let x = tape.concat_cols(&[v2, zeros]).unwrap();
        let direct = block.node_net.forward(&mut tape, &p, x).unwrap();
        assert_eq!(tape.value(dv).row(2), tape.value(direct).row(0));
    }
}
