//! Velocity-predicting denoiser over the dense latent graph.
//!
//! Per-node input columns, in order: time embedding of `t`, time embedding of
//! `t'`, self-conditioning flag, self-conditioning latent row, then the
//! conditioning block (order indices, atom type, position, fragment cluster).
//! Edges carry `[bonds_given, bonded]`.

use rand::Rng;

use super::{ConditioningSpec, DiffusionError, NoiseSchedule, Result};
use crate::config::RunConfig;
use crate::crystal::Vec3;
use crate::featurize::{build_dense_graph, dense_edge_list, order_embedding, sinusoidal_encode, type_index, DenseInputs};
use crate::gns::{Gns, GnsConfig};
use crate::nn::{BoundParams, ParamStore};
use crate::tensor::{Tape, Tensor, Var};

/// Frequencies of the fragment-cluster embedding.
pub const CLUSTER_FREQUENCIES: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserConfig {
    pub latent_dim: usize,
    pub hidden: usize,
    pub mp_steps: usize,
    pub attention: bool,
    pub time_frequencies: usize,
    pub order_frequencies: usize,
    pub vocab_size: usize,
    pub n_sinusoidal: usize,
    pub schedule: NoiseSchedule,
}

impl DenoiserConfig {
    pub fn from_run(c: &RunConfig) -> Self {
        Self {
            latent_dim: c.latent_dim,
            hidden: c.denoiser_hidden,
            mp_steps: c.denoiser_mp_steps,
            attention: c.edge_attention,
            time_frequencies: c.time_frequencies,
            order_frequencies: c.order_frequencies,
            vocab_size: c.vocab_size,
            n_sinusoidal: c.n_sinusoidal,
            schedule: NoiseSchedule::new(c.timesteps, c.schedule_shift),
        }
    }

    pub fn cond_width(&self) -> usize {
        2 * self.order_frequencies + (1 + self.vocab_size) + (1 + 6 * self.n_sinusoidal) + (1 + 2 * CLUSTER_FREQUENCIES)
    }

    fn time_width(&self) -> usize {
        4 * self.time_frequencies + 1 + self.latent_dim
    }

    pub fn node_extra_width(&self) -> usize {
        self.time_width() + self.cond_width()
    }

    pub fn global_extra_width(&self) -> usize {
        self.time_width()
    }
}

/// What is known about the target structure, in its (canonical) atom order.
/// Only the parts a [`ConditioningSpec`] switches on are read.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CondSource {
    pub types: Option<Vec<u8>>,
    /// Fractional positions in the centered frame.
    pub frac: Option<Vec<Vec3>>,
    pub bonds: Option<Vec<(usize, usize)>>,
    pub atom_fragment: Option<Vec<usize>>,
}

/// Conditioning columns for nodes `N x cond_width` and dense edges `N(N-1) x 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct CondFeatures {
    pub node: Tensor,
    pub edge: Tensor,
}

fn missing(what: &str) -> DiffusionError {
    DiffusionError::Featurize(crate::featurize::FeaturizeError::Config(format!("conditioning needs {what}")))
}

impl CondFeatures {
    /// Order indices only.
    pub fn de_novo(cfg: &DenoiserConfig, n: usize) -> Self {
        Self::build(cfg, &ConditioningSpec::de_novo(n), &CondSource::default()).expect("de novo needs no source")
    }

    pub fn build(cfg: &DenoiserConfig, spec: &ConditioningSpec, src: &CondSource) -> Result<Self> {
        let n = spec.fixed.len();
        let w = cfg.cond_width();
        let mut node = vec![0.0; n * w];
        let order = spec.order.then(|| order_embedding(n, cfg.order_frequencies));
        let need_types = spec.composition || spec.fixed.iter().any(|&f| f);
        let types = match (&src.types, need_types) {
            (Some(t), true) if t.len() == n => Some(t),
            (_, true) => return Err(missing("atom types for every atom")),
            _ => None,
        };
        let frac = match (&src.frac, spec.fixed.iter().any(|&f| f)) {
            (Some(f), true) if f.len() == n => Some(f),
            (_, true) => return Err(missing("positions for every atom")),
            _ => None,
        };
        let frags = match (&src.atom_fragment, spec.clusters) {
            (Some(f), true) if f.len() == n => Some(f),
            (_, true) => return Err(missing("a fragment label for every atom")),
            _ => None,
        };
        for i in 0..n {
            let row = &mut node[i * w..(i + 1) * w];
            let mut k = 0;
            if let Some(o) = &order {
                row[..o.cols()].copy_from_slice(o.row(i));
            }
            k += 2 * cfg.order_frequencies;
            if let Some(t) = types {
                if spec.composition || spec.fixed[i] {
                    let z = t[i];
                    if z == 0 || z as usize > cfg.vocab_size {
                        return Err(missing("atom types inside the vocabulary"));
                    }
                    row[k] = 1.0;
                    row[k + 1 + type_index(z)] = 1.0;
                }
            }
            k += 1 + cfg.vocab_size;
            if let Some(f) = frac {
                if spec.fixed[i] {
                    row[k] = 1.0;
                    let mut c = k + 1;
                    for &x in &f[i] {
                        for v in sinusoidal_encode(x, cfg.n_sinusoidal) {
                            row[c] = v;
                            c += 1;
                        }
                    }
                }
            }
            k += 1 + 6 * cfg.n_sinusoidal;
            if let Some(fr) = frags {
                row[k] = 1.0;
                let e = order_embedding(fr[i] + 1, CLUSTER_FREQUENCIES);
                row[k + 1..k + 1 + 2 * CLUSTER_FREQUENCIES].copy_from_slice(e.row(fr[i]));
            }
        }

        let (senders, receivers) = dense_edge_list(n);
        let mut edge = vec![0.0; senders.len() * 2];
        if spec.bonds {
            let bonds = src.bonds.as_ref().ok_or_else(|| missing("a bond list"))?;
            let mut adj = vec![false; n * n];
            for &(a, b) in bonds {
                if a >= n || b >= n {
                    return Err(missing("bond indices inside the structure"));
                }
                adj[a * n + b] = true;
                adj[b * n + a] = true;
            }
            for (e, (&s, &r)) in senders.iter().zip(&receivers).enumerate() {
                edge[2 * e] = 1.0;
                edge[2 * e + 1] = adj[r * n + s] as u8 as f64;
            }
        }
        Ok(Self {
            node: Tensor::matrix(n, w, node)?,
            edge: Tensor::matrix(senders.len(), 2, edge)?,
        })
    }

    pub fn num_atoms(&self) -> usize {
        self.node.rows()
    }
}

/// Anything that predicts `v` from a noisy standardized latent.
pub trait VelocityModel: Sync {
    fn latent_dim(&self) -> usize;

    /// `zt` is `(N+1) x D`; `self_cond` is an auxiliary latent and its time.
    fn predict(&self, zt: &Tensor, t: f64, self_cond: Option<(&Tensor, f64)>, cond: &CondFeatures) -> Result<Tensor>;
}

#[derive(Debug, Clone)]
pub struct Denoiser {
    pub config: DenoiserConfig,
    pub store: ParamStore,
    pub gns: Gns,
}

impl Denoiser {
    pub fn new(config: DenoiserConfig, rng: &mut impl Rng) -> Self {
        let d = config.latent_dim;
        let mut store = ParamStore::new();
        let gns = Gns::new(
            &mut store,
            "denoiser",
            GnsConfig {
                hidden: config.hidden,
                mp_steps: config.mp_steps,
                local_node_in: d + config.node_extra_width(),
                local_edge_in: 2 * d + 2,
                global_node_in: d + config.global_extra_width(),
                global_edge_in: 2 * d,
                local_out: d,
                global_out: d,
                attention: config.attention,
                zero_init: false,
            },
            rng,
        );
        Self { config, store, gns }
    }

    fn check(&self, z: &Tensor, n: usize) -> Result<()> {
        let expected = vec![n + 1, self.config.latent_dim];
        if z.shape() != expected.as_slice() {
            return Err(DiffusionError::Shape { found: z.shape().to_vec(), expected });
        }
        Ok(())
    }

    /// Time and self-conditioning columns for every local row and the global row.
    fn time_columns(&self, n: usize, t: f64, self_cond: Option<(&Tensor, f64)>) -> (Vec<Vec<f64>>, Vec<f64>) {
        let c = &self.config;
        let temb = c.schedule.time_embedding(t, c.time_frequencies);
        let (temb_aux, flag) = match self_cond {
            Some((_, ta)) => (c.schedule.time_embedding(ta, c.time_frequencies), 1.0),
            None => (vec![0.0; 2 * c.time_frequencies], 0.0),
        };
        let row = |i: usize| -> Vec<f64> {
            let mut r = Vec::with_capacity(c.time_width());
            r.extend_from_slice(&temb);
            r.extend_from_slice(&temb_aux);
            r.push(flag);
            match self_cond {
                Some((z, _)) => r.extend_from_slice(z.row(i)),
                None => r.extend(std::iter::repeat_n(0.0, c.latent_dim)),
            }
            r
        };
        ((0..n).map(row).collect(), row(n))
    }

    /// `v` prediction on the tape, `(N+1) x D`.
    pub fn forward_vars(
        &self,
        tape: &mut Tape,
        p: &BoundParams,
        zt: &Tensor,
        t: f64,
        self_cond: Option<(&Tensor, f64)>,
        cond: &CondFeatures,
    ) -> Result<Var> {
        let n = cond.num_atoms();
        self.check(zt, n)?;
        if let Some((z, _)) = self_cond {
            self.check(z, n)?;
        }
        let d = self.config.latent_dim;
        let (local_time, global_time) = self.time_columns(n, t, self_cond);
        let w = self.config.node_extra_width();
        let mut node = Vec::with_capacity(n * w);
        for (i, tc) in local_time.iter().enumerate() {
            node.extend_from_slice(tc);
            node.extend_from_slice(cond.node.row(i));
        }
        let z_local = tape.constant(Tensor::matrix(n, d, zt.data()[..n * d].to_vec())?);
        let z_global = tape.constant(Tensor::matrix(1, d, zt.row(n).to_vec())?);
        let node_extra = tape.constant(Tensor::matrix(n, w, node)?);
        let global_extra = tape.constant(Tensor::matrix(1, global_time.len(), global_time)?);
        let edge_extra = tape.constant(cond.edge.clone());
        let (topo, g) = build_dense_graph(
            tape,
            DenseInputs {
                z_local,
                z_global,
                node_extra: Some(node_extra),
                edge_extra: Some(edge_extra),
                global_extra: Some(global_extra),
            },
        )?;
        let out = self.gns.forward(tape, p, &topo, g)?;
        Ok(tape.concat_rows(&[out.local, out.global])?)
    }
}

impl VelocityModel for Denoiser {
    fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    fn predict(&self, zt: &Tensor, t: f64, self_cond: Option<(&Tensor, f64)>, cond: &CondFeatures) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = BoundParams::bind_frozen(&mut tape, &self.store);
        let v = self.forward_vars(&mut tape, &p, zt, t, self_cond, cond)?;
        Ok(tape.value(v).clone())
    }
}
