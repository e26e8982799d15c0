//! Crystal autoencoder: k-NN graph encoder, residual-VQ local bottleneck with a
//! Gaussian global latent, and a dense-graph decoder.

pub mod rvq;
pub mod train;

use std::f64::consts::PI;

use rand::Rng;
use thiserror::Error;

use crate::config::RunConfig;
use crate::crystal::{
    centered, denormalize_lattice_lengths, normalize_lattice_lengths, wrap_unit, CrystalError, CrystalStructure,
    Lattice, Vec3, MIN_ANGLE,
};
use crate::featurize::{
    build_dense_graph, build_encoder_graph, index_type, type_index, DenseInputs, EncoderFeatureConfig,
    FeaturizeError,
};
use crate::gns::{Gns, GnsConfig, GnsError};
use crate::io::{Checkpoint, CheckpointError};
use crate::nn::{AdamState, BoundParams, ParamStore};
use crate::tensor::{Tape, Tensor, TensorError, Var};

pub use rvq::{Quantized, Rvq, RvqError};
pub use train::{train_autoencoder, AeStepLog, AeTrainer};

#[derive(Debug, Error)]
pub enum AeError {
    #[error(transparent)]
    Featurize(#[from] FeaturizeError),
    #[error(transparent)]
    Gns(#[from] GnsError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Rvq(#[from] RvqError),
    #[error(transparent)]
    Crystal(#[from] CrystalError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("latent shape {found:?}, expected (N+1) x {dim}")]
    LatentShape { found: Vec<usize>, dim: usize },
    #[error("atom type {0} outside the model vocabulary")]
    Vocabulary(u8),
    #[error("no training structures")]
    EmptyDataset,
    #[error("non-finite loss at step {step}: {detail}")]
    NonFinite { step: u64, detail: String },
}

pub type Result<T> = std::result::Result<T, AeError>;

/// Loss weights in the order atom types, positions, lattice, commitment, KL.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub atom: f64,
    pub frac: f64,
    pub lattice: f64,
    pub commit: f64,
    pub kl: f64,
}

impl LossWeights {
    pub fn from_run(c: &RunConfig) -> Self {
        Self { atom: c.loss_atom, frac: c.loss_frac, lattice: c.loss_lattice, commit: c.loss_commit, kl: c.loss_kl }
    }
}

/// Encoder outputs before the bottleneck.
#[derive(Debug, Clone, PartialEq)]
pub struct Latents {
    /// `N x D`
    pub local: Tensor,
    pub mu: Vec<f64>,
    pub logvar: Vec<f64>,
}

impl Latents {
    /// `[Z_L; mu]`, the `(N+1) x D` matrix the diffusion model works on.
    pub fn stacked(&self) -> Tensor {
        let d = self.mu.len();
        let mut data = self.local.data().to_vec();
        data.extend_from_slice(&self.mu);
        Tensor::matrix(self.local.rows() + 1, d, data).expect("stacked latent shape")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderOutput {
    /// `N x vocab`, rows sum to one.
    pub probs: Tensor,
    pub frac: Vec<Vec3>,
    pub lattice: Lattice,
}

impl DecoderOutput {
    pub fn atom_types(&self) -> Vec<u8> {
        (0..self.probs.rows())
            .map(|i| {
                let row = self.probs.row(i);
                let mut best = 0;
                for (k, &p) in row.iter().enumerate() {
                    if p > row[best] {
                        best = k;
                    }
                }
                index_type(best)
            })
            .collect()
    }

    /// Argmax types, wrapped positions, Niggli-reduced cell.
    pub fn to_structure(&self) -> Result<CrystalStructure> {
        Ok(CrystalStructure::ingest(self.atom_types(), self.frac.clone(), self.lattice)?)
    }
}

/// How the local latent passes the bottleneck in a differentiable forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantize {
    /// Residual quantization with a straight-through gradient.
    StraightThrough,
    /// No quantization; used for smooth finite-difference checks.
    Bypass,
}

#[derive(Debug, Clone, Copy)]
pub struct ForwardOptions<'a> {
    /// Standard-normal draw for the reparameterized global latent; `None` uses the mean.
    pub global_noise: Option<&'a [f64]>,
    pub quantize: Quantize,
}

impl ForwardOptions<'_> {
    pub fn eval() -> Self {
        Self { global_noise: None, quantize: Quantize::StraightThrough }
    }
}

/// Decoder heads on the tape.
#[derive(Debug, Clone, Copy)]
pub struct DecodeVars {
    /// `N x vocab` log-probabilities.
    pub log_probs: Var,
    /// `N x 3` in (0, 1).
    pub frac: Var,
    /// `1 x 3` lengths, log-normalized by the cube root of N.
    pub log_lengths: Var,
    /// `1 x 3` angles in radians.
    pub angles: Var,
}

/// Scalar reconstruction terms on the tape.
#[derive(Debug, Clone, Copy)]
pub struct ReconstructionVars {
    pub atom: Var,
    pub frac: Var,
    pub lattice: Var,
}

/// Scalar loss terms, unweighted.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossTerms {
    pub atom: f64,
    pub frac: f64,
    pub lattice: f64,
    pub commit: f64,
    pub kl: f64,
    pub total: f64,
}

impl LossTerms {
    pub fn is_finite(&self) -> bool {
        [self.atom, self.frac, self.lattice, self.commit, self.kl, self.total].iter().all(|x| x.is_finite())
    }
}

/// Everything a training step needs from one structure's forward pass.
#[derive(Debug)]
pub struct ForwardPass {
    pub loss: Var,
    pub terms: LossTerms,
    pub z_local: Var,
    pub z_tilde: Var,
    pub quantized: Option<Quantized>,
    pub correct: usize,
}

#[derive(Debug, Clone)]
pub struct Autoencoder {
    pub config: RunConfig,
    pub features: EncoderFeatureConfig,
    pub weights: LossWeights,
    pub store: ParamStore,
    pub encoder: Gns,
    pub decoder: Gns,
    pub rvq: Rvq,
}

impl Autoencoder {
    pub fn new(config: &RunConfig, rng: &mut impl Rng) -> Result<Self> {
        let features = EncoderFeatureConfig::from_run(config);
        features.validate()?;
        let d = config.latent_dim;
        let mut store = ParamStore::new();
        let encoder = Gns::new(
            &mut store,
            "encoder",
            GnsConfig {
                hidden: config.hidden,
                mp_steps: config.mp_steps,
                local_node_in: features.local_node_width(),
                local_edge_in: features.local_edge_width(),
                global_node_in: features.global_node_width(),
                global_edge_in: features.global_edge_width(),
                local_out: d,
                global_out: 2 * d,
                attention: config.edge_attention,
                zero_init: false,
            },
            rng,
        );
        let decoder = Gns::new(
            &mut store,
            "decoder",
            GnsConfig {
                hidden: config.hidden,
                mp_steps: config.mp_steps,
                local_node_in: d,
                local_edge_in: 2 * d,
                global_node_in: d,
                global_edge_in: 2 * d,
                local_out: config.vocab_size + 3,
                global_out: 6,
                attention: config.edge_attention,
                zero_init: false,
            },
            rng,
        );
        Ok(Self {
            config: config.clone(),
            features,
            weights: LossWeights::from_run(config),
            store,
            encoder,
            decoder,
            rvq: Rvq::new(config.rvq_levels, config.rvq_codes, d, config.rvq_decay),
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn fingerprint(&self) -> u64 {
        self.config.ae_fingerprint()
    }

    /// Encoder on the tape: `(Z_L, mu, logvar)` with shapes `N x D`, `1 x D`, `1 x D`.
    pub fn encode_vars(&self, tape: &mut Tape, p: &BoundParams, s: &CrystalStructure) -> Result<(Var, Var, Var)> {
        if let Some(&z) = s.atom_types().iter().find(|&&z| z as usize > self.config.vocab_size || z == 0) {
            return Err(AeError::Vocabulary(z));
        }
        let g = build_encoder_graph(s, &self.features)?;
        let vars = g.bind(tape);
        let out = self.encoder.forward(tape, p, &g.topology, vars)?;
        let d = self.latent_dim();
        let mu = tape.slice_cols(out.global, 0, d)?;
        let logvar = tape.slice_cols(out.global, d, 2 * d)?;
        Ok((out.local, mu, logvar))
    }

    /// Decoder on the tape from bottlenecked latents `N x D` and `1 x D`.
    pub fn decode_vars(&self, tape: &mut Tape, p: &BoundParams, z_local: Var, z_global: Var) -> Result<DecodeVars> {
        let (topo, g) = build_dense_graph(
            tape,
            DenseInputs { z_local, z_global, node_extra: None, edge_extra: None, global_extra: None },
        )?;
        let out = self.decoder.forward(tape, p, &topo, g)?;
        let v = self.config.vocab_size;
        let logits = tape.slice_cols(out.local, 0, v)?;
        let log_probs = tape.log_softmax(logits);
        let fr = tape.slice_cols(out.local, v, v + 3)?;
        let frac = tape.sigmoid(fr);
        let log_lengths = tape.slice_cols(out.global, 0, 3)?;
        let ang = tape.slice_cols(out.global, 3, 6)?;
        let ang = tape.sigmoid(ang);
        let ang = tape.scale(ang, PI / 3.0);
        let angles = tape.add_scalar(ang, MIN_ANGLE);
        Ok(DecodeVars { log_probs, frac, log_lengths, angles })
    }

    /// Quantizes `z_local` with a straight-through gradient; returns `(Z~, codes)`.
    fn quantize_vars(&self, tape: &mut Tape, z_local: Var) -> Result<(Var, Quantized)> {
        if !self.rvq.initialized {
            return Err(RvqError::Uninitialized.into());
        }
        let zv = tape.value(z_local).clone();
        let q = self.rvq.quantize(zv.data())?;
        let diff: Vec<f64> = q.values.iter().zip(zv.data()).map(|(a, b)| a - b).collect();
        let shift = tape.constant(Tensor::new(zv.shape().to_vec(), diff)?);
        Ok((tape.add(z_local, shift)?, q))
    }

    /// Unweighted atom, position and lattice losses of decoding `(z_tilde, z_global)` against `s`.
    pub fn reconstruction_loss(
        &self,
        tape: &mut Tape,
        p: &BoundParams,
        s: &CrystalStructure,
        z_tilde: Var,
        z_global: Var,
    ) -> Result<(ReconstructionVars, Var)> {
        let n = s.num_atoms();
        let nf = n as f64;
        let out = self.decode_vars(tape, p, z_tilde, z_global)?;

        let v = self.config.vocab_size;
        let mut onehot = vec![0.0; n * v];
        for (i, &z) in s.atom_types().iter().enumerate() {
            onehot[i * v + type_index(z)] = 1.0;
        }
        let mask = tape.constant(Tensor::matrix(n, v, onehot)?);
        let picked = tape.mul(out.log_probs, mask)?;
        let ce = tape.sum(picked);
        let atom = tape.scale(ce, -1.0 / nf);

        let target = centered(s);
        let ft: Vec<f64> = target.frac().iter().flatten().copied().collect();
        let ft = tape.constant(Tensor::matrix(n, 3, ft)?);
        let df = tape.sub(out.frac, ft)?;
        let df = tape.square(df);
        let df = tape.sum(df);
        let frac = tape.scale(df, 1.0 / nf);

        let lt = normalize_lattice_lengths(s.lattice(), n);
        let lt = tape.constant(Tensor::matrix(1, 3, lt.to_vec())?);
        let dl = tape.sub(out.log_lengths, lt)?;
        let dl = tape.square(dl);
        let dl = tape.sum(dl);
        let at = tape.constant(Tensor::matrix(1, 3, s.lattice().angles.to_vec())?);
        let da = tape.sub(out.angles, at)?;
        let da = tape.square(da);
        let da = tape.sum(da);
        let lat = tape.add(dl, da)?;
        let lattice = tape.scale(lat, 1.0 / 3.0);
        Ok((ReconstructionVars { atom, frac, lattice }, out.log_probs))
    }

    /// Full encode, bottleneck, decode and weighted loss for one structure.
    pub fn forward_loss(
        &self,
        tape: &mut Tape,
        p: &BoundParams,
        s: &CrystalStructure,
        opts: ForwardOptions,
    ) -> Result<ForwardPass> {
        let n = s.num_atoms();
        let nf = n as f64;
        let d = self.latent_dim();
        let (z_local, mu, logvar) = self.encode_vars(tape, p, s)?;

        let (z_tilde, quantized, commit) = match opts.quantize {
            Quantize::StraightThrough => {
                let (zt, q) = self.quantize_vars(tape, z_local)?;
                let target = tape.constant(Tensor::new(vec![n, d], q.values.clone())?);
                let diff = tape.sub(z_local, target)?;
                let sq = tape.square(diff);
                let commit = tape.mean(sq);
                (zt, Some(q), commit)
            }
            Quantize::Bypass => (z_local, None, tape.constant(Tensor::scalar(0.0))),
        };

        let z_global = match opts.global_noise {
            Some(eps) => {
                let half = tape.scale(logvar, 0.5);
                let sigma = tape.exp(half);
                let e = tape.constant(Tensor::matrix(1, d, eps.to_vec())?);
                let noise = tape.mul(sigma, e)?;
                tape.add(mu, noise)?
            }
            None => mu,
        };
        // KL(N(mu, sigma^2) || N(0, 1)) / N
        let kl = {
            let mu2 = tape.square(mu);
            let ev = tape.exp(logvar);
            let a = tape.add(mu2, ev)?;
            let b = tape.sub(a, logvar)?;
            let c = tape.add_scalar(b, -1.0);
            let s = tape.sum(c);
            tape.scale(s, 0.5 / nf)
        };

        let (rec, log_probs) = self.reconstruction_loss(tape, p, s, z_tilde, z_global)?;
        let (l_atom, l_frac, l_lat) = (rec.atom, rec.frac, rec.lattice);

        let w = self.weights;
        let parts = [
            tape.scale(l_atom, w.atom),
            tape.scale(l_frac, w.frac),
            tape.scale(l_lat, w.lattice),
            tape.scale(commit, w.commit),
            tape.scale(kl, w.kl),
        ];
        let mut loss = parts[0];
        for &x in &parts[1..] {
            loss = tape.add(loss, x)?;
        }

        let lp = tape.value(log_probs);
        let correct = s
            .atom_types()
            .iter()
            .enumerate()
            .filter(|&(i, &z)| {
                let row = lp.row(i);
                let t = type_index(z);
                row.iter().enumerate().all(|(k, &x)| k == t || x < row[t])
            })
            .count();

        let terms = LossTerms {
            atom: tape.value(l_atom).item(),
            frac: tape.value(l_frac).item(),
            lattice: tape.value(l_lat).item(),
            commit: tape.value(commit).item(),
            kl: tape.value(kl).item(),
            total: tape.value(loss).item(),
        };
        Ok(ForwardPass { loss, terms, z_local, z_tilde, quantized, correct })
    }

    /// Encoder outputs, no gradients.
    pub fn encode(&self, s: &CrystalStructure) -> Result<Latents> {
        let mut tape = Tape::new();
        let p = BoundParams::bind_frozen(&mut tape, &self.store);
        let (zl, mu, lv) = self.encode_vars(&mut tape, &p, s)?;
        Ok(Latents {
            local: tape.value(zl).clone(),
            mu: tape.value(mu).data().to_vec(),
            logvar: tape.value(lv).data().to_vec(),
        })
    }

    /// Decodes already-bottlenecked latents `[Z~_L; Z~_G]` of shape `(N+1) x D`.
    pub fn decode(&self, z: &Tensor) -> Result<DecoderOutput> {
        let d = self.latent_dim();
        if z.shape().len() != 2 || z.cols() != d || z.rows() < 2 {
            return Err(AeError::LatentShape { found: z.shape().to_vec(), dim: d });
        }
        let n = z.rows() - 1;
        let mut tape = Tape::new();
        let p = BoundParams::bind_frozen(&mut tape, &self.store);
        let zl = tape.constant(Tensor::matrix(n, d, z.data()[..n * d].to_vec())?);
        let zg = tape.constant(Tensor::matrix(1, d, z.row(n).to_vec())?);
        let out = self.decode_vars(&mut tape, &p, zl, zg)?;
        let lp = tape.value(out.log_probs);
        let probs = Tensor::new(lp.shape().to_vec(), lp.data().iter().map(|x| x.exp()).collect())?;
        let fv = tape.value(out.frac);
        let frac = (0..n).map(|i| [0, 1, 2].map(|k| wrap_unit(fv.get(i, k)))).collect();
        let ll = tape.value(out.log_lengths).data();
        let ang = tape.value(out.angles).data();
        let lengths = denormalize_lattice_lengths([ll[0], ll[1], ll[2]], n);
        Ok(DecoderOutput { probs, frac, lattice: Lattice::new(lengths, [ang[0], ang[1], ang[2]]) })
    }

    /// Eval-mode bottleneck on `[Z_L; mu]`: quantizes the local rows, keeps the global row.
    pub fn bottleneck(&self, z: &Tensor) -> Result<Tensor> {
        let d = self.latent_dim();
        if z.shape().len() != 2 || z.cols() != d || z.rows() < 2 {
            return Err(AeError::LatentShape { found: z.shape().to_vec(), dim: d });
        }
        let n = z.rows() - 1;
        let q = self.rvq.quantize(&z.data()[..n * d])?;
        let mut data = q.values;
        data.extend_from_slice(z.row(n));
        Ok(Tensor::matrix(n + 1, d, data)?)
    }

    /// Bottleneck then decode.
    pub fn decode_latent(&self, z: &Tensor) -> Result<DecoderOutput> {
        self.decode(&self.bottleneck(z)?)
    }

    /// Eval-mode round trip.
    pub fn reconstruct(&self, s: &CrystalStructure) -> Result<DecoderOutput> {
        self.decode_latent(&self.encode(s)?.stacked())
    }

    /// Initializes every codebook level from the encoder's local latents on `data`.
    pub fn init_codebooks(&mut self, data: &[CrystalStructure], rng: &mut impl Rng) -> Result<()> {
        if data.is_empty() {
            return Err(AeError::EmptyDataset);
        }
        let mut z = Vec::new();
        for s in data {
            z.extend_from_slice(self.encode(s)?.local.data());
        }
        self.rvq.init_from_data(&z, rng)?;
        Ok(())
    }

    pub fn save_into(&self, ck: &mut Checkpoint) {
        for (name, t) in self.store.names().iter().zip(self.store.values()) {
            ck.push_tensor(format!("param/{name}"), t);
        }
        ck.push_u64("rvq/initialized", vec![self.rvq.initialized as u64]);
        let (k, d) = (self.rvq.n_codes, self.rvq.dim);
        for (l, book) in self.rvq.levels.iter().enumerate() {
            ck.push_f64(format!("rvq/{l}/codes"), vec![k, d], book.codes.clone());
            ck.push_f64(format!("rvq/{l}/counts"), vec![k], book.counts.clone());
            ck.push_f64(format!("rvq/{l}/sums"), vec![k, d], book.sums.clone());
        }
    }

    /// Replaces parameters and codebooks from `ck`; the fingerprint is checked by the caller.
    pub fn load_from(&mut self, ck: &Checkpoint) -> Result<()> {
        let values = self
            .store
            .names()
            .iter()
            .map(|name| ck.tensor(&format!("param/{name}")))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        self.store
            .load_values(values)
            .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        let init = ck.u64s("rvq/initialized")?;
        self.rvq.initialized = init.first().copied().unwrap_or(0) != 0;
        let (k, d) = (self.rvq.n_codes, self.rvq.dim);
        for (l, book) in self.rvq.levels.iter_mut().enumerate() {
            let read = |name: String, len: usize| -> Result<Vec<f64>> {
                let v = ck.f64s(&name)?;
                if v.len() != len {
                    return Err(CheckpointError::Corrupt(format!("{name} has {} values, expected {len}", v.len())).into());
                }
                Ok(v.to_vec())
            };
            book.codes = read(format!("rvq/{l}/codes"), k * d)?;
            book.counts = read(format!("rvq/{l}/counts"), k)?;
            book.sums = read(format!("rvq/{l}/sums"), k * d)?;
        }
        Ok(())
    }

    pub fn to_checkpoint(&self, step: u64, adam: Option<&AdamState>) -> Checkpoint {
        let mut ck = Checkpoint::new(self.fingerprint(), step);
        self.save_into(&mut ck);
        if let Some(a) = adam {
            save_adam(&mut ck, "adam", &self.store, a);
        }
        ck
    }

    /// Rebuilds a model from `config` and loads `ck` after checking its fingerprint.
    pub fn from_checkpoint(config: &RunConfig, ck: &Checkpoint) -> Result<Self> {
        ck.check_fingerprint(config.ae_fingerprint())?;
        // parameter values are overwritten; the seed only fixes construction order
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut m = Self::new(config, &mut rng)?;
        m.load_from(ck)?;
        Ok(m)
    }
}

pub(crate) fn save_adam(ck: &mut Checkpoint, prefix: &str, store: &ParamStore, a: &AdamState) {
    ck.push_u64(format!("{prefix}/step"), vec![a.step, a.skipped]);
    for (k, name) in store.names().iter().enumerate() {
        let shape = store.values()[k].shape().to_vec();
        ck.push_f64(format!("{prefix}/m/{name}"), shape.clone(), a.m[k].clone());
        ck.push_f64(format!("{prefix}/v/{name}"), shape, a.v[k].clone());
    }
}

pub(crate) fn load_adam(ck: &Checkpoint, prefix: &str, store: &ParamStore) -> std::result::Result<AdamState, CheckpointError> {
    let mut a = AdamState::new(store);
    let st = ck.u64s(&format!("{prefix}/step"))?;
    if st.len() != 2 {
        return Err(CheckpointError::Corrupt(format!("{prefix}/step must hold 2 values")));
    }
    a.step = st[0];
    a.skipped = st[1];
    for (k, name) in store.names().iter().enumerate() {
        for (buf, tag) in [(&mut a.m[k], "m"), (&mut a.v[k], "v")] {
            let key = format!("{prefix}/{tag}/{name}");
            let v = ck.f64s(&key)?;
            if v.len() != buf.len() {
                return Err(CheckpointError::Corrupt(format!("{key} has {} values, expected {}", v.len(), buf.len())));
            }
            buf.copy_from_slice(v);
        }
    }
    Ok(a)
}
