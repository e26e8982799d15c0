//! Run configuration: a flat TOML table of hyperparameters.
//!
//! Unknown keys are rejected and every value is type-checked on load.
//! Overrides use `key=value` with a TOML value on the right-hand side.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config: {0}")]
    Parse(String),
    #[error("override {0:?} is not of the form key=value")]
    Override(String),
    #[error("config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,

    // dataset
    pub dataset_count: usize,
    pub min_atoms: usize,
    pub max_atoms: usize,

    // featurization
    pub k_neighbors: usize,
    pub r_cut: f64,
    pub n_bessel: usize,
    pub n_sinusoidal: usize,
    pub n_rbf: usize,
    pub vocab_size: usize,

    // message-passing backbone
    pub hidden: usize,
    pub mp_steps: usize,
    pub edge_attention: bool,

    // autoencoder
    pub latent_dim: usize,
    pub rvq_levels: usize,
    pub rvq_codes: usize,
    pub rvq_decay: f64,
    pub loss_atom: f64,
    pub loss_frac: f64,
    pub loss_lattice: f64,
    pub loss_commit: f64,
    pub loss_kl: f64,
    pub ae_lr: f64,
    pub ae_steps: u64,
    pub ae_batch: usize,
    pub ae_augment: bool,
    pub grad_clip: f64,

    // diffusion
    pub timesteps: f64,
    pub schedule_shift: f64,
    pub sample_steps: usize,
    pub self_cond_prob: f64,
    pub self_cond_offset: f64,
    pub inpaint_prob: f64,
    pub composition_prob: f64,
    pub bonds_prob: f64,
    pub cluster_prob: f64,
    pub time_frequencies: usize,
    pub order_frequencies: usize,
    pub denoiser_hidden: usize,
    pub denoiser_mp_steps: usize,
    pub diff_lr: f64,
    pub diff_steps: u64,
    pub diff_batch: usize,

    // logging and evaluation
    pub log_interval: u64,
    pub bond_factor: f64,
    pub overlap_factor: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            dataset_count: 100,
            min_atoms: 2,
            max_atoms: 64,
            k_neighbors: 12,
            r_cut: 6.0,
            n_bessel: 8,
            n_sinusoidal: 4,
            n_rbf: 8,
            vocab_size: crate::elements::MAX_Z as usize,
            hidden: 64,
            mp_steps: 3,
            edge_attention: true,
            latent_dim: 4,
            rvq_levels: 2,
            rvq_codes: 256,
            rvq_decay: 0.99,
            loss_atom: 1.0,
            loss_frac: 300.0,
            loss_lattice: 1.0,
            loss_commit: 1.0,
            loss_kl: 1e-4,
            ae_lr: 1e-3,
            ae_steps: 2000,
            ae_batch: 8,
            ae_augment: true,
            grad_clip: 1.0,
            timesteps: 100_000.0,
            schedule_shift: 2.0,
            sample_steps: 4000,
            self_cond_prob: 0.5,
            self_cond_offset: 0.002,
            inpaint_prob: 0.25,
            composition_prob: 0.25,
            bonds_prob: 0.25,
            cluster_prob: 0.5,
            time_frequencies: 8,
            order_frequencies: 8,
            denoiser_hidden: 64,
            denoiser_mp_steps: 3,
            diff_lr: 1e-3,
            diff_steps: 2000,
            diff_batch: 8,
            log_interval: 10,
            bond_factor: 1.2,
            overlap_factor: 0.5,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Self::from_toml_with(text, &[])
    }

    /// Parses `text`, applies `key=value` overrides (later ones win), validates.
    pub fn from_toml_with(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        for o in overrides {
            let (k, v) = o.split_once('=').ok_or_else(|| ConfigError::Override(o.clone()))?;
            let snippet = format!("{} = {}", k.trim(), v.trim());
            let parsed: toml::Table = snippet
                .parse()
                .map_err(|e: toml::de::Error| ConfigError::Parse(format!("override {o:?}: {e}")))?;
            table.extend(parsed);
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Parse(format!("{}: {e}", path.display())))?;
        Self::from_toml_with(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        let counts = [
            ("k_neighbors", self.k_neighbors),
            ("n_bessel", self.n_bessel),
            ("n_sinusoidal", self.n_sinusoidal),
            ("n_rbf", self.n_rbf),
            ("vocab_size", self.vocab_size),
            ("hidden", self.hidden),
            ("latent_dim", self.latent_dim),
            ("rvq_levels", self.rvq_levels),
            ("rvq_codes", self.rvq_codes),
            ("sample_steps", self.sample_steps),
            ("denoiser_hidden", self.denoiser_hidden),
            ("ae_batch", self.ae_batch),
            ("diff_batch", self.diff_batch),
            ("log_interval", self.log_interval as usize),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(ConfigError::Invalid(format!("{name} must be >= 1")));
            }
        }
        if !(self.r_cut > 0.0) {
            return bad("r_cut must be > 0");
        }
        if self.vocab_size > crate::elements::MAX_Z as usize {
            return bad("vocab_size exceeds the element table");
        }
        if !(self.min_atoms <= self.max_atoms) {
            return bad("min_atoms must not exceed max_atoms");
        }
        if !(self.timesteps > 0.0) {
            return bad("timesteps must be > 0");
        }
        if !(0.0..1.0).contains(&self.rvq_decay) {
            return bad("rvq_decay must be in [0, 1)");
        }
        for (name, p) in [
            ("self_cond_prob", self.self_cond_prob),
            ("inpaint_prob", self.inpaint_prob),
            ("composition_prob", self.composition_prob),
            ("bonds_prob", self.bonds_prob),
            ("cluster_prob", self.cluster_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(ConfigError::Invalid(format!("{name} must be a probability")));
            }
        }
        Ok(())
    }

    /// Largest self-conditioning offset, `floor(T * self_cond_offset)`.
    pub fn self_cond_max_offset(&self) -> f64 {
        (self.timesteps * self.self_cond_offset).floor()
    }

    /// Hash of the fields that shape autoencoder parameters.
    pub fn ae_fingerprint(&self) -> u64 {
        let key = format!(
            "ae:{}:{}:{}:{}:{}:{}:{}:{}:{}:{}:{}",
            self.k_neighbors,
            self.n_bessel,
            self.n_sinusoidal,
            self.n_rbf,
            self.vocab_size,
            self.hidden,
            self.mp_steps,
            self.edge_attention,
            self.latent_dim,
            self.rvq_levels,
            self.rvq_codes,
        );
        digest(&key)
    }

    /// Hash of the fields that shape denoiser parameters, chained to the autoencoder's.
    pub fn diffusion_fingerprint(&self) -> u64 {
        let key = format!(
            "diff:{}:{}:{}:{}:{}:{}:{}",
            self.ae_fingerprint(),
            self.latent_dim,
            self.time_frequencies,
            self.order_frequencies,
            self.denoiser_hidden,
            self.denoiser_mp_steps,
            self.edge_attention,
        );
        digest(&key)
    }
}

fn digest(key: &str) -> u64 {
    let h = Sha256::digest(key.as_bytes());
    u64::from_le_bytes(h[..8].try_into().unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = RunConfig::default();
        assert_eq!(
            (c.loss_atom, c.loss_frac, c.loss_lattice, c.loss_commit, c.loss_kl),
            (1.0, 300.0, 1.0, 1.0, 1e-4)
        );
        assert_eq!((c.latent_dim, c.schedule_shift, c.timesteps, c.sample_steps), (4, 2.0, 100_000.0, 4000));
        assert_eq!(c.self_cond_prob, 0.5);
        assert_eq!(c.self_cond_max_offset(), 200.0);
        assert_eq!((c.inpaint_prob, c.composition_prob, c.bonds_prob), (0.25, 0.25, 0.25));
        assert_eq!(RunConfig::from_toml("").unwrap(), c);
    }

    #[test]
    fn unknown_keys_and_types_rejected() {
        assert!(RunConfig::from_toml("latent_dimm = 4").is_err());
        assert!(RunConfig::from_toml("latent_dim = \"four\"").is_err());
        assert!(RunConfig::from_toml("latent_dim = 0").is_err());
    }

    #[test]
    fn overrides_win() {
        let c = RunConfig::from_toml_with("latent_dim = 8\nseed = 3", &["latent_dim=6".into(), "ae_augment = false".into()]).unwrap();
        assert_eq!((c.latent_dim, c.seed, c.ae_augment), (6, 3, false));
        assert!(RunConfig::from_toml_with("", &["latent_dim".into()]).is_err());
        assert_eq!(RunConfig::from_toml("timesteps = 1000").unwrap().timesteps, 1000.0);
    }

    #[test]
    fn serialization_round_trip() {
        let mut c = RunConfig::default();
        c.seed = 17;
        c.loss_kl = 3e-5;
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn fingerprints_track_architecture() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.ae_lr = 0.5;
        assert_eq!(a.ae_fingerprint(), b.ae_fingerprint());
        b.latent_dim = 5;
        assert_ne!(a.ae_fingerprint(), b.ae_fingerprint());
        assert_ne!(a.diffusion_fingerprint(), b.diffusion_fingerprint());
    }
}
