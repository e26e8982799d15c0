//! Command-line pipeline: gen-data, train-ae, train-diff, sample, eval.
//!
//! Output layout under `--out`:
//!
//! ```text
//! gen-data    manifest.txt  config.toml  structures/00000.cif ...
//! train-ae    ae.ckpt  ae_metrics.log
//! train-diff  diff.ckpt  diff_metrics.log
//! sample      index.tsv  samples/00000.cif ...
//! eval        reports.tsv  summary.json
//! ```
//!
//! Errors print as one line, `error: <kind>: <message>`, and exit with 1 for
//! user errors (bad flags, missing or colliding files, mismatched checkpoints)
//! and 2 for internal failures.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Deserialize;

use crate::autoencoder::{AeTrainer, Autoencoder};
use crate::canon::{apply_order, canonical_order, infer_bonds, labeled_fragments};
use crate::config::RunConfig;
use crate::crystal::{centered, CrystalStructure};
use crate::diffusion::{
    sample_atom_count, sample_structure, CondFeatures, CondSource, ConditioningSpec, DiffTrainer, DiffusionExample,
    SampleOptions,
};
use crate::eval::{self, EvalSummary, EvalThresholds, SampleReport};
use crate::io::{load_checkpoint, read_cif, save_checkpoint, toy_dataset, write_cif_named, DatasetManifest, Split};

#[derive(Debug)]
pub enum CliError {
    User(String),
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::User(_) => 1,
            CliError::Internal(_) => 2,
        }
    }

    /// The message with line breaks flattened.
    pub fn one_line(&self) -> String {
        let (kind, msg) = match self {
            CliError::User(m) => ("user", m),
            CliError::Internal(m) => ("internal", m),
        };
        format!("error: {kind}: {}", msg.split_whitespace().collect::<Vec<_>>().join(" "))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.one_line())
    }
}

impl std::error::Error for CliError {}

pub type Result<T> = std::result::Result<T, CliError>;

fn user(m: impl fmt::Display) -> CliError {
    CliError::User(m.to_string())
}

fn internal(m: impl fmt::Display) -> CliError {
    CliError::Internal(m.to_string())
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| user(format!("cannot write {}: {e}", path.display())))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| user(format!("cannot create {}: {e}", path.display())))
}

/// Refuses to overwrite existing outputs unless forced.
fn claim(paths: &[PathBuf], force: bool) -> Result<()> {
    if force {
        return Ok(());
    }
    match paths.iter().find(|p| p.exists()) {
        Some(p) => Err(user(format!("output exists: {} (pass --force to overwrite)", p.display()))),
        None => Ok(()),
    }
}

/// Structures of one split, in manifest order.
pub fn load_split(manifest: &Path, split: Option<Split>) -> Result<Vec<CrystalStructure>> {
    if !manifest.is_file() {
        return Err(user(format!("manifest not found: {}", manifest.display())));
    }
    let m = DatasetManifest::load(manifest).map_err(user)?;
    m.entries
        .iter()
        .filter(|(_, s)| split.is_none_or(|want| *s == want))
        .map(|(p, _)| read_cif(&DatasetManifest::resolve(manifest, p)).map_err(user))
        .collect()
}

fn load_ck(path: &Path, what: &str) -> Result<crate::io::Checkpoint> {
    if !path.is_file() {
        return Err(user(format!("{what} checkpoint not found: {}", path.display())));
    }
    load_checkpoint(path).map_err(|e| user(format!("{what} checkpoint {}: {e}", path.display())))
}

pub fn load_autoencoder(cfg: &RunConfig, path: &Path) -> Result<Autoencoder> {
    let ck = load_ck(path, "autoencoder")?;
    Autoencoder::from_checkpoint(cfg, &ck).map_err(|e| user(format!("autoencoder checkpoint {}: {e}", path.display())))
}

pub fn load_diffusion(cfg: &RunConfig, path: &Path) -> Result<DiffTrainer> {
    let ck = load_ck(path, "diffusion")?;
    DiffTrainer::from_checkpoint(cfg, &ck).map_err(|e| user(format!("diffusion checkpoint {}: {e}", path.display())))
}

struct MetricsLog {
    file: fs::File,
    interval: u64,
}

impl MetricsLog {
    fn open(path: &Path, append: bool, interval: u64) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .append(append)
            .truncate(!append)
            .open(path)
            .map_err(|e| user(format!("cannot open {}: {e}", path.display())))?;
        Ok(Self { file, interval })
    }

    fn record(&mut self, step: u64, line: &str) -> std::io::Result<()> {
        if (step + 1).is_multiple_of(self.interval) {
            writeln!(self.file, "{line}")?;
        }
        Ok(())
    }
}

/// Writes a toy dataset as CIFs plus an 80/10/10 manifest.
pub fn cmd_gen_data(cfg: &RunConfig, out: &Path, force: bool) -> Result<DatasetManifest> {
    let manifest_path = out.join("manifest.txt");
    let dir = out.join("structures");
    claim(&[manifest_path.clone(), dir.clone()], force)?;
    if dir.exists() {
        fs::remove_dir_all(&dir).map_err(|e| user(format!("cannot clear {}: {e}", dir.display())))?;
    }
    create_dir(&dir)?;
    let data = toy_dataset(cfg.seed, cfg.dataset_count, (cfg.min_atoms, cfg.max_atoms)).map_err(user)?;
    let mut paths = Vec::with_capacity(data.len());
    for (i, s) in data.iter().enumerate() {
        let rel = PathBuf::from(format!("structures/{i:05}.cif"));
        write_file(&out.join(&rel), write_cif_named(s, &format!("toy_{i:05}")))?;
        paths.push(rel);
    }
    let m = DatasetManifest::split_80_10_10(paths, cfg.seed).map_err(internal)?;
    write_file(&manifest_path, m.to_text())?;
    write_file(&out.join("config.toml"), cfg.to_toml())?;
    Ok(m)
}

/// Trains (or resumes) the autoencoder until `cfg.ae_steps` total steps.
pub fn cmd_train_ae(cfg: &RunConfig, data: &Path, out: &Path, force: bool, resume: Option<&Path>) -> Result<AeTrainer> {
    let ck_path = out.join("ae.ckpt");
    let log_path = out.join("ae_metrics.log");
    if resume.is_none() {
        claim(&[ck_path.clone(), log_path.clone()], force)?;
    }
    let train = load_split(data, Some(Split::Train))?;
    if train.is_empty() {
        return Err(user(format!("{} has no train entries", data.display())));
    }
    let mut trainer = match resume {
        Some(p) => {
            let ck = load_ck(p, "autoencoder")?;
            AeTrainer::from_checkpoint(cfg, &ck).map_err(|e| user(format!("autoencoder checkpoint {}: {e}", p.display())))?
        }
        None => AeTrainer::new(cfg).map_err(user)?,
    };
    create_dir(out)?;
    let mut log = MetricsLog::open(&log_path, resume.is_some(), cfg.log_interval)?;
    let mut io_err = None;
    let remaining = cfg.ae_steps.saturating_sub(trainer.step);
    trainer
        .train(&train, remaining, &mut |l| {
            if let Err(e) = log.record(l.step, &l.to_line()) {
                io_err.get_or_insert(e);
            }
        })
        .map_err(internal)?;
    if let Some(e) = io_err {
        return Err(user(format!("cannot write {}: {e}", log_path.display())));
    }
    save_checkpoint(&ck_path, &trainer.to_checkpoint()).map_err(user)?;
    Ok(trainer)
}

/// Encodes the training split with a frozen autoencoder and trains the denoiser.
pub fn cmd_train_diff(
    cfg: &RunConfig,
    data: &Path,
    ae_path: &Path,
    out: &Path,
    force: bool,
    resume: Option<&Path>,
) -> Result<DiffTrainer> {
    let ck_path = out.join("diff.ckpt");
    let log_path = out.join("diff_metrics.log");
    if resume.is_none() {
        claim(&[ck_path.clone(), log_path.clone()], force)?;
    }
    let ae = load_autoencoder(cfg, ae_path)?;
    let train = load_split(data, Some(Split::Train))?;
    if train.is_empty() {
        return Err(user(format!("{} has no train entries", data.display())));
    }
    let examples = train
        .par_iter()
        .map(|s| crate::diffusion::prepare_example(&ae, s, cfg.bond_factor))
        .collect::<std::result::Result<Vec<DiffusionExample>, _>>()
        .map_err(internal)?;
    let mut trainer = match resume {
        Some(p) => load_diffusion(cfg, p)?,
        None => DiffTrainer::new(cfg),
    };
    create_dir(out)?;
    let mut log = MetricsLog::open(&log_path, resume.is_some(), cfg.log_interval)?;
    let mut io_err = None;
    let remaining = cfg.diff_steps.saturating_sub(trainer.step);
    trainer
        .train(&examples, remaining, &mut |l| {
            if let Err(e) = log.record(l.step, &l.to_line()) {
                io_err.get_or_insert(e);
            }
        })
        .map_err(internal)?;
    if let Some(e) = io_err {
        return Err(user(format!("cannot write {}: {e}", log_path.display())));
    }
    save_checkpoint(&ck_path, &trainer.to_checkpoint()).map_err(user)?;
    Ok(trainer)
}

/// Conditioning request read from a TOML file. `structure` is a CIF path
/// relative to the file; the flags select what of it is given to the sampler.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionRequest {
    pub structure: PathBuf,
    #[serde(default)]
    pub inpaint: bool,
    /// Fragment left free when inpainting; defaults to the last one.
    #[serde(default)]
    pub free_fragment: Option<usize>,
    #[serde(default)]
    pub composition: bool,
    #[serde(default)]
    pub bonds: bool,
    #[serde(default)]
    pub clusters: bool,
}

/// Canonically ordered reference plus the spec and sources it implies.
pub fn build_condition(req: &ConditionRequest, bond_factor: f64, reference: &CrystalStructure) -> Result<(ConditioningSpec, CondSource)> {
    let order = canonical_order(&infer_bonds(reference, bond_factor)).map_err(internal)?;
    let cs = apply_order(reference, order.as_slice()).map_err(internal)?;
    let bg = infer_bonds(&cs, bond_factor);
    let frags = labeled_fragments(&bg);
    let n = cs.num_atoms();
    let mut atom_fragment = vec![0; n];
    for (k, f) in frags.iter().enumerate() {
        for &a in &f.atoms {
            atom_fragment[a] = k;
        }
    }
    let mut spec = ConditioningSpec::de_novo(n);
    if req.inpaint && frags.len() > 1 {
        let free = req.free_fragment.unwrap_or(frags.len() - 1);
        if free >= frags.len() {
            return Err(user(format!("free_fragment {free} out of range (structure has {} fragments)", frags.len())));
        }
        spec.free_fragment = Some(free);
        for (a, &f) in atom_fragment.iter().enumerate() {
            spec.fixed[a] = f != free;
        }
    }
    spec.composition = req.composition;
    spec.bonds = req.bonds;
    spec.clusters = req.clusters || req.composition || req.bonds;
    spec.order = !spec.is_structural();
    let src = CondSource {
        types: Some(cs.atom_types().to_vec()),
        frac: Some(centered(&cs).frac().to_vec()),
        bonds: Some(bg.edges()),
        atom_fragment: Some(atom_fragment),
    };
    Ok((spec, src))
}

pub fn read_condition(path: &Path, bond_factor: f64) -> Result<(ConditioningSpec, CondSource)> {
    let text = fs::read_to_string(path).map_err(|e| user(format!("cannot read {}: {e}", path.display())))?;
    let req: ConditionRequest = toml::from_str(&text).map_err(|e| user(format!("{}: {e}", path.display())))?;
    let cif = path.parent().unwrap_or(Path::new(".")).join(&req.structure);
    let reference = read_cif(&cif).map_err(user)?;
    build_condition(&req, bond_factor, &reference)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub file: String,
    /// `None` when the decoded lattice was degenerate.
    pub id: Option<String>,
    pub n_atoms: usize,
    pub seed: u64,
    pub stream: u64,
    pub mode: String,
}

impl SampleRecord {
    pub fn to_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}",
            self.file,
            self.id.as_deref().unwrap_or("-"),
            self.n_atoms,
            self.seed,
            self.stream,
            self.mode
        )
    }
}

/// Generator for sample `index`; independent of thread scheduling.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.rotate_left(17) ^ 0x5A3B_1E00_D00D_0001);
    rng.set_stream(index);
    rng
}

/// Warning text when `n` lies outside the atom counts seen in training.
pub fn size_warning(hist: &std::collections::BTreeMap<usize, f64>, n: usize) -> Option<String> {
    let (lo, hi) = (*hist.keys().next()?, *hist.keys().next_back()?);
    (n < lo || n > hi).then(|| format!("warning: N = {n} is outside the trained size range {lo}..={hi}"))
}

/// Draws `count` structures; N follows the training histogram unless a condition fixes it.
pub fn cmd_sample(
    cfg: &RunConfig,
    ae_path: &Path,
    diff_path: &Path,
    count: usize,
    cond: Option<&Path>,
    out: &Path,
    force: bool,
) -> Result<Vec<SampleRecord>> {
    let dir = out.join("samples");
    let index_path = out.join("index.tsv");
    claim(&[dir.clone(), index_path.clone()], force)?;
    let ae = load_autoencoder(cfg, ae_path)?;
    let diff = load_diffusion(cfg, diff_path)?;
    let condition = cond.map(|p| read_condition(p, cfg.bond_factor)).transpose()?;
    let hist = diff.histogram();
    if let Some((spec, _)) = &condition {
        let n = spec.fixed.len();
        if let Some(w) = size_warning(&hist, n) {
            eprintln!("{w}");
        }
    }
    let dcfg = &diff.denoiser.config;
    let opts = SampleOptions { n_steps: cfg.sample_steps, self_condition: true };

    let results: Vec<Result<(SampleRecord, String)>> = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = sample_rng(cfg.seed, i as u64);
            let (feats, mode, n) = match &condition {
                Some((spec, src)) => {
                    let f = CondFeatures::build(dcfg, spec, src).map_err(internal)?;
                    (f, spec.mode(), spec.fixed.len())
                }
                None => {
                    let n = sample_atom_count(&mut rng, &hist).map_err(internal)?;
                    (CondFeatures::de_novo(dcfg, n), "de-novo".to_string(), n)
                }
            };
            let file = format!("samples/{i:05}.cif");
            let decoded = sample_structure(&ae, &diff.denoiser, &diff.stats, &dcfg.schedule, &feats, opts, &mut rng);
            let (id, text) = match decoded {
                Ok(s) => (Some(eval::structure_id(&s, cfg.bond_factor)), write_cif_named(&s, &format!("sample_{i:05}"))),
                Err(crate::diffusion::DiffusionError::Crystal(e)) => (None, format!("# decode failed: {e}\n")),
                Err(crate::diffusion::DiffusionError::Autoencoder(e)) => (None, format!("# decode failed: {e}\n")),
                Err(e) => return Err(internal(e)),
            };
            Ok((SampleRecord { file, id, n_atoms: n, seed: cfg.seed, stream: i as u64, mode }, text))
        })
        .collect();

    if dir.exists() {
        fs::remove_dir_all(&dir).map_err(|e| user(format!("cannot clear {}: {e}", dir.display())))?;
    }
    create_dir(&dir)?;
    let mut index = String::from("# file\tid\tn_atoms\tseed\tstream\tmode\n");
    let mut records = Vec::with_capacity(count);
    for r in results {
        let (rec, text) = r?;
        write_file(&out.join(&rec.file), text)?;
        index.push_str(&rec.to_line());
        index.push('\n');
        records.push(rec);
    }
    write_file(&index_path, index)?;
    Ok(records)
}

/// Sorted `*.cif` files directly inside `dir`.
fn cif_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let rd = fs::read_dir(dir).map_err(|e| user(format!("cannot read {}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = rd
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "cif"))
        .collect();
    files.sort();
    Ok(files)
}

/// Scores every CIF in `samples`; unparseable files count as identifier failures.
pub fn cmd_eval(
    cfg: &RunConfig,
    samples: &Path,
    train_manifest: &Path,
    reference_manifest: Option<&Path>,
    out: &Path,
    force: bool,
) -> Result<EvalSummary> {
    let reports_path = out.join("reports.tsv");
    let summary_path = out.join("summary.json");
    claim(&[reports_path.clone(), summary_path.clone()], force)?;
    let th = EvalThresholds { bond_factor: cfg.bond_factor, overlap_factor: cfg.overlap_factor };
    let files = cif_files(samples)?;
    let reports: Vec<SampleReport> = files
        .par_iter()
        .map(|p| {
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            match read_cif(p) {
                Ok(s) => SampleReport::evaluate(name, &s, &th),
                Err(_) => SampleReport::failed(name),
            }
        })
        .collect();
    let train = load_split(train_manifest, Some(Split::Train))?;
    let train_ids: HashSet<String> = train.par_iter().map(|s| eval::structure_id(s, th.bond_factor)).collect();
    let train_components: BTreeSet<String> = train.iter().flat_map(|s| eval::components(s, th.bond_factor)).collect();
    let reference = match reference_manifest {
        Some(p) => Some(
            load_split(p, None)?
                .iter()
                .flat_map(|s| eval::components(s, th.bond_factor))
                .collect::<BTreeSet<String>>(),
        ),
        None => None,
    };
    let summary = eval::summarize(&reports, &train_ids, &train_components, reference.as_ref());

    create_dir(out)?;
    let mut lines = format!("# path\tid\t{}\n", eval::ValidityReport::FLAG_NAMES.join(","));
    for r in &reports {
        lines.push_str(&r.to_line());
        lines.push('\n');
    }
    write_file(&reports_path, lines)?;
    let json = serde_json::to_string_pretty(&summary).map_err(internal)?;
    write_file(&summary_path, json + "\n")?;
    Ok(summary)
}

#[derive(Debug, Parser)]
#[command(name = "xtalgen", version, about = "Latent diffusion for periodic crystal structures")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration; defaults apply to missing keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Overwrite existing outputs.
    #[arg(long)]
    pub force: bool,
    /// `key=value` config override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl Common {
    /// Config file, then `--set` overrides, then `--seed`.
    pub fn resolve(&self) -> Result<RunConfig> {
        let text = match &self.config {
            Some(p) => fs::read_to_string(p).map_err(|e| user(format!("cannot read config {}: {e}", p.display())))?,
            None => String::new(),
        };
        let mut overrides = self.set.clone();
        if let Some(s) = self.seed {
            overrides.push(format!("seed={s}"));
        }
        RunConfig::from_toml_with(&text, &overrides).map_err(user)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset and its split manifest.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Train the autoencoder on the manifest's train split.
    TrainAe {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint to continue from.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Train the latent denoiser against a frozen autoencoder.
    TrainDiff {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ae: PathBuf,
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Generate structures.
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ae: PathBuf,
        #[arg(long)]
        diff: PathBuf,
        #[arg(long, default_value_t = 10)]
        count: usize,
        /// TOML conditioning request.
        #[arg(long)]
        cond: Option<PathBuf>,
    },
    /// Score a directory of CIFs against the training set.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        samples: PathBuf,
        /// Manifest whose train split defines novelty.
        #[arg(long)]
        train: PathBuf,
        /// Manifest of reference structures for rediscovery counts.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
}

/// Runs one parsed command and returns a one-line summary.
pub fn execute(cli: Cli) -> Result<String> {
    match cli.command {
        Command::GenData { common } => {
            let cfg = common.resolve()?;
            let m = cmd_gen_data(&cfg, &common.out, common.force)?;
            Ok(format!(
                "wrote {} structures (train {} val {} test {})",
                m.entries.len(),
                m.count(Split::Train),
                m.count(Split::Val),
                m.count(Split::Test)
            ))
        }
        Command::TrainAe { common, data, resume } => {
            let cfg = common.resolve()?;
            let t = cmd_train_ae(&cfg, &data, &common.out, common.force, resume.as_deref())?;
            Ok(format!("autoencoder at step {}", t.step))
        }
        Command::TrainDiff { common, data, ae, resume } => {
            let cfg = common.resolve()?;
            let t = cmd_train_diff(&cfg, &data, &ae, &common.out, common.force, resume.as_deref())?;
            Ok(format!("denoiser at step {}", t.step))
        }
        Command::Sample { common, ae, diff, count, cond } => {
            let cfg = common.resolve()?;
            let recs = cmd_sample(&cfg, &ae, &diff, count, cond.as_deref(), &common.out, common.force)?;
            let failed = recs.iter().filter(|r| r.id.is_none()).count();
            Ok(format!("wrote {} samples ({failed} failed to decode)", recs.len()))
        }
        Command::Eval { common, samples, train, reference } => {
            let cfg = common.resolve()?;
            let s = cmd_eval(&cfg, &samples, &train, reference.as_deref(), &common.out, common.force)?;
            Ok(format!(
                "total={} valid={} unique={} novel={} vnu={}",
                s.vnu.total, s.vnu.valid, s.vnu.unique, s.vnu.novel, s.vnu.vnu
            ))
        }
    }
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(stdout, "{e}");
                return 0;
            }
            let _ = writeln!(stderr, "{}", user(e.to_string().lines().next().unwrap_or("bad arguments")));
            return 1;
        }
    };
    match execute(cli) {
        Ok(msg) => {
            let _ = writeln!(stdout, "{msg}");
            0
        }
        Err(e) => {
            let _ = writeln!(stderr, "{e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_args(args: &[&str]) -> (i32, String, String) {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = run(std::iter::once("xtalgen").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn size_warning_outside_training_range() {
        let hist: std::collections::BTreeMap<usize, f64> = [(4, 1.0), (9, 2.0)].into_iter().collect();
        assert!(size_warning(&hist, 4).is_none());
        assert!(size_warning(&hist, 9).is_none());
        assert!(size_warning(&hist, 3).unwrap().contains("4..=9"));
        assert!(size_warning(&hist, 10).is_some());
        assert!(size_warning(&Default::default(), 10).is_none());
    }

    #[test]
    fn usage_errors_exit_one_on_a_single_line() {
        let (code, _, err) = run_args(&["bogus"]);
        assert_eq!(code, 1);
        assert_eq!(err.lines().count(), 1);
        assert!(err.starts_with("error: user:"));
        let (code, _, _) = run_args(&["gen-data"]);
        assert_eq!(code, 1);
        let (code, out, _) = run_args(&["--help"]);
        assert_eq!(code, 0);
        assert!(out.contains("gen-data"));
    }

    #[test]
    fn bad_config_and_missing_inputs_are_user_errors() {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path().to_str().unwrap();
        let (code, _, err) = run_args(&["gen-data", "--out", d, "--set", "no_such_key=1"]);
        assert_eq!(code, 1, "{err}");
        let (code, _, err) = run_args(&["train-ae", "--out", d, "--data", &format!("{d}/missing.txt")]);
        assert_eq!(code, 1);
        assert!(err.contains("manifest not found"), "{err}");
        let (code, _, err) = run_args(&["sample", "--out", d, "--ae", &format!("{d}/a.ckpt"), "--diff", &format!("{d}/d.ckpt")]);
        assert_eq!(code, 1);
        assert!(err.contains("autoencoder checkpoint not found"), "{err}");
    }

    #[test]
    fn gen_data_collision_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig { dataset_count: 20, min_atoms: 3, max_atoms: 10, seed: 4, ..RunConfig::default() };
        let a = dir.path().join("a");
        let m = cmd_gen_data(&cfg, &a, false).unwrap();
        assert_eq!((m.count(Split::Train), m.count(Split::Val), m.count(Split::Test)), (16, 2, 2));
        assert!(matches!(cmd_gen_data(&cfg, &a, false), Err(CliError::User(_))));
        cmd_gen_data(&cfg, &a, true).unwrap();
        let b = dir.path().join("b");
        cmd_gen_data(&cfg, &b, false).unwrap();
        for i in 0..20 {
            let p = format!("structures/{i:05}.cif");
            assert_eq!(fs::read(a.join(&p)).unwrap(), fs::read(b.join(&p)).unwrap());
        }
        assert_eq!(load_split(&a.join("manifest.txt"), None).unwrap().len(), 20);
    }

    #[test]
    fn condition_request_builds_spec() {
        let s = toy_dataset(1, 1, (6, 12)).unwrap().remove(0);
        let req = ConditionRequest {
            structure: "x.cif".into(),
            inpaint: true,
            free_fragment: Some(0),
            composition: true,
            bonds: false,
            clusters: false,
        };
        let (spec, src) = build_condition(&req, 1.2, &s).unwrap();
        assert!(spec.composition && spec.clusters && !spec.order);
        assert_eq!(spec.fixed.len(), s.num_atoms());
        assert!(spec.fixed.iter().any(|&f| !f));
        assert_eq!(src.types.as_ref().unwrap().len(), s.num_atoms());
        let bad = ConditionRequest { free_fragment: Some(99), ..req };
        assert!(build_condition(&bad, 1.2, &s).is_err());
        assert!(toml::from_str::<ConditionRequest>("structure = \"a\"\nwhatever = 1").is_err());
    }
}
