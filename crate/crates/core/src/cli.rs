//! `kdmcse` command-line interface.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::encoder::{load_checkpoint, save_checkpoint};
use crate::error::{Error, Result};
use crate::eval::{evaluate, load_sts, EvalReport};
use crate::objectives::gradcheck::{ObjectiveKind, RandomCase};
use crate::similarity::{pairwise_cosine, similarity_histogram, true_caption_rank, HistogramBin};
use crate::teacher_store::{load_features, write_emb1, Modality};
use crate::trainer::{
    fmt_float, init_student, train, DatasetManifest, SyntheticCorpus, SyntheticSpec, TrainConfig,
    TrainInputs,
};

#[derive(Debug, Parser)]
#[command(
    name = "kdmcse",
    version,
    about = "Contrastive sentence embeddings distilled from a frozen multimodal teacher"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a student and write history CSVs and checkpoints into --out.
    Train(TrainArgs),
    /// Score a checkpoint on an STS pair file.
    Eval(EvalArgs),
    /// Teacher similarity histograms and true-caption ranks.
    Stats(StatsArgs),
    /// Finite-difference check of every objective gradient.
    Gradcheck(GradcheckArgs),
    /// Dump student sentence embeddings as EMB1.
    Export(ExportArgs),
    /// Write the synthetic grounded corpus (features, manifest, dev pairs).
    Synth(SynthArgs),
}

#[derive(Debug, Args, Default)]
pub struct ConfigArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `KEY=VALUE`, applied after --config; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub objective: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl ConfigArgs {
    /// Config file, then `--set` overrides, then the `--objective` / `--seed` shorthands.
    pub fn resolve(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(p) => TrainConfig::load(p)?,
            None => TrainConfig::default(),
        };
        for o in &self.overrides {
            cfg.apply_override(o)?;
        }
        if let Some(o) = &self.objective {
            cfg.set("objective", o)?;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub text_features: PathBuf,
    #[arg(long)]
    pub visual_features: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub sts: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub sts: PathBuf,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub text_features: PathBuf,
    #[arg(long)]
    pub visual_features: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Write the table here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Output EMB1 file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Runs one invocation; returns what should go to stdout.
pub fn run(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Train(a) => run_train(&a),
        Command::Eval(a) => run_eval(&a),
        Command::Stats(a) => run_stats(&a),
        Command::Gradcheck(a) => run_gradcheck(&a),
        Command::Export(a) => run_export(&a),
        Command::Synth(a) => run_synth(&a),
    }
}

fn run_train(a: &TrainArgs) -> Result<String> {
    let cfg = a.config.resolve()?;
    let text = load_features(&a.text_features, Modality::Text, cfg.normalize_features)?;
    let visual = load_features(&a.visual_features, Modality::Visual, cfg.normalize_features)?;
    let manifest = DatasetManifest::load(&a.manifest)?;
    let dev = load_sts(&a.sts)?;
    let mut student = init_student(&cfg, &manifest, &text, &visual, &dev)?;
    let inputs = TrainInputs {
        manifest: &manifest,
        text: &text,
        visual: &visual,
        dev: &dev,
    };
    let history = train(&cfg, &inputs, &mut student)?;

    create_dir(&a.out)?;
    write(&a.out.join("config.txt"), cfg.to_text())?;
    write(&a.out.join("steps.csv"), history.steps_csv())?;
    write(&a.out.join("evals.csv"), history.evals_csv())?;
    save_checkpoint(&student, &a.out.join("final.ckpt"))?;
    let mut summary = format!("steps={}", history.steps.len());
    if let Some(best) = &history.best {
        save_checkpoint(&best.params, &a.out.join("best.ckpt"))?;
        let _ = write!(
            summary,
            " best_step={} best_spearman={}",
            best.step,
            fmt_float(best.spearman)
        );
    }
    summary.push('\n');
    Ok(summary)
}

pub fn report_line(r: &EvalReport) -> String {
    format!(
        "spearman={} alignment={} uniformity={}\n",
        fmt_float(r.spearman),
        fmt_float(r.alignment),
        fmt_float(r.uniformity)
    )
}

fn run_eval(a: &EvalArgs) -> Result<String> {
    let student = load_checkpoint(&a.checkpoint)?;
    let pairs = load_sts(&a.sts)?;
    Ok(report_line(&evaluate(&student, &pairs)?))
}

pub fn histogram_csv(bins: &[HistogramBin]) -> String {
    let mut s = String::from("bin_lo,bin_hi,count\n");
    for b in bins {
        let _ = writeln!(s, "{},{},{}", fmt_float(b.lo), fmt_float(b.hi), b.count);
    }
    s
}

/// Distinct sentences and images of the manifest pairs, in first-seen order,
/// with each image's caption indices.
fn caption_groups(
    manifest: &DatasetManifest,
) -> (Vec<&str>, Vec<&str>, BTreeMap<usize, Vec<usize>>) {
    let (mut sentences, mut images) = (Vec::new(), Vec::new());
    let (mut s_idx, mut i_idx) = (BTreeMap::new(), BTreeMap::new());
    let mut gold: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (s, i) in &manifest.multimodal {
        let si = *s_idx.entry(s.as_str()).or_insert_with(|| {
            sentences.push(s.as_str());
            sentences.len() - 1
        });
        let ii = *i_idx.entry(i.as_str()).or_insert_with(|| {
            images.push(i.as_str());
            images.len() - 1
        });
        let caps = gold.entry(ii).or_default();
        if !caps.contains(&si) {
            caps.push(si);
        }
    }
    (sentences, images, gold)
}

fn run_stats(a: &StatsArgs) -> Result<String> {
    let cfg = a.config.resolve()?;
    let text = load_features(&a.text_features, Modality::Text, cfg.normalize_features)?;
    let visual = load_features(&a.visual_features, Modality::Visual, cfg.normalize_features)?;
    let manifest = DatasetManifest::load(&a.manifest)?;
    manifest.check_against(&text, &visual)?;
    if manifest.multimodal.is_empty() {
        return Err(Error::InconsistentManifest(
            "stats needs image-text pairs".into(),
        ));
    }
    let (sentences, images, gold) = caption_groups(&manifest);
    let t = text.gather(&sentences)?;
    let v = visual.gather(&images)?;
    let tt = pairwise_cosine(&t, &t, Modality::Text, Modality::Text)?;
    let tv = pairwise_cosine(&t, &v, Modality::Text, Modality::Visual)?;

    create_dir(&a.out)?;
    write(
        &a.out.join("tt_histogram.csv"),
        histogram_csv(&similarity_histogram(&tt, cfg.histogram_bins)?),
    )?;
    write(
        &a.out.join("tv_histogram.csv"),
        histogram_csv(&similarity_histogram(&tv, cfg.histogram_bins)?),
    )?;
    let mut ranks = String::from("image_id,max_rank\n");
    for (image, rank) in true_caption_rank(&tv, &gold)? {
        let _ = writeln!(ranks, "{},{}", images[image], rank);
    }
    write(&a.out.join("caption_ranks.csv"), ranks)?;
    Ok(format!(
        "captions={} images={}\n",
        sentences.len(),
        images.len()
    ))
}

/// Batches per objective, cycling `N ∈ {2, 3, 4}` and `dim ∈ {4, 8}`.
pub const GRADCHECK_CASES: usize = 20;
pub const GRADCHECK_EPSILON: f64 = 1e-4;
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

/// Rows `(objective, slot, max_rel_err, pass)` over [`GRADCHECK_CASES`] random batches.
pub fn gradcheck_table(cfg: &TrainConfig) -> Result<Vec<(String, String, f64, bool)>> {
    let mut rows = Vec::new();
    for kind in ObjectiveKind::ALL {
        let mut worst: BTreeMap<&'static str, f64> = BTreeMap::new();
        for case in 0..GRADCHECK_CASES {
            let n = 2 + case % 3;
            let dim = if case % 2 == 0 { 4 } else { 8 };
            let seed = cfg.seed.wrapping_mul(1_000_003).wrapping_add(case as u64);
            let report = RandomCase::generate(kind, n, dim, seed).check(
                &cfg.objective_config,
                GRADCHECK_EPSILON,
                GRADCHECK_TOLERANCE,
            )?;
            for s in report.slots {
                let e = worst.entry(s.slot.name()).or_insert(0.0);
                *e = e.max(s.max_rel_err);
            }
        }
        for (slot, err) in worst {
            rows.push((
                kind.name().to_string(),
                slot.to_string(),
                err,
                err < GRADCHECK_TOLERANCE,
            ));
        }
    }
    Ok(rows)
}

fn run_gradcheck(a: &GradcheckArgs) -> Result<String> {
    let cfg = a.config.resolve()?;
    let rows = gradcheck_table(&cfg)?;
    let mut s = String::from("objective,slot,max_rel_err,pass\n");
    for (obj, slot, err, pass) in &rows {
        let _ = writeln!(s, "{obj},{slot},{},{pass}", fmt_float(*err));
    }
    let failed = rows.iter().filter(|r| !r.3).count();
    let out = match &a.out {
        Some(p) => {
            write(p, &s)?;
            String::new()
        }
        None => s,
    };
    if failed > 0 {
        return Err(Error::GradCheckFailed {
            failed,
            output: out,
        });
    }
    Ok(out)
}

fn run_export(a: &ExportArgs) -> Result<String> {
    let student = load_checkpoint(&a.checkpoint)?;
    let ids = student.ids().to_vec();
    let rows = ids
        .iter()
        .map(|id| student.embed(id))
        .collect::<Result<Vec<_>>>()?;
    write_emb1(&a.out, &ids, &rows)?;
    Ok(format!("rows={} dim={}\n", ids.len(), student.dims.hidden))
}

fn run_synth(a: &SynthArgs) -> Result<String> {
    let mut spec = SyntheticSpec::default();
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    let corpus = SyntheticCorpus::generate(&spec)?;
    create_dir(&a.out)?;
    corpus.text.write(&a.out.join("text.emb"))?;
    corpus.visual.write(&a.out.join("visual.emb"))?;
    write(&a.out.join("manifest.tsv"), corpus.manifest.to_text())?;
    let mut sts = String::new();
    for p in &corpus.dev {
        let _ = writeln!(sts, "{}\t{}\t{:?}", p.a, p.b, p.gold);
    }
    write(&a.out.join("dev.tsv"), sts)?;
    Ok(format!(
        "sentences={} images={} dev_pairs={}\n",
        corpus.text.len(),
        corpus.visual.len(),
        corpus.dev.len()
    ))
}
