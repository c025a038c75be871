//! Command-line front end. `cli` returns the process exit code: 0 on
//! success, 1 on a runtime error, 2 on a usage error.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use super::dataset::{list_sequences, load_otb_sequence, Sequence};
use super::gallery::{default_checkpoints, dump_template_gallery};
use super::poc::poc_experiment;
use super::results::{write_results, ResultsFile, SequenceSummary};
use super::runner::{run_ope_with, RunOptions, RunResult};
use super::synth::{generate_synthetic, presets, suite, SyntheticSpec};
use crate::error::{Error, Result};
use crate::matcher::{EncoderKind, TrackerConfig};
use crate::memory::{load_snapshot, save_snapshot, BoundMode, LowerBoundConfig};

#[derive(Debug, Parser)]
#[command(name = "gramtrack", version, about = "Template-memory tracking and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Track one sequence.
    Track {
        #[command(flatten)]
        common: Common,
        /// Save the final long-term memory here.
        #[arg(long)]
        save_memory: Option<PathBuf>,
        /// Start from a saved long-term memory.
        #[arg(long)]
        load_memory: Option<PathBuf>,
    },
    /// Track every sequence of a dataset and report per-sequence and mean metrics.
    Bench {
        #[command(flatten)]
        common: Common,
    },
    /// Re-run one sequence from its own saved memory until the determinant converges.
    Poc {
        #[command(flatten)]
        common: Common,
        /// Maximum number of runs.
        #[arg(long, default_value_t = 10)]
        runs: usize,
    },
    /// Compare the full system against configurations with parts switched off.
    Ablate {
        #[command(flatten)]
        common: Common,
    },
    /// Write synthetic sequences.
    Synth {
        /// JSON sequence spec.
        #[arg(long, conflicts_with = "preset")]
        spec: Option<PathBuf>,
        /// Built-in spec name, `suite` for the evaluation suite or `all`.
        #[arg(long)]
        preset: Option<String>,
        /// Override the spec's random seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; each sequence gets a subdirectory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Track one sequence and dump its long-term templates at checkpoints.
    Gallery {
        #[command(flatten)]
        common: Common,
        /// Comma-separated frame indices; default first, middle, last.
        #[arg(long, value_delimiter = ',')]
        checkpoints: Option<Vec<usize>>,
    },
}

#[derive(Debug, Clone, Args)]
struct Common {
    /// Dataset root holding one directory per sequence.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Sequence directory, or a sequence name inside `--dataset`.
    #[arg(long)]
    sequence: Option<String>,
    /// Lower-bound mode: static, dynamic or ensemble.
    #[arg(long, value_parser = parse_bound)]
    bound: Option<BoundMode>,
    /// Lower-bound threshold.
    #[arg(long)]
    ell: Option<f64>,
    /// Long-term memory capacity.
    #[arg(long)]
    k_lt: Option<usize>,
    /// Short-term memory capacity.
    #[arg(long)]
    k_st: Option<usize>,
    /// IoU below which the short-term memory is reinitialized.
    #[arg(long)]
    th_iou: Option<f64>,
    /// Taper fraction of the template mask.
    #[arg(long)]
    alpha: Option<f64>,
    /// Consider a memory update every this many frames.
    #[arg(long)]
    dilation: Option<usize>,
    /// Feature encoder: ncc or precomputed.
    #[arg(long, value_parser = parse_encoder)]
    encoder: Option<EncoderKind>,
    /// Precomputed features (one subdirectory per sequence for multi-sequence commands).
    #[arg(long)]
    features_dir: Option<PathBuf>,
    /// Feature stride in pixels.
    #[arg(long)]
    stride: Option<usize>,
    /// Seed echoed into the results file.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Use the raw activation maps.
    #[arg(long)]
    no_modulation: bool,
    /// Skip the template mask.
    #[arg(long)]
    no_masking: bool,
    /// Long-term memory only.
    #[arg(long)]
    no_stm: bool,
    /// Accept long-term candidates without any similarity bound.
    #[arg(long)]
    no_bound: bool,
    /// Single fixed template, no memory: the plain matcher.
    #[arg(long)]
    baseline: bool,
    /// Load tracker settings from a JSON file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn parse_bound(s: &str) -> std::result::Result<BoundMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_encoder(s: &str) -> std::result::Result<EncoderKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

impl Common {
    fn config(&self) -> Result<TrackerConfig> {
        let mut c = match &self.config {
            Some(p) => serde_json::from_str(&fs::read_to_string(p).map_err(|e| Error::ingestion(p, e.to_string()))?)?,
            None if self.baseline => TrackerConfig::baseline(),
            None => TrackerConfig::default(),
        };
        if let Some(mode) = self.bound {
            c.bound = LowerBoundConfig::with_default_ell(mode);
        }
        if let Some(ell) = self.ell {
            c.bound = LowerBoundConfig::new(c.bound.mode, ell)?;
        }
        if let Some(v) = self.k_lt {
            c.k_lt = v;
        }
        if let Some(v) = self.k_st {
            c.k_st = v;
        }
        if let Some(v) = self.th_iou {
            c.th_iou = v;
        }
        if let Some(v) = self.alpha {
            c.alpha = v;
        }
        if let Some(v) = self.dilation {
            c.dilation = v;
        }
        if let Some(v) = self.encoder {
            c.encoder.kind = v;
        }
        if let Some(v) = self.stride {
            c.encoder.stride = v;
        }
        c.modulation &= !self.no_modulation;
        c.masking &= !self.no_masking;
        c.use_stm &= !self.no_stm;
        c.use_bound &= !self.no_bound;
        c.validate()?;
        Ok(c)
    }

    fn sequence_dirs(&self) -> Result<Vec<PathBuf>> {
        match (&self.dataset, &self.sequence) {
            (Some(root), Some(name)) => Ok(vec![root.join(name)]),
            (Some(root), None) => {
                let dirs = list_sequences(root)?;
                if dirs.is_empty() {
                    return Err(Error::ingestion(root, "no sequences found"));
                }
                Ok(dirs)
            }
            (None, Some(path)) => Ok(vec![PathBuf::from(path)]),
            (None, None) => Err(Error::Parameter("pass --dataset and/or --sequence".into())),
        }
    }

    fn single_sequence(&self) -> Result<Sequence> {
        let dirs = self.sequence_dirs()?;
        if dirs.len() != 1 {
            return Err(Error::Parameter("this command takes a single sequence; pass --sequence".into()));
        }
        load_otb_sequence(&dirs[0])
    }

    fn features_for(&self, seq: &Sequence, multi: bool) -> Option<PathBuf> {
        self.features_dir
            .as_ref()
            .map(|d| if multi { d.join(&seq.name) } else { d.clone() })
    }
}

pub fn cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let parsed = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match dispatch(parsed.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Track { common, save_memory, load_memory } => {
            let config = common.config()?;
            let seq = common.single_sequence()?;
            let memory = load_memory.map(load_snapshot).transpose()?;
            let options = RunOptions {
                memory,
                crop_dir: None,
                features_dir: common.features_for(&seq, false),
            };
            let run = run_ope_with(&seq, &config, options)?;
            if let Some(dir) = save_memory {
                save_snapshot(&run.final_memory, dir)?;
            }
            report(&common.out, "track", &config, common.seed, &[(seq, run)])
        }
        Command::Bench { common } => {
            let config = common.config()?;
            let runs = run_all(&common, &config)?;
            report(&common.out, "bench", &config, common.seed, &runs)
        }
        Command::Poc { common, runs } => {
            let config = common.config()?;
            let seq = common.single_sequence()?;
            let features = common.features_for(&seq, false);
            let records = poc_experiment(&seq, &config, runs, &common.out.join("memory"), features.as_deref())?;
            let mut csv = String::from("run,norm_det,auc,slots,lt_updates\n");
            for r in &records {
                csv.push_str(&format!("{},{},{},{},{}\n", r.run, r.norm_det, r.auc, r.slots, r.lt_updates));
            }
            fs::create_dir_all(&common.out)?;
            fs::write(common.out.join("poc.csv"), csv)?;
            write_json(
                &common.out.join("poc.json"),
                &serde_json::json!({ "sequence": seq.name, "config": config, "runs": records }),
            )?;
            for r in &records {
                println!("run {}: det {:.6e} auc {:.4}", r.run, r.norm_det, r.auc);
            }
            Ok(())
        }
        Command::Ablate { common } => ablate(&common),
        Command::Synth { spec, preset, seed, out } => {
            let mut specs: Vec<SyntheticSpec> = match (spec, preset) {
                (Some(p), _) => vec![serde_json::from_str(
                    &fs::read_to_string(&p).map_err(|e| Error::ingestion(&p, e.to_string()))?,
                )?],
                (None, Some(name)) if name == "all" => presets(),
                (None, Some(name)) if name == "suite" => suite(),
                (None, Some(name)) => vec![presets()
                    .into_iter()
                    .find(|s| s.name == name)
                    .ok_or_else(|| Error::Parameter(format!("unknown preset `{name}`")))?],
                (None, None) => return Err(Error::Parameter("pass --spec or --preset".into())),
            };
            for s in &mut specs {
                if let Some(seed) = seed {
                    s.seed = seed;
                }
                let seq = generate_synthetic(s, &out)?;
                println!("{}: {} frames", seq.name, seq.len());
            }
            Ok(())
        }
        Command::Gallery { common, checkpoints } => {
            let config = common.config()?;
            let seq = common.single_sequence()?;
            let options = RunOptions {
                memory: None,
                crop_dir: Some(common.out.join("crops")),
                features_dir: common.features_for(&seq, false),
            };
            let run = run_ope_with(&seq, &config, options)?;
            let checkpoints = checkpoints.unwrap_or_else(|| default_checkpoints(run.frames.len()));
            let g = dump_template_gallery(&run, &common.out.join("gallery"), &checkpoints)?;
            println!("{} images written, {} missing", g.written, g.missing);
            report(&common.out, "gallery", &config, common.seed, &[(seq, run)])
        }
    }
}

fn run_all(common: &Common, config: &TrackerConfig) -> Result<Vec<(Sequence, RunResult)>> {
    let dirs = common.sequence_dirs()?;
    let multi = dirs.len() > 1;
    let seqs = dirs.iter().map(load_otb_sequence).collect::<Result<Vec<_>>>()?;
    let mut runs = seqs
        .into_par_iter()
        .map(|seq| {
            let options = RunOptions {
                memory: None,
                crop_dir: None,
                features_dir: common.features_for(&seq, multi),
            };
            let run = run_ope_with(&seq, config, options)?;
            Ok((seq, run))
        })
        .collect::<Result<Vec<_>>>()?;
    runs.sort_by(|a, b| a.0.name.cmp(&b.0.name));
    Ok(runs)
}

fn report(out: &Path, label: &str, config: &TrackerConfig, seed: u64, runs: &[(Sequence, RunResult)]) -> Result<()> {
    let summaries = runs
        .iter()
        .map(|(seq, run)| SequenceSummary::new(run, seq))
        .collect::<Result<Vec<_>>>()?;
    let file = ResultsFile::new(label, config, seed, summaries);
    let refs: Vec<&RunResult> = runs.iter().map(|(_, r)| r).collect();
    write_results(out, &file, &refs)?;
    for s in &file.sequences {
        println!("{}: auc {:.4} precision {:.4}", s.name, s.auc, s.precision);
    }
    println!(
        "mean over {}: auc {:.4} precision {:.4}",
        file.aggregate.sequences, file.aggregate.mean_auc, file.aggregate.mean_precision
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct AblationRow {
    label: String,
    mean_auc: f64,
    mean_precision: f64,
    relative_drift: f64,
}

/// The full system plus one run per requested ablation; with no ablation
/// flags, every component is switched off in turn.
fn ablate(common: &Common) -> Result<()> {
    let mut full = common.clone();
    full.no_modulation = false;
    full.no_masking = false;
    full.no_stm = false;
    full.no_bound = false;
    let requested = [
        ("no_modulation", common.no_modulation),
        ("no_masking", common.no_masking),
        ("no_stm", common.no_stm),
        ("no_bound", common.no_bound),
    ];
    let any = requested.iter().any(|(_, on)| *on);
    let mut variants = vec![("full".to_string(), full.config()?)];
    for (name, on) in requested {
        if any && !on {
            continue;
        }
        let mut c = full.clone();
        match name {
            "no_modulation" => c.no_modulation = true,
            "no_masking" => c.no_masking = true,
            "no_stm" => c.no_stm = true,
            _ => c.no_bound = true,
        }
        variants.push((name.to_string(), c.config()?));
    }
    let mut rows = Vec::new();
    for (label, config) in &variants {
        let runs = run_all(common, config)?;
        let dir = common.out.join(label);
        report(&dir, label, config, common.seed, &runs)?;
        let summaries = runs
            .iter()
            .map(|(seq, run)| SequenceSummary::new(run, seq))
            .collect::<Result<Vec<_>>>()?;
        let file = ResultsFile::new(label, config, common.seed, summaries);
        rows.push(AblationRow {
            label: label.clone(),
            mean_auc: file.aggregate.mean_auc,
            mean_precision: file.aggregate.mean_precision,
            relative_drift: file.aggregate.drift.relative_drift,
        });
    }
    write_json(&common.out.join("ablation.json"), &rows)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}
