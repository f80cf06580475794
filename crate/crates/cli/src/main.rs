//! `gse` — train, run and evaluate the gated speech enhancement models.

mod config;
mod evaluate;
mod formats;
mod gates;
mod gradcheck;
mod manifest;
mod synth;
mod trainer;
mod wav;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use gse_core::model::{build, count_params, Gating};

use config::{parse_snr_list, Settings};

#[derive(Parser)]
#[command(name = "gse", version, about = "Gated CNN speech enhancement toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the bundled synthetic corpus (speech, noise, manifest)
    SynthCorpus {
        out_dir: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        speakers: usize,
        #[arg(long, default_value_t = 2)]
        test_speakers: usize,
        #[arg(long, default_value_t = 5)]
        utterances: usize,
        #[arg(long, default_value_t = 6.0)]
        secs: f64,
        #[arg(long, default_value_t = 30.0)]
        noise_secs: f64,
        #[arg(long, default_value = "-5,0,5")]
        snrs: String,
    },
    /// Mix and cache LPS features for every manifest entry
    Featurize {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        features_dir: PathBuf,
        /// Build the manifest first from this speech directory
        #[arg(long, requires = "noise_dir")]
        speech_dir: Option<PathBuf>,
        #[arg(long)]
        noise_dir: Option<PathBuf>,
        #[arg(long, default_value = "-5,0,5")]
        snrs: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Normalization statistics from the train split's clean features
    Stats {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        features_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model (config file keys overridable by flags)
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        rho: Option<usize>,
        #[arg(long)]
        gating: Option<String>,
        #[arg(long)]
        temporal_hidden: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        theta: Option<f64>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        stats: Option<PathBuf>,
        #[arg(long)]
        features_dir: Option<PathBuf>,
        #[arg(long)]
        checkpoint_dir: Option<PathBuf>,
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        validate: Option<bool>,
    },
    /// Enhance one noisy wav with a trained checkpoint
    Enhance {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        stats: PathBuf,
        noisy: PathBuf,
        out: PathBuf,
    },
    /// ESTOI of noisy vs enhanced over the manifest's test split
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        stats: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Per-utterance detail CSV
        #[arg(long)]
        out: PathBuf,
        /// Per-(noise, SNR) mean CSV
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Write a wav's gate weights as CSV (raw + centered) and a PGM heatmap
    DumpGates {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        stats: PathBuf,
        wav: PathBuf,
        #[arg(long)]
        out_prefix: PathBuf,
    },
    /// Verify engine and model gradients against finite differences
    Gradcheck {
        #[arg(long, default_value_t = 1)]
        rho: usize,
        #[arg(long, default_value = "freq_wise")]
        gating: String,
        #[arg(long, default_value_t = 8)]
        temporal_hidden: usize,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        #[arg(long, default_value_t = 50)]
        seed: u64,
    },
    /// Print the trainable parameter count of a configuration
    ParamCount {
        #[arg(long)]
        rho: usize,
        #[arg(long, default_value = "none")]
        gating: String,
        #[arg(long, default_value_t = 128)]
        temporal_hidden: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("gse: error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn parse_gating(s: &str) -> Result<Gating> {
    s.parse::<Gating>().map_err(|e| anyhow::anyhow!("{e}"))
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.cmd {
        Cmd::SynthCorpus {
            out_dir,
            seed,
            speakers,
            test_speakers,
            utterances,
            secs,
            noise_secs,
            snrs,
        } => {
            if test_speakers >= speakers {
                bail!("test_speakers must be fewer than speakers");
            }
            let cfg = synth::SynthConfig {
                speakers,
                test_speakers,
                utterances_per_speaker: utterances,
                utterance_secs: secs,
                noise_secs,
                seed,
            };
            synth::generate(&out_dir, &cfg)?;
            let snrs = parse_snr_list(&snrs)?;
            let entries = manifest::build_manifest(&out_dir.join("speech"), &out_dir.join("noise"), &snrs, seed)?;
            let manifest_path = out_dir.join("manifest.tsv");
            manifest::write_manifest(&manifest_path, &entries)?;
            println!(
                "wrote {} utterances x {} SNRs = {} manifest records to {}",
                entries.len() / snrs.len(),
                snrs.len(),
                entries.len(),
                manifest_path.display()
            );
        }
        Cmd::Featurize {
            manifest: manifest_path,
            features_dir,
            speech_dir,
            noise_dir,
            snrs,
            seed,
        } => {
            let entries = match speech_dir {
                Some(speech) => {
                    let noise = noise_dir.context("--noise-dir required with --speech-dir")?;
                    let entries = manifest::build_manifest(&speech, &noise, &parse_snr_list(&snrs)?, seed)?;
                    manifest::write_manifest(&manifest_path, &entries)?;
                    entries
                }
                None => manifest::read_manifest(&manifest_path)?,
            };
            let written = trainer::featurize(&entries, &features_dir)?;
            println!("wrote {written} feature files to {}", features_dir.display());
        }
        Cmd::Stats {
            manifest: manifest_path,
            features_dir,
            out,
        } => {
            let entries = manifest::read_manifest(&manifest_path)?;
            let stats = trainer::compute_stats(&entries, &features_dir)?;
            formats::write_stats(&out, &stats)?;
            println!("stats over {} frames written to {}", stats.n_frames, out.display());
        }
        Cmd::Train {
            config,
            resume,
            rho,
            gating,
            temporal_hidden,
            lr,
            batch_size,
            epochs,
            seed,
            lambda,
            theta,
            manifest,
            stats,
            features_dir,
            checkpoint_dir,
            log,
            validate,
        } => {
            let mut s = Settings::default();
            if let Some(path) = config {
                s.load_file(&path)?;
            }
            s.apply_env()?;
            if let Some(v) = rho {
                s.rho = v;
            }
            if let Some(v) = gating {
                s.gating = parse_gating(&v)?;
            }
            if let Some(v) = temporal_hidden {
                s.temporal_hidden = v;
            }
            if let Some(v) = lr {
                s.lr = v;
            }
            if let Some(v) = batch_size {
                s.batch_size = v;
            }
            if let Some(v) = epochs {
                s.epochs = v;
            }
            if let Some(v) = seed {
                s.seed = v;
            }
            if let Some(v) = lambda {
                s.lambda = v;
            }
            if let Some(v) = theta {
                s.theta = v;
            }
            if manifest.is_some() {
                s.manifest = manifest;
            }
            if stats.is_some() {
                s.stats = stats;
            }
            if features_dir.is_some() {
                s.features_dir = features_dir;
            }
            if checkpoint_dir.is_some() {
                s.checkpoint_dir = checkpoint_dir;
            }
            if log.is_some() {
                s.log = log;
            }
            if let Some(v) = validate {
                s.validate = v;
            }
            let outcome = trainer::train(&s, resume.as_deref())?;
            if let Some(log_path) = &s.log {
                outcome.log.write(log_path)?;
            }
            for (epoch, val, ckpt) in &outcome.log.epochs {
                if val.is_finite() {
                    println!("epoch {epoch}: val ESTOI {val:.4} -> {ckpt}");
                } else {
                    println!("epoch {epoch}: -> {ckpt}");
                }
            }
            println!("best checkpoint: {}", outcome.best_checkpoint.display());
        }
        Cmd::Enhance {
            checkpoint,
            stats,
            noisy,
            out,
        } => {
            let ckpt = formats::read_checkpoint(&checkpoint)?;
            let stats = formats::read_stats(&stats)?;
            let input = wav::read_wav(&noisy)?;
            let enhanced = trainer::enhance_waveform(&ckpt.params, &stats, &input)?;
            wav::write_wav(&out, &enhanced)?;
            println!("enhanced {} -> {}", noisy.display(), out.display());
        }
        Cmd::Evaluate {
            checkpoint,
            stats,
            manifest: manifest_path,
            out,
            summary,
        } => {
            let ckpt = formats::read_checkpoint(&checkpoint)?;
            let stats = formats::read_stats(&stats)?;
            let entries = manifest::read_manifest(&manifest_path)?;
            let eval = evaluate::evaluate(&ckpt.params, &stats, &entries)?;
            for f in &eval.failures {
                eprintln!("gse: skipped {f}");
            }
            evaluate::write_detail_csv(&out, &eval.rows)?;
            if let Some(summary_path) = &summary {
                evaluate::write_summary_csv(summary_path, &eval.summary)?;
            }
            println!("noise,snr_db,mean_estoi_noisy,mean_estoi_enhanced");
            for (noise, snr, mn, me) in &eval.summary {
                println!("{noise},{snr},{mn:.4},{me:.4}");
            }
        }
        Cmd::DumpGates {
            checkpoint,
            stats,
            wav: wav_path,
            out_prefix,
        } => {
            let ckpt = formats::read_checkpoint(&checkpoint)?;
            let stats = formats::read_stats(&stats)?;
            let (dump, files) = gates::dump_gates(&ckpt.params, &stats, &wav_path, &out_prefix)?;
            println!(
                "dumped {} kernels over {} axis: {}, {}, {}",
                dump.weights.shape()[0],
                dump.axis,
                files.raw_csv.display(),
                files.centered_csv.display(),
                files.pgm.display()
            );
        }
        Cmd::Gradcheck {
            rho,
            gating,
            temporal_hidden,
            tol,
            seed,
        } => {
            let gating = parse_gating(&gating)?;
            let worst = gradcheck::run(rho, gating, temporal_hidden, seed)?;
            println!("max rel error {worst:.3e} (tolerance {tol:.1e})");
            if worst >= tol {
                return Ok(ExitCode::FAILURE);
            }
        }
        Cmd::ParamCount {
            rho,
            gating,
            temporal_hidden,
        } => {
            let gating = parse_gating(&gating)?;
            let mut cfg = gse_core::model::ArchitectureConfig::new(rho, gating);
            cfg.temporal_hidden = temporal_hidden;
            println!("{}", count_params(&build(&cfg, 0)));
        }
    }
    Ok(ExitCode::SUCCESS)
}
