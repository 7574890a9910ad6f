//! `engine`: every pipeline stage as a subcommand reading and writing files.

mod dataset;
mod review;
mod stages;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "engine", version, about = "Real-anchored curation of synthetic training data")]
#[command(after_help = "Examples:
  engine gen-plan --config cfg.toml --out plan.jsonl
  engine ingest --mode embed --manifest syn.jsonl --adapter 'python embed.py' --out embs.jsonl
  engine filter --manifest syn.jsonl --embeddings embs.jsonl --detections dets.jsonl \\
      --prompt-bank bank.jsonl --config cfg.toml --out-clean clean.jsonl --out-decisions decisions.jsonl
  engine compose --condition E --real real.jsonl --filtered-syn clean.jsonl --out train_E.jsonl")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Expand the [control] section of a config into generation jobs
    GenPlan {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Hash generator output into a synthetic manifest, checking one image per job
    GenCollect {
        #[arg(long)]
        plan: PathBuf,
        /// JSONL of {"scene_index","variation_index","image_path","label_path"?}
        #[arg(long)]
        outputs: PathBuf,
        /// Directory the generator's image paths are relative to
        #[arg(long)]
        root: Option<PathBuf>,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Hash a directory of real images into a manifest
    Register {
        #[arg(long)]
        images: PathBuf,
        /// Directory of per-image label files named <stem>.txt
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an external scorer adapter over a manifest
    Ingest {
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long)]
        manifest: PathBuf,
        /// Adapter command line, split with shell quoting rules and run without a shell
        #[arg(long)]
        adapter: String,
        #[arg(long)]
        out: PathBuf,
        /// Number of concurrent adapter processes
        #[arg(long, default_value_t = 1)]
        shards: usize,
        /// Directory relative image paths resolve against
        #[arg(long, default_value = ".")]
        image_root: PathBuf,
    },
    /// Compute semantic margins for a set of embeddings
    Margins {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        prompt_bank: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Choose tau_sem from labeled real anchors
    Calibrate {
        #[arg(long)]
        margins: PathBuf,
        /// CSV with header `id,label`, label in {positive, negative}
        #[arg(long)]
        labels: PathBuf,
        /// Recall floor; defaults to the config's recall_target, then 0.95
        #[arg(long)]
        recall: Option<f64>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Detections of the anchors, to also derive structural thresholds
        #[arg(long, requires = "quantile")]
        detections: Option<PathBuf>,
        /// Lower quantile of positive anchors' structural scores
        #[arg(long, requires = "detections")]
        quantile: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the semantic then structural filter cascade
    Filter {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        prompt_bank: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Calibration report supplying tau_sem when the config sets tau_sem = "calibrate"
        #[arg(long)]
        calibration: Option<PathBuf>,
        /// Also take tau_area and tau_kpt_count from the calibration report
        #[arg(long, requires = "calibration")]
        calibrated_structural: bool,
        #[arg(long)]
        out_clean: PathBuf,
        #[arg(long)]
        out_decisions: PathBuf,
    },
    /// Build the training manifest for one experimental condition (A-E)
    Compose {
        #[arg(long)]
        condition: String,
        #[arg(long)]
        real: Option<PathBuf>,
        #[arg(long)]
        raw_syn: Option<PathBuf>,
        #[arg(long)]
        filtered_syn: Option<PathBuf>,
        /// Review verdicts to apply to the filtered pool (conditions C and E)
        #[arg(long)]
        verdicts: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a manifest and its pose annotations as a training dataset
    Export {
        #[arg(long, value_enum)]
        format: Format,
        #[arg(long)]
        manifest: PathBuf,
        /// JSONL of {"id","image_w","image_h","persons":[{"box","keypoints"}]}
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = ".")]
        image_root: PathBuf,
    },
    /// Read an exported dataset back into a manifest and annotations
    Import {
        #[arg(long, value_enum)]
        format: Format,
        /// Export directory (YOLO) or JSON document or directory containing annotations.json (COCO)
        #[arg(long)]
        from: PathBuf,
        #[arg(long)]
        out_manifest: PathBuf,
        #[arg(long)]
        out_annotations: PathBuf,
    },
    /// Domain-gap summary and 2-D projection of real vs synthetic embeddings
    Diag {
        #[arg(long)]
        real_embs: PathBuf,
        #[arg(long)]
        syn_embs: PathBuf,
        #[arg(long)]
        out_summary: PathBuf,
        #[arg(long)]
        out_proj: PathBuf,
    },
    /// Human review queue
    Review {
        #[command(subcommand)]
        command: ReviewCommand,
    },
}

#[derive(Subcommand, Debug)]
enum ReviewCommand {
    /// Enqueue decisions and serve the review API
    Serve {
        #[arg(long)]
        decisions: PathBuf,
        /// Image directory; queued image paths are relative to it
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        log: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        /// Manifest whose image paths (relative to --images) locate each id; otherwise
        /// the files under --images are hashed
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Policy::BorderlineOnly)]
        policy: Policy,
    },
    /// Write recorded verdicts as JSONL in id order
    Export {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Embed,
    Detect,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Yolo,
    Coco,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Policy {
    BorderlineOnly,
    BorderlineAndRejected,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::GenPlan { config, out } => stages::gen_plan(&config, &out),
        Command::GenCollect { plan, outputs, root, config, out } => {
            stages::gen_collect(&plan, &outputs, root.as_deref(), &config, &out)
        }
        Command::Register { images, labels, config, out } => {
            stages::register(&images, labels.as_deref(), &config, &out)
        }
        Command::Ingest { mode, manifest, adapter, out, shards, image_root } => {
            stages::ingest(mode, &manifest, &adapter, &out, shards, &image_root)
        }
        Command::Margins { embeddings, prompt_bank, config, out } => {
            stages::margins(&embeddings, &prompt_bank, &config, &out)
        }
        Command::Calibrate { margins, labels, recall, config, detections, quantile, out } => stages::calibrate(
            &margins,
            &labels,
            recall,
            config.as_deref(),
            detections.as_deref().zip(quantile),
            &out,
        ),
        Command::Filter {
            manifest,
            embeddings,
            detections,
            prompt_bank,
            config,
            calibration,
            calibrated_structural,
            out_clean,
            out_decisions,
        } => stages::filter(stages::FilterArgs {
            manifest: &manifest,
            embeddings: &embeddings,
            detections: &detections,
            prompt_bank: &prompt_bank,
            config: &config,
            calibration: calibration.as_deref(),
            calibrated_structural,
            out_clean: &out_clean,
            out_decisions: &out_decisions,
        }),
        Command::Compose { condition, real, raw_syn, filtered_syn, verdicts, out } => dataset::compose(
            &condition,
            real.as_deref(),
            raw_syn.as_deref(),
            filtered_syn.as_deref(),
            verdicts.as_deref(),
            &out,
        ),
        Command::Export { format, manifest, annotations, out, image_root } => {
            dataset::export(format, &manifest, &annotations, &out, &image_root)
        }
        Command::Import { format, from, out_manifest, out_annotations } => {
            dataset::import(format, &from, &out_manifest, &out_annotations)
        }
        Command::Diag { real_embs, syn_embs, out_summary, out_proj } => {
            dataset::diag(&real_embs, &syn_embs, &out_summary, &out_proj)
        }
        Command::Review { command } => match command {
            ReviewCommand::Serve { decisions, images, log, addr, manifest, policy } => {
                review::serve(&decisions, &images, &log, &addr, manifest.as_deref(), policy)
            }
            ReviewCommand::Export { log, out } => review::export(&log, &out),
        },
    }
}
