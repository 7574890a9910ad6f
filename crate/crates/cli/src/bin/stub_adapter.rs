//! Deterministic stand-in for a real scorer adapter.
//!
//! Reads `{"id","image_path"}` lines on stdin and, depending on
//! `ENGINE_SCORER_MODE`, answers with embedding or detection lines derived
//! from a hash of each id. Flags inject the faults the engine must catch.

use std::io::{BufRead, Write};

use anyhow::{bail, Context, Result};
use clap::Parser;
use engine_core::hash_content;
use engine_core::scorer::{AdapterRequest, DetectionRecord, EmbeddingRecord, PersonDet, MODE_ENV, NUM_KEYPOINTS};
use engine_core::SampleId;

#[derive(Parser, Debug)]
#[command(name = "engine-stub-adapter")]
struct Args {
    /// Embedding dimension
    #[arg(long, default_value_t = 8)]
    dim: usize,
    /// Emit all-zero embeddings
    #[arg(long)]
    zero: bool,
    /// Skip the answers for the first N requests
    #[arg(long, default_value_t = 0)]
    drop: usize,
    /// Append N records for ids nobody asked for
    #[arg(long, default_value_t = 0)]
    extra: usize,
    /// Exit with status 2 after reading the input
    #[arg(long)]
    fail: bool,
}

/// `k`-th pseudo-random word for `id`.
fn word(id: &SampleId, k: u64) -> u64 {
    let h = hash_content(format!("{id}:{k}").as_bytes());
    u64::from_str_radix(&h[..16], 16).expect("hex digest")
}

fn unit(id: &SampleId, k: u64) -> f64 {
    (word(id, k) >> 11) as f64 / (1u64 << 53) as f64
}

fn embedding(id: &SampleId, dim: usize, zero: bool) -> EmbeddingRecord {
    let vec = (0..dim as u64)
        .map(|j| if zero { 0.0 } else { 2.0 * unit(id, j) - 1.0 })
        .collect();
    EmbeddingRecord { id: id.clone(), dim, vec }
}

fn detection(id: &SampleId) -> DetectionRecord {
    let (w, h) = (640u32, 480u32);
    let n = word(id, 0) % 3;
    let persons = (0..n)
        .map(|p| {
            let base = 100 * (p + 1);
            let x = (word(id, base) % 200) as f64;
            let y = (word(id, base + 1) % 100) as f64;
            let bw = 40.0 + (word(id, base + 2) % 400) as f64;
            let bh = 40.0 + (word(id, base + 3) % 340) as f64;
            let keypoints = (0..NUM_KEYPOINTS as u64)
                .map(|k| {
                    [
                        x + unit(id, base + 10 + 3 * k) * bw,
                        y + unit(id, base + 11 + 3 * k) * bh,
                        unit(id, base + 12 + 3 * k),
                    ]
                })
                .collect();
            PersonDet {
                bbox: [x, y, bw, bh],
                det_score: unit(id, base + 4),
                keypoints,
            }
        })
        .collect();
    DetectionRecord { id: id.clone(), image_w: w, image_h: h, persons }
}

fn main() -> Result<()> {
    let args = Args::parse();
    let mode = std::env::var(MODE_ENV).with_context(|| format!("{MODE_ENV} is not set"))?;
    let mut ids = Vec::new();
    for line in std::io::stdin().lock().lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let req: AdapterRequest = serde_json::from_str(&line).with_context(|| format!("bad request line {line:?}"))?;
        ids.push(req.id);
    }
    if args.fail {
        eprintln!("stub adapter: failing as requested");
        std::process::exit(2);
    }
    let extra = (0..args.extra).map(|i| SampleId::of_bytes(format!("stub-extra-{i}").as_bytes()));
    let answered: Vec<SampleId> = ids.into_iter().skip(args.drop).chain(extra).collect();

    let stdout = std::io::stdout();
    let mut out = std::io::BufWriter::new(stdout.lock());
    for id in &answered {
        let line = match mode.as_str() {
            "embed" => serde_json::to_string(&embedding(id, args.dim, args.zero))?,
            "detect" => serde_json::to_string(&detection(id))?,
            other => bail!("unknown mode {other:?}"),
        };
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}
