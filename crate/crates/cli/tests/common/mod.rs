#![allow(dead_code)]

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

use engine_core::export::{PoseAnnotation, PosePerson};
use engine_core::model::{ControlSignal, Origin, SampleRecord};
use engine_core::SampleId;
use rand::Rng;

pub const ENGINE: &str = env!("CARGO_BIN_EXE_engine");
pub const STUB: &str = env!("CARGO_BIN_EXE_engine-stub-adapter");
pub const EPOCH: &str = "1700000000";

/// `engine` with a fixed provenance clock, run inside `cwd`.
pub fn engine(cwd: &Path) -> Command {
    let mut c = Command::new(ENGINE);
    c.current_dir(cwd).env("SOURCE_DATE_EPOCH", EPOCH);
    c
}

pub fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawn engine");
    assert!(
        out.status.success(),
        "command {cmd:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn sid(tag: &str) -> SampleId {
    SampleId::of_bytes(tag.as_bytes())
}

pub fn real_record(tag: &str, n: u32) -> SampleRecord {
    SampleRecord {
        id: sid(tag),
        origin: Origin::Real,
        scene_index: n.max(1),
        variation_index: 1,
        control: None,
        image_path: format!("real/{tag}.png"),
        label_path: None,
    }
}

pub fn syn_record(tag: &str, scene: u32, variation: u32) -> SampleRecord {
    SampleRecord {
        id: sid(tag),
        origin: Origin::Synthetic,
        scene_index: scene.max(1),
        variation_index: variation.max(1),
        control: Some(ControlSignal {
            prompt: format!("a person, scene {scene}"),
            pose_ref: None,
            edge_ref: None,
            seed: u64::from(scene) << 32 | u64::from(variation),
        }),
        image_path: format!("syn/{tag}.png"),
        label_path: None,
    }
}

/// Random pose annotation whose boxes and visible keypoints lie inside the image.
pub fn random_annotation(rng: &mut impl Rng, id: SampleId) -> PoseAnnotation {
    let w = rng.random_range(64..3000u32);
    let h = rng.random_range(64..3000u32);
    let (wf, hf) = (w as f64, h as f64);
    let persons = (0..rng.random_range(0..4))
        .map(|_| {
            let bw = rng.random_range(0.05..0.5) * wf;
            let bh = rng.random_range(0.05..0.5) * hf;
            let x = rng.random_range(0.0..0.5) * wf;
            let y = rng.random_range(0.0..0.5) * hf;
            let keypoints = (0..17)
                .map(|_| match rng.random_range(0..3u8) {
                    0 => [0.0, 0.0, 0.0],
                    v => [x + rng.random_range(0.0..1.0) * bw, y + rng.random_range(0.0..1.0) * bh, v as f64],
                })
                .collect();
            PosePerson { bbox: [x, y, bw, bh], keypoints }
        })
        .collect();
    PoseAnnotation { id, image_w: w, image_h: h, persons }
}

/// A running `engine review serve`, killed on drop.
pub struct Server {
    pub child: Child,
    pub base: String,
}

impl Server {
    pub fn start(dir: &Path, args: &[&str]) -> Server {
        let mut child = engine(dir)
            .args(["review", "serve", "--addr", "127.0.0.1:0"])
            .args(args)
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .expect("spawn review server");
        let mut line = String::new();
        BufReader::new(child.stdout.take().expect("stdout"))
            .read_line(&mut line)
            .expect("read listening line");
        let base = line
            .trim()
            .strip_prefix("listening on ")
            .unwrap_or_else(|| panic!("unexpected banner {line:?}"))
            .to_owned();
        Server { child, base }
    }

    /// SIGKILL, no chance to flush or clean up.
    pub fn kill(mut self) {
        self.child.kill().expect("kill");
        self.child.wait().expect("reap");
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Relative paths of all files under `root`, sorted.
pub fn files_under(root: &Path) -> Vec<PathBuf> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, &mut out);
    out.sort();
    out
}
