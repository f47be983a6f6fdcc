#![allow(dead_code)]

use std::io::Write;
use std::path::PathBuf;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use uwsim::detloss::{iou, Assignment, BBox, GtBox, Prediction};
use uwsim::{DepthMap, RgbImage};

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

/// Writes straight to the stderr handle so the line shows even when libtest
/// captures output.
pub fn report(id: u32, name: &str, passed: bool, detail: &str) {
    let status = if passed { "PASS" } else { "FAIL" };
    let line = format!("criterion {id} [{status}] {name}: {detail}\n");
    let _ = std::io::stderr().write_all(line.as_bytes());
}

pub fn random_rgb(rng: &mut ChaCha8Rng, w: usize, h: usize, lo: f64, hi: f64) -> RgbImage {
    RgbImage::new(
        w,
        h,
        (0..w * h * 3).map(|_| rng.gen_range(lo..hi)).collect(),
    )
    .unwrap()
}

pub fn random_depth(rng: &mut ChaCha8Rng, w: usize, h: usize) -> DepthMap {
    DepthMap::new(w, h, (0..w * h).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
}

pub fn random_box(rng: &mut ChaCha8Rng) -> BBox {
    BBox::new(
        rng.gen_range(0.0..1.0),
        rng.gen_range(0.0..1.0),
        rng.gen_range(0.02..0.8),
        rng.gen_range(0.02..0.8),
    )
}

pub fn random_gt(rng: &mut ChaCha8Rng, classes: usize) -> GtBox {
    let b = random_box(rng);
    GtBox {
        cx: b.cx,
        cy: b.cy,
        w: b.w,
        h: b.h,
        class: rng.gen_range(1..=classes),
    }
}

pub fn random_prediction(rng: &mut ChaCha8Rng, classes: usize) -> Prediction {
    let raw: Vec<f64> = (0..=classes).map(|_| rng.gen_range(0.01..1.0)).collect();
    let sum: f64 = raw.iter().sum();
    Prediction {
        pcls: raw.iter().map(|v| v / sum).collect(),
        ploc: std::array::from_fn(|_| rng.gen_range(-0.5..1.5)),
    }
}

/// Patch set mixing random boxes, jittered copies of gts and exact
/// duplicates so thresholds and ties are exercised.
pub fn random_patches(rng: &mut ChaCha8Rng, gts: &[GtBox], n: usize) -> Vec<BBox> {
    let mut out: Vec<BBox> = Vec::with_capacity(n);
    while out.len() < n {
        let roll: f64 = rng.gen();
        let b = if roll < 0.3 && !gts.is_empty() {
            let g = gts[rng.gen_range(0..gts.len())];
            BBox::new(
                g.cx + rng.gen_range(-0.1..0.1),
                g.cy + rng.gen_range(-0.1..0.1),
                g.w * rng.gen_range(0.7..1.4),
                g.h * rng.gen_range(0.7..1.4),
            )
        } else if roll < 0.4 && !out.is_empty() {
            out[rng.gen_range(0..out.len())]
        } else {
            random_box(rng)
        };
        out.push(b);
    }
    out
}

/// Straightforward application of the matching rule, written independently
/// of the library: per-patch threshold pass, then greedy force matching by
/// scanning candidates sorted by decreasing IoU.
pub fn brute_force_match(patches: &[BBox], gts: &[GtBox], threshold: f64) -> Vec<Assignment> {
    let label = |g: usize| Assignment::Object {
        gt: g,
        class: gts[g].class,
        gloc: [gts[g].cx, gts[g].cy, gts[g].w, gts[g].h],
    };
    let mut out = vec![Assignment::Background; patches.len()];
    for (p, patch) in patches.iter().enumerate() {
        let mut best_g = usize::MAX;
        let mut best_v = f64::NEG_INFINITY;
        for (g, gt) in gts.iter().enumerate() {
            let v = iou(patch, &gt.bbox());
            if v > best_v {
                best_v = v;
                best_g = g;
            }
        }
        if best_g != usize::MAX && best_v > threshold {
            out[p] = label(best_g);
        }
    }
    let mut taken: Vec<usize> = Vec::new();
    for (g, gt) in gts.iter().enumerate() {
        let mut order: Vec<(usize, f64)> = patches
            .iter()
            .enumerate()
            .map(|(p, b)| (p, iou(b, &gt.bbox())))
            .collect();
        order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        if let Some(&(p, _)) = order.iter().find(|(p, _)| !taken.contains(p)) {
            taken.push(p);
            out[p] = label(g);
        }
    }
    out
}
