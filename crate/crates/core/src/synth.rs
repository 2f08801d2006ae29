//! Seeded synthetic studies for tests, benchmarks and smoke runs.
//!
//! Geometry is a caricature of a frontal radiograph: two lung boxes split
//! into upper and lower halves and a heart box straddling the midline.
//! Dictated sentences are drawn from a small bank whose findings are known,
//! so label sidecars stay consistent with the transcript.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::dataset::{
    serialize_gaze, serialize_transcript, split_dataset, write_manifest, DatasetError,
    FindingLabel, Fixation, GazeSequence, Manifest, ManifestEntry, RegionMaskSet, SplitSpec,
    StudyRecord, TimedSentence,
};
use crate::raster::{write_gray16_png, write_mask_png, BinaryMask, Grid};
use crate::region::RegionId;

const BANK: [(&str, &str); 9] = [
    ("the heart is enlarged", "cardiomegaly"),
    ("cardiomegaly is present", "cardiomegaly"),
    ("opacity in the left lower lobe", "lung_opacity"),
    ("right upper lobe consolidation", "consolidation"),
    ("small left effusion", "effusion"),
    ("atelectasis at the right base", "atelectasis"),
    ("left apical pneumothorax", "pneumothorax"),
    ("nodule in the right lung", "lung_lesion"),
    ("mild pulmonary edema", "edema"),
];

fn rng_for(seed: u64, index: usize) -> Xoshiro256PlusPlus {
    Xoshiro256PlusPlus::seed_from_u64(
        seed ^ (index as u64)
            .wrapping_add(1)
            .wrapping_mul(0x9E37_79B9_7F4A_7C15),
    )
}

pub fn study_id(index: usize) -> String {
    format!("s{index:05}")
}

fn rect(w: usize, h: usize, x0: usize, y0: usize, x1: usize, y1: usize) -> BinaryMask {
    Grid::from_fn(w, h, |x, y| x >= x0 && x <= x1 && y >= y0 && y <= y1)
}

fn region_masks(w: usize, h: usize, rng: &mut impl Rng) -> RegionMaskSet {
    let jit = |rng: &mut dyn rand::RngCore, n: usize| rng.random_range(0..=n.max(1) / 16);
    let top = 1 + jit(rng, h);
    let bottom = h - 2 - jit(rng, h);
    let mid_y = (top + bottom) / 2;
    let gap = 1 + jit(rng, w);
    // image right is the patient's left
    let (rl0, rl1) = (1 + jit(rng, w), w / 2 - gap);
    let (ll0, ll1) = (w / 2 + gap - 1, w - 2 - jit(rng, w));
    let heart = rect(w, h, w * 3 / 8, h / 2, w * 5 / 8 + jit(rng, w), bottom);
    let mut m = BTreeMap::new();
    m.insert(RegionId::Heart, heart);
    m.insert(RegionId::LeftLung, rect(w, h, ll0, top, ll1, bottom));
    m.insert(RegionId::RightLung, rect(w, h, rl0, top, rl1, bottom));
    m.insert(RegionId::UpperLeftLung, rect(w, h, ll0, top, ll1, mid_y));
    m.insert(RegionId::UpperRightLung, rect(w, h, rl0, top, rl1, mid_y));
    m.insert(
        RegionId::LowerLeftLung,
        rect(w, h, ll0, mid_y + 1, ll1, bottom),
    );
    m.insert(
        RegionId::LowerRightLung,
        rect(w, h, rl0, mid_y + 1, rl1, bottom),
    );
    RegionMaskSet::from_map(m).expect("synthetic masks cover all regions with equal dims")
}

/// One deterministic study of size `width`x`height` (each at least 8).
pub fn synthetic_study(seed: u64, index: usize, width: usize, height: usize) -> StudyRecord {
    assert!(
        width >= 8 && height >= 8,
        "synthetic studies need at least 8x8 pixels"
    );
    let mut rng = rng_for(seed, index);
    let masks = region_masks(width, height, &mut rng);

    let lung = masks.get(RegionId::LeftLung).clone();
    let lung_r = masks.get(RegionId::RightLung).clone();
    let blobs: Vec<(f64, f64, f64)> = (0..rng.random_range(1..4))
        .map(|_| {
            (
                rng.random_range(0.0..width as f64),
                rng.random_range(0.0..height as f64),
                rng.random_range(1.0..(width.min(height) as f64 / 4.0).max(1.5)),
            )
        })
        .collect();
    let image = Grid::from_fn(width, height, |x, y| {
        let base = if *lung.get(x, y) || *lung_r.get(x, y) {
            0.25
        } else {
            0.55
        };
        let bump: f64 = blobs
            .iter()
            .map(|&(cx, cy, r)| {
                let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                0.4 * (-d2 / (2.0 * r * r)).exp()
            })
            .sum();
        (base + bump + rng.random_range(0.0..0.05)).clamp(0.0, 1.0)
    });

    let k = rng.random_range(0..=3usize);
    let mut picks: Vec<usize> = Vec::new();
    while picks.len() < k {
        let i = rng.random_range(0..BANK.len());
        if !picks.contains(&i) {
            picks.push(i);
        }
    }
    let mut t = rng.random_range(0.5..2.0);
    let mut transcript = Vec::new();
    for &i in &picks {
        let dur = rng.random_range(1.0..3.0);
        transcript.push(TimedSentence::new(BANK[i].0, t, t + dur));
        t += dur + rng.random_range(0.2..1.0);
    }
    let total = t + rng.random_range(1.0..4.0);

    let n = rng.random_range(20..60usize);
    let mut starts: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..total)).collect();
    starts.sort_by(f64::total_cmp);
    let gaze = GazeSequence::new(
        starts
            .into_iter()
            .map(|s| {
                let x = rng.random_range(0..width as u32);
                let y = rng.random_range(0..height as u32);
                Fixation::new(x, y, s, s + rng.random_range(0.05..0.4))
            })
            .collect(),
    );

    let mut finding_labels = BTreeMap::new();
    for &i in &picks {
        finding_labels.insert(BANK[i].1.to_string(), FindingLabel::Present);
    }
    if picks.is_empty() {
        finding_labels.insert("no_finding".to_string(), FindingLabel::Present);
    }
    StudyRecord {
        study_id: study_id(index),
        image,
        gaze,
        masks,
        transcript,
        finding_labels,
    }
}

/// Records only, no disk I/O.
pub fn synthetic_studies(seed: u64, n: usize, width: usize, height: usize) -> Vec<StudyRecord> {
    (0..n)
        .map(|i| synthetic_study(seed, i, width, height))
        .collect()
}

fn io(p: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |e| DatasetError::io(p, e)
}

/// Writes `n` raw studies plus a manifest under `root`, split with the
/// default ratios. Returns the manifest.
pub fn write_synthetic_dataset(
    root: &Path,
    n: usize,
    seed: u64,
    width: usize,
    height: usize,
) -> Result<Manifest, DatasetError> {
    std::fs::create_dir_all(root).map_err(io(root))?;
    let mut labels = String::from("study_id,finding,value\n");
    let mut entries = Vec::with_capacity(n);
    for i in 0..n {
        let rec = synthetic_study(seed, i, width, height);
        let id = rec.study_id.clone();
        let dir = root.join(&id);
        std::fs::create_dir_all(&dir).map_err(io(&dir))?;
        let img = dir.join("image.png");
        write_gray16_png(&img, &rec.image).map_err(|source| DatasetError::Image {
            path: img.clone(),
            source,
        })?;
        let gaze = dir.join("gaze.csv");
        std::fs::write(&gaze, serialize_gaze(&rec.gaze)).map_err(io(&gaze))?;
        let tr = dir.join("transcript.csv");
        std::fs::write(&tr, serialize_transcript(&rec.transcript)).map_err(io(&tr))?;
        let mut masks = BTreeMap::new();
        for (region, mask) in rec.masks.iter() {
            let rel = format!("{id}/mask_{}.png", region.key());
            let p = root.join(&rel);
            write_mask_png(&p, mask).map_err(|source| DatasetError::Image {
                path: p.clone(),
                source,
            })?;
            masks.insert(region, rel);
        }
        for (finding, value) in &rec.finding_labels {
            labels.push_str(&format!("{id},{finding},{}\n", value.as_str()));
        }
        entries.push(ManifestEntry {
            study_id: id.clone(),
            image: format!("{id}/image.png"),
            gaze: format!("{id}/gaze.csv"),
            masks,
            transcript: format!("{id}/transcript.csv"),
            labels: "labels.csv".into(),
        });
    }
    let lp = root.join("labels.csv");
    std::fs::write(&lp, labels).map_err(io(&lp))?;
    let ids: Vec<&str> = entries.iter().map(|e| e.study_id.as_str()).collect();
    let splits = split_dataset(&ids, &SplitSpec::default(), seed)?;
    let manifest = Manifest::new(entries, splits, seed);
    write_manifest(root, &manifest)?;
    Ok(manifest)
}
