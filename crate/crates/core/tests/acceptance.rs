//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails or runs over its time budget.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use gazecxr::curation::{
    blur_raw, curate_batch, curate_study, read_curated_dir, write_curated_study, BatchItem,
    CurationConfig, CutoffField, Heatmap,
};
use gazecxr::dataset::{load_study, read_manifest, split_counts, split_dataset, SplitSpec};
use gazecxr::eval::{evaluate, reference_as_generated, EvalConfig};
use gazecxr::loss::{combined_loss, lambda_c, lambda_h, lambda_h_from_ious, PenaltyConfig};
use gazecxr::metrics::{attention_metrics, bleu_all, cider};
use gazecxr::par::Execution;
use gazecxr::raster::Grid;
use gazecxr::region::RegionId;
use gazecxr::router::KeywordRules;
use gazecxr::synth::{synthetic_studies, synthetic_study, write_synthetic_dataset};
use gazecxr::toy::{
    exact_matches, grad_check, sample_loss, synthetic_samples, train_step, Adam, Model,
    ModelConfig, TrainConfig,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, &'static str, u64, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn curate_to(
    records: &[gazecxr::dataset::StudyRecord],
    out: &Path,
    exec: Execution,
) -> Result<usize, String> {
    let items = curate_batch(
        records,
        &CurationConfig::default(),
        &KeywordRules::default(),
        exec,
    )
    .map_err(err)?;
    std::fs::create_dir_all(out).map_err(err)?;
    let mut n = 0;
    for item in &items {
        if let BatchItem::Curated(s) = item {
            write_curated_study(out, s).map_err(err)?;
            n += 1;
        }
    }
    Ok(n)
}

fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(
                    p.strip_prefix(root).unwrap().to_path_buf(),
                    std::fs::read(&p).unwrap(),
                );
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

// ---- A1: structural count ----

fn a1() -> Outcome {
    for n in [1usize, 3, 10] {
        let records = synthetic_studies(2, n, 16, 16);
        let items = curate_batch(
            &records,
            &CurationConfig::default(),
            &KeywordRules::default(),
            Execution::Parallel,
        )
        .map_err(err)?;
        let pairs: usize = items
            .iter()
            .map(|i| match i {
                BatchItem::Curated(s) => s.regions.len(),
                BatchItem::Skipped(_) => 0,
            })
            .sum();
        ensure(pairs == 7 * n, || format!("N={n} gave {pairs} pairs"))?;
    }
    let dir = tempfile::tempdir().map_err(err)?;
    let records = synthetic_studies(1, 2951, 16, 16);
    let written = curate_to(&records, dir.path(), Execution::Parallel)?;
    let back = read_curated_dir(dir.path()).map_err(err)?;
    let reports: usize = back.iter().map(|s| s.reports.len()).sum();
    let heatmaps = back
        .iter()
        .flat_map(|s| RegionId::ALL.map(|r| s.heatmap_path(r)))
        .filter(|p| p.is_file())
        .count();
    ensure(
        written == 2951 && reports == 20_657 && heatmaps == 20_657,
        || format!("studies {written}, reports {reports}, heatmaps {heatmaps}"),
    )?;
    Ok(format!(
        "2951 studies -> {reports} report/heatmap pairs on disk"
    ))
}

// ---- A2: split contract ----

fn a2() -> Outcome {
    let ids: Vec<String> = (0..2951).map(|i| format!("p{i:05}")).collect();
    let spec = SplitSpec::default();
    let a = split_dataset(&ids, &spec, 17).map_err(err)?;
    let mut shuffled = ids.clone();
    shuffled.reverse();
    shuffled.swap(3, 900);
    ensure(
        split_dataset(&shuffled, &spec, 17).map_err(err)? == a,
        || "input order changed the partition".into(),
    )?;
    ensure(split_dataset(&ids, &spec, 17).map_err(err)? == a, || {
        "same seed gave a different partition".into()
    })?;
    ensure(split_dataset(&ids, &spec, 18).map_err(err)? != a, || {
        "seed had no effect".into()
    })?;
    ensure(
        a.len() == ids.len() && ids.iter().all(|i| a.contains_key(i)),
        || "partition does not cover the ids".into(),
    )?;
    let val = (0.1f64 * 2951.0).round() as usize;
    let test = (0.2f64 * 2951.0).round() as usize;
    let got = split_counts(&a);
    ensure(got == (2951 - val - test, val, test), || {
        format!("ratio sizes {got:?}")
    })?;
    let exact = split_dataset(&ids, &SplitSpec::with_counts((2074, 295, 582)), 17).map_err(err)?;
    let got_exact = split_counts(&exact);
    ensure(got_exact == (2074, 295, 582), || {
        format!("explicit counts gave {got_exact:?}")
    })?;
    ensure(
        split_dataset(&ids, &SplitSpec::with_counts((2074, 295, 581)), 17).is_err(),
        || "bad counts accepted".into(),
    )?;
    Ok(format!(
        "ratios -> {got:?}, explicit -> {got_exact:?}, deterministic"
    ))
}

// ---- A3: curation invariants ----

fn a3() -> Outcome {
    let rules = KeywordRules::default();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(33);
    let studies = 1200;
    let mut pairs = 0;
    for i in 0..studies {
        let (w, h) = (rng.random_range(8..=32), rng.random_range(8..=32));
        let mut record = synthetic_study(rng.random(), i, w, h);
        if i % 10 == 0 {
            record.gaze = Default::default();
        }
        let cfg = CurationConfig {
            sigma: if rng.random_bool(0.5) {
                Some(rng.random_range(0.5..3.0))
            } else {
                None
            },
            weight_by_duration: rng.random_bool(0.5),
            cutoff_field: if rng.random_bool(0.5) {
                CutoffField::TStart
            } else {
                CutoffField::TEnd
            },
            ..Default::default()
        };
        let sigma = cfg.sigma_for(w);
        let c = curate_study(&record, &cfg, &rules).map_err(err)?;
        ensure(c.regions.len() == 7, || {
            format!("study {i}: {} regions", c.regions.len())
        })?;
        for r in &c.regions {
            pairs += 1;
            let ctx = || format!("study {i} ({w}x{h}) {}", r.region);
            let mask = record.masks.get(r.region);
            let time = |f: &gazecxr::dataset::Fixation| match cfg.cutoff_field {
                CutoffField::TStart => f.t_start,
                CutoffField::TEnd => f.t_end,
            };
            let keep = |f: &gazecxr::dataset::Fixation| {
                *mask.get(f.x as usize, f.y as usize) && r.cutoff.is_none_or(|c| time(f) <= c)
            };
            let expected: Vec<_> = record.gaze.iter().filter(|f| keep(f)).copied().collect();
            let got: Vec<_> = r.gaze.iter().copied().collect();
            ensure(got == expected, || {
                format!(
                    "{}: filtered gaze is not the in-mask, pre-cutoff subsequence",
                    ctx()
                )
            })?;

            let mut freq = Grid::filled(w, h, 0.0);
            for f in &got {
                *freq.get_mut(f.x as usize, f.y as usize) += if cfg.weight_by_duration {
                    f.t_end - f.t_start
                } else {
                    1.0
                };
            }
            let blurred = blur_raw(&freq, sigma).map_err(err)?;
            let (m0, m1) = (freq.sum(), blurred.sum());
            ensure((m0 - m1).abs() <= 1e-6 * m0.max(f64::MIN_POSITIVE), || {
                format!("{}: mass {m0} -> {m1}", ctx())
            })?;

            let vals = r.heatmap.grid().as_slice();
            ensure(vals.iter().all(|v| (0.0..=1.0).contains(v)), || {
                format!("{}: heatmap leaves [0, 1]", ctx())
            })?;
            let max = vals.iter().copied().fold(0.0, f64::max);
            if blurred.max() > 0.0 {
                ensure(max == 1.0, || format!("{}: max {max}", ctx()))?;
            } else {
                ensure(max == 0.0, || {
                    format!("{}: empty gaze but max {max}", ctx())
                })?;
            }

            let mut bb: Option<(usize, usize, usize, usize)> = None;
            for y in 0..h {
                for x in 0..w {
                    if *r.heatmap.grid().get(x, y) > cfg.area_threshold {
                        bb = Some(match bb {
                            None => (x, y, x, y),
                            Some((a, b, c, d)) => (a.min(x), b.min(y), c.max(x), d.max(y)),
                        });
                    }
                }
            }
            let got_bb = r.bbox.map(|b| (b.x0, b.y0, b.x1, b.y1));
            ensure(got_bb == bb, || {
                format!("{}: bbox {got_bb:?} vs {bb:?}", ctx())
            })?;
        }
    }
    Ok(format!("{studies} random studies, {pairs} region pairs"))
}

// ---- A4: metric oracles ----

const WORDS: [&str; 4] = ["clear", "left", "heart", "base"];

/// Dense count vector over every possible n-gram of the four-word vocab.
fn dense_counts(s: &[usize], n: usize) -> Vec<f64> {
    let mut v = vec![0.0; 4usize.pow(n as u32)];
    for (g, slot) in v.iter_mut().enumerate() {
        let gram: Vec<usize> = (0..n)
            .map(|k| g / 4usize.pow((n - 1 - k) as u32) % 4)
            .collect();
        for start in 0..s.len().saturating_sub(n - 1) {
            if s[start..start + n] == gram[..] {
                *slot += 1.0;
            }
        }
    }
    v
}

fn oracle_bleu(cands: &[Vec<usize>], refs: &[Vec<usize>]) -> [f64; 4] {
    let c: usize = cands.iter().map(Vec::len).sum();
    let r: usize = refs.iter().map(Vec::len).sum();
    let mut logs = Vec::new();
    let mut out = [0.0; 4];
    for n in 1..=4 {
        let (mut clipped, mut total) = (0.0, 0.0);
        for (a, b) in cands.iter().zip(refs) {
            let (ca, cb) = (dense_counts(a, n), dense_counts(b, n));
            clipped += ca.iter().zip(&cb).map(|(x, y)| x.min(*y)).sum::<f64>();
            total += ca.iter().sum::<f64>();
        }
        logs.push(if clipped == 0.0 || total == 0.0 {
            f64::NEG_INFINITY
        } else {
            (clipped / total).ln()
        });
        let bp = if c == 0 {
            0.0
        } else if c < r {
            (1.0 - r as f64 / c as f64).exp()
        } else {
            1.0
        };
        let mean = logs.iter().sum::<f64>() / n as f64;
        out[n - 1] = if mean == f64::NEG_INFINITY {
            0.0
        } else {
            bp * mean.exp()
        };
    }
    out
}

fn oracle_cider(cands: &[Vec<usize>], refs: &[Vec<usize>]) -> f64 {
    let docs = refs.len() as f64;
    let ref_counts: Vec<Vec<Vec<f64>>> = refs
        .iter()
        .map(|r| (1..=4).map(|n| dense_counts(r, n)).collect())
        .collect();
    let df: Vec<Vec<f64>> = (0..4)
        .map(|k| {
            (0..4usize.pow(k as u32 + 1))
                .map(|g| ref_counts.iter().filter(|c| c[k][g] > 0.0).count() as f64)
                .collect()
        })
        .collect();
    let mut total = 0.0;
    for (i, cand) in cands.iter().enumerate() {
        let mut score = 0.0;
        for k in 0..4 {
            let weight = |counts: &[f64]| -> Vec<f64> {
                counts
                    .iter()
                    .zip(&df[k])
                    .map(|(tf, d)| tf * (docs.ln() - d.max(1.0).ln()))
                    .collect()
            };
            let (hv, rv) = (
                weight(&dense_counts(cand, k + 1)),
                weight(&ref_counts[i][k]),
            );
            let mut val: f64 = hv.iter().zip(&rv).map(|(h, r)| h.min(*r) * r).sum();
            let (nh, nr) = (
                hv.iter().map(|x| x * x).sum::<f64>().sqrt(),
                rv.iter().map(|x| x * x).sum::<f64>().sqrt(),
            );
            if nh != 0.0 && nr != 0.0 {
                val /= nh * nr;
            }
            let delta = cand.len() as f64 - refs[i].len() as f64;
            score += val * (-(delta * delta) / 72.0).exp();
        }
        total += score / 4.0 * 10.0;
    }
    total / cands.len() as f64
}

fn text(s: &[usize]) -> String {
    s.iter().map(|&i| WORDS[i]).collect::<Vec<_>>().join(" ")
}

fn all_sentences(max_len: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = Vec::new();
    let mut layer: Vec<Vec<usize>> = vec![vec![]];
    for _ in 0..max_len {
        layer = layer
            .iter()
            .flat_map(|s| (0..4).map(move |w| [s.clone(), vec![w]].concat()))
            .collect();
        out.extend(layer.iter().cloned());
    }
    out
}

fn check_corpus(cands: &[Vec<usize>], refs: &[Vec<usize>], with_cider: bool) -> Result<(), String> {
    let ct: Vec<String> = cands.iter().map(|s| text(s)).collect();
    let rt: Vec<String> = refs.iter().map(|s| text(s)).collect();
    let got = bleu_all(&ct, &rt).map_err(err)?;
    let want = oracle_bleu(cands, refs);
    for k in 0..4 {
        ensure(close(got[k], want[k], 1e-9), || {
            format!(
                "BLEU-{} {} vs {} on {ct:?} / {rt:?}",
                k + 1,
                got[k],
                want[k]
            )
        })?;
    }
    if with_cider {
        let (g, w) = (cider(&ct, &rt).map_err(err)?, oracle_cider(cands, refs));
        ensure(close(g, w, 1e-9), || {
            format!("CIDEr {g} vs {w} on {ct:?} / {rt:?}")
        })?;
    }
    Ok(())
}

fn oracle_iou(p: &[bool], g: &[bool], positive: bool) -> f64 {
    let inter = p
        .iter()
        .zip(g)
        .filter(|(a, b)| **a == positive && **b == positive)
        .count();
    let union = p
        .iter()
        .zip(g)
        .filter(|(a, b)| **a == positive || **b == positive)
        .count();
    if union == 0 {
        100.0
    } else {
        100.0 * inter as f64 / union as f64
    }
}

fn check_iou(w: usize, h: usize, p: &[bool], g: &[bool]) -> Result<(), String> {
    let hm = |b: &[bool]| {
        Heatmap::from_unit(Grid::from_vec(
            w,
            h,
            b.iter().map(|&x| x as u8 as f64).collect(),
        ))
        .unwrap()
    };
    let s = attention_metrics(&hm(p), &hm(g), 0.5).map_err(err)?;
    let fg = oracle_iou(p, g, true);
    let bg = oracle_iou(p, g, false);
    let n_fg = g.iter().filter(|x| **x).count() as f64;
    let fw = (n_fg * fg + (g.len() as f64 - n_fg) * bg) / g.len() as f64;
    ensure(
        close(s.fg_iou, fg, 1e-9) && close(s.bg_iou, bg, 1e-9) && close(s.fw_iou, fw, 1e-9),
        || {
            format!(
                "IoU ({}, {}, {}) vs ({fg}, {bg}, {fw}) on {p:?} / {g:?}",
                s.fg_iou, s.bg_iou, s.fw_iou
            )
        },
    )
}

fn a4() -> Outcome {
    let short = all_sentences(4);
    for a in &short {
        for b in &short {
            check_corpus(std::slice::from_ref(a), std::slice::from_ref(b), false)?;
        }
    }
    let tiny = all_sentences(2);
    let mut exhaustive = 0;
    for c0 in &tiny {
        for c1 in &tiny {
            for r0 in &tiny {
                for r1 in &tiny {
                    check_corpus(&[c0.clone(), c1.clone()], &[r0.clone(), r1.clone()], true)?;
                    exhaustive += 1;
                }
            }
        }
    }
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(44);
    let random = 20_000;
    for _ in 0..random {
        let n = rng.random_range(1..=5);
        let sent = |rng: &mut Xoshiro256PlusPlus| {
            (0..rng.random_range(1..=8))
                .map(|_| rng.random_range(0..4))
                .collect::<Vec<usize>>()
        };
        let cands: Vec<_> = (0..n).map(|_| sent(&mut rng)).collect();
        let refs: Vec<_> = (0..n).map(|_| sent(&mut rng)).collect();
        check_corpus(&cands, &refs, true)?;
    }

    let bits = |m: usize, len: usize| (0..len).map(|k| m >> k & 1 == 1).collect::<Vec<bool>>();
    for p in 0..16 {
        for g in 0..16 {
            check_iou(2, 2, &bits(p, 4), &bits(g, 4))?;
        }
    }
    for _ in 0..5000 {
        let (dp, dg) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
        let p: Vec<bool> = (0..64).map(|_| rng.random_bool(dp)).collect();
        let g: Vec<bool> = (0..64).map(|_| rng.random_bool(dg)).collect();
        check_iou(8, 8, &p, &g)?;
    }

    for _ in 0..200 {
        let (w, h) = (rng.random_range(1..=32), rng.random_range(1..=32));
        let hm = Heatmap::max_one(Grid::from_fn(w, h, |_, _| rng.random_range(0.0..1.0)));
        let s = attention_metrics(&hm, &hm, 0.5).map_err(err)?;
        ensure(
            close(s.ssim, 1.0, 1e-12) && s.psnr == 100.0 && s.l1 == 0.0 && s.l2 == 0.0,
            || format!("identity gave {s:?}"),
        )?;
    }
    Ok(format!(
        "{} single-pair + {exhaustive} two-report corpora exhaustive, {random} random; 256 2x2 + 5000 8x8 IoU grids; identity SSIM/PSNR",
        short.len() * short.len()
    ))
}

// ---- A5: toy generator ----

fn toy_model(seed: u64, studies: usize) -> Result<(Model, Vec<gazecxr::toy::ToySample>), String> {
    let cfg = gazecxr::config::RunConfig::default();
    let (vocab, samples) = synthetic_samples(seed, studies).map_err(err)?;
    let longest = samples
        .iter()
        .flat_map(|s| s.tokens.iter().map(Vec::len))
        .max()
        .unwrap_or(0);
    let model = Model::new(cfg.toy.model_config(&vocab, longest, seed)).map_err(err)?;
    Ok((model, samples))
}

/// The 32x32, D=8 reference configuration used for gradient audits.
fn tiny_model(seed: u64) -> Result<(Model, Vec<gazecxr::toy::ToySample>), String> {
    let (vocab, samples) = synthetic_samples(seed, 1).map_err(err)?;
    let longest = samples[0].tokens.iter().map(Vec::len).max().unwrap_or(0);
    let cfg = ModelConfig {
        max_len: longest + 2,
        ..ModelConfig::tiny(vocab.tokens().to_vec(), seed)
    };
    Ok((Model::new(cfg).map_err(err)?, samples))
}

fn a5() -> Outcome {
    let tcfg = TrainConfig::default();
    let mut worst: f64 = 0.0;
    for seed in 0..5 {
        let (model, samples) = tiny_model(seed)?;
        let r = grad_check(&model, &samples[0], &tcfg, 1e-5, 50, seed).map_err(err)?;
        ensure(r.checked == 50, || {
            format!("seed {seed}: only {} checked", r.checked)
        })?;
        ensure(r.max_rel_err <= 1e-4, || {
            format!(
                "seed {seed}: rel err {:.3e} at {:?}",
                r.max_rel_err, r.worst
            )
        })?;
        worst = worst.max(r.max_rel_err);
    }

    let mut steps_needed = Vec::new();
    for seed in [7u64, 11, 23] {
        let (mut model, samples) = toy_model(seed, 5)?;
        let mut opt = Adam::new(tcfg.lr);
        let mut done = None;
        for step in 1..=2000 {
            train_step(&mut model, &samples, &mut opt, &tcfg, Execution::Parallel).map_err(err)?;
            if step % 50 == 0
                && exact_matches(&model, &samples, Execution::Parallel).map_err(err)?
                    == samples.len()
            {
                done = Some(step);
                break;
            }
        }
        let step =
            done.ok_or_else(|| format!("seed {seed}: no exact reproduction within 2000 steps"))?;
        steps_needed.push(step);

        let plain = TrainConfig {
            use_lambda_c: false,
            use_lambda_h: false,
            ..tcfg.clone()
        };
        for s in &samples {
            let b = sample_loss(&model, s, &plain).map_err(err)?;
            ensure(b.lambda_c == 0 && b.lambda_h == 0, || {
                "penalties not disabled".into()
            })?;
            ensure(b.total.to_bits() == (b.l_c + b.l_h).to_bits(), || {
                format!("total {} != {} + {}", b.total, b.l_c, b.l_h)
            })?;
        }
    }
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(55);
    for _ in 0..10_000 {
        let (lc, lh) = (rng.random_range(0.0..10.0), rng.random_range(0.0..1.0));
        let b = combined_loss(lc, lh, 0, 0).map_err(err)?;
        ensure(b.total.to_bits() == (lc + lh).to_bits(), || {
            format!("combined_loss({lc}, {lh}, 0, 0) = {}", b.total)
        })?;
    }
    Ok(format!("grad check max rel err {worst:.2e} (D=8, 5 seeds x 50); exact reproduction at steps {steps_needed:?}; zero penalty bit-exact"))
}

// ---- A6: penalty semantics ----

fn a6() -> Outcome {
    let ious = [0.9, 0.6, 0.4, 0.2, 0.55, 0.5, 0.49];
    let prose = lambda_h_from_ious(&ious, &PenaltyConfig::default());
    let literal = lambda_h_from_ious(
        &ious,
        &PenaltyConfig {
            eq1_literal: true,
            ..Default::default()
        },
    );
    ensure(prose == 3 && literal == 4, || {
        format!("prose {prose}, literal {literal}")
    })?;

    let left = Heatmap::from_unit(Grid::from_fn(8, 8, |x, _| (x < 4) as u8 as f64)).unwrap();
    let right = Heatmap::from_unit(Grid::from_fn(8, 8, |x, _| (x >= 4) as u8 as f64)).unwrap();
    let same = lambda_h(
        &vec![left.clone(); 7],
        &vec![left.clone(); 7],
        &PenaltyConfig::default(),
    )
    .map_err(err)?;
    let disjoint =
        lambda_h(&vec![left; 7], &vec![right; 7], &PenaltyConfig::default()).map_err(err)?;
    ensure(same == 0 && disjoint == 7, || {
        format!("identical {same}, disjoint {disjoint}")
    })?;

    let rules = KeywordRules::default();
    let truth: Vec<String> = RegionId::ALL
        .iter()
        .map(|r| format!("the {} is clear", r.area_name()))
        .collect();
    let base = lambda_c(&truth, &rules).map_err(err)?;
    ensure(base == 0, || format!("ground truth texts scored {base}"))?;
    let cases = [
        (RegionId::LeftLung, "the right lung is clear"),
        (RegionId::UpperLeftLung, "opacity in the lower left lung"),
        (RegionId::LowerRightLung, "right apical opacity"),
        (RegionId::Heart, "the left lung is clear"),
    ];
    for (region, t) in cases {
        let mut texts = truth.clone();
        texts[region.index()] = t.to_string();
        let got = lambda_c(&texts, &rules).map_err(err)?;
        ensure(got == 1, || format!("{region} <- `{t}` scored {got}"))?;
    }
    let all_wrong: Vec<String> = RegionId::ALL
        .iter()
        .map(|_| "no findings".to_string())
        .collect();
    let worst = lambda_c(&all_wrong, &rules).map_err(err)?;
    ensure(worst == 7, || format!("seven violations scored {worst}"))?;
    Ok(format!(
        "lambda_h {prose} (prose) / {literal} (literal); lambda_c flags wrong side and level"
    ))
}

// ---- A7: determinism ----

fn a7() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let raw = dir.path().join("raw");
    write_synthetic_dataset(&raw, 12, 3, 32, 32).map_err(err)?;
    let manifest = read_manifest(&raw).map_err(err)?;
    let records: Vec<_> = manifest
        .entries
        .iter()
        .map(|e| load_study(&raw, e))
        .collect::<Result<_, _>>()
        .map_err(err)?;
    let (one, two) = (dir.path().join("one"), dir.path().join("two"));
    curate_to(&records, &one, Execution::Parallel)?;
    let first = snapshot(&one);
    curate_to(&records, &one, Execution::Parallel)?;
    curate_to(&records, &two, Execution::Sequential)?;
    ensure(snapshot(&one) == first, || {
        "rerun into the same directory changed bytes".into()
    })?;
    ensure(snapshot(&two) == first, || {
        "sequential run differs from parallel run".into()
    })?;

    let reference = read_curated_dir(&one).map_err(err)?;
    let generated = reference_as_generated(&reference);
    let row = evaluate(
        &generated,
        &one,
        &reference,
        &EvalConfig::default(),
        Execution::Parallel,
    )
    .map_err(err)?;
    let expect = [
        ("B1", 1.0),
        ("B2", 1.0),
        ("B3", 1.0),
        ("B4", 1.0),
        ("R", 1.0),
        ("C", 10.0),
        ("P_mic", 1.0),
        ("R_mic", 1.0),
        ("F1_mic", 1.0),
        ("P_mac", 1.0),
        ("R_mac", 1.0),
        ("F1_mac", 1.0),
        ("P_ex", 1.0),
        ("R_ex", 1.0),
        ("F1_ex", 1.0),
        ("fgIoU", 100.0),
        ("bgIoU", 100.0),
        ("fwIoU", 100.0),
        ("SSIM", 1.0),
        ("PSNR", 100.0),
        ("L1", 0.0),
        ("L2", 0.0),
    ];
    for (col, want) in expect {
        let got = row.get(col).unwrap();
        ensure(close(got, want, 1e-9), || {
            format!("{col} = {got}, expected {want}")
        })?;
    }
    Ok(format!(
        "{} files byte-identical across 3 runs; identity eval row",
        first.len()
    ))
}

fn main() {
    let criteria: [Criterion; 7] = [
        ("A1", "structural count", 60, a1),
        ("A2", "split contract", 10, a2),
        ("A3", "curation invariants", 120, a3),
        ("A4", "metric oracles", 300, a4),
        ("A5", "toy generator", 600, a5),
        ("A6", "penalty semantics", 10, a6),
        ("A7", "determinism", 60, a7),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (id, name, budget, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|x| x == id) {
            continue;
        }
        let t = Instant::now();
        let out = f();
        let took = t.elapsed();
        let over = took > Duration::from_secs(budget);
        match out {
            Ok(detail) if !over => {
                println!("{id} PASS  {name} ({:.1}s): {detail}", took.as_secs_f64())
            }
            Ok(detail) => {
                failed += 1;
                println!(
                    "{id} FAIL  {name} ({:.1}s, budget {budget}s): {detail}",
                    took.as_secs_f64()
                );
            }
            Err(why) => {
                failed += 1;
                println!("{id} FAIL  {name} ({:.1}s): {why}", took.as_secs_f64());
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
