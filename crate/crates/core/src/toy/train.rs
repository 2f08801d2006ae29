use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use super::model::{argmax, Graph, Model, Params};
use super::tape::{Mat, Var};
use super::{ToyError, Vocab, PATCH};
use crate::curation::Heatmap;
use crate::loss::{combined_loss, lambda_c, lambda_h, LossBreakdown, PenaltyConfig};
use crate::par::{self, Execution};
use crate::raster::Grid;
use crate::region::RegionId;
use crate::router::KeywordRules;

/// One training example: an image, seven patch-grid target heatmaps and
/// seven tokenized region reports (without `[BOS]`/`[EOS]`).
#[derive(Debug, Clone, PartialEq)]
pub struct ToySample {
    pub study_id: String,
    pub image: Grid<f64>,
    pub heatmaps: Vec<Mat>,
    pub tokens: Vec<Vec<usize>>,
}

impl ToySample {
    /// Full-resolution heatmaps are area-averaged to the patch grid.
    pub fn new(
        study_id: impl Into<String>,
        image: Grid<f64>,
        heatmaps: &[Heatmap],
        texts: &[String],
        vocab: &Vocab,
    ) -> Result<Self, ToyError> {
        if heatmaps.len() != RegionId::COUNT || texts.len() != RegionId::COUNT {
            return Err(ToyError::Shape {
                expected: "7 heatmaps and 7 texts".into(),
                found: format!("{} and {}", heatmaps.len(), texts.len()),
            });
        }
        let heatmaps = heatmaps
            .iter()
            .map(|h| {
                let d = h.downsample(PATCH).map_err(|e| ToyError::Shape {
                    expected: "patch-aligned heatmap".into(),
                    found: e.to_string(),
                })?;
                let g = d.grid();
                Ok(Mat::from_vec(g.len(), 1, g.as_slice().to_vec()))
            })
            .collect::<Result<Vec<_>, ToyError>>()?;
        let tokens = texts
            .iter()
            .map(|t| vocab.encode(t))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ToySample {
            study_id: study_id.into(),
            image,
            heatmaps,
            tokens,
        })
    }
}

/// Pairs raw images with their curated heatmaps and region reports.
pub fn build_samples(
    records: &[crate::dataset::StudyRecord],
    curated: &[crate::curation::CuratedStudy],
    vocab: &Vocab,
) -> Result<Vec<ToySample>, ToyError> {
    records
        .iter()
        .zip(curated)
        .map(|(r, c)| {
            let heatmaps: Vec<Heatmap> = c.regions.iter().map(|x| x.heatmap.clone()).collect();
            let texts: Vec<String> = c.regions.iter().map(|x| x.report.text.clone()).collect();
            ToySample::new(
                r.study_id.clone(),
                r.image.clone(),
                &heatmaps,
                &texts,
                vocab,
            )
        })
        .collect()
}

/// Curates `n` seeded 32x32 synthetic studies with default settings and
/// turns them into samples over a vocabulary built from their reports.
pub fn synthetic_samples(seed: u64, n: usize) -> Result<(Vocab, Vec<ToySample>), ToyError> {
    let records = crate::synth::synthetic_studies(seed, n, 32, 32);
    let cfg = crate::curation::CurationConfig::default();
    let rules = KeywordRules::default();
    let curated = records
        .iter()
        .map(|r| crate::curation::curate_study(r, &cfg, &rules))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| ToyError::Shape {
            expected: "curatable synthetic study".into(),
            found: e.to_string(),
        })?;
    let texts: Vec<&str> = curated
        .iter()
        .flat_map(|c| c.regions.iter().map(|r| r.report.text.as_str()))
        .collect();
    let vocab = Vocab::from_corpus(&texts);
    let samples = build_samples(&records, &curated, &vocab)?;
    Ok((vocab, samples))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub steps: usize,
    pub penalty: PenaltyConfig,
    pub use_lambda_h: bool,
    pub use_lambda_c: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 3e-3,
            steps: 2000,
            penalty: PenaltyConfig::default(),
            use_lambda_h: true,
            use_lambda_c: true,
        }
    }
}

struct Built {
    total: Var,
    #[cfg_attr(not(test), allow(dead_code))]
    l_c: Var,
    #[cfg_attr(not(test), allow(dead_code))]
    l_h: Var,
    breakdown: LossBreakdown,
}

/// Builds the per-sample objective. Penalties are read off the forward
/// values and enter the graph as constants; `fixed` overrides them.
fn build(
    g: &mut Graph,
    model: &Model,
    s: &ToySample,
    cfg: &TrainConfig,
    fixed: Option<(u32, u32)>,
) -> Result<Built, ToyError> {
    let p = model.cfg.patches();
    if s.heatmaps.len() != RegionId::COUNT || s.tokens.len() != RegionId::COUNT {
        return Err(ToyError::Shape {
            expected: "7 regions per sample".into(),
            found: s.tokens.len().to_string(),
        });
    }
    let px = model.patches(&s.image)?;
    let x = g.constant(px);
    let v = g.encode(x);
    let attn = g.predict_attention(x);
    let slabs = g.attend(x, v, &attn);

    let (bos, eos) = (model.vocab.bos(), model.vocab.eos());
    let mut ce_terms = Vec::new();
    let mut n_tokens = 0usize;
    let mut texts = Vec::with_capacity(RegionId::COUNT);
    for (i, toks) in s.tokens.iter().enumerate() {
        if toks.len() + 1 > model.cfg.max_len {
            return Err(ToyError::Shape {
                expected: format!("at most {} tokens", model.cfg.max_len - 1),
                found: toks.len().to_string(),
            });
        }
        if let Some(&bad) = toks.iter().find(|&&t| t >= model.vocab.len()) {
            return Err(ToyError::UnknownToken(bad));
        }
        let input: Vec<usize> = std::iter::once(bos).chain(toks.iter().copied()).collect();
        let target: Vec<usize> = toks.iter().copied().chain(std::iter::once(eos)).collect();
        let logits = g.decode(slabs[i], &input);
        let lv = g.tape.value(logits);
        let pred: Vec<usize> = (0..lv.rows).map(|r| argmax(lv.row(r))).collect();
        texts.push(model.vocab.decode(&pred));
        n_tokens += target.len();
        ce_terms.push(g.tape.ce_sum(logits, &target));
    }
    let mut sq_terms = Vec::with_capacity(RegionId::COUNT);
    for (a, gt) in attn.iter().zip(&s.heatmaps) {
        if gt.shape() != (p, 1) {
            return Err(ToyError::Shape {
                expected: format!("{p}x1 target heatmap"),
                found: format!("{:?}", gt.shape()),
            });
        }
        sq_terms.push(g.tape.sq_err_sum(*a, gt));
    }
    let sum = |g: &mut Graph, terms: &[Var]| {
        terms[1..]
            .iter()
            .fold(terms[0], |acc, &t| g.tape.add(acc, t))
    };
    let ce = sum(g, &ce_terms);
    let l_c = g.tape.scale(ce, 1.0 / n_tokens as f64);
    let sq = sum(g, &sq_terms);
    let l_h = g.tape.scale(sq, 1.0 / (RegionId::COUNT * p) as f64);

    let (lc_v, lh_v) = (g.tape.value(l_c).scalar(), g.tape.value(l_h).scalar());
    if !lc_v.is_finite() || !lh_v.is_finite() {
        return Err(ToyError::NonFinite);
    }
    let (lam_c, lam_h) = match fixed {
        Some(f) => f,
        None => {
            let lam_c = if cfg.use_lambda_c {
                lambda_c(&texts, &KeywordRules::default())?
            } else {
                0
            };
            let lam_h = if cfg.use_lambda_h {
                let (gw, gh) = model.cfg.grid();
                let to_map = |m: &Mat| Heatmap::from_unit(Grid::from_vec(gw, gh, m.data.clone()));
                let pred: Vec<Heatmap> = attn
                    .iter()
                    .map(|&a| to_map(g.tape.value(a)))
                    .collect::<Result<_, _>>()
                    .map_err(|_| ToyError::NonFinite)?;
                let gt: Vec<Heatmap> = s
                    .heatmaps
                    .iter()
                    .map(to_map)
                    .collect::<Result<_, _>>()
                    .map_err(|_| ToyError::NonFinite)?;
                lambda_h(&pred, &gt, &cfg.penalty)?
            } else {
                0
            };
            (lam_c, lam_h)
        }
    };
    let wc = g.tape.scale(l_c, 1.0 + lam_c as f64);
    let wh = g.tape.scale(l_h, 1.0 + lam_h as f64);
    let total = g.tape.add(wc, wh);
    let mut breakdown = combined_loss(lc_v, lh_v, lam_c, lam_h)?;
    breakdown.total = g.tape.value(total).scalar();
    if !breakdown.total.is_finite() {
        return Err(ToyError::NonFinite);
    }
    Ok(Built {
        total,
        l_c,
        l_h,
        breakdown,
    })
}

/// Forward pass only.
pub fn sample_loss(
    model: &Model,
    sample: &ToySample,
    cfg: &TrainConfig,
) -> Result<LossBreakdown, ToyError> {
    let mut g = Graph::new(model);
    Ok(build(&mut g, model, sample, cfg, None)?.breakdown)
}

pub(crate) fn loss_and_grads(
    model: &Model,
    sample: &ToySample,
    cfg: &TrainConfig,
    fixed: Option<(u32, u32)>,
) -> Result<(LossBreakdown, Vec<Mat>), ToyError> {
    let mut g = Graph::new(model);
    let built = build(&mut g, model, sample, cfg, fixed)?;
    let mut grads = g.tape.backward(built.total);
    let out = g
        .vars
        .iter()
        .zip(model.params.mats())
        .map(|(v, m)| {
            grads[v.index()]
                .take()
                .unwrap_or_else(|| Mat::zeros(m.rows, m.cols))
        })
        .collect();
    Ok((built.breakdown, out))
}

pub trait Optimizer {
    fn step(&mut self, params: &mut Params, grads: &[Mat]);
}

#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
}

impl Optimizer for Sgd {
    fn step(&mut self, params: &mut Params, grads: &[Mat]) {
        for (m, g) in params.mats_mut().iter_mut().zip(grads) {
            for (p, d) in m.data.iter_mut().zip(&g.data) {
                *p -= self.lr * d;
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Mat>,
    v: Vec<Mat>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![],
            v: vec![],
        }
    }
}

impl Optimizer for Adam {
    fn step(&mut self, params: &mut Params, grads: &[Mat]) {
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| Mat::zeros(g.rows, g.cols)).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let (c1, c2) = (1.0 - self.beta1.powi(self.t), 1.0 - self.beta2.powi(self.t));
        for (((p, g), m), v) in params
            .mats_mut()
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for k in 0..g.data.len() {
                let d = g.data[k];
                m.data[k] = self.beta1 * m.data[k] + (1.0 - self.beta1) * d;
                v.data[k] = self.beta2 * v.data[k] + (1.0 - self.beta2) * d * d;
                p.data[k] -= self.lr * (m.data[k] / c1) / ((v.data[k] / c2).sqrt() + self.eps);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub samples: Vec<LossBreakdown>,
    /// Mean of per-sample totals before the update.
    pub total: f64,
}

/// One optimizer update on the mean objective of `batch`. Samples are
/// evaluated concurrently when `exec` allows; gradients are reduced in
/// sample order so the result does not depend on scheduling.
pub fn train_step(
    model: &mut Model,
    batch: &[ToySample],
    opt: &mut dyn Optimizer,
    cfg: &TrainConfig,
    exec: Execution,
) -> Result<StepReport, ToyError> {
    if batch.is_empty() {
        return Err(ToyError::Shape {
            expected: "non-empty batch".into(),
            found: "0 samples".into(),
        });
    }
    let results = {
        let m: &Model = model;
        par::try_map(exec, batch, |s| loss_and_grads(m, s, cfg, None))?
    };
    let scale = 1.0 / batch.len() as f64;
    let mut grads: Vec<Mat> = model
        .params
        .mats()
        .iter()
        .map(|m| Mat::zeros(m.rows, m.cols))
        .collect();
    for (_, gs) in &results {
        for (acc, g) in grads.iter_mut().zip(gs) {
            for (a, d) in acc.data.iter_mut().zip(&g.data) {
                *a += d;
            }
        }
    }
    for g in &mut grads {
        g.data.iter_mut().for_each(|x| *x *= scale);
    }
    opt.step(&mut model.params, &grads);
    let samples: Vec<LossBreakdown> = results.into_iter().map(|(b, _)| b).collect();
    let total = crate::loss::batch_total(&samples);
    Ok(StepReport { samples, total })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
    /// Parameter name and entry of the worst agreement.
    pub worst: (String, usize),
}

/// Central-difference audit of the analytic gradient on `n` distinct
/// randomly chosen scalars. Penalties are frozen at their values for the
/// unperturbed parameters.
pub fn grad_check(
    model: &Model,
    sample: &ToySample,
    cfg: &TrainConfig,
    eps: f64,
    n: usize,
    seed: u64,
) -> Result<GradCheckReport, ToyError> {
    if !(1e-6..=1e-3).contains(&eps) {
        return Err(ToyError::Config(format!(
            "epsilon {eps} outside [1e-6, 1e-3]"
        )));
    }
    let (base, grads) = loss_and_grads(model, sample, cfg, None)?;
    let fixed = Some((base.lambda_c, base.lambda_h));
    let total = model.params.scalar_count();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let picks = rand::seq::index::sample(&mut rng, total, n.min(total));
    let mut probe = model.clone();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        checked: 0,
        worst: (String::new(), 0),
    };
    let eval = |probe: &Model| -> Result<f64, ToyError> {
        let mut g = Graph::new(probe);
        Ok(build(&mut g, probe, sample, cfg, fixed)?.breakdown.total)
    };
    for k in picks.iter() {
        let (mi, e) = model.params.locate(k);
        let orig = model.params.mats()[mi].data[e];
        probe.params.mats_mut()[mi].data[e] = orig + eps;
        let plus = eval(&probe)?;
        probe.params.mats_mut()[mi].data[e] = orig - eps;
        let minus = eval(&probe)?;
        probe.params.mats_mut()[mi].data[e] = orig;
        let fd = (plus - minus) / (2.0 * eps);
        let ga = grads[mi].data[e];
        let err = (ga - fd).abs() / ga.abs().max(fd.abs()).max(1e-8);
        if err > report.max_rel_err || report.checked == 0 {
            report.max_rel_err = report.max_rel_err.max(err);
            report.worst = (model.params.names()[mi].clone(), e);
        }
        report.checked += 1;
    }
    Ok(report)
}

/// Number of samples whose seven greedy region reports all equal the
/// targets token for token.
pub fn exact_matches(
    model: &Model,
    samples: &[ToySample],
    exec: Execution,
) -> Result<usize, ToyError> {
    let eos = model.vocab.eos();
    let hits = par::try_map(exec, samples, |s| {
        let (_, slabs) = model.features(&s.image)?;
        let out = model.generate_report(&slabs, model.cfg.max_len)?;
        Ok::<_, ToyError>(
            out.iter()
                .zip(&s.tokens)
                .all(|(o, t)| o.len() == t.len() + 1 && o[..t.len()] == t[..] && o[t.len()] == eos),
        )
    })?;
    Ok(hits.into_iter().filter(|&h| h).count())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy::ModelConfig;
    use rand::Rng;

    fn setup(seed: u64) -> (Model, ToySample) {
        let texts: Vec<String> = RegionId::ALL
            .iter()
            .map(|r| format!("the {} is possibly normal", r.area_name()))
            .collect();
        let vocab = Vocab::from_corpus(&texts);
        let model = Model::new(ModelConfig::tiny(vocab.tokens().to_vec(), seed)).unwrap();
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed + 1000);
        let image = Grid::from_fn(32, 32, |_, _| rng.random_range(0.0..1.0));
        let heatmaps: Vec<Heatmap> = (0..7)
            .map(|i| {
                Heatmap::from_unit(Grid::from_fn(32, 32, |x, y| {
                    if (x / 16 + y / 16 + i) % 3 == 0 {
                        1.0
                    } else {
                        0.0
                    }
                }))
                .unwrap()
            })
            .collect();
        let s = ToySample::new("s0", image, &heatmaps, &texts, &vocab).unwrap();
        (model, s)
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (model, s) = setup(0);
        let r = grad_check(&model, &s, &TrainConfig::default(), 1e-5, 60, 1).unwrap();
        assert_eq!(r.checked, 60);
        assert!(r.max_rel_err <= 1e-4, "{r:?}");
        assert!(grad_check(&model, &s, &TrainConfig::default(), 1e-2, 5, 1).is_err());
    }

    #[test]
    fn zero_penalties_are_plain_sums() {
        let (model, s) = setup(2);
        let (b, g_total) =
            loss_and_grads(&model, &s, &TrainConfig::default(), Some((0, 0))).unwrap();
        assert_eq!(b.total, b.l_c + b.l_h);
        let mut g = Graph::new(&model);
        let built = build(&mut g, &model, &s, &TrainConfig::default(), Some((0, 0))).unwrap();
        let (gc, gh) = (g.tape.backward(built.l_c), g.tape.backward(built.l_h));
        for (k, v) in g.vars.iter().enumerate() {
            let zero = Mat::zeros(g_total[k].rows, g_total[k].cols);
            let (a, b) = (
                gc[v.index()].as_ref().unwrap_or(&zero),
                gh[v.index()].as_ref().unwrap_or(&zero),
            );
            for (i, t) in g_total[k].data.iter().enumerate() {
                let sum = a.data[i] + b.data[i];
                assert!(
                    (t - sum).abs() <= 1e-12 * t.abs().max(1e-12),
                    "{t} vs {sum}"
                );
            }
        }
    }

    #[test]
    fn sgd_mostly_decreases_the_loss() {
        let (mut model, s) = setup(3);
        let cfg = TrainConfig::default();
        let mut opt = Sgd { lr: 0.05 };
        let mut prev = sample_loss(&model, &s, &cfg).unwrap().total;
        let mut down = 0;
        for _ in 0..30 {
            train_step(
                &mut model,
                std::slice::from_ref(&s),
                &mut opt,
                &cfg,
                Execution::Sequential,
            )
            .unwrap();
            let now = sample_loss(&model, &s, &cfg).unwrap().total;
            down += (now < prev) as usize;
            prev = now;
        }
        assert!(down >= 25, "loss decreased in only {down} of 30 steps");
    }

    #[test]
    fn parallel_and_sequential_steps_agree() {
        let (m0, s) = setup(4);
        let (_, s2) = setup(5);
        let batch = vec![s, s2];
        let cfg = TrainConfig::default();
        let (mut a, mut b) = (m0.clone(), m0);
        let ra = train_step(
            &mut a,
            &batch,
            &mut Adam::new(1e-2),
            &cfg,
            Execution::Sequential,
        )
        .unwrap();
        let rb = train_step(
            &mut b,
            &batch,
            &mut Adam::new(1e-2),
            &cfg,
            Execution::Parallel,
        )
        .unwrap();
        assert_eq!(ra, rb);
        assert_eq!(a.params, b.params);
    }
}
