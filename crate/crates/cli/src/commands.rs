use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::{debug, info};

use gazecxr::config::RunConfig;
use gazecxr::curation::{
    curate_batch, read_curated_dir, stats::dataset_stats, write_curated_study, BatchItem,
};
use gazecxr::dataset::{
    load_study, read_manifest, split_counts, split_dataset, write_manifest, Manifest, SplitSpec,
};
use gazecxr::eval::{evaluate, read_generated};
use gazecxr::par::{self, Execution};
use gazecxr::synth::write_synthetic_dataset;
use gazecxr::toy::{
    exact_matches, grad_check, save_checkpoint, synthetic_samples, train_step, Adam, Model,
    ModelConfig, ToySample,
};

use crate::{
    Cli, Command, ConfigFault, CurateArgs, EvalArgs, SplitArgs, StatsArgs, SynthArgs, ToyCheckArgs,
    ToyTrainArgs,
};

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli.config.as_deref())?;
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    let ctx = Ctx {
        cfg,
        exec,
        dry_run: cli.dry_run,
    };
    par::with_jobs(cli.jobs, || match &cli.command {
        Command::Curate(a) => curate(&ctx, a),
        Command::Split(a) => split(&ctx, a),
        Command::Stats(a) => stats(&ctx, a),
        Command::Eval(a) => eval(&ctx, a),
        Command::ToyTrain(a) => toy_train(&ctx, a),
        Command::ToyCheck(a) => toy_check(&ctx, a),
        Command::Synth(a) => synth(&ctx, a),
    })
}

struct Ctx {
    cfg: RunConfig,
    exec: Execution,
    dry_run: bool,
}

fn fault(msg: impl Into<String>) -> anyhow::Error {
    ConfigFault(msg.into()).into()
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    let cfg = match path {
        None => RunConfig::default(),
        Some(p) => RunConfig::load(p).map_err(|e| fault(e.to_string()))?,
    };
    cfg.validate().map_err(|e| fault(e.to_string()))?;
    Ok(cfg)
}

fn pick(flag: &Option<PathBuf>, fallback: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    flag.clone().or_else(|| fallback.clone()).ok_or_else(|| {
        fault(format!(
            "no {what} directory: pass a flag or set it under [paths]"
        ))
    })
}

fn curate(ctx: &Ctx, a: &CurateArgs) -> Result<()> {
    let input = pick(&a.input, &ctx.cfg.paths.input, "input")?;
    let output = pick(&a.output, &ctx.cfg.paths.output, "output")?;
    let mut ccfg = ctx.cfg.curation.clone();
    if let Some(s) = a.sigma {
        if !(s.is_finite() && s > 0.0) {
            return Err(fault(format!("--sigma must be positive, got {s}")));
        }
        ccfg.sigma = Some(s);
    }
    let rules = ctx.cfg.keyword_rules().map_err(|e| fault(e.to_string()))?;
    let manifest = read_manifest(&input)
        .with_context(|| format!("reading manifest in {}", input.display()))?;
    info!(
        "loading {} studies from {}",
        manifest.entries.len(),
        input.display()
    );
    let records = par::try_map(ctx.exec, &manifest.entries, |e| load_study(&input, e))?;
    let items = curate_batch(&records, &ccfg, &rules, ctx.exec)?;
    let mut curated = 0;
    let mut skipped = 0;
    if !ctx.dry_run {
        std::fs::create_dir_all(&output)
            .with_context(|| format!("creating {}", output.display()))?;
    }
    for item in &items {
        match item {
            BatchItem::Curated(study) => {
                curated += 1;
                if !ctx.dry_run {
                    let dir = write_curated_study(&output, study)?;
                    debug!("wrote {}", dir.display());
                }
            }
            BatchItem::Skipped(id) => {
                skipped += 1;
                info!("skipped {id}: brightness filter");
            }
        }
    }
    println!("studies={curated} pairs={} skipped={skipped}", curated * 7);
    Ok(())
}

fn split(ctx: &Ctx, a: &SplitArgs) -> Result<()> {
    let input = pick(&a.input, &ctx.cfg.paths.input, "input")?;
    let mut spec: SplitSpec = ctx.cfg.split;
    if a.ratios.as_ref().is_some_and(|v| v.len() != 3)
        || a.counts.as_ref().is_some_and(|v| v.len() != 3)
    {
        return Err(fault(
            "--ratios and --counts take three comma-separated values",
        ));
    }
    if let Some(r) = &a.ratios {
        spec.ratios = (r[0], r[1], r[2]);
        spec.counts = None;
    }
    if let Some(c) = &a.counts {
        spec.counts = Some((c[0], c[1], c[2]));
    }
    SplitSpec {
        counts: None,
        ..spec
    }
    .sizes(100)
    .map_err(|e| fault(e.to_string()))?;
    let seed = a.seed.unwrap_or(ctx.cfg.seed);
    let manifest = read_manifest(&input)
        .with_context(|| format!("reading manifest in {}", input.display()))?;
    let ids: Vec<&str> = manifest.ids().collect();
    let splits = split_dataset(&ids, &spec, seed)?;
    let (tr, va, te) = split_counts(&splits);
    if !ctx.dry_run {
        write_manifest(
            &input,
            &Manifest::new(manifest.entries.clone(), splits, seed),
        )?;
    }
    println!("train={tr} val={va} test={te}");
    Ok(())
}

fn stats(ctx: &Ctx, a: &StatsArgs) -> Result<()> {
    let input = pick(&a.input, &ctx.cfg.paths.output, "curated")?;
    let output = a.output.clone().unwrap_or_else(|| input.join("stats"));
    let studies = read_curated_dir(&input)
        .with_context(|| format!("reading curated studies in {}", input.display()))?;
    let s = dataset_stats(&studies, &ctx.cfg.stats)
        .with_context(|| format!("summarizing {}", input.display()))?;
    if ctx.dry_run {
        println!("studies={}", s.studies);
        return Ok(());
    }
    let written = s.write(&output, a.svg)?;
    println!(
        "studies={} files={} dir={}",
        s.studies,
        written.len(),
        output.display()
    );
    Ok(())
}

fn eval(ctx: &Ctx, a: &EvalArgs) -> Result<()> {
    let ecfg = ctx.cfg.eval_config().map_err(|e| fault(e.to_string()))?;
    let generated = read_generated(&a.generated)?;
    let base = a.generated.parent().unwrap_or(Path::new("."));
    let reference = read_curated_dir(&a.reference)
        .with_context(|| format!("reading reference {}", a.reference.display()))?;
    let row = evaluate(&generated, base, &reference, &ecfg, ctx.exec)?;
    let csv = row.to_csv();
    match &a.output {
        Some(p) if !ctx.dry_run => {
            std::fs::write(p, csv).with_context(|| format!("writing {}", p.display()))?
        }
        _ => print!("{csv}"),
    }
    Ok(())
}

fn samples_and_model(
    ctx: &Ctx,
    seed: u64,
    studies: usize,
    pixel_mode: bool,
) -> Result<(Model, Vec<ToySample>)> {
    let (vocab, samples) = synthetic_samples(seed, studies)?;
    let longest = samples
        .iter()
        .flat_map(|s| s.tokens.iter().map(Vec::len))
        .max()
        .unwrap_or(0);
    let mut mcfg = ctx.cfg.toy.model_config(&vocab, longest, seed);
    mcfg.pixel_mode |= pixel_mode;
    let model = Model::new(mcfg).map_err(|e| fault(e.to_string()))?;
    Ok((model, samples))
}

fn toy_train(ctx: &Ctx, a: &ToyTrainArgs) -> Result<()> {
    let seed = a.seed.unwrap_or(ctx.cfg.seed);
    let studies = a.studies.unwrap_or(ctx.cfg.toy.studies);
    if studies == 0 {
        return Err(fault("--studies must be positive"));
    }
    let (mut model, samples) = samples_and_model(ctx, seed, studies, a.pixel_mode)?;
    let mut tcfg = ctx.cfg.train_config();
    if let Some(s) = a.steps {
        tcfg.steps = s;
    }
    println!(
        "params={} vocab={} studies={} steps={} lr={}",
        model.params.scalar_count(),
        model.vocab.len(),
        samples.len(),
        tcfg.steps,
        tcfg.lr
    );
    if ctx.dry_run {
        return Ok(());
    }
    let mut opt = Adam::new(tcfg.lr);
    let mut log = String::from("step,study_id,l_c,l_h,lambda_c,lambda_h,total\n");
    let mut last = f64::NAN;
    let mut steps = 0;
    for step in 0..tcfg.steps {
        let r = train_step(&mut model, &samples, &mut opt, &tcfg, ctx.exec)?;
        for (s, b) in samples.iter().zip(&r.samples) {
            let _ = writeln!(
                log,
                "{step},{},{},{},{},{},{}",
                s.study_id, b.l_c, b.l_h, b.lambda_c, b.lambda_h, b.total
            );
        }
        last = r.total;
        steps = step + 1;
        if step % 100 == 0 {
            info!("step {step} loss {:.6}", r.total);
        }
        if a.until_exact
            && steps % 50 == 0
            && exact_matches(&model, &samples, ctx.exec)? == samples.len()
        {
            break;
        }
    }
    let exact = exact_matches(&model, &samples, ctx.exec)?;
    if let Some(p) = &a.log {
        std::fs::write(p, log).with_context(|| format!("writing {}", p.display()))?;
    }
    if let Some(p) = &a.checkpoint {
        save_checkpoint(p, &model)?;
    }
    println!(
        "steps={steps} loss={last:.6} exact={exact}/{}",
        samples.len()
    );
    Ok(())
}

fn toy_check(ctx: &Ctx, a: &ToyCheckArgs) -> Result<()> {
    let n = a.params.unwrap_or(ctx.cfg.toy.grad_check_params);
    let tcfg = ctx.cfg.train_config();
    let mut worst = 0.0f64;
    for &seed in &a.seeds {
        let (vocab, samples) = synthetic_samples(seed, 1)?;
        let longest = samples[0].tokens.iter().map(Vec::len).max().unwrap_or(0);
        let mcfg = ModelConfig {
            max_len: longest + 2,
            mixing: ctx.cfg.toy.mixing,
            pixel_mode: ctx.cfg.toy.pixel_mode,
            ..ModelConfig::tiny(vocab.tokens().to_vec(), seed)
        };
        let model = Model::new(mcfg).map_err(|e| fault(e.to_string()))?;
        let r = grad_check(&model, &samples[0], &tcfg, ctx.cfg.toy.epsilon, n, seed)?;
        println!(
            "seed={seed} checked={} max_rel_err={:.3e} worst={}[{}]",
            r.checked, r.max_rel_err, r.worst.0, r.worst.1
        );
        worst = worst.max(r.max_rel_err);
    }
    if worst > a.tolerance {
        bail!(
            "gradient check failed: max relative error {worst:.3e} exceeds {:.1e}",
            a.tolerance
        );
    }
    Ok(())
}

fn synth(ctx: &Ctx, a: &SynthArgs) -> Result<()> {
    if a.size < 8 || a.studies == 0 {
        return Err(fault("synth needs --size >= 8 and at least one study"));
    }
    let seed = a.seed.unwrap_or(ctx.cfg.seed);
    if ctx.dry_run {
        println!("studies={} size={} seed={seed}", a.studies, a.size);
        return Ok(());
    }
    let m = write_synthetic_dataset(&a.output, a.studies, seed, a.size, a.size)?;
    println!("studies={} dir={}", m.entries.len(), a.output.display());
    Ok(())
}
