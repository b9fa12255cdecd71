//! Experiment runners: each config kind maps to one function that produces
//! CSV tables (and plots) in the output directory, plus a manifest that can
//! replay the run bit-identically.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};

use noiselab_core::align::{AlignmentTrace, NLGConfig};
use noiselab_core::dataset::{
    mix1d_components, mix2d_components, ring8_mixture, LabeledDataset,
};
use noiselab_core::eval::{
    best_of_n_baseline, direction_length_histogram,
    median_heuristic_bandwidth, mmd, sliced_wasserstein, train_classifier, worst_aligned_rescue,
    Classifier, ClassifierConfig, Scorer,
};
use noiselab_core::guidance::GuidanceSpec;
use noiselab_core::models::checkpoint;
use noiselab_core::models::train::{
    held_out_loss_seeded, train_diffusion, train_flow, TrainConfig,
};
use noiselab_core::models::{
    AnalyticMixtureModel, ConditionToken, ModelHandle, ModelPair,
};
use noiselab_core::rng::RngStream;
use noiselab_core::sampling::{
    generate_batch, write_samples_csv, AlignCondition, AlignerSpec, BatchItem, SamplerConfig,
    SamplerKind,
};
use noiselab_core::schedule::{NoiseSchedule, ScheduleKind, DEFAULT_RF_STEPS, DEFAULT_VP_STEPS};
use noiselab_core::steps_for_guidance_scale;
use noiselab_core::vector::Vector;

use crate::config::{DatasetName, ExperimentConfig, ExperimentKind, ModelFamily, ModelRef};
use crate::plot::{emit_plot, PlotKind};

const EXPERIMENT_STREAM: u64 = 0x6578_7072;
const PROJECTION_COUNT: usize = 128;

/// Outcome of a run: where it wrote, what it wrote, and how many batch
/// items failed (a nonzero count maps to the partial-failure exit code).
#[derive(Debug)]
pub struct RunOutput {
    pub out_dir: PathBuf,
    pub outputs: Vec<String>,
    pub partial_failures: usize,
}

/// Collects output files so the manifest can list exactly what a replay
/// must reproduce. Timings are written separately and never compared.
struct Emitter {
    dir: PathBuf,
    outputs: Vec<String>,
    timings: Vec<(String, f64)>,
}

impl Emitter {
    fn new(dir: &Path, overwrite: bool) -> Result<Self> {
        if dir.exists() {
            let has_manifest = dir.join("manifest.txt").exists();
            if has_manifest && !overwrite {
                bail!(
                    "output directory {} already holds a run (use --overwrite)",
                    dir.display()
                );
            }
        }
        std::fs::create_dir_all(dir)
            .with_context(|| format!("creating output directory {}", dir.display()))?;
        Ok(Emitter {
            dir: dir.to_path_buf(),
            outputs: Vec::new(),
            timings: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, content: &[u8]) -> Result<()> {
        std::fs::write(self.dir.join(name), content)
            .with_context(|| format!("writing {name}"))?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    fn write_text(&mut self, name: &str, content: &str) -> Result<()> {
        self.write(name, content.as_bytes())
    }

    fn plot(&mut self, csv: &str, kind: PlotKind, name: &str, title: &str) -> Result<()> {
        emit_plot(csv, kind, &self.dir.join(name), title)?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    fn record_time(&mut self, key: String, seconds: f64) {
        self.timings.push((key, seconds));
    }

    fn finish(mut self, cfg: &ExperimentConfig, partial_failures: usize) -> Result<RunOutput> {
        let mut timing_csv = String::from("key,seconds\n");
        for (k, v) in &self.timings {
            timing_csv.push_str(&format!("{k},{v}\n"));
        }
        std::fs::write(self.dir.join("timings.csv"), timing_csv)?;

        self.outputs.sort();
        let mut meta = BTreeMap::new();
        meta.insert(
            "code_version".to_string(),
            env!("CARGO_PKG_VERSION").to_string(),
        );
        meta.insert("outputs".to_string(), self.outputs.join(","));
        std::fs::write(self.dir.join("manifest.txt"), cfg.render(&meta))?;
        Ok(RunOutput {
            out_dir: self.dir,
            outputs: self.outputs,
            partial_failures,
        })
    }
}

/// Everything an experiment needs that is derived from the config once.
pub struct RunContext {
    pub cfg: ExperimentConfig,
    pub dataset: LabeledDataset,
    pub heldout: LabeledDataset,
    pub oracle_vp: AnalyticMixtureModel,
    pub oracle_rf: AnalyticMixtureModel,
    classifier: Option<Classifier>,
    mmd_bandwidth: f64,
}

fn mixture_parts(name: DatasetName) -> (Vec<Vector>, Vec<f64>, f64) {
    match name {
        DatasetName::Ring8 => ring8_mixture(),
        DatasetName::Mix1d => mix1d_components(),
        DatasetName::Mix2d => mix2d_components(),
    }
}

impl RunContext {
    pub fn build(cfg: &ExperimentConfig) -> Result<Self> {
        let (means, weights, var) = mixture_parts(cfg.dataset);
        let vp = NoiseSchedule::cosine_vp(DEFAULT_VP_STEPS)?;
        let rf = NoiseSchedule::rectified_flow(DEFAULT_RF_STEPS)?;
        let oracle_vp =
            AnalyticMixtureModel::new(means.clone(), weights.clone(), var, vp)?;
        let oracle_rf = AnalyticMixtureModel::new(means, weights, var, rf)?;
        let mut data_rng = RngStream::new(cfg.data_seed, 0x6461_7461);
        let dataset = LabeledDataset::from_mixture(&oracle_vp, cfg.train_samples, &mut data_rng)?;
        let heldout =
            LabeledDataset::from_mixture(&oracle_vp, (cfg.train_samples / 2).max(512), &mut data_rng)?;
        let mmd_bandwidth = median_heuristic_bandwidth(&heldout.points, &heldout.points)?;
        Ok(RunContext {
            cfg: cfg.clone(),
            dataset,
            heldout,
            oracle_vp,
            oracle_rf,
            classifier: None,
            mmd_bandwidth,
        })
    }

    /// Classifier trained on real data only, built lazily since `train`
    /// runs do not need it.
    fn ensure_classifier(&mut self) -> Result<&Classifier> {
        if self.classifier.is_none() {
            if self.dataset.num_classes < 2 {
                bail!("alignment scoring needs a multi-class dataset");
            }
            let clf_cfg = ClassifierConfig {
                train_steps: self.cfg.classifier_steps,
                seed: self.cfg.data_seed,
                ..ClassifierConfig::default()
            };
            self.classifier = Some(train_classifier(&self.dataset, &clf_cfg)?);
        }
        Ok(self.classifier.as_ref().unwrap())
    }

    fn scorer(&self) -> Scorer<'_> {
        match (&self.cfg.model, &self.classifier) {
            (Some(ModelRef::Oracle(_)), _) | (None, _) => Scorer::Oracle(&self.oracle_vp),
            (_, Some(c)) => Scorer::Classifier(c),
            (_, None) => Scorer::Oracle(&self.oracle_vp),
        }
    }

    fn load_model(&self, mref: &ModelRef) -> Result<Arc<ModelHandle>> {
        Ok(match mref {
            ModelRef::Oracle(ModelFamily::Vp) => {
                ModelHandle::new(Box::new(self.oracle_vp.clone()))
            }
            ModelRef::Oracle(ModelFamily::Rf) => {
                ModelHandle::new(Box::new(self.oracle_rf.clone()))
            }
            ModelRef::Checkpoint(path) => {
                let net = checkpoint::load_from_path(path)
                    .with_context(|| format!("loading checkpoint {}", path.display()))?;
                ModelHandle::new(Box::new(net))
            }
        })
    }

    fn main_pair(&self) -> Result<ModelPair> {
        let model = self
            .cfg
            .model
            .as_ref()
            .ok_or_else(|| anyhow!("this experiment needs [models] model"))?;
        let d1 = self.load_model(model)?;
        match &self.cfg.model_d0 {
            Some(r) => {
                let d0 = self.load_model(r)?;
                Ok(ModelPair::new(d1, d0)?)
            }
            None => Ok(ModelPair::aliased(d1)),
        }
    }

    fn conditions(&self) -> Vec<ConditionToken> {
        (0..self.dataset.num_classes)
            .map(ConditionToken::Class)
            .collect()
    }

    fn sampler_kind_for(&self, pair: &ModelPair) -> Result<SamplerKind> {
        Ok(match pair.d1.schedule().kind() {
            ScheduleKind::RectifiedFlow => SamplerKind::RfEuler,
            ScheduleKind::VariancePreserving => match self.cfg.sampler_kind.as_str() {
                "deterministic_vp" => SamplerKind::DeterministicVp,
                _ => SamplerKind::AncestralVp,
            },
            ScheduleKind::VarianceExploding => {
                bail!("no sampler is provided for variance-exploding schedules")
            }
        })
    }

    fn guidance(&self, weight: f64) -> GuidanceSpec {
        match self.cfg.guidance_mode.as_str() {
            "cfg" => GuidanceSpec::cfg(weight, ConditionToken::Null),
            "autoguide" => GuidanceSpec::autoguide(weight, ConditionToken::Null),
            _ => GuidanceSpec::none(ConditionToken::Null),
        }
    }

    fn nlg_config(&self, dim: usize, sigma_max: f64, steps: usize) -> NLGConfig {
        NLGConfig {
            steps,
            clip_threshold: self.cfg.clip_threshold,
            extra_noise_var: self.cfg.extra_noise_var,
            sigma_max,
            dim,
        }
    }
}

/// Metrics of one generated batch against the held-out reference set.
struct BatchMetrics {
    mmd: f64,
    sliced_wasserstein: f64,
    cond_accuracy: Option<f64>,
    alignment: Option<f64>,
    model_evals: u64,
    failures: usize,
}

fn render_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

#[allow(clippy::too_many_arguments)]
fn run_batch(
    ctx: &RunContext,
    pair: &ModelPair,
    sampler: &SamplerConfig,
    conditions: &[ConditionToken],
    aligner: Option<&AlignerSpec<'_>>,
    seed: u64,
    scorer: &Scorer<'_>,
) -> Result<(BatchMetrics, Vec<BatchItem>)> {
    let schedule = pair.d1.schedule().clone();
    let rng = RngStream::new(seed, EXPERIMENT_STREAM);
    let out = generate_batch(
        pair,
        &schedule,
        sampler,
        ctx.cfg.count,
        conditions,
        aligner,
        &rng,
    )?;
    let failures = out.failures.len();
    if out.items.is_empty() {
        bail!("every batch item failed (first error: {:?})", out.failures.first());
    }
    let samples: Vec<Vector> = out.items.iter().map(|i| i.sample.clone()).collect();

    let mmd_value = mmd(&samples, &ctx.heldout.points, ctx.mmd_bandwidth)?;
    let mut proj_rng = RngStream::new(ctx.cfg.data_seed, 0x7377_6470);
    let sw = sliced_wasserstein(&samples, &ctx.heldout.points, PROJECTION_COUNT, &mut proj_rng)?;

    let class_items: Vec<(&Vector, usize)> = out
        .items
        .iter()
        .filter_map(|i| match i.condition {
            ConditionToken::Class(k) => Some((&i.sample, k)),
            _ => None,
        })
        .collect();
    let (cond_accuracy, alignment) = if class_items.is_empty() {
        (None, None)
    } else {
        let num_classes = ctx.dataset.num_classes;
        let mut hits = 0usize;
        let mut logp = 0.0;
        for (x, k) in &class_items {
            let mut best = (f64::NEG_INFINITY, 0usize);
            for c in 0..num_classes {
                let lp = scorer.log_posterior(x, ConditionToken::Class(c))?;
                if lp > best.0 {
                    best = (lp, c);
                }
            }
            if best.1 == *k {
                hits += 1;
            }
            logp += scorer.log_posterior(x, ConditionToken::Class(*k))?;
        }
        (
            Some(hits as f64 / class_items.len() as f64),
            Some(logp / class_items.len() as f64),
        )
    };

    let align_evals: u64 = out
        .items
        .iter()
        .filter_map(|i| i.trace.as_ref())
        .map(|t| t.model_eval_count)
        .sum();
    let sampler_evals =
        out.items.len() as u64 * sampler.inference_steps as u64 * sampler.guidance.evals_per_step();
    Ok((
        BatchMetrics {
            mmd: mmd_value,
            sliced_wasserstein: sw,
            cond_accuracy,
            alignment,
            model_evals: align_evals + sampler_evals,
            failures,
        },
        out.items,
    ))
}

/// Fan work out over seeds. Results come back in input order regardless of
/// scheduling, so downstream CSV rows are deterministic.
fn per_seed<R: Send>(
    seeds: &[u64],
    jobs: usize,
    f: impl Fn(u64) -> Result<R> + Sync,
) -> Result<Vec<(u64, R)>> {
    let jobs = jobs.max(1);
    if jobs == 1 || seeds.len() <= 1 {
        return seeds.iter().map(|&s| Ok((s, f(s)?))).collect();
    }
    let mut results: Vec<Option<Result<R>>> = (0..seeds.len()).map(|_| None).collect();
    let chunk = seeds.len().div_ceil(jobs);
    std::thread::scope(|scope| {
        for (slot_chunk, seed_chunk) in results.chunks_mut(chunk).zip(seeds.chunks(chunk)) {
            let f = &f;
            scope.spawn(move || {
                for (slot, &seed) in slot_chunk.iter_mut().zip(seed_chunk) {
                    *slot = Some(f(seed));
                }
            });
        }
    });
    seeds
        .iter()
        .zip(results)
        .map(|(&s, r)| Ok((s, r.expect("worker finished")?)))
        .collect()
}

/// Entry point used by the CLI and the test suites.
pub fn run(cfg: &ExperimentConfig, overwrite: bool) -> Result<RunOutput> {
    let mut ctx = RunContext::build(cfg)?;
    let emitter = Emitter::new(&cfg.out, overwrite)?;
    match cfg.kind {
        ExperimentKind::Train => run_train(&ctx, emitter),
        ExperimentKind::Align => run_align(&mut ctx, emitter),
        ExperimentKind::Sample => run_sample(&mut ctx, emitter),
        ExperimentKind::Eval => run_eval(&mut ctx, emitter),
        ExperimentKind::SweepSteps => run_sweep_steps(&mut ctx, emitter),
        ExperimentKind::SweepGuidance => run_sweep_guidance(&mut ctx, emitter),
        ExperimentKind::SweepNoiseLevel => run_sweep_noise_level(&mut ctx, emitter),
        ExperimentKind::AblateNormalization => run_ablate_normalization(&mut ctx, emitter),
        ExperimentKind::AblateClipping => run_ablate_clipping(&mut ctx, emitter),
        ExperimentKind::AutoguideUncond => run_autoguide(&mut ctx, emitter, false),
        ExperimentKind::AutoguideCond => run_autoguide(&mut ctx, emitter, true),
        ExperimentKind::DualCondition => run_dual_condition(&mut ctx, emitter),
        ExperimentKind::CrossModel => run_cross_model(&mut ctx, emitter),
        ExperimentKind::RescueWorst => run_rescue_worst(&mut ctx, emitter),
        ExperimentKind::BaselineBestOfN => run_best_of_n(&mut ctx, emitter),
    }
}

fn run_train(ctx: &RunContext, mut em: Emitter) -> Result<RunOutput> {
    let cfg = &ctx.cfg;
    let train_cfg = TrainConfig {
        learning_rate: cfg.learning_rate,
        batch_size: cfg.batch_size,
        train_steps: cfg.train_steps,
        uncond_dropout_prob: cfg.uncond_dropout_prob,
        seed: cfg.seeds[0],
    };
    let start = Instant::now();
    let mut summary = String::from("artifact,family,train_steps,held_out_loss\n");
    match cfg.budget_ratio {
        None => {
            let net = match cfg.family {
                ModelFamily::Vp => train_diffusion(
                    &ctx.dataset,
                    NoiseSchedule::cosine_vp(DEFAULT_VP_STEPS)?,
                    &cfg.hidden,
                    &train_cfg,
                )?,
                ModelFamily::Rf => train_flow(&ctx.dataset, &cfg.hidden, &train_cfg)?,
            };
            let mut bytes = Vec::new();
            checkpoint::save(&net, &mut bytes)?;
            em.write("model.nlgm", &bytes)?;
            let loss = held_out_loss_seeded(&net, &ctx.heldout, 4096, cfg.data_seed)?;
            summary.push_str(&format!(
                "model.nlgm,{},{},{loss}\n",
                cfg.family.name(),
                cfg.train_steps
            ));
        }
        Some(ratio) => {
            // Same construction as make_quality_pair, but with access to the
            // concrete nets so both sides can be checkpointed.
            let d1 = train_diffusion(
                &ctx.dataset,
                NoiseSchedule::cosine_vp(DEFAULT_VP_STEPS)?,
                &cfg.hidden,
                &train_cfg,
            )?;
            let reduced_hidden: Vec<usize> = cfg
                .hidden
                .iter()
                .map(|&w| ((w as f64 * ratio.sqrt()).round() as usize).max(4))
                .collect();
            let reduced_cfg = TrainConfig {
                train_steps: (cfg.train_steps as f64 * ratio).round() as usize,
                ..train_cfg.clone()
            };
            let d0 = train_diffusion(
                &ctx.dataset,
                NoiseSchedule::cosine_vp(DEFAULT_VP_STEPS)?,
                &reduced_hidden,
                &reduced_cfg,
            )?;
            let mut b1 = Vec::new();
            checkpoint::save(&d1, &mut b1)?;
            em.write("model.nlgm", &b1)?;
            let mut b0 = Vec::new();
            checkpoint::save(&d0, &mut b0)?;
            em.write("model_d0.nlgm", &b0)?;
            let l1 = held_out_loss_seeded(&d1, &ctx.heldout, 4096, cfg.data_seed)?;
            let l0 = held_out_loss_seeded(&d0, &ctx.heldout, 4096, cfg.data_seed)?;
            summary.push_str(&format!(
                "model.nlgm,{},{},{l1}\n",
                cfg.family.name(),
                cfg.train_steps
            ));
            summary.push_str(&format!(
                "model_d0.nlgm,{},{},{l0}\n",
                cfg.family.name(),
                reduced_cfg.train_steps
            ));
        }
    }
    em.record_time("train".into(), start.elapsed().as_secs_f64());
    em.write_text("summary.csv", &summary)?;
    em.finish(&ctx.cfg, 0)
}

fn run_align(ctx: &mut RunContext, mut em: Emitter) -> Result<RunOutput> {
    let pair = ctx.main_pair()?;
    let dim = pair.data_dim();
    let sigma_max = pair.d1.schedule().initial_noise_std();
    let nlg = ctx.nlg_config(dim, sigma_max, ctx.cfg.nlg_steps);
    let conditions = ctx.conditions();
    let is_oracle = matches!(ctx.cfg.model, Some(ModelRef::Oracle(_)));
    let probe_model = match pair.d1.schedule().kind() {
        ScheduleKind::RectifiedFlow => &ctx.oracle_rf,
        _ => &ctx.oracle_vp,
    };

    let mut noise_csv = String::from("seed,item,condition");
    for d in 0..dim {
        noise_csv.push_str(&format!(",n{d}"));
    }
    noise_csv.push('\n');
    let mut trace_csv =
        String::from("seed,item,step,d_norm_preclip,clipped,n_norm_post,probe_posterior\n");
    let mut traces = Vec::new();

    let start = Instant::now();
    for &seed in &ctx.cfg.seeds {
        let rng = RngStream::new(seed, EXPERIMENT_STREAM);
        for item in 0..ctx.cfg.count {
            let y1 = conditions[item % conditions.len()];
            let mut item_rng = noiselab_core::sampling::item_noise_stream(&rng, item as u64);
            let (n, trace) = noiselab_core::align::align_noise_with(
                &pair,
                y1,
                ConditionToken::Null,
                &nlg,
                noiselab_core::align::AlignOptions {
                    disable_renormalization: !ctx.cfg.renormalize,
                    probe: if is_oracle { Some(probe_model) } else { None },
                },
                &mut item_rng,
            )?;
            noise_csv.push_str(&format!("{seed},{item},{y1}"));
            for v in n.as_slice() {
                noise_csv.push_str(&format!(",{v}"));
            }
            noise_csv.push('\n');
            for r in &trace.steps {
                trace_csv.push_str(&format!(
                    "{seed},{item},{},{},{},{},{}\n",
                    r.step,
                    r.d_norm_preclip,
                    u8::from(r.clipped),
                    r.n_norm_post,
                    render_opt(r.probe_posterior)
                ));
            }
            traces.push(trace);
        }
    }
    em.record_time("align".into(), start.elapsed().as_secs_f64());
    em.write_text("aligned_noise.csv", &noise_csv)?;
    em.write_text("traces.csv", &trace_csv)?;

    let hist = direction_length_histogram(&traces, 0.05)?;
    let mut hist_csv = String::new();
    noiselab_core::eval::write_histogram_csv(&hist, &mut string_writer(&mut hist_csv))?;
    em.write_text("direction_histogram.csv", &hist_csv)?;
    em.plot(
        &hist_csv,
        PlotKind::Histogram,
        "direction_histogram.svg",
        "edit direction lengths before clipping",
    )?;
    em.finish(&ctx.cfg, 0)
}

// io::Write adapter over String for the CSV helpers.
fn string_writer(buf: &mut String) -> StringWriter<'_> {
    StringWriter(buf)
}

struct StringWriter<'a>(&'a mut String);

impl std::io::Write for StringWriter<'_> {
    fn write(&mut self, data: &[u8]) -> std::io::Result<usize> {
        self.0.push_str(std::str::from_utf8(data).map_err(std::io::Error::other)?);
        Ok(data.len())
    }
    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

fn run_sample(ctx: &mut RunContext, mut em: Emitter) -> Result<RunOutput> {
    let pair = ctx.main_pair()?;
    let kind = ctx.sampler_kind_for(&pair)?;
    let guidance = ctx.guidance(ctx.cfg.guidance_weight);
    let conditions = ctx.conditions();
    let dim = pair.data_dim();
    let sigma = pair.d1.schedule().initial_noise_std();
    let schedule = pair.d1.schedule().clone();

    let mut all_items = Vec::new();
    let mut failures = 0usize;
    let start = Instant::now();
    let mut csv = String::new();
    for &seed in &ctx.cfg.seeds {
        let sampler = SamplerConfig::new(kind, ctx.cfg.inference_steps, guidance, seed);
        let aligner_spec;
        let aligner = if ctx.cfg.nlg_steps > 0 {
            aligner_spec = AlignerSpec {
                disable_renormalization: !ctx.cfg.renormalize,
                ..AlignerSpec::toward_item_condition(ctx.nlg_config(dim, sigma, ctx.cfg.nlg_steps))
            };
            Some(&aligner_spec)
        } else {
            None
        };
        let rng = RngStream::new(seed, EXPERIMENT_STREAM);
        let out = generate_batch(
            &pair,
            &schedule,
            &sampler,
            ctx.cfg.count,
            &conditions,
            aligner,
            &rng,
        )?;
        failures += out.failures.len();
        let mut seed_csv = Vec::new();
        write_samples_csv(&out.items, &mut seed_csv)?;
        let text = String::from_utf8(seed_csv).expect("csv is utf-8");
        if csv.is_empty() {
            csv.push_str(&text);
        } else {
            // Skip the header of subsequent seeds; prefix rows with seed.
            for line in text.lines().skip(1) {
                csv.push_str(line);
                csv.push('\n');
            }
        }
        all_items.extend(out.items);
    }
    em.record_time("sample".into(), start.elapsed().as_secs_f64());
    em.write_text("samples.csv", &csv)?;
    if dim == 2 {
        em.plot(&csv, PlotKind::Scatter2d, "samples.svg", "generated samples")?;
    }
    em.finish(&ctx.cfg, failures)
}

/// Shared table writer for paired baseline/NLG comparisons.
struct MetricsTable {
    header: String,
    rows: Vec<String>,
}

impl MetricsTable {
    fn new(key_cols: &str) -> Self {
        MetricsTable {
            header: format!(
                "{key_cols},mmd,sliced_wasserstein,cond_accuracy,alignment_score,model_evals,failures\n"
            ),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, key: String, m: &BatchMetrics) {
        self.rows.push(format!(
            "{key},{},{},{},{},{},{}\n",
            m.mmd,
            m.sliced_wasserstein,
            render_opt(m.cond_accuracy),
            render_opt(m.alignment),
            m.model_evals,
            m.failures
        ));
    }

    fn render(&self) -> String {
        let mut s = self.header.clone();
        for r in &self.rows {
            s.push_str(r);
        }
        s
    }
}

fn run_eval(ctx: &mut RunContext, mut em: Emitter) -> Result<RunOutput> {
    ctx.ensure_classifier()?;
    let pair = ctx.main_pair()?;
    let kind = ctx.sampler_kind_for(&pair)?;
    let guidance = ctx.guidance(ctx.cfg.guidance_weight);
    let conditions = ctx.conditions();
    let dim = pair.data_dim();
    let sigma = pair.d1.schedule().initial_noise_std();
    let scorer = ctx.scorer();

    let mut table = MetricsTable::new("variant,seed");
    let mut failures = 0usize;
    let start = Instant::now();
    let results = per_seed(&ctx.cfg.seeds, ctx.cfg.jobs, |seed| {
        let sampler = SamplerConfig::new(kind, ctx.cfg.inference_steps, guidance, seed);
        let base = run_batch(ctx, &pair, &sampler, &conditions, None, seed, &scorer)?;
        let aligner = AlignerSpec {
            disable_renormalization: !ctx.cfg.renormalize,
            ..AlignerSpec::toward_item_condition(ctx.nlg_config(dim, sigma, ctx.cfg.nlg_steps))
        };
        let nlg = run_batch(ctx, &pair, &sampler, &conditions, Some(&aligner), seed, &scorer)?;
        Ok((base.0, nlg.0))
    })?;
    for (seed, (base, nlg)) in results {
        failures += base.failures + nlg.failures;
        table.push(format!("baseline,{seed}"), &base);
        table.push(format!("nlg,{seed}"), &nlg);
    }
    em.record_time("eval".into(), start.elapsed().as_secs_f64());
    em.write_text("metrics.csv", &table.render())?;
    em.finish(&ctx.cfg, failures)
}

fn run_sweep_steps(ctx: &mut RunContext, mut em: Emitter) -> Result<RunOutput> {
    ctx.ensure_classifier()?;
    let pair = ctx.main_pair()?;
    let kind = ctx.sampler_kind_for(&pair)?;
    let conditions = ctx.conditions();
    let dim = pair.data_dim();
    let sigma = pair.d1.schedule().initial_noise_std();
    let scorer = ctx.scorer();
    let weights = [1.0, 7.5];

    let mut table = MetricsTable::new("s,w,seed");
    let mut failures = 0usize;
    // keyed (s, w) -> per-seed alignment for the summary plot
    let mut pivot: BTreeMap<(usize, u64), Vec<f64>> = BTreeMap::new();
    for &s in &ctx.cfg.step_grid {
        for &w in &weights {
            let start = Instant::now();
            let guidance = GuidanceSpec::cfg(w, ConditionToken::Null);
            let results = per_seed(&ctx.cfg.seeds, ctx.cfg.jobs, |seed| {
                let sampler = SamplerConfig::new(kind, ctx.cfg.inference_steps, guidance, seed);
                let aligner_store;
                let aligner = if s > 0 {
                    aligner_store =
                        AlignerSpec::toward_item_condition(ctx.nlg_config(dim, sigma, s));
                    Some(&aligner_store)
                } else {
                    None
                };
                run_batch(ctx, &pair, &sampler, &conditions, aligner, seed, &scorer)
                    .map(|(m, _)| m)
            })?;
            for (seed, m) in results {
                failures += m.failures;
                if let Some(a) = m.alignment {
                    pivot.entry((s, (w * 10.0) as u64)).or_default().push(a);
                }
                table.push(format!("{s},{w},{seed}"), &m);
            }
            em.record_time(format!("s{s}_w{w}"), start.elapsed().as_secs_f64());
        }
    }
    em.write_text("metrics.csv", &table.render())?;

    let mut pivot_csv = String::from("s,alignment_w1,alignment_w7.5\n");
    for &s in &ctx.cfg.step_grid {
        let mean = |w: u64| -> String {
            pivot
                .get(&(s, w))
                .map(|v| (v.iter().sum::<f64>() / v.len() as f64).to_string())
                .unwrap_or_default()
        };
        pivot_csv.push_str(&format!("{s},{},{}\n", mean(10), mean(75)));
    }
    em.write_text("alignment_by_steps.csv", &pivot_csv)?;
    em.plot(
        &pivot_csv,
        PlotKind::Line,
        "alignment_by_steps.svg",
        "alignment score vs aligning steps",
    )?;
    em.finish(&ctx.cfg, failures)
}

fn run_sweep_guidance(ctx: &mut RunContext, mut em: Emitter) -> Result<RunOutput> {
    ctx.ensure_classifier()?;
    let pair = ctx.main_pair()?;
    let kind = ctx.sampler_kind_for(&pair)?;
    let conditions = ctx.conditions();
    let dim = pair.data_dim();
    let sigma = pair.d1.schedule().initial_noise_std();
    let scorer = ctx.scorer();

    let mut table = MetricsTable::new("w,s,variant,seed");
    let mut failures = 0usize;
    for &w in &ctx.cfg.weight_grid.clone() {
        let s = steps_for_guidance_scale(w)?;
        let start = Instant::now();
        let guidance = GuidanceSpec::cfg(w, ConditionToken::Null);
        let results = per_seed(&ctx.cfg.seeds, ctx.cfg.jobs, |seed| {
            let sampler = SamplerConfig::new(kind, ctx.cfg.inference_steps, guidance, seed);
            let base =
                run_batch(ctx, &pair, &sampler, &conditions, None, seed, &scorer)?.0;
            let aligner = AlignerSpec::toward_item_condition(ctx.nlg_config(dim, sigma, s));
            let nlg =
                run_batch(ctx, &pair, &sampler, &conditions, Some(&aligner), seed, &scorer)?.0;
            Ok((base, nlg))
        })?;
        for (seed, (base, nlg)) in results {
            failures += base.failures + nlg.failures;
            table.push(format!("{w},0,baseline,{seed}"), &base);
            table.push(format!("{w},{s},nlg,{seed}"), &nlg);
        }
        em.record_time(format!("w{w}"), start.elapsed().as_secs_f64());
    }
    em.write_text("metrics.csv", &table.render())?;
    em.finish(&ctx.cfg, failures)
}

fn run_sweep_noise_level(ctx: &mut RunContext, mut em: Emitter) -> Result<RunOutput> {
    ctx.ensure_classifier()?;
    let pair = ctx.main_pair()?;
    let kind = ctx.sampler_kind_for(&pair)?;
    let conditions = ctx.conditions();
    let dim = pair.data_dim();
    let sigma = pair.d1.schedule().initial_noise_std();
    let scorer = ctx.scorer();
    let guidance = GuidanceSpec::cfg(1.0, ConditionToken::Null);

    let mut table = MetricsTable::new("l,s,seed");
    let mut failures = 0usize;
    for &l in &ctx.cfg.noise_grid.clone() {
        for &s in &ctx.cfg.step_grid.clone() {
            if s == 0 {
                continue;
            }
            let start = Instant::now();
            let results = per_seed(&ctx.cfg.seeds, ctx.cfg.jobs, |seed| {
                let sampler = SamplerConfig::new(kind, ctx.cfg.inference_steps, guidance, seed);
                let mut nlg_cfg = ctx.nlg_config(dim, sigma, s);
                nlg_cfg.extra_noise_var = l;
                let aligner = AlignerSpec::toward_item_condition(nlg_cfg);
                run_batch(ctx, &pair, &sampler, &conditions, Some(&aligner), seed, &scorer)
                    .map(|(m, _)| m)
            })?;
            for (seed, m) in results {
                failures += m.failures;
                table.push(format!("{l},{s},{seed}"), &m);
            }
            em.record_time(format!("l{l}_s{s}"), start.elapsed().as_secs_f64());
        }
    }
    em.write_text("metrics.csv", &table.render())?;
    em.finish(&ctx.cfg, failures)
}

fn run_ablate_normalization(ctx: &mut RunContext, mut em: Emitter) -> Result<RunOutput> {
    ctx.ensure_classifier()?;
    let pair = ctx.main_pair()?;
    let kind = ctx.sampler_kind_for(&pair)?;
    let conditions = ctx.conditions();
    let dim = pair.data_dim();
    let sigma = pair.d1.schedule().initial_noise_std();
    let scorer = ctx.scorer();
    let guidance = ctx.guidance(ctx.cfg.guidance_weight);
    let shell = sigma * (dim as f64).sqrt();

    let mut csv = String::from(
        "variant,seed,mmd,sliced_wasserstein,cond_accuracy,alignment_score,final_norm_rel_deviation\n",
    );
    let mut failures = 0usize;
    let start = Instant::now();
    let results = per_seed(&ctx.cfg.seeds, ctx.cfg.jobs, |seed| {
        let sampler = SamplerConfig::new(kind, ctx.cfg.inference_steps, guidance, seed);
        let mut out = Vec::new();
        for disable in [false, true] {
            let aligner = AlignerSpec {
                disable_renormalization: disable,
                ..AlignerSpec::toward_item_condition(ctx.nlg_config(dim, sigma, ctx.cfg.nlg_steps))
            };
            let (m, items) =
                run_batch(ctx, &pair, &sampler, &conditions, Some(&aligner), seed, &scorer)?;
            let deviation = mean_final_norm_deviation(&items, shell);
            out.push((disable, m, deviation));
        }
        Ok(out)
    })?;
    for (seed, variants) in results {
        for (disable, m, deviation) in variants {
            failures += m.failures;
            let name = if disable { "renorm_off" } else { "renorm_on" };
            csv.push_str(&format!(
                "{name},{seed},{},{},{},{},{deviation}\n",
                m.mmd,
                m.sliced_wasserstein,
                render_opt(m.cond_accuracy),
                render_opt(m.alignment)
            ));
        }
    }
    em.record_time("ablate_normalization".into(), start.elapsed().as_secs_f64());
    em.write_text("metrics.csv", &csv)?;
    em.finish(&ctx.cfg, failures)
}

fn mean_final_norm_deviation(items: &[BatchItem], shell: f64) -> f64 {
    let mut acc = 0.0;
    let mut n = 0usize;
    for item in items {
        if let Some(trace) = &item.trace {
            if let Some(last) = trace.steps.last() {
                acc += (last.n_norm_post - shell).abs() / shell;
                n += 1;
            }
        }
    }
    if n == 0 {
        0.0
    } else {
        acc / n as f64
    }
}

fn run_ablate_clipping(ctx: &mut RunContext, mut em: Emitter) -> Result<RunOutput> {
    ctx.ensure_classifier()?;
    let pair = ctx.main_pair()?;
    let kind = ctx.sampler_kind_for(&pair)?;
    let conditions = ctx.conditions();
    let dim = pair.data_dim();
    let sigma = pair.d1.schedule().initial_noise_std();
    let scorer = ctx.scorer();
    let guidance = ctx.guidance(ctx.cfg.guidance_weight);

    let mut table = MetricsTable::new("variant,seed");
    let mut failures = 0usize;
    let mut clip_on_traces: Vec<AlignmentTrace> = Vec::new();
    let start = Instant::now();
    for &seed in &ctx.cfg.seeds.clone() {
        let sampler = SamplerConfig::new(kind, ctx.cfg.inference_steps, guidance, seed);
        for clip in [true, false] {
            let mut nlg_cfg = ctx.nlg_config(dim, sigma, ctx.cfg.nlg_steps);
            if !clip {
                nlg_cfg.clip_threshold = f64::MAX;
            }
            let aligner = AlignerSpec::toward_item_condition(nlg_cfg);
            let (m, items) =
                run_batch(ctx, &pair, &sampler, &conditions, Some(&aligner), seed, &scorer)?;
            failures += m.failures;
            let name = if clip { "clip_on" } else { "clip_off" };
            table.push(format!("{name},{seed}"), &m);
            if clip {
                clip_on_traces.extend(items.into_iter().filter_map(|i| i.trace));
            }
        }
    }
    em.record_time("ablate_clipping".into(), start.elapsed().as_secs_f64());
    em.write_text("metrics.csv", &table.render())?;
    let hist = direction_length_histogram(&clip_on_traces, 0.05)?;
    let mut hist_csv = String::new();
    noiselab_core::eval::write_histogram_csv(&hist, &mut string_writer(&mut hist_csv))?;
    em.write_text("direction_histogram.csv", &hist_csv)?;
    em.plot(
        &hist_csv,
        PlotKind::Histogram,
        "direction_histogram.svg",
        "edit direction lengths before clipping",
    )?;
    em.finish(&ctx.cfg, failures)
}

fn run_autoguide(ctx: &mut RunContext, mut em: Emitter, conditional: bool) -> Result<RunOutput> {
    ctx.ensure_classifier()?;
    let pair = ctx.main_pair()?;
    if pair.is_aliased() {
        bail!("autoguidance experiments need distinct [models] model and model_d0");
    }
    let kind = ctx.sampler_kind_for(&pair)?;
    let conditions: Vec<ConditionToken> = if conditional {
        ctx.conditions()
    } else {
        vec![ConditionToken::Null]
    };
    let dim = pair.data_dim();
    let sigma = pair.d1.schedule().initial_noise_std();
    let scorer = ctx.scorer();

    let mut table = MetricsTable::new("autog,noise,seed");
    let mut failures = 0usize;
    let start = Instant::now();
    for (autog_on, weight) in [(false, 1.0), (true, ctx.cfg.autoguide_weight)] {
        let guidance = GuidanceSpec::autoguide(weight, ConditionToken::Null);
        let results = per_seed(&ctx.cfg.seeds, ctx.cfg.jobs, |seed| {
            let sampler = SamplerConfig::new(kind, ctx.cfg.inference_steps, guidance, seed);
            let base = run_batch(ctx, &pair, &sampler, &conditions, None, seed, &scorer)?.0;
            let aligner = AlignerSpec::autoguide(ctx.nlg_config(dim, sigma, ctx.cfg.nlg_steps));
            let nlg =
                run_batch(ctx, &pair, &sampler, &conditions, Some(&aligner), seed, &scorer)?.0;
            Ok((base, nlg))
        })?;
        let autog = if autog_on { "on" } else { "off" };
        for (seed, (base, nlg)) in results {
            failures += base.failures + nlg.failures;
            table.push(format!("{autog},gaussian,{seed}"), &base);
            table.push(format!("{autog},nlg,{seed}"), &nlg);
        }
    }
    em.record_time("autoguide".into(), start.elapsed().as_secs_f64());
    em.write_text("metrics.csv", &table.render())?;
    em.finish(&ctx.cfg, failures)
}

fn run_dual_condition(ctx: &mut RunContext, mut em: Emitter) -> Result<RunOutput> {
    ctx.ensure_classifier()?;
    let align_class = ctx
        .cfg
        .align_condition
        .ok_or_else(|| anyhow!("dual_condition needs [nlg] align_condition"))?;
    let gen_class = ctx
        .cfg
        .gen_condition
        .ok_or_else(|| anyhow!("dual_condition needs [eval] gen_condition"))?;
    let pair = ctx.main_pair()?;
    let kind = ctx.sampler_kind_for(&pair)?;
    let dim = pair.data_dim();
    let sigma = pair.d1.schedule().initial_noise_std();
    let schedule = pair.d1.schedule().clone();
    let guidance = GuidanceSpec::cfg(ctx.cfg.guidance_weight, ConditionToken::Null);
    let conditions = [ConditionToken::Class(gen_class)];
    let align_dir = unit_toward_class(ctx, align_class)?;

    let mut csv = String::from("seed,mean_shift_toward_align_class\n");
    let mut sample_dump = String::new();
    let start = Instant::now();
    for (i, &seed) in ctx.cfg.seeds.clone().iter().enumerate() {
        let sampler = SamplerConfig::new(kind, ctx.cfg.inference_steps, guidance, seed);
        let rng = RngStream::new(seed, EXPERIMENT_STREAM);
        let base = generate_batch(&pair, &schedule, &sampler, ctx.cfg.count, &conditions, None, &rng)?;
        let aligner = AlignerSpec {
            positive: AlignCondition::Fixed(ConditionToken::Class(align_class)),
            ..AlignerSpec::toward_item_condition(ctx.nlg_config(dim, sigma, ctx.cfg.nlg_steps))
        };
        let dual = generate_batch(
            &pair,
            &schedule,
            &sampler,
            ctx.cfg.count,
            &conditions,
            Some(&aligner),
            &rng,
        )?;
        let shift = mean_vector(&dual.items)?
            .sub(&mean_vector(&base.items)?)?
            .dot(&align_dir);
        csv.push_str(&format!("{seed},{shift}\n"));
        if i == 0 {
            let mut buf = Vec::new();
            write_samples_csv(&dual.items, &mut buf)?;
            sample_dump = String::from_utf8(buf).expect("csv is utf-8");
        }
    }
    em.record_time("dual_condition".into(), start.elapsed().as_secs_f64());
    em.write_text("shifts.csv", &csv)?;
    em.write_text("dual_samples.csv", &sample_dump)?;
    if dim == 2 {
        em.plot(
            &sample_dump,
            PlotKind::Scatter2d,
            "dual_samples.svg",
            "dual-condition samples",
        )?;
    }
    em.finish(&ctx.cfg, 0)
}

fn mean_vector(items: &[BatchItem]) -> Result<Vector> {
    if items.is_empty() {
        bail!("cannot average an empty batch");
    }
    let dim = items[0].sample.dim();
    let mut acc = vec![0.0; dim];
    for item in items {
        for (a, v) in acc.iter_mut().zip(item.sample.as_slice()) {
            *a += v;
        }
    }
    for a in acc.iter_mut() {
        *a /= items.len() as f64;
    }
    Ok(Vector::new(acc)?)
}

fn unit_toward_class(ctx: &RunContext, class: usize) -> Result<Vector> {
    let means = ctx.oracle_vp.means();
    if class >= means.len() {
        bail!("align_condition class {class} outside the dataset's classes");
    }
    let mu = &means[class];
    let norm = mu.l2_norm();
    if norm == 0.0 {
        bail!("class mean at the origin has no direction");
    }
    Ok(mu.scale(1.0 / norm)?)
}

fn run_cross_model(ctx: &mut RunContext, mut em: Emitter) -> Result<RunOutput> {
    ctx.ensure_classifier()?;
    let model_a = ctx
        .cfg
        .model
        .clone()
        .ok_or_else(|| anyhow!("cross_model needs [models] model"))?;
    let model_b = ctx
        .cfg
        .align_model
        .clone()
        .ok_or_else(|| anyhow!("cross_model needs [models] align_model"))?;
    let pair_a = ModelPair::aliased(ctx.load_model(&model_a)?);
    let pair_b = ModelPair::aliased(ctx.load_model(&model_b)?);
    if pair_a.data_dim() != pair_b.data_dim() {
        bail!("cross_model models must share a data dimension");
    }
    let scorer = ctx.scorer();
    let conditions = ctx.conditions();

    let mut table = MetricsTable::new("generate_with,align_with,seed");
    let mut failures = 0usize;
    let start = Instant::now();
    let cells: Vec<(&str, &ModelPair)> = vec![("model", &pair_a), ("align_model", &pair_b)];
    for (gen_name, gen_pair) in &cells {
        let kind = ctx.sampler_kind_for(gen_pair)?;
        let dim = gen_pair.data_dim();
        let sigma = gen_pair.d1.schedule().initial_noise_std();
        for align_with in ["none", "model", "align_model"] {
            let results = per_seed(&ctx.cfg.seeds, ctx.cfg.jobs, |seed| {
                let sampler = SamplerConfig::new(
                    kind,
                    ctx.cfg.inference_steps,
                    ctx.guidance(ctx.cfg.guidance_weight),
                    seed,
                );
                let align_pair = match align_with {
                    "model" => Some(&pair_a),
                    "align_model" => Some(&pair_b),
                    _ => None,
                };
                let aligner_store;
                let aligner = match align_pair {
                    Some(p) => {
                        aligner_store = AlignerSpec {
                            align_pair: Some(p),
                            ..AlignerSpec::toward_item_condition(
                                ctx.nlg_config(dim, sigma, ctx.cfg.nlg_steps),
                            )
                        };
                        Some(&aligner_store)
                    }
                    None => None,
                };
                run_batch(ctx, gen_pair, &sampler, &conditions, aligner, seed, &scorer)
                    .map(|(m, _)| m)
            })?;
            for (seed, m) in results {
                failures += m.failures;
                table.push(format!("{gen_name},{align_with},{seed}"), &m);
            }
        }
    }
    em.record_time("cross_model".into(), start.elapsed().as_secs_f64());
    em.write_text("metrics.csv", &table.render())?;
    em.finish(&ctx.cfg, failures)
}

fn run_rescue_worst(ctx: &mut RunContext, mut em: Emitter) -> Result<RunOutput> {
    ctx.ensure_classifier()?;
    let pair = ctx.main_pair()?;
    let kind = ctx.sampler_kind_for(&pair)?;
    let conditions = ctx.conditions();
    let dim = pair.data_dim();
    let sigma = pair.d1.schedule().initial_noise_std();
    let schedule = pair.d1.schedule().clone();
    let scorer = ctx.scorer();
    let guidance = GuidanceSpec::cfg(ctx.cfg.guidance_weight, ConditionToken::Null);

    let mut csv =
        String::from("seed,rescue_steps,selected,mean_baseline,mean_rescored,mean_delta,improved_fraction\n");
    let start = Instant::now();
    let rescue_grid = ctx.cfg.rescue_steps.clone();
    let results = per_seed(&ctx.cfg.seeds, ctx.cfg.jobs, |seed| {
        let sampler = SamplerConfig::new(kind, ctx.cfg.inference_steps, guidance, seed);
        let rng = RngStream::new(seed, EXPERIMENT_STREAM);
        let mut rows = Vec::new();
        for &s in &rescue_grid {
            let aligner = AlignerSpec::toward_item_condition(ctx.nlg_config(dim, sigma, s));
            let report = worst_aligned_rescue(
                &pair,
                &schedule,
                &sampler,
                ctx.cfg.count,
                &conditions,
                ctx.cfg.quantile,
                &aligner,
                &scorer,
                &rng,
            )?;
            let n = report.selected.len() as f64;
            let mean_base = report.baseline_scores.iter().sum::<f64>() / n;
            let mean_new = report.rescored.iter().sum::<f64>() / n;
            let improved = report
                .baseline_scores
                .iter()
                .zip(&report.rescored)
                .filter(|(b, r)| r > b)
                .count() as f64
                / n;
            rows.push(format!(
                "{seed},{s},{},{mean_base},{mean_new},{},{improved}\n",
                report.selected.len(),
                report.mean_delta()
            ));
        }
        Ok(rows)
    })?;
    for (_, rows) in results {
        for r in rows {
            csv.push_str(&r);
        }
    }
    em.record_time("rescue_worst".into(), start.elapsed().as_secs_f64());
    em.write_text("rescue.csv", &csv)?;
    em.finish(&ctx.cfg, 0)
}

fn run_best_of_n(ctx: &mut RunContext, mut em: Emitter) -> Result<RunOutput> {
    ctx.ensure_classifier()?;
    let pair = ctx.main_pair()?;
    let kind = ctx.sampler_kind_for(&pair)?;
    let dim = pair.data_dim();
    let sigma = pair.d1.schedule().initial_noise_std();
    let schedule = pair.d1.schedule().clone();
    let scorer = ctx.scorer();
    let y = ConditionToken::Class(ctx.cfg.gen_condition.unwrap_or(0));
    let guidance = GuidanceSpec::cfg(ctx.cfg.guidance_weight, ConditionToken::Null);

    let mut csv = String::from("seed,method,alignment_score,model_evals\n");
    let start = Instant::now();
    for &seed in &ctx.cfg.seeds.clone() {
        let sampler = SamplerConfig::new(kind, ctx.cfg.inference_steps, guidance, seed);
        pair.reset_eval_counts();
        let rng = RngStream::new(seed, EXPERIMENT_STREAM);
        let (best, evals) = best_of_n_baseline(
            &pair,
            &schedule,
            &sampler,
            y,
            ctx.cfg.candidates,
            &scorer,
            &rng,
        )?;
        let best_score = scorer.log_posterior(&best, y)?;
        csv.push_str(&format!("{seed},best_of_{},{best_score},{evals}\n", ctx.cfg.candidates));

        pair.reset_eval_counts();
        let before = pair.total_eval_count();
        let aligner = AlignerSpec::toward_item_condition(ctx.nlg_config(dim, sigma, ctx.cfg.nlg_steps));
        let out = generate_batch(&pair, &schedule, &sampler, 1, &[y], Some(&aligner), &rng)?;
        if let Some((idx, e)) = out.failures.first() {
            bail!("batch item {idx} failed: {e}");
        }
        let nlg_evals = pair.total_eval_count() - before;
        let nlg_score = scorer.log_posterior(&out.items[0].sample, y)?;
        csv.push_str(&format!("{seed},nlg,{nlg_score},{nlg_evals}\n"));
    }
    em.record_time("best_of_n".into(), start.elapsed().as_secs_f64());
    em.write_text("comparison.csv", &csv)?;
    em.finish(&ctx.cfg, 0)
}

/// Replay a manifest into `target` and compare each recorded output file
/// byte-for-byte against the original run directory.
pub fn reproduce(manifest_path: &Path, target: Option<&Path>) -> Result<RunOutput> {
    let text = std::fs::read_to_string(manifest_path)
        .with_context(|| format!("reading manifest {}", manifest_path.display()))?;
    let cfg = ExperimentConfig::load(manifest_path)?;
    let meta = crate::config::read_meta(&text);
    let outputs: Vec<String> = meta
        .get("outputs")
        .map(|s| s.split(',').map(|x| x.to_string()).collect())
        .unwrap_or_default();
    if let Some(v) = meta.get("code_version") {
        if v != env!("CARGO_PKG_VERSION") {
            log::warn!(
                "manifest was produced by version {v}, this binary is {}",
                env!("CARGO_PKG_VERSION")
            );
        }
    }
    let original_dir = manifest_path
        .parent()
        .ok_or_else(|| anyhow!("manifest has no parent directory"))?;
    let replay_dir = match target {
        Some(t) => t.to_path_buf(),
        None => original_dir.join("reproduce_check"),
    };
    let mut replay_cfg = cfg.clone();
    replay_cfg.out = replay_dir.clone();
    let result = run(&replay_cfg, true)?;

    let mut mismatches = Vec::new();
    for name in &outputs {
        let a = std::fs::read(original_dir.join(name))
            .with_context(|| format!("reading original {name}"))?;
        let b = std::fs::read(replay_dir.join(name))
            .with_context(|| format!("reading replayed {name}"))?;
        if a == b {
            println!("reproduce: {name} OK");
        } else {
            println!("reproduce: {name} MISMATCH");
            mismatches.push(name.clone());
        }
    }
    if !mismatches.is_empty() {
        bail!("replay diverged on {} file(s): {}", mismatches.len(), mismatches.join(", "));
    }
    Ok(result)
}
