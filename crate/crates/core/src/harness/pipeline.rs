use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{stage_seed, ExperimentConfig};
use super::report::{self, MethodResult, Summary};
use crate::baselines::{self, BaselineSpec};
use crate::classifier::{self, ClassifierState, TrainConfig};
use crate::data::{self, Dataset, SplitBundle, UnlearningRequest};
use crate::error::{Error, Result};
use crate::evaluation::{self, BinRow, EvalReport, IdentityDiagnostic, PerfTriple};
use crate::metaunlearn::{self, MetaLossState, MetaTrainConfig};
use crate::persist;

pub const METAUNLEARN: &str = "metaunlearn";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    /// Relative to the output directory.
    pub artifact: PathBuf,
    pub sha256: String,
    pub seconds: f64,
    pub reused: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum SeedStatus {
    Completed,
    Failed { stage: String, error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedManifest {
    pub seed: u64,
    pub config_hash: String,
    pub status: SeedStatus,
    pub stages: Vec<StageRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub dataset: StageRecord,
    pub seeds: Vec<SeedManifest>,
    pub summary_csv: PathBuf,
    pub summary_md: PathBuf,
}

impl RunManifest {
    pub fn all_completed(&self) -> bool {
        self.seeds.iter().all(|s| s.status == SeedStatus::Completed)
    }

    /// Checks that every recorded artifact exists and still hashes to its
    /// recorded digest.
    pub fn verify(&self, out_dir: &Path) -> Result<()> {
        let records = std::iter::once(&self.dataset).chain(self.seeds.iter().flat_map(|s| &s.stages));
        for r in records {
            let path = out_dir.join(&r.artifact);
            if persist::sha256_file(&path)? != r.sha256 {
                return Err(Error::ArtifactMismatch { path });
            }
        }
        Ok(())
    }
}

/// Executes named stages, reusing an artifact when a previous manifest for
/// the same config recorded it and its hash still verifies.
pub struct StageRunner {
    out_dir: PathBuf,
    previous: BTreeMap<String, StageRecord>,
    pub records: Vec<StageRecord>,
    pub current: String,
}

impl StageRunner {
    pub fn new(out_dir: &Path, previous: &[StageRecord]) -> Self {
        Self {
            out_dir: out_dir.to_path_buf(),
            previous: previous.iter().map(|r| (r.stage.clone(), r.clone())).collect(),
            records: Vec::new(),
            current: String::new(),
        }
    }

    fn reusable(&self, stage: &str, rel: &Path) -> bool {
        let Some(prev) = self.previous.get(stage) else { return false };
        prev.artifact == rel && matches!(persist::sha256_file(&self.out_dir.join(rel)), Ok(h) if h == prev.sha256)
    }

    fn push(&mut self, stage: &str, rel: &Path, seconds: f64, reused: bool) -> Result<()> {
        let sha256 = persist::sha256_file(&self.out_dir.join(rel))?;
        self.records.retain(|r| r.stage != stage);
        self.records.push(StageRecord { stage: stage.into(), artifact: rel.to_path_buf(), sha256, seconds, reused });
        Ok(())
    }

    /// Runs `compute` unless a verified artifact can be loaded instead.
    pub fn cached<T>(
        &mut self,
        stage: &str,
        rel: impl AsRef<Path>,
        compute: impl FnOnce() -> Result<T>,
        save: impl Fn(&T, &Path) -> Result<()>,
        load: impl Fn(&Path) -> Result<T>,
    ) -> Result<T> {
        let rel = rel.as_ref();
        self.current = stage.into();
        let path = self.out_dir.join(rel);
        if self.reusable(stage, rel) {
            match load(&path) {
                Ok(v) => {
                    log::info!("{stage}: reusing {}", path.display());
                    self.push(stage, rel, 0.0, true)?;
                    return Ok(v);
                }
                Err(e) => log::warn!("{stage}: cached artifact unreadable ({e}); recomputing"),
            }
        }
        let t = Instant::now();
        let v = compute()?;
        save(&v, &path)?;
        self.push(stage, rel, t.elapsed().as_secs_f64(), false)?;
        Ok(v)
    }

    /// Always runs `compute`; records the artifact it wrote.
    pub fn fresh<T>(
        &mut self,
        stage: &str,
        rel: impl AsRef<Path>,
        compute: impl FnOnce(&Path) -> Result<T>,
    ) -> Result<T> {
        let rel = rel.as_ref();
        self.current = stage.into();
        let t = Instant::now();
        let v = compute(&self.out_dir.join(rel))?;
        self.push(stage, rel, t.elapsed().as_secs_f64(), false)?;
        Ok(v)
    }
}

/// How far a single-seed run proceeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Split,
    Pretrain,
    Retrain,
    MetaLoss,
    Unlearn,
    Evaluate,
}

/// Shared inputs of one seed after the request has been carved.
#[derive(Debug, Clone)]
pub struct SeedSetup {
    pub seed: u64,
    pub bundle: SplitBundle,
    pub request: UnlearningRequest,
    /// Training split with the support samples withheld.
    pub train: Dataset,
    pub train_cfg: TrainConfig,
}

/// Stage identifier of a path-addressed artifact.
fn stage_name(rel: &Path) -> String {
    rel.with_extension("").to_string_lossy().replace('\\', "/")
}

fn seed_dir(seed: u64) -> PathBuf {
    PathBuf::from(format!("seed-{seed}"))
}

pub fn load_or_generate_dataset(cfg: &ExperimentConfig, runner: &mut StageRunner) -> Result<Dataset> {
    runner.cached(
        "dataset",
        "dataset.json",
        || data::generate_dataset(&cfg.generator, cfg.data_seed),
        |d, p| d.save(p),
        Dataset::load,
    )
}

/// Split and request for a run seed, with request size `n_s`.
pub fn setup_seed(
    cfg: &ExperimentConfig,
    dataset: &Dataset,
    seed: u64,
    n_s: usize,
    runner: &mut StageRunner,
    prefix: &Path,
) -> Result<SeedSetup> {
    let split_rel = prefix.join("split.json");
    let bundle = runner.fresh(&stage_name(&split_rel), &split_rel, |p| {
        let b = data::split_by_identity(dataset, cfg.split, stage_seed(seed, "split"))?;
        data::save_split(&b, p)?;
        Ok(b)
    })?;
    let request_rel = prefix.join(format!("request-{n_s}.json"));
    let (request, train) = runner.fresh(&stage_name(&request_rel), &request_rel, |p| {
        let (r, t) = data::build_unlearning_request(&bundle, n_s, stage_seed(seed, "request"))?;
        data::save_request(&r, p)?;
        Ok((r, t))
    })?;
    let train_cfg = TrainConfig { seed: stage_seed(seed, "classifier"), ..cfg.train.clone() };
    Ok(SeedSetup { seed, bundle, request, train, train_cfg })
}

pub fn pretrain(
    cfg: &ExperimentConfig,
    setup: &SeedSetup,
    runner: &mut StageRunner,
    rel: &Path,
) -> Result<ClassifierState> {
    let arch = cfg.architecture()?;
    runner.cached(
        &stage_name(rel),
        rel,
        || classifier::train(&ClassifierState::init(arch, setup.train_cfg.seed), &setup.train, &setup.train_cfg),
        |m, p| m.save(p),
        ClassifierState::load,
    )
}

pub fn retrain(
    cfg: &ExperimentConfig,
    setup: &SeedSetup,
    runner: &mut StageRunner,
    rel: &Path,
) -> Result<ClassifierState> {
    let arch = cfg.architecture()?;
    runner.cached(
        &stage_name(rel),
        rel,
        || classifier::retrain_oracle(&arch, &setup.request, &setup.train_cfg),
        |m, p| m.save(p),
        ClassifierState::load,
    )
}

#[allow(clippy::too_many_arguments)]
pub fn train_metaloss(
    meta_cfg: &MetaTrainConfig,
    setup: &SeedSetup,
    original: &ClassifierState,
    n_s: usize,
    runner: &mut StageRunner,
    stage: &str,
    rel: &Path,
) -> Result<MetaLossState> {
    let cfg = MetaTrainConfig { seed: stage_seed(setup.seed, "metaloss"), ..meta_cfg.clone() };
    let log_path = runner.out_dir.join(rel.with_extension("log.json"));
    runner.cached(
        stage,
        rel,
        || {
            let out = metaunlearn::meta_train(original, &setup.train, &setup.bundle.validation, n_s, &cfg)?;
            persist::write_json(&log_path, &out.log)?;
            Ok(out.state)
        },
        |m, p| m.save(p),
        MetaLossState::load,
    )
}

/// Everything the evaluation of one method needs besides the method itself.
pub struct EvalContext<'a> {
    pub setup: &'a SeedSetup,
    pub pretrain: &'a ClassifierState,
    pub retrain: &'a ClassifierState,
    pub cfg: &'a ExperimentConfig,
}

pub struct Evaluated {
    pub report: EvalReport,
    pub hardness: Vec<BinRow>,
    pub drop: Vec<BinRow>,
}

/// Scores `model`; `reference` is the same method applied to the retrained
/// model and enables the membership attack.
pub fn evaluate_method(
    ctx: &EvalContext,
    method: &str,
    model: &ClassifierState,
    reference: Option<&ClassifierState>,
    with_analyses: bool,
) -> Result<Evaluated> {
    let request = &ctx.setup.request;
    let test = &ctx.setup.bundle.test;
    let validation = &ctx.setup.bundle.validation;
    let triple = |m: &ClassifierState| -> Result<PerfTriple> {
        Ok(PerfTriple {
            retain: evaluation::performance_score(m, request.retain_set())?,
            forget: evaluation::performance_score(m, request.forget_set())?,
            test: evaluation::performance_score(m, test)?,
        })
    };
    let perf = triple(model)?;
    let is_reference = method == "retrain";
    let tow = if is_reference { None } else { Some(evaluation::tow(&perf, &triple(ctx.retrain)?)?) };
    let mia_tpr = match reference {
        Some(r) if !is_reference => {
            Some(evaluation::mia_attack(model, r, request.forget_set(), test, validation, &ctx.cfg.mia)?.tpr)
        }
        _ => None,
    };
    let (hardness, drop, per_identity) = if with_analyses {
        let points = evaluation::hardness_points(model, ctx.retrain, request, ctx.pretrain)?;
        let per_identity = points
            .iter()
            .map(|p| IdentityDiagnostic { identity: p.identity, perf_diff: p.gap, support_distance: p.distance })
            .collect();
        let hardness = evaluation::bin_points(&points, ctx.cfg.analysis_bins)?;
        let drop = evaluation::drop_analysis(model, ctx.pretrain, request, ctx.pretrain, ctx.cfg.analysis_bins)?;
        (hardness, drop, per_identity)
    } else {
        (Vec::new(), Vec::new(), Vec::new())
    };
    let report = EvalReport {
        method: method.into(),
        seed: ctx.setup.seed,
        perf_r: perf.retain,
        perf_f: perf.forget,
        perf_te: perf.test,
        tow,
        mia_tpr,
        forget_loss: model.loss(&request.forget_set().to_batch())?,
        validation_loss: model.loss(&validation.to_batch())?,
        per_identity,
    };
    Ok(Evaluated { report, hardness, drop })
}

/// Methods in report order: the two reference rows, extra baselines, MetaUnlearn.
pub fn method_list(cfg: &ExperimentConfig) -> Vec<(String, Option<BaselineSpec>)> {
    let mut out: Vec<(String, Option<BaselineSpec>)> = vec![
        ("pretrain".into(), Some(BaselineSpec::PretrainNoop)),
        ("retrain".into(), Some(BaselineSpec::RetrainOracle)),
    ];
    for b in &cfg.baselines {
        if out.iter().all(|(n, _)| n != b.name()) {
            out.push((b.name().into(), Some(b.clone())));
        }
    }
    out.push((METAUNLEARN.into(), None));
    out
}

/// Per-seed outputs of [`run_seed`].
pub struct SeedOutcome {
    pub results: Vec<MethodResult>,
}

/// Runs one seed up to and including `until`, restricted to `method` when given.
pub fn run_seed(
    cfg: &ExperimentConfig,
    dataset: &Dataset,
    seed: u64,
    until: Stage,
    method: Option<&str>,
    runner: &mut StageRunner,
) -> Result<SeedOutcome> {
    let dir = seed_dir(seed);
    let setup = setup_seed(cfg, dataset, seed, cfg.n_s, runner, &dir)?;
    if until == Stage::Split {
        return Ok(SeedOutcome { results: Vec::new() });
    }
    let pre = pretrain(cfg, &setup, runner, &dir.join("pretrain.json"))?;
    if until == Stage::Pretrain {
        return Ok(SeedOutcome { results: Vec::new() });
    }
    let re = retrain(cfg, &setup, runner, &dir.join("retrain.json"))?;
    if until == Stage::Retrain {
        return Ok(SeedOutcome { results: Vec::new() });
    }
    let methods: Vec<_> = method_list(cfg).into_iter().filter(|(n, _)| method.is_none_or(|m| m == n)).collect();
    if methods.is_empty() {
        return Err(Error::Config(format!("unknown method {:?}", method.unwrap_or_default())));
    }
    let needs_meta = methods.iter().any(|(n, _)| n == METAUNLEARN);
    let meta = if needs_meta {
        Some(train_metaloss(&cfg.metaloss, &setup, &pre, cfg.n_s, runner, "metaloss", &dir.join("metaloss.json"))?)
    } else {
        None
    };
    if until == Stage::MetaLoss {
        return Ok(SeedOutcome { results: Vec::new() });
    }
    let mut models = Vec::new();
    for (name, spec) in &methods {
        let model_rel = dir.join("models").join(format!("{name}.json"));
        let ref_rel = dir.join("models").join(format!("{name}-reference.json"));
        let (model, reference) = match (name.as_str(), spec) {
            ("pretrain", _) => (pre.clone(), Some(re.clone())),
            ("retrain", _) => (re.clone(), None),
            (_, Some(spec)) => {
                let m = runner.cached(
                    &format!("unlearn-{name}"),
                    &model_rel,
                    || baselines::run_baseline(spec, &pre, &setup.request, &setup.train_cfg),
                    |m, p| m.save(p),
                    ClassifierState::load,
                )?;
                let r = runner.cached(
                    &format!("reference-{name}"),
                    &ref_rel,
                    || baselines::run_baseline(spec, &re, &setup.request, &setup.train_cfg),
                    |m, p| m.save(p),
                    ClassifierState::load,
                )?;
                (m, Some(r))
            }
            (_, None) => {
                let meta = meta.as_ref().expect("meta-loss trained above");
                let m = runner.cached(
                    "unlearn-metaunlearn",
                    &model_rel,
                    || metaunlearn::apply_to_request(&pre, meta, &setup.request),
                    |m, p| m.save(p),
                    ClassifierState::load,
                )?;
                let r = runner.cached(
                    "reference-metaunlearn",
                    &ref_rel,
                    || metaunlearn::apply_to_request(&re, meta, &setup.request),
                    |m, p| m.save(p),
                    ClassifierState::load,
                )?;
                (m, Some(r))
            }
        };
        models.push((name.clone(), model, reference));
    }
    if until == Stage::Unlearn {
        return Ok(SeedOutcome { results: Vec::new() });
    }
    let ctx = EvalContext { setup: &setup, pretrain: &pre, retrain: &re, cfg };
    let mut results = Vec::new();
    for (name, model, reference) in &models {
        runner.current = format!("evaluate-{name}");
        let ev = evaluate_method(&ctx, name, model, reference.as_ref(), true)?;
        let reports = dir.join("reports");
        runner.fresh(&format!("report-{name}"), reports.join(format!("{name}_identities.csv")), |p| {
            persist::write_text(p, &report::per_identity_csv(&ev.report))
        })?;
        runner.fresh(&format!("hardness-{name}"), reports.join(format!("{name}_hardness.csv")), |p| {
            persist::write_text(p, &report::bins_csv(&ev.hardness))
        })?;
        runner.fresh(&format!("drop-{name}"), reports.join(format!("{name}_drop.csv")), |p| {
            persist::write_text(p, &report::bins_csv(&ev.drop))
        })?;
        results.push(MethodResult { report: ev.report, hardness: ev.hardness, drop: ev.drop });
    }
    let all: Vec<EvalReport> = results.iter().map(|r| r.report.clone()).collect();
    runner.fresh("eval", dir.join("reports").join("eval.csv"), |p| persist::write_text(p, &report::eval_csv(&all)))?;
    Ok(SeedOutcome { results })
}

fn previous_seed_manifest(cfg: &ExperimentConfig, seed: u64, name: &str) -> Vec<StageRecord> {
    let path = cfg.out_dir.join(seed_dir(seed)).join(name);
    match persist::read_json::<SeedManifest>(&path) {
        Ok(m) if m.config_hash == cfg.hash() => m.stages,
        _ => Vec::new(),
    }
}

fn previous_dataset_record(cfg: &ExperimentConfig) -> Vec<StageRecord> {
    match persist::read_json::<StageRecord>(&cfg.out_dir.join("dataset.manifest.json")) {
        Ok(r) => {
            let hash_path = cfg.out_dir.join("dataset.config-hash");
            match std::fs::read_to_string(hash_path) {
                Ok(h) if h.trim() == cfg.hash() => vec![r],
                _ => Vec::new(),
            }
        }
        Err(_) => Vec::new(),
    }
}

/// Generates (or reuses) the dataset shared by every seed.
pub fn dataset_stage(cfg: &ExperimentConfig) -> Result<(Dataset, StageRecord)> {
    let mut runner = StageRunner::new(&cfg.out_dir, &previous_dataset_record(cfg));
    let ds = load_or_generate_dataset(cfg, &mut runner)?;
    let record = runner.records.pop().expect("dataset stage recorded");
    persist::write_json(&cfg.out_dir.join("dataset.manifest.json"), &record)?;
    persist::write_text(&cfg.out_dir.join("dataset.config-hash"), &cfg.hash())?;
    Ok((ds, record))
}

/// Runs a single seed with resumable artifacts and writes its manifest.
pub fn run_single_seed(
    cfg: &ExperimentConfig,
    dataset: &Dataset,
    seed: u64,
    until: Stage,
    method: Option<&str>,
) -> (SeedManifest, Option<SeedOutcome>) {
    let previous = previous_seed_manifest(cfg, seed, "manifest.json");
    let mut runner = StageRunner::new(&cfg.out_dir, &previous);
    // Keep earlier records for stages this invocation does not touch.
    let outcome = run_seed(cfg, dataset, seed, until, method, &mut runner);
    let mut stages = runner.records.clone();
    for p in previous {
        if stages.iter().all(|r| r.stage != p.stage) && cfg.out_dir.join(&p.artifact).exists() {
            stages.push(p);
        }
    }
    let (status, outcome) = match outcome {
        Ok(o) => (SeedStatus::Completed, Some(o)),
        Err(e) => {
            log::error!("seed {seed} failed at stage {}: {e}", runner.current);
            (SeedStatus::Failed { stage: runner.current.clone(), error: e.to_string() }, None)
        }
    };
    let manifest = SeedManifest { seed, config_hash: cfg.hash(), status, stages };
    if let Err(e) = persist::write_json(&cfg.out_dir.join(seed_dir(seed)).join("manifest.json"), &manifest) {
        log::error!("could not write manifest for seed {seed}: {e}");
    }
    (manifest, outcome)
}

/// Full experiment: every seed end to end, then the cross-seed summary.
pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<RunManifest> {
    cfg.validate()?;
    let (dataset, dataset_record) = dataset_stage(cfg)?;
    let per_seed: Vec<(SeedManifest, Option<SeedOutcome>)> = std::thread::scope(|scope| {
        let handles: Vec<_> = cfg
            .seeds
            .iter()
            .map(|&seed| {
                let dataset = &dataset;
                scope.spawn(move || run_single_seed(cfg, dataset, seed, Stage::Evaluate, None))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("seed worker panicked")).collect()
    });
    let mut summary = Summary::default();
    let mut seeds = Vec::new();
    for (manifest, outcome) in per_seed {
        match (&manifest.status, outcome) {
            (SeedStatus::Completed, Some(o)) => summary.add_seed(o.results.into_iter().map(|r| r.report).collect()),
            (SeedStatus::Failed { stage, error }, _) => summary.add_failure(manifest.seed, stage, error),
            _ => unreachable!("completed seeds carry an outcome"),
        }
        seeds.push(manifest);
    }
    let summary_csv = PathBuf::from("summary.csv");
    let summary_md = PathBuf::from("summary.md");
    persist::write_text(&cfg.out_dir.join(&summary_csv), &summary.to_csv())?;
    persist::write_text(&cfg.out_dir.join(&summary_md), &summary.to_markdown())?;
    let manifest = RunManifest { config_hash: cfg.hash(), dataset: dataset_record, seeds, summary_csv, summary_md };
    persist::write_json(&cfg.out_dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// Rebuilds the summary from the per-seed evaluation CSVs already on disk.
pub fn rebuild_summary(cfg: &ExperimentConfig) -> Result<Summary> {
    let mut summary = Summary::default();
    for &seed in &cfg.seeds {
        let manifest: Option<SeedManifest> =
            persist::read_json(&cfg.out_dir.join(seed_dir(seed)).join("manifest.json")).ok();
        match manifest.map(|m| m.status) {
            Some(SeedStatus::Completed) => {
                let path = cfg.out_dir.join(seed_dir(seed)).join("reports").join("eval.csv");
                let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                summary.add_seed(report::parse_eval_csv(&text, &path)?);
            }
            Some(SeedStatus::Failed { stage, error }) => summary.add_failure(seed, &stage, &error),
            None => summary.add_failure(seed, "missing", "no manifest for this seed"),
        }
    }
    persist::write_text(&cfg.out_dir.join("summary.csv"), &summary.to_csv())?;
    persist::write_text(&cfg.out_dir.join("summary.md"), &summary.to_markdown())?;
    Ok(summary)
}
