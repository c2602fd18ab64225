use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::pipeline::{self, EvalContext, SeedManifest, SeedStatus, StageRecord, StageRunner};
use super::report::{aligned_table, mean_std};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metaunlearn::{self, AuxLossConfig, AuxTerms, InputToggles, MetaTrainConfig, RegressionKernel};
use crate::persist;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Axis {
    AuxLoss,
    Inputs,
    RequestSize,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::AuxLoss => "aux-loss",
            Axis::Inputs => "inputs",
            Axis::RequestSize => "request-size",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub axis: Axis,
    pub variant: String,
    pub train_n_s: usize,
    pub eval_n_s: usize,
    pub seed: u64,
    pub tow: f64,
    pub loss_gap: f64,
}

/// The auxiliary-loss variants: each term alone and together, with and
/// without accuracy scaling, plus the smooth-L1 kernel on the full objective.
pub fn aux_variants() -> Vec<AuxLossConfig> {
    let sq = RegressionKernel::Squared;
    let mut v = Vec::new();
    for terms in [AuxTerms::First, AuxTerms::Second, AuxTerms::Both] {
        for accuracy_scaling in [false, true] {
            v.push(AuxLossConfig { terms, accuracy_scaling, kernel: sq });
        }
    }
    v.push(AuxLossConfig { terms: AuxTerms::Both, accuracy_scaling: true, kernel: RegressionKernel::SmoothL1 });
    v
}

pub fn input_variants() -> Vec<InputToggles> {
    vec![InputToggles::LOGITS, InputToggles::LOGITS_FEATURES, InputToggles::LOGITS_FEATURES_IDS, InputToggles::ALL]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AxisSelection {
    pub aux: bool,
    pub inputs: bool,
    pub sizes: bool,
}

impl AxisSelection {
    pub const ALL: Self = Self { aux: true, inputs: true, sizes: true };
}

#[derive(Debug, Clone, Default)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    pub failures: Vec<(u64, String, String)>,
}

impl AblationReport {
    pub fn rows_for(&self, axis: Axis) -> impl Iterator<Item = &AblationRow> {
        self.rows.iter().filter(move |r| r.axis == axis)
    }

    /// Mean ToW over seeds for one cell.
    pub fn mean_tow(&self, axis: Axis, variant: &str, train_n_s: usize, eval_n_s: usize) -> Option<f64> {
        let v: Vec<f64> = self
            .rows_for(axis)
            .filter(|r| r.variant == variant && r.train_n_s == train_n_s && r.eval_n_s == eval_n_s)
            .map(|r| r.tow)
            .collect();
        mean_std(&v).map(|(m, _)| m)
    }

    /// Distinct (variant, train size, eval size) cells of an axis, in first-seen order.
    pub fn cells(&self, axis: Axis) -> Vec<(String, usize, usize)> {
        let mut out: Vec<(String, usize, usize)> = Vec::new();
        for r in self.rows_for(axis) {
            let key = (r.variant.clone(), r.train_n_s, r.eval_n_s);
            if !out.contains(&key) {
                out.push(key);
            }
        }
        out
    }

    pub fn to_csv(&self, axis: Axis) -> String {
        let mut out = String::from("variant,train_n_s,eval_n_s,seed,tow,loss_gap\n");
        for r in self.rows_for(axis) {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.variant, r.train_n_s, r.eval_n_s, r.seed, r.tow, r.loss_gap
            ));
        }
        out
    }

    pub fn to_markdown(&self, axis: Axis) -> String {
        let rows: Vec<Vec<String>> = self
            .cells(axis)
            .into_iter()
            .map(|(variant, t, e)| {
                let tows: Vec<f64> = self
                    .rows_for(axis)
                    .filter(|r| r.variant == variant && r.train_n_s == t && r.eval_n_s == e)
                    .map(|r| r.tow * 100.0)
                    .collect();
                let (m, s) = mean_std(&tows).unwrap_or((f64::NAN, f64::NAN));
                vec![variant, t.to_string(), e.to_string(), format!("{m:.2} ± {s:.2}"), tows.len().to_string()]
            })
            .collect();
        let mut out = aligned_table(&["variant", "train n_s", "eval n_s", "ToW", "seeds"], &rows);
        for (seed, stage, error) in &self.failures {
            out.push_str(&format!("seed {seed} failed at {stage}: {error}\n"));
        }
        out
    }
}

fn slug(s: &str) -> String {
    s.replace('+', "-")
}

fn one_seed(
    cfg: &ExperimentConfig,
    dataset: &Dataset,
    seed: u64,
    axes: AxisSelection,
    runner: &mut StageRunner,
) -> Result<Vec<AblationRow>> {
    let dir = PathBuf::from(format!("seed-{seed}"));
    let mut rows = Vec::new();
    let cell = |runner: &mut StageRunner,
                axis: Axis,
                variant: String,
                meta_cfg: MetaTrainConfig,
                train_n_s: usize,
                eval_n_s: usize,
                setup_dir: &Path|
     -> Result<AblationRow> {
        let setup = pipeline::setup_seed(cfg, dataset, seed, eval_n_s, runner, setup_dir)?;
        let pre = pipeline::pretrain(cfg, &setup, runner, &setup_dir.join("pretrain.json"))?;
        let re = pipeline::retrain(cfg, &setup, runner, &setup_dir.join("retrain.json"))?;
        let tag = format!("{}-{}-{}x{}", axis.name(), slug(&variant), train_n_s, eval_n_s);
        let rel = dir.join("ablation").join(format!("{tag}.json"));
        let meta =
            pipeline::train_metaloss(&meta_cfg, &setup, &pre, train_n_s, runner, &format!("metaloss-{tag}"), &rel)?;
        runner.current = format!("evaluate-{tag}");
        let model = metaunlearn::apply_to_request(&pre, &meta, &setup.request)?;
        let ctx = EvalContext { setup: &setup, pretrain: &pre, retrain: &re, cfg };
        let ev = pipeline::evaluate_method(&ctx, pipeline::METAUNLEARN, &model, None, false)?;
        Ok(AblationRow {
            axis,
            variant,
            train_n_s,
            eval_n_s,
            seed,
            tow: ev.report.tow.expect("non-reference method has ToW"),
            loss_gap: ev.report.loss_gap(),
        })
    };
    if axes.aux {
        for aux in aux_variants() {
            let mc = MetaTrainConfig { aux, ..cfg.metaloss.clone() };
            rows.push(cell(runner, Axis::AuxLoss, aux.label(), mc, cfg.n_s, cfg.n_s, &dir)?);
        }
    }
    if axes.inputs {
        for inputs in input_variants() {
            let mc = MetaTrainConfig { inputs, ..cfg.metaloss.clone() };
            rows.push(cell(runner, Axis::Inputs, inputs.label(), mc, cfg.n_s, cfg.n_s, &dir)?);
        }
    }
    if axes.sizes {
        for &eval in &cfg.ablation.sizes {
            // The base request size shares the main pipeline's artifacts.
            let setup_dir = if eval == cfg.n_s { dir.clone() } else { dir.join(format!("n_s-{eval}")) };
            for &train in &cfg.ablation.sizes {
                let variant = if train == eval { "matched" } else { "mismatched" };
                rows.push(cell(
                    runner,
                    Axis::RequestSize,
                    variant.into(),
                    cfg.metaloss.clone(),
                    train,
                    eval,
                    &setup_dir,
                )?);
            }
        }
    }
    Ok(rows)
}

fn previous_records(cfg: &ExperimentConfig, seed: u64) -> Vec<StageRecord> {
    let mut out = Vec::new();
    for name in ["manifest.json", "ablation-manifest.json"] {
        let path = cfg.out_dir.join(format!("seed-{seed}")).join(name);
        if let Ok(m) = persist::read_json::<SeedManifest>(&path) {
            if m.config_hash == cfg.hash() {
                out.extend(m.stages);
            }
        }
    }
    out
}

/// Meta-train / unlearn / evaluate over the selected axes for every seed and
/// writes one CSV and one text table per axis under `ablation/`.
pub fn run_ablations(cfg: &ExperimentConfig, axes: AxisSelection) -> Result<AblationReport> {
    cfg.validate()?;
    if axes.sizes && cfg.ablation.sizes.len() < 2 {
        return Err(Error::Config("the request-size axis needs at least two sizes".into()));
    }
    let (dataset, _) = pipeline::dataset_stage(cfg)?;
    let per_seed: Vec<(u64, Result<Vec<AblationRow>>, String)> = std::thread::scope(|scope| {
        let handles: Vec<_> = cfg
            .seeds
            .iter()
            .map(|&seed| {
                let dataset = &dataset;
                scope.spawn(move || {
                    let mut runner = StageRunner::new(&cfg.out_dir, &previous_records(cfg, seed));
                    let rows = one_seed(cfg, dataset, seed, axes, &mut runner);
                    let status = match &rows {
                        Ok(_) => SeedStatus::Completed,
                        Err(e) => SeedStatus::Failed { stage: runner.current.clone(), error: e.to_string() },
                    };
                    let manifest =
                        SeedManifest { seed, config_hash: cfg.hash(), status, stages: runner.records.clone() };
                    let path = cfg.out_dir.join(format!("seed-{seed}")).join("ablation-manifest.json");
                    if let Err(e) = persist::write_json(&path, &manifest) {
                        log::error!("could not write ablation manifest for seed {seed}: {e}");
                    }
                    (seed, rows, runner.current.clone())
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("ablation worker panicked")).collect()
    });
    let mut report = AblationReport::default();
    for (seed, rows, stage) in per_seed {
        match rows {
            Ok(r) => report.rows.extend(r),
            Err(e) => {
                log::error!("ablation seed {seed} failed at {stage}: {e}");
                report.failures.push((seed, stage, e.to_string()));
            }
        }
    }
    let dir = cfg.out_dir.join("ablation");
    for (axis, on) in [(Axis::AuxLoss, axes.aux), (Axis::Inputs, axes.inputs), (Axis::RequestSize, axes.sizes)] {
        if on {
            persist::write_text(&dir.join(format!("{}.csv", axis.name())), &report.to_csv(axis))?;
            persist::write_text(&dir.join(format!("{}.md", axis.name())), &report.to_markdown(axis))?;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_sizes() {
        assert_eq!(aux_variants().len(), 7);
        assert_eq!(input_variants().len(), 4);
        let labels: Vec<String> = aux_variants().iter().map(|a| a.label()).collect();
        assert!(labels.contains(&"first".to_string()));
        assert!(labels.contains(&"first+second+accuracy".to_string()));
        let mut dedup = labels.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), 7);
    }
}
