//! Comparison unlearning procedures.

use serde::{Deserialize, Serialize};

use crate::classifier::{self, ClassifierState, TrainConfig};
use crate::data::UnlearningRequest;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BaselineSpec {
    /// The original model, untouched.
    PretrainNoop,
    /// Fresh model trained on the retain set.
    RetrainOracle,
    /// Gradient ascent on the task loss of the support set.
    NegGradSupport { steps: usize, step_size: f64 },
}

impl BaselineSpec {
    pub fn name(&self) -> &'static str {
        match self {
            BaselineSpec::PretrainNoop => "pretrain",
            BaselineSpec::RetrainOracle => "retrain",
            BaselineSpec::NegGradSupport { .. } => "neg-grad",
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let BaselineSpec::NegGradSupport { steps, step_size } = *self {
            if steps == 0 {
                return Err(Error::Config("neg-grad needs at least one step".into()));
            }
            if !(step_size.is_finite() && step_size > 0.0) {
                return Err(Error::Config(format!("neg-grad step size {step_size} must be positive")));
            }
        }
        Ok(())
    }
}

/// `steps` full-batch ascent updates on `L_task(S)`.
pub fn neg_grad_support(
    classifier: &ClassifierState,
    request: &UnlearningRequest,
    steps: usize,
    step_size: f64,
) -> Result<ClassifierState> {
    let support = request.support().to_batch();
    if support.is_empty() {
        return Err(Error::Request("support set is empty".into()));
    }
    let mut state = classifier.clone();
    for step in 0..steps {
        let (loss, grad) = state.loss_and_grad(&support)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged { epoch: 0, step, loss });
        }
        for (p, g) in state.params.iter_mut().zip(&grad) {
            *p += step_size * g;
        }
    }
    Ok(state)
}

pub fn run_baseline(
    spec: &BaselineSpec,
    classifier: &ClassifierState,
    request: &UnlearningRequest,
    cfg: &TrainConfig,
) -> Result<ClassifierState> {
    spec.validate()?;
    match *spec {
        BaselineSpec::PretrainNoop => Ok(classifier.clone()),
        BaselineSpec::RetrainOracle => classifier::retrain_oracle(&classifier.arch, request, cfg),
        BaselineSpec::NegGradSupport { steps, step_size } => neg_grad_support(classifier, request, steps, step_size),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::Architecture;
    use crate::data::{
        build_unlearning_request, generate_dataset, split_by_identity, AccessLog, DataRole, GeneratorConfig, TaskKind,
    };

    fn setup() -> (ClassifierState, UnlearningRequest) {
        let gen = GeneratorConfig {
            num_identities: 20,
            samples_per_identity: 4,
            feature_dim: 5,
            num_classes: 3,
            ..Default::default()
        };
        let ds = generate_dataset(&gen, 1).unwrap();
        let bundle = split_by_identity(&ds, [0.8, 0.1, 0.1], 1).unwrap();
        let (req, _) = build_unlearning_request(&bundle, 3, 1).unwrap();
        let arch = Architecture::new(5, vec![8, 6], 3, TaskKind::MultiLabel).unwrap();
        (ClassifierState::init(arch, 4), req)
    }

    #[test]
    fn noop_is_bit_identical() {
        let (clf, req) = setup();
        let out = run_baseline(&BaselineSpec::PretrainNoop, &clf, &req, &TrainConfig::default()).unwrap();
        assert_eq!(out.params, clf.params);
    }

    #[test]
    fn ascent_increases_support_loss() {
        let (clf, req) = setup();
        let s = req.support().to_batch();
        let spec = BaselineSpec::NegGradSupport { steps: 1, step_size: 1e-4 };
        let out = run_baseline(&spec, &clf, &req, &TrainConfig::default()).unwrap();
        assert!(out.loss(&s).unwrap() > clf.loss(&s).unwrap());
    }

    #[test]
    fn retrain_delegates_exactly() {
        let (clf, req) = setup();
        let cfg = TrainConfig { epochs: 2, ..Default::default() };
        let a = run_baseline(&BaselineSpec::RetrainOracle, &clf, &req, &cfg).unwrap();
        let b = classifier::retrain_oracle(&clf.arch, &req, &cfg).unwrap();
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn support_only_baselines_read_only_support() {
        let (clf, mut req) = setup();
        let log = AccessLog::new();
        req.attach_access_log(log.clone());
        let spec = BaselineSpec::NegGradSupport { steps: 3, step_size: 0.01 };
        run_baseline(&spec, &clf, &req, &TrainConfig::default()).unwrap();
        run_baseline(&BaselineSpec::PretrainNoop, &clf, &req, &TrainConfig::default()).unwrap();
        assert_eq!(log.entries(), vec![DataRole::Support]);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(BaselineSpec::NegGradSupport { steps: 0, step_size: 0.1 }.validate().is_err());
        assert!(BaselineSpec::NegGradSupport { steps: 1, step_size: 0.0 }.validate().is_err());
    }
}
