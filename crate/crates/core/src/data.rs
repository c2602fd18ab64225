//! Identity-structured synthetic data and benchmark construction.
//!
//! A dataset is a flat list of samples, each tagged with a dense identity key.
//! [`split_by_identity`] partitions identities (never samples) into
//! train/validation/test, and [`build_unlearning_request`] picks forget
//! identities, withholds one support sample for each of them and returns the
//! training set with the support samples removed.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::sync::{Arc, Mutex};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    MultiLabel,
    MultiClass,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskKind::MultiLabel => f.write_str("multi-label"),
            TaskKind::MultiClass => f.write_str("multi-class"),
        }
    }
}

/// Ground truth of one sample: attribute bits or a class index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Target {
    Attributes(Vec<u8>),
    Class(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub sample_id: u64,
    pub identity: u32,
    pub features: Vec<f64>,
    pub labels: Target,
}

impl Sample {
    /// Target as a dense row of length `num_classes` (one-hot for classes).
    pub fn target_row(&self, num_classes: usize) -> Vec<f64> {
        match &self.labels {
            Target::Attributes(bits) => bits.iter().map(|&b| f64::from(b)).collect(),
            Target::Class(c) => {
                let mut row = vec![0.0; num_classes];
                row[*c] = 1.0;
                row
            }
        }
    }
}

/// Shape information shared by every dataset derived from one generator run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataSchema {
    pub feature_dim: usize,
    pub num_classes: usize,
    pub task_kind: TaskKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: DataSchema,
    samples: Vec<Sample>,
    identity_index: BTreeMap<u32, Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct DatasetFile {
    feature_dim: usize,
    num_classes: usize,
    task_kind: TaskKind,
    samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(schema: DataSchema, samples: Vec<Sample>) -> Result<Self> {
        for s in &samples {
            validate_sample(&schema, s)?;
        }
        let mut identity_index: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (pos, s) in samples.iter().enumerate() {
            identity_index.entry(s.identity).or_default().push(pos);
        }
        Ok(Self { schema, samples, identity_index })
    }

    pub fn empty(schema: DataSchema) -> Self {
        Self { schema, samples: Vec::new(), identity_index: BTreeMap::new() }
    }

    pub fn schema(&self) -> DataSchema {
        self.schema
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn identity_index(&self) -> &BTreeMap<u32, Vec<usize>> {
        &self.identity_index
    }

    pub fn identities(&self) -> BTreeSet<u32> {
        self.identity_index.keys().copied().collect()
    }

    pub fn sample_ids(&self) -> BTreeSet<u64> {
        self.samples.iter().map(|s| s.sample_id).collect()
    }

    /// Samples of one identity, in dataset order.
    pub fn identity_samples(&self, identity: u32) -> Vec<&Sample> {
        self.identity_index
            .get(&identity)
            .map(|pos| pos.iter().map(|&p| &self.samples[p]).collect())
            .unwrap_or_default()
    }

    /// New dataset holding the samples whose identity satisfies `keep`.
    pub fn filter_identities(&self, keep: impl Fn(u32) -> bool) -> Dataset {
        let samples = self.samples.iter().filter(|s| keep(s.identity)).cloned().collect();
        Dataset::new(self.schema, samples).expect("subset of a valid dataset")
    }

    /// Checks the full-dataset invariant that every identity has at least two samples.
    pub fn ensure_min_samples_per_identity(&self, min: usize) -> Result<()> {
        for (id, pos) in &self.identity_index {
            if pos.len() < min {
                return Err(Error::Dataset(format!("identity {id} has {} samples, need at least {min}", pos.len())));
            }
        }
        Ok(())
    }

    /// Inputs, dense targets and identities as batch matrices.
    pub fn to_batch(&self) -> Batch {
        Batch::from_samples(self.schema, self.samples.iter())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = DatasetFile {
            feature_dim: self.schema.feature_dim,
            num_classes: self.schema.num_classes,
            task_kind: self.schema.task_kind,
            samples: self.samples.clone(),
        };
        crate::persist::write_json(path, &file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: DatasetFile = crate::persist::read_json(path)?;
        let schema =
            DataSchema { feature_dim: file.feature_dim, num_classes: file.num_classes, task_kind: file.task_kind };
        Dataset::new(schema, file.samples)
    }
}

fn validate_sample(schema: &DataSchema, s: &Sample) -> Result<()> {
    if s.features.len() != schema.feature_dim {
        return Err(Error::Dimension(format!(
            "sample {} has {} features, expected {}",
            s.sample_id,
            s.features.len(),
            schema.feature_dim
        )));
    }
    if s.features.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("features of sample {}", s.sample_id)));
    }
    match (&s.labels, schema.task_kind) {
        (Target::Attributes(bits), TaskKind::MultiLabel) => {
            if bits.len() != schema.num_classes || bits.iter().any(|&b| b > 1) {
                return Err(Error::Dataset(format!(
                    "sample {} needs {} binary labels",
                    s.sample_id, schema.num_classes
                )));
            }
        }
        (Target::Class(c), TaskKind::MultiClass) => {
            if *c >= schema.num_classes {
                return Err(Error::Dataset(format!("sample {} class {c} out of range", s.sample_id)));
            }
        }
        _ => {
            return Err(Error::Dataset(format!(
                "sample {} label kind does not match {}",
                s.sample_id, schema.task_kind
            )))
        }
    }
    Ok(())
}

/// Column-stacked view of a set of samples.
#[derive(Debug, Clone)]
pub struct Batch {
    pub task_kind: TaskKind,
    pub inputs: Matrix,
    pub targets: Matrix,
    pub identities: Vec<u32>,
}

impl Batch {
    pub fn from_samples<'a>(schema: DataSchema, samples: impl Iterator<Item = &'a Sample>) -> Self {
        let mut inputs = Vec::new();
        let mut targets = Vec::new();
        let mut identities = Vec::new();
        for s in samples {
            inputs.extend_from_slice(&s.features);
            targets.extend(s.target_row(schema.num_classes));
            identities.push(s.identity);
        }
        let n = identities.len();
        Batch {
            task_kind: schema.task_kind,
            inputs: Matrix::from_vec(n, schema.feature_dim, inputs),
            targets: Matrix::from_vec(n, schema.num_classes, targets),
            identities,
        }
    }

    pub fn len(&self) -> usize {
        self.identities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.identities.is_empty()
    }

    /// Rows at `positions`, in that order.
    pub fn select(&self, positions: &[usize]) -> Batch {
        Batch {
            task_kind: self.task_kind,
            inputs: self.inputs.select_rows(positions),
            targets: self.targets.select_rows(positions),
            identities: positions.iter().map(|&p| self.identities[p]).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub num_identities: usize,
    pub samples_per_identity: usize,
    pub feature_dim: usize,
    pub num_classes: usize,
    pub task_kind: TaskKind,
    /// Standard deviation of identity prototypes.
    pub prototype_scale: f64,
    /// Standard deviation of per-sample noise around the prototype.
    pub noise_scale: f64,
    /// Probability that a label bit (or class) is resampled per sample.
    pub label_resample_frac: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            num_identities: 200,
            samples_per_identity: 10,
            feature_dim: 16,
            num_classes: 8,
            task_kind: TaskKind::MultiLabel,
            prototype_scale: 1.0,
            noise_scale: 0.5,
            label_resample_frac: 0.1,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_identities < 4 {
            return Err(Error::Config("num_identities must be at least 4".into()));
        }
        if self.samples_per_identity < 2 {
            return Err(Error::Config(
                "samples_per_identity must be at least 2 (support sample plus forget sample)".into(),
            ));
        }
        if self.feature_dim < 2 {
            return Err(Error::Config("feature_dim must be at least 2".into()));
        }
        let min_classes = match self.task_kind {
            TaskKind::MultiLabel => 1,
            TaskKind::MultiClass => 2,
        };
        if self.num_classes < min_classes {
            return Err(Error::Config(format!("num_classes must be at least {min_classes} for {}", self.task_kind)));
        }
        for (name, v) in [("prototype_scale", self.prototype_scale), ("noise_scale", self.noise_scale)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.label_resample_frac) {
            return Err(Error::Config("label_resample_frac must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn schema(&self) -> DataSchema {
        DataSchema { feature_dim: self.feature_dim, num_classes: self.num_classes, task_kind: self.task_kind }
    }
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * scale
        })
        .collect()
}

/// Draws prototypes, a shared label map and noisy per-identity samples.
pub fn generate_dataset(config: &GeneratorConfig, seed: u64) -> Result<Dataset> {
    config.validate()?;
    let schema = config.schema();
    let (f, c) = (config.feature_dim, config.num_classes);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let label_map = normal_vec(&mut rng, c * f, 1.0);
    let project = |p: &[f64]| -> Vec<f64> {
        (0..c).map(|k| label_map[k * f..(k + 1) * f].iter().zip(p).map(|(w, x)| w * x).sum()).collect()
    };

    let mut samples = Vec::with_capacity(config.num_identities * config.samples_per_identity);
    for identity in 0..config.num_identities {
        let prototype = normal_vec(&mut rng, f, config.prototype_scale);
        let scores = project(&prototype);
        for j in 0..config.samples_per_identity {
            let noise = normal_vec(&mut rng, f, config.noise_scale);
            let features: Vec<f64> = prototype.iter().zip(&noise).map(|(p, e)| p + e).collect();
            let labels = match config.task_kind {
                TaskKind::MultiLabel => Target::Attributes(
                    scores
                        .iter()
                        .map(|&s| {
                            if rng.random::<f64>() < config.label_resample_frac {
                                u8::from(rng.random::<bool>())
                            } else {
                                u8::from(s > 0.0)
                            }
                        })
                        .collect(),
                ),
                TaskKind::MultiClass => {
                    let base = argmax(&scores);
                    if rng.random::<f64>() < config.label_resample_frac {
                        Target::Class(rng.random_range(0..c))
                    } else {
                        Target::Class(base)
                    }
                }
            };
            samples.push(Sample {
                sample_id: (identity * config.samples_per_identity + j) as u64,
                identity: identity as u32,
                features,
                labels,
            });
        }
    }
    let ds = Dataset::new(schema, samples)?;
    ds.ensure_min_samples_per_identity(2)?;
    Ok(ds)
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitBundle {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
    pub train_ids: BTreeSet<u32>,
    pub validation_ids: BTreeSet<u32>,
    pub test_ids: BTreeSet<u32>,
}

/// Largest-remainder apportionment of `total` items by `fractions`.
pub fn largest_remainder(total: usize, fractions: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = fractions.iter().map(|f| f * total as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    // Larger remainder first; ties go to the earlier split.
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.partial_cmp(&ra).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

pub fn split_by_identity(dataset: &Dataset, fractions: [f64; 3], seed: u64) -> Result<SplitBundle> {
    if fractions.iter().any(|f| !f.is_finite() || *f <= 0.0) {
        return Err(Error::EmptySplit(format!("split fractions must be positive, got {fractions:?}")));
    }
    let sum: f64 = fractions.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split fractions sum to {sum}, expected 1")));
    }
    let mut ids: Vec<u32> = dataset.identity_index().keys().copied().collect();
    let counts = largest_remainder(ids.len(), &fractions);
    for (name, n) in ["train", "validation", "test"].iter().zip(&counts) {
        if *n == 0 {
            return Err(Error::EmptySplit(format!("{name} split receives no identities")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let train_ids: BTreeSet<u32> = ids[..counts[0]].iter().copied().collect();
    let validation_ids: BTreeSet<u32> = ids[counts[0]..counts[0] + counts[1]].iter().copied().collect();
    let test_ids: BTreeSet<u32> = ids[counts[0] + counts[1]..].iter().copied().collect();
    Ok(SplitBundle {
        train: dataset.filter_identities(|i| train_ids.contains(&i)),
        validation: dataset.filter_identities(|i| validation_ids.contains(&i)),
        test: dataset.filter_identities(|i| test_ids.contains(&i)),
        train_ids,
        validation_ids,
        test_ids,
    })
}

/// Which part of an unlearning request was read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DataRole {
    Support,
    Forget,
    Retain,
}

/// Shared record of dataset reads, attached to a request under audit.
#[derive(Debug, Clone, Default)]
pub struct AccessLog(Arc<Mutex<Vec<DataRole>>>);

impl AccessLog {
    pub fn new() -> Self {
        Self::default()
    }

    fn record(&self, role: DataRole) {
        self.0.lock().expect("access log poisoned").push(role);
    }

    pub fn entries(&self) -> Vec<DataRole> {
        self.0.lock().expect("access log poisoned").clone()
    }

    pub fn roles(&self) -> BTreeSet<DataRole> {
        self.entries().into_iter().collect()
    }

    pub fn clear(&self) {
        self.0.lock().expect("access log poisoned").clear();
    }
}

#[derive(Debug, Clone)]
pub struct UnlearningRequest {
    pub forget_ids: BTreeSet<u32>,
    support: Dataset,
    forget: Dataset,
    retain: Dataset,
    log: Option<AccessLog>,
}

impl UnlearningRequest {
    pub fn attach_access_log(&mut self, log: AccessLog) {
        self.log = Some(log);
    }

    fn touch(&self, role: DataRole) {
        if let Some(log) = &self.log {
            log.record(role);
        }
    }

    /// The support set S: one sample per forget identity.
    pub fn support(&self) -> &Dataset {
        self.touch(DataRole::Support);
        &self.support
    }

    /// D_f: the training samples of the forget identities.
    pub fn forget_set(&self) -> &Dataset {
        self.touch(DataRole::Forget);
        &self.forget
    }

    /// D_r: the training samples of every other identity.
    pub fn retain_set(&self) -> &Dataset {
        self.touch(DataRole::Retain);
        &self.retain
    }

    pub fn support_size(&self) -> usize {
        self.support.len()
    }
}

/// Splits `train` for the given forget identities: one random support sample
/// per identity, the rest of their samples as the forget set.
pub fn carve_request(
    train: &Dataset,
    forget_ids: &BTreeSet<u32>,
    rng: &mut ChaCha8Rng,
) -> Result<(UnlearningRequest, Dataset)> {
    let mut support_ids = BTreeSet::new();
    for id in forget_ids {
        let positions = train
            .identity_index()
            .get(id)
            .ok_or_else(|| Error::Request(format!("identity {id} is not in the training set")))?;
        if positions.len() < 2 {
            return Err(Error::Request(format!(
                "identity {id} has {} training sample(s); need at least 2",
                positions.len()
            )));
        }
        let pick = positions[rng.random_range(0..positions.len())];
        support_ids.insert(train.samples()[pick].sample_id);
    }
    let schema = train.schema();
    let (mut support, mut forget, mut retain, mut reduced) = (vec![], vec![], vec![], vec![]);
    for s in train.samples() {
        if support_ids.contains(&s.sample_id) {
            support.push(s.clone());
            continue;
        }
        reduced.push(s.clone());
        if forget_ids.contains(&s.identity) {
            forget.push(s.clone());
        } else {
            retain.push(s.clone());
        }
    }
    let request = UnlearningRequest {
        forget_ids: forget_ids.clone(),
        support: Dataset::new(schema, support)?,
        forget: Dataset::new(schema, forget)?,
        retain: Dataset::new(schema, retain)?,
        log: None,
    };
    Ok((request, Dataset::new(schema, reduced)?))
}

/// Samples `n_s` forget identities from the training split and withholds one
/// support sample each. Returns the request and the reduced training set.
pub fn build_unlearning_request(bundle: &SplitBundle, n_s: usize, seed: u64) -> Result<(UnlearningRequest, Dataset)> {
    let pool: Vec<u32> = bundle.train_ids.iter().copied().collect();
    if n_s == 0 || n_s > pool.len() {
        return Err(Error::Request(format!("request size {n_s} must lie in [1, {}]", pool.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let forget_ids: BTreeSet<u32> =
        rand::seq::index::sample(&mut rng, pool.len(), n_s).into_iter().map(|i| pool[i]).collect();
    carve_request(&bundle.train, &forget_ids, &mut rng)
}

/// Without-replacement identity scheduler: each epoch visits every eligible
/// identity exactly once, in chunks of `n_s`.
#[derive(Debug, Clone)]
pub struct IdentitySampler {
    ids: Vec<u32>,
    n_s: usize,
}

impl IdentitySampler {
    pub fn new(ids: impl IntoIterator<Item = u32>, n_s: usize) -> Result<Self> {
        let ids: Vec<u32> = ids.into_iter().collect();
        if n_s == 0 {
            return Err(Error::Config("request size must be at least 1".into()));
        }
        if ids.is_empty() {
            return Err(Error::Request("no identities to sample from".into()));
        }
        Ok(Self { ids, n_s })
    }

    /// ⌈|ids| / n_s⌉
    pub fn requests_per_epoch(&self) -> usize {
        self.ids.len().div_ceil(self.n_s)
    }

    pub fn epoch(&self, rng: &mut ChaCha8Rng) -> Vec<BTreeSet<u32>> {
        let mut order = self.ids.clone();
        order.shuffle(rng);
        order.chunks(self.n_s).map(|c| c.iter().copied().collect()).collect()
    }
}

/// Writes a dataset's identity split as a small JSON record.
pub fn save_split(bundle: &SplitBundle, path: &Path) -> Result<()> {
    #[derive(Serialize)]
    struct SplitFile<'a> {
        train: &'a BTreeSet<u32>,
        validation: &'a BTreeSet<u32>,
        test: &'a BTreeSet<u32>,
    }
    crate::persist::write_json(
        path,
        &SplitFile { train: &bundle.train_ids, validation: &bundle.validation_ids, test: &bundle.test_ids },
    )
}

pub fn save_request(request: &UnlearningRequest, path: &Path) -> Result<()> {
    #[derive(Serialize)]
    struct RequestFile {
        forget_ids: Vec<u32>,
        support_sample_ids: Vec<u64>,
        forget_samples: usize,
        retain_samples: usize,
    }
    let file = RequestFile {
        forget_ids: request.forget_ids.iter().copied().collect(),
        support_sample_ids: request.support.samples().iter().map(|s| s.sample_id).collect(),
        forget_samples: request.forget.len(),
        retain_samples: request.retain.len(),
    };
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    crate::persist::write_json(path, &file)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> GeneratorConfig {
        GeneratorConfig { num_identities: 20, samples_per_identity: 4, ..Default::default() }
    }

    #[test]
    fn generate_counts() {
        let ds = generate_dataset(&GeneratorConfig::default(), 0).unwrap();
        assert_eq!(ds.len(), 2000);
        assert_eq!(ds.identity_index().len(), 200);
        let covered: usize = ds.identity_index().values().map(Vec::len).sum();
        assert_eq!(covered, ds.len());
    }

    #[test]
    fn zero_noise_collapses_identity() {
        let cfg = GeneratorConfig { noise_scale: 0.0, ..small_config() };
        let ds = generate_dataset(&cfg, 3).unwrap();
        for id in ds.identities() {
            let s = ds.identity_samples(id);
            assert!(s.iter().all(|x| x.features == s[0].features));
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_dataset(&small_config(), 9).unwrap();
        let b = generate_dataset(&small_config(), 9).unwrap();
        assert_eq!(a, b);
        let c = generate_dataset(&small_config(), 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_bad_configs() {
        let one = GeneratorConfig { samples_per_identity: 1, ..small_config() };
        assert!(generate_dataset(&one, 0).is_err());
        let nan = GeneratorConfig { noise_scale: f64::NAN, ..small_config() };
        assert!(generate_dataset(&nan, 0).is_err());
        let inf = GeneratorConfig { prototype_scale: f64::INFINITY, ..small_config() };
        assert!(generate_dataset(&inf, 0).is_err());
        let few = GeneratorConfig { num_identities: 3, ..small_config() };
        assert!(generate_dataset(&few, 0).is_err());
    }

    #[test]
    fn multiclass_labels_in_range() {
        let cfg = GeneratorConfig { task_kind: TaskKind::MultiClass, ..small_config() };
        let ds = generate_dataset(&cfg, 1).unwrap();
        assert!(ds.samples().iter().all(|s| matches!(s.labels, Target::Class(c) if c < 8)));
    }

    #[test]
    fn split_counts_use_largest_remainder() {
        let ds = generate_dataset(&GeneratorConfig::default(), 0).unwrap();
        let b = split_by_identity(&ds, [0.8, 0.1, 0.1], 0).unwrap();
        assert_eq!((b.train_ids.len(), b.validation_ids.len(), b.test_ids.len()), (160, 20, 20));
        assert_eq!(largest_remainder(7, &[0.5, 0.25, 0.25]), vec![3, 2, 2]);
        assert_eq!(largest_remainder(10, &[1.0 / 3.0; 3]), vec![4, 3, 3]);
    }

    #[test]
    fn split_rejects_empty_split() {
        let ds = generate_dataset(&small_config(), 0).unwrap();
        assert!(split_by_identity(&ds, [1.0, 0.0, 0.0], 0).is_err());
        assert!(split_by_identity(&ds, [0.5, 0.2, 0.2], 0).is_err());
        // 20 identities at 2% each would round to zero.
        assert!(matches!(split_by_identity(&ds, [0.96, 0.02, 0.02], 0), Err(Error::EmptySplit(_))));
    }

    #[test]
    fn request_sizes() {
        let ds = generate_dataset(&GeneratorConfig::default(), 0).unwrap();
        let b = split_by_identity(&ds, [0.8, 0.1, 0.1], 0).unwrap();
        let (r, reduced) = build_unlearning_request(&b, 5, 1).unwrap();
        assert_eq!(r.support().len(), 5);
        assert_eq!(r.forget_set().len(), 45);
        assert_eq!(reduced.len(), b.train.len() - 5);

        let (r1, _) = build_unlearning_request(&b, 1, 2).unwrap();
        assert_eq!(r1.forget_ids.len(), 1);
        assert_eq!(r1.support().len(), 1);

        assert!(build_unlearning_request(&b, 0, 0).is_err());
        assert!(build_unlearning_request(&b, 161, 0).is_err());
    }

    #[test]
    fn single_sample_identity_is_rejected() {
        let schema = DataSchema { feature_dim: 2, num_classes: 1, task_kind: TaskKind::MultiLabel };
        let mk = |id: u64, identity: u32| Sample {
            sample_id: id,
            identity,
            features: vec![0.0, 1.0],
            labels: Target::Attributes(vec![1]),
        };
        let train = Dataset::new(schema, vec![mk(0, 0), mk(1, 1), mk(2, 1)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = carve_request(&train, &BTreeSet::from([0]), &mut rng);
        assert!(matches!(err, Err(Error::Request(_))));
        assert!(carve_request(&train, &BTreeSet::from([1]), &mut rng).is_ok());
    }

    #[test]
    fn dataset_rejects_bad_samples() {
        let schema = DataSchema { feature_dim: 2, num_classes: 2, task_kind: TaskKind::MultiLabel };
        let bad_dim = Sample { sample_id: 0, identity: 0, features: vec![0.0], labels: Target::Attributes(vec![0, 1]) };
        assert!(Dataset::new(schema, vec![bad_dim]).is_err());
        let bad_bit =
            Sample { sample_id: 0, identity: 0, features: vec![0.0, 0.0], labels: Target::Attributes(vec![0, 2]) };
        assert!(Dataset::new(schema, vec![bad_bit]).is_err());
        let wrong_kind = Sample { sample_id: 0, identity: 0, features: vec![0.0, 0.0], labels: Target::Class(1) };
        assert!(Dataset::new(schema, vec![wrong_kind]).is_err());
    }

    #[test]
    fn sampler_covers_each_identity_once() {
        let sampler = IdentitySampler::new(0..160u32, 20).unwrap();
        assert_eq!(sampler.requests_per_epoch(), 8);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let chunks = sampler.epoch(&mut rng);
        assert_eq!(chunks.len(), 8);
        let mut seen = BTreeSet::new();
        for c in &chunks {
            for id in c {
                assert!(seen.insert(*id));
            }
        }
        assert_eq!(seen.len(), 160);

        let ragged = IdentitySampler::new(0..10u32, 3).unwrap();
        assert_eq!(ragged.requests_per_epoch(), 4);
        let sizes: Vec<usize> = ragged.epoch(&mut rng).iter().map(BTreeSet::len).collect();
        assert_eq!(sizes, vec![3, 3, 3, 1]);
    }
}
