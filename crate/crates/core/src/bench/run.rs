use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::results::{ResultRow, ResultsTable, Timing};
use super::task::TaskSpec;
use crate::baseline::{predict_direct, train_direct, DirectRegressor};
use crate::error::{Error, Result};
use crate::flow::{impute, train_flow, VelocityField};
use crate::metrics::{psnr, ssim, MetricReport, SampleScore};
use crate::mmvae::{train_vae, MultimodalVae};
use crate::rng::{derive_seed, mix64, Rng};
use crate::synth::{generate_dataset, Dataset, Family, FamilyData, Study};
use crate::tensor::Tensor;
use crate::train::TrainHistory;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Flowmi,
    Direct,
    /// Mean of the observed inputs, no learning.
    CopyInput,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Flowmi, Method::Direct, Method::CopyInput];

    pub fn name(self) -> &'static str {
        match self {
            Method::Flowmi => "flowmi",
            Method::Direct => "direct",
            Method::CopyInput => "copy_input",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

/// Every trained model of one family plus what it was trained on.
#[derive(Clone, Debug)]
pub struct FamilyModels {
    pub family: Family,
    pub vae: MultimodalVae,
    pub field: VelocityField,
    pub direct: DirectRegressor,
    pub histories: BTreeMap<String, TrainHistory>,
    /// Study ids that entered any training batch.
    pub trained_on: BTreeSet<String>,
    pub seconds: f64,
}

// Sub-stream indices; changing them changes every trained weight.
const STREAM_VAE: u64 = 0x100;
const STREAM_FLOW: u64 = 0x200;
const STREAM_DIRECT: u64 = 0x300;
const STREAM_EVAL: u64 = 0x400;

fn family_code(f: Family) -> u64 {
    match f {
        Family::CtPair => 0,
        Family::DceTriplet => 1,
    }
}

pub fn family_train_data(dataset: &Dataset, family: Family) -> Result<FamilyData> {
    let train = dataset.select(&dataset.manifest.splits.train).collect::<Result<Vec<_>>>()?;
    let data = FamilyData::from_studies(family, train)?;
    if data.is_empty() {
        return Err(Error::Config(format!("no {family} studies in the training split")));
    }
    Ok(data)
}

/// Trains the VAE, then the velocity field on the frozen VAE, then the
/// direct baseline. Each stage draws from its own seed.
pub fn train_family(cfg: &RunConfig, dataset: &Dataset, family: Family) -> Result<FamilyModels> {
    let start = Instant::now();
    let data = family_train_data(dataset, family)?;
    let m = &cfg.model;
    let fc = family_code(family);
    let ctx = |stage: &'static str| move |e: Error| e.context(format!("training {stage} for {family}"));

    let mut rng = Rng::new(derive_seed(cfg.seed, STREAM_VAE + fc));
    let mut vae = MultimodalVae::init(&mut rng, data.modalities(), &data.image_shape, m.latent_dim, &m.vae_hidden, m.activation)?;
    let h_vae = train_vae(&mut vae, &data, &cfg.weights, &cfg.optimizer, &mut rng).map_err(ctx("vae"))?;

    let mut rng = Rng::new(derive_seed(cfg.seed, STREAM_FLOW + fc));
    let mut field = VelocityField::init(&mut rng, m.latent_dim, &m.flow_hidden, m.activation)?;
    let h_flow = train_flow(&mut field, &vae, &data, &cfg.flow, &cfg.optimizer, &mut rng).map_err(ctx("flow"))?;

    let mut rng = Rng::new(derive_seed(cfg.seed, STREAM_DIRECT + fc));
    let mut direct = DirectRegressor::init(&mut rng, data.modalities(), &data.image_shape, &m.direct_hidden, m.activation)?;
    let h_direct = train_direct(&mut direct, &data, &cfg.optimizer, &mut rng).map_err(ctx("direct"))?;

    let mut trained_on = BTreeSet::new();
    for h in [&h_vae, &h_flow, &h_direct] {
        trained_on.extend(h.seen.iter().map(|&i| data.ids[i].clone()));
    }
    let histories = [("vae", h_vae), ("flow", h_flow), ("direct", h_direct)]
        .into_iter()
        .map(|(k, h)| (k.to_string(), h))
        .collect();
    Ok(FamilyModels {
        family,
        vae,
        field,
        direct,
        histories,
        trained_on,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Trains every family that any task needs. Families train on separate
/// threads; results do not depend on scheduling.
pub fn train_all(cfg: &RunConfig, dataset: &Dataset) -> Result<BTreeMap<Family, FamilyModels>> {
    let families: BTreeSet<Family> = cfg.tasks.iter().map(TaskSpec::family).collect();
    let results: Vec<Result<FamilyModels>> = std::thread::scope(|s| {
        let handles: Vec<_> = families
            .iter()
            .map(|&f| s.spawn(move || train_family(cfg, dataset, f)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::contract("training thread panicked"))))
            .collect()
    });
    let mut out = BTreeMap::new();
    for r in results {
        let fm = r?;
        out.insert(fm.family, fm);
    }
    Ok(out)
}

/// Study ids scored by `cfg`: test-mini unless `full_test` is set.
pub fn eval_ids(cfg: &RunConfig, dataset: &Dataset) -> Vec<String> {
    let s = &dataset.manifest.splits;
    if cfg.full_test {
        s.test.clone()
    } else {
        s.test_mini.clone()
    }
}

fn task_stream(task: &TaskSpec) -> u64 {
    task.to_string().bytes().fold(STREAM_EVAL, |h, b| mix64(h ^ u64::from(b)))
}

/// Images of every modality of `task`'s family as predicted by `method`,
/// given only the task inputs of `study`.
pub fn predict(
    cfg: &RunConfig,
    models: Option<&FamilyModels>,
    task: &TaskSpec,
    method: Method,
    study: &Study,
    rng: &mut Rng,
) -> Result<Vec<Tensor>> {
    let family = task.family();
    let mods = family.modalities();
    let observed: Vec<Option<&Tensor>> = mods
        .iter()
        .map(|m| task.inputs().contains(m).then(|| study.image(*m)).transpose())
        .collect::<Result<_>>()?;
    let need = || models.ok_or_else(|| Error::Config(format!("no trained {family} models for {method}")));
    match method {
        Method::Flowmi => {
            let fm = need()?;
            Ok(impute(&fm.vae, &fm.field, &observed, &cfg.integrator, rng)?.composited)
        }
        Method::Direct => Ok(predict_direct(&need()?.direct, &observed)?.composited),
        Method::CopyInput => {
            let inputs: Vec<&Tensor> = observed.iter().flatten().copied().collect();
            let mut mean = Tensor::zeros(inputs[0].shape());
            for x in &inputs {
                mean = mean.zip_map(x, |a, b| a + b)?;
            }
            let mean = mean.map(|v| v / inputs.len() as f64);
            Ok(observed.iter().map(|x| x.cloned().unwrap_or_else(|| mean.clone())).collect())
        }
    }
}

/// Scores `method` on the task outputs of every evaluation study.
pub fn run_task(
    cfg: &RunConfig,
    dataset: &Dataset,
    models: Option<&FamilyModels>,
    task: &TaskSpec,
    method: Method,
) -> Result<MetricReport> {
    let family = task.family();
    let ids: Vec<String> = eval_ids(cfg, dataset)
        .into_iter()
        .filter(|id| dataset.study(id).map(|s| s.family == family).unwrap_or(false))
        .collect();
    if ids.is_empty() {
        return Err(Error::Config(format!("no {family} studies to evaluate {task}")));
    }
    let mut rng = Rng::new(derive_seed(cfg.seed, task_stream(task)));
    let mut scores = Vec::new();
    for study in dataset.select(&ids) {
        let study = study?;
        let pred = predict(cfg, models, task, method, study, &mut rng)?;
        for &out in task.outputs() {
            let k = family.index_of(out).expect("task within family");
            let truth = study.image(out)?;
            scores.push(SampleScore {
                study_id: study.id.clone(),
                modality: out.name().to_string(),
                psnr_db: psnr(&pred[k], truth, 1.0)?,
                ssim_percent: 100.0 * ssim(&pred[k], truth, &cfg.ssim)?,
            });
        }
    }
    MetricReport::from_samples(task.to_string(), method.name(), scores)
}

/// A finished benchmark: the table plus everything needed to audit it.
#[derive(Debug)]
pub struct BenchmarkRun {
    pub table: ResultsTable,
    pub dataset: Dataset,
    pub models: BTreeMap<Family, FamilyModels>,
    pub timings: Vec<Timing>,
}

/// Scores every (task, method) cell with already trained models.
pub fn evaluate_all(
    cfg: &RunConfig,
    dataset: &Dataset,
    models: &BTreeMap<Family, FamilyModels>,
    methods: &[Method],
) -> Result<(ResultsTable, Vec<Timing>)> {
    let mut rows = Vec::new();
    let mut timings = Vec::new();
    for task in &cfg.tasks {
        for &method in methods {
            let start = Instant::now();
            let report = run_task(cfg, dataset, models.get(&task.family()), task, method)
                .map_err(|e| e.context(format!("{method} on {task}")))?;
            timings.push(Timing {
                stage: format!("evaluate {method} {task}"),
                seconds: start.elapsed().as_secs_f64(),
            });
            rows.push(ResultRow::from_report(cfg.seed, dataset, report)?);
        }
    }
    Ok((ResultsTable::new(rows), timings))
}

/// Generates data, trains each needed family once and scores every task
/// with every method.
pub fn run_benchmark(cfg: &RunConfig) -> Result<BenchmarkRun> {
    cfg.validate()?;
    let start = Instant::now();
    let dataset = generate_dataset(cfg.seed, &cfg.dataset).map_err(|e| e.context("generating dataset"))?;
    let mut timings = vec![Timing {
        stage: "generate".into(),
        seconds: start.elapsed().as_secs_f64(),
    }];
    let models = train_all(cfg, &dataset)?;
    timings.extend(models.values().map(|fm| Timing {
        stage: format!("train {}", fm.family),
        seconds: fm.seconds,
    }));
    let (table, eval_timings) = evaluate_all(cfg, &dataset, &models, &Method::ALL)?;
    timings.extend(eval_timings);
    Ok(BenchmarkRun {
        table,
        dataset,
        models,
        timings,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::synth::ModalityId;

    pub(crate) fn tiny_config() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.dataset.n_studies = 40;
        cfg.optimizer.epochs = 2;
        cfg.optimizer.lr = 1e-3;
        cfg.model.latent_dim = 4;
        cfg.model.vae_hidden = vec![8];
        cfg.model.flow_hidden = vec![8];
        cfg.model.direct_hidden = vec![8];
        cfg.integrator.steps = 4;
        cfg
    }

    #[test]
    fn copy_input_is_exact_when_ct_equals_ctc() {
        let mut cfg = tiny_config();
        cfg.dataset.phantom.noise_sigma = 0.0;
        cfg.dataset.phantom.ct_weight = 0.0;
        let ds = generate_dataset(cfg.seed, &cfg.dataset).unwrap();
        let task = TaskSpec::parse("CT->CTC").unwrap();
        let r = run_task(&cfg, &ds, None, &task, Method::CopyInput).unwrap();
        assert!(!r.per_sample.is_empty());
        assert!(r.per_sample.iter().all(|s| s.psnr_db == f64::INFINITY));
        assert!(run_task(&cfg, &ds, None, &task, Method::Flowmi).is_err());
    }

    #[test]
    fn copy_input_averages_inputs() {
        let cfg = tiny_config();
        let ds = generate_dataset(cfg.seed, &cfg.dataset).unwrap();
        let task = TaskSpec::parse("DCE1,DCE3->DCE2").unwrap();
        let study = ds.studies.values().find(|s| s.family == Family::DceTriplet).unwrap();
        let pred = predict(&cfg, None, &task, Method::CopyInput, study, &mut Rng::new(0)).unwrap();
        let (a, c) = (study.image(ModalityId::DCE1).unwrap(), study.image(ModalityId::DCE3).unwrap());
        for i in 0..a.len() {
            assert!((pred[1].data()[i] - 0.5 * (a.data()[i] + c.data()[i])).abs() < 1e-15);
        }
        assert_eq!(&pred[0], a);
    }

    #[test]
    fn test_mini_of_100_studies_scores_five() {
        let mut cfg = tiny_config();
        cfg.dataset.n_studies = 100;
        let ds = generate_dataset(cfg.seed, &cfg.dataset).unwrap();
        let total: usize = [Family::CtPair, Family::DceTriplet]
            .iter()
            .map(|f| {
                let task = if *f == Family::CtPair { "CT->CTC" } else { "DCE1->DCE2" };
                let t = TaskSpec::parse(task).unwrap();
                run_task(&cfg, &ds, None, &t, Method::CopyInput).map(|r| r.per_sample.len()).unwrap_or(0)
            })
            .sum();
        assert_eq!(total, 5);
    }

    #[test]
    fn benchmark_rows_and_isolation() {
        let mut cfg = tiny_config();
        cfg.tasks = TaskSpec::parse_list("CT->CTC").unwrap();
        let run = run_benchmark(&cfg).unwrap();
        assert_eq!(run.table.rows.len(), 3);
        assert_eq!(run.models.len(), 1);
        let splits = &run.dataset.manifest.splits;
        for fm in run.models.values() {
            assert!(!fm.trained_on.is_empty());
            assert!(splits.test.iter().all(|id| !fm.trained_on.contains(id)));
        }
    }
}
