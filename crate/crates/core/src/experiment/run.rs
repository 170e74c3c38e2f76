use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Cell, ExperimentConfig, Metric, TaskKind};
use crate::data::{
    contaminate, gen_channel_gain, gen_classification, gen_localization, gen_multipath, split,
    ContaminationSpec, Dataset,
};
use crate::error::{Error, Result};
use crate::metrics::{self, ReliabilityDiagram};
use crate::models::{predictive_log_prob, vae::standard_normal_matrix, Model, LATENT_DIM};
use crate::objectives::{linspace, trapezoid};
use crate::tensor::Tensor;
use crate::trainer::{fit, TrainConfig, TrainReport};
use crate::variational::GaussianPosterior;

/// Environment variable capping the worker pool.
pub const THREADS_ENV: &str = "ROBAYES_THREADS";

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub out: PathBuf,
    pub seed_override: Option<u64>,
    /// Worker cap; `None` reads [`THREADS_ENV`] and falls back to the core count.
    pub threads: Option<usize>,
}

/// Metrics of one fitted (cell, seed) pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub cell: usize,
    pub seed: u64,
    pub m: usize,
    pub t: f64,
    pub beta: f64,
    pub epsilon: f64,
    pub frequentist: bool,
    pub metrics: BTreeMap<String, f64>,
    pub final_objective: f64,
}

/// Contents of every `metrics.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub task: TaskKind,
    /// `norm` or `squared`.
    pub mse_convention: String,
    pub runs: Vec<RunRecord>,
}

struct JobOutput {
    record: RunRecord,
    report: TrainReport,
    reliability: Option<ReliabilityDiagram>,
    predictive: Option<(Vec<f64>, Vec<f64>)>,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent stream for `(seed, purpose)`.
fn stream(seed: u64, purpose: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(purpose);
    r
}

const DATA_STREAM: u64 = 0;
const CONTAMINATION_STREAM: u64 = 1;
const EVAL_STREAM: u64 = 2;

pub fn thread_count(requested: Option<usize>) -> usize {
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let cap = requested.or_else(|| {
        std::env::var(THREADS_ENV)
            .ok()
            .and_then(|v| v.trim().parse().ok())
    });
    cap.map_or(cores, |c: usize| c.clamp(1, cores.max(1)))
}

struct TaskData {
    train: Dataset,
    test: Dataset,
    ood_test: Option<Dataset>,
}

fn make_data(cfg: &ExperimentConfig, seed: u64, epsilon: f64) -> Result<TaskData> {
    let (n_train, n_test) = cfg.data.sizes()?;
    let mut rng = stream(seed, DATA_STREAM);
    let n = n_train + n_test;
    let pool = match cfg.task {
        TaskKind::ChannelGainDensity => gen_channel_gain(n, &mut rng)?,
        TaskKind::SyntheticAmc => gen_classification(n, &cfg.data.classification(), &mut rng)?,
        TaskKind::SyntheticLocalization => gen_localization(n, &cfg.data.localization(), &mut rng)?,
        TaskKind::ChannelVae => {
            let mp = cfg.data.multipath();
            gen_multipath(n, &mp, mp.delay_spread_ns, &mut rng)?
        }
    };
    let (train, test) = split(&pool, n_train as f64 / n as f64, &mut rng);
    let ood_test = if cfg.task == TaskKind::ChannelVae {
        let mp = cfg.data.multipath();
        let k = cfg.data.n_ood_test.unwrap_or(n_test);
        Some(gen_multipath(k, &mp, 3.0 * mp.delay_spread_ns, &mut rng)?)
    } else {
        None
    };
    let mut train = match cfg.data.ood(cfg.task)? {
        Some(ood) if epsilon > 0.0 => {
            let mut crng = stream(seed, CONTAMINATION_STREAM);
            contaminate(&train, &ContaminationSpec { epsilon, ood }, &mut crng)?
        }
        _ => train,
    };
    for o in &cfg.data.outliers {
        train = train.with_outlier_point(o)?;
    }
    Ok(TaskData {
        train,
        test,
        ood_test,
    })
}

fn draws(q: &GaussianPosterior, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..k).map(|_| q.draw_random(rng)).collect()
}

/// Metrics, reliability diagram and predictive grid `(x, density)` of one fit.
type Evaluation = (
    BTreeMap<String, f64>,
    Option<ReliabilityDiagram>,
    Option<(Vec<f64>, Vec<f64>)>,
);

fn evaluate(
    cfg: &ExperimentConfig,
    model: &Model,
    report: &TrainReport,
    data: &TaskData,
    rng: &mut ChaCha8Rng,
) -> Result<Evaluation> {
    let q = report.posterior()?;
    let thetas = draws(&q, cfg.eval.test_m, rng);
    let wanted = cfg.metrics();
    let mut out = BTreeMap::new();
    let mut put = |m: Metric, v: f64| {
        if wanted.contains(&m) {
            out.insert(m.name().to_string(), v);
        }
    };
    let mut reliability = None;
    let mut predictive = None;
    match model {
        Model::GaussianLocation(_) => {
            let lp = predictive_log_prob(model, &thetas, &data.test)?;
            put(Metric::Nll, metrics::nll_from_log(&lp)?);
            if !cfg.data.outliers.is_empty() {
                let pts = Dataset::unlabeled(Tensor::matrix(
                    cfg.data.outliers.len(),
                    1,
                    cfg.data.outliers.iter().map(|o| o[0]).collect(),
                )?)?;
                let p = predictive_log_prob(model, &thetas, &pts)?;
                put(
                    Metric::DensityAtOutliers,
                    p.iter().map(|l| l.exp()).sum::<f64>() / p.len() as f64,
                );
            }
            if let Some(g) = &cfg.eval.grid {
                let xs = linspace(g.lo, g.hi, g.points);
                let grid = Dataset::unlabeled(Tensor::matrix(xs.len(), 1, xs.clone())?)?;
                let dens: Vec<f64> = predictive_log_prob(model, &thetas, &grid)?
                    .into_iter()
                    .map(f64::exp)
                    .collect();
                predictive = Some((xs, dens));
            }
        }
        Model::Classifier(c) => {
            let k = c.classes();
            let mut probs = Tensor::zeros(&[data.test.len(), k]);
            for th in &thetas {
                let p = c.class_probs(th, &data.test.features)?;
                for (a, b) in probs.data_mut().iter_mut().zip(p.data()) {
                    *a += b / thetas.len() as f64;
                }
            }
            let labels = data.test.labels().expect("classification data");
            let diagram = ReliabilityDiagram::from_probs(&probs, labels, cfg.eval.bins)?;
            put(Metric::Accuracy, metrics::accuracy(&probs, labels)?);
            put(Metric::Ece, diagram.ece());
            let picked: Vec<f64> = labels
                .iter()
                .enumerate()
                .map(|(i, &l)| probs.row(i)[l])
                .collect();
            put(Metric::Nll, metrics::nll(&picked)?);
            reliability = Some(diagram);
        }
        Model::Regressor(r) => {
            let y = data.test.real_targets().expect("regression data");
            let mut mean = Tensor::zeros(y.shape());
            for th in &thetas {
                let f = r.net.forward_values(th, &data.test.features)?;
                for (a, b) in mean.data_mut().iter_mut().zip(f.data()) {
                    *a += b / thetas.len() as f64;
                }
            }
            put(Metric::Mse, metrics::mse(&mean, y, cfg.eval.squared_mse)?);
            let lp = predictive_log_prob(model, &thetas, &data.test)?;
            put(Metric::Nll, metrics::nll_from_log(&lp)?);
        }
        Model::Vae(v) => {
            let n_gen = data.test.len();
            let h = standard_normal_matrix(n_gen, LATENT_DIM, rng);
            let sd = v.decoder_variance().sqrt();
            let d = v.input_dim();
            let mut gen = Vec::with_capacity(n_gen * d);
            for i in 0..n_gen {
                let th = &thetas[i % thetas.len()];
                let hi = Tensor::matrix(1, LATENT_DIM, h.row(i).to_vec())?;
                let mean = v.decode_values(th, &hi)?;
                for &mu in mean.data() {
                    let z: f64 = StandardNormal.sample(rng);
                    gen.push(mu + sd * z);
                }
            }
            let gen = Tensor::matrix(n_gen, d, gen)?;
            put(Metric::Mmd, metrics::mmd(&gen, &data.test.features)?);
            let latents = standard_normal_matrix(cfg.eval.latent_draws, LATENT_DIM, rng);
            let id = metrics::model_density_log_score(v, &thetas, &latents, &data.test.features)?;
            if let Some(ood) = &data.ood_test {
                let od = metrics::model_density_log_score(v, &thetas, &latents, &ood.features)?;
                put(Metric::Auroc, metrics::auroc(&id, &od)?);
            }
            put(Metric::Nll, metrics::nll_from_log(&id)?);
        }
    }
    Ok((out, reliability, predictive))
}

fn run_job(cfg: &ExperimentConfig, model: &Model, cell: &Cell, seed: u64) -> Result<JobOutput> {
    let data = make_data(cfg, seed, cell.epsilon)?;
    let train_seed = splitmix(seed ^ splitmix(cell.index as u64 + 1));
    let tc = TrainConfig {
        seed: train_seed,
        ..cfg.training.clone()
    };
    let report = fit(model, &cell.spec, &cfg.prior(), &data.train, &tc)?;
    let mut rng = stream(train_seed, EVAL_STREAM);
    let (metrics, reliability, predictive) = evaluate(cfg, model, &report, &data, &mut rng)?;
    Ok(JobOutput {
        record: RunRecord {
            cell: cell.index,
            seed,
            m: cell.spec.m,
            t: cell.spec.t,
            beta: cell.spec.beta,
            epsilon: cell.epsilon,
            frequentist: cell.spec.frequentist,
            metrics,
            final_objective: *report.objective.last().expect("steps >= 1"),
        },
        report,
        reliability,
        predictive,
    })
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(csv_err)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

fn write_job(
    dir: &Path,
    hash: &str,
    cfg: &ExperimentConfig,
    job: &JobOutput,
    mse: &str,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let seed = job.record.seed.to_string();
    write_json(
        &dir.join("metrics.json"),
        &RunSummary {
            config_hash: hash.to_string(),
            name: cfg.name.clone(),
            task: cfg.task,
            mse_convention: mse.to_string(),
            runs: vec![job.record.clone()],
        },
    )?;
    let mut w = csv_writer(&dir.join("loss-curves.csv"))?;
    w.write_record(["config_hash", "seed", "step", "objective", "loss", "kl"])
        .map_err(csv_err)?;
    for i in 0..job.report.objective.len() {
        w.write_record([
            hash,
            &seed,
            &(i + 1).to_string(),
            &job.report.objective[i].to_string(),
            &job.report.loss[i].to_string(),
            &job.report.kl[i].to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    if let Some(diagram) = &job.reliability {
        let mut w = csv_writer(&dir.join("reliability.csv"))?;
        w.write_record([
            "config_hash",
            "seed",
            "bin_lo",
            "bin_hi",
            "count",
            "accuracy",
            "confidence",
        ])
        .map_err(csv_err)?;
        for b in &diagram.bins {
            w.write_record([
                hash,
                &seed,
                &b.lo.to_string(),
                &b.hi.to_string(),
                &b.count.to_string(),
                &b.accuracy.to_string(),
                &b.confidence.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
    }
    if let Some((xs, ps)) = &job.predictive {
        let mut w = csv_writer(&dir.join("predictive.csv"))?;
        w.write_record(["config_hash", "seed", "x", "density"])
            .map_err(csv_err)?;
        for (x, p) in xs.iter().zip(ps) {
            w.write_record([hash, &seed, &x.to_string(), &p.to_string()])
                .map_err(csv_err)?;
        }
        w.flush()?;
    }
    let mut ck = serde_json::to_value(&job.report.checkpoint)?;
    ck["config_hash"] = hash.into();
    ck["seed"] = job.record.seed.into();
    if let Some(enc) = &job.report.encoder {
        ck["encoder"] = serde_json::to_value(enc)?;
    }
    write_json(&dir.join("checkpoint.json"), &ck)?;
    Ok(())
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Aggregated `(cell, metric) -> (mean, std, count)` rows in cell order.
pub fn aggregate(cells: &[Cell], runs: &[RunRecord]) -> Vec<(usize, String, f64, f64, usize)> {
    let mut rows = Vec::new();
    for c in cells {
        let mine: Vec<&RunRecord> = runs.iter().filter(|r| r.cell == c.index).collect();
        let mut names: Vec<&String> = mine.iter().flat_map(|r| r.metrics.keys()).collect();
        names.sort();
        names.dedup();
        for name in names {
            let vals: Vec<f64> = mine
                .iter()
                .filter_map(|r| r.metrics.get(name).copied())
                .collect();
            let (m, s) = mean_std(&vals);
            rows.push((c.index, name.clone(), m, s, vals.len()));
        }
    }
    rows
}

fn cell_label(c: &Cell) -> String {
    if c.spec.frequentist {
        format!("frequentist eps={}", c.epsilon)
    } else {
        format!("m={} t={} eps={}", c.spec.m, c.spec.t, c.epsilon)
    }
}

/// Trains and evaluates every (cell, seed) pair and writes all outputs under `opts.out`.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunSummary> {
    let mut cfg = cfg.clone();
    if let Some(s) = opts.seed_override {
        cfg.eval.seeds = vec![s];
    }
    cfg.validate()?;
    let model = cfg.build_model()?;
    let cells = cfg.cells()?;
    let seeds = cfg.seeds();
    let hash = cfg.hash();
    let mse = if cfg.eval.squared_mse {
        "squared"
    } else {
        "norm"
    };

    let jobs: Vec<(&Cell, u64)> = cells
        .iter()
        .flat_map(|c| seeds.iter().map(move |&s| (c, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count(opts.threads))
        .build()
        .map_err(|e| Error::config(format!("cannot start worker pool: {e}")))?;
    let results: Vec<Result<JobOutput>> = pool.install(|| {
        jobs.par_iter()
            .map(|(c, s)| run_job(&cfg, &model, c, *s))
            .collect()
    });

    fs::create_dir_all(&opts.out)?;
    let mut outputs = Vec::with_capacity(results.len());
    for r in results {
        outputs.push(r?);
    }
    for job in &outputs {
        let dir = opts.out.join(format!(
            "cell-{:02}-seed-{}",
            job.record.cell, job.record.seed
        ));
        write_job(&dir, &hash, &cfg, job, mse)?;
    }
    let summary = RunSummary {
        config_hash: hash.clone(),
        name: cfg.name.clone(),
        task: cfg.task,
        mse_convention: mse.to_string(),
        runs: outputs.into_iter().map(|j| j.record).collect(),
    };
    write_json(&opts.out.join("metrics.json"), &summary)?;
    let mut effective = serde_json::to_value(&cfg)?;
    effective["config_hash"] = hash.clone().into();
    write_json(&opts.out.join("config.json"), &effective)?;

    let agg = aggregate(&cells, &summary.runs);
    let mut w = csv_writer(&opts.out.join("summary.csv"))?;
    w.write_record([
        "config_hash",
        "cell",
        "m",
        "t",
        "epsilon",
        "frequentist",
        "metric",
        "mean",
        "std",
        "seeds",
    ])
    .map_err(csv_err)?;
    for (ci, name, mean, std, n) in &agg {
        let c = &cells[*ci];
        w.write_record([
            hash.as_str(),
            &ci.to_string(),
            &c.spec.m.to_string(),
            &c.spec.t.to_string(),
            &c.epsilon.to_string(),
            &c.spec.frequentist.to_string(),
            name,
            &mean.to_string(),
            &std.to_string(),
            &n.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(summary)
}

/// Console table of mean ± std per cell and metric.
pub fn summary_table(cfg: &ExperimentConfig, summary: &RunSummary) -> Result<String> {
    let cells = cfg.cells()?;
    let agg = aggregate(&cells, &summary.runs);
    let mut s = format!(
        "{} ({}), config {}\n",
        cfg.name.as_deref().unwrap_or("experiment"),
        cfg.task.name(),
        &summary.config_hash[..12]
    );
    for c in &cells {
        let parts: Vec<String> = agg
            .iter()
            .filter(|r| r.0 == c.index)
            .map(|(_, name, m, sd, _)| format!("{name} {m:.4} ± {sd:.4}"))
            .collect();
        s.push_str(&format!("  {:<28} {}\n", cell_label(c), parts.join("  ")));
    }
    Ok(s)
}

/// Local maxima of a sampled curve, as grid abscissae.
pub fn local_maxima(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    (1..ys.len().saturating_sub(1))
        .filter(|&i| ys[i] > ys[i - 1] && ys[i] >= ys[i + 1])
        .map(|i| xs[i])
        .collect()
}

/// Trapezoid mass of a predictive curve.
pub fn grid_mass(xs: &[f64], ys: &[f64]) -> f64 {
    trapezoid(xs, ys)
}
