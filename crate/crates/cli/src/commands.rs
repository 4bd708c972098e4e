use std::fs;
use std::path::Path;
use std::sync::Arc;

use cfgnn::bundle::{load_bundle, save_bundle};
use cfgnn::conformal::{calibrate_and_predict, predict, run_splits, CoverageReport, Prediction};
use cfgnn::correction::{correct, train_correction, CorrectionConfig, CorrectionDoc, CorrectionReport, MembershipSign};
use cfgnn::coverage::{coverage_cdf_atoms, expected_coverage, CoverageDistribution};
use cfgnn::eval::{edge_length_gap_test, network_features, worst_slice, GapTest, WscConfig, WscResult};
use cfgnn::gnn::{features_tensor, predict_scores, train_base, ModelDoc, TrainConfig, TrainReport};
use cfgnn::graph::{propagation, random_split, split_pool};
use cfgnn::scores::{check_alpha, ScoreKind};
use cfgnn::synth::{generate_correlated_regression, generate_sbm_classification, RegSynthConfig, SbmConfig};
use cfgnn::{stats, CorrectionModel, CsrMatrix, DataSplit, GcnModel, Graph, Labels, NodeData, SplitConfig, Task, Tensor};
use serde::{Deserialize, Serialize};

use crate::args::*;
use crate::error::{usage, CliError};

type Outcome = Result<(), CliError>;

macro_rules! set_some {
    ($cfg:ident, $args:expr, $($field:ident),+) => {
        $( if let Some(v) = $args.$field { $cfg.$field = v; } )+
    };
}

/// Everything `train` learned, enough to rebuild the scores and the split.
#[derive(Debug, Serialize, Deserialize)]
pub struct BaseModelFile {
    pub task: Task,
    pub split: SplitConfig,
    pub train: TrainConfig,
    pub report: TrainReport,
    pub model: ModelDoc,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CorrectionFile {
    pub config: CorrectionConfig,
    pub report: CorrectionReport,
    pub model: CorrectionDoc,
}

#[derive(Debug, Serialize)]
struct CoverageLaw {
    /// `E[coverage]` under exchangeability.
    expected: f64,
    ks_statistic: f64,
    ks_p_value: f64,
}

#[derive(Debug, Serialize)]
struct ConformalOutput {
    task: Task,
    report: CoverageReport,
    coverage_law: CoverageLaw,
}

#[derive(Debug, Serialize)]
struct CorrectOutput {
    task: Task,
    alpha: f64,
    gamma: f64,
    base: CoverageReport,
    corrected: CoverageReport,
    /// `1 − corrected / base` mean inefficiency.
    relative_reduction: f64,
    training: CorrectionReport,
}

#[derive(Debug, Serialize)]
struct WscOutput {
    features: &'static str,
    alpha: f64,
    calib_size: usize,
    test_size: usize,
    coverage: f64,
    result: WscResult,
}

#[derive(Debug, Serialize)]
struct GapOutput {
    alpha: f64,
    mean_length: f64,
    result: GapTest,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Outcome {
    let mut text = serde_json::to_string_pretty(value).map_err(cfgnn::Error::from)?;
    text.push('\n');
    fs::write(path, text).map_err(cfgnn::Error::from)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(cfgnn::Error::from)?;
    Ok(serde_json::from_str(&text).map_err(cfgnn::Error::from)?)
}

fn mismatch(msg: impl Into<String>) -> CliError {
    CliError::Run(cfgnn::Error::Invalid(msg.into()))
}

fn score_kind(task: Task) -> ScoreKind {
    match task {
        Task::Classification => ScoreKind::Aps,
        Task::Regression => ScoreKind::Cqr,
    }
}

fn check_splits(splits: usize) -> Outcome {
    if splits == 0 {
        return Err(CliError::Usage("--splits must be positive".into()));
    }
    Ok(())
}

pub fn synth(a: &SynthArgs, seed: u64) -> Outcome {
    let (g, data) = match a.kind {
        SynthKind::Sbm => {
            let mut cfg = SbmConfig { seed, ..Default::default() };
            set_some!(cfg, a, num_nodes, num_classes, p_in, p_out, feature_dim, separation, feature_noise);
            if a.num_blocks.is_some() || a.weight_scale.is_some() || a.smoothing_steps.is_some()
                || a.noise_scale.is_some() || a.hetero_scale.is_some()
            {
                return Err(CliError::Usage("regression-only flag given with --kind sbm".into()));
            }
            usage(cfg.validate())?;
            generate_sbm_classification(&cfg)?
        }
        SynthKind::Regression => {
            let mut cfg = RegSynthConfig { seed, ..Default::default() };
            set_some!(
                cfg, a, num_nodes, num_blocks, p_in, p_out, feature_dim, separation, feature_noise, weight_scale,
                smoothing_steps, noise_scale, hetero_scale
            );
            if a.num_classes.is_some() {
                return Err(CliError::Usage("--num-classes applies to --kind sbm only".into()));
            }
            usage(cfg.validate())?;
            generate_correlated_regression(&cfg)?
        }
    };
    save_bundle(&g, &data, &a.out)?;
    Ok(())
}

pub fn train(a: &TrainArgs, seed: u64) -> Outcome {
    let mut split_cfg = SplitConfig { seed, ..Default::default() };
    set_some!(split_cfg, a.split, train_frac, valid_frac, calib_cap);
    usage(split_cfg.validate())?;
    let mut cfg = TrainConfig { seed, ..Default::default() };
    set_some!(cfg, a, hidden, layers, lr, epochs, weight_decay, dropout, patience, alpha);
    usage(cfg.validate())?;

    let (g, data) = load_bundle(&a.data)?;
    let split = random_split(&g, &split_cfg)?;
    let (model, report) = train_base::<f64>(&g, &data, &split, &cfg)?;
    let file = BaseModelFile {
        task: data.task(),
        split: split_cfg,
        train: cfg,
        report,
        model: model.to_doc(),
    };
    write_json(&a.out, &file)
}

/// Dataset, split and base scores reconstructed from a model file.
struct Base {
    g: Graph,
    data: NodeData,
    split: DataSplit,
    adj: Arc<CsrMatrix>,
    scores: Tensor,
}

fn load_base(data_dir: &Path, model_path: &Path) -> Result<Base, CliError> {
    let (g, data) = load_bundle(data_dir)?;
    let file: BaseModelFile = read_json(model_path)?;
    if file.task != data.task() {
        return Err(mismatch(format!(
            "model was trained for {:?}, dataset is {:?}",
            file.task,
            data.task()
        )));
    }
    let model = GcnModel::from_doc(&file.model)?;
    if model.input_dim() != data.num_features() {
        return Err(mismatch(format!(
            "model expects {} features, dataset has {}",
            model.input_dim(),
            data.num_features()
        )));
    }
    let split = random_split(&g, &file.split)?;
    let adj = propagation::<f64>(&g);
    let x = features_tensor(&data)?;
    let scores = predict_scores(&model, &adj, &x)?;
    Ok(Base { g, data, split, adj, scores })
}

fn sorted_union(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut v: Vec<usize> = a.iter().chain(b).copied().collect();
    v.sort_unstable();
    v
}

fn coverage_law(report: &CoverageReport) -> Result<CoverageLaw, CliError> {
    let atoms = coverage_cdf_atoms(report.n, report.m, report.alpha)?;
    let d = stats::ks_statistic_lattice(&report.covered_counts(), &atoms)?;
    Ok(CoverageLaw {
        expected: expected_coverage(report.n, report.alpha),
        ks_statistic: d,
        ks_p_value: stats::ks_pvalue(d, report.splits.len()),
    })
}

pub fn conformal(a: &ConformalArgs, seed: u64) -> Outcome {
    usage(check_alpha(a.alpha))?;
    check_splits(a.splits)?;
    let b = load_base(&a.data, &a.model)?;
    let task = b.data.task();
    let report = run_splits(
        &b.scores,
        b.data.labels(),
        &b.split.held_out(),
        b.split.calib.len(),
        a.alpha,
        score_kind(task),
        a.splits,
        seed,
    )?;
    let coverage_law = coverage_law(&report)?;
    write_json(&a.out, &ConformalOutput { task, report, coverage_law })
}

pub fn correct_cmd(a: &CorrectArgs, seed: u64) -> Outcome {
    usage(check_alpha(a.alpha))?;
    check_splits(a.splits)?;
    let mut cfg = CorrectionConfig { seed, alpha: a.alpha, ..Default::default() };
    set_some!(cfg, a, gamma, tau, reg_coeff, epochs, lr, weight_decay, hidden, layers, dropout, warmup_epochs);
    if let Some(m) = a.membership {
        cfg.sign = match m {
            Membership::Below => MembershipSign::BelowThreshold,
            Membership::Above => MembershipSign::AboveThreshold,
        };
    }
    cfg.residual = a.residual;
    cfg.resample = a.resample;
    usage(cfg.validate())?;

    let b = load_base(&a.data, &a.model)?;
    let task = b.data.task();
    let (cm, training) = train_correction(&b.g, &b.scores, &b.data, &b.split.calib, &cfg)?;
    let corrected = correct(&cm, &b.adj, &b.scores)?;
    let pool = sorted_union(&cm.split.remaining_calib, &b.split.test);
    let cap = cm.split.remaining_calib.len();
    let kind = score_kind(task);
    let labels = b.data.labels();
    let base = run_splits(&b.scores, labels, &pool, cap, a.alpha, kind, a.splits, seed)?;
    let after = run_splits(&corrected, labels, &pool, cap, a.alpha, kind, a.splits, seed)?;
    let relative_reduction = 1.0 - after.ineff_mean / base.ineff_mean;

    if let Some(path) = &a.out_model {
        let file = CorrectionFile {
            config: cfg,
            report: training.clone(),
            model: cm.to_doc(),
        };
        write_json(path, &file)?;
    }
    write_json(
        &a.out,
        &CorrectOutput {
            task,
            alpha: a.alpha,
            gamma: cfg.gamma,
            base,
            corrected: after,
            relative_reduction,
            training,
        },
    )
}

pub fn coverage_dist(a: &CoverageDistArgs) -> Outcome {
    usage(check_alpha(a.alpha))?;
    if a.n == 0 || a.m == 0 || a.grid == 0 {
        return Err(CliError::Usage("--n, --m and --grid must be positive".into()));
    }
    let dist = CoverageDistribution::on_grid(a.n, a.m, a.alpha, a.grid)?;
    fs::write(&a.out, dist.to_csv()).map_err(cfgnn::Error::from)?;
    Ok(())
}

pub fn netfeat(a: &NetfeatArgs) -> Outcome {
    let (g, _) = load_bundle(&a.data)?;
    fs::write(&a.out, network_features(&g).to_csv()).map_err(cfgnn::Error::from)?;
    Ok(())
}

/// Scores to calibrate (base or corrected) and the node pool whose
/// calibration / test assignment is exchangeable for them.
struct Scored {
    base: Base,
    scores: Tensor,
    pool: Vec<usize>,
    calib_cap: usize,
}

fn load_scored(a: &ScoredArgs) -> Result<Scored, CliError> {
    usage(check_alpha(a.alpha))?;
    let base = load_base(&a.data, &a.model)?;
    let Some(path) = &a.correction else {
        return Ok(Scored {
            scores: base.scores.clone(),
            pool: base.split.held_out(),
            calib_cap: base.split.calib.len(),
            base,
        });
    };
    let file: CorrectionFile = read_json(path)?;
    let cm = CorrectionModel::from_doc(&file.model, &base.split.calib)?;
    let scores = correct(&cm, &base.adj, &base.scores)?;
    Ok(Scored {
        scores,
        pool: sorted_union(&cm.split.remaining_calib, &base.split.test),
        calib_cap: cm.split.remaining_calib.len(),
        base,
    })
}

fn covers(pred: &Prediction<f64>, labels: &Labels, v: usize) -> bool {
    match (pred, labels) {
        (Prediction::Set(s), Labels::Classes { y, .. }) => s.contains(&y[v]),
        (Prediction::Interval(iv), Labels::Targets(y)) => iv.contains(y[v]),
        _ => false,
    }
}

pub fn wsc(a: &WscArgs, seed: u64) -> Outcome {
    let mut cfg = WscConfig { seed, ..Default::default() };
    set_some!(cfg, a, delta, directions, split_fraction);
    usage(cfg.validate())?;
    let s = load_scored(&a.scored)?;
    let labels = s.base.data.labels();
    let kind = score_kind(s.base.data.task());
    let (calib, test) = split_pool(&s.pool, s.calib_cap, seed)?;
    let out = calibrate_and_predict(&s.scores, labels, &calib, &test, a.scored.alpha, kind)?;
    let covered: Vec<bool> = out
        .predictions
        .iter()
        .zip(&test)
        .map(|(p, &v)| covers(p, labels, v))
        .collect();
    let (x, d) = match a.features {
        FeatureSpace::Raw => (s.base.data.features().to_vec(), s.base.data.num_features()),
        FeatureSpace::Network => (network_features(&s.base.g).to_matrix(), 6),
    };
    let rows: Vec<f64> = test.iter().flat_map(|&v| x[v * d..(v + 1) * d].iter().copied()).collect();
    let result = worst_slice(&rows, d, &covered, &cfg)?;
    write_json(
        &a.out,
        &WscOutput {
            features: match a.features {
                FeatureSpace::Raw => "raw",
                FeatureSpace::Network => "network",
            },
            alpha: a.scored.alpha,
            calib_size: calib.len(),
            test_size: test.len(),
            coverage: out.coverage,
            result,
        },
    )
}

pub fn gap_test(a: &GapTestArgs, seed: u64) -> Outcome {
    let s = load_scored(&a.scored)?;
    let labels = s.base.data.labels();
    let kind = score_kind(s.base.data.task());
    let (calib, test) = split_pool(&s.pool, s.calib_cap, seed)?;
    let cal = calibrate_and_predict(&s.scores, labels, &calib, &test, a.scored.alpha, kind)?.calibration;
    let all: Vec<usize> = (0..s.base.g.num_nodes()).collect();
    let lengths: Vec<f64> = predict(&s.scores, &all, &cal)?.iter().map(|p| p.size()).collect();
    let result = edge_length_gap_test(&s.base.g, &lengths, seed)?;
    write_json(
        &a.out,
        &GapOutput {
            alpha: a.scored.alpha,
            mean_length: stats::mean(&lengths),
            result,
        },
    )
}
