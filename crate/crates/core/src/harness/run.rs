use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::bayes::pretrain_objective;
use crate::data::{
    apply_shift, gen_gaussian_blobs, gen_two_moons, load_idx, load_idx_labels, BatchIterator, DomainDataset,
    DomainTag, LabeledBatch, SealedLabels, ShiftSpec, TargetDomain,
};
use crate::entropy::{batch_mean_entropy, cross_entropy_label, renyi_entropy, ProbVector, RenyiOrder};
use crate::error::{Error, Result};
use crate::gvr::gvr_step;
use crate::model::Classifier;
use crate::objective::{Objective, Term};
use crate::tensor::Tensor;
use crate::uda::{
    generate_pseudo_labels, rer_objective, self_training_objective, source_ce_objective, target_entropy_term,
    target_pseudo_term, PseudoLabelSet, RerConfig,
};

use super::config::{DatasetConfig, ExperimentConfig, ShiftConfig};
use super::metrics::{format_g6, write_metrics, MetricsRecord, Phase};

const STREAM_SOURCE: u64 = 1;
const STREAM_TARGET: u64 = 2;
const STREAM_MODEL: u64 = 3;
const STREAM_EVAL: u64 = 4;
const STREAM_PRETRAIN_BATCHES: u64 = 5;
const STREAM_ADAPT_BATCHES: u64 = 6;
const STREAM_TARGET_BATCHES: u64 = 7;

/// SplitMix64 finalizer over `seed ⊕ tag`; gives each consumer its own seed.
pub fn sub_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for every evaluation-time Monte-Carlo draw of a run.
pub fn eval_seed(cfg: &ExperimentConfig) -> u64 {
    sub_seed(cfg.seed, STREAM_EVAL)
}

#[derive(Clone, Debug)]
pub struct Domains {
    pub source: DomainDataset,
    pub target: TargetDomain,
}

fn shift_spec(shift: &ShiftConfig) -> ShiftSpec {
    match shift {
        ShiftConfig::None => ShiftSpec::None,
        ShiftConfig::Rotation { angle } => ShiftSpec::Rotation(*angle),
        ShiftConfig::Translation { offset } => ShiftSpec::Translation(offset.clone()),
    }
}

fn flatten_images(t: Tensor) -> Result<Tensor> {
    let n = t.shape()[0];
    let d = t.len() / n;
    Tensor::matrix(n, d, t.into_data())
}

pub fn load_domains(cfg: &ExperimentConfig) -> Result<Domains> {
    let s_seed = sub_seed(cfg.seed, STREAM_SOURCE);
    let t_seed = sub_seed(cfg.seed, STREAM_TARGET);
    match &cfg.dataset {
        DatasetConfig::TwoMoons { n, noise_sd, shift } => {
            let source = gen_two_moons(*n, *noise_sd, s_seed)?;
            let target = apply_shift(&gen_two_moons(*n, *noise_sd, t_seed)?, &shift_spec(shift))?;
            Ok(Domains { source, target })
        }
        DatasetConfig::Blobs { n, centers, sd, shift } => {
            let k = centers.len();
            let source = gen_gaussian_blobs(*n, k, centers, *sd, s_seed)?;
            let target = apply_shift(&gen_gaussian_blobs(*n, k, centers, *sd, t_seed)?, &shift_spec(shift))?;
            Ok(Domains { source, target })
        }
        DatasetConfig::Idx {
            source_images,
            source_labels,
            target_images,
            target_labels,
            num_classes,
        } => {
            let source = DomainDataset::new(
                flatten_images(load_idx(source_images)?)?,
                Some(load_idx_labels(source_labels)?),
                DomainTag::Source,
                *num_classes,
            )?;
            let labels = target_labels.as_ref().map(load_idx_labels).transpose()?;
            let target = DomainDataset::new(
                flatten_images(load_idx(target_images)?)?,
                labels,
                DomainTag::Target,
                *num_classes,
            )?;
            if target.dim() != source.dim() {
                return Err(Error::dim(format!("target dimension {}", source.dim()), target.dim()));
            }
            Ok(Domains {
                source,
                target: target.into_target(),
            })
        }
    }
}

pub fn build_classifier(cfg: &ExperimentConfig, input_dim: usize, num_classes: usize) -> Result<Classifier> {
    Classifier::new(
        input_dim,
        &cfg.model.hidden,
        num_classes,
        cfg.model.head(),
        sub_seed(cfg.seed, STREAM_MODEL),
    )
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub mean_shannon_entropy: f64,
    pub mean_min_entropy: f64,
    /// Mean cross-entropy against the true labels.
    pub mean_ce: f64,
}

/// Scores `data` against its own labels, or `sealed` when it has none.
pub fn evaluate(
    model: &Classifier,
    data: &DomainDataset,
    sealed: Option<&SealedLabels>,
    eval_samples: usize,
    eval_seed: u64,
) -> Result<Evaluation> {
    let probs = model.predict_probs(data.features(), eval_samples, eval_seed)?;
    score(&probs, data, sealed)
}

fn score(probs: &[ProbVector], data: &DomainDataset, sealed: Option<&SealedLabels>) -> Result<Evaluation> {
    let predictions: Vec<usize> = probs.iter().map(ProbVector::argmax).collect();
    let (accuracy, mean_ce) = match (data.labels(), sealed) {
        (Some(labels), _) => {
            let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
            let ce = mean_label_ce(probs, labels)?;
            (hits as f64 / labels.len() as f64, ce)
        }
        (None, Some(s)) => (s.accuracy(&predictions)?, f64::NAN),
        (None, None) => {
            return Err(Error::Validation("dataset has neither labels nor sealed labels".into()));
        }
    };
    Ok(Evaluation {
        accuracy,
        mean_shannon_entropy: batch_mean_entropy(probs, RenyiOrder::Shannon)?,
        mean_min_entropy: batch_mean_entropy(probs, RenyiOrder::MinEntropy)?,
        mean_ce,
    })
}

fn mean_label_ce(probs: &[ProbVector], labels: &[usize]) -> Result<f64> {
    let mut total = 0.0;
    for (p, &l) in probs.iter().zip(labels) {
        total += cross_entropy_label(l, p)?;
    }
    Ok(total / labels.len() as f64)
}

fn check_finite(loss: f64, phase: Phase, epoch: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Numerical(format!("non-finite loss during {} epoch {epoch}", phase.as_str())))
    }
}

fn step(model: &mut Classifier, obj: &Objective, lr: f64, phase: Phase, epoch: usize) -> Result<f64> {
    let loss = obj.backward(model.mlp_mut())?;
    check_finite(loss, phase, epoch)?;
    model.mlp_mut().sgd_step(lr)?;
    if !model.mlp().sq_norm().is_finite() {
        return Err(Error::Numerical(format!("parameters diverged during {} epoch {epoch}", phase.as_str())));
    }
    Ok(loss)
}

fn batches(n: usize, batch_size: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    Ok(BatchIterator::new(n, batch_size.min(n), seed, false)?.batches())
}

/// Supervised source training: mini-batch SGD on the negative evidence
/// lower bound (plain cross-entropy plus weight decay for a softmax head).
pub fn run_pretrain(cfg: &ExperimentConfig, domains: &Domains) -> Result<(Classifier, Vec<MetricsRecord>)> {
    cfg.validate()?;
    let source = &domains.source;
    let mut model = build_classifier(cfg, source.dim(), source.num_classes())?;
    let opt = &cfg.optimizer;
    let mut records = Vec::with_capacity(opt.epochs_pretrain);
    for epoch in 1..=opt.epochs_pretrain {
        let seed = sub_seed(sub_seed(cfg.seed, STREAM_PRETRAIN_BATCHES), epoch as u64);
        for idx in batches(source.len(), opt.batch_size, seed)? {
            let batch = source.labeled_batch(&idx)?;
            let obj = pretrain_objective(&mut model, &batch, opt.weight_decay)?;
            step(&mut model, &obj, opt.lr, Phase::Pretrain, epoch)?;
        }
        records.push(epoch_record(&model, cfg, domains, Phase::Pretrain, epoch)?);
    }
    Ok((model, records))
}

fn epoch_record(
    model: &Classifier,
    cfg: &ExperimentConfig,
    domains: &Domains,
    phase: Phase,
    epoch: usize,
) -> Result<MetricsRecord> {
    let m = cfg.model.m_eval;
    let seed = eval_seed(cfg);
    let src = evaluate(model, &domains.source, None, m, seed)?;
    let tgt = evaluate(model, domains.target.data(), domains.target.sealed(), m, seed)?;
    Ok(MetricsRecord {
        phase,
        epoch,
        source_acc: src.accuracy,
        target_acc: tgt.accuracy,
        target_mean_shannon_entropy: tgt.mean_shannon_entropy,
        target_mean_min_entropy: tgt.mean_min_entropy,
        pseudo_label_count: None,
        pseudo_label_accuracy: None,
        gvr_variance: None,
        source_ce: Some(src.mean_ce),
        target_term: None,
    })
}

enum TargetBatch {
    Pseudo(LabeledBatch),
    Raw(Tensor),
}

fn target_term(model: &mut Classifier, tb: &TargetBatch, order: RenyiOrder, weight: f64) -> Result<Term> {
    match tb {
        TargetBatch::Pseudo(b) => target_pseudo_term(model, b, weight),
        TargetBatch::Raw(t) => target_entropy_term(model, t, order, weight),
    }
}

/// Adaptation: per epoch, refresh pseudo-labels (self-training only), take
/// one SGD step per source batch paired with a target batch, optionally a
/// gradient-variance step on target batches, then record metrics. Epoch 0
/// records the incoming model.
pub fn run_adapt(
    mut model: Classifier,
    cfg: &ExperimentConfig,
    domains: &Domains,
) -> Result<(Classifier, Vec<MetricsRecord>)> {
    cfg.validate()?;
    let opt = &cfg.optimizer;
    let ob = &cfg.objective;
    let source = &domains.source;
    let target = domains.target.data();
    if model.num_classes() != source.num_classes() || model.mlp().input_width() != source.dim() {
        return Err(Error::dim(
            format!("model for D = {}, K = {}", source.dim(), source.num_classes()),
            format!("D = {}, K = {}", model.mlp().input_width(), model.num_classes()),
        ));
    }
    let self_training = ob.order == RenyiOrder::MinEntropy;
    let rer = RerConfig::new(ob.order, ob.beta, ob.constraint_c)?;
    let gvr_cfg = cfg.gvr_config();
    let gvr_on = cfg.gvr_enabled();
    if gvr_on && !self_training {
        log::warn!("gradient-variance regularization combined with a finite-order entropy objective");
    }
    let eseed = eval_seed(cfg);

    let mut records = vec![epoch_record(&model, cfg, domains, Phase::Adapt, 0)?];
    for epoch in 1..=opt.epochs_adapt {
        let pseudo: Option<PseudoLabelSet> = if self_training {
            let p = ob.portion(epoch, opt.epochs_adapt);
            Some(generate_pseudo_labels(
                &model,
                target,
                p,
                ob.class_balanced,
                cfg.model.m_eval,
                sub_seed(eseed, epoch as u64),
            )?)
        } else {
            None
        };
        let target_rows = match &pseudo {
            Some(set) => set.len(),
            None => target.len(),
        };
        let src_batches = batches(
            source.len(),
            opt.batch_size,
            sub_seed(sub_seed(cfg.seed, STREAM_ADAPT_BATCHES), epoch as u64),
        )?;
        let tgt_batches = if target_rows == 0 {
            Vec::new()
        } else {
            batches(
                target_rows,
                opt.batch_size,
                sub_seed(sub_seed(cfg.seed, STREAM_TARGET_BATCHES), epoch as u64),
            )?
        };
        let make_target = |positions: &[usize]| -> Result<TargetBatch> {
            match &pseudo {
                Some(set) => Ok(TargetBatch::Pseudo(set.batch(target, positions)?)),
                None => Ok(TargetBatch::Raw(target.features().select_rows(positions)?)),
            }
        };

        let mut variances = Vec::new();
        for (i, sidx) in src_batches.iter().enumerate() {
            let sb = source.labeled_batch(sidx)?;
            let tb = if tgt_batches.is_empty() || ob.beta == 0.0 {
                None
            } else {
                Some(make_target(&tgt_batches[i % tgt_batches.len()])?)
            };
            if ob.alternate {
                let obj = source_ce_objective(&mut model, &sb)?.with_weight_decay(opt.weight_decay)?;
                step(&mut model, &obj, opt.lr, Phase::Adapt, epoch)?;
                if let Some(tb) = &tb {
                    let term = target_term(&mut model, tb, ob.order, ob.beta)?;
                    let obj = Objective::new(model.num_classes()).with_term(term);
                    step(&mut model, &obj, opt.lr, Phase::Adapt, epoch)?;
                }
            } else {
                let obj = match &tb {
                    Some(TargetBatch::Pseudo(b)) => self_training_objective(&mut model, &sb, Some(b), ob.beta)?,
                    Some(TargetBatch::Raw(t)) => rer_objective(&mut model, &sb, Some(t), &rer)?,
                    None => source_ce_objective(&mut model, &sb)?,
                };
                let obj = obj.with_weight_decay(opt.weight_decay)?;
                step(&mut model, &obj, opt.lr, Phase::Adapt, epoch)?;
            }
            if gvr_on && !tgt_batches.is_empty() && ob.beta > 0.0 {
                let n = gvr_cfg.num_minibatches;
                let weight = ob.beta / n as f64;
                let mut objs = Vec::with_capacity(n);
                for j in 0..n {
                    let tb = make_target(&tgt_batches[(i * n + j) % tgt_batches.len()])?;
                    let term = target_term(&mut model, &tb, ob.order, weight)?;
                    objs.push(Objective::new(model.num_classes()).with_term(term));
                }
                let report = gvr_step(model.mlp_mut(), &objs, &gvr_cfg)?;
                check_finite(report.task_loss, Phase::Adapt, epoch)?;
                variances.push(report.variance);
            }
        }

        let mut rec = epoch_record(&model, cfg, domains, Phase::Adapt, epoch)?;
        let probs = model.predict_probs(target.features(), cfg.model.m_eval, eseed)?;
        rec.target_term = Some(match &pseudo {
            Some(set) if set.is_empty() => 0.0,
            Some(set) => {
                let mut ce = 0.0;
                for e in set.entries() {
                    ce += cross_entropy_label(e.label, &probs[e.index])?;
                }
                ob.beta * ce / set.len() as f64
            }
            None => {
                let mut h = 0.0;
                for p in &probs {
                    h += renyi_entropy(p, ob.order)?;
                }
                ob.beta * h / probs.len() as f64
            }
        });
        if let Some(set) = &pseudo {
            rec.pseudo_label_count = Some(set.len());
            rec.pseudo_label_accuracy = domains.target.sealed().and_then(|s| s.accuracy_at(&set.picks()));
        }
        if gvr_on {
            rec.gvr_variance = Some(if variances.is_empty() {
                0.0
            } else {
                variances.iter().sum::<f64>() / variances.len() as f64
            });
        }
        records.push(rec);
    }
    Ok((model, records))
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub model: Classifier,
    pub pretrain: Vec<MetricsRecord>,
    pub adapt: Vec<MetricsRecord>,
}

impl RunOutput {
    pub fn records(&self) -> Vec<MetricsRecord> {
        self.pretrain.iter().chain(&self.adapt).cloned().collect()
    }
}

/// Pretraining followed by adaptation on freshly loaded domains.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let domains = load_domains(cfg)?;
    let (model, pretrain) = run_pretrain(cfg, &domains)?;
    let (model, adapt) = run_adapt(model, cfg, &domains)?;
    Ok(RunOutput { model, pretrain, adapt })
}

/// Flat weight dump: `P` as little-endian u64, then `P` little-endian f64.
pub fn save_weights(model: &Classifier, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let theta = model.mlp().flatten();
    let mut bytes = Vec::with_capacity(8 + 8 * theta.len());
    bytes.extend_from_slice(&(theta.len() as u64).to_le_bytes());
    for v in &theta {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 8 {
        return Err(Error::Format {
            offset: bytes.len(),
            message: "weight file shorter than its 8-byte length prefix".into(),
        });
    }
    let p = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"));
    let expected = p.checked_mul(8).and_then(|b| b.checked_add(8));
    if expected != Some(bytes.len() as u64) {
        return Err(Error::Format {
            offset: 8,
            message: format!("length prefix says {p} values, file holds {} bytes", bytes.len()),
        });
    }
    Ok(bytes[8..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

/// Classifier for `cfg` with weights read from a dump.
pub fn restore_classifier(cfg: &ExperimentConfig, domains: &Domains, path: impl AsRef<Path>) -> Result<Classifier> {
    let mut model = build_classifier(cfg, domains.source.dim(), domains.source.num_classes())?;
    model.mlp_mut().unflatten(&load_weights(path)?)?;
    Ok(model)
}

/// Per-seed headline numbers from one sweep run.
#[derive(Clone, Debug, PartialEq)]
pub struct SeedOutcome {
    pub seed: u64,
    /// Target accuracy of the pretrained model (adaptation epoch 0).
    pub pretrained_target_acc: f64,
    pub final_target_acc: f64,
    pub final_source_acc: f64,
    pub initial_target_shannon: f64,
    pub final_target_shannon: f64,
}

impl SeedOutcome {
    pub fn from_records(seed: u64, adapt: &[MetricsRecord]) -> Result<Self> {
        let (first, last) = match (adapt.first(), adapt.last()) {
            (Some(f), Some(l)) => (f, l),
            _ => return Err(Error::State("run produced no adaptation records".into())),
        };
        Ok(Self {
            seed,
            pretrained_target_acc: first.target_acc,
            final_target_acc: last.target_acc,
            final_source_acc: last.source_acc,
            initial_target_shannon: first.target_mean_shannon_entropy,
            final_target_shannon: last.target_mean_shannon_entropy,
        })
    }

    pub fn gain(&self) -> f64 {
        self.final_target_acc - self.pretrained_target_acc
    }
}

/// Parallelism for [`sweep`]: `UDA_CALIB_THREADS` if set, else the number
/// of available cores.
pub fn sweep_threads() -> usize {
    std::env::var("UDA_CALIB_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&t| t > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Mean and sample standard deviation.
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

type Column = (&'static str, fn(&SeedOutcome) -> f64);

pub fn summary_csv(outcomes: &[SeedOutcome]) -> String {
    let cols: [Column; 6] = [
        ("pretrained_target_acc", |o| o.pretrained_target_acc),
        ("final_target_acc", |o| o.final_target_acc),
        ("acc_gain", SeedOutcome::gain),
        ("final_source_acc", |o| o.final_source_acc),
        ("initial_target_shannon", |o| o.initial_target_shannon),
        ("final_target_shannon", |o| o.final_target_shannon),
    ];
    let mut out = String::from("metric,mean,sd,seeds\n");
    for (name, f) in cols {
        let xs: Vec<f64> = outcomes.iter().map(f).collect();
        let (m, s) = mean_sd(&xs);
        out.push_str(&format!("{name},{},{},{}\n", format_g6(m), format_g6(s), outcomes.len()));
    }
    out
}

/// Runs `cfg` once per seed on up to `threads` worker threads. Writes
/// `seed_<s>.csv` per seed and `summary.csv` into `out_dir`.
pub fn sweep(cfg: &ExperimentConfig, seeds: &[u64], out_dir: &Path, threads: usize) -> Result<Vec<SeedOutcome>> {
    cfg.validate()?;
    if seeds.is_empty() {
        return Err(Error::Config("sweep needs at least one seed".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<SeedOutcome>>>> = Mutex::new((0..seeds.len()).map(|_| None).collect());
    let workers = threads.clamp(1, seeds.len());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= seeds.len() {
                    break;
                }
                let outcome = run_seed(cfg, seeds[i], out_dir);
                results.lock().expect("no worker panicked")[i] = Some(outcome);
            });
        }
    });
    let outcomes = results
        .into_inner()
        .expect("no worker panicked")
        .into_iter()
        .map(|r| r.expect("every seed ran"))
        .collect::<Result<Vec<_>>>()?;
    let path = out_dir.join("summary.csv");
    std::fs::write(&path, summary_csv(&outcomes)).map_err(|e| Error::io(&path, e))?;
    Ok(outcomes)
}

fn run_seed(cfg: &ExperimentConfig, seed: u64, out_dir: &Path) -> Result<SeedOutcome> {
    let mut cfg = cfg.clone();
    cfg.seed = seed;
    let run = run_experiment(&cfg)?;
    write_metrics(&run.records(), seed_csv_path(out_dir, seed))?;
    SeedOutcome::from_records(seed, &run.adapt)
}

pub fn seed_csv_path(out_dir: &Path, seed: u64) -> PathBuf {
    out_dir.join(format!("seed_{seed}.csv"))
}
