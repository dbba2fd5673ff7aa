//! Predict-then-verify: pick the early checkpoint from the median training
//! loss, score the target model's training members there, and compare every
//! predictor against LiRA ground truth at the end of training.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datastore::{LabelSet, RepresentationSet};
use crate::error::{Error, Result};
use crate::eval::{
    ablation_report, auc, fpr_at_tpr, median_loss_criterion, operating_point, roc_curve, spearman_r,
    AblationGrid, AblationReport, CellKey, LossTrace, DEFAULT_LOSS_DECREASE, DEFAULT_TPR_TARGET,
};
use crate::lira::{
    counterfactual_memorization, global_lira_asr, ground_truth_from_quantile, local_lira_score, GroundTruthLabels, LiraConfig, LiraScore, ShadowSuite,
    VarianceMode, DEFAULT_QUANTILE,
};
use crate::matrix::Matrix;
use crate::predictors::{
    LogitRecord, MahalanobisOptions, PredictorInputs, PredictorRegistry, PredictorScores, PsmiPredictor,
};
use crate::psmi::{psmi_predict, FitScope, DEFAULT_DIRECTIONS};
use crate::synthetic::{checkpoint_tag, ShadowOutput, TrainRun};

/// Everything the pipeline reads about a target run and its shadow suite.
/// Layers are numbered from 1; the last layer holds the logits.
pub trait ArtifactSource: Sync {
    fn labels(&self) -> &LabelSet;
    fn members(&self) -> &[usize];
    fn suite(&self) -> &ShadowSuite;
    fn layer_count(&self) -> usize;
    /// Losses of the training members, aligned with [`ArtifactSource::members`].
    fn train_losses(&self, checkpoint: usize) -> Result<Vec<f64>>;
    /// Logits over the whole sample universe.
    fn logits(&self, checkpoint: usize) -> Result<Matrix>;
    fn representations(&self, checkpoint: usize, layer: usize) -> Result<Matrix>;

    fn checkpoint_epochs(&self) -> &[f64] {
        self.suite().checkpoint_epochs()
    }
}

/// An in-memory suite whose target run kept its representations.
pub struct InMemoryRun<'a> {
    output: &'a ShadowOutput,
    labels: &'a LabelSet,
}

impl<'a> InMemoryRun<'a> {
    pub fn new(output: &'a ShadowOutput, labels: &'a LabelSet) -> Result<Self> {
        if labels.len() != output.suite.sample_count() {
            return Err(Error::CountMismatch {
                left: labels.len(),
                right: output.suite.sample_count(),
            });
        }
        Ok(Self { output, labels })
    }

    fn target(&self) -> &TrainRun {
        self.output.target()
    }
}

impl ArtifactSource for InMemoryRun<'_> {
    fn labels(&self) -> &LabelSet {
        self.labels
    }

    fn members(&self) -> &[usize] {
        &self.target().members
    }

    fn suite(&self) -> &ShadowSuite {
        &self.output.suite
    }

    fn layer_count(&self) -> usize {
        self.target().layer_sizes.len() - 1
    }

    fn train_losses(&self, checkpoint: usize) -> Result<Vec<f64>> {
        self.target()
            .checkpoints
            .get(checkpoint)
            .map(|c| c.train_losses.clone())
            .ok_or_else(|| Error::MissingArtifact(format!("checkpoint {checkpoint}")))
    }

    fn logits(&self, checkpoint: usize) -> Result<Matrix> {
        self.target()
            .checkpoints
            .get(checkpoint)
            .map(|c| c.logits.clone())
            .ok_or_else(|| Error::MissingArtifact(format!("checkpoint {checkpoint}")))
    }

    fn representations(&self, checkpoint: usize, layer: usize) -> Result<Matrix> {
        let c = self
            .target()
            .checkpoints
            .get(checkpoint)
            .ok_or_else(|| Error::MissingArtifact(format!("checkpoint {checkpoint}")))?;
        let reps = c
            .representations
            .as_ref()
            .ok_or_else(|| Error::MissingArtifact("target representations".into()))?;
        layer
            .checked_sub(1)
            .and_then(|k| reps.get(k))
            .cloned()
            .ok_or_else(|| Error::MissingArtifact(format!("layer {layer}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub loss_decrease_fraction: f64,
    pub directions: usize,
    pub direction_seed: u64,
    pub fit_scope: FitScope,
    pub quantile: f64,
    pub tpr_target: f64,
    /// Epoch at which ground truth is measured; `None` uses the last checkpoint.
    pub ground_truth_epoch: Option<f64>,
    /// Representation layer; `None` uses the last hidden layer.
    pub layer: Option<usize>,
    pub threshold: f64,
    pub lira: LiraConfig,
    pub mahalanobis: MahalanobisOptions,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            loss_decrease_fraction: DEFAULT_LOSS_DECREASE,
            directions: DEFAULT_DIRECTIONS,
            direction_seed: 0,
            fit_scope: FitScope::InSample,
            quantile: DEFAULT_QUANTILE,
            tpr_target: DEFAULT_TPR_TARGET,
            ground_truth_epoch: None,
            layer: None,
            threshold: 0.0,
            lira: LiraConfig {
                variance: VarianceMode::PerSampleWithFallback,
                ..LiraConfig::default()
            },
            mahalanobis: MahalanobisOptions::default(),
        }
    }
}

impl PipelineConfig {
    pub fn registry(&self) -> PredictorRegistry {
        PredictorRegistry::with_settings(
            PsmiPredictor {
                directions: self.directions,
                seed: self.direction_seed,
                scope: self.fit_scope,
            },
            self.mahalanobis,
            self.lira,
        )
    }

    fn resolve_layer(&self, source: &dyn ArtifactSource) -> Result<usize> {
        let last_hidden = source.layer_count().saturating_sub(1).max(1);
        let layer = self.layer.unwrap_or(last_hidden);
        if layer == 0 || layer > source.layer_count() {
            return Err(Error::InvalidArgument(format!(
                "layer {layer} outside 1..={}",
                source.layer_count()
            )));
        }
        Ok(layer)
    }

    fn ground_truth_checkpoint(&self, source: &dyn ArtifactSource) -> Result<usize> {
        match self.ground_truth_epoch {
            Some(e) => source.suite().checkpoint_index(e),
            None => Ok(source.checkpoint_epochs().len() - 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorSummary {
    pub predictor: String,
    pub tpr_target: f64,
    pub fpr: f64,
    pub auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionReport {
    pub criterion_checkpoint: usize,
    pub criterion_epoch: f64,
    pub layer: usize,
    pub directions: usize,
    pub threshold: f64,
    pub ground_truth_epoch: f64,
    pub quantile: f64,
    /// Log-LiRA value above which a member counts as memorized.
    pub ground_truth_threshold: f64,
    pub members: usize,
    pub memorized: usize,
    pub predicted: usize,
    pub psmi_tpr: f64,
    pub psmi_fpr: f64,
    /// Predicted-positive rate differs from the quantile by more than a factor of 2.
    pub base_rate_mismatch: bool,
    pub smi: f64,
    pub predictors: Vec<PredictorSummary>,
}

impl PredictionReport {
    pub fn summary(&self, predictor: &str) -> Option<&PredictorSummary> {
        self.predictors.iter().find(|p| p.predictor == predictor)
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub report: PredictionReport,
    pub scores: Vec<PredictorScores>,
    pub predictions: Vec<bool>,
    pub ground_truth: GroundTruthLabels,
    pub lira: LiraScore,
}

impl PipelineOutput {
    pub fn scores(&self, predictor: &str) -> Option<&PredictorScores> {
        self.scores.iter().find(|s| s.name() == predictor)
    }
}

/// Representations of the training members at one checkpoint and layer.
pub fn member_representations(
    source: &dyn ArtifactSource,
    checkpoint: usize,
    layer: usize,
) -> Result<RepresentationSet> {
    let all = source.representations(checkpoint, layer)?;
    let labels = source.labels();
    let ids = source.members().iter().map(|&i| labels.sample_ids()[i]).collect();
    RepresentationSet::new(
        all.select_rows(source.members()),
        layer,
        checkpoint_tag(source.checkpoint_epochs()[checkpoint]),
        Some(ids),
    )
}

/// Median-loss trace of the target model.
pub fn loss_trace(source: &dyn ArtifactSource) -> Result<LossTrace> {
    let epochs = source.checkpoint_epochs().to_vec();
    let losses = (0..epochs.len()).map(|c| source.train_losses(c)).collect::<Result<_>>()?;
    LossTrace::new(epochs, losses)
}

/// Ground truth over the target's training members, in index order.
pub fn member_ground_truth(
    source: &dyn ArtifactSource,
    config: &PipelineConfig,
) -> Result<(LiraScore, GroundTruthLabels)> {
    let suite = source.suite();
    let checkpoint = config.ground_truth_checkpoint(source)?;
    let lira = local_lira_score(suite, suite.target_split(), checkpoint, &config.lira)?;
    if lira.sample_ids != source.members() {
        return Err(Error::InvalidArgument("target members disagree with the suite".into()));
    }
    let truth = ground_truth_from_quantile(&lira.scores, config.quantile)?;
    Ok((lira, truth))
}

fn score_cell(
    source: &dyn ArtifactSource,
    registry: &PredictorRegistry,
    member_labels: &LabelSet,
    predictor: &str,
    checkpoint: usize,
    layer: usize,
) -> Result<PredictorScores> {
    let p = registry.get(predictor)?;
    let tag = checkpoint_tag(source.checkpoint_epochs()[checkpoint]);
    let reps = if p.uses_representations() {
        Some(member_representations(source, checkpoint, layer)?)
    } else {
        None
    };
    let logits = if p.uses_representations() || predictor == "early_memorization" {
        None
    } else {
        let all = source.logits(checkpoint)?;
        Some(LogitRecord::new(
            all.select_rows(source.members()),
            tag.clone(),
            Some(member_labels.sample_ids().to_vec()),
        )?)
    };
    let inputs = PredictorInputs {
        labels: member_labels,
        logits: logits.as_ref(),
        representations: reps.as_ref(),
        shadows: Some((source.suite(), checkpoint)),
    };
    Ok(p.score(&inputs)?.with_provenance("checkpoint", tag).with_provenance("layer", layer))
}

/// Runs all four steps of the prediction procedure plus every baseline.
pub fn predict_pipeline(source: &dyn ArtifactSource, config: &PipelineConfig) -> Result<PipelineOutput> {
    let trace = loss_trace(source)?;
    let checkpoint = median_loss_criterion(&trace, config.loss_decrease_fraction)?;
    let layer = config.resolve_layer(source)?;
    let member_labels = source.labels().select(source.members())?;
    let (lira, truth) = member_ground_truth(source, config)?;
    let registry = config.registry();

    let names = registry.names();
    let scores: Vec<PredictorScores> = names
        .par_iter()
        .map(|name| score_cell(source, &registry, &member_labels, name, checkpoint, layer))
        .collect::<Result<_>>()?;

    let psmi = scores.iter().find(|s| s.name() == "psmi").expect("psmi is registered");
    let predictions = psmi_predict(psmi.raw(), config.threshold);
    let (psmi_tpr, psmi_fpr) = operating_point(&predictions, &truth.memorized)?;
    let predicted = predictions.iter().filter(|&&p| p).count();
    let rate = predicted as f64 / predictions.len() as f64;
    let base_rate_mismatch = rate < config.quantile / 2.0 || rate > config.quantile * 2.0;
    if base_rate_mismatch {
        log::warn!(
            "threshold {} flags {:.1}% of members against a {:.1}% memorized quantile",
            config.threshold,
            100.0 * rate,
            100.0 * config.quantile
        );
    }

    let mut predictors = Vec::with_capacity(scores.len());
    for s in &scores {
        let curve = roc_curve(&s.oriented(), &truth.memorized)?;
        predictors.push(PredictorSummary {
            predictor: s.name().to_string(),
            tpr_target: config.tpr_target,
            fpr: fpr_at_tpr(&curve, config.tpr_target),
            auc: auc(&curve),
        });
    }
    let gt_checkpoint = config.ground_truth_checkpoint(source)?;
    let report = PredictionReport {
        criterion_checkpoint: checkpoint,
        criterion_epoch: source.checkpoint_epochs()[checkpoint],
        layer,
        directions: config.directions,
        threshold: config.threshold,
        ground_truth_epoch: source.checkpoint_epochs()[gt_checkpoint],
        quantile: config.quantile,
        ground_truth_threshold: truth.threshold,
        members: predictions.len(),
        memorized: truth.positives(),
        predicted,
        psmi_tpr,
        psmi_fpr,
        base_rate_mismatch,
        smi: psmi.raw().iter().sum::<f64>() / psmi.len() as f64,
        predictors,
    };
    Ok(PipelineOutput {
        report,
        scores,
        predictions,
        ground_truth: truth,
        lira,
    })
}

/// Evaluates the requested grid against end-of-training ground truth.
/// Layer-independent predictors repeat their value in every layer row.
pub fn ablation_grid(
    source: &dyn ArtifactSource,
    grid: &AblationGrid,
    config: &PipelineConfig,
) -> Result<AblationReport> {
    let member_labels = source.labels().select(source.members())?;
    let (_, truth) = member_ground_truth(source, config)?;
    let registry = config.registry();
    let score = |cell: &CellKey| -> Result<Vec<f64>> {
        let checkpoint = source.suite().checkpoint_index(cell.checkpoint_epoch)?;
        if cell.layer == 0 || cell.layer > source.layer_count() {
            return Err(Error::MissingArtifact(format!("layer {}", cell.layer)));
        }
        Ok(score_cell(source, &registry, &member_labels, &cell.predictor, checkpoint, cell.layer)?.oriented())
    };
    Ok(ablation_report(grid, &truth.memorized, config.tpr_target, score))
}

/// Agreement between counterfactual memorization and global log-LiRA.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemorizationAgreement {
    pub checkpoint_epoch: f64,
    pub samples: usize,
    pub spearman: f64,
    /// Spearman R over the quarter of samples with the highest global log-LiRA.
    pub spearman_top_quarter: f64,
    pub top_quarter: usize,
}

/// Global log-LiRA here is the mean membership-signed log ratio, the
/// continuous counterpart of the attack success rate.
pub fn memorization_agreement(
    suite: &ShadowSuite,
    checkpoint: usize,
    lira: &LiraConfig,
) -> Result<MemorizationAgreement> {
    let global = global_lira_asr(suite, checkpoint, lira)?;
    let cm = counterfactual_memorization(suite, checkpoint)?;
    let g = &global.signed_log_lira;
    let mut order: Vec<usize> = (0..g.len()).collect();
    order.sort_by(|&a, &b| g[b].total_cmp(&g[a]).then(a.cmp(&b)));
    let top = &order[..g.len() / 4];
    let pick = |v: &[f64]| top.iter().map(|&i| v[i]).collect::<Vec<f64>>();
    Ok(MemorizationAgreement {
        checkpoint_epoch: suite.checkpoint_epochs()[checkpoint],
        samples: g.len(),
        spearman: spearman_r(&cm, g)?,
        spearman_top_quarter: spearman_r(&pick(&cm), &pick(g))?,
        top_quarter: top.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{run_shadow_suite, sample_mixture, ShadowConfig, MixtureConfig, TrainConfig};

    fn tiny_run() -> (ShadowOutput, LabelSet) {
        let s = sample_mixture(&MixtureConfig::symmetric(4, 2.0, 0.1, 200, 1)).unwrap();
        let labels = s.label_set().unwrap();
        let cfg = ShadowConfig {
            shadows: 16,
            base_seed: 2,
            train: TrainConfig {
                hidden: vec![16, 8],
                epochs: 4,
                ..Default::default()
            },
            ..Default::default()
        };
        (run_shadow_suite(&s.data, &labels, &cfg).unwrap(), labels)
    }

    #[test]
    fn pipeline_reports_every_predictor() {
        let (out, labels) = tiny_run();
        let src = InMemoryRun::new(&out, &labels).unwrap();
        let cfg = PipelineConfig {
            directions: 50,
            loss_decrease_fraction: 0.5,
            ..Default::default()
        };
        let o = predict_pipeline(&src, &cfg).unwrap();
        assert_eq!(o.report.predictors.len(), 5);
        assert_eq!(o.report.members, 100);
        assert_eq!(o.report.memorized, 10);
        assert_eq!(o.report.layer, 2);
        assert_eq!(o.scores.len(), 5);

        let all = PipelineConfig {
            threshold: f64::INFINITY,
            ..cfg.clone()
        };
        let o = predict_pipeline(&src, &all).unwrap();
        assert_eq!((o.report.psmi_tpr, o.report.psmi_fpr), (1.0, 1.0));
        assert!(o.report.base_rate_mismatch);
    }

    #[test]
    fn unreachable_criterion_is_an_error() {
        let (out, labels) = tiny_run();
        let src = InMemoryRun::new(&out, &labels).unwrap();
        let cfg = PipelineConfig {
            directions: 10,
            loss_decrease_fraction: 1.0,
            ..Default::default()
        };
        assert!(matches!(predict_pipeline(&src, &cfg), Err(Error::CriterionNotReached { .. })));
    }

    #[test]
    fn grid_row_count() {
        let (out, labels) = tiny_run();
        let src = InMemoryRun::new(&out, &labels).unwrap();
        let cfg = PipelineConfig {
            directions: 20,
            ..Default::default()
        };
        let grid = AblationGrid {
            checkpoints: vec![0.4, 2.0],
            layers: vec![1, 2, 3],
            predictors: vec!["psmi".into(), "loss".into()],
        };
        let r = ablation_grid(&src, &grid, &cfg).unwrap();
        assert_eq!(r.rows.len(), 12);
        assert!(r.is_complete());
        let bad = AblationGrid {
            layers: vec![1, 9],
            ..grid
        };
        let r = ablation_grid(&src, &bad, &cfg).unwrap();
        assert_eq!(r.rows.len(), 4);
        assert_eq!(r.missing.len(), 4);
    }

    #[test]
    fn agreement_uses_a_quarter_of_samples() {
        let (out, _) = tiny_run();
        let last = out.suite.checkpoint_epochs().len() - 1;
        let cfg = LiraConfig {
            variance: VarianceMode::PerSampleWithFallback,
            ..LiraConfig::default()
        };
        let a = memorization_agreement(&out.suite, last, &cfg).unwrap();
        assert_eq!((a.samples, a.top_quarter), (200, 50));
        assert!(a.spearman.abs() <= 1.0 && a.spearman_top_quarter.abs() <= 1.0);
    }
}
