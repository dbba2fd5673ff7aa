//! Ground-truth memorization from shadow models: local and global
//! likelihood-ratio attacks on logit gaps, and counterfactual memorization.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};
use crate::stats::{binomial_survival, log_normal_pdf};

/// Shadow models used by the desk-scale pipeline (100 at full scale).
pub const DEFAULT_SHADOWS: usize = 16;
/// Fraction of samples labelled memorized by [`ground_truth_from_quantile`].
pub const DEFAULT_QUANTILE: f64 = 0.10;
/// Relative floor on in/out variances, scaled by the pooled variance.
pub const LIRA_VARIANCE_FLOOR_SCALE: f64 = 1e-8;

/// Correct-class logit minus the largest other logit.
pub fn logit_gap(logits: &[f64], label: usize) -> f64 {
    let other = logits
        .iter()
        .enumerate()
        .filter(|(c, _)| *c != label)
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    logits[label] - other
}

/// Membership mask of split `split_id`: a uniformly random `floor(n/2)`-subset.
pub fn split_mask(n: usize, base_seed: u64, split_id: u32) -> Vec<bool> {
    let mut rng = stream(base_seed, Purpose::Splits, split_id as u64);
    let mut indices: Vec<usize> = (0..n).collect();
    let (chosen, _) = indices.partial_shuffle(&mut rng, n / 2);
    let mut mask = vec![false; n];
    for &i in chosen.iter() {
        mask[i] = true;
    }
    mask
}

pub fn make_splits(n: usize, m: usize, base_seed: u64) -> Result<Vec<Vec<bool>>> {
    if n < 4 || m < 2 {
        return Err(Error::InvalidArgument(format!(
            "need N >= 4 and M >= 2, got N = {n}, M = {m}"
        )));
    }
    Ok((0..m as u32).map(|s| split_mask(n, base_seed, s)).collect())
}

/// One shadow model: its training split and its logit gaps on every sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ShadowEntry {
    pub split_id: u32,
    pub mask: Vec<bool>,
    /// `gaps[checkpoint][sample]`.
    pub gaps: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShadowSuite {
    sample_count: usize,
    checkpoint_epochs: Vec<f64>,
    target_split: u32,
    entries: Vec<ShadowEntry>,
}

impl ShadowSuite {
    pub fn new(
        sample_count: usize,
        checkpoint_epochs: Vec<f64>,
        target_split: u32,
        entries: Vec<ShadowEntry>,
    ) -> Result<Self> {
        if entries.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "a shadow suite needs at least 2 models, got {}",
                entries.len()
            )));
        }
        let mut ids = BTreeSet::new();
        for e in &entries {
            if !ids.insert(e.split_id) {
                return Err(Error::InvalidArgument(format!("duplicate split_id {}", e.split_id)));
            }
            if e.mask.len() != sample_count {
                return Err(Error::CountMismatch {
                    left: e.mask.len(),
                    right: sample_count,
                });
            }
            let members = e.mask.iter().filter(|&&b| b).count();
            if members != sample_count / 2 {
                return Err(Error::InvalidArgument(format!(
                    "split {} has {members} members, expected {}",
                    e.split_id,
                    sample_count / 2
                )));
            }
            if e.gaps.len() != checkpoint_epochs.len() {
                return Err(Error::CountMismatch {
                    left: e.gaps.len(),
                    right: checkpoint_epochs.len(),
                });
            }
            if let Some(g) = e.gaps.iter().find(|g| g.len() != sample_count) {
                return Err(Error::CountMismatch {
                    left: g.len(),
                    right: sample_count,
                });
            }
        }
        if !ids.contains(&target_split) {
            return Err(Error::InvalidArgument(format!(
                "target split {target_split} is not in the suite"
            )));
        }
        Ok(Self {
            sample_count,
            checkpoint_epochs,
            target_split,
            entries,
        })
    }

    pub fn sample_count(&self) -> usize {
        self.sample_count
    }

    pub fn checkpoint_epochs(&self) -> &[f64] {
        &self.checkpoint_epochs
    }

    pub fn target_split(&self) -> u32 {
        self.target_split
    }

    pub fn entries(&self) -> &[ShadowEntry] {
        &self.entries
    }

    pub fn entry(&self, split_id: u32) -> Result<&ShadowEntry> {
        self.entries
            .iter()
            .find(|e| e.split_id == split_id)
            .ok_or_else(|| Error::InvalidArgument(format!("split {split_id} is not in the suite")))
    }

    /// Training members of the given split, in index order.
    pub fn members(&self, split_id: u32) -> Result<Vec<usize>> {
        Ok(self
            .entry(split_id)?
            .mask
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| i)
            .collect())
    }

    pub fn checkpoint_index(&self, epoch: f64) -> Result<usize> {
        self.checkpoint_epochs
            .iter()
            .position(|&e| (e - epoch).abs() < 1e-9)
            .ok_or_else(|| Error::MissingArtifact(format!("no checkpoint at epoch {epoch}")))
    }

    fn check_checkpoint(&self, checkpoint: usize) -> Result<()> {
        if checkpoint >= self.checkpoint_epochs.len() {
            return Err(Error::MissingArtifact(format!("checkpoint index {checkpoint}")));
        }
        Ok(())
    }
}

/// How in/out variances are estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceMode {
    /// Each sample's own in/out variance; needs two observations per side.
    #[default]
    PerSample,
    /// One variance per side, averaged over samples.
    Global,
    /// Per-sample where a side has two observations, global otherwise.
    PerSampleWithFallback,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LiraConfig {
    pub variance: VarianceMode,
    pub floor_scale: f64,
}

impl Default for LiraConfig {
    fn default() -> Self {
        Self {
            variance: VarianceMode::PerSample,
            floor_scale: LIRA_VARIANCE_FLOOR_SCALE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianFit {
    pub mean: f64,
    pub variance: f64,
    pub count: usize,
}

fn mean_var(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var)
}

/// In/out observations of one sample.
struct Observations {
    inside: Vec<f64>,
    outside: Vec<f64>,
}

impl Observations {
    fn gather(models: &[&ShadowEntry], checkpoint: usize, sample: usize) -> Self {
        let mut inside = Vec::new();
        let mut outside = Vec::new();
        for m in models {
            let g = m.gaps[checkpoint][sample];
            if m.mask[sample] {
                inside.push(g);
            } else {
                outside.push(g);
            }
        }
        Self { inside, outside }
    }
}

fn pooled_side_variance(obs: &[Observations], inside: bool) -> Option<f64> {
    let vars: Vec<f64> = obs
        .iter()
        .map(|o| if inside { &o.inside } else { &o.outside })
        .filter(|v| v.len() >= 2)
        .map(|v| mean_var(v).1)
        .collect();
    (!vars.is_empty()).then(|| vars.iter().sum::<f64>() / vars.len() as f64)
}

type SideFits = Vec<(GaussianFit, GaussianFit)>;

/// Fits both sides for every sample and scores each target gap.
fn attack(
    obs: &[Observations],
    samples: &[usize],
    target_gaps: impl Fn(usize) -> f64,
    config: &LiraConfig,
) -> Result<(Vec<f64>, SideFits)> {
    let min_side = match config.variance {
        VarianceMode::PerSample => 2,
        _ => 1,
    };
    let short: Vec<usize> = samples
        .iter()
        .zip(obs)
        .filter(|(_, o)| o.inside.len() < min_side || o.outside.len() < min_side)
        .map(|(&s, _)| s)
        .collect();
    if !short.is_empty() {
        return Err(Error::InsufficientObservations { sample_ids: short });
    }
    let global = match config.variance {
        VarianceMode::PerSample => None,
        _ => {
            let vin = pooled_side_variance(obs, true);
            let vout = pooled_side_variance(obs, false);
            match (vin, vout) {
                (Some(a), Some(b)) => Some((a, b)),
                _ => return Err(Error::InsufficientObservations { sample_ids: samples.to_vec() }),
            }
        }
    };
    let mut scores = Vec::with_capacity(samples.len());
    let mut fits = Vec::with_capacity(samples.len());
    for (&s, o) in samples.iter().zip(obs) {
        let (m_in, v_in) = mean_var(&o.inside);
        let (m_out, v_out) = mean_var(&o.outside);
        let (v_in, v_out) = match (config.variance, global) {
            (VarianceMode::Global, Some((gi, go))) => (gi, go),
            (VarianceMode::PerSampleWithFallback, Some((gi, go))) => (
                if o.inside.len() >= 2 { v_in } else { gi },
                if o.outside.len() >= 2 { v_out } else { go },
            ),
            _ => (v_in, v_out),
        };
        let all: Vec<f64> = o.inside.iter().chain(&o.outside).copied().collect();
        let floor = config.floor_scale * (mean_var(&all).1 + 1e-30);
        let fit_in = GaussianFit {
            mean: m_in,
            variance: v_in.max(floor),
            count: o.inside.len(),
        };
        let fit_out = GaussianFit {
            mean: m_out,
            variance: v_out.max(floor),
            count: o.outside.len(),
        };
        let g = target_gaps(s);
        scores.push(log_normal_pdf(g, fit_in.mean, fit_in.variance) - log_normal_pdf(g, fit_out.mean, fit_out.variance));
        fits.push((fit_in, fit_out));
    }
    Ok((scores, fits))
}

/// Log likelihood ratio `log p_in(target) - log p_out(target)` from raw
/// in/out observations.
pub fn lira_log_ratio(target: f64, inside: &[f64], outside: &[f64], config: &LiraConfig) -> Result<f64> {
    let obs = [Observations {
        inside: inside.to_vec(),
        outside: outside.to_vec(),
    }];
    let (scores, _) = attack(&obs, &[0], |_| target, config)?;
    Ok(scores[0])
}

/// Natural-log LiRA scores against one target model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiraScore {
    pub target_split: u32,
    pub checkpoint_epoch: f64,
    /// Indices of the target's training members.
    pub sample_ids: Vec<usize>,
    pub scores: Vec<f64>,
    pub fits_in: Vec<GaussianFit>,
    pub fits_out: Vec<GaussianFit>,
}

/// Attacks the target model on each of its training members, using every
/// other model of the suite as a shadow. The target's own gap is never part
/// of either fit.
pub fn local_lira_score(
    suite: &ShadowSuite,
    target_split: u32,
    checkpoint: usize,
    config: &LiraConfig,
) -> Result<LiraScore> {
    suite.check_checkpoint(checkpoint)?;
    let target = suite.entry(target_split)?;
    let shadows: Vec<&ShadowEntry> = suite.entries.iter().filter(|e| e.split_id != target_split).collect();
    let members = suite.members(target_split)?;
    let obs: Vec<Observations> = members
        .iter()
        .map(|&x| Observations::gather(&shadows, checkpoint, x))
        .collect();
    let (scores, fits) = attack(&obs, &members, |x| target.gaps[checkpoint][x], config)?;
    let (fits_in, fits_out) = fits.into_iter().unzip();
    Ok(LiraScore {
        target_split,
        checkpoint_epoch: suite.checkpoint_epochs[checkpoint],
        sample_ids: members,
        scores,
        fits_in,
        fits_out,
    })
}

/// Per-sample results of attacking every model with all the others.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalLira {
    /// Fraction of attacks in which `1[p_in > p_out]` equals true membership.
    pub asr: Vec<f64>,
    pub successes: Vec<usize>,
    /// Attacks per sample: models whose remaining suite holds both an in and
    /// an out observation of the sample.
    pub attacks: Vec<usize>,
    /// Mean log ratio over the attacked models that trained on the sample.
    pub log_lira: Vec<f64>,
    /// Mean log ratio in favour of the true membership, over all attacks.
    pub signed_log_lira: Vec<f64>,
}

/// Attacks each model in turn with the other `M - 1`. A (sample, model)
/// pair is skipped when the other models lack the observations a fit needs;
/// a sample with no attack at all is an error.
pub fn global_lira_asr(suite: &ShadowSuite, checkpoint: usize, config: &LiraConfig) -> Result<GlobalLira> {
    suite.check_checkpoint(checkpoint)?;
    let n = suite.sample_count;
    let min_side = match config.variance {
        VarianceMode::PerSample => 2,
        _ => 1,
    };
    let per_model: Vec<Result<(Vec<usize>, Vec<f64>)>> = suite
        .entries
        .par_iter()
        .map(|target| {
            let others: Vec<&ShadowEntry> =
                suite.entries.iter().filter(|e| e.split_id != target.split_id).collect();
            let (samples, obs): (Vec<usize>, Vec<Observations>) = (0..n)
                .map(|x| (x, Observations::gather(&others, checkpoint, x)))
                .filter(|(_, o)| o.inside.len() >= min_side && o.outside.len() >= min_side)
                .unzip();
            if samples.is_empty() {
                return Ok((samples, Vec::new()));
            }
            let (scores, _) = attack(&obs, &samples, |x| target.gaps[checkpoint][x], config)?;
            Ok((samples, scores))
        })
        .collect();
    let mut successes = vec![0usize; n];
    let mut attacks = vec![0usize; n];
    let mut in_sum = vec![0.0; n];
    let mut in_count = vec![0usize; n];
    let mut signed_sum = vec![0.0; n];
    for (entry, result) in suite.entries.iter().zip(per_model) {
        let (samples, scores) = result?;
        for (&x, &score) in samples.iter().zip(&scores) {
            attacks[x] += 1;
            if (score > 0.0) == entry.mask[x] {
                successes[x] += 1;
            }
            if entry.mask[x] {
                in_sum[x] += score;
                in_count[x] += 1;
                signed_sum[x] += score;
            } else {
                signed_sum[x] -= score;
            }
        }
    }
    let unattacked: Vec<usize> = (0..n).filter(|&x| attacks[x] == 0 || in_count[x] == 0).collect();
    if !unattacked.is_empty() {
        return Err(Error::InsufficientObservations { sample_ids: unattacked });
    }
    Ok(GlobalLira {
        asr: successes.iter().zip(&attacks).map(|(&s, &a)| s as f64 / a as f64).collect(),
        successes,
        log_lira: in_sum.iter().zip(&in_count).map(|(&s, &c)| s / c as f64).collect(),
        signed_log_lira: signed_sum.iter().zip(&attacks).map(|(&s, &a)| s / a as f64).collect(),
        attacks,
    })
}

/// Smallest success count `k` with `P(S > k) <= alpha` for
/// `S ~ Binomial(models, 1/2)`: an ASR of at least `k / models` is then
/// significant at level `alpha` under the no-trace null.
pub fn asr_significance_threshold(models: u64, alpha: f64) -> u64 {
    (0..=models)
        .find(|&k| binomial_survival(k, models, 0.5) <= alpha)
        .unwrap_or(models)
}

/// `P(S >= successes)` under the null.
pub fn asr_p_value(successes: u64, models: u64) -> f64 {
    if successes == 0 {
        1.0
    } else {
        binomial_survival(successes - 1, models, 0.5)
    }
}

/// Mean gap of models trained on each sample minus the mean gap of the rest.
pub fn counterfactual_memorization(suite: &ShadowSuite, checkpoint: usize) -> Result<Vec<f64>> {
    suite.check_checkpoint(checkpoint)?;
    let models: Vec<&ShadowEntry> = suite.entries.iter().collect();
    let mut out = Vec::with_capacity(suite.sample_count);
    let mut empty = Vec::new();
    for x in 0..suite.sample_count {
        let o = Observations::gather(&models, checkpoint, x);
        if o.inside.is_empty() || o.outside.is_empty() {
            empty.push(x);
            continue;
        }
        out.push(mean_var(&o.inside).0 - mean_var(&o.outside).0);
    }
    if !empty.is_empty() {
        return Err(Error::InsufficientObservations { sample_ids: empty });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthLabels {
    pub memorized: Vec<bool>,
    pub quantile: f64,
    /// Score at or above which a sample counts as memorized (log-LiRA units).
    pub threshold: f64,
}

impl GroundTruthLabels {
    pub fn positives(&self) -> usize {
        self.memorized.iter().filter(|&&m| m).count()
    }
}

/// Labels the top `ceil(q n)` scores as memorized. The threshold is the
/// value at ascending rank `n - ceil(q n) + 1` (nearest rank); a tie
/// straddling that rank is an error.
pub fn ground_truth_from_quantile(scores: &[f64], q: f64) -> Result<GroundTruthLabels> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidArgument(format!("quantile {q} outside (0, 1)")));
    }
    if scores.is_empty() {
        return Err(Error::InvalidArgument("no scores".into()));
    }
    if let Some(index) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    let n = scores.len();
    let k = ((q * n as f64) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let rank = n - k + 1;
    let threshold = sorted[rank - 1];
    if rank >= 2 && sorted[rank - 2] == threshold {
        return Err(Error::QuantileTie { value: threshold });
    }
    Ok(GroundTruthLabels {
        memorized: scores.iter().map(|&s| s >= threshold).collect(),
        quantile: q,
        threshold,
    })
}
