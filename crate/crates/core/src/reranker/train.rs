use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::features::{schema_dim, Featurizer};
use super::loss::rank_loss;
use super::model::{HiddenLayer, RerankerSet, ScorerModel, Standardizer};
use super::Variant;
use crate::error::{Error, Result};
use crate::expansion::{GeneratorTag, RankLabel, TrainingExample};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub alpha: f64,
    pub epochs: usize,
    /// Questions per update; each contributes its whole candidate group.
    pub group_batch: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Width of the tanh hidden layer; 0 trains a linear scorer.
    pub hidden_width: usize,
    /// Train one model per generator tag when several tags are present.
    pub per_tag: bool,
}

impl TrainConfig {
    pub fn for_variant(variant: Variant) -> Self {
        TrainConfig {
            alpha: 0.01,
            epochs: match variant {
                Variant::Ri => 2,
                Variant::Rd => 3,
            },
            group_batch: 4,
            learning_rate: 3e-4,
            seed: 0,
            hidden_width: 0,
            per_tag: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid("alpha must be positive"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if ![4, 8].contains(&self.group_batch) {
            return Err(Error::invalid("group_batch must be 4 or 8"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        Ok(())
    }
}

/// Raw feature rows and rank labels for one question.
#[derive(Debug, Clone)]
pub struct CandidateGroup {
    pub features: Vec<Vec<f64>>,
    pub ranks: Vec<u32>,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub model: ScorerModel,
    /// Mean per-question loss over the full training set after each epoch.
    pub epoch_losses: Vec<f64>,
}

pub fn featurize_examples(
    featurizer: &Featurizer<'_>,
    examples: &[TrainingExample],
    variant: Variant,
) -> Result<Vec<CandidateGroup>> {
    examples
        .par_iter()
        .map(|ex| {
            let features = match variant {
                Variant::Ri => ex
                    .candidates
                    .texts()
                    .map(|e| featurizer.ri(&ex.question, e).values)
                    .collect(),
                Variant::Rd => {
                    let top1 = ex
                        .top1
                        .as_ref()
                        .ok_or_else(|| Error::invalid(format!("RD training needs top-1 passages ({})", ex.qid)))?;
                    ex.candidates
                        .texts()
                        .zip(top1)
                        .map(|(e, d)| match d {
                            Some(pid) => Ok(featurizer.rd(&ex.question, e, featurizer.store().require(pid)?)?.values),
                            None => Ok(featurizer.rd_missing(&ex.question, e).values),
                        })
                        .collect::<Result<Vec<_>>>()?
                }
            };
            Ok(CandidateGroup {
                features,
                ranks: ex.labels.iter().map(|l| l.rank).collect(),
            })
        })
        .collect()
}

/// Summed rank loss over `groups` and its gradient with respect to the
/// model's flattened parameters. Features are raw; the model's
/// standardizer is applied here.
pub fn loss_and_gradient(model: &ScorerModel, groups: &[CandidateGroup], alpha: f64) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; model.params().len()];
    let mut total = 0.0;
    for g in groups {
        let xs: Vec<Vec<f64>> = g.features.iter().map(|x| model.prepare(x)).collect();
        total += accumulate(model, &xs, &g.ranks, alpha, &mut grad, 1.0);
    }
    (total, grad)
}

fn accumulate(model: &ScorerModel, xs: &[Vec<f64>], ranks: &[u32], alpha: f64, grad: &mut [f64], weight: f64) -> f64 {
    let scores: Vec<f64> = xs.iter().map(|x| model.forward(x, None)).collect();
    let (loss, dscores) = rank_loss(&scores, ranks, alpha);
    for (x, d) in xs.iter().zip(dscores) {
        if d != 0.0 {
            model.forward(x, Some((grad, d * weight)));
        }
    }
    loss
}

fn init_model(variant: Variant, cfg: &TrainConfig, groups: &[CandidateGroup], rng: &mut ChaCha8Rng) -> ScorerModel {
    let dim = schema_dim(variant.schema()).unwrap();
    let mut model = ScorerModel::zeros(variant);
    let rows: Vec<&[f64]> = groups
        .iter()
        .flat_map(|g| g.features.iter().map(Vec::as_slice))
        .collect();
    model.standardizer = Some(Standardizer::fit(&rows, dim));
    if cfg.hidden_width > 0 {
        let bound = 1.0 / (dim as f64).sqrt();
        model.hidden = Some(HiddenLayer {
            weights: (0..cfg.hidden_width)
                .map(|_| (0..dim).map(|_| rng.random_range(-bound..bound)).collect())
                .collect(),
            bias: vec![0.0; cfg.hidden_width],
        });
        model.weights = (0..cfg.hidden_width).map(|_| rng.random_range(-0.1..0.1)).collect();
    }
    model
}

/// Mini-batch subgradient descent on the rank loss.
pub fn train(
    featurizer: &Featurizer<'_>,
    examples: &[TrainingExample],
    cfg: &TrainConfig,
    variant: Variant,
) -> Result<TrainReport> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::invalid("no training examples"));
    }
    if let Some(ex) = examples.iter().find(|e| e.candidates.len() < 2) {
        return Err(Error::invalid(format!(
            "question {} has fewer than 2 candidates",
            ex.qid
        )));
    }
    let groups = featurize_examples(featurizer, examples, variant)?;
    train_groups(&groups, cfg, variant)
}

pub fn train_groups(groups: &[CandidateGroup], cfg: &TrainConfig, variant: Variant) -> Result<TrainReport> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = init_model(variant, cfg, groups, &mut rng);
    let prepared: Vec<Vec<Vec<f64>>> = groups
        .iter()
        .map(|g| g.features.iter().map(|x| model.prepare(x)).collect())
        .collect();

    let mut order: Vec<usize> = (0..groups.len()).collect();
    let mut params = model.params();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.group_batch) {
            let mut grad = vec![0.0; params.len()];
            let weight = 1.0 / batch.len() as f64;
            for &g in batch {
                accumulate(&model, &prepared[g], &groups[g].ranks, cfg.alpha, &mut grad, weight);
            }
            for (p, g) in params.iter_mut().zip(&grad) {
                *p -= cfg.learning_rate * g;
            }
            model.set_params(&params);
        }
        let mut scratch = vec![0.0; params.len()];
        let total: f64 = prepared
            .iter()
            .zip(groups)
            .map(|(xs, g)| accumulate(&model, xs, &g.ranks, cfg.alpha, &mut scratch, 0.0))
            .sum();
        epoch_losses.push(total / groups.len() as f64);
    }
    model.validate()?;
    Ok(TrainReport { model, epoch_losses })
}

/// Candidates, labels and top-1 ids of `ex` restricted to one generator tag.
pub fn restrict_to_tag(ex: &TrainingExample, tag: GeneratorTag) -> TrainingExample {
    let keep: Vec<usize> = (0..ex.candidates.len())
        .filter(|&i| ex.candidates.candidates[i].generator_tag == tag)
        .collect();
    let mut candidates = ex.candidates.with_tag(tag);
    candidates.requested_n = keep.len();
    TrainingExample {
        qid: ex.qid.clone(),
        question: ex.question.clone(),
        fold: ex.fold,
        candidates,
        labels: keep
            .iter()
            .enumerate()
            .map(|(new, &old)| RankLabel {
                index: new,
                ..ex.labels[old]
            })
            .collect(),
        top1: ex.top1.as_ref().map(|t| keep.iter().map(|&i| t[i].clone()).collect()),
    }
}

/// Training report per generator tag; `None` for a shared model.
pub type TagReports = Vec<(Option<GeneratorTag>, TrainReport)>;

/// Trains one model per generator tag (or a single shared model).
pub fn train_reranker_set(
    featurizer: &Featurizer<'_>,
    examples: &[TrainingExample],
    cfg: &TrainConfig,
    variant: Variant,
) -> Result<(RerankerSet, TagReports)> {
    let tags: BTreeSet<GeneratorTag> = examples.iter().flat_map(|e| e.candidates.tags()).collect();
    if cfg.per_tag && tags.len() > 1 {
        let mut models = std::collections::BTreeMap::new();
        let mut reports = Vec::new();
        for tag in tags {
            let subset: Vec<TrainingExample> = examples
                .iter()
                .map(|e| restrict_to_tag(e, tag))
                .filter(|e| e.candidates.len() >= 2)
                .collect();
            if subset.is_empty() {
                log::warn!("no question has two {tag} candidates; skipping that model");
                continue;
            }
            let mut report = train(featurizer, &subset, cfg, variant)?;
            report.model.generator_tag = Some(tag);
            models.insert(tag, report.model.clone());
            reports.push((Some(tag), report));
        }
        Ok((RerankerSet::per_tag(models), reports))
    } else {
        let mut report = train(featurizer, examples, cfg, variant)?;
        if tags.len() == 1 {
            report.model.generator_tag = tags.into_iter().next();
        }
        Ok((RerankerSet::shared(report.model.clone()), vec![(None, report)]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assume, proptest, ProptestConfig};

    fn random_groups(rng: &mut ChaCha8Rng, dim: usize, n_groups: usize, max_n: usize) -> Vec<CandidateGroup> {
        (0..n_groups)
            .map(|_| {
                let n = rng.random_range(2..=max_n);
                CandidateGroup {
                    features: (0..n)
                        .map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect())
                        .collect(),
                    ranks: (0..n).map(|_| rng.random_range(1..=101)).collect(),
                }
            })
            .collect()
    }

    fn random_model(rng: &mut ChaCha8Rng, variant: Variant, hidden: usize) -> ScorerModel {
        let dim = schema_dim(variant.schema()).unwrap();
        let mut m = ScorerModel::zeros(variant);
        m.standardizer = Some(Standardizer {
            mean: (0..dim).map(|_| rng.random_range(-0.5..0.5)).collect(),
            scale: (0..dim).map(|_| rng.random_range(0.5..2.0)).collect(),
        });
        if hidden > 0 {
            m.hidden = Some(HiddenLayer {
                weights: vec![vec![0.0; dim]; hidden],
                bias: vec![0.0; hidden],
            });
            m.weights = vec![0.0; hidden];
        }
        let p: Vec<f64> = (0..m.params().len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        m.set_params(&p);
        m
    }

    /// Smallest |hinge argument| over all active-or-inactive pairs.
    fn kink_distance(model: &ScorerModel, groups: &[CandidateGroup], alpha: f64) -> f64 {
        let mut best = f64::INFINITY;
        for g in groups {
            let s: Vec<f64> = g.features.iter().map(|x| model.score_values(x)).collect();
            for i in 0..s.len() {
                for j in 0..s.len() {
                    if g.ranks[i] < g.ranks[j] {
                        let arg = s[i] - s[j] + (g.ranks[j] - g.ranks[i]) as f64 * alpha;
                        best = best.min(arg.abs());
                    }
                }
            }
        }
        best
    }

    fn check_gradient(model: &ScorerModel, groups: &[CandidateGroup], alpha: f64) {
        let (_, grad) = loss_and_gradient(model, groups, alpha);
        let base = model.params();
        let h = 1e-5;
        for k in 0..base.len() {
            let mut plus = model.clone();
            let mut p = base.clone();
            p[k] += h;
            plus.set_params(&p);
            let mut minus = model.clone();
            p[k] -= 2.0 * h;
            minus.set_params(&p);
            let fd =
                (loss_and_gradient(&plus, groups, alpha).0 - loss_and_gradient(&minus, groups, alpha).0) / (2.0 * h);
            let denom = fd.abs().max(grad[k].abs()).max(1.0);
            assert!(
                (fd - grad[k]).abs() / denom < 1e-4,
                "param {k}: analytic {} vs numeric {fd}",
                grad[k]
            );
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut checked = 0;
        while checked < 12 {
            let variant = if checked % 2 == 0 { Variant::Ri } else { Variant::Rd };
            let hidden = if checked % 3 == 0 { 4 } else { 0 };
            let dim = schema_dim(variant.schema()).unwrap();
            let groups = random_groups(&mut rng, dim, 3, 8);
            let model = random_model(&mut rng, variant, hidden);
            if kink_distance(&model, &groups, 0.05) < 1e-3 {
                continue;
            }
            check_gradient(&model, &groups, 0.05);
            checked += 1;
        }
    }

    #[test]
    fn rejects_bad_config() {
        let mut cfg = TrainConfig::for_variant(Variant::Ri);
        cfg.validate().unwrap();
        cfg.group_batch = 3;
        assert!(cfg.validate().is_err());
        let cfg = TrainConfig {
            alpha: 0.0,
            ..TrainConfig::for_variant(Variant::Rd)
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn learns_a_separable_signal() {
        // Feature 3 decides the rank; everything else is noise.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let groups: Vec<CandidateGroup> = (0..40)
            .map(|_| {
                let n = 10;
                let good = rng.random_range(0..n);
                let features = (0..n)
                    .map(|i| {
                        let mut x: Vec<f64> = (0..9).map(|_| rng.random_range(0.0..1.0)).collect();
                        x[3] = if i == good { 5.0 } else { 1.0 };
                        x
                    })
                    .collect();
                let ranks = (0..n)
                    .map(|i| if i == good { 1 } else { rng.random_range(10..=101) })
                    .collect();
                CandidateGroup { features, ranks }
            })
            .collect();
        let cfg = TrainConfig {
            epochs: 4,
            ..TrainConfig::for_variant(Variant::Ri)
        };
        let report = train_groups(&groups, &cfg, Variant::Ri).unwrap();
        assert!(report.epoch_losses.windows(2).all(|w| w[1] <= w[0] * 1.05));
        let hits = groups
            .iter()
            .filter(|g| {
                let scores: Vec<f64> = g.features.iter().map(|x| report.model.score_values(x)).collect();
                let best = (0..scores.len())
                    .min_by(|&a, &b| scores[a].total_cmp(&scores[b]))
                    .unwrap();
                g.ranks[best] == 1
            })
            .count();
        assert_eq!(hits, groups.len());
        let again = train_groups(&groups, &cfg, Variant::Ri).unwrap();
        assert_eq!(again.model, report.model);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn linear_gradient_random_instances(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(2..=50);
            let groups = vec![CandidateGroup {
                features: (0..n).map(|_| (0..9).map(|_| rng.random_range(-2.0..2.0)).collect()).collect(),
                ranks: (0..n).map(|_| rng.random_range(1..=101)).collect(),
            }];
            let model = random_model(&mut rng, Variant::Ri, 0);
            prop_assume!(kink_distance(&model, &groups, 0.01) > 1e-3);
            check_gradient(&model, &groups, 0.01);
        }
    }
}
