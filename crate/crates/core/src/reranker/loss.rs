use crate::expansion::RankLabel;

/// Pairwise margin loss over one question's candidates.
///
/// For every ordered pair with `r_i < r_j` it adds
/// `max(0, s_i - s_j + (r_j - r_i) * alpha)`, so better candidates are
/// pushed to lower scores. Returns the loss and its gradient with respect to
/// each score; pairs sitting exactly on the hinge contribute no gradient.
pub fn rank_loss(scores: &[f64], ranks: &[u32], alpha: f64) -> (f64, Vec<f64>) {
    assert_eq!(scores.len(), ranks.len(), "scores and ranks must align");
    let mut loss = 0.0;
    let mut grad = vec![0.0; scores.len()];
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if ranks[i] >= ranks[j] {
                continue;
            }
            let margin = (ranks[j] - ranks[i]) as f64 * alpha;
            let arg = scores[i] - scores[j] + margin;
            if arg > 0.0 {
                loss += arg;
                grad[i] += 1.0;
                grad[j] -= 1.0;
            }
        }
    }
    (loss, grad)
}

pub fn label_ranks(labels: &[RankLabel]) -> Vec<u32> {
    labels.iter().map(|l| l.rank).collect()
}
