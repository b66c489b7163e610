use super::EvalError;

/// Area under the ROC curve for `scores` against binary `labels` (1 = abnormal).
///
/// Defined by the pair count: the fraction of (abnormal, normal) pairs in
/// which the abnormal item scores higher, ties counting one half. Computed
/// from midranks (Mann–Whitney U) after one sort.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(EvalError::NanScore(i));
    }
    if let Some(&l) = labels.iter().find(|&&l| l > 1) {
        return Err(EvalError::InvalidLabel(l));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::SingleClassLabels);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // twice the rank sum of positives, kept integral until the end
    let mut pos_rank_sum2: u128 = 0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // ranks start+1 ..= end share the midrank (start + 1 + end) / 2
        let midrank2 = (start + 1 + end) as u128;
        let pos_in_block = order[start..end].iter().filter(|&&i| labels[i] == 1).count() as u128;
        pos_rank_sum2 += midrank2 * pos_in_block;
        start = end;
    }
    let n_pos = n_pos as u128;
    let u2 = pos_rank_sum2 - n_pos * (n_pos + 1);
    Ok(u2 as f64 / (2 * n_pos * n_neg as u128) as f64)
}
