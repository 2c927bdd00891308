use super::RetrievalError;

/// Contrastive loss with in-batch negatives, summed over the batch:
///
/// `L = -Σ_i log( exp(c_i·p_i) / Σ_j exp(c_i·p_j) )`
///
/// where each claim's positive is the aligned passage and every other passage
/// in the batch is a negative. Each row is evaluated as a log-sum-exp with the
/// row maximum subtracted.
pub fn in_batch_loss<C, P>(claims: &[C], positives: &[P]) -> Result<f64, RetrievalError>
where
    C: AsRef<[f64]>,
    P: AsRef<[f64]>,
{
    if claims.len() != positives.len() {
        return Err(RetrievalError::BatchMismatch {
            claims: claims.len(),
            passages: positives.len(),
        });
    }
    let Some(first) = claims.first() else {
        return Err(RetrievalError::EmptyBatch);
    };
    let dim = first.as_ref().len();
    for v in claims
        .iter()
        .map(AsRef::as_ref)
        .chain(positives.iter().map(AsRef::as_ref))
    {
        if v.len() != dim {
            return Err(RetrievalError::DimensionMismatch {
                expected: dim,
                found: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(RetrievalError::NonFinite);
        }
    }

    let mut total = 0.0;
    for (i, claim) in claims.iter().enumerate() {
        let claim = claim.as_ref();
        let scores: Vec<f64> = positives
            .iter()
            .map(|p| claim.iter().zip(p.as_ref()).map(|(a, b)| a * b).sum())
            .collect();
        if scores.iter().any(|s: &f64| !s.is_finite()) {
            return Err(RetrievalError::NonFinite);
        }
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_norm = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
        total += (log_norm - scores[i]).max(0.0);
    }
    Ok(total)
}
