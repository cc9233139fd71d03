//! Per-token weights and masks, the masked weighted negative log-likelihood,
//! and a desk-scale trainable bigram model with closed-form gradients that
//! exercises the objective end to end.

use serde::{Deserialize, Serialize};

use crate::align::Span;
use crate::curriculum;
use crate::error::{Error, Result};

/// Which positions of the serialized sequence carry loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskingMode {
    /// Loss on response tokens only.
    AssistantOnly,
    /// Loss on both prompt and response tokens.
    FullSequence,
}

/// A serialized training sequence with its loss mask, per-token weights,
/// response span, and aligned (copy-worthy) positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedSequence {
    pub token_ids: Vec<u32>,
    pub mask: Vec<u8>,
    pub weights: Vec<f64>,
    pub response_span: Span,
    pub aligned: Vec<usize>,
    pub masking_mode: MaskingMode,
    /// Line-diff edit difficulty of the source (buggy, fixed) pair.
    pub dl: u64,
}

impl WeightedSequence {
    /// Build a sequence from tokens, the aligned absolute positions, and the
    /// configuration. Validates the structural invariants.
    pub fn build(
        token_ids: Vec<u32>,
        response_span: Span,
        aligned: Vec<usize>,
        masking_mode: MaskingMode,
        w_align: f64,
        dl: u64,
    ) -> Result<Self> {
        let len = token_ids.len();
        if response_span.end > len {
            return Err(Error::IndexOutOfRange { index: response_span.end, len });
        }
        for &idx in &aligned {
            if !response_span.contains(idx) {
                return Err(Error::IndexOutOfRange { index: idx, len: response_span.end });
            }
        }
        let weights = build_weights(len, &aligned, w_align)?;
        let mask = build_mask(len, response_span, masking_mode);
        Ok(WeightedSequence { token_ids, mask, weights, response_span, aligned, masking_mode, dl })
    }

    /// Same tokens and alignment, new weight and masking configuration.
    /// Used by sweeps that retrain one prepared dataset under several
    /// `w_align` values.
    pub fn reweighted(&self, w_align: f64, masking_mode: MaskingMode) -> Result<Self> {
        Self::build(
            self.token_ids.clone(),
            self.response_span,
            self.aligned.clone(),
            masking_mode,
            w_align,
            self.dl,
        )
    }

    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

/// `w_align` at aligned positions, 1 elsewhere. `w_align = 0` removes the
/// aligned positions from both numerator and denominator of the loss.
pub fn build_weights(seq_len: usize, aligned: &[usize], w_align: f64) -> Result<Vec<f64>> {
    if !(w_align >= 0.0) {
        return Err(Error::InvalidArgument(format!("w_align must be >= 0, got {w_align}")));
    }
    let mut weights = vec![1.0; seq_len];
    for &idx in aligned {
        if idx >= seq_len {
            return Err(Error::IndexOutOfRange { index: idx, len: seq_len });
        }
        weights[idx] = w_align;
    }
    Ok(weights)
}

fn build_mask(seq_len: usize, response_span: Span, mode: MaskingMode) -> Vec<u8> {
    match mode {
        MaskingMode::FullSequence => vec![1; seq_len],
        MaskingMode::AssistantOnly => (0..seq_len)
            .map(|t| u8::from(response_span.contains(t)))
            .collect(),
    }
}

/// Per-token autoregressive negative log-likelihood for one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenLoss {
    pub nll: Vec<f64>,
}

/// Masked weighted loss for one instance: sum(M_t w_t l_t) / sum(M_t w_t).
pub fn weighted_loss(nll: &TokenLoss, seq: &WeightedSequence) -> Result<f64> {
    debug_assert_eq!(nll.nll.len(), seq.len());
    let mut num = 0.0;
    let mut den = 0.0;
    for t in 0..seq.len() {
        let mw = f64::from(seq.mask[t]) * seq.weights[t];
        num += mw * nll.nll[t];
        den += mw;
    }
    if den <= 0.0 {
        return Err(Error::DegenerateInstance);
    }
    Ok(num / den)
}

/// Mean of per-instance losses plus a count of degenerate (all-masked)
/// instances that were skipped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorpusLoss {
    pub mean: f64,
    pub used: usize,
    pub degenerate: usize,
}

/// Arithmetic mean of `weighted_loss` over the non-degenerate instances.
pub fn corpus_loss(instances: &[(TokenLoss, WeightedSequence)]) -> Result<CorpusLoss> {
    let mut sum = 0.0;
    let mut used = 0;
    let mut degenerate = 0;
    for (nll, seq) in instances {
        match weighted_loss(nll, seq) {
            Ok(loss) => {
                sum += loss;
                used += 1;
            }
            Err(Error::DegenerateInstance) => degenerate += 1,
            Err(e) => return Err(e),
        }
    }
    if used == 0 {
        return Err(Error::EmptyCorpus);
    }
    Ok(CorpusLoss { mean: sum / used as f64, used, degenerate })
}

/// Next-token model: a V x V logit table, row = context token. Row softmax
/// gives the next-token distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct BigramModel {
    pub vocab_size: usize,
    logits: Vec<f64>,
}

impl BigramModel {
    /// All-zero logits: uniform predictions from every context.
    pub fn uniform(vocab_size: usize) -> Self {
        BigramModel { vocab_size, logits: vec![0.0; vocab_size * vocab_size] }
    }

    pub fn from_logits(vocab_size: usize, logits: Vec<f64>) -> Result<Self> {
        if logits.len() != vocab_size * vocab_size {
            return Err(Error::InvalidArgument(format!(
                "logit table has {} entries, expected {}",
                logits.len(),
                vocab_size * vocab_size
            )));
        }
        Ok(BigramModel { vocab_size, logits })
    }

    pub fn row(&self, context: u32) -> &[f64] {
        let c = context as usize;
        &self.logits[c * self.vocab_size..(c + 1) * self.vocab_size]
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn logit_mut(&mut self, context: u32, next: u32) -> &mut f64 {
        &mut self.logits[context as usize * self.vocab_size + next as usize]
    }

    fn check_token(&self, id: u32) -> Result<()> {
        if (id as usize) < self.vocab_size {
            Ok(())
        } else {
            Err(Error::TokenOutOfRange { id, vocab: self.vocab_size })
        }
    }

    /// log-softmax over one context row, numerically stable.
    fn log_probs(&self, context: u32) -> Vec<f64> {
        let row = self.row(context);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_z = row.iter().map(|&l| (l - max).exp()).sum::<f64>().ln() + max;
        row.iter().map(|&l| l - log_z).collect()
    }

    fn probs(&self, context: u32) -> Vec<f64> {
        self.log_probs(context).into_iter().map(f64::exp).collect()
    }
}

/// nll[t] = -log p(x_t | x_{t-1}), with the context of the first position
/// taken to be `bos`.
pub fn nll_of(model: &BigramModel, seq: &WeightedSequence, bos: u32) -> Result<TokenLoss> {
    model.check_token(bos)?;
    let mut nll = Vec::with_capacity(seq.len());
    let mut context = bos;
    for &tok in &seq.token_ids {
        model.check_token(tok)?;
        nll.push(-model.log_probs(context)[tok as usize]);
        context = tok;
    }
    Ok(TokenLoss { nll })
}

/// Analytic gradient of the mean corpus loss with respect to the logit table.
///
/// For each loss-bearing position with context c and target y the row c
/// accumulates (softmax(logits[c]) - onehot(y)) * M_t w_t / (instance
/// normalizer * batch size). Accumulation is index-ascending so results are
/// identical across runs.
pub fn gradient(model: &BigramModel, batch: &[WeightedSequence], bos: u32) -> Result<Vec<f64>> {
    let v = model.vocab_size;
    let mut grad = vec![0.0; v * v];
    let mut used = 0usize;
    let mut contributions: Vec<(u32, u32, f64)> = Vec::new();

    let mut per_instance: Vec<Vec<(u32, u32, f64)>> = Vec::new();
    for seq in batch {
        model.check_token(bos)?;
        let mut den = 0.0;
        for t in 0..seq.len() {
            den += f64::from(seq.mask[t]) * seq.weights[t];
        }
        if den <= 0.0 {
            per_instance.push(Vec::new());
            continue;
        }
        used += 1;
        let mut items = Vec::new();
        let mut context = bos;
        for t in 0..seq.len() {
            let tok = seq.token_ids[t];
            model.check_token(tok)?;
            let mw = f64::from(seq.mask[t]) * seq.weights[t];
            if mw > 0.0 {
                items.push((context, tok, mw / den));
            }
            context = tok;
        }
        per_instance.push(items);
    }
    if used == 0 {
        return Err(Error::EmptyCorpus);
    }
    let scale = 1.0 / used as f64;
    for items in per_instance {
        for (context, target, coeff) in items {
            contributions.push((context, target, coeff * scale));
        }
    }

    // Cache softmax rows per context to avoid recomputation.
    let mut row_cache: Vec<Option<Vec<f64>>> = vec![None; v];
    for (context, target, coeff) in contributions {
        let c = context as usize;
        if row_cache[c].is_none() {
            row_cache[c] = Some(model.probs(context));
        }
        let probs = row_cache[c].as_ref().unwrap();
        let base = c * v;
        for (next, &p) in probs.iter().enumerate() {
            grad[base + next] += coeff * p;
        }
        grad[base + target as usize] -= coeff;
    }
    Ok(grad)
}

/// Whether a training step consumes the whole dataset or one instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchMode {
    /// One gradient step over the full dataset per step.
    FullBatch,
    /// One gradient step per instance, cycling through the (possibly
    /// curriculum-ordered) dataset.
    PerInstance,
}

/// Training configuration for the desk-scale model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub w_align: f64,
    pub masking_mode: MaskingMode,
    pub learning_rate: f64,
    pub steps: usize,
    pub seed: u64,
    pub curriculum_enabled: bool,
    pub batch_mode: BatchMode,
    pub vocab_size: usize,
    pub bos: u32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            w_align: 2.0,
            masking_mode: MaskingMode::FullSequence,
            learning_rate: 0.5,
            steps: 500,
            seed: 0,
            curriculum_enabled: true,
            batch_mode: BatchMode::FullBatch,
            vocab_size: 32,
            bos: 0,
        }
    }
}

/// Deterministic gradient descent on the corpus loss, starting from uniform
/// logits. The dataset's weights and masks are rebuilt from `cfg.w_align`
/// and `cfg.masking_mode`; when the curriculum is enabled, instances are
/// visited in ascending `dl` order (stable within ties).
pub fn train(dataset: &[WeightedSequence], cfg: &TrainConfig) -> Result<BigramModel> {
    if dataset.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut ordered: Vec<WeightedSequence> = Vec::with_capacity(dataset.len());
    let indices: Vec<usize> = if cfg.curriculum_enabled {
        let dls: Vec<u64> = dataset.iter().map(|s| s.dl).collect();
        curriculum::curriculum_order(&dls)
    } else {
        (0..dataset.len()).collect()
    };
    for idx in indices {
        ordered.push(dataset[idx].reweighted(cfg.w_align, cfg.masking_mode)?);
    }

    let mut model = BigramModel::uniform(cfg.vocab_size);
    match cfg.batch_mode {
        BatchMode::FullBatch => {
            for _ in 0..cfg.steps {
                let grad = gradient(&model, &ordered, cfg.bos)?;
                for (logit, g) in model.logits.iter_mut().zip(&grad) {
                    *logit -= cfg.learning_rate * g;
                }
            }
        }
        BatchMode::PerInstance => {
            let mut cursor = 0usize;
            let mut performed = 0usize;
            let mut skipped = 0usize;
            while performed < cfg.steps {
                let seq = &ordered[cursor];
                cursor = (cursor + 1) % ordered.len();
                match gradient(&model, std::slice::from_ref(seq), cfg.bos) {
                    Ok(grad) => {
                        for (logit, g) in model.logits.iter_mut().zip(&grad) {
                            *logit -= cfg.learning_rate * g;
                        }
                        performed += 1;
                        skipped = 0;
                    }
                    Err(Error::EmptyCorpus) => {
                        skipped += 1;
                        if skipped >= ordered.len() {
                            return Err(Error::EmptyCorpus);
                        }
                    }
                    Err(e) => return Err(e),
                }
            }
        }
    }
    Ok(model)
}

/// Mean NLL split by position class, for sweep reports: aligned response
/// positions vs everything else in the response span.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionNll {
    pub aligned_mean: f64,
    pub unaligned_mean: f64,
}

pub fn position_mean_nll(
    model: &BigramModel,
    dataset: &[WeightedSequence],
    bos: u32,
) -> Result<PositionNll> {
    let mut aligned_sum = 0.0;
    let mut aligned_n = 0usize;
    let mut other_sum = 0.0;
    let mut other_n = 0usize;
    for seq in dataset {
        let nll = nll_of(model, seq, bos)?;
        let aligned: std::collections::HashSet<usize> = seq.aligned.iter().copied().collect();
        for t in seq.response_span.start..seq.response_span.end {
            if aligned.contains(&t) {
                aligned_sum += nll.nll[t];
                aligned_n += 1;
            } else {
                other_sum += nll.nll[t];
                other_n += 1;
            }
        }
    }
    if aligned_n == 0 || other_n == 0 {
        return Err(Error::UndefinedStatistic(
            "position-class NLL needs both aligned and unaligned positions".into(),
        ));
    }
    Ok(PositionNll {
        aligned_mean: aligned_sum / aligned_n as f64,
        unaligned_mean: other_sum / other_n as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(tokens: Vec<u32>, span: Span, aligned: Vec<usize>, mode: MaskingMode, w: f64) -> WeightedSequence {
        WeightedSequence::build(tokens, span, aligned, mode, w, 0).unwrap()
    }

    #[test]
    fn build_weights_examples() {
        assert_eq!(build_weights(5, &[2, 3], 2.0).unwrap(), vec![1.0, 1.0, 2.0, 2.0, 1.0]);
        assert_eq!(build_weights(3, &[], 7.0).unwrap(), vec![1.0, 1.0, 1.0]);
        assert_eq!(build_weights(4, &[0, 1, 2, 3], 4.0).unwrap(), vec![4.0; 4]);
    }

    #[test]
    fn build_weights_out_of_range() {
        assert!(build_weights(3, &[3], 2.0).is_err());
    }

    #[test]
    fn weighted_loss_worked_example() {
        let s = WeightedSequence {
            token_ids: vec![0, 0, 0],
            mask: vec![1, 1, 1],
            weights: vec![1.0, 2.0, 1.0],
            response_span: Span::new(0, 3),
            aligned: vec![1],
            masking_mode: MaskingMode::FullSequence,
            dl: 0,
        };
        let nll = TokenLoss { nll: vec![1.0, 2.0, 3.0] };
        assert_eq!(weighted_loss(&nll, &s).unwrap(), 2.0);
    }

    #[test]
    fn weighted_loss_identity_weights_is_mean() {
        let s = seq(vec![0, 1, 2], Span::new(0, 3), vec![], MaskingMode::FullSequence, 1.0);
        let nll = TokenLoss { nll: vec![3.0, 6.0, 9.0] };
        assert_eq!(weighted_loss(&nll, &s).unwrap(), 6.0);
    }

    #[test]
    fn weighted_loss_all_masked_is_degenerate() {
        let s = WeightedSequence {
            token_ids: vec![0, 1],
            mask: vec![0, 0],
            weights: vec![1.0, 1.0],
            response_span: Span::new(0, 2),
            aligned: vec![],
            masking_mode: MaskingMode::AssistantOnly,
            dl: 0,
        };
        let nll = TokenLoss { nll: vec![5.0, 7.0] };
        assert!(matches!(weighted_loss(&nll, &s), Err(Error::DegenerateInstance)));
    }

    #[test]
    fn corpus_loss_mean_and_degenerates() {
        let good = seq(vec![0, 1], Span::new(0, 2), vec![], MaskingMode::FullSequence, 1.0);
        let degenerate = WeightedSequence {
            mask: vec![0, 0],
            ..good.clone()
        };
        let items = vec![
            (TokenLoss { nll: vec![2.0, 2.0] }, good.clone()),
            (TokenLoss { nll: vec![4.0, 4.0] }, good),
            (TokenLoss { nll: vec![9.0, 9.0] }, degenerate),
        ];
        let out = corpus_loss(&items).unwrap();
        assert_eq!(out.mean, 3.0);
        assert_eq!(out.used, 2);
        assert_eq!(out.degenerate, 1);
    }

    #[test]
    fn nll_uniform_model() {
        let model = BigramModel::uniform(4);
        let s = seq(vec![0, 1, 2], Span::new(0, 3), vec![], MaskingMode::FullSequence, 1.0);
        let nll = nll_of(&model, &s, 0).unwrap();
        for l in nll.nll {
            assert!((l - 4.0_f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn nll_dominant_logit_near_zero() {
        let mut model = BigramModel::uniform(3);
        *model.logit_mut(0, 1) = 1e3;
        let s = seq(vec![1], Span::new(0, 1), vec![], MaskingMode::FullSequence, 1.0);
        let nll = nll_of(&model, &s, 0).unwrap();
        assert!(nll.nll[0] < 1e-9);
    }

    #[test]
    fn nll_hand_softmax() {
        // V=2, row 0 = [ln 3, 0]: p(0|0) = 3/4
        let mut model = BigramModel::uniform(2);
        *model.logit_mut(0, 0) = 3.0_f64.ln();
        let s = seq(vec![0], Span::new(0, 1), vec![], MaskingMode::FullSequence, 1.0);
        let nll = nll_of(&model, &s, 0).unwrap();
        assert!((nll.nll[0] - (-(0.75_f64).ln())).abs() < 1e-12);
    }

    #[test]
    fn nll_out_of_range_token() {
        let model = BigramModel::uniform(2);
        let s = WeightedSequence {
            token_ids: vec![5],
            mask: vec![1],
            weights: vec![1.0],
            response_span: Span::new(0, 1),
            aligned: vec![],
            masking_mode: MaskingMode::FullSequence,
            dl: 0,
        };
        assert!(matches!(nll_of(&model, &s, 0), Err(Error::TokenOutOfRange { id: 5, vocab: 2 })));
    }

    #[test]
    fn gradient_untouched_rows_are_zero() {
        let model = BigramModel::uniform(4);
        let s = seq(vec![1, 2], Span::new(0, 2), vec![], MaskingMode::FullSequence, 1.0);
        let grad = gradient(&model, &[s], 0).unwrap();
        // contexts used: bos=0 and 1; row 3 untouched
        assert!(grad[3 * 4..4 * 4].iter().all(|&g| g == 0.0));
    }

    #[test]
    fn gradient_symmetric_case_cancels() {
        // uniform logits, sequence [0,1] with bos=0: contributions to row 0
        // cancel exactly.
        let model = BigramModel::uniform(2);
        let s = seq(vec![0, 1], Span::new(0, 2), vec![], MaskingMode::FullSequence, 1.0);
        let grad = gradient(&model, &[s], 0).unwrap();
        assert!(grad[0].abs() < 1e-15 && grad[1].abs() < 1e-15);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        // small deterministic case with non-trivial weights
        let mut model = BigramModel::uniform(3);
        *model.logit_mut(0, 1) = 0.3;
        *model.logit_mut(1, 2) = -0.2;
        let s = WeightedSequence::build(
            vec![1, 2, 1, 0],
            Span::new(1, 4),
            vec![2],
            MaskingMode::FullSequence,
            2.0,
            0,
        )
        .unwrap();
        let batch = [s];
        let analytic = gradient(&model, &batch, 0).unwrap();
        let h = 1e-5;
        for c in 0..3u32 {
            for y in 0..3u32 {
                let mut plus = model.clone();
                *plus.logit_mut(c, y) += h;
                let mut minus = model.clone();
                *minus.logit_mut(c, y) -= h;
                let f = |m: &BigramModel| {
                    let items: Vec<_> = batch
                        .iter()
                        .map(|sq| (nll_of(m, sq, 0).unwrap(), sq.clone()))
                        .collect();
                    corpus_loss(&items).unwrap().mean
                };
                let numeric = (f(&plus) - f(&minus)) / (2.0 * h);
                let a = analytic[c as usize * 3 + y as usize];
                assert!(
                    (a - numeric).abs() < 1e-6,
                    "grad mismatch at ({c},{y}): {a} vs {numeric}"
                );
            }
        }
    }

    #[test]
    fn train_zero_steps_is_uniform() {
        let s = seq(vec![1, 2], Span::new(0, 2), vec![], MaskingMode::FullSequence, 1.0);
        let cfg = TrainConfig { steps: 0, vocab_size: 4, ..TrainConfig::default() };
        let model = train(&[s], &cfg).unwrap();
        assert_eq!(model, BigramModel::uniform(4));
    }

    #[test]
    fn train_is_deterministic() {
        let data: Vec<WeightedSequence> = (0..4)
            .map(|k| {
                WeightedSequence::build(
                    vec![k, (k + 1) % 4, (k + 2) % 4],
                    Span::new(1, 3),
                    vec![1],
                    MaskingMode::FullSequence,
                    2.0,
                    u64::from(k),
                )
                .unwrap()
            })
            .collect();
        let cfg = TrainConfig { steps: 20, vocab_size: 4, ..TrainConfig::default() };
        let a = train(&data, &cfg).unwrap();
        let b = train(&data, &cfg).unwrap();
        assert_eq!(a.logits(), b.logits());
    }

    #[test]
    fn scale_invariance_of_normalizer() {
        let mut s = seq(vec![0, 1, 2], Span::new(0, 3), vec![1], MaskingMode::FullSequence, 2.0);
        let nll = TokenLoss { nll: vec![0.5, 1.5, 2.5] };
        let base = weighted_loss(&nll, &s).unwrap();
        for w in s.weights.iter_mut() {
            *w *= 7.5;
        }
        let scaled = weighted_loss(&nll, &s).unwrap();
        assert!((base - scaled).abs() < 1e-12);
    }

    #[test]
    fn masking_containment_and_bounds() {
        let tokens = vec![0, 1, 2, 3];
        let assistant = seq(tokens.clone(), Span::new(2, 4), vec![2], MaskingMode::AssistantOnly, 2.0);
        let full = seq(tokens, Span::new(2, 4), vec![2], MaskingMode::FullSequence, 2.0);
        for t in 0..4 {
            assert!(assistant.mask[t] <= full.mask[t]);
        }
        let nll = TokenLoss { nll: vec![1.0, 4.0, 2.0, 3.0] };
        let loss = weighted_loss(&nll, &full).unwrap();
        assert!(loss >= 0.0 && loss <= 4.0);
    }
}
