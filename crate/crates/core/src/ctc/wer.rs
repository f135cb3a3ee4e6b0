use crate::data::GlossSequence;
use crate::error::{HstError, Result};

/// Unit-cost Levenshtein distance over token sequences.
pub fn edit_distance<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=hypothesis.len()).collect();
    let mut cur = vec![0; hypothesis.len() + 1];
    for (i, r) in reference.iter().enumerate() {
        cur[0] = i + 1;
        for (j, h) in hypothesis.iter().enumerate() {
            let sub = prev[j] + usize::from(r != h);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[hypothesis.len()]
}

/// (substitutions + deletions + insertions) / |reference|.
pub fn wer(reference: &GlossSequence, hypothesis: &GlossSequence) -> Result<f64> {
    if reference.is_empty() {
        return Err(HstError::UndefinedMetric("WER of an empty reference".into()));
    }
    Ok(edit_distance(reference.labels(), hypothesis.labels()) as f64 / reference.len() as f64)
}

/// Corpus-level WER: total edits over total reference length.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct WerAccumulator {
    pub edits: usize,
    pub reference_words: usize,
}

impl WerAccumulator {
    pub fn add(&mut self, reference: &GlossSequence, hypothesis: &GlossSequence) {
        self.edits += edit_distance(reference.labels(), hypothesis.labels());
        self.reference_words += reference.len();
    }

    pub fn wer(&self) -> Result<f64> {
        if self.reference_words == 0 {
            return Err(HstError::UndefinedMetric("WER of an empty reference".into()));
        }
        Ok(self.edits as f64 / self.reference_words as f64)
    }
}
