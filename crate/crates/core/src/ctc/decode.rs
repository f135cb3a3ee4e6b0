use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{GlossSequence, LogitMatrix};
use crate::error::{HstError, Result};
use crate::scalar::{argmax, log_add, Scalar};

use super::{check_distributions, collapse, PROB_FLOOR};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecodeMode {
    #[default]
    Greedy,
    PrefixBeam,
}

impl std::str::FromStr for DecodeMode {
    type Err = HstError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(Self::Greedy),
            "beam" | "prefix-beam" => Ok(Self::PrefixBeam),
            other => Err(HstError::Config(format!("unknown decode mode {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    pub mode: DecodeMode,
    pub beam_width: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self { mode: DecodeMode::Greedy, beam_width: 10 }
    }
}

pub fn decode<S: Scalar>(probs: &LogitMatrix<S>, config: &DecodeConfig) -> Result<GlossSequence> {
    if config.beam_width == 0 {
        return Err(HstError::Config("beam_width must be at least 1".into()));
    }
    check_distributions(probs)?;
    Ok(match config.mode {
        DecodeMode::Greedy => greedy_decode(probs),
        DecodeMode::PrefixBeam => prefix_beam_decode(probs, config.beam_width),
    })
}

/// Best class per frame (ties to the lower index), then collapse.
pub fn greedy_decode<S: Scalar>(probs: &LogitMatrix<S>) -> GlossSequence {
    let path: Vec<usize> = (0..probs.frames()).map(|t| argmax(probs.row(t)).expect("non-empty row")).collect();
    GlossSequence::new(collapse(&path, probs.blank()))
}

#[derive(Clone, Copy)]
struct Beam<S> {
    /// ends in blank
    blank: S,
    /// ends in the last label of the prefix
    non_blank: S,
}

impl<S: Scalar> Beam<S> {
    fn empty() -> Self {
        Self { blank: S::neg_infinity(), non_blank: S::neg_infinity() }
    }

    fn total(&self) -> S {
        log_add(self.blank, self.non_blank)
    }
}

/// Prefix beam search in log space. Prefixes are merged by exact equality;
/// equal scores rank the lexicographically smaller prefix first.
pub fn prefix_beam_decode<S: Scalar>(probs: &LogitMatrix<S>, beam_width: usize) -> GlossSequence {
    let blank = probs.blank();
    let floor = S::lit(PROB_FLOOR);
    let mut beams: Vec<(Vec<usize>, Beam<S>)> = vec![(Vec::new(), Beam { blank: S::zero(), non_blank: S::neg_infinity() })];

    for t in 0..probs.frames() {
        let lp: Vec<S> = probs.row(t).iter().map(|p| p.max(floor).ln()).collect();
        let mut next: BTreeMap<Vec<usize>, Beam<S>> = BTreeMap::new();
        for (prefix, beam) in &beams {
            let total = beam.total();
            let stay = next.entry(prefix.clone()).or_insert_with(Beam::empty);
            stay.blank = log_add(stay.blank, total + lp[blank]);

            let last = prefix.last().copied();
            for (c, &lpc) in lp.iter().enumerate() {
                if c == blank {
                    continue;
                }
                if Some(c) == last {
                    let stay = next.get_mut(prefix).expect("inserted above");
                    stay.non_blank = log_add(stay.non_blank, beam.non_blank + lpc);
                    let mut longer = prefix.clone();
                    longer.push(c);
                    let ext = next.entry(longer).or_insert_with(Beam::empty);
                    ext.non_blank = log_add(ext.non_blank, beam.blank + lpc);
                } else {
                    let mut longer = prefix.clone();
                    longer.push(c);
                    let ext = next.entry(longer).or_insert_with(Beam::empty);
                    ext.non_blank = log_add(ext.non_blank, total + lpc);
                }
            }
        }
        let mut ranked: Vec<(Vec<usize>, Beam<S>)> = next.into_iter().collect();
        ranked.sort_by(|(pa, a), (pb, b)| {
            b.total().partial_cmp(&a.total()).unwrap_or(Ordering::Equal).then_with(|| pa.cmp(pb))
        });
        ranked.truncate(beam_width);
        beams = ranked;
    }
    GlossSequence::new(beams.into_iter().next().map(|(p, _)| p).unwrap_or_default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn greedy_collapses_repeats_and_blanks() {
        // classes g0, g1, g2, blank = 3; argmaxes [blank, g1, g1, blank, g2]
        let p = LogitMatrix::new(array![
            [0.1f64, 0.1, 0.1, 0.7],
            [0.1, 0.7, 0.1, 0.1],
            [0.1, 0.6, 0.2, 0.1],
            [0.2, 0.1, 0.1, 0.6],
            [0.1, 0.1, 0.7, 0.1],
        ])
        .unwrap();
        assert_eq!(greedy_decode(&p).labels(), &[1, 2]);
    }

    #[test]
    fn all_blank_decodes_empty() {
        let p = LogitMatrix::new(array![[0.2f64, 0.8], [0.1, 0.9]]).unwrap();
        assert!(greedy_decode(&p).is_empty());
        assert!(prefix_beam_decode(&p, 4).is_empty());
    }

    #[test]
    fn beam_finds_prefix_greedy_misses() {
        // greedy path is blank,blank (empty), but "0" has total 1 - 0.6*0.6 = 0.64 > 0.36
        let p = LogitMatrix::new(array![[0.4f64, 0.6], [0.4, 0.6]]).unwrap();
        assert!(greedy_decode(&p).is_empty());
        assert_eq!(prefix_beam_decode(&p, 3).labels(), &[0]);
    }

    #[test]
    fn width_one_can_differ_from_greedy() {
        // greedy path a,blank,a -> "aa". Width-1 beam keeps "a" after frame 1
        // with blank mass .306 and non-blank mass .294; at frame 2 "a" scores
        // .6*.4 + .294*.6 = .4164 against .306*.6 = .1836 for "aa".
        let p = LogitMatrix::new(array![[0.6f64, 0.4], [0.49, 0.51], [0.6, 0.4]]).unwrap();
        assert_eq!(greedy_decode(&p).labels(), &[0, 0]);
        assert_eq!(prefix_beam_decode(&p, 1).labels(), &[0]);
    }

    #[test]
    fn zero_width_rejected() {
        let p = LogitMatrix::new(array![[0.5f64, 0.5]]).unwrap();
        assert!(decode(&p, &DecodeConfig { mode: DecodeMode::PrefixBeam, beam_width: 0 }).is_err());
    }
}
