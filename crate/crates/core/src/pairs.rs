//! NLI-style pair generation: every ordered pair of distinct examples becomes a
//! training record, labeled as a match when both carry the same intent.

use std::io::Write;

use rand::seq::index;

use crate::corpus::FewShotSet;
use crate::error::{Error, Result};
use crate::seed;
use crate::tsv;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pair {
    pub premise: String,
    pub hypothesis: String,
    pub is_match: bool,
    pub premise_label: String,
    pub hypothesis_label: String,
    /// Positions in the few-shot set's canonical example order.
    pub premise_index: usize,
    pub hypothesis_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PairStats {
    pub positives: usize,
    pub negatives: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairSet {
    pub pairs: Vec<Pair>,
    pub source_seed: u64,
    pub stats: PairStats,
}

/// Closed-form pair counts for a list of per-intent example counts:
/// positives Σ K_c(K_c−1), negatives Σ_{c≠c'} K_c·K_{c'}.
pub fn expected_counts(sizes: &[usize]) -> PairStats {
    let total: usize = sizes.iter().sum();
    let positives = sizes.iter().map(|&k| k * k.saturating_sub(1)).sum();
    let negatives = sizes.iter().map(|&k| k * (total - k)).sum();
    PairStats {
        positives,
        negatives,
    }
}

/// Generate ordered pairs from `fewshot`.
///
/// With `negative_cap_per_positive = Some(c)`, negatives are a seeded uniform
/// subsample of size `c · positives` (or all of them, if fewer exist). Output
/// follows the (premise, hypothesis) enumeration order either way.
pub fn generate_pairs(
    fewshot: &FewShotSet,
    negative_cap_per_positive: Option<usize>,
    seed: u64,
) -> Result<PairSet> {
    if fewshot.total() < 2 {
        return Err(Error::validation(
            "at least two examples are needed to derive pairs",
        ));
    }
    if negative_cap_per_positive == Some(0) {
        return Err(Error::validation("negative cap must be positive"));
    }
    let examples: Vec<(&str, &str)> = fewshot.iter().map(|(l, _, u)| (l, u.text.as_str())).collect();
    let sizes: Vec<usize> = fewshot.shots.values().map(Vec::len).collect();
    let expected = expected_counts(&sizes);

    let keep_negative: Option<Vec<bool>> = negative_cap_per_positive.and_then(|cap| {
        let budget = cap.saturating_mul(expected.positives);
        (budget < expected.negatives).then(|| {
            let mut rng = seed::rng_for(seed, "negatives");
            let mut mask = vec![false; expected.negatives];
            for i in index::sample(&mut rng, expected.negatives, budget) {
                mask[i] = true;
            }
            mask
        })
    });

    let mut pairs = Vec::new();
    let mut stats = PairStats::default();
    let mut negative_ordinal = 0;
    for (i, &(pl, pt)) in examples.iter().enumerate() {
        for (j, &(hl, ht)) in examples.iter().enumerate() {
            if i == j {
                continue;
            }
            let is_match = pl == hl;
            if !is_match {
                let keep = keep_negative.as_ref().is_none_or(|m| m[negative_ordinal]);
                negative_ordinal += 1;
                if !keep {
                    continue;
                }
                stats.negatives += 1;
            } else {
                stats.positives += 1;
            }
            pairs.push(Pair {
                premise: pt.to_string(),
                hypothesis: ht.to_string(),
                is_match,
                premise_label: pl.to_string(),
                hypothesis_label: hl.to_string(),
                premise_index: i,
                hypothesis_index: j,
            });
        }
    }
    Ok(PairSet {
        pairs,
        source_seed: seed,
        stats,
    })
}

/// Write `premise<TAB>hypothesis<TAB>match` records (match is 1 or 0) with a
/// header row.
pub fn write_pairs<W: Write>(set: &PairSet, out: W) -> Result<()> {
    let mut w = tsv::writer(out);
    let io = |e: csv::Error| Error::io("pair dump", std::io::Error::other(e));
    w.write_record(["premise", "hypothesis", "match"]).map_err(io)?;
    for p in &set.pairs {
        w.write_record([p.premise.as_str(), p.hypothesis.as_str(), if p.is_match { "1" } else { "0" }])
            .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io("pair dump", e))
}
