//! Locality-driven matching.
//!
//! Functions compiled from one source file stay contiguous in the linked
//! binary. Each candidate file therefore claims the densest window of
//! binary addresses whose retrieved candidates it contains; windows are
//! chosen greedily to cover the address space without overlap, and inside
//! a chosen window the call graph decides between competing candidates.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::ScaDatabase;
use crate::retrieval::CandidateSet;

/// bin_rva -> candidate func_ids, for one file.
pub type PairMap = BTreeMap<u64, BTreeSet<String>>;

/// Default similarity floor for a candidate to count as locality evidence.
/// With the feature-hashing embedder, unrelated functions that share only
/// C syntax land between 0.4 and 0.83, while a function and its compiled
/// form with up to 10% token edits stay above 0.88.
pub const DEFAULT_MIN_SIMILARITY: f64 = 0.85;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchParams {
    /// Candidates below this similarity still take part in top-1
    /// initialization but are not attributed to files.
    pub min_similarity: f64,
}

impl Default for MatchParams {
    fn default() -> Self {
        MatchParams {
            min_similarity: DEFAULT_MIN_SIMILARITY,
        }
    }
}

impl MatchParams {
    /// No similarity floor: every retrieved candidate is file evidence.
    pub fn unfiltered() -> Self {
        MatchParams {
            min_similarity: f64::NEG_INFINITY,
        }
    }
}

/// Indexes every (bin_rva, func_id) pair under each file containing func_id.
pub fn build_file_to_pairs(topk: &[CandidateSet], min_similarity: f64) -> BTreeMap<String, PairMap> {
    let mut file2pairs: BTreeMap<String, PairMap> = BTreeMap::new();
    for set in topk {
        for cand in set.candidates.iter().filter(|c| c.similarity >= min_similarity) {
            for file in &cand.file_ids {
                file2pairs
                    .entry(file.clone())
                    .or_default()
                    .entry(set.bin_rva)
                    .or_default()
                    .insert(cand.func_id.clone());
            }
        }
    }
    file2pairs
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileInterval {
    pub file_id: String,
    /// First and last address of the window (addresses, not indices).
    pub start: u64,
    pub end: u64,
    /// Number of (bin_rva, func_id) pairs inside the window.
    pub max_hit: usize,
    /// Number of distinct source functions inside the window.
    pub distinct_funcs: usize,
    pub func_pairs: PairMap,
    /// Sum over addresses of the best in-file candidate similarity. Left at
    /// 0 by [`max_file_interval`]; [`match_func_pairs`] fills it in.
    pub similarity_sum: f64,
}

/// Two-pointer sweep over the file's pairs in address order.
///
/// Returns the window with the most pairs whose distinct source functions
/// number at most `file_func_count`; among equally good windows the one
/// starting first wins. Windows with fewer than two pairs are isolated
/// matches and yield `None`.
pub fn max_file_interval(file_id: &str, pairs: &PairMap, file_func_count: usize) -> Option<FileInterval> {
    let addresses: Vec<u64> = pairs.keys().copied().collect();
    let mut counts: HashMap<&str, usize> = HashMap::new();
    let mut window_hits = 0usize;
    let mut best: Option<(usize, usize, usize)> = None;
    let mut i = 0;

    for j in 0..addresses.len() {
        for f in &pairs[&addresses[j]] {
            *counts.entry(f.as_str()).or_default() += 1;
        }
        window_hits += pairs[&addresses[j]].len();
        while counts.len() > file_func_count && i <= j {
            for f in &pairs[&addresses[i]] {
                let c = counts.get_mut(f.as_str()).expect("counted on entry");
                *c -= 1;
                if *c == 0 {
                    counts.remove(f.as_str());
                }
            }
            window_hits -= pairs[&addresses[i]].len();
            i += 1;
        }
        if i <= j && best.is_none_or(|(_, _, hits)| window_hits > hits) {
            best = Some((i, j, window_hits));
        }
    }

    let (i, j, max_hit) = best?;
    if max_hit < 2 {
        return None;
    }
    let func_pairs: PairMap = addresses[i..=j]
        .iter()
        .map(|a| (*a, pairs[a].clone()))
        .collect();
    let distinct_funcs = func_pairs.values().flatten().collect::<BTreeSet<_>>().len();
    Some(FileInterval {
        file_id: file_id.to_string(),
        start: addresses[i],
        end: addresses[j],
        max_hit,
        distinct_funcs,
        func_pairs,
        similarity_sum: 0.0,
    })
}

/// Sorts by (start asc, end desc, max_hit desc, similarity_sum desc,
/// file_id asc) and greedily
/// keeps every interval starting strictly after the last kept end.
pub fn select_intervals(mut intervals: Vec<FileInterval>) -> Vec<FileInterval> {
    intervals.sort_by(|a, b| {
        a.start
            .cmp(&b.start)
            .then(b.end.cmp(&a.end))
            .then(b.max_hit.cmp(&a.max_hit))
            .then(b.similarity_sum.total_cmp(&a.similarity_sum))
            .then(a.file_id.cmp(&b.file_id))
    });
    let mut last_end: Option<u64> = None;
    let mut selected = Vec::new();
    for interval in intervals {
        if last_end.is_none_or(|end| interval.start > end) {
            last_end = Some(interval.end);
            selected.push(interval);
        }
    }
    selected
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RestrictedPair {
    pub func_id: String,
    /// True when a call edge on both sides supports the pair.
    pub confirmed: bool,
}

/// Picks one source function per address of a selected interval.
///
/// A pair (b1, s1) is confirmed when another pair (b2, s2) of the same
/// interval sits on a call edge in the same direction on both sides
/// (b1 calls b2 and s1 calls s2, or b2 calls b1 and s2 calls s1). Confirmed
/// candidates win over unconfirmed ones; otherwise the most similar
/// candidate is kept, ties going to the smaller func_id.
pub fn restrict_by_fcg<F>(
    interval: &FileInterval,
    bin_callgraph: &BTreeMap<u64, BTreeSet<u64>>,
    src_callgraph: &BTreeMap<String, BTreeSet<String>>,
    similarity: F,
) -> BTreeMap<u64, RestrictedPair>
where
    F: Fn(u64, &str) -> f64,
{
    let none_u64 = BTreeSet::new();
    let none_str = BTreeSet::new();
    let bin_calls = |b: &u64| bin_callgraph.get(b).unwrap_or(&none_u64);
    let src_calls = |s: &str| src_callgraph.get(s).unwrap_or(&none_str);
    let pairs = &interval.func_pairs;

    let is_confirmed = |b1: u64, s1: &str| {
        pairs.iter().any(|(&b2, s2s)| {
            s2s.iter().any(|s2| {
                let forward = bin_calls(&b1).contains(&b2) && src_calls(s1).contains(s2);
                let backward = bin_calls(&b2).contains(&b1) && src_calls(s2).contains(s1);
                forward || backward
            })
        })
    };

    let better = |b: u64, x: &str, y: &str| {
        let (sx, sy) = (similarity(b, x), similarity(b, y));
        sx > sy || (sx == sy && x < y)
    };

    pairs
        .iter()
        .filter_map(|(&b, candidates)| {
            let confirmed: Vec<&String> = candidates.iter().filter(|s| is_confirmed(b, s)).collect();
            let pool: Vec<&String> = if confirmed.is_empty() {
                candidates.iter().collect()
            } else {
                confirmed
            };
            let best = pool
                .into_iter()
                .reduce(|acc, s| if better(b, s, acc) { s } else { acc })?;
            Some((
                b,
                RestrictedPair {
                    func_id: best.clone(),
                    confirmed: is_confirmed(b, best),
                },
            ))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    #[serde(rename = "top1")]
    Top1,
    #[serde(rename = "locality")]
    Locality,
    #[serde(rename = "locality+fcg")]
    LocalityFcg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub func_id: String,
    pub file_id: Option<String>,
    pub provenance: Provenance,
    pub similarity: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MatchResult {
    pub matches: BTreeMap<u64, Match>,
    /// Intervals chosen by the greedy cover, in selection order.
    pub selected: Vec<FileInterval>,
}

/// Top-1 initialization followed by interval selection and call-graph
/// restriction. Every emitted func_id comes from that address's candidates.
pub fn match_func_pairs(
    topk: &[CandidateSet],
    db: &ScaDatabase,
    bin_callgraph: &BTreeMap<u64, BTreeSet<u64>>,
    params: &MatchParams,
) -> MatchResult {
    let by_rva: BTreeMap<u64, &CandidateSet> = topk.iter().map(|s| (s.bin_rva, s)).collect();
    let mut matches = BTreeMap::new();
    for set in topk {
        if let Some(top) = set.top1() {
            matches.insert(
                set.bin_rva,
                Match {
                    func_id: top.func_id.clone(),
                    file_id: top.file_ids.first().cloned(),
                    provenance: Provenance::Top1,
                    similarity: top.similarity,
                },
            );
        }
    }

    let similarity = |b: u64, s: &str| {
        by_rva
            .get(&b)
            .and_then(|set| set.similarity_of(s))
            .unwrap_or(f64::NEG_INFINITY)
    };
    let intervals: Vec<FileInterval> = build_file_to_pairs(topk, params.min_similarity)
        .iter()
        .filter_map(|(file_id, pairs)| {
            let file = db.files.get(file_id)?;
            let mut interval = max_file_interval(file_id, pairs, file.func_count())?;
            interval.similarity_sum = interval
                .func_pairs
                .iter()
                .map(|(&b, funcs)| funcs.iter().map(|s| similarity(b, s)).fold(f64::NEG_INFINITY, f64::max))
                .sum();
            Some(interval)
        })
        .collect();
    let selected = select_intervals(intervals);

    for interval in &selected {
        for (b, pair) in restrict_by_fcg(interval, bin_callgraph, &db.calls, similarity) {
            matches.insert(
                b,
                Match {
                    similarity: similarity(b, &pair.func_id),
                    func_id: pair.func_id,
                    file_id: Some(interval.file_id.clone()),
                    provenance: if pair.confirmed {
                        Provenance::LocalityFcg
                    } else {
                        Provenance::Locality
                    },
                },
            );
        }
    }
    MatchResult { matches, selected }
}
