//! Caption evaluation measures: BLEU-4, ROUGE-L, METEOR-lite, CIDEr, and
//! embedding cosine, plus per-run aggregation.
//!
//! All measures share the fixed tokenizer in [`crate::textproc`] and are
//! reported on a 0-100 percent scale except CIDEr, which uses the standard
//! x10 convention (the scale is recorded in the report header). METEOR here
//! is a reduced variant: exact and suffix-stem unigram matching only, no
//! synonym or paraphrase stages; the deviation is recorded in every report.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::embedding::{cosine, Embedder};
use crate::error::{Error, Result};
use crate::num::Real;
use crate::textproc::{ngrams, stem, tokenize};
use crate::Scalar;

pub const REPORT_VERSION: &str = "report/1";

const BLEU_EPSILON: f64 = 1e-9;
const ROUGE_BETA: f64 = 1.2;

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<String, usize> {
    let mut counts = HashMap::new();
    for g in ngrams(tokens, n) {
        *counts.entry(g).or_insert(0) += 1;
    }
    counts
}

/// BLEU-4: geometric mean of clipped n-gram precisions (n = 1..4) with
/// brevity penalty, on a 0-100 scale. Zero match counts are smoothed with a
/// tiny epsilon so the geometric mean stays defined.
pub fn bleu4<R: Real>(pred: &str, refs: &[&str]) -> R {
    let pred_tokens = tokenize(pred);
    if pred_tokens.is_empty() || refs.is_empty() {
        return R::zero();
    }
    let ref_tokens: Vec<Vec<String>> = refs.iter().map(|r| tokenize(r)).collect();

    let mut log_precisions = 0.0f64;
    for n in 1..=4 {
        let pred_counts = ngram_counts(&pred_tokens, n);
        let total: usize = pred_counts.values().sum();
        let p = if total == 0 {
            BLEU_EPSILON
        } else {
            let mut clipped = 0usize;
            for (gram, &count) in &pred_counts {
                let max_ref = ref_tokens
                    .iter()
                    .map(|rt| ngram_counts(rt, n).get(gram).copied().unwrap_or(0))
                    .max()
                    .unwrap_or(0);
                clipped += count.min(max_ref);
            }
            if clipped == 0 {
                BLEU_EPSILON / total as f64
            } else {
                clipped as f64 / total as f64
            }
        };
        log_precisions += p.ln();
    }
    let geo_mean = (log_precisions / 4.0).exp();

    let c = pred_tokens.len() as f64;
    let r = ref_tokens
        .iter()
        .map(|rt| rt.len())
        .min_by_key(|&len| ((len as f64 - c).abs() * 1e6) as u64)
        .unwrap_or(0) as f64;
    let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };

    // exact 100 on identity: all precisions are 1, bp is 1
    if (geo_mean - 1.0).abs() < f64::EPSILON && bp >= 1.0 {
        return R::from_f64_c(100.0);
    }
    R::from_f64_c(100.0 * bp * geo_mean)
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut dp = vec![0usize; b.len() + 1];
    for x in a {
        let mut prev = 0;
        for (j, y) in b.iter().enumerate() {
            let tmp = dp[j + 1];
            dp[j + 1] = if x == y { prev + 1 } else { dp[j + 1].max(dp[j]) };
            prev = tmp;
        }
    }
    dp[b.len()]
}

/// ROUGE-L: F-measure over the longest common token subsequence, beta = 1.2.
pub fn rouge_l<R: Real>(pred: &str, reference: &str) -> R {
    let p_tokens = tokenize(pred);
    let r_tokens = tokenize(reference);
    if p_tokens.is_empty() || r_tokens.is_empty() {
        return R::zero();
    }
    let lcs = lcs_len(&p_tokens, &r_tokens) as f64;
    if lcs == 0.0 {
        return R::zero();
    }
    let precision = lcs / p_tokens.len() as f64;
    let recall = lcs / r_tokens.len() as f64;
    let beta2 = ROUGE_BETA * ROUGE_BETA;
    let f = (1.0 + beta2) * precision * recall / (recall + beta2 * precision);
    if precision == 1.0 && recall == 1.0 {
        return R::from_f64_c(100.0);
    }
    R::from_f64_c(100.0 * f)
}

/// METEOR-lite: unigram alignment by exact match, then by suffix stem;
/// harmonic mean weighted toward recall with a fragmentation penalty.
/// Synonym and paraphrase stages of full METEOR are intentionally absent.
pub fn meteor_lite<R: Real>(pred: &str, reference: &str) -> R {
    let p_tokens = tokenize(pred);
    let r_tokens = tokenize(reference);
    if p_tokens.is_empty() || r_tokens.is_empty() {
        return R::zero();
    }

    // alignment[i] = index into r_tokens matched by pred token i
    let mut alignment: Vec<Option<usize>> = vec![None; p_tokens.len()];
    let mut ref_used = vec![false; r_tokens.len()];
    // pass 1: exact
    for (i, pt) in p_tokens.iter().enumerate() {
        if let Some(j) = r_tokens
            .iter()
            .enumerate()
            .position(|(j, rt)| !ref_used[j] && rt == pt)
        {
            alignment[i] = Some(j);
            ref_used[j] = true;
        }
    }
    // pass 2: stem
    for (i, pt) in p_tokens.iter().enumerate() {
        if alignment[i].is_some() {
            continue;
        }
        if let Some(j) = r_tokens
            .iter()
            .enumerate()
            .position(|(j, rt)| !ref_used[j] && stem(rt) == stem(pt))
        {
            alignment[i] = Some(j);
            ref_used[j] = true;
        }
    }

    let matches = alignment.iter().flatten().count();
    if matches == 0 {
        return R::zero();
    }
    let m = matches as f64;
    let precision = m / p_tokens.len() as f64;
    let recall = m / r_tokens.len() as f64;
    let f_mean = 10.0 * precision * recall / (recall + 9.0 * precision);

    // chunks: maximal runs of matches that are contiguous in both sentences
    let mut chunks = 0usize;
    let mut prev: Option<usize> = None;
    for a in &alignment {
        match (a, prev) {
            (Some(j), Some(pj)) if *j == pj + 1 => {}
            (Some(_), _) => chunks += 1,
            (None, _) => {}
        }
        prev = *a;
    }
    let penalty = 0.5 * (chunks as f64 / m).powi(3);
    R::from_f64_c(100.0 * f_mean * (1.0 - penalty))
}

/// Per-instance CIDEr scores plus the corpus mean.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CiderScores {
    pub per_instance: BTreeMap<u32, f64>,
    pub mean: f64,
}

/// CIDEr: per n in 1..4, cosine between n-gram TF-IDF vectors of prediction
/// and reference, idf taken over the reference corpus; the mean over n is
/// scaled by 10. N-grams absent from every reference carry no idf evidence
/// and get weight 0, which keeps scores invariant under uniform corpus
/// duplication.
///
/// The corpus must contain at least two instances for idf to be informative.
pub fn cider(preds: &BTreeMap<u32, String>, refs: &BTreeMap<u32, String>) -> Result<CiderScores> {
    if refs.len() < 2 {
        return Err(Error::DegenerateCorpus(format!(
            "cider needs >= 2 reference instances, got {}",
            refs.len()
        )));
    }
    let corpus_size = refs.len() as f64;
    let ref_tokens: BTreeMap<u32, Vec<String>> =
        refs.iter().map(|(&k, v)| (k, tokenize(v))).collect();

    // document frequency per n-gram over reference instances
    let mut df: Vec<HashMap<String, usize>> = vec![HashMap::new(); 4];
    for tokens in ref_tokens.values() {
        for n in 1..=4 {
            let mut seen: Vec<String> = ngram_counts(tokens, n).into_keys().collect();
            seen.sort_unstable();
            for gram in seen {
                *df[n - 1].entry(gram).or_insert(0) += 1;
            }
        }
    }

    let tfidf = |tokens: &[String], n: usize| -> HashMap<String, f64> {
        ngram_counts(tokens, n)
            .into_iter()
            .filter_map(|(gram, count)| {
                let d = df[n - 1].get(&gram).copied().unwrap_or(0);
                (d > 0).then(|| {
                    let w = count as f64 * (corpus_size / d as f64).ln();
                    (gram, w)
                })
            })
            .collect()
    };

    let mut per_instance = BTreeMap::new();
    for (&id, pred) in preds {
        let Some(rt) = ref_tokens.get(&id) else { continue };
        let pt = tokenize(pred);
        let mut acc = 0.0;
        for n in 1..=4 {
            let pv = tfidf(&pt, n);
            let rv = tfidf(rt, n);
            let dot: f64 = pv
                .iter()
                .filter_map(|(g, w)| rv.get(g).map(|rw| w * rw))
                .sum();
            let pn: f64 = pv.values().map(|w| w * w).sum::<f64>().sqrt();
            let rn: f64 = rv.values().map(|w| w * w).sum::<f64>().sqrt();
            if pn > 0.0 && rn > 0.0 {
                acc += dot / (pn * rn);
            }
        }
        per_instance.insert(id, 10.0 * acc / 4.0);
    }

    if per_instance.is_empty() {
        return Err(Error::Evaluation("no prediction matches a reference instance".into()));
    }
    let mean = per_instance.values().sum::<f64>() / per_instance.len() as f64;
    Ok(CiderScores { per_instance, mean })
}

/// 100 * max(0, cosine) between the two texts' embeddings. The flag is true
/// when either embedding was all-zero (score forced to 0).
pub fn embed_cosine(pred: &str, reference: &str, embedder: &dyn Embedder) -> (Scalar, bool) {
    let a = embedder.embed(pred);
    let b = embedder.embed(reference);
    if a.is_zero() || b.is_zero() {
        return (0.0, true);
    }
    (100.0 * cosine(&a, &b).max(0.0), false)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct InstanceScores {
    pub b4: f64,
    pub meteor: f64,
    pub rouge_l: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cider: Option<f64>,
    pub cs: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunLabels {
    pub policy: String,
    pub method: String,
    pub captioner: String,
}

/// Scored comparison of predictions against annotations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub version: String,
    pub labels: RunLabels,
    /// Known deviations from the reference metric formulations.
    pub deviations: Vec<String>,
    pub cider_scale: String,
    pub per_instance: BTreeMap<u32, InstanceScores>,
    pub mean_b4: f64,
    pub mean_meteor: f64,
    pub mean_rouge_l: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_cider: Option<f64>,
    pub mean_cs: f64,
    pub evaluated: usize,
    /// Annotation instances with no prediction, excluded from means.
    pub missing: Vec<u32>,
    pub warnings: Vec<String>,
}

pub fn standard_deviations() -> Vec<String> {
    vec![
        "METEOR is a reduced variant: exact + suffix-stem matching only".into(),
        "SPICE is not computed (requires a dependency parser)".into(),
        "CIDEr reported on the standard x10 scale".into(),
    ]
}

/// Score every annotated instance that has a prediction; corpus means exclude
/// missing instances. CIDEr is omitted (with a warning) when fewer than two
/// instances overlap.
pub fn evaluate_run(
    preds: &BTreeMap<u32, String>,
    annotations: &BTreeMap<u32, String>,
    embedder: &dyn Embedder,
    labels: RunLabels,
) -> Result<MetricsReport> {
    let overlap: Vec<u32> = annotations
        .keys()
        .filter(|k| preds.contains_key(k))
        .copied()
        .collect();
    if overlap.is_empty() {
        return Err(Error::Evaluation(
            "prediction and annotation instance sets are disjoint".into(),
        ));
    }

    let mut warnings = Vec::new();
    let cider_scores = if overlap.len() >= 2 {
        let sub_refs: BTreeMap<u32, String> = overlap
            .iter()
            .map(|k| (*k, annotations[k].clone()))
            .collect();
        Some(cider(preds, &sub_refs)?)
    } else {
        warnings.push("cider skipped: fewer than 2 overlapping instances".into());
        None
    };

    let mut per_instance = BTreeMap::new();
    for &id in &overlap {
        let pred = &preds[&id];
        let ann = &annotations[&id];
        let (cs, zero) = embed_cosine(pred, ann, embedder);
        if zero {
            warnings.push(format!("instance {id}: zero embedding, cs forced to 0"));
        }
        per_instance.insert(
            id,
            InstanceScores {
                b4: bleu4(pred, &[ann.as_str()]),
                meteor: meteor_lite(pred, ann),
                rouge_l: rouge_l(pred, ann),
                cider: cider_scores
                    .as_ref()
                    .and_then(|c| c.per_instance.get(&id).copied()),
                cs,
            },
        );
    }

    let n = per_instance.len() as f64;
    let mean = |f: &dyn Fn(&InstanceScores) -> f64| per_instance.values().map(f).sum::<f64>() / n;
    let missing: Vec<u32> = annotations
        .keys()
        .filter(|k| !preds.contains_key(k))
        .copied()
        .collect();
    for id in preds.keys().filter(|k| !annotations.contains_key(k)) {
        warnings.push(format!("prediction {id} has no annotation; ignored"));
    }

    Ok(MetricsReport {
        version: REPORT_VERSION.into(),
        labels,
        deviations: standard_deviations(),
        cider_scale: "x10".into(),
        mean_b4: mean(&|s| s.b4),
        mean_meteor: mean(&|s| s.meteor),
        mean_rouge_l: mean(&|s| s.rouge_l),
        mean_cider: cider_scores.as_ref().map(|c| c.mean),
        mean_cs: mean(&|s| s.cs),
        evaluated: per_instance.len(),
        per_instance,
        missing,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::HashedEmbedder;

    #[test]
    fn bleu_identity_is_exactly_100() {
        let s = "a red couch near the window";
        assert_eq!(bleu4::<f64>(s, &[s]), 100.0);
    }

    #[test]
    fn bleu_disjoint_is_near_zero() {
        let b: f64 = bleu4("couch couch couch couch", &["table bed toilet tv"]);
        assert!(b <= 1e-6, "{b}");
    }

    // Hand computation: pred "a red couch in room", ref "a red couch in the room".
    // p1 = 5/5, p2 = 3/4, p3 = 2/3, p4 = 1/2; BP = exp(1 - 6/5).
    #[test]
    fn bleu_hand_computed_value() {
        let expected = 100.0 * (-0.2f64).exp() * (1.0f64 * 0.75 * (2.0 / 3.0) * 0.5).powf(0.25);
        let got: f64 = bleu4("a red couch in room", &["a red couch in the room"]);
        assert!((got - expected).abs() < 1e-9, "{got} vs {expected}");
    }

    #[test]
    fn bleu_empty_pred_is_zero() {
        assert_eq!(bleu4::<f64>("", &["a couch"]), 0.0);
    }

    #[test]
    fn rouge_identity_and_disjoint() {
        assert_eq!(rouge_l::<f64>("a b c", "a b c"), 100.0);
        assert_eq!(rouge_l::<f64>("a b c", "x y z"), 0.0);
    }

    // pred "a b c", ref "a x c": LCS=2, P=R=2/3, F = (1+b^2)PR/(R+b^2 P).
    #[test]
    fn rouge_hand_computed_value() {
        let p = 2.0 / 3.0;
        let b2 = 1.2f64 * 1.2;
        let expected = 100.0 * (1.0 + b2) * p * p / (p + b2 * p);
        let got: f64 = rouge_l("a b c", "a x c");
        assert!((got - expected).abs() < 1e-9);
    }

    #[test]
    fn meteor_identity_has_single_chunk_penalty() {
        // m matches in 1 chunk: score = 100 * (1 - 0.5/m^3)
        let s = "a red couch";
        let expected = 100.0 * (1.0 - 0.5 / 27.0);
        let got: f64 = meteor_lite(s, s);
        assert!((got - expected).abs() < 1e-9, "{got}");
    }

    #[test]
    fn meteor_disjoint_is_zero() {
        assert_eq!(meteor_lite::<f64>("couch red", "table blue"), 0.0);
    }

    #[test]
    fn meteor_stem_matches_plural() {
        let got: f64 = meteor_lite("two couches", "two couch");
        assert!(got > 50.0, "{got}");
    }

    #[test]
    fn cider_corpus_of_one_is_error() {
        let one: BTreeMap<u32, String> = [(0u32, "a couch".to_string())].into();
        assert!(matches!(cider(&one, &one), Err(Error::DegenerateCorpus(_))));
    }

    #[test]
    fn cider_no_overlap_scores_zero() {
        let preds: BTreeMap<u32, String> =
            [(0u32, "xx yy".to_string()), (1, "zz ww".to_string())].into();
        let refs: BTreeMap<u32, String> =
            [(0u32, "a couch".to_string()), (1, "a table".to_string())].into();
        let scores = cider(&preds, &refs).unwrap();
        assert_eq!(scores.per_instance[&0], 0.0);
        assert_eq!(scores.per_instance[&1], 0.0);
    }

    // Duplicating every corpus instance preserves idf ratios, hence scores.
    #[test]
    fn cider_invariant_under_corpus_duplication() {
        let preds: BTreeMap<u32, String> = [
            (0u32, "a red couch".to_string()),
            (1, "a wooden table in a room".to_string()),
            (2, "a tv".to_string()),
        ]
        .into();
        let refs: BTreeMap<u32, String> = [
            (0u32, "a red couch near a wall".to_string()),
            (1, "a wooden table".to_string()),
            (2, "a tv on a stand".to_string()),
        ]
        .into();
        let base = cider(&preds, &refs).unwrap();

        let mut preds2 = preds.clone();
        let mut refs2 = refs.clone();
        for k in 0..3u32 {
            preds2.insert(k + 10, preds[&k].clone());
            refs2.insert(k + 10, refs[&k].clone());
            preds2.insert(k + 20, preds[&k].clone());
            refs2.insert(k + 20, refs[&k].clone());
        }
        let tripled = cider(&preds2, &refs2).unwrap();
        for k in 0..3u32 {
            assert!((base.per_instance[&k] - tripled.per_instance[&k]).abs() < 1e-9);
        }
    }

    #[test]
    fn embed_cosine_identity_and_zero() {
        let e = HashedEmbedder::default();
        let (s, w) = embed_cosine("a couch", "a couch", &e);
        assert_eq!(s, 100.0);
        assert!(!w);
        let (s, w) = embed_cosine("", "x", &e);
        assert_eq!(s, 0.0);
        assert!(w);
    }

    #[test]
    fn bleu_is_word_order_sensitive_beyond_unigrams() {
        let reference = "a red couch near the window";
        let reordered = "window the near couch red a";
        let b_same: f64 = bleu4(reference, &[reference]);
        let b_reordered: f64 = bleu4(reordered, &[reference]);
        assert!(b_reordered < b_same);
        // unigram precision alone is unchanged: every token still matches
        let p_toks = tokenize(reordered);
        let counts = ngram_counts(&tokenize(reference), 1);
        let matched = p_toks.iter().filter(|t| counts.contains_key(*t)).count();
        assert_eq!(matched, p_toks.len());
    }

    #[test]
    fn evaluate_run_identity_scores_100() {
        let anns: BTreeMap<u32, String> = [
            (0u32, "a red couch near the window".to_string()),
            (1, "a wooden table near the door".to_string()),
            (2, "a small tv on the shelf".to_string()),
        ]
        .into();
        let report =
            evaluate_run(&anns.clone(), &anns, &HashedEmbedder::default(), RunLabels::default())
                .unwrap();
        for s in report.per_instance.values() {
            assert_eq!(s.b4, 100.0);
            assert_eq!(s.rouge_l, 100.0);
            assert_eq!(s.cs, 100.0);
        }
        assert_eq!(report.evaluated, 3);
        assert!(report.missing.is_empty());
    }

    #[test]
    fn evaluate_run_reports_missing_instances() {
        let anns: BTreeMap<u32, String> = [
            (0u32, "a red couch near the window".to_string()),
            (1, "a wooden table near the door".to_string()),
            (2, "a small tv on the shelf".to_string()),
        ]
        .into();
        let mut preds = anns.clone();
        preds.remove(&1);
        let report =
            evaluate_run(&preds, &anns, &HashedEmbedder::default(), RunLabels::default()).unwrap();
        assert_eq!(report.evaluated, 2);
        assert_eq!(report.missing, vec![1]);
    }

    #[test]
    fn evaluate_run_disjoint_keys_is_error() {
        let preds: BTreeMap<u32, String> = [(0u32, "a".to_string())].into();
        let anns: BTreeMap<u32, String> = [(1u32, "b".to_string())].into();
        assert!(matches!(
            evaluate_run(&preds, &anns, &HashedEmbedder::default(), RunLabels::default()),
            Err(Error::Evaluation(_))
        ));
    }

    #[test]
    fn metrics_generic_over_f32() {
        let b: f32 = bleu4("a red couch by a wall", &["a red couch by a wall"]);
        assert_eq!(b, 100.0);
        let r: f32 = rouge_l("a b c", "a b c");
        assert_eq!(r, 100.0);
    }
}
