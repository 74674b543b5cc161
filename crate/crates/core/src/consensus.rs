//! Consensus pseudo-captioning: distill the multi-view caption multiset of
//! each object instance into a single description.
//!
//! The primary method prompts an LLM with caption frequencies and in-context
//! examples (with a deterministic frequency-weighted medoid as the offline
//! realization and failure fallback). Two baselines ship alongside: an
//! alignment + consensus selector over the raw caption set, and an LLM
//! summarizer without frequency information whose offline substitute is a
//! containment-deduplicated concatenation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::embedding::{cosine, Embedder};
use crate::error::{Error, Result};
use crate::llm::{LlmClient, LlmRequest, LlmSettings};
use crate::scene::Scene;
use crate::textproc::{collapse_whitespace, ngrams, tokenize};
use crate::voxmap::ObjectInstance;
use crate::Embedding;

pub const PSEUDO_VERSION: &str = "pseudo/1";

/// Leading boilerplate phrases stripped during preprocessing.
pub const DEFAULT_BOILERPLATE: [&str; 3] = ["a picture of", "a photo of", "an image of"];

/// Default mixing weight for the alignment + consensus baseline.
pub const DEFAULT_ECO_ALPHA: f64 = 0.5;

/// Word limit the prompt contract imposes on distilled captions.
pub const PSEUDO_WORD_LIMIT: usize = 20;

/// Strip boilerplate prefixes (repeatedly, case-insensitive) and trailing
/// periods, lowercase, collapse whitespace; entries left empty are dropped.
/// Idempotent.
pub fn preprocess_captions(caps: &[String]) -> Vec<String> {
    preprocess_with(caps, &DEFAULT_BOILERPLATE)
}

pub fn preprocess_with(caps: &[String], boilerplate: &[&str]) -> Vec<String> {
    caps.iter()
        .filter_map(|cap| {
            let mut text = cap.to_lowercase();
            loop {
                let trimmed = text.trim_start();
                let mut stripped = None;
                for pattern in boilerplate {
                    if let Some(rest) = trimmed.strip_prefix(pattern) {
                        stripped = Some(rest.to_string());
                        break;
                    }
                }
                match stripped {
                    Some(rest) => text = rest,
                    None => break,
                }
            }
            let text = text.trim().trim_end_matches('.');
            let text = collapse_whitespace(text);
            (!text.is_empty()).then_some(text)
        })
        .collect()
}

/// Captions grouped by exact text with their occurrence counts, ordered by
/// descending frequency then lexicographically.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionTally {
    pub entries: Vec<(u32, String)>,
}

impl CaptionTally {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total(&self) -> u32 {
        self.entries.iter().map(|(f, _)| f).sum()
    }
}

pub fn tally(caps: &[String]) -> CaptionTally {
    let mut counts: BTreeMap<&str, u32> = BTreeMap::new();
    for cap in caps {
        *counts.entry(cap.as_str()).or_insert(0) += 1;
    }
    let mut entries: Vec<(u32, String)> =
        counts.into_iter().map(|(text, freq)| (freq, text.to_string())).collect();
    entries.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    CaptionTally { entries }
}

/// `[[f1, "c1"], [f2, "c2"], ...]` with JSON string escaping.
pub fn serialize_tally(tally: &CaptionTally) -> String {
    let parts: Vec<String> = tally
        .entries
        .iter()
        .map(|(freq, text)| {
            format!("[{freq}, {}]", serde_json::to_string(text).expect("string serializable"))
        })
        .collect();
    format!("[{}]", parts.join(", "))
}

/// Inverse of [`serialize_tally`]; the serialized form is valid JSON.
pub fn parse_tally_input(input: &str) -> Result<CaptionTally> {
    let entries: Vec<(u32, String)> = serde_json::from_str(input)?;
    Ok(CaptionTally { entries })
}

const LDCPS_TEMPLATE_HEAD: &str = "You are an advanced language model tasked with generating a concise and accurate caption for an object. You are given a list of captions along with their frequencies. Each caption may represent a different viewpoint and might not always be accurate. Additionally, you are provided with the correct object class to describe. Your goal is to generate a single, coherent caption that accurately describes the main object, based on the provided information. The generated caption should not exceed 20 words and must be encapsulated within <Caption> ... </Caption> tags.
Here is the format of the input you will receive:
[[frequency, \"caption\"]]

Example Input:
[[5, \"A red apple on a table\"], [3, \"A shiny red apple\"], [1, \"A red fruit\"], [2, \"A red apple\"]]
Example Output:
<Caption>A shiny red apple on a table</Caption>
Example Input:
[[8, \"A small brown dog\"], [3, \"A dog\"], [4, \"A small dog\"], [1, \"A brown animal\"]]
Example Output:
<Caption>A small brown dog</Caption>
Example Input:
[[6, \"A blue car parked on the street\"], [4, \"A car\"], [2, \"A blue vehicle\"], [1, \"A car on the street\"]]
Example Output:
<Caption>A blue car parked on the street</Caption>
Example Input:
[[7, \"A cat sitting on a windowsill\"], [5, \"A windowsill cat\"], [2, \"A cat\"], [1, \"A windowsill\"]]
Example Output:
<Caption>A cat sitting on a windowsill</Caption>
Example Input:
[[5, \"A wooden table with a plate on it\"], [2, \"A table with a plate and a couch in the room\"], [3, \"A wooden table\"], [1, \"A plate on a wooden table\"]]
Example Output:
<Caption>A wooden table with a plate on it</Caption>

Your Task:
1. Analyze the provided list of captions and their frequencies.
2. Synthesize an accurate caption that reflects the most reliable and frequent details.
3. Ensure the generated caption describes only the main objects and mentions other objects only in relation to the main object.
4. Ensure the generated caption is no longer than 20 words.
5. Encapsulate your generated caption within <Caption> ... </Caption> tags.
";

/// Frequency-prompt builder: the fixed template (role preamble, input
/// format, five in-context example blocks, five task rules), then the
/// serialized tally. Byte-identical output for equal tallies.
pub fn build_ldcps_prompt(t: &CaptionTally) -> Result<String> {
    build_ldcps_prompt_with(t, None)
}

/// With `object_class` set, a class line precedes the input block; the
/// template mentions the class is provided but its input format does not
/// show one, so the line stays behind this option.
pub fn build_ldcps_prompt_with(t: &CaptionTally, object_class: Option<&str>) -> Result<String> {
    if t.is_empty() {
        return Err(Error::Contract("cannot build a prompt from an empty tally".into()));
    }
    let mut prompt = String::from(LDCPS_TEMPLATE_HEAD);
    prompt.push('\n');
    if let Some(class) = object_class {
        prompt.push_str(&format!("Object class: {class}\n\n"));
    }
    prompt.push_str("Input:\n");
    prompt.push_str(&serialize_tally(t));
    prompt.push_str("\n\nOutput:");
    Ok(prompt)
}

/// A parsed distilled caption; `truncated` marks replies cut to the word
/// limit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedReply {
    pub text: String,
    pub truncated: bool,
}

/// Extract the first well-formed `<Caption>...</Caption>` span and enforce
/// the word limit by truncation.
pub fn parse_llm_reply(raw: &str) -> Result<ParsedReply> {
    let start = raw
        .find("<Caption>")
        .ok_or_else(|| Error::ReplyParse("no <Caption> tag found".into()))?;
    let rest = &raw[start + "<Caption>".len()..];
    let end = rest
        .find("</Caption>")
        .ok_or_else(|| Error::ReplyParse("no closing </Caption> tag".into()))?;
    let text = rest[..end].trim();
    if text.is_empty() {
        return Err(Error::ReplyParse("empty caption between tags".into()));
    }
    let words: Vec<&str> = text.split_whitespace().collect();
    if words.len() > PSEUDO_WORD_LIMIT {
        Ok(ParsedReply { text: words[..PSEUDO_WORD_LIMIT].join(" "), truncated: true })
    } else {
        Ok(ParsedReply { text: text.to_string(), truncated: false })
    }
}

/// Offline realization of frequency-weighted consensus: the caption
/// maximizing the frequency-weighted sum of cosines to every tallied
/// caption. Ties break toward higher own frequency, then lexicographically
/// smaller text. Always a member of the tally.
pub fn medoid_consensus(t: &CaptionTally, embedder: &dyn Embedder) -> Result<String> {
    if t.is_empty() {
        return Err(Error::Contract("cannot pick a medoid from an empty tally".into()));
    }
    let embeddings: Vec<Embedding> = t.entries.iter().map(|(_, c)| embedder.embed(c)).collect();
    let mut best: Option<(f64, u32, &String)> = None;
    for (i, (freq_i, text_i)) in t.entries.iter().enumerate() {
        let score: f64 = t
            .entries
            .iter()
            .enumerate()
            .map(|(j, (freq_j, _))| f64::from(*freq_j) * cosine(&embeddings[i], &embeddings[j]))
            .sum();
        let better = match best {
            None => true,
            Some((s, f, t_best)) => {
                score > s
                    || (score == s && *freq_i > f)
                    || (score == s && *freq_i == f && text_i < t_best)
            }
        };
        if better {
            best = Some((score, *freq_i, text_i));
        }
    }
    Ok(best.expect("non-empty tally").2.clone())
}

fn ngram_weight_vectors(caps: &[Vec<String>], n: usize) -> (Vec<BTreeMap<String, f64>>, usize) {
    // document frequency over the caption multiset
    let mut df: BTreeMap<&str, usize> = BTreeMap::new();
    let grams_per_cap: Vec<Vec<String>> = caps.iter().map(|t| ngrams(t, n)).collect();
    for grams in &grams_per_cap {
        let mut seen: Vec<&String> = grams.iter().collect();
        seen.sort_unstable();
        seen.dedup();
        for g in seen {
            *df.entry(g.as_str()).or_insert(0) += 1;
        }
    }
    let corpus = caps.len();
    let vectors = grams_per_cap
        .iter()
        .map(|grams| {
            let mut counts: BTreeMap<String, f64> = BTreeMap::new();
            for g in grams {
                *counts.entry(g.clone()).or_insert(0.0) += 1.0;
            }
            counts
                .into_iter()
                .map(|(g, c)| {
                    let d = df[g.as_str()] as f64;
                    let w = c * (corpus as f64 / d).ln();
                    (g, w)
                })
                .collect()
        })
        .collect();
    (vectors, corpus)
}

fn sparse_cosine(a: &BTreeMap<String, f64>, b: &BTreeMap<String, f64>) -> f64 {
    let dot: f64 = a.iter().filter_map(|(g, w)| b.get(g).map(|v| w * v)).sum();
    let na: f64 = a.values().map(|w| w * w).sum::<f64>().sqrt();
    let nb: f64 = b.values().map(|w| w * w).sum::<f64>().sqrt();
    if na > 0.0 && nb > 0.0 {
        dot / (na * nb)
    } else {
        0.0
    }
}

/// Pairwise n-gram TF-IDF consensus over the instance's caption multiset:
/// for candidate `i`, the mean over the other occurrences of the x10-scaled
/// mean per-n cosine. Shared by the selection baseline and its oracle tests.
pub fn pairwise_consensus_scores(caps: &[String]) -> Vec<f64> {
    let tokens: Vec<Vec<String>> = caps.iter().map(|c| tokenize(c)).collect();
    let per_n: Vec<Vec<BTreeMap<String, f64>>> =
        (1..=4).map(|n| ngram_weight_vectors(&tokens, n).0).collect();
    (0..caps.len())
        .map(|i| {
            if caps.len() < 2 {
                return 0.0;
            }
            let mut total = 0.0;
            for j in 0..caps.len() {
                if i == j {
                    continue;
                }
                let mut acc = 0.0;
                for vecs in &per_n {
                    acc += sparse_cosine(&vecs[i], &vecs[j]);
                }
                total += 10.0 * acc / 4.0;
            }
            total / (caps.len() - 1) as f64
        })
        .collect()
}

/// Selection baseline: pick the caption maximizing
/// `alpha * cosine(embedding, image proxy) + (1 - alpha) * consensus`.
/// The proxy embedding stands in for an image-text alignment model.
pub fn eco_select(
    caps: &[String],
    image_proxy: &Embedding,
    embedder: &dyn Embedder,
    alpha: f64,
) -> Result<String> {
    if caps.is_empty() {
        return Err(Error::Contract("selection needs at least one caption".into()));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Contract(format!("alpha {alpha} outside [0, 1]")));
    }
    let consensus = pairwise_consensus_scores(caps);
    let mut best: Option<(f64, &String)> = None;
    for (i, cap) in caps.iter().enumerate() {
        let align = cosine(&embedder.embed(cap), image_proxy);
        let score = alpha * align + (1.0 - alpha) * consensus[i];
        let better = match best {
            None => true,
            Some((s, t)) => score > s || (score == s && cap < t),
        };
        if better {
            best = Some((score, cap));
        }
    }
    Ok(best.expect("non-empty caps").1.clone())
}

fn is_token_subsequence(needle: &[String], hay: &[String]) -> bool {
    let mut it = hay.iter();
    needle.iter().all(|tok| it.any(|h| h == tok))
}

/// Offline summarizer baseline: exact-duplicate removal, then drop captions
/// whose tokens form a subsequence of another caption, then join the
/// remainder.
pub fn ic3_summarize_offline(caps: &[String]) -> Result<String> {
    if caps.is_empty() {
        return Err(Error::Contract("summarizer needs at least one caption".into()));
    }
    let mut unique: Vec<&String> = Vec::new();
    for cap in caps {
        if !unique.contains(&cap) {
            unique.push(cap);
        }
    }
    let token_lists: Vec<Vec<String>> = unique.iter().map(|c| tokenize(c)).collect();
    let kept: Vec<&String> = unique
        .iter()
        .enumerate()
        .filter(|(i, _)| {
            !token_lists.iter().enumerate().any(|(j, other)| {
                j != *i
                    && token_lists[*i].len() < other.len()
                    && is_token_subsequence(&token_lists[*i], other)
            })
        })
        .map(|(_, c)| *c)
        .collect();
    Ok(kept.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", "))
}

/// Summarization prompt over the raw caption list, without frequencies.
pub fn ic3_prompt(caps: &[String]) -> String {
    let mut prompt = String::from(
        "You are given a list of captions describing the same object from different viewpoints. \
         Some captions may be incorrect. Discard potentially incorrect captions and distill a \
         single, more detailed description of the object. Encapsulate the description within \
         <Caption> ... </Caption> tags.\n\nCaptions:\n",
    );
    for cap in caps {
        prompt.push_str("- ");
        prompt.push_str(cap);
        prompt.push('\n');
    }
    prompt.push_str("\nOutput:");
    prompt
}

/// Summarize via the LLM; transport errors surface after the client's retry
/// policy has run.
pub fn ic3_summarize(
    caps: &[String],
    client: &dyn LlmClient,
    settings: &LlmSettings,
) -> Result<ParsedReply> {
    if caps.is_empty() {
        return Err(Error::Contract("summarizer needs at least one caption".into()));
    }
    let reply = client.complete(&LlmRequest {
        model: settings.model.clone(),
        prompt: ic3_prompt(caps),
        temperature: settings.temperature,
        max_tokens: settings.max_tokens,
    })?;
    parse_llm_reply(&reply.raw_text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConsensusMethod {
    /// Frequency prompt to an LLM, medoid fallback.
    Ldcps,
    /// Deterministic medoid only.
    LdcpsOffline,
    Eco,
    Ic3,
}

impl ConsensusMethod {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ldcps" => Ok(Self::Ldcps),
            "ldcps-offline" => Ok(Self::LdcpsOffline),
            "eco" => Ok(Self::Eco),
            "ic3" => Ok(Self::Ic3),
            other => Err(Error::Config(format!("unknown consensus method `{other}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Ldcps => "ldcps",
            Self::LdcpsOffline => "ldcps-offline",
            Self::Eco => "eco",
            Self::Ic3 => "ic3",
        }
    }
}

/// View descriptor carried along for the captioner fine-tuning stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewDescriptor {
    pub class_index: usize,
    pub attribute_tokens: Vec<String>,
    pub visible_fraction: f64,
}

/// One distilled caption per instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoCaption {
    pub instance_id: u32,
    pub text: String,
    /// One of `ldcps-llm`, `ldcps-medoid`, `eco`, `ic3`.
    pub method: String,
    /// LLM identifier, or `offline`.
    pub source_model: String,
    #[serde(default)]
    pub fallback: bool,
    #[serde(default)]
    pub truncated: bool,
    /// Evaluation-only linkage to the generator object.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_object_id: Option<u32>,
    #[serde(default)]
    pub views: Vec<ViewDescriptor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConsensusConfig {
    pub method: ConsensusMethod,
    pub alpha: f64,
    /// Add the object-class line to the frequency prompt.
    pub include_class: bool,
    pub llm: LlmSettings,
}

impl Default for ConsensusConfig {
    fn default() -> Self {
        Self {
            method: ConsensusMethod::LdcpsOffline,
            alpha: DEFAULT_ECO_ALPHA,
            include_class: false,
            llm: LlmSettings::default(),
        }
    }
}

/// Per-run consensus output with skip and fallback bookkeeping.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConsensusOutcome {
    pub pseudo: BTreeMap<u32, PseudoCaption>,
    /// (instance id, reason) for instances that produced no pseudo-caption.
    pub skipped: Vec<(u32, String)>,
    pub fallbacks: u32,
}

fn class_name_of(scene: Option<&Scene>, gt_id: Option<u32>) -> Option<String> {
    let scene = scene?;
    let id = gt_id?;
    scene.objects.get(id as usize).map(|o| o.category.name().to_string())
}

fn views_of(instance: &ObjectInstance, scene: Option<&Scene>) -> Vec<ViewDescriptor> {
    let attrs = class_attrs(instance, scene);
    instance
        .captions
        .iter()
        .map(|c| ViewDescriptor {
            class_index: instance.pseudo_label,
            attribute_tokens: attrs.clone(),
            visible_fraction: c.visible_fraction,
        })
        .collect()
}

fn class_attrs(instance: &ObjectInstance, scene: Option<&Scene>) -> Vec<String> {
    scene
        .and_then(|s| {
            instance.majority_gt_id().and_then(|id| s.objects.get(id as usize)).map(|o| o.attribute_tokens.clone())
        })
        .unwrap_or_default()
}

/// Run the selected method over every instance: preprocess, tally, distill.
/// The LLM route falls back to the medoid on parse or transport failure
/// (after the client's retries), flagging the fallback. Instances whose
/// captions vanish in preprocessing are skipped with a report entry.
pub fn pseudo_caption_all(
    instances: &[ObjectInstance],
    scene: Option<&Scene>,
    llm: Option<&dyn LlmClient>,
    embedder: &dyn Embedder,
    cfg: &ConsensusConfig,
) -> ConsensusOutcome {
    let mut outcome = ConsensusOutcome::default();
    for instance in instances {
        let raw: Vec<String> = instance.captions.iter().map(|c| c.text.clone()).collect();
        if raw.is_empty() {
            outcome.skipped.push((instance.instance_id, "no captions".into()));
            continue;
        }
        let caps = preprocess_captions(&raw);
        if caps.is_empty() {
            outcome
                .skipped
                .push((instance.instance_id, "all captions empty after preprocessing".into()));
            continue;
        }
        let t = tally(&caps);
        let gt_object_id = instance.majority_gt_id();

        let (text, method, source_model, fallback, truncated) = match cfg.method {
            ConsensusMethod::LdcpsOffline => {
                match medoid_consensus(&t, embedder) {
                    Ok(text) => (text, "ldcps-medoid", "offline".to_string(), false, false),
                    Err(e) => {
                        outcome.skipped.push((instance.instance_id, e.to_string()));
                        continue;
                    }
                }
            }
            ConsensusMethod::Ldcps => {
                let llm_result = llm.and_then(|client| {
                    let class = cfg
                        .include_class
                        .then(|| class_name_of(scene, gt_object_id))
                        .flatten();
                    let prompt = build_ldcps_prompt_with(&t, class.as_deref()).ok()?;
                    let reply = client
                        .complete(&LlmRequest {
                            model: cfg.llm.model.clone(),
                            prompt,
                            temperature: cfg.llm.temperature,
                            max_tokens: cfg.llm.max_tokens,
                        })
                        .ok()?;
                    parse_llm_reply(&reply.raw_text)
                        .ok()
                        .map(|p| (p, client.model_name().to_string()))
                });
                match llm_result {
                    Some((parsed, model)) => {
                        (parsed.text, "ldcps-llm", model, false, parsed.truncated)
                    }
                    None => {
                        outcome.fallbacks += 1;
                        match medoid_consensus(&t, embedder) {
                            Ok(text) => (text, "ldcps-medoid", "offline".to_string(), true, false),
                            Err(e) => {
                                outcome.skipped.push((instance.instance_id, e.to_string()));
                                continue;
                            }
                        }
                    }
                }
            }
            ConsensusMethod::Eco => {
                let attrs = class_attrs(instance, scene);
                let proxy = embedder.embed(&attrs.join(" "));
                match eco_select(&caps, &proxy, embedder, cfg.alpha) {
                    Ok(text) => (text, "eco", "offline".to_string(), false, false),
                    Err(e) => {
                        outcome.skipped.push((instance.instance_id, e.to_string()));
                        continue;
                    }
                }
            }
            ConsensusMethod::Ic3 => match llm {
                Some(client) => match ic3_summarize(&caps, client, &cfg.llm) {
                    Ok(parsed) => (
                        parsed.text,
                        "ic3",
                        client.model_name().to_string(),
                        false,
                        parsed.truncated,
                    ),
                    Err(_) => {
                        outcome.fallbacks += 1;
                        match ic3_summarize_offline(&caps) {
                            Ok(text) => (text, "ic3", "offline".to_string(), true, false),
                            Err(e) => {
                                outcome.skipped.push((instance.instance_id, e.to_string()));
                                continue;
                            }
                        }
                    }
                },
                None => match ic3_summarize_offline(&caps) {
                    Ok(text) => (text, "ic3", "offline".to_string(), false, false),
                    Err(e) => {
                        outcome.skipped.push((instance.instance_id, e.to_string()));
                        continue;
                    }
                },
            },
        };

        // the distilled-caption word limit applies to the primary method
        let (text, truncated) = if method.starts_with("ldcps") {
            let words: Vec<&str> = text.split_whitespace().collect();
            if words.len() > PSEUDO_WORD_LIMIT {
                (words[..PSEUDO_WORD_LIMIT].join(" "), true)
            } else {
                (text, truncated)
            }
        } else {
            (text, truncated)
        };

        outcome.pseudo.insert(
            instance.instance_id,
            PseudoCaption {
                instance_id: instance.instance_id,
                text,
                method: method.to_string(),
                source_model,
                fallback,
                truncated,
                gt_object_id,
                views: views_of(instance, scene),
            },
        );
    }
    outcome
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PseudoHeader {
    version: String,
    method: String,
    count: usize,
    fallbacks: u32,
    skipped: Vec<(u32, String)>,
}

/// Serialize a consensus outcome as line-delimited JSON with a header line.
pub fn write_pseudo_jsonl(outcome: &ConsensusOutcome, method: ConsensusMethod) -> String {
    let header = PseudoHeader {
        version: PSEUDO_VERSION.into(),
        method: method.name().into(),
        count: outcome.pseudo.len(),
        fallbacks: outcome.fallbacks,
        skipped: outcome.skipped.clone(),
    };
    let mut out = serde_json::to_string(&header).expect("header serializable");
    out.push('\n');
    for pseudo in outcome.pseudo.values() {
        out.push_str(&serde_json::to_string(pseudo).expect("record serializable"));
        out.push('\n');
    }
    out
}

pub fn read_pseudo_jsonl(text: &str) -> Result<ConsensusOutcome> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: PseudoHeader = serde_json::from_str(
        lines.next().ok_or_else(|| Error::Contract("empty pseudo-caption file".into()))?,
    )?;
    if header.version != PSEUDO_VERSION {
        return Err(Error::Version { expected: PSEUDO_VERSION.into(), found: header.version });
    }
    let mut outcome = ConsensusOutcome {
        pseudo: BTreeMap::new(),
        skipped: header.skipped,
        fallbacks: header.fallbacks,
    };
    for line in lines {
        let pseudo: PseudoCaption = serde_json::from_str(line)?;
        outcome.pseudo.insert(pseudo.instance_id, pseudo);
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::HashedEmbedder;
    use crate::llm::LlmReply;

    fn strs(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn preprocess_strips_boilerplate() {
        assert_eq!(
            preprocess_captions(&strs(&["A picture of a red couch"])),
            strs(&["a red couch"])
        );
        assert_eq!(preprocess_captions(&strs(&["a red couch"])), strs(&["a red couch"]));
    }

    #[test]
    fn preprocess_drops_pure_boilerplate() {
        // repeated prefixes strip to nothing
        assert!(preprocess_captions(&strs(&["A PHOTO OF  A Photo Of  "])).is_empty());
    }

    #[test]
    fn preprocess_is_idempotent() {
        let inputs = strs(&[
            "A picture of a red couch.",
            "An image of a photo of a tv",
            "  a wooden   table  ",
            "A photo of.",
        ]);
        let once = preprocess_captions(&inputs);
        let twice = preprocess_captions(&once);
        assert_eq!(once, twice);
    }

    #[test]
    fn tally_groups_and_orders() {
        let t = tally(&strs(&["a", "a", "b"]));
        assert_eq!(t.entries, vec![(2, "a".into()), (1, "b".into())]);
        assert!(tally(&[]).is_empty());
    }

    // counting oracle over draws from a known distribution
    #[test]
    fn tally_counts_match_hash_count_oracle() {
        use crate::rng::{stream, Rng};
        let pool = ["a red couch", "a blue couch", "a couch"];
        let mut rng = stream(12, "tally");
        let draws: Vec<String> =
            (0..1000).map(|_| pool[rng.gen_range(0..pool.len())].to_string()).collect();
        let t = tally(&draws);
        let mut oracle: std::collections::HashMap<&str, u32> = std::collections::HashMap::new();
        for d in &draws {
            *oracle.entry(d.as_str()).or_insert(0) += 1;
        }
        assert_eq!(t.total(), 1000);
        for (freq, text) in &t.entries {
            assert_eq!(oracle[text.as_str()], *freq);
        }
    }

    #[test]
    fn prompt_contains_tally_and_example_blocks() {
        let t = tally(&strs(&["a red apple on a table"; 5]));
        let prompt = build_ldcps_prompt(&t).unwrap();
        assert!(prompt.contains(r#"[[5, "a red apple on a table"]]"#));
        assert!(prompt.contains("<Caption>A shiny red apple on a table</Caption>"));
        assert!(prompt.contains("<Caption>A small brown dog</Caption>"));
        assert!(prompt.contains("<Caption>A blue car parked on the street</Caption>"));
        assert!(prompt.contains("<Caption>A cat sitting on a windowsill</Caption>"));
        assert!(prompt.contains("<Caption>A wooden table with a plate on it</Caption>"));
        assert!(prompt.ends_with("Output:"));
    }

    #[test]
    fn prompt_is_byte_identical_across_runs() {
        let t = tally(&strs(&["a tv", "a tv", "a black tv"]));
        assert_eq!(build_ldcps_prompt(&t).unwrap(), build_ldcps_prompt(&t).unwrap());
    }

    #[test]
    fn empty_tally_is_contract_error() {
        assert!(matches!(build_ldcps_prompt(&tally(&[])), Err(Error::Contract(_))));
    }

    #[test]
    fn tally_serialization_escapes_and_round_trips() {
        let t = tally(&strs(&[r#"a "quoted" couch"#, "a couch \\ with backslash"]));
        let line = serialize_tally(&t);
        assert!(line.contains(r#"\""#));
        let parsed = parse_tally_input(&line).unwrap();
        assert_eq!(parsed, t);
    }

    #[test]
    fn optional_class_line_is_included_when_requested() {
        let t = tally(&strs(&["a couch"]));
        let base = build_ldcps_prompt_with(&t, None).unwrap();
        let with_class = build_ldcps_prompt_with(&t, Some("couch")).unwrap();
        assert!(!base.contains("Object class:"));
        assert!(with_class.contains("Object class: couch\n"));
    }

    #[test]
    fn reply_parsing_extracts_first_span() {
        let p = parse_llm_reply("<Caption>A small brown dog</Caption>").unwrap();
        assert_eq!(p.text, "A small brown dog");
        assert!(!p.truncated);

        assert!(matches!(parse_llm_reply("no tags here"), Err(Error::ReplyParse(_))));

        let two = parse_llm_reply("x <Caption>first one</Caption> y <Caption>second</Caption>")
            .unwrap();
        assert_eq!(two.text, "first one");
    }

    #[test]
    fn reply_over_word_limit_is_truncated() {
        let long = format!("<Caption>{}</Caption>", vec!["word"; 25].join(" "));
        let p = parse_llm_reply(&long).unwrap();
        assert!(p.truncated);
        assert_eq!(p.text.split_whitespace().count(), PSEUDO_WORD_LIMIT);
    }

    #[test]
    fn medoid_of_single_or_unanimous_captions_is_that_caption() {
        let e = HashedEmbedder::default();
        let t = tally(&strs(&["a red couch"]));
        assert_eq!(medoid_consensus(&t, &e).unwrap(), "a red couch");
        let t = tally(&strs(&["a red couch"; 7]));
        assert_eq!(medoid_consensus(&t, &e).unwrap(), "a red couch");
    }

    // brute-force score over both candidates
    #[test]
    fn medoid_prefers_the_frequent_caption() {
        let e = HashedEmbedder::default();
        let mut caps = vec!["a red couch".to_string(); 5];
        caps.push("a blue dog".into());
        let t = tally(&caps);
        // oracle: score both candidates by frequency-weighted cosine sums
        let emb: Vec<_> = t.entries.iter().map(|(_, c)| e.embed(c)).collect();
        let score = |i: usize| -> f64 {
            t.entries
                .iter()
                .enumerate()
                .map(|(j, (f, _))| f64::from(*f) * cosine(&emb[i], &emb[j]))
                .sum()
        };
        assert!(score(0) > score(1));
        assert_eq!(t.entries[0].1, "a red couch");
        assert_eq!(medoid_consensus(&t, &e).unwrap(), "a red couch");
    }

    #[test]
    fn medoid_is_a_member_and_scale_invariant() {
        let e = HashedEmbedder::default();
        let caps = strs(&["a red couch", "a red couch", "a couch near a wall", "a blue table"]);
        let t = tally(&caps);
        let pick = medoid_consensus(&t, &e).unwrap();
        assert!(t.entries.iter().any(|(_, c)| *c == pick));

        // uniform frequency scaling: all freq x 3
        let scaled = CaptionTally {
            entries: t.entries.iter().map(|(f, c)| (f * 3, c.clone())).collect(),
        };
        assert_eq!(medoid_consensus(&scaled, &e).unwrap(), pick);
    }

    #[test]
    fn strict_majority_identical_caption_wins_medoid() {
        let e = HashedEmbedder::default();
        let caps = strs(&[
            "a green plastic toilet",
            "a green plastic toilet",
            "a green plastic toilet",
            "a blue plastic toilet",
            "a green metal bed",
        ]);
        let t = tally(&caps);
        assert_eq!(medoid_consensus(&t, &e).unwrap(), "a green plastic toilet");
    }

    #[test]
    fn eco_single_caption_is_returned() {
        let e = HashedEmbedder::default();
        let proxy = e.embed("red fabric");
        assert_eq!(
            eco_select(&strs(&["a red couch"]), &proxy, &e, 0.5).unwrap(),
            "a red couch"
        );
    }

    // alpha = 0: pure consensus argmax against a brute-force oracle
    #[test]
    fn eco_alpha_zero_matches_pairwise_cider_oracle() {
        let e = HashedEmbedder::default();
        let caps = strs(&[
            "a red couch near the window",
            "a red couch near the window",
            "a red couch",
            "a strange blue dog on a rug",
        ]);
        let scores = pairwise_consensus_scores(&caps);
        // independent oracle: recompute tf-idf cosines from scratch
        let oracle = |i: usize| -> f64 {
            let toks: Vec<Vec<String>> = caps.iter().map(|c| tokenize(c)).collect();
            let mut total = 0.0;
            for j in 0..caps.len() {
                if i == j {
                    continue;
                }
                let mut acc = 0.0;
                for n in 1..=4 {
                    let mut df: std::collections::HashMap<String, f64> =
                        std::collections::HashMap::new();
                    for t in &toks {
                        let mut grams = ngrams(t, n);
                        grams.sort_unstable();
                        grams.dedup();
                        for g in grams {
                            *df.entry(g).or_insert(0.0) += 1.0;
                        }
                    }
                    let weights = |t: &[String]| -> std::collections::HashMap<String, f64> {
                        let mut counts: std::collections::HashMap<String, f64> =
                            std::collections::HashMap::new();
                        for g in ngrams(t, n) {
                            *counts.entry(g).or_insert(0.0) += 1.0;
                        }
                        counts
                            .into_iter()
                            .map(|(g, c)| {
                                let idf = (caps.len() as f64 / df[&g]).ln();
                                (g, c * idf)
                            })
                            .collect()
                    };
                    let wi = weights(&toks[i]);
                    let wj = weights(&toks[j]);
                    let dot: f64 =
                        wi.iter().filter_map(|(g, w)| wj.get(g).map(|v| w * v)).sum();
                    let ni: f64 = wi.values().map(|w| w * w).sum::<f64>().sqrt();
                    let nj: f64 = wj.values().map(|w| w * w).sum::<f64>().sqrt();
                    if ni > 0.0 && nj > 0.0 {
                        acc += dot / (ni * nj);
                    }
                }
                total += 10.0 * acc / 4.0;
            }
            total / (caps.len() - 1) as f64
        };
        for i in 0..caps.len() {
            assert!((scores[i] - oracle(i)).abs() < 1e-9, "candidate {i}");
        }
        let zero = Embedding { values: vec![0.0; 4] };
        let best_idx =
            (0..caps.len()).max_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap()).unwrap();
        assert_eq!(eco_select(&caps, &zero, &e, 0.0).unwrap(), caps[best_idx]);
    }

    #[test]
    fn eco_alpha_one_picks_the_proxy_match() {
        let e = HashedEmbedder::default();
        let caps = strs(&["red fabric", "a strange blue dog"]);
        let proxy = e.embed("red fabric");
        assert_eq!(eco_select(&caps, &proxy, &e, 1.0).unwrap(), "red fabric");
    }

    #[test]
    fn ic3_offline_dedups_by_containment() {
        assert_eq!(
            ic3_summarize_offline(&strs(&["a red couch", "a red couch", "a couch"])).unwrap(),
            "a red couch"
        );
        assert_eq!(ic3_summarize_offline(&strs(&["a tv"])).unwrap(), "a tv");
        let joined =
            ic3_summarize_offline(&strs(&["a red couch", "a wooden table"])).unwrap();
        assert_eq!(joined, "a red couch, a wooden table");
    }

    struct ScriptedLlm {
        reply: String,
        fail: bool,
    }

    impl LlmClient for ScriptedLlm {
        fn complete(&self, req: &LlmRequest) -> Result<LlmReply> {
            if self.fail {
                return Err(Error::Transport("scripted failure".into()));
            }
            assert!(!req.prompt.is_empty());
            Ok(LlmReply {
                raw_text: self.reply.clone(),
                latency_ms: 1,
                prompt_tokens: None,
                completion_tokens: None,
            })
        }

        fn model_name(&self) -> &str {
            "scripted"
        }
    }

    #[test]
    fn ic3_prompt_contains_every_caption_verbatim() {
        let caps = strs(&["a red couch", "a strange blue dog", "a couch near a wall"]);
        let prompt = ic3_prompt(&caps);
        for c in &caps {
            assert!(prompt.contains(c.as_str()));
        }
    }

    fn toy_instance(id: u32, texts: &[&str]) -> ObjectInstance {
        use crate::perceive::CaptionRecord;
        use crate::scene::CameraPose;
        ObjectInstance {
            instance_id: id,
            pseudo_label: 0,
            voxels: vec![[id as i32, 0, 0]],
            caption_ids: (0..texts.len() as u64).collect(),
            captions: texts
                .iter()
                .map(|t| CaptionRecord {
                    text: t.to_string(),
                    object_id_gt: id,
                    view_pose: CameraPose { position: [0.0; 3], yaw: 0.0 },
                    visible_fraction: 1.0,
                    corrupted: false,
                })
                .collect(),
        }
    }

    #[test]
    fn unanimous_captions_distill_to_themselves() {
        let e = HashedEmbedder::default();
        let instances = vec![toy_instance(0, &["a red couch"; 4])];
        let out = pseudo_caption_all(&instances, None, None, &e, &ConsensusConfig::default());
        assert_eq!(out.pseudo[&0].text, "a red couch");
        assert_eq!(out.pseudo[&0].method, "ldcps-medoid");
        assert!(out.skipped.is_empty());
    }

    #[test]
    fn llm_failure_falls_back_to_medoid_with_flags() {
        let e = HashedEmbedder::default();
        let instances = vec![toy_instance(0, &["a red couch"; 3]), toy_instance(1, &["a tv"; 2])];
        let failing = ScriptedLlm { reply: String::new(), fail: true };
        let cfg = ConsensusConfig { method: ConsensusMethod::Ldcps, ..Default::default() };
        let out = pseudo_caption_all(&instances, None, Some(&failing), &e, &cfg);
        assert_eq!(out.fallbacks, 2);
        for p in out.pseudo.values() {
            assert!(p.fallback);
            assert_eq!(p.method, "ldcps-medoid");
            assert_eq!(p.source_model, "offline");
        }
    }

    #[test]
    fn llm_route_uses_parsed_reply() {
        let e = HashedEmbedder::default();
        let instances = vec![toy_instance(0, &["a red couch", "a couch"])];
        let llm = ScriptedLlm { reply: "<Caption>A comfy red couch</Caption>".into(), fail: false };
        let cfg = ConsensusConfig { method: ConsensusMethod::Ldcps, ..Default::default() };
        let out = pseudo_caption_all(&instances, None, Some(&llm), &e, &cfg);
        let p = &out.pseudo[&0];
        assert_eq!(p.text, "A comfy red couch");
        assert_eq!(p.method, "ldcps-llm");
        assert_eq!(p.source_model, "scripted");
        assert!(!p.fallback);
    }

    #[test]
    fn instance_with_zero_captions_is_skipped() {
        let e = HashedEmbedder::default();
        let instances = vec![toy_instance(0, &[]), toy_instance(1, &["a bed"])];
        let out = pseudo_caption_all(&instances, None, None, &e, &ConsensusConfig::default());
        assert_eq!(out.skipped.len(), 1);
        assert_eq!(out.skipped[0].0, 0);
        assert!(out.pseudo.contains_key(&1));
    }

    #[test]
    fn pseudo_jsonl_round_trips() {
        let e = HashedEmbedder::default();
        let instances = vec![toy_instance(0, &["a red couch"; 2]), toy_instance(1, &[])];
        let out = pseudo_caption_all(&instances, None, None, &e, &ConsensusConfig::default());
        let text = write_pseudo_jsonl(&out, ConsensusMethod::LdcpsOffline);
        let back = read_pseudo_jsonl(&text).unwrap();
        assert_eq!(out, back);
    }
}
