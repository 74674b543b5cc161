//! Mock detector and captioner with a parameterized noise model.
//!
//! The detector turns observation fragments into class logits, boxes, and
//! masks; the captioner corrupts ground-truth captions with a probability
//! that grows with occlusion, emulating the wrong or inconsistent
//! descriptions a real captioner produces from partial views. Both sit
//! behind plain data types so an HTTP-backed implementation can replace
//! them (see [`crate::llm`]).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::rng::{hash_unit, Rng, Stream};
use crate::scene::{
    CameraPose, Category, ObjectGT, Observation, Scene, ALL_CATEGORIES, COLORS, CONTEXTS,
    MATERIALS, NUM_CLASSES,
};
use crate::textproc::collapse_whitespace;
use crate::Scalar;

/// Axis-aligned pixel box, half-open: covers x0 <= x < x1, y0 <= y < y1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub x0: i32,
    pub y0: i32,
    pub x1: i32,
    pub y1: i32,
}

impl BBox {
    pub fn area(&self) -> i64 {
        let w = i64::from(self.x1 - self.x0).max(0);
        let h = i64::from(self.y1 - self.y0).max(0);
        w * h
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let ix = (self.x1.min(other.x1) - self.x0.max(other.x0)).max(0) as i64;
        let iy = (self.y1.min(other.y1) - self.y0.max(other.y0)).max(0) as i64;
        let inter = ix * iy;
        let union = self.area() + other.area() - inter;
        if union <= 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }

    /// Grow by `margin` pixels per side, clamped to the image.
    pub fn expanded(&self, margin: i32, width: usize, height: usize) -> BBox {
        BBox {
            x0: (self.x0 - margin).max(0),
            y0: (self.y0 - margin).max(0),
            x1: (self.x1 + margin).min(width as i32),
            y1: (self.y1 + margin).min(height as i32),
        }
    }
}

/// W x H boolean mask, stored sparsely as sorted flattened pixel indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u32>,
}

impl Mask {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        self.pixels.binary_search(&((y * self.width + x) as u32)).is_ok()
    }
}

/// One detected object view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    /// Opaque pairing handle linking this detection to its caption within a view.
    pub object_view_id: u64,
    pub logits: Vec<Scalar>,
    pub bbox: BBox,
    pub mask: Mask,
    pub confidence: f64,
}

/// A noisy caption tied to one view of one object. `object_id_gt` and
/// `corrupted` are noise-model ground truth, consumed only by evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub text: String,
    pub object_id_gt: u32,
    pub view_pose: CameraPose,
    /// Occlusion level of the view this caption came from.
    pub visible_fraction: f64,
    pub corrupted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    /// Fragments with fewer hit pixels than this are not detected.
    pub min_pixels: usize,
    /// Probability that the logits peak at a wrong class.
    pub misclass_rate: f64,
    /// Box growth per side in pixels.
    pub bbox_expand: i32,
    pub conf_base: f64,
    pub conf_gain: f64,
    pub conf_noise: f64,
    pub logit_peak: f64,
    pub logit_noise: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        // box objects rarely expose more than ~40% of their surface from a
        // single view, so the confidence curve saturates early: views with
        // less than an eighth of the surface visible fall under the 0.7
        // filter, everything better passes
        Self {
            min_pixels: 10,
            misclass_rate: 0.05,
            bbox_expand: 10,
            conf_base: 0.6,
            conf_gain: 0.8,
            conf_noise: 0.03,
            logit_peak: 2.0,
            logit_noise: 0.25,
        }
    }
}

/// One detection per sufficiently large visible fragment. Logits peak at the
/// true class with probability `1 - misclass_rate`; confidence rises with the
/// visible fraction; the box is the tight fragment box grown by
/// `bbox_expand` pixels per side and clamped to the image.
pub fn detect(
    obs: &Observation,
    scene: &Scene,
    cfg: &DetectorConfig,
    rng: &mut Stream,
) -> Vec<Detection> {
    let mut out = Vec::new();
    for frag in &obs.visible_fragments {
        if frag.pixels.len() < cfg.min_pixels {
            continue;
        }
        let (mut x0, mut y0, mut x1, mut y1) = (i32::MAX, i32::MAX, i32::MIN, i32::MIN);
        for &p in &frag.pixels {
            let x = (p as usize % obs.width) as i32;
            let y = (p as usize / obs.width) as i32;
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x + 1);
            y1 = y1.max(y + 1);
        }
        let bbox = BBox { x0, y0, x1, y1 }.expanded(cfg.bbox_expand, obs.width, obs.height);

        let true_class = scene.objects[frag.object_id as usize].category.index();
        let winner = if cfg.misclass_rate > 0.0 && rng.gen_bool(cfg.misclass_rate) {
            let offset = rng.gen_range(1..NUM_CLASSES);
            (true_class + offset) % NUM_CLASSES
        } else {
            true_class
        };
        let mut logits: Vec<Scalar> =
            (0..NUM_CLASSES).map(|_| rng.gen_range(0.0..cfg.logit_noise)).collect();
        logits[winner] += cfg.logit_peak;

        let noise = if cfg.conf_noise > 0.0 {
            rng.gen_range(-cfg.conf_noise..cfg.conf_noise)
        } else {
            0.0
        };
        let confidence =
            (cfg.conf_base + cfg.conf_gain * frag.visible_fraction + noise).clamp(0.0, 1.0);

        let mut pixels = frag.pixels.clone();
        pixels.sort_unstable();
        out.push(Detection {
            object_view_id: u64::from(frag.object_id),
            logits,
            bbox,
            mask: Mask { width: obs.width, height: obs.height, pixels },
            confidence,
        });
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub min_confidence: f64,
    /// Minimum box area in pixels at the 640x480 reference resolution; the
    /// working threshold scales with the actual image size.
    pub min_area_at_ref: f64,
    pub nms_iou: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self { min_confidence: 0.7, min_area_at_ref: 8000.0, nms_iou: 0.8 }
    }
}

impl FilterConfig {
    pub fn area_floor(&self, width: usize, height: usize) -> f64 {
        self.min_area_at_ref * (width * height) as f64 / (640.0 * 480.0)
    }
}

/// Confidence and area thresholds followed by non-maximum suppression at the
/// configured IoU, keeping the higher-confidence box. Idempotent.
pub fn filter_detections(dets: Vec<Detection>, cfg: &FilterConfig) -> Vec<Detection> {
    let mut survivors: Vec<Detection> = dets
        .into_iter()
        .filter(|d| {
            d.confidence >= cfg.min_confidence
                && d.bbox.area() as f64 >= cfg.area_floor(d.mask.width, d.mask.height)
        })
        .collect();
    survivors.sort_by(|a, b| b.confidence.partial_cmp(&a.confidence).unwrap());

    let mut kept: Vec<Detection> = Vec::new();
    for det in survivors {
        if kept.iter().all(|k| k.bbox.iou(&det.bbox) < cfg.nms_iou) {
            kept.push(det);
        }
    }
    kept
}

/// Caption noise parameters. Each corruption kind fires with its base
/// probability raised by `occlusion_boost * (1 - visible_fraction)` and by a
/// deterministic per-object jitter, all clamped to [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub p_attr_swap: f64,
    pub p_category_swap: f64,
    pub p_hallucinate: f64,
    pub p_drop_detail: f64,
    pub occlusion_boost: f64,
    /// Heterogeneity across objects: extra probability scaled by a
    /// per-object-id hash in [0, 1).
    pub per_object_jitter: f64,
    /// Probability of prepending "a picture of " (not counted as corruption).
    pub p_boilerplate: f64,
    pub synonym_table: BTreeMap<String, Vec<String>>,
}

impl NoiseConfig {
    pub fn zero() -> Self {
        Self {
            p_attr_swap: 0.0,
            p_category_swap: 0.0,
            p_hallucinate: 0.0,
            p_drop_detail: 0.0,
            occlusion_boost: 0.0,
            per_object_jitter: 0.0,
            p_boilerplate: 0.0,
            synonym_table: BTreeMap::new(),
        }
    }
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            p_attr_swap: 0.10,
            p_category_swap: 0.05,
            p_hallucinate: 0.08,
            p_drop_detail: 0.07,
            occlusion_boost: 0.35,
            per_object_jitter: 0.0,
            p_boilerplate: 0.10,
            synonym_table: default_synonym_table(),
        }
    }
}

/// Wrong-but-plausible alternatives for every generator attribute word.
pub fn default_synonym_table() -> BTreeMap<String, Vec<String>> {
    let mut table = BTreeMap::new();
    let pools: [&[&str]; 3] = [&COLORS, &MATERIALS, &CONTEXTS];
    for pool in pools {
        for &word in pool {
            let alts: Vec<String> =
                pool.iter().filter(|w| **w != word).map(|w| (*w).to_string()).collect();
            table.insert(word.to_string(), alts);
        }
    }
    table
}

const EXTRA_NOUNS: [&str; 4] = ["lamp", "chair", "mirror", "pillow"];

fn effective_p(base: f64, extra: f64) -> f64 {
    (base + extra).clamp(0.0, 1.0)
}

/// Number of view-direction sectors the noise content is keyed on.
const VIEW_BUCKETS: u64 = 8;

fn view_bucket(yaw: f64) -> u64 {
    let tau = std::f64::consts::TAU;
    let sector = (yaw.rem_euclid(tau)) / (tau / VIEW_BUCKETS as f64);
    (sector as u64).min(VIEW_BUCKETS - 1)
}

/// Deterministic pick for the content of a corruption: the same object seen
/// from the same direction gets the same wrong words, a different direction
/// gets different ones.
fn view_pick(object_id: u32, bucket: u64, kind: u8, len: usize) -> usize {
    let mut bytes = Vec::with_capacity(13);
    bytes.extend_from_slice(&object_id.to_le_bytes());
    bytes.extend_from_slice(&bucket.to_le_bytes());
    bytes.push(kind);
    (crate::rng::fnv1a64(&bytes) % len as u64) as usize
}

/// Generate the noisy caption for one view of an object.
///
/// Starts from the lowercased ground-truth caption; applies attribute swaps,
/// category swaps, hallucinated nouns, and detail drops, each with its
/// occlusion-raised probability. Whether a corruption fires is drawn from the
/// rng stream; what it says is keyed on the viewing direction, so captions
/// are wrong in a view-dependent, repeatable way and their diversity grows
/// with angular coverage. `corrupted` is set iff any of the four content
/// corruptions fired; boilerplate prefixing is tracked separately because it
/// only exercises the preprocessing stage.
pub fn caption(
    object: &ObjectGT,
    visible_fraction: f64,
    view_pose: CameraPose,
    cfg: &NoiseConfig,
    rng: &mut Stream,
) -> CaptionRecord {
    let extra = cfg.occlusion_boost * (1.0 - visible_fraction)
        + cfg.per_object_jitter * hash_unit(u64::from(object.id));
    let bucket = view_bucket(view_pose.yaw);
    let mut text = object.gt_caption.to_lowercase();
    let mut corrupted = false;

    if gen_bool(rng, effective_p(cfg.p_attr_swap, extra)) {
        let present: Vec<&String> =
            object.attribute_tokens.iter().filter(|t| contains_word(&text, t)).collect();
        if !present.is_empty() {
            let target = present[view_pick(object.id, bucket, 0, present.len())].clone();
            let replacement = match cfg.synonym_table.get(&target) {
                Some(alts) if !alts.is_empty() => {
                    alts[view_pick(object.id, bucket, 1, alts.len())].clone()
                }
                _ => "unusual".to_string(),
            };
            text = replace_word(&text, &target, &replacement);
            corrupted = true;
        }
    }
    if gen_bool(rng, effective_p(cfg.p_category_swap, extra)) {
        let true_name = object.category.name();
        let others: Vec<&Category> =
            ALL_CATEGORIES.iter().filter(|c| **c != object.category).collect();
        let swap = others[view_pick(object.id, bucket, 2, others.len())].name();
        if text.contains(true_name) {
            text = text.replacen(true_name, swap, 1);
            corrupted = true;
        }
    }
    if gen_bool(rng, effective_p(cfg.p_hallucinate, extra)) {
        let mut nouns: Vec<&str> = ALL_CATEGORIES
            .iter()
            .filter(|c| **c != object.category)
            .map(|c| c.name())
            .collect();
        nouns.extend(EXTRA_NOUNS);
        let noun = nouns[view_pick(object.id, bucket, 3, nouns.len())];
        text = format!("{text} and a {noun}");
        corrupted = true;
    }
    if gen_bool(rng, effective_p(cfg.p_drop_detail, extra)) {
        let present: Vec<&String> =
            object.attribute_tokens.iter().filter(|t| contains_word(&text, t)).collect();
        if !present.is_empty() {
            let target = present[view_pick(object.id, bucket, 4, present.len())].clone();
            text = replace_word(&text, &target, "");
            corrupted = true;
        }
    }
    if gen_bool(rng, cfg.p_boilerplate) {
        text = format!("a picture of {text}");
    }

    let text = collapse_whitespace(&text);
    debug_assert!(!text.is_empty());
    CaptionRecord { text, object_id_gt: object.id, view_pose, visible_fraction, corrupted }
}

/// Captioner interface for one object view; the noise model is the offline
/// implementation, and an HTTP-backed client implements the same trait (see
/// [`crate::llm::RemoteModelClient`]).
pub trait ViewCaptioner {
    fn caption_view(
        &mut self,
        object: &ObjectGT,
        visible_fraction: f64,
        view_pose: CameraPose,
    ) -> crate::error::Result<CaptionRecord>;
}

/// The default captioner: ground-truth captions corrupted by [`caption`].
pub struct NoiseModelCaptioner {
    pub cfg: NoiseConfig,
    pub rng: Stream,
}

impl ViewCaptioner for NoiseModelCaptioner {
    fn caption_view(
        &mut self,
        object: &ObjectGT,
        visible_fraction: f64,
        view_pose: CameraPose,
    ) -> crate::error::Result<CaptionRecord> {
        Ok(caption(object, visible_fraction, view_pose, &self.cfg, &mut self.rng))
    }
}

// rand's gen_bool panics on p == 0 or 1 edge semantics we don't want to
// depend on; route through a uniform draw so every probability in [0, 1]
// consumes exactly one value from the stream.
fn gen_bool(rng: &mut Stream, p: f64) -> bool {
    rng.gen_range(0.0..1.0) < p
}

fn contains_word(text: &str, word: &str) -> bool {
    text.split_whitespace().any(|w| w == word)
}

fn replace_word(text: &str, word: &str, replacement: &str) -> String {
    let mut replaced = false;
    let words: Vec<&str> = text
        .split_whitespace()
        .map(|w| {
            if !replaced && w == word {
                replaced = true;
                replacement
            } else {
                w
            }
        })
        .collect();
    collapse_whitespace(&words.join(" "))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::num::argmax;
    use crate::rng::stream;
    use crate::scene::{generate_scene, AgentState, CameraConfig, Fragment, SceneSpec};

    fn test_pose() -> CameraPose {
        CameraPose { position: [1.0, 1.0, 0.375], yaw: 0.0 }
    }

    fn test_object() -> ObjectGT {
        ObjectGT {
            id: 3,
            category: Category::Couch,
            attribute_tokens: vec!["red".into(), "fabric".into(), "window".into()],
            gt_caption: "a red fabric couch near the window".into(),
            voxels: vec![[1, 1, 0]],
        }
    }

    #[test]
    fn bbox_expansion_matches_stated_arithmetic() {
        let tight = BBox { x0: 10, y0: 10, x1: 20, y1: 20 };
        assert_eq!(tight.expanded(10, 64, 64), BBox { x0: 0, y0: 0, x1: 30, y1: 30 });
    }

    #[test]
    fn iou_of_half_overlapping_boxes() {
        let a = BBox { x0: 0, y0: 0, x1: 10, y1: 10 };
        let b = BBox { x0: 5, y0: 0, x1: 15, y1: 10 };
        let iou = a.iou(&b);
        assert!((iou - 50.0 / 150.0).abs() < 1e-12, "{iou}");
    }

    #[test]
    fn detect_peaks_at_true_class_without_misclassification() {
        let spec = SceneSpec { n_objects: 3, ..SceneSpec::default() };
        let scene = generate_scene(21, &spec).unwrap();
        let mut rng = stream(21, "detect");
        let camera = CameraConfig::default();
        let mut checked = 0;
        for obj in &scene.objects {
            // stand back from the object along -x and look at it
            let v = obj.voxels[0];
            let target =
                [(v[0] as f64 + 0.5) * scene.cell_size, (v[1] as f64 + 0.5) * scene.cell_size];
            let pos = [target[0] - 1.2, target[1], 0.375];
            if scene.occupied(scene.voxel_of(pos)) {
                continue;
            }
            let agent = AgentState::new(pos, 0.0);
            let obs = observe_ok(&scene, &agent, &camera);
            let cfg = DetectorConfig { misclass_rate: 0.0, ..DetectorConfig::default() };
            for det in detect(&obs, &scene, &cfg, &mut rng) {
                let owner = det.object_view_id as usize;
                assert_eq!(argmax(&det.logits), scene.objects[owner].category.index());
                checked += 1;
            }
        }
        assert!(checked > 0);
    }

    fn observe_ok(
        scene: &Scene,
        agent: &AgentState,
        camera: &CameraConfig,
    ) -> Observation {
        crate::scene::observe(scene, agent, camera).unwrap()
    }

    #[test]
    fn tiny_fragment_is_not_detected() {
        let spec = SceneSpec { n_objects: 1, ..SceneSpec::default() };
        let scene = generate_scene(2, &spec).unwrap();
        let obs = Observation {
            width: 64,
            height: 64,
            fov: std::f64::consts::FRAC_PI_2,
            max_range: 10.0,
            camera: test_pose(),
            depth: vec![f64::INFINITY; 64 * 64],
            visible_fragments: vec![Fragment {
                object_id: 0,
                pixels: vec![0, 1, 2],
                visible_fraction: 0.1,
            }],
        };
        let mut rng = stream(0, "detect");
        let dets = detect(&obs, &scene, &DetectorConfig::default(), &mut rng);
        assert!(dets.is_empty());
    }

    #[test]
    fn filter_removes_low_confidence() {
        let det = Detection {
            object_view_id: 0,
            logits: vec![1.0; NUM_CLASSES],
            bbox: BBox { x0: 0, y0: 0, x1: 30, y1: 30 },
            mask: Mask { width: 64, height: 64, pixels: vec![0] },
            confidence: 0.6,
        };
        assert!(filter_detections(vec![det], &FilterConfig::default()).is_empty());
    }

    #[test]
    fn nms_keeps_higher_confidence_of_identical_boxes() {
        let mk = |conf: f64| Detection {
            object_view_id: 0,
            logits: vec![1.0; NUM_CLASSES],
            bbox: BBox { x0: 0, y0: 0, x1: 30, y1: 30 },
            mask: Mask { width: 64, height: 64, pixels: vec![0] },
            confidence: conf,
        };
        let kept = filter_detections(vec![mk(0.8), mk(0.9)], &FilterConfig::default());
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].confidence, 0.9);
    }

    #[test]
    fn disjoint_enough_boxes_both_survive() {
        let mk = |x0: i32, conf: f64| Detection {
            object_view_id: 0,
            logits: vec![1.0; NUM_CLASSES],
            bbox: BBox { x0, y0: 0, x1: x0 + 10, y1: 10 },
            mask: Mask { width: 64, height: 64, pixels: vec![0] },
            confidence: conf,
        };
        // IoU = 50/150 < 0.8
        let cfg = FilterConfig { min_area_at_ref: 0.0, ..FilterConfig::default() };
        let kept = filter_detections(vec![mk(0, 0.9), mk(5, 0.8)], &cfg);
        assert_eq!(kept.len(), 2);
    }

    #[test]
    fn detections_satisfy_bbox_and_mask_invariants() {
        let spec = SceneSpec { n_objects: 4, ..SceneSpec::default() };
        let scene = generate_scene(6, &spec).unwrap();
        let camera = CameraConfig::default();
        let mut rng = stream(6, "inv");
        let mut seen = 0;
        for obj in &scene.objects {
            let v = obj.voxels[0];
            let pos = [
                (v[0] as f64 + 0.5) * scene.cell_size - 1.5,
                (v[1] as f64 + 0.5) * scene.cell_size,
                0.375,
            ];
            if scene.occupied(scene.voxel_of(pos)) {
                continue;
            }
            let agent = AgentState::new(pos, 0.0);
            let obs = observe_ok(&scene, &agent, &camera);
            for det in detect(&obs, &scene, &DetectorConfig::default(), &mut rng) {
                assert!(det.bbox.x0 >= 0 && det.bbox.y0 >= 0);
                assert!(det.bbox.x1 <= camera.width as i32);
                assert!(det.bbox.y1 <= camera.height as i32);
                assert_eq!(det.logits.len(), NUM_CLASSES);
                assert!((0.0..=1.0).contains(&det.confidence));
                for &p in &det.mask.pixels {
                    let x = (p as usize % det.mask.width) as i32;
                    let y = (p as usize / det.mask.width) as i32;
                    assert!(x >= det.bbox.x0 && x < det.bbox.x1, "mask outside bbox");
                    assert!(y >= det.bbox.y0 && y < det.bbox.y1, "mask outside bbox");
                }
                seen += 1;
            }
        }
        assert!(seen > 0);
    }

    #[test]
    fn filter_is_idempotent() {
        let mut rng = stream(17, "idem");
        let mut dets = Vec::new();
        for i in 0..40 {
            let x0 = rng.gen_range(0..40);
            let y0 = rng.gen_range(0..40);
            dets.push(Detection {
                object_view_id: i,
                logits: vec![1.0; NUM_CLASSES],
                bbox: BBox { x0, y0, x1: x0 + rng.gen_range(5..24), y1: y0 + rng.gen_range(5..24) },
                mask: Mask { width: 64, height: 64, pixels: vec![i as u32] },
                confidence: rng.gen_range(0.0..1.0),
            });
        }
        let cfg = FilterConfig { min_area_at_ref: 0.0, ..FilterConfig::default() };
        let once = filter_detections(dets, &cfg);
        let twice = filter_detections(once.clone(), &cfg);
        assert_eq!(once, twice);
    }

    #[test]
    fn zero_noise_is_identity_on_gt_caption() {
        let spec = SceneSpec { n_objects: 6, ..SceneSpec::default() };
        let scene = generate_scene(33, &spec).unwrap();
        let mut rng = stream(33, "noise");
        for obj in &scene.objects {
            for vf in [0.0, 0.3, 1.0] {
                let rec = caption(obj, vf, test_pose(), &NoiseConfig::zero(), &mut rng);
                assert_eq!(rec.text, obj.gt_caption.to_lowercase());
                assert!(!rec.corrupted);
            }
        }
    }

    #[test]
    fn forced_category_swap_replaces_class_word() {
        let cfg = NoiseConfig { p_category_swap: 1.0, ..NoiseConfig::zero() };
        let obj = test_object();
        let mut rng = stream(1, "noise");
        let rec = caption(&obj, 1.0, test_pose(), &cfg, &mut rng);
        assert!(rec.corrupted);
        assert!(!rec.text.contains("couch"), "{}", rec.text);
        assert!(ALL_CATEGORIES.iter().any(|c| *c != obj.category && rec.text.contains(c.name())));
    }

    // Monte-Carlo frequency check at effective corruption probability 0.3
    #[test]
    fn corruption_rate_matches_probability() {
        let cfg = NoiseConfig { p_category_swap: 0.3, ..NoiseConfig::zero() };
        let obj = test_object();
        let mut rng = stream(5, "noise-mc");
        let n = 10_000;
        let corrupted =
            (0..n).filter(|_| caption(&obj, 1.0, test_pose(), &cfg, &mut rng).corrupted).count();
        let rate = corrupted as f64 / n as f64;
        assert!((rate - 0.3).abs() <= 0.02, "rate {rate}");
    }

    // corruption probability non-decreasing in (1 - visible_fraction)
    #[test]
    fn corruption_grows_with_occlusion() {
        let cfg = NoiseConfig {
            p_attr_swap: 0.15,
            occlusion_boost: 0.5,
            synonym_table: default_synonym_table(),
            ..NoiseConfig::zero()
        };
        let obj = test_object();
        let n = 10_000;
        let rate = |vf: f64| {
            let mut rng = stream(7, "noise-mono");
            (0..n).filter(|_| caption(&obj, vf, test_pose(), &cfg, &mut rng).corrupted).count()
                as f64
                / n as f64
        };
        let (r_full, r_half, r_none) = (rate(1.0), rate(0.5), rate(0.0));
        assert!(r_full <= r_half + 0.02, "{r_full} vs {r_half}");
        assert!(r_half <= r_none + 0.02, "{r_half} vs {r_none}");
        assert!(r_none > r_full, "{r_none} vs {r_full}");
    }

    #[test]
    fn boilerplate_prefix_is_not_corruption() {
        let cfg = NoiseConfig { p_boilerplate: 1.0, ..NoiseConfig::zero() };
        let obj = test_object();
        let mut rng = stream(2, "noise");
        let rec = caption(&obj, 1.0, test_pose(), &cfg, &mut rng);
        assert!(rec.text.starts_with("a picture of "));
        assert!(!rec.corrupted);
    }
}
