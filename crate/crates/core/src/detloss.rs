//! Default patches, IoU matching and the two detection-perceptual losses.
//!
//! Boxes use normalized center-size coordinates `(cx, cy, w, h)`. Class 0 is
//! background; ground-truth objects carry classes `1..=C` and predictions
//! carry `C + 1` class probabilities.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> BBox {
        BBox { cx, cy, w, h }
    }

    pub fn from_corners(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
        BBox {
            cx: (x0 + x1) / 2.0,
            cy: (y0 + y1) / 2.0,
            w: x1 - x0,
            h: y1 - y0,
        }
    }

    pub fn corners(&self) -> [f64; 4] {
        [
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        ]
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.cx, self.cy, self.w, self.h]
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }
}

/// Intersection over union; 0 for disjoint boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let [ax0, ay0, ax1, ay1] = a.corners();
    let [bx0, by0, bx1, by1] = b.corners();
    let iw = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
    let ih = (ay1.min(by1) - ay0.max(by0)).max(0.0);
    let inter = iw * ih;
    if inter == 0.0 {
        return 0.0;
    }
    inter / (a.area() + b.area() - inter)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DefaultPatch {
    pub bbox: BBox,
    pub layer: usize,
    /// 0..=4 index the aspect ratios `1, 2, 1/2, 3, 1/3` at the layer scale;
    /// 5 is the square patch at the intermediate scale.
    pub aspect: usize,
}

const ASPECTS: [f64; 5] = [1.0, 2.0, 0.5, 3.0, 1.0 / 3.0];

/// Patches per feature-map location.
pub const PATCHES_PER_LOCATION: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatchGridConfig {
    /// Square grid side per layer, coarsest last.
    pub grids: Vec<usize>,
    pub min_scale: f64,
    pub max_scale: f64,
}

impl Default for PatchGridConfig {
    fn default() -> Self {
        PatchGridConfig {
            grids: vec![38, 19, 10, 5, 3, 2, 1],
            min_scale: 0.2,
            max_scale: 0.9,
        }
    }
}

impl PatchGridConfig {
    pub fn with_grids(grids: Vec<usize>) -> PatchGridConfig {
        PatchGridConfig {
            grids,
            ..PatchGridConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grids.is_empty() {
            return Err(Error::Empty("patch grid needs at least one layer".into()));
        }
        if self.grids.contains(&0) {
            return Err(Error::InvalidParameter(
                "grid sizes must be positive".into(),
            ));
        }
        let ok = self.min_scale.is_finite()
            && self.max_scale.is_finite()
            && self.min_scale > 0.0
            && self.max_scale <= 1.0
            && (self.min_scale < self.max_scale || self.grids.len() == 1);
        if !ok {
            return Err(Error::InvalidParameter(format!(
                "scales need 0 < min < max <= 1, got {} and {}",
                self.min_scale, self.max_scale
            )));
        }
        Ok(())
    }

    /// Per-layer scales followed by the extra scale 1.0 used for the last
    /// layer's intermediate patch.
    pub fn scales(&self) -> Vec<f64> {
        let n = self.grids.len();
        let mut s: Vec<f64> = (0..n)
            .map(|l| {
                if n == 1 {
                    self.min_scale
                } else {
                    self.min_scale + (self.max_scale - self.min_scale) * l as f64 / (n - 1) as f64
                }
            })
            .collect();
        s.push(1.0);
        s
    }

    pub fn patch_count(&self) -> usize {
        PATCHES_PER_LOCATION * self.grids.iter().map(|g| g * g).sum::<usize>()
    }
}

/// Patches ordered by layer, row, column, then aspect index.
pub fn generate_default_patches(cfg: &PatchGridConfig) -> Result<Vec<DefaultPatch>> {
    cfg.validate()?;
    let scales = cfg.scales();
    let mut out = Vec::with_capacity(cfg.patch_count());
    for (layer, &g) in cfg.grids.iter().enumerate() {
        let s = scales[layer];
        let s_mid = (s * scales[layer + 1]).sqrt();
        for j in 0..g {
            for i in 0..g {
                let cx = (i as f64 + 0.5) / g as f64;
                let cy = (j as f64 + 0.5) / g as f64;
                for (aspect, &a) in ASPECTS.iter().enumerate() {
                    let h = s / a.sqrt();
                    out.push(DefaultPatch {
                        bbox: BBox::new(cx, cy, h * a, h),
                        layer,
                        aspect,
                    });
                }
                out.push(DefaultPatch {
                    bbox: BBox::new(cx, cy, s_mid, s_mid),
                    layer,
                    aspect: 5,
                });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GtBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub class: usize,
}

impl GtBox {
    pub fn bbox(&self) -> BBox {
        BBox::new(self.cx, self.cy, self.w, self.h)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.cx, self.cy, self.w, self.h]
            .iter()
            .all(|v| v.is_finite());
        if !finite || !(0.0..=1.0).contains(&self.cx) || !(0.0..=1.0).contains(&self.cy) {
            return Err(Error::InvalidParameter(format!(
                "gt center ({}, {}) must lie in the unit square",
                self.cx, self.cy
            )));
        }
        if !(self.w > 0.0 && self.h > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "gt extents ({}, {}) must be positive",
                self.w, self.h
            )));
        }
        if self.class == 0 {
            return Err(Error::InvalidParameter(
                "gt class 0 is reserved for background".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prediction {
    pub pcls: Vec<f64>,
    pub ploc: [f64; 4],
}

const SIMPLEX_TOL: f64 = 1e-6;

impl Prediction {
    pub fn validate(&self) -> Result<()> {
        if self.pcls.len() < 2 {
            return Err(Error::NonSimplex(format!(
                "class vector needs background plus at least one class, got {} entries",
                self.pcls.len()
            )));
        }
        if self.pcls.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::NonSimplex(format!(
                "negative or non-finite entry in {:?}",
                self.pcls
            )));
        }
        let sum: f64 = self.pcls.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::NonSimplex(format!("class vector sums to {sum}")));
        }
        if self.ploc.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "location vector must be finite".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "label", rename_all = "snake_case")]
pub enum Assignment {
    Background,
    Object {
        gt: usize,
        class: usize,
        gloc: [f64; 4],
    },
}

impl Assignment {
    pub fn class(&self) -> usize {
        match self {
            Assignment::Background => 0,
            Assignment::Object { class, .. } => *class,
        }
    }

    pub fn is_object(&self) -> bool {
        matches!(self, Assignment::Object { .. })
    }
}

pub const MATCH_THRESHOLD: f64 = 0.5;

/// Labels each patch with its best gt when their IoU exceeds `threshold`,
/// then force-matches every gt, in order, to its highest-IoU patch not yet
/// force-matched by an earlier gt. Ties go to the lowest index.
pub fn match_patches(patches: &[BBox], gts: &[GtBox], threshold: f64) -> Vec<Assignment> {
    let object = |g: usize| Assignment::Object {
        gt: g,
        class: gts[g].class,
        gloc: gts[g].bbox().to_array(),
    };
    let ious: Vec<Vec<f64>> = patches
        .iter()
        .map(|p| gts.iter().map(|g| iou(p, &g.bbox())).collect())
        .collect();

    let mut out: Vec<Assignment> = ious
        .iter()
        .map(|row| {
            let mut best: Option<(usize, f64)> = None;
            for (g, &v) in row.iter().enumerate() {
                if best.is_none_or(|(_, b)| v > b) {
                    best = Some((g, v));
                }
            }
            match best {
                Some((g, v)) if v > threshold => object(g),
                _ => Assignment::Background,
            }
        })
        .collect();

    let mut claimed = vec![false; patches.len()];
    for g in 0..gts.len() {
        let mut best: Option<(usize, f64)> = None;
        for (p, row) in ious.iter().enumerate() {
            if !claimed[p] && best.is_none_or(|(_, b)| row[g] > b) {
                best = Some((p, row[g]));
            }
        }
        if let Some((p, _)) = best {
            claimed[p] = true;
            out[p] = object(g);
        }
    }
    out
}

const PROB_FLOOR: f64 = 1e-12;

/// Cross-entropy of `pcls` against the one-hot class `class`.
pub fn softmax_cls_loss(pcls: &[f64], class: usize) -> f64 {
    -pcls[class].max(PROB_FLOOR).ln()
}

fn smooth_l1(x: f64) -> f64 {
    if x.abs() < 1.0 {
        0.5 * x * x
    } else {
        x.abs() - 0.5
    }
}

fn smooth_l1_grad(x: f64) -> f64 {
    if x.abs() < 1.0 {
        x
    } else {
        x.signum()
    }
}

pub fn smooth_l1_loc_loss(ploc: &[f64; 4], gloc: &[f64; 4]) -> f64 {
    ploc.iter().zip(gloc).map(|(p, g)| smooth_l1(p - g)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossVariant {
    Patch,
    ObjectFocused,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossReport {
    #[serde(rename = "L_cls_term")]
    pub cls_term: f64,
    #[serde(rename = "L_loc_term")]
    pub loc_term: f64,
    pub total: f64,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "N_bar")]
    pub n_bar: usize,
}

impl LossReport {
    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn check_inputs(preds: &[Prediction], assignments: &[Assignment]) -> Result<()> {
    if preds.len() != assignments.len() {
        return Err(Error::LengthMismatch(format!(
            "{} predictions for {} patches",
            preds.len(),
            assignments.len()
        )));
    }
    for (i, (p, a)) in preds.iter().zip(assignments).enumerate() {
        p.validate()
            .map_err(|e| Error::InvalidData(format!("prediction {i}: {e}")))?;
        if a.class() >= p.pcls.len() {
            return Err(Error::InvalidParameter(format!(
                "patch {i} has class {} but only {} class scores",
                a.class(),
                p.pcls.len()
            )));
        }
    }
    Ok(())
}

fn object_count(assignments: &[Assignment]) -> usize {
    assignments.iter().filter(|a| a.is_object()).count()
}

fn gloc(a: &Assignment) -> Option<&[f64; 4]> {
    match a {
        Assignment::Object { gloc, .. } => Some(gloc),
        Assignment::Background => None,
    }
}

/// Classification over every patch plus localization over object patches.
pub fn patch_perceptual_loss(
    preds: &[Prediction],
    assignments: &[Assignment],
) -> Result<LossReport> {
    check_inputs(preds, assignments)?;
    let n = preds.len();
    let n_bar = object_count(assignments);
    let mut cls = 0.0;
    let mut loc = 0.0;
    for (p, a) in preds.iter().zip(assignments) {
        cls += softmax_cls_loss(&p.pcls, a.class());
        if let Some(g) = gloc(a) {
            loc += smooth_l1_loc_loss(&p.ploc, g);
        }
    }
    let cls_term = if n == 0 { 0.0 } else { cls / n as f64 };
    let loc_term = if n_bar == 0 { 0.0 } else { loc / n_bar as f64 };
    Ok(LossReport {
        cls_term,
        loc_term,
        total: cls_term + loc_term,
        n,
        n_bar,
    })
}

/// Classification and localization over object patches only.
pub fn object_focused_loss(preds: &[Prediction], assignments: &[Assignment]) -> Result<LossReport> {
    check_inputs(preds, assignments)?;
    let n_bar = object_count(assignments);
    let mut cls = 0.0;
    let mut loc = 0.0;
    for (p, a) in preds.iter().zip(assignments) {
        if let Some(g) = gloc(a) {
            cls += softmax_cls_loss(&p.pcls, a.class());
            loc += smooth_l1_loc_loss(&p.ploc, g);
        }
    }
    let (cls_term, loc_term) = if n_bar == 0 {
        (0.0, 0.0)
    } else {
        (cls / n_bar as f64, loc / n_bar as f64)
    };
    Ok(LossReport {
        cls_term,
        loc_term,
        total: cls_term + loc_term,
        n: preds.len(),
        n_bar,
    })
}

pub fn loss(
    preds: &[Prediction],
    assignments: &[Assignment],
    variant: LossVariant,
) -> Result<LossReport> {
    match variant {
        LossVariant::Patch => patch_perceptual_loss(preds, assignments),
        LossVariant::ObjectFocused => object_focused_loss(preds, assignments),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictionGrad {
    pub pcls: Vec<f64>,
    pub ploc: [f64; 4],
}

/// Gradient of the selected loss's `total` with respect to every prediction.
pub fn loss_gradients(
    preds: &[Prediction],
    assignments: &[Assignment],
    variant: LossVariant,
) -> Result<Vec<PredictionGrad>> {
    check_inputs(preds, assignments)?;
    let n = preds.len() as f64;
    let n_bar = object_count(assignments);
    let inv_bar = if n_bar == 0 { 0.0 } else { 1.0 / n_bar as f64 };
    Ok(preds
        .iter()
        .zip(assignments)
        .map(|(p, a)| {
            let mut g = PredictionGrad {
                pcls: vec![0.0; p.pcls.len()],
                ploc: [0.0; 4],
            };
            let cls_scale = match (variant, a.is_object()) {
                (LossVariant::Patch, _) => 1.0 / n,
                (LossVariant::ObjectFocused, true) => inv_bar,
                (LossVariant::ObjectFocused, false) => 0.0,
            };
            let c = a.class();
            if cls_scale != 0.0 && p.pcls[c] > PROB_FLOOR {
                g.pcls[c] = -cls_scale / p.pcls[c];
            }
            if let Some(gl) = gloc(a) {
                for ((gk, pk), lk) in g.ploc.iter_mut().zip(p.ploc).zip(gl) {
                    *gk = inv_bar * smooth_l1_grad(pk - lk);
                }
            }
            g
        })
        .collect())
}

/// Detection scene: ground truth plus one prediction per default patch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scene {
    pub gt_boxes: Vec<GtBox>,
    pub predictions: Vec<Prediction>,
    /// Layer grid sizes the predictions were laid out on.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grids: Option<Vec<usize>>,
}

impl Scene {
    pub fn from_json_str(s: &str) -> Result<Scene> {
        let scene: Scene = serde_json::from_str(s)?;
        for g in &scene.gt_boxes {
            g.validate()?;
        }
        for (i, p) in scene.predictions.iter().enumerate() {
            p.validate()
                .map_err(|e| Error::InvalidData(format!("prediction {i}: {e}")))?;
        }
        Ok(scene)
    }

    /// Generates the default patches for `grid`, matches them and evaluates
    /// the chosen loss.
    pub fn evaluate(&self, grid: &PatchGridConfig, variant: LossVariant) -> Result<LossReport> {
        let patches = generate_default_patches(grid)?;
        if patches.len() != self.predictions.len() {
            return Err(Error::LengthMismatch(format!(
                "grid {:?} has {} patches but the scene has {} predictions",
                grid.grids,
                patches.len(),
                self.predictions.len()
            )));
        }
        let boxes: Vec<BBox> = patches.iter().map(|p| p.bbox).collect();
        let assignments = match_patches(&boxes, &self.gt_boxes, MATCH_THRESHOLD);
        loss(&self.predictions, &assignments, variant)
    }
}
