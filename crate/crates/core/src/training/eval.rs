use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{TaskData, TrainError};
use crate::audio::ManifestEntry;
use crate::metrics::{
    accuracy, binarize_roll, lwlrap, sed_segment_counts, ScoreMatrix, SedCounts, SegmentRoll,
    DEFAULT_SEGMENT_S, DEFAULT_THRESHOLD, ROLL_UPSAMPLE,
};
use crate::model::Model;
use crate::nn::Mode;
use crate::task::{Task, TaskSet, SED_CLASSES, TAG_CLASSES};
use crate::{Scalar, Tensor};

/// Metrics of one task on one evaluation set. Only the task's own metrics
/// are present.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub task: Task,
    pub samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lwlrap: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub er: Option<f64>,
}

impl MetricReport {
    fn new(task: Task, samples: usize) -> Self {
        Self {
            task,
            samples,
            accuracy: None,
            lwlrap: None,
            f1: None,
            er: None,
        }
    }

    pub fn values(&self) -> Vec<(&'static str, f64)> {
        [
            ("accuracy", self.accuracy),
            ("lwlrap", self.lwlrap),
            ("f1", self.f1),
            ("er", self.er),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.map(|v| (k, v)))
        .collect()
    }

    /// The model-selection metric: accuracy, lwlrap or ER (lower is better).
    pub fn selection_score(&self) -> f64 {
        match self.task {
            Task::Asc => self.accuracy.unwrap_or(f64::NAN),
            Task::Tag => self.lwlrap.unwrap_or(f64::NAN),
            Task::Sed => -self.er.unwrap_or(f64::NAN),
        }
    }

    /// `"ASC.accuracy" -> value` style entries.
    pub fn keyed(&self) -> BTreeMap<String, f64> {
        self.values()
            .into_iter()
            .map(|(k, v)| (format!("{}.{k}", self.task), v))
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{:<10}{:>10}", "task", self.task.as_str()).unwrap();
        writeln!(s, "{:<10}{:>10}", "samples", self.samples).unwrap();
        for (k, v) in self.values() {
            writeln!(s, "{k:<10}{v:>10.4}").unwrap();
        }
        s
    }
}

/// Model output for one segment, as read and written by the scoring tools.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplePrediction {
    pub path: String,
    /// ASC logits (10) or TAG probabilities (80).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<Vec<f64>>,
    /// SED probabilities, one row of 14 per pooled frame.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sed_probs: Option<Vec<Vec<f64>>>,
}

/// Runs the model over every whole segment (no cropping) in eval mode.
pub fn predict<T: Scalar>(model: &mut Model<T>, data: &TaskData) -> Result<Vec<SamplePrediction>, TrainError> {
    let task = data.task();
    let min = model.config().min_frames();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut out = Vec::with_capacity(data.len());
    for (i, seg) in data.segments.iter().enumerate() {
        let f = data.full_features(i, min)?;
        let x = Tensor::from_vec(
            &[1, 1, f.frames(), f.bands()],
            f.values().iter().map(|&v| T::lit(v)).collect(),
        );
        let (o, _) = model.forward(&x, TaskSet::only(task), Mode::Eval, &mut rng)?;
        let to64 = |t: &Tensor<T>| -> Vec<f64> { t.data().iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect() };
        let mut p = SamplePrediction {
            path: seg.entry.path.clone(),
            scores: None,
            sed_probs: None,
        };
        match task {
            Task::Asc => p.scores = o.asc_logits.as_ref().map(to64),
            Task::Tag => p.scores = o.tag_probs.as_ref().map(to64),
            Task::Sed => {
                p.sed_probs = o
                    .sed_roll
                    .as_ref()
                    .map(|r| to64(r).chunks(SED_CLASSES).map(<[f64]>::to_vec).collect())
            }
        }
        out.push(p);
    }
    Ok(out)
}

fn matched<'a>(
    entries: &'a [ManifestEntry],
    preds: &'a [SamplePrediction],
) -> Result<Vec<(&'a ManifestEntry, &'a SamplePrediction)>, TrainError> {
    let mut by_path: BTreeMap<&str, &SamplePrediction> = BTreeMap::new();
    for p in preds {
        if by_path.insert(&p.path, p).is_some() {
            return Err(TrainError::Predictions(format!("duplicate prediction for {}", p.path)));
        }
    }
    if by_path.len() != entries.len() {
        return Err(TrainError::Predictions(format!(
            "{} predictions for {} manifest entries",
            by_path.len(),
            entries.len()
        )));
    }
    entries
        .iter()
        .map(|e| {
            by_path
                .get(e.path.as_str())
                .map(|p| (e, *p))
                .ok_or_else(|| TrainError::Predictions(format!("no prediction for {}", e.path)))
        })
        .collect()
}

/// Scores predictions against manifest labels. `pooled_hop_s` is the SED
/// output frame length; rolls are compared at a quarter of it.
pub fn score_predictions(
    task: Task,
    entries: &[ManifestEntry],
    preds: &[SamplePrediction],
    pooled_hop_s: f64,
) -> Result<MetricReport, TrainError> {
    let pairs = matched(entries, preds)?;
    let missing = |p: &SamplePrediction| TrainError::Predictions(format!("{}: no {task} output in prediction", p.path));
    let mut report = MetricReport::new(task, pairs.len());
    match task {
        Task::Asc => {
            let mut logits = Vec::new();
            let mut truth = Vec::new();
            for (e, p) in &pairs {
                logits.push(p.scores.clone().ok_or_else(|| missing(p))?);
                truth.push(e.scene_id.ok_or_else(|| TrainError::Predictions(format!("{} has no scene", e.path)))?);
            }
            report.accuracy = Some(accuracy(&logits, &truth)?);
        }
        Task::Tag => {
            let mut scores = Vec::new();
            let mut labels = Vec::new();
            for (e, p) in &pairs {
                let s = p.scores.clone().ok_or_else(|| missing(p))?;
                if s.len() != TAG_CLASSES {
                    return Err(TrainError::Predictions(format!("{}: {} tag scores", p.path, s.len())));
                }
                scores.push(s);
                labels.push(e.tags.clone().unwrap_or_default());
            }
            report.lwlrap = Some(lwlrap(&ScoreMatrix::from_label_sets(scores, &labels)?)?);
        }
        Task::Sed => {
            let hop = pooled_hop_s / ROLL_UPSAMPLE as f64;
            let mut counts = SedCounts::default();
            for (e, p) in &pairs {
                let rows = p.sed_probs.as_ref().ok_or_else(|| missing(p))?;
                if rows.iter().any(|r| r.len() != SED_CLASSES) {
                    return Err(TrainError::Predictions(format!("{}: SED rows must have 14 values", p.path)));
                }
                let flat: Vec<f64> = rows.iter().flatten().copied().collect();
                let pred = binarize_roll(&flat, SED_CLASSES, pooled_hop_s, DEFAULT_THRESHOLD)?;
                let events = e.events.as_deref().unwrap_or_default();
                let last = events.iter().map(|ev| (ev.offset / hop).ceil() as usize).max().unwrap_or(0);
                let reference = SegmentRoll::from_events(events, pred.frames().max(last), SED_CLASSES, hop);
                counts.add(&sed_segment_counts(&reference, &pred, DEFAULT_SEGMENT_S)?);
            }
            let m = counts.metrics();
            report.f1 = Some(m.f1);
            report.er = Some(m.er);
        }
    }
    Ok(report)
}

/// Crop-free evaluation of `model` on one task's data.
pub fn evaluate_task<T: Scalar>(model: &mut Model<T>, data: &TaskData) -> Result<MetricReport, TrainError> {
    let preds = predict(model, data)?;
    let entries: Vec<ManifestEntry> = data.segments.iter().map(|s| s.entry.clone()).collect();
    let pooled = data.feature_config().hop_s() * model.config().time_reduction() as f64;
    score_predictions(data.task(), &entries, &preds, pooled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::EventAnnotation;

    fn pred(path: &str, scores: Option<Vec<f64>>, sed: Option<Vec<Vec<f64>>>) -> SamplePrediction {
        SamplePrediction {
            path: path.into(),
            scores,
            sed_probs: sed,
        }
    }

    #[test]
    fn perfect_predictions_score_perfectly() {
        let entries = vec![ManifestEntry::scene("a", 2), ManifestEntry::scene("b", 0)];
        let onehot = |k: usize| (0..10).map(|i| (i == k) as u8 as f64).collect::<Vec<_>>();
        let preds = vec![pred("b", Some(onehot(0)), None), pred("a", Some(onehot(2)), None)];
        let r = score_predictions(Task::Asc, &entries, &preds, 0.08).unwrap();
        assert_eq!(r.accuracy, Some(1.0));
        assert_eq!(r.values().len(), 1);

        let ev = EventAnnotation {
            onset: 0.0,
            offset: 0.8,
            class: 3,
        };
        let entries = vec![ManifestEntry::with_events("s", vec![ev])];
        let rows: Vec<Vec<f64>> = (0..25)
            .map(|t| (0..14).map(|c| if c == 3 && t < 10 { 0.9 } else { 0.1 }).collect())
            .collect();
        let r = score_predictions(Task::Sed, &entries, &[pred("s", None, Some(rows))], 0.08).unwrap();
        assert_eq!((r.f1, r.er), (Some(1.0), Some(0.0)));
        assert!(r.accuracy.is_none() && r.lwlrap.is_none());
        let keys: Vec<String> = r.keyed().into_keys().collect();
        assert_eq!(keys, ["SED.er", "SED.f1"]);
    }

    #[test]
    fn tag_scores_use_lwlrap() {
        let entries = vec![ManifestEntry::tagged("t", vec![1, 2])];
        let mut s = vec![0.0; 80];
        s[0] = 0.9;
        s[1] = 0.3;
        s[2] = 0.5;
        let r = score_predictions(Task::Tag, &entries, &[pred("t", Some(s), None)], 0.08).unwrap();
        assert!((r.lwlrap.unwrap() - 7.0 / 12.0).abs() < 1e-12);
    }

    #[test]
    fn prediction_mismatches_are_errors() {
        let entries = vec![ManifestEntry::scene("a", 1)];
        assert!(matches!(
            score_predictions(Task::Asc, &entries, &[], 0.08),
            Err(TrainError::Predictions(_))
        ));
        assert!(score_predictions(Task::Asc, &entries, &[pred("x", Some(vec![0.0; 10]), None)], 0.08).is_err());
        assert!(score_predictions(Task::Asc, &entries, &[pred("a", None, Some(vec![]))], 0.08).is_err());
    }

    #[test]
    fn report_text_is_aligned() {
        let mut r = MetricReport::new(Task::Sed, 3);
        r.f1 = Some(0.5);
        r.er = Some(1.25);
        let text = r.to_text();
        assert!(text.lines().all(|l| l.len() == 20), "{text}");
        let json = serde_json::to_string(&r).unwrap();
        assert_eq!(json, r#"{"task":"SED","samples":3,"f1":0.5,"er":1.25}"#);
    }
}
