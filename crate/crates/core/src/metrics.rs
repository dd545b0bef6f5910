//! Scene accuracy, label-weighted label-ranking precision and segment-based
//! event detection scores.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::EventAnnotation;

/// Pooled SED frames are repeated this many times to reach the feature rate.
pub const ROLL_UPSAMPLE: usize = 4;
pub const DEFAULT_SEGMENT_S: f64 = 1.0;
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no samples to score")]
    Empty,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("sample {0} has no true labels")]
    NoTrueLabels(usize),
    #[error("non-finite score at sample {sample}, class {class}")]
    NonFinite { sample: usize, class: usize },
    #[error("rolls are misaligned: {0}")]
    Misaligned(String),
    #[error("threshold must lie in (0, 1), got {0}")]
    Threshold(f64),
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Fraction of rows whose argmax equals the true class.
pub fn accuracy(logits: &[Vec<f64>], truth: &[usize]) -> Result<f64, MetricsError> {
    if logits.is_empty() {
        return Err(MetricsError::Empty);
    }
    if logits.len() != truth.len() {
        return Err(MetricsError::Shape(format!(
            "{} prediction rows for {} labels",
            logits.len(),
            truth.len()
        )));
    }
    let classes = logits[0].len();
    let mut correct = 0usize;
    for (row, &t) in logits.iter().zip(truth) {
        if row.len() != classes || classes == 0 {
            return Err(MetricsError::Shape("ragged or empty prediction rows".into()));
        }
        if t >= classes {
            return Err(MetricsError::Shape(format!("label {t} out of {classes} classes")));
        }
        correct += (argmax(row) == t) as usize;
    }
    Ok(correct as f64 / logits.len() as f64)
}

/// Per-sample scores with the set of true classes of each sample.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMatrix {
    scores: Vec<Vec<f64>>,
    truth: Vec<Vec<bool>>,
}

impl ScoreMatrix {
    pub fn new(scores: Vec<Vec<f64>>, truth: Vec<Vec<bool>>) -> Result<Self, MetricsError> {
        if scores.is_empty() {
            return Err(MetricsError::Empty);
        }
        if scores.len() != truth.len() {
            return Err(MetricsError::Shape(format!(
                "{} score rows for {} label rows",
                scores.len(),
                truth.len()
            )));
        }
        let classes = scores[0].len();
        for (i, (s, t)) in scores.iter().zip(&truth).enumerate() {
            if s.len() != classes || t.len() != classes {
                return Err(MetricsError::Shape(format!("row {i} does not have {classes} classes")));
            }
            if let Some(class) = s.iter().position(|v| !v.is_finite()) {
                return Err(MetricsError::NonFinite { sample: i, class });
            }
        }
        Ok(Self { scores, truth })
    }

    /// Builds the label matrix from lists of true class indices.
    pub fn from_label_sets(scores: Vec<Vec<f64>>, labels: &[Vec<usize>]) -> Result<Self, MetricsError> {
        let classes = scores.first().map_or(0, Vec::len);
        let mut truth = Vec::with_capacity(labels.len());
        for set in labels {
            let mut row = vec![false; classes];
            for &c in set {
                if c >= classes {
                    return Err(MetricsError::Shape(format!("label {c} out of {classes} classes")));
                }
                row[c] = true;
            }
            truth.push(row);
        }
        Self::new(scores, truth)
    }

    pub fn samples(&self) -> usize {
        self.scores.len()
    }

    pub fn classes(&self) -> usize {
        self.scores[0].len()
    }

    pub fn scores(&self) -> &[Vec<f64>] {
        &self.scores
    }

    pub fn truth(&self) -> &[Vec<bool>] {
        &self.truth
    }
}

/// Sum of per-label precisions for one sample and the number of true labels.
fn sample_label_precisions(scores: &[f64], truth: &[bool]) -> (f64, usize) {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut sum = 0.0;
    let mut n_true = 0;
    let (mut ranked, mut ranked_true) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        // a tie group shares rank: everything in it counts as "at or above"
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let group_true = order[i..j].iter().filter(|&&k| truth[k]).count();
        ranked += j - i;
        ranked_true += group_true;
        sum += group_true as f64 * ranked_true as f64 / ranked as f64;
        n_true += group_true;
        i = j;
    }
    (sum, n_true)
}

fn lwlrap_impl(s: &ScoreMatrix, exclude_unlabeled: bool) -> Result<f64, MetricsError> {
    let mut total = 0.0;
    let mut pairs = 0usize;
    for (i, (scores, truth)) in s.scores.iter().zip(&s.truth).enumerate() {
        let (sum, n) = sample_label_precisions(scores, truth);
        if n == 0 && !exclude_unlabeled {
            return Err(MetricsError::NoTrueLabels(i));
        }
        total += sum;
        pairs += n;
    }
    if pairs == 0 {
        return Err(MetricsError::Empty);
    }
    Ok(total / pairs as f64)
}

/// Label-weighted label-ranking average precision. Ranks use `>=`, so tied
/// scores count in both numerator and denominator. Samples without true
/// labels are skipped.
pub fn lwlrap(s: &ScoreMatrix) -> Result<f64, MetricsError> {
    lwlrap_impl(s, true)
}

/// As [`lwlrap`], but a sample with no true labels is an error.
pub fn lwlrap_strict(s: &ScoreMatrix) -> Result<f64, MetricsError> {
    lwlrap_impl(s, false)
}

/// Binary frames-by-classes activity matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentRoll {
    frames: usize,
    classes: usize,
    frame_hop_s: f64,
    active: Vec<bool>,
}

impl SegmentRoll {
    pub fn new(frames: usize, classes: usize, frame_hop_s: f64, active: Vec<bool>) -> Result<Self, MetricsError> {
        if active.len() != frames * classes {
            return Err(MetricsError::Shape(format!(
                "{} entries for {frames}x{classes}",
                active.len()
            )));
        }
        if !(frame_hop_s > 0.0 && frame_hop_s.is_finite()) {
            return Err(MetricsError::Shape(format!("frame hop {frame_hop_s}")));
        }
        Ok(Self {
            frames,
            classes,
            frame_hop_s,
            active,
        })
    }

    pub fn empty(frames: usize, classes: usize, frame_hop_s: f64) -> Self {
        Self::new(frames, classes, frame_hop_s, vec![false; frames * classes])
            .expect("valid empty roll")
    }

    /// Reference roll from annotations, using the same half-frame overlap
    /// rule as the training targets.
    pub fn from_events(events: &[EventAnnotation], frames: usize, classes: usize, frame_hop_s: f64) -> Self {
        let mut roll = Self::empty(frames, classes, frame_hop_s);
        for (i, v) in crate::model::rasterize_events(events, frames, frame_hop_s)
            .into_iter()
            .enumerate()
        {
            let (t, c) = (i / crate::task::SED_CLASSES, i % crate::task::SED_CLASSES);
            if c < classes && v > 0.5 {
                roll.set(t, c, true);
            }
        }
        roll
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn frame_hop_s(&self) -> f64 {
        self.frame_hop_s
    }

    pub fn get(&self, frame: usize, class: usize) -> bool {
        self.active[frame * self.classes + class]
    }

    pub fn set(&mut self, frame: usize, class: usize, on: bool) {
        self.active[frame * self.classes + class] = on;
    }

    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|&&b| b).count()
    }

    /// Repeats every frame `factor` times.
    pub fn upsample(&self, factor: usize) -> Self {
        let mut active = Vec::with_capacity(self.active.len() * factor);
        for row in self.active.chunks(self.classes.max(1)) {
            for _ in 0..factor {
                active.extend_from_slice(row);
            }
        }
        Self {
            frames: self.frames * factor,
            classes: self.classes,
            frame_hop_s: self.frame_hop_s / factor as f64,
            active,
        }
    }
}

/// Thresholds pooled-rate probabilities (`prob >= threshold`) and repeats
/// each frame [`ROLL_UPSAMPLE`] times to the feature frame rate.
pub fn binarize_roll(
    probs: &[f64],
    classes: usize,
    pooled_hop_s: f64,
    threshold: f64,
) -> Result<SegmentRoll, MetricsError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(MetricsError::Threshold(threshold));
    }
    if classes == 0 || probs.len() % classes != 0 {
        return Err(MetricsError::Shape(format!(
            "{} probabilities for {classes} classes",
            probs.len()
        )));
    }
    let active = probs.iter().map(|&p| p >= threshold).collect();
    let pooled = SegmentRoll::new(probs.len() / classes, classes, pooled_hop_s, active)?;
    Ok(pooled.upsample(ROLL_UPSAMPLE))
}

/// Segment-level contingency totals, pooled over segments and files.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SedCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub reference_active: usize,
}

impl SedCounts {
    pub fn add(&mut self, o: &SedCounts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.substitutions += o.substitutions;
        self.deletions += o.deletions;
        self.insertions += o.insertions;
        self.reference_active += o.reference_active;
    }

    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            1.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }

    /// Pooled error rate. Errors against an empty reference are divided by
    /// one rather than zero.
    pub fn error_rate(&self) -> f64 {
        let errors = self.substitutions + self.deletions + self.insertions;
        errors as f64 / self.reference_active.max(1) as f64
    }

    pub fn metrics(&self) -> SedMetrics {
        SedMetrics {
            f1: self.f1(),
            er: self.error_rate(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SedMetrics {
    pub f1: f64,
    pub er: f64,
}

fn collapse(roll: &SegmentRoll, per_segment: usize, segments: usize) -> Vec<bool> {
    let mut out = vec![false; segments * roll.classes];
    for t in 0..roll.frames {
        let k = t / per_segment;
        for c in 0..roll.classes {
            if roll.get(t, c) {
                out[k * roll.classes + c] = true;
            }
        }
    }
    out
}

/// Segment-based counts for one reference/prediction pair. Rolls must share
/// class count and frame hop; a shorter roll is treated as inactive past its
/// end.
pub fn sed_segment_counts(
    reference: &SegmentRoll,
    prediction: &SegmentRoll,
    segment_s: f64,
) -> Result<SedCounts, MetricsError> {
    if reference.classes != prediction.classes {
        return Err(MetricsError::Misaligned(format!(
            "{} reference classes, {} predicted",
            reference.classes, prediction.classes
        )));
    }
    if (reference.frame_hop_s - prediction.frame_hop_s).abs() > 1e-9 {
        return Err(MetricsError::Misaligned(format!(
            "frame hops {} and {}",
            reference.frame_hop_s, prediction.frame_hop_s
        )));
    }
    let ratio = segment_s / reference.frame_hop_s;
    let per_segment = ratio.round();
    if per_segment < 1.0 || (ratio - per_segment).abs() > 1e-6 {
        return Err(MetricsError::Misaligned(format!(
            "segment {segment_s} s is not a whole number of {} s frames",
            reference.frame_hop_s
        )));
    }
    let per_segment = per_segment as usize;
    let frames = reference.frames.max(prediction.frames);
    let segments = frames.div_ceil(per_segment);
    let r = collapse(reference, per_segment, segments);
    let p = collapse(prediction, per_segment, segments);
    let classes = reference.classes;
    let mut counts = SedCounts::default();
    for k in 0..segments {
        let (mut tp, mut fp, mut fn_, mut n) = (0, 0, 0, 0);
        for c in 0..classes {
            let (rv, pv) = (r[k * classes + c], p[k * classes + c]);
            n += rv as usize;
            match (rv, pv) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fn_ += 1,
                (false, false) => {}
            }
        }
        counts.add(&SedCounts {
            tp,
            fp,
            fn_,
            substitutions: fn_.min(fp),
            deletions: fn_.saturating_sub(fp),
            insertions: fp.saturating_sub(fn_),
            reference_active: n,
        });
    }
    Ok(counts)
}

/// Segment-based F1 and error rate for one pair of rolls.
pub fn sed_segment_metrics(
    reference: &SegmentRoll,
    prediction: &SegmentRoll,
    segment_s: f64,
) -> Result<SedMetrics, MetricsError> {
    Ok(sed_segment_counts(reference, prediction, segment_s)?.metrics())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct enumeration of every (sample, true label) pair.
    fn lwlrap_oracle(scores: &[Vec<f64>], truth: &[Vec<bool>]) -> f64 {
        let mut precisions = Vec::new();
        for (s, t) in scores.iter().zip(truth) {
            for c in 0..s.len() {
                if !t[c] {
                    continue;
                }
                let at_or_above: Vec<usize> = (0..s.len()).filter(|&k| s[k] >= s[c]).collect();
                let hits = at_or_above.iter().filter(|&&k| t[k]).count();
                precisions.push(hits as f64 / at_or_above.len() as f64);
            }
        }
        precisions.iter().sum::<f64>() / precisions.len() as f64
    }

    fn roll(classes: usize, hop: f64, frames: &[&[usize]]) -> SegmentRoll {
        let mut r = SegmentRoll::empty(frames.len(), classes, hop);
        for (t, on) in frames.iter().enumerate() {
            for &c in *on {
                r.set(t, c, true);
            }
        }
        r
    }

    #[test]
    fn accuracy_cases() {
        let eye: Vec<Vec<f64>> = (0..4).map(|i| (0..4).map(|j| (i == j) as u8 as f64).collect()).collect();
        assert_eq!(accuracy(&eye, &[0, 1, 2, 3]).unwrap(), 1.0);
        assert_eq!(accuracy(&eye, &[0, 1, 2, 0]).unwrap(), 0.75);
        assert_eq!(accuracy(&vec![vec![0.3; 10]; 5], &[0; 5]).unwrap(), 1.0);
        assert!(matches!(accuracy(&eye, &[0, 1]), Err(MetricsError::Shape(_))));
        assert_eq!(accuracy(&[], &[]), Err(MetricsError::Empty));
    }

    #[test]
    fn lwlrap_worked_values() {
        let s = ScoreMatrix::from_label_sets(vec![vec![0.9, 0.3, 0.5]], &[vec![1, 2]]).unwrap();
        assert!((lwlrap(&s).unwrap() - 7.0 / 12.0).abs() <= 1e-12);
        let s = ScoreMatrix::from_label_sets(vec![vec![0.2; 4]], &[vec![2]]).unwrap();
        assert!((lwlrap(&s).unwrap() - 0.25).abs() <= 1e-12);
        let s = ScoreMatrix::from_label_sets(vec![vec![0.1, 0.8, 0.7, 0.0]], &[vec![1, 2]]).unwrap();
        assert_eq!(lwlrap(&s).unwrap(), 1.0);
    }

    #[test]
    fn lwlrap_unlabeled_samples() {
        let s = ScoreMatrix::from_label_sets(vec![vec![0.9, 0.1], vec![0.5, 0.4]], &[vec![0], vec![]]).unwrap();
        assert_eq!(lwlrap(&s).unwrap(), 1.0);
        assert_eq!(lwlrap_strict(&s), Err(MetricsError::NoTrueLabels(1)));
        let s = ScoreMatrix::from_label_sets(vec![vec![0.9, 0.1]], &[vec![]]).unwrap();
        assert_eq!(lwlrap(&s), Err(MetricsError::Empty));
    }

    #[test]
    fn lwlrap_matches_oracle_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let n = rng.gen_range(1..=8);
            let c = rng.gen_range(1..=10);
            // coarse scores so ties are common
            let scores: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..c).map(|_| rng.gen_range(0..5) as f64 / 4.0).collect())
                .collect();
            let mut truth: Vec<Vec<bool>> = (0..n).map(|_| (0..c).map(|_| rng.gen_bool(0.3)).collect()).collect();
            for t in &mut truth {
                if !t.iter().any(|&b| b) {
                    t[rng.gen_range(0..c)] = true;
                }
            }
            let got = lwlrap(&ScoreMatrix::new(scores.clone(), truth.clone()).unwrap()).unwrap();
            assert!((got - lwlrap_oracle(&scores, &truth)).abs() <= 1e-12);
        }
    }

    #[test]
    fn rejects_non_finite_scores() {
        assert!(matches!(
            ScoreMatrix::new(vec![vec![0.0, f64::NAN]], vec![vec![true, false]]),
            Err(MetricsError::NonFinite { sample: 0, class: 1 })
        ));
    }

    #[test]
    fn binarize_threshold_and_upsampling() {
        let r = binarize_roll(&[0.5, 0.49, 0.0, 0.0], 2, 0.08, DEFAULT_THRESHOLD).unwrap();
        assert_eq!(r.frames(), 8);
        assert!((r.frame_hop_s() - 0.02).abs() < 1e-15);
        for t in 0..8 {
            assert_eq!(r.get(t, 0), t < 4);
            assert!(!r.get(t, 1));
        }
        assert_eq!(binarize_roll(&[0.0; 28], 14, 0.08, 0.5).unwrap().active_count(), 0);
        assert_eq!(binarize_roll(&[0.0; 2], 2, 0.08, 1.0), Err(MetricsError::Threshold(1.0)));
    }

    #[test]
    fn segment_metric_cases() {
        let hop = 0.02;
        let r = roll(3, hop, &[&[0, 1]]);
        let m = sed_segment_metrics(&r, &r, 1.0).unwrap();
        assert_eq!((m.f1, m.er), (1.0, 0.0));

        let p = roll(3, hop, &[&[0, 2]]);
        let c = sed_segment_counts(&r, &p, 1.0).unwrap();
        assert_eq!((c.fn_, c.fp, c.substitutions, c.tp), (1, 1, 1, 1));
        let m = c.metrics();
        assert!((m.er - 0.5).abs() < 1e-15 && (m.f1 - 0.5).abs() < 1e-15);

        let e = SegmentRoll::empty(1, 3, hop);
        let m = sed_segment_metrics(&r, &e, 1.0).unwrap();
        assert_eq!((m.f1, m.er), (0.0, 1.0));
        let m = sed_segment_metrics(&e, &e, 1.0).unwrap();
        assert_eq!((m.f1, m.er), (1.0, 0.0));
    }

    #[test]
    fn segments_collapse_frames() {
        // 120 frames at 20 ms give three 1 s segments, the last one partial
        let mut r = SegmentRoll::empty(120, 2, 0.02);
        r.set(10, 0, true);
        r.set(49, 0, true);
        r.set(110, 1, true);
        let mut p = SegmentRoll::empty(120, 2, 0.02);
        p.set(0, 0, true);
        p.set(50, 1, true);
        let c = sed_segment_counts(&r, &p, 1.0).unwrap();
        assert_eq!(c.reference_active, 2);
        assert_eq!((c.tp, c.fp, c.fn_), (1, 1, 1));
        assert_eq!((c.insertions, c.deletions), (1, 1));
    }

    #[test]
    fn error_rate_can_exceed_one() {
        let r = roll(4, 0.02, &[&[0]]);
        let p = roll(4, 0.02, &[&[1, 2, 3]]);
        let m = sed_segment_metrics(&r, &p, 1.0).unwrap();
        assert!(m.er > 1.0);
        assert_eq!(m.er, 3.0);
    }

    #[test]
    fn misaligned_rolls_are_rejected() {
        let a = SegmentRoll::empty(50, 3, 0.02);
        assert!(matches!(
            sed_segment_metrics(&a, &SegmentRoll::empty(50, 4, 0.02), 1.0),
            Err(MetricsError::Misaligned(_))
        ));
        assert!(matches!(
            sed_segment_metrics(&a, &SegmentRoll::empty(50, 3, 0.08), 1.0),
            Err(MetricsError::Misaligned(_))
        ));
    }

    #[test]
    fn reference_roll_from_events() {
        let ev = [EventAnnotation {
            onset: 0.0,
            offset: 0.05,
            class: 2,
        }];
        let r = SegmentRoll::from_events(&ev, 5, 14, 0.02);
        assert_eq!((0..5).map(|t| r.get(t, 2)).collect::<Vec<_>>(), [true, true, true, false, false]);
        assert_eq!(r.active_count(), 3);
    }

    fn score_instance() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<Vec<bool>>)> {
        (1usize..=8, 1usize..=10).prop_flat_map(|(n, c)| {
            (
                proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, c), n),
                proptest::collection::vec(proptest::collection::vec(any::<bool>(), c), n),
            )
        })
    }

    proptest! {
        #[test]
        fn lwlrap_depends_only_on_ranks((scores, truth) in score_instance(), a in 0.1f64..3.0, b in -2.0f64..2.0) {
            prop_assume!(truth.iter().flatten().any(|&t| t));
            let base = lwlrap(&ScoreMatrix::new(scores.clone(), truth.clone()).unwrap()).unwrap();
            let warped: Vec<Vec<f64>> = scores
                .iter()
                .map(|r| r.iter().map(|&v| (a * v + b).exp()).collect())
                .collect();
            let got = lwlrap(&ScoreMatrix::new(warped, truth).unwrap()).unwrap();
            prop_assert!((base - got).abs() <= 1e-12);
        }

        #[test]
        fn lwlrap_is_order_invariant((scores, truth) in score_instance(), seed in any::<u64>()) {
            prop_assume!(truth.iter().flatten().any(|&t| t));
            let base = lwlrap(&ScoreMatrix::new(scores.clone(), truth.clone()).unwrap()).unwrap();
            let mut idx: Vec<usize> = (0..scores.len()).collect();
            rand::seq::SliceRandom::shuffle(idx.as_mut_slice(), &mut ChaCha8Rng::seed_from_u64(seed));
            let s2 = idx.iter().map(|&i| scores[i].clone()).collect();
            let t2 = idx.iter().map(|&i| truth[i].clone()).collect();
            let got = lwlrap(&ScoreMatrix::new(s2, t2).unwrap()).unwrap();
            prop_assert!((base - got).abs() <= 1e-12);
            prop_assert!((0.0..=1.0).contains(&got));
        }

        #[test]
        fn accuracy_is_order_invariant(rows in proptest::collection::vec((proptest::collection::vec(-1.0f64..1.0, 5), 0usize..5), 1..20), seed in any::<u64>()) {
            let (logits, truth): (Vec<_>, Vec<_>) = rows.iter().cloned().unzip();
            let base = accuracy(&logits, &truth).unwrap();
            let mut rows = rows;
            rand::seq::SliceRandom::shuffle(rows.as_mut_slice(), &mut ChaCha8Rng::seed_from_u64(seed));
            let (l2, t2): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
            prop_assert_eq!(base, accuracy(&l2, &t2).unwrap());
        }

        #[test]
        fn segment_scores_bounded_and_order_invariant(
            segs in proptest::collection::vec(
                (proptest::collection::vec(any::<bool>(), 4), proptest::collection::vec(any::<bool>(), 4)),
                1..12,
            ),
            seed in any::<u64>(),
        ) {
            // one frame per segment: segment order is frame order
            let build = |segs: &[(Vec<bool>, Vec<bool>)]| {
                let r: Vec<bool> = segs.iter().flat_map(|s| s.0.clone()).collect();
                let p: Vec<bool> = segs.iter().flat_map(|s| s.1.clone()).collect();
                let n = segs.len();
                sed_segment_metrics(
                    &SegmentRoll::new(n, 4, 1.0, r).unwrap(),
                    &SegmentRoll::new(n, 4, 1.0, p).unwrap(),
                    1.0,
                ).unwrap()
            };
            let m = build(&segs);
            prop_assert!((0.0..=1.0).contains(&m.f1));
            prop_assert!(m.er >= 0.0);
            let mut shuffled = segs.clone();
            rand::seq::SliceRandom::shuffle(shuffled.as_mut_slice(), &mut ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(m, build(&shuffled));
        }
    }
}
