//! Overlap metrics (IoU, Dice, recall, precision, F2) and the symmetric
//! Hausdorff distance between binarized predictions and ground truth.
//!
//! Degenerate conventions: when both masks are empty every overlap metric is
//! 1 (vacuous agreement). Any ratio with an empty denominator otherwise
//! evaluates to 0. Hausdorff is undefined when either mask is empty and is
//! reported as `None`.

use crate::binary::BinaryMask;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    Iou,
    Dsc,
    Recall,
    Precision,
    F2,
    Hd,
}

impl Metric {
    pub const ALL: [Metric; 6] = [
        Metric::Iou,
        Metric::Dsc,
        Metric::Recall,
        Metric::Precision,
        Metric::F2,
        Metric::Hd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Iou => "iou",
            Metric::Dsc => "dsc",
            Metric::Recall => "recall",
            Metric::Precision => "precision",
            Metric::F2 => "f2",
            Metric::Hd => "hd",
        }
    }

    pub fn higher_is_better(self) -> bool {
        !matches!(self, Metric::Hd)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BinaryMaskPair<'a> {
    prediction: &'a BinaryMask,
    truth: &'a BinaryMask,
}

impl<'a> BinaryMaskPair<'a> {
    pub fn new(prediction: &'a BinaryMask, truth: &'a BinaryMask) -> Result<Self> {
        if prediction.height() != truth.height() || prediction.width() != truth.width() {
            return Err(Error::ShapeMismatch(format!(
                "prediction {}x{} vs truth {}x{}",
                prediction.height(),
                prediction.width(),
                truth.height(),
                truth.width()
            )));
        }
        Ok(BinaryMaskPair { prediction, truth })
    }

    pub fn prediction(&self) -> &BinaryMask {
        self.prediction
    }

    pub fn truth(&self) -> &BinaryMask {
        self.truth
    }

    pub fn swapped(&self) -> Self {
        BinaryMaskPair {
            prediction: self.truth,
            truth: self.prediction,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub intersection: usize,
    pub predicted: usize,
    pub truth: usize,
    pub union: usize,
}

pub fn confusion_counts(pair: &BinaryMaskPair<'_>) -> ConfusionCounts {
    let mut counts = ConfusionCounts {
        intersection: 0,
        predicted: 0,
        truth: 0,
        union: 0,
    };
    for (&p, &t) in pair.prediction.bits().iter().zip(pair.truth.bits()) {
        counts.intersection += (p && t) as usize;
        counts.predicted += p as usize;
        counts.truth += t as usize;
        counts.union += (p || t) as usize;
    }
    counts
}

impl ConfusionCounts {
    fn both_empty(&self) -> bool {
        self.union == 0
    }
}

fn ratio<T: Scalar>(num: usize, den: usize) -> T {
    if den == 0 {
        T::zero()
    } else {
        T::of_usize(num) / T::of_usize(den)
    }
}

fn iou_from<T: Scalar>(c: &ConfusionCounts) -> T {
    if c.both_empty() {
        return T::one();
    }
    ratio(c.intersection, c.union)
}

fn recall_from<T: Scalar>(c: &ConfusionCounts) -> T {
    if c.both_empty() {
        return T::one();
    }
    ratio(c.intersection, c.truth)
}

fn precision_from<T: Scalar>(c: &ConfusionCounts) -> T {
    if c.both_empty() {
        return T::one();
    }
    ratio(c.intersection, c.predicted)
}

/// `weight * P * R / (scale * P + R)`, zero when the denominator vanishes.
fn harmonic<T: Scalar>(p: T, r: T, weight: T, scale: T) -> T {
    let den = scale * p + r;
    if den == T::zero() {
        T::zero()
    } else {
        weight * p * r / den
    }
}

pub fn iou<T: Scalar>(pair: &BinaryMaskPair<'_>) -> T {
    iou_from(&confusion_counts(pair))
}

pub fn recall<T: Scalar>(pair: &BinaryMaskPair<'_>) -> T {
    recall_from(&confusion_counts(pair))
}

pub fn precision<T: Scalar>(pair: &BinaryMaskPair<'_>) -> T {
    precision_from(&confusion_counts(pair))
}

/// Dice coefficient `2PR / (P + R)`.
pub fn dsc<T: Scalar>(pair: &BinaryMaskPair<'_>) -> T {
    let c = confusion_counts(pair);
    harmonic(precision_from(&c), recall_from(&c), T::of(2.0), T::one())
}

/// `5PR / (4P + R)`.
pub fn f2<T: Scalar>(pair: &BinaryMaskPair<'_>) -> T {
    let c = confusion_counts(pair);
    harmonic(precision_from(&c), recall_from(&c), T::of(5.0), T::of(4.0))
}

/// Largest squared distance from a point of `from` to its nearest point in `to`.
///
/// Scans with early exit: once a point has a neighbour within the running
/// maximum it cannot raise it. The result is the exact brute-force value.
fn directed_sq(from: &[(usize, usize)], to: &[(usize, usize)]) -> u64 {
    let mut worst = 0u64;
    for &(ay, ax) in from {
        let mut nearest = u64::MAX;
        for &(by, bx) in to {
            let dy = ay.abs_diff(by) as u64;
            let dx = ax.abs_diff(bx) as u64;
            let d = dy * dy + dx * dx;
            if d < nearest {
                nearest = d;
                if nearest <= worst {
                    break;
                }
            }
        }
        worst = worst.max(nearest);
    }
    worst
}

/// Symmetric Hausdorff distance between foreground pixel sets, in pixels.
pub fn hausdorff<T: Scalar>(pair: &BinaryMaskPair<'_>) -> Result<T> {
    let a = pair.prediction.points();
    let b = pair.truth.points();
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("foreground set for Hausdorff distance"));
    }
    let sq = directed_sq(&a, &b).max(directed_sq(&b, &a));
    Ok(T::of(sq as f64).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsReport<T> {
    pub iou: T,
    pub dsc: T,
    pub recall: T,
    pub precision: T,
    pub f2: T,
    /// `None` when either foreground set was empty.
    pub hd: Option<T>,
}

impl<T: Scalar> MetricsReport<T> {
    pub fn evaluate(pair: &BinaryMaskPair<'_>) -> Self {
        let c = confusion_counts(pair);
        let (p, r) = (precision_from::<T>(&c), recall_from::<T>(&c));
        MetricsReport {
            iou: iou_from(&c),
            dsc: harmonic(p, r, T::of(2.0), T::one()),
            recall: r,
            precision: p,
            f2: harmonic(p, r, T::of(5.0), T::of(4.0)),
            hd: hausdorff(pair).ok(),
        }
    }

    pub fn get(&self, metric: Metric) -> Option<T> {
        match metric {
            Metric::Iou => Some(self.iou),
            Metric::Dsc => Some(self.dsc),
            Metric::Recall => Some(self.recall),
            Metric::Precision => Some(self.precision),
            Metric::F2 => Some(self.f2),
            Metric::Hd => self.hd,
        }
    }

    /// `(metric, value)` pairs in reporting order.
    pub fn fields(&self) -> [(Metric, Option<T>); 6] {
        Metric::ALL.map(|m| (m, self.get(m)))
    }

    pub fn is_empty_mask(&self) -> bool {
        self.hd.is_none()
    }
}

/// Averaged report plus how many inputs had no Hausdorff distance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AggregateReport<T> {
    pub mean: MetricsReport<T>,
    pub count: usize,
    pub empty_hd: usize,
}

/// Arithmetic mean of each metric; with `weights`, the weighted mean.
/// Hausdorff averages only over reports that have one.
pub fn aggregate_report<T: Scalar>(
    reports: &[MetricsReport<T>],
    weights: Option<&[T]>,
) -> Result<AggregateReport<T>> {
    if reports.is_empty() {
        return Err(Error::Empty("metrics report list"));
    }
    let weights: Vec<T> = match weights {
        Some(w) if w.len() != reports.len() => {
            return Err(Error::DimensionMismatch {
                expected: reports.len(),
                got: w.len(),
            })
        }
        Some(w) => {
            if w.iter().any(|x| !(*x >= T::zero())) {
                return Err(Error::invalid("weights", "must be non-negative"));
            }
            w.to_vec()
        }
        None => vec![T::one(); reports.len()],
    };
    let total: T = weights.iter().copied().sum();
    if total <= T::zero() {
        return Err(Error::invalid("weights", "sum to zero"));
    }
    let mean_of = |f: &dyn Fn(&MetricsReport<T>) -> T| -> T {
        reports.iter().zip(&weights).map(|(r, w)| f(r) * *w).sum::<T>() / total
    };
    let (hd_sum, hd_weight) = reports
        .iter()
        .zip(&weights)
        .filter_map(|(r, w)| r.hd.map(|hd| (hd * *w, *w)))
        .fold((T::zero(), T::zero()), |(s, n), (x, w)| (s + x, n + w));
    let empty_hd = reports.iter().filter(|r| r.hd.is_none()).count();
    Ok(AggregateReport {
        mean: MetricsReport {
            iou: mean_of(&|r| r.iou),
            dsc: mean_of(&|r| r.dsc),
            recall: mean_of(&|r| r.recall),
            precision: mean_of(&|r| r.precision),
            f2: mean_of(&|r| r.f2),
            hd: (hd_weight > T::zero()).then(|| hd_sum / hd_weight),
        },
        count: reports.len(),
        empty_hd,
    })
}
