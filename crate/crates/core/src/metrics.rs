//! Reliability metrics over the correct/incorrect x certain/uncertain
//! taxonomy, plus per-class IoU.
//!
//! An "uncertain" pixel is a positive: TP = incorrect and uncertain,
//! FP = correct and uncertain, TN = correct and certain, FN = incorrect and
//! certain. Ratios with an empty denominator are reported as `NaN` with a
//! logged warning.

use std::fmt::Write as _;
use std::ops::{Add, AddAssign};

use log::warn;

use crate::error::{Error, Result};
use crate::image::LabelMap;
use crate::uncertainty::CertaintyMask;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct ReliabilityCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ReliabilityCounts {
    pub fn new(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        Self { tp, fp, tn, fn_ }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

impl Add for ReliabilityCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self::new(self.tp + o.tp, self.fp + o.fp, self.tn + o.tn, self.fn_ + o.fn_)
    }
}

impl AddAssign for ReliabilityCounts {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

fn check_shapes(a: (usize, usize), b: (usize, usize), what: &str) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("{what}: {a:?} vs {b:?}")));
    }
    Ok(())
}

pub fn confusion(pred: &LabelMap, truth: &LabelMap, mask: &CertaintyMask) -> Result<ReliabilityCounts> {
    check_shapes(pred.shape(), truth.shape(), "prediction vs truth")?;
    check_shapes(pred.shape(), mask.shape(), "prediction vs certainty mask")?;
    let mut c = ReliabilityCounts::default();
    for ((p, t), &certain) in pred.labels().iter().zip(truth.labels()).zip(mask.certain()) {
        match (p == t, certain) {
            (false, false) => c.tp += 1,
            (true, false) => c.fp += 1,
            (true, true) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

fn ratio(num: u64, den: u64, what: &str) -> f64 {
    if den == 0 {
        warn!("{what} undefined: empty denominator");
        f64::NAN
    } else {
        num as f64 / den as f64
    }
}

/// P(correct | certain) = TN / (TN + FN).
pub fn npv(c: &ReliabilityCounts) -> f64 {
    ratio(c.tn, c.tn + c.fn_, "NPV")
}

/// P(uncertain | incorrect) = TP / (TP + FN).
pub fn tpr(c: &ReliabilityCounts) -> f64 {
    ratio(c.tp, c.tp + c.fn_, "TPR")
}

/// (TP + TN) / total.
pub fn ua(c: &ReliabilityCounts) -> f64 {
    ratio(c.tp + c.tn, c.total(), "UA")
}

/// Per-class intersection and union pixel counts, additive across images.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IouCounts {
    pub intersection: Vec<u64>,
    pub union: Vec<u64>,
}

impl IouCounts {
    pub fn zeros(classes: usize) -> Self {
        Self {
            intersection: vec![0; classes],
            union: vec![0; classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.intersection.len()
    }

    pub fn merge(&mut self, other: &IouCounts) {
        for (a, b) in self.intersection.iter_mut().zip(&other.intersection) {
            *a += b;
        }
        for (a, b) in self.union.iter_mut().zip(&other.union) {
            *a += b;
        }
    }

    /// Per-class IoU; `None` for classes absent from both maps.
    pub fn per_class(&self) -> Vec<Option<f64>> {
        self.intersection
            .iter()
            .zip(&self.union)
            .map(|(&i, &u)| (u > 0).then(|| i as f64 / u as f64))
            .collect()
    }

    /// Mean over classes present in at least one of the maps.
    pub fn mean(&self) -> f64 {
        let present: Vec<f64> = self.per_class().into_iter().flatten().collect();
        if present.is_empty() {
            f64::NAN
        } else {
            present.iter().sum::<f64>() / present.len() as f64
        }
    }
}

pub fn iou_counts(pred: &LabelMap, truth: &LabelMap, classes: usize) -> Result<IouCounts> {
    check_shapes(pred.shape(), truth.shape(), "prediction vs truth")?;
    let mut out = IouCounts::zeros(classes);
    for (&p, &t) in pred.labels().iter().zip(truth.labels()) {
        let (p, t) = (usize::from(p), usize::from(t));
        if p >= classes || t >= classes {
            return Err(Error::Shape(format!("label beyond {classes} classes")));
        }
        if p == t {
            out.intersection[p] += 1;
            out.union[p] += 1;
        } else {
            out.union[p] += 1;
            out.union[t] += 1;
        }
    }
    Ok(out)
}

pub fn iou(pred: &LabelMap, truth: &LabelMap, classes: usize) -> Result<(Vec<Option<f64>>, f64)> {
    let c = iou_counts(pred, truth, classes)?;
    Ok((c.per_class(), c.mean()))
}

/// Reliability metrics and IoU computed from pooled counts.
#[derive(Debug, Clone, PartialEq)]
pub struct ReliabilityReport {
    pub counts: ReliabilityCounts,
    pub iou_counts: IouCounts,
    pub npv: f64,
    pub tpr: f64,
    pub ua: f64,
    pub iou_per_class: Vec<Option<f64>>,
    pub mean_iou: f64,
}

impl ReliabilityReport {
    pub fn from_counts(counts: ReliabilityCounts, iou_counts: IouCounts) -> Self {
        Self {
            npv: npv(&counts),
            tpr: tpr(&counts),
            ua: ua(&counts),
            iou_per_class: iou_counts.per_class(),
            mean_iou: iou_counts.mean(),
            counts,
            iou_counts,
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("REPORT1\n");
        let c = &self.counts;
        let _ = writeln!(s, "tp={}\nfp={}\ntn={}\nfn={}", c.tp, c.fp, c.tn, c.fn_);
        let join = |v: &[u64]| v.iter().map(u64::to_string).collect::<Vec<_>>().join(",");
        let _ = writeln!(s, "intersection={}", join(&self.iou_counts.intersection));
        let _ = writeln!(s, "union={}", join(&self.iou_counts.union));
        let _ = writeln!(s, "npv={}\ntpr={}\nua={}", self.npv, self.tpr, self.ua);
        let per: Vec<String> = self
            .iou_per_class
            .iter()
            .map(|v| v.map_or_else(|| "nan".to_string(), |x| x.to_string()))
            .collect();
        let _ = writeln!(s, "iou_per_class={}", per.join(","));
        let _ = writeln!(s, "mean_iou={}", self.mean_iou);
        s
    }

    /// Parses [`to_text`](Self::to_text) output, recomputing every metric
    /// from the stored counts.
    pub fn from_text(text: &str) -> std::result::Result<Self, String> {
        let mut lines = text.lines();
        if lines.next() != Some("REPORT1") {
            return Err("missing REPORT1 magic".into());
        }
        let mut get = std::collections::HashMap::new();
        for line in lines {
            if let Some((k, v)) = line.split_once('=') {
                get.insert(k.trim(), v.trim());
            }
        }
        let num = |k: &str| -> std::result::Result<u64, String> {
            get.get(k)
                .ok_or_else(|| format!("missing key {k}"))?
                .parse()
                .map_err(|e| format!("{k}: {e}"))
        };
        let list = |k: &str| -> std::result::Result<Vec<u64>, String> {
            let raw = get.get(k).ok_or_else(|| format!("missing key {k}"))?;
            if raw.is_empty() {
                return Ok(Vec::new());
            }
            raw.split(',')
                .map(|v| v.parse().map_err(|e| format!("{k}: {e}")))
                .collect()
        };
        let counts = ReliabilityCounts::new(num("tp")?, num("fp")?, num("tn")?, num("fn")?);
        let iou_counts = IouCounts {
            intersection: list("intersection")?,
            union: list("union")?,
        };
        if iou_counts.intersection.len() != iou_counts.union.len() {
            return Err("intersection/union length mismatch".into());
        }
        Ok(Self::from_counts(counts, iou_counts))
    }
}

/// Mean and sample standard deviation, ignoring NaN entries.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
