//! Output comparison, divergence localization and clustering.
//!
//! Tensors are compared elementwise with `|a - b| <= atol + rtol * |b|`,
//! where `b` is always the reference side. Non-finite values are compared
//! by class first: NaN matches NaN and each infinity matches itself, and a
//! class mismatch diverges regardless of tolerance.

mod cluster;
mod localize;
mod summary;

use std::borrow::Cow;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::graph::{Buffer, Tensor, TensorSpec};

pub use cluster::{cluster, Cluster, ClusterKey};
pub use localize::{
    compare_traces, localize, output_label, Category, ChainStep, DivergenceReport, FailureSite,
    LocalizeError, NodeComparison, OutputVerdict, RunLabel, Verdict,
};
pub use summary::{
    failure_labels, pair_label, summarize_campaign, summarize_parts, CampaignSummary,
    ClusterSummary, PairTally,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToleranceConfig {
    pub atol: f64,
    pub rtol: f64,
}

impl Default for ToleranceConfig {
    fn default() -> Self {
        ToleranceConfig {
            atol: 5e-4,
            rtol: 1e-4,
        }
    }
}

impl ToleranceConfig {
    /// Parses `atol=5e-4,rtol=1e-4`; either key may be omitted.
    pub fn parse(s: &str) -> Result<Self, String> {
        let mut tol = ToleranceConfig::default();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| format!("expected key=value, got `{part}`"))?;
            let v: f64 = v.trim().parse().map_err(|e| format!("{k}: {e}"))?;
            match k.trim() {
                "atol" => tol.atol = v,
                "rtol" => tol.rtol = v,
                other => return Err(format!("unknown tolerance key `{other}`")),
            }
        }
        tol.check()?;
        Ok(tol)
    }

    pub fn check(&self) -> Result<(), String> {
        if self.atol >= 0.0 && self.rtol >= 0.0 && self.atol.is_finite() && self.rtol.is_finite() {
            Ok(())
        } else {
            Err(format!(
                "tolerances must be finite and >= 0, got atol={} rtol={}",
                self.atol, self.rtol
            ))
        }
    }

    pub fn bound(&self, reference: f64) -> f64 {
        self.atol + self.rtol * reference.abs()
    }
}

/// What kind of difference a divergence is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DivergenceClass {
    /// Finite values further apart than the tolerance.
    Numeric,
    /// A NaN or infinity on one side only, or differing infinities.
    ExceptionalClass,
    /// Different shapes or dtypes.
    Shape,
    /// The two runs failed differently.
    FailureKind,
}

impl fmt::Display for DivergenceClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DivergenceClass::Numeric => "Numeric",
            DivergenceClass::ExceptionalClass => "ExceptionalClass",
            DivergenceClass::Shape => "Shape",
            DivergenceClass::FailureKind => "FailureKind",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Comparison {
    Equivalent,
    /// First offending flat index with its distance and the allowed bound.
    /// Class mismatches report an infinite distance.
    Divergent {
        index: usize,
        diff: f64,
        bound: f64,
        class: DivergenceClass,
    },
    ShapeMismatch {
        a: TensorSpec,
        b: TensorSpec,
    },
}

impl Comparison {
    pub fn is_equivalent(&self) -> bool {
        matches!(self, Comparison::Equivalent)
    }

    pub fn class(&self) -> Option<DivergenceClass> {
        match self {
            Comparison::Equivalent => None,
            Comparison::Divergent { class, .. } => Some(*class),
            Comparison::ShapeMismatch { .. } => Some(DivergenceClass::Shape),
        }
    }
}

/// Value class of one element.
#[derive(PartialEq)]
enum Class {
    Finite,
    Nan,
    PosInf,
    NegInf,
}

fn class_of(x: f64) -> Class {
    if x.is_nan() {
        Class::Nan
    } else if x == f64::INFINITY {
        Class::PosInf
    } else if x == f64::NEG_INFINITY {
        Class::NegInf
    } else {
        Class::Finite
    }
}

/// Distance between two elements. Integers are subtracted exactly.
fn element_distance(a: &Buffer, b: &Buffer, i: usize) -> ElementDiff {
    if let (Some(x), Some(y)) = (a.get_i64(i), b.get_i64(i)) {
        let d = (i128::from(x) - i128::from(y)).unsigned_abs() as f64;
        return ElementDiff::Finite {
            diff: d,
            reference: y as f64,
        };
    }
    let (x, y) = (a.get_f64(i), b.get_f64(i));
    match (class_of(x), class_of(y)) {
        (Class::Finite, Class::Finite) => ElementDiff::Finite {
            diff: (x - y).abs(),
            reference: y,
        },
        (cx, cy) if cx == cy => ElementDiff::SameClass,
        _ => ElementDiff::ClassMismatch,
    }
}

enum ElementDiff {
    Finite { diff: f64, reference: f64 },
    SameClass,
    ClassMismatch,
}

/// Storage in row-major element order, so strided layouts compare by
/// logical position.
fn logical(t: &Tensor) -> Cow<'_, Tensor> {
    if t.is_contiguous() {
        Cow::Borrowed(t)
    } else {
        Cow::Owned(t.to_contiguous())
    }
}

/// Compares candidate `a` against reference `b`.
pub fn compare_tensors(a: &Tensor, b: &Tensor, tol: &ToleranceConfig) -> Comparison {
    if !a.spec().same_value_type(b.spec()) {
        return Comparison::ShapeMismatch {
            a: a.spec().clone(),
            b: b.spec().clone(),
        };
    }
    let (a, b) = (logical(a), logical(b));
    let (da, db) = (a.data(), b.data());
    for i in 0..da.len() {
        match element_distance(da, db, i) {
            ElementDiff::SameClass => {}
            ElementDiff::ClassMismatch => {
                return Comparison::Divergent {
                    index: i,
                    diff: f64::INFINITY,
                    bound: tol.bound(db.get_f64(i)),
                    class: DivergenceClass::ExceptionalClass,
                }
            }
            ElementDiff::Finite { diff, reference } => {
                let bound = tol.bound(reference);
                // Written so that a NaN bound (never produced for finite
                // references) could not count as agreement.
                if !(diff <= bound) {
                    return Comparison::Divergent {
                        index: i,
                        diff,
                        bound,
                        class: DivergenceClass::Numeric,
                    };
                }
            }
        }
    }
    Comparison::Equivalent
}

/// Mean absolute distance. Class mismatches count as distance 1, matching
/// non-finite classes as 0; tensors of different shape are at distance 1.
pub fn mad(a: &Tensor, b: &Tensor) -> f64 {
    if !a.spec().same_value_type(b.spec()) {
        return 1.0;
    }
    let n = a.len();
    if n == 0 {
        return 0.0;
    }
    let (a, b) = (logical(a), logical(b));
    let (da, db) = (a.data(), b.data());
    let total: f64 = (0..n)
        .map(|i| match element_distance(da, db, i) {
            ElementDiff::Finite { diff, .. } => diff.min(f64::MAX) / n as f64,
            ElementDiff::SameClass => 0.0,
            ElementDiff::ClassMismatch => 1.0 / n as f64,
        })
        .sum();
    total.min(f64::MAX)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> Tensor {
        Tensor::from_f64([v.len()], v.to_vec()).unwrap()
    }

    fn cmp(a: f64, b: f64) -> Comparison {
        compare_tensors(&t(&[a]), &t(&[b]), &ToleranceConfig::default())
    }

    #[test]
    fn within_tolerance_is_equivalent() {
        // 4e-4 <= 5e-4 + 1e-4 * 1.0004
        assert_eq!(cmp(1.0, 1.0004), Comparison::Equivalent);
        assert_eq!(cmp(0.0, 0.0), Comparison::Equivalent);
    }

    #[test]
    fn beyond_tolerance_diverges() {
        let Comparison::Divergent {
            index,
            diff,
            bound,
            class,
        } = cmp(1.0, 1.001)
        else {
            panic!("expected divergence");
        };
        assert_eq!(index, 0);
        assert!((diff - 1e-3).abs() < 1e-12);
        assert!((bound - (5e-4 + 1e-4 * 1.001)).abs() < 1e-15);
        assert_eq!(class, DivergenceClass::Numeric);
    }

    #[test]
    fn exceptional_classes() {
        assert_eq!(cmp(f64::NAN, f64::NAN), Comparison::Equivalent);
        assert_eq!(cmp(f64::INFINITY, f64::INFINITY), Comparison::Equivalent);
        assert_eq!(
            cmp(f64::NAN, 0.0).class(),
            Some(DivergenceClass::ExceptionalClass)
        );
        assert_eq!(
            cmp(f64::INFINITY, f64::NEG_INFINITY).class(),
            Some(DivergenceClass::ExceptionalClass)
        );
    }

    #[test]
    fn reference_side_sets_the_bound() {
        // |a - b| = 1.00055. With b = 10001.00055 the bound is about
        // 1.0006, with b = 10000 it is 1.0005: the formula is not symmetric.
        let (a, b) = (10000.0, 10001.00055);
        assert!(cmp(a, b).is_equivalent());
        assert!(!cmp(b, a).is_equivalent());
    }

    #[test]
    fn shapes_must_match() {
        let c = compare_tensors(&t(&[1.0, 2.0]), &t(&[1.0]), &ToleranceConfig::default());
        assert_eq!(c.class(), Some(DivergenceClass::Shape));
    }

    #[test]
    fn integers_compare_exactly() {
        let a = Tensor::from_i64([1], vec![i64::MAX]).unwrap();
        let b = Tensor::from_i64([1], vec![i64::MAX - 1]).unwrap();
        // 1 > 5e-4 + 1e-4 * 9.2e18 is false: the relative bound dominates.
        assert!(compare_tensors(&a, &b, &ToleranceConfig::default()).is_equivalent());
        let tight = ToleranceConfig {
            atol: 0.0,
            rtol: 0.0,
        };
        assert!(!compare_tensors(&a, &b, &tight).is_equivalent());
    }

    #[test]
    fn mad_uses_unit_distance_for_class_mismatch() {
        assert_eq!(mad(&t(&[f64::NAN, 1.0]), &t(&[0.0, 1.5])), 0.75);
        assert_eq!(mad(&t(&[f64::NAN]), &t(&[f64::NAN])), 0.0);
    }

    #[test]
    fn tolerance_strings_parse() {
        let tol = ToleranceConfig::parse("atol=1e-3, rtol=0").unwrap();
        assert_eq!(
            tol,
            ToleranceConfig {
                atol: 1e-3,
                rtol: 0.0
            }
        );
        assert!(ToleranceConfig::parse("atol=-1").is_err());
        assert!(ToleranceConfig::parse("eps=1").is_err());
    }
}
