//! Affine constraint sets `A x <= b` built from typed descriptors.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::LinearProblem;

#[derive(Debug, Clone, PartialEq)]
pub enum Descriptor {
    /// `x_i >= 0`
    NonNegative(usize),
    /// `lo <= x_i <= hi`; infinite bounds emit no row.
    Box { index: usize, lo: f64, hi: f64 },
    /// `x_i = value`, as the pair `x_i <= value`, `-x_i <= -value`.
    FixEqual { index: usize, value: f64 },
    /// `row^T x <= bound`
    General { row: DVector<f64>, bound: f64 },
}

impl Descriptor {
    fn index(&self) -> Option<usize> {
        match self {
            Descriptor::NonNegative(i) => Some(*i),
            Descriptor::Box { index, .. } | Descriptor::FixEqual { index, .. } => Some(*index),
            Descriptor::General { .. } => None,
        }
    }

    /// Rows as `(coefficients, bound)`.
    fn expand(&self, p: usize) -> Vec<(DVector<f64>, f64)> {
        let unit = |i: usize, s: f64| DVector::from_fn(p, |j, _| if j == i { s } else { 0.0 });
        match self {
            Descriptor::NonNegative(i) => vec![(unit(*i, -1.0), 0.0)],
            Descriptor::Box { index, lo, hi } => {
                let mut rows = Vec::new();
                if lo.is_finite() {
                    rows.push((unit(*index, -1.0), -lo));
                }
                if hi.is_finite() {
                    rows.push((unit(*index, 1.0), *hi));
                }
                rows
            }
            Descriptor::FixEqual { index, value } => vec![
                (unit(*index, 1.0), *value),
                (unit(*index, -1.0), -value),
            ],
            Descriptor::General { row, bound } => vec![(row.clone(), *bound)],
        }
    }
}

/// The polyhedron `{x : A x <= b}` together with the descriptors it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSet {
    p: usize,
    a: DMatrix<f64>,
    b: DVector<f64>,
    descriptors: Vec<Descriptor>,
}

impl ConstraintSet {
    pub fn empty(p: usize) -> Self {
        ConstraintSet {
            p,
            a: DMatrix::zeros(0, p),
            b: DVector::zeros(0),
            descriptors: Vec::new(),
        }
    }

    pub fn from_descriptors(p: usize, descriptors: Vec<Descriptor>) -> Result<Self> {
        let mut set = Self::empty(p);
        for d in descriptors {
            set = set.with(d)?;
        }
        Ok(set)
    }

    /// Raw `A x <= b` rows, each recorded as a general descriptor.
    pub fn from_matrix(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        if a.nrows() != b.len() {
            return Err(Error::dim("b", a.nrows(), b.len()));
        }
        let p = a.ncols();
        let descriptors = (0..a.nrows())
            .map(|i| Descriptor::General {
                row: a.row(i).transpose(),
                bound: b[i],
            })
            .collect();
        Self::from_descriptors(p, descriptors)
    }

    /// Copy with one more descriptor appended.
    pub fn with(mut self, d: Descriptor) -> Result<Self> {
        if let Some(i) = d.index() {
            if i >= self.p {
                return Err(Error::invalid("constraints", format!("index {i} out of range for p = {}", self.p)));
            }
        }
        match &d {
            Descriptor::Box { lo, hi, .. } if lo.is_nan() || hi.is_nan() || lo > hi => {
                return Err(Error::invalid("constraints", format!("box [{lo}, {hi}] is empty or undefined")));
            }
            Descriptor::FixEqual { value, .. } if !value.is_finite() => {
                return Err(Error::invalid("constraints", "fixed value must be finite"));
            }
            Descriptor::General { row, bound } => {
                if row.len() != self.p {
                    return Err(Error::dim("constraints.row", self.p, row.len()));
                }
                if row.iter().any(|v| !v.is_finite()) || bound.is_nan() {
                    return Err(Error::invalid("constraints", "general row must be finite"));
                }
            }
            _ => {}
        }
        let rows = d.expand(self.p);
        let q0 = self.a.nrows();
        let q = q0 + rows.len();
        let mut a = self.a.clone().resize_vertically(q, 0.0);
        let mut b = self.b.clone().resize_vertically(q, 0.0);
        for (r, (coef, bound)) in rows.into_iter().enumerate() {
            a.row_mut(q0 + r).copy_from(&coef.transpose());
            b[q0 + r] = bound;
        }
        self.a = a;
        self.b = b;
        self.descriptors.push(d);
        Ok(self)
    }

    pub fn extend(self, ds: impl IntoIterator<Item = Descriptor>) -> Result<Self> {
        ds.into_iter().try_fold(self, |s, d| s.with(d))
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// Number of expanded rows.
    pub fn q(&self) -> usize {
        self.a.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.q() == 0
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn descriptors(&self) -> &[Descriptor] {
        &self.descriptors
    }

    /// `max_i (A x - b)_i`, or `-inf` without rows.
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        (&self.a * x - &self.b).iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v))
    }

    /// Lower and upper bounds implied for each coordinate by box-type
    /// descriptors (general rows are ignored).
    pub fn coordinate_bounds(&self) -> Vec<(f64, f64)> {
        let mut out = vec![(f64::NEG_INFINITY, f64::INFINITY); self.p];
        for d in &self.descriptors {
            match *d {
                Descriptor::NonNegative(i) => out[i].0 = out[i].0.max(0.0),
                Descriptor::Box { index, lo, hi } => {
                    out[index].0 = out[index].0.max(lo);
                    out[index].1 = out[index].1.min(hi);
                }
                Descriptor::FixEqual { index, value } => {
                    out[index].0 = out[index].0.max(value);
                    out[index].1 = out[index].1.min(value);
                }
                Descriptor::General { .. } => {}
            }
        }
        out
    }

    /// Whether every row comes from a coordinate-wise descriptor.
    pub fn is_coordinatewise(&self) -> bool {
        !self.descriptors.iter().any(|d| matches!(d, Descriptor::General { .. }))
    }
}

// ---------------------------------------------------------------------------
// Interchange format

/// A state element referenced by label, by `x{k}` (1-based) or by 0-based
/// integer position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum IndexRef {
    Position(usize),
    Name(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RowRef {
    Dense(Vec<f64>),
    Sparse(BTreeMap<String, f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DescriptorFile {
    NonNegative {
        index: IndexRef,
    },
    Box {
        index: IndexRef,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lo: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        hi: Option<f64>,
    },
    FixEqual {
        index: IndexRef,
        value: f64,
    },
    General {
        row: RowRef,
        bound: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ConstraintFile {
    pub constraints: Vec<DescriptorFile>,
}

fn resolve(problem: &LinearProblem, r: &IndexRef) -> Result<usize> {
    match r {
        IndexRef::Position(i) if *i < problem.p() => Ok(*i),
        IndexRef::Position(i) => Err(Error::invalid("constraints.index", format!("{i} out of range for p = {}", problem.p()))),
        IndexRef::Name(s) => problem
            .index_of(s)
            .ok_or_else(|| Error::invalid("constraints.index", format!("unknown state element `{s}`"))),
    }
}

impl ConstraintFile {
    pub fn from_set(set: &ConstraintSet, problem: &LinearProblem) -> Self {
        let name = |i: usize| IndexRef::Name(problem.label(i));
        let constraints = set
            .descriptors()
            .iter()
            .map(|d| match d {
                Descriptor::NonNegative(i) => DescriptorFile::NonNegative { index: name(*i) },
                Descriptor::Box { index, lo, hi } => DescriptorFile::Box {
                    index: name(*index),
                    lo: lo.is_finite().then_some(*lo),
                    hi: hi.is_finite().then_some(*hi),
                },
                Descriptor::FixEqual { index, value } => DescriptorFile::FixEqual {
                    index: name(*index),
                    value: *value,
                },
                Descriptor::General { row, bound } => DescriptorFile::General {
                    row: RowRef::Dense(row.iter().copied().collect()),
                    bound: *bound,
                },
            })
            .collect();
        ConstraintFile { constraints }
    }

    pub fn into_set(self, problem: &LinearProblem) -> Result<ConstraintSet> {
        let p = problem.p();
        let mut out = Vec::with_capacity(self.constraints.len());
        for d in self.constraints {
            out.push(match d {
                DescriptorFile::NonNegative { index } => Descriptor::NonNegative(resolve(problem, &index)?),
                DescriptorFile::Box { index, lo, hi } => Descriptor::Box {
                    index: resolve(problem, &index)?,
                    lo: lo.unwrap_or(f64::NEG_INFINITY),
                    hi: hi.unwrap_or(f64::INFINITY),
                },
                DescriptorFile::FixEqual { index, value } => Descriptor::FixEqual {
                    index: resolve(problem, &index)?,
                    value,
                },
                DescriptorFile::General { row, bound } => {
                    let row = match row {
                        RowRef::Dense(v) => {
                            if v.len() != p {
                                return Err(Error::dim("constraints.row", p, v.len()));
                            }
                            DVector::from_vec(v)
                        }
                        RowRef::Sparse(m) => {
                            let mut v = DVector::zeros(p);
                            for (k, c) in m {
                                v[resolve(problem, &IndexRef::Name(k))?] += c;
                            }
                            v
                        }
                    };
                    Descriptor::General { row, bound }
                }
            });
        }
        ConstraintSet::from_descriptors(p, out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::NoiseCovariance;

    fn problem() -> LinearProblem {
        LinearProblem::with_labels(
            DMatrix::identity(3, 3),
            NoiseCovariance::identity(3),
            DVector::from_element(3, 1.0),
            Some(vec!["a".into(), "b".into(), "c".into()]),
        )
        .unwrap()
    }

    #[test]
    fn expansion_row_counts() {
        let s = ConstraintSet::from_descriptors(
            3,
            vec![
                Descriptor::NonNegative(0),
                Descriptor::Box { index: 1, lo: -1.0, hi: 2.0 },
                Descriptor::Box { index: 2, lo: f64::NEG_INFINITY, hi: 5.0 },
                Descriptor::FixEqual { index: 2, value: 3.0 },
            ],
        )
        .unwrap();
        assert_eq!(s.q(), 6);
        assert_eq!(s.b().as_slice(), &[0.0, 1.0, 2.0, 5.0, 3.0, -3.0]);
        assert_eq!(s.a()[(4, 2)], 1.0);
        assert_eq!(s.a()[(5, 2)], -1.0);
        let x = DVector::from_vec(vec![0.5, 0.0, 3.0]);
        assert!(s.max_violation(&x) <= 0.0);
    }

    #[test]
    fn rejects_bad_descriptors() {
        assert!(ConstraintSet::empty(2).with(Descriptor::NonNegative(2)).is_err());
        assert!(ConstraintSet::empty(2)
            .with(Descriptor::Box { index: 0, lo: 1.0, hi: 0.0 })
            .is_err());
    }

    #[test]
    fn file_uses_labels() {
        let f: ConstraintFile = serde_json::from_str(
            r#"{"constraints":[
                {"type":"non_negative","index":"a"},
                {"type":"box","index":"x2","lo":0,"hi":1},
                {"type":"fix_equal","index":2,"value":4},
                {"type":"general","row":{"a":1,"c":-1},"bound":0.5}
            ]}"#,
        )
        .unwrap();
        let p = problem();
        let s = f.into_set(&p).unwrap();
        assert_eq!(s.q(), 6);
        assert_eq!(s.a().row(5).iter().copied().collect::<Vec<_>>(), vec![1.0, 0.0, -1.0]);
        let back = ConstraintFile::from_set(&s, &p);
        assert_eq!(back.into_set(&p).unwrap(), s);

        let bad: ConstraintFile = serde_json::from_str(r#"{"constraints":[{"type":"non_negative","index":"zz"}]}"#).unwrap();
        assert!(bad.into_set(&p).unwrap_err().to_string().contains("zz"));
    }
}
