//! Inter-annotator agreement and crowd-label aggregation.

use serde::{Deserialize, Serialize};

use crate::dataset::Label;
use crate::error::{Error, Result};

/// Per-item category counts `[#0, #1]`, every row summing to the same `r >= 2`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationMatrix {
    rows: Vec<[u32; 2]>,
    raters: u32,
}

impl AnnotationMatrix {
    pub fn from_counts(rows: Vec<[u32; 2]>) -> Result<Self> {
        let first = rows.first().ok_or(Error::Empty("annotation matrix"))?;
        let raters = first[0] + first[1];
        if raters < 2 {
            return Err(Error::invalid(format!(
                "agreement needs at least 2 annotators per item, got {raters}"
            )));
        }
        if let Some((i, r)) = rows
            .iter()
            .enumerate()
            .find(|(_, r)| r[0] + r[1] != raters)
        {
            return Err(Error::invalid(format!(
                "item {i} has {} annotations, expected {raters}",
                r[0] + r[1]
            )));
        }
        Ok(AnnotationMatrix { rows, raters })
    }

    /// One label list per item; all lists must have the same length.
    pub fn from_labels<I, R>(items: I) -> Result<Self>
    where
        I: IntoIterator<Item = R>,
        R: AsRef<[Label]>,
    {
        let rows = items
            .into_iter()
            .map(|labels| {
                let mut c = [0u32; 2];
                for l in labels.as_ref() {
                    c[l.as_u8() as usize] += 1;
                }
                c
            })
            .collect();
        Self::from_counts(rows)
    }

    pub fn rows(&self) -> &[[u32; 2]] {
        &self.rows
    }

    pub fn raters(&self) -> u32 {
        self.raters
    }

    pub fn items(&self) -> usize {
        self.rows.len()
    }

    /// Every annotation relabelled 0 <-> 1.
    pub fn swapped(&self) -> Self {
        AnnotationMatrix {
            rows: self.rows.iter().map(|r| [r[1], r[0]]).collect(),
            raters: self.raters,
        }
    }

    fn item_agreement(&self, row: &[u32; 2]) -> f64 {
        let r = self.raters as f64;
        let agreeing: f64 = row.iter().map(|&c| (c as f64) * (c as f64 - 1.0)).sum();
        agreeing / (r * (r - 1.0))
    }
}

/// Fleiss's kappa, or [`Kappa::Degenerate`] when chance agreement is 1
/// (every annotation falls in a single category).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Kappa {
    Value(f64),
    Degenerate,
}

impl Kappa {
    pub fn value(self) -> Option<f64> {
        match self {
            Kappa::Value(v) => Some(v),
            Kappa::Degenerate => None,
        }
    }
}

impl std::fmt::Display for Kappa {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Kappa::Value(v) => write!(f, "{v:.3}"),
            Kappa::Degenerate => f.write_str("n/a"),
        }
    }
}

pub fn fleiss_kappa(m: &AnnotationMatrix) -> Kappa {
    let total: u64 = m.rows.iter().map(|r| (r[0] + r[1]) as u64).sum();
    let ones: u64 = m.rows.iter().map(|r| r[1] as u64).sum();
    if ones == 0 || ones == total {
        return Kappa::Degenerate;
    }
    let p_bar = m.rows.iter().map(|r| m.item_agreement(r)).sum::<f64>() / m.items() as f64;
    let p1 = ones as f64 / total as f64;
    let p0 = 1.0 - p1;
    let p_e = p0 * p0 + p1 * p1;
    Kappa::Value((p_bar - p_e) / (1.0 - p_e))
}

/// Mean over items of the share of agreeing annotator pairs.
pub fn percent_agreement(m: &AnnotationMatrix) -> f64 {
    m.rows.iter().map(|r| m.item_agreement(r)).sum::<f64>() / m.items() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CrowdRule {
    /// Most frequent label; an even split resolves to 0.
    Majority,
    /// 0 if any annotator said 0.
    Strict,
}

pub fn aggregate_crowd(labels: &[Label], rule: CrowdRule) -> Result<Label> {
    if labels.is_empty() {
        return Err(Error::Empty("crowd labels"));
    }
    let ones = labels.iter().filter(|l| l.is_consistent()).count();
    let zeros = labels.len() - ones;
    Ok(match rule {
        CrowdRule::Strict => Label::from_bool(zeros == 0),
        CrowdRule::Majority => {
            if ones == zeros {
                tracing::warn!(annotators = labels.len(), "majority tie, resolving to 0");
            }
            Label::from_bool(ones > zeros)
        }
    })
}

/// One row of an agreement table: group, kappa, % agreement, #examples,
/// kappa on the LLM/original disagreement subset, #annotators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementRow {
    pub group: String,
    pub kappa: Kappa,
    pub percent_agreement: f64,
    pub examples: usize,
    pub kappa_disagreement_subset: Option<Kappa>,
    pub annotators: u32,
}

pub fn agreement_row(
    group: impl Into<String>,
    matrix: &AnnotationMatrix,
    disagreement_subset: Option<&AnnotationMatrix>,
) -> AgreementRow {
    AgreementRow {
        group: group.into(),
        kappa: fleiss_kappa(matrix),
        percent_agreement: 100.0 * percent_agreement(matrix),
        examples: matrix.items(),
        kappa_disagreement_subset: disagreement_subset.map(fleiss_kappa),
        annotators: matrix.raters(),
    }
}
