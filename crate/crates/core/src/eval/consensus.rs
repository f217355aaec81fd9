use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Points × labelers matrix of crop (`true`) / non-crop votes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMatrix {
    labelers: Vec<String>,
    point_ids: Vec<String>,
    rows: Vec<Vec<bool>>,
}

impl LabelMatrix {
    pub fn new(labelers: Vec<String>, point_ids: Vec<String>, rows: Vec<Vec<bool>>) -> Result<Self> {
        if labelers.len() < 2 {
            return Err(Error::Precondition("a label matrix needs at least two labelers".into()));
        }
        if point_ids.len() != rows.len() {
            return Err(Error::Dimension {
                context: "label matrix points",
                expected: point_ids.len(),
                found: rows.len(),
            });
        }
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != labelers.len()) {
            return Err(Error::Precondition(format!(
                "point {} has {} labels, expected {}",
                point_ids[i],
                r.len(),
                labelers.len()
            )));
        }
        Ok(Self { labelers, point_ids, rows })
    }

    pub fn labelers(&self) -> &[String] {
        &self.labelers
    }

    pub fn point_ids(&self) -> &[String] {
        &self.point_ids
    }

    pub fn rows(&self) -> &[Vec<bool>] {
        &self.rows
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Consensus {
    Crop,
    NonCrop,
    Discarded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusSummary {
    pub labels: Vec<Consensus>,
    pub crop: usize,
    pub noncrop: usize,
    pub discarded: usize,
}

/// Strict majority per point; an exact tie discards the point.
pub fn consensus_vote(matrix: &LabelMatrix) -> ConsensusSummary {
    let n = matrix.labelers.len();
    let labels: Vec<Consensus> = matrix
        .rows
        .iter()
        .map(|row| {
            let crop = row.iter().filter(|&&v| v).count();
            if 2 * crop > n {
                Consensus::Crop
            } else if 2 * crop < n {
                Consensus::NonCrop
            } else {
                Consensus::Discarded
            }
        })
        .collect();
    let count = |c| labels.iter().filter(|&&l| l == c).count();
    ConsensusSummary {
        crop: count(Consensus::Crop),
        noncrop: count(Consensus::NonCrop),
        discarded: count(Consensus::Discarded),
        labels,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairAgreement {
    pub first: String,
    pub second: String,
    pub agreed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub n_points: usize,
    /// Pairs `(i, j)` with `i < j` in labeler order.
    pub pairs: Vec<PairAgreement>,
    pub unanimous: usize,
}

pub fn pairwise_agreement(matrix: &LabelMatrix) -> AgreementReport {
    let n = matrix.labelers.len();
    let mut pairs = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            pairs.push(PairAgreement {
                first: matrix.labelers[i].clone(),
                second: matrix.labelers[j].clone(),
                agreed: matrix.rows.iter().filter(|r| r[i] == r[j]).count(),
            });
        }
    }
    let unanimous = matrix.rows.iter().filter(|r| r.iter().all(|&v| v == r[0])).count();
    AgreementReport { n_points: matrix.rows.len(), pairs, unanimous }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn matrix(rows: Vec<Vec<bool>>) -> LabelMatrix {
        let k = rows[0].len();
        LabelMatrix::new(
            (0..k).map(|i| format!("L{i}")).collect(),
            (0..rows.len()).map(|i| i.to_string()).collect(),
            rows,
        )
        .unwrap()
    }

    #[test]
    fn majority_and_ties() {
        let m = matrix(vec![
            vec![true, true, true, false],
            vec![true, true, false, false],
            vec![false, false, false, true],
        ]);
        let s = consensus_vote(&m);
        assert_eq!(s.labels, [Consensus::Crop, Consensus::Discarded, Consensus::NonCrop]);
        assert_eq!((s.crop, s.noncrop, s.discarded), (1, 1, 1));
    }

    #[test]
    fn odd_panels_never_tie() {
        let rows: Vec<Vec<bool>> =
            (0..8u8).map(|b| (0..3).map(|k| b >> k & 1 == 1).collect()).collect();
        assert_eq!(consensus_vote(&matrix(rows)).discarded, 0);
    }

    #[test]
    fn identical_and_complementary_labelers() {
        let rows: Vec<Vec<bool>> = (0..10).map(|i| vec![i % 3 == 0, i % 3 == 0, i % 3 != 0]).collect();
        let r = pairwise_agreement(&matrix(rows));
        assert_eq!(r.pairs[0].agreed, 10);
        assert_eq!(r.pairs[1].agreed, 0);
        assert_eq!(r.pairs[2].agreed, 0);
        assert_eq!(r.unanimous, 0);
    }

    #[test]
    fn ragged_or_lonely_matrices_are_rejected() {
        assert!(LabelMatrix::new(vec!["a".into()], vec!["p".into()], vec![vec![true]]).is_err());
        assert!(LabelMatrix::new(
            vec!["a".into(), "b".into()],
            vec!["p".into()],
            vec![vec![true]]
        )
        .is_err());
    }
}
