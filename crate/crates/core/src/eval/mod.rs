//! Classification metrics and test-label consensus.

mod consensus;
mod metrics;

pub use consensus::{
    consensus_vote, pairwise_agreement, AgreementReport, Consensus, ConsensusSummary, LabelMatrix,
    PairAgreement,
};
pub use metrics::{auc_roc, confusion_metrics, MetricsReport};
