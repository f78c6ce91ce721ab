//! The three-level label taxonomy, adapter routing, task losses, the
//! consistency penalty and top-down prediction.

mod bank;
mod loss;
pub(crate) mod predict;
mod taxonomy;

pub use bank::{route_key, AdapterBank, BankCheckpoint, Granularity, Route, RouteMode};
pub use loss::{
    hierarchy_loss, hierarchy_loss_graph, level_probs, multi_hot, penalty_term, task_loss, total_loss, HierLossConfig,
};
pub use predict::{
    decide, invalid_transition_rate, parse_records, predict_dataset, predict_hierarchical, probs_from_scores,
    read_records, write_records, HierPrediction, LabelRecord,
};
pub use taxonomy::{Label, Level};

#[cfg(test)]
mod tests;
