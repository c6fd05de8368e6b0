//! Server ranking and subset aggregates.
//!
//! A subset of servers enters the closed-form solution only through a handful
//! of scalars: the parallel "conductance" `Q = sum(1/q_i)`, the effective delay
//! constant `Qbar = q0 + 1/Q`, and the worst-path constant `Qu = q0 + max q_i`.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SelectionError {
    #[error("cannot rank an empty fleet")]
    EmptyFleet,
    #[error("subset must contain at least one server")]
    EmptySubset,
}

/// Servers sorted by ascending `q`, ties broken by fleet index.
#[derive(Debug, Clone, PartialEq)]
pub struct ServerRanking {
    pub order: Vec<usize>,
    pub q_sorted: Vec<f64>,
}

impl ServerRanking {
    /// Fleet indices of the `n` fastest servers.
    pub fn prefix(&self, n: usize) -> &[usize] {
        &self.order[..n.min(self.order.len())]
    }

    pub fn q_prefix(&self, n: usize) -> &[f64] {
        &self.q_sorted[..n.min(self.q_sorted.len())]
    }
}

pub fn rank_servers(q: &[f64]) -> Result<ServerRanking, SelectionError> {
    if q.is_empty() {
        return Err(SelectionError::EmptyFleet);
    }
    let mut keyed: Vec<(f64, usize)> = q.iter().copied().zip(0..).collect();
    // Stable sort keeps equal q in index order.
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (q_sorted, order) = keyed.into_iter().unzip();
    Ok(ServerRanking { order, q_sorted })
}

fn by_rank(a: &(f64, usize), b: &(f64, usize)) -> std::cmp::Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// The first `m` entries of [`rank_servers`] in linear time plus `m log m`.
pub fn rank_top(q: &[f64], m: usize) -> Result<ServerRanking, SelectionError> {
    if q.is_empty() {
        return Err(SelectionError::EmptyFleet);
    }
    let mut keyed: Vec<(f64, usize)> = q.iter().copied().zip(0..).collect();
    if m < keyed.len() {
        keyed.select_nth_unstable_by(m, by_rank);
        keyed.truncate(m);
    }
    keyed.sort_unstable_by(by_rank);
    let (q_sorted, order) = keyed.into_iter().unzip();
    Ok(ServerRanking { order, q_sorted })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubsetAggregates {
    pub n: usize,
    /// `sum(1/q_i)`, in 1/s.
    pub q_sum_inv: f64,
    /// `q0 + 1/Q`.
    pub qbar: f64,
    /// `q0 + max q_i`.
    pub qu: f64,
}

pub fn subset_aggregates(q0: f64, q_subset: &[f64]) -> Result<SubsetAggregates, SelectionError> {
    if q_subset.is_empty() {
        return Err(SelectionError::EmptySubset);
    }
    let q_sum_inv: f64 = q_subset.iter().map(|q| q.recip()).sum();
    let q_max = q_subset.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(SubsetAggregates {
        n: q_subset.len(),
        q_sum_inv,
        qbar: q0 + q_sum_inv.recip(),
        qu: q0 + q_max,
    })
}

/// `Q(n)` for every prefix length `1..=m` of a ranking.
pub fn prefix_qbar(q0: f64, ranking: &ServerRanking, m: usize) -> Vec<f64> {
    let mut acc = 0.0;
    ranking
        .q_prefix(m)
        .iter()
        .map(|q| {
            acc += q.recip();
            q0 + acc.recip()
        })
        .collect()
}
