//! Points and the per-project leaderboard.
//!
//! Each review star is worth two points to the implementer; performing a
//! review is worth five.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::event::AwardReason;
use crate::model::WorkerId;

pub const POINTS_PER_STAR: u32 = 2;
pub const REVIEWER_POINTS: u32 = 5;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("stars must be between 1 and 5, got {0}")]
pub struct StarsOutOfRange(pub u8);

pub fn points_for(reason: AwardReason) -> Result<u32, StarsOutOfRange> {
    match reason {
        AwardReason::ImplementerAward { stars } if (1..=5).contains(&stars) => {
            Ok(POINTS_PER_STAR * u32::from(stars))
        }
        AwardReason::ImplementerAward { stars } => Err(StarsOutOfRange(stars)),
        AwardReason::ReviewerAward => Ok(REVIEWER_POINTS),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LedgerEntry {
    pub sequence: u64,
    pub points: u32,
    pub reason: AwardReason,
}

/// Append-only record of every award, per worker.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScoreLedger {
    per_worker: BTreeMap<WorkerId, Vec<LedgerEntry>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LeaderboardRow {
    pub worker: WorkerId,
    pub total: u64,
}

impl ScoreLedger {
    pub fn record(&mut self, worker: WorkerId, sequence: u64, points: u32, reason: AwardReason) {
        self.per_worker.entry(worker).or_default().push(LedgerEntry { sequence, points, reason });
    }

    pub fn entries(&self, worker: &WorkerId) -> &[LedgerEntry] {
        self.per_worker.get(worker).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn total(&self, worker: &WorkerId) -> u64 {
        self.entries(worker).iter().map(|e| u64::from(e.points)).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&WorkerId, &[LedgerEntry])> {
        self.per_worker.iter().map(|(w, e)| (w, e.as_slice()))
    }
}

/// Totals in descending order; ties go to whoever scored first.
pub fn leaderboard(ledger: &ScoreLedger) -> Vec<LeaderboardRow> {
    let mut rows: Vec<(u64, u64, &WorkerId)> = ledger
        .per_worker
        .iter()
        .filter(|(_, entries)| !entries.is_empty())
        .map(|(worker, entries)| {
            let total = entries.iter().map(|e| u64::from(e.points)).sum();
            let first = entries.iter().map(|e| e.sequence).min().unwrap_or(u64::MAX);
            (total, first, worker)
        })
        .collect();
    rows.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    rows.into_iter().map(|(total, _, worker)| LeaderboardRow { worker: worker.clone(), total }).collect()
}
