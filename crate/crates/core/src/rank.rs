//! Yearly top-k lists and career value: the fraction of a coach's seasons in
//! which they made the yearly top-k.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::ingest::CoachAssignment;
use crate::optimize::FitResult;

pub const DEFAULT_K: usize = 5;
pub const DEFAULT_MIN_YEARS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub coach: String,
    pub skill: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YearlyRanking {
    pub season: i32,
    /// Descending by skill; equal skills ordered by coach id.
    pub entries: Vec<RankEntry>,
    /// Set when bit-identical skills had to be ordered by coach id.
    pub tie_broken: bool,
}

impl YearlyRanking {
    pub fn top(&self, k: usize) -> &[RankEntry] {
        &self.entries[..k.min(self.entries.len())]
    }
}

pub fn yearly_top_k(season: i32, fit: &FitResult, k: usize) -> YearlyRanking {
    let mut entries: Vec<RankEntry> = fit
        .skills
        .skills
        .iter()
        .map(|(coach, &skill)| RankEntry {
            coach: coach.clone(),
            skill,
        })
        .collect();
    entries.sort_by(|a, b| {
        b.skill
            .total_cmp(&a.skill)
            .then_with(|| a.coach.cmp(&b.coach))
    });
    // A tie straddling the cutoff also decides membership.
    let considered = k.saturating_add(1).min(entries.len());
    let tie_broken = entries[..considered]
        .windows(2)
        .any(|w| w[0].skill == w[1].skill);
    entries.truncate(k);
    YearlyRanking {
        season,
        entries,
        tie_broken,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CareerRecord {
    pub coach: String,
    pub n_appearances: usize,
    pub n_years: usize,
    pub value: f64,
}

/// Career values over all seasons. `n_years` counts distinct seasons in which
/// the coach has any assignment; `n_appearances` counts seasons in which the
/// coach is among the first `k` entries of that season's ranking. Coaches
/// with fewer than `min_years` seasons are dropped.
pub fn career_values(
    rankings: &[YearlyRanking],
    assignments: &[CoachAssignment],
    k: usize,
    min_years: usize,
) -> Vec<CareerRecord> {
    let mut years: BTreeMap<&str, BTreeSet<i32>> = BTreeMap::new();
    for a in assignments {
        years.entry(&a.coach).or_default().insert(a.season);
    }
    let mut appearances: BTreeMap<&str, BTreeSet<i32>> = BTreeMap::new();
    for ranking in rankings {
        for entry in ranking.top(k) {
            appearances
                .entry(&entry.coach)
                .or_default()
                .insert(ranking.season);
        }
    }
    let mut records: Vec<CareerRecord> = years
        .iter()
        .filter(|(_, seasons)| seasons.len() >= min_years)
        .map(|(coach, seasons)| {
            let n_appearances = appearances
                .get(coach)
                .map(|s| s.intersection(seasons).count())
                .unwrap_or(0);
            CareerRecord {
                coach: coach.to_string(),
                n_appearances,
                n_years: seasons.len(),
                value: n_appearances as f64 / seasons.len() as f64,
            }
        })
        .collect();
    records.sort_by(|a, b| {
        b.value
            .total_cmp(&a.value)
            .then_with(|| b.n_years.cmp(&a.n_years))
            .then_with(|| a.coach.cmp(&b.coach))
    });
    records
}

/// `rank,coach,value,n_appearances,n_years`, ranks starting at 1.
pub fn career_csv(records: &[CareerRecord]) -> String {
    let mut out = String::from("rank,coach,value,n_appearances,n_years\n");
    for (i, r) in records.iter().enumerate() {
        let coach = if r.coach.contains([',', '"', '\n']) {
            format!("\"{}\"", r.coach.replace('"', "\"\""))
        } else {
            r.coach.clone()
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            i + 1,
            coach,
            r.value,
            r.n_appearances,
            r.n_years
        );
    }
    out
}
