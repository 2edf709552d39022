//! Robustness and recovery experiments: single-game perturbations of a season
//! (deleting a game or flipping its result) and a generator of synthetic
//! seasons with known coach and player skills.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{CoachAssignment, GameRecord, SeasonDataset};
use crate::model::{coach_effect, GameObservation, ModelConfig};
use crate::pipeline::{run_season, PipelineConfig, PipelineError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExperimentError {
    #[error("perturbation target not found: {0:?}")]
    TargetNotFound(GameTarget),
    #[error("coach `{0}` is not fitted in this season")]
    FocusCoachMissing(String),
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationKind {
    DeleteGame,
    FlipResult,
}

/// Identifies one game: the `occurrence`-th game (0-based, canonical order)
/// between the two teams in the given season. Team order does not matter.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GameTarget {
    pub season: i32,
    pub team_a: String,
    pub team_b: String,
    #[serde(default)]
    pub occurrence: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Perturbation {
    pub kind: PerturbationKind,
    pub target: GameTarget,
}

fn locate(dataset: &SeasonDataset, target: &GameTarget) -> Option<usize> {
    if dataset.season != target.season {
        return None;
    }
    dataset
        .games
        .iter()
        .enumerate()
        .filter(|(_, g)| {
            (g.team_a == target.team_a && g.team_b == target.team_b)
                || (g.team_a == target.team_b && g.team_b == target.team_a)
        })
        .nth(target.occurrence)
        .map(|(i, _)| i)
}

pub fn apply_perturbation(
    dataset: &SeasonDataset,
    perturbation: &Perturbation,
) -> Result<SeasonDataset, ExperimentError> {
    let index = locate(dataset, &perturbation.target)
        .ok_or_else(|| ExperimentError::TargetNotFound(perturbation.target.clone()))?;
    let mut out = dataset.clone();
    match perturbation.kind {
        PerturbationKind::DeleteGame => {
            out.games.remove(index);
        }
        PerturbationKind::FlipResult => {
            // Same scores, teams swapped: the old loser now wins by the old margin.
            let g = &mut out.games[index];
            std::mem::swap(&mut g.team_a, &mut g.team_b);
        }
    }
    Ok(out.normalized())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub focus_coach: String,
    pub perturbation: Perturbation,
    pub baseline_skill: f64,
    pub perturbed_skill: f64,
    pub relative_change: f64,
    pub baseline_rank: usize,
    pub perturbed_rank: usize,
}

/// Runs the pipeline on the original and the perturbed season with the same
/// configuration and seed, and compares `focus_coach` across the two.
pub fn sensitivity_run(
    dataset: &SeasonDataset,
    perturbation: &Perturbation,
    focus_coach: &str,
    config: &PipelineConfig,
) -> Result<SensitivityReport, ExperimentError> {
    let perturbed = apply_perturbation(dataset, perturbation)?;
    let (baseline, after) = rayon::join(
        || run_season(dataset, config),
        || run_season(&perturbed, config),
    );
    let (baseline, after) = (baseline?, after?);
    let missing = || ExperimentError::FocusCoachMissing(focus_coach.to_string());
    let baseline_skill = baseline.fit.skills.get(focus_coach).ok_or_else(missing)?;
    let perturbed_skill = after.fit.skills.get(focus_coach).ok_or_else(missing)?;
    Ok(SensitivityReport {
        focus_coach: focus_coach.to_string(),
        perturbation: perturbation.clone(),
        baseline_skill,
        perturbed_skill,
        relative_change: (perturbed_skill - baseline_skill) / baseline_skill,
        baseline_rank: baseline.rank_of(focus_coach).ok_or_else(missing)?,
        perturbed_rank: after.rank_of(focus_coach).ok_or_else(missing)?,
    })
}

fn default_season() -> i32 {
    2000
}

/// Ground-truth description of a synthetic season.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_teams: usize,
    pub games_per_pair: usize,
    pub true_coach_skills: BTreeMap<String, f64>,
    pub true_player_skills: BTreeMap<String, f64>,
    /// Team to coach; when empty, sorted teams are paired with sorted coaches.
    #[serde(default)]
    pub assignments: BTreeMap<String, String>,
    pub noise_sigma: f64,
    pub seed: u64,
    #[serde(default = "default_season")]
    pub season: i32,
    /// Weights used to generate expected margins.
    #[serde(default)]
    pub model: ModelConfig,
}

impl SyntheticSpec {
    /// Spec with `n_teams` teams named `T01..`, coaches `C01..` whose skills
    /// form a geometric progression with ratio `separation` and geometric
    /// mean 1, assigned to teams in a seed-dependent order, and player skills
    /// uniform in `[1, 3]`.
    pub fn separated(
        n_teams: usize,
        games_per_pair: usize,
        separation: f64,
        noise_sigma: f64,
        model: ModelConfig,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let teams: Vec<String> = (1..=n_teams).map(|i| format!("T{i:02}")).collect();
        let coaches: Vec<String> = (1..=n_teams).map(|i| format!("C{i:02}")).collect();
        let mid = (n_teams as f64 - 1.0) / 2.0;
        let true_coach_skills = coaches
            .iter()
            .enumerate()
            .map(|(i, c)| (c.clone(), separation.powf(i as f64 - mid)))
            .collect();
        let true_player_skills = teams
            .iter()
            .map(|t| (t.clone(), rng.random_range(1.0..3.0)))
            .collect();
        let mut order = coaches.clone();
        order.shuffle(&mut rng);
        let assignments = teams.iter().cloned().zip(order).collect();
        Self {
            n_teams,
            games_per_pair,
            true_coach_skills,
            true_player_skills,
            assignments,
            noise_sigma,
            seed,
            season: default_season(),
            model,
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let invalid = |m: String| Err(ExperimentError::InvalidSpec(m));
        if self.n_teams < 2 {
            return invalid(format!("n_teams = {} (need at least 2)", self.n_teams));
        }
        if self.true_player_skills.len() != self.n_teams {
            return invalid(format!(
                "{} player skills for {} teams",
                self.true_player_skills.len(),
                self.n_teams
            ));
        }
        if self.games_per_pair == 0 {
            return invalid("games_per_pair must be positive".into());
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return invalid(format!("noise_sigma = {}", self.noise_sigma));
        }
        let positive = |m: &BTreeMap<String, f64>| m.values().all(|&v| v > 0.0 && v.is_finite());
        if !positive(&self.true_coach_skills) || !positive(&self.true_player_skills) {
            return invalid("all skills must be positive".into());
        }
        let assignments = self.resolved_assignments();
        for team in self.true_player_skills.keys() {
            match assignments.get(team) {
                Some(coach) if self.true_coach_skills.contains_key(coach) => {}
                Some(coach) => return invalid(format!("coach `{coach}` has no skill")),
                None => return invalid(format!("team `{team}` has no coach")),
            }
        }
        Ok(())
    }

    fn resolved_assignments(&self) -> BTreeMap<String, String> {
        if self.assignments.is_empty() {
            self.true_player_skills
                .keys()
                .cloned()
                .zip(self.true_coach_skills.keys().cloned())
                .collect()
        } else {
            self.assignments.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub coach_skills: BTreeMap<String, f64>,
    pub player_skills: BTreeMap<String, f64>,
    /// `coach * player` per team.
    pub team_skills: BTreeMap<String, f64>,
    pub assignments: BTreeMap<String, String>,
}

impl GroundTruth {
    /// Coaches ordered by true skill, best first.
    pub fn coach_order(&self) -> Vec<String> {
        let mut coaches: Vec<(&String, f64)> =
            self.coach_skills.iter().map(|(c, &s)| (c, s)).collect();
        coaches.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        coaches.into_iter().map(|(c, _)| c.clone()).collect()
    }
}

/// Rounds to the nearest integer, pushing results that would be zero to ±1
/// with the sign of `x` (exact zero goes to +1).
pub fn round_nonzero(x: f64) -> i64 {
    let r = x.round() as i64;
    if r != 0 {
        r
    } else if x < 0.0 {
        -1
    } else {
        1
    }
}

/// Plays every pair of teams `games_per_pair` times. The expected margin
/// follows the margin model; Gaussian noise is added and the result rounded
/// away from a tie. Home side alternates between games of a pair.
pub fn generate_synthetic(
    spec: &SyntheticSpec,
) -> Result<(SeasonDataset, GroundTruth), ExperimentError> {
    spec.validate()?;
    let assignments = spec.resolved_assignments();
    let teams: Vec<&String> = spec.true_player_skills.keys().collect();
    let coach_skill = |team: &str| spec.true_coach_skills[&assignments[team]];
    let player = |team: &str| spec.true_player_skills[team];
    let noise = Normal::new(0.0, spec.noise_sigma)
        .map_err(|e| ExperimentError::InvalidSpec(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let m = &spec.model;

    let mut games = Vec::new();
    for (i, a) in teams.iter().enumerate() {
        for b in &teams[i + 1..] {
            let (p_a, p_b) = (player(a), player(b));
            let expected = m.w_player * (p_a - p_b)
                + m.w_coach * coach_effect(coach_skill(a), coach_skill(b), p_a, p_b, m.alpha);
            for g in 0..spec.games_per_pair {
                let draw = if spec.noise_sigma > 0.0 {
                    noise.sample(&mut rng)
                } else {
                    0.0
                };
                let margin = round_nonzero(expected + draw);
                let base: u32 = rng.random_range(50..=80);
                let (win_score, lose_score) = (base + margin.unsigned_abs() as u32, base);
                let (score_a, score_b) = if margin > 0 {
                    (win_score, lose_score)
                } else {
                    (lose_score, win_score)
                };
                let record = if g % 2 == 0 {
                    GameRecord {
                        season: spec.season,
                        date: None,
                        team_a: a.to_string(),
                        score_a,
                        team_b: b.to_string(),
                        score_b,
                    }
                } else {
                    GameRecord {
                        season: spec.season,
                        date: None,
                        team_a: b.to_string(),
                        score_a: score_b,
                        team_b: a.to_string(),
                        score_b: score_a,
                    }
                };
                games.push(record);
            }
        }
    }
    let coaches = assignments
        .iter()
        .map(|(team, coach)| CoachAssignment {
            season: spec.season,
            team: team.clone(),
            coach: coach.clone(),
        })
        .collect();
    let dataset = SeasonDataset {
        season: spec.season,
        games,
        coaches,
        unmatched_teams: Vec::new(),
    }
    .normalized();
    let team_skills = teams
        .iter()
        .map(|t| (t.to_string(), coach_skill(t) * player(t)))
        .collect();
    let truth = GroundTruth {
        coach_skills: spec.true_coach_skills.clone(),
        player_skills: spec.true_player_skills.clone(),
        team_skills,
        assignments,
    };
    Ok((dataset, truth))
}

/// Observations whose team skills come straight from the ground truth rather
/// than from centrality, isolating the fitting step.
pub fn truth_observations(dataset: &SeasonDataset, truth: &GroundTruth) -> Vec<GameObservation> {
    dataset
        .games
        .iter()
        .map(|g| GameObservation {
            team_a: g.team_a.clone(),
            team_b: g.team_b.clone(),
            margin: g.signed_margin() as i32,
            t_a: truth.team_skills[&g.team_a],
            t_b: truth.team_skills[&g.team_b],
        })
        .collect()
}
