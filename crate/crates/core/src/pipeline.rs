//! One season end to end: network, centrality, observations, fit, ranking.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::SeasonDataset;
use crate::model::{CoachRoster, GameObservation, ModelConfig, ModelError, SkillModelParams};
use crate::network::{
    build_network, eigenvector_centrality, CentralityConfig, CentralityVector, NetworkError,
    SeasonNetwork,
};
use crate::optimize::{fit_season, FitResult, OptimizeError, PowellConfig};
use crate::rank::{yearly_top_k, YearlyRanking};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Optimize(#[from] OptimizeError),
    #[error("margin {0} does not fit the observation type")]
    MarginOverflow(i64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub model: ModelConfig,
    pub optimizer: PowellConfig,
    pub centrality: CentralityConfig,
    /// Divide team skills by the season maximum before fitting.
    pub rescale_centrality: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            optimizer: PowellConfig::default(),
            centrality: CentralityConfig::default(),
            rescale_centrality: true,
        }
    }
}

/// Turns each game into a model observation, with team skill taken from
/// `centrality` (optionally rescaled so the season maximum is 1).
pub fn observations_from(
    dataset: &SeasonDataset,
    centrality: &CentralityVector,
    rescale: bool,
) -> Result<Vec<GameObservation>, PipelineError> {
    let max = centrality.scores.iter().copied().fold(0.0, f64::max);
    let factor = if rescale && max > 0.0 { 1.0 / max } else { 1.0 };
    dataset
        .games
        .iter()
        .map(|g| {
            let skill = |team: &str| {
                centrality
                    .score(team)
                    .map(|s| s * factor)
                    .ok_or_else(|| NetworkError::MissingScore(team.to_string()))
            };
            let margin = g.signed_margin();
            Ok(GameObservation {
                team_a: g.team_a.clone(),
                team_b: g.team_b.clone(),
                margin: i32::try_from(margin).map_err(|_| PipelineError::MarginOverflow(margin))?,
                t_a: skill(&g.team_a)?,
                t_b: skill(&g.team_b)?,
            })
        })
        .collect()
}

pub fn roster_of(dataset: &SeasonDataset) -> CoachRoster {
    CoachRoster::new(dataset.coach_map(), &dataset.teams())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeasonResult {
    pub season: i32,
    pub network: SeasonNetwork,
    pub centrality: CentralityVector,
    pub params: SkillModelParams,
    pub fit: FitResult,
    /// Every fitted coach, best first.
    pub ranking: YearlyRanking,
}

impl SeasonResult {
    /// 1-based position of `coach` in the full ranking.
    pub fn rank_of(&self, coach: &str) -> Option<usize> {
        self.ranking
            .entries
            .iter()
            .position(|e| e.coach == coach)
            .map(|i| i + 1)
    }
}

pub fn centrality_of(
    network: &SeasonNetwork,
    config: &CentralityConfig,
) -> Result<CentralityVector, NetworkError> {
    eigenvector_centrality(network, config.epsilon, config.tol, config.max_iter)
}

/// Runs the full pipeline on one season with the optimizer seed as given.
pub fn run_season(
    dataset: &SeasonDataset,
    config: &PipelineConfig,
) -> Result<SeasonResult, PipelineError> {
    let network = build_network(dataset);
    let centrality = centrality_of(&network, &config.centrality)?;
    let observations = observations_from(dataset, &centrality, config.rescale_centrality)?;
    let params = config.model.resolve(&observations)?;
    let fit = fit_season(
        &observations,
        &roster_of(dataset),
        &params,
        &config.optimizer,
    )?;
    let ranking = yearly_top_k(dataset.season, &fit, usize::MAX);
    Ok(SeasonResult {
        season: dataset.season,
        network,
        centrality,
        params,
        fit,
        ranking,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{CoachAssignment, GameRecord};

    fn game(a: &str, sa: u32, b: &str, sb: u32) -> GameRecord {
        GameRecord {
            season: 1975,
            date: None,
            team_a: a.into(),
            score_a: sa,
            team_b: b.into(),
            score_b: sb,
        }
    }

    fn triangle() -> SeasonDataset {
        SeasonDataset {
            season: 1975,
            games: vec![
                game("A", 70, "B", 60),
                game("B", 65, "C", 60),
                game("C", 62, "A", 61),
                game("A", 80, "C", 70),
            ],
            coaches: ["A", "B", "C"]
                .iter()
                .map(|t| CoachAssignment {
                    season: 1975,
                    team: t.to_string(),
                    coach: format!("coach {t}"),
                })
                .collect(),
            unmatched_teams: vec![],
        }
        .normalized()
    }

    #[test]
    fn rescaling_puts_the_best_team_at_one() {
        let ds = triangle();
        let c = centrality_of(&build_network(&ds), &CentralityConfig::default()).unwrap();
        let obs = observations_from(&ds, &c, true).unwrap();
        let max = obs.iter().flat_map(|o| [o.t_a, o.t_b]).fold(0.0, f64::max);
        assert_eq!(max, 1.0);
        let raw = observations_from(&ds, &c, false).unwrap();
        assert_eq!(raw[0].t_a, c.score(&raw[0].team_a).unwrap());
        assert_eq!(obs.len(), ds.games.len());
        assert!(obs.iter().all(|o| o.margin != 0));
    }

    #[test]
    fn season_runs_end_to_end() {
        let r = run_season(&triangle(), &PipelineConfig::default()).unwrap();
        assert_eq!(r.season, 1975);
        assert_eq!(r.ranking.entries.len(), 3);
        assert_eq!(r.rank_of(&r.ranking.entries[0].coach), Some(1));
        assert_eq!(r.rank_of("nobody"), None);
        assert_eq!(r.fit.cost_trace.last().copied(), Some(r.fit.final_cost));
    }

    #[test]
    fn missing_team_score_is_reported() {
        let ds = triangle();
        let other = SeasonDataset {
            games: vec![game("A", 70, "B", 60)],
            ..ds.clone()
        };
        let c = centrality_of(&build_network(&other), &CentralityConfig::default()).unwrap();
        assert!(matches!(
            observations_from(&ds, &c, true),
            Err(PipelineError::Network(NetworkError::MissingScore(t))) if t == "C"
        ));
    }

    #[test]
    fn single_team_season_is_degenerate() {
        let ds = SeasonDataset {
            games: vec![],
            ..triangle()
        };
        assert!(matches!(
            run_season(&ds, &PipelineConfig::default()),
            Err(PipelineError::Network(NetworkError::DegenerateNetwork(_)))
        ));
    }
}
