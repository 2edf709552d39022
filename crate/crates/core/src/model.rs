//! Margin model linking team skill, coach skill and player skill.
//!
//! Team skill factors as `team = coach * player`. The expected margin of a
//! game is `w_player * (P_a - P_b) + w_coach * coach_effect`, where the coach
//! effect is the coach-skill gap damped by the player-skill gap. Observed
//! margins are scored with a Gaussian-shaped weight, and the negative log of
//! the season product reduces to a sum of squared residuals.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("coach skill must be positive, got {0}")]
    NonpositiveCoachSkill(f64),
    #[error("no coach skill available for team `{0}`")]
    MissingCoach(String),
    #[error("invalid model parameters: {0}")]
    InvalidParams(String),
}

pub const DEFAULT_ALPHA: f64 = 10.0;
pub const DEFAULT_W_PLAYER: f64 = 1.0;
pub const DEFAULT_W_COACH: f64 = 1.0;
pub const DEFAULT_AMPLITUDE: f64 = 1.0;

/// Resolved model constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkillModelParams {
    /// Damping of the coach effect by the player-skill gap.
    pub alpha: f64,
    pub w_player: f64,
    pub w_coach: f64,
    /// Width of the margin weight; only affects the likelihood, not the argmin.
    pub scale: f64,
    pub amplitude: f64,
}

impl SkillModelParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let finite = [
            self.alpha,
            self.w_player,
            self.w_coach,
            self.scale,
            self.amplitude,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(ModelError::InvalidParams("non-finite value".into()));
        }
        if self.alpha < 0.0 {
            return Err(ModelError::InvalidParams(format!(
                "alpha {} < 0",
                self.alpha
            )));
        }
        if self.scale <= 0.0 {
            return Err(ModelError::InvalidParams(format!(
                "scale {} <= 0",
                self.scale
            )));
        }
        if self.amplitude <= 0.0 {
            return Err(ModelError::InvalidParams(format!(
                "amplitude {} <= 0",
                self.amplitude
            )));
        }
        Ok(())
    }
}

/// Model section of the JSON config. Absent keys take defaults; an absent
/// `scale` resolves to the mean absolute margin of the season being fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub alpha: f64,
    pub w_player: f64,
    pub w_coach: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    pub amplitude: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            w_player: DEFAULT_W_PLAYER,
            w_coach: DEFAULT_W_COACH,
            scale: None,
            amplitude: DEFAULT_AMPLITUDE,
        }
    }
}

impl ModelConfig {
    pub fn resolve(
        &self,
        observations: &[GameObservation],
    ) -> Result<SkillModelParams, ModelError> {
        let scale = match self.scale {
            Some(s) => s,
            None => mean_abs_margin(observations).unwrap_or(1.0),
        };
        let params = SkillModelParams {
            alpha: self.alpha,
            w_player: self.w_player,
            w_coach: self.w_coach,
            scale,
            amplitude: self.amplitude,
        };
        params.validate()?;
        Ok(params)
    }
}

pub fn mean_abs_margin(observations: &[GameObservation]) -> Option<f64> {
    if observations.is_empty() {
        return None;
    }
    let total: f64 = observations
        .iter()
        .map(|o| f64::from(o.margin.unsigned_abs()))
        .sum();
    Some(total / observations.len() as f64)
}

/// One game as the model sees it. `margin > 0` means `team_a` won.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameObservation {
    pub team_a: String,
    pub team_b: String,
    pub margin: i32,
    pub t_a: f64,
    pub t_b: f64,
}

/// Fitted or hypothesised coach skills, keyed by coach id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CoachSkillVector {
    pub skills: BTreeMap<String, f64>,
}

impl CoachSkillVector {
    pub fn get(&self, coach: &str) -> Option<f64> {
        self.skills.get(coach).copied()
    }
}

impl FromIterator<(String, f64)> for CoachSkillVector {
    fn from_iter<I: IntoIterator<Item = (String, f64)>>(iter: I) -> Self {
        Self {
            skills: iter.into_iter().collect(),
        }
    }
}

/// Skill assumed for teams without a coach on record.
pub const FIXED_COACH_SKILL: f64 = 1.0;

/// Which coach stands behind each team in a season. Teams listed in `fixed`
/// have no coach and play with skill [`FIXED_COACH_SKILL`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CoachRoster {
    pub coach_of: BTreeMap<String, String>,
    pub fixed: BTreeSet<String>,
}

impl CoachRoster {
    /// Roster where every team in `teams` without an entry in `coach_of` is
    /// registered as fixed.
    pub fn new(coach_of: BTreeMap<String, String>, teams: &[String]) -> Self {
        let fixed = teams
            .iter()
            .filter(|t| !coach_of.contains_key(*t))
            .cloned()
            .collect();
        Self { coach_of, fixed }
    }

    /// Distinct coaches of the teams that appear in `observations`, sorted.
    pub fn active_coaches(&self, observations: &[GameObservation]) -> Vec<String> {
        let set: BTreeSet<&str> = observations
            .iter()
            .flat_map(|o| [o.team_a.as_str(), o.team_b.as_str()])
            .filter_map(|t| self.coach_of.get(t).map(String::as_str))
            .collect();
        set.into_iter().map(str::to_string).collect()
    }

    fn skill_of(&self, team: &str, skills: &CoachSkillVector) -> Result<f64, ModelError> {
        match self.coach_of.get(team) {
            Some(coach) => skills
                .get(coach)
                .ok_or_else(|| ModelError::MissingCoach(team.to_string())),
            None if self.fixed.contains(team) => Ok(FIXED_COACH_SKILL),
            None => Err(ModelError::MissingCoach(team.to_string())),
        }
    }
}

/// Inverts `team = coach * player`.
pub fn player_skill(team_skill: f64, coach_skill: f64) -> Result<f64, ModelError> {
    if coach_skill > 0.0 {
        Ok(team_skill / coach_skill)
    } else {
        Err(ModelError::NonpositiveCoachSkill(coach_skill))
    }
}

pub fn coach_effect(c_a: f64, c_b: f64, p_a: f64, p_b: f64, alpha: f64) -> f64 {
    (c_a - c_b) / (1.0 + alpha * (p_a - p_b).abs())
}

/// Model-predicted margin minus observed margin.
pub fn residual(
    obs: &GameObservation,
    c_a: f64,
    c_b: f64,
    params: &SkillModelParams,
) -> Result<f64, ModelError> {
    let p_a = player_skill(obs.t_a, c_a)?;
    let p_b = player_skill(obs.t_b, c_b)?;
    Ok(predicted(p_a, p_b, c_a, c_b, params) - f64::from(obs.margin))
}

#[inline]
fn predicted(p_a: f64, p_b: f64, c_a: f64, c_b: f64, params: &SkillModelParams) -> f64 {
    params.w_player * (p_a - p_b) + params.w_coach * coach_effect(c_a, c_b, p_a, p_b, params.alpha)
}

pub fn margin_probability(
    obs: &GameObservation,
    c_a: f64,
    c_b: f64,
    params: &SkillModelParams,
) -> Result<f64, ModelError> {
    let r = residual(obs, c_a, c_b, params)?;
    Ok(params.amplitude * (-(r / params.scale).powi(2)).exp())
}

/// Log of the season product of margin weights.
pub fn season_log_likelihood(
    observations: &[GameObservation],
    skills: &CoachSkillVector,
    roster: &CoachRoster,
    params: &SkillModelParams,
) -> Result<f64, ModelError> {
    let terms = observations
        .iter()
        .map(|obs| {
            let c_a = roster.skill_of(&obs.team_a, skills)?;
            let c_b = roster.skill_of(&obs.team_b, skills)?;
            let r = residual(obs, c_a, c_b, params)?;
            Ok(params.amplitude.ln() - (r / params.scale).powi(2))
        })
        .collect::<Result<Vec<f64>, ModelError>>()?;
    Ok(pairwise_sum(&terms))
}

/// Sum of squared margin residuals over the season.
pub fn cost_j(
    observations: &[GameObservation],
    skills: &CoachSkillVector,
    roster: &CoachRoster,
    params: &SkillModelParams,
) -> Result<f64, ModelError> {
    let terms = observations
        .iter()
        .map(|obs| {
            let c_a = roster.skill_of(&obs.team_a, skills)?;
            let c_b = roster.skill_of(&obs.team_b, skills)?;
            residual(obs, c_a, c_b, params).map(|r| r * r)
        })
        .collect::<Result<Vec<f64>, ModelError>>()?;
    Ok(pairwise_sum(&terms))
}

/// Pairwise (cascade) summation with a fixed split order, so the result does
/// not depend on how the caller partitions work.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BLOCK: usize = 16;
    if values.len() <= BLOCK {
        values.iter().sum()
    } else {
        let mid = values.len() / 2;
        pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
    }
}

#[derive(Debug, Clone, Copy)]
enum Slot {
    Free(usize),
    Fixed,
}

#[derive(Debug, Clone, Copy)]
struct CompiledGame {
    a: Slot,
    b: Slot,
    t_a: f64,
    t_b: f64,
    margin: f64,
}

/// Season cost over a dense coach-skill vector, with team lookups resolved
/// once up front. Used as the optimizer's objective.
#[derive(Debug, Clone)]
pub struct SeasonProblem {
    coaches: Vec<String>,
    games: Vec<CompiledGame>,
    params: SkillModelParams,
}

impl SeasonProblem {
    pub fn new(
        observations: &[GameObservation],
        roster: &CoachRoster,
        params: SkillModelParams,
    ) -> Result<Self, ModelError> {
        let coaches = roster.active_coaches(observations);
        let slot = |team: &str| -> Result<Slot, ModelError> {
            match roster.coach_of.get(team) {
                Some(coach) => Ok(Slot::Free(
                    coaches.binary_search(coach).expect("active coach indexed"),
                )),
                None if roster.fixed.contains(team) => Ok(Slot::Fixed),
                None => Err(ModelError::MissingCoach(team.to_string())),
            }
        };
        let games = observations
            .iter()
            .map(|o| {
                Ok(CompiledGame {
                    a: slot(&o.team_a)?,
                    b: slot(&o.team_b)?,
                    t_a: o.t_a,
                    t_b: o.t_b,
                    margin: f64::from(o.margin),
                })
            })
            .collect::<Result<Vec<_>, ModelError>>()?;
        Ok(Self {
            coaches,
            games,
            params,
        })
    }

    /// Coach ids in variable order.
    pub fn coaches(&self) -> &[String] {
        &self.coaches
    }

    pub fn dim(&self) -> usize {
        self.coaches.len()
    }

    pub fn params(&self) -> &SkillModelParams {
        &self.params
    }

    pub fn n_games(&self) -> usize {
        self.games.len()
    }

    /// Cost at the given coach skills (one per coach, in [`Self::coaches`]
    /// order). Non-positive skills yield `NaN`.
    pub fn cost(&self, skills: &[f64]) -> f64 {
        let pick = |slot: Slot| match slot {
            Slot::Free(i) => skills[i],
            Slot::Fixed => FIXED_COACH_SKILL,
        };
        let terms: Vec<f64> = self
            .games
            .iter()
            .map(|g| {
                let (c_a, c_b) = (pick(g.a), pick(g.b));
                if c_a <= 0.0 || c_b <= 0.0 {
                    return f64::NAN;
                }
                let r = predicted(g.t_a / c_a, g.t_b / c_b, c_a, c_b, &self.params) - g.margin;
                r * r
            })
            .collect();
        pairwise_sum(&terms)
    }

    pub fn skill_vector(&self, skills: &[f64]) -> CoachSkillVector {
        self.coaches
            .iter()
            .cloned()
            .zip(skills.iter().copied())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(scale: f64) -> SkillModelParams {
        SkillModelParams {
            alpha: 10.0,
            w_player: 1.0,
            w_coach: 1.0,
            scale,
            amplitude: 1.0,
        }
    }

    fn obs(margin: i32, t_a: f64, t_b: f64) -> GameObservation {
        GameObservation {
            team_a: "A".into(),
            team_b: "B".into(),
            margin,
            t_a,
            t_b,
        }
    }

    fn roster() -> CoachRoster {
        let coach_of = [("A", "ca"), ("B", "cb")]
            .iter()
            .map(|(t, c)| (t.to_string(), c.to_string()))
            .collect();
        CoachRoster::new(coach_of, &[])
    }

    #[test]
    fn player_skill_inverts_product() {
        assert_eq!(player_skill(0.6, 1.0), Ok(0.6));
        assert_eq!(player_skill(0.6, 2.0), Ok(0.3));
        assert_eq!(
            player_skill(0.5, 0.0),
            Err(ModelError::NonpositiveCoachSkill(0.0))
        );
    }

    #[test]
    fn coach_effect_cases() {
        assert_eq!(coach_effect(1.7, 1.7, 9.0, 0.1, 3.0), 0.0);
        assert_eq!(coach_effect(2.0, 1.0, 5.0, 0.0, 0.0), 1.0);
        assert!((coach_effect(2.0, 1.0, 3.0, 1.0, 1.0) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn margin_probability_cases() {
        let p = params(2.0);
        // Equal teams and coaches predict a zero margin.
        let at_max = obs(0, 0.5, 0.5);
        assert_eq!(margin_probability(&at_max, 1.0, 1.0, &p).unwrap(), 1.0);

        let up = margin_probability(&obs(5, 0.5, 0.5), 1.0, 1.0, &p).unwrap();
        let down = margin_probability(&obs(-5, 0.5, 0.5), 1.0, 1.0, &p).unwrap();
        assert_eq!(up, down);

        let v = margin_probability(&obs(2, 0.5, 0.5), 1.0, 1.0, &p).unwrap();
        assert!((v - (-1.0f64).exp()).abs() < 1e-15);
        assert!((v - 0.3679).abs() < 1e-4);

        assert!(margin_probability(&obs(2, 0.5, 0.5), 0.0, 1.0, &p).is_err());
    }

    #[test]
    fn likelihood_and_cost_small_cases() {
        let p = SkillModelParams {
            amplitude: 0.5,
            ..params(3.0)
        };
        let skills: CoachSkillVector = [("ca".to_string(), 1.0), ("cb".to_string(), 1.0)]
            .into_iter()
            .collect();
        let r = roster();
        assert_eq!(season_log_likelihood(&[], &skills, &r, &p), Ok(0.0));
        let ll = season_log_likelihood(&[obs(0, 0.4, 0.4)], &skills, &r, &p).unwrap();
        assert!((ll - 0.5f64.ln()).abs() < 1e-15);

        let pair = [obs(3, 0.4, 0.4), obs(-1, 0.4, 0.4)];
        let sum: f64 = pair
            .iter()
            .map(|o| margin_probability(o, 1.0, 1.0, &p).unwrap().ln())
            .sum();
        let ll = season_log_likelihood(&pair, &skills, &r, &p).unwrap();
        assert!((ll - sum).abs() < 1e-12);

        // Residual of 3 squares to 9.
        assert_eq!(cost_j(&[obs(3, 0.4, 0.4)], &skills, &r, &p), Ok(9.0));
    }

    #[test]
    fn missing_coach_reported() {
        let skills: CoachSkillVector = [("ca".to_string(), 1.0)].into_iter().collect();
        assert_eq!(
            cost_j(&[obs(3, 0.4, 0.4)], &skills, &roster(), &params(1.0)),
            Err(ModelError::MissingCoach("B".into()))
        );
        let bare = CoachRoster::default();
        assert!(SeasonProblem::new(&[obs(1, 0.1, 0.2)], &bare, params(1.0)).is_err());
    }

    #[test]
    fn fixed_teams_use_unit_skill() {
        let coach_of = [("A".to_string(), "ca".to_string())].into_iter().collect();
        let r = CoachRoster::new(coach_of, &["A".to_string(), "B".to_string()]);
        assert!(r.fixed.contains("B"));
        let skills: CoachSkillVector = [("ca".to_string(), 2.0)].into_iter().collect();
        let o = [obs(4, 0.8, 0.3)];
        let expected = {
            let pe = 0.4 - 0.3;
            let ce = (2.0 - 1.0) / (1.0 + 10.0 * pe);
            (pe + ce - 4.0f64).powi(2)
        };
        let j = cost_j(&o, &skills, &r, &params(1.0)).unwrap();
        assert!((j - expected).abs() < 1e-12);
        let problem = SeasonProblem::new(&o, &r, params(1.0)).unwrap();
        assert_eq!(problem.coaches(), ["ca".to_string()]);
        assert_eq!(problem.cost(&[2.0]), j);
    }

    #[test]
    fn config_defaults_and_resolution() {
        let cfg: ModelConfig = serde_json::from_str("{\"alpha\": 2.5}").unwrap();
        assert_eq!(cfg.alpha, 2.5);
        assert_eq!(cfg.w_player, DEFAULT_W_PLAYER);
        assert!(cfg.scale.is_none());
        let p = cfg.resolve(&[obs(4, 1.0, 1.0), obs(-8, 1.0, 1.0)]).unwrap();
        assert_eq!(p.scale, 6.0);
        assert!(serde_json::from_str::<ModelConfig>("{\"bogus\": 1}").is_err());
        let bad = ModelConfig {
            scale: Some(-1.0),
            ..ModelConfig::default()
        };
        assert!(bad.resolve(&[]).is_err());
    }

    #[test]
    fn pairwise_sum_matches_naive_on_integers() {
        let v: Vec<f64> = (1..=1000).map(f64::from).collect();
        assert_eq!(pairwise_sum(&v), 500_500.0);
    }
}
