//! Flat-file ingestion: game results, coach rosters and the alias table that
//! reconciles team and coach names coming from different sources.
//!
//! All three inputs are UTF-8 CSV with a fixed header. Lines starting with `#`
//! are comments. Seasons are keyed by the calendar year in which they end.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const GAMES_HEADER: [&str; 6] = ["season", "date", "team_a", "score_a", "team_b", "score_b"];
pub const COACHES_HEADER: [&str; 3] = ["season", "team", "coach"];
pub const ALIAS_HEADER: [&str; 2] = ["raw", "canonical"];

/// First season of organised college play on record.
pub const FIRST_SEASON: i32 = 1869;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IngestError {
    #[error("missing input file: {0}")]
    MissingFile(PathBuf),
    #[error("line {line}: malformed row: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("line {line}: tie game (ties are not representable)")]
    TieGame { line: u64 },
    #[error("duplicate coach assignment for {team} in {season}")]
    DuplicateAssignment { season: i32, team: String },
    #[error("alias chain: `{raw}` maps to `{canonical}`, which is itself remapped to `{next}`")]
    AliasChain {
        raw: String,
        canonical: String,
        next: String,
    },
    #[error("no games in season {0}")]
    EmptySeason(i32),
    #[error("{} row errors, first: {}", .0.len(), .0[0])]
    Rows(Vec<IngestError>),
    #[error("i/o error on {path}: {message}")]
    Io { path: PathBuf, message: String },
}

impl IngestError {
    /// Flattens a possibly aggregated error into its individual row errors.
    pub fn into_list(self) -> Vec<IngestError> {
        match self {
            IngestError::Rows(list) => list,
            other => vec![other],
        }
    }

    fn from_list(mut list: Vec<IngestError>) -> Self {
        if list.len() == 1 {
            list.pop().unwrap()
        } else {
            IngestError::Rows(list)
        }
    }
}

/// One played game. `team_a` and `team_b` are canonical ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GameRecord {
    pub season: i32,
    pub date: Option<NaiveDate>,
    pub team_a: String,
    pub score_a: u32,
    pub team_b: String,
    pub score_b: u32,
}

impl GameRecord {
    pub fn winner(&self) -> &str {
        if self.score_a > self.score_b {
            &self.team_a
        } else {
            &self.team_b
        }
    }

    pub fn loser(&self) -> &str {
        if self.score_a > self.score_b {
            &self.team_b
        } else {
            &self.team_a
        }
    }

    /// Absolute point difference; never zero for a valid record.
    pub fn margin(&self) -> u32 {
        self.score_a.abs_diff(self.score_b)
    }

    /// Signed margin from `team_a`'s point of view.
    pub fn signed_margin(&self) -> i64 {
        i64::from(self.score_a) - i64::from(self.score_b)
    }

    pub fn involves(&self, team: &str) -> bool {
        self.team_a == team || self.team_b == team
    }

    fn sort_key(&self) -> (&str, &str, Option<NaiveDate>, u32, u32) {
        (
            &self.team_a,
            &self.team_b,
            self.date,
            self.score_a,
            self.score_b,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoachAssignment {
    pub season: i32,
    pub team: String,
    pub coach: String,
}

/// Explicit raw-name to canonical-name mapping.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AliasTable {
    entries: BTreeMap<String, String>,
}

impl AliasTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a table, rejecting chains (`a -> b` together with `b -> c`).
    pub fn from_pairs<I, S, T>(pairs: I) -> Result<Self, IngestError>
    where
        I: IntoIterator<Item = (S, T)>,
        S: Into<String>,
        T: Into<String>,
    {
        let mut entries = BTreeMap::new();
        for (raw, canonical) in pairs {
            let (raw, canonical) = (raw.into(), canonical.into());
            if raw != canonical {
                entries.insert(raw, canonical);
            }
        }
        for (raw, canonical) in &entries {
            if let Some(next) = entries.get(canonical) {
                return Err(IngestError::AliasChain {
                    raw: raw.clone(),
                    canonical: canonical.clone(),
                    next: next.clone(),
                });
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self, IngestError> {
        let mut reader = open_csv(path, &ALIAS_HEADER)?;
        let mut pairs = Vec::new();
        let mut errors = Vec::new();
        for record in reader.records() {
            match record {
                Ok(rec) => {
                    let line = line_of(&rec);
                    let raw = rec.get(0).unwrap_or("").trim();
                    let canonical = rec.get(1).unwrap_or("").trim();
                    if rec.len() != 2 || raw.is_empty() || canonical.is_empty() {
                        errors.push(malformed(line, "expected `raw,canonical`"));
                    } else {
                        pairs.push((raw.to_string(), canonical.to_string()));
                    }
                }
                Err(err) => errors.push(csv_error(&err)),
            }
        }
        if !errors.is_empty() {
            return Err(IngestError::from_list(errors));
        }
        Self::from_pairs(pairs)
    }

    /// Canonical form of `name`; identity when no alias is registered.
    pub fn canonical<'a>(&'a self, name: &'a str) -> &'a str {
        self.entries.get(name).map(String::as_str).unwrap_or(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

/// Games and coaches of a single season, canonically ordered.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeasonDataset {
    pub season: i32,
    pub games: Vec<GameRecord>,
    pub coaches: Vec<CoachAssignment>,
    /// Teams that play in `games` but have no coach row this season.
    pub unmatched_teams: Vec<String>,
}

impl SeasonDataset {
    /// Sorted, deduplicated ids of every team appearing in the games.
    pub fn teams(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self
            .games
            .iter()
            .flat_map(|g| [g.team_a.as_str(), g.team_b.as_str()])
            .collect();
        set.into_iter().map(str::to_string).collect()
    }

    /// Team to coach mapping for the season.
    pub fn coach_map(&self) -> BTreeMap<String, String> {
        self.coaches
            .iter()
            .map(|c| (c.team.clone(), c.coach.clone()))
            .collect()
    }

    pub fn coach_of(&self, team: &str) -> Option<&str> {
        self.coaches
            .iter()
            .find(|c| c.team == team)
            .map(|c| c.coach.as_str())
    }

    /// Re-derives canonical ordering and `unmatched_teams` after the game
    /// list has been edited.
    pub fn normalized(self) -> SeasonDataset {
        let SeasonDataset {
            season,
            mut games,
            mut coaches,
            ..
        } = self;
        sort_games(&mut games);
        coaches.sort_by(|a, b| a.team.cmp(&b.team));
        let unmatched_teams = unmatched(&games, &coaches);
        SeasonDataset {
            season,
            games,
            coaches,
            unmatched_teams,
        }
    }
}

fn sort_games(games: &mut [GameRecord]) {
    games.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
}

fn unmatched(games: &[GameRecord], coaches: &[CoachAssignment]) -> Vec<String> {
    let coached: BTreeSet<&str> = coaches.iter().map(|c| c.team.as_str()).collect();
    let mut out: BTreeSet<&str> = BTreeSet::new();
    for g in games {
        for team in [g.team_a.as_str(), g.team_b.as_str()] {
            if !coached.contains(team) {
                out.insert(team);
            }
        }
    }
    out.into_iter().map(str::to_string).collect()
}

fn open_csv(path: &Path, header: &[&str]) -> Result<csv::Reader<File>, IngestError> {
    let file = File::open(path).map_err(|_| IngestError::MissingFile(path.to_path_buf()))?;
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .flexible(true)
        .has_headers(true)
        .from_reader(file);
    let found = reader.headers().map_err(|e| csv_error(&e))?.clone();
    let found: Vec<&str> = found.iter().map(str::trim).collect();
    if found != header {
        return Err(malformed(
            1,
            &format!(
                "expected header `{}`, found `{}`",
                header.join(","),
                found.join(",")
            ),
        ));
    }
    Ok(reader)
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map(|p| p.line()).unwrap_or(0)
}

fn malformed(line: u64, reason: &str) -> IngestError {
    IngestError::MalformedRow {
        line,
        reason: reason.to_string(),
    }
}

fn csv_error(err: &csv::Error) -> IngestError {
    let line = err.position().map(|p| p.line()).unwrap_or(0);
    malformed(line, &err.to_string())
}

fn current_year() -> i32 {
    chrono::Utc::now().year()
}

fn parse_season(field: &str, line: u64) -> Result<i32, IngestError> {
    let season: i32 = field
        .trim()
        .parse()
        .map_err(|_| malformed(line, &format!("invalid season `{field}`")))?;
    if season < FIRST_SEASON || season > current_year() {
        return Err(malformed(line, &format!("season {season} out of range")));
    }
    Ok(season)
}

fn parse_score(field: &str, line: u64) -> Result<u32, IngestError> {
    field
        .trim()
        .parse()
        .map_err(|_| malformed(line, &format!("invalid score `{field}`")))
}

fn parse_game_row(
    rec: &csv::StringRecord,
    aliases: &AliasTable,
) -> Result<GameRecord, IngestError> {
    let line = line_of(rec);
    if rec.len() != GAMES_HEADER.len() {
        return Err(malformed(
            line,
            &format!(
                "expected {} fields, found {}",
                GAMES_HEADER.len(),
                rec.len()
            ),
        ));
    }
    let season = parse_season(&rec[0], line)?;
    let date = match rec[1].trim() {
        "" => None,
        s => Some(
            NaiveDate::parse_from_str(s, "%Y-%m-%d")
                .map_err(|_| malformed(line, &format!("invalid date `{s}`")))?,
        ),
    };
    let team_a = aliases.canonical(rec[2].trim()).to_string();
    let score_a = parse_score(&rec[3], line)?;
    let team_b = aliases.canonical(rec[4].trim()).to_string();
    let score_b = parse_score(&rec[5], line)?;
    if team_a.is_empty() || team_b.is_empty() {
        return Err(malformed(line, "empty team name"));
    }
    if team_a == team_b {
        return Err(malformed(line, &format!("team `{team_a}` plays itself")));
    }
    if score_a == score_b {
        return Err(IngestError::TieGame { line });
    }
    Ok(GameRecord {
        season,
        date,
        team_a,
        score_a,
        team_b,
        score_b,
    })
}

/// Valid games plus every rejected row, for reporting.
#[derive(Debug, Clone, Default)]
pub struct GamesReport {
    pub games: Vec<GameRecord>,
    pub errors: Vec<IngestError>,
}

/// Parses a games file, collecting bad rows instead of stopping at the first.
/// Only a missing file or a wrong header is fatal here.
pub fn read_games(path: &Path, aliases: &AliasTable) -> Result<GamesReport, IngestError> {
    let mut reader = open_csv(path, &GAMES_HEADER)?;
    let mut report = GamesReport::default();
    for record in reader.records() {
        match record.map_err(|e| csv_error(&e)) {
            Ok(rec) => match parse_game_row(&rec, aliases) {
                Ok(game) => report.games.push(game),
                Err(err) => report.errors.push(err),
            },
            Err(err) => report.errors.push(err),
        }
    }
    Ok(report)
}

/// Parses a games file. Any invalid row makes the whole parse fail; all row
/// errors are returned together (a single error is returned unwrapped).
pub fn parse_games(path: &Path, aliases: &AliasTable) -> Result<Vec<GameRecord>, IngestError> {
    let report = read_games(path, aliases)?;
    if report.errors.is_empty() {
        Ok(report.games)
    } else {
        Err(IngestError::from_list(report.errors))
    }
}

pub fn parse_coaches(
    path: &Path,
    aliases: &AliasTable,
) -> Result<Vec<CoachAssignment>, IngestError> {
    let mut reader = open_csv(path, &COACHES_HEADER)?;
    let mut out: Vec<CoachAssignment> = Vec::new();
    let mut seen: BTreeSet<(i32, String)> = BTreeSet::new();
    let mut errors = Vec::new();
    for record in reader.records() {
        let rec = match record {
            Ok(rec) => rec,
            Err(err) => {
                errors.push(csv_error(&err));
                continue;
            }
        };
        let line = line_of(&rec);
        if rec.len() != COACHES_HEADER.len() {
            errors.push(malformed(line, "expected `season,team,coach`"));
            continue;
        }
        let season = match parse_season(&rec[0], line) {
            Ok(s) => s,
            Err(err) => {
                errors.push(err);
                continue;
            }
        };
        let team = aliases.canonical(rec[1].trim()).to_string();
        let coach = aliases.canonical(rec[2].trim()).to_string();
        if team.is_empty() || coach.is_empty() {
            errors.push(malformed(line, "empty team or coach"));
            continue;
        }
        if !seen.insert((season, team.clone())) {
            errors.push(IngestError::DuplicateAssignment { season, team });
            continue;
        }
        out.push(CoachAssignment {
            season,
            team,
            coach,
        });
    }
    if errors.is_empty() {
        Ok(out)
    } else {
        Err(IngestError::from_list(errors))
    }
}

/// Restricts games and coaches to `season` and puts them in canonical order
/// (games by team ids then date, coaches by team).
pub fn build_season_dataset(
    games: &[GameRecord],
    coaches: &[CoachAssignment],
    season: i32,
) -> Result<SeasonDataset, IngestError> {
    let games: Vec<GameRecord> = games
        .iter()
        .filter(|g| g.season == season)
        .cloned()
        .collect();
    if games.is_empty() {
        return Err(IngestError::EmptySeason(season));
    }
    let coaches: Vec<CoachAssignment> = coaches
        .iter()
        .filter(|c| c.season == season)
        .cloned()
        .collect();
    Ok(SeasonDataset {
        season,
        games,
        coaches,
        unmatched_teams: Vec::new(),
    }
    .normalized())
}

/// Sorted list of distinct seasons present in `games`.
pub fn seasons_of(games: &[GameRecord]) -> Vec<i32> {
    let set: BTreeSet<i32> = games.iter().map(|g| g.season).collect();
    set.into_iter().collect()
}

pub fn write_games_csv<W: Write>(games: &[GameRecord], out: W) -> Result<(), csv::Error> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(GAMES_HEADER)?;
    for g in games {
        let date = g
            .date
            .map(|d| d.format("%Y-%m-%d").to_string())
            .unwrap_or_default();
        writer.write_record([
            g.season.to_string(),
            date,
            g.team_a.clone(),
            g.score_a.to_string(),
            g.team_b.clone(),
            g.score_b.to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

pub fn write_coaches_csv<W: Write>(coaches: &[CoachAssignment], out: W) -> Result<(), csv::Error> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(COACHES_HEADER)?;
    for c in coaches {
        writer.write_record([c.season.to_string(), c.team.clone(), c.coach.clone()])?;
    }
    writer.flush()?;
    Ok(())
}

/// Reads a whole file into a string, mapping a missing file to `MissingFile`.
pub fn read_to_string(path: &Path) -> Result<String, IngestError> {
    let mut file = File::open(path).map_err(|_| IngestError::MissingFile(path.to_path_buf()))?;
    let mut buf = String::new();
    file.read_to_string(&mut buf).map_err(|e| IngestError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(buf)
}
