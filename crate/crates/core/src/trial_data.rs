//! Coded approach trials, inter-coder reliability and cue statistics.
//!
//! Trials arrive as CSV with the header
//! `participant,trial,d_h,v_r,cues,cp,coder`, where `cues` is a
//! `;`-separated list of startle/surprise cue tokens (possibly empty) and
//! `cp` is the contact-perception flag (`1`/`0`). A trial counts as an
//! involuntary motion occurrence (IMO) iff at least one cue was coded.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const TRIAL_HEADER: [&str; 7] = ["participant", "trial", "d_h", "v_r", "cues", "cp", "coder"];
pub const PAIRS_HEADER: [&str; 3] = ["key", "coder_a", "coder_b"];

#[derive(Debug, Error)]
pub enum TrialError {
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("line {line}: unknown cue token {token:?}")]
    UnknownCue { line: u64, token: String },
    #[error("unexpected header `{found}`, expected `{expected}`")]
    Header { found: String, expected: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("annotation pair has no items")]
    EmptyAnnotation,
    #[error("kappa {0} outside [-1, 1]")]
    KappaOutOfRange(f64),
    #[error("trial {participant}#{trial_index}: coders disagree on approach distance or velocity")]
    InconsistentTrial {
        participant: String,
        trial_index: u32,
    },
    #[error("no trials coded by both {coder_a} and {coder_b}")]
    NoCommonTrials { coder_a: String, coder_b: String },
}

/// Which expressive channel a cue is observed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CueChannel {
    Facial,
    GesturePosture,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CueCategory {
    Startle,
    Surprise,
    Both,
}

/// Closed vocabulary of startle/surprise cues.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CueCode {
    /// rapid eyeblinks
    RE,
    /// lowered eyebrows
    LE,
    /// closed eyes
    CE,
    /// tightened eyelids
    TE,
    /// horizontally stretched lips
    HSL,
    /// tightened neck
    TN,
    /// delayed felt smile (relief)
    DFS,
    /// evasive head movements
    EHM,
    /// evasive trunk movements
    ETM,
    /// shoulder jerks
    SJ,
    /// body twitches
    BT,
    /// body freezes
    BF,
    /// raised eyebrows
    REB,
    /// widened eyes
    WE,
    /// raised upper eyelids
    RUE,
    /// open jaws
    OJ,
    /// relaxed lips
    RL,
}

impl CueCode {
    pub const ALL: [CueCode; 17] = [
        CueCode::RE,
        CueCode::LE,
        CueCode::CE,
        CueCode::TE,
        CueCode::HSL,
        CueCode::TN,
        CueCode::DFS,
        CueCode::EHM,
        CueCode::ETM,
        CueCode::SJ,
        CueCode::BT,
        CueCode::BF,
        CueCode::REB,
        CueCode::WE,
        CueCode::RUE,
        CueCode::OJ,
        CueCode::RL,
    ];

    pub fn token(self) -> &'static str {
        match self {
            CueCode::RE => "RE",
            CueCode::LE => "LE",
            CueCode::CE => "CE",
            CueCode::TE => "TE",
            CueCode::HSL => "HSL",
            CueCode::TN => "TN",
            CueCode::DFS => "DFS",
            CueCode::EHM => "EHM",
            CueCode::ETM => "ETM",
            CueCode::SJ => "SJ",
            CueCode::BT => "BT",
            CueCode::BF => "BF",
            CueCode::REB => "REB",
            CueCode::WE => "WE",
            CueCode::RUE => "RUE",
            CueCode::OJ => "OJ",
            CueCode::RL => "RL",
        }
    }

    pub fn category(self) -> CueCategory {
        use CueCode::*;
        match self {
            RE | LE | CE | TE | HSL | TN | DFS | SJ | BT => CueCategory::Startle,
            REB | WE | RUE | OJ | RL => CueCategory::Surprise,
            EHM | ETM | BF => CueCategory::Both,
        }
    }

    pub fn channel(self) -> CueChannel {
        use CueCode::*;
        match self {
            RE | LE | CE | TE | HSL | TN | DFS | REB | WE | RUE | OJ | RL => CueChannel::Facial,
            EHM | ETM | SJ | BT | BF => CueChannel::GesturePosture,
        }
    }
}

impl fmt::Display for CueCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for CueCode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CueCode::ALL
            .iter()
            .copied()
            .find(|c| c.token() == s)
            .ok_or_else(|| s.to_string())
    }
}

/// One robot approach as coded by one coder.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub participant: String,
    /// 1 is the first (unexpected) approach.
    pub trial_index: u32,
    /// Human-robot distance at the stop point, meters.
    pub distance: f64,
    /// Approach velocity, m/s.
    pub velocity: f64,
    pub cues: BTreeSet<CueCode>,
    pub contact_perception: bool,
    pub coder: String,
}

impl TrialRecord {
    pub fn is_imo(&self) -> bool {
        !self.cues.is_empty()
    }
}

/// Parse a trials CSV stream.
pub fn parse_trials<R: Read>(reader: R) -> Result<Vec<TrialRecord>, TrialError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    check_header(rdr.headers()?, &TRIAL_HEADER)?;

    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| match e.position() {
            Some(p) => TrialError::Parse {
                line: p.line(),
                message: e.to_string(),
            },
            None => TrialError::Csv(e),
        })?;
        let line = row.position().map_or(0, |p| p.line());
        out.push(parse_trial_row(&row, line)?);
    }
    Ok(out)
}

fn check_header(found: &csv::StringRecord, expected: &[&str]) -> Result<(), TrialError> {
    if found.iter().ne(expected.iter().copied()) {
        return Err(TrialError::Header {
            found: found.iter().collect::<Vec<_>>().join(","),
            expected: expected.join(","),
        });
    }
    Ok(())
}

fn parse_err(line: u64, message: impl Into<String>) -> TrialError {
    TrialError::Parse {
        line,
        message: message.into(),
    }
}

fn parse_flag(field: &str, line: u64, name: &str) -> Result<bool, TrialError> {
    match field {
        "1" | "true" => Ok(true),
        "0" | "false" => Ok(false),
        other => Err(parse_err(
            line,
            format!("{name}: expected 0 or 1, found {other:?}"),
        )),
    }
}

fn parse_trial_row(row: &csv::StringRecord, line: u64) -> Result<TrialRecord, TrialError> {
    if row.len() != TRIAL_HEADER.len() {
        return Err(parse_err(
            line,
            format!(
                "expected {} fields, found {}",
                TRIAL_HEADER.len(),
                row.len()
            ),
        ));
    }
    let participant = row[0].to_string();
    if participant.is_empty() {
        return Err(parse_err(line, "empty participant id"));
    }
    let trial_index: u32 = row[1].parse().map_err(|_| {
        parse_err(
            line,
            format!("trial: not a positive integer: {:?}", &row[1]),
        )
    })?;
    if trial_index == 0 {
        return Err(parse_err(line, "trial index must be >= 1"));
    }
    let distance: f64 = row[2]
        .parse()
        .map_err(|_| parse_err(line, format!("d_h: not a number: {:?}", &row[2])))?;
    if !(distance.is_finite() && distance >= 0.0) {
        return Err(parse_err(
            line,
            format!("d_h must be >= 0, found {distance}"),
        ));
    }
    let velocity: f64 = row[3]
        .parse()
        .map_err(|_| parse_err(line, format!("v_r: not a number: {:?}", &row[3])))?;
    if !(velocity.is_finite() && velocity > 0.0) {
        return Err(parse_err(
            line,
            format!("v_r must be > 0, found {velocity}"),
        ));
    }
    let mut cues = BTreeSet::new();
    for token in row[4].split(';').map(str::trim).filter(|t| !t.is_empty()) {
        let cue = token
            .parse::<CueCode>()
            .map_err(|token| TrialError::UnknownCue { line, token })?;
        cues.insert(cue);
    }
    let contact_perception = parse_flag(&row[5], line, "cp")?;
    let coder = row[6].to_string();
    if coder.is_empty() {
        return Err(parse_err(line, "empty coder id"));
    }
    Ok(TrialRecord {
        participant,
        trial_index,
        distance,
        velocity,
        cues,
        contact_perception,
        coder,
    })
}

/// Write trials in the same CSV layout [`parse_trials`] accepts.
pub fn write_trials<W: Write>(records: &[TrialRecord], writer: W) -> Result<(), TrialError> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(TRIAL_HEADER)?;
    for r in records {
        let cues = r
            .cues
            .iter()
            .map(|c| c.token())
            .collect::<Vec<_>>()
            .join(";");
        wtr.write_record([
            r.participant.as_str(),
            &r.trial_index.to_string(),
            &r.distance.to_string(),
            &r.velocity.to_string(),
            &cues,
            if r.contact_perception { "1" } else { "0" },
            r.coder.as_str(),
        ])?;
    }
    wtr.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// How several coders' ratings of the same trial are merged into one IMO
/// label.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum MergePolicy {
    /// IMO if any coder saw a cue.
    #[default]
    EitherCoder,
    /// IMO only if every coder of the trial saw a cue.
    BothCoders,
    /// Use a single coder's ratings; trials that coder did not rate are dropped.
    SpecificCoder(String),
}

impl FromStr for MergePolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "either" | "either_coder" => Ok(MergePolicy::EitherCoder),
            "both" | "both_coders" => Ok(MergePolicy::BothCoders),
            _ => match s.strip_prefix("coder:") {
                Some(id) if !id.is_empty() => Ok(MergePolicy::SpecificCoder(id.to_string())),
                _ => Err(format!(
                    "unknown merge policy {s:?} (expected either, both or coder:<id>)"
                )),
            },
        }
    }
}

/// A trial after coder ratings have been merged.
#[derive(Debug, Clone, PartialEq)]
pub struct MergedTrial {
    pub participant: String,
    pub trial_index: u32,
    pub distance: f64,
    pub velocity: f64,
    pub imo: bool,
    pub n_coders: usize,
}

const SAME_TRIAL_TOL: f64 = 1e-9;

/// Collapse per-coder records into one labelled trial per
/// `(participant, trial_index)`, ordered by that key.
pub fn merge_trials(
    records: &[TrialRecord],
    policy: &MergePolicy,
) -> Result<Vec<MergedTrial>, TrialError> {
    let mut groups: BTreeMap<(&str, u32), Vec<&TrialRecord>> = BTreeMap::new();
    for r in records {
        if let MergePolicy::SpecificCoder(id) = policy {
            if &r.coder != id {
                continue;
            }
        }
        groups
            .entry((r.participant.as_str(), r.trial_index))
            .or_default()
            .push(r);
    }

    groups
        .into_iter()
        .map(|((participant, trial_index), rs)| {
            let first = rs[0];
            let consistent = rs.iter().all(|r| {
                (r.distance - first.distance).abs() <= SAME_TRIAL_TOL
                    && (r.velocity - first.velocity).abs() <= SAME_TRIAL_TOL
            });
            if !consistent {
                return Err(TrialError::InconsistentTrial {
                    participant: participant.to_string(),
                    trial_index,
                });
            }
            let imo = match policy {
                MergePolicy::BothCoders => rs.iter().all(|r| r.is_imo()),
                MergePolicy::EitherCoder | MergePolicy::SpecificCoder(_) => {
                    rs.iter().any(|r| r.is_imo())
                }
            };
            Ok(MergedTrial {
                participant: participant.to_string(),
                trial_index,
                distance: first.distance,
                velocity: first.velocity,
                imo,
                n_coders: rs.len(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationItem {
    pub key: String,
    pub coder_a: bool,
    pub coder_b: bool,
}

/// Two coders' binary labels over the same items.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AnnotationPair {
    pub items: Vec<AnnotationItem>,
}

impl AnnotationPair {
    pub fn from_labels(a: &[bool], b: &[bool]) -> Self {
        assert_eq!(a.len(), b.len(), "label sequences differ in length");
        let items = a
            .iter()
            .zip(b)
            .enumerate()
            .map(|(i, (&coder_a, &coder_b))| AnnotationItem {
                key: i.to_string(),
                coder_a,
                coder_b,
            })
            .collect();
        AnnotationPair { items }
    }

    /// Pair the IMO labels of two coders over the trials both of them rated.
    pub fn from_trials(
        records: &[TrialRecord],
        coder_a: &str,
        coder_b: &str,
    ) -> Result<Self, TrialError> {
        let labels = |coder: &str| -> BTreeMap<(&str, u32), bool> {
            records
                .iter()
                .filter(|r| r.coder == coder)
                .map(|r| ((r.participant.as_str(), r.trial_index), r.is_imo()))
                .collect()
        };
        let a = labels(coder_a);
        let b = labels(coder_b);
        let items: Vec<_> = a
            .iter()
            .filter_map(|(key, &la)| {
                b.get(key).map(|&lb| AnnotationItem {
                    key: format!("{}#{}", key.0, key.1),
                    coder_a: la,
                    coder_b: lb,
                })
            })
            .collect();
        if items.is_empty() {
            return Err(TrialError::NoCommonTrials {
                coder_a: coder_a.to_string(),
                coder_b: coder_b.to_string(),
            });
        }
        Ok(AnnotationPair { items })
    }

    /// Parse a `key,coder_a,coder_b` CSV with `0`/`1` labels.
    pub fn parse_csv<R: Read>(reader: R) -> Result<Self, TrialError> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        check_header(rdr.headers()?, &PAIRS_HEADER)?;
        let mut items = Vec::new();
        for row in rdr.records() {
            let row = row?;
            let line = row.position().map_or(0, |p| p.line());
            if row.len() != 3 {
                return Err(parse_err(
                    line,
                    format!("expected 3 fields, found {}", row.len()),
                ));
            }
            items.push(AnnotationItem {
                key: row[0].to_string(),
                coder_a: parse_flag(&row[1], line, "coder_a")?,
                coder_b: parse_flag(&row[2], line, "coder_b")?,
            });
        }
        Ok(AnnotationPair { items })
    }
}

/// 2x2 agreement table; the first word is coder A's label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Contingency {
    pub yes_yes: u64,
    pub yes_no: u64,
    pub no_yes: u64,
    pub no_no: u64,
}

impl Contingency {
    pub fn from_pairs(pairs: &AnnotationPair) -> Self {
        let mut c = Contingency::default();
        for item in &pairs.items {
            match (item.coder_a, item.coder_b) {
                (true, true) => c.yes_yes += 1,
                (true, false) => c.yes_no += 1,
                (false, true) => c.no_yes += 1,
                (false, false) => c.no_no += 1,
            }
        }
        c
    }

    pub fn total(&self) -> u64 {
        self.yes_yes + self.yes_no + self.no_yes + self.no_no
    }

    /// Cohen's kappa.
    ///
    /// Evaluated as `(n·agree − e) / (n² − e)` with
    /// `e = yes_A·yes_B + no_A·no_B`, which is `(p_o − p_e) / (1 − p_e)`
    /// scaled by `n²`. Keeping the numerator and denominator in integers
    /// makes the result exactly symmetric under swapping coders and flipping
    /// labels.
    pub fn kappa(&self) -> Result<f64, TrialError> {
        let n = self.total();
        if n == 0 {
            return Err(TrialError::EmptyAnnotation);
        }
        let agree = self.yes_yes + self.no_no;
        let yes_a = self.yes_yes + self.yes_no;
        let yes_b = self.yes_yes + self.no_yes;
        let chance = yes_a * yes_b + (n - yes_a) * (n - yes_b);
        let denom = n * n - chance;
        if denom == 0 {
            // both coders constant and identical
            return Ok(1.0);
        }
        let num = (n * agree) as i128 - chance as i128;
        Ok(num as f64 / denom as f64)
    }
}

pub fn cohen_kappa(pairs: &AnnotationPair) -> Result<f64, TrialError> {
    Contingency::from_pairs(pairs).kappa()
}

/// Landis–Koch agreement bands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KappaBand {
    Poor,
    Slight,
    Fair,
    Moderate,
    Substantial,
    AlmostPerfect,
}

impl KappaBand {
    pub fn label(self) -> &'static str {
        match self {
            KappaBand::Poor => "poor",
            KappaBand::Slight => "slight",
            KappaBand::Fair => "fair",
            KappaBand::Moderate => "moderate",
            KappaBand::Substantial => "substantial",
            KappaBand::AlmostPerfect => "almost_perfect",
        }
    }
}

impl fmt::Display for KappaBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Bands are `< 0` poor, then upper-inclusive edges at 0.2, 0.4, 0.6 and 0.8;
/// anything above 0.8 is almost perfect.
pub fn kappa_band(kappa: f64) -> Result<KappaBand, TrialError> {
    if !(-1.0..=1.0).contains(&kappa) {
        return Err(TrialError::KappaOutOfRange(kappa));
    }
    Ok(if kappa < 0.0 {
        KappaBand::Poor
    } else if kappa <= 0.2 {
        KappaBand::Slight
    } else if kappa <= 0.4 {
        KappaBand::Fair
    } else if kappa <= 0.6 {
        KappaBand::Moderate
    } else if kappa <= 0.8 {
        KappaBand::Substantial
    } else {
        KappaBand::AlmostPerfect
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaReport {
    pub kappa: f64,
    pub band: KappaBand,
    pub n_items: u64,
    pub contingency: Contingency,
}

impl KappaReport {
    pub fn new(pairs: &AnnotationPair) -> Result<Self, TrialError> {
        let contingency = Contingency::from_pairs(pairs);
        let kappa = contingency.kappa()?;
        Ok(KappaReport {
            kappa,
            band: kappa_band(kappa)?,
            n_items: contingency.total(),
            contingency,
        })
    }

    pub fn to_text(&self) -> String {
        let c = &self.contingency;
        format!(
            "              coder B: yes  coder B: no\n\
             coder A: yes  {:>12}  {:>11}\n\
             coder A: no   {:>12}  {:>11}\n\
             \n\
             items:  {}\n\
             kappa:  {:.3}\n\
             band:   {}\n",
            c.yes_yes, c.yes_no, c.no_yes, c.no_no, self.n_items, self.kappa, self.band
        )
    }
}

/// Total number of coded cues per trial index.
pub fn cue_counts_by_trial_index(records: &[TrialRecord]) -> BTreeMap<u32, usize> {
    let mut counts = BTreeMap::new();
    for r in records {
        *counts.entry(r.trial_index).or_insert(0) += r.cues.len();
    }
    counts
}

/// True when the first approach drew strictly more cues than any later one.
pub fn first_trial_outlier(counts: &BTreeMap<u32, usize>) -> bool {
    let first = counts.get(&1).copied().unwrap_or(0);
    let rest = counts.range(2..).map(|(_, &c)| c).max().unwrap_or(0);
    first > rest
}
