//! Attaches triggers to logged impressions: the trigger of an impression at time
//! `t` is the user's latest click in `[t - window, t)`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureSchema, FieldSpec, RawBehavior, RawSample, SchemaConfig};

/// Four hours.
pub const DEFAULT_WINDOW_SECS: i64 = 14_400;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawLogRecord {
    pub user: u64,
    pub item: u64,
    pub category: u64,
    pub timestamp: i64,
    pub clicked: u8,
}

impl RawLogRecord {
    /// `user \t item \t category \t timestamp \t clicked`
    pub fn parse(text: &str, line: usize) -> Result<Self> {
        let cols: Vec<&str> = text.split('\t').collect();
        const NAMES: [&str; 5] = ["user", "item", "category", "timestamp", "clicked"];
        if cols.len() != NAMES.len() {
            let message = match cols.len() {
                n if n < NAMES.len() => format!("missing column `{}`", NAMES[n]),
                n => format!("{n} columns, expected 5"),
            };
            return Err(Error::Parse { line, message });
        }
        let bad = |k: usize| Error::Parse {
            line,
            message: format!("column `{}`: malformed integer `{}`", NAMES[k], cols[k]),
        };
        let int = |k: usize| cols[k].trim().parse::<u64>().map_err(|_| bad(k));
        let clicked = match int(4)? {
            v @ (0 | 1) => v as u8,
            _ => {
                return Err(Error::Parse {
                    line,
                    message: "column `clicked` must be 0 or 1".into(),
                })
            }
        };
        Ok(Self {
            user: int(0)?,
            item: int(1)?,
            category: int(2)?,
            timestamp: cols[3].trim().parse().map_err(|_| bad(3))?,
            clicked,
        })
    }

    pub fn to_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}",
            self.user, self.item, self.category, self.timestamp, self.clicked
        )
    }
}

pub fn parse_logs(text: &str) -> Result<Vec<RawLogRecord>> {
    text.lines()
        .enumerate()
        .map(|(i, l)| RawLogRecord::parse(l, i + 1))
        .collect()
}

pub fn read_logs(path: impl AsRef<Path>) -> Result<Vec<RawLogRecord>> {
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    parse_logs(&text)
}

/// 1 iff trigger and target share a category.
pub fn assign_aux_label(trigger_category: u64, target_category: u64) -> u8 {
    (trigger_category == target_category) as u8
}

/// A mined impression and the time it was shown.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MinedSample {
    pub timestamp: i64,
    /// Index of the impression in the input log.
    pub impression: usize,
    /// Index of the click chosen as trigger.
    pub trigger: usize,
    pub sample: RawSample,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MineStats {
    pub total: usize,
    pub kept: usize,
    pub dropped: usize,
    pub aux_positive: usize,
}

fn hour_of(ts: i64) -> u64 {
    (ts.rem_euclid(86_400) / 3600) as u64 + 1
}

/// Mines trigger-attached samples from logs sorted by `(user, timestamp)`.
///
/// Every record is an impression. Ties between clicks at the same second go to
/// the later line. The behavior list holds the user's most recent `max_behaviors`
/// clicks before the impression.
pub fn mine_triggers(
    logs: &[RawLogRecord],
    window: i64,
    max_behaviors: usize,
) -> Result<(Vec<MinedSample>, MineStats)> {
    if window <= 0 {
        return Err(Error::Config("mining window must be positive".into()));
    }
    for (i, w) in logs.windows(2).enumerate() {
        if (w[1].user, w[1].timestamp) < (w[0].user, w[0].timestamp) {
            return Err(Error::contract(format!(
                "logs are not sorted by (user, timestamp) at record {}",
                i + 2
            )));
        }
    }
    let mut out = Vec::new();
    let mut stats = MineStats {
        total: logs.len(),
        ..MineStats::default()
    };
    let mut start = 0;
    while start < logs.len() {
        let user = logs[start].user;
        let end = start + logs[start..].iter().take_while(|r| r.user == user).count();
        let group = &logs[start..end];
        // clicks strictly before the current timestamp, in log order
        let mut clicks: Vec<usize> = Vec::new();
        let mut before = 0;
        for (j, rec) in group.iter().enumerate() {
            while group[before].timestamp < rec.timestamp {
                if group[before].clicked == 1 {
                    clicks.push(before);
                }
                before += 1;
            }
            let trigger = clicks
                .last()
                .copied()
                .filter(|&c| group[c].timestamp >= rec.timestamp - window);
            let Some(c) = trigger else {
                stats.dropped += 1;
                continue;
            };
            let trig = &group[c];
            let y_t = assign_aux_label(trig.category, rec.category);
            stats.kept += 1;
            stats.aux_positive += y_t as usize;
            let skip = clicks.len().saturating_sub(max_behaviors);
            out.push(MinedSample {
                timestamp: rec.timestamp,
                impression: start + j,
                trigger: start + c,
                sample: RawSample {
                    user: vec![user],
                    behaviors: clicks[skip..]
                        .iter()
                        .map(|&b| RawBehavior {
                            attrs: vec![group[b].item, group[b].category],
                            timestamp: group[b].timestamp,
                        })
                        .collect(),
                    trigger: vec![trig.item, trig.category],
                    target: vec![rec.item, rec.category],
                    context: vec![hour_of(rec.timestamp)],
                    label: rec.clicked,
                    trigger_label: y_t,
                },
            });
        }
        start = end;
    }
    Ok((out, stats))
}

/// Layout for mined samples: the logs only carry item and category, so hard
/// filtering runs on category alone.
pub fn mining_schema(logs: &[RawLogRecord], max_behaviors: usize) -> Result<FeatureSchema> {
    let vocab = |f: fn(&RawLogRecord) -> u64| logs.iter().map(f).max().unwrap_or(0) as usize + 2;
    let items = vec![
        FieldSpec::new("item_id", vocab(|r| r.item), 12),
        FieldSpec::new("category", vocab(|r| r.category), 4),
    ];
    FeatureSchema::build(SchemaConfig {
        max_behaviors,
        hard_filter: vec!["category".into()],
        user: vec![FieldSpec::new("user_id", vocab(|r| r.user), 8)],
        behavior: items.clone(),
        trigger: items.clone(),
        target: items,
        context: vec![FieldSpec::new("hour", 25, 4)],
    })
}
