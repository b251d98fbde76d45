//! Raw impression records, their tab-separated text form, and integer encoding.
//!
//! Column order: one column per user field, the behavior list, one column per
//! trigger field, one per target field, one per context field, then `y` and
//! `y_t`. The behavior column is a comma-separated list of tuples
//! `(attr_1,...,attr_k,timestamp)` with one attribute per behavior field.

use serde::{Deserialize, Serialize};

use super::schema::FeatureSchema;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawBehavior {
    pub attrs: Vec<u64>,
    pub timestamp: i64,
}

/// One impression with raw (unencoded) IDs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawSample {
    pub user: Vec<u64>,
    pub behaviors: Vec<RawBehavior>,
    pub trigger: Vec<u64>,
    pub target: Vec<u64>,
    pub context: Vec<u64>,
    pub label: u8,
    pub trigger_label: u8,
}

/// An impression mapped onto vocabulary indices.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct EncodedSample {
    pub user: Vec<usize>,
    /// Oldest first; one row per kept behavior, one column per behavior field.
    pub behaviors: Vec<Vec<usize>>,
    pub trigger: Vec<usize>,
    pub target: Vec<usize>,
    pub context: Vec<usize>,
    pub label: u8,
    pub trigger_label: u8,
}

impl EncodedSample {
    pub fn valid_len(&self) -> usize {
        self.behaviors.len()
    }
}

/// Raw IDs `1..vocab_size` are their own index; anything else lands in bucket 0.
pub fn vocab_index(raw: u64, vocab_size: usize) -> usize {
    if raw >= 1 && (raw as usize) < vocab_size {
        raw as usize
    } else {
        0
    }
}

fn column_names(schema: &FeatureSchema) -> Vec<String> {
    let c = schema.config();
    let mut names: Vec<String> = c.user.iter().map(|f| format!("user.{}", f.name)).collect();
    names.push("behaviors".into());
    names.extend(c.trigger.iter().map(|f| format!("trigger.{}", f.name)));
    names.extend(c.target.iter().map(|f| format!("target.{}", f.name)));
    names.extend(c.context.iter().map(|f| format!("context.{}", f.name)));
    names.push("y".into());
    names.push("y_t".into());
    names
}

fn parse_int<T: std::str::FromStr>(text: &str, line: usize, column: &str) -> Result<T> {
    text.trim().parse().map_err(|_| Error::Parse {
        line,
        message: format!("column `{column}`: malformed integer `{text}`"),
    })
}

fn parse_behaviors(text: &str, fields: usize, line: usize) -> Result<Vec<RawBehavior>> {
    let text = text.trim();
    let mut out = Vec::new();
    let mut rest = text;
    while !rest.is_empty() {
        let body_start = rest.strip_prefix('(').ok_or_else(|| Error::Parse {
            line,
            message: format!("column `behaviors`: expected `(` at `{rest}`"),
        })?;
        let close = body_start.find(')').ok_or_else(|| Error::Parse {
            line,
            message: "column `behaviors`: unterminated tuple".into(),
        })?;
        let parts: Vec<&str> = body_start[..close].split(',').collect();
        if parts.len() != fields + 1 {
            return Err(Error::Parse {
                line,
                message: format!(
                    "column `behaviors`: tuple has {} values, expected {}",
                    parts.len(),
                    fields + 1
                ),
            });
        }
        let attrs = parts[..fields]
            .iter()
            .map(|p| parse_int(p, line, "behaviors"))
            .collect::<Result<Vec<u64>>>()?;
        let timestamp = parse_int(parts[fields], line, "behaviors")?;
        out.push(RawBehavior { attrs, timestamp });
        rest = &body_start[close + 1..];
        if let Some(r) = rest.strip_prefix(',') {
            rest = r;
        } else if !rest.is_empty() {
            return Err(Error::Parse {
                line,
                message: "column `behaviors`: expected `,` between tuples".into(),
            });
        }
    }
    Ok(out)
}

fn parse_label(text: &str, line: usize, column: &str) -> Result<u8> {
    match parse_int::<u8>(text, line, column)? {
        v @ (0 | 1) => Ok(v),
        v => Err(Error::Parse {
            line,
            message: format!("column `{column}`: label must be 0 or 1, got {v}"),
        }),
    }
}

impl RawSample {
    /// Parses one tab-separated record; `line` is 1-based and only used in errors.
    pub fn parse(text: &str, line: usize, schema: &FeatureSchema) -> Result<Self> {
        let names = column_names(schema);
        let cols: Vec<&str> = text.split('\t').collect();
        if cols.len() < names.len() {
            return Err(Error::Parse {
                line,
                message: format!("missing column `{}`", names[cols.len()]),
            });
        }
        if cols.len() > names.len() {
            return Err(Error::Parse {
                line,
                message: format!("{} columns, expected {}", cols.len(), names.len()),
            });
        }
        let c = schema.config();
        let ids = |from: usize, n: usize| -> Result<Vec<u64>> {
            (from..from + n)
                .map(|k| parse_int(cols[k], line, &names[k]))
                .collect()
        };
        let user = ids(0, c.user.len())?;
        let behaviors = parse_behaviors(cols[c.user.len()], c.behavior.len(), line)?;
        let at = c.user.len() + 1;
        let trigger = ids(at, c.trigger.len())?;
        let at = at + c.trigger.len();
        let target = ids(at, c.target.len())?;
        let at = at + c.target.len();
        let context = ids(at, c.context.len())?;
        let n = names.len();
        let label = parse_label(cols[n - 2], line, "y")?;
        let trigger_label = parse_label(cols[n - 1], line, "y_t")?;
        Ok(Self {
            user,
            behaviors,
            trigger,
            target,
            context,
            label,
            trigger_label,
        })
    }

    pub fn to_line(&self) -> String {
        let ids = |v: &[u64]| v.iter().map(u64::to_string).collect::<Vec<_>>();
        let mut cols = ids(&self.user);
        cols.push(
            self.behaviors
                .iter()
                .map(|b| {
                    let mut parts = ids(&b.attrs);
                    parts.push(b.timestamp.to_string());
                    format!("({})", parts.join(","))
                })
                .collect::<Vec<_>>()
                .join(","),
        );
        cols.extend(ids(&self.trigger));
        cols.extend(ids(&self.target));
        cols.extend(ids(&self.context));
        cols.push(self.label.to_string());
        cols.push(self.trigger_label.to_string());
        cols.join("\t")
    }

    /// Maps raw IDs to vocabulary indices, orders behaviors by time (stable) and
    /// keeps only the most recent `max_behaviors`.
    pub fn encode(&self, schema: &FeatureSchema) -> Result<EncodedSample> {
        let c = schema.config();
        let check = |what: &str, got: usize, want: usize| {
            if got == want {
                Ok(())
            } else {
                Err(Error::contract(format!(
                    "{what}: {got} values for {want} fields"
                )))
            }
        };
        check("user", self.user.len(), c.user.len())?;
        check("trigger", self.trigger.len(), c.trigger.len())?;
        check("target", self.target.len(), c.target.len())?;
        check("context", self.context.len(), c.context.len())?;
        let map = |raw: &[u64], fields: &[super::FieldSpec]| -> Vec<usize> {
            raw.iter()
                .zip(fields)
                .map(|(&r, f)| vocab_index(r, f.vocab_size))
                .collect()
        };
        let mut ordered: Vec<&RawBehavior> = self.behaviors.iter().collect();
        ordered.sort_by_key(|b| b.timestamp);
        let skip = ordered.len().saturating_sub(c.max_behaviors);
        let behaviors = ordered[skip..]
            .iter()
            .map(|b| {
                check("behavior", b.attrs.len(), c.behavior.len())?;
                Ok(map(&b.attrs, &c.behavior))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(EncodedSample {
            user: map(&self.user, &c.user),
            behaviors,
            trigger: map(&self.trigger, &c.trigger),
            target: map(&self.target, &c.target),
            context: map(&self.context, &c.context),
            label: self.label,
            trigger_label: self.trigger_label,
        })
    }
}

/// Parses and encodes one textual record.
pub fn encode_sample(
    line_text: &str,
    line: usize,
    schema: &FeatureSchema,
) -> Result<EncodedSample> {
    RawSample::parse(line_text, line, schema)?.encode(schema)
}
