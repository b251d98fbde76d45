use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// One categorical field: `vocab_size` IDs (index 0 is the OOV bucket) embedded in `dim` floats.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    pub vocab_size: usize,
    pub dim: usize,
}

impl FieldSpec {
    pub fn new(name: &str, vocab_size: usize, dim: usize) -> Self {
        Self {
            name: name.to_string(),
            vocab_size,
            dim,
        }
    }
}

fn default_hard_filter() -> Vec<String> {
    vec!["category".into(), "destination".into(), "tag".into()]
}

/// Serializable schema description, as stored in the schema file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaConfig {
    pub max_behaviors: usize,
    /// Item attributes used to hard-filter the behavior sequence.
    #[serde(default = "default_hard_filter")]
    pub hard_filter: Vec<String>,
    pub user: Vec<FieldSpec>,
    pub behavior: Vec<FieldSpec>,
    pub trigger: Vec<FieldSpec>,
    pub target: Vec<FieldSpec>,
    #[serde(default)]
    pub context: Vec<FieldSpec>,
}

impl SchemaConfig {
    /// Item-side layout shared by behaviors, trigger and target.
    pub fn item_fields(
        item_vocab: usize,
        categories: usize,
        destinations: usize,
        tags: usize,
    ) -> Vec<FieldSpec> {
        vec![
            FieldSpec::new("item_id", item_vocab, 6),
            FieldSpec::new("category", categories, 4),
            FieldSpec::new("destination", destinations, 3),
            FieldSpec::new("tag", tags, 3),
        ]
    }

    /// The default desk-scale layout: item side D = 16, user side 12, context 4, T_max = 50.
    pub fn desk_scale() -> Self {
        let items = Self::item_fields(1001, 21, 11, 31);
        Self {
            max_behaviors: 50,
            hard_filter: default_hard_filter(),
            user: vec![
                FieldSpec::new("user_id", 501, 8),
                FieldSpec::new("segment", 9, 4),
            ],
            behavior: items.clone(),
            trigger: items.clone(),
            target: items,
            context: vec![FieldSpec::new("hour", 25, 4)],
        }
    }
}

/// A validated [`SchemaConfig`] with derived dimensions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FeatureSchema {
    config: SchemaConfig,
    hard_filter_fields: Vec<usize>,
}

fn check_fields(category: &str, fields: &[FieldSpec], allow_empty: bool) -> Result<()> {
    if fields.is_empty() && !allow_empty {
        return Err(Error::Schema(format!(
            "category `{category}` has no fields"
        )));
    }
    for (i, f) in fields.iter().enumerate() {
        if f.vocab_size < 2 {
            return Err(Error::Schema(format!(
                "{category}.{} needs vocab_size >= 2 (OOV bucket plus one id), got {}",
                f.name, f.vocab_size
            )));
        }
        if f.dim == 0 {
            return Err(Error::Schema(format!("{category}.{} has zero dim", f.name)));
        }
        if fields[..i].iter().any(|g| g.name == f.name) {
            return Err(Error::Schema(format!(
                "duplicate field {category}.{}",
                f.name
            )));
        }
    }
    Ok(())
}

impl FeatureSchema {
    pub fn build(config: SchemaConfig) -> Result<Self> {
        check_fields("user", &config.user, false)?;
        check_fields("behavior", &config.behavior, false)?;
        check_fields("trigger", &config.trigger, false)?;
        check_fields("target", &config.target, false)?;
        check_fields("context", &config.context, true)?;
        if config.trigger != config.target {
            return Err(Error::Schema(
                "trigger and target must share an identical field layout".into(),
            ));
        }
        // behaviors are looked up in the same item tables as trigger and target
        if config.behavior != config.trigger {
            return Err(Error::Schema(
                "behavior fields must match the trigger/target item layout".into(),
            ));
        }
        if config.max_behaviors == 0 {
            return Err(Error::Schema("max_behaviors must be positive".into()));
        }
        let hard_filter_fields = config
            .hard_filter
            .iter()
            .map(|name| {
                config
                    .behavior
                    .iter()
                    .position(|f| &f.name == name)
                    .ok_or_else(|| {
                        Error::Schema(format!(
                            "hard-filter attribute `{name}` is not a behavior field"
                        ))
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config,
            hard_filter_fields,
        })
    }

    pub fn config(&self) -> &SchemaConfig {
        &self.config
    }

    pub fn max_behaviors(&self) -> usize {
        self.config.max_behaviors
    }

    pub fn user_fields(&self) -> &[FieldSpec] {
        &self.config.user
    }

    pub fn item_fields(&self) -> &[FieldSpec] {
        &self.config.trigger
    }

    pub fn context_fields(&self) -> &[FieldSpec] {
        &self.config.context
    }

    /// Indices (into the item layout) of the hard-filter attributes.
    pub fn hard_filter_fields(&self) -> &[usize] {
        &self.hard_filter_fields
    }

    pub fn user_dim(&self) -> usize {
        self.config.user.iter().map(|f| f.dim).sum()
    }

    /// `D`: width of behavior, trigger and target embeddings.
    pub fn item_dim(&self) -> usize {
        self.config.trigger.iter().map(|f| f.dim).sum()
    }

    pub fn context_dim(&self) -> usize {
        self.config.context.iter().map(|f| f.dim).sum()
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(&self.config).expect("schema config always serializes")
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: SchemaConfig =
            toml::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        Self::build(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(&path, self.to_toml_string()).map_err(|e| Error::io(&path, e))
    }

    /// Hex SHA-256 of the canonical schema text.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
