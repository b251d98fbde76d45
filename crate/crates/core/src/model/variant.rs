use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Full model or one of its baselines/ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ModelVariant {
    Dihn,
    /// Fusion gated by the scalar intent probability instead of a vector.
    DihnScalar,
    DihnNoHsm,
    /// Soft branch replaced by a masked mean of the behaviors.
    DihnNoSsmMean,
    /// Soft branch replaced by attention with the target as query.
    DihnNoSsmTarget,
    /// Soft branch replaced by attention with the trigger as query.
    DihnNoSsmTrigger,
    /// Soft branch replaced by attention with a projection of `[E_t; E_i]` as query.
    DihnNoSsmConcat,
    /// Target attention only; never sees the trigger.
    DinBaseline,
    /// Separate trigger-query and target-query attention pools.
    Din2Ta,
}

impl ModelVariant {
    pub const ALL: [ModelVariant; 9] = [
        ModelVariant::Dihn,
        ModelVariant::DihnScalar,
        ModelVariant::DihnNoHsm,
        ModelVariant::DihnNoSsmMean,
        ModelVariant::DihnNoSsmTarget,
        ModelVariant::DihnNoSsmTrigger,
        ModelVariant::DihnNoSsmConcat,
        ModelVariant::DinBaseline,
        ModelVariant::Din2Ta,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelVariant::Dihn => "dihn",
            ModelVariant::DihnScalar => "dihn_scalar",
            ModelVariant::DihnNoHsm => "dihn_no_hsm",
            ModelVariant::DihnNoSsmMean => "dihn_no_ssm_mean",
            ModelVariant::DihnNoSsmTarget => "dihn_no_ssm_target",
            ModelVariant::DihnNoSsmTrigger => "dihn_no_ssm_trigger",
            ModelVariant::DihnNoSsmConcat => "dihn_no_ssm_concat",
            ModelVariant::DinBaseline => "din",
            ModelVariant::Din2Ta => "din_2ta",
        }
    }

    /// Row label in ablation reports.
    pub fn label(self) -> &'static str {
        match self {
            ModelVariant::Dihn => "DIHN",
            ModelVariant::DihnScalar => "DIHN(scalar)",
            ModelVariant::DihnNoHsm => "DIHN w/o HSM",
            ModelVariant::DihnNoSsmMean => "DIHN w/o SSM+mean",
            ModelVariant::DihnNoSsmTarget => "DIHN w/o SSM+target",
            ModelVariant::DihnNoSsmTrigger => "DIHN w/o SSM+trigger",
            ModelVariant::DihnNoSsmConcat => "DIHN w/o SSM+concat",
            ModelVariant::DinBaseline => "DIN",
            ModelVariant::Din2Ta => "DIN+2TA",
        }
    }

    /// Whether the intent network (and with it the trigger loss) is present.
    pub fn has_intent(self) -> bool {
        !matches!(self, ModelVariant::DinBaseline | ModelVariant::Din2Ta)
    }

    pub fn has_hard_branch(self) -> bool {
        !matches!(
            self,
            ModelVariant::DihnNoHsm | ModelVariant::DinBaseline | ModelVariant::Din2Ta
        )
    }

    pub fn has_self_attention(self) -> bool {
        matches!(
            self,
            ModelVariant::Dihn | ModelVariant::DihnScalar | ModelVariant::DihnNoHsm
        )
    }

    pub fn uses_trigger(self) -> bool {
        self != ModelVariant::DinBaseline
    }
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        let alias = match key.as_str() {
            "din_baseline" => "din",
            "din_2ta_baseline" | "din2ta" => "din_2ta",
            k => k,
        };
        Self::ALL
            .into_iter()
            .find(|v| v.name() == alias)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }
}

impl TryFrom<String> for ModelVariant {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ModelVariant> for String {
    fn from(v: ModelVariant) -> String {
        v.name().to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_parse_back() {
        for v in ModelVariant::ALL {
            assert_eq!(v.name().parse::<ModelVariant>().unwrap(), v);
            assert_eq!(
                v.to_string()
                    .to_uppercase()
                    .parse::<ModelVariant>()
                    .unwrap(),
                v
            );
        }
        assert_eq!(
            "DIN_2TA_baseline".parse::<ModelVariant>().unwrap(),
            ModelVariant::Din2Ta
        );
    }

    #[test]
    fn unknown_variant_is_a_config_error() {
        assert!(matches!(
            "dien".parse::<ModelVariant>(),
            Err(Error::Config(_))
        ));
    }
}
