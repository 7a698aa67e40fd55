//! Membership inference, attribute inference and model stealing.

mod attribute;
mod membership;
mod net;
mod stealing;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::threat::{Access, ThreatModel};

pub use attribute::{attribute_attack, AttributeResult};
pub use membership::{
    membership_features, membership_schema, mia_evaluate, mia_train_on_shadow, mia_train_partial,
    mia_train_shadow, variant_for,
};
pub use net::{AttackConfig, AttackModel, AttackNet, AttackVariant, Branch};
pub use stealing::{agreement, agreement_from_posteriors, steal_model, steal_model_with_init};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    #[serde(rename = "mia")]
    Membership,
    Attribute,
    Stealing,
}

impl AttackKind {
    pub const ALL: [AttackKind; 3] = [
        AttackKind::Membership,
        AttackKind::Attribute,
        AttackKind::Stealing,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AttackKind::Membership => "mia",
            AttackKind::Attribute => "attribute",
            AttackKind::Stealing => "stealing",
        }
    }

    /// Membership inference runs everywhere, attribute inference needs
    /// white-box access and stealing is a black-box attack.
    pub fn applies_to(self, threat: ThreatModel) -> bool {
        match self {
            AttackKind::Membership => true,
            AttackKind::Attribute => threat.access == Access::WhiteBox,
            AttackKind::Stealing => threat.access == Access::BlackBox,
        }
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AttackKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown attack {s:?}")))
    }
}
