//! Serializable descriptions of designs and targets, and the glue that
//! turns them into live objects.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::coins::{CompleteRandomization, Dbcd, Erade, PlayTheWinner, SmoothedErade, ThallWathen, DEFAULT_ALPHA, DEFAULT_GAMMA};
use crate::engine::{Design, WarmStart};
use crate::error::{Error, Result};
use crate::metrics::{ReferenceDesign, RpwForm};
use crate::models::Family;
use crate::targets::{
    BiswasMandalTarget, BmForm, FixedTarget, NeymanTarget, RsihrTarget, Target, TargetAllocation, UrnTarget,
    ZhangRosenbergerTarget,
};
use crate::urns::UrnDesign;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "kebab-case")]
pub enum DesignSpec {
    CompleteRandomization,
    PlayTheWinner,
    /// Randomized play-the-winner (`K = 2`) or Wei's rule.
    Rpw { initial: f64 },
    Seu { beta: f64, initial: f64 },
    Dl { immigration: f64 },
    Gdl { beta: f64, immigration: f64 },
    /// Randomly reinforced urn adding `scale * response` own-type balls.
    Rru { initial: f64, scale: f64 },
    Smlp,
    Dbcd { gamma: f64 },
    Erade { alpha: f64 },
    SmoothedErade { gamma: f64 },
    ThallWathen,
}

/// Bare design identifiers, as written in configuration files.
pub const DESIGN_IDS: [&str; 12] =
    ["cr", "ptw", "rpw", "seu", "dl", "gdl", "rru", "smlp", "dbcd", "erade", "smoothed-erade", "thall-wathen"];

impl DesignSpec {
    /// The design with its default parameters.
    pub fn from_id(id: &str) -> Result<Self> {
        Ok(match id {
            "cr" | "complete-randomization" => DesignSpec::CompleteRandomization,
            "ptw" | "play-the-winner" => DesignSpec::PlayTheWinner,
            "rpw" | "wei" => DesignSpec::Rpw { initial: 1.0 },
            "seu" => DesignSpec::Seu { beta: 1.0, initial: 1.0 },
            "dl" => DesignSpec::Dl { immigration: 1.0 },
            "gdl" => DesignSpec::Gdl { beta: 1.0, immigration: 1.0 },
            "rru" => DesignSpec::Rru { initial: 1.0, scale: 1.0 },
            "smlp" => DesignSpec::Smlp,
            "dbcd" => DesignSpec::Dbcd { gamma: DEFAULT_GAMMA },
            "erade" => DesignSpec::Erade { alpha: DEFAULT_ALPHA },
            "smoothed-erade" => DesignSpec::SmoothedErade { gamma: DEFAULT_GAMMA },
            "thall-wathen" => DesignSpec::ThallWathen,
            other => return Err(Error::param(format!("unknown design `{other}`"))),
        })
    }

    pub fn id(&self) -> &'static str {
        match self {
            DesignSpec::CompleteRandomization => "cr",
            DesignSpec::PlayTheWinner => "ptw",
            DesignSpec::Rpw { .. } => "rpw",
            DesignSpec::Seu { .. } => "seu",
            DesignSpec::Dl { .. } => "dl",
            DesignSpec::Gdl { .. } => "gdl",
            DesignSpec::Rru { .. } => "rru",
            DesignSpec::Smlp => "smlp",
            DesignSpec::Dbcd { .. } => "dbcd",
            DesignSpec::Erade { .. } => "erade",
            DesignSpec::SmoothedErade { .. } => "smoothed-erade",
            DesignSpec::ThallWathen => "thall-wathen",
        }
    }

    /// Warm start used when none is configured: coins that divide by the
    /// current proportions need one patient per arm first, and outside the
    /// Bernoulli family the no-data guess is arbitrary enough that two
    /// patients per arm are forced (a variance needs two). Everything else
    /// starts at once.
    pub fn default_warm(&self, family: Family) -> WarmStart {
        match self {
            DesignSpec::CompleteRandomization | DesignSpec::PlayTheWinner => WarmStart::BayesShrinkage,
            _ if family != Family::Bernoulli => WarmStart::RestrictedBlock { m0: 2 },
            DesignSpec::Dbcd { .. } | DesignSpec::Erade { .. } | DesignSpec::SmoothedErade { .. } => {
                WarmStart::RestrictedBlock { m0: 1 }
            }
            _ => WarmStart::BayesShrinkage,
        }
    }

    /// Whether the limit is fixed at the urn allocation whatever the target.
    pub fn urn_only(&self) -> bool {
        matches!(self, DesignSpec::Rpw { .. } | DesignSpec::Dl { .. } | DesignSpec::PlayTheWinner)
    }

    /// Closed-form variance available for this design, if any.
    pub fn reference(&self) -> Option<ReferenceDesign> {
        Some(match self {
            DesignSpec::Rpw { .. } => ReferenceDesign::Rpw { form: RpwForm::Corollary },
            DesignSpec::Seu { .. } => ReferenceDesign::Seu,
            DesignSpec::Dl { .. } => ReferenceDesign::Dl,
            DesignSpec::Gdl { .. } => ReferenceDesign::Gdl,
            DesignSpec::Smlp => ReferenceDesign::Smlp,
            DesignSpec::Dbcd { gamma } => ReferenceDesign::Dbcd { gamma: *gamma },
            DesignSpec::Erade { .. } | DesignSpec::SmoothedErade { .. } => ReferenceDesign::Erade,
            _ => return None,
        })
    }

    pub fn build(&self, k: usize, target: &TargetAllocation, horizon: usize) -> Result<Box<dyn Design>> {
        let t = target.clone();
        Ok(match *self {
            DesignSpec::CompleteRandomization => Box::new(CompleteRandomization::new(k)?),
            DesignSpec::PlayTheWinner => Box::new(PlayTheWinner::new(k)?),
            DesignSpec::Rpw { initial } => Box::new(UrnDesign::wei(k, initial)?),
            DesignSpec::Seu { beta, initial } => Box::new(UrnDesign::seu(t, beta, k, initial)?),
            DesignSpec::Dl { immigration } => Box::new(UrnDesign::drop_the_loser(k, immigration)?),
            DesignSpec::Gdl { beta, immigration } => {
                Box::new(UrnDesign::generalized_drop_the_loser(t, beta, k, immigration)?)
            }
            DesignSpec::Rru { initial, scale } => {
                if !(scale >= 0.0) {
                    return Err(Error::param("reinforcement scale must be nonnegative"));
                }
                Box::new(UrnDesign::rru(k, initial, move |x| scale * x)?)
            }
            DesignSpec::Smlp => Box::new(Dbcd::smlp(t, k)?),
            DesignSpec::Dbcd { gamma } => Box::new(Dbcd::new(t, gamma, k)?),
            DesignSpec::Erade { alpha } => {
                if k != 2 {
                    return Err(Error::Unsupported("two-arm ERADE; use smoothed-erade for more arms".into()));
                }
                Box::new(Erade::new(t, alpha)?)
            }
            DesignSpec::SmoothedErade { gamma } => Box::new(SmoothedErade::new(t, gamma, k)?),
            DesignSpec::ThallWathen => {
                if k != 2 {
                    return Err(Error::Unsupported("Thall-Wathen is defined for two arms".into()));
                }
                Box::new(ThallWathen::new(horizon)?)
            }
        })
    }
}

impl fmt::Display for DesignSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "kebab-case")]
pub enum TargetSpec {
    Urn,
    Neyman,
    Rsihr,
    ZhangRosenberger,
    BiswasMandal { c: f64, form: BmForm },
    Fixed { rho: Vec<f64> },
    Balanced,
}

impl TargetSpec {
    pub fn from_id(id: &str) -> Result<Self> {
        Ok(match id {
            "urn" => TargetSpec::Urn,
            "neyman" => TargetSpec::Neyman,
            "rsihr" => TargetSpec::Rsihr,
            "zr" | "zhang-rosenberger" => TargetSpec::ZhangRosenberger,
            "bm" | "biswas-mandal" => TargetSpec::BiswasMandal { c: 0.0, form: BmForm::Symmetric },
            "fixed" => TargetSpec::Fixed { rho: vec![0.5, 0.5] },
            "balanced" => TargetSpec::Balanced,
            other => return Err(Error::param(format!("unknown target `{other}`"))),
        })
    }

    pub fn id(&self) -> &'static str {
        match self {
            TargetSpec::Urn => "urn",
            TargetSpec::Neyman => "neyman",
            TargetSpec::Rsihr => "rsihr",
            TargetSpec::ZhangRosenberger => "zr",
            TargetSpec::BiswasMandal { .. } => "bm",
            TargetSpec::Fixed { .. } => "fixed",
            TargetSpec::Balanced => "balanced",
        }
    }

    pub fn build(&self, k: usize) -> Result<Arc<dyn Target>> {
        Ok(match self {
            TargetSpec::Urn => Arc::new(UrnTarget),
            TargetSpec::Neyman => Arc::new(NeymanTarget),
            TargetSpec::Rsihr => Arc::new(RsihrTarget),
            TargetSpec::ZhangRosenberger => Arc::new(ZhangRosenbergerTarget),
            TargetSpec::BiswasMandal { c, form } => Arc::new(BiswasMandalTarget { c: *c, form: *form }),
            TargetSpec::Fixed { rho } => Arc::new(FixedTarget::new(rho.clone())?),
            TargetSpec::Balanced => Arc::new(FixedTarget::balanced(k)),
        })
    }
}

impl FromStr for DesignSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DesignSpec::from_id(s)
    }
}

impl FromStr for TargetSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TargetSpec::from_id(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_round_trip() {
        for id in DESIGN_IDS {
            assert_eq!(DesignSpec::from_id(id).unwrap().id(), id);
        }
        for id in ["urn", "neyman", "rsihr", "zr", "bm", "fixed", "balanced"] {
            assert_eq!(TargetSpec::from_id(id).unwrap().id(), id);
        }
        assert!(DesignSpec::from_id("nope").is_err());
    }

    #[test]
    fn every_design_builds_for_two_arms() {
        let target = TargetAllocation::new(Arc::new(UrnTarget));
        for id in DESIGN_IDS {
            let d = DesignSpec::from_id(id).unwrap().build(2, &target, 100).unwrap();
            assert_eq!(d.n_arms(), 2, "{id}");
        }
        assert!(DesignSpec::from_id("erade").unwrap().build(3, &target, 100).is_err());
    }
}
