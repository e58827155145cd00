use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ir::Owner;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultModel {
    /// A non-control instruction becomes a jump.
    BranchInsertion,
    /// A terminator does nothing; control falls into the next block in
    /// program order.
    BranchDeletion,
    /// A terminator is taken to a different target.
    BranchTargetMod,
    /// The program counter moves into another thread's code while the
    /// register file stays.
    InterThreadSwitch,
}

impl FaultModel {
    pub const ALL: [FaultModel; 4] = [
        FaultModel::BranchInsertion,
        FaultModel::BranchDeletion,
        FaultModel::BranchTargetMod,
        FaultModel::InterThreadSwitch,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FaultModel::BranchInsertion => "branch_insertion",
            FaultModel::BranchDeletion => "branch_deletion",
            FaultModel::BranchTargetMod => "branch_target_mod",
            FaultModel::InterThreadSwitch => "inter_thread_switch",
        }
    }

    /// Whether the model carries an explicit destination.
    pub fn has_target(self) -> bool {
        self != FaultModel::BranchDeletion
    }
}

impl fmt::Display for FaultModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FaultModel {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        FaultModel::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown fault model `{s}`"))
    }
}

/// An instruction position: region, block label and offset inside the block
/// (terminator included).
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Location {
    pub owner: Owner,
    pub block: String,
    pub offset: usize,
}

impl Location {
    pub fn new(owner: Owner, block: impl Into<String>, offset: usize) -> Self {
        Self {
            owner,
            block: block.into(),
            offset,
        }
    }
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}+{}", self.owner, self.block, self.offset)
    }
}

impl FromStr for Location {
    type Err = String;
    /// `t<tid>/<block>+<offset>` or `h/<block>+<offset>`.
    fn from_str(s: &str) -> Result<Self, String> {
        let bad = || format!("bad location `{s}`");
        let (region, rest) = s.split_once('/').ok_or_else(bad)?;
        let (block, off) = rest.rsplit_once('+').ok_or_else(bad)?;
        let owner = if region == "h" {
            Owner::Handler
        } else {
            Owner::Thread(region.strip_prefix('t').and_then(|t| t.parse().ok()).ok_or_else(bad)?)
        };
        Ok(Location::new(owner, block, off.parse().map_err(|_| bad())?))
    }
}

/// One transient control-flow fault: at dynamic instruction `trigger` the
/// executing instruction is replaced by the model's transfer.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FaultSpec {
    pub model: FaultModel,
    pub trigger: u64,
    pub target: Option<Location>,
    /// Sample number within the campaign that produced the spec.
    pub seed: u64,
}

impl fmt::Display for FaultSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.model, self.trigger)?;
        if let Some(t) = &self.target {
            write!(f, "->{t}")?;
        }
        Ok(())
    }
}

impl FromStr for FaultSpec {
    type Err = String;
    /// `<model>@<trigger>[-><location>]`.
    fn from_str(s: &str) -> Result<Self, String> {
        let (head, target) = match s.split_once("->") {
            Some((h, t)) => (h, Some(t.parse::<Location>()?)),
            None => (s, None),
        };
        let (model, trigger) = head.split_once('@').ok_or_else(|| format!("bad fault `{s}`"))?;
        let model: FaultModel = model.parse()?;
        if model.has_target() != target.is_some() {
            return Err(format!("fault `{s}`: {model} {} a target", if model.has_target() { "needs" } else { "takes no" }));
        }
        Ok(FaultSpec {
            model,
            trigger: trigger.parse().map_err(|_| format!("bad trigger in `{s}`"))?,
            target,
            seed: 0,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_text_round_trip() {
        for s in ["branch_deletion@17", "branch_insertion@3->t1/B2.1+0", "inter_thread_switch@9->h/__handler+2"] {
            let f: FaultSpec = s.parse().unwrap();
            assert_eq!(f.to_string(), s);
        }
        assert!("branch_deletion@1->t0/A+0".parse::<FaultSpec>().is_err());
        assert!("branch_insertion@1".parse::<FaultSpec>().is_err());
    }
}
