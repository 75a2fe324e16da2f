use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::RespondError;
use crate::detect::AttackLabel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    /// Drop all further traffic from the offending source address.
    #[serde(rename = "block")]
    BlockSource,
    #[serde(rename = "log")]
    LogOnly,
}

/// Rule table from attack label to actions. Labels without a rule resolve to
/// `default_action`, so resolution never fails.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ResponsePolicy {
    pub rules: BTreeMap<AttackLabel, Vec<Action>>,
    pub default_action: Vec<Action>,
}

impl Default for ResponsePolicy {
    /// Block volumetric, spoofing and injection attacks; log eavesdropping.
    fn default() -> Self {
        let rules = AttackLabel::ALL
            .iter()
            .map(|&l| {
                let action = if l == AttackLabel::Ex4 {
                    Action::LogOnly
                } else {
                    Action::BlockSource
                };
                (l, vec![action])
            })
            .collect();
        ResponsePolicy {
            rules,
            default_action: vec![Action::LogOnly],
        }
    }
}

impl ResponsePolicy {
    pub fn actions_for(&self, label: AttackLabel) -> &[Action] {
        match self.rules.get(&label) {
            Some(actions) if !actions.is_empty() => actions,
            _ => &self.default_action,
        }
    }

    /// Parses `{"EX-7": ["block"], "EX-4": ["log"], "default": ["log"]}`.
    /// Labels not mentioned keep their default-policy rule.
    pub fn from_json(text: &str) -> Result<Self, RespondError> {
        let raw: BTreeMap<String, Vec<Action>> = serde_json::from_str(text)?;
        let mut policy = ResponsePolicy::default();
        for (key, actions) in raw {
            if key.eq_ignore_ascii_case("default") {
                if actions.is_empty() {
                    return Err(RespondError::Policy("default action list is empty".into()));
                }
                policy.default_action = actions;
                continue;
            }
            let label: AttackLabel = key
                .parse()
                .map_err(|_| RespondError::Policy(format!("unknown label {key:?}")))?;
            policy.rules.insert(label, actions);
        }
        Ok(policy)
    }

    pub fn to_json(&self) -> String {
        let mut raw: BTreeMap<String, &[Action]> = self
            .rules
            .iter()
            .map(|(l, a)| (l.as_str().to_string(), a.as_slice()))
            .collect();
        raw.insert("default".into(), &self.default_action);
        serde_json::to_string_pretty(&raw).expect("policy serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_policy_blocks_all_but_eavesdropping() {
        let p = ResponsePolicy::default();
        for l in AttackLabel::ALL {
            let expected = if l == AttackLabel::Ex4 {
                Action::LogOnly
            } else {
                Action::BlockSource
            };
            assert_eq!(p.actions_for(l), &[expected]);
        }
    }

    #[test]
    fn json_overrides_and_round_trips() {
        let p = ResponsePolicy::from_json(r#"{"EX-7":["block","log"],"ex-4":["block"],"default":["log"]}"#)
            .unwrap();
        assert_eq!(p.actions_for(AttackLabel::Ex7), &[Action::BlockSource, Action::LogOnly]);
        assert_eq!(p.actions_for(AttackLabel::Ex4), &[Action::BlockSource]);
        assert_eq!(ResponsePolicy::from_json(&p.to_json()).unwrap(), p);
    }

    #[test]
    fn empty_rule_falls_back_to_default() {
        let p = ResponsePolicy::from_json(r#"{"EX-2":[]}"#).unwrap();
        assert_eq!(p.actions_for(AttackLabel::Ex2), &[Action::LogOnly]);
        assert!(ResponsePolicy::from_json(r#"{"EX-9":["log"]}"#).is_err());
        assert!(ResponsePolicy::from_json(r#"{"EX-1":["reboot"]}"#).is_err());
    }
}
