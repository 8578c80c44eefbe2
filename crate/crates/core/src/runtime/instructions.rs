use serde::{Deserialize, Serialize};

use super::backend::AgentRole;

// Project-authored prompt text; see prompts/ in the crate root.
const SOLVE_SYSTEM: &str = include_str!("../../prompts/solve_system.md");
const COMPARE_SYSTEM: &str = include_str!("../../prompts/compare_system.md");
const TOOL_POLICY: &str = include_str!("../../prompts/tool_policy.md");
const RESTRICTIONS: &str = include_str!("../../prompts/restrictions.md");
const EXPECTATIONS: &str = include_str!("../../prompts/expectations.md");

/// Standing instructions for one agent role.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentInstructions {
    pub role: AgentRole,
    pub system_text: String,
    /// Directive that numeric work happens in executed scripts, not in prose.
    pub tool_policy: String,
    pub restrictions_text: String,
    pub expectations_text: String,
}

impl AgentInstructions {
    pub fn default_solve() -> Self {
        Self {
            role: AgentRole::Solve,
            system_text: SOLVE_SYSTEM.trim().to_owned(),
            tool_policy: TOOL_POLICY.trim().to_owned(),
            restrictions_text: RESTRICTIONS.trim().to_owned(),
            expectations_text: EXPECTATIONS.trim().to_owned(),
        }
    }

    pub fn default_compare() -> Self {
        Self {
            role: AgentRole::Compare,
            system_text: COMPARE_SYSTEM.trim().to_owned(),
            tool_policy: TOOL_POLICY.trim().to_owned(),
            restrictions_text: RESTRICTIONS.trim().to_owned(),
            expectations_text: EXPECTATIONS.trim().to_owned(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.system_text.trim().is_empty() {
            return Err(format!(
                "{} instructions have an empty system text",
                self.role
            ));
        }
        Ok(())
    }

    /// The system message: role text followed by the tool policy.
    pub fn system_message(&self) -> String {
        if self.tool_policy.trim().is_empty() {
            self.system_text.clone()
        } else {
            format!("{}\n\n{}", self.system_text, self.tool_policy)
        }
    }
}

/// Solve and compare instructions used together by one agency run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionPair {
    pub solve: AgentInstructions,
    pub compare: AgentInstructions,
}

impl Default for InstructionPair {
    fn default() -> Self {
        Self {
            solve: AgentInstructions::default_solve(),
            compare: AgentInstructions::default_compare(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_populated() {
        let pair = InstructionPair::default();
        assert_eq!(pair.solve.role, AgentRole::Solve);
        assert_eq!(pair.compare.role, AgentRole::Compare);
        assert!(pair.solve.validate().is_ok());
        assert!(pair.solve.system_message().contains("## Part 4"));
        assert!(pair.solve.system_message().contains("executing a script"));
        assert!(pair.compare.system_text.contains("## Recommended Solution"));
    }

    #[test]
    fn empty_system_text_is_invalid() {
        let mut i = AgentInstructions::default_solve();
        i.system_text = "  ".into();
        assert!(i.validate().is_err());
    }
}
