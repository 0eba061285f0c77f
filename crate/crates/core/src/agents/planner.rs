use std::collections::BTreeSet;

use super::{AgentError, AgentRuntime, MessageKind, PlanStep, TaskPlan, PLANNER_ROLE};
use crate::smmf::ChatMessage;
use crate::template::fill;
use crate::value::Value;

pub const PLANNER_TEMPLATE: &str = include_str!("../../prompts/planner.txt");
pub const PLAN_SCHEMA: &str = include_str!("../../prompts/plan.schema.json");
const PLAN_REPAIR_TEMPLATE: &str = include_str!("../../prompts/plan_repair.txt");

/// The JSON array in a reply: a fenced json block if present, else the text
/// from the first `[` to the last `]`.
pub(crate) fn json_slice(raw: &str, open: char, close: char) -> Option<&str> {
    if let Some(start) = raw.find("```json") {
        let body = &raw[start + 7..];
        if let Some(end) = body.find("```") {
            let inner = body[..end].trim();
            if inner.starts_with(open) {
                return Some(inner);
            }
        }
    }
    let start = raw.find(open)?;
    let end = raw.rfind(close)?;
    (end > start).then(|| &raw[start..=end])
}

/// Parses and checks a plan reply against the available roles.
pub fn parse_plan(goal: &str, raw: &str, roles: &BTreeSet<&str>) -> Result<TaskPlan, String> {
    let json = json_slice(raw, '[', ']').ok_or("no JSON array found")?;
    let steps: Vec<PlanStep> = serde_json::from_str(json).map_err(|e| format!("invalid plan JSON: {e}"))?;
    if steps.is_empty() {
        return Err("plan has no steps".into());
    }
    for (i, step) in steps.iter().enumerate() {
        if step.index as usize != i + 1 {
            return Err(format!("step {} has index {}, expected {}", i + 1, step.index, i + 1));
        }
        if step.description.trim().is_empty() {
            return Err(format!("step {} has an empty description", step.index));
        }
        if step.agent_role == PLANNER_ROLE || !roles.contains(step.agent_role.as_str()) {
            return Err(format!("step {} uses unknown agent_role `{}`", step.index, step.agent_role));
        }
    }
    Ok(TaskPlan { goal: goal.to_string(), steps })
}

fn roles_text(rt: &AgentRuntime) -> String {
    rt.roles().into_iter().filter(|r| *r != PLANNER_ROLE).map(|r| format!("- {r}")).collect::<Vec<_>>().join("\n")
}

/// Asks the planner agent for a plan; one repair round-trip on a bad reply.
/// The plan is archived as one message.
pub fn plan(goal: &str, rt: &AgentRuntime) -> Result<TaskPlan, AgentError> {
    let goal = goal.trim();
    if goal.is_empty() {
        return Err(AgentError::EmptyGoal);
    }
    let planner = rt.profile_for_role(PLANNER_ROLE).ok_or_else(|| AgentError::NoAgentForRole(PLANNER_ROLE.into()))?;
    let roles = rt.roles();
    let system = fill(&planner.system_prompt, &[("{roles}", &roles_text(rt))]);
    let mut messages = vec![ChatMessage::system(system), ChatMessage::user(goal)];

    let first = rt.complete(messages.clone())?;
    let plan = match parse_plan(goal, &first.content, &roles) {
        Ok(p) => p,
        Err(reason) => {
            log::warn!("plan reply rejected: {reason}");
            messages.push(ChatMessage::assistant(first.content));
            messages.push(ChatMessage::user(fill(PLAN_REPAIR_TEMPLATE, &[("{error}", &reason)])));
            let second = rt.complete(messages)?;
            parse_plan(goal, &second.content, &roles).map_err(|_| AgentError::PlanParse { raw: second.content })?
        }
    };
    rt.record(MessageKind::Plan, &planner.name, "user", Value::Plan(plan.clone()))?;
    Ok(plan)
}
