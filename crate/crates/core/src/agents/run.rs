use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{dispatch, plan, AgentError, AgentRuntime, PlanStep, TaskPlan, AGGREGATOR_ROLE};
use crate::smmf::ModelError;
use crate::value::Value;

/// Progress of a run, in the order it happens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum RunEvent {
    Plan { plan: TaskPlan },
    StepStart { step: PlanStep },
    StepResult { step: PlanStep, value: Value },
    Final { text: String },
}

/// Plans `goal` and runs every step. See [`run_goal_with`].
pub fn run_goal(goal: &str, rt: &AgentRuntime) -> Result<Vec<Value>, AgentError> {
    run_goal_with(goal, rt, &mut |_| {})
}

/// Plans `goal`, then dispatches the steps one at a time: other steps in
/// index order, aggregator steps last with every earlier output as input.
///
/// A failed non-aggregator step yields an error value and the run goes on.
/// Cancellation and aggregator failures end the run with an error.
pub fn run_goal_with(
    goal: &str,
    rt: &AgentRuntime,
    observer: &mut dyn FnMut(&RunEvent),
) -> Result<Vec<Value>, AgentError> {
    let plan = plan(goal, rt)?;
    observer(&RunEvent::Plan { plan: plan.clone() });

    let (aggregate, work): (Vec<&PlanStep>, Vec<&PlanStep>) =
        plan.steps.iter().partition(|s| s.agent_role == AGGREGATOR_ROLE);
    let mut outputs = Vec::with_capacity(plan.steps.len());
    let mut earlier: BTreeMap<String, Value> = BTreeMap::new();
    let mut final_text = None;
    let no_inputs = BTreeMap::new();

    for step in work.into_iter().chain(aggregate) {
        observer(&RunEvent::StepStart { step: step.clone() });
        let is_aggregator = step.agent_role == AGGREGATOR_ROLE;
        let inputs = if is_aggregator { &earlier } else { &no_inputs };
        let value = match dispatch(step, inputs, rt) {
            Ok(v) => v,
            Err(e @ AgentError::Model(ModelError::Cancelled)) => return Err(e),
            Err(e) if is_aggregator => return Err(e),
            Err(e) => {
                log::warn!("step {} failed: {e}", step.index);
                Value::Error(e.to_string())
            }
        };
        if is_aggregator {
            if let Value::Text(t) = &value {
                final_text = Some(t.clone());
            }
        }
        observer(&RunEvent::StepResult { step: step.clone(), value: value.clone() });
        earlier.insert(format!("step_{}", step.index), value.clone());
        outputs.push(value);
    }

    let text = final_text.unwrap_or_else(|| {
        let failed = outputs.iter().filter(|v| v.is_error()).count();
        format!("Completed {} step(s), {failed} failed.", outputs.len())
    });
    observer(&RunEvent::Final { text });
    Ok(outputs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{replay_runs, testing, Archive};
    use crate::smmf::{MockReply, MockScript};

    fn three_step_script() -> MockScript {
        let plan = r#"[
            {"index":1,"description":"Write A","agent_role":"sql_generator","output_kind":"text"},
            {"index":2,"description":"Write B","agent_role":"chart_generator","output_kind":"text"},
            {"index":3,"description":"Write C","agent_role":"sql_generator","output_kind":"text"}
        ]"#;
        MockScript::default()
            .with("three", plan)
            .with("contains:Write A", "a")
            .with("contains:Write B", "b")
            .with("contains:Write C", "c")
    }

    #[test]
    fn one_step_plan_archives_three_messages() {
        let plan = r#"[{"index":1,"description":"Say hi","agent_role":"aggregator","output_kind":"text"}]"#;
        let (rt, _, archive) =
            testing::runtime(MockScript::default().with("hi", plan).with("contains:Say hi", "hello"));
        let out = run_goal("hi", &rt).unwrap();
        assert_eq!(out, vec![Value::text("hello")]);
        assert_eq!(archive.len("c1"), 3);
    }

    #[test]
    fn failed_middle_step_becomes_error_value() {
        let mut script = three_step_script();
        script.push("contains:Write B", MockReply::Fail("scripted outage".into()));
        let (rt, _, archive) = testing::runtime(script);
        let mut events = Vec::new();
        let out = run_goal_with("three", &rt, &mut |e| events.push(e.clone())).unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(out[0], Value::text("a"));
        assert!(out[1].is_error());
        assert_eq!(out[2], Value::text("c"));
        assert_eq!(archive.len("c1"), 7);
        assert!(matches!(events.first(), Some(RunEvent::Plan { .. })));
        assert_eq!(events.last(), Some(&RunEvent::Final { text: "Completed 3 step(s), 1 failed.".into() }));
        assert_eq!(events.len(), 1 + 2 * 3 + 1);
    }

    #[test]
    fn aggregator_runs_last_and_sees_everything() {
        let plan = r#"[
            {"index":1,"description":"Summarize","agent_role":"aggregator","output_kind":"text"},
            {"index":2,"description":"Write A","agent_role":"sql_generator","output_kind":"text"}
        ]"#;
        let script =
            MockScript::default().with("agg", plan).with("contains:Write A", "a").with("contains:Summarize", "sum");
        let (rt, _, archive) = testing::runtime(script);
        let out = run_goal("agg", &rt).unwrap();
        assert_eq!(out, vec![Value::text("a"), Value::text("sum")]);
        let history = archive.history("c1").unwrap();
        let last_request = history[3].content.as_text().unwrap();
        assert!(last_request.starts_with("Results of earlier steps:\nstep_2 (text): a\n"));
    }

    #[test]
    fn deterministic_and_replayable() {
        let (rt, gw, archive) = testing::runtime(three_step_script());
        let first = run_goal("three", &rt).unwrap();
        let second = run_goal("three", &rt.for_conversation("c2")).unwrap();
        assert_eq!(first, second);
        let calls = gw.request_count();
        let runs = replay_runs("c1", archive.as_ref()).unwrap();
        assert_eq!(gw.request_count(), calls);
        assert_eq!(runs.len(), 1);
        assert_eq!(runs[0].outputs, first);
        let turns: Vec<u64> = archive.history("c2").unwrap().iter().map(|m| m.turn).collect();
        assert_eq!(turns, (1..=7).collect::<Vec<u64>>());
    }

    #[test]
    fn plan_errors_propagate() {
        let (rt, _, _) = testing::runtime(MockScript::default());
        assert_eq!(run_goal("", &rt), Err(AgentError::EmptyGoal));
        assert!(matches!(run_goal("unscripted", &rt), Err(AgentError::PlanParse { .. })));
    }
}
