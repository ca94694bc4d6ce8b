//! Per-stage instructions, retrieval query builders and transition rules.

use super::{SessionState, Stage};

/// Behaviour of one working stage.
pub struct StageTemplate {
    pub stage: Stage,
    /// Step-by-step instruction placed at the top of the prompt.
    pub instruction: &'static str,
    /// `None` means the stage performs no retrieval.
    pub query_builder: Option<fn(&SessionState, &str) -> String>,
    /// Next stage given the state after the round's facts were recorded and
    /// the agent's reply.
    pub advance_rule: fn(&SessionState, &str) -> Stage,
}

const REQUIREMENTS_TEXT: &str = "You are a network optimization assistant. Think step by step. \
Start your reply with a THOUGHT line. Ask the designer for the system model, the optimization \
objective, the decision variables, and any necessary constraints.";

const SCENARIO_TEXT: &str = "Think step by step about the system model the designer describes. \
Start with a THOUGHT line. Use the retrieved knowledge to identify relevant modelling facts and \
list each one on its own FACT line.";

const OBJECTIVE_TEXT: &str = "Think step by step about the optimization objective. Start with \
a THOUGHT line. Use the retrieved knowledge to identify relevant modelling facts and list each \
one on its own FACT line.";

const CONSTRAINT_TEXT: &str = "Think step by step about the constraints that are still \
missing. Start with a THOUGHT line. List each fact you can extract from the retrieved knowledge \
on its own FACT line.";

const FORMULATE_TEXT: &str = "Think step by step, then write the complete optimization problem \
as exactly one BEGIN_FORMULATION ... END_FORMULATION block. Start with a THOUGHT line.";

/// Core terms of still-missing facts gathered in `stage`, or every missing
/// fact when `stage` is `None`. Falls back to the designer's message.
fn missing_terms_query(state: &SessionState, stage: Option<Stage>, user_message: &str) -> String {
    let terms: Vec<&str> = state
        .missing_facts()
        .filter(|f| stage.is_none_or(|s| f.stage == s))
        .flat_map(|f| f.core_terms.iter().map(String::as_str))
        .collect();
    if terms.is_empty() {
        user_message.to_owned()
    } else {
        terms.join(" ")
    }
}

fn scenario_query(state: &SessionState, msg: &str) -> String {
    missing_terms_query(state, Some(Stage::Scenario), msg)
}

fn objective_query(state: &SessionState, msg: &str) -> String {
    missing_terms_query(state, Some(Stage::Objective), msg)
}

fn gathering_query(state: &SessionState, msg: &str) -> String {
    missing_terms_query(state, None, msg)
}

fn to_scenario(_: &SessionState, _: &str) -> Stage {
    Stage::Scenario
}

fn to_objective(_: &SessionState, _: &str) -> Stage {
    Stage::Objective
}

fn gather_or_formulate(state: &SessionState, _: &str) -> Stage {
    if state.missing_facts().next().is_none() {
        Stage::Formulate
    } else {
        Stage::ConstraintGathering
    }
}

fn done_when_parsed(state: &SessionState, reply: &str) -> Stage {
    let complete = state.missing_facts().next().is_none();
    if complete && crate::formulation::parse_formulation(reply).is_ok() {
        Stage::Done
    } else {
        Stage::Formulate
    }
}

static TEMPLATES: [StageTemplate; 5] = [
    StageTemplate {
        stage: Stage::Requirements,
        instruction: REQUIREMENTS_TEXT,
        query_builder: None,
        advance_rule: to_scenario,
    },
    StageTemplate {
        stage: Stage::Scenario,
        instruction: SCENARIO_TEXT,
        query_builder: Some(scenario_query),
        advance_rule: to_objective,
    },
    StageTemplate {
        stage: Stage::Objective,
        instruction: OBJECTIVE_TEXT,
        query_builder: Some(objective_query),
        advance_rule: gather_or_formulate,
    },
    StageTemplate {
        stage: Stage::ConstraintGathering,
        instruction: CONSTRAINT_TEXT,
        query_builder: Some(gathering_query),
        advance_rule: gather_or_formulate,
    },
    StageTemplate {
        stage: Stage::Formulate,
        instruction: FORMULATE_TEXT,
        query_builder: Some(gathering_query),
        advance_rule: done_when_parsed,
    },
];

/// The template of a non-terminal stage.
pub fn template_for(stage: Stage) -> Option<&'static StageTemplate> {
    TEMPLATES.iter().find(|t| t.stage == stage)
}

pub fn templates() -> &'static [StageTemplate] {
    &TEMPLATES
}
