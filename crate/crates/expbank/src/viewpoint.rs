//! Compositional state viewpoints: deterministic projection of a state into
//! per-viewpoint canonical text for embedding.
//!
//! The registry is fixed at three viewpoints. Each pairs the instruction with
//! one complementary state component, so the same experience can be found
//! through perceptual, task-descriptor, or execution-history cues:
//!
//! * `v_visual`  = instruction + visual refs
//! * `v_task`    = instruction + task descriptor
//! * `v_history` = instruction + execution history
//!
//! Projections are canonical: section headers in a fixed order, one
//! `|`-delimited line per element, field escaping for `\`, `|` and newlines,
//! and `-` for absent optional components. Equal inputs render byte-identical
//! text; states differing in an included component render differently.

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

use crate::model::State;

/// Number of viewpoints in the fixed registry.
pub const VIEWPOINT_COUNT: usize = 3;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown viewpoint {0:?} (expected v_visual, v_task or v_history)")]
pub struct UnknownViewpoint(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ViewpointId {
    #[serde(rename = "v_visual")]
    Visual,
    #[serde(rename = "v_task")]
    Task,
    #[serde(rename = "v_history")]
    History,
}

impl ViewpointId {
    pub fn as_str(&self) -> &'static str {
        match self {
            ViewpointId::Visual => "v_visual",
            ViewpointId::Task => "v_task",
            ViewpointId::History => "v_history",
        }
    }

    pub fn parse(s: &str) -> Result<Self, UnknownViewpoint> {
        match s {
            "v_visual" => Ok(ViewpointId::Visual),
            "v_task" => Ok(ViewpointId::Task),
            "v_history" => Ok(ViewpointId::History),
            other => Err(UnknownViewpoint(other.to_string())),
        }
    }
}

impl fmt::Display for ViewpointId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ViewpointId {
    type Err = UnknownViewpoint;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ViewpointId::parse(s)
    }
}

/// State components a viewpoint may include.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    Instruction,
    VisualRefs,
    TaskDescriptor,
    History,
}

/// A registry entry: viewpoint id plus the exact component set it projects.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ViewpointSpec {
    pub id: ViewpointId,
    pub components: &'static [Component],
}

impl ViewpointSpec {
    pub fn includes(&self, component: Component) -> bool {
        self.components.contains(&component)
    }
}

const REGISTRY: [ViewpointSpec; VIEWPOINT_COUNT] = [
    ViewpointSpec {
        id: ViewpointId::Visual,
        components: &[Component::Instruction, Component::VisualRefs],
    },
    ViewpointSpec {
        id: ViewpointId::Task,
        components: &[Component::Instruction, Component::TaskDescriptor],
    },
    ViewpointSpec {
        id: ViewpointId::History,
        components: &[Component::Instruction, Component::History],
    },
];

/// The fixed viewpoint registry, in stable order.
pub fn list_viewpoints() -> &'static [ViewpointSpec; VIEWPOINT_COUNT] {
    &REGISTRY
}

/// Registry ids in stable order; the default deep-search rotation.
pub fn registry_ids() -> [ViewpointId; VIEWPOINT_COUNT] {
    [ViewpointId::Visual, ViewpointId::Task, ViewpointId::History]
}

pub fn spec_of(id: ViewpointId) -> &'static ViewpointSpec {
    match id {
        ViewpointId::Visual => &REGISTRY[0],
        ViewpointId::Task => &REGISTRY[1],
        ViewpointId::History => &REGISTRY[2],
    }
}

/// Escapes a field value so `|`-delimited, newline-framed lines stay
/// unambiguous: `\` -> `\\`, `|` -> `\|`, newline -> `\n`.
fn escape(value: &str) -> String {
    let mut out = String::with_capacity(value.len());
    for c in value.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '|' => out.push_str("\\|"),
            '\n' => out.push_str("\\n"),
            _ => out.push(c),
        }
    }
    out
}

const EMPTY_MARK: &str = "-";

/// Renders the canonical projection of `state` under `viewpoint`.
///
/// Output is byte-deterministic and depends only on the components the
/// viewpoint includes. Absent optional components render as the header line
/// followed by `-`.
pub fn project(state: &State, viewpoint: ViewpointId) -> String {
    let spec = spec_of(viewpoint);
    let mut lines: Vec<String> = Vec::new();

    lines.push("INSTRUCTION:".to_string());
    lines.push(escape(&state.instruction));

    if spec.includes(Component::VisualRefs) {
        lines.push("VISUALS:".to_string());
        if state.visual_refs.is_empty() {
            lines.push(EMPTY_MARK.to_string());
        } else {
            for r in &state.visual_refs {
                let caption = r.caption.as_deref().map_or(EMPTY_MARK.to_string(), |c| escape(c));
                lines.push(format!("{}|{}", escape(&r.id), caption));
            }
        }
    }

    if spec.includes(Component::TaskDescriptor) {
        lines.push("TASK:".to_string());
        match &state.task_descriptor {
            Some(d) => lines.push(escape(d)),
            None => lines.push(EMPTY_MARK.to_string()),
        }
    }

    if spec.includes(Component::History) {
        lines.push("HISTORY:".to_string());
        if state.history.is_empty() {
            lines.push(EMPTY_MARK.to_string());
        } else {
            for entry in &state.history {
                lines.push(format!(
                    "{}|{}|{}|{}|{}",
                    entry.step,
                    entry.action.kind.as_str(),
                    escape(&entry.action.name),
                    escape(&entry.action.params),
                    escape(&entry.observation),
                ));
            }
        }
    }

    lines.join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Action, VisualRef};

    fn sample_state() -> State {
        State::new("find the red cup")
            .with_visual_refs(vec![
                VisualRef { id: "img_0".into(), caption: Some("kitchen scene".into()) },
                VisualRef { id: "img_1".into(), caption: None },
            ])
            .with_task_descriptor("attribute recognition")
            .extended(Action::tool("zoom", "{\"region\":[0,0,10,10]}"), "zoomed")
    }

    #[test]
    fn registry_is_fixed_and_ordered() {
        let specs = list_viewpoints();
        assert_eq!(specs.len(), 3);
        assert_eq!(specs[0].id, ViewpointId::Visual);
        assert_eq!(specs[1].id, ViewpointId::Task);
        assert_eq!(specs[2].id, ViewpointId::History);
        for spec in specs {
            assert!(spec.includes(Component::Instruction));
        }
    }

    #[test]
    fn empty_history_renders_dash() {
        let state = State::new("u");
        assert_eq!(project(&state, ViewpointId::History), "INSTRUCTION:\nu\nHISTORY:\n-");
    }

    #[test]
    fn equal_states_render_identically() {
        let a = sample_state();
        let b = sample_state();
        assert_eq!(project(&a, ViewpointId::Visual), project(&b, ViewpointId::Visual));
        assert_eq!(project(&a, ViewpointId::History), project(&b, ViewpointId::History));
    }

    #[test]
    fn excluded_components_do_not_leak() {
        let base = sample_state();
        let mut altered = base.clone();
        altered.task_descriptor = Some("something else".into());
        altered.history.clear();
        // v_visual includes neither task descriptor nor history.
        assert_eq!(project(&base, ViewpointId::Visual), project(&altered, ViewpointId::Visual));
    }

    #[test]
    fn included_component_changes_the_projection() {
        let base = sample_state();
        let mut altered = base.clone();
        altered.visual_refs[1].caption = Some("poster".into());
        assert_ne!(project(&base, ViewpointId::Visual), project(&altered, ViewpointId::Visual));
    }

    #[test]
    fn delimiters_are_escaped() {
        let state = State::new("a|b\nc\\d");
        let text = project(&state, ViewpointId::Task);
        assert_eq!(text, "INSTRUCTION:\na\\|b\\nc\\\\d\nTASK:\n-");
    }

    #[test]
    fn parse_rejects_unknown_ids() {
        assert!(ViewpointId::parse("v_visual").is_ok());
        assert!(ViewpointId::parse("visual").is_err());
        assert_eq!(
            ViewpointId::parse("v_other").unwrap_err(),
            UnknownViewpoint("v_other".to_string())
        );
    }

    #[test]
    fn golden_projection_fixture() {
        let state = sample_state();
        let expected = include_str!("../tests/fixtures/projection_f1_v_visual.txt");
        assert_eq!(project(&state, ViewpointId::Visual), expected.trim_end_matches('\n'));
    }
}
