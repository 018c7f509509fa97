//! JSON ingestion format for floor plans.
//!
//! ```json
//! {"building": "B1", "floor": "F2", "spaces": [
//!   {"boundary": [{"type": "wall", "x0": 0, "y0": 0, "x1": 4, "y1": 0}, ...]}
//! ]}
//! ```

use serde::{Deserialize, Serialize};

use super::{BoundarySegment, FloorPlan, Segment, SegmentKind, Space};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanDocument {
    pub building: String,
    pub floor: String,
    pub spaces: Vec<SpaceDocument>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceDocument {
    pub boundary: Vec<SegmentDocument>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentDocument {
    #[serde(rename = "type")]
    pub kind: SegmentKind,
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl PlanDocument {
    /// Validates the document and converts it into a [`FloorPlan`].
    pub fn into_plan(self) -> Result<FloorPlan> {
        let mut spaces = Vec::with_capacity(self.spaces.len());
        for (i, sd) in self.spaces.into_iter().enumerate() {
            let boundary = sd
                .boundary
                .iter()
                .map(|s| BoundarySegment {
                    kind: s.kind,
                    segment: Segment::from_coords(s.x0, s.y0, s.x1, s.y1),
                })
                .collect();
            let space = Space::new(boundary).map_err(|e| {
                Error::InvalidPlan(format!("{}/{}: space {i}: {e}", self.building, self.floor))
            })?;
            spaces.push(space);
        }
        let plan = FloorPlan { building_id: self.building, floor_id: self.floor, spaces };
        plan.validate()?;
        Ok(plan)
    }

    pub fn from_plan(plan: &FloorPlan) -> Self {
        let spaces = plan
            .spaces
            .iter()
            .map(|s| SpaceDocument {
                boundary: s
                    .boundary
                    .iter()
                    .map(|b| {
                        let [x0, y0, x1, y1] = b.segment.coords();
                        SegmentDocument { kind: b.kind, x0, y0, x1, y1 }
                    })
                    .collect(),
            })
            .collect();
        Self { building: plan.building_id.clone(), floor: plan.floor_id.clone(), spaces }
    }
}

/// Parses and validates one plan document.
pub fn plan_from_json(text: &str) -> Result<FloorPlan> {
    serde_json::from_str::<PlanDocument>(text)?.into_plan()
}

pub fn plan_to_json(plan: &FloorPlan) -> Result<String> {
    Ok(serde_json::to_string(&PlanDocument::from_plan(plan))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    const ROOM: &str = r#"{"building": "A", "floor": "1", "spaces": [{"boundary": [
        {"type": "wall", "x0": 0, "y0": 0, "x1": 4, "y1": 0},
        {"type": "window", "x0": 4, "y0": 0, "x1": 4, "y1": 3},
        {"type": "wall", "x0": 4, "y0": 3, "x1": 0, "y1": 3},
        {"type": "portal", "x0": 0, "y0": 3, "x1": 0, "y1": 0}]}]}"#;

    #[test]
    fn parses_and_roundtrips() {
        let plan = plan_from_json(ROOM).unwrap();
        assert_eq!(plan.spaces.len(), 1);
        assert_eq!(plan.spaces[0].boundary[3].kind, SegmentKind::Portal);
        let again = plan_from_json(&plan_to_json(&plan).unwrap()).unwrap();
        assert_eq!(plan, again);
    }

    #[test]
    fn rejects_unknown_type_and_empty() {
        let bad = ROOM.replace("window", "door");
        assert!(matches!(plan_from_json(&bad), Err(Error::Json(_))));
        let empty = r#"{"building": "A", "floor": "1", "spaces": []}"#;
        assert!(matches!(plan_from_json(empty), Err(Error::InvalidPlan(_))));
    }

    #[test]
    fn open_boundary_names_space_index() {
        let open = ROOM.replace(r#""x1": 0, "y1": 0}"#, r#""x1": 0, "y1": 1}"#);
        let err = plan_from_json(&open).unwrap_err().to_string();
        assert!(err.contains("space 0"), "{err}");
    }
}
