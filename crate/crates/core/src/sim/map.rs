use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lane {
    pub id: String,
    /// metres
    pub length: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub left: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub right: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub successors: Vec<String>,
    /// The lane running the other way alongside this one. Offsets along a
    /// twin run backwards: offset `o` on the twin sits beside `length - o`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub opposite: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum FixtureKind {
    StopLine { light_id: String },
    Cone,
    Pedestrian,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fixture {
    pub id: String,
    #[serde(flatten)]
    pub kind: FixtureKind,
    pub lane: String,
    pub offset: f64,
}

impl Fixture {
    /// Cones and pedestrians block their lane; stop lines do not.
    pub fn blocks(&self) -> bool {
        !matches!(self.kind, FixtureKind::StopLine { .. })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LaneMap {
    pub lanes: Vec<Lane>,
    #[serde(default)]
    pub fixtures: Vec<Fixture>,
}

impl LaneMap {
    pub fn lane(&self, id: &str) -> Option<&Lane> {
        self.lanes.iter().find(|l| l.id == id)
    }

    /// Checks references, offsets and lane geometry. Neighbours and twins
    /// must have equal length so they can share one offset frame.
    pub fn check(&self) -> Result<(), String> {
        let mut ids = BTreeSet::new();
        for lane in &self.lanes {
            if !ids.insert(lane.id.as_str()) {
                return Err(format!("duplicate lane `{}`", lane.id));
            }
            if !(lane.length.is_finite() && lane.length > 0.0) {
                return Err(format!("lane `{}` has non-positive length", lane.id));
            }
        }
        let by_id: BTreeMap<&str, &Lane> = self.lanes.iter().map(|l| (l.id.as_str(), l)).collect();
        let resolve = |from: &Lane, to: &str, what: &str| {
            by_id
                .get(to)
                .copied()
                .ok_or_else(|| format!("lane `{}` {what} `{to}` does not exist", from.id))
        };
        for lane in &self.lanes {
            if let Some(left) = &lane.left {
                let l = resolve(lane, left, "left neighbour")?;
                if l.right.as_deref() != Some(lane.id.as_str()) {
                    return Err(format!("`{}` is left of `{}` but not the reverse", left, lane.id));
                }
                if l.length != lane.length {
                    return Err(format!("neighbours `{}` and `{left}` differ in length", lane.id));
                }
            }
            if let Some(right) = &lane.right {
                let r = resolve(lane, right, "right neighbour")?;
                if r.left.as_deref() != Some(lane.id.as_str()) {
                    return Err(format!("`{}` is right of `{}` but not the reverse", right, lane.id));
                }
            }
            for s in &lane.successors {
                resolve(lane, s, "successor")?;
            }
            if let Some(twin) = &lane.opposite {
                let t = resolve(lane, twin, "opposite twin")?;
                if t.opposite.as_deref() != Some(lane.id.as_str()) || t.length != lane.length {
                    return Err(format!("`{}` and `{twin}` are not matching twins", lane.id));
                }
            }
        }
        let mut fixture_ids = BTreeSet::new();
        for f in &self.fixtures {
            if !fixture_ids.insert(f.id.as_str()) {
                return Err(format!("duplicate fixture `{}`", f.id));
            }
            let lane = by_id
                .get(f.lane.as_str())
                .ok_or_else(|| format!("fixture `{}` is on unknown lane `{}`", f.id, f.lane))?;
            if !(0.0..=lane.length).contains(&f.offset) {
                return Err(format!("fixture `{}` offset {} is outside its lane", f.id, f.offset));
            }
        }
        Ok(())
    }

    /// Follows `left` (or `right`) links to the outermost lane on that side.
    pub fn extreme_lane<'a>(&'a self, from: &'a str, left: bool) -> &'a str {
        let mut current = from;
        let mut seen = BTreeSet::new();
        while seen.insert(current) {
            let Some(lane) = self.lane(current) else { break };
            let next = if left { &lane.left } else { &lane.right };
            match next {
                Some(n) => current = n,
                None => break,
            }
        }
        current
    }

    /// The neighbour of `from` one step toward `to`, if `to` is reachable
    /// through same-direction neighbours.
    pub fn step_toward(&self, from: &str, to: &str) -> Option<&str> {
        for left in [true, false] {
            let mut current = from;
            let mut first: Option<&str> = None;
            let mut seen = BTreeSet::new();
            while seen.insert(current) {
                let lane = self.lane(current)?;
                let next = if left { lane.left.as_deref() } else { lane.right.as_deref() };
                let Some(next) = next else { break };
                first.get_or_insert(next);
                if next == to {
                    return first;
                }
                current = next;
            }
        }
        None
    }
}
