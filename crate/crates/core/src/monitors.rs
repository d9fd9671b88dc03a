//! Monitors built from stream combinators.
//!
//! Each monitor is installed into an iteration's [`StreamGraph`] and reads
//! the per-actor streams the simulator feeds: `pos` (positions), `speed`
//! and `collider` (one event per collision, carrying the other actor's id
//! and the relative speed).

use crate::error::{config, Result};
use crate::reactive::{StreamGraph, StreamId, Value};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::{Arc, Mutex};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MonitorKind {
    /// Fails on the first collision of `vehicle` and ends the iteration.
    Collision {
        #[serde(default)]
        vehicle: Option<String>,
    },
    /// Fails when `vehicle` travels less than `min_distance` metres.
    Distance {
        #[serde(default)]
        vehicle: Option<String>,
        min_distance: f64,
    },
    /// Speed of `vehicle` at its first collision, 0 without one.
    CollisionSpeed {
        #[serde(default)]
        vehicle: Option<String>,
    },
    /// Reciprocal of the closest approach to `pedestrian`, 0 on collision.
    AlmostFailing {
        #[serde(default)]
        vehicle: Option<String>,
        pedestrian: String,
    },
    /// Mean bumper-to-bumper gap between `vehicle` and `lead`.
    MeanGap {
        #[serde(default)]
        vehicle: Option<String>,
        lead: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorSpec {
    pub id: String,
    #[serde(flatten)]
    pub kind: MonitorKind,
}

impl MonitorSpec {
    pub fn new(id: &str, kind: MonitorKind) -> Self {
        MonitorSpec { id: id.to_string(), kind }
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            MonitorKind::Collision { .. } => "collision",
            MonitorKind::Distance { .. } => "distance",
            MonitorKind::CollisionSpeed { .. } => "collision_speed",
            MonitorKind::AlmostFailing { .. } => "almost_failing",
            MonitorKind::MeanGap { .. } => "mean_gap",
        }
    }

    pub fn is_quantitative(&self) -> bool {
        matches!(
            self.kind,
            MonitorKind::CollisionSpeed { .. } | MonitorKind::AlmostFailing { .. } | MonitorKind::MeanGap { .. }
        )
    }

    /// Whether the score is a usable search objective (maximized).
    pub fn is_objective(&self) -> bool {
        matches!(self.kind, MonitorKind::CollisionSpeed { .. } | MonitorKind::AlmostFailing { .. })
    }

    /// Whether the monitor's verdict decides if an iteration passes.
    pub fn is_assertion(&self) -> bool {
        matches!(self.kind, MonitorKind::Collision { .. } | MonitorKind::Distance { .. })
    }

    fn vehicle<'a>(&'a self, ego: &'a str) -> &'a str {
        match &self.kind {
            MonitorKind::Collision { vehicle }
            | MonitorKind::Distance { vehicle, .. }
            | MonitorKind::CollisionSpeed { vehicle }
            | MonitorKind::AlmostFailing { vehicle, .. }
            | MonitorKind::MeanGap { vehicle, .. } => vehicle.as_deref().unwrap_or(ego),
        }
    }

    /// Actors the monitor refers to, besides the default vehicle.
    pub fn actors(&self) -> Vec<&str> {
        let mut v: Vec<&str> = Vec::new();
        match &self.kind {
            MonitorKind::Collision { vehicle }
            | MonitorKind::Distance { vehicle, .. }
            | MonitorKind::CollisionSpeed { vehicle } => v.extend(vehicle.as_deref()),
            MonitorKind::AlmostFailing { vehicle, pedestrian } => {
                v.extend(vehicle.as_deref());
                v.push(pedestrian);
            }
            MonitorKind::MeanGap { vehicle, lead } => {
                v.extend(vehicle.as_deref());
                v.push(lead);
            }
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        if let MonitorKind::Distance { min_distance, .. } = self.kind {
            if !(min_distance >= 0.0) {
                return Err(config(format!("monitor '{}': min_distance must be non-negative", self.id)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Pass,
    Fail,
    Errored,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Pass => "pass",
            Outcome::Fail => "fail",
            Outcome::Errored => "errored",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tick: Option<u64>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorVerdict {
    pub monitor: String,
    pub kind: String,
    pub outcome: Outcome,
    pub score: Option<f64>,
    pub evidence: Option<Evidence>,
}

impl MonitorVerdict {
    pub fn errored(spec: &MonitorSpec, detail: &str) -> Self {
        MonitorVerdict {
            monitor: spec.id.clone(),
            kind: spec.kind_name().to_string(),
            outcome: Outcome::Errored,
            score: None,
            evidence: Some(Evidence { tick: None, detail: detail.to_string() }),
        }
    }
}

/// Streams the simulator publishes for one actor.
#[derive(Debug, Clone, Copy)]
pub struct ActorStreams {
    pub pos: StreamId,
    pub speed: StreamId,
    pub collider: StreamId,
    pub length: f64,
}

/// Records every event of a stream with its tick.
#[derive(Debug, Clone, Default)]
pub struct Probe(Arc<Mutex<Vec<(u64, Value)>>>);

impl Probe {
    pub fn attach(g: &mut StreamGraph, s: StreamId) -> Result<Probe> {
        let probe = Probe::default();
        let sink = probe.0.clone();
        g.for_each(s, move |t, v| sink.lock().unwrap().push((t, v.clone())))?;
        Ok(probe)
    }

    pub fn events(&self) -> Vec<(u64, Value)> {
        self.0.lock().unwrap().clone()
    }

    pub fn first(&self) -> Option<(u64, Value)> {
        self.0.lock().unwrap().first().cloned()
    }
}

fn real(v: &Value) -> f64 {
    v.as_f64().unwrap_or(f64::NAN)
}

fn pos_distance(a: &Value, b: &Value) -> f64 {
    match (a.as_pos(), b.as_pos()) {
        (Some(p), Some(q)) => p.distance(q),
        _ => f64::NAN,
    }
}

/// Builds `pos.take(1).concat(pos)` zipped with `pos` into step lengths and
/// summed: the total path length.
pub fn path_length_stream(g: &mut StreamGraph, pos: StreamId) -> Result<StreamId> {
    let head = g.take(pos, 1)?;
    let old = g.concat(head, pos)?;
    let steps = g.zip_with(old, pos, |a, b| Value::Real(pos_distance(a, b)))?;
    g.sum(steps)
}

enum Wiring {
    Collision { first: Probe },
    Distance { total: StreamId, min_distance: f64 },
    CollisionSpeed { score: StreamId, first: Probe },
    AlmostFailing { score: StreamId, closest: StreamId, first: Probe },
    MeanGap { sum: StreamId, count: StreamId },
}

/// A monitor wired into a graph.
pub struct Installed {
    pub spec: MonitorSpec,
    terminate: Option<StreamId>,
    wiring: Wiring,
}

fn streams<'a>(actors: &'a HashMap<String, ActorStreams>, id: &str, monitor: &str) -> Result<&'a ActorStreams> {
    actors.get(id).ok_or_else(|| config(format!("monitor '{monitor}' refers to unknown actor '{id}'")))
}

pub fn install(
    g: &mut StreamGraph,
    spec: &MonitorSpec,
    actors: &HashMap<String, ActorStreams>,
    ego: &str,
) -> Result<Installed> {
    spec.validate()?;
    let v = *streams(actors, spec.vehicle(ego), &spec.id)?;
    let mut terminate = None;
    let wiring = match &spec.kind {
        MonitorKind::Collision { .. } => {
            let first = g.first(v.collider)?;
            terminate = Some(first);
            Wiring::Collision { first: Probe::attach(g, first)? }
        }
        MonitorKind::Distance { min_distance, .. } => {
            Wiring::Distance { total: path_length_stream(g, v.pos)?, min_distance: *min_distance }
        }
        MonitorKind::CollisionSpeed { .. } => {
            let hit = g.first(v.collider)?;
            let at_hit = g.combine_latest(v.speed, hit, |s, _| s.clone())?;
            let once = g.first(at_hit)?;
            let score = g.default_if_empty(once, Value::Real(0.0))?;
            Wiring::CollisionSpeed { score, first: Probe::attach(g, hit)? }
        }
        MonitorKind::AlmostFailing { pedestrian, .. } => {
            let p = *streams(actors, pedestrian, &spec.id)?;
            let dist = g.combine_latest(v.pos, p.pos, |a, b| Value::Real(pos_distance(a, b)))?;
            let closest = g.min(dist)?;
            let recip = g.map(closest, |d| Value::Real(1.0 / real(d)))?;
            let hit = g.first(v.collider)?;
            let zero = g.map(hit, |_| Value::Real(0.0))?;
            let score = g.default_if_empty_latest(zero, recip)?;
            Wiring::AlmostFailing { score, closest, first: Probe::attach(g, hit)? }
        }
        MonitorKind::MeanGap { lead, .. } => {
            let l = *streams(actors, lead, &spec.id)?;
            let half = (v.length + l.length) / 2.0;
            let gap = g.combine_latest(v.pos, l.pos, move |a, b| Value::Real(pos_distance(a, b) - half))?;
            let sum = g.sum(gap)?;
            let ones = g.map(gap, |_| Value::Int(1))?;
            let count = g.sum(ones)?;
            Wiring::MeanGap { sum, count }
        }
    };
    Ok(Installed { spec: spec.clone(), terminate, wiring })
}

fn collision_evidence(p: &Probe) -> Option<Evidence> {
    p.first().map(|(tick, v)| {
        let detail = match v.as_pair() {
            Some((Value::Symbol(other), rel)) => {
                format!("collision with {other} at relative speed {:.6} m/s", real(rel))
            }
            _ => "collision".to_string(),
        };
        Evidence { tick: Some(tick), detail }
    })
}

impl Installed {
    /// Stream whose first event ends the iteration.
    pub fn terminates(&self) -> Option<StreamId> {
        self.terminate
    }

    /// Verdict after the graph has been finished.
    pub fn verdict(&self, g: &StreamGraph) -> MonitorVerdict {
        let (outcome, score, evidence) = match &self.wiring {
            Wiring::Collision { first } => match collision_evidence(first) {
                Some(e) => (Outcome::Fail, None, Some(e)),
                None => (Outcome::Pass, None, None),
            },
            Wiring::Distance { total, min_distance } => {
                let d = g.latest(*total).map_or(0.0, real);
                let outcome = if d < *min_distance { Outcome::Fail } else { Outcome::Pass };
                let detail = format!("distance travelled {d:.6} m, minimum {min_distance:.6} m");
                (outcome, None, Some(Evidence { tick: None, detail }))
            }
            Wiring::CollisionSpeed { score, first } => {
                let s = g.latest(*score).map_or(0.0, real);
                let e = collision_evidence(first);
                (if e.is_some() { Outcome::Fail } else { Outcome::Pass }, Some(s), e)
            }
            Wiring::AlmostFailing { score, closest, first } => {
                let s = g.latest(*score).map_or(0.0, real);
                match collision_evidence(first) {
                    Some(e) => (Outcome::Fail, Some(s), Some(e)),
                    None => {
                        let d = g.latest(*closest).map_or(f64::NAN, real);
                        let detail = format!("closest approach {d:.6} m");
                        (Outcome::Pass, Some(s), Some(Evidence { tick: None, detail }))
                    }
                }
            }
            Wiring::MeanGap { sum, count } => {
                let n = g.latest(*count).map_or(0.0, real);
                let mean = if n > 0.0 { g.latest(*sum).map_or(f64::NAN, real) / n } else { f64::NAN };
                (Outcome::Pass, mean.is_finite().then_some(mean), None)
            }
        };
        MonitorVerdict {
            monitor: self.spec.id.clone(),
            kind: self.spec.kind_name().to_string(),
            outcome,
            score,
            evidence,
        }
    }
}
