//! Road elements, their composition into networks, and actor placement.
//!
//! Every element has a local frame. A straight segment runs along +x from
//! port `ONE` at the origin to port `TWO` at `(length, 0)`. Intersections are
//! squares of side `nlanes * lane_width` centred on the origin with ports on
//! the east (`ONE`), south (`TWO`), west (`THREE`) and north (`FOUR`) edges;
//! a T-intersection has no north port. Port headings point out of the element.
//!
//! Traffic keeps right. Lane `+k` of a straight segment travels towards +x at
//! lateral offset `-(k - 0.5) * lane_width`; lane `-k` mirrors it.

use crate::error::{config, domain, Error, Result};
use crate::geom::{wrap_angle, OrientedRect, Pose, Vec2};
use crate::reactive::{StreamGraph, StreamId};
use serde::{Deserialize, Deserializer, Serialize};
use std::collections::{BTreeSet, HashMap, HashSet};
use std::f64::consts::PI;
use std::fmt;

pub const DEFAULT_LANE_WIDTH: f64 = 3.5;
/// Lane sentinel for the sidewalk beyond the outermost lane; `-SIDEWALK`
/// selects the opposite side.
pub const SIDEWALK: i32 = 1000;
/// Distance of the sidewalk centreline from the outer road edge.
pub const SIDEWALK_OFFSET: f64 = 1.0;

pub const POSITION_TOL: f64 = 1e-6;
pub const HEADING_TOL: f64 = 1e-9;

fn validation(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}

/// Light and fog levels, both in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub light: f64,
    pub fog: f64,
}

impl Default for World {
    fn default() -> Self {
        World { light: 1.0, fog: 0.0 }
    }
}

impl World {
    pub fn new(light: f64, fog: f64) -> Result<Self> {
        let w = World { light, fog };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("light", self.light), ("fog", self.fog)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(domain(format!("world {name} {v} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Fraction of the nominal perception range left by fog and darkness.
    pub fn visibility(&self) -> f64 {
        (1.0 - self.fog) * (0.5 + 0.5 * self.light)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoadKind {
    Straight,
    TIntersection,
    CrossIntersection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Port {
    One,
    Two,
    Three,
    Four,
}

impl fmt::Display for Port {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Port::One => "ONE",
            Port::Two => "TWO",
            Port::Three => "THREE",
            Port::Four => "FOUR",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadElement {
    pub id: String,
    pub kind: RoadKind,
    pub nlanes: u32,
    /// Segment length; intersections report their side length.
    pub length: f64,
    pub lane_width: f64,
}

impl RoadElement {
    fn build(id: &str, kind: RoadKind, nlanes: u32, length: f64) -> Result<Self> {
        if !matches!(nlanes, 2 | 4 | 6) {
            return Err(config(format!("road '{id}': nlanes must be 2, 4 or 6, got {nlanes}")));
        }
        let mut e = RoadElement { id: id.to_string(), kind, nlanes, length, lane_width: DEFAULT_LANE_WIDTH };
        if kind != RoadKind::Straight {
            e.length = e.width();
        } else if !(length.is_finite() && length > 0.0) {
            return Err(config(format!("road '{id}': length must be positive, got {length}")));
        }
        Ok(e)
    }

    pub fn straight(id: &str, length: f64, nlanes: u32) -> Result<Self> {
        Self::build(id, RoadKind::Straight, nlanes, length)
    }

    pub fn t_intersection(id: &str, nlanes: u32) -> Result<Self> {
        Self::build(id, RoadKind::TIntersection, nlanes, 0.0)
    }

    pub fn cross_intersection(id: &str, nlanes: u32) -> Result<Self> {
        Self::build(id, RoadKind::CrossIntersection, nlanes, 0.0)
    }

    pub fn with_lane_width(mut self, w: f64) -> Result<Self> {
        if !(w.is_finite() && w > 0.0) {
            return Err(config(format!("road '{}': lane width must be positive, got {w}", self.id)));
        }
        self.lane_width = w;
        if self.kind != RoadKind::Straight {
            self.length = self.width();
        }
        Ok(self)
    }

    /// Full carriageway width.
    pub fn width(&self) -> f64 {
        self.nlanes as f64 * self.lane_width
    }

    pub fn lanes_per_side(&self) -> u32 {
        self.nlanes / 2
    }

    pub fn ports(&self) -> &'static [Port] {
        match self.kind {
            RoadKind::Straight => &[Port::One, Port::Two],
            RoadKind::TIntersection => &[Port::One, Port::Two, Port::Three],
            RoadKind::CrossIntersection => &[Port::One, Port::Two, Port::Three, Port::Four],
        }
    }

    pub fn has_port(&self, port: Port) -> bool {
        self.ports().contains(&port)
    }

    /// Port pose in the element frame.
    pub fn port_pose(&self, port: Port) -> Result<Pose> {
        if !self.has_port(port) {
            return Err(validation(format!("road '{}' has no port {port}", self.id)));
        }
        let h = self.width() / 2.0;
        Ok(match (self.kind, port) {
            (RoadKind::Straight, Port::One) => Pose::new(0.0, 0.0, PI),
            (RoadKind::Straight, _) => Pose::new(self.length, 0.0, 0.0),
            (_, Port::One) => Pose::new(h, 0.0, 0.0),
            (_, Port::Two) => Pose::new(0.0, -h, -PI / 2.0),
            (_, Port::Three) => Pose::new(-h, 0.0, PI),
            (_, Port::Four) => Pose::new(0.0, h, PI / 2.0),
        })
    }

    pub fn footprint_local(&self) -> OrientedRect {
        match self.kind {
            RoadKind::Straight => OrientedRect::new(Vec2::new(self.length / 2.0, 0.0), 0.0, self.length, self.width()),
            _ => OrientedRect::new(Vec2::ZERO, 0.0, self.width(), self.width()),
        }
    }

    /// Lateral offset of a lane centreline (or sidewalk) from the reference line.
    pub fn lane_offset(&self, lane: i32) -> Result<f64> {
        let side = self.lanes_per_side() as i32;
        let k = lane.unsigned_abs() as f64;
        let magnitude = if lane.abs() == SIDEWALK {
            self.width() / 2.0 + SIDEWALK_OFFSET
        } else if lane != 0 && lane.abs() <= side {
            (k - 0.5) * self.lane_width
        } else {
            return Err(domain(format!(
                "lane {lane} out of range for road '{}' with {} lanes",
                self.id, self.nlanes
            )));
        };
        Ok(if lane > 0 { -magnitude } else { magnitude })
    }

    /// Pose on a lane centreline, `fraction` of the way along the lane's
    /// direction of travel.
    pub fn on_lane(&self, lane: i32, fraction: f64) -> Result<Pose> {
        if self.kind != RoadKind::Straight {
            return Err(domain(format!("on_lane needs a straight segment, '{}' is {:?}", self.id, self.kind)));
        }
        if !(0.0..=1.0).contains(&fraction) {
            return Err(domain(format!("lane fraction {fraction} outside [0, 1]")));
        }
        let y = self.lane_offset(lane)?;
        Ok(if lane > 0 {
            Pose::new(fraction * self.length, y, 0.0)
        } else {
            Pose::new((1.0 - fraction) * self.length, y, PI)
        })
    }

    /// Pose `meters` along the lane's direction of travel.
    pub fn on_lane_at(&self, lane: i32, meters: f64) -> Result<Pose> {
        if self.kind != RoadKind::Straight {
            return Err(domain(format!("on_lane needs a straight segment, '{}' is {:?}", self.id, self.kind)));
        }
        if !(0.0..=self.length).contains(&meters) {
            return Err(domain(format!("offset {meters} m outside road '{}' of length {}", self.id, self.length)));
        }
        self.on_lane(lane, meters / self.length)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PortRef {
    pub element: String,
    pub port: Port,
}

impl PortRef {
    pub fn new(element: &str, port: Port) -> Self {
        PortRef { element: element.to_string(), port }
    }
}

impl fmt::Display for PortRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.element, self.port)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Connection {
    pub parent: PortRef,
    pub child: PortRef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacedElement {
    pub element: RoadElement,
    pub pose: Pose,
}

impl PlacedElement {
    pub fn footprint(&self) -> OrientedRect {
        let local = self.element.footprint_local();
        OrientedRect {
            center: self.pose.compose(&Pose { pos: local.center, heading: 0.0 }).pos,
            heading: self.pose.heading,
            ..local
        }
    }
}

/// Elements with world poses plus the ports joining them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadNetwork {
    elements: Vec<PlacedElement>,
    connections: Vec<Connection>,
}

impl From<RoadElement> for RoadNetwork {
    fn from(e: RoadElement) -> Self {
        RoadNetwork::single(e)
    }
}

/// One binding of a `connect` call: parent port, child network, child port.
pub type Binding = (PortRef, RoadNetwork, PortRef);

/// Poses each child so its port meets the parent port head-on.
pub fn connect(parent: impl Into<RoadNetwork>, bindings: Vec<Binding>) -> Result<RoadNetwork> {
    parent.into().connect(bindings)
}

impl RoadNetwork {
    /// A network holding one element at the origin.
    pub fn single(e: RoadElement) -> Self {
        RoadNetwork { elements: vec![PlacedElement { element: e, pose: Pose::IDENTITY }], connections: vec![] }
    }

    pub fn elements(&self) -> &[PlacedElement] {
        &self.elements
    }

    pub fn connections(&self) -> &[Connection] {
        &self.connections
    }

    pub fn element(&self, id: &str) -> Option<&PlacedElement> {
        self.elements.iter().find(|p| p.element.id == id)
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.elements.iter().position(|p| p.element.id == id)
    }

    fn placed(&self, id: &str) -> Result<&PlacedElement> {
        self.element(id).ok_or_else(|| validation(format!("unknown road '{id}'")))
    }

    /// World pose of a port.
    pub fn port_pose(&self, p: &PortRef) -> Result<Pose> {
        let placed = self.placed(&p.element)?;
        Ok(placed.pose.compose(&placed.element.port_pose(p.port)?))
    }

    pub fn is_bound(&self, p: &PortRef) -> bool {
        self.connections.iter().any(|c| &c.parent == p || &c.child == p)
    }

    pub fn free_ports(&self) -> Vec<PortRef> {
        self.elements
            .iter()
            .flat_map(|pe| pe.element.ports().iter().map(|&port| PortRef::new(&pe.element.id, port)))
            .filter(|p| !self.is_bound(p))
            .collect()
    }

    /// Applies a rigid transform to every element.
    pub fn transformed(mut self, t: &Pose) -> Self {
        for pe in &mut self.elements {
            pe.pose = t.compose(&pe.pose);
        }
        self
    }

    fn check_free(&self, p: &PortRef) -> Result<()> {
        let placed = self.placed(&p.element)?;
        placed.element.port_pose(p.port)?;
        if self.is_bound(p) {
            return Err(validation(format!("port {p} is already connected")));
        }
        Ok(())
    }

    fn check_lanes(&self, a: &PortRef, other: &RoadNetwork, b: &PortRef) -> Result<()> {
        let (ea, eb) = (&self.placed(&a.element)?.element, &other.placed(&b.element)?.element);
        if ea.nlanes != eb.nlanes {
            return Err(validation(format!(
                "lane count mismatch: '{}' has {} lanes, '{}' has {} lanes",
                ea.id, ea.nlanes, eb.id, eb.nlanes
            )));
        }
        Ok(())
    }

    pub fn connect(mut self, bindings: Vec<Binding>) -> Result<Self> {
        for (pp, child, cp) in bindings {
            self.check_free(&pp)?;
            child.check_free(&cp)?;
            self.check_lanes(&pp, &child, &cp)?;
            if let Some(dup) = child.elements.iter().find(|c| self.element(&c.element.id).is_some()) {
                return Err(validation(format!("road id '{}' used twice", dup.element.id)));
            }
            let target = self.port_pose(&pp)?;
            let target = Pose { pos: target.pos, heading: wrap_angle(target.heading + PI) };
            let t = target.compose(&child.port_pose(&cp)?.inverse());
            let child = child.transformed(&t);
            self.elements.extend(child.elements);
            self.connections.extend(child.connections);
            self.connections.push(Connection { parent: pp, child: cp });
        }
        Ok(self)
    }

    /// Joins two free ports that already meet, closing a loop.
    pub fn link(&mut self, a: PortRef, b: PortRef) -> Result<()> {
        self.check_free(&a)?;
        self.check_free(&b)?;
        if a == b {
            return Err(validation(format!("port {a} cannot connect to itself")));
        }
        self.check_lanes(&a, self, &b)?;
        let (pa, pb) = (self.port_pose(&a)?, self.port_pose(&b)?);
        if let Some(v) = pose_mismatch(&a, &pb, &b, &pa) {
            return Err(validation(v.to_string()));
        }
        self.connections.push(Connection { parent: a, child: b });
        Ok(())
    }

    /// World pose on a straight road's lane.
    pub fn on_lane(&self, road: &str, lane: i32, fraction: f64) -> Result<Pose> {
        let pe = self.element(road).ok_or_else(|| config(format!("unknown road '{road}'")))?;
        Ok(pe.pose.compose(&pe.element.on_lane(lane, fraction)?))
    }

    pub fn on_lane_at(&self, road: &str, lane: i32, meters: f64) -> Result<Pose> {
        let pe = self.element(road).ok_or_else(|| config(format!("unknown road '{road}'")))?;
        Ok(pe.pose.compose(&pe.element.on_lane_at(lane, meters)?))
    }

    pub fn overlay(&self) -> OverlayGraph {
        OverlayGraph::build(self)
    }
}

/// A defect found by [`validate_network`].
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    LaneMismatch { a: PortRef, b: PortRef, lanes_a: u32, lanes_b: u32 },
    PortPose { a: PortRef, b: PortRef, position_error: f64, heading_error: f64 },
    Overlap { a: String, b: String },
    UnknownPort { port: PortRef },
    DuplicateId { id: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::LaneMismatch { a, b, lanes_a, lanes_b } => {
                write!(f, "lane count mismatch: {a} has {lanes_a} lanes, {b} has {lanes_b}")
            }
            Violation::PortPose { a, b, position_error, heading_error } => write!(
                f,
                "ports {a} and {b} do not meet: position error {position_error:.3e} m, heading error {heading_error:.3e} rad"
            ),
            Violation::Overlap { a, b } => write!(f, "roads '{a}' and '{b}' overlap"),
            Violation::UnknownPort { port } => write!(f, "unknown port {port}"),
            Violation::DuplicateId { id } => write!(f, "road id '{id}' used twice"),
        }
    }
}

fn pose_mismatch(a: &PortRef, pb: &Pose, b: &PortRef, pa: &Pose) -> Option<Violation> {
    let position_error = pa.pos.distance(pb.pos);
    let heading_error = wrap_angle(pa.heading - pb.heading - PI).abs();
    (position_error > POSITION_TOL || heading_error > HEADING_TOL).then(|| Violation::PortPose {
        a: a.clone(),
        b: b.clone(),
        position_error,
        heading_error,
    })
}

/// Lists lane mismatches, misaligned ports and overlapping footprints.
pub fn validate_network(net: &RoadNetwork) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for pe in &net.elements {
        if !seen.insert(pe.element.id.as_str()) {
            out.push(Violation::DuplicateId { id: pe.element.id.clone() });
        }
    }
    for c in &net.connections {
        let (pa, pb) = match (net.port_pose(&c.parent), net.port_pose(&c.child)) {
            (Ok(a), Ok(b)) => (a, b),
            (a, _) => {
                let port = if a.is_err() { c.parent.clone() } else { c.child.clone() };
                out.push(Violation::UnknownPort { port });
                continue;
            }
        };
        let (ea, eb) = (&net.placed(&c.parent.element).unwrap().element, &net.placed(&c.child.element).unwrap().element);
        if ea.nlanes != eb.nlanes {
            out.push(Violation::LaneMismatch {
                a: c.parent.clone(),
                b: c.child.clone(),
                lanes_a: ea.nlanes,
                lanes_b: eb.nlanes,
            });
        }
        out.extend(pose_mismatch(&c.parent, &pb, &c.child, &pa));
    }
    let rects: Vec<OrientedRect> = net.elements.iter().map(PlacedElement::footprint).collect();
    for i in 0..rects.len() {
        for j in i + 1..rects.len() {
            if rects[i].overlaps(&rects[j], POSITION_TOL) {
                out.push(Violation::Overlap {
                    a: net.elements[i].element.id.clone(),
                    b: net.elements[j].element.id.clone(),
                });
            }
        }
    }
    out
}

/// A block of one cross intersection with a segment leaving east and
/// another leaving north.
pub fn grid_block(tag: &str, nlanes: u32, segment_length: f64) -> Result<RoadNetwork> {
    let x = RoadElement::cross_intersection(&format!("x{tag}"), nlanes)?;
    let e = RoadElement::straight(&format!("e{tag}"), segment_length, nlanes)?;
    let n = RoadElement::straight(&format!("n{tag}"), segment_length, nlanes)?;
    connect(
        x,
        vec![
            (PortRef::new(&format!("x{tag}"), Port::One), e.into(), PortRef::new(&format!("e{tag}"), Port::One)),
            (PortRef::new(&format!("x{tag}"), Port::Four), n.into(), PortRef::new(&format!("n{tag}"), Port::One)),
        ],
    )
}

/// Grid world made by iterating [`grid_block`] over `rows x cols`.
pub fn grid_world(rows: usize, cols: usize, nlanes: u32, segment_length: f64) -> Result<RoadNetwork> {
    if rows == 0 || cols == 0 {
        return Err(config("grid needs at least one row and one column"));
    }
    let tag = |r: usize, c: usize| format!("_{r}_{c}");
    let mut net = grid_block(&tag(0, 0), nlanes, segment_length)?;
    for r in 0..rows {
        for c in 0..cols {
            if r == 0 && c == 0 {
                continue;
            }
            let block = grid_block(&tag(r, c), nlanes, segment_length)?;
            let x = format!("x{}", tag(r, c));
            net = if c > 0 {
                let from = PortRef::new(&format!("e{}", tag(r, c - 1)), Port::Two);
                net.connect(vec![(from, block, PortRef::new(&x, Port::Three))])?
            } else {
                let from = PortRef::new(&format!("n{}", tag(r - 1, c)), Port::Two);
                net.connect(vec![(from, block, PortRef::new(&x, Port::Two))])?
            };
            if r > 0 && c > 0 {
                net.link(PortRef::new(&format!("n{}", tag(r - 1, c)), Port::Two), PortRef::new(&x, Port::Two))?;
            }
        }
    }
    Ok(net)
}

/// A lane endpoint at a port: where a lane enters or leaves an element.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Waypoint {
    pub element: usize,
    pub port: Port,
    pub lane: u32,
    pub entry: bool,
    pub pose: Pose,
}

/// Lane-level routing graph over a network.
#[derive(Debug, Clone, Default)]
pub struct OverlayGraph {
    pub nodes: Vec<Waypoint>,
    pub edges: Vec<Vec<(usize, f64)>>,
    index: HashMap<(usize, Port, u32, bool), usize>,
}

impl OverlayGraph {
    fn build(net: &RoadNetwork) -> Self {
        let mut g = OverlayGraph::default();
        for (ei, pe) in net.elements.iter().enumerate() {
            let w = pe.element.lane_width;
            for &port in pe.element.ports() {
                let pp = pe.pose.compose(&pe.element.port_pose(port).unwrap());
                for k in 1..=pe.element.lanes_per_side() {
                    let off = (k as f64 - 0.5) * w;
                    for entry in [true, false] {
                        let (lat, heading) = if entry { (off, pp.heading + PI) } else { (-off, pp.heading) };
                        let pos = pp.pos + Vec2::new(0.0, lat).rotate(pp.heading);
                        g.index.insert((ei, port, k, entry), g.nodes.len());
                        g.nodes.push(Waypoint { element: ei, port, lane: k, entry, pose: Pose { pos, heading: wrap_angle(heading) } });
                    }
                }
            }
        }
        g.edges = vec![Vec::new(); g.nodes.len()];
        for (ei, pe) in net.elements.iter().enumerate() {
            let ports = pe.element.ports();
            for &p in ports {
                for &q in ports.iter().filter(|&&q| q != p) {
                    for k in 1..=pe.element.lanes_per_side() {
                        let lanes: Vec<u32> = if pe.element.kind == RoadKind::Straight {
                            vec![k]
                        } else {
                            (1..=pe.element.lanes_per_side()).collect()
                        };
                        for j in lanes {
                            g.add_edge(g.index[&(ei, p, k, true)], g.index[&(ei, q, j, false)]);
                        }
                    }
                }
            }
        }
        for c in &net.connections {
            let (Some(a), Some(b)) = (net.index_of(&c.parent.element), net.index_of(&c.child.element)) else {
                continue;
            };
            let lanes = net.elements[a].element.lanes_per_side().min(net.elements[b].element.lanes_per_side());
            for k in 1..=lanes {
                for (x, px, y, py) in [(a, c.parent.port, b, c.child.port), (b, c.child.port, a, c.parent.port)] {
                    if let (Some(&from), Some(&to)) = (g.index.get(&(x, px, k, false)), g.index.get(&(y, py, k, true))) {
                        g.add_edge(from, to);
                    }
                }
            }
        }
        g
    }

    fn add_edge(&mut self, from: usize, to: usize) {
        let d = self.nodes[from].pose.pos.distance(self.nodes[to].pose.pos);
        self.edges[from].push((to, d));
    }

    pub fn node(&self, element: usize, port: Port, lane: u32, entry: bool) -> Option<usize> {
        self.index.get(&(element, port, lane, entry)).copied()
    }

    /// Follows the straightest successor from the start of a straight road's
    /// lane until a dead end, a revisit, or `max_length` metres.
    pub fn route(&self, net: &RoadNetwork, road: &str, lane: i32, max_length: f64) -> Result<Vec<Vec2>> {
        let ei = net.index_of(road).ok_or_else(|| config(format!("unknown road '{road}'")))?;
        let e = &net.elements[ei].element;
        if e.kind != RoadKind::Straight || lane == 0 || lane.unsigned_abs() > e.lanes_per_side() {
            return Err(config(format!("no route along lane {lane} of road '{road}'")));
        }
        let port = if lane > 0 { Port::One } else { Port::Two };
        let mut cur = self.node(ei, port, lane.unsigned_abs(), true).unwrap();
        let mut visited = BTreeSet::new();
        let mut path = vec![self.nodes[cur].pose.pos];
        let mut length = 0.0;
        while visited.insert(cur) && length < max_length {
            let h = self.nodes[cur].pose.heading;
            let best = self.edges[cur].iter().min_by(|a, b| {
                let ta = wrap_angle(self.nodes[a.0].pose.heading - h).abs();
                let tb = wrap_angle(self.nodes[b.0].pose.heading - h).abs();
                ta.total_cmp(&tb).then(a.0.cmp(&b.0))
            });
            let Some(&(next, d)) = best else { break };
            if d > 0.0 {
                path.push(self.nodes[next].pose.pos);
                length += d;
            }
            cur = next;
        }
        if path.len() < 2 {
            return Err(config(format!("no route along lane {lane} of road '{road}'")));
        }
        Ok(path)
    }
}

/// A polyline with arc-length lookup.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    points: Vec<Vec2>,
    cumulative: Vec<f64>,
}

impl Polyline {
    pub fn new(points: Vec<Vec2>) -> Result<Self> {
        if points.len() < 2 {
            return Err(config("a path needs at least two points"));
        }
        let mut cumulative = vec![0.0];
        for w in points.windows(2) {
            cumulative.push(cumulative.last().unwrap() + w[0].distance(w[1]));
        }
        Ok(Polyline { points, cumulative })
    }

    pub fn length(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    /// Pose at arc length `s`, clamped to the ends.
    pub fn at(&self, s: f64) -> Pose {
        let s = s.clamp(0.0, self.length());
        let i = match self.cumulative.partition_point(|&c| c <= s) {
            0 => 0,
            i => (i - 1).min(self.points.len() - 2),
        };
        let (a, b) = (self.points[i], self.points[i + 1]);
        let seg = self.cumulative[i + 1] - self.cumulative[i];
        let t = if seg > 0.0 { (s - self.cumulative[i]) / seg } else { 0.0 };
        let d = b - a;
        Pose { pos: a + d * t, heading: d.y.atan2(d.x) }
    }

    /// Arc length of the point on the path closest to `p`.
    pub fn project(&self, p: Vec2) -> f64 {
        let mut best = (f64::INFINITY, 0.0);
        for (i, w) in self.points.windows(2).enumerate() {
            let d = w[1] - w[0];
            let len2 = d.dot(d);
            let t = if len2 > 0.0 { ((p - w[0]).dot(d) / len2).clamp(0.0, 1.0) } else { 0.0 };
            let q = w[0] + d * t;
            let dist = q.distance(p);
            if dist < best.0 {
                best = (dist, self.cumulative[i] + t * len2.sqrt());
            }
        }
        best.1
    }
}

fn lane_selector<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<i32, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Sel {
        Num(i32),
        Name(String),
    }
    match Sel::deserialize(d)? {
        Sel::Num(n) => Ok(n),
        Sel::Name(s) if s == "sidewalk" => Ok(SIDEWALK),
        Sel::Name(s) if s == "-sidewalk" => Ok(-SIDEWALK),
        Sel::Name(s) => Err(serde::de::Error::custom(format!("unknown lane '{s}'"))),
    }
}

/// Where an actor starts or heads to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Placement {
    /// `fraction` of the lane length, or `offset` metres, along the lane.
    OnLane {
        road: String,
        #[serde(deserialize_with = "lane_selector")]
        lane: i32,
        #[serde(default)]
        fraction: Option<f64>,
        #[serde(default)]
        offset: Option<f64>,
    },
    /// `gap` metres bumper-to-bumper ahead of another actor.
    Ahead { ahead_of: String, gap: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActorKind {
    AutonomousVehicle,
    ScriptedVehicle,
    Pedestrian,
}

impl ActorKind {
    pub fn default_size(self) -> (f64, f64) {
        match self {
            ActorKind::Pedestrian => (0.5, 0.5),
            _ => (4.5, 1.8),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActorSpec {
    pub id: String,
    pub kind: ActorKind,
    pub start: Placement,
    #[serde(default)]
    pub length: Option<f64>,
    #[serde(default)]
    pub width: Option<f64>,
    /// Inert metadata.
    #[serde(default)]
    pub color: Option<String>,
    /// Walking speed for pedestrians, maximum speed for scripted vehicles.
    #[serde(default)]
    pub speed: Option<f64>,
    #[serde(default)]
    pub initial_speed: f64,
    /// Pedestrian trigger distance; absent means always triggered.
    #[serde(default)]
    pub trigger_distance: Option<f64>,
    /// Actor whose proximity triggers a pedestrian; defaults to the autonomous vehicle.
    #[serde(default)]
    pub trigger_actor: Option<String>,
    #[serde(default)]
    pub target: Option<Placement>,
    #[serde(default)]
    pub acceleration: Option<f64>,
    /// Controller id plus its parameters (autonomous vehicles only).
    #[serde(default)]
    pub controller: Option<serde_json::Value>,
}

impl ActorSpec {
    pub fn size(&self) -> (f64, f64) {
        let (l, w) = self.kind.default_size();
        (self.length.unwrap_or(l), self.width.unwrap_or(w))
    }

    pub fn validate(&self) -> Result<()> {
        let (l, w) = self.size();
        if !(l > 0.0 && w > 0.0 && l.is_finite() && w.is_finite()) {
            return Err(config(format!("actor '{}': geometry must have positive dimensions", self.id)));
        }
        if self.initial_speed < 0.0 {
            return Err(config(format!("actor '{}': initial speed must be non-negative", self.id)));
        }
        Ok(())
    }
}

/// Resolves a placement; `others` supplies poses and lengths of actors
/// already placed.
pub fn resolve_placement(
    net: &RoadNetwork,
    p: &Placement,
    own_length: f64,
    others: &HashMap<String, (Pose, f64)>,
) -> Result<Pose> {
    match p {
        Placement::OnLane { road, lane, fraction, offset } => match (fraction, offset) {
            (Some(f), None) => net.on_lane(road, *lane, *f),
            (None, Some(m)) => net.on_lane_at(road, *lane, *m),
            _ => Err(config(format!("placement on '{road}' needs exactly one of fraction and offset"))),
        },
        Placement::Ahead { ahead_of, gap } => {
            let (pose, len) = others
                .get(ahead_of)
                .ok_or_else(|| config(format!("placement refers to unknown or later actor '{ahead_of}'")))?;
            let d = gap + len / 2.0 + own_length / 2.0;
            Ok(Pose { pos: pose.pos + pose.direction() * d, heading: pose.heading })
        }
    }
}

/// Streams driving one pedestrian. The simulator feeds the pedestrian's
/// position into `position` and moves it one step whenever `walk` fires.
#[derive(Debug, Clone, Copy)]
pub struct PedestrianStreams {
    pub position: StreamId,
    pub trigger: StreamId,
    pub walk: StreamId,
    pub done: StreamId,
}

/// Kinematic description of a triggered pedestrian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pedestrian {
    pub start: Vec2,
    pub target: Vec2,
    pub speed: f64,
    pub trigger_distance: f64,
    pub dt: f64,
}

impl Pedestrian {
    pub fn new(start: Vec2, target: Vec2, speed: f64, trigger_distance: Option<f64>, dt: f64) -> Result<Self> {
        if !(speed > 0.0 && speed.is_finite()) {
            return Err(config(format!("pedestrian speed must be positive, got {speed}")));
        }
        let trigger_distance = trigger_distance.unwrap_or(f64::INFINITY);
        if trigger_distance.is_nan() || trigger_distance < 0.0 {
            return Err(config(format!("trigger distance must be non-negative, got {trigger_distance}")));
        }
        Ok(Pedestrian { start, target, speed, trigger_distance, dt })
    }

    pub fn arrival_tolerance(&self) -> f64 {
        self.speed * self.dt / 2.0
    }

    /// Wires `trigger = car.filter(near start)`,
    /// `walk = tick.skip_until(trigger).take_until(done)` and
    /// `done = position.filter(at target)`.
    pub fn behavior(&self, g: &mut StreamGraph, car_pos: StreamId, name: &str) -> Result<PedestrianStreams> {
        let position = g.input(&format!("{name}.pos"));
        let (start, dist) = (self.start, self.trigger_distance);
        let near = g.filter(car_pos, move |v| v.as_pos().is_some_and(|p| p.distance(start) < dist))?;
        let trigger = g.first(near)?;
        let (target, tol) = (self.target, self.arrival_tolerance());
        let arrived = g.filter(position, move |v| v.as_pos().is_some_and(|p| p.distance(target) <= tol))?;
        let done = g.first(arrived)?;
        let tick = g.tick();
        let after = g.skip_until(tick, trigger)?;
        let walk = g.take_until(after, done)?;
        g.set_name(trigger, &format!("{name}.trigger"))?;
        g.set_name(done, &format!("{name}.done"))?;
        g.set_name(walk, &format!("{name}.walk"))?;
        Ok(PedestrianStreams { position, trigger, walk, done })
    }

    /// One step towards the target.
    pub fn step(&self, pos: Vec2) -> Vec2 {
        let to = self.target - pos;
        let remaining = to.norm();
        let step = self.speed * self.dt;
        if remaining <= step {
            self.target
        } else {
            pos + to * (step / remaining)
        }
    }

    /// Heading of the crossing direction.
    pub fn heading(&self) -> f64 {
        let d = self.target - self.start;
        d.y.atan2(d.x)
    }
}

/// Lane follower accelerating to a capped speed.
#[derive(Debug, Clone, PartialEq)]
pub struct ScriptedVehicle {
    pub path: Polyline,
    pub s: f64,
    pub speed: f64,
    pub max_speed: f64,
    pub acceleration: f64,
}

pub const SCRIPTED_ACCELERATION: f64 = 2.0;

impl ScriptedVehicle {
    /// Builds the follower for `spec` starting at `start`, routed along the
    /// lane named in its placement (or the lane of the actor it is ahead of).
    pub fn new(net: &RoadNetwork, road: &str, lane: i32, start: Vec2, spec: &ActorSpec) -> Result<Self> {
        let max_speed = spec.speed.unwrap_or(0.0);
        if !(max_speed >= 0.0 && max_speed.is_finite()) {
            return Err(config(format!("actor '{}': maximum speed must be non-negative", spec.id)));
        }
        let acceleration = spec.acceleration.unwrap_or(SCRIPTED_ACCELERATION);
        if !(acceleration > 0.0) {
            return Err(config(format!("actor '{}': acceleration must be positive", spec.id)));
        }
        let route = net.overlay().route(net, road, lane, 10_000.0)?;
        let path = Polyline::new(route)?;
        let s = path.project(start);
        Ok(ScriptedVehicle { path, s, speed: spec.initial_speed.min(max_speed), max_speed, acceleration })
    }

    pub fn pose(&self) -> Pose {
        self.path.at(self.s)
    }

    pub fn step(&mut self, dt: f64) -> Pose {
        self.speed = (self.speed + self.acceleration * dt).min(self.max_speed);
        self.s += self.speed * dt;
        if self.s >= self.path.length() {
            self.s = self.path.length();
            self.speed = 0.0;
        }
        self.pose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-9
    }

    #[test]
    fn on_lane_positions() {
        let r = RoadElement::straight("r", 100.0, 2).unwrap();
        let p = r.on_lane(1, 0.1).unwrap();
        assert!(close(p.pos.x, 10.0) && close(p.pos.y, -1.75) && close(p.heading, 0.0));
        let q = r.on_lane(-1, 0.1).unwrap();
        assert!(close(q.pos.x, 90.0) && close(q.pos.y, 1.75) && close(q.heading, PI));
        assert!(close(r.on_lane(1, 0.0).unwrap().pos.x, 0.0));
        assert!(close(r.on_lane(1, 1.0).unwrap().pos.x, 100.0));
        assert!(matches!(r.on_lane(2, 0.5), Err(Error::Domain(_))));
        assert!(close(r.on_lane(SIDEWALK, 0.5).unwrap().pos.y, -4.5));
        assert!(close(r.on_lane(-SIDEWALK, 0.5).unwrap().pos.y, 4.5));
    }

    #[test]
    fn straight_ports_face_apart() {
        let r = RoadElement::straight("r", 50.0, 4).unwrap();
        let (a, b) = (r.port_pose(Port::One).unwrap(), r.port_pose(Port::Two).unwrap());
        assert!(close(wrap_angle(a.heading - b.heading).abs(), PI));
        assert!(r.port_pose(Port::Three).is_err());
    }

    #[test]
    fn empty_bindings_keep_parent() {
        let t = RoadElement::t_intersection("t", 2).unwrap();
        let net = connect(t.clone(), vec![]).unwrap();
        assert_eq!(net.elements().len(), 1);
        assert_eq!(net.free_ports().len(), 3);
    }

    #[test]
    fn port_reuse_rejected() {
        let a = RoadElement::straight("a", 10.0, 2).unwrap();
        let b = RoadElement::straight("b", 10.0, 2).unwrap();
        let c = RoadElement::straight("c", 10.0, 2).unwrap();
        let net = connect(a, vec![(PortRef::new("a", Port::Two), b.into(), PortRef::new("b", Port::One))]).unwrap();
        let err = net.connect(vec![(PortRef::new("a", Port::Two), c.into(), PortRef::new("c", Port::One))]);
        assert!(matches!(err, Err(Error::Validation(_))));
    }

    #[test]
    fn scripted_vehicle_reaches_cap() {
        let net = RoadNetwork::single(RoadElement::straight("r", 500.0, 2).unwrap());
        let spec: ActorSpec = serde_json::from_value(serde_json::json!({
            "id": "lead", "kind": "scripted_vehicle", "speed": 5.5,
            "start": {"road": "r", "lane": 1, "fraction": 0.1}
        }))
        .unwrap();
        let start = net.on_lane("r", 1, 0.1).unwrap();
        let mut v = ScriptedVehicle::new(&net, "r", 1, start.pos, &spec).unwrap();
        for _ in 0..200 {
            v.step(0.05);
        }
        assert!(close(v.speed, 5.5));
        assert!(close(v.pose().pos.y, -1.75));
    }

    #[test]
    fn polyline_lookup() {
        let p = Polyline::new(vec![Vec2::new(0.0, 0.0), Vec2::new(10.0, 0.0), Vec2::new(10.0, 5.0)]).unwrap();
        assert!(close(p.length(), 15.0));
        let q = p.at(12.0);
        assert!(close(q.pos.x, 10.0) && close(q.pos.y, 2.0) && close(q.heading, PI / 2.0));
        assert!(close(p.project(Vec2::new(4.0, 1.0)), 4.0));
    }
}
