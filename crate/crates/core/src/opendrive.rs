//! OpenDRIVE 1.4 export of road networks (line geometry, lane sections, junctions).

use crate::error::{Error, Result};
use crate::geom::{Pose, Vec2};
use crate::scene::{validate_network, Port, PortRef, RoadKind, RoadNetwork};
use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

pub const REV_MAJOR: u32 = 1;
pub const REV_MINOR: u32 = 4;
/// Endpoint continuity tolerance on re-read documents.
pub const CONTINUITY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementType {
    Road,
    Junction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContactPoint {
    Start,
    End,
}

impl ContactPoint {
    fn as_str(self) -> &'static str {
        match self {
            ContactPoint::Start => "start",
            ContactPoint::End => "end",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "start" => Ok(ContactPoint::Start),
            "end" => Ok(ContactPoint::End),
            _ => Err(Error::Xml(format!("bad contactPoint '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Link {
    pub element_type: ElementType,
    pub element_id: u32,
    pub contact_point: Option<ContactPoint>,
}

/// A straight `line` record of the plan view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Geometry {
    pub s: f64,
    pub x: f64,
    pub y: f64,
    pub hdg: f64,
    pub length: f64,
}

impl Geometry {
    pub fn end(&self) -> Vec2 {
        Vec2::new(self.x, self.y) + Vec2::from_angle(self.hdg) * self.length
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lane {
    pub id: i32,
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Road {
    pub id: u32,
    pub name: String,
    pub length: f64,
    /// Junction id for connecting roads, -1 otherwise.
    pub junction: i64,
    pub predecessor: Option<Link>,
    pub successor: Option<Link>,
    pub geometry: Vec<Geometry>,
    /// Ordered from the outermost left lane to the outermost right lane, centre excluded.
    pub lanes: Vec<Lane>,
}

impl Road {
    pub fn start(&self) -> Option<Vec2> {
        self.geometry.first().map(|g| Vec2::new(g.x, g.y))
    }

    pub fn end(&self) -> Option<Vec2> {
        self.geometry.last().map(Geometry::end)
    }

    pub fn point(&self, c: ContactPoint) -> Option<Vec2> {
        match c {
            ContactPoint::Start => self.start(),
            ContactPoint::End => self.end(),
        }
    }

    pub fn has_lane(&self, id: i32) -> bool {
        self.lanes.iter().any(|l| l.id == id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Connection {
    pub id: u32,
    pub incoming_road: u32,
    pub connecting_road: u32,
    pub contact_point: ContactPoint,
    pub lane_links: Vec<(i32, i32)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Junction {
    pub id: u32,
    pub name: String,
    pub connections: Vec<Connection>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpenDriveDocument {
    pub name: String,
    pub roads: Vec<Road>,
    pub junctions: Vec<Junction>,
}

fn lanes(lanes_per_side: u32, width: f64) -> Vec<Lane> {
    let n = lanes_per_side as i32;
    (1..=n)
        .rev()
        .map(|id| Lane { id, width })
        .chain((1..=n).map(|k| Lane { id: -k, width }))
        .collect()
}

impl OpenDriveDocument {
    /// Refuses networks with validation violations.
    pub fn from_network(net: &RoadNetwork, name: &str) -> Result<Self> {
        let violations = validate_network(net);
        if !violations.is_empty() {
            let lines: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
            return Err(Error::Validation(format!("network is invalid:\n{}", lines.join("\n"))));
        }
        let mut road_ids: HashMap<&str, u32> = HashMap::new();
        let mut junction_ids: HashMap<&str, u32> = HashMap::new();
        for pe in net.elements() {
            let id = pe.element.id.as_str();
            if pe.element.kind == RoadKind::Straight {
                road_ids.insert(id, road_ids.len() as u32 + 1);
            } else {
                junction_ids.insert(id, junction_ids.len() as u32 + 1);
            }
        }
        let neighbor = |pr: &PortRef| -> Option<PortRef> {
            net.connections().iter().find_map(|c| {
                if &c.parent == pr {
                    Some(c.child.clone())
                } else if &c.child == pr {
                    Some(c.parent.clone())
                } else {
                    None
                }
            })
        };
        let contact = |p: Port| if p == Port::One { ContactPoint::Start } else { ContactPoint::End };
        // Neighbouring straight road and the end of it that touches `pr`.
        let straight_at = |pr: &PortRef| -> Option<(u32, ContactPoint)> {
            let o = neighbor(pr)?;
            road_ids.get(o.element.as_str()).map(|&id| (id, contact(o.port)))
        };
        let link_at = |pr: &PortRef| -> Option<Link> {
            let o = neighbor(pr)?;
            if let Some(&id) = road_ids.get(o.element.as_str()) {
                Some(Link { element_type: ElementType::Road, element_id: id, contact_point: Some(contact(o.port)) })
            } else {
                junction_ids.get(o.element.as_str()).map(|&id| Link {
                    element_type: ElementType::Junction,
                    element_id: id,
                    contact_point: None,
                })
            }
        };

        let mut roads = Vec::new();
        let mut junctions = Vec::new();
        for pe in net.elements() {
            let e = &pe.element;
            if e.kind != RoadKind::Straight {
                continue;
            }
            roads.push(Road {
                id: road_ids[e.id.as_str()],
                name: e.id.clone(),
                length: e.length,
                junction: -1,
                predecessor: link_at(&PortRef::new(&e.id, Port::One)),
                successor: link_at(&PortRef::new(&e.id, Port::Two)),
                geometry: vec![Geometry { s: 0.0, x: pe.pose.pos.x, y: pe.pose.pos.y, hdg: pe.pose.heading, length: e.length }],
                lanes: lanes(e.lanes_per_side(), e.lane_width),
            });
        }
        let mut next_id = road_ids.len() as u32 + 1;
        for pe in net.elements() {
            let e = &pe.element;
            if e.kind == RoadKind::Straight {
                continue;
            }
            let jid = junction_ids[e.id.as_str()];
            let n = e.lanes_per_side() as i32;
            let mut connections = Vec::new();
            let ports = e.ports();
            for (i, &pa) in ports.iter().enumerate() {
                for &pb in &ports[i + 1..] {
                    let (ra, rb) = (PortRef::new(&e.id, pa), PortRef::new(&e.id, pb));
                    let a: Pose = net.port_pose(&ra)?;
                    let b: Pose = net.port_pose(&rb)?;
                    let d = b.pos - a.pos;
                    let id = next_id;
                    next_id += 1;
                    let road_link = |pr: &PortRef| {
                        straight_at(pr).map(|(rid, c)| Link {
                            element_type: ElementType::Road,
                            element_id: rid,
                            contact_point: Some(c),
                        })
                    };
                    roads.push(Road {
                        id,
                        name: format!("{}:{pa}-{pb}", e.id),
                        length: d.norm(),
                        junction: jid as i64,
                        predecessor: road_link(&ra),
                        successor: road_link(&rb),
                        geometry: vec![Geometry { s: 0.0, x: a.pos.x, y: a.pos.y, hdg: d.y.atan2(d.x), length: d.norm() }],
                        lanes: lanes(e.lanes_per_side(), e.lane_width),
                    });
                    for (pr, cp) in [(&ra, ContactPoint::Start), (&rb, ContactPoint::End)] {
                        if let Some((incoming, at)) = straight_at(pr) {
                            // lanes that drive into the junction, onto lanes that drive away from `cp`
                            let from = if at == ContactPoint::End { -1 } else { 1 };
                            let to = if cp == ContactPoint::Start { -1 } else { 1 };
                            connections.push(Connection {
                                id: connections.len() as u32,
                                incoming_road: incoming,
                                connecting_road: id,
                                contact_point: cp,
                                lane_links: (1..=n).map(|k| (from * k, to * k)).collect(),
                            });
                        }
                    }
                }
            }
            junctions.push(Junction { id: jid, name: e.id.clone(), connections });
        }
        Ok(OpenDriveDocument { name: name.to_string(), roads, junctions })
    }

    pub fn road(&self, id: u32) -> Option<&Road> {
        self.roads.iter().find(|r| r.id == id)
    }

    pub fn junction(&self, id: u32) -> Option<&Junction> {
        self.junctions.iter().find(|j| j.id == id)
    }

    pub fn to_xml(&self) -> String {
        let mut s = String::new();
        s.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<OpenDRIVE>\n");
        let _ = writeln!(
            s,
            "  <header revMajor=\"{REV_MAJOR}\" revMinor=\"{REV_MINOR}\" name=\"{}\" version=\"1.00\"/>",
            escape(&self.name)
        );
        for r in &self.roads {
            let _ = writeln!(
                s,
                "  <road name=\"{}\" length=\"{}\" id=\"{}\" junction=\"{}\">",
                escape(&r.name),
                num(r.length),
                r.id,
                r.junction
            );
            if r.predecessor.is_some() || r.successor.is_some() {
                s.push_str("    <link>\n");
                for (tag, l) in [("predecessor", &r.predecessor), ("successor", &r.successor)] {
                    if let Some(l) = l {
                        let kind = match l.element_type {
                            ElementType::Road => "road",
                            ElementType::Junction => "junction",
                        };
                        let _ = write!(s, "      <{tag} elementType=\"{kind}\" elementId=\"{}\"", l.element_id);
                        if let Some(c) = l.contact_point {
                            let _ = write!(s, " contactPoint=\"{}\"", c.as_str());
                        }
                        s.push_str("/>\n");
                    }
                }
                s.push_str("    </link>\n");
            }
            s.push_str("    <planView>\n");
            for g in &r.geometry {
                let _ = writeln!(
                    s,
                    "      <geometry s=\"{}\" x=\"{}\" y=\"{}\" hdg=\"{}\" length=\"{}\">\n        <line/>\n      </geometry>",
                    num(g.s),
                    num(g.x),
                    num(g.y),
                    angle(g.hdg),
                    num(g.length)
                );
            }
            s.push_str("    </planView>\n    <lanes>\n      <laneSection s=\"0.000000\">\n");
            let left: Vec<&Lane> = r.lanes.iter().filter(|l| l.id > 0).collect();
            let right: Vec<&Lane> = r.lanes.iter().filter(|l| l.id < 0).collect();
            let mut group = |tag: &str, ls: &[&Lane]| {
                if ls.is_empty() {
                    return;
                }
                let _ = writeln!(s, "        <{tag}>");
                for l in ls {
                    let _ = writeln!(
                        s,
                        "          <lane id=\"{}\" type=\"driving\" level=\"false\">\n            <width sOffset=\"0.000000\" a=\"{}\" b=\"0.000000\" c=\"0.000000\" d=\"0.000000\"/>\n          </lane>",
                        l.id,
                        num(l.width)
                    );
                }
                let _ = writeln!(s, "        </{tag}>");
            };
            group("left", &left);
            s.push_str("        <center>\n          <lane id=\"0\" type=\"none\" level=\"false\"/>\n        </center>\n");
            let mut group = |tag: &str, ls: &[&Lane]| {
                let _ = writeln!(s, "        <{tag}>");
                for l in ls {
                    let _ = writeln!(
                        s,
                        "          <lane id=\"{}\" type=\"driving\" level=\"false\">\n            <width sOffset=\"0.000000\" a=\"{}\" b=\"0.000000\" c=\"0.000000\" d=\"0.000000\"/>\n          </lane>",
                        l.id,
                        num(l.width)
                    );
                }
                let _ = writeln!(s, "        </{tag}>");
            };
            if !right.is_empty() {
                group("right", &right);
            }
            s.push_str("      </laneSection>\n    </lanes>\n  </road>\n");
        }
        for j in &self.junctions {
            let _ = writeln!(s, "  <junction name=\"{}\" id=\"{}\">", escape(&j.name), j.id);
            for c in &j.connections {
                let _ = writeln!(
                    s,
                    "    <connection id=\"{}\" incomingRoad=\"{}\" connectingRoad=\"{}\" contactPoint=\"{}\">",
                    c.id,
                    c.incoming_road,
                    c.connecting_road,
                    c.contact_point.as_str()
                );
                for (from, to) in &c.lane_links {
                    let _ = writeln!(s, "      <laneLink from=\"{from}\" to=\"{to}\"/>");
                }
                s.push_str("    </connection>\n");
            }
            s.push_str("  </junction>\n");
        }
        s.push_str("</OpenDRIVE>\n");
        s
    }

    /// Reads back the subset this module writes.
    pub fn parse(xml: &str) -> Result<Self> {
        let doc = roxmltree::Document::parse(xml).map_err(|e| Error::Xml(e.to_string()))?;
        let root = doc.root_element();
        if root.tag_name().name() != "OpenDRIVE" {
            return Err(Error::Xml("root element is not OpenDRIVE".into()));
        }
        let header = child(root, "header").ok_or_else(|| Error::Xml("missing header".into()))?;
        let (maj, min): (u32, u32) = (attr(header, "revMajor")?, attr(header, "revMinor")?);
        if (maj, min) != (REV_MAJOR, REV_MINOR) {
            return Err(Error::Xml(format!("unsupported revision {maj}.{min}")));
        }
        let mut out = OpenDriveDocument {
            name: header.attribute("name").unwrap_or_default().to_string(),
            roads: vec![],
            junctions: vec![],
        };
        for n in root.children().filter(|n| n.is_element()) {
            match n.tag_name().name() {
                "road" => out.roads.push(parse_road(n)?),
                "junction" => {
                    let mut j = Junction { id: attr(n, "id")?, name: n.attribute("name").unwrap_or_default().into(), connections: vec![] };
                    for c in n.children().filter(|c| c.has_tag_name("connection")) {
                        j.connections.push(Connection {
                            id: attr(c, "id")?,
                            incoming_road: attr(c, "incomingRoad")?,
                            connecting_road: attr(c, "connectingRoad")?,
                            contact_point: ContactPoint::parse(c.attribute("contactPoint").unwrap_or_default())?,
                            lane_links: c
                                .children()
                                .filter(|l| l.has_tag_name("laneLink"))
                                .map(|l| Ok((attr(l, "from")?, attr(l, "to")?)))
                                .collect::<Result<_>>()?,
                        });
                    }
                    out.junctions.push(j);
                }
                _ => {}
            }
        }
        Ok(out)
    }

    /// Structural problems: length sums, dangling references, endpoint gaps.
    pub fn check(&self) -> Vec<String> {
        let mut problems = Vec::new();
        let mut seen = std::collections::BTreeSet::new();
        for r in &self.roads {
            if !seen.insert(r.id) {
                problems.push(format!("road id {} repeats", r.id));
            }
            let sum: f64 = r.geometry.iter().map(|g| g.length).sum();
            if (sum - r.length).abs() > CONTINUITY_TOL {
                problems.push(format!("road {}: length {} but geometry sums to {sum}", r.id, r.length));
            }
            for (c, link) in [(ContactPoint::Start, &r.predecessor), (ContactPoint::End, &r.successor)] {
                let Some(l) = link else { continue };
                match l.element_type {
                    ElementType::Junction => {
                        if self.junction(l.element_id).is_none() {
                            problems.push(format!("road {} links to missing junction {}", r.id, l.element_id));
                        }
                    }
                    ElementType::Road => match (self.road(l.element_id), l.contact_point) {
                        (Some(o), Some(oc)) => self.gap(&mut problems, r, c, o, oc),
                        _ => problems.push(format!("road {} has an unresolvable link to road {}", r.id, l.element_id)),
                    },
                }
            }
        }
        for j in &self.junctions {
            for c in &j.connections {
                let (Some(inc), Some(con)) = (self.road(c.incoming_road), self.road(c.connecting_road)) else {
                    problems.push(format!("junction {} connection {} references a missing road", j.id, c.id));
                    continue;
                };
                if con.junction != j.id as i64 {
                    problems.push(format!("road {} is not a connecting road of junction {}", con.id, j.id));
                }
                let at = |l: &Option<Link>| {
                    l.is_some_and(|l| l.element_type == ElementType::Junction && l.element_id == j.id)
                };
                let end = if at(&inc.predecessor) {
                    ContactPoint::Start
                } else if at(&inc.successor) {
                    ContactPoint::End
                } else {
                    problems.push(format!("road {} does not link to junction {}", inc.id, j.id));
                    continue;
                };
                self.gap(&mut problems, inc, end, con, c.contact_point);
                for &(from, to) in &c.lane_links {
                    if !inc.has_lane(from) || !con.has_lane(to) {
                        problems.push(format!("junction {} connection {}: lane link {from} -> {to} is dangling", j.id, c.id));
                    }
                }
            }
        }
        problems
    }

    fn gap(&self, problems: &mut Vec<String>, a: &Road, ac: ContactPoint, b: &Road, bc: ContactPoint) {
        match (a.point(ac), b.point(bc)) {
            (Some(p), Some(q)) if p.distance(q) <= CONTINUITY_TOL => {}
            (Some(p), Some(q)) => problems.push(format!(
                "roads {} and {} are {} m apart at their joint",
                a.id,
                b.id,
                p.distance(q)
            )),
            _ => problems.push(format!("road {} or {} has no geometry", a.id, b.id)),
        }
    }
}

fn parse_road(n: roxmltree::Node) -> Result<Road> {
    let link = |tag: &str| -> Result<Option<Link>> {
        let Some(l) = child(n, "link").and_then(|l| child(l, tag)) else {
            return Ok(None);
        };
        let element_type = match l.attribute("elementType") {
            Some("road") => ElementType::Road,
            Some("junction") => ElementType::Junction,
            other => return Err(Error::Xml(format!("bad elementType {other:?}"))),
        };
        let contact_point = l.attribute("contactPoint").map(ContactPoint::parse).transpose()?;
        Ok(Some(Link { element_type, element_id: attr(l, "elementId")?, contact_point }))
    };
    let mut geometry = Vec::new();
    if let Some(pv) = child(n, "planView") {
        for g in pv.children().filter(|g| g.has_tag_name("geometry")) {
            if child(g, "line").is_none() {
                return Err(Error::Xml("only line geometry is supported".into()));
            }
            geometry.push(Geometry {
                s: attr(g, "s")?,
                x: attr(g, "x")?,
                y: attr(g, "y")?,
                hdg: attr(g, "hdg")?,
                length: attr(g, "length")?,
            });
        }
    }
    let mut lanes = Vec::new();
    if let Some(sec) = child(n, "lanes").and_then(|l| child(l, "laneSection")) {
        for side in ["left", "right"] {
            if let Some(group) = child(sec, side) {
                for l in group.children().filter(|l| l.has_tag_name("lane")) {
                    let width = child(l, "width").map(|w| attr(w, "a")).transpose()?.unwrap_or(0.0);
                    lanes.push(Lane { id: attr(l, "id")?, width });
                }
            }
        }
    }
    Ok(Road {
        id: attr(n, "id")?,
        name: n.attribute("name").unwrap_or_default().to_string(),
        length: attr(n, "length")?,
        junction: attr(n, "junction")?,
        predecessor: link("predecessor")?,
        successor: link("successor")?,
        geometry,
        lanes,
    })
}

fn child<'a, 'i>(n: roxmltree::Node<'a, 'i>, tag: &str) -> Option<roxmltree::Node<'a, 'i>> {
    n.children().find(|c| c.has_tag_name(tag))
}

fn attr<T: std::str::FromStr>(n: roxmltree::Node, name: &str) -> Result<T> {
    let raw = n
        .attribute(name)
        .ok_or_else(|| Error::Xml(format!("<{}> lacks '{name}'", n.tag_name().name())))?;
    raw.parse()
        .map_err(|_| Error::Xml(format!("<{}> has a bad '{name}': {raw}", n.tag_name().name())))
}

fn num(x: f64) -> String {
    let s = format!("{x:.6}");
    if s == "-0.000000" { "0.000000".into() } else { s }
}

/// Headings carry extra digits so long roads still close within tolerance.
fn angle(x: f64) -> String {
    let s = format!("{x:.12}");
    if s.trim_start_matches('-').trim_start_matches(['0', '.']).is_empty() {
        "0.000000000000".into()
    } else {
        s
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
        .replace('\'', "&apos;")
}

pub fn to_xml(net: &RoadNetwork, name: &str) -> Result<String> {
    Ok(OpenDriveDocument::from_network(net, name)?.to_xml())
}

/// Writes the network atomically (temp file, then rename).
pub fn export_network(net: &RoadNetwork, path: &Path) -> Result<()> {
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("network");
    let xml = to_xml(net, name)?;
    let tmp = path.with_extension("xodr.tmp");
    std::fs::write(&tmp, xml)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{connect, RoadElement};

    #[test]
    fn single_segment() {
        let net = RoadNetwork::single(RoadElement::straight("s", 100.0, 2).unwrap());
        let xml = to_xml(&net, "s").unwrap();
        assert!(xml.contains("length=\"100.000000\""));
        let doc = OpenDriveDocument::parse(&xml).unwrap();
        assert_eq!(doc.roads.len(), 1);
        assert_eq!(doc.roads[0].lanes.iter().map(|l| l.id).collect::<Vec<_>>(), vec![1, -1]);
        assert!(doc.junctions.is_empty());
        assert!(doc.check().is_empty());
    }

    #[test]
    fn t_composite_round_trip() {
        let t = RoadElement::t_intersection("t", 2).unwrap();
        let seg = |id: &str| RoadNetwork::from(RoadElement::straight(id, 100.0, 2).unwrap());
        let net = connect(
            t,
            vec![
                (PortRef::new("t", Port::One), seg("a"), PortRef::new("a", Port::One)),
                (PortRef::new("t", Port::Two), seg("b"), PortRef::new("b", Port::Two)),
                (PortRef::new("t", Port::Three), seg("c"), PortRef::new("c", Port::One)),
            ],
        )
        .unwrap();
        let xml = to_xml(&net, "t").unwrap();
        let doc = OpenDriveDocument::parse(&xml).unwrap();
        assert_eq!(doc.roads.iter().filter(|r| r.junction < 0).count(), 3);
        assert_eq!(doc.junctions.len(), 1);
        assert_eq!(doc.junctions[0].connections.len(), 6);
        assert_eq!(doc.check(), Vec::<String>::new());
        assert_eq!(doc.to_xml(), xml);
    }

    #[test]
    fn negative_zero_is_normalized() {
        assert_eq!(num(-1e-12), "0.000000");
        assert_eq!(angle(-1e-15), "0.000000000000");
        assert_eq!(angle(-0.5), "-0.500000000000");
    }
}
