#![allow(dead_code)]

use drivecov::coverage::dispersion_exact;
use drivecov::monitors::Probe;
use drivecov::reactive::{StreamGraph, StreamId, Value};
use std::path::PathBuf;

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// Every box whose faces lie on point coordinates or the cube faces,
/// kept when no point is strictly inside.
pub fn brute_dispersion_2d(points: &[Vec<f64>]) -> f64 {
    let mut xs: Vec<f64> = points.iter().map(|p| p[0]).chain([0.0, 1.0]).collect();
    let mut ys: Vec<f64> = points.iter().map(|p| p[1]).chain([0.0, 1.0]).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    ys.sort_by(f64::total_cmp);
    ys.dedup();
    let mut best = 0.0f64;
    for (i, &x1) in xs.iter().enumerate() {
        for &x2 in &xs[i + 1..] {
            for (j, &y1) in ys.iter().enumerate() {
                for &y2 in &ys[j + 1..] {
                    let area = (x2 - x1) * (y2 - y1);
                    if area <= best {
                        continue;
                    }
                    let empty = !points.iter().any(|p| x1 < p[0] && p[0] < x2 && y1 < p[1] && p[1] < y2);
                    if empty {
                        best = area;
                    }
                }
            }
        }
    }
    best
}

/// Exact 3D dispersion: every x-interval between candidate coordinates,
/// times the exact 2D dispersion of the points strictly inside it.
pub fn exact_dispersion_3d(points: &[Vec<f64>]) -> f64 {
    let mut xs: Vec<f64> = points.iter().map(|p| p[0]).chain([0.0, 1.0]).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let mut best = 0.0f64;
    for (i, &x1) in xs.iter().enumerate() {
        for &x2 in &xs[i + 1..] {
            if x2 - x1 <= best {
                continue;
            }
            let inner: Vec<Vec<f64>> =
                points.iter().filter(|p| x1 < p[0] && p[0] < x2).map(|p| vec![p[1], p[2]]).collect();
            let v = (x2 - x1) * dispersion_exact(&inner, 2).unwrap().value;
            best = best.max(v);
        }
    }
    best
}

/// Closed-form outcome of the shipped jaywalk scenario.
pub struct Jaywalk {
    pub ego_x0: f64,
    pub ego_y: f64,
    pub speed: f64,
    pub ped_x: f64,
    pub ped_y0: f64,
    pub ped_y1: f64,
    pub range: f64,
    pub delay: f64,
    pub decel: f64,
    pub dt: f64,
    pub car_half_length: f64,
    pub car_half_width: f64,
    pub ped_half: f64,
    pub margin: f64,
}

impl Default for Jaywalk {
    fn default() -> Self {
        Jaywalk {
            ego_x0: 10.0,
            ego_y: -1.75,
            speed: 16.0,
            ped_x: 100.0,
            ped_y0: 4.5,
            ped_y1: -4.5,
            range: 30.0,
            delay: 0.5,
            decel: 8.0,
            dt: 0.05,
            car_half_length: 2.25,
            car_half_width: 0.9,
            ped_half: 0.25,
            margin: 0.5,
        }
    }
}

impl Jaywalk {
    /// Collision verdict with the walk start and brake onset shifted by the given times.
    pub fn collides_shifted(&self, ped_speed: f64, trigger: f64, walk_shift: f64, brake_shift: f64) -> bool {
        let lateral = self.ped_y0 - self.ego_y;
        if trigger <= lateral {
            return false;
        }
        let x_trigger = self.ped_x - (trigger * trigger - lateral * lateral).sqrt();
        let t_trigger = ((x_trigger - self.ego_x0) / self.speed).max(0.0);
        let t_walk = t_trigger + self.dt + walk_shift;
        let y_at = |dy: f64| t_walk + dy / ped_speed;

        // pedestrian inside the sensing corridor, and overlapping the car laterally
        let corridor = self.car_half_width + self.margin + self.ped_half;
        let (c_in, c_out) = (y_at(self.ped_y0 - (self.ego_y + corridor)), y_at(self.ped_y0 - (self.ego_y - corridor)));
        let overlap = self.car_half_width + self.ped_half;
        let (o_in, o_out) = (y_at(self.ped_y0 - (self.ego_y + overlap)), y_at(self.ped_y0 - (self.ego_y - overlap)));
        let ped_past_target = self.ego_y - corridor < self.ped_y1;
        let c_out = if ped_past_target { f64::INFINITY } else { c_out };

        let gap_at = |t: f64| self.ped_x - self.ped_half - (self.ego_x0 + self.speed * t + self.car_half_length);
        let behind = -(self.car_half_length + self.ped_half);
        let t_detect = if gap_at(c_in) <= behind {
            None
        } else if gap_at(c_in) < self.range {
            Some(c_in)
        } else {
            let t_range = (self.ped_x - self.ped_half - self.car_half_length - self.range - self.ego_x0) / self.speed;
            (t_range < c_out).then_some(t_range)
        };
        let t_brake = t_detect.map(|t| t + self.delay + brake_shift);

        let x_at = |t: f64| -> f64 {
            match t_brake {
                Some(tb) if t > tb => {
                    let tau = (t - tb).min(self.speed / self.decel);
                    self.ego_x0 + self.speed * tb + self.speed * tau - 0.5 * self.decel * tau * tau
                }
                _ => self.ego_x0 + self.speed * t,
            }
        };
        let (x_enter, x_leave) = (
            self.ped_x - self.ped_half - self.car_half_length,
            self.ped_x + self.ped_half + self.car_half_length,
        );
        // first time the car centre passes `x`, if it ever does
        let reach = |x: f64| -> Option<f64> {
            let free = (x - self.ego_x0) / self.speed;
            match t_brake {
                Some(tb) if free > tb => {
                    let rest = x - x_at(tb);
                    let disc = self.speed * self.speed - 2.0 * self.decel * rest;
                    (disc > 0.0).then(|| tb + (self.speed - disc.sqrt()) / self.decel)
                }
                _ => Some(free),
            }
        };
        match reach(x_enter) {
            None => false,
            Some(te) => {
                let tl = reach(x_leave).unwrap_or(f64::INFINITY);
                te < o_out && tl > o_in
            }
        }
    }

    pub fn collides(&self, ped_speed: f64, trigger: f64) -> bool {
        self.collides_shifted(ped_speed, trigger, 0.0, 0.0)
    }

    /// The verdict changes somewhere within one tick of the nominal timing.
    pub fn near_boundary(&self, ped_speed: f64, trigger: f64) -> bool {
        let nominal = self.collides(ped_speed, trigger);
        let shifts = [-self.dt, 0.0, self.dt];
        shifts
            .iter()
            .flat_map(|&w| shifts.iter().map(move |&b| (w, b)))
            .any(|(w, b)| self.collides_shifted(ped_speed, trigger, w, b) != nominal)
    }
}

/// Marble notation: one char per tick, `-` silent, a digit an `Int` event,
/// a letter a `Symbol`.
pub fn parse_marble(s: &str) -> Vec<Option<Value>> {
    s.chars()
        .map(|c| match c {
            '-' => None,
            d if d.is_ascii_digit() => Some(Value::Int(d.to_digit(10).unwrap() as i64)),
            l => Some(Value::Symbol(l.to_string())),
        })
        .collect()
}

pub fn token(v: &Value) -> String {
    match v {
        Value::Unit => "u".into(),
        Value::Bool(b) => if *b { "T" } else { "F" }.into(),
        Value::Int(i) if (0..10).contains(i) => i.to_string(),
        Value::Int(i) => format!("({i})"),
        Value::Real(x) if x.fract() == 0.0 && (0.0..10.0).contains(x) => format!("{x}"),
        Value::Real(x) => format!("({x})"),
        Value::Symbol(s) if s.len() == 1 => s.clone(),
        Value::Symbol(s) => format!("({s})"),
        Value::Pos(p) => format!("({},{})", p.x, p.y),
        Value::Pair(a, b) => format!("({}{})", token(a), token(b)),
    }
}

/// Plays the input marbles, finishes the graph, and renders `out`:
/// one token per tick, then `|`, then whatever fired at completion.
pub fn play(g: &mut StreamGraph, inputs: &[(StreamId, &str)], out: StreamId) -> String {
    let probe = Probe::attach(g, out).unwrap();
    let parsed: Vec<(StreamId, Vec<Option<Value>>)> = inputs.iter().map(|(s, m)| (*s, parse_marble(m))).collect();
    let ticks = parsed.iter().map(|(_, m)| m.len()).max().unwrap_or(0);
    for t in 0..ticks {
        let events: Vec<(StreamId, Value)> =
            parsed.iter().filter_map(|(s, m)| m.get(t).cloned().flatten().map(|v| (*s, v))).collect();
        g.advance(t as u64, &events).unwrap();
    }
    g.finish().unwrap();
    let events = probe.events();
    let mut text = String::new();
    for t in 0..=ticks as u64 {
        if t == ticks as u64 {
            text.push('|');
        }
        match events.iter().find(|(et, _)| *et == t) {
            Some((_, v)) => text.push_str(&token(v)),
            None if t < ticks as u64 => text.push('-'),
            None => {}
        }
    }
    text
}

/// The witness box lies in the unit cube, has the reported volume and holds
/// no point strictly inside.
pub fn witness_ok(points: &[Vec<f64>], r: &drivecov::coverage::DispersionResult) -> bool {
    let b = &r.witness_box;
    let inside = b.low.iter().zip(&b.high).all(|(l, h)| 0.0 <= *l && l < h && *h <= 1.0);
    inside && (b.volume() - r.value).abs() <= 1e-12 && !points.iter().any(|p| b.contains_interior(p))
}
