//! Fixed-step 2D kinematics, collisions, ideal sensors and scripted controllers.

use crate::error::{config, Error, Result};
use crate::geom::{OrientedRect, Pose, Vec2};
use crate::monitors::{self, ActorStreams, Installed, MonitorSpec, MonitorVerdict, Outcome};
use crate::reactive::{StreamGraph, StreamId, Value};
use crate::scene::{
    resolve_placement, validate_network, ActorKind, ActorSpec, Pedestrian, PedestrianStreams, Placement, RoadNetwork,
    ScriptedVehicle, World,
};
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet, VecDeque};
use std::f64::consts::FRAC_PI_2;

pub const DEFAULT_DT: f64 = 0.05;
/// Lateral slack added to the vehicle's half-width when looking ahead.
pub const CORRIDOR_MARGIN: f64 = 0.5;

fn sim_err(msg: impl Into<String>) -> Error {
    Error::Sim(msg.into())
}

/// Actuation limits mapping normalized controls to physical rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleLimits {
    pub a_max: f64,
    pub b_max: f64,
    pub v_max: f64,
    pub omega_max: f64,
}

impl Default for VehicleLimits {
    fn default() -> Self {
        VehicleLimits { a_max: 4.0, b_max: 8.0, v_max: 40.0, omega_max: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Controls {
    pub throttle: f64,
    pub steering: f64,
}

impl Controls {
    pub fn clamped(self) -> Controls {
        Controls { throttle: self.throttle.clamp(-1.0, 1.0), steering: self.steering.clamp(-1.0, 1.0) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ActorState {
    pub id: String,
    pub kind: ActorKind,
    pub pose: Pose,
    pub speed: f64,
    pub length: f64,
    pub width: f64,
}

impl ActorState {
    pub fn rect(&self) -> OrientedRect {
        OrientedRect::new(self.pose.pos, self.pose.heading, self.length, self.width)
    }

    pub fn velocity(&self) -> Vec2 {
        self.pose.direction() * self.speed
    }

    pub fn is_vehicle(&self) -> bool {
        self.kind != ActorKind::Pedestrian
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimState {
    pub tick: u64,
    pub dt: f64,
    pub world: World,
    pub actors: Vec<ActorState>,
}

impl SimState {
    pub fn time(&self) -> f64 {
        self.tick as f64 * self.dt
    }
}

/// Advances one vehicle by `dt` with forward Euler.
pub fn step_vehicle(a: &mut ActorState, c: Controls, limits: &VehicleLimits, dt: f64) -> Result<()> {
    if !(c.throttle.is_finite() && c.steering.is_finite()) {
        return Err(sim_err(format!("non-finite controls for '{}': {c:?}", a.id)));
    }
    let c = c.clamped();
    let accel = if c.throttle >= 0.0 { c.throttle * limits.a_max } else { c.throttle * limits.b_max };
    let dir = a.pose.direction();
    a.pose.pos = a.pose.pos + dir * (a.speed * dt);
    a.pose.heading = crate::geom::wrap_angle(a.pose.heading + c.steering * limits.omega_max * dt);
    a.speed = (a.speed + accel * dt).clamp(0.0, limits.v_max);
    Ok(())
}

/// Applies controls to the listed actors and advances the tick. Actors
/// without controls keep their state; behaviors move them.
pub fn step_physics(state: &SimState, controls: &[(usize, Controls)], limits: &VehicleLimits, dt: f64) -> Result<SimState> {
    if !(dt > 0.0) {
        return Err(sim_err(format!("time step must be positive, got {dt}")));
    }
    let mut next = state.clone();
    for &(i, c) in controls {
        let a = next.actors.get_mut(i).ok_or_else(|| sim_err(format!("no actor {i}")))?;
        step_vehicle(a, c, limits, dt)?;
    }
    next.tick += 1;
    Ok(next)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CollisionEvent {
    pub a: usize,
    pub b: usize,
    pub relative_speed: f64,
    pub tick: u64,
}

/// Separating-axis overlap per actor pair; each pair reports once, on its
/// first overlapping tick. `seen` carries the pairs already reported.
pub fn detect_collisions(state: &SimState, seen: &mut HashSet<(usize, usize)>) -> Vec<CollisionEvent> {
    let rects: Vec<OrientedRect> = state.actors.iter().map(ActorState::rect).collect();
    let mut out = Vec::new();
    for i in 0..rects.len() {
        for j in i + 1..rects.len() {
            if seen.contains(&(i, j)) || !rects[i].overlaps(&rects[j], 0.0) {
                continue;
            }
            seen.insert((i, j));
            let rel = (state.actors[i].velocity() - state.actors[j].velocity()).norm();
            out.push(CollisionEvent { a: i, b: j, relative_speed: rel, tick: state.tick });
        }
    }
    out
}

/// Ideal sensor readings for one vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SensorFrame {
    pub tick: u64,
    pub dt: f64,
    pub speed: f64,
    /// Bumper gap to the nearest vehicle ahead in the corridor.
    pub lead_distance: Option<f64>,
    /// Gap to the nearest pedestrian ahead in the corridor.
    pub pedestrian_distance: Option<f64>,
    pub visibility: f64,
}

impl SensorFrame {
    pub fn nearest_obstacle(&self) -> Option<f64> {
        match (self.lead_distance, self.pedestrian_distance) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }
}

pub fn perceive(state: &SimState, ego: usize) -> SensorFrame {
    let me = &state.actors[ego];
    let (fwd, left) = (me.pose.direction(), Vec2::from_angle(me.pose.heading + FRAC_PI_2));
    let mut lead: Option<f64> = None;
    let mut ped: Option<f64> = None;
    for (i, o) in state.actors.iter().enumerate() {
        if i == ego {
            continue;
        }
        let d = o.pose.pos - me.pose.pos;
        let r = o.rect();
        let (long, lat) = (d.dot(fwd), d.dot(left));
        if long <= 0.0 || lat.abs() >= me.width / 2.0 + CORRIDOR_MARGIN + r.radius_along(left) {
            continue;
        }
        let gap = (long - me.length / 2.0 - r.radius_along(fwd)).max(0.0);
        let slot = if o.is_vehicle() { &mut lead } else { &mut ped };
        *slot = Some(slot.map_or(gap, |g| g.min(gap)));
    }
    SensorFrame {
        tick: state.tick,
        dt: state.dt,
        speed: me.speed,
        lead_distance: lead,
        pedestrian_distance: ped,
        visibility: state.world.visibility(),
    }
}

/// A system under test: sensor frame in, normalized controls out.
pub trait Controller: Send {
    fn control(&mut self, frame: &SensorFrame) -> std::result::Result<Controls, String>;
}

fn default_lead_speed() -> f64 {
    5.5
}

fn default_follow_gain() -> f64 {
    0.2
}

fn default_standoff() -> f64 {
    6.0
}

fn default_brake_limit() -> f64 {
    0.25
}

/// Controller registry entries, keyed by `id` in scenario files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControllerSpec {
    /// Cruises; brakes fully `reaction_delay` seconds after an obstacle
    /// enters the corridor within the effective perception range.
    ProximityBrake { cruise_speed: f64, perception_range: f64, reaction_delay: f64 },
    /// Car follower tuned for a lead at `assumed_lead_speed`, with gentle
    /// braking and a cruise speed that drops as visibility falls.
    AccFollow {
        cruise_speed: f64,
        perception_range: f64,
        reaction_delay: f64,
        #[serde(default = "default_lead_speed")]
        assumed_lead_speed: f64,
        #[serde(default = "default_follow_gain")]
        follow_gain: f64,
        #[serde(default = "default_standoff")]
        standoff: f64,
        #[serde(default = "default_brake_limit")]
        brake_limit: f64,
    },
    /// Fixed controls.
    Constant {
        throttle: f64,
        #[serde(default)]
        steering: f64,
    },
}

pub const REGISTERED_CONTROLLERS: &[&str] = &["proximity_brake", "acc_follow", "constant"];

impl ControllerSpec {
    pub fn from_json(v: &serde_json::Value) -> Result<Self> {
        if let Some(id) = v.get("id").and_then(|x| x.as_str()) {
            if !REGISTERED_CONTROLLERS.contains(&id) {
                return Err(config(format!(
                    "unknown controller '{id}'; registered: {}",
                    REGISTERED_CONTROLLERS.join(", ")
                )));
            }
        }
        serde_json::from_value(v.clone()).map_err(|e| config(format!("controller: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, v: f64, ok: bool| {
            if ok && v.is_finite() {
                Ok(())
            } else {
                Err(config(format!("controller {name} out of range: {v}")))
            }
        };
        match *self {
            ControllerSpec::ProximityBrake { cruise_speed, perception_range, reaction_delay }
            | ControllerSpec::AccFollow { cruise_speed, perception_range, reaction_delay, .. } => {
                check("cruise_speed", cruise_speed, cruise_speed >= 0.0)?;
                check("perception_range", perception_range, perception_range > 0.0)?;
                check("reaction_delay", reaction_delay, reaction_delay >= 0.0)?;
            }
            ControllerSpec::Constant { throttle, steering } => {
                check("throttle", throttle, true)?;
                check("steering", steering, true)?;
            }
        }
        Ok(())
    }

    pub fn build(&self, dt: f64, limits: VehicleLimits) -> Result<Box<dyn Controller>> {
        self.validate()?;
        let delay = |tau: f64| (tau / dt).round() as usize;
        Ok(match *self {
            ControllerSpec::ProximityBrake { cruise_speed, perception_range, reaction_delay } => {
                Box::new(ProximityBrake::new(cruise_speed, perception_range, delay(reaction_delay), limits))
            }
            ControllerSpec::AccFollow {
                cruise_speed,
                perception_range,
                reaction_delay,
                assumed_lead_speed,
                follow_gain,
                standoff,
                brake_limit,
            } => Box::new(AccFollow {
                cruise_speed,
                perception_range,
                assumed_lead_speed,
                follow_gain,
                standoff,
                brake_limit,
                limits,
                seen: DelayLine::new(delay(reaction_delay)),
            }),
            ControllerSpec::Constant { throttle, steering } => Box::new(ConstantControls(Controls { throttle, steering })),
        })
    }
}

/// Fixed-length delay of a per-tick signal.
#[derive(Debug, Clone)]
struct DelayLine<T> {
    delay: usize,
    buf: VecDeque<T>,
}

impl<T: Clone + Default> DelayLine<T> {
    fn new(delay: usize) -> Self {
        DelayLine { delay, buf: VecDeque::with_capacity(delay + 1) }
    }

    /// Pushes this tick's value, returns the value from `delay` ticks ago.
    fn push(&mut self, v: T) -> T {
        self.buf.push_back(v);
        if self.buf.len() > self.delay + 1 {
            self.buf.pop_front();
        }
        if self.buf.len() == self.delay + 1 {
            self.buf[0].clone()
        } else {
            T::default()
        }
    }
}

fn cruise_throttle(target: f64, speed: f64, limits: &VehicleLimits, dt: f64) -> f64 {
    ((target - speed) / (limits.a_max * dt)).clamp(-1.0, 1.0)
}

pub struct ProximityBrake {
    pub cruise_speed: f64,
    pub perception_range: f64,
    limits: VehicleLimits,
    seen: DelayLine<bool>,
}

impl ProximityBrake {
    pub fn new(cruise_speed: f64, perception_range: f64, delay_ticks: usize, limits: VehicleLimits) -> Self {
        ProximityBrake { cruise_speed, perception_range, limits, seen: DelayLine::new(delay_ticks) }
    }
}

impl Controller for ProximityBrake {
    fn control(&mut self, f: &SensorFrame) -> std::result::Result<Controls, String> {
        let range = self.perception_range * f.visibility;
        let now = f.nearest_obstacle().is_some_and(|g| g < range);
        let throttle = if self.seen.push(now) {
            -1.0
        } else {
            cruise_throttle(self.cruise_speed, f.speed, &self.limits, f.dt)
        };
        Ok(Controls { throttle, steering: 0.0 })
    }
}

pub struct AccFollow {
    pub cruise_speed: f64,
    pub perception_range: f64,
    pub assumed_lead_speed: f64,
    pub follow_gain: f64,
    pub standoff: f64,
    pub brake_limit: f64,
    limits: VehicleLimits,
    seen: DelayLine<Option<f64>>,
}

/// Visibility below which the follower will not drive at all.
pub const ACC_BLIND_VISIBILITY: f64 = 0.3;
/// Visibility from which the follower drives at full cruise speed.
pub const ACC_CLEAR_VISIBILITY: f64 = 0.7;

impl Controller for AccFollow {
    fn control(&mut self, f: &SensorFrame) -> std::result::Result<Controls, String> {
        let range = self.perception_range * f.visibility;
        let lead = self.seen.push(f.lead_distance.filter(|&g| g < range));
        let confidence =
            ((f.visibility - ACC_BLIND_VISIBILITY) / (ACC_CLEAR_VISIBILITY - ACC_BLIND_VISIBILITY)).clamp(0.0, 1.0);
        let free = self.cruise_speed * confidence;
        let target = match lead {
            Some(g) => free.min(self.assumed_lead_speed + self.follow_gain * (g - self.standoff)).max(0.0),
            None => free,
        };
        let throttle = cruise_throttle(target, f.speed, &self.limits, f.dt).max(-self.brake_limit);
        Ok(Controls { throttle, steering: 0.0 })
    }
}

pub struct ConstantControls(pub Controls);

impl Controller for ConstantControls {
    fn control(&mut self, _: &SensorFrame) -> std::result::Result<Controls, String> {
        Ok(self.0)
    }
}

/// A fully instantiated scenario: no parameter references left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub world: World,
    pub network: RoadNetwork,
    pub actors: Vec<ActorSpec>,
    pub monitors: Vec<MonitorSpec>,
}

impl Scenario {
    pub fn ego(&self) -> Result<&ActorSpec> {
        let mut av = self.actors.iter().filter(|a| a.kind == ActorKind::AutonomousVehicle);
        match (av.next(), av.next()) {
            (Some(a), None) => Ok(a),
            (None, _) => Err(config("scenario needs exactly one autonomous vehicle, found none")),
            _ => Err(config("scenario needs exactly one autonomous vehicle, found several")),
        }
    }

    /// Checks everything that does not need a simulation.
    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        let violations = validate_network(&self.network);
        if !violations.is_empty() {
            let list: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
            return Err(Error::Validation(list.join("; ")));
        }
        let ego = self.ego()?;
        let spec = ego
            .controller
            .as_ref()
            .ok_or_else(|| config(format!("autonomous vehicle '{}' has no controller", ego.id)))?;
        ControllerSpec::from_json(spec)?.validate()?;
        let mut ids = HashSet::new();
        for a in &self.actors {
            a.validate()?;
            if !ids.insert(a.id.as_str()) {
                return Err(config(format!("actor id '{}' used twice", a.id)));
            }
            if a.kind != ActorKind::AutonomousVehicle && a.controller.is_some() {
                return Err(config(format!("actor '{}': only the autonomous vehicle takes a controller", a.id)));
            }
        }
        let mut monitor_ids = HashSet::new();
        for m in &self.monitors {
            m.validate()?;
            if !monitor_ids.insert(m.id.as_str()) {
                return Err(config(format!("monitor id '{}' used twice", m.id)));
            }
            for a in m.actors() {
                if !ids.contains(a) {
                    return Err(config(format!("monitor '{}' refers to unknown actor '{a}'", m.id)));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub duration: f64,
    pub dt: f64,
    pub limits: VehicleLimits,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig { duration: 15.0, dt: DEFAULT_DT, limits: VehicleLimits::default() }
    }
}

impl SimConfig {
    pub fn duration_ticks(&self) -> u64 {
        (self.duration / self.dt - 1e-9).ceil().max(0.0) as u64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.duration >= 0.0 && self.duration.is_finite()) {
            return Err(config(format!("duration must be non-negative, got {}", self.duration)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimEvent {
    pub tick: u64,
    pub kind: String,
    pub actors: Vec<String>,
    pub data: serde_json::Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    Errored,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Pass => "pass",
            Status::Fail => "fail",
            Status::Errored => "errored",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub status: Status,
    /// Last tick simulated.
    pub ticks: u64,
    pub verdicts: Vec<MonitorVerdict>,
    /// Path length of the autonomous vehicle, summed directly.
    pub path_length: f64,
    pub mean_gap: Option<f64>,
    pub error: Option<String>,
    pub events: Vec<SimEvent>,
}

impl IterationReport {
    fn errored(scenario: &Scenario, ticks: u64, msg: String, events: Vec<SimEvent>) -> Self {
        IterationReport {
            status: Status::Errored,
            ticks,
            verdicts: scenario.monitors.iter().map(|m| MonitorVerdict::errored(m, &msg)).collect(),
            path_length: 0.0,
            mean_gap: None,
            error: Some(msg),
            events,
        }
    }

    pub fn verdict(&self, monitor: &str) -> Option<&MonitorVerdict> {
        self.verdicts.iter().find(|v| v.monitor == monitor)
    }

    pub fn score(&self, monitor: &str) -> Option<f64> {
        self.verdict(monitor).and_then(|v| v.score)
    }
}

enum Behavior {
    Ego(Box<dyn Controller>),
    Scripted(ScriptedVehicle),
    Walker(Pedestrian, PedestrianStreams),
}

struct Rig {
    state: SimState,
    behaviors: Vec<Behavior>,
    streams: Vec<ActorStreams>,
    ego: usize,
}

/// Finds the road and lane a placement chain ends on.
fn lane_of(actors: &[ActorSpec], p: &Placement) -> Result<(String, i32)> {
    let mut p = p;
    for _ in 0..=actors.len() {
        match p {
            Placement::OnLane { road, lane, .. } => return Ok((road.clone(), *lane)),
            Placement::Ahead { ahead_of, .. } => {
                p = &actors
                    .iter()
                    .find(|a| &a.id == ahead_of)
                    .ok_or_else(|| config(format!("unknown actor '{ahead_of}'")))?
                    .start;
            }
        }
    }
    Err(config("placement chain loops"))
}

fn build(scenario: &Scenario, cfg: &SimConfig, g: &mut StreamGraph) -> Result<Rig> {
    let ego_id = scenario.ego()?.id.clone();
    let mut placed: HashMap<String, (Pose, f64)> = HashMap::new();
    let mut actors = Vec::new();
    let mut streams = Vec::new();
    for a in &scenario.actors {
        let (length, width) = a.size();
        let pose = resolve_placement(&scenario.network, &a.start, length, &placed)?;
        placed.insert(a.id.clone(), (pose, length));
        actors.push(ActorState { id: a.id.clone(), kind: a.kind, pose, speed: a.initial_speed, length, width });
    }
    let mut behaviors = Vec::new();
    let index: HashMap<&str, usize> = scenario.actors.iter().enumerate().map(|(i, a)| (a.id.as_str(), i)).collect();
    let mut pending = Vec::new();
    for (i, a) in scenario.actors.iter().enumerate() {
        let pos = if a.kind == ActorKind::Pedestrian { None } else { Some(g.input(&format!("{}.pos", a.id))) };
        let speed = g.input(&format!("{}.speed", a.id));
        let collider = g.input(&format!("{}.collider", a.id));
        streams.push((pos, speed, collider, actors[i].length));
        match a.kind {
            ActorKind::AutonomousVehicle => {
                let spec = ControllerSpec::from_json(a.controller.as_ref().unwrap_or(&serde_json::Value::Null))?;
                behaviors.push(Some(Behavior::Ego(spec.build(cfg.dt, cfg.limits)?)));
            }
            ActorKind::ScriptedVehicle => {
                let (road, lane) = lane_of(&scenario.actors, &a.start)?;
                let v = ScriptedVehicle::new(&scenario.network, &road, lane, actors[i].pose.pos, a)?;
                actors[i].pose = v.pose();
                actors[i].speed = v.speed;
                behaviors.push(Some(Behavior::Scripted(v)));
            }
            ActorKind::Pedestrian => {
                behaviors.push(None);
                pending.push(i);
            }
        }
    }
    for i in pending {
        let a = &scenario.actors[i];
        let target = a.target.as_ref().ok_or_else(|| config(format!("pedestrian '{}' has no target", a.id)))?;
        let target = resolve_placement(&scenario.network, target, actors[i].length, &placed)?.pos;
        let speed = a.speed.ok_or_else(|| config(format!("pedestrian '{}' has no speed", a.id)))?;
        let walker = Pedestrian::new(actors[i].pose.pos, target, speed, a.trigger_distance, cfg.dt)?;
        let trigger_id = a.trigger_actor.as_deref().unwrap_or(&ego_id);
        let &t = index.get(trigger_id).ok_or_else(|| config(format!("unknown trigger actor '{trigger_id}'")))?;
        let car_pos = streams[t].0.ok_or_else(|| config(format!("trigger actor '{trigger_id}' must be a vehicle")))?;
        let ps = walker.behavior(g, car_pos, &a.id)?;
        streams[i].0 = Some(ps.position);
        actors[i].pose.heading = walker.heading();
        behaviors[i] = Some(Behavior::Walker(walker, ps));
    }
    let streams = streams
        .into_iter()
        .map(|(pos, speed, collider, length)| ActorStreams { pos: pos.unwrap(), speed, collider, length })
        .collect();
    let behaviors = behaviors.into_iter().map(Option::unwrap).collect();
    let state = SimState { tick: 0, dt: cfg.dt, world: scenario.world, actors };
    Ok(Rig { state, behaviors, streams, ego: index[ego_id.as_str()] })
}

/// Runs one iteration. Errors during setup or stepping mark the iteration
/// as errored instead of failing the caller.
pub fn run_iteration(scenario: &Scenario, cfg: &SimConfig) -> IterationReport {
    run_iteration_with(scenario, cfg, None)
}

/// Like [`run_iteration`], also recording the stream event log when asked.
pub fn run_iteration_with(scenario: &Scenario, cfg: &SimConfig, stream_log: Option<&mut Vec<u8>>) -> IterationReport {
    let mut events = Vec::new();
    let mut g = StreamGraph::new();
    g.record_events(stream_log.is_some());
    let mut ticks = 0;
    let result = simulate(scenario, cfg, &mut g, &mut events, &mut ticks);
    if let Some(out) = stream_log {
        let _ = g.write_event_log(out);
    }
    match result {
        Ok(r) => r,
        Err(e) => IterationReport::errored(scenario, ticks, e.to_string(), events),
    }
}

fn simulate(
    scenario: &Scenario,
    cfg: &SimConfig,
    g: &mut StreamGraph,
    events: &mut Vec<SimEvent>,
    ticks: &mut u64,
) -> Result<IterationReport> {
    cfg.validate()?;
    let mut rig = build(scenario, cfg, g)?;
    let by_id: HashMap<String, ActorStreams> =
        scenario.actors.iter().zip(&rig.streams).map(|(a, s)| (a.id.clone(), *s)).collect();
    let ego_id = &scenario.actors[rig.ego].id;
    let installed: Vec<Installed> =
        scenario.monitors.iter().map(|m| monitors::install(g, m, &by_id, ego_id)).collect::<Result<_>>()?;
    let terminators: Vec<StreamId> = installed.iter().filter_map(Installed::terminates).collect();
    let last = cfg.duration_ticks();
    let mut seen = HashSet::new();
    let mut path_length = 0.0;
    let mut walking = vec![false; rig.state.actors.len()];
    loop {
        let tick = rig.state.tick;
        *ticks = tick;
        let mut inputs = Vec::new();
        for (a, s) in rig.state.actors.iter().zip(&rig.streams) {
            inputs.push((s.pos, Value::Pos(a.pose.pos)));
            inputs.push((s.speed, Value::Real(a.speed)));
        }
        let mut hits: HashMap<usize, Value> = HashMap::new();
        for c in detect_collisions(&rig.state, &mut seen) {
            let names = [rig.state.actors[c.a].id.clone(), rig.state.actors[c.b].id.clone()];
            for (me, other) in [(c.a, &names[1]), (c.b, &names[0])] {
                hits.entry(me).or_insert_with(|| Value::pair(Value::Symbol(other.clone()), Value::Real(c.relative_speed)));
            }
            events.push(SimEvent {
                tick,
                kind: "collision".into(),
                actors: names.to_vec(),
                data: serde_json::json!({ "relative_speed": c.relative_speed }),
            });
        }
        for (i, v) in hits {
            inputs.push((rig.streams[i].collider, v));
        }
        let out = g.advance(tick, &inputs)?;
        if terminators.iter().any(|s| out.contains_key(s)) {
            events.push(SimEvent { tick, kind: "terminated".into(), actors: vec![], data: serde_json::Value::Null });
            break;
        }
        if tick >= last {
            break;
        }
        let mut controls = Vec::new();
        for (i, b) in rig.behaviors.iter_mut().enumerate() {
            match b {
                Behavior::Ego(c) => {
                    let frame = perceive(&rig.state, i);
                    let u = c.control(&frame).map_err(|e| sim_err(format!("controller failed at tick {tick}: {e}")))?;
                    controls.push((i, u));
                }
                Behavior::Scripted(_) => {}
                Behavior::Walker(_, ps) => {
                    let w = out.contains_key(&ps.walk);
                    if w != walking[i] {
                        walking[i] = w;
                        let kind = if w { "walk_start" } else { "walk_stop" };
                        events.push(SimEvent {
                            tick,
                            kind: kind.into(),
                            actors: vec![rig.state.actors[i].id.clone()],
                            data: serde_json::Value::Null,
                        });
                    }
                }
            }
        }
        let before = rig.state.actors[rig.ego].pose.pos;
        let mut next = step_physics(&rig.state, &controls, &cfg.limits, cfg.dt)?;
        for (i, b) in rig.behaviors.iter_mut().enumerate() {
            let a = &mut next.actors[i];
            match b {
                Behavior::Ego(_) => {}
                Behavior::Scripted(v) => {
                    a.pose = v.step(cfg.dt);
                    a.speed = v.speed;
                }
                Behavior::Walker(p, _) => {
                    if walking[i] {
                        a.pose.pos = p.step(a.pose.pos);
                        a.speed = p.speed;
                    } else {
                        a.speed = 0.0;
                    }
                }
            }
            if !a.pose.pos.is_finite() {
                return Err(sim_err(format!("actor '{}' left the finite plane at tick {}", a.id, next.tick)));
            }
        }
        path_length += next.actors[rig.ego].pose.pos.distance(before);
        rig.state = next;
    }
    g.finish()?;
    let verdicts: Vec<MonitorVerdict> = installed.iter().map(|m| m.verdict(g)).collect();
    let failed = installed.iter().zip(&verdicts).any(|(m, v)| m.spec.is_assertion() && v.outcome == Outcome::Fail);
    let mean_gap = installed
        .iter()
        .zip(&verdicts)
        .find(|(m, _)| matches!(m.spec.kind, monitors::MonitorKind::MeanGap { .. }))
        .and_then(|(_, v)| v.score);
    Ok(IterationReport {
        status: if failed { Status::Fail } else { Status::Pass },
        ticks: *ticks,
        verdicts,
        path_length,
        mean_gap,
        error: None,
        events: std::mem::take(events),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn car(speed: f64) -> ActorState {
        ActorState {
            id: "car".into(),
            kind: ActorKind::AutonomousVehicle,
            pose: Pose::IDENTITY,
            speed,
            length: 4.5,
            width: 1.8,
        }
    }

    #[test]
    fn coasting_moves_v_dt() {
        let mut a = car(10.0);
        step_vehicle(&mut a, Controls::default(), &VehicleLimits::default(), 0.05).unwrap();
        assert!((a.pose.pos.x - 0.5).abs() < 1e-12);
        assert_eq!(a.speed, 10.0);
        assert_eq!(a.pose.heading, 0.0);
    }

    #[test]
    fn full_brake_stopping_distance() {
        let (v0, dt) = (12.0, 0.05);
        let mut a = car(v0);
        let mut t = 0.0;
        while a.speed > 0.0 {
            step_vehicle(&mut a, Controls { throttle: -1.0, steering: 0.0 }, &VehicleLimits::default(), dt).unwrap();
            t += dt;
        }
        assert!((t - v0 / 8.0).abs() <= dt + 1e-9);
        assert!((a.pose.pos.x - v0 * v0 / 16.0).abs() <= v0 * dt);
    }

    #[test]
    fn nan_controls_abort() {
        let mut a = car(1.0);
        let r = step_vehicle(&mut a, Controls { throttle: f64::NAN, steering: 0.0 }, &VehicleLimits::default(), 0.05);
        assert!(matches!(r, Err(Error::Sim(_))));
    }

    #[test]
    fn collisions_reported_once_per_pair() {
        let mut ped = car(0.0);
        ped.id = "ped".into();
        ped.kind = ActorKind::Pedestrian;
        ped.length = 0.5;
        ped.width = 0.5;
        let state = SimState { tick: 7, dt: 0.05, world: World::default(), actors: vec![car(10.0), ped] };
        let mut seen = HashSet::new();
        let ev = detect_collisions(&state, &mut seen);
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].tick, 7);
        assert!((ev[0].relative_speed - 10.0).abs() < 1e-12);
        assert!(detect_collisions(&state, &mut seen).is_empty());
    }

    #[test]
    fn far_apart_no_collision() {
        let mut b = car(0.0);
        b.pose.pos = Vec2::new(4.9, 0.0);
        let state = SimState { tick: 0, dt: 0.05, world: World::default(), actors: vec![car(0.0), b] };
        assert!(detect_collisions(&state, &mut HashSet::new()).is_empty());
    }

    #[test]
    fn sensor_sees_only_corridor() {
        let mut lead = car(0.0);
        lead.id = "lead".into();
        lead.kind = ActorKind::ScriptedVehicle;
        lead.pose.pos = Vec2::new(24.5, 0.0);
        let mut side = lead.clone();
        side.pose.pos = Vec2::new(10.0, 3.5);
        let state = SimState { tick: 0, dt: 0.05, world: World::default(), actors: vec![car(5.0), lead, side] };
        let f = perceive(&state, 0);
        assert!((f.lead_distance.unwrap() - 20.0).abs() < 1e-12);
        assert!(f.pedestrian_distance.is_none());
    }

    #[test]
    fn proximity_brake_delay_and_fog() {
        let limits = VehicleLimits::default();
        let mut c = ProximityBrake::new(12.0, 40.0, 3, limits);
        let mut f = SensorFrame {
            tick: 0,
            dt: 0.05,
            speed: 12.0,
            lead_distance: None,
            pedestrian_distance: Some(30.0),
            visibility: 1.0,
        };
        let throttles: Vec<f64> = (0..5).map(|_| c.control(&f).unwrap().throttle).collect();
        assert_eq!(throttles, vec![0.0, 0.0, 0.0, -1.0, -1.0]);
        let mut blind = ProximityBrake::new(12.0, 40.0, 0, limits);
        f.visibility = 0.0;
        f.pedestrian_distance = Some(0.0);
        assert_eq!(blind.control(&f).unwrap().throttle, 0.0);
    }

    #[test]
    fn unknown_controller_names_registry() {
        let err = ControllerSpec::from_json(&serde_json::json!({"id": "cnn"})).unwrap_err();
        assert!(err.to_string().contains("proximity_brake"));
    }

    #[test]
    fn duration_ticks_exact() {
        let cfg = SimConfig { duration: 15.0, dt: 0.05, ..SimConfig::default() };
        assert_eq!(cfg.duration_ticks(), 300);
    }
}
