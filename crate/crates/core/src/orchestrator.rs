//! Scenario configs, campaigns, reports and bucketed summaries.

use crate::coverage::{k_epsilon_report, CoverageReport};
use crate::error::{config, Error, Result};
use crate::monitors::{MonitorKind, MonitorSpec, MonitorVerdict, Outcome};
use crate::opendrive;
use crate::param_space::{ParamSlot, ParameterSpace, TestVector};
use crate::sampler::{csv_err, local_search, sample_mixed, Evaluation, Objective, Origin, Sample, SampleSet, Strategy, StrategyKind};
use crate::scene::{connect, Port, PortRef, RoadElement, RoadKind, RoadNetwork, World};
use crate::sim::{run_iteration, IterationReport, Scenario, SimConfig, Status, VehicleLimits};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value as Json;
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

pub const SCHEMA_VERSION: &str = "1";
pub const PARAM_PREFIX: &str = "$param:";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoadDecl {
    pub id: String,
    pub kind: RoadKind,
    pub nlanes: u32,
    #[serde(default)]
    pub length: Option<f64>,
    #[serde(default)]
    pub lane_width: Option<f64>,
}

impl RoadDecl {
    pub fn build(&self) -> Result<RoadElement> {
        let e = match self.kind {
            RoadKind::Straight => {
                let len = self.length.ok_or_else(|| config(format!("road '{}' needs a length", self.id)))?;
                RoadElement::straight(&self.id, len, self.nlanes)?
            }
            RoadKind::TIntersection => RoadElement::t_intersection(&self.id, self.nlanes)?,
            RoadKind::CrossIntersection => RoadElement::cross_intersection(&self.id, self.nlanes)?,
        };
        match self.lane_width {
            Some(w) => e.with_lane_width(w),
            None => Ok(e),
        }
    }
}

/// `[parent, parent_port, child, child_port]`.
pub type ConnectionDecl = (String, Port, String, Port);

/// Builds a network from road declarations. The first road sits at the
/// origin; each connection attaches an unplaced child or closes a loop.
pub fn build_network(roads: &[RoadDecl], connections: &[ConnectionDecl]) -> Result<RoadNetwork> {
    let mut elements: BTreeMap<&str, RoadElement> = BTreeMap::new();
    for r in roads {
        if elements.insert(&r.id, r.build()?).is_some() {
            return Err(config(format!("road id '{}' used twice", r.id)));
        }
    }
    let first = roads.first().ok_or_else(|| config("scenario needs at least one road"))?;
    let mut net = RoadNetwork::single(elements.remove(first.id.as_str()).unwrap());
    for (parent, pp, child, cp) in connections {
        if net.element(parent).is_none() {
            return Err(config(format!("connection from '{parent}': road not yet placed or unknown")));
        }
        let (pref, cref) = (PortRef::new(parent, *pp), PortRef::new(child, *cp));
        if net.element(child).is_some() {
            net.link(pref, cref)?;
        } else {
            let e = elements.remove(child.as_str()).ok_or_else(|| config(format!("unknown road '{child}'")))?;
            net = connect(net, vec![(pref, e.into(), cref)])?;
        }
    }
    if let Some(id) = elements.keys().next() {
        return Err(config(format!("road '{id}' is not connected to the network")));
    }
    Ok(net)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Body {
    #[serde(default)]
    world: World,
    roads: Vec<RoadDecl>,
    #[serde(default)]
    connections: Vec<ConnectionDecl>,
    actors: Vec<crate::scene::ActorSpec>,
    #[serde(default)]
    monitors: Vec<MonitorSpec>,
}

fn default_duration() -> f64 {
    15.0
}

fn default_dt() -> f64 {
    crate::sim::DEFAULT_DT
}

fn default_k() -> usize {
    3
}

fn default_strategy() -> StrategyKind {
    StrategyKind::Halton
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestBlock {
    pub iterations: usize,
    #[serde(default = "default_duration")]
    pub duration: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_strategy")]
    pub strategy: StrategyKind,
    #[serde(default)]
    pub seed: u64,
    /// Monitor id whose score drives local search.
    #[serde(default)]
    pub objective: Option<String>,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub base_count: Option<usize>,
    #[serde(default)]
    pub top_m: Option<usize>,
    #[serde(default)]
    pub sa_iters: Option<usize>,
    #[serde(default)]
    pub limits: Option<VehicleLimits>,
}

/// A parameterized scenario file.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub name: String,
    pub params: ParameterSpace,
    pub test: TestBlock,
    body: Json,
    hash: String,
}

/// SHA-256 of the compact JSON rendering (object keys sorted).
pub fn config_hash(v: &Json) -> String {
    hex::encode(Sha256::digest(v.to_string().as_bytes()))
}

fn collect_refs(v: &Json, out: &mut Vec<String>) {
    match v {
        Json::String(s) => {
            if let Some(name) = s.strip_prefix(PARAM_PREFIX) {
                out.push(name.to_string());
            }
        }
        Json::Array(a) => a.iter().for_each(|x| collect_refs(x, out)),
        Json::Object(m) => m.values().for_each(|x| collect_refs(x, out)),
        _ => {}
    }
}

fn symbol_json(s: &str) -> Json {
    if let Ok(i) = s.parse::<i64>() {
        Json::from(i)
    } else if let Some(n) = s.parse::<f64>().ok().and_then(serde_json::Number::from_f64) {
        Json::Number(n)
    } else {
        Json::String(s.to_string())
    }
}

fn substitute(v: &Json, space: &ParameterSpace, vector: &TestVector) -> Result<Json> {
    Ok(match v {
        Json::String(s) => match s.strip_prefix(PARAM_PREFIX) {
            Some(name) => match space.slot(name) {
                Some(ParamSlot::Continuous(_)) => {
                    let x = vector.real(name).ok_or_else(|| config(format!("vector lacks '{name}'")))?;
                    serde_json::Number::from_f64(x).map(Json::Number).ok_or_else(|| config("non-finite value"))?
                }
                Some(ParamSlot::Discrete(_)) => {
                    symbol_json(vector.symbol(name).ok_or_else(|| config(format!("vector lacks '{name}'")))?)
                }
                None => return Err(config(format!("unknown parameter reference '{s}'"))),
            },
            None => v.clone(),
        },
        Json::Array(a) => Json::Array(a.iter().map(|x| substitute(x, space, vector)).collect::<Result<_>>()?),
        Json::Object(m) => Json::Object(
            m.iter()
                .map(|(k, x)| Ok((k.clone(), substitute(x, space, vector)?)))
                .collect::<Result<_>>()?,
        ),
        other => other.clone(),
    })
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: Json = serde_json::from_str(text).map_err(|e| config(format!("scenario JSON: {e}")))?;
        Self::from_value(raw)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config(format!("cannot read scenario {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn from_value(raw: Json) -> Result<Self> {
        let hash = config_hash(&raw);
        let Json::Object(mut m) = raw else {
            return Err(config("scenario must be a JSON object"));
        };
        let name = match m.remove("name") {
            Some(Json::String(s)) => s,
            None => String::new(),
            Some(_) => return Err(config("scenario name must be a string")),
        };
        m.remove("description");
        let params: ParameterSpace = serde_json::from_value(m.remove("params").ok_or_else(|| config("missing 'params'"))?)
            .map_err(|e| config(format!("params: {e}")))?;
        let test: TestBlock = serde_json::from_value(m.remove("test").ok_or_else(|| config("missing 'test'"))?)
            .map_err(|e| config(format!("test: {e}")))?;
        let body = Json::Object(m);
        let mut refs = Vec::new();
        collect_refs(&body, &mut refs);
        for r in refs {
            if space_lacks(&params, &r) {
                return Err(config(format!(
                    "unknown parameter reference '{PARAM_PREFIX}{r}'; declared: {}",
                    params.names().join(", ")
                )));
            }
        }
        let cfg = ScenarioConfig { name, params, test, body, hash };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    /// Rejects bad configs before any simulation: checks the test block and
    /// instantiates the scenario at the centre of the parameter space.
    pub fn validate(&self) -> Result<()> {
        self.sim_config().validate()?;
        let probe = self.params.denormalize(&vec![false; self.params.bit_width()], &vec![0.5; self.params.continuous().len()])?;
        let scenario = self.instantiate(&probe)?;
        scenario.validate()?;
        if self.test.k == 0 {
            return Err(config("k must be at least 1"));
        }
        if let Some(obj) = &self.test.objective {
            let m = scenario
                .monitors
                .iter()
                .find(|m| &m.id == obj)
                .ok_or_else(|| config(format!("objective '{obj}' is not a monitor id")))?;
            if !m.is_objective() {
                return Err(config(format!("monitor '{obj}' ({}) has no score to optimize", m.kind_name())));
            }
        }
        Ok(())
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig { duration: self.test.duration, dt: self.test.dt, limits: self.test.limits.unwrap_or_default() }
    }

    /// Resolves every parameter reference and builds the scenario.
    pub fn instantiate(&self, v: &TestVector) -> Result<Scenario> {
        self.params.validate(v)?;
        let body: Body = serde_json::from_value(substitute(&self.body, &self.params, v)?)
            .map_err(|e| config(format!("scenario: {e}")))?;
        Ok(Scenario {
            world: body.world,
            network: build_network(&body.roads, &body.connections)?,
            actors: body.actors,
            monitors: body.monitors,
        })
    }

    pub fn monitors(&self) -> Vec<MonitorSpec> {
        self.body
            .get("monitors")
            .and_then(|m| serde_json::from_value(m.clone()).ok())
            .unwrap_or_default()
    }

    /// Strategy for `iterations` runs of `kind`.
    pub fn strategy(&self, kind: StrategyKind, iterations: usize) -> Result<Strategy> {
        if !kind.is_search() {
            return Ok(Strategy::plain(kind, iterations));
        }
        let top_m = self.test.top_m.unwrap_or(5);
        let sa_iters = self.test.sa_iters.unwrap_or(3);
        let base = match self.test.base_count {
            Some(b) => b,
            None => iterations.checked_sub(top_m * sa_iters).ok_or_else(|| {
                config(format!("{iterations} iterations cannot hold {top_m} chains of {sa_iters} steps"))
            })?,
        };
        let s = Strategy::search(kind, Objective::Maximize, base, top_m, sa_iters);
        if s.budget != iterations {
            return Err(config(format!(
                "base_count {base} + top_m {top_m} x sa_iters {sa_iters} does not equal {iterations} iterations"
            )));
        }
        s.validate()?;
        Ok(s)
    }
}

fn space_lacks(space: &ParameterSpace, name: &str) -> bool {
    space.slot(name).is_none()
}

#[derive(Debug, Clone, Default)]
pub struct CampaignOptions {
    pub iterations: Option<usize>,
    pub seed: Option<u64>,
    pub strategy: Option<StrategyKind>,
    pub jobs: usize,
    /// Write one OpenDRIVE file per iteration into this directory.
    pub export_opendrive: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub index: usize,
    pub vector: TestVector,
    pub origin: Origin,
    pub status: Status,
    pub ticks: u64,
    pub verdicts: Vec<MonitorVerdict>,
    pub path_length: f64,
    pub mean_gap: Option<f64>,
    pub collision: bool,
    pub inactive: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorSummary {
    pub id: String,
    pub kind: String,
    pub failures: usize,
    pub max_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub schema_version: String,
    pub config_hash: String,
    pub strategy: StrategyKind,
    pub seed: u64,
    pub iterations: usize,
    pub no_data: bool,
    pub passed: usize,
    pub failed: usize,
    pub errored: usize,
    pub fail_pct: f64,
    pub collisions: usize,
    pub inactivity: usize,
    pub max_collision_speed: Option<f64>,
    pub monitors: Vec<MonitorSummary>,
    pub coverage: Option<CoverageReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub space: ParameterSpace,
    pub monitors: Vec<MonitorSpec>,
    pub summary: Summary,
    pub rows: Vec<ReportRow>,
}

fn fmt6(x: f64) -> String {
    format!("{x:.6}")
}

fn opt6(x: Option<f64>) -> String {
    x.map(fmt6).unwrap_or_default()
}

/// The vector as it reads back from the report CSV.
pub fn as_reported(space: &ParameterSpace, v: &TestVector) -> Result<TestVector> {
    let mut out = TestVector::default();
    for p in space.discrete() {
        let s = v.symbol(&p.name).ok_or_else(|| config(format!("vector lacks '{}'", p.name)))?;
        out = out.with_discrete(&p.name, s);
    }
    for p in space.continuous() {
        let x = v.real(&p.name).ok_or_else(|| config(format!("vector lacks '{}'", p.name)))?;
        out = out.with_continuous(&p.name, fmt6(x).parse().unwrap());
    }
    Ok(out)
}

/// Coverage of the reported parameter values.
pub fn coverage_of(space: &ParameterSpace, vectors: &[TestVector], k: usize) -> Result<Option<CoverageReport>> {
    if vectors.is_empty() {
        return Ok(None);
    }
    let mut set = SampleSet::new(space.clone());
    for (i, v) in vectors.iter().enumerate() {
        set.samples.push(Sample {
            index: i + 1,
            vector: as_reported(space, v)?,
            origin: Origin::Halton { halton_index: i as u64 + 1 },
            kind: StrategyKind::Halton,
            score: None,
            failed: false,
        });
    }
    Ok(Some(k_epsilon_report(&set, k)?))
}

fn row_from(index: usize, vector: TestVector, origin: Origin, r: &IterationReport, monitors: &[MonitorSpec]) -> ReportRow {
    let failed_kind = |pred: fn(&MonitorKind) -> bool| {
        monitors
            .iter()
            .zip(&r.verdicts)
            .any(|(m, v)| pred(&m.kind) && v.outcome == Outcome::Fail)
    };
    ReportRow {
        index,
        vector,
        origin,
        status: r.status,
        ticks: r.ticks,
        verdicts: r.verdicts.clone(),
        path_length: r.path_length,
        mean_gap: r.mean_gap,
        collision: failed_kind(|k| matches!(k, MonitorKind::Collision { .. } | MonitorKind::CollisionSpeed { .. })),
        inactive: failed_kind(|k| matches!(k, MonitorKind::Distance { .. })),
        error: r.error.clone(),
    }
}

fn objective_score(r: &IterationReport, objective: &str) -> Evaluation {
    if let Some(e) = &r.error {
        return Err(e.clone());
    }
    r.score(objective).ok_or_else(|| format!("monitor '{objective}' produced no score"))
}

/// Samples, simulates and summarizes a whole campaign.
pub fn run_campaign(cfg: &ScenarioConfig, opts: &CampaignOptions) -> Result<TestReport> {
    let iterations = opts.iterations.unwrap_or(cfg.test.iterations);
    let seed = opts.seed.unwrap_or(cfg.test.seed);
    let kind = opts.strategy.unwrap_or(cfg.test.strategy);
    let strategy = cfg.strategy(kind, iterations)?;
    let objective = match (kind.is_search(), &cfg.test.objective) {
        (true, None) => return Err(config(format!("strategy {kind} needs test.objective"))),
        (true, Some(o)) => Some(o.clone()),
        _ => None,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let sim = cfg.sim_config();
    let monitors = cfg.monitors();

    let evaluate = |v: &TestVector| -> IterationReport {
        match cfg.instantiate(v) {
            Ok(s) => run_iteration(&s, &sim),
            Err(e) => IterationReport {
                status: Status::Errored,
                ticks: 0,
                verdicts: monitors.iter().map(|m| MonitorVerdict::errored(m, &e.to_string())).collect(),
                path_length: 0.0,
                mean_gap: None,
                error: Some(e.to_string()),
                events: vec![],
            },
        }
    };

    let (set, reports) = pool.install(|| -> Result<(SampleSet, Vec<IterationReport>)> {
        let mut base = sample_mixed(&cfg.params, &strategy, seed)?;
        let mut reports: Vec<IterationReport> = base.samples.par_iter().map(|s| evaluate(&s.vector)).collect();
        let Some(objective) = objective.as_deref() else {
            return Ok((base, reports));
        };
        for (s, r) in base.samples.iter_mut().zip(&reports) {
            match objective_score(r, objective) {
                Ok(x) => s.score = Some(x),
                Err(_) => s.failed = true,
            }
        }
        let cache: Mutex<HashMap<String, IterationReport>> = Mutex::new(HashMap::new());
        let key = |v: &TestVector| serde_json::to_string(v).unwrap_or_default();
        let searched = local_search(
            &base,
            |v| {
                let r = evaluate(v);
                let score = objective_score(&r, objective);
                cache.lock().unwrap().insert(key(v), r);
                score
            },
            &strategy,
            seed,
        )?;
        let cache = cache.into_inner().unwrap();
        for s in &searched.samples[base.len()..] {
            let r = cache.get(&key(&s.vector)).cloned().ok_or_else(|| config("lost a search evaluation"))?;
            reports.push(r);
        }
        Ok((searched, reports))
    })?;

    let rows: Vec<ReportRow> = set
        .samples
        .iter()
        .zip(&reports)
        .map(|(s, r)| row_from(s.index, s.vector.clone(), s.origin, r, &monitors))
        .collect();

    if let Some(dir) = &opts.export_opendrive {
        std::fs::create_dir_all(dir)?;
        for row in &rows {
            let scenario = cfg.instantiate(&row.vector)?;
            let path = dir.join(format!("iteration_{:04}.xodr", row.index));
            opendrive::export_network(&scenario.network, &path)?;
        }
    }

    let summary = summarize(cfg, kind, seed, &monitors, &rows)?;
    Ok(TestReport { space: cfg.params.clone(), monitors, summary, rows })
}

fn summarize(cfg: &ScenarioConfig, kind: StrategyKind, seed: u64, monitors: &[MonitorSpec], rows: &[ReportRow]) -> Result<Summary> {
    let count = |s: Status| rows.iter().filter(|r| r.status == s).count();
    let (passed, failed, errored) = (count(Status::Pass), count(Status::Fail), count(Status::Errored));
    let monitor_summaries = monitors
        .iter()
        .enumerate()
        .map(|(i, m)| MonitorSummary {
            id: m.id.clone(),
            kind: m.kind_name().to_string(),
            failures: rows.iter().filter(|r| r.verdicts.get(i).is_some_and(|v| v.outcome == Outcome::Fail)).count(),
            max_score: rows
                .iter()
                .filter_map(|r| r.verdicts.get(i).and_then(|v| v.score))
                .fold(None, |acc: Option<f64>, x| Some(acc.map_or(x, |a| a.max(x)))),
        })
        .collect::<Vec<_>>();
    let max_collision_speed = monitors
        .iter()
        .zip(&monitor_summaries)
        .filter(|(m, _)| matches!(m.kind, MonitorKind::CollisionSpeed { .. }))
        .filter_map(|(_, s)| s.max_score)
        .reduce(f64::max);
    let vectors: Vec<TestVector> = rows.iter().map(|r| r.vector.clone()).collect();
    Ok(Summary {
        name: cfg.name.clone(),
        schema_version: SCHEMA_VERSION.to_string(),
        config_hash: cfg.hash.clone(),
        strategy: kind,
        seed,
        iterations: rows.len(),
        no_data: rows.is_empty(),
        passed,
        failed,
        errored,
        fail_pct: if rows.is_empty() { 0.0 } else { 100.0 * failed as f64 / rows.len() as f64 },
        collisions: rows.iter().filter(|r| r.collision).count(),
        inactivity: rows.iter().filter(|r| r.inactive).count(),
        max_collision_speed,
        monitors: monitor_summaries,
        coverage: coverage_of(&cfg.params, &vectors, cfg.test.k)?,
    })
}

impl TestReport {
    pub fn csv_header(&self) -> Vec<String> {
        let mut h = vec!["index".to_string()];
        h.extend(self.space.names().iter().map(|s| s.to_string()));
        h.extend(["status", "ticks"].map(String::from));
        for m in &self.monitors {
            h.push(format!("{}.verdict", m.id));
            h.push(format!("{}.score", m.id));
        }
        h.extend(["path_length", "mean_gap", "collision", "inactive"].map(String::from));
        h
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(self.csv_header()).map_err(csv_err)?;
        for r in &self.rows {
            let mut rec = vec![r.index.to_string()];
            for &slot in self.space.order() {
                rec.push(self.space.format_value(&r.vector, slot));
            }
            rec.push(r.status.as_str().to_string());
            rec.push(r.ticks.to_string());
            for v in &r.verdicts {
                rec.push(v.outcome.as_str().to_string());
                rec.push(opt6(v.score));
            }
            rec.push(fmt6(r.path_length));
            rec.push(opt6(r.mean_gap));
            rec.push(u8::from(r.collision).to_string());
            rec.push(u8::from(r.inactive).to_string());
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv is utf-8"))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn table(&self) -> ReportTable {
        let names: Vec<String> = self.space.names().iter().map(|s| s.to_string()).collect();
        let rows = self
            .rows
            .iter()
            .map(|r| TableRow {
                values: self
                    .space
                    .order()
                    .iter()
                    .zip(&names)
                    .map(|(&slot, n)| (n.clone(), self.space.format_value(&r.vector, slot)))
                    .collect(),
                status: r.status.as_str().to_string(),
                collision: r.collision,
                inactive: r.inactive,
                mean_gap: r.mean_gap,
            })
            .collect();
        ReportTable { params: names, rows }
    }
}

/// The columns of a report needed for bucketing.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportTable {
    pub params: Vec<String>,
    pub rows: Vec<TableRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub values: BTreeMap<String, String>,
    pub status: String,
    pub collision: bool,
    pub inactive: bool,
    pub mean_gap: Option<f64>,
}

impl ReportTable {
    /// Reads a `report.csv`.
    pub fn from_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(String::from).collect();
        let col = |name: &str| {
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| config(format!("report has no '{name}' column")))
        };
        let (status, collision, inactive, gap) = (col("status")?, col("collision")?, col("inactive")?, col("mean_gap")?);
        let params: Vec<String> = header[1..status].to_vec();
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(csv_err)?;
            rows.push(TableRow {
                values: params.iter().enumerate().map(|(i, p)| (p.clone(), rec[i + 1].to_string())).collect(),
                status: rec[status].to_string(),
                collision: &rec[collision] == "1",
                inactive: &rec[inactive] == "1",
                mean_gap: rec[gap].parse().ok(),
            });
        }
        Ok(ReportTable { params, rows })
    }
}

/// One bucketing rule: split a parameter at thresholds, or by value.
#[derive(Debug, Clone, PartialEq)]
pub enum BucketRule {
    All,
    Thresholds { param: String, cuts: Vec<f64> },
    Values { param: String },
}

/// Parses `fog:0.5;nlanes;offset:16,24`. `*` is a single bucket with every row.
pub fn parse_bucket_spec(spec: &str) -> Result<Vec<BucketRule>> {
    let mut rules = Vec::new();
    for part in spec.split(';').map(str::trim).filter(|p| !p.is_empty()) {
        if part == "*" {
            rules.push(BucketRule::All);
            continue;
        }
        match part.split_once(':') {
            None => rules.push(BucketRule::Values { param: part.to_string() }),
            Some((p, cuts)) => {
                let mut cuts: Vec<f64> = cuts
                    .split(',')
                    .map(|c| c.trim().parse::<f64>().map_err(|_| config(format!("bad threshold '{c}' for '{p}'"))))
                    .collect::<Result<_>>()?;
                cuts.sort_by(f64::total_cmp);
                cuts.dedup();
                rules.push(BucketRule::Thresholds { param: p.trim().to_string(), cuts });
            }
        }
    }
    if rules.is_empty() {
        return Err(config("empty bucket spec"));
    }
    Ok(rules)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Bucket {
    pub param: String,
    pub label: String,
    pub iterations: usize,
    pub failures: usize,
    pub collisions: usize,
    pub inactivity: usize,
    /// Mean gap over passing iterations that report one.
    pub mean_gap: Option<f64>,
}

fn fill(param: &str, label: String, rows: &[&TableRow]) -> Bucket {
    let gaps: Vec<f64> = rows.iter().filter(|r| r.status == "pass").filter_map(|r| r.mean_gap).collect();
    Bucket {
        param: param.to_string(),
        label,
        iterations: rows.len(),
        failures: rows.iter().filter(|r| r.status == "fail").count(),
        collisions: rows.iter().filter(|r| r.collision).count(),
        inactivity: rows.iter().filter(|r| r.inactive).count(),
        mean_gap: (!gaps.is_empty()).then(|| gaps.iter().sum::<f64>() / gaps.len() as f64),
    }
}

fn natural_order(a: &str, b: &str) -> std::cmp::Ordering {
    match (a.parse::<f64>(), b.parse::<f64>()) {
        (Ok(x), Ok(y)) => x.total_cmp(&y),
        _ => a.cmp(b),
    }
}

/// Groups rows per rule into buckets with counts and mean gaps.
pub fn summarize_by_bucket(table: &ReportTable, rules: &[BucketRule]) -> Result<Vec<Bucket>> {
    let mut out = Vec::new();
    for rule in rules {
        match rule {
            BucketRule::All => out.push(fill("*", "all".into(), &table.rows.iter().collect::<Vec<_>>())),
            BucketRule::Values { param } | BucketRule::Thresholds { param, .. } if !table.params.contains(param) => {
                return Err(config(format!("unknown parameter '{param}'; report has: {}", table.params.join(", "))));
            }
            BucketRule::Values { param } => {
                let mut labels: Vec<&str> = table.rows.iter().map(|r| r.values[param].as_str()).collect();
                labels.sort_by(|a, b| natural_order(a, b));
                labels.dedup();
                for l in labels {
                    let rows: Vec<&TableRow> = table.rows.iter().filter(|r| r.values[param] == l).collect();
                    out.push(fill(param, l.to_string(), &rows));
                }
            }
            BucketRule::Thresholds { param, cuts } => {
                let mut edges = vec![f64::NEG_INFINITY];
                edges.extend(cuts);
                edges.push(f64::INFINITY);
                for w in edges.windows(2) {
                    let (lo, hi) = (w[0], w[1]);
                    let mut rows = Vec::new();
                    for r in &table.rows {
                        let x: f64 = r.values[param]
                            .parse()
                            .map_err(|_| config(format!("parameter '{param}' is not numeric")))?;
                        if x >= lo && x < hi {
                            rows.push(r);
                        }
                    }
                    let label = match (lo.is_finite(), hi.is_finite()) {
                        (false, true) => format!("< {hi}"),
                        (true, false) => format!(">= {lo}"),
                        (true, true) => format!("[{lo}, {hi})"),
                        _ => "all".to_string(),
                    };
                    out.push(fill(param, label, &rows));
                }
            }
        }
    }
    Ok(out)
}

/// Renders buckets as CSV; undefined means print as `NA`.
pub fn write_buckets<W: Write>(buckets: &[Bucket], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(["param", "bucket", "iterations", "failures", "collisions", "inactivity", "mean_gap"])
        .map_err(csv_err)?;
    for b in buckets {
        w.write_record([
            b.param.clone(),
            b.label.clone(),
            b.iterations.to_string(),
            b.failures.to_string(),
            b.collisions.to_string(),
            b.inactivity.to_string(),
            b.mean_gap.map_or_else(|| "NA".to_string(), fmt6),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ScenarioConfig {
        ScenarioConfig::from_json(
            r#"{
              "name": "tiny",
              "params": [{"kind": "interval", "name": "v", "low": 0, "high": 10},
                         {"kind": "enum", "name": "n", "values": [2, 4]}],
              "roads": [{"id": "r", "kind": "straight", "nlanes": "$param:n", "length": 200}],
              "actors": [{"id": "ego", "kind": "autonomous_vehicle",
                          "start": {"road": "r", "lane": 1, "fraction": 0.1},
                          "controller": {"id": "constant", "throttle": 0}, "initial_speed": "$param:v"}],
              "monitors": [{"id": "d", "kind": "distance", "min_distance": 5}],
              "test": {"iterations": 4, "duration": 2, "seed": 3}
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn unknown_reference_rejected() {
        let err = ScenarioConfig::from_json(
            r#"{"params": [{"kind": "interval", "name": "v", "low": 0, "high": 1}],
                "roads": [{"id": "r", "kind": "straight", "nlanes": 2, "length": "$param:len"}],
                "actors": [], "test": {"iterations": 1}}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("$param:len"));
    }

    #[test]
    fn substitution_types() {
        let cfg = tiny();
        let v = TestVector::default().with_continuous("v", 2.5).with_discrete("n", "4");
        let s = cfg.instantiate(&v).unwrap();
        assert_eq!(s.network.elements()[0].element.nlanes, 4);
        assert_eq!(s.actors[0].initial_speed, 2.5);
    }

    #[test]
    fn campaign_rows_and_inactivity() {
        let cfg = tiny();
        let r = run_campaign(&cfg, &CampaignOptions::default()).unwrap();
        assert_eq!(r.rows.len(), 4);
        // travel = v * 2 s; inactive when v < 2.5
        for row in &r.rows {
            let v = row.vector.real("v").unwrap();
            assert_eq!(row.inactive, v * 2.0 < 5.0, "v = {v}");
        }
        assert_eq!(r.summary.inactivity, r.rows.iter().filter(|x| x.inactive).count());
    }

    #[test]
    fn zero_iterations_is_no_data() {
        let cfg = tiny();
        let r = run_campaign(&cfg, &CampaignOptions { iterations: Some(0), ..Default::default() }).unwrap();
        assert!(r.summary.no_data && r.rows.is_empty() && r.summary.coverage.is_none());
    }

    #[test]
    fn bucket_spec_parsing() {
        let rules = parse_bucket_spec("fog:0.5; nlanes ;*").unwrap();
        assert_eq!(rules.len(), 3);
        assert_eq!(rules[0], BucketRule::Thresholds { param: "fog".into(), cuts: vec![0.5] });
        assert!(parse_bucket_spec("fog:x").is_err());
    }

    #[test]
    fn empty_bucket_is_na() {
        let cfg = tiny();
        let r = run_campaign(&cfg, &CampaignOptions::default()).unwrap();
        let b = summarize_by_bucket(&r.table(), &parse_bucket_spec("v:100").unwrap()).unwrap();
        assert_eq!(b[1].iterations, 0);
        assert!(b[1].mean_gap.is_none());
        assert!(summarize_by_bucket(&r.table(), &parse_bucket_spec("ghost").unwrap()).is_err());
    }
}
