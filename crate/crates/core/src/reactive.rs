//! Tick-synchronous stream engine.
//!
//! A [`StreamGraph`] owns every stream of one test iteration. Streams are
//! either external inputs, the global tick source, or derived from other
//! streams through combinators. Each call to [`StreamGraph::advance`] runs a
//! single propagation pass in topological order, so every event caused by a
//! tick is visible before the call returns.

use crate::error::{Error, Result};
use crate::geom::Vec2;
use serde::Serialize;
use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};
use std::io::Write;
use std::sync::atomic::{AtomicU64, Ordering};

static NEXT_GRAPH: AtomicU64 = AtomicU64::new(1);

fn stream_err(msg: impl Into<String>) -> Error {
    Error::Stream(msg.into())
}

/// Payload carried by one event.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Value {
    Unit,
    Bool(bool),
    Int(i64),
    Real(f64),
    Symbol(String),
    Pos(Vec2),
    Pair(Box<Value>, Box<Value>),
}

impl Value {
    pub fn pair(a: Value, b: Value) -> Value {
        Value::Pair(Box::new(a), Box::new(b))
    }

    /// Numeric view of `Real` and `Int` events.
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Real(x) => Some(*x),
            Value::Int(i) => Some(*i as f64),
            _ => None,
        }
    }

    pub fn as_pos(&self) -> Option<Vec2> {
        match self {
            Value::Pos(p) => Some(*p),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Bool(b) => Some(*b),
            _ => None,
        }
    }

    pub fn as_pair(&self) -> Option<(&Value, &Value)> {
        match self {
            Value::Pair(a, b) => Some((a, b)),
            _ => None,
        }
    }
}

/// Handle to a stream inside one graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StreamId {
    graph: u64,
    index: usize,
}

impl StreamId {
    pub fn index(self) -> usize {
        self.index
    }
}

/// One line of the event log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoggedEvent {
    pub tick: u64,
    pub stream: String,
    pub value: Value,
}

type MapFn = Box<dyn FnMut(&Value) -> Value + Send>;
type PredFn = Box<dyn FnMut(&Value) -> bool + Send>;
type BinFn = Box<dyn FnMut(&Value, &Value) -> Value + Send>;
type ActionFn = Box<dyn FnMut(u64, &Value) + Send>;

enum Fallback {
    Const(Value),
    Latest(usize),
}

enum Op {
    Input { bound: bool },
    Tick,
    Map(MapFn),
    Filter(PredFn),
    Zip { left: VecDeque<Value>, right: VecDeque<Value>, f: BinFn },
    CombineLatest { left: Option<Value>, right: Option<Value>, f: BinFn },
    Take { n: usize, seen: usize },
    Skip { n: usize, seen: usize },
    SkipUntil { open: bool },
    TakeUntil { closed: bool },
    Concat { buffer: VecDeque<Value> },
    First { done: bool },
    Sum { acc: Option<Value> },
    Min { acc: Option<Value> },
    DefaultIfEmpty { fallback: Fallback, fired: bool },
    ForEach(ActionFn),
}

struct Node {
    name: String,
    op: Op,
    parents: Vec<usize>,
    event: Option<Value>,
    latest: Option<Value>,
    count: u64,
    complete: bool,
}

/// A directed acyclic graph of streams advanced one tick at a time.
pub struct StreamGraph {
    id: u64,
    nodes: Vec<Node>,
    order: Vec<usize>,
    last_tick: Option<u64>,
    finished: bool,
    recording: bool,
    log: Vec<LoggedEvent>,
}

impl Default for StreamGraph {
    fn default() -> Self {
        Self::new()
    }
}

impl std::fmt::Debug for StreamGraph {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StreamGraph")
            .field("id", &self.id)
            .field("streams", &self.nodes.len())
            .field("last_tick", &self.last_tick)
            .finish()
    }
}

impl StreamGraph {
    /// Creates a graph holding only the tick source.
    pub fn new() -> Self {
        let mut g = StreamGraph {
            id: NEXT_GRAPH.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            order: Vec::new(),
            last_tick: None,
            finished: false,
            recording: false,
            log: Vec::new(),
        };
        g.push("tick", Op::Tick, vec![]);
        g
    }

    /// The global tick stream; emits `Int(tick)` on every advance.
    pub fn tick(&self) -> StreamId {
        StreamId { graph: self.id, index: 0 }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn record_events(&mut self, on: bool) {
        self.recording = on;
    }

    pub fn event_log(&self) -> &[LoggedEvent] {
        &self.log
    }

    /// Writes the event log as JSON lines.
    pub fn write_event_log<W: Write>(&self, mut out: W) -> Result<()> {
        for e in &self.log {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    fn push(&mut self, name: &str, op: Op, parents: Vec<usize>) -> StreamId {
        let index = self.nodes.len();
        let name = if name.is_empty() { format!("s{index}") } else { name.to_string() };
        self.nodes.push(Node {
            name,
            op,
            parents,
            event: None,
            latest: None,
            count: 0,
            complete: false,
        });
        self.order.push(index);
        StreamId { graph: self.id, index }
    }

    fn check(&self, s: StreamId) -> Result<usize> {
        if s.graph != self.id {
            return Err(stream_err(format!(
                "stream {} belongs to graph {}, not graph {}",
                s.index, s.graph, self.id
            )));
        }
        if s.index >= self.nodes.len() {
            return Err(stream_err(format!("unknown stream {}", s.index)));
        }
        Ok(s.index)
    }

    fn derive(&mut self, op: Op, parents: &[StreamId]) -> Result<StreamId> {
        if self.last_tick.is_some() || self.finished {
            return Err(stream_err("graph cannot be rewired once advanced"));
        }
        let parents = parents.iter().map(|&p| self.check(p)).collect::<Result<Vec<_>>>()?;
        Ok(self.push("", op, parents))
    }

    /// Declares an external input stream fed through `advance`.
    pub fn input(&mut self, name: &str) -> StreamId {
        self.push(name, Op::Input { bound: false }, vec![])
    }

    pub fn set_name(&mut self, s: StreamId, name: &str) -> Result<()> {
        let i = self.check(s)?;
        self.nodes[i].name = name.to_string();
        Ok(())
    }

    pub fn name(&self, s: StreamId) -> Result<&str> {
        Ok(&self.nodes[self.check(s)?].name)
    }

    /// Event fired on the most recent tick, if any.
    pub fn event(&self, s: StreamId) -> Option<&Value> {
        self.check(s).ok().and_then(|i| self.nodes[i].event.as_ref())
    }

    /// Most recent event ever fired.
    pub fn latest(&self, s: StreamId) -> Option<&Value> {
        self.check(s).ok().and_then(|i| self.nodes[i].latest.as_ref())
    }

    pub fn count(&self, s: StreamId) -> u64 {
        self.check(s).map(|i| self.nodes[i].count).unwrap_or(0)
    }

    pub fn is_complete(&self, s: StreamId) -> bool {
        self.check(s).map(|i| self.nodes[i].complete).unwrap_or(false)
    }

    pub fn map<F>(&mut self, s: StreamId, f: F) -> Result<StreamId>
    where
        F: FnMut(&Value) -> Value + Send + 'static,
    {
        self.derive(Op::Map(Box::new(f)), &[s])
    }

    pub fn filter<F>(&mut self, s: StreamId, p: F) -> Result<StreamId>
    where
        F: FnMut(&Value) -> bool + Send + 'static,
    {
        self.derive(Op::Filter(Box::new(p)), &[s])
    }

    /// Pairs the i-th events of both parents.
    pub fn zip(&mut self, a: StreamId, b: StreamId) -> Result<StreamId> {
        self.zip_with(a, b, |x, y| Value::pair(x.clone(), y.clone()))
    }

    pub fn zip_with<F>(&mut self, a: StreamId, b: StreamId, f: F) -> Result<StreamId>
    where
        F: FnMut(&Value, &Value) -> Value + Send + 'static,
    {
        let op = Op::Zip { left: VecDeque::new(), right: VecDeque::new(), f: Box::new(f) };
        self.derive(op, &[a, b])
    }

    /// Fires when either parent fires, once both have fired at least once.
    pub fn combine_latest<F>(&mut self, a: StreamId, b: StreamId, f: F) -> Result<StreamId>
    where
        F: FnMut(&Value, &Value) -> Value + Send + 'static,
    {
        let op = Op::CombineLatest { left: None, right: None, f: Box::new(f) };
        self.derive(op, &[a, b])
    }

    pub fn take(&mut self, s: StreamId, n: usize) -> Result<StreamId> {
        self.derive(Op::Take { n, seen: 0 }, &[s])
    }

    pub fn skip(&mut self, s: StreamId, n: usize) -> Result<StreamId> {
        self.derive(Op::Skip { n, seen: 0 }, &[s])
    }

    /// Passes events of `s` from the tick after `trigger` first fires.
    pub fn skip_until(&mut self, s: StreamId, trigger: StreamId) -> Result<StreamId> {
        self.derive(Op::SkipUntil { open: false }, &[s, trigger])
    }

    /// Passes events of `s` strictly before the tick `stop` first fires.
    pub fn take_until(&mut self, s: StreamId, stop: StreamId) -> Result<StreamId> {
        self.derive(Op::TakeUntil { closed: false }, &[s, stop])
    }

    /// Events of `a` until it completes, then the buffered events of `b`
    /// one per tick. `b` is buffered from the start.
    pub fn concat(&mut self, a: StreamId, b: StreamId) -> Result<StreamId> {
        self.derive(Op::Concat { buffer: VecDeque::new() }, &[a, b])
    }

    pub fn first(&mut self, s: StreamId) -> Result<StreamId> {
        self.derive(Op::First { done: false }, &[s])
    }

    /// Running sum; integer while every input is an integer.
    pub fn sum(&mut self, s: StreamId) -> Result<StreamId> {
        self.derive(Op::Sum { acc: None }, &[s])
    }

    /// Running minimum.
    pub fn min(&mut self, s: StreamId) -> Result<StreamId> {
        self.derive(Op::Min { acc: None }, &[s])
    }

    pub fn default_if_empty(&mut self, s: StreamId, v: Value) -> Result<StreamId> {
        let op = Op::DefaultIfEmpty { fallback: Fallback::Const(v), fired: false };
        self.derive(op, &[s])
    }

    /// Like `default_if_empty`, resolving to the latest event of `other`.
    pub fn default_if_empty_latest(&mut self, s: StreamId, other: StreamId) -> Result<StreamId> {
        let o = self.check(other)?;
        let op = Op::DefaultIfEmpty { fallback: Fallback::Latest(o), fired: false };
        self.derive(op, &[s])
    }

    /// Runs `action(tick, value)` for each event and passes it through.
    pub fn for_each<F>(&mut self, s: StreamId, action: F) -> Result<StreamId>
    where
        F: FnMut(u64, &Value) + Send + 'static,
    {
        self.derive(Op::ForEach(Box::new(action)), &[s])
    }

    /// Feeds an unbound input stream from `source` instead of `advance`.
    pub fn bind(&mut self, input: StreamId, source: StreamId) -> Result<()> {
        if self.last_tick.is_some() || self.finished {
            return Err(stream_err("graph cannot be rewired once advanced"));
        }
        let (i, s) = (self.check(input)?, self.check(source)?);
        match self.nodes[i].op {
            Op::Input { bound: false } => {}
            Op::Input { bound: true } => {
                return Err(stream_err(format!("input '{}' is already bound", self.nodes[i].name)))
            }
            _ => return Err(stream_err(format!("'{}' is not an input stream", self.nodes[i].name))),
        }
        if self.depends_on(s, i) {
            return Err(stream_err(format!(
                "binding '{}' to '{}' would create a cycle",
                self.nodes[i].name, self.nodes[s].name
            )));
        }
        self.nodes[i].op = Op::Input { bound: true };
        self.nodes[i].parents = vec![s];
        self.order = self.topological_order();
        Ok(())
    }

    fn depends_on(&self, from: usize, target: usize) -> bool {
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![from];
        while let Some(n) = stack.pop() {
            if n == target {
                return true;
            }
            if !std::mem::replace(&mut seen[n], true) {
                stack.extend(&self.nodes[n].parents);
                if let Op::DefaultIfEmpty { fallback: Fallback::Latest(o), .. } = self.nodes[n].op {
                    stack.push(o);
                }
            }
        }
        false
    }

    // Kahn's algorithm, smallest creation index first among ready nodes.
    fn topological_order(&self) -> Vec<usize> {
        let n = self.nodes.len();
        let mut indegree = vec![0usize; n];
        let mut children = vec![Vec::new(); n];
        for (i, node) in self.nodes.iter().enumerate() {
            for &p in &node.parents {
                indegree[i] += 1;
                children[p].push(i);
            }
        }
        let mut ready: BinaryHeap<Reverse<usize>> =
            (0..n).filter(|&i| indegree[i] == 0).map(Reverse).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(Reverse(i)) = ready.pop() {
            order.push(i);
            for &c in &children[i] {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    ready.push(Reverse(c));
                }
            }
        }
        order
    }

    /// Runs one propagation pass for `tick` and returns every event fired,
    /// except the tick source's own.
    pub fn advance(&mut self, tick: u64, inputs: &[(StreamId, Value)]) -> Result<BTreeMap<StreamId, Value>> {
        if self.finished {
            return Err(stream_err("graph already finished"));
        }
        if let Some(last) = self.last_tick {
            if tick <= last {
                return Err(stream_err(format!("tick {tick} already advanced (last was {last})")));
            }
        }
        let mut external: BTreeMap<usize, Value> = BTreeMap::new();
        for (s, v) in inputs {
            let i = self.check(*s)?;
            if !matches!(self.nodes[i].op, Op::Input { bound: false }) {
                return Err(stream_err(format!("'{}' is not an external input", self.nodes[i].name)));
            }
            if external.insert(i, v.clone()).is_some() {
                return Err(stream_err(format!("two events for '{}' on tick {tick}", self.nodes[i].name)));
            }
        }
        self.last_tick = Some(tick);
        self.pass(tick, &mut external, false)
    }

    /// Completes every stream at the end of a test. Returns events produced by
    /// completion, such as `default_if_empty` fallbacks.
    pub fn finish(&mut self) -> Result<BTreeMap<StreamId, Value>> {
        if self.finished {
            return Err(stream_err("graph already finished"));
        }
        let tick = self.last_tick.map_or(0, |t| t + 1);
        let out = self.pass(tick, &mut BTreeMap::new(), true)?;
        self.finished = true;
        Ok(out)
    }

    fn pass(
        &mut self,
        tick: u64,
        external: &mut BTreeMap<usize, Value>,
        finishing: bool,
    ) -> Result<BTreeMap<StreamId, Value>> {
        let mut out = BTreeMap::new();
        for k in 0..self.order.len() {
            let i = self.order[k];
            let event = self.eval(i, tick, external, finishing)?;
            let node = &mut self.nodes[i];
            node.event = event.clone();
            if let Some(v) = event {
                node.latest = Some(v.clone());
                node.count += 1;
                if i != 0 {
                    if self.recording {
                        self.log.push(LoggedEvent { tick, stream: node.name.clone(), value: v.clone() });
                    }
                    out.insert(StreamId { graph: self.id, index: i }, v);
                }
            }
        }
        Ok(out)
    }

    fn eval(
        &mut self,
        i: usize,
        tick: u64,
        external: &mut BTreeMap<usize, Value>,
        finishing: bool,
    ) -> Result<Option<Value>> {
        if self.nodes[i].complete {
            return Ok(None);
        }
        let pev: Vec<Option<Value>> = self.nodes[i].parents.iter().map(|&p| self.nodes[p].event.clone()).collect();
        let pdone: Vec<bool> = self.nodes[i].parents.iter().map(|&p| self.nodes[p].complete).collect();
        let parents_done = pdone.iter().all(|&d| d);
        let fallback_latest = match self.nodes[i].op {
            Op::DefaultIfEmpty { fallback: Fallback::Latest(o), .. } => self.nodes[o].latest.clone(),
            _ => None,
        };
        let name = self.nodes[i].name.clone();
        let node = &mut self.nodes[i];
        let first = pev.first().cloned().flatten();
        let mut complete = parents_done;
        let event = match &mut node.op {
            Op::Tick => {
                complete = finishing;
                (!finishing).then_some(Value::Int(tick as i64))
            }
            Op::Input { bound } => {
                complete = finishing || (*bound && parents_done);
                if *bound { first } else { external.remove(&i) }
            }
            Op::Map(f) => first.map(|v| f(&v)),
            Op::Filter(p) => first.filter(|v| p(v)),
            Op::Zip { left, right, f } => {
                left.extend(pev[0].clone());
                right.extend(pev[1].clone());
                let ev = if !left.is_empty() && !right.is_empty() {
                    let (a, b) = (left.pop_front().unwrap(), right.pop_front().unwrap());
                    Some(f(&a, &b))
                } else {
                    None
                };
                complete = (pdone[0] && left.is_empty()) || (pdone[1] && right.is_empty());
                ev
            }
            Op::CombineLatest { left, right, f } => {
                if let Some(v) = &pev[0] {
                    *left = Some(v.clone());
                }
                if let Some(v) = &pev[1] {
                    *right = Some(v.clone());
                }
                let fired = pev[0].is_some() || pev[1].is_some();
                match (fired, left.as_ref(), right.as_ref()) {
                    (true, Some(a), Some(b)) => Some(f(a, b)),
                    _ => None,
                }
            }
            Op::Take { n, seen } => {
                let ev = if *seen < *n { first } else { None };
                if ev.is_some() {
                    *seen += 1;
                }
                complete = parents_done || *seen >= *n;
                ev
            }
            Op::Skip { n, seen } => first.and_then(|v| {
                *seen += 1;
                (*seen > *n).then_some(v)
            }),
            Op::SkipUntil { open } => {
                let ev = if *open { first } else { None };
                if pev[1].is_some() {
                    *open = true;
                }
                complete = pdone[0];
                ev
            }
            Op::TakeUntil { closed } => {
                if pev[1].is_some() {
                    *closed = true;
                }
                complete = pdone[0] || *closed;
                if *closed { None } else { first }
            }
            Op::Concat { buffer } => {
                buffer.extend(pev[1].clone());
                let ev = if pev[0].is_some() {
                    pev[0].clone()
                } else if pdone[0] && !finishing {
                    buffer.pop_front()
                } else {
                    None
                };
                complete = finishing || (pdone[0] && pdone[1] && buffer.is_empty());
                ev
            }
            Op::First { done } => {
                let ev = if *done { None } else { first };
                *done |= ev.is_some();
                complete = parents_done || *done;
                ev
            }
            Op::Sum { acc } => match first {
                Some(v) => {
                    let next = fold(acc.take(), v, &name, |a, b| a + b, |a, b| a.checked_add(b))?;
                    *acc = Some(next.clone());
                    Some(next)
                }
                None => None,
            },
            Op::Min { acc } => match first {
                Some(v) => {
                    let next = fold(acc.take(), v, &name, f64::min, |a, b| Some(a.min(b)))?;
                    *acc = Some(next.clone());
                    Some(next)
                }
                None => None,
            },
            Op::DefaultIfEmpty { fallback, fired } => {
                if first.is_some() {
                    *fired = true;
                    first
                } else if parents_done && !*fired {
                    match fallback {
                        Fallback::Const(v) => Some(v.clone()),
                        Fallback::Latest(_) => fallback_latest,
                    }
                } else {
                    None
                }
            }
            Op::ForEach(action) => {
                if let Some(v) = &first {
                    action(tick, v);
                }
                first
            }
        };
        node.complete = complete || finishing;
        Ok(event)
    }
}

fn fold(
    acc: Option<Value>,
    v: Value,
    name: &str,
    real: impl Fn(f64, f64) -> f64,
    int: impl Fn(i64, i64) -> Option<i64>,
) -> Result<Value> {
    let bad = |v: &Value| stream_err(format!("stream '{name}' folds numbers, got {v:?}"));
    if v.as_f64().is_none() {
        return Err(bad(&v));
    }
    Ok(match (acc, v) {
        (None, v) => v,
        (Some(Value::Int(a)), Value::Int(b)) => match int(a, b) {
            Some(r) => Value::Int(r),
            None => Value::Real(real(a as f64, b as f64)),
        },
        (Some(a), b) => Value::Real(real(a.as_f64().ok_or_else(|| bad(&a))?, b.as_f64().unwrap())),
    })
}
