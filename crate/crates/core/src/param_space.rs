//! Mixed discrete/continuous test parameter spaces.
//!
//! Continuous parameters map affinely onto `[0,1]`; discrete parameters are
//! encoded as the big-endian binary index of their value, using the minimal
//! number of bits. The concatenation of those bits, in declaration order, is
//! the vector on which k-wise coverage is measured.

use std::collections::BTreeMap;

use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{config, domain, Result};

/// A bounded real-valued parameter. Bounds are inclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousParam {
    pub name: String,
    pub low: f64,
    pub high: f64,
}

impl ContinuousParam {
    pub fn new(name: impl Into<String>, low: f64, high: f64) -> Result<Self> {
        let name = name.into();
        if !(low.is_finite() && high.is_finite()) || low >= high {
            return Err(config(format!(
                "parameter `{name}`: interval requires finite low < high, got [{low}, {high}]"
            )));
        }
        Ok(Self { name, low, high })
    }

    pub fn range(&self) -> f64 {
        self.high - self.low
    }

    pub fn to_unit(&self, raw: f64) -> Result<f64> {
        if !raw.is_finite() || raw < self.low || raw > self.high {
            return Err(domain(format!(
                "parameter `{}`: value {raw} outside [{}, {}]",
                self.name, self.low, self.high
            )));
        }
        Ok((raw - self.low) / self.range())
    }

    pub fn from_unit(&self, unit: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&unit) {
            return Err(domain(format!(
                "parameter `{}`: unit coordinate {unit} outside [0, 1]",
                self.name
            )));
        }
        // Pin the endpoints so the inclusive bounds hold exactly.
        Ok(if unit == 1.0 {
            self.high
        } else {
            self.low + unit * self.range()
        })
    }
}

/// A parameter over an ordered set of distinct symbols.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteParam {
    pub name: String,
    #[serde(deserialize_with = "symbols")]
    pub values: Vec<String>,
}

/// Accepts both JSON strings and numbers as enum symbols (`[2, 4, 6]` or `["Red", "Blue"]`).
fn symbols<'de, D: Deserializer<'de>>(de: D) -> std::result::Result<Vec<String>, D::Error> {
    let raw: Vec<serde_json::Value> = Vec::deserialize(de)?;
    raw.into_iter()
        .map(|v| match v {
            serde_json::Value::String(s) => Ok(s),
            serde_json::Value::Number(n) => Ok(n.to_string()),
            serde_json::Value::Bool(b) => Ok(b.to_string()),
            other => Err(serde::de::Error::custom(format!(
                "enum values must be strings or numbers, got {other}"
            ))),
        })
        .collect()
}

impl DiscreteParam {
    pub fn new<S: Into<String>>(
        name: impl Into<String>,
        values: impl IntoIterator<Item = S>,
    ) -> Result<Self> {
        let param = Self {
            name: name.into(),
            values: values.into_iter().map(Into::into).collect(),
        };
        param.check()?;
        Ok(param)
    }

    fn check(&self) -> Result<()> {
        if self.values.len() < 2 {
            return Err(config(format!(
                "parameter `{}`: an enum needs at least two values",
                self.name
            )));
        }
        for (i, v) in self.values.iter().enumerate() {
            if self.values[..i].contains(v) {
                return Err(config(format!(
                    "parameter `{}`: duplicate enum value `{v}`",
                    self.name
                )));
            }
        }
        Ok(())
    }

    /// `ceil(log2(|values|))`, at least 1.
    pub fn bit_width(&self) -> usize {
        let n = self.values.len();
        (usize::BITS - (n - 1).leading_zeros()).max(1) as usize
    }

    pub fn index_of(&self, symbol: &str) -> Result<usize> {
        self.values.iter().position(|v| v == symbol).ok_or_else(|| {
            domain(format!(
                "parameter `{}`: `{symbol}` is not one of {:?}",
                self.name, self.values
            ))
        })
    }

    fn encode(&self, index: usize, out: &mut Vec<bool>) {
        let width = self.bit_width();
        for b in (0..width).rev() {
            out.push((index >> b) & 1 == 1);
        }
    }

    fn decode(&self, bits: &[bool]) -> Result<usize> {
        let index = bits.iter().fold(0usize, |acc, &b| (acc << 1) | b as usize);
        if index >= self.values.len() {
            return Err(domain(format!(
                "parameter `{}`: bit pattern decodes to index {index}, only {} values",
                self.name,
                self.values.len()
            )));
        }
        Ok(index)
    }
}

/// One parameter declaration as it appears in scenario and space files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ParamDecl {
    Interval {
        name: String,
        low: f64,
        high: f64,
    },
    Enum {
        name: String,
        #[serde(deserialize_with = "symbols")]
        values: Vec<String>,
    },
}

impl ParamDecl {
    pub fn name(&self) -> &str {
        match self {
            ParamDecl::Interval { name, .. } | ParamDecl::Enum { name, .. } => name,
        }
    }
}

/// Position of a parameter inside its kind-specific list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamSlot {
    Discrete(usize),
    Continuous(usize),
}

/// The declared test parameters of a scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSpace {
    discrete: Vec<DiscreteParam>,
    continuous: Vec<ContinuousParam>,
    order: Vec<ParamSlot>,
}

impl Serialize for ParameterSpace {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.declarations().serialize(s)
    }
}

impl<'de> Deserialize<'de> for ParameterSpace {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let decls = Vec::<ParamDecl>::deserialize(de)?;
        ParameterSpace::new(decls).map_err(serde::de::Error::custom)
    }
}

impl ParameterSpace {
    pub fn new(decls: impl IntoIterator<Item = ParamDecl>) -> Result<Self> {
        let mut space = Self {
            discrete: Vec::new(),
            continuous: Vec::new(),
            order: Vec::new(),
        };
        for decl in decls {
            if space.slot(decl.name()).is_some() {
                return Err(config(format!("duplicate parameter name `{}`", decl.name())));
            }
            match decl {
                ParamDecl::Interval { name, low, high } => {
                    space.continuous.push(ContinuousParam::new(name, low, high)?);
                    space.order.push(ParamSlot::Continuous(space.continuous.len() - 1));
                }
                ParamDecl::Enum { name, values } => {
                    space.discrete.push(DiscreteParam::new(name, values)?);
                    space.order.push(ParamSlot::Discrete(space.discrete.len() - 1));
                }
            }
        }
        if space.order.is_empty() {
            return Err(config("a parameter space needs at least one parameter"));
        }
        Ok(space)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn declarations(&self) -> Vec<ParamDecl> {
        self.order
            .iter()
            .map(|slot| match *slot {
                ParamSlot::Discrete(i) => ParamDecl::Enum {
                    name: self.discrete[i].name.clone(),
                    values: self.discrete[i].values.clone(),
                },
                ParamSlot::Continuous(i) => ParamDecl::Interval {
                    name: self.continuous[i].name.clone(),
                    low: self.continuous[i].low,
                    high: self.continuous[i].high,
                },
            })
            .collect()
    }

    pub fn discrete(&self) -> &[DiscreteParam] {
        &self.discrete
    }

    pub fn continuous(&self) -> &[ContinuousParam] {
        &self.continuous
    }

    /// Parameters in declaration order.
    pub fn order(&self) -> &[ParamSlot] {
        &self.order
    }

    pub fn names(&self) -> Vec<&str> {
        self.order.iter().map(|s| self.name_of(*s)).collect()
    }

    pub fn name_of(&self, slot: ParamSlot) -> &str {
        match slot {
            ParamSlot::Discrete(i) => &self.discrete[i].name,
            ParamSlot::Continuous(i) => &self.continuous[i].name,
        }
    }

    pub fn slot(&self, name: &str) -> Option<ParamSlot> {
        self.order.iter().copied().find(|s| self.name_of(*s) == name)
    }

    /// Total number of bits encoding the discrete parameters.
    pub fn bit_width(&self) -> usize {
        self.discrete.iter().map(DiscreteParam::bit_width).sum()
    }

    pub fn normalize(&self, v: &TestVector) -> Result<Encoded> {
        self.check_arity(v)?;
        let mut bits = Vec::with_capacity(self.bit_width());
        for p in &self.discrete {
            let symbol = v.discrete.get(&p.name).ok_or_else(|| missing(&p.name))?;
            p.encode(p.index_of(symbol)?, &mut bits);
        }
        let unit = self
            .continuous
            .iter()
            .map(|p| {
                let raw = v.continuous.get(&p.name).ok_or_else(|| missing(&p.name))?;
                p.to_unit(*raw)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Encoded { bits, unit })
    }

    pub fn denormalize(&self, bits: &[bool], unit: &[f64]) -> Result<TestVector> {
        if bits.len() != self.bit_width() {
            return Err(domain(format!(
                "expected {} bits, got {}",
                self.bit_width(),
                bits.len()
            )));
        }
        if unit.len() != self.continuous.len() {
            return Err(domain(format!(
                "expected {} unit coordinates, got {}",
                self.continuous.len(),
                unit.len()
            )));
        }
        let mut v = TestVector::default();
        let mut offset = 0;
        for p in &self.discrete {
            let w = p.bit_width();
            let index = p.decode(&bits[offset..offset + w])?;
            offset += w;
            v.discrete.insert(p.name.clone(), p.values[index].clone());
        }
        for (p, &u) in self.continuous.iter().zip(unit) {
            v.continuous.insert(p.name.clone(), p.from_unit(u)?);
        }
        Ok(v)
    }

    /// Builds a vector from per-parameter value indices and unit coordinates.
    pub fn from_indices(&self, indices: &[usize], unit: &[f64]) -> Result<TestVector> {
        let mut bits = Vec::with_capacity(self.bit_width());
        for (p, &i) in self.discrete.iter().zip(indices) {
            if i >= p.values.len() {
                return Err(domain(format!("parameter `{}`: index {i} out of range", p.name)));
            }
            p.encode(i, &mut bits);
        }
        if indices.len() != self.discrete.len() {
            return Err(domain("discrete index count does not match the space"));
        }
        self.denormalize(&bits, unit)
    }

    /// Value indices of the discrete assignment, in declaration order of the discrete list.
    pub fn indices(&self, v: &TestVector) -> Result<Vec<usize>> {
        self.discrete
            .iter()
            .map(|p| p.index_of(v.discrete.get(&p.name).ok_or_else(|| missing(&p.name))?))
            .collect()
    }

    pub fn validate(&self, v: &TestVector) -> Result<()> {
        self.normalize(v).map(|_| ())
    }

    fn check_arity(&self, v: &TestVector) -> Result<()> {
        for name in v.discrete.keys().chain(v.continuous.keys()) {
            let known = match self.slot(name) {
                Some(ParamSlot::Discrete(_)) => v.discrete.contains_key(name),
                Some(ParamSlot::Continuous(_)) => v.continuous.contains_key(name),
                None => false,
            };
            if !known {
                return Err(domain(format!("`{name}` is not a parameter of this space")));
            }
        }
        Ok(())
    }

    /// Raw value of a parameter rendered as text, 6 decimals for reals.
    pub fn format_value(&self, v: &TestVector, slot: ParamSlot) -> String {
        match slot {
            ParamSlot::Discrete(i) => v
                .discrete
                .get(&self.discrete[i].name)
                .cloned()
                .unwrap_or_default(),
            ParamSlot::Continuous(i) => v
                .continuous
                .get(&self.continuous[i].name)
                .map(|x| format!("{x:.6}"))
                .unwrap_or_default(),
        }
    }
}

fn missing(name: &str) -> crate::Error {
    domain(format!("parameter `{name}` has no assigned value"))
}

/// Binary and unit-cube encoding of a test vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoded {
    pub bits: Vec<bool>,
    pub unit: Vec<f64>,
}

/// One concrete assignment of every parameter of a space.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TestVector {
    pub discrete: BTreeMap<String, String>,
    pub continuous: BTreeMap<String, f64>,
}

impl TestVector {
    pub fn with_continuous(mut self, name: &str, value: f64) -> Self {
        self.continuous.insert(name.to_owned(), value);
        self
    }

    pub fn with_discrete(mut self, name: &str, symbol: &str) -> Self {
        self.discrete.insert(name.to_owned(), symbol.to_owned());
        self
    }

    pub fn real(&self, name: &str) -> Option<f64> {
        self.continuous.get(name).copied()
    }

    pub fn symbol(&self, name: &str) -> Option<&str> {
        self.discrete.get(name).map(String::as_str)
    }
}

pub fn bits_to_string(bits: &[bool]) -> String {
    bits.iter().map(|&b| if b { '1' } else { '0' }).collect()
}
