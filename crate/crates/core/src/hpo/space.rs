use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::HpoError;

pub const SPACE_VERSION: u32 = 1;

/// A candidate hyperparameter value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Int(i64),
    Float(f64),
    Text(String),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(v) => write!(f, "{v}"),
            Value::Float(v) => write!(f, "{v}"),
            Value::Text(v) => f.write_str(v),
        }
    }
}

impl From<i64> for Value {
    fn from(v: i64) -> Self {
        Value::Int(v)
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Float(v)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::Text(v.to_string())
    }
}

/// Parameter name to chosen value, in search-space order.
pub type Config = IndexMap<String, Value>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Parameter {
    pub name: String,
    pub values: Vec<Value>,
}

/// Ordered hyperparameters; the order is the staging order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    parameters: Vec<Parameter>,
}

#[derive(Deserialize, Serialize)]
struct SpaceFile {
    version: u32,
    #[serde(rename = "parameter")]
    parameters: Vec<Parameter>,
}

impl SearchSpace {
    pub fn new(parameters: Vec<Parameter>) -> Result<Self, HpoError> {
        let mut names = HashSet::new();
        for p in &parameters {
            if !names.insert(p.name.as_str()) {
                return Err(HpoError::Config(format!("duplicate parameter {:?}", p.name)));
            }
            if p.values.is_empty() {
                return Err(HpoError::Config(format!("parameter {:?} has no candidates", p.name)));
            }
        }
        Ok(SearchSpace { parameters })
    }

    /// The Transformer search space, in table order.
    pub fn transformer() -> Self {
        let p = |name: &str, values: Vec<Value>| Parameter {
            name: name.to_string(),
            values,
        };
        let f = |xs: &[f64]| xs.iter().map(|x| Value::Float(*x)).collect::<Vec<_>>();
        let i = |xs: &[i64]| xs.iter().map(|x| Value::Int(*x)).collect::<Vec<_>>();
        SearchSpace::new(vec![
            p("learning_rate", vec![Value::Float(0.1), Value::Float(0.01), Value::Float(0.001), Value::Int(2)]),
            p("batch_size", i(&[1024, 2048, 4096, 8192])),
            p("attention_heads", i(&[2, 4, 8])),
            p("layers", i(&[5, 6])),
            p("feed_forward_dim", i(&[2048])),
            p("embedding_dim", i(&[128, 256, 512])),
            p("label_smoothing", f(&[0.1, 0.3])),
            p("dropout", f(&[0.1, 0.3])),
            p("attention_dropout", f(&[0.1])),
            p("average_decay", f(&[0.0, 0.0001])),
        ])
        .expect("static space is valid")
    }

    pub fn parameters(&self) -> &[Parameter] {
        &self.parameters
    }

    pub fn get(&self, name: &str) -> Option<&Parameter> {
        self.parameters.iter().find(|p| p.name == name)
    }

    /// Number of configurations an exhaustive grid would train.
    pub fn grid_size(&self) -> usize {
        self.parameters.iter().map(|p| p.values.len()).product()
    }

    /// Every configuration in the grid, first parameter varying slowest.
    pub fn enumerate(&self) -> Vec<Config> {
        let mut out = vec![Config::new()];
        for p in &self.parameters {
            let mut next = Vec::with_capacity(out.len() * p.values.len());
            for base in &out {
                for v in &p.values {
                    let mut c = base.clone();
                    c.insert(p.name.clone(), v.clone());
                    next.push(c);
                }
            }
            out = next;
        }
        out
    }

    /// Parses the versioned TOML space file:
    ///
    /// ```toml
    /// version = 1
    /// [[parameter]]
    /// name = "dropout"
    /// values = [0.1, 0.3]
    /// ```
    pub fn from_toml(text: &str) -> Result<Self, HpoError> {
        let file: SpaceFile = toml::from_str(text).map_err(|e| HpoError::Config(e.to_string()))?;
        if file.version != SPACE_VERSION {
            return Err(HpoError::Config(format!("unsupported space version {}", file.version)));
        }
        Self::new(file.parameters)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&SpaceFile {
            version: SPACE_VERSION,
            parameters: self.parameters.clone(),
        })
        .expect("space serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HpoError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| HpoError::Config(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_toml(&text)
    }
}
