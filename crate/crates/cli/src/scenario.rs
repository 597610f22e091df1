//! Scenario files: TOML tables with one section per model component.
//!
//! Node ids are the 1-based labels of the network file. Errors point at the
//! line of the offending key or section header.

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context as _, Result};
use rideprice::fixtures::{SIOUX_FALLS_NET, THREE_NODE_NET};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use sha2::{Digest, Sha256};
use toml::{Table, Value};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Cda,
    PriceBalance,
    PriceProfit,
    PriceMatching,
    FitWait,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Mode::Cda => "cda",
            Mode::PriceBalance => "price_balance",
            Mode::PriceProfit => "price_profit",
            Mode::PriceMatching => "price_matching",
            Mode::FitWait => "fit_wait",
        };
        f.write_str(s)
    }
}

/// A scalar shared by every node or one value per node.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum PerNode {
    One(f64),
    Many(Vec<f64>),
}

impl PerNode {
    pub fn expand(&self, n: usize) -> Option<Vec<f64>> {
        match self {
            PerNode::One(x) => Some(vec![*x; n]),
            PerNode::Many(v) if v.len() == n => Some(v.clone()),
            PerNode::Many(_) => None,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub path: String,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupplySection {
    pub nodes: Vec<usize>,
    pub drivers: PerNode,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandSection {
    pub nodes: Vec<usize>,
    #[serde(rename = "D")]
    pub d: Option<PerNode>,
    pub b: Option<PerNode>,
}

fn zero() -> PerNode {
    PerNode::One(0.0)
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriverSection {
    #[serde(default = "zero")]
    pub beta0: PerNode,
    #[serde(default = "one")]
    pub beta1: f64,
    pub beta2: f64,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiderSection {
    #[serde(default)]
    pub beta0: f64,
    #[serde(default = "one")]
    pub beta1: f64,
    pub beta2: f64,
    pub potential: PerNode,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WaitSource {
    /// The published regression coefficients.
    #[default]
    Reference,
    /// Coefficients fitted to the simulated queue.
    Fit,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatchingSection {
    pub alpha0: Option<f64>,
    pub alpha1: Option<f64>,
    pub alpha2: Option<f64>,
    /// Simulated minutes per grid point.
    pub horizon: Option<f64>,
    pub dt: Option<f64>,
    /// Points per axis of the log-spaced arrival-rate grid.
    pub grid: Option<usize>,
    pub grid_lo: Option<f64>,
    pub grid_hi: Option<f64>,
    #[serde(default)]
    pub wait: WaitSource,
    /// Explicit `(a0, a1, a2)` on the driver side.
    pub driver_wait: Option<[f64; 3]>,
    pub rider_wait: Option<[f64; 3]>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    pub eps0: Option<f64>,
    pub m0: Option<f64>,
    pub r0: Option<f64>,
    pub c1: Option<f64>,
    pub c2: Option<f64>,
    pub gap_tol: Option<f64>,
    pub max_outer: Option<usize>,
    pub budget_per_market: Option<usize>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    FixedPoint,
    SingleLevel,
    Bisection,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pricing {
    #[default]
    Surge,
    /// One price everywhere, clearing the aggregate market.
    Uniform,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    #[serde(default)]
    pub method: Method,
    #[serde(default)]
    pub pricing: Pricing,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub damping: Option<f64>,
    pub cda_tol: Option<f64>,
    pub cda_max_iter: Option<usize>,
    pub diag_tol: Option<f64>,
    pub diag_max_outer: Option<usize>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriceSection {
    pub rho: Option<PerNode>,
    pub lower: Option<PerNode>,
    pub upper: Option<PerNode>,
}

/// Network text and where it came from.
#[derive(Clone, Debug)]
pub struct NetworkSource {
    /// `builtin:<name>` or the resolved file path.
    pub name: String,
    pub text: String,
    pub sha256: String,
}

#[derive(Clone, Debug)]
pub struct Scenario {
    pub name: String,
    pub mode: Mode,
    pub network: Option<NetworkSource>,
    pub supply: Option<SupplySection>,
    pub demand: Option<DemandSection>,
    pub drivers: Option<DriverSection>,
    pub riders: Option<RiderSection>,
    pub matching: MatchingSection,
    pub schedule: ScheduleSection,
    pub solver: SolverSection,
    pub prices: PriceSection,
    pub out: Option<PathBuf>,
    /// Merged table after overrides, with the network path resolved.
    pub echo: Table,
    pub anchors: Anchors,
}

/// Maps keys to source lines for error messages.
#[derive(Clone, Debug)]
pub struct Anchors {
    file: String,
    text: Option<String>,
    overrides: Vec<String>,
}

impl Anchors {
    fn line_of(&self, section: Option<&str>, key: Option<&str>) -> Option<usize> {
        let text = self.text.as_ref()?;
        let mut current: Option<String> = None;
        let mut header = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if let Some(rest) = line.strip_prefix('[') {
                current = rest.split(']').next().map(|s| s.trim().to_string());
                if section.is_some() && current.as_deref() == section {
                    header = Some(i + 1);
                    if key.is_none() {
                        return header;
                    }
                }
                continue;
            }
            if let Some(k) = key {
                if current.as_deref() == section && line_key(line) == Some(k) {
                    return Some(i + 1);
                }
            }
        }
        header
    }

    /// `file:line: message` when the key can be located in the file.
    pub fn error(
        &self,
        section: Option<&str>,
        key: Option<&str>,
        msg: impl fmt::Display,
    ) -> anyhow::Error {
        let dotted = match (section, key) {
            (Some(s), Some(k)) => format!("{s}.{k}"),
            (Some(s), None) => s.to_string(),
            (None, Some(k)) => k.to_string(),
            (None, None) => String::new(),
        };
        if !dotted.is_empty() && self.overrides.contains(&dotted) {
            return anyhow!("{}: --set {dotted}: {msg}", self.file);
        }
        match self.line_of(section, key) {
            Some(line) => anyhow!("{}:{line}: {msg}", self.file),
            None => anyhow!("{}: {msg}", self.file),
        }
    }
}

fn line_key(line: &str) -> Option<&str> {
    let (k, _) = line.split_once('=')?;
    let k = k.trim().trim_matches('"');
    (!k.is_empty() && !k.starts_with('#')).then_some(k)
}

/// Parses `key=value`, reading the value as TOML and falling back to a
/// bare string.
pub fn parse_override(raw: &str) -> Result<(String, Value)> {
    let (key, value) = raw
        .split_once('=')
        .ok_or_else(|| anyhow!("override `{raw}` is not of the form key=value"))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        bail!("override `{raw}` has an empty key");
    }
    let value = value.trim();
    let parsed = format!("v = {value}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(value.to_string()));
    Ok((key.to_string(), parsed))
}

fn apply_override(table: &mut Table, key: &str, value: Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("split yields one part");
    let mut t = table;
    for p in parts {
        let entry = t
            .entry(p.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        t = entry
            .as_table_mut()
            .ok_or_else(|| anyhow!("--set {key}: `{p}` is not a section"))?;
    }
    t.insert(last.to_string(), value);
    Ok(())
}

const SECTIONS: [&str; 9] = [
    "network", "supply", "demand", "drivers", "riders", "matching", "schedule", "solver", "prices",
];

/// Reads a scenario from TOML, or from the echo of a JSON report.
pub fn load(path: &Path, overrides: &[String]) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read scenario {}", path.display()))?;
    let file = path.display().to_string();
    let is_json = path.extension().is_some_and(|e| e == "json");
    let mut name = path
        .file_stem()
        .map_or_else(|| "scenario".into(), |s| s.to_string_lossy().into_owned());
    let mut table: Table = if is_json {
        let report: serde_json::Value =
            serde_json::from_str(&text).with_context(|| format!("{file}: invalid report JSON"))?;
        let echo = report
            .get("echo")
            .cloned()
            .ok_or_else(|| anyhow!("{file}: report has no `echo` field"))?;
        if let Some(n) = report.get("scenario").and_then(|v| v.as_str()) {
            name = n.to_string();
        }
        Table::deserialize(echo).with_context(|| format!("{file}: echo is not a scenario"))?
    } else {
        text.parse::<Table>()
            .map_err(|e| anyhow!("{file}: {}", e.to_string().trim_end()))?
    };
    let mut keys = Vec::new();
    for raw in overrides {
        let (key, value) = parse_override(raw)?;
        apply_override(&mut table, &key, value)?;
        keys.push(key);
    }
    let anchors = Anchors {
        file,
        text: (!is_json).then_some(text),
        overrides: keys,
    };
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    build(name, table, base, anchors)
}

fn section<T: DeserializeOwned>(table: &Table, name: &str, anchors: &Anchors) -> Result<Option<T>> {
    let Some(v) = table.get(name) else {
        return Ok(None);
    };
    if !v.is_table() {
        return Err(anchors.error(None, Some(name), format!("`{name}` must be a section")));
    }
    v.clone().try_into::<T>().map(Some).map_err(|e| {
        let msg = e.message().to_string();
        let key = msg
            .split('`')
            .nth(1)
            .filter(|_| msg.starts_with("unknown field") || msg.starts_with("invalid"));
        anchors.error(Some(name), key, format!("[{name}] {msg}"))
    })
}

fn build(name: String, mut table: Table, base: &Path, anchors: Anchors) -> Result<Scenario> {
    for key in table.keys() {
        if key != "mode" && key != "out" && !SECTIONS.contains(&key.as_str()) {
            return Err(anchors.error(None, Some(key), format!("unknown key `{key}`")));
        }
    }
    let mode = match table.get("mode") {
        Some(v) => v
            .clone()
            .try_into::<Mode>()
            .map_err(|_| anchors.error(None, Some("mode"), format!("unknown mode {v}")))?,
        None => return Err(anchors.error(None, None, "missing field `mode`")),
    };
    let out = match table.get("out") {
        Some(Value::String(s)) => Some(PathBuf::from(s)),
        Some(_) => return Err(anchors.error(None, Some("out"), "`out` must be a string")),
        None => None,
    };
    let network_section: Option<NetworkSection> = section(&table, "network", &anchors)?;
    let network = match &network_section {
        Some(n) => {
            let src = read_network(&n.path, base)
                .map_err(|e| anchors.error(Some("network"), Some("path"), e))?;
            if let Some(Value::Table(t)) = table.get_mut("network") {
                t.insert("path".into(), Value::String(src.name.clone()));
            }
            Some(src)
        }
        None => None,
    };
    let scenario = Scenario {
        name,
        mode,
        network,
        supply: section(&table, "supply", &anchors)?,
        demand: section(&table, "demand", &anchors)?,
        drivers: section(&table, "drivers", &anchors)?,
        riders: section(&table, "riders", &anchors)?,
        matching: section(&table, "matching", &anchors)?.unwrap_or_default(),
        schedule: section(&table, "schedule", &anchors)?.unwrap_or_default(),
        solver: section(&table, "solver", &anchors)?.unwrap_or_default(),
        prices: section(&table, "prices", &anchors)?.unwrap_or_default(),
        out,
        echo: table,
        anchors,
    };
    scenario.validate()?;
    Ok(scenario)
}

fn read_network(path: &str, base: &Path) -> Result<NetworkSource> {
    let (name, text) = match path.strip_prefix("builtin:") {
        Some("three_node") => (path.to_string(), THREE_NODE_NET.to_string()),
        Some("sioux_falls") => (path.to_string(), SIOUX_FALLS_NET.to_string()),
        Some(other) => bail!("unknown built-in network `{other}` (three_node, sioux_falls)"),
        None => {
            let p = base.join(path);
            let text = std::fs::read_to_string(&p)
                .with_context(|| format!("cannot read network {}", p.display()))?;
            let resolved = p.canonicalize().unwrap_or(p);
            (resolved.display().to_string(), text)
        }
    };
    let sha256 = Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect();
    Ok(NetworkSource { name, text, sha256 })
}

impl Scenario {
    /// Errors for fields the mode needs but the file does not provide.
    fn validate(&self) -> Result<()> {
        let a = &self.anchors;
        let missing = |section: &str, field: &str| {
            a.error(
                Some(section),
                None,
                format!(
                    "missing field `{field}` ({section}.{field}) required by mode {}",
                    self.mode
                ),
            )
        };
        let absent = |section: &str| {
            a.error(
                None,
                Some("mode"),
                format!("mode {} requires a [{section}] section", self.mode),
            )
        };
        let needs_network = self.mode != Mode::FitWait;
        if needs_network {
            if self.network.is_none() {
                return Err(absent("network"));
            }
            for s in ["supply", "demand", "drivers"] {
                if !self.echo.contains_key(s) {
                    return Err(absent(s));
                }
            }
        }
        if let Some(d) = &self.demand {
            if matches!(self.mode, Mode::PriceBalance | Mode::PriceProfit) {
                if d.d.is_none() {
                    return Err(missing("demand", "D"));
                }
                if d.b.is_none() {
                    return Err(missing("demand", "b"));
                }
            }
        }
        if matches!(self.mode, Mode::Cda | Mode::PriceMatching) && self.prices.rho.is_none() {
            return Err(if self.echo.contains_key("prices") {
                missing("prices", "rho")
            } else {
                absent("prices")
            });
        }
        if self.mode == Mode::PriceMatching && self.riders.is_none() {
            return Err(absent("riders"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn override_values_parse_as_toml() {
        let (k, v) = parse_override("demand.b=[4, 5]").unwrap();
        assert_eq!(k, "demand.b");
        assert_eq!(v, Value::Array(vec![Value::Integer(4), Value::Integer(5)]));
        let (_, v) = parse_override("solver.method=bisection").unwrap();
        assert_eq!(v, Value::String("bisection".into()));
        assert!(parse_override("novalue").is_err());
        assert!(parse_override("a..b=1").is_err());
    }

    #[test]
    fn overrides_create_sections() {
        let mut t = Table::new();
        apply_override(&mut t, "solver.tol", Value::Float(1e-3)).unwrap();
        assert_eq!(t["solver"]["tol"], Value::Float(1e-3));
        t.insert("mode".into(), Value::String("cda".into()));
        assert!(apply_override(&mut t, "mode.x", Value::Integer(1)).is_err());
    }

    #[test]
    fn anchors_find_keys_and_headers() {
        let a = Anchors {
            file: "s.toml".into(),
            text: Some("mode = \"cda\"\n\n[demand]\nnodes = [2]\nD = 3\n".into()),
            overrides: vec![],
        };
        assert_eq!(a.line_of(None, Some("mode")), Some(1));
        assert_eq!(a.line_of(Some("demand"), None), Some(3));
        assert_eq!(a.line_of(Some("demand"), Some("D")), Some(5));
        assert_eq!(a.line_of(Some("demand"), Some("b")), Some(3));
        let msg = a.error(Some("demand"), Some("b"), "missing").to_string();
        assert_eq!(msg, "s.toml:3: missing");
    }

    #[test]
    fn per_node_values_expand() {
        assert_eq!(PerNode::One(2.0).expand(3), Some(vec![2.0; 3]));
        assert_eq!(PerNode::Many(vec![1.0, 2.0]).expand(3), None);
    }
}
