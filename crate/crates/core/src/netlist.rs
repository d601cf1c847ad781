//! Circuit netlists: JSON parsing, validation and the builtin topologies.
//!
//! # Netlist schema
//!
//! ```json
//! { "name": "fig3",
//!   "nodes": ["a", "b", "c"],
//!   "ground": null,
//!   "branches": [
//!     {"kind": "C",  "nodes": ["a", "b"], "value": 20, "unit": "fF"},
//!     {"kind": "JJ", "nodes": ["a", "c"], "value": 1.0, "unit": "GHz", "phase_offset": 1.5707963267948966},
//!     {"kind": "JJ_ARRAY", "nodes": ["b", "c"], "value": 1.0, "unit": "GHz", "phase_offset": 1.5707963267948966, "k": 3}
//!   ] }
//! ```
//!
//! Units: capacitors take `fF` or `F`, inductors `nH` or `H`, junctions
//! `GHz` (E_J / h) or `rad/s`. Values are converted to farads, henries and
//! rad/s at parse time; [`to_json`] writes the canonical units back so that
//! a parse/serialize round trip is bit-exact.
//!
//! External flux enters as a per-junction phase offset. A junction between
//! `[n1, n2]` contributes the potential `-E_J cos(phi_n1 - phi_n2 + offset)`;
//! a junction array of length k contributes `-E_J cos((phi_n1 - phi_n2)/k + offset)`,
//! i.e. `offset` is the phase drop per junction. The branch order of the two
//! endpoints fixes the sign convention. Loop fluxes are not tracked: each
//! flux-biased loop is closed by exactly one junction carrying the offset,
//! which amounts to choosing the spanning tree made of all other branches.
//!
//! An optional `"topology": {"builtin": name, "params": {...}}` entry records
//! which builtin generated the circuit; it is required by the
//! topology-specific reductions.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::f64::consts::{FRAC_PI_2, TAU};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::{ghz_to_angular, FEMTO, NANO};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BranchKind {
    #[serde(rename = "C")]
    Capacitor,
    #[serde(rename = "L")]
    Inductor,
    #[serde(rename = "JJ")]
    Junction,
    #[serde(rename = "JJ_ARRAY")]
    JunctionArray,
}

impl BranchKind {
    pub fn tag(self) -> &'static str {
        match self {
            BranchKind::Capacitor => "C",
            BranchKind::Inductor => "L",
            BranchKind::Junction => "JJ",
            BranchKind::JunctionArray => "JJ_ARRAY",
        }
    }

    pub fn is_junction(self) -> bool {
        matches!(self, BranchKind::Junction | BranchKind::JunctionArray)
    }

    fn canonical_unit(self) -> &'static str {
        match self {
            BranchKind::Capacitor => "F",
            BranchKind::Inductor => "H",
            BranchKind::Junction | BranchKind::JunctionArray => "rad/s",
        }
    }

    /// Scale from `unit` to the canonical unit of this kind.
    fn unit_factor(self, unit: &str) -> Option<f64> {
        match (self, unit) {
            (BranchKind::Capacitor, "fF") => Some(FEMTO),
            (BranchKind::Capacitor, "F") => Some(1.0),
            (BranchKind::Inductor, "nH") => Some(NANO),
            (BranchKind::Inductor, "H") => Some(1.0),
            (BranchKind::Junction | BranchKind::JunctionArray, "GHz") => Some(ghz_to_angular(1.0)),
            (BranchKind::Junction | BranchKind::JunctionArray, "rad/s") => Some(1.0),
            _ => None,
        }
    }
}

impl FromStr for BranchKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "C" => Ok(BranchKind::Capacitor),
            "L" => Ok(BranchKind::Inductor),
            "JJ" => Ok(BranchKind::Junction),
            "JJ_ARRAY" => Ok(BranchKind::JunctionArray),
            other => Err(Error::UnknownBranchKind(other.to_string())),
        }
    }
}

/// A two-terminal element. `value` is in farads, henries or rad/s.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub kind: BranchKind,
    pub nodes: [String; 2],
    pub value: f64,
    pub phase_offset: f64,
    pub array_length: u32,
}

impl Branch {
    pub fn capacitor(a: &str, b: &str, farads: f64) -> Self {
        Self::new(BranchKind::Capacitor, a, b, farads)
    }

    pub fn inductor(a: &str, b: &str, henries: f64) -> Self {
        Self::new(BranchKind::Inductor, a, b, henries)
    }

    pub fn junction(a: &str, b: &str, energy: f64, phase_offset: f64) -> Self {
        Branch {
            phase_offset,
            ..Self::new(BranchKind::Junction, a, b, energy)
        }
    }

    pub fn junction_array(a: &str, b: &str, energy: f64, phase_offset: f64, k: u32) -> Self {
        Branch {
            phase_offset,
            array_length: k,
            ..Self::new(BranchKind::JunctionArray, a, b, energy)
        }
    }

    fn new(kind: BranchKind, a: &str, b: &str, value: f64) -> Self {
        Branch {
            kind,
            nodes: [a.to_string(), b.to_string()],
            value,
            phase_offset: 0.0,
            array_length: 1,
        }
    }
}

/// Which builtin generated a circuit, with the fully resolved parameter table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub builtin: Builtin,
    pub params: BTreeMap<String, f64>,
}

impl Topology {
    /// Parameter `key`, or `fallback` when the specific key is absent.
    pub fn param(&self, key: &str, fallback: &str) -> f64 {
        self.params
            .get(key)
            .or_else(|| self.params.get(fallback))
            .copied()
            .unwrap_or(f64::NAN)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Circuit {
    pub name: String,
    pub nodes: Vec<String>,
    pub ground: Option<String>,
    pub branches: Vec<Branch>,
    pub topology: Option<Topology>,
}

impl Circuit {
    pub fn node_index(&self, node: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n == node)
    }

    /// The node whose phase is fixed to zero: the ground if flagged, else the last node.
    pub fn reference_node(&self) -> Option<&str> {
        self.ground
            .as_deref()
            .or_else(|| self.nodes.last().map(String::as_str))
    }
}

// ---------------------------------------------------------------------------
// JSON document

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCircuit {
    name: String,
    nodes: Vec<String>,
    #[serde(default)]
    ground: Option<String>,
    branches: Vec<RawBranch>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    topology: Option<Topology>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBranch {
    kind: String,
    nodes: [String; 2],
    value: f64,
    unit: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    phase_offset: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    k: Option<u32>,
}

/// Parse a JSON netlist.
pub fn parse_netlist(text: &str) -> Result<Circuit> {
    let raw: RawCircuit = serde_json::from_str(text).map_err(|e| Error::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;

    let mut seen = HashSet::new();
    for node in &raw.nodes {
        if !seen.insert(node.as_str()) {
            return Err(Error::InvalidNetlist(format!("duplicate node `{node}`")));
        }
    }
    if let Some(g) = &raw.ground {
        if !seen.contains(g.as_str()) {
            return Err(Error::InvalidNetlist(format!("ground `{g}` is not a declared node")));
        }
    }

    let mut branches = Vec::with_capacity(raw.branches.len());
    for (i, rb) in raw.branches.into_iter().enumerate() {
        let kind: BranchKind = rb.kind.parse()?;
        for node in &rb.nodes {
            if !seen.contains(node.as_str()) {
                return Err(Error::UndeclaredNode {
                    branch: i,
                    node: node.clone(),
                });
            }
        }
        if !(rb.value > 0.0) || !rb.value.is_finite() {
            return Err(Error::NonPositiveValue {
                branch: i,
                value: rb.value,
            });
        }
        let factor = kind.unit_factor(&rb.unit).ok_or_else(|| Error::BadUnit {
            kind: kind.tag().to_string(),
            unit: rb.unit.clone(),
        })?;
        if !kind.is_junction() && (rb.phase_offset.is_some() || rb.k.is_some()) {
            return Err(Error::InvalidNetlist(format!(
                "branch {i}: phase_offset and k only apply to junctions"
            )));
        }
        if kind == BranchKind::Junction && rb.k.is_some() {
            return Err(Error::InvalidNetlist(format!("branch {i}: k only applies to JJ_ARRAY")));
        }
        let array_length = match kind {
            BranchKind::JunctionArray => rb.k.ok_or_else(|| {
                Error::InvalidNetlist(format!("branch {i}: JJ_ARRAY requires k"))
            })?,
            _ => 1,
        };
        if array_length == 0 {
            return Err(Error::InvalidNetlist(format!("branch {i}: k must be >= 1")));
        }
        let phase_offset = rb.phase_offset.unwrap_or(0.0);
        if !(0.0..TAU).contains(&phase_offset) {
            return Err(Error::InvalidNetlist(format!(
                "branch {i}: phase_offset {phase_offset} outside [0, 2pi)"
            )));
        }
        let value = if factor == 1.0 { rb.value } else { rb.value * factor };
        branches.push(Branch {
            kind,
            nodes: rb.nodes,
            value,
            phase_offset,
            array_length,
        });
    }

    Ok(Circuit {
        name: raw.name,
        nodes: raw.nodes,
        ground: raw.ground,
        branches,
        topology: raw.topology,
    })
}

/// Serialize a circuit with canonical units ("F", "H", "rad/s").
pub fn to_json(circuit: &Circuit) -> String {
    let raw = RawCircuit {
        name: circuit.name.clone(),
        nodes: circuit.nodes.clone(),
        ground: circuit.ground.clone(),
        branches: circuit
            .branches
            .iter()
            .map(|b| RawBranch {
                kind: b.kind.tag().to_string(),
                nodes: b.nodes.clone(),
                value: b.value,
                unit: b.kind.canonical_unit().to_string(),
                phase_offset: b.kind.is_junction().then_some(b.phase_offset),
                k: (b.kind == BranchKind::JunctionArray).then_some(b.array_length),
            })
            .collect(),
        topology: circuit.topology.clone(),
    };
    serde_json::to_string_pretty(&raw).expect("circuit serialization cannot fail")
}

// ---------------------------------------------------------------------------
// Validation

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Violation {
    NonPositiveValue { branch: usize, value: f64 },
    UndeclaredNode { branch: usize, node: String },
    SelfLoop { branch: usize },
    PhaseOffsetOutOfRange { branch: usize, offset: f64 },
    ZeroArrayLength { branch: usize },
    DuplicateNode(String),
    UndeclaredGround(String),
    Disconnected { components: usize },
    Empty,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonPositiveValue { branch, value } => {
                write!(f, "branch {branch}: non-positive value {value}")
            }
            Violation::UndeclaredNode { branch, node } => {
                write!(f, "branch {branch}: undeclared node `{node}`")
            }
            Violation::SelfLoop { branch } => {
                write!(f, "branch {branch}: endpoints are the same node")
            }
            Violation::PhaseOffsetOutOfRange { branch, offset } => {
                write!(f, "branch {branch}: phase offset {offset} outside [0, 2pi)")
            }
            Violation::ZeroArrayLength { branch } => {
                write!(f, "branch {branch}: junction array length must be >= 1")
            }
            Violation::DuplicateNode(n) => write!(f, "duplicate node `{n}`"),
            Violation::UndeclaredGround(n) => write!(f, "ground `{n}` is not a declared node"),
            Violation::Disconnected { components } => {
                write!(f, "circuit is disconnected ({components} components)")
            }
            Violation::Empty => write!(f, "circuit has no branches"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn messages(&self) -> Vec<String> {
        self.violations.iter().map(ToString::to_string).collect()
    }
}

pub fn validate_circuit(c: &Circuit) -> ValidationReport {
    let mut violations = Vec::new();
    let mut index = HashMap::new();
    for (i, n) in c.nodes.iter().enumerate() {
        if index.insert(n.as_str(), i).is_some() {
            violations.push(Violation::DuplicateNode(n.clone()));
        }
    }
    if let Some(g) = &c.ground {
        if !index.contains_key(g.as_str()) {
            violations.push(Violation::UndeclaredGround(g.clone()));
        }
    }
    if c.branches.is_empty() {
        violations.push(Violation::Empty);
    }

    let mut adjacency = vec![Vec::new(); c.nodes.len()];
    for (i, b) in c.branches.iter().enumerate() {
        if !(b.value > 0.0) || !b.value.is_finite() {
            violations.push(Violation::NonPositiveValue {
                branch: i,
                value: b.value,
            });
        }
        let ends: Vec<Option<usize>> = b
            .nodes
            .iter()
            .map(|n| {
                let idx = index.get(n.as_str()).copied();
                if idx.is_none() {
                    violations.push(Violation::UndeclaredNode {
                        branch: i,
                        node: n.clone(),
                    });
                }
                idx
            })
            .collect();
        if b.nodes[0] == b.nodes[1] {
            violations.push(Violation::SelfLoop { branch: i });
        }
        if b.kind.is_junction() && !(0.0..TAU).contains(&b.phase_offset) {
            violations.push(Violation::PhaseOffsetOutOfRange {
                branch: i,
                offset: b.phase_offset,
            });
        }
        if b.kind == BranchKind::JunctionArray && b.array_length == 0 {
            violations.push(Violation::ZeroArrayLength { branch: i });
        }
        if let (Some(x), Some(y)) = (ends[0], ends[1]) {
            adjacency[x].push(y);
            adjacency[y].push(x);
        }
    }

    let components = count_components(&adjacency);
    if components > 1 {
        violations.push(Violation::Disconnected { components });
    }
    ValidationReport { violations }
}

fn count_components(adjacency: &[Vec<usize>]) -> usize {
    let mut seen = vec![false; adjacency.len()];
    let mut components = 0;
    for start in 0..adjacency.len() {
        if seen[start] {
            continue;
        }
        components += 1;
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(v) = queue.pop_front() {
            for &w in &adjacency[v] {
                if !seen[w] {
                    seen[w] = true;
                    queue.push_back(w);
                }
            }
        }
    }
    components
}

// ---------------------------------------------------------------------------
// Builtin topologies

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Builtin {
    QubitResonator,
    QubitNResonators,
    TwoBlocks,
    Plaquette,
    JunctionArrayCoupler,
}

impl Builtin {
    pub const ALL: [Builtin; 5] = [
        Builtin::QubitResonator,
        Builtin::QubitNResonators,
        Builtin::TwoBlocks,
        Builtin::Plaquette,
        Builtin::JunctionArrayCoupler,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Builtin::QubitResonator => "qubit_resonator",
            Builtin::QubitNResonators => "qubit_n_resonators",
            Builtin::TwoBlocks => "two_blocks",
            Builtin::Plaquette => "plaquette",
            Builtin::JunctionArrayCoupler => "junction_array_coupler",
        }
    }

    /// Default parameter table, in netlist units (fF, nH, GHz).
    pub fn defaults(self) -> BTreeMap<String, f64> {
        let mut p: BTreeMap<String, f64> = [
            ("C_q", 20.0),
            ("C", 100.0),
            ("L", 40.0),
            ("E_Jq", 20.0),
            ("E_J", 0.5),
            ("asymmetry", 0.0),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        match self {
            Builtin::TwoBlocks | Builtin::Plaquette => {
                p.insert("C_g".into(), 10.0);
                p.insert("C_s".into(), 0.0);
            }
            _ => {}
        }
        p
    }

    /// Parameters without a default.
    fn required(self) -> &'static [&'static str] {
        match self {
            Builtin::QubitNResonators => &["n"],
            Builtin::JunctionArrayCoupler => &["k"],
            _ => &[],
        }
    }

    /// Whether `key` is an accepted (possibly indexed) parameter name.
    fn accepts(self, key: &str, resolved: &BTreeMap<String, f64>) -> bool {
        if resolved.contains_key(key) || self.required().contains(&key) {
            return true;
        }
        // indexed overrides such as C_1, L_2, E_J_alpha, C_g_beta
        let indexed = ["C_q_", "C_", "L_", "E_Jq_", "E_J_", "C_g_", "C_s_", "asymmetry_"];
        indexed.iter().any(|p| key.starts_with(p) && key.len() > p.len())
    }
}

impl fmt::Display for Builtin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Builtin {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Builtin::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| Error::UnknownBuiltin(s.to_string()))
    }
}

/// Plaquette connections in ring order, with the two blocks each one joins.
pub const PLAQUETTE_CONNECTIONS: [(&str, usize, usize); 4] =
    [("alpha", 1, 2), ("beta", 2, 3), ("gamma", 3, 4), ("delta", 4, 1)];

/// Build one of the builtin circuits. `params` overrides the defaults;
/// values are in netlist units (fF, nH, GHz). Per-element overrides use an
/// index suffix, e.g. `C_1`, `L_2`, `E_J_alpha`, `C_g_beta`.
pub fn builtin_circuit(name: Builtin, params: &BTreeMap<String, f64>) -> Result<Circuit> {
    let mut resolved = name.defaults();
    for (k, v) in params {
        if !name.accepts(k, &resolved) {
            return Err(Error::UnknownParameter {
                builtin: name.to_string(),
                param: k.clone(),
            });
        }
        resolved.insert(k.clone(), *v);
    }
    for req in name.required() {
        if !resolved.contains_key(*req) {
            return Err(Error::MissingParameter {
                builtin: name.to_string(),
                param: (*req).to_string(),
            });
        }
    }
    let topology = Topology {
        builtin: name,
        params: resolved,
    };
    let mut b = Builder::default();
    match name {
        Builtin::QubitResonator => {
            b.qubit("a", "b", &topology, "");
            b.arm("a", "b", "c", &topology, "", 1);
            b.finish("qubit_resonator", &["a", "b", "c"], None, topology)
        }
        Builtin::JunctionArrayCoupler => {
            let k = count_param(&topology, "k")?;
            b.qubit("a", "b", &topology, "");
            b.arm("a", "b", "c", &topology, "", k);
            b.finish("junction_array_coupler", &["a", "b", "c"], None, topology)
        }
        Builtin::QubitNResonators => {
            let n = count_param(&topology, "n")? as usize;
            b.qubit("a", "b", &topology, "");
            let mut nodes = vec!["a".to_string(), "b".to_string()];
            for j in 1..=n {
                let c = format!("c{j}");
                b.arm("a", "b", &c, &topology, &format!("_{j}"), 1);
                nodes.push(c);
            }
            let refs: Vec<&str> = nodes.iter().map(String::as_str).collect();
            b.finish("qubit_n_resonators", &refs, None, topology)
        }
        Builtin::TwoBlocks => {
            for i in 1..=2 {
                let (a, bb) = (format!("a{i}"), format!("b{i}"));
                let sfx = format!("_{i}");
                b.qubit(&a, &bb, &topology, &sfx);
                b.arm(&a, &bb, "c", &topology, &sfx, 1);
                let cg = topology.param("C_g", "C_g") * FEMTO;
                b.push(Branch::capacitor(&a, "g", cg));
                b.push(Branch::capacitor(&bb, "g", cg));
            }
            let cs = topology.param("C_s", "C_s");
            if cs > 0.0 {
                b.push(Branch::capacitor("c", "g", cs * FEMTO));
            }
            b.finish(
                "two_blocks",
                &["a1", "b1", "a2", "b2", "c", "g"],
                Some("g"),
                topology,
            )
        }
        Builtin::Plaquette => {
            for i in 1..=4 {
                let sfx = format!("_{i}");
                b.qubit(&format!("a{i}"), &format!("b{i}"), &topology, &sfx);
            }
            for (conn, i1, i2) in PLAQUETTE_CONNECTIONS {
                let c = format!("c_{conn}");
                for i in [i1, i2] {
                    let (a, bb) = (format!("a{i}"), format!("b{i}"));
                    b.arm(&a, &bb, &c, &topology, &format!("_{i}_{conn}"), 1);
                    let cg = topology.param(&format!("C_g_{conn}"), "C_g") * FEMTO;
                    b.push(Branch::capacitor(&a, "g", cg));
                    b.push(Branch::capacitor(&bb, "g", cg));
                }
                let cs = topology.param(&format!("C_s_{conn}"), "C_s");
                if cs > 0.0 {
                    b.push(Branch::capacitor(&c, "g", cs * FEMTO));
                }
            }
            let mut nodes: Vec<String> = Vec::new();
            for i in 1..=4 {
                nodes.push(format!("a{i}"));
                nodes.push(format!("b{i}"));
            }
            for (conn, _, _) in PLAQUETTE_CONNECTIONS {
                nodes.push(format!("c_{conn}"));
            }
            nodes.push("g".into());
            let refs: Vec<&str> = nodes.iter().map(String::as_str).collect();
            b.finish("plaquette", &refs, Some("g"), topology)
        }
    }
}

fn count_param(t: &Topology, key: &str) -> Result<u32> {
    let v = t.params[key];
    if v < 1.0 || v.fract() != 0.0 || v > 64.0 {
        return Err(Error::InvalidArgument(format!(
            "parameter `{key}` must be a positive integer, got {v}"
        )));
    }
    Ok(v as u32)
}

#[derive(Default)]
struct Builder {
    branches: Vec<Branch>,
}

impl Builder {
    fn push(&mut self, b: Branch) {
        self.branches.push(b);
    }

    /// Qubit junction and its shunt capacitance between `a` and `b`.
    fn qubit(&mut self, a: &str, b: &str, t: &Topology, sfx: &str) {
        let cq = t.param(&format!("C_q{sfx}"), "C_q") * FEMTO;
        let ejq = ghz_to_angular(t.param(&format!("E_Jq{sfx}"), "E_Jq"));
        self.push(Branch::capacitor(a, b, cq));
        if ejq > 0.0 {
            self.push(Branch::junction(a, b, ejq, 0.0));
        }
    }

    /// Symmetric resonator arm: C, L and a flux-biased coupling junction
    /// (or array of length `k`) on each of a-c and b-c.
    fn arm(&mut self, a: &str, b: &str, c: &str, t: &Topology, sfx: &str, k: u32) {
        let cap = t.param(&format!("C{sfx}"), "C") * FEMTO;
        let ind = t.param(&format!("L{sfx}"), "L") * NANO;
        let ej = ghz_to_angular(t.param(&format!("E_J{sfx}"), "E_J"));
        let d = t.param(&format!("asymmetry{sfx}"), "asymmetry");
        for (node, e) in [(a, ej * (1.0 - d)), (b, ej * (1.0 + d))] {
            self.push(Branch::capacitor(node, c, cap));
            self.push(Branch::inductor(node, c, ind));
            if e > 0.0 {
                if k == 1 {
                    self.push(Branch::junction(node, c, e, FRAC_PI_2));
                } else {
                    self.push(Branch::junction_array(node, c, e, FRAC_PI_2, k));
                }
            }
        }
    }

    fn finish(
        self,
        name: &str,
        nodes: &[&str],
        ground: Option<&str>,
        topology: Topology,
    ) -> Result<Circuit> {
        let circuit = Circuit {
            name: name.to_string(),
            nodes: nodes.iter().map(|s| s.to_string()).collect(),
            ground: ground.map(str::to_string),
            branches: self.branches,
            topology: Some(topology),
        };
        let report = validate_circuit(&circuit);
        if !report.is_valid() {
            return Err(Error::InvalidCircuit(report.messages().join("; ")));
        }
        Ok(circuit)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn defaults(b: Builtin) -> Circuit {
        let mut p = BTreeMap::new();
        if b == Builtin::QubitNResonators {
            p.insert("n".to_string(), 3.0);
        }
        if b == Builtin::JunctionArrayCoupler {
            p.insert("k".to_string(), 3.0);
        }
        builtin_circuit(b, &p).unwrap()
    }

    #[test]
    fn minimal_capacitor() {
        let doc = r#"{"name":"x","nodes":["a","b"],"ground":null,
            "branches":[{"kind":"C","nodes":["a","b"],"value":100,"unit":"fF"}]}"#;
        let c = parse_netlist(doc).unwrap();
        assert_eq!(c.nodes.len(), 2);
        assert_eq!(c.branches.len(), 1);
        assert!((c.branches[0].value - 100e-15).abs() < 1e-28);
    }

    #[test]
    fn fig3_netlist() {
        let doc = r#"{"name":"fig3","nodes":["a","b","c"],"ground":null,"branches":[
            {"kind":"C","nodes":["a","b"],"value":20,"unit":"fF"},
            {"kind":"JJ","nodes":["a","b"],"value":20,"unit":"GHz"},
            {"kind":"C","nodes":["a","c"],"value":100,"unit":"fF"},
            {"kind":"L","nodes":["a","c"],"value":40,"unit":"nH"},
            {"kind":"JJ","nodes":["a","c"],"value":0.5,"unit":"GHz","phase_offset":1.5707963267948966},
            {"kind":"C","nodes":["b","c"],"value":100,"unit":"fF"},
            {"kind":"L","nodes":["b","c"],"value":40,"unit":"nH"},
            {"kind":"JJ","nodes":["b","c"],"value":0.5,"unit":"GHz","phase_offset":1.5707963267948966}
        ]}"#;
        let c = parse_netlist(doc).unwrap();
        assert_eq!(c.nodes.len(), 3);
        assert_eq!(c.branches.len(), 8);
        assert!(validate_circuit(&c).is_valid());
        // same topology and values as the builtin
        let b = defaults(Builtin::QubitResonator);
        assert_eq!(b.branches.len(), c.branches.len());
        for (x, y) in b.branches.iter().zip(&c.branches) {
            assert_eq!(x.kind, y.kind);
            assert_eq!(x.nodes, y.nodes);
            assert!((x.value - y.value).abs() <= 1e-15 * x.value);
        }
    }

    #[test]
    fn undeclared_node() {
        let doc = r#"{"name":"x","nodes":["a","b"],"ground":null,
            "branches":[{"kind":"C","nodes":["a","z"],"value":1,"unit":"fF"}]}"#;
        match parse_netlist(doc) {
            Err(Error::UndeclaredNode { node, .. }) => assert_eq!(node, "z"),
            other => panic!("expected undeclared node, got {other:?}"),
        }
    }

    #[test]
    fn parse_errors() {
        let bad_kind = r#"{"name":"x","nodes":["a","b"],"branches":[{"kind":"R","nodes":["a","b"],"value":1,"unit":"fF"}]}"#;
        assert!(matches!(parse_netlist(bad_kind), Err(Error::UnknownBranchKind(_))));
        let negative = r#"{"name":"x","nodes":["a","b"],"branches":[{"kind":"C","nodes":["a","b"],"value":-1,"unit":"fF"}]}"#;
        assert!(matches!(parse_netlist(negative), Err(Error::NonPositiveValue { .. })));
        let syntax = "{\"name\": \"x\",\n \"nodes\": [\"a\" \"b\"]}";
        match parse_netlist(syntax) {
            Err(Error::Syntax { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected syntax error, got {other:?}"),
        }
        let unit = r#"{"name":"x","nodes":["a","b"],"branches":[{"kind":"L","nodes":["a","b"],"value":1,"unit":"fF"}]}"#;
        assert!(matches!(parse_netlist(unit), Err(Error::BadUnit { .. })));
    }

    #[test]
    fn validation_reports() {
        let mut c = defaults(Builtin::QubitResonator);
        c.branches[0].value = -1e-15;
        let r = validate_circuit(&c);
        assert!(r.messages().iter().any(|m| m.contains("non-positive value")));

        let c = Circuit {
            name: "split".into(),
            nodes: vec!["a".into(), "b".into(), "c".into(), "d".into()],
            ground: None,
            branches: vec![
                Branch::capacitor("a", "b", 1e-15),
                Branch::capacitor("c", "d", 1e-15),
            ],
            topology: None,
        };
        let r = validate_circuit(&c);
        assert!(r.messages().iter().any(|m| m.contains("disconnected")));
    }

    #[test]
    fn builtins_validate() {
        for b in Builtin::ALL {
            let c = defaults(b);
            assert!(validate_circuit(&c).is_valid(), "{b}");
        }
    }

    #[test]
    fn plaquette_shape() {
        let c = defaults(Builtin::Plaquette);
        // 8 qubit nodes, 4 connection nodes, ground
        assert_eq!(c.nodes.len(), 13);
        assert_eq!(c.ground.as_deref(), Some("g"));
        // one C_g per node per connection: 4 connections x 2 blocks x 2 nodes
        let to_ground = c
            .branches
            .iter()
            .filter(|b| b.kind == BranchKind::Capacitor && b.nodes[1] == "g")
            .count();
        assert_eq!(to_ground, 16);
        let junctions = c.branches.iter().filter(|b| b.kind.is_junction()).count();
        assert_eq!(junctions, 4 + 16);
    }

    #[test]
    fn stray_capacitance_branch() {
        let p = BTreeMap::from([("C_s".to_string(), 5.0)]);
        let c = builtin_circuit(Builtin::TwoBlocks, &p).unwrap();
        let stray: Vec<_> = c
            .branches
            .iter()
            .filter(|b| b.nodes == ["c".to_string(), "g".to_string()])
            .collect();
        assert_eq!(stray.len(), 1);
        assert!((stray[0].value - 5e-15).abs() < 1e-28);
        let none = defaults(Builtin::TwoBlocks);
        assert!(none.branches.iter().all(|b| b.nodes != ["c".to_string(), "g".to_string()]));
    }

    #[test]
    fn builtin_errors() {
        assert!(matches!(
            "fig9".parse::<Builtin>(),
            Err(Error::UnknownBuiltin(_))
        ));
        assert!(matches!(
            builtin_circuit(Builtin::QubitNResonators, &BTreeMap::new()),
            Err(Error::MissingParameter { .. })
        ));
        let p = BTreeMap::from([("Q".to_string(), 1.0)]);
        assert!(matches!(
            builtin_circuit(Builtin::TwoBlocks, &p),
            Err(Error::UnknownParameter { .. })
        ));
    }

    #[test]
    fn junction_array_offsets() {
        let c = defaults(Builtin::JunctionArrayCoupler);
        let arrays: Vec<_> = c
            .branches
            .iter()
            .filter(|b| b.kind == BranchKind::JunctionArray)
            .collect();
        assert_eq!(arrays.len(), 2);
        for a in arrays {
            assert_eq!(a.array_length, 3);
            // per-junction drop pi/2, loop total k pi/2 = 2 pi Phi_x / Phi_0 with Phi_x = k Phi_0 / 4
            assert!((a.phase_offset - FRAC_PI_2).abs() < 1e-15);
        }
    }
}
