//! SPICE-subset netlist parser.
//!
//! Supported grammar, one element per logical line (`+` continues the
//! previous line, `*` starts a comment, `.end` is optional):
//!
//! ```text
//! M<id> <d> <g> <s> [<b>] <model> W=<v> L=<v> [M=<v>]
//! R<id> <n1> <n2> <v>
//! C<id> <n1> <n2> <v>
//! I<id> <n+> <n-> <v>
//! V<id> <n+> <n-> <v>
//! ```
//!
//! `<v>` is a float with an optional SI suffix (f, p, n, u, m, k, meg, g)
//! or a bare symbol name denoting a design variable. The MOS model name
//! selects polarity from its first letter after optional digits
//! (`n` -> NMOS, `p` -> PMOS). A 3-net MOS card defaults bulk to source.
//! `.subckt` is rejected: hierarchy is discovered from the flat netlist,
//! not declared.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetlistError {
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("duplicate device name `{0}`")]
    DuplicateDevice(String),
    #[error("line {line}: unsupported device card `{prefix}`")]
    UnknownDeviceCard { line: usize, prefix: char },
    #[error("no ground net found (tried aliases: {0})")]
    MissingGround(String),
}

fn syntax(line: usize, reason: impl Into<String>) -> NetlistError {
    NetlistError::Syntax {
        line,
        reason: reason.into(),
    }
}

/// Device kinds of the supported element cards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeviceKind {
    Nmos,
    Pmos,
    Resistor,
    Capacitor,
    CurrentSource,
    VoltageSource,
}

impl DeviceKind {
    pub fn is_mos(self) -> bool {
        matches!(self, DeviceKind::Nmos | DeviceKind::Pmos)
    }

    /// Human-readable type name used in text renderings.
    pub fn describe(self) -> &'static str {
        match self {
            DeviceKind::Nmos => "NMOS",
            DeviceKind::Pmos => "PMOS",
            DeviceKind::Resistor => "resistor",
            DeviceKind::Capacitor => "capacitor",
            DeviceKind::CurrentSource => "current source",
            DeviceKind::VoltageSource => "voltage source",
        }
    }

    /// Element letter for serialization.
    pub fn letter(self) -> char {
        match self {
            DeviceKind::Nmos | DeviceKind::Pmos => 'M',
            DeviceKind::Resistor => 'R',
            DeviceKind::Capacitor => 'C',
            DeviceKind::CurrentSource => 'I',
            DeviceKind::VoltageSource => 'V',
        }
    }
}

/// Terminal roles: D/G/S/B for MOS, P/N for two-terminal devices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TerminalRole {
    Drain,
    Gate,
    Source,
    Bulk,
    Pos,
    Neg,
}

impl TerminalRole {
    pub fn letter(self) -> &'static str {
        match self {
            TerminalRole::Drain => "D",
            TerminalRole::Gate => "G",
            TerminalRole::Source => "S",
            TerminalRole::Bulk => "B",
            TerminalRole::Pos => "P",
            TerminalRole::Neg => "N",
        }
    }

    pub fn describe(self) -> &'static str {
        match self {
            TerminalRole::Drain => "drain",
            TerminalRole::Gate => "gate",
            TerminalRole::Source => "source",
            TerminalRole::Bulk => "bulk",
            TerminalRole::Pos => "positive terminal",
            TerminalRole::Neg => "negative terminal",
        }
    }
}

/// A parameter value: an SI-expanded literal or a design-variable symbol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Literal(f64),
    Symbol(String),
}

impl ParamValue {
    pub fn symbol(&self) -> Option<&str> {
        match self {
            ParamValue::Symbol(s) => Some(s),
            ParamValue::Literal(_) => None,
        }
    }

    pub fn literal(&self) -> Option<f64> {
        match self {
            ParamValue::Literal(v) => Some(*v),
            ParamValue::Symbol(_) => None,
        }
    }

    fn render(&self) -> String {
        match self {
            ParamValue::Literal(v) => format!("{v}"),
            ParamValue::Symbol(s) => s.clone(),
        }
    }
}

/// One parsed element card.
#[derive(Debug, Clone, PartialEq)]
pub struct Device {
    pub name: String,
    pub kind: DeviceKind,
    /// Ordered terminals: D,G,S,B for MOS; P,N for two-terminal devices.
    pub terminals: Vec<(TerminalRole, String)>,
    pub params: IndexMap<String, ParamValue>,
}

impl Device {
    pub fn net(&self, role: TerminalRole) -> Option<&str> {
        self.terminals
            .iter()
            .find(|(r, _)| *r == role)
            .map(|(_, n)| n.as_str())
    }
}

/// A parsed flat netlist with resolved rail aliases.
#[derive(Debug, Clone)]
pub struct Netlist {
    pub title: String,
    pub devices: Vec<Device>,
    /// Canonical net names in first-occurrence order (original case).
    pub nets: Vec<String>,
    pub gnd: Option<String>,
    pub vdd: Option<String>,
    pub warnings: Vec<String>,
}

impl PartialEq for Netlist {
    fn eq(&self, other: &Self) -> bool {
        self.title == other.title
            && self.devices == other.devices
            && self.net_set() == other.net_set()
            && self.gnd == other.gnd
            && self.vdd == other.vdd
    }
}

impl Netlist {
    fn net_set(&self) -> BTreeSet<&str> {
        self.nets.iter().map(|s| s.as_str()).collect()
    }

    pub fn device(&self, name: &str) -> Option<&Device> {
        self.devices.iter().find(|d| d.name == name)
    }

    /// All design-variable symbols referenced by device parameters.
    pub fn symbols(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        for dev in &self.devices {
            for value in dev.params.values() {
                if let ParamValue::Symbol(s) = value {
                    out.insert(s.clone());
                }
            }
        }
        out
    }
}

const SUFFIXES: &[(&str, i32)] = &[
    ("meg", 6),
    ("f", -15),
    ("p", -12),
    ("n", -9),
    ("u", -6),
    ("m", -3),
    ("k", 3),
    ("g", 9),
];

/// Decimal exponent for an SI suffix (case-insensitive); empty suffix is 0.
pub fn suffix_exponent(suffix: &str) -> Option<i32> {
    if suffix.is_empty() {
        return Some(0);
    }
    let lower = suffix.to_ascii_lowercase();
    SUFFIXES
        .iter()
        .find(|(s, _)| *s == lower)
        .map(|(_, exp)| *exp)
}

/// Fold an extra decimal exponent into the numeric text so the float parser
/// performs a single correctly-rounded conversion ("180n" parses exactly as
/// "1.8e-7" would).
fn recompose_decimal(num: &str, extra_exp: i32) -> String {
    if extra_exp == 0 {
        return num.to_string();
    }
    if let Some(pos) = num.find(['e', 'E']) {
        let (mant, exp_text) = num.split_at(pos);
        let exp: i32 = exp_text[1..].parse().unwrap_or(0);
        format!("{mant}e{}", exp + extra_exp)
    } else {
        format!("{num}e{extra_exp}")
    }
}

fn is_identifier(tok: &str) -> bool {
    let mut chars = tok.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Split a value token into (numeric text, suffix text). The numeric part is
/// the longest leading float, treating `e`/`E` as an exponent marker only
/// when followed by a (signed) digit.
fn split_numeric(tok: &str) -> Option<(&str, &str)> {
    let bytes = tok.as_bytes();
    let mut i = 0;
    if i < bytes.len() && (bytes[i] == b'+' || bytes[i] == b'-') {
        i += 1;
    }
    let digits_start = i;
    while i < bytes.len() && bytes[i].is_ascii_digit() {
        i += 1;
    }
    if i < bytes.len() && bytes[i] == b'.' {
        i += 1;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
    }
    if i == digits_start || !bytes[digits_start..i].iter().any(|b| b.is_ascii_digit()) {
        return None;
    }
    if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
        let mut j = i + 1;
        if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
            j += 1;
        }
        let exp_start = j;
        while j < bytes.len() && bytes[j].is_ascii_digit() {
            j += 1;
        }
        if j > exp_start {
            i = j;
        }
    }
    Some((&tok[..i], &tok[i..]))
}

/// Parse `<float>[suffix]` or a bare symbol name.
pub fn parse_value(tok: &str, line: usize) -> Result<ParamValue, NetlistError> {
    if let Some((num, suffix)) = split_numeric(tok) {
        let exp = suffix_exponent(suffix)
            .ok_or_else(|| syntax(line, format!("unknown SI suffix `{suffix}` in `{tok}`")))?;
        let value: f64 = recompose_decimal(num, exp)
            .parse()
            .map_err(|_| syntax(line, format!("malformed number `{tok}`")))?;
        if !value.is_finite() {
            return Err(syntax(line, format!("non-finite value `{tok}`")));
        }
        return Ok(ParamValue::Literal(value));
    }
    if is_identifier(tok) {
        return Ok(ParamValue::Symbol(tok.to_string()));
    }
    Err(syntax(line, format!("expected a value or symbol, got `{tok}`")))
}

/// Interns net names case-insensitively while preserving original case.
struct NetTable {
    order: Vec<String>,
    lookup: IndexMap<String, usize>,
}

impl NetTable {
    fn new() -> Self {
        NetTable {
            order: Vec::new(),
            lookup: IndexMap::new(),
        }
    }

    fn intern(&mut self, name: &str) -> String {
        let key = name.to_ascii_lowercase();
        if let Some(&idx) = self.lookup.get(&key) {
            return self.order[idx].clone();
        }
        self.lookup.insert(key, self.order.len());
        self.order.push(name.to_string());
        name.to_string()
    }
}

/// Join `+` continuation lines; returns (first physical line number, text).
fn logical_lines(text: &str) -> Vec<(usize, String)> {
    let mut out: Vec<(usize, String)> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let trimmed = raw.trim();
        if let Some(rest) = trimmed.strip_prefix('+') {
            if let Some(last) = out.last_mut() {
                last.1.push(' ');
                last.1.push_str(rest.trim());
            }
            // A leading continuation with nothing to continue is ignored.
            continue;
        }
        out.push((lineno, trimmed.to_string()));
    }
    out
}

/// Parse a netlist and resolve rails with the default alias lists.
pub fn parse_netlist(text: &str) -> Result<Netlist, NetlistError> {
    let parsed = parse_netlist_raw(text)?;
    resolve_rails(parsed, DEFAULT_GROUND_ALIASES, DEFAULT_SUPPLY_ALIASES)
}

/// Parse without rail resolution.
pub fn parse_netlist_raw(text: &str) -> Result<Netlist, NetlistError> {
    let mut devices: Vec<Device> = Vec::new();
    let mut names: BTreeSet<String> = BTreeSet::new();
    let mut nets = NetTable::new();
    let mut title = String::new();

    for (lineno, line) in logical_lines(text) {
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('*') {
            if lineno == 1 && title.is_empty() {
                title = comment.trim().to_string();
            }
            continue;
        }
        if line.starts_with('.') {
            let mut parts = line.splitn(2, char::is_whitespace);
            let card = parts.next().unwrap_or("").to_ascii_lowercase();
            match card.as_str() {
                ".end" => break,
                ".title" => {
                    title = parts.next().unwrap_or("").trim().to_string();
                }
                ".subckt" | ".ends" => {
                    return Err(syntax(
                        lineno,
                        "subcircuits are not supported; flatten the netlist first",
                    ));
                }
                other => {
                    return Err(syntax(lineno, format!("unsupported directive `{other}`")));
                }
            }
            continue;
        }

        let tokens: Vec<&str> = line.split_whitespace().collect();
        let name = tokens[0].to_string();
        if name.len() < 2 {
            return Err(syntax(lineno, format!("element `{name}` is missing an id")));
        }
        let prefix = name.chars().next().unwrap().to_ascii_uppercase();
        let device = match prefix {
            'M' => parse_mos(&tokens, lineno, &mut nets)?,
            'R' | 'C' => parse_two_terminal(&tokens, lineno, &mut nets, prefix)?,
            'I' | 'V' => parse_source(&tokens, lineno, &mut nets, prefix)?,
            other => {
                return Err(NetlistError::UnknownDeviceCard {
                    line: lineno,
                    prefix: other,
                })
            }
        };
        if !names.insert(device.name.to_ascii_lowercase()) {
            return Err(NetlistError::DuplicateDevice(device.name));
        }
        devices.push(device);
    }

    Ok(Netlist {
        title,
        devices,
        nets: nets.order,
        gnd: None,
        vdd: None,
        warnings: Vec::new(),
    })
}

fn parse_mos(tokens: &[&str], line: usize, nets: &mut NetTable) -> Result<Device, NetlistError> {
    let param_start = tokens
        .iter()
        .position(|t| t.contains('='))
        .ok_or_else(|| syntax(line, "MOS card requires W= and L= parameters"))?;
    let head = &tokens[1..param_start];
    let (net_tokens, model) = match head.len() {
        4 => (&head[..3], head[3]),
        5 => (&head[..4], head[4]),
        _ => {
            return Err(syntax(
                line,
                "MOS card needs 3 or 4 nets followed by a model name",
            ))
        }
    };
    let kind = mos_kind(model).ok_or_else(|| {
        syntax(
            line,
            format!("cannot infer MOS polarity from model `{model}`"),
        )
    })?;
    let d = nets.intern(net_tokens[0]);
    let g = nets.intern(net_tokens[1]);
    let s = nets.intern(net_tokens[2]);
    let b = if net_tokens.len() == 4 {
        nets.intern(net_tokens[3])
    } else {
        // Common shorthand: bulk defaults to source.
        s.clone()
    };

    let mut params = IndexMap::new();
    for tok in &tokens[param_start..] {
        let (key, value) = tok
            .split_once('=')
            .ok_or_else(|| syntax(line, format!("expected key=value, got `{tok}`")))?;
        let key = key.to_ascii_uppercase();
        let value = parse_value(value, line)?;
        if matches!(key.as_str(), "W" | "L") {
            if let ParamValue::Literal(v) = value {
                if !(v.is_finite() && v > 0.0) {
                    return Err(syntax(line, format!("{key} must be positive, got {v}")));
                }
            }
        }
        if params.insert(key.clone(), value).is_some() {
            return Err(syntax(line, format!("duplicate parameter `{key}`")));
        }
    }
    for required in ["W", "L"] {
        if !params.contains_key(required) {
            return Err(syntax(line, format!("MOS card is missing {required}=")));
        }
    }

    Ok(Device {
        name: tokens[0].to_string(),
        kind,
        terminals: vec![
            (TerminalRole::Drain, d),
            (TerminalRole::Gate, g),
            (TerminalRole::Source, s),
            (TerminalRole::Bulk, b),
        ],
        params,
    })
}

/// Polarity from the first letter of the model name after optional digits.
fn mos_kind(model: &str) -> Option<DeviceKind> {
    let first = model.chars().find(|c| !c.is_ascii_digit())?;
    match first.to_ascii_lowercase() {
        'n' => Some(DeviceKind::Nmos),
        'p' => Some(DeviceKind::Pmos),
        _ => None,
    }
}

fn parse_two_terminal(
    tokens: &[&str],
    line: usize,
    nets: &mut NetTable,
    prefix: char,
) -> Result<Device, NetlistError> {
    if tokens.len() != 4 {
        return Err(syntax(
            line,
            format!("{prefix} card needs exactly 2 nets and a value"),
        ));
    }
    let kind = if prefix == 'R' {
        DeviceKind::Resistor
    } else {
        DeviceKind::Capacitor
    };
    let value = parse_value(tokens[3], line)?;
    if let ParamValue::Literal(v) = value {
        if !(v.is_finite() && v > 0.0) {
            return Err(syntax(
                line,
                format!("{prefix} value must be positive, got {v}"),
            ));
        }
    }
    let mut params = IndexMap::new();
    params.insert("VALUE".to_string(), value);
    Ok(Device {
        name: tokens[0].to_string(),
        kind,
        terminals: vec![
            (TerminalRole::Pos, nets.intern(tokens[1])),
            (TerminalRole::Neg, nets.intern(tokens[2])),
        ],
        params,
    })
}

fn parse_source(
    tokens: &[&str],
    line: usize,
    nets: &mut NetTable,
    prefix: char,
) -> Result<Device, NetlistError> {
    if tokens.len() != 4 {
        return Err(syntax(
            line,
            format!("{prefix} card needs exactly 2 nets and a value"),
        ));
    }
    let kind = if prefix == 'I' {
        DeviceKind::CurrentSource
    } else {
        DeviceKind::VoltageSource
    };
    let mut params = IndexMap::new();
    params.insert("VALUE".to_string(), parse_value(tokens[3], line)?);
    Ok(Device {
        name: tokens[0].to_string(),
        kind,
        terminals: vec![
            (TerminalRole::Pos, nets.intern(tokens[1])),
            (TerminalRole::Neg, nets.intern(tokens[2])),
        ],
        params,
    })
}

pub const DEFAULT_GROUND_ALIASES: &[&str] = &["0", "gnd", "vss"];
pub const DEFAULT_SUPPLY_ALIASES: &[&str] = &["vdd", "vdd!", "vcc"];

/// Tag the canonical ground and supply nets. Alias matching is
/// case-insensitive and follows the order of the alias lists. When no supply
/// alias matches, the positive net of the highest-valued voltage source is
/// used; if none exists either, the netlist carries a warning.
pub fn resolve_rails(
    mut netlist: Netlist,
    ground_aliases: &[&str],
    supply_aliases: &[&str],
) -> Result<Netlist, NetlistError> {
    if netlist.nets.is_empty() {
        return Ok(netlist);
    }
    let find = |aliases: &[&str]| -> Option<String> {
        for alias in aliases {
            let alias = alias.to_ascii_lowercase();
            if let Some(net) = netlist
                .nets
                .iter()
                .find(|n| n.to_ascii_lowercase() == alias)
            {
                return Some(net.clone());
            }
        }
        None
    };

    let gnd = find(ground_aliases)
        .ok_or_else(|| NetlistError::MissingGround(ground_aliases.join(", ")))?;

    let vdd = find(supply_aliases).or_else(|| {
        // Fall back to the highest-potential voltage-source positive net.
        let mut sources: Vec<(&Device, f64)> = netlist
            .devices
            .iter()
            .filter(|d| d.kind == DeviceKind::VoltageSource)
            .filter_map(|d| Some((d, d.params.get("VALUE")?.literal()?)))
            .collect();
        sources.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.0.name.cmp(&b.0.name))
        });
        sources
            .iter()
            .map(|(d, _)| d.net(TerminalRole::Pos).unwrap_or_default().to_string())
            .find(|net| *net != gnd)
    });
    if vdd.is_none() {
        netlist
            .warnings
            .push("no supply net identified (missing supply alias and voltage source)".into());
    }

    netlist.gnd = Some(gnd);
    netlist.vdd = vdd;
    Ok(netlist)
}

/// Serialize back into the card grammar. Literal values print in SI base
/// units; reparsing yields a structurally identical netlist.
pub fn serialize_netlist(netlist: &Netlist) -> String {
    let mut out = String::new();
    if !netlist.title.is_empty() {
        out.push_str(&format!("* {}\n", netlist.title));
    }
    for dev in &netlist.devices {
        match dev.kind {
            DeviceKind::Nmos | DeviceKind::Pmos => {
                let model = if dev.kind == DeviceKind::Nmos { "nch" } else { "pch" };
                let nets: Vec<&str> = [
                    TerminalRole::Drain,
                    TerminalRole::Gate,
                    TerminalRole::Source,
                    TerminalRole::Bulk,
                ]
                .iter()
                .map(|r| dev.net(*r).unwrap_or("?"))
                .collect();
                out.push_str(&format!("{} {} {model}", dev.name, nets.join(" ")));
                for (key, value) in &dev.params {
                    out.push_str(&format!(" {key}={}", value.render()));
                }
                out.push('\n');
            }
            _ => {
                let pos = dev.net(TerminalRole::Pos).unwrap_or("?");
                let neg = dev.net(TerminalRole::Neg).unwrap_or("?");
                let value = dev
                    .params
                    .get("VALUE")
                    .map(|v| v.render())
                    .unwrap_or_default();
                out.push_str(&format!("{} {pos} {neg} {value}\n", dev.name));
            }
        }
    }
    out.push_str(".end\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_single_mos_card() {
        let netlist = parse_netlist("M1 out in 0 0 nch W=2u L=180n").unwrap();
        assert_eq!(netlist.devices.len(), 1);
        let dev = &netlist.devices[0];
        assert_eq!(dev.kind, DeviceKind::Nmos);
        assert_eq!(dev.net(TerminalRole::Drain), Some("out"));
        assert_eq!(dev.net(TerminalRole::Gate), Some("in"));
        assert_eq!(dev.net(TerminalRole::Source), Some("0"));
        assert_eq!(dev.net(TerminalRole::Bulk), Some("0"));
        assert_eq!(dev.params["W"], ParamValue::Literal(2e-6));
        assert_eq!(dev.params["L"], ParamValue::Literal(1.8e-7));
    }

    #[test]
    fn parses_symbolic_parameters() {
        let netlist = parse_netlist("M1 out in tail 0 nch W=w1 L=l1").unwrap();
        let dev = &netlist.devices[0];
        assert_eq!(dev.params["W"], ParamValue::Symbol("w1".into()));
        assert_eq!(dev.params["L"], ParamValue::Symbol("l1".into()));
        assert_eq!(
            netlist.symbols().into_iter().collect::<Vec<_>>(),
            vec!["l1".to_string(), "w1".to_string()]
        );
    }

    #[test]
    fn rejects_duplicate_device() {
        let err = parse_netlist_raw("R1 a b 10k\nR1 b c 1k").unwrap_err();
        assert!(matches!(err, NetlistError::DuplicateDevice(name) if name == "R1"));
    }

    #[test]
    fn three_net_mos_defaults_bulk_to_source() {
        let netlist = parse_netlist("M1 out in 0 nch W=1u L=1u").unwrap();
        assert_eq!(netlist.devices[0].net(TerminalRole::Bulk), Some("0"));
    }

    #[test]
    fn suffixes_expand_exactly() {
        for (text, expected) in [
            ("2u", 2e-6),
            ("1meg", 1e6),
            ("180n", 180e-9),
            ("10k", 10e3),
            ("1.5p", 1.5e-12),
            ("3f", 3e-15),
            ("2m", 2e-3),
            ("4g", 4e9),
            ("1e6", 1e6),
            ("2E-6", 2e-6),
            (".5u", 0.5e-6),
        ] {
            match parse_value(text, 1).unwrap() {
                ParamValue::Literal(v) => assert_eq!(v, expected, "{text}"),
                other => panic!("{text} parsed to {other:?}"),
            }
        }
    }

    #[test]
    fn unknown_suffix_is_rejected() {
        assert!(parse_value("2x", 1).is_err());
        assert!(parse_value("--3", 1).is_err());
    }

    #[test]
    fn rejects_unknown_element_letter() {
        let err = parse_netlist_raw("L1 a b 1u").unwrap_err();
        assert!(matches!(err, NetlistError::UnknownDeviceCard { prefix: 'L', .. }));
    }

    #[test]
    fn rejects_subckt() {
        let err = parse_netlist_raw(".subckt amp in out").unwrap_err();
        assert!(err.to_string().contains("subcircuit"));
    }

    #[test]
    fn continuation_lines_join() {
        let netlist = parse_netlist("M1 out in 0 0 nch\n+ W=2u\n+ L=1u").unwrap();
        assert_eq!(netlist.devices[0].params["W"], ParamValue::Literal(2e-6));
    }

    #[test]
    fn rails_resolve_with_defaults() {
        let netlist = parse_netlist("M1 out in 0 0 nch W=1u L=1u\nR1 vdd out 10k").unwrap();
        assert_eq!(netlist.gnd.as_deref(), Some("0"));
        assert_eq!(netlist.vdd.as_deref(), Some("vdd"));
    }

    #[test]
    fn rails_resolve_case_insensitively() {
        let netlist = parse_netlist("R1 VDD! x 1k\nR2 x VSS 1k").unwrap();
        assert_eq!(netlist.gnd.as_deref(), Some("VSS"));
        assert_eq!(netlist.vdd.as_deref(), Some("VDD!"));
    }

    #[test]
    fn missing_ground_is_an_error() {
        let err = parse_netlist("R1 a b 1k").unwrap_err();
        assert!(matches!(err, NetlistError::MissingGround(_)));
    }

    #[test]
    fn supply_falls_back_to_highest_voltage_source() {
        let netlist = parse_netlist("V1 a 0 1.8\nV2 b 0 0.9\nR1 a b 1k").unwrap();
        assert_eq!(netlist.vdd.as_deref(), Some("a"));
    }

    #[test]
    fn supply_missing_is_warning_only() {
        let netlist = parse_netlist("I1 a 0 1u\nR1 a 0 1k").unwrap();
        assert_eq!(netlist.vdd, None);
        assert!(!netlist.warnings.is_empty());
    }

    #[test]
    fn net_matching_is_case_insensitive_preserving_first_case() {
        let netlist = parse_netlist("R1 Out 0 1k\nR2 OUT vdd 1k").unwrap();
        assert!(netlist.nets.contains(&"Out".to_string()));
        assert_eq!(netlist.devices[1].net(TerminalRole::Pos), Some("Out"));
    }

    #[test]
    fn serialize_round_trips() {
        let text = "* my amp\nM1 out in tail 0 nch W=w1 L=180n M=2\nR1 vdd out 10k\nC1 out 0 1p\nI1 vdd b 10u\nV1 vdd 0 1.8\n";
        let first = parse_netlist(text).unwrap();
        let second = parse_netlist(&serialize_netlist(&first)).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn every_terminal_net_is_registered() {
        let netlist = parse_netlist("M1 a b c d nch W=1u L=1u\nR1 c 0 1k\nR2 vdd a 1k").unwrap();
        for dev in &netlist.devices {
            for (_, net) in &dev.terminals {
                assert!(netlist.nets.contains(net));
            }
        }
    }

    #[test]
    fn title_from_leading_comment_and_directive() {
        let a = parse_netlist_raw("* hello\nR1 a 0 1k").unwrap();
        assert_eq!(a.title, "hello");
        let b = parse_netlist_raw(".title world\nR1 a 0 1k").unwrap();
        assert_eq!(b.title, "world");
    }

    #[test]
    fn empty_netlist_parses_without_rails() {
        let netlist = parse_netlist("").unwrap();
        assert!(netlist.devices.is_empty());
        assert_eq!(netlist.gnd, None);
    }
}
