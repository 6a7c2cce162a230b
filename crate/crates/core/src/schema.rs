//! Declarative schema for signalling event records.
//!
//! A [`SchemaRegistry`] names every field a record may carry, its kind
//! (enumerated code vs numeric measurement), which interface plane it
//! belongs to, and the derived fields built by concatenating pairs of
//! control-plane codes. The shipped [`default_schema`] covers 30 base
//! fields (6 control plane, 24 user plane) plus 3 derived pairs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Separator inserted between the two source codes of a derived field so
/// that e.g. ("1","0") and ("10","") cannot collide. Reports strip it.
pub const CODE_SEPARATOR: char = '|';

#[derive(Debug, Error, PartialEq)]
pub enum SchemaError {
    #[error("unknown field `{0}`")]
    UnknownField(String),
    #[error("code `{code}` is outside the domain of `{field}`")]
    DomainViolation { field: String, code: String },
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FieldKind {
    Enumerated,
    Numeric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Plane {
    #[serde(rename = "cp")]
    ControlPlane,
    #[serde(rename = "up")]
    UserPlane,
}

impl Plane {
    pub fn as_str(self) -> &'static str {
        match self {
            Plane::ControlPlane => "cp",
            Plane::UserPlane => "up",
        }
    }
}

impl std::fmt::Display for Plane {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One base field of a record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    pub kind: FieldKind,
    pub plane: Plane,
    /// Ordered admissible codes. Empty for numeric fields.
    #[serde(default)]
    pub domain: Vec<String>,
    /// Measurement unit. None for enumerated fields.
    #[serde(default)]
    pub unit: Option<String>,
}

impl FieldSpec {
    pub fn enumerated(name: &str, plane: Plane, domain: &[&str]) -> Self {
        FieldSpec {
            name: name.to_string(),
            kind: FieldKind::Enumerated,
            plane,
            domain: domain.iter().map(|c| c.to_string()).collect(),
            unit: None,
        }
    }

    pub fn numeric(name: &str, plane: Plane, unit: &str) -> Self {
        FieldSpec {
            name: name.to_string(),
            kind: FieldKind::Numeric,
            plane,
            domain: Vec::new(),
            unit: Some(unit.to_string()),
        }
    }

    /// Position of `code` in the domain, if admissible.
    pub fn code_index(&self, code: &str) -> Option<u16> {
        self.domain.iter().position(|c| c == code).map(|i| i as u16)
    }

    /// Whether the unit demands non-negative values (traffic, counts, durations).
    pub fn non_negative(&self) -> bool {
        matches!(self.unit.as_deref(), Some("bytes") | Some("count") | Some("ms"))
    }
}

/// A field derived by concatenating two enumerated control-plane codes
/// with sequential association, e.g. procedure type "1" + status "0"
/// renders as "10" (attach succeeded).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivedFieldSpec {
    pub name: String,
    pub source_a: String,
    pub source_b: String,
    /// Ordered admissible (code_a, code_b) pairs.
    pub domain: Vec<(String, String)>,
}

impl DerivedFieldSpec {
    /// Concatenate two source codes into the separated combined code.
    pub fn combined_code(&self, va: &str, vb: &str) -> Result<String, SchemaError> {
        match self.pair_index(va, vb) {
            Some(_) => Ok(format!("{va}{CODE_SEPARATOR}{vb}")),
            None => Err(SchemaError::DomainViolation {
                field: self.name.clone(),
                code: format!("({va},{vb})"),
            }),
        }
    }

    /// Invert [`Self::combined_code`].
    pub fn decode(&self, code: &str) -> Result<(String, String), SchemaError> {
        let (a, b) = code.split_once(CODE_SEPARATOR).ok_or_else(|| SchemaError::DomainViolation {
            field: self.name.clone(),
            code: code.to_string(),
        })?;
        self.pair_index(a, b).ok_or_else(|| SchemaError::DomainViolation {
            field: self.name.clone(),
            code: code.to_string(),
        })?;
        Ok((a.to_string(), b.to_string()))
    }

    pub fn pair_index(&self, va: &str, vb: &str) -> Option<u16> {
        self.domain.iter().position(|(a, b)| a == va && b == vb).map(|i| i as u16)
    }

    /// Combined code at a given domain index.
    pub fn code_at(&self, index: u16) -> String {
        let (a, b) = &self.domain[index as usize];
        format!("{a}{CODE_SEPARATOR}{b}")
    }
}

/// Render a stored code for reports: the internal separator is stripped so
/// the combined attach-success code prints as "10".
pub fn display_code(code: &str) -> String {
    code.chars().filter(|c| *c != CODE_SEPARATOR).collect()
}

/// Identifies a field inside one registry: indices `0..base.len()` are base
/// fields, the rest are derived fields in order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FieldId(pub u16);

/// Result of looking a name up in the registry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FieldRef<'a> {
    Base(&'a FieldSpec),
    Derived(&'a DerivedFieldSpec),
}

impl FieldRef<'_> {
    pub fn name(&self) -> &str {
        match self {
            FieldRef::Base(s) => &s.name,
            FieldRef::Derived(s) => &s.name,
        }
    }
}

/// The full field catalogue: immutable after construction and safe to share.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaRegistry {
    pub version: String,
    pub base: Vec<FieldSpec>,
    pub derived: Vec<DerivedFieldSpec>,
}

impl SchemaRegistry {
    pub fn new(
        version: &str,
        base: Vec<FieldSpec>,
        derived: Vec<DerivedFieldSpec>,
    ) -> Result<Self, SchemaError> {
        let reg = SchemaRegistry { version: version.to_string(), base, derived };
        reg.validate()?;
        Ok(reg)
    }

    /// Check every registry invariant; called on construction and after
    /// deserializing an external schema file.
    pub fn validate(&self) -> Result<(), SchemaError> {
        let mut names: Vec<&str> = self
            .base
            .iter()
            .map(|f| f.name.as_str())
            .chain(self.derived.iter().map(|d| d.name.as_str()))
            .collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(SchemaError::InvalidSchema("duplicate field name".into()));
        }
        for f in &self.base {
            match f.kind {
                FieldKind::Enumerated => {
                    if f.domain.is_empty() {
                        return Err(SchemaError::InvalidSchema(format!(
                            "enumerated field `{}` has an empty domain",
                            f.name
                        )));
                    }
                    let mut codes = f.domain.clone();
                    codes.sort_unstable();
                    if codes.windows(2).any(|w| w[0] == w[1]) {
                        return Err(SchemaError::InvalidSchema(format!(
                            "enumerated field `{}` has duplicate codes",
                            f.name
                        )));
                    }
                }
                FieldKind::Numeric => {
                    if !f.domain.is_empty() {
                        return Err(SchemaError::InvalidSchema(format!(
                            "numeric field `{}` must have an empty domain",
                            f.name
                        )));
                    }
                }
            }
        }
        for d in &self.derived {
            let a = self.base_field_by_name(&d.source_a)?;
            let b = self.base_field_by_name(&d.source_b)?;
            if a.kind != FieldKind::Enumerated || b.kind != FieldKind::Enumerated {
                return Err(SchemaError::InvalidSchema(format!(
                    "derived field `{}` sources must be enumerated",
                    d.name
                )));
            }
            if a.plane != b.plane {
                return Err(SchemaError::InvalidSchema(format!(
                    "derived field `{}` sources must share a plane",
                    d.name
                )));
            }
            for (va, vb) in &d.domain {
                if a.code_index(va).is_none() || b.code_index(vb).is_none() {
                    return Err(SchemaError::InvalidSchema(format!(
                        "derived field `{}` pair ({va},{vb}) not covered by source domains",
                        d.name
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn lookup(&self, name: &str) -> Result<FieldRef<'_>, SchemaError> {
        if let Some(f) = self.base.iter().find(|f| f.name == name) {
            return Ok(FieldRef::Base(f));
        }
        if let Some(d) = self.derived.iter().find(|d| d.name == name) {
            return Ok(FieldRef::Derived(d));
        }
        Err(SchemaError::UnknownField(name.to_string()))
    }

    pub fn field_id(&self, name: &str) -> Option<FieldId> {
        if let Some(i) = self.base.iter().position(|f| f.name == name) {
            return Some(FieldId(i as u16));
        }
        self.derived
            .iter()
            .position(|d| d.name == name)
            .map(|i| FieldId((self.base.len() + i) as u16))
    }

    pub fn field_count(&self) -> usize {
        self.base.len() + self.derived.len()
    }

    pub fn field_ref(&self, id: FieldId) -> FieldRef<'_> {
        let idx = id.0 as usize;
        if idx < self.base.len() {
            FieldRef::Base(&self.base[idx])
        } else {
            FieldRef::Derived(&self.derived[idx - self.base.len()])
        }
    }

    pub fn base_field(&self, id: FieldId) -> Option<&FieldSpec> {
        self.base.get(id.0 as usize)
    }

    pub fn derived_field(&self, id: FieldId) -> Option<&DerivedFieldSpec> {
        (id.0 as usize).checked_sub(self.base.len()).and_then(|i| self.derived.get(i))
    }

    /// Base fields of one plane, in registry order.
    pub fn plane_fields(&self, plane: Plane) -> impl Iterator<Item = (FieldId, &FieldSpec)> {
        self.base
            .iter()
            .enumerate()
            .filter(move |(_, f)| f.plane == plane)
            .map(|(i, f)| (FieldId(i as u16), f))
    }

    /// Derived fields of one plane (the plane of their sources).
    pub fn plane_derived(&self, plane: Plane) -> impl Iterator<Item = (FieldId, &DerivedFieldSpec)> {
        let base_len = self.base.len();
        self.derived
            .iter()
            .enumerate()
            .filter(move |(_, d)| {
                self.base
                    .iter()
                    .find(|f| f.name == d.source_a)
                    .map(|f| f.plane == plane)
                    .unwrap_or(false)
            })
            .map(move |(i, d)| (FieldId((base_len + i) as u16), d))
    }

    fn base_field_by_name(&self, name: &str) -> Result<&FieldSpec, SchemaError> {
        self.base
            .iter()
            .find(|f| f.name == name)
            .ok_or_else(|| SchemaError::UnknownField(name.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, SchemaError> {
        let reg: SchemaRegistry =
            serde_json::from_str(s).map_err(|e| SchemaError::InvalidSchema(e.to_string()))?;
        reg.validate()?;
        Ok(reg)
    }
}

/// One signalling or user-plane event before cleaning. Values are partial:
/// a field the probe did not fill is simply absent.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub user_id: String,
    pub timestamp_ms: i64,
    pub plane: Plane,
    /// Sorted by field id; at most one entry per field.
    pub values: Vec<(FieldId, FieldValue)>,
}

/// A single cell value.
#[derive(Debug, Clone, PartialEq)]
pub enum FieldValue {
    /// Index into the field's enumerated domain.
    Code(u16),
    /// Enumerated cell whose text is not in the domain; kept verbatim so the
    /// consistency check can report it.
    OutOfDomain(Box<str>),
    Number(f64),
}

impl RawRecord {
    pub fn new(user_id: &str, timestamp_ms: i64, plane: Plane) -> Self {
        RawRecord { user_id: user_id.to_string(), timestamp_ms, plane, values: Vec::new() }
    }

    pub fn set(&mut self, id: FieldId, value: FieldValue) {
        match self.values.binary_search_by_key(&id, |(i, _)| *i) {
            Ok(pos) => self.values[pos].1 = value,
            Err(pos) => self.values.insert(pos, (id, value)),
        }
    }

    pub fn value(&self, id: FieldId) -> Option<&FieldValue> {
        self.values
            .binary_search_by_key(&id, |(i, _)| *i)
            .ok()
            .map(|pos| &self.values[pos].1)
    }
}

/// A record that passed cleaning: enumerated values are in-domain, numeric
/// values are present, finite and sign-checked, derived fields are filled
/// whenever both sources are present.
#[derive(Debug, Clone, PartialEq)]
pub struct CleanRecord {
    pub user_id: String,
    pub timestamp_ms: i64,
    pub plane: Plane,
    pub values: Vec<(FieldId, FieldValue)>,
}

impl CleanRecord {
    pub fn value(&self, id: FieldId) -> Option<&FieldValue> {
        self.values
            .binary_search_by_key(&id, |(i, _)| *i)
            .ok()
            .map(|pos| &self.values[pos].1)
    }
}

/// The shipped 30-field schema.
///
/// Control plane: six enumerated procedure fields. User plane: three
/// enumerated application/protocol fields and 21 numeric counters and
/// latencies. Three derived control-plane pairs concatenate the procedure
/// type with its status and causes; their combined domains one-hot expand
/// to 33 codes.
pub fn default_schema() -> SchemaRegistry {
    use Plane::{ControlPlane as CP, UserPlane as UP};

    let base = vec![
        // Control plane: S1 interface procedure events.
        FieldSpec::enumerated("procedure_type", CP, &["1", "2", "3"]),
        FieldSpec::enumerated("procedure_status", CP, &["0", "1", "255"]),
        FieldSpec::enumerated("request_cause", CP, &["1", "2", "3", "4"]),
        FieldSpec::enumerated("failure_cause", CP, &["0", "1", "2", "3"]),
        FieldSpec::enumerated("paging_result", CP, &["0", "1"]),
        FieldSpec::enumerated("erab_release_flag", CP, &["0", "1"]),
        // User plane: application classification.
        FieldSpec::enumerated("app_type_code", UP, &["1", "2", "3", "4", "5", "6"]),
        FieldSpec::enumerated(
            "app_type_whole",
            UP,
            &["10", "11", "12", "13", "14", "15", "16", "17"],
        ),
        FieldSpec::enumerated("l4_protocol", UP, &["1", "2"]),
        // User plane: traffic volume.
        FieldSpec::numeric("upload_traffic", UP, "bytes"),
        FieldSpec::numeric("download_traffic", UP, "bytes"),
        FieldSpec::numeric("window_size", UP, "bytes"),
        // User plane: TCP behaviour.
        FieldSpec::numeric("tcp_link_ack_time", UP, "ms"),
        FieldSpec::numeric("tcp_syn_num", UP, "count"),
        FieldSpec::numeric("tcp_retrans_num", UP, "count"),
        FieldSpec::numeric("tcp_rst_num", UP, "count"),
        // User plane: packet counters.
        FieldSpec::numeric("upload_ip_packets", UP, "count"),
        FieldSpec::numeric("download_ip_packets", UP, "count"),
        FieldSpec::numeric("upload_retrans_packets", UP, "count"),
        FieldSpec::numeric("download_retrans_packets", UP, "count"),
        FieldSpec::numeric("disorder_upload_packets", UP, "count"),
        FieldSpec::numeric("disorder_download_packets", UP, "count"),
        // User plane: transaction latencies.
        FieldSpec::numeric("spendtime", UP, "ms"),
        FieldSpec::numeric("first_request_delay", UP, "ms"),
        FieldSpec::numeric("first_response_delay", UP, "ms"),
        FieldSpec::numeric("last_packet_delay", UP, "ms"),
        FieldSpec::numeric("dns_response_delay", UP, "ms"),
        FieldSpec::numeric("session_duration", UP, "ms"),
        // User plane: HTTP transaction counters.
        FieldSpec::numeric("get_request_num", UP, "count"),
        FieldSpec::numeric("get_response_num", UP, "count"),
    ];

    let cross = |avals: &[&str], bvals: &[&str]| -> Vec<(String, String)> {
        avals
            .iter()
            .flat_map(|a| bvals.iter().map(move |b| (a.to_string(), b.to_string())))
            .collect()
    };

    let derived = vec![
        DerivedFieldSpec {
            name: "procedure_type_x_procedure_status".into(),
            source_a: "procedure_type".into(),
            source_b: "procedure_status".into(),
            domain: cross(&["1", "2", "3"], &["0", "1", "255"]),
        },
        DerivedFieldSpec {
            name: "procedure_type_x_request_cause".into(),
            source_a: "procedure_type".into(),
            source_b: "request_cause".into(),
            domain: cross(&["1", "2", "3"], &["1", "2", "3", "4"]),
        },
        DerivedFieldSpec {
            name: "procedure_type_x_failure_cause".into(),
            source_a: "procedure_type".into(),
            source_b: "failure_cause".into(),
            domain: cross(&["1", "2", "3"], &["0", "1", "2", "3"]),
        },
    ];

    SchemaRegistry::new("default-v1", base, derived).expect("default schema is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schema_counts() {
        let reg = default_schema();
        assert_eq!(reg.base.len(), 30);
        let enumerated = reg.base.iter().filter(|f| f.kind == FieldKind::Enumerated).count();
        let numeric = reg.base.iter().filter(|f| f.kind == FieldKind::Numeric).count();
        assert_eq!(enumerated, 9);
        assert_eq!(numeric, 21);
        let cp = reg.base.iter().filter(|f| f.plane == Plane::ControlPlane).count();
        let up = reg.base.iter().filter(|f| f.plane == Plane::UserPlane).count();
        assert_eq!(cp, 6);
        assert_eq!(up, 24);
    }

    #[test]
    fn derived_pairs_expand_to_33_codes() {
        let reg = default_schema();
        assert_eq!(reg.derived.len(), 3);
        assert!(reg.derived.iter().any(|d| d.name == "procedure_type_x_procedure_status"));
        let total: usize = reg.derived.iter().map(|d| d.domain.len()).sum();
        assert_eq!(total, 33);
    }

    #[test]
    fn default_schema_is_deterministic() {
        assert_eq!(default_schema(), default_schema());
    }

    #[test]
    fn lookup_known_fields() {
        let reg = default_schema();
        match reg.lookup("l4_protocol").unwrap() {
            FieldRef::Base(f) => {
                assert_eq!(f.kind, FieldKind::Enumerated);
                assert!(f.domain.contains(&"1".to_string()));
                assert!(f.domain.contains(&"2".to_string()));
            }
            _ => panic!("expected base field"),
        }
        match reg.lookup("upload_traffic").unwrap() {
            FieldRef::Base(f) => {
                assert_eq!(f.kind, FieldKind::Numeric);
                assert_eq!(f.unit.as_deref(), Some("bytes"));
            }
            _ => panic!("expected base field"),
        }
        assert_eq!(
            reg.lookup("nonexistent"),
            Err(SchemaError::UnknownField("nonexistent".into()))
        );
    }

    #[test]
    fn combined_code_uses_separator_and_renders_plain() {
        let reg = default_schema();
        let d = &reg.derived[0];
        let code = d.combined_code("1", "0").unwrap();
        assert_eq!(code, "1|0");
        assert_eq!(display_code(&code), "10");
    }

    #[test]
    fn combined_code_rejects_out_of_domain() {
        let reg = default_schema();
        let d = &reg.derived[0];
        assert!(matches!(
            d.combined_code("9", "0"),
            Err(SchemaError::DomainViolation { .. })
        ));
    }

    #[test]
    fn combined_code_round_trips_over_every_domain_pair() {
        let reg = default_schema();
        for d in &reg.derived {
            let mut seen = std::collections::HashSet::new();
            for (a, b) in &d.domain {
                let code = d.combined_code(a, b).unwrap();
                assert!(seen.insert(code.clone()), "combined codes must be injective");
                let (ra, rb) = d.decode(&code).unwrap();
                assert_eq!((&ra, &rb), (a, b));
            }
        }
    }

    #[test]
    fn schema_json_round_trip() {
        let reg = default_schema();
        let json = reg.to_json();
        let back = SchemaRegistry::from_json(&json).unwrap();
        assert_eq!(reg, back);
    }

    #[test]
    fn validate_rejects_duplicate_names() {
        let mut reg = default_schema();
        reg.base[1].name = "procedure_type".into();
        assert!(reg.validate().is_err());
    }

    #[test]
    fn validate_rejects_numeric_with_domain() {
        let mut reg = default_schema();
        reg.base[9].domain = vec!["1".into()];
        assert!(reg.validate().is_err());
    }

    #[test]
    fn field_ids_cover_base_and_derived() {
        let reg = default_schema();
        let id = reg.field_id("procedure_type").unwrap();
        assert_eq!(id, FieldId(0));
        let did = reg.field_id("procedure_type_x_procedure_status").unwrap();
        assert_eq!(did.0 as usize, reg.base.len());
        assert!(reg.derived_field(did).is_some());
        assert!(reg.field_id("nope").is_none());
    }

    #[test]
    fn record_set_and_get() {
        let reg = default_schema();
        let mut r = RawRecord::new("u1", 1000, Plane::ControlPlane);
        let id = reg.field_id("procedure_type").unwrap();
        r.set(id, FieldValue::Code(0));
        assert_eq!(r.value(id), Some(&FieldValue::Code(0)));
        r.set(id, FieldValue::Code(1));
        assert_eq!(r.value(id), Some(&FieldValue::Code(1)));
        assert_eq!(r.values.len(), 1);
    }
}
