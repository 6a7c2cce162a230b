//! Deterministic labelled CP/UP stream generator: normal users plus a
//! configured share of users degraded during an event interval, emulating a
//! waveguide-interference hotspot at desk scale.
//!
//! Degradation shows up as elevated procedure failures and timeouts, whole
//! windows of control-plane silence, upward-shifted TCP latencies and
//! reduced upload volume; outside the event interval affected users are
//! indistinguishable from normal ones. Everything is drawn from per-user
//! substreams of the master seed, so output is a pure function of the
//! config and independent of generation order.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{self, IngestError};
use crate::schema::{default_schema, FieldId, FieldValue, Plane, RawRecord, SchemaRegistry};
use crate::util::derive_seed;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_users: usize,
    /// Exactly ⌊affected_fraction · n_users⌋ users get label 1.
    pub affected_fraction: f64,
    pub n_windows: usize,
    pub window_secs: u32,
    pub start_ms: i64,
    /// Affected users degrade in windows [event_start_window, event_end_window).
    pub event_start_window: usize,
    pub event_end_window: usize,
    pub cp_events_per_window: f64,
    pub up_sessions_per_window: f64,
    pub failure_probability: f64,
    pub affected_failure_probability: f64,
    pub timeout_probability: f64,
    pub affected_timeout_probability: f64,
    /// Chance that an affected user emits no CP records at all in an event
    /// window.
    pub cp_silence_probability: f64,
    pub ack_time_location_ms: f64,
    pub affected_ack_time_shift_ms: f64,
    pub spendtime_location_ms: f64,
    pub affected_spendtime_shift_ms: f64,
    pub latency_scale_ms: f64,
    pub upload_traffic_mean_bytes: f64,
    /// Multiplier (< 1) on upload volume for degraded windows.
    pub affected_upload_factor: f64,
    /// Dirty mode: rate of out-of-domain codes, negative traffic values and
    /// duplicated records, for exercising the cleaning stage.
    pub dirty_invalid_rate: f64,
    pub dirty_erroneous_rate: f64,
    pub dirty_duplicate_rate: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_users: 200,
            affected_fraction: 0.08,
            n_windows: 12,
            window_secs: 300,
            start_ms: 0,
            event_start_window: 4,
            event_end_window: 12,
            cp_events_per_window: 6.0,
            up_sessions_per_window: 4.0,
            failure_probability: 0.05,
            affected_failure_probability: 0.45,
            timeout_probability: 0.04,
            affected_timeout_probability: 0.40,
            cp_silence_probability: 0.60,
            ack_time_location_ms: 120.0,
            affected_ack_time_shift_ms: 200.0,
            spendtime_location_ms: 400.0,
            affected_spendtime_shift_ms: 600.0,
            latency_scale_ms: 40.0,
            upload_traffic_mean_bytes: 200_000.0,
            affected_upload_factor: 0.35,
            dirty_invalid_rate: 0.0,
            dirty_erroneous_rate: 0.0,
            dirty_duplicate_rate: 0.0,
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let err = |m: String| Err(SynthError::InvalidConfig(m));
        if self.n_users == 0 || self.n_windows == 0 || self.window_secs == 0 {
            return err("n_users, n_windows and window_secs must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.affected_fraction) {
            return err(format!("affected_fraction {} outside [0, 1]", self.affected_fraction));
        }
        if self.event_start_window >= self.event_end_window
            || self.event_end_window > self.n_windows
        {
            return err("event interval must be a non-empty range of window indices".into());
        }
        for (name, p) in [
            ("failure_probability", self.failure_probability),
            ("affected_failure_probability", self.affected_failure_probability),
            ("timeout_probability", self.timeout_probability),
            ("affected_timeout_probability", self.affected_timeout_probability),
            ("cp_silence_probability", self.cp_silence_probability),
            ("dirty_invalid_rate", self.dirty_invalid_rate),
            ("dirty_erroneous_rate", self.dirty_erroneous_rate),
            ("dirty_duplicate_rate", self.dirty_duplicate_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return err(format!("{name} {p} outside [0, 1]"));
            }
        }
        if !(self.cp_events_per_window > 0.0 && self.up_sessions_per_window > 0.0) {
            return err("event and session rates must be positive".into());
        }
        if !(self.ack_time_location_ms > 0.0 && self.spendtime_location_ms > 0.0) {
            return err("latency locations must be positive".into());
        }
        if !(self.affected_ack_time_shift_ms > 0.0 && self.affected_spendtime_shift_ms > 0.0) {
            return err("affected latency locations must exceed normal ones".into());
        }
        if self.latency_scale_ms <= 0.0 {
            return err("latency_scale_ms must be positive".into());
        }
        if self.upload_traffic_mean_bytes <= 0.0 {
            return err("upload_traffic_mean_bytes must be positive".into());
        }
        if !(self.affected_upload_factor > 0.0 && self.affected_upload_factor <= 1.0) {
            return err("affected_upload_factor must lie in (0, 1]".into());
        }
        Ok(())
    }
}

/// Named configurations: `separable` (strong shifts, high end-to-end F1),
/// `hard` (overlapping distributions), `paper-scale` (10093 users × 25
/// windows = 252,325 user-window rows, for performance testing).
pub fn preset(name: &str) -> Result<SynthConfig, SynthError> {
    match name {
        // Degradation spans every window, led by CP silence; per-window
        // labels are fully consistent with behaviour.
        "separable" => Ok(SynthConfig {
            n_users: 1000,
            event_start_window: 0,
            cp_silence_probability: 0.90,
            affected_ack_time_shift_ms: 40.0,
            affected_spendtime_shift_ms: 60.0,
            affected_upload_factor: 0.80,
            ..SynthConfig::default()
        }),
        // Faint shifts against the same noise floor: populations overlap
        // heavily, so the positive-class weight actually matters.
        "hard" => Ok(SynthConfig {
            n_users: 2000,
            event_start_window: 0,
            affected_failure_probability: 0.06,
            affected_timeout_probability: 0.048,
            cp_silence_probability: 0.02,
            affected_ack_time_shift_ms: 4.0,
            affected_spendtime_shift_ms: 7.0,
            affected_upload_factor: 0.99,
            ..SynthConfig::default()
        }),
        // 10093 users × 25 windows = 252,325 user-window rows.
        "paper-scale" => Ok(SynthConfig {
            n_users: 10_093,
            n_windows: 25,
            event_start_window: 10,
            event_end_window: 25,
            ..SynthConfig::default()
        }),
        other => Err(SynthError::UnknownPreset(other.to_string())),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub cp: Vec<RawRecord>,
    pub up: Vec<RawRecord>,
    /// user_id → 1 for affected, 0 otherwise; covers every generated user.
    pub labels: BTreeMap<String, u8>,
}

/// Field ids and semantic code indexes of the shipped schema, resolved once.
struct Fields {
    procedure_type: FieldId,
    n_procedure_type: u16,
    procedure_status: FieldId,
    status_progress: u16,
    status_ok: u16,
    status_fail: u16,
    request_cause: FieldId,
    n_request_cause: u16,
    failure_cause: FieldId,
    n_failure_cause: u16,
    paging_result: FieldId,
    erab_release_flag: FieldId,
    app_type_code: FieldId,
    n_app_type_code: u16,
    app_type_whole: FieldId,
    n_app_type_whole: u16,
    l4_protocol: FieldId,
    upload_traffic: FieldId,
    download_traffic: FieldId,
    window_size: FieldId,
    tcp_link_ack_time: FieldId,
    tcp_syn_num: FieldId,
    tcp_retrans_num: FieldId,
    tcp_rst_num: FieldId,
    upload_ip_packets: FieldId,
    download_ip_packets: FieldId,
    upload_retrans_packets: FieldId,
    download_retrans_packets: FieldId,
    disorder_upload_packets: FieldId,
    disorder_download_packets: FieldId,
    spendtime: FieldId,
    first_request_delay: FieldId,
    first_response_delay: FieldId,
    last_packet_delay: FieldId,
    dns_response_delay: FieldId,
    session_duration: FieldId,
    get_request_num: FieldId,
    get_response_num: FieldId,
}

impl Fields {
    fn resolve(reg: &SchemaRegistry) -> Fields {
        let id = |name: &str| reg.field_id(name).expect("shipped schema field");
        let arity = |name: &str| {
            reg.base_field(id(name)).expect("base field").domain.len() as u16
        };
        let code = |name: &str, c: &str| {
            reg.base_field(id(name)).expect("base field").code_index(c).expect("domain code")
        };
        Fields {
            procedure_type: id("procedure_type"),
            n_procedure_type: arity("procedure_type"),
            procedure_status: id("procedure_status"),
            status_progress: code("procedure_status", "0"),
            status_ok: code("procedure_status", "1"),
            status_fail: code("procedure_status", "255"),
            request_cause: id("request_cause"),
            n_request_cause: arity("request_cause"),
            failure_cause: id("failure_cause"),
            n_failure_cause: arity("failure_cause"),
            paging_result: id("paging_result"),
            erab_release_flag: id("erab_release_flag"),
            app_type_code: id("app_type_code"),
            n_app_type_code: arity("app_type_code"),
            app_type_whole: id("app_type_whole"),
            n_app_type_whole: arity("app_type_whole"),
            l4_protocol: id("l4_protocol"),
            upload_traffic: id("upload_traffic"),
            download_traffic: id("download_traffic"),
            window_size: id("window_size"),
            tcp_link_ack_time: id("tcp_link_ack_time"),
            tcp_syn_num: id("tcp_syn_num"),
            tcp_retrans_num: id("tcp_retrans_num"),
            tcp_rst_num: id("tcp_rst_num"),
            upload_ip_packets: id("upload_ip_packets"),
            download_ip_packets: id("download_ip_packets"),
            upload_retrans_packets: id("upload_retrans_packets"),
            download_retrans_packets: id("download_retrans_packets"),
            disorder_upload_packets: id("disorder_upload_packets"),
            disorder_download_packets: id("disorder_download_packets"),
            spendtime: id("spendtime"),
            first_request_delay: id("first_request_delay"),
            first_response_delay: id("first_response_delay"),
            last_packet_delay: id("last_packet_delay"),
            dns_response_delay: id("dns_response_delay"),
            session_duration: id("session_duration"),
            get_request_num: id("get_request_num"),
            get_response_num: id("get_response_num"),
        }
    }
}

fn poisson(rng: &mut ChaCha8Rng, rate: f64) -> u64 {
    Poisson::new(rate).expect("positive rate").sample(rng) as u64
}

fn normal(rng: &mut ChaCha8Rng, loc: f64, scale: f64) -> f64 {
    Normal::new(loc, scale).expect("positive scale").sample(rng)
}

pub fn generate(config: &SynthConfig) -> Result<LabeledDataset, SynthError> {
    config.validate()?;
    let reg = default_schema();
    let f = Fields::resolve(&reg);
    let window_ms = config.window_secs as i64 * 1000;

    let n_affected = (config.affected_fraction * config.n_users as f64).floor() as usize;
    let mut master = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "affected", 0));
    let affected: BTreeSet<usize> =
        rand::seq::index::sample(&mut master, config.n_users, n_affected).iter().collect();

    let mut cp = Vec::new();
    let mut up = Vec::new();
    let mut labels = BTreeMap::new();
    for u in 0..config.n_users {
        let user_id = format!("4600{:011}", u as u64);
        let is_affected = affected.contains(&u);
        labels.insert(user_id.clone(), is_affected as u8);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "user", u as u64));
        for w in 0..config.n_windows {
            let window_start = config.start_ms + w as i64 * window_ms;
            let degraded =
                is_affected && w >= config.event_start_window && w < config.event_end_window;

            let silent = degraded && rng.random_bool(config.cp_silence_probability);
            if !silent {
                for _ in 0..poisson(&mut rng, config.cp_events_per_window) {
                    let ts = window_start + rng.random_range(0..window_ms);
                    cp.push(cp_record(&user_id, ts, &f, config, degraded, &mut rng));
                }
            }
            for _ in 0..poisson(&mut rng, config.up_sessions_per_window) {
                let ts = window_start + rng.random_range(0..window_ms);
                up.push(up_record(&user_id, ts, &f, config, degraded, &mut rng));
            }
        }
    }
    dirty_inject(&mut cp, &f, config, Plane::ControlPlane);
    dirty_inject(&mut up, &f, config, Plane::UserPlane);
    cp.sort_by(|a, b| (a.timestamp_ms, &a.user_id).cmp(&(b.timestamp_ms, &b.user_id)));
    up.sort_by(|a, b| (a.timestamp_ms, &a.user_id).cmp(&(b.timestamp_ms, &b.user_id)));
    Ok(LabeledDataset { cp, up, labels })
}

fn cp_record(
    user_id: &str,
    ts: i64,
    f: &Fields,
    config: &SynthConfig,
    degraded: bool,
    rng: &mut ChaCha8Rng,
) -> RawRecord {
    let p_fail = if degraded { config.affected_failure_probability } else { config.failure_probability };
    let p_timeout =
        if degraded { config.affected_timeout_probability } else { config.timeout_probability };
    let mut r = RawRecord::new(user_id, ts, Plane::ControlPlane);
    r.set(f.procedure_type, FieldValue::Code(rng.random_range(0..f.n_procedure_type)));
    let failed = rng.random_bool(p_fail);
    let status = if failed {
        f.status_fail
    } else if rng.random_bool(0.1) {
        f.status_progress
    } else {
        f.status_ok
    };
    r.set(f.procedure_status, FieldValue::Code(status));
    r.set(f.request_cause, FieldValue::Code(rng.random_range(0..f.n_request_cause)));
    // failure_cause code 0 means "no failure"
    let cause =
        if failed { rng.random_range(1..f.n_failure_cause) } else { 0 };
    r.set(f.failure_cause, FieldValue::Code(cause));
    // paging_result domain is ["0","1"]: 0 = failed page, 1 = answered
    r.set(f.paging_result, FieldValue::Code(!rng.random_bool(p_timeout) as u16));
    // abnormal E-RAB release accompanies degradation
    r.set(f.erab_release_flag, FieldValue::Code(rng.random_bool(p_fail) as u16));
    r
}

fn up_record(
    user_id: &str,
    ts: i64,
    f: &Fields,
    config: &SynthConfig,
    degraded: bool,
    rng: &mut ChaCha8Rng,
) -> RawRecord {
    let mut r = RawRecord::new(user_id, ts, Plane::UserPlane);
    r.set(f.app_type_code, FieldValue::Code(rng.random_range(0..f.n_app_type_code)));
    r.set(f.app_type_whole, FieldValue::Code(rng.random_range(0..f.n_app_type_whole)));
    // l4_protocol domain is ["1","2"]: mostly TCP (code index 0)
    r.set(f.l4_protocol, FieldValue::Code(!rng.random_bool(0.8) as u16));

    let num = |x: f64| FieldValue::Number(x);
    let count = |c: u64| FieldValue::Number(c as f64);
    let up_mean = if degraded {
        config.upload_traffic_mean_bytes * config.affected_upload_factor
    } else {
        config.upload_traffic_mean_bytes
    };
    r.set(f.upload_traffic, num(normal(rng, up_mean, up_mean / 4.0).max(0.0).round()));
    let down_mean = 2.5 * config.upload_traffic_mean_bytes;
    r.set(f.download_traffic, num(normal(rng, down_mean, down_mean / 4.0).max(0.0).round()));
    r.set(f.window_size, num(normal(rng, 32_768.0, 8_192.0).max(1.0).round()));

    let ack_loc = config.ack_time_location_ms
        + if degraded { config.affected_ack_time_shift_ms } else { 0.0 };
    r.set(f.tcp_link_ack_time, num(normal(rng, ack_loc, config.latency_scale_ms).max(0.0)));
    // plain texture: the TCP and packet counters carry no degradation
    // signal, only the configured shifts above do
    r.set(f.tcp_syn_num, count(1 + poisson(rng, 1.5)));
    r.set(f.tcp_retrans_num, count(poisson(rng, 0.5)));
    r.set(f.tcp_rst_num, count(poisson(rng, 0.2)));

    r.set(f.upload_ip_packets, count(1 + poisson(rng, 40.0)));
    r.set(f.download_ip_packets, count(1 + poisson(rng, 60.0)));
    r.set(f.upload_retrans_packets, count(poisson(rng, 0.25)));
    r.set(f.download_retrans_packets, count(poisson(rng, 0.25)));
    r.set(f.disorder_upload_packets, count(poisson(rng, 0.5)));
    r.set(f.disorder_download_packets, count(poisson(rng, 0.8)));

    let spend_loc = config.spendtime_location_ms
        + if degraded { config.affected_spendtime_shift_ms } else { 0.0 };
    r.set(f.spendtime, num(normal(rng, spend_loc, 2.0 * config.latency_scale_ms).max(0.0)));
    r.set(f.first_request_delay, num(normal(rng, 30.0, 10.0).max(0.0)));
    r.set(f.first_response_delay, num(normal(rng, 60.0, 20.0).max(0.0)));
    r.set(f.last_packet_delay, num(normal(rng, 45.0, 15.0).max(0.0)));
    r.set(f.dns_response_delay, num(normal(rng, 25.0, 8.0).max(0.0)));
    r.set(f.session_duration, num(normal(rng, 3_000.0, 800.0).max(0.0)));
    let gets = poisson(rng, 2.5);
    r.set(f.get_request_num, count(gets));
    r.set(f.get_response_num, count(gets.saturating_sub(poisson(rng, 0.2))));
    r
}

/// Dirty mode: corrupt records in place and append duplicates, at the
/// configured rates, from a dedicated substream.
fn dirty_inject(records: &mut Vec<RawRecord>, f: &Fields, config: &SynthConfig, plane: Plane) {
    if config.dirty_invalid_rate == 0.0
        && config.dirty_erroneous_rate == 0.0
        && config.dirty_duplicate_rate == 0.0
    {
        return;
    }
    let tag = match plane {
        Plane::ControlPlane => "dirty-cp",
        Plane::UserPlane => "dirty-up",
    };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, tag, 0));
    let mut dups = Vec::new();
    for r in records.iter_mut() {
        if rng.random_bool(config.dirty_invalid_rate) {
            let field = match plane {
                Plane::ControlPlane => f.procedure_type,
                Plane::UserPlane => f.app_type_code,
            };
            r.set(field, FieldValue::OutOfDomain("99".into()));
        }
        if plane == Plane::UserPlane && rng.random_bool(config.dirty_erroneous_rate) {
            let x = match r.value(f.upload_traffic) {
                Some(FieldValue::Number(x)) => *x,
                _ => 0.0,
            };
            r.set(f.upload_traffic, FieldValue::Number(-x.abs() - 1.0));
        }
        if rng.random_bool(config.dirty_duplicate_rate) {
            dups.push(r.clone());
        }
    }
    records.extend(dups);
}

/// Write `cp.csv`, `up.csv`, `labels.csv` and `truth.json` into `dir`.
pub fn write_dataset(
    dataset: &LabeledDataset,
    config: &SynthConfig,
    dir: &Path,
) -> Result<(), SynthError> {
    let reg = default_schema();
    ingest::write_raw_csv_file(&dir.join("cp.csv"), &dataset.cp, &reg, Plane::ControlPlane)?;
    ingest::write_raw_csv_file(&dir.join("up.csv"), &dataset.up, &reg, Plane::UserPlane)?;

    let mut wtr = csv::Writer::from_path(dir.join("labels.csv")).map_err(IngestError::from)?;
    wtr.write_record(["user_id", "label"]).map_err(IngestError::from)?;
    for (user, label) in &dataset.labels {
        wtr.write_record([user.as_str(), if *label == 1 { "1" } else { "0" }])
            .map_err(IngestError::from)?;
    }
    wtr.flush().map_err(IngestError::Io)?;

    let truth = serde_json::json!({
        "config": config,
        "n_affected": dataset.labels.values().filter(|&&l| l == 1).count(),
        "event_interval_ms": [
            config.start_ms + config.event_start_window as i64 * config.window_secs as i64 * 1000,
            config.start_ms + config.event_end_window as i64 * config.window_secs as i64 * 1000,
        ],
    });
    std::fs::write(dir.join("truth.json"), serde_json::to_string_pretty(&truth).expect("json"))?;
    Ok(())
}

/// Read a `labels.csv` written by [`write_dataset`].
pub fn read_labels(path: &Path) -> Result<BTreeMap<String, u8>, SynthError> {
    let mut rdr = csv::Reader::from_path(path).map_err(IngestError::from)?;
    let headers = rdr.headers().map_err(IngestError::from)?.clone();
    if headers.len() != 2 || &headers[0] != "user_id" || &headers[1] != "label" {
        return Err(SynthError::Ingest(IngestError::HeaderMismatch(
            "labels.csv must have columns user_id,label".into(),
        )));
    }
    let mut labels = BTreeMap::new();
    for row in rdr.records() {
        let row = row.map_err(IngestError::from)?;
        let label = match &row[1] {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(SynthError::Ingest(IngestError::NotClean(format!(
                    "label `{other}` for user {}",
                    &row[0]
                ))))
            }
        };
        labels.insert(row[0].to_string(), label);
    }
    Ok(labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::consistency_check;

    fn small() -> SynthConfig {
        SynthConfig { n_users: 50, n_windows: 6, event_start_window: 2, event_end_window: 6, ..SynthConfig::default() }
    }

    #[test]
    fn validates_config_bounds() {
        assert!(SynthConfig::default().validate().is_ok());
        let mut c = SynthConfig::default();
        c.affected_fraction = 1.5;
        assert!(matches!(c.validate(), Err(SynthError::InvalidConfig(_))));
        c = SynthConfig::default();
        c.event_end_window = c.n_windows + 1;
        assert!(c.validate().is_err());
        c = SynthConfig::default();
        c.affected_upload_factor = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn presets() {
        assert_eq!(preset("separable").unwrap().affected_fraction, 0.08);
        let ps = preset("paper-scale").unwrap();
        assert_eq!(ps.n_users * ps.n_windows, 252_325);
        assert!(preset("hard").unwrap().validate().is_ok());
        assert!(matches!(preset("nope"), Err(SynthError::UnknownPreset(_))));
    }

    #[test]
    fn same_config_gives_identical_output() {
        let c = small();
        let a = generate(&c).unwrap();
        let b = generate(&c).unwrap();
        assert_eq!(a, b);
        let reg = default_schema();
        let mut buf_a = Vec::new();
        let mut buf_b = Vec::new();
        ingest::write_raw_csv(&mut buf_a, &a.cp, &reg, Plane::ControlPlane).unwrap();
        ingest::write_raw_csv(&mut buf_b, &b.cp, &reg, Plane::ControlPlane).unwrap();
        assert_eq!(buf_a, buf_b);
        let different = generate(&SynthConfig { seed: 43, ..c }).unwrap();
        assert_ne!(a, different);
    }

    #[test]
    fn affected_count_is_exact() {
        let data = generate(&SynthConfig { n_users: 103, ..small() }).unwrap();
        let positives = data.labels.values().filter(|&&l| l == 1).count();
        assert_eq!(positives, (0.08f64 * 103.0).floor() as usize);
        assert_eq!(data.labels.len(), 103);

        let none =
            generate(&SynthConfig { affected_fraction: 0.0, n_users: 40, ..small() }).unwrap();
        assert!(none.labels.values().all(|&l| l == 0));
    }

    #[test]
    fn clean_by_construction() {
        let reg = default_schema();
        let data = generate(&small()).unwrap();
        let n_cp = data.cp.len();
        let n_up = data.up.len();
        let (kept_cp, counts_cp) = consistency_check(data.cp, &reg);
        let (kept_up, counts_up) = consistency_check(data.up, &reg);
        assert_eq!((counts_cp.invalid, counts_cp.erroneous, counts_cp.duplicate), (0, 0, 0));
        assert_eq!((counts_up.invalid, counts_up.erroneous, counts_up.duplicate), (0, 0, 0));
        assert_eq!(kept_cp.len(), n_cp);
        assert_eq!(kept_up.len(), n_up);
    }

    #[test]
    fn dirty_mode_feeds_every_rejection_counter() {
        let reg = default_schema();
        let c = SynthConfig {
            dirty_invalid_rate: 0.05,
            dirty_erroneous_rate: 0.05,
            dirty_duplicate_rate: 0.05,
            ..small()
        };
        let data = generate(&c).unwrap();
        let (_, counts_cp) = consistency_check(data.cp, &reg);
        let (_, counts_up) = consistency_check(data.up, &reg);
        assert!(counts_cp.invalid > 0);
        assert!(counts_cp.duplicate > 0);
        assert!(counts_up.invalid > 0);
        assert!(counts_up.erroneous > 0);
        assert!(counts_up.duplicate > 0);
    }

    #[test]
    fn latency_shift_matches_configuration() {
        let c = SynthConfig { n_users: 500, ..small() };
        let data = generate(&c).unwrap();
        let reg = default_schema();
        let f = Fields::resolve(&reg);
        let window_ms = c.window_secs as i64 * 1000;
        let event_start = c.start_ms + c.event_start_window as i64 * window_ms;
        let (mut sum_a, mut n_a, mut sum_n, mut n_n) = (0.0, 0u64, 0.0, 0u64);
        for r in &data.up {
            if r.timestamp_ms < event_start {
                continue;
            }
            let ack = match r.value(f.tcp_link_ack_time) {
                Some(FieldValue::Number(x)) => *x,
                _ => unreachable!("generator always fills latencies"),
            };
            if data.labels[&r.user_id] == 1 {
                sum_a += ack;
                n_a += 1;
            } else {
                sum_n += ack;
                n_n += 1;
            }
        }
        let diff = sum_a / n_a as f64 - sum_n / n_n as f64;
        let shift = c.affected_ack_time_shift_ms;
        assert!(
            (diff - shift).abs() < 0.1 * shift,
            "observed shift {diff}, configured {shift}"
        );
    }

    #[test]
    fn cp_silence_thins_affected_event_windows() {
        let c = SynthConfig { n_users: 400, ..small() };
        let data = generate(&c).unwrap();
        let window_ms = c.window_secs as i64 * 1000;
        let event_start = c.start_ms + c.event_start_window as i64 * window_ms;
        let (mut n_a, mut n_n) = (0u64, 0u64);
        for r in &data.cp {
            if r.timestamp_ms < event_start {
                continue;
            }
            if data.labels[&r.user_id] == 1 {
                n_a += 1;
            } else {
                n_n += 1;
            }
        }
        let affected_users = data.labels.values().filter(|&&l| l == 1).count() as f64;
        let normal_users = data.labels.len() as f64 - affected_users;
        let per_affected = n_a as f64 / affected_users;
        let per_normal = n_n as f64 / normal_users;
        // silence suppresses whole windows: expect roughly (1 − p) of volume
        assert!(
            per_affected < 0.7 * per_normal,
            "affected {per_affected} vs normal {per_normal}"
        );
    }

    #[test]
    fn output_is_sorted_by_time_then_user() {
        let data = generate(&small()).unwrap();
        for plane in [&data.cp, &data.up] {
            for w in plane.windows(2) {
                assert!(
                    (w[0].timestamp_ms, &w[0].user_id) <= (w[1].timestamp_ms, &w[1].user_id)
                );
            }
        }
    }

    #[test]
    fn dataset_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let c = small();
        let data = generate(&c).unwrap();
        write_dataset(&data, &c, dir.path()).unwrap();
        let reg = default_schema();
        let (cp, issues) =
            ingest::read_raw_csv(&dir.path().join("cp.csv"), &reg, Plane::ControlPlane).unwrap();
        assert!(issues.is_empty());
        assert_eq!(cp, data.cp);
        let labels = read_labels(&dir.path().join("labels.csv")).unwrap();
        assert_eq!(labels, data.labels);
        let truth: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("truth.json")).unwrap())
                .unwrap();
        assert_eq!(truth["config"]["n_users"], serde_json::json!(c.n_users));
    }
}
