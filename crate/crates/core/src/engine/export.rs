use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::audit::AuditReport;
use crate::calendar::Calendar;
use crate::config::CohortConfig;
use crate::error::Error;
use crate::model::{
    AbsenceCode, DayFlags, DayPoint, Decomposition, DeviceSeries, Event, ExamVisit, Profile,
    SeedsRecord, TrajectoryPlan, UserBundle,
};

/// Top-level description of an exported cohort directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortManifest {
    pub scheme: String,
    pub root_seed: u64,
    pub config_digest: String,
    pub cohort_digest: String,
    pub users: Vec<String>,
}

/// One line of device.jsonl: every indicator's observation for one day. The
/// unit is repeated on every entry on purpose; consumers audit it against
/// the catalog instead of trusting a single header.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DeviceDayRecord {
    day: i64,
    date: String,
    observations: BTreeMap<String, DeviceEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DeviceEntry {
    unit: String,
    value: Option<f64>,
    absence: Option<AbsenceCode>,
    decomposition: Decomposition,
    flags: DayFlags,
}

pub fn bundle_dir(root: &Path, user_id: &str) -> PathBuf {
    root.join("users").join(user_id)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::json(path.display().to_string(), e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, Error> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
}

pub fn export_bundle(dir: &Path, bundle: &UserBundle) -> Result<(), Error> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    write_json(&dir.join("profile.json"), &bundle.profile)?;
    write_json(&dir.join("plan.json"), &bundle.plan)?;
    write_json(&dir.join("events.json"), &bundle.events)?;
    write_json(&dir.join("exams.json"), &bundle.exams)?;
    write_json(&dir.join("audit.json"), &bundle.audit)?;
    write_json(&dir.join("seeds.json"), &bundle.seeds)?;

    let calendar = bundle.calendar()?;
    let horizon = bundle.horizon();
    let device_path = dir.join("device.jsonl");
    let file = fs::File::create(&device_path)
        .map_err(|e| Error::io(device_path.display().to_string(), e))?;
    let mut out = BufWriter::new(file);
    for day in 0..horizon {
        let observations: BTreeMap<String, DeviceEntry> = bundle
            .device
            .iter()
            .map(|(key, series)| {
                let point = &series.values[day as usize];
                (
                    key.clone(),
                    DeviceEntry {
                        unit: series.unit.clone(),
                        value: point.value,
                        absence: point.absence,
                        decomposition: point.decomposition,
                        flags: point.flags,
                    },
                )
            })
            .collect();
        let record = DeviceDayRecord {
            day,
            date: calendar.date_str(day),
            observations,
        };
        let line = serde_json::to_string(&record)
            .map_err(|e| Error::json(device_path.display().to_string(), e))?;
        writeln!(out, "{line}").map_err(|e| Error::io(device_path.display().to_string(), e))?;
    }
    out.flush()
        .map_err(|e| Error::io(device_path.display().to_string(), e))
}

pub fn load_bundle(dir: &Path) -> Result<UserBundle, Error> {
    let profile: Profile = read_json(&dir.join("profile.json"))?;
    let plan: TrajectoryPlan = read_json(&dir.join("plan.json"))?;
    let events: Vec<Event> = read_json(&dir.join("events.json"))?;
    let exams: Vec<ExamVisit> = read_json(&dir.join("exams.json"))?;
    let audit: AuditReport = read_json(&dir.join("audit.json"))?;
    let seeds: SeedsRecord = read_json(&dir.join("seeds.json"))?;
    let calendar = Calendar::parse(&seeds.epoch)?;
    let device = load_device_log(&dir.join("device.jsonl"), seeds.horizon_days, &calendar)?;
    Ok(UserBundle {
        profile,
        plan,
        device,
        exams,
        events,
        audit,
        seeds,
    })
}

fn load_device_log(
    path: &Path,
    horizon: i64,
    calendar: &Calendar,
) -> Result<BTreeMap<String, DeviceSeries>, Error> {
    let file = fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let reader = BufReader::new(file);
    let mut series: BTreeMap<String, DeviceSeries> = BTreeMap::new();
    let mut next_day = 0i64;

    for line in reader.lines() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: DeviceDayRecord = serde_json::from_str(&line)
            .map_err(|e| Error::json(path.display().to_string(), e))?;
        if record.day != next_day {
            return Err(Error::schema(
                "device.jsonl",
                format!("expected day {next_day}, found day {}", record.day),
            ));
        }
        if record.date != calendar.date_str(record.day) {
            return Err(Error::schema(
                "device.jsonl",
                format!("day {} carries date {}, calendar says {}",
                    record.day,
                    record.date,
                    calendar.date_str(record.day)
                ),
            ));
        }
        for (key, entry) in record.observations {
            if entry.value.is_some() == entry.absence.is_some() {
                return Err(Error::schema(
                    "device.jsonl",
                    format!("day {} {key}: exactly one of value/absence must be set", record.day),
                ));
            }
            let slot = series.entry(key.clone()).or_insert_with(|| DeviceSeries {
                indicator_key: key.clone(),
                unit: entry.unit.clone(),
                values: Vec::with_capacity(horizon as usize),
            });
            if slot.unit != entry.unit {
                return Err(Error::schema(
                    "device.jsonl",
                    format!(
                        "day {} {key}: unit {} disagrees with earlier unit {}",
                        record.day, entry.unit, slot.unit
                    ),
                ));
            }
            if slot.values.len() as i64 != record.day {
                return Err(Error::schema(
                    "device.jsonl",
                    format!("{key} missing from day {}", slot.values.len()),
                ));
            }
            slot.values.push(DayPoint {
                value: entry.value,
                absence: entry.absence,
                decomposition: entry.decomposition,
                flags: entry.flags,
            });
        }
        next_day += 1;
    }

    if next_day < horizon {
        return Err(Error::TruncatedDeviceLog {
            expected: horizon,
            found: next_day,
            first_missing: next_day,
        });
    }
    Ok(series)
}

pub fn export_cohort(dir: &Path, cfg: &CohortConfig, bundles: &[UserBundle]) -> Result<(), Error> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    write_json(&dir.join("config.json"), cfg)?;
    for bundle in bundles {
        export_bundle(&bundle_dir(dir, &bundle.profile.user_id), bundle)?;
    }
    let manifest = CohortManifest {
        scheme: crate::streams::SCHEME.to_string(),
        root_seed: cfg.root_seed,
        config_digest: cfg.digest(),
        cohort_digest: super::cohort_digest(bundles),
        users: bundles.iter().map(|b| b.profile.user_id.clone()).collect(),
    };
    write_json(&dir.join("manifest.json"), &manifest)
}

pub fn load_manifest(dir: &Path) -> Result<CohortManifest, Error> {
    read_json(&dir.join("manifest.json"))
}

pub fn load_config(dir: &Path) -> Result<CohortConfig, Error> {
    let cfg: CohortConfig = read_json(&dir.join("config.json"))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_cohort(dir: &Path) -> Result<(CohortConfig, Vec<UserBundle>), Error> {
    let manifest = load_manifest(dir)?;
    let cfg = load_config(dir)?;
    let bundles = manifest
        .users
        .iter()
        .map(|user| load_bundle(&bundle_dir(dir, user)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((cfg, bundles))
}
