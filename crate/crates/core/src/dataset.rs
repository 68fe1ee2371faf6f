//! JSONL dataset persistence and scenario-level train/val/test splitting.
//!
//! One scenario per line:
//!
//! ```text
//! {"scenario_id": str, "dt": float, "lanes": [[[x,y],...],...],
//!  "agents": [{"agent_id": str, "states": [[px,py,vx,vy,hx,hy],...],
//!              "lidar": [[240 floats],...], "lane": [[12 floats],...],
//!              "side": [[12 floats],...], "lane_cross": [bool,...],
//!              "label": {"anomalous": bool, "types": [str,...],
//!                        "intervals": {type: [[s,e],...]}} | null}]}
//! ```
//!
//! Floats are written in shortest round-trip form, so a re-read is bit-exact.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Lines, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::{
    AgentState, AgentTrajectory, AnomalyReport, AnomalyType, Interval, Scenario, SensorFrame, Vec2,
};

#[derive(Serialize)]
struct WireScenarioRef<'a> {
    scenario_id: &'a str,
    dt: f64,
    lanes: Vec<Vec<[f64; 2]>>,
    agents: Vec<WireAgentRef<'a>>,
}

#[derive(Serialize)]
struct WireAgentRef<'a> {
    agent_id: &'a str,
    states: Vec<[f64; 6]>,
    lidar: Vec<&'a [f64]>,
    lane: Vec<&'a [f64]>,
    side: Vec<&'a [f64]>,
    lane_cross: &'a [bool],
    label: Option<WireLabel>,
}

#[derive(Serialize, Deserialize)]
struct WireLabel {
    anomalous: bool,
    types: Vec<String>,
    intervals: BTreeMap<String, Vec<[usize; 2]>>,
}

#[derive(Deserialize)]
struct WireScenario {
    scenario_id: String,
    dt: f64,
    lanes: Vec<Vec<[f64; 2]>>,
    agents: Vec<WireAgent>,
}

#[derive(Deserialize)]
struct WireAgent {
    agent_id: String,
    states: Vec<[f64; 6]>,
    lidar: Vec<Vec<f64>>,
    lane: Vec<Vec<f64>>,
    side: Vec<Vec<f64>>,
    lane_cross: Vec<bool>,
    label: Option<WireLabel>,
}

impl WireLabel {
    fn from_report(report: &AnomalyReport) -> Self {
        WireLabel {
            anomalous: report.is_anomalous,
            types: report.types().map(|t| t.as_str().to_string()).collect(),
            intervals: report
                .intervals
                .iter()
                .map(|(t, ivs)| {
                    (
                        t.as_str().to_string(),
                        ivs.iter().map(|iv| [iv.start, iv.end]).collect(),
                    )
                })
                .collect(),
        }
    }

    fn into_report(self) -> Result<AnomalyReport> {
        let types: HashSet<AnomalyType> = self
            .types
            .iter()
            .map(|s| s.parse())
            .collect::<Result<_>>()?;
        let mut intervals = BTreeMap::new();
        for (name, ivs) in self.intervals {
            let kind: AnomalyType = name.parse()?;
            if !types.contains(&kind) {
                return Err(Error::schema(format!("intervals given for unlisted type {name}")));
            }
            let ivs = ivs
                .into_iter()
                .map(|[s, e]| {
                    if s > e {
                        Err(Error::schema(format!("interval [{s}, {e}] is reversed")))
                    } else {
                        Ok(Interval::new(s, e))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            intervals.insert(kind, ivs);
        }
        if intervals.len() != types.len() {
            return Err(Error::schema("every listed type needs an intervals entry"));
        }
        let report = AnomalyReport {
            is_anomalous: self.anomalous,
            intervals,
        };
        if report.is_anomalous == report.intervals.is_empty() {
            return Err(Error::schema("anomalous flag disagrees with type set"));
        }
        Ok(report)
    }
}

fn to_wire(s: &Scenario) -> WireScenarioRef<'_> {
    WireScenarioRef {
        scenario_id: &s.scenario_id,
        dt: s.dt,
        lanes: s
            .lane_geometry
            .iter()
            .map(|line| line.iter().map(|p| [p.x, p.y]).collect())
            .collect(),
        agents: s
            .agents
            .iter()
            .map(|a| WireAgentRef {
                agent_id: &a.agent_id,
                states: a
                    .states
                    .iter()
                    .map(|st| {
                        [
                            st.position.x,
                            st.position.y,
                            st.velocity.x,
                            st.velocity.y,
                            st.heading.x,
                            st.heading.y,
                        ]
                    })
                    .collect(),
                lidar: a.sensors.iter().map(|f| &f.lidar[..]).collect(),
                lane: a.sensors.iter().map(|f| &f.lane[..]).collect(),
                side: a.sensors.iter().map(|f| &f.side[..]).collect(),
                lane_cross: &a.lane_cross_flags,
                label: a.label.as_ref().map(WireLabel::from_report),
            })
            .collect(),
    }
}

fn from_wire(w: WireScenario) -> Result<Scenario> {
    let agents = w
        .agents
        .into_iter()
        .map(|a| {
            let t = a.states.len();
            if a.lidar.len() != t || a.lane.len() != t || a.side.len() != t || a.lane_cross.len() != t {
                return Err(Error::schema(format!(
                    "agent {}: series lengths differ (states {t}, lidar {}, lane {}, side {}, lane_cross {})",
                    a.agent_id,
                    a.lidar.len(),
                    a.lane.len(),
                    a.side.len(),
                    a.lane_cross.len()
                )));
            }
            let sensors = a
                .lidar
                .iter()
                .zip(&a.lane)
                .zip(&a.side)
                .map(|((l, ln), sd)| SensorFrame::from_slices(l, ln, sd))
                .collect::<Result<Vec<_>>>()?;
            let states = a
                .states
                .iter()
                .map(|s| AgentState {
                    position: Vec2::new(s[0], s[1]),
                    velocity: Vec2::new(s[2], s[3]),
                    heading: Vec2::new(s[4], s[5]),
                })
                .collect();
            Ok(AgentTrajectory {
                agent_id: a.agent_id,
                states,
                sensors,
                lane_cross_flags: a.lane_cross,
                label: a.label.map(WireLabel::into_report).transpose()?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let scenario = Scenario {
        scenario_id: w.scenario_id,
        dt: w.dt,
        agents,
        lane_geometry: w
            .lanes
            .into_iter()
            .map(|line| line.into_iter().map(|[x, y]| Vec2::new(x, y)).collect())
            .collect(),
    };
    scenario.validate()?;
    Ok(scenario)
}

/// Serializes one scenario as a single JSON line (no trailing newline).
pub fn scenario_to_json(s: &Scenario) -> String {
    serde_json::to_string(&to_wire(s)).expect("scenario serialization cannot fail")
}

/// Parses one JSON line; `line` is used for error reporting only.
pub fn scenario_from_json(text: &str, line: usize) -> Result<Scenario> {
    let wire: WireScenario = serde_json::from_str(text).map_err(|e| Error::Parse {
        line,
        message: e.to_string(),
    })?;
    from_wire(wire).map_err(|e| match e {
        Error::Schema(msg) => Error::Schema(format!("line {line}: {msg}")),
        other => other,
    })
}

/// Streaming JSONL writer.
pub struct DatasetWriter {
    path: PathBuf,
    out: BufWriter<File>,
    count: usize,
}

impl DatasetWriter {
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(DatasetWriter {
            path,
            out: BufWriter::new(file),
            count: 0,
        })
    }

    pub fn write(&mut self, scenario: &Scenario) -> Result<()> {
        serde_json::to_writer(&mut self.out, &to_wire(scenario))
            .map_err(|e| Error::io(&self.path, e.into()))?;
        self.out
            .write_all(b"\n")
            .map_err(|e| Error::io(&self.path, e))?;
        self.count += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<usize> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))?;
        Ok(self.count)
    }
}

pub fn write_dataset(scenarios: &[Scenario], path: impl AsRef<Path>) -> Result<usize> {
    let mut w = DatasetWriter::create(path)?;
    for s in scenarios {
        w.write(s)?;
    }
    w.finish()
}

/// Streaming JSONL reader yielding one scenario per non-blank line.
pub struct DatasetReader {
    path: PathBuf,
    lines: Lines<BufReader<File>>,
    line_no: usize,
}

impl DatasetReader {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        Ok(DatasetReader {
            path,
            lines: BufReader::new(file).lines(),
            line_no: 0,
        })
    }
}

impl Iterator for DatasetReader {
    type Item = Result<Scenario>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = self.lines.next()?;
            self.line_no += 1;
            let line = match line {
                Ok(l) => l,
                Err(e) => return Some(Err(Error::io(&self.path, e))),
            };
            if line.trim().is_empty() {
                continue;
            }
            return Some(scenario_from_json(&line, self.line_no));
        }
    }
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<Scenario>> {
    DatasetReader::open(path)?.collect()
}

#[derive(Deserialize)]
struct WireIds {
    scenario_id: String,
    agents: Vec<WireAgentId>,
}

#[derive(Deserialize)]
struct WireAgentId {
    agent_id: String,
}

/// Scenario and agent ids of every line, skipping the numeric payload.
pub fn read_ids(path: impl AsRef<Path>) -> Result<Vec<(String, Vec<String>)>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let ids: WireIds = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push((ids.scenario_id, ids.agents.into_iter().map(|a| a.agent_id).collect()));
    }
    Ok(out)
}

/// A `(scenario_id, ego_agent_id)` sample key.
pub type SampleKey = (String, String);

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<SampleKey>,
    pub val: Vec<SampleKey>,
    pub test: Vec<SampleKey>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Segment {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Segment {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Segment::Train),
            "val" => Ok(Segment::Val),
            "test" => Ok(Segment::Test),
            other => Err(Error::invalid(format!("unknown split segment {other:?}"))),
        }
    }
}

impl DatasetSplit {
    pub fn segment(&self, segment: Segment) -> &[SampleKey] {
        match segment {
            Segment::Train => &self.train,
            Segment::Val => &self.val,
            Segment::Test => &self.test,
        }
    }

    /// Scenario ids of one segment, in first-appearance order.
    pub fn scenario_ids(&self, segment: Segment) -> Vec<String> {
        let mut seen = HashSet::new();
        self.segment(segment)
            .iter()
            .filter(|(sid, _)| seen.insert(sid.clone()))
            .map(|(sid, _)| sid.clone())
            .collect()
    }
}

/// Splits by scenario: val and test take `floor(fraction * n)` scenarios each
/// (at least one when their fraction is nonzero) and train takes the rest.
pub fn make_split(scenarios: &[Scenario], fractions: (f64, f64, f64), seed: u64) -> Result<DatasetSplit> {
    let ids: Vec<(String, Vec<String>)> = scenarios
        .iter()
        .map(|s| {
            (
                s.scenario_id.clone(),
                s.agents.iter().map(|a| a.agent_id.clone()).collect(),
            )
        })
        .collect();
    make_split_from_ids(&ids, fractions, seed)
}

pub fn make_split_from_ids(
    scenarios: &[(String, Vec<String>)],
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<DatasetSplit> {
    let (ft, fv, fs) = fractions;
    if [ft, fv, fs].iter().any(|f| !(0.0..=1.0).contains(f)) || (ft + fv + fs - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "split fractions ({ft}, {fv}, {fs}) must lie in [0,1] and sum to 1"
        )));
    }
    let n = scenarios.len();
    let nonzero = [ft, fv, fs].iter().filter(|f| **f > 0.0).count();
    if n < nonzero {
        return Err(Error::invalid(format!(
            "{n} scenarios cannot fill {nonzero} nonempty split buckets"
        )));
    }
    let bucket = |f: f64| {
        if f > 0.0 {
            ((f * n as f64 + 1e-9).floor() as usize).max(1)
        } else {
            0
        }
    };
    let n_val = bucket(fv);
    let n_test = bucket(fs);
    if n_val + n_test > n || (ft > 0.0 && n_val + n_test == n) {
        return Err(Error::invalid(format!(
            "{n} scenarios too few for split ({ft}, {fv}, {fs})"
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let expand = |idx: &[usize]| -> Vec<SampleKey> {
        idx.iter()
            .flat_map(|&i| {
                let (sid, agents) = &scenarios[i];
                agents.iter().map(move |a| (sid.clone(), a.clone()))
            })
            .collect()
    };
    let (val_idx, rest) = order.split_at(n_val);
    let (test_idx, train_idx) = rest.split_at(n_test);
    Ok(DatasetSplit {
        train: expand(train_idx),
        val: expand(val_idx),
        test: expand(test_idx),
    })
}
