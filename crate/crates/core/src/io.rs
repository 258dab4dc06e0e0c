//! Headered CSV for every tabular artifact.
//!
//! Floats are written in shortest round-trip exponent form, so a file read back
//! reproduces the values bit for bit and identical inputs give identical bytes.

use std::io::{Read, Write};

use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use crate::bench::{Interval, MetricsReport, TraceRow};
use crate::error::{Error, Result};
use crate::pronet::{EpochRecord, LevelSummary, TrainingExample, Window};
use crate::sim::{DvlMeasurement, TrajectoryKind};
use crate::strapdown::{ImuSample, NavState, Position};

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse(format!("csv: {other:?}")),
    }
}

fn f(v: f64) -> String {
    format!("{v:e}")
}

struct Table<W: Write> {
    w: csv::Writer<W>,
}

impl<W: Write> Table<W> {
    fn new(out: W, header: &[String]) -> Result<Self> {
        let mut w = csv::WriterBuilder::new().from_writer(out);
        w.write_record(header).map_err(csv_err)?;
        Ok(Self { w })
    }

    fn row(&mut self, fields: &[String]) -> Result<()> {
        self.w.write_record(fields).map_err(csv_err)
    }

    fn finish(mut self) -> Result<()> {
        self.w.flush()?;
        Ok(())
    }
}

fn header(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

fn records(input: impl Read, expected: &[String]) -> Result<Vec<csv::StringRecord>> {
    let mut r = csv::ReaderBuilder::new().from_reader(input);
    let got: Vec<String> = r.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    if got != expected {
        return Err(Error::Parse(format!("expected columns {expected:?}, found {got:?}")));
    }
    r.records().map(|rec| rec.map_err(csv_err)).collect()
}

fn num(rec: &csv::StringRecord, i: usize) -> Result<f64> {
    let s = rec.get(i).ok_or_else(|| Error::Parse(format!("missing column {i}")))?;
    s.parse().map_err(|_| Error::Parse(format!("bad number `{s}` at line {}", rec.position().map_or(0, |p| p.line()))))
}

fn vec3(rec: &csv::StringRecord, i: usize) -> Result<Vector3<f64>> {
    Ok(Vector3::new(num(rec, i)?, num(rec, i + 1)?, num(rec, i + 2)?))
}

const TRAJECTORY_COLUMNS: [&str; 11] = ["time", "latitude", "longitude", "depth", "vn", "ve", "vd", "qw", "qx", "qy", "qz"];
const IMU_COLUMNS: [&str; 7] = ["time", "fx", "fy", "fz", "wx", "wy", "wz"];
const DVL_COLUMNS: [&str; 4] = ["time", "vn", "ve", "vd"];

pub fn write_trajectory(out: impl Write, states: &[NavState]) -> Result<()> {
    let mut t = Table::new(out, &header(&TRAJECTORY_COLUMNS))?;
    for s in states {
        let q = s.attitude.quaternion();
        let v = &s.velocity_ned;
        let p = &s.position;
        t.row(&[s.time, p.latitude, p.longitude, p.depth, v.x, v.y, v.z, q.w, q.i, q.j, q.k].map(f))?;
    }
    t.finish()
}

pub fn read_trajectory(input: impl Read) -> Result<Vec<NavState>> {
    records(input, &header(&TRAJECTORY_COLUMNS))?
        .iter()
        .map(|r| {
            let q = Quaternion::new(num(r, 7)?, num(r, 8)?, num(r, 9)?, num(r, 10)?);
            Ok(NavState::new(
                Position::new(num(r, 1)?, num(r, 2)?, num(r, 3)?),
                vec3(r, 4)?,
                UnitQuaternion::new_unchecked(q),
                num(r, 0)?,
            ))
        })
        .collect()
}

pub fn write_imu(out: impl Write, samples: &[ImuSample]) -> Result<()> {
    let mut t = Table::new(out, &header(&IMU_COLUMNS))?;
    for s in samples {
        let c = s.channels();
        t.row(&[s.time, c[0], c[1], c[2], c[3], c[4], c[5]].map(f))?;
    }
    t.finish()
}

pub fn read_imu(input: impl Read) -> Result<Vec<ImuSample>> {
    records(input, &header(&IMU_COLUMNS))?
        .iter()
        .map(|r| Ok(ImuSample::new(vec3(r, 1)?, vec3(r, 4)?, num(r, 0)?)))
        .collect()
}

pub fn write_dvl(out: impl Write, fixes: &[DvlMeasurement]) -> Result<()> {
    let mut t = Table::new(out, &header(&DVL_COLUMNS))?;
    for d in fixes {
        let v = &d.velocity_ned;
        t.row(&[d.time, v.x, v.y, v.z].map(f))?;
    }
    t.finish()
}

pub fn read_dvl(input: impl Read) -> Result<Vec<DvlMeasurement>> {
    records(input, &header(&DVL_COLUMNS))?
        .iter()
        .map(|r| Ok(DvlMeasurement { velocity_ned: vec3(r, 1)?, time: num(r, 0)? }))
        .collect()
}

fn example_header(window_len: usize) -> Vec<String> {
    let mut h = header(&["kind", "level", "q_star", "channel"]);
    h.extend((0..window_len).map(|i| format!("x{i}")));
    h
}

/// One row per example: labels, then the window values.
pub fn write_examples(out: impl Write, examples: &[TrainingExample]) -> Result<()> {
    let len = examples.first().map_or(0, |e| e.window.values.len());
    let mut t = Table::new(out, &example_header(len))?;
    for e in examples {
        if e.window.values.len() != len {
            return Err(Error::ShapeMismatch { context: "window length", expected: len, actual: e.window.values.len() });
        }
        let mut row = vec![e.kind.name().to_string(), e.level.to_string(), f(e.q_star), e.window.channel.to_string()];
        row.extend(e.window.values.iter().map(|v| f(*v)));
        t.row(&row)?;
    }
    t.finish()
}

pub fn read_examples(input: impl Read) -> Result<Vec<TrainingExample>> {
    let mut r = csv::ReaderBuilder::new().from_reader(input);
    let got: Vec<String> = r.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    let len = got.len().saturating_sub(4);
    if got != example_header(len) {
        return Err(Error::Parse("not an example table".into()));
    }
    r.records()
        .map(|rec| {
            let rec = rec.map_err(csv_err)?;
            let kind = TrajectoryKind::from_name(&rec[0])
                .ok_or_else(|| Error::Parse(format!("unknown trajectory kind `{}`", &rec[0])))?;
            let int = |i: usize| rec[i].parse::<usize>().map_err(|_| Error::Parse(format!("bad integer `{}`", &rec[i])));
            let values = (4..4 + len).map(|i| num(&rec, i)).collect::<Result<_>>()?;
            Ok(TrainingExample { window: Window { values, channel: int(3)? }, q_star: num(&rec, 2)?, kind, level: int(1)? })
        })
        .collect()
}

pub fn write_curve(out: impl Write, curve: &[EpochRecord]) -> Result<()> {
    let mut t = Table::new(out, &header(&["epoch", "train_loss", "test_loss"]))?;
    for r in curve {
        t.row(&[r.epoch.to_string(), f(r.train_loss), f(r.test_loss)])?;
    }
    t.finish()
}

pub fn read_curve(input: impl Read) -> Result<Vec<EpochRecord>> {
    records(input, &header(&["epoch", "train_loss", "test_loss"]))?
        .iter()
        .map(|r| {
            let epoch = r[0].parse().map_err(|_| Error::Parse(format!("bad epoch `{}`", &r[0])))?;
            Ok(EpochRecord { epoch, train_loss: num(r, 1)?, test_loss: num(r, 2)? })
        })
        .collect()
}

pub fn write_levels(out: impl Write, levels: &[LevelSummary]) -> Result<()> {
    let mut t = Table::new(out, &header(&["q_star", "count", "mean_prediction", "std_prediction", "relative_error"]))?;
    for l in levels {
        t.row(&[f(l.q_star), l.count.to_string(), f(l.mean_prediction), f(l.std_prediction), f(l.relative_error())])?;
    }
    t.finish()
}

/// Table of mean SRMSE/SMAE per policy, with the paired SMAE difference to
/// `reference` when one is given.
pub fn write_results_table(out: impl Write, reports: &[MetricsReport], vs_reference: &[Option<Interval>]) -> Result<()> {
    let mut t = Table::new(out, &header(&["policy", "srmse", "smae", "smae_diff", "smae_diff_lo", "smae_diff_hi"]))?;
    for (i, r) in reports.iter().enumerate() {
        let ci = vs_reference.get(i).copied().flatten();
        let cell = |v: Option<f64>| v.map(f).unwrap_or_default();
        t.row(&[
            r.label(),
            f(r.srmse),
            f(r.smae),
            cell(ci.map(|c| c.estimate)),
            cell(ci.map(|c| c.lo)),
            cell(ci.map(|c| c.hi)),
        ])?;
    }
    t.finish()
}

pub fn write_run_metrics(out: impl Write, reports: &[MetricsReport]) -> Result<()> {
    let mut t = Table::new(out, &header(&["policy", "run", "srmse", "smae"]))?;
    for r in reports {
        for m in &r.runs {
            t.row(&[r.label(), m.run.to_string(), f(m.srmse), f(m.smae)])?;
        }
    }
    t.finish()
}

/// Run-averaged velocity NEES per DVL epoch, one column per policy.
pub fn write_nees(out: impl Write, reports: &[MetricsReport]) -> Result<()> {
    let mut h = vec!["time".to_string()];
    h.extend(reports.iter().map(|r| r.label()));
    let mut t = Table::new(out, &h)?;
    let Some(first) = reports.first() else { return t.finish() };
    for (e, time) in first.nees_times.iter().enumerate() {
        let mut row = vec![f(*time)];
        row.extend(reports.iter().map(|r| r.nees_mean.get(e).map(|v| f(*v)).unwrap_or_default()));
        t.row(&row)?;
    }
    t.finish()
}

pub fn write_trace(out: impl Write, rows: &[TraceRow]) -> Result<()> {
    let mut h = header(&["time", "true_vn", "true_ve", "true_vd", "est_vn", "est_ve", "est_vd", "dvn", "dve", "dvd"]);
    h.extend((0..12).map(|i| format!("p{i}")));
    h.extend((0..12).map(|i| format!("q{i}")));
    let mut t = Table::new(out, &h)?;
    for r in rows {
        let mut row = vec![f(r.time)];
        for v in [&r.true_velocity, &r.est_velocity, &r.correction] {
            row.extend(v.iter().map(|x| f(*x)));
        }
        row.extend(r.p_diagonal.iter().map(|x| f(*x)));
        row.extend(r.q_diagonal.iter().map(|x| f(*x)));
        t.row(&row)?;
    }
    t.finish()
}
