//! CSV readers and writers for observations, labeled points, crowd labels
//! and result tables. Floats are written in shortest round-trip form, so a
//! write/read cycle is exact.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;
use cropmap_core::datapipe::{LabeledExample, PixelTimeSeries, Source, SpectralObservation};
use cropmap_core::eval::{Consensus, ConsensusSummary, LabelMatrix, MetricsReport};
use cropmap_core::train::{EpochRecord, SweepRun};
use cropmap_core::{BAND_NAMES, FEATURE_NAMES, N_BANDS, TIMESTEPS};

use crate::error::{Error, Result};

/// `t01_B02 … t12_NDVI`.
pub fn feature_columns() -> Vec<String> {
    (1..=TIMESTEPS)
        .flat_map(|t| FEATURE_NAMES.iter().map(move |f| format!("t{t:02}_{f}")))
        .collect()
}

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(|e| Error::csv(path, e))
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))
}

fn check_header(path: &Path, rdr: &mut csv::Reader<std::fs::File>, expected: &[&str]) -> Result<()> {
    let found = rdr.headers().map_err(|e| Error::csv(path, e))?;
    if found.len() != expected.len() || found.iter().zip(expected).any(|(a, b)| a != *b) {
        return Err(Error::data(
            path,
            format!("expected header `{}`, found `{}`", expected.join(","), found.iter().collect::<Vec<_>>().join(",")),
        ));
    }
    Ok(())
}

fn parse<T: std::str::FromStr>(path: &Path, line: u64, column: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::data(path, format!("line {line}: cannot parse {column} value {value:?}")))
}

fn parse_opt(path: &Path, line: u64, column: &str, value: &str) -> Result<Option<f64>> {
    if value.is_empty() {
        Ok(None)
    } else {
        parse(path, line, column, value).map(Some)
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |v| v.to_string())
}

fn records(path: &Path, rdr: &mut csv::Reader<std::fs::File>) -> Result<Vec<(u64, csv::StringRecord)>> {
    rdr.records()
        .map(|r| {
            let r = r.map_err(|e| Error::csv(path, e))?;
            Ok((r.position().map_or(0, |p| p.line()), r))
        })
        .collect()
}

fn flush(path: &Path, mut w: csv::Writer<std::fs::File>) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

fn observation_header() -> Vec<&'static str> {
    ["point_id", "date", "cloud_score"].into_iter().chain(BAND_NAMES).collect()
}

pub fn read_observations(path: &Path) -> Result<Vec<SpectralObservation>> {
    let mut rdr = reader(path)?;
    check_header(path, &mut rdr, &observation_header())?;
    records(path, &mut rdr)?
        .into_iter()
        .map(|(line, r)| {
            let date: NaiveDate = NaiveDate::parse_from_str(&r[1], "%Y-%m-%d")
                .map_err(|_| Error::data(path, format!("line {line}: invalid date {:?}", &r[1])))?;
            let mut bands = [0.0; N_BANDS];
            for (b, name) in BAND_NAMES.iter().enumerate() {
                bands[b] = parse(path, line, name, &r[3 + b])?;
            }
            let obs = SpectralObservation {
                point_id: r[0].to_string(),
                date,
                cloud_score: parse(path, line, "cloud_score", &r[2])?,
                bands,
            };
            obs.validate().map_err(|e| Error::data(path, format!("line {line}: {e}")))?;
            Ok(obs)
        })
        .collect()
}

pub fn write_observations(path: &Path, observations: &[SpectralObservation]) -> Result<()> {
    let mut w = writer(path)?;
    let row = |w: &mut csv::Writer<_>, fields: Vec<String>| w.write_record(fields).map_err(|e| Error::csv(path, e));
    row(&mut w, observation_header().into_iter().map(String::from).collect())?;
    for o in observations {
        let mut fields = vec![o.point_id.clone(), o.date.format("%Y-%m-%d").to_string(), o.cloud_score.to_string()];
        fields.extend(o.bands.iter().map(f64::to_string));
        row(&mut w, fields)?;
    }
    flush(path, w)
}

const LABELED_META: [&str; 5] = ["point_id", "source", "label", "lat", "lon"];

pub fn read_labeled(path: &Path) -> Result<Vec<LabeledExample>> {
    let mut rdr = reader(path)?;
    let columns = feature_columns();
    let header: Vec<&str> = LABELED_META.iter().copied().chain(columns.iter().map(String::as_str)).collect();
    check_header(path, &mut rdr, &header)?;
    records(path, &mut rdr)?
        .into_iter()
        .map(|(line, r)| {
            let label = match &r[2] {
                "1" => true,
                "0" => false,
                other => return Err(Error::data(path, format!("line {line}: label must be 0 or 1, found {other:?}"))),
            };
            let source: Source = r[1].parse().map_err(|e| Error::data(path, format!("line {line}: {e}")))?;
            let flat = columns
                .iter()
                .enumerate()
                .map(|(k, name)| parse::<f64>(path, line, name, &r[5 + k]))
                .collect::<Result<Vec<_>>>()?;
            if !flat.iter().all(|v| v.is_finite()) {
                return Err(Error::data(path, format!("line {line}: non-finite feature value")));
            }
            Ok(LabeledExample {
                point_id: r[0].to_string(),
                series: PixelTimeSeries::from_flat(&flat, None)?,
                label,
                source,
                lat: parse_opt(path, line, "lat", &r[3])?,
                lon: parse_opt(path, line, "lon", &r[4])?,
            })
        })
        .collect()
}

pub fn write_labeled(path: &Path, examples: &[LabeledExample]) -> Result<()> {
    let mut w = writer(path)?;
    let mut header: Vec<String> = LABELED_META.iter().map(|s| s.to_string()).collect();
    header.extend(feature_columns());
    w.write_record(&header).map_err(|e| Error::csv(path, e))?;
    for e in examples {
        let mut fields = vec![
            e.point_id.clone(),
            e.source.as_str().to_string(),
            u8::from(e.label).to_string(),
            fmt_opt(e.lat),
            fmt_opt(e.lon),
        ];
        fields.extend(e.series.flat().iter().map(f64::to_string));
        w.write_record(&fields).map_err(|e| Error::csv(path, e))?;
    }
    flush(path, w)
}

/// Per-point metadata for compositing; `label` may be left empty when crowd
/// labels supply it.
#[derive(Debug, Clone, PartialEq)]
pub struct PointRecord {
    pub point_id: String,
    pub source: Source,
    pub lat: Option<f64>,
    pub lon: Option<f64>,
    pub label: Option<bool>,
}

pub fn read_points(path: &Path) -> Result<Vec<PointRecord>> {
    let mut rdr = reader(path)?;
    check_header(path, &mut rdr, &["point_id", "source", "lat", "lon", "label"])?;
    records(path, &mut rdr)?
        .into_iter()
        .map(|(line, r)| {
            let label = match &r[4] {
                "" => None,
                "1" => Some(true),
                "0" => Some(false),
                other => return Err(Error::data(path, format!("line {line}: label must be 0, 1 or empty, found {other:?}"))),
            };
            Ok(PointRecord {
                point_id: r[0].to_string(),
                source: r[1].parse().map_err(|e| Error::data(path, format!("line {line}: {e}")))?,
                lat: parse_opt(path, line, "lat", &r[2])?,
                lon: parse_opt(path, line, "lon", &r[3])?,
                label,
            })
        })
        .collect()
}

pub fn write_points(path: &Path, points: &[PointRecord]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["point_id", "source", "lat", "lon", "label"]).map_err(|e| Error::csv(path, e))?;
    for p in points {
        let label = p.label.map_or(String::new(), |l| u8::from(l).to_string());
        w.write_record([p.point_id.clone(), p.source.as_str().into(), fmt_opt(p.lat), fmt_opt(p.lon), label])
            .map_err(|e| Error::csv(path, e))?;
    }
    flush(path, w)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrowdLabel {
    pub point_id: String,
    pub labeler_id: String,
    pub value: f64,
}

pub fn read_crowd(path: &Path) -> Result<Vec<CrowdLabel>> {
    let mut rdr = reader(path)?;
    check_header(path, &mut rdr, &["point_id", "labeler_id", "value"])?;
    records(path, &mut rdr)?
        .into_iter()
        .map(|(line, r)| {
            let value: f64 = parse(path, line, "value", &r[2])?;
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::data(path, format!("line {line}: value {value} is outside [0, 1]")));
            }
            Ok(CrowdLabel { point_id: r[0].to_string(), labeler_id: r[1].to_string(), value })
        })
        .collect()
}

pub fn write_crowd(path: &Path, labels: &[CrowdLabel]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["point_id", "labeler_id", "value"]).map_err(|e| Error::csv(path, e))?;
    for l in labels {
        w.write_record([l.point_id.as_str(), l.labeler_id.as_str(), &l.value.to_string()])
            .map_err(|e| Error::csv(path, e))?;
    }
    flush(path, w)
}

/// Binarized crowd label per point (mean of its labelers' values ≥ 0.5).
pub fn binarize_crowd(path: &Path, labels: &[CrowdLabel]) -> Result<BTreeMap<String, bool>> {
    let mut values: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for l in labels {
        values.entry(&l.point_id).or_default().push(l.value);
    }
    values
        .into_iter()
        .map(|(id, v)| {
            let label = cropmap_core::datapipe::binarize_crowd_label(&v)
                .map_err(|e| Error::data(path, format!("point {id}: {e}")))?;
            Ok((id.to_string(), label))
        })
        .collect()
}

/// Builds a points × labelers vote matrix. Points and labelers keep their
/// order of first appearance; every point needs exactly one 0/1 vote from
/// every labeler.
pub fn crowd_matrix(path: &Path, labels: &[CrowdLabel]) -> Result<LabelMatrix> {
    let mut points: Vec<String> = Vec::new();
    let mut labelers: Vec<String> = Vec::new();
    let mut point_index = BTreeMap::new();
    let mut labeler_index = BTreeMap::new();
    for l in labels {
        point_index.entry(l.point_id.clone()).or_insert_with(|| {
            points.push(l.point_id.clone());
            points.len() - 1
        });
        labeler_index.entry(l.labeler_id.clone()).or_insert_with(|| {
            labelers.push(l.labeler_id.clone());
            labelers.len() - 1
        });
    }
    let mut cells: Vec<Vec<Option<bool>>> = vec![vec![None; labelers.len()]; points.len()];
    for l in labels {
        let vote = match l.value {
            1.0 => true,
            0.0 => false,
            v => return Err(Error::data(path, format!("point {}: consensus needs 0/1 votes, found {v}", l.point_id))),
        };
        let cell = &mut cells[point_index[&l.point_id]][labeler_index[&l.labeler_id]];
        if cell.replace(vote).is_some() {
            return Err(Error::data(path, format!("labeler {} voted twice on point {}", l.labeler_id, l.point_id)));
        }
    }
    let rows = cells
        .into_iter()
        .zip(&points)
        .map(|(row, id)| {
            row.into_iter()
                .zip(&labelers)
                .map(|(v, who)| v.ok_or_else(|| Error::data(path, format!("labeler {who} has no vote for point {id}"))))
                .collect::<Result<Vec<bool>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    LabelMatrix::new(labelers, points, rows).map_err(|e| Error::data(path, e.to_string()))
}

pub fn write_consensus(path: &Path, matrix: &LabelMatrix, summary: &ConsensusSummary) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["point_id", "consensus"]).map_err(|e| Error::csv(path, e))?;
    for (id, c) in matrix.point_ids().iter().zip(&summary.labels) {
        let v = match c {
            Consensus::Crop => "1",
            Consensus::NonCrop => "0",
            Consensus::Discarded => "discarded",
        };
        w.write_record([id.as_str(), v]).map_err(|e| Error::csv(path, e))?;
    }
    flush(path, w)
}

pub fn write_history(path: &Path, epochs: &[EpochRecord]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["epoch", "train_loss", "val_loss", "val_auc"]).map_err(|e| Error::csv(path, e))?;
    for r in epochs {
        w.write_record([r.epoch.to_string(), r.train_loss.to_string(), r.val_loss.to_string(), r.val_auc.to_string()])
            .map_err(|e| Error::csv(path, e))?;
    }
    flush(path, w)
}

pub fn write_sweep(path: &Path, runs: &[SweepRun]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["fraction", "seed", "auc", "accuracy"]).map_err(|e| Error::csv(path, e))?;
    for r in runs {
        w.write_record([r.fraction.to_string(), r.seed.to_string(), r.auc.to_string(), r.accuracy.to_string()])
            .map_err(|e| Error::csv(path, e))?;
    }
    flush(path, w)
}

/// One row in the column order `Accuracy,AUC,Precision,Recall,F1`; an
/// undefined AUC is left empty.
pub fn write_metrics(path: &Path, m: &MetricsReport) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["Accuracy", "AUC", "Precision", "Recall", "F1"]).map_err(|e| Error::csv(path, e))?;
    w.write_record([
        m.accuracy.to_string(),
        m.auc.map_or(String::new(), |a| a.to_string()),
        m.precision.to_string(),
        m.recall.to_string(),
        m.f1.to_string(),
    ])
    .map_err(|e| Error::csv(path, e))?;
    flush(path, w)
}

pub fn write_predictions(path: &Path, examples: &[LabeledExample], probs: &[f64]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["point_id", "label", "probability"]).map_err(|e| Error::csv(path, e))?;
    for (e, p) in examples.iter().zip(probs) {
        w.write_record([e.point_id.clone(), u8::from(e.label).to_string(), p.to_string()])
            .map_err(|e| Error::csv(path, e))?;
    }
    flush(path, w)
}
