use std::collections::HashMap;
use std::fs::File;
use std::path::Path;

use csv::{ReaderBuilder, StringRecord, Writer};

use super::{ChargeSnippet, FleetDataset};
use crate::error::{Error, Result};
use crate::numcore::Tensor;

const DATA_KEYS: [&str; 3] = ["snippet_id", "vehicle_id", "step"];
const REQUIRED_CHANNELS: [&str; 3] = ["voltage", "current", "temperature"];
const META_KEYS: [&str; 2] = ["snippet_id", "label"];

fn parse_err(path: &Path, line: u64, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => parse_err(path, line, format!("{other:?}")),
    }
}

fn open(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(ReaderBuilder::new().has_headers(true).from_reader(file))
}

fn number(path: &Path, line: u64, rec: &StringRecord, idx: usize, col: &str) -> Result<f64> {
    let cell = rec.get(idx).unwrap_or("");
    match cell.trim().parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(parse_err(path, line, format!("column {col}: not a finite number: {cell:?}"))),
    }
}

fn check_header(path: &Path, header: &StringRecord, expected: &[&str]) -> Result<()> {
    for (i, want) in expected.iter().enumerate() {
        match header.get(i) {
            Some(got) if got.trim() == *want => {}
            got => {
                return Err(parse_err(
                    path,
                    1,
                    format!("missing column {want} (found {:?} at position {})", got.unwrap_or(""), i + 1),
                ))
            }
        }
    }
    Ok(())
}

struct RawSnippet {
    id: String,
    vehicle: String,
    first_line: u64,
    steps: Vec<f64>,
    rows: Vec<Vec<f64>>,
}

/// Linear interpolation of `rows` (sampled at strictly increasing `steps`)
/// onto `target_len` evenly spaced points spanning the same interval.
fn resample(steps: &[f64], rows: &[Vec<f64>], target_len: usize) -> Vec<f64> {
    let d = rows[0].len();
    let (t0, t1) = (steps[0], steps[steps.len() - 1]);
    let mut out = Vec::with_capacity(target_len * d);
    let mut seg = 0;
    for k in 0..target_len {
        if k + 1 == target_len && target_len > 1 {
            out.extend_from_slice(&rows[rows.len() - 1]);
            break;
        }
        let t = if target_len == 1 {
            t0
        } else {
            t0 + (t1 - t0) * k as f64 / (target_len - 1) as f64
        };
        while seg + 2 < steps.len() && steps[seg + 1] <= t {
            seg += 1;
        }
        let (a, b) = (steps[seg], steps[seg + 1]);
        let w = ((t - a) / (b - a)).clamp(0.0, 1.0);
        out.extend(
            rows[seg]
                .iter()
                .zip(&rows[seg + 1])
                .map(|(&x, &y)| if w == 0.0 { x } else { x + w * (y - x) }),
        );
    }
    out
}

/// Reads the long-format snippet CSV and the metadata CSV, resampling every
/// snippet to `target_len` rows.
pub fn load_csv(data_path: &Path, meta_path: &Path, target_len: usize) -> Result<FleetDataset> {
    if target_len == 0 {
        return Err(Error::InvalidArgument("target_len must be positive".into()));
    }
    let mut rdr = open(data_path)?;
    let header = rdr.headers().map_err(|e| csv_err(data_path, e))?.clone();
    check_header(data_path, &header, &DATA_KEYS)?;
    let channel_names: Vec<String> = header.iter().skip(3).map(|s| s.trim().to_string()).collect();
    for (i, want) in REQUIRED_CHANNELS.iter().enumerate() {
        if channel_names.get(i).map(String::as_str) != Some(*want) {
            return Err(parse_err(data_path, 1, format!("missing column {want}")));
        }
    }

    let mut raws: Vec<RawSnippet> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(data_path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != header.len() {
            return Err(parse_err(
                data_path,
                line,
                format!("expected {} fields, found {}", header.len(), rec.len()),
            ));
        }
        let id = rec[0].trim();
        let vehicle = rec[1].trim();
        let step = number(data_path, line, &rec, 2, "step")?;
        let values = (0..channel_names.len())
            .map(|c| number(data_path, line, &rec, 3 + c, &channel_names[c]))
            .collect::<Result<Vec<_>>>()?;
        let continuing = raws.last().is_some_and(|r| r.id == id);
        if !continuing {
            if index.contains_key(id) {
                return Err(parse_err(data_path, line, format!("rows of snippet {id} are not contiguous")));
            }
            index.insert(id.to_string(), raws.len());
            raws.push(RawSnippet {
                id: id.to_string(),
                vehicle: vehicle.to_string(),
                first_line: line,
                steps: Vec::new(),
                rows: Vec::new(),
            });
        }
        let raw = raws.last_mut().expect("pushed above");
        if raw.vehicle != vehicle {
            return Err(parse_err(data_path, line, format!("snippet {id} changes vehicle")));
        }
        if raw.steps.last().is_some_and(|&p| step <= p) {
            return Err(parse_err(data_path, line, format!("snippet {id}: steps not increasing")));
        }
        raw.steps.push(step);
        raw.rows.push(values);
    }
    if let Some(short) = raws.iter().find(|r| r.rows.len() < 2) {
        return Err(parse_err(
            data_path,
            short.first_line,
            format!("snippet {} has fewer than 2 rows", short.id),
        ));
    }

    let mut rdr = open(meta_path)?;
    let header = rdr.headers().map_err(|e| csv_err(meta_path, e))?.clone();
    check_header(meta_path, &header, &META_KEYS)?;
    let meta_names: Vec<String> = header.iter().skip(2).map(|s| s.trim().to_string()).collect();
    let mut meta: Vec<Option<(u8, Vec<f64>)>> = vec![None; raws.len()];
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(meta_path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != header.len() {
            return Err(parse_err(
                meta_path,
                line,
                format!("expected {} fields, found {}", header.len(), rec.len()),
            ));
        }
        let id = rec[0].trim();
        let slot = *index
            .get(id)
            .ok_or_else(|| parse_err(meta_path, line, format!("unknown snippet_id {id}")))?;
        let label = match rec[1].trim() {
            "0" => 0,
            "1" => 1,
            other => return Err(parse_err(meta_path, line, format!("label must be 0 or 1, got {other:?}"))),
        };
        let values = (0..meta_names.len())
            .map(|c| number(meta_path, line, &rec, 2 + c, &meta_names[c]))
            .collect::<Result<Vec<_>>>()?;
        if meta[slot].replace((label, values)).is_some() {
            return Err(parse_err(meta_path, line, format!("duplicate metadata for {id}")));
        }
    }

    let d = channel_names.len();
    let snippets = raws
        .into_iter()
        .zip(meta)
        .map(|(raw, m)| {
            let (label, values) = m.ok_or_else(|| {
                parse_err(meta_path, 0, format!("no metadata row for snippet {}", raw.id))
            })?;
            let data = resample(&raw.steps, &raw.rows, target_len);
            Ok(ChargeSnippet {
                snippet_id: raw.id,
                vehicle_id: raw.vehicle,
                channels: Tensor::matrix(target_len, d, data)?,
                meta: values,
                label,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    FleetDataset::new(snippets, channel_names, meta_names)
}

/// Writes `ds` in the formats read by [`load_csv`]; numbers use the shortest
/// representation that round-trips.
pub fn write_csv(ds: &FleetDataset, data_path: &Path, meta_path: &Path) -> Result<()> {
    let file = File::create(data_path).map_err(|e| Error::io(data_path, e))?;
    let mut w = Writer::from_writer(file);
    let mut header: Vec<&str> = DATA_KEYS.to_vec();
    header.extend(ds.channel_names().iter().map(String::as_str));
    w.write_record(&header).map_err(|e| csv_err(data_path, e))?;
    for s in ds.snippets() {
        for t in 0..s.channels.rows() {
            let mut rec = vec![s.snippet_id.clone(), s.vehicle_id.clone(), t.to_string()];
            rec.extend(s.channels.row(t).iter().map(f64::to_string));
            w.write_record(&rec).map_err(|e| csv_err(data_path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(data_path, e))?;

    let file = File::create(meta_path).map_err(|e| Error::io(meta_path, e))?;
    let mut w = Writer::from_writer(file);
    let mut header: Vec<&str> = META_KEYS.to_vec();
    header.extend(ds.meta_names().iter().map(String::as_str));
    w.write_record(&header).map_err(|e| csv_err(meta_path, e))?;
    for s in ds.snippets() {
        let mut rec = vec![s.snippet_id.clone(), s.label.to_string()];
        rec.extend(s.meta.iter().map(f64::to_string));
        w.write_record(&rec).map_err(|e| csv_err(meta_path, e))?;
    }
    w.flush().map_err(|e| Error::io(meta_path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn files(data: &str, meta: &str) -> (tempfile::TempDir, std::path::PathBuf, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let dp = dir.path().join("snippets.csv");
        let mp = dir.path().join("meta.csv");
        File::create(&dp).unwrap().write_all(data.as_bytes()).unwrap();
        File::create(&mp).unwrap().write_all(meta.as_bytes()).unwrap();
        (dir, dp, mp)
    }

    const META: &str = "snippet_id,label,mileage_km,cycle_count\ns1,0,1200,30\n";

    #[test]
    fn identity_resample_keeps_values() {
        let data = "snippet_id,vehicle_id,step,voltage,current,temperature\n\
                    s1,v1,0,3.6,2,25\ns1,v1,1,3.7,2,25.5\ns1,v1,2,3.8,1.5,26\ns1,v1,3,3.9,1,26.2\n";
        let (_d, dp, mp) = files(data, META);
        let ds = load_csv(&dp, &mp, 4).unwrap();
        let s = &ds.snippets()[0];
        assert_eq!(s.channels.row(2), &[3.8, 1.5, 26.0]);
        assert_eq!(s.channels.row(3), &[3.9, 1.0, 26.2]);
        assert_eq!(s.meta, vec![1200.0, 30.0]);
        assert_eq!(ds.meta_names(), &["mileage_km", "cycle_count"]);
    }

    #[test]
    fn two_rows_to_three_gives_midpoint() {
        let data = "snippet_id,vehicle_id,step,voltage,current,temperature\r\n\
                    s1,v1,0,0,1,20\r\ns1,v1,1,1,3,22\r\n";
        let (_d, dp, mp) = files(data, META);
        let ds = load_csv(&dp, &mp, 3).unwrap();
        let v: Vec<f64> = (0..3).map(|t| ds.snippets()[0].channels.get(t, 0)).collect();
        assert_eq!(v, vec![0.0, 0.5, 1.0]);
        assert_eq!(ds.snippets()[0].channels.get(1, 2), 21.0);
    }

    #[test]
    fn resampling_preserves_endpoints() {
        let steps: Vec<f64> = (0..7).map(f64::from).collect();
        let rows: Vec<Vec<f64>> = (0..7).map(|i| vec![(i as f64 * 0.37).sin(), 1.0 / (i as f64 + 0.3)]).collect();
        for target in [2, 5, 7, 13, 128] {
            let out = resample(&steps, &rows, target);
            assert_eq!(&out[..2], rows[0].as_slice());
            assert_eq!(&out[out.len() - 2..], rows[6].as_slice());
        }
    }

    #[test]
    fn non_numeric_cell_names_line() {
        let data = "snippet_id,vehicle_id,step,voltage,current,temperature\n\
                    s1,v1,0,3.6,2,25\ns1,v1,1,abc,2,25\n";
        let (_d, dp, mp) = files(data, META);
        match load_csv(&dp, &mp, 4) {
            Err(Error::Parse { line, msg, .. }) => {
                assert_eq!(line, 3);
                assert!(msg.contains("voltage"), "{msg}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn structural_errors() {
        let hdr = "snippet_id,vehicle_id,step,voltage,current,temperature\n";
        let (_d, dp, mp) = files("snippet_id,vehicle_id,step,voltage,current\ns1,v1,0,1,2\n", META);
        assert!(matches!(load_csv(&dp, &mp, 4), Err(Error::Parse { line: 1, .. })));
        let (_d, dp, mp) = files(&format!("{hdr}s1,v1,0,1,2,3\n"), META);
        assert!(matches!(load_csv(&dp, &mp, 4), Err(Error::Parse { line: 2, .. })));
        let (_d, dp, mp) = files(
            &format!("{hdr}s1,v1,0,1,2,3\ns1,v1,1,1,2,3\n"),
            "snippet_id,label,mileage_km,cycle_count\ns9,0,1,1\n",
        );
        assert!(matches!(load_csv(&dp, &mp, 4), Err(Error::Parse { line: 2, .. })));
        let missing = Path::new("/nonexistent/snippets.csv");
        assert!(matches!(load_csv(missing, &mp, 4), Err(Error::Io { .. })));
    }

    #[test]
    fn write_then_load_round_trips() {
        let rows = |o: f64| (0..5).map(|t| vec![3.5 + 0.1 * t as f64 + o, 2.0 / 3.0, 25.0 + o]).collect::<Vec<_>>();
        let ds = FleetDataset::new(
            vec![
                super::super::tests::snippet("a", "v1", rows(0.0), vec![100.5, 3.0], 0),
                super::super::tests::snippet("b", "v2", rows(0.01), vec![1e5 / 3.0, 7.0], 1),
            ],
            REQUIRED_CHANNELS.iter().map(|s| s.to_string()).collect(),
            vec!["mileage_km".into(), "cycle_count".into()],
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (dp, mp) = (dir.path().join("d.csv"), dir.path().join("m.csv"));
        write_csv(&ds, &dp, &mp).unwrap();
        assert_eq!(load_csv(&dp, &mp, 5).unwrap(), ds);
    }
}
