//! Field and partition files: one JSON header line followed by the payload.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{GbdError, Result};
use crate::field::{CaccioppoliPartition, DisplacementField, Domain, JumpFacet};

pub const FIELD_SCHEMA: &str = "gbdlab.field/1";
pub const PARTITION_SCHEMA: &str = "gbdlab.partition/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Payload {
    /// Raw little-endian `f64`, `dim` components per cell.
    F64le,
    /// Text rows `u_x,u_y[,u_z]` after a column header.
    Csv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct GridHeader {
    dim: usize,
    min: Vec<f64>,
    max: Vec<f64>,
    h: f64,
}

impl GridHeader {
    fn of(domain: &Domain) -> Self {
        let b = domain.bounds();
        let d = domain.dim();
        GridHeader { dim: d, min: (0..d).map(|a| b.min[a]).collect(), max: (0..d).map(|a| b.max[a]).collect(), h: domain.h() }
    }

    fn domain(&self) -> Result<Domain> {
        Domain::new(self.dim, &self.min, &self.max, self.h)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct FieldHeader {
    schema: String,
    #[serde(flatten)]
    grid: GridHeader,
    payload: Payload,
    facets: Vec<JumpFacet>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct PartitionHeader {
    schema: String,
    #[serde(flatten)]
    grid: GridHeader,
    pieces: usize,
    perimeter: f64,
}

fn check_schema(found: &str, expected: &str) -> Result<()> {
    if found != expected {
        return Err(GbdError::Format(format!("expected schema {expected}, found {found}")));
    }
    Ok(())
}

fn header_line<R: BufRead>(r: &mut R) -> Result<String> {
    let mut line = String::new();
    if r.read_line(&mut line)? == 0 {
        return Err(GbdError::Format("empty file".into()));
    }
    Ok(line)
}

const AXES: [&str; 3] = ["u_x", "u_y", "u_z"];

/// Writes cell values and facets; an attached sampler is not stored.
pub fn write_field<W: Write>(mut w: W, field: &DisplacementField, payload: Payload) -> Result<()> {
    let header = FieldHeader {
        schema: FIELD_SCHEMA.into(),
        grid: GridHeader::of(field.domain()),
        payload,
        facets: field.facets().to_vec(),
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    match payload {
        Payload::F64le => {
            for v in field.values() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Payload::Csv => {
            let d = field.dim();
            let mut csv = csv::Writer::from_writer(w);
            csv.write_record(&AXES[..d]).map_err(csv_err)?;
            for row in field.values().chunks(d) {
                // shortest round-trip formatting
                csv.write_record(row.iter().map(|v| v.to_string())).map_err(csv_err)?;
            }
            csv.flush()?;
        }
    }
    Ok(())
}

fn csv_err(e: csv::Error) -> GbdError {
    GbdError::Format(e.to_string())
}

pub fn read_field<R: BufRead>(mut r: R) -> Result<DisplacementField> {
    let header: FieldHeader = serde_json::from_str(&header_line(&mut r)?)?;
    check_schema(&header.schema, FIELD_SCHEMA)?;
    let domain = header.grid.domain()?;
    let n = domain.cell_count() * domain.dim();
    let values = match header.payload {
        Payload::F64le => {
            let mut bytes = Vec::with_capacity(n * 8);
            r.read_to_end(&mut bytes)?;
            if bytes.len() != n * 8 {
                return Err(GbdError::Format(format!("expected {} payload bytes, found {}", n * 8, bytes.len())));
            }
            bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect()
        }
        Payload::Csv => {
            let mut values = Vec::with_capacity(n);
            for rec in csv::Reader::from_reader(r).records() {
                let rec = rec.map_err(csv_err)?;
                if rec.len() != domain.dim() {
                    return Err(GbdError::Format(format!("row with {} columns in a {}-d field", rec.len(), domain.dim())));
                }
                for s in rec.iter() {
                    values.push(s.trim().parse::<f64>().map_err(|e| GbdError::Format(format!("bad value {s:?}: {e}")))?);
                }
            }
            values
        }
    };
    DisplacementField::new(domain, values, header.facets)
}

/// Writes the labels, one per line, after a header carrying the piece count and perimeter.
pub fn write_partition<W: Write>(mut w: W, partition: &CaccioppoliPartition) -> Result<()> {
    let header = PartitionHeader {
        schema: PARTITION_SCHEMA.into(),
        grid: GridHeader::of(partition.domain()),
        pieces: partition.piece_count(),
        perimeter: partition.perimeter(),
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for l in partition.labels() {
        writeln!(w, "{l}")?;
    }
    Ok(())
}

pub fn read_partition<R: BufRead>(mut r: R) -> Result<CaccioppoliPartition> {
    let header: PartitionHeader = serde_json::from_str(&header_line(&mut r)?)?;
    check_schema(&header.schema, PARTITION_SCHEMA)?;
    let domain = header.grid.domain()?;
    let mut labels = Vec::with_capacity(domain.cell_count());
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        labels.push(line.trim().parse::<u32>().map_err(|e| GbdError::Format(format!("bad label {line:?}: {e}")))?);
    }
    let p = CaccioppoliPartition::new(domain, labels)?;
    if p.piece_count() != header.pieces {
        return Err(GbdError::Format(format!("header lists {} pieces, labels use {}", header.pieces, p.piece_count())));
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;

    fn sample() -> DisplacementField {
        let d = Domain::new(2, &[0.0, -0.5], &[1.0, 0.5], 0.125).unwrap();
        let f = JumpFacet::segment(Vec3::new(0.5, -0.5, 0.0), Vec3::new(0.5, 0.5, 0.0), Vec3::new(1.0 / 3.0, 0.0, 0.0)).unwrap();
        DisplacementField::grid_from_fn(d, &|x| Vec3::new(x.x.sin() / 7.0, (x.y * 1e-3).exp(), 0.0), vec![f]).unwrap()
    }

    #[test]
    fn both_payloads_round_trip_exactly() {
        let f = sample();
        for payload in [Payload::F64le, Payload::Csv] {
            let mut buf = Vec::new();
            write_field(&mut buf, &f, payload).unwrap();
            let g = read_field(buf.as_slice()).unwrap();
            assert_eq!(g.values(), f.values());
            assert_eq!(g.facets(), f.facets());
            assert_eq!(g.domain(), f.domain());
        }
    }

    #[test]
    fn rejects_other_schema_and_short_payload() {
        let f = sample();
        let mut buf = Vec::new();
        write_field(&mut buf, &f, Payload::F64le).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(read_field(buf.as_slice()), Err(GbdError::Format(_))));
        let bad = br#"{"schema":"other/1","dim":2,"min":[0,0],"max":[1,1],"h":0.5,"payload":"csv","facets":[]}"#;
        assert!(matches!(read_field(&bad[..]), Err(GbdError::Format(_))));
    }

    #[test]
    fn partition_round_trip() {
        let d = Domain::unit_square(4);
        let labels = (0..16).map(|c| if c % 4 < 2 { 1 } else { 2 }).collect();
        let p = CaccioppoliPartition::new(d, labels).unwrap();
        let mut buf = Vec::new();
        write_partition(&mut buf, &p).unwrap();
        assert_eq!(read_partition(buf.as_slice()).unwrap(), p);
    }
}
