use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::{
    single_level_dataset, two_level_dataset, ClusterRecord, CovariateNames, Depth, HierarchicalDataset,
    IndependentUnit, ObservationRecord, SuperclusterRecord, PSEUDO_PREFIX,
};
use crate::error::{Error, Result};

const HEADER_ROW: usize = 1;

fn ingest(row: usize, column: &str, message: impl Into<String>) -> Error {
    Error::Ingestion {
        row,
        column: column.to_string(),
        message: message.into(),
    }
}

#[derive(Default)]
struct Layout {
    unit_id: Option<usize>,
    cluster_id: Option<usize>,
    supercluster_id: Option<usize>,
    y: Option<usize>,
    w_unit: Option<usize>,
    w_cluster: Option<usize>,
    w_super: Option<usize>,
    x: Vec<(usize, usize)>,
    z: Vec<(usize, usize)>,
    v: Vec<(usize, usize)>,
}

fn covariate_slot(name: &str) -> Option<(char, usize)> {
    let mut chars = name.chars();
    let prefix = chars.next()?;
    if !matches!(prefix, 'x' | 'z' | 'v') {
        return None;
    }
    let digits = chars.as_str();
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) || digits.starts_with('0') {
        return None;
    }
    digits.parse().ok().map(|k| (prefix, k))
}

impl Layout {
    fn from_header(header: &csv::StringRecord) -> Result<Self> {
        let mut l = Layout::default();
        for (i, name) in header.iter().enumerate() {
            let slot = match name {
                "unit_id" => &mut l.unit_id,
                "cluster_id" => &mut l.cluster_id,
                "supercluster_id" => &mut l.supercluster_id,
                "y" => &mut l.y,
                "w_unit" => &mut l.w_unit,
                "w_cluster" => &mut l.w_cluster,
                "w_super" => &mut l.w_super,
                other => {
                    let (prefix, k) =
                        covariate_slot(other).ok_or_else(|| ingest(HEADER_ROW, other, "unknown column"))?;
                    let list = match prefix {
                        'x' => &mut l.x,
                        'z' => &mut l.z,
                        _ => &mut l.v,
                    };
                    if list.iter().any(|&(kk, _)| kk == k) {
                        return Err(ingest(HEADER_ROW, other, "duplicate column"));
                    }
                    list.push((k, i));
                    continue;
                }
            };
            if slot.replace(i).is_some() {
                return Err(ingest(HEADER_ROW, name, "duplicate column"));
            }
        }
        for (prefix, list) in [("x", &mut l.x), ("z", &mut l.z), ("v", &mut l.v)] {
            list.sort_unstable();
            for (expected, &(k, _)) in (1..).zip(list.iter()) {
                if k != expected {
                    return Err(ingest(HEADER_ROW, &format!("{prefix}{expected}"), "missing column"));
                }
            }
        }
        if l.unit_id.is_none() {
            return Err(ingest(HEADER_ROW, "unit_id", "missing required column"));
        }
        if l.y.is_none() {
            return Err(ingest(HEADER_ROW, "y", "missing required column"));
        }
        if l.supercluster_id.is_some() && l.cluster_id.is_none() {
            return Err(ingest(
                HEADER_ROW,
                "cluster_id",
                "missing column (required with supercluster_id)",
            ));
        }
        if l.supercluster_id.is_none() && !l.v.is_empty() {
            return Err(ingest(
                HEADER_ROW,
                "supercluster_id",
                "missing column (required with v covariates)",
            ));
        }
        Ok(l)
    }

    fn depth(&self) -> Depth {
        match (self.cluster_id, self.supercluster_id) {
            (Some(_), Some(_)) => Depth::Three,
            (Some(_), None) => Depth::Two,
            _ => Depth::One,
        }
    }

    fn names(&self) -> CovariateNames {
        CovariateNames::numbered(self.x.len(), self.z.len(), self.v.len())
    }
}

struct Row<'a> {
    record: &'a csv::StringRecord,
    header: &'a csv::StringRecord,
    line: usize,
}

impl Row<'_> {
    fn text(&self, col: usize) -> Result<String> {
        let value = self.record.get(col).unwrap_or("");
        if value.is_empty() {
            return Err(ingest(self.line, &self.header[col], "empty identifier"));
        }
        Ok(value.to_string())
    }

    fn number(&self, col: usize) -> Result<f64> {
        let raw = self.record.get(col).unwrap_or("").trim();
        let v: f64 = raw.parse().map_err(|_| {
            ingest(
                self.line,
                &self.header[col],
                format!("cannot parse `{raw}` as a number"),
            )
        })?;
        if !v.is_finite() {
            return Err(ingest(
                self.line,
                &self.header[col],
                format!("non-finite value `{raw}`"),
            ));
        }
        Ok(v)
    }

    fn weight(&self, col: Option<usize>) -> Result<f64> {
        let Some(col) = col else { return Ok(1.0) };
        let w = self.number(col)?;
        if w <= 0.0 {
            return Err(ingest(
                self.line,
                &self.header[col],
                format!("weight must be positive, got {w}"),
            ));
        }
        Ok(w)
    }

    fn covariates(&self, cols: &[(usize, usize)]) -> Result<Vec<f64>> {
        cols.iter().map(|&(_, c)| self.number(c)).collect()
    }
}

/// Checks that a repeated upper-level record agrees with the first sighting.
fn check_consistent(
    row: &Row,
    first: (&[f64], f64),
    now: (&[f64], f64),
    covariate_cols: &[(usize, usize)],
    weight_col: Option<usize>,
    what: &str,
) -> Result<()> {
    for ((a, b), &(_, col)) in first.0.iter().zip(now.0).zip(covariate_cols) {
        if a != b {
            return Err(ingest(
                row.line,
                &row.header[col],
                format!("inconsistent value within {what}"),
            ));
        }
    }
    if first.1 != now.1 {
        let col = weight_col.expect("weights differ only when read from a column");
        return Err(ingest(
            row.line,
            &row.header[col],
            format!("inconsistent weight within {what}"),
        ));
    }
    Ok(())
}

/// Reads a dataset from a CSV file.
pub fn read_csv(path: impl AsRef<Path>) -> Result<HierarchicalDataset> {
    read_csv_from(File::open(path)?)
}

/// Reads a dataset in the CSV schema from any reader.
///
/// Depth follows the identifier columns present. Identifiers starting with
/// `pseudo:` mark pseudo records.
pub fn read_csv_from<R: Read>(reader: R) -> Result<HierarchicalDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    let layout = Layout::from_header(&header)?;
    let depth = layout.depth();
    let names = layout.names();

    let mut obs = Vec::new();
    let mut clusters: Vec<ClusterRecord> = Vec::new();
    let mut cluster_index: HashMap<String, usize> = HashMap::new();
    let mut supers: Vec<SuperclusterRecord> = Vec::new();
    let mut super_index: HashMap<String, usize> = HashMap::new();
    let mut singles = Vec::new();

    let mut record = csv::StringRecord::new();
    let mut line = HEADER_ROW;
    while rdr.read_record(&mut record)? {
        line += 1;
        if record.len() != header.len() {
            return Err(ingest(
                line,
                "",
                format!("expected {} fields, found {}", header.len(), record.len()),
            ));
        }
        let row = Row {
            record: &record,
            header: &header,
            line,
        };
        let unit_id = row.text(layout.unit_id.expect("checked"))?;
        let y = row.number(layout.y.expect("checked"))?;
        let x_unit = row.covariates(&layout.x)?;
        let w_unit = row.weight(layout.w_unit)?;
        let x_cluster = row.covariates(&layout.z)?;
        let w_cluster = row.weight(layout.w_cluster)?;
        let x_super = row.covariates(&layout.v)?;
        let w_super = row.weight(layout.w_super)?;

        let Some(ccol) = layout.cluster_id else {
            singles.push(IndependentUnit {
                unit_id,
                y,
                x_unit,
                x_cluster,
                x_super,
                w_unit,
                w_cluster,
                w_super,
            });
            continue;
        };
        let cluster_id = row.text(ccol)?;
        let supercluster_id = match layout.supercluster_id {
            Some(scol) => row.text(scol)?,
            None => cluster_id.clone(),
        };

        if layout.supercluster_id.is_some() {
            match super_index.get(&supercluster_id) {
                Some(&k) => check_consistent(
                    &row,
                    (&supers[k].x_super, supers[k].w_super),
                    (&x_super, w_super),
                    &layout.v,
                    layout.w_super,
                    "a supercluster",
                )?,
                None => {
                    super_index.insert(supercluster_id.clone(), supers.len());
                    supers.push(SuperclusterRecord {
                        is_pseudo: supercluster_id.starts_with(PSEUDO_PREFIX),
                        supercluster_id: supercluster_id.clone(),
                        x_super,
                        w_super,
                    });
                }
            }
        } else if w_super != 1.0 && layout.w_super.is_some() {
            return Err(ingest(line, "w_super", "needs a supercluster_id column"));
        }

        match cluster_index.get(&cluster_id) {
            Some(&j) => {
                let c = &clusters[j];
                if c.supercluster_id != supercluster_id {
                    let col = layout.supercluster_id.expect("ids differ only when read");
                    return Err(ingest(
                        line,
                        &header[col],
                        format!(
                            "cluster `{cluster_id}` appears under superclusters `{}` and `{supercluster_id}`",
                            c.supercluster_id
                        ),
                    ));
                }
                check_consistent(
                    &row,
                    (&c.x_cluster, c.w_cluster),
                    (&x_cluster, w_cluster),
                    &layout.z,
                    layout.w_cluster,
                    "a cluster",
                )?;
            }
            None => {
                cluster_index.insert(cluster_id.clone(), clusters.len());
                clusters.push(ClusterRecord {
                    is_pseudo: cluster_id.starts_with(PSEUDO_PREFIX),
                    cluster_id: cluster_id.clone(),
                    supercluster_id: supercluster_id.clone(),
                    x_cluster,
                    w_cluster,
                });
            }
        }
        obs.push(ObservationRecord {
            unit_id,
            cluster_id,
            supercluster_id,
            y,
            x_unit,
            w_unit,
        });
    }

    match depth {
        Depth::Three => HierarchicalDataset::new(depth, names, obs, clusters, supers),
        Depth::Two => two_level_dataset(names, obs, clusters),
        Depth::One => single_level_dataset(names, singles),
    }
}

/// Writes a dataset in the CSV schema; columns follow its native depth.
pub fn write_csv(data: &HierarchicalDataset, path: impl AsRef<Path>) -> Result<()> {
    let file = File::create(path)?;
    write_csv_to(data, std::io::BufWriter::new(file))
}

pub fn write_csv_to<W: Write>(data: &HierarchicalDataset, writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    let depth = data.depth();
    let names = data.names();

    let mut header = vec!["unit_id"];
    if depth >= Depth::Two {
        header.push("cluster_id");
    }
    if depth == Depth::Three {
        header.push("supercluster_id");
    }
    header.extend(["y", "w_unit", "w_cluster", "w_super"]);
    header.extend(names.unit.iter().map(String::as_str));
    header.extend(names.cluster.iter().map(String::as_str));
    header.extend(names.supercluster.iter().map(String::as_str));
    w.write_record(&header)?;

    let mut fields: Vec<String> = Vec::with_capacity(header.len());
    for o in data.observations() {
        let c = data.cluster(&o.cluster_id).expect("validated");
        let s = data.supercluster(&o.supercluster_id).expect("validated");
        fields.clear();
        fields.push(o.unit_id.clone());
        if depth >= Depth::Two {
            fields.push(o.cluster_id.clone());
        }
        if depth == Depth::Three {
            fields.push(o.supercluster_id.clone());
        }
        for v in [o.y, o.w_unit, c.w_cluster, s.w_super]
            .iter()
            .chain(&o.x_unit)
            .chain(&c.x_cluster)
            .chain(&s.x_super)
        {
            fields.push(v.to_string());
        }
        w.write_record(&fields)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::super::testutil::*;
    use super::*;

    fn read(text: &str) -> Result<HierarchicalDataset> {
        read_csv_from(text.as_bytes())
    }

    fn round_trip(d: &HierarchicalDataset) -> HierarchicalDataset {
        let mut buf = Vec::new();
        write_csv_to(d, &mut buf).unwrap();
        read_csv_from(buf.as_slice()).unwrap()
    }

    #[test]
    fn depth_from_columns() {
        let d = read("unit_id,cluster_id,y\na,1,0.5\nb,2,1\nc,3,2\n").unwrap();
        assert_eq!(d.depth(), Depth::Two);
        assert_eq!(d.n_clusters(), 3);
        let d = read("unit_id,y,w_cluster\na,0.5,4\nb,1,4\n").unwrap();
        assert_eq!(d.depth(), Depth::One);
        assert!(d.clusters().all(|c| c.w_cluster == 4.0 && c.is_pseudo));
    }

    #[test]
    fn inconsistent_cluster_covariate() {
        let err = read("unit_id,cluster_id,y,z1\na,1,0,1.0\nb,1,0,2.0\n").unwrap_err();
        match err {
            Error::Ingestion { row, column, .. } => {
                assert_eq!(row, 3);
                assert_eq!(column, "z1");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ingestion_errors_name_column() {
        let err = read("unit_id,cluster_id\na,1\n").unwrap_err();
        assert!(err.to_string().contains("`y`"), "{err}");
        let err = read("unit_id,y\na,abc\n").unwrap_err();
        assert!(matches!(err, Error::Ingestion { row: 2, .. }));
        let err = read("unit_id,y,w_unit\na,1,-2\n").unwrap_err();
        assert!(matches!(err, Error::Ingestion { ref column, .. } if column == "w_unit"));
        let err = read("unit_id,y,q\na,1,2\n").unwrap_err();
        assert!(matches!(err, Error::Ingestion { row: 1, .. }));
        let err = read("unit_id,y,x2\na,1,2\n").unwrap_err();
        assert!(err.to_string().contains("x1"));
    }

    #[test]
    fn round_trips() {
        for d in [
            three_level("a", &[&[2, 1], &[3]]),
            two_level("b", &[1, 4]),
            one_level("c", 3, 2.5),
        ] {
            assert_eq!(round_trip(&d), d);
        }
        let combined = super::super::combine_datasets(&[
            three_level("a", &[&[2, 1]]),
            two_level("b", &[2]),
            one_level("c", 2, 4.0),
        ])
        .unwrap();
        let back = round_trip(&combined);
        assert_eq!(back, combined);
        assert_eq!(round_trip(&back), back);
    }
}
