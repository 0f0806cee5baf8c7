//! Point-set CSV files, normalization sidecars, mask files, and atomic
//! writes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use pif_core::data::Normalization;
use pif_core::flow::{Condition, EntityShape, MaskSpec, PointSet};

use crate::error::{CliError, Result};

const NORMALIZATION_HEADER: &str = "pif-normalization 1";

/// Write `bytes` to a sibling temp file, then rename it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let name = path
        .file_name()
        .ok_or_else(|| CliError::Usage(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    std::fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        CliError::io(path, e)
    })
}

/// Sidecar path of a data file: same stem, `.norm` extension.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("norm")
}

pub fn normalization_to_text(n: &Normalization) -> String {
    let join = |v: &[f64]| v.iter().map(|x| format!("{x:.16e}")).collect::<Vec<_>>().join(" ");
    format!(
        "{NORMALIZATION_HEADER}\ncenter = {}\nscale = {}\n",
        join(&n.center),
        join(&n.scale)
    )
}

pub fn normalization_from_text(text: &str, path: &Path) -> Result<Normalization> {
    let mut lines = text.lines();
    if lines.next() != Some(NORMALIZATION_HEADER) {
        return Err(CliError::format(path, "missing normalization header"));
    }
    let mut center = None;
    let mut scale = None;
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::format(path, format!("bad line {line:?}")))?;
        let values = v
            .split_whitespace()
            .map(|x| x.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| CliError::format(path, e.to_string()))?;
        match k.trim() {
            "center" => center = Some(values),
            "scale" => scale = Some(values),
            other => return Err(CliError::format(path, format!("unknown key {other:?}"))),
        }
    }
    match (center, scale) {
        (Some(c), Some(s)) => Ok(Normalization::new(c, s)?),
        _ => Err(CliError::format(path, "normalization needs center and scale")),
    }
}

pub fn write_normalization(path: &Path, n: &Normalization) -> Result<()> {
    write_atomic(path, normalization_to_text(n).as_bytes())
}

pub fn read_normalization(path: &Path) -> Result<Normalization> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    normalization_from_text(&text, path)
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub entity: usize,
    pub point: usize,
    pub fixed: Option<(bool, bool)>,
    pub coords: Vec<f64>,
    pub class: Option<usize>,
}

/// Parsed point or mask file.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub dim: usize,
    pub typed: bool,
    pub rows: Vec<Row>,
}

fn header(dim: usize, typed: bool, mask: bool) -> Vec<String> {
    let mut h = vec!["entity_id".to_string(), "point_id".to_string()];
    if mask {
        h.push("fixed_position".into());
        h.push("fixed_type".into());
    }
    h.extend((0..dim).map(|i| format!("x{i}")));
    if typed {
        h.push("type".into());
    }
    h
}

fn parse_flag(s: &str, path: &Path) -> Result<bool> {
    match s {
        "0" => Ok(false),
        "1" => Ok(true),
        _ => Err(CliError::format(path, format!("mask flag must be 0 or 1, got {s:?}"))),
    }
}

/// Read a point CSV (`mask = false`) or a mask/context CSV (`mask = true`).
pub fn read_table(path: &Path, mask: bool) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let head: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let typed = head.last().map(|h| h == "type").unwrap_or(false);
    let lead = if mask { 4 } else { 2 };
    let dim = head.len().saturating_sub(lead + typed as usize);
    if dim == 0 || head != header(dim, typed, mask) {
        return Err(CliError::schema(
            path,
            format!("unexpected header {:?}, expected {}", head.join(","), header(2, false, mask).join(",") + "[,type]"),
        ));
    }
    let mut rows = Vec::new();
    for (n, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = n + 2;
        let bad = |what: &str| CliError::format(path, format!("line {line}: invalid {what}"));
        let field = |i: usize| record.get(i).map(str::trim).unwrap_or("");
        let entity = field(0).parse().map_err(|_| bad("entity_id"))?;
        let point = field(1).parse().map_err(|_| bad("point_id"))?;
        let fixed = if mask {
            Some((parse_flag(field(2), path)?, parse_flag(field(3), path)?))
        } else {
            None
        };
        let coords = (0..dim)
            .map(|i| field(lead + i).parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| bad("coordinate")))
            .collect::<Result<Vec<_>>>()?;
        let class = if typed {
            Some(field(lead + dim).parse().map_err(|_| bad("type"))?)
        } else {
            None
        };
        rows.push(Row {
            entity,
            point,
            fixed,
            coords,
            class,
        });
    }
    Ok(Table { dim, typed, rows })
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(path, io),
        other => CliError::format(path, format!("{other:?}")),
    }
}

impl Table {
    /// All coordinates as 2-D points; errors unless `dim == 2`.
    pub fn points_2d(&self, path: &Path) -> Result<Vec<[f64; 2]>> {
        if self.dim != 2 {
            return Err(CliError::schema(path, format!("expected 2-D points, found {} columns", self.dim)));
        }
        Ok(self.rows.iter().map(|r| [r.coords[0], r.coords[1]]).collect())
    }

    pub fn classes(&self) -> Option<Vec<usize>> {
        self.typed.then(|| self.rows.iter().map(|r| r.class.unwrap_or(0)).collect())
    }

    /// Group rows into entities of `shape`. Entity ids must run 0, 1, ...
    /// and point ids 0..points within each entity, in order.
    pub fn entities(&self, shape: EntityShape, path: &Path) -> Result<Vec<(PointSet, Option<MaskSpec>)>> {
        if self.dim != shape.dim || self.typed != shape.is_typed() {
            return Err(CliError::schema(
                path,
                format!(
                    "file has dim {} typed {}, expected dim {} typed {}",
                    self.dim,
                    self.typed,
                    shape.dim,
                    shape.is_typed()
                ),
            ));
        }
        if self.rows.len() % shape.points != 0 {
            return Err(CliError::schema(
                path,
                format!("{} rows is not a multiple of {} points per entity", self.rows.len(), shape.points),
            ));
        }
        let mut out = Vec::with_capacity(self.rows.len() / shape.points);
        for (e, chunk) in self.rows.chunks(shape.points).enumerate() {
            let mut positions = Array2::zeros((shape.points, shape.dim));
            let mut classes = Vec::with_capacity(shape.points);
            let mut mask = MaskSpec::empty(shape.points);
            for (p, row) in chunk.iter().enumerate() {
                if row.entity != e || row.point != p {
                    return Err(CliError::schema(
                        path,
                        format!("expected entity {e} point {p}, found entity {} point {}", row.entity, row.point),
                    ));
                }
                positions.row_mut(p).assign(&ndarray::ArrayView1::from(&row.coords[..]));
                if let Some(c) = row.class {
                    if c >= shape.classes {
                        return Err(CliError::schema(path, format!("type {c} outside 0..{}", shape.classes)));
                    }
                    classes.push(c);
                }
                if let Some((fp, ft)) = row.fixed {
                    mask.fixed_position[p] = fp;
                    mask.fixed_type[p] = ft;
                }
            }
            let entity = if shape.is_typed() {
                PointSet::with_classes(positions, &classes, shape.classes)?
            } else {
                PointSet::untyped(positions)?
            };
            out.push((entity, self.rows[0].fixed.is_some().then_some(mask)));
        }
        Ok(out)
    }
}

pub fn read_entities(path: &Path, shape: EntityShape) -> Result<Vec<PointSet>> {
    let table = read_table(path, false)?;
    if table.rows.is_empty() {
        return Err(CliError::schema(path, "no data rows"));
    }
    Ok(table.entities(shape, path)?.into_iter().map(|(e, _)| e).collect())
}

pub fn read_conditions(path: &Path, shape: EntityShape) -> Result<Vec<Condition>> {
    let table = read_table(path, true)?;
    if table.rows.is_empty() {
        return Err(CliError::schema(path, "no mask rows"));
    }
    Ok(table
        .entities(shape, path)?
        .into_iter()
        .map(|(context, mask)| Condition {
            mask: mask.expect("mask table"),
            context,
        })
        .collect())
}

fn push_coords(s: &mut String, e: &PointSet, p: usize) {
    for v in e.positions().row(p) {
        let _ = write!(s, ",{v}");
    }
    if let Some(c) = e.class_of(p) {
        let _ = write!(s, ",{c}");
    }
}

pub fn entities_to_csv(entities: &[PointSet]) -> String {
    let (dim, typed) = entities.first().map(|e| (e.dim(), e.types().is_some())).unwrap_or((2, false));
    let mut s = header(dim, typed, false).join(",");
    s.push('\n');
    for (i, e) in entities.iter().enumerate() {
        for p in 0..e.num_points() {
            let _ = write!(s, "{i},{p}");
            push_coords(&mut s, e, p);
            s.push('\n');
        }
    }
    s
}

pub fn conditions_to_csv(conditions: &[Condition]) -> String {
    let (dim, typed) = conditions
        .first()
        .map(|c| (c.context.dim(), c.context.types().is_some()))
        .unwrap_or((2, false));
    let mut s = header(dim, typed, true).join(",");
    s.push('\n');
    for (i, c) in conditions.iter().enumerate() {
        for p in 0..c.context.num_points() {
            let _ = write!(
                s,
                "{i},{p},{},{}",
                c.mask.fixed_position[p] as u8, c.mask.fixed_type[p] as u8
            );
            push_coords(&mut s, &c.context, p);
            s.push('\n');
        }
    }
    s
}

pub fn write_entities(path: &Path, entities: &[PointSet]) -> Result<()> {
    write_atomic(path, entities_to_csv(entities).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn normalization_text_round_trip() {
        let n = Normalization::new(vec![0.1, -3.0e-7], vec![1.0 / 3.0, 2.5]).unwrap();
        let text = normalization_to_text(&n);
        let back = normalization_from_text(&text, Path::new("x")).unwrap();
        assert_eq!(back, n);
        assert_eq!(normalization_to_text(&back), text);
    }

    #[test]
    fn csv_layout_for_point_sets() {
        let e = PointSet::with_classes(array![[0.5, 1.0], [-2.0, 0.25]], &[1, 0], 3).unwrap();
        let text = entities_to_csv(&[e.clone(), e]);
        assert_eq!(
            text,
            "entity_id,point_id,x0,x1,type\n0,0,0.5,1,1\n0,1,-2,0.25,0\n1,0,0.5,1,1\n1,1,-2,0.25,0\n"
        );
    }

    #[test]
    fn atomic_write_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/a.csv");
        write_atomic(&path, b"x").unwrap();
        write_atomic(&path, b"yz").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"yz");
        assert_eq!(std::fs::read_dir(path.parent().unwrap()).unwrap().count(), 1);
    }
}
