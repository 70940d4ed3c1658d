//! ASCII PLY reader/writer for vertex-only clouds.
//!
//! Coordinates are written in shortest round-trip decimal form, so a cloud
//! survives write → read bit-exactly. An optional per-vertex `quality`
//! property carries scalar annotations such as per-vertex error.

use std::fmt::Write as _;
use std::path::Path;

use super::PointCloud;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct PlyCloud {
    pub cloud: PointCloud,
    pub quality: Option<Vec<f64>>,
}

pub fn write_ply(path: &Path, cloud: &PointCloud, quality: Option<&[f64]>) -> Result<()> {
    if let Some(q) = quality {
        if q.len() != cloud.len() {
            return Err(Error::invalid(format!(
                "quality has {} values for {} vertices",
                q.len(),
                cloud.len()
            )));
        }
    }
    let mut text = String::with_capacity(cloud.len() * 64);
    text.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(text, "element vertex {}", cloud.len());
    text.push_str("property double x\nproperty double y\nproperty double z\n");
    if quality.is_some() {
        text.push_str("property double quality\n");
    }
    text.push_str("end_header\n");
    for (i, p) in cloud.points().iter().enumerate() {
        let _ = write!(text, "{} {} {}", p[0], p[1], p[2]);
        if let Some(q) = quality {
            let _ = write!(text, " {}", q[i]);
        }
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_ply(path: &Path) -> Result<PlyCloud> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse(&text).map_err(|m| Error::format(path, m))
}

fn parse(text: &str) -> std::result::Result<PlyCloud, String> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err("missing 'ply' signature".into());
    }

    let mut vertex_count = None;
    let mut properties: Vec<String> = Vec::new();
    let mut in_vertex = false;
    let mut saw_end = false;
    for line in lines.by_ref() {
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["format", "ascii", _] => {}
            ["format", other, ..] => return Err(format!("unsupported PLY format '{other}'")),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", "vertex", n] => {
                vertex_count = Some(n.parse::<usize>().map_err(|_| format!("bad vertex count '{n}'"))?);
                in_vertex = true;
            }
            ["element", name, n] => {
                if n.parse::<usize>().map_err(|_| format!("bad element count '{n}'"))? != 0 {
                    return Err(format!("unsupported non-empty element '{name}'"));
                }
                in_vertex = false;
            }
            ["property", "list", ..] if in_vertex => {
                return Err("list properties on vertices are not supported".into())
            }
            ["property", "list", ..] => {}
            ["property", _ty, name] => {
                if in_vertex {
                    properties.push((*name).to_string());
                }
            }
            ["end_header"] => {
                saw_end = true;
                break;
            }
            _ => return Err(format!("unrecognized header line '{line}'")),
        }
    }
    if !saw_end {
        return Err("missing end_header".into());
    }
    let count = vertex_count.ok_or("no vertex element")?;
    let column = |name: &str| properties.iter().position(|p| p == name);
    let (x, y, z) = match (column("x"), column("y"), column("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err("vertex element lacks x, y, z properties".into()),
    };
    let q = column("quality");

    let mut points = Vec::with_capacity(count);
    let mut quality = q.map(|_| Vec::with_capacity(count));
    for i in 0..count {
        let line = lines
            .next()
            .ok_or_else(|| format!("expected {count} vertices, found {i}"))?;
        let values = line
            .split_whitespace()
            .map(|w| w.parse::<f64>().map_err(|_| format!("vertex {i}: bad number '{w}'")))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        if values.len() != properties.len() {
            return Err(format!(
                "vertex {i}: {} values for {} properties",
                values.len(),
                properties.len()
            ));
        }
        points.push([values[x], values[y], values[z]]);
        if let (Some(qi), Some(qs)) = (q, quality.as_mut()) {
            qs.push(values[qi]);
        }
    }
    let cloud = PointCloud::new(points).map_err(|e| e.to_string())?;
    Ok(PlyCloud { cloud, quality })
}
