//! CSV, GeoJSON and JSON writers for per-site results.

use std::io::Write;
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::hotspot::HotspotResult;
use crate::score::SkillRow;

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(std::io::BufWriter::new(f))
}

/// One row per site: `site_id` (0-based) followed by the named columns.
pub fn write_site_csv(path: &Path, columns: &[(&str, &[f64])]) -> Result<()> {
    let n = columns.first().map_or(0, |c| c.1.len());
    if columns.iter().any(|c| c.1.len() != n) {
        return Err(Error::Shape("site columns differ in length".into()));
    }
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    let header: Vec<&str> = std::iter::once("site_id").chain(columns.iter().map(|c| c.0)).collect();
    writeln!(w, "{}", header.join(",")).map_err(io)?;
    for s in 0..n {
        let row: Vec<String> = std::iter::once(s.to_string())
            .chain(columns.iter().map(|c| c.1[s].to_string()))
            .collect();
        writeln!(w, "{}", row.join(",")).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Point features carrying `site_id`, `value` and any extra properties.
pub fn site_geojson(coords: &[(f64, f64)], values: &[f64], extra: &[(&str, Vec<Value>)]) -> Result<Value> {
    if coords.len() != values.len() || extra.iter().any(|e| e.1.len() != values.len()) {
        return Err(Error::Shape("coordinates and properties differ in length".into()));
    }
    let features: Vec<Value> = coords
        .iter()
        .enumerate()
        .map(|(s, (lon, lat))| {
            let mut props = serde_json::Map::new();
            props.insert("site_id".into(), json!(s));
            props.insert("value".into(), json_number(values[s]));
            for (name, vals) in extra {
                props.insert((*name).into(), vals[s].clone());
            }
            json!({
                "type": "Feature",
                "geometry": {"type": "Point", "coordinates": [lon, lat]},
                "properties": props,
            })
        })
        .collect();
    Ok(json!({"type": "FeatureCollection", "features": features}))
}

/// JSON has no infinities; non-finite values become `null`.
pub fn json_number(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        Value::Null
    }
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// `hotspot_sites.csv`, `hotspot.geojson` and `hotspot_summary.json` in `dir`.
pub fn write_hotspot(dir: &Path, result: &HotspotResult, coords: &[(f64, f64)]) -> Result<()> {
    let n = result.test_stats.len();
    let mut member = vec![false; n];
    for &s in &result.region {
        member[s] = true;
    }
    let path = dir.join("hotspot_sites.csv");
    let mut w = create(&path)?;
    let io = |e| Error::io(&path, e);
    writeln!(w, "site_id,test_stat,in_region").map_err(io)?;
    for s in 0..n {
        writeln!(w, "{s},{},{}", result.test_stats[s], u8::from(member[s])).map_err(io)?;
    }
    w.flush().map_err(io)?;
    let geo = site_geojson(
        coords,
        &result.test_stats,
        &[("in_region", member.iter().map(|m| json!(m)).collect())],
    )?;
    write_json(&dir.join("hotspot.geojson"), &geo)?;
    let summary = json!({
        "u": result.threshold,
        "alpha": result.alpha,
        "critical_value": json_number(result.critical_value),
        "region_size": result.region.len(),
        "t0": result.t0,
    });
    write_json(&dir.join("hotspot_summary.json"), &summary)
}

/// `model,u,BSS,TWCRPSS`.
pub fn write_skill_csv(path: &Path, rows: &[SkillRow]) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "model,u,BSS,TWCRPSS").map_err(io)?;
    for r in rows {
        writeln!(w, "{},{},{},{}", r.model, r.u, r.bss, r.twcrpss).map_err(io)?;
    }
    w.flush().map_err(io)
}
