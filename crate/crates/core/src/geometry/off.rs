//! ASCII OFF reading and writing. Point clouds are OFF files with zero faces.

use std::io::{BufRead, Write};

use super::{PointCloud, TriangleMesh, Vec3};
use crate::error::GeometryError;

pub fn write_mesh_off<W: Write>(mesh: &TriangleMesh, mut w: W) -> std::io::Result<()> {
    writeln!(w, "OFF")?;
    writeln!(w, "{} {} 0", mesh.num_vertices(), mesh.num_faces())?;
    for v in &mesh.vertices {
        writeln!(w, "{} {} {}", v[0], v[1], v[2])?;
    }
    for f in &mesh.faces {
        writeln!(w, "3 {} {} {}", f[0], f[1], f[2])?;
    }
    Ok(())
}

pub fn write_point_cloud_off<W: Write>(pc: &PointCloud, mut w: W) -> std::io::Result<()> {
    writeln!(w, "OFF")?;
    writeln!(w, "{} 0 0", pc.len())?;
    for p in &pc.points {
        writeln!(w, "{} {} {}", p[0], p[1], p[2])?;
    }
    Ok(())
}

fn parse_err(line: usize, msg: impl Into<String>) -> GeometryError {
    GeometryError::OffParse {
        line,
        msg: msg.into(),
    }
}

/// Parses an OFF file. Comment lines (`#`) and blank lines are skipped;
/// polygon faces with more than three vertices are rejected.
fn read_off<R: BufRead>(r: R) -> Result<(Vec<Vec3>, Vec<[usize; 3]>), GeometryError> {
    let mut tokens: Vec<(usize, String)> = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| parse_err(i + 1, e.to_string()))?;
        let content = line.split('#').next().unwrap_or("");
        tokens.extend(content.split_whitespace().map(|t| (i + 1, t.to_string())));
    }
    let mut it = tokens.into_iter();
    match it.next() {
        Some((_, h)) if h == "OFF" => {}
        Some((l, h)) => return Err(parse_err(l, format!("expected OFF header, got `{h}`"))),
        None => return Err(parse_err(0, "empty file")),
    }
    let mut next_num = |what: &str| -> Result<(usize, String), GeometryError> {
        it.next().ok_or_else(|| parse_err(0, format!("unexpected end of file reading {what}")))
    };
    let count = |tok: (usize, String)| -> Result<usize, GeometryError> {
        tok.1
            .parse::<usize>()
            .map_err(|_| parse_err(tok.0, format!("bad count `{}`", tok.1)))
    };
    let nv = count(next_num("vertex count")?)?;
    let nf = count(next_num("face count")?)?;
    let _ne = count(next_num("edge count")?)?;
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let mut v = [0.0; 3];
        for c in v.iter_mut() {
            let (l, t) = next_num("vertex coordinate")?;
            *c = t
                .parse::<f64>()
                .map_err(|_| parse_err(l, format!("bad coordinate `{t}`")))?;
        }
        vertices.push(v);
    }
    let mut faces = Vec::with_capacity(nf);
    for _ in 0..nf {
        let tok = next_num("face arity")?;
        let line = tok.0;
        if count(tok)? != 3 {
            return Err(parse_err(line, "only triangular faces are supported"));
        }
        let mut f = [0usize; 3];
        for idx in f.iter_mut() {
            *idx = count(next_num("face index")?)?;
            if *idx >= nv {
                return Err(parse_err(line, format!("vertex index {idx} out of range")));
            }
        }
        faces.push(f);
    }
    Ok((vertices, faces))
}

pub fn read_mesh_off<R: BufRead>(r: R) -> Result<TriangleMesh, GeometryError> {
    let (v, f) = read_off(r)?;
    Ok(TriangleMesh::new(v, f))
}

/// Reads the vertex list of an OFF file, ignoring any faces.
pub fn read_point_cloud_off<R: BufRead>(r: R) -> Result<PointCloud, GeometryError> {
    let (v, _) = read_off(r)?;
    Ok(PointCloud::new(v))
}
