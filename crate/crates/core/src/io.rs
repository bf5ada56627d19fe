//! File formats: PFM rasters, PNG masks and normal maps, OBJ and binary PLY
//! meshes, and the versioned scene description.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use image::{ImageBuffer, Luma, Rgb};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{GridShape, ScalarField2D, VectorField2D};
use crate::meshing::TriangleMesh;
use crate::synth::SceneSpec;

/// Version written into `scene.json`.
pub const SCENE_FORMAT_VERSION: u32 = 1;

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

/// Writes rows bottom-up, little-endian, scale `-1.0`.
fn write_pfm<W: Write>(mut out: W, grid: GridShape, channels: usize, data: &[f64]) -> Result<()> {
    let tag = if channels == 1 { "Pf" } else { "PF" };
    write!(out, "{tag}\n{} {}\n-1.0\n", grid.width(), grid.height())?;
    let row = grid.width() * channels;
    let mut buf = Vec::with_capacity(data.len() * 4);
    for v in (0..grid.height()).rev() {
        for &x in &data[v * row..(v + 1) * row] {
            buf.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

/// Returns `(width, height, channels, top-down samples)`.
fn read_pfm<R: Read>(mut input: R) -> Result<(usize, usize, usize, Vec<f64>)> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let mut pos = 0;
    let mut token = || -> Result<String> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(format_err("truncated PFM header"));
        }
        let t = String::from_utf8_lossy(&bytes[start..pos]).into_owned();
        Ok(t)
    };
    let channels = match token()?.as_str() {
        "Pf" => 1,
        "PF" => 3,
        other => return Err(format_err(format!("not a PFM file (magic '{other}')"))),
    };
    let parse = |t: String, what: &str| -> Result<f64> {
        t.parse::<f64>()
            .map_err(|_| format_err(format!("bad PFM {what} '{t}'")))
    };
    let width = parse(token()?, "width")? as usize;
    let height = parse(token()?, "height")? as usize;
    let scale = parse(token()?, "scale")?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(format_err("PFM scale must be nonzero"));
    }
    // Exactly one whitespace byte separates the header from the samples.
    pos += 1;
    let count = width * height * channels;
    let body = bytes
        .get(pos..pos + 4 * count)
        .ok_or_else(|| format_err(format!("PFM body holds fewer than {count} samples")))?;
    let little = scale < 0.0;
    let mut data = vec![0.0; count];
    let row = width * channels;
    for (k, chunk) in body.chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let x = if little {
            f32::from_le_bytes(raw)
        } else {
            f32::from_be_bytes(raw)
        };
        let (file_row, col) = (k / row, k % row);
        data[(height - 1 - file_row) * row + col] = x as f64;
    }
    Ok((width, height, channels, data))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })?))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })?))
}

pub fn write_scalar_pfm<W: Write>(out: W, field: &ScalarField2D) -> Result<()> {
    write_pfm(out, field.shape(), 1, field.values())
}

pub fn write_vector_pfm<W: Write>(out: W, field: &VectorField2D) -> Result<()> {
    let flat: Vec<f64> = field.vectors().iter().flatten().copied().collect();
    write_pfm(out, field.shape(), 3, &flat)
}

/// Reads a grayscale PFM; `pitch` is not stored in the file.
pub fn read_scalar_pfm<R: Read>(input: R, pitch: f64) -> Result<ScalarField2D> {
    let (w, h, c, data) = read_pfm(input)?;
    if c != 1 {
        return Err(format_err("expected a grayscale 'Pf' PFM"));
    }
    ScalarField2D::new(GridShape::new(w, h, pitch)?, data)
}

/// Reads a color PFM of raw normal components and renormalizes them.
pub fn read_vector_pfm<R: Read>(input: R, pitch: f64) -> Result<VectorField2D> {
    let (w, h, c, data) = read_pfm(input)?;
    if c != 3 {
        return Err(format_err("expected a color 'PF' PFM"));
    }
    let v = data.chunks_exact(3).map(|n| [n[0], n[1], n[2]]).collect();
    Ok(VectorField2D::new(GridShape::new(w, h, pitch)?, v)?.normalized())
}

pub fn save_scalar_pfm(path: &Path, field: &ScalarField2D) -> Result<()> {
    let mut out = create(path)?;
    write_scalar_pfm(&mut out, field)?;
    out.flush()?;
    Ok(())
}

pub fn save_vector_pfm(path: &Path, field: &VectorField2D) -> Result<()> {
    let mut out = create(path)?;
    write_vector_pfm(&mut out, field)?;
    out.flush()?;
    Ok(())
}

pub fn load_scalar_pfm(path: &Path, pitch: f64) -> Result<ScalarField2D> {
    read_scalar_pfm(open(path)?, pitch)
}

/// Normal map from a `PF` PFM or a 16-bit RGB PNG, chosen by extension.
pub fn load_normals(path: &Path, pitch: f64) -> Result<VectorField2D> {
    let png = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("png"));
    if png {
        load_normal_png(path, pitch)
    } else {
        read_vector_pfm(open(path)?, pitch)
    }
}

/// `n = 2 c / 65535 - 1` per channel, then renormalized. Zero vectors
/// become NaN.
pub fn load_normal_png(path: &Path, pitch: f64) -> Result<VectorField2D> {
    let img = image::open(path)?.into_rgb16();
    let (w, h) = img.dimensions();
    let v = img
        .pixels()
        .map(|p| p.0.map(|c| 2.0 * c as f64 / 65535.0 - 1.0))
        .collect();
    Ok(VectorField2D::new(GridShape::new(w as usize, h as usize, pitch)?, v)?.normalized())
}

/// Inverse mapping of [`load_normal_png`]; undefined pixels are black.
pub fn save_normal_png(path: &Path, field: &VectorField2D) -> Result<()> {
    let g = field.shape();
    let img = ImageBuffer::<Rgb<u16>, Vec<u16>>::from_fn(g.width() as u32, g.height() as u32, |u, v| {
        let n = field.get(u as usize, v as usize);
        Rgb(n.map(|c| {
            if c.is_finite() {
                ((c + 1.0) / 2.0 * 65535.0).round().clamp(0.0, 65535.0) as u16
            } else {
                0
            }
        }))
    });
    img.save(path)?;
    Ok(())
}

/// 8-bit grayscale, 255 inside.
pub fn save_mask_png(path: &Path, mask: &[bool], grid: GridShape) -> Result<()> {
    let img = ImageBuffer::<Luma<u8>, Vec<u8>>::from_fn(grid.width() as u32, grid.height() as u32, |u, v| {
        Luma([if mask[grid.index(u as usize, v as usize)] { 255 } else { 0 }])
    });
    img.save(path)?;
    Ok(())
}

/// Pixels above 127 are inside. Returns the mask with its width and height.
pub fn load_mask_png(path: &Path) -> Result<(Vec<bool>, usize, usize)> {
    let img = image::open(path)?.into_luma8();
    let (w, h) = img.dimensions();
    Ok((img.pixels().map(|p| p.0[0] > 127).collect(), w as usize, h as usize))
}

pub fn write_obj<W: Write>(mut out: W, mesh: &TriangleMesh) -> Result<()> {
    for v in &mesh.vertices {
        writeln!(out, "v {:.9} {:.9} {:.9}", v[0], v[1], v[2])?;
    }
    for f in &mesh.faces {
        writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
    }
    Ok(())
}

/// Binary little-endian PLY with `float` coordinates and `int` indices.
pub fn write_ply<W: Write>(mut out: W, mesh: &TriangleMesh) -> Result<()> {
    write!(
        out,
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\n\
         property float x\nproperty float y\nproperty float z\n\
         element face {}\nproperty list uchar int vertex_indices\nend_header\n",
        mesh.vertices.len(),
        mesh.faces.len()
    )?;
    let mut buf = Vec::with_capacity(mesh.vertices.len() * 12 + mesh.faces.len() * 13);
    for v in &mesh.vertices {
        for c in v {
            buf.extend_from_slice(&(*c as f32).to_le_bytes());
        }
    }
    for f in &mesh.faces {
        buf.push(3);
        for &i in f {
            let i = i32::try_from(i).map_err(|_| format_err("mesh too large for PLY int indices"))?;
            buf.extend_from_slice(&i.to_le_bytes());
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

/// Reads what [`write_ply`] writes.
pub fn read_ply<R: Read>(mut input: R) -> Result<TriangleMesh> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let marker = b"end_header\n";
    let end = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| format_err("PLY header has no end_header"))?
        + marker.len();
    let header = String::from_utf8_lossy(&bytes[..end]);
    if !header.starts_with("ply\nformat binary_little_endian 1.0\n") {
        return Err(format_err("only binary little-endian PLY is supported"));
    }
    let count = |name: &str| -> Result<usize> {
        header
            .lines()
            .find_map(|l| l.strip_prefix(&format!("element {name} ")))
            .and_then(|n| n.trim().parse().ok())
            .ok_or_else(|| format_err(format!("PLY header lacks element {name}")))
    };
    let (nv, nf) = (count("vertex")?, count("face")?);
    let mut body = &bytes[end..];
    let mut take = |n: usize| -> Result<&[u8]> {
        if body.len() < n {
            return Err(format_err("PLY body truncated"));
        }
        let (head, rest) = body.split_at(n);
        body = rest;
        Ok(head)
    };
    let f32_at = |b: &[u8], k: usize| f32::from_le_bytes([b[4 * k], b[4 * k + 1], b[4 * k + 2], b[4 * k + 3]]);
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let b = take(12)?;
        vertices.push([0, 1, 2].map(|k| f32_at(b, k) as f64));
    }
    let mut faces = Vec::with_capacity(nf);
    for _ in 0..nf {
        if take(1)?[0] != 3 {
            return Err(format_err("only triangle faces are supported"));
        }
        let b = take(12)?;
        let idx = [0, 1, 2].map(|k| i32::from_le_bytes([b[4 * k], b[4 * k + 1], b[4 * k + 2], b[4 * k + 3]]));
        if idx.iter().any(|&i| i < 0 || i as usize >= nv) {
            return Err(format_err("PLY face index out of range"));
        }
        faces.push(idx.map(|i| i as usize));
    }
    Ok(TriangleMesh { vertices, faces })
}

pub fn save_ply(path: &Path, mesh: &TriangleMesh) -> Result<()> {
    let mut out = create(path)?;
    write_ply(&mut out, mesh)?;
    out.flush()?;
    Ok(())
}

pub fn save_obj(path: &Path, mesh: &TriangleMesh) -> Result<()> {
    let mut out = create(path)?;
    write_obj(&mut out, mesh)?;
    out.flush()?;
    Ok(())
}

/// Contents of `scene.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneFile {
    pub version: u32,
    pub spec: SceneSpec,
}

impl SceneFile {
    pub fn new(spec: SceneSpec) -> Self {
        Self {
            version: SCENE_FORMAT_VERSION,
            spec,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = create(path)?;
        serde_json::to_writer_pretty(&mut out, self).map_err(|e| format_err(e.to_string()))?;
        out.write_all(b"\n")?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: SceneFile =
            serde_json::from_reader(open(path)?).map_err(|e| format_err(format!("{}: {e}", path.display())))?;
        if file.version != SCENE_FORMAT_VERSION {
            return Err(format_err(format!(
                "scene format version {} is not supported (expected {SCENE_FORMAT_VERSION})",
                file.version
            )));
        }
        Ok(file)
    }
}
