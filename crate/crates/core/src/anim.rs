//! Fixed-topology mesh animations: container IO, synthetic motion
//! generators, area-weighted surface sampling and correspondence-exact
//! point tracks.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{self, Vec3};
use crate::rng::SeededRng;

/// Canonical mesh plus per-frame vertex positions. Geometry is stored in
/// `f32`, the precision of the on-disk container.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshAnimation {
    pub vertices_canonical: Vec<[f32; 3]>,
    pub faces: Vec<[u32; 3]>,
    /// `frames[t][v]`; `frames[0]` equals `vertices_canonical`.
    pub frames: Vec<Vec<[f32; 3]>>,
    pub colors: Option<Vec<[f32; 3]>>,
    pub frame_rate: f64,
    /// Multiplier applied to the source coordinates during normalization.
    pub scale: f64,
    /// Source-space point mapped to the origin.
    pub offset: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSpec {
    pub face_ids: Vec<usize>,
    pub barycentrics: Vec<[f64; 3]>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointTracks {
    /// `points[t][i]`, the sample positions per frame.
    pub points: Vec<Vec<Vec3>>,
    /// `points[t][i] - points[0][i]`.
    pub displacements: Vec<Vec<Vec3>>,
}

impl PointTracks {
    pub fn frame_count(&self) -> usize {
        self.points.len()
    }

    pub fn sample_count(&self) -> usize {
        self.points.first().map_or(0, Vec::len)
    }

    pub fn canonical(&self) -> &[Vec3] {
        &self.points[0]
    }
}

fn to_f64(p: [f32; 3]) -> Vec3 {
    [p[0] as f64, p[1] as f64, p[2] as f64]
}

fn to_f32(p: Vec3) -> [f32; 3] {
    [p[0] as f32, p[1] as f32, p[2] as f32]
}

impl MeshAnimation {
    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices_canonical.len()
    }

    pub fn vertex(&self, t: usize, v: usize) -> Vec3 {
        to_f64(self.frames[t][v])
    }

    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.faces[f].map(|i| to_f64(self.vertices_canonical[i as usize]));
        geom::triangle_area(a, b, c)
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.vertex_count();
        if self.frames.is_empty() {
            return Err(Error::InvalidInput("animation has no frames".into()));
        }
        for (t, frame) in self.frames.iter().enumerate() {
            if frame.len() != v {
                return Err(Error::Shape(format!(
                    "frame {t} has {} vertices, expected {v}",
                    frame.len()
                )));
            }
        }
        if self.frames[0] != self.vertices_canonical {
            return Err(Error::CanonicalMismatch);
        }
        if let Some(c) = &self.colors {
            if c.len() != v {
                return Err(Error::Shape(format!("{} colors for {v} vertices", c.len())));
            }
        }
        for (f, face) in self.faces.iter().enumerate() {
            if face.iter().any(|&i| i as usize >= v) {
                return Err(Error::InvalidInput(format!("face {f} index out of range")));
            }
            if self.face_area(f) <= 1e-12 {
                return Err(Error::InvalidInput(format!("face {f} is degenerate")));
            }
        }
        Ok(())
    }

    /// Recenters and rescales so that frame 0 fits `[-0.5, 0.5]^3`, applying
    /// the same map to every frame. Already-normalized data is left untouched.
    pub fn normalize(&mut self) {
        let (lo, hi) = bounds(self.vertices_canonical.iter().map(|&p| to_f64(p)));
        let center = [0, 1, 2].map(|k| 0.5 * (lo[k] + hi[k]));
        let extent = (0..3).map(|k| hi[k] - lo[k]).fold(0.0, f64::max);
        if extent <= 0.0 {
            return;
        }
        let s = 1.0 / extent;
        if (s - 1.0).abs() < 1e-5 && center.iter().all(|c| c.abs() < 1e-5) {
            return;
        }
        let map = |p: [f32; 3]| to_f32([0, 1, 2].map(|k| (p[k] as f64 - center[k]) * s));
        for frame in &mut self.frames {
            for p in frame.iter_mut() {
                *p = map(*p);
            }
        }
        self.vertices_canonical = self.frames[0].clone();
        for k in 0..3 {
            self.offset[k] += center[k] / self.scale;
        }
        self.scale *= s;
    }
}

fn bounds(points: impl Iterator<Item = Vec3>) -> (Vec3, Vec3) {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    (lo, hi)
}

// ---------------------------------------------------------------------------
// Container IO

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    #[serde(rename = "T")]
    t: usize,
    #[serde(rename = "V")]
    v: usize,
    #[serde(rename = "F")]
    f: usize,
    frame_rate: f64,
    has_colors: bool,
    scale: f64,
    offset: [f64; 3],
}

fn read_f32s(path: &Path, expected: usize) -> Result<Vec<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != expected * 4 {
        return Err(Error::Shape(format!(
            "{} holds {} bytes, header implies {}",
            path.display(),
            bytes.len(),
            expected * 4
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

fn triples<T: Copy>(v: &[T]) -> Vec<[T; 3]> {
    v.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
}

pub fn load_animation(dir: &Path) -> Result<MeshAnimation> {
    let manifest_path = dir.join("manifest.json");
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::Header {
        path: manifest_path.clone(),
        msg: e.to_string(),
    })?;
    if m.version != 1 {
        return Err(Error::Header {
            path: manifest_path,
            msg: format!("unsupported version {}", m.version),
        });
    }
    let topo_path = dir.join("topology.bin");
    let topo = fs::read(&topo_path).map_err(|e| Error::io(&topo_path, e))?;
    if topo.len() != m.f * 12 {
        return Err(Error::Shape(format!(
            "topology.bin holds {} bytes, header implies {}",
            topo.len(),
            m.f * 12
        )));
    }
    let mut idx = Vec::with_capacity(m.f * 3);
    for c in topo.chunks_exact(4) {
        let i = i32::from_le_bytes(c.try_into().unwrap());
        if i < 0 {
            return Err(Error::InvalidInput("negative face index".into()));
        }
        idx.push(i as u32);
    }
    let canonical = triples(&read_f32s(&dir.join("canonical.bin"), m.v * 3)?);
    let flat = read_f32s(&dir.join("frames.bin"), m.t * m.v * 3)?;
    let frames: Vec<Vec<[f32; 3]>> = flat.chunks(m.v * 3).map(triples).collect();
    let colors = if m.has_colors {
        Some(triples(&read_f32s(&dir.join("colors.bin"), m.v * 3)?))
    } else {
        None
    };
    let mut anim = MeshAnimation {
        vertices_canonical: canonical,
        faces: triples(&idx),
        frames: if m.t == 0 { Vec::new() } else { frames },
        colors,
        frame_rate: m.frame_rate,
        scale: m.scale,
        offset: m.offset,
    };
    anim.validate()?;
    anim.normalize();
    Ok(anim)
}

pub fn save_animation(anim: &MeshAnimation, dir: &Path) -> Result<()> {
    anim.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = Manifest {
        version: 1,
        t: anim.frame_count(),
        v: anim.vertex_count(),
        f: anim.faces.len(),
        frame_rate: anim.frame_rate,
        has_colors: anim.colors.is_some(),
        scale: anim.scale,
        offset: anim.offset,
    };
    let write = |name: &str, bytes: Vec<u8>| -> Result<()> {
        let p = dir.join(name);
        fs::write(&p, bytes).map_err(|e| Error::io(&p, e))
    };
    write("manifest.json", serde_json::to_vec_pretty(&manifest)?)?;
    let f32_bytes = |pts: &[[f32; 3]]| -> Vec<u8> {
        pts.iter().flatten().flat_map(|v| v.to_le_bytes()).collect()
    };
    write(
        "topology.bin",
        anim.faces
            .iter()
            .flatten()
            .flat_map(|&i| (i as i32).to_le_bytes())
            .collect(),
    )?;
    write("canonical.bin", f32_bytes(&anim.vertices_canonical))?;
    write(
        "frames.bin",
        anim.frames.iter().flat_map(|f| f32_bytes(f)).collect(),
    )?;
    let colors_path = dir.join("colors.bin");
    match &anim.colors {
        Some(c) => write("colors.bin", f32_bytes(c))?,
        None if colors_path.exists() => {
            fs::remove_file(&colors_path).map_err(|e| Error::io(&colors_path, e))?
        }
        None => {}
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Synthetic animations

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionKind {
    Translate,
    Rotate,
    Bend,
    TwoPart,
}

impl FromStr for MotionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "translate" => Ok(Self::Translate),
            "rotate" => Ok(Self::Rotate),
            "bend" => Ok(Self::Bend),
            "two_part" => Ok(Self::TwoPart),
            other => Err(Error::InvalidInput(format!("unknown motion kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum Primitive {
    /// Axis-aligned box with each face split into `subdiv`² quads.
    Cube { subdiv: usize },
    /// UV sphere.
    Sphere { rings: usize, segments: usize },
    /// Capped cylinder along y.
    Cylinder { rings: usize, segments: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MotionParams {
    pub frames: usize,
    pub primitive: Primitive,
    /// Box proportions applied before normalization.
    pub stretch: [f64; 3],
    /// Per-frame translation (translate, two_part).
    pub velocity: [f64; 3],
    /// Rotation axis through the origin (rotate).
    pub axis: [f64; 3],
    /// Angle reached at the last frame (rotate), radians.
    pub total_angle: f64,
    /// Twist about z reached by the top of the mesh at the last frame (bend).
    pub bend_angle: f64,
    /// Coordinate whose positive half moves (two_part).
    pub split_axis: usize,
    pub frame_rate: f64,
}

impl Default for MotionParams {
    fn default() -> Self {
        Self {
            frames: 8,
            primitive: Primitive::Cube { subdiv: 4 },
            stretch: [1.0, 1.0, 1.0],
            velocity: [0.05, 0.0, 0.0],
            axis: [0.0, 1.0, 0.0],
            total_angle: PI / 4.0,
            bend_angle: PI / 4.0,
            split_axis: 0,
            frame_rate: 24.0,
        }
    }
}

/// Progress of frame `t` in `[0, 1]`.
fn progress(t: usize, frames: usize) -> f64 {
    if frames <= 1 {
        0.0
    } else {
        t as f64 / (frames - 1) as f64
    }
}

/// Closed-form bend: rotation about z by an angle growing linearly with
/// height `y + 0.5` and with time.
pub fn bend_point(p: Vec3, bend_angle: f64, progress: f64) -> Vec3 {
    let phi = bend_angle * progress * (p[1] + 0.5);
    let (s, c) = phi.sin_cos();
    [c * p[0] - s * p[1], s * p[0] + c * p[1], p[2]]
}

pub fn synthesize_animation(kind: MotionKind, params: &MotionParams, seed: u64) -> Result<MeshAnimation> {
    if params.frames == 0 {
        return Err(Error::InvalidInput("frames must be >= 1".into()));
    }
    if params.split_axis > 2 {
        return Err(Error::InvalidInput("split_axis must be 0, 1 or 2".into()));
    }
    let (mut verts, faces) = build_primitive(params.primitive)?;
    for p in &mut verts {
        for k in 0..3 {
            p[k] *= params.stretch[k];
        }
    }
    let (lo, hi) = bounds(verts.iter().copied());
    let center = [0, 1, 2].map(|k| 0.5 * (lo[k] + hi[k]));
    let extent = (0..3).map(|k| hi[k] - lo[k]).fold(0.0, f64::max);
    let canon: Vec<Vec3> = verts
        .iter()
        .map(|p| [0, 1, 2].map(|k| (p[k] - center[k]) / extent))
        .collect();

    let axis = geom::normalize(params.axis);
    let mut frames = Vec::with_capacity(params.frames);
    for t in 0..params.frames {
        let u = progress(t, params.frames);
        let frame: Vec<[f32; 3]> = canon
            .iter()
            .map(|&p| {
                let q = match kind {
                    MotionKind::Translate => geom::add(p, geom::scale(params.velocity, t as f64)),
                    MotionKind::Rotate => geom::rotate_axis_angle(p, axis, params.total_angle * u),
                    MotionKind::Bend => bend_point(p, params.bend_angle, u),
                    MotionKind::TwoPart => {
                        if p[params.split_axis] > 0.0 {
                            geom::add(p, geom::scale(params.velocity, t as f64))
                        } else {
                            p
                        }
                    }
                };
                if t == 0 {
                    to_f32(p)
                } else {
                    to_f32(q)
                }
            })
            .collect();
        frames.push(frame);
    }

    let mut rng = SeededRng::new(seed);
    let phase: [f64; 3] = [0, 1, 2].map(|_| rng.uniform() * 2.0 * PI);
    let freq: [f64; 3] = [0, 1, 2].map(|_| 3.0 + 3.0 * rng.uniform());
    let colors = canon
        .iter()
        .map(|p| {
            [0, 1, 2].map(|k| {
                let arg = freq[k] * p[(k + 1) % 3] + 2.0 * p[k] + phase[k];
                (0.5 + 0.4 * arg.sin()) as f32
            })
        })
        .collect();
    let anim = MeshAnimation {
        vertices_canonical: frames[0].clone(),
        faces,
        frames,
        colors: Some(colors),
        frame_rate: params.frame_rate,
        scale: 1.0 / extent,
        offset: center,
    };
    anim.validate()?;
    Ok(anim)
}

fn build_primitive(p: Primitive) -> Result<(Vec<Vec3>, Vec<[u32; 3]>)> {
    let mut verts: Vec<Vec3> = Vec::new();
    let mut faces: Vec<[u32; 3]> = Vec::new();
    match p {
        Primitive::Cube { subdiv } => {
            if subdiv == 0 {
                return Err(Error::InvalidInput("cube subdiv must be >= 1".into()));
            }
            let n = subdiv;
            // (normal axis, sign); u, v span the other two axes.
            for axis in 0..3 {
                for sign in [-1.0, 1.0] {
                    let (a, b) = ((axis + 1) % 3, (axis + 2) % 3);
                    let base = verts.len() as u32;
                    for i in 0..=n {
                        for j in 0..=n {
                            let mut q = [0.0; 3];
                            q[axis] = 0.5 * sign;
                            q[a] = i as f64 / n as f64 - 0.5;
                            q[b] = j as f64 / n as f64 - 0.5;
                            verts.push(q);
                        }
                    }
                    let id = |i: usize, j: usize| base + (i * (n + 1) + j) as u32;
                    for i in 0..n {
                        for j in 0..n {
                            let (v00, v10, v01, v11) = (id(i, j), id(i + 1, j), id(i, j + 1), id(i + 1, j + 1));
                            if sign > 0.0 {
                                faces.push([v00, v10, v11]);
                                faces.push([v00, v11, v01]);
                            } else {
                                faces.push([v00, v11, v10]);
                                faces.push([v00, v01, v11]);
                            }
                        }
                    }
                }
            }
        }
        Primitive::Sphere { rings, segments } => {
            if rings < 2 || segments < 3 {
                return Err(Error::InvalidInput("sphere needs rings >= 2, segments >= 3".into()));
            }
            verts.push([0.0, 0.5, 0.0]);
            for r in 1..rings {
                let th = PI * r as f64 / rings as f64;
                for s in 0..segments {
                    let ph = 2.0 * PI * s as f64 / segments as f64;
                    verts.push([0.5 * th.sin() * ph.cos(), 0.5 * th.cos(), 0.5 * th.sin() * ph.sin()]);
                }
            }
            verts.push([0.0, -0.5, 0.0]);
            let ring = |r: usize, s: usize| (1 + (r - 1) * segments + s % segments) as u32;
            for s in 0..segments {
                faces.push([0, ring(1, s + 1), ring(1, s)]);
            }
            for r in 1..rings - 1 {
                for s in 0..segments {
                    faces.push([ring(r, s), ring(r, s + 1), ring(r + 1, s + 1)]);
                    faces.push([ring(r, s), ring(r + 1, s + 1), ring(r + 1, s)]);
                }
            }
            let south = (verts.len() - 1) as u32;
            for s in 0..segments {
                faces.push([south, ring(rings - 1, s), ring(rings - 1, s + 1)]);
            }
        }
        Primitive::Cylinder { rings, segments } => {
            if rings < 1 || segments < 3 {
                return Err(Error::InvalidInput("cylinder needs rings >= 1, segments >= 3".into()));
            }
            for r in 0..=rings {
                let y = r as f64 / rings as f64 - 0.5;
                for s in 0..segments {
                    let ph = 2.0 * PI * s as f64 / segments as f64;
                    verts.push([0.5 * ph.cos(), y, 0.5 * ph.sin()]);
                }
            }
            let id = |r: usize, s: usize| (r * segments + s % segments) as u32;
            for r in 0..rings {
                for s in 0..segments {
                    faces.push([id(r, s), id(r + 1, s + 1), id(r, s + 1)]);
                    faces.push([id(r, s), id(r + 1, s), id(r + 1, s + 1)]);
                }
            }
            let bottom = verts.len() as u32;
            verts.push([0.0, -0.5, 0.0]);
            let top = verts.len() as u32;
            verts.push([0.0, 0.5, 0.0]);
            for s in 0..segments {
                faces.push([bottom, id(0, s), id(0, s + 1)]);
                faces.push([top, id(rings, s + 1), id(rings, s)]);
            }
        }
    }
    Ok((verts, faces))
}

// ---------------------------------------------------------------------------
// Sampling

/// Area-weighted face choice with uniform barycentrics (square-root method).
pub fn sample_surface(anim: &MeshAnimation, n: usize, seed: u64) -> Result<SampleSpec> {
    if anim.faces.is_empty() {
        return Err(Error::InvalidInput("cannot sample an empty mesh".into()));
    }
    if n == 0 {
        return Err(Error::InvalidInput("sample count must be >= 1".into()));
    }
    let mut cumulative = Vec::with_capacity(anim.faces.len());
    let mut total = 0.0;
    for f in 0..anim.faces.len() {
        total += anim.face_area(f);
        cumulative.push(total);
    }
    let mut rng = SeededRng::new(seed);
    let mut face_ids = Vec::with_capacity(n);
    let mut barycentrics = Vec::with_capacity(n);
    for _ in 0..n {
        let target = rng.uniform() * total;
        let f = cumulative
            .partition_point(|&c| c <= target)
            .min(anim.faces.len() - 1);
        let r1 = rng.uniform().sqrt();
        let r2 = rng.uniform();
        face_ids.push(f);
        barycentrics.push([1.0 - r1, r1 * (1.0 - r2), r1 * r2]);
    }
    Ok(SampleSpec {
        face_ids,
        barycentrics,
        seed,
    })
}

impl SampleSpec {
    pub fn len(&self) -> usize {
        self.face_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.face_ids.is_empty()
    }

    pub fn validate(&self, anim: &MeshAnimation) -> Result<()> {
        if self.face_ids.len() != self.barycentrics.len() {
            return Err(Error::Shape("face_ids and barycentrics differ in length".into()));
        }
        for (f, b) in self.face_ids.iter().zip(&self.barycentrics) {
            if *f >= anim.faces.len() {
                return Err(Error::InvalidInput(format!("face id {f} out of range")));
            }
            if b.iter().any(|&x| x < 0.0) || (b.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidInput("barycentric row off the simplex".into()));
            }
        }
        Ok(())
    }
}

fn barycentric_point(anim: &MeshAnimation, t: usize, face: usize, b: [f64; 3]) -> Vec3 {
    let f = anim.faces[face];
    let mut p = [0.0; 3];
    for (k, &vi) in f.iter().enumerate() {
        let v = anim.vertex(t, vi as usize);
        for d in 0..3 {
            p[d] += b[k] * v[d];
        }
    }
    p
}

pub fn evaluate_tracks(anim: &MeshAnimation, spec: &SampleSpec) -> Result<PointTracks> {
    spec.validate(anim)?;
    let points: Vec<Vec<Vec3>> = (0..anim.frame_count())
        .map(|t| {
            spec.face_ids
                .iter()
                .zip(&spec.barycentrics)
                .map(|(&f, &b)| barycentric_point(anim, t, f, b))
                .collect()
        })
        .collect();
    let displacements = points
        .iter()
        .map(|frame| {
            frame
                .iter()
                .zip(&points[0])
                .map(|(p, p0)| geom::sub(*p, *p0))
                .collect()
        })
        .collect();
    Ok(PointTracks {
        points,
        displacements,
    })
}

/// Per-sample colors interpolated from vertex colors (mid-gray if absent).
pub fn sample_colors(anim: &MeshAnimation, spec: &SampleSpec) -> Vec<Vec3> {
    match &anim.colors {
        None => vec![[0.5; 3]; spec.len()],
        Some(colors) => spec
            .face_ids
            .iter()
            .zip(&spec.barycentrics)
            .map(|(&f, b)| {
                let mut c = [0.0; 3];
                for (k, &vi) in anim.faces[f].iter().enumerate() {
                    let vc = to_f64(colors[vi as usize]);
                    for d in 0..3 {
                        c[d] += b[k] * vc[d];
                    }
                }
                c
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_triangle() -> MeshAnimation {
        let v = vec![[0.0f32, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        MeshAnimation {
            vertices_canonical: v.clone(),
            faces: vec![[0, 1, 2]],
            frames: vec![v],
            colors: None,
            frame_rate: 24.0,
            scale: 1.0,
            offset: [0.0; 3],
        }
    }

    #[test]
    fn unknown_kind_is_rejected() {
        assert!("spin".parse::<MotionKind>().is_err());
        assert_eq!("two_part".parse::<MotionKind>().unwrap(), MotionKind::TwoPart);
    }

    #[test]
    fn translate_moves_every_vertex_linearly() {
        let params = MotionParams {
            frames: 4,
            velocity: [0.1, 0.0, 0.0],
            ..Default::default()
        };
        let a = synthesize_animation(MotionKind::Translate, &params, 1).unwrap();
        for v in 0..a.vertex_count() {
            let d = geom::sub(a.vertex(3, v), a.vertex(0, v));
            assert!((d[0] - 0.3).abs() < 1e-6 && d[1].abs() < 1e-6 && d[2].abs() < 1e-6);
        }
    }

    #[test]
    fn full_turn_returns_to_start() {
        let params = MotionParams {
            frames: 5,
            total_angle: 2.0 * PI,
            axis: [0.3, 1.0, -0.2],
            primitive: Primitive::Sphere { rings: 6, segments: 8 },
            ..Default::default()
        };
        let a = synthesize_animation(MotionKind::Rotate, &params, 2).unwrap();
        for v in 0..a.vertex_count() {
            let d = geom::sub(a.vertex(4, v), a.vertex(0, v));
            assert!(geom::norm(d) < 1e-6);
        }
    }

    #[test]
    fn bend_matches_closed_form() {
        let params = MotionParams {
            frames: 6,
            bend_angle: 0.9,
            primitive: Primitive::Cylinder { rings: 4, segments: 8 },
            ..Default::default()
        };
        let a = synthesize_animation(MotionKind::Bend, &params, 3).unwrap();
        for t in 0..6 {
            let u = t as f64 / 5.0;
            for v in 0..a.vertex_count() {
                let p = a.vertex(0, v);
                let phi = 0.9 * u * (p[1] + 0.5);
                let want = [
                    phi.cos() * p[0] - phi.sin() * p[1],
                    phi.sin() * p[0] + phi.cos() * p[1],
                    p[2],
                ];
                let got = a.vertex(t, v);
                for k in 0..3 {
                    assert!((got[k] - want[k]).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn two_part_moves_only_positive_half() {
        let params = MotionParams {
            frames: 3,
            velocity: [0.0, 0.1, 0.0],
            split_axis: 0,
            ..Default::default()
        };
        let a = synthesize_animation(MotionKind::TwoPart, &params, 4).unwrap();
        for v in 0..a.vertex_count() {
            let d = geom::sub(a.vertex(2, v), a.vertex(0, v));
            let want = if a.vertex(0, v)[0] > 0.0 { 0.2 } else { 0.0 };
            assert!((d[1] - want).abs() < 1e-6);
        }
    }

    #[test]
    fn synthesis_is_deterministic_and_normalized() {
        let p = MotionParams {
            stretch: [1.0, 2.0, 0.5],
            ..Default::default()
        };
        let a = synthesize_animation(MotionKind::Bend, &p, 9).unwrap();
        let b = synthesize_animation(MotionKind::Bend, &p, 9).unwrap();
        assert_eq!(a, b);
        let (lo, hi) = bounds(a.vertices_canonical.iter().map(|&p| to_f64(p)));
        for k in 0..3 {
            assert!(lo[k] >= -0.5 - 1e-6 && hi[k] <= 0.5 + 1e-6);
        }
        assert!((hi[1] - lo[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn single_face_sampling_uses_face_zero() {
        let spec = sample_surface(&single_triangle(), 50, 1).unwrap();
        assert!(spec.face_ids.iter().all(|&f| f == 0));
        for b in &spec.barycentrics {
            assert!(b.iter().all(|&x| x >= 0.0));
            assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_mesh_and_zero_count_are_errors() {
        let mut a = single_triangle();
        assert!(sample_surface(&a, 0, 1).is_err());
        a.faces.clear();
        assert!(sample_surface(&a, 4, 1).is_err());
    }

    #[test]
    fn area_proportional_face_frequency() {
        // Two faces with areas 1 and 3.
        let v = vec![
            [0.0f32, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 2.0, 0.0],
            [0.0, 0.0, 1.0],
            [3.0, 0.0, 1.0],
            [0.0, 2.0, 1.0],
        ];
        let a = MeshAnimation {
            vertices_canonical: v.clone(),
            faces: vec![[0, 1, 2], [3, 4, 5]],
            frames: vec![v],
            colors: None,
            frame_rate: 24.0,
            scale: 1.0,
            offset: [0.0; 3],
        };
        assert!((a.face_area(0) - 1.0).abs() < 1e-12);
        assert!((a.face_area(1) - 3.0).abs() < 1e-12);
        let n = 40_000;
        let spec = sample_surface(&a, n, 11).unwrap();
        let freq = spec.face_ids.iter().filter(|&&f| f == 1).count() as f64 / n as f64;
        // Binomial 3σ = 3·sqrt(0.75·0.25/40000) ≈ 0.0065, inside the 0.01 band.
        assert!((freq - 0.75).abs() < 0.01, "freq {freq}");
    }

    #[test]
    fn static_animation_has_zero_displacements() {
        let params = MotionParams {
            frames: 4,
            velocity: [0.0; 3],
            ..Default::default()
        };
        let a = synthesize_animation(MotionKind::Translate, &params, 1).unwrap();
        let spec = sample_surface(&a, 100, 2).unwrap();
        let tr = evaluate_tracks(&a, &spec).unwrap();
        assert!(tr.displacements.iter().flatten().all(|d| *d == [0.0; 3]));
    }

    #[test]
    fn translation_tracks_are_t_times_v() {
        let params = MotionParams {
            frames: 5,
            velocity: [0.02, -0.01, 0.03],
            ..Default::default()
        };
        let a = synthesize_animation(MotionKind::Translate, &params, 1).unwrap();
        let spec = sample_surface(&a, 300, 5).unwrap();
        let tr = evaluate_tracks(&a, &spec).unwrap();
        assert!(tr.displacements[0].iter().all(|d| *d == [0.0; 3]));
        for t in 0..5 {
            for d in &tr.displacements[t] {
                for k in 0..3 {
                    assert!((d[k] - t as f64 * params.velocity[k]).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn bend_tracks_match_vertexwise_closed_form() {
        let params = MotionParams {
            frames: 4,
            bend_angle: 1.2,
            ..Default::default()
        };
        let a = synthesize_animation(MotionKind::Bend, &params, 6).unwrap();
        let spec = sample_surface(&a, 200, 8).unwrap();
        let tr = evaluate_tracks(&a, &spec).unwrap();
        for t in 0..4 {
            let u = t as f64 / 3.0;
            for (i, (&f, b)) in spec.face_ids.iter().zip(&spec.barycentrics).enumerate() {
                let mut want = [0.0; 3];
                let mut base = [0.0; 3];
                for k in 0..3 {
                    let p = a.vertex(0, a.faces[f][k] as usize);
                    let q = bend_point(p, 1.2, u);
                    for d in 0..3 {
                        want[d] += b[k] * q[d];
                        base[d] += b[k] * p[d];
                    }
                }
                for d in 0..3 {
                    assert!((tr.displacements[t][i][d] - (want[d] - base[d])).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn save_load_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let a = synthesize_animation(MotionKind::Rotate, &MotionParams::default(), 3).unwrap();
        save_animation(&a, dir.path()).unwrap();
        let b = load_animation(dir.path()).unwrap();
        assert_eq!(a, b);
        assert_eq!(b.frames.len(), 8);
    }

    #[test]
    fn static_single_frame_and_overwrite() {
        let dir = tempfile::tempdir().unwrap();
        let one = MotionParams {
            frames: 1,
            ..Default::default()
        };
        let a = synthesize_animation(MotionKind::Translate, &one, 3).unwrap();
        save_animation(&a, dir.path()).unwrap();
        let mut b = synthesize_animation(MotionKind::Bend, &MotionParams::default(), 4).unwrap();
        b.colors = None;
        save_animation(&b, dir.path()).unwrap();
        assert!(!dir.path().join("colors.bin").exists());
        assert_eq!(load_animation(dir.path()).unwrap(), b);
    }

    #[test]
    fn load_diagnostics_are_distinct() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_animation(dir.path()), Err(Error::MissingFile(_))));

        let a = synthesize_animation(MotionKind::Translate, &MotionParams::default(), 3).unwrap();
        save_animation(&a, dir.path()).unwrap();
        // Perturb frame 0 on disk.
        let mut bytes = fs::read(dir.path().join("frames.bin")).unwrap();
        bytes[0..4].copy_from_slice(&9.0f32.to_le_bytes());
        fs::write(dir.path().join("frames.bin"), &bytes).unwrap();
        let err = load_animation(dir.path()).unwrap_err();
        assert!(err.to_string().contains("canonical mismatch"));

        bytes.truncate(bytes.len() - 4);
        fs::write(dir.path().join("frames.bin"), &bytes).unwrap();
        assert!(matches!(load_animation(dir.path()), Err(Error::Shape(_))));

        fs::write(dir.path().join("manifest.json"), b"{\"version\":1}").unwrap();
        assert!(matches!(load_animation(dir.path()), Err(Error::Header { .. })));
    }

    #[test]
    fn load_normalizes_foreign_units() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = synthesize_animation(MotionKind::Translate, &MotionParams::default(), 3).unwrap();
        for f in &mut a.frames {
            for p in f.iter_mut() {
                *p = [p[0] * 4.0 + 10.0, p[1] * 4.0, p[2] * 4.0];
            }
        }
        a.vertices_canonical = a.frames[0].clone();
        a.scale = 1.0;
        a.offset = [0.0; 3];
        save_animation(&a, dir.path()).unwrap();
        let b = load_animation(dir.path()).unwrap();
        assert!((b.scale - 0.25).abs() < 1e-6);
        assert!((b.offset[0] - 10.0).abs() < 1e-5);
        let d = geom::sub(b.vertex(7, 0), b.vertex(0, 0));
        assert!((d[0] - 0.35).abs() < 1e-5);
    }
}
