//! Plain-text model asset.
//!
//! ```text
//! handfit-model 1
//! handedness right
//! SKELETON
//! joint <index> <parent|-1> <slot|-1> <ox> <oy> <oz>      (21 lines, in index order)
//! joint_basis <index> <30 values, 3x10 row-major>         (21 lines)
//! MESH <vertex_count> <triangle_count>
//! v <x> <y> <z>                                           (vertex_count lines)
//! vb <30 values, 3x10 row-major>                          (vertex_count lines)
//! w <21 values>                                           (vertex_count lines)
//! f <a> <b> <c>                                           (triangle_count lines)
//! LIMITS
//! lower <45 values>
//! upper <45 values>
//! END
//! ```
//!
//! Blank lines and lines starting with `#` are ignored. Floats are written in
//! shortest round-trip form, so save followed by load is bitwise exact.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;

use super::{
    HandMesh, Handedness, JointLimits, ModelError, ShapeBlock, Skeleton, ARTICULATION_DIMS, NUM_JOINTS, SHAPE_DIMS,
};

const MAGIC: &str = "handfit-model";
const VERSION: u32 = 1;

pub struct ModelAsset {
    pub handedness: Handedness,
    pub skeleton: Skeleton,
    pub template: HandMesh,
    pub limits: JointLimits,
}

fn push_values(out: &mut String, values: impl IntoIterator<Item = f64>) {
    for v in values {
        let _ = write!(out, " {v:?}");
    }
    out.push('\n');
}

fn block_values(b: &ShapeBlock) -> impl Iterator<Item = f64> + '_ {
    (0..3).flat_map(move |r| (0..SHAPE_DIMS).map(move |c| b[(r, c)]))
}

pub fn write_model_asset(
    handedness: Handedness,
    skeleton: &Skeleton,
    template: &HandMesh,
    limits: &JointLimits,
) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC} {VERSION}");
    let _ = writeln!(out, "handedness {handedness}");
    out.push_str("SKELETON\n");
    for j in 0..NUM_JOINTS {
        let parent = skeleton.parent[j].map_or(-1, |p| p as i64);
        let slot = skeleton.articulated[j].map_or(-1, |s| s as i64);
        let _ = write!(out, "joint {j} {parent} {slot}");
        push_values(&mut out, skeleton.rest_offsets[j].iter().copied());
    }
    for j in 0..NUM_JOINTS {
        let _ = write!(out, "joint_basis {j}");
        push_values(&mut out, block_values(&skeleton.shape_basis[j]));
    }
    let _ = writeln!(out, "MESH {} {}", template.vertices.len(), template.triangles.len());
    for v in &template.vertices {
        out.push('v');
        push_values(&mut out, v.iter().copied());
    }
    for b in &template.shape_basis {
        out.push_str("vb");
        push_values(&mut out, block_values(b));
    }
    for w in &template.skinning_weights {
        out.push('w');
        push_values(&mut out, w.iter().copied());
    }
    for t in &template.triangles {
        let _ = writeln!(out, "f {} {} {}", t[0], t[1], t[2]);
    }
    out.push_str("LIMITS\nlower");
    push_values(&mut out, limits.lower.iter().copied());
    out.push_str("upper");
    push_values(&mut out, limits.upper.iter().copied());
    out.push_str("END\n");
    out
}

pub fn save_model_asset(
    path: &Path,
    handedness: Handedness,
    skeleton: &Skeleton,
    template: &HandMesh,
    limits: &JointLimits,
) -> std::io::Result<()> {
    std::fs::write(path, write_model_asset(handedness, skeleton, template, limits))
}

/// Reads and validates an asset file. Unreadable files and grammar errors are
/// `AssetParseError`; well-formed files breaking a model contract are
/// `AssetContractViolation`.
pub fn load_model_asset(path: &Path) -> Result<ModelAsset, ModelError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ModelError::AssetParseError(format!("{}: {e}", path.display())))?;
    parse_model_asset(&text)
}

struct Lines<'a> {
    inner: std::iter::Peekable<Box<dyn Iterator<Item = (usize, &'a str)> + 'a>>,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        let it: Box<dyn Iterator<Item = (usize, &'a str)> + 'a> = Box::new(
            text.lines()
                .enumerate()
                .map(|(i, l)| (i + 1, l.trim()))
                .filter(|(_, l)| !l.is_empty() && !l.starts_with('#')),
        );
        Self { inner: it.peekable() }
    }

    fn next_tagged(&mut self, tag: &str) -> Result<(usize, Vec<&'a str>), ModelError> {
        let (n, line) = self.inner.next().ok_or_else(|| parse_err(0, &format!("unexpected end of file, expected '{tag}'")))?;
        let mut fields: Vec<&str> = line.split_whitespace().collect();
        if fields.first() != Some(&tag) {
            return Err(parse_err(n, &format!("expected '{tag}', found '{line}'")));
        }
        fields.remove(0);
        Ok((n, fields))
    }
}

fn parse_err(line: usize, msg: &str) -> ModelError {
    ModelError::AssetParseError(format!("line {line}: {msg}"))
}

fn floats<const N: usize>(line: usize, fields: &[&str]) -> Result<[f64; N], ModelError> {
    if fields.len() != N {
        return Err(parse_err(line, &format!("expected {N} values, found {}", fields.len())));
    }
    let mut out = [0.0; N];
    for (o, f) in out.iter_mut().zip(fields) {
        *o = f.parse().map_err(|_| parse_err(line, &format!("bad number '{f}'")))?;
    }
    Ok(out)
}

fn int(line: usize, field: Option<&&str>) -> Result<i64, ModelError> {
    let f = field.ok_or_else(|| parse_err(line, "missing integer"))?;
    f.parse().map_err(|_| parse_err(line, &format!("bad integer '{f}'")))
}

fn block(values: &[f64; 3 * SHAPE_DIMS]) -> ShapeBlock {
    ShapeBlock::from_row_slice(values)
}

fn index(line: usize, value: i64, bound: usize, what: &str) -> Result<Option<usize>, ModelError> {
    match value {
        -1 => Ok(None),
        v if v >= 0 && (v as usize) < bound => Ok(Some(v as usize)),
        v => Err(ModelError::AssetContractViolation(format!("line {line}: {what} {v} out of range"))),
    }
}

pub fn parse_model_asset(text: &str) -> Result<ModelAsset, ModelError> {
    let mut lines = Lines::new(text);
    let (n, header) = lines.next_tagged(MAGIC)?;
    if header != [VERSION.to_string().as_str()] {
        return Err(parse_err(n, "unsupported asset version"));
    }
    let (n, hand) = lines.next_tagged("handedness")?;
    let handedness: Handedness = hand
        .first()
        .ok_or_else(|| parse_err(n, "missing handedness"))?
        .parse()
        .map_err(|e: String| parse_err(n, &e))?;

    lines.next_tagged("SKELETON")?;
    let mut skeleton = Skeleton {
        parent: [None; NUM_JOINTS],
        rest_offsets: [Vector3::zeros(); NUM_JOINTS],
        articulated: [None; NUM_JOINTS],
        shape_basis: [ShapeBlock::zeros(); NUM_JOINTS],
    };
    for j in 0..NUM_JOINTS {
        let (n, f) = lines.next_tagged("joint")?;
        if int(n, f.first())? != j as i64 {
            return Err(parse_err(n, &format!("joints must be listed in order, expected {j}")));
        }
        skeleton.parent[j] = index(n, int(n, f.get(1))?, NUM_JOINTS, "parent")?;
        skeleton.articulated[j] = index(n, int(n, f.get(2))?, ARTICULATION_DIMS / 3, "articulation slot")?;
        skeleton.rest_offsets[j] = Vector3::from(floats::<3>(n, &f[3.min(f.len())..])?);
    }
    for j in 0..NUM_JOINTS {
        let (n, f) = lines.next_tagged("joint_basis")?;
        if int(n, f.first())? != j as i64 {
            return Err(parse_err(n, &format!("joint_basis must be listed in order, expected {j}")));
        }
        skeleton.shape_basis[j] = block(&floats::<30>(n, &f[1..])?);
    }

    let (n, counts) = lines.next_tagged("MESH")?;
    let nv = int(n, counts.first())?;
    let nt = int(n, counts.get(1))?;
    if nv < 0 || nt < 0 {
        return Err(parse_err(n, "negative counts"));
    }
    let (nv, nt) = (nv as usize, nt as usize);
    let mut mesh = HandMesh {
        vertices: Vec::with_capacity(nv),
        triangles: Vec::with_capacity(nt),
        skinning_weights: Vec::with_capacity(nv),
        shape_basis: Vec::with_capacity(nv),
    };
    for _ in 0..nv {
        let (n, f) = lines.next_tagged("v")?;
        mesh.vertices.push(Vector3::from(floats::<3>(n, &f)?));
    }
    for _ in 0..nv {
        let (n, f) = lines.next_tagged("vb")?;
        mesh.shape_basis.push(block(&floats::<30>(n, &f)?));
    }
    for _ in 0..nv {
        let (n, f) = lines.next_tagged("w")?;
        mesh.skinning_weights.push(floats::<NUM_JOINTS>(n, &f)?);
    }
    for _ in 0..nt {
        let (n, f) = lines.next_tagged("f")?;
        if f.len() != 3 {
            return Err(parse_err(n, "triangle needs 3 indices"));
        }
        let mut t = [0usize; 3];
        for (k, slot) in t.iter_mut().enumerate() {
            let v = int(n, f.get(k))?;
            if v < 0 {
                return Err(ModelError::AssetContractViolation(format!("line {n}: negative vertex index")));
            }
            *slot = v as usize;
        }
        mesh.triangles.push(t);
    }

    lines.next_tagged("LIMITS")?;
    let (n, f) = lines.next_tagged("lower")?;
    let lower = floats::<ARTICULATION_DIMS>(n, &f)?;
    let (n, f) = lines.next_tagged("upper")?;
    let upper = floats::<ARTICULATION_DIMS>(n, &f)?;
    lines.next_tagged("END")?;
    if let Some((n, l)) = lines.inner.next() {
        return Err(parse_err(n, &format!("trailing content '{l}'")));
    }

    let limits = JointLimits { lower, upper };
    skeleton.validate()?;
    mesh.validate()?;
    limits.validate()?;
    Ok(ModelAsset { handedness, skeleton, template: mesh, limits })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hand_model::build_default_model;

    #[test]
    fn round_trip_is_bitwise() {
        for hand in [Handedness::Left, Handedness::Right] {
            let (s, m, l) = build_default_model(hand);
            let text = write_model_asset(hand, &s, &m, &l);
            let back = parse_model_asset(&text).unwrap();
            assert_eq!(back.handedness, hand);
            assert_eq!(back.skeleton, s);
            assert_eq!(back.template, m);
            assert_eq!(back.limits, l);
        }
    }

    #[test]
    fn half_stochastic_row_is_a_contract_violation() {
        let (s, mut m, l) = build_default_model(Handedness::Right);
        m.skinning_weights[7] = [0.0; NUM_JOINTS];
        m.skinning_weights[7][3] = 0.5;
        let text = write_model_asset(Handedness::Right, &s, &m, &l);
        assert!(matches!(parse_model_asset(&text), Err(ModelError::AssetContractViolation(_))));
    }

    #[test]
    fn missing_file_is_a_parse_error() {
        let r = load_model_asset(Path::new("/definitely/not/here.model"));
        assert!(matches!(r, Err(ModelError::AssetParseError(_))));
    }

    #[test]
    fn truncated_file_is_a_parse_error() {
        let (s, m, l) = build_default_model(Handedness::Right);
        let text = write_model_asset(Handedness::Right, &s, &m, &l);
        let cut = &text[..text.len() / 2];
        assert!(matches!(parse_model_asset(cut), Err(ModelError::AssetParseError(_))));
    }
}
