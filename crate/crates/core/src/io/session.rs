//! Session directory layout.
//!
//! ```text
//! DIR/cameras.json
//! DIR/session.json                       (optional: default hand)
//! DIR/frames/NNNNNN/viewK.joints2d.csv   21 rows "u,v,confidence"
//! DIR/frames/NNNNNN/viewK.mask.pgm       binary P5, 255 = hand
//! DIR/frames/NNNNNN/cloud.ply            ASCII xyz, world frame (optional)
//! DIR/frames/NNNNNN/{left,right}/...     same files, one directory per hand
//! ```
//!
//! A frame directory holds either the files of the default hand directly or
//! one subdirectory per present hand.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::{create_dir, read_file, read_text, write_file, IoError};
use crate::energy::{BinaryMask, FrameObservation, ViewObservation};
use crate::geometry::{Camera, CameraRecord, CameraRig};
use crate::hand_model::{Handedness, NUM_JOINTS};
use crate::session::{Session, SessionFrame};

pub const SESSION_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CamerasFile {
    format_version: u32,
    cameras: Vec<CameraRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SessionFile {
    format_version: u32,
    hand: Handedness,
}

fn frame_dir(root: &Path, t: usize) -> PathBuf {
    root.join("frames").join(format!("{t:06}"))
}

pub fn save_session(root: &Path, session: &Session) -> Result<(), IoError> {
    create_dir(root)?;
    let cams = CamerasFile {
        format_version: SESSION_FORMAT_VERSION,
        cameras: session.rig.cameras().iter().map(CameraRecord::from).collect(),
    };
    let json = serde_json::to_string_pretty(&cams).expect("camera records serialize");
    write_file(&root.join("cameras.json"), json.as_bytes())?;

    // Flat layout when a single hand appears anywhere, subdirectories otherwise.
    let hands = session.hands();
    let flat = (hands.len() <= 1).then(|| hands.iter().next().copied().unwrap_or(Handedness::Right));
    if let Some(hand) = flat {
        let meta = SessionFile { format_version: SESSION_FORMAT_VERSION, hand };
        write_file(&root.join("session.json"), serde_json::to_string_pretty(&meta).expect("serializes").as_bytes())?;
    }
    create_dir(&root.join("frames"))?;
    for (t, frame) in session.frames.iter().enumerate() {
        let dir = frame_dir(root, t);
        create_dir(&dir)?;
        for (hand, obs) in &frame.hands {
            let hand_dir = if flat.is_some() { dir.clone() } else { dir.join(hand.as_str()) };
            create_dir(&hand_dir)?;
            write_observation(&hand_dir, obs)?;
        }
    }
    Ok(())
}

fn write_observation(dir: &Path, obs: &FrameObservation) -> Result<(), IoError> {
    for (k, view) in obs.views.iter().enumerate() {
        let mut csv = String::new();
        for i in 0..NUM_JOINTS {
            let c = view.confidence[i];
            if c > 0.0 {
                let p = view.joints2d[i];
                writeln!(csv, "{:?},{:?},{:?}", p.x, p.y, c).expect("string write");
            } else {
                csv.push_str("0,0,0\n");
            }
        }
        write_file(&dir.join(format!("view{k}.joints2d.csv")), csv.as_bytes())?;
        write_file(&dir.join(format!("view{k}.mask.pgm")), &write_mask_pgm(&view.mask))?;
    }
    write_file(&dir.join("cloud.ply"), write_ply(&obs.cloud).as_bytes())
}

pub fn load_session(root: &Path) -> Result<Session, IoError> {
    if !root.is_dir() {
        return Err(IoError::Layout(format!("session directory {} does not exist", root.display())));
    }
    let cams_path = root.join("cameras.json");
    let cams: CamerasFile = serde_json::from_str(&read_text(&cams_path)?)
        .map_err(|e| IoError::validation(&cams_path, "json", e.to_string()))?;
    if cams.format_version != SESSION_FORMAT_VERSION {
        return Err(IoError::validation(&cams_path, "format_version", format!("unsupported version {}", cams.format_version)));
    }
    let cameras = cams
        .cameras
        .iter()
        .enumerate()
        .map(|(k, r)| Camera::try_from(r).map_err(|e| IoError::validation(&cams_path, format!("cameras[{k}]"), e.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    let rig = CameraRig::new(cameras).map_err(|e| IoError::validation(&cams_path, "cameras", e.to_string()))?;

    let meta_path = root.join("session.json");
    let default_hand = if meta_path.exists() {
        let meta: SessionFile = serde_json::from_str(&read_text(&meta_path)?)
            .map_err(|e| IoError::validation(&meta_path, "json", e.to_string()))?;
        meta.hand
    } else {
        Handedness::Right
    };

    let frames_root = root.join("frames");
    if !frames_root.is_dir() {
        return Err(IoError::Layout(format!("missing {}", frames_root.display())));
    }
    let mut indices = Vec::new();
    for entry in std::fs::read_dir(&frames_root).map_err(|e| IoError::io(&frames_root, e))? {
        let entry = entry.map_err(|e| IoError::io(&frames_root, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if !entry.path().is_dir() {
            continue;
        }
        match name.parse::<usize>() {
            Ok(t) if name.len() == 6 => indices.push(t),
            _ => return Err(IoError::validation(&entry.path(), "frame directory", "name must be six decimal digits")),
        }
    }
    indices.sort_unstable();
    if indices.is_empty() {
        return Err(IoError::Layout(format!("no frame directories under {}", frames_root.display())));
    }
    for (expect, &t) in indices.iter().enumerate() {
        if t != expect {
            return Err(IoError::validation(&frame_dir(root, expect), "frame index", "frame indices must be contiguous from 0"));
        }
    }

    let mut frames = Vec::with_capacity(indices.len());
    for t in indices {
        let dir = frame_dir(root, t);
        let mut hands = BTreeMap::new();
        let subdirs: Vec<Handedness> = [Handedness::Left, Handedness::Right].into_iter().filter(|h| dir.join(h.as_str()).is_dir()).collect();
        if subdirs.is_empty() {
            if dir.join("view0.joints2d.csv").exists() || dir.join("view0.mask.pgm").exists() {
                hands.insert(default_hand, read_observation(&dir, &rig)?);
            }
        } else {
            for h in subdirs {
                hands.insert(h, read_observation(&dir.join(h.as_str()), &rig)?);
            }
        }
        frames.push(SessionFrame { hands });
    }
    Ok(Session { rig, frames })
}

fn read_observation(dir: &Path, rig: &CameraRig) -> Result<FrameObservation, IoError> {
    let mut views = Vec::with_capacity(rig.len());
    for (k, cam) in rig.cameras().iter().enumerate() {
        let csv_path = dir.join(format!("view{k}.joints2d.csv"));
        let (joints2d, confidence) = read_joints_csv(&csv_path)?;
        let mask_path = dir.join(format!("view{k}.mask.pgm"));
        let mask = read_mask_pgm(&read_file(&mask_path)?).map_err(|m| IoError::validation(&mask_path, format!("view {k} mask"), m))?;
        let (w, h) = (cam.intrinsics.width as usize, cam.intrinsics.height as usize);
        if mask.width != w || mask.height != h {
            return Err(IoError::validation(
                &mask_path,
                format!("view {k} mask"),
                format!("mask is {}x{}, camera {k} is {w}x{h}", mask.width, mask.height),
            ));
        }
        views.push(ViewObservation { joints2d, confidence, mask });
    }
    let ply_path = dir.join("cloud.ply");
    let cloud = if ply_path.exists() {
        read_ply(&read_text(&ply_path)?).map_err(|m| IoError::validation(&ply_path, "cloud", m))?
    } else {
        Vec::new()
    };
    Ok(FrameObservation { views, cloud, joints3d_triangulated: None })
}

type Joints2d = ([Vector2<f64>; NUM_JOINTS], [f64; NUM_JOINTS]);

fn read_joints_csv(path: &Path) -> Result<Joints2d, IoError> {
    let text = read_text(path)?;
    let rows: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    if rows.len() != NUM_JOINTS {
        return Err(IoError::validation(path, "rows", format!("expected {NUM_JOINTS} rows, found {}", rows.len())));
    }
    let mut joints = [Vector2::zeros(); NUM_JOINTS];
    let mut conf = [0.0; NUM_JOINTS];
    for (i, row) in rows.iter().enumerate() {
        let vals: Vec<f64> = row
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| IoError::validation(path, format!("row {i}"), e.to_string()))?;
        if vals.len() != 3 {
            return Err(IoError::validation(path, format!("row {i}"), format!("expected u,v,confidence, found {} fields", vals.len())));
        }
        if !vals.iter().all(|v| v.is_finite()) {
            return Err(IoError::validation(path, format!("row {i}"), "non-finite value"));
        }
        if !(0.0..=1.0).contains(&vals[2]) {
            return Err(IoError::validation(path, format!("row {i} confidence"), format!("{} outside [0, 1]", vals[2])));
        }
        joints[i] = Vector2::new(vals[0], vals[1]);
        conf[i] = vals[2];
    }
    Ok((joints, conf))
}

/// Binary P5 image, 0 = background and 255 = hand.
pub fn write_mask_pgm(mask: &BinaryMask) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width, mask.height).into_bytes();
    out.extend(mask.data.iter().map(|&b| if b { 255u8 } else { 0 }));
    out
}

/// Parses a P5 image whose samples are all 0 or `maxval`.
pub fn read_mask_pgm(bytes: &[u8]) -> Result<BinaryMask, String> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" {
        return Err(format!("expected P5 magic, found '{}'", fields[0]));
    }
    let parse = |s: &str, what: &str| s.parse::<usize>().map_err(|_| format!("bad {what} '{s}'"));
    let (w, h, maxval) = (parse(&fields[1], "width")?, parse(&fields[2], "height")?, parse(&fields[3], "maxval")?);
    if !(1..=255).contains(&maxval) {
        return Err(format!("maxval {maxval} unsupported, need 1..=255"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let data = bytes.get(pos..).unwrap_or(&[]);
    if data.len() != w * h {
        return Err(format!("raster has {} bytes, expected {}", data.len(), w * h));
    }
    let mut mask = BinaryMask::new(w, h);
    for (i, &v) in data.iter().enumerate() {
        match v as usize {
            0 => {}
            v if v == maxval => mask.data[i] = true,
            v => return Err(format!("non-binary value {v} at pixel ({}, {})", i % w.max(1), i / w.max(1))),
        }
    }
    Ok(mask)
}

pub fn write_ply(points: &[Vector3<f64>]) -> String {
    let mut s = format!("ply\nformat ascii 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nend_header\n", points.len());
    for p in points {
        writeln!(s, "{:?} {:?} {:?}", p.x, p.y, p.z).expect("string write");
    }
    s
}

/// ASCII PLY whose first element is `vertex` with `x`, `y`, `z` properties.
pub fn read_ply(text: &str) -> Result<Vec<Vector3<f64>>, String> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err("missing 'ply' magic".into());
    }
    let mut count = None;
    let mut props: Vec<String> = Vec::new();
    let mut in_vertex = false;
    loop {
        let line = lines.next().ok_or("header not terminated by end_header")?.trim();
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            ["end_header"] => break,
            ["format", fmt, _] => {
                if *fmt != "ascii" {
                    return Err(format!("unsupported format '{fmt}'"));
                }
            }
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", name, n] => {
                in_vertex = *name == "vertex";
                if in_vertex {
                    if count.is_some() {
                        return Err("duplicate vertex element".into());
                    }
                    count = Some(n.parse::<usize>().map_err(|_| format!("bad vertex count '{n}'"))?);
                } else if count.is_none() {
                    return Err("vertex must be the first element".into());
                }
            }
            ["property", _, name] if in_vertex => props.push(name.to_string()),
            ["property", ..] => {}
            _ => return Err(format!("unexpected header line '{line}'")),
        }
    }
    let count = count.ok_or("no vertex element")?;
    let idx = |n: &str| props.iter().position(|p| p == n).ok_or(format!("vertex has no '{n}' property"));
    let (ix, iy, iz) = (idx("x")?, idx("y")?, idx("z")?);
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let line = lines.next().ok_or(format!("expected {count} vertices, found {k}"))?;
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|_| format!("vertex {k}: unparsable value"))?;
        if vals.len() != props.len() {
            return Err(format!("vertex {k}: {} values for {} properties", vals.len(), props.len()));
        }
        let p = Vector3::new(vals[ix], vals[iy], vals[iz]);
        if !p.iter().all(|v| v.is_finite()) {
            return Err(format!("vertex {k}: non-finite coordinate"));
        }
        out.push(p);
    }
    Ok(out)
}
