//! JSON Lines scenario files: one world-frame [`Scene`] per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scene::{Scene, SceneLimits};

/// Reads every scene in a JSON Lines file, validating each against the default limits.
pub fn read_scenes(path: impl AsRef<Path>) -> Result<Vec<Scene>> {
    read_scenes_with(path, &SceneLimits::default())
}

pub fn read_scenes_with(path: impl AsRef<Path>, limits: &SceneLimits) -> Result<Vec<Scene>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_scenes(BufReader::new(file), limits).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

/// Parses scenes from any line-oriented reader. Blank lines are skipped.
pub fn parse_scenes(reader: impl BufRead, limits: &SceneLimits) -> Result<Vec<Scene>> {
    let mut scenes = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io("<reader>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        scenes.push(parse_line(&line, line_no, limits)?);
    }
    Ok(scenes)
}

fn parse_line(line: &str, line_no: usize, limits: &SceneLimits) -> Result<Scene> {
    let de = &mut serde_json::Deserializer::from_str(line);
    let scene: Scene = serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        Error::Record {
            line: line_no,
            field: if field == "." { "<record>".into() } else { field },
            message: e.into_inner().to_string(),
        }
    })?;
    scene.validate(limits).map_err(|e| match e {
        Error::InvalidScene { message, .. } => Error::Record {
            line: line_no,
            field: message.split_whitespace().next().unwrap_or("").to_string(),
            message,
        },
        other => other,
    })?;
    Ok(scene)
}

pub fn write_scenes(scenes: &[Scene], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_scenes_to(scenes, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_scenes_to(scenes: &[Scene], w: &mut impl Write) -> std::io::Result<()> {
    for scene in scenes {
        serde_json::to_writer(&mut *w, scene)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
