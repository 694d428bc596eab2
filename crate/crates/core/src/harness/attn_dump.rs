//! Writes attention maps as CSV tables and 8-bit PGM images.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::attention::{AttentionMaps, AttentionMode, MapEntry};
use crate::Result;

/// Splits an unbatched map tensor into `(group, head, L, L)` views.
/// Spatial groups are frames, temporal groups are patches, coupled has one group.
fn layout(entry: &MapEntry) -> (usize, usize, usize) {
    let s = entry.maps.shape();
    match entry.mode {
        AttentionMode::Spatial | AttentionMode::Temporal => (s[0], s[1], s[2]),
        AttentionMode::Coupled => (1, s[0], s[1]),
    }
}

fn group_name(mode: AttentionMode) -> &'static str {
    match mode {
        AttentionMode::Spatial => "frame",
        AttentionMode::Temporal => "patch",
        AttentionMode::Coupled => "all",
    }
}

/// Binary PGM with each value scaled linearly so the image maximum maps to 255.
pub fn pgm(rows: usize, cols: usize, values: &[f64]) -> Vec<u8> {
    let max = values.iter().copied().fold(0.0f64, f64::max);
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    out.extend(values.iter().map(|&v| {
        if max > 0.0 {
            (v / max * 255.0).round().clamp(0.0, 255.0) as u8
        } else {
            0
        }
    }));
    out
}

/// Writes one CSV per block and branch plus one PGM per group and head.
/// Maps must come from an unbatched encoder call. Returns the written paths.
pub fn dump(maps: &AttentionMaps, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for entry in maps {
        let (groups, heads, len) = layout(entry);
        let stem = format!("block{}_{}", entry.block, entry.mode.name());
        let data = entry.maps.data();
        let mut csv = format!("block,branch,{},head,query", group_name(entry.mode));
        for k in 0..len {
            write!(csv, ",k{k}").expect("writing to a String");
        }
        csv.push('\n');
        for g in 0..groups {
            for h in 0..heads {
                let base = (g * heads + h) * len * len;
                let image = &data[base..base + len * len];
                for q in 0..len {
                    write!(csv, "{},{},{g},{h},{q}", entry.block, entry.mode.name()).expect("writing to a String");
                    for v in &image[q * len..(q + 1) * len] {
                        write!(csv, ",{v}").expect("writing to a String");
                    }
                    csv.push('\n');
                }
                let path = dir.join(format!("{stem}_{}{g}_head{h}.pgm", group_name(entry.mode)));
                std::fs::write(&path, pgm(len, len, image))?;
                written.push(path);
            }
        }
        let path = dir.join(format!("{stem}.csv"));
        std::fs::write(&path, csv)?;
        written.push(path);
    }
    Ok(written)
}
