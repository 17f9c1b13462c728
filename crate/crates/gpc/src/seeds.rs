//! Hand-written seed files: one `index label` pair per line, point indices
//! 0-based as in the PLY vertex order, labels 1-based. `#` starts a comment.

use crate::error::{Error, Result};

/// Returns `(point, 0-based label)` pairs.
pub fn parse_seed_spec(text: &str, points: usize, classes: usize) -> Result<Vec<(usize, usize)>> {
    let mut seeds = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = || Error::format(format!("seed line {}: expected 'index label', got '{}'", i + 1, raw.trim()));
        let mut fields = line.split_whitespace();
        let (Some(a), Some(b), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(bad());
        };
        let index: usize = a.parse().map_err(|_| bad())?;
        let label: usize = b.parse().map_err(|_| bad())?;
        if index >= points {
            return Err(Error::format(format!("seed line {}: point {index} out of range for {points} points", i + 1)));
        }
        if !(1..=classes).contains(&label) {
            return Err(Error::format(format!("seed line {}: label {label} outside 1..={classes}", i + 1)));
        }
        seeds.push((index, label - 1));
    }
    Ok(seeds)
}
