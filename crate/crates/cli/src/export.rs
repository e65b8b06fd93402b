//! Real/generated conversation pairs for discrimination studies.

use std::path::Path;

use serde::Serialize;
use simulacra_core::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Serialize)]
pub struct Pair {
    pub index: usize,
    pub left: String,
    pub right: String,
    /// Answer key: which side holds the generated conversation.
    pub generated_side: Side,
}

#[derive(Debug, Serialize)]
pub struct Packet {
    pub seed: u64,
    pub pairs: Vec<Pair>,
}

/// Every non-empty `.txt` file in `dir`, in file-name order.
pub fn read_real_dir(dir: &Path) -> Result<Vec<String>, String> {
    let entries = std::fs::read_dir(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    let mut paths: Vec<_> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "txt"))
        .collect();
    paths.sort();
    let mut out = Vec::new();
    for p in paths {
        let text = std::fs::read_to_string(&p).map_err(|e| format!("{}: {e}", p.display()))?;
        if !text.trim().is_empty() {
            out.push(text);
        }
    }
    Ok(out)
}

/// Pairs the i-th real conversation with the i-th generated one; a seeded
/// coin decides which goes on the left. Extra conversations on either side
/// are left out.
pub fn pair(real: &[String], generated: &[String], seed: u64) -> Packet {
    let mut rng = RngStream::new(seed);
    let pairs = real
        .iter()
        .zip(generated)
        .enumerate()
        .map(|(index, (r, g))| {
            if rng.chance(0.5) {
                Pair { index, left: g.clone(), right: r.clone(), generated_side: Side::Left }
            } else {
                Pair { index, left: r.clone(), right: g.clone(), generated_side: Side::Right }
            }
        })
        .collect();
    Packet { seed, pairs }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairs_are_truncated_and_keyed() {
        let real = vec!["r0".to_string(), "r1".to_string(), "r2".to_string()];
        let generated = vec!["g0".to_string(), "g1".to_string()];
        let packet = pair(&real, &generated, 7);
        assert_eq!(packet.pairs.len(), 2);
        for p in &packet.pairs {
            let (g, r) = match p.generated_side {
                Side::Left => (&p.left, &p.right),
                Side::Right => (&p.right, &p.left),
            };
            assert_eq!(g, &format!("g{}", p.index));
            assert_eq!(r, &format!("r{}", p.index));
        }
    }

    #[test]
    fn sides_are_balanced_over_many_pairs() {
        let n = 4000;
        let xs: Vec<String> = (0..n).map(|i| i.to_string()).collect();
        let left = pair(&xs, &xs, 1).pairs.iter().filter(|p| p.generated_side == Side::Left).count();
        assert!((left as f64 / n as f64 - 0.5).abs() < 0.03);
    }
}
