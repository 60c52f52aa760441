//! Deterministic train/val/test partitions and id-list files.

use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
    /// Where the ids come from (a directory or a generator description).
    pub source: String,
}

/// Part sizes by largest remainder: floors first, leftover items to the
/// largest fractional parts (earlier parts win ties).
fn part_sizes(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let exact = ratios.map(|r| r * n as f64);
    let mut sizes = exact.map(|x| x.floor() as usize);
    let mut left = n - sizes.iter().sum::<usize>();
    let mut order = [0, 1, 2];
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())));
    for &k in order.iter().cycle() {
        if left == 0 {
            break;
        }
        sizes[k] += 1;
        left -= 1;
    }
    sizes
}

/// Shuffles `ids` with `seed` and cuts them by `ratios` (train, val, test).
pub fn make_split(ids: &[String], ratios: [f64; 3], seed: u64, source: &str) -> Result<DatasetSplit> {
    if ids.is_empty() {
        return Err(Error::config(format!("source {source:?} has no scans")));
    }
    if ratios.iter().any(|r| !(r.is_finite() && *r >= 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!("split ratios {ratios:?} must be non-negative and sum to 1")));
    }
    check_unique(ids)?;
    let mut shuffled = ids.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let [a, b, _] = part_sizes(ids.len(), ratios);
    let test = shuffled.split_off(a + b);
    let val = shuffled.split_off(a);
    Ok(DatasetSplit {
        train: shuffled,
        val,
        test,
        seed,
        source: source.to_string(),
    })
}

fn check_unique(ids: &[String]) -> Result<()> {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(Error::config(format!("id {id:?} appears twice")));
        }
    }
    Ok(())
}

impl DatasetSplit {
    /// A split given verbatim, e.g. read from id-list files.
    pub fn from_lists(train: Vec<String>, val: Vec<String>, test: Vec<String>, source: &str) -> Result<Self> {
        let all: Vec<String> = train.iter().chain(&val).chain(&test).cloned().collect();
        check_unique(&all).map_err(|_| Error::config("split lists are not disjoint"))?;
        Ok(Self {
            train,
            val,
            test,
            seed: 0,
            source: source.to_string(),
        })
    }

    /// Checks that the lists partition exactly `ids`.
    pub fn covers(&self, ids: &[String]) -> bool {
        let mine: HashSet<&String> = self.train.iter().chain(&self.val).chain(&self.test).collect();
        let theirs: HashSet<&String> = ids.iter().collect();
        mine == theirs && mine.len() == self.train.len() + self.val.len() + self.test.len()
    }
}

/// One id per line; blank lines and `#` comments are ignored.
pub fn read_id_list(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect())
}

pub fn write_id_list(path: &Path, ids: &[String]) -> Result<()> {
    let mut text = ids.join("\n");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("s{i}")).collect()
    }

    #[test]
    fn ten_ids_split_8_1_1() {
        let s = make_split(&ids(10), [0.8, 0.1, 0.1], 3, "x").unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (8, 1, 1));
        assert!(s.covers(&ids(10)));
    }

    #[test]
    fn sizes_always_sum_to_n() {
        for n in 1..60 {
            let s = part_sizes(n, [0.7, 0.2, 0.1]);
            assert_eq!(s.iter().sum::<usize>(), n);
        }
        assert_eq!(part_sizes(3, [1.0 / 3.0; 3]), [1, 1, 1]);
    }

    #[test]
    fn same_seed_same_split() {
        let a = make_split(&ids(50), [0.6, 0.2, 0.2], 9, "x").unwrap();
        assert_eq!(a, make_split(&ids(50), [0.6, 0.2, 0.2], 9, "x").unwrap());
        assert_ne!(a.train, make_split(&ids(50), [0.6, 0.2, 0.2], 10, "x").unwrap().train);
    }

    #[test]
    fn errors() {
        assert!(make_split(&[], [0.8, 0.1, 0.1], 0, "x").is_err());
        assert!(make_split(&ids(4), [0.8, 0.1, 0.2], 0, "x").is_err());
        assert!(make_split(&["a".into(), "a".into()], [0.5, 0.0, 0.5], 0, "x").is_err());
        assert!(DatasetSplit::from_lists(vec!["a".into()], vec![], vec!["a".into()], "x").is_err());
    }

    #[test]
    fn provided_lists_pass_through() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("train.txt");
        let list = vec!["0000000042".to_string(), "0000000007".to_string()];
        write_id_list(&p, &list).unwrap();
        let back = read_id_list(&p).unwrap();
        assert_eq!(back, list);
        let s = DatasetSplit::from_lists(back, vec![], vec!["1".into()], "kitti").unwrap();
        assert_eq!(s.train, list);
    }
}
