//! Dataset generation, normalization statistics, and persistence.
//!
//! Datasets are line-delimited JSON: one header line carrying provenance
//! (kind, domain, seed, sampling ranges, format version) followed by one
//! `(instance, solution)` pair per line. Serialization round-trips f64
//! exactly, so `load(save(d)) == d` bit-for-bit.
//!
//! Sample `i` of a dataset draws from the derived stream
//! `derive(seed, index_offset + i)`. Generation parallelizes over samples
//! without affecting the result, and validation splits stay disjoint from
//! training by construction when callers give them disjoint index windows
//! under one master seed.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problems::{self, Domain, ProblemInstance, ProblemKind, ProblemRanges, SolutionVec};
use crate::rng::Rng;

pub const DATASET_FORMAT_VERSION: u32 = 1;
pub const STATS_FORMAT_VERSION: u32 = 1;

/// How many consecutive infeasible draws generation tolerates per sample.
const MAX_RESAMPLES: usize = 100;

/// A labelled dataset: instances paired with oracle solutions.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub kind: ProblemKind,
    pub domain: Domain,
    pub seed: u64,
    pub index_offset: u64,
    pub ranges: ProblemRanges,
    pub pairs: Vec<(ProblemInstance, SolutionVec)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DatasetHeader {
    format_version: u32,
    file_type: String,
    kind: ProblemKind,
    domain: Domain,
    seed: u64,
    index_offset: u64,
    size: usize,
    ranges: ProblemRanges,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PairRecord {
    instance: ProblemInstance,
    solution: SolutionVec,
}

/// Generates `size` oracle-labelled pairs. Deterministic in
/// `(kind, size, domain, seed, index_offset)` regardless of thread count.
pub fn generate_dataset(
    kind: ProblemKind,
    size: usize,
    domain: Domain,
    seed: u64,
    index_offset: u64,
    ranges: &ProblemRanges,
) -> Result<Dataset> {
    if size == 0 {
        return Err(Error::invalid_argument("dataset size must be >= 1"));
    }
    ranges.validate()?;
    let pairs: Result<Vec<(ProblemInstance, SolutionVec)>> = (0..size)
        .into_par_iter()
        .map(|i| {
            let mut rng = Rng::derive(seed, index_offset + i as u64);
            let mut failures = 0;
            loop {
                let x = problems::sample_instance(kind, domain, ranges, &mut rng);
                match problems::oracle(&x) {
                    Ok(y) => {
                        let value = problems::objective(&x, &y)?;
                        if !value.is_finite() {
                            return Err(Error::Generation(format!(
                                "sample {i}: oracle objective not finite"
                            )));
                        }
                        return Ok((x, y));
                    }
                    Err(Error::InfeasibleInstance(_)) => {
                        failures += 1;
                        if failures > MAX_RESAMPLES {
                            return Err(Error::Generation(format!(
                                "sample {i}: {MAX_RESAMPLES} consecutive infeasible instances"
                            )));
                        }
                    }
                    Err(e) => return Err(e),
                }
            }
        })
        .collect();
    Ok(Dataset { kind, domain, seed, index_offset, ranges: ranges.clone(), pairs: pairs? })
}

impl Dataset {
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = BufWriter::new(file);
        let header = DatasetHeader {
            format_version: DATASET_FORMAT_VERSION,
            file_type: "dataset".into(),
            kind: self.kind,
            domain: self.domain,
            seed: self.seed,
            index_offset: self.index_offset,
            size: self.pairs.len(),
            ranges: self.ranges.clone(),
        };
        serde_json::to_writer(&mut w, &header).map_err(io_err)?;
        w.write_all(b"\n")?;
        for (instance, solution) in &self.pairs {
            let record = PairRecord { instance: instance.clone(), solution: solution.clone() };
            serde_json::to_writer(&mut w, &record).map_err(io_err)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut lines = BufReader::new(file).lines();
        let header_line = lines
            .next()
            .ok_or_else(|| Error::Parse { line: 1, msg: "empty dataset file".into() })??;
        let header: DatasetHeader = serde_json::from_str(&header_line)
            .map_err(|e| Error::Parse { line: 1, msg: e.to_string() })?;
        if header.format_version != DATASET_FORMAT_VERSION {
            return Err(Error::FormatVersion {
                found: header.format_version,
                expected: DATASET_FORMAT_VERSION,
            });
        }
        let mut pairs = Vec::with_capacity(header.size);
        for (idx, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: PairRecord = serde_json::from_str(&line)
                .map_err(|e| Error::Parse { line: idx + 2, msg: e.to_string() })?;
            pairs.push((record.instance, record.solution));
        }
        if pairs.len() != header.size {
            return Err(Error::Parse {
                line: pairs.len() + 1,
                msg: format!("header declares {} pairs, found {}", header.size, pairs.len()),
            });
        }
        Ok(Dataset {
            kind: header.kind,
            domain: header.domain,
            seed: header.seed,
            index_offset: header.index_offset,
            ranges: header.ranges,
            pairs,
        })
    }

    /// Pairs mapped to `(normalized condition, normalized solution)`.
    pub fn normalized_pairs(&self, stats: &NormStats) -> Vec<(Vec<f64>, Vec<f64>)> {
        self.pairs
            .iter()
            .map(|(x, y)| {
                (stats.normalize_condition(&x.condition()), stats.normalize_solution(&y.to_flat()))
            })
            .collect()
    }
}

fn io_err(e: serde_json::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Normalization maps fitted on a training split: z-score for condition
/// features, affine `[lo, hi] -> [-1, 1]` for each solution dimension
/// (bounds come from the feasible boxes seen in the split).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub format_version: u32,
    pub kind: ProblemKind,
    pub cond_mean: Vec<f64>,
    pub cond_std: Vec<f64>,
    pub sol_lo: Vec<f64>,
    pub sol_hi: Vec<f64>,
    /// Condition features whose training variance was zero (std replaced
    /// by 1).
    pub constant_features: Vec<usize>,
}

/// Fits normalization statistics on a (training) dataset.
pub fn fit_norm(dataset: &Dataset) -> Result<NormStats> {
    if dataset.pairs.is_empty() {
        return Err(Error::invalid_argument("cannot fit normalization on an empty dataset"));
    }
    let c_dim = dataset.kind.condition_dim();
    let n_dim = dataset.kind.solution_dim();
    let mut mean = vec![0.0; c_dim];
    let mut m2 = vec![0.0; c_dim];
    let mut sol_lo = vec![f64::INFINITY; n_dim];
    let mut sol_hi = vec![f64::NEG_INFINITY; n_dim];
    let count = dataset.pairs.len() as f64;
    for (x, _) in &dataset.pairs {
        let cond = x.condition();
        for (i, v) in cond.iter().enumerate() {
            mean[i] += v;
        }
        let (lo, hi) = x.solution_box();
        for i in 0..n_dim {
            sol_lo[i] = sol_lo[i].min(lo[i]);
            sol_hi[i] = sol_hi[i].max(hi[i]);
        }
    }
    for m in mean.iter_mut() {
        *m /= count;
    }
    for (x, _) in &dataset.pairs {
        let cond = x.condition();
        for (i, v) in cond.iter().enumerate() {
            let d = v - mean[i];
            m2[i] += d * d;
        }
    }
    let mut constant_features = Vec::new();
    let cond_std: Vec<f64> = m2
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let std = (v / count).sqrt();
            if std < 1e-12 {
                constant_features.push(i);
                1.0
            } else {
                std
            }
        })
        .collect();
    for &i in &constant_features {
        log::warn!(
            "condition feature {i} of {} is constant in the training split; std set to 1",
            dataset.kind
        );
    }
    Ok(NormStats {
        format_version: STATS_FORMAT_VERSION,
        kind: dataset.kind,
        cond_mean: mean,
        cond_std,
        sol_lo,
        sol_hi,
        constant_features,
    })
}

impl NormStats {
    pub fn normalize_condition(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cond_mean.len());
        x.iter()
            .zip(self.cond_mean.iter().zip(self.cond_std.iter()))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn normalize_solution(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.sol_lo.len());
        y.iter()
            .enumerate()
            .map(|(i, v)| 2.0 * (v - self.sol_lo[i]) / (self.sol_hi[i] - self.sol_lo[i]) - 1.0)
            .collect()
    }

    pub fn denormalize_solution(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.sol_lo.len());
        y.iter()
            .enumerate()
            .map(|(i, v)| self.sol_lo[i] + 0.5 * (v + 1.0) * (self.sol_hi[i] - self.sol_lo[i]))
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut w, self).map_err(io_err)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let stats: NormStats =
            serde_json::from_str(&text).map_err(|e| Error::Parse { line: 1, msg: e.to_string() })?;
        if stats.format_version != STATS_FORMAT_VERSION {
            return Err(Error::FormatVersion {
                found: stats.format_version,
                expected: STATS_FORMAT_VERSION,
            });
        }
        Ok(stats)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::project_feasible;

    fn tmpdir() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn generation_is_deterministic_and_serialization_is_byte_stable() {
        let ranges = ProblemRanges::default();
        let a = generate_dataset(ProblemKind::Msr3, 50, Domain::In, 7, 0, &ranges).unwrap();
        let b = generate_dataset(ProblemKind::Msr3, 50, Domain::In, 7, 0, &ranges).unwrap();
        assert_eq!(a, b);
        let dir = tmpdir();
        let p1 = dir.path().join("a.jsonl");
        let p2 = dir.path().join("b.jsonl");
        a.save(&p1).unwrap();
        b.save(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn disjoint_index_windows_give_disjoint_samples() {
        let ranges = ProblemRanges::default();
        let train = generate_dataset(ProblemKind::Msr3, 20, Domain::In, 7, 0, &ranges).unwrap();
        let val = generate_dataset(ProblemKind::Msr3, 20, Domain::In, 7, 20, &ranges).unwrap();
        for (x, _) in &val.pairs {
            assert!(!train.pairs.iter().any(|(tx, _)| tx == x));
        }
    }

    #[test]
    fn single_pair_dataset() {
        let ranges = ProblemRanges::default();
        let d = generate_dataset(ProblemKind::Nu, 1, Domain::In, 3, 0, &ranges).unwrap();
        assert_eq!(d.pairs.len(), 1);
    }

    #[test]
    fn roundtrip_equality() {
        let ranges = ProblemRanges::default();
        for kind in [ProblemKind::Co, ProblemKind::Msr3, ProblemKind::Nu] {
            let d = generate_dataset(kind, 100, Domain::In, 11, 0, &ranges).unwrap();
            let dir = tmpdir();
            let path = dir.path().join("d.jsonl");
            d.save(&path).unwrap();
            let back = Dataset::load(&path).unwrap();
            assert_eq!(d, back);
        }
    }

    #[test]
    fn tampered_version_is_rejected() {
        let ranges = ProblemRanges::default();
        let d = generate_dataset(ProblemKind::Msr3, 3, Domain::In, 1, 0, &ranges).unwrap();
        let dir = tmpdir();
        let path = dir.path().join("d.jsonl");
        d.save(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let tampered = text.replacen("\"format_version\":1", "\"format_version\":99", 1);
        std::fs::write(&path, tampered).unwrap();
        assert!(matches!(Dataset::load(&path), Err(Error::FormatVersion { found: 99, .. })));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let ranges = ProblemRanges::default();
        let d = generate_dataset(ProblemKind::Msr3, 3, Domain::In, 1, 0, &ranges).unwrap();
        let dir = tmpdir();
        let path = dir.path().join("d.jsonl");
        d.save(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut broken: Vec<String> = text.lines().map(|s| s.to_string()).collect();
        broken[2] = "{not json".into();
        std::fs::write(&path, broken.join("\n")).unwrap();
        match Dataset::load(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn stored_labels_survive_random_candidate_audit() {
        // Spot-check: each stored solution beats 1e3 random feasible
        // candidates for its instance.
        let ranges = ProblemRanges::default();
        let mut rng = Rng::new(123);
        for kind in [ProblemKind::Co, ProblemKind::Msr3, ProblemKind::Nu] {
            let d = generate_dataset(kind, 10, Domain::In, 5, 0, &ranges).unwrap();
            let sense = kind.sense();
            for (x, y_star) in &d.pairs {
                let best = problems::objective(x, y_star).unwrap();
                let dim = kind.solution_dim();
                for _ in 0..1000 {
                    let raw: Vec<f64> = (0..dim).map(|_| rng.normal() * 50.0).collect();
                    let cand = project_feasible(x, &raw);
                    let v = problems::objective(x, &cand).unwrap();
                    let slack = match sense {
                        crate::problems::Sense::Minimize => v + 1e-6,
                        crate::problems::Sense::Maximize => v - 1e-6,
                    };
                    assert!(
                        sense.at_least_as_good(best, slack),
                        "{kind}: candidate {v} beat stored label {best}"
                    );
                }
            }
        }
    }

    #[test]
    fn norm_stats_roundtrip_and_identity() {
        let ranges = ProblemRanges::default();
        let d = generate_dataset(ProblemKind::Msr3, 200, Domain::In, 9, 0, &ranges).unwrap();
        let stats = fit_norm(&d).unwrap();
        let dir = tmpdir();
        let path = dir.path().join("stats.json");
        stats.save(&path).unwrap();
        let back = NormStats::load(&path).unwrap();
        assert_eq!(stats, back);

        let mut rng = Rng::new(4);
        for _ in 0..100 {
            let y: Vec<f64> = (0..3).map(|_| rng.uniform_in(0.0, 10.0)).collect();
            let round = stats.denormalize_solution(&stats.normalize_solution(&y));
            for (a, b) in y.iter().zip(round.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn normalized_features_are_centered() {
        let ranges = ProblemRanges::default();
        let d = generate_dataset(ProblemKind::Co, 2000, Domain::In, 13, 0, &ranges).unwrap();
        let stats = fit_norm(&d).unwrap();
        let c_dim = ProblemKind::Co.condition_dim();
        let mut mean = vec![0.0; c_dim];
        for (x, _) in &d.pairs {
            for (i, v) in stats.normalize_condition(&x.condition()).iter().enumerate() {
                mean[i] += v;
            }
        }
        for m in mean.iter_mut() {
            *m /= d.pairs.len() as f64;
        }
        for (i, m) in mean.iter().enumerate() {
            assert!(m.abs() < 0.01, "feature {i} mean {m}");
        }
        // Training solutions map inside [-1, 1].
        for (_, y) in d.pairs.iter().take(200) {
            for v in stats.normalize_solution(&y.to_flat()) {
                assert!((-1.0 - 1e-9..=1.0 + 1e-9).contains(&v));
            }
        }
    }

    #[test]
    fn constant_feature_gets_unit_std_and_zero_normalization() {
        // NU in-domain has a fixed power budget: that condition feature is
        // constant and must normalize to zero with std replaced by 1.
        let ranges = ProblemRanges::default();
        let d = generate_dataset(ProblemKind::Nu, 50, Domain::In, 2, 0, &ranges).unwrap();
        let stats = fit_norm(&d).unwrap();
        assert!(stats.constant_features.contains(&6), "{:?}", stats.constant_features);
        assert_eq!(stats.cond_std[6], 1.0);
        let x = &d.pairs[0].0;
        let z = stats.normalize_condition(&x.condition());
        assert_eq!(z[6], 0.0);
    }
}
