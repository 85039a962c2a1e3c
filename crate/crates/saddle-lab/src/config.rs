//! Flat key = value experiment configuration: per-experiment defaults, an
//! optional config file, and command-line overrides (override wins), with
//! every resolved value echoed into the run manifest.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use crate::{Error, Result};

/// The experiments the runner knows about.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Experiment {
    /// Saddle-parameter estimation plus region certification for a PCA
    /// population objective.
    Certify,
    /// Leave-one-out stability sweep for PCA with bound and chain audits.
    StabilityPca,
    /// Leave-one-out stability sweep for single-component ICA.
    StabilityIca,
    /// Near-stationary branch classifier sweep for PCA matrices.
    NearStationary,
    /// Near-minimum and balanced-saddle invariants for the exact ICA tensor.
    NearMinimum,
    /// Tensor-decomposition recovery of the ICA mixing matrix.
    RecoverIca,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Certify => "certify",
            Experiment::StabilityPca => "stability-pca",
            Experiment::StabilityIca => "stability-ica",
            Experiment::NearStationary => "near-stationary",
            Experiment::NearMinimum => "near-minimum",
            Experiment::RecoverIca => "recover-ica",
        }
    }

    /// Every key the experiment understands, with its default value. A key
    /// outside this list is a validation error.
    pub fn defaults(self) -> Vec<(&'static str, String)> {
        let mut v: Vec<(&'static str, String)> = vec![("seed", "0".into())];
        match self {
            Experiment::Certify => {
                v.push(("d", "6".into()));
                v.push(("eigenvalues", "".into()));
                v.push(("points", "2000".into()));
                v.push(("estimate_points", "400".into()));
            }
            Experiment::StabilityPca => {
                v.push(("d", "10".into()));
                v.push(("eigenvalues", "".into()));
                v.push(("n_values", "100,200,400,800,1600,3200".into()));
                v.push(("trials", "50".into()));
            }
            Experiment::StabilityIca => {
                v.push(("d", "3".into()));
                v.push(("n_values", "20,40,80".into()));
                v.push(("trials", "10".into()));
                v.push(("grad_tol", "1e-9".into()));
                v.push(("max_iters", "20000".into()));
                v.push(("restarts", "3".into()));
            }
            Experiment::NearStationary => {
                v.push(("d", "20".into()));
                v.push(("spectra", "10".into()));
                v.push(("points", "10000".into()));
                v.push(("c", "0.015625".into()));
                v.push(("min_gap", "0.2".into()));
            }
            Experiment::NearMinimum => {
                v.push(("d_values", "3,4,5,6,7,8".into()));
                v.push(("points", "1000".into()));
            }
            Experiment::RecoverIca => {
                v.push(("d", "4".into()));
                v.push(("trials", "20".into()));
                v.push(("n", "100000".into()));
                v.push(("n_values", "1000,4000,16000,64000".into()));
                v.push(("grad_tol", "1e-10".into()));
                v.push(("max_iters", "20000".into()));
                v.push(("restarts", "3".into()));
            }
        }
        v
    }
}

/// Resolved settings: defaults overlaid by the config file, overlaid by
/// command-line `--set` pairs and the `--seed` flag.
#[derive(Clone, Debug)]
pub struct Settings {
    experiment: Experiment,
    map: BTreeMap<String, String>,
}

/// Parse one `key = value` (or `key=value`) line; blank lines and `#`
/// comments yield None.
fn parse_line(line: &str) -> Result<Option<(String, String)>> {
    let trimmed = line.trim();
    if trimmed.is_empty() || trimmed.starts_with('#') {
        return Ok(None);
    }
    let (k, v) = trimmed.split_once('=').ok_or_else(|| {
        Error::InvalidConfig(format!("expected `key = value`, got `{trimmed}`"))
    })?;
    Ok(Some((k.trim().to_string(), v.trim().to_string())))
}

impl Settings {
    pub fn resolve(
        experiment: Experiment,
        config_path: Option<&Path>,
        seed_flag: Option<u64>,
        overrides: &[(String, String)],
    ) -> Result<Settings> {
        let defaults = experiment.defaults();
        let known: BTreeSet<&str> = defaults.iter().map(|(k, _)| *k).collect();
        let mut map: BTreeMap<String, String> =
            defaults.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();

        if let Some(path) = config_path {
            let text = std::fs::read_to_string(path).map_err(|e| {
                Error::InvalidConfig(format!("cannot read {}: {e}", path.display()))
            })?;
            for line in text.lines() {
                if let Some((k, v)) = parse_line(line)? {
                    if !known.contains(k.as_str()) {
                        return Err(unknown_key(&k, experiment, &known));
                    }
                    map.insert(k, v);
                }
            }
        }
        for (k, v) in overrides {
            if !known.contains(k.as_str()) {
                return Err(unknown_key(k, experiment, &known));
            }
            map.insert(k.clone(), v.clone());
        }
        if let Some(seed) = seed_flag {
            map.insert("seed".into(), seed.to_string());
        }
        Ok(Settings { experiment, map })
    }

    pub fn experiment(&self) -> Experiment {
        self.experiment
    }

    fn raw(&self, key: &str) -> Result<&str> {
        self.map
            .get(key)
            .map(|s| s.as_str())
            .ok_or_else(|| Error::InvalidConfig(format!("missing key `{key}`")))
    }

    pub fn usize_of(&self, key: &str) -> Result<usize> {
        let raw = self.raw(key)?;
        raw.parse()
            .map_err(|_| Error::InvalidConfig(format!("`{key}` must be a nonnegative integer, got `{raw}`")))
    }

    pub fn u64_of(&self, key: &str) -> Result<u64> {
        let raw = self.raw(key)?;
        raw.parse()
            .map_err(|_| Error::InvalidConfig(format!("`{key}` must be a nonnegative integer, got `{raw}`")))
    }

    pub fn f64_of(&self, key: &str) -> Result<f64> {
        let raw = self.raw(key)?;
        let v: f64 = raw
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("`{key}` must be a number, got `{raw}`")))?;
        if !v.is_finite() {
            return Err(Error::InvalidConfig(format!("`{key}` must be finite, got `{raw}`")));
        }
        Ok(v)
    }

    /// Comma-separated list; empty string means an empty list.
    pub fn usize_list(&self, key: &str) -> Result<Vec<usize>> {
        let raw = self.raw(key)?;
        if raw.is_empty() {
            return Ok(vec![]);
        }
        raw.split(',')
            .map(|p| {
                p.trim().parse().map_err(|_| {
                    Error::InvalidConfig(format!("`{key}` entries must be integers, got `{p}`"))
                })
            })
            .collect()
    }

    pub fn f64_list(&self, key: &str) -> Result<Vec<f64>> {
        let raw = self.raw(key)?;
        if raw.is_empty() {
            return Ok(vec![]);
        }
        raw.split(',')
            .map(|p| {
                p.trim().parse().map_err(|_| {
                    Error::InvalidConfig(format!("`{key}` entries must be numbers, got `{p}`"))
                })
            })
            .collect()
    }

    /// The manifest body: the experiment name and every resolved key, in
    /// sorted order, one `key = value` per line.
    pub fn manifest(&self) -> String {
        let mut out = format!("experiment = {}\n", self.experiment.name());
        for (k, v) in &self.map {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }
}

fn unknown_key(key: &str, experiment: Experiment, known: &BTreeSet<&str>) -> Error {
    let names: Vec<&str> = known.iter().copied().collect();
    Error::InvalidConfig(format!(
        "unknown key `{key}` for experiment `{}` (known keys: {})",
        experiment.name(),
        names.join(", ")
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn defaults_resolve() {
        let s = Settings::resolve(Experiment::StabilityPca, None, None, &[]).unwrap();
        assert_eq!(s.usize_of("d").unwrap(), 10);
        assert_eq!(s.usize_list("n_values").unwrap(), vec![100, 200, 400, 800, 1600, 3200]);
        assert_eq!(s.u64_of("seed").unwrap(), 0);
        assert!(s.f64_list("eigenvalues").unwrap().is_empty());
    }

    #[test]
    fn file_and_overrides_win_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.txt");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "# comment\n\nd = 5\ntrials=7").unwrap();
        drop(f);
        let s = Settings::resolve(
            Experiment::StabilityPca,
            Some(&path),
            Some(99),
            &[("trials".into(), "9".into())],
        )
        .unwrap();
        assert_eq!(s.usize_of("d").unwrap(), 5);
        assert_eq!(s.usize_of("trials").unwrap(), 9);
        assert_eq!(s.u64_of("seed").unwrap(), 99);
    }

    #[test]
    fn unknown_and_malformed_keys_rejected() {
        let err = Settings::resolve(
            Experiment::StabilityPca,
            None,
            None,
            &[("bogus".into(), "1".into())],
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_)));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.txt");
        std::fs::write(&path, "no equals sign here").unwrap();
        assert!(Settings::resolve(Experiment::Certify, Some(&path), None, &[]).is_err());
    }

    #[test]
    fn typed_getters_validate() {
        let s = Settings::resolve(
            Experiment::StabilityPca,
            None,
            None,
            &[("trials".into(), "abc".into())],
        )
        .unwrap();
        assert!(s.usize_of("trials").is_err());
        let s = Settings::resolve(
            Experiment::NearStationary,
            None,
            None,
            &[("c".into(), "nan".into())],
        )
        .unwrap();
        assert!(s.f64_of("c").is_err());
    }

    #[test]
    fn manifest_lists_every_key() {
        let s = Settings::resolve(Experiment::RecoverIca, None, Some(3), &[]).unwrap();
        let m = s.manifest();
        assert!(m.starts_with("experiment = recover-ica\n"));
        for (k, _) in Experiment::RecoverIca.defaults() {
            assert!(m.contains(&format!("{k} = ")), "manifest missing {k}");
        }
        assert!(m.contains("seed = 3\n"));
    }
}
