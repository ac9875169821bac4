//! Run configuration: a `key = value` file plus command-line overrides.
//!
//! Relative paths in a config file are resolved against the file's
//! directory; paths given on the command line against the working
//! directory.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use sowcause::config::KeyValues;
use sowcause::estimators::{parse_methods, ForestParams, Method};
use sowcause::refutation::{default_kappas, RefutationTest, DEFAULT_DROP_FRACTION, DEFAULT_REPETITIONS};
use sowcause::weathergrid::GridPoint;
use sowcause::{Error, Result};

const PATH_KEYS: [&str; 9] = [
    "graph", "fields", "ndvi", "maps", "coarse", "fine", "station", "rules", "out_dir",
];

const OTHER_KEYS: [&str; 19] = [
    "methods",
    "bootstrap",
    "trim_low",
    "trim_high",
    "adjustment",
    "refute",
    "reps",
    "drop_fraction",
    "kappa_t",
    "kappa_y",
    "n_trees",
    "max_depth",
    "min_leaf",
    "max_features",
    "seed",
    "threads",
    "station_lat",
    "station_lon",
    "grid_resolution_m",
];

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Graph file; the shipped farm graph when unset.
    pub graph: Option<PathBuf>,
    pub fields: Option<PathBuf>,
    pub ndvi: Option<PathBuf>,
    /// Recommendation maps used to label fields that carry no treatment.
    pub maps: Option<PathBuf>,
    pub coarse: Option<PathBuf>,
    pub fine: Option<PathBuf>,
    pub station: Option<PathBuf>,
    pub station_location: Option<GridPoint>,
    pub rules: Option<PathBuf>,
    pub grid_resolution_m: Option<f64>,
    pub out_dir: PathBuf,
    pub methods: Vec<Method>,
    pub bootstrap: usize,
    pub trim_low: f64,
    pub trim_high: f64,
    pub adjustment: Option<Vec<String>>,
    pub refute: BTreeSet<RefutationTest>,
    pub reps: usize,
    pub drop_fraction: f64,
    pub kappa_t: Vec<f64>,
    pub kappa_y: Vec<f64>,
    pub forest: ForestParams,
    pub seed: u64,
    pub threads: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            graph: None,
            fields: None,
            ndvi: None,
            maps: None,
            coarse: None,
            fine: None,
            station: None,
            station_location: None,
            rules: None,
            grid_resolution_m: None,
            out_dir: PathBuf::from("."),
            methods: Method::ALL.to_vec(),
            bootstrap: 1000,
            trim_low: 0.2,
            trim_high: 0.8,
            adjustment: None,
            refute: [RefutationTest::Placebo, RefutationTest::Rcc, RefutationTest::Rsr]
                .into_iter()
                .collect(),
            reps: DEFAULT_REPETITIONS,
            drop_fraction: DEFAULT_DROP_FRACTION,
            kappa_t: default_kappas(),
            kappa_y: default_kappas(),
            forest: ForestParams::default(),
            seed: 0,
            threads: 1,
        }
    }
}

fn list(v: &str) -> Vec<String> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::to_string).collect()
}

fn float_list(key: &str, v: &str) -> Result<Vec<f64>> {
    list(v)
        .iter()
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| Error::invalid(format!("bad number `{s}` in `{key}`")))
        })
        .collect()
}

fn parse_refute(v: &str) -> Result<BTreeSet<RefutationTest>> {
    let mut out = BTreeSet::new();
    for name in list(v) {
        match name.as_str() {
            "none" => {}
            "all" => out.extend([
                RefutationTest::Placebo,
                RefutationTest::Rcc,
                RefutationTest::Rsr,
                RefutationTest::Ucc,
            ]),
            "placebo" => {
                out.insert(RefutationTest::Placebo);
            }
            "rcc" => {
                out.insert(RefutationTest::Rcc);
            }
            "rsr" => {
                out.insert(RefutationTest::Rsr);
            }
            "ucc" => {
                out.insert(RefutationTest::Ucc);
            }
            other => return Err(Error::invalid(format!("unknown refutation `{other}`"))),
        }
    }
    Ok(out)
}

/// Merge a config file (if any) with `key=value` overrides, resolving
/// relative paths.
pub fn load_layers(config: Option<&Path>, overrides: &[String]) -> Result<KeyValues> {
    let mut kv = KeyValues::default();
    if let Some(path) = config {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Input {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let file = KeyValues::parse(&text).map_err(|e| Error::Input {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        for key in file.keys() {
            let value = file.get(key).unwrap_or_default();
            if PATH_KEYS.contains(&key) {
                kv.set(key, base.join(value).display().to_string());
            } else {
                kv.set(key, value);
            }
        }
    }
    for item in overrides {
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| Error::invalid(format!("override `{item}` is not key=value")))?;
        kv.set(key.trim(), value.trim());
    }
    Ok(kv)
}

impl PipelineConfig {
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        if let Some(k) = kv.keys().find(|k| !PATH_KEYS.contains(k) && !OTHER_KEYS.contains(k)) {
            return Err(Error::invalid(format!("unknown config key `{k}`")));
        }
        let mut c = Self::default();
        let path = |k: &str| kv.get(k).map(PathBuf::from);
        c.graph = path("graph");
        c.fields = path("fields");
        c.ndvi = path("ndvi");
        c.maps = path("maps");
        c.coarse = path("coarse");
        c.fine = path("fine");
        c.station = path("station");
        c.rules = path("rules");
        if let Some(d) = path("out_dir") {
            c.out_dir = d;
        }
        c.grid_resolution_m = kv.parsed("grid_resolution_m")?;
        if let Some(m) = kv.get("methods") {
            c.methods = parse_methods(m)?;
        }
        if let Some(b) = kv.parsed("bootstrap")? {
            c.bootstrap = b;
        }
        if let Some(v) = kv.parsed("trim_low")? {
            c.trim_low = v;
        }
        if let Some(v) = kv.parsed("trim_high")? {
            c.trim_high = v;
        }
        c.adjustment = kv.get("adjustment").map(list);
        if let Some(r) = kv.get("refute") {
            c.refute = parse_refute(r)?;
        }
        if let Some(v) = kv.parsed("reps")? {
            c.reps = v;
        }
        if let Some(v) = kv.parsed("drop_fraction")? {
            c.drop_fraction = v;
        }
        if let Some(v) = kv.get("kappa_t") {
            c.kappa_t = float_list("kappa_t", v)?;
        }
        if let Some(v) = kv.get("kappa_y") {
            c.kappa_y = float_list("kappa_y", v)?;
        }
        if let Some(v) = kv.parsed("n_trees")? {
            c.forest.n_trees = v;
        }
        if let Some(v) = kv.parsed("max_depth")? {
            c.forest.max_depth = v;
        }
        if let Some(v) = kv.parsed("min_leaf")? {
            c.forest.min_leaf = v;
        }
        if let Some(v) = kv.parsed("max_features")? {
            c.forest.max_features = Some(v);
        }
        if let Some(v) = kv.parsed("seed")? {
            c.seed = v;
        }
        if let Some(v) = kv.parsed("threads")? {
            c.threads = v;
        }
        c.station_location = match (kv.parsed::<f64>("station_lat")?, kv.parsed::<f64>("station_lon")?) {
            (Some(lat), Some(lon)) => Some(GridPoint::new(lat, lon)?),
            (None, None) => None,
            _ => return Err(Error::invalid("station_lat and station_lon go together")),
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.bootstrap < 100 {
            return Err(Error::invalid(format!(
                "bootstrap must be at least 100, got {}",
                self.bootstrap
            )));
        }
        if !(0.0 <= self.trim_low && self.trim_low < self.trim_high && self.trim_high <= 1.0) {
            return Err(Error::invalid(format!(
                "trim bounds must satisfy 0 <= low < high <= 1, got {} and {}",
                self.trim_low, self.trim_high
            )));
        }
        if self.methods.is_empty() {
            return Err(Error::invalid("no estimation methods selected"));
        }
        if self.threads == 0 {
            return Err(Error::invalid("threads must be at least 1"));
        }
        if self.station.is_some() && self.station_location.is_none() {
            return Err(Error::invalid("station needs station_lat and station_lon"));
        }
        self.forest.validate()?;
        let inputs = [
            &self.graph,
            &self.fields,
            &self.ndvi,
            &self.maps,
            &self.coarse,
            &self.fine,
            &self.station,
            &self.rules,
        ];
        for p in inputs.into_iter().flatten() {
            if !p.is_file() {
                return Err(Error::Input {
                    path: p.display().to_string(),
                    message: "file not found".into(),
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let kv = load_layers(None, &["methods=linear,ips".into(), "bootstrap=200".into()]).unwrap();
        let c = PipelineConfig::from_kv(&kv).unwrap();
        assert_eq!(c.methods, vec![Method::Linear, Method::Ips]);
        assert_eq!(c.bootstrap, 200);
        assert_eq!((c.trim_low, c.trim_high), (0.2, 0.8));
        assert!(!c.refute.contains(&RefutationTest::Ucc));
    }

    #[test]
    fn rejects_bad_values() {
        for bad in ["bootstrap=50", "trim_low=0.8", "colour=blue", "refute=maybe", "threads=0"] {
            let kv = load_layers(None, &[bad.into()]).unwrap();
            assert!(PipelineConfig::from_kv(&kv).is_err(), "{bad}");
        }
    }

    #[test]
    fn config_paths_are_relative_to_the_file() {
        let dir = std::env::temp_dir().join(format!("sowcause-settings-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let cfg = dir.join("run.conf");
        std::fs::write(&cfg, "out_dir = results\nseed = 3\n").unwrap();
        let kv = load_layers(Some(&cfg), &["seed=4".into()]).unwrap();
        let c = PipelineConfig::from_kv(&kv).unwrap();
        assert_eq!(c.out_dir, dir.join("results"));
        assert_eq!(c.seed, 4);
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
