//! Euclidean TSP instances: generation from the four point-cloud distributions,
//! distance matrices, and the TSPLIB-style text format.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A planar TSP instance.
#[derive(Debug, Clone, PartialEq)]
pub struct TspInstance {
    pub id: String,
    pub coords: Vec<(f64, f64)>,
}

impl TspInstance {
    /// Builds an instance after checking the city-count, finiteness and
    /// duplicate-point invariants.
    pub fn new(id: impl Into<String>, coords: Vec<(f64, f64)>) -> Result<Self> {
        if coords.len() < 3 {
            return Err(Error::Parameter(format!(
                "an instance needs at least 3 cities, got {}",
                coords.len()
            )));
        }
        for (i, &(x, y)) in coords.iter().enumerate() {
            if !x.is_finite() || !y.is_finite() {
                return Err(Error::Parameter(format!("city {i} has a non-finite coordinate")));
            }
        }
        let mut sorted: Vec<(f64, f64)> = coords.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Parameter("two cities share identical coordinates".into()));
        }
        Ok(Self { id: id.into(), coords })
    }

    pub fn n(&self) -> usize {
        self.coords.len()
    }

    /// Returns the instance with city `perm[k]` of `self` placed at index `k`.
    pub fn relabeled(&self, perm: &[usize]) -> Self {
        Self {
            id: self.id.clone(),
            coords: perm.iter().map(|&p| self.coords[p]).collect(),
        }
    }

    /// Multiplies every coordinate by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            id: self.id.clone(),
            coords: self.coords.iter().map(|&(x, y)| (x * factor, y * factor)).collect(),
        }
    }

    pub fn distance_matrix(&self) -> DistanceMatrix {
        distance_matrix(self)
    }
}

/// Dense symmetric Euclidean distance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    d: Array2<f64>,
}

impl DistanceMatrix {
    pub fn n(&self) -> usize {
        self.d.nrows()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[[i, j]]
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.d
    }

    /// Wraps an explicit matrix. Used by tests and by callers that bring
    /// their own metric; symmetry and the zero diagonal are checked.
    pub fn from_array(d: Array2<f64>) -> Result<Self> {
        let n = d.nrows();
        if d.ncols() != n {
            return Err(Error::Structure(format!("distance matrix is {}x{}", n, d.ncols())));
        }
        for i in 0..n {
            if d[[i, i]] != 0.0 {
                return Err(Error::Structure(format!("non-zero diagonal at {i}")));
            }
            for j in 0..i {
                if d[[i, j]] != d[[j, i]] || d[[i, j]] < 0.0 || !d[[i, j]].is_finite() {
                    return Err(Error::Structure(format!("entry ({i},{j}) breaks symmetry or sign")));
                }
            }
        }
        Ok(Self { d })
    }
}

pub fn distance_matrix(inst: &TspInstance) -> DistanceMatrix {
    let n = inst.n();
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        let (xi, yi) = inst.coords[i];
        for j in (i + 1)..n {
            let (xj, yj) = inst.coords[j];
            let dist = ((xi - xj).powi(2) + (yi - yj).powi(2)).sqrt();
            d[[i, j]] = dist;
            d[[j, i]] = dist;
        }
    }
    DistanceMatrix { d }
}

/// The four point-cloud families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Uniform,
    Implosion,
    Explosion,
    Expansion,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::Uniform, Family::Implosion, Family::Explosion, Family::Expansion];

    pub fn name(self) -> &'static str {
        match self {
            Family::Uniform => "uniform",
            Family::Implosion => "implosion",
            Family::Explosion => "explosion",
            Family::Expansion => "expansion",
        }
    }

    fn default_strength(self) -> f64 {
        match self {
            Family::Uniform => 0.0,
            Family::Implosion => 0.25,
            Family::Explosion => 0.5,
            Family::Expansion => 3.0,
        }
    }

    fn default_radius(self) -> f64 {
        match self {
            Family::Expansion => 0.5,
            _ => 0.3,
        }
    }

    fn strength_upper(self) -> f64 {
        match self {
            Family::Expansion => 4.0,
            _ => 1.0,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "uniform" => Ok(Family::Uniform),
            "implosion" => Ok(Family::Implosion),
            "explosion" => Ok(Family::Explosion),
            "expansion" => Ok(Family::Expansion),
            other => Err(Error::Parameter(format!("unknown distribution '{other}'"))),
        }
    }
}

/// A distribution family together with its mutation parameters.
///
/// `center` of `None` draws the disk center uniformly from `[0.25, 0.75]^2`
/// using the instance seed. `strength` is the outward offset factor for
/// explosion, the contraction factor for implosion and the stretch factor
/// for expansion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistributionKind {
    pub family: Family,
    pub center: Option<(f64, f64)>,
    pub radius: f64,
    pub strength: f64,
}

impl DistributionKind {
    pub fn new(family: Family) -> Self {
        Self {
            family,
            center: None,
            radius: family.default_radius(),
            strength: family.default_strength(),
        }
    }

    pub fn uniform() -> Self {
        Self::new(Family::Uniform)
    }

    pub fn validate(&self) -> Result<()> {
        if self.family == Family::Uniform {
            return Ok(());
        }
        if !(self.radius > 0.0 && self.radius <= 0.5) {
            return Err(Error::Parameter(format!("radius {} outside (0, 0.5]", self.radius)));
        }
        let hi = self.family.strength_upper();
        if !(self.strength > 0.0 && self.strength <= hi) {
            return Err(Error::Parameter(format!(
                "{} strength {} outside (0, {hi}]",
                self.family, self.strength
            )));
        }
        if let Some((cx, cy)) = self.center {
            if !(0.0..=1.0).contains(&cx) || !(0.0..=1.0).contains(&cy) {
                return Err(Error::Parameter(format!("center ({cx}, {cy}) outside the unit square")));
            }
        }
        Ok(())
    }

    /// Maps a base point to its mutated position, before clamping.
    fn mutate(&self, c: (f64, f64), p: (f64, f64)) -> (f64, f64) {
        let (dx, dy) = (p.0 - c.0, p.1 - c.1);
        let dist = dx.hypot(dy);
        if self.family == Family::Uniform || dist >= self.radius || dist == 0.0 {
            return p;
        }
        let r = self.radius;
        let scale = match self.family {
            Family::Uniform => 1.0,
            Family::Explosion => (r + self.strength * dist) / dist,
            Family::Implosion => self.strength,
            Family::Expansion => 1.0 + self.strength * (r - dist) / r,
        };
        (c.0 + dx * scale, c.1 + dy * scale)
    }

    fn accepts(&self, c: (f64, f64), p: (f64, f64)) -> bool {
        match self.family {
            Family::Explosion => (p.0 - c.0).hypot(p.1 - c.1) >= self.radius,
            _ => true,
        }
    }
}

/// A generated instance plus the base uniform draw each city came from and
/// the disk center that was used.
#[derive(Debug, Clone)]
pub struct GenerationTrace {
    pub instance: TspInstance,
    pub base: Vec<(f64, f64)>,
    pub center: (f64, f64),
}

pub fn generate(kind: &DistributionKind, n: usize, seed: u64) -> Result<TspInstance> {
    generate_traced(kind, n, seed).map(|t| t.instance)
}

/// Generates an instance and keeps the pre-mutation uniform sample.
///
/// Each city is drawn uniformly, mutated, clamped to the unit square and
/// accepted unless it duplicates an earlier city or (for explosion) was
/// clamped back inside the disk; rejected cities are redrawn.
pub fn generate_traced(kind: &DistributionKind, n: usize, seed: u64) -> Result<GenerationTrace> {
    if n < 3 {
        return Err(Error::Parameter(format!("n must be at least 3, got {n}")));
    }
    kind.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let center = kind
        .center
        .unwrap_or_else(|| (rng.gen_range(0.25..=0.75), rng.gen_range(0.25..=0.75)));

    let mut coords = Vec::with_capacity(n);
    let mut base = Vec::with_capacity(n);
    let mut seen = std::collections::HashSet::with_capacity(n);
    while coords.len() < n {
        let p: (f64, f64) = (rng.gen(), rng.gen());
        let q = kind.mutate(center, p);
        let q = (q.0.clamp(0.0, 1.0), q.1.clamp(0.0, 1.0));
        if !kind.accepts(center, q) {
            continue;
        }
        if !seen.insert((q.0.to_bits(), q.1.to_bits())) {
            continue;
        }
        base.push(p);
        coords.push(q);
    }
    let id = format!("{}-n{}-s{}", kind.family, n, seed);
    Ok(GenerationTrace {
        instance: TspInstance { id, coords },
        base,
        center,
    })
}

fn fmt_coord(x: f64) -> String {
    format!("{x:.16e}")
}

/// Renders an instance in the TSPLIB-style text format.
pub fn to_tsplib(inst: &TspInstance) -> String {
    let mut out = String::new();
    out.push_str(&format!("NAME: {}\n", inst.id));
    out.push_str("TYPE: TSP\n");
    out.push_str(&format!("DIMENSION: {}\n", inst.n()));
    out.push_str("EDGE_WEIGHT_TYPE: EUC_2D\n");
    out.push_str("NODE_COORD_SECTION\n");
    for (k, &(x, y)) in inst.coords.iter().enumerate() {
        out.push_str(&format!("{} {} {}\n", k + 1, fmt_coord(x), fmt_coord(y)));
    }
    out.push_str("EOF\n");
    out
}

/// Parses the TSPLIB-style text format. Line numbers in errors are 1-based.
pub fn parse_tsplib(text: &str) -> Result<TspInstance> {
    let mut name: Option<String> = None;
    let mut dimension: Option<usize> = None;
    let mut coords: Vec<(f64, f64)> = Vec::new();
    let mut in_coords = false;
    let mut saw_eof = false;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if line == "EOF" {
            saw_eof = true;
            break;
        }
        if in_coords {
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("expected '<index> <x> <y>', got '{line}'"),
                });
            }
            let index: usize = fields[0].parse().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("bad node index '{}'", fields[0]),
            })?;
            if index != coords.len() + 1 {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("expected node index {}, got {index}", coords.len() + 1),
                });
            }
            let parse_f = |s: &str| {
                s.parse::<f64>().map_err(|_| Error::Parse {
                    line: line_no,
                    msg: format!("bad coordinate '{s}'"),
                })
            };
            coords.push((parse_f(fields[1])?, parse_f(fields[2])?));
            continue;
        }
        if line == "NODE_COORD_SECTION" {
            in_coords = true;
            continue;
        }
        let Some((key, value)) = line.split_once(':') else {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected 'KEY: value', got '{line}'"),
            });
        };
        let value = value.trim();
        match key.trim() {
            "NAME" => name = Some(value.to_string()),
            "TYPE" if value == "TSP" => {}
            "EDGE_WEIGHT_TYPE" if value == "EUC_2D" => {}
            "DIMENSION" => {
                dimension = Some(value.parse().map_err(|_| Error::Parse {
                    line: line_no,
                    msg: format!("bad DIMENSION '{value}'"),
                })?)
            }
            "COMMENT" => {}
            "TYPE" | "EDGE_WEIGHT_TYPE" => {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("unsupported {}: {value}", key.trim()),
                })
            }
            other => {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("unknown header key '{other}'"),
                })
            }
        }
    }

    let dimension = dimension.ok_or_else(|| Error::Structure("missing DIMENSION".into()))?;
    if !in_coords {
        return Err(Error::Structure("missing NODE_COORD_SECTION".into()));
    }
    if !saw_eof {
        return Err(Error::Structure("missing EOF".into()));
    }
    if coords.len() != dimension {
        return Err(Error::Structure(format!(
            "DIMENSION is {dimension} but {} coordinate lines were found",
            coords.len()
        )));
    }
    TspInstance::new(name.unwrap_or_default(), coords)
}

pub fn save(inst: &TspInstance, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_tsplib(inst)).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<TspInstance> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_tsplib(&text)
}

/// One row of a batch `manifest.csv`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub id: String,
    pub kind: Family,
    pub n: usize,
    pub seed: u64,
}

pub const MANIFEST_FILE: &str = "manifest.csv";

/// Generates `count` instances into `dir` with per-instance seeds
/// `seed, seed + 1, ...` and writes the manifest.
pub fn generate_batch(
    kind: &DistributionKind,
    n: usize,
    count: usize,
    seed: u64,
    dir: impl AsRef<Path>,
) -> Result<Vec<ManifestRow>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut rows = Vec::with_capacity(count);
    for k in 0..count {
        let s = seed.wrapping_add(k as u64);
        let inst = generate(kind, n, s)?;
        save(&inst, dir.join(format!("{}.tsp", inst.id)))?;
        rows.push(ManifestRow {
            id: inst.id,
            kind: kind.family,
            n,
            seed: s,
        });
    }
    write_manifest(dir, &rows)?;
    Ok(rows)
}

pub fn write_manifest(dir: impl AsRef<Path>, rows: &[ManifestRow]) -> Result<()> {
    let path = dir.as_ref().join(MANIFEST_FILE);
    let mut out = String::from("id,kind,n,seed\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.id, r.kind, r.n, r.seed));
    }
    fs::write(&path, out).map_err(|e| Error::io(&path, e))
}

/// Loads a manifest, either given as the directory or the csv file itself.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<(PathBuf, Vec<ManifestRow>)> {
    let path = path.as_ref();
    let (dir, file) = if path.is_dir() {
        (path.to_path_buf(), path.join(MANIFEST_FILE))
    } else {
        (
            path.parent().map(Path::to_path_buf).unwrap_or_default(),
            path.to_path_buf(),
        )
    };
    let text = fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == "id,kind,n,seed" => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                msg: "manifest header must be 'id,kind,n,seed'".into(),
            })
        }
    }
    let mut rows = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: String| Error::Parse { line: idx + 1, msg };
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 4 {
            return Err(bad(format!("expected 4 columns, got {}", f.len())));
        }
        rows.push(ManifestRow {
            id: f[0].to_string(),
            kind: f[1].parse().map_err(|_| bad(format!("bad kind '{}'", f[1])))?,
            n: f[2].parse().map_err(|_| bad(format!("bad n '{}'", f[2])))?,
            seed: f[3].parse().map_err(|_| bad(format!("bad seed '{}'", f[3])))?,
        });
    }
    Ok((dir, rows))
}

/// Loads every instance listed in a manifest.
pub fn load_manifest_instances(path: impl AsRef<Path>) -> Result<Vec<TspInstance>> {
    let (dir, rows) = read_manifest(path)?;
    rows.iter()
        .map(|r| {
            let inst = load(dir.join(format!("{}.tsp", r.id)))?;
            if inst.n() != r.n {
                return Err(Error::Structure(format!(
                    "instance {} has {} cities, manifest says {}",
                    r.id,
                    inst.n(),
                    r.n
                )));
            }
            Ok(inst)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> TspInstance {
        TspInstance::new("sq", vec![(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]).unwrap()
    }

    #[test]
    fn uniform_is_deterministic_and_in_range() {
        let k = DistributionKind::uniform();
        let a = generate(&k, 4, 7).unwrap();
        let b = generate(&k, 4, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n(), 4);
        for &(x, y) in &a.coords {
            assert!((0.0..=1.0).contains(&x) && (0.0..=1.0).contains(&y));
        }
    }

    #[test]
    fn explosion_empties_the_disk() {
        let k = DistributionKind::new(Family::Explosion);
        let t = generate_traced(&k, 100, 1).unwrap();
        let c = t.center;
        let min = t
            .instance
            .coords
            .iter()
            .map(|p| (p.0 - c.0).hypot(p.1 - c.1))
            .fold(f64::INFINITY, f64::min);
        assert!(min >= k.radius, "closest point at {min}");
    }

    #[test]
    fn implosion_pulls_disk_points_inward() {
        let k = DistributionKind::new(Family::Implosion);
        let t = generate_traced(&k, 100, 1).unwrap();
        let c = t.center;
        let mut inside = 0;
        for (p, q) in t.base.iter().zip(&t.instance.coords) {
            let before = (p.0 - c.0).hypot(p.1 - c.1);
            if before < k.radius {
                inside += 1;
                let after = (q.0 - c.0).hypot(q.1 - c.1);
                assert!(after < before);
            }
        }
        assert!(inside > 0);
    }

    #[test]
    fn bad_parameters_are_rejected() {
        let mut k = DistributionKind::new(Family::Explosion);
        k.radius = 0.6;
        assert!(matches!(generate(&k, 10, 0), Err(Error::Parameter(_))));
        let mut k = DistributionKind::new(Family::Implosion);
        k.strength = 0.0;
        assert!(matches!(generate(&k, 10, 0), Err(Error::Parameter(_))));
        assert!(generate(&DistributionKind::uniform(), 2, 0).is_err());
    }

    #[test]
    fn square_distances() {
        let d = square().distance_matrix();
        assert_eq!(d.get(0, 1), 1.0);
        assert_eq!(d.get(1, 2), 1.0);
        assert_eq!(d.get(0, 2), 2f64.sqrt());
        assert_eq!(d.get(1, 3), 2f64.sqrt());
        for i in 0..4 {
            assert_eq!(d.get(i, i), 0.0);
        }
    }

    #[test]
    fn distances_match_pairwise_loop() {
        let inst = generate(&DistributionKind::uniform(), 10, 99).unwrap();
        let d = inst.distance_matrix();
        for (i, a) in inst.coords.iter().enumerate() {
            for (j, b) in inst.coords.iter().enumerate() {
                let dx = a.0 - b.0;
                let dy = a.1 - b.1;
                assert_eq!(d.get(i, j), (dx * dx + dy * dy).sqrt());
            }
        }
    }

    #[test]
    fn parses_hand_written_file() {
        let text = "NAME: tri\nTYPE: TSP\nDIMENSION: 3\nEDGE_WEIGHT_TYPE: EUC_2D\n\
                    NODE_COORD_SECTION\n1 0 0\n2 1 0\n3 0.5 0.25\nEOF\n";
        let inst = parse_tsplib(text).unwrap();
        assert_eq!(inst.id, "tri");
        assert_eq!(inst.coords, vec![(0.0, 0.0), (1.0, 0.0), (0.5, 0.25)]);
    }

    #[test]
    fn dimension_mismatch_is_structural() {
        let text = "NAME: x\nTYPE: TSP\nDIMENSION: 5\nEDGE_WEIGHT_TYPE: EUC_2D\n\
                    NODE_COORD_SECTION\n1 0 0\n2 1 0\n3 0 1\n4 1 1\nEOF\n";
        assert!(matches!(parse_tsplib(text), Err(Error::Structure(_))));
    }

    #[test]
    fn malformed_line_names_the_line() {
        let text = "NAME: x\nTYPE: TSP\nDIMENSION: 3\nEDGE_WEIGHT_TYPE: EUC_2D\n\
                    NODE_COORD_SECTION\n1 0 0\n2 1 zero\n3 0 1\nEOF\n";
        match parse_tsplib(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 7),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let inst = generate(&DistributionKind::new(Family::Expansion), 37, 5).unwrap();
        let path = dir.path().join("a.tsp");
        save(&inst, &path).unwrap();
        assert_eq!(load(&path).unwrap(), inst);
    }

    #[test]
    fn batch_writes_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let rows = generate_batch(&DistributionKind::uniform(), 12, 5, 3, dir.path()).unwrap();
        let (_, back) = read_manifest(dir.path()).unwrap();
        assert_eq!(rows, back);
        assert_eq!(load_manifest_instances(dir.path()).unwrap().len(), 5);
    }
}
