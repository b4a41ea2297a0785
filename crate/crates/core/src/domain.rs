//! Core data model: areas, candidate sites, allocations and weights.
//!
//! Coordinates are planar kilometres. Ingestion projects lon/lat onto this
//! plane, so every downstream distance is Euclidean.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Mean Earth radius in kilometres.
pub const EARTH_RADIUS_KM: f64 = 6371.0088;

/// Weekly capacity assumed for a site whose listing carries none.
pub const DEFAULT_SITE_CAPACITY: u64 = 1120;

/// Weights outside this band trigger a warning under strict-range validation.
pub const RECOMMENDED_WEIGHT_RANGE: (f64, f64) = (1e-8, 1e6);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Longitude/latitude pair in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lon: f64,
    pub lat: f64,
}

/// Equirectangular projection about a reference meridian and parallel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub lon0: f64,
    pub lat0: f64,
}

impl Projection {
    /// Projection centred on the mean longitude and latitude of `points`.
    pub fn about_mean(points: &[GeoPoint]) -> Option<Self> {
        if points.is_empty() {
            return None;
        }
        let n = points.len() as f64;
        let lon0 = points.iter().map(|p| p.lon).sum::<f64>() / n;
        let lat0 = points.iter().map(|p| p.lat).sum::<f64>() / n;
        Some(Self { lon0, lat0 })
    }

    pub fn forward(&self, g: GeoPoint) -> Point {
        let k = EARTH_RADIUS_KM * std::f64::consts::PI / 180.0;
        Point {
            x: k * (g.lon - self.lon0) * self.lat0.to_radians().cos(),
            y: k * (g.lat - self.lat0),
        }
    }

    pub fn inverse(&self, p: Point) -> GeoPoint {
        let k = EARTH_RADIUS_KM * std::f64::consts::PI / 180.0;
        GeoPoint {
            lon: self.lon0 + p.x / (k * self.lat0.to_radians().cos()),
            lat: self.lat0 + p.y / k,
        }
    }
}

/// One cell of the cross-product of stratum axes: a level label per axis,
/// in axis order.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StratumKey(pub Vec<String>);

impl StratumKey {
    pub const SEPARATOR: char = '|';

    pub fn new<I, S>(levels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self(levels.into_iter().map(Into::into).collect())
    }

    pub fn levels(&self) -> &[String] {
        &self.0
    }
}

impl fmt::Display for StratumKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for level in &self.0 {
            if !first {
                write!(f, "{}", Self::SEPARATOR)?;
            }
            first = false;
            f.write_str(level)?;
        }
        Ok(())
    }
}

impl Serialize for StratumKey {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for StratumKey {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(StratumKey::new(s.split(StratumKey::SEPARATOR)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StratumAxis {
    pub name: String,
    pub levels: Vec<String>,
}

impl StratumAxis {
    pub fn new<S: Into<String>>(
        name: impl Into<String>,
        levels: impl IntoIterator<Item = S>,
    ) -> Self {
        Self {
            name: name.into(),
            levels: levels.into_iter().map(Into::into).collect(),
        }
    }
}

/// A demand unit (census-tract analogue).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Area {
    pub id: String,
    pub centroid: Point,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geo: Option<GeoPoint>,
    pub population: u64,
    #[serde(default)]
    pub stratum_counts: BTreeMap<StratumKey, u64>,
}

impl Area {
    pub fn new(id: impl Into<String>, centroid: Point, population: u64) -> Self {
        Self {
            id: id.into(),
            centroid,
            geo: None,
            population,
            stratum_counts: BTreeMap::new(),
        }
    }

    pub fn with_strata<I, K>(mut self, counts: I) -> Self
    where
        I: IntoIterator<Item = (K, u64)>,
        K: Into<StratumKey>,
    {
        self.stratum_counts = counts.into_iter().map(|(k, c)| (k.into(), c)).collect();
        self
    }
}

impl From<&str> for StratumKey {
    fn from(s: &str) -> Self {
        StratumKey::new(s.split(StratumKey::SEPARATOR))
    }
}

impl From<Vec<String>> for StratumKey {
    fn from(v: Vec<String>) -> Self {
        StratumKey(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub areas: Vec<Area>,
    #[serde(default)]
    pub stratum_axes: Vec<StratumAxis>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub projection: Option<Projection>,
}

impl Region {
    pub fn new(areas: Vec<Area>, stratum_axes: Vec<StratumAxis>) -> Self {
        Self {
            areas,
            stratum_axes,
            projection: None,
        }
    }

    pub fn len(&self) -> usize {
        self.areas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.areas.is_empty()
    }

    pub fn total_population(&self) -> u64 {
        self.areas.iter().map(|a| a.population).sum()
    }

    /// Diagonal of the bounding box of area centroids, in km.
    pub fn bbox_diagonal(&self) -> f64 {
        let mut it = self.areas.iter().map(|a| a.centroid);
        let Some(first) = it.next() else { return 0.0 };
        let (mut lo, mut hi) = (first, first);
        for p in it {
            lo.x = lo.x.min(p.x);
            lo.y = lo.y.min(p.y);
            hi.x = hi.x.max(p.x);
            hi.y = hi.y.max(p.y);
        }
        lo.distance(&hi)
    }

    /// Every stratum combination that appears in at least one area.
    pub fn stratum_keys(&self) -> BTreeSet<StratumKey> {
        self.areas
            .iter()
            .flat_map(|a| a.stratum_counts.keys().cloned())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSite {
    pub id: String,
    pub location: Point,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geo: Option<GeoPoint>,
    /// Tests per week.
    pub capacity: u64,
    /// 1-based site type.
    pub site_type: u32,
}

impl CandidateSite {
    pub fn new(id: impl Into<String>, location: Point, capacity: u64, site_type: u32) -> Self {
        Self {
            id: id.into(),
            location,
            geo: None,
            capacity,
            site_type,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.capacity == 0 {
            return Err(Error::InvalidParameter(format!(
                "site {}: capacity must be positive",
                self.id
            )));
        }
        if self.site_type == 0 {
            return Err(Error::InvalidParameter(format!(
                "site {}: site types start at 1",
                self.id
            )));
        }
        if !(self.location.x.is_finite() && self.location.y.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "site {}: non-finite location",
                self.id
            )));
        }
        Ok(())
    }
}

/// A set of operational sites, stored as sorted 0-based indices into the
/// candidate list, together with the budget it was drawn against.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Allocation {
    selected: Vec<usize>,
    budget: usize,
}

impl Allocation {
    /// Builds an allocation, rejecting duplicates and indices `>= n`.
    pub fn new(mut selected: Vec<usize>, budget: usize, n: usize) -> Result<Self> {
        if let Some(&index) = selected.iter().find(|&&i| i >= n) {
            return Err(Error::IndexOutOfRange { index, n });
        }
        let len = selected.len();
        selected.sort_unstable();
        selected.dedup();
        if selected.len() != len {
            return Err(Error::BudgetViolation(
                "duplicate site in allocation".into(),
            ));
        }
        Ok(Self { selected, budget })
    }

    /// Builds from indices that are known to be unique and in range.
    pub(crate) fn from_sorted_unchecked(selected: Vec<usize>, budget: usize) -> Self {
        debug_assert!(selected.windows(2).all(|w| w[0] < w[1]));
        Self { selected, budget }
    }

    pub fn selected(&self) -> &[usize] {
        &self.selected
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }

    /// Binary decision vector of length `n`.
    pub fn to_mask(&self, n: usize) -> Vec<bool> {
        let mut z = vec![false; n];
        for &i in &self.selected {
            z[i] = true;
        }
        z
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Self {
            lambda1: 1e-2,
            lambda2: 0.0,
            lambda3: 1.0,
        }
    }
}

impl Weights {
    pub fn new(lambda1: f64, lambda2: f64, lambda3: f64) -> Self {
        Self {
            lambda1,
            lambda2,
            lambda3,
        }
    }

    /// Rejects negative or non-finite weights.
    pub fn validate(&self) -> Result<()> {
        for (name, w) in self.named() {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be a nonnegative real, got {w}"
                )));
            }
        }
        Ok(())
    }

    /// Names of nonzero weights lying outside the recommended band.
    pub fn out_of_range(&self) -> Vec<&'static str> {
        let (lo, hi) = RECOMMENDED_WEIGHT_RANGE;
        self.named()
            .into_iter()
            .filter(|&(_, w)| w != 0.0 && !(lo..=hi).contains(&w))
            .map(|(name, _)| name)
            .collect()
    }

    /// Logs a warning for each weight outside the recommended band.
    pub fn warn_out_of_range(&self) {
        for name in self.out_of_range() {
            log::warn!(
                "{name} lies outside the recommended range [{:e}, {:e}]",
                RECOMMENDED_WEIGHT_RANGE.0,
                RECOMMENDED_WEIGHT_RANGE.1
            );
        }
    }

    fn named(&self) -> [(&'static str, f64); 3] {
        [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
        ]
    }
}

/// The three criterion values of one allocation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreTriple {
    pub coverage: usize,
    /// Minimax regret; `None` when not computed (zero weight).
    #[serde(default, with = "crate::serde_float::option")]
    pub d_optimality: Option<f64>,
    pub equity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    NoAreas,
    DuplicateId,
    StratumSumMismatch,
    StratumArity,
    UnknownLevel,
    EmptyAxis,
    MissingStrata,
    NonFiniteCentroid,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub area_id: Option<String>,
    pub kind: ViolationKind,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn count(&self, kind: ViolationKind) -> usize {
        self.violations.iter().filter(|v| v.kind == kind).count()
    }

    fn push(&mut self, area_id: Option<&str>, kind: ViolationKind, reason: String) {
        self.violations.push(Violation {
            area_id: area_id.map(str::to_owned),
            kind,
            reason,
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            match &v.area_id {
                Some(id) => write!(f, "area {id}: {}", v.reason)?,
                None => f.write_str(&v.reason)?,
            }
        }
        Ok(())
    }
}

/// Checks every region invariant and returns all violations found.
///
/// Stratum checks apply only when the region declares stratum axes; use
/// [`validate_region_for_equity`] when equity scoring needs them.
pub fn validate_region(region: &Region) -> ValidationReport {
    let mut report = ValidationReport::default();
    if region.areas.is_empty() {
        report.push(None, ViolationKind::NoAreas, "no areas".into());
    }

    let mut seen = HashSet::new();
    for area in &region.areas {
        if !seen.insert(area.id.as_str()) {
            report.push(
                Some(&area.id),
                ViolationKind::DuplicateId,
                "duplicate id".into(),
            );
        }
        if !(area.centroid.x.is_finite() && area.centroid.y.is_finite()) {
            report.push(
                Some(&area.id),
                ViolationKind::NonFiniteCentroid,
                "non-finite centroid".into(),
            );
        }
    }

    for axis in &region.stratum_axes {
        if axis.levels.is_empty() {
            report.push(
                None,
                ViolationKind::EmptyAxis,
                format!("stratum axis {} has no levels", axis.name),
            );
        }
    }

    if region.stratum_axes.is_empty() {
        for area in region.areas.iter().filter(|a| !a.stratum_counts.is_empty()) {
            report.push(
                Some(&area.id),
                ViolationKind::StratumArity,
                "stratum counts given but no stratum axes declared".into(),
            );
        }
        return report;
    }

    let arity = region.stratum_axes.len();
    for area in &region.areas {
        let mut sum: u64 = 0;
        for (key, &count) in &area.stratum_counts {
            sum += count;
            if key.0.len() != arity {
                report.push(
                    Some(&area.id),
                    ViolationKind::StratumArity,
                    format!("stratum {key} has {} levels, expected {arity}", key.0.len()),
                );
                continue;
            }
            for (level, axis) in key.0.iter().zip(&region.stratum_axes) {
                if !axis.levels.contains(level) {
                    report.push(
                        Some(&area.id),
                        ViolationKind::UnknownLevel,
                        format!("unknown level {level} on axis {}", axis.name),
                    );
                }
            }
        }
        if sum != area.population {
            report.push(
                Some(&area.id),
                ViolationKind::StratumSumMismatch,
                format!(
                    "stratum sum mismatch: strata sum to {sum}, population is {}",
                    area.population
                ),
            );
        }
    }
    report
}

/// [`validate_region`] plus the requirement that stratum axes exist.
pub fn validate_region_for_equity(region: &Region) -> ValidationReport {
    let mut report = validate_region(region);
    if region.stratum_axes.is_empty() {
        report.push(
            None,
            ViolationKind::MissingStrata,
            "equity scoring requires stratum axes".into(),
        );
    }
    report
}
