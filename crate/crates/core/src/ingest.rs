//! Loading regions and candidate sites from delimited text, and seeded
//! synthetic regions for tests and demos.
//!
//! File formats (comma-delimited, header row required, `#` comment lines):
//!
//! * areas: `area_id,lon,lat,population`
//! * strata: `area_id,axis,level,count[,combo]`. Rows without a `combo`
//!   value are per-axis marginal counts; an area's joint counts are then
//!   apportioned assuming independent axes. A row with `combo` set gives a
//!   joint count directly: `axis` lists the axis names and `combo` the level
//!   of each, both `|`-separated. Joint rows take precedence over marginal
//!   rows for the same area.
//! * sites: `site_id,lon,lat,capacity,site_type,ownership`. Empty capacity
//!   defaults to 1,120 tests/week, empty type to 1, empty ownership to unknown.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    validate_region, Area, CandidateSite, GeoPoint, Point, Projection, Region, StratumAxis,
    StratumKey, DEFAULT_SITE_CAPACITY,
};
use crate::error::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{source_name}:{line}: {message}")]
    Parse {
        source_name: String,
        line: u64,
        message: String,
    },
    #[error("{source_name}:{line}: unknown area {id}")]
    UnknownArea {
        source_name: String,
        line: u64,
        id: String,
    },
    #[error("invalid region: {0}")]
    Invalid(String),
    #[error(transparent)]
    Core(#[from] Error),
}

pub type IngestResult<T> = std::result::Result<T, IngestError>;

fn open(path: &Path) -> IngestResult<File> {
    File::open(path).map_err(|source| IngestError::Io {
        path: path.to_owned(),
        source,
    })
}

fn create(path: &Path) -> IngestResult<File> {
    File::create(path).map_err(|source| IngestError::Io {
        path: path.to_owned(),
        source,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ownership {
    Public,
    Private,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OwnershipFilter {
    Public,
    Private,
    /// Only records without an ownership label.
    Unknown,
    #[default]
    All,
}

impl OwnershipFilter {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "public" => Some(Self::Public),
            "private" => Some(Self::Private),
            "unknown" => Some(Self::Unknown),
            "all" => Some(Self::All),
            _ => None,
        }
    }

    pub fn admits(self, o: Ownership) -> bool {
        match self {
            Self::All => true,
            Self::Public => o == Ownership::Public,
            Self::Private => o == Ownership::Private,
            Self::Unknown => o == Ownership::Unknown,
        }
    }
}

/// One row of a sites file, before projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteRecord {
    pub id: String,
    pub geo: GeoPoint,
    pub capacity: u64,
    pub site_type: u32,
    pub ownership: Ownership,
}

/// Sites retained after ownership filtering.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteLoad {
    pub sites: Vec<CandidateSite>,
    pub records: Vec<SiteRecord>,
    pub dropped: usize,
}

/// Header-indexed CSV rows with 1-based line numbers.
struct Table {
    name: String,
    columns: HashMap<String, usize>,
    rows: Vec<(u64, csv::StringRecord)>,
}

impl Table {
    fn read<R: Read>(name: &str, reader: R, required: &[&str]) -> IngestResult<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(reader);
        let parse_err = |e: csv::Error| IngestError::Parse {
            source_name: name.to_owned(),
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        };
        let headers = rdr.headers().map_err(parse_err)?.clone();
        let columns: HashMap<String, usize> = headers
            .iter()
            .enumerate()
            .map(|(i, h)| (h.trim_start_matches('\u{feff}').to_ascii_lowercase(), i))
            .collect();
        for col in required {
            if !columns.contains_key(*col) {
                return Err(IngestError::Parse {
                    source_name: name.to_owned(),
                    line: 1,
                    message: format!("missing column {col}"),
                });
            }
        }
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(parse_err)?;
            let line = rec.position().map_or(0, |p| p.line());
            rows.push((line, rec));
        }
        Ok(Self {
            name: name.to_owned(),
            columns,
            rows,
        })
    }

    fn get<'r>(&self, rec: &'r csv::StringRecord, col: &str) -> &'r str {
        self.columns
            .get(col)
            .and_then(|&i| rec.get(i))
            .unwrap_or("")
    }

    fn err(&self, line: u64, message: impl Into<String>) -> IngestError {
        IngestError::Parse {
            source_name: self.name.clone(),
            line,
            message: message.into(),
        }
    }

    fn parse<T: std::str::FromStr>(
        &self,
        line: u64,
        rec: &csv::StringRecord,
        col: &str,
    ) -> IngestResult<T> {
        let raw = self.get(rec, col);
        raw.parse()
            .map_err(|_| self.err(line, format!("invalid {col}: {raw:?}")))
    }

    fn geo(&self, line: u64, rec: &csv::StringRecord) -> IngestResult<GeoPoint> {
        let lon: f64 = self.parse(line, rec, "lon")?;
        let lat: f64 = self.parse(line, rec, "lat")?;
        if !(-180.0..=180.0).contains(&lon) || !(-90.0..=90.0).contains(&lat) {
            return Err(self.err(line, format!("coordinates out of range: ({lon}, {lat})")));
        }
        Ok(GeoPoint { lon, lat })
    }
}

/// Loads and validates a region from an areas file and optional strata file.
pub fn load_region(areas_path: &Path, strata_path: Option<&Path>) -> IngestResult<Region> {
    let areas = open(areas_path)?;
    let name = areas_path.display().to_string();
    match strata_path {
        Some(p) => read_region(&name, areas, Some((&p.display().to_string(), open(p)?))),
        None => read_region::<_, File>(&name, areas, None),
    }
}

pub fn read_region<A: Read, S: Read>(
    areas_name: &str,
    areas: A,
    strata: Option<(&str, S)>,
) -> IngestResult<Region> {
    let table = Table::read(areas_name, areas, &["area_id", "lon", "lat", "population"])?;
    let mut geos = Vec::with_capacity(table.rows.len());
    let mut rows = Vec::with_capacity(table.rows.len());
    for (line, rec) in &table.rows {
        let id = table.get(rec, "area_id");
        if id.is_empty() {
            return Err(table.err(*line, "empty area_id"));
        }
        let geo = table.geo(*line, rec)?;
        let population: u64 = table.parse(*line, rec, "population")?;
        geos.push(geo);
        rows.push((id.to_owned(), geo, population));
    }
    let projection = Projection::about_mean(&geos).ok_or(Error::NoAreas)?;
    let mut areas: Vec<Area> = rows
        .into_iter()
        .map(|(id, geo, population)| Area {
            geo: Some(geo),
            ..Area::new(id, projection.forward(geo), population)
        })
        .collect();

    let axes = match strata {
        Some((name, reader)) => assemble_strata(
            &mut areas,
            Table::read(name, reader, &["area_id", "axis", "level", "count"])?,
        )?,
        None => vec![],
    };
    let region = Region {
        areas,
        stratum_axes: axes,
        projection: Some(projection),
    };
    let report = validate_region(&region);
    if !report.is_valid() {
        return Err(IngestError::Invalid(report.to_string()));
    }
    Ok(region)
}

#[derive(Default)]
struct AreaStrata {
    marginal: BTreeMap<usize, Vec<(usize, u64)>>,
    joint: BTreeMap<Vec<usize>, u64>,
}

/// Axis and level registry preserving first-appearance order.
#[derive(Default)]
struct Axes {
    names: Vec<String>,
    levels: Vec<Vec<String>>,
}

impl Axes {
    fn axis(&mut self, name: &str) -> usize {
        if let Some(i) = self.names.iter().position(|n| n == name) {
            return i;
        }
        self.names.push(name.to_owned());
        self.levels.push(Vec::new());
        self.names.len() - 1
    }

    fn level(&mut self, axis: usize, level: &str) -> usize {
        let levels = &mut self.levels[axis];
        if let Some(i) = levels.iter().position(|l| l == level) {
            return i;
        }
        levels.push(level.to_owned());
        levels.len() - 1
    }
}

fn assemble_strata(areas: &mut [Area], table: Table) -> IngestResult<Vec<StratumAxis>> {
    let index: HashMap<String, usize> = areas
        .iter()
        .enumerate()
        .map(|(j, a)| (a.id.clone(), j))
        .collect();
    let mut axes = Axes::default();
    let mut per_area: Vec<AreaStrata> = (0..areas.len()).map(|_| AreaStrata::default()).collect();
    let mut joint_rows: Vec<(u64, usize, Vec<usize>, Vec<usize>, u64)> = Vec::new();

    for (line, rec) in &table.rows {
        let line = *line;
        let id = table.get(rec, "area_id");
        let &j = index.get(id).ok_or_else(|| IngestError::UnknownArea {
            source_name: table.name.clone(),
            line,
            id: id.to_owned(),
        })?;
        let count: u64 = table.parse(line, rec, "count")?;
        let axis = table.get(rec, "axis");
        let combo = table.get(rec, "combo");
        if combo.is_empty() {
            let level = table.get(rec, "level");
            if axis.is_empty() || level.is_empty() {
                return Err(table.err(line, "axis and level are required"));
            }
            let a = axes.axis(axis);
            let l = axes.level(a, level);
            let entry = per_area[j].marginal.entry(a).or_default();
            if entry.iter().any(|&(existing, _)| existing == l) {
                return Err(table.err(line, format!("duplicate count for {axis}={level}")));
            }
            entry.push((l, count));
        } else {
            let names: Vec<&str> = axis.split(StratumKey::SEPARATOR).collect();
            let levels: Vec<&str> = combo.split(StratumKey::SEPARATOR).collect();
            if names.len() != levels.len() || names.iter().any(|n| n.is_empty()) {
                return Err(table.err(line, "combo must give one level per listed axis"));
            }
            let axis_ids: Vec<usize> = names.iter().map(|n| axes.axis(n)).collect();
            let level_ids: Vec<usize> = axis_ids
                .iter()
                .zip(&levels)
                .map(|(&a, l)| axes.level(a, l))
                .collect();
            joint_rows.push((line, j, axis_ids, level_ids, count));
        }
    }

    let arity = axes.names.len();
    for (line, j, axis_ids, level_ids, count) in joint_rows {
        if axis_ids.len() != arity {
            return Err(table.err(
                line,
                format!("combo covers {} of {arity} axes", axis_ids.len()),
            ));
        }
        let mut key = vec![0usize; arity];
        for (a, l) in axis_ids.iter().zip(&level_ids) {
            key[*a] = *l;
        }
        if per_area[j].joint.insert(key, count).is_some() {
            return Err(table.err(line, "duplicate joint count"));
        }
    }

    for (area, strata) in areas.iter_mut().zip(per_area) {
        let counts: BTreeMap<Vec<usize>, u64> = if !strata.joint.is_empty() {
            strata.joint
        } else if !strata.marginal.is_empty() {
            apportion_independent(area, &strata.marginal, arity).map_err(IngestError::Invalid)?
        } else {
            BTreeMap::new()
        };
        area.stratum_counts = counts
            .into_iter()
            .filter(|&(_, c)| c > 0)
            .map(|(key, c)| {
                let labels = key
                    .iter()
                    .enumerate()
                    .map(|(a, &l)| axes.levels[a][l].clone())
                    .collect();
                (StratumKey(labels), c)
            })
            .collect();
    }

    Ok(axes
        .names
        .into_iter()
        .zip(axes.levels)
        .map(|(name, levels)| StratumAxis { name, levels })
        .collect())
}

/// Joint counts from per-axis marginals assuming independence, rounded by
/// largest remainder so they sum to the area population exactly.
fn apportion_independent(
    area: &Area,
    marginal: &BTreeMap<usize, Vec<(usize, u64)>>,
    arity: usize,
) -> Result<BTreeMap<Vec<usize>, u64>, String> {
    if marginal.len() != arity {
        return Err(format!(
            "area {}: marginal counts given for {} of {arity} axes",
            area.id,
            marginal.len()
        ));
    }
    let population = area.population as u128;
    let axes: Vec<(&Vec<(usize, u64)>, u128)> = marginal
        .values()
        .map(|levels| (levels, levels.iter().map(|&(_, c)| c as u128).sum::<u128>()))
        .collect();
    if population == 0 {
        return Ok(BTreeMap::new());
    }
    if let Some((a, _)) = marginal.iter().zip(&axes).find(|(_, (_, t))| *t == 0) {
        return Err(format!("area {}: axis {} has zero total", area.id, a.0));
    }
    let overflow = || format!("area {}: counts too large to apportion", area.id);
    let mut den: u128 = 1;
    for (_, total) in &axes {
        den = den.checked_mul(*total).ok_or_else(overflow)?;
    }

    // enumerate the cross product
    let mut quotas: Vec<(Vec<usize>, u128, u128)> = Vec::new();
    let mut cursor = vec![0usize; arity];
    loop {
        let mut num = population;
        for (a, &c) in cursor.iter().enumerate() {
            num = num
                .checked_mul(axes[a].0[c].1 as u128)
                .ok_or_else(overflow)?;
        }
        let key = cursor
            .iter()
            .enumerate()
            .map(|(a, &c)| axes[a].0[c].0)
            .collect();
        quotas.push((key, num / den, num % den));
        let mut a = arity;
        loop {
            if a == 0 {
                break;
            }
            a -= 1;
            cursor[a] += 1;
            if cursor[a] < axes[a].0.len() {
                break;
            }
            cursor[a] = 0;
        }
        if cursor.iter().all(|&c| c == 0) {
            break;
        }
    }

    let assigned: u128 = quotas.iter().map(|q| q.1).sum();
    let mut leftover = population - assigned;
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&p, &q| quotas[q].2.cmp(&quotas[p].2).then(p.cmp(&q)));
    for &i in &order {
        if leftover == 0 {
            break;
        }
        quotas[i].1 += 1;
        leftover -= 1;
    }
    Ok(quotas.into_iter().map(|(k, c, _)| (k, c as u64)).collect())
}

/// Loads candidate sites, projecting them with the region's projection.
pub fn load_sites(
    path: &Path,
    filter: OwnershipFilter,
    projection: &Projection,
) -> IngestResult<SiteLoad> {
    read_sites(&path.display().to_string(), open(path)?, filter, projection)
}

pub fn read_sites<R: Read>(
    name: &str,
    reader: R,
    filter: OwnershipFilter,
    projection: &Projection,
) -> IngestResult<SiteLoad> {
    let table = Table::read(name, reader, &["site_id", "lon", "lat"])?;
    let mut sites = Vec::new();
    let mut records = Vec::new();
    let mut dropped = 0;
    for (line, rec) in &table.rows {
        let line = *line;
        let id = table.get(rec, "site_id");
        if id.is_empty() {
            return Err(table.err(line, "empty site_id"));
        }
        let geo = table.geo(line, rec)?;
        let capacity = match table.get(rec, "capacity") {
            "" => DEFAULT_SITE_CAPACITY,
            _ => table.parse(line, rec, "capacity")?,
        };
        if capacity == 0 {
            return Err(table.err(line, "capacity must be positive"));
        }
        let site_type = match table.get(rec, "site_type") {
            "" => 1,
            _ => table.parse(line, rec, "site_type")?,
        };
        if site_type == 0 {
            return Err(table.err(line, "site_type starts at 1"));
        }
        let ownership = match table.get(rec, "ownership").to_ascii_lowercase().as_str() {
            "" | "unknown" => Ownership::Unknown,
            "public" => Ownership::Public,
            "private" => Ownership::Private,
            other => return Err(table.err(line, format!("invalid ownership: {other:?}"))),
        };
        if !filter.admits(ownership) {
            dropped += 1;
            continue;
        }
        sites.push(CandidateSite {
            geo: Some(geo),
            ..CandidateSite::new(id, projection.forward(geo), capacity, site_type)
        });
        records.push(SiteRecord {
            id: id.to_owned(),
            geo,
            capacity,
            site_type,
            ownership,
        });
    }
    if sites.is_empty() {
        log::warn!("{name}: no sites left after ownership filter {filter:?} ({dropped} dropped)");
    }
    Ok(SiteLoad {
        sites,
        records,
        dropped,
    })
}

fn area_geo(region: &Region, area: &Area) -> IngestResult<GeoPoint> {
    area.geo
        .or_else(|| region.projection.map(|p| p.inverse(area.centroid)))
        .ok_or_else(|| {
            IngestError::Invalid(format!("area {} has no geographic coordinates", area.id))
        })
}

/// Writes the areas and strata files of `region`. Strata are written as
/// joint counts, every combination listed for every area.
pub fn write_region<A: Write, S: Write>(region: &Region, areas: A, strata: S) -> IngestResult<()> {
    let io_err = |e: csv::Error| IngestError::Invalid(e.to_string());
    let mut w = csv::Writer::from_writer(areas);
    w.write_record(["area_id", "lon", "lat", "population"])
        .map_err(io_err)?;
    for area in &region.areas {
        let g = area_geo(region, area)?;
        w.write_record([
            area.id.clone(),
            g.lon.to_string(),
            g.lat.to_string(),
            area.population.to_string(),
        ])
        .map_err(io_err)?;
    }
    w.flush().map_err(|e| IngestError::Invalid(e.to_string()))?;

    let mut w = csv::Writer::from_writer(strata);
    w.write_record(["area_id", "axis", "level", "count", "combo"])
        .map_err(io_err)?;
    let axis_field = region
        .stratum_axes
        .iter()
        .map(|a| a.name.as_str())
        .collect::<Vec<_>>()
        .join("|");
    let combos = cross_product(&region.stratum_axes);
    for area in &region.areas {
        for key in &combos {
            let count = area.stratum_counts.get(key).copied().unwrap_or(0);
            w.write_record([
                area.id.clone(),
                axis_field.clone(),
                String::new(),
                count.to_string(),
                key.to_string(),
            ])
            .map_err(io_err)?;
        }
    }
    w.flush().map_err(|e| IngestError::Invalid(e.to_string()))?;
    Ok(())
}

pub fn save_region(region: &Region, areas_path: &Path, strata_path: &Path) -> IngestResult<()> {
    write_region(region, create(areas_path)?, create(strata_path)?)
}

pub fn write_sites<W: Write>(
    sites: &[CandidateSite],
    projection: Option<&Projection>,
    out: W,
    ownership: &str,
) -> IngestResult<()> {
    let io_err = |e: csv::Error| IngestError::Invalid(e.to_string());
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "site_id",
        "lon",
        "lat",
        "capacity",
        "site_type",
        "ownership",
    ])
    .map_err(io_err)?;
    for s in sites {
        let g = s
            .geo
            .or_else(|| projection.map(|p| p.inverse(s.location)))
            .ok_or_else(|| {
                IngestError::Invalid(format!("site {} has no geographic coordinates", s.id))
            })?;
        w.write_record([
            s.id.clone(),
            g.lon.to_string(),
            g.lat.to_string(),
            s.capacity.to_string(),
            s.site_type.to_string(),
            ownership.to_owned(),
        ])
        .map_err(io_err)?;
    }
    w.flush().map_err(|e| IngestError::Invalid(e.to_string()))?;
    Ok(())
}

pub fn save_sites(
    sites: &[CandidateSite],
    projection: Option<&Projection>,
    path: &Path,
) -> IngestResult<()> {
    write_sites(sites, projection, create(path)?, "public")
}

/// All level combinations, first axis outermost.
pub fn cross_product(axes: &[StratumAxis]) -> Vec<StratumKey> {
    let mut out = vec![Vec::<String>::new()];
    for axis in axes {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                axis.levels.iter().map(move |l| {
                    let mut k = prefix.clone();
                    k.push(l.clone());
                    k
                })
            })
            .collect();
    }
    if axes.is_empty() {
        return vec![];
    }
    out.into_iter().map(StratumKey).collect()
}

/// Parameters of a seeded synthetic county.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthParams {
    pub m: usize,
    /// Grid columns; `None` means `ceil(sqrt(m))`.
    pub cols: Option<usize>,
    pub spacing_km: f64,
    /// Uniform jitter as a fraction of the spacing.
    pub jitter: f64,
    /// Inclusive range; populations are drawn in multiples of 100.
    pub population_range: (u64, u64),
    /// 0 gives identical stratum proportions everywhere, 1 puts each
    /// stratum combination in its own vertical band of the county.
    pub segregation: f64,
    pub axes: Vec<StratumAxis>,
    pub n_sites: usize,
    /// Explicit area indices for the sites; overrides `n_sites`.
    pub site_areas: Option<Vec<usize>>,
    pub site_capacity: u64,
    pub site_types: u32,
    pub origin: GeoPoint,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            m: 60,
            cols: None,
            spacing_km: 2.0,
            jitter: 0.25,
            population_range: (2000, 6000),
            segregation: 0.0,
            axes: vec![StratumAxis::new("group", ["A", "B"])],
            n_sites: 25,
            site_areas: None,
            site_capacity: DEFAULT_SITE_CAPACITY,
            site_types: 1,
            origin: GeoPoint {
                lon: -84.39,
                lat: 33.75,
            },
            seed: 0,
        }
    }
}

const SYNTH_UNIT: u64 = 100;

impl SynthParams {
    fn validate(&self) -> Result<(), Error> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.into()));
        if self.m == 0 {
            return bad("m must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.segregation) {
            return bad("segregation must lie in [0, 1]");
        }
        if self.population_range.0 > self.population_range.1 {
            return bad("population range is reversed");
        }
        if self.axes.is_empty() || self.axes.iter().any(|a| a.levels.is_empty()) {
            return bad("at least one stratum axis with levels is required");
        }
        if self.site_capacity == 0 || self.site_types == 0 {
            return bad("site capacity and type count must be positive");
        }
        if !(self.spacing_km > 0.0) || !(0.0..1.0).contains(&self.jitter) {
            return bad("spacing must be positive and jitter in [0, 1)");
        }
        match &self.site_areas {
            Some(idx) if idx.iter().any(|&j| j >= self.m) => bad("site area index out of range"),
            None if self.n_sites > self.m => bad("n_sites exceeds m"),
            _ => Ok(()),
        }
    }
}

/// Largest-remainder rounding of nonnegative `shares` (summing to `total`).
fn round_shares(shares: &[f64], total: u64) -> Vec<u64> {
    let mut out: Vec<u64> = shares.iter().map(|s| s.floor() as u64).collect();
    let mut leftover = total.saturating_sub(out.iter().sum());
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&p, &q| {
        let rp = shares[p] - shares[p].floor();
        let rq = shares[q] - shares[q].floor();
        rq.total_cmp(&rp).then(p.cmp(&q))
    });
    for &i in order.iter().cycle().take(shares.len() * 2) {
        if leftover == 0 {
            break;
        }
        out[i] += 1;
        leftover -= 1;
    }
    out
}

/// Deterministic synthetic region with candidate sites at area centroids.
pub fn synth_region(params: &SynthParams) -> Result<(Region, Vec<CandidateSite>), Error> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let m = params.m;
    let cols = params
        .cols
        .unwrap_or_else(|| (m as f64).sqrt().ceil() as usize)
        .max(1);

    let planar: Vec<Point> = (0..m)
        .map(|j| {
            let (r, c) = (j / cols, j % cols);
            let jitter = params.jitter * params.spacing_km;
            let dx = if jitter > 0.0 {
                rng.random_range(-jitter..=jitter)
            } else {
                0.0
            };
            let dy = if jitter > 0.0 {
                rng.random_range(-jitter..=jitter)
            } else {
                0.0
            };
            Point::new(
                c as f64 * params.spacing_km + dx,
                r as f64 * params.spacing_km + dy,
            )
        })
        .collect();
    let origin = Projection {
        lon0: params.origin.lon,
        lat0: params.origin.lat,
    };
    let geos: Vec<GeoPoint> = planar.iter().map(|&p| origin.inverse(p)).collect();
    let projection = Projection::about_mean(&geos).expect("m >= 1");

    let combos = cross_product(&params.axes);
    let c = combos.len();
    let mut by_x: Vec<usize> = (0..m).collect();
    by_x.sort_by(|&p, &q| planar[p].x.total_cmp(&planar[q].x).then(p.cmp(&q)));
    let mut band = vec![0usize; m];
    for (rank, &j) in by_x.iter().enumerate() {
        band[j] = rank * c / m;
    }

    let lo = params.population_range.0.div_ceil(SYNTH_UNIT);
    let hi = (params.population_range.1 / SYNTH_UNIT).max(lo);
    let s = params.segregation;
    let areas = (0..m)
        .map(|j| {
            let units = rng.random_range(lo..=hi);
            let shares: Vec<f64> = (0..c)
                .map(|v| {
                    let own = if v == band[j] { 1.0 } else { 0.0 };
                    SYNTH_UNIT as f64 * ((1.0 - s) / c as f64 + s * own)
                })
                .collect();
            let weights = round_shares(&shares, SYNTH_UNIT);
            let counts = combos
                .iter()
                .zip(&weights)
                .filter(|(_, &w)| w > 0 && units > 0)
                .map(|(k, &w)| (k.clone(), w * units));
            Area {
                geo: Some(geos[j]),
                ..Area::new(
                    format!("T{j:04}"),
                    projection.forward(geos[j]),
                    units * SYNTH_UNIT,
                )
            }
            .with_strata(counts)
        })
        .collect();
    let region = Region {
        areas,
        stratum_axes: params.axes.clone(),
        projection: Some(projection),
    };

    let mut site_areas = match &params.site_areas {
        Some(idx) => idx.clone(),
        None => sample(&mut rng, m, params.n_sites).into_vec(),
    };
    if params.site_areas.is_none() {
        site_areas.sort_unstable();
    }
    let sites = site_areas
        .iter()
        .enumerate()
        .map(|(i, &j)| CandidateSite {
            geo: Some(geos[j]),
            ..CandidateSite::new(
                format!("S{i:03}"),
                region.areas[j].centroid,
                params.site_capacity,
                1 + (i as u32 % params.site_types),
            )
        })
        .collect();
    Ok((region, sites))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equity::equity_score;

    const AREAS: &str = "area_id,lon,lat,population\n# comment\nA1,-84.40,33.75,100\r\nA2,-84.38,33.76,200\nA3,-84.36,33.74,0\n";

    fn region_from(areas: &str, strata: &str) -> IngestResult<Region> {
        read_region(
            "areas",
            areas.as_bytes(),
            Some(("strata", strata.as_bytes())),
        )
    }

    #[test]
    fn loads_three_area_fixture() {
        let strata =
            "area_id,axis,level,count\nA1,race,W,60\nA1,race,N,40\nA2,race,W,50\nA2,race,N,150\n";
        let r = region_from(AREAS, strata).unwrap();
        assert_eq!(r.len(), 3);
        assert_eq!(
            r.areas.iter().map(|a| a.population).collect::<Vec<_>>(),
            vec![100, 200, 0]
        );
        assert_eq!(r.stratum_axes, vec![StratumAxis::new("race", ["W", "N"])]);
        assert_eq!(r.areas[1].stratum_counts[&StratumKey::from("N")], 150);
        // mean latitude is 33.75, so A1 sits on the x axis
        assert!(r.areas[0].centroid.y.abs() < 1e-9);
        assert!(r.areas[0].centroid.x < 0.0 && r.areas[2].centroid.x > 0.0);
    }

    #[test]
    fn unknown_area_in_strata() {
        let strata = "area_id,axis,level,count\nA9,race,W,60\n";
        let err = region_from(AREAS, strata).unwrap_err();
        assert!(
            matches!(err, IngestError::UnknownArea { line: 2, .. }),
            "{err}"
        );
        assert!(err.to_string().contains("unknown area"));
    }

    #[test]
    fn parse_error_carries_line() {
        let bad = "area_id,lon,lat,population\nA1,-84.4,33.7,100\nA2,-84.4,33.7,lots\n";
        let err = read_region::<_, &[u8]>("areas", bad.as_bytes(), None).unwrap_err();
        match err {
            IngestError::Parse { line, message, .. } => {
                assert_eq!(line, 3);
                assert!(message.contains("population"));
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn validation_failures_surface() {
        let strata = "area_id,axis,level,count\nA1,race,W,60\nA1,race,N,30\nA2,race,W,200\n";
        // independent apportionment rescales to the population, so use joint counts to force a mismatch
        let joint =
            "area_id,axis,level,count,combo\nA1,race,,60,W\nA1,race,,30,N\nA2,race,,200,W\n";
        assert!(region_from(AREAS, strata).is_ok());
        assert!(
            matches!(region_from(AREAS, joint).unwrap_err(), IngestError::Invalid(m) if m.contains("stratum sum mismatch"))
        );
    }

    #[test]
    fn independent_axes_are_apportioned_exactly() {
        let strata =
            "area_id,axis,level,count\nA1,race,W,60\nA1,race,N,40\nA1,sex,F,50\nA1,sex,M,50\n\
                      A2,race,W,100\nA2,race,N,100\nA2,sex,F,67\nA2,sex,M,133\n";
        let r = region_from(AREAS, strata).unwrap();
        let a1 = &r.areas[0].stratum_counts;
        assert_eq!(a1[&StratumKey::new(["W", "F"])], 30);
        assert_eq!(a1[&StratumKey::new(["N", "M"])], 20);
        let a2 = &r.areas[1].stratum_counts;
        assert_eq!(a2.values().sum::<u64>(), 200);
        // 100 * 67 / 200 = 33.5 for both race levels; the remainder goes to the first key
        assert_eq!(a2[&StratumKey::new(["W", "F"])], 34);
        assert_eq!(a2[&StratumKey::new(["N", "F"])], 33);
    }

    #[test]
    fn joint_counts_take_precedence() {
        let strata = "area_id,axis,level,count,combo\nA1,race,W,60,\nA1,race,N,40,\nA1,race|sex,,10,W|F\nA1,race|sex,,50,W|M\nA1,sex|race,,40,F|N\n\
                      A2,race,W,100,\nA2,race,N,100,\nA2,sex,F,100,\nA2,sex,M,100,\n";
        let r = region_from(AREAS, strata).unwrap();
        let a1 = &r.areas[0].stratum_counts;
        assert_eq!(a1.len(), 3);
        assert_eq!(a1[&StratumKey::new(["W", "F"])], 10);
        assert_eq!(a1[&StratumKey::new(["N", "F"])], 40);
        assert_eq!(r.areas[1].stratum_counts[&StratumKey::new(["N", "M"])], 50);
    }

    #[test]
    fn sites_filtering_and_defaults() {
        let proj = Projection {
            lon0: -84.38,
            lat0: 33.75,
        };
        let csv = "site_id,lon,lat,capacity,site_type,ownership\n\
                   S1,-84.40,33.75,500,1,public\nS2,-84.39,33.75,,,public\nS3,-84.38,33.75,800,2,private\n\
                   S4,-84.37,33.75,900,1,\nS5,-84.36,33.75,700,1,private\n";
        let all = read_sites("sites", csv.as_bytes(), OwnershipFilter::All, &proj).unwrap();
        assert_eq!(all.sites.len(), 5);
        let public = read_sites("sites", csv.as_bytes(), OwnershipFilter::Public, &proj).unwrap();
        assert_eq!(public.sites.len(), 2);
        assert_eq!(public.dropped, 3);
        assert_eq!(public.sites[1].capacity, DEFAULT_SITE_CAPACITY);
        assert_eq!(public.sites[1].site_type, 1);
        let unknown = read_sites("sites", csv.as_bytes(), OwnershipFilter::Unknown, &proj).unwrap();
        assert_eq!(
            unknown
                .records
                .iter()
                .map(|r| r.id.as_str())
                .collect::<Vec<_>>(),
            vec!["S4"]
        );
        // retained records are unchanged by filtering
        for rec in &public.records {
            assert!(all.records.contains(rec));
        }
        let none = read_sites(
            "sites",
            "site_id,lon,lat\n".as_bytes(),
            OwnershipFilter::Public,
            &proj,
        )
        .unwrap();
        assert!(none.sites.is_empty());
    }

    #[test]
    fn sites_reject_bad_rows() {
        let proj = Projection {
            lon0: 0.0,
            lat0: 0.0,
        };
        for bad in [
            "site_id,lon,lat\nS1,200,0\n",
            "site_id,lon,lat,capacity\nS1,0,0,0\n",
            "site_id,lon,lat,ownership\nS1,0,0,municipal\n",
        ] {
            assert!(
                read_sites("sites", bad.as_bytes(), OwnershipFilter::All, &proj).is_err(),
                "{bad}"
            );
        }
    }

    #[test]
    fn csv_round_trip() {
        let strata =
            "area_id,axis,level,count\nA1,race,W,60\nA1,race,N,40\nA1,sex,F,50\nA1,sex,M,50\n\
                      A2,race,W,100\nA2,race,N,100\nA2,sex,F,67\nA2,sex,M,133\n";
        let r = region_from(AREAS, strata).unwrap();
        let (mut a, mut s) = (Vec::new(), Vec::new());
        write_region(&r, &mut a, &mut s).unwrap();
        let back = read_region("areas", a.as_slice(), Some(("strata", s.as_slice()))).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn synth_round_trips_through_files() {
        let (r, sites) = synth_region(&SynthParams {
            m: 12,
            n_sites: 4,
            segregation: 0.6,
            seed: 3,
            ..Default::default()
        })
        .unwrap();
        let (mut a, mut s, mut si) = (Vec::new(), Vec::new(), Vec::new());
        write_region(&r, &mut a, &mut s).unwrap();
        write_sites(&sites, None, &mut si, "public").unwrap();
        let back = read_region("areas", a.as_slice(), Some(("strata", s.as_slice()))).unwrap();
        assert_eq!(back, r);
        let back_sites = read_sites(
            "sites",
            si.as_slice(),
            OwnershipFilter::Public,
            &back.projection.unwrap(),
        )
        .unwrap();
        assert_eq!(back_sites.sites, sites);
    }

    #[test]
    fn synth_is_deterministic_and_valid() {
        let p = SynthParams {
            segregation: 0.8,
            seed: 42,
            ..Default::default()
        };
        let a = synth_region(&p).unwrap();
        assert_eq!(a, synth_region(&p).unwrap());
        assert!(validate_region(&a.0).is_valid());
        assert_eq!(a.1.len(), 25);
        assert!(a.1.iter().all(|s| s.capacity == 1120));
        assert_ne!(a, synth_region(&SynthParams { seed: 43, ..p }).unwrap());
    }

    #[test]
    fn unsegregated_synth_is_equitable() {
        let p = SynthParams {
            axes: vec![
                StratumAxis::new("race", ["W", "B", "H"]),
                StratumAxis::new("sex", ["F", "M"]),
            ],
            seed: 9,
            ..Default::default()
        };
        let (r, _) = synth_region(&p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let e: Vec<bool> = (0..r.len()).map(|_| rng.random()).collect();
            assert!(equity_score(&r, &e).unwrap().total <= 1e-12);
        }
    }

    #[test]
    fn fully_segregated_pair() {
        let p = SynthParams {
            m: 2,
            n_sites: 2,
            segregation: 1.0,
            population_range: (5000, 5000),
            ..Default::default()
        };
        let (r, _) = synth_region(&p).unwrap();
        assert_eq!(equity_score(&r, &[true, false]).unwrap().total, 0.5);
    }

    #[test]
    fn synth_rejects_bad_params() {
        for p in [
            SynthParams {
                m: 0,
                ..Default::default()
            },
            SynthParams {
                segregation: 1.5,
                ..Default::default()
            },
            SynthParams {
                n_sites: 61,
                ..Default::default()
            },
            SynthParams {
                axes: vec![],
                ..Default::default()
            },
        ] {
            assert!(synth_region(&p).is_err());
        }
    }

    #[test]
    fn cross_product_order() {
        let axes = vec![
            StratumAxis::new("a", ["x", "y"]),
            StratumAxis::new("b", ["1", "2", "3"]),
        ];
        let keys = cross_product(&axes);
        assert_eq!(keys.len(), 6);
        assert_eq!(keys[0].to_string(), "x|1");
        assert_eq!(keys[5].to_string(), "y|3");
    }
}
