//! Fixture builders shared by the integration tests and the acceptance harness.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sitealloc::ingest::{save_region, save_sites, synth_region, SynthParams};
use sitealloc::objective::{InstanceSettings, ProblemInstance};
use sitealloc::{Area, CandidateSite, Point, Region, StratumAxis, Weights};

/// Random planar region with a two-level stratum axis and `n` sites of mixed capacity.
pub fn random_region(rng: &mut ChaCha8Rng, m: usize, n: usize) -> (Region, Vec<CandidateSite>) {
    let areas = (0..m)
        .map(|j| {
            let pop = rng.random_range(0..6000u64);
            let a = rng.random_range(0..=pop);
            Area::new(
                format!("A{j:03}"),
                Point::new(rng.random_range(0.0..20.0), rng.random_range(0.0..20.0)),
                pop,
            )
            .with_strata([("a", a), ("b", pop - a)])
        })
        .collect();
    let region = Region::new(areas, vec![StratumAxis::new("g", ["a", "b"])]);
    let sites = (0..n)
        .map(|i| {
            CandidateSite::new(
                format!("S{i:02}"),
                Point::new(rng.random_range(0.0..20.0), rng.random_range(0.0..20.0)),
                rng.random_range(200..2000u64),
                1,
            )
        })
        .collect();
    (region, sites)
}

/// Seeded instance with `n <= 12` sites, `k <= 3` and no design term.
pub fn oracle_instance(seed: u64) -> ProblemInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(4..=12);
    let k = rng.random_range(1..=3);
    let m = rng.random_range(8..=30);
    let (mut region, sites) = random_region(&mut rng, m, n);
    region.areas[0].population += 100;
    region.areas[0]
        .stratum_counts
        .entry("a".into())
        .and_modify(|c| *c += 100);
    let weights = Weights::new(10f64.powi(rng.random_range(-3..=0)), 0.0, 1.0);
    ProblemInstance::new(
        region,
        sites,
        InstanceSettings {
            weights,
            budget: k,
            ..Default::default()
        },
    )
    .expect("valid instance")
}

/// Four areas on an east-west line, one site at three of their centroids.
///
/// At capacity 1,120 and a 10% target: S1 (at T1) covers T1 and T2, S4 (at
/// T4) covers T4 and T3, and S3 (at T3, capacity 500) covers only T3.
pub fn four_area_fixture(dir: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let areas = "area_id,lon,lat,population\n\
                 T1,-84.00,33.0,4000\n\
                 T2,-83.99,33.0,5000\n\
                 T3,-83.98,33.0,3000\n\
                 T4,-83.97,33.0,8000\n";
    let strata = "area_id,axis,level,count\n\
                  T1,group,A,3000\nT1,group,B,1000\n\
                  T2,group,A,2500\nT2,group,B,2500\n\
                  T3,group,A,500\nT3,group,B,2500\n\
                  T4,group,A,2000\nT4,group,B,6000\n";
    let sites = "site_id,lon,lat,capacity,site_type,ownership\n\
                 S1,-84.00,33.0,,1,public\n\
                 S3,-83.98,33.0,500,1,private\n\
                 S4,-83.97,33.0,1120,1,public\n";
    let paths = (
        dir.join("areas.csv"),
        dir.join("strata.csv"),
        dir.join("sites.csv"),
    );
    std::fs::write(&paths.0, areas).unwrap();
    std::fs::write(&paths.1, strata).unwrap();
    std::fs::write(&paths.2, sites).unwrap();
    paths
}

/// Writes a synthetic county in the service's data-directory layout.
pub fn write_region_dir(dir: &Path, params: &SynthParams, name: Option<&str>) {
    std::fs::create_dir_all(dir).unwrap();
    let (region, sites) = synth_region(params).unwrap();
    save_region(&region, &dir.join("areas.csv"), &dir.join("strata.csv")).unwrap();
    save_sites(&sites, region.projection.as_ref(), &dir.join("sites.csv")).unwrap();
    if let Some(name) = name {
        std::fs::write(dir.join("meta.toml"), format!("name = {name:?}\n")).unwrap();
    }
}

pub fn region_files(dir: &Path) -> [String; 6] {
    let p = |f: &str| dir.join(f).display().to_string();
    [
        "--areas".into(),
        p("areas.csv"),
        "--strata".into(),
        p("strata.csv"),
        "--sites".into(),
        p("sites.csv"),
    ]
}
