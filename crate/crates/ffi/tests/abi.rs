use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use sitealloc::ingest::{save_region, save_sites, synth_region, SynthParams};
use sitealloc_ffi::*;

fn synth(m: usize, n_sites: usize) -> *mut SaInstance {
    let params = SaSynthParams {
        m,
        n_sites,
        segregation: 0.8,
        seed: 3,
    };
    let mut inst = ptr::null_mut();
    assert_eq!(
        unsafe { sa_instance_synth(&params, &mut inst) },
        SaStatus::Ok
    );
    assert!(!inst.is_null());
    inst
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(sa_last_error()) }
        .to_string_lossy()
        .into_owned()
}

#[test]
fn counts_and_site_ids() {
    let inst = synth(12, 6);
    unsafe {
        assert_eq!(sa_instance_num_areas(inst), 12);
        assert_eq!(sa_instance_num_sites(inst), 6);
        let mut buf = [0 as std::ffi::c_char; 16];
        assert_eq!(
            sa_instance_site_id(inst, 2, buf.as_mut_ptr(), buf.len()),
            SaStatus::Ok
        );
        assert_eq!(CStr::from_ptr(buf.as_ptr()).to_str().unwrap(), "S002");
        assert_eq!(
            sa_instance_site_id(inst, 2, buf.as_mut_ptr(), 2),
            SaStatus::BufferTooSmall
        );
        assert_eq!(
            sa_instance_site_id(inst, 60, buf.as_mut_ptr(), buf.len()),
            SaStatus::UnknownSite
        );
        sa_instance_free(inst);
        assert_eq!(sa_instance_num_sites(ptr::null()), 0);
        sa_instance_free(ptr::null_mut());
    }
}

#[test]
fn score_matches_library() {
    let inst = synth(12, 6);
    let params = SynthParams {
        m: 12,
        n_sites: 6,
        segregation: 0.8,
        seed: 3,
        ..Default::default()
    };
    let data = sitealloc::run::Dataset::synth(&params).unwrap();
    let ids = vec![data.sites[1].id.clone(), data.sites[4].id.clone()];
    let want = sitealloc::run::score(&data, &Default::default(), &ids).unwrap();

    let mut out = SaScores {
        coverage: 0,
        d_optimality: 0.0,
        equity: 0.0,
        combined: 0.0,
    };
    let selected = [1usize, 4];
    let status = unsafe {
        sa_score(
            inst,
            ptr::null(),
            selected.as_ptr(),
            selected.len(),
            &mut out,
        )
    };
    assert_eq!(status, SaStatus::Ok, "{}", last_error());
    assert_eq!(out.coverage, want.scores.coverage);
    assert_eq!(out.equity, want.scores.equity);
    assert_eq!(out.combined, want.combined);
    assert!(out.d_optimality.is_nan());
    assert_eq!(last_error(), "");
    unsafe { sa_instance_free(inst) };
}

#[test]
fn errors_set_status_and_message() {
    let inst = synth(12, 6);
    let mut out = SaScores {
        coverage: 0,
        d_optimality: 0.0,
        equity: 0.0,
        combined: 0.0,
    };
    let dup = [1usize, 1];
    unsafe {
        assert_eq!(
            sa_score(inst, ptr::null(), dup.as_ptr(), 2, &mut out),
            SaStatus::InvalidAllocation
        );
        assert!(last_error().contains("twice"));
        let bad = CString::new("lambda2 = 1").unwrap();
        let one = [0usize];
        assert_eq!(
            sa_score(inst, bad.as_ptr(), one.as_ptr(), 1, &mut out),
            SaStatus::Config
        );
        assert!(
            last_error().starts_with("grid required"),
            "{}",
            last_error()
        );
        let junk = CString::new("no-such-key = 1").unwrap();
        assert_eq!(
            sa_score(inst, junk.as_ptr(), one.as_ptr(), 1, &mut out),
            SaStatus::Config
        );
        assert_eq!(
            sa_score(ptr::null(), ptr::null(), one.as_ptr(), 1, &mut out),
            SaStatus::NullArgument
        );
        let mut count = 0usize;
        let mut chosen = [0usize; 1];
        let cfg = CString::new("k = 3").unwrap();
        assert_eq!(
            sa_optimize(
                inst,
                cfg.as_ptr(),
                chosen.as_mut_ptr(),
                1,
                &mut count,
                &mut out
            ),
            SaStatus::BufferTooSmall
        );
        assert_eq!(count, 3);
        sa_instance_free(inst);
    }
}

#[test]
fn load_from_files() {
    let dir = tempfile::tempdir().unwrap();
    let (region, sites) = synth_region(&SynthParams {
        m: 9,
        n_sites: 4,
        ..Default::default()
    })
    .unwrap();
    let (a, s, t) = (
        dir.path().join("areas.csv"),
        dir.path().join("strata.csv"),
        dir.path().join("sites.csv"),
    );
    save_region(&region, &a, &s).unwrap();
    save_sites(&sites, region.projection.as_ref(), &t).unwrap();
    let c = |p: &PathBuf| CString::new(p.to_str().unwrap()).unwrap();
    let (ca, cs, ct) = (c(&a), c(&s), c(&t));
    let mut inst = ptr::null_mut();
    unsafe {
        assert_eq!(
            sa_instance_from_files(ca.as_ptr(), cs.as_ptr(), ct.as_ptr(), &mut inst),
            SaStatus::Ok
        );
        assert_eq!(sa_instance_num_areas(inst), 9);
        assert_eq!(sa_instance_num_sites(inst), 4);
        sa_instance_free(inst);
        let missing = CString::new("/nonexistent/areas.csv").unwrap();
        assert_eq!(
            sa_instance_from_files(missing.as_ptr(), ptr::null(), ct.as_ptr(), &mut inst),
            SaStatus::Input
        );
        assert!(last_error().contains("/nonexistent/areas.csv"));
    }
}

/// Builds the C smoke program against the generated header and the static library.
#[test]
fn c_program_links_and_runs() {
    let Ok(cc) = which_cc() else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    let crate_dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    // target/<profile>/deps/<test binary>
    let profile_dir = std::env::current_exe()
        .unwrap()
        .parent()
        .unwrap()
        .parent()
        .unwrap()
        .to_path_buf();
    let lib = profile_dir.join("libsitealloc_ffi.a");
    if !lib.exists() {
        eprintln!("{} not built; skipping", lib.display());
        return;
    }
    let out_dir = tempfile::tempdir().unwrap();
    let exe = out_dir.path().join("smoke");
    let status = Command::new(&cc)
        .arg(crate_dir.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(crate_dir.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "C compilation failed");
    let out = Command::new(&exe).output().unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let fields: Vec<String> = String::from_utf8(out.stdout)
        .unwrap()
        .split_whitespace()
        .map(String::from)
        .collect();
    assert_eq!(fields[0], "6");
    assert_eq!(fields[1], "2");
    assert_eq!(fields[4], "1");
}

fn which_cc() -> Result<String, ()> {
    for cc in ["cc", "gcc", "clang"] {
        if Command::new(cc)
            .arg("--version")
            .output()
            .is_ok_and(|o| o.status.success())
        {
            return Ok(cc.to_string());
        }
    }
    Err(())
}
