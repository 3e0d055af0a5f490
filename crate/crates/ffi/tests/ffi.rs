use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use elastica_ffi::*;

const DATASET: &str = "0101 x3\n11 x2\n-\n0\n011101\n10\n";

fn tree(text: &str, depth: usize) -> *mut ElasticaTree {
    let s = CString::new(text).unwrap();
    let mut t = ptr::null_mut();
    assert_eq!(unsafe { elastica_tree_from_dataset(s.as_ptr(), depth, &mut t) }, ElasticaStatus::Ok);
    assert!(!t.is_null());
    t
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(elastica_last_error()) }.to_str().unwrap().to_string()
}

#[test]
fn tree_statistics() {
    let t = tree(DATASET, 2);
    let (mut m, mut h, mut bits) = (0usize, 0.0f64, 0u64);
    unsafe {
        assert_eq!(elastica_tree_leaf_count(t, &mut m), ElasticaStatus::Ok);
        assert_eq!(elastica_tree_entropy(t, &mut h), ElasticaStatus::Ok);
        assert_eq!(elastica_ideal_code_length(t, 6, &mut bits), ElasticaStatus::Ok);
    }
    assert_eq!(m, 5);
    assert_eq!(bits, 3 * h.ceil() as u64);
    let mut ce = 0.0;
    let mut nr = 0.0;
    unsafe {
        assert_eq!(elastica_cross_entropy(t, t, &mut ce), ElasticaStatus::Ok);
        assert_eq!(elastica_normalized_rate(t, t, &mut nr), ElasticaStatus::Ok);
        elastica_tree_free(t);
    }
    assert!((ce - h).abs() < 1e-12);
    assert!((nr - (h - 5f64.log2())).abs() < 1e-12);
}

#[test]
fn encode_decode_round_trip_with_buffer_protocol() {
    let t = tree(DATASET, 2);
    let mut code = ptr::null_mut();
    assert_eq!(unsafe { elastica_code_build(t, &mut code) }, ElasticaStatus::Ok);
    for r in ["0101", "11", "", "0", "011101"] {
        let rc = CString::new(r).unwrap();
        let mut need = 0usize;
        let s = unsafe { elastica_encode(code, rc.as_ptr(), ptr::null_mut(), 0, &mut need) };
        assert_eq!(s, ElasticaStatus::BufferTooSmall);
        assert!(need > 0);
        let mut blob = vec![0u8; need];
        let mut len = 0usize;
        assert_eq!(unsafe { elastica_encode(code, rc.as_ptr(), blob.as_mut_ptr(), blob.len(), &mut len) }, ElasticaStatus::Ok);
        assert_eq!(len, need);
        let mut out = vec![0u8; 64];
        let mut out_len = 0usize;
        let s = unsafe { elastica_decode(code, blob.as_ptr(), len, out.as_mut_ptr().cast(), out.len(), &mut out_len) };
        assert_eq!(s, ElasticaStatus::Ok, "{}", last_error());
        assert_eq!(out_len, r.len() + 1);
        assert_eq!(CStr::from_bytes_with_nul(&out[..out_len]).unwrap().to_str().unwrap(), r);
    }
    unsafe {
        elastica_code_free(code);
        elastica_tree_free(t);
    }
}

#[test]
fn errors_map_to_status_codes() {
    let bad = CString::new("01a\n").unwrap();
    let mut t = ptr::null_mut();
    assert_eq!(unsafe { elastica_tree_from_dataset(bad.as_ptr(), 2, &mut t) }, ElasticaStatus::InvalidToken);
    assert!(t.is_null());
    assert!(last_error().contains("invalid token"));

    let empty = CString::new("").unwrap();
    assert_eq!(unsafe { elastica_tree_from_dataset(empty.as_ptr(), 2, &mut t) }, ElasticaStatus::EmptyDataset);
    assert_eq!(unsafe { elastica_tree_from_dataset(ptr::null(), 2, &mut t) }, ElasticaStatus::NullPointer);

    let t = tree(DATASET, 2);
    let mut code = ptr::null_mut();
    assert_eq!(unsafe { elastica_code_build(t, &mut code) }, ElasticaStatus::Ok);
    assert!(last_error().is_empty());
    let unseen = CString::new("0000").unwrap();
    let mut len = 0;
    let s = unsafe { elastica_encode(code, unseen.as_ptr(), ptr::null_mut(), 0, &mut len) };
    assert_eq!(s, ElasticaStatus::OutOfModel);
    let junk = [0u8; 8];
    let mut out = [0u8; 8];
    let s = unsafe { elastica_decode(code, junk.as_ptr(), junk.len(), out.as_mut_ptr().cast(), out.len(), &mut len) };
    assert_eq!(s, ElasticaStatus::BlobError);
    unsafe {
        elastica_code_free(code);
        elastica_tree_free(t);
        elastica_tree_free(ptr::null_mut());
    }
}

#[test]
fn gamma_mc_matches_core_and_degenerate_is_zero() {
    let (mut m, mut se) = (0.0, 0.0);
    let s = unsafe { elastica_gamma_mc(100.0, 3.0, 0.01, 100_000, 7, ElasticaComponent::Alignment, &mut m, &mut se) };
    assert_eq!(s, ElasticaStatus::Ok);
    let cfg = elastica::elasticity::ElasticityConfig::new(100.0, vec![0.01], elastica::mass::MassLaw::pareto(3.0).unwrap(), 100_000, 7, 1e-4).unwrap();
    let core = elastica::elasticity::gamma_component_mc(&cfg, elastica::elasticity::Component::Alignment, 0.01).unwrap();
    assert_eq!((m, se), (core.mean, core.se));

    let s = unsafe { elastica_gamma_mc(100.0, 0.0, 0.0, 1000, 7, ElasticaComponent::Pretrain, &mut m, &mut se) };
    assert_eq!(s, ElasticaStatus::Ok);
    assert_eq!(m, 0.0);

    let s = unsafe { elastica_gamma_mc(1.0, 3.0, 0.0, 1000, 7, ElasticaComponent::Pretrain, &mut m, &mut se) };
    assert_eq!(s, ElasticaStatus::InvalidArgument);
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include/elastica.h")).unwrap();
    for f in [
        "elastica_last_error",
        "elastica_version",
        "elastica_tree_from_dataset",
        "elastica_tree_free",
        "elastica_tree_leaf_count",
        "elastica_tree_entropy",
        "elastica_cross_entropy",
        "elastica_normalized_rate",
        "elastica_ideal_code_length",
        "elastica_code_build",
        "elastica_code_free",
        "elastica_code_expected_length",
        "elastica_encode",
        "elastica_decode",
        "elastica_gamma_mc",
    ] {
        assert!(header.contains(&format!("{f}(")), "{f} missing from header");
    }
    assert!(header.contains("typedef struct ElasticaTree ElasticaTree;"));
}

const C_PROGRAM: &str = r#"
#include <stdio.h>
#include <string.h>
#include "elastica.h"

int main(void) {
    ElasticaTree *t = NULL;
    if (elastica_tree_from_dataset("0101 x3\n11 x2\n-\n0\n", 2, &t) != ELASTICA_STATUS_OK) return 1;
    ElasticaCode *c = NULL;
    if (elastica_code_build(t, &c) != ELASTICA_STATUS_OK) return 2;
    uint8_t blob[128];
    uintptr_t n = 0;
    if (elastica_encode(c, "0101", blob, sizeof blob, &n) != ELASTICA_STATUS_OK) return 3;
    char out[64];
    uintptr_t m = 0;
    if (elastica_decode(c, blob, n, out, sizeof out, &m) != ELASTICA_STATUS_OK) return 4;
    if (strcmp(out, "0101") != 0) return 5;
    ElasticaTree *bad = NULL;
    if (elastica_tree_from_dataset("2\n", 2, &bad) != ELASTICA_STATUS_INVALID_TOKEN || bad != NULL) return 6;
    printf("%s ok\n", elastica_version());
    elastica_code_free(c);
    elastica_tree_free(t);
    return 0;
}
"#;

/// Compiles a C program against the generated header and the static library.
#[test]
fn c_program_links_against_static_library() {
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().and_then(|d| d.parent()).unwrap();
    let lib = profile_dir.join("libelastica_ffi.a");
    assert!(lib.exists(), "static library not found at {}", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let bin = dir.path().join("smoke");
    let include = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include");
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .expect("a C compiler named `cc`");
    assert!(status.success());
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    assert_eq!(String::from_utf8(out.stdout).unwrap(), format!("{} ok\n", env!("CARGO_PKG_VERSION")));
}
