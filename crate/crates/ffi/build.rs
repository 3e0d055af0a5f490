use std::path::PathBuf;

fn main() {
    let dir = PathBuf::from(std::env::var("CARGO_MANIFEST_DIR").expect("set by cargo"));
    println!("cargo:rerun-if-changed=src/lib.rs");
    let config = cbindgen::Config {
        language: cbindgen::Language::C,
        include_guard: Some("ELASTICA_H".into()),
        header: Some("/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */".into()),
        cpp_compat: true,
        enumeration: cbindgen::EnumConfig { prefix_with_name: true, rename_variants: cbindgen::RenameRule::ScreamingSnakeCase, ..Default::default() },
        ..Default::default()
    };
    cbindgen::Builder::new()
        .with_crate(&dir)
        .with_config(config)
        .generate()
        .expect("cbindgen failed")
        .write_to_file(dir.join("include/elastica.h"));
}
