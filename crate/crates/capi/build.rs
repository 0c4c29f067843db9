use std::fs;
use std::path::Path;

// Regenerates include/moselect.h from the extern "C" surface. The header is
// committed; the write is skipped when the content is unchanged so downstream
// build systems watching the file do not see spurious updates.
fn main() {
    println!("cargo:rerun-if-changed=src/lib.rs");
    println!("cargo:rerun-if-changed=cbindgen.toml");

    let crate_dir = std::env::var("CARGO_MANIFEST_DIR").unwrap();
    let crate_dir = Path::new(&crate_dir);
    let config = cbindgen::Config::from_file(crate_dir.join("cbindgen.toml")).unwrap();
    let bindings = cbindgen::Builder::new()
        .with_crate(crate_dir)
        .with_config(config)
        .generate()
        .expect("cbindgen failed; the header cannot be regenerated");

    let mut buf = Vec::new();
    bindings.write(&mut buf);
    let text = String::from_utf8(buf).expect("cbindgen produced non-UTF-8 output");

    let header = crate_dir.join("include/moselect.h");
    let current = fs::read_to_string(&header).unwrap_or_default();
    if current != text {
        fs::create_dir_all(header.parent().unwrap()).unwrap();
        fs::write(&header, text).unwrap();
    }
}
