fn main() {
    let crate_dir = std::env::var("CARGO_MANIFEST_DIR").unwrap();
    let out = std::path::Path::new(&crate_dir).join("include/safemon.h");
    match cbindgen::generate(&crate_dir) {
        Ok(b) => {
            b.write_to_file(&out);
        }
        // keep the checked-in header if generation is unavailable
        Err(e) => println!("cargo:warning=cbindgen skipped: {e}"),
    }
    println!("cargo:rerun-if-changed=src/lib.rs");
    println!("cargo:rerun-if-changed=cbindgen.toml");
}
