fn main() {
    let crate_dir = std::env::var("CARGO_MANIFEST_DIR").unwrap();
    let out = std::path::Path::new(&crate_dir).join("include").join("comvol.h");
    std::fs::create_dir_all(out.parent().unwrap()).unwrap();
    let mut config = cbindgen::Config::default();
    config.language = cbindgen::Language::C;
    config.cpp_compat = true;
    config.include_guard = Some("COMVOL_H".into());
    config.header = Some("/* C interface of the comvol commodity smile toolkit. */".into());
    config.enumeration.prefix_with_name = true;
    match cbindgen::Builder::new().with_crate(&crate_dir).with_config(config).generate()
    {
        Ok(bindings) => {
            bindings.write_to_file(&out);
        }
        Err(e) => {
            // keep the previously generated header usable when cbindgen
            // cannot parse (e.g. during rustdoc runs)
            println!("cargo:warning=cbindgen skipped: {e}");
        }
    }
    println!("cargo:rerun-if-changed=src/lib.rs");
}
