use std::process::Command;

fn main() {
    println!("cargo:rerun-if-changed=build.rs");
    let head = std::path::Path::new("../../.git/HEAD");
    if head.exists() {
        println!("cargo:rerun-if-changed=../../.git/HEAD");
        println!("cargo:rerun-if-changed=../../.git/index");
    }
    let describe = Command::new("git")
        .args(["describe", "--tags", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty());
    if let Some(d) = describe {
        println!(
            "cargo:rustc-env=MICROSPLAT_GIT_DESCRIBE=v{}-{}",
            std::env::var("CARGO_PKG_VERSION").unwrap_or_default(),
            d
        );
    }
}
