fn main() {
    // lapack-sys only declares the symbols; the system LAPACK/BLAS provide them.
    println!("cargo:rustc-link-lib=lapack");
    println!("cargo:rustc-link-lib=blas");
}
