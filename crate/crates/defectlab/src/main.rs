fn main() {
    std::process::exit(defectlab::cli::run());
}
