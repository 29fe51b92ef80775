fn main() {
    std::process::exit(ttr_core::cli::run());
}
