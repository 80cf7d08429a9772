fn main() {
    std::process::exit(ulz::cli::run_from_env());
}
