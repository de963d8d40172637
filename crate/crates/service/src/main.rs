fn main() {
    std::process::exit(labrun_service::cli::main());
}
