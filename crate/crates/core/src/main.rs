fn main() {
    std::process::exit(dsn::cli::main());
}
