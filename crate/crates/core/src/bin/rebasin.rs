fn main() {
    std::process::exit(rebasin::cli::main());
}
