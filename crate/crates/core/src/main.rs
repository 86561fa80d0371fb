fn main() {
    std::process::exit(mcd_aggregate::cli::run(std::env::args_os()));
}
