fn main() {
    std::process::exit(ndthermo::cli::run(std::env::args_os()));
}
