fn main() {
    std::process::exit(rkhs_envelope_cli::cli::run(std::env::args_os()));
}
